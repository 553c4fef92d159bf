//! Minimal SVG line charts rendered from the CSV tables of an artifact
//! directory. Nothing here touches the numerical pipeline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{invalid, io_error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: &[&str] = &[
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Draw markers only.
    pub scatter: bool,
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let finite = |&(x, y): &(f64, f64)| x.is_finite() && y.is_finite();
    let all = || series.iter().flat_map(|s| s.points.iter().copied().filter(finite));
    let (x0, x1) = extent(all().map(|p| p.0));
    let (y0, y1) = extent(all().map(|p| p.1));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let (xv, yv) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.3}</text>"#,
            sx(xv),
            HEIGHT - MARGIN + 16.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.3}</text>"#,
            MARGIN - 6.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{title}</text>"#,
        WIDTH / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{0}" text-anchor="middle" transform="rotate(-90 14 {0})">{y_label}</text>"#,
        HEIGHT / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s.points.iter().copied().filter(finite).collect();
        if s.scatter {
            for (x, y) in &pts {
                let _ = writeln!(
                    svg,
                    r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                    sx(*x),
                    sy(*y)
                );
            }
        } else if !pts.is_empty() {
            let path: Vec<String> = pts
                .iter()
                .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
                .collect();
            let _ = writeln!(
                svg,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                path.join(" ")
            );
        }
        let ly = MARGIN + 14.0 * (i as f64 + 1.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{ly:.1}" fill="{color}">{}</text>"#,
            WIDTH - MARGIN + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

type Groups = BTreeMap<(String, usize), Vec<(f64, f64)>>;

/// Rows of a CSV as string records, keyed by header name.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| io_error(path, e))?;
        let header = r
            .headers()
            .map_err(|e| io_error(path, e))?
            .iter()
            .map(String::from)
            .collect();
        let rows = r
            .records()
            .map(|rec| {
                rec.map(|r| r.iter().map(String::from).collect())
                    .map_err(|e| io_error(path, e))
            })
            .collect::<Result<_>>()?;
        Ok(Table { header, rows })
    }

    fn col(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| invalid(format!("table has no {name:?} column")))
    }

    /// `(alpha text, step) -> [(x, y)]` for the given columns.
    fn group(&self, x: &str, y: &str) -> Result<Groups> {
        let (ia, is, ix, iy) = (self.col("alpha")?, self.col("step")?, self.col(x)?, self.col(y)?);
        let mut out = Groups::new();
        for r in &self.rows {
            let key = (r[ia].clone(), r[is].parse().unwrap_or(0));
            let point = (r[ix].parse().unwrap_or(f64::NAN), r[iy].parse().unwrap_or(f64::NAN));
            out.entry(key).or_default().push(point);
        }
        Ok(out)
    }
}

fn alpha_label(raw: &str) -> String {
    raw.parse::<f64>()
        .map(|a| format!("{a}"))
        .unwrap_or_else(|_| raw.to_string())
}

fn per_alpha_charts(
    dir: &Path,
    table: &Table,
    x: &str,
    y: &str,
    stem: &str,
    title: &str,
    extra: &[(f64, f64)],
) -> Result<Vec<String>> {
    let mut by_alpha: BTreeMap<String, Vec<Series>> = BTreeMap::new();
    for ((alpha, step), points) in table.group(x, y)? {
        by_alpha.entry(alpha).or_default().push(Series {
            label: format!("step {step}"),
            points,
            scatter: false,
        });
    }
    let mut names = Vec::new();
    for (alpha, mut series) in by_alpha {
        let label = alpha_label(&alpha);
        if !extra.is_empty() {
            series.push(Series {
                label: "train".into(),
                points: extra.to_vec(),
                scatter: true,
            });
        }
        let name = format!("{stem}_alpha_{label}.svg");
        let svg = line_chart(&format!("{title}, alpha = {label}"), x, y, &series);
        let path = dir.join(&name);
        fs::write(&path, svg).map_err(|e| io_error(&path, e))?;
        names.push(name);
    }
    Ok(names)
}

fn training_points(dir: &Path) -> Result<Vec<(f64, f64)>> {
    let t = Table::read(&dir.join("dataset.csv"))?;
    if t.header.len() != 2 {
        return Ok(Vec::new());
    }
    Ok(t.rows
        .iter()
        .map(|r| (r[0].parse().unwrap_or(f64::NAN), r[1].parse().unwrap_or(f64::NAN)))
        .collect())
}

/// Shrinkage and ratio charts from `b_diagonal.csv` and `ratios.csv`.
pub fn render_spectral(dir: &Path) -> Result<Vec<String>> {
    let b = Table::read(&dir.join("b_diagonal.csv"))?;
    let mut names = per_alpha_charts(dir, &b, "eig_index", "b", "b_diagonal", "B diagonal per step", &[])?;
    let r = Table::read(&dir.join("ratios.csv"))?;
    names.extend(per_alpha_charts(dir, &r, "k", "r_k", "ratios", "R_k per step", &[])?);
    Ok(names)
}

/// Fitted curves plus the spectral charts.
pub fn render_experiment(dir: &Path) -> Result<Vec<String>> {
    let p = Table::read(&dir.join("predictions.csv"))?;
    let train = training_points(dir)?;
    let mut names = per_alpha_charts(dir, &p, "x", "f", "fits", "fitted curves per step", &train)?;
    names.extend(render_spectral(dir)?);
    Ok(names)
}

//! Runners behind the CLI subcommands. Each computes first, then writes its
//! CSV files into the output directory, then (optionally) plots rendered from
//! those CSVs, and finally `index.csv`.

use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use nalgebra::{DMatrix, DVector};

use super::config::{DataSource, ExperimentConfig};
use super::data::{csv_writer, format_float, generate_sine, read_dataset, write_dataset};
use super::plot;
use crate::constrained::{classify_regime, constrained_step, loss_floor, RegimeClassification};
use crate::distill::{limit_predictions, run_chain, DistillChain, DistillConfig};
use crate::error::{invalid, io_error, Error, Result};
use crate::linalg::{cross_kernel, eig_sym, gram_matrix, Dataset, GramDecomposition};
use crate::spectral::SpectralState;

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Sine { n, sigma, seed } => generate_sine(*n, *sigma, *seed),
        DataSource::Csv(path) => read_dataset(path),
    }
}

/// One distillation chain with its shrinkage trajectory.
#[derive(Debug, Clone)]
pub struct ChainResult {
    pub alpha: f64,
    pub chain: DistillChain,
    pub spectral: SpectralState,
    /// Fitted curve on the grid for steps `1..=steps` (index `τ − 1`).
    /// Empty when the inputs are not one-dimensional.
    pub curves: Vec<DVector<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub dataset: Dataset,
    pub decomposition: GramDecomposition,
    pub grid: Vec<f64>,
    pub chains: Vec<ChainResult>,
}

impl ExperimentRun {
    pub fn chain(&self, alpha: f64) -> Option<&ChainResult> {
        self.chains.iter().find(|c| c.alpha == alpha)
    }
}

fn compute_chain(
    cfg: &ExperimentConfig,
    data: &Dataset,
    decomp: &GramDecomposition,
    grid_kernel: Option<&DMatrix<f64>>,
    alpha: f64,
) -> Result<ChainResult> {
    let config = DistillConfig::new(alpha, cfg.lambda, cfg.steps)?.with_tolerance(cfg.tol)?;
    let chain = run_chain(decomp.gram(), data.targets(), config)?;
    let spectral = SpectralState::new(decomp.clone(), alpha, cfg.lambda)?.run(cfg.steps);
    let curves = match grid_kernel {
        Some(kg) => chain.fits().iter().map(|f| kg * f.coefficients()).collect(),
        None => Vec::new(),
    };
    Ok(ChainResult {
        alpha,
        chain,
        spectral,
        curves,
    })
}

/// Runs every chain of the config. Chains for distinct `α` run on their own
/// threads; results come back in config order.
pub fn compute_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let dataset = load_dataset(cfg)?;
    let gram = gram_matrix(&cfg.kernel, dataset.inputs())?;
    let decomposition = eig_sym(&gram)?;
    let grid = cfg.grid.values();
    let grid_kernel = if dataset.dim() == 1 {
        let queries = DMatrix::from_column_slice(grid.len(), 1, &grid);
        Some(cross_kernel(&cfg.kernel, &queries, dataset.inputs())?)
    } else {
        log::warn!("inputs have {} dimensions; skipping grid predictions", dataset.dim());
        None
    };

    let chains = thread::scope(|s| {
        let handles: Vec<_> = cfg
            .alphas
            .iter()
            .map(|&alpha| {
                let (dataset, decomposition, grid_kernel) = (&dataset, &decomposition, grid_kernel.as_ref());
                s.spawn(move || compute_chain(cfg, dataset, decomposition, grid_kernel, alpha))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("chain worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;

    for c in &chains {
        match c.chain.converged_at() {
            Some(t) => log::info!("alpha={}: converged at step {t} (tol {:e})", c.alpha, cfg.tol),
            None => log::info!(
                "alpha={}: not converged within {} steps (tol {:e})",
                c.alpha,
                cfg.steps,
                cfg.tol
            ),
        }
    }
    Ok(ExperimentRun {
        dataset,
        decomposition,
        grid,
        chains,
    })
}

fn prepare_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Writes a header and rows of preformatted fields.
fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| io_error(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn write_predictions(path: &Path, run: &ExperimentRun) -> Result<()> {
    let rows = run.chains.iter().flat_map(|c| {
        c.curves.iter().enumerate().flat_map(move |(i, curve)| {
            run.grid.iter().zip(curve.iter()).map(move |(&x, &f)| {
                vec![
                    (i + 1).to_string(),
                    format_float(c.alpha),
                    format_float(x),
                    format_float(f),
                ]
            })
        })
    });
    write_table(path, &["step", "alpha", "x", "f"], rows)
}

fn write_train_targets(path: &Path, run: &ExperimentRun) -> Result<()> {
    let rows = run.chains.iter().flat_map(|c| {
        c.chain.predictions().iter().enumerate().flat_map(move |(step, y)| {
            y.iter()
                .enumerate()
                .map(move |(i, &v)| vec![step.to_string(), format_float(c.alpha), i.to_string(), format_float(v)])
        })
    });
    write_table(path, &["step", "alpha", "index", "y_tau"], rows)
}

fn write_b_diagonal(path: &Path, chains: &[(f64, &SpectralState)]) -> Result<()> {
    let rows = chains.iter().flat_map(|&(alpha, s)| {
        s.b_history().iter().enumerate().flat_map(move |(step, b)| {
            s.decomposition()
                .values()
                .iter()
                .zip(b.iter())
                .enumerate()
                .map(move |(k, (&d, &bk))| {
                    vec![
                        step.to_string(),
                        format_float(alpha),
                        k.to_string(),
                        format_float(d),
                        format_float(bk),
                    ]
                })
        })
    });
    write_table(path, &["step", "alpha", "eig_index", "d", "b"], rows)
}

fn write_ratios(path: &Path, chains: &[(f64, &SpectralState)]) -> Result<()> {
    let rows = chains.iter().flat_map(|&(alpha, s)| {
        (0..=s.steps()).flat_map(move |step| {
            let r = s.ratios(step).expect("step within history");
            r.iter()
                .enumerate()
                .map(|(k, &v)| vec![step.to_string(), format_float(alpha), k.to_string(), format_float(v)])
                .collect::<Vec<_>>()
        })
    });
    write_table(path, &["step", "alpha", "k", "r_k"], rows)
}

fn write_index(dir: &Path, files: &[(String, &str)]) -> Result<()> {
    let rows = files.iter().map(|(f, kind)| vec![f.clone(), kind.to_string()]);
    write_table(&dir.join("index.csv"), &["file", "kind"], rows)
}

/// The resolved configuration in the same `key = value` format it was read
/// from, so a run can be repeated from its own output directory.
pub fn config_text(cfg: &ExperimentConfig) -> String {
    use crate::linalg::KernelSpec;
    let mut out = String::new();
    match cfg.kernel {
        KernelSpec::Rbf { gamma } => out += &format!("kernel.type = rbf\nkernel.gamma = {gamma:?}\n"),
        KernelSpec::Linear => out += "kernel.type = linear\n",
        KernelSpec::Polynomial { degree, offset } => {
            out += &format!("kernel.type = polynomial\nkernel.degree = {degree}\nkernel.offset = {offset:?}\n")
        }
    }
    let alphas: Vec<String> = cfg.alphas.iter().map(|a| format!("{a:?}")).collect();
    out += &format!(
        "lambda = {:?}\nalpha = {}\nsteps = {}\n",
        cfg.lambda,
        alphas.join(","),
        cfg.steps
    );
    match &cfg.data {
        DataSource::Sine { n, sigma, seed } => {
            out += &format!("data.n = {n}\ndata.sigma = {sigma:?}\ndata.seed = {seed}\n")
        }
        DataSource::Csv(p) => out += &format!("data.path = {}\n", p.display()),
    }
    out += &format!(
        "out = {}\nplots = {}\ngrid.points = {}\ngrid.min = {:?}\ngrid.max = {:?}\ntol = {:?}\n",
        cfg.output_dir.display(),
        cfg.emit_plots,
        cfg.grid.points,
        cfg.grid.min,
        cfg.grid.max,
        cfg.tol
    );
    if let Some(eps) = cfg.epsilon {
        out += &format!("epsilon = {eps:?}\n");
    }
    out
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

/// `distill run`: chains, fitted curves and shrinkage diagnostics.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentRun> {
    let run = compute_experiment(cfg)?;
    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    let spectral: Vec<(f64, &SpectralState)> = run.chains.iter().map(|c| (c.alpha, &c.spectral)).collect();

    write_text(&dir.join("config.txt"), &config_text(cfg))?;
    write_dataset(&run.dataset, &dir.join("dataset.csv"))?;
    write_predictions(&dir.join("predictions.csv"), &run)?;
    write_train_targets(&dir.join("train_targets.csv"), &run)?;
    write_b_diagonal(&dir.join("b_diagonal.csv"), &spectral)?;
    write_ratios(&dir.join("ratios.csv"), &spectral)?;

    let mut files: Vec<(String, &str)> = vec![
        ("config.txt".into(), "config"),
        ("dataset.csv".into(), "dataset"),
        ("predictions.csv".into(), "table"),
        ("train_targets.csv".into(), "table"),
        ("b_diagonal.csv".into(), "table"),
        ("ratios.csv".into(), "table"),
    ];
    if cfg.emit_plots {
        for name in plot::render_experiment(dir)? {
            files.push((name, "plot"));
        }
    }
    write_index(dir, &files)?;
    Ok(run)
}

/// Per-step summary of one chain: norm, step change, convergence flag and
/// distance to the infinite-step limit.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub alpha: f64,
    pub step: usize,
    pub y_norm: f64,
    pub change: f64,
    pub converged: bool,
    pub limit_gap: f64,
}

/// `distill sweep`: the same chains, summarized in `sweep.csv`.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let dataset = load_dataset(cfg)?;
    let gram = gram_matrix(&cfg.kernel, dataset.inputs())?;
    let y = dataset.targets();
    let results = thread::scope(|s| {
        let handles: Vec<_> = cfg
            .alphas
            .iter()
            .map(|&alpha| {
                let gram = &gram;
                s.spawn(move || -> Result<Vec<SweepRow>> {
                    let config = DistillConfig::new(alpha, cfg.lambda, cfg.steps)?.with_tolerance(cfg.tol)?;
                    let chain = run_chain(gram, y, config)?;
                    let limit = limit_predictions(gram, y, alpha, cfg.lambda)?;
                    let p = chain.predictions();
                    Ok((1..p.len())
                        .map(|step| {
                            let change = (&p[step] - &p[step - 1]).amax();
                            SweepRow {
                                alpha,
                                step,
                                y_norm: p[step].norm(),
                                change,
                                converged: change <= cfg.tol,
                                limit_gap: (&p[step] - &limit).amax(),
                            }
                        })
                        .collect())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("sweep worker panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<SweepRow> = results.into_iter().flatten().collect();

    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    write_text(&dir.join("config.txt"), &config_text(cfg))?;
    let table = rows.iter().map(|r| {
        vec![
            format_float(r.alpha),
            r.step.to_string(),
            format_float(r.y_norm),
            format_float(r.change),
            r.converged.to_string(),
            format_float(r.limit_gap),
        ]
    });
    write_table(
        &dir.join("sweep.csv"),
        &["alpha", "step", "y_norm", "change", "converged", "limit_gap"],
        table,
    )?;
    write_index(dir, &[("config.txt".into(), "config"), ("sweep.csv".into(), "table")])?;
    Ok(rows)
}

/// `spectral report`: eigenvalues, `B⁽ᵗ⁾` diagonals, ratios and the
/// contraction factor per `α`, without running any chain.
pub fn spectral_report(cfg: &ExperimentConfig) -> Result<Vec<SpectralState>> {
    let dataset = load_dataset(cfg)?;
    let decomp = eig_sym(&gram_matrix(&cfg.kernel, dataset.inputs())?)?;
    let states = cfg
        .alphas
        .iter()
        .map(|&alpha| Ok(SpectralState::new(decomp.clone(), alpha, cfg.lambda)?.run(cfg.steps)))
        .collect::<Result<Vec<_>>>()?;

    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    let pairs: Vec<(f64, &SpectralState)> = states.iter().map(|s| (s.alpha(), s)).collect();
    write_text(&dir.join("config.txt"), &config_text(cfg))?;
    write_b_diagonal(&dir.join("b_diagonal.csv"), &pairs)?;
    write_ratios(&dir.join("ratios.csv"), &pairs)?;

    let d = decomp.values();
    let eig_rows = (0..d.len()).map(|k| vec![k.to_string(), format_float(d[k])]);
    write_table(&dir.join("eigenvalues.csv"), &["eig_index", "d"], eig_rows)?;

    let d_max = decomp.max_eigenvalue();
    let rate_rows = states.iter().map(|s| {
        let rho = (1.0 - s.alpha()) * d_max / (d_max + cfg.lambda);
        let amplified = if s.alpha() == 0.0 {
            f64::INFINITY
        } else {
            cfg.lambda / s.alpha()
        };
        vec![format_float(s.alpha()), format_float(rho), format_float(amplified)]
    });
    write_table(&dir.join("rates.csv"), &["alpha", "rho", "limit_lambda"], rate_rows)?;

    let mut files: Vec<(String, &str)> = vec![
        ("config.txt".into(), "config"),
        ("eigenvalues.csv".into(), "table"),
        ("rates.csv".into(), "table"),
        ("b_diagonal.csv".into(), "table"),
        ("ratios.csv".into(), "table"),
    ];
    if cfg.emit_plots {
        for name in plot::render_spectral(dir)? {
            files.push((name, "plot"));
        }
    }
    write_index(dir, &files)?;
    Ok(states)
}

/// One row of `constrained.csv`. `regime` is the classification of the
/// problem, or `infeasible`/`error` for a step that could not be solved.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedRow {
    pub step: usize,
    pub lambda_tau: f64,
    pub y_norm: f64,
    pub constraint_value: f64,
    pub regime: String,
}

#[derive(Debug, Clone)]
pub struct ConstrainedReport {
    pub classification: RegimeClassification,
    pub rows: Vec<ConstrainedRow>,
    /// Set when a step failed; the chain stops there.
    pub error: Option<Error>,
}

/// Runs the constrained chain with `G = K/N`. A failing step becomes a final
/// row and [`ConstrainedReport::error`], never a hard error.
pub fn compute_constrained(cfg: &ExperimentConfig) -> Result<ConstrainedReport> {
    let epsilon = cfg.epsilon.ok_or_else(|| invalid("constrained run needs epsilon"))?;
    let alpha = match cfg.alphas.as_slice() {
        [a] => *a,
        _ => return Err(invalid("constrained run takes exactly one alpha")),
    };
    let dataset = load_dataset(cfg)?;
    let n = dataset.len();
    let y = dataset.targets();
    let classification = classify_regime(y, n, epsilon, alpha)?;
    let green = eig_sym(&(gram_matrix(&cfg.kernel, dataset.inputs())? / n as f64))?;

    let mut rows = Vec::with_capacity(cfg.steps);
    let mut prev = y.clone();
    let mut error = None;
    for step in 1..=cfg.steps {
        match constrained_step(&green, y, &prev, alpha, epsilon) {
            Ok(s) => {
                rows.push(ConstrainedRow {
                    step,
                    lambda_tau: s.multiplier,
                    y_norm: s.predictions.norm(),
                    constraint_value: s.constraint_value,
                    regime: classification.regime.as_str().to_string(),
                });
                prev = s.predictions;
            }
            Err(e) => {
                log::error!("constrained step {step}: {e}");
                let (label, value) = match e {
                    Error::ConstraintInfeasible { .. } => ("infeasible", loss_floor(y, &prev, alpha)),
                    _ => ("error", f64::NAN),
                };
                rows.push(ConstrainedRow {
                    step,
                    lambda_tau: f64::NAN,
                    y_norm: prev.norm(),
                    constraint_value: value,
                    regime: label.to_string(),
                });
                error = Some(e);
                break;
            }
        }
    }
    Ok(ConstrainedReport {
        classification,
        rows,
        error,
    })
}

pub fn summary_text(c: &RegimeClassification) -> String {
    format!(
        "regime = {}\nepsilon = {}\nepsilon_over_alpha = {}\nenergy = {}\nnear_boundary = {}\n",
        c.regime,
        format_float(c.epsilon),
        format_float(c.upper),
        format_float(c.energy),
        c.near_boundary
    )
}

/// `constrained run`: writes `constrained.csv` and the regime boundaries.
pub fn run_constrained(cfg: &ExperimentConfig) -> Result<ConstrainedReport> {
    let report = compute_constrained(cfg)?;
    let dir = &cfg.output_dir;
    prepare_dir(dir)?;
    write_text(&dir.join("config.txt"), &config_text(cfg))?;
    write_text(
        &dir.join("constrained_summary.txt"),
        &summary_text(&report.classification),
    )?;
    let rows = report.rows.iter().map(|r| {
        vec![
            r.step.to_string(),
            format_float(r.lambda_tau),
            format_float(r.y_norm),
            format_float(r.constraint_value),
            r.regime.clone(),
        ]
    });
    write_table(
        &dir.join("constrained.csv"),
        &["step", "lambda_tau", "y_norm", "constraint_value", "regime"],
        rows,
    )?;
    write_index(
        dir,
        &[
            ("config.txt".into(), "config"),
            ("constrained_summary.txt".into(), "summary"),
            ("constrained.csv".into(), "table"),
        ],
    )?;
    Ok(report)
}

/// Files of an artifact directory in the order `index.csv` lists them.
pub fn indexed_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let path = dir.join("index.csv");
    let mut r = csv::Reader::from_path(&path).map_err(|e| io_error(&path, e))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(|e| io_error(&path, e))?;
            Ok(dir.join(rec.get(0).unwrap_or_default()))
        })
        .collect()
}

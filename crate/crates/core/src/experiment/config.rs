//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{invalid, io_error, Result};
use crate::linalg::KernelSpec;

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Sine { n: usize, sigma: f64, seed: u64 },
    Csv(PathBuf),
}

/// Dense evaluation grid for the fitted curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub points: usize,
    pub min: f64,
    pub max: f64,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.min];
        }
        let step = (self.max - self.min) / (self.points - 1) as f64;
        (0..self.points).map(|i| self.min + step * i as f64).collect()
    }
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            points: 201,
            min: -0.05,
            max: 1.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub kernel: KernelSpec,
    pub lambda: f64,
    pub alphas: Vec<f64>,
    pub steps: usize,
    pub data: DataSource,
    pub output_dir: PathBuf,
    pub emit_plots: bool,
    pub grid: Grid,
    /// Only used by the constrained runner.
    pub epsilon: Option<f64>,
    /// ∞-norm threshold for flagging a chain as converged.
    pub tol: f64,
}

const KEYS: &[&str] = &[
    "kernel.type",
    "kernel.gamma",
    "kernel.degree",
    "kernel.offset",
    "lambda",
    "alpha",
    "steps",
    "data.n",
    "data.sigma",
    "data.seed",
    "data.path",
    "out",
    "plots",
    "grid.points",
    "grid.min",
    "grid.max",
    "epsilon",
    "tol",
];

/// Parses a real, also accepting a plain fraction like `1/80`.
fn parse_real(key: &str, raw: &str) -> Result<f64> {
    let parsed = match raw.split_once('/') {
        Some((num, den)) => num
            .trim()
            .parse::<f64>()
            .and_then(|n| den.trim().parse::<f64>().map(|d| n / d)),
        None => raw.parse::<f64>(),
    };
    match parsed {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(invalid(format!("{key}: expected a finite number, got {raw:?}"))),
    }
}

fn parse_int<T: std::str::FromStr>(key: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| invalid(format!("{key}: expected a nonnegative integer, got {raw:?}")))
}

fn parse_bool(key: &str, raw: &str) -> Result<bool> {
    match raw.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(invalid(format!("{key}: expected a boolean, got {raw:?}"))),
    }
}

/// Raw key/value pairs; later assignments win.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawConfig {
    entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = RawConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            raw.set_assignment(line)
                .map_err(|e| invalid(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        Self::parse(&text)
    }

    /// Applies one `key=value` assignment.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| invalid(format!("expected key=value, got {assignment:?}")))?;
        self.set(key.trim(), value.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !KEYS.contains(&key) {
            return Err(invalid(format!("unknown config key {key:?}")));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    fn real_or(&self, key: &str, default: f64) -> Result<f64> {
        self.get(key).map_or(Ok(default), |v| parse_real(key, v))
    }

    pub fn build(&self) -> Result<ExperimentConfig> {
        let kernel = match self.get("kernel.type").unwrap_or("rbf") {
            "rbf" => KernelSpec::rbf(self.real_or("kernel.gamma", 1.0 / 80.0)?)?,
            "linear" => KernelSpec::Linear,
            "polynomial" | "poly" => {
                let degree = self
                    .get("kernel.degree")
                    .map_or(Ok(2), |v| parse_int("kernel.degree", v))?;
                KernelSpec::polynomial(degree, self.real_or("kernel.offset", 1.0)?)?
            }
            other => return Err(invalid(format!("kernel.type: unknown kernel {other:?}"))),
        };

        let lambda = self.real_or("lambda", 0.2)?;
        if lambda <= 0.0 {
            return Err(invalid(format!("lambda must be positive, got {lambda}")));
        }

        let alphas = self
            .get("alpha")
            .unwrap_or("0,0.35")
            .split(',')
            .map(|s| parse_real("alpha", s.trim()))
            .collect::<Result<Vec<_>>>()?;
        if alphas.is_empty() {
            return Err(invalid("alpha list is empty"));
        }
        if let Some(a) = alphas.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(invalid(format!("alpha must lie in [0, 1], got {a}")));
        }

        let steps: usize = self.get("steps").map_or(Ok(6), |v| parse_int("steps", v))?;
        if steps == 0 {
            return Err(invalid("steps must be positive"));
        }

        let data = match self.get("data.path") {
            Some(path) => DataSource::Csv(PathBuf::from(path)),
            None => {
                let n: usize = self.get("data.n").map_or(Ok(11), |v| parse_int("data.n", v))?;
                let sigma = self.real_or("data.sigma", 0.5)?;
                let seed = self
                    .get("data.seed")
                    .ok_or_else(|| invalid("data.seed is required for synthetic data"))
                    .and_then(|v| parse_int("data.seed", v))?;
                if n < 2 {
                    return Err(invalid("data.n must be at least 2"));
                }
                if sigma < 0.0 {
                    return Err(invalid("data.sigma must be nonnegative"));
                }
                DataSource::Sine { n, sigma, seed }
            }
        };

        let defaults = Grid::default();
        let grid = Grid {
            points: self
                .get("grid.points")
                .map_or(Ok(defaults.points), |v| parse_int("grid.points", v))?,
            min: self.real_or("grid.min", defaults.min)?,
            max: self.real_or("grid.max", defaults.max)?,
        };
        if grid.points == 0 || grid.max < grid.min {
            return Err(invalid("grid needs at least one point and grid.min <= grid.max"));
        }

        let epsilon = self.get("epsilon").map(|v| parse_real("epsilon", v)).transpose()?;
        let tol = self.real_or("tol", 1e-3)?;
        if tol < 0.0 {
            return Err(invalid("tol must be nonnegative"));
        }

        Ok(ExperimentConfig {
            kernel,
            lambda,
            alphas,
            steps,
            data,
            output_dir: PathBuf::from(self.get("out").unwrap_or("out")),
            emit_plots: self.get("plots").map_or(Ok(false), |v| parse_bool("plots", v))?,
            grid,
            epsilon,
            tol,
        })
    }
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self> {
        RawConfig::parse(text)?.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_reference_setup() {
        let cfg = ExperimentConfig::from_text(
            "# sine demo\nkernel.type = rbf\nkernel.gamma = 1/80\nlambda=0.2\nalpha = 0, 0.35\nsteps=6\n\
             data.n=11\ndata.sigma=0.5\ndata.seed=7\nout=/tmp/x\n",
        )
        .unwrap();
        assert_eq!(cfg.kernel, KernelSpec::Rbf { gamma: 1.0 / 80.0 });
        assert_eq!(cfg.alphas, vec![0.0, 0.35]);
        assert_eq!(
            cfg.data,
            DataSource::Sine {
                n: 11,
                sigma: 0.5,
                seed: 7
            }
        );
        assert_eq!(cfg.output_dir, PathBuf::from("/tmp/x"));
        assert!(!cfg.emit_plots);
        assert_eq!(cfg.grid, Grid::default());
    }

    #[test]
    fn seed_is_mandatory_for_sine() {
        assert!(ExperimentConfig::from_text("lambda=0.2").is_err());
        assert!(ExperimentConfig::from_text("data.path=a.csv").is_ok());
    }

    #[test]
    fn rejects_bad_values() {
        for bad in [
            "data.seed=1\nlambda=0",
            "data.seed=1\nalpha=1.5",
            "data.seed=1\nalpha=",
            "data.seed=1\nsteps=0",
            "data.seed=1\nkernel.type=cosine",
            "data.seed=1\nnope=3",
            "data.seed=1\nlambda",
            "data.seed=-4",
            "data.seed=1\ndata.n=1",
            "data.seed=1\nplots=maybe",
        ] {
            assert!(ExperimentConfig::from_text(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn later_assignment_wins() {
        let mut raw = RawConfig::parse("data.seed=1\nlambda=0.5").unwrap();
        raw.set_assignment("lambda=0.1").unwrap();
        assert_eq!(raw.build().unwrap().lambda, 0.1);
    }

    #[test]
    fn grid_endpoints() {
        let g = Grid::default().values();
        assert_eq!(g.len(), 201);
        assert_eq!(g[0], -0.05);
        assert!((g[200] - 1.05).abs() < 1e-15);
        assert!((g[100] - 0.5).abs() < 1e-15);
    }
}

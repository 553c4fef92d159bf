//! Self-distillation chains and their closed forms.
//!
//! Step `τ` refits kernel ridge regression on `α y + (1−α) y⁽ᵗ⁻¹⁾` and
//! records the training predictions `y⁽ᵗ⁾ = K(K+λI)⁻¹(α y + (1−α) y⁽ᵗ⁻¹⁾)`.
//! [`run_chain`] iterates that definition; the `direct_*` and `limit_*`
//! functions evaluate any step, or the infinite-step limit, without
//! iterating.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, invalid, Result};
use crate::krr::{check_alpha, fit_with_factor, KrrFit};
use crate::linalg::{GramDecomposition, RegularizedCholesky};
use crate::spectral::{a_diagonal, b_closed, check_lambda};

pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DistillConfig {
    pub alpha: f64,
    pub lambda: f64,
    pub steps: usize,
    /// Absolute ∞-norm threshold on `y⁽ᵗ⁾ − y⁽ᵗ⁻¹⁾`.
    pub convergence_tol: f64,
}

impl DistillConfig {
    pub fn new(alpha: f64, lambda: f64, steps: usize) -> Result<Self> {
        let cfg = DistillConfig {
            alpha,
            lambda,
            steps,
            convergence_tol: DEFAULT_CONVERGENCE_TOL,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_tolerance(mut self, tol: f64) -> Result<Self> {
        self.convergence_tol = tol;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        check_alpha(self.alpha)?;
        check_lambda(self.lambda)?;
        if self.steps == 0 {
            return Err(invalid("a chain needs at least one step"));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(invalid("convergence tolerance must be nonnegative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DistillChain {
    config: DistillConfig,
    predictions: Vec<DVector<f64>>,
    fits: Vec<KrrFit>,
    converged_at: Option<usize>,
}

impl DistillChain {
    pub fn config(&self) -> &DistillConfig {
        &self.config
    }

    /// `y⁽⁰⁾ … y⁽ᵗᵐᵃˣ⁾`; index 0 holds the original targets.
    pub fn predictions(&self) -> &[DVector<f64>] {
        &self.predictions
    }

    /// Fit of step `τ` lives at index `τ − 1`.
    pub fn fits(&self) -> &[KrrFit] {
        &self.fits
    }

    pub fn fit(&self, tau: usize) -> Option<&KrrFit> {
        tau.checked_sub(1).and_then(|i| self.fits.get(i))
    }

    pub fn converged_at(&self) -> Option<usize> {
        self.converged_at
    }

    /// First step whose change from the previous step is at most `tol`.
    pub fn first_converged(&self, tol: f64) -> Option<usize> {
        first_below(&self.predictions, tol)
    }
}

fn first_below(predictions: &[DVector<f64>], tol: f64) -> Option<usize> {
    predictions
        .windows(2)
        .position(|w| (&w[1] - &w[0]).amax() <= tol)
        .map(|i| i + 1)
}

/// Runs `config.steps` distillation steps on one factorization of `K + λI`.
pub fn run_chain(gram: &DMatrix<f64>, y: &DVector<f64>, config: DistillConfig) -> Result<DistillChain> {
    config.validate()?;
    check_len(gram.nrows(), y.len())?;
    let factor = RegularizedCholesky::new(gram, config.lambda)?;
    let mut predictions = Vec::with_capacity(config.steps + 1);
    let mut fits = Vec::with_capacity(config.steps);
    predictions.push(y.clone());
    for _ in 0..config.steps {
        let prev = predictions.last().unwrap();
        let fit = fit_with_factor(gram, &factor, y, prev, config.alpha)?;
        predictions.push(fit.fitted().clone());
        fits.push(fit);
    }
    let converged_at = first_below(&predictions, config.convergence_tol);
    Ok(DistillChain {
        config,
        predictions,
        fits,
        converged_at,
    })
}

fn check_direct_domain(alpha: f64, lambda: f64, tau: u32) -> Result<()> {
    check_alpha(alpha)?;
    check_lambda(lambda)?;
    if alpha >= 1.0 {
        return Err(invalid(
            "closed form needs alpha < 1; with alpha = 1 every step equals the first, use run_chain",
        ));
    }
    if tau == 0 {
        return Err(invalid("step must be at least 1"));
    }
    Ok(())
}

/// `y⁽ᵗ⁾` in closed form, evaluated as `V diag(B⁽ᵗ⁾) Vᵀ y`.
pub fn direct_predictions(
    decomp: &GramDecomposition,
    y: &DVector<f64>,
    alpha: f64,
    lambda: f64,
    tau: u32,
) -> Result<DVector<f64>> {
    check_direct_domain(alpha, lambda, tau)?;
    check_len(decomp.len(), y.len())?;
    let a = a_diagonal(decomp.values(), lambda)?;
    let b = b_closed(&a, alpha, tau)?;
    Ok(decomp.apply_filter(&b, y))
}

/// `(K + λI)⁻¹ v` through the eigendecomposition.
fn eig_solve(decomp: &GramDecomposition, lambda: f64, v: &DVector<f64>) -> DVector<f64> {
    let inv = decomp.values().map(|d| 1.0 / (d + lambda));
    decomp.apply_filter(&inv, v)
}

/// Prediction of step `τ` at a point with kernel vector `κ(x, X)`:
/// `α f⁽¹⁾(x) + (1−α) κᵀ(K+λI)⁻¹ y⁽ᵗ⁻¹⁾`.
pub fn direct_predict_at(
    decomp: &GramDecomposition,
    y: &DVector<f64>,
    kernel_vec: &DVector<f64>,
    alpha: f64,
    lambda: f64,
    tau: u32,
) -> Result<f64> {
    check_direct_domain(alpha, lambda, tau)?;
    check_len(decomp.len(), y.len())?;
    check_len(decomp.len(), kernel_vec.len())?;
    let first = kernel_vec.dot(&eig_solve(decomp, lambda, y));
    let prev = if tau == 1 {
        y.clone()
    } else {
        direct_predictions(decomp, y, alpha, lambda, tau - 1)?
    };
    let teacher = kernel_vec.dot(&eig_solve(decomp, lambda, &prev));
    Ok(alpha * first + (1.0 - alpha) * teacher)
}

/// `y⁽∞⁾ = αK(αK + λI)⁻¹ y`, i.e. kernel ridge regression with the
/// regularization amplified to `λ/α`. Zero for `α = 0`.
pub fn limit_predictions(gram: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, lambda: f64) -> Result<DVector<f64>> {
    check_alpha(alpha)?;
    check_lambda(lambda)?;
    check_len(gram.nrows(), y.len())?;
    if alpha == 0.0 {
        return Ok(DVector::zeros(y.len()));
    }
    let solved = RegularizedCholesky::new(gram, lambda / alpha)?.solve(y)?;
    Ok(gram * solved)
}

/// Limit prediction at a point:
/// `α κᵀ(K+λI)⁻¹y + (1−α) κᵀ(K+λI)⁻¹ y⁽∞⁾`.
///
/// The second term is the plain ridge fit (regularization `λ`) on the
/// limiting training predictions. For `α = 0` the limit is identically zero.
pub fn limit_predict_at(
    gram: &DMatrix<f64>,
    y: &DVector<f64>,
    kernel_vec: &DVector<f64>,
    alpha: f64,
    lambda: f64,
) -> Result<f64> {
    check_alpha(alpha)?;
    check_lambda(lambda)?;
    check_len(gram.nrows(), y.len())?;
    check_len(gram.nrows(), kernel_vec.len())?;
    if alpha == 0.0 {
        return Ok(0.0);
    }
    let factor = RegularizedCholesky::new(gram, lambda)?;
    let first = kernel_vec.dot(&factor.solve(y)?);
    let y_inf = limit_predictions(gram, y, alpha, lambda)?;
    let second = kernel_vec.dot(&factor.solve(&y_inf)?);
    Ok(alpha * first + (1.0 - alpha) * second)
}

/// Spectral radius of `(1−α) K(K+λI)⁻¹`, the per-step contraction factor of
/// the distance to the limit.
pub fn convergence_rate_bound(values: &DVector<f64>, alpha: f64, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(invalid(format!("rate bound needs alpha in (0, 1], got {alpha}")));
    }
    let d_max = values.iter().copied().fold(0.0, f64::max);
    Ok((1.0 - alpha) * d_max / (d_max + lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{eig_sym, gram_matrix, KernelSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(k: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, k)
    }

    fn one(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn instance(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0..1.0));
        let k = gram_matrix(&KernelSpec::rbf(3.0).unwrap(), &x).unwrap();
        let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        (k, y)
    }

    #[test]
    fn scalar_chains() {
        let chain = run_chain(&scalar(1.0), &one(1.0), DistillConfig::new(0.0, 1.0, 5).unwrap()).unwrap();
        for (t, p) in chain.predictions().iter().enumerate() {
            assert!((p[0] - 0.5_f64.powi(t as i32)).abs() < 1e-15);
        }
        let chain = run_chain(&scalar(1.0), &one(1.0), DistillConfig::new(0.5, 1.0, 3).unwrap()).unwrap();
        for (p, want) in chain.predictions().iter().zip([1.0, 0.5, 0.375, 0.34375]) {
            assert!((p[0] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn alpha_one_chain_is_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (k, y) = instance(&mut rng, 7);
        let chain = run_chain(&k, &y, DistillConfig::new(1.0, 0.3, 6).unwrap()).unwrap();
        for p in &chain.predictions()[2..] {
            assert_eq!(p, &chain.predictions()[1]);
        }
        assert_eq!(chain.converged_at(), Some(2));
        assert_eq!(chain.predictions()[0], y);
    }

    #[test]
    fn config_validation() {
        assert!(DistillConfig::new(-0.1, 1.0, 1).is_err());
        assert!(DistillConfig::new(0.5, 0.0, 1).is_err());
        assert!(DistillConfig::new(0.5, 1.0, 0).is_err());
        assert!(DistillConfig::new(0.5, 1.0, 1).unwrap().with_tolerance(-1.0).is_err());
    }

    #[test]
    fn direct_scalar_and_first_step() {
        let d = eig_sym(&scalar(1.0)).unwrap();
        let p = direct_predictions(&d, &one(1.0), 0.5, 1.0, 3).unwrap();
        assert!((p[0] - 0.34375).abs() < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (k, y) = instance(&mut rng, 6);
        let d = eig_sym(&k).unwrap();
        let krr = &k * solve(&k, 0.4, &y);
        for alpha in [0.0, 0.3, 0.9] {
            let p = direct_predictions(&d, &y, alpha, 0.4, 1).unwrap();
            assert!((p - &krr).amax() < 1e-12);
        }
        assert!(direct_predictions(&d, &y, 1.0, 0.4, 2).is_err());
        assert!(direct_predictions(&d, &y, 0.5, 0.4, 0).is_err());
    }

    fn solve(k: &DMatrix<f64>, lambda: f64, y: &DVector<f64>) -> DVector<f64> {
        RegularizedCholesky::new(k, lambda).unwrap().solve(y).unwrap()
    }

    #[test]
    fn direct_matches_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let n = rng.random_range(1..15);
            let (k, y) = instance(&mut rng, n);
            let d = eig_sym(&k).unwrap();
            let alpha = rng.random_range(0.0..0.95);
            let lambda = rng.random_range(0.05..1.0);
            let chain = run_chain(&k, &y, DistillConfig::new(alpha, lambda, 12).unwrap()).unwrap();
            for tau in 1..=12u32 {
                let direct = direct_predictions(&d, &y, alpha, lambda, tau).unwrap();
                let it = &chain.predictions()[tau as usize];
                assert!((direct - it).amax() <= 1e-9 * it.amax().max(f64::MIN_POSITIVE));
            }
        }
    }

    #[test]
    fn direct_predict_at_matches_chain_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = KernelSpec::rbf(3.0).unwrap();
        for _ in 0..10 {
            let n = rng.random_range(2..12);
            let x = DMatrix::from_fn(n, 2, |_, _| rng.random_range(0.0..1.0));
            let k = gram_matrix(&spec, &x).unwrap();
            let y = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let d = eig_sym(&k).unwrap();
            let chain = run_chain(&k, &y, DistillConfig::new(0.35, 0.2, 8).unwrap()).unwrap();
            let q = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)];
            for tau in 1..=8u32 {
                let a = direct_predict_at(
                    &d,
                    &y,
                    &crate::linalg::kernel_vector(&spec, &q, &x).unwrap(),
                    0.35,
                    0.2,
                    tau,
                )
                .unwrap();
                let b = chain.fit(tau as usize).unwrap().predict(&spec, &x, &q).unwrap();
                assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn alpha_zero_collapses_off_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (k, y) = instance(&mut rng, 5);
        let d = eig_sym(&k).unwrap();
        let kv = k.column(2).into_owned() * 0.7;
        let v = direct_predict_at(&d, &y, &kv, 0.0, 0.5, 400).unwrap();
        assert!(v.abs() < 1e-10);
    }

    #[test]
    fn limit_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (k, y) = instance(&mut rng, 6);
        assert_eq!(limit_predictions(&k, &y, 0.0, 0.5).unwrap(), DVector::zeros(6));
        let first = &k * solve(&k, 0.5, &y);
        assert!((limit_predictions(&k, &y, 1.0, 0.5).unwrap() - first).amax() < 1e-12);
        let p = limit_predictions(&scalar(2.0), &one(1.0), 0.5, 1.0).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn limit_matches_eigen_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (k, y) = instance(&mut rng, 9);
        let d = eig_sym(&k).unwrap();
        for alpha in [0.1, 0.5, 0.8] {
            let filt = d.values().map(|e| alpha * e / (alpha * e + 0.3));
            let eig = d.apply_filter(&filt, &y);
            assert!((limit_predictions(&k, &y, alpha, 0.3).unwrap() - eig).amax() < 1e-12);
        }
    }

    #[test]
    fn limit_predict_at_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (k, y) = instance(&mut rng, 8);
        let kv = DVector::from_fn(8, |_, _| rng.random_range(0.0..1.0));
        let lambda = 0.4;
        // α = 1: plain ridge prediction
        let plain = kv.dot(&solve(&k, lambda, &y));
        assert!((limit_predict_at(&k, &y, &kv, 1.0, lambda).unwrap() - plain).abs() < 1e-12);
        assert_eq!(limit_predict_at(&k, &y, &kv, 0.0, lambda).unwrap(), 0.0);
        for alpha in [0.2, 0.6] {
            // α κᵀ(K+λI)⁻¹ (I + (1−α) K(αK+λI)⁻¹) y
            let mut ak = &k * alpha;
            for i in 0..8 {
                ak[(i, i)] += lambda;
            }
            let inner = ak.clone().cholesky().unwrap().solve(&y);
            let t = &y + (&k * inner) * (1.0 - alpha);
            let general = alpha * kv.dot(&solve(&k, lambda, &t));
            let got = limit_predict_at(&k, &y, &kv, alpha, lambda).unwrap();
            assert!((got - general).abs() <= 1e-12 * (1.0 + general.abs()));
        }
    }

    #[test]
    fn rate_bound_cases() {
        let d = DVector::from_vec(vec![0.2, 1.0]);
        assert_eq!(convergence_rate_bound(&d, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(convergence_rate_bound(&d, 0.5, 1.0).unwrap(), 0.25);
        assert!(convergence_rate_bound(&d, 0.0, 1.0).is_err());
    }
}

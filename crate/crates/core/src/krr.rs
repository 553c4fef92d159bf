//! Weighted-target kernel ridge regression in dual form.
//!
//! The objective mixes two squared-error terms,
//! `α/2‖Kc − y₁‖² + (1−α)/2‖Kc − y₂‖² + λ/2 cᵀKc`,
//! and is minimized by `c = (K + λI)⁻¹(α y₁ + (1−α) y₂)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, invalid, Result};
use crate::linalg::{kernel_vector, Dataset, KernelSpec, RegularizedCholesky};

pub(crate) fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(invalid(format!("alpha must lie in [0, 1], got {alpha}")))
    }
}

/// `α y₁ + (1−α) y₂`
pub fn merged_target(y1: &DVector<f64>, y2: &DVector<f64>, alpha: f64) -> DVector<f64> {
    y1 * alpha + y2 * (1.0 - alpha)
}

/// A fitted model: one dual coefficient per training point.
#[derive(Debug, Clone, PartialEq)]
pub struct KrrFit {
    coefficients: DVector<f64>,
    fitted: DVector<f64>,
    alpha: f64,
    lambda: f64,
}

impl KrrFit {
    pub fn coefficients(&self) -> &DVector<f64> {
        &self.coefficients
    }

    /// Predictions on the training inputs, `K c`.
    pub fn fitted(&self) -> &DVector<f64> {
        &self.fitted
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `κ(x, X)ᵀ c` for a precomputed kernel vector.
    pub fn predict_with(&self, kernel_vec: &DVector<f64>) -> Result<f64> {
        check_len(self.coefficients.len(), kernel_vec.len())?;
        Ok(kernel_vec.dot(&self.coefficients))
    }

    /// Prediction at `x`; `inputs` must be the training inputs the fit was
    /// built from.
    pub fn predict(&self, kernel: &KernelSpec, inputs: &DMatrix<f64>, x: &[f64]) -> Result<f64> {
        check_len(self.coefficients.len(), inputs.nrows())?;
        self.predict_with(&kernel_vector(kernel, x, inputs)?)
    }

    pub fn predict_dataset(&self, kernel: &KernelSpec, data: &Dataset, x: &[f64]) -> Result<f64> {
        self.predict(kernel, data.inputs(), x)
    }
}

/// Fits against a prebuilt factorization of `K + λI`.
pub fn fit_with_factor(
    gram: &DMatrix<f64>,
    factor: &RegularizedCholesky,
    y1: &DVector<f64>,
    y2: &DVector<f64>,
    alpha: f64,
) -> Result<KrrFit> {
    check_alpha(alpha)?;
    check_len(gram.nrows(), factor.len())?;
    check_len(gram.nrows(), y1.len())?;
    check_len(gram.nrows(), y2.len())?;
    let coefficients = factor.solve(&merged_target(y1, y2, alpha))?;
    let fitted = gram * &coefficients;
    Ok(KrrFit {
        coefficients,
        fitted,
        alpha,
        lambda: factor.lambda(),
    })
}

pub fn fit_weighted(
    gram: &DMatrix<f64>,
    y1: &DVector<f64>,
    y2: &DVector<f64>,
    alpha: f64,
    lambda: f64,
) -> Result<KrrFit> {
    check_alpha(alpha)?;
    let factor = RegularizedCholesky::new(gram, lambda)?;
    fit_with_factor(gram, &factor, y1, y2, alpha)
}

/// Plain kernel ridge regression on a single target.
pub fn fit(gram: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<KrrFit> {
    fit_weighted(gram, y, y, 1.0, lambda)
}

/// Distillation objective evaluated at dual coefficients `c`, using
/// `‖β‖² = cᵀKc`.
pub fn distill_objective(
    gram: &DMatrix<f64>,
    coefficients: &DVector<f64>,
    y1: &DVector<f64>,
    y2: &DVector<f64>,
    alpha: f64,
    lambda: f64,
) -> f64 {
    let f = gram * coefficients;
    let r1 = (&f - y1).norm_squared();
    let r2 = (&f - y2).norm_squared();
    0.5 * alpha * r1 + 0.5 * (1.0 - alpha) * r2 + 0.5 * lambda * coefficients.dot(&f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::gram_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(rng: &mut ChaCha8Rng, n: usize) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let m = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
        let k = gram_matrix(&KernelSpec::rbf(1.5).unwrap(), &m).unwrap();
        let y1 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let y2 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        (k, y1, y2)
    }

    #[test]
    fn scalar_fit() {
        let k = DMatrix::from_element(1, 1, 1.0);
        let y = DVector::from_element(1, 2.0);
        let f = fit_weighted(&k, &y, &DVector::zeros(1), 1.0, 1.0).unwrap();
        assert!((f.coefficients()[0] - 1.0).abs() < 1e-15);
        assert!((f.fitted()[0] - 1.0).abs() < 1e-15);
        assert!((f.predict_with(&DVector::from_element(1, 1.0)).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_one_ignores_second_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (k, y1, y2) = instance(&mut rng, 8);
        let a = fit_weighted(&k, &y1, &y2, 1.0, 0.3).unwrap();
        let b = fit(&k, &y1, 0.3).unwrap();
        assert_eq!(a.coefficients(), b.coefficients());
    }

    #[test]
    fn rejects_bad_alpha_and_lambda() {
        let k = DMatrix::identity(2, 2);
        let y = DVector::zeros(2);
        assert!(fit_weighted(&k, &y, &y, 1.5, 1.0).is_err());
        assert!(fit_weighted(&k, &y, &y, 0.5, 0.0).is_err());
        assert!(fit_weighted(&k, &y, &y, 0.5, -1.0).is_err());
        assert!(fit_weighted(&k, &y, &DVector::zeros(3), 0.5, 1.0).is_err());
    }

    #[test]
    fn merged_target_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let n = rng.random_range(1..12);
            let (k, y1, y2) = instance(&mut rng, n);
            let alpha = rng.random_range(0.0..=1.0);
            let a = fit_weighted(&k, &y1, &y2, alpha, 0.2).unwrap();
            let merged = merged_target(&y1, &y2, alpha);
            let junk = DVector::from_element(n, 1e6);
            let b = fit_weighted(&k, &merged, &junk, 1.0, 0.2).unwrap();
            assert!((a.coefficients() - b.coefficients()).amax() <= 1e-12);
        }
    }

    #[test]
    fn large_lambda_shrinks_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (k, y1, _) = instance(&mut rng, 6);
        let f = fit(&k, &y1, 1e12).unwrap();
        let kv = k.column(0).into_owned();
        assert!(f.predict_with(&kv).unwrap().abs() < 1e-10);
    }

    #[test]
    fn objective_is_minimized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = rng.random_range(2..10);
            let (k, y1, y2) = instance(&mut rng, n);
            let alpha = rng.random_range(0.0..=1.0);
            let lambda = rng.random_range(0.01..2.0);
            let f = fit_weighted(&k, &y1, &y2, alpha, lambda).unwrap();
            let base = distill_objective(&k, f.coefficients(), &y1, &y2, alpha, lambda);
            for _ in 0..5 {
                let mut delta = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
                delta *= 1e-3 / delta.norm();
                let c = f.coefficients() + delta;
                let perturbed = distill_objective(&k, &c, &y1, &y2, alpha, lambda);
                assert!(perturbed >= base - 1e-14 * base.abs().max(1.0));
            }
        }
    }

    #[test]
    fn predict_checks_dimensions() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 0.5, 1.0]);
        let spec = KernelSpec::rbf(1.0).unwrap();
        let k = gram_matrix(&spec, &x).unwrap();
        let f = fit(&k, &DVector::from_vec(vec![1.0, 0.0, -1.0]), 0.1).unwrap();
        assert!(f.predict(&spec, &x, &[0.2, 0.3]).is_err());
        let at_train = f.predict(&spec, &x, &[0.5]).unwrap();
        assert!((at_train - f.fitted()[1]).abs() < 1e-14);
    }
}

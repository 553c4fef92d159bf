//! Per-eigendirection shrinkage diagnostics.
//!
//! With `K = V diag(D) Vᵀ` every distillation step acts diagonally in the
//! eigenbasis: `y⁽ᵗ⁾ = V diag(B⁽ᵗ⁾) Vᵀ y` where `A = D/(D + λ)` and
//! `B⁽ᵗ⁾ = A ∘ ((1−α) B⁽ᵗ⁻¹⁾ + α)`, `B⁽⁰⁾ = 1`. All quantities here are
//! vectors holding the diagonals.

use nalgebra::DVector;

use crate::error::{check_len, invalid, Error, Result};
use crate::krr::check_alpha;
use crate::linalg::GramDecomposition;

/// Below this gap `1 − (1−α)a` the closed-form geometric sum switches to its
/// Taylor expansion.
const GEOMETRIC_FALLBACK: f64 = 1e-12;

/// Relative threshold under which an eigenvalue is treated as zero by the
/// basis representation.
pub const SINGULAR_REL_TOL: f64 = 1e-12;

pub(crate) fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("lambda must be positive and finite, got {lambda}")))
    }
}

/// `d / (d + λ)` for every eigenvalue.
pub fn a_diagonal(values: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    check_lambda(lambda)?;
    if values.iter().any(|&d| !(d >= 0.0)) {
        return Err(invalid("eigenvalues must be nonnegative"));
    }
    Ok(values.map(|d| d / (d + lambda)))
}

/// One step of the shrinkage recursion, `A ∘ ((1−α) B_prev + α)`.
pub fn b_step(a: &DVector<f64>, b_prev: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    check_alpha(alpha)?;
    check_len(a.len(), b_prev.len())?;
    Ok(a.zip_map(b_prev, |ai, bi| ai * ((1.0 - alpha) * bi + alpha)))
}

/// `Σ_{i=0}^{m-1} q^i` given `gap = 1 − q`.
fn geometric_prefix(gap: f64, m: u32) -> f64 {
    if m == 0 {
        return 0.0;
    }
    let m = m as f64;
    if gap < GEOMETRIC_FALLBACK {
        // first-order Taylor term of (1 − q^m)/(1 − q) around q = 1
        m - 0.5 * m * (m - 1.0) * gap
    } else {
        -(m * (-gap).ln_1p()).exp_m1() / gap
    }
}

/// `B⁽ᵗ⁾` without iterating:
/// `α/(1−α) Σ_{i=1}^{τ−1} ((1−α)A)^i + (1−α)^{τ−1} A^τ`.
///
/// Evaluated per entry as `a·(α·S + q^{τ−1})` with `q = (1−α)a` and
/// `S = Σ_{i<τ−1} q^i`, which avoids dividing by `1 − α`.
pub fn b_closed(a: &DVector<f64>, alpha: f64, tau: u32) -> Result<DVector<f64>> {
    check_alpha(alpha)?;
    if alpha >= 1.0 {
        return Err(invalid(
            "closed form requires alpha < 1; for alpha = 1 every step equals A",
        ));
    }
    if tau == 0 {
        return Ok(DVector::from_element(a.len(), 1.0));
    }
    Ok(a.map(|ai| {
        let q = (1.0 - alpha) * ai;
        let gap = alpha + (1.0 - alpha) * (1.0 - ai);
        ai * (alpha * geometric_prefix(gap, tau - 1) + q.powi(tau as i32 - 1))
    }))
}

/// Closed-form `B_k/B_j` for the boundary weights `α ∈ {0, 1}`:
/// `((1 + λ/d_j)/(1 + λ/d_k))^τ` at `α = 0`, exponent 1 at `α = 1`.
pub fn ratio_closed(d_k: f64, d_j: f64, lambda: f64, tau: u32, alpha: f64) -> Result<f64> {
    if !(d_j > 0.0) {
        return Err(invalid("ratio undefined for a zero eigenvalue d_j"));
    }
    if !(d_k > d_j) {
        return Err(invalid("ratio_closed expects d_k > d_j"));
    }
    if !(lambda >= 0.0) {
        return Err(invalid("lambda must be nonnegative"));
    }
    let base = (1.0 + lambda / d_j) / (1.0 + lambda / d_k);
    if alpha == 0.0 {
        Ok(base.powi(tau as i32))
    } else if alpha == 1.0 {
        Ok(base)
    } else {
        Err(invalid(format!("ratio_closed covers alpha 0 or 1 only, got {alpha}")))
    }
}

/// Sign with `sgn(0) = 0`.
pub fn sgn(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// The bracket `((B_k/B_j − A_k/A_j)·A_j/(B_k(A_k − A_j)) + 1)` from the
/// ratio-change predictor, for `A_k > A_j`.
pub fn ratio_predictor_bracket(b_k: f64, b_j: f64, a_k: f64, a_j: f64) -> f64 {
    (b_k / b_j - a_k / a_j) * a_j / (b_k * (a_k - a_j)) + 1.0
}

/// Predicts the sign of `B⁽ᵗ⁾_k/B⁽ᵗ⁾_j − B⁽ᵗ⁻¹⁾_k/B⁽ᵗ⁻¹⁾_j` from the previous
/// state and the current shrinkage factors.
///
/// The prediction is `sgn(bracket⁻¹ − α)`, evaluated as the equivalent
/// `sgn(1/α − bracket)`. The two agree whenever the bracket is positive.
/// The second form stays finite at the first step (`B⁽⁰⁾ = 1` makes the
/// bracket exactly zero) and under step-dependent `A`, where the bracket
/// can turn negative. Pairs with `A_k < A_j` are evaluated with the roles
/// swapped and the sign flipped.
pub fn ratio_sign_predictor(b_prev_k: f64, b_prev_j: f64, a_k: f64, a_j: f64, alpha: f64) -> Result<i8> {
    for v in [b_prev_k, b_prev_j, a_k, a_j] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(invalid(format!("predictor inputs must lie in (0, 1], got {v}")));
        }
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(format!("predictor requires alpha in (0, 1), got {alpha}")));
    }
    if a_k == a_j {
        return Err(invalid("degenerate pair A_k = A_j: the ratio is constant"));
    }
    if a_k < a_j {
        return ratio_sign_predictor(b_prev_j, b_prev_k, a_j, a_k, alpha).map(|s| -s);
    }
    Ok(sgn(1.0 / alpha - ratio_predictor_bracket(b_prev_k, b_prev_j, a_k, a_j)))
}

/// `B_{k+1}/B_k` along the ascending eigenvalue order. A zero denominator
/// yields `+∞` (a collapsed coordinate).
pub fn rk_ratios(b: &DVector<f64>) -> DVector<f64> {
    let n = b.len().saturating_sub(1);
    DVector::from_fn(n, |k, _| if b[k] == 0.0 { f64::INFINITY } else { b[k + 1] / b[k] })
}

fn check_basis_inputs(
    decomp: &GramDecomposition,
    kernel_vec: &DVector<f64>,
    y: &DVector<f64>,
    b_tau: &DVector<f64>,
) -> Result<()> {
    check_len(decomp.len(), kernel_vec.len())?;
    check_len(decomp.len(), y.len())?;
    check_len(decomp.len(), b_tau.len())
}

/// `P(x)ᵀ diag(B) Z` with `P(x) = D⁻¹ Vᵀ κ(x, X)` and `Z = Vᵀ y`.
///
/// Fails if any eigenvalue is at most `1e-12 · max(D)`.
pub fn basis_representation(
    decomp: &GramDecomposition,
    kernel_vec: &DVector<f64>,
    y: &DVector<f64>,
    b_tau: &DVector<f64>,
) -> Result<f64> {
    check_basis_inputs(decomp, kernel_vec, y, b_tau)?;
    let floor = SINGULAR_REL_TOL * decomp.max_eigenvalue();
    if let Some((index, &value)) = decomp.values().iter().enumerate().find(|(_, &d)| d <= floor) {
        return Err(Error::SingularBasis { index, value });
    }
    let p = decomp.to_eigenbasis(kernel_vec).component_div(decomp.values());
    let z = decomp.to_eigenbasis(y);
    Ok(p.component_mul(b_tau).dot(&z))
}

/// Like [`basis_representation`] but drops near-zero eigendirections instead
/// of failing. Returns the value and the dropped indices.
pub fn basis_representation_truncated(
    decomp: &GramDecomposition,
    kernel_vec: &DVector<f64>,
    y: &DVector<f64>,
    b_tau: &DVector<f64>,
) -> Result<(f64, Vec<usize>)> {
    check_basis_inputs(decomp, kernel_vec, y, b_tau)?;
    let floor = SINGULAR_REL_TOL * decomp.max_eigenvalue();
    let kv = decomp.to_eigenbasis(kernel_vec);
    let z = decomp.to_eigenbasis(y);
    let mut dropped = Vec::new();
    let mut total = 0.0;
    for (i, &d) in decomp.values().iter().enumerate() {
        if d <= floor {
            dropped.push(i);
            continue;
        }
        total += kv[i] / d * b_tau[i] * z[i];
    }
    if !dropped.is_empty() {
        log::warn!(
            "basis representation dropped {} singular eigendirection(s)",
            dropped.len()
        );
    }
    Ok((total, dropped))
}

/// Shrinkage trajectory `B⁽⁰⁾, B⁽¹⁾, …` for one `(α, λ)` on a fixed
/// decomposition.
#[derive(Debug, Clone)]
pub struct SpectralState {
    decomposition: GramDecomposition,
    alpha: f64,
    lambda: f64,
    a: DVector<f64>,
    b: Vec<DVector<f64>>,
}

impl SpectralState {
    pub fn new(decomposition: GramDecomposition, alpha: f64, lambda: f64) -> Result<Self> {
        check_alpha(alpha)?;
        let a = a_diagonal(decomposition.values(), lambda)?;
        let b = vec![DVector::from_element(a.len(), 1.0)];
        Ok(SpectralState {
            decomposition,
            alpha,
            lambda,
            a,
            b,
        })
    }

    pub fn decomposition(&self) -> &GramDecomposition {
        &self.decomposition
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn a(&self) -> &DVector<f64> {
        &self.a
    }

    /// Every recorded `B⁽ᵗ⁾`, index = step.
    pub fn b_history(&self) -> &[DVector<f64>] {
        &self.b
    }

    pub fn steps(&self) -> usize {
        self.b.len() - 1
    }

    pub fn b(&self, tau: usize) -> Option<&DVector<f64>> {
        self.b.get(tau)
    }

    pub fn advance(&mut self) -> &DVector<f64> {
        let last = self.b.last().expect("B history starts with B0");
        let next = self
            .a
            .zip_map(last, |ai, bi| ai * ((1.0 - self.alpha) * bi + self.alpha));
        self.b.push(next);
        self.b.last().unwrap()
    }

    pub fn run(mut self, steps: usize) -> Self {
        for _ in 0..steps {
            self.advance();
        }
        self
    }

    pub fn ratios(&self, tau: usize) -> Option<DVector<f64>> {
        self.b.get(tau).map(rk_ratios)
    }

    /// `V diag(B⁽ᵗ⁾) Vᵀ y`
    pub fn reconstruct_predictions(&self, tau: usize, y: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.decomposition.len(), y.len())?;
        let b = self
            .b
            .get(tau)
            .ok_or_else(|| invalid(format!("step {tau} not computed yet")))?;
        Ok(self.decomposition.apply_filter(b, y))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::eig_sym;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn a_diagonal_values() {
        let a = a_diagonal(&v(&[0.0, 1.0, 3.0]), 1.0).unwrap();
        assert_eq!(a.as_slice(), &[0.0, 0.5, 0.75]);
        let a = a_diagonal(&v(&[0.5, 2.0]), 1e15).unwrap();
        assert!(a.amax() < 1e-14);
        assert!(a_diagonal(&v(&[1.0]), 0.0).is_err());
        assert!(a_diagonal(&v(&[-1.0]), 1.0).is_err());
    }

    #[test]
    fn b_step_cases() {
        let a = v(&[0.2, 0.7]);
        assert_eq!(b_step(&a, &v(&[1.0, 1.0]), 0.3).unwrap(), a);
        assert_eq!(b_step(&a, &v(&[0.5, 0.5]), 0.0).unwrap(), v(&[0.1, 0.35]));
        assert_eq!(b_step(&v(&[0.5]), &v(&[0.5]), 0.5).unwrap()[0], 0.375);
        assert!(b_step(&a, &v(&[1.0]), 0.5).is_err());
    }

    #[test]
    fn b_closed_matches_recursion() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let n = rng.random_range(1..6);
            let a = DVector::from_fn(n, |_, _| rng.random_range(0.0..1.0));
            let alpha = rng.random_range(0.0..1.0);
            let tau = rng.random_range(1..=30);
            let mut b = DVector::from_element(n, 1.0);
            for _ in 0..tau {
                b = b_step(&a, &b, alpha).unwrap();
            }
            let closed = b_closed(&a, alpha, tau).unwrap();
            assert!((closed - b).amax() <= 1e-12);
        }
    }

    #[test]
    fn b_closed_boundaries() {
        let a = v(&[0.3, 0.9]);
        assert_eq!(b_closed(&a, 0.4, 1).unwrap(), a);
        assert!(b_closed(&a, 1.0, 3).is_err());
        let lim = b_closed(&v(&[0.5]), 0.5, 400).unwrap()[0];
        assert!((lim - 1.0 / 3.0).abs() < 1e-15);
        // a = 1 exercises the Taylor branch: gap is exactly zero at alpha = 0
        assert_eq!(b_closed(&v(&[1.0]), 0.0, 7).unwrap()[0], 1.0);
    }

    #[test]
    fn ratio_closed_cases() {
        assert!((ratio_closed(2.0, 1.0, 1.0, 2, 0.0).unwrap() - 16.0 / 9.0).abs() < 1e-15);
        assert_eq!(ratio_closed(2.0, 1.0, 0.0, 5, 0.0).unwrap(), 1.0);
        let one = ratio_closed(2.0, 1.0, 1.0, 1, 1.0).unwrap();
        assert_eq!(ratio_closed(2.0, 1.0, 1.0, 9, 1.0).unwrap(), one);
        assert!(ratio_closed(2.0, 0.0, 1.0, 1, 0.0).is_err());
        assert!(ratio_closed(2.0, 1.0, 1.0, 1, 0.5).is_err());
    }

    #[test]
    fn predictor_first_step_increases() {
        // τ = 1 state: B_prev = A
        let (ak, aj) = (0.8, 0.3);
        assert_eq!(ratio_sign_predictor(ak, aj, ak, aj, 1e-6).unwrap(), 1);
        // τ = 0 state: B_prev = 1, bracket is exactly zero
        assert_eq!(ratio_sign_predictor(1.0, 1.0, ak, aj, 0.5).unwrap(), 1);
        assert_eq!(ratio_sign_predictor(1.0, 1.0, aj, ak, 0.5).unwrap(), -1);
    }

    #[test]
    fn predictor_fixed_point_is_zero() {
        // fixed point of the ratio: B_k/B_j = (A_k/A_j)(u B_k + 1)/(u B_j + 1), u = (1−α)/α
        let (alpha, ak, aj) = (0.5_f64, 0.75_f64, 0.5_f64);
        let u = (1.0 - alpha) / alpha;
        let bk = 0.5_f64;
        // solve for B_j: B_j (A_k(u B_k + 1)) = B_k (A_j (u B_j + 1))
        let bj = bk * aj / (ak * (u * bk + 1.0) - bk * aj * u);
        let bracket = ratio_predictor_bracket(bk, bj, ak, aj);
        assert!((1.0 / bracket - alpha).abs() < 1e-12);
        let r0 = bk / bj;
        let r1 = (ak * ((1.0 - alpha) * bk + alpha)) / (aj * ((1.0 - alpha) * bj + alpha));
        assert!((r1 - r0).abs() < 1e-12);
    }

    #[test]
    fn predictor_rejects_degenerate_and_bad_inputs() {
        assert!(ratio_sign_predictor(0.5, 0.5, 0.4, 0.4, 0.5).is_err());
        assert!(ratio_sign_predictor(0.5, 0.5, 0.4, 0.6, 0.0).is_err());
        assert!(ratio_sign_predictor(0.0, 0.5, 0.4, 0.6, 0.5).is_err());
    }

    #[test]
    fn rk_ratio_cases() {
        let r = rk_ratios(&v(&[0.0, 0.5, 1.0]));
        assert_eq!(r[0], f64::INFINITY);
        assert_eq!(r[1], 2.0);
        assert_eq!(rk_ratios(&v(&[0.3])).len(), 0);

        let k = DMatrix::from_diagonal_element(4, 4, 2.0);
        let s = SpectralState::new(eig_sym(&k).unwrap(), 0.3, 0.5).unwrap().run(5);
        for t in 1..=5 {
            assert!(s.ratios(t).unwrap().iter().all(|&x| x == 1.0));
        }
    }

    #[test]
    fn state_tracks_recursion() {
        let k = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.1, 0.5, 1.0, 0.2, 0.1, 0.2, 0.7]);
        let d = eig_sym(&k).unwrap();
        let s = SpectralState::new(d, 0.35, 0.2).unwrap().run(6);
        assert_eq!(s.steps(), 6);
        assert_eq!(s.b(1).unwrap(), s.a());
        for t in 1..=6 {
            let closed = b_closed(s.a(), 0.35, t as u32).unwrap();
            assert!((closed - s.b(t).unwrap()).amax() < 1e-14);
            let prev = s.b(t - 1).unwrap();
            assert!(s.b(t).unwrap().iter().zip(prev.iter()).all(|(x, y)| x < y));
        }
    }

    #[test]
    fn basis_needs_positive_eigenvalues() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let d = eig_sym(&k).unwrap();
        let kv = v(&[0.5, 0.5]);
        let y = v(&[1.0, 2.0]);
        let b = v(&[0.0, 0.5]);
        assert!(matches!(
            basis_representation(&d, &kv, &y, &b),
            Err(Error::SingularBasis { index: 0, .. })
        ));
        let (val, dropped) = basis_representation_truncated(&d, &kv, &y, &b).unwrap();
        assert_eq!(dropped, vec![0]);
        assert!(val.is_finite());
    }

    #[test]
    fn basis_zero_b_gives_zero() {
        let k = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let d = eig_sym(&k).unwrap();
        let out = basis_representation(&d, &v(&[0.4, 0.1]), &v(&[1.0, -1.0]), &v(&[0.0, 0.0])).unwrap();
        assert_eq!(out, 0.0);
    }
}

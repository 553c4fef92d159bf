//! Loss-constrained self-distillation.
//!
//! Each step minimizes a Hilbert-space regularizer subject to
//! `α/N ‖f − y‖² + (1−α)/N ‖f − y⁽ᵗ⁻¹⁾‖² ≤ ε`. On the training points the
//! solution is `G(G + λ_τ I)⁻¹(α y + (1−α) y⁽ᵗ⁻¹⁾)` where `λ_τ` is the KKT
//! multiplier making the constraint tight, or the zero function when zero
//! already satisfies the constraint. `G` is the (1/N-scaled) Green's matrix
//! and is taken as given.
//!
//! Everything is evaluated in the eigenbasis of `G`, where the constraint
//! value is `floor + (1/N) Σ (λ/(d_i+λ))² t_i²` with `t = Vᵀ(α y + (1−α) y_prev)`
//! and `floor = α(1−α)/N ‖y − y_prev‖²`. It is nondecreasing in `λ`, which is
//! what makes bisection exact.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, invalid, Error, Result};
use crate::linalg::{eig_sym, GramDecomposition};
use crate::spectral::b_step;

pub const MAX_BISECTION_ITERS: usize = 200;
pub const MAX_BRACKET_DOUBLINGS: usize = 2100;
/// Accepted `|constraint − ε|` at the returned multiplier.
pub const CONSTRAINT_TOL: f64 = 1e-10;
/// Distance to a regime boundary that raises the `near_boundary` flag.
pub const BOUNDARY_TOL: f64 = 1e-12;

fn check_interior_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!(
            "constrained distillation needs alpha in (0, 1), got {alpha}"
        )))
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!("epsilon must be positive and finite, got {epsilon}")))
    }
}

#[derive(Debug, Clone)]
pub struct ConstrainedConfig {
    epsilon: f64,
    alpha: f64,
    green: GramDecomposition,
    targets: DVector<f64>,
}

impl ConstrainedConfig {
    pub fn new(green: &DMatrix<f64>, targets: DVector<f64>, alpha: f64, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        check_interior_alpha(alpha)?;
        check_len(green.nrows(), targets.len())?;
        let green = eig_sym(green)?;
        Ok(ConstrainedConfig {
            epsilon,
            alpha,
            green,
            targets,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn green(&self) -> &GramDecomposition {
        &self.green
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn classify(&self) -> Result<RegimeClassification> {
        classify_regime(&self.targets, self.targets.len(), self.epsilon, self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    /// `‖y‖²/N ∈ [0, ε]`: zero from the first step.
    Collapsed,
    /// `‖y‖²/N ∈ (ε, ε/α]`: nonzero for a while, then zero.
    ConvergesToCollapsed,
    /// `‖y‖²/N > ε/α`: nonzero at every step.
    NonCollapsed,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Collapsed => "collapsed",
            Regime::ConvergesToCollapsed => "converges_to_collapsed",
            Regime::NonCollapsed => "non_collapsed",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeClassification {
    pub regime: Regime,
    pub epsilon: f64,
    /// `ε/α`
    pub upper: f64,
    /// `‖y‖²/N`
    pub energy: f64,
    /// Energy within [`BOUNDARY_TOL`] of `ε` or `ε/α`.
    pub near_boundary: bool,
}

pub fn classify_regime(y: &DVector<f64>, n_samples: usize, epsilon: f64, alpha: f64) -> Result<RegimeClassification> {
    check_epsilon(epsilon)?;
    check_interior_alpha(alpha)?;
    if n_samples == 0 {
        return Err(invalid("sample count must be positive"));
    }
    let energy = y.norm_squared() / n_samples as f64;
    let upper = epsilon / alpha;
    let regime = if energy <= epsilon {
        Regime::Collapsed
    } else if energy <= upper {
        Regime::ConvergesToCollapsed
    } else {
        Regime::NonCollapsed
    };
    let near_boundary = (energy - epsilon).abs() <= BOUNDARY_TOL || (energy - upper).abs() <= BOUNDARY_TOL;
    if near_boundary {
        log::warn!("target energy {energy:e} lies within {BOUNDARY_TOL:e} of a regime boundary");
    }
    Ok(RegimeClassification {
        regime,
        epsilon,
        upper,
        energy,
        near_boundary,
    })
}

/// `α/N ‖f − y‖² + (1−α)/N ‖f − y_prev‖²`
pub fn weighted_loss(f: &DVector<f64>, y: &DVector<f64>, y_prev: &DVector<f64>, alpha: f64) -> f64 {
    let n = y.len() as f64;
    (alpha * (f - y).norm_squared() + (1.0 - alpha) * (f - y_prev).norm_squared()) / n
}

/// Smallest value the weighted loss can take over all `f`.
pub fn loss_floor(y: &DVector<f64>, y_prev: &DVector<f64>, alpha: f64) -> f64 {
    alpha * (1.0 - alpha) * (y - y_prev).norm_squared() / y.len() as f64
}

/// `d/(d + λ)` for a multiplier in `[0, ∞]`. `λ = 0` is the `λ → 0⁺`
/// limit, so zero eigenvalues map to 0 there too.
pub fn multiplier_a(values: &DVector<f64>, lambda: f64) -> DVector<f64> {
    values.map(|d| {
        if lambda == f64::INFINITY || d == 0.0 {
            0.0
        } else {
            d / (d + lambda)
        }
    })
}

fn check_step_inputs(green: &GramDecomposition, y: &DVector<f64>, y_prev: &DVector<f64>, alpha: f64) -> Result<()> {
    check_interior_alpha(alpha)?;
    check_len(green.len(), y.len())?;
    check_len(green.len(), y_prev.len())
}

/// Constraint value at `f = G(G + λI)⁻¹(α y + (1−α) y_prev)`.
pub fn constraint_value(
    green: &GramDecomposition,
    y: &DVector<f64>,
    y_prev: &DVector<f64>,
    alpha: f64,
    lambda: f64,
) -> Result<f64> {
    check_step_inputs(green, y, y_prev, alpha)?;
    if !(lambda >= 0.0) {
        return Err(invalid("multiplier must be nonnegative"));
    }
    let t = green.to_eigenbasis(&(y * alpha + y_prev * (1.0 - alpha)));
    Ok(constraint_from_coords(green, &t, loss_floor(y, y_prev, alpha), lambda))
}

fn constraint_from_coords(green: &GramDecomposition, t: &DVector<f64>, floor: f64, lambda: f64) -> f64 {
    let shrink = multiplier_a(green.values(), lambda);
    let gap: f64 = shrink
        .iter()
        .zip(t.iter())
        .map(|(s, ti)| ((1.0 - s) * ti).powi(2))
        .sum();
    floor + gap / t.len() as f64
}

/// Zero satisfies the constraint, so it is the regularizer's minimizer.
pub fn zero_is_feasible(y: &DVector<f64>, y_prev: &DVector<f64>, alpha: f64, epsilon: f64) -> bool {
    weighted_loss(&DVector::zeros(y.len()), y, y_prev, alpha) <= epsilon
}

/// The multiplier `λ_τ` at which the constraint is tight.
///
/// Returns `+∞` when the zero function already satisfies the constraint
/// and `0` when the constraint is tight only at interpolation. Fails when
/// `ε` is below the smallest attainable constraint value.
pub fn solve_multiplier(
    green: &GramDecomposition,
    y: &DVector<f64>,
    y_prev: &DVector<f64>,
    alpha: f64,
    epsilon: f64,
) -> Result<f64> {
    check_step_inputs(green, y, y_prev, alpha)?;
    check_epsilon(epsilon)?;
    if zero_is_feasible(y, y_prev, alpha, epsilon) {
        return Ok(f64::INFINITY);
    }
    let t = green.to_eigenbasis(&(y * alpha + y_prev * (1.0 - alpha)));
    let floor = loss_floor(y, y_prev, alpha);
    let value = |lambda: f64| constraint_from_coords(green, &t, floor, lambda);

    let at_zero = value(0.0);
    if at_zero > epsilon + CONSTRAINT_TOL {
        return Err(Error::ConstraintInfeasible {
            epsilon,
            floor: at_zero,
        });
    }
    if at_zero >= epsilon - CONSTRAINT_TOL {
        return Ok(0.0);
    }

    let mut hi = 1.0_f64;
    let mut doublings = 0;
    while value(hi) < epsilon {
        hi *= 2.0;
        doublings += 1;
        if doublings > MAX_BRACKET_DOUBLINGS || !hi.is_finite() {
            return Err(Error::NoConvergence { iterations: doublings });
        }
    }
    let mut lo = 0.0_f64;
    let mut best = hi;
    for _ in 0..MAX_BISECTION_ITERS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let v = value(mid);
        if (v - epsilon).abs() < (value(best) - epsilon).abs() {
            best = mid;
        }
        if v < epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (value(best) - epsilon).abs() <= CONSTRAINT_TOL {
        Ok(best)
    } else {
        Err(Error::NoConvergence {
            iterations: MAX_BISECTION_ITERS,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedStep {
    pub predictions: DVector<f64>,
    /// `λ_τ`; `+∞` marks the zero solution.
    pub multiplier: f64,
    pub constraint_value: f64,
}

impl ConstrainedStep {
    pub fn is_zero(&self) -> bool {
        self.multiplier == f64::INFINITY
    }
}

pub fn constrained_step(
    green: &GramDecomposition,
    y: &DVector<f64>,
    y_prev: &DVector<f64>,
    alpha: f64,
    epsilon: f64,
) -> Result<ConstrainedStep> {
    let multiplier = solve_multiplier(green, y, y_prev, alpha, epsilon)?;
    let target = y * alpha + y_prev * (1.0 - alpha);
    let predictions = green.apply_filter(&multiplier_a(green.values(), multiplier), &target);
    let constraint_value = weighted_loss(&predictions, y, y_prev, alpha);
    Ok(ConstrainedStep {
        predictions,
        multiplier,
        constraint_value,
    })
}

#[derive(Debug, Clone)]
pub struct ConstrainedChain {
    pub classification: RegimeClassification,
    pub steps: Vec<ConstrainedStep>,
}

impl ConstrainedChain {
    /// Step index (1-based) of the first zero solution.
    pub fn first_zero(&self) -> Option<usize> {
        self.steps.iter().position(ConstrainedStep::is_zero).map(|i| i + 1)
    }

    pub fn multipliers(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.multiplier).collect()
    }
}

pub fn run_constrained_chain(config: &ConstrainedConfig, steps: usize) -> Result<ConstrainedChain> {
    let classification = config.classify()?;
    let mut out = Vec::with_capacity(steps);
    let mut prev = config.targets.clone();
    for _ in 0..steps {
        let step = constrained_step(&config.green, &config.targets, &prev, config.alpha, config.epsilon)?;
        prev = step.predictions.clone();
        out.push(step);
    }
    Ok(ConstrainedChain {
        classification,
        steps: out,
    })
}

/// `A⁽ᵗ⁾ ∘ ((1−α) B⁽ᵗ⁻¹⁾ + α)` with a step-dependent `A⁽ᵗ⁾`.
pub fn generalized_b_step(a_tau: &DVector<f64>, b_prev: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
    b_step(a_tau, b_prev, alpha)
}

/// `B⁽ᵗ⁾` from the whole sequence `A⁽¹⁾ … A⁽ᵗ⁾` without recursion:
/// `α/(1−α) Σ_{i=1}^{τ−1} (1−α)^{τ−i} Π_{j=i}^{τ−1} A⁽ʲ⁺¹⁾ + (1−α)^{τ−1} Π_{j=1}^{τ} A⁽ʲ⁾`.
pub fn generalized_b_closed(a_seq: &[DVector<f64>], alpha: f64) -> Result<DVector<f64>> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(invalid(format!("closed form needs alpha in [0, 1), got {alpha}")));
    }
    let Some(first) = a_seq.first() else {
        return Err(invalid("need at least one shrinkage vector"));
    };
    let n = first.len();
    for a in a_seq {
        check_len(n, a.len())?;
    }
    let tau = a_seq.len();
    // suffix[i] = Π_{j=i}^{τ−1} A⁽ʲ⁺¹⁾ in 0-based storage: a_seq[j] holds A⁽ʲ⁺¹⁾
    let mut total = DVector::zeros(n);
    let mut suffix = DVector::from_element(n, 1.0);
    for i in (1..tau).rev() {
        suffix.component_mul_assign(&a_seq[i]);
        let weight = alpha / (1.0 - alpha) * (1.0 - alpha).powi((tau - i) as i32);
        total += &suffix * weight;
    }
    let full = suffix.component_mul(&a_seq[0]);
    total += full * (1.0 - alpha).powi(tau as i32 - 1);
    Ok(total)
}

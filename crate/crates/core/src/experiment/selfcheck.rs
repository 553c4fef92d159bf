//! Invariant checks on seeded random instances, run by `selfdistill selfcheck`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::constrained::{classify_regime, constraint_value, solve_multiplier, zero_is_feasible};
use crate::distill::{convergence_rate_bound, direct_predictions, limit_predictions, run_chain, DistillConfig};
use crate::error::Result;
use crate::linalg::{eig_sym, gram_matrix, GramDecomposition, KernelSpec};
use crate::spectral::{b_closed, b_step, ratio_predictor_bracket, ratio_sign_predictor, sgn, SpectralState};

/// A Gram matrix of `n` random points in `[-1, 1]³` under a randomly chosen
/// kernel, and standard normal targets.
pub fn random_instance(rng: &mut impl Rng, n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let x = DMatrix::from_fn(n, 3, |_, _| rng.random_range(-1.0..1.0));
    let kernel = match rng.random_range(0..3) {
        0 => KernelSpec::Rbf {
            gamma: rng.random_range(0.2..3.0),
        },
        1 => KernelSpec::Linear,
        _ => KernelSpec::Polynomial {
            degree: rng.random_range(2..4),
            offset: rng.random_range(0.0..1.0),
        },
    };
    let k = gram_matrix(&kernel, &x).expect("finite random inputs");
    let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    (k, y)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub detail: String,
}

fn outcome(name: &'static str, worst: f64, limit: f64) -> CheckOutcome {
    CheckOutcome {
        name,
        passed: worst <= limit,
        detail: format!("worst {worst:.3e} (limit {limit:.0e})"),
    }
}

fn rel_diff(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

fn direct_matches_chain(rng: &mut ChaCha8Rng, instances: usize) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let n = rng.random_range(2..20);
        let (k, y) = random_instance(rng, n);
        let decomp = eig_sym(&k)?;
        let lambda = rng.random_range(0.01..2.0);
        let alpha = rng.random_range(0.0..0.95);
        let chain = run_chain(&k, &y, DistillConfig::new(alpha, lambda, 10)?)?;
        for tau in 1..=10 {
            let d = direct_predictions(&decomp, &y, alpha, lambda, tau as u32)?;
            worst = worst.max(rel_diff(&d, &chain.predictions()[tau]));
        }
    }
    Ok(outcome("direct closed form matches iterated chain", worst, 1e-8))
}

fn b_monotone(rng: &mut ChaCha8Rng, instances: usize) -> Result<CheckOutcome> {
    let mut violations = 0usize;
    for _ in 0..instances {
        let n = rng.random_range(2..20);
        let a = DVector::from_fn(n, |_, _| rng.random_range(1e-3..0.999));
        let alpha = rng.random_range(0.0..0.95);
        let mut b = DVector::from_element(n, 1.0);
        for _ in 0..30 {
            let next = b_step(&a, &b, alpha)?;
            violations += next
                .iter()
                .zip(b.iter())
                .filter(|(x, y)| !(**x < **y + 1e-14 && **x >= 0.0))
                .count();
            b = next;
        }
    }
    Ok(outcome("B entries decrease and stay in [0, 1]", violations as f64, 0.0))
}

fn sign_predictor(rng: &mut ChaCha8Rng, tuples: usize) -> Result<CheckOutcome> {
    let mut mismatches = 0usize;
    for _ in 0..tuples {
        let a_k: f64 = rng.random_range(0.01..0.99);
        let a_j: f64 = rng.random_range(0.01..0.99);
        if (a_k - a_j).abs() < 1e-6 {
            continue;
        }
        let alpha = rng.random_range(0.01..0.99);
        let tau = rng.random_range(1..20);
        let a = DVector::from_vec(vec![a_k, a_j]);
        let prev = if tau == 1 {
            DVector::from_element(2, 1.0)
        } else {
            b_closed(&a, alpha, tau - 1)?
        };
        let next = b_step(&a, &prev, alpha)?;
        let change = next[0] / next[1] - prev[0] / prev[1];
        // the predictor orders the pair so that A_k > A_j
        let bracket = if a_k > a_j {
            ratio_predictor_bracket(prev[0], prev[1], a_k, a_j)
        } else {
            ratio_predictor_bracket(prev[1], prev[0], a_j, a_k)
        };
        let predicted = ratio_sign_predictor(prev[0], prev[1], a_k, a_j, alpha)?;
        let near_fixed_point = (1.0 / bracket - alpha).abs() <= 1e-9;
        let scale = (prev[0] / prev[1]).abs().max(1.0);
        let ok = predicted == sgn(change) || (near_fixed_point && change.abs() <= 1e-9 * scale);
        mismatches += usize::from(!ok);
    }
    Ok(outcome(
        "ratio sign predictor agrees with computed change",
        mismatches as f64,
        0.0,
    ))
}

fn limit_and_rate(rng: &mut ChaCha8Rng, instances: usize) -> Result<CheckOutcome> {
    let (mut gap, mut excess) = (0.0_f64, f64::NEG_INFINITY);
    for _ in 0..instances {
        let n = rng.random_range(2..15);
        let (k, y) = random_instance(rng, n);
        let lambda = rng.random_range(0.05..2.0);
        let alpha = [0.25, 0.5, 0.9][rng.random_range(0..3)];
        let chain = run_chain(&k, &y, DistillConfig::new(alpha, lambda, 500)?)?;
        let limit = limit_predictions(&k, &y, alpha, lambda)?;
        gap = gap.max((&chain.predictions()[500] - &limit).amax());
        let rho = convergence_rate_bound(eig_sym(&k)?.values(), alpha, lambda)?;
        // below this the error is dominated by roundoff, not the recursion
        let floor = 1e-4 * y.norm();
        for w in chain.predictions().windows(2) {
            let (e0, e1) = ((&w[0] - &limit).norm(), (&w[1] - &limit).norm());
            if e0 > floor {
                excess = excess.max(e1 / e0 - rho);
            }
        }
    }
    Ok(CheckOutcome {
        name: "chain reaches amplified-regularization limit within rate",
        passed: gap <= 1e-6 && excess <= 1e-10,
        detail: format!("limit gap {gap:.3e} (limit 1e-6), rate excess {excess:.3e} (limit 1e-10)"),
    })
}

fn zero_collapse(rng: &mut ChaCha8Rng, instances: usize) -> Result<CheckOutcome> {
    let mut worst = f64::NEG_INFINITY;
    for _ in 0..instances {
        let n = rng.random_range(2..15);
        let (k, y) = random_instance(rng, n);
        let lambda = rng.random_range(0.05..2.0);
        let d_max = eig_sym(&k)?.max_eigenvalue();
        let chain = run_chain(&k, &y, DistillConfig::new(0.0, lambda, 100)?)?;
        let factor = d_max / (d_max + lambda);
        for (tau, p) in chain.predictions().iter().enumerate() {
            let bound = factor.powi(tau as i32) * y.norm();
            worst = worst.max(p.norm() - bound - 1e-12 * y.norm());
        }
    }
    Ok(outcome(
        "alpha = 0 norms stay under the geometric bound",
        worst.max(0.0),
        0.0,
    ))
}

fn spectral_reconstruction(rng: &mut ChaCha8Rng, instances: usize) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let n = rng.random_range(2..15);
        let (k, y) = random_instance(rng, n);
        let decomp: GramDecomposition = eig_sym(&k)?;
        let lambda = rng.random_range(0.05..2.0);
        let alpha = rng.random_range(0.0..0.95);
        let state = SpectralState::new(decomp.clone(), alpha, lambda)?.run(20);
        for tau in 1..=20 {
            let r = state.reconstruct_predictions(tau, &y)?;
            let d = direct_predictions(&decomp, &y, alpha, lambda, tau as u32)?;
            worst = worst.max((r - d).amax());
        }
    }
    Ok(outcome("V diag(B) Vᵀ y matches closed form", worst, 1e-9))
}

fn multiplier_residual(rng: &mut ChaCha8Rng, instances: usize) -> Result<CheckOutcome> {
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let n = rng.random_range(2..10);
        let (k, y) = random_instance(rng, n);
        let green = eig_sym(&(k / n as f64))?;
        let alpha = rng.random_range(0.05..0.95);
        let energy = y.norm_squared() / n as f64;
        let epsilon = energy * rng.random_range(0.05..0.95);
        classify_regime(&y, n, epsilon, alpha)?;
        // a rank-deficient G may not reach epsilon even at lambda = 0
        if zero_is_feasible(&y, &y, alpha, epsilon) || constraint_value(&green, &y, &y, alpha, 0.0)? > epsilon {
            continue;
        }
        let lambda = solve_multiplier(&green, &y, &y, alpha, epsilon)?;
        let value = constraint_value(&green, &y, &y, alpha, lambda)?;
        worst = worst.max((value - epsilon).abs());
    }
    Ok(outcome(
        "constraint value at the multiplier equals epsilon",
        worst,
        1e-8,
    ))
}

/// Runs every check with `instances` random cases each (the sign predictor
/// gets a hundred times more tuples).
pub fn run_selfcheck(seed: u64, instances: usize) -> Result<Vec<CheckOutcome>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(vec![
        direct_matches_chain(&mut rng, instances)?,
        b_monotone(&mut rng, instances)?,
        sign_predictor(&mut rng, 100 * instances)?,
        limit_and_rate(&mut rng, instances)?,
        zero_collapse(&mut rng, instances)?,
        spectral_reconstruction(&mut rng, instances)?,
        multiplier_residual(&mut rng, instances)?,
    ])
}

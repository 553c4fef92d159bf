//! Kernels, Gram matrices, symmetric eigendecomposition and regularized
//! SPD solves.
//!
//! Everything downstream works on a Gram matrix `K` and either a Cholesky
//! factor of `K + λI` (iterative chains) or the eigendecomposition
//! `K = V diag(D) Vᵀ` (closed forms and spectral diagnostics).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, invalid, Error, Result};

/// Positive-definite kernel family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `exp(-γ‖a − b‖²)`
    Rbf { gamma: f64 },
    /// `aᵀb`
    Linear,
    /// `(aᵀb + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<Self> {
        let spec = KernelSpec::Rbf { gamma };
        spec.validate()?;
        Ok(spec)
    }

    pub fn polynomial(degree: u32, offset: f64) -> Result<Self> {
        let spec = KernelSpec::Polynomial { degree, offset };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { gamma } if !(gamma > 0.0 && gamma.is_finite()) => {
                Err(invalid(format!("RBF gamma must be positive and finite, got {gamma}")))
            }
            KernelSpec::Polynomial { degree: 0, .. } => Err(invalid("polynomial degree must be at least 1")),
            KernelSpec::Polynomial { offset, .. } if !(offset >= 0.0 && offset.is_finite()) => {
                Err(invalid(format!("polynomial offset must be nonnegative, got {offset}")))
            }
            _ => Ok(()),
        }
    }

    #[inline]
    fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Rbf { gamma } => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * sq).exp()
            }
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Polynomial { degree, offset } => (dot(a, b) + offset).powi(degree as i32),
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn all_finite<'a>(mut it: impl Iterator<Item = &'a f64>) -> bool {
    it.all(|v| v.is_finite())
}

/// Training inputs (one row per sample) and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    targets: DVector<f64>,
}

impl Dataset {
    pub fn new(inputs: DMatrix<f64>, targets: DVector<f64>) -> Result<Self> {
        if inputs.nrows() == 0 || inputs.ncols() == 0 {
            return Err(invalid("dataset needs at least one sample and one feature"));
        }
        check_len(inputs.nrows(), targets.len())?;
        if !all_finite(inputs.iter()) || !all_finite(targets.iter()) {
            return Err(invalid("dataset contains non-finite values"));
        }
        Ok(Dataset { inputs, targets })
    }

    /// One-dimensional inputs.
    pub fn from_columns(x: &[f64], y: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(x.len(), 1, x), DVector::from_column_slice(y))
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.inputs.row(i).iter().copied().collect()
    }
}

pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if !all_finite(a.iter()) || !all_finite(b.iter()) {
        return Err(invalid("kernel arguments must be finite"));
    }
    Ok(spec.eval_unchecked(a, b))
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect()
}

/// `[K]_ij = κ(x_i, x_j)`. Only the upper triangle is evaluated; the lower
/// one is mirrored so the result is bit-for-bit symmetric.
pub fn gram_matrix(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if !all_finite(x.iter()) {
        return Err(invalid("inputs must be finite"));
    }
    let rows = rows(x);
    let n = rows.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = spec.eval_unchecked(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// `κ(x, X)`: entry `i` is `κ(x, x_i)`.
pub fn kernel_vector(spec: &KernelSpec, x: &[f64], inputs: &DMatrix<f64>) -> Result<DVector<f64>> {
    spec.validate()?;
    check_len(inputs.ncols(), x.len())?;
    if !all_finite(x.iter()) {
        return Err(invalid("query point must be finite"));
    }
    let rows = rows(inputs);
    Ok(DVector::from_iterator(
        rows.len(),
        rows.iter().map(|r| spec.eval_unchecked(x, r)),
    ))
}

/// Cross-kernel matrix with one row per query point.
pub fn cross_kernel(spec: &KernelSpec, queries: &DMatrix<f64>, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_len(inputs.ncols(), queries.ncols())?;
    let q = rows(queries);
    let x = rows(inputs);
    Ok(DMatrix::from_fn(q.len(), x.len(), |i, j| {
        spec.eval_unchecked(&q[i], &x[j])
    }))
}

/// Symmetric PSD matrix together with its eigendecomposition
/// `K = V diag(D) Vᵀ`, eigenvalues ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct GramDecomposition {
    gram: DMatrix<f64>,
    vectors: DMatrix<f64>,
    values: DVector<f64>,
}

impl GramDecomposition {
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Eigenvectors as columns, in the order of [`Self::values`].
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// `Vᵀ v`
    pub fn to_eigenbasis(&self, v: &DVector<f64>) -> DVector<f64> {
        self.vectors.tr_mul(v)
    }

    /// `V c`
    pub fn from_eigenbasis(&self, coords: &DVector<f64>) -> DVector<f64> {
        &self.vectors * coords
    }

    /// `V diag(filter) Vᵀ v`
    pub fn apply_filter(&self, filter: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let coords = self.to_eigenbasis(v).component_mul(filter);
        self.from_eigenbasis(&coords)
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.len(), self.len(), |i, j| self.vectors[(i, j)] * self.values[j]);
        scaled * self.vectors.transpose()
    }
}

pub const SYMMETRY_TOL: f64 = 1e-12;
pub const CLAMP_REL_TOL: f64 = 1e-10;

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

pub fn check_symmetric(k: &DMatrix<f64>) -> Result<()> {
    if !k.is_square() {
        return Err(Error::DimensionMismatch {
            expected: k.nrows(),
            found: k.ncols(),
        });
    }
    let tol = SYMMETRY_TOL * max_abs(k).max(1.0);
    let n = k.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let gap = (k[(i, j)] - k[(j, i)]).abs();
            if !(gap <= tol) {
                return Err(Error::NotSymmetric { row: i, col: j, gap });
            }
        }
    }
    Ok(())
}

/// Eigendecomposition of a symmetric PSD matrix.
///
/// Eigenvalues come back ascending. Each eigenvector is signed so that its
/// largest-magnitude entry is positive (first such entry on ties). Negative
/// eigenvalues down to `-1e-10 · max(D)` are roundoff and clamped to zero;
/// anything more negative is rejected.
pub fn eig_sym(k: &DMatrix<f64>) -> Result<GramDecomposition> {
    check_symmetric(k)?;
    if !all_finite(k.iter()) {
        return Err(invalid("matrix contains non-finite values"));
    }
    let n = k.nrows();
    let sym = (k + k.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let top = eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(*v));
    let clamp = CLAMP_REL_TOL * top;

    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut value = eig.eigenvalues[src];
        if value < 0.0 {
            if value >= -clamp {
                value = 0.0;
            } else {
                return Err(Error::NotPositiveSemidefinite { index: dst, value });
            }
        }
        values[dst] = value;

        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for i in 1..n {
            if col[i].abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            vectors[(i, dst)] = sign * col[i];
        }
    }

    Ok(GramDecomposition {
        gram: k.clone(),
        vectors,
        values,
    })
}

/// Lower Cholesky factor of `K + λI`, built once and reused for every solve
/// against the same Gram matrix and regularization.
#[derive(Debug, Clone)]
pub struct RegularizedCholesky {
    lower: DMatrix<f64>,
    lambda: f64,
}

impl RegularizedCholesky {
    pub fn new(k: &DMatrix<f64>, lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(invalid(format!("regularization must be positive, got {lambda}")));
        }
        if !k.is_square() {
            return Err(Error::DimensionMismatch {
                expected: k.nrows(),
                found: k.ncols(),
            });
        }
        let n = k.nrows();
        let mut l = DMatrix::<f64>::zeros(n, n);
        for j in 0..n {
            let mut diag = k[(j, j)] + lambda;
            for p in 0..j {
                diag -= l[(j, p)] * l[(j, p)];
            }
            if !(diag > 0.0) {
                return Err(Error::NotPositiveDefinite { pivot: j, value: diag });
            }
            let ljj = diag.sqrt();
            l[(j, j)] = ljj;
            for i in (j + 1)..n {
                let mut s = k[(i, j)];
                for p in 0..j {
                    s -= l[(i, p)] * l[(j, p)];
                }
                l[(i, j)] = s / ljj;
            }
        }
        Ok(RegularizedCholesky { lower: l, lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.lower.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.nrows() == 0
    }

    /// `(K + λI)⁻¹ b`
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>> {
        check_len(self.len(), b.len())?;
        let n = self.len();
        let l = &self.lower;
        let mut x = b.clone();
        for i in 0..n {
            let mut s = x[i];
            for p in 0..i {
                s -= l[(i, p)] * x[p];
            }
            x[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for p in (i + 1)..n {
                s -= l[(p, i)] * x[p];
            }
            x[i] = s / l[(i, i)];
        }
        Ok(x)
    }

    /// Column-wise `(K + λI)⁻¹ B`.
    pub fn solve_matrix(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_len(self.len(), b.nrows())?;
        let mut out = DMatrix::zeros(b.nrows(), b.ncols());
        for (j, col) in b.column_iter().enumerate() {
            out.set_column(j, &self.solve(&col.into_owned())?);
        }
        Ok(out)
    }
}

/// `(K + λI)⁻¹ b` through a Cholesky factorization.
pub fn solve_regularized(k: &DMatrix<f64>, lambda: f64, b: &DVector<f64>) -> Result<DVector<f64>> {
    RegularizedCholesky::new(k, lambda)?.solve(b)
}

pub fn solve_regularized_matrix(k: &DMatrix<f64>, lambda: f64, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    RegularizedCholesky::new(k, lambda)?.solve_matrix(b)
}

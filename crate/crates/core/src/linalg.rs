//! Dense linear-algebra substrate shared by every method.
//!
//! Matrices are `nalgebra::DMatrix<f64>` wrapped in newtypes that carry the
//! invariants the methods rely on: finite sample matrices, symmetric
//! covariances and orthonormal loading frames. Eigenvectors and singular
//! vectors follow one sign convention everywhere: the entry of largest
//! magnitude is positive, ties going to the lowest index.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CdrError, Result};

const EIGEN_EPS: f64 = 1e-15;
const EIGEN_MAX_ITER: usize = 10_000;

/// Rows are samples, columns are features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix(DMatrix<f64>);

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(CdrError::InvalidData(format!(
                "need at least 2 samples, got {}",
                values.nrows()
            )));
        }
        if values.ncols() < 1 {
            return Err(CdrError::InvalidData("need at least 1 feature".into()));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % values.nrows(), pos / values.nrows());
            return Err(CdrError::InvalidData(format!(
                "non-finite entry at row {r}, column {c}"
            )));
        }
        Ok(Self(values))
    }

    pub fn from_row_slice(n: usize, p: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * p {
            return Err(CdrError::InvalidArgument(format!(
                "expected {} values for a {n}x{p} matrix, got {}",
                n * p,
                data.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(n, p, data))
    }

    /// Number of samples.
    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    /// Number of features.
    pub fn p(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Rows selected by index, in the given order (duplicates allowed).
    pub fn select_rows(&self, idx: &[usize]) -> DMatrix<f64> {
        self.0.select_rows(idx)
    }
}

/// Real symmetric matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    /// Validates symmetry to 1e-10 relative to the largest entry.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if !values.is_square() {
            return Err(CdrError::InvalidArgument(format!(
                "symmetric matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CdrError::InvalidData("non-finite entry in symmetric matrix".into()));
        }
        let scale = values.amax().max(f64::MIN_POSITIVE);
        let asym = (&values - values.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(CdrError::InvalidArgument(format!(
                "matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        Ok(Self::symmetrize(values))
    }

    /// Averages `m` with its transpose. Use for matrices that are
    /// symmetric up to rounding by construction.
    pub fn symmetrize(m: DMatrix<f64>) -> Self {
        let t = m.transpose();
        Self((m + t) * 0.5)
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn identity(p: usize) -> Self {
        Self(DMatrix::identity(p, p))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// `self - gamma * other`.
    pub fn contrast(&self, other: &SymMatrix, gamma: f64) -> Result<SymMatrix> {
        if self.dim() != other.dim() {
            return Err(CdrError::InvalidArgument(format!(
                "dimension mismatch: {} vs {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(Self::symmetrize(&self.0 - &other.0 * gamma))
    }
}

/// A p x d matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StiefelPoint(DMatrix<f64>);

impl StiefelPoint {
    pub const TOLERANCE: f64 = 1e-8;

    pub fn new(v: DMatrix<f64>) -> Result<Self> {
        if v.ncols() > v.nrows() {
            return Err(CdrError::InvalidArgument(format!(
                "Stiefel point needs d <= p, got {}x{}",
                v.nrows(),
                v.ncols()
            )));
        }
        let defect = orthonormality_defect(&v);
        if !(defect <= Self::TOLERANCE) {
            return Err(CdrError::InvalidArgument(format!(
                "columns are not orthonormal (defect {defect:e})"
            )));
        }
        Ok(Self(v))
    }

    /// The first `d` standard basis vectors of R^p.
    pub fn canonical(p: usize, d: usize) -> Self {
        assert!(d <= p);
        Self(DMatrix::identity(p, d))
    }

    pub(crate) fn new_unchecked(v: DMatrix<f64>) -> Self {
        Self(v)
    }

    /// Ambient dimension.
    pub fn p(&self) -> usize {
        self.0.nrows()
    }

    /// Number of columns.
    pub fn d(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// The first `k` columns.
    pub fn leading(&self, k: usize) -> StiefelPoint {
        Self(self.0.columns(0, k).into_owned())
    }

    /// Orthogonal projector `V Vᵀ` onto the column span.
    pub fn projector(&self) -> DMatrix<f64> {
        &self.0 * self.0.transpose()
    }
}

/// `max |VᵀV - I|`.
pub fn orthonormality_defect(v: &DMatrix<f64>) -> f64 {
    let g = v.transpose() * v;
    (g - DMatrix::identity(v.ncols(), v.ncols())).amax()
}

/// Spectrum sorted non-increasing with eigenvectors in matching columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: StiefelPoint,
}

impl EigenPairs {
    /// Leading `k` eigenvectors.
    pub fn top(&self, k: usize) -> StiefelPoint {
        self.eigenvectors.leading(k)
    }
}

/// Subtracts column means. Returns the centered matrix and the means.
pub fn center_columns(m: &DataMatrix) -> Result<(DataMatrix, DVector<f64>)> {
    let mut x = m.as_matrix().clone();
    let n = x.nrows() as f64;
    let mut means = DVector::zeros(x.ncols());
    for (j, mut col) in x.column_iter_mut().enumerate() {
        // two passes: the second removes the rounding residue of the first
        let mu = col.sum() / n;
        col.add_scalar_mut(-mu);
        let residue = col.sum() / n;
        col.add_scalar_mut(-residue);
        means[j] = mu + residue;
    }
    Ok((DataMatrix::new(x)?, means))
}

/// Sample covariance `MᵀM / n` of an already-centered matrix.
pub fn covariance(m: &DataMatrix) -> SymMatrix {
    let x = m.as_matrix();
    SymMatrix::symmetrize(x.tr_mul(x) / x.nrows() as f64)
}

/// Unnormalized scatter `MᵀM`.
pub fn scatter(m: &DMatrix<f64>) -> SymMatrix {
    SymMatrix::symmetrize(m.tr_mul(m))
}

/// Flips `v` so its largest-magnitude entry is positive (lowest index on ties).
/// Returns the sign that was applied.
pub(crate) fn fix_sign(mut v: nalgebra::DVectorViewMut<'_, f64>) -> f64 {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if v.len() > 0 && v[best] < 0.0 {
        v.neg_mut();
        -1.0
    } else {
        1.0
    }
}

/// Full symmetric eigendecomposition, eigenvalues descending.
pub fn sym_eigh(s: &SymMatrix) -> Result<EigenPairs> {
    let p = s.dim();
    if p == 0 {
        return Ok(EigenPairs {
            eigenvalues: DVector::zeros(0),
            eigenvectors: StiefelPoint::new_unchecked(DMatrix::zeros(0, 0)),
        });
    }
    let eig = SymmetricEigen::try_new(s.as_matrix().clone(), EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| {
            CdrError::NumericalFailure("symmetric eigensolver did not converge".into())
        })?;
    let mut order: Vec<usize> = (0..p).collect();
    // stable sort keeps original index order for exact ties
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = eig.eigenvectors.select_columns(&order);
    for j in 0..p {
        fix_sign(vectors.column_mut(j));
    }
    Ok(EigenPairs {
        eigenvalues: values,
        eigenvectors: StiefelPoint::new_unchecked(vectors),
    })
}

/// Rank-k truncated singular value decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSvd {
    pub left: StiefelPoint,
    pub singular_values: DVector<f64>,
    pub right: StiefelPoint,
}

/// Leading `k` singular triplets of `m`, singular values descending.
/// Right singular vectors follow the eigenvector sign convention; the left
/// vectors are flipped to match.
pub fn thin_svd(m: &DMatrix<f64>, k: usize) -> Result<ThinSvd> {
    let r = m.nrows().min(m.ncols());
    if k == 0 || k > r {
        return Err(CdrError::InvalidArgument(format!(
            "rank k = {k} must lie in 1..={r}"
        )));
    }
    let svd = SVD::try_new(m.clone(), true, true, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| CdrError::NumericalFailure("SVD did not converge".into()))?;
    let u = svd.u.expect("left vectors requested");
    let vt = svd.v_t.expect("right vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    order.truncate(k);
    let singular_values = DVector::from_iterator(k, order.iter().map(|&i| svd.singular_values[i]));
    let mut left = u.select_columns(&order);
    let mut right = vt.transpose().select_columns(&order);
    for j in 0..k {
        let sign = fix_sign(right.column_mut(j));
        if sign < 0.0 {
            left.column_mut(j).neg_mut();
        }
    }
    Ok(ThinSvd {
        left: StiefelPoint::new_unchecked(left),
        singular_values,
        right: StiefelPoint::new_unchecked(right),
    })
}

/// Cosines (singular values of `V1ᵀV2`, descending) and principal angles
/// (ascending) between two subspaces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalAngles {
    pub cosines: Vec<f64>,
    pub angles: Vec<f64>,
}

impl PrincipalAngles {
    /// Largest principal angle; 0 when either subspace is empty.
    pub fn max_angle(&self) -> f64 {
        self.angles.iter().copied().fold(0.0, f64::max)
    }

    /// Smallest cosine; 1 when either subspace is empty.
    pub fn min_cosine(&self) -> f64 {
        self.cosines.iter().copied().fold(1.0, f64::min)
    }
}

pub fn principal_angles(v1: &StiefelPoint, v2: &StiefelPoint) -> Result<PrincipalAngles> {
    if v1.p() != v2.p() {
        return Err(CdrError::InvalidArgument(format!(
            "ambient dimensions differ: {} vs {}",
            v1.p(),
            v2.p()
        )));
    }
    let k = v1.d().min(v2.d());
    if k == 0 {
        return Ok(PrincipalAngles {
            cosines: vec![],
            angles: vec![],
        });
    }
    let prod = v1.as_matrix().tr_mul(v2.as_matrix());
    let mut s: Vec<f64> = SVD::try_new(prod, false, false, EIGEN_EPS, EIGEN_MAX_ITER)
        .ok_or_else(|| CdrError::NumericalFailure("SVD did not converge".into()))?
        .singular_values
        .iter()
        .map(|x| x.clamp(0.0, 1.0))
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let angles = s.iter().map(|c| c.acos()).collect();
    Ok(PrincipalAngles { cosines: s, angles })
}

/// Default ridge for [`sym_inv_sqrt`]: `1e-10 * trace(S) / p`.
pub fn default_ridge(s: &SymMatrix) -> f64 {
    if s.dim() == 0 {
        return 0.0;
    }
    (1e-10 * s.trace() / s.dim() as f64).max(0.0)
}

/// `(S + ridge I)^{-1/2}` through the eigendecomposition.
pub fn sym_inv_sqrt(s: &SymMatrix, ridge: f64) -> Result<SymMatrix> {
    if !(ridge >= 0.0) {
        return Err(CdrError::InvalidArgument(format!("ridge must be >= 0, got {ridge}")));
    }
    let eig = sym_eigh(s)?;
    let p = s.dim();
    let smallest = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if p > 0 && smallest + ridge <= 0.0 {
        return Err(CdrError::SingularMatrix(format!(
            "smallest eigenvalue {smallest:e} plus ridge {ridge:e} is not positive"
        )));
    }
    let scale = DVector::from_iterator(p, eig.eigenvalues.iter().map(|l| 1.0 / (l + ridge).sqrt()));
    Ok(spectral_compose(&eig, &scale))
}

/// `V diag(f) Vᵀ` for the eigenvectors of `eig`.
pub(crate) fn spectral_compose(eig: &EigenPairs, f: &DVector<f64>) -> SymMatrix {
    let v = eig.eigenvectors.as_matrix();
    let mut scaled = v.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= f[j];
    }
    SymMatrix::symmetrize(scaled * v.transpose())
}

/// QR retraction: the Q factor of a thin QR of `a`, with the diagonal of R
/// made positive.
pub fn stiefel_qr_retract(a: &DMatrix<f64>) -> Result<StiefelPoint> {
    let (p, d) = a.shape();
    if d > p {
        return Err(CdrError::RankDeficient(format!("{p}x{d} matrix cannot have rank {d}")));
    }
    if d == 0 {
        return Ok(StiefelPoint::new_unchecked(DMatrix::zeros(p, 0)));
    }
    let scale = a.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let qr = a.clone().qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        let rjj = r[(j, j)];
        if !(rjj.abs() > 1e-12 * scale) {
            return Err(CdrError::RankDeficient(format!(
                "column {j} is linearly dependent on the preceding columns"
            )));
        }
        if rjj < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(StiefelPoint::new_unchecked(q))
}

/// Uniformly distributed point on St(p, d): QR of a Gaussian matrix.
pub fn random_stiefel<R: Rng + ?Sized>(p: usize, d: usize, rng: &mut R) -> StiefelPoint {
    loop {
        let g = DMatrix::from_fn(p, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        if let Ok(q) = stiefel_qr_retract(&g) {
            return q;
        }
    }
}

/// `Mᵀ` columns selected, i.e. `M[:, idx]`.
pub fn select_columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    m.select_columns(idx)
}

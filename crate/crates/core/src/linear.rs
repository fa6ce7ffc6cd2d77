//! Matrix-decomposition methods: contrastive PCA, the three generalized
//! contrastive PCA variants, and contrastive CUR column/row selection.
//!
//! All fitting functions expect foreground `X` and background `Y` already
//! centered, each with respect to its own mean.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, Provenance};
use crate::error::{CdrError, Result};
use crate::linalg::{
    covariance, default_ridge, stiefel_qr_retract, sym_eigh, sym_inv_sqrt, thin_svd, DataMatrix,
    StiefelPoint, SymMatrix,
};

pub(crate) fn check_same_p(x: usize, y: usize) -> Result<()> {
    if x != y {
        return Err(CdrError::InvalidArgument(format!(
            "foreground has {x} features, background has {y}"
        )));
    }
    Ok(())
}

pub(crate) fn check_dim(d: usize, p: usize) -> Result<()> {
    if d == 0 || d > p {
        return Err(CdrError::InvalidArgument(format!("d = {d} must lie in 1..={p}")));
    }
    Ok(())
}

/// Contrastive PCA fit: top eigenvectors of `C_X - gamma C_Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpcaModel {
    pub gamma: f64,
    pub d: usize,
    pub loadings: StiefelPoint,
    /// Full spectrum of the contrastive covariance, descending.
    pub contrastive_eigenvalues: DVector<f64>,
}

impl CpcaModel {
    /// `tr(VᵀCV)`: the sum of the leading `d` contrastive eigenvalues.
    pub fn objective(&self) -> f64 {
        self.contrastive_eigenvalues.rows(0, self.d).sum()
    }
}

pub fn cpca_fit(x: &DataMatrix, y: &DataMatrix, gamma: f64, d: usize) -> Result<CpcaModel> {
    check_same_p(x.p(), y.p())?;
    cpca_fit_cov(&covariance(x), &covariance(y), gamma, d)
}

pub fn cpca_fit_cov(cx: &SymMatrix, cy: &SymMatrix, gamma: f64, d: usize) -> Result<CpcaModel> {
    check_same_p(cx.dim(), cy.dim())?;
    check_dim(d, cx.dim())?;
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(CdrError::InvalidArgument(format!("gamma must be finite and >= 0, got {gamma}")));
    }
    let c = cx.contrast(cy, gamma)?;
    let eig = sym_eigh(&c)?;
    Ok(CpcaModel {
        gamma,
        d,
        loadings: eig.top(d),
        contrastive_eigenvalues: eig.eigenvalues,
    })
}

/// Projects rows of `m` (centered with the training means) onto the loadings.
pub fn cpca_transform(model: &CpcaModel, m: &DMatrix<f64>) -> Result<Embedding> {
    let values = project(&model.loadings, m)?;
    Ok(Embedding {
        values,
        provenance: Provenance::new("cpca").with("gamma", model.gamma),
    })
}

pub(crate) fn project(v: &StiefelPoint, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.ncols() != v.p() {
        return Err(CdrError::InvalidArgument(format!(
            "input has {} columns, model expects {}",
            m.ncols(),
            v.p()
        )));
    }
    Ok(m * v.as_matrix())
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => vec![],
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..count)
                .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
                .collect()
        }
    }
}

/// Default CPCA sweep: 15 log-spaced contrast strengths in [0.1, 1000].
pub fn default_gamma_grid() -> Vec<f64> {
    log_grid(0.1, 1000.0, 15)
}

/// Fits CPCA at every gamma of the grid. Selecting among them is left to
/// the caller.
pub fn cpca_gamma_sweep(
    x: &DataMatrix,
    y: &DataMatrix,
    d: usize,
    gammas: &[f64],
) -> Result<Vec<CpcaModel>> {
    check_same_p(x.p(), y.p())?;
    let (cx, cy) = (covariance(x), covariance(y));
    gammas.iter().map(|&g| cpca_fit_cov(&cx, &cy, g, d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GcpcaVariant {
    /// `tr(Vᵀ(C_X - C_Y)V) / tr(Vᵀ(C_X + C_Y)V)`
    V1,
    /// `tr(VᵀC_XV) / tr(VᵀC_YV)`
    V2,
    /// `tr(Vᵀ(C_X - C_Y)V) / tr(VᵀC_YV)`
    V3,
}

impl std::fmt::Display for GcpcaVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::V1 => "v1",
            Self::V2 => "v2",
            Self::V3 => "v3",
        })
    }
}

impl std::str::FromStr for GcpcaVariant {
    type Err = CdrError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" => Ok(Self::V1),
            "v2" => Ok(Self::V2),
            "v3" => Ok(Self::V3),
            other => Err(CdrError::InvalidArgument(format!("unknown GCPCA variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcpcaModel {
    pub variant: GcpcaVariant,
    pub d: usize,
    pub loadings: StiefelPoint,
    /// The variant's trace functional evaluated at `loadings`.
    pub objective_value: f64,
    /// Spectrum of the whitened problem. For v2 these are the generalized
    /// eigenvalues of `C_X v = λ C_Y v`; v3 reports them shifted by -1.
    pub eigenvalues: DVector<f64>,
}

/// The trace functional each variant maximizes.
pub fn gcpca_objective(variant: GcpcaVariant, cx: &SymMatrix, cy: &SymMatrix, v: &DMatrix<f64>) -> f64 {
    let tx = (v.transpose() * cx.as_matrix() * v).trace();
    let ty = (v.transpose() * cy.as_matrix() * v).trace();
    match variant {
        GcpcaVariant::V1 => (tx - ty) / (tx + ty),
        GcpcaVariant::V2 => tx / ty,
        GcpcaVariant::V3 => (tx - ty) / ty,
    }
}

pub fn gcpca_fit(x: &DataMatrix, y: &DataMatrix, d: usize, variant: GcpcaVariant) -> Result<GcpcaModel> {
    check_same_p(x.p(), y.p())?;
    gcpca_fit_cov(&covariance(x), &covariance(y), d, variant)
}

pub fn gcpca_fit_cov(cx: &SymMatrix, cy: &SymMatrix, d: usize, variant: GcpcaVariant) -> Result<GcpcaModel> {
    check_same_p(cx.dim(), cy.dim())?;
    check_dim(d, cx.dim())?;
    let (denominator, numerator) = match variant {
        GcpcaVariant::V1 => (
            SymMatrix::symmetrize(cx.as_matrix() + cy.as_matrix()),
            cx.contrast(cy, 1.0)?,
        ),
        GcpcaVariant::V2 | GcpcaVariant::V3 => (cy.clone(), cx.clone()),
    };
    let whitener = sym_inv_sqrt(&denominator, default_ridge(&denominator))?;
    let w = whitener.as_matrix();
    let whitened = SymMatrix::symmetrize(w * numerator.as_matrix() * w);
    let eig = sym_eigh(&whitened)?;
    let back = w * eig.top(d).as_matrix();
    let loadings = stiefel_qr_retract(&back)?;
    let eigenvalues = match variant {
        GcpcaVariant::V3 => eig.eigenvalues.add_scalar(-1.0),
        _ => eig.eigenvalues,
    };
    let objective_value = gcpca_objective(variant, cx, cy, loadings.as_matrix());
    Ok(GcpcaModel {
        variant,
        d,
        loadings,
        objective_value,
        eigenvalues,
    })
}

pub fn gcpca_transform(model: &GcpcaModel, m: &DMatrix<f64>) -> Result<Embedding> {
    Ok(Embedding {
        values: project(&model.loadings, m)?,
        provenance: Provenance::new(format!("gcpca:{}", model.variant)),
    })
}

/// Columns and rows chosen by contrastive leverage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcurSelection {
    pub column_indices: Vec<usize>,
    pub row_indices: Vec<usize>,
    pub contrastive_scores: Vec<f64>,
    pub leverage_foreground: Vec<f64>,
    pub leverage_background: Vec<f64>,
    /// Number of singular vectors behind the leverage scores.
    pub k: usize,
    pub eps: f64,
}

/// Leverage of each column: squared row norms of the top-`k` right singular vectors.
pub fn column_leverage(m: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    let svd = thin_svd(m, k)?;
    Ok(svd.right.as_matrix().row_iter().map(|r| r.norm_squared()).collect())
}

/// Leverage of each row: squared row norms of the top-`k` left singular vectors.
pub fn row_leverage(m: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    let svd = thin_svd(m, k)?;
    Ok(svd.left.as_matrix().row_iter().map(|r| r.norm_squared()).collect())
}

/// Indices of the `k` largest scores, ties to the lower index.
pub(crate) fn top_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.truncate(k);
    idx
}

/// Contrastive CUR selection.
///
/// `k` defaults to `d_cols`; `eps` defaults to `1e-6 * max_j l^Y_j`.
/// Selection is deterministic: the `d_cols` columns with the largest
/// `l^X_j / (l^Y_j + eps)`, then the `d_rows` rows of largest leverage in
/// `X[:, columns]` using `min(k, d_cols)` left singular vectors.
pub fn ccur_select(
    x: &DataMatrix,
    y: &DataMatrix,
    k: Option<usize>,
    d_cols: usize,
    d_rows: usize,
    eps: Option<f64>,
) -> Result<CcurSelection> {
    check_same_p(x.p(), y.p())?;
    let p = x.p();
    check_dim(d_cols, p)?;
    if d_rows > x.n() {
        return Err(CdrError::InvalidArgument(format!(
            "d_rows = {d_rows} exceeds the {} foreground rows",
            x.n()
        )));
    }
    let k = k.unwrap_or(d_cols);
    let k_max = x.n().min(p).min(y.n());
    if k == 0 || k > k_max {
        return Err(CdrError::InvalidArgument(format!(
            "K = {k} must lie in 1..={k_max}"
        )));
    }
    let lx = column_leverage(x.as_matrix(), k)?;
    let ly = column_leverage(y.as_matrix(), k)?;
    let eps = match eps {
        Some(e) if e > 0.0 && e.is_finite() => e,
        Some(e) => {
            return Err(CdrError::InvalidArgument(format!("eps must be positive, got {e}")))
        }
        None => {
            let m = ly.iter().copied().fold(0.0, f64::max);
            if m > 0.0 { 1e-6 * m } else { 1e-12 }
        }
    };
    let scores: Vec<f64> = lx.iter().zip(&ly).map(|(a, b)| a / (b + eps)).collect();
    let column_indices = top_indices(&scores, d_cols);

    let row_indices = if d_rows == 0 {
        vec![]
    } else {
        let restricted = x.as_matrix().select_columns(&column_indices);
        let kr = k.min(d_cols).min(x.n());
        top_indices(&row_leverage(&restricted, kr)?, d_rows)
    };
    Ok(CcurSelection {
        column_indices,
        row_indices,
        contrastive_scores: scores,
        leverage_foreground: lx,
        leverage_background: ly,
        k,
        eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{principal_angles, random_stiefel};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, p: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    #[test]
    fn cpca_diagonal() {
        let cx = SymMatrix::from_diagonal(&[4.0, 3.0]);
        let cy = SymMatrix::from_diagonal(&[3.0, 1.0]);
        let m = cpca_fit_cov(&cx, &cy, 1.0, 1).unwrap();
        assert_eq!(m.loadings.as_matrix().as_slice(), &[0.0, 1.0]);
        assert_eq!(m.contrastive_eigenvalues.as_slice(), &[2.0, 1.0]);
    }

    #[test]
    fn cpca_gamma_zero_is_pca() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let scales = DMatrix::from_diagonal(&DVector::from_vec(vec![5.0, 3.0, 2.0, 1.0, 0.5]));
        let x = DataMatrix::new(gaussian(400, 5, &mut rng) * scales).unwrap();
        let y = DataMatrix::new(gaussian(300, 5, &mut rng)).unwrap();
        let m = cpca_fit(&x, &y, 0.0, 2).unwrap();
        let pca = sym_eigh(&covariance(&x)).unwrap().top(2);
        let a = principal_angles(&m.loadings, &pca).unwrap();
        assert!(a.max_angle() < 1e-8);
    }

    #[test]
    fn cpca_errors() {
        let x = DataMatrix::new(DMatrix::zeros(3, 2)).unwrap();
        let y = DataMatrix::new(DMatrix::zeros(3, 3)).unwrap();
        assert!(matches!(cpca_fit(&x, &y, 1.0, 1), Err(CdrError::InvalidArgument(_))));
        assert!(matches!(cpca_fit(&x, &x, 1.0, 3), Err(CdrError::InvalidArgument(_))));
        assert!(matches!(cpca_fit(&x, &x, -1.0, 1), Err(CdrError::InvalidArgument(_))));
    }

    #[test]
    fn transform_examples() {
        let cx = SymMatrix::from_diagonal(&[3.0, 2.0, 1.0]);
        let cy = SymMatrix::from_diagonal(&[0.0, 0.0, 0.0]);
        let m = cpca_fit_cov(&cx, &cy, 1.0, 2).unwrap();
        let e = cpca_transform(&m, &DMatrix::identity(3, 3)).unwrap();
        assert_eq!(e.values, DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        let z = cpca_transform(&m, &DMatrix::zeros(4, 3)).unwrap();
        assert_eq!(z.values, DMatrix::zeros(4, 2));
        assert!(cpca_transform(&m, &DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn transform_is_non_expansive() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let x = DataMatrix::new(gaussian(50, 6, &mut rng)).unwrap();
        let y = DataMatrix::new(gaussian(50, 6, &mut rng)).unwrap();
        let model = cpca_fit(&x, &y, 2.0, 3).unwrap();
        let m = gaussian(100, 6, &mut rng);
        let e = cpca_transform(&model, &m).unwrap();
        for i in 0..100 {
            assert!(e.values.row(i).norm() <= m.row(i).norm() + 1e-12);
        }
    }

    #[test]
    fn cpca_objective_beats_random_frames() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let x = DataMatrix::new(gaussian(60, 7, &mut rng)).unwrap();
        let y = DataMatrix::new(gaussian(60, 7, &mut rng)).unwrap();
        let model = cpca_fit(&x, &y, 1.5, 2).unwrap();
        let c = covariance(&x).contrast(&covariance(&y), 1.5).unwrap();
        let best = model.objective();
        for _ in 0..1000 {
            let v = random_stiefel(7, 2, &mut rng);
            let t = (v.as_matrix().transpose() * c.as_matrix() * v.as_matrix()).trace();
            assert!(t <= best + 1e-12);
        }
    }

    #[test]
    fn cpca_rotation_covariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let x = gaussian(80, 5, &mut rng) * DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 3.0, 2.0, 1.5, 1.0]));
        let y = gaussian(80, 5, &mut rng) * DMatrix::from_diagonal(&DVector::from_vec(vec![3.5, 0.5, 1.0, 1.0, 1.0]));
        let q = random_stiefel(5, 5, &mut rng);
        let base = cpca_fit(&DataMatrix::new(x.clone()).unwrap(), &DataMatrix::new(y.clone()).unwrap(), 1.0, 2).unwrap();
        let rot = cpca_fit(
            &DataMatrix::new(&x * q.as_matrix().transpose()).unwrap(),
            &DataMatrix::new(&y * q.as_matrix().transpose()).unwrap(),
            1.0,
            2,
        )
        .unwrap();
        let mapped = StiefelPoint::new(q.as_matrix() * base.loadings.as_matrix()).unwrap();
        assert!(principal_angles(&mapped, &rot.loadings).unwrap().max_angle() < 1e-8);
    }

    #[test]
    fn sweep_grid() {
        let g = default_gamma_grid();
        assert_eq!(g.len(), 15);
        assert_abs_diff_eq!(g[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(g[14], 1000.0, epsilon = 1e-9);
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let x = DataMatrix::new(gaussian(30, 4, &mut rng)).unwrap();
        let y = DataMatrix::new(gaussian(30, 4, &mut rng)).unwrap();
        let models = cpca_gamma_sweep(&x, &y, 2, &g).unwrap();
        assert_eq!(models.len(), 15);
        assert_eq!(models[3].gamma, g[3]);
    }

    #[test]
    fn gcpca_v1_diagonal() {
        let cx = SymMatrix::from_diagonal(&[4.0, 1.0]);
        let cy = SymMatrix::from_diagonal(&[2.0, 1.0]);
        let m = gcpca_fit_cov(&cx, &cy, 1, GcpcaVariant::V1).unwrap();
        // the default ridge perturbs the whitening at the 1e-10 level
        assert_abs_diff_eq!(m.eigenvalues[0], 1.0 / 3.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.eigenvalues[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(m.loadings.as_matrix().as_slice(), [1.0, 0.0].as_slice(), epsilon = 1e-12);
        assert_abs_diff_eq!(m.objective_value, 1.0 / 3.0, epsilon = 1e-9);
    }

    #[test]
    fn gcpca_v2_diagonal() {
        let cx = SymMatrix::from_diagonal(&[2.0, 8.0]);
        let cy = SymMatrix::from_diagonal(&[1.0, 2.0]);
        let m = gcpca_fit_cov(&cx, &cy, 1, GcpcaVariant::V2).unwrap();
        assert_abs_diff_eq!(m.eigenvalues.as_slice(), [4.0, 2.0].as_slice(), epsilon = 1e-9);
        assert_abs_diff_eq!(m.loadings.as_matrix().as_slice(), [0.0, 1.0].as_slice(), epsilon = 1e-12);
        let v3 = gcpca_fit_cov(&cx, &cy, 1, GcpcaVariant::V3).unwrap();
        assert_abs_diff_eq!(v3.eigenvalues.as_slice(), [3.0, 1.0].as_slice(), epsilon = 1e-9);
        assert_abs_diff_eq!(v3.objective_value, 3.0, epsilon = 1e-9);
    }

    fn random_psd(p: usize, rng: &mut ChaCha20Rng) -> SymMatrix {
        let a = gaussian(p, p, rng);
        SymMatrix::symmetrize(&a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.2)
    }

    #[test]
    fn gcpca_v2_v3_share_loadings() {
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        for _ in 0..20 {
            let (cx, cy) = (random_psd(6, &mut rng), random_psd(6, &mut rng));
            let a = gcpca_fit_cov(&cx, &cy, 2, GcpcaVariant::V2).unwrap();
            let b = gcpca_fit_cov(&cx, &cy, 2, GcpcaVariant::V3).unwrap();
            assert_eq!(a.loadings, b.loadings);
            assert_abs_diff_eq!(a.eigenvalues.add_scalar(-1.0), b.eigenvalues, epsilon = 1e-12);
        }
    }

    #[test]
    fn gcpca_v1_beats_random_frames() {
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let (cx, cy) = (random_psd(5, &mut rng), random_psd(5, &mut rng));
        let m = gcpca_fit_cov(&cx, &cy, 1, GcpcaVariant::V1).unwrap();
        for _ in 0..1000 {
            let v = random_stiefel(5, 1, &mut rng);
            let f = gcpca_objective(GcpcaVariant::V1, &cx, &cy, v.as_matrix());
            assert!(f <= m.objective_value + 1e-10);
        }
    }

    #[test]
    fn gcpca_singular_denominator() {
        let zero = SymMatrix::from_diagonal(&[0.0, 0.0]);
        let cx = SymMatrix::from_diagonal(&[1.0, 2.0]);
        assert!(matches!(
            gcpca_fit_cov(&cx, &zero, 1, GcpcaVariant::V2),
            Err(CdrError::SingularMatrix(_))
        ));
        assert!(matches!(
            gcpca_fit_cov(&zero, &zero, 1, GcpcaVariant::V1),
            Err(CdrError::SingularMatrix(_))
        ));
    }

    #[test]
    fn variant_parse() {
        assert_eq!("v2".parse::<GcpcaVariant>().unwrap(), GcpcaVariant::V2);
        assert!("v4".parse::<GcpcaVariant>().is_err());
    }

    #[test]
    fn ccur_rank_one_foreground() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut x = gaussian(50, 5, &mut rng) * 0.01;
        for i in 0..50 {
            x[(i, 3)] += 10.0 * rng.sample::<f64, _>(StandardNormal);
        }
        let y = gaussian(50, 5, &mut rng);
        let s = ccur_select(&DataMatrix::new(x).unwrap(), &DataMatrix::new(y).unwrap(), Some(1), 2, 3, None).unwrap();
        assert_eq!(s.column_indices[0], 3);
        assert!(s.leverage_foreground[3] > 0.99);
        assert_eq!(s.row_indices.len(), 3);
        assert!(s.contrastive_scores.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn ccur_identical_datasets() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let x = DataMatrix::new(gaussian(40, 6, &mut rng)).unwrap();
        let s = ccur_select(&x, &x, Some(2), 3, 0, Some(1e-3)).unwrap();
        for (j, sc) in s.contrastive_scores.iter().enumerate() {
            let l = s.leverage_foreground[j];
            assert_abs_diff_eq!(*sc, l / (l + 1e-3), epsilon = 1e-12);
            assert!(*sc < 1.0);
        }
        assert_eq!(s.column_indices, top_indices(&s.leverage_foreground, 3));
    }

    #[test]
    fn ccur_invalid_k() {
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let x = DataMatrix::new(gaussian(4, 6, &mut rng)).unwrap();
        assert!(ccur_select(&x, &x, Some(0), 2, 0, None).is_err());
        assert!(ccur_select(&x, &x, Some(5), 2, 0, None).is_err());
        assert!(ccur_select(&x, &x, None, 2, 5, None).is_err());
    }

    #[test]
    fn ccur_scale_invariance() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let x = gaussian(30, 8, &mut rng) * DMatrix::from_diagonal(&DVector::from_fn(8, |i, _| 1.0 + i as f64));
        let y = gaussian(30, 8, &mut rng);
        let a = ccur_select(&DataMatrix::new(x.clone()).unwrap(), &DataMatrix::new(y.clone()).unwrap(), Some(3), 3, 2, Some(1e-4)).unwrap();
        let b = ccur_select(&DataMatrix::new(x * 7.5).unwrap(), &DataMatrix::new(y * 7.5).unwrap(), Some(3), 3, 2, Some(1e-4)).unwrap();
        assert_eq!(a.column_indices, b.column_indices);
        assert_eq!(a.row_indices, b.row_indices);
        for (u, v) in a.leverage_foreground.iter().zip(&b.leverage_foreground) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-10);
        }
    }

    #[test]
    fn ties_prefer_lower_index() {
        assert_eq!(top_indices(&[1.0, 2.0, 2.0, 0.5], 2), vec![1, 2]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn pair(seed: u64, p: usize) -> (SymMatrix, SymMatrix) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let a = gaussian(p + 3, p, &mut rng);
            let b = gaussian(p + 3, p, &mut rng);
            let eye = DMatrix::identity(p, p) * 0.1;
            (
                SymMatrix::symmetrize(a.tr_mul(&a) + &eye),
                SymMatrix::symmetrize(b.tr_mul(&b) + &eye),
            )
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(48))]

            #[test]
            fn cpca_objective_is_trace(seed in any::<u64>(), p in 2usize..10, gamma in 0.0f64..5.0) {
                let (cx, cy) = pair(seed, p);
                let d = 1 + (seed as usize) % p;
                let m = cpca_fit_cov(&cx, &cy, gamma, d).unwrap();
                let v = m.loadings.as_matrix();
                let c = cx.as_matrix() - cy.as_matrix() * gamma;
                let tr = (v.transpose() * c * v).trace();
                prop_assert!((tr - m.objective()).abs() <= 1e-9 * (1.0 + tr.abs()));
                let eye = DMatrix::<f64>::identity(d, d);
                prop_assert!((v.tr_mul(v) - eye).amax() <= 1e-10);
            }

            #[test]
            fn gcpca_single_direction_beats_random(seed in any::<u64>(), p in 2usize..7) {
                let (cx, cy) = pair(seed, p);
                let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
                for variant in [GcpcaVariant::V1, GcpcaVariant::V2, GcpcaVariant::V3] {
                    let m = gcpca_fit_cov(&cx, &cy, 1, variant).unwrap();
                    for _ in 0..5 {
                        let v = random_stiefel(p, 1, &mut rng).into_inner();
                        let other = gcpca_objective(variant, &cx, &cy, &v);
                        prop_assert!(m.objective_value >= other - 1e-9 * (1.0 + other.abs()));
                    }
                    if variant == GcpcaVariant::V1 {
                        prop_assert!(m.objective_value.abs() <= 1.0 + 1e-12);
                    }
                }
            }

            #[test]
            fn ccur_indices_distinct_and_ranked(seed in any::<u64>(), p in 3usize..12) {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let x = DataMatrix::new(gaussian(40, p, &mut rng)).unwrap();
                let y = DataMatrix::new(gaussian(30, p, &mut rng)).unwrap();
                let d = 1 + (seed as usize) % p;
                let sel = ccur_select(&x, &y, None, d, 0, None).unwrap();
                let mut sorted = sel.column_indices.clone();
                sorted.sort_unstable();
                sorted.dedup();
                prop_assert_eq!(sorted.len(), d);
                let worst_kept = sel.column_indices.iter().map(|&j| sel.contrastive_scores[j]).fold(f64::INFINITY, f64::min);
                for j in (0..p).filter(|j| !sel.column_indices.contains(j)) {
                    prop_assert!(sel.contrastive_scores[j] <= worst_kept);
                }
            }
        }
    }
}

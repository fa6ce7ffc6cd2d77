//! Checks that come before fitting: is a background valid for a foreground
//! (BasCoD), and does the foreground carry structure the background lacks
//! (CDE bootstrap test and dimension estimate).

use std::f64::consts::SQRT_2;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use statrs::function::erf::erfc;

use crate::error::{CdrError, Result};
use crate::linalg::{center_columns, covariance, principal_angles, sym_eigh, DataMatrix, StiefelPoint};
use crate::linear::check_same_p;

/// How many leading eigenvectors make up a data subspace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimRule {
    Fixed(usize),
    /// Smallest d whose cumulative eigenvalue fraction reaches τ.
    VarianceThreshold(f64),
}

impl Default for DimRule {
    fn default() -> Self {
        DimRule::VarianceThreshold(0.9)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceEstimate {
    pub v: StiefelPoint,
    pub dim: usize,
    pub variance_explained: f64,
    /// Full covariance spectrum, descending.
    pub eigenvalues: DVector<f64>,
}

/// Top eigenvectors of the covariance of `m` (centered internally).
pub fn estimate_subspace(m: &DataMatrix, rule: DimRule) -> Result<SubspaceEstimate> {
    let (mc, _) = center_columns(m)?;
    let eig = sym_eigh(&covariance(&mc))?;
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let limit = m.n().min(m.p());
    let dim = match rule {
        DimRule::Fixed(d) => {
            if d == 0 || d > limit {
                return Err(CdrError::InvalidArgument(format!("need 1 <= d <= min(n, p) = {limit}, got {d}")));
            }
            d
        }
        DimRule::VarianceThreshold(tau) => {
            if !(tau > 0.0 && tau < 1.0) {
                return Err(CdrError::InvalidArgument(format!("threshold must lie in (0, 1), got {tau}")));
            }
            if !(total > 0.0) {
                return Err(CdrError::DegenerateData("data has no variance".into()));
            }
            let mut cum = 0.0;
            let mut found = None;
            for (j, v) in eig.eigenvalues.iter().enumerate() {
                cum += v.max(0.0);
                if cum / total >= tau - 1e-12 {
                    found = Some(j + 1);
                    break;
                }
            }
            found.ok_or_else(|| CdrError::DegenerateData("variance threshold unreachable".into()))?
        }
    };
    let kept: f64 = eig.eigenvalues.iter().take(dim).map(|v| v.max(0.0)).sum();
    Ok(SubspaceEstimate {
        v: eig.top(dim),
        dim,
        variance_explained: if total > 0.0 { kept / total } else { 0.0 },
        eigenvalues: eig.eigenvalues,
    })
}

/// `#{k: λ_k < 1 - ε} + max(d_x - d_y, 0)` with λ the cosines of the
/// principal angles between the two spans.
pub fn contrastive_dimension(vx: &StiefelPoint, vy: &StiefelPoint, epsilon: f64) -> Result<usize> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(CdrError::InvalidArgument(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let angles = principal_angles(vx, vy)?;
    let below = angles.cosines.iter().filter(|&&c| c < 1.0 - epsilon).count();
    Ok(below + vx.d().saturating_sub(vy.d()))
}

pub fn cde_estimate_dim(vx: &SubspaceEstimate, vy: &SubspaceEstimate, epsilon: f64) -> Result<usize> {
    contrastive_dimension(&vx.v, &vy.v, epsilon)
}

/// Where bootstrap replicates draw their foreground rows from. Background
/// rows always come from the pooled foreground and background.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdeResampling {
    /// Foreground rows also come from the pooled set, so both replicate
    /// groups share one population. Null p-values are close to uniform.
    #[default]
    Pooled,
    /// Foreground rows come from the foreground only. The replicate
    /// foreground then carries two layers of sampling noise, which makes the
    /// test conservative.
    Foreground,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CdeOptions {
    /// Bootstrap replicates, at least 100.
    pub replicates: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub threads: usize,
    pub resampling: CdeResampling,
}

impl Default for CdeOptions {
    fn default() -> Self {
        Self {
            replicates: 1000,
            seed: 0,
            epsilon: 0.05,
            threads: 1,
            resampling: CdeResampling::Pooled,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdeReport {
    /// Principal-angle cosines, descending.
    pub lambdas: Vec<f64>,
    pub theta_max: f64,
    pub lambda_min: f64,
    pub p_value: f64,
    pub replicates: usize,
    pub d_x: usize,
    pub d_y: usize,
    pub d_hat: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub resampling: CdeResampling,
    /// Set when the test was decided without resampling.
    pub reason: Option<String>,
    #[serde(skip)]
    pub replicate_lambda_min: Vec<f64>,
}

/// Resampling indices of replicate `b` into the pooled rows `0..n_x + n_y`
/// (indices `>= n_x` are background rows): `n_x` foreground draws, then
/// `n_y` background draws from the whole pooled range. Each replicate has
/// its own ChaCha20 stream, so replicates do not depend on evaluation order.
pub fn bootstrap_indices(
    seed: u64,
    b: usize,
    n_x: usize,
    n_y: usize,
    resampling: CdeResampling,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(b as u64);
    let fg_range = match resampling {
        CdeResampling::Pooled => n_x + n_y,
        CdeResampling::Foreground => n_x,
    };
    let xs = (0..n_x).map(|_| rng.random_range(0..fg_range)).collect();
    let ys = (0..n_y).map(|_| rng.random_range(0..n_x + n_y)).collect();
    (xs, ys)
}

fn top_span(m: DMatrix<f64>, d: usize) -> Result<StiefelPoint> {
    let (mc, _) = center_columns(&DataMatrix::new(m)?)?;
    Ok(sym_eigh(&covariance(&mc))?.top(d))
}

fn lambda_min(vx: &StiefelPoint, vy: &StiefelPoint) -> Result<f64> {
    Ok(principal_angles(vx, vy)?.min_cosine())
}

/// Bootstrap test of `H0: span(V_x) ⊆ span(V_y)`.
///
/// `d_x` and `d_y` stay fixed across replicates. The p-value counts
/// replicates whose smallest cosine falls strictly below the observed one.
pub fn cde_test(x: &DataMatrix, y: &DataMatrix, d_x: usize, d_y: usize, opts: &CdeOptions) -> Result<CdeReport> {
    check_same_p(x.p(), y.p())?;
    let p = x.p();
    if d_x == 0 || d_y == 0 || d_x > p || d_y > p {
        return Err(CdrError::InvalidArgument(format!(
            "subspace dimensions must lie in [1, {p}], got d_x = {d_x}, d_y = {d_y}"
        )));
    }
    if x.n() <= d_x || y.n() <= d_y {
        return Err(CdrError::InsufficientData(format!(
            "need more samples than subspace dimensions (n_x = {}, n_y = {})",
            x.n(),
            y.n()
        )));
    }
    if opts.replicates < 100 {
        return Err(CdrError::InvalidArgument(format!(
            "need at least 100 bootstrap replicates, got {}",
            opts.replicates
        )));
    }
    let vx = estimate_subspace(x, DimRule::Fixed(d_x))?.v;
    let vy = estimate_subspace(y, DimRule::Fixed(d_y))?.v;
    let angles = principal_angles(&vx, &vy)?;
    let lambdas: Vec<f64> = angles.cosines.iter().copied().collect();
    let lmin = angles.min_cosine();
    let d_hat = contrastive_dimension(&vx, &vy, opts.epsilon)?;
    let mut report = CdeReport {
        lambdas,
        theta_max: angles.max_angle(),
        lambda_min: lmin,
        p_value: 0.0,
        replicates: opts.replicates,
        d_x,
        d_y,
        d_hat,
        epsilon: opts.epsilon,
        seed: opts.seed,
        resampling: opts.resampling,
        reason: None,
        replicate_lambda_min: Vec::new(),
    };
    if d_x > d_y {
        report.replicates = 0;
        report.reason = Some("d_x > d_y forces d >= d_x - d_y".into());
        return Ok(report);
    }

    let (n_x, n_y) = (x.n(), y.n());
    let pooled = {
        let mut m = DMatrix::zeros(n_x + n_y, p);
        m.rows_mut(0, n_x).copy_from(x.as_matrix());
        m.rows_mut(n_x, n_y).copy_from(y.as_matrix());
        m
    };
    let replicate = |b: usize| -> Result<f64> {
        let (xi, yi) = bootstrap_indices(opts.seed, b, n_x, n_y, opts.resampling);
        let xb = DMatrix::from_fn(n_x, p, |i, j| pooled[(xi[i], j)]);
        let yb = DMatrix::from_fn(n_y, p, |i, j| pooled[(yi[i], j)]);
        lambda_min(&top_span(xb, d_x)?, &top_span(yb, d_y)?)
    };
    let threads = opts.threads.max(1).min(opts.replicates);
    let mut values = vec![0.0; opts.replicates];
    if threads == 1 {
        for (b, v) in values.iter_mut().enumerate() {
            *v = replicate(b)?;
        }
    } else {
        let chunk = opts.replicates.div_ceil(threads);
        let results: Vec<Result<()>> = std::thread::scope(|s| {
            let handles: Vec<_> = values
                .chunks_mut(chunk)
                .enumerate()
                .map(|(c, out)| {
                    let replicate = &replicate;
                    s.spawn(move || {
                        for (i, v) in out.iter_mut().enumerate() {
                            *v = replicate(c * chunk + i)?;
                        }
                        Ok(())
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("bootstrap worker panicked")).collect()
        });
        results.into_iter().collect::<Result<Vec<()>>>()?;
    }
    report.p_value = bootstrap_p_value(lmin, &values);
    report.replicate_lambda_min = values;
    Ok(report)
}

/// Fraction of replicate statistics strictly below the observed one.
pub fn bootstrap_p_value(observed: f64, replicates: &[f64]) -> f64 {
    replicates.iter().filter(|&&v| v < observed).count() as f64 / replicates.len() as f64
}

/// How per-column Fisher z statistics are combined into one candidate
/// p-value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FisherTail {
    /// Column p-values `Φ(Z)`, `χ² = -2 Σ log Φ(Z)`, `p = P(χ²_{2d} >= χ²)`.
    /// One misaligned column is enough to reject.
    #[default]
    Standard,
    /// `χ² = -2 Σ log(1 - Φ(Z))`, `p = P(χ²_{2d} <= χ²)`. Rejects only when
    /// the columns are misaligned on balance.
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BascodOptions {
    pub dim_rule: DimRule,
    /// Null margin: a column counts as aligned when its correlation is at
    /// least `1 - epsilon`.
    pub epsilon: f64,
    pub alpha: f64,
    pub tail: FisherTail,
}

impl Default for BascodOptions {
    fn default() -> Self {
        Self {
            dim_rule: DimRule::default(),
            epsilon: 0.05,
            alpha: 0.05,
            tail: FisherTail::Standard,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateTest {
    pub dim: usize,
    pub correlations: Vec<f64>,
    pub z: Vec<f64>,
    pub chi2: f64,
    pub dof: usize,
    pub p_value: f64,
    pub rejected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundTestReport {
    pub foreground_dim: usize,
    pub candidates: Vec<CandidateTest>,
    pub epsilon: f64,
    pub alpha: f64,
    pub tail: FisherTail,
}

/// `log Φ(z)`, accurate far into the lower tail.
pub fn log_normal_cdf(z: f64) -> f64 {
    if z < -30.0 {
        // Mills ratio expansion
        let z2 = z * z;
        -0.5 * z2 - (-z).ln() - 0.5 * (2.0 * std::f64::consts::PI).ln() + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    } else {
        (0.5 * erfc(-z / SQRT_2)).ln()
    }
}

const RHO_CLIP: f64 = 1.0 - 1e-12;

/// Fisher combination of column correlations for a candidate with `p`
/// features. Returns `(chi2, p_value, z)`.
pub fn fisher_combine(rho: &[f64], p: usize, epsilon: f64, tail: FisherTail) -> Result<(f64, f64, Vec<f64>)> {
    if p <= 3 {
        return Err(CdrError::InsufficientFeatures(p));
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(CdrError::InvalidArgument(format!("epsilon must lie in (0, 0.5), got {epsilon}")));
    }
    if rho.is_empty() {
        return Err(CdrError::InvalidArgument("no correlations to combine".into()));
    }
    let scale = ((p - 3) as f64).sqrt();
    let margin = (1.0 - epsilon).atanh();
    let z: Vec<f64> = rho
        .iter()
        .map(|&r| scale * (r.clamp(-RHO_CLIP, RHO_CLIP).atanh() - margin))
        .collect();
    let chi2: f64 = z
        .iter()
        .map(|&zi| match tail {
            FisherTail::Standard => -2.0 * log_normal_cdf(zi),
            FisherTail::Lower => -2.0 * log_normal_cdf(-zi),
        })
        .sum();
    let dist = ChiSquared::new(2.0 * rho.len() as f64).expect("positive degrees of freedom");
    let p_value = match tail {
        FisherTail::Standard => dist.sf(chi2),
        FisherTail::Lower => dist.cdf(chi2),
    };
    Ok((chi2, p_value.clamp(0.0, 1.0), z))
}

/// Leading eigenvectors scaled by the square root of their eigenvalues.
pub fn scaled_loadings(m: &DataMatrix, rule: DimRule) -> Result<(DMatrix<f64>, SubspaceEstimate)> {
    let est = estimate_subspace(m, rule)?;
    let mut g = est.v.as_matrix().clone();
    for (j, mut col) in g.column_iter_mut().enumerate() {
        col *= est.eigenvalues[j].max(0.0).sqrt();
    }
    Ok((g, est))
}

/// Uncentered correlation between a loading column and its projection onto
/// `span(V0)`, i.e. `‖P0 γ‖ / ‖γ‖`. Invariant under joint rotations.
fn projection_correlation(v0: &StiefelPoint, g: &DVector<f64>) -> f64 {
    let norm = g.norm();
    if norm == 0.0 {
        return 0.0;
    }
    let proj = v0.as_matrix() * v0.as_matrix().tr_mul(g);
    (proj.dot(g) / (proj.norm() * norm)).clamp(0.0, 1.0)
}

/// Tests each candidate background for validity, i.e. that its loadings lie
/// in the foreground loading space. A candidate is rejected when its
/// combined p-value falls below `alpha`.
pub fn bascod_test(x0: &DataMatrix, candidates: &[DataMatrix], opts: &BascodOptions) -> Result<BackgroundTestReport> {
    let p = x0.p();
    if p <= 3 {
        return Err(CdrError::InsufficientFeatures(p));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(CdrError::InvalidArgument(format!("alpha must lie in (0, 1), got {}", opts.alpha)));
    }
    let (_, est0) = scaled_loadings(x0, opts.dim_rule)?;
    let mut out = Vec::with_capacity(candidates.len());
    for cand in candidates {
        check_same_p(p, cand.p())?;
        let (g, est) = scaled_loadings(cand, opts.dim_rule)?;
        let correlations: Vec<f64> = g
            .column_iter()
            .map(|c| projection_correlation(&est0.v, &c.into_owned()))
            .collect();
        let (chi2, p_value, z) = fisher_combine(&correlations, p, opts.epsilon, opts.tail)?;
        out.push(CandidateTest {
            dim: est.dim,
            correlations,
            z,
            chi2,
            dof: 2 * est.dim,
            p_value,
            rejected: p_value < opts.alpha,
        });
    }
    Ok(BackgroundTestReport {
        foreground_dim: est0.dim,
        candidates: out,
        epsilon: opts.epsilon,
        alpha: opts.alpha,
        tail: opts.tail,
    })
}

/// Least-squares loadings `B = Xᵀ L (LᵀL)⁻¹` of data on an embedding.
pub fn approx_loadings_from_embedding(x: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != l.nrows() {
        return Err(CdrError::InvalidArgument(format!(
            "data has {} rows, embedding has {}",
            x.nrows(),
            l.nrows()
        )));
    }
    let d = l.ncols();
    if d == 0 || d > l.nrows() {
        return Err(CdrError::RankDeficient(format!("embedding with {d} columns cannot have full rank")));
    }
    let scale = l.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let r = l.clone().qr().r();
    if (0..d).any(|j| r[(j, j)].abs() <= 1e-12 * scale) || scale == 0.0 {
        return Err(CdrError::RankDeficient("embedding columns are linearly dependent".into()));
    }
    // Bᵀ = R⁻¹ R⁻ᵀ LᵀX
    let ltx = l.tr_mul(x);
    let s = r
        .transpose()
        .solve_lower_triangular(&ltx)
        .ok_or_else(|| CdrError::RankDeficient("triangular solve failed".into()))?;
    let b = r
        .solve_upper_triangular(&s)
        .ok_or_else(|| CdrError::RankDeficient("triangular solve failed".into()))?;
    Ok(b.transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::random_stiefel;
    use crate::synth::{generate, GeneratorModel, GeneratorSpec};
    use approx::assert_abs_diff_eq;
    use rand_distr::StandardNormal;

    fn gaussian(n: usize, p: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
    }

    fn basis(p: usize, cols: &[usize]) -> StiefelPoint {
        StiefelPoint::new(DMatrix::from_fn(p, cols.len(), |i, j| f64::from(u8::from(i == cols[j])))).unwrap()
    }

    #[test]
    fn subspace_on_exact_plane() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut m = gaussian(50, 5, &mut rng);
        m.columns_mut(2, 3).fill(0.0);
        let est = estimate_subspace(&DataMatrix::new(m).unwrap(), DimRule::Fixed(2)).unwrap();
        assert_abs_diff_eq!(est.variance_explained, 1.0, epsilon = 1e-12);
        let angle = principal_angles(&est.v, &basis(5, &[0, 1])).unwrap().max_angle();
        assert!(angle < 1e-8);
    }

    /// Rows `±sqrt(n λ_j) e_j` have covariance exactly diag(λ).
    fn with_spectrum(lams: &[f64]) -> DataMatrix {
        let p = lams.len();
        let mut m = DMatrix::zeros(2 * p, p);
        for (j, &l) in lams.iter().enumerate() {
            let a = (p as f64 * l).sqrt();
            m[(2 * j, j)] = a;
            m[(2 * j + 1, j)] = -a;
        }
        DataMatrix::new(m).unwrap()
    }

    #[test]
    fn threshold_equal_eigenvalues() {
        let est = estimate_subspace(&with_spectrum(&[1.0; 10]), DimRule::VarianceThreshold(0.9)).unwrap();
        assert_eq!(est.dim, 9);
    }

    #[test]
    fn threshold_spiked() {
        let mut lams = vec![1.0; 10];
        lams[0] = 10.0;
        lams[1] = 5.0;
        let est = estimate_subspace(&with_spectrum(&lams), DimRule::VarianceThreshold(0.5)).unwrap();
        assert_eq!(est.dim, 2);
        assert_abs_diff_eq!(est.variance_explained, 15.0 / 23.0, epsilon = 1e-12);
    }

    #[test]
    fn subspace_errors() {
        let zero = DataMatrix::new(DMatrix::zeros(5, 3)).unwrap();
        assert!(matches!(
            estimate_subspace(&zero, DimRule::VarianceThreshold(0.5)),
            Err(CdrError::DegenerateData(_))
        ));
        assert!(estimate_subspace(&zero, DimRule::Fixed(4)).is_err());
        assert!(estimate_subspace(&zero, DimRule::VarianceThreshold(1.0)).is_err());
    }

    #[test]
    fn dimension_examples() {
        let v = basis(6, &[0, 1]);
        assert_eq!(contrastive_dimension(&v, &v, 0.3).unwrap(), 0);
        assert_eq!(contrastive_dimension(&basis(6, &[0, 1]), &basis(6, &[2, 3]), 0.1).unwrap(), 2);
        // second column at 30° from e2, rotated toward e4
        let (s, c) = (30f64.to_radians().sin(), 30f64.to_radians().cos());
        let mut m = DMatrix::zeros(6, 2);
        m[(0, 0)] = 1.0;
        m[(1, 1)] = c;
        m[(3, 1)] = s;
        let vx = StiefelPoint::new(m).unwrap();
        let angles = principal_angles(&vx, &basis(6, &[0, 1])).unwrap();
        assert_abs_diff_eq!(angles.cosines[1], c, epsilon = 1e-12);
        assert_eq!(contrastive_dimension(&vx, &basis(6, &[0, 1]), 0.05).unwrap(), 1);
        assert_eq!(contrastive_dimension(&basis(6, &[0, 1, 2]), &basis(6, &[0]), 0.05).unwrap(), 2);
        assert!(contrastive_dimension(&v, &v, 0.0).is_err());
    }

    #[test]
    fn dimension_monotone_in_epsilon() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = random_stiefel(8, 3, &mut rng);
            let b = random_stiefel(8, 3, &mut rng);
            let mut prev = usize::MAX;
            for eps in [0.01, 0.1, 0.3, 0.5, 0.9] {
                let d = contrastive_dimension(&a, &b, eps).unwrap();
                assert!(d <= prev);
                prev = d;
            }
        }
    }

    #[test]
    fn bootstrap_indices_ranges_and_determinism() {
        let fg = CdeResampling::Foreground;
        let (xs, ys) = bootstrap_indices(5, 3, 40, 60, fg);
        assert!(xs.iter().all(|&i| i < 40));
        assert!(ys.iter().all(|&i| i < 100));
        assert!(ys.iter().any(|&i| i < 40) && ys.iter().any(|&i| i >= 40));
        assert_eq!((xs.clone(), ys.clone()), bootstrap_indices(5, 3, 40, 60, fg));
        assert_ne!(xs, bootstrap_indices(5, 4, 40, 60, fg).0);
        let (xs, ys) = bootstrap_indices(5, 3, 40, 60, CdeResampling::Pooled);
        for idx in [&xs, &ys] {
            assert!(idx.iter().all(|&i| i < 100));
            assert!(idx.iter().any(|&i| i < 40) && idx.iter().any(|&i| i >= 40));
        }
    }

    #[test]
    fn p_value_counting() {
        assert_eq!(bootstrap_p_value(0.5, &[0.6, 0.7, 0.5]), 0.0);
        assert_eq!(bootstrap_p_value(0.5, &[0.1, 0.7, 0.2, 0.9]), 0.5);
    }

    fn cde_data(overlap: usize, seed: u64) -> (DataMatrix, DataMatrix) {
        let mut spec = GeneratorSpec::new(GeneratorModel::CdeSubspaces, 10, 200, 200, seed);
        spec.d = 2;
        spec.overlap = overlap;
        spec.sigma = 1.0;
        spec.signal = 5f64.sqrt() * 2.0;
        let s = generate(&spec).unwrap();
        (DataMatrix::new(s.foreground).unwrap(), DataMatrix::new(s.background).unwrap())
    }

    #[test]
    fn cde_deterministic_and_thread_independent() {
        let (x, y) = cde_data(2, 3);
        let opts = CdeOptions {
            replicates: 120,
            seed: 9,
            ..CdeOptions::default()
        };
        let a = cde_test(&x, &y, 2, 2, &opts).unwrap();
        let b = cde_test(&x, &y, 2, 2, &opts).unwrap();
        let c = cde_test(&x, &y, 2, 2, &CdeOptions { threads: 3, ..opts }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
        assert_eq!(a.p_value, bootstrap_p_value(a.lambda_min, &a.replicate_lambda_min));
    }

    #[test]
    fn cde_detects_orthogonal_direction() {
        let (x, y) = cde_data(1, 4);
        for resampling in [CdeResampling::Pooled, CdeResampling::Foreground] {
            let opts = CdeOptions {
                replicates: 200,
                resampling,
                ..CdeOptions::default()
            };
            let r = cde_test(&x, &y, 2, 2, &opts).unwrap();
            assert!(r.p_value < 0.05, "{resampling:?}: {}", r.p_value);
            assert_eq!(r.d_hat, 1);
        }
    }

    #[test]
    fn cde_shortcut_and_errors() {
        let (x, y) = cde_data(1, 5);
        let r = cde_test(&x, &y, 3, 2, &CdeOptions::default()).unwrap();
        assert_eq!(r.p_value, 0.0);
        assert!(r.reason.is_some());
        assert!(r.d_hat >= 1);
        assert!(cde_test(&x, &y, 2, 2, &CdeOptions { replicates: 50, ..CdeOptions::default() }).is_err());
        let tiny = DataMatrix::new(DMatrix::from_fn(2, 10, |i, j| (i + j) as f64)).unwrap();
        assert!(matches!(
            cde_test(&tiny, &y, 2, 2, &CdeOptions::default()),
            Err(CdrError::InsufficientData(_))
        ));
    }

    #[test]
    fn fisher_null_margin() {
        let eps = 0.05;
        let d = 3;
        let rho = vec![1.0 - eps; d];
        for tail in [FisherTail::Standard, FisherTail::Lower] {
            let (chi2, p, z) = fisher_combine(&rho, 50, eps, tail).unwrap();
            assert!(z.iter().all(|v| v.abs() < 1e-9));
            assert_abs_diff_eq!(chi2, -2.0 * d as f64 * 0.5f64.ln(), epsilon = 1e-8);
            let dist = ChiSquared::new(2.0 * d as f64).unwrap();
            let expected = match tail {
                FisherTail::Standard => dist.sf(1.386_294_361_119_890_6 * d as f64),
                FisherTail::Lower => dist.cdf(1.386_294_361_119_890_6 * d as f64),
            };
            assert_abs_diff_eq!(p, expected, epsilon = 1e-8);
        }
        assert_eq!(fisher_combine(&rho, 3, eps, FisherTail::Standard), Err(CdrError::InsufficientFeatures(3)));
    }

    #[test]
    fn fisher_extremes_stay_finite() {
        let (chi2, p, _) = fisher_combine(&[1.0, 0.0], 50, 0.05, FisherTail::Standard).unwrap();
        assert!(chi2.is_finite());
        assert!(p < 1e-10);
        let (_, p, _) = fisher_combine(&[1.0, 1.0], 50, 0.05, FisherTail::Standard).unwrap();
        assert!(p > 0.99);
        assert!(log_normal_cdf(-40.0).is_finite());
        assert_abs_diff_eq!(log_normal_cdf(-29.999), log_normal_cdf(-30.001), epsilon = 0.1);
        assert_abs_diff_eq!(log_normal_cdf(0.0), 0.5f64.ln(), epsilon = 1e-15);
    }

    fn bascod_data(seed: u64) -> (DataMatrix, Vec<DataMatrix>) {
        let mut spec = GeneratorSpec::new(GeneratorModel::BackgroundCandidates, 20, 500, 500, seed);
        spec.k = 2;
        spec.d = 1;
        // low enough that the 0.9 variance rule finds the true dimensions
        spec.sigma = 0.1;
        let s = generate(&spec).unwrap();
        let cands = s.candidates.into_iter().map(|c| DataMatrix::new(c).unwrap()).collect();
        (DataMatrix::new(s.foreground).unwrap(), cands)
    }

    #[test]
    fn bascod_separates_candidates() {
        let (x0, cands) = bascod_data(6);
        let r = bascod_test(&x0, &cands, &BascodOptions::default()).unwrap();
        assert!(!r.candidates[0].rejected, "{:?}", r.candidates[0]);
        assert!(r.candidates[1].rejected, "{:?}", r.candidates[1]);
        assert_eq!(r.foreground_dim, 3);
        assert_eq!(r.candidates[0].dim, 2);
        assert_eq!(r.candidates[0].dof, 2 * r.candidates[0].dim);
    }

    #[test]
    fn bascod_rotation_invariant() {
        let (x0, cands) = bascod_data(7);
        let mut rng = ChaCha20Rng::seed_from_u64(8);
        let q = random_stiefel(20, 20, &mut rng).into_inner();
        let rot = |m: &DataMatrix| DataMatrix::new(m.as_matrix() * &q).unwrap();
        let a = bascod_test(&x0, &cands, &BascodOptions::default()).unwrap();
        let rc: Vec<_> = cands.iter().map(rot).collect();
        let b = bascod_test(&rot(&x0), &rc, &BascodOptions::default()).unwrap();
        for (ca, cb) in a.candidates.iter().zip(&b.candidates) {
            assert_abs_diff_eq!(ca.p_value, cb.p_value, epsilon = 1e-10);
        }
    }

    #[test]
    fn bascod_needs_four_features() {
        let m = DataMatrix::new(DMatrix::from_fn(10, 3, |i, j| ((i * 7 + j * 3) % 5) as f64)).unwrap();
        assert_eq!(
            bascod_test(&m, &[m.clone()], &BascodOptions::default()).unwrap_err(),
            CdrError::InsufficientFeatures(3)
        );
    }

    #[test]
    fn loadings_orthonormal_embedding() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let l = random_stiefel(30, 3, &mut rng).into_inner();
        let x = gaussian(30, 5, &mut rng);
        assert_abs_diff_eq!(approx_loadings_from_embedding(&x, &l).unwrap(), x.tr_mul(&l), epsilon = 1e-10);
    }

    #[test]
    fn loadings_noiseless_and_normal_equations() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let l = gaussian(40, 3, &mut rng);
        let g = gaussian(6, 3, &mut rng);
        let x = &l * g.transpose();
        assert_abs_diff_eq!(approx_loadings_from_embedding(&x, &l).unwrap(), g, epsilon = 1e-10);
        let x = gaussian(40, 6, &mut rng);
        let b = approx_loadings_from_embedding(&x, &l).unwrap();
        assert!((x.tr_mul(&l) - &b * l.tr_mul(&l)).norm() <= 1e-8);
    }

    #[test]
    fn loadings_rank_deficient() {
        let mut l = DMatrix::zeros(10, 2);
        l.column_mut(0).fill(1.0);
        l.column_mut(1).fill(2.0);
        assert!(matches!(
            approx_loadings_from_embedding(&DMatrix::zeros(10, 3), &l),
            Err(CdrError::RankDeficient(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn contrastive_dimension_bounds_and_rotation(seed in any::<u64>(), p in 3usize..10) {
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                let dx = 1 + (seed as usize) % (p - 1);
                let dy = 1 + (seed as usize / 7) % (p - 1);
                let vx = random_stiefel(p, dx, &mut rng);
                let vy = random_stiefel(p, dy, &mut rng);
                let d = contrastive_dimension(&vx, &vy, 0.05).unwrap();
                prop_assert!(d <= dx);
                prop_assert!(d >= dx.saturating_sub(dy));
                prop_assert_eq!(contrastive_dimension(&vx, &vx, 0.05).unwrap(), 0);
                let q = random_stiefel(p, p, &mut rng).into_inner();
                let rx = StiefelPoint::new(&q * vx.as_matrix()).unwrap();
                let ry = StiefelPoint::new(&q * vy.as_matrix()).unwrap();
                prop_assert_eq!(contrastive_dimension(&rx, &ry, 0.05).unwrap(), d);
            }

            #[test]
            fn bootstrap_indices_reproducible_and_in_range(seed in any::<u64>(), b in 0usize..1000, nx in 1usize..50, ny in 1usize..50) {
                for resampling in [CdeResampling::Pooled, CdeResampling::Foreground] {
                    let (fx, fy) = bootstrap_indices(seed, b, nx, ny, resampling);
                    prop_assert_eq!((fx.len(), fy.len()), (nx, ny));
                    let fg_limit = if resampling == CdeResampling::Pooled { nx + ny } else { nx };
                    prop_assert!(fx.iter().all(|&i| i < fg_limit));
                    prop_assert!(fy.iter().all(|&i| i < nx + ny));
                    prop_assert_eq!((fx, fy), bootstrap_indices(seed, b, nx, ny, resampling));
                }
            }

            #[test]
            fn fisher_p_value_is_probability_and_monotone(
                rho in proptest::collection::vec(0.0f64..1.0, 1..5),
                p in 4usize..200,
                lift in 0.0f64..0.5,
            ) {
                for tail in [FisherTail::Standard, FisherTail::Lower] {
                    let (_, pv, _) = fisher_combine(&rho, p, 0.05, tail).unwrap();
                    prop_assert!((0.0..=1.0).contains(&pv));
                }
                // raising every correlation toward 1 makes alignment more plausible
                let higher: Vec<f64> = rho.iter().map(|r| r + (1.0 - r) * lift).collect();
                let (_, lo, _) = fisher_combine(&rho, p, 0.05, FisherTail::Standard).unwrap();
                let (_, hi, _) = fisher_combine(&higher, p, 0.05, FisherTail::Standard).unwrap();
                prop_assert!(hi >= lo - 1e-12);
            }

            #[test]
            fn log_normal_cdf_monotone(a in -60.0f64..10.0, step in 0.0f64..5.0) {
                let (la, lb) = (log_normal_cdf(a), log_normal_cdf(a + step));
                prop_assert!(la <= 0.0 && la.is_finite());
                prop_assert!(lb >= la);
            }
        }
    }
}

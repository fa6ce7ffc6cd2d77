//! Probabilistic contrastive models.
//!
//! Probabilistic contrastive PCA has a closed-form maximizer of the
//! contrastive log-likelihood `Σ log p(x) - γ Σ log p(y)`. The contrastive
//! latent variable model (`x = Sz + Wt + μ_x + ε`, `y = Sz + μ_y + ε`) is
//! fitted by expectation-maximization on the joint Gaussian likelihood.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::embedding::{Embedding, Provenance};
use crate::error::{CdrError, Result};
use crate::linalg::{center_columns, scatter, sym_eigh, DataMatrix, EigenPairs, SymMatrix};
use crate::linear::check_same_p;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

pub(crate) fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    Cholesky::new(m.clone())
        .map(|c| c.inverse())
        .ok_or_else(|| CdrError::NumericalFailure(format!("{what} is not positive definite")))
}

fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone())
        .ok_or_else(|| CdrError::NumericalFailure("model covariance is not positive definite".into()))
}

/// `Σ_i log N(x_i; 0, cov)` from the scatter `Σ_i x_i x_iᵀ` and the row count.
pub fn gaussian_loglik_from_scatter(scatter: &DMatrix<f64>, n: f64, cov: &DMatrix<f64>) -> Result<f64> {
    let p = cov.nrows() as f64;
    let chol = cholesky(cov)?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = chol.solve(scatter).trace();
    Ok(-0.5 * (n * (p * LN_2PI + logdet) + quad))
}

/// `Σ_i log N(row_i; 0, cov)`. Accepts any number of rows, including none.
pub fn gaussian_loglik(rows: &DMatrix<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    if rows.ncols() != cov.nrows() {
        return Err(CdrError::InvalidArgument(format!(
            "rows have {} columns, covariance is {}x{}",
            rows.ncols(),
            cov.nrows(),
            cov.ncols()
        )));
    }
    if rows.nrows() == 0 {
        return Ok(0.0);
    }
    gaussian_loglik_from_scatter(&rows.tr_mul(rows), rows.nrows() as f64, cov)
}

/// `W Wᵀ + σ² I`.
pub fn low_rank_plus_noise(w: &DMatrix<f64>, sigma2: f64) -> DMatrix<f64> {
    let p = w.nrows();
    w * w.transpose() + DMatrix::identity(p, p) * sigma2
}

/// Probabilistic contrastive PCA estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct PcpcaModel {
    /// p x d loading matrix, columns ordered by eigenvalue.
    pub loadings: DMatrix<f64>,
    pub sigma2: f64,
    pub gamma: f64,
    pub d: usize,
    /// Spectrum of the contrastive scatter `XᵀX - γ YᵀY`, descending.
    pub eigenvalues: DVector<f64>,
}

/// Closed-form PCPCA.
///
/// The likelihood ratio weights every foreground sample by 1 and every
/// background sample by `γ`, so the eigenproblem is on the contrastive
/// scatter `XᵀX - γ YᵀY` (unnormalized) and the effective sample count is
/// `n_x - γ n_y`, which must be positive.
pub fn pcpca_fit(x: &DataMatrix, y: &DataMatrix, gamma: f64, d: usize) -> Result<PcpcaModel> {
    check_same_p(x.p(), y.p())?;
    if !(gamma >= 0.0) {
        return Err(CdrError::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
    }
    let c = scatter(x.as_matrix()).contrast(&scatter(y.as_matrix()), gamma)?;
    let eig = sym_eigh(&c)?;
    pcpca_from_spectrum(&eig, x.n(), y.n(), gamma, d)
}

/// Applies the PCPCA closed form to eigenpairs of a contrastive scatter.
pub fn pcpca_from_spectrum(
    eig: &EigenPairs,
    n_x: usize,
    n_y: usize,
    gamma: f64,
    d: usize,
) -> Result<PcpcaModel> {
    let p = eig.eigenvalues.len();
    if d == 0 || d >= p {
        return Err(CdrError::InvalidArgument(format!("d = {d} must lie in 1..{p}")));
    }
    let n_eff = n_x as f64 - gamma * n_y as f64;
    if !(n_eff > 0.0) {
        return Err(CdrError::InvalidGamma(n_eff));
    }
    let tail: f64 = eig.eigenvalues.iter().skip(d).sum();
    let sigma2 = tail / (n_eff * (p - d) as f64);
    if !(sigma2 > 0.0) {
        return Err(CdrError::DegenerateSpectrum { component: d, value: sigma2 });
    }
    let mut loadings = eig.top(d).into_inner();
    for j in 0..d {
        let under_root = eig.eigenvalues[j] / n_eff - sigma2;
        if under_root < 0.0 {
            return Err(CdrError::DegenerateSpectrum { component: j, value: under_root });
        }
        loadings.column_mut(j).scale_mut(under_root.sqrt());
    }
    Ok(PcpcaModel {
        loadings,
        sigma2,
        gamma,
        d,
        eigenvalues: eig.eigenvalues.clone(),
    })
}

/// `Σ_x log N(x; 0, WWᵀ+σ²I) - γ Σ_y log N(y; 0, WWᵀ+σ²I)`.
pub fn pcpca_contrastive_loglik(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    w: &DMatrix<f64>,
    sigma2: f64,
    gamma: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(CdrError::InvalidArgument(format!("sigma2 must be positive, got {sigma2}")));
    }
    let cov = low_rank_plus_noise(w, sigma2);
    let fg = gaussian_loglik(x, &cov)?;
    let bg = if gamma == 0.0 { 0.0 } else { gaussian_loglik(y, &cov)? };
    Ok(fg - gamma * bg)
}

/// Posterior means `E[z | x] = (WᵀW + σ²I)⁻¹ Wᵀ x` for each row.
pub fn pcpca_transform(model: &PcpcaModel, m: &DMatrix<f64>) -> Result<Embedding> {
    let w = &model.loadings;
    if m.ncols() != w.nrows() {
        return Err(CdrError::InvalidArgument(format!(
            "input has {} columns, model expects {}",
            m.ncols(),
            w.nrows()
        )));
    }
    let mi = spd_inverse(&(w.tr_mul(w) + DMatrix::identity(model.d, model.d) * model.sigma2), "WᵀW + σ²I")?;
    Ok(Embedding {
        values: m * w * mi,
        provenance: Provenance::new("pcpca").with("gamma", model.gamma),
    })
}

/// Stopping rule and seed for the EM fits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions {
    /// Stop once the log-likelihood gain falls below `tol * |loglik|`.
    pub tol: f64,
    pub max_iter: usize,
    /// Seeds the symmetry-breaking jitter of the initialization.
    pub seed: u64,
}

impl Default for EmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
            seed: 0,
        }
    }
}

/// Contrastive latent variable model fitted by EM.
#[derive(Debug, Clone, PartialEq)]
pub struct ClvmModel {
    /// p x k loadings shared by both groups.
    pub shared: DMatrix<f64>,
    /// p x d loadings specific to the foreground.
    pub salient: DMatrix<f64>,
    pub mu_x: DVector<f64>,
    pub mu_y: DVector<f64>,
    pub sigma2: f64,
    /// Joint log-likelihood at the initial point and after every iteration.
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClvmModel {
    pub fn k(&self) -> usize {
        self.shared.ncols()
    }

    pub fn d(&self) -> usize {
        self.salient.ncols()
    }

    /// `SSᵀ + WWᵀ + σ²I`.
    pub fn foreground_covariance(&self) -> DMatrix<f64> {
        low_rank_plus_noise(&stack(&self.shared, &self.salient), self.sigma2)
    }

    /// `SSᵀ + σ²I`.
    pub fn background_covariance(&self) -> DMatrix<f64> {
        low_rank_plus_noise(&self.shared, self.sigma2)
    }
}

pub(crate) fn stack(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let p = a.nrows();
    let mut out = DMatrix::zeros(p, a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}

/// Posterior of the latents of `x = L u + ε`, `u ~ N(0, I)`, `ε ~ N(0, σ²I)`:
/// returns `(M⁻¹, M⁻¹Lᵀ)` with `M = LᵀL + σ²I`, so the mean is `M⁻¹Lᵀx` and
/// the covariance `σ²M⁻¹`.
pub(crate) fn latent_posterior(l: &DMatrix<f64>, sigma2: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let q = l.ncols();
    let m_inv = spd_inverse(&(l.tr_mul(l) + DMatrix::identity(q, q) * sigma2), "LᵀL + σ²I")?;
    let proj = &m_inv * l.transpose();
    Ok((m_inv, proj))
}

/// Expected sufficient statistics of one group's E-step, computed from
/// the data scatter: `Σ E[uuᵀ]` and `Σ x E[u]ᵀ`.
pub(crate) struct EStats {
    pub uu: DMatrix<f64>,
    pub xu: DMatrix<f64>,
}

pub(crate) fn e_step(l: &DMatrix<f64>, sigma2: f64, scatter: &DMatrix<f64>, n: f64) -> Result<EStats> {
    let (m_inv, proj) = latent_posterior(l, sigma2)?;
    let xu = scatter * proj.transpose();
    let uu = &m_inv * sigma2 * n + &proj * &xu;
    Ok(EStats {
        uu: SymMatrix::symmetrize(uu).into_inner(),
        xu,
    })
}

/// `tr(S) - 2 tr(Lᵀ XU) + tr(LᵀL UU)`: expected residual sum of squares.
pub(crate) fn expected_rss(scatter_trace: f64, l: &DMatrix<f64>, st: &EStats) -> f64 {
    scatter_trace - 2.0 * l.component_mul(&st.xu).sum() + (l.tr_mul(l)).component_mul(&st.uu).sum()
}

struct Sufficient {
    sx: DMatrix<f64>,
    sy: DMatrix<f64>,
    nx: f64,
    ny: f64,
}

impl Sufficient {
    fn loglik(&self, s: &DMatrix<f64>, w: &DMatrix<f64>, sigma2: f64) -> Result<f64> {
        let fg = gaussian_loglik_from_scatter(&self.sx, self.nx, &low_rank_plus_noise(&stack(s, w), sigma2))?;
        let bg = gaussian_loglik_from_scatter(&self.sy, self.ny, &low_rank_plus_noise(s, sigma2))?;
        Ok(fg + bg)
    }
}

/// Top eigenvectors of `c` scaled by `sqrt(max(λ - σ², floor))`.
pub(crate) fn scaled_top(eig: &EigenPairs, k: usize, sigma2: f64, floor: f64) -> DMatrix<f64> {
    let mut v = eig.top(k).into_inner();
    for j in 0..k {
        v.column_mut(j).scale_mut((eig.eigenvalues[j] - sigma2).max(floor).sqrt());
    }
    v
}

pub(crate) fn jitter(m: &mut DMatrix<f64>, scale: f64, rng: &mut ChaCha20Rng) {
    for v in m.iter_mut() {
        *v += scale * rng.sample::<f64, _>(StandardNormal);
    }
}

/// Initial `(S, W, σ²)`: S from PCA of the pooled data, W from PCA of the
/// foreground residual after removing span(S), σ² from the remaining
/// foreground variance per dimension.
pub(crate) fn init_shared_salient(
    sx: &DMatrix<f64>,
    sy: &DMatrix<f64>,
    nx: f64,
    ny: f64,
    k: usize,
    d: usize,
    seed: u64,
) -> Result<(DMatrix<f64>, DMatrix<f64>, f64)> {
    let p = sx.nrows();
    let cx = sx / nx;
    let pooled = SymMatrix::symmetrize((sx + sy) / (nx + ny));
    let pooled_eig = sym_eigh(&pooled)?;
    let us = pooled_eig.top(k).into_inner();
    let resid_proj = DMatrix::identity(p, p) - &us * us.transpose();
    let resid = SymMatrix::symmetrize(&resid_proj * &cx * &resid_proj);
    let resid_eig = sym_eigh(&resid)?;
    let scale = (cx.trace() / p as f64).max(f64::MIN_POSITIVE);
    let mut sigma2 = if p > k + d {
        resid_eig.eigenvalues.iter().skip(d).sum::<f64>() / (p - k - d) as f64
    } else {
        1e-3 * scale
    };
    if !(sigma2 > 1e-6 * scale) {
        sigma2 = 1e-6 * scale;
    }
    let floor = 1e-3 * scale;
    let mut s = scaled_top(&pooled_eig, k, sigma2, floor);
    let mut w = scaled_top(&resid_eig, d, sigma2, floor);
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let jit = 1e-3 * scale.sqrt();
    jitter(&mut s, jit, &mut rng);
    jitter(&mut w, jit, &mut rng);
    Ok((s, w, sigma2))
}

/// Fits the contrastive latent variable model by EM.
///
/// Means are the sample means of each group. The E-step uses the exact
/// Gaussian posteriors of `(z, t)` given `x` and of `z` given `y`; the
/// M-step solves jointly for `[S W]` (S is shared by both groups) and then
/// updates σ². Never panics on non-convergence: `converged` reports it.
pub fn clvm_fit_em(x: &DataMatrix, y: &DataMatrix, k: usize, d: usize, opts: &EmOptions) -> Result<ClvmModel> {
    check_same_p(x.p(), y.p())?;
    let p = x.p();
    if d == 0 || k + d > p {
        return Err(CdrError::InvalidArgument(format!(
            "need d >= 1 and k + d <= p, got k = {k}, d = {d}, p = {p}"
        )));
    }
    let (xc, mu_x) = center_columns(x)?;
    let (yc, mu_y) = center_columns(y)?;
    let suff = Sufficient {
        sx: scatter(xc.as_matrix()).into_inner(),
        sy: scatter(yc.as_matrix()).into_inner(),
        nx: x.n() as f64,
        ny: y.n() as f64,
    };
    let (mut s, mut w, mut sigma2) = init_shared_salient(&suff.sx, &suff.sy, suff.nx, suff.ny, k, d, opts.seed)?;
    let tr_sx = suff.sx.trace();
    let tr_sy = suff.sy.trace();
    let q = k + d;

    let mut trace = vec![suff.loglik(&s, &w, sigma2)?];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let l = stack(&s, &w);
        let fx = e_step(&l, sigma2, &suff.sx, suff.nx)?;
        let mut a = fx.uu.clone();
        let mut b = fx.xu.clone();
        let fy = if k > 0 {
            let fy = e_step(&s, sigma2, &suff.sy, suff.ny)?;
            let mut block = a.view_mut((0, 0), (k, k));
            block += &fy.uu;
            let mut cols = b.columns_mut(0, k);
            cols += &fy.xu;
            Some(fy)
        } else {
            None
        };
        // [S W] = B A⁻¹, solved as A Lᵀ = Bᵀ
        let a_chol = Cholesky::new(SymMatrix::symmetrize(a).into_inner())
            .ok_or_else(|| CdrError::NumericalFailure("EM normal equations are singular".into()))?;
        let l_new = a_chol.solve(&b.transpose()).transpose();
        let s_new = l_new.columns(0, k).into_owned();
        let w_new = l_new.columns(k, d).into_owned();
        let mut rss = expected_rss(tr_sx, &l_new, &fx);
        if let Some(fy) = &fy {
            rss += expected_rss(tr_sy, &s_new, fy);
        } else {
            rss += tr_sy;
        }
        let sigma2_new = (rss / (p as f64 * (suff.nx + suff.ny))).max(f64::MIN_POSITIVE);
        debug_assert_eq!(l_new.ncols(), q);

        let ll = suff.loglik(&s_new, &w_new, sigma2_new)?;
        let prev = *trace.last().expect("trace starts non-empty");
        s = s_new;
        w = w_new;
        sigma2 = sigma2_new;
        trace.push(ll);
        if ll - prev < opts.tol * prev.abs() {
            converged = true;
            break;
        }
    }
    Ok(ClvmModel {
        shared: s,
        salient: w,
        mu_x,
        mu_y,
        sigma2,
        loglik_trace: trace,
        iterations,
        converged,
    })
}

/// Posterior means `E[t | x]` of the foreground-specific latents for rows
/// of `x` centered with the training foreground mean.
pub fn clvm_transform(model: &ClvmModel, x: &DMatrix<f64>) -> Result<Embedding> {
    let l = stack(&model.shared, &model.salient);
    if x.ncols() != l.nrows() {
        return Err(CdrError::InvalidArgument(format!(
            "input has {} columns, model expects {}",
            x.ncols(),
            l.nrows()
        )));
    }
    let (_, proj) = latent_posterior(&l, model.sigma2)?;
    let post = x * proj.transpose();
    Ok(Embedding {
        values: post.columns(model.k(), model.d()).into_owned(),
        provenance: Provenance::new("clvm").with("k", model.k() as f64),
    })
}

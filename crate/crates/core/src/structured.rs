//! Contrastive reduction for data with extra structure: curves on a common
//! grid (CFPCA), a response observed in both groups (CIR), and a response
//! observed only in the foreground (CLR).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{Embedding, Provenance};
use crate::error::{CdrError, Result};
use crate::linalg::{
    center_columns, covariance, default_ridge, orthonormality_defect, random_stiefel, scatter,
    stiefel_qr_retract, sym_eigh, DataMatrix, StiefelPoint, SymMatrix,
};
use crate::linear::{check_dim, check_same_p};
use crate::model::{
    e_step, expected_rss, gaussian_loglik_from_scatter, init_shared_salient, latent_posterior,
    low_rank_plus_noise, stack, EmOptions,
};

/// Curves sampled on one shared, strictly increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveSet {
    grid: Vec<f64>,
    /// n x T, one curve per row.
    values: DMatrix<f64>,
}

impl CurveSet {
    pub fn new(grid: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        if grid.len() != values.ncols() {
            return Err(CdrError::InvalidArgument(format!(
                "grid has {} points but curves have {} samples",
                grid.len(),
                values.ncols()
            )));
        }
        if grid.len() < 2 {
            return Err(CdrError::InvalidArgument("grid needs at least 2 points".into()));
        }
        if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CdrError::InvalidArgument("grid must be finite and strictly increasing".into()));
        }
        DataMatrix::new(values.clone())?;
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Grid spacing, or [`CdrError::UnsupportedGrid`] when the spacing varies
    /// by more than 1e-9 relative.
    pub fn uniform_spacing(&self) -> Result<f64> {
        let dt = self.grid[1] - self.grid[0];
        for w in self.grid.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.abs() {
                return Err(CdrError::UnsupportedGrid);
            }
        }
        Ok(dt)
    }
}

/// Discretized contrastive eigenfunctions.
#[derive(Debug, Clone, PartialEq)]
pub struct CfpcaModel {
    pub gamma: f64,
    pub d: usize,
    /// T x d, normalized so that `w * ‖v‖² = 1`.
    pub eigenfunctions: DMatrix<f64>,
    /// Spectrum of `w C`, descending.
    pub eigenvalues: DVector<f64>,
    /// Quadrature weight (grid spacing).
    pub weight: f64,
    pub mean_curve: DVector<f64>,
}

/// Solves `w C v = λ v` with `C = C_X - γ C_Y` built from centered curves.
pub fn cfpca_fit(fg: &CurveSet, bg: &CurveSet, gamma: f64, d: usize) -> Result<CfpcaModel> {
    let t = fg.grid.len();
    if bg.grid.len() != t {
        return Err(CdrError::InvalidArgument("foreground and background grids differ".into()));
    }
    let span = (fg.grid[t - 1] - fg.grid[0]).abs();
    if fg.grid.iter().zip(&bg.grid).any(|(a, b)| (a - b).abs() > 1e-12 * span) {
        return Err(CdrError::InvalidArgument("foreground and background grids differ".into()));
    }
    let w = fg.uniform_spacing()?;
    check_dim(d, t)?;
    if !(gamma >= 0.0) {
        return Err(CdrError::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
    }
    let (xc, mean_curve) = center_columns(&DataMatrix::new(fg.values.clone())?)?;
    let (yc, _) = center_columns(&DataMatrix::new(bg.values.clone())?)?;
    let c = covariance(&xc).contrast(&covariance(&yc), gamma)?;
    let op = SymMatrix::symmetrize(c.into_inner() * w);
    let eig = sym_eigh(&op)?;
    let eigenfunctions = eig.top(d).into_inner() / w.sqrt();
    Ok(CfpcaModel {
        gamma,
        d,
        eigenfunctions,
        eigenvalues: eig.eigenvalues,
        weight: w,
        mean_curve,
    })
}

/// Scores `∫ x(t) v(t) dt ≈ w Σ_k x(t_k) v(t_k)` of curves centered with
/// the training mean curve.
pub fn cfpca_scores(model: &CfpcaModel, curves: &DMatrix<f64>) -> Result<Embedding> {
    if curves.ncols() != model.eigenfunctions.nrows() {
        return Err(CdrError::InvalidArgument(format!(
            "curves have {} samples, model grid has {}",
            curves.ncols(),
            model.eigenfunctions.nrows()
        )));
    }
    Ok(Embedding {
        values: curves * &model.eigenfunctions * model.weight,
        provenance: Provenance::new("cfpca").with("gamma", model.gamma),
    })
}

/// Slice means and weights of an inverse regression curve.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceMoments {
    /// H x p, slice means as rows.
    pub means: DMatrix<f64>,
    pub weights: Vec<f64>,
    /// `Σ_h w_h m_h m_hᵀ`.
    pub moment: SymMatrix,
}

/// Default slice count `min(10, ⌊n/20⌋)`, at least 2.
pub fn default_slices(n: usize) -> usize {
    (n / 20).clamp(2, 10)
}

/// Equal-count slicing of the samples ordered by response (stable: ties
/// keep sample order). The first `n mod H` slices receive one extra sample.
pub fn sir_slice_moments(x: &DMatrix<f64>, y: &[f64], h: usize) -> Result<SliceMoments> {
    let n = x.nrows();
    if y.len() != n {
        return Err(CdrError::InvalidArgument(format!(
            "response has {} entries for {n} samples",
            y.len()
        )));
    }
    if h < 2 || n < 2 * h {
        return Err(CdrError::InvalidArgument(format!(
            "need H >= 2 and n >= 2H, got H = {h}, n = {n}"
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(CdrError::InvalidData("non-finite response".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Err(CdrError::DegenerateResponse);
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    let p = x.ncols();
    let (base, extra) = (n / h, n % h);
    let mut means = DMatrix::zeros(h, p);
    let mut weights = Vec::with_capacity(h);
    let mut start = 0;
    for s in 0..h {
        let size = base + usize::from(s < extra);
        let mut row = means.row_mut(s);
        for &i in &order[start..start + size] {
            row += x.row(i);
        }
        row /= size as f64;
        weights.push(size as f64 / n as f64);
        start += size;
    }
    let mut weighted = means.clone();
    for (s, mut row) in weighted.row_iter_mut().enumerate() {
        row *= weights[s];
    }
    let moment = SymMatrix::symmetrize(weighted.tr_mul(&means));
    Ok(SliceMoments {
        means,
        weights,
        moment,
    })
}

/// `-tr(VᵀAV (VᵀBV)⁻¹) + γ tr(VᵀÃV (VᵀB̃V)⁻¹)` with `A = C_X M C_X`,
/// `B = C_X²` for the foreground and likewise for the background.
#[derive(Debug, Clone, PartialEq)]
pub struct CirObjective {
    pub a_fg: DMatrix<f64>,
    pub b_fg: DMatrix<f64>,
    pub a_bg: DMatrix<f64>,
    pub b_bg: DMatrix<f64>,
    pub gamma: f64,
}

/// `(tr(VᵀAV G⁻¹), ∇)` with `G = VᵀBV`; the gradient is
/// `2AVG⁻¹ - 2BVG⁻¹HG⁻¹`, `H = VᵀAV`.
fn ratio_trace_and_grad(a: &DMatrix<f64>, b: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
    let av = a * v;
    let bv = b * v;
    let h = v.tr_mul(&av);
    let g = v.tr_mul(&bv);
    let chol = ridged_cholesky(&g)?;
    let gih = chol.solve(&h);
    let value = gih.trace();
    let av_gi = chol.solve(&av.transpose()).transpose();
    let gihgi = chol.solve(&gih.transpose()).transpose();
    let grad = (av_gi - bv * gihgi) * 2.0;
    Ok((value, grad))
}

fn ridged_cholesky(g: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let g = SymMatrix::symmetrize(g.clone()).into_inner();
    if let Some(c) = Cholesky::new(g.clone()) {
        return Ok(c);
    }
    let d = g.nrows();
    let mut ridge = 1e-10 * g.trace().abs().max(f64::MIN_POSITIVE);
    for _ in 0..12 {
        if let Some(c) = Cholesky::new(&g + DMatrix::identity(d, d) * ridge) {
            return Ok(c);
        }
        ridge *= 10.0;
    }
    Err(CdrError::NumericalFailure("VᵀC²V stayed singular after ridge escalation".into()))
}

impl CirObjective {
    pub fn loss(&self, v: &DMatrix<f64>) -> Result<f64> {
        Ok(self.loss_and_gradient(v)?.0)
    }

    /// Loss and its Euclidean gradient.
    pub fn loss_and_gradient(&self, v: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>)> {
        let (f, gf) = ratio_trace_and_grad(&self.a_fg, &self.b_fg, v)?;
        if self.gamma == 0.0 {
            return Ok((-f, -gf));
        }
        let (b, gb) = ratio_trace_and_grad(&self.a_bg, &self.b_bg, v)?;
        Ok((-f + self.gamma * b, gb * self.gamma - gf))
    }
}

/// Riemannian gradient on St(p, d): `G - V sym(VᵀG)`.
pub fn stiefel_tangent_projection(v: &DMatrix<f64>, g: &DMatrix<f64>) -> DMatrix<f64> {
    let vtg = v.tr_mul(g);
    let sym = (&vtg + vtg.transpose()) * 0.5;
    g - v * sym
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CirOptions {
    pub max_iter: usize,
    /// Initial trial step of the line search.
    pub step0: f64,
    /// Stop once `‖grad‖_F <= tol * (1 + |loss|)`.
    pub tol: f64,
    pub seed: u64,
    /// Foreground and background slice counts; default `min(10, ⌊n/20⌋)`.
    pub slices_fg: Option<usize>,
    pub slices_bg: Option<usize>,
}

impl Default for CirOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            step0: 1.0,
            tol: 1e-8,
            seed: 0,
            slices_fg: None,
            slices_bg: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CirStart {
    Spectral,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CirModel {
    pub gamma: f64,
    pub d: usize,
    pub loadings: StiefelPoint,
    pub slices_fg: usize,
    pub slices_bg: usize,
    /// Loss at the start and after every accepted step.
    pub objective_trace: Vec<f64>,
    /// `max |VᵀV - I|` of every recorded iterate.
    pub orthogonality_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub start: CirStart,
    pub objective: CirObjective,
}

struct CirRun {
    v: StiefelPoint,
    trace: Vec<f64>,
    ortho: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Projected gradient descent with QR retraction and Armijo backtracking.
fn descend(obj: &CirObjective, start: StiefelPoint, opts: &CirOptions) -> Result<CirRun> {
    const ARMIJO: f64 = 1e-4;
    let mut v = start;
    let (mut loss, mut grad) = obj.loss_and_gradient(v.as_matrix())?;
    let mut trace = vec![loss];
    let mut ortho = vec![orthonormality_defect(v.as_matrix())];
    let mut step = opts.step0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let xi = stiefel_tangent_projection(v.as_matrix(), &grad);
        let g2 = xi.norm_squared();
        if g2.sqrt() <= opts.tol * (1.0 + loss.abs()) {
            converged = true;
            break;
        }
        iterations += 1;
        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..60 {
            let cand = stiefel_qr_retract(&(v.as_matrix() - &xi * alpha))?;
            if let Ok((l, g)) = obj.loss_and_gradient(cand.as_matrix()) {
                if l <= loss - ARMIJO * alpha * g2 {
                    accepted = Some((cand, l, g));
                    break;
                }
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((cand, l, g)) => {
                v = cand;
                loss = l;
                grad = g;
                trace.push(loss);
                ortho.push(orthonormality_defect(v.as_matrix()));
                step = alpha * 2.0;
            }
            None => {
                // no decrease representable at this precision
                converged = true;
                break;
            }
        }
    }
    Ok(CirRun {
        v,
        trace,
        ortho,
        iterations,
        converged,
    })
}

/// Builds the CIR objective from centered data.
pub fn cir_objective(
    x: &DataMatrix,
    y: &[f64],
    xb: &DataMatrix,
    yb: &[f64],
    gamma: f64,
    slices_fg: usize,
    slices_bg: usize,
) -> Result<CirObjective> {
    check_same_p(x.p(), xb.p())?;
    let cx = covariance(x).into_inner();
    let cb = covariance(xb).into_inner();
    let m = sir_slice_moments(x.as_matrix(), y, slices_fg)?;
    let mb = sir_slice_moments(xb.as_matrix(), yb, slices_bg)?;
    Ok(CirObjective {
        a_fg: SymMatrix::symmetrize(&cx * m.moment.as_matrix() * &cx).into_inner(),
        b_fg: SymMatrix::symmetrize(&cx * &cx).into_inner(),
        a_bg: SymMatrix::symmetrize(&cb * mb.moment.as_matrix() * &cb).into_inner(),
        b_bg: SymMatrix::symmetrize(&cb * &cb).into_inner(),
        gamma,
    })
}

/// Contrastive inverse regression.
///
/// Inputs are centered internally. Two starts are run: a spectral start
/// `orth(C_X⁻¹ U)` with `U` the top eigenvectors of `M - γM̃` (the slice
/// moment matrices), which is the exact solution at γ = 0, and a random
/// Stiefel point drawn from `seed`. The lower final loss wins; ties (within
/// 1e-12 relative) go to the spectral start.
pub fn cir_fit(
    x: &DataMatrix,
    y: &[f64],
    xb: &DataMatrix,
    yb: &[f64],
    gamma: f64,
    d: usize,
    opts: &CirOptions,
) -> Result<CirModel> {
    check_same_p(x.p(), xb.p())?;
    check_dim(d, x.p())?;
    if !(gamma >= 0.0) {
        return Err(CdrError::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
    }
    let hf = opts.slices_fg.unwrap_or_else(|| default_slices(x.n()));
    let hb = opts.slices_bg.unwrap_or_else(|| default_slices(xb.n()));
    let (xc, _) = center_columns(x)?;
    let (bc, _) = center_columns(xb)?;
    let obj = cir_objective(&xc, y, &bc, yb, gamma, hf, hb)?;

    let spectral = {
        let m = sir_slice_moments(xc.as_matrix(), y, hf)?.moment;
        let mb = sir_slice_moments(bc.as_matrix(), yb, hb)?.moment;
        let u = sym_eigh(&m.contrast(&mb, gamma)?)?.top(d).into_inner();
        let cx = covariance(&xc);
        let ridge = default_ridge(&cx);
        let p = cx.dim();
        let chol = Cholesky::new(cx.as_matrix() + DMatrix::identity(p, p) * ridge)
            .ok_or_else(|| CdrError::SingularMatrix("foreground covariance".into()))?;
        stiefel_qr_retract(&chol.solve(&u))?
    };
    let random = random_stiefel(x.p(), d, &mut ChaCha20Rng::seed_from_u64(opts.seed));

    let a = descend(&obj, spectral, opts)?;
    let b = descend(&obj, random, opts)?;
    let la = *a.trace.last().expect("non-empty");
    let lb = *b.trace.last().expect("non-empty");
    // losses equal to rounding count as a tie
    let (run, start) = if lb < la - 1e-12 * la.abs().max(1.0) {
        (b, CirStart::Random)
    } else {
        (a, CirStart::Spectral)
    };
    Ok(CirModel {
        gamma,
        d,
        loadings: run.v,
        slices_fg: hf,
        slices_bg: hb,
        objective_trace: run.trace,
        orthogonality_trace: run.ortho,
        iterations: run.iterations,
        converged: run.converged,
        start,
        objective: obj,
    })
}

pub fn cir_transform(model: &CirModel, m: &DMatrix<f64>) -> Result<Embedding> {
    Ok(Embedding {
        values: crate::linear::project(&model.loadings, m)?,
        provenance: Provenance::new("cir").with("gamma", model.gamma),
    })
}

/// Contrastive linear regression fitted by EM.
#[derive(Debug, Clone, PartialEq)]
pub struct ClrModel {
    /// p x k shared loadings.
    pub shared: DMatrix<f64>,
    /// p x d foreground-specific loadings.
    pub salient: DMatrix<f64>,
    pub beta: DVector<f64>,
    pub sigma2: f64,
    pub tau2: f64,
    pub mu_x: DVector<f64>,
    pub mu_y: DVector<f64>,
    pub mu_r: f64,
    pub loglik_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl ClrModel {
    pub fn k(&self) -> usize {
        self.shared.ncols()
    }

    pub fn d(&self) -> usize {
        self.salient.ncols()
    }
}

struct ClrStats {
    /// (p+1) x (p+1) scatter of the centered foreground (x, r).
    so: DMatrix<f64>,
    sy: DMatrix<f64>,
    nx: f64,
    ny: f64,
}

fn clr_joint_loading(s: &DMatrix<f64>, w: &DMatrix<f64>, beta: &DVector<f64>) -> DMatrix<f64> {
    let (p, k, d) = (s.nrows(), s.ncols(), w.ncols());
    let mut l = DMatrix::zeros(p + 1, k + d);
    l.view_mut((0, 0), (p, k)).copy_from(s);
    l.view_mut((0, k), (p, d)).copy_from(w);
    l.view_mut((p, k), (1, d)).copy_from(&beta.transpose());
    l
}

fn clr_noise(p: usize, sigma2: f64, tau2: f64) -> DVector<f64> {
    let mut psi = DVector::from_element(p + 1, sigma2);
    psi[p] = tau2;
    psi
}

impl ClrStats {
    fn loglik(&self, s: &DMatrix<f64>, w: &DMatrix<f64>, beta: &DVector<f64>, sigma2: f64, tau2: f64) -> Result<f64> {
        let p = s.nrows();
        let l = clr_joint_loading(s, w, beta);
        let cov = &l * l.transpose() + DMatrix::from_diagonal(&clr_noise(p, sigma2, tau2));
        let fg = gaussian_loglik_from_scatter(&self.so, self.nx, &cov)?;
        let bg = gaussian_loglik_from_scatter(&self.sy, self.ny, &low_rank_plus_noise(s, sigma2))?;
        Ok(fg + bg)
    }
}

/// Contrastive linear regression with shared dimension equal to `d`.
pub fn clr_fit(x: &DataMatrix, r: &[f64], y: &DataMatrix, d: usize, opts: &EmOptions) -> Result<ClrModel> {
    clr_fit_with_shared(x, r, y, d, d, opts)
}

/// EM for `x = S z_a + W t + ε_a`, `y = S z_b + ε_b`, `r = βᵀt + η` with
/// `Var ε = σ² I`, `Var η = τ²`.
pub fn clr_fit_with_shared(
    x: &DataMatrix,
    r: &[f64],
    y: &DataMatrix,
    k: usize,
    d: usize,
    opts: &EmOptions,
) -> Result<ClrModel> {
    check_same_p(x.p(), y.p())?;
    let p = x.p();
    if r.len() != x.n() {
        return Err(CdrError::InvalidArgument(format!(
            "response has {} entries for {} foreground samples",
            r.len(),
            x.n()
        )));
    }
    if d == 0 || k + d > p {
        return Err(CdrError::InvalidArgument(format!(
            "need d >= 1 and k + d <= p, got k = {k}, d = {d}, p = {p}"
        )));
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(CdrError::InvalidData("non-finite response".into()));
    }
    let (xc, mu_x) = center_columns(x)?;
    let (yc, mu_y) = center_columns(y)?;
    let mu_r = r.iter().sum::<f64>() / r.len() as f64;
    let rc = DVector::from_iterator(r.len(), r.iter().map(|v| v - mu_r));
    let mut joint = DMatrix::zeros(x.n(), p + 1);
    joint.columns_mut(0, p).copy_from(xc.as_matrix());
    joint.column_mut(p).copy_from(&rc);
    let stats = ClrStats {
        so: scatter(&joint).into_inner(),
        sy: scatter(yc.as_matrix()).into_inner(),
        nx: x.n() as f64,
        ny: y.n() as f64,
    };
    let sx = stats.so.view((0, 0), (p, p)).into_owned();
    let (mut s, mut w, mut sigma2) = init_shared_salient(&sx, &stats.sy, stats.nx, stats.ny, k, d, opts.seed)?;

    // β from regressing r on the initial posterior means of t
    let (mut beta, mut tau2) = {
        let l = stack(&s, &w);
        let (_, proj) = latent_posterior(&l, sigma2)?;
        let pt = proj.rows(k, d).into_owned();
        let t = xc.as_matrix() * pt.transpose();
        let tt = t.tr_mul(&t) + DMatrix::identity(d, d) * 1e-9 * stats.nx;
        let tr = t.tr_mul(&rc);
        let beta = Cholesky::new(tt)
            .map(|c| c.solve(&tr))
            .unwrap_or_else(|| DVector::zeros(d));
        let resid = &rc - &t * &beta;
        let var_r = rc.norm_squared() / stats.nx;
        let tau2 = (resid.norm_squared() / stats.nx).max(1e-6 * var_r.max(f64::MIN_POSITIVE));
        (beta, tau2)
    };

    let tr_sx = sx.trace();
    let tr_sy = stats.sy.trace();
    let srr = stats.so[(p, p)];
    let mut trace = vec![stats.loglik(&s, &w, &beta, sigma2, tau2)?];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        // foreground E-step on the joint observation (x, r)
        let lo = clr_joint_loading(&s, &w, &beta);
        let psi_inv = clr_noise(p, sigma2, tau2).map(|v| 1.0 / v);
        let lt_psi = {
            let mut m = lo.transpose();
            for (j, mut col) in m.column_iter_mut().enumerate() {
                col *= psi_inv[j];
            }
            m
        };
        let q = k + d;
        let m_mat = DMatrix::identity(q, q) + &lt_psi * &lo;
        let m_chol = Cholesky::new(SymMatrix::symmetrize(m_mat).into_inner())
            .ok_or_else(|| CdrError::NumericalFailure("CLR posterior precision is singular".into()))?;
        let post_cov = m_chol.inverse();
        let proj = m_chol.solve(&lt_psi);
        let ou = &stats.so * proj.transpose();
        let uu = SymMatrix::symmetrize(&post_cov * stats.nx + &proj * &ou).into_inner();
        let xu = ou.rows(0, p).into_owned();
        let ru = ou.row(p).transpose();

        let mut a = uu.clone();
        let mut b = xu.clone();
        let fy = if k > 0 {
            let fy = e_step(&s, sigma2, &stats.sy, stats.ny)?;
            let mut block = a.view_mut((0, 0), (k, k));
            block += &fy.uu;
            let mut cols = b.columns_mut(0, k);
            cols += &fy.xu;
            Some(fy)
        } else {
            None
        };
        let a_chol = Cholesky::new(SymMatrix::symmetrize(a).into_inner())
            .ok_or_else(|| CdrError::NumericalFailure("EM normal equations are singular".into()))?;
        let l_new = a_chol.solve(&b.transpose()).transpose();
        let s_new = l_new.columns(0, k).into_owned();
        let w_new = l_new.columns(k, d).into_owned();

        let tt = uu.view((k, k), (d, d)).into_owned();
        let rt = ru.rows(k, d).into_owned();
        let tt_chol = Cholesky::new(tt.clone())
            .ok_or_else(|| CdrError::NumericalFailure("E[ttᵀ] is singular".into()))?;
        let beta_new = tt_chol.solve(&rt);
        let tau2_new = ((srr - 2.0 * beta_new.dot(&rt) + (beta_new.transpose() * &tt * &beta_new)[0]) / stats.nx)
            .max(f64::MIN_POSITIVE);

        let fx = crate::model::EStats { uu: uu.clone(), xu };
        let mut rss = expected_rss(tr_sx, &l_new, &fx);
        rss += match &fy {
            Some(fy) => expected_rss(tr_sy, &s_new, fy),
            None => tr_sy,
        };
        let sigma2_new = (rss / (p as f64 * (stats.nx + stats.ny))).max(f64::MIN_POSITIVE);

        let ll = stats.loglik(&s_new, &w_new, &beta_new, sigma2_new, tau2_new)?;
        let prev = *trace.last().expect("trace starts non-empty");
        s = s_new;
        w = w_new;
        beta = beta_new;
        sigma2 = sigma2_new;
        tau2 = tau2_new;
        trace.push(ll);
        if ll - prev < opts.tol * prev.abs() {
            converged = true;
            break;
        }
    }
    Ok(ClrModel {
        shared: s,
        salient: w,
        beta,
        sigma2,
        tau2,
        mu_x,
        mu_y,
        mu_r,
        loglik_trace: trace,
        iterations,
        converged,
    })
}

/// `E[t | x]` for rows of `x` centered with the training foreground mean.
pub fn clr_latent_means(model: &ClrModel, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = stack(&model.shared, &model.salient);
    if x.ncols() != l.nrows() {
        return Err(CdrError::InvalidArgument(format!(
            "input has {} columns, model expects {}",
            x.ncols(),
            l.nrows()
        )));
    }
    let (_, proj) = latent_posterior(&l, model.sigma2)?;
    Ok((x * proj.transpose()).columns(model.k(), model.d()).into_owned())
}

/// Predicted response `βᵀ E[t | x]` for one centered observation, on the
/// centered response scale (add `mu_r` for the raw scale).
pub fn clr_predict(model: &ClrModel, x_new: &DVector<f64>) -> Result<f64> {
    let t = clr_latent_means(model, &DMatrix::from_row_slice(1, x_new.len(), x_new.as_slice()))?;
    Ok((t * &model.beta)[0])
}

/// Row-wise [`clr_predict`].
pub fn clr_predict_rows(model: &ClrModel, x: &DMatrix<f64>) -> Result<DVector<f64>> {
    Ok(clr_latent_means(model, x)? * &model.beta)
}

pub fn clr_transform(model: &ClrModel, x: &DMatrix<f64>) -> Result<Embedding> {
    Ok(Embedding {
        values: clr_latent_means(model, x)?,
        provenance: Provenance::new("clr").with("k", model.k() as f64),
    })
}

//! Synthetic generators with known ground truth, and brute-force oracles.
//!
//! All randomness comes from `ChaCha20Rng` seeded with `seed_from_u64`, so a
//! spec produces the same data on every platform.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CdrError, Result};
use crate::linalg::{random_stiefel, SymMatrix};
use crate::linear::GcpcaVariant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorModel {
    /// `x = S z + W t + σε`, `y = S z + σε`.
    Clvm,
    /// `x = S_x z + σε`, `y = S_y z + σε` with `overlap` shared columns.
    CdeSubspaces,
    /// CLVM plus a foreground response `r = βᵀt + τη`.
    Clr,
    /// Shared low-rank data; the foreground gets extra variance on `planted`.
    PlantedColumns,
    /// Background curves `a sin(2πt)`, foreground adds `b sin(4πt)`.
    PlantedCurves,
    /// Response driven by a direction that only the foreground uses.
    SupervisedContrast,
    /// Foreground plus two candidate backgrounds: one with nested loadings
    /// and one with a loading orthogonal to the foreground space.
    BackgroundCandidates,
}

fn default_one() -> usize {
    1
}

fn default_shared_strength() -> f64 {
    1.0
}

fn default_signal() -> f64 {
    2.0
}

fn default_grid_len() -> usize {
    64
}

/// Parameters of a synthetic dataset. Loadings are orthonormal columns
/// scaled by `shared_strength` (shared/background part) and `signal`
/// (foreground-specific part).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub model: GeneratorModel,
    pub p: usize,
    #[serde(default)]
    pub k: usize,
    #[serde(default = "default_one")]
    pub d: usize,
    pub n_x: usize,
    pub n_y: usize,
    #[serde(default)]
    pub sigma: f64,
    #[serde(default)]
    pub tau: f64,
    pub seed: u64,
    /// Shared columns of the two subspaces (`cde_subspaces`).
    #[serde(default)]
    pub overlap: usize,
    /// Background subspace dimension (`cde_subspaces`); defaults to `d`.
    #[serde(default)]
    pub d_y: Option<usize>,
    #[serde(default = "default_shared_strength")]
    pub shared_strength: f64,
    #[serde(default = "default_signal")]
    pub signal: f64,
    /// 0-based planted feature indices (`planted_columns`).
    #[serde(default)]
    pub planted: Vec<usize>,
    /// Grid length (`planted_curves`).
    #[serde(default = "default_grid_len")]
    pub grid_len: usize,
}

impl GeneratorSpec {
    /// A spec with the documented defaults for everything but the sizes.
    pub fn new(model: GeneratorModel, p: usize, n_x: usize, n_y: usize, seed: u64) -> Self {
        Self {
            model,
            p,
            k: 0,
            d: 1,
            n_x,
            n_y,
            sigma: 0.0,
            tau: 0.0,
            seed,
            overlap: 0,
            d_y: None,
            shared_strength: default_shared_strength(),
            signal: default_signal(),
            planted: Vec::new(),
            grid_len: default_grid_len(),
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CdrError::InvalidArgument(m));
        if self.p == 0 || self.n_x < 2 || self.n_y < 2 {
            return bad("need p >= 1 and at least 2 samples per group".into());
        }
        for (name, v) in [
            ("sigma", self.sigma),
            ("tau", self.tau),
            ("shared_strength", self.shared_strength),
            ("signal", self.signal),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be finite and >= 0"));
            }
        }
        match self.model {
            GeneratorModel::Clvm | GeneratorModel::Clr => {
                if self.d == 0 || self.k + self.d > self.p {
                    return bad(format!("need d >= 1 and k + d <= p, got k={}, d={}", self.k, self.d));
                }
            }
            GeneratorModel::CdeSubspaces => {
                let dy = self.d_y.unwrap_or(self.d);
                if self.d == 0 || dy == 0 || self.overlap > self.d.min(dy) || self.d + dy - self.overlap > self.p {
                    return bad("need 1 <= d, d_y, overlap <= min(d, d_y) and d + d_y - overlap <= p".into());
                }
            }
            GeneratorModel::PlantedColumns => {
                if self.k > self.p || self.planted.iter().any(|&i| i >= self.p) {
                    return bad("planted indices and k must fit inside p".into());
                }
            }
            GeneratorModel::PlantedCurves => {
                if self.grid_len < 2 {
                    return bad("grid_len must be >= 2".into());
                }
            }
            GeneratorModel::SupervisedContrast => {
                if self.p < 2 {
                    return bad("supervised_contrast needs p >= 2".into());
                }
            }
            GeneratorModel::BackgroundCandidates => {
                if self.k == 0 || self.k + self.d >= self.p {
                    return bad("need k >= 1 and k + d < p".into());
                }
            }
        }
        Ok(())
    }
}

/// Generating parameters; kept next to the data and never used by fits.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroundTruth {
    /// p x k shared loadings.
    pub shared: Option<DMatrix<f64>>,
    /// p x d foreground-specific loadings (or response directions).
    pub salient: Option<DMatrix<f64>>,
    pub beta: Option<DVector<f64>>,
    pub planted_indices: Vec<usize>,
    pub contrastive_dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub foreground: DMatrix<f64>,
    pub background: DMatrix<f64>,
    pub response_fg: Option<Vec<f64>>,
    pub response_bg: Option<Vec<f64>>,
    /// Time grid for curve data.
    pub grid: Option<Vec<f64>>,
    /// Extra candidate backgrounds (`background_candidates`).
    pub candidates: Vec<DMatrix<f64>>,
    pub truth: GroundTruth,
}

fn gaussian(n: usize, p: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

/// `Z Lᵀ + σE` with standard normal `Z` (n x q) and `E` (n x p).
fn latent_sample(n: usize, l: &DMatrix<f64>, sigma: f64, rng: &mut ChaCha20Rng) -> (DMatrix<f64>, DMatrix<f64>) {
    let z = gaussian(n, l.ncols(), rng);
    let noise = gaussian(n, l.nrows(), rng);
    (&z * l.transpose() + noise * sigma, z)
}

fn scaled_columns(q: &DMatrix<f64>, start: usize, count: usize, scale: f64) -> DMatrix<f64> {
    q.columns(start, count).into_owned() * scale
}

pub fn generate(spec: &GeneratorSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let p = spec.p;
    let empty = |fg, bg| Synthetic {
        foreground: fg,
        background: bg,
        response_fg: None,
        response_bg: None,
        grid: None,
        candidates: Vec::new(),
        truth: GroundTruth::default(),
    };
    match spec.model {
        GeneratorModel::Clvm | GeneratorModel::Clr => {
            let (k, d) = (spec.k, spec.d);
            let q = random_stiefel(p, k + d, &mut rng).into_inner();
            let s = scaled_columns(&q, 0, k, spec.shared_strength);
            let w = scaled_columns(&q, k, d, spec.signal);
            let l = crate::model::stack(&s, &w);
            let (x, u) = latent_sample(spec.n_x, &l, spec.sigma, &mut rng);
            let (y, _) = latent_sample(spec.n_y, &s, spec.sigma, &mut rng);
            let mut out = empty(x, y);
            if spec.model == GeneratorModel::Clr {
                let raw = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
                let beta = raw.normalize();
                let t = u.columns(k, d);
                let r: Vec<f64> = (0..spec.n_x)
                    .map(|i| (t.row(i) * &beta)[0] + spec.tau * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                out.response_fg = Some(r);
                out.truth.beta = Some(beta);
            }
            out.truth.shared = Some(s);
            out.truth.salient = Some(w);
            out.truth.contrastive_dim = Some(d);
            Ok(out)
        }
        GeneratorModel::CdeSubspaces => {
            let dx = spec.d;
            let dy = spec.d_y.unwrap_or(dx);
            let o = spec.overlap;
            let q = random_stiefel(p, dx + dy - o, &mut rng).into_inner();
            let sx = scaled_columns(&q, 0, dx, spec.signal);
            let sy = crate::model::stack(
                &scaled_columns(&q, 0, o, spec.signal),
                &scaled_columns(&q, dx, dy - o, spec.signal),
            );
            let (x, _) = latent_sample(spec.n_x, &sx, spec.sigma, &mut rng);
            let (y, _) = latent_sample(spec.n_y, &sy, spec.sigma, &mut rng);
            let mut out = empty(x, y);
            out.truth.shared = Some(sy);
            out.truth.salient = Some(sx);
            out.truth.contrastive_dim = Some(dx - o);
            Ok(out)
        }
        GeneratorModel::PlantedColumns => {
            let s = random_stiefel(p, spec.k, &mut rng).into_inner() * spec.shared_strength;
            let noise = spec.sigma.max(f64::MIN_POSITIVE);
            let (mut x, _) = latent_sample(spec.n_x, &s, noise, &mut rng);
            let (y, _) = latent_sample(spec.n_y, &s, noise, &mut rng);
            for &j in &spec.planted {
                for i in 0..spec.n_x {
                    x[(i, j)] += spec.signal * rng.sample::<f64, _>(StandardNormal);
                }
            }
            let mut out = empty(x, y);
            out.truth.shared = Some(s);
            out.truth.planted_indices = spec.planted.clone();
            Ok(out)
        }
        GeneratorModel::PlantedCurves => {
            let t = spec.grid_len;
            let grid: Vec<f64> = (0..t).map(|i| i as f64 / t as f64).collect();
            let base = DVector::from_iterator(t, grid.iter().map(|&g| (2.0 * PI * g).sin()));
            let planted = DVector::from_iterator(t, grid.iter().map(|&g| (4.0 * PI * g).sin()));
            let curves = |n: usize, with_planted: bool, rng: &mut ChaCha20Rng| {
                let mut m = DMatrix::zeros(n, t);
                for i in 0..n {
                    let a = spec.shared_strength * rng.sample::<f64, _>(StandardNormal);
                    let b = if with_planted {
                        spec.signal * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    for j in 0..t {
                        m[(i, j)] = a * base[j] + b * planted[j] + spec.sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                }
                m
            };
            let x = curves(spec.n_x, true, &mut rng);
            let y = curves(spec.n_y, false, &mut rng);
            let mut out = empty(x, y);
            out.grid = Some(grid);
            out.truth.shared = Some(DMatrix::from_column_slice(t, 1, base.as_slice()));
            out.truth.salient = Some(DMatrix::from_column_slice(t, 1, planted.as_slice()));
            out.truth.contrastive_dim = Some(1);
            Ok(out)
        }
        GeneratorModel::SupervisedContrast => {
            // u_b drives the response in both groups; u_f only in the
            // foreground, through a hidden 40% component.
            let q = random_stiefel(p, 2, &mut rng).into_inner();
            let u_b = q.column(0).into_owned();
            let u_f = q.column(1).into_owned();
            let x = gaussian(spec.n_x, p, &mut rng);
            let y = gaussian(spec.n_y, p, &mut rng);
            let rx: Vec<f64> = (0..spec.n_x)
                .map(|i| {
                    let row = x.row(i);
                    let eps = spec.sigma * rng.sample::<f64, _>(StandardNormal);
                    if rng.random::<f64>() < 0.6 {
                        3.0 + (row * &u_b)[0] + eps
                    } else {
                        -3.0 + 0.5 * (row * &u_f)[0] + eps
                    }
                })
                .collect();
            let ry: Vec<f64> = (0..spec.n_y)
                .map(|i| 3.0 + (y.row(i) * &u_b)[0] + spec.sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let mut out = empty(x, y);
            out.response_fg = Some(rx);
            out.response_bg = Some(ry);
            out.truth.shared = Some(DMatrix::from_column_slice(p, 1, u_b.as_slice()));
            out.truth.salient = Some(DMatrix::from_column_slice(p, 1, u_f.as_slice()));
            out.truth.contrastive_dim = Some(1);
            Ok(out)
        }
        GeneratorModel::BackgroundCandidates => {
            let (k, d) = (spec.k, spec.d);
            let q = random_stiefel(p, k + d + 1, &mut rng).into_inner();
            let g0 = scaled_columns(&q, 0, k + d, spec.signal);
            let valid = scaled_columns(&q, 0, k, spec.signal);
            let mut invalid = valid.clone();
            invalid.set_column(k - 1, &(q.column(k + d) * spec.signal));
            let (x0, _) = latent_sample(spec.n_x, &g0, spec.sigma, &mut rng);
            let (yv, _) = latent_sample(spec.n_y, &valid, spec.sigma, &mut rng);
            let (yi, _) = latent_sample(spec.n_y, &invalid, spec.sigma, &mut rng);
            let mut out = empty(x0, yv.clone());
            out.candidates = vec![yv, yi];
            out.truth.shared = Some(valid);
            out.truth.salient = Some(invalid);
            out.truth.contrastive_dim = Some(d);
            Ok(out)
        }
    }
}

/// Grid search for the best unit vector of a GCPCA ratio objective.
///
/// Directions are enumerated in hyperspherical coordinates at
/// `resolution_deg` steps; only `p <= 4` is supported. Returns the best
/// direction and its objective.
pub fn brute_force_trace_ratio(
    cx: &SymMatrix,
    cy: &SymMatrix,
    variant: GcpcaVariant,
    resolution_deg: f64,
) -> Result<(DVector<f64>, f64)> {
    let p = cx.dim();
    if cy.dim() != p {
        return Err(CdrError::InvalidArgument("covariances differ in size".into()));
    }
    if p > 4 {
        return Err(CdrError::UnsupportedSize(format!("brute force needs p <= 4, got {p}")));
    }
    if !(resolution_deg > 0.0) {
        return Err(CdrError::InvalidArgument("resolution must be positive".into()));
    }
    let objective = |v: &DVector<f64>| {
        let a = cx.as_matrix().dot(&(v * v.transpose()));
        let b = cy.as_matrix().dot(&(v * v.transpose()));
        match variant {
            GcpcaVariant::V1 => (a - b) / (a + b),
            GcpcaVariant::V2 => a / b,
            GcpcaVariant::V3 => (a - b) / b,
        }
    };
    if p == 1 {
        let v = DVector::from_element(1, 1.0);
        let f = objective(&v);
        return Ok((v, f));
    }
    let step = resolution_deg.to_radians();
    // polar angles in [0, π]; the last angle spans [0, π) since ±v are equivalent
    let polar: Vec<f64> = (0..=(PI / step).round() as usize).map(|i| (i as f64 * step).min(PI)).collect();
    let last: Vec<f64> = (0..(PI / step).round() as usize).map(|i| i as f64 * step).collect();
    let mut best = (DVector::zeros(p), f64::NEG_INFINITY);
    let mut angles = vec![0.0; p - 1];
    let mut idx = vec![0usize; p - 1];
    loop {
        for (j, a) in angles.iter_mut().enumerate() {
            *a = if j == p - 2 { last[idx[j]] } else { polar[idx[j]] };
        }
        let mut v = DVector::zeros(p);
        let mut sin_prod = 1.0;
        for j in 0..p - 1 {
            v[j] = sin_prod * angles[j].cos();
            sin_prod *= angles[j].sin();
        }
        v[p - 1] = sin_prod;
        let f = objective(&v);
        if f > best.1 {
            best = (v, f);
        }
        // odometer increment
        let mut j = 0;
        loop {
            idx[j] += 1;
            let len = if j == p - 2 { last.len() } else { polar.len() };
            if idx[j] < len {
                break;
            }
            idx[j] = 0;
            j += 1;
            if j == p - 1 {
                return Ok(best);
            }
        }
    }
}

/// Posterior mean of `(z, t)` given `x` for `x = S z + W t + σε`, by
/// conditioning the explicit joint Gaussian of latents and observation.
pub fn brute_force_posterior(
    shared: &DMatrix<f64>,
    salient: &DMatrix<f64>,
    sigma2: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let p = x.len();
    if shared.nrows() != p || salient.nrows() != p {
        return Err(CdrError::InvalidArgument("loading rows must match x".into()));
    }
    let q = shared.ncols() + salient.ncols();
    let mut l = DMatrix::zeros(p, q);
    l.columns_mut(0, shared.ncols()).copy_from(shared);
    l.columns_mut(shared.ncols(), salient.ncols()).copy_from(salient);
    // joint covariance [[I, Lᵀ], [L, LLᵀ + σ²I]]
    let mut joint = DMatrix::zeros(q + p, q + p);
    joint.view_mut((0, 0), (q, q)).fill_with_identity();
    joint.view_mut((0, q), (q, p)).copy_from(&l.transpose());
    joint.view_mut((q, 0), (p, q)).copy_from(&l);
    joint
        .view_mut((q, q), (p, p))
        .copy_from(&(&l * l.transpose() + DMatrix::identity(p, p) * sigma2));
    let cross = joint.view((0, q), (q, p)).into_owned();
    let obs = joint.view((q, q), (p, p)).into_owned();
    let sol = obs
        .lu()
        .solve(x)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .ok_or_else(|| CdrError::SingularMatrix("observation covariance".into()))?;
    Ok(cross * sol)
}

//! Landau collision kernel `A(z) = C |z|^gamma (|z|^2 I - z z^T)`, the
//! empirical mean-field drift built from score differences, and its exact
//! conservation diagnostics.
//!
//! The Coulomb kernel (`gamma = -3`) is regularized by the soft core
//! `|z|^gamma -> (|z|^2 + eps^2)^(gamma/2)`; the projector factor is kept
//! exact so `A(z) z = 0` and `A(-z) = A(z)` hold for every `z`.

use rayon::prelude::*;

use crate::error::{LandauError, Result};
use crate::nn::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gamma {
    Maxwell,
    Coulomb,
}

impl Gamma {
    pub fn exponent(self) -> f64 {
        match self {
            Gamma::Maxwell => 0.0,
            Gamma::Coulomb => -3.0,
        }
    }

    pub fn from_exponent(g: f64) -> Result<Self> {
        if g == 0.0 {
            Ok(Gamma::Maxwell)
        } else if g == -3.0 {
            Ok(Gamma::Coulomb)
        } else {
            Err(LandauError::Config(format!("gamma must be 0 or -3, got {g}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelConfig {
    pub gamma: Gamma,
    pub c_gamma: f64,
    pub reg_eps: f64,
}

impl KernelConfig {
    pub fn maxwell(c_gamma: f64) -> Self {
        KernelConfig { gamma: Gamma::Maxwell, c_gamma, reg_eps: 0.0 }
    }

    pub fn coulomb(c_gamma: f64, reg_eps: f64) -> Result<Self> {
        let cfg = KernelConfig { gamma: Gamma::Coulomb, c_gamma, reg_eps };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c_gamma.is_finite() && self.c_gamma > 0.0) {
            return Err(LandauError::Config("c_gamma must be positive".into()));
        }
        if !(self.reg_eps >= 0.0 && self.reg_eps.is_finite()) {
            return Err(LandauError::Config("reg_eps must be a nonnegative float".into()));
        }
        if self.gamma == Gamma::Coulomb && self.reg_eps == 0.0 {
            return Err(LandauError::Config("the Coulomb kernel needs reg_eps > 0".into()));
        }
        Ok(())
    }

    /// Radial prefactor `C r^gamma` at squared distance `r2`.
    #[inline]
    pub fn prefactor(&self, r2: f64) -> f64 {
        match self.gamma {
            Gamma::Maxwell => self.c_gamma,
            Gamma::Coulomb => {
                let s = r2 + self.reg_eps * self.reg_eps;
                self.c_gamma / (s * s.sqrt())
            }
        }
    }

    /// `g` such that the gradient of the prefactor is `g * z`.
    #[inline]
    fn prefactor_grad(&self, r2: f64) -> f64 {
        match self.gamma {
            Gamma::Maxwell => 0.0,
            Gamma::Coulomb => {
                let s = r2 + self.reg_eps * self.reg_eps;
                -3.0 * self.c_gamma / (s * s * s.sqrt())
            }
        }
    }
}

/// `A(z)` as a row-major `d x d` matrix.
pub fn collision_matrix(z: &[f64], cfg: &KernelConfig) -> Vec<f64> {
    let d = z.len();
    let r2: f64 = z.iter().map(|x| x * x).sum();
    let phi = cfg.prefactor(r2);
    let mut a = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let delta = if i == j { r2 } else { 0.0 };
            a[i * d + j] = phi * (delta - z[i] * z[j]);
        }
    }
    a
}

/// Largest eigenvalue of `A(z)`: `C r^gamma |z|^2`.
pub fn kernel_norm(z: &[f64], cfg: &KernelConfig) -> f64 {
    let r2: f64 = z.iter().map(|x| x * x).sum();
    cfg.prefactor(r2) * r2
}

/// N particles in `dim` velocity dimensions at time `time`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    positions: Vec<f64>,
    dim: usize,
    pub time: f64,
}

impl ParticleCloud {
    pub fn new(positions: Vec<f64>, dim: usize, time: f64) -> Result<Self> {
        if !(dim == 2 || dim == 3) {
            return Err(LandauError::Input(format!("dimension must be 2 or 3, got {dim}")));
        }
        if positions.is_empty() || positions.len() % dim != 0 {
            return Err(LandauError::Input("cloud needs N >= 1 complete particles".into()));
        }
        if let Some(i) = positions.iter().position(|x| !x.is_finite()) {
            return Err(LandauError::Input(format!("non-finite coordinate at index {i}")));
        }
        Ok(ParticleCloud { positions, dim, time })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn into_positions(self) -> Vec<f64> {
        self.positions
    }

    /// Same particles moved to `positions` at `time`; `N` and `d` are kept.
    pub fn with_positions(&self, positions: Vec<f64>, time: f64) -> Result<Self> {
        if positions.len() != self.positions.len() {
            return Err(LandauError::Input("particle count changed".into()));
        }
        ParticleCloud::new(positions, self.dim, time)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Analytic,
    Neural,
    Blob,
}

/// A time-dependent vector field evaluated as a score `grad log f`.
pub trait ScoreField: Sync {
    fn dim(&self) -> usize;
    fn provenance(&self) -> Provenance;
    /// Scores at `points` (`n x dim`, row-major).
    fn score_batch(&self, points: &[f64], t: f64) -> Result<Vec<f64>>;
}

/// A score given by a closure, evaluated point by point.
pub struct FnScore<F> {
    dim: usize,
    provenance: Provenance,
    f: F,
}

impl<F> FnScore<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnScore { dim, provenance: Provenance::Analytic, f }
    }

    pub fn with_provenance(mut self, p: Provenance) -> Self {
        self.provenance = p;
        self
    }
}

impl<F> ScoreField for FnScore<F>
where
    F: Fn(&[f64], f64) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn provenance(&self) -> Provenance {
        self.provenance
    }

    fn score_batch(&self, points: &[f64], t: f64) -> Result<Vec<f64>> {
        Ok(points.chunks(self.dim).flat_map(|p| (self.f)(p, t)).collect())
    }
}

// ---------------------------------------------------------------- drift core

#[inline]
fn dot<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    let mut s = 0.0;
    for k in 0..D {
        s += a[k] * b[k];
    }
    s
}

#[inline]
fn load<const D: usize>(x: &[f64], i: usize) -> [f64; D] {
    let mut out = [0.0; D];
    out.copy_from_slice(&x[i * D..(i + 1) * D]);
    out
}

#[inline]
fn diff<const D: usize>(a: &[f64; D], b: &[f64; D]) -> [f64; D] {
    let mut out = [0.0; D];
    for k in 0..D {
        out[k] = a[k] - b[k];
    }
    out
}

/// `-(1/n) sum_j A(q - v_j)(s_q - s_j)` for one query.
#[inline]
fn drift_at<const D: usize>(q: &[f64; D], sq: &[f64; D], particles: &[f64], scores: &[f64], cfg: &KernelConfig) -> [f64; D] {
    let n = particles.len() / D;
    let mut acc = [0.0; D];
    for j in 0..n {
        let z = diff(q, &load::<D>(particles, j));
        let w = diff(sq, &load::<D>(scores, j));
        let zz = dot(&z, &z);
        let zw = dot(&z, &w);
        let phi = cfg.prefactor(zz);
        for k in 0..D {
            acc[k] += phi * (zz * w[k] - z[k] * zw);
        }
    }
    let inv = -1.0 / n as f64;
    acc.map(|a| a * inv)
}

fn drift_generic<const D: usize>(particles: &[f64], scores: &[f64], queries: &[f64], q_scores: &[f64], cfg: &KernelConfig) -> Vec<f64> {
    let mut out = vec![0.0; queries.len()];
    out.par_chunks_mut(D).enumerate().for_each(|(m, o)| {
        let u = drift_at::<D>(&load::<D>(queries, m), &load::<D>(q_scores, m), particles, scores, cfg);
        o.copy_from_slice(&u);
    });
    out
}

/// Drift at `queries` given precomputed scores at particles and queries.
/// Each query's inner sum runs in particle-index order.
pub fn drift_from_scores(
    particles: &[f64],
    scores: &[f64],
    queries: &[f64],
    q_scores: &[f64],
    dim: usize,
    cfg: &KernelConfig,
) -> Vec<f64> {
    debug_assert_eq!(particles.len(), scores.len());
    debug_assert_eq!(queries.len(), q_scores.len());
    match dim {
        2 => drift_generic::<2>(particles, scores, queries, q_scores, cfg),
        3 => drift_generic::<3>(particles, scores, queries, q_scores, cfg),
        _ => panic!("dimension must be 2 or 3"),
    }
}

/// Drift evaluated at the particles themselves.
pub fn self_drift(positions: &[f64], scores: &[f64], dim: usize, cfg: &KernelConfig) -> Vec<f64> {
    drift_from_scores(positions, scores, positions, scores, dim, cfg)
}

fn self_drift_vjp_generic<const D: usize>(x: &[f64], s: &[f64], cot: &[f64], cfg: &KernelConfig) -> (Vec<f64>, Vec<f64>) {
    let n = x.len() / D;
    let inv = -1.0 / n as f64;
    let rows: Vec<([f64; D], [f64; D])> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = load::<D>(x, i);
            let si = load::<D>(s, i);
            let ui = load::<D>(cot, i);
            let mut gx = [0.0; D];
            let mut gs = [0.0; D];
            for j in 0..n {
                let z = diff(&xi, &load::<D>(x, j));
                let w = diff(&si, &load::<D>(s, j));
                let u = diff(&ui, &load::<D>(cot, j));
                let zz = dot(&z, &z);
                let zw = dot(&z, &w);
                let uw = dot(&u, &w);
                let uz = dot(&u, &z);
                let phi = cfg.prefactor(zz);
                let dphi = cfg.prefactor_grad(zz);
                let umw = zz * uw - uz * zw;
                for k in 0..D {
                    gs[k] += phi * (zz * u[k] - z[k] * uz);
                    gx[k] += phi * (2.0 * z[k] * uw - u[k] * zw - w[k] * uz) + umw * dphi * z[k];
                }
            }
            (gx.map(|g| g * inv), gs.map(|g| g * inv))
        })
        .collect();
    let mut gx = Vec::with_capacity(x.len());
    let mut gs = Vec::with_capacity(x.len());
    for (a, b) in rows {
        gx.extend_from_slice(&a);
        gs.extend_from_slice(&b);
    }
    (gx, gs)
}

/// Vector-Jacobian product of [`self_drift`] with respect to positions and
/// scores for the output cotangent `cot`.
pub fn self_drift_vjp(positions: &[f64], scores: &[f64], cot: &[f64], dim: usize, cfg: &KernelConfig) -> (Vec<f64>, Vec<f64>) {
    match dim {
        2 => self_drift_vjp_generic::<2>(positions, scores, cot, cfg),
        3 => self_drift_vjp_generic::<3>(positions, scores, cot, cfg),
        _ => panic!("dimension must be 2 or 3"),
    }
}

/// Records the self drift of independent groups of `block` particles
/// (rows of `positions`/`scores`) as one tape node.
pub fn drift_on_tape(tape: &Tape, positions: Var, scores: Var, block: usize, dim: usize, cfg: KernelConfig) -> Var {
    let x = tape.value(positions);
    let s = tape.value(scores);
    let stride = block * dim;
    assert_eq!(x.len() % stride, 0, "positions must hold whole blocks");
    let mut value = Vec::with_capacity(x.len());
    for (xb, sb) in x.chunks(stride).zip(s.chunks(stride)) {
        value.extend(self_drift(xb, sb, dim, &cfg));
    }
    tape.custom(value, &[positions, scores], move |g, c| {
        let mut gx = Vec::with_capacity(x.len());
        let mut gs = Vec::with_capacity(x.len());
        for ((xb, sb), gb) in x.chunks(stride).zip(s.chunks(stride)).zip(g.chunks(stride)) {
            let (a, b) = self_drift_vjp(xb, sb, gb, dim, &cfg);
            gx.extend(a);
            gs.extend(b);
        }
        c.accumulate(positions, &gx);
        c.accumulate(scores, &gs);
    })
}

// ---------------------------------------------------------------- operations

fn check_dims(cloud: &ParticleCloud, score: &dyn ScoreField) -> Result<()> {
    if score.dim() != cloud.dim() {
        return Err(LandauError::Input(format!(
            "score dimension {} does not match cloud dimension {}",
            score.dim(),
            cloud.dim()
        )));
    }
    Ok(())
}

/// `U(q) = -(1/N) sum_j A(q - v_j)(s(q) - s(v_j))` with `s` evaluated at the
/// cloud's time.
pub fn empirical_drift(cloud: &ParticleCloud, score: &dyn ScoreField, queries: &[f64], cfg: &KernelConfig) -> Result<Vec<f64>> {
    check_dims(cloud, score)?;
    let d = cloud.dim();
    if queries.len() % d != 0 {
        return Err(LandauError::Input("queries must be M x d".into()));
    }
    let sp = score.score_batch(cloud.positions(), cloud.time)?;
    let sq = score.score_batch(queries, cloud.time)?;
    Ok(drift_from_scores(cloud.positions(), &sp, queries, &sq, d, cfg))
}

/// `(sum_i U(v_i), sum_i v_i . U(v_i))` over the cloud's own particles. Both
/// vanish identically in exact arithmetic.
pub fn conservation_residuals(cloud: &ParticleCloud, score: &dyn ScoreField, cfg: &KernelConfig) -> Result<(Vec<f64>, f64)> {
    check_dims(cloud, score)?;
    let d = cloud.dim();
    let s = score.score_batch(cloud.positions(), cloud.time)?;
    let u = self_drift(cloud.positions(), &s, d, cfg);
    Ok(drift_moments(cloud.positions(), &u, d))
}

/// Momentum and energy moments of a velocity field over the particles.
pub fn drift_moments(positions: &[f64], drift: &[f64], dim: usize) -> (Vec<f64>, f64) {
    let mut mom = vec![0.0; dim];
    let mut energy = 0.0;
    for (v, u) in positions.chunks(dim).zip(drift.chunks(dim)) {
        for k in 0..dim {
            mom[k] += u[k];
            energy += v[k] * u[k];
        }
    }
    (mom, energy)
}

/// Per-query `|U_a(q) - U_b(q)|` for drifts built from two score fields on
/// the same cloud.
pub fn drift_mismatch(
    score_a: &dyn ScoreField,
    score_b: &dyn ScoreField,
    cloud: &ParticleCloud,
    queries: &[f64],
    cfg: &KernelConfig,
) -> Result<Vec<f64>> {
    let ua = empirical_drift(cloud, score_a, queries, cfg)?;
    let ub = empirical_drift(cloud, score_b, queries, cfg)?;
    let d = cloud.dim();
    Ok(ua
        .chunks(d)
        .zip(ub.chunks(d))
        .map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
        .collect())
}

/// Largest `|A(v_i - v_j)|` over all pairs of the cloud.
pub fn max_kernel_norm(positions: &[f64], dim: usize, cfg: &KernelConfig) -> f64 {
    let n = positions.len() / dim;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let vi = &positions[i * dim..(i + 1) * dim];
            (0..n).fold(0.0f64, |m, j| {
                let z: Vec<f64> = vi.iter().zip(&positions[j * dim..(j + 1) * dim]).map(|(a, b)| a - b).collect();
                m.max(kernel_norm(&z, cfg))
            })
        })
        .reduce(|| 0.0, f64::max)
}

//! Closed-form BKW solutions and the initial distributions of the benchmark
//! suite, with exact i.i.d. samplers.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{LandauError, Result};
use crate::kernel::{KernelConfig, ParticleCloud, Provenance, ScoreField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkTag {
    Bkw2D,
    Bkw3D,
    GaussianMixture3D,
    Rosenbluth3D,
    Anisotropic2D,
    Truncated2D,
}

impl BenchmarkTag {
    pub const ALL: [BenchmarkTag; 6] = [
        BenchmarkTag::Bkw2D,
        BenchmarkTag::Bkw3D,
        BenchmarkTag::GaussianMixture3D,
        BenchmarkTag::Rosenbluth3D,
        BenchmarkTag::Anisotropic2D,
        BenchmarkTag::Truncated2D,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkTag::Bkw2D => "bkw2d",
            BenchmarkTag::Bkw3D => "bkw3d",
            BenchmarkTag::GaussianMixture3D => "gaussian-mixture3d",
            BenchmarkTag::Rosenbluth3D => "rosenbluth3d",
            BenchmarkTag::Anisotropic2D => "anisotropic2d",
            BenchmarkTag::Truncated2D => "truncated2d",
        }
    }

    pub fn dim(self) -> usize {
        match self {
            BenchmarkTag::Bkw2D | BenchmarkTag::Anisotropic2D | BenchmarkTag::Truncated2D => 2,
            _ => 3,
        }
    }

    pub fn is_bkw(self) -> bool {
        matches!(self, BenchmarkTag::Bkw2D | BenchmarkTag::Bkw3D)
    }
}

impl fmt::Display for BenchmarkTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkTag {
    type Err = LandauError;

    fn from_str(s: &str) -> Result<Self> {
        BenchmarkTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| LandauError::Config(format!("unknown benchmark tag '{s}'")))
    }
}

/// One axis of the separable mixture: `(weight, mean, std)` pairs.
pub type AxisMixture = [(f64, f64, f64); 2];

#[derive(Debug, Clone, PartialEq)]
pub struct CaseParams {
    pub rosenbluth_sigma: f64,
    pub rosenbluth_s: f64,
    pub eta: f64,
    pub u1: [f64; 2],
    pub u2: [f64; 2],
    pub mixture: [AxisMixture; 3],
}

impl Default for CaseParams {
    fn default() -> Self {
        CaseParams {
            rosenbluth_sigma: 2.0,
            rosenbluth_s: 12.0,
            eta: 1.0,
            u1: [-2.0, 1.0],
            u2: [0.0, -1.0],
            mixture: [
                [(0.4, -2.0, 0.3), (0.6, 1.0, 0.8)],
                [(0.7, -1.0, 0.5), (0.3, 2.0, 0.4)],
                [(0.5, 0.0, 0.2), (0.5, 3.0, 1.2)],
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkCase {
    pub tag: BenchmarkTag,
    pub t0: f64,
    pub t1: f64,
    pub kernel: KernelConfig,
    pub params: CaseParams,
}

/// Kernel constant under which the BKW closed forms solve the equation.
pub fn bkw_c_gamma(d: usize) -> f64 {
    if d == 2 {
        1.0 / 16.0
    } else {
        1.0 / 24.0
    }
}

impl BenchmarkCase {
    /// Default window and kernel per benchmark.
    pub fn new(tag: BenchmarkTag) -> Self {
        let coulomb = KernelConfig { gamma: crate::kernel::Gamma::Coulomb, c_gamma: 1.0, reg_eps: 0.1 };
        let (t0, t1, kernel) = match tag {
            BenchmarkTag::Bkw2D => (0.0, 5.0, KernelConfig::maxwell(bkw_c_gamma(2))),
            BenchmarkTag::Bkw3D => (5.5, 6.0, KernelConfig::maxwell(bkw_c_gamma(3))),
            BenchmarkTag::GaussianMixture3D => (0.0, 40.0, coulomb),
            BenchmarkTag::Rosenbluth3D => (0.0, 20.0, coulomb),
            BenchmarkTag::Anisotropic2D => (0.0, 40.0, coulomb),
            BenchmarkTag::Truncated2D => (0.0, 5.0, coulomb),
        };
        BenchmarkCase { tag, t0, t1, kernel, params: CaseParams::default() }
    }

    pub fn with_window(mut self, t0: f64, t1: f64) -> Result<Self> {
        self.t0 = t0;
        self.t1 = t1;
        self.validate()?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.tag.dim()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 < self.t1) || !self.t0.is_finite() || !self.t1.is_finite() {
            return Err(LandauError::Config(format!("time window [{}, {}] is empty", self.t0, self.t1)));
        }
        if self.tag == BenchmarkTag::Bkw3D && bkw_k(self.t0, 3) < 0.6 {
            return Err(LandauError::Config(format!(
                "bkw3d needs t0 >= 6 ln(5/2) so the density is nonnegative, got {}",
                self.t0
            )));
        }
        self.kernel.validate()
    }

    pub fn has_analytic(&self) -> bool {
        self.tag.is_bkw()
    }

    /// Analytic density at time `t` (BKW only).
    pub fn density(&self, v: &[f64], t: f64) -> Result<f64> {
        if !self.has_analytic() {
            return Err(LandauError::NoClosedForm(self.tag.name().into()));
        }
        bkw_density(v, t, self.dim())
    }

    /// Analytic score at time `t` (BKW only).
    pub fn score(&self, v: &[f64], t: f64) -> Result<Vec<f64>> {
        if !self.has_analytic() {
            return Err(LandauError::NoClosedForm(self.tag.name().into()));
        }
        bkw_score(v, t, self.dim())
    }

    /// The analytic score as a [`ScoreField`].
    pub fn analytic_score(&self) -> Result<AnalyticScore> {
        if !self.has_analytic() {
            return Err(LandauError::NoClosedForm(self.tag.name().into()));
        }
        Ok(AnalyticScore { dim: self.dim() })
    }
}

// ---------------------------------------------------------------- BKW

/// `K(t)` of the BKW solution in dimension `d`.
pub fn bkw_k(t: f64, d: usize) -> f64 {
    if d == 2 {
        1.0 - 0.5 * (-t / 8.0).exp()
    } else {
        1.0 - (-t / 6.0).exp()
    }
}

struct BkwCoeffs {
    k: f64,
    pref: f64,
    a: f64,
    b: f64,
}

fn bkw_coeffs(t: f64, d: usize) -> Result<BkwCoeffs> {
    if !(d == 2 || d == 3) {
        return Err(LandauError::Input(format!("BKW dimension must be 2 or 3, got {d}")));
    }
    let k = bkw_k(t, d);
    if !(k > 0.0) {
        return Err(LandauError::Input(format!("BKW K(t) = {k} is not positive at t = {t}")));
    }
    let b = (1.0 - k) / (2.0 * k * k);
    let (pref, a) = if d == 2 {
        (1.0 / (2.0 * PI * k), (2.0 * k - 1.0) / k)
    } else {
        ((2.0 * PI * k).powf(-1.5), (5.0 * k - 3.0) / (2.0 * k))
    };
    Ok(BkwCoeffs { k, pref, a, b })
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

pub fn bkw_density(v: &[f64], t: f64, d: usize) -> Result<f64> {
    let c = bkw_coeffs(t, d)?;
    if v.len() != d {
        return Err(LandauError::Input("velocity length does not match dimension".into()));
    }
    let r2 = norm2(v);
    Ok(c.pref * (-r2 / (2.0 * c.k)).exp() * (c.a + c.b * r2))
}

/// `grad log f = v (-1/K + 2b / (a + b |v|^2))`.
pub fn bkw_score(v: &[f64], t: f64, d: usize) -> Result<Vec<f64>> {
    let c = bkw_coeffs(t, d)?;
    if v.len() != d {
        return Err(LandauError::Input("velocity length does not match dimension".into()));
    }
    let poly = c.a + c.b * norm2(v);
    if !(poly > 0.0) {
        return Err(LandauError::ZeroDensity);
    }
    let f = -1.0 / c.k + 2.0 * c.b / poly;
    Ok(v.iter().map(|x| x * f).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct AnalyticScore {
    dim: usize,
}

impl ScoreField for AnalyticScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn provenance(&self) -> Provenance {
        Provenance::Analytic
    }

    fn score_batch(&self, points: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(points.len());
        for p in points.chunks(self.dim) {
            out.extend(bkw_score(p, t, self.dim)?);
        }
        Ok(out)
    }
}

// ---------------------------------------------------------------- initial data

fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
}

fn rosenbluth_profile(r: f64, p: &CaseParams) -> f64 {
    let (s, sigma) = (p.rosenbluth_s, p.rosenbluth_sigma);
    (-s * (r - sigma).powi(2) / (sigma * sigma)).exp() / (s * s)
}

/// Integral over R^3 of the unnormalized Rosenbluth profile (composite
/// Simpson in the radius).
pub fn rosenbluth_normalizer(p: &CaseParams) -> f64 {
    let hi = p.rosenbluth_sigma * (1.0 + 10.0 / p.rosenbluth_s.sqrt());
    let n = 20_000;
    let h = hi / n as f64;
    let g = |r: f64| 4.0 * PI * r * r * rosenbluth_profile(r, p);
    let mut acc = g(0.0) + g(hi);
    for i in 1..n {
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * g(i as f64 * h);
    }
    acc * h / 3.0
}

// density evaluation on grids calls this per node; the quadrature is not cheap
fn cached_normalizer(p: &CaseParams) -> f64 {
    use std::cell::Cell;
    thread_local! {
        static LAST: Cell<Option<(u64, u64, f64)>> = const { Cell::new(None) };
    }
    let key = (p.rosenbluth_sigma.to_bits(), p.rosenbluth_s.to_bits());
    LAST.with(|c| match c.get() {
        Some((a, b, z)) if (a, b) == key => z,
        _ => {
            let z = rosenbluth_normalizer(p);
            c.set(Some((key.0, key.1, z)));
            z
        }
    })
}

/// The unnormalized Rosenbluth expression, verbatim.
pub fn rosenbluth_unnormalized(v: &[f64], p: &CaseParams) -> f64 {
    rosenbluth_profile(norm2(v).sqrt(), p)
}

/// Initial density of `case` (normalized).
pub fn initial_density(case: &BenchmarkCase, v: &[f64]) -> Result<f64> {
    if v.len() != case.dim() {
        return Err(LandauError::Input("velocity length does not match dimension".into()));
    }
    let p = &case.params;
    Ok(match case.tag {
        BenchmarkTag::Bkw2D | BenchmarkTag::Bkw3D => bkw_density(v, case.t0, case.dim())?,
        BenchmarkTag::GaussianMixture3D => p
            .mixture
            .iter()
            .zip(v)
            .map(|(axis, &x)| axis.iter().map(|&(w, m, s)| w * normal_pdf(x, m, s)).sum::<f64>())
            .product(),
        BenchmarkTag::Rosenbluth3D => rosenbluth_unnormalized(v, p) / cached_normalizer(p),
        BenchmarkTag::Anisotropic2D => {
            let e = |u: &[f64; 2]| (-((v[0] - u[0]).powi(2) + (v[1] - u[1]).powi(2)) / 2.0).exp();
            (e(&p.u1) + e(&p.u2)) / (4.0 * PI)
        }
        BenchmarkTag::Truncated2D => {
            let r2 = norm2(v);
            if r2.sqrt() > p.eta {
                (-r2 / 2.0).exp() * (p.eta * p.eta / 2.0).exp() / (2.0 * PI)
            } else {
                0.0
            }
        }
    })
}

const MIN_ACCEPTANCE: f64 = 1e-4;

/// Rejection loop: `propose` returns a candidate and its acceptance
/// probability in [0, 1].
fn rejection<F>(rng: &mut ChaCha8Rng, n: usize, d: usize, mut propose: F) -> Result<Vec<f64>>
where
    F: FnMut(&mut ChaCha8Rng) -> (Vec<f64>, f64),
{
    let mut out = Vec::with_capacity(n * d);
    let mut trials: u64 = 0;
    let mut accepted: u64 = 0;
    while accepted < n as u64 {
        let (x, p) = propose(rng);
        trials += 1;
        if rng.gen::<f64>() < p {
            out.extend_from_slice(&x);
            accepted += 1;
        }
        if trials >= 100_000 && (accepted as f64) < MIN_ACCEPTANCE * trials as f64 {
            return Err(LandauError::RejectionRate { rate: accepted as f64 / trials as f64 });
        }
    }
    Ok(out)
}

/// Largest BKW density over radii in [0, 5], padded by 5%.
fn bkw_envelope(t: f64, d: usize) -> Result<f64> {
    let mut m = 0.0f64;
    let mut v = vec![0.0; d];
    for i in 0..=2000 {
        v[0] = 5.0 * i as f64 / 2000.0;
        m = m.max(bkw_density(&v, t, d)?);
    }
    Ok(1.05 * m)
}

fn gaussian<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// `n` i.i.d. samples from the case's initial density at `t0`.
pub fn sample_initial(case: &BenchmarkCase, n: usize, seed: u64) -> Result<ParticleCloud> {
    if n == 0 {
        return Err(LandauError::Input("need at least one particle".into()));
    }
    case.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = case.dim();
    let p = case.params.clone();
    let pos = match case.tag {
        BenchmarkTag::Bkw2D | BenchmarkTag::Bkw3D => {
            let t0 = case.t0;
            let m = bkw_envelope(t0, d)?;
            rejection(&mut rng, n, d, |r| {
                let x: Vec<f64> = (0..d).map(|_| r.gen_range(-5.0..5.0)).collect();
                let f = bkw_density(&x, t0, d).unwrap_or(0.0);
                (x, (f / m).max(0.0))
            })?
        }
        BenchmarkTag::GaussianMixture3D => {
            let mut out = Vec::with_capacity(3 * n);
            for _ in 0..n {
                for axis in &p.mixture {
                    let u: f64 = rng.gen();
                    let (_, m, s) = if u < axis[0].0 { axis[0] } else { axis[1] };
                    out.push(m + s * gaussian(&mut rng));
                }
            }
            out
        }
        BenchmarkTag::Anisotropic2D => {
            let mut out = Vec::with_capacity(2 * n);
            for _ in 0..n {
                let u = if rng.gen::<f64>() < 0.5 { p.u1 } else { p.u2 };
                out.push(u[0] + gaussian(&mut rng));
                out.push(u[1] + gaussian(&mut rng));
            }
            out
        }
        BenchmarkTag::Rosenbluth3D => {
            let sigma = p.rosenbluth_sigma;
            let w = 4.0 / p.rosenbluth_s.sqrt();
            let lo = (sigma * (1.0 - w)).max(0.0);
            let hi = sigma * (1.0 + w);
            let (lo3, hi3) = (lo.powi(3), hi.powi(3));
            let s = p.rosenbluth_s;
            rejection(&mut rng, n, 3, |r| {
                let radius = (lo3 + r.gen::<f64>() * (hi3 - lo3)).cbrt();
                let mut dir = [gaussian(r), gaussian(r), gaussian(r)];
                let len = norm2(&dir).sqrt();
                dir.iter_mut().for_each(|x| *x *= radius / len);
                let acc = (-s * (radius - sigma).powi(2) / (sigma * sigma)).exp();
                (dir.to_vec(), acc)
            })?
        }
        BenchmarkTag::Truncated2D => {
            let eta = p.eta;
            rejection(&mut rng, n, 2, |r| {
                let x = vec![gaussian(r), gaussian(r)];
                let ok = norm2(&x).sqrt() > eta;
                (x, if ok { 1.0 } else { 0.0 })
            })?
        }
    };
    ParticleCloud::new(pos, d, case.t0)
}

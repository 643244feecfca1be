//! Explicit-Euler particle solvers that differ only in where the score comes
//! from: the analytic BKW score, a per-step refitted network (SBP), a
//! mollified empirical density (blob), or a trained time-dependent network.
//!
//! Trajectory binary format (little-endian):
//!
//! ```text
//! magic      4 bytes  "LPTR"
//! version    u32      1
//! n          u64      particles
//! d          u32      dimension
//! snapshots  u64      S
//! times      S x f64
//! payload    S x n x d f64, snapshot-major then particle-major
//! crc32      u32      CRC-32 (IEEE) of every preceding byte
//! ```

use std::path::Path;

use crate::benchmarks::BenchmarkCase;
use crate::error::{LandauError, Result};
use crate::kernel::{self_drift, KernelConfig, ParticleCloud, Provenance, ScoreField};
use crate::nn::{adam_step, init_params, AdamState, NetworkSpec, Tape};
use crate::trainer::arch;

#[derive(Debug, Clone, PartialEq)]
pub struct SteppingConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub n_particles: usize,
    /// Adam iterations of the score refit per step (SBP).
    pub fit_iters: usize,
    /// Extra refit iterations before the first step (SBP).
    pub initial_fit_iters: usize,
    pub lr: f64,
    pub bandwidth: f64,
    pub seed: u64,
    pub warm_start: bool,
    pub score_spec: Option<NetworkSpec>,
    /// Times at which snapshots are recorded; rounded to the step grid.
    pub snapshot_times: Vec<f64>,
}

impl SteppingConfig {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        SteppingConfig {
            dt,
            n_steps,
            n_particles: 1000,
            fit_iters: 25,
            initial_fit_iters: 0,
            lr: 1e-4,
            bandwidth: 0.15,
            seed: 0,
            warm_start: true,
            score_spec: None,
            snapshot_times: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(LandauError::Config("dt must be positive".into()));
        }
        if self.fit_iters < 1 {
            return Err(LandauError::Config("fit_iters must be at least 1".into()));
        }
        if !(self.bandwidth > 0.0) {
            return Err(LandauError::Config("bandwidth must be positive".into()));
        }
        Ok(())
    }

    /// Step indices to record, ascending and deduplicated.
    fn snapshot_steps(&self, t0: f64) -> Result<Vec<usize>> {
        let mut steps = Vec::new();
        for &t in &self.snapshot_times {
            let k = ((t - t0) / self.dt).round();
            if k < 0.0 || k > self.n_steps as f64 || ((t0 + k * self.dt) - t).abs() > 1e-6 * (1.0 + t.abs()) {
                return Err(LandauError::Config(format!("snapshot time {t} is not on the step grid")));
            }
            steps.push(k as usize);
        }
        steps.sort_unstable();
        steps.dedup();
        Ok(steps)
    }
}

// ---------------------------------------------------------------- trajectory

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    snapshots: Vec<ParticleCloud>,
}

impl Trajectory {
    pub fn new() -> Self {
        Trajectory { snapshots: Vec::new() }
    }

    pub fn push(&mut self, cloud: ParticleCloud) -> Result<()> {
        if let Some(last) = self.snapshots.last() {
            if !(cloud.time > last.time) {
                return Err(LandauError::Input("snapshot times must increase".into()));
            }
            if cloud.len() != last.len() || cloud.dim() != last.dim() {
                return Err(LandauError::Input("snapshot shape changed".into()));
            }
        }
        self.snapshots.push(cloud);
        Ok(())
    }

    pub fn snapshots(&self) -> &[ParticleCloud] {
        &self.snapshots
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|c| c.time).collect()
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    /// Snapshot whose time is within `1e-9 (1 + |t|)` of `t`.
    pub fn at(&self, t: f64) -> Option<&ParticleCloud> {
        self.snapshots.iter().find(|c| (c.time - t).abs() <= 1e-9 * (1.0 + t.abs()))
    }

    /// `t,index,v1,..,vd` rows.
    pub fn to_csv(&self) -> String {
        let d = self.snapshots.first().map_or(0, |c| c.dim());
        let mut s = String::from("t,index");
        for k in 0..d {
            s.push_str(&format!(",v{}", k + 1));
        }
        s.push('\n');
        for c in &self.snapshots {
            for i in 0..c.len() {
                s.push_str(&format!("{},{}", c.time, i));
                for x in c.particle(i) {
                    s.push_str(&format!(",{x}"));
                }
                s.push('\n');
            }
        }
        s
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (n, d) = self.snapshots.first().map_or((0, 0), |c| (c.len(), c.dim()));
        let mut out = Vec::new();
        out.extend_from_slice(b"LPTR");
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        out.extend_from_slice(&(d as u32).to_le_bytes());
        out.extend_from_slice(&(self.snapshots.len() as u64).to_le_bytes());
        for c in &self.snapshots {
            out.extend_from_slice(&c.time.to_le_bytes());
        }
        for c in &self.snapshots {
            for x in c.positions() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| LandauError::Io(format!("trajectory file: {m}"));
        let head = 4 + 4 + 8 + 4 + 8;
        if bytes.len() < head + 4 || &bytes[..4] != b"LPTR" {
            return Err(bad("bad magic or truncated"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(trailer.try_into().unwrap()) {
            return Err(bad("CRC mismatch"));
        }
        let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
        if version != 1 {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(body[8..16].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(body[16..20].try_into().unwrap()) as usize;
        let s = u64::from_le_bytes(body[20..28].try_into().unwrap()) as usize;
        if body.len() != head + 8 * s * (1 + n * d) {
            return Err(bad("payload length mismatch"));
        }
        let f = |off: usize| f64::from_le_bytes(body[off..off + 8].try_into().unwrap());
        let mut traj = Trajectory::new();
        let data = head + 8 * s;
        for k in 0..s {
            let pos = (0..n * d).map(|i| f(data + 8 * (k * n * d + i))).collect();
            traj.push(ParticleCloud::new(pos, d, f(head + 8 * k))?)?;
        }
        Ok(traj)
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let bad = |line: usize, m: &str| LandauError::Io(format!("trajectory csv line {line}: {m}"));
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let d = header.split(',').count().checked_sub(2).ok_or_else(|| bad(1, "bad header"))?;
        let mut traj = Trajectory::new();
        let mut cur: Option<(f64, Vec<f64>)> = None;
        for (ln, line) in lines {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != d + 2 {
                return Err(bad(ln + 1, "wrong column count"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(ln + 1, "not a number"));
            let t = num(cols[0])?;
            if cur.as_ref().map_or(true, |(ct, _)| *ct != t) {
                if let Some((ct, pos)) = cur.take() {
                    traj.push(ParticleCloud::new(pos, d, ct)?)?;
                }
                cur = Some((t, Vec::new()));
            }
            let pos = &mut cur.as_mut().unwrap().1;
            for c in &cols[2..] {
                pos.push(num(c)?);
            }
        }
        if let Some((ct, pos)) = cur {
            traj.push(ParticleCloud::new(pos, d, ct)?)?;
        }
        Ok(traj)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let is_csv = path.extension().is_some_and(|e| e == "csv");
        if is_csv {
            std::fs::write(path, self.to_csv())?;
        } else {
            std::fs::write(path, self.to_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| LandauError::Io(format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "csv") {
            Self::from_csv(&String::from_utf8_lossy(&bytes))
        } else {
            Self::from_bytes(&bytes)
        }
    }
}

impl Default for Trajectory {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------- stepping core

/// Per-step hook called with `(step, t, positions)` returning the scores.
pub type ScoreHook<'a> = dyn FnMut(usize, f64, &[f64]) -> Result<Vec<f64>> + 'a;

/// Explicit Euler `v <- v + dt U(v)` driven by `scores`. Every stepper in
/// this module goes through here.
pub fn euler_core(
    initial: &ParticleCloud,
    kernel: &KernelConfig,
    cfg: &SteppingConfig,
    scores: &mut ScoreHook<'_>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let d = initial.dim();
    let t0 = initial.time;
    let record = cfg.snapshot_steps(t0)?;
    let mut traj = Trajectory::new();
    let mut x = initial.positions().to_vec();
    let mut next = record.iter().peekable();
    for step in 0..=cfg.n_steps {
        let t = t0 + step as f64 * cfg.dt;
        if next.peek() == Some(&&step) {
            next.next();
            traj.push(ParticleCloud::new(x.clone(), d, t)?)?;
        }
        if step == cfg.n_steps || next.peek().is_none() {
            break;
        }
        let s = scores(step, t, &x)?;
        let u = self_drift(&x, &s, d, kernel);
        for (xi, ui) in x.iter_mut().zip(&u) {
            *xi += cfg.dt * ui;
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(LandauError::NonFinite { step: step + 1, detail: format!("particle {}", i / d) });
        }
    }
    Ok(traj)
}

/// Stepping with a fixed score field evaluated at the step times.
pub fn score_rollout(score: &dyn ScoreField, initial: &ParticleCloud, kernel: &KernelConfig, cfg: &SteppingConfig) -> Result<Trajectory> {
    euler_core(initial, kernel, cfg, &mut |_, t, x| score.score_batch(x, t))
}

/// Euler integration with the analytic BKW score.
pub fn reference_euler(case: &BenchmarkCase, initial: &ParticleCloud, cfg: &SteppingConfig) -> Result<Trajectory> {
    let score = case.analytic_score()?;
    score_rollout(&score, initial, &case.kernel, cfg)
}

/// Euler integration driven by a trained (time-dependent) score network or
/// any other score field.
pub fn pinn_score_rollout(score: &dyn ScoreField, case: &BenchmarkCase, initial: &ParticleCloud, cfg: &SteppingConfig) -> Result<Trajectory> {
    score_rollout(score, initial, &case.kernel, cfg)
}

// ---------------------------------------------------------------- SBP

/// ISM refit state of the stepping score network.
pub struct SbpFitter {
    spec: NetworkSpec,
    params: Vec<f64>,
    adam: AdamState,
    init_seed: u64,
    lr: f64,
    warm: bool,
}

impl SbpFitter {
    pub fn new(spec: NetworkSpec, seed: u64, lr: f64, warm: bool) -> Self {
        let params = init_params(&spec, seed).values;
        let adam = AdamState::new(params.len(), lr);
        SbpFitter { spec, params, adam, init_seed: seed, lr, warm }
    }

    /// ISM value and gradient at `x`.
    pub fn ism(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let tape = Tape::new();
        let p = tape.param(&self.params);
        let xs = tape.constant(x);
        let (s, div) = tape.network_with_divergence(&self.spec, p, xs, &[])?;
        let rows = x.len() / self.spec.dim;
        let total = tape.scale(tape.add(tape.sum_sq(s), tape.scale(tape.sum(div), 2.0)), 1.0 / rows as f64);
        let loss = tape.scalar(total);
        let g = tape.grad(&loss)?.wrt(p);
        Ok((loss.value, g))
    }

    /// `iters` Adam steps on the ISM loss at `x`; returns the last loss.
    pub fn fit(&mut self, x: &[f64], iters: usize, step: usize) -> Result<f64> {
        let mut last = f64::NAN;
        for _ in 0..iters {
            let (l, g) = self.ism(x)?;
            adam_step(&mut self.params, &g, &mut self.adam).map_err(|e| LandauError::NonFinite { step, detail: e.to_string() })?;
            last = l;
        }
        Ok(last)
    }

    pub fn reset(&mut self) {
        self.params = init_params(&self.spec, self.init_seed).values;
        self.adam = AdamState::new(self.params.len(), self.lr);
    }

    pub fn scores(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = crate::nn::ParameterSet::from_values(&self.spec, self.params.clone())?;
        Ok(crate::nn::eval_batch(&self.spec, &p, x, &[])?)
    }
}

/// Score-based particle method: refit, then step.
pub fn sbp_run(case: &BenchmarkCase, initial: &ParticleCloud, cfg: &SteppingConfig) -> Result<Trajectory> {
    sbp_run_with(case, initial, cfg, None)
}

/// [`sbp_run`] with an optional frozen score that replaces the refit.
pub fn sbp_run_with(case: &BenchmarkCase, initial: &ParticleCloud, cfg: &SteppingConfig, frozen: Option<&dyn ScoreField>) -> Result<Trajectory> {
    if let Some(s) = frozen {
        return score_rollout(s, initial, &case.kernel, cfg);
    }
    let spec = cfg.score_spec.unwrap_or_else(|| arch::stepping_score(initial.dim()));
    let mut fitter = SbpFitter::new(spec, cfg.seed, cfg.lr, cfg.warm_start);
    euler_core(initial, &case.kernel, cfg, &mut |step, _, x| {
        if step == 0 {
            fitter.fit(x, cfg.initial_fit_iters, step)?;
        } else if !fitter.warm {
            fitter.reset();
        }
        fitter.fit(x, cfg.fit_iters, step)?;
        fitter.scores(x)
    })
}

// ---------------------------------------------------------------- blob

/// Gradient of the regularized-entropy first variation for a Gaussian
/// mollifier of width `bandwidth`.
pub fn blob_score(positions: &[f64], dim: usize, bandwidth: f64) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    let n = positions.len() / dim;
    if n < 2 {
        return Err(LandauError::Input("blob score needs at least two particles".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(LandauError::Input("bandwidth must be positive".into()));
    }
    let inv2 = 1.0 / (bandwidth * bandwidth);
    let norm = (2.0 * std::f64::consts::PI * bandwidth * bandwidth).powf(-(dim as f64) / 2.0);
    let psi = |a: &[f64], b: &[f64]| {
        let r2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        norm * (-0.5 * r2 * inv2).exp()
    };
    let p = |i: usize| &positions[i * dim..(i + 1) * dim];
    let dens: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| (0..n).map(|k| psi(p(j), p(k))).sum::<f64>() / n as f64)
        .collect();
    if let Some(j) = dens.iter().position(|&x| !(x > f64::MIN_POSITIVE)) {
        return Err(LandauError::IsolatedParticle(j));
    }
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut g1 = vec![0.0; dim];
            let mut g2 = vec![0.0; dim];
            let mut sum = 0.0;
            for j in 0..n {
                let w = psi(p(i), p(j));
                sum += w;
                for k in 0..dim {
                    let grad = -(p(i)[k] - p(j)[k]) * inv2 * w;
                    g1[k] += grad;
                    g2[k] += grad / dens[j];
                }
            }
            (0..dim).map(|k| g1[k] / sum + g2[k] / n as f64).collect()
        })
        .collect();
    Ok(rows.concat())
}

pub struct BlobScore {
    pub dim: usize,
    pub bandwidth: f64,
}

impl ScoreField for BlobScore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn provenance(&self) -> Provenance {
        Provenance::Blob
    }

    /// The blob score of the point set itself.
    fn score_batch(&self, points: &[f64], _t: f64) -> Result<Vec<f64>> {
        blob_score(points, self.dim, self.bandwidth)
    }
}

pub fn blob_run(case: &BenchmarkCase, initial: &ParticleCloud, cfg: &SteppingConfig) -> Result<Trajectory> {
    blob_run_with(case, initial, cfg, None)
}

pub fn blob_run_with(case: &BenchmarkCase, initial: &ParticleCloud, cfg: &SteppingConfig, frozen: Option<&dyn ScoreField>) -> Result<Trajectory> {
    let blob = BlobScore { dim: initial.dim(), bandwidth: cfg.bandwidth };
    score_rollout(frozen.unwrap_or(&blob), initial, &case.kernel, cfg)
}

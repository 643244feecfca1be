//! Joint global-in-time training of a displacement flow map and a
//! time-dependent score network.
//!
//! The flow is `Phi(v0, t) = v0 + (t - t0) NN(v0, t)`, so `Phi(v0, t0) = v0`
//! for every parameter value. Each step draws `N_t` collocation times, pushes
//! the fixed initial cloud through the flow, and minimizes
//! `L_phys + lambda * L_ism` with one Adam state over both networks.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::benchmarks::{sample_initial, BenchmarkCase};
use crate::error::{LandauError, Result};
use crate::kernel::{drift_on_tape, KernelConfig, ParticleCloud, Provenance, ScoreField};
use crate::nn::{
    adam_step, eval_batch, init_params, velocity_basis, AdamState, Block, DifferentiableScalar, NetworkSpec,
    ParameterSet, Tape, Var,
};

/// Network shapes used by the presets.
pub mod arch {
    use super::*;

    /// velocity (32, 2), time (16, 1), trunk (128, 4).
    pub fn group_a(dim: usize) -> NetworkSpec {
        NetworkSpec::new(dim, Block::new(32, 2), Some(Block::new(16, 1)), Block::new(128, 4)).expect("valid")
    }

    /// velocity (256, 2), time (128, 1), trunk (256, 6).
    pub fn group_b(dim: usize) -> NetworkSpec {
        NetworkSpec::new(dim, Block::new(256, 2), Some(Block::new(128, 1)), Block::new(256, 6)).expect("valid")
    }

    /// Group A with a time embedding of width 64.
    pub fn group_c_flow(dim: usize) -> NetworkSpec {
        NetworkSpec::new(dim, Block::new(32, 2), Some(Block::new(64, 1)), Block::new(128, 4)).expect("valid")
    }

    /// Time-independent score net with three hidden layers of width 32.
    pub fn stepping_score(dim: usize) -> NetworkSpec {
        NetworkSpec::new(dim, Block::new(32, 1), None, Block::new(32, 2)).expect("valid")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub spec: NetworkSpec,
    pub params: ParameterSet,
    pub t0: f64,
}

impl FlowModel {
    pub fn new(spec: NetworkSpec, params: ParameterSet, t0: f64) -> Result<Self> {
        if !spec.has_time() {
            return Err(LandauError::Config("the flow network needs a time embedding".into()));
        }
        if spec.output_dim != spec.dim {
            return Err(LandauError::Config("flow output dimension must equal velocity dimension".into()));
        }
        if params.len() != spec.param_count() {
            return Err(LandauError::Config("flow parameters do not match the network spec".into()));
        }
        Ok(FlowModel { spec, params, t0 })
    }

    /// `Phi(v0, t)` for every row of `v0`.
    pub fn push(&self, v0: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = v0.len() / self.spec.dim;
        let nn = eval_batch(&self.spec, &self.params, v0, &vec![t; n])?;
        let dt = t - self.t0;
        Ok(v0.iter().zip(&nn).map(|(v, g)| v + dt * g).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    pub spec: NetworkSpec,
    pub params: ParameterSet,
}

impl ScoreModel {
    pub fn new(spec: NetworkSpec, params: ParameterSet) -> Result<Self> {
        if spec.output_dim != spec.dim {
            return Err(LandauError::Config("score output dimension must equal velocity dimension".into()));
        }
        if params.len() != spec.param_count() {
            return Err(LandauError::Config("score parameters do not match the network spec".into()));
        }
        Ok(ScoreModel { spec, params })
    }

    fn times(&self, n: usize, t: f64) -> Vec<f64> {
        if self.spec.has_time() {
            vec![t; n]
        } else {
            Vec::new()
        }
    }
}

impl ScoreField for ScoreModel {
    fn dim(&self) -> usize {
        self.spec.dim
    }

    fn provenance(&self) -> Provenance {
        Provenance::Neural
    }

    fn score_batch(&self, points: &[f64], t: f64) -> Result<Vec<f64>> {
        let n = points.len() / self.spec.dim;
        Ok(eval_batch(&self.spec, &self.params, points, &self.times(n, t))?)
    }
}

/// `Phi(V_i, t)` for the cloud's particles; a single forward pass.
pub fn infer_particles(flow: &FlowModel, initial: &ParticleCloud, t: f64) -> Result<ParticleCloud> {
    initial.with_positions(flow.push(initial.positions(), t)?, t)
}

// ---------------------------------------------------------------- losses

/// A tape holding both parameter vectors as differentiable leaves.
pub struct LossGraph {
    pub tape: Tape,
    pub flow_params: Var,
    pub score_params: Var,
}

impl LossGraph {
    pub fn new(flow: &FlowModel, score: &ScoreModel) -> Self {
        let tape = Tape::new();
        let flow_params = tape.params(&flow.params);
        let score_params = tape.params(&score.params);
        LossGraph { tape, flow_params, score_params }
    }

    /// `(d loss / d flow, d loss / d score)`.
    pub fn gradients(&self, loss: &DifferentiableScalar) -> Result<(Vec<f64>, Vec<f64>)> {
        let g = self.tape.grad(loss)?;
        Ok((g.wrt(self.flow_params), g.wrt(self.score_params)))
    }

    /// Score values and divergences at `points` (rows) at per-row times.
    fn score_with_div(&self, score: &ScoreModel, points: Var, ts: &[f64]) -> Result<(Var, Var)> {
        let ts = if score.spec.has_time() { ts.to_vec() } else { Vec::new() };
        let out = self.tape.network(&score.spec, self.score_params, points, &ts, &velocity_basis(&score.spec))?;
        let div = self.tape.trace(&out.tangents, score.spec.dim);
        Ok((out.values, div))
    }

    /// `(1 / rows) sum (|s|^2 + 2 div s)`.
    fn ism_from(&self, s: Var, div: Var, rows: usize) -> DifferentiableScalar {
        let t = &self.tape;
        let quad = t.sum_sq(s);
        let lin = t.scale(t.sum(div), 2.0);
        self.tape.scalar(t.scale(t.add(quad, lin), 1.0 / rows as f64))
    }
}

/// Hyvarinen objective averaged over all particles of all clouds, each cloud
/// evaluated at its own time.
pub fn ism_loss(graph: &LossGraph, score: &ScoreModel, clouds: &[ParticleCloud]) -> Result<DifferentiableScalar> {
    if clouds.is_empty() {
        return Err(LandauError::Input("ism_loss needs at least one cloud".into()));
    }
    let mut pts = Vec::new();
    let mut ts = Vec::new();
    for c in clouds {
        pts.extend_from_slice(c.positions());
        ts.extend(std::iter::repeat(c.time).take(c.len()));
    }
    let rows = ts.len();
    let x = graph.tape.constant(&pts);
    let (s, div) = graph.score_with_div(score, x, &ts)?;
    Ok(graph.ism_from(s, div, rows))
}

/// Residuals at the collocation times.
pub struct Residuals {
    /// `N_t * N` rows of `d_t Phi - U(Phi)`, time-major.
    pub rho: Var,
    /// Flow-pushed positions, same layout as `rho`.
    pub positions: Var,
    pub scores: Var,
    pub rows: usize,
}

pub fn physics_residuals(
    graph: &LossGraph,
    flow: &FlowModel,
    score: &ScoreModel,
    initial: &ParticleCloud,
    times: &[f64],
    cfg: &KernelConfig,
) -> Result<Residuals> {
    let d = initial.dim();
    let n = initial.len();
    if flow.spec.dim != d || score.spec.dim != d {
        return Err(LandauError::Input("network dimension does not match the cloud".into()));
    }
    if times.is_empty() {
        return Err(LandauError::Input("need at least one collocation time".into()));
    }
    let t = &graph.tape;
    let mut v0 = Vec::with_capacity(times.len() * n * d);
    let mut ts = Vec::with_capacity(times.len() * n);
    for &tk in times {
        v0.extend_from_slice(initial.positions());
        ts.extend(std::iter::repeat(tk).take(n));
    }
    let offsets: Vec<f64> = ts.iter().map(|tk| tk - flow.t0).collect();
    let mut e_t = vec![0.0; flow.spec.input_dim()];
    e_t[d] = 1.0;
    let net = t.network(&flow.spec, graph.flow_params, t.constant(&v0), &ts, &[e_t])?;
    let positions = t.add_const(t.row_scale(net.values, &offsets, d), &v0);
    let dphi = t.add(net.values, t.row_scale(net.tangents[0], &offsets, d));
    // the drift needs score values only; divergences are taken on frozen
    // positions in the ISM term
    let score_ts = if score.spec.has_time() { ts.clone() } else { Vec::new() };
    let scores = t.network(&score.spec, graph.score_params, positions, &score_ts, &[])?.values;
    let drift = drift_on_tape(t, positions, scores, n, d, *cfg);
    let rho = t.sub(dphi, drift);
    Ok(Residuals { rho, positions, scores, rows: times.len() * n })
}

pub struct LossTerms {
    pub phys: DifferentiableScalar,
    pub ism: DifferentiableScalar,
    pub total: DifferentiableScalar,
}

/// `L_phys + lambda * L_ism` on the flow-pushed clouds at `times`. The ISM
/// gradient with respect to the flow is zero by construction.
pub fn total_loss(
    graph: &LossGraph,
    flow: &FlowModel,
    score: &ScoreModel,
    initial: &ParticleCloud,
    times: &[f64],
    cfg: &KernelConfig,
    lambda: f64,
) -> Result<LossTerms> {
    let r = physics_residuals(graph, flow, score, initial, times, cfg)?;
    let t = &graph.tape;
    let phys_var = t.scale(t.sum_sq(r.rho), 1.0 / r.rows as f64);
    // the ISM term trains the score only: positions enter as constants, since
    // letting it reach the flow rewards collapsing the cloud
    let ts: Vec<f64> = times.iter().flat_map(|&tk| std::iter::repeat(tk).take(initial.len())).collect();
    let frozen = t.constant(&t.value(r.positions));
    let (s, div) = graph.score_with_div(score, frozen, &ts)?;
    let ism = graph.ism_from(s, div, r.rows);
    let ism_var = ism.var().expect("recorded");
    let total = t.add(phys_var, t.scale(ism_var, lambda));
    Ok(LossTerms { phys: t.scalar(phys_var), ism, total: t.scalar(total) })
}

// ---------------------------------------------------------------- training

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TimeSampling {
    Stratified,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub case: BenchmarkCase,
    pub n_particles: usize,
    pub n_times: usize,
    pub lambda_score: f64,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub flow_spec: NetworkSpec,
    pub score_spec: NetworkSpec,
    pub time_sampling: TimeSampling,
    pub resample_particles: bool,
}

impl TrainConfig {
    /// Group A networks and the documented defaults.
    pub fn new(case: BenchmarkCase) -> Self {
        let d = case.dim();
        TrainConfig {
            case,
            n_particles: 1000,
            n_times: 16,
            lambda_score: 1.0,
            epochs: 1000,
            lr: 1e-4,
            seed: 0,
            flow_spec: arch::group_a(d),
            score_spec: arch::group_a(d),
            time_sampling: TimeSampling::Stratified,
            resample_particles: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.case.validate()?;
        let bad = |m: &str| Err(LandauError::Config(m.into()));
        if self.n_particles < 2 {
            return bad("n_particles must be at least 2");
        }
        if self.n_times < 1 {
            return bad("n_times must be at least 1");
        }
        if !(self.lambda_score >= 0.0 && self.lambda_score.is_finite()) {
            return bad("lambda_score must be nonnegative");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        let d = self.case.dim();
        if self.flow_spec.dim != d || self.score_spec.dim != d {
            return bad("network dimension does not match the benchmark");
        }
        if !self.flow_spec.has_time() || !self.score_spec.has_time() {
            return bad("flow and score networks need a time embedding");
        }
        Ok(())
    }

    /// Seed of the `k`-th independent random stream of this run.
    pub fn stream(&self, k: u64) -> u64 {
        self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k)
    }

    pub fn initial_models(&self) -> Result<(FlowModel, ScoreModel)> {
        let flow = FlowModel::new(self.flow_spec, init_params(&self.flow_spec, self.stream(1)), self.case.t0)?;
        let score = ScoreModel::new(self.score_spec, init_params(&self.score_spec, self.stream(2)))?;
        Ok((flow, score))
    }

    /// The fixed training cloud.
    pub fn initial_cloud(&self) -> Result<ParticleCloud> {
        sample_initial(&self.case, self.n_particles, self.stream(3))
    }
}

/// Collocation times on `[t0, t1]`: one uniform draw per stratum, or plain
/// uniform draws.
pub fn sample_times(rng: &mut ChaCha8Rng, t0: f64, t1: f64, k: usize, mode: TimeSampling) -> Vec<f64> {
    let w = t1 - t0;
    (0..k)
        .map(|i| {
            let u: f64 = rng.gen();
            match mode {
                TimeSampling::Stratified => t0 + w * (i as f64 + u) / k as f64,
                TimeSampling::Uniform => t0 + w * u,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRecord {
    pub step: usize,
    pub loss_phys: f64,
    pub loss_ism: f64,
    pub loss_total: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainingHistory {
    pub const HEADER: &'static str = "step,loss_phys,loss_ism,loss_total,seconds";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&format!("{},{:e},{:e},{:e},{:.3}\n", r.step, r.loss_phys, r.loss_ism, r.loss_total, r.seconds));
        }
        s
    }

    /// Mean of `f` over the first and last `window` records.
    pub fn smoothed_ends(&self, window: usize, f: impl Fn(&HistoryRecord) -> f64) -> Option<(f64, f64)> {
        let n = self.records.len();
        if n < window || window == 0 {
            return None;
        }
        let mean = |rs: &[HistoryRecord]| rs.iter().map(&f).sum::<f64>() / rs.len() as f64;
        Some((mean(&self.records[..window]), mean(&self.records[n - window..])))
    }
}

pub struct TrainOutput {
    pub flow: FlowModel,
    pub score: ScoreModel,
    pub history: TrainingHistory,
    pub initial: ParticleCloud,
}

pub fn train(config: &TrainConfig) -> Result<TrainOutput> {
    train_with(config, |_| {})
}

/// [`train`] with a callback after each recorded step.
pub fn train_with(config: &TrainConfig, mut on_step: impl FnMut(&HistoryRecord)) -> Result<TrainOutput> {
    config.validate()?;
    let (mut flow, mut score) = config.initial_models()?;
    let mut initial = config.initial_cloud()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.stream(4));
    let nf = flow.params.len();
    let mut joint: Vec<f64> = flow.params.values.iter().chain(&score.params.values).copied().collect();
    let mut adam = AdamState::new(joint.len(), config.lr);
    let mut history = TrainingHistory::default();
    let start = Instant::now();
    let case = &config.case;
    for step in 0..config.epochs {
        if config.resample_particles && step > 0 {
            initial = sample_initial(case, config.n_particles, config.stream(1000 + step as u64))?;
        }
        let times = sample_times(&mut rng, case.t0, case.t1, config.n_times, config.time_sampling);
        let graph = LossGraph::new(&flow, &score);
        let terms = total_loss(&graph, &flow, &score, &initial, &times, &case.kernel, config.lambda_score)?;
        let rec = HistoryRecord {
            step,
            loss_phys: terms.phys.value,
            loss_ism: terms.ism.value,
            loss_total: terms.total.value,
            seconds: start.elapsed().as_secs_f64(),
        };
        if !rec.loss_total.is_finite() {
            return Err(LandauError::NonFinite {
                step,
                detail: format!("loss_phys={} loss_ism={} loss_total={}", rec.loss_phys, rec.loss_ism, rec.loss_total),
            });
        }
        let (gf, gs) = graph.gradients(&terms.total)?;
        let grads: Vec<f64> = gf.into_iter().chain(gs).collect();
        adam_step(&mut joint, &grads, &mut adam).map_err(|e| LandauError::NonFinite { step, detail: e.to_string() })?;
        flow.params.values.copy_from_slice(&joint[..nf]);
        score.params.values.copy_from_slice(&joint[nf..]);
        history.records.push(rec);
        on_step(&rec);
    }
    Ok(TrainOutput { flow, score, history, initial })
}

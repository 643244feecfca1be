//! The pipelines behind each subcommand. Every command claims its output
//! directory, writes its artifacts and finishes with a manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use landau_core::baselines::{
    blob_run, pinn_score_rollout, reference_euler, sbp_run, BlobScore, SteppingConfig, Trajectory,
};
use landau_core::benchmarks::{sample_initial, BenchmarkCase};
use landau_core::kernel::{ParticleCloud, ScoreField};
use landau_core::metrics::{
    certificate_report, cloud_error, entropy_decay_proxy, kde, kde_rate_study, kinetic_energy, rel_l2_values,
    relative_fisher_divergence, residual_report, DensityField, GridSpec, MetricsRecord,
};
use landau_core::nn::{load_checkpoint, write_checkpoint};
use landau_core::trainer::{infer_particles, train_with, FlowModel, ScoreModel, TrainConfig, TrainingHistory};
use landau_core::LandauError;

use crate::config::{ConfigError, ExperimentConfig, Solver};
use crate::error::CliError;
use crate::manifest::{version, RunDir, RunManifest};

/// Trajectories with at least this many particles are stored in binary.
pub const BINARY_THRESHOLD: usize = 10_000;

fn manifest(command: &str, cfg: &ExperimentConfig, start: Instant) -> RunManifest {
    RunManifest {
        version: version(),
        command: command.into(),
        seed: cfg.seed,
        threads: rayon::current_num_threads(),
        wall_seconds: start.elapsed().as_secs_f64(),
        config: cfg.to_text(),
        files: Vec::new(),
    }
}

pub fn train_config(cfg: &ExperimentConfig) -> Result<TrainConfig, CliError> {
    let d = cfg.dim();
    let mut tc = TrainConfig::new(cfg.case()?);
    tc.n_particles = cfg.n_particles;
    tc.n_times = cfg.n_times;
    tc.lambda_score = cfg.lambda_score;
    tc.epochs = cfg.epochs;
    tc.lr = cfg.lr;
    tc.seed = cfg.seed;
    tc.flow_spec = cfg.flow.spec(d)?;
    tc.score_spec = cfg.score.spec(d)?;
    tc.time_sampling = cfg.time_sampling;
    tc.resample_particles = cfg.resample_particles;
    Ok(tc)
}

/// Stepping settings over the full case window, recording `snapshots`.
pub fn stepping_config(cfg: &ExperimentConfig, case: &BenchmarkCase, snapshots: Vec<f64>) -> Result<SteppingConfig, CliError> {
    let n_steps = ((case.t1 - case.t0) / cfg.dt).round() as usize;
    let mut sc = SteppingConfig::new(cfg.dt, n_steps);
    sc.n_particles = cfg.stepping_particles;
    sc.fit_iters = cfg.fit_iters;
    sc.initial_fit_iters = cfg.initial_fit_iters;
    sc.lr = cfg.stepping_lr;
    sc.bandwidth = cfg.blob_bandwidth;
    sc.seed = cfg.seed;
    sc.warm_start = cfg.warm_start;
    sc.score_spec = Some(cfg.sbp_score.spec(cfg.dim())?);
    sc.snapshot_times = snapshots;
    sc.validate()?;
    Ok(sc)
}

/// The particles a simulation starts from: the training cloud for the
/// learned flow, a fresh draw of `stepping.n_particles` otherwise.
pub fn simulation_initial(cfg: &ExperimentConfig) -> Result<ParticleCloud, CliError> {
    let tc = train_config(cfg)?;
    if cfg.solver == Solver::Pinnpm {
        return Ok(tc.initial_cloud()?);
    }
    Ok(sample_initial(&tc.case, cfg.stepping_particles, tc.stream(5))?)
}

fn require(path: &Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
    path.clone().ok_or_else(|| {
        CliError::Config(ConfigError { line: None, key: Some(key.into()), message: "required by this solver".into() })
    })
}

pub fn load_flow(path: &Path, case: &BenchmarkCase) -> Result<FlowModel, CliError> {
    let (spec, params) = load_checkpoint(path).map_err(|e| CliError::io(path, e))?;
    Ok(FlowModel::new(spec, params, case.t0)?)
}

pub fn load_score(path: &Path) -> Result<ScoreModel, CliError> {
    let (spec, params) = load_checkpoint(path).map_err(|e| CliError::io(path, e))?;
    Ok(ScoreModel::new(spec, params)?)
}

/// `train`: checkpoints, loss history and manifest. A non-finite loss
/// leaves the partial history, a `FAILED` marker and a manifest behind.
pub fn train(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let tc = train_config(cfg)?;
    let mut dir = RunDir::open(out)?;
    let mut partial = TrainingHistory::default();
    match train_with(&tc, |r| partial.records.push(*r)) {
        Ok(res) => {
            dir.write("flow.ckpt", &write_checkpoint(&res.flow.spec, &res.flow.params))?;
            dir.write("score.ckpt", &write_checkpoint(&res.score.spec, &res.score.params))?;
            dir.write("history.csv", res.history.to_csv().as_bytes())?;
            dir.finish(manifest("train", cfg, start))
        }
        Err(e) => {
            let err = CliError::from(e);
            dir.write("history.csv", partial.to_csv().as_bytes())?;
            dir.write("FAILED", format!("{err}\n").as_bytes())?;
            dir.finish(manifest("train", cfg, start))?;
            Err(err)
        }
    }
}

pub fn trajectory_name(n: usize) -> &'static str {
    if n < BINARY_THRESHOLD {
        "trajectory.csv"
    } else {
        "trajectory.bin"
    }
}

/// Runs the configured solver and returns the snapshots at `cfg.snapshots`.
pub fn run_solver(cfg: &ExperimentConfig) -> Result<Trajectory, CliError> {
    let case = cfg.case()?;
    let initial = simulation_initial(cfg)?;
    let sc = stepping_config(cfg, &case, cfg.snapshots.clone())?;
    let traj = match cfg.solver {
        Solver::Reference => reference_euler(&case, &initial, &sc)?,
        Solver::Sbp => sbp_run(&case, &initial, &sc)?,
        Solver::Blob => blob_run(&case, &initial, &sc)?,
        Solver::PinnScore => {
            let score = load_score(&require(&cfg.score_checkpoint, "checkpoint.score")?)?;
            pinn_score_rollout(&score, &case, &initial, &sc)?
        }
        Solver::Pinnpm => {
            let flow = load_flow(&require(&cfg.flow_checkpoint, "checkpoint.flow")?, &case)?;
            let mut times = cfg.snapshots.clone();
            times.sort_by(f64::total_cmp);
            times.dedup();
            let mut traj = Trajectory::new();
            for t in times {
                traj.push(infer_particles(&flow, &initial, t)?)?;
            }
            traj
        }
    };
    Ok(traj)
}

/// `simulate`: one trajectory file plus manifest; with no snapshot times
/// only the manifest is written.
pub fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    // checkpoint requirements are config errors, reported before any work
    match cfg.solver {
        Solver::Pinnpm => drop(require(&cfg.flow_checkpoint, "checkpoint.flow")?),
        Solver::PinnScore => drop(require(&cfg.score_checkpoint, "checkpoint.score")?),
        _ => {}
    }
    let mut dir = RunDir::open(out)?;
    if !cfg.snapshots.is_empty() {
        let traj = run_solver(cfg)?;
        let n = traj.snapshots()[0].len();
        let name = trajectory_name(n);
        let bytes = if n < BINARY_THRESHOLD { traj.to_csv().into_bytes() } else { traj.to_bytes() };
        dir.write(name, &bytes)?;
    }
    dir.finish(manifest("simulate", cfg, start))
}

/// Finds the trajectory file of a simulate run.
pub fn find_trajectory(run: &Path) -> Result<PathBuf, CliError> {
    for name in ["trajectory.csv", "trajectory.bin"] {
        let p = run.join(name);
        if p.exists() {
            return Ok(p);
        }
    }
    Err(CliError::Io(format!("{}: trajectory file not found", run.join("trajectory.csv").display())))
}

fn density_on_grid(case: &BenchmarkCase, grid: &GridSpec, t: f64) -> Result<DensityField, CliError> {
    let field = DensityField::from_fn(grid, |v| case.density(v, t).unwrap_or(f64::NAN));
    if field.values.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Numeric(format!("analytic density undefined at t = {t}")));
    }
    Ok(field)
}

/// Metrics for every snapshot of `traj`, computed against the regenerated
/// initial cloud and (for closed-form cases) the analytic-score reference.
pub fn evaluate_trajectory(cfg: &ExperimentConfig, traj: &Trajectory) -> Result<Vec<MetricsRecord>, CliError> {
    let case = cfg.case()?;
    let d = cfg.dim();
    let initial = simulation_initial(cfg)?;
    let times = traj.times();
    let grid = GridSpec::cube(d, cfg.grid_min, cfg.grid_max, cfg.grid_count)?;
    let reference = if case.has_analytic() {
        Some(reference_euler(&case, &initial, &stepping_config(cfg, &case, times.clone())?)?)
    } else {
        None
    };
    let flow = match (cfg.solver, &cfg.flow_checkpoint) {
        (Solver::Pinnpm, Some(p)) => Some(load_flow(p, &case)?),
        _ => None,
    };
    let score = match &cfg.score_checkpoint {
        Some(p) if matches!(cfg.solver, Solver::Pinnpm | Solver::PinnScore) => Some(load_score(p)?),
        _ => None,
    };
    let analytic = case.analytic_score().ok();
    // fresh flow-pushed samples for density reconstruction
    let fresh = match &flow {
        Some(_) => Some(sample_initial(&case, cfg.kde_samples, train_config(cfg)?.stream(6))?),
        None => None,
    };
    let mut rows = Vec::new();
    for snap in traj.snapshots() {
        let t = snap.time;
        let mut r = MetricsRecord { t, kinetic_energy: Some(kinetic_energy(snap)), ..Default::default() };
        if case.has_analytic() {
            let pts = match (&flow, &fresh) {
                (Some(f), Some(c)) => f.push(c.positions(), t)?,
                _ => snap.positions().to_vec(),
            };
            let est = kde(&pts, d, cfg.kde_bandwidth, &grid)?;
            let truth = density_on_grid(&case, &grid, t)?;
            r.rel_l2 = Some(rel_l2_values(&est.values, &truth.values)?);
        }
        if let Some(reference) = &reference {
            let at = reference
                .at(t)
                .ok_or_else(|| CliError::Numeric(format!("reference has no snapshot at t = {t}")))?;
            r.err_traj = Some(cloud_error(snap, at)?);
        }
        if let (Some(s), Some(a)) = (&score, &analytic) {
            r.rfd = Some(relative_fisher_divergence(s, a, snap)?);
        }
        let proxy_score: Box<dyn ScoreField> = match (score.clone(), analytic.clone()) {
            (Some(s), _) => Box::new(s),
            (None, Some(a)) => Box::new(a),
            (None, None) => Box::new(BlobScore { dim: d, bandwidth: cfg.blob_bandwidth }),
        };
        r.entropy_proxy = Some(entropy_decay_proxy(snap, proxy_score.as_ref(), &case.kernel)?);
        rows.push(r);
    }
    if let (Some(flow), Some(score)) = (&flow, &score) {
        let cert = if case.has_analytic() {
            let mut cert_times = vec![case.t0];
            cert_times.extend(times.iter().copied().filter(|&t| t > case.t0));
            let cert_ref = reference_euler(&case, &initial, &stepping_config(cfg, &case, cert_times)?)?;
            certificate_report(flow, score, &case, &cert_ref)?
        } else {
            residual_report(flow, score, &case, &initial, &times)?
        };
        for c in cert {
            if let Some(r) = rows.iter_mut().find(|r| r.t == c.t) {
                r.delta_phys_sq = c.delta_phys_sq;
                r.delta_2n_sq = c.delta_2n_sq;
                r.e_mse = c.e_mse;
                r.w1_coupling_bound = c.w1_coupling_bound;
                r.gronwall_rhs = c.gronwall_rhs;
                r.gronwall_log10_rhs = c.gronwall_log10_rhs;
                r.heuristic = c.heuristic;
                r.omitted = c.omitted;
            }
        }
    }
    Ok(rows)
}

/// `evaluate`: `metrics.csv` for the trajectory stored in `run`.
pub fn evaluate(cfg: &ExperimentConfig, run: &Path, out: &Path) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let path = find_trajectory(run)?;
    let traj = Trajectory::load(&path).map_err(|e| match e {
        LandauError::Io(m) => CliError::Io(format!("{}: {m}", path.display())),
        other => CliError::from(other),
    })?;
    let rows = evaluate_trajectory(cfg, &traj)?;
    let mut dir = RunDir::open(out)?;
    dir.write("metrics.csv", MetricsRecord::to_csv(&rows).as_bytes())?;
    dir.finish(manifest("evaluate", cfg, start))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateOptions {
    pub ns: Vec<usize>,
    pub replicates: usize,
    /// `bandwidth(N) = scale * N^(-1 / (d + 6))`.
    pub scale: f64,
}

impl Default for RateOptions {
    fn default() -> Self {
        RateOptions { ns: vec![1_000, 3_000, 10_000, 30_000, 100_000], replicates: 10, scale: 0.8 }
    }
}

/// `rate-study`: integrated squared KDE error against sample size.
pub fn rate_study(cfg: &ExperimentConfig, opts: &RateOptions, out: &Path) -> Result<RunManifest, CliError> {
    let start = Instant::now();
    let d = cfg.dim();
    let scale = opts.scale;
    let study = kde_rate_study(d, &opts.ns, opts.replicates, |n| scale * (n as f64).powf(-1.0 / (d as f64 + 6.0)), cfg.seed)?;
    let mut csv = String::from("n,mse\n");
    for (n, m) in study.ns.iter().zip(&study.mse) {
        csv.push_str(&format!("{n},{m:e}\n"));
    }
    let mut dir = RunDir::open(out)?;
    dir.write("rate_study.csv", csv.as_bytes())?;
    dir.write("slope.txt", format!("slope = {}\n", study.slope).as_bytes())?;
    dir.finish(manifest("rate-study", cfg, start))
}

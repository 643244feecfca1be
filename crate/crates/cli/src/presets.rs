//! Named starting configurations.

use landau_core::benchmarks::{BenchmarkCase, BenchmarkTag};
use landau_core::nn::Block;
use landau_core::trainer::TimeSampling;

use crate::config::{ExperimentConfig, NetShape, Solver};

pub const NAMES: &[&str] = &[
    "bkw2d-paper",
    "bkw2d-smoke",
    "bkw2d-sbp",
    "bkw3d-paper",
    "bkw3d-smoke",
    "gaussian-mixture3d-paper",
    "rosenbluth3d-paper",
    "anisotropic2d-paper",
    "truncated2d-paper",
];

const fn net(vel: (usize, usize), time: (usize, usize), trunk: (usize, usize)) -> NetShape {
    NetShape { vel: Block::new(vel.0, vel.1), time: Some(Block::new(time.0, time.1)), trunk: Block::new(trunk.0, trunk.1) }
}

const GROUP_A: NetShape = net((32, 2), (16, 1), (128, 4));
const GROUP_B: NetShape = net((256, 2), (128, 1), (256, 6));
const GROUP_C_FLOW: NetShape = net((32, 2), (64, 1), (128, 4));
const STEPPING: NetShape = NetShape { vel: Block::new(32, 1), time: None, trunk: Block::new(32, 2) };

/// Per-benchmark defaults: networks, particle counts, bandwidth and grid.
pub fn base(tag: BenchmarkTag) -> ExperimentConfig {
    let case = BenchmarkCase::new(tag);
    let (flow, score, stepping_n, bw, half, count) = match tag {
        BenchmarkTag::Bkw2D => (GROUP_A, GROUP_A, 22_500, 0.15, 2.5, 100),
        BenchmarkTag::Bkw3D => (GROUP_B, GROUP_B, 64_000, 0.15, 3.0, 30),
        BenchmarkTag::GaussianMixture3D => (GROUP_B, GROUP_B, 64_000, 0.15, 5.0, 30),
        BenchmarkTag::Rosenbluth3D => (GROUP_C_FLOW, GROUP_A, 27_000, 0.3, 4.0, 30),
        BenchmarkTag::Anisotropic2D => (GROUP_A, GROUP_A, 14_400, 0.3, 4.5, 100),
        BenchmarkTag::Truncated2D => (GROUP_A, GROUP_B, 14_400, 0.3, 4.0, 100),
    };
    let snapshots = match tag {
        BenchmarkTag::Bkw2D => vec![1.0, 2.5, 5.0],
        _ => vec![case.t0, 0.5 * (case.t0 + case.t1), case.t1],
    };
    ExperimentConfig {
        preset: None,
        benchmark: tag,
        solver: Solver::Pinnpm,
        seed: 0,
        t0: case.t0,
        t1: case.t1,
        gamma: case.kernel.gamma,
        c_gamma: case.kernel.c_gamma,
        reg_eps: case.kernel.reg_eps,
        n_particles: 1000,
        n_times: 16,
        epochs: 1000,
        lr: 1e-4,
        lambda_score: 1.0,
        time_sampling: TimeSampling::Stratified,
        resample_particles: true,
        flow,
        score,
        dt: 0.01,
        stepping_particles: stepping_n,
        fit_iters: 25,
        initial_fit_iters: 0,
        stepping_lr: 1e-4,
        blob_bandwidth: bw,
        warm_start: true,
        sbp_score: STEPPING,
        snapshots,
        grid_min: -half,
        grid_max: half,
        grid_count: count,
        kde_bandwidth: bw,
        kde_samples: 100_000,
        flow_checkpoint: None,
        score_checkpoint: None,
    }
}

pub fn get(name: &str) -> Option<ExperimentConfig> {
    let mut cfg = match name {
        "bkw2d-paper" => {
            let mut c = base(BenchmarkTag::Bkw2D);
            c.n_times = 4;
            c.epochs = 3000;
            c
        }
        "bkw2d-smoke" => {
            let mut c = base(BenchmarkTag::Bkw2D);
            let small = net((8, 1), (4, 1), (16, 2));
            c.flow = small;
            c.score = small;
            c.sbp_score = NetShape { vel: Block::new(8, 1), time: None, trunk: Block::new(8, 1) };
            c.n_particles = 64;
            c.n_times = 2;
            c.epochs = 20;
            c.lr = 1e-3;
            c.stepping_particles = 200;
            c.fit_iters = 2;
            c.grid_count = 40;
            c.kde_samples = 2000;
            c
        }
        "bkw2d-sbp" => {
            let mut c = base(BenchmarkTag::Bkw2D);
            c.solver = Solver::Sbp;
            c.stepping_particles = 4000;
            c.initial_fit_iters = 2000;
            c
        }
        "bkw3d-paper" => base(BenchmarkTag::Bkw3D),
        "bkw3d-smoke" => {
            let mut c = base(BenchmarkTag::Bkw3D);
            c.flow = GROUP_A;
            c.score = GROUP_A;
            c.n_times = 2;
            c.epochs = 300;
            c.stepping_particles = 4000;
            c
        }
        "gaussian-mixture3d-paper" => base(BenchmarkTag::GaussianMixture3D),
        "rosenbluth3d-paper" => base(BenchmarkTag::Rosenbluth3D),
        "anisotropic2d-paper" => base(BenchmarkTag::Anisotropic2D),
        "truncated2d-paper" => base(BenchmarkTag::Truncated2D),
        _ => return None,
    };
    cfg.preset = Some(name.to_string());
    Some(cfg)
}

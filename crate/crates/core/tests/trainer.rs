use landau_core::benchmarks::{sample_initial, BenchmarkCase, BenchmarkTag};
use landau_core::kernel::{KernelConfig, ParticleCloud, ScoreField};
use landau_core::nn::{init_params, Activation, Block, NetworkSpec, ParameterSet};
use landau_core::trainer::{
    infer_particles, ism_loss, physics_residuals, total_loss, train, FlowModel, LossGraph, ScoreModel, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(dim: usize) -> NetworkSpec {
    NetworkSpec::new(dim, Block::new(3, 1), Some(Block::new(2, 1)), Block::new(4, 1)).unwrap()
}

fn models(seed: u64) -> (FlowModel, ScoreModel) {
    let spec = tiny(2);
    let mut fp = init_params(&spec, seed);
    let mut sp = init_params(&spec, seed + 1);
    // nonzero biases so every parameter carries signal
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for x in fp.values.iter_mut().chain(sp.values.iter_mut()) {
        *x += rng.gen_range(-0.1..0.1);
    }
    (FlowModel::new(spec, fp, 0.0).unwrap(), ScoreModel::new(spec, sp).unwrap())
}

fn loss_value(flow: &FlowModel, score: &ScoreModel, cloud: &ParticleCloud, times: &[f64], cfg: &KernelConfig, lambda: f64) -> f64 {
    let g = LossGraph::new(flow, score);
    total_loss(&g, flow, score, cloud, times, cfg, lambda).unwrap().total.value
}

// the flow sees only the physics term
fn phys_value(flow: &FlowModel, score: &ScoreModel, cloud: &ParticleCloud, times: &[f64], cfg: &KernelConfig) -> f64 {
    let g = LossGraph::new(flow, score);
    total_loss(&g, flow, score, cloud, times, cfg, 0.8).unwrap().phys.value
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let (flow, score) = models(11);
    assert!(flow.params.len() + score.params.len() <= 200);
    let case = BenchmarkCase::new(BenchmarkTag::Bkw2D);
    let cloud = sample_initial(&case, 12, 5).unwrap();
    let times = [0.7, 2.9, 4.4];
    for cfg in [KernelConfig::maxwell(1.0 / 16.0), KernelConfig::coulomb(1.0, 0.3).unwrap()] {
        let g = LossGraph::new(&flow, &score);
        let terms = total_loss(&g, &flow, &score, &cloud, &times, &cfg, 0.8).unwrap();
        let (gf, gs) = g.gradients(&terms.total).unwrap();
        let h = 1e-5;
        let mut worst = 0.0f64;
        for i in 0..gf.len() {
            let mut fp = flow.clone();
            fp.params.values[i] += h;
            let mut fm = flow.clone();
            fm.params.values[i] -= h;
            let fd = (phys_value(&fp, &score, &cloud, &times, &cfg) - phys_value(&fm, &score, &cloud, &times, &cfg)) / (2.0 * h);
            worst = worst.max((fd - gf[i]).abs() / (1e-8 + fd.abs().max(gf[i].abs())));
        }
        for i in 0..gs.len() {
            let mut sp = score.clone();
            sp.params.values[i] += h;
            let mut sm = score.clone();
            sm.params.values[i] -= h;
            let fd = (loss_value(&flow, &sp, &cloud, &times, &cfg, 0.8) - loss_value(&flow, &sm, &cloud, &times, &cfg, 0.8)) / (2.0 * h);
            worst = worst.max((fd - gs[i]).abs() / (1e-8 + fd.abs().max(gs[i].abs())));
        }
        assert!(worst <= 1e-4, "worst relative error {worst:e}");
    }
}

#[test]
fn loss_decomposes_and_matches_independent_recomputation() {
    let (flow, score) = models(3);
    let case = BenchmarkCase::new(BenchmarkTag::Bkw2D);
    let cloud = sample_initial(&case, 9, 2).unwrap();
    let times = [0.5, 3.0];
    let cfg = case.kernel;
    let g = LossGraph::new(&flow, &score);
    let terms = total_loss(&g, &flow, &score, &cloud, &times, &cfg, 0.6).unwrap();
    assert_eq!(terms.total.value, terms.phys.value + 0.6 * terms.ism.value);

    // independent recomputation from plain evaluations and finite-difference time derivatives
    let n = cloud.len();
    let mut phys = 0.0;
    let mut clouds = Vec::new();
    for &t in &times {
        let pushed = infer_particles(&flow, &cloud, t).unwrap();
        let h = 1e-5;
        let up = flow.push(cloud.positions(), t + h).unwrap();
        let dn = flow.push(cloud.positions(), t - h).unwrap();
        let s = score.score_batch(pushed.positions(), t).unwrap();
        let u = landau_core::kernel::self_drift(pushed.positions(), &s, 2, &cfg);
        for k in 0..2 * n {
            let r = (up[k] - dn[k]) / (2.0 * h) - u[k];
            phys += r * r;
        }
        clouds.push(pushed);
    }
    phys /= (times.len() * n) as f64;
    assert!((phys - terms.phys.value).abs() <= 1e-8 * (1.0 + phys));

    let g2 = LossGraph::new(&flow, &score);
    let ism = ism_loss(&g2, &score, &clouds).unwrap();
    assert!((ism.value - terms.ism.value).abs() <= 1e-12 * (1.0 + ism.value.abs()));

    let zero = LossGraph::new(&flow, &score);
    let only_phys = total_loss(&zero, &flow, &score, &cloud, &times, &cfg, 0.0).unwrap();
    assert_eq!(only_phys.total.value, only_phys.phys.value);
}

#[test]
fn degenerate_models_give_zero_loss() {
    let spec = tiny(2);
    let flow = FlowModel::new(spec, ParameterSet::zeros(&spec), 0.0).unwrap();
    let score = ScoreModel::new(spec, ParameterSet::zeros(&spec)).unwrap();
    let cloud = sample_initial(&BenchmarkCase::new(BenchmarkTag::Bkw2D), 10, 1).unwrap();
    let g = LossGraph::new(&flow, &score);
    let terms = total_loss(&g, &flow, &score, &cloud, &[1.0, 2.0], &KernelConfig::maxwell(1.0), 1.0).unwrap();
    assert_eq!(terms.total.value, 0.0);
}

#[test]
fn residuals_invariant_under_constant_score_shift() {
    let (flow, score) = models(8);
    let cloud = sample_initial(&BenchmarkCase::new(BenchmarkTag::Bkw2D), 15, 4).unwrap();
    let cfg = KernelConfig::maxwell(1.0);
    let times = [1.0, 4.0];
    let g = LossGraph::new(&flow, &score);
    let r1 = g.tape.value(physics_residuals(&g, &flow, &score, &cloud, &times, &cfg).unwrap().rho);
    // shifting the head bias adds a constant vector to the score
    let mut shifted = score.clone();
    let head = shifted.params.slot("head.0").unwrap().bias_range();
    shifted.params.values[head.start] += 2.5;
    shifted.params.values[head.start + 1] -= 1.0;
    let g2 = LossGraph::new(&flow, &shifted);
    let r2 = g2.tape.value(physics_residuals(&g2, &flow, &shifted, &cloud, &times, &cfg).unwrap().rho);
    for (a, b) in r1.iter().zip(&r2) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn two_particle_linear_residual() {
    // Flow NN(v, t) = W v + c t with identity activations; score s(v) = -v.
    // Phi = v0 + t (W v0 + c t), d_t Phi = W v0 + 2 c t.
    // Maxwell C = 1, two particles: U_i = -(1/2) A(z)(s_i - s_j) with s_i - s_j = -z,
    // and A(z) z = 0, so U = 0 and rho = d_t Phi.
    let spec = NetworkSpec::new(2, Block::new(2, 1), Some(Block::new(1, 1)), Block::new(3, 1))
        .unwrap()
        .with_activation(Activation::Identity);
    let mut fp = ParameterSet::zeros(&spec);
    let set = |p: &mut ParameterSet, name: &str, w: &[f64], b: &[f64]| {
        let s = p.slot(name).unwrap().clone();
        p.values[s.weight_range()].copy_from_slice(w);
        p.values[s.bias_range()].copy_from_slice(b);
    };
    // vel: 2x2 identity, time: 1x1 identity, trunk: 3x3 identity, head: 2x3 mixing
    set(&mut fp, "vel.0", &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
    set(&mut fp, "time.0", &[1.0], &[0.0]);
    set(&mut fp, "trunk.0", &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0], &[0.0; 3]);
    // W = [[0.5, -1], [2, 0.25]], c = (1, -3)
    set(&mut fp, "head.0", &[0.5, -1.0, 1.0, 2.0, 0.25, -3.0], &[0.0, 0.0]);
    let flow = FlowModel::new(spec, fp, 0.0).unwrap();
    let score_spec = NetworkSpec::new(2, Block::new(2, 1), Some(Block::new(1, 1)), Block::new(2, 1))
        .unwrap()
        .with_activation(Activation::Identity);
    let mut sp = ParameterSet::zeros(&score_spec);
    set(&mut sp, "vel.0", &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
    set(&mut sp, "trunk.0", &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], &[0.0, 0.0]);
    set(&mut sp, "head.0", &[-1.0, 0.0, 0.0, -1.0], &[0.0, 0.0]);
    let score = ScoreModel::new(score_spec, sp).unwrap();
    let cloud = ParticleCloud::new(vec![1.0, 0.0, -0.5, 2.0], 2, 0.0).unwrap();
    let t = 1.5;
    let g = LossGraph::new(&flow, &score);
    let rho = g.tape.value(physics_residuals(&g, &flow, &score, &cloud, &[t], &KernelConfig::maxwell(1.0)).unwrap().rho);
    let expected = [
        0.5 * 1.0 - 1.0 * 0.0 + 2.0 * t,
        2.0 * 1.0 + 0.25 * 0.0 - 6.0 * t,
        0.5 * -0.5 - 1.0 * 2.0 + 2.0 * t,
        2.0 * -0.5 + 0.25 * 2.0 - 6.0 * t,
    ];
    for (a, b) in rho.iter().zip(expected) {
        assert!((a - b).abs() <= 1e-10, "{rho:?} vs {expected:?}");
    }
}

#[test]
fn ism_of_linear_score_scales() {
    // s(v) = a v for a single-layer identity net; ISM = a^2 mean|v|^2 + 2 a d
    let spec = NetworkSpec::new(2, Block::new(2, 1), None, Block::new(2, 1)).unwrap().with_activation(Activation::Identity);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<f64> = (0..40).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let cloud = ParticleCloud::new(pts.clone(), 2, 0.0).unwrap();
    let m2 = pts.iter().map(|x| x * x).sum::<f64>() / 20.0;
    for a in [-1.0, -2.0] {
        let mut p = ParameterSet::zeros(&spec);
        for name in ["vel.0", "trunk.0"] {
            let r = p.slot(name).unwrap().weight_range();
            p.values[r.start] = 1.0;
            p.values[r.start + 3] = 1.0;
        }
        let r = p.slot("head.0").unwrap().weight_range();
        p.values[r.start] = a;
        p.values[r.start + 3] = a;
        let score = ScoreModel::new(spec, p).unwrap();
        let flow = FlowModel::new(tiny(2), ParameterSet::zeros(&tiny(2)), 0.0).unwrap();
        let g = LossGraph::new(&flow, &score);
        let l = ism_loss(&g, &score, std::slice::from_ref(&cloud)).unwrap().value;
        assert!((l - (a * a * m2 + 4.0 * a)).abs() < 1e-12);
    }
}

#[test]
fn smoke_training_reduces_loss_and_is_deterministic() {
    let mut cfg = TrainConfig::new(BenchmarkCase::new(BenchmarkTag::Bkw2D));
    cfg.n_particles = 64;
    cfg.n_times = 4;
    cfg.epochs = 200;
    cfg.lr = 1e-3;
    cfg.flow_spec = NetworkSpec::new(2, Block::new(16, 1), Some(Block::new(8, 1)), Block::new(32, 2)).unwrap();
    cfg.score_spec = cfg.flow_spec;
    let a = train(&cfg).unwrap();
    let (first, last) = a.history.smoothed_ends(20, |r| r.loss_total).unwrap();
    assert!(last < first, "{first} -> {last}");
    let b = train(&cfg).unwrap();
    assert_eq!(a.flow, b.flow);
    assert_eq!(a.score, b.score);
}

#[test]
fn ism_term_does_not_move_the_flow() {
    let (flow, score) = models(21);
    let cloud = sample_initial(&BenchmarkCase::new(BenchmarkTag::Bkw2D), 10, 4).unwrap();
    let cfg = KernelConfig::maxwell(1.0 / 16.0);
    let grads = |lambda: f64| {
        let g = LossGraph::new(&flow, &score);
        let terms = total_loss(&g, &flow, &score, &cloud, &[1.0, 3.0], &cfg, lambda).unwrap();
        g.gradients(&terms.total).unwrap().0
    };
    assert_eq!(grads(0.0), grads(5.0));
}

use landau_core::baselines::{reference_euler, SteppingConfig};
use landau_core::benchmarks::{bkw_density, sample_initial, BenchmarkCase, BenchmarkTag};
use landau_core::kernel::{KernelConfig, ParticleCloud};
use landau_core::metrics::{
    certificate_report, entropy_proxy_values, hyvarinen_terms, kde, mean_and_stderr, rel_l2_error, residual_report,
    trajectory_error, DensityField, GridSpec, MetricsRecord,
};
use landau_core::nn::{init_params, Block, NetworkSpec};
use landau_core::trainer::{train, FlowModel, ScoreModel, TrainConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian_cloud(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect()
}

#[test]
fn kde_mass_is_one_on_a_wide_grid() {
    let pts = gaussian_cloud(2000, 2, 1);
    let grid = GridSpec::cube(2, -7.0, 7.0, 141).unwrap();
    let field = kde(&pts, 2, 0.3, &grid).unwrap();
    assert!((field.mass() - 1.0).abs() < 2e-2, "{}", field.mass());
}

#[test]
fn kde_matches_direct_sum_in_two_dimensions() {
    let pts = gaussian_cloud(57, 2, 2);
    let grid = GridSpec::new(vec![(-2.0, 2.0, 9), (-1.0, 3.0, 7)]).unwrap();
    let eps = 0.4;
    let field = kde(&pts, 2, eps, &grid).unwrap();
    let nodes = grid.nodes();
    for (k, node) in nodes.chunks(2).enumerate() {
        let direct: f64 = pts
            .chunks(2)
            .map(|p| {
                let r2 = (node[0] - p[0]).powi(2) + (node[1] - p[1]).powi(2);
                (-r2 / (2.0 * eps * eps)).exp() / (2.0 * std::f64::consts::PI * eps * eps)
            })
            .sum::<f64>()
            / 57.0;
        assert!((field.values[k] - direct).abs() <= 1e-14 * (1.0 + direct));
    }
}

#[test]
fn analytic_density_against_itself_has_zero_error() {
    let grid = GridSpec::cube(2, -2.5, 2.5, 100).unwrap();
    let f = |v: &[f64]| bkw_density(v, 2.5, 2).unwrap();
    let field = DensityField::from_fn(&grid, f);
    assert_eq!(rel_l2_error(&field, f).unwrap(), 0.0);
    let doubled = DensityField { grid: grid.clone(), values: field.values.iter().map(|x| 2.0 * x).collect() };
    assert!((rel_l2_error(&doubled, f).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn hyvarinen_identity_for_a_shifted_gaussian_score() {
    let n = 100_000;
    let v = gaussian_cloud(n, 2, 3);
    let b = [0.3, 0.4];
    let exact: Vec<f64> = v.iter().map(|x| -x).collect();
    let shifted: Vec<f64> = v.iter().enumerate().map(|(k, x)| -x + b[k % 2]).collect();
    let div = vec![-2.0; n];
    let l0 = hyvarinen_terms(&exact, &div, 2).unwrap();
    let l1 = hyvarinen_terms(&shifted, &div, 2).unwrap();
    let (m0, se0) = mean_and_stderr(&l0);
    let excess: Vec<f64> = l1.iter().zip(&l0).map(|(a, c)| a - c).collect();
    let (me, see) = mean_and_stderr(&excess);
    assert!((m0 + 2.0).abs() <= 3.0 * se0, "L(-v) = {m0} +- {se0}");
    assert!((me - 0.25).abs() <= 3.0 * see, "excess = {me} +- {see}");
}

#[test]
fn certificate_rows_are_consistent() {
    let case = BenchmarkCase::new(BenchmarkTag::Bkw2D);
    let spec = NetworkSpec::new(2, Block::new(4, 1), Some(Block::new(2, 1)), Block::new(6, 1)).unwrap();
    let mut cfg = TrainConfig::new(case.clone());
    cfg.flow_spec = spec;
    cfg.score_spec = spec;
    cfg.n_particles = 40;
    cfg.n_times = 2;
    cfg.epochs = 15;
    cfg.lr = 1e-3;
    let out = train(&cfg).unwrap();
    let initial = cfg.initial_cloud().unwrap();
    let mut sc = SteppingConfig::new(0.01, 200);
    sc.snapshot_times = vec![0.0, 0.5, 1.0, 2.0];
    let reference = reference_euler(&case, &initial, &sc).unwrap();
    let rows = certificate_report(&out.flow, &out.score, &case, &reference).unwrap();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let w = r.w1_coupling_bound.unwrap();
        assert_eq!(w * w, r.e_mse.unwrap());
        assert!(r.heuristic && r.omitted.is_none());
        assert!(r.delta_phys_sq.unwrap() >= 0.0 && r.delta_2n_sq.unwrap() >= 0.0);
        assert!(r.gronwall_log10_rhs.unwrap().is_finite() || r.gronwall_log10_rhs.unwrap() == f64::NEG_INFINITY);
    }
    // the flow is exact at t0
    assert_eq!(rows[0].e_mse, Some(0.0));
    let csv = MetricsRecord::to_csv(&rows);
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.lines().skip(1).all(|l| l.split(',').count() == 14));
}

#[test]
fn no_closed_form_case_reports_residual_only() {
    let case = BenchmarkCase::new(BenchmarkTag::Anisotropic2D);
    let spec = NetworkSpec::new(2, Block::new(3, 1), Some(Block::new(2, 1)), Block::new(4, 1)).unwrap();
    let flow = FlowModel::new(spec, init_params(&spec, 1), case.t0).unwrap();
    let score = ScoreModel::new(spec, init_params(&spec, 2)).unwrap();
    let initial = sample_initial(&case, 30, 4).unwrap();
    let rows = residual_report(&flow, &score, &case, &initial, &[1.0, 2.0]).unwrap();
    for r in rows {
        assert!(r.delta_phys_sq.is_some() && r.delta_2n_sq.is_none() && r.e_mse.is_none());
        assert_eq!(r.omitted, Some("no-closed-form"));
    }
}

#[test]
fn trajectory_error_hand_case() {
    // unit-circle reference shifted by c: |c|^2 N / sum |v|^2 = |c|^2
    let n = 8;
    let pts: Vec<f64> = (0..n).flat_map(|k| {
        let a = k as f64 * std::f64::consts::TAU / n as f64;
        [a.cos(), a.sin()]
    }).collect();
    let shifted: Vec<f64> = pts.iter().enumerate().map(|(i, x)| x + if i % 2 == 0 { 0.3 } else { -0.4 }).collect();
    let mut r = landau_core::baselines::Trajectory::new();
    r.push(ParticleCloud::new(pts, 2, 1.0).unwrap()).unwrap();
    let mut p = landau_core::baselines::Trajectory::new();
    p.push(ParticleCloud::new(shifted, 2, 1.0).unwrap()).unwrap();
    assert!((trajectory_error(&p, &r, 1.0).unwrap() - 0.25).abs() < 1e-14);
    assert_eq!(trajectory_error(&r, &r, 1.0).unwrap(), 0.0);
    assert!(trajectory_error(&p, &r, 2.0).is_err());
}

proptest! {
    #[test]
    fn entropy_proxy_is_never_positive(
        d in 2usize..=3,
        n in 1usize..24,
        seed in any::<u64>(),
        coulomb in any::<bool>(),
    ) {
        let pos = gaussian_cloud(n, d, seed);
        let scores = gaussian_cloud(n, d, seed ^ 0xABCD);
        let cfg = if coulomb { KernelConfig::coulomb(1.0, 0.1).unwrap() } else { KernelConfig::maxwell(1.0) };
        let value = entropy_proxy_values(&pos, &scores, d, &cfg);
        let scale = 1.0 + scores.iter().map(|x| x * x).sum::<f64>() * 100.0;
        prop_assert!(value <= 1e-12 * scale, "{}", value);
    }
}

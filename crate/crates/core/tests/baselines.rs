use landau_core::baselines::{
    blob_run, blob_run_with, pinn_score_rollout, reference_euler, sbp_run, sbp_run_with, SteppingConfig, Trajectory,
};
use landau_core::benchmarks::{sample_initial, BenchmarkCase, BenchmarkTag};
use landau_core::kernel::{ParticleCloud, ScoreField};
use landau_core::metrics::{cloud_error, kinetic_energy};
use landau_core::nn::{Block, NetworkSpec};
use proptest::prelude::*;

fn stepping(dt: f64, t_end: f64, times: &[f64]) -> SteppingConfig {
    let mut c = SteppingConfig::new(dt, (t_end / dt).round() as usize);
    c.snapshot_times = times.to_vec();
    c
}

fn momentum(c: &ParticleCloud) -> Vec<f64> {
    let d = c.dim();
    (0..d).map(|k| c.positions().iter().skip(k).step_by(d).sum()).collect()
}

#[test]
fn all_steppers_agree_bitwise_on_a_frozen_score() {
    let case = BenchmarkCase::new(BenchmarkTag::Bkw2D);
    let cloud = sample_initial(&case, 150, 3).unwrap();
    let frozen = case.analytic_score().unwrap();
    let cfg = stepping(0.01, 0.5, &[0.1, 0.25, 0.5]);
    let reference = reference_euler(&case, &cloud, &cfg).unwrap();
    let sbp = sbp_run_with(&case, &cloud, &cfg, Some(&frozen)).unwrap();
    let blob = blob_run_with(&case, &cloud, &cfg, Some(&frozen)).unwrap();
    let pinn = pinn_score_rollout(&frozen, &case, &cloud, &cfg).unwrap();
    assert_eq!(reference.to_bytes(), sbp.to_bytes());
    assert_eq!(reference.to_bytes(), blob.to_bytes());
    assert_eq!(reference.to_bytes(), pinn.to_bytes());
    assert_eq!(reference.times(), [0.1, 0.25, 0.5]);
}

#[test]
fn sbp_and_blob_conserve_momentum_every_step() {
    let case = BenchmarkCase::new(BenchmarkTag::Bkw2D);
    let cloud = sample_initial(&case, 120, 9).unwrap();
    let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.01).collect();
    let mut cfg = stepping(0.01, 0.2, &times);
    cfg.fit_iters = 3;
    cfg.score_spec = Some(NetworkSpec::new(2, Block::new(8, 1), None, Block::new(8, 1)).unwrap());
    let p0 = momentum(&cloud);
    for traj in [sbp_run(&case, &cloud, &cfg).unwrap(), blob_run(&case, &cloud, &cfg).unwrap()] {
        assert_eq!(traj.len(), times.len());
        for snap in traj.snapshots() {
            for (a, b) in momentum(snap).iter().zip(&p0) {
                assert!((a - b).abs() <= 1e-12 * cloud.len() as f64, "t={}: {a} vs {b}", snap.time);
            }
        }
    }
}

#[test]
fn reference_euler_is_first_order_in_dt() {
    let case = BenchmarkCase::new(BenchmarkTag::Bkw2D);
    let cloud = sample_initial(&case, 200, 12).unwrap();
    let run = |dt: f64| reference_euler(&case, &cloud, &stepping(dt, 1.0, &[1.0])).unwrap();
    let fine = run(0.0025);
    let e1 = cloud_error(&run(0.02).snapshots()[0], &fine.snapshots()[0]).unwrap();
    let e2 = cloud_error(&run(0.01).snapshots()[0], &fine.snapshots()[0]).unwrap();
    // errors c dt against the fine run: (0.02 - 0.0025) / (0.01 - 0.0025) = 7/3,
    // squared because cloud_error is a squared norm ratio
    let ratio = (e1 / e2).sqrt();
    assert!((ratio - 7.0 / 3.0).abs() < 0.1, "ratio {ratio}");
}

#[test]
fn reference_keeps_kinetic_energy_and_follows_bkw_second_moment() {
    let case = BenchmarkCase::new(BenchmarkTag::Bkw2D);
    let cloud = sample_initial(&case, 400, 5).unwrap();
    let traj = reference_euler(&case, &cloud, &stepping(0.01, 2.0, &[0.0, 1.0, 2.0])).unwrap();
    let e0 = kinetic_energy(&traj.snapshots()[0]);
    for snap in traj.snapshots() {
        let e = kinetic_energy(snap);
        // energy is conserved by the drift; Euler adds O(dt) per unit time
        assert!((e - e0).abs() / e0 < 5e-3, "t={}: {e} vs {e0}", snap.time);
    }
    // the fourth moment relaxes toward the Gaussian value, as the closed form does
    let m4 = |c: &ParticleCloud| c.positions().chunks(2).map(|v| (v[0] * v[0] + v[1] * v[1]).powi(2)).sum::<f64>() / c.len() as f64;
    let s = traj.snapshots();
    assert!(m4(&s[2]) > m4(&s[0]));
}

#[test]
fn frozen_blob_score_changes_nothing_for_blob() {
    let case = BenchmarkCase::new(BenchmarkTag::Bkw2D);
    let cloud = sample_initial(&case, 60, 1).unwrap();
    let cfg = stepping(0.01, 0.1, &[0.1]);
    let blob = landau_core::baselines::BlobScore { dim: 2, bandwidth: cfg.bandwidth };
    let a = blob_run(&case, &cloud, &cfg).unwrap();
    let b = blob_run_with(&case, &cloud, &cfg, Some(&blob as &dyn ScoreField)).unwrap();
    assert_eq!(a, b);
}

fn arb_trajectory() -> impl Strategy<Value = Trajectory> {
    (2usize..=3, 1usize..6, 1usize..4).prop_flat_map(|(d, n, k)| {
        prop::collection::vec(-1e3f64..1e3, d * n * k).prop_map(move |vals| {
            let mut t = Trajectory::new();
            for (i, chunk) in vals.chunks(d * n).enumerate() {
                t.push(ParticleCloud::new(chunk.to_vec(), d, 0.5 * i as f64 + 0.125).unwrap()).unwrap();
            }
            t
        })
    })
}

proptest! {
    #[test]
    fn trajectory_files_round_trip_exactly(traj in arb_trajectory()) {
        prop_assert_eq!(Trajectory::from_bytes(&traj.to_bytes()).unwrap(), traj.clone());
        prop_assert_eq!(Trajectory::from_csv(&traj.to_csv()).unwrap(), traj);
    }

    #[test]
    fn corrupted_binary_is_rejected(traj in arb_trajectory(), pos in any::<prop::sample::Index>()) {
        let mut bytes = traj.to_bytes();
        let i = pos.index(bytes.len());
        bytes[i] ^= 0x40;
        prop_assert!(Trajectory::from_bytes(&bytes).is_err());
    }
}

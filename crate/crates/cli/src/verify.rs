//! Quick invariant suite behind `landau verify`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use landau_core::benchmarks::{sample_initial, BenchmarkCase, BenchmarkTag};
use landau_core::kernel::{
    collision_matrix, conservation_residuals, self_drift, FnScore, KernelConfig, ParticleCloud,
};
use landau_core::metrics::{entropy_proxy_values, hyvarinen_terms, kde_rate_study, mean_and_stderr};
use landau_core::nn::{init_params, Block, NetworkSpec};
use landau_core::trainer::{total_loss, FlowModel, LossGraph, ScoreModel};

/// Deliberate defects for exercising the failure path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flips the sign of the collision matrix.
    KernelSign,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn(Option<Fault>) -> Result<String, String>;

const CHECKS: &[(&str, Check)] = &[
    ("kernel-identities", kernel_identities),
    ("conservation", conservation),
    ("hyvarinen-identity", hyvarinen),
    ("gradient-check", gradient_check),
    ("entropy-proxy-sign", entropy_sign),
    ("kde-rate-smoke", kde_rate_smoke),
];

pub fn run(fault: Option<Fault>) -> Vec<CheckResult> {
    CHECKS
        .iter()
        .map(|(name, f)| {
            let start = Instant::now();
            let (passed, detail) = match f(fault) {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult { name, passed, detail, seconds: start.elapsed().as_secs_f64() }
        })
        .collect()
}

fn kernels() -> [KernelConfig; 2] {
    [KernelConfig::maxwell(1.0), KernelConfig::coulomb(1.0, 0.1).expect("valid")]
}

fn kernel_identities(fault: Option<Fault>) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut count = 0;
    for d in [2usize, 3] {
        for cfg in kernels() {
            for _ in 0..2000 {
                let z: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let w: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
                let mut a = collision_matrix(&z, &cfg);
                if fault == Some(Fault::KernelSign) {
                    a.iter_mut().for_each(|x| *x = -*x);
                }
                let neg: Vec<f64> = z.iter().map(|x| -x).collect();
                let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let zn = z.iter().map(|x| x * x).sum::<f64>().sqrt();
                let mut quad = 0.0;
                let mut az2 = 0.0;
                for i in 0..d {
                    let mut az = 0.0;
                    for j in 0..d {
                        if a[i * d + j] != a[j * d + i] {
                            return Err(format!("asymmetric A at z = {z:?}"));
                        }
                        az += a[i * d + j] * z[j];
                        quad += w[i] * a[i * d + j] * w[j];
                    }
                    az2 += az * az;
                }
                let mut an = collision_matrix(&neg, &cfg);
                if fault == Some(Fault::KernelSign) {
                    an.iter_mut().for_each(|x| *x = -*x);
                }
                if an != a {
                    return Err(format!("A(-z) != A(z) at z = {z:?}"));
                }
                if az2.sqrt() > 1e-12 * (1.0 + norm) * zn {
                    return Err(format!("A(z) z != 0 at z = {z:?}"));
                }
                if quad < -1e-12 * (1.0 + norm) {
                    return Err(format!("w^T A w = {quad:e} < 0 at z = {z:?}"));
                }
                count += 1;
            }
        }
    }
    Ok(format!("{count} matrices"))
}

fn conservation(_: Option<Fault>) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for k in 0..12 {
        let d = 2 + k % 2;
        let n = rng.gen_range(8..96);
        let pos: Vec<f64> = (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal) * 1.5).collect();
        let cloud = ParticleCloud::new(pos, d, 0.0).map_err(|e| e.to_string())?;
        let m: Vec<f64> = (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let score = FnScore::new(d, move |v: &[f64], _t: f64| {
            (0..d).map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum::<f64>().tanh() - v[i]).collect()
        });
        for cfg in kernels() {
            let (mom, energy) = conservation_residuals(&cloud, &score, &cfg).map_err(|e| e.to_string())?;
            let s = score_scale(&cloud, &score, &cfg);
            let r = mom.iter().map(|x| x * x).sum::<f64>().sqrt().max(energy.abs()) / s;
            worst = worst.max(r);
        }
    }
    if worst <= 1e-10 {
        Ok(format!("worst relative residual {worst:.2e}"))
    } else {
        Err(format!("relative residual {worst:.2e} exceeds 1e-10"))
    }
}

// sum of |v_i| |U(v_i)| plus the drift magnitude, the scale of the cancellations
fn score_scale(cloud: &ParticleCloud, score: &dyn landau_core::kernel::ScoreField, cfg: &KernelConfig) -> f64 {
    let d = cloud.dim();
    let s = score.score_batch(cloud.positions(), 0.0).unwrap_or_default();
    let u = self_drift(cloud.positions(), &s, d, cfg);
    let sum: f64 = cloud
        .positions()
        .chunks(d)
        .zip(u.chunks(d))
        .map(|(v, w)| {
            let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            (1.0 + nv) * nw
        })
        .sum();
    1.0 + sum
}

fn hyvarinen(_: Option<Fault>) -> Result<String, String> {
    let n = 20_000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let v: Vec<f64> = (0..2 * n).map(|_| rng.sample(StandardNormal)).collect();
    let b = [0.3, -0.4];
    let g_true: Vec<f64> = v.iter().map(|x| -x).collect();
    let g_shift: Vec<f64> = v.iter().enumerate().map(|(k, x)| -x + b[k % 2]).collect();
    let div = vec![-2.0; n];
    let base = hyvarinen_terms(&g_true, &div, 2).map_err(|e| e.to_string())?;
    let shifted = hyvarinen_terms(&g_shift, &div, 2).map_err(|e| e.to_string())?;
    let (m0, se0) = mean_and_stderr(&base);
    let diff: Vec<f64> = shifted.iter().zip(&base).map(|(a, c)| a - c).collect();
    let (md, sed) = mean_and_stderr(&diff);
    if (m0 + 2.0).abs() > 3.0 * se0 || (md - 0.25).abs() > 3.0 * sed {
        return Err(format!("L(-v) = {m0:.4} (se {se0:.1e}), excess = {md:.4} (se {sed:.1e})"));
    }
    Ok(format!("L(-v) = {m0:.4}, excess = {md:.4}"))
}

fn gradient_check(_: Option<Fault>) -> Result<String, String> {
    let spec = NetworkSpec::new(2, Block::new(3, 1), Some(Block::new(2, 1)), Block::new(4, 1)).map_err(|e| e.to_string())?;
    let mut fp = init_params(&spec, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    fp.values.iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
    let mut sp = init_params(&spec, 6);
    sp.values.iter_mut().for_each(|x| *x += rng.gen_range(-0.1..0.1));
    let flow = FlowModel::new(spec, fp, 0.0).map_err(|e| e.to_string())?;
    let score = ScoreModel::new(spec, sp).map_err(|e| e.to_string())?;
    let cloud = sample_initial(&BenchmarkCase::new(BenchmarkTag::Bkw2D), 10, 7).map_err(|e| e.to_string())?;
    let times = [0.8, 3.1];
    let cfg = KernelConfig::coulomb(1.0, 0.3).map_err(|e| e.to_string())?;
    let eval = |f: &FlowModel, s: &ScoreModel| {
        let g = LossGraph::new(f, s);
        let terms = total_loss(&g, f, s, &cloud, &times, &cfg, 0.7).map_err(|e| e.to_string())?;
        Ok::<_, String>((terms.phys.value, terms.total.value))
    };
    let g = LossGraph::new(&flow, &score);
    let terms = total_loss(&g, &flow, &score, &cloud, &times, &cfg, 0.7).map_err(|e| e.to_string())?;
    let (gf, gs) = g.gradients(&terms.total).map_err(|e| e.to_string())?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..gf.len() {
        let (mut a, mut b) = (flow.clone(), flow.clone());
        a.params.values[i] += h;
        b.params.values[i] -= h;
        // the flow only sees the physics term
        let fd = (eval(&a, &score)?.0 - eval(&b, &score)?.0) / (2.0 * h);
        worst = worst.max((fd - gf[i]).abs() / (1e-8 + fd.abs().max(gf[i].abs())));
    }
    for i in 0..gs.len() {
        let (mut a, mut b) = (score.clone(), score.clone());
        a.params.values[i] += h;
        b.params.values[i] -= h;
        let fd = (eval(&flow, &a)?.1 - eval(&flow, &b)?.1) / (2.0 * h);
        worst = worst.max((fd - gs[i]).abs() / (1e-8 + fd.abs().max(gs[i].abs())));
    }
    if worst <= 1e-4 {
        Ok(format!("worst relative error {worst:.2e}"))
    } else {
        Err(format!("relative error {worst:.2e} exceeds 1e-4"))
    }
}

fn entropy_sign(fault: Option<Fault>) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..20 {
        let d = 2 + k % 2;
        let n = rng.gen_range(4..64);
        let pos: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        let scores: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
        for cfg in kernels() {
            let mut dval = entropy_proxy_values(&pos, &scores, d, &cfg);
            if fault == Some(Fault::KernelSign) {
                dval = -dval;
            }
            let scale = 1.0 + scores.iter().map(|x| x * x).sum::<f64>() * cfg.c_gamma;
            worst = worst.max(dval / scale);
        }
    }
    if worst <= 1e-12 {
        Ok(format!("max scaled value {worst:.2e}"))
    } else {
        Err(format!("positive entropy proxy {worst:.2e}"))
    }
}

fn kde_rate_smoke(_: Option<Fault>) -> Result<String, String> {
    let study = kde_rate_study(2, &[500, 2000, 8000], 2, |n| 0.8 * (n as f64).powf(-0.125), 9).map_err(|e| e.to_string())?;
    if (-0.9..=-0.2).contains(&study.slope) {
        Ok(format!("slope {:.3}", study.slope))
    } else {
        Err(format!("slope {:.3} outside [-0.9, -0.2]", study.slope))
    }
}

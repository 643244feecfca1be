use std::f64::consts::PI;

use landau_core::benchmarks::{
    bkw_density, bkw_score, initial_density, sample_initial, BenchmarkCase, BenchmarkTag, CaseParams,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

const N: usize = 100_000;

// Pearson statistic over bins with expected count >= 5, merged from the left.
fn chi_square_ok(counts: &[f64], probs: &[f64], n: usize) -> (f64, f64) {
    let mut obs = Vec::new();
    let mut exp = Vec::new();
    let (mut o, mut e) = (0.0, 0.0);
    for (c, p) in counts.iter().zip(probs) {
        o += c;
        e += p * n as f64;
        if e >= 5.0 {
            obs.push(o);
            exp.push(e);
            o = 0.0;
            e = 0.0;
        }
    }
    if let (Some(lo), Some(le)) = (obs.last_mut(), exp.last_mut()) {
        *lo += o;
        *le += e;
    }
    assert!(obs.len() >= 20, "only {} usable bins", obs.len());
    let stat: f64 = obs.iter().zip(&exp).map(|(o, e)| (o - e) * (o - e) / e).sum();
    let crit = ChiSquared::new((obs.len() - 1) as f64).unwrap().inverse_cdf(1.0 - 1e-3);
    (stat, crit)
}

// open rule: the truncated density jumps exactly on a bin edge
fn midpoint(f: impl Fn(f64) -> f64, a: f64, b: f64, m: usize) -> f64 {
    let h = (b - a) / m as f64;
    (0..m).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

/// Radial histogram test for isotropic densities; `radial(r)` is the density
/// at distance r.
fn radial_chi_square(case: &BenchmarkCase, radial: impl Fn(f64) -> f64, rmax: f64, bins: usize) {
    let d = case.dim();
    let cloud = sample_initial(case, N, 17).unwrap();
    let shell = if d == 2 { 2.0 * PI } else { 4.0 * PI };
    let w = rmax / bins as f64;
    let mut counts = vec![0.0; bins + 1];
    for p in cloud.positions().chunks(d) {
        let r = p.iter().map(|x| x * x).sum::<f64>().sqrt();
        counts[((r / w) as usize).min(bins)] += 1.0;
    }
    let mut probs: Vec<f64> =
        (0..bins).map(|k| midpoint(|r| shell * r.powi(d as i32 - 1) * radial(r), k as f64 * w, (k + 1) as f64 * w, 256)).collect();
    probs.push((1.0 - probs.iter().sum::<f64>()).max(0.0));
    let (stat, crit) = chi_square_ok(&counts, &probs, N);
    assert!(stat < crit, "{:?}: chi2 {stat:.1} >= {crit:.1}", case.tag);
}

#[test]
fn bkw_samplers_pass_chi_square() {
    let c2 = BenchmarkCase::new(BenchmarkTag::Bkw2D);
    radial_chi_square(&c2, |r| bkw_density(&[r, 0.0], c2.t0, 2).unwrap(), 5.0, 40);
    let c3 = BenchmarkCase::new(BenchmarkTag::Bkw3D);
    radial_chi_square(&c3, |r| bkw_density(&[r, 0.0, 0.0], c3.t0, 3).unwrap(), 5.0, 40);
}

#[test]
fn rosenbluth_and_truncated_samplers_pass_chi_square() {
    let ros = BenchmarkCase::new(BenchmarkTag::Rosenbluth3D);
    radial_chi_square(&ros, |r| initial_density(&ros, &[r, 0.0, 0.0]).unwrap(), 4.0, 60);
    let tr = BenchmarkCase::new(BenchmarkTag::Truncated2D);
    radial_chi_square(&tr, |r| initial_density(&tr, &[r, 0.0]).unwrap(), 5.0, 40);
}

fn marginal_chi_square(case: &BenchmarkCase, axis: usize, cdf: impl Fn(f64) -> f64, lo: f64, hi: f64, bins: usize) {
    let d = case.dim();
    let cloud = sample_initial(case, N, 23).unwrap();
    let w = (hi - lo) / bins as f64;
    let mut counts = vec![0.0; bins + 2];
    for p in cloud.positions().chunks(d) {
        let x = p[axis];
        let k = if x < lo { 0 } else if x >= hi { bins + 1 } else { 1 + ((x - lo) / w) as usize };
        counts[k] += 1.0;
    }
    let mut probs = vec![cdf(lo)];
    probs.extend((0..bins).map(|k| cdf(lo + (k + 1) as f64 * w) - cdf(lo + k as f64 * w)));
    probs.push(1.0 - cdf(hi));
    let (stat, crit) = chi_square_ok(&counts, &probs, N);
    assert!(stat < crit, "{:?} axis {axis}: chi2 {stat:.1} >= {crit:.1}", case.tag);
}

#[test]
fn mixture_samplers_pass_chi_square_on_marginals() {
    let gm = BenchmarkCase::new(BenchmarkTag::GaussianMixture3D);
    for axis in 0..3 {
        let mix = gm.params.mixture[axis];
        let cdf = move |x: f64| mix.iter().map(|&(w, m, s)| w * Normal::new(m, s).unwrap().cdf(x)).sum::<f64>();
        marginal_chi_square(&gm, axis, cdf, -4.0, 7.0, 44);
    }
    let an = BenchmarkCase::new(BenchmarkTag::Anisotropic2D);
    let p = an.params.clone();
    for axis in 0..2 {
        let (a, b) = (p.u1[axis], p.u2[axis]);
        let cdf = move |x: f64| 0.5 * (Normal::new(a, 1.0).unwrap().cdf(x) + Normal::new(b, 1.0).unwrap().cdf(x));
        marginal_chi_square(&an, axis, cdf, -5.0, 4.0, 36);
    }
}

fn quadrature(d: usize, half: f64, m: usize, f: impl Fn(&[f64]) -> f64) -> f64 {
    let h = 2.0 * half / m as f64;
    let mut acc = 0.0;
    let mut v = vec![0.0; d];
    let total = m.pow(d as u32);
    for idx in 0..total {
        let mut k = idx;
        for x in v.iter_mut() {
            *x = -half + (k % m) as f64 * h + 0.5 * h;
            k /= m;
        }
        acc += f(&v);
    }
    acc * h.powi(d as i32)
}

#[test]
fn closed_form_densities_are_normalized() {
    for t in [0.0, 1.0, 5.0] {
        let mass = quadrature(2, 7.0, 400, |v| bkw_density(v, t, 2).unwrap());
        assert!((mass - 1.0).abs() < 1e-3, "bkw2d t={t}: {mass}");
    }
    for t in [5.5, 6.0] {
        let mass = quadrature(3, 7.0, 120, |v| bkw_density(v, t, 3).unwrap());
        assert!((mass - 1.0).abs() < 1e-3, "bkw3d t={t}: {mass}");
    }
    for (tag, half, m) in [
        (BenchmarkTag::GaussianMixture3D, 9.0, 180),
        (BenchmarkTag::Rosenbluth3D, 4.5, 150),
        (BenchmarkTag::Anisotropic2D, 9.0, 400),
        (BenchmarkTag::Truncated2D, 8.0, 800),
    ] {
        let case = BenchmarkCase::new(tag);
        let mass = quadrature(case.dim(), half, m, |v| initial_density(&case, v).unwrap());
        assert!((mass - 1.0).abs() < 1e-3, "{tag:?}: {mass}");
    }
}

#[test]
fn bkw_scores_match_finite_differences_of_log_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for (d, t_lo, t_hi) in [(2usize, 0.2, 8.0), (3, 5.6, 12.0)] {
        let mut checked = 0;
        while checked < 1000 {
            let t = rng.gen_range(t_lo..t_hi);
            let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
            if bkw_density(&v, t, d).unwrap() < 1e-8 {
                continue;
            }
            let s = bkw_score(&v, t, d).unwrap();
            let h = 1e-5;
            let mut err = 0.0f64;
            for k in 0..d {
                let (mut a, mut b) = (v.clone(), v.clone());
                a[k] += h;
                b[k] -= h;
                let fd = (bkw_density(&a, t, d).unwrap().ln() - bkw_density(&b, t, d).unwrap().ln()) / (2.0 * h);
                err = err.max((fd - s[k]).abs());
            }
            let ns = s.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(err <= 1e-5 * (1.0 + ns), "d={d} t={t} v={v:?}: {err:e}");
            checked += 1;
        }
    }
}

#[test]
fn appendix_parameters_and_structural_facts() {
    let p = CaseParams::default();
    // per-axis mixture weights from the table
    let weights: Vec<(f64, f64)> = p.mixture.iter().map(|a| (a[0].0, a[1].0)).collect();
    assert_eq!(weights, [(0.4, 0.6), (0.7, 0.3), (0.5, 0.5)]);
    for (w1, w2) in weights {
        assert!((w1 + w2 - 1.0).abs() < 1e-15);
    }
    assert_eq!(p.mixture[0], [(0.4, -2.0, 0.3), (0.6, 1.0, 0.8)]);
    assert_eq!((p.rosenbluth_sigma, p.rosenbluth_s, p.eta), (2.0, 12.0, 1.0));
    assert_eq!((p.u1, p.u2), ([-2.0, 1.0], [0.0, -1.0]));

    // the truncated case lives outside the unit disc; its tail mass is exp(-1/2)
    let tr = BenchmarkCase::new(BenchmarkTag::Truncated2D);
    let cloud = sample_initial(&tr, 20_000, 2).unwrap();
    assert!(cloud.positions().chunks(2).all(|v| v[0] * v[0] + v[1] * v[1] > 1.0));
    let tail = midpoint(|r| r * (-r * r / 2.0).exp(), 1.0, 12.0, 2000);
    assert!((tail - (-0.5f64).exp()).abs() < 1e-9);
    assert!(((-0.5f64).exp() - 0.6065).abs() < 1e-4);
}

#[test]
fn bkw2d_initial_sample_mean_is_zero() {
    let cloud = sample_initial(&BenchmarkCase::new(BenchmarkTag::Bkw2D), N, 31).unwrap();
    for k in 0..2 {
        let xs: Vec<f64> = cloud.positions().iter().skip(k).step_by(2).copied().collect();
        let m = xs.iter().sum::<f64>() / N as f64;
        let sd = (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (N as f64 - 1.0)).sqrt();
        assert!(m.abs() <= 4.0 * sd / (N as f64).sqrt(), "axis {k}: mean {m}");
    }
}

//! Batched jet evaluation of a [`NetworkSpec`] and its reverse pass.
//!
//! A chunk of `b` samples with `k` input tangent directions is laid out as
//! `b * (1 + k)` stacked rows: rows `0..b` carry primal activations and rows
//! `b * (j + 1)..b * (j + 2)` carry the tangent along direction `j`. Every
//! affine map acts identically on all rows (biases only on primal rows), so
//! one GEMM per layer covers the primal and tangent channels, and the only
//! coupling between channels is the activation's chain rule.

use rayon::prelude::*;

use super::params::{layout_for, LayerSlot, ParameterSet};
use super::spec::{Activation, NetworkSpec, Stack};
use super::NnError;

/// Samples per work unit. Gradients are reduced over chunks in index order.
pub(crate) const CHUNK: usize = 256;

/// Primal outputs (`b x output_dim`, row-major) and one tangent block of the
/// same shape per input direction.
#[derive(Debug, Clone, PartialEq)]
pub struct JetOutput {
    pub values: Vec<f64>,
    pub tangents: Vec<Vec<f64>>,
}

// ---------------------------------------------------------------- GEMM

/// c = a * b^T (+ beta c); a: m x k, b: n x k, c: m x n.
fn gemm_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], beta: f64, c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), 1, k as isize,
            beta,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// c += a^T * b; a: k x m, b: k x n, c: m x n.
fn gemm_tn_acc(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), 1, m as isize,
            b.as_ptr(), n as isize, 1,
            1.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// c = a * b; a: m x k, b: k x n, c: m x n.
fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), k as isize, 1,
            b.as_ptr(), n as isize, 1,
            0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

// ---------------------------------------------------------------- forward

/// Stored per layer for the reverse pass: the stacked input and the stacked
/// pre-activation.
pub(crate) struct LayerCache {
    input: Vec<f64>,
    pre: Vec<f64>,
}

pub(crate) struct ChunkCache {
    samples: usize,
    layers: Vec<LayerCache>,
}

fn affine(
    params: &[f64],
    slot: &LayerSlot,
    input: &[f64],
    rows: usize,
    primal_rows: usize,
) -> Vec<f64> {
    let mut z = vec![0.0; rows * slot.rows];
    gemm_nt(rows, slot.cols, slot.rows, input, &params[slot.weight_range()], 0.0, &mut z);
    let bias = &params[slot.bias_range()];
    for r in 0..primal_rows {
        for (zj, bj) in z[r * slot.rows..(r + 1) * slot.rows].iter_mut().zip(bias) {
            *zj += bj;
        }
    }
    z
}

fn activate(act: Activation, pre: &[f64], width: usize, b: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; pre.len()];
    for r in 0..b {
        for c in 0..width {
            let idx = r * width + c;
            let (y, d1, _) = act.eval(pre[idx]);
            out[idx] = y;
            for j in 0..k {
                let t = (b * (j + 1) + r) * width + c;
                out[t] = d1 * pre[t];
            }
        }
    }
    out
}

/// Runs one stack of activated layers, optionally recording caches.
fn run_stack(
    spec: &NetworkSpec,
    params: &[f64],
    slots: &[&LayerSlot],
    mut h: Vec<f64>,
    b: usize,
    k: usize,
    activated: bool,
    caches: &mut Option<&mut Vec<LayerCache>>,
) -> Vec<f64> {
    let rows = b * (1 + k);
    for slot in slots {
        let z = affine(params, slot, &h, rows, b);
        let next = if activated {
            activate(spec.activation, &z, slot.rows, b, k)
        } else {
            z.clone()
        };
        if let Some(c) = caches.as_mut() {
            c.push(LayerCache { input: h, pre: z });
        }
        h = next;
    }
    h
}

struct Slots<'a> {
    vel: Vec<&'a LayerSlot>,
    time: Vec<&'a LayerSlot>,
    trunk: Vec<&'a LayerSlot>,
    head: &'a LayerSlot,
}

fn split_slots(layout: &[LayerSlot]) -> Slots<'_> {
    let pick = |s: Stack| layout.iter().filter(|l| l.stack == s).collect::<Vec<_>>();
    Slots {
        vel: pick(Stack::Velocity),
        time: pick(Stack::Time),
        trunk: pick(Stack::Trunk),
        head: layout.iter().find(|l| l.stack == Stack::Head).expect("head layer"),
    }
}

/// Jet forward over one chunk. Returns stacked outputs `b(1+k) x out`.
fn chunk_forward(
    spec: &NetworkSpec,
    params: &[f64],
    slots: &Slots<'_>,
    vs: &[f64],
    ts: &[f64],
    dirs: &[Vec<f64>],
    mut caches: Option<&mut Vec<LayerCache>>,
) -> Vec<f64> {
    let d = spec.dim;
    let b = vs.len() / d;
    let k = dirs.len();
    let rows = b * (1 + k);

    let mut xv = vec![0.0; rows * d];
    xv[..b * d].copy_from_slice(vs);
    for (j, dir) in dirs.iter().enumerate() {
        for r in 0..b {
            xv[(b * (j + 1) + r) * d..(b * (j + 1) + r + 1) * d].copy_from_slice(&dir[..d]);
        }
    }
    let hv = run_stack(spec, params, &slots.vel, xv, b, k, true, &mut caches);

    let fused = if let Some(tb) = spec.time_embed {
        let mut xt = vec![0.0; rows];
        xt[..b].copy_from_slice(ts);
        for (j, dir) in dirs.iter().enumerate() {
            for r in 0..b {
                xt[b * (j + 1) + r] = dir[d];
            }
        }
        let ht = run_stack(spec, params, &slots.time, xt, b, k, true, &mut caches);
        let wv = spec.vel_embed.width;
        let wt = tb.width;
        let mut f = vec![0.0; rows * (wv + wt)];
        for r in 0..rows {
            f[r * (wv + wt)..r * (wv + wt) + wv].copy_from_slice(&hv[r * wv..(r + 1) * wv]);
            f[r * (wv + wt) + wv..(r + 1) * (wv + wt)].copy_from_slice(&ht[r * wt..(r + 1) * wt]);
        }
        f
    } else {
        hv
    };
    let h = run_stack(spec, params, &slots.trunk, fused, b, k, true, &mut caches);
    run_stack(spec, params, &[slots.head], h, b, k, false, &mut caches)
}

fn unstack(out: &[f64], b: usize, k: usize, width: usize, res: &mut JetOutput) {
    res.values.extend_from_slice(&out[..b * width]);
    for j in 0..k {
        res.tangents[j].extend_from_slice(&out[b * (j + 1) * width..b * (j + 2) * width]);
    }
}

fn check_inputs(spec: &NetworkSpec, params: &[f64], vs: &[f64], ts: &[f64], dirs: &[Vec<f64>]) -> Result<usize, NnError> {
    let d = spec.dim;
    if params.len() != spec.param_count() {
        return Err(NnError::Dimension { expected: spec.param_count(), got: params.len() });
    }
    if vs.len() % d != 0 {
        return Err(NnError::Dimension { expected: d, got: vs.len() % d });
    }
    let b = vs.len() / d;
    if spec.has_time() && ts.len() != b {
        return Err(NnError::Dimension { expected: b, got: ts.len() });
    }
    for dir in dirs {
        if dir.len() != spec.input_dim() {
            return Err(NnError::Dimension { expected: spec.input_dim(), got: dir.len() });
        }
    }
    if let Some(i) = vs.iter().position(|x| !x.is_finite()) {
        return Err(NnError::NonFiniteInput(i));
    }
    if spec.has_time() {
        if let Some(i) = ts.iter().position(|x| !x.is_finite()) {
            return Err(NnError::NonFiniteInput(vs.len() + i));
        }
    }
    Ok(b)
}

fn chunk_ts<'a>(spec: &NetworkSpec, ts: &'a [f64], c: usize, b: usize) -> &'a [f64] {
    if spec.has_time() {
        &ts[c * CHUNK..c * CHUNK + b]
    } else {
        &[]
    }
}

/// Evaluates the network and its input-directional derivatives on a batch.
///
/// `vs` is `b x dim`, `ts` has one time per sample (ignored without a time
/// embedding), and each direction has `input_dim` entries (velocity part,
/// then time part).
pub fn jet_batch(
    spec: &NetworkSpec,
    params: &ParameterSet,
    vs: &[f64],
    ts: &[f64],
    dirs: &[Vec<f64>],
) -> Result<JetOutput, NnError> {
    check_inputs(spec, &params.values, vs, ts, dirs)?;
    let d = spec.dim;
    let k = dirs.len();
    let slots = split_slots(&params.layout);
    let outs: Vec<(usize, Vec<f64>)> = vs
        .par_chunks(CHUNK * d)
        .enumerate()
        .map(|(c, v)| {
            let b = v.len() / d;
            let t = chunk_ts(spec, ts, c, b);
            (b, chunk_forward(spec, &params.values, &slots, v, t, dirs, None))
        })
        .collect();
    let mut res = JetOutput { values: Vec::with_capacity(vs.len()), tangents: vec![Vec::with_capacity(vs.len()); k] };
    for (b, out) in outs {
        unstack(&out, b, k, spec.output_dim, &mut res);
    }
    Ok(res)
}

/// Plain batched evaluation.
pub fn eval_batch(spec: &NetworkSpec, params: &ParameterSet, vs: &[f64], ts: &[f64]) -> Result<Vec<f64>, NnError> {
    Ok(jet_batch(spec, params, vs, ts, &[])?.values)
}

pub fn forward(spec: &NetworkSpec, params: &ParameterSet, v: &[f64], t: f64) -> Result<Vec<f64>, NnError> {
    eval_batch(spec, params, v, &[t])
}

/// Output and directional derivative along `direction` over the joint
/// (velocity, time) input.
pub fn forward_jvp(
    spec: &NetworkSpec,
    params: &ParameterSet,
    v: &[f64],
    t: f64,
    direction: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), NnError> {
    let mut out = jet_batch(spec, params, v, &[t], &[direction.to_vec()])?;
    Ok((out.values, out.tangents.pop().expect("one tangent")))
}

/// Velocity basis directions `e_1..e_d` padded with a zero time component.
pub fn velocity_basis(spec: &NetworkSpec) -> Vec<Vec<f64>> {
    (0..spec.dim)
        .map(|k| {
            let mut e = vec![0.0; spec.input_dim()];
            e[k] = 1.0;
            e
        })
        .collect()
}

/// sum_k d(out_k)/d(v_k), one forward tangent per velocity basis direction.
pub fn divergence_v(spec: &NetworkSpec, params: &ParameterSet, v: &[f64], t: f64) -> Result<f64, NnError> {
    let out = jet_batch(spec, params, v, &[t], &velocity_basis(spec))?;
    Ok(out.tangents.iter().enumerate().map(|(k, tk)| tk[k]).sum())
}

// ---------------------------------------------------------------- reverse

/// Jet forward that keeps what the reverse pass needs.
pub(crate) fn jet_forward_cached(
    spec: &NetworkSpec,
    params: &[f64],
    vs: &[f64],
    ts: &[f64],
    dirs: &[Vec<f64>],
) -> Result<(JetOutput, Vec<ChunkCache>), NnError> {
    check_inputs(spec, params, vs, ts, dirs)?;
    let d = spec.dim;
    let k = dirs.len();
    let layout = layout_for(spec);
    let slots = split_slots(&layout);
    let outs: Vec<(Vec<f64>, ChunkCache)> = vs
        .par_chunks(CHUNK * d)
        .enumerate()
        .map(|(c, v)| {
            let b = v.len() / d;
            let t = chunk_ts(spec, ts, c, b);
            let mut layers = Vec::new();
            let out = chunk_forward(spec, params, &slots, v, t, dirs, Some(&mut layers));
            (out, ChunkCache { samples: b, layers })
        })
        .collect();
    let mut res = JetOutput { values: Vec::with_capacity(vs.len()), tangents: vec![Vec::with_capacity(vs.len()); k] };
    let mut caches = Vec::with_capacity(outs.len());
    for (out, cache) in outs {
        unstack(&out, cache.samples, k, spec.output_dim, &mut res);
        caches.push(cache);
    }
    Ok((res, caches))
}

/// Cotangent of the activation input from cotangents of its output.
fn activation_backward(act: Activation, pre: &[f64], g: &mut [f64], width: usize, b: usize, k: usize) {
    for r in 0..b {
        for c in 0..width {
            let idx = r * width + c;
            let (_, d1, d2) = act.eval(pre[idx]);
            let mut gp = g[idx] * d1;
            for j in 0..k {
                let t = (b * (j + 1) + r) * width + c;
                gp += g[t] * d2 * pre[t];
                g[t] *= d1;
            }
            g[idx] = gp;
        }
    }
}

/// Back through one affine layer: accumulates parameter gradients and
/// returns the cotangent of the layer input.
fn affine_backward(
    slot: &LayerSlot,
    params: &[f64],
    cache: &LayerCache,
    gz: &[f64],
    rows: usize,
    b: usize,
    grad: &mut [f64],
    need_input: bool,
) -> Vec<f64> {
    gemm_tn_acc(slot.rows, rows, slot.cols, gz, &cache.input, &mut grad[slot.weight_range()]);
    let gb = &mut grad[slot.bias_range()];
    for r in 0..b {
        for (g, x) in gb.iter_mut().zip(&gz[r * slot.rows..(r + 1) * slot.rows]) {
            *g += x;
        }
    }
    if !need_input {
        return Vec::new();
    }
    let mut gx = vec![0.0; rows * slot.cols];
    gemm_nn(rows, slot.rows, slot.cols, gz, &params[slot.weight_range()], &mut gx);
    gx
}

fn stack_backward(
    spec: &NetworkSpec,
    params: &[f64],
    slots: &[&LayerSlot],
    caches: &[LayerCache],
    mut g: Vec<f64>,
    b: usize,
    k: usize,
    grad: &mut [f64],
    need_input: bool,
) -> Vec<f64> {
    let rows = b * (1 + k);
    for (i, (slot, cache)) in slots.iter().zip(caches).enumerate().rev() {
        activation_backward(spec.activation, &cache.pre, &mut g, slot.rows, b, k);
        g = affine_backward(slot, params, cache, &g, rows, b, grad, need_input || i > 0);
    }
    g
}

/// Reverse pass for one chunk given stacked output cotangents. Returns the
/// velocity-input cotangent of the primal rows (`b x dim`) if requested.
fn chunk_backward(
    spec: &NetworkSpec,
    params: &[f64],
    slots: &Slots<'_>,
    cache: &ChunkCache,
    g_out: Vec<f64>,
    k: usize,
    grad: &mut [f64],
    need_input: bool,
) -> Vec<f64> {
    let b = cache.samples;
    let rows = b * (1 + k);
    let nv = slots.vel.len();
    let nt = slots.time.len();
    let ntr = slots.trunk.len();
    let (vel_c, rest) = cache.layers.split_at(nv);
    let (time_c, rest) = rest.split_at(nt);
    let (trunk_c, head_c) = rest.split_at(ntr);

    let g = affine_backward(slots.head, params, &head_c[0], &g_out, rows, b, grad, true);
    let g_fused = stack_backward(spec, params, &slots.trunk, trunk_c, g, b, k, grad, true);

    let g_vel = if let Some(tb) = spec.time_embed {
        let wv = spec.vel_embed.width;
        let wt = tb.width;
        let mut gv = vec![0.0; rows * wv];
        let mut gt = vec![0.0; rows * wt];
        for r in 0..rows {
            gv[r * wv..(r + 1) * wv].copy_from_slice(&g_fused[r * (wv + wt)..r * (wv + wt) + wv]);
            gt[r * wt..(r + 1) * wt].copy_from_slice(&g_fused[r * (wv + wt) + wv..(r + 1) * (wv + wt)]);
        }
        stack_backward(spec, params, &slots.time, time_c, gt, b, k, grad, false);
        gv
    } else {
        g_fused
    };
    let gx = stack_backward(spec, params, &slots.vel, vel_c, g_vel, b, k, grad, need_input);
    if need_input {
        gx[..b * spec.dim].to_vec()
    } else {
        Vec::new()
    }
}

/// Reverse pass over all chunks. `g_values` is `b x out`, `g_tangents[j]`
/// matches tangent `j` (missing entries count as zero). Parameter gradients
/// are summed over chunks in index order.
pub(crate) fn jet_backward(
    spec: &NetworkSpec,
    params: &[f64],
    caches: &[ChunkCache],
    k: usize,
    g_values: &[f64],
    g_tangents: &[Option<&[f64]>],
    need_input: bool,
) -> (Vec<f64>, Vec<f64>) {
    let out = spec.output_dim;
    let layout = layout_for(spec);
    let slots = split_slots(&layout);
    let mut starts = Vec::with_capacity(caches.len());
    let mut acc = 0;
    for c in caches {
        starts.push(acc);
        acc += c.samples;
    }
    let parts: Vec<(Vec<f64>, Vec<f64>)> = caches
        .par_iter()
        .zip(starts.par_iter())
        .map(|(cache, &s)| {
            let b = cache.samples;
            let mut g = vec![0.0; b * (1 + k) * out];
            g[..b * out].copy_from_slice(&g_values[s * out..(s + b) * out]);
            for (j, gt) in g_tangents.iter().enumerate() {
                if let Some(gt) = gt {
                    g[b * (j + 1) * out..b * (j + 2) * out].copy_from_slice(&gt[s * out..(s + b) * out]);
                }
            }
            let mut grad = vec![0.0; params.len()];
            let gx = chunk_backward(spec, params, &slots, cache, g, k, &mut grad, need_input);
            (grad, gx)
        })
        .collect();
    let mut grad = vec![0.0; params.len()];
    let mut gin = Vec::new();
    for (g, gx) in parts {
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
        gin.extend_from_slice(&gx);
    }
    (grad, gin)
}

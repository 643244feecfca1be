//! Vector-valued reverse-mode recording context.
//!
//! Nodes hold flat `f64` blocks. Network evaluations and the pairwise drift
//! are single nodes with hand-written vector-Jacobian products, so tapes stay
//! small even for `O(N^2)` losses.

use std::cell::RefCell;
use std::sync::atomic::{AtomicU64, Ordering};

use super::engine::{jet_forward_cached, velocity_basis};
use super::params::ParameterSet;
use super::spec::NetworkSpec;
use super::NnError;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    idx: usize,
    len: usize,
}

impl Var {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// A scalar result together with the node that produced it, if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifferentiableScalar {
    pub value: f64,
    source: Option<Var>,
}

impl DifferentiableScalar {
    /// A value with no recording behind it; [`Tape::grad`] rejects it.
    pub fn detached(value: f64) -> Self {
        DifferentiableScalar { value, source: None }
    }

    pub fn var(&self) -> Option<Var> {
        self.source
    }
}

type Backward = Box<dyn Fn(&[f64], &mut Cotangents)>;

struct Node {
    value: Vec<f64>,
    requires_grad: bool,
    backward: Option<Backward>,
}

/// Cotangent buffers during a reverse sweep.
pub struct Cotangents {
    bufs: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
    requires: Vec<bool>,
}

impl Cotangents {
    /// Mutable cotangent of `v`, zero-initialised on first access.
    pub fn slot(&mut self, v: Var) -> &mut [f64] {
        let len = self.lens[v.idx];
        self.bufs[v.idx].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn accumulate(&mut self, v: Var, g: &[f64]) {
        if !self.requires[v.idx] {
            return;
        }
        for (a, b) in self.slot(v).iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.requires[v.idx]
    }
}

/// Result of [`Tape::grad`]: the cotangent of every recorded node.
pub struct Gradients {
    tape: u64,
    bufs: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v` (zeros if `v` does not
    /// influence the loss).
    pub fn wrt(&self, v: Var) -> Vec<f64> {
        assert_eq!(v.tape, self.tape, "variable from a different tape");
        self.bufs[v.idx].clone().unwrap_or_else(|| vec![0.0; self.lens[v.idx]])
    }
}

/// Outputs of a network node: primal values and one tangent block per input
/// direction, each `batch x output_dim`.
#[derive(Debug, Clone)]
pub struct NetworkVars {
    pub values: Var,
    pub tangents: Vec<Var>,
}

pub struct Tape {
    id: u64,
    nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: RefCell::new(Vec::new()),
        }
    }

    fn push(&self, value: Vec<f64>, requires_grad: bool, backward: Option<Backward>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let len = value.len();
        nodes.push(Node { value, requires_grad, backward: if requires_grad { backward } else { None } });
        Var { tape: self.id, idx: nodes.len() - 1, len }
    }

    fn check(&self, v: Var) {
        assert_eq!(v.tape, self.id, "variable from a different tape");
    }

    fn requires(&self, v: Var) -> bool {
        self.check(v);
        self.nodes.borrow()[v.idx].requires_grad
    }

    /// Leaf whose gradient is wanted.
    pub fn param(&self, values: &[f64]) -> Var {
        self.push(values.to_vec(), true, None)
    }

    /// Leaf treated as a constant.
    pub fn constant(&self, values: &[f64]) -> Var {
        self.push(values.to_vec(), false, None)
    }

    pub fn value(&self, v: Var) -> Vec<f64> {
        self.check(v);
        self.nodes.borrow()[v.idx].value.clone()
    }

    pub fn scalar(&self, v: Var) -> DifferentiableScalar {
        self.check(v);
        assert_eq!(v.len, 1, "scalar requested from a vector node");
        DifferentiableScalar { value: self.nodes.borrow()[v.idx].value[0], source: Some(v) }
    }

    /// Records a node with a caller-supplied vector-Jacobian product. The
    /// closure receives the node's cotangent and must accumulate into the
    /// cotangents of `parents`.
    pub fn custom<F>(&self, value: Vec<f64>, parents: &[Var], backward: F) -> Var
    where
        F: Fn(&[f64], &mut Cotangents) + 'static,
    {
        let requires = parents.iter().any(|&p| self.requires(p));
        self.push(value, requires, Some(Box::new(backward)))
    }

    // ------------------------------------------------------------ elementwise

    pub fn add(&self, a: Var, b: Var) -> Var {
        assert_eq!(a.len, b.len);
        let (va, vb) = (self.value(a), self.value(b));
        let value = va.iter().zip(&vb).map(|(x, y)| x + y).collect();
        self.custom(value, &[a, b], move |g, c| {
            c.accumulate(a, g);
            c.accumulate(b, g);
        })
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        assert_eq!(a.len, b.len);
        let (va, vb) = (self.value(a), self.value(b));
        let value = va.iter().zip(&vb).map(|(x, y)| x - y).collect();
        self.custom(value, &[a, b], move |g, c| {
            c.accumulate(a, g);
            let neg: Vec<f64> = g.iter().map(|x| -x).collect();
            c.accumulate(b, &neg);
        })
    }

    pub fn scale(&self, a: Var, s: f64) -> Var {
        let value = self.value(a).iter().map(|x| s * x).collect();
        self.custom(value, &[a], move |g, c| {
            let gs: Vec<f64> = g.iter().map(|x| s * x).collect();
            c.accumulate(a, &gs);
        })
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        assert_eq!(a.len, b.len);
        let (va, vb) = (self.value(a), self.value(b));
        let value = va.iter().zip(&vb).map(|(x, y)| x * y).collect();
        self.custom(value, &[a, b], move |g, c| {
            let ga: Vec<f64> = g.iter().zip(&vb).map(|(x, y)| x * y).collect();
            let gb: Vec<f64> = g.iter().zip(&va).map(|(x, y)| x * y).collect();
            c.accumulate(a, &ga);
            c.accumulate(b, &gb);
        })
    }

    /// `a + offset` with a constant offset.
    pub fn add_const(&self, a: Var, offset: &[f64]) -> Var {
        assert_eq!(a.len, offset.len());
        let value = self.value(a).iter().zip(offset).map(|(x, y)| x + y).collect();
        self.custom(value, &[a], move |g, c| c.accumulate(a, g))
    }

    /// Scales row `r` (of width `width`) by `factors[r]`.
    pub fn row_scale(&self, a: Var, factors: &[f64], width: usize) -> Var {
        assert_eq!(a.len, factors.len() * width);
        let factors = factors.to_vec();
        let value = self
            .value(a)
            .chunks(width)
            .zip(&factors)
            .flat_map(|(row, f)| row.iter().map(move |x| f * x))
            .collect();
        self.custom(value, &[a], move |g, c| {
            let gs: Vec<f64> = g
                .chunks(width)
                .zip(&factors)
                .flat_map(|(row, f)| row.iter().map(move |x| f * x))
                .collect();
            c.accumulate(a, &gs);
        })
    }

    // ------------------------------------------------------------ reductions

    pub fn sum(&self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        let len = a.len;
        self.custom(vec![s], &[a], move |g, c| c.accumulate(a, &vec![g[0]; len]))
    }

    pub fn sum_sq(&self, a: Var) -> Var {
        let va = self.value(a);
        let s = va.iter().map(|x| x * x).sum();
        self.custom(vec![s], &[a], move |g, c| {
            let ga: Vec<f64> = va.iter().map(|x| 2.0 * g[0] * x).collect();
            c.accumulate(a, &ga);
        })
    }

    /// Per-row trace of a Jacobian stored as `dim` tangent blocks
    /// (`tangents[k]` holds d out / d v_k, rows of width `dim`).
    pub fn trace(&self, tangents: &[Var], dim: usize) -> Var {
        assert_eq!(tangents.len(), dim);
        let rows = tangents[0].len / dim;
        let vals: Vec<Vec<f64>> = tangents.iter().map(|&t| self.value(t)).collect();
        let value = (0..rows).map(|r| (0..dim).map(|k| vals[k][r * dim + k]).sum()).collect();
        let tangents = tangents.to_vec();
        self.custom(value, &tangents.clone(), move |g, c| {
            for (k, &t) in tangents.iter().enumerate() {
                if !c.requires_grad(t) {
                    continue;
                }
                let slot = c.slot(t);
                for (r, gr) in g.iter().enumerate() {
                    slot[r * dim + k] += gr;
                }
            }
        })
    }

    /// Elements `range` of `a`.
    pub fn slice(&self, a: Var, range: std::ops::Range<usize>) -> Var {
        let value = self.value(a)[range.clone()].to_vec();
        self.custom(value, &[a], move |g, c| {
            if !c.requires_grad(a) {
                return;
            }
            let slot = c.slot(a);
            for (x, y) in slot[range.clone()].iter_mut().zip(g) {
                *x += y;
            }
        })
    }

    // ------------------------------------------------------------ networks

    /// Evaluates `spec` at rows of `inputs` (`batch x dim`) and times `ts`,
    /// with one forward tangent per entry of `dirs`. Values and tangents stay
    /// differentiable with respect to `params` and `inputs`.
    pub fn network(
        &self,
        spec: &NetworkSpec,
        params: Var,
        inputs: Var,
        ts: &[f64],
        dirs: &[Vec<f64>],
    ) -> Result<NetworkVars, NnError> {
        let pvals = self.value(params);
        let vs = self.value(inputs);
        let (out, caches) = jet_forward_cached(spec, &pvals, &vs, ts, dirs)?;
        let k = dirs.len();
        let block = out.values.len();
        let mut joint = out.values;
        for t in &out.tangents {
            joint.extend_from_slice(t);
        }
        let spec = *spec;
        let need_input = self.requires(inputs);
        let node = self.custom(joint, &[params, inputs], move |g, c| {
            let gt: Vec<Option<&[f64]>> = (0..k)
                .map(|j| {
                    let s = &g[block * (j + 1)..block * (j + 2)];
                    if s.iter().all(|&x| x == 0.0) { None } else { Some(s) }
                })
                .collect();
            let (gp, gx) = super::engine::jet_backward(&spec, &pvals, &caches, k, &g[..block], &gt, need_input);
            c.accumulate(params, &gp);
            if need_input {
                c.accumulate(inputs, &gx);
            }
        });
        let values = self.slice(node, 0..block);
        let tangents = (0..k).map(|j| self.slice(node, block * (j + 1)..block * (j + 2))).collect();
        Ok(NetworkVars { values, tangents })
    }

    /// Network values plus their velocity divergence per row.
    pub fn network_with_divergence(
        &self,
        spec: &NetworkSpec,
        params: Var,
        inputs: Var,
        ts: &[f64],
    ) -> Result<(Var, Var), NnError> {
        let out = self.network(spec, params, inputs, ts, &velocity_basis(spec))?;
        let div = self.trace(&out.tangents, spec.dim);
        Ok((out.values, div))
    }

    /// Reverse sweep from `loss`.
    pub fn grad(&self, loss: &DifferentiableScalar) -> Result<Gradients, NnError> {
        let v = loss.source.ok_or(NnError::NotRecorded)?;
        if v.tape != self.id || v.len != 1 {
            return Err(NnError::NotRecorded);
        }
        let nodes = self.nodes.borrow();
        let mut cot = Cotangents {
            bufs: vec![None; nodes.len()],
            lens: nodes.iter().map(|n| n.value.len()).collect(),
            requires: nodes.iter().map(|n| n.requires_grad).collect(),
        };
        cot.bufs[v.idx] = Some(vec![1.0]);
        for i in (0..=v.idx).rev() {
            let Some(bw) = nodes[i].backward.as_ref() else { continue };
            let Some(g) = cot.bufs[i].take() else { continue };
            bw(&g, &mut cot);
            cot.bufs[i] = Some(g);
        }
        Ok(Gradients { tape: self.id, bufs: cot.bufs, lens: cot.lens })
    }

    /// Convenience: recorded parameters for a [`ParameterSet`].
    pub fn params(&self, p: &ParameterSet) -> Var {
        self.param(&p.values)
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::spec::{LayerShape, NetworkSpec, Stack};
use super::NnError;

/// Location of one affine layer inside the flat parameter vector: the
/// `rows x cols` weight (row-major) starts at `offset`, the bias follows it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSlot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub(crate) stack: Stack,
}

impl LayerSlot {
    pub fn weight_range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }

    pub fn bias_range(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.rows * self.cols;
        start..start + self.rows
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols + self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat parameter storage for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub values: Vec<f64>,
    pub layout: Vec<LayerSlot>,
}

pub(crate) fn layout_for(spec: &NetworkSpec) -> Vec<LayerSlot> {
    let mut offset = 0;
    spec.layer_shapes()
        .into_iter()
        .map(|LayerShape { stack, index, rows, cols }| {
            let slot = LayerSlot {
                name: format!("{}.{}", stack.name(), index),
                offset,
                rows,
                cols,
                stack,
            };
            offset += rows * cols + rows;
            slot
        })
        .collect()
}

impl ParameterSet {
    pub fn zeros(spec: &NetworkSpec) -> Self {
        ParameterSet {
            values: vec![0.0; spec.param_count()],
            layout: layout_for(spec),
        }
    }

    pub fn from_values(spec: &NetworkSpec, values: Vec<f64>) -> Result<Self, NnError> {
        let expected = spec.param_count();
        if values.len() != expected {
            return Err(NnError::Dimension {
                expected,
                got: values.len(),
            });
        }
        Ok(ParameterSet {
            values,
            layout: layout_for(spec),
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slot(&self, name: &str) -> Option<&LayerSlot> {
        self.layout.iter().find(|s| s.name == name)
    }
}

/// Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero, drawn from a
/// ChaCha8 stream seeded with `seed` in layout order.
pub fn init_params(spec: &NetworkSpec, seed: u64) -> ParameterSet {
    let mut params = ParameterSet::zeros(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for slot in params.layout.clone() {
        let bound = 1.0 / (slot.cols as f64).sqrt();
        for w in &mut params.values[slot.weight_range()] {
            *w = rng.gen_range(-bound..bound);
        }
    }
    params
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Block;

    fn spec() -> NetworkSpec {
        NetworkSpec::new(3, Block::new(8, 2), Some(Block::new(4, 1)), Block::new(16, 2)).unwrap()
    }

    #[test]
    fn layout_is_contiguous() {
        let p = ParameterSet::zeros(&spec());
        let mut next = 0;
        for s in &p.layout {
            assert_eq!(s.offset, next);
            next += s.len();
        }
        assert_eq!(next, p.len());
        assert_eq!(p.len(), spec().param_count());
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_params(&spec(), 1);
        let b = init_params(&spec(), 1);
        let c = init_params(&spec(), 2);
        assert_eq!(a, b);
        assert_ne!(a.values, c.values);
        for s in &a.layout {
            assert!(a.values[s.bias_range()].iter().all(|&x| x == 0.0));
            let bound = 1.0 / (s.cols as f64).sqrt();
            assert!(a.values[s.weight_range()].iter().all(|x| x.abs() <= bound));
        }
    }
}

use super::NnError;

/// Hidden activation. `Identity` exists so tests can build networks that
/// realize exactly linear maps; every production network uses SiLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Identity,
}

impl Activation {
    pub(crate) fn code(self) -> u32 {
        match self {
            Activation::Silu => 0,
            Activation::Identity => 1,
        }
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(Activation::Silu),
            1 => Some(Activation::Identity),
            _ => None,
        }
    }

    /// Returns (value, first derivative, second derivative).
    #[inline]
    pub(crate) fn eval(self, x: f64) -> (f64, f64, f64) {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-x).exp());
                let d1 = s * (1.0 + x * (1.0 - s));
                let d2 = s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s));
                (x * s, d1, d2)
            }
            Activation::Identity => (x, 1.0, 0.0),
        }
    }
}

/// Width and number of hidden layers of one stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub width: usize,
    pub depth: usize,
}

impl Block {
    pub const fn new(width: usize, depth: usize) -> Self {
        Block { width, depth }
    }
}

/// Architecture of a flow or score network.
///
/// The velocity and (optional) time inputs pass through separate embedding
/// stacks, the embeddings are concatenated, and a trunk followed by an affine
/// head maps them to `output_dim`. Without a time embedding the network is a
/// plain MLP on the velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkSpec {
    pub dim: usize,
    pub output_dim: usize,
    pub vel_embed: Block,
    pub time_embed: Option<Block>,
    pub trunk: Block,
    pub activation: Activation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stack {
    Velocity,
    Time,
    Trunk,
    Head,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerShape {
    pub stack: Stack,
    pub index: usize,
    pub rows: usize,
    pub cols: usize,
}

impl NetworkSpec {
    /// Velocity/time network with output dimension equal to the velocity
    /// dimension.
    pub fn new(
        dim: usize,
        vel_embed: Block,
        time_embed: Option<Block>,
        trunk: Block,
    ) -> Result<Self, NnError> {
        let spec = NetworkSpec {
            dim,
            output_dim: dim,
            vel_embed,
            time_embed,
            trunk,
            activation: Activation::Silu,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<(), NnError> {
        if self.dim == 0 || self.output_dim == 0 {
            return Err(NnError::InvalidSpec("dimensions must be positive".into()));
        }
        if self.output_dim != self.dim {
            return Err(NnError::InvalidSpec(format!(
                "output dimension {} must equal velocity dimension {}",
                self.output_dim, self.dim
            )));
        }
        let mut blocks = vec![("velocity embedding", self.vel_embed), ("trunk", self.trunk)];
        if let Some(t) = self.time_embed {
            blocks.push(("time embedding", t));
        }
        for (name, b) in blocks {
            if b.width == 0 || b.depth == 0 {
                return Err(NnError::InvalidSpec(format!(
                    "{name} needs width and depth >= 1 (got {}x{})",
                    b.width, b.depth
                )));
            }
        }
        Ok(())
    }

    /// Number of scalar inputs: velocity plus one time input if embedded.
    pub fn input_dim(&self) -> usize {
        self.dim + usize::from(self.time_embed.is_some())
    }

    pub fn has_time(&self) -> bool {
        self.time_embed.is_some()
    }

    pub(crate) fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut out = Vec::new();
        let mut push = |stack, index, rows, cols| {
            out.push(LayerShape {
                stack,
                index,
                rows,
                cols,
            })
        };
        let v = self.vel_embed;
        for k in 0..v.depth {
            push(Stack::Velocity, k, v.width, if k == 0 { self.dim } else { v.width });
        }
        let mut fused = v.width;
        if let Some(t) = self.time_embed {
            for k in 0..t.depth {
                push(Stack::Time, k, t.width, if k == 0 { 1 } else { t.width });
            }
            fused += t.width;
        }
        let tr = self.trunk;
        for k in 0..tr.depth {
            push(Stack::Trunk, k, tr.width, if k == 0 { fused } else { tr.width });
        }
        push(Stack::Head, 0, self.output_dim, tr.width);
        out
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|l| l.rows * l.cols + l.rows)
            .sum()
    }
}

impl Stack {
    pub(crate) fn name(self) -> &'static str {
        match self {
            Stack::Velocity => "vel",
            Stack::Time => "time",
            Stack::Trunk => "trunk",
            Stack::Head => "head",
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_depth_rejected() {
        let err = NetworkSpec::new(2, Block::new(8, 0), None, Block::new(8, 1)).unwrap_err();
        assert!(matches!(err, NnError::InvalidSpec(_)));
        assert!(NetworkSpec::new(2, Block::new(8, 1), Some(Block::new(0, 1)), Block::new(8, 1)).is_err());
        assert!(NetworkSpec::new(2, Block::new(8, 1), None, Block::new(8, 0)).is_err());
    }

    #[test]
    fn param_count_group_a() {
        // vel 2->32->32, time 1->16, trunk 48->128->128->128->128, head 128->2
        let spec = NetworkSpec::new(2, Block::new(32, 2), Some(Block::new(16, 1)), Block::new(128, 4)).unwrap();
        let expect = (2 * 32 + 32) + (32 * 32 + 32) + (16 + 16) + (48 * 128 + 128) + 3 * (128 * 128 + 128) + (128 * 2 + 2);
        assert_eq!(spec.param_count(), expect);
        assert_eq!(spec.input_dim(), 3);
    }

    #[test]
    fn silu_fixed_point_and_derivatives() {
        let (y, d1, _) = Activation::Silu.eval(0.0);
        assert_eq!(y, 0.0);
        assert_eq!(d1, 0.5);
        let h = 1e-5;
        for &x in &[-3.0, -0.7, 0.4, 2.5] {
            let (_, d1, d2) = Activation::Silu.eval(x);
            let fd1 = (Activation::Silu.eval(x + h).0 - Activation::Silu.eval(x - h).0) / (2.0 * h);
            let fd2 = (Activation::Silu.eval(x + h).1 - Activation::Silu.eval(x - h).1) / (2.0 * h);
            assert!((d1 - fd1).abs() < 1e-9);
            assert!((d2 - fd2).abs() < 1e-9);
        }
    }
}

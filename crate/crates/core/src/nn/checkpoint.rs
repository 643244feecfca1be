//! Network checkpoint format (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "LPNN"
//! version    u32      1
//! spec       10 x u32 dim, output_dim, vel_width, vel_depth, has_time,
//!                     time_width, time_depth, trunk_width, trunk_depth,
//!                     activation (0 = SiLU, 1 = identity)
//! count      u64      number of parameters
//! values     count x f64
//! crc32      u32      CRC-32 (IEEE) of every preceding byte
//! ```

use std::path::Path;

use super::params::ParameterSet;
use super::spec::{Activation, Block, NetworkSpec};
use super::NnError;

const MAGIC: &[u8; 4] = b"LPNN";
const VERSION: u32 = 1;

pub fn write_checkpoint(spec: &NetworkSpec, params: &ParameterSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let t = spec.time_embed.unwrap_or(Block::new(0, 0));
    let fields = [
        spec.dim,
        spec.output_dim,
        spec.vel_embed.width,
        spec.vel_embed.depth,
        usize::from(spec.time_embed.is_some()),
        t.width,
        t.depth,
        spec.trunk.width,
        spec.trunk.depth,
        spec.activation.code() as usize,
    ];
    for f in fields {
        out.extend_from_slice(&(f as u32).to_le_bytes());
    }
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for v in &params.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

fn bad(msg: impl Into<String>) -> NnError {
    NnError::Checkpoint(msg.into())
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<(NetworkSpec, ParameterSet), NnError> {
    let header = 4 + 4 + 40 + 8;
    if bytes.len() < header + 4 {
        return Err(bad("truncated file"));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic"));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let crc = u32::from_le_bytes(trailer.try_into().unwrap());
    if crc32fast::hash(body) != crc {
        return Err(bad("CRC mismatch"));
    }
    let u32_at = |off: usize| u32::from_le_bytes(body[off..off + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let f: Vec<usize> = (0..10).map(|i| u32_at(8 + 4 * i) as usize).collect();
    let activation = Activation::from_code(f[9] as u32).ok_or_else(|| bad("unknown activation"))?;
    let spec = NetworkSpec {
        dim: f[0],
        output_dim: f[1],
        vel_embed: Block::new(f[2], f[3]),
        time_embed: (f[4] != 0).then(|| Block::new(f[5], f[6])),
        trunk: Block::new(f[7], f[8]),
        activation,
    };
    spec.validate()?;
    let count = u64::from_le_bytes(body[48..56].try_into().unwrap()) as usize;
    if count != spec.param_count() {
        return Err(bad(format!(
            "parameter count {count} does not match spec ({})",
            spec.param_count()
        )));
    }
    if body.len() != header + 8 * count {
        return Err(bad("payload length mismatch"));
    }
    let values = body[header..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let params = ParameterSet::from_values(&spec, values)?;
    Ok((spec, params))
}

pub fn save_checkpoint(path: &Path, spec: &NetworkSpec, params: &ParameterSet) -> Result<(), NnError> {
    std::fs::write(path, write_checkpoint(spec, params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(NetworkSpec, ParameterSet), NnError> {
    read_checkpoint(&std::fs::read(path)?)
}

//! Checkpoint container.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic        8 bytes  "VCNNCKPT"
//! version      u32      1
//! network_id   u8       0 = fdnn, 1 = ppnn, 2 = vcnn
//! layer_count  u32
//! layer_count × spec:
//!   kind u8 (0 conv, 1 deconv), kernel u32, in_channels u32,
//!   out_channels u32, stride u32, activation u8 (0 none, 1 relu)
//! layer_count × tensors:
//!   weight_len u32, weight_len × f32, bias_len u32, bias_len × f32
//! ```
//!
//! Convolution weights are `[out][in][k][k]`, transposed-convolution
//! weights `[in][out][k][k]`. Nothing may follow the last tensor.

use std::path::Path;

use super::network::{Activation, LayerKind, LayerParams, LayerSpec, NetworkKind, NetworkParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"VCNNCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_checkpoint(net: &NetworkParams<f32>) -> Result<Vec<u8>> {
    if !net.is_finite() {
        return Err(Error::NonFinite(format!("{} parameters", net.kind())));
    }
    let mut out = Vec::with_capacity(64 + 4 * net.param_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(net.kind().code());
    out.extend_from_slice(&(net.specs().len() as u32).to_le_bytes());
    for spec in net.specs() {
        out.push(match spec.kind {
            LayerKind::Conv => 0,
            LayerKind::Deconv => 1,
        });
        for v in [spec.kernel, spec.in_channels, spec.out_channels, spec.stride] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.push(match spec.activation {
            Activation::None => 0,
            Activation::Relu => 1,
        });
    }
    for layer in net.layers() {
        for tensor in [&layer.weights, &layer.biases] {
            out.extend_from_slice(&(tensor.len() as u32).to_le_bytes());
            for v in tensor.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn tensor(&mut self, expected: usize) -> Result<Vec<f32>> {
        let len = self.u32()? as usize;
        if len != expected {
            return Err(Error::CorruptCheckpoint(format!(
                "tensor of {len} values where the spec requires {expected}"
            )));
        }
        let bytes = self.take(len * 4)?;
        let values: Vec<f32> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptCheckpoint("non-finite parameter".into()));
        }
        Ok(values)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<NetworkParams<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let code = r.u8()?;
    let kind = NetworkKind::from_code(code)
        .ok_or_else(|| Error::CorruptCheckpoint(format!("unknown network id {code}")))?;
    let count = r.u32()? as usize;
    if count > 64 {
        return Err(Error::CorruptCheckpoint(format!("implausible layer count {count}")));
    }
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let layer_kind = match r.u8()? {
            0 => LayerKind::Conv,
            1 => LayerKind::Deconv,
            other => return Err(Error::CorruptCheckpoint(format!("unknown layer kind {other}"))),
        };
        let kernel = r.u32()? as usize;
        let in_channels = r.u32()? as usize;
        let out_channels = r.u32()? as usize;
        let stride = r.u32()? as usize;
        let activation = match r.u8()? {
            0 => Activation::None,
            1 => Activation::Relu,
            other => return Err(Error::CorruptCheckpoint(format!("unknown activation {other}"))),
        };
        specs.push(LayerSpec {
            kind: layer_kind,
            kernel,
            in_channels,
            out_channels,
            stride,
            activation,
        });
    }
    let mut layers = Vec::with_capacity(count);
    for spec in &specs {
        let weights = r.tensor(spec.weight_len())?;
        let biases = r.tensor(spec.out_channels)?;
        layers.push(LayerParams { weights, biases });
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint("trailing bytes".into()));
    }
    NetworkParams::from_parts(kind, specs, layers).map_err(|e| Error::CorruptCheckpoint(e.to_string()))
}

pub fn save_checkpoint(net: &NetworkParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(net)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a checkpoint of any network.
pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<NetworkParams<f32>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Reads a checkpoint and checks that it holds `expected` with the canonical
/// architecture.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: NetworkKind) -> Result<NetworkParams<f32>> {
    let net = read_checkpoint(path)?;
    if net.kind() != expected || net.specs() != expected.spec().as_slice() {
        return Err(Error::SpecMismatch {
            expected: expected.to_string(),
            found: net.kind().to_string(),
        });
    }
    Ok(net)
}

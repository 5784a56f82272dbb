//! Model file: `"CNW1"`, u16 version, u16 reserved, the config block, the
//! learned-parameter count, normalization statistics, then every learned
//! tensor as little-endian f32 in `ConfidenceModelParams::tensors` order.
//!
//! Config block: u32 input_dim, u32 n_layers, n_layers × (u32 units,
//! u8 bidirectional), f64 dropout_rate, u64 seed.

use std::path::Path;

use super::{count_params, ConfNetConfig, ConfidenceModelParams, LayerSpec};
use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const MODEL_MAGIC: &[u8; 4] = b"CNW1";
pub const MODEL_VERSION: u16 = 1;

pub fn encode_model(params: &ConfidenceModelParams) -> Vec<u8> {
    let cfg = &params.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MODEL_MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.extend_from_slice(&0u16.to_le_bytes());
    buf.extend_from_slice(&(cfg.input_dim as u32).to_le_bytes());
    buf.extend_from_slice(&(cfg.layers.len() as u32).to_le_bytes());
    for l in &cfg.layers {
        buf.extend_from_slice(&(l.units as u32).to_le_bytes());
        buf.push(l.bidirectional as u8);
    }
    buf.extend_from_slice(&cfg.dropout_rate.to_le_bytes());
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    buf.extend_from_slice(&(count_params(params) as u64).to_le_bytes());
    for v in params.norm_mean.iter().chain(&params.norm_var) {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    for t in params.tensors() {
        for v in t {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Model(format!(
                "truncated file: need {} bytes at offset {}, have {}",
                n,
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<ConfidenceModelParams> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MODEL_MAGIC {
        return Err(Error::Model("bad magic, expected CNW1".into()));
    }
    let version = cur.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::Model(format!("unsupported version {version}")));
    }
    cur.u16()?;
    let input_dim = cur.u32()? as usize;
    let n_layers = cur.u32()? as usize;
    if n_layers > 1024 {
        return Err(Error::Model(format!("implausible layer count {n_layers}")));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let units = cur.u32()? as usize;
        let bidirectional = match cur.u8()? {
            0 => false,
            1 => true,
            b => return Err(Error::Model(format!("bad bidirectional flag {b}"))),
        };
        layers.push(LayerSpec { units, bidirectional });
    }
    let dropout_rate = f64::from_le_bytes(cur.take(8)?.try_into().unwrap());
    let seed = cur.u64()?;
    let config = ConfNetConfig {
        input_dim,
        layers,
        dropout_rate,
        seed,
    };
    config
        .validate()
        .map_err(|e| Error::Model(format!("invalid config block: {e}")))?;
    let stored = cur.u64()? as usize;
    let expected: usize = config.layer_param_counts().iter().sum();
    if stored != expected {
        return Err(Error::Model(format!(
            "parameter count mismatch: file declares {stored}, config implies {expected}"
        )));
    }
    let mut params = ConfidenceModelParams::zeros(&config);
    params.norm_mean = cur.f32s(input_dim)?;
    params.norm_var = cur.f32s(input_dim)?;
    let flat = cur.f32s(expected)?;
    params.set_flat(&flat);
    if cur.pos != bytes.len() {
        return Err(Error::Model(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    Ok(params)
}

pub fn save_model(params: &ConfidenceModelParams, path: &Path) -> Result<()> {
    write_atomic(path, &encode_model(params))
}

pub fn load_model(path: &Path) -> Result<ConfidenceModelParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::super::init_model;
    use super::*;

    fn small() -> ConfidenceModelParams {
        init_model(&ConfNetConfig::with_sizes([3, 2, 2, 2, 1], 2)).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let p = small();
        let bytes = encode_model(&p);
        assert_eq!(decode_model(&bytes).unwrap(), p);
    }

    #[test]
    fn truncated_file_rejected() {
        let bytes = encode_model(&small());
        for cut in [3, 20, bytes.len() - 1] {
            assert!(matches!(decode_model(&bytes[..cut]), Err(Error::Model(_))));
        }
    }

    #[test]
    fn edited_layer_size_rejected() {
        let mut bytes = encode_model(&small());
        // first layer units live right after magic, version, reserved, input_dim, n_layers
        bytes[16] = 4;
        let err = decode_model(&bytes).unwrap_err().to_string();
        assert!(err.contains("count mismatch"), "{err}");
    }

    #[test]
    fn bad_magic_rejected() {
        let mut bytes = encode_model(&small());
        bytes[3] = b'2';
        assert!(decode_model(&bytes).is_err());
    }
}

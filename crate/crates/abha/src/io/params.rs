//! Versioned binary container for encoder parameters.
//!
//! Layout, all integers `u32` and all reals `f64`, little-endian:
//!
//! ```text
//! magic   8 bytes  "ABHAPRM\0"
//! version u32
//! config  hidden key_dim value_dim ffn_dim layers heads classes max_frames (u32 each)
//!         x_lim y_lim (f64 each)
//! count   u32
//! tensor  name_len u32, name (UTF-8), rows u32, cols u32, rows·cols f64 row-major
//! ```

use std::path::Path;

use abha_core::encoder::{tensor_layout, EncoderConfig, EncoderParams};
use abha_core::Matrix;

use super::{file_error, write_atomic, IoError, Result};

pub const MAGIC: &[u8; 8] = b"ABHAPRM\0";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("dimension fits in u32").to_le_bytes());
}

pub fn encode_params(c: &EncoderConfig, p: &EncoderParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * p.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for v in [
        c.hidden,
        c.key_dim,
        c.value_dim,
        c.ffn_dim,
        c.layers,
        c.heads,
        c.classes,
        c.max_frames,
    ] {
        put_u32(&mut out, v);
    }
    out.extend_from_slice(&c.x_lim.to_le_bytes());
    out.extend_from_slice(&c.y_lim.to_le_bytes());
    let named = p.named_tensors(c);
    put_u32(&mut out, named.len());
    for (name, m) in named {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, m.rows());
        put_u32(&mut out, m.cols());
        for v in m.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(IoError::Params(format!("truncated while reading {what}")));
        };
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }
}

pub fn decode_params(bytes: &[u8]) -> Result<(EncoderConfig, EncoderParams)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(8, "magic")? != MAGIC {
        return Err(IoError::Params("not a parameter file (bad magic)".into()));
    }
    let version = cur.u32("version")? as u32;
    if version != FORMAT_VERSION {
        return Err(IoError::Params(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let c = EncoderConfig {
        hidden: cur.u32("hidden")?,
        key_dim: cur.u32("key_dim")?,
        value_dim: cur.u32("value_dim")?,
        ffn_dim: cur.u32("ffn_dim")?,
        layers: cur.u32("layers")?,
        heads: cur.u32("heads")?,
        classes: cur.u32("classes")?,
        max_frames: cur.u32("max_frames")?,
        x_lim: cur.f64("x_lim")?,
        y_lim: cur.f64("y_lim")?,
    };
    c.validate()?;
    let layout = tensor_layout(&c);
    let count = cur.u32("tensor count")?;
    if count != layout.len() {
        return Err(IoError::Params(format!(
            "file holds {count} tensors, config requires {}",
            layout.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (name, rows, cols) in layout {
        let len = cur.u32("tensor name length")?;
        let got = std::str::from_utf8(cur.take(len, "tensor name")?)
            .map_err(|_| IoError::Params(format!("tensor name before {name} is not UTF-8")))?;
        if got != name {
            return Err(IoError::Params(format!("expected tensor {name}, found {got}")));
        }
        let r = cur.u32(&name)?;
        let k = cur.u32(&name)?;
        if (r, k) != (rows, cols) {
            return Err(IoError::Params(format!(
                "tensor {name} has shape {r}x{k}, config requires {rows}x{cols}"
            )));
        }
        let raw = cur.take(8 * r * k, &name)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        tensors.push((name, Matrix::from_vec(r, k, data)?));
    }
    if cur.pos != bytes.len() {
        return Err(IoError::Params(format!("{} trailing bytes", bytes.len() - cur.pos)));
    }
    let params = EncoderParams::from_named_tensors(&c, tensors)?;
    Ok((c, params))
}

pub fn save_params(path: &Path, c: &EncoderConfig, p: &EncoderParams) -> Result<()> {
    write_atomic(path, &encode_params(c, p))
}

pub fn load_params(path: &Path) -> Result<(EncoderConfig, EncoderParams)> {
    let bytes = std::fs::read(path).map_err(file_error(path))?;
    decode_params(&bytes)
}

/// Loads and rejects files whose stored config differs from `expected`.
pub fn load_params_expecting(path: &Path, expected: &EncoderConfig) -> Result<EncoderParams> {
    let (c, p) = load_params(path)?;
    if c != *expected {
        return Err(IoError::Params(format!(
            "config mismatch: file has {c:?}, requested {expected:?}"
        )));
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            hidden: 8,
            key_dim: 4,
            value_dim: 4,
            ffn_dim: 16,
            layers: 2,
            heads: 2,
            classes: 3,
            max_frames: 6,
            x_lim: 30.0,
            y_lim: 30.0,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = small();
        let p = EncoderParams::init(&c, 5).unwrap();
        let (c2, p2) = decode_params(&encode_params(&c, &p)).unwrap();
        assert_eq!(c2, c);
        for (a, b) in p.tensors().iter().zip(p2.tensors()) {
            let bits = |m: &Matrix| m.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn tampered_shape_names_tensor() {
        let c = small();
        let mut bytes = encode_params(&c, &EncoderParams::zeros(&c));
        // first tensor is input_proj: header (8+4+32+16+4) then name_len, name, rows
        let rows_at = 64 + 4 + "input_proj".len();
        bytes[rows_at] = 3;
        let err = decode_params(&bytes).unwrap_err().to_string();
        assert!(err.contains("input_proj"), "{err}");
    }

    #[test]
    fn version_mismatch() {
        let c = small();
        let mut bytes = encode_params(&c, &EncoderParams::zeros(&c));
        bytes[8] = 9;
        assert!(decode_params(&bytes).unwrap_err().to_string().contains("version"));
    }

    #[test]
    fn truncated_file() {
        let c = small();
        let bytes = encode_params(&c, &EncoderParams::zeros(&c));
        assert!(decode_params(&bytes[..bytes.len() - 3]).is_err());
        assert!(decode_params(b"nope").is_err());
    }

    #[test]
    fn config_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.bin");
        let c = small();
        save_params(&path, &c, &EncoderParams::zeros(&c)).unwrap();
        let other = EncoderConfig {
            hidden: 4,
            value_dim: 2,
            ..c
        };
        assert!(load_params_expecting(&path, &other).is_err());
        assert!(load_params_expecting(&path, &c).is_ok());
    }
}

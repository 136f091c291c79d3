//! Binary checkpoint format.
//!
//! ```text
//! magic    4 bytes  "VZMK"
//! version  u16 LE
//! config   u32 LE × 6 (image_channels, blocks, growth, pem_features,
//!          pem_resblocks, pem_attention), f64 LE clamp
//! count    u32 LE   number of scalars that follow
//! params   f32 LE × count, in parameter declaration order
//! ```

use std::path::Path;

use super::model::{InnConfig, InnModel};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VZMK";
pub const CHECKPOINT_VERSION: u16 = 1;

const HEADER_LEN: usize = 4 + 2 + 6 * 4 + 8 + 4;

/// Upper bound on any architecture field, to reject absurd headers before
/// allocating.
const MAX_FIELD: u32 = 4096;

pub fn encode_checkpoint(model: &InnModel) -> Vec<u8> {
    let cfg = model.config();
    let count = model.params().scalar_count();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * count);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [
        cfg.image_channels,
        cfg.blocks,
        cfg.growth,
        cfg.pem_features,
        cfg.pem_resblocks,
        cfg.pem_attention,
    ] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.clamp.to_le_bytes());
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for e in model.params().entries() {
        for v in &e.value.data {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated checkpoint".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

fn read_u32(bytes: &mut &[u8]) -> Result<u32> {
    Ok(u32::from_le_bytes(take(bytes, 4)?.try_into().expect("4 bytes")))
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<InnModel> {
    let mut cur = bytes;
    if take(&mut cur, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = u16::from_le_bytes(take(&mut cur, 2)?.try_into().expect("2 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut fields = [0usize; 6];
    for f in fields.iter_mut() {
        let v = read_u32(&mut cur)?;
        if v > MAX_FIELD {
            return Err(Error::Checkpoint(format!("architecture field {v} out of range")));
        }
        *f = v as usize;
    }
    let clamp = f64::from_le_bytes(take(&mut cur, 8)?.try_into().expect("8 bytes"));
    let config = InnConfig {
        image_channels: fields[0],
        blocks: fields[1],
        growth: fields[2],
        pem_features: fields[3],
        pem_resblocks: fields[4],
        pem_attention: fields[5],
        clamp,
    };
    config
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid architecture: {e}")))?;
    let count = read_u32(&mut cur)? as usize;
    if cur.len() != 4 * count {
        return Err(Error::Checkpoint(format!(
            "expected {} parameter bytes, found {}",
            4 * count,
            cur.len()
        )));
    }
    let mut model = InnModel::zeroed(config)?;
    if model.params().scalar_count() != count {
        return Err(Error::Checkpoint(format!(
            "architecture needs {} parameters, file has {count}",
            model.params().scalar_count()
        )));
    }
    let mut values = cur
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64);
    for e in model.params_mut().entries_mut() {
        for v in e.value.data.iter_mut() {
            let x = values.next().expect("count checked");
            if !x.is_finite() {
                return Err(Error::Checkpoint(format!("non-finite value in {}", e.name)));
            }
            *v = x;
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &InnModel, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<InnModel> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> InnConfig {
        InnConfig {
            blocks: 1,
            growth: 2,
            pem_features: 4,
            pem_resblocks: 1,
            ..InnConfig::default()
        }
    }

    #[test]
    fn round_trip_at_f32_precision() {
        let mut m = InnModel::new(cfg(), 3).unwrap();
        m.randomize(4, 1.0);
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes).unwrap();
        assert_eq!(back.config(), m.config());
        for (a, b) in m.params().entries().iter().zip(back.params().entries()) {
            assert_eq!(a.name, b.name);
            for (x, y) in a.value.data.iter().zip(&b.value.data) {
                assert_eq!(*y, *x as f32 as f64);
            }
        }
        // f32-representable weights survive bit-exactly
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let m = InnModel::zeroed(cfg()).unwrap();
        let bytes = encode_checkpoint(&m);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Checkpoint(_))));
        assert!(matches!(decode_checkpoint(&bytes[..bytes.len() - 1]), Err(Error::Checkpoint(_))));
        assert!(matches!(decode_checkpoint(&bytes[..10]), Err(Error::Checkpoint(_))));
        let mut ver = bytes.clone();
        ver[4] = 9;
        assert!(matches!(decode_checkpoint(&ver), Err(Error::Checkpoint(_))));
        assert!(matches!(decode_checkpoint(&[]), Err(Error::Checkpoint(_))));
    }
}

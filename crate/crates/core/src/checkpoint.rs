//! Flat binary model checkpoints.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"FKDS" | version: u32 | input_dim: u32 | hidden_dim: u32 | num_classes: u32
//! | layer 0 weight (row-major f64) | layer 0 bias | layer 1 ... | layer 2 bias
//! ```

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{FlekdError, Result};
use crate::nn::{Dense, ModelDims, ModelParams};

pub const MAGIC: &[u8; 4] = b"FKDS";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4;

pub fn encode(params: &ModelParams) -> Result<Vec<u8>> {
    let dims = params.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * params.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [dims.input_dim, dims.hidden_dim, dims.num_classes] {
        let d = u32::try_from(d).map_err(|_| FlekdError::invalid("dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("length checked"))
}

pub fn decode(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < HEADER_LEN {
        return Err(FlekdError::CorruptCheckpoint(format!(
            "{} bytes is shorter than the header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(FlekdError::CorruptCheckpoint("bad magic bytes".into()));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(FlekdError::CorruptCheckpoint(format!(
            "unsupported version {version}"
        )));
    }
    let dims = ModelDims::new(
        read_u32(bytes, 8) as usize,
        read_u32(bytes, 12) as usize,
        read_u32(bytes, 16) as usize,
    )
    .map_err(|e| FlekdError::CorruptCheckpoint(e.to_string()))?;
    let expected = dims
        .layer_shapes()
        .iter()
        .map(|(o, i)| o * i + o)
        .sum::<usize>()
        * 8;
    let body = &bytes[HEADER_LEN..];
    if body.len() != expected {
        return Err(FlekdError::CorruptCheckpoint(format!(
            "expected {expected} parameter bytes, found {}",
            body.len()
        )));
    }
    let mut floats = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")));
    let mut take = |n: usize| -> Vec<f64> { floats.by_ref().take(n).collect() };
    let layers = dims.layer_shapes().map(|(o, i)| Dense {
        weight: Array2::from_shape_vec((o, i), take(o * i)).expect("sized"),
        bias: Array1::from(take(o)),
    });
    ModelParams::from_layers(layers).map_err(|e| FlekdError::CorruptCheckpoint(e.to_string()))
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, encode(params)?).map_err(|e| FlekdError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| FlekdError::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_params;

    #[test]
    fn file_round_trip_is_bit_exact() {
        let p = init_params(82, 128, 7, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fkds");
        save_checkpoint(&p, &path).unwrap();
        let q = load_checkpoint(&path).unwrap();
        assert!(p.values().zip(q.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"FKDS");
        assert_eq!(read_u32(&bytes, 8), 82);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = encode(&init_params(3, 4, 2, 1).unwrap()).unwrap();
        let corrupt = |b: &[u8]| matches!(decode(b), Err(FlekdError::CorruptCheckpoint(_)));
        assert!(corrupt(&bytes[..bytes.len() - 1]));
        assert!(corrupt(&bytes[..10]));
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(corrupt(&wrong));
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(corrupt(&wrong));
        let mut longer = bytes;
        longer.push(0);
        assert!(corrupt(&longer));
    }
}

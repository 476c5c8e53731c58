//! Checkpoint container: an 8-byte magic, a little-endian `u64` header length,
//! a JSON header (configuration, tensor table, regularizer weights, seed) and
//! the raw little-endian `f64` parameter buffer.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Model, TensorSpec};
use super::{ModelConfig, VaeError};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"VOXVAE01";

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorSpec>,
    gamma: Vec<f64>,
    rng_seed: u64,
    parameter_count: usize,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), VaeError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_checkpoint(model, &mut f)?;
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model, VaeError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_checkpoint(&mut f)
}

pub(crate) fn write_checkpoint(model: &Model, w: &mut impl Write) -> Result<(), VaeError> {
    let header = Header {
        config: model.config().clone(),
        tensors: model.tensor_specs().to_vec(),
        gamma: model.gamma().to_vec(),
        rng_seed: model.rng_seed(),
        parameter_count: model.parameter_count(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| VaeError::Checkpoint(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for p in model.parameters() {
        w.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_checkpoint(r: &mut impl Read) -> Result<Model, VaeError> {
    let fail = |m: &str| VaeError::Checkpoint(m.into());
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| fail("file too short"))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(fail("unrecognized magic; not a model checkpoint"));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| fail("truncated header length"))?;
    let len = u64::from_le_bytes(len);
    if len > 1 << 30 {
        return Err(fail("header length is implausible"));
    }
    let mut json = vec![0u8; len as usize];
    r.read_exact(&mut json).map_err(|_| fail("truncated header"))?;
    let header: Header =
        serde_json::from_slice(&json).map_err(|e| VaeError::Checkpoint(format!("bad header: {e}")))?;
    let mut params = Vec::with_capacity(header.parameter_count);
    let mut buf = [0u8; 8];
    for _ in 0..header.parameter_count {
        r.read_exact(&mut buf).map_err(|_| fail("truncated parameter data"))?;
        params.push(f64::from_le_bytes(buf));
    }
    if r.read(&mut buf)? != 0 {
        return Err(fail("trailing bytes after parameter data"));
    }
    Model::from_parts(header.config, &header.tensors, params, header.gamma, header.rng_seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let cfg = ModelConfig {
            input_dim: 8,
            latent_dim: 3,
            channel_widths: vec![2, 4],
            stack_dense: true,
        };
        Model::new(cfg, 42, 0.02).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let m = model();
        let mut a = Vec::new();
        write_checkpoint(&m, &mut a).unwrap();
        let back = read_checkpoint(&mut a.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut b = Vec::new();
        write_checkpoint(&back, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = model();
        save_checkpoint(&m, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
    }

    #[test]
    fn rejects_corruption() {
        let m = model();
        let mut bytes = Vec::new();
        write_checkpoint(&m, &mut bytes).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut bad.as_slice()).is_err());
        let cut = &bytes[..bytes.len() - 4];
        assert!(read_checkpoint(&mut &cut[..]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(read_checkpoint(&mut extra.as_slice()).is_err());
    }
}

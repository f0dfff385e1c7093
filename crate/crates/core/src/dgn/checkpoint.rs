//! Checkpoint format: one JSON header line (format version, config echo,
//! tensor names and shapes) followed by the raw little-endian f64 tensor data
//! in canonical order. Round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{DgnConfig, DgnParams};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: DgnConfig,
    names: Vec<String>,
    shapes: Vec<(usize, usize)>,
}

/// Write parameters with their config to `path`.
pub fn save_params(params: &DgnParams, cfg: &DgnConfig, path: &Path) -> Result<()> {
    let header = Header {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        names: params.tensor_names(),
        shapes: params.tensors().iter().map(|m| (m.rows, m.cols)).collect(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &header)?;
    w.write_all(b"\n")?;
    for t in params.tensors() {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a checkpoint back; returns the stored config alongside the weights.
pub fn load_params(path: &Path) -> Result<(DgnConfig, DgnParams)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header_bytes = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(Error::Checkpoint("missing header terminator".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header_bytes.push(byte[0]);
    }
    let header: Header = serde_json::from_slice(&header_bytes)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {}",
            header.format_version
        )));
    }

    let mut params = DgnParams::init(&header.config, 0);
    let expected_shapes: Vec<(usize, usize)> =
        params.tensors().iter().map(|m| (m.rows, m.cols)).collect();
    if expected_shapes != header.shapes {
        return Err(Error::Checkpoint(
            "header shapes disagree with the stored config".into(),
        ));
    }

    for t in params.tensors_mut() {
        for v in &mut t.data {
            let mut buf = [0u8; 8];
            r.read_exact(&mut buf).map_err(|_| {
                Error::Checkpoint("truncated tensor data".into())
            })?;
            *v = f64::from_le_bytes(buf);
        }
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after tensor data".into()));
    }
    Ok((header.config, params))
}

/// Load a checkpoint whose architecture must match `cfg` (training knobs such
/// as the learning rate or schedule may differ).
pub fn load_params_for(path: &Path, cfg: &DgnConfig) -> Result<DgnParams> {
    let (stored, params) = load_params(path)?;
    let same_architecture = stored.obs_dim == cfg.obs_dim
        && stored.hidden_dim == cfg.hidden_dim
        && stored.num_heads == cfg.num_heads
        && stored.key_dim == cfg.key_dim
        && stored.num_conv_layers == cfg.num_conv_layers
        && stored.num_actions == cfg.num_actions;
    if !same_architecture {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint architecture (hidden {}, heads {}, key {}, layers {}) \
             does not match requested (hidden {}, heads {}, key {}, layers {})",
            stored.hidden_dim,
            stored.num_heads,
            stored.key_dim,
            stored.num_conv_layers,
            cfg.hidden_dim,
            cfg.num_heads,
            cfg.key_dim,
            cfg.num_conv_layers,
        )));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> DgnConfig {
        DgnConfig {
            hidden_dim: 8,
            num_heads: 2,
            key_dim: 4,
            ..Default::default()
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = tiny();
        let params = DgnParams::init(&cfg, 42);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_params(&params, &cfg, &path).unwrap();
        let (cfg2, restored) = load_params(&path).unwrap();
        assert_eq!(params, restored);
        assert_eq!(cfg.hidden_dim, cfg2.hidden_dim);
    }

    #[test]
    fn mismatched_architecture_rejected() {
        let cfg = tiny();
        let params = DgnParams::init(&cfg, 0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_params(&params, &cfg, &path).unwrap();
        let other = DgnConfig {
            hidden_dim: 16,
            ..tiny()
        };
        assert!(matches!(
            load_params_for(&path, &other),
            Err(Error::ShapeMismatch(_))
        ));
        // Same architecture with different training knobs is fine.
        let retrain = DgnConfig {
            learning_rate: 5e-4,
            ..tiny()
        };
        assert!(load_params_for(&path, &retrain).is_ok());
    }

    #[test]
    fn corrupt_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");

        std::fs::write(&path, b"not json\n\x00\x00").unwrap();
        assert!(load_params(&path).is_err());

        // Truncated tensor data.
        let cfg = tiny();
        let params = DgnParams::init(&cfg, 0);
        save_params(&params, &cfg, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 16]).unwrap();
        assert!(load_params(&path).is_err());
    }
}

//! Whole-model snapshots.
//!
//! Layout (integers little-endian):
//!   "GRCK", version u8 (1), entry count u32,
//!   then per entry: name length u16, UTF-8 name, embedded tensor container,
//!   then a u32 length followed by a UTF-8 `key = value` config snapshot.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::io::tensorfile::{tensor_from_bytes, tensor_to_bytes};
use crate::tensor::{Parameter, Scalar, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GRCK";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Parsed checkpoint contents: named weights in file order plus the config
/// text that produced them.
pub struct CheckpointData<T: Scalar> {
    pub entries: Vec<(String, Tensor<T>)>,
    pub config: String,
}

pub fn save_checkpoint<T: Scalar>(
    path: &std::path::Path,
    params: &[Parameter<T>],
    config: &str,
) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.push(CHECKPOINT_VERSION);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name().as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(Error::contract(format!("parameter name too long: {}", p.name())));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&tensor_to_bytes(&p.tensor()));
    }
    let cfg = config.as_bytes();
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg);
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(path: &std::path::Path) -> Result<CheckpointData<T>> {
    let bytes = std::fs::read(path)?;
    let need = |off: usize, n: usize, what: &str| -> Result<()> {
        if off + n > bytes.len() {
            Err(Error::format(off as u64, format!("truncated while reading {what}")))
        } else {
            Ok(())
        }
    };
    need(0, 9, "header")?;
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "bad magic (expected GRCK)".to_string()));
    }
    if bytes[4] != CHECKPOINT_VERSION {
        return Err(Error::format(4, format!("unsupported version {}", bytes[4])));
    }
    let count = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let mut off = 9usize;
    let mut seen = HashMap::new();
    let mut entries = Vec::with_capacity(count);
    for i in 0..count {
        need(off, 2, "entry name length")?;
        let name_len = u16::from_le_bytes(bytes[off..off + 2].try_into().unwrap()) as usize;
        off += 2;
        need(off, name_len, "entry name")?;
        let name = std::str::from_utf8(&bytes[off..off + name_len])
            .map_err(|_| Error::format(off as u64, format!("entry {i} name is not UTF-8")))?
            .to_string();
        off += name_len;
        if let Some(prev) = seen.insert(name.clone(), i) {
            return Err(Error::format(
                off as u64,
                format!("duplicate entry \"{name}\" (first at index {prev})"),
            ));
        }
        let (tensor, end) = tensor_from_bytes::<T>(&bytes, off as u64)?;
        off = end as usize;
        entries.push((name, tensor));
    }
    need(off, 4, "config length")?;
    let cfg_len = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as usize;
    off += 4;
    need(off, cfg_len, "config snapshot")?;
    let config = std::str::from_utf8(&bytes[off..off + cfg_len])
        .map_err(|_| Error::format(off as u64, "config snapshot is not UTF-8".to_string()))?
        .to_string();
    off += cfg_len;
    if off != bytes.len() {
        return Err(Error::format(off as u64, format!("{} trailing bytes", bytes.len() - off)));
    }
    Ok(CheckpointData { entries, config })
}

/// Copy checkpoint weights into `params`. The parameter list defines what must
/// be present; any missing, mismatched, or surplus entry is an error naming it.
pub fn load_into<T: Scalar>(data: &CheckpointData<T>, params: &[Parameter<T>]) -> Result<()> {
    let mut by_name: HashMap<&str, &Tensor<T>> =
        data.entries.iter().map(|(n, t)| (n.as_str(), t)).collect();
    for p in params {
        let stored = by_name.remove(p.name()).ok_or_else(|| {
            Error::format(0, format!("checkpoint is missing entry \"{}\"", p.name()))
        })?;
        if stored.shape() != p.shape() {
            return Err(Error::format(
                0,
                format!(
                    "entry \"{}\" has shape {:?}, model expects {:?}",
                    p.name(),
                    stored.shape(),
                    p.shape()
                ),
            ));
        }
        p.set_data(stored.to_vec())?;
    }
    if let Some((name, _)) = data.entries.iter().find(|(n, _)| by_name.contains_key(n.as_str())) {
        return Err(Error::format(
            0,
            format!("checkpoint entry \"{name}\" does not correspond to any model parameter"),
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_params() -> Vec<Parameter<f32>> {
        vec![
            Parameter::new("a.weight", Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap()),
            Parameter::new("a.bias", Tensor::from_vec(vec![0.5, -0.5], &[2]).unwrap()),
        ]
    }

    #[test]
    fn round_trip_restores_values_and_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let params = sample_params();
        save_checkpoint(&path, &params, "heads = 4\nseed = 42\n").unwrap();

        let data = read_checkpoint::<f32>(&path).unwrap();
        assert_eq!(data.config, "heads = 4\nseed = 42\n");
        assert_eq!(data.entries.len(), 2);

        let fresh = sample_params();
        fresh[0].set_data(vec![0.0; 4]).unwrap();
        fresh[1].set_data(vec![0.0; 2]).unwrap();
        load_into(&data, &fresh).unwrap();
        assert_eq!(fresh[0].tensor().to_vec(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(fresh[1].tensor().to_vec(), vec![0.5, -0.5]);
    }

    #[test]
    fn missing_entry_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &sample_params()[..1], "x = 1\n").unwrap();
        let data = read_checkpoint::<f32>(&path).unwrap();
        let err = load_into(&data, &sample_params()).unwrap_err();
        assert!(err.to_string().contains("a.bias"), "{err}");
    }

    #[test]
    fn shape_mismatch_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &sample_params(), "x = 1\n").unwrap();
        let data = read_checkpoint::<f32>(&path).unwrap();
        let other = vec![
            Parameter::new("a.weight", Tensor::<f32>::zeros(&[4])),
            Parameter::new("a.bias", Tensor::<f32>::zeros(&[2])),
        ];
        let err = load_into(&data, &other).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("a.weight") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn surplus_entry_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &sample_params(), "x = 1\n").unwrap();
        let data = read_checkpoint::<f32>(&path).unwrap();
        let err = load_into(&data, &sample_params()[..1]).unwrap_err();
        assert!(err.to_string().contains("a.bias"), "{err}");
    }

    #[test]
    fn duplicate_names_rejected_at_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let dup = vec![
            Parameter::new("w", Tensor::<f32>::zeros(&[1])),
            Parameter::new("w", Tensor::<f32>::zeros(&[1])),
        ];
        save_checkpoint(&path, &dup, "").unwrap();
        assert!(read_checkpoint::<f32>(&path).is_err());
    }

    #[test]
    fn truncation_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &sample_params(), "k = v\n").unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = dir.path().join("cut.ckpt");
        std::fs::write(&cut, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_checkpoint::<f32>(&cut), Err(Error::Format { .. })));
    }
}

//! Checkpoint container for a parameter store.
//!
//! Byte layout, little-endian throughout:
//!
//! ```text
//! magic        8 bytes   "CPLCKPT1"
//! config_hash 32 bytes   caller-supplied hash of the effective config
//! step         8 bytes   u64 optimizer step counter
//! count        4 bytes   u32 tensor count
//! per tensor:
//!   name_len   4 bytes   u32, then name bytes (UTF-8)
//!   rank       4 bytes   u32, then rank × u32 dimensions
//!   values     n × 8 bytes f64
//!   adam_m     n × 8 bytes f64
//!   adam_v     n × 8 bytes f64
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{CplError, Result};

use super::{ParameterStore, Tensor};

const MAGIC: &[u8; 8] = b"CPLCKPT1";

pub fn save_checkpoint(path: &Path, store: &ParameterStore, config_hash: &[u8; 32]) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_all(config_hash)?;
    w.write_all(&store.step_count().to_le_bytes())?;
    let count = store.iter_tensors().count() as u32;
    w.write_all(&count.to_le_bytes())?;
    for (name, tensor) in store.iter_tensors() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.shape.len() as u32).to_le_bytes())?;
        for &d in &tensor.shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let (m, v) = store.opt_state(name);
        for series in [tensor.data.as_slice(), m, v] {
            for &x in series {
                w.write_all(&x.to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Load a checkpoint; errors if the stored config hash differs from
/// `expected_hash` when one is supplied.
pub fn load_checkpoint(path: &Path, expected_hash: Option<&[u8; 32]>) -> Result<ParameterStore> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CplError::Checkpoint(format!(
            "bad magic in {}",
            path.display()
        )));
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    if let Some(expected) = expected_hash {
        if &hash != expected {
            return Err(CplError::Checkpoint(
                "config hash mismatch: checkpoint was written under a different config".to_string(),
            ));
        }
    }
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let step = u64::from_le_bytes(u64buf);
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf);

    let mut store = ParameterStore::new();
    for _ in 0..count {
        r.read_exact(&mut u32buf)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|e| CplError::Checkpoint(format!("bad tensor name: {e}")))?;
        r.read_exact(&mut u32buf)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut u32buf)?;
            shape.push(u32::from_le_bytes(u32buf) as usize);
        }
        let n: usize = shape.iter().product();
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(count);
            for _ in 0..count {
                r.read_exact(&mut u64buf)?;
                out.push(f64::from_le_bytes(u64buf));
            }
            Ok(out)
        };
        let data = read_f64s(n)?;
        let m = read_f64s(n)?;
        let v = read_f64s(n)?;
        store.restore(&name, Tensor { shape, data }, m, v);
    }
    store.set_step(step);
    Ok(store)
}

/// Stored config hash of a checkpoint file, without loading the tensors.
pub fn peek_config_hash(path: &Path) -> Result<[u8; 32]> {
    let file = std::fs::File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CplError::Checkpoint(format!(
            "bad magic in {}",
            path.display()
        )));
    }
    let mut hash = [0u8; 32];
    r.read_exact(&mut hash)?;
    Ok(hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn round_trip_is_byte_identical() {
        let mut rng = Rng::seed_from_u64(11);
        let mut store = ParameterStore::new();
        store.add_uniform("embed", &[5, 4], &mut rng);
        store.add_uniform("w", &[4, 4], &mut rng);
        store.accumulate_grad("w", 0, &[1.0]);
        store.adam_update(0.01, (0.9, 0.999), 1e-8).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        let hash = [7u8; 32];
        save_checkpoint(&p1, &store, &hash).unwrap();
        let loaded = load_checkpoint(&p1, Some(&hash)).unwrap();
        assert_eq!(loaded.step_count(), store.step_count());
        save_checkpoint(&p2, &loaded, &hash).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn hash_mismatch_rejected() {
        let mut store = ParameterStore::new();
        store.add_zeros("w", &[2]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&path, &store, &[1u8; 32]).unwrap();
        assert!(load_checkpoint(&path, Some(&[2u8; 32])).is_err());
        assert!(load_checkpoint(&path, None).is_ok());
        assert_eq!(peek_config_hash(&path).unwrap(), [1u8; 32]);
    }
}

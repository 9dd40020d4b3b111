//! Versioned binary checkpoint of all named parameters with shapes.

use crate::diffmath::{NdArray, ParamStore, Real};
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"A2JC";
const VERSION: u32 = 1;

pub fn save_checkpoint<R: Real>(store: &ParamStore<R>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for (name, param) in store.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(param.value.ndim() as u32).to_le_bytes())?;
        for &d in param.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in param.value.data() {
            w.write_all(&v.as_f64().to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Load values into an already-built store; every name and shape must match.
pub fn load_checkpoint<R: Real>(store: &mut ParamStore<R>, path: impl AsRef<Path>) -> Result<()> {
    let mut r = BufReader::new(File::open(&path)?);
    let mut head = [0u8; 4];
    r.read_exact(&mut head)
        .map_err(|_| Error::Checkpoint("missing header".into()))?;
    if &head != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    if count != store.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} params, model has {}",
            count,
            store.len()
        )));
    }
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("bad name".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|_| Error::Checkpoint("truncated shape".into()))?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)
                .map_err(|_| Error::Checkpoint(format!("truncated data for {name}")))?;
            data.push(R::from_f64(f64::from_le_bytes(b)));
        }
        let id = store
            .lookup(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if store.value(id).shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {name}: {:?} vs {:?}",
                store.value(id).shape(),
                shape
            )));
        }
        *store.value_mut(id) = NdArray::from_vec(&shape, data)?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated header".into()))?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let mut store = ParamStore::<f32>::new();
        store
            .register("a.w", NdArray::from_fn(&[2, 3], |i| i as f32 * 0.5 - 1.0))
            .unwrap();
        store
            .register("a.b", NdArray::from_fn(&[3], |i| (i as f32).sin()))
            .unwrap();
        let path = std::env::temp_dir().join("a2j_ckpt_test.ckpt");
        save_checkpoint(&store, &path).unwrap();

        let mut store2 = ParamStore::<f32>::new();
        let w = store2.register("a.w", NdArray::zeros(&[2, 3])).unwrap();
        let b = store2.register("a.b", NdArray::zeros(&[3])).unwrap();
        load_checkpoint(&mut store2, &path).unwrap();
        assert_eq!(store2.value(w).data(), store.value(store.lookup("a.w").unwrap()).data());
        assert_eq!(store2.value(b).data(), store.value(store.lookup("a.b").unwrap()).data());
        std::fs::remove_file(path).ok();
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut store = ParamStore::<f64>::new();
        store.register("w", NdArray::zeros(&[4])).unwrap();
        let path = std::env::temp_dir().join("a2j_ckpt_shape.ckpt");
        save_checkpoint(&store, &path).unwrap();
        let mut other = ParamStore::<f64>::new();
        other.register("w", NdArray::zeros(&[5])).unwrap();
        assert!(load_checkpoint(&mut other, &path).is_err());
        std::fs::remove_file(path).ok();
    }
}

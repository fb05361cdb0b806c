//! Binary parameter snapshots.
//!
//! Layout (little-endian): magic `WGCK`, format version `u32`, record count
//! `u32`, then per record: name length `u32`, UTF-8 name, rank `u32`, each
//! dimension `u32`, and the values as `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

const MAGIC: &[u8; 4] = b"WGCK";
const VERSION: u32 = 1;

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_checkpoint<T: Scalar>(store: &ParamStore<T>, w: &mut impl Write) -> Result<()> {
    w.write_all(MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, store.len() as u32)?;
    for (_, p) in store.iter() {
        put_u32(w, p.name.len() as u32)?;
        w.write_all(p.name.as_bytes())?;
        put_u32(w, p.value.shape().len() as u32)?;
        for &d in p.value.shape() {
            put_u32(w, d as u32)?;
        }
        for &v in p.value.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<T: Scalar>(r: &mut impl Read) -> Result<ParamStore<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(NnError::Checkpoint("bad magic bytes".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = get_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = get_u32(r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| NnError::Checkpoint("parameter name is not UTF-8".into()))?;
        let rank = get_u32(r)? as usize;
        let shape = (0..rank)
            .map(|_| get_u32(r).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(numel(&shape));
        let mut b = [0u8; 4];
        for _ in 0..numel(&shape) {
            r.read_exact(&mut b)?;
            data.push(T::cast_f64(f32::from_le_bytes(b) as f64));
        }
        let value = Tensor::new(shape, data)
            .map_err(|e| NnError::Checkpoint(format!("parameter {name}: {e}")))?;
        store.add(name, value);
    }
    Ok(store)
}

pub fn save_checkpoint<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(store, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ParamStore<T>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

/// Copies values from `src` into `dst`, requiring identical names, order and shapes.
pub fn restore_into<T: Scalar>(dst: &mut ParamStore<T>, src: &ParamStore<T>) -> Result<()> {
    if dst.len() != src.len() {
        return Err(NnError::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            src.len(),
            dst.len()
        )));
    }
    let pairs: Vec<_> = dst.ids().zip(src.ids()).collect();
    for (d, s) in pairs {
        let (dp, sp) = (dst.get(d), src.get(s));
        if dp.name != sp.name || dp.value.shape() != sp.value.shape() {
            return Err(NnError::Checkpoint(format!(
                "parameter mismatch: model {} {:?} vs checkpoint {} {:?}",
                dp.name,
                dp.value.shape(),
                sp.name,
                sp.value.shape()
            )));
        }
        let values = sp.value.data().to_vec();
        dst.set_values(d, &values)?;
    }
    Ok(())
}

//! Binary parameter files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "SACLCKPT"
//! version u32      1
//! meta    u32 length + UTF-8 bytes (free-form, usually the JSON config)
//! count   u32
//! entry*  u32 name length, name bytes, u8 kind (0 trainable, 1 buffer),
//!         u8 dtype (0 f32, 1 f64), u32 rank, u64 extents[rank],
//!         values[numel] in dtype
//! ```

use std::io::{Read, Write};

use sacl_tensor::{DType, Scalar, Tensor};

use crate::error::{CoreError, Result};
use crate::params::{ParamKind, ParamStore};

pub const MAGIC: &[u8; 8] = b"SACLCKPT";
pub const VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> CoreError {
    CoreError::Checkpoint(msg.into())
}

pub fn write_store<T: Scalar, W: Write>(w: &mut W, store: &ParamStore<T>, meta: &str) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(meta.as_bytes())?;
    w.write_all(&(store.len() as u32).to_le_bytes())?;
    for e in store.entries() {
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        w.write_all(&[match e.kind {
            ParamKind::Trainable => 0,
            ParamKind::Buffer => 1,
        }])?;
        w.write_all(&[match T::DTYPE {
            DType::F32 => 0,
            DType::F64 => 1,
        }])?;
        w.write_all(&(e.value.rank() as u32).to_le_bytes())?;
        for &d in e.value.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(e.value.len() * 8);
        for &v in e.value.data() {
            match T::DTYPE {
                DType::F32 => buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes()),
                DType::F64 => buf.extend_from_slice(&v.as_f64().to_le_bytes()),
            }
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_n<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated file: {e}")))?;
    Ok(b)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_n(r)?))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut b = vec![0u8; len];
    r.read_exact(&mut b).map_err(|e| bad(format!("truncated file: {e}")))?;
    String::from_utf8(b).map_err(|_| bad("non UTF-8 text"))
}

/// Reads a store, converting stored values to `T` if needed.
pub fn read_store<T: Scalar, R: Read>(r: &mut R) -> Result<(ParamStore<T>, String)> {
    if &read_n::<8, _>(r)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let meta_len = read_u32(r)? as usize;
    let meta = read_string(r, meta_len)?;
    let count = read_u32(r)?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(r)? as usize;
        let name = read_string(r, name_len)?;
        let [kind, dtype] = read_n::<2, _>(r)?;
        let kind = match kind {
            0 => ParamKind::Trainable,
            1 => ParamKind::Buffer,
            k => return Err(bad(format!("`{name}`: unknown kind {k}"))),
        };
        let rank = read_u32(r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(read_n(r)?) as usize);
        }
        let n: usize = shape.iter().product();
        let data: Vec<T> = match dtype {
            0 => (0..n)
                .map(|_| Ok(T::of(f32::from_le_bytes(read_n(r)?) as f64)))
                .collect::<Result<_>>()?,
            1 => (0..n)
                .map(|_| Ok(T::of(f64::from_le_bytes(read_n(r)?))))
                .collect::<Result<_>>()?,
            d => return Err(bad(format!("`{name}`: unknown dtype {d}"))),
        };
        let t = Tensor::new(shape, data).map_err(|e| bad(format!("`{name}`: {e}")))?;
        store.insert(&name, kind, t);
    }
    Ok((store, meta))
}

/// Copies values from `loaded` into `target`, requiring identical names and
/// shapes.
pub fn restore_into<T: Scalar>(target: &mut ParamStore<T>, loaded: &ParamStore<T>) -> Result<()> {
    if target.len() != loaded.len() {
        return Err(bad(format!("{} stored tensors, model has {}", loaded.len(), target.len())));
    }
    for e in target.entries_mut() {
        let src = loaded.get(&e.name).map_err(|_| bad(format!("missing `{}`", e.name)))?;
        if src.shape() != e.value.shape() {
            return Err(bad(format!(
                "`{}`: stored shape {:?}, model expects {:?}",
                e.name,
                src.shape(),
                e.value.shape()
            )));
        }
        e.value = src.clone();
    }
    Ok(())
}

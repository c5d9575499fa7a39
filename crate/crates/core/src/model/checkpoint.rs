//! Versioned binary container of named shaped arrays.
//!
//! Layout (all integers little-endian): magic `S2TN`, format version u32,
//! tensor count u32, then an index of (name_len u16, name utf8, ndim u8,
//! dims u32...) records, then every tensor's f64 payload in index order.

use std::io::{Read, Write};
use std::path::Path;

use super::S2TNetParams;
use crate::numerics::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"S2TN";
const VERSION: u32 = 1;

pub fn save(path: &Path, named: &[(String, &Tensor)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, tensor) in named {
        let bytes = name.as_bytes();
        if bytes.len() > u16::MAX as usize {
            return Err(Error::Checkpoint(format!("name too long: {name}")));
        }
        buf.extend_from_slice(&(bytes.len() as u16).to_le_bytes());
        buf.extend_from_slice(bytes);
        buf.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (_, tensor) in named {
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    // write-then-rename keeps partially written checkpoints invisible
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(Error::Checkpoint(format!(
                "{}: truncated at byte {}",
                path.display(),
                *pos
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };

    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;

    let mut index: Vec<(String, Vec<usize>)> = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{}: invalid name", path.display())))?;
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
        }
        index.push((name, dims));
    }

    let mut out = Vec::with_capacity(count);
    for (name, dims) in index {
        let numel: usize = dims.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        out.push((name, Tensor::new(dims, data).map_err(crate::Error::from)?));
    }
    Ok(out)
}

/// Saves every model parameter.
pub fn save_params(path: &Path, params: &S2TNetParams) -> Result<()> {
    save(path, &params.named_tensors())
}

/// Loads a checkpoint into an already-initialized parameter set, insisting
/// that names and shapes match the configured architecture exactly.
pub fn load_params(path: &Path, params: &mut S2TNetParams) -> Result<()> {
    let loaded = load(path)?;
    let mut expected = params.named_tensors_mut();
    if loaded.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{}: holds {} tensors but the configured model has {}; \
             check the model flags against the checkpoint's config",
            path.display(),
            loaded.len(),
            expected.len()
        )));
    }
    for ((lname, ltensor), (ename, etensor)) in loaded.into_iter().zip(expected.iter_mut()) {
        if &lname != ename {
            return Err(Error::Checkpoint(format!(
                "{}: parameter order mismatch: found {lname:?}, expected {ename:?}",
                path.display()
            )));
        }
        if ltensor.shape() != etensor.shape() {
            return Err(Error::Checkpoint(format!(
                "{}: shape mismatch for {lname}: checkpoint {:?} vs configured {:?}",
                path.display(),
                ltensor.shape(),
                etensor.shape()
            )));
        }
        let grad = etensor.requires_grad;
        **etensor = ltensor;
        etensor.requires_grad = grad;
    }
    Ok(())
}

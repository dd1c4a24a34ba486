//! Binary dataset file: `"CL4D"`, version `u32`, `F: u32`, `N: u64`, then
//! `N` records of `F` `u32` indices and one `u8` label. Little-endian.

use std::io::{Read, Write};

use super::{DataError, EncodedDataset};

pub const DATASET_MAGIC: &[u8; 4] = b"CL4D";
pub const DATASET_VERSION: u32 = 1;

pub fn write_dataset<W: Write>(mut w: W, ds: &EncodedDataset) -> Result<(), DataError> {
    w.write_all(DATASET_MAGIC)?;
    w.write_all(&DATASET_VERSION.to_le_bytes())?;
    w.write_all(&(ds.num_fields() as u32).to_le_bytes())?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    let mut buf = Vec::with_capacity(ds.num_fields() * 4 + 1);
    for i in 0..ds.len() {
        buf.clear();
        for &idx in ds.instance(i) {
            buf.extend_from_slice(&idx.to_le_bytes());
        }
        buf.push(ds.label(i));
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, DataError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<EncodedDataset, DataError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != DATASET_MAGIC {
        return Err(DataError::Invalid("not a CL4D dataset file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != DATASET_VERSION {
        return Err(DataError::Invalid(format!("unsupported dataset version {version}")));
    }
    let f = read_u32(&mut r)? as usize;
    let mut nb = [0u8; 8];
    r.read_exact(&mut nb)?;
    let n = u64::from_le_bytes(nb) as usize;
    let record = f * 4 + 1;
    let mut raw = vec![0u8; n * record];
    r.read_exact(&mut raw)?;
    let mut indices = Vec::with_capacity(n * f);
    let mut labels = Vec::with_capacity(n);
    for rec in raw.chunks_exact(record) {
        for c in rec[..f * 4].chunks_exact(4) {
            indices.push(u32::from_le_bytes([c[0], c[1], c[2], c[3]]));
        }
        labels.push(rec[f * 4]);
    }
    EncodedDataset::new(f, indices, labels)
}

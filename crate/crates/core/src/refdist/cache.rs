//! Binary cache of reference samples.
//!
//! Layout (all little-endian):
//!
//! | field       | type        |
//! |-------------|-------------|
//! | magic       | `b"SZUF"`   |
//! | version     | `u32` (= 1) |
//! | count       | `u64`       |
//! | samples     | `count × f64`, sorted `√area` draws |
//! | grid_size   | `u64`       |
//! | bandwidth   | `f64`       |
//! | has_shape   | `u8` (0/1)  |
//! | shape_key   | `[u8; 32]`, SHA-256 of the polyhedron |
//!
//! The KDE is not stored; loading refits it from the samples with the stored
//! grid size and bandwidth, which reproduces it bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{ReferenceDistribution, ReferenceSample};
use crate::error::{Error, Result};
use crate::geometry::ShapeKey;

pub const CACHE_MAGIC: &[u8; 4] = b"SZUF";
pub const CACHE_VERSION: u32 = 1;

pub fn save_reference(path: impl AsRef<Path>, r: &ReferenceDistribution) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    let xs = r.sqrt_samples();
    w.write_all(&(xs.len() as u64).to_le_bytes())?;
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    w.write_all(&(r.grid_size() as u64).to_le_bytes())?;
    w.write_all(&r.bandwidth().to_le_bytes())?;
    match r.shape_key() {
        Some(k) => {
            w.write_all(&[1])?;
            w.write_all(&k.0)?;
        }
        None => {
            w.write_all(&[0])?;
            w.write_all(&[0u8; 32])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_reference(path: impl AsRef<Path>) -> Result<ReferenceDistribution> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic, "magic")?;
    if &magic != CACHE_MAGIC {
        return Err(Error::CorruptCache("bad magic".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r, "version")?);
    if version != CACHE_VERSION {
        return Err(Error::CacheVersion {
            found: version,
            expected: CACHE_VERSION,
        });
    }
    let count = u64::from_le_bytes(read_array(&mut r, "count")?);
    let count = usize::try_from(count).map_err(|_| Error::CorruptCache("count overflow".into()))?;
    let mut payload = vec![0u8; count.checked_mul(8).ok_or_else(|| Error::CorruptCache("count overflow".into()))?];
    read_exact(&mut r, &mut payload, "samples")?;
    let xs: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let grid_size = u64::from_le_bytes(read_array(&mut r, "grid size")?) as usize;
    let bandwidth = f64::from_le_bytes(read_array(&mut r, "bandwidth")?);
    let [has_shape] = read_array::<1>(&mut r, "shape flag")?;
    let key: [u8; 32] = read_array(&mut r, "shape key")?;
    let shape_key = match has_shape {
        0 => None,
        1 => Some(ShapeKey(key)),
        _ => return Err(Error::CorruptCache("bad shape flag".into())),
    };
    if xs.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::CorruptCache("samples are not sorted".into()));
    }
    let sample = ReferenceSample::from_sqrt_areas(xs, shape_key)?;
    sample.fit(grid_size, Some(bandwidth))
}

/// Loads a cache and checks it was built for the shape with key `expected`.
pub fn load_reference_for(path: impl AsRef<Path>, expected: ShapeKey) -> Result<ReferenceDistribution> {
    let r = load_reference(path)?;
    if r.shape_key() != Some(expected) {
        return Err(Error::ShapeMismatch);
    }
    Ok(r)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::CorruptCache(format!("truncated at {what}")),
        _ => Error::Io(e),
    })
}

fn read_array<const N: usize>(r: &mut impl Read, what: &str) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf, what)?;
    Ok(buf)
}

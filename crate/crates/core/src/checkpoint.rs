//! Binary parameter arrays: an 8-byte little-endian `u64` element count
//! followed by that many little-endian IEEE-754 `f64` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::ParamVector;

pub fn encode(values: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * values.len());
    out.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<f64>> {
    if bytes.len() < 8 {
        return Err(Error::invalid("array file shorter than its 8-byte header"));
    }
    let (head, body) = bytes.split_at(8);
    let n = u64::from_le_bytes(head.try_into().expect("8-byte header"));
    if body.len() as u64 != n.saturating_mul(8) {
        return Err(Error::invalid(format!(
            "array header says {n} values but payload holds {} bytes",
            body.len()
        )));
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_array(path: &Path, values: &[f64]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(values))?;
    f.flush()?;
    Ok(())
}

pub fn read_array(path: &Path) -> Result<Vec<f64>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

pub fn write_params(path: &Path, theta: &ParamVector) -> Result<()> {
    write_array(path, theta.as_slice())
}

pub fn read_params(path: &Path) -> Result<ParamVector> {
    ParamVector::new(read_array(path)?)
}

//! `MMT3` binary tensor files.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "MMT3"            4 bytes magic
//! kind              1 byte, 0 = real64, 1 = complex128
//! d1, d2, d3        3 x u64
//! payload           d1*d2*d3 f64 (real) or interleaved (re, im) f64 pairs,
//!                   first index fastest
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::{ComplexTensor3, Dims, RealTensor3, C64};
use crate::{Error, Result};

pub const TENSOR_MAGIC: &[u8; 4] = b"MMT3";
const KIND_REAL: u8 = 0;
const KIND_COMPLEX: u8 = 1;

/// Either kind of tensor as found in a file.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    Real(RealTensor3),
    Complex(ComplexTensor3),
}

fn write_header<W: Write>(w: &mut W, kind: u8, dims: Dims) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[kind])?;
    for d in dims {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_real<W: Write>(w: &mut W, t: &RealTensor3) -> Result<()> {
    write_header(w, KIND_REAL, t.dims())?;
    for v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_complex<W: Write>(w: &mut W, t: &ComplexTensor3) -> Result<()> {
    write_header(w, KIND_COMPLEX, t.dims())?;
    for z in t.data() {
        w.write_all(&z.re.to_le_bytes())?;
        w.write_all(&z.im.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn read_tensor<R: Read>(r: &mut R) -> Result<StoredTensor> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::Format(format!("truncated header: {e}")))?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}")));
    }
    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = usize::try_from(read_u64(r)?).map_err(|_| Error::Format("dim overflows usize".into()))?;
    }
    let len = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Format(format!("invalid dims {dims:?}")))?;
    let truncated = |e: Error| match e {
        Error::Io(io) => Error::Format(format!("truncated payload: {io}")),
        other => other,
    };
    match kind[0] {
        KIND_REAL => {
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                data.push(read_f64(r).map_err(truncated)?);
            }
            Ok(StoredTensor::Real(
                RealTensor3::from_vec(dims, data).map_err(|e| Error::Format(e.to_string()))?,
            ))
        }
        KIND_COMPLEX => {
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let re = read_f64(r).map_err(truncated)?;
                let im = read_f64(r).map_err(truncated)?;
                data.push(C64::new(re, im));
            }
            Ok(StoredTensor::Complex(
                ComplexTensor3::from_vec(dims, data).map_err(|e| Error::Format(e.to_string()))?,
            ))
        }
        other => Err(Error::Format(format!("unknown element kind {other}"))),
    }
}

pub fn save_complex(path: &Path, t: &ComplexTensor3) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_complex(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load_complex(path: &Path) -> Result<ComplexTensor3> {
    let mut r = BufReader::new(File::open(path)?);
    match read_tensor(&mut r)? {
        StoredTensor::Complex(t) => Ok(t),
        StoredTensor::Real(_) => Err(Error::Format(format!(
            "{} holds a real tensor, expected complex",
            path.display()
        ))),
    }
}

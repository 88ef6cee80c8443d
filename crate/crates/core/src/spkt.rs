//! SPKT: a minimal little-endian container for 2-d tensors.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "SPKT" (53 50 4B 54)
//! 4       4           u32 version = 1
//! 8       1           u8 dtype (0 = f32, 1 = i32)
//! 9       1           u8 ndim (= 2)
//! 10      2           zero padding
//! 12      8 * ndim    u64 dims, outermost first
//! ...     4 * prod    row-major payload
//! ```
//!
//! Nothing follows the payload. Real tensors are rounded to `f32` on write.

use std::path::Path;

use crate::error::{Error, Result, SpktError};
use crate::tensor::{IntMatrix, Tensor2D};

pub const MAGIC: [u8; 4] = *b"SPKT";
pub const VERSION: u32 = 1;
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_I32: u8 = 1;
const FIXED_HEADER: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub enum SpktTensor {
    Real(Tensor2D),
    Int(IntMatrix),
}

impl SpktTensor {
    fn dtype_name(&self) -> &'static str {
        match self {
            SpktTensor::Real(_) => "real32",
            SpktTensor::Int(_) => "int32",
        }
    }
}

fn header(dtype: u8, rows: usize, cols: usize, payload_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(FIXED_HEADER + 16 + payload_len);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype);
    out.push(2);
    out.extend_from_slice(&[0, 0]);
    out.extend_from_slice(&(rows as u64).to_le_bytes());
    out.extend_from_slice(&(cols as u64).to_le_bytes());
    out
}

/// Serializes a real tensor. Fails if a value does not fit in `f32`.
pub fn encode_real(t: &Tensor2D) -> Result<Vec<u8>> {
    let mut out = header(DTYPE_F32, t.rows(), t.cols(), t.len() * 4);
    for (i, &v) in t.data().iter().enumerate() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::invalid(format!("value {v} at index {i} overflows f32")));
        }
        out.extend_from_slice(&f.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_int(m: &IntMatrix) -> Vec<u8> {
    let mut out = header(DTYPE_I32, m.rows(), m.cols(), m.data().len() * 4);
    for &v in m.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn take<'a>(bytes: &'a [u8], at: usize, n: usize, section: &'static str) -> std::result::Result<&'a [u8], SpktError> {
    bytes.get(at..at + n).ok_or(SpktError::Truncated {
        section,
        expected: n,
        found: bytes.len().saturating_sub(at),
    })
}

pub fn decode(bytes: &[u8]) -> std::result::Result<SpktTensor, SpktError> {
    let magic = take(bytes, 0, 4, "magic")?;
    if magic != MAGIC {
        return Err(SpktError::BadMagic(magic.try_into().unwrap()));
    }
    let fixed = take(bytes, 0, FIXED_HEADER, "header")?;
    let version = u32::from_le_bytes(fixed[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(SpktError::UnsupportedVersion(version));
    }
    let dtype = fixed[8];
    if dtype != DTYPE_F32 && dtype != DTYPE_I32 {
        return Err(SpktError::UnsupportedDtype(dtype));
    }
    let ndim = fixed[9];
    if ndim != 2 {
        return Err(SpktError::UnsupportedNdim(ndim));
    }
    if fixed[10..12] != [0, 0] {
        return Err(SpktError::BadPadding);
    }
    let dims_raw = take(bytes, FIXED_HEADER, 16, "dims")?;
    let dims = [
        u64::from_le_bytes(dims_raw[..8].try_into().unwrap()),
        u64::from_le_bytes(dims_raw[8..].try_into().unwrap()),
    ];
    let overflow = || SpktError::DimensionOverflow(dims.to_vec());
    let rows = usize::try_from(dims[0]).map_err(|_| overflow())?;
    let cols = usize::try_from(dims[1]).map_err(|_| overflow())?;
    let count = rows.checked_mul(cols).ok_or_else(overflow)?;
    let payload_len = count.checked_mul(4).ok_or_else(overflow)?;
    let start = FIXED_HEADER + 16;
    let payload = take(bytes, start, payload_len, "payload")?;
    let trailing = bytes.len() - start - payload_len;
    if trailing != 0 {
        return Err(SpktError::TrailingBytes(trailing));
    }
    let words = payload.chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).unwrap());
    if dtype == DTYPE_F32 {
        let data: Vec<f64> = words.map(|w| f32::from_le_bytes(w) as f64).collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(SpktError::NonFinite(i));
        }
        Ok(SpktTensor::Real(Tensor2D::new(rows, cols, data).expect("validated above")))
    } else {
        let data: Vec<i32> = words.map(i32::from_le_bytes).collect();
        Ok(SpktTensor::Int(IntMatrix::new(rows, cols, data).expect("validated above")))
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| Error::Io { path: path.to_owned(), source })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|source| Error::Io { path: path.to_owned(), source })
}

pub fn read_any(path: impl AsRef<Path>) -> Result<SpktTensor> {
    let path = path.as_ref();
    decode(&read_bytes(path)?).map_err(|source| Error::Spkt { path: path.to_owned(), source })
}

pub fn tensor_read(path: impl AsRef<Path>) -> Result<Tensor2D> {
    let path = path.as_ref();
    match read_any(path)? {
        SpktTensor::Real(t) => Ok(t),
        other => Err(Error::Spkt {
            path: path.to_owned(),
            source: SpktError::DtypeMismatch { expected: "real32", found: other.dtype_name() },
        }),
    }
}

pub fn tensor_write(t: &Tensor2D, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_real(t)?)
}

pub fn int_read(path: impl AsRef<Path>) -> Result<IntMatrix> {
    let path = path.as_ref();
    match read_any(path)? {
        SpktTensor::Int(m) => Ok(m),
        other => Err(Error::Spkt {
            path: path.to_owned(),
            source: SpktError::DtypeMismatch { expected: "int32", found: other.dtype_name() },
        }),
    }
}

pub fn int_write(m: &IntMatrix, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_int(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two_bytes() -> Vec<u8> {
        let mut b = b"SPKT".to_vec();
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&[0, 2, 0, 0]);
        b.extend_from_slice(&2u64.to_le_bytes());
        b.extend_from_slice(&2u64.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b
    }

    #[test]
    fn reads_handwritten_file() {
        let SpktTensor::Real(t) = decode(&two_by_two_bytes()).unwrap() else { panic!() };
        assert_eq!(t, Tensor2D::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        assert_eq!(encode_real(&t).unwrap(), two_by_two_bytes());
    }

    #[test]
    fn distinct_errors() {
        let good = two_by_two_bytes();

        let mut b = good.clone();
        b[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode(&b), Err(SpktError::BadMagic(m)) if &m == b"XXXX"));

        let mut b = good.clone();
        b[4] = 2;
        assert!(matches!(decode(&b), Err(SpktError::UnsupportedVersion(2))));

        let mut b = good.clone();
        b[8] = 7;
        assert!(matches!(decode(&b), Err(SpktError::UnsupportedDtype(7))));

        let mut b = good.clone();
        b[9] = 3;
        assert!(matches!(decode(&b), Err(SpktError::UnsupportedNdim(3))));

        let mut b = good.clone();
        b[11] = 1;
        assert!(matches!(decode(&b), Err(SpktError::BadPadding)));

        let b = &good[..good.len() - 3];
        assert!(matches!(decode(b), Err(SpktError::Truncated { section: "payload", expected: 16, found: 13 })));

        assert!(matches!(decode(&good[..6]), Err(SpktError::Truncated { section: "header", .. })));

        let mut b = good.clone();
        b[12..20].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(matches!(decode(&b), Err(SpktError::DimensionOverflow(_))));

        let mut b = good.clone();
        b.push(0);
        assert!(matches!(decode(&b), Err(SpktError::TrailingBytes(1))));

        let mut b = good;
        b[28..32].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&b), Err(SpktError::NonFinite(0))));
    }

    #[test]
    fn int_roundtrip() {
        let m = IntMatrix::new(2, 3, vec![0, -1, 7, i32::MAX, i32::MIN, 3]).unwrap();
        assert_eq!(decode(&encode_int(&m)).unwrap(), SpktTensor::Int(m));
    }

    #[test]
    fn f32_overflow_rejected() {
        let t = Tensor2D::new(1, 1, vec![1e300]).unwrap();
        assert!(encode_real(&t).is_err());
    }
}

//! `PCFB` tensor container.
//!
//! Layout (all integers little-endian):
//!
//! | offset | size      | field                                  |
//! |--------|-----------|----------------------------------------|
//! | 0      | 4         | magic `b"PCFB"`                        |
//! | 4      | 2         | version (`u16`, currently 1)           |
//! | 6      | 1         | dtype code (0 = `f32`, 1 = `u8`)       |
//! | 7      | 1         | ndim (2 or 3)                          |
//! | 8      | 4 * ndim  | dims (`u32` each)                      |
//! | ...    | payload   | row-major values                       |
//!
//! Masks are 2-D `H x W` `u8` tensors. Feature maps are 3-D `H x W x C`
//! `f32` tensors, channel-last, so one patch vector is contiguous.

use std::fs;
use std::path::Path;

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"PCFB";
pub const VERSION: u16 = 1;

const FIXED_HEADER: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum DType {
    F32 = 0,
    U8 = 1,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::U8),
            other => Err(Error::UnsupportedDtype(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn into_f32(self) -> Result<(Vec<usize>, Vec<f32>)> {
        match self.data {
            TensorData::F32(v) => Ok((self.dims, v)),
            TensorData::U8(_) => Err(Error::InvalidShape("expected an f32 tensor, found u8".into())),
        }
    }
}

/// Binary ground-truth mask; any nonzero pixel is anomalous.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Mask {
    pub fn zeros(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn is_anomalous(&self) -> bool {
        self.data.iter().any(|&v| v != 0)
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn anomalous_pixels(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

fn check_dims(dims: &[usize], len: usize) -> Result<()> {
    if !(2..=3).contains(&dims.len()) {
        return Err(Error::InvalidShape(format!(
            "ndim must be 2 or 3, got {}",
            dims.len()
        )));
    }
    if let Some(d) = dims.iter().find(|&&d| d > u32::MAX as usize) {
        return Err(Error::DimensionOverflow(format!(
            "dimension {d} does not fit in u32"
        )));
    }
    let count = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimensionOverflow(format!("element count of {dims:?} overflows")))?;
    if count != len {
        return Err(Error::InvalidShape(format!(
            "dims {dims:?} hold {count} values, got {len}"
        )));
    }
    Ok(())
}

pub fn encode_tensor(dims: &[usize], data: &TensorData) -> Result<Vec<u8>> {
    check_dims(dims, data.len())?;
    let dtype = data.dtype();
    let mut out = Vec::with_capacity(FIXED_HEADER + 4 * dims.len() + data.len() * dtype.size());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.push(dims.len() as u8);
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match data {
        TensorData::F32(values) => {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        TensorData::U8(values) => out.extend_from_slice(values),
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedHeader);
    }
    let found: [u8; 4] = bytes[..4].try_into().expect("length checked");
    if found != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found,
        });
    }
    if bytes.len() < FIXED_HEADER {
        return Err(Error::TruncatedHeader);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = DType::from_code(bytes[6])?;
    let ndim = bytes[7] as usize;
    if !(2..=3).contains(&ndim) {
        return Err(Error::InvalidShape(format!("ndim must be 2 or 3, got {ndim}")));
    }
    let header_len = FIXED_HEADER + 4 * ndim;
    if bytes.len() < header_len {
        return Err(Error::TruncatedHeader);
    }
    let dims: Vec<usize> = bytes[FIXED_HEADER..header_len]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().expect("chunk of 4")) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimensionOverflow(format!("payload size of {dims:?} overflows")))?;
    let payload = &bytes[header_len..];
    if payload.len() < expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::TrailingBytes(payload.len() - expected));
    }
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect(),
        ),
        DType::U8 => TensorData::U8(payload.to_vec()),
    };
    Ok(Tensor { dims, data })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes an `f32` tensor.
pub fn write_tensor(path: impl AsRef<Path>, dims: &[usize], values: &[f32]) -> Result<()> {
    let bytes = encode_tensor(dims, &TensorData::F32(values.to_vec()))?;
    write_bytes(path.as_ref(), &bytes)
}

/// Writes a 2-D `u8` mask tensor.
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let bytes = encode_tensor(&[mask.height, mask.width], &TensorData::U8(mask.data.clone()))?;
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes)
}

/// Reads an `f32` tensor and returns `(dims, values)`.
pub fn read_f32(path: impl AsRef<Path>) -> Result<(Vec<usize>, Vec<f32>)> {
    read_tensor(path)?.into_f32()
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let tensor = read_tensor(path)?;
    match (tensor.dims.as_slice(), tensor.data) {
        (&[height, width], TensorData::U8(data)) => Ok(Mask {
            height,
            width,
            data,
        }),
        (dims, data) => Err(Error::InvalidShape(format!(
            "mask must be a 2-D u8 tensor, found {:?} with dims {dims:?}",
            data.dtype()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_tensor_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zeros.pcfb");
        write_tensor(&path, &[2, 2], &[0.0; 4]).unwrap();
        let (dims, values) = read_f32(&path).unwrap();
        assert_eq!(dims, vec![2, 2]);
        assert_eq!(values, vec![0.0; 4]);
    }

    #[test]
    fn values_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.pcfb");
        write_tensor(&path, &[1, 1, 3], &[1.5, -2.0, 3.25]).unwrap();
        let (dims, values) = read_f32(&path).unwrap();
        assert_eq!(dims, vec![1, 1, 3]);
        assert_eq!(values, vec![1.5, -2.0, 3.25]);
    }

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode_tensor(&[1, 2], &TensorData::F32(vec![1.0, -0.0])).unwrap();
        assert_eq!(&bytes[..4], b"PCFB");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(bytes[6], 0);
        assert_eq!(bytes[7], 2);
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(&bytes[16..20], &1.0f32.to_le_bytes());
        assert_eq!(&bytes[20..24], &(-0.0f32).to_le_bytes());
        assert_eq!(bytes.len(), 24);
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = encode_tensor(&[2, 2], &TensorData::F32(vec![0.0; 4])).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_tensor(&bytes), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn short_payload_is_truncated() {
        let mut bytes = encode_tensor(&[2, 2], &TensorData::F32(vec![0.0; 4])).unwrap();
        bytes.pop();
        match decode_tensor(&bytes) {
            Err(Error::TruncatedPayload { expected, found }) => {
                assert_eq!(expected, 16);
                assert_eq!(found, 15);
            }
            other => panic!("expected truncated payload, got {other:?}"),
        }
    }

    #[test]
    fn version_dtype_and_ndim_are_validated() {
        let good = encode_tensor(&[2, 2], &TensorData::U8(vec![0; 4])).unwrap();

        let mut bad_version = good.clone();
        bad_version[4] = 7;
        assert!(matches!(
            decode_tensor(&bad_version),
            Err(Error::UnsupportedVersion(7))
        ));

        let mut bad_dtype = good.clone();
        bad_dtype[6] = 9;
        assert!(matches!(
            decode_tensor(&bad_dtype),
            Err(Error::UnsupportedDtype(9))
        ));

        let mut trailing = good.clone();
        trailing.push(0);
        assert!(matches!(decode_tensor(&trailing), Err(Error::TrailingBytes(1))));

        assert!(matches!(decode_tensor(&good[..6]), Err(Error::TruncatedHeader)));
        assert!(matches!(
            encode_tensor(&[4], &TensorData::U8(vec![0; 4])),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn oversized_dimension_is_rejected() {
        let dims = [u32::MAX as usize + 1, 0];
        assert!(matches!(
            encode_tensor(&dims, &TensorData::F32(vec![])),
            Err(Error::DimensionOverflow(_))
        ));
    }

    #[test]
    fn mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pcfb");
        let mask = Mask {
            height: 2,
            width: 3,
            data: vec![0, 0, 255, 0, 1, 0],
        };
        write_mask(&path, &mask).unwrap();
        let back = read_mask(&path).unwrap();
        assert_eq!(back, mask);
        assert!(back.is_anomalous());
        assert_eq!(back.anomalous_pixels(), 2);
        assert!(matches!(read_f32(&path), Err(Error::InvalidShape(_))));
    }
}

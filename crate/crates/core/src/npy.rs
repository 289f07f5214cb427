//! Minimal reader/writer for NumPy `.npy` v1.0 files (C-order, little-endian).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

/// Element storage of a decoded array.
#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    Float32(Vec<f32>),
    Float64(Vec<f64>),
    /// Any integer or boolean dtype, widened.
    Int(Vec<i64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values as `f64`, whatever the stored dtype.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            NpyData::Float32(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::Float64(v) => v.clone(),
            NpyData::Int(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dtype {
    F4,
    F8,
    I1,
    I2,
    I4,
    I8,
    U1,
    U2,
    U4,
    U8,
    Bool,
}

impl Dtype {
    fn parse(descr: &str) -> Result<Self> {
        let d = match descr {
            "<f4" => Dtype::F4,
            "<f8" => Dtype::F8,
            "|i1" | "<i1" => Dtype::I1,
            "<i2" => Dtype::I2,
            "<i4" => Dtype::I4,
            "<i8" => Dtype::I8,
            "|u1" | "<u1" => Dtype::U1,
            "<u2" => Dtype::U2,
            "<u4" => Dtype::U4,
            "<u8" => Dtype::U8,
            "|b1" => Dtype::Bool,
            other => return Err(Error::Format(format!("unsupported npy dtype {other:?}"))),
        };
        Ok(d)
    }

    fn size(self) -> usize {
        match self {
            Dtype::I1 | Dtype::U1 | Dtype::Bool => 1,
            Dtype::I2 | Dtype::U2 => 2,
            Dtype::F4 | Dtype::I4 | Dtype::U4 => 4,
            Dtype::F8 | Dtype::I8 | Dtype::U8 => 8,
        }
    }
}

/// Extracts the value text that follows `'key':` in a header dict.
fn header_field<'a>(header: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{key}':");
    let start = header
        .find(&pat)
        .ok_or_else(|| Error::Format(format!("npy header missing {key}")))?
        + pat.len();
    Ok(header[start..].trim_start())
}

fn parse_header(header: &str) -> Result<(Dtype, Vec<usize>)> {
    let descr = header_field(header, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| Error::Format("npy descr is not a string".into()))?;
    let dtype = Dtype::parse(descr)?;

    let fortran = header_field(header, "fortran_order")?;
    if fortran.starts_with("True") {
        return Err(Error::Format("fortran-order npy arrays are not supported".into()));
    } else if !fortran.starts_with("False") {
        return Err(Error::Format("npy fortran_order is not a boolean".into()));
    }

    let shape = header_field(header, "shape")?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| Error::Format("npy shape is not a tuple".into()))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad npy shape entry {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dtype, shape))
}

/// Decodes an in-memory `.npy` file.
pub fn parse_npy(bytes: &[u8]) -> Result<NpyArray> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Format("missing npy magic".into()));
    }
    let major = bytes[6];
    let (header_len, offset) = match major {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::Format("truncated npy header".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(Error::Format(format!("unsupported npy version {v}"))),
    };
    let body_start = offset + header_len;
    if bytes.len() < body_start {
        return Err(Error::Format("truncated npy header".into()));
    }
    let header = std::str::from_utf8(&bytes[offset..body_start])
        .map_err(|_| Error::Format("npy header is not utf-8".into()))?;
    let (dtype, shape) = parse_header(header)?;

    let count: usize = shape.iter().product();
    let body = &bytes[body_start..];
    if body.len() != count * dtype.size() {
        return Err(Error::Data(format!(
            "npy body holds {} bytes, shape {:?} needs {}",
            body.len(),
            shape,
            count * dtype.size()
        )));
    }

    let data = match dtype {
        Dtype::F4 => NpyData::Float32(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::F8 => NpyData::Float64(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::I1 => NpyData::Int(body.iter().map(|&b| b as i8 as i64).collect()),
        Dtype::U1 | Dtype::Bool => NpyData::Int(body.iter().map(|&b| b as i64).collect()),
        Dtype::I2 => NpyData::Int(
            body.chunks_exact(2)
                .map(|c| i16::from_le_bytes([c[0], c[1]]) as i64)
                .collect(),
        ),
        Dtype::U2 => NpyData::Int(
            body.chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]) as i64)
                .collect(),
        ),
        Dtype::I4 => NpyData::Int(
            body.chunks_exact(4)
                .map(|c| i32::from_le_bytes(c.try_into().unwrap()) as i64)
                .collect(),
        ),
        Dtype::U4 => NpyData::Int(
            body.chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as i64)
                .collect(),
        ),
        Dtype::I8 => NpyData::Int(
            body.chunks_exact(8)
                .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        Dtype::U8 => NpyData::Int(
            body.chunks_exact(8)
                .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as i64)
                .collect(),
        ),
    };
    Ok(NpyArray { shape, data })
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    parse_npy(&fs::read(path)?)
}

fn encode(descr: &str, shape: &[usize], body: Vec<u8>) -> Vec<u8> {
    let shape_txt = match shape {
        [one] => format!("({one},)"),
        dims => format!(
            "({})",
            dims.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
        ),
    };
    let mut header = format!("{{'descr': '{descr}', 'fortran_order': False, 'shape': {shape_txt}, }}");
    // magic(6) + version(2) + len(2) + header + '\n' aligned to 64 bytes
    let unpadded = 10 + header.len() + 1;
    header.extend(std::iter::repeat_n(' ', (64 - unpadded % 64) % 64));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + body.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend(body);
    out
}

fn check_len(shape: &[usize], len: usize) -> Result<()> {
    let expected: usize = shape.iter().product();
    if expected != len {
        return Err(Error::Shape(format!(
            "shape {shape:?} needs {expected} elements, got {len}"
        )));
    }
    Ok(())
}

pub fn encode_f32(shape: &[usize], values: &[f32]) -> Result<Vec<u8>> {
    check_len(shape, values.len())?;
    Ok(encode("<f4", shape, values.iter().flat_map(|v| v.to_le_bytes()).collect()))
}

pub fn encode_f64(shape: &[usize], values: &[f64]) -> Result<Vec<u8>> {
    check_len(shape, values.len())?;
    Ok(encode("<f8", shape, values.iter().flat_map(|v| v.to_le_bytes()).collect()))
}

pub fn encode_i32(shape: &[usize], values: &[i32]) -> Result<Vec<u8>> {
    check_len(shape, values.len())?;
    Ok(encode("<i4", shape, values.iter().flat_map(|v| v.to_le_bytes()).collect()))
}

pub fn write_f32(path: impl AsRef<Path>, shape: &[usize], values: &[f32]) -> Result<()> {
    fs::write(path, encode_f32(shape, values)?)?;
    Ok(())
}

pub fn write_f64(path: impl AsRef<Path>, shape: &[usize], values: &[f64]) -> Result<()> {
    fs::write(path, encode_f64(shape, values)?)?;
    Ok(())
}

pub fn write_i32(path: impl AsRef<Path>, shape: &[usize], values: &[i32]) -> Result<()> {
    fs::write(path, encode_i32(shape, values)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_is_64_byte_aligned() {
        let bytes = encode_f32(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
        assert_eq!((10 + header_len) % 64, 0);
        assert_eq!(bytes[10 + header_len - 1], b'\n');
    }

    #[test]
    fn decodes_numpy_written_header() {
        // Layout produced by numpy.save for np.array([[1, 0], [2, 2]], dtype='<i8').
        let header = "{'descr': '<i8', 'fortran_order': False, 'shape': (2, 2), }";
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&[1, 0]);
        let mut padded = header.to_string();
        while (10 + padded.len() + 1) % 64 != 0 {
            padded.push(' ');
        }
        padded.push('\n');
        bytes.extend_from_slice(&(padded.len() as u16).to_le_bytes());
        bytes.extend_from_slice(padded.as_bytes());
        for v in [1i64, 0, 2, 2] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let arr = parse_npy(&bytes).unwrap();
        assert_eq!(arr.shape, vec![2, 2]);
        assert_eq!(arr.data, NpyData::Int(vec![1, 0, 2, 2]));
    }

    #[test]
    fn one_dimensional_shape_uses_trailing_comma() {
        let bytes = encode_f64(&[3], &[1.0, 2.0, 3.0]).unwrap();
        let text = String::from_utf8_lossy(&bytes[10..]);
        assert!(text.contains("'shape': (3,)"));
        assert_eq!(parse_npy(&bytes).unwrap().shape, vec![3]);
    }

    #[test]
    fn rejects_bad_magic_and_fortran_order() {
        assert!(matches!(parse_npy(b"NOTNUMPY.."), Err(Error::Format(_))));
        let mut swapped = encode_f32(&[1], &[0.0]).unwrap();
        let pos = swapped.windows(5).position(|w| w == b"False").unwrap();
        swapped[pos..pos + 5].copy_from_slice(b"True ");
        assert!(matches!(parse_npy(&swapped), Err(Error::Format(_))));
    }

    #[test]
    fn body_size_mismatch_is_data_error() {
        let mut bytes = encode_f32(&[2], &[1.0, 2.0]).unwrap();
        bytes.truncate(bytes.len() - 2);
        assert!(matches!(parse_npy(&bytes), Err(Error::Data(_))));
    }
}

//! Minimal `.npy` (format version 1.0) reader and writer for C-ordered
//! little-endian arrays.

use crate::error::{Error, Result};

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    U8,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::U8 => "|u1",
        }
    }

    fn from_descr(s: &str) -> Option<Dtype> {
        match s {
            "<f4" => Some(Dtype::F32),
            "<f8" => Some(Dtype::F64),
            "|u1" | "<u1" => Some(Dtype::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray<'a> {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data: &'a [u8],
}

impl NpyArray<'_> {
    /// Values widened to `f64`, C order.
    pub fn to_f64(&self) -> Vec<f64> {
        match self.dtype {
            Dtype::F32 => self
                .data
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect(),
            Dtype::F64 => self
                .data
                .chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
                .collect(),
            Dtype::U8 => self.data.iter().map(|&b| b as f64).collect(),
        }
    }
}

fn unsupported(msg: impl Into<String>) -> Error {
    Error::UnsupportedDtypeOrShape(msg.into())
}

/// Extracts the text after `'key':` in the header dictionary.
fn field<'h>(header: &'h str, key: &str) -> Result<&'h str> {
    let pat = format!("'{key}':");
    let at = header
        .find(&pat)
        .ok_or_else(|| Error::Malformed(format!("npy header lacks {key}")))?;
    Ok(header[at + pat.len()..].trim_start())
}

fn parse_header(header: &str) -> Result<(Dtype, Vec<usize>)> {
    let descr = field(header, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| Error::Malformed("npy descr is not a string".into()))?;
    let dtype = Dtype::from_descr(descr).ok_or_else(|| unsupported(format!("dtype {descr}")))?;

    let fortran = field(header, "fortran_order")?;
    if fortran.starts_with("True") {
        return Err(unsupported("Fortran-ordered array"));
    }
    if !fortran.starts_with("False") {
        return Err(Error::Malformed("npy fortran_order is not a boolean".into()));
    }

    let shape = field(header, "shape")?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| Error::Malformed("npy shape is not a tuple".into()))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Malformed(format!("npy shape entry {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((dtype, shape))
}

pub fn parse(bytes: &[u8]) -> Result<NpyArray<'_>> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic("missing \\x93NUMPY prefix".into()));
    }
    let version = bytes
        .get(6..8)
        .ok_or_else(|| Error::Malformed("npy header truncated".into()))?;
    if version != [1, 0] {
        return Err(Error::BadMagic(format!(
            "format version {}.{} (only 1.0 is read)",
            version[0], version[1]
        )));
    }
    let len_bytes = bytes
        .get(8..10)
        .ok_or_else(|| Error::Malformed("npy header truncated".into()))?;
    let header_len = u16::from_le_bytes([len_bytes[0], len_bytes[1]]) as usize;
    let header = bytes
        .get(10..10 + header_len)
        .ok_or_else(|| Error::Malformed("npy header truncated".into()))?;
    let header = std::str::from_utf8(header).map_err(|_| Error::Malformed("npy header is not text".into()))?;
    let (dtype, shape) = parse_header(header)?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(dtype.size()))
        .ok_or_else(|| unsupported("array too large"))?;
    let data = &bytes[10 + header_len..];
    if data.len() != count {
        return Err(Error::Malformed(format!(
            "npy payload is {} bytes, shape {shape:?} needs {count}",
            data.len()
        )));
    }
    Ok(NpyArray { dtype, shape, data })
}

/// Serializes `data` (already little-endian) under a version 1.0 header.
pub fn encode(dtype: Dtype, shape: &[usize], data: &[u8]) -> Vec<u8> {
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    let shape_text = match dims.len() {
        1 => format!("({},)", dims[0]),
        _ => format!("({})", dims.join(", ")),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {shape_text}, }}",
        dtype.descr()
    );
    // pad so the payload starts on a 64-byte boundary; header ends in '\n'
    let unpadded = MAGIC.len() + 4 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');
    let mut out = Vec::with_capacity(10 + header.len() + data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(data);
    out
}

//! Versioned checkpoint container.
//!
//! ```text
//! rangeseg-checkpoint 1
//! dtype f64
//! meta <key> <value...>
//! tensor <name> <rank> <dim>...
//! end
//! <payload>
//! ```
//!
//! The payload is every tensor's values, in declaration order, as raw
//! little-endian scalars of the declared dtype. Names and meta keys contain
//! no whitespace; meta values run to the end of the line.

use std::io::Write;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

pub const MAGIC: &str = "rangeseg-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<(String, Tensor<T>)>,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

fn check_token(kind: &str, s: &str) -> Result<()> {
    if s.is_empty() || s.contains(char::is_whitespace) {
        return Err(bad(format!("{kind} {s:?} must be a non-empty word")));
    }
    Ok(())
}

struct Header {
    dtype: DType,
    meta: Vec<(String, String)>,
    entries: Vec<(String, Vec<usize>)>,
    payload_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut next_line = || -> Result<&str> {
        let rest = &bytes[pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| bad("truncated header"))?;
        pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| bad("header is not UTF-8"))
    };

    let first = next_line()?;
    let version = first
        .strip_prefix(MAGIC)
        .and_then(|v| v.trim().parse::<u32>().ok())
        .ok_or_else(|| bad("not a checkpoint file"))?;
    if version != VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let dtype = next_line()?
        .strip_prefix("dtype ")
        .and_then(DType::parse)
        .ok_or_else(|| bad("missing dtype line"))?;

    let mut meta = Vec::new();
    let mut entries = Vec::new();
    loop {
        let line = next_line()?;
        if line == "end" {
            break;
        }
        let mut words = line.split(' ');
        match words.next() {
            Some("meta") => {
                let key = words.next().ok_or_else(|| bad("meta without key"))?;
                let value = line["meta ".len() + key.len()..].trim_start_matches(' ');
                meta.push((key.to_string(), value.to_string()));
            }
            Some("tensor") => {
                let name = words.next().ok_or_else(|| bad("tensor without name"))?;
                let rank: usize = words
                    .next()
                    .and_then(|r| r.parse().ok())
                    .ok_or_else(|| bad(format!("tensor {name}: bad rank")))?;
                let dims = words
                    .map(|d| d.parse::<usize>().map_err(|_| bad(format!("tensor {name}: bad dim"))))
                    .collect::<Result<Vec<_>>>()?;
                if dims.len() != rank {
                    return Err(bad(format!("tensor {name}: rank {rank} with {} dims", dims.len())));
                }
                entries.push((name.to_string(), dims));
            }
            _ => return Err(bad(format!("unexpected header line {line:?}"))),
        }
    }
    Ok(Header {
        dtype,
        meta,
        entries,
        payload_start: pos,
    })
}

/// Element type declared by a serialized checkpoint.
pub fn peek_dtype(bytes: &[u8]) -> Result<DType> {
    Ok(parse_header(bytes)?.dtype)
}

impl<T: Scalar> Checkpoint<T> {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        let mut header = format!("{MAGIC} {VERSION}\ndtype {}\n", T::DTYPE.as_str());
        for (k, v) in &self.meta {
            check_token("meta key", k)?;
            if v.contains('\n') {
                return Err(bad(format!("meta {k}: value spans lines")));
            }
            header.push_str(&format!("meta {k} {v}\n"));
        }
        for (name, t) in &self.tensors {
            check_token("tensor name", name)?;
            header.push_str(&format!("tensor {name} {}", t.shape().len()));
            for d in t.shape() {
                header.push_str(&format!(" {d}"));
            }
            header.push('\n');
        }
        header.push_str("end\n");
        let mut payload = Vec::with_capacity(self.tensors.iter().map(|(_, t)| t.len()).sum::<usize>() * T::DTYPE.size());
        for (_, t) in &self.tensors {
            for &v in t.data() {
                v.write_le(&mut payload);
            }
        }
        w.write_all(header.as_bytes())
            .and_then(|_| w.write_all(&payload))
            .map_err(|e| bad(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = parse_header(bytes)?;
        if header.dtype != T::DTYPE {
            return Err(bad(format!(
                "checkpoint holds {} values, expected {}",
                header.dtype.as_str(),
                T::DTYPE.as_str()
            )));
        }
        let size = T::DTYPE.size();
        let mut pos = header.payload_start;
        let mut tensors = Vec::with_capacity(header.entries.len());
        for (name, dims) in header.entries {
            let count: usize = dims.iter().product();
            let end = count
                .checked_mul(size)
                .and_then(|n| n.checked_add(pos))
                .filter(|&end| end <= bytes.len())
                .ok_or_else(|| bad(format!("payload truncated in {name}")))?;
            let data = bytes[pos..end].chunks_exact(size).map(T::read_le).collect();
            pos = end;
            tensors.push((name, Tensor::new(&dims, data)?));
        }
        if pos != bytes.len() {
            return Err(bad(format!("{} trailing payload bytes", bytes.len() - pos)));
        }
        Ok(Checkpoint {
            meta: header.meta,
            tensors,
        })
    }
}

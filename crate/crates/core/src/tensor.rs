//! Dense `f32` tensors and the `VSLT` container used for weights and
//! attention bundles.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    b"VSLT"
//! version  u32 (= 1)
//! count    u32
//! entry*   name_len u16, name (UTF-8), rank u8, dims [u32; rank], payload
//! ```
//!
//! Payloads are `f32` values in row-major order, except for the entry named
//! [`META_ENTRY`], whose rank-1 payload is raw bytes (UTF-8 JSON).

use std::fs;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"VSLT";
pub const VERSION: u32 = 1;
pub const META_ENTRY: &str = "meta";

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },
    #[error("cannot access {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot encode entry {name:?}: {reason}")]
    Encode { name: String, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, String> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(format!("shape {shape:?} needs {n} values, got {}", data.len()));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f32>) -> Self {
        Tensor::new(vec![rows, cols], data).expect("rows * cols values")
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a rank-2 tensor.
    #[inline]
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a rank-2 tensor.
    #[inline]
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.shape[1];
        &self.data[i * c..(i + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    F32(Tensor),
    Bytes(Vec<u8>),
}

/// Ordered list of named entries, as stored on disk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorFile {
    pub entries: Vec<(String, Payload)>,
}

impl TensorFile {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: Tensor) {
        self.entries.push((name.into(), Payload::F32(t)));
    }

    pub fn set_meta(&mut self, json: &str) {
        self.entries.retain(|(n, _)| n != META_ENTRY);
        self.entries
            .push((META_ENTRY.to_string(), Payload::Bytes(json.as_bytes().to_vec())));
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.entries.iter().find_map(|(n, p)| match p {
            Payload::F32(t) if n == name => Some(t),
            _ => None,
        })
    }

    pub fn meta(&self) -> Option<&[u8]> {
        self.entries.iter().find_map(|(n, p)| match p {
            Payload::Bytes(b) if n == META_ENTRY => Some(b.as_slice()),
            _ => None,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TensorFileError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.entries.len()).map_err(|_| encode_err("*", "too many entries"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, payload) in &self.entries {
            let name_len = u16::try_from(name.len()).map_err(|_| encode_err(name, "name longer than 65535 bytes"))?;
            let dims: Vec<usize> = match payload {
                Payload::F32(t) if name != META_ENTRY => t.shape().to_vec(),
                Payload::Bytes(b) if name == META_ENTRY => vec![b.len()],
                _ => return Err(encode_err(name, "only the meta entry carries a byte payload")),
            };
            let rank = u8::try_from(dims.len()).map_err(|_| encode_err(name, "rank above 255"))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(rank);
            for d in dims {
                let d = u32::try_from(d).map_err(|_| encode_err(name, "dimension above u32::MAX"))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            match payload {
                Payload::F32(t) => {
                    for v in t.data() {
                        out.extend_from_slice(&v.to_le_bytes());
                    }
                }
                Payload::Bytes(b) => out.extend_from_slice(b),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorFileError> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(format_err(0, "bad magic (expected VSLT)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format_err(4, format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::new();
        for _ in 0..count {
            let name_at = r.pos;
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| format_err(name_at + 2, "entry name is not UTF-8"))?
                .to_string();
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u32()? as usize);
            }
            let payload_at = r.pos;
            let elems = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| format_err(payload_at, "dimension product overflows"))?;
            let remaining = bytes.len() - r.pos;
            if name == META_ENTRY {
                if rank != 1 {
                    return Err(format_err(payload_at, "meta entry must be rank 1"));
                }
                if elems > remaining {
                    return Err(format_err(payload_at, format!("meta declares {elems} bytes, {remaining} remain")));
                }
                entries.push((name, Payload::Bytes(r.take(elems)?.to_vec())));
            } else {
                let nbytes = elems
                    .checked_mul(4)
                    .ok_or_else(|| format_err(payload_at, "payload size overflows"))?;
                if nbytes > remaining {
                    return Err(format_err(
                        payload_at,
                        format!("entry {name:?} declares {elems} floats, only {remaining} bytes remain"),
                    ));
                }
                let data = r
                    .take(nbytes)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                entries.push((name, Payload::F32(Tensor { shape: dims, data })));
            }
        }
        if r.pos != bytes.len() {
            return Err(format_err(r.pos, "trailing bytes after last entry"));
        }
        Ok(TensorFile { entries })
    }
}

fn format_err(offset: usize, reason: impl Into<String>) -> TensorFileError {
    TensorFileError::Format {
        offset,
        reason: reason.into(),
    }
}

fn encode_err(name: &str, reason: &str) -> TensorFileError {
    TensorFileError::Encode {
        name: name.to_string(),
        reason: reason.to_string(),
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorFileError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format_err(self.pos, format!("truncated: need {n} bytes")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TensorFileError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, TensorFileError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, TensorFileError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn load_tensor_file(path: impl AsRef<Path>) -> Result<TensorFile, TensorFileError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| TensorFileError::Io {
        path: path.display().to_string(),
        source,
    })?;
    TensorFile::from_bytes(&bytes)
}

pub fn save_tensor_file(path: impl AsRef<Path>, file: &TensorFile) -> Result<(), TensorFileError> {
    let path = path.as_ref();
    fs::write(path, file.to_bytes()?).map_err(|source| TensorFileError::Io {
        path: path.display().to_string(),
        source,
    })
}

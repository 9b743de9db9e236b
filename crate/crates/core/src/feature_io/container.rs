//! Tensor container shared by every on-disk format in this crate.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        4 bytes   e.g. "RADF" or "RADB"
//! version      u16
//! header_len   u32
//! header       header_len bytes of UTF-8 JSON: {"meta": {...}, "tensors": [...]}
//! payload      raw tensors, back to back, in directory order
//! ```
//!
//! Each directory entry records `name`, `dtype`, `shape`, `offset` (relative
//! to the payload start) and `nbytes`. Tensors are always little-endian
//! regardless of host.

use std::io::{self, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u16 = 1;

const MAX_HEADER_LEN: u32 = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    F32,
    U32,
}

impl DType {
    fn width(self) -> usize {
        4
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub nbytes: u64,
}

#[derive(Serialize)]
struct HeaderOut<'a, M> {
    meta: &'a M,
    tensors: Vec<TensorEntry>,
}

#[derive(Deserialize)]
struct HeaderIn<M> {
    meta: M,
    tensors: Vec<TensorEntry>,
}

/// Borrowed tensor payload handed to the writer.
#[derive(Debug, Clone, Copy)]
pub enum TensorSlice<'a> {
    F32(&'a [f32]),
    U32(&'a [u32]),
}

impl TensorSlice<'_> {
    fn dtype(&self) -> DType {
        match self {
            TensorSlice::F32(_) => DType::F32,
            TensorSlice::U32(_) => DType::U32,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorSlice::F32(v) => v.len(),
            TensorSlice::U32(v) => v.len(),
        }
    }

    fn to_le_bytes(self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.len() * 4);
        match self {
            TensorSlice::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorSlice::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorSlice<'a>,
}

impl<'a> TensorRef<'a> {
    pub fn f32(name: impl Into<String>, shape: Vec<usize>, data: &'a [f32]) -> Self {
        Self {
            name: name.into(),
            shape,
            data: TensorSlice::F32(data),
        }
    }

    pub fn u32(name: impl Into<String>, shape: Vec<usize>, data: &'a [u32]) -> Self {
        Self {
            name: name.into(),
            shape,
            data: TensorSlice::U32(data),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn into_f32(self) -> Result<Vec<f32>> {
        match self.data {
            TensorData::F32(v) => Ok(v),
            TensorData::U32(_) => Err(Error::Header(format!("tensor {} is not f32", self.name))),
        }
    }

    pub fn into_u32(self) -> Result<Vec<u32>> {
        match self.data {
            TensorData::U32(v) => Ok(v),
            TensorData::F32(_) => Err(Error::Header(format!("tensor {} is not u32", self.name))),
        }
    }
}

/// Writes a container and returns the number of bytes emitted.
pub fn write_container<M: Serialize, W: Write>(
    magic: &[u8; 4],
    meta: &M,
    tensors: &[TensorRef<'_>],
    mut sink: W,
) -> Result<u64> {
    let mut offset = 0u64;
    let mut entries = Vec::with_capacity(tensors.len());
    for t in tensors {
        let expected: usize = t.shape.iter().product();
        if expected != t.data.len() {
            return Err(Error::Shape(format!(
                "tensor {} has {} elements but shape {:?}",
                t.name,
                t.data.len(),
                t.shape
            )));
        }
        let nbytes = (t.data.len() * t.data.dtype().width()) as u64;
        entries.push(TensorEntry {
            name: t.name.clone(),
            dtype: t.data.dtype(),
            shape: t.shape.clone(),
            offset,
            nbytes,
        });
        offset += nbytes;
    }
    let header = serde_json::to_vec(&HeaderOut {
        meta,
        tensors: entries,
    })
    .map_err(|e| Error::Header(e.to_string()))?;
    let header_len = u32::try_from(header.len())
        .ok()
        .filter(|&n| n <= MAX_HEADER_LEN)
        .ok_or_else(|| Error::Header("header too large".into()))?;

    let ctx = |e| Error::io("writing container", e);
    sink.write_all(magic).map_err(ctx)?;
    sink.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(ctx)?;
    sink.write_all(&header_len.to_le_bytes()).map_err(ctx)?;
    sink.write_all(&header).map_err(ctx)?;
    for t in tensors {
        sink.write_all(&t.data.to_le_bytes()).map_err(ctx)?;
    }
    sink.flush().map_err(ctx)?;
    Ok(4 + 2 + 4 + header.len() as u64 + offset)
}

/// Reads a container whose magic must equal `magic`.
pub fn read_container<M: DeserializeOwned, R: Read>(
    magic: &[u8; 4],
    mut source: R,
) -> Result<(M, Vec<Tensor>)> {
    let mut found = [0u8; 4];
    read_exact_or(&mut source, &mut found, || Error::BadMagic {
        expected: String::from_utf8_lossy(magic).into_owned(),
        found: "<eof>".into(),
    })?;
    if &found != magic {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(magic).into_owned(),
            found: String::from_utf8_lossy(&found).into_owned(),
        });
    }

    let mut version = [0u8; 2];
    read_exact_or(&mut source, &mut version, || Error::TruncatedHeader)?;
    let version = u16::from_le_bytes(version);
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let mut len = [0u8; 4];
    read_exact_or(&mut source, &mut len, || Error::TruncatedHeader)?;
    let len = u32::from_le_bytes(len);
    if len > MAX_HEADER_LEN {
        return Err(Error::Header(format!("header length {len} exceeds limit")));
    }
    let mut header = vec![0u8; len as usize];
    read_exact_or(&mut source, &mut header, || Error::TruncatedHeader)?;
    let header: HeaderIn<M> = serde_json::from_slice(&header).map_err(|e| Error::Header(e.to_string()))?;

    let mut expected_offset = 0u64;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let count: usize = entry.shape.iter().product();
        let nbytes = (count * entry.dtype.width()) as u64;
        if entry.nbytes != nbytes || entry.offset != expected_offset {
            return Err(Error::Header(format!(
                "inconsistent directory entry for tensor {}",
                entry.name
            )));
        }
        expected_offset += nbytes;
        let mut raw = vec![0u8; nbytes as usize];
        read_exact_or(&mut source, &mut raw, || {
            Error::TruncatedTensor(entry.name.clone())
        })?;
        let data = match entry.dtype {
            DType::F32 => TensorData::F32(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            DType::U32 => TensorData::U32(
                raw.chunks_exact(4)
                    .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
        };
        tensors.push(Tensor {
            name: entry.name,
            shape: entry.shape,
            data,
        });
    }
    Ok((header.meta, tensors))
}

fn read_exact_or<R: Read>(source: &mut R, buf: &mut [u8], on_eof: impl FnOnce() -> Error) -> Result<()> {
    match source.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Err(on_eof()),
        Err(e) => Err(Error::io("reading container", e)),
    }
}

/// Removes and returns the tensor called `name`.
pub fn take_tensor(tensors: &mut Vec<Tensor>, name: &str) -> Result<Tensor> {
    let pos = tensors
        .iter()
        .position(|t| t.name == name)
        .ok_or_else(|| Error::Header(format!("missing tensor {name}")))?;
    Ok(tensors.remove(pos))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Meta {
        kind: String,
    }

    fn sample() -> Vec<u8> {
        let a = [1.5f32, -2.0, 0.25];
        let b = [7u32, 9];
        let mut buf = Vec::new();
        let n = write_container(
            b"TEST",
            &Meta { kind: "x".into() },
            &[
                TensorRef::f32("a", vec![3], &a),
                TensorRef::u32("b", vec![1, 2], &b),
            ],
            &mut buf,
        )
        .unwrap();
        assert_eq!(n as usize, buf.len());
        buf
    }

    #[test]
    fn roundtrip() {
        let buf = sample();
        let (meta, tensors): (Meta, _) = read_container(b"TEST", buf.as_slice()).unwrap();
        assert_eq!(meta.kind, "x");
        assert_eq!(tensors[0].data, TensorData::F32(vec![1.5, -2.0, 0.25]));
        assert_eq!(tensors[1].shape, vec![1, 2]);
    }

    #[test]
    fn rejects_wrong_magic_and_version() {
        let mut buf = sample();
        let err = read_container::<Meta, _>(b"NOPE", buf.as_slice()).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
        buf[4] = 9;
        let err = read_container::<Meta, _>(b"TEST", buf.as_slice()).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 9, .. }));
    }

    #[test]
    fn truncation_names_the_tensor() {
        let buf = sample();
        let cut = &buf[..buf.len() - 3];
        let err = read_container::<Meta, _>(b"TEST", cut).unwrap_err();
        assert_eq!(err.to_string(), "truncated tensor b");
    }

    #[test]
    fn shape_mismatch_is_rejected_on_write() {
        let a = [1.0f32; 4];
        let err = write_container(
            b"TEST",
            &Meta { kind: "x".into() },
            &[TensorRef::f32("a", vec![3], &a)],
            Vec::new(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }
}

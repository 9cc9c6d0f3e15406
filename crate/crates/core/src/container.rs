//! The `TLNS0001` binary container.
//!
//! Layout: 8-byte magic, little-endian `u32` header length, UTF-8 JSON header,
//! then the concatenated little-endian `f32` payloads of every tensor listed in
//! the header (offsets are relative to the start of the payload block).

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TLNS0001";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub length: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header<T> {
    format: String,
    version: u32,
    kind: String,
    body: T,
    tensors: Vec<TensorEntry>,
}

pub fn encode<T: Serialize>(kind: &str, body: &T, tensors: &[(&str, &Tensor)]) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for (name, t) in tensors {
        let length = t.len() * 4;
        entries.push(TensorEntry {
            name: (*name).to_string(),
            shape: t.shape().to_vec(),
            offset,
            length,
        });
        offset += length;
    }
    let header = Header {
        format: "TLNS".to_string(),
        version: 1,
        kind: kind.to_string(),
        body,
        tensors: entries,
    };
    let json = serde_json::to_vec(&header)?;
    let header_len = u32::try_from(json.len()).map_err(|_| Error::Format("header too large".into()))?;
    let mut out = Vec::with_capacity(12 + json.len() + offset);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header_len.to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decoded container: the typed header body plus named tensors in file order.
pub struct Decoded<T> {
    pub kind: String,
    pub body: T,
    pub tensors: Vec<(String, Tensor)>,
}

impl<T> Decoded<T> {
    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        let pos = self
            .tensors
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| Error::Format(format!("missing tensor `{name}`")))?;
        Ok(self.tensors.remove(pos).1)
    }
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8], expected_kind: &str) -> Result<Decoded<T>> {
    if bytes.len() < 12 || &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic (expected TLNS0001)".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let payload_start = 12 + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Format("truncated header".into()));
    }
    let header: Header<T> = serde_json::from_slice(&bytes[12..payload_start])?;
    if header.format != "TLNS" || header.version != 1 {
        return Err(Error::Format(format!(
            "unsupported container {} v{}",
            header.format, header.version
        )));
    }
    if header.kind != expected_kind {
        return Err(Error::Format(format!(
            "expected a `{expected_kind}` container, found `{}`",
            header.kind
        )));
    }
    let payload = &bytes[payload_start..];
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let end = entry
            .offset
            .checked_add(entry.length)
            .filter(|&e| e <= payload.len())
            .ok_or_else(|| Error::Format(format!("tensor `{}` out of bounds", entry.name)))?;
        if entry.length % 4 != 0 {
            return Err(Error::Format(format!("tensor `{}` has ragged length", entry.name)));
        }
        let data: Vec<f32> = payload[entry.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = Tensor::new(entry.shape, data)?;
        tensors.push((entry.name, tensor));
    }
    Ok(Decoded {
        kind: header.kind,
        body: header.body,
        tensors,
    })
}

pub fn read_file<T: DeserializeOwned>(path: &Path, expected_kind: &str) -> Result<Decoded<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, expected_kind)
}

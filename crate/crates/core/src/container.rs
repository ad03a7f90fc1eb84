//! Raw tensor container: one JSON header line, then little-endian `f32`
//! payloads in header order.
//!
//! ```text
//! {"dtype":"f32","tensors":[{"name":"w","shape":[2,3],"offset":0}, ...]}\n
//! <payload bytes>
//! ```
//! `offset` is measured in bytes from the first payload byte.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dtype: String,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

pub fn encode(tensors: &[(&str, &Tensor)]) -> Vec<u8> {
    let mut offset = 0;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = Entry { name: name.to_string(), shape: t.shape().to_vec(), offset };
            offset += 4 * t.numel();
            e
        })
        .collect();
    let header = Header { dtype: "f32".into(), tensors: entries };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    for (_, t) in tensors {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Integrity("tensor container has no header line".into()))?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes[..nl]);
    let header: Header = serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Format { pointer: crate::json_pointer(e.path()), reason: e.inner().to_string() })?;
    if header.dtype != "f32" {
        return Err(Error::Format {
            pointer: "/dtype".into(),
            reason: format!("unsupported dtype {:?}", header.dtype),
        });
    }
    let payload = &bytes[nl + 1..];
    let mut out = Vec::with_capacity(header.tensors.len());
    let mut expected_offset = 0;
    for (i, e) in header.tensors.into_iter().enumerate() {
        let numel: usize = e.shape.iter().product();
        if e.offset != expected_offset {
            return Err(Error::Format {
                pointer: format!("/tensors/{i}/offset"),
                reason: format!("expected {expected_offset}, found {}", e.offset),
            });
        }
        let end = e.offset + 4 * numel;
        if end > payload.len() {
            return Err(Error::Integrity(format!(
                "tensor {:?} needs payload bytes {}..{end}, container has {}",
                e.name,
                e.offset,
                payload.len()
            )));
        }
        let data =
            payload[e.offset..end].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let t = Tensor::new(&e.shape, data)
            .map_err(|err| Error::Format { pointer: format!("/tensors/{i}/shape"), reason: err.to_string() })?;
        out.push((e.name, t));
        expected_offset = end;
    }
    if expected_offset != payload.len() {
        return Err(Error::Integrity(format!("{} trailing payload bytes", payload.len() - expected_offset)));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[(&str, &Tensor)]) -> Result<()> {
    fs::write(path, encode(tensors)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

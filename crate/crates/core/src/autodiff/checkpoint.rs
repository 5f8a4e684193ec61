//! Container format: a UTF-8 header followed by little-endian `f64` payloads.
//!
//! ```text
//! perceploop-checkpoint 1
//! meta <key> <value>
//! tensor <name> <d0>x<d1>x... <byte offset>
//! end
//! <payload>
//! ```
//!
//! Offsets are relative to the first payload byte; tensors are stored
//! contiguously in header order. A scalar's shape is written as `scalar`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::params::Params;
use super::tensor::Tensor;

const MAGIC: &str = "perceploop-checkpoint 1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub params: Params,
}

impl Checkpoint {
    pub fn new(params: Params) -> Self {
        Self {
            meta: Vec::new(),
            params,
        }
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.push((key.into(), value.into()));
        self
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC}\n");
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for (name, t) in self.params.iter() {
            let shape = if t.shape().is_empty() {
                "scalar".to_string()
            } else {
                t.shape().iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x")
            };
            header.push_str(&format!("tensor {name} {shape} {offset}\n"));
            offset += t.len() * 8;
        }
        header.push_str("end\n");
        let mut out = header.into_bytes();
        out.reserve(offset);
        for (_, t) in self.params.iter() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], label: &str) -> Result<Self> {
        let bad = |detail: String| Error::Checkpoint {
            path: label.to_string(),
            detail,
        };
        let end = bytes
            .windows(5)
            .position(|w| w == b"\nend\n")
            .ok_or_else(|| bad("header terminator not found".into()))?
            + 5;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|e| bad(format!("header: {e}")))?;
        let payload = &bytes[end..];
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(bad("unsupported format version".into()));
        }
        let mut ckpt = Checkpoint::default();
        let mut expected_offset = 0usize;
        for line in lines {
            if line == "end" {
                break;
            }
            let mut parts = line.splitn(2, ' ');
            match (parts.next(), parts.next()) {
                (Some("meta"), Some(rest)) => {
                    let (k, v) = rest.split_once(' ').unwrap_or((rest, ""));
                    ckpt.meta.push((k.to_string(), v.to_string()));
                }
                (Some("tensor"), Some(rest)) => {
                    let fields: Vec<&str> = rest.split(' ').collect();
                    let [name, shape, offset] = fields[..] else {
                        return Err(bad(format!("bad tensor line {line:?}")));
                    };
                    let shape: Vec<usize> = if shape == "scalar" {
                        Vec::new()
                    } else {
                        shape
                            .split('x')
                            .map(|d| d.parse().map_err(|_| bad(format!("bad shape in {line:?}"))))
                            .collect::<Result<_>>()?
                    };
                    let offset: usize = offset.parse().map_err(|_| bad(format!("bad offset in {line:?}")))?;
                    if offset != expected_offset {
                        return Err(bad(format!("tensor {name} at offset {offset}, expected {expected_offset}")));
                    }
                    let n: usize = shape.iter().product();
                    let bytes_needed = n * 8;
                    let chunk = payload
                        .get(offset..offset + bytes_needed)
                        .ok_or_else(|| bad(format!("payload truncated in tensor {name}")))?;
                    let data = chunk
                        .chunks_exact(8)
                        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
                        .collect();
                    ckpt.params.insert(name, Tensor::new(shape, data)?);
                    expected_offset += bytes_needed;
                }
                _ => return Err(bad(format!("unrecognised header line {line:?}"))),
            }
        }
        if expected_offset != payload.len() {
            return Err(bad(format!(
                "payload has {} bytes, header describes {expected_offset}",
                payload.len()
            )));
        }
        Ok(ckpt)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, &path.display().to_string())
}

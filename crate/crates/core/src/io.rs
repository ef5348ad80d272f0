// SPDX-License-Identifier: MIT OR Apache-2.0
//! Model files: plain JSON, or a binary container holding a JSON header and
//! a little-endian payload of matrix entries.
//!
//! Binary layout: magic `ICLREPR\0`, `u32` format version, `u64` header
//! length, the header bytes, then for every matrix (in header order) its
//! entries as `u32 row, u32 col, f64 value`.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::constructions::BuiltModel;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ICLREPR\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format_version: u32,
    pub model: BuiltModel,
}

fn ser_err(e: impl std::fmt::Display) -> Error {
    Error::Serialization(e.to_string())
}

pub fn to_json(model: &BuiltModel) -> Result<String> {
    serde_json::to_string(&ModelFile {
        format_version: FORMAT_VERSION,
        model: model.clone(),
    })
    .map_err(ser_err)
}

pub fn from_json(s: &str) -> Result<BuiltModel> {
    let f: ModelFile = serde_json::from_str(s).map_err(ser_err)?;
    check_version(f.format_version)?;
    f.model.validate()?;
    Ok(f.model)
}

fn check_version(v: u32) -> Result<()> {
    if v != FORMAT_VERSION {
        return Err(Error::Serialization(format!(
            "format version {v}, expected {FORMAT_VERSION}"
        )));
    }
    Ok(())
}

fn is_matrix(m: &Map<String, Value>) -> bool {
    m.len() == 3 && m.contains_key("rows") && m.contains_key("cols") && m.get("entries").is_some_and(Value::is_array)
}

/// Moves matrix entries out of `v` into `payload`, leaving their count behind.
fn strip(v: &mut Value, payload: &mut Vec<u8>) -> Result<()> {
    match v {
        Value::Object(m) if is_matrix(m) => {
            let entries = m.remove("entries").expect("checked");
            let entries: Vec<(u32, u32, f64)> = serde_json::from_value(entries).map_err(ser_err)?;
            for (r, c, x) in &entries {
                payload.extend_from_slice(&r.to_le_bytes());
                payload.extend_from_slice(&c.to_le_bytes());
                payload.extend_from_slice(&x.to_le_bytes());
            }
            m.insert("nnz".into(), Value::from(entries.len()));
        }
        Value::Object(m) => {
            for x in m.values_mut() {
                strip(x, payload)?;
            }
        }
        Value::Array(a) => {
            for x in a {
                strip(x, payload)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Serialization("truncated model file".into()));
    }
    let (a, b) = buf.split_at(n);
    *buf = b;
    Ok(a)
}

fn is_stripped(m: &Map<String, Value>) -> bool {
    m.len() == 3 && m.contains_key("rows") && m.contains_key("cols") && m.get("nnz").is_some_and(Value::is_u64)
}

fn restore(v: &mut Value, payload: &mut &[u8]) -> Result<()> {
    match v {
        Value::Object(m) if is_stripped(m) => {
            let nnz = m.remove("nnz").and_then(|n| n.as_u64()).expect("checked") as usize;
            let mut entries = Vec::with_capacity(nnz);
            for _ in 0..nnz {
                let rec = take(payload, 16)?;
                let r = u32::from_le_bytes(rec[0..4].try_into().expect("4 bytes"));
                let c = u32::from_le_bytes(rec[4..8].try_into().expect("4 bytes"));
                let x = f64::from_le_bytes(rec[8..16].try_into().expect("8 bytes"));
                entries.push(Value::Array(vec![r.into(), c.into(), serde_json::to_value(x).map_err(ser_err)?]));
            }
            m.insert("entries".into(), Value::Array(entries));
        }
        Value::Object(m) => {
            for x in m.values_mut() {
                restore(x, payload)?;
            }
        }
        Value::Array(a) => {
            for x in a {
                restore(x, payload)?;
            }
        }
        _ => {}
    }
    Ok(())
}

pub fn to_binary(model: &BuiltModel) -> Result<Vec<u8>> {
    let mut header = serde_json::to_value(ModelFile {
        format_version: FORMAT_VERSION,
        model: model.clone(),
    })
    .map_err(ser_err)?;
    let mut payload = Vec::new();
    strip(&mut header, &mut payload)?;
    let header = serde_json::to_vec(&header).map_err(ser_err)?;
    let mut out = Vec::with_capacity(20 + header.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_binary(bytes: &[u8]) -> Result<BuiltModel> {
    let mut buf = bytes;
    if take(&mut buf, 8)? != MAGIC {
        return Err(Error::Serialization("not a model file (bad magic)".into()));
    }
    check_version(u32::from_le_bytes(take(&mut buf, 4)?.try_into().expect("4 bytes")))?;
    let len = u64::from_le_bytes(take(&mut buf, 8)?.try_into().expect("8 bytes")) as usize;
    let mut header: Value = serde_json::from_slice(take(&mut buf, len)?).map_err(ser_err)?;
    restore(&mut header, &mut buf)?;
    if !buf.is_empty() {
        return Err(Error::Serialization(format!("{} trailing bytes", buf.len())));
    }
    let f: ModelFile = serde_json::from_value(header).map_err(ser_err)?;
    check_version(f.format_version)?;
    f.model.validate()?;
    Ok(f.model)
}

/// Writes JSON for a `.json` extension and the binary container otherwise.
pub fn save_model(model: &BuiltModel, path: &Path) -> Result<()> {
    let bytes = if path.extension().is_some_and(|e| e == "json") {
        to_json(model)?.into_bytes()
    } else {
        to_binary(model)?
    };
    std::fs::write(path, bytes).map_err(ser_err)
}

pub fn load_model(path: &Path) -> Result<BuiltModel> {
    let bytes = std::fs::read(path).map_err(ser_err)?;
    if bytes.starts_with(MAGIC) {
        from_binary(&bytes)
    } else {
        from_json(std::str::from_utf8(&bytes).map_err(ser_err)?)
    }
}

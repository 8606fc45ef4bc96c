//! Versioned tensor container used by model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes
//! version      u32
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON; carries a "tensors" list of
//!              {"name", "shape"} in payload order
//! payload      f32 values of every tensor, concatenated
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Position, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorInfo {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub info: TensorInfo,
    pub data: Vec<f64>,
}

pub struct Container {
    pub version: u32,
    pub header: Value,
    pub tensors: Vec<Tensor>,
}

impl Container {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.info.name == name)
            .ok_or_else(|| Error::validation(format!("container has no tensor {name:?}")))
    }
}

pub fn encode(magic: &[u8; 8], version: u32, header: &Value, tensors: &[Tensor]) -> Result<Vec<u8>> {
    let mut header = header.clone();
    let infos: Vec<&TensorInfo> = tensors.iter().map(|t| &t.info).collect();
    match &mut header {
        Value::Object(map) => {
            map.insert("tensors".into(), serde_json::to_value(infos)?);
        }
        _ => return Err(Error::validation("container header must be a JSON object")),
    }
    for t in tensors {
        if t.data.len() != t.info.numel() {
            return Err(Error::validation(format!(
                "tensor {} has {} values, shape {:?} needs {}",
                t.info.name,
                t.data.len(),
                t.info.shape,
                t.info.numel()
            )));
        }
    }
    let header_bytes = serde_json::to_vec(&header)?;
    let payload: usize = tensors.iter().map(|t| t.data.len() * 4).sum();
    let mut out = Vec::with_capacity(20 + header_bytes.len() + payload);
    out.extend_from_slice(magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for t in tensors {
        for &v in &t.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(path: &Path, magic: &[u8; 8], bytes: &[u8]) -> Result<Container> {
    let err = |pos: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        position: Position::Byte(pos as u64),
        message: msg,
    };
    if bytes.len() < 20 {
        return Err(err(bytes.len(), "truncated container header".into()));
    }
    if &bytes[..8] != magic {
        return Err(err(
            0,
            format!("bad magic, expected {:?}", String::from_utf8_lossy(magic)),
        ));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = 20usize
        .checked_add(header_len)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| err(20, format!("header length {header_len} exceeds file")))?;
    let header: Value = serde_json::from_slice(&bytes[20..body]).map_err(|e| err(20, e.to_string()))?;
    let infos: Vec<TensorInfo> = serde_json::from_value(
        header
            .get("tensors")
            .cloned()
            .ok_or_else(|| err(20, "header has no tensor table".into()))?,
    )
    .map_err(|e| err(20, e.to_string()))?;
    let mut offset = body;
    let mut tensors = Vec::with_capacity(infos.len());
    for info in infos {
        let end = offset + info.numel() * 4;
        if end > bytes.len() {
            return Err(err(bytes.len(), format!("payload for tensor {} is truncated", info.name)));
        }
        let data = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        tensors.push(Tensor { info, data });
        offset = end;
    }
    if offset != bytes.len() {
        return Err(err(offset, format!("{} trailing bytes", bytes.len() - offset)));
    }
    Ok(Container {
        version,
        header,
        tensors,
    })
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path, magic: &[u8; 8]) -> Result<Container> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(path, magic, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let tensors = vec![Tensor {
            info: TensorInfo {
                name: "w".into(),
                shape: vec![2, 2],
            },
            data: vec![1.0, -2.5, 0.125, 3.0],
        }];
        let header = serde_json::json!({"format": "test"});
        let bytes = encode(b"TESTTEST", 3, &header, &tensors).unwrap();
        let c = decode(Path::new("x"), b"TESTTEST", &bytes).unwrap();
        assert_eq!(c.version, 3);
        assert_eq!(c.tensors, tensors);
        assert_eq!(c.header["format"], "test");
        assert!(decode(Path::new("x"), b"OTHEROTH", &bytes).is_err());
        assert!(decode(Path::new("x"), b"TESTTEST", &bytes[..bytes.len() - 1]).is_err());
    }
}

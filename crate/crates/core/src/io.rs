//! Artifact containers.
//!
//! Binary layout: 8-byte magic, `u64` LE header length, JSON header, then each
//! tensor's `f64` LE payload in header order. The header carries caller
//! metadata plus `{name, shape}` for every tensor.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorHeader {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    meta: M,
    tensors: Vec<TensorHeader>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: &str, shape: &[usize], data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { name: name.to_string(), shape: shape.to_vec(), data }
    }
}

pub fn write_container<M: Serialize>(path: &Path, magic: &[u8; 8], meta: &M, tensors: &[Tensor]) -> Result<()> {
    let header = Header {
        meta,
        tensors: tensors.iter().map(|t| TensorHeader { name: t.name.clone(), shape: t.shape.clone() }).collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(magic)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for t in tensors {
        for x in &t.data {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_container<M: DeserializeOwned>(path: &Path, magic: &[u8; 8]) -> Result<(M, Vec<Tensor>)> {
    let mut r = BufReader::new(File::open(path)?);
    let mut got = [0u8; 8];
    r.read_exact(&mut got)?;
    if &got != magic {
        return Err(Error::format(
            path,
            format!("bad magic {:?}, expected {:?}", String::from_utf8_lossy(&got), String::from_utf8_lossy(magic)),
        ));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: Header<M> = serde_json::from_slice(&header).map_err(|e| Error::format(path, e.to_string()))?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    let mut buf = [0u8; 8];
    for th in header.tensors {
        let n: usize = th.shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            r.read_exact(&mut buf).map_err(|_| Error::format(path, format!("truncated tensor `{}`", th.name)))?;
            data.push(f64::from_le_bytes(buf));
        }
        tensors.push(Tensor { name: th.name, shape: th.shape, data });
    }
    Ok((header.meta, tensors))
}

/// Removes the tensor called `name`, checking its shape.
pub fn take_tensor(tensors: &mut Vec<Tensor>, name: &str, shape: &[usize], path: &Path) -> Result<Vec<f64>> {
    let pos = tensors
        .iter()
        .position(|t| t.name == name)
        .ok_or_else(|| Error::format(path, format!("missing tensor `{name}`")))?;
    let t = tensors.remove(pos);
    if t.shape != shape {
        return Err(Error::format(path, format!("tensor `{name}` has shape {:?}, expected {:?}", t.shape, shape)));
    }
    Ok(t.data)
}

/// Writes a JSON document with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let r = BufReader::new(File::open(path)?);
    serde_json::from_reader(r).map_err(|e| Error::format(path, e.to_string()))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut r = BufReader::new(File::open(path)?);
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = r.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Quotes a CSV field when needed.
pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Splits one CSV record, honoring double-quoted fields.
pub(crate) fn split_csv(line: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut quoted = false;
    let mut chars = line.chars().peekable();
    while let Some(ch) = chars.next() {
        match (ch, quoted) {
            ('"', true) if chars.peek() == Some(&'"') => {
                cur.push('"');
                chars.next();
            }
            ('"', _) => quoted = !quoted,
            (',', false) => out.push(std::mem::take(&mut cur)),
            (c, _) => cur.push(c),
        }
    }
    out.push(cur);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        let tensors = vec![Tensor::new("a", &[2, 2], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE]), Tensor::new("b", &[1], vec![0.1])];
        write_container(&p, b"TESTMAG1", &"meta", &tensors).unwrap();
        let (meta, back): (String, _) = read_container(&p, b"TESTMAG1").unwrap();
        assert_eq!(meta, "meta");
        assert_eq!(back, tensors);
        assert!(read_container::<String>(&p, b"OTHERMAG").is_err());
    }
}

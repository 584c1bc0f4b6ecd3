//! Self-describing parameter containers.
//!
//! Layout: the magic bytes, a little-endian `u64` header length, a JSON
//! header, then every tensor as little-endian `f64` in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Params;
use crate::tensor::Mat;

const MAGIC: &[u8; 8] = b"BKCKPT1\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: (usize, usize),
    /// Offset into the data section, in `f64` elements.
    pub offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header<M> {
    kind: String,
    meta: M,
    tensors: Vec<TensorEntry>,
}

pub fn write<W: Write, M: Serialize>(mut w: W, kind: &str, meta: &M, params: &Params) -> Result<()> {
    let mut offset = 0;
    let tensors = params
        .iter()
        .map(|(name, m)| {
            let e = TensorEntry { name: name.clone(), shape: m.shape(), offset };
            offset += m.len();
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header { kind: kind.to_string(), meta, tensors })?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, m) in params.iter() {
        for v in m.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read<R: Read, M: DeserializeOwned>(mut r: R, kind: &str) -> Result<(M, Params)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(|_| Error::Checkpoint("truncated file".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| Error::Checkpoint("header too large".into()))?;
    let mut header = vec![0u8; len];
    r.read_exact(&mut header).map_err(|_| Error::Checkpoint("truncated header".into()))?;
    let header: Header<M> = serde_json::from_slice(&header)?;
    if header.kind != kind {
        return Err(Error::Checkpoint(format!("expected a `{kind}` checkpoint, found `{}`", header.kind)));
    }
    let mut params = Params::new();
    let mut offset = 0;
    for e in &header.tensors {
        if e.offset != offset {
            return Err(Error::Checkpoint(format!("tensor `{}` has a non-contiguous offset", e.name)));
        }
        let n = e.shape.0 * e.shape.1;
        let mut bytes = vec![0u8; n * 8];
        r.read_exact(&mut bytes).map_err(|_| Error::Checkpoint(format!("truncated data for `{}`", e.name)))?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        params.insert(e.name.clone(), Mat::from_vec(e.shape.0, e.shape.1, data));
        offset += n;
    }
    Ok((header.meta, params))
}

pub fn save<M: Serialize>(path: &Path, kind: &str, meta: &M, params: &Params) -> Result<()> {
    write(BufWriter::new(File::create(path)?), kind, meta, params)
}

pub fn load<M: DeserializeOwned>(path: &Path, kind: &str) -> Result<(M, Params)> {
    read(BufReader::new(File::open(path)?), kind)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let mut p = Params::new();
        p.insert("a", Mat::from_vec(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]));
        p.insert("b", Mat::row_vector(vec![0.1, 0.2, 0.3]));
        let mut buf = Vec::new();
        write(&mut buf, "test", &"meta", &p).unwrap();
        let (meta, back): (String, Params) = read(buf.as_slice(), "test").unwrap();
        assert_eq!(meta, "meta");
        assert!(back.bitwise_eq(&p));
    }

    #[test]
    fn wrong_kind_and_truncation_are_rejected() {
        let mut p = Params::new();
        p.insert("a", Mat::zeros(3, 3));
        let mut buf = Vec::new();
        write(&mut buf, "model", &(), &p).unwrap();
        assert!(read::<_, ()>(buf.as_slice(), "editor").is_err());
        buf.truncate(buf.len() - 4);
        assert!(matches!(read::<_, ()>(buf.as_slice(), "model"), Err(Error::Checkpoint(_))));
        assert!(read::<_, ()>(&b"garbage!"[..], "model").is_err());
    }
}

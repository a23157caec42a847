//! On-disk formats: AEMB embeddings, `id,label` CSV, and synthetic metadata.
//!
//! AEMB layout (all little-endian): magic `AEMB`, `u32` version (1), `u64` n,
//! `u32` d, then `n*d` `f32` values row-major. Nothing may follow the payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingMatrix, LabelStore, SyntheticSpec};
use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"AEMB";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 8 + 4;

pub fn write_embeddings(path: impl AsRef<Path>, emb: &EmbeddingMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_embeddings(&mut w, emb).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

fn encode_embeddings(w: &mut impl Write, emb: &EmbeddingMatrix) -> std::io::Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(emb.n() as u64).to_le_bytes())?;
    w.write_all(&(emb.d() as u32).to_le_bytes())?;
    for v in emb.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    read_embeddings(&bytes)
}

/// Parses an in-memory AEMB buffer.
pub fn read_embeddings(bytes: &[u8]) -> Result<EmbeddingMatrix> {
    if (bytes.len() as u64) < HEADER_LEN {
        if bytes.len() >= 4 && bytes[..4] != MAGIC {
            return Err(Error::BadMagic {
                expected: MAGIC,
                found: bytes[..4].try_into().unwrap(),
            });
        }
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len() as u64,
        });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let n = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let d = u32::from_le_bytes(bytes[16..20].try_into().unwrap()) as u64;
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .and_then(|c| c.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Shape(format!("header declares an impossible size n={n}, d={d}")))?;
    let found = bytes.len() as u64;
    if found < expected {
        return Err(Error::Truncated { expected, found });
    }
    if found > expected {
        return Err(Error::TrailingBytes(found - expected));
    }
    let values = bytes[HEADER_LEN as usize..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    EmbeddingMatrix::new(n as usize, d as usize, values)
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    id: u64,
    label: u32,
}

pub fn write_labels(path: impl AsRef<Path>, labels: &LabelStore) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    for (id, &label) in labels.labels().iter().enumerate() {
        w.serialize(LabelRow {
            id: id as u64,
            label,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads an `id,label` CSV for `n` instances. The class count is one more
/// than the largest label seen, but never less than two.
pub fn load_labels(path: impl AsRef<Path>, n: usize) -> Result<LabelStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_labels(file, n)
}

pub fn read_labels(reader: impl Read, n: usize) -> Result<LabelStore> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "id" || &headers[1] != "label" {
        return Err(Error::Labels(format!(
            "expected header `id,label`, found `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut labels: Vec<Option<u32>> = vec![None; n];
    for row in rdr.deserialize::<LabelRow>() {
        let row = row?;
        let id = row.id as usize;
        if id >= n {
            return Err(Error::Labels(format!("id {id} out of range for n={n}")));
        }
        if labels[id].replace(row.label).is_some() {
            return Err(Error::Labels(format!("id {id} appears more than once")));
        }
    }
    let labels: Vec<u32> = labels
        .into_iter()
        .enumerate()
        .map(|(id, l)| l.ok_or_else(|| Error::Labels(format!("id {id} missing"))))
        .collect::<Result<_>>()?;
    let num_classes = labels.iter().max().map_or(2, |&m| (m + 1).max(2));
    LabelStore::new(labels, num_classes)
}

/// Ground-truth metadata written next to a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMetadata {
    pub cluster_ids: Vec<u32>,
    pub spec: SyntheticSpec,
}

pub fn write_metadata(path: impl AsRef<Path>, meta: &SyntheticMetadata) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer(BufWriter::new(file), meta)?;
    Ok(())
}

impl SyntheticMetadata {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(file))?)
    }
}

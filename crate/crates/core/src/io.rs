//! Readers and writers for `.fvecs`/`.ivecs` files and JSON-lines query
//! workloads.
//!
//! An fvecs file is a sequence of records `[i32 d][d × f32]`, all little
//! endian. ivecs has the same framing with `i32` payloads.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::Dataset;

/// One line of a query workload file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: u64,
    pub vector: Vec<f32>,
    pub tau: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_cardinality: Option<u64>,
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Splits a `*vecs` byte buffer into `(dim, payload words)`.
fn parse_vecs(path: &Path, bytes: &[u8]) -> Result<(usize, Vec<[u8; 4]>)> {
    let mut dim = None;
    let mut words = Vec::new();
    let mut pos = 0;
    let mut record = 0usize;
    while pos < bytes.len() {
        let header: [u8; 4] = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| Error::format(path, format!("truncated header in record {record}")))?
            .try_into()
            .unwrap();
        let d = i32::from_le_bytes(header);
        if d <= 0 {
            return Err(Error::format(path, format!("record {record} has dimension {d}")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(Error::format(
                    path,
                    format!("record {record} has dimension {d}, expected {expected}"),
                ))
            }
            _ => {}
        }
        pos += 4;
        let body = bytes
            .get(pos..pos + 4 * d)
            .ok_or_else(|| Error::format(path, format!("truncated payload in record {record}")))?;
        words.extend(body.chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).unwrap()));
        pos += 4 * d;
        record += 1;
    }
    Ok((dim.unwrap_or(0), words))
}

fn encode_vecs(dim: usize, words: impl Iterator<Item = [u8; 4]>) -> Vec<u8> {
    let header = (dim as i32).to_le_bytes();
    let mut out = Vec::new();
    for (i, w) in words.enumerate() {
        if i % dim == 0 {
            out.extend_from_slice(&header);
        }
        out.extend_from_slice(&w);
    }
    out
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Decodes fvecs bytes; `path` only labels errors.
pub fn decode_fvecs(bytes: &[u8], path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let (dim, words) = parse_vecs(path, bytes)?;
    if words.is_empty() {
        return Err(Error::format(path, "file contains no vectors"));
    }
    let data = words.into_iter().map(f32::from_le_bytes).collect();
    Dataset::new(dim, data).map_err(|e| Error::format(path, e.to_string()))
}

/// fvecs layout of a dataset. Empty datasets are rejected.
pub fn encode_fvecs(dataset: &Dataset) -> Result<Vec<u8>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if i32::try_from(dataset.dim()).is_err() {
        return Err(Error::param("dimension exceeds i32"));
    }
    Ok(encode_vecs(dataset.dim(), dataset.as_slice().iter().map(|v| v.to_le_bytes())))
}

/// Reads every vector of an fvecs file. An empty file yields an error since
/// the dimension is unknown.
pub fn read_fvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    decode_fvecs(&read_all(path)?, path)
}

/// Reads the first `limit` vectors of an fvecs file.
pub fn read_fvecs_prefix(path: impl AsRef<Path>, limit: usize) -> Result<Dataset> {
    let ds = read_fvecs(path)?;
    let n = limit.min(ds.len());
    Ok(ds.split_at(n).0)
}

pub fn write_fvecs(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_bytes(path.as_ref(), &encode_fvecs(dataset)?)
}

/// Reads an ivecs file as rows of equal length.
pub fn read_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    let path = path.as_ref();
    let (dim, words) = parse_vecs(path, &read_all(path)?)?;
    let flat: Vec<i32> = words.into_iter().map(i32::from_le_bytes).collect();
    Ok(flat.chunks(dim.max(1)).map(<[i32]>::to_vec).collect())
}

pub fn write_ivecs(rows: &[Vec<i32>], path: impl AsRef<Path>) -> Result<()> {
    let dim = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || dim == 0 {
        return Err(Error::param("ivecs needs at least one non-empty row"));
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.len(),
        });
    }
    write_bytes(path.as_ref(), &encode_vecs(dim, rows.iter().flatten().map(|v| v.to_le_bytes())))
}

/// Parses a JSON-lines workload. Blank lines are skipped; all vectors must
/// share one dimension.
pub fn read_queries(path: impl AsRef<Path>) -> Result<Vec<QueryRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<QueryRecord> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let rec: QueryRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        if !(rec.tau >= 0.0) || !rec.tau.is_finite() {
            return Err(parse_err(format!("tau {} must be finite and >= 0", rec.tau)));
        }
        if rec.vector.is_empty() || rec.vector.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("vector must be non-empty and finite".into()));
        }
        if let Some(first) = out.first() {
            if first.vector.len() != rec.vector.len() {
                return Err(parse_err(format!(
                    "vector has dimension {}, expected {}",
                    rec.vector.len(),
                    first.vector.len()
                )));
            }
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_queries(records: &[QueryRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut out, rec)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

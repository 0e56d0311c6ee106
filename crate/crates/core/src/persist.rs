//! On-disk formats.
//!
//! Chain files are binary and columnar:
//!
//! ```text
//! magic    b"FMCHAIN\0"                8 bytes
//! version  u8
//! hlen     u64 LE                      length of the JSON header
//! header   JSON (ChainHeader)
//! initial  d × f64 LE
//! samples  d columns × total × f64 LE
//! accepted total × u8 (0 or 1)
//! steps    total × f64 LE
//! sha256   32 bytes over everything above
//! ```
//!
//! The header is also written next to the chain as `<file>.json` for humans;
//! readers only trust the embedded copy. Wall-clock timings are kept apart in
//! `<file>.timing.json` so that chain files reproduce byte for byte.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::samplers::{ChainRecord, ChainTiming, PhaseMarks, SamplerKind};

pub const CHAIN_MAGIC: &[u8; 8] = b"FMCHAIN\0";
pub const CHAIN_VERSION: u8 = 1;
pub const JSON_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: not a chain file (bad magic)")]
    BadMagic { path: PathBuf },
    #[error("{path}: unsupported format version {found} (this build reads {expected})")]
    Version {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: corrupt file: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, PersistError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainHeader {
    pub format: String,
    pub version: u32,
    pub sampler: SamplerKind,
    pub dim: usize,
    pub seed: u64,
    pub total: usize,
    pub marks: PhaseMarks,
    pub nonfinite_rejections: u64,
    /// Hash of the experiment configuration that produced the chain, if any.
    pub config_hash: Option<String>,
}

impl ChainHeader {
    pub fn of(record: &ChainRecord, config_hash: Option<&str>) -> Self {
        ChainHeader {
            format: "fisher-mala-chain".into(),
            version: CHAIN_VERSION as u32,
            sampler: record.sampler,
            dim: record.dim,
            seed: record.seed,
            total: record.len(),
            marks: record.marks,
            nonfinite_rejections: record.nonfinite_rejections,
            config_hash: config_hash.map(str::to_owned),
        }
    }
}

/// Serializes a record to the binary layout described in the module docs.
pub fn encode_chain(record: &ChainRecord, config_hash: Option<&str>) -> Vec<u8> {
    let header =
        serde_json::to_vec(&ChainHeader::of(record, config_hash)).expect("header serializes");
    let (n, d) = (record.len(), record.dim);
    let mut buf = Vec::with_capacity(64 + header.len() + 8 * (d + n * d + n) + n);
    buf.extend_from_slice(CHAIN_MAGIC);
    buf.push(CHAIN_VERSION);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for v in &record.initial {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for j in 0..d {
        for i in 0..n {
            buf.extend_from_slice(&record.samples[i * d + j].to_le_bytes());
        }
    }
    buf.extend(record.accepted.iter().map(|&a| a as u8));
    for v in &record.step_sizes {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| PersistError::Corrupt {
                path: self.path.to_path_buf(),
                reason: format!("truncated at byte {} (wanted {n} more)", self.pos),
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(
            n.checked_mul(8)
                .ok_or_else(|| self.corrupt("length overflow"))?,
        )?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn corrupt(&self, reason: &str) -> PersistError {
        PersistError::Corrupt {
            path: self.path.to_path_buf(),
            reason: reason.to_owned(),
        }
    }
}

/// Parses a chain file image; `path` is only used in error messages.
pub fn decode_chain(bytes: &[u8], path: &Path) -> Result<(ChainHeader, ChainRecord)> {
    if bytes.len() < CHAIN_MAGIC.len() || &bytes[..CHAIN_MAGIC.len()] != CHAIN_MAGIC {
        return Err(PersistError::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < CHAIN_MAGIC.len() + 1 + 8 + 32 {
        return Err(PersistError::Corrupt {
            path: path.to_path_buf(),
            reason: "file too short".into(),
        });
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(PersistError::Corrupt {
            path: path.to_path_buf(),
            reason: "checksum mismatch".into(),
        });
    }
    let mut cur = Cursor {
        bytes: body,
        pos: CHAIN_MAGIC.len(),
        path,
    };
    let version = cur.take(1)?[0];
    if version != CHAIN_VERSION {
        return Err(PersistError::Version {
            path: path.to_path_buf(),
            found: version as u32,
            expected: CHAIN_VERSION as u32,
        });
    }
    let hlen = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
    let header: ChainHeader =
        serde_json::from_slice(cur.take(hlen)?).map_err(|source| PersistError::Json {
            path: path.to_path_buf(),
            source,
        })?;
    let (n, d) = (header.total, header.dim);
    let initial = cur.f64s(d)?;
    let columns = cur.f64s(
        n.checked_mul(d)
            .ok_or_else(|| cur.corrupt("length overflow"))?,
    )?;
    let mut samples = vec![0.0; n * d];
    for j in 0..d {
        for i in 0..n {
            samples[i * d + j] = columns[j * n + i];
        }
    }
    let accepted = cur
        .take(n)?
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(cur.corrupt("acceptance flag is neither 0 nor 1")),
        })
        .collect::<Result<Vec<bool>>>()?;
    let step_sizes = cur.f64s(n)?;
    if cur.pos != body.len() {
        return Err(cur.corrupt("trailing bytes after the step-size column"));
    }
    let record = ChainRecord {
        sampler: header.sampler,
        dim: d,
        seed: header.seed,
        initial,
        samples,
        accepted,
        step_sizes,
        marks: header.marks,
        nonfinite_rejections: header.nonfinite_rejections,
    };
    record
        .check_consistency()
        .map_err(|reason| PersistError::Corrupt {
            path: path.to_path_buf(),
            reason,
        })?;
    Ok((header, record))
}

pub fn sidecar_path(chain: &Path) -> PathBuf {
    let mut s = chain.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn timing_path(chain: &Path) -> PathBuf {
    let mut s = chain.as_os_str().to_owned();
    s.push(".timing.json");
    PathBuf::from(s)
}

/// Writes the chain file and its JSON header sidecar.
pub fn write_chain(path: &Path, record: &ChainRecord, config_hash: Option<&str>) -> Result<()> {
    fs::write(path, encode_chain(record, config_hash)).map_err(io_err(path))?;
    write_json(&sidecar_path(path), &ChainHeader::of(record, config_hash))
}

pub fn read_chain(path: &Path) -> Result<(ChainHeader, ChainRecord)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_chain(&bytes, path)
}

pub fn write_timing(chain: &Path, timing: &ChainTiming) -> Result<()> {
    write_json(&timing_path(chain), timing)
}

/// Timing sidecar, if one was written.
pub fn read_timing(chain: &Path) -> Result<Option<ChainTiming>> {
    let path = timing_path(chain);
    if !path.exists() {
        return Ok(None);
    }
    read_json(&path).map(Some)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|source| PersistError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push(b'\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    serde_json::from_slice(&bytes).map_err(|source| PersistError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Wrapper carrying a format name and version around any JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Versioned<T> {
    pub format: String,
    pub version: u32,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Versioned<T> {
    pub fn new(format: &str, body: T) -> Self {
        Versioned {
            format: format.to_owned(),
            version: JSON_VERSION,
            body,
        }
    }
}

/// Reads a [`Versioned`] document, checking format name and version.
pub fn read_versioned<T: DeserializeOwned>(path: &Path, format: &str) -> Result<T> {
    let doc: Versioned<T> = read_json(path)?;
    if doc.format != format {
        return Err(PersistError::Corrupt {
            path: path.to_path_buf(),
            reason: format!("expected a `{format}` document, found `{}`", doc.format),
        });
    }
    if doc.version != JSON_VERSION {
        return Err(PersistError::Version {
            path: path.to_path_buf(),
            found: doc.version,
            expected: JSON_VERSION,
        });
    }
    Ok(doc.body)
}

/// Collection-phase samples as CSV, one row per iteration.
pub fn write_chain_csv<W: Write>(out: &mut W, record: &ChainRecord) -> io::Result<()> {
    let names: Vec<String> = (0..record.dim).map(|j| format!("x{j}")).collect();
    writeln!(out, "iteration,accepted,{}", names.join(","))?;
    for i in record.marks.collection() {
        let row: Vec<String> = record.sample(i).iter().map(|v| format!("{v:e}")).collect();
        writeln!(out, "{i},{},{}", record.accepted[i] as u8, row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ChainRecord {
        ChainRecord {
            sampler: SamplerKind::FisherMala,
            dim: 2,
            seed: 9,
            initial: vec![0.5, -0.5],
            samples: vec![1.0, 2.0, 3.0, f64::MIN_POSITIVE, -0.0, 1e300],
            accepted: vec![true, false, true],
            step_sizes: vec![0.1, 0.1, 0.2],
            marks: PhaseMarks {
                init_end: 1,
                warmup_end: 1,
                burn_in_end: 2,
                total: 3,
            },
            nonfinite_rejections: 1,
        }
    }

    #[test]
    fn encode_decode_round_trip() {
        let r = tiny();
        let bytes = encode_chain(&r, Some("abc"));
        let (h, back) = decode_chain(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.samples[4].to_bits(), (-0.0f64).to_bits());
        assert_eq!(h.config_hash.as_deref(), Some("abc"));
    }

    #[test]
    fn corruption_is_detected() {
        let mut bytes = encode_chain(&tiny(), None);
        let k = bytes.len() - 40;
        bytes[k] ^= 1;
        assert!(matches!(
            decode_chain(&bytes, Path::new("mem")),
            Err(PersistError::Corrupt { .. })
        ));
        assert!(matches!(
            decode_chain(b"NOTACHAINFILE", Path::new("mem")),
            Err(PersistError::BadMagic { .. })
        ));
        let bytes = encode_chain(&tiny(), None);
        assert!(decode_chain(&bytes[..bytes.len() - 1], Path::new("mem")).is_err());
    }
}

//! Lite-mode representation cache: the encoder output with passage tokens
//! already mean-pooled into sentence vectors.
//!
//! On disk this is the `DMNC` container, laid out like `TOKR` except that the
//! passage length is omitted and the passage tokens are replaced by
//! `M x enc_dim` sentence vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::codec::{self, Decoder};
use super::tokrep::{check_sentence_ends, read_id, sized, TokenReprRecord};
use super::{Matrix32, FORMAT_VERSION};
use crate::{Error, Result};

pub const CACHE_MAGIC: [u8; 4] = *b"DMNC";

#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub qid: String,
    pub pid: String,
    pub cls: Vec<f32>,
    pub query_tokens: Matrix32,
    pub sentence_ends: Vec<u32>,
    pub sentence_vectors: Matrix32,
}

impl CacheRecord {
    /// Pools every sentence range of `rec` into its arithmetic mean. Sums are
    /// accumulated in double precision.
    pub fn from_tokrep(rec: &TokenReprRecord) -> Self {
        let dim = rec.enc_dim();
        let mut pooled = Vec::with_capacity(rec.sentence_count() * dim);
        let mut acc = vec![0f64; dim];
        for range in rec.sentence_ranges() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let len = range.len() as f64;
            for t in range {
                for (a, &v) in acc.iter_mut().zip(rec.passage_tokens.row(t)) {
                    *a += f64::from(v);
                }
            }
            pooled.extend(acc.iter().map(|a| (a / len) as f32));
        }
        Self {
            qid: rec.qid.clone(),
            pid: rec.pid.clone(),
            cls: rec.cls.clone(),
            query_tokens: rec.query_tokens.clone(),
            sentence_ends: rec.sentence_ends.clone(),
            sentence_vectors: Matrix32::new(rec.sentence_count(), dim, pooled).expect("pooled shape"),
        }
    }

    pub fn enc_dim(&self) -> usize {
        self.cls.len()
    }

    fn check(&self) -> std::result::Result<(), String> {
        let dim = self.enc_dim();
        if self.qid.is_empty() || self.pid.is_empty() {
            return Err("empty qid or pid".into());
        }
        if dim == 0 || self.query_tokens.cols() != dim || self.sentence_vectors.cols() != dim {
            return Err("inconsistent enc_dim".into());
        }
        if self.query_tokens.rows() == 0 {
            return Err("no query tokens".into());
        }
        if self.sentence_vectors.rows() != self.sentence_ends.len() {
            return Err("sentence vector count differs from sentence_ends".into());
        }
        check_sentence_ends(&self.sentence_ends, None)?;
        let finite = self.cls.iter().all(|v| v.is_finite())
            && self.query_tokens.as_slice().iter().all(|v| v.is_finite())
            && self.sentence_vectors.as_slice().iter().all(|v| v.is_finite());
        if !finite {
            return Err("non-finite value".into());
        }
        Ok(())
    }
}

/// Cache records keyed by `(qid, pid)`. Immutable once built, so it can be
/// shared freely between scoring threads.
#[derive(Debug, Clone, Default)]
pub struct CacheStore {
    enc_dim: usize,
    records: Vec<CacheRecord>,
    index: HashMap<String, HashMap<String, usize>>,
}

impl CacheStore {
    pub fn new(enc_dim: usize) -> Self {
        Self {
            enc_dim,
            ..Self::default()
        }
    }

    pub fn enc_dim(&self) -> usize {
        self.enc_dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn insert(&mut self, rec: CacheRecord) -> Result<()> {
        if rec.enc_dim() != self.enc_dim {
            return Err(Error::Shape {
                op: "cache insert",
                detail: format!(
                    "record enc_dim {} in a cache of enc_dim {}",
                    rec.enc_dim(),
                    self.enc_dim
                ),
            });
        }
        let slot = self.index.entry(rec.qid.clone()).or_default();
        if slot.contains_key(&rec.pid) {
            return Err(Error::Duplicate {
                kind: "query-passage pair",
                id: format!("{}/{}", rec.qid, rec.pid),
            });
        }
        slot.insert(rec.pid.clone(), self.records.len());
        self.records.push(rec);
        Ok(())
    }

    pub fn get(&self, qid: &str, pid: &str) -> Option<&CacheRecord> {
        self.index.get(qid).and_then(|m| m.get(pid)).map(|&i| &self.records[i])
    }

    pub fn require(&self, qid: &str, pid: &str) -> Result<&CacheRecord> {
        self.get(qid, pid).ok_or_else(|| Error::CacheMiss {
            qid: qid.to_owned(),
            pid: pid.to_owned(),
        })
    }

    /// Records in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &CacheRecord> {
        self.records.iter()
    }

    /// SHA-256 of the serialized store.
    pub fn checksum(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        encode_into(&mut hasher, self).expect("hashing is infallible");
        hasher.finalize().into()
    }
}

/// Pools a stream of token records into a cache.
pub fn build_cache<I>(enc_dim: usize, records: I) -> Result<CacheStore>
where
    I: IntoIterator<Item = Result<TokenReprRecord>>,
{
    let mut store = CacheStore::new(enc_dim);
    for rec in records {
        store.insert(CacheRecord::from_tokrep(&rec?))?;
    }
    Ok(store)
}

/// Streaming reader over a `DMNC` container.
pub struct CacheReader<R> {
    dec: Decoder<R>,
    enc_dim: u32,
    count: u64,
    next: u64,
    done: bool,
}

impl<R: Read> CacheReader<R> {
    pub fn new(reader: R) -> Result<Self> {
        let mut dec = Decoder::new(reader);
        let header = |e: std::io::Error| {
            if codec::is_eof(&e) {
                Error::Format("truncated header".into())
            } else {
                Error::Io(e)
            }
        };
        let magic: [u8; 4] = dec.array().map_err(header)?;
        if magic != CACHE_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected DMNC")));
        }
        let version = dec.u32().map_err(header)?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let enc_dim = dec.u32().map_err(header)?;
        if enc_dim == 0 {
            return Err(Error::Format("enc_dim is zero".into()));
        }
        let count = dec.u64().map_err(header)?;
        Ok(Self {
            dec,
            enc_dim,
            count,
            next: 0,
            done: false,
        })
    }

    pub fn enc_dim(&self) -> usize {
        self.enc_dim as usize
    }

    fn read_record(&mut self) -> Result<CacheRecord> {
        let index = self.next;
        let dim = self.enc_dim as usize;
        let io = |e: std::io::Error| {
            if codec::is_eof(&e) {
                Error::corrupt(index, "truncated")
            } else {
                Error::Io(e)
            }
        };
        let qid = read_id(&mut self.dec, index, "qid")?;
        let pid = read_id(&mut self.dec, index, "pid")?;
        let n = self.dec.u32().map_err(io)?;
        let m = self.dec.u32().map_err(io)?;
        if n == 0 || m == 0 {
            return Err(Error::corrupt(index, format!("empty dimension N={n} M={m}")));
        }
        let sentence_ends = self.dec.u32s(m as usize).map_err(io)?;
        check_sentence_ends(&sentence_ends, None).map_err(|msg| Error::corrupt(index, msg))?;
        let cls = self.dec.f32s(dim).map_err(io)?;
        let query = self.dec.f32s(sized(n, dim, index)?).map_err(io)?;
        let sentences = self.dec.f32s(sized(m, dim, index)?).map_err(io)?;
        let rec = CacheRecord {
            qid,
            pid,
            cls,
            query_tokens: Matrix32::new(n as usize, dim, query)?,
            sentence_ends,
            sentence_vectors: Matrix32::new(m as usize, dim, sentences)?,
        };
        rec.check().map_err(|msg| Error::corrupt(index, msg))?;
        Ok(rec)
    }
}

impl<R: Read> Iterator for CacheReader<R> {
    type Item = Result<CacheRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        if self.next == self.count {
            self.done = true;
            return match self.dec.at_eof() {
                Ok(true) => None,
                Ok(false) => Some(Err(Error::Format(format!(
                    "trailing bytes after {} records",
                    self.count
                )))),
                Err(e) => Some(Err(e.into())),
            };
        }
        let item = self.read_record();
        self.next += 1;
        if item.is_err() {
            self.done = true;
        }
        Some(item)
    }
}

fn encode_into<W: Write>(w: &mut W, store: &CacheStore) -> Result<()> {
    w.write_all(&CACHE_MAGIC)?;
    codec::put_u32(w, FORMAT_VERSION)?;
    codec::put_u32(w, store.enc_dim as u32)?;
    codec::put_u64(w, store.records.len() as u64)?;
    for rec in &store.records {
        codec::put_str(w, &rec.qid)?;
        codec::put_str(w, &rec.pid)?;
        codec::put_u32(w, rec.query_tokens.rows() as u32)?;
        codec::put_u32(w, rec.sentence_ends.len() as u32)?;
        for &e in &rec.sentence_ends {
            codec::put_u32(w, e)?;
        }
        codec::put_f32s(w, &rec.cls)?;
        codec::put_f32s(w, rec.query_tokens.as_slice())?;
        codec::put_f32s(w, rec.sentence_vectors.as_slice())?;
    }
    Ok(())
}

pub fn encode_cache(store: &CacheStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_into(&mut out, store)?;
    Ok(out)
}

fn collect<R: Read>(reader: CacheReader<R>) -> Result<CacheStore> {
    let mut store = CacheStore::new(reader.enc_dim());
    for rec in reader {
        store.insert(rec?)?;
    }
    Ok(store)
}

pub fn decode_cache(bytes: &[u8]) -> Result<CacheStore> {
    collect(CacheReader::new(bytes)?)
}

pub fn read_cache(path: impl AsRef<Path>) -> Result<CacheStore> {
    collect(CacheReader::new(BufReader::new(File::open(path)?))?)
}

pub fn write_cache(path: impl AsRef<Path>, store: &CacheStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_into(&mut w, store)?;
    w.flush()?;
    Ok(())
}

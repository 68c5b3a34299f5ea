//! Dataset ingestion and the on-disk formats shared with the encoder export
//! tool.
//!
//! All floating point payloads in the binary formats are little-endian IEEE
//! single precision.

mod cache;
pub(crate) mod codec;
mod run;
mod text;
mod tokrep;

pub use cache::{
    build_cache, decode_cache, encode_cache, read_cache, write_cache, CacheReader, CacheRecord, CacheStore, CACHE_MAGIC,
};
pub use run::{parse_run, read_run, write_run, write_run_to, RankedRun};
pub use text::{
    load_passages, load_pools, load_qrels, load_queries, parse_pools, parse_qrels, parse_tsv, CandidatePool,
    PassageRecord, Qrels, QueryRecord,
};
pub use tokrep::{
    decode_tokrep, encode_tokrep, read_tokrep, write_tokrep, TokenReprRecord, TokrepReader, TokrepWriter,
    FORMAT_VERSION, TOKREP_MAGIC,
};

/// Dense row-major matrix of single precision values, one row per token or
/// sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix32 {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix32 {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> crate::Result<Self> {
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(crate::Error::Shape {
                op: "matrix",
                detail: format!("{rows}x{cols} does not hold {} values", data.len()),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> crate::Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(crate::Error::Shape {
                op: "matrix",
                detail: "ragged rows".into(),
            });
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f32]> + '_ {
        // chunks_exact panics on zero; a 0-column matrix has no meaningful rows.
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }
}

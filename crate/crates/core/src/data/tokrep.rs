//! The `TOKR` token-representation container.
//!
//! ```text
//! header: "TOKR" | version u32 | enc_dim u32 | record_count u64
//! record: qid_len u32 | qid | pid_len u32 | pid | N u32 | T u32 | M u32
//!         | sentence_ends M x u32 | cls enc_dim x f32
//!         | query_tokens N x enc_dim x f32 | passage_tokens T x enc_dim x f32
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Cursor, Read, Seek, SeekFrom, Write};
use std::ops::Range;
use std::path::Path;

use super::codec::{self, Decoder, MAX_ID_LEN};
use super::Matrix32;
use crate::{Error, Result};

pub const TOKREP_MAGIC: [u8; 4] = *b"TOKR";
pub const FORMAT_VERSION: u32 = 1;

/// Encoder output for one query-passage pair with separator outputs removed.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenReprRecord {
    pub qid: String,
    pub pid: String,
    pub cls: Vec<f32>,
    pub query_tokens: Matrix32,
    pub passage_tokens: Matrix32,
    /// Exclusive end offset of every sentence in `passage_tokens`; the last
    /// entry equals the passage length.
    pub sentence_ends: Vec<u32>,
}

impl TokenReprRecord {
    pub fn enc_dim(&self) -> usize {
        self.cls.len()
    }

    pub fn sentence_count(&self) -> usize {
        self.sentence_ends.len()
    }

    /// Half-open token ranges of the sentences, in order.
    pub fn sentence_ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        let mut start = 0usize;
        self.sentence_ends.iter().map(move |&end| {
            let r = start..end as usize;
            start = end as usize;
            r
        })
    }

    /// Checks every structural invariant, returning a description of the
    /// first violation.
    pub fn check(&self) -> std::result::Result<(), String> {
        if self.qid.is_empty() || self.pid.is_empty() {
            return Err("empty qid or pid".into());
        }
        let dim = self.enc_dim();
        if dim == 0 {
            return Err("empty cls vector".into());
        }
        if self.query_tokens.cols() != dim || self.passage_tokens.cols() != dim {
            return Err(format!(
                "token width {}/{} differs from enc_dim {dim}",
                self.query_tokens.cols(),
                self.passage_tokens.cols()
            ));
        }
        if self.query_tokens.rows() == 0 {
            return Err("no query tokens".into());
        }
        if self.passage_tokens.rows() == 0 {
            return Err("no passage tokens".into());
        }
        check_sentence_ends(&self.sentence_ends, Some(self.passage_tokens.rows() as u32))?;
        let finite = self.cls.iter().all(|v| v.is_finite())
            && self.query_tokens.as_slice().iter().all(|v| v.is_finite())
            && self.passage_tokens.as_slice().iter().all(|v| v.is_finite());
        if !finite {
            return Err("non-finite value".into());
        }
        Ok(())
    }
}

/// Sentence ends must be non-empty, strictly increasing, start above zero and,
/// when the passage length is known, finish exactly at it.
pub(crate) fn check_sentence_ends(ends: &[u32], total: Option<u32>) -> std::result::Result<(), String> {
    let Some(&last) = ends.last() else {
        return Err("no sentences".into());
    };
    let mut prev = 0u32;
    for &e in ends {
        if e <= prev {
            return Err(format!("sentence_ends not strictly increasing: {ends:?}"));
        }
        prev = e;
    }
    if let Some(t) = total {
        if last != t {
            return Err(format!("last sentence end {last} differs from passage length {t}"));
        }
    }
    Ok(())
}

/// Streaming reader over a `TOKR` container.
///
/// Every record is fully validated before it is yielded. Iteration stops
/// after the first error.
pub struct TokrepReader<R> {
    dec: Decoder<R>,
    enc_dim: u32,
    count: u64,
    next: u64,
    done: bool,
}

impl TokrepReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Self::new(BufReader::new(File::open(path)?))
    }
}

impl<R: Read> TokrepReader<R> {
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
        if magic != TOKREP_MAGIC {
            return Err(Error::Format(format!("bad magic {magic:?}, expected TOKR")));
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

    pub fn record_count(&self) -> u64 {
        self.count
    }

    fn read_record(&mut self) -> Result<TokenReprRecord> {
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
        let t = self.dec.u32().map_err(io)?;
        let m = self.dec.u32().map_err(io)?;
        if n == 0 || t == 0 || m == 0 {
            return Err(Error::corrupt(index, format!("empty dimension N={n} T={t} M={m}")));
        }
        if m > t {
            return Err(Error::corrupt(index, format!("{m} sentences over {t} tokens")));
        }
        let sentence_ends = self.dec.u32s(m as usize).map_err(io)?;
        check_sentence_ends(&sentence_ends, Some(t)).map_err(|msg| Error::corrupt(index, msg))?;
        let cls = self.dec.f32s(dim).map_err(io)?;
        let query = self.dec.f32s(sized(n, dim, index)?).map_err(io)?;
        let passage = self.dec.f32s(sized(t, dim, index)?).map_err(io)?;
        let record = TokenReprRecord {
            qid,
            pid,
            cls,
            query_tokens: Matrix32::new(n as usize, dim, query)?,
            passage_tokens: Matrix32::new(t as usize, dim, passage)?,
            sentence_ends,
        };
        record.check().map_err(|msg| Error::corrupt(index, msg))?;
        Ok(record)
    }
}

pub(crate) fn sized(rows: u32, dim: usize, index: u64) -> Result<usize> {
    (rows as usize)
        .checked_mul(dim)
        .ok_or_else(|| Error::corrupt(index, "payload size overflows"))
}

pub(crate) fn read_id<R: Read>(dec: &mut Decoder<R>, index: u64, what: &str) -> Result<String> {
    let io = |e: std::io::Error| {
        if codec::is_eof(&e) {
            Error::corrupt(index, "truncated")
        } else {
            Error::Io(e)
        }
    };
    let len = dec.u32().map_err(io)?;
    if len == 0 || len > MAX_ID_LEN {
        return Err(Error::corrupt(index, format!("{what} length {len} out of range")));
    }
    let raw = dec.bytes(len as usize).map_err(io)?;
    String::from_utf8(raw).map_err(|_| Error::corrupt(index, format!("{what} is not UTF-8")))
}

impl<R: Read> Iterator for TokrepReader<R> {
    type Item = Result<TokenReprRecord>;

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

/// Writes `TOKR` records, patching the record count into the header on
/// [`finish`](TokrepWriter::finish).
pub struct TokrepWriter<W: Write + Seek> {
    out: W,
    enc_dim: u32,
    count: u64,
}

impl<W: Write + Seek> TokrepWriter<W> {
    pub fn new(mut out: W, enc_dim: usize) -> Result<Self> {
        let enc_dim = u32::try_from(enc_dim)
            .ok()
            .filter(|&d| d > 0)
            .ok_or_else(|| Error::Format(format!("invalid enc_dim {enc_dim}")))?;
        out.write_all(&TOKREP_MAGIC)?;
        codec::put_u32(&mut out, FORMAT_VERSION)?;
        codec::put_u32(&mut out, enc_dim)?;
        codec::put_u64(&mut out, 0)?;
        Ok(Self { out, enc_dim, count: 0 })
    }

    pub fn write(&mut self, rec: &TokenReprRecord) -> Result<()> {
        if rec.enc_dim() != self.enc_dim as usize {
            return Err(Error::Shape {
                op: "write_tokrep",
                detail: format!("record enc_dim {} in a file of enc_dim {}", rec.enc_dim(), self.enc_dim),
            });
        }
        rec.check().map_err(|msg| Error::corrupt(self.count, msg))?;
        let w = &mut self.out;
        codec::put_str(w, &rec.qid)?;
        codec::put_str(w, &rec.pid)?;
        codec::put_u32(w, rec.query_tokens.rows() as u32)?;
        codec::put_u32(w, rec.passage_tokens.rows() as u32)?;
        codec::put_u32(w, rec.sentence_ends.len() as u32)?;
        for &e in &rec.sentence_ends {
            codec::put_u32(w, e)?;
        }
        codec::put_f32s(w, &rec.cls)?;
        codec::put_f32s(w, rec.query_tokens.as_slice())?;
        codec::put_f32s(w, rec.passage_tokens.as_slice())?;
        self.count += 1;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.out.seek(SeekFrom::Start(12))?;
        codec::put_u64(&mut self.out, self.count)?;
        self.out.seek(SeekFrom::End(0))?;
        self.out.flush()?;
        Ok(self.out)
    }
}

pub fn read_tokrep(path: impl AsRef<Path>) -> Result<TokrepReader<BufReader<File>>> {
    TokrepReader::open(path)
}

pub fn write_tokrep<'a, I>(path: impl AsRef<Path>, enc_dim: usize, records: I) -> Result<u64>
where
    I: IntoIterator<Item = &'a TokenReprRecord>,
{
    let mut w = TokrepWriter::new(BufWriter::new(File::create(path)?), enc_dim)?;
    for rec in records {
        w.write(rec)?;
    }
    let count = w.count;
    w.finish()?.into_inner().map_err(|e| e.into_error())?;
    Ok(count)
}

pub fn encode_tokrep<'a, I>(enc_dim: usize, records: I) -> Result<Vec<u8>>
where
    I: IntoIterator<Item = &'a TokenReprRecord>,
{
    let mut w = TokrepWriter::new(Cursor::new(Vec::new()), enc_dim)?;
    for rec in records {
        w.write(rec)?;
    }
    Ok(w.finish()?.into_inner())
}

/// Decodes a whole in-memory container.
pub fn decode_tokrep(bytes: &[u8]) -> Result<Vec<TokenReprRecord>> {
    TokrepReader::new(bytes)?.collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(qid: &str, dim: usize, ends: Vec<u32>) -> TokenReprRecord {
        let t = *ends.last().unwrap() as usize;
        let val = |i: usize| (i as f32) * 0.25 - 1.0;
        TokenReprRecord {
            qid: qid.into(),
            pid: format!("{qid}-p"),
            cls: (0..dim).map(val).collect(),
            query_tokens: Matrix32::new(2, dim, (0..2 * dim).map(val).collect()).unwrap(),
            passage_tokens: Matrix32::new(t, dim, (0..t * dim).map(val).collect()).unwrap(),
            sentence_ends: ends,
        }
    }

    #[test]
    fn two_records_round_trip() {
        let recs = vec![record("q1", 4, vec![2, 3]), record("q2", 4, vec![1])];
        let bytes = encode_tokrep(4, &recs).unwrap();
        assert_eq!(&bytes[..4], b"TOKR");
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 2);
        assert_eq!(decode_tokrep(&bytes).unwrap(), recs);
    }

    #[test]
    fn empty_stream_is_header_only() {
        let bytes = encode_tokrep(4, []).unwrap();
        assert_eq!(bytes.len(), 20);
        assert!(decode_tokrep(&bytes).unwrap().is_empty());
    }

    #[test]
    fn mixed_enc_dim_rejected() {
        let recs = [record("q1", 4, vec![2]), record("q2", 8, vec![2])];
        assert!(matches!(encode_tokrep(4, &recs), Err(Error::Shape { .. })));
    }

    #[test]
    fn zero_enc_dim_header_rejected() {
        let mut bytes = encode_tokrep(4, []).unwrap();
        bytes[8..12].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(decode_tokrep(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = encode_tokrep(4, []).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_tokrep(&bytes), Err(Error::Format(_))));
        let mut bytes = encode_tokrep(4, []).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode_tokrep(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn decreasing_sentence_ends_is_corrupt_record() {
        let good = record("q1", 2, vec![2, 3]);
        let mut bad = record("q2", 2, vec![2, 3]);
        bad.sentence_ends = vec![3, 2];
        // Bypass the writer's validation to produce the corrupt bytes.
        let mut bytes = encode_tokrep(2, [&good, &good]).unwrap();
        let second = encode_tokrep(2, [&good]).unwrap().len();
        let offset = second + 4 + 2 + 4 + 4 + 12;
        bytes[offset..offset + 4].copy_from_slice(&3u32.to_le_bytes());
        bytes[offset + 4..offset + 8].copy_from_slice(&2u32.to_le_bytes());
        match decode_tokrep(&bytes) {
            Err(Error::CorruptRecord { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected corrupt record, got {other:?}"),
        }
        assert!(bad.check().is_err());
    }

    #[test]
    fn truncation_is_located() {
        let recs = [record("q1", 4, vec![3]), record("q2", 4, vec![3])];
        let bytes = encode_tokrep(4, &recs).unwrap();
        match decode_tokrep(&bytes[..bytes.len() - 3]) {
            Err(Error::CorruptRecord { index, message }) => {
                assert_eq!(index, 1);
                assert!(message.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_tokrep(&bytes[..10]), Err(Error::Format(_))));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_tokrep(4, [&record("q1", 4, vec![1])]).unwrap();
        bytes.push(0);
        assert!(matches!(decode_tokrep(&bytes), Err(Error::Format(_))));
    }

    #[test]
    fn non_finite_payload_rejected() {
        let mut rec = record("q1", 2, vec![1]);
        rec.cls[0] = f32::NAN;
        assert!(rec.check().is_err());
    }

    #[test]
    fn sentence_ranges_partition_passage() {
        let rec = record("q", 2, vec![1, 4, 6]);
        let ranges: Vec<_> = rec.sentence_ranges().collect();
        assert_eq!(ranges, vec![0..1, 1..4, 4..6]);
    }
}

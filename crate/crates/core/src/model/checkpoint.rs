//! The `DMNW` checkpoint container.
//!
//! ```text
//! "DMNW" | version u32 | kind u32 (0 = memory network, 1 = CLS head)
//! | enc_dim u32 | hidden u32 | gate_hidden u32 | episodes u32 | tensor_count u32
//! tensor: rows u32 | cols u32 (0 for vectors) | rows x max(cols, 1) x f64
//! ```
//!
//! Tensors follow [`ModelParams::params`] order. All integers and floats are
//! little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autodiff::Shape;
use crate::data::codec::{self, Decoder};
use crate::data::FORMAT_VERSION;
use crate::{Error, Result};

use super::{AnyModel, ClsHead, ModelDims, ModelParams, Param, RankModel};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"DMNW";

const KIND_DMN: u32 = 0;
const KIND_CLS: u32 = 1;

fn put_param<W: Write>(w: &mut W, p: &Param) -> Result<()> {
    let (rows, cols) = match p.shape {
        Shape::Vector(n) => (n, 0),
        Shape::Matrix(r, c) => (r, c),
    };
    codec::put_u32(w, rows as u32)?;
    codec::put_u32(w, cols as u32)?;
    codec::put_f64s(w, &p.data)?;
    Ok(())
}

fn encode_into<W: Write>(w: &mut W, model: &AnyModel) -> Result<()> {
    let (kind, dims, params) = match model {
        AnyModel::Dmn(p) => (KIND_DMN, p.dims, p.params()),
        AnyModel::Cls(h) => (
            KIND_CLS,
            ModelDims {
                enc_dim: h.enc_dim(),
                hidden: 0,
                gate_hidden: 0,
                episodes: 0,
            },
            RankModel::params(h),
        ),
    };
    w.write_all(&CHECKPOINT_MAGIC)?;
    codec::put_u32(w, FORMAT_VERSION)?;
    codec::put_u32(w, kind)?;
    for d in [dims.enc_dim, dims.hidden, dims.gate_hidden, dims.episodes] {
        codec::put_u32(w, d as u32)?;
    }
    codec::put_u32(w, params.len() as u32)?;
    for p in params {
        put_param(w, p)?;
    }
    Ok(())
}

pub fn encode_checkpoint(model: &AnyModel) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    encode_into(&mut out, model)?;
    Ok(out)
}

pub fn write_checkpoint(path: impl AsRef<Path>, model: &AnyModel) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    encode_into(&mut w, model)?;
    w.flush()?;
    Ok(())
}

fn io_err(tensor: usize) -> impl Fn(std::io::Error) -> Error {
    move |e| {
        if codec::is_eof(&e) {
            Error::Format(format!("checkpoint truncated in tensor {tensor}"))
        } else {
            Error::Io(e)
        }
    }
}

/// Reads the tensors, checking each declared shape against `expected` before
/// its payload is read.
fn read_params<R: Read>(dec: &mut Decoder<R>, expected: &mut [&mut Param]) -> Result<()> {
    let count = dec.u32().map_err(io_err(0))? as usize;
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint holds {count} tensors, expected {}",
            expected.len()
        )));
    }
    for (i, slot) in expected.iter_mut().enumerate() {
        let rows = dec.u32().map_err(io_err(i))? as usize;
        let cols = dec.u32().map_err(io_err(i))? as usize;
        let shape = if cols == 0 {
            Shape::Vector(rows)
        } else {
            Shape::Matrix(rows, cols)
        };
        if shape != slot.shape || (cols == 0) != slot.is_bias {
            return Err(Error::Format(format!(
                "tensor {i} has shape {shape:?}, expected {:?}",
                slot.shape
            )));
        }
        let data = dec.f64s(shape.len()).map_err(io_err(i))?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Format(format!("tensor {i} holds non-finite values")));
        }
        slot.data = data;
    }
    Ok(())
}

/// Upper bound on parameters a checkpoint header may declare.
const MAX_PARAMS: u64 = 1 << 30;

fn decode_from<R: Read>(reader: R) -> Result<AnyModel> {
    let mut dec = Decoder::new(reader);
    let header = io_err(0);
    let magic: [u8; 4] = dec.array().map_err(&header)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad magic {magic:?}, expected DMNW")));
    }
    let version = dec.u32().map_err(&header)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let kind = dec.u32().map_err(&header)?;
    let mut d = [0usize; 4];
    for v in &mut d {
        *v = dec.u32().map_err(&header)? as usize;
    }
    let dims = ModelDims {
        enc_dim: d[0],
        hidden: d[1],
        gate_hidden: d[2],
        episodes: d[3],
    };
    let model = match kind {
        KIND_DMN => {
            dims.check().map_err(|e| Error::Format(e.to_string()))?;
            if dims.parameter_count().is_none_or(|n| n > MAX_PARAMS) {
                return Err(Error::Format(format!("implausible model dimensions {dims:?}")));
            }
            let mut p = ModelParams::unfilled(dims)?;
            read_params(&mut dec, &mut p.params_mut())?;
            AnyModel::Dmn(p)
        }
        KIND_CLS => {
            if dims.enc_dim == 0 || dims.enc_dim as u64 > MAX_PARAMS {
                return Err(Error::Format(format!("invalid CLS head width {}", dims.enc_dim)));
            }
            if dims.hidden != 0 || dims.gate_hidden != 0 || dims.episodes != 0 {
                return Err(Error::Format(
                    "CLS head checkpoint declares memory network dimensions".into(),
                ));
            }
            let mut h = ClsHead {
                w: Param {
                    shape: Shape::Matrix(1, dims.enc_dim),
                    data: Vec::new(),
                    is_bias: false,
                },
                b: Param::zeros_bias(1),
            };
            read_params(&mut dec, &mut RankModel::params_mut(&mut h))?;
            AnyModel::Cls(h)
        }
        other => return Err(Error::Format(format!("unknown model kind {other}"))),
    };
    if !dec.at_eof()? {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(model)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<AnyModel> {
    decode_from(bytes)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<AnyModel> {
    decode_from(BufReader::new(File::open(path)?))
}

//! The re-ranking models: the dynamic memory network and the CLS-only
//! baseline head.

mod checkpoint;
mod dmn;
mod params;

use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId};
use crate::data::CacheRecord;
use crate::{Error, Result};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use dmn::{
    att_gru_step_values, attention_gate_values, encode_facts, encode_question, forward_record, gru_step_values,
    run_episodes, run_episodes_with_fixed_gate, score, score_cls_baseline, EpisodicState, Forward,
};
pub use params::{AttGruParams, BoundDmn, ClsHead, GateNetParams, GruParams, ModelDims, ModelParams, Param};

/// Whether dropout is active, and the randomness that drives it.
pub enum Mode<'r> {
    Inference,
    Train { dropout: f64, rng: &'r mut ChaCha8Rng },
}

impl Mode<'_> {
    pub(crate) fn dropout(&mut self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        match self {
            Mode::Inference => Ok(x),
            Mode::Train { dropout, rng } => g.dropout(x, *dropout, true, *rng),
        }
    }
}

/// A scorer that can be trained by [`crate::training`].
pub trait RankModel: Clone + Send + Sync {
    /// Graph handles for the parameters, created by [`RankModel::bind`].
    type Bound;

    fn enc_dim(&self) -> usize;

    /// Parameters in a fixed order shared with [`RankModel::params_mut`] and
    /// the leaf list returned by [`RankModel::bind`].
    fn params(&self) -> Vec<&Param>;

    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn bind<'a>(&'a self, g: &mut Graph<'a>) -> Result<(Self::Bound, Vec<NodeId>)>;

    fn score_node(&self, g: &mut Graph, bound: &Self::Bound, rec: &CacheRecord, mode: &mut Mode) -> Result<NodeId>;

    fn score(&self, rec: &CacheRecord, mode: &mut Mode) -> Result<f64> {
        let mut g = Graph::new();
        let (bound, _) = self.bind(&mut g)?;
        let s = self.score_node(&mut g, &bound, rec, mode)?;
        Ok(g.scalar(s))
    }
}

impl RankModel for ModelParams {
    type Bound = BoundDmn;

    fn enc_dim(&self) -> usize {
        self.dims.enc_dim
    }

    fn params(&self) -> Vec<&Param> {
        ModelParams::params(self)
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        ModelParams::params_mut(self)
    }

    fn bind<'a>(&'a self, g: &mut Graph<'a>) -> Result<(BoundDmn, Vec<NodeId>)> {
        ModelParams::bind(self, g)
    }

    fn score_node(&self, g: &mut Graph, bound: &BoundDmn, rec: &CacheRecord, mode: &mut Mode) -> Result<NodeId> {
        dmn::forward(g, bound, self.dims.enc_dim, rec, mode).map(|f| f.score)
    }
}

impl RankModel for ClsHead {
    type Bound = (NodeId, NodeId);

    fn enc_dim(&self) -> usize {
        ClsHead::enc_dim(self)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    fn bind<'a>(&'a self, g: &mut Graph<'a>) -> Result<((NodeId, NodeId), Vec<NodeId>)> {
        let w = g.param(self.w.shape, &self.w.data)?;
        let b = g.param(self.b.shape, &self.b.data)?;
        Ok(((w, b), vec![w, b]))
    }

    /// Dropout on the CLS vector while training, then `sigmoid(w . cls + b)`.
    fn score_node(
        &self,
        g: &mut Graph,
        &(w, b): &(NodeId, NodeId),
        rec: &CacheRecord,
        mode: &mut Mode,
    ) -> Result<NodeId> {
        if rec.enc_dim() != self.enc_dim() {
            return Err(Error::Shape {
                op: "score_cls_baseline",
                detail: format!("record enc_dim {} vs head enc_dim {}", rec.enc_dim(), self.enc_dim()),
            });
        }
        let cls = g.vector(rec.cls.iter().map(|&v| f64::from(v)).collect())?;
        let cls = mode.dropout(g, cls)?;
        let logit = g.matvec(w, cls)?;
        let logit = g.add(logit, b)?;
        g.sigmoid(logit)
    }
}

/// Either kind of trained scorer, as stored in a checkpoint.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone, PartialEq)]
pub enum AnyModel {
    Dmn(ModelParams),
    Cls(ClsHead),
}

impl AnyModel {
    pub fn score(&self, rec: &CacheRecord) -> Result<f64> {
        match self {
            AnyModel::Dmn(p) => RankModel::score(p, rec, &mut Mode::Inference),
            AnyModel::Cls(h) => RankModel::score(h, rec, &mut Mode::Inference),
        }
    }
}

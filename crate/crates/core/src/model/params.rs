use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Shape};
use crate::{Error, Result};

/// One trainable tensor. Biases are exempt from weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Shape,
    pub data: Vec<f64>,
    pub is_bias: bool,
}

impl Param {
    pub fn zeros_matrix(rows: usize, cols: usize) -> Self {
        Self {
            shape: Shape::Matrix(rows, cols),
            data: vec![0.0; rows * cols],
            is_bias: false,
        }
    }

    pub fn zeros_bias(n: usize) -> Self {
        Self {
            shape: Shape::Vector(n),
            data: vec![0.0; n],
            is_bias: true,
        }
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (cols as f64).sqrt();
        Self {
            shape: Shape::Matrix(rows, cols),
            data: (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect(),
            is_bias: false,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    fn bind<'a>(&'a self, g: &mut Graph<'a>, leaves: &mut Vec<NodeId>) -> Result<NodeId> {
        let id = g.param(self.shape, &self.data)?;
        leaves.push(id);
        Ok(id)
    }
}

/// Standard GRU cell: update gate `z`, reset gate `r`, candidate `h~`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Param,
    pub u_z: Param,
    pub b_z: Param,
    pub w_r: Param,
    pub u_r: Param,
    pub b_r: Param,
    pub w_h: Param,
    pub u_h: Param,
    pub b_h: Param,
}

impl GruParams {
    fn build(input: usize, hidden: usize, m: &mut dyn FnMut(usize, usize) -> Param) -> Self {
        Self {
            w_z: m(hidden, input),
            u_z: m(hidden, hidden),
            b_z: Param::zeros_bias(hidden),
            w_r: m(hidden, input),
            u_r: m(hidden, hidden),
            b_r: Param::zeros_bias(hidden),
            w_h: m(hidden, input),
            u_h: m(hidden, hidden),
            b_h: Param::zeros_bias(hidden),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self::build(input, hidden, &mut Param::zeros_matrix)
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self::build(input, hidden, &mut |r, c| Param::uniform(r, c, rng))
    }

    pub fn input_dim(&self) -> usize {
        match self.w_z.shape {
            Shape::Matrix(_, c) => c,
            Shape::Vector(_) => 0,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.b_z.len()
    }

    fn parts(&self) -> [&Param; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h,
        ]
    }

    fn parts_mut(&mut self) -> [&mut Param; 9] {
        [
            &mut self.w_z,
            &mut self.u_z,
            &mut self.b_z,
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    pub(crate) fn bind<'a>(&'a self, g: &mut Graph<'a>, leaves: &mut Vec<NodeId>) -> Result<BoundGru> {
        let mut ids = [NodeId::default(); 9];
        for (id, p) in ids.iter_mut().zip(self.parts()) {
            *id = p.bind(g, leaves)?;
        }
        let [w_z, u_z, b_z, w_r, u_r, b_r, w_h, u_h, b_h] = ids;
        Ok(BoundGru {
            w_z,
            u_z,
            b_z,
            reset: BoundAttGru {
                w_r,
                u_r,
                b_r,
                w_h,
                u_h,
                b_h,
            },
        })
    }
}

/// The episodic cell: a GRU whose update gate is replaced by an externally
/// supplied attention gate, so it only owns reset and candidate weights.
#[derive(Debug, Clone, PartialEq)]
pub struct AttGruParams {
    pub w_r: Param,
    pub u_r: Param,
    pub b_r: Param,
    pub w_h: Param,
    pub u_h: Param,
    pub b_h: Param,
}

impl AttGruParams {
    fn build(input: usize, hidden: usize, m: &mut dyn FnMut(usize, usize) -> Param) -> Self {
        Self {
            w_r: m(hidden, input),
            u_r: m(hidden, hidden),
            b_r: Param::zeros_bias(hidden),
            w_h: m(hidden, input),
            u_h: m(hidden, hidden),
            b_h: Param::zeros_bias(hidden),
        }
    }

    pub fn zeros(input: usize, hidden: usize) -> Self {
        Self::build(input, hidden, &mut Param::zeros_matrix)
    }

    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        Self::build(input, hidden, &mut |r, c| Param::uniform(r, c, rng))
    }

    fn parts(&self) -> [&Param; 6] {
        [&self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h]
    }

    fn parts_mut(&mut self) -> [&mut Param; 6] {
        [
            &mut self.w_r,
            &mut self.u_r,
            &mut self.b_r,
            &mut self.w_h,
            &mut self.u_h,
            &mut self.b_h,
        ]
    }

    pub(crate) fn bind<'a>(&'a self, g: &mut Graph<'a>, leaves: &mut Vec<NodeId>) -> Result<BoundAttGru> {
        let mut ids = [NodeId::default(); 6];
        for (id, p) in ids.iter_mut().zip(self.parts()) {
            *id = p.bind(g, leaves)?;
        }
        let [w_r, u_r, b_r, w_h, u_h, b_h] = ids;
        Ok(BoundAttGru {
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
        })
    }
}

/// Two-layer gate network over similarity features of a fact, the previous
/// memory and the question.
#[derive(Debug, Clone, PartialEq)]
pub struct GateNetParams {
    /// `gate_hidden x 4d`
    pub w_1: Param,
    pub b_1: Param,
    /// `1 x gate_hidden`
    pub w_2: Param,
    pub b_2: Param,
}

impl GateNetParams {
    fn build(hidden: usize, gate_hidden: usize, m: &mut dyn FnMut(usize, usize) -> Param) -> Self {
        Self {
            w_1: m(gate_hidden, 4 * hidden),
            b_1: Param::zeros_bias(gate_hidden),
            w_2: m(1, gate_hidden),
            b_2: Param::zeros_bias(1),
        }
    }

    pub fn zeros(hidden: usize, gate_hidden: usize) -> Self {
        Self::build(hidden, gate_hidden, &mut Param::zeros_matrix)
    }

    pub fn init<R: Rng + ?Sized>(hidden: usize, gate_hidden: usize, rng: &mut R) -> Self {
        Self::build(hidden, gate_hidden, &mut |r, c| Param::uniform(r, c, rng))
    }

    fn parts(&self) -> [&Param; 4] {
        [&self.w_1, &self.b_1, &self.w_2, &self.b_2]
    }

    fn parts_mut(&mut self) -> [&mut Param; 4] {
        [&mut self.w_1, &mut self.b_1, &mut self.w_2, &mut self.b_2]
    }

    pub(crate) fn bind<'a>(&'a self, g: &mut Graph<'a>, leaves: &mut Vec<NodeId>) -> Result<BoundGate> {
        let mut ids = [NodeId::default(); 4];
        for (id, p) in ids.iter_mut().zip(self.parts()) {
            *id = p.bind(g, leaves)?;
        }
        let [w_1, b_1, w_2, b_2] = ids;
        Ok(BoundGate { w_1, b_1, w_2, b_2 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Width of the encoder's token vectors.
    pub enc_dim: usize,
    /// DMN hidden size.
    pub hidden: usize,
    /// Hidden units of the attention gate network.
    pub gate_hidden: usize,
    pub episodes: usize,
}

impl ModelDims {
    /// Gate network as wide as the DMN hidden state.
    pub fn new(enc_dim: usize, hidden: usize, episodes: usize) -> Self {
        Self {
            enc_dim,
            hidden,
            gate_hidden: hidden,
            episodes,
        }
    }

    /// Total number of scalar parameters, or `None` on overflow.
    pub fn parameter_count(&self) -> Option<u64> {
        let (b, h, gh) = (self.enc_dim as u64, self.hidden as u64, self.gate_hidden as u64);
        let gru = |input: u64| -> Option<u64> {
            (input.checked_mul(h)?.checked_add(h.checked_mul(h)?)?.checked_add(h))?.checked_mul(3)
        };
        let att = (2 * h)
            .checked_mul(h)?
            .checked_add(h.checked_mul(h)?)?
            .checked_add(h)?
            .checked_mul(2)?;
        let gate = gh.checked_mul(4 * h)?.checked_add(2 * gh + 1)?;
        let answer = b.checked_add(2 * h)?.checked_add(1)?;
        [gru(b)?, gru(b)?, att, gate, gru(h)?, answer]
            .into_iter()
            .try_fold(0u64, |acc, v| acc.checked_add(v))
    }

    pub fn check(&self) -> Result<()> {
        if self.enc_dim == 0 || self.hidden == 0 || self.gate_hidden == 0 || self.episodes == 0 {
            return Err(Error::Config(format!(
                "all model dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// All trainable weights of the memory network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub input_gru: GruParams,
    pub question_gru: GruParams,
    pub episodic: AttGruParams,
    pub gate_net: GateNetParams,
    pub memory_gru: GruParams,
    /// `1 x (enc_dim + 2 * hidden)`, applied to `[cls; question; memory]`.
    pub answer_w: Param,
    pub answer_b: Param,
}

impl ModelParams {
    fn build(dims: ModelDims, m: &mut dyn FnMut(usize, usize) -> Param) -> Result<Self> {
        dims.check()?;
        let ModelDims {
            enc_dim: b,
            hidden: d,
            gate_hidden,
            ..
        } = dims;
        Ok(Self {
            dims,
            input_gru: GruParams::build(b, d, m),
            question_gru: GruParams::build(b, d, m),
            episodic: AttGruParams::build(2 * d, d, m),
            gate_net: GateNetParams::build(d, gate_hidden, m),
            memory_gru: GruParams::build(d, d, m),
            answer_w: m(1, b + 2 * d),
            answer_b: Param::zeros_bias(1),
        })
    }

    pub fn zeros(dims: ModelDims) -> Result<Self> {
        Self::build(dims, &mut Param::zeros_matrix)
    }

    /// Uniform fan-in initialisation for weights, zero biases.
    pub fn init<R: Rng + ?Sized>(dims: ModelDims, rng: &mut R) -> Result<Self> {
        Self::build(dims, &mut |r, c| Param::uniform(r, c, rng))
    }

    /// Weight matrices carry their shape but no data; the checkpoint reader
    /// fills them in.
    pub(crate) fn unfilled(dims: ModelDims) -> Result<Self> {
        Self::build(dims, &mut |r, c| Param {
            shape: Shape::Matrix(r, c),
            data: Vec::new(),
            is_bias: false,
        })
    }

    /// Parameters in checkpoint order.
    pub fn params(&self) -> Vec<&Param> {
        let mut out = Vec::with_capacity(39);
        out.extend(self.input_gru.parts());
        out.extend(self.question_gru.parts());
        out.extend(self.episodic.parts());
        out.extend(self.gate_net.parts());
        out.extend(self.memory_gru.parts());
        out.push(&self.answer_w);
        out.push(&self.answer_b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::with_capacity(39);
        out.extend(self.input_gru.parts_mut());
        out.extend(self.question_gru.parts_mut());
        out.extend(self.episodic.parts_mut());
        out.extend(self.gate_net.parts_mut());
        out.extend(self.memory_gru.parts_mut());
        out.push(&mut self.answer_w);
        out.push(&mut self.answer_b);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub(crate) fn bind<'a>(&'a self, g: &mut Graph<'a>) -> Result<(BoundDmn, Vec<NodeId>)> {
        let mut leaves = Vec::with_capacity(39);
        let input_gru = self.input_gru.bind(g, &mut leaves)?;
        let question_gru = self.question_gru.bind(g, &mut leaves)?;
        let episodic = self.episodic.bind(g, &mut leaves)?;
        let gate_net = self.gate_net.bind(g, &mut leaves)?;
        let memory_gru = self.memory_gru.bind(g, &mut leaves)?;
        let answer_w = self.answer_w.bind(g, &mut leaves)?;
        let answer_b = self.answer_b.bind(g, &mut leaves)?;
        Ok((
            BoundDmn {
                hidden: self.dims.hidden,
                episodes: self.dims.episodes,
                input_gru,
                question_gru,
                episodic,
                gate_net,
                memory_gru,
                answer_w,
                answer_b,
            },
            leaves,
        ))
    }
}

/// Linear head over the CLS vector alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ClsHead {
    /// `1 x enc_dim`
    pub w: Param,
    pub b: Param,
}

impl ClsHead {
    pub fn zeros(enc_dim: usize) -> Self {
        Self {
            w: Param::zeros_matrix(1, enc_dim),
            b: Param::zeros_bias(1),
        }
    }

    pub fn init<R: Rng + ?Sized>(enc_dim: usize, rng: &mut R) -> Self {
        Self {
            w: Param::uniform(1, enc_dim, rng),
            b: Param::zeros_bias(1),
        }
    }

    /// The CLS slice of a memory network's answer layer.
    pub fn from_answer_layer(p: &ModelParams) -> Self {
        let b = p.dims.enc_dim;
        Self {
            w: Param {
                shape: Shape::Matrix(1, b),
                data: p.answer_w.data[..b].to_vec(),
                is_bias: false,
            },
            b: p.answer_b.clone(),
        }
    }

    pub fn enc_dim(&self) -> usize {
        self.w.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BoundGru {
    pub w_z: NodeId,
    pub u_z: NodeId,
    pub b_z: NodeId,
    pub reset: BoundAttGru,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BoundAttGru {
    pub w_r: NodeId,
    pub u_r: NodeId,
    pub b_r: NodeId,
    pub w_h: NodeId,
    pub u_h: NodeId,
    pub b_h: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct BoundGate {
    pub w_1: NodeId,
    pub b_1: NodeId,
    pub w_2: NodeId,
    pub b_2: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundDmn {
    pub(crate) hidden: usize,
    pub(crate) episodes: usize,
    pub(crate) input_gru: BoundGru,
    pub(crate) question_gru: BoundGru,
    pub(crate) episodic: BoundAttGru,
    pub(crate) gate_net: BoundGate,
    pub(crate) memory_gru: BoundGru,
    pub(crate) answer_w: NodeId,
    pub(crate) answer_b: NodeId,
}

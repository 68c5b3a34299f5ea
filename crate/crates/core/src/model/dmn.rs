//! Forward pass of the memory network, expressed on an [`autodiff::Graph`]
//! so the same code serves inference and training.
//!
//! [`autodiff::Graph`]: crate::autodiff::Graph

use crate::autodiff::{Graph, NodeId};
use crate::data::CacheRecord;
use crate::{Error, Result};

use super::params::{AttGruParams, BoundAttGru, BoundDmn, BoundGate, BoundGru, GateNetParams, GruParams, ModelParams};
use super::Mode;

pub(crate) fn gru_step(g: &mut Graph, p: &BoundGru, x: NodeId, h: NodeId) -> Result<NodeId> {
    let wz = g.matvec(p.w_z, x)?;
    let uz = g.matvec(p.u_z, h)?;
    let z = g.add(wz, uz)?;
    let z = g.add(z, p.b_z)?;
    let z = g.sigmoid(z)?;
    let cand = candidate(g, &p.reset, x, h)?;
    let keep = g.one_minus(z)?;
    let keep = g.mul(keep, h)?;
    let new = g.mul(z, cand)?;
    g.add(keep, new)
}

/// Reset gate and candidate state `h~ = tanh(W_h x + U_h (r * h) + b_h)`.
fn candidate(g: &mut Graph, p: &BoundAttGru, x: NodeId, h: NodeId) -> Result<NodeId> {
    let wr = g.matvec(p.w_r, x)?;
    let ur = g.matvec(p.u_r, h)?;
    let r = g.add(wr, ur)?;
    let r = g.add(r, p.b_r)?;
    let r = g.sigmoid(r)?;
    let rh = g.mul(r, h)?;
    let wh = g.matvec(p.w_h, x)?;
    let uh = g.matvec(p.u_h, rh)?;
    let c = g.add(wh, uh)?;
    let c = g.add(c, p.b_h)?;
    g.tanh(c)
}

/// `gate * h~ + (1 - gate) * h_prev`, the update gate replaced by `gate`.
pub(crate) fn att_gru_step(g: &mut Graph, p: &BoundAttGru, c: NodeId, h: NodeId, gate: NodeId) -> Result<NodeId> {
    let cand = candidate(g, p, c, h)?;
    let new = g.scale(cand, gate)?;
    let keep = g.one_minus(gate)?;
    let old = g.scale(h, keep)?;
    g.add(new, old)
}

/// Features `[s*q; s*m; |s-q|; |s-m|]` through `sigmoid(w_2 tanh(W_1 z + b_1) + b_2)`.
pub(crate) fn attention_gate(
    g: &mut Graph,
    p: &BoundGate,
    fact: NodeId,
    memory: NodeId,
    question: NodeId,
) -> Result<NodeId> {
    let sq = g.mul(fact, question)?;
    let sm = g.mul(fact, memory)?;
    let dq = g.absdiff(fact, question)?;
    let dm = g.absdiff(fact, memory)?;
    let z = g.concat(sq, sm)?;
    let z = g.concat(z, dq)?;
    let z = g.concat(z, dm)?;
    let hidden = g.matvec(p.w_1, z)?;
    let hidden = g.add(hidden, p.b_1)?;
    let hidden = g.tanh(hidden)?;
    let out = g.matvec(p.w_2, hidden)?;
    let out = g.add(out, p.b_2)?;
    g.sigmoid(out)
}

fn fold_gru(g: &mut Graph, p: &BoundGru, hidden: usize, inputs: &[NodeId]) -> Result<Vec<NodeId>> {
    let mut h = g.zeros(hidden)?;
    let mut states = Vec::with_capacity(inputs.len());
    for &x in inputs {
        h = gru_step(g, p, x, h)?;
        states.push(h);
    }
    Ok(states)
}

pub(crate) struct EpisodeNodes {
    /// `episodes x facts`, before gate dropout.
    pub gates: Vec<Vec<NodeId>>,
    /// `m^0 ..= m^E`
    pub memories: Vec<NodeId>,
    pub final_memory: NodeId,
}

pub(crate) fn episodes(
    g: &mut Graph,
    p: &BoundDmn,
    facts: &[NodeId],
    question: NodeId,
    forced_gate: Option<f64>,
    mode: &mut Mode,
) -> Result<EpisodeNodes> {
    let mut memories = vec![question];
    let mut gates = Vec::with_capacity(p.episodes);
    let mut memory = question;
    for _ in 0..p.episodes {
        let mut e = g.zeros(p.hidden)?;
        let mut row = Vec::with_capacity(facts.len());
        for &fact in facts {
            let gate = match forced_gate {
                Some(v) => g.vector(vec![v])?,
                None => attention_gate(g, &p.gate_net, fact, memory, question)?,
            };
            row.push(gate);
            let gate = mode.dropout(g, gate)?;
            let c = g.concat(fact, memory)?;
            e = att_gru_step(g, &p.episodic, c, e, gate)?;
        }
        memory = e;
        memories.push(memory);
        gates.push(row);
    }
    let summary = fold_gru(g, &p.memory_gru, p.hidden, &memories[1..])?;
    Ok(EpisodeNodes {
        gates,
        final_memory: *summary.last().expect("at least one episode"),
        memories,
    })
}

pub(crate) struct ForwardNodes {
    pub score: NodeId,
    pub question: NodeId,
    pub facts: Vec<NodeId>,
    pub episodes: EpisodeNodes,
}

fn rows_f64(m: &crate::data::Matrix32) -> impl Iterator<Item = Vec<f64>> + '_ {
    m.iter_rows().map(|r| r.iter().map(|&v| f64::from(v)).collect())
}

pub(crate) fn forward(
    g: &mut Graph,
    p: &BoundDmn,
    enc_dim: usize,
    rec: &CacheRecord,
    mode: &mut Mode,
) -> Result<ForwardNodes> {
    if rec.enc_dim() != enc_dim {
        return Err(Error::Shape {
            op: "score",
            detail: format!("record enc_dim {} vs model enc_dim {enc_dim}", rec.enc_dim()),
        });
    }
    let mut sentences = Vec::with_capacity(rec.sentence_vectors.rows());
    for row in rows_f64(&rec.sentence_vectors) {
        let v = g.vector(row)?;
        sentences.push(mode.dropout(g, v)?);
    }
    let facts = fold_gru(g, &p.input_gru, p.hidden, &sentences)?;

    let mut tokens = Vec::with_capacity(rec.query_tokens.rows());
    for row in rows_f64(&rec.query_tokens) {
        tokens.push(g.vector(row)?);
    }
    let question = *fold_gru(g, &p.question_gru, p.hidden, &tokens)?
        .last()
        .ok_or_else(|| Error::Empty("query has no tokens".into()))?;

    let eps = episodes(g, p, &facts, question, None, mode)?;

    let cls = g.vector(rec.cls.iter().map(|&v| f64::from(v)).collect())?;
    let joint = g.concat(cls, question)?;
    let joint = g.concat(joint, eps.final_memory)?;
    let joint = mode.dropout(g, joint)?;
    let logit = g.matvec(p.answer_w, joint)?;
    let logit = g.add(logit, p.answer_b)?;
    let score = g.sigmoid(logit)?;
    Ok(ForwardNodes {
        score,
        question,
        facts,
        episodes: eps,
    })
}

fn check_len(op: &'static str, what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Shape {
            op,
            detail: format!("{what} has length {got}, expected {want}"),
        });
    }
    Ok(())
}

/// One GRU step `h = (1 - z) * h_prev + z * h~`.
pub fn gru_step_values(p: &GruParams, x: &[f64], h_prev: &[f64]) -> Result<Vec<f64>> {
    check_len("gru_step", "input", x.len(), p.input_dim())?;
    check_len("gru_step", "hidden state", h_prev.len(), p.hidden_dim())?;
    let mut g = Graph::new();
    let mut leaves = Vec::new();
    let bound = p.bind(&mut g, &mut leaves)?;
    let x = g.vector(x.to_vec())?;
    let h = g.vector(h_prev.to_vec())?;
    let out = gru_step(&mut g, &bound, x, h)?;
    Ok(g.value(out).to_vec())
}

/// One attention-gated step over a candidate fact `c = [s; m]`.
pub fn att_gru_step_values(p: &AttGruParams, c: &[f64], h_prev: &[f64], gate: f64) -> Result<Vec<f64>> {
    let hidden = p.b_r.len();
    check_len("att_gru_step", "candidate fact", c.len(), 2 * hidden)?;
    check_len("att_gru_step", "hidden state", h_prev.len(), hidden)?;
    let mut g = Graph::new();
    let mut leaves = Vec::new();
    let bound = p.bind(&mut g, &mut leaves)?;
    let c = g.vector(c.to_vec())?;
    let h = g.vector(h_prev.to_vec())?;
    let gate = g.vector(vec![gate])?;
    let out = att_gru_step(&mut g, &bound, c, h, gate)?;
    Ok(g.value(out).to_vec())
}

pub fn attention_gate_values(p: &GateNetParams, fact: &[f64], memory: &[f64], question: &[f64]) -> Result<f64> {
    let d = p.w_1.len() / p.b_1.len().max(1) / 4;
    check_len("attention_gate", "fact", fact.len(), d)?;
    check_len("attention_gate", "memory", memory.len(), d)?;
    check_len("attention_gate", "question", question.len(), d)?;
    let mut g = Graph::new();
    let mut leaves = Vec::new();
    let bound = p.bind(&mut g, &mut leaves)?;
    let s = g.vector(fact.to_vec())?;
    let m = g.vector(memory.to_vec())?;
    let q = g.vector(question.to_vec())?;
    let out = attention_gate(&mut g, &bound, s, m, q)?;
    Ok(g.scalar(out))
}

fn rows_checked(op: &'static str, rows: &[Vec<f64>], width: usize) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Empty(format!("{op}: no input vectors")));
    }
    for r in rows {
        check_len(op, "input vector", r.len(), width)?;
    }
    Ok(())
}

/// Question encoding `Q`: the last hidden state of the question GRU.
pub fn encode_question(p: &ModelParams, query_tokens: &[Vec<f64>]) -> Result<Vec<f64>> {
    rows_checked("encode_question", query_tokens, p.dims.enc_dim)?;
    let mut g = Graph::new();
    let (bound, _) = p.bind(&mut g)?;
    let mut inputs = Vec::new();
    for t in query_tokens {
        inputs.push(g.vector(t.clone())?);
    }
    let states = fold_gru(&mut g, &bound.question_gru, p.dims.hidden, &inputs)?;
    Ok(g.value(*states.last().expect("non-empty")).to_vec())
}

/// Fact sequence: every hidden state of the input GRU over the sentence
/// vectors.
pub fn encode_facts(p: &ModelParams, sentence_vectors: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    rows_checked("encode_facts", sentence_vectors, p.dims.enc_dim)?;
    let mut g = Graph::new();
    let (bound, _) = p.bind(&mut g)?;
    let mut inputs = Vec::new();
    for s in sentence_vectors {
        inputs.push(g.vector(s.clone())?);
    }
    let states = fold_gru(&mut g, &bound.input_gru, p.dims.hidden, &inputs)?;
    Ok(states.iter().map(|&s| g.value(s).to_vec()).collect())
}

/// State of the episodic memory after one pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicState {
    /// `episodes x facts` attention gates.
    pub gates: Vec<Vec<f64>>,
    /// `m^0 = Q` through `m^E`.
    pub memories: Vec<Vec<f64>>,
    pub final_memory: Vec<f64>,
}

fn episodic_state(g: &Graph, eps: &EpisodeNodes) -> EpisodicState {
    EpisodicState {
        gates: eps
            .gates
            .iter()
            .map(|row| row.iter().map(|&id| g.scalar(id)).collect())
            .collect(),
        memories: eps.memories.iter().map(|&m| g.value(m).to_vec()).collect(),
        final_memory: g.value(eps.final_memory).to_vec(),
    }
}

fn run_episodes_inner(
    p: &ModelParams,
    facts: &[Vec<f64>],
    question: &[f64],
    forced: Option<f64>,
) -> Result<EpisodicState> {
    rows_checked("run_episodes", facts, p.dims.hidden)?;
    check_len("run_episodes", "question", question.len(), p.dims.hidden)?;
    let mut g = Graph::new();
    let (bound, _) = p.bind(&mut g)?;
    let mut fact_ids = Vec::new();
    for f in facts {
        fact_ids.push(g.vector(f.clone())?);
    }
    let q = g.vector(question.to_vec())?;
    let eps = episodes(&mut g, &bound, &fact_ids, q, forced, &mut Mode::Inference)?;
    Ok(episodic_state(&g, &eps))
}

/// Runs all episodes over `facts` starting from `m^0 = question`.
pub fn run_episodes(p: &ModelParams, facts: &[Vec<f64>], question: &[f64]) -> Result<EpisodicState> {
    run_episodes_inner(p, facts, question, None)
}

/// [`run_episodes`] with every attention gate pinned to `gate`.
pub fn run_episodes_with_fixed_gate(
    p: &ModelParams,
    facts: &[Vec<f64>],
    question: &[f64],
    gate: f64,
) -> Result<EpisodicState> {
    run_episodes_inner(p, facts, question, Some(gate))
}

/// Everything observable from one forward pass over a cached record.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub score: f64,
    pub question: Vec<f64>,
    pub facts: Vec<Vec<f64>>,
    pub state: EpisodicState,
}

pub fn forward_record(p: &ModelParams, rec: &CacheRecord, mode: &mut Mode) -> Result<Forward> {
    let mut g = Graph::new();
    let (bound, _) = p.bind(&mut g)?;
    let nodes = forward(&mut g, &bound, p.dims.enc_dim, rec, mode)?;
    Ok(Forward {
        score: g.scalar(nodes.score),
        question: g.value(nodes.question).to_vec(),
        facts: nodes.facts.iter().map(|&f| g.value(f).to_vec()).collect(),
        state: episodic_state(&g, &nodes.episodes),
    })
}

/// Relevance score `sigmoid(W_a [c; Q; m] + b_a)` in `(0, 1)`.
pub fn score(p: &ModelParams, rec: &CacheRecord, mode: &mut Mode) -> Result<f64> {
    forward_record(p, rec, mode).map(|f| f.score)
}

/// `sigmoid(w . cls + bias)`.
pub fn score_cls_baseline(w: &[f64], bias: f64, rec: &CacheRecord) -> Result<f64> {
    check_len("score_cls_baseline", "weight", w.len(), rec.enc_dim())?;
    let dot: f64 = w.iter().zip(&rec.cls).map(|(a, &c)| a * f64::from(c)).sum();
    let s = crate::autodiff::sigmoid(dot + bias);
    if !s.is_finite() {
        return Err(Error::NonFinite {
            op: "score_cls_baseline",
        });
    }
    Ok(s)
}

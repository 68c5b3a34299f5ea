//! Independent reference implementations used as test oracles. Nothing here
//! calls into the computation graph.
#![allow(dead_code)]

use dmn_rerank::autodiff::Shape;
use dmn_rerank::data::{CacheRecord, Matrix32, TokenReprRecord};
use dmn_rerank::model::{AttGruParams, GateNetParams, GruParams, ModelDims, ModelParams, Param};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn matvec(p: &Param, x: &[f64]) -> Vec<f64> {
    let Shape::Matrix(rows, cols) = p.shape else {
        panic!("not a matrix")
    };
    assert_eq!(cols, x.len());
    (0..rows)
        .map(|i| (0..cols).map(|j| p.data[i * cols + j] * x[j]).sum())
        .collect()
}

fn affine(w: &Param, x: &[f64], u: &Param, h: &[f64], b: &Param) -> Vec<f64> {
    let wx = matvec(w, x);
    let uh = matvec(u, h);
    (0..wx.len()).map(|i| wx[i] + uh[i] + b.data[i]).collect()
}

#[allow(clippy::too_many_arguments)]
fn candidate(
    w_r: &Param,
    u_r: &Param,
    b_r: &Param,
    w_h: &Param,
    u_h: &Param,
    b_h: &Param,
    x: &[f64],
    h: &[f64],
) -> Vec<f64> {
    let r: Vec<f64> = affine(w_r, x, u_r, h, b_r).into_iter().map(sig).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    affine(w_h, x, u_h, &rh, b_h).into_iter().map(f64::tanh).collect()
}

pub fn gru(p: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let z: Vec<f64> = affine(&p.w_z, x, &p.u_z, h, &p.b_z).into_iter().map(sig).collect();
    let c = candidate(&p.w_r, &p.u_r, &p.b_r, &p.w_h, &p.u_h, &p.b_h, x, h);
    (0..h.len()).map(|i| (1.0 - z[i]) * h[i] + z[i] * c[i]).collect()
}

pub fn att_gru(p: &AttGruParams, c: &[f64], h: &[f64], g: f64) -> Vec<f64> {
    let cand = candidate(&p.w_r, &p.u_r, &p.b_r, &p.w_h, &p.u_h, &p.b_h, c, h);
    (0..h.len()).map(|i| g * cand[i] + (1.0 - g) * h[i]).collect()
}

pub fn gate(p: &GateNetParams, s: &[f64], m: &[f64], q: &[f64]) -> f64 {
    let mut z = Vec::with_capacity(4 * s.len());
    z.extend(s.iter().zip(q).map(|(a, b)| a * b));
    z.extend(s.iter().zip(m).map(|(a, b)| a * b));
    z.extend(s.iter().zip(q).map(|(a, b)| (a - b).abs()));
    z.extend(s.iter().zip(m).map(|(a, b)| (a - b).abs()));
    let hidden: Vec<f64> = matvec(&p.w_1, &z)
        .into_iter()
        .zip(&p.b_1.data)
        .map(|(v, b)| (v + b).tanh())
        .collect();
    sig(matvec(&p.w_2, &hidden)[0] + p.b_2.data[0])
}

pub fn fold(p: &GruParams, hidden: usize, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut h = vec![0.0; hidden];
    xs.iter()
        .map(|x| {
            h = gru(p, x, &h);
            h.clone()
        })
        .collect()
}

pub struct Reference {
    pub score: f64,
    pub question: Vec<f64>,
    pub facts: Vec<Vec<f64>>,
    pub gates: Vec<Vec<f64>>,
    pub memories: Vec<Vec<f64>>,
    pub final_memory: Vec<f64>,
}

pub fn episodes(p: &ModelParams, facts: &[Vec<f64>], q: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<f64>) {
    let d = p.dims.hidden;
    let mut memories = vec![q.to_vec()];
    let mut gates = Vec::new();
    for _ in 0..p.dims.episodes {
        let m_prev = memories.last().unwrap().clone();
        let mut e = vec![0.0; d];
        let mut row = Vec::new();
        for s in facts {
            let g = gate(&p.gate_net, s, &m_prev, q);
            row.push(g);
            let c: Vec<f64> = s.iter().chain(&m_prev).copied().collect();
            e = att_gru(&p.episodic, &c, &e, g);
        }
        gates.push(row);
        memories.push(e);
    }
    let final_memory = fold(&p.memory_gru, d, &memories[1..]).pop().unwrap();
    (gates, memories, final_memory)
}

pub fn rows(m: &Matrix32) -> Vec<Vec<f64>> {
    m.iter_rows()
        .map(|r| r.iter().map(|&v| f64::from(v)).collect())
        .collect()
}

pub fn forward(p: &ModelParams, rec: &CacheRecord) -> Reference {
    let d = p.dims.hidden;
    let facts = fold(&p.input_gru, d, &rows(&rec.sentence_vectors));
    let question = fold(&p.question_gru, d, &rows(&rec.query_tokens)).pop().unwrap();
    let (gates, memories, final_memory) = episodes(p, &facts, &question);
    let joint: Vec<f64> = rec
        .cls
        .iter()
        .map(|&v| f64::from(v))
        .chain(question.iter().copied())
        .chain(final_memory.iter().copied())
        .collect();
    let score = sig(matvec(&p.answer_w, &joint)[0] + p.answer_b.data[0]);
    Reference {
        score,
        question,
        facts,
        gates,
        memories,
        final_memory,
    }
}

/// Initialised model with random non-zero biases.
pub fn random_model(seed: u64, b: usize, d: usize, e: usize) -> ModelParams {
    let mut p = ModelParams::init(ModelDims::new(b, d, e), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1000));
    for t in p.params_mut() {
        if t.is_bias {
            t.data.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        }
    }
    p
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix32 {
    Matrix32::new(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0f32..1.0)).collect(),
    )
    .unwrap()
}

pub fn random_cache_record(seed: u64, b: usize, n: usize, m: usize) -> CacheRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CacheRecord {
        qid: format!("q{seed}"),
        pid: format!("p{seed}"),
        cls: random_matrix(&mut rng, 1, b).as_slice().to_vec(),
        query_tokens: random_matrix(&mut rng, n, b),
        sentence_ends: (1..=m as u32).collect(),
        sentence_vectors: random_matrix(&mut rng, m, b),
    }
}

/// Random valid token record with `sentences` sentences of 1..=4 tokens.
pub fn random_tokrep(rng: &mut ChaCha8Rng, qid: &str, pid: &str, b: usize, sentences: usize) -> TokenReprRecord {
    let mut ends = Vec::new();
    let mut t = 0u32;
    for _ in 0..sentences {
        t += rng.gen_range(1..=4);
        ends.push(t);
    }
    let n = rng.gen_range(1..=4);
    TokenReprRecord {
        qid: qid.into(),
        pid: pid.into(),
        cls: random_matrix(rng, 1, b).as_slice().to_vec(),
        query_tokens: random_matrix(rng, n, b),
        passage_tokens: random_matrix(rng, t as usize, b),
        sentence_ends: ends,
    }
}

/// Average precision by direct summation: precision at every relevant cutoff
/// recounted from scratch.
pub fn brute_ap(ranking: &[String], relevant: &[String]) -> f64 {
    let is_rel = |p: &String| relevant.contains(p);
    let mut total = 0.0;
    for k in 0..ranking.len() {
        if is_rel(&ranking[k]) {
            let hits = ranking[..=k].iter().filter(|p| is_rel(p)).count();
            total += hits as f64 / (k + 1) as f64;
        }
    }
    total / relevant.len() as f64
}

pub fn brute_rr(ranking: &[String], relevant: &[String]) -> f64 {
    for (k, p) in ranking.iter().enumerate() {
        if relevant.contains(p) {
            return 1.0 / (k + 1) as f64;
        }
    }
    0.0
}

/// Expected average precision of a uniformly random ordering of `n`
/// candidates of which `r` are relevant (all relevant passages retrieved).
pub fn random_ap(n: usize, r: usize) -> f64 {
    let (nf, rf) = (n as f64, r as f64);
    (1..=n)
        .map(|k| {
            let kf = k as f64;
            let others = if n > 1 {
                (kf - 1.0) * (rf - 1.0) / (nf - 1.0)
            } else {
                0.0
            };
            (rf / nf) * (1.0 + others) / kf
        })
        .sum::<f64>()
        / rf
}

fn cos(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// All three similarity families by explicit double loops.
pub fn brute_diffusion(records: &[TokenReprRecord]) -> [Vec<f64>; 3] {
    let (mut cq, mut cp, mut ip) = (Vec::new(), Vec::new(), Vec::new());
    for r in records {
        for t in r.query_tokens.iter_rows() {
            cq.push(cos(&r.cls, t));
        }
        let toks: Vec<&[f32]> = r.passage_tokens.iter_rows().collect();
        for t in &toks {
            cp.push(cos(&r.cls, t));
        }
        for i in 0..toks.len() {
            for j in 0..toks.len() {
                if i < j {
                    ip.push(cos(toks[i], toks[j]));
                }
            }
        }
    }
    [cq, cp, ip]
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Central finite-difference check of `analytic` against `f` at a list of
/// coordinates; returns the worst `|a - fd| / max(1, |a|)`.
pub fn worst_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(1.0))
        .fold(0.0, f64::max)
}

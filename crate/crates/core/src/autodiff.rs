//! Reverse-mode differentiation over dense vectors and matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node whose parents were
//! created earlier, so insertion order is already a topological order and
//! [`Graph::backward`] is a single reverse sweep. Parameters are borrowed
//! into the graph rather than copied, which keeps per-example graphs cheap
//! when many are built in parallel over the same model.
//!
//! Values are `f64`. Every operation checks its result for NaN/Inf.

use std::borrow::Cow;

use rand::Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    Matvec(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Vector times a length-1 vector.
    Scale(NodeId, NodeId),
    OneMinus(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    AbsDiff(NodeId, NodeId),
    Concat(NodeId, NodeId),
    MeanRows(NodeId),
    /// Element-wise mask already scaled by `1 / (1 - rate)`.
    Dropout(NodeId, Vec<f64>),
}

struct Node<'a> {
    op: Op,
    shape: Shape,
    value: Cow<'a, [f64]>,
    /// Whether any parameter is upstream of this node.
    tracked: bool,
}

#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Value of a length-1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[0]
    }

    fn push(
        &mut self,
        op: &'static str,
        kind: Op,
        shape: Shape,
        value: Cow<'a, [f64]>,
        tracked: bool,
    ) -> Result<NodeId> {
        if value.len() != shape.len() {
            return Err(Error::Shape {
                op,
                detail: format!("{shape:?} does not hold {} values", value.len()),
            });
        }
        if !value.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op });
        }
        self.nodes.push(Node {
            op: kind,
            shape,
            value,
            tracked,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    /// A constant leaf; no gradient flows into it.
    pub fn input(&mut self, shape: Shape, data: Vec<f64>) -> Result<NodeId> {
        self.push("input", Op::Input, shape, Cow::Owned(data), false)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Result<NodeId> {
        let n = data.len();
        self.input(Shape::Vector(n), data)
    }

    pub fn zeros(&mut self, n: usize) -> Result<NodeId> {
        self.vector(vec![0.0; n])
    }

    /// A differentiable leaf borrowing its values.
    pub fn param(&mut self, shape: Shape, data: &'a [f64]) -> Result<NodeId> {
        self.push("param", Op::Param, shape, Cow::Borrowed(data), true)
    }

    fn vec_len(&self, op: &'static str, id: NodeId) -> Result<usize> {
        match self.shape(id) {
            Shape::Vector(n) => Ok(n),
            s => Err(Error::Shape {
                op,
                detail: format!("expected a vector, got {s:?}"),
            }),
        }
    }

    fn same_vectors(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<usize> {
        let (n, m) = (self.vec_len(op, a)?, self.vec_len(op, b)?);
        if n != m {
            return Err(Error::Shape {
                op,
                detail: format!("Vector({n}) vs Vector({m})"),
            });
        }
        Ok(n)
    }

    fn binary(
        &mut self,
        op: &'static str,
        kind: Op,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<NodeId> {
        let n = self.same_vectors(op, a, b)?;
        let out: Vec<f64> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(op, kind, Shape::Vector(n), Cow::Owned(out), tracked)
    }

    fn unary(&mut self, op: &'static str, kind: Op, x: NodeId, f: impl Fn(f64) -> f64) -> Result<NodeId> {
        let n = self.vec_len(op, x)?;
        let out: Vec<f64> = self.value(x).iter().map(|&v| f(v)).collect();
        let tracked = self.tracked(x);
        self.push(op, kind, Shape::Vector(n), Cow::Owned(out), tracked)
    }

    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = match self.shape(w) {
            Shape::Matrix(r, c) => (r, c),
            s => {
                return Err(Error::Shape {
                    op: "matvec",
                    detail: format!("expected a matrix, got {s:?}"),
                })
            }
        };
        let n = self.vec_len("matvec", x)?;
        if n != cols {
            return Err(Error::Shape {
                op: "matvec",
                detail: format!("Matrix({rows}, {cols}) x Vector({n})"),
            });
        }
        let wv = self.value(w);
        let xv = self.value(x);
        let out: Vec<f64> = wv
            .chunks_exact(cols)
            .map(|row| row.iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        let tracked = self.tracked(w) || self.tracked(x);
        self.push(
            "matvec",
            Op::Matvec(w, x),
            Shape::Vector(rows),
            Cow::Owned(out),
            tracked,
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("add", Op::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("sub", Op::Sub(a, b), a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("mul", Op::Mul(a, b), a, b, |x, y| x * y)
    }

    pub fn absdiff(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.binary("absdiff", Op::AbsDiff(a, b), a, b, |x, y| (x - y).abs())
    }

    /// `x * s` for a length-1 vector `s`.
    pub fn scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        let n = self.vec_len("scale", x)?;
        if self.vec_len("scale", s)? != 1 {
            return Err(Error::Shape {
                op: "scale",
                detail: format!("scale factor has shape {:?}", self.shape(s)),
            });
        }
        let k = self.scalar(s);
        let out: Vec<f64> = self.value(x).iter().map(|v| v * k).collect();
        let tracked = self.tracked(x) || self.tracked(s);
        self.push("scale", Op::Scale(x, s), Shape::Vector(n), Cow::Owned(out), tracked)
    }

    pub fn one_minus(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("one_minus", Op::OneMinus(x), x, |v| 1.0 - v)
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("sigmoid", Op::Sigmoid(x), x, sigmoid)
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("tanh", Op::Tanh(x), x, f64::tanh)
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("relu", Op::Relu(x), x, |v| v.max(0.0))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let n = self.vec_len("concat", a)? + self.vec_len("concat", b)?;
        let mut out = Vec::with_capacity(n);
        out.extend_from_slice(self.value(a));
        out.extend_from_slice(self.value(b));
        let tracked = self.tracked(a) || self.tracked(b);
        self.push("concat", Op::Concat(a, b), Shape::Vector(n), Cow::Owned(out), tracked)
    }

    /// Column means of a matrix.
    pub fn mean_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (rows, cols) = match self.shape(x) {
            Shape::Matrix(r, c) if r > 0 => (r, c),
            s => {
                return Err(Error::Shape {
                    op: "mean_rows",
                    detail: format!("expected a non-empty matrix, got {s:?}"),
                })
            }
        };
        let mut out = vec![0.0; cols];
        for row in self.value(x).chunks_exact(cols) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= rows as f64);
        let tracked = self.tracked(x);
        self.push(
            "mean_rows",
            Op::MeanRows(x),
            Shape::Vector(cols),
            Cow::Owned(out),
            tracked,
        )
    }

    /// Inverted dropout. Returns `x` itself when not training or when the
    /// rate is zero.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: NodeId, rate: f64, training: bool, rng: &mut R) -> Result<NodeId> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
        }
        if !training || rate == 0.0 {
            return Ok(x);
        }
        let n = self.vec_len("dropout", x)?;
        let keep = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let out: Vec<f64> = self.value(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let tracked = self.tracked(x);
        self.push(
            "dropout",
            Op::Dropout(x, mask),
            Shape::Vector(n),
            Cow::Owned(out),
            tracked,
        )
    }

    /// Gradients of a scalar node with respect to every tracked node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if self.shape(loss).len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got {:?}", self.shape(loss)),
            });
        }
        self.backward_seeded(loss, &[1.0])
    }

    /// Propagates an arbitrary upstream gradient `seed` from `out`.
    pub fn backward_seeded(&self, out: NodeId, seed: &[f64]) -> Result<Gradients> {
        if seed.len() != self.shape(out).len() {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("seed of length {} for {:?}", seed.len(), self.shape(out)),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed.to_vec());

        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.tracked {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Param => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Matvec(w, x) => {
                    let Shape::Matrix(_, cols) = self.shape(*w) else {
                        unreachable!()
                    };
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    if self.tracked(*w) {
                        let gw = slot(&mut grads, *w, wv.len());
                        for (r, &gr) in g.iter().enumerate() {
                            if gr != 0.0 {
                                for (o, &xj) in gw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                                    *o += gr * xj;
                                }
                            }
                        }
                    }
                    if self.tracked(*x) {
                        let gx = slot(&mut grads, *x, cols);
                        for (row, &gr) in wv.chunks_exact(cols).zip(&g) {
                            if gr != 0.0 {
                                for (o, &wij) in gx.iter_mut().zip(row) {
                                    *o += gr * wij;
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    self.accumulate(&mut grads, *a, g.iter().copied());
                    self.accumulate(&mut grads, *b, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    self.accumulate(&mut grads, *a, g.iter().copied());
                    self.accumulate(&mut grads, *b, g.iter().map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    self.accumulate(&mut grads, *a, g.iter().zip(bv).map(|(g, y)| g * y));
                    self.accumulate(&mut grads, *b, g.iter().zip(av).map(|(g, x)| g * x));
                }
                Op::Scale(x, s) => {
                    let k = self.scalar(*s);
                    let xv = self.value(*x);
                    self.accumulate(&mut grads, *x, g.iter().map(|g| g * k));
                    let ds: f64 = g.iter().zip(xv).map(|(g, x)| g * x).sum();
                    self.accumulate(&mut grads, *s, std::iter::once(ds));
                }
                Op::OneMinus(x) => self.accumulate(&mut grads, *x, g.iter().map(|v| -v)),
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    self.accumulate(&mut grads, *x, g.iter().zip(y.iter()).map(|(g, y)| g * y * (1.0 - y)));
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    self.accumulate(&mut grads, *x, g.iter().zip(y.iter()).map(|(g, y)| g * (1.0 - y * y)));
                }
                Op::Relu(x) => {
                    let xv = self.value(*x);
                    self.accumulate(
                        &mut grads,
                        *x,
                        g.iter().zip(xv).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }),
                    );
                }
                Op::AbsDiff(a, b) => {
                    let sign: Vec<f64> = self
                        .value(*a)
                        .iter()
                        .zip(self.value(*b))
                        .zip(&g)
                        .map(|((x, y), g)| g * sign_of(x - y))
                        .collect();
                    self.accumulate(&mut grads, *a, sign.iter().copied());
                    self.accumulate(&mut grads, *b, sign.iter().map(|v| -v));
                }
                Op::Concat(a, b) => {
                    let n = self.shape(*a).len();
                    self.accumulate(&mut grads, *a, g[..n].iter().copied());
                    self.accumulate(&mut grads, *b, g[n..].iter().copied());
                }
                Op::MeanRows(x) => {
                    let Shape::Matrix(rows, cols) = self.shape(*x) else {
                        unreachable!()
                    };
                    let inv = 1.0 / rows as f64;
                    self.accumulate(&mut grads, *x, (0..rows * cols).map(|k| g[k % cols] * inv));
                }
                Op::Dropout(x, mask) => {
                    self.accumulate(&mut grads, *x, g.iter().zip(mask).map(|(g, m)| g * m));
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], id: NodeId, values: impl Iterator<Item = f64>) {
        if !self.tracked(id) {
            return;
        }
        let n = self.shape(id).len();
        let g = slot(grads, id, n);
        for (o, v) in g.iter_mut().zip(values) {
            *o += v;
        }
    }
}

fn slot(grads: &mut [Option<Vec<f64>>], id: NodeId, n: usize) -> &mut Vec<f64> {
    grads[id.0].get_or_insert_with(|| vec![0.0; n])
}

fn sign_of(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradients collected by a backward sweep. Only parameter leaves keep their
/// buffers.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0)?.as_deref()
    }

    /// Takes the gradient of `id`, or zeros of length `n` if nothing reached it.
    pub fn take(&mut self, id: NodeId, n: usize) -> Vec<f64> {
        self.grads
            .get_mut(id.0)
            .and_then(Option::take)
            .unwrap_or_else(|| vec![0.0; n])
    }
}

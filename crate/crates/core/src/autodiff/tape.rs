use thiserror::Error;

use crate::geometry::{kernel, ATANH_MAX, BALL_EPS, MIN_NORM};
use crate::spectral;
use crate::tensor::{dot, norm, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Neg(Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Stack(Vec<Var>),
    Row(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Atanh(Var),
    Relu(Var),
    Softplus(Var),
    Sqrt(Var),
    Asinh(Var),
    Norm(Var),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Dropout(Var, Vec<f64>),
    WeightedSum(Vec<Var>, Var),
    MobiusAdd(Var, Var, Var),
    Exp0(Var, Var),
    Log0(Var, Var),
    Project(Var, Var),
    Dft2Real(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so that [`Tape::backward`] can replay it in
/// reverse. Nodes are appended in creation order, which is a topological order.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v`, zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, v: Var, len: usize) -> Vec<f64> {
        self.get(v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; len])
    }
}

fn broadcast_shape(a: &Tensor, b: &Tensor, what: &str) -> Vec<usize> {
    if a.len() == b.len() {
        a.shape().to_vec()
    } else if b.len() == 1 {
        a.shape().to_vec()
    } else if a.len() == 1 {
        b.shape().to_vec()
    } else {
        panic!("{what}: incompatible shapes {:?} and {:?}", a.shape(), b.shape())
    }
}

#[inline]
fn at(v: &[f64], i: usize) -> f64 {
    if v.len() == 1 {
        v[0]
    } else {
        v[i]
    }
}

/// Adds `src` into `dst`, summing when `dst` was broadcast from a scalar.
fn accumulate_broadcast(dst: &mut [f64], src: impl Iterator<Item = f64>) {
    if dst.len() == 1 {
        dst[0] += src.sum::<f64>();
    } else {
        for (d, s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    }
}

/// `t*sech^2(t) - tanh(t)`, with a series for small `t`.
fn exp0_kernel_num(t: f64) -> f64 {
    if t < 1e-3 {
        -2.0 * t.powi(3) / 3.0 + 8.0 * t.powi(5) / 15.0
    } else {
        let th = t.tanh();
        t * (1.0 - th * th) - th
    }
}

/// `t/(1-t^2) - atanh(t)`, with a series for small `t`.
fn log0_kernel_num(t: f64) -> f64 {
    if t < 1e-3 {
        2.0 * t.powi(3) / 3.0 + 4.0 * t.powi(5) / 5.0
    } else {
        t / (1.0 - t * t) - t.atanh()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// An input excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.constant(Tensor::scalar(v))
    }

    fn elementwise(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let shape = broadcast_shape(ta, tb, what);
        let n = ta.len().max(tb.len());
        let (da, db) = (ta.data(), tb.data());
        Tensor::new(shape, (0..n).map(|i| f(at(da, i), at(db, i))).collect())
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect());
        self.push(out, op, &[a])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.elementwise(a, b, "add", |x, y| x + y);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.elementwise(a, b, "sub", |x, y| x - y);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.elementwise(a, b, "mul", |x, y| x * y);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let out = self.elementwise(a, b, "div", |x, y| x / y);
        self.push(out, Op::Div(a, b), &[a, b])
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, Op::Neg(a), |x| -x)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a, k), |x| k * x)
    }

    /// `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape().len(), 2, "matmul: left operand must be a matrix, got {:?}", ta.shape());
        let (m, k) = (ta.rows(), ta.cols());
        let out = match tb.shape().len() {
            1 => {
                assert_eq!(tb.len(), k, "matmul: shapes {:?} and {:?}", ta.shape(), tb.shape());
                Tensor::vector(ta.matvec(tb.data()))
            }
            2 => {
                assert_eq!(tb.rows(), k, "matmul: shapes {:?} and {:?}", ta.shape(), tb.shape());
                let n = tb.cols();
                let (da, db) = (ta.data(), tb.data());
                let mut out = vec![0.0; m * n];
                for i in 0..m {
                    for p in 0..k {
                        let aip = da[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let row = &db[p * n..(p + 1) * n];
                        for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(row) {
                            *o += aip * bv;
                        }
                    }
                }
                Tensor::matrix(m, n, out)
            }
            _ => panic!("matmul: unsupported right operand {:?}", tb.shape()),
        };
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    /// Concatenates vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts.iter().flat_map(|p| self.data(*p).iter().copied()).collect();
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()), parts)
    }

    /// `len` entries of a vector starting at `start`.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let data = self.data(a)[start..start + len].to_vec();
        self.push(Tensor::vector(data), Op::Slice(a, start), &[a])
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack: no rows");
        let cols = self.value(rows[0]).len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let d = self.data(*r);
            assert_eq!(d.len(), cols, "stack: ragged rows");
            data.extend_from_slice(d);
        }
        self.push(Tensor::matrix(rows.len(), cols, data), Op::Stack(rows.to_vec()), rows)
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        let data = self.value(a).row(i).to_vec();
        self.push(Tensor::vector(data), Op::Row(a, i), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    /// `atanh` with its argument clamped to `[-ATANH_MAX, ATANH_MAX]`.
    pub fn atanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Atanh(a), |x| x.clamp(-ATANH_MAX, ATANH_MAX).atanh())
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    /// Square root with the argument floored at zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), |x| x.max(0.0).sqrt())
    }

    pub fn asinh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Asinh(a), f64::asinh)
    }

    /// Euclidean norm, floored at `MIN_NORM`.
    pub fn norm(&mut self, a: Var) -> Var {
        let n = norm(self.data(a)).max(MIN_NORM);
        self.push(Tensor::scalar(n), Op::Norm(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let s = d.iter().sum::<f64>() / d.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let p = self.mul(a, b);
        self.sum(p)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = Tensor::vector(softmax(self.data(a)));
        self.push(out, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let d = self.data(a);
        let m = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + d.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let out = Tensor::vector(d.iter().map(|v| v - lse).collect());
        self.push(out, Op::LogSoftmax(a), &[a])
    }

    /// Multiplies by a fixed mask (already scaled by the keep probability).
    pub fn apply_mask(&mut self, a: Var, mask: Vec<f64>) -> Var {
        assert_eq!(mask.len(), self.value(a).len(), "dropout mask length");
        let t = self.value(a);
        let out = Tensor::new(t.shape().to_vec(), t.data().iter().zip(&mask).map(|(x, m)| x * m).collect());
        self.push(out, Op::Dropout(a, mask), &[a])
    }

    /// `sum_i w_i p_i` for equal-length vectors `p_i` and a weight vector `w`.
    pub fn weighted_sum(&mut self, points: &[Var], weights: Var) -> Var {
        let w = self.data(weights);
        assert_eq!(w.len(), points.len(), "weighted_sum: {} weights for {} points", w.len(), points.len());
        let dim = self.value(points[0]).len();
        let mut out = vec![0.0; dim];
        for (p, wi) in points.iter().zip(w) {
            let d = self.data(*p);
            assert_eq!(d.len(), dim, "weighted_sum: ragged points");
            for (o, v) in out.iter_mut().zip(d) {
                *o += wi * v;
            }
        }
        let mut parents = points.to_vec();
        parents.push(weights);
        self.push(Tensor::vector(out), Op::WeightedSum(points.to_vec(), weights), &parents)
    }

    /// Raw Möbius addition (no projection) at curvature magnitude `c`.
    pub fn mobius_add(&mut self, x: Var, y: Var, c: Var) -> Var {
        let out = kernel::mobius_add(self.data(x), self.data(y), self.item(c));
        self.push(Tensor::vector(out), Op::MobiusAdd(x, y, c), &[x, y, c])
    }

    /// Origin exponential map without the trailing projection.
    pub fn exp0(&mut self, v: Var, c: Var) -> Var {
        let s = self.item(c).sqrt();
        let d = self.data(v);
        let t = s * norm(d).max(MIN_NORM);
        let f = t.tanh() / t;
        let out = Tensor::vector(d.iter().map(|x| f * x).collect());
        self.push(out, Op::Exp0(v, c), &[v, c])
    }

    pub fn log0(&mut self, y: Var, c: Var) -> Var {
        let s = self.item(c).sqrt();
        let d = self.data(y);
        let t = s * norm(d).max(MIN_NORM);
        let f = kernel::clamped_atanh(t) / t;
        let out = Tensor::vector(d.iter().map(|x| f * x).collect());
        self.push(out, Op::Log0(y, c), &[y, c])
    }

    /// Radial clamp into the ball of radius `(1 - BALL_EPS)/sqrt(c)`.
    pub fn project(&mut self, x: Var, c: Var) -> Var {
        let out = kernel::project(self.data(x), self.item(c));
        self.push(Tensor::vector(out), Op::Project(x, c), &[x, c])
    }

    /// Real part of the 2-D DFT of a matrix.
    pub fn dft2_real(&mut self, x: Var) -> Var {
        let out = spectral::dft2_real_tensor(self.value(x));
        self.push(out, Op::Dft2Real(x), &[x])
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, TapeError> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(TapeError::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        let send = |grads: &mut [Option<Vec<f64>>], v: Var, f: &dyn Fn(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let len = self.nodes[v.0].value.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(grads, *a, &|s| accumulate_broadcast(s, g.iter().copied()));
                send(grads, *b, &|s| accumulate_broadcast(s, g.iter().copied()));
            }
            Op::Sub(a, b) => {
                send(grads, *a, &|s| accumulate_broadcast(s, g.iter().copied()));
                send(grads, *b, &|s| accumulate_broadcast(s, g.iter().map(|x| -x)));
            }
            Op::Mul(a, b) => {
                let (da, db) = (self.data(*a), self.data(*b));
                send(grads, *a, &|s| accumulate_broadcast(s, g.iter().enumerate().map(|(k, gk)| gk * at(db, k))));
                send(grads, *b, &|s| accumulate_broadcast(s, g.iter().enumerate().map(|(k, gk)| gk * at(da, k))));
            }
            Op::Div(a, b) => {
                let db = self.data(*b);
                send(grads, *a, &|s| accumulate_broadcast(s, g.iter().enumerate().map(|(k, gk)| gk / at(db, k))));
                send(grads, *b, &|s| {
                    accumulate_broadcast(s, g.iter().enumerate().map(|(k, gk)| -gk * out[k] / at(db, k)))
                });
            }
            Op::Neg(a) => send(grads, *a, &|s| s.iter_mut().zip(g).for_each(|(d, gk)| *d -= gk)),
            Op::Scale(a, k) => send(grads, *a, &|s| s.iter_mut().zip(g).for_each(|(d, gk)| *d += k * gk)),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = if tb.shape().len() == 1 { 1 } else { tb.cols() };
                let (da, db) = (ta.data(), tb.data());
                // dA = G B^T, dB = A^T G
                send(grads, *a, &|s| {
                    for r in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[r * n + j] * db[p * n + j];
                            }
                            s[r * k + p] += acc;
                        }
                    }
                });
                send(grads, *b, &|s| {
                    for r in 0..m {
                        for p in 0..k {
                            let arp = da[r * k + p];
                            for j in 0..n {
                                s[p * n + j] += arp * g[r * n + j];
                            }
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).len();
                    let o = off;
                    send(grads, *p, &|s| s.iter_mut().zip(&g[o..o + len]).for_each(|(d, gk)| *d += gk));
                    off += len;
                }
            }
            Op::Slice(a, start) => {
                let st = *start;
                send(grads, *a, &|s| s[st..st + g.len()].iter_mut().zip(g).for_each(|(d, gk)| *d += gk));
            }
            Op::Stack(rows) => {
                let cols = node.value.cols();
                for (r, v) in rows.iter().enumerate() {
                    send(grads, *v, &|s| {
                        s.iter_mut().zip(&g[r * cols..(r + 1) * cols]).for_each(|(d, gk)| *d += gk)
                    });
                }
            }
            Op::Row(a, r) => {
                let cols = g.len();
                let off = r * cols;
                send(grads, *a, &|s| s[off..off + cols].iter_mut().zip(g).for_each(|(d, gk)| *d += gk));
            }
            Op::Tanh(a) => send(grads, *a, &|s| {
                for k in 0..s.len() {
                    s[k] += g[k] * (1.0 - out[k] * out[k]);
                }
            }),
            Op::Sigmoid(a) => send(grads, *a, &|s| {
                for k in 0..s.len() {
                    s[k] += g[k] * out[k] * (1.0 - out[k]);
                }
            }),
            Op::Exp(a) => send(grads, *a, &|s| {
                for k in 0..s.len() {
                    s[k] += g[k] * out[k];
                }
            }),
            Op::Log(a) => {
                let da = self.data(*a);
                send(grads, *a, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[k] / da[k];
                    }
                })
            }
            Op::Atanh(a) => {
                let da = self.data(*a);
                send(grads, *a, &|s| {
                    for k in 0..s.len() {
                        if da[k].abs() < ATANH_MAX {
                            s[k] += g[k] / (1.0 - da[k] * da[k]);
                        }
                    }
                })
            }
            Op::Relu(a) => {
                let da = self.data(*a);
                send(grads, *a, &|s| {
                    for k in 0..s.len() {
                        if da[k] > 0.0 {
                            s[k] += g[k];
                        }
                    }
                })
            }
            Op::Softplus(a) => {
                let da = self.data(*a);
                send(grads, *a, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[k] * sigmoid(da[k]);
                    }
                })
            }
            Op::Sqrt(a) => send(grads, *a, &|s| {
                for k in 0..s.len() {
                    s[k] += g[k] * 0.5 / out[k].max(MIN_NORM);
                }
            }),
            Op::Asinh(a) => {
                let da = self.data(*a);
                send(grads, *a, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[k] / (da[k] * da[k] + 1.0).sqrt();
                    }
                })
            }
            Op::Norm(a) => {
                let da = self.data(*a);
                let n = out[0];
                send(grads, *a, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[0] * da[k] / n;
                    }
                })
            }
            Op::Sum(a) => send(grads, *a, &|s| s.iter_mut().for_each(|d| *d += g[0])),
            Op::Mean(a) => send(grads, *a, &|s| {
                let k = g[0] / s.len() as f64;
                s.iter_mut().for_each(|d| *d += k)
            }),
            Op::Softmax(a) => {
                let gy = dot(g, out);
                send(grads, *a, &|s| {
                    for k in 0..s.len() {
                        s[k] += out[k] * (g[k] - gy);
                    }
                })
            }
            Op::LogSoftmax(a) => {
                let total: f64 = g.iter().sum();
                send(grads, *a, &|s| {
                    for k in 0..s.len() {
                        s[k] += g[k] - out[k].exp() * total;
                    }
                })
            }
            Op::Dropout(a, mask) => send(grads, *a, &|s| {
                for k in 0..s.len() {
                    s[k] += g[k] * mask[k];
                }
            }),
            Op::WeightedSum(points, w) => {
                let wd = self.data(*w);
                for (i, p) in points.iter().enumerate() {
                    let wi = wd[i];
                    send(grads, *p, &|s| s.iter_mut().zip(g).for_each(|(d, gk)| *d += wi * gk));
                }
                send(grads, *w, &|s| {
                    for (i, p) in points.iter().enumerate() {
                        s[i] += dot(g, self.data(*p));
                    }
                });
            }
            Op::MobiusAdd(x, y, c) => self.mobius_add_backward(g, out, *x, *y, *c, grads),
            Op::Exp0(v, c) => self.radial_backward(g, *v, *c, true, grads),
            Op::Log0(v, c) => self.radial_backward(g, *v, *c, false, grads),
            Op::Project(x, c) => {
                let dx = self.data(*x);
                let cv = self.item(*c);
                let s = cv.sqrt();
                let n = norm(dx);
                let r = (1.0 - BALL_EPS) / s;
                if n > r {
                    let gx: f64 = dot(g, dx) / n;
                    send(grads, *x, &|acc| {
                        for k in 0..acc.len() {
                            acc[k] += r / n * (g[k] - dx[k] / n * gx);
                        }
                    });
                    let dr_dc = -(1.0 - BALL_EPS) / (2.0 * s * cv);
                    send(grads, *c, &|acc| acc[0] += dr_dc * gx);
                } else {
                    send(grads, *x, &|acc| acc.iter_mut().zip(g).for_each(|(d, gk)| *d += gk));
                }
            }
            Op::Dft2Real(a) => {
                // The real-part DFT kernel cos(2π(ps/S + qk/d)) is symmetric, so the
                // adjoint is the same transform.
                let shape = node.value.shape().to_vec();
                let back = spectral::dft2_real_tensor(&Tensor::new(shape, g.to_vec()));
                send(grads, *a, &|s| s.iter_mut().zip(back.data()).for_each(|(d, gk)| *d += gk));
            }
        }
    }

    fn mobius_add_backward(&self, g: &[f64], out: &[f64], x: Var, y: Var, c: Var, grads: &mut [Option<Vec<f64>>]) {
        let (dx, dy) = (self.data(x), self.data(y));
        let cv = self.item(c);
        let xy = dot(dx, dy);
        let x2 = dot(dx, dx);
        let y2 = dot(dy, dy);
        let a = 1.0 + 2.0 * cv * xy + cv * y2;
        let b = 1.0 - cv * x2;
        let d_raw = 1.0 + 2.0 * cv * xy + cv * cv * x2 * y2;
        let d = d_raw.max(MIN_NORM);
        // out = (a x + b y) / d
        let gd = if d_raw > MIN_NORM { -dot(g, out) / d } else { 0.0 };
        let gnx = dot(g, dx) / d;
        let gny = dot(g, dy) / d;
        let n = dx.len();
        if self.nodes[x.0].requires_grad {
            let slot = grads[x.0].get_or_insert_with(|| vec![0.0; n]);
            for k in 0..n {
                slot[k] += a * g[k] / d
                    + gnx * 2.0 * cv * dy[k]
                    - gny * 2.0 * cv * dx[k]
                    + gd * (2.0 * cv * dy[k] + 2.0 * cv * cv * y2 * dx[k]);
            }
        }
        if self.nodes[y.0].requires_grad {
            let slot = grads[y.0].get_or_insert_with(|| vec![0.0; n]);
            for k in 0..n {
                slot[k] += b * g[k] / d
                    + gnx * 2.0 * cv * (dx[k] + dy[k])
                    + gd * (2.0 * cv * dx[k] + 2.0 * cv * cv * x2 * dy[k]);
            }
        }
        if self.nodes[c.0].requires_grad {
            let slot = grads[c.0].get_or_insert_with(|| vec![0.0]);
            slot[0] += gnx * (2.0 * xy + y2) - gny * x2 + gd * (2.0 * xy + 2.0 * cv * x2 * y2);
        }
    }

    /// Adjoint of `v -> f(sqrt(c)|v|) v` with `f(t) = tanh(t)/t` (exp0) or
    /// `atanh(t)/t` (log0).
    fn radial_backward(&self, g: &[f64], v: Var, c: Var, is_exp: bool, grads: &mut [Option<Vec<f64>>]) {
        let dv = self.data(v);
        let cv = self.item(c);
        let s = cv.sqrt();
        let raw = norm(dv);
        let n = raw.max(MIN_NORM);
        let t = s * n;
        let (f, df_dt) = if is_exp {
            (t.tanh() / t, exp0_kernel_num(t) / (t * t))
        } else if t < ATANH_MAX {
            (t.atanh() / t, log0_kernel_num(t) / (t * t))
        } else {
            let a = ATANH_MAX.atanh();
            (a / t, -a / (t * t))
        };
        let gv_dot = dot(g, dv);
        if self.nodes[v.0].requires_grad {
            let len = dv.len();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
            let radial = if raw > MIN_NORM { s * df_dt * gv_dot / n } else { 0.0 };
            for k in 0..len {
                slot[k] += f * g[k] + radial * dv[k];
            }
        }
        if self.nodes[c.0].requires_grad {
            let slot = grads[c.0].get_or_insert_with(|| vec![0.0]);
            slot[0] += df_dt * n / (2.0 * s) * gv_dot;
        }
    }
}

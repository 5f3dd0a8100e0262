//! Reverse-mode differentiation over [`Mat`] values.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves are either
//! constants or bound to a parameter slot of a [`ParamStore`]; `backward`
//! returns the accumulated gradient for every bound slot.

use crate::linalg::Mat;

use super::params::{Grads, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Mat),
    Tanh(Var),
    Silu(Var),
    SoftmaxRows(Var),
    MeanRows(Var),
    BroadcastRows(Var),
    ConcatCols(Vec<Var>),
    StackRows(Vec<Var>),
    GatherCols(Var, Vec<usize>),
    SliceRows(Var, usize),
    NormalizeRows(Var),
    Sum(Var),
    /// Scalar output with precomputed local gradients for each input.
    ScalarFn(Vec<(Var, Mat)>),
}

struct Node {
    value: Mat,
    op: Op,
    param: Option<usize>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op, param: None });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar node");
        m.data()[0]
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to the parameter `name` of `store`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        let idx = store.index(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"));
        self.param_at(store, idx)
    }

    pub fn param_at(&mut self, store: &ParamStore, idx: usize) -> Var {
        let v = self.push(store.get_at(idx).clone(), Op::Leaf);
        self.nodes[v.0].param = Some(idx);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul_nt(self.value(b));
        self.push(out, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(out, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(out, Op::Mul(a, b))
    }

    /// Add a `1 × C` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = row_op(self.value(a), self.value(row), |x, y| x + y);
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiply every row of `a` elementwise by a `1 × C` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let out = row_op(self.value(a), self.value(row), |x, y| x * y);
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    /// Elementwise product with a constant mask.
    pub fn mul_const(&mut self, a: Var, mask: Mat) -> Var {
        let out = self.value(a).zip_map(&mask, |x, y| x * y);
        self.push(out, Op::MulConst(a, mask))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * sigmoid(x));
        self.push(out, Op::Silu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// `1 × C` mean over rows.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).mean_rows();
        self.push(out, Op::MeanRows(a))
    }

    /// Repeat a `1 × C` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Var {
        let out = self.value(a).broadcast_rows(rows);
        self.push(out, Op::BroadcastRows(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Mat::concat_cols(&mats);
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Mat> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Mat::stack_rows(&mats);
        self.push(out, Op::StackRows(parts.to_vec()))
    }

    pub fn gather_cols(&mut self, a: Var, cols: &[usize]) -> Var {
        let src = self.value(a);
        let out = Mat::from_fn(src.rows(), cols.len(), |r, c| src.get(r, cols[c]));
        self.push(out, Op::GatherCols(a, cols.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let cols: Vec<usize> = (start..start + len).collect();
        self.gather_cols(a, &cols)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.value(a).slice_rows(start, len);
        self.push(out, Op::SliceRows(a, start))
    }

    /// Scale every row to unit L2 norm. Rows must be non-zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = crate::linalg::norm(row);
            row.iter_mut().for_each(|x| *x /= n);
        }
        self.push(out, Op::NormalizeRows(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Mat::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Mean of squared entries.
    pub fn mean_square(&mut self, a: Var) -> Var {
        let sq = self.mul(a, a);
        self.mean(sq)
    }

    /// `x · w + b` with `b` a `1 × out` row.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Record a scalar computed outside the tape, with its gradient for each input.
    pub fn scalar_fn(&mut self, value: f64, local_grads: Vec<(Var, Mat)>) -> Var {
        for (v, g) in &local_grads {
            assert_eq!(self.value(*v).shape(), g.shape(), "scalar_fn gradient shape");
        }
        self.push(Mat::scalar(value), Op::ScalarFn(local_grads))
    }

    /// Gradients of the scalar `loss` with respect to every bound parameter.
    pub fn backward(&self, loss: Var, num_params: usize) -> Grads {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Mat>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Mat::scalar(1.0));
        let mut out = Grads::new(num_params);
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if let Some(p) = node.param {
                out.accumulate(p, &g);
            }
            let mut send = |v: Var, d: Mat| match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&d),
                slot @ None => *slot = Some(d),
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    send(*a, g.matmul_nt(self.value(*b)));
                    send(*b, self.value(*a).matmul_tn(&g));
                }
                Op::MatMulNt(a, b) => {
                    send(*a, g.matmul(self.value(*b)));
                    send(*b, g.matmul_tn(self.value(*a)));
                }
                Op::Add(a, b) => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub(a, b) => {
                    send(*a, g.clone());
                    send(*b, g.scale(-1.0));
                }
                Op::Mul(a, b) => {
                    send(*a, g.zip_map(self.value(*b), |x, y| x * y));
                    send(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
                Op::AddRow(a, row) => {
                    send(*row, column_sums(&g));
                    send(*a, g);
                }
                Op::MulRow(a, row) => {
                    send(*row, column_sums(&g.zip_map(self.value(*a), |x, y| x * y)));
                    send(*a, row_op(&g, self.value(*row), |x, y| x * y));
                }
                Op::Scale(a, s) => send(*a, g.scale(*s)),
                Op::MulConst(a, mask) => send(*a, g.zip_map(mask, |x, y| x * y)),
                Op::Tanh(a) => send(*a, g.zip_map(&node.value, |d, y| d * (1.0 - y * y))),
                Op::Silu(a) => send(
                    *a,
                    g.zip_map(self.value(*a), |d, x| {
                        let s = sigmoid(x);
                        d * s * (1.0 + x * (1.0 - s))
                    }),
                ),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = g.clone();
                    for r in 0..y.rows() {
                        let inner = crate::linalg::dot(g.row(r), y.row(r));
                        for (dv, yv) in d.row_mut(r).iter_mut().zip(y.row(r)) {
                            *dv = yv * (*dv - inner);
                        }
                    }
                    send(*a, d);
                }
                Op::MeanRows(a) => {
                    let rows = self.value(*a).rows();
                    send(*a, g.scale(1.0 / rows as f64).broadcast_rows(rows));
                }
                Op::BroadcastRows(a) => send(*a, column_sums(&g)),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        send(p, g.slice_cols(offset, w));
                        offset += w;
                    }
                }
                Op::StackRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let h = self.value(p).rows();
                        send(p, g.slice_rows(offset, h));
                        offset += h;
                    }
                }
                Op::GatherCols(a, cols) => {
                    let src = self.value(*a);
                    let mut d = Mat::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        for (c, &target) in cols.iter().enumerate() {
                            let v = d.get(r, target) + g.get(r, c);
                            d.set(r, target, v);
                        }
                    }
                    send(*a, d);
                }
                Op::SliceRows(a, start) => {
                    let src = self.value(*a);
                    let mut d = Mat::zeros(src.rows(), src.cols());
                    for r in 0..g.rows() {
                        d.row_mut(start + r).copy_from_slice(g.row(r));
                    }
                    send(*a, d);
                }
                Op::NormalizeRows(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut d = Mat::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let n = crate::linalg::norm(x.row(r));
                        let inner = crate::linalg::dot(g.row(r), y.row(r));
                        for ((dv, gv), yv) in d.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *dv = (gv - yv * inner) / n;
                        }
                    }
                    send(*a, d);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    send(*a, Mat::filled(r, c, g.data()[0]));
                }
                Op::ScalarFn(inputs) => {
                    let up = g.data()[0];
                    for (v, local) in inputs {
                        send(*v, local.scale(up));
                    }
                }
            }
        }
        out
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn row_op(a: &Mat, row: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
    assert_eq!(row.rows(), 1, "row operand must be 1 × C");
    assert_eq!(a.cols(), row.cols(), "row operand width");
    let mut out = a.clone();
    for r in 0..out.rows() {
        for (x, y) in out.row_mut(r).iter_mut().zip(row.data()) {
            *x = f(*x, *y);
        }
    }
    out
}

fn column_sums(g: &Mat) -> Mat {
    let mut out = Mat::zeros(1, g.cols());
    for r in 0..g.rows() {
        for (o, v) in out.data_mut().iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    out
}

//! Reverse-mode gradient tape.
//!
//! Each forward call appends one node holding its output value and the ids of
//! its inputs. `backward` walks the nodes in exact reverse recording order and
//! applies each op's local rule, so any value produced earlier on the tape is
//! available to later backward rules without extra bookkeeping.

use std::collections::BTreeMap;

use super::array::NumArray;
use super::ops::{self, matmul_raw, LOG_FLOOR};
use super::params::Params;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddRowBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Conv2d { input: Var, kernel: Var, bias: Var },
    MaxPool(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Row(Var, usize),
    Transpose(Var),
    Gather(Var, Vec<usize>),
    CrossEntropy(Var, Vec<(usize, usize)>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: NumArray,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    #[cfg(test)]
    corrupt_matmul: bool,
}

/// Gradients of one scalar output with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<NumArray>>,
    #[cfg_attr(not(test), allow(dead_code))]
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&NumArray> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradients for bound parameters, zero-filled for parameters the output
    /// does not depend on.
    pub fn collect(&self, tape: &Tape, bound: &BTreeMap<String, Var>) -> Params {
        let mut out = Params::new();
        for (name, &v) in bound {
            let g = self
                .get(v)
                .cloned()
                .unwrap_or_else(|| tape.value(v).zeros_like());
            out.insert(name.clone(), g);
        }
        out
    }
}

fn expect_shape(what: &str, a: &NumArray, b: &NumArray) -> Result<()> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(Error::dims(what, a.shape(), b.shape()))
    }
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

    pub fn value(&self, v: Var) -> &NumArray {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: NumArray, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: NumArray) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records every parameter as a leaf and returns name → handle.
    pub fn bind(&mut self, params: &Params) -> BTreeMap<String, Var> {
        params
            .iter()
            .map(|(name, arr)| (name.clone(), self.leaf(arr.clone())))
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        let m = x.cols();
        if b.len() != m {
            return Err(Error::dims("row bias", x.shape(), b.shape()));
        }
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += b.data()[i % m];
        }
        Ok(self.push(out, Op::AddRowBias(a, bias)))
    }

    /// `x · W + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_row_bias(xw, b)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        expect_shape("add", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        expect_shape("mul", self.value(a), self.value(b))?;
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= y;
        }
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        self.push(out, Op::Scale(a, c))
    }

    /// Adds a constant array that receives no gradient.
    pub fn add_const(&mut self, a: Var, c: &NumArray) -> Result<Var> {
        expect_shape("add_const", self.value(a), c)?;
        let mut out = self.value(a).clone();
        out.add_assign(c);
        Ok(self.push(out, Op::AddConst(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(ops::sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(ops::relu);
        self.push(out, Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = ops::softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Valid 3×3 convolution of a 2-D input; `bias` is `[1×1]`. No activation.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var) -> Result<Var> {
        let (x, k, b) = (self.value(input), self.value(kernel), self.value(bias));
        ops::check_conv_shapes(x, k)?;
        if b.len() != 1 {
            return Err(Error::dims("conv bias", &[1, 1], b.shape()));
        }
        let out = ops::conv2d_raw(x, k.data(), b.data()[0]);
        Ok(self.push(out, Op::Conv2d { input, kernel, bias }))
    }

    /// Global max; the gradient is routed to the first maximal element.
    pub fn max_pool(&mut self, a: Var) -> Result<Var> {
        let (best, idx) = ops::global_max_pool(self.value(a).data())?;
        Ok(self.push(NumArray::scalar(best), Op::MaxPool(a, idx)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Domain("concat of nothing".into()))?;
        let rows = self.value(first).rows();
        let mut cols = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(Error::dims(
                    "concat_cols rows",
                    self.value(first).shape(),
                    self.value(p).shape(),
                ));
            }
            cols += self.value(p).cols();
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let out = NumArray::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Domain("concat of nothing".into()))?;
        let cols = self.value(first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(Error::dims(
                    "concat_rows cols",
                    self.value(first).shape(),
                    v.shape(),
                ));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let out = NumArray::matrix(rows, cols, data)?;
        Ok(self.push(out, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if len == 0 || start + len > x.cols() {
            return Err(Error::Dimension(format!(
                "column slice {start}..{} out of range for {:?}",
                start + len,
                x.shape()
            )));
        }
        let mut data = Vec::with_capacity(x.rows() * len);
        for r in 0..x.rows() {
            data.extend_from_slice(&x.row_slice(r)[start..start + len]);
        }
        let out = NumArray::matrix(x.rows(), len, data)?;
        Ok(self.push(out, Op::SliceCols(a, start)))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        let x = self.value(a);
        if r >= x.rows() {
            return Err(Error::Dimension(format!(
                "row {r} out of range for {:?}",
                x.shape()
            )));
        }
        let out = NumArray::row(x.row_slice(r).to_vec())?;
        Ok(self.push(out, Op::Row(a, r)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather(&mut self, table: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let (v, e) = (t.rows(), t.cols());
        if idx.is_empty() {
            return Err(Error::Domain("gather with no indices".into()));
        }
        let mut data = Vec::with_capacity(idx.len() * e);
        for &i in idx {
            if i >= v {
                return Err(Error::Domain(format!("index {i} out of range for {v} rows")));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = NumArray::matrix(idx.len(), e, data)?;
        Ok(self.push(out, Op::Gather(table, idx.to_vec())))
    }

    /// Sum over `(row, class)` targets of `-ln(max(p[row][class], 1e-12))`.
    pub fn cross_entropy(&mut self, probs: Var, targets: &[(usize, usize)]) -> Result<Var> {
        let p = self.value(probs);
        let mut total = 0.0;
        for &(r, c) in targets {
            if r >= p.rows() {
                return Err(Error::Domain(format!("target row {r} out of range")));
            }
            total += ops::cross_entropy_loss(p.row_slice(r), c)?;
        }
        Ok(self.push(
            NumArray::scalar(total),
            Op::CrossEntropy(probs, targets.to_vec()),
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(NumArray::scalar(s), Op::Sum(a))
    }

    /// Reverse pass from a `[1×1]` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar output, got {:?}",
                out.shape()
            )));
        }
        if !out.is_finite() {
            return Err(Error::Numeric("non-finite loss".into()));
        }
        let mut grads: Vec<Option<NumArray>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(NumArray::scalar(1.0));
        let mut visited = Vec::new();

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            visited.push(id);
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    fn backward_node(&self, id: usize, g: &NumArray, grads: &mut [Option<NumArray>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                let bt = bv.transpose();
                let da = matmul_raw(g.data(), bt.data(), n, m, k);
                let at = av.transpose();
                #[allow(unused_mut)]
                let mut db = matmul_raw(at.data(), g.data(), k, n, m);
                #[cfg(test)]
                if self.corrupt_matmul {
                    db.iter_mut().for_each(|v| *v *= 1.5);
                }
                accumulate(grads, *a, NumArray::matrix(n, k, da).expect("shape"));
                accumulate(grads, *b, NumArray::matrix(k, m, db).expect("shape"));
            }
            Op::AddRowBias(a, b) => {
                let m = g.cols();
                let mut db = vec![0.0; m];
                for (i, v) in g.data().iter().enumerate() {
                    db[i % m] += v;
                }
                let shape = self.value(*b).shape().to_vec();
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, NumArray::new(shape, db).expect("shape"));
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let mut da = g.clone();
                let mut db = g.clone();
                for i in 0..g.len() {
                    da.data_mut()[i] *= bv.data()[i];
                    db.data_mut()[i] *= av.data()[i];
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|v| v * c)),
            Op::AddConst(a) => accumulate(grads, *a, g.clone()),
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                for (dv, &s) in d.data_mut().iter_mut().zip(y.data()) {
                    *dv *= s * (1.0 - s);
                }
                accumulate(grads, *a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                for (dv, &t) in d.data_mut().iter_mut().zip(y.data()) {
                    *dv *= 1.0 - t * t;
                }
                accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut d = g.clone();
                for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                    if xv <= 0.0 {
                        *dv = 0.0;
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let c = y.cols();
                let mut d = g.clone();
                for r in 0..y.rows() {
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        d.data_mut()[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
            } => {
                let x = self.value(*input);
                let k = self.value(*kernel);
                let (w, oh, ow) = (x.cols(), g.rows(), g.cols());
                let mut dx = x.zeros_like();
                let mut dk = k.zeros_like();
                let gd = g.data();
                for a in 0..3 {
                    for b in 0..3 {
                        let kv = k.data()[a * 3 + b];
                        let mut acc = 0.0;
                        for i in 0..oh {
                            let xrow = &x.data()[(i + a) * w + b..(i + a) * w + b + ow];
                            let grow = &gd[i * ow..(i + 1) * ow];
                            acc += xrow.iter().zip(grow).map(|(p, q)| p * q).sum::<f64>();
                            let dxrow = &mut dx.data_mut()[(i + a) * w + b..(i + a) * w + b + ow];
                            for (dv, &gv) in dxrow.iter_mut().zip(grow) {
                                *dv += gv * kv;
                            }
                        }
                        dk.data_mut()[a * 3 + b] = acc;
                    }
                }
                let db: f64 = gd.iter().sum();
                let bshape = self.value(*bias).shape().to_vec();
                accumulate(grads, *input, dx);
                accumulate(grads, *kernel, dk);
                accumulate(grads, *bias, NumArray::new(bshape, vec![db]).expect("shape"));
            }
            Op::MaxPool(a, idx) => {
                let mut d = self.value(*a).zeros_like();
                d.data_mut()[*idx] = g.data()[0];
                accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let w = pv.cols();
                    let mut data = Vec::with_capacity(pv.len());
                    for r in 0..g.rows() {
                        data.extend_from_slice(&g.row_slice(r)[offset..offset + w]);
                    }
                    accumulate(
                        grads,
                        p,
                        NumArray::new(pv.shape().to_vec(), data).expect("shape"),
                    );
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let n = pv.len();
                    let data = g.data()[offset..offset + n].to_vec();
                    accumulate(
                        grads,
                        p,
                        NumArray::new(pv.shape().to_vec(), data).expect("shape"),
                    );
                    offset += n;
                }
            }
            Op::SliceCols(a, start) => {
                let mut d = self.value(*a).zeros_like();
                let (cols, w) = (d.cols(), g.cols());
                for r in 0..g.rows() {
                    d.data_mut()[r * cols + start..r * cols + start + w]
                        .copy_from_slice(g.row_slice(r));
                }
                accumulate(grads, *a, d);
            }
            Op::Row(a, r) => {
                let mut d = self.value(*a).zeros_like();
                let c = d.cols();
                d.data_mut()[r * c..(r + 1) * c].copy_from_slice(g.data());
                accumulate(grads, *a, d);
            }
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Gather(table, idx) => {
                let mut d = self.value(*table).zeros_like();
                let e = d.cols();
                for (row, &i) in idx.iter().enumerate() {
                    for (dv, &gv) in d.data_mut()[i * e..(i + 1) * e]
                        .iter_mut()
                        .zip(g.row_slice(row))
                    {
                        *dv += gv;
                    }
                }
                accumulate(grads, *table, d);
            }
            Op::CrossEntropy(probs, targets) => {
                let p = self.value(*probs);
                let mut d = p.zeros_like();
                let c = p.cols();
                for &(r, k) in targets {
                    let pv = p.data()[r * c + k];
                    if pv > LOG_FLOOR {
                        d.data_mut()[r * c + k] -= g.data()[0] / pv;
                    }
                }
                accumulate(grads, *probs, d);
            }
            Op::Sum(a) => {
                let d = self.value(*a).map(|_| g.data()[0]);
                accumulate(grads, *a, d);
            }
        }
    }
}

fn accumulate(grads: &mut [Option<NumArray>], v: Var, g: NumArray) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
impl Tape {
    pub(crate) fn set_corrupt_matmul(&mut self, on: bool) {
        self.corrupt_matmul = on;
    }
}

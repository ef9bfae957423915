//! Tape-based reverse-mode differentiation over a closed set of tensor ops.
//!
//! Nodes are appended in evaluation order, so the tape is acyclic by
//! construction and a reverse sweep visits every consumer before its inputs.
//! Each op validates shapes eagerly and returns an error naming itself.

use super::params::ParamStore;
use super::tensor::{
    lane_base, lane_layout, log_softmax, mish_grad_scalar, mish_scalar, sigmoid_scalar, softmax,
    softplus_scalar, Tensor,
};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param(String),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    BroadcastRows(Var),
    BroadcastScalar(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Softplus(Var),
    Mish(Var),
    Relu(Var),
    Square(Var),
    Sqrt(Var),
    Powf(Var, f64),
    Softmax(Var, usize),
    LogSoftmax(Var, usize),
    Concat(Vec<Var>, usize),
    Mean(Var, usize),
    SumAll(Var),
    Transpose(Var),
    Pick(Var, Vec<usize>),
    SliceCols(Var, usize),
    Reshape(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Const => "const",
            Op::Param(_) => "param",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::BroadcastRows(_) => "broadcast_rows",
            Op::BroadcastScalar(_) => "broadcast_scalar",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Tanh(_) => "tanh",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Sigmoid(_) => "sigmoid",
            Op::Softplus(_) => "softplus",
            Op::Mish(_) => "mish",
            Op::Relu(_) => "relu",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Powf(..) => "powf",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Concat(..) => "concat",
            Op::Mean(..) => "mean",
            Op::SumAll(_) => "sum",
            Op::Transpose(_) => "transpose",
            Op::Pick(..) => "pick",
            Op::SliceCols(..) => "slice_cols",
            Op::Reshape(_) => "reshape",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for later differentiation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        value.check_finite(op.name())?;
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    fn check(&self, v: Var, op: &'static str) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Graph {
                op,
                detail: format!("node {} does not belong to this graph", v.0),
            });
        }
        Ok(())
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Const)
    }

    /// Leaf bound to a named parameter; its gradient lands in the store on [`Graph::backward`].
    pub fn param(&mut self, name: &str, store: &ParamStore) -> Result<Var> {
        let t = store
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?
            .clone();
        self.push(t, Op::Param(name.to_string()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a, "matmul")?;
        self.check(b, "matmul")?;
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        self.check(a, op)?;
        self.check(b, op)?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "div")?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(v, Op::Div(a, b))
    }

    /// Repeats a `1 × c` (or length-`c`) row `rows` times into `rows × c`.
    pub fn broadcast_rows(&mut self, row: Var, rows: usize) -> Result<Var> {
        self.check(row, "broadcast_rows")?;
        let r = self.value(row);
        let c = match r.shape() {
            [c] | [1, c] => *c,
            s => return Err(Error::shape("broadcast_rows", format!("expected a row, got {s:?}"))),
        };
        if rows == 0 {
            return Err(Error::shape("broadcast_rows", "zero rows"));
        }
        let mut data = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            data.extend_from_slice(r.data());
        }
        let v = Tensor::new(vec![rows, c], data)?;
        self.push(v, Op::BroadcastRows(row))
    }

    /// Fills `shape` with the single element of `x`.
    pub fn broadcast_scalar(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x, "broadcast_scalar")?;
        if self.value(x).len() != 1 {
            return Err(Error::shape(
                "broadcast_scalar",
                format!("expected one element, got {:?}", self.shape(x)),
            ));
        }
        let v = Tensor::filled(shape, self.value(x).item());
        self.push(v, Op::BroadcastScalar(x))
    }

    /// `x + b` with a row bias broadcast over the rows of matrix `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let rows = match self.shape(x) {
            [r, _] => *r,
            s => return Err(Error::shape("add_row", format!("expected a matrix, got {s:?}"))),
        };
        let bb = self.broadcast_rows(b, rows)?;
        self.add(x, bb)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x, "reshape")?;
        let v = self.value(x).reshape(shape.to_vec())?;
        self.push(v, Op::Reshape(x))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Result<Var> {
        self.check(x, "scale")?;
        let v = self.value(x).map(|a| a * k);
        self.push(v, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Result<Var> {
        self.check(x, "add_scalar")?;
        let v = self.value(x).map(|a| a + k);
        self.push(v, Op::AddScalar(x))
    }

    pub fn neg(&mut self, x: Var) -> Result<Var> {
        self.scale(x, -1.0)
    }

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        self.check(x, op.name())?;
        self.value(x).check_finite(op.name())?;
        let v = self.value(x).map(f);
        self.push(v, op)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), sigmoid_scalar)
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Softplus(x), softplus_scalar)
    }

    pub fn mish(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Mish(x), mish_scalar)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), |a| a.max(0.0))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Square(x), |a| a * a)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    /// `x^p` for a constant exponent; `x` should be non-negative unless `p` is integral.
    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var> {
        self.unary(x, Op::Powf(x, p), |a| a.powf(p))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x, "softmax")?;
        let v = softmax(self.value(x), axis)?;
        self.push(v, Op::Softmax(x, axis))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x, "log_softmax")?;
        let v = log_softmax(self.value(x), axis)?;
        self.push(v, Op::LogSoftmax(x, axis))
    }

    /// Concatenates rank-2 tensors along `axis` (0 = stack rows, 1 = join columns).
    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        for &x in xs {
            self.check(x, "concat")?;
            if self.shape(x).len() != 2 {
                return Err(Error::shape("concat", format!("rank-2 inputs only, got {:?}", self.shape(x))));
            }
        }
        let first = self.shape(xs[0]).to_vec();
        let v = match axis {
            0 => {
                let c = first[1];
                let mut rows = 0;
                let mut data = Vec::new();
                for &x in xs {
                    let s = self.shape(x);
                    if s[1] != c {
                        return Err(Error::shape("concat", format!("column mismatch {s:?} vs {first:?}")));
                    }
                    rows += s[0];
                    data.extend_from_slice(self.value(x).data());
                }
                Tensor::new(vec![rows, c], data)?
            }
            1 => {
                let r = first[0];
                let mut cols = 0;
                for &x in xs {
                    let s = self.shape(x);
                    if s[0] != r {
                        return Err(Error::shape("concat", format!("row mismatch {s:?} vs {first:?}")));
                    }
                    cols += s[1];
                }
                let mut data = Vec::with_capacity(r * cols);
                for i in 0..r {
                    for &x in xs {
                        data.extend_from_slice(self.value(x).row_slice(i));
                    }
                }
                Tensor::new(vec![r, cols], data)?
            }
            a => return Err(Error::shape("concat", format!("axis {a}"))),
        };
        self.push(v, Op::Concat(xs.to_vec(), axis))
    }

    /// Mean along `axis`; matrices keep rank (`1 × c` for axis 0, `r × 1` for axis 1).
    pub fn mean(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check(x, "mean")?;
        let t = self.value(x);
        let (lanes, lane_len, stride) = lane_layout(t, axis, "mean")?;
        let mut out = Vec::with_capacity(lanes);
        for l in 0..lanes {
            let base = lane_base(l, t, axis);
            let s: f64 = (0..lane_len).map(|i| t.data()[base + i * stride]).sum();
            out.push(s / lane_len as f64);
        }
        let shape = match (t.shape(), axis) {
            ([_], _) => vec![1],
            ([_, c], 0) => vec![1, *c],
            ([r, _], _) => vec![*r, 1],
            _ => unreachable!(),
        };
        let v = Tensor::new(shape, out)?;
        self.push(v, Op::Mean(x, axis))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x, "sum")?;
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.check(x, "transpose")?;
        if self.shape(x).len() != 2 {
            return Err(Error::shape("transpose", format!("{:?}", self.shape(x))));
        }
        let v = self.value(x).transpose()?;
        self.push(v, Op::Transpose(x))
    }

    /// Selects `x[i, idx[i]]` for each row, producing `rows × 1`.
    pub fn pick(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        self.check(x, "pick")?;
        let (r, c) = match self.shape(x) {
            [r, c] => (*r, *c),
            s => return Err(Error::shape("pick", format!("{s:?}"))),
        };
        if idx.len() != r {
            return Err(Error::shape("pick", format!("{} indices for {r} rows", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            return Err(Error::shape("pick", format!("index {bad} out of {c} columns")));
        }
        let t = self.value(x);
        let data = idx.iter().enumerate().map(|(i, &j)| t.get2(i, j)).collect();
        let v = Tensor::new(vec![r, 1], data)?;
        self.push(v, Op::Pick(x, idx.to_vec()))
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.check(x, "slice_cols")?;
        let (r, c) = match self.shape(x) {
            [r, c] => (*r, *c),
            s => return Err(Error::shape("slice_cols", format!("{s:?}"))),
        };
        if start >= end || end > c {
            return Err(Error::shape("slice_cols", format!("[{start}, {end}) of {c} columns")));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&t.row_slice(i)[start..end]);
        }
        let v = Tensor::new(vec![r, end - start], data)?;
        self.push(v, Op::SliceCols(x, start))
    }

    /// Reverse sweep from the scalar `loss`, writing parameter gradients into `store`.
    ///
    /// Every gradient in the store is reset first, so parameters the loss does not
    /// reach end up with zeros.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.zero_grads();
        for (node, g) in self.nodes.iter().zip(grads) {
            if let (Op::Param(name), Some(g)) = (&node.op, g) {
                store.accumulate_grad(name, &g)?;
            }
        }
        Ok(())
    }

    /// Gradient of the scalar `loss` with respect to every node (None when unreachable).
    pub fn gradients(&self, loss: Var) -> Result<Vec<Option<Tensor>>> {
        self.check(loss, "backward")?;
        if self.value(loss).len() != 1 {
            return Err(Error::Graph {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", self.shape(loss)),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(self.shape(loss), 1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            for (input, gi) in self.local_grads(node, &g)? {
                if input.0 >= id {
                    return Err(Error::Graph {
                        op: node.op.name(),
                        detail: "input recorded after its consumer".into(),
                    });
                }
                accumulate(&mut grads[input.0], gi, node.op.name())?;
            }
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    fn local_grads(&self, node: &Node, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let out = match &node.op {
            Op::Const | Op::Param(_) => vec![],
            Op::MatMul(a, b) => {
                let ga = g.matmul(&val(*b).transpose()?)?;
                let gb = val(*a).transpose()?.matmul(g)?;
                vec![(*a, ga), (*b, gb)]
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|x| -x))],
            Op::Mul(a, b) => vec![
                (*a, g.zip_map(val(*b), |gi, bi| gi * bi)),
                (*b, g.zip_map(val(*a), |gi, ai| gi * ai)),
            ],
            Op::Div(a, b) => {
                let bv = val(*b);
                let ga = g.zip_map(bv, |gi, bi| gi / bi);
                let gb = g.zip_map(y, |gi, yi| gi * yi).zip_map(bv, |t, bi| -t / bi);
                vec![(*a, ga), (*b, gb)]
            }
            Op::BroadcastRows(r) => {
                let (rows, c) = (g.shape()[0], g.shape()[1]);
                let mut acc = vec![0.0; c];
                for i in 0..rows {
                    for (a, &v) in acc.iter_mut().zip(g.row_slice(i)) {
                        *a += v;
                    }
                }
                vec![(*r, Tensor::new(val(*r).shape().to_vec(), acc)?)]
            }
            Op::BroadcastScalar(x) => vec![(*x, Tensor::new(val(*x).shape().to_vec(), vec![g.sum()])?)],
            Op::Scale(x, k) => vec![(*x, g.map(|v| v * k))],
            Op::AddScalar(x) => vec![(*x, g.clone())],
            Op::Tanh(x) => vec![(*x, g.zip_map(y, |gi, t| gi * (1.0 - t * t)))],
            Op::Exp(x) => vec![(*x, g.zip_map(y, |gi, e| gi * e))],
            Op::Log(x) => vec![(*x, g.zip_map(val(*x), |gi, a| gi / a))],
            Op::Sigmoid(x) => vec![(*x, g.zip_map(y, |gi, s| gi * s * (1.0 - s)))],
            Op::Softplus(x) => vec![(*x, g.zip_map(val(*x), |gi, a| gi * sigmoid_scalar(a)))],
            Op::Mish(x) => vec![(*x, g.zip_map(val(*x), |gi, a| gi * mish_grad_scalar(a)))],
            Op::Relu(x) => vec![(*x, g.zip_map(val(*x), |gi, a| if a > 0.0 { gi } else { 0.0 }))],
            Op::Square(x) => vec![(*x, g.zip_map(val(*x), |gi, a| 2.0 * a * gi))],
            Op::Sqrt(x) => vec![(*x, g.zip_map(y, |gi, s| gi / (2.0 * s)))],
            Op::Powf(x, p) => {
                let p = *p;
                let gx = g.zip_map(val(*x), |gi, a| {
                    if p == 0.0 {
                        0.0
                    } else {
                        gi * p * a.powf(p - 1.0)
                    }
                });
                vec![(*x, gx)]
            }
            Op::Softmax(x, axis) => {
                let gy = g.zip_map(y, |a, b| a * b);
                let lane_sums = lane_sum(&gy, *axis)?;
                let mut gx = gy;
                for_each_lane(y, *axis, |l, idx| {
                    gx.data_mut()[idx] -= y.data()[idx] * lane_sums[l];
                })?;
                vec![(*x, gx)]
            }
            Op::LogSoftmax(x, axis) => {
                let lane_sums = lane_sum(g, *axis)?;
                let mut gx = g.clone();
                for_each_lane(y, *axis, |l, idx| {
                    gx.data_mut()[idx] -= y.data()[idx].exp() * lane_sums[l];
                })?;
                vec![(*x, gx)]
            }
            Op::Concat(xs, axis) => {
                let mut out = Vec::with_capacity(xs.len());
                let mut offset = 0;
                for &x in xs {
                    let s = val(x).shape();
                    let (r, c) = (s[0], s[1]);
                    let part = if *axis == 0 {
                        let w = g.shape()[1];
                        g.data()[offset * w..(offset + r) * w].to_vec()
                    } else {
                        let mut d = Vec::with_capacity(r * c);
                        for i in 0..r {
                            d.extend_from_slice(&g.row_slice(i)[offset..offset + c]);
                        }
                        d
                    };
                    offset += if *axis == 0 { r } else { c };
                    out.push((x, Tensor::new(s.to_vec(), part)?));
                }
                out
            }
            Op::Mean(x, axis) => {
                let xv = val(*x);
                let (_, lane_len, _) = lane_layout(xv, *axis, "mean")?;
                let mut gx = Tensor::zeros(xv.shape());
                for_each_lane(xv, *axis, |l, idx| {
                    gx.data_mut()[idx] = g.data()[l] / lane_len as f64;
                })?;
                vec![(*x, gx)]
            }
            Op::SumAll(x) => vec![(*x, Tensor::filled(val(*x).shape(), g.item()))],
            Op::Transpose(x) => vec![(*x, g.transpose()?)],
            Op::Pick(x, idx) => {
                let xv = val(*x);
                let mut gx = Tensor::zeros(xv.shape());
                let c = xv.shape()[1];
                for (i, &j) in idx.iter().enumerate() {
                    gx.data_mut()[i * c + j] = g.data()[i];
                }
                vec![(*x, gx)]
            }
            Op::SliceCols(x, start) => {
                let xv = val(*x);
                let c = xv.shape()[1];
                let w = g.shape()[1];
                let mut gx = Tensor::zeros(xv.shape());
                for i in 0..g.shape()[0] {
                    gx.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row_slice(i));
                }
                vec![(*x, gx)]
            }
            Op::Reshape(x) => vec![(*x, g.reshape(val(*x).shape().to_vec())?)],
        };
        Ok(out)
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor, op: &'static str) -> Result<()> {
    match slot {
        None => *slot = Some(g),
        Some(acc) => {
            if acc.shape() != g.shape() {
                return Err(Error::shape(op, format!("gradient {:?} vs {:?}", acc.shape(), g.shape())));
            }
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
    }
    Ok(())
}

fn lane_sum(t: &Tensor, axis: usize) -> Result<Vec<f64>> {
    let (lanes, _, _) = lane_layout(t, axis, "backward")?;
    let mut sums = vec![0.0; lanes];
    for_each_lane(t, axis, |l, idx| sums[l] += t.data()[idx])?;
    Ok(sums)
}

fn for_each_lane(t: &Tensor, axis: usize, mut f: impl FnMut(usize, usize)) -> Result<()> {
    let (lanes, lane_len, stride) = lane_layout(t, axis, "backward")?;
    for l in 0..lanes {
        let base = lane_base(l, t, axis);
        for i in 0..lane_len {
            f(l, base + i * stride);
        }
    }
    Ok(())
}

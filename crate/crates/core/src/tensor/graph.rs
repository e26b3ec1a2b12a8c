use super::kernels::{self, dot, hash_uniform, matmul_nn, matmul_nt, matmul_tn, sigmoid};
use super::{Scalar, Tensor, TensorError};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Weight handles of one GRU cell; gate blocks are ordered (reset, update, candidate).
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

enum Value<'a, T> {
    Owned(Vec<T>),
    Borrowed(&'a [T]),
}

impl<T> Value<'_, T> {
    fn as_slice(&self) -> &[T] {
        match self {
            Value::Owned(v) => v,
            Value::Borrowed(s) => s,
        }
    }
}

struct GruCache<T> {
    r: Vec<T>,
    z: Vec<T>,
    n: Vec<T>,
    gh_n: Vec<T>,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Concat(Vec<Var>, usize),
    Slice { input: Var, axis: usize, start: usize },
    Reshape(Var),
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    Softmax(Var),
    Dropout(Var, Vec<T>),
    L1Loss(Var, Var),
    BceWithLogits(Var, Var),
    Mean(Var),
    Sum(Var),
    GatherRows(Var, Vec<usize>),
    Gru { x: Var, h: Var, w: GruVars, cache: GruCache<T> },
}

fn grad_slot<'g, T: Scalar>(
    nodes: &[Node<'_, T>],
    grads: &'g mut [Option<Vec<T>>],
    v: Var,
) -> Option<&'g mut Vec<T>> {
    let n = &nodes[v.0];
    if !n.requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n.rows * n.cols]))
}

struct Node<'a, T> {
    rows: usize,
    cols: usize,
    value: Value<'a, T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Tape of executed operations for reverse-mode differentiation.
///
/// Every value is a matrix `[rows, cols]`; rank-0 and rank-1 tensors enter as a single row.
/// Parameters are borrowed for the lifetime of the graph, so a graph is built per batch and
/// dropped before the optimizer mutates the parameters.
pub struct Graph<'a, T> {
    nodes: Vec<Node<'a, T>>,
    train: bool,
    seed: u64,
    step: u64,
    grads: Option<Vec<Option<Vec<T>>>>,
    visits: usize,
}

impl<'a, T: Scalar> Default for Graph<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Scalar> Graph<'a, T> {
    /// Inference graph: dropout is the identity.
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            train: false,
            seed: 0,
            step: 0,
            grads: None,
            visits: 0,
        }
    }

    /// Training graph; dropout masks are keyed by `(seed, step, op index)`.
    pub fn training(seed: u64, step: u64) -> Self {
        Self {
            train: true,
            seed,
            step,
            ..Self::new()
        }
    }

    pub fn is_training(&self) -> bool {
        self.train
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, data: Vec<T>, op: Op<T>, inputs: &[Var]) -> Var {
        debug_assert_eq!(rows * cols, data.len());
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Owned(data),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a borrowed parameter; it is differentiable iff the tensor requires grad.
    pub fn param(&mut self, tensor: &'a Tensor<T>) -> Var {
        self.nodes.push(Node {
            rows: tensor.rows(),
            cols: tensor.cols(),
            value: Value::Borrowed(tensor.data()),
            op: Op::Leaf,
            requires_grad: tensor.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an owned leaf (differentiable iff `tensor.requires_grad()`).
    pub fn input(&mut self, tensor: Tensor<T>) -> Var {
        let (rows, cols, rg) = (tensor.rows(), tensor.cols(), tensor.requires_grad());
        self.nodes.push(Node {
            rows,
            cols,
            value: Value::Owned(tensor.into_data()),
            op: Op::Leaf,
            requires_grad: rg,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable matrix input.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var, TensorError> {
        if rows * cols != data.len() {
            return Err(TensorError::DataLength {
                shape: vec![rows, cols],
                len: data.len(),
            });
        }
        Ok(self.push(rows, cols, data, Op::Leaf, &[]))
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.push(rows, cols, vec![T::zero(); rows * cols], Op::Leaf, &[])
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        let n = &self.nodes[v.0];
        [n.rows, n.cols]
    }

    pub fn value(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.as_slice()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor<T> {
        let [r, c] = self.shape(v);
        Tensor::new(vec![r, c], self.value(v).to_vec()).expect("node shape consistent")
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<[usize; 2], TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::Shape {
                op,
                left: sa.to_vec(),
                right: sb.to_vec(),
            });
        }
        Ok(sa)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let ([m, k], [k2, n]) = (self.shape(a), self.shape(b));
        if k != k2 {
            return Err(TensorError::Shape {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let mut out = vec![T::zero(); m * n];
        matmul_nn(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.push(m, n, out, Op::MatMul(a, b), &[a, b]))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Result<(usize, usize, Vec<T>), TensorError> {
        let [r, c] = self.same_shape(op, a, b)?;
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((r, c, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c, out) = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(r, c, out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c, out) = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(r, c, out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (r, c, out) = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(r, c, out, Op::Mul(a, b), &[a, b]))
    }

    /// Adds the row vector `bias [1, n]` to every row of `x [m, n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let ([m, n], [br, bc]) = (self.shape(x), self.shape(bias));
        if br != 1 || bc != n {
            return Err(TensorError::Shape {
                op: "add_bias",
                left: vec![m, n],
                right: vec![br, bc],
            });
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks(n.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(&v, &bb)| v + bb))
            .collect::<Vec<_>>();
        Ok(self.push(m, n, out, Op::AddBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let [r, cc] = self.shape(x);
        let out = self.value(x).iter().map(|&v| v * c).collect();
        self.push(r, cc, out, Op::Scale(x, c), &[x])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Empty("concat"))?;
        let [r0, c0] = self.shape(first);
        match axis {
            0 => {
                let mut rows = 0;
                let mut out = Vec::new();
                for &p in parts {
                    let [r, c] = self.shape(p);
                    if c != c0 {
                        return Err(TensorError::Shape {
                            op: "concat(axis 0)",
                            left: vec![r0, c0],
                            right: vec![r, c],
                        });
                    }
                    rows += r;
                    out.extend_from_slice(self.value(p));
                }
                Ok(self.push(rows, c0, out, Op::Concat(parts.to_vec(), 0), parts))
            }
            1 => {
                let mut cols = 0;
                for &p in parts {
                    let [r, c] = self.shape(p);
                    if r != r0 {
                        return Err(TensorError::Shape {
                            op: "concat(axis 1)",
                            left: vec![r0, c0],
                            right: vec![r, c],
                        });
                    }
                    cols += c;
                }
                let mut out = Vec::with_capacity(r0 * cols);
                for i in 0..r0 {
                    for &p in parts {
                        let c = self.shape(p)[1];
                        out.extend_from_slice(&self.value(p)[i * c..(i + 1) * c]);
                    }
                }
                Ok(self.push(r0, cols, out, Op::Concat(parts.to_vec(), 1), parts))
            }
            _ => Err(TensorError::Axis { op: "concat", axis }),
        }
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var, TensorError> {
        let [r, c] = self.shape(x);
        let extent = match axis {
            0 => r,
            1 => c,
            _ => return Err(TensorError::Axis { op: "slice", axis }),
        };
        if start + len > extent {
            return Err(TensorError::Shape {
                op: "slice",
                left: vec![r, c],
                right: vec![start, start + len],
            });
        }
        let v = self.value(x);
        let (out, rr, cc) = if axis == 0 {
            (v[start * c..(start + len) * c].to_vec(), len, c)
        } else {
            let mut out = Vec::with_capacity(r * len);
            for i in 0..r {
                out.extend_from_slice(&v[i * c + start..i * c + start + len]);
            }
            (out, r, len)
        };
        Ok(self.push(rr, cc, out, Op::Slice { input: x, axis, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, TensorError> {
        let [r, c] = self.shape(x);
        if r * c != rows * cols {
            return Err(TensorError::Shape {
                op: "reshape",
                left: vec![r, c],
                right: vec![rows, cols],
            });
        }
        let out = self.value(x).to_vec();
        Ok(self.push(rows, cols, out, Op::Reshape(x), &[x]))
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let [r, c] = self.shape(x);
        let v = self.value(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        self.push(c, r, out, Op::Transpose(x), &[x])
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T) -> (usize, usize, Vec<T>) {
        let [r, c] = self.shape(x);
        (r, c, self.value(x).iter().map(|&v| f(v)).collect())
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let (r, c, out) = self.unary(x, |v| v.tanh());
        self.push(r, c, out, Op::Tanh(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let (r, c, out) = self.unary(x, sigmoid);
        self.push(r, c, out, Op::Sigmoid(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let (r, c, out) = self.unary(x, |v| v.max(T::zero()));
        self.push(r, c, out, Op::Relu(x), &[x])
    }

    /// Softmax over the last axis (each row independently).
    pub fn softmax(&mut self, x: Var) -> Var {
        let [r, c] = self.shape(x);
        let mut out = self.value(x).to_vec();
        for row in out.chunks_mut(c.max(1)) {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let mut s = T::zero();
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in row.iter_mut() {
                *v /= s;
            }
        }
        self.push(r, c, out, Op::Softmax(x), &[x])
    }

    /// Inverted dropout; identity on inference graphs or when `rate` is zero.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if !self.train || rate <= 0.0 {
            return x;
        }
        let op_index = self.nodes.len() as u64;
        let keep = T::of(1.0 / (1.0 - rate));
        let [r, c] = self.shape(x);
        let mask: Vec<T> = (0..r * c)
            .map(|j| {
                if hash_uniform(self.seed, self.step, op_index, j as u64) >= rate {
                    keep
                } else {
                    T::zero()
                }
            })
            .collect();
        let out = self.value(x).iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        self.push(r, c, out, Op::Dropout(x, mask), &[x])
    }

    /// Mean absolute error, a `[1, 1]` scalar.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var, TensorError> {
        self.same_shape("l1_loss", pred, target)?;
        let n = self.value(pred).len();
        if n == 0 {
            return Err(TensorError::Empty("l1_loss"));
        }
        let s = self
            .value(pred)
            .iter()
            .zip(self.value(target))
            .fold(T::zero(), |a, (&p, &t)| a + (p - t).abs());
        let out = vec![s / T::of(n as f64)];
        Ok(self.push(1, 1, out, Op::L1Loss(pred, target), &[pred, target]))
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`, a `[1, 1]` scalar.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Var) -> Result<Var, TensorError> {
        self.same_shape("bce_with_logits", logits, targets)?;
        let n = self.value(logits).len();
        if n == 0 {
            return Err(TensorError::Empty("bce_with_logits"));
        }
        let s = self
            .value(logits)
            .iter()
            .zip(self.value(targets))
            .fold(T::zero(), |a, (&x, &t)| {
                a + x.max(T::zero()) - x * t + (T::one() + (-x.abs()).exp()).ln()
            });
        let out = vec![s / T::of(n as f64)];
        Ok(self.push(1, 1, out, Op::BceWithLogits(logits, targets), &[logits]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(TensorError::Empty("mean"));
        }
        let s = self.value(x).iter().fold(T::zero(), |a, &b| a + b);
        Ok(self.push(1, 1, vec![s / T::of(n as f64)], Op::Mean(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().fold(T::zero(), |a, &b| a + b);
        self.push(1, 1, vec![s], Op::Sum(x), &[x])
    }

    /// Embedding lookup: rows of `table [V, D]` selected by `ids`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let [v, d] = self.shape(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: id,
                    len: v,
                });
            }
            out.extend_from_slice(&self.value(table)[id * d..(id + 1) * d]);
        }
        Ok(self.push(ids.len(), d, out, Op::GatherRows(table, ids.to_vec()), &[table]))
    }

    /// One GRU step over a batch of rows: `x [B, I]`, `h [B, H]` → `h' [B, H]`.
    ///
    /// r = σ(x W_ir + b_ir + h W_hr + b_hr), z = σ(x W_iz + b_iz + h W_hz + b_hz),
    /// n = tanh(x W_in + b_in + r ⊙ (h W_hn + b_hn)), h' = (1 − z) ⊙ n + z ⊙ h.
    pub fn gru_cell(&mut self, x: Var, h: Var, w: GruVars) -> Result<Var, TensorError> {
        let ([b, i], [bh, hd]) = (self.shape(x), self.shape(h));
        let check = |op: &'static str, got: [usize; 2], want: [usize; 2]| {
            if got != want {
                Err(TensorError::Shape {
                    op,
                    left: want.to_vec(),
                    right: got.to_vec(),
                })
            } else {
                Ok(())
            }
        };
        check("gru_cell(h rows)", [bh, hd], [b, hd])?;
        check("gru_cell(w_ih)", self.shape(w.w_ih), [i, 3 * hd])?;
        check("gru_cell(w_hh)", self.shape(w.w_hh), [hd, 3 * hd])?;
        check("gru_cell(b_ih)", self.shape(w.b_ih), [1, 3 * hd])?;
        check("gru_cell(b_hh)", self.shape(w.b_hh), [1, 3 * hd])?;

        let g3 = 3 * hd;
        let mut gi = vec![T::zero(); b * g3];
        let mut gh = vec![T::zero(); b * g3];
        matmul_nn(self.value(x), self.value(w.w_ih), &mut gi, b, i, g3);
        matmul_nn(self.value(h), self.value(w.w_hh), &mut gh, b, hd, g3);
        let (bi, bhh, hv) = (self.value(w.b_ih), self.value(w.b_hh), self.value(h));
        let mut r = vec![T::zero(); b * hd];
        let mut z = vec![T::zero(); b * hd];
        let mut n = vec![T::zero(); b * hd];
        let mut gh_n = vec![T::zero(); b * hd];
        let mut out = vec![T::zero(); b * hd];
        for row in 0..b {
            let gir = &gi[row * g3..(row + 1) * g3];
            let ghr = &gh[row * g3..(row + 1) * g3];
            for j in 0..hd {
                let k = row * hd + j;
                r[k] = sigmoid(gir[j] + bi[j] + ghr[j] + bhh[j]);
                z[k] = sigmoid(gir[hd + j] + bi[hd + j] + ghr[hd + j] + bhh[hd + j]);
                gh_n[k] = ghr[2 * hd + j] + bhh[2 * hd + j];
                n[k] = (gir[2 * hd + j] + bi[2 * hd + j] + r[k] * gh_n[k]).tanh();
                out[k] = (T::one() - z[k]) * n[k] + z[k] * hv[k];
            }
        }
        let cache = GruCache { r, z, n, gh_n };
        Ok(self.push(
            b,
            hd,
            out,
            Op::Gru { x, h, w, cache },
            &[x, h, w.w_ih, w.w_hh, w.b_ih, w.b_hh],
        ))
    }

    /// Number of nodes processed by the last backward pass.
    pub fn backward_visits(&self) -> usize {
        self.visits
    }

    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads.as_ref()?.get(v.0)?.as_deref()
    }

    /// Populates gradients of `loss` with respect to every differentiable node.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.grads.is_some() {
            return Err(TensorError::BackwardTwice);
        }
        let [r, c] = self.shape(loss);
        if r * c != 1 {
            return Err(TensorError::NotScalar(vec![r, c]));
        }
        if !self.nodes[loss.0].requires_grad {
            return Err(TensorError::NoGraph);
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut visits = 0;
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            visits += 1;
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        self.visits = visits;
        self.grads = Some(grads);
        Ok(())
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let nodes = &self.nodes;
        macro_rules! with_grad {
            ($v:expr, |$d:ident| $body:expr) => {
                if let Some($d) = grad_slot(nodes, grads, $v) {
                    $body
                }
            };
        }
        let val = |v: Var| nodes[v.0].value.as_slice();
        let shp = |v: Var| [nodes[v.0].rows, nodes[v.0].cols];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ([m, k], [_, n]) = (shp(*a), shp(*b));
                with_grad!(*a, |d| matmul_nt(g, val(*b), d, m, n, k));
                with_grad!(*b, |d| matmul_tn(val(*a), g, d, m, k, n));
            }
            Op::Add(a, b) => {
                with_grad!(*a, |d| kernels::axpy(T::one(), g, d));
                with_grad!(*b, |d| kernels::axpy(T::one(), g, d));
            }
            Op::Sub(a, b) => {
                with_grad!(*a, |d| kernels::axpy(T::one(), g, d));
                with_grad!(*b, |d| kernels::axpy(-T::one(), g, d));
            }
            Op::Mul(a, b) => {
                with_grad!(*a, |d| {
                    for ((di, &gi), &bi) in d.iter_mut().zip(g).zip(val(*b)) {
                        *di += gi * bi;
                    }
                });
                with_grad!(*b, |d| {
                    for ((di, &gi), &ai) in d.iter_mut().zip(g).zip(val(*a)) {
                        *di += gi * ai;
                    }
                });
            }
            Op::AddBias(x, bias) => {
                let n = shp(*bias)[1];
                with_grad!(*x, |d| kernels::axpy(T::one(), g, d));
                with_grad!(*bias, |d| {
                    for row in g.chunks(n.max(1)) {
                        kernels::axpy(T::one(), row, d);
                    }
                });
            }
            Op::Scale(x, c) => {
                with_grad!(*x, |d| kernels::axpy(*c, g, d));
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut off = 0;
                    for &p in parts {
                        let len = val(p).len();
                        with_grad!(p, |d| kernels::axpy(T::one(), &g[off..off + len], d));
                        off += len;
                    }
                } else {
                    let total = node.cols;
                    let mut col = 0;
                    for &p in parts {
                        let [r, c] = shp(p);
                        with_grad!(p, |d| {
                            for i in 0..r {
                                kernels::axpy(
                                    T::one(),
                                    &g[i * total + col..i * total + col + c],
                                    &mut d[i * c..(i + 1) * c],
                                );
                            }
                        });
                        col += c;
                    }
                }
            }
            Op::Slice { input, axis, start } => {
                let [r, c] = shp(*input);
                with_grad!(*input, |d| {
                    if *axis == 0 {
                        kernels::axpy(T::one(), g, &mut d[start * c..start * c + g.len()]);
                    } else {
                        let len = node.cols;
                        for i in 0..r {
                            kernels::axpy(
                                T::one(),
                                &g[i * len..(i + 1) * len],
                                &mut d[i * c + start..i * c + start + len],
                            );
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                with_grad!(*x, |d| kernels::axpy(T::one(), g, d));
            }
            Op::Transpose(x) => {
                let [r, c] = shp(*x);
                with_grad!(*x, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Tanh(x) => {
                let y = node.value.as_slice();
                with_grad!(*x, |d| {
                    for ((di, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                        *di += gi * (T::one() - yi * yi);
                    }
                });
            }
            Op::Sigmoid(x) => {
                let y = node.value.as_slice();
                with_grad!(*x, |d| {
                    for ((di, &gi), &yi) in d.iter_mut().zip(g).zip(y) {
                        *di += gi * yi * (T::one() - yi);
                    }
                });
            }
            Op::Relu(x) => {
                let xv = val(*x);
                with_grad!(*x, |d| {
                    for ((di, &gi), &xi) in d.iter_mut().zip(g).zip(xv) {
                        if xi > T::zero() {
                            *di += gi;
                        }
                    }
                });
            }
            Op::Softmax(x) => {
                let y = node.value.as_slice();
                let c = node.cols.max(1);
                with_grad!(*x, |d| {
                    for ((drow, grow), yrow) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                        let s = dot(grow, yrow);
                        for ((di, &gi), &yi) in drow.iter_mut().zip(grow).zip(yrow) {
                            *di += yi * (gi - s);
                        }
                    }
                });
            }
            Op::Dropout(x, mask) => {
                with_grad!(*x, |d| {
                    for ((di, &gi), &mi) in d.iter_mut().zip(g).zip(mask) {
                        *di += gi * mi;
                    }
                });
            }
            Op::L1Loss(p, t) => {
                let n = T::of(val(*p).len() as f64);
                let scale = g[0] / n;
                let sign = |a: T, b: T| {
                    if a > b {
                        T::one()
                    } else if a < b {
                        -T::one()
                    } else {
                        T::zero()
                    }
                };
                with_grad!(*p, |d| {
                    for ((di, &pi), &ti) in d.iter_mut().zip(val(*p)).zip(val(*t)) {
                        *di += scale * sign(pi, ti);
                    }
                });
                with_grad!(*t, |d| {
                    for ((di, &pi), &ti) in d.iter_mut().zip(val(*p)).zip(val(*t)) {
                        *di -= scale * sign(pi, ti);
                    }
                });
            }
            Op::BceWithLogits(x, t) => {
                let n = T::of(val(*x).len() as f64);
                let scale = g[0] / n;
                with_grad!(*x, |d| {
                    for ((di, &xi), &ti) in d.iter_mut().zip(val(*x)).zip(val(*t)) {
                        *di += scale * (sigmoid(xi) - ti);
                    }
                });
            }
            Op::Mean(x) => {
                let n = T::of(val(*x).len() as f64);
                with_grad!(*x, |d| d.iter_mut().for_each(|di| *di += g[0] / n));
            }
            Op::Sum(x) => {
                with_grad!(*x, |d| d.iter_mut().for_each(|di| *di += g[0]));
            }
            Op::GatherRows(table, ids) => {
                let dcols = shp(*table)[1];
                with_grad!(*table, |d| {
                    for (row, &id) in ids.iter().enumerate() {
                        kernels::axpy(
                            T::one(),
                            &g[row * dcols..(row + 1) * dcols],
                            &mut d[id * dcols..(id + 1) * dcols],
                        );
                    }
                });
            }
            Op::Gru { x, h, w, cache } => {
                let ([b, i], hd) = (shp(*x), node.cols);
                let g3 = 3 * hd;
                let hv = val(*h);
                let mut dgi = vec![T::zero(); b * g3];
                let mut dgh = vec![T::zero(); b * g3];
                let mut dh_direct = vec![T::zero(); b * hd];
                for row in 0..b {
                    for j in 0..hd {
                        let k = row * hd + j;
                        let (r, z, n) = (cache.r[k], cache.z[k], cache.n[k]);
                        let go = g[k];
                        let dz = go * (hv[k] - n);
                        let dn = go * (T::one() - z);
                        dh_direct[k] = go * z;
                        let dn_pre = dn * (T::one() - n * n);
                        let dr = dn_pre * cache.gh_n[k];
                        let dr_pre = dr * r * (T::one() - r);
                        let dz_pre = dz * z * (T::one() - z);
                        let base = row * g3;
                        dgi[base + j] = dr_pre;
                        dgi[base + hd + j] = dz_pre;
                        dgi[base + 2 * hd + j] = dn_pre;
                        dgh[base + j] = dr_pre;
                        dgh[base + hd + j] = dz_pre;
                        dgh[base + 2 * hd + j] = dn_pre * r;
                    }
                }
                with_grad!(*x, |d| matmul_nt(&dgi, val(w.w_ih), d, b, g3, i));
                with_grad!(*h, |d| {
                    kernels::axpy(T::one(), &dh_direct, d);
                    matmul_nt(&dgh, val(w.w_hh), d, b, g3, hd);
                });
                with_grad!(w.w_ih, |d| matmul_tn(val(*x), &dgi, d, b, i, g3));
                with_grad!(w.w_hh, |d| matmul_tn(hv, &dgh, d, b, hd, g3));
                with_grad!(w.b_ih, |d| {
                    for row in dgi.chunks(g3) {
                        kernels::axpy(T::one(), row, d);
                    }
                });
                with_grad!(w.b_hh, |d| {
                    for row in dgh.chunks(g3) {
                        kernels::axpy(T::one(), row, d);
                    }
                });
            }
        }
    }
}

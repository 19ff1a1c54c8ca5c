//! Reverse-mode differentiation over a per-example tape.
//!
//! A forward pass records buffer-level operations (matrix products, row
//! gathers, activations, ...) as nodes; `backward` walks the tape in reverse
//! and accumulates parameter gradients into the [`ParamStore`]. Each example
//! gets a fresh tape, so gradient accumulation across a batch falls out of
//! the store's `+=` semantics.
//!
//! Shape violations inside the tape are programming errors and panic; the
//! public model operations validate shapes up front and return `Result`.

use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param { id: ParamId },
    GatherRows { id: ParamId, rows: Vec<usize> },
    GatherScalar { id: ParamId, index: usize },
    Add { a: NodeId, b: NodeId },
    Affine { a: NodeId, mul: f64 },
    ScaleBy { a: NodeId, s: NodeId },
    MatMul { a: NodeId, b: NodeId },
    MatMulNT { a: NodeId, b: NodeId },
    MatVec { w: NodeId, x: NodeId },
    AddRowBroadcast { m: NodeId, v: NodeId },
    Row { a: NodeId, i: usize },
    StackRows { parts: Vec<NodeId> },
    Concat { parts: Vec<NodeId> },
    ConcatCols { parts: Vec<NodeId> },
    MeanVecs { parts: Vec<NodeId> },
    MaxVecs { parts: Vec<NodeId> },
    MeanRows { a: NodeId },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    Relu { a: NodeId },
    Gelu { a: NodeId },
    LayerNorm { a: NodeId, gamma: NodeId, beta: NodeId },
    SoftmaxRows { a: NodeId },
    CrossEntropy { logits: NodeId, label: usize },
}

struct Node {
    value: Tensor,
    grad: Vec<f64>,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn scalar_value(&self, id: NodeId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].value.len(), 1);
        self.nodes[id.0].value.data[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        debug_assert!(value.is_finite(), "non-finite value out of {op:?}");
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node { value, grad, op });
        NodeId(self.nodes.len() - 1)
    }

    // ---- leaves ---------------------------------------------------------

    pub fn input(&mut self, t: Tensor) -> NodeId {
        self.push(t, Op::Input)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> NodeId {
        let value = store.get(id).value.clone();
        self.push(value, Op::Param { id })
    }

    /// Copies the selected rows of a matrix parameter onto the tape.
    /// Backward scatter-adds only into those rows.
    pub fn gather_rows(&mut self, store: &ParamStore, id: ParamId, rows: &[usize]) -> NodeId {
        let p = &store.get(id).value;
        let cols = p.cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            data.extend_from_slice(p.row(r));
        }
        self.push(
            Tensor::matrix(rows.len(), cols, data),
            Op::GatherRows {
                id,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn gather_scalar(&mut self, store: &ParamStore, id: ParamId, index: usize) -> NodeId {
        let v = store.get(id).value.data[index];
        self.push(Tensor::scalar(v), Op::GatherScalar { id, index })
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!(va.shape, vb.shape, "add shapes differ");
        let data = va.data.iter().zip(&vb.data).map(|(x, y)| x + y).collect();
        let shape = va.shape.clone();
        self.push(Tensor::new(shape, data), Op::Add { a, b })
    }

    pub fn affine(&mut self, a: NodeId, mul: f64, add: f64) -> NodeId {
        let va = &self.nodes[a.0].value;
        let data = va.data.iter().map(|x| mul * x + add).collect();
        let shape = va.shape.clone();
        self.push(Tensor::new(shape, data), Op::Affine { a, mul })
    }

    pub fn scale_const(&mut self, a: NodeId, c: f64) -> NodeId {
        self.affine(a, c, 0.0)
    }

    /// Multiplies a tensor by a scalar node (e.g. an edge weight or a gate).
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> NodeId {
        assert_eq!(self.nodes[s.0].value.len(), 1, "scale_by needs a scalar");
        let sv = self.nodes[s.0].value.data[0];
        let va = &self.nodes[a.0].value;
        let data = va.data.iter().map(|x| sv * x).collect();
        let shape = va.shape.clone();
        self.push(Tensor::new(shape, data), Op::ScaleBy { a, s })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| 1.0 / (1.0 + (-x).exp()), |n| Op::Sigmoid { a: n })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        self.unary(a, f64::tanh, |n| Op::Tanh { a: n })
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, |x| x.max(0.0), |n| Op::Relu { a: n })
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        self.unary(a, gelu, |n| Op::Gelu { a: n })
    }

    fn unary(&mut self, a: NodeId, f: impl Fn(f64) -> f64, op: impl Fn(NodeId) -> Op) -> NodeId {
        let va = &self.nodes[a.0].value;
        let data = va.data.iter().map(|&x| f(x)).collect();
        let shape = va.shape.clone();
        self.push(Tensor::new(shape, data), op(a))
    }

    // ---- linear algebra -------------------------------------------------

    /// `[m,k] x [k,n] -> [m,n]`
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (va.rows(), va.cols());
        let (kb, n) = (vb.rows(), vb.cols());
        assert_eq!(k, kb, "matmul inner dims differ");
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = va.data[i * k + p];
                for j in 0..n {
                    data[i * n + j] += aip * vb.data[p * n + j];
                }
            }
        }
        self.push(Tensor::matrix(m, n, data), Op::MatMul { a, b })
    }

    /// `a x b^T` for `a: [m,k]`, `b: [n,k]` — applies row-major weight
    /// matrices to row-major activations without an explicit transpose.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = (va.rows(), va.cols());
        let (n, kb) = (vb.rows(), vb.cols());
        assert_eq!(k, kb, "matmul_nt inner dims differ");
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            let arow = &va.data[i * k..(i + 1) * k];
            for j in 0..n {
                let brow = &vb.data[j * k..(j + 1) * k];
                data[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            }
        }
        self.push(Tensor::matrix(m, n, data), Op::MatMulNT { a, b })
    }

    /// `w: [m,n]` times `x: [n]` -> `[m]`
    pub fn matvec(&mut self, w: NodeId, x: NodeId) -> NodeId {
        let (vw, vx) = (&self.nodes[w.0].value, &self.nodes[x.0].value);
        let (m, n) = (vw.rows(), vw.cols());
        assert_eq!(vx.len(), n, "matvec dims differ");
        let data = (0..m)
            .map(|i| {
                vw.data[i * n..(i + 1) * n]
                    .iter()
                    .zip(&vx.data)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        self.push(Tensor::vector(data), Op::MatVec { w, x })
    }

    /// Adds a vector to every row of a matrix.
    pub fn add_row_broadcast(&mut self, m: NodeId, v: NodeId) -> NodeId {
        let (vm, vv) = (&self.nodes[m.0].value, &self.nodes[v.0].value);
        let (r, c) = (vm.rows(), vm.cols());
        assert_eq!(vv.len(), c, "broadcast width differs");
        let mut data = vm.data.clone();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += vv.data[j];
            }
        }
        self.push(Tensor::matrix(r, c, data), Op::AddRowBroadcast { m, v })
    }

    // ---- structure ------------------------------------------------------

    pub fn row(&mut self, a: NodeId, i: usize) -> NodeId {
        let va = &self.nodes[a.0].value;
        let data = va.row(i).to_vec();
        self.push(Tensor::vector(data), Op::Row { a, i })
    }

    pub fn stack_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let c = self.nodes[parts[0].0].value.len();
        let mut data = Vec::with_capacity(parts.len() * c);
        for &p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.len(), c, "stack_rows widths differ");
            data.extend_from_slice(&v.data);
        }
        self.push(
            Tensor::matrix(parts.len(), c, data),
            Op::StackRows {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(&self.nodes[p.0].value.data);
        }
        self.push(
            Tensor::vector(data),
            Op::Concat {
                parts: parts.to_vec(),
            },
        )
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let r = self.nodes[parts[0].0].value.rows();
        let total_c: usize = parts.iter().map(|&p| self.nodes[p.0].value.cols()).sum();
        let mut data = vec![0.0; r * total_c];
        let mut offset = 0;
        for &p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.rows(), r, "concat_cols row counts differ");
            let c = v.cols();
            for i in 0..r {
                data[i * total_c + offset..i * total_c + offset + c]
                    .copy_from_slice(&v.data[i * c..(i + 1) * c]);
            }
            offset += c;
        }
        self.push(
            Tensor::matrix(r, total_c, data),
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn mean_vecs(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let c = self.nodes[parts[0].0].value.len();
        let mut data = vec![0.0; c];
        for &p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.len(), c, "mean_vecs widths differ");
            for (d, x) in data.iter_mut().zip(&v.data) {
                *d += x;
            }
        }
        let n = parts.len() as f64;
        data.iter_mut().for_each(|d| *d /= n);
        self.push(
            Tensor::vector(data),
            Op::MeanVecs {
                parts: parts.to_vec(),
            },
        )
    }

    /// Elementwise max across vectors; gradient routes to the first argmax.
    pub fn max_vecs(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let c = self.nodes[parts[0].0].value.len();
        let mut data = vec![f64::NEG_INFINITY; c];
        for &p in parts {
            let v = &self.nodes[p.0].value;
            assert_eq!(v.len(), c, "max_vecs widths differ");
            for (d, x) in data.iter_mut().zip(&v.data) {
                if *x > *d {
                    *d = *x;
                }
            }
        }
        self.push(
            Tensor::vector(data),
            Op::MaxVecs {
                parts: parts.to_vec(),
            },
        )
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (r, c) = (va.rows(), va.cols());
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (d, v) in data.iter_mut().zip(&va.data[i * c..(i + 1) * c]) {
                *d += v;
            }
        }
        data.iter_mut().for_each(|d| *d /= r as f64);
        self.push(Tensor::vector(data), Op::MeanRows { a })
    }

    // ---- normalization & loss -------------------------------------------

    /// Row-wise layer normalization with learned scale and shift.
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (r, c) = (va.rows(), va.cols());
        assert_eq!(self.nodes[gamma.0].value.len(), c, "layer_norm gamma width");
        assert_eq!(self.nodes[beta.0].value.len(), c, "layer_norm beta width");
        let g = &self.nodes[gamma.0].value.data;
        let b = &self.nodes[beta.0].value.data;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &va.data[i * c..(i + 1) * c];
            let (mean, inv_std) = row_moments(row);
            for j in 0..c {
                data[i * c + j] = g[j] * (row[j] - mean) * inv_std + b[j];
            }
        }
        let shape = va.shape.clone();
        self.push(Tensor::new(shape, data), Op::LayerNorm { a, gamma, beta })
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a.0].value;
        let (r, c) = (va.rows(), va.cols());
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            let row = &va.data[i * c..(i + 1) * c];
            softmax_into(row, &mut data[i * c..(i + 1) * c]);
        }
        let shape = va.shape.clone();
        self.push(Tensor::new(shape, data), Op::SoftmaxRows { a })
    }

    /// `-log softmax(logits)[label]`, computed through log-sum-exp.
    pub fn cross_entropy(&mut self, logits: NodeId, label: usize) -> NodeId {
        let v = &self.nodes[logits.0].value;
        assert!(label < v.len(), "label out of range");
        let m = v.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + v.data.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        let loss = lse - v.data[label];
        // log-sum-exp keeps this >= 0 up to rounding; clamp the dust.
        self.push(
            Tensor::scalar(loss.max(0.0)),
            Op::CrossEntropy { logits, label },
        )
    }

    // ---- backward -------------------------------------------------------

    /// Seeds `d(output) = 1` and accumulates parameter gradients into the
    /// store. The tape is consumed conceptually; node grads are left in
    /// place for inspection.
    pub fn backward(&mut self, output: NodeId, store: &mut ParamStore) {
        assert_eq!(self.nodes[output.0].value.len(), 1, "backward needs a scalar");
        self.nodes[output.0].grad[0] = 1.0;

        for idx in (0..=output.0).rev() {
            // Split borrows: take the grad out, write into earlier nodes.
            let grad = std::mem::take(&mut self.nodes[idx].grad);
            if grad.iter().all(|&g| g == 0.0) {
                self.nodes[idx].grad = grad;
                continue;
            }
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param { id } => {
                    let id = *id;
                    store.accumulate_grad(id, &grad);
                }
                Op::GatherRows { id, rows } => {
                    let (id, rows) = (*id, rows.clone());
                    store.accumulate_grad_rows(id, &rows, &grad);
                }
                Op::GatherScalar { id, index } => {
                    let (id, index) = (*id, *index);
                    store.accumulate_grad_at(id, index, grad[0]);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.add_grad(a, &grad);
                    self.add_grad(b, &grad);
                }
                Op::Affine { a, mul } => {
                    let (a, mul) = (*a, *mul);
                    let da: Vec<f64> = grad.iter().map(|g| mul * g).collect();
                    self.add_grad(a, &da);
                }
                Op::ScaleBy { a, s } => {
                    let (a, s) = (*a, *s);
                    let sv = self.nodes[s.0].value.data[0];
                    let da: Vec<f64> = grad.iter().map(|g| sv * g).collect();
                    let ds: f64 = grad
                        .iter()
                        .zip(&self.nodes[a.0].value.data)
                        .map(|(g, x)| g * x)
                        .sum();
                    self.add_grad(a, &da);
                    self.add_grad(s, &[ds]);
                }
                Op::MatMul { a, b } => {
                    let (a, b) = (*a, *b);
                    let va = self.nodes[a.0].value.clone();
                    let vb = self.nodes[b.0].value.clone();
                    let (m, k, n) = (va.rows(), va.cols(), vb.cols());
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        for j in 0..n {
                            let g = grad[i * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += g * vb.data[p * n + j];
                                db[p * n + j] += g * va.data[i * k + p];
                            }
                        }
                    }
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::MatMulNT { a, b } => {
                    let (a, b) = (*a, *b);
                    let va = self.nodes[a.0].value.clone();
                    let vb = self.nodes[b.0].value.clone();
                    let (m, k, n) = (va.rows(), va.cols(), vb.rows());
                    let mut da = vec![0.0; m * k];
                    let mut db = vec![0.0; n * k];
                    for i in 0..m {
                        for j in 0..n {
                            let g = grad[i * n + j];
                            if g == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                da[i * k + p] += g * vb.data[j * k + p];
                                db[j * k + p] += g * va.data[i * k + p];
                            }
                        }
                    }
                    self.add_grad(a, &da);
                    self.add_grad(b, &db);
                }
                Op::MatVec { w, x } => {
                    let (w, x) = (*w, *x);
                    let vw = self.nodes[w.0].value.clone();
                    let vx = self.nodes[x.0].value.clone();
                    let (m, n) = (vw.rows(), vw.cols());
                    let mut dw = vec![0.0; m * n];
                    let mut dx = vec![0.0; n];
                    for i in 0..m {
                        let g = grad[i];
                        for j in 0..n {
                            dw[i * n + j] += g * vx.data[j];
                            dx[j] += g * vw.data[i * n + j];
                        }
                    }
                    self.add_grad(w, &dw);
                    self.add_grad(x, &dx);
                }
                Op::AddRowBroadcast { m, v } => {
                    let (m, v) = (*m, *v);
                    let c = self.nodes[v.0].value.len();
                    let r = grad.len() / c;
                    let mut dv = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            dv[j] += grad[i * c + j];
                        }
                    }
                    self.add_grad(m, &grad);
                    self.add_grad(v, &dv);
                }
                Op::Row { a, i } => {
                    let (a, i) = (*a, *i);
                    let c = grad.len();
                    let mut da = vec![0.0; self.nodes[a.0].value.len()];
                    da[i * c..(i + 1) * c].copy_from_slice(&grad);
                    self.add_grad(a, &da);
                }
                Op::StackRows { parts } => {
                    let parts = parts.clone();
                    let c = grad.len() / parts.len();
                    for (k, p) in parts.iter().enumerate() {
                        self.add_grad(*p, &grad[k * c..(k + 1) * c]);
                    }
                }
                Op::Concat { parts } => {
                    let parts = parts.clone();
                    let mut offset = 0;
                    for p in parts {
                        let len = self.nodes[p.0].value.len();
                        let slice = grad[offset..offset + len].to_vec();
                        self.add_grad(p, &slice);
                        offset += len;
                    }
                }
                Op::ConcatCols { parts } => {
                    let parts = parts.clone();
                    let r = self.nodes[parts[0].0].value.rows();
                    let total_c = grad.len() / r;
                    let mut offset = 0;
                    for p in parts {
                        let c = self.nodes[p.0].value.cols();
                        let mut dp = vec![0.0; r * c];
                        for i in 0..r {
                            dp[i * c..(i + 1) * c].copy_from_slice(
                                &grad[i * total_c + offset..i * total_c + offset + c],
                            );
                        }
                        self.add_grad(p, &dp);
                        offset += c;
                    }
                }
                Op::MeanVecs { parts } => {
                    let parts = parts.clone();
                    let inv = 1.0 / parts.len() as f64;
                    let dp: Vec<f64> = grad.iter().map(|g| g * inv).collect();
                    for p in parts {
                        self.add_grad(p, &dp);
                    }
                }
                Op::MaxVecs { parts } => {
                    let parts = parts.clone();
                    let out = self.nodes[idx].value.data.clone();
                    let c = out.len();
                    for j in 0..c {
                        if grad[j] == 0.0 {
                            continue;
                        }
                        for &p in &parts {
                            if self.nodes[p.0].value.data[j] == out[j] {
                                let mut dp = vec![0.0; c];
                                dp[j] = grad[j];
                                self.add_grad(p, &dp);
                                break;
                            }
                        }
                    }
                }
                Op::MeanRows { a } => {
                    let a = *a;
                    let va_len = self.nodes[a.0].value.len();
                    let c = grad.len();
                    let r = va_len / c;
                    let inv = 1.0 / r as f64;
                    let mut da = vec![0.0; va_len];
                    for i in 0..r {
                        for j in 0..c {
                            da[i * c + j] = grad[j] * inv;
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::Sigmoid { a } => {
                    let a = *a;
                    let y = self.nodes[idx].value.data.clone();
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&y)
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    self.add_grad(a, &da);
                }
                Op::Tanh { a } => {
                    let a = *a;
                    let y = self.nodes[idx].value.data.clone();
                    let da: Vec<f64> = grad.iter().zip(&y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    self.add_grad(a, &da);
                }
                Op::Relu { a } => {
                    let a = *a;
                    let x = self.nodes[a.0].value.data.clone();
                    let da: Vec<f64> = grad
                        .iter()
                        .zip(&x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    self.add_grad(a, &da);
                }
                Op::Gelu { a } => {
                    let a = *a;
                    let x = self.nodes[a.0].value.data.clone();
                    let da: Vec<f64> = grad.iter().zip(&x).map(|(g, x)| g * gelu_dx(*x)).collect();
                    self.add_grad(a, &da);
                }
                Op::LayerNorm { a, gamma, beta } => {
                    let (a, gamma, beta) = (*a, *gamma, *beta);
                    let va = self.nodes[a.0].value.clone();
                    let g = self.nodes[gamma.0].value.data.clone();
                    let (r, c) = (va.rows(), va.cols());
                    let mut da = vec![0.0; r * c];
                    let mut dgamma = vec![0.0; c];
                    let mut dbeta = vec![0.0; c];
                    for i in 0..r {
                        let row = &va.data[i * c..(i + 1) * c];
                        let (mean, inv_std) = row_moments(row);
                        let xhat: Vec<f64> = row.iter().map(|x| (x - mean) * inv_std).collect();
                        let dy = &grad[i * c..(i + 1) * c];
                        let gdy: Vec<f64> = dy.iter().zip(&g).map(|(d, g)| d * g).collect();
                        let mean_gdy = gdy.iter().sum::<f64>() / c as f64;
                        let mean_gdy_xhat =
                            gdy.iter().zip(&xhat).map(|(d, x)| d * x).sum::<f64>() / c as f64;
                        for j in 0..c {
                            da[i * c + j] =
                                inv_std * (gdy[j] - mean_gdy - xhat[j] * mean_gdy_xhat);
                            dgamma[j] += dy[j] * xhat[j];
                            dbeta[j] += dy[j];
                        }
                    }
                    self.add_grad(a, &da);
                    self.add_grad(gamma, &dgamma);
                    self.add_grad(beta, &dbeta);
                }
                Op::SoftmaxRows { a } => {
                    let a = *a;
                    let y = self.nodes[idx].value.clone();
                    let (r, c) = (y.rows(), y.cols());
                    let mut da = vec![0.0; r * c];
                    for i in 0..r {
                        let yrow = &y.data[i * c..(i + 1) * c];
                        let dy = &grad[i * c..(i + 1) * c];
                        let dot: f64 = yrow.iter().zip(dy).map(|(y, d)| y * d).sum();
                        for j in 0..c {
                            da[i * c + j] = yrow[j] * (dy[j] - dot);
                        }
                    }
                    self.add_grad(a, &da);
                }
                Op::CrossEntropy { logits, label } => {
                    let (logits, label) = (*logits, *label);
                    let v = &self.nodes[logits.0].value.data;
                    let mut probs = vec![0.0; v.len()];
                    softmax_into(v, &mut probs);
                    let g = grad[0];
                    let da: Vec<f64> = probs
                        .iter()
                        .enumerate()
                        .map(|(i, p)| g * (p - if i == label { 1.0 } else { 0.0 }))
                        .collect();
                    self.add_grad(logits, &da);
                }
            }
            self.nodes[idx].grad = grad;
        }
    }

    fn add_grad(&mut self, id: NodeId, g: &[f64]) {
        let dst = &mut self.nodes[id.0].grad;
        debug_assert_eq!(dst.len(), g.len());
        for (d, s) in dst.iter_mut().zip(g) {
            *d += s;
        }
    }

    /// Gradient buffer of a node after `backward` (testing hook).
    pub fn grad(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].grad
    }
}

fn row_moments(row: &[f64]) -> (f64, f64) {
    let c = row.len() as f64;
    let mean = row.iter().sum::<f64>() / c;
    let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c;
    (mean, 1.0 / (var + LAYER_NORM_EPS).sqrt())
}

pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, l) in out.iter_mut().zip(logits) {
        *o = (l - m).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Softmax as a plain function (used at evaluation time; no gradients).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    softmax_into(logits, &mut out);
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_dx(x: f64) -> f64 {
    let u = GELU_C * (x + GELU_A * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

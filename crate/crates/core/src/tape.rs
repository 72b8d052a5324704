//! Reverse-mode autodiff over [`Tensor`] values.
//!
//! A [`Tape`] records a DAG of operations as it evaluates them; calling
//! [`Tape::backward`] on a scalar output walks the recorded nodes in reverse
//! and accumulates gradients for every leaf that was registered with
//! [`Tape::leaf`]. Nodes created with [`Tape::constant`] (data, noise, masks,
//! positional encodings) carry no gradient and prune the backward walk.
//!
//! The op set is exactly what the model needs — nothing speculative. Every
//! derivative here is covered by a central-finite-difference check in the
//! test module below.

use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    /// Gradient-tracked input (parameters).
    Leaf,
    /// Input with no gradient (data, noise, masks).
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `T x D` plus a `1 x D` row broadcast over rows.
    AddRow(Var, Var),
    /// `T x D` times a `1 x D` row broadcast over rows.
    MulRow(Var, Var),
    /// `T x D` times a `T x 1` column broadcast over columns.
    MulCol(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Abs(Var),
    SoftmaxRows(Var),
    /// Row-wise standardization to zero mean / unit variance (no gain/bias).
    LayerNormRows(Var, f64),
    /// `T x D -> T x 1` sum over each row.
    RowSum(Var),
    /// `T x D -> 1 x D` mean over rows.
    MeanRows(Var),
    /// `T x D -> 1 x 1` mean over all entries.
    MeanAll(Var),
    /// Extract row `r` as `1 x D`.
    Row(Var, usize),
    /// Stack `1 x D` rows into `N x D`.
    StackRows(Vec<Var>),
    /// Columns `start..end` as a new tensor.
    SliceCols(Var, usize, usize),
    ConcatCols(Vec<Var>),
    Transpose(Var),
}

struct Node {
    op: Op,
    value: Tensor,
    needs_grad: bool,
}

/// Records operations eagerly and replays them backwards for gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    fn push(&mut self, op: Op, value: Tensor, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Registers a gradient-tracked input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Registers a gradient-free input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Constant, value, false)
    }

    /// Value computed for `v`.
    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Number of recorded nodes (diagnostics only).
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::MatMul(a, b), value, needs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Add(a, b), value, needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Sub(a, b), value, needs)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).mul(self.value(b));
        let needs = self.needs(a) || self.needs(b);
        self.push(Op::Mul(a, b), value, needs)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (t, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows(), 1, "add_row: broadcast operand must be 1 x D");
        assert_eq!(t.cols(), r.cols(), "add_row: width mismatch");
        let mut value = t.clone();
        for i in 0..value.rows() {
            for (o, &b) in value.row_slice_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        let needs = self.needs(a) || self.needs(row);
        self.push(Op::AddRow(a, row), value, needs)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (t, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows(), 1, "mul_row: broadcast operand must be 1 x D");
        assert_eq!(t.cols(), r.cols(), "mul_row: width mismatch");
        let mut value = t.clone();
        for i in 0..value.rows() {
            for (o, &b) in value.row_slice_mut(i).iter_mut().zip(r.data()) {
                *o *= b;
            }
        }
        let needs = self.needs(a) || self.needs(row);
        self.push(Op::MulRow(a, row), value, needs)
    }

    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (t, c) = (self.value(a), self.value(col));
        assert_eq!(c.cols(), 1, "mul_col: broadcast operand must be T x 1");
        assert_eq!(t.rows(), c.rows(), "mul_col: height mismatch");
        let mut value = t.clone();
        for i in 0..value.rows() {
            let w = c.get(i, 0);
            for o in value.row_slice_mut(i) {
                *o *= w;
            }
        }
        let needs = self.needs(a) || self.needs(col);
        self.push(Op::MulCol(a, col), value, needs)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).scale(c);
        let needs = self.needs(a);
        self.push(Op::Scale(a, c), value, needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(fmath::sigmoid);
        let needs = self.needs(a);
        self.push(Op::Sigmoid(a), value, needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(fmath::tanh);
        let needs = self.needs(a);
        self.push(Op::Tanh(a), value, needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let needs = self.needs(a);
        self.push(Op::Relu(a), value, needs)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(fmath::abs);
        let needs = self.needs(a);
        self.push(Op::Abs(a), value, needs)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut value = t.clone();
        for i in 0..value.rows() {
            let row = value.row_slice_mut(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut sum = 0.0;
            for x in row.iter_mut() {
                *x = fmath::exp(*x - max);
                sum += *x;
            }
            let inv = 1.0 / sum;
            for x in row.iter_mut() {
                *x *= inv;
            }
        }
        let needs = self.needs(a);
        self.push(Op::SoftmaxRows(a), value, needs)
    }

    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let t = self.value(a);
        let mut value = t.clone();
        for i in 0..value.rows() {
            let row = value.row_slice_mut(i);
            let n = row.len() as f64;
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv_sigma = 1.0 / fmath::sqrt(var + eps);
            for x in row.iter_mut() {
                *x = (*x - mean) * inv_sigma;
            }
        }
        let needs = self.needs(a);
        self.push(Op::LayerNormRows(a, eps), value, needs)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut value = Tensor::zeros(t.rows(), 1);
        for i in 0..t.rows() {
            value.set(i, 0, t.row_slice(i).iter().sum());
        }
        let needs = self.needs(a);
        self.push(Op::RowSum(a), value, needs)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let value = self.value(a).mean_rows();
        let needs = self.needs(a);
        self.push(Op::MeanRows(a), value, needs)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).mean());
        let needs = self.needs(a);
        self.push(Op::MeanAll(a), value, needs)
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let t = self.value(a);
        assert!(r < t.rows(), "row {r} out of bounds for {:?}", t.shape());
        let value = Tensor::row_vector(t.row_slice(r));
        let needs = self.needs(a);
        self.push(Op::Row(a, r), value, needs)
    }

    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows: no rows");
        let cols = self.value(rows[0]).cols();
        let mut value = Tensor::zeros(rows.len(), cols);
        let mut needs = false;
        for (i, &v) in rows.iter().enumerate() {
            let t = self.value(v);
            assert_eq!(t.shape(), (1, cols), "stack_rows: row {i} has {:?}", t.shape());
            value.row_slice_mut(i).copy_from_slice(t.row_slice(0));
            needs |= self.needs(v);
        }
        self.push(Op::StackRows(rows.to_vec()), value, needs)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a);
        assert!(start < end && end <= t.cols(), "slice_cols: bad range");
        let mut value = Tensor::zeros(t.rows(), end - start);
        for i in 0..t.rows() {
            value
                .row_slice_mut(i)
                .copy_from_slice(&t.row_slice(i)[start..end]);
        }
        let needs = self.needs(a);
        self.push(Op::SliceCols(a, start, end), value, needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|&v| self.value(v).cols()).sum();
        let mut value = Tensor::zeros(rows, total);
        let mut needs = false;
        let mut offset = 0;
        for &v in parts {
            let t = self.value(v);
            assert_eq!(t.rows(), rows, "concat_cols: height mismatch");
            for i in 0..rows {
                value.row_slice_mut(i)[offset..offset + t.cols()]
                    .copy_from_slice(t.row_slice(i));
            }
            offset += t.cols();
            needs |= self.needs(v);
        }
        self.push(Op::ConcatCols(parts.to_vec()), value, needs)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let needs = self.needs(a);
        self.push(Op::Transpose(a), value, needs)
    }

    /// Gradients of a `1 x 1` output with respect to every tracked node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.value(root).shape(),
            (1, 1),
            "backward expects a scalar root"
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::scalar(1.0));

        for i in (0..=root.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_to = |grads: &mut [Option<Tensor>], v: Var, delta: Tensor| {
            match &mut grads[v.0] {
                Some(acc) => acc.add_scaled(&delta, 1.0),
                slot @ None => *slot = Some(delta),
            }
        };
        match &self.nodes[i].op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if self.needs(*a) {
                    add_to(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.needs(*b) {
                    add_to(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    add_to(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    add_to(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    add_to(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    add_to(grads, *b, g.scale(-1.0));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    add_to(grads, *a, g.mul(self.value(*b)));
                }
                if self.needs(*b) {
                    add_to(grads, *b, g.mul(self.value(*a)));
                }
            }
            Op::AddRow(a, row) => {
                if self.needs(*a) {
                    add_to(grads, *a, g.clone());
                }
                if self.needs(*row) {
                    add_to(grads, *row, col_sum(g));
                }
            }
            Op::MulRow(a, row) => {
                let r = self.value(*row);
                if self.needs(*a) {
                    let mut da = g.clone();
                    for i in 0..da.rows() {
                        for (o, &b) in da.row_slice_mut(i).iter_mut().zip(r.data()) {
                            *o *= b;
                        }
                    }
                    add_to(grads, *a, da);
                }
                if self.needs(*row) {
                    add_to(grads, *row, col_sum(&g.mul(self.value(*a))));
                }
            }
            Op::MulCol(a, col) => {
                let c = self.value(*col);
                if self.needs(*a) {
                    let mut da = g.clone();
                    for i in 0..da.rows() {
                        let w = c.get(i, 0);
                        for o in da.row_slice_mut(i) {
                            *o *= w;
                        }
                    }
                    add_to(grads, *a, da);
                }
                if self.needs(*col) {
                    let prod = g.mul(self.value(*a));
                    let mut dc = Tensor::zeros(prod.rows(), 1);
                    for i in 0..prod.rows() {
                        dc.set(i, 0, prod.row_slice(i).iter().sum());
                    }
                    add_to(grads, *col, dc);
                }
            }
            Op::Scale(a, c) => {
                if self.needs(*a) {
                    add_to(grads, *a, g.scale(*c));
                }
            }
            Op::Sigmoid(a) => {
                if self.needs(*a) {
                    let y = &self.nodes[i].value;
                    add_to(grads, *a, g.zip(y, |gi, yi| gi * yi * (1.0 - yi)));
                }
            }
            Op::Tanh(a) => {
                if self.needs(*a) {
                    let y = &self.nodes[i].value;
                    add_to(grads, *a, g.zip(y, |gi, yi| gi * (1.0 - yi * yi)));
                }
            }
            Op::Relu(a) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    add_to(grads, *a, g.zip(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }));
                }
            }
            Op::Abs(a) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    add_to(
                        grads,
                        *a,
                        g.zip(x, |gi, xi| {
                            if xi > 0.0 {
                                gi
                            } else if xi < 0.0 {
                                -gi
                            } else {
                                0.0
                            }
                        }),
                    );
                }
            }
            Op::SoftmaxRows(a) => {
                if self.needs(*a) {
                    let y = &self.nodes[i].value;
                    let mut da = Tensor::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let yr = y.row_slice(r);
                        let gr = g.row_slice(r);
                        let dot: f64 = yr.iter().zip(gr).map(|(&yi, &gi)| yi * gi).sum();
                        for ((o, &yi), &gi) in
                            da.row_slice_mut(r).iter_mut().zip(yr).zip(gr)
                        {
                            *o = yi * (gi - dot);
                        }
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::LayerNormRows(a, eps) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    let y = &self.nodes[i].value;
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    let n = x.cols() as f64;
                    for r in 0..x.rows() {
                        let xr = x.row_slice(r);
                        let yr = y.row_slice(r);
                        let gr = g.row_slice(r);
                        let mean = xr.iter().sum::<f64>() / n;
                        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let inv_sigma = 1.0 / fmath::sqrt(var + eps);
                        let g_mean = gr.iter().sum::<f64>() / n;
                        let gy_mean =
                            gr.iter().zip(yr).map(|(&gi, &yi)| gi * yi).sum::<f64>() / n;
                        for ((o, &gi), &yi) in
                            da.row_slice_mut(r).iter_mut().zip(gr).zip(yr)
                        {
                            *o = inv_sigma * (gi - g_mean - yi * gy_mean);
                        }
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::RowSum(a) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        let gi = g.get(r, 0);
                        for o in da.row_slice_mut(r) {
                            *o = gi;
                        }
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::MeanRows(a) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    let inv = 1.0 / x.rows() as f64;
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        for (o, &gi) in da.row_slice_mut(r).iter_mut().zip(g.data()) {
                            *o = gi * inv;
                        }
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::MeanAll(a) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    let v = g.item() / (x.rows() * x.cols()) as f64;
                    add_to(grads, *a, Tensor::filled(x.rows(), x.cols(), v));
                }
            }
            Op::Row(a, r) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    da.row_slice_mut(*r).copy_from_slice(g.row_slice(0));
                    add_to(grads, *a, da);
                }
            }
            Op::StackRows(rows) => {
                for (r, &v) in rows.iter().enumerate() {
                    if self.needs(v) {
                        add_to(grads, v, Tensor::row_vector(g.row_slice(r)));
                    }
                }
            }
            Op::SliceCols(a, start, end) => {
                if self.needs(*a) {
                    let x = self.value(*a);
                    let mut da = Tensor::zeros(x.rows(), x.cols());
                    for r in 0..x.rows() {
                        da.row_slice_mut(r)[*start..*end].copy_from_slice(g.row_slice(r));
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &v in parts {
                    let w = self.value(v).cols();
                    if self.needs(v) {
                        let rows = self.value(v).rows();
                        let mut dv = Tensor::zeros(rows, w);
                        for r in 0..rows {
                            dv.row_slice_mut(r)
                                .copy_from_slice(&g.row_slice(r)[offset..offset + w]);
                        }
                        add_to(grads, v, dv);
                    }
                    offset += w;
                }
            }
            Op::Transpose(a) => {
                if self.needs(*a) {
                    add_to(grads, *a, g.transpose());
                }
            }
        }
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, if any flowed to it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Takes ownership of the gradient for `v`.
    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Sum over rows, `T x D -> 1 x D`.
fn col_sum(t: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, t.cols());
    for r in 0..t.rows() {
        for (o, &v) in out.row_slice_mut(0).iter_mut().zip(t.row_slice(r)) {
            *o += v;
        }
    }
    out
}

//! Tape of 2-D array operations with reverse-mode differentiation.
//!
//! Every value is a matrix; scalars are `1 × 1`. Leaves created with
//! `requires_grad = false` are constants: no gradient is ever computed for
//! them, nor for any node that depends only on constants.

use ndarray::{s, Array1, Array2, Axis};

use crate::Scalar;

pub type Mat<F> = Array2<F>;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<F> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    /// `a + 1ᵀ·row`, row is `1 × n`.
    AddRow(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat<F>,
        inv_std: Array1<F>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Splice {
        base: Var,
        block: Var,
        start: usize,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<Mat<F>>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<F>,
        probs: Mat<F>,
    },
    SumScalars(Vec<Var>),
}

struct Node<F> {
    value: Mat<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
pub struct Gradients<F> {
    grads: Vec<Option<Mat<F>>>,
}

impl<F: Scalar> Gradients<F> {
    pub fn get(&self, v: Var) -> Option<&Mat<F>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Mat<F>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

#[derive(Default)]
pub struct Graph<F> {
    nodes: Vec<Node<F>>,
}

const LN_EPS: f64 = 1e-5;

impl<F: Scalar> Graph<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<F>, op: Op<F>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Mat<F>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Mat<F>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Mat<F> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.ng(v)
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, v: Var) -> F {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulNt(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.value(a).dim(), self.value(b).dim(), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row: bias must be 1 × n");
        assert_eq!(r.ncols(), self.value(a).ncols(), "add_row: width mismatch");
        let value = self.value(a) + r;
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, factor: F) -> Var {
        let value = self.value(a) * factor;
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, factor), ng)
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        let ng = self.ng(a);
        self.push(value, Op::Gelu(a), ng)
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` (both `1 × n`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = F::lit(xv.ncols() as f64);
        let eps = F::lit(LN_EPS);
        let mut xhat = xv.clone();
        let mut inv_std = Array1::zeros(xv.nrows());
        for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / n;
            row.mapv_inplace(|e| e - mean);
            let var = row.iter().map(|&e| e * e).sum::<F>() / n;
            *is = F::one() / (var + eps).sqrt();
            let s = *is;
            row.mapv_inplace(|e| e * s);
        }
        let value = &(&xhat * self.value(gamma)) + self.value(beta);
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        self.push(value, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, ng)
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Mat::zeros((ids.len(), t.ncols()));
        for (mut row, &id) in value.rows_mut().into_iter().zip(ids) {
            row.assign(&t.row(id));
        }
        let ng = self.ng(table);
        self.push(value, Op::Gather { table, ids: ids.to_vec() }, ng)
    }

    /// `base` with rows `start .. start + block.nrows()` replaced by `block`.
    pub fn splice(&mut self, base: Var, block: Var, start: usize) -> Var {
        let (b, k) = (self.value(base), self.value(block));
        assert_eq!(b.ncols(), k.ncols(), "splice: width mismatch");
        assert!(start + k.nrows() <= b.nrows(), "splice: block overruns base");
        let mut value = b.clone();
        value.slice_mut(s![start..start + k.nrows(), ..]).assign(k);
        let ng = self.ng(base) || self.ng(block);
        self.push(value, Op::Splice { base, block, start }, ng)
    }

    /// Multi-head causal self-attention over already projected `q`, `k`, `v`
    /// (each `T × d`, `d` divisible by `heads`). Position `i` attends to
    /// positions `0..=i` only.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Var {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (t, d) = qv.dim();
        assert_eq!(kv.dim(), (t, d));
        assert_eq!(vv.dim(), (t, d));
        assert!(heads > 0 && d % heads == 0, "attention: d not divisible by heads");
        let dh = d / heads;
        let scale = F::one() / F::lit(dh as f64).sqrt();
        let mut out = Mat::zeros((t, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = qv.slice(cols).dot(&kv.slice(cols).t());
            for i in 0..t {
                let mut row = scores.row_mut(i);
                let mut max = F::neg_infinity();
                for j in 0..=i {
                    row[j] *= scale;
                    max = max.max(row[j]);
                }
                let mut total = F::zero();
                for j in 0..=i {
                    row[j] = (row[j] - max).exp();
                    total += row[j];
                }
                for j in 0..t {
                    row[j] = if j <= i { row[j] / total } else { F::zero() };
                }
            }
            out.slice_mut(cols).assign(&scores.dot(&vv.slice(cols)));
            probs.push(scores);
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(out, Op::Attention { q, k, v, heads, probs }, ng)
    }

    /// Weighted sum of row-wise cross-entropies: `Σ_i w_i · −log softmax(logits_i)[t_i]`.
    ///
    /// Rows with weight zero are skipped entirely, so their logits never
    /// influence the value and receive an exactly-zero gradient.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], weights: &[F]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "cross_entropy: target count");
        assert_eq!(lv.nrows(), weights.len(), "cross_entropy: weight count");
        let mut probs = Mat::zeros(lv.dim());
        let mut total = F::zero();
        for (i, row) in lv.rows().into_iter().enumerate() {
            if weights[i] == F::zero() {
                continue;
            }
            let max = row.iter().fold(F::neg_infinity(), |m, &x| m.max(x));
            let mut z = F::zero();
            let mut p = probs.row_mut(i);
            for (pj, &x) in p.iter_mut().zip(row.iter()) {
                *pj = (x - max).exp();
                z += *pj;
            }
            p.mapv_inplace(|e| e / z);
            let log_p = row[targets[i]] - max - z.ln();
            total -= weights[i] * log_p;
        }
        let ng = self.ng(logits);
        self.push(
            Mat::from_elem((1, 1), total),
            Op::CrossEntropy { logits, targets: targets.to_vec(), weights: weights.to_vec(), probs },
            ng,
        )
    }

    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let total = parts.iter().map(|&p| self.scalar(p)).sum::<F>();
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Mat::from_elem((1, 1), total), Op::SumScalars(parts.to_vec()), ng)
    }

    /// Reverse pass from a `1 × 1` node.
    pub fn backward(&self, root: Var) -> Gradients<F> {
        assert_eq!(self.value(root).dim(), (1, 1), "backward: root must be scalar");
        let mut grads: Vec<Option<Mat<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.ng(root) {
            return Gradients { grads };
        }
        grads[root.0] = Some(Mat::ones((1, 1)));
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            // Interior gradients are not kept.
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<F>, g: &Mat<F>, grads: &mut [Option<Mat<F>>]) {
        let mut acc = |v: Var, d: Mat<F>| match &mut grads[v.0] {
            Some(existing) => *existing += &d,
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.dot(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, g.t().dot(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.clone());
                }
                if self.ng(*b) {
                    acc(*b, g.clone());
                }
            }
            Op::AddRow(a, row) => {
                if self.ng(*a) {
                    acc(*a, g.clone());
                }
                if self.ng(*row) {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Scale(a, f) => {
                if self.ng(*a) {
                    acc(*a, g * *f);
                }
            }
            Op::Gelu(a) => {
                if self.ng(*a) {
                    let mut d = self.value(*a).mapv(gelu_grad);
                    d *= g;
                    acc(*a, d);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                if self.ng(*gamma) {
                    acc(*gamma, (g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*beta) {
                    acc(*beta, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.ng(*x) {
                    let dxhat = g * self.value(*gamma);
                    let n = F::lit(xhat.ncols() as f64);
                    let mut dx = Mat::zeros(xhat.dim());
                    for i in 0..xhat.nrows() {
                        let dr = dxhat.row(i);
                        let xr = xhat.row(i);
                        let sum_d = dr.sum();
                        let sum_dx = dr.iter().zip(xr.iter()).map(|(&a, &b)| a * b).sum::<F>();
                        let is = inv_std[i];
                        for j in 0..xhat.ncols() {
                            dx[[i, j]] = is / n * (n * dr[j] - sum_d - xr[j] * sum_dx);
                        }
                    }
                    acc(*x, dx);
                }
            }
            Op::Gather { table, ids } => {
                if self.ng(*table) {
                    let mut d = Mat::zeros(self.value(*table).dim());
                    for (row, &id) in g.rows().into_iter().zip(ids) {
                        let mut target = d.row_mut(id);
                        target += &row;
                    }
                    acc(*table, d);
                }
            }
            Op::Splice { base, block, start } => {
                let rows = self.value(*block).nrows();
                if self.ng(*base) {
                    let mut d = g.clone();
                    d.slice_mut(s![*start..*start + rows, ..]).fill(F::zero());
                    acc(*base, d);
                }
                if self.ng(*block) {
                    acc(*block, g.slice(s![*start..*start + rows, ..]).to_owned());
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (t, d) = qv.dim();
                let dh = d / heads;
                let scale = F::one() / F::lit(dh as f64).sqrt();
                let mut dq = Mat::zeros((t, d));
                let mut dk = Mat::zeros((t, d));
                let mut dv = Mat::zeros((t, d));
                for (h, p) in probs.iter().enumerate() {
                    let cols = s![.., h * dh..(h + 1) * dh];
                    let go = g.slice(cols);
                    dv.slice_mut(cols).assign(&p.t().dot(&go));
                    let dp = go.dot(&vv.slice(cols).t());
                    let mut ds = Mat::zeros((t, t));
                    for i in 0..t {
                        let dot = (0..=i).map(|j| dp[[i, j]] * p[[i, j]]).sum::<F>();
                        for j in 0..=i {
                            ds[[i, j]] = p[[i, j]] * (dp[[i, j]] - dot) * scale;
                        }
                    }
                    dq.slice_mut(cols).assign(&ds.dot(&kv.slice(cols)));
                    dk.slice_mut(cols).assign(&ds.t().dot(&qv.slice(cols)));
                }
                if self.ng(*q) {
                    acc(*q, dq);
                }
                if self.ng(*k) {
                    acc(*k, dk);
                }
                if self.ng(*v) {
                    acc(*v, dv);
                }
            }
            Op::CrossEntropy { logits, targets, weights, probs } => {
                if self.ng(*logits) {
                    let g0 = g[[0, 0]];
                    let mut d = Mat::zeros(probs.dim());
                    for i in 0..probs.nrows() {
                        if weights[i] == F::zero() {
                            continue;
                        }
                        let w = g0 * weights[i];
                        let mut row = d.row_mut(i);
                        row.assign(&probs.row(i));
                        row[targets[i]] -= F::one();
                        row.mapv_inplace(|e| e * w);
                    }
                    acc(*logits, d);
                }
            }
            Op::SumScalars(parts) => {
                for &p in parts {
                    if self.ng(p) {
                        acc(p, g.clone());
                    }
                }
            }
        }
    }
}

fn gelu<F: Scalar>(x: F) -> F {
    let c = F::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = F::lit(0.5);
    let inner = c * (x + F::lit(0.044715) * x * x * x);
    half * x * (F::one() + inner.tanh())
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::lit((2.0 / std::f64::consts::PI).sqrt());
    let half = F::lit(0.5);
    let a = F::lit(0.044715);
    let inner = c * (x + a * x * x * x);
    let th = inner.tanh();
    let sech2 = F::one() - th * th;
    half * (F::one() + th) + half * x * sech2 * c * (F::one() + F::lit(3.0) * a * x * x)
}

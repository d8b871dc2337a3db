//! A small reverse-mode automatic differentiation tape over [`Matrix`].
//!
//! Every operation appends a node holding its forward value. `backward`
//! walks the tape in reverse and accumulates gradients only into nodes that
//! depend on a differentiable leaf.

use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, f64),
    BroadcastRows(usize),
    ConcatRows(Vec<usize>),
    ConcatCols(Vec<usize>),
    SliceCols(usize, usize),
    SoftmaxRows(usize),
    LayerNorm { input: usize, normalized: Matrix, inv_std: Vec<f64> },
    Tanh(usize),
    Silu(usize),
    Exp(usize),
    Square(usize),
    Mean(usize),
    Sum(usize),
}

struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of `shape` when `v` did not influence the root.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
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

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].tracked)
    }

    /// A differentiable leaf (a parameter or an input under test).
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf; no gradient flows into it.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let t = self.tracked(&[a.0, b.0]);
        self.push(value, Op::MatMul(a.0, b.0), t)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        let t = self.tracked(&[a.0, b.0]);
        self.push(value, Op::MatMulT(a.0, b.0), t)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        let t = self.tracked(&[a.0, b.0]);
        self.push(value, Op::Add(a.0, b.0), t)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        let t = self.tracked(&[a.0, b.0]);
        self.push(value, Op::Sub(a.0, b.0), t)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let t = self.tracked(&[a.0, b.0]);
        self.push(value, Op::Mul(a.0, b.0), t)
    }

    /// Adds a `1 × m` row to every row of an `n × m` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = row_apply(self.value(a), self.value(row), |x, r| x + r);
        let t = self.tracked(&[a.0, row.0]);
        self.push(value, Op::AddRow(a.0, row.0), t)
    }

    /// Multiplies every row of an `n × m` matrix by a `1 × m` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let value = row_apply(self.value(a), self.value(row), |x, r| x * r);
        let t = self.tracked(&[a.0, row.0]);
        self.push(value, Op::MulRow(a.0, row.0), t)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let t = self.tracked(&[a.0]);
        self.push(value, Op::Scale(a.0, s), t)
    }

    /// Repeats a `1 × m` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.rows(), 1, "broadcast_rows expects a single row");
        let mut data = Vec::with_capacity(n * src.cols());
        for _ in 0..n {
            data.extend_from_slice(src.data());
        }
        let value = Matrix::from_vec(n, src.cols(), data);
        let t = self.tracked(&[a.0]);
        self.push(value, Op::BroadcastRows(a.0), t)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.cols(), cols, "concat_rows column mismatch");
            rows += m.rows();
            data.extend_from_slice(m.data());
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let t = self.tracked(&ids);
        self.push(Matrix::from_vec(rows, cols, data), Op::ConcatRows(ids), t)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows();
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut out = Matrix::zeros(rows, total);
        let mut offset = 0;
        for p in parts {
            let m = self.value(*p);
            assert_eq!(m.rows(), rows, "concat_cols row mismatch");
            for r in 0..rows {
                out.row_mut(r)[offset..offset + m.cols()].copy_from_slice(m.row(r));
            }
            offset += m.cols();
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let t = self.tracked(&ids);
        self.push(out, Op::ConcatCols(ids), t)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        assert!(start + len <= src.cols(), "slice_cols out of range");
        let mut out = Matrix::zeros(src.rows(), len);
        for r in 0..src.rows() {
            out.row_mut(r).copy_from_slice(&src.row(r)[start..start + len]);
        }
        let t = self.tracked(&[a.0]);
        self.push(out, Op::SliceCols(a.0, start), t)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let t = self.tracked(&[a.0]);
        self.push(value, Op::SoftmaxRows(a.0), t)
    }

    /// Row-wise standardization (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let src = self.value(a);
        let n = src.cols() as f64;
        let mut normalized = Matrix::zeros(src.rows(), src.cols());
        let mut inv_std = Vec::with_capacity(src.rows());
        for r in 0..src.rows() {
            let row = src.row(r);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, x) in normalized.row_mut(r).iter_mut().zip(row) {
                *o = (x - mean) * inv;
            }
            inv_std.push(inv);
        }
        let t = self.tracked(&[a.0]);
        let op = Op::LayerNorm {
            input: a.0,
            normalized: normalized.clone(),
            inv_std,
        };
        self.push(normalized, op, t)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        let t = self.tracked(&[a.0]);
        self.push(value, Op::Tanh(a.0), t)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * sigmoid(x));
        let t = self.tracked(&[a.0]);
        self.push(value, Op::Silu(a.0), t)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let t = self.tracked(&[a.0]);
        self.push(value, Op::Exp(a.0), t)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * x);
        let t = self.tracked(&[a.0]);
        self.push(value, Op::Square(a.0), t)
    }

    /// Mean of all entries as a `1 × 1` matrix.
    pub fn mean(&mut self, a: Var) -> Var {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).mean()]);
        let t = self.tracked(&[a.0]);
        self.push(value, Op::Mean(a.0), t)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::from_vec(1, 1, vec![self.value(a).data().iter().sum()]);
        let t = self.tracked(&[a.0]);
        self.push(value, Op::Sum(a.0), t)
    }

    /// Linear map `x · Wᵀ (+ b)` for `W: out × in` and `b: 1 × out`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Var {
        let y = self.matmul_t(x, weight);
        match bias {
            Some(b) => self.add_row(y, b),
            None => y,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        assert_eq!(m.shape(), (1, 1), "scalar() on a non-scalar node");
        m.data()[0]
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.shape(root), (1, 1), "backward needs a scalar root");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], id: usize, delta: Matrix) {
        if !self.nodes[id].tracked {
            return;
        }
        match &mut grads[id] {
            Some(existing) => existing.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].tracked
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, g.matmul_t(&self.nodes[b].value));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, self.nodes[a].value.t_matmul(g));
                }
            }
            &Op::MatMulT(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, g.matmul(&self.nodes[b].value));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, g.t_matmul(&self.nodes[a].value));
                }
            }
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                if self.wants(b) {
                    self.accumulate(grads, b, g.scale(-1.0));
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    self.accumulate(grads, a, g.zip_map(&self.nodes[b].value, |x, y| x * y));
                }
                if self.wants(b) {
                    self.accumulate(grads, b, g.zip_map(&self.nodes[a].value, |x, y| x * y));
                }
            }
            &Op::AddRow(a, row) => {
                self.accumulate(grads, a, g.clone());
                if self.wants(row) {
                    self.accumulate(grads, row, column_sums(g));
                }
            }
            &Op::MulRow(a, row) => {
                let rv = &self.nodes[row].value;
                if self.wants(a) {
                    self.accumulate(grads, a, row_apply(g, rv, |x, r| x * r));
                }
                if self.wants(row) {
                    let prod = g.zip_map(&self.nodes[a].value, |x, y| x * y);
                    self.accumulate(grads, row, column_sums(&prod));
                }
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.scale(s)),
            &Op::BroadcastRows(a) => self.accumulate(grads, a, column_sums(g)),
            Op::ConcatRows(ids) => {
                let mut offset = 0;
                for &id in ids {
                    let (r, c) = self.nodes[id].value.shape();
                    if self.wants(id) {
                        let data = g.data()[offset * c..(offset + r) * c].to_vec();
                        self.accumulate(grads, id, Matrix::from_vec(r, c, data));
                    }
                    offset += r;
                }
            }
            Op::ConcatCols(ids) => {
                let mut offset = 0;
                for &id in ids {
                    let (r, c) = self.nodes[id].value.shape();
                    if self.wants(id) {
                        let mut part = Matrix::zeros(r, c);
                        for i in 0..r {
                            part.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + c]);
                        }
                        self.accumulate(grads, id, part);
                    }
                    offset += c;
                }
            }
            &Op::SliceCols(a, start) => {
                let (r, c) = self.nodes[a].value.shape();
                let mut full = Matrix::zeros(r, c);
                for i in 0..r {
                    full.row_mut(i)[start..start + g.cols()].copy_from_slice(g.row(i));
                }
                self.accumulate(grads, a, full);
            }
            &Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &gv) in dx.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *o = yv * (gv - inner);
                    }
                }
                self.accumulate(grads, a, dx);
            }
            Op::LayerNorm {
                input,
                normalized,
                inv_std,
            } => {
                let n = normalized.cols() as f64;
                let mut dx = Matrix::zeros(normalized.rows(), normalized.cols());
                for r in 0..normalized.rows() {
                    let xh = normalized.row(r);
                    let gr = g.row(r);
                    let sum_g: f64 = gr.iter().sum();
                    let sum_gx: f64 = gr.iter().zip(xh).map(|(a, b)| a * b).sum();
                    let k = inv_std[r] / n;
                    for ((o, &gv), &xv) in dx.row_mut(r).iter_mut().zip(gr).zip(xh) {
                        *o = k * (n * gv - sum_g - xv * sum_gx);
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            &Op::Tanh(a) => {
                let d = g.zip_map(&node.value, |gv, y| gv * (1.0 - y * y));
                self.accumulate(grads, a, d);
            }
            &Op::Silu(a) => {
                let d = g.zip_map(&self.nodes[a].value, |gv, x| {
                    let s = sigmoid(x);
                    gv * s * (1.0 + x * (1.0 - s))
                });
                self.accumulate(grads, a, d);
            }
            &Op::Exp(a) => {
                let d = g.zip_map(&node.value, |gv, y| gv * y);
                self.accumulate(grads, a, d);
            }
            &Op::Square(a) => {
                let d = g.zip_map(&self.nodes[a].value, |gv, x| 2.0 * gv * x);
                self.accumulate(grads, a, d);
            }
            &Op::Mean(a) => {
                let (r, c) = self.nodes[a].value.shape();
                let v = g.data()[0] / (r * c) as f64;
                self.accumulate(grads, a, Matrix::filled(r, c, v));
            }
            &Op::Sum(a) => {
                let (r, c) = self.nodes[a].value.shape();
                self.accumulate(grads, a, Matrix::filled(r, c, g.data()[0]));
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn row_apply(a: &Matrix, row: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    assert_eq!(row.rows(), 1, "row operand must have one row");
    assert_eq!(a.cols(), row.cols(), "row operand width mismatch");
    let mut out = a.clone();
    for r in 0..a.rows() {
        for (o, &rv) in out.row_mut(r).iter_mut().zip(row.data()) {
            *o = f(*o, rv);
        }
    }
    out
}

fn column_sums(g: &Matrix) -> Matrix {
    let mut out = vec![0.0; g.cols()];
    for r in 0..g.rows() {
        for (o, v) in out.iter_mut().zip(g.row(r)) {
            *o += v;
        }
    }
    Matrix::from_vec(1, g.cols(), out)
}

/// Numerically stable row-wise softmax.
pub fn softmax_rows(m: &Matrix) -> Matrix {
    let mut out = m.clone();
    for r in 0..m.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod check {
    //! Central finite differences against the tape.

    use super::*;

    /// Largest relative error between analytic and numeric gradients over all
    /// entries of `inputs`, with `rel = |a − n| / max(|a|, |n|, floor)`.
    pub fn max_relative_error(
        inputs: &[Matrix],
        f: impl Fn(&mut Graph, &[Var]) -> Var,
        step: f64,
        floor: f64,
    ) -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|m| g.param(m.clone())).collect();
        let root = f(&mut g, &vars);
        let grads = g.backward(root);

        let eval = |perturbed: &[Matrix]| {
            let mut g = Graph::new();
            let vars: Vec<Var> = perturbed.iter().map(|m| g.param(m.clone())).collect();
            let root = f(&mut g, &vars);
            g.scalar(root)
        };

        let mut worst: f64 = 0.0;
        for (k, m) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[k], m.shape());
            for i in 0..m.len() {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[i] += step;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[i] -= step;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * step);
                let a = analytic.data()[i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
                worst = worst.max(rel);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::check::max_relative_error;
    use super::*;

    fn sample(rows: usize, cols: usize, offset: f64) -> Matrix {
        let data = (0..rows * cols)
            .map(|i| ((i as f64 + offset) * 0.7311).sin())
            .collect();
        Matrix::from_vec(rows, cols, data)
    }

    #[test]
    fn elementwise_and_matmul_gradients() {
        let inputs = [sample(3, 4, 0.0), sample(4, 2, 1.0), sample(3, 2, 2.0)];
        let err = max_relative_error(
            &inputs,
            |g, v| {
                let p = g.matmul(v[0], v[1]);
                let q = g.mul(p, v[2]);
                let r = g.tanh(q);
                let s = g.sub(r, v[2]);
                let s = g.square(s);
                g.mean(s)
            },
            1e-6,
            // difference-quotient cancellation noise is ~1e-10 absolute
            1e-4,
        );
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn attention_style_gradients() {
        let inputs = [sample(3, 4, 0.3), sample(2, 4, 1.3), sample(2, 4, 2.3), sample(1, 4, 4.0)];
        let err = max_relative_error(
            &inputs,
            |g, v| {
                let scores = g.matmul_t(v[0], v[1]);
                let scores = g.scale(scores, 0.5);
                let w = g.softmax_rows(scores);
                let out = g.matmul(w, v[2]);
                let ln = g.layer_norm(out, 1e-5);
                let ln = g.mul_row(ln, v[3]);
                let ln = g.add_row(ln, v[3]);
                let act = g.silu(ln);
                let left = g.slice_cols(act, 1, 2);
                let right = g.slice_cols(act, 0, 2);
                let both = g.concat_cols(&[left, right]);
                let b = g.broadcast_rows(v[3], 2);
                let stacked = g.concat_rows(&[both, b]);
                let e = g.exp(stacked);
                g.sum(e)
            },
            1e-6,
            1e-8,
        );
        assert!(err < 1e-6, "relative error {err}");
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Matrix::filled(2, 2, 1.0));
        let p = g.param(Matrix::filled(2, 2, 3.0));
        let y = g.mul(c, p);
        let s = g.sum(y);
        let grads = g.backward(s);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(p).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let m = Matrix::from_vec(2, 3, vec![1000.0, 999.0, -5.0, 0.0, 0.0, 0.0]);
        let s = softmax_rows(&m);
        for r in 0..2 {
            assert!((s.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!((s[(1, 0)] - 1.0 / 3.0).abs() < 1e-15);
    }
}

//! Recorded operation tape with reverse-mode gradients.
//!
//! Every primitive evaluates eagerly and appends a node holding its value and
//! enough context to run its backward rule. [`Tape::backward`] replays the
//! nodes in reverse creation order.

use super::{Matrix, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Row reduction used by [`Tape::pool_rows`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Mean,
    Max,
}

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    OneMinus(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    PoolMean { x: Var, groups: Vec<Vec<usize>> },
    PoolMax { x: Var, argmax: Vec<usize> },
    BroadcastRows(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Vec<usize>),
    StackRows(Vec<Var>),
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Matrix },
    Sum(Var),
    Scalar { inputs: Vec<Var>, grads: Vec<Matrix> },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Gradients of one scalar output with respect to every tape node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads[v.0].as_ref()
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<Option<Var>>,
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension {
            op,
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
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

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(Some(v)) = self.params.get(id.0) {
            return *v;
        }
        let v = self.push(store.get(id).value.clone(), Op::Param);
        if self.params.len() <= id.0 {
            self.params.resize(id.0 + 1, None);
        }
        self.params[id.0] = Some(v);
        v
    }

    /// Node already bound to `id`, if any.
    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.params.get(id.0).copied().flatten()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let value = x.zip_map(y, |p, q| p + q);
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("sub", x, y)?;
        let value = x.zip_map(y, |p, q| p - q);
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let value = x.zip_map(y, |p, q| p * q);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(row));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(Error::Dimension {
                op: "add_row",
                left: x.shape(),
                right: r.shape(),
            });
        }
        let mut value = x.clone();
        for i in 0..value.rows() {
            for (o, b) in value.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 - x);
        self.push(value, Op::OneMinus(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Reduces rows, either all of them or per group of row indices.
    pub fn pool_rows(&mut self, x: Var, mode: PoolMode, groups: Option<&[Vec<usize>]>) -> Result<Var> {
        let xv = self.value(x);
        let all: Vec<Vec<usize>>;
        let groups = match groups {
            Some(g) => g,
            None => {
                all = vec![(0..xv.rows()).collect()];
                &all
            }
        };
        for (gi, g) in groups.iter().enumerate() {
            if g.is_empty() {
                return Err(Error::Grouping(format!("group {gi} is empty")));
            }
            if let Some(&bad) = g.iter().find(|&&r| r >= xv.rows()) {
                return Err(Error::Grouping(format!(
                    "group {gi} references row {bad} of {}",
                    xv.rows()
                )));
            }
        }
        let cols = xv.cols();
        let mut value = Matrix::zeros(groups.len(), cols);
        match mode {
            PoolMode::Mean => {
                for (gi, g) in groups.iter().enumerate() {
                    let out = value.row_mut(gi);
                    for &r in g {
                        for (o, v) in out.iter_mut().zip(xv.row(r)) {
                            *o += v;
                        }
                    }
                    let inv = 1.0 / g.len() as f64;
                    out.iter_mut().for_each(|o| *o *= inv);
                }
                let groups = groups.to_vec();
                Ok(self.push(value, Op::PoolMean { x, groups }))
            }
            PoolMode::Max => {
                let mut argmax = vec![0; groups.len() * cols];
                for (gi, g) in groups.iter().enumerate() {
                    for c in 0..cols {
                        let mut best = g[0];
                        for &r in &g[1..] {
                            // strict comparison keeps the lowest row on ties
                            if xv.get(r, c) > xv.get(best, c) {
                                best = r;
                            }
                        }
                        argmax[gi * cols + c] = best;
                        value.set(gi, c, xv.get(best, c));
                    }
                }
                Ok(self.push(value, Op::PoolMax { x, argmax }))
            }
        }
    }

    /// Repeats a `1 x c` row `n` times.
    pub fn broadcast_rows(&mut self, row: Var, n: usize) -> Result<Var> {
        let r = self.value(row);
        if r.rows() != 1 {
            return Err(Error::Dimension {
                op: "broadcast_rows",
                left: r.shape(),
                right: (1, r.cols()),
            });
        }
        let mut value = Matrix::zeros(n, r.cols());
        for i in 0..n {
            value.row_mut(i).copy_from_slice(r.data());
        }
        Ok(self.push(value, Op::BroadcastRows(row)))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.rows() != y.rows() {
            return Err(Error::Dimension {
                op: "concat_cols",
                left: x.shape(),
                right: y.shape(),
            });
        }
        let mut value = Matrix::zeros(x.rows(), x.cols() + y.cols());
        for i in 0..x.rows() {
            let row = value.row_mut(i);
            row[..x.cols()].copy_from_slice(x.row(i));
            row[x.cols()..].copy_from_slice(y.row(i));
        }
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    /// Selects rows by index (embedding lookup); repeated indices allowed.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows()) {
            return Err(Error::Vocab {
                id: bad,
                size: t.rows(),
            });
        }
        let mut value = Matrix::zeros(ids.len(), t.cols());
        for (o, &i) in ids.iter().enumerate() {
            value.row_mut(o).copy_from_slice(t.row(i));
        }
        Ok(self.push(value, Op::GatherRows(table, ids.to_vec())))
    }

    /// Stacks `1 x c` rows into an `n x c` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let cols = rows.first().map_or(0, |&r| self.value(r).cols());
        let mut value = Matrix::zeros(rows.len(), cols);
        for (i, &r) in rows.iter().enumerate() {
            let rv = self.value(r);
            if rv.shape() != (1, cols) {
                return Err(Error::Dimension {
                    op: "stack_rows",
                    left: (1, cols),
                    right: rv.shape(),
                });
            }
            value.row_mut(i).copy_from_slice(rv.data());
        }
        Ok(self.push(value, Op::StackRows(rows.to_vec())))
    }

    /// Mean over rows of `-log softmax(logits)[label]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let z = self.value(logits);
        if labels.len() != z.rows() {
            return Err(Error::Dimension {
                op: "softmax_cross_entropy",
                left: z.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= z.cols()) {
            return Err(Error::Label {
                label: bad,
                classes: z.cols(),
            });
        }
        let mut probs = Matrix::zeros(z.rows(), z.cols());
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = z.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[label];
            for (p, &v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let n = labels.len().max(1) as f64;
        Ok(self.push(
            Matrix::scalar(loss / n),
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                probs,
            },
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a))
    }

    /// Scalar node with externally computed value and local gradients
    /// `d value / d input` for each input.
    pub fn scalar_op(&mut self, inputs: &[Var], value: f64, grads: Vec<Matrix>) -> Result<Var> {
        assert_eq!(inputs.len(), grads.len(), "one gradient per input");
        for (&v, g) in inputs.iter().zip(&grads) {
            same_shape("scalar_op", self.value(v), g)?;
        }
        Ok(self.push(
            Matrix::scalar(value),
            Op::Scalar {
                inputs: inputs.to_vec(),
                grads,
            },
        ))
    }

    /// Reverse sweep from a `1 x 1` output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if out.shape() != (1, 1) {
            return Err(Error::Dimension {
                op: "backward",
                left: out.shape(),
                right: (1, 1),
            });
        }
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Constant | Op::Param => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul_t(self.value(*b))?;
                    let db = self.value(*a).t_matmul(&g)?;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g.map(|x| -x));
                }
                Op::Mul(a, b) => {
                    let da = g.zip_map(self.value(*b), |x, y| x * y);
                    let db = g.zip_map(self.value(*a), |x, y| x * y);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let mut dr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in dr.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *row, dr);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.map(|x| x * s)),
                Op::OneMinus(a) => acc(&mut grads, *a, g.map(|x| -x)),
                Op::Tanh(a) => {
                    let d = g.zip_map(&node.value, |x, y| x * (1.0 - y * y));
                    acc(&mut grads, *a, d);
                }
                Op::Sigmoid(a) => {
                    let d = g.zip_map(&node.value, |x, y| x * y * (1.0 - y));
                    acc(&mut grads, *a, d);
                }
                Op::Relu(a) => {
                    let d = g.zip_map(self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    acc(&mut grads, *a, d);
                }
                Op::PoolMean { x, groups } => {
                    let xv = self.value(*x);
                    let mut d = Matrix::zeros(xv.rows(), xv.cols());
                    for (gi, grp) in groups.iter().enumerate() {
                        let inv = 1.0 / grp.len() as f64;
                        for &r in grp {
                            for (o, v) in d.row_mut(r).iter_mut().zip(g.row(gi)) {
                                *o += v * inv;
                            }
                        }
                    }
                    acc(&mut grads, *x, d);
                }
                Op::PoolMax { x, argmax } => {
                    let xv = self.value(*x);
                    let cols = xv.cols();
                    let mut d = Matrix::zeros(xv.rows(), cols);
                    for (k, &r) in argmax.iter().enumerate() {
                        let (gi, c) = (k / cols, k % cols);
                        d.set(r, c, d.get(r, c) + g.get(gi, c));
                    }
                    acc(&mut grads, *x, d);
                }
                Op::BroadcastRows(row) => {
                    let mut dr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, v) in dr.data_mut().iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    acc(&mut grads, *row, dr);
                }
                Op::ConcatCols(a, b) => {
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    let mut da = Matrix::zeros(g.rows(), ca);
                    let mut db = Matrix::zeros(g.rows(), cb);
                    for i in 0..g.rows() {
                        da.row_mut(i).copy_from_slice(&g.row(i)[..ca]);
                        db.row_mut(i).copy_from_slice(&g.row(i)[ca..]);
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::GatherRows(table, ids) => {
                    let t = self.value(*table);
                    let mut d = Matrix::zeros(t.rows(), t.cols());
                    for (o, &i) in ids.iter().enumerate() {
                        for (dst, v) in d.row_mut(i).iter_mut().zip(g.row(o)) {
                            *dst += v;
                        }
                    }
                    acc(&mut grads, *table, d);
                }
                Op::StackRows(rows) => {
                    for (i, &r) in rows.iter().enumerate() {
                        acc(&mut grads, r, Matrix::from_vec(1, g.cols(), g.row(i).to_vec())?);
                    }
                }
                Op::SoftmaxCe {
                    logits,
                    labels,
                    probs,
                } => {
                    let scale = g.item() / labels.len().max(1) as f64;
                    let mut d = probs.clone();
                    for (i, &l) in labels.iter().enumerate() {
                        let row = d.row_mut(i);
                        row[l] -= 1.0;
                        row.iter_mut().for_each(|x| *x *= scale);
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    acc(&mut grads, *a, Matrix::filled(r, c, g.item()));
                }
                Op::Scalar { inputs, grads: local } => {
                    let up = g.item();
                    for (&v, lg) in inputs.iter().zip(local) {
                        acc(&mut grads, v, lg.map(|x| x * up));
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Adds the parameter gradients from `grads` into `store`.
    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) -> Result<()> {
        for (pid, var) in self.params.iter().enumerate() {
            let Some(g) = var.and_then(|v| grads.get(v)) else {
                continue;
            };
            let p = store.get_mut(ParamId(pid));
            if !g.is_finite() {
                return Err(Error::Numeric(format!("non-finite gradient for {}", p.name)));
            }
            p.grad.add_assign(g);
        }
        Ok(())
    }

    /// `backward` followed by `accumulate`.
    pub fn backward_into(&self, output: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(output)?;
        self.accumulate(&grads, store)
    }
}

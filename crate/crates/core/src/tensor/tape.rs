use crate::error::{Error, Result};

use super::Matrix;

/// Inputs to `log` are clamped from below at this value.
pub const LOG_FLOOR: f64 = 1e-12;
/// Guard for row norms and node degrees.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Broadcast {
    None,
    /// `1 x cols` operand repeated down the rows.
    Row,
    /// `rows x 1` operand repeated across the columns.
    Col,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize, Broadcast),
    ElemMul(usize, usize, Broadcast),
    Transpose(usize),
    Relu(usize),
    RowSoftmax(usize),
    RowL2Normalize { input: usize, norms: Vec<f64> },
    SymNormalize { input: usize, degrees: Vec<f64>, inv_sqrt: Vec<f64> },
    Sum(usize),
    Mean(usize),
    Log(usize),
    ScalarMul(usize, f64),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Vec<usize>),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Records primitive operations on dense matrices for reverse-mode
/// differentiation.
///
/// Nodes are appended in evaluation order, so the tape is acyclic by
/// construction and the backward pass is a single reverse sweep.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<usize>,
}

fn broadcast_kind(a: &Matrix, b: &Matrix, what: &str) -> Result<Broadcast> {
    if a.shape() == b.shape() {
        Ok(Broadcast::None)
    } else if b.rows() == 1 && b.cols() == a.cols() {
        Ok(Broadcast::Row)
    } else if b.cols() == 1 && b.rows() == a.rows() {
        Ok(Broadcast::Col)
    } else {
        Err(Error::Shape(format!("{what} {:?} with {:?}", a.shape(), b.shape())))
    }
}

fn broadcast_get(b: &Matrix, kind: Broadcast, i: usize, j: usize) -> f64 {
    match kind {
        Broadcast::None => b.get(i, j),
        Broadcast::Row => b.get(0, j),
        Broadcast::Col => b.get(i, 0),
    }
}

/// Folds a full-shape gradient back onto a broadcast operand.
fn reduce_broadcast(g: &Matrix, kind: Broadcast) -> Matrix {
    match kind {
        Broadcast::None => g.clone(),
        Broadcast::Row => {
            let mut out = Matrix::zeros(1, g.cols());
            for i in 0..g.rows() {
                for (o, v) in out.row_mut(0).iter_mut().zip(g.row(i)) {
                    *o += v;
                }
            }
            out
        }
        Broadcast::Col => Matrix::from_fn(g.rows(), 1, |i, _| g.row(i).iter().sum()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Records a trainable leaf; gradients are returned in registration order.
    pub fn parameter(&mut self, value: Matrix) -> Var {
        let v = self.push(value, Op::Leaf, true);
        self.params.push(v.0);
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a.0, b.0), needs))
    }

    /// Element-wise sum. `b` may also be a `1 x cols` row or `rows x 1`
    /// column, repeated to `a`'s shape.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let kind = broadcast_kind(va, vb, "add")?;
        let value = Matrix::from_fn(va.rows(), va.cols(), |i, j| va.get(i, j) + broadcast_get(vb, kind, i, j));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a.0, b.0, kind), needs))
    }

    /// Element-wise product with the same broadcasting rule as [`Tape::add`].
    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let kind = broadcast_kind(va, vb, "elementwise_mul")?;
        let value = Matrix::from_fn(va.rows(), va.cols(), |i, j| va.get(i, j) * broadcast_get(vb, kind, i, j));
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ElemMul(a.0, b.0, kind), needs))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let needs = self.needs(a);
        self.push(value, Op::Transpose(a.0), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let needs = self.needs(a);
        self.push(value, Op::Relu(a.0), needs)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut value = va.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                total += *v;
            }
            row.iter_mut().for_each(|v| *v /= total);
        }
        let needs = self.needs(a);
        self.push(value, Op::RowSoftmax(a.0), needs)
    }

    /// Scales each row to unit Euclidean norm; rows with norm below
    /// [`NORM_EPS`] are divided by `NORM_EPS` instead.
    pub fn row_l2_normalize(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let norms: Vec<f64> = (0..va.rows())
            .map(|r| va.row(r).iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        let value = Matrix::from_fn(va.rows(), va.cols(), |i, j| va.get(i, j) / norms[i].max(NORM_EPS));
        let needs = self.needs(a);
        self.push(value, Op::RowL2Normalize { input: a.0, norms }, needs)
    }

    /// Symmetric degree normalization `D^{-1/2} M D^{-1/2}` of a square
    /// matrix, with `D` the row sums floored at [`NORM_EPS`]. The diagonal
    /// is kept.
    pub fn sym_normalize(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rows() != va.cols() {
            return Err(Error::Shape(format!("sym_normalize of non-square {:?}", va.shape())));
        }
        let degrees = va.row_sums();
        let inv_sqrt: Vec<f64> = degrees.iter().map(|&d| 1.0 / d.max(NORM_EPS).sqrt()).collect();
        let value = Matrix::from_fn(va.rows(), va.cols(), |i, j| inv_sqrt[i] * va.get(i, j) * inv_sqrt[j]);
        let needs = self.needs(a);
        Ok(self.push(value, Op::SymNormalize { input: a.0, degrees, inv_sqrt }, needs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let needs = self.needs(a);
        self.push(value, Op::Sum(a.0), needs)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let count = (va.rows() * va.cols()).max(1) as f64;
        let value = Matrix::scalar(va.sum() / count);
        let needs = self.needs(a);
        self.push(value, Op::Mean(a.0), needs)
    }

    /// Natural log with inputs clamped at [`LOG_FLOOR`].
    pub fn log(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(LOG_FLOOR).ln());
        let needs = self.needs(a);
        self.push(value, Op::Log(a.0), needs)
    }

    pub fn scalar_mul(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).scale(s);
        let needs = self.needs(a);
        self.push(value, Op::ScalarMul(a.0, s), needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).rows() != rows) {
            return Err(Error::Shape(format!(
                "concat_cols rows {} vs {}",
                rows,
                self.value(*bad).rows()
            )));
        }
        let cols: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for p in parts {
                let src = self.value(*p).row(r);
                value.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let needs = parts.iter().any(|p| self.needs(*p));
        Ok(self.push(value, Op::ConcatCols(parts.iter().map(|p| p.0).collect()), needs))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if let Some(&bad) = indices.iter().find(|&&i| i >= va.rows()) {
            return Err(Error::Shape(format!("gather row {bad} of {} rows", va.rows())));
        }
        let value = Matrix::from_fn(indices.len(), va.cols(), |r, c| va.get(indices[r], c));
        let needs = self.needs(a);
        Ok(self.push(value, Op::GatherRows(a.0, indices.to_vec()), needs))
    }

    /// Reverse sweep from a scalar `loss`; returns one gradient per
    /// registered parameter, in registration order.
    pub fn gradient(&self, loss: Var) -> Result<Vec<Matrix>> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "loss must be 1x1, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));

        let accumulate = |grads: &mut Vec<Option<Matrix>>, nodes: &[Node], idx: usize, g: Matrix| {
            if !nodes[idx].needs_grad {
                return;
            }
            match &mut grads[idx] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        };

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let nodes = &self.nodes;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if nodes[*a].needs_grad {
                        accumulate(&mut grads, nodes, *a, g.matmul_t(&nodes[*b].value)?);
                    }
                    if nodes[*b].needs_grad {
                        accumulate(&mut grads, nodes, *b, nodes[*a].value.t_matmul(&g)?);
                    }
                }
                Op::Add(a, b, kind) => {
                    accumulate(&mut grads, nodes, *b, reduce_broadcast(&g, *kind));
                    accumulate(&mut grads, nodes, *a, g);
                }
                Op::ElemMul(a, b, kind) => {
                    let (va, vb) = (&nodes[*a].value, &nodes[*b].value);
                    if nodes[*a].needs_grad {
                        let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * broadcast_get(vb, *kind, i, j));
                        accumulate(&mut grads, nodes, *a, ga);
                    }
                    if nodes[*b].needs_grad {
                        let full = g.zip_map(va, |x, y| x * y)?;
                        accumulate(&mut grads, nodes, *b, reduce_broadcast(&full, *kind));
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads, nodes, *a, g.transpose()),
                Op::Relu(a) => {
                    let ga = g.zip_map(&nodes[*a].value, |gv, x| if x > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut grads, nodes, *a, ga);
                }
                Op::RowSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum();
                        for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, nodes, *a, ga);
                }
                Op::RowL2Normalize { input, norms } => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows(), y.cols());
                    for r in 0..y.rows() {
                        let n = norms[r];
                        if n > NORM_EPS {
                            let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(p, q)| p * q).sum();
                            for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                                *o = (gv - yv * dot) / n;
                            }
                        } else {
                            for (o, &gv) in ga.row_mut(r).iter_mut().zip(g.row(r)) {
                                *o = gv / NORM_EPS;
                            }
                        }
                    }
                    accumulate(&mut grads, nodes, *input, ga);
                }
                Op::SymNormalize { input, degrees, inv_sqrt } => {
                    let y = &node.value;
                    let k = y.rows();
                    // q_i: sum of g∘y over row i and column i
                    let mut q = vec![0.0; k];
                    for i in 0..k {
                        for j in 0..k {
                            let gy = g.get(i, j) * y.get(i, j);
                            q[i] += gy;
                            q[j] += gy;
                        }
                    }
                    let d_grad: Vec<f64> = (0..k)
                        .map(|i| if degrees[i] > NORM_EPS { -0.5 * q[i] / degrees[i] } else { 0.0 })
                        .collect();
                    let ga = Matrix::from_fn(k, k, |i, j| g.get(i, j) * inv_sqrt[i] * inv_sqrt[j] + d_grad[i]);
                    accumulate(&mut grads, nodes, *input, ga);
                }
                Op::Sum(a) => {
                    let va = &nodes[*a].value;
                    accumulate(&mut grads, nodes, *a, Matrix::filled(va.rows(), va.cols(), g.get(0, 0)));
                }
                Op::Mean(a) => {
                    let va = &nodes[*a].value;
                    let count = (va.rows() * va.cols()).max(1) as f64;
                    accumulate(&mut grads, nodes, *a, Matrix::filled(va.rows(), va.cols(), g.get(0, 0) / count));
                }
                Op::Log(a) => {
                    let ga = g.zip_map(&nodes[*a].value, |gv, x| if x > LOG_FLOOR { gv / x } else { 0.0 })?;
                    accumulate(&mut grads, nodes, *a, ga);
                }
                Op::ScalarMul(a, s) => accumulate(&mut grads, nodes, *a, g.scale(*s)),
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = nodes[p].value.cols();
                        if nodes[p].needs_grad {
                            let gp = Matrix::from_fn(g.rows(), cols, |i, j| g.get(i, offset + j));
                            accumulate(&mut grads, nodes, p, gp);
                        }
                        offset += cols;
                    }
                }
                Op::GatherRows(a, indices) => {
                    let va = &nodes[*a].value;
                    let mut ga = Matrix::zeros(va.rows(), va.cols());
                    for (r, &src) in indices.iter().enumerate() {
                        for (o, v) in ga.row_mut(src).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, nodes, *a, ga);
                }
            }
        }

        Ok(self
            .params
            .iter()
            .map(|&p| {
                grads
                    .get_mut(p)
                    .and_then(Option::take)
                    .unwrap_or_else(|| {
                        let v = &self.nodes[p].value;
                        Matrix::zeros(v.rows(), v.cols())
                    })
            })
            .collect())
    }
}

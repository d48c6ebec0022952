//! Reverse-mode automatic differentiation on a flat tape.
//!
//! Every forward operation appends one node to an arena owned by [`Tape`].
//! A node stores its output values, its shape, and an [`Op`] record naming
//! its inputs, which is all the information the reverse sweep needs.
//! [`Tensor`] handles are plain indices into the arena plus a shape, so they
//! are cheap to clone and never borrow the tape.
//!
//! The operator set is deliberately small: it is exactly what an attention
//! encoder, an LSTM decoder with a copy mixture, and the associated losses
//! require. Everything is `f64`. The reverse sweep walks node ids in strictly
//! decreasing order and accumulates gradients with in-order adds, so repeated
//! runs over the same graph are bitwise identical.

use thiserror::Error;

/// Probabilities are floored at this value before `ln` so that losses stay
/// finite even when a distribution assigns (numerically) zero mass.
pub const LOG_FLOOR: f64 = 1e-10;

/// Errors raised while building a graph or running the reverse sweep.
#[derive(Debug, Error)]
pub enum AdError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: expected {expected}, got shape {got:?}")]
    BadShape {
        op: &'static str,
        expected: &'static str,
        got: Vec<usize>,
    },
    #[error("{op}: index {index} out of range for bound {bound}")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        bound: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("softmax_masked: a row has no unmasked entries")]
    EmptyDistribution,
    #[error("backward: root must be a scalar, got {numel} elements")]
    NonScalarRoot { numel: usize },
    #[error("{op}: value count {values} does not match shape {shape:?}")]
    BadValueCount {
        op: &'static str,
        values: usize,
        shape: Vec<usize>,
    },
}

/// Elementwise function applied by [`Tape::apply_unary`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UnaryKind {
    Tanh,
    Sigmoid,
    Relu,
    /// `ln(max(x, LOG_FLOOR))`; the gradient is zero in the floored region.
    Log,
    Neg,
    Scale(f64),
    /// `a * x + b`.
    Affine(f64, f64),
}

/// Handle to a tape node: an arena index plus the node's shape.
#[derive(Debug, Clone)]
pub struct Tensor {
    pub(crate) id: usize,
    pub shape: Vec<usize>,
}

impl Tensor {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Rows/cols view: rank-1 `[n]` counts as one row of `n` columns.
    fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => unreachable!("tensors are rank 1 or 2 by construction"),
        }
    }
}

/// One recorded operation. Input handles are stored as raw ids; any extra
/// data a backward rule needs (indices, masks, static dims) is kept inline.
#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Matmul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Unary { x: usize, kind: UnaryKind },
    SoftmaxMasked { x: usize, mask: Vec<bool> },
    ConcatLast { a: usize, b: usize, cols_a: usize, cols_b: usize },
    ScatterSum { w: usize, slots: Vec<usize> },
    Sum { x: usize },
    Select { x: usize, index: usize },
    GatherRows { src: usize, ids: Vec<usize>, cols: usize },
    BroadcastRows { row: usize, reps: usize, cols: usize },
    SliceLast { x: usize, start: usize, take: usize, cols: usize },
    Reshape { x: usize },
    ExtendZeros { x: usize, old_len: usize },
    ScaleBy { s: usize, x: usize },
    Clamp { x: usize, lo: f64, hi: f64 },
    LayerNorm { x: usize, gain: usize, bias: usize, eps: f64, cols: usize },
    Transpose { x: usize, rows: usize, cols: usize },
}

struct Node {
    values: Vec<f64>,
    op: Op,
    needs_grad: bool,
}

/// Arena of recorded operations plus, after [`Tape::backward`], one gradient
/// buffer per node that participates in the chain to the root.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
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

    /// Snapshot the current node count so a later [`Tape::truncate`] can
    /// drop everything recorded after this point.
    pub fn mark(&self) -> usize {
        self.nodes.len()
    }

    /// Drop all nodes recorded after `mark`. Handles created since then are
    /// invalidated; using one afterwards is a logic error.
    pub fn truncate(&mut self, mark: usize) {
        self.nodes.truncate(mark);
        self.grads.truncate(mark);
    }

    /// Forget gradients from a previous backward sweep.
    pub fn clear_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn value(&self, t: &Tensor) -> &[f64] {
        &self.nodes[t.id].values
    }

    /// Gradient of the last backward root with respect to `t`, if `t`
    /// participated in the graph.
    pub fn grad(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(t.id).and_then(|g| g.as_deref())
    }

    fn push(&mut self, values: Vec<f64>, shape: Vec<usize>, op: Op, needs_grad: bool) -> Tensor {
        let id = self.nodes.len();
        self.nodes.push(Node { values, op, needs_grad });
        self.grads.push(None);
        Tensor { id, shape }
    }

    fn check_finite(&self, t: &Tensor, op: &'static str) -> Result<(), AdError> {
        if self.nodes[t.id].values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(AdError::NonFinite { op })
        }
    }

    /// Record a leaf. `requires_grad` marks trainable inputs; constants pass
    /// `false` and are skipped by the reverse sweep.
    pub fn input(
        &mut self,
        values: Vec<f64>,
        shape: Vec<usize>,
        requires_grad: bool,
    ) -> Result<Tensor, AdError> {
        if shape.is_empty() || shape.len() > 2 {
            return Err(AdError::BadShape {
                op: "input",
                expected: "rank 1 or 2",
                got: shape,
            });
        }
        let numel: usize = shape.iter().product();
        if values.len() != numel {
            return Err(AdError::BadValueCount {
                op: "input",
                values: values.len(),
                shape,
            });
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(AdError::NonFinite { op: "input" });
        }
        Ok(self.push(values, shape, Op::Leaf, requires_grad))
    }

    pub fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        if a.shape != b.shape {
            return Err(AdError::ShapeMismatch {
                op: "add",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let values: Vec<f64> = self.nodes[a.id]
            .values
            .iter()
            .zip(&self.nodes[b.id].values)
            .map(|(x, y)| x + y)
            .collect();
        let ng = self.nodes[a.id].needs_grad || self.nodes[b.id].needs_grad;
        let out = self.push(values, a.shape.clone(), Op::Add { a: a.id, b: b.id }, ng);
        self.check_finite(&out, "add")?;
        Ok(out)
    }

    /// Elementwise (Hadamard) product of same-shape tensors.
    pub fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        if a.shape != b.shape {
            return Err(AdError::ShapeMismatch {
                op: "mul",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let values: Vec<f64> = self.nodes[a.id]
            .values
            .iter()
            .zip(&self.nodes[b.id].values)
            .map(|(x, y)| x * y)
            .collect();
        let ng = self.nodes[a.id].needs_grad || self.nodes[b.id].needs_grad;
        let out = self.push(values, a.shape.clone(), Op::Mul { a: a.id, b: b.id }, ng);
        self.check_finite(&out, "mul")?;
        Ok(out)
    }

    /// `[m,k] x [k,n] -> [m,n]`, both operands rank 2.
    pub fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        if a.shape.len() != 2 || b.shape.len() != 2 || a.shape[1] != b.shape[0] {
            return Err(AdError::ShapeMismatch {
                op: "matmul",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
        let av = &self.nodes[a.id].values;
        let bv = &self.nodes[b.id].values;
        let mut values = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut values[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += aip * brow[j];
                }
            }
        }
        let ng = self.nodes[a.id].needs_grad || self.nodes[b.id].needs_grad;
        let out = self.push(
            values,
            vec![m, n],
            Op::Matmul { a: a.id, b: b.id, m, k, n },
            ng,
        );
        self.check_finite(&out, "matmul")?;
        Ok(out)
    }

    pub fn apply_unary(&mut self, kind: UnaryKind, x: &Tensor) -> Result<Tensor, AdError> {
        let values: Vec<f64> = self.nodes[x.id]
            .values
            .iter()
            .map(|&v| match kind {
                UnaryKind::Tanh => v.tanh(),
                UnaryKind::Sigmoid => 1.0 / (1.0 + (-v).exp()),
                UnaryKind::Relu => v.max(0.0),
                UnaryKind::Log => v.max(LOG_FLOOR).ln(),
                UnaryKind::Neg => -v,
                UnaryKind::Scale(c) => c * v,
                UnaryKind::Affine(a, b) => a * v + b,
            })
            .collect();
        let ng = self.nodes[x.id].needs_grad;
        let out = self.push(values, x.shape.clone(), Op::Unary { x: x.id, kind }, ng);
        self.check_finite(&out, "apply_unary")?;
        Ok(out)
    }

    pub fn tanh(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.apply_unary(UnaryKind::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.apply_unary(UnaryKind::Sigmoid, x)
    }

    pub fn relu(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.apply_unary(UnaryKind::Relu, x)
    }

    /// `ln(max(x, LOG_FLOOR))` elementwise.
    pub fn log(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.apply_unary(UnaryKind::Log, x)
    }

    pub fn neg(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        self.apply_unary(UnaryKind::Neg, x)
    }

    pub fn scale(&mut self, c: f64, x: &Tensor) -> Result<Tensor, AdError> {
        self.apply_unary(UnaryKind::Scale(c), x)
    }

    /// Row-wise masked softmax over the last axis. `mask[j] == false` forces
    /// column `j` to exactly zero mass and excludes it from normalization;
    /// the same mask applies to every row. Numerically stabilized by
    /// subtracting the row max over unmasked entries.
    pub fn softmax_masked(&mut self, x: &Tensor, mask: &[bool]) -> Result<Tensor, AdError> {
        let (rows, cols) = x.rows_cols();
        if mask.len() != cols {
            return Err(AdError::BadShape {
                op: "softmax_masked",
                expected: "mask length equal to column count",
                got: vec![mask.len()],
            });
        }
        if !mask.iter().any(|&m| m) {
            return Err(AdError::EmptyDistribution);
        }
        let xv = &self.nodes[x.id].values;
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mut max = f64::NEG_INFINITY;
            for j in 0..cols {
                if mask[j] && row[j] > max {
                    max = row[j];
                }
            }
            let mut denom = 0.0;
            for j in 0..cols {
                if mask[j] {
                    let e = (row[j] - max).exp();
                    values[r * cols + j] = e;
                    denom += e;
                }
            }
            for j in 0..cols {
                values[r * cols + j] /= denom;
            }
        }
        let ng = self.nodes[x.id].needs_grad;
        let out = self.push(
            values,
            x.shape.clone(),
            Op::SoftmaxMasked { x: x.id, mask: mask.to_vec() },
            ng,
        );
        self.check_finite(&out, "softmax_masked")?;
        Ok(out)
    }

    /// Concatenate along the last axis. Rank-1 inputs concatenate end to
    /// end; rank-2 inputs must agree on the row count.
    pub fn concat_last(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor, AdError> {
        let (ra, ca) = a.rows_cols();
        let (rb, cb) = b.rows_cols();
        if a.shape.len() != b.shape.len() || ra != rb {
            return Err(AdError::ShapeMismatch {
                op: "concat_last",
                lhs: a.shape.clone(),
                rhs: b.shape.clone(),
            });
        }
        let mut values = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            values.extend_from_slice(&self.nodes[a.id].values[r * ca..(r + 1) * ca]);
            values.extend_from_slice(&self.nodes[b.id].values[r * cb..(r + 1) * cb]);
        }
        let shape = if a.shape.len() == 1 {
            vec![ca + cb]
        } else {
            vec![ra, ca + cb]
        };
        let ng = self.nodes[a.id].needs_grad || self.nodes[b.id].needs_grad;
        Ok(self.push(
            values,
            shape,
            Op::ConcatLast { a: a.id, b: b.id, cols_a: ca, cols_b: cb },
            ng,
        ))
    }

    /// Scatter-add a rank-1 weight vector into `n_slots` bins:
    /// `out[slots[i]] += w[i]`. Duplicate slots accumulate, which is what
    /// realizes "sum attention over every source position holding the same
    /// token".
    pub fn scatter_sum(
        &mut self,
        w: &Tensor,
        slots: &[usize],
        n_slots: usize,
    ) -> Result<Tensor, AdError> {
        if w.numel() != slots.len() {
            return Err(AdError::BadShape {
                op: "scatter_sum",
                expected: "one slot per weight",
                got: vec![slots.len()],
            });
        }
        if let Some(&bad) = slots.iter().find(|&&s| s >= n_slots) {
            return Err(AdError::IndexOutOfRange {
                op: "scatter_sum",
                index: bad,
                bound: n_slots,
            });
        }
        let mut values = vec![0.0; n_slots];
        for (i, &slot) in slots.iter().enumerate() {
            values[slot] += self.nodes[w.id].values[i];
        }
        let ng = self.nodes[w.id].needs_grad;
        Ok(self.push(
            values,
            vec![n_slots],
            Op::ScatterSum { w: w.id, slots: slots.to_vec() },
            ng,
        ))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        let total: f64 = self.nodes[x.id].values.iter().sum();
        let ng = self.nodes[x.id].needs_grad;
        let out = self.push(vec![total], vec![1], Op::Sum { x: x.id }, ng);
        self.check_finite(&out, "sum")?;
        Ok(out)
    }

    /// Pick one element of a rank-1 tensor, as a `[1]` tensor.
    pub fn select(&mut self, x: &Tensor, index: usize) -> Result<Tensor, AdError> {
        if x.shape.len() != 1 {
            return Err(AdError::BadShape {
                op: "select",
                expected: "rank 1",
                got: x.shape.clone(),
            });
        }
        if index >= x.shape[0] {
            return Err(AdError::IndexOutOfRange {
                op: "select",
                index,
                bound: x.shape[0],
            });
        }
        let v = self.nodes[x.id].values[index];
        let ng = self.nodes[x.id].needs_grad;
        Ok(self.push(vec![v], vec![1], Op::Select { x: x.id, index }, ng))
    }

    /// Gather rows of a `[R,C]` matrix into `[ids.len(), C]`. Duplicate ids
    /// are allowed; their gradients accumulate into the same source row.
    pub fn gather_rows(&mut self, src: &Tensor, ids: &[usize]) -> Result<Tensor, AdError> {
        if src.shape.len() != 2 {
            return Err(AdError::BadShape {
                op: "gather_rows",
                expected: "rank 2",
                got: src.shape.clone(),
            });
        }
        let (r, c) = (src.shape[0], src.shape[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(AdError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                bound: r,
            });
        }
        let mut values = Vec::with_capacity(ids.len() * c);
        for &i in ids {
            values.extend_from_slice(&self.nodes[src.id].values[i * c..(i + 1) * c]);
        }
        let ng = self.nodes[src.id].needs_grad;
        Ok(self.push(
            values,
            vec![ids.len(), c],
            Op::GatherRows { src: src.id, ids: ids.to_vec(), cols: c },
            ng,
        ))
    }

    /// Repeat a single row (`[C]` or `[1,C]`) into `[reps, C]`.
    pub fn broadcast_rows(&mut self, row: &Tensor, reps: usize) -> Result<Tensor, AdError> {
        let (r, c) = row.rows_cols();
        if r != 1 {
            return Err(AdError::BadShape {
                op: "broadcast_rows",
                expected: "a single row",
                got: row.shape.clone(),
            });
        }
        let mut values = Vec::with_capacity(reps * c);
        for _ in 0..reps {
            values.extend_from_slice(&self.nodes[row.id].values[..c]);
        }
        let ng = self.nodes[row.id].needs_grad;
        Ok(self.push(
            values,
            vec![reps, c],
            Op::BroadcastRows { row: row.id, reps, cols: c },
            ng,
        ))
    }

    /// Slice `take` columns starting at `start` out of the last axis.
    pub fn slice_last(&mut self, x: &Tensor, start: usize, take: usize) -> Result<Tensor, AdError> {
        let (rows, cols) = x.rows_cols();
        if start + take > cols {
            return Err(AdError::IndexOutOfRange {
                op: "slice_last",
                index: start + take,
                bound: cols,
            });
        }
        let xv = &self.nodes[x.id].values;
        let mut values = Vec::with_capacity(rows * take);
        for r in 0..rows {
            values.extend_from_slice(&xv[r * cols + start..r * cols + start + take]);
        }
        let shape = if x.shape.len() == 1 {
            vec![take]
        } else {
            vec![rows, take]
        };
        let ng = self.nodes[x.id].needs_grad;
        Ok(self.push(
            values,
            shape,
            Op::SliceLast { x: x.id, start, take, cols },
            ng,
        ))
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&mut self, x: &Tensor, shape: Vec<usize>) -> Result<Tensor, AdError> {
        let numel: usize = shape.iter().product();
        if shape.is_empty() || shape.len() > 2 || numel != x.numel() {
            return Err(AdError::BadShape {
                op: "reshape",
                expected: "rank 1 or 2 with matching element count",
                got: shape,
            });
        }
        let values = self.nodes[x.id].values.clone();
        let ng = self.nodes[x.id].needs_grad;
        Ok(self.push(values, shape, Op::Reshape { x: x.id }, ng))
    }

    /// Extend a rank-1 tensor with trailing zeros up to `new_len`. This is
    /// how a base-vocabulary distribution is lifted into an extended
    /// vocabulary that also covers source-only tokens.
    pub fn extend_zeros(&mut self, x: &Tensor, new_len: usize) -> Result<Tensor, AdError> {
        if x.shape.len() != 1 || new_len < x.shape[0] {
            return Err(AdError::BadShape {
                op: "extend_zeros",
                expected: "rank 1 and new_len >= len",
                got: x.shape.clone(),
            });
        }
        let old_len = x.shape[0];
        let mut values = self.nodes[x.id].values.clone();
        values.resize(new_len, 0.0);
        let ng = self.nodes[x.id].needs_grad;
        Ok(self.push(
            values,
            vec![new_len],
            Op::ExtendZeros { x: x.id, old_len },
            ng,
        ))
    }

    /// Multiply tensor `x` by a one-element tensor `s` (a differentiable
    /// scalar such as the generation probability).
    pub fn scale_by(&mut self, s: &Tensor, x: &Tensor) -> Result<Tensor, AdError> {
        if s.numel() != 1 {
            return Err(AdError::BadShape {
                op: "scale_by",
                expected: "scalar multiplier",
                got: s.shape.clone(),
            });
        }
        let sv = self.nodes[s.id].values[0];
        let values: Vec<f64> = self.nodes[x.id].values.iter().map(|&v| sv * v).collect();
        let ng = self.nodes[s.id].needs_grad || self.nodes[x.id].needs_grad;
        let out = self.push(
            values,
            x.shape.clone(),
            Op::ScaleBy { s: s.id, x: x.id },
            ng,
        );
        self.check_finite(&out, "scale_by")?;
        Ok(out)
    }

    /// Clamp into `[lo, hi]`. The gradient passes through where the input
    /// already lies inside the range and is zero outside it.
    pub fn clamp(&mut self, x: &Tensor, lo: f64, hi: f64) -> Result<Tensor, AdError> {
        let values: Vec<f64> = self.nodes[x.id]
            .values
            .iter()
            .map(|&v| v.max(lo).min(hi))
            .collect();
        let ng = self.nodes[x.id].needs_grad;
        Ok(self.push(values, x.shape.clone(), Op::Clamp { x: x.id, lo, hi }, ng))
    }

    /// Row-wise layer normalization with learned gain and bias (each `[C]`):
    /// `y = gain * (x - mean) / sqrt(var + eps) + bias`.
    pub fn layer_norm(
        &mut self,
        x: &Tensor,
        gain: &Tensor,
        bias: &Tensor,
        eps: f64,
    ) -> Result<Tensor, AdError> {
        let (rows, cols) = x.rows_cols();
        if gain.numel() != cols || bias.numel() != cols {
            return Err(AdError::ShapeMismatch {
                op: "layer_norm",
                lhs: x.shape.clone(),
                rhs: gain.shape.clone(),
            });
        }
        let xv = &self.nodes[x.id].values;
        let gv = &self.nodes[gain.id].values;
        let bv = &self.nodes[bias.id].values;
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &xv[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..cols {
                values[r * cols + j] = gv[j] * (row[j] - mean) * inv + bv[j];
            }
        }
        let ng = self.nodes[x.id].needs_grad
            || self.nodes[gain.id].needs_grad
            || self.nodes[bias.id].needs_grad;
        let out = self.push(
            values,
            x.shape.clone(),
            Op::LayerNorm { x: x.id, gain: gain.id, bias: bias.id, eps, cols },
            ng,
        );
        self.check_finite(&out, "layer_norm")?;
        Ok(out)
    }

    pub fn transpose(&mut self, x: &Tensor) -> Result<Tensor, AdError> {
        if x.shape.len() != 2 {
            return Err(AdError::BadShape {
                op: "transpose",
                expected: "rank 2",
                got: x.shape.clone(),
            });
        }
        let (rows, cols) = (x.shape[0], x.shape[1]);
        let xv = &self.nodes[x.id].values;
        let mut values = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                values[c * rows + r] = xv[r * cols + c];
            }
        }
        let ng = self.nodes[x.id].needs_grad;
        Ok(self.push(
            values,
            vec![cols, rows],
            Op::Transpose { x: x.id, rows, cols },
            ng,
        ))
    }

    /// Reverse sweep from a scalar root. Seeds the root gradient with 1 and
    /// walks node ids in strictly decreasing order, so the accumulation
    /// order (and therefore every rounding decision) is fixed for a given
    /// graph. Only nodes flagged as needing gradients participate.
    pub fn backward(&mut self, root: &Tensor) -> Result<(), AdError> {
        if root.numel() != 1 {
            return Err(AdError::NonScalarRoot { numel: root.numel() });
        }
        self.clear_grads();
        self.grads[root.id] = Some(vec![1.0]);
        for id in (0..=root.id).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(gout) = self.grads[id].take() else {
                continue;
            };
            self.step_backward(id, &gout);
            self.grads[id] = Some(gout);
        }
        Ok(())
    }

    fn grad_buf(&mut self, id: usize) -> &mut Vec<f64> {
        let numel = self.nodes[id].values.len();
        self.grads[id].get_or_insert_with(|| vec![0.0; numel])
    }

    fn wants(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    fn step_backward(&mut self, id: usize, gout: &[f64]) {
        let op = self.nodes[id].op.clone();
        match op {
            Op::Leaf => {}
            Op::Add { a, b } => {
                if self.wants(a) {
                    let g = self.grad_buf(a);
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                }
                if self.wants(b) {
                    let g = self.grad_buf(b);
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                }
            }
            Op::Mul { a, b } => {
                if self.wants(a) {
                    let bv = self.nodes[b].values.clone();
                    let g = self.grad_buf(a);
                    for i in 0..gout.len() {
                        g[i] += gout[i] * bv[i];
                    }
                }
                if self.wants(b) {
                    let av = self.nodes[a].values.clone();
                    let g = self.grad_buf(b);
                    for i in 0..gout.len() {
                        g[i] += gout[i] * av[i];
                    }
                }
            }
            Op::Matmul { a, b, m, k, n } => {
                if self.wants(a) {
                    // dA = G * B^T
                    let bv = self.nodes[b].values.clone();
                    let g = self.grad_buf(a);
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += gout[i * n + j] * bv[p * n + j];
                            }
                            g[i * k + p] += acc;
                        }
                    }
                }
                if self.wants(b) {
                    // dB = A^T * G
                    let av = self.nodes[a].values.clone();
                    let g = self.grad_buf(b);
                    for p in 0..k {
                        for i in 0..m {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                g[p * n + j] += aip * gout[i * n + j];
                            }
                        }
                    }
                }
            }
            Op::Unary { x, kind } => {
                if self.wants(x) {
                    let xv = self.nodes[x].values.clone();
                    let yv = self.nodes[id].values.clone();
                    let g = self.grad_buf(x);
                    for i in 0..gout.len() {
                        let d = match kind {
                            UnaryKind::Tanh => 1.0 - yv[i] * yv[i],
                            UnaryKind::Sigmoid => yv[i] * (1.0 - yv[i]),
                            UnaryKind::Relu => {
                                if xv[i] > 0.0 {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Log => {
                                if xv[i] >= LOG_FLOOR {
                                    1.0 / xv[i]
                                } else {
                                    0.0
                                }
                            }
                            UnaryKind::Neg => -1.0,
                            UnaryKind::Scale(c) => c,
                            UnaryKind::Affine(a, _) => a,
                        };
                        g[i] += gout[i] * d;
                    }
                }
            }
            Op::SoftmaxMasked { x, mask } => {
                if self.wants(x) {
                    let yv = self.nodes[id].values.clone();
                    let cols = mask.len();
                    let rows = yv.len() / cols;
                    let g = self.grad_buf(x);
                    for r in 0..rows {
                        let y = &yv[r * cols..(r + 1) * cols];
                        let go = &gout[r * cols..(r + 1) * cols];
                        let dot: f64 = (0..cols).map(|j| go[j] * y[j]).sum();
                        for j in 0..cols {
                            g[r * cols + j] += y[j] * (go[j] - dot);
                        }
                    }
                }
            }
            Op::ConcatLast { a, b, cols_a, cols_b } => {
                let cols = cols_a + cols_b;
                let rows = gout.len() / cols;
                if self.wants(a) {
                    let g = self.grad_buf(a);
                    for r in 0..rows {
                        for j in 0..cols_a {
                            g[r * cols_a + j] += gout[r * cols + j];
                        }
                    }
                }
                if self.wants(b) {
                    let g = self.grad_buf(b);
                    for r in 0..rows {
                        for j in 0..cols_b {
                            g[r * cols_b + j] += gout[r * cols + cols_a + j];
                        }
                    }
                }
            }
            Op::ScatterSum { w, slots } => {
                if self.wants(w) {
                    let g = self.grad_buf(w);
                    for (i, &slot) in slots.iter().enumerate() {
                        g[i] += gout[slot];
                    }
                }
            }
            Op::Sum { x } => {
                if self.wants(x) {
                    let g = self.grad_buf(x);
                    for gi in g.iter_mut() {
                        *gi += gout[0];
                    }
                }
            }
            Op::Select { x, index } => {
                if self.wants(x) {
                    self.grad_buf(x)[index] += gout[0];
                }
            }
            Op::GatherRows { src, ids, cols } => {
                if self.wants(src) {
                    let g = self.grad_buf(src);
                    for (i, &row) in ids.iter().enumerate() {
                        for j in 0..cols {
                            g[row * cols + j] += gout[i * cols + j];
                        }
                    }
                }
            }
            Op::BroadcastRows { row, reps, cols } => {
                if self.wants(row) {
                    let g = self.grad_buf(row);
                    for r in 0..reps {
                        for j in 0..cols {
                            g[j] += gout[r * cols + j];
                        }
                    }
                }
            }
            Op::SliceLast { x, start, take, cols } => {
                if self.wants(x) {
                    let rows = gout.len() / take;
                    let g = self.grad_buf(x);
                    for r in 0..rows {
                        for j in 0..take {
                            g[r * cols + start + j] += gout[r * take + j];
                        }
                    }
                }
            }
            Op::Reshape { x } => {
                if self.wants(x) {
                    let g = self.grad_buf(x);
                    for (gi, &go) in g.iter_mut().zip(gout) {
                        *gi += go;
                    }
                }
            }
            Op::ExtendZeros { x, old_len } => {
                if self.wants(x) {
                    let g = self.grad_buf(x);
                    for (gi, &go) in g.iter_mut().zip(&gout[..old_len]) {
                        *gi += go;
                    }
                }
            }
            Op::ScaleBy { s, x } => {
                if self.wants(s) {
                    let xv = self.nodes[x].values.clone();
                    let mut acc = 0.0;
                    for i in 0..gout.len() {
                        acc += gout[i] * xv[i];
                    }
                    self.grad_buf(s)[0] += acc;
                }
                if self.wants(x) {
                    let sv = self.nodes[s].values[0];
                    let g = self.grad_buf(x);
                    for i in 0..gout.len() {
                        g[i] += gout[i] * sv;
                    }
                }
            }
            Op::Clamp { x, lo, hi } => {
                if self.wants(x) {
                    let xv = self.nodes[x].values.clone();
                    let g = self.grad_buf(x);
                    for i in 0..gout.len() {
                        if xv[i] >= lo && xv[i] <= hi {
                            g[i] += gout[i];
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, eps, cols } => {
                let xv = self.nodes[x].values.clone();
                let gv = self.nodes[gain].values.clone();
                let rows = gout.len() / cols;
                for r in 0..rows {
                    let row = &xv[r * cols..(r + 1) * cols];
                    let go = &gout[r * cols..(r + 1) * cols];
                    let mean = row.iter().sum::<f64>() / cols as f64;
                    let var =
                        row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    if self.wants(gain) {
                        let g = self.grad_buf(gain);
                        for j in 0..cols {
                            g[j] += go[j] * (row[j] - mean) * inv;
                        }
                    }
                    if self.wants(bias) {
                        let g = self.grad_buf(bias);
                        for j in 0..cols {
                            g[j] += go[j];
                        }
                    }
                    if self.wants(x) {
                        // dxhat_j = go_j * gain_j; fold the mean and variance
                        // paths into the classic three-term expression.
                        let dxhat: Vec<f64> = (0..cols).map(|j| go[j] * gv[j]).collect();
                        let sum_dxhat: f64 = dxhat.iter().sum();
                        let sum_dxhat_xhat: f64 = (0..cols)
                            .map(|j| dxhat[j] * (row[j] - mean) * inv)
                            .sum();
                        let g = self.grad_buf(x);
                        for j in 0..cols {
                            let xhat = (row[j] - mean) * inv;
                            g[r * cols + j] += inv / cols as f64
                                * (cols as f64 * dxhat[j] - sum_dxhat - xhat * sum_dxhat_xhat);
                        }
                    }
                }
            }
            Op::Transpose { x, rows, cols } => {
                if self.wants(x) {
                    let g = self.grad_buf(x);
                    for r in 0..rows {
                        for c in 0..cols {
                            g[r * cols + c] += gout[c * rows + r];
                        }
                    }
                }
            }
        }
    }
}

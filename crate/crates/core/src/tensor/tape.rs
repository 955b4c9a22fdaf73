//! Reverse-mode tape over dense tensors.

use crate::error::{Error, Result};

use super::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

/// Contiguous row ranges `[start, end)` partitioning an input into groups.
#[derive(Debug, Clone, Default)]
pub struct Groups {
    pub ranges: Vec<(usize, usize)>,
}

impl Groups {
    pub fn new(ranges: Vec<(usize, usize)>) -> Self {
        Self { ranges }
    }

    pub fn len(&self) -> usize {
        self.ranges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranges.is_empty()
    }

    fn validate(&self, op: &'static str, input_rows: usize) -> Result<()> {
        for &(s, e) in &self.ranges {
            if s >= e || e > input_rows {
                return Err(Error::Shape {
                    op,
                    detail: format!("group range [{s}, {e}) invalid for {input_rows} input rows"),
                });
            }
        }
        Ok(())
    }
}

/// Sparse per-output-row weighted combinations of input rows, flattened as
/// `offsets` (length `groups + 1`) into parallel `indices`/`weights`.
#[derive(Debug, Clone)]
pub struct WeightedGroups<R> {
    pub offsets: Vec<usize>,
    pub indices: Vec<usize>,
    pub weights: Vec<R>,
}

impl<R: Real> WeightedGroups<R> {
    pub fn num_groups(&self) -> usize {
        self.offsets.len().saturating_sub(1)
    }

    fn validate(&self, op: &'static str, input_rows: usize) -> Result<()> {
        if self.offsets.is_empty() || *self.offsets.last().unwrap() != self.indices.len() {
            return Err(Error::Shape {
                op,
                detail: "weighted-group offsets do not cover the index list".into(),
            });
        }
        if self.indices.len() != self.weights.len() {
            return Err(Error::Shape {
                op,
                detail: "weighted-group indices and weights differ in length".into(),
            });
        }
        if self.offsets.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::Shape {
                op,
                detail: "weighted-group offsets are not non-decreasing".into(),
            });
        }
        if self.indices.iter().any(|&i| i >= input_rows) {
            return Err(Error::Shape {
                op,
                detail: format!("weighted-group index out of range for {input_rows} input rows"),
            });
        }
        Ok(())
    }
}

#[derive(Debug)]
enum Op<R: Real> {
    Leaf,
    MatMul(ValueId, ValueId),
    BiasAdd(ValueId, ValueId),
    Relu(ValueId),
    Sigmoid(ValueId),
    SoftmaxRows(ValueId),
    LogSoftmaxRows(ValueId),
    Log(ValueId),
    Clamp(ValueId, R, R),
    Add(ValueId, ValueId),
    Sub(ValueId, ValueId),
    Mul(ValueId, ValueId),
    Scale(ValueId, R),
    ConcatCols(Vec<ValueId>),
    GatherRows(ValueId, Vec<usize>),
    /// Grouped row-wise max; per-(group, column) argmax rows recorded for
    /// gradient routing.
    ScatterMaxGroups(ValueId, Groups, Vec<usize>),
    GroupSumRows(ValueId, Groups),
    GroupSoftmax(ValueId, Groups),
    GroupWeightedSum(ValueId, WeightedGroups<R>),
    RowScale(ValueId, ValueId),
    RowDiv(ValueId, ValueId),
    SumAll(ValueId),
    MeanAll(ValueId),
}

struct Node<R: Real> {
    op: Op<R>,
    value: Tensor<R>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`ValueId`].
pub struct Gradients<R: Real> {
    grads: Vec<Option<Tensor<R>>>,
}

impl<R: Real> Gradients<R> {
    /// Gradient of the loss w.r.t. the given value, if it participates in
    /// differentiation.
    pub fn get(&self, id: ValueId) -> Option<&Tensor<R>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: ValueId) -> Option<Tensor<R>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

/// Records primitives in execution order; one forward/backward flow at a time.
pub struct Tape<R: Real = f64> {
    nodes: Vec<Node<R>>,
}

impl<R: Real> Default for Tape<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Tape<R> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Tensor<R> {
        &self.nodes[id.0].value
    }

    /// Registers a tensor as a leaf; it participates in gradients iff
    /// `requires_grad` was set on the tensor.
    pub fn leaf(&mut self, t: Tensor<R>) -> ValueId {
        let needs = t.requires_grad();
        self.push(Op::Leaf, t, needs)
    }

    /// Registers a non-differentiable constant.
    pub fn constant(&mut self, t: Tensor<R>) -> ValueId {
        self.push(Op::Leaf, t, false)
    }

    fn push(&mut self, op: Op<R>, value: Tensor<R>, needs_grad: bool) -> ValueId {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        ValueId(self.nodes.len() - 1)
    }

    fn needs(&self, id: ValueId) -> bool {
        self.nodes[id.0].needs_grad
    }

    fn require_rank2(&self, op: &'static str, id: ValueId) -> Result<(usize, usize)> {
        let t = self.value(id);
        if t.shape().len() != 2 {
            return Err(Error::Shape {
                op,
                detail: format!("expected rank-2 tensor, got shape {:?}", t.shape()),
            });
        }
        Ok((t.shape()[0], t.shape()[1]))
    }

    fn require_same_shape(&self, op: &'static str, a: ValueId, b: ValueId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                detail: format!("operands have shapes {:?} and {:?}", sa, sb),
            });
        }
        Ok(())
    }

    // ---- primitives -------------------------------------------------------

    /// `a (m×k) · b (k×n)`.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        let (m, ka) = self.require_rank2("matmul", a)?;
        let (kb, n) = self.require_rank2("matmul", b)?;
        if ka != kb {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("inner dims differ: {:?} vs {:?}",
                    self.value(a).shape(), self.value(b).shape()),
            });
        }
        let mut out = vec![R::zero(); m * n];
        matmul_nn(self.value(a).data(), m, ka, self.value(b).data(), n, &mut out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::new(vec![m, n], out)?, needs))
    }

    /// Adds a length-`n` bias vector to every row of `x (m×n)`.
    pub fn bias_add(&mut self, x: ValueId, b: ValueId) -> Result<ValueId> {
        let (m, n) = self.require_rank2("bias_add", x)?;
        let bias = self.value(b);
        if bias.shape() != [n] {
            return Err(Error::Shape {
                op: "bias_add",
                detail: format!("bias shape {:?} does not match {} columns", bias.shape(), n),
            });
        }
        let mut out = Vec::with_capacity(m * n);
        let xs = self.value(x).data();
        let bs = self.value(b).data();
        for r in 0..m {
            for c in 0..n {
                out.push(xs[r * n + c] + bs[c]);
            }
        }
        let needs = self.needs(x) || self.needs(b);
        Ok(self.push(Op::BiasAdd(x, b), Tensor::new(vec![m, n], out)?, needs))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let out: Vec<R> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| if v > R::zero() { v } else { R::zero() })
            .collect();
        let t = Tensor {
            shape: self.value(x).shape().to_vec(),
            data: out,
            requires_grad: false,
        };
        let needs = self.needs(x);
        self.push(Op::Relu(x), t, needs)
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let out: Vec<R> = self.value(x).data().iter().map(|&v| sigmoid(v)).collect();
        let t = Tensor {
            shape: self.value(x).shape().to_vec(),
            data: out,
            requires_grad: false,
        };
        let needs = self.needs(x);
        self.push(Op::Sigmoid(x), t, needs)
    }

    /// Row-wise softmax of `x (m×n)`; every output row sums to 1.
    pub fn softmax_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let (m, n) = self.require_rank2("softmax_rows", x)?;
        let xs = self.value(x).data();
        let mut out = vec![R::zero(); m * n];
        for r in 0..m {
            softmax_row(&xs[r * n..(r + 1) * n], &mut out[r * n..(r + 1) * n]);
        }
        let needs = self.needs(x);
        Ok(self.push(Op::SoftmaxRows(x), Tensor::new(vec![m, n], out)?, needs))
    }

    /// Numerically stable row-wise `log(softmax(x))`.
    pub fn log_softmax_rows(&mut self, x: ValueId) -> Result<ValueId> {
        let (m, n) = self.require_rank2("log_softmax_rows", x)?;
        let xs = self.value(x).data();
        let mut out = vec![R::zero(); m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
            let mut sum = R::zero();
            for &v in row {
                sum += (v - max).exp();
            }
            let lse = max + sum.ln();
            for c in 0..n {
                out[r * n + c] = row[c] - lse;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(Op::LogSoftmaxRows(x), Tensor::new(vec![m, n], out)?, needs))
    }

    /// Natural log, elementwise. Inputs must be positive; clamp first if not.
    pub fn log(&mut self, x: ValueId) -> ValueId {
        let out: Vec<R> = self.value(x).data().iter().map(|v| v.ln()).collect();
        let t = Tensor {
            shape: self.value(x).shape().to_vec(),
            data: out,
            requires_grad: false,
        };
        let needs = self.needs(x);
        self.push(Op::Log(x), t, needs)
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was not
    /// clamped.
    pub fn clamp(&mut self, x: ValueId, lo: R, hi: R) -> ValueId {
        let out: Vec<R> = self
            .value(x)
            .data()
            .iter()
            .map(|&v| v.max(lo).min(hi))
            .collect();
        let t = Tensor {
            shape: self.value(x).shape().to_vec(),
            data: out,
            requires_grad: false,
        };
        let needs = self.needs(x);
        self.push(Op::Clamp(x, lo, hi), t, needs)
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.require_same_shape("add", a, b)?;
        let out: Vec<R> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let t = Tensor {
            shape: self.value(a).shape().to_vec(),
            data: out,
            requires_grad: false,
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), t, needs))
    }

    pub fn sub(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.require_same_shape("sub", a, b)?;
        let out: Vec<R> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let t = Tensor {
            shape: self.value(a).shape().to_vec(),
            data: out,
            requires_grad: false,
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), t, needs))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        self.require_same_shape("mul", a, b)?;
        let out: Vec<R> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let t = Tensor {
            shape: self.value(a).shape().to_vec(),
            data: out,
            requires_grad: false,
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), t, needs))
    }

    /// Multiplies by a compile-time constant scalar.
    pub fn scale(&mut self, x: ValueId, c: R) -> ValueId {
        let out: Vec<R> = self.value(x).data().iter().map(|&v| v * c).collect();
        let t = Tensor {
            shape: self.value(x).shape().to_vec(),
            data: out,
            requires_grad: false,
        };
        let needs = self.needs(x);
        self.push(Op::Scale(x, c), t, needs)
    }

    /// Concatenates rank-2 tensors with equal row counts along columns.
    /// Zero-width parts are allowed and contribute nothing.
    pub fn concat_cols(&mut self, parts: &[ValueId]) -> Result<ValueId> {
        if parts.is_empty() {
            return Err(Error::Shape {
                op: "concat_cols",
                detail: "no parts given".into(),
            });
        }
        let (rows, _) = self.require_rank2("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.require_rank2("concat_cols", p)?;
            if r != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    detail: format!("row counts differ: {} vs {}", rows, r),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                let d = self.value(p).data();
                out.extend_from_slice(&d[r * w..(r + 1) * w]);
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::new(vec![rows, total], out)?,
            needs,
        ))
    }

    /// Output row `r` is input row `indices[r]`; rows may repeat.
    pub fn gather_rows(&mut self, x: ValueId, indices: Vec<usize>) -> Result<ValueId> {
        let (n, c) = self.require_rank2("gather_rows", x)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::Shape {
                op: "gather_rows",
                detail: format!("index {} out of range for {} rows", bad, n),
            });
        }
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(indices.len() * c);
        for &i in &indices {
            out.extend_from_slice(&xs[i * c..(i + 1) * c]);
        }
        let rows = indices.len();
        let needs = self.needs(x);
        Ok(self.push(
            Op::GatherRows(x, indices),
            Tensor::new(vec![rows, c], out)?,
            needs,
        ))
    }

    /// Column-wise max over each group of rows. Gradient flows only to the
    /// argmax row of each (group, column); ties go to the lowest row index.
    pub fn scatter_max_groups(&mut self, x: ValueId, groups: Groups) -> Result<ValueId> {
        let (n, c) = self.require_rank2("scatter_max_groups", x)?;
        groups.validate("scatter_max_groups", n)?;
        let xs = self.value(x).data();
        let g = groups.len();
        let mut out = vec![R::zero(); g * c];
        let mut argmax = vec![0usize; g * c];
        for (gi, &(s, e)) in groups.ranges.iter().enumerate() {
            for col in 0..c {
                let mut best = xs[s * c + col];
                let mut best_row = s;
                for r in s + 1..e {
                    let v = xs[r * c + col];
                    if v > best {
                        best = v;
                        best_row = r;
                    }
                }
                out[gi * c + col] = best;
                argmax[gi * c + col] = best_row;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Op::ScatterMaxGroups(x, groups, argmax),
            Tensor::new(vec![g, c], out)?,
            needs,
        ))
    }

    /// Sums rows within each group.
    pub fn group_sum_rows(&mut self, x: ValueId, groups: Groups) -> Result<ValueId> {
        let (n, c) = self.require_rank2("group_sum_rows", x)?;
        groups.validate("group_sum_rows", n)?;
        let xs = self.value(x).data();
        let g = groups.len();
        let mut out = vec![R::zero(); g * c];
        for (gi, &(s, e)) in groups.ranges.iter().enumerate() {
            for r in s..e {
                for col in 0..c {
                    out[gi * c + col] += xs[r * c + col];
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Op::GroupSumRows(x, groups),
            Tensor::new(vec![g, c], out)?,
            needs,
        ))
    }

    /// Softmax over each group of a single-column tensor.
    pub fn group_softmax(&mut self, x: ValueId, groups: Groups) -> Result<ValueId> {
        let (n, c) = self.require_rank2("group_softmax", x)?;
        if c != 1 {
            return Err(Error::Shape {
                op: "group_softmax",
                detail: format!("expected a single column, got {c}"),
            });
        }
        groups.validate("group_softmax", n)?;
        let xs = self.value(x).data();
        let mut out = vec![R::zero(); n];
        for &(s, e) in &groups.ranges {
            softmax_row(&xs[s..e], &mut out[s..e]);
        }
        let needs = self.needs(x);
        Ok(self.push(
            Op::GroupSoftmax(x, groups),
            Tensor::new(vec![n, 1], out)?,
            needs,
        ))
    }

    /// Output row `g` is the fixed-weight combination of input rows given by
    /// the map. Weights are constants of the graph; gradients flow through
    /// the combined values only.
    pub fn group_weighted_sum(&mut self, x: ValueId, map: WeightedGroups<R>) -> Result<ValueId> {
        let (n, c) = self.require_rank2("group_weighted_sum", x)?;
        map.validate("group_weighted_sum", n)?;
        let xs = self.value(x).data();
        let g = map.num_groups();
        let mut out = vec![R::zero(); g * c];
        for gi in 0..g {
            for t in map.offsets[gi]..map.offsets[gi + 1] {
                let (row, w) = (map.indices[t], map.weights[t]);
                for col in 0..c {
                    out[gi * c + col] += xs[row * c + col] * w;
                }
            }
        }
        let needs = self.needs(x);
        Ok(self.push(
            Op::GroupWeightedSum(x, map),
            Tensor::new(vec![g, c], out)?,
            needs,
        ))
    }

    /// Scales each row of `x (n×c)` by the matching entry of `s (n×1)`.
    pub fn row_scale(&mut self, x: ValueId, s: ValueId) -> Result<ValueId> {
        let (n, c) = self.require_rank2("row_scale", x)?;
        let (ns, cs) = self.require_rank2("row_scale", s)?;
        if ns != n || cs != 1 {
            return Err(Error::Shape {
                op: "row_scale",
                detail: format!("scale shape {:?} does not match {} rows", self.value(s).shape(), n),
            });
        }
        let xs = self.value(x).data();
        let ss = self.value(s).data();
        let mut out = Vec::with_capacity(n * c);
        for r in 0..n {
            for col in 0..c {
                out.push(xs[r * c + col] * ss[r]);
            }
        }
        let needs = self.needs(x) || self.needs(s);
        Ok(self.push(Op::RowScale(x, s), Tensor::new(vec![n, c], out)?, needs))
    }

    /// Divides each row of `x (n×c)` by the matching entry of `d (n×1)`.
    pub fn row_div(&mut self, x: ValueId, d: ValueId) -> Result<ValueId> {
        let (n, c) = self.require_rank2("row_div", x)?;
        let (nd, cd) = self.require_rank2("row_div", d)?;
        if nd != n || cd != 1 {
            return Err(Error::Shape {
                op: "row_div",
                detail: format!("divisor shape {:?} does not match {} rows", self.value(d).shape(), n),
            });
        }
        let xs = self.value(x).data();
        let ds = self.value(d).data();
        let mut out = Vec::with_capacity(n * c);
        for r in 0..n {
            for col in 0..c {
                out.push(xs[r * c + col] / ds[r]);
            }
        }
        let needs = self.needs(x) || self.needs(d);
        Ok(self.push(Op::RowDiv(x, d), Tensor::new(vec![n, c], out)?, needs))
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let mut sum = R::zero();
        for &v in self.value(x).data() {
            sum += v;
        }
        let needs = self.needs(x);
        self.push(Op::SumAll(x), Tensor::scalar(sum), needs)
    }

    /// Mean of all entries, as a `[1]` tensor.
    pub fn mean_all(&mut self, x: ValueId) -> ValueId {
        let len = self.value(x).len();
        let mut sum = R::zero();
        for &v in self.value(x).data() {
            sum += v;
        }
        let mean = sum / R::from_f64(len as f64);
        let needs = self.needs(x);
        self.push(Op::MeanAll(x), Tensor::scalar(mean), needs)
    }

    // ---- backward ---------------------------------------------------------

    /// Reverse pass from a scalar loss. Returns gradients for every node on a
    /// differentiation path; leaves registered with `requires_grad` are the
    /// usual query targets.
    pub fn backward(&self, loss: ValueId) -> Result<Gradients<R>> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", lt.shape()),
            });
        }
        let mut grads: Vec<Option<Vec<R>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![R::one()]);

        for idx in (0..self.nodes.len()).rev() {
            if !self.nodes[idx].needs_grad {
                continue;
            }
            let Some(dout) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &dout, &mut grads);
            grads[idx] = Some(dout);
        }

        let tensors = grads
            .into_iter()
            .enumerate()
            .map(|(i, g)| {
                g.map(|data| Tensor {
                    shape: self.nodes[i].value.shape().to_vec(),
                    data,
                    requires_grad: false,
                })
            })
            .collect();
        Ok(Gradients { grads: tensors })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<R>>], id: ValueId, contrib: &[R]) {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let slot = &mut grads[id.0];
        match slot {
            Some(g) => {
                for (gv, &cv) in g.iter_mut().zip(contrib) {
                    *gv += cv;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    fn accumulate_with<F>(&self, grads: &mut [Option<Vec<R>>], id: ValueId, f: F)
    where
        F: FnOnce(&mut [R]),
    {
        if !self.nodes[id.0].needs_grad {
            return;
        }
        let len = self.nodes[id.0].value.len();
        let slot = &mut grads[id.0];
        if slot.is_none() {
            *slot = Some(vec![R::zero(); len]);
        }
        f(slot.as_mut().unwrap());
    }

    fn backprop_node(&self, idx: usize, dout: &[R], grads: &mut [Option<Vec<R>>]) {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = {
                    let s = self.value(*a).shape();
                    (s[0], s[1])
                };
                let n = self.value(*b).shape()[1];
                self.accumulate_with(grads, *a, |ga| {
                    matmul_nt(dout, m, n, self.value(*b).data(), k, ga);
                });
                self.accumulate_with(grads, *b, |gb| {
                    matmul_tn(self.value(*a).data(), m, k, dout, n, gb);
                });
            }
            Op::BiasAdd(x, b) => {
                self.accumulate(grads, *x, dout);
                let n = self.value(*b).len();
                let m = dout.len() / n;
                self.accumulate_with(grads, *b, |gb| {
                    for r in 0..m {
                        for c in 0..n {
                            gb[c] += dout[r * n + c];
                        }
                    }
                });
            }
            Op::Relu(x) => {
                let xs = self.value(*x).data();
                self.accumulate_with(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        if xs[i] > R::zero() {
                            gx[i] += dout[i];
                        }
                    }
                });
            }
            Op::Sigmoid(x) => {
                let ys = node.value.data();
                self.accumulate_with(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += dout[i] * ys[i] * (R::one() - ys[i]);
                    }
                });
            }
            Op::SoftmaxRows(x) => {
                let ys = node.value.data();
                let n = node.value.cols();
                let m = node.value.rows();
                self.accumulate_with(grads, *x, |gx| {
                    for r in 0..m {
                        let row = r * n;
                        let mut dot = R::zero();
                        for c in 0..n {
                            dot += dout[row + c] * ys[row + c];
                        }
                        for c in 0..n {
                            gx[row + c] += ys[row + c] * (dout[row + c] - dot);
                        }
                    }
                });
            }
            Op::LogSoftmaxRows(x) => {
                let ys = node.value.data();
                let n = node.value.cols();
                let m = node.value.rows();
                self.accumulate_with(grads, *x, |gx| {
                    for r in 0..m {
                        let row = r * n;
                        let mut sum = R::zero();
                        for c in 0..n {
                            sum += dout[row + c];
                        }
                        for c in 0..n {
                            gx[row + c] += dout[row + c] - ys[row + c].exp() * sum;
                        }
                    }
                });
            }
            Op::Log(x) => {
                let xs = self.value(*x).data();
                self.accumulate_with(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += dout[i] / xs[i];
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let xs = self.value(*x).data();
                self.accumulate_with(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        if xs[i] >= *lo && xs[i] <= *hi {
                            gx[i] += dout[i];
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, dout);
                self.accumulate(grads, *b, dout);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, dout);
                self.accumulate_with(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] -= dout[i];
                    }
                });
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate_with(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += dout[i] * bv[i];
                    }
                });
                self.accumulate_with(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += dout[i] * av[i];
                    }
                });
            }
            Op::Scale(x, c) => {
                self.accumulate_with(grads, *x, |gx| {
                    for i in 0..gx.len() {
                        gx[i] += dout[i] * *c;
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let rows = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accumulate_with(grads, p, |gp| {
                        for r in 0..rows {
                            for c in 0..w {
                                gp[r * w + c] += dout[r * total + offset + c];
                            }
                        }
                    });
                    offset += w;
                }
            }
            Op::GatherRows(x, indices) => {
                let c = self.value(*x).cols();
                self.accumulate_with(grads, *x, |gx| {
                    for (r, &i) in indices.iter().enumerate() {
                        for col in 0..c {
                            gx[i * c + col] += dout[r * c + col];
                        }
                    }
                });
            }
            Op::ScatterMaxGroups(x, groups, argmax) => {
                let c = node.value.cols();
                let g = groups.len();
                self.accumulate_with(grads, *x, |gx| {
                    for gi in 0..g {
                        for col in 0..c {
                            let row = argmax[gi * c + col];
                            gx[row * c + col] += dout[gi * c + col];
                        }
                    }
                });
            }
            Op::GroupSumRows(x, groups) => {
                let c = node.value.cols();
                self.accumulate_with(grads, *x, |gx| {
                    for (gi, &(s, e)) in groups.ranges.iter().enumerate() {
                        for r in s..e {
                            for col in 0..c {
                                gx[r * c + col] += dout[gi * c + col];
                            }
                        }
                    }
                });
            }
            Op::GroupSoftmax(x, groups) => {
                let ys = node.value.data();
                self.accumulate_with(grads, *x, |gx| {
                    for &(s, e) in &groups.ranges {
                        let mut dot = R::zero();
                        for i in s..e {
                            dot += dout[i] * ys[i];
                        }
                        for i in s..e {
                            gx[i] += ys[i] * (dout[i] - dot);
                        }
                    }
                });
            }
            Op::GroupWeightedSum(x, map) => {
                let c = node.value.cols();
                self.accumulate_with(grads, *x, |gx| {
                    for gi in 0..map.num_groups() {
                        for t in map.offsets[gi]..map.offsets[gi + 1] {
                            let (row, w) = (map.indices[t], map.weights[t]);
                            for col in 0..c {
                                gx[row * c + col] += dout[gi * c + col] * w;
                            }
                        }
                    }
                });
            }
            Op::RowScale(x, s) => {
                let xs = self.value(*x).data();
                let ss = self.value(*s).data();
                let c = node.value.cols();
                let n = node.value.rows();
                self.accumulate_with(grads, *x, |gx| {
                    for r in 0..n {
                        for col in 0..c {
                            gx[r * c + col] += dout[r * c + col] * ss[r];
                        }
                    }
                });
                self.accumulate_with(grads, *s, |gs| {
                    for r in 0..n {
                        let mut acc = R::zero();
                        for col in 0..c {
                            acc += dout[r * c + col] * xs[r * c + col];
                        }
                        gs[r] += acc;
                    }
                });
            }
            Op::RowDiv(x, d) => {
                let xs = self.value(*x).data();
                let ds = self.value(*d).data();
                let c = node.value.cols();
                let n = node.value.rows();
                self.accumulate_with(grads, *x, |gx| {
                    for r in 0..n {
                        for col in 0..c {
                            gx[r * c + col] += dout[r * c + col] / ds[r];
                        }
                    }
                });
                self.accumulate_with(grads, *d, |gd| {
                    for r in 0..n {
                        let mut acc = R::zero();
                        for col in 0..c {
                            acc += dout[r * c + col] * xs[r * c + col];
                        }
                        gd[r] -= acc / (ds[r] * ds[r]);
                    }
                });
            }
            Op::SumAll(x) => {
                let d = dout[0];
                self.accumulate_with(grads, *x, |gx| {
                    for g in gx.iter_mut() {
                        *g += d;
                    }
                });
            }
            Op::MeanAll(x) => {
                let len = self.value(*x).len();
                let d = dout[0] / R::from_f64(len as f64);
                self.accumulate_with(grads, *x, |gx| {
                    for g in gx.iter_mut() {
                        *g += d;
                    }
                });
            }
        }
    }
}

#[inline]
fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

fn softmax_row<R: Real>(row: &[R], out: &mut [R]) {
    let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
    let mut sum = R::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o = *o / sum;
    }
}

/// `out += a (m×k) · b (k×n)`, row-major.
fn matmul_nn<R: Real>(a: &[R], m: usize, k: usize, b: &[R], n: usize, out: &mut [R]) {
    for i in 0..m {
        for p in 0..k {
            let coef = a[i * k + p];
            if coef == R::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += coef * brow[j];
            }
        }
    }
}

/// `out += a (m×n) · bᵀ` where `b` is `(k×n)` row-major; result is `(m×k)`.
fn matmul_nt<R: Real>(a: &[R], m: usize, n: usize, b: &[R], k: usize, out: &mut [R]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = R::zero();
            for j in 0..n {
                acc += arow[j] * brow[j];
            }
            out[i * k + p] += acc;
        }
    }
}

/// `out += aᵀ · b` where `a` is `(m×k)` and `b` is `(m×n)`; result is `(k×n)`.
fn matmul_tn<R: Real>(a: &[R], m: usize, k: usize, b: &[R], n: usize, out: &mut [R]) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let coef = a[i * k + p];
            if coef == R::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += coef * brow[j];
            }
        }
    }
}

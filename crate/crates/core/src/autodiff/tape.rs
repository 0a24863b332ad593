use std::sync::atomic::{AtomicUsize, Ordering};

use super::gemm::{gemm, Layout};
use super::numerics::{gelu, gelu_derivative, log_sum_exp, sigmoid, softplus};
use super::tensor::Tensor;
use super::TensorError;

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(0);

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    MatMulT { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddRow { a: usize, row: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    Sigmoid { a: usize },
    Gelu { a: usize },
    SoftmaxRows { a: usize },
    CausalSoftmax { a: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, normalized: Vec<f64>, rstd: Vec<f64> },
    GatherRows { table: usize, ids: Vec<usize> },
    SliceCols { a: usize, start: usize },
    ConcatCols { parts: Vec<usize> },
    MeanRows { a: usize, selected: Vec<usize> },
    Reshape { a: usize },
    Sum { a: usize },
    BceWithLogits { z: usize, target: f64 },
    CrossEntropyRows { logits: usize, targets: Vec<usize>, probs: Vec<f64> },
    WeightedSum { terms: Vec<(usize, f64)> },
    MeanScalars { terms: Vec<usize> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Summary of one reverse sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BackwardStats {
    /// Recorded operations (non-leaf nodes) replayed in reverse.
    pub visited: usize,
}

/// Define-by-run record of tensor operations supporting one reverse sweep.
#[derive(Debug)]
pub struct Tape {
    id: usize,
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records an input tensor; its `requires_grad` flag is kept.
    pub fn leaf(&mut self, mut value: Tensor) -> Var {
        value.clear_grad();
        self.push(value, Op::Leaf)
    }

    /// Records a trainable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(true))
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value.with_requires_grad(false))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[self.index(v)].value
    }

    /// Gradient of the last backward sweep; `None` before backward or for
    /// tensors that do not require gradients.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.value(v).grad()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Vec<f64>> {
        let i = self.index(v);
        self.nodes[i].value.take_grad()
    }

    fn index(&self, v: Var) -> usize {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        v.index
    }

    fn check(&self, v: Var) -> Result<usize, TensorError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.index)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        let index = self.nodes.len();
        self.nodes.push(Node { value, op });
        Var {
            tape: self.id,
            index,
        }
    }

    fn tracked(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].value.requires_grad())
    }

    fn push_result(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op, inputs: &[usize]) -> Var {
        let requires_grad = self.tracked(inputs);
        let value = Tensor::new(shape, data)
            .expect("op produced consistent shape")
            .with_requires_grad(requires_grad);
        self.push(value, op)
    }

    fn dims2(&self, i: usize) -> Result<(usize, usize), TensorError> {
        self.nodes[i].value.dims2()
    }

    // ----------------------------------------------------------------- ops

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.dims2(ai)?;
        let (k2, n) = self.dims2(bi)?;
        if k != k2 {
            return Err(self.mismatch("matmul", ai, bi));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.nodes[ai].value.data(),
            Layout::Normal,
            self.nodes[bi].value.data(),
            Layout::Normal,
            &mut out,
            false,
        );
        Ok(self.push_result(vec![m, n], out, Op::MatMul { a: ai, b: bi }, &[ai, bi]))
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (m, k) = self.dims2(ai)?;
        let (n, k2) = self.dims2(bi)?;
        if k != k2 {
            return Err(self.mismatch("matmul_t", ai, bi));
        }
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.nodes[ai].value.data(),
            Layout::Normal,
            self.nodes[bi].value.data(),
            Layout::Transposed,
            &mut out,
            false,
        );
        Ok(self.push_result(vec![m, n], out, Op::MatMulT { a: ai, b: bi }, &[ai, bi]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        if self.nodes[ai].value.shape() != self.nodes[bi].value.shape() {
            return Err(self.mismatch("add", ai, bi));
        }
        let data = zip_map(&self.nodes[ai].value, &self.nodes[bi].value, |x, y| x + y);
        let shape = self.nodes[ai].value.shape().to_vec();
        Ok(self.push_result(shape, data, Op::Add { a: ai, b: bi }, &[ai, bi]))
    }

    /// Adds a length-`c` vector to every row of `a[r×c]`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let (ai, ri) = (self.check(a)?, self.check(row)?);
        let (_, c) = self.dims2(ai)?;
        if self.nodes[ri].value.numel() != c {
            return Err(self.mismatch("add_row", ai, ri));
        }
        let r = &self.nodes[ri].value;
        let data = self.nodes[ai]
            .value
            .data()
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(r.data()).map(|(x, b)| x + b))
            .collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        Ok(self.push_result(shape, data, Op::AddRow { a: ai, row: ri }, &[ai, ri]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        if self.nodes[ai].value.shape() != self.nodes[bi].value.shape() {
            return Err(self.mismatch("mul", ai, bi));
        }
        let data = zip_map(&self.nodes[ai].value, &self.nodes[bi].value, |x, y| x * y);
        let shape = self.nodes[ai].value.shape().to_vec();
        Ok(self.push_result(shape, data, Op::Mul { a: ai, b: bi }, &[ai, bi]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, TensorError> {
        let ai = self.check(a)?;
        let data = self.nodes[ai].value.data().iter().map(|x| x * factor).collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        Ok(self.push_result(shape, data, Op::Scale { a: ai, factor }, &[ai]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, TensorError> {
        let ai = self.check(a)?;
        let data = self.nodes[ai].value.data().iter().map(|&x| sigmoid(x)).collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        Ok(self.push_result(shape, data, Op::Sigmoid { a: ai }, &[ai]))
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var, TensorError> {
        let ai = self.check(a)?;
        let data = self.nodes[ai].value.data().iter().map(|&x| gelu(x)).collect();
        let shape = self.nodes[ai].value.shape().to_vec();
        Ok(self.push_result(shape, data, Op::Gelu { a: ai }, &[ai]))
    }

    /// Row-wise softmax with per-row max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var, TensorError> {
        let ai = self.check(a)?;
        let (r, c) = self.dims2(ai)?;
        if c == 0 {
            return Err(TensorError::EmptyAxis { op: "softmax_rows" });
        }
        let mut out = self.nodes[ai].value.data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        Ok(self.push_result(vec![r, c], out, Op::SoftmaxRows { a: ai }, &[ai]))
    }

    /// Softmax of a square score matrix where row `i` only sees columns `0..=i`;
    /// masked entries are exactly zero.
    pub fn causal_softmax(&mut self, a: Var) -> Result<Var, TensorError> {
        let ai = self.check(a)?;
        let (r, c) = self.dims2(ai)?;
        if r != c {
            return Err(TensorError::NotSquare {
                shape: vec![r, c],
            });
        }
        let mut out = self.nodes[ai].value.data().to_vec();
        for (i, row) in out.chunks_mut(c).enumerate() {
            let (visible, masked) = row.split_at_mut(i + 1);
            softmax_in_place(visible);
            masked.iter_mut().for_each(|v| *v = 0.0);
        }
        Ok(self.push_result(vec![r, c], out, Op::CausalSoftmax { a: ai }, &[ai]))
    }

    /// Row-wise layer normalisation with learned gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let (xi, gi, bi) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let (r, c) = self.dims2(xi)?;
        if self.nodes[gi].value.numel() != c {
            return Err(self.mismatch("layer_norm", xi, gi));
        }
        if self.nodes[bi].value.numel() != c {
            return Err(self.mismatch("layer_norm", xi, bi));
        }
        let xs = self.nodes[xi].value.data();
        let g = self.nodes[gi].value.data();
        let b = self.nodes[bi].value.data();
        let mut normalized = vec![0.0; r * c];
        let mut rstd = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd[i] = s;
            for j in 0..c {
                let h = (row[j] - mean) * s;
                normalized[i * c + j] = h;
                out[i * c + j] = h * g[j] + b[j];
            }
        }
        Ok(self.push_result(
            vec![r, c],
            out,
            Op::LayerNorm {
                x: xi,
                gain: gi,
                bias: bi,
                normalized,
                rstd,
            },
            &[xi, gi, bi],
        ))
    }

    /// Selects rows of `table[V×d]` by index, giving `[ids.len()×d]`.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let ti = self.check(table)?;
        let (v, d) = self.dims2(ti)?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= v) {
            return Err(TensorError::IndexOutOfRange { index: bad, len: v });
        }
        let t = &self.nodes[ti].value;
        let data = ids.iter().flat_map(|&id| t.row(id).iter().copied()).collect();
        Ok(self.push_result(
            vec![ids.len(), d],
            data,
            Op::GatherRows {
                table: ti,
                ids: ids.to_vec(),
            },
            &[ti],
        ))
    }

    /// Columns `start..start+width` of `a[r×c]`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var, TensorError> {
        let ai = self.check(a)?;
        let (r, c) = self.dims2(ai)?;
        if start + width > c {
            return Err(TensorError::IndexOutOfRange {
                index: start + width,
                len: c,
            });
        }
        let src = self.nodes[ai].value.data();
        let data = (0..r)
            .flat_map(|i| src[i * c + start..i * c + start + width].iter().copied())
            .collect();
        Ok(self.push_result(vec![r, width], data, Op::SliceCols { a: ai, start }, &[ai]))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let idx = parts
            .iter()
            .map(|&p| self.check(p))
            .collect::<Result<Vec<_>, _>>()?;
        let first = *idx.first().ok_or(TensorError::EmptyAxis { op: "concat_cols" })?;
        let (r, _) = self.dims2(first)?;
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (ri, ci) = self.dims2(i)?;
            if ri != r {
                return Err(self.mismatch("concat_cols", first, i));
            }
            widths.push(ci);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for row in 0..r {
            for (&i, &w) in idx.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[i].value.data()[row * w..(row + 1) * w]);
            }
        }
        Ok(self.push_result(vec![r, total], data, Op::ConcatCols { parts: idx.clone() }, &idx))
    }

    /// Mean of the rows of `x[n×d]` whose mask entry is 1, giving `[d]`.
    pub fn mean_rows(&mut self, x: Var, mask: &[f64]) -> Result<Var, TensorError> {
        let xi = self.check(x)?;
        let (n, d) = self.dims2(xi)?;
        if mask.len() != n {
            return Err(TensorError::MaskLength {
                rows: n,
                mask: mask.len(),
            });
        }
        let mut selected = Vec::new();
        for (i, &m) in mask.iter().enumerate() {
            if m == 1.0 {
                selected.push(i);
            } else if m != 0.0 {
                return Err(TensorError::MaskValue { value: m });
            }
        }
        if selected.is_empty() {
            return Err(TensorError::EmptyPool);
        }
        let src = &self.nodes[xi].value;
        let mut out = vec![0.0; d];
        for &i in &selected {
            for (o, v) in out.iter_mut().zip(src.row(i)) {
                *o += v;
            }
        }
        let count = selected.len() as f64;
        out.iter_mut().for_each(|o| *o /= count);
        Ok(self.push_result(vec![d], out, Op::MeanRows { a: xi, selected }, &[xi]))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var, TensorError> {
        let ai = self.check(a)?;
        let n: usize = shape.iter().product();
        if n != self.nodes[ai].value.numel() {
            return Err(TensorError::DataLength {
                shape,
                len: self.nodes[ai].value.numel(),
            });
        }
        let data = self.nodes[ai].value.data().to_vec();
        Ok(self.push_result(shape, data, Op::Reshape { a: ai }, &[ai]))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var, TensorError> {
        let ai = self.check(a)?;
        let s = self.nodes[ai].value.data().iter().sum();
        Ok(self.push_result(vec![], vec![s], Op::Sum { a: ai }, &[ai]))
    }

    /// Binary cross-entropy of `sigmoid(z)` against a 0/1 target, computed
    /// from the logit.
    pub fn bce_with_logits(&mut self, z: Var, target: f64) -> Result<Var, TensorError> {
        let zi = self.check(z)?;
        let logit = self.nodes[zi].value.item()?;
        let loss = softplus(logit) - target * logit;
        Ok(self.push_result(vec![], vec![loss], Op::BceWithLogits { z: zi, target }, &[zi]))
    }

    /// Mean over rows of `-log softmax(logits[i])[targets[i]]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, targets: &[usize]) -> Result<Var, TensorError> {
        let li = self.check(logits)?;
        let (r, c) = self.dims2(li)?;
        if targets.len() != r {
            return Err(TensorError::MaskLength {
                rows: r,
                mask: targets.len(),
            });
        }
        if r == 0 {
            return Err(TensorError::EmptyAxis {
                op: "cross_entropy_rows",
            });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(TensorError::IndexOutOfRange { index: bad, len: c });
        }
        let src = self.nodes[li].value.data();
        let mut probs = vec![0.0; r * c];
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = &src[i * c..(i + 1) * c];
            let lse = log_sum_exp(row);
            total += lse - row[t];
            for (p, v) in probs[i * c..(i + 1) * c].iter_mut().zip(row) {
                *p = (v - lse).exp();
            }
        }
        let loss = total / r as f64;
        Ok(self.push_result(
            vec![],
            vec![loss],
            Op::CrossEntropyRows {
                logits: li,
                targets: targets.to_vec(),
                probs,
            },
            &[li],
        ))
    }

    /// `Σ cᵢ·xᵢ` over scalar inputs, accumulated left to right.
    pub fn weighted_sum(&mut self, terms: &[(Var, f64)]) -> Result<Var, TensorError> {
        let mut idx = Vec::with_capacity(terms.len());
        let mut acc: Option<f64> = None;
        for &(v, c) in terms {
            let i = self.check(v)?;
            let x = self.nodes[i].value.item()?;
            acc = Some(match acc {
                None => c * x,
                Some(a) => a + c * x,
            });
            idx.push((i, c));
        }
        let inputs: Vec<usize> = idx.iter().map(|&(i, _)| i).collect();
        Ok(self.push_result(
            vec![],
            vec![acc.unwrap_or(0.0)],
            Op::WeightedSum { terms: idx },
            &inputs,
        ))
    }

    /// Arithmetic mean of scalar inputs (sum, then divide).
    pub fn mean_scalars(&mut self, terms: &[Var]) -> Result<Var, TensorError> {
        if terms.is_empty() {
            return Err(TensorError::EmptyAxis { op: "mean_scalars" });
        }
        let idx = terms
            .iter()
            .map(|&v| self.check(v))
            .collect::<Result<Vec<_>, _>>()?;
        let mut sum = 0.0;
        for &i in &idx {
            sum += self.nodes[i].value.item()?;
        }
        let mean = sum / idx.len() as f64;
        Ok(self.push_result(vec![], vec![mean], Op::MeanScalars { terms: idx.clone() }, &idx))
    }

    fn mismatch(&self, op: &'static str, a: usize, b: usize) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.nodes[a].value.shape().to_vec(),
            right: self.nodes[b].value.shape().to_vec(),
        }
    }

    // ------------------------------------------------------------ backward

    /// Reverse sweep from a scalar `loss`. Every tensor on the tape that
    /// requires a gradient ends up with a populated (possibly zero) buffer.
    pub fn backward(&mut self, loss: Var) -> Result<BackwardStats, TensorError> {
        let li = self.check(loss)?;
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if !self.nodes[li].value.is_scalar() {
            return Err(TensorError::NotScalar {
                shape: self.nodes[li].value.shape().to_vec(),
            });
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = self
            .nodes
            .iter()
            .map(|n| n.value.requires_grad().then(|| vec![0.0; n.value.numel()]))
            .collect();
        if let Some(g) = grads[li].as_mut() {
            g[0] = 1.0;
        }

        let mut visited = 0;
        for i in (0..=li).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            visited += 1;
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_deref() else {
                continue;
            };
            self.backprop_node(i, g, lower);
        }

        for (node, g) in self.nodes.iter_mut().zip(grads) {
            if let Some(g) = g {
                node.value.set_grad(g).expect("gradient buffer matches data");
            }
        }
        Ok(BackwardStats { visited })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let val = |j: usize| &self.nodes[j].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (m, k) = val(*a).dims2().unwrap();
                let n = val(*b).dims2().unwrap().1;
                if let Some(ga) = grads[*a].as_deref_mut() {
                    gemm(m, n, k, g, Layout::Normal, val(*b).data(), Layout::Transposed, ga, true);
                }
                if let Some(gb) = grads[*b].as_deref_mut() {
                    gemm(k, m, n, val(*a).data(), Layout::Transposed, g, Layout::Normal, gb, true);
                }
            }
            Op::MatMulT { a, b } => {
                let (m, k) = val(*a).dims2().unwrap();
                let n = val(*b).dims2().unwrap().0;
                if let Some(ga) = grads[*a].as_deref_mut() {
                    gemm(m, n, k, g, Layout::Normal, val(*b).data(), Layout::Normal, ga, true);
                }
                if let Some(gb) = grads[*b].as_deref_mut() {
                    gemm(n, m, k, g, Layout::Transposed, val(*a).data(), Layout::Normal, gb, true);
                }
            }
            Op::Add { a, b } => {
                for j in [*a, *b] {
                    if let Some(gj) = grads[j].as_deref_mut() {
                        axpy(gj, g, 1.0);
                    }
                }
            }
            Op::AddRow { a, row } => {
                if let Some(ga) = grads[*a].as_deref_mut() {
                    axpy(ga, g, 1.0);
                }
                if let Some(gr) = grads[*row].as_deref_mut() {
                    let c = gr.len();
                    for chunk in g.chunks(c) {
                        axpy(gr, chunk, 1.0);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (x, y) = (val(*a).data(), val(*b).data());
                if let Some(ga) = grads[*a].as_deref_mut() {
                    for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                        *o += gi * yi;
                    }
                }
                if let Some(gb) = grads[*b].as_deref_mut() {
                    for ((o, gi), xi) in gb.iter_mut().zip(g).zip(x) {
                        *o += gi * xi;
                    }
                }
            }
            Op::Scale { a, factor } => {
                if let Some(ga) = grads[*a].as_deref_mut() {
                    axpy(ga, g, *factor);
                }
            }
            Op::Sigmoid { a } => {
                if let Some(ga) = grads[*a].as_deref_mut() {
                    for ((o, gi), s) in ga.iter_mut().zip(g).zip(node.value.data()) {
                        *o += gi * s * (1.0 - s);
                    }
                }
            }
            Op::Gelu { a } => {
                if let Some(ga) = grads[*a].as_deref_mut() {
                    for ((o, gi), x) in ga.iter_mut().zip(g).zip(val(*a).data()) {
                        *o += gi * gelu_derivative(*x);
                    }
                }
            }
            Op::SoftmaxRows { a } | Op::CausalSoftmax { a } => {
                if let Some(ga) = grads[*a].as_deref_mut() {
                    let c = node.value.dims2().unwrap().1;
                    for ((o, gi), y) in ga
                        .chunks_mut(c)
                        .zip(g.chunks(c))
                        .zip(node.value.data().chunks(c))
                    {
                        let dot: f64 = gi.iter().zip(y).map(|(p, q)| p * q).sum();
                        for ((oj, gj), yj) in o.iter_mut().zip(gi).zip(y) {
                            *oj += yj * (gj - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normalized,
                rstd,
            } => {
                let c = node.value.dims2().unwrap().1;
                let gv = val(*gain).data();
                if let Some(gx) = grads[*x].as_deref_mut() {
                    let mut dh = vec![0.0; c];
                    for (row, s) in rstd.iter().enumerate() {
                        let gr = &g[row * c..(row + 1) * c];
                        let h = &normalized[row * c..(row + 1) * c];
                        for j in 0..c {
                            dh[j] = gr[j] * gv[j];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / c as f64;
                        let mean_dh_h = dh.iter().zip(h).map(|(p, q)| p * q).sum::<f64>() / c as f64;
                        for j in 0..c {
                            gx[row * c + j] += s * (dh[j] - mean_dh - h[j] * mean_dh_h);
                        }
                    }
                }
                if let Some(gg) = grads[*gain].as_deref_mut() {
                    for (gr, h) in g.chunks(c).zip(normalized.chunks(c)) {
                        for j in 0..c {
                            gg[j] += gr[j] * h[j];
                        }
                    }
                }
                if let Some(gb) = grads[*bias].as_deref_mut() {
                    for gr in g.chunks(c) {
                        axpy(gb, gr, 1.0);
                    }
                }
            }
            Op::GatherRows { table, ids } => {
                if let Some(gt) = grads[*table].as_deref_mut() {
                    let d = val(*table).dims2().unwrap().1;
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(&mut gt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d], 1.0);
                    }
                }
            }
            Op::SliceCols { a, start } => {
                if let Some(ga) = grads[*a].as_deref_mut() {
                    let c = val(*a).dims2().unwrap().1;
                    let w = node.value.dims2().unwrap().1;
                    for (r, gr) in g.chunks(w).enumerate() {
                        axpy(&mut ga[r * c + start..r * c + start + w], gr, 1.0);
                    }
                }
            }
            Op::ConcatCols { parts } => {
                let total = node.value.dims2().unwrap().1;
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).dims2().unwrap().1;
                    if let Some(gp) = grads[p].as_deref_mut() {
                        for (r, gr) in g.chunks(total).enumerate() {
                            axpy(&mut gp[r * w..(r + 1) * w], &gr[offset..offset + w], 1.0);
                        }
                    }
                    offset += w;
                }
            }
            Op::MeanRows { a, selected } => {
                if let Some(ga) = grads[*a].as_deref_mut() {
                    let d = g.len();
                    let share = 1.0 / selected.len() as f64;
                    for &r in selected {
                        axpy(&mut ga[r * d..(r + 1) * d], g, share);
                    }
                }
            }
            Op::Reshape { a } => {
                if let Some(ga) = grads[*a].as_deref_mut() {
                    axpy(ga, g, 1.0);
                }
            }
            Op::Sum { a } => {
                if let Some(ga) = grads[*a].as_deref_mut() {
                    ga.iter_mut().for_each(|o| *o += g[0]);
                }
            }
            Op::BceWithLogits { z, target } => {
                if let Some(gz) = grads[*z].as_deref_mut() {
                    let logit = val(*z).data()[0];
                    gz[0] += g[0] * (sigmoid(logit) - target);
                }
            }
            Op::CrossEntropyRows {
                logits,
                targets,
                probs,
            } => {
                if let Some(gl) = grads[*logits].as_deref_mut() {
                    let c = val(*logits).dims2().unwrap().1;
                    let share = g[0] / targets.len() as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &mut gl[r * c..(r + 1) * c];
                        axpy(row, &probs[r * c..(r + 1) * c], share);
                        row[t] -= share;
                    }
                }
            }
            Op::WeightedSum { terms } => {
                for &(j, c) in terms {
                    if let Some(gj) = grads[j].as_deref_mut() {
                        gj[0] += c * g[0];
                    }
                }
            }
            Op::MeanScalars { terms } => {
                let share = g[0] / terms.len() as f64;
                for &j in terms {
                    if let Some(gj) = grads[j].as_deref_mut() {
                        gj[0] += share;
                    }
                }
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

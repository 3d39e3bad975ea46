//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! A [`Tape`] records every primitive executed during the forward pass and
//! replays the records in reverse to accumulate gradients. The op set is
//! closed: exactly what the model above it needs, nothing speculative.
//! Storage is a flat `Vec<F>` per node; no broadcasting exists beyond the
//! explicit row-broadcast and scalar ops, so every shape alignment is
//! visible at the call site.
//!
//! `F` is `f32` for training and `f64` for gradient verification; see
//! [`fdcheck`] for the central-difference harness.

pub mod fdcheck;

use std::sync::Arc;

use num_traits::Float;
use thiserror::Error;

/// Float scalar the tape is generic over. `f32` for training, `f64` for
/// gradient verification.
pub trait Real: Float + std::fmt::Debug + std::fmt::Display + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Handle to a value living on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ValueId(usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TapeError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("{op}: unsupported shape {shape:?} ({reason})")]
    BadShape {
        op: &'static str,
        shape: Vec<usize>,
        reason: &'static str,
    },
    #[error("{op}: non-finite value produced")]
    NonFinite { op: &'static str },
    #[error("{op}: zero-norm row {row} cannot be normalized")]
    ZeroNorm { op: &'static str, row: usize },
    #[error("{op}: index {index} at position {position} out of range (bound {bound})")]
    IndexOutOfRange {
        op: &'static str,
        position: usize,
        index: usize,
        bound: usize,
    },
    #[error("{op}: expected a scalar, got shape {shape:?}")]
    NotScalar { op: &'static str, shape: Vec<usize> },
    #[error("{op}: empty input")]
    Empty { op: &'static str },
    #[error("{op}: fully masked row {row}")]
    MaskedOut { op: &'static str, row: usize },
}

pub type TapeResult<T> = Result<T, TapeError>;

struct Node<F> {
    data: Vec<F>,
    shape: Vec<usize>,
    requires_grad: bool,
}

/// One recorded primitive. Indices refer to tape nodes.
enum Op<F> {
    MatMul { a: usize, b: usize, out: usize, m: usize, k: usize, n: usize },
    Transpose { x: usize, out: usize, r: usize, c: usize },
    Add { a: usize, b: usize, out: usize },
    AddRow { m: usize, row: usize, out: usize, r: usize, c: usize },
    Mul { a: usize, b: usize, out: usize },
    Scale { x: usize, out: usize, factor: F },
    SumAll { x: usize, out: usize },
    EmbedLookup { table: usize, out: usize, ids: Vec<usize>, width: usize },
    Conv1d { input: usize, kernel: usize, bias: usize, out: usize, len: usize, c_in: usize, c_out: usize, k: usize },
    MeanRows { x: usize, out: usize, r: usize, c: usize },
    L2NormalizeRows { x: usize, out: usize, r: usize, c: usize },
    SoftmaxRows { x: usize, out: usize, r: usize, c: usize },
    MaskedSoftmaxRows { x: usize, out: usize, r: usize, c: usize, allow: Arc<Vec<bool>> },
    LayerNormRows { x: usize, gamma: usize, beta: usize, out: usize, r: usize, c: usize, xhat: Vec<F>, inv_sigma: Vec<F> },
    Gelu { x: usize, out: usize },
    Sigmoid { x: usize, out: usize },
    Clamp { x: usize, out: usize, lo: F, hi: F },
    DivByScalar { x: usize, s: usize, out: usize },
    CrossEntropyProbs { logits: usize, out: usize, r: usize, c: usize, targets: Vec<F>, row_weights: Vec<F> },
    MseWeighted { pred: usize, out: usize, targets: Vec<F>, weights: Vec<F> },
    ConcatRows { parts: Vec<usize>, out: usize, c: usize },
    ConcatCols { parts: Vec<usize>, out: usize, r: usize },
    SliceRows { x: usize, out: usize, start: usize, len: usize, c: usize },
    SliceCols { x: usize, out: usize, start: usize, len: usize, r: usize, total_c: usize },
}

/// Wengert tape. Forward methods execute eagerly, record the op, and return
/// a handle; [`Tape::backward`] replays in reverse.
///
/// A tape and its values are confined to one thread; independent tapes may
/// run concurrently.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
    ops: Vec<Op<F>>,
    grads: Vec<Option<Vec<F>>>,
    recording: bool,
    check_finite: bool,
}

/// Interpret a rank-1 or rank-2 shape as (rows, cols).
fn rows_cols(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [c] => Some((1, *c)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
            recording: true,
            check_finite: true,
        }
    }

    /// Disable op recording (forward-only evaluation). Values are still
    /// computed and shape-checked.
    pub fn set_recording(&mut self, on: bool) {
        self.recording = on;
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    // ── Node access ──────────────────────────────────────────────────

    pub fn data(&self, id: ValueId) -> &[F] {
        &self.nodes[id.0].data
    }

    pub fn shape(&self, id: ValueId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn numel(&self, id: ValueId) -> usize {
        self.nodes[id.0].data.len()
    }

    /// Value of a scalar node.
    pub fn scalar(&self, id: ValueId) -> TapeResult<F> {
        if self.numel(id) != 1 {
            return Err(TapeError::NotScalar {
                op: "scalar",
                shape: self.shape(id).to_vec(),
            });
        }
        Ok(self.nodes[id.0].data[0])
    }

    /// Gradient accumulated by the last [`Tape::backward`], if any flowed.
    pub fn grad(&self, id: ValueId) -> Option<&[F]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    // ── Leaves ───────────────────────────────────────────────────────

    pub fn leaf(&mut self, data: Vec<F>, shape: &[usize], requires_grad: bool) -> TapeResult<ValueId> {
        if numel(shape) != data.len() {
            return Err(TapeError::BadShape {
                op: "leaf",
                shape: shape.to_vec(),
                reason: "shape product does not match data length",
            });
        }
        Ok(self.push_node(data, shape.to_vec(), requires_grad))
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, data: Vec<F>, shape: &[usize]) -> TapeResult<ValueId> {
        self.leaf(data, shape, false)
    }

    pub fn scalar_constant(&mut self, v: F) -> ValueId {
        self.push_node(vec![v], vec![1], false)
    }

    fn push_node(&mut self, data: Vec<F>, shape: Vec<usize>, requires_grad: bool) -> ValueId {
        let id = self.nodes.len();
        self.nodes.push(Node { data, shape, requires_grad });
        ValueId(id)
    }

    fn requires(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    fn finish(
        &mut self,
        op_name: &'static str,
        data: Vec<F>,
        shape: Vec<usize>,
        track: bool,
        op: impl FnOnce(usize) -> Op<F>,
    ) -> TapeResult<ValueId> {
        if self.check_finite && data.iter().any(|v| !v.is_finite()) {
            return Err(TapeError::NonFinite { op: op_name });
        }
        let record = self.recording && track;
        let out = self.push_node(data, shape, record);
        if record {
            self.ops.push(op(out.0));
        }
        Ok(out)
    }

    fn as_matrix(&self, op: &'static str, id: ValueId) -> TapeResult<(usize, usize)> {
        rows_cols(self.shape(id)).ok_or_else(|| TapeError::BadShape {
            op,
            shape: self.shape(id).to_vec(),
            reason: "expected rank 1 or 2",
        })
    }

    // ── Primitives ───────────────────────────────────────────────────

    /// `a (m×k) @ b (k×n)`. A rank-1 `a` is treated as a single row and
    /// yields a rank-1 result.
    pub fn matmul(&mut self, a: ValueId, b: ValueId) -> TapeResult<ValueId> {
        let (m, k) = self.as_matrix("matmul", a)?;
        let (kb, n) = self.as_matrix("matmul", b)?;
        if k != kb {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out = matmul_raw(self.data(a), self.data(b), m, k, n);
        let shape = if self.shape(a).len() == 1 { vec![n] } else { vec![m, n] };
        let track = self.requires(&[a.0, b.0]);
        self.finish("matmul", out, shape, track, |o| Op::MatMul { a: a.0, b: b.0, out: o, m, k, n })
    }

    pub fn transpose(&mut self, x: ValueId) -> TapeResult<ValueId> {
        let (r, c) = self.as_matrix("transpose", x)?;
        let xd = self.data(x);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = xd[i * c + j];
            }
        }
        let track = self.requires(&[x.0]);
        self.finish("transpose", out, vec![c, r], track, |o| Op::Transpose { x: x.0, out: o, r, c })
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> TapeResult<ValueId> {
        if self.shape(a) != self.shape(b) {
            return Err(TapeError::ShapeMismatch {
                op: "add",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out: Vec<F> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let track = self.requires(&[a.0, b.0]);
        self.finish("add", out, shape, track, |o| Op::Add { a: a.0, b: b.0, out: o })
    }

    /// Add a length-`c` row vector to every row of an `r×c` matrix.
    pub fn add_row(&mut self, m: ValueId, row: ValueId) -> TapeResult<ValueId> {
        let (r, c) = self.as_matrix("add_row", m)?;
        let (rr, rc) = self.as_matrix("add_row", row)?;
        if rr != 1 || rc != c {
            return Err(TapeError::ShapeMismatch {
                op: "add_row",
                left: self.shape(m).to_vec(),
                right: self.shape(row).to_vec(),
            });
        }
        let rd = self.data(row).to_vec();
        let out: Vec<F> = self
            .data(m)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + rd[i % c])
            .collect();
        let shape = self.shape(m).to_vec();
        let track = self.requires(&[m.0, row.0]);
        self.finish("add_row", out, shape, track, |o| Op::AddRow { m: m.0, row: row.0, out: o, r, c })
    }

    /// Element-wise product.
    pub fn mul(&mut self, a: ValueId, b: ValueId) -> TapeResult<ValueId> {
        if self.shape(a) != self.shape(b) {
            return Err(TapeError::ShapeMismatch {
                op: "mul",
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        let out: Vec<F> = self.data(a).iter().zip(self.data(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let track = self.requires(&[a.0, b.0]);
        self.finish("mul", out, shape, track, |o| Op::Mul { a: a.0, b: b.0, out: o })
    }

    /// Multiply by a compile-time constant.
    pub fn scale(&mut self, x: ValueId, factor: F) -> TapeResult<ValueId> {
        let out: Vec<F> = self.data(x).iter().map(|&v| v * factor).collect();
        let shape = self.shape(x).to_vec();
        let track = self.requires(&[x.0]);
        self.finish("scale", out, shape, track, |o| Op::Scale { x: x.0, out: o, factor })
    }

    pub fn sum_all(&mut self, x: ValueId) -> TapeResult<ValueId> {
        let mut acc = F::zero();
        for &v in self.data(x) {
            acc = acc + v;
        }
        let track = self.requires(&[x.0]);
        self.finish("sum_all", vec![acc], vec![1], track, |o| Op::SumAll { x: x.0, out: o })
    }

    /// Gather rows of `table` by index; gradient scatter-adds.
    pub fn embed_lookup(&mut self, table: ValueId, ids: &[usize]) -> TapeResult<ValueId> {
        let (rows, width) = self.as_matrix("embed_lookup", table)?;
        if ids.is_empty() {
            return Err(TapeError::Empty { op: "embed_lookup" });
        }
        for (position, &index) in ids.iter().enumerate() {
            if index >= rows {
                return Err(TapeError::IndexOutOfRange {
                    op: "embed_lookup",
                    position,
                    index,
                    bound: rows,
                });
            }
        }
        let td = self.data(table);
        let mut out = Vec::with_capacity(ids.len() * width);
        for &id in ids {
            out.extend_from_slice(&td[id * width..(id + 1) * width]);
        }
        let track = self.requires(&[table.0]);
        let ids = ids.to_vec();
        self.finish("embed_lookup", out, vec![ids.len(), width], track, |o| Op::EmbedLookup {
            table: table.0,
            out: o,
            ids,
            width,
        })
    }

    /// Valid 1-D convolution over a `len×c_in` sequence. The kernel is laid
    /// out as a `(k·c_in)×c_out` matrix: output row `t` is
    /// `concat(input[t..t+k]) @ kernel + bias`.
    pub fn conv1d(&mut self, input: ValueId, kernel: ValueId, bias: ValueId, k: usize) -> TapeResult<ValueId> {
        let (len, c_in) = self.as_matrix("conv1d", input)?;
        let (krows, c_out) = self.as_matrix("conv1d", kernel)?;
        let (br, bc) = self.as_matrix("conv1d", bias)?;
        if krows != k * c_in {
            return Err(TapeError::ShapeMismatch {
                op: "conv1d",
                left: self.shape(input).to_vec(),
                right: self.shape(kernel).to_vec(),
            });
        }
        if br != 1 || bc != c_out {
            return Err(TapeError::ShapeMismatch {
                op: "conv1d",
                left: self.shape(kernel).to_vec(),
                right: self.shape(bias).to_vec(),
            });
        }
        if len < k || k == 0 {
            return Err(TapeError::BadShape {
                op: "conv1d",
                shape: self.shape(input).to_vec(),
                reason: "sequence shorter than kernel",
            });
        }
        let out_len = len - k + 1;
        let xd = self.data(input);
        let kd = self.data(kernel);
        let bd = self.data(bias);
        let mut out = vec![F::zero(); out_len * c_out];
        // Products first, bias last: keeps this bit-identical to the
        // equivalent concat-then-matmul-then-add formulation.
        for t in 0..out_len {
            for co in 0..c_out {
                let mut acc = F::zero();
                for step in 0..k {
                    for ci in 0..c_in {
                        acc = acc + xd[(t + step) * c_in + ci] * kd[(step * c_in + ci) * c_out + co];
                    }
                }
                out[t * c_out + co] = acc + bd[co];
            }
        }
        let track = self.requires(&[input.0, kernel.0, bias.0]);
        self.finish("conv1d", out, vec![out_len, c_out], track, |o| Op::Conv1d {
            input: input.0,
            kernel: kernel.0,
            bias: bias.0,
            out: o,
            len,
            c_in,
            c_out,
            k,
        })
    }

    /// Mean over the row axis: `r×c -> [c]`. Doubles as global average
    /// pooling over the temporal axis.
    pub fn mean_rows(&mut self, x: ValueId) -> TapeResult<ValueId> {
        let (r, c) = self.as_matrix("mean_rows", x)?;
        if r == 0 {
            return Err(TapeError::Empty { op: "mean_rows" });
        }
        let xd = self.data(x);
        let inv = F::one() / F::from_f64(r as f64);
        let mut out = vec![F::zero(); c];
        for i in 0..r {
            for j in 0..c {
                out[j] = out[j] + xd[i * c + j];
            }
        }
        for v in out.iter_mut() {
            *v = *v * inv;
        }
        let track = self.requires(&[x.0]);
        self.finish("mean_rows", out, vec![c], track, |o| Op::MeanRows { x: x.0, out: o, r, c })
    }

    /// Scale each row to unit L2 norm. A zero row is an error; there is no
    /// silent epsilon.
    pub fn l2_normalize_rows(&mut self, x: ValueId) -> TapeResult<ValueId> {
        let (r, c) = self.as_matrix("l2_normalize_rows", x)?;
        let xd = self.data(x);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let norm = l2_norm(row);
            if norm == F::zero() {
                return Err(TapeError::ZeroNorm { op: "l2_normalize_rows", row: i });
            }
            for j in 0..c {
                out[i * c + j] = row[j] / norm;
            }
        }
        let shape = self.shape(x).to_vec();
        let track = self.requires(&[x.0]);
        self.finish("l2_normalize_rows", out, shape, track, |o| Op::L2NormalizeRows { x: x.0, out: o, r, c })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: ValueId) -> TapeResult<ValueId> {
        let (r, c) = self.as_matrix("softmax_rows", x)?;
        if self.data(x).iter().any(|v| !v.is_finite()) {
            return Err(TapeError::NonFinite { op: "softmax_rows" });
        }
        let xd = self.data(x);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            softmax_row(&xd[i * c..(i + 1) * c], &mut out[i * c..(i + 1) * c]);
        }
        let shape = self.shape(x).to_vec();
        let track = self.requires(&[x.0]);
        self.finish("softmax_rows", out, shape, track, |o| Op::SoftmaxRows { x: x.0, out: o, r, c })
    }

    /// Row-wise softmax restricted to allowed entries; blocked entries get
    /// probability exactly zero, so nothing propagates through them in
    /// either direction.
    pub fn masked_softmax_rows(&mut self, x: ValueId, allow: Arc<Vec<bool>>) -> TapeResult<ValueId> {
        let (r, c) = self.as_matrix("masked_softmax_rows", x)?;
        if allow.len() != r * c {
            return Err(TapeError::BadShape {
                op: "masked_softmax_rows",
                shape: self.shape(x).to_vec(),
                reason: "mask length does not match matrix",
            });
        }
        let xd = self.data(x);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mask = &allow[i * c..(i + 1) * c];
            let mut max = F::neg_infinity();
            for j in 0..c {
                if mask[j] && row[j] > max {
                    max = row[j];
                }
            }
            if max == F::neg_infinity() {
                return Err(TapeError::MaskedOut { op: "masked_softmax_rows", row: i });
            }
            let mut denom = F::zero();
            for j in 0..c {
                if mask[j] {
                    let e = (row[j] - max).exp();
                    out[i * c + j] = e;
                    denom = denom + e;
                }
            }
            for j in 0..c {
                if mask[j] {
                    out[i * c + j] = out[i * c + j] / denom;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let track = self.requires(&[x.0]);
        self.finish("masked_softmax_rows", out, shape, track, |o| Op::MaskedSoftmaxRows {
            x: x.0,
            out: o,
            r,
            c,
            allow,
        })
    }

    /// Row-wise layer normalization with learned gain and bias.
    pub fn layer_norm_rows(&mut self, x: ValueId, gamma: ValueId, beta: ValueId) -> TapeResult<ValueId> {
        let (r, c) = self.as_matrix("layer_norm_rows", x)?;
        let (gr, gc) = self.as_matrix("layer_norm_rows", gamma)?;
        let (br, bc) = self.as_matrix("layer_norm_rows", beta)?;
        if gr != 1 || gc != c || br != 1 || bc != c {
            return Err(TapeError::ShapeMismatch {
                op: "layer_norm_rows",
                left: self.shape(x).to_vec(),
                right: self.shape(gamma).to_vec(),
            });
        }
        let eps = F::from_f64(1e-5);
        let xd = self.data(x);
        let gd = self.data(gamma).to_vec();
        let bd = self.data(beta).to_vec();
        let mut out = vec![F::zero(); r * c];
        let mut xhat = vec![F::zero(); r * c];
        let mut inv_sigma = vec![F::zero(); r];
        let inv_c = F::one() / F::from_f64(c as f64);
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mut mean = F::zero();
            for &v in row {
                mean = mean + v;
            }
            mean = mean * inv_c;
            let mut var = F::zero();
            for &v in row {
                let d = v - mean;
                var = var + d * d;
            }
            var = var * inv_c;
            let is = F::one() / (var + eps).sqrt();
            inv_sigma[i] = is;
            for j in 0..c {
                let xh = (row[j] - mean) * is;
                xhat[i * c + j] = xh;
                out[i * c + j] = xh * gd[j] + bd[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let track = self.requires(&[x.0, gamma.0, beta.0]);
        self.finish("layer_norm_rows", out, shape, track, |o| Op::LayerNormRows {
            x: x.0,
            gamma: gamma.0,
            beta: beta.0,
            out: o,
            r,
            c,
            xhat,
            inv_sigma,
        })
    }

    /// GELU in its tanh form, `0.5·x·(1 + tanh(√(2/π)(x + 0.044715x³)))`.
    pub fn gelu(&mut self, x: ValueId) -> TapeResult<ValueId> {
        let out: Vec<F> = self.data(x).iter().map(|&v| gelu_scalar(v)).collect();
        let shape = self.shape(x).to_vec();
        let track = self.requires(&[x.0]);
        self.finish("gelu", out, shape, track, |o| Op::Gelu { x: x.0, out: o })
    }

    pub fn sigmoid(&mut self, x: ValueId) -> TapeResult<ValueId> {
        let out: Vec<F> = self.data(x).iter().map(|&v| sigmoid_scalar(v)).collect();
        let shape = self.shape(x).to_vec();
        let track = self.requires(&[x.0]);
        self.finish("sigmoid", out, shape, track, |o| Op::Sigmoid { x: x.0, out: o })
    }

    /// Clamp to `[lo, hi]`. Subgradient convention: the derivative is 1 on
    /// the closed interval (boundary included) and 0 where clamping is
    /// active.
    pub fn clamp(&mut self, x: ValueId, lo: F, hi: F) -> TapeResult<ValueId> {
        let out: Vec<F> = self
            .data(x)
            .iter()
            .map(|&v| if v < lo { lo } else if v > hi { hi } else { v })
            .collect();
        let shape = self.shape(x).to_vec();
        let track = self.requires(&[x.0]);
        self.finish("clamp", out, shape, track, |o| Op::Clamp { x: x.0, out: o, lo, hi })
    }

    /// Divide every element by a 1-element tensor (the learnable
    /// temperature path).
    pub fn div_by_scalar(&mut self, x: ValueId, s: ValueId) -> TapeResult<ValueId> {
        if self.numel(s) != 1 {
            return Err(TapeError::NotScalar {
                op: "div_by_scalar",
                shape: self.shape(s).to_vec(),
            });
        }
        let sv = self.data(s)[0];
        let out: Vec<F> = self.data(x).iter().map(|&v| v / sv).collect();
        let shape = self.shape(x).to_vec();
        let track = self.requires(&[x.0, s.0]);
        self.finish("div_by_scalar", out, shape, track, |o| Op::DivByScalar { x: x.0, s: s.0, out: o })
    }

    fn check_loss_inputs(
        &self,
        op: &'static str,
        logits: ValueId,
        targets: &[F],
        row_weights: &[F],
    ) -> TapeResult<(usize, usize)> {
        let (r, c) = self.as_matrix(op, logits)?;
        if targets.len() != r * c {
            return Err(TapeError::ShapeMismatch {
                op,
                left: vec![r, c],
                right: vec![targets.len()],
            });
        }
        if row_weights.len() != r {
            return Err(TapeError::ShapeMismatch {
                op,
                left: vec![r],
                right: vec![row_weights.len()],
            });
        }
        Ok((r, c))
    }

    /// Weighted cross-entropy of softmax(logits) against a constant target
    /// distribution: `Σ_rows w_r · (logsumexp(z_r) − q_r·z_r)`.
    pub fn cross_entropy_probs(&mut self, logits: ValueId, targets: &[F], row_weights: &[F]) -> TapeResult<ValueId> {
        let (r, c) = self.check_loss_inputs("cross_entropy_probs", logits, targets, row_weights)?;
        let xd = self.data(logits);
        let mut loss = F::zero();
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let q = &targets[i * c..(i + 1) * c];
            loss = loss + row_weights[i] * ce_row(row, q);
        }
        let track = self.requires(&[logits.0]);
        let targets = targets.to_vec();
        let row_weights = row_weights.to_vec();
        self.finish("cross_entropy_probs", vec![loss], vec![1], track, |o| Op::CrossEntropyProbs {
            logits: logits.0,
            out: o,
            r,
            c,
            targets,
            row_weights,
        })
    }

    /// Weighted KL divergence `KL(q ‖ softmax(z))`, equal to the
    /// cross-entropy above minus the target entropy. For one-hot targets
    /// the entropy term is exactly zero, so the two losses agree
    /// bit-for-bit.
    pub fn kl_div_probs(&mut self, logits: ValueId, targets: &[F], row_weights: &[F]) -> TapeResult<ValueId> {
        let (r, c) = self.check_loss_inputs("kl_div_probs", logits, targets, row_weights)?;
        let xd = self.data(logits);
        let mut loss = F::zero();
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let q = &targets[i * c..(i + 1) * c];
            let mut neg_entropy = F::zero();
            for &qv in q {
                if qv > F::zero() {
                    neg_entropy = neg_entropy + qv * qv.ln();
                }
            }
            loss = loss + row_weights[i] * (neg_entropy + ce_row(row, q));
        }
        let track = self.requires(&[logits.0]);
        let targets = targets.to_vec();
        let row_weights = row_weights.to_vec();
        // Same gradient as cross-entropy: the entropy term is constant.
        self.finish("kl_div_probs", vec![loss], vec![1], track, |o| Op::CrossEntropyProbs {
            logits: logits.0,
            out: o,
            r,
            c,
            targets,
            row_weights,
        })
    }

    /// Weighted squared error `Σ_i w_i (p_i − t_i)²`.
    pub fn mse_weighted(&mut self, pred: ValueId, targets: &[F], weights: &[F]) -> TapeResult<ValueId> {
        let n = self.numel(pred);
        if targets.len() != n || weights.len() != n {
            return Err(TapeError::ShapeMismatch {
                op: "mse_weighted",
                left: vec![n],
                right: vec![targets.len()],
            });
        }
        let pd = self.data(pred);
        let mut loss = F::zero();
        for i in 0..n {
            let d = pd[i] - targets[i];
            loss = loss + weights[i] * d * d;
        }
        let track = self.requires(&[pred.0]);
        let targets = targets.to_vec();
        let weights = weights.to_vec();
        self.finish("mse_weighted", vec![loss], vec![1], track, |o| Op::MseWeighted {
            pred: pred.0,
            out: o,
            targets,
            weights,
        })
    }

    /// Stack matrices (or row vectors) on top of each other. All parts must
    /// share a column count.
    pub fn concat_rows(&mut self, parts: &[ValueId]) -> TapeResult<ValueId> {
        if parts.is_empty() {
            return Err(TapeError::Empty { op: "concat_rows" });
        }
        let (_, c) = self.as_matrix("concat_rows", parts[0])?;
        let mut total_r = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (pr, pc) = self.as_matrix("concat_rows", p)?;
            if pc != c {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_rows",
                    left: self.shape(parts[0]).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            total_r += pr;
            out.extend_from_slice(self.data(p));
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let track = self.requires(&idx);
        self.finish("concat_rows", out, vec![total_r, c], track, |o| Op::ConcatRows {
            parts: idx,
            out: o,
            c,
        })
    }

    /// Concatenate matrices side by side. All parts must share a row count.
    pub fn concat_cols(&mut self, parts: &[ValueId]) -> TapeResult<ValueId> {
        if parts.is_empty() {
            return Err(TapeError::Empty { op: "concat_cols" });
        }
        let (r, _) = self.as_matrix("concat_cols", parts[0])?;
        let mut widths = Vec::with_capacity(parts.len());
        let mut total_c = 0;
        for &p in parts {
            let (pr, pc) = self.as_matrix("concat_cols", p)?;
            if pr != r {
                return Err(TapeError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(parts[0]).to_vec(),
                    right: self.shape(p).to_vec(),
                });
            }
            widths.push(pc);
            total_c += pc;
        }
        let mut out = vec![F::zero(); r * total_c];
        let mut offset = 0;
        for (pi, &p) in parts.iter().enumerate() {
            let pd = self.data(p);
            let pc = widths[pi];
            for i in 0..r {
                out[i * total_c + offset..i * total_c + offset + pc]
                    .copy_from_slice(&pd[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let track = self.requires(&idx);
        self.finish("concat_cols", out, vec![r, total_c], track, |o| Op::ConcatCols {
            parts: idx,
            out: o,
            r,
        })
    }

    pub fn slice_rows(&mut self, x: ValueId, start: usize, len: usize) -> TapeResult<ValueId> {
        let (r, c) = self.as_matrix("slice_rows", x)?;
        if start + len > r {
            return Err(TapeError::IndexOutOfRange {
                op: "slice_rows",
                position: 0,
                index: start + len,
                bound: r,
            });
        }
        let out = self.data(x)[start * c..(start + len) * c].to_vec();
        let track = self.requires(&[x.0]);
        self.finish("slice_rows", out, vec![len, c], track, |o| Op::SliceRows {
            x: x.0,
            out: o,
            start,
            len,
            c,
        })
    }

    pub fn slice_cols(&mut self, x: ValueId, start: usize, len: usize) -> TapeResult<ValueId> {
        let (r, c) = self.as_matrix("slice_cols", x)?;
        if start + len > c {
            return Err(TapeError::IndexOutOfRange {
                op: "slice_cols",
                position: 0,
                index: start + len,
                bound: c,
            });
        }
        let xd = self.data(x);
        let mut out = vec![F::zero(); r * len];
        for i in 0..r {
            out[i * len..(i + 1) * len].copy_from_slice(&xd[i * c + start..i * c + start + len]);
        }
        let track = self.requires(&[x.0]);
        self.finish("slice_cols", out, vec![r, len], track, |o| Op::SliceCols {
            x: x.0,
            out: o,
            start,
            len,
            r,
            total_c: c,
        })
    }

    /// Cosine similarity matrix between two sets of row vectors: both sides
    /// are L2-normalized, then multiplied. Composite of tape primitives, so
    /// it differentiates through both normalizations.
    pub fn cosine_similarity(&mut self, a_rows: ValueId, b_rows: ValueId) -> TapeResult<ValueId> {
        let an = self.l2_normalize_rows(a_rows)?;
        let bn = self.l2_normalize_rows(b_rows)?;
        let bt = self.transpose(bn)?;
        self.matmul(an, bt)
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Gradient buffers are cleared
    /// first, so repeated calls over the same tape produce identical
    /// results.
    pub fn backward(&mut self, loss: ValueId) -> TapeResult<()> {
        if self.numel(loss) != 1 {
            return Err(TapeError::NotScalar {
                op: "backward",
                shape: self.shape(loss).to_vec(),
            });
        }
        self.grads.clear();
        self.grads.resize(self.nodes.len(), None);
        self.grads[loss.0] = Some(vec![F::one()]);
        for i in (0..self.ops.len()).rev() {
            backward_op(&self.nodes, &self.ops[i], &mut self.grads);
        }
        Ok(())
    }
}

// ── Scalar kernels ───────────────────────────────────────────────────

fn l2_norm<F: Real>(row: &[F]) -> F {
    let mut acc = F::zero();
    for &v in row {
        acc = acc + v * v;
    }
    acc.sqrt()
}

fn softmax_row<F: Real>(row: &[F], out: &mut [F]) {
    let mut max = row[0];
    for &v in row.iter().skip(1) {
        if v > max {
            max = v;
        }
    }
    let mut denom = F::zero();
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        denom = denom + e;
    }
    for o in out.iter_mut() {
        *o = *o / denom;
    }
}

/// `logsumexp(z) − q·z` for one row.
fn ce_row<F: Real>(row: &[F], q: &[F]) -> F {
    let mut max = row[0];
    for &v in row.iter().skip(1) {
        if v > max {
            max = v;
        }
    }
    let mut denom = F::zero();
    let mut dot = F::zero();
    for (&z, &qv) in row.iter().zip(q) {
        denom = denom + (z - max).exp();
        dot = dot + qv * z;
    }
    max + denom.ln() - dot
}

fn gelu_scalar<F: Real>(x: F) -> F {
    let c0 = F::from_f64(0.7978845608028654); // sqrt(2/pi)
    let c1 = F::from_f64(0.044715);
    let half = F::from_f64(0.5);
    let inner = c0 * (x + c1 * x * x * x);
    half * x * (F::one() + inner.tanh())
}

fn gelu_grad_scalar<F: Real>(x: F) -> F {
    let c0 = F::from_f64(0.7978845608028654);
    let c1 = F::from_f64(0.044715);
    let half = F::from_f64(0.5);
    let three = F::from_f64(3.0);
    let inner = c0 * (x + c1 * x * x * x);
    let t = inner.tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * c0 * (F::one() + three * c1 * x * x)
}

fn sigmoid_scalar<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

fn matmul_raw<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        for kk in 0..k {
            let av = a[i * k + kk];
            if av == F::zero() {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] = orow[j] + av * brow[j];
            }
        }
    }
    out
}

// ── Vector-Jacobian products ─────────────────────────────────────────

fn accumulate<F: Real>(grads: &mut [Option<Vec<F>>], idx: usize, len: usize, add: impl FnOnce(&mut [F])) {
    let slot = grads[idx].get_or_insert_with(|| vec![F::zero(); len]);
    add(slot);
}

fn backward_op<F: Real>(nodes: &[Node<F>], op: &Op<F>, grads: &mut [Option<Vec<F>>]) {
    match op {
        Op::MatMul { a, b, out, m, k, n } => {
            let Some(d_out) = grads[*out].clone() else { return };
            let (m, k, n) = (*m, *k, *n);
            if nodes[*a].requires_grad {
                // dA = dOut @ B^T
                let bd = &nodes[*b].data;
                accumulate(grads, *a, m * k, |g| {
                    for i in 0..m {
                        for j in 0..n {
                            let dv = d_out[i * n + j];
                            if dv == F::zero() {
                                continue;
                            }
                            for kk in 0..k {
                                g[i * k + kk] = g[i * k + kk] + dv * bd[kk * n + j];
                            }
                        }
                    }
                });
            }
            if nodes[*b].requires_grad {
                // dB = A^T @ dOut
                let ad = &nodes[*a].data;
                accumulate(grads, *b, k * n, |g| {
                    for i in 0..m {
                        for kk in 0..k {
                            let av = ad[i * k + kk];
                            if av == F::zero() {
                                continue;
                            }
                            for j in 0..n {
                                g[kk * n + j] = g[kk * n + j] + av * d_out[i * n + j];
                            }
                        }
                    }
                });
            }
        }
        Op::Transpose { x, out, r, c } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*x].requires_grad {
                accumulate(grads, *x, r * c, |g| {
                    for i in 0..*r {
                        for j in 0..*c {
                            g[i * c + j] = g[i * c + j] + d_out[j * r + i];
                        }
                    }
                });
            }
        }
        Op::Add { a, b, out } => {
            let Some(d_out) = grads[*out].clone() else { return };
            for idx in [*a, *b] {
                if nodes[idx].requires_grad {
                    accumulate(grads, idx, d_out.len(), |g| {
                        for (gv, dv) in g.iter_mut().zip(&d_out) {
                            *gv = *gv + *dv;
                        }
                    });
                }
            }
        }
        Op::AddRow { m, row, out, r, c } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*m].requires_grad {
                accumulate(grads, *m, r * c, |g| {
                    for (gv, dv) in g.iter_mut().zip(&d_out) {
                        *gv = *gv + *dv;
                    }
                });
            }
            if nodes[*row].requires_grad {
                accumulate(grads, *row, *c, |g| {
                    for i in 0..*r {
                        for j in 0..*c {
                            g[j] = g[j] + d_out[i * c + j];
                        }
                    }
                });
            }
        }
        Op::Mul { a, b, out } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*a].requires_grad {
                let bd = &nodes[*b].data;
                accumulate(grads, *a, d_out.len(), |g| {
                    for i in 0..d_out.len() {
                        g[i] = g[i] + d_out[i] * bd[i];
                    }
                });
            }
            if nodes[*b].requires_grad {
                let ad = &nodes[*a].data;
                accumulate(grads, *b, d_out.len(), |g| {
                    for i in 0..d_out.len() {
                        g[i] = g[i] + d_out[i] * ad[i];
                    }
                });
            }
        }
        Op::Scale { x, out, factor } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*x].requires_grad {
                accumulate(grads, *x, d_out.len(), |g| {
                    for i in 0..d_out.len() {
                        g[i] = g[i] + d_out[i] * *factor;
                    }
                });
            }
        }
        Op::SumAll { x, out } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*x].requires_grad {
                let dv = d_out[0];
                let len = nodes[*x].data.len();
                accumulate(grads, *x, len, |g| {
                    for gv in g.iter_mut() {
                        *gv = *gv + dv;
                    }
                });
            }
        }
        Op::EmbedLookup { table, out, ids, width } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*table].requires_grad {
                let len = nodes[*table].data.len();
                accumulate(grads, *table, len, |g| {
                    for (pos, &id) in ids.iter().enumerate() {
                        for j in 0..*width {
                            g[id * width + j] = g[id * width + j] + d_out[pos * width + j];
                        }
                    }
                });
            }
        }
        Op::Conv1d { input, kernel, bias, out, len, c_in, c_out, k } => {
            let Some(d_out) = grads[*out].clone() else { return };
            let out_len = len - k + 1;
            if nodes[*input].requires_grad {
                let kd = &nodes[*kernel].data;
                accumulate(grads, *input, len * c_in, |g| {
                    for t in 0..out_len {
                        for co in 0..*c_out {
                            let dv = d_out[t * c_out + co];
                            if dv == F::zero() {
                                continue;
                            }
                            for step in 0..*k {
                                for ci in 0..*c_in {
                                    g[(t + step) * c_in + ci] =
                                        g[(t + step) * c_in + ci] + dv * kd[(step * c_in + ci) * c_out + co];
                                }
                            }
                        }
                    }
                });
            }
            if nodes[*kernel].requires_grad {
                let xd = &nodes[*input].data;
                accumulate(grads, *kernel, k * c_in * c_out, |g| {
                    for t in 0..out_len {
                        for co in 0..*c_out {
                            let dv = d_out[t * c_out + co];
                            if dv == F::zero() {
                                continue;
                            }
                            for step in 0..*k {
                                for ci in 0..*c_in {
                                    g[(step * c_in + ci) * c_out + co] =
                                        g[(step * c_in + ci) * c_out + co] + dv * xd[(t + step) * c_in + ci];
                                }
                            }
                        }
                    }
                });
            }
            if nodes[*bias].requires_grad {
                accumulate(grads, *bias, *c_out, |g| {
                    for t in 0..out_len {
                        for co in 0..*c_out {
                            g[co] = g[co] + d_out[t * c_out + co];
                        }
                    }
                });
            }
        }
        Op::MeanRows { x, out, r, c } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*x].requires_grad {
                let inv = F::one() / F::from_f64(*r as f64);
                accumulate(grads, *x, r * c, |g| {
                    for i in 0..*r {
                        for j in 0..*c {
                            g[i * c + j] = g[i * c + j] + d_out[j] * inv;
                        }
                    }
                });
            }
        }
        Op::L2NormalizeRows { x, out, r, c } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*x].requires_grad {
                let xd = &nodes[*x].data;
                let yd = &nodes[*out].data;
                accumulate(grads, *x, r * c, |g| {
                    for i in 0..*r {
                        let row = &xd[i * c..(i + 1) * c];
                        let y = &yd[i * c..(i + 1) * c];
                        let dy = &d_out[i * c..(i + 1) * c];
                        let norm = l2_norm(row);
                        let mut dot = F::zero();
                        for j in 0..*c {
                            dot = dot + y[j] * dy[j];
                        }
                        for j in 0..*c {
                            g[i * c + j] = g[i * c + j] + (dy[j] - y[j] * dot) / norm;
                        }
                    }
                });
            }
        }
        Op::SoftmaxRows { x, out, r, c } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*x].requires_grad {
                let pd = &nodes[*out].data;
                accumulate(grads, *x, r * c, |g| {
                    for i in 0..*r {
                        let p = &pd[i * c..(i + 1) * c];
                        let dy = &d_out[i * c..(i + 1) * c];
                        let mut dot = F::zero();
                        for j in 0..*c {
                            dot = dot + p[j] * dy[j];
                        }
                        for j in 0..*c {
                            g[i * c + j] = g[i * c + j] + p[j] * (dy[j] - dot);
                        }
                    }
                });
            }
        }
        Op::MaskedSoftmaxRows { x, out, r, c, allow } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*x].requires_grad {
                let pd = &nodes[*out].data;
                accumulate(grads, *x, r * c, |g| {
                    for i in 0..*r {
                        let p = &pd[i * c..(i + 1) * c];
                        let dy = &d_out[i * c..(i + 1) * c];
                        let mask = &allow[i * c..(i + 1) * c];
                        let mut dot = F::zero();
                        for j in 0..*c {
                            if mask[j] {
                                dot = dot + p[j] * dy[j];
                            }
                        }
                        for j in 0..*c {
                            if mask[j] {
                                g[i * c + j] = g[i * c + j] + p[j] * (dy[j] - dot);
                            }
                        }
                    }
                });
            }
        }
        Op::LayerNormRows { x, gamma, beta, out, r, c, xhat, inv_sigma } => {
            let Some(d_out) = grads[*out].clone() else { return };
            let gd = &nodes[*gamma].data;
            if nodes[*gamma].requires_grad {
                accumulate(grads, *gamma, *c, |g| {
                    for i in 0..*r {
                        for j in 0..*c {
                            g[j] = g[j] + d_out[i * c + j] * xhat[i * c + j];
                        }
                    }
                });
            }
            if nodes[*beta].requires_grad {
                accumulate(grads, *beta, *c, |g| {
                    for i in 0..*r {
                        for j in 0..*c {
                            g[j] = g[j] + d_out[i * c + j];
                        }
                    }
                });
            }
            if nodes[*x].requires_grad {
                let inv_c = F::one() / F::from_f64(*c as f64);
                accumulate(grads, *x, r * c, |g| {
                    for i in 0..*r {
                        let dxh: Vec<F> = (0..*c).map(|j| d_out[i * c + j] * gd[j]).collect();
                        let mut mean_dxh = F::zero();
                        let mut mean_dxh_xhat = F::zero();
                        for j in 0..*c {
                            mean_dxh = mean_dxh + dxh[j];
                            mean_dxh_xhat = mean_dxh_xhat + dxh[j] * xhat[i * c + j];
                        }
                        mean_dxh = mean_dxh * inv_c;
                        mean_dxh_xhat = mean_dxh_xhat * inv_c;
                        for j in 0..*c {
                            let v = (dxh[j] - mean_dxh - xhat[i * c + j] * mean_dxh_xhat) * inv_sigma[i];
                            g[i * c + j] = g[i * c + j] + v;
                        }
                    }
                });
            }
        }
        Op::Gelu { x, out } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*x].requires_grad {
                let xd = &nodes[*x].data;
                accumulate(grads, *x, d_out.len(), |g| {
                    for i in 0..d_out.len() {
                        g[i] = g[i] + d_out[i] * gelu_grad_scalar(xd[i]);
                    }
                });
            }
        }
        Op::Sigmoid { x, out } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*x].requires_grad {
                let yd = &nodes[*out].data;
                accumulate(grads, *x, d_out.len(), |g| {
                    for i in 0..d_out.len() {
                        g[i] = g[i] + d_out[i] * yd[i] * (F::one() - yd[i]);
                    }
                });
            }
        }
        Op::Clamp { x, out, lo, hi } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*x].requires_grad {
                let xd = &nodes[*x].data;
                accumulate(grads, *x, d_out.len(), |g| {
                    for i in 0..d_out.len() {
                        if xd[i] >= *lo && xd[i] <= *hi {
                            g[i] = g[i] + d_out[i];
                        }
                    }
                });
            }
        }
        Op::DivByScalar { x, s, out } => {
            let Some(d_out) = grads[*out].clone() else { return };
            let sv = nodes[*s].data[0];
            if nodes[*x].requires_grad {
                accumulate(grads, *x, d_out.len(), |g| {
                    for i in 0..d_out.len() {
                        g[i] = g[i] + d_out[i] / sv;
                    }
                });
            }
            if nodes[*s].requires_grad {
                let yd = &nodes[*out].data;
                let mut acc = F::zero();
                for i in 0..d_out.len() {
                    acc = acc + d_out[i] * yd[i];
                }
                let dv = -acc / sv;
                accumulate(grads, *s, 1, |g| {
                    g[0] = g[0] + dv;
                });
            }
        }
        Op::CrossEntropyProbs { logits, out, r, c, targets, row_weights } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*logits].requires_grad {
                let xd = &nodes[*logits].data;
                let dv = d_out[0];
                accumulate(grads, *logits, r * c, |g| {
                    let mut p = vec![F::zero(); *c];
                    for i in 0..*r {
                        let row = &xd[i * c..(i + 1) * c];
                        softmax_row(row, &mut p);
                        let w = row_weights[i] * dv;
                        for j in 0..*c {
                            g[i * c + j] = g[i * c + j] + w * (p[j] - targets[i * c + j]);
                        }
                    }
                });
            }
        }
        Op::MseWeighted { pred, out, targets, weights } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*pred].requires_grad {
                let pd = &nodes[*pred].data;
                let dv = d_out[0];
                let two = F::from_f64(2.0);
                accumulate(grads, *pred, pd.len(), |g| {
                    for i in 0..pd.len() {
                        g[i] = g[i] + dv * two * weights[i] * (pd[i] - targets[i]);
                    }
                });
            }
        }
        Op::ConcatRows { parts, out, c } => {
            let Some(d_out) = grads[*out].clone() else { return };
            let mut offset = 0;
            for &p in parts {
                let rows = nodes[p].data.len() / c;
                if nodes[p].requires_grad {
                    let slice = &d_out[offset * c..(offset + rows) * c];
                    accumulate(grads, p, rows * c, |g| {
                        for (gv, dv) in g.iter_mut().zip(slice) {
                            *gv = *gv + *dv;
                        }
                    });
                }
                offset += rows;
            }
        }
        Op::ConcatCols { parts, out, r } => {
            let Some(d_out) = grads[*out].clone() else { return };
            let total_c = d_out.len() / r;
            let mut offset = 0;
            for &p in parts {
                let pc = nodes[p].data.len() / r;
                if nodes[p].requires_grad {
                    accumulate(grads, p, r * pc, |g| {
                        for i in 0..*r {
                            for j in 0..pc {
                                g[i * pc + j] = g[i * pc + j] + d_out[i * total_c + offset + j];
                            }
                        }
                    });
                }
                offset += pc;
            }
        }
        Op::SliceRows { x, out, start, len, c } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*x].requires_grad {
                let total = nodes[*x].data.len();
                accumulate(grads, *x, total, |g| {
                    for i in 0..*len {
                        for j in 0..*c {
                            g[(start + i) * c + j] = g[(start + i) * c + j] + d_out[i * c + j];
                        }
                    }
                });
            }
        }
        Op::SliceCols { x, out, start, len, r, total_c } => {
            let Some(d_out) = grads[*out].clone() else { return };
            if nodes[*x].requires_grad {
                accumulate(grads, *x, r * total_c, |g| {
                    for i in 0..*r {
                        for j in 0..*len {
                            g[i * total_c + start + j] = g[i * total_c + start + j] + d_out[i * len + j];
                        }
                    }
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tape() -> Tape<f64> {
        Tape::new()
    }

    #[test]
    fn softmax_matches_direct_evaluation() {
        let mut t = tape();
        let x = t.constant(vec![1.0, 0.0, 0.0], &[3]).unwrap();
        let y = t.softmax_rows(x).unwrap();
        let d = t.data(y);
        assert!((d[0] - 0.5761).abs() < 1e-3);
        assert!((d[1] - 0.2119).abs() < 1e-3);
        assert!((d[2] - 0.2119).abs() < 1e-3);
        let sum: f64 = d.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let mut t = tape();
        let x = t.constant(vec![3.0, 4.0], &[2]).unwrap();
        let y = t.l2_normalize_rows(x).unwrap();
        assert_eq!(t.data(y), &[0.6, 0.8]);
    }

    #[test]
    fn l2_normalize_zero_row_is_an_error() {
        let mut t = tape();
        let x = t.constant(vec![0.0, 0.0], &[2]).unwrap();
        assert!(matches!(
            t.l2_normalize_rows(x),
            Err(TapeError::ZeroNorm { row: 0, .. })
        ));
    }

    #[test]
    fn mean_of_identical_rows_is_the_row() {
        let mut t = tape();
        let x = t.constant(vec![1.5, -2.0, 0.25, 1.5, -2.0, 0.25], &[2, 3]).unwrap();
        let y = t.mean_rows(x).unwrap();
        assert_eq!(t.data(y), &[1.5, -2.0, 0.25]);
    }

    #[test]
    fn square_gradient_is_two_x() {
        let mut t = tape();
        let x = t.leaf(vec![3.0], &[1], true).unwrap();
        let sq = t.mul(x, x).unwrap();
        let loss = t.sum_all(sq).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[6.0]);
    }

    #[test]
    fn softmax_sum_has_zero_gradient() {
        let mut t = tape();
        let x = t.leaf(vec![0.3, -1.2, 2.0, 0.0], &[4], true).unwrap();
        let p = t.softmax_rows(x).unwrap();
        let loss = t.sum_all(p).unwrap();
        t.backward(loss).unwrap();
        for &g in t.grad(x).unwrap() {
            assert!(g.abs() < 1e-12, "expected zero gradient, got {g}");
        }
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut t = tape();
        let x = t.leaf(vec![1.0, 2.0], &[2], true).unwrap();
        let y = t.scale(x, 2.0).unwrap();
        assert!(matches!(t.backward(y), Err(TapeError::NotScalar { .. })));
    }

    #[test]
    fn repeated_backward_is_identical() {
        let mut t = tape();
        let x = t.leaf(vec![0.5, -0.25, 1.0, 2.0], &[2, 2], true).unwrap();
        let g = t.gelu(x).unwrap();
        let n = t.l2_normalize_rows(g).unwrap();
        let loss = t.sum_all(n).unwrap();
        t.backward(loss).unwrap();
        let first = t.grad(x).unwrap().to_vec();
        t.backward(loss).unwrap();
        assert_eq!(first, t.grad(x).unwrap());
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut t = tape();
        let a = t.constant(vec![1.0; 6], &[2, 3]).unwrap();
        let b = t.constant(vec![1.0; 8], &[2, 4]).unwrap();
        let err = t.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            TapeError::ShapeMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 4]
            }
        );
    }

    #[test]
    fn embed_lookup_reports_offending_position() {
        let mut t = tape();
        let table = t.constant(vec![0.0; 8], &[4, 2]).unwrap();
        let err = t.embed_lookup(table, &[1, 9, 0]).unwrap_err();
        assert_eq!(
            err,
            TapeError::IndexOutOfRange {
                op: "embed_lookup",
                position: 1,
                index: 9,
                bound: 4
            }
        );
    }

    #[test]
    fn clamp_subgradient_is_zero_when_active_one_inside() {
        let mut t = tape();
        let x = t.leaf(vec![-2.0, 0.0, 0.5, 3.0], &[4], true).unwrap();
        let y = t.clamp(x, -1.0, 1.0).unwrap();
        let loss = t.sum_all(y).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn clamp_boundary_uses_interior_derivative() {
        let mut t = tape();
        let x = t.leaf(vec![-1.0, 1.0], &[2], true).unwrap();
        let y = t.clamp(x, -1.0, 1.0).unwrap();
        let loss = t.sum_all(y).unwrap();
        t.backward(loss).unwrap();
        assert_eq!(t.grad(x).unwrap(), &[1.0, 1.0]);
    }

    #[test]
    fn kl_equals_cross_entropy_for_one_hot_targets() {
        let mut t = tape();
        let logits = t.constant(vec![0.2, -1.0, 0.7, 1.3, 0.0, -0.4], &[2, 3]).unwrap();
        let targets = vec![0.0, 1.0, 0.0, 1.0, 0.0, 0.0];
        let w = vec![0.5, 0.5];
        let kl = t.kl_div_probs(logits, &targets, &w).unwrap();
        let ce = t.cross_entropy_probs(logits, &targets, &w).unwrap();
        assert_eq!(t.data(kl)[0], t.data(ce)[0]);
    }

    #[test]
    fn masked_softmax_blocked_entries_are_exactly_zero() {
        let mut t = tape();
        let x = t.constant(vec![5.0, 1.0, -3.0, 0.0, 2.0, 4.0], &[2, 3]).unwrap();
        let allow = Arc::new(vec![true, false, true, true, true, false]);
        let p = t.masked_softmax_rows(x, allow).unwrap();
        let d = t.data(p);
        assert_eq!(d[1], 0.0);
        assert_eq!(d[5], 0.0);
        assert!((d[0] + d[2] - 1.0).abs() < 1e-12);
        assert!((d[3] + d[4] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let mut t = tape();
        let x = t.constant(vec![1.0, 2.0], &[1, 2]).unwrap();
        let allow = Arc::new(vec![false, false]);
        assert!(matches!(
            t.masked_softmax_rows(x, allow),
            Err(TapeError::MaskedOut { row: 0, .. })
        ));
    }

    #[test]
    fn non_finite_output_identifies_the_op() {
        let mut t = tape();
        let x = t.constant(vec![1e308, 1e308], &[2]).unwrap();
        let y = t.mul(x, x);
        assert_eq!(y.unwrap_err(), TapeError::NonFinite { op: "mul" });
    }

    #[test]
    fn concat_and_slice_round_trip() {
        let mut t = tape();
        let a = t.constant(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = t.constant(vec![5.0, 6.0], &[1, 2]).unwrap();
        let cat = t.concat_rows(&[a, b]).unwrap();
        assert_eq!(t.shape(cat), &[3, 2]);
        let back = t.slice_rows(cat, 2, 1).unwrap();
        assert_eq!(t.data(back), &[5.0, 6.0]);
        let col = t.slice_cols(cat, 1, 1).unwrap();
        assert_eq!(t.data(col), &[2.0, 4.0, 6.0]);
    }
}

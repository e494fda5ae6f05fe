//! Reverse-mode automatic differentiation on a Wengert tape whose entries
//! are whole matrices — real tensors or split-complex matrices — rather than
//! scalars.
//!
//! Complex values never exist as `a+bi` scalars on the tape: a complex node
//! carries a pair of real tensors, and its "gradient" is the pair
//! (∂L/∂Re, ∂L/∂Im) packed into a [`ComplexMatrix`] for convenience. With
//! that convention the adjoint rules take their familiar matrix form, e.g.
//! for `C = A·B` the pullbacks are `dA += G·Bᴴ` and `dB += Aᴴ·G`.
//!
//! The op set is exactly what the neural beamformer's forward pass and its
//! spectral-efficiency loss need: affine layers batched over columns,
//! rectifiers, concatenation/slicing plumbing, unit-modulus reconstruction
//! `exp(jX)`, Frobenius normalization, and `ln det` of a Hermitian positive
//! definite matrix via Cholesky.
//!
//! Values are immutable once recorded ([`std::sync::Arc`] inside), so tapes
//! for different samples can be built and differentiated on worker threads
//! without any shared mutable state.

use std::sync::Arc;

use crate::linalg::{Cholesky, ComplexMatrix};
use crate::tensor::{self, RealTensor};
use crate::{Error, Result};

/// Index of a node on the tape.
pub type NodeId = usize;

/// A recorded value: real tensor or split-complex matrix.
#[derive(Debug, Clone)]
pub enum Value {
    Real(Arc<RealTensor>),
    Complex(Arc<ComplexMatrix>),
}

/// Gradient of a node. For complex nodes the `re`/`im` planes of the matrix
/// hold ∂L/∂Re and ∂L/∂Im respectively.
#[derive(Debug, Clone)]
pub enum Grad {
    Real(RealTensor),
    Complex(ComplexMatrix),
}

#[derive(Debug, Clone)]
enum Op {
    /// Leaf; the node's `needs_grad` flag marks differentiation targets.
    Source,
    Add { a: NodeId, b: NodeId },
    Sub { a: NodeId, b: NodeId },
    ScaleConst { a: NodeId, c: f64 },
    AddN { inputs: Vec<NodeId> },
    MatMul { a: NodeId, b: NodeId },
    Adjoint { a: NodeId },
    AddIdentity { a: NodeId },
    ExpJ { a: NodeId },
    MakeComplex { re: NodeId, im: NodeId },
    FrobNorm { a: NodeId },
    DivByScalar { a: NodeId, s: NodeId },
    LogDetHpd { a: NodeId },
    AffineCols { w: NodeId, x: NodeId, b: NodeId },
    Relu { x: NodeId },
    Transpose { x: NodeId },
    ConcatRows { inputs: Vec<NodeId> },
    SliceRows { x: NodeId, start: usize, len: usize },
    SliceCols { x: NodeId, start: usize, len: usize },
    BroadcastCols { x: NodeId, group: usize },
    MeanCols { x: NodeId, group: usize },
    ReshapeColMajor { x: NodeId, rows: usize, cols: usize },
}

struct Node {
    op: Op,
    value: Value,
    needs_grad: bool,
}

/// Hermitian tolerance used when factorizing `ln det` inputs.
const LOGDET_HERM_TOL: f64 = 1e-9;

/// Wengert tape. Build a trace with the op methods, then call
/// [`Tape::backward`] on a scalar output.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Cholesky factors saved by `log_det_hpd` for reuse in the backward pass.
    factors: Vec<Option<Cholesky>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Value, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { op, value, needs_grad });
        self.factors.push(None);
        self.nodes.len() - 1
    }

    // ── sources ─────────────────────────────────────────────────────────

    /// Real leaf that will receive a gradient.
    pub fn param(&mut self, t: Arc<RealTensor>) -> NodeId {
        self.push(Op::Source, Value::Real(t), true)
    }

    /// Real leaf treated as a constant.
    pub fn constant_real(&mut self, t: RealTensor) -> NodeId {
        self.push(Op::Source, Value::Real(Arc::new(t)), false)
    }

    /// Complex leaf treated as a constant (e.g. a channel matrix).
    pub fn constant_complex(&mut self, m: ComplexMatrix) -> NodeId {
        self.push(Op::Source, Value::Complex(Arc::new(m)), false)
    }

    // ── value access ────────────────────────────────────────────────────

    pub fn value(&self, id: NodeId) -> &Value {
        &self.nodes[id].value
    }

    /// Real tensor held by `id`; errors if the node is complex.
    pub fn real(&self, id: NodeId) -> Result<&RealTensor> {
        match &self.nodes[id].value {
            Value::Real(t) => Ok(t),
            Value::Complex(_) => Err(Error::Contract(format!("node {id} is complex, expected real"))),
        }
    }

    /// Complex matrix held by `id`; errors if the node is real.
    pub fn complex(&self, id: NodeId) -> Result<&ComplexMatrix> {
        match &self.nodes[id].value {
            Value::Complex(m) => Ok(m),
            Value::Real(_) => Err(Error::Contract(format!("node {id} is real, expected complex"))),
        }
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    // ── arithmetic (real or complex, both operands alike) ───────────────

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = match (&self.nodes[a].value, &self.nodes[b].value) {
            (Value::Real(x), Value::Real(y)) => {
                check_same_shape("add", x.shape(), y.shape())?;
                let mut out = (**x).clone();
                for (o, v) in out.data_mut().iter_mut().zip(y.data()) {
                    *o += v;
                }
                Value::Real(Arc::new(out))
            }
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(Arc::new(x.add(y)?)),
            _ => return Err(Error::Contract("add: operands must both be real or both complex".into())),
        };
        Ok(self.push(Op::Add { a, b }, value, self.needs(&[a, b])))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = match (&self.nodes[a].value, &self.nodes[b].value) {
            (Value::Real(x), Value::Real(y)) => {
                check_same_shape("sub", x.shape(), y.shape())?;
                let mut out = (**x).clone();
                for (o, v) in out.data_mut().iter_mut().zip(y.data()) {
                    *o -= v;
                }
                Value::Real(Arc::new(out))
            }
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(Arc::new(x.sub(y)?)),
            _ => return Err(Error::Contract("sub: operands must both be real or both complex".into())),
        };
        Ok(self.push(Op::Sub { a, b }, value, self.needs(&[a, b])))
    }

    /// Multiply every entry by a compile-time-known real constant.
    pub fn scale_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = match &self.nodes[a].value {
            Value::Real(x) => {
                let mut out = (**x).clone();
                for v in out.data_mut().iter_mut() {
                    *v *= c;
                }
                Value::Real(Arc::new(out))
            }
            Value::Complex(x) => Value::Complex(Arc::new(x.scale(c))),
        };
        self.push(Op::ScaleConst { a, c }, value, self.needs(&[a]))
    }

    /// Entrywise sum of any number of same-shaped nodes.
    pub fn add_n(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Degenerate("add_n of an empty collection".into()));
        }
        let first = self.real(inputs[0])?;
        let mut out = (*first).clone();
        for &id in &inputs[1..] {
            let t = self.real(id)?;
            check_same_shape("add_n", out.shape(), t.shape())?;
            for (o, v) in out.data_mut().iter_mut().zip(t.data()) {
                *o += v;
            }
        }
        Ok(self.push(
            Op::AddN { inputs: inputs.to_vec() },
            Value::Real(Arc::new(out)),
            self.needs(inputs),
        ))
    }

    // ── complex structure ───────────────────────────────────────────────

    /// Matrix product; both operands real or both complex.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = match (&self.nodes[a].value, &self.nodes[b].value) {
            (Value::Complex(x), Value::Complex(y)) => Value::Complex(Arc::new(x.matmul(y)?)),
            (Value::Real(x), Value::Real(y)) => {
                let (m, k) = x.dims();
                let (k2, n) = y.dims();
                if k != k2 {
                    return Err(Error::dim("matmul", format!("{m}x{k} times {k2}x{n}")));
                }
                let data = tensor::matmul(x.data(), y.data(), m, k, n);
                Value::Real(Arc::new(RealTensor::matrix(m, n, data)?))
            }
            _ => return Err(Error::Contract("matmul: operands must both be real or both complex".into())),
        };
        Ok(self.push(Op::MatMul { a, b }, value, self.needs(&[a, b])))
    }

    /// Conjugate transpose of a complex node.
    pub fn adjoint(&mut self, a: NodeId) -> Result<NodeId> {
        let m = self.complex(a)?.adjoint();
        Ok(self.push(Op::Adjoint { a }, Value::Complex(Arc::new(m)), self.needs(&[a])))
    }

    /// `A + I` for a square complex node.
    pub fn add_identity(&mut self, a: NodeId) -> Result<NodeId> {
        let m = self.complex(a)?.add_identity()?;
        Ok(self.push(Op::AddIdentity { a }, Value::Complex(Arc::new(m)), self.needs(&[a])))
    }

    /// Entrywise `exp(j·x)` of a real node, producing a complex node of the
    /// same shape with unit-modulus entries.
    pub fn exp_j(&mut self, a: NodeId) -> Result<NodeId> {
        let x = self.real(a)?;
        let (r, c) = x.dims();
        let mut re = RealTensor::zeros(&[r, c]);
        let mut im = RealTensor::zeros(&[r, c]);
        for (i, &v) in x.data().iter().enumerate() {
            let (s, co) = v.sin_cos();
            re.data_mut()[i] = co;
            im.data_mut()[i] = s;
        }
        let m = ComplexMatrix::from_parts(re, im)?;
        Ok(self.push(Op::ExpJ { a }, Value::Complex(Arc::new(m)), self.needs(&[a])))
    }

    /// Pair two equally shaped real nodes into a complex node.
    pub fn make_complex(&mut self, re: NodeId, im: NodeId) -> Result<NodeId> {
        let m = ComplexMatrix::from_parts(self.real(re)?.clone(), self.real(im)?.clone())?;
        Ok(self.push(Op::MakeComplex { re, im }, Value::Complex(Arc::new(m)), self.needs(&[re, im])))
    }

    /// Frobenius norm of a complex node as a real scalar node.
    pub fn frob_norm(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.complex(a)?.frob_norm();
        Ok(self.push(Op::FrobNorm { a }, Value::Real(Arc::new(RealTensor::scalar(n))), self.needs(&[a])))
    }

    /// Divide a (real or complex) node by a positive real scalar node.
    pub fn div_by_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId> {
        let sv = {
            let st = self.real(s)?;
            if st.numel() != 1 {
                return Err(Error::dim("div_by_scalar", format!("divisor has shape {:?}", st.shape())));
            }
            st.scalar_value()
        };
        if sv == 0.0 {
            return Err(Error::Degenerate("division by a zero scalar node".into()));
        }
        let value = match &self.nodes[a].value {
            Value::Real(x) => {
                let mut out = (**x).clone();
                for v in out.data_mut().iter_mut() {
                    *v /= sv;
                }
                Value::Real(Arc::new(out))
            }
            Value::Complex(x) => Value::Complex(Arc::new(x.scale(1.0 / sv))),
        };
        Ok(self.push(Op::DivByScalar { a, s }, value, self.needs(&[a, s])))
    }

    /// `ln det` of a Hermitian positive definite complex node. The Cholesky
    /// factor is kept for the backward pass, whose adjoint is the (Hermitian)
    /// inverse applied through the split representation.
    pub fn log_det_hpd(&mut self, a: NodeId) -> Result<NodeId> {
        let chol = self.complex(a)?.cholesky(LOGDET_HERM_TOL)?;
        let ld = chol.log_det();
        let id = self.push(
            Op::LogDetHpd { a },
            Value::Real(Arc::new(RealTensor::scalar(ld))),
            self.needs(&[a]),
        );
        self.factors[id] = Some(chol);
        Ok(id)
    }

    // ── real network plumbing ───────────────────────────────────────────

    /// `W·X + b` broadcast over the columns of `X`.
    pub fn affine_cols(&mut self, w: NodeId, x: NodeId, b: NodeId) -> Result<NodeId> {
        let (m, n) = self.real(w)?.dims();
        let (xr, xc) = self.real(x)?.dims();
        let (br, bc) = self.real(b)?.dims();
        if xr != n || br != m || bc != 1 {
            return Err(Error::dim(
                "affine_cols",
                format!("W {m}x{n}, X {xr}x{xc}, b {br}x{bc}"),
            ));
        }
        let mut out = tensor::matmul(self.real(w)?.data(), self.real(x)?.data(), m, n, xc);
        tensor::add_bias_columns(&mut out, self.real(b)?.data(), m, xc);
        Ok(self.push(
            Op::AffineCols { w, x, b },
            Value::Real(Arc::new(RealTensor::matrix(m, xc, out)?)),
            self.needs(&[w, x, b]),
        ))
    }

    /// Entrywise rectifier `max(x, 0)`.
    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.real(x)?;
        let mut out = t.clone();
        for v in out.data_mut().iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        Ok(self.push(Op::Relu { x }, Value::Real(Arc::new(out)), self.needs(&[x])))
    }

    /// Real matrix transpose.
    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        let t = self.real(x)?;
        let (r, c) = t.dims();
        let data = tensor::transpose(t.data(), r, c);
        Ok(self.push(
            Op::Transpose { x },
            Value::Real(Arc::new(RealTensor::matrix(c, r, data)?)),
            self.needs(&[x]),
        ))
    }

    /// Stack real nodes on top of each other; all must share a column count.
    pub fn concat_rows(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::Degenerate("concat_rows of an empty collection".into()));
        }
        let cols = self.real(inputs[0])?.dims().1;
        let mut rows = 0;
        for &id in inputs {
            let (r, c) = self.real(id)?.dims();
            if c != cols {
                return Err(Error::dim("concat_rows", format!("column counts {cols} vs {c}")));
            }
            rows += r;
        }
        let mut out = RealTensor::zeros(&[rows, cols]);
        let mut row0 = 0;
        for &id in inputs {
            let t = self.real(id)?;
            let (r, _) = t.dims();
            out.data_mut()[row0 * cols..(row0 + r) * cols].copy_from_slice(t.data());
            row0 += r;
        }
        Ok(self.push(
            Op::ConcatRows { inputs: inputs.to_vec() },
            Value::Real(Arc::new(out)),
            self.needs(inputs),
        ))
    }

    /// Rows `start..start+len` of a real node.
    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.real(x)?;
        let (r, c) = t.dims();
        if start + len > r {
            return Err(Error::dim("slice_rows", format!("{start}+{len} out of {r} rows")));
        }
        let out = RealTensor::matrix(len, c, t.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(Op::SliceRows { x, start, len }, Value::Real(Arc::new(out)), self.needs(&[x])))
    }

    /// Columns `start..start+len` of a real node.
    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let t = self.real(x)?;
        let (r, c) = t.dims();
        if start + len > c {
            return Err(Error::dim("slice_cols", format!("{start}+{len} out of {c} columns")));
        }
        let mut out = RealTensor::zeros(&[r, len]);
        for i in 0..r {
            out.data_mut()[i * len..(i + 1) * len]
                .copy_from_slice(&t.data()[i * c + start..i * c + start + len]);
        }
        Ok(self.push(Op::SliceCols { x, start, len }, Value::Real(Arc::new(out)), self.needs(&[x])))
    }

    /// Repeat every column `group` times consecutively:
    /// `(n×B) → (n×B·group)`.
    pub fn broadcast_cols(&mut self, x: NodeId, group: usize) -> Result<NodeId> {
        if group == 0 {
            return Err(Error::Degenerate("broadcast_cols with group 0".into()));
        }
        let t = self.real(x)?;
        let (r, c) = t.dims();
        let oc = c * group;
        let mut out = RealTensor::zeros(&[r, oc]);
        for i in 0..r {
            for j in 0..c {
                let v = t.data()[i * c + j];
                let row = &mut out.data_mut()[i * oc..(i + 1) * oc];
                for g in 0..group {
                    row[j * group + g] = v;
                }
            }
        }
        Ok(self.push(Op::BroadcastCols { x, group }, Value::Real(Arc::new(out)), self.needs(&[x])))
    }

    /// Mean over each consecutive group of `group` columns:
    /// `(n×B·group) → (n×B)`.
    ///
    /// Within a group the summands are ordered canonically by value before
    /// adding, so the result is bit-identical under any permutation of the
    /// group's columns — the property that makes the beamformer's analog
    /// output exactly invariant to subcarrier reordering.
    pub fn mean_cols(&mut self, x: NodeId, group: usize) -> Result<NodeId> {
        let t = self.real(x)?;
        let (r, c) = t.dims();
        if group == 0 || c % group != 0 {
            return Err(Error::dim("mean_cols", format!("{c} columns in groups of {group}")));
        }
        let oc = c / group;
        let mut out = RealTensor::zeros(&[r, oc]);
        let mut buf = vec![0.0f64; group];
        for i in 0..r {
            for s in 0..oc {
                for g in 0..group {
                    buf[g] = t.data()[i * c + s * group + g];
                }
                buf.sort_unstable_by(f64::total_cmp);
                let sum: f64 = buf.iter().sum();
                out.data_mut()[i * oc + s] = sum / group as f64;
            }
        }
        Ok(self.push(Op::MeanCols { x, group }, Value::Real(Arc::new(out)), self.needs(&[x])))
    }

    /// Reinterpret a flat column vector as a `rows`×`cols` matrix filled
    /// column by column.
    pub fn reshape_col_major(&mut self, x: NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let t = self.real(x)?;
        if t.numel() != rows * cols {
            return Err(Error::dim(
                "reshape_col_major",
                format!("{} values into {rows}x{cols}", t.numel()),
            ));
        }
        let mut out = RealTensor::zeros(&[rows, cols]);
        for j in 0..cols {
            for i in 0..rows {
                out.data_mut()[i * cols + j] = t.data()[j * rows + i];
            }
        }
        Ok(self.push(
            Op::ReshapeColMajor { x, rows, cols },
            Value::Real(Arc::new(out)),
            self.needs(&[x]),
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Reverse sweep from a real scalar `output`. Returns gradients for leaf
    /// parameters (and the output itself); intermediate gradients are
    /// dropped as soon as they have been propagated. Leaves that do not
    /// influence the output simply report zero via [`Gradients::real_or_zeros`].
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        match &self.nodes[output].value {
            Value::Real(t) if t.numel() == 1 => {}
            _ => {
                return Err(Error::Contract(
                    "backward requires a real scalar output node".into(),
                ))
            }
        }
        let mut grads: Vec<Option<Grad>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output] = Some(Grad::Real(RealTensor::scalar(1.0)));
        for id in (0..=output).rev() {
            if !self.nodes[id].needs_grad || matches!(self.nodes[id].op, Op::Source) {
                continue; // leaf gradients stay in place for the caller
            }
            let Some(g) = grads[id].take() else { continue };
            self.backprop_node(id, &g, &mut grads)?;
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, id: NodeId, g: &Grad, grads: &mut Vec<Option<Grad>>) -> Result<()> {
        match &self.nodes[id].op {
            Op::Source => {}
            Op::Add { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, scale_grad(g, -1.0));
            }
            Op::ScaleConst { a, c } => {
                self.accumulate(grads, *a, scale_grad(g, *c));
            }
            Op::AddN { inputs } => {
                for &i in inputs {
                    self.accumulate(grads, i, g.clone());
                }
            }
            Op::MatMul { a, b } => match (g, &self.nodes[*a].value, &self.nodes[*b].value) {
                (Grad::Complex(gc), Value::Complex(av), Value::Complex(bv)) => {
                    if self.nodes[*a].needs_grad {
                        self.accumulate(grads, *a, Grad::Complex(gc.matmul(&bv.adjoint())?));
                    }
                    if self.nodes[*b].needs_grad {
                        self.accumulate(grads, *b, Grad::Complex(av.adjoint().matmul(gc)?));
                    }
                }
                (Grad::Real(gr), Value::Real(av), Value::Real(bv)) => {
                    let (m, k) = av.dims();
                    let (_, n) = bv.dims();
                    if self.nodes[*a].needs_grad {
                        let bt = tensor::transpose(bv.data(), k, n);
                        let da = tensor::matmul(gr.data(), &bt, m, n, k);
                        self.accumulate(grads, *a, Grad::Real(RealTensor::matrix(m, k, da)?));
                    }
                    if self.nodes[*b].needs_grad {
                        let at = tensor::transpose(av.data(), m, k);
                        let db = tensor::matmul(&at, gr.data(), k, m, n);
                        self.accumulate(grads, *b, Grad::Real(RealTensor::matrix(k, n, db)?));
                    }
                }
                _ => unreachable!("matmul forward enforces matching kinds"),
            },
            Op::Adjoint { a } => {
                let Grad::Complex(gc) = g else { unreachable!() };
                self.accumulate(grads, *a, Grad::Complex(gc.adjoint()));
            }
            Op::AddIdentity { a } => {
                self.accumulate(grads, *a, g.clone());
            }
            Op::ExpJ { a } => {
                // d/dx Re e^{jx} = −sin x = −Im(out), d/dx Im e^{jx} = cos x = Re(out)
                let Grad::Complex(gc) = g else { unreachable!() };
                let Value::Complex(out) = &self.nodes[id].value else { unreachable!() };
                let xt = self.real(*a)?;
                let mut dx = RealTensor::zeros_like(xt);
                for (i, d) in dx.data_mut().iter_mut().enumerate() {
                    *d = gc.im().data()[i] * out.re().data()[i]
                        - gc.re().data()[i] * out.im().data()[i];
                }
                self.accumulate(grads, *a, Grad::Real(dx));
            }
            Op::MakeComplex { re, im } => {
                let Grad::Complex(gc) = g else { unreachable!() };
                if self.nodes[*re].needs_grad {
                    self.accumulate(grads, *re, Grad::Real(gc.re().clone()));
                }
                if self.nodes[*im].needs_grad {
                    self.accumulate(grads, *im, Grad::Real(gc.im().clone()));
                }
            }
            Op::FrobNorm { a } => {
                let Grad::Real(gr) = g else { unreachable!() };
                let gs = gr.scalar_value();
                let Value::Real(nv) = &self.nodes[id].value else { unreachable!() };
                let n = nv.scalar_value();
                let av = self.complex(*a)?;
                if n == 0.0 {
                    // Unreachable through the public designers (normalization
                    // guards reject zero-norm inputs); the subgradient 0 keeps
                    // stray traces finite.
                    return Ok(());
                }
                let s = gs / n;
                let mut d = ComplexMatrix::zeros(av.rows(), av.cols());
                for (i, v) in d.re_data_mut().iter_mut().enumerate() {
                    *v = s * av.re().data()[i];
                }
                for (i, v) in d.im_data_mut().iter_mut().enumerate() {
                    *v = s * av.im().data()[i];
                }
                self.accumulate(grads, *a, Grad::Complex(d));
            }
            Op::DivByScalar { a, s } => {
                let sv = self.real(*s)?.scalar_value();
                if self.nodes[*a].needs_grad {
                    self.accumulate(grads, *a, scale_grad(g, 1.0 / sv));
                }
                if self.nodes[*s].needs_grad {
                    // out = a/s ⇒ ∂L/∂s = −(1/s)·Σ ⟨g, out⟩ over both planes
                    let Value::Complex(out) = &self.nodes[id].value else {
                        // real variant
                        let Value::Real(out) = &self.nodes[id].value else { unreachable!() };
                        let Grad::Real(gr) = g else { unreachable!() };
                        let dot: f64 = gr.data().iter().zip(out.data()).map(|(x, y)| x * y).sum();
                        self.accumulate(grads, *s, Grad::Real(RealTensor::scalar(-dot / sv)));
                        return Ok(());
                    };
                    let Grad::Complex(gc) = g else { unreachable!() };
                    let mut dot = 0.0;
                    for (x, y) in gc.re().data().iter().zip(out.re().data()) {
                        dot += x * y;
                    }
                    for (x, y) in gc.im().data().iter().zip(out.im().data()) {
                        dot += x * y;
                    }
                    self.accumulate(grads, *s, Grad::Real(RealTensor::scalar(-dot / sv)));
                }
            }
            Op::LogDetHpd { a } => {
                let Grad::Real(gr) = g else { unreachable!() };
                let gs = gr.scalar_value();
                let inv = self.factors[id]
                    .as_ref()
                    .expect("log_det_hpd saved its factor")
                    .inverse()?;
                self.accumulate(grads, *a, Grad::Complex(inv.scale(gs)));
            }
            Op::AffineCols { w, x, b } => {
                let Grad::Real(gr) = g else { unreachable!() };
                let (m, n) = self.real(*w)?.dims();
                let (_, cols) = self.real(*x)?.dims();
                if self.nodes[*w].needs_grad {
                    let xt = tensor::transpose(self.real(*x)?.data(), n, cols);
                    let dw = tensor::matmul(gr.data(), &xt, m, cols, n);
                    self.accumulate(grads, *w, Grad::Real(RealTensor::matrix(m, n, dw)?));
                }
                if self.nodes[*x].needs_grad {
                    let wt = tensor::transpose(self.real(*w)?.data(), m, n);
                    let dx = tensor::matmul(&wt, gr.data(), n, m, cols);
                    self.accumulate(grads, *x, Grad::Real(RealTensor::matrix(n, cols, dx)?));
                }
                if self.nodes[*b].needs_grad {
                    let mut db = RealTensor::zeros(&[m]);
                    for i in 0..m {
                        db.data_mut()[i] = gr.data()[i * cols..(i + 1) * cols].iter().sum();
                    }
                    self.accumulate(grads, *b, Grad::Real(db));
                }
            }
            Op::Relu { x } => {
                let Grad::Real(gr) = g else { unreachable!() };
                let xt = self.real(*x)?;
                let mut dx = RealTensor::zeros_like(xt);
                for (i, d) in dx.data_mut().iter_mut().enumerate() {
                    if xt.data()[i] > 0.0 {
                        *d = gr.data()[i];
                    }
                }
                self.accumulate(grads, *x, Grad::Real(dx));
            }
            Op::Transpose { x } => {
                let Grad::Real(gr) = g else { unreachable!() };
                let (r, c) = gr.dims();
                let data = tensor::transpose(gr.data(), r, c);
                self.accumulate(grads, *x, Grad::Real(RealTensor::matrix(c, r, data)?));
            }
            Op::ConcatRows { inputs } => {
                let Grad::Real(gr) = g else { unreachable!() };
                let (_, cols) = gr.dims();
                let mut row0 = 0;
                for &i in inputs {
                    let (r, _) = self.real(i)?.dims();
                    if self.nodes[i].needs_grad {
                        let seg = gr.data()[row0 * cols..(row0 + r) * cols].to_vec();
                        self.accumulate(grads, i, Grad::Real(RealTensor::matrix(r, cols, seg)?));
                    }
                    row0 += r;
                }
            }
            Op::SliceRows { x, start, len } => {
                let Grad::Real(gr) = g else { unreachable!() };
                let xt = self.real(*x)?;
                let (r, c) = xt.dims();
                let mut dx = RealTensor::zeros(&[r, c]);
                dx.data_mut()[start * c..(start + len) * c].copy_from_slice(gr.data());
                self.accumulate(grads, *x, Grad::Real(dx));
            }
            Op::SliceCols { x, start, len } => {
                let Grad::Real(gr) = g else { unreachable!() };
                let xt = self.real(*x)?;
                let (r, c) = xt.dims();
                let mut dx = RealTensor::zeros(&[r, c]);
                for i in 0..r {
                    dx.data_mut()[i * c + start..i * c + start + len]
                        .copy_from_slice(&gr.data()[i * len..(i + 1) * len]);
                }
                self.accumulate(grads, *x, Grad::Real(dx));
            }
            Op::BroadcastCols { x, group } => {
                let Grad::Real(gr) = g else { unreachable!() };
                let xt = self.real(*x)?;
                let (r, c) = xt.dims();
                let oc = c * group;
                let mut dx = RealTensor::zeros(&[r, c]);
                for i in 0..r {
                    for j in 0..c {
                        let mut s = 0.0;
                        for k in 0..*group {
                            s += gr.data()[i * oc + j * group + k];
                        }
                        dx.data_mut()[i * c + j] = s;
                    }
                }
                self.accumulate(grads, *x, Grad::Real(dx));
            }
            Op::MeanCols { x, group } => {
                let Grad::Real(gr) = g else { unreachable!() };
                let xt = self.real(*x)?;
                let (r, c) = xt.dims();
                let oc = c / group;
                let inv = 1.0 / *group as f64;
                let mut dx = RealTensor::zeros(&[r, c]);
                for i in 0..r {
                    for s in 0..oc {
                        let gv = gr.data()[i * oc + s] * inv;
                        for k in 0..*group {
                            dx.data_mut()[i * c + s * group + k] = gv;
                        }
                    }
                }
                self.accumulate(grads, *x, Grad::Real(dx));
            }
            Op::ReshapeColMajor { x, rows, cols } => {
                let Grad::Real(gr) = g else { unreachable!() };
                let mut dx = RealTensor::zeros_like(self.real(*x)?);
                for j in 0..*cols {
                    for i in 0..*rows {
                        dx.data_mut()[j * rows + i] = gr.data()[i * cols + j];
                    }
                }
                self.accumulate(grads, *x, Grad::Real(dx));
            }
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Grad>], id: NodeId, g: Grad) {
        if !self.nodes[id].needs_grad {
            return;
        }
        match &mut grads[id] {
            None => grads[id] = Some(g),
            Some(Grad::Real(acc)) => {
                let Grad::Real(t) = g else { panic!("gradient kind mismatch") };
                for (a, v) in acc.data_mut().iter_mut().zip(t.data()) {
                    *a += v;
                }
            }
            Some(Grad::Complex(acc)) => {
                let Grad::Complex(m) = g else { panic!("gradient kind mismatch") };
                for (a, v) in acc.re_data_mut().iter_mut().zip(m.re().data()) {
                    *a += v;
                }
                for (a, v) in acc.im_data_mut().iter_mut().zip(m.im().data()) {
                    *a += v;
                }
            }
        }
    }
}

fn scale_grad(g: &Grad, c: f64) -> Grad {
    match g {
        Grad::Real(t) => {
            let mut out = t.clone();
            for v in out.data_mut().iter_mut() {
                *v *= c;
            }
            Grad::Real(out)
        }
        Grad::Complex(m) => Grad::Complex(m.scale(c)),
    }
}

fn check_same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::dim(op, format!("{a:?} vs {b:?}")));
    }
    Ok(())
}

/// Gradients returned by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Grad>>,
}

impl Gradients {
    /// Gradient of a real node, if it was reached by the sweep.
    pub fn real(&self, id: NodeId) -> Option<&RealTensor> {
        match self.grads.get(id)? {
            Some(Grad::Real(t)) => Some(t),
            _ => None,
        }
    }

    /// Gradient of a real leaf, densified to zeros when the leaf never
    /// influenced the output.
    pub fn real_or_zeros(&self, id: NodeId, like: &RealTensor) -> RealTensor {
        match self.real(id) {
            Some(t) => t.clone(),
            None => RealTensor::zeros_like(like),
        }
    }
}

/// Compare the tape gradient of `build` against central finite differences
/// at `point`, returning the worst relative error over every coordinate of
/// every parameter. The relative error of a pair (a, f) is
/// `|a−f| / max(|a|, |f|, 1)`.
///
/// `build` must be a pure function of the parameter nodes it is given: it is
/// re-run once per perturbed coordinate.
pub fn grad_check<F>(build: F, point: &[RealTensor], step: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId> + Sync,
{
    let eval = |tensors: &[RealTensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors
            .iter()
            .map(|t| tape.param(Arc::new(t.clone())))
            .collect();
        let out = build(&mut tape, &ids)?;
        Ok(tape.real(out)?.scalar_value())
    };

    // Analytic gradients once.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = point.iter().map(|t| tape.param(Arc::new(t.clone()))).collect();
    let out = build(&mut tape, &ids)?;
    let grads = tape.backward(out)?;
    let analytic: Vec<RealTensor> = ids
        .iter()
        .zip(point)
        .map(|(&id, t)| grads.real_or_zeros(id, t))
        .collect();

    // One finite-difference probe per coordinate, fanned out over the pool.
    let coords: Vec<(usize, usize)> = point
        .iter()
        .enumerate()
        .flat_map(|(pi, t)| (0..t.numel()).map(move |ci| (pi, ci)))
        .collect();
    let worst = crate::parallel::map_reduce(
        coords.len(),
        || Ok(0.0f64),
        |idx| -> Result<f64> {
            let (pi, ci) = coords[idx];
            let mut plus = point.to_vec();
            plus[pi].data_mut()[ci] += step;
            let mut minus = point.to_vec();
            minus[pi].data_mut()[ci] -= step;
            let fd = (eval(&plus)? - eval(&minus)?) / (2.0 * step);
            let ad = analytic[pi].data()[ci];
            Ok((ad - fd).abs() / ad.abs().max(fd.abs()).max(1.0))
        },
        |a, b| match (a, b) {
            (Ok(x), Ok(y)) => Ok(x.max(y)),
            (Err(e), _) | (_, Err(e)) => Err(e),
        },
    )?;
    Ok(worst)
}

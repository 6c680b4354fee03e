//! Traced operations and their vector-Jacobian products.

use std::hash::Hasher;
use std::sync::Arc;

use rustfft::num_complex::Complex64;

use super::plans::{irfft_adjoint, rfft_adjoint, FilterBank, FramePlan, RateFilter};
use super::{hash_bits, LinearOperator, Node, Tape, Tensor, Var, MAX_RANK};
use crate::error::{Error, Result};
use crate::fft;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum ConvLayout {
    Single,
    FanOut,
    Rows,
}

pub(crate) enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    DivGuarded(usize, usize, f64),
    Minimum(usize, usize),
    Select(usize, usize, Arc<Vec<bool>>),
    Scale(usize, f64),
    AddScalar(usize),
    PowScalar(usize, f64),
    Sqrt(usize),
    Exp(usize),
    LogGuarded(usize, f64),
    Relu(usize),
    Abs(usize),
    Elu(usize),
    Clamp(usize, f64, f64),
    SumAll(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    ExpandFirst(usize),
    ExpandLast(usize),
    Reshape(usize),
    Transpose(usize),
    SliceLast(usize, usize),
    PadLast(usize, usize),
    MatMul(usize, usize),
    ConvFixed(usize, Arc<FilterBank>, ConvLayout),
    ConvCausal(usize, usize),
    Decimate(usize, Arc<RateFilter>),
    Upsample(usize, Arc<RateFilter>),
    AbsComplex(usize, f64),
    Abs2Complex(usize),
    ComplexScale(usize, usize),
    ComplexMul(usize, usize),
    Rfft(usize, usize),
    Irfft(usize, usize),
    Stft(usize, Arc<FramePlan>),
    Istft(usize, Arc<FramePlan>),
    LinearMap(usize, Arc<dyn LinearOperator>),
    Segments(usize, usize),
    PiecewiseGain {
        j: usize,
        a: usize,
        z: usize,
        knots: Arc<Vec<f64>>,
    },
    RecruitGain {
        e: usize,
        exponents: Arc<Vec<f64>>,
        lo: f64,
        hi: f64,
    },
    AttackRelease {
        j: usize,
        attack: f64,
        release: f64,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::DivGuarded(..) => "div_guarded",
            Op::Minimum(..) => "minimum",
            Op::Select(..) => "select",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::PowScalar(..) => "pow_scalar",
            Op::Sqrt(..) => "sqrt",
            Op::Exp(..) => "exp",
            Op::LogGuarded(..) => "log_guarded",
            Op::Relu(..) => "relu",
            Op::Abs(..) => "abs",
            Op::Elu(..) => "elu",
            Op::Clamp(..) => "clamp",
            Op::SumAll(..) => "sum",
            Op::SumAxis(..) => "sum_axis",
            Op::MeanAxis(..) => "mean_axis",
            Op::ExpandFirst(..) => "expand_first",
            Op::ExpandLast(..) => "expand_last",
            Op::Reshape(..) => "reshape",
            Op::Transpose(..) => "transpose",
            Op::SliceLast(..) => "slice_last",
            Op::PadLast(..) => "pad_last",
            Op::MatMul(..) => "matmul",
            Op::ConvFixed(..) => "conv1d_fixed",
            Op::ConvCausal(..) => "conv1d_learnable",
            Op::Decimate(..) => "strided_conv1d",
            Op::Upsample(..) => "zero_stuff_upsample",
            Op::AbsComplex(..) => "abs_complex_guarded",
            Op::Abs2Complex(..) => "abs2_complex",
            Op::ComplexScale(..) => "complex_scale",
            Op::ComplexMul(..) => "complex_mul",
            Op::Rfft(..) => "rfft",
            Op::Irfft(..) => "irfft",
            Op::Stft(..) => "stft",
            Op::Istft(..) => "istft",
            Op::LinearMap(..) => "linear_map",
            Op::Segments(..) => "segments",
            Op::PiecewiseGain { .. } => "piecewise_gain",
            Op::RecruitGain { .. } => "recruit_gain",
            Op::AttackRelease { .. } => "attack_release",
        }
    }

    pub(crate) fn parents(&self) -> Vec<usize> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::DivGuarded(a, b, _)
            | Op::Minimum(a, b)
            | Op::Select(a, b, _)
            | Op::MatMul(a, b)
            | Op::ConvCausal(a, b)
            | Op::ComplexScale(a, b)
            | Op::ComplexMul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::PowScalar(a, _)
            | Op::Sqrt(a)
            | Op::Exp(a)
            | Op::LogGuarded(a, _)
            | Op::Relu(a)
            | Op::Abs(a)
            | Op::Elu(a)
            | Op::Clamp(a, ..)
            | Op::SumAll(a)
            | Op::SumAxis(a, _)
            | Op::MeanAxis(a, _)
            | Op::ExpandFirst(a)
            | Op::ExpandLast(a)
            | Op::Reshape(a)
            | Op::Transpose(a)
            | Op::SliceLast(a, _)
            | Op::PadLast(a, _)
            | Op::ConvFixed(a, ..)
            | Op::Decimate(a, _)
            | Op::Upsample(a, _)
            | Op::AbsComplex(a, _)
            | Op::Abs2Complex(a)
            | Op::Rfft(a, _)
            | Op::Irfft(a, _)
            | Op::Stft(a, _)
            | Op::Istft(a, _)
            | Op::LinearMap(a, _)
            | Op::Segments(a, _) => vec![a],
            Op::PiecewiseGain { j, a, z, .. } => vec![j, a, z],
            Op::RecruitGain { e, .. } => vec![e],
            Op::AttackRelease { j, .. } => vec![j],
        }
    }
}

fn mismatch(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::ShapeMismatch {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

/// `(outer, dim, inner)` for a reduction over `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor {
        shape: t.shape.clone(),
        data: t.data.iter().map(|&v| f(v)).collect(),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    Tensor {
        shape: a.shape.clone(),
        data: a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    }
}

fn with_shape(shape: &[usize], data: Vec<f64>) -> Tensor {
    Tensor {
        shape: shape.to_vec(),
        data,
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

/// Slopes and slope-weighted knots accumulated per band: index `k` holds
/// the sums over the first `k` segments.
fn piecewise_prefix(a: &[f64], knots: &[f64], bands: usize) -> (Vec<f64>, Vec<f64>) {
    let h = knots.len();
    let mut pa = vec![0.0; bands * (h + 1)];
    let mut pal = vec![0.0; bands * (h + 1)];
    for c in 0..bands {
        for i in 0..h {
            pa[c * (h + 1) + i + 1] = pa[c * (h + 1) + i] + a[c * h + i];
            pal[c * (h + 1) + i + 1] = pal[c * (h + 1) + i] + a[c * h + i] * knots[i];
        }
    }
    (pa, pal)
}

/// Number of knots strictly below `j`.
fn active_segments(knots: &[f64], j: f64) -> usize {
    knots.partition_point(|&l| l < j)
}

fn smoother_weight(prev: f64, input: f64, attack: f64, release: f64) -> f64 {
    if prev - input >= 0.0 {
        attack
    } else {
        release
    }
}

impl Tape {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        self.same_shape(op.name(), a, b)?;
        let v = zip(self.value(a), self.value(b), f);
        self.push(v, op)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let v = map(self.value(a), f);
        self.push(v, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    /// `a / (b + eps)`, for nonnegative denominators such as magnitudes.
    pub fn div_guarded(&mut self, a: Var, b: Var, eps: f64) -> Result<Var> {
        self.binary(a, b, Op::DivGuarded(a.0, b.0, eps), |x, y| x / (y + eps))
    }

    /// Elementwise minimum; ties select `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Op::Minimum(a.0, b.0), |x, y| if x <= y { x } else { y })
    }

    /// `mask ? a : b` elementwise, with a constant mask.
    pub fn select(&mut self, mask: Arc<Vec<bool>>, a: Var, b: Var) -> Result<Var> {
        self.same_shape("select", a, b)?;
        if mask.len() != self.value(a).len() {
            return Err(mismatch("select", &[mask.len()], self.shape(a)));
        }
        let (va, vb) = (self.value(a), self.value(b));
        let data = mask
            .iter()
            .zip(va.data.iter().zip(&vb.data))
            .map(|(&m, (&x, &y))| if m { x } else { y })
            .collect();
        let v = with_shape(&va.shape, data);
        self.push(v, Op::Select(a.0, b.0, mask))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::Scale(a.0, c), |x| x * c)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.unary(a, Op::AddScalar(a.0), |x| x + c)
    }

    pub fn pow_scalar(&mut self, a: Var, p: f64) -> Result<Var> {
        self.unary(a, Op::PowScalar(a.0, p), |x| x.powf(p))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if let Some(v) = self.value(a).data.iter().find(|v| **v < 0.0) {
            return Err(Error::param(format!("sqrt of negative value {v}")));
        }
        self.unary(a, Op::Sqrt(a.0), f64::sqrt)
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Exp(a.0), f64::exp)
    }

    /// `ln(max(a, eps))`.
    pub fn log_guarded(&mut self, a: Var, eps: f64) -> Result<Var> {
        self.unary(a, Op::LogGuarded(a.0, eps), |x| x.max(eps).ln())
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Relu(a.0), |x| x.max(0.0))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Abs(a.0), f64::abs)
    }

    pub fn elu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, Op::Elu(a.0), |x| if x > 0.0 { x } else { x.exp_m1() })
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(Error::param(format!("clamp range [{lo}, {hi}] is empty")));
        }
        self.unary(a, Op::Clamp(a.0, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data.iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a.0))
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, data) = self.reduce_axis("sum_axis", a, axis)?;
        self.push(with_shape(&shape, data), Op::SumAxis(a.0, axis))
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (shape, mut data) = self.reduce_axis("mean_axis", a, axis)?;
        let dim = self.shape(a)[axis] as f64;
        data.iter_mut().for_each(|v| *v /= dim);
        self.push(with_shape(&shape, data), Op::MeanAxis(a.0, axis))
    }

    fn reduce_axis(&self, op: &'static str, a: Var, axis: usize) -> Result<(Vec<usize>, Vec<f64>)> {
        let t = self.value(a);
        if axis >= t.rank() {
            return Err(mismatch(op, &t.shape, &[axis]));
        }
        let (outer, dim, inner) = split_axis(&t.shape, axis);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for d in 0..dim {
                let src = &t.data[(o * dim + d) * inner..(o * dim + d + 1) * inner];
                for (y, x) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *y += x;
                }
            }
        }
        let mut shape = t.shape.clone();
        shape.remove(axis);
        Ok((shape, out))
    }

    /// Prepends an axis of length `n` by repetition.
    pub fn expand_first(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() >= MAX_RANK {
            return Err(mismatch("expand_first", &t.shape, &[n]));
        }
        let mut shape = vec![n];
        shape.extend_from_slice(&t.shape);
        let data = (0..n).flat_map(|_| t.data.iter().copied()).collect();
        self.push(with_shape(&shape, data), Op::ExpandFirst(a.0))
    }

    /// Appends an axis of length `n` by repetition.
    pub fn expand_last(&mut self, a: Var, n: usize) -> Result<Var> {
        let t = self.value(a);
        if t.rank() >= MAX_RANK {
            return Err(mismatch("expand_last", &t.shape, &[n]));
        }
        let mut shape = t.shape.clone();
        shape.push(n);
        let data = t.data.iter().flat_map(|&v| std::iter::repeat(v).take(n)).collect();
        self.push(with_shape(&shape, data), Op::ExpandLast(a.0))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if shape.iter().product::<usize>() != t.len() || shape.len() > MAX_RANK {
            return Err(mismatch("reshape", &t.shape, shape));
        }
        let v = with_shape(shape, t.data.clone());
        self.push(v, Op::Reshape(a.0))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(mismatch("transpose", &t.shape, &[0, 0]));
        }
        let (m, n) = (t.shape[0], t.shape[1]);
        let v = with_shape(&[n, m], transpose_raw(&t.data, m, n));
        self.push(v, Op::Transpose(a.0))
    }

    /// Elements `start..start + len` of the last axis.
    pub fn slice_last(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = t.rows_cols();
        if t.rank() == 0 || start + len > cols {
            return Err(mismatch("slice_last", &t.shape, &[start, len]));
        }
        let data = (0..rows)
            .flat_map(|r| t.data[r * cols + start..r * cols + start + len].iter().copied())
            .collect();
        let mut shape = t.shape.clone();
        *shape.last_mut().unwrap() = len;
        self.push(with_shape(&shape, data), Op::SliceLast(a.0, start))
    }

    /// Zero padding of the last axis.
    pub fn pad_last(&mut self, a: Var, before: usize, after: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = t.rows_cols();
        if t.rank() == 0 {
            return Err(mismatch("pad_last", &t.shape, &[before, after]));
        }
        let w = cols + before + after;
        let mut data = vec![0.0; rows * w];
        for r in 0..rows {
            data[r * w + before..r * w + before + cols].copy_from_slice(&t.data[r * cols..(r + 1) * cols]);
        }
        let mut shape = t.shape.clone();
        *shape.last_mut().unwrap() = w;
        self.push(with_shape(&shape, data), Op::PadLast(a.0, before))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(mismatch("matmul", &ta.shape, &tb.shape));
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let v = with_shape(&[m, n], matmul_raw(&ta.data, &tb.data, m, k, n));
        self.push(v, Op::MatMul(a.0, b.0))
    }

    /// Convolution along the last axis with a fixed bank. A rank-1 input
    /// with a multi-kernel bank fans out to one row per kernel; a rank-2
    /// input is filtered row by row (shared or per-row kernels).
    pub fn conv1d_fixed(&mut self, x: Var, bank: Arc<FilterBank>) -> Result<Var> {
        let t = self.value(x);
        let (layout, shape, data) = match (t.rank(), bank.len()) {
            (1, 1) => {
                let n = t.shape[0];
                (ConvLayout::Single, vec![bank.out_len(n)], bank.apply_fanout(&t.data))
            }
            (1, k) => {
                let n = t.shape[0];
                (ConvLayout::FanOut, vec![k, bank.out_len(n)], bank.apply_fanout(&t.data))
            }
            (2, k) if k == 1 || k == t.shape[0] => {
                let (r, n) = (t.shape[0], t.shape[1]);
                (ConvLayout::Rows, vec![r, bank.out_len(n)], bank.apply_rows(&t.data, r))
            }
            _ => return Err(mismatch("conv1d_fixed", &t.shape, &[bank.len(), bank.taps()])),
        };
        self.push(with_shape(&shape, data), Op::ConvFixed(x.0, bank, layout))
    }

    /// Causal per-column filtering along axis 0: `y[t, c] = sum_k w[k, c] x[t - k, c]`.
    pub fn conv1d_learnable(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.rank() != 2 || tw.rank() != 2 || tx.shape[1] != tw.shape[1] {
            return Err(mismatch("conv1d_learnable", &tx.shape, &tw.shape));
        }
        let (t_len, c) = (tx.shape[0], tx.shape[1]);
        let l = tw.shape[0];
        let mut out = vec![0.0; t_len * c];
        for t in 0..t_len {
            for k in 0..l.min(t + 1) {
                for ch in 0..c {
                    out[t * c + ch] += tw.data[k * c + ch] * tx.data[(t - k) * c + ch];
                }
            }
        }
        let v = with_shape(&tx.shape, out);
        self.push(v, Op::ConvCausal(x.0, w.0))
    }

    /// Anti-alias filtering followed by keeping every `factor`-th sample,
    /// along the last axis.
    pub fn strided_conv1d(&mut self, x: Var, rf: Arc<RateFilter>) -> Result<Var> {
        let t = self.value(x);
        let (rows, n) = t.rows_cols();
        if t.rank() == 0 || t.rank() > 2 {
            return Err(mismatch("strided_conv1d", &t.shape, &[rf.factor()]));
        }
        let m = rf.decimated_len(n);
        let data = (0..rows).flat_map(|r| rf.decimate(&t.data[r * n..(r + 1) * n])).collect();
        let mut shape = t.shape.clone();
        *shape.last_mut().unwrap() = m;
        self.push(with_shape(&shape, data), Op::Decimate(x.0, rf))
    }

    /// Zero-stuffing interpolation to `out_len` samples along the last axis.
    pub fn zero_stuff_upsample(&mut self, x: Var, rf: Arc<RateFilter>, out_len: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, n) = t.rows_cols();
        if t.rank() == 0 || t.rank() > 2 {
            return Err(mismatch("zero_stuff_upsample", &t.shape, &[rf.factor()]));
        }
        let data = (0..rows)
            .flat_map(|r| rf.upsample(&t.data[r * n..(r + 1) * n], out_len))
            .collect();
        let mut shape = t.shape.clone();
        *shape.last_mut().unwrap() = out_len;
        self.push(with_shape(&shape, data), Op::Upsample(x.0, rf))
    }

    fn complex_input(&self, op: &'static str, z: Var) -> Result<Vec<usize>> {
        let t = self.value(z);
        if t.rank() == 0 || *t.shape.last().unwrap() != 2 {
            return Err(mismatch(op, &t.shape, &[2]));
        }
        Ok(t.shape[..t.rank() - 1].to_vec())
    }

    /// `|z|` over a trailing re/im axis; the VJP divides by `|z| + eps`.
    pub fn abs_complex_guarded(&mut self, z: Var, eps: f64) -> Result<Var> {
        let shape = self.complex_input("abs_complex_guarded", z)?;
        let data = self.value(z).data.chunks(2).map(|c| c[0].hypot(c[1])).collect();
        self.push(with_shape(&shape, data), Op::AbsComplex(z.0, eps))
    }

    /// `|z|^2` over a trailing re/im axis.
    pub fn abs2_complex(&mut self, z: Var) -> Result<Var> {
        let shape = self.complex_input("abs2_complex", z)?;
        let data = self.value(z).data.chunks(2).map(|c| c[0] * c[0] + c[1] * c[1]).collect();
        self.push(with_shape(&shape, data), Op::Abs2Complex(z.0))
    }

    /// Complex tensor times a real tensor of the leading shape.
    pub fn complex_scale(&mut self, z: Var, s: Var) -> Result<Var> {
        let shape = self.complex_input("complex_scale", z)?;
        if self.shape(s) != shape.as_slice() {
            return Err(mismatch("complex_scale", self.shape(z), self.shape(s)));
        }
        let (tz, ts) = (self.value(z), self.value(s));
        let data = tz
            .data
            .chunks(2)
            .zip(&ts.data)
            .flat_map(|(c, &g)| [c[0] * g, c[1] * g])
            .collect();
        let v = with_shape(&tz.shape, data);
        self.push(v, Op::ComplexScale(z.0, s.0))
    }

    pub fn complex_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.complex_input("complex_mul", a)?;
        self.same_shape("complex_mul", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data
            .chunks(2)
            .zip(tb.data.chunks(2))
            .flat_map(|(p, q)| [p[0] * q[0] - p[1] * q[1], p[0] * q[1] + p[1] * q[0]])
            .collect();
        let v = with_shape(&ta.shape, data);
        self.push(v, Op::ComplexMul(a.0, b.0))
    }

    /// One-sided DFT of each row (zero padded to `n`), `[.., n/2+1, 2]`.
    pub fn rfft(&mut self, x: Var, n: usize) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = t.rows_cols();
        if t.rank() == 0 || t.rank() > 2 || cols > n {
            return Err(mismatch("rfft", &t.shape, &[n]));
        }
        let bins = n / 2 + 1;
        let data = (0..rows)
            .flat_map(|r| fft::rfft(&t.data[r * cols..(r + 1) * cols], n))
            .flat_map(|c| [c.re, c.im])
            .collect();
        let mut shape = t.shape[..t.rank() - 1].to_vec();
        shape.extend([bins, 2]);
        self.push(with_shape(&shape, data), Op::Rfft(x.0, n))
    }

    /// Inverse of [`Tape::rfft`] producing `n` real samples per row.
    pub fn irfft(&mut self, z: Var, n: usize) -> Result<Var> {
        let lead = self.complex_input("irfft", z)?;
        let bins = n / 2 + 1;
        if lead.last() != Some(&bins) || lead.len() > 2 {
            return Err(mismatch("irfft", self.shape(z), &[bins, 2]));
        }
        let t = self.value(z);
        let data = t
            .data
            .chunks(bins * 2)
            .flat_map(|row| {
                let spec: Vec<Complex64> = row.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
                fft::irfft(&spec, n)
            })
            .collect();
        let mut shape = lead[..lead.len() - 1].to_vec();
        shape.push(n);
        self.push(with_shape(&shape, data), Op::Irfft(z.0, n))
    }

    pub fn stft(&mut self, x: Var, plan: Arc<FramePlan>) -> Result<Var> {
        let t = self.value(x);
        if t.shape != [plan.signal_len()] {
            return Err(mismatch("stft", &t.shape, &[plan.signal_len()]));
        }
        let data = plan.analysis(&t.data);
        let shape = [plan.frames(), plan.bins(), 2];
        self.push(with_shape(&shape, data), Op::Stft(x.0, plan))
    }

    pub fn istft(&mut self, z: Var, plan: Arc<FramePlan>) -> Result<Var> {
        let t = self.value(z);
        if t.shape != [plan.frames(), plan.bins(), 2] {
            return Err(mismatch("istft", &t.shape, &[plan.frames(), plan.bins(), 2]));
        }
        let data = plan.synthesis(&t.data);
        let v = with_shape(&[plan.signal_len()], data);
        self.push(v, Op::Istft(z.0, plan))
    }

    pub fn linear_map(&mut self, x: Var, op: Arc<dyn LinearOperator>) -> Result<Var> {
        let t = self.value(x);
        if t.shape != [op.in_len()] {
            return Err(mismatch("linear_map", &t.shape, &[op.in_len()]));
        }
        let data = op.apply(&t.data);
        let v = with_shape(&[op.out_len()], data);
        self.push(v, Op::LinearMap(x.0, op))
    }

    /// Overlapping windows of `n` rows: `[T, J] -> [T - n + 1, J, n]`.
    pub fn segments(&mut self, x: Var, n: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || n == 0 || t.shape[0] < n {
            return Err(mismatch("segments", &t.shape, &[n]));
        }
        let (rows, j) = (t.shape[0], t.shape[1]);
        let m = rows - n + 1;
        let mut data = Vec::with_capacity(m * j * n);
        for s in 0..m {
            for band in 0..j {
                for k in 0..n {
                    data.push(t.data[(s + k) * j + band]);
                }
            }
        }
        self.push(with_shape(&[m, j, n], data), Op::Segments(x.0, n))
    }

    /// `G[t, c] = z[c] + sum_i a[c, i] relu(J[t, c] - knots[i])`.
    pub fn piecewise_gain(&mut self, j: Var, a: Var, z: Var, knots: Arc<Vec<f64>>) -> Result<Var> {
        let (tj, ta, tz) = (self.value(j), self.value(a), self.value(z));
        let h = knots.len();
        if tj.rank() != 2 {
            return Err(mismatch("piecewise_gain", &tj.shape, &[0, 0]));
        }
        let c = tj.shape[1];
        if ta.shape != [c, h] || tz.shape != [c] {
            return Err(mismatch("piecewise_gain", &ta.shape, &[c, h]));
        }
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("piecewise knots must be strictly increasing"));
        }
        let (pa, pal) = piecewise_prefix(&ta.data, &knots, c);
        let data = tj
            .data
            .iter()
            .enumerate()
            .map(|(i, &jv)| {
                let band = i % c;
                let k = active_segments(&knots, jv);
                let base = band * (h + 1) + k;
                tz.data[band] + jv * pa[base] - pal[base]
            })
            .collect();
        let v = with_shape(&tj.shape, data);
        self.push(
            v,
            Op::PiecewiseGain {
                j: j.0,
                a: a.0,
                z: z.0,
                knots,
            },
        )
    }

    /// `(clamp(e, lo, hi) / hi)^p_r` with one exponent per row of `e`.
    pub fn recruit_gain(&mut self, e: Var, exponents: Arc<Vec<f64>>, lo: f64, hi: f64) -> Result<Var> {
        let t = self.value(e);
        let (rows, cols) = t.rows_cols();
        if t.rank() != 2 || rows != exponents.len() || !(lo > 0.0 && lo < hi) {
            return Err(mismatch("recruit_gain", &t.shape, &[exponents.len()]));
        }
        let data = t
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| (v.clamp(lo, hi) / hi).powf(exponents[i / cols]))
            .collect();
        let v = with_shape(&t.shape, data);
        self.push(v, Op::RecruitGain { e: e.0, exponents, lo, hi })
    }

    /// One-pole attack/release smoothing along axis 0 of `[T, C]`. The
    /// attack coefficient applies when the state is at or above the input.
    pub fn attack_release(&mut self, j: Var, attack: f64, release: f64) -> Result<Var> {
        let t = self.value(j);
        if t.rank() != 2 {
            return Err(mismatch("attack_release", &t.shape, &[0, 0]));
        }
        if !(attack > 0.0 && attack <= 1.0 && release > 0.0 && release <= 1.0) {
            return Err(Error::param("smoother coefficients must lie in (0, 1]"));
        }
        let (rows, c) = (t.shape[0], t.shape[1]);
        let mut s = vec![0.0; rows * c];
        if rows > 0 {
            s[..c].copy_from_slice(&t.data[..c]);
        }
        for r in 1..rows {
            for ch in 0..c {
                let prev = s[(r - 1) * c + ch];
                let input = t.data[r * c + ch];
                let w = smoother_weight(prev, input, attack, release);
                s[r * c + ch] = prev + (input - prev) * w;
            }
        }
        let v = with_shape(&t.shape, s);
        self.push(v, Op::AttackRelease { j: j.0, attack, release })
    }
}

/// Contributions of node `i`'s output gradient `g` to its parents.
pub(crate) fn vjp(nodes: &[Node], i: usize, g: &Tensor) -> Vec<(usize, Tensor)> {
    let val = |p: usize| &nodes[p].value;
    let out = &nodes[i].value;
    let needs = |p: usize| nodes[p].requires_grad;
    match &nodes[i].op {
        Op::Leaf => vec![],
        Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
        Op::Sub(a, b) => vec![(*a, g.clone()), (*b, map(g, |v| -v))],
        Op::Mul(a, b) => vec![(*a, zip(g, val(*b), |x, y| x * y)), (*b, zip(g, val(*a), |x, y| x * y))],
        Op::DivGuarded(a, b, eps) => {
            let (va, vb) = (val(*a), val(*b));
            let da = zip(g, vb, |x, y| x / (y + eps));
            let db = with_shape(
                &g.shape,
                g.data
                    .iter()
                    .zip(va.data.iter().zip(&vb.data))
                    .map(|(gv, (x, y))| -gv * x / ((y + eps) * (y + eps)))
                    .collect(),
            );
            vec![(*a, da), (*b, db)]
        }
        Op::Minimum(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let pick_a: Vec<bool> = va.data.iter().zip(&vb.data).map(|(x, y)| x <= y).collect();
            let da = with_shape(&g.shape, g.data.iter().zip(&pick_a).map(|(v, &p)| if p { *v } else { 0.0 }).collect());
            let db = with_shape(&g.shape, g.data.iter().zip(&pick_a).map(|(v, &p)| if p { 0.0 } else { *v }).collect());
            vec![(*a, da), (*b, db)]
        }
        Op::Select(a, b, mask) => {
            let da = with_shape(&g.shape, g.data.iter().zip(mask.iter()).map(|(v, &m)| if m { *v } else { 0.0 }).collect());
            let db = with_shape(&g.shape, g.data.iter().zip(mask.iter()).map(|(v, &m)| if m { 0.0 } else { *v }).collect());
            vec![(*a, da), (*b, db)]
        }
        Op::Scale(a, c) => vec![(*a, map(g, |v| v * c))],
        Op::AddScalar(a) => vec![(*a, g.clone())],
        Op::PowScalar(a, p) => {
            let p = *p;
            vec![(
                *a,
                zip(g, val(*a), |gv, x| {
                    if p == 1.0 {
                        gv
                    } else if x == 0.0 && p < 1.0 {
                        0.0
                    } else {
                        gv * p * x.powf(p - 1.0)
                    }
                }),
            )]
        }
        Op::Sqrt(a) => vec![(*a, zip(g, out, |gv, y| if y > 0.0 { gv / (2.0 * y) } else { 0.0 }))],
        Op::Exp(a) => vec![(*a, zip(g, out, |gv, y| gv * y))],
        Op::LogGuarded(a, eps) => vec![(*a, zip(g, val(*a), |gv, x| if x > *eps { gv / x } else { 0.0 }))],
        Op::Relu(a) => vec![(*a, zip(g, val(*a), |gv, x| if x > 0.0 { gv } else { 0.0 }))],
        Op::Abs(a) => vec![(
            *a,
            zip(g, val(*a), |gv, x| {
                if x > 0.0 {
                    gv
                } else if x < 0.0 {
                    -gv
                } else {
                    0.0
                }
            }),
        )],
        Op::Elu(a) => vec![(*a, zip(g, val(*a), |gv, x| if x > 0.0 { gv } else { gv * x.exp() }))],
        Op::Clamp(a, lo, hi) => vec![(*a, zip(g, val(*a), |gv, x| if x > *lo && x < *hi { gv } else { 0.0 }))],
        Op::SumAll(a) => {
            let v = g.data[0];
            vec![(*a, map(val(*a), |_| v))]
        }
        Op::SumAxis(a, axis) | Op::MeanAxis(a, axis) => {
            let shape = &val(*a).shape;
            let (outer, dim, inner) = split_axis(shape, *axis);
            let scale = if matches!(nodes[i].op, Op::MeanAxis(..)) { 1.0 / dim as f64 } else { 1.0 };
            let mut d = vec![0.0; outer * dim * inner];
            for o in 0..outer {
                for k in 0..dim {
                    for n in 0..inner {
                        d[(o * dim + k) * inner + n] = g.data[o * inner + n] * scale;
                    }
                }
            }
            vec![(*a, with_shape(shape, d))]
        }
        Op::ExpandFirst(a) => {
            let shape = &val(*a).shape;
            let len = val(*a).len();
            let mut d = vec![0.0; len];
            for chunk in g.data.chunks(len.max(1)) {
                d.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
            }
            vec![(*a, with_shape(shape, d))]
        }
        Op::ExpandLast(a) => {
            let n = *g.shape.last().unwrap();
            let d = g.data.chunks(n.max(1)).map(|c| c.iter().sum()).collect();
            vec![(*a, with_shape(&val(*a).shape, d))]
        }
        Op::Reshape(a) => vec![(*a, with_shape(&val(*a).shape, g.data.clone()))],
        Op::Transpose(a) => {
            let (m, n) = (val(*a).shape[0], val(*a).shape[1]);
            vec![(*a, with_shape(&[m, n], transpose_raw(&g.data, n, m)))]
        }
        Op::SliceLast(a, start) => {
            let src = val(*a);
            let (rows, cols) = src.rows_cols();
            let len = *g.shape.last().unwrap();
            let mut d = vec![0.0; src.len()];
            for r in 0..rows {
                d[r * cols + start..r * cols + start + len].copy_from_slice(&g.data[r * len..(r + 1) * len]);
            }
            vec![(*a, with_shape(&src.shape, d))]
        }
        Op::PadLast(a, before) => {
            let src = val(*a);
            let (rows, cols) = src.rows_cols();
            let w = *g.shape.last().unwrap();
            let d = (0..rows)
                .flat_map(|r| g.data[r * w + before..r * w + before + cols].iter().copied())
                .collect();
            vec![(*a, with_shape(&src.shape, d))]
        }
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
            let mut res = Vec::new();
            if needs(*a) {
                let bt = transpose_raw(&tb.data, k, n);
                res.push((*a, with_shape(&[m, k], matmul_raw(&g.data, &bt, m, n, k))));
            }
            if needs(*b) {
                let at = transpose_raw(&ta.data, m, k);
                res.push((*b, with_shape(&[k, n], matmul_raw(&at, &g.data, k, m, n))));
            }
            res
        }
        Op::ConvFixed(a, bank, layout) => {
            let src = val(*a);
            let d = match layout {
                ConvLayout::Single | ConvLayout::FanOut => bank.adjoint_fanout(&g.data, src.shape[0]),
                ConvLayout::Rows => bank.adjoint_rows(&g.data, src.shape[0], src.shape[1]),
            };
            vec![(*a, with_shape(&src.shape, d))]
        }
        Op::ConvCausal(x, w) => {
            let (tx, tw) = (val(*x), val(*w));
            let (t_len, c) = (tx.shape[0], tx.shape[1]);
            let l = tw.shape[0];
            let mut dx = vec![0.0; tx.len()];
            let mut dw = vec![0.0; tw.len()];
            for t in 0..t_len {
                for k in 0..l.min(t + 1) {
                    for ch in 0..c {
                        let gv = g.data[t * c + ch];
                        dx[(t - k) * c + ch] += tw.data[k * c + ch] * gv;
                        dw[k * c + ch] += tx.data[(t - k) * c + ch] * gv;
                    }
                }
            }
            vec![(*x, with_shape(&tx.shape, dx)), (*w, with_shape(&tw.shape, dw))]
        }
        Op::Decimate(a, rf) => {
            let src = val(*a);
            let (rows, n) = src.rows_cols();
            let m = *g.shape.last().unwrap();
            let d = (0..rows)
                .flat_map(|r| rf.decimate_adjoint(&g.data[r * m..(r + 1) * m], n))
                .collect();
            vec![(*a, with_shape(&src.shape, d))]
        }
        Op::Upsample(a, rf) => {
            let src = val(*a);
            let (rows, n) = src.rows_cols();
            let m = *g.shape.last().unwrap();
            let d = (0..rows)
                .flat_map(|r| rf.upsample_adjoint(&g.data[r * m..(r + 1) * m], n))
                .collect();
            vec![(*a, with_shape(&src.shape, d))]
        }
        Op::AbsComplex(z, eps) => {
            let tz = val(*z);
            let d = tz
                .data
                .chunks(2)
                .zip(out.data.iter().zip(&g.data))
                .flat_map(|(c, (m, gv))| {
                    let s = gv / (m + eps);
                    [c[0] * s, c[1] * s]
                })
                .collect();
            vec![(*z, with_shape(&tz.shape, d))]
        }
        Op::Abs2Complex(z) => {
            let tz = val(*z);
            let d = tz
                .data
                .chunks(2)
                .zip(&g.data)
                .flat_map(|(c, gv)| [2.0 * c[0] * gv, 2.0 * c[1] * gv])
                .collect();
            vec![(*z, with_shape(&tz.shape, d))]
        }
        Op::ComplexScale(z, s) => {
            let (tz, ts) = (val(*z), val(*s));
            let dz = g
                .data
                .chunks(2)
                .zip(&ts.data)
                .flat_map(|(c, sv)| [c[0] * sv, c[1] * sv])
                .collect();
            let ds = g
                .data
                .chunks(2)
                .zip(tz.data.chunks(2))
                .map(|(gc, zc)| gc[0] * zc[0] + gc[1] * zc[1])
                .collect();
            vec![(*z, with_shape(&tz.shape, dz)), (*s, with_shape(&ts.shape, ds))]
        }
        Op::ComplexMul(a, b) => {
            let (ta, tb) = (val(*a), val(*b));
            // dL/da = g * conj(b) in the real-pair convention
            let conj_mul = |x: &Tensor| -> Vec<f64> {
                g.data
                    .chunks(2)
                    .zip(x.data.chunks(2))
                    .flat_map(|(gc, q)| [gc[0] * q[0] + gc[1] * q[1], gc[1] * q[0] - gc[0] * q[1]])
                    .collect()
            };
            vec![(*a, with_shape(&ta.shape, conj_mul(tb))), (*b, with_shape(&tb.shape, conj_mul(ta)))]
        }
        Op::Rfft(a, n) => {
            let src = val(*a);
            let (rows, cols) = src.rows_cols();
            let bins = n / 2 + 1;
            let d = g
                .data
                .chunks(bins * 2)
                .take(rows)
                .flat_map(|row| {
                    let spec: Vec<Complex64> = row.chunks(2).map(|c| Complex64::new(c[0], c[1])).collect();
                    let mut full = rfft_adjoint(&spec, *n);
                    full.truncate(cols);
                    full
                })
                .collect();
            vec![(*a, with_shape(&src.shape, d))]
        }
        Op::Irfft(z, n) => {
            let tz = val(*z);
            let d = g
                .data
                .chunks(*n)
                .flat_map(|row| irfft_adjoint(row, *n))
                .flat_map(|c| [c.re, c.im])
                .collect();
            vec![(*z, with_shape(&tz.shape, d))]
        }
        Op::Stft(a, plan) => vec![(*a, with_shape(&val(*a).shape, plan.analysis_adjoint(&g.data)))],
        Op::Istft(z, plan) => vec![(*z, with_shape(&val(*z).shape, plan.synthesis_adjoint(&g.data)))],
        Op::LinearMap(a, op) => vec![(*a, with_shape(&val(*a).shape, op.adjoint(&g.data)))],
        Op::Segments(a, n) => {
            let src = val(*a);
            let j = src.shape[1];
            let m = g.shape[0];
            let mut d = vec![0.0; src.len()];
            for s in 0..m {
                for band in 0..j {
                    for k in 0..*n {
                        d[(s + k) * j + band] += g.data[(s * j + band) * n + k];
                    }
                }
            }
            vec![(*a, with_shape(&src.shape, d))]
        }
        Op::PiecewiseGain { j, a, z, knots } => {
            let (tj, ta) = (val(*j), val(*a));
            let c = tj.shape[1];
            let h = knots.len();
            let (pa, _) = piecewise_prefix(&ta.data, knots, c);
            let mut dj = vec![0.0; tj.len()];
            let mut da = vec![0.0; ta.len()];
            let mut dz = vec![0.0; c];
            let want_a = needs(*a);
            for (idx, (&jv, &gv)) in tj.data.iter().zip(&g.data).enumerate() {
                let band = idx % c;
                let k = active_segments(knots, jv);
                dj[idx] = gv * pa[band * (h + 1) + k];
                dz[band] += gv;
                if want_a && gv != 0.0 {
                    for (d, l) in da[band * h..band * h + k].iter_mut().zip(knots.iter()) {
                        *d += gv * (jv - l);
                    }
                }
            }
            vec![
                (*j, with_shape(&tj.shape, dj)),
                (*a, with_shape(&ta.shape, da)),
                (*z, with_shape(&[c], dz)),
            ]
        }
        Op::RecruitGain { e, exponents, lo, hi } => {
            let te = val(*e);
            let cols = te.shape[1];
            let d = te
                .data
                .iter()
                .zip(out.data.iter().zip(&g.data))
                .enumerate()
                .map(|(idx, (&ev, (&y, &gv)))| {
                    if ev > *lo && ev < *hi {
                        gv * exponents[idx / cols] * y / ev
                    } else {
                        0.0
                    }
                })
                .collect();
            vec![(*e, with_shape(&te.shape, d))]
        }
        Op::AttackRelease { j, attack, release } => {
            let tj = val(*j);
            let (rows, c) = (tj.shape[0], tj.shape[1]);
            let mut dj = vec![0.0; tj.len()];
            let mut lambda: Vec<f64> = g.data.clone();
            for r in (1..rows).rev() {
                for ch in 0..c {
                    let prev = out.data[(r - 1) * c + ch];
                    let w = smoother_weight(prev, tj.data[r * c + ch], *attack, *release);
                    let l = lambda[r * c + ch];
                    dj[r * c + ch] += l * w;
                    lambda[(r - 1) * c + ch] += l * (1.0 - w);
                }
            }
            if rows > 0 {
                for ch in 0..c {
                    dj[ch] += lambda[ch];
                }
            }
            vec![(*j, with_shape(&tj.shape, dj))]
        }
    }
}

pub(crate) fn hash_branches<H: Hasher>(nodes: &[Node], i: usize, h: &mut H) {
    let val = |p: usize| &nodes[p].value;
    let out = &nodes[i].value;
    match &nodes[i].op {
        Op::Relu(a) => hash_bits(h, val(*a).data.iter().map(|&x| (x > 0.0) as u8)),
        Op::Abs(a) => hash_bits(h, val(*a).data.iter().map(|&x| (x > 0.0) as u8 + 2 * (x < 0.0) as u8)),
        Op::Clamp(a, lo, hi) => hash_bits(h, val(*a).data.iter().map(|&x| (x > *lo) as u8 + 2 * (x < *hi) as u8)),
        Op::LogGuarded(a, eps) => hash_bits(h, val(*a).data.iter().map(|&x| (x > *eps) as u8)),
        Op::Sqrt(_) => hash_bits(h, out.data.iter().map(|&y| (y > 0.0) as u8)),
        Op::Minimum(a, b) => hash_bits(h, val(*a).data.iter().zip(&val(*b).data).map(|(x, y)| (x <= y) as u8)),
        Op::PiecewiseGain { j, knots, .. } => {
            for &jv in &val(*j).data {
                h.write_usize(active_segments(knots, jv));
            }
        }
        Op::RecruitGain { e, lo, hi, .. } => {
            hash_bits(h, val(*e).data.iter().map(|&x| (x > *lo) as u8 + 2 * (x < *hi) as u8))
        }
        Op::AttackRelease { j, .. } => {
            let tj = val(*j);
            let c = tj.shape[1];
            hash_bits(
                h,
                (c..tj.len()).map(|k| (out.data[k - c] - tj.data[k] >= 0.0) as u8),
            )
        }
        _ => {}
    }
}

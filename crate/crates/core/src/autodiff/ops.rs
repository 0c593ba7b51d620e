use super::conv::{col2im, gemm_nn, gemm_nt, gemm_tn, im2col, same_pad};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

/// Primitive differentiable operations. Each knows how to compute its output
/// from input tensors and how to push an output gradient back to its inputs.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    /// (a [m,k], b [k,n]) -> [m,n]
    MatMul,
    /// (x [b,n], v [n]) -> [b,n], v added to every row
    AddRowVec,
    /// (x [b,h,w,ci], w [k,k,ci,co], bias [co]) -> [b,oh,ow,co], same padding
    Conv2d { stride: usize },
    /// (x [b,h,w,ci], w [k,k,co,ci], bias [co]) -> [b,h*stride,w*stride,co]
    ConvTranspose2d { stride: usize },
    Relu,
    Sigmoid,
    Exp,
    /// Elementwise clamp to [lo, hi]; gradient passes inside the interval.
    Clamp { lo: f64, hi: f64 },
    /// Elementwise on equal shapes.
    Add,
    Sub,
    Mul,
    AddScalar(f64),
    MulScalar(f64),
    Square,
    /// [b, ...] -> [b, per_sample...]; element count per sample must match.
    Reshape { per_sample: Vec<usize> },
    /// Columns [start, end) of a [b,n] tensor.
    SliceCols { start: usize, end: usize },
    /// [b,n] -> [b], sum over columns.
    SumCols,
    /// Any shape -> [1], mean over all elements.
    MeanAll,
    /// Row-wise softmax on [b,n].
    Softmax,
    /// (logits [b,n], targets [b,n]) -> [1], mean cross-entropy.
    /// Gradient flows to logits only.
    SoftmaxCrossEntropy,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatMul => "matmul",
            Op::AddRowVec => "add_row_vec",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvTranspose2d { .. } => "conv2d_transpose",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Exp => "exp",
            Op::Clamp { .. } => "clamp",
            Op::Add => "add",
            Op::Sub => "sub",
            Op::Mul => "mul",
            Op::AddScalar(_) => "add_scalar",
            Op::MulScalar(_) => "mul_scalar",
            Op::Square => "square",
            Op::Reshape { .. } => "reshape",
            Op::SliceCols { .. } => "slice_cols",
            Op::SumCols => "sum_cols",
            Op::MeanAll => "mean_all",
            Op::Softmax => "softmax",
            Op::SoftmaxCrossEntropy => "softmax_cross_entropy",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Op::MatMul | Op::AddRowVec | Op::Add | Op::Sub | Op::Mul | Op::SoftmaxCrossEntropy => 2,
            Op::Conv2d { .. } | Op::ConvTranspose2d { .. } => 3,
            _ => 1,
        }
    }

    pub fn forward<T: Real>(&self, inputs: &[&Tensor<T>]) -> Result<Tensor<T>> {
        match self {
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (sa, sb) = (a.shape(), b.shape());
                if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
                    return Err(Error::shape(format!("matmul on {sa:?} x {sb:?}")));
                }
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut out = vec![T::zero(); m * n];
                gemm_nn(m, k, n, a.data(), b.data(), T::zero(), &mut out);
                Tensor::new(vec![m, n], out)
            }
            Op::AddRowVec => {
                let (x, v) = (inputs[0], inputs[1]);
                if x.shape().len() != 2 || v.shape().len() != 1 || x.shape()[1] != v.shape()[0] {
                    return Err(Error::shape(format!(
                        "add_row_vec on {:?} + {:?}",
                        x.shape(),
                        v.shape()
                    )));
                }
                let n = v.len();
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(n) {
                    for (o, &b) in row.iter_mut().zip(v.data()) {
                        *o = *o + b;
                    }
                }
                Ok(out)
            }
            Op::Conv2d { stride } => conv2d_forward(inputs, *stride),
            Op::ConvTranspose2d { stride } => convt2d_forward(inputs, *stride),
            Op::Relu => Ok(inputs[0].map(|v| if v > T::zero() { v } else { T::zero() })),
            Op::Sigmoid => Ok(inputs[0].map(|v| T::one() / (T::one() + (-v).exp()))),
            Op::Exp => Ok(inputs[0].map(|v| v.exp())),
            Op::Clamp { lo, hi } => {
                if lo >= hi {
                    return Err(Error::config(format!("clamp bounds [{lo}, {hi}]")));
                }
                let (l, h) = (T::from_f64(*lo), T::from_f64(*hi));
                Ok(inputs[0].map(|v| if v < l { l } else if v > h { h } else { v }))
            }
            Op::Add | Op::Sub | Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                if a.shape() != b.shape() {
                    return Err(Error::shape(format!(
                        "{} on {:?} vs {:?}",
                        self.name(),
                        a.shape(),
                        b.shape()
                    )));
                }
                let mut out = a.clone();
                match self {
                    Op::Add => {
                        for (o, &r) in out.data_mut().iter_mut().zip(b.data()) {
                            *o = *o + r;
                        }
                    }
                    Op::Sub => {
                        for (o, &r) in out.data_mut().iter_mut().zip(b.data()) {
                            *o = *o - r;
                        }
                    }
                    _ => {
                        for (o, &r) in out.data_mut().iter_mut().zip(b.data()) {
                            *o = *o * r;
                        }
                    }
                }
                Ok(out)
            }
            Op::AddScalar(c) => {
                let c = T::from_f64(*c);
                Ok(inputs[0].map(|v| v + c))
            }
            Op::MulScalar(c) => {
                let c = T::from_f64(*c);
                Ok(inputs[0].map(|v| v * c))
            }
            Op::Square => Ok(inputs[0].map(|v| v * v)),
            Op::Reshape { per_sample } => {
                let x = inputs[0];
                if x.shape().is_empty() {
                    return Err(Error::shape("reshape of rank-0 tensor".to_string()));
                }
                let b = x.shape()[0];
                let want: usize = per_sample.iter().product();
                if x.row_len() != want {
                    return Err(Error::shape(format!(
                        "reshape {:?} to per-sample {:?}",
                        x.shape(),
                        per_sample
                    )));
                }
                let mut shape = vec![b];
                shape.extend_from_slice(per_sample);
                x.reshaped(shape)
            }
            Op::SliceCols { start, end } => {
                let x = inputs[0];
                if x.shape().len() != 2 || *start >= *end || *end > x.shape()[1] {
                    return Err(Error::shape(format!(
                        "slice_cols [{start}, {end}) of {:?}",
                        x.shape()
                    )));
                }
                let (b, n, w) = (x.shape()[0], x.shape()[1], end - start);
                let mut out = Vec::with_capacity(b * w);
                for row in x.data().chunks(n) {
                    out.extend_from_slice(&row[*start..*end]);
                }
                Tensor::new(vec![b, w], out)
            }
            Op::SumCols => {
                let x = inputs[0];
                if x.shape().len() != 2 {
                    return Err(Error::shape(format!("sum_cols of {:?}", x.shape())));
                }
                let n = x.shape()[1];
                let sums: Vec<T> = x
                    .data()
                    .chunks(n)
                    .map(|row| row.iter().fold(T::zero(), |s, &v| s + v))
                    .collect();
                Tensor::new(vec![x.shape()[0]], sums)
            }
            Op::MeanAll => {
                let x = inputs[0];
                if x.is_empty() {
                    return Err(Error::numeric("mean of an empty tensor"));
                }
                let sum = x.data().iter().fold(T::zero(), |s, &v| s + v);
                Ok(Tensor::scalar(sum / T::from_f64(x.len() as f64)))
            }
            Op::Softmax => {
                let x = inputs[0];
                if x.shape().len() != 2 {
                    return Err(Error::shape(format!("softmax of {:?}", x.shape())));
                }
                let n = x.shape()[1];
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(n) {
                    softmax_row(row);
                }
                Ok(out)
            }
            Op::SoftmaxCrossEntropy => {
                let (l, t) = (inputs[0], inputs[1]);
                if l.shape().len() != 2 || l.shape() != t.shape() {
                    return Err(Error::shape(format!(
                        "softmax_cross_entropy on {:?} vs {:?}",
                        l.shape(),
                        t.shape()
                    )));
                }
                let (b, n) = (l.shape()[0], l.shape()[1]);
                if b == 0 {
                    return Err(Error::numeric("cross-entropy over an empty batch"));
                }
                let mut total = 0.0f64;
                for (lr, tr) in l.data().chunks(n).zip(t.data().chunks(n)) {
                    let m = lr.iter().cloned().fold(T::neg_infinity(), T::max).as_f64();
                    let lse = m + lr.data_lse(m);
                    let dot: f64 = lr
                        .iter()
                        .zip(tr)
                        .map(|(&a, &c)| a.as_f64() * c.as_f64())
                        .sum();
                    total += lse - dot;
                }
                Ok(Tensor::scalar(T::from_f64(total / b as f64)))
            }
        }
    }

    /// Gradients w.r.t. each input; `None` marks an input this op never
    /// differentiates through (e.g. cross-entropy targets).
    pub fn backward<T: Real>(
        &self,
        grad: &Tensor<T>,
        inputs: &[&Tensor<T>],
        output: &Tensor<T>,
    ) -> Result<Vec<Option<Tensor<T>>>> {
        match self {
            Op::MatMul => {
                let (a, b) = (inputs[0], inputs[1]);
                let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
                let mut da = vec![T::zero(); m * k];
                gemm_nt(m, n, k, grad.data(), b.data(), T::zero(), &mut da);
                let mut db = vec![T::zero(); k * n];
                gemm_tn(k, m, n, a.data(), grad.data(), T::zero(), &mut db);
                Ok(vec![
                    Some(Tensor::new(vec![m, k], da)?),
                    Some(Tensor::new(vec![k, n], db)?),
                ])
            }
            Op::AddRowVec => {
                let n = inputs[1].len();
                let mut dv = vec![T::zero(); n];
                for row in grad.data().chunks(n) {
                    for (d, &g) in dv.iter_mut().zip(row) {
                        *d = *d + g;
                    }
                }
                Ok(vec![Some(grad.clone()), Some(Tensor::new(vec![n], dv)?)])
            }
            Op::Conv2d { stride } => conv2d_backward(grad, inputs, *stride),
            Op::ConvTranspose2d { stride } => convt2d_backward(grad, inputs, *stride),
            Op::Relu => {
                let x = inputs[0];
                let out = zip_map(grad, x, |g, v| if v > T::zero() { g } else { T::zero() });
                Ok(vec![Some(out)])
            }
            Op::Sigmoid => {
                let out = zip_map(grad, output, |g, y| g * y * (T::one() - y));
                Ok(vec![Some(out)])
            }
            Op::Exp => Ok(vec![Some(zip_map(grad, output, |g, y| g * y))]),
            Op::Clamp { lo, hi } => {
                let (l, h) = (T::from_f64(*lo), T::from_f64(*hi));
                let x = inputs[0];
                let out = zip_map(grad, x, |g, v| {
                    if v >= l && v <= h {
                        g
                    } else {
                        T::zero()
                    }
                });
                Ok(vec![Some(out)])
            }
            Op::Add => Ok(vec![Some(grad.clone()), Some(grad.clone())]),
            Op::Sub => Ok(vec![
                Some(grad.clone()),
                Some(grad.map(|g| -g)),
            ]),
            Op::Mul => {
                let (a, b) = (inputs[0], inputs[1]);
                Ok(vec![
                    Some(zip_map(grad, b, |g, v| g * v)),
                    Some(zip_map(grad, a, |g, v| g * v)),
                ])
            }
            Op::AddScalar(_) => Ok(vec![Some(grad.clone())]),
            Op::MulScalar(c) => {
                let c = T::from_f64(*c);
                Ok(vec![Some(grad.map(|g| g * c))])
            }
            Op::Square => {
                let two = T::from_f64(2.0);
                Ok(vec![Some(zip_map(grad, inputs[0], |g, v| g * v * two))])
            }
            Op::Reshape { .. } => Ok(vec![Some(grad.reshaped(inputs[0].shape().to_vec())?)]),
            Op::SliceCols { start, end } => {
                let x = inputs[0];
                let (b, n, w) = (x.shape()[0], x.shape()[1], end - start);
                let mut dx = vec![T::zero(); b * n];
                for (i, row) in grad.data().chunks(w).enumerate() {
                    dx[i * n + start..i * n + end].copy_from_slice(row);
                }
                Ok(vec![Some(Tensor::new(vec![b, n], dx)?)])
            }
            Op::SumCols => {
                let x = inputs[0];
                let (b, n) = (x.shape()[0], x.shape()[1]);
                let mut dx = Vec::with_capacity(b * n);
                for &g in grad.data() {
                    dx.extend(std::iter::repeat_n(g, n));
                }
                Ok(vec![Some(Tensor::new(vec![b, n], dx)?)])
            }
            Op::MeanAll => {
                let x = inputs[0];
                let g = grad.data()[0] / T::from_f64(x.len() as f64);
                Ok(vec![Some(Tensor::filled(x.shape(), g))])
            }
            Op::Softmax => {
                // dx = p * (g - sum(g * p)) per row
                let n = output.shape()[1];
                let mut dx = grad.clone();
                for (drow, prow) in dx.data_mut().chunks_mut(n).zip(output.data().chunks(n)) {
                    let dot = drow
                        .iter()
                        .zip(prow)
                        .fold(T::zero(), |s, (&g, &p)| s + g * p);
                    for (d, &p) in drow.iter_mut().zip(prow) {
                        *d = p * (*d - dot);
                    }
                }
                Ok(vec![Some(dx)])
            }
            Op::SoftmaxCrossEntropy => {
                let (l, t) = (inputs[0], inputs[1]);
                let (b, n) = (l.shape()[0], l.shape()[1]);
                let scale = grad.data()[0] / T::from_f64(b as f64);
                let mut dl = l.clone();
                for (lrow, trow) in dl.data_mut().chunks_mut(n).zip(t.data().chunks(n)) {
                    softmax_row(lrow);
                    for (p, &tv) in lrow.iter_mut().zip(trow) {
                        *p = (*p - tv) * scale;
                    }
                }
                Ok(vec![Some(dl), None])
            }
        }
    }
}

fn zip_map<T: Real>(g: &Tensor<T>, other: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let mut out = g.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(other.data()) {
        *o = f(*o, v);
    }
    out
}

fn softmax_row<T: Real>(row: &mut [T]) {
    let m = row.iter().cloned().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum = sum + *v;
    }
    for v in row.iter_mut() {
        *v = *v / sum;
    }
}

/// log(sum(exp(x - m))) helper on plain slices.
trait LseExt<T: Real> {
    fn data_lse(&self, m: f64) -> f64;
}

impl<T: Real> LseExt<T> for [T] {
    fn data_lse(&self, m: f64) -> f64 {
        self.iter()
            .map(|v| (v.as_f64() - m).exp())
            .sum::<f64>()
            .ln()
    }
}

struct ConvDims {
    b: usize,
    h: usize,
    w: usize,
    ci: usize,
    k: usize,
    co: usize,
    oh: usize,
    ow: usize,
    pad_y: usize,
    pad_x: usize,
}

fn conv_dims<T: Real>(
    x: &Tensor<T>,
    wt: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    transposed: bool,
) -> Result<ConvDims> {
    let name = if transposed { "conv2d_transpose" } else { "conv2d" };
    if stride == 0 {
        return Err(Error::config(format!("{name}: stride must be >= 1")));
    }
    let xs = x.shape();
    let ws = wt.shape();
    if xs.len() != 4 || ws.len() != 4 || bias.shape().len() != 1 {
        return Err(Error::shape(format!(
            "{name} on x {xs:?}, w {ws:?}, bias {:?}",
            bias.shape()
        )));
    }
    if ws[0] != ws[1] {
        return Err(Error::shape(format!("{name}: non-square kernel {ws:?}")));
    }
    let (b, h, w, cx) = (xs[0], xs[1], xs[2], xs[3]);
    let k = ws[0];
    // conv weights are [k,k,ci,co]; transposed-conv weights are [k,k,co,ci]
    let (ci, co) = if transposed {
        (ws[3], ws[2])
    } else {
        (ws[2], ws[3])
    };
    if cx != ci || bias.shape()[0] != co {
        return Err(Error::shape(format!(
            "{name}: channels mismatch, x {xs:?}, w {ws:?}, bias {:?}",
            bias.shape()
        )));
    }
    if transposed {
        // the padding geometry is that of the forward conv mapping the
        // enlarged output back down to the input
        let (oh, ow) = (h * stride, w * stride);
        let (back_h, pad_y) = same_pad(oh, k, stride);
        let (back_w, pad_x) = same_pad(ow, k, stride);
        debug_assert_eq!((back_h, back_w), (h, w));
        Ok(ConvDims {
            b,
            h: oh,
            w: ow,
            ci,
            k,
            co,
            oh: h,
            ow: w,
            pad_y,
            pad_x,
        })
    } else {
        let (oh, pad_y) = same_pad(h, k, stride);
        let (ow, pad_x) = same_pad(w, k, stride);
        Ok(ConvDims {
            b,
            h,
            w,
            ci,
            k,
            co,
            oh,
            ow,
            pad_y,
            pad_x,
        })
    }
}

fn add_channel_bias<T: Real>(data: &mut [T], bias: &[T]) {
    let c = bias.len();
    for px in data.chunks_mut(c) {
        for (o, &b) in px.iter_mut().zip(bias) {
            *o = *o + b;
        }
    }
}

fn channel_bias_grad<T: Real>(grad: &[T], co: usize) -> Vec<T> {
    let mut db = vec![T::zero(); co];
    for px in grad.chunks(co) {
        for (d, &g) in db.iter_mut().zip(px) {
            *d = *d + g;
        }
    }
    db
}

fn conv2d_forward<T: Real>(inputs: &[&Tensor<T>], stride: usize) -> Result<Tensor<T>> {
    let (x, wt, bias) = (inputs[0], inputs[1], inputs[2]);
    let d = conv_dims(x, wt, bias, stride, false)?;
    let patch = d.k * d.k * d.ci;
    let m = d.b * d.oh * d.ow;
    let cols = im2col(
        x.data(),
        d.b,
        d.h,
        d.w,
        d.ci,
        d.k,
        stride,
        d.oh,
        d.ow,
        d.pad_y,
        d.pad_x,
    );
    let mut out = vec![T::zero(); m * d.co];
    gemm_nn(m, patch, d.co, &cols, wt.data(), T::zero(), &mut out);
    add_channel_bias(&mut out, bias.data());
    Tensor::new(vec![d.b, d.oh, d.ow, d.co], out)
}

fn conv2d_backward<T: Real>(
    grad: &Tensor<T>,
    inputs: &[&Tensor<T>],
    stride: usize,
) -> Result<Vec<Option<Tensor<T>>>> {
    let (x, wt, bias) = (inputs[0], inputs[1], inputs[2]);
    let d = conv_dims(x, wt, bias, stride, false)?;
    let patch = d.k * d.k * d.ci;
    let m = d.b * d.oh * d.ow;

    let cols = im2col(
        x.data(),
        d.b,
        d.h,
        d.w,
        d.ci,
        d.k,
        stride,
        d.oh,
        d.ow,
        d.pad_y,
        d.pad_x,
    );
    let mut dw = vec![T::zero(); patch * d.co];
    gemm_tn(patch, m, d.co, &cols, grad.data(), T::zero(), &mut dw);

    let db = channel_bias_grad(grad.data(), d.co);

    let mut dcols = vec![T::zero(); m * patch];
    gemm_nt(m, d.co, patch, grad.data(), wt.data(), T::zero(), &mut dcols);
    let dx = col2im(
        &dcols,
        d.b,
        d.h,
        d.w,
        d.ci,
        d.k,
        stride,
        d.oh,
        d.ow,
        d.pad_y,
        d.pad_x,
    );

    Ok(vec![
        Some(Tensor::new(x.shape().to_vec(), dx)?),
        Some(Tensor::new(wt.shape().to_vec(), dw)?),
        Some(Tensor::new(vec![d.co], db)?),
    ])
}

fn convt2d_forward<T: Real>(inputs: &[&Tensor<T>], stride: usize) -> Result<Tensor<T>> {
    let (x, wt, bias) = (inputs[0], inputs[1], inputs[2]);
    // d.h/d.w are the enlarged output dims; d.oh/d.ow the input dims
    let d = conv_dims(x, wt, bias, stride, true)?;
    let patch = d.k * d.k * d.co;
    let m = d.b * d.oh * d.ow;
    let mut cols = vec![T::zero(); m * patch];
    // cols[m, patch] = x2d[m, ci] * w'[patch, ci]^T
    gemm_nt(m, d.ci, patch, x.data(), wt.data(), T::zero(), &mut cols);
    let mut out = col2im(
        &cols, d.b, d.h, d.w, d.co, d.k, stride, d.oh, d.ow, d.pad_y, d.pad_x,
    );
    add_channel_bias(&mut out, bias.data());
    Tensor::new(vec![d.b, d.h, d.w, d.co], out)
}

fn convt2d_backward<T: Real>(
    grad: &Tensor<T>,
    inputs: &[&Tensor<T>],
    stride: usize,
) -> Result<Vec<Option<Tensor<T>>>> {
    let (x, wt, bias) = (inputs[0], inputs[1], inputs[2]);
    let d = conv_dims(x, wt, bias, stride, true)?;
    let patch = d.k * d.k * d.co;
    let m = d.b * d.oh * d.ow;

    let gcols = im2col(
        grad.data(),
        d.b,
        d.h,
        d.w,
        d.co,
        d.k,
        stride,
        d.oh,
        d.ow,
        d.pad_y,
        d.pad_x,
    );

    let mut dx = vec![T::zero(); m * d.ci];
    gemm_nn(m, patch, d.ci, &gcols, wt.data(), T::zero(), &mut dx);

    let mut dw = vec![T::zero(); patch * d.ci];
    gemm_tn(patch, m, d.ci, &gcols, x.data(), T::zero(), &mut dw);

    let db = channel_bias_grad(grad.data(), d.co);

    Ok(vec![
        Some(Tensor::new(x.shape().to_vec(), dx)?),
        Some(Tensor::new(wt.shape().to_vec(), dw)?),
        Some(Tensor::new(vec![d.co], db)?),
    ])
}

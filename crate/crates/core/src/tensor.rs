//! Dense row-major tensors and the raw numeric kernels behind the tape ops.
//!
//! Everything here is gradient-free. [`crate::autodiff`] wraps these kernels
//! and records how to differentiate them.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

/// Scalar type a tensor can hold. Verification runs at `f64`, benchmarks at `f32`.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(x: f64) -> Self;

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
}

/// Dense n-dimensional array. `shape.iter().product() == data.len()` always holds.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T = f64> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        const SHOW: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        let head: Vec<_> = self.data.iter().take(SHOW).collect();
        if self.data.len() > SHOW {
            write!(f, " {head:?}..")
        } else {
            write!(f, " {head:?}")
        }
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape {
                op: "Tensor::new",
                lhs: shape,
                rhs: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(n * m);
        for r in rows {
            let r = r.as_ref();
            if r.len() != m {
                return shape_err("from_rows", &[n, m], &[r.len()]);
            }
            data.extend_from_slice(r);
        }
        Self::new(vec![n, m], data)
    }

    /// Builds a tensor from an `f64` generator, useful for tests and initialisation.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(|i| T::lit(f(i))).collect(),
        }
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` of a matrix.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [n, m] => Ok((n, m)),
            _ => shape_err(op, &self.shape, &[0, 0]),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(0)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[T] {
        let m = self.cols();
        &self.data[i * m..(i + 1) * m]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        let m = self.cols();
        &mut self.data[i * m..(i + 1) * m]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> T {
        self.data[i * self.shape[1] + j]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            shape_err("item", &self.shape, &[1])
        }
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return shape_err("reshape", &self.shape, shape);
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| U::lit(x.to_f64_lossy())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return shape_err(op, &self.shape, &other.shape);
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// In-place `self += other`; shapes must agree.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return shape_err("add_assign", &self.shape, &other.shape);
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.shape, other.shape, "max_abs_diff on mismatched shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (n, m) = self.dims2("transpose")?;
        let mut out = vec![T::zero(); n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Self::new(vec![m, n], out)
    }

    /// Rows `[start, end)` of a matrix.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Self> {
        let (n, m) = self.dims2("slice_rows")?;
        if start > end || end > n {
            return shape_err("slice_rows", &self.shape, &[start, end]);
        }
        Self::new(vec![end - start, m], self.data[start * m..end * m].to_vec())
    }

    /// Columns `[start, end)` of a matrix.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        let (n, m) = self.dims2("slice_cols")?;
        if start > end || end > m {
            return shape_err("slice_cols", &self.shape, &[start, end]);
        }
        let w = end - start;
        let mut out = Vec::with_capacity(n * w);
        for i in 0..n {
            out.extend_from_slice(&self.data[i * m + start..i * m + end]);
        }
        Self::new(vec![n, w], out)
    }
}

/// `a · b` for matrices `[n×k]·[k×m]`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, k) = a.dims2("matmul")?;
    let (k2, m) = b.dims2("matmul")?;
    if k != k2 {
        return shape_err("matmul", a.shape(), b.shape());
    }
    let mut out = vec![T::zero(); n * m];
    gemm(a.data(), b.data(), &mut out, n, k, m);
    Tensor::new(vec![n, m], out)
}

/// `a · bᵀ` for `[n×k]`, `[m×k]`.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul(a, &b.transpose()?)
}

/// `aᵀ · b` for `[k×n]`, `[k×m]`.
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    matmul(&a.transpose()?, b)
}

/// Row-major `c += a·b`. The inner loop runs over contiguous rows of `b` and `c`.
fn gemm<T: Real>(a: &[T], b: &[T], c: &mut [T], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * m..(i + 1) * m];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * m..(p + 1) * m];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// Row-wise softmax with max subtraction. `valid`, when given, masks columns
/// out of every row; masked entries come out as exactly zero.
pub fn softmax_rows<T: Real>(x: &Tensor<T>, valid: Option<&[bool]>) -> Result<Tensor<T>> {
    let (n, m) = x.dims2("softmax_rows")?;
    if let Some(v) = valid {
        if v.len() != m {
            return shape_err("softmax_rows mask", x.shape(), &[v.len()]);
        }
    }
    let keep = |j: usize| valid.is_none_or(|v| v[j]);
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = x.row(i);
        let mut max = T::neg_infinity();
        for (j, &v) in row.iter().enumerate() {
            if keep(j) && v > max {
                max = v;
            }
        }
        if max == T::neg_infinity() {
            return Err(Error::AllKeysMasked { row: i });
        }
        let orow = &mut out[i * m..(i + 1) * m];
        let mut total = T::zero();
        for (j, (o, &v)) in orow.iter_mut().zip(row).enumerate() {
            if keep(j) {
                *o = (v - max).exp();
                total = total + *o;
            }
        }
        for o in orow.iter_mut() {
            *o = *o / total;
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Row-wise log-softmax.
pub fn log_softmax_rows<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, m) = x.dims2("log_softmax_rows")?;
    let mut out = vec![T::zero(); n * m];
    for i in 0..n {
        let row = x.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        for (o, &v) in out[i * m..(i + 1) * m].iter_mut().zip(row) {
            *o = v - lse;
        }
    }
    Tensor::new(vec![n, m], out)
}

/// Per-row statistics produced by [`layer_norm`], kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormStats<T: Real> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Normalises each row to zero mean and unit variance, then applies `gamma`/`beta`.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormStats<T>)> {
    let (n, d) = x.dims2("layer_norm")?;
    if gamma.len() != d || beta.len() != d {
        return shape_err("layer_norm", x.shape(), gamma.shape());
    }
    let dn = T::lit(d as f64);
    let mut xhat = vec![T::zero(); n * d];
    let mut out = vec![T::zero(); n * d];
    let mut inv_std = Vec::with_capacity(n);
    for i in 0..n {
        let row = x.row(i);
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        inv_std.push(is);
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[i * d + j] = h;
            out[i * d + j] = h * gamma.data()[j] + beta.data()[j];
        }
    }
    Ok((
        Tensor::new(vec![n, d], out)?,
        LayerNormStats {
            normalized: Tensor::new(vec![n, d], xhat)?,
            inv_std,
        },
    ))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Tanh-approximated GELU.
#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
    T::lit(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::lit(3.0) * a * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * dinner
}

/// Geometry of a 1-D convolution over time-major `[L × C]` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv1dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Conv1dSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        Self {
            stride,
            padding,
            groups,
        }
    }

    /// `floor((L + 2p - k) / s) + 1`, or an error when the input is shorter than the kernel.
    pub fn output_len(&self, len: usize, kernel: usize) -> Result<usize> {
        if self.stride == 0 || kernel == 0 || self.groups == 0 {
            return Err(Error::Config(format!(
                "conv1d needs stride, kernel and groups >= 1 (got stride {}, kernel {kernel}, groups {})",
                self.stride, self.groups
            )));
        }
        let padded = len + 2 * self.padding;
        if padded < kernel {
            return Err(Error::Input(format!(
                "conv1d input of length {len} (padding {}) is shorter than kernel {kernel}",
                self.padding
            )));
        }
        Ok((padded - kernel) / self.stride + 1)
    }
}

/// Validates shapes and returns `(len, c_in, c_out, kernel, out_len)`.
pub(crate) fn conv1d_dims<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: Conv1dSpec,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (len, c_in) = x.dims2("conv1d input")?;
    let &[c_out, c_in_g, k] = w.shape() else {
        return shape_err("conv1d weight", w.shape(), &[0, 0, 0]);
    };
    if spec.groups == 0 || c_in % spec.groups != 0 || c_out % spec.groups != 0 {
        return Err(Error::Config(format!(
            "conv1d groups {} must divide in channels {c_in} and out channels {c_out}",
            spec.groups
        )));
    }
    if c_in_g != c_in / spec.groups {
        return shape_err("conv1d", x.shape(), w.shape());
    }
    let out_len = spec.output_len(len, k)?;
    Ok((len, c_in, c_out, k, out_len))
}

/// Grouped, strided, zero-padded 1-D convolution. Input `[L × C_in]`, weight
/// `[C_out × C_in/groups × k]`, bias `[C_out]`, output `[L_out × C_out]`.
pub fn conv1d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: Conv1dSpec,
) -> Result<Tensor<T>> {
    let (len, c_in, c_out, k, out_len) = conv1d_dims(x, w, spec)?;
    if let Some(b) = bias {
        if b.len() != c_out {
            return shape_err("conv1d bias", w.shape(), b.shape());
        }
    }
    let cig = c_in / spec.groups;
    let cog = c_out / spec.groups;
    let xd = x.data();
    // Weights as `[k × cig × C_out]` so each input sample updates a
    // contiguous run of outputs. Per output the terms are still added in
    // (j, ci) order.
    let wd = w.data();
    let mut wt = vec![T::zero(); k * cig * c_out];
    for co in 0..c_out {
        for ci in 0..cig {
            for j in 0..k {
                wt[(j * cig + ci) * c_out + co] = wd[(co * cig + ci) * k + j];
            }
        }
    }
    let mut out = vec![T::zero(); out_len * c_out];
    for t in 0..out_len {
        let orow = &mut out[t * c_out..(t + 1) * c_out];
        if let Some(b) = bias {
            orow.copy_from_slice(b.data());
        }
        for j in 0..k {
            let pos = t * spec.stride + j;
            if pos < spec.padding || pos - spec.padding >= len {
                continue;
            }
            let xrow = &xd[(pos - spec.padding) * c_in..][..c_in];
            for g in 0..spec.groups {
                let orow = &mut orow[g * cog..(g + 1) * cog];
                for ci in 0..cig {
                    let xv = xrow[g * cig + ci];
                    let wrow = &wt[(j * cig + ci) * c_out + g * cog..][..cog];
                    for (o, &wv) in orow.iter_mut().zip(wrow) {
                        *o = *o + wv * xv;
                    }
                }
            }
        }
    }
    Tensor::new(vec![out_len, c_out], out)
}

/// Gradients of [`conv1d`] with respect to input, weight and bias.
pub fn conv1d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    grad_out: &Tensor<T>,
    spec: Conv1dSpec,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (len, c_in, c_out, k, out_len) = conv1d_dims(x, w, spec)?;
    if grad_out.shape() != [out_len, c_out] {
        return shape_err("conv1d_backward", grad_out.shape(), &[out_len, c_out]);
    }
    let cig = c_in / spec.groups;
    let cog = c_out / spec.groups;
    let xd = x.data();
    let wd = w.data();
    let gd = grad_out.data();
    let mut dx = vec![T::zero(); len * c_in];
    let mut dw = vec![T::zero(); wd.len()];
    let mut db = vec![T::zero(); c_out];
    for t in 0..out_len {
        for co in 0..c_out {
            let g = gd[t * c_out + co];
            db[co] = db[co] + g;
            let grp = co / cog;
            let wbase = co * cig * k;
            for j in 0..k {
                let pos = t * spec.stride + j;
                if pos < spec.padding || pos - spec.padding >= len {
                    continue;
                }
                let xbase = (pos - spec.padding) * c_in + grp * cig;
                for ci in 0..cig {
                    dw[wbase + ci * k + j] = dw[wbase + ci * k + j] + g * xd[xbase + ci];
                    dx[xbase + ci] = dx[xbase + ci] + g * wd[wbase + ci * k + j];
                }
            }
        }
    }
    Ok((
        Tensor::new(vec![len, c_in], dx)?,
        Tensor::new(w.shape().to_vec(), dw)?,
        Tensor::new(vec![c_out], db)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let i2 = t(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let m = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&i2, &m).unwrap(), m);
    }

    #[test]
    fn selector_row_matmul() {
        let a = t(&[&[1.0, 0.0]]);
        let b = t(&[&[2.0], &[5.0]]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2.0]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[2, 3]);
        let msg = matmul(&a, &b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn softmax_cases() {
        let s = softmax_rows(&t(&[&[0.0, 0.0, 0.0]]), None).unwrap();
        for &v in s.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = softmax_rows(&t(&[&[1000.0, 1000.0]]), None).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax_rows(&t(&[&[0.0, 3f64.ln()]]), None).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn masked_softmax_zeroes_and_rejects_empty_rows() {
        let x = t(&[&[1.0, 2.0, 3.0]]);
        let s = softmax_rows(&x, Some(&[true, false, true])).unwrap();
        assert_eq!(s.data()[1], 0.0);
        assert!((s.sum() - 1.0).abs() < 1e-15);
        assert!(matches!(
            softmax_rows(&x, Some(&[false, false, false])),
            Err(Error::AllKeysMasked { row: 0 })
        ));
    }

    #[test]
    fn layer_norm_constant_and_normalized_rows() {
        let g = Tensor::ones(&[3]);
        let b = Tensor::zeros(&[3]);
        let (y, _) = layer_norm(&t(&[&[4.0, 4.0, 4.0]]), &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));

        let g = Tensor::ones(&[2]);
        let b = Tensor::zeros(&[2]);
        let (y, _) = layer_norm(&t(&[&[-1.0, 1.0]]), &g, &b, 1e-5).unwrap();
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + expect).abs() < 1e-15);
        assert!((y.data()[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn conv1d_counting_example() {
        let x = Tensor::<f64>::ones(&[10, 1]);
        let w = Tensor::ones(&[1, 1, 2]);
        let y = conv1d(&x, &w, None, Conv1dSpec::new(2, 0, 1)).unwrap();
        assert_eq!(y.shape(), &[5, 1]);
        assert!(y.data().iter().all(|&v| v == 2.0));
    }

    #[test]
    fn conv1d_rejects_bad_geometry() {
        let x = Tensor::<f64>::ones(&[10, 4]);
        let w = Tensor::ones(&[4, 2, 3]);
        assert!(matches!(
            conv1d(&x, &w, None, Conv1dSpec::new(0, 0, 2)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            conv1d(&x, &w, None, Conv1dSpec::new(1, 0, 3)),
            Err(Error::Config(_))
        ));
        let short = Tensor::<f64>::ones(&[2, 4]);
        assert!(conv1d(&short, &w, None, Conv1dSpec::new(1, 0, 2)).is_err());
    }

    #[test]
    fn gelu_at_zero() {
        assert_eq!(gelu(0.0f64), 0.0);
        assert!((gelu_grad(0.0f64) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn reshape_round_trip_preserves_order() {
        let x = Tensor::<f64>::from_fn(&[3, 4], |i| i as f64);
        let y = x.reshape(&[2, 6]).unwrap().reshape(&[3, 4]).unwrap();
        assert_eq!(x, y);
        assert!(x.reshape(&[5]).is_err());
    }
}

//! Reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every op applied to tracked [`Var`]s in execution
//! order. [`Tape::backward`] walks that record in reverse, feeding each op's
//! output gradient to its backward closure and accumulating the results into
//! the op's inputs. Untracked values (constants, or everything on a
//! [`Tape::no_grad`] tape) never enter the record, so inference pays only for
//! the forward kernels.
//!
//! The tape also counts multiply-accumulates for matmul and convolution,
//! attributed to the [`MacBucket`] that is active when the op runs.

use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::rc::Rc;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{self, Conv1dSpec, Real, Tensor};

/// Backward closure: receives the output gradient and which inputs want a
/// gradient, returns one optional gradient per input.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T: Real> {
    inputs: Vec<Option<usize>>,
    /// `None` for leaves.
    backward: Option<BackwardFn<T>>,
}

/// Cost category a multiply-accumulate is charged to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MacBucket {
    FeatureExtractor,
    AttnProjection,
    AttnScores,
    Ffn,
    Upsample,
    Other,
}

impl MacBucket {
    pub const ALL: [MacBucket; 6] = [
        MacBucket::FeatureExtractor,
        MacBucket::AttnProjection,
        MacBucket::AttnScores,
        MacBucket::Ffn,
        MacBucket::Upsample,
        MacBucket::Other,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Multiply-accumulate totals per bucket.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MacCounts([u64; 6]);

impl MacCounts {
    pub fn get(&self, bucket: MacBucket) -> u64 {
        self.0[bucket.index()]
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

/// Operation record for one forward pass.
pub struct Tape<T: Real = f64> {
    nodes: RefCell<Vec<Node<T>>>,
    recording: bool,
    macs: Cell<[u64; 6]>,
    bucket: Cell<MacBucket>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            recording: true,
            macs: Cell::new([0; 6]),
            bucket: Cell::new(MacBucket::Other),
        }
    }

    /// A tape that never records; every var it produces is a constant.
    pub fn no_grad() -> Self {
        Self {
            recording: false,
            ..Self::new()
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A tracked leaf (a parameter or an input we want gradients for).
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        let node = if self.recording {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                inputs: Vec::new(),
                backward: None,
            });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Var {
            tape: self,
            node,
            value: Rc::new(value),
        }
    }

    /// An untracked value.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        Var {
            tape: self,
            node: None,
            value: Rc::new(value),
        }
    }

    /// Records an op producing `value` from `inputs`. Ops outside this module
    /// use this to register custom differentiable functions.
    pub fn record<'t>(
        &'t self,
        value: Tensor<T>,
        inputs: &[&Var<'t, T>],
        backward: BackwardFn<T>,
    ) -> Var<'t, T> {
        let tracked = self.recording && inputs.iter().any(|v| v.node.is_some());
        let node = if tracked {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                inputs: inputs.iter().map(|v| v.node).collect(),
                backward: Some(backward),
            });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Var {
            tape: self,
            node,
            value: Rc::new(value),
        }
    }

    /// Switches the active cost bucket and returns the previous one.
    pub fn set_bucket(&self, bucket: MacBucket) -> MacBucket {
        self.bucket.replace(bucket)
    }

    pub fn macs(&self) -> MacCounts {
        MacCounts(self.macs.get())
    }

    pub(crate) fn count_macs(&self, n: usize) {
        let mut m = self.macs.get();
        m[self.bucket.get().index()] += n as u64;
        self.macs.set(m);
    }

    /// Back-propagates from a scalar `loss`. The recorded ops are consumed.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<Gradients<T>> {
        if loss.value.len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.value.shape()
            )));
        }
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Usage("loss was produced on a different tape".into()));
        }
        let mut result = HashMap::new();
        let Some(root) = loss.node else {
            return Ok(Gradients { grads: result });
        };
        let nodes = self.nodes.take();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::full(loss.value.shape(), T::one()));

        for idx in (0..=root).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &nodes[idx];
            let Some(backward) = &node.backward else {
                result.insert(idx, g);
                continue;
            };
            let wants: Vec<bool> = node.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &wants)?;
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                if let (Some(i), Some(ig)) = (input, ig) {
                    match &mut grads[*i] {
                        Some(acc) => acc.add_assign(&ig)?,
                        slot @ None => *slot = Some(ig),
                    }
                }
            }
        }
        Ok(Gradients { grads: result })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients<T: Real = f64> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf, or `None` if the loss does not depend on it.
    pub fn get(&self, var: &Var<'_, T>) -> Option<&Tensor<T>> {
        var.node.and_then(|n| self.grads.get(&n))
    }

    /// Gradient of a leaf, with zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, var: &Var<'_, T>) -> Tensor<T> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(var.value.shape()))
    }
}

/// A value on a tape. Cloning is cheap: the tensor is shared.
#[derive(Clone)]
pub struct Var<'t, T: Real = f64> {
    tape: &'t Tape<T>,
    node: Option<usize>,
    value: Rc<Tensor<T>>,
}

impl<T: Real> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("node", &self.node)
            .field("value", &self.value)
            .finish()
    }
}

fn want<T: Real>(
    wants: &[bool],
    i: usize,
    f: impl FnOnce() -> Result<Tensor<T>>,
) -> Result<Option<Tensor<T>>> {
    if wants[i] {
        f().map(Some)
    } else {
        Ok(None)
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn is_tracked(&self) -> bool {
        self.node.is_some()
    }

    /// Rebinds the value as an untracked constant on the same tape.
    pub fn detach(&self) -> Var<'t, T> {
        Var {
            tape: self.tape,
            node: None,
            value: Rc::clone(&self.value),
        }
    }

    pub(crate) fn value_rc(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.value)
    }

    pub fn matmul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let out = tensor::matmul(&self.value, &other.value)?;
        let (n, k) = self.value.dims2("matmul")?;
        self.tape.count_macs(n * k * out.cols());
        let (a, b) = (self.value_rc(), other.value_rc());
        Ok(self.tape.record(
            out,
            &[self, other],
            Box::new(move |g, w| {
                Ok(vec![
                    want(w, 0, || tensor::matmul_nt(g, &b))?,
                    want(w, 1, || tensor::matmul_tn(&a, g))?,
                ])
            }),
        ))
    }

    pub fn add(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.value.zip_map(&other.value, "add", |a, b| a + b)?;
        Ok(self.tape.record(
            out,
            &[self, other],
            Box::new(|g, w| Ok(vec![want(w, 0, || Ok(g.clone()))?, want(w, 1, || Ok(g.clone()))?])),
        ))
    }

    pub fn sub(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.value.zip_map(&other.value, "sub", |a, b| a - b)?;
        Ok(self.tape.record(
            out,
            &[self, other],
            Box::new(|g, w| {
                Ok(vec![
                    want(w, 0, || Ok(g.clone()))?,
                    want(w, 1, || Ok(g.map(|v| -v)))?,
                ])
            }),
        ))
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Var<'t, T>) -> Result<Var<'t, T>> {
        let out = self.value.zip_map(&other.value, "mul", |a, b| a * b)?;
        let (a, b) = (self.value_rc(), other.value_rc());
        Ok(self.tape.record(
            out,
            &[self, other],
            Box::new(move |g, w| {
                Ok(vec![
                    want(w, 0, || g.zip_map(&b, "mul", |g, b| g * b))?,
                    want(w, 1, || g.zip_map(&a, "mul", |g, a| g * a))?,
                ])
            }),
        ))
    }

    /// Adds a length-`D` bias to every row of an `N×D` matrix. The only
    /// broadcast the tape supports.
    pub fn add_row_bias(&self, bias: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (n, d) = self.value.dims2("add_row_bias")?;
        if bias.value.len() != d {
            return shape_err("add_row_bias", self.shape(), bias.shape());
        }
        let mut out = (*self.value).clone();
        for i in 0..n {
            for (o, &b) in out.row_mut(i).iter_mut().zip(bias.value.data()) {
                *o = *o + b;
            }
        }
        let bias_shape = bias.shape().to_vec();
        Ok(self.tape.record(
            out,
            &[self, bias],
            Box::new(move |g, w| {
                Ok(vec![
                    want(w, 0, || Ok(g.clone()))?,
                    want(w, 1, || {
                        let mut db = vec![T::zero(); d];
                        for i in 0..n {
                            for (acc, &v) in db.iter_mut().zip(g.row(i)) {
                                *acc = *acc + v;
                            }
                        }
                        Tensor::new(bias_shape.clone(), db)
                    })?,
                ])
            }),
        ))
    }

    pub fn scale(&self, c: T) -> Var<'t, T> {
        let out = self.value.map(|v| v * c);
        self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| Ok(vec![Some(g.map(|v| v * c))])),
        )
    }

    pub fn gelu(&self) -> Var<'t, T> {
        let out = self.value.map(tensor::gelu);
        let x = self.value_rc();
        self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                Ok(vec![Some(g.zip_map(&x, "gelu", |g, x| g * tensor::gelu_grad(x))?)])
            }),
        )
    }

    pub fn relu(&self) -> Var<'t, T> {
        let out = self.value.map(|v| v.max(T::zero()));
        let x = self.value_rc();
        self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                Ok(vec![Some(g.zip_map(&x, "relu", |g, x| {
                    if x > T::zero() {
                        g
                    } else {
                        T::zero()
                    }
                })?)])
            }),
        )
    }

    pub fn transpose(&self) -> Result<Var<'t, T>> {
        let out = self.value.transpose()?;
        Ok(self
            .tape
            .record(out, &[self], Box::new(|g, _| Ok(vec![Some(g.transpose()?)]))))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'t, T>> {
        let out = self.value.reshape(shape)?;
        let orig = self.shape().to_vec();
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| Ok(vec![Some(g.reshape(&orig)?)])),
        ))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Var<'t, T>> {
        let out = self.value.slice_rows(start, end)?;
        let (n, m) = self.value.dims2("slice_rows")?;
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&[n, m]);
                dx.data_mut()[start * m..end * m].copy_from_slice(g.data());
                Ok(vec![Some(dx)])
            }),
        ))
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Var<'t, T>> {
        let out = self.value.slice_cols(start, end)?;
        let (n, m) = self.value.dims2("slice_cols")?;
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&[n, m]);
                for i in 0..n {
                    dx.row_mut(i)[start..end].copy_from_slice(g.row(i));
                }
                Ok(vec![Some(dx)])
            }),
        ))
    }

    /// Concatenates matrices with equal row counts side by side.
    pub fn concat_cols(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat_cols of nothing".into()))?;
        let n = first.value.rows();
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pn, pm) = p.value.dims2("concat_cols")?;
            if pn != n {
                return shape_err("concat_cols", first.shape(), p.shape());
            }
            widths.push(pm);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                out.extend_from_slice(p.value.row(i));
            }
        }
        let out = Tensor::new(vec![n, total], out)?;
        let refs: Vec<&Var<'t, T>> = parts.iter().collect();
        Ok(first.tape.record(
            out,
            &refs,
            Box::new(move |g, w| {
                let mut start = 0;
                let mut grads = Vec::with_capacity(widths.len());
                for (i, &pw) in widths.iter().enumerate() {
                    grads.push(want(w, i, || g.slice_cols(start, start + pw))?);
                    start += pw;
                }
                Ok(grads)
            }),
        ))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Usage("concat_rows of nothing".into()))?;
        let m = first.value.cols();
        let mut heights = Vec::with_capacity(parts.len());
        let mut out = Vec::new();
        for p in parts {
            let (pn, pm) = p.value.dims2("concat_rows")?;
            if pm != m {
                return shape_err("concat_rows", first.shape(), p.shape());
            }
            heights.push(pn);
            out.extend_from_slice(p.value.data());
        }
        let total: usize = heights.iter().sum();
        let out = Tensor::new(vec![total, m], out)?;
        let refs: Vec<&Var<'t, T>> = parts.iter().collect();
        Ok(first.tape.record(
            out,
            &refs,
            Box::new(move |g, w| {
                let mut start = 0;
                let mut grads = Vec::with_capacity(heights.len());
                for (i, &h) in heights.iter().enumerate() {
                    grads.push(want(w, i, || g.slice_rows(start, start + h))?);
                    start += h;
                }
                Ok(grads)
            }),
        ))
    }

    /// Grouped strided convolution over a time-major `[L × C_in]` input.
    pub fn conv1d(
        &self,
        weight: &Var<'t, T>,
        bias: Option<&Var<'t, T>>,
        spec: Conv1dSpec,
    ) -> Result<Var<'t, T>> {
        let out = tensor::conv1d(&self.value, &weight.value, bias.map(|b| &*b.value), spec)?;
        let (_, c_in, c_out, k, out_len) = tensor::conv1d_dims(&self.value, &weight.value, spec)?;
        self.tape
            .count_macs(out_len * c_out * (c_in / spec.groups) * k);
        let (x, wt) = (self.value_rc(), weight.value_rc());
        let backward: BackwardFn<T> = Box::new(move |g, w| {
            let (dx, dw, db) = tensor::conv1d_backward(&x, &wt, g, spec)?;
            let mut grads = vec![w[0].then_some(dx), w[1].then_some(dw)];
            if w.len() > 2 {
                grads.push(w[2].then_some(db));
            }
            Ok(grads)
        });
        Ok(match bias {
            Some(b) => self.tape.record(out, &[self, weight, b], backward),
            None => self.tape.record(out, &[self, weight], backward),
        })
    }

    /// Row-wise softmax; `valid` masks columns out of every row.
    pub fn softmax_rows(&self, valid: Option<&[bool]>) -> Result<Var<'t, T>> {
        let out = tensor::softmax_rows(&self.value, valid)?;
        let y = Rc::new(out.clone());
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let (n, m) = y.dims2("softmax backward")?;
                let mut dx = vec![T::zero(); n * m];
                for i in 0..n {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..m {
                        dx[i * m + j] = yr[j] * (gr[j] - dot);
                    }
                }
                Ok(vec![Some(Tensor::new(vec![n, m], dx)?)])
            }),
        ))
    }

    pub fn log_softmax_rows(&self) -> Result<Var<'t, T>> {
        let out = tensor::log_softmax_rows(&self.value)?;
        let y = Rc::new(out.clone());
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let (n, m) = y.dims2("log_softmax backward")?;
                let mut dx = vec![T::zero(); n * m];
                for i in 0..n {
                    let gsum: T = g.row(i).iter().copied().sum();
                    for j in 0..m {
                        dx[i * m + j] = g.at(i, j) - y.at(i, j).exp() * gsum;
                    }
                }
                Ok(vec![Some(Tensor::new(vec![n, m], dx)?)])
            }),
        ))
    }

    pub fn layer_norm(&self, gamma: &Var<'t, T>, beta: &Var<'t, T>, eps: T) -> Result<Var<'t, T>> {
        let (out, stats) = tensor::layer_norm(&self.value, &gamma.value, &beta.value, eps)?;
        let gam = gamma.value_rc();
        let (gshape, bshape) = (gamma.shape().to_vec(), beta.shape().to_vec());
        Ok(self.tape.record(
            out,
            &[self, gamma, beta],
            Box::new(move |g, w| {
                let (n, d) = g.dims2("layer_norm backward")?;
                let xhat = &stats.normalized;
                let dn = T::lit(d as f64);
                let dx = want(w, 0, || {
                    let mut dx = vec![T::zero(); n * d];
                    for i in 0..n {
                        let (gr, hr) = (g.row(i), xhat.row(i));
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            let dh = gr[j] * gam.data()[j];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * hr[j];
                        }
                        let (mean_dh, mean_dh_h) = (sum_dh / dn, sum_dh_h / dn);
                        for j in 0..d {
                            let dh = gr[j] * gam.data()[j];
                            dx[i * d + j] = stats.inv_std[i] * (dh - mean_dh - hr[j] * mean_dh_h);
                        }
                    }
                    Tensor::new(vec![n, d], dx)
                })?;
                let dgamma = want(w, 1, || {
                    let mut acc = vec![T::zero(); d];
                    for i in 0..n {
                        for (j, a) in acc.iter_mut().enumerate() {
                            *a = *a + g.at(i, j) * xhat.at(i, j);
                        }
                    }
                    Tensor::new(gshape.clone(), acc)
                })?;
                let dbeta = want(w, 2, || {
                    let mut acc = vec![T::zero(); d];
                    for i in 0..n {
                        for (a, &v) in acc.iter_mut().zip(g.row(i)) {
                            *a = *a + v;
                        }
                    }
                    Tensor::new(bshape.clone(), acc)
                })?;
                Ok(vec![dx, dgamma, dbeta])
            }),
        ))
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&self) -> Var<'t, T> {
        let out = Tensor::scalar(self.value.sum());
        let shape = self.shape().to_vec();
        self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| Ok(vec![Some(Tensor::full(&shape, g.data()[0]))])),
        )
    }

    pub fn mean(&self) -> Var<'t, T> {
        let n = T::lit(self.value.len() as f64);
        self.sum().scale(T::one() / n)
    }

    /// Selects rows by index (indices may repeat).
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Var<'t, T>> {
        let (n, m) = self.value.dims2("gather_rows")?;
        let mut out = Vec::with_capacity(indices.len() * m);
        for &i in indices {
            if i >= n {
                return shape_err("gather_rows", self.shape(), &[i]);
            }
            out.extend_from_slice(self.value.row(i));
        }
        let out = Tensor::new(vec![indices.len(), m], out)?;
        let indices = indices.to_vec();
        Ok(self.tape.record(
            out,
            &[self],
            Box::new(move |g, _| {
                let mut dx = Tensor::zeros(&[n, m]);
                for (r, &i) in indices.iter().enumerate() {
                    for (d, &v) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *d = *d + v;
                    }
                }
                Ok(vec![Some(dx)])
            }),
        ))
    }

    /// Replaces the rows flagged in `replace` with a shared length-`D` vector.
    pub fn replace_rows(&self, replace: &[bool], row: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (n, m) = self.value.dims2("replace_rows")?;
        if replace.len() != n || row.value.len() != m {
            return shape_err("replace_rows", self.shape(), row.shape());
        }
        let mut out = (*self.value).clone();
        for (i, _) in replace.iter().enumerate().filter(|(_, &r)| r) {
            out.row_mut(i).copy_from_slice(row.value.data());
        }
        let replace = replace.to_vec();
        let row_shape = row.shape().to_vec();
        Ok(self.tape.record(
            out,
            &[self, row],
            Box::new(move |g, w| {
                let dx = want(w, 0, || {
                    let mut dx = g.clone();
                    for (i, _) in replace.iter().enumerate().filter(|(_, &r)| r) {
                        dx.row_mut(i).fill(T::zero());
                    }
                    Ok(dx)
                })?;
                let drow = want(w, 1, || {
                    let mut acc = vec![T::zero(); m];
                    for (i, _) in replace.iter().enumerate().filter(|(_, &r)| r) {
                        for (a, &v) in acc.iter_mut().zip(g.row(i)) {
                            *a = *a + v;
                        }
                    }
                    Tensor::new(row_shape.clone(), acc)
                })?;
                Ok(vec![dx, drow])
            }),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[2, 3], |i| i as f64 - 2.0));
        let grads = tape.backward(&x.sum()).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn sum_of_squares_gradient_is_twice_x() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(&[4], |i| 0.5 * i as f64 - 1.0));
        let loss = x.mul(&x).unwrap().sum();
        let grads = tape.backward(&loss).unwrap();
        assert_eq!(grads.get(&x).unwrap(), &x.value().map(|v| 2.0 * v));
    }

    #[test]
    fn gradients_accumulate_over_consumers() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = x.add(&x).unwrap().add(&x.scale(3.0)).unwrap();
        let grads = tape.backward(&y.sum()).unwrap();
        assert_eq!(grads.get(&x).unwrap().data(), &[5.0, 5.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_usage_error() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::ones(&[2]));
        assert!(matches!(tape.backward(&x), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_consumes_the_tape() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::ones(&[2]));
        let loss = x.sum();
        assert_eq!(tape.len(), 2);
        tape.backward(&loss).unwrap();
        assert!(tape.is_empty());
    }

    #[test]
    fn no_grad_tape_records_nothing() {
        let tape = Tape::<f64>::no_grad();
        let x = tape.leaf(Tensor::ones(&[2, 2]));
        let y = x.matmul(&x).unwrap();
        assert!(!y.is_tracked());
        assert!(tape.is_empty());
        assert_eq!(tape.macs().total(), 8);
    }

    #[test]
    fn constants_get_no_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::ones(&[1, 2]));
        let c = tape.constant(Tensor::ones(&[2, 1]));
        let grads = tape.backward(&x.matmul(&c).unwrap().sum()).unwrap();
        assert!(grads.get(&c).is_none());
        assert_eq!(grads.get(&x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn macs_are_charged_to_the_active_bucket() {
        let tape = Tape::<f64>::no_grad();
        let a = tape.constant(Tensor::ones(&[3, 4]));
        let b = tape.constant(Tensor::ones(&[4, 5]));
        tape.set_bucket(MacBucket::Ffn);
        a.matmul(&b).unwrap();
        tape.set_bucket(MacBucket::AttnScores);
        a.matmul(&b).unwrap();
        let m = tape.macs();
        assert_eq!(m.get(MacBucket::Ffn), 60);
        assert_eq!(m.get(MacBucket::AttnScores), 60);
        assert_eq!(m.total(), 120);
    }
}

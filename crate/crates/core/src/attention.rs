//! Scaled dot-product attention and its query/key-value mean-pooled variant.
//!
//! [`pooled_attend`] mean-pools queries by `s_q` and keys/values by `s_k`
//! along time, attends in the pooled space, then replicate-upsamples the
//! result back to the query length. Neither factor adds parameters, so one
//! set of projection weights serves every `(s_k, s_q)` setting.

use crate::autodiff::{MacBucket, Var};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{Real, Tensor};

/// Query and key-value pooling factors for one attention call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolFactors {
    pub s_q: usize,
    pub s_k: usize,
}

impl PoolFactors {
    pub const NONE: PoolFactors = PoolFactors { s_q: 1, s_k: 1 };

    pub fn new(s_q: usize, s_k: usize) -> Result<Self> {
        if s_q == 0 || s_k == 0 {
            return Err(Error::Config(format!(
                "pool factors must be >= 1, got s_q={s_q} s_k={s_k}"
            )));
        }
        Ok(Self { s_q, s_k })
    }
}

/// `softmax(q·kᵀ/√d_k)·v`. `key_valid` excludes keys from every query's
/// distribution.
pub fn attend<'t, T: Real>(
    q: &Var<'t, T>,
    k: &Var<'t, T>,
    v: &Var<'t, T>,
    key_valid: Option<&[bool]>,
) -> Result<Var<'t, T>> {
    let (_, dk) = q.value().dims2("attend q")?;
    let (s, dk2) = k.value().dims2("attend k")?;
    let (s2, _) = v.value().dims2("attend v")?;
    if dk != dk2 {
        return shape_err("attend q/k", q.shape(), k.shape());
    }
    if s != s2 {
        return shape_err("attend k/v", k.shape(), v.shape());
    }
    let scale = T::one() / T::lit(dk as f64).sqrt();
    let scores = q.matmul(&k.transpose()?)?.scale(scale);
    let probs = scores.softmax_rows(key_valid)?;
    probs.matmul(v)
}

/// Attention over mean-pooled queries, keys and values, upsampled back to
/// `q`'s length. A pooled key is valid iff any key in its window is, and its
/// value averages only the valid keys.
pub fn pooled_attend<'t, T: Real>(
    q: &Var<'t, T>,
    k: &Var<'t, T>,
    v: &Var<'t, T>,
    factors: PoolFactors,
    key_valid: Option<&[bool]>,
) -> Result<Var<'t, T>> {
    let n = q.value().rows();
    let q_p = q.downsample(factors.s_q)?;
    let (k_p, v_p, valid_p) = pool_keys(k, v, factors.s_k, key_valid)?;
    let out_p = attend(&q_p, &k_p, &v_p, valid_p.as_deref())?;
    out_p.upsample(factors.s_q, Some(n))
}

type PooledKeys<'t, T> = (Var<'t, T>, Var<'t, T>, Option<Vec<bool>>);

fn pool_keys<'t, T: Real>(
    k: &Var<'t, T>,
    v: &Var<'t, T>,
    s_k: usize,
    key_valid: Option<&[bool]>,
) -> Result<PooledKeys<'t, T>> {
    match key_valid {
        Some(valid) if s_k > 1 => {
            let (k_p, pooled) = k.downsample_masked(s_k, valid)?;
            let (v_p, _) = v.downsample_masked(s_k, valid)?;
            Ok((k_p, v_p, Some(pooled)))
        }
        _ => Ok((
            k.downsample(s_k)?,
            v.downsample(s_k)?,
            key_valid.map(<[bool]>::to_vec),
        )),
    }
}

/// Projection weights of one multi-head attention block. Each `w_*` is
/// `E×E` applied as `x·W`; biases are length `E`.
#[derive(Clone, Debug)]
pub struct AttentionParams<'t, T: Real> {
    pub w_q: Var<'t, T>,
    pub b_q: Var<'t, T>,
    pub w_k: Var<'t, T>,
    pub b_k: Var<'t, T>,
    pub w_v: Var<'t, T>,
    pub b_v: Var<'t, T>,
    pub w_o: Var<'t, T>,
    pub b_o: Var<'t, T>,
    pub heads: usize,
}

impl<T: Real> AttentionParams<'_, T> {
    pub fn model_dim(&self) -> usize {
        self.w_q.value().rows()
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim() / self.heads
    }

    pub fn param_count(&self) -> usize {
        [
            &self.w_q, &self.b_q, &self.w_k, &self.b_k, &self.w_v, &self.b_v, &self.w_o, &self.b_o,
        ]
        .iter()
        .map(|v| v.value().len())
        .sum()
    }
}

/// Multi-head self-attention with per-call pooling. Pooling acts on the full
/// projected `Q`, `K`, `V` before the head split; since it only touches the
/// time axis this equals pooling each head separately.
pub fn multi_head_pooled<'t, T: Real>(
    x: &Var<'t, T>,
    params: &AttentionParams<'t, T>,
    factors: PoolFactors,
    key_valid: Option<&[bool]>,
) -> Result<Var<'t, T>> {
    let (n, e) = x.value().dims2("multi_head_pooled")?;
    if e != params.model_dim() {
        return shape_err("multi_head_pooled", x.shape(), params.w_q.shape());
    }
    if params.heads == 0 || e % params.heads != 0 {
        return Err(Error::Config(format!(
            "model dim {e} is not divisible by {} heads",
            params.heads
        )));
    }
    if let Some(valid) = key_valid {
        if valid.len() != n {
            return Err(Error::Length(format!("mask has {} entries for {n} frames", valid.len())));
        }
    }
    let tape = x.tape();
    let prev = tape.set_bucket(MacBucket::AttnProjection);
    let q = x.matmul(&params.w_q)?.add_row_bias(&params.b_q)?;
    let k = x.matmul(&params.w_k)?.add_row_bias(&params.b_k)?;
    let v = x.matmul(&params.w_v)?.add_row_bias(&params.b_v)?;

    tape.set_bucket(MacBucket::AttnScores);
    let q_p = q.downsample(factors.s_q)?;
    let (k_p, v_p, valid_p) = pool_keys(&k, &v, factors.s_k, key_valid)?;
    let dh = params.head_dim();
    let mut heads = Vec::with_capacity(params.heads);
    for h in 0..params.heads {
        let cols = h * dh..(h + 1) * dh;
        heads.push(attend(
            &q_p.slice_cols(cols.start, cols.end)?,
            &k_p.slice_cols(cols.start, cols.end)?,
            &v_p.slice_cols(cols.start, cols.end)?,
            valid_p.as_deref(),
        )?);
    }
    let merged = Var::concat_cols(&heads)?.upsample(factors.s_q, Some(n))?;

    tape.set_bucket(MacBucket::AttnProjection);
    let out = merged.matmul(&params.w_o)?.add_row_bias(&params.b_o);
    tape.set_bucket(prev);
    out
}

/// Plain multi-head attention, head by head, without any pooling path.
/// Reference for the degenerate `(1, 1)` case.
pub fn multi_head_reference<'t, T: Real>(
    x: &Var<'t, T>,
    params: &AttentionParams<'t, T>,
    key_valid: Option<&[bool]>,
) -> Result<Var<'t, T>> {
    let q = x.matmul(&params.w_q)?.add_row_bias(&params.b_q)?;
    let k = x.matmul(&params.w_k)?.add_row_bias(&params.b_k)?;
    let v = x.matmul(&params.w_v)?.add_row_bias(&params.b_v)?;
    let dh = params.head_dim();
    let heads = (0..params.heads)
        .map(|h| {
            let (a, b) = (h * dh, (h + 1) * dh);
            attend(&q.slice_cols(a, b)?, &k.slice_cols(a, b)?, &v.slice_cols(a, b)?, key_valid)
        })
        .collect::<Result<Vec<_>>>()?;
    Var::concat_cols(&heads)?.matmul(&params.w_o)?.add_row_bias(&params.b_o)
}

/// Scalar-loop attention used as an independent oracle.
pub fn attend_scalar_oracle(
    q: &Tensor<f64>,
    k: &Tensor<f64>,
    v: &Tensor<f64>,
    key_valid: Option<&[bool]>,
) -> Tensor<f64> {
    let (n, dk) = (q.rows(), q.cols());
    let (s, dv) = (k.rows(), v.cols());
    let valid = |j: usize| key_valid.is_none_or(|m| m[j]);
    let mut out = Tensor::zeros(&[n, dv]);
    for i in 0..n {
        let mut logits = vec![f64::NEG_INFINITY; s];
        for (j, l) in logits.iter_mut().enumerate() {
            if valid(j) {
                let mut dot = 0.0;
                for c in 0..dk {
                    dot += q.at(i, c) * k.at(j, c);
                }
                *l = dot / (dk as f64).sqrt();
            }
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        for c in 0..dv {
            let mut acc = 0.0;
            for j in 0..s {
                acc += weights[j] / total * v.at(j, c);
            }
            out.data_mut()[i * dv + c] = acc;
        }
    }
    out
}

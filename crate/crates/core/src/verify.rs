//! Self-checks run by `stochpool verify`: operator laws, degenerate
//! equivalence against plain attention and a plain post-LN encoder, gradient
//! checks, the CTC oracle, sampler statistics and MAC exactness.
//!
//! Check names are dotted (`pooling.round_trip`, `gradients.op.conv1d`); a
//! filter selects a name and everything below it.

use std::time::{Duration, Instant};

use crate::attention::{
    attend_scalar_oracle, multi_head_pooled, multi_head_reference, pooled_attend, AttentionParams,
    PoolFactors,
};
use crate::autodiff::{Tape, Var};
use crate::cost::{analytic_cost, instrumented_macs};
use crate::ctc::{brute_force_loss, check_feasible, ctc_loss, ctc_loss_value, greedy_decode, BLANK};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::gradcheck::{self, GradCheckOptions};
use crate::pooling::{downsample, downsample_masked, pooled_len, upsample};
use crate::stochastic::{chi_square_uniform, CompressionConfig, sample_config, FactorSets, Purpose, Rng, Triplet};
use crate::tensor::{self, Conv1dSpec, Tensor};

/// Tolerances used by the suites.
pub const DEGENERATE_ATTENTION_TOL: f64 = 1e-14;
pub const DEGENERATE_ENCODER_TOL: f64 = 1e-12;
pub const OPERATOR_TOL: f64 = 1e-12;
pub const GRADIENT_TOL: f64 = 1e-4;
pub const CTC_TOL: f64 = 1e-9;
pub const CHI_SQUARE_ALPHA: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub passed: bool,
    pub detail: String,
}

impl Verdict {
    fn within(err: f64, tol: f64) -> Self {
        Self {
            passed: err <= tol,
            detail: format!("max error {err:.3e} (tol {tol:.0e})"),
        }
    }

    fn holds(passed: bool, detail: impl Into<String>) -> Self {
        Self {
            passed,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
}

type CheckFn = Box<dyn Fn() -> Result<Verdict>>;

pub struct Check {
    pub name: String,
    run: CheckFn,
}

impl Check {
    fn new(name: impl Into<String>, run: impl Fn() -> Result<Verdict> + 'static) -> Self {
        Self {
            name: name.into(),
            run: Box::new(run),
        }
    }

    pub fn run(&self) -> Outcome {
        let start = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| (self.run)()));
        let (passed, detail) = match result {
            Ok(Ok(v)) => (v.passed, v.detail),
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| p.downcast_ref::<&str>().copied())
                    .unwrap_or("unknown panic");
                (false, format!("panicked: {msg}"))
            }
        };
        Outcome {
            name: self.name.clone(),
            passed,
            detail,
            elapsed: start.elapsed(),
        }
    }
}

/// True when `name` is `filter` or lies below it.
pub fn matches(name: &str, filter: &str) -> bool {
    name == filter || name.strip_prefix(filter).is_some_and(|rest| rest.starts_with('.'))
}

/// Every check, in run order.
pub fn all_checks() -> Vec<Check> {
    let mut v = vec![
        Check::new("pooling.length_law", pooling_length_law),
        Check::new("pooling.identity", pooling_identity),
        Check::new("pooling.round_trip", pooling_round_trip),
        Check::new("pooling.linearity", pooling_linearity),
        Check::new("pooling.truncation", pooling_truncation),
        Check::new("pooling.masked", pooling_masked),
        Check::new("attention.degenerate", attention_degenerate),
        Check::new("attention.pooled_oracle", attention_pooled_oracle),
        Check::new("encoder.degenerate", encoder_degenerate),
        Check::new("encoder.length", encoder_length),
    ];
    v.extend(op_gradient_checks());
    for t in [Triplet::new(1, 1, 1), Triplet::new(2, 2, 2)] {
        v.push(Check::new(format!("gradients.model.{t}"), move || model_gradient(t)));
    }
    v.extend([
        Check::new("ctc.oracle", ctc_oracle),
        Check::new("ctc.greedy", ctc_greedy),
        Check::new("sampler.uniformity", sampler_uniformity),
        Check::new("sampler.reproducible", sampler_reproducible),
        Check::new("cost.exactness", cost_exactness),
        Check::new("cost.monotone", cost_monotone),
    ]);
    v
}

/// Checks selected by `filters` (all when empty).
pub fn select(filters: &[String]) -> Result<Vec<Check>> {
    let checks = all_checks();
    if filters.is_empty() {
        return Ok(checks);
    }
    for f in filters {
        if !checks.iter().any(|c| matches(&c.name, f)) {
            return Err(Error::Usage(format!("filter `{f}` matches no check")));
        }
    }
    Ok(checks
        .into_iter()
        .filter(|c| filters.iter().any(|f| matches(&c.name, f)))
        .collect())
}

trait Gap {
    fn gap(&self, other: &Self) -> f64;
}

impl Gap for Tensor<f64> {
    /// Max absolute difference; infinite when shapes disagree.
    fn gap(&self, other: &Self) -> f64 {
        if self.shape() == other.shape() {
            self.max_abs_diff(other)
        } else {
            f64::INFINITY
        }
    }
}

fn random(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

fn rng(index: u64) -> Rng {
    Rng::keyed(0x5eed, Purpose::Verify, index)
}

// Independent block means and replication.
fn block_means(x: &Tensor<f64>, s: usize) -> Tensor<f64> {
    let (n, d) = (x.rows(), x.cols());
    let np = n.div_ceil(s);
    let mut out = Tensor::zeros(&[np, d]);
    for i in 0..np {
        let rows = i * s..((i + 1) * s).min(n);
        let count = rows.len() as f64;
        for r in rows {
            for c in 0..d {
                out.data_mut()[i * d + c] += x.at(r, c) / count;
            }
        }
    }
    out
}

fn replicate(x: &Tensor<f64>, s: usize, len: usize) -> Tensor<f64> {
    let d = x.cols();
    Tensor::from_fn(&[len, d], |i| x.at((i / d) / s, i % d))
}

fn pooling_length_law() -> Result<Verdict> {
    let mut rng = rng(1);
    for n in 1..=64 {
        let x = random(&mut rng, &[n, 3]);
        for s in 1..=4 {
            let d = downsample(&x, s)?;
            let expected = n.div_ceil(s);
            if d.rows() != expected || pooled_len(n, s) != expected {
                return Ok(Verdict::holds(false, format!("N={n} s={s}: {} rows", d.rows())));
            }
            if upsample(&d, s, None)?.rows() != expected * s {
                return Ok(Verdict::holds(false, format!("upsample N_p={expected} s={s}")));
            }
        }
    }
    Ok(Verdict::holds(true, "N in 1..=64, s in 1..=4"))
}

fn pooling_identity() -> Result<Verdict> {
    let mut rng = rng(2);
    for n in 1..=64 {
        let x = random(&mut rng, &[n, 3]);
        if downsample(&x, 1)? != x || upsample(&x, 1, None)? != x || upsample(&x, 1, Some(n))? != x {
            return Ok(Verdict::holds(false, format!("factor 1 changed N={n}")));
        }
    }
    Ok(Verdict::holds(true, "bit-exact at factor 1"))
}

fn pooling_round_trip() -> Result<Verdict> {
    let mut rng = rng(3);
    let mut worst = 0.0f64;
    for np in 1..=64 {
        let y = random(&mut rng, &[np, 3]);
        for s in 1..=4 {
            worst = worst.max(downsample(&upsample(&y, s, None)?, s)?.gap(&y));
            // truncating anywhere inside the last block keeps the round trip
            for n in (np - 1) * s + 1..=np * s {
                worst = worst.max(downsample(&upsample(&y, s, Some(n))?, s)?.gap(&y));
            }
        }
    }
    Ok(Verdict::within(worst, OPERATOR_TOL))
}

fn pooling_linearity() -> Result<Verdict> {
    let mut rng = rng(4);
    let (a, b) = (1.7, -0.4);
    let lin = |x: &Tensor<f64>, y: &Tensor<f64>| x.zip_map(y, "lin", |u, v| a * u + b * v);
    let mut worst = 0.0f64;
    for n in 1..=64 {
        let x = random(&mut rng, &[n, 3]);
        let y = random(&mut rng, &[n, 3]);
        for s in 1..=4 {
            let lhs = downsample(&lin(&x, &y)?, s)?;
            let rhs = lin(&downsample(&x, s)?, &downsample(&y, s)?)?;
            worst = worst.max(lhs.gap(&rhs));
            worst = worst.max(lhs.gap(&block_means(&lin(&x, &y)?, s)));
            let lhs = upsample(&lin(&x, &y)?, s, Some(n))?;
            let rhs = lin(&upsample(&x, s, Some(n))?, &upsample(&y, s, Some(n))?)?;
            worst = worst.max(lhs.gap(&rhs));
        }
    }
    Ok(Verdict::within(worst, OPERATOR_TOL))
}

fn pooling_truncation() -> Result<Verdict> {
    let mut rng = rng(5);
    for n in 1..=64 {
        let x = random(&mut rng, &[n, 2]);
        for s in 1..=4 {
            let up = upsample(&downsample(&x, s)?, s, Some(n))?;
            if up.rows() != n {
                return Ok(Verdict::holds(
                    false,
                    format!("N={n} s={s}: upsample returned {} rows", up.rows()),
                ));
            }
            if up.gap(&replicate(&block_means(&x, s), s, n)) > OPERATOR_TOL {
                return Ok(Verdict::holds(false, format!("N={n} s={s}: rows differ")));
            }
        }
    }
    Ok(Verdict::holds(true, "U(D(x,s),s) has N rows"))
}

fn pooling_masked() -> Result<Verdict> {
    let mut rng = rng(6);
    let mut worst = 0.0f64;
    for n in 1..=32 {
        let x = random(&mut rng, &[n, 2]);
        for s in 1..=4 {
            let (all, valid) = downsample_masked(&x, s, &vec![true; n])?;
            worst = worst.max(all.gap(&downsample(&x, s)?));
            if valid.iter().any(|v| !v) {
                return Ok(Verdict::holds(false, format!("N={n} s={s}: all-valid mask lost rows")));
            }
            let mask: Vec<bool> = (0..n).map(|i| i % 3 != 1).collect();
            let (p, pv) = downsample_masked(&x, s, &mask)?;
            for (i, &v) in pv.iter().enumerate() {
                let rows: Vec<usize> = (i * s..((i + 1) * s).min(n)).filter(|&r| mask[r]).collect();
                if v != !rows.is_empty() {
                    return Ok(Verdict::holds(false, format!("N={n} s={s}: block {i} validity")));
                }
                for c in 0..2 {
                    let mean = if rows.is_empty() {
                        0.0
                    } else {
                        rows.iter().map(|&r| x.at(r, c)).sum::<f64>() / rows.len() as f64
                    };
                    worst = worst.max((p.at(i, c) - mean).abs());
                }
            }
        }
    }
    Ok(Verdict::within(worst, OPERATOR_TOL))
}

fn attention_params<'t>(tape: &'t Tape<f64>, rng: &mut Rng, e: usize, heads: usize) -> AttentionParams<'t, f64> {
    let scale = (1.0 / e as f64).sqrt();
    let mut w = || tape.constant(random(rng, &[e, e]).map(|v| v * scale));
    let (w_q, w_k, w_v, w_o) = (w(), w(), w(), w());
    let mut b = || tape.constant(random(rng, &[e]).map(|v| 0.1 * v));
    AttentionParams {
        w_q,
        b_q: b(),
        w_k,
        b_k: b(),
        w_v,
        b_v: b(),
        w_o,
        b_o: b(),
        heads,
    }
}

fn attention_degenerate() -> Result<Verdict> {
    let mut rng = rng(7);
    let tape = Tape::no_grad();
    let mut worst = 0.0f64;
    for &(n, s, d) in &[(1, 1, 4), (7, 7, 8), (13, 9, 16), (40, 40, 8)] {
        let q = random(&mut rng, &[n, d]);
        let k = random(&mut rng, &[s, d]);
        let v = random(&mut rng, &[s, d]);
        let mask: Vec<bool> = (0..s).map(|j| j % 4 != 3).collect();
        for valid in [None, Some(mask.as_slice())] {
            let out = pooled_attend(
                &tape.constant(q.clone()),
                &tape.constant(k.clone()),
                &tape.constant(v.clone()),
                PoolFactors::NONE,
                valid,
            )?;
            worst = worst.max(out.value().gap(&attend_scalar_oracle(&q, &k, &v, valid)));
        }
    }
    let params = attention_params(&tape, &mut rng, 16, 4);
    let x = tape.constant(random(&mut rng, &[23, 16]));
    let pooled = multi_head_pooled(&x, &params, PoolFactors::NONE, None)?;
    let plain = multi_head_reference(&x, &params, None)?;
    worst = worst.max(pooled.value().gap(plain.value()));
    Ok(Verdict::within(worst, DEGENERATE_ATTENTION_TOL))
}

fn attention_pooled_oracle() -> Result<Verdict> {
    let mut rng = rng(8);
    let tape = Tape::no_grad();
    let mut worst = 0.0f64;
    for n in [1, 5, 12, 31] {
        let q = random(&mut rng, &[n, 8]);
        let k = random(&mut rng, &[n, 8]);
        let v = random(&mut rng, &[n, 8]);
        for s_q in 1..=3 {
            for s_k in 1..=3 {
                let out = pooled_attend(
                    &tape.constant(q.clone()),
                    &tape.constant(k.clone()),
                    &tape.constant(v.clone()),
                    PoolFactors::new(s_q, s_k)?,
                    None,
                )?;
                let small = attend_scalar_oracle(
                    &block_means(&q, s_q),
                    &block_means(&k, s_k),
                    &block_means(&v, s_k),
                    None,
                );
                worst = worst.max(out.value().gap(&replicate(&small, s_q, n)));
            }
        }
    }
    Ok(Verdict::within(worst, OPERATOR_TOL))
}

fn concat_cols(parts: &[Tensor<f64>]) -> Result<Tensor<f64>> {
    let n = parts[0].rows();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| parts.iter().flat_map(|p| p.row(i).iter().copied()).collect())
        .collect();
    Tensor::from_rows(&rows)
}

/// Plain post-LN transformer over `[T × E]` features using the encoder's
/// parameters, with no pooling path and no tape.
pub fn reference_encode(enc: &Encoder<f64>, x: &Tensor<f64>) -> Result<Tensor<f64>> {
    let cfg = enc.config();
    let p = |name: &str| {
        enc.params()
            .by_name(name)
            .ok_or_else(|| Error::Config(format!("missing parameter {name}")))
    };
    let linear = |x: &Tensor<f64>, name: &str| -> Result<Tensor<f64>> {
        let mut y = tensor::matmul(x, p(&format!("{name}.weight"))?)?;
        let b = p(&format!("{name}.bias"))?;
        for i in 0..y.rows() {
            for (v, &bb) in y.row_mut(i).iter_mut().zip(b.data()) {
                *v += bb;
            }
        }
        Ok(y)
    };
    let norm = |x: &Tensor<f64>, name: &str| -> Result<Tensor<f64>> {
        let (g, b) = (p(&format!("{name}.gamma"))?, p(&format!("{name}.beta"))?);
        Ok(tensor::layer_norm(x, g, b, cfg.layer_norm_eps)?.0)
    };
    let add = |a: &Tensor<f64>, b: &Tensor<f64>| a.zip_map(b, "reference add", |u, v| u + v);

    let spec = Conv1dSpec::new(1, cfg.pos_conv_kernel / 2, cfg.pos_conv_groups);
    let conv = tensor::conv1d(x, p("pos_conv.weight")?, Some(p("pos_conv.bias")?), spec)?
        .map(tensor::gelu);
    let mut h = norm(&add(x, &conv)?, "pos_norm")?;
    let dh = cfg.head_dim();
    for i in 0..cfg.depth {
        let l = format!("layers.{i}");
        let q = linear(&h, &format!("{l}.attn.q"))?;
        let k = linear(&h, &format!("{l}.attn.k"))?;
        let v = linear(&h, &format!("{l}.attn.v"))?;
        let heads = (0..cfg.heads)
            .map(|j| {
                let (a, b) = (j * dh, (j + 1) * dh);
                Ok(attend_scalar_oracle(
                    &q.slice_cols(a, b)?,
                    &k.slice_cols(a, b)?,
                    &v.slice_cols(a, b)?,
                    None,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        let a = linear(&concat_cols(&heads)?, &format!("{l}.attn.o"))?;
        let h1 = norm(&add(&h, &a)?, &format!("{l}.ln1"))?;
        let f = linear(&linear(&h1, &format!("{l}.ffn.1"))?.map(tensor::gelu), &format!("{l}.ffn.2"))?;
        h = norm(&add(&h1, &f)?, &format!("{l}.ln2"))?;
    }
    Ok(h)
}

fn encode_features(enc: &Encoder<f64>, x: &Tensor<f64>, cfg: &CompressionConfig) -> Result<Tensor<f64>> {
    let tape = Tape::no_grad();
    let b = enc.params().bind(&tape, |_| false);
    Ok(enc.encode(&b, &tape.constant(x.clone()), cfg, None)?.value().clone())
}

fn encoder_degenerate() -> Result<Verdict> {
    let mut rng = rng(9);
    let mut worst = 0.0f64;
    for (preset, t) in [("tiny", 1), ("tiny", 37), ("small", 20)] {
        let enc = Encoder::<f64>::from_preset(preset, 3)?;
        let x = random(&mut rng, &[t, enc.config().model_dim]);
        let cfg = Triplet::new(1, 1, 1).config(enc.config().depth)?;
        let out = encode_features(&enc, &x, &cfg)?;
        worst = worst.max(out.gap(&reference_encode(&enc, &x)?));
    }
    Ok(Verdict::within(worst, DEGENERATE_ENCODER_TOL))
}

fn encoder_length() -> Result<Verdict> {
    let enc = Encoder::<f64>::from_preset("tiny", 4)?;
    let mut rng = rng(10);
    let depth = enc.config().depth;
    for t in [1, 2, 5, 17, 50] {
        let x = random(&mut rng, &[t, enc.config().model_dim]);
        for s_f in 1..=3 {
            for s_k in 1..=3 {
                for s_q in 1..=3 {
                    let cfg = Triplet::new(s_f, s_k, s_q).config(depth)?;
                    let rows = encode_features(&enc, &x, &cfg)?.rows();
                    if rows != t {
                        return Ok(Verdict::holds(
                            false,
                            format!("T={t} at {s_f}-{s_k}-{s_q}: {rows} rows"),
                        ));
                    }
                }
            }
        }
    }
    Ok(Verdict::holds(true, "output length = input length for {1,2,3}^3"))
}

fn weighted<'t>(y: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let w = Tensor::from_fn(y.shape(), |i| (0.37 * i as f64 + 0.11).sin() + 0.5);
    Ok(y.mul(&y.tape().constant(w))?.sum())
}

type OpFn = for<'t> fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    vec![
        ("matmul", vec![vec![4, 3], vec![3, 5]], |_, v| weighted(v[0].matmul(&v[1])?)),
        ("add", vec![vec![3, 4], vec![3, 4]], |_, v| weighted(v[0].add(&v[1])?)),
        ("sub", vec![vec![3, 4], vec![3, 4]], |_, v| weighted(v[0].sub(&v[1])?)),
        ("mul", vec![vec![3, 4], vec![3, 4]], |_, v| weighted(v[0].mul(&v[1])?)),
        ("add_row_bias", vec![vec![3, 4], vec![4]], |_, v| weighted(v[0].add_row_bias(&v[1])?)),
        ("scale", vec![vec![3, 4]], |_, v| weighted(v[0].scale(-1.3))),
        ("gelu", vec![vec![3, 4]], |_, v| weighted(v[0].gelu())),
        ("relu", vec![vec![3, 4]], |_, v| weighted(v[0].relu())),
        ("transpose", vec![vec![3, 4]], |_, v| weighted(v[0].transpose()?)),
        ("reshape", vec![vec![3, 4]], |_, v| weighted(v[0].reshape(&[2, 6])?)),
        ("slice_rows", vec![vec![5, 3]], |_, v| weighted(v[0].slice_rows(1, 4)?)),
        ("slice_cols", vec![vec![3, 5]], |_, v| weighted(v[0].slice_cols(2, 5)?)),
        ("concat_cols", vec![vec![3, 2], vec![3, 4]], |_, v| {
            weighted(Var::concat_cols(&[v[0].clone(), v[1].clone()])?)
        }),
        ("concat_rows", vec![vec![2, 3], vec![4, 3]], |_, v| {
            weighted(Var::concat_rows(&[v[0].clone(), v[1].clone()])?)
        }),
        ("conv1d", vec![vec![11, 4], vec![6, 2, 3], vec![6]], |_, v| {
            weighted(v[0].conv1d(&v[1], Some(&v[2]), Conv1dSpec::new(2, 1, 2))?)
        }),
        ("positional_conv", vec![vec![9, 4], vec![4, 2, 5], vec![4]], |_, v| {
            let conv = v[0].conv1d(&v[1], Some(&v[2]), Conv1dSpec::new(1, 2, 2))?.gelu();
            weighted(v[0].add(&conv)?)
        }),
        ("softmax_rows", vec![vec![3, 5]], |_, v| {
            weighted(v[0].softmax_rows(Some(&[true, false, true, true, false]))?)
        }),
        ("log_softmax_rows", vec![vec![3, 5]], |_, v| weighted(v[0].log_softmax_rows()?)),
        ("layer_norm", vec![vec![3, 6], vec![6], vec![6]], |_, v| {
            weighted(v[0].layer_norm(&v[1], &v[2], 1e-5)?)
        }),
        ("sum", vec![vec![3, 4]], |_, v| Ok(v[0].sum())),
        ("mean", vec![vec![3, 4]], |_, v| Ok(v[0].mean().scale(3.0))),
        ("gather_rows", vec![vec![4, 3]], |_, v| weighted(v[0].gather_rows(&[3, 0, 3, 1])?)),
        ("replace_rows", vec![vec![4, 3], vec![3]], |_, v| {
            weighted(v[0].replace_rows(&[false, true, false, true], &v[1])?)
        }),
        ("downsample", vec![vec![7, 3]], |_, v| weighted(v[0].downsample(3)?)),
        ("downsample_masked", vec![vec![7, 3]], |_, v| {
            weighted(v[0].downsample_masked(2, &[true, false, true, true, false, false, true])?.0)
        }),
        ("upsample", vec![vec![3, 2]], |_, v| weighted(v[0].upsample(3, Some(8))?)),
        ("pooled_attend", vec![vec![7, 4], vec![7, 4], vec![7, 4]], |_, v| {
            weighted(pooled_attend(&v[0], &v[1], &v[2], PoolFactors::new(2, 3)?, None)?)
        }),
        ("pooled_attend_masked", vec![vec![7, 4], vec![7, 4], vec![7, 4]], |_, v| {
            let valid = [true, true, false, true, false, false, true];
            weighted(pooled_attend(&v[0], &v[1], &v[2], PoolFactors::new(3, 2)?, Some(&valid))?)
        }),
        (
            "multi_head_pooled",
            vec![vec![6, 4], vec![4, 4], vec![4], vec![4, 4], vec![4], vec![4, 4], vec![4], vec![4, 4], vec![4]],
            |_, v| {
                let params = AttentionParams {
                    w_q: v[1].clone(),
                    b_q: v[2].clone(),
                    w_k: v[3].clone(),
                    b_k: v[4].clone(),
                    w_v: v[5].clone(),
                    b_v: v[6].clone(),
                    w_o: v[7].clone(),
                    b_o: v[8].clone(),
                    heads: 2,
                };
                weighted(multi_head_pooled(&v[0], &params, PoolFactors::new(2, 2)?, None)?)
            },
        ),
        ("ctc_loss", vec![vec![6, 4]], |_, v| ctc_loss(&v[0], &[2, 2, 1])),
    ]
}

fn op_gradient_checks() -> Vec<Check> {
    op_cases()
        .into_iter()
        .enumerate()
        .map(|(i, (name, shapes, f))| {
            Check::new(format!("gradients.op.{name}"), move || {
                let mut rng = rng(100 + i as u64);
                let inputs: Vec<Tensor<f64>> = shapes.iter().map(|s| random(&mut rng, s)).collect();
                let report = gradcheck::check(&inputs, f, GradCheckOptions::default())?;
                let mut v = Verdict::within(report.max_rel_error, GRADIENT_TOL);
                let (a, n) = report.worst_values;
                v.detail = format!("{}; worst input {} tape {a:.3e} fd {n:.3e}", v.detail, report.worst.0);
                Ok(v)
            })
        })
        .collect()
}

/// Full tiny model, audio through the CTC head, with two masked frames.
fn model_gradient(t: Triplet) -> Result<Verdict> {
    model_gradient_seeded(t, 11)
}

pub fn model_gradient_seeded(t: Triplet, seed: u64) -> Result<Verdict> {
    let mut enc = Encoder::<f64>::from_preset("tiny", seed)?;
    enc.add_head(5, seed)?;
    let cfg = t.config(enc.config().depth)?;
    let frames = 9;
    let mut rng = rng(11 + seed);
    let n = enc.config().feature_extractor.samples_for(frames);
    let audio: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    let masked: Vec<bool> = (0..frames).map(|i| i == 2 || i == 3).collect();
    let labels = [1, 3, 4, 2];
    let inputs: Vec<Tensor<f64>> = enc.params().iter().map(|(_, t)| t.clone()).collect();
    let opts = GradCheckOptions {
        max_coords: 8,
        ..GradCheckOptions::default()
    };
    let report = gradcheck::check(
        &inputs,
        |_, vars| {
            let b = enc.params().bind_vars(vars.to_vec())?;
            let feats = enc.extract_features(&b, &audio)?;
            let feats = enc.mask_frames(&b, &feats, &masked)?;
            let h = enc.encode(&b, &feats, &cfg, None)?;
            ctc_loss(&enc.head_logits(&b, &h)?, &labels)
        },
        opts,
    )?;
    let mut v = Verdict::within(report.max_rel_error, GRADIENT_TOL);
    let (a, n) = report.worst_values;
    v.detail = format!(
        "{} over {} coordinates; worst {}[{}] tape {a:.3e} fd {n:.3e}",
        v.detail,
        report.coords_checked,
        enc.params().iter().nth(report.worst.0).map_or("?", |(name, _)| name),
        report.worst.1
    );
    Ok(v)
}

fn ctc_oracle() -> Result<Verdict> {
    let mut rng = rng(12);
    let mut worst = 0.0f64;
    let mut instances = 0;
    while instances < 200 {
        let frames = 1 + rng.below(6);
        let symbols = 1 + rng.below(3);
        let len = rng.below(frames + 1);
        let labels: Vec<usize> = (0..len).map(|_| 1 + rng.below(symbols)).collect();
        if check_feasible(frames, &labels, symbols).is_err() {
            continue;
        }
        let logits = Tensor::from_fn(&[frames, symbols + 1], |_| 2.0 * rng.normal());
        let fast = ctc_loss_value(&logits, &labels)?;
        worst = worst.max((fast - brute_force_loss(&logits, &labels)).abs());
        instances += 1;
    }
    let mut v = Verdict::within(worst, CTC_TOL);
    v.detail = format!("{} over {instances} instances", v.detail);
    Ok(v)
}

// Merge repeats, then drop blanks.
fn collapse_oracle(path: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev && p != BLANK {
            out.push(p);
        }
        prev = Some(p);
    }
    out
}

fn ctc_greedy() -> Result<Verdict> {
    let classes: usize = 3;
    let mut cases = 0;
    for len in 1..=5u32 {
        for code in 0..classes.pow(len) {
            let path: Vec<usize> = (0..len).map(|i| (code / classes.pow(i)) % classes).collect();
            let logits = Tensor::<f64>::from_fn(&[path.len(), classes], |i| {
                if path[i / classes] == i % classes {
                    2.0
                } else {
                    -1.0
                }
            });
            let got = greedy_decode(&logits);
            if got != collapse_oracle(&path) {
                return Ok(Verdict::holds(false, format!("path {path:?} decoded to {got:?}")));
            }
            cases += 1;
        }
    }
    Ok(Verdict::holds(true, format!("{cases} enumerated paths")))
}

/// Draws used for the uniformity test.
pub const SAMPLER_DRAWS: usize = 100_000;

/// Joint `(S_f, s_k, s_q)` histogram of the first layer plus the second
/// layer's `s_k`, over `draws` samples.
pub fn sampler_histogram(sets: &FactorSets, seed: u64, draws: usize) -> Result<Vec<u64>> {
    let mut rng = Rng::keyed(seed, Purpose::Config, 0);
    let (nf, nk, nq) = (sets.squeeze.len(), sets.kv.len(), sets.q.len());
    let pos = |set: &[usize], v: usize| set.iter().position(|&x| x == v).expect("sampled from set");
    let mut counts = vec![0u64; nf * nk * nq * nk];
    for _ in 0..draws {
        let c = sample_config(sets, 2, &mut rng)?;
        let l0 = c.per_layer[0];
        let idx = ((pos(&sets.squeeze, c.s_f) * nk + pos(&sets.kv, l0.s_k)) * nq
            + pos(&sets.q, l0.s_q))
            * nk
            + pos(&sets.kv, c.per_layer[1].s_k);
        counts[idx] += 1;
    }
    Ok(counts)
}

fn sampler_uniformity() -> Result<Verdict> {
    let mut details = Vec::new();
    let mut passed = true;
    for sets in [FactorSets::up_to(2, 2, 2)?, FactorSets::up_to(3, 3, 3)?] {
        let counts = sampler_histogram(&sets, 2024, SAMPLER_DRAWS)?;
        let (stat, p) = chi_square_uniform(&counts);
        passed &= p > CHI_SQUARE_ALPHA;
        details.push(format!("{} bins: chi2 {stat:.1}, p {p:.3}", counts.len()));
    }
    Ok(Verdict::holds(passed, details.join("; ")))
}

fn sampler_reproducible() -> Result<Verdict> {
    let sets = FactorSets::up_to(3, 3, 3)?;
    let run = |seed| -> Result<Vec<String>> {
        let mut rng = Rng::keyed(seed, Purpose::Config, 0);
        (0..1000).map(|_| Ok(sample_config(&sets, 4, &mut rng)?.to_string())).collect()
    };
    let (a, b, c) = (run(5)?, run(5)?, run(6)?);
    Ok(Verdict::holds(
        a == b && a != c,
        "same seed identical, different seed differs",
    ))
}

fn cost_exactness() -> Result<Verdict> {
    let enc = Encoder::<f64>::from_preset("tiny", 0)?;
    let depth = enc.config().depth;
    for s_f in 1..=2 {
        for s_k in 1..=2 {
            for s_q in 1..=2 {
                let cfg = Triplet::new(s_f, s_k, s_q).config(depth)?;
                let counted = instrumented_macs(&enc, &cfg, 50)?;
                let model = analytic_cost(&cfg, enc.config(), 50)?.macs;
                if counted != model {
                    return Ok(Verdict::holds(
                        false,
                        format!("{s_f}-{s_k}-{s_q}: counted {counted:?}, analytic {model:?}"),
                    ));
                }
            }
        }
    }
    Ok(Verdict::holds(true, "{1,2}^3 at tiny, T=50"))
}

fn cost_monotone() -> Result<Verdict> {
    let mut details = Vec::new();
    for preset in ["tiny", "small", "B"] {
        let enc = EncoderConfig::preset(preset)?;
        let totals = Triplet::STANDARD
            .iter()
            .map(|t| Ok(analytic_cost(&t.config(enc.depth)?, &enc, 1000)?.macs.total()))
            .collect::<Result<Vec<u64>>>()?;
        if !totals.windows(2).all(|w| w[0] > w[1]) {
            return Ok(Verdict::holds(false, format!("{preset}: {totals:?}")));
        }
        details.push(preset);
    }
    Ok(Verdict::holds(true, format!("strictly decreasing at {}", details.join(", "))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filters_select_by_dotted_prefix() {
        assert!(matches("pooling.round_trip", "pooling"));
        assert!(matches("pooling.round_trip", "pooling.round_trip"));
        assert!(!matches("pooling.round_trip", "pool"));
        assert!(!matches("attention.pooled_oracle", "pooling"));
        let sel = select(&["pooling".into()]).unwrap();
        assert!(!sel.is_empty() && sel.iter().all(|c| c.name.starts_with("pooling.")));
        assert!(select(&["nope".into()]).is_err());
    }

    #[test]
    fn names_are_unique() {
        let names: Vec<String> = all_checks().into_iter().map(|c| c.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }

    #[test]
    fn collapse_oracle_rules() {
        assert_eq!(collapse_oracle(&[1, 1, 0, 1, 2, 2]), vec![1, 1, 2]);
        assert!(collapse_oracle(&[0, 0]).is_empty());
    }
}

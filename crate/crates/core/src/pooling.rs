//! Time-axis mean-pool downsampling and replicate upsampling.
//!
//! Blocks are 0-based: output row `i` of [`downsample`] averages input rows
//! `[i·s, min((i+1)·s, N))`. A short final block is divided by its actual row
//! count rather than zero-padded. [`upsample`] repeats row `⌊i/s⌋` into row
//! `i`, producing `N_p·s` rows, optionally truncated back to a caller-given
//! length so residual paths line up.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

static SKIP_TRUNCATION: AtomicBool = AtomicBool::new(false);

/// Fault-injection hook for the verification command: while set, [`upsample`]
/// ignores `truncate_to`. Never set this outside a verification process.
pub fn inject_skip_truncation(on: bool) {
    SKIP_TRUNCATION.store(on, Ordering::SeqCst);
}

/// A pooling factor with an optional upsample target length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub factor: usize,
    pub truncate_to: Option<usize>,
}

impl PoolSpec {
    pub fn new(factor: usize) -> Result<Self> {
        check_factor(factor)?;
        Ok(Self {
            factor,
            truncate_to: None,
        })
    }

    pub fn truncated(self, len: usize) -> Self {
        Self {
            truncate_to: Some(len),
            ..self
        }
    }
}

/// `⌈n / s⌉`.
pub fn pooled_len(n: usize, s: usize) -> usize {
    n.div_ceil(s)
}

fn check_factor(s: usize) -> Result<()> {
    if s == 0 {
        return Err(Error::Config("pooling factor must be >= 1".into()));
    }
    Ok(())
}

/// Mean of `rows` of `x`, written to `out`. Accumulates offsets from the
/// first row, so a block of identical rows reproduces that row exactly.
fn block_mean<T: Real>(x: &Tensor<T>, rows: &[usize], out: &mut [T]) {
    let first = x.row(rows[0]);
    let count = T::lit(rows.len() as f64);
    for (j, o) in out.iter_mut().enumerate() {
        let offset: T = rows[1..].iter().map(|&r| x.at(r, j) - first[j]).sum();
        *o = first[j] + offset / count;
    }
}

/// Mean-pools rows in blocks of `s`.
pub fn downsample<T: Real>(x: &Tensor<T>, s: usize) -> Result<Tensor<T>> {
    check_factor(s)?;
    let (n, d) = x.dims2("downsample")?;
    if s == 1 {
        return Ok(x.clone());
    }
    let np = pooled_len(n, s);
    let mut out = vec![T::zero(); np * d];
    for i in 0..np {
        let rows: Vec<usize> = (i * s..((i + 1) * s).min(n)).collect();
        block_mean(x, &rows, &mut out[i * d..(i + 1) * d]);
    }
    Tensor::new(vec![np, d], out)
}

/// Adjoint of [`downsample`]: each input row receives its block's output
/// gradient divided by the block's row count.
pub fn downsample_backward<T: Real>(grad: &Tensor<T>, n: usize, s: usize) -> Result<Tensor<T>> {
    check_factor(s)?;
    let (np, d) = grad.dims2("downsample_backward")?;
    if np != pooled_len(n, s) {
        return Err(Error::Length(format!(
            "downsample gradient has {np} rows, expected ceil({n}/{s})"
        )));
    }
    let mut out = vec![T::zero(); n * d];
    for i in 0..np {
        let (start, end) = (i * s, ((i + 1) * s).min(n));
        let count = T::lit((end - start) as f64);
        for r in start..end {
            for (o, &g) in out[r * d..(r + 1) * d].iter_mut().zip(grad.row(i)) {
                *o = g / count;
            }
        }
    }
    Tensor::new(vec![n, d], out)
}

fn upsampled_len(np: usize, s: usize, truncate_to: Option<usize>) -> Result<usize> {
    let full = np * s;
    match truncate_to {
        Some(len) if len > full => Err(Error::Length(format!(
            "cannot truncate {np} rows upsampled by {s} ({full} rows) to {len}"
        ))),
        Some(_) if SKIP_TRUNCATION.load(Ordering::Relaxed) => Ok(full),
        Some(len) => Ok(len),
        None => Ok(full),
    }
}

/// Repeats each row `s` times, then keeps the first `truncate_to` rows.
pub fn upsample<T: Real>(x: &Tensor<T>, s: usize, truncate_to: Option<usize>) -> Result<Tensor<T>> {
    check_factor(s)?;
    let (np, d) = x.dims2("upsample")?;
    let len = upsampled_len(np, s, truncate_to)?;
    if s == 1 && len == np {
        return Ok(x.clone());
    }
    let mut out = Vec::with_capacity(len * d);
    for i in 0..len {
        out.extend_from_slice(x.row(i / s));
    }
    Tensor::new(vec![len, d], out)
}

/// Adjoint of [`upsample`]: sums the gradients of each replication group.
/// `grad` may be truncated; missing rows contribute nothing.
pub fn upsample_backward<T: Real>(grad: &Tensor<T>, np: usize, s: usize) -> Result<Tensor<T>> {
    check_factor(s)?;
    let (len, d) = grad.dims2("upsample_backward")?;
    if len > np * s {
        return Err(Error::Length(format!(
            "upsample gradient has {len} rows, more than {np}·{s}"
        )));
    }
    let mut out = vec![T::zero(); np * d];
    for r in 0..len {
        let i = r / s;
        for (o, &g) in out[i * d..(i + 1) * d].iter_mut().zip(grad.row(r)) {
            *o = *o + g;
        }
    }
    Tensor::new(vec![np, d], out)
}

/// Downsampling restricted to valid rows. Each block averages only its valid
/// rows; a block is valid iff at least one of its rows is. Blocks with no
/// valid row come out as zeros.
pub fn downsample_masked<T: Real>(
    x: &Tensor<T>,
    s: usize,
    valid: &[bool],
) -> Result<(Tensor<T>, Vec<bool>)> {
    check_factor(s)?;
    let (n, d) = x.dims2("downsample_masked")?;
    if valid.len() != n {
        return Err(Error::Length(format!(
            "mask has {} entries for {n} rows",
            valid.len()
        )));
    }
    let np = pooled_len(n, s);
    let mut out = vec![T::zero(); np * d];
    let mut pooled_valid = vec![false; np];
    for i in 0..np {
        let rows: Vec<usize> = (i * s..((i + 1) * s).min(n)).filter(|&r| valid[r]).collect();
        if rows.is_empty() {
            continue;
        }
        pooled_valid[i] = true;
        block_mean(x, &rows, &mut out[i * d..(i + 1) * d]);
    }
    Ok((Tensor::new(vec![np, d], out)?, pooled_valid))
}

fn downsample_masked_backward<T: Real>(
    grad: &Tensor<T>,
    s: usize,
    valid: &[bool],
) -> Result<Tensor<T>> {
    let n = valid.len();
    let (np, d) = grad.dims2("downsample_masked_backward")?;
    let mut out = vec![T::zero(); n * d];
    for i in 0..np {
        let rows: Vec<usize> = (i * s..((i + 1) * s).min(n)).filter(|&r| valid[r]).collect();
        let count = T::lit(rows.len().max(1) as f64);
        for &r in &rows {
            for (o, &g) in out[r * d..(r + 1) * d].iter_mut().zip(grad.row(i)) {
                *o = g / count;
            }
        }
    }
    Tensor::new(vec![n, d], out)
}

/// Pooled validity without touching values.
pub fn pool_mask(valid: &[bool], s: usize) -> Vec<bool> {
    valid.chunks(s.max(1)).map(|c| c.iter().any(|&v| v)).collect()
}

impl<'t, T: Real> Var<'t, T> {
    /// Differentiable [`downsample`].
    pub fn downsample(&self, s: usize) -> Result<Var<'t, T>> {
        let out = downsample(self.value(), s)?;
        if s == 1 {
            return Ok(self.clone());
        }
        let n = self.value().rows();
        Ok(self.tape().record(
            out,
            &[self],
            Box::new(move |g, _| Ok(vec![Some(downsample_backward(g, n, s)?)])),
        ))
    }

    /// Differentiable [`downsample_masked`]; returns the pooled validity too.
    pub fn downsample_masked(&self, s: usize, valid: &[bool]) -> Result<(Var<'t, T>, Vec<bool>)> {
        let (out, pooled) = downsample_masked(self.value(), s, valid)?;
        let valid = valid.to_vec();
        let v = self.tape().record(
            out,
            &[self],
            Box::new(move |g, _| Ok(vec![Some(downsample_masked_backward(g, s, &valid)?)])),
        );
        Ok((v, pooled))
    }

    /// Differentiable [`upsample`].
    pub fn upsample(&self, s: usize, truncate_to: Option<usize>) -> Result<Var<'t, T>> {
        let out = upsample(self.value(), s, truncate_to)?;
        let np = self.value().rows();
        if s == 1 && out.rows() == np {
            return Ok(self.clone());
        }
        Ok(self.tape().record(
            out,
            &[self],
            Box::new(move |g, _| Ok(vec![Some(upsample_backward(g, np, s)?)])),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{self, GradCheckOptions};

    fn col(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn downsample_examples() {
        assert_eq!(downsample(&col(&[1., 2., 3., 4.]), 2).unwrap(), col(&[1.5, 3.5]));
        assert_eq!(
            downsample(&col(&[1., 2., 3., 4., 5.]), 2).unwrap(),
            col(&[1.5, 3.5, 5.0])
        );
        let x = Tensor::<f64>::from_fn(&[5, 3], |i| (i as f64).sin());
        assert_eq!(downsample(&x, 1).unwrap(), x);
        assert!(matches!(downsample(&x, 0), Err(Error::Config(_))));
    }

    #[test]
    fn upsample_examples() {
        let (a, b) = (0.25, -3.0);
        assert_eq!(upsample(&col(&[a, b]), 2, None).unwrap(), col(&[a, a, b, b]));
        assert_eq!(upsample(&col(&[a, b]), 2, Some(3)).unwrap(), col(&[a, a, b]));
        let x = Tensor::<f64>::from_fn(&[4, 2], |i| i as f64);
        assert_eq!(upsample(&x, 1, None).unwrap(), x);
        assert!(matches!(upsample(&col(&[a, b]), 2, Some(5)), Err(Error::Length(_))));
    }

    #[test]
    fn adjoint_examples() {
        let g = downsample_backward(&col(&[1., 1.]), 4, 2).unwrap();
        assert_eq!(g, col(&[0.5, 0.5, 0.5, 0.5]));
        let g = upsample_backward(&col(&[1., 2., 3., 4.]), 2, 2).unwrap();
        assert_eq!(g, col(&[3., 7.]));
        let g = upsample_backward(&col(&[1., 2., 3.]), 2, 2).unwrap();
        assert_eq!(g, col(&[3., 3.]));
    }

    #[test]
    fn adjoints_match_finite_differences() {
        for (n, s) in [(5, 2), (7, 3), (4, 4), (6, 1)] {
            let x = Tensor::from_fn(&[n, 3], |i| (i as f64 * 0.37).cos());
            let w = Tensor::from_fn(&[n.div_ceil(s), 3], |i| (i as f64 * 0.11).sin());
            let report = gradcheck::check(
                &[x],
                |tape, v| {
                    let w = tape.constant(w.clone());
                    Ok(v[0].downsample(s)?.mul(&w)?.sum())
                },
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passes(1e-6), "down n={n} s={s}: {report:?}");

            let y = Tensor::from_fn(&[n.div_ceil(s), 3], |i| (i as f64 * 0.5).sin());
            let w = Tensor::from_fn(&[n, 3], |i| (i as f64 * 0.23).cos());
            let report = gradcheck::check(
                &[y],
                |tape, v| {
                    let w = tape.constant(w.clone());
                    Ok(v[0].upsample(s, Some(n))?.mul(&w)?.sum())
                },
                GradCheckOptions::default(),
            )
            .unwrap();
            assert!(report.passes(1e-6), "up n={n} s={s}: {report:?}");
        }
    }

    #[test]
    fn masked_downsample_averages_valid_rows_only() {
        let x = col(&[1., 100., 3., 5.]);
        let (y, v) = downsample_masked(&x, 2, &[true, false, true, true]).unwrap();
        assert_eq!(y, col(&[1., 4.]));
        assert_eq!(v, vec![true, true]);
        let (y, v) = downsample_masked(&x, 2, &[false, false, true, true]).unwrap();
        assert_eq!(y, col(&[0., 4.]));
        assert_eq!(v, vec![false, true]);
        assert_eq!(pool_mask(&[false, false, true], 2), vec![false, true]);
        let (y, _) = downsample_masked(&x, 3, &[true; 4]).unwrap();
        assert_eq!(y, downsample(&x, 3).unwrap());
    }

    #[test]
    fn masked_adjoint_matches_finite_differences() {
        let valid = [true, false, true, true, false, false, true];
        let x = Tensor::from_fn(&[7, 2], |i| i as f64 * 0.3 - 1.0);
        let w = Tensor::from_fn(&[3, 2], |i| 1.0 + i as f64);
        let report = gradcheck::check(
            &[x],
            |tape, v| {
                let w = tape.constant(w.clone());
                Ok(v[0].downsample_masked(3, &valid)?.0.mul(&w)?.sum())
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn matrix(n: usize, d: usize) -> impl Strategy<Value = Tensor<f64>> {
            proptest::collection::vec(-10.0f64..10.0, n * d)
                .prop_map(move |v| Tensor::new(vec![n, d], v).unwrap())
        }

        proptest! {
            #[test]
            fn length_law(n in 1usize..=64, s in 1usize..=4) {
                let x = Tensor::<f64>::zeros(&[n, 2]);
                prop_assert_eq!(downsample(&x, s).unwrap().rows(), n.div_ceil(s));
            }

            #[test]
            fn round_trip_is_exact(
                (y, s) in (1usize..=16, 1usize..=4).prop_flat_map(|(n, s)| (matrix(n, 3), Just(s)))
            ) {
                let back = downsample(&upsample(&y, s, None).unwrap(), s).unwrap();
                prop_assert_eq!(back, y);
            }

            #[test]
            fn mean_preserved_when_s_divides_n(
                (x, s) in (1usize..=16, 1usize..=4).prop_flat_map(|(k, s)| (matrix(k * s, 2), Just(s)))
            ) {
                let y = downsample(&x, s).unwrap();
                let mean = |t: &Tensor<f64>| t.sum() / t.len() as f64;
                prop_assert!((mean(&x) - mean(&y)).abs() < 1e-12);
            }

            #[test]
            fn both_operators_are_linear(
                (x, y, s) in (1usize..=20, 1usize..=4)
                    .prop_flat_map(|(n, s)| (matrix(n, 2), matrix(n, 2), Just(s))),
                a in -3.0f64..3.0,
                b in -3.0f64..3.0,
            ) {
                let combo = x.zip_map(&y, "combo", |u, v| a * u + b * v).unwrap();
                let lhs = downsample(&combo, s).unwrap();
                let rhs = downsample(&x, s).unwrap()
                    .zip_map(&downsample(&y, s).unwrap(), "rhs", |u, v| a * u + b * v).unwrap();
                prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);

                let n = x.rows();
                let lhs = upsample(&combo, s, Some(n)).unwrap();
                let rhs = upsample(&x, s, Some(n)).unwrap()
                    .zip_map(&upsample(&y, s, Some(n)).unwrap(), "rhs", |u, v| a * u + b * v).unwrap();
                prop_assert!(lhs.max_abs_diff(&rhs) < 1e-12);
            }
        }
    }
}

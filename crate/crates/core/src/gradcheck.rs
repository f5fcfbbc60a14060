//! Central finite-difference checks of tape gradients.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Finite-difference step.
    pub step: f64,
    /// At most this many coordinates are probed per input; `usize::MAX` probes all.
    pub max_coords: usize,
    /// Denominator floor for the relative error, so near-zero gradients are
    /// judged on absolute error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: usize::MAX,
            floor: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, flat coordinate)` of the worst disagreement.
    pub worst: (usize, usize),
    /// Tape and finite-difference values at `worst`.
    pub worst_values: (f64, f64),
    pub coords_checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

/// Coordinates probed for an input of `len` elements: all of them, or an
/// evenly spread subset that always includes the first and last.
pub fn probe_coords(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    if max <= 1 {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..max).map(|i| i * (len - 1) / (max - 1)).collect();
    v.dedup();
    v
}

/// Compares the tape gradient of the scalar `f(inputs)` with central finite
/// differences for every input tensor.
pub fn check<F>(inputs: &[Tensor<f64>], f: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars)?;
    let grads = tape.backward(&loss)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|v| grads.get_or_zeros(v)).collect();
    drop(vars);

    let eval = |probe: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::no_grad();
        let vars: Vec<_> = probe.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&tape, &vars)?;
        let v = out.value().item()?;
        if !v.is_finite() {
            return Err(Error::Usage("non-finite loss during gradient check".into()));
        }
        Ok(v)
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        worst_values: (0.0, 0.0),
        coords_checked: 0,
    };
    let mut probe: Vec<Tensor<f64>> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        for c in probe_coords(input.len(), opts.max_coords) {
            let orig = input.data()[c];
            probe[i].data_mut()[c] = orig + opts.step;
            let up = eval(&probe)?;
            probe[i].data_mut()[c] = orig - opts.step;
            let down = eval(&probe)?;
            probe[i].data_mut()[c] = orig;

            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[i].data()[c];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = (i, c);
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probe_coords_cover_ends() {
        assert_eq!(probe_coords(3, 10), vec![0, 1, 2]);
        let c = probe_coords(100, 5);
        assert_eq!(c.first(), Some(&0));
        assert_eq!(c.last(), Some(&99));
        assert_eq!(c.len(), 5);
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let x = Tensor::from_fn(&[3], |i| i as f64 + 0.5);
        let report = check(
            &[x],
            |tape, v| {
                let wrong = v[0].value().map(|x| x * x);
                // forward x², backward claims derivative 1
                Ok(tape
                    .record(wrong, &[&v[0]], Box::new(|g, _| Ok(vec![Some(g.clone())])))
                    .sum())
            },
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(!report.passes(1e-4));
    }
}

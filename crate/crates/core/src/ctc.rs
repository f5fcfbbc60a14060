//! Connectionist temporal classification: loss, greedy decoding and error rates.
//!
//! Logits are `[T × (V+1)]` unnormalised scores; column 0 is the blank.
//! Labels are ids in `1..=V`.

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::{self, Real, Tensor};

pub const BLANK: usize = 0;

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Number of adjacent equal pairs in `labels`; each forces an extra blank frame.
pub fn adjacent_repeats(labels: &[usize]) -> usize {
    labels.windows(2).filter(|w| w[0] == w[1]).count()
}

/// Checks `frames >= labels + adjacent repeats` and that every label is in `1..=vocab`.
pub fn check_feasible(frames: usize, labels: &[usize], vocab: usize) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l == BLANK || l > vocab) {
        return Err(Error::Input(format!("label {bad} outside 1..={vocab}")));
    }
    let repeats = adjacent_repeats(labels);
    let needed = labels.len() + repeats;
    if frames < needed {
        return Err(Error::Infeasible {
            labels: labels.len(),
            repeats,
            needed,
            frames,
        });
    }
    Ok(())
}

/// Output of the forward-backward pass.
#[derive(Clone, Debug)]
pub struct CtcResult {
    /// Negative log-likelihood of the labels.
    pub loss: f64,
    /// `∂loss/∂logits`, `[T × (V+1)]`.
    pub grad: Tensor<f64>,
}

/// Loss and logit gradient by the log-space forward-backward recursion over
/// the blank-interleaved label sequence.
pub fn ctc_forward_backward<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<CtcResult> {
    let (frames, classes) = logits.dims2("ctc")?;
    if frames == 0 || classes < 2 {
        return Err(Error::Input(format!(
            "CTC needs T >= 1 and at least one label plus blank, got {:?}",
            logits.shape()
        )));
    }
    check_feasible(frames, labels, classes - 1)?;
    let logp = tensor::log_softmax_rows(&logits.cast::<f64>())?;

    let mut ext = Vec::with_capacity(2 * labels.len() + 1);
    ext.push(BLANK);
    for &l in labels {
        ext.push(l);
        ext.push(BLANK);
    }
    let s_len = ext.len();
    // s-2 skip is allowed into a non-blank that differs from the label two back.
    let can_skip = |s: usize| s >= 2 && ext[s] != BLANK && ext[s] != ext[s - 2];

    let ninf = f64::NEG_INFINITY;
    let mut alpha = vec![ninf; frames * s_len];
    alpha[0] = logp.at(0, ext[0]);
    if s_len > 1 {
        alpha[1] = logp.at(0, ext[1]);
    }
    for t in 1..frames {
        for s in 0..s_len {
            let mut a = alpha[(t - 1) * s_len + s];
            if s >= 1 {
                a = log_add(a, alpha[(t - 1) * s_len + s - 1]);
            }
            if can_skip(s) {
                a = log_add(a, alpha[(t - 1) * s_len + s - 2]);
            }
            alpha[t * s_len + s] = a + logp.at(t, ext[s]);
        }
    }
    let last = (frames - 1) * s_len;
    let log_lik = if s_len > 1 {
        log_add(alpha[last + s_len - 1], alpha[last + s_len - 2])
    } else {
        alpha[last]
    };
    if log_lik == ninf {
        return Err(Error::Infeasible {
            labels: labels.len(),
            repeats: adjacent_repeats(labels),
            needed: labels.len() + adjacent_repeats(labels),
            frames,
        });
    }

    let mut beta = vec![ninf; frames * s_len];
    beta[last + s_len - 1] = logp.at(frames - 1, ext[s_len - 1]);
    if s_len > 1 {
        beta[last + s_len - 2] = logp.at(frames - 1, ext[s_len - 2]);
    }
    for t in (0..frames - 1).rev() {
        for s in 0..s_len {
            let mut b = beta[(t + 1) * s_len + s];
            if s + 1 < s_len {
                b = log_add(b, beta[(t + 1) * s_len + s + 1]);
            }
            if s + 2 < s_len && can_skip(s + 2) {
                b = log_add(b, beta[(t + 1) * s_len + s + 2]);
            }
            beta[t * s_len + s] = b + logp.at(t, ext[s]);
        }
    }

    // ∂(-ln p)/∂u_tk = y_tk - Σ_{s: ext[s]=k} α_t(s)β_t(s) / (p · y_tk)
    let mut grad = vec![0.0; frames * classes];
    for t in 0..frames {
        let mut occupancy = vec![ninf; classes];
        for s in 0..s_len {
            let v = alpha[t * s_len + s] + beta[t * s_len + s];
            occupancy[ext[s]] = log_add(occupancy[ext[s]], v);
        }
        for k in 0..classes {
            let y = logp.at(t, k).exp();
            let post = if occupancy[k] == ninf {
                0.0
            } else {
                (occupancy[k] - log_lik - logp.at(t, k)).exp()
            };
            grad[t * classes + k] = y - post;
        }
    }
    Ok(CtcResult {
        loss: -log_lik,
        grad: Tensor::new(vec![frames, classes], grad)?,
    })
}

/// CTC negative log-likelihood of `labels` under `logits`.
pub fn ctc_loss_value<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    Ok(ctc_forward_backward(logits, labels)?.loss)
}

/// Differentiable CTC loss, a scalar on the tape.
pub fn ctc_loss<'t, T: Real>(logits: &Var<'t, T>, labels: &[usize]) -> Result<Var<'t, T>> {
    let CtcResult { loss, grad } = ctc_forward_backward(logits.value(), labels)?;
    let grad = grad.cast::<T>();
    Ok(logits.tape().record(
        Tensor::scalar(T::lit(loss)),
        &[logits],
        Box::new(move |g, _| {
            let scale = g.data()[0];
            Ok(vec![Some(grad.map(|v| v * scale))])
        }),
    ))
}

/// Per-frame argmax (ties to the lowest index), then collapse repeats and
/// drop blanks.
pub fn greedy_decode<T: Real>(logits: &Tensor<T>) -> Vec<usize> {
    let (frames, classes) = (logits.rows(), logits.cols());
    let best: Vec<usize> = (0..frames)
        .map(|t| {
            let row = &logits.data()[t * classes..(t + 1) * classes];
            let mut arg = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[arg] {
                    arg = k;
                }
            }
            arg
        })
        .collect();
    collapse(&best)
}

/// CTC collapse of a frame-level path.
pub fn collapse(path: &[usize]) -> Vec<usize> {
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

/// Levenshtein distance between two token sequences.
pub fn edit_distance<S: PartialEq>(hyp: &[S], reference: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=reference.len()).collect();
    let mut cur = vec![0; reference.len() + 1];
    for (i, h) in hyp.iter().enumerate() {
        cur[0] = i + 1;
        for (j, r) in reference.iter().enumerate() {
            let sub = prev[j] + usize::from(h != r);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[reference.len()]
}

/// Word (or symbol) error rate: edit distance over reference length.
pub fn wer<S: PartialEq>(hyp: &[S], reference: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::Input("error rate needs a non-empty reference".into()));
    }
    Ok(edit_distance(hyp, reference) as f64 / reference.len() as f64)
}

/// Brute-force CTC likelihood: sums the probability of every frame-level path
/// that collapses to `labels`. Exponential in `T`; an oracle for small cases.
pub fn brute_force_loss(logits: &Tensor<f64>, labels: &[usize]) -> f64 {
    let logp = tensor::log_softmax_rows(logits).expect("matrix logits");
    let (frames, classes) = (logits.rows(), logits.cols());
    let mut path = vec![0usize; frames];
    let mut total = 0.0;
    loop {
        if collapse(&path) == labels {
            total += (0..frames).map(|t| logp.at(t, path[t])).sum::<f64>().exp();
        }
        let mut t = 0;
        while t < frames {
            path[t] += 1;
            if path[t] < classes {
                break;
            }
            path[t] = 0;
            t += 1;
        }
        if t == frames {
            break;
        }
    }
    -total.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::gradcheck::{self, GradCheckOptions};
    use crate::stochastic::Rng;

    fn random_logits(rng: &mut Rng, t: usize, classes: usize) -> Tensor<f64> {
        Tensor::from_fn(&[t, classes], |_| 2.0 * rng.normal())
    }

    #[test]
    fn single_frame_single_label() {
        let logits = Tensor::from_rows(&[[0.2, 1.5, -0.3]]).unwrap();
        let logp = tensor::log_softmax_rows(&logits).unwrap();
        let loss = ctc_loss_value(&logits, &[1]).unwrap();
        assert!((loss + logp.at(0, 1)).abs() < 1e-12);
    }

    #[test]
    fn uniform_two_frames_counts_valid_paths() {
        // (a,_), (_,a), (a,a) are the only paths collapsing to [a].
        let three_classes = Tensor::<f64>::zeros(&[2, 3]);
        let loss = ctc_loss_value(&three_classes, &[1]).unwrap();
        assert!((loss + (1.0f64 / 3.0).ln()).abs() < 1e-12);

        let two_classes = Tensor::<f64>::zeros(&[2, 2]);
        let loss = ctc_loss_value(&two_classes, &[1]).unwrap();
        assert!((loss + (3.0f64 / 4.0).ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_enumeration() {
        let mut rng = Rng::new(21);
        for case in 0..60 {
            let frames = 1 + case % 6;
            let vocab = 1 + case % 3;
            let logits = random_logits(&mut rng, frames, vocab + 1);
            let len = rng.below(frames + 1);
            let labels: Vec<usize> = (0..len).map(|_| 1 + rng.below(vocab)).collect();
            if check_feasible(frames, &labels, vocab).is_err() {
                continue;
            }
            let fast = ctc_loss_value(&logits, &labels).unwrap();
            let slow = brute_force_loss(&logits, &labels);
            assert!((fast - slow).abs() < 1e-9, "T={frames} labels={labels:?}: {fast} vs {slow}");
        }
    }

    #[test]
    fn infeasible_targets_are_errors() {
        let logits = Tensor::<f64>::zeros(&[2, 3]);
        assert!(matches!(
            ctc_loss_value(&logits, &[1, 1]),
            Err(Error::Infeasible { needed: 3, frames: 2, .. })
        ));
        assert!(ctc_loss_value(&logits, &[1, 2]).is_ok());
        assert!(matches!(ctc_loss_value(&logits, &[3]), Err(Error::Input(_))));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = Rng::new(4);
        let logits = random_logits(&mut rng, 5, 4);
        let report = gradcheck::check(
            &[logits],
            |_, v| ctc_loss(&v[0], &[2, 2, 1]),
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passes(1e-4), "{report:?}");
    }

    #[test]
    fn confident_blank_frame_costs_its_log_probability() {
        let mut rng = Rng::new(8);
        let base = random_logits(&mut rng, 4, 3);
        let labels = [1, 2];
        let before = ctc_loss_value(&base, &labels).unwrap();
        let mut rows: Vec<Vec<f64>> = (0..4).map(|t| base.row(t).to_vec()).collect();
        rows.push(vec![30.0, 0.0, 0.0]);
        let after = ctc_loss_value(&Tensor::from_rows(&rows).unwrap(), &labels).unwrap();
        let p_blank = tensor::log_softmax_rows(&Tensor::from_rows(&[[30.0, 0.0, 0.0]]).unwrap())
            .unwrap()
            .at(0, 0);
        assert!((after - before + p_blank).abs() < 1e-6);
    }

    #[test]
    fn greedy_collapse_rules() {
        let onehot = |path: &[usize]| {
            Tensor::<f64>::from_fn(&[path.len(), 3], |i| f64::from(u8::from(path[i / 3] == i % 3)))
        };
        assert_eq!(greedy_decode(&onehot(&[1, 1, 0, 2])), vec![1, 2]);
        assert_eq!(greedy_decode(&onehot(&[0, 0, 0])), Vec::<usize>::new());
        assert_eq!(greedy_decode(&onehot(&[1, 0, 1])), vec![1, 1]);
        let tie = Tensor::from_rows(&[[0.5, 0.5, 0.1]]).unwrap();
        assert_eq!(greedy_decode(&tie), Vec::<usize>::new());
    }

    #[test]
    fn error_rates() {
        assert_eq!(wer(&["a", "b"], &["a", "b"]).unwrap(), 0.0);
        assert!((wer(&["a", "c"], &["a", "b", "c"]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(wer(&["b", "c"], &["a"]).unwrap(), 2.0);
        assert!(wer::<&str>(&["a"], &[]).is_err());
    }

    #[test]
    fn loss_is_differentiable_through_a_tape() {
        let tape = Tape::new();
        let x = tape.leaf(Tensor::<f64>::zeros(&[3, 2]));
        let loss = ctc_loss(&x, &[1]).unwrap();
        let g = tape.backward(&loss.scale(2.0)).unwrap();
        let direct = ctc_forward_backward(x.value(), &[1]).unwrap().grad.map(|v| 2.0 * v);
        assert!(g.get(&x).unwrap().max_abs_diff(&direct) < 1e-15);
    }
}

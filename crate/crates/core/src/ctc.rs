//! Connectionist temporal classification: loss by the log-space
//! forward-backward recursion, and best-path decoding.

use ndarray::{Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::numeric::{argmax, log_softmax_rows, log_sum_exp2, softmax_rows};

/// Loss value plus its gradient with respect to the input matrix.
#[derive(Debug, Clone)]
pub struct CtcOutput {
    pub loss: f64,
    pub grad: Array2<f64>,
    /// False when no alignment of the target fits in the sequence; `loss` is
    /// then `+inf` and `grad` is zero.
    pub feasible: bool,
}

/// Minimum number of frames needed to emit `target` (a blank must separate
/// repeated symbols).
pub fn min_frames(target: &[usize]) -> usize {
    target.len() + target.windows(2).filter(|w| w[0] == w[1]).count()
}

fn validate(classes: usize, target: &[usize], blank: usize) -> Result<()> {
    if target.is_empty() {
        return Err(Error::EmptyLabel);
    }
    if blank >= classes {
        return Err(Error::ShapeMismatch(format!("blank {blank} outside {classes} classes")));
    }
    if let Some(&bad) = target.iter().find(|&&k| k >= classes || k == blank) {
        return Err(Error::ShapeMismatch(format!(
            "target class {bad} invalid for {classes} classes with blank {blank}"
        )));
    }
    Ok(())
}

/// `-log P(target | log_probs)` summed over all blank-augmented alignments.
///
/// `log_probs` is `n_seq x classes`; the gradient is taken treating every
/// entry as an independent input.
pub fn ctc_loss(log_probs: ArrayView2<f64>, target: &[usize], blank: usize) -> Result<CtcOutput> {
    let (frames, classes) = log_probs.dim();
    validate(classes, target, blank)?;
    let infeasible = || CtcOutput {
        loss: f64::INFINITY,
        grad: Array2::zeros((frames, classes)),
        feasible: false,
    };
    if min_frames(target) > frames {
        return Ok(infeasible());
    }

    // Extended label: blank, l1, blank, l2, ..., blank.
    let ext: Vec<usize> = std::iter::once(blank)
        .chain(target.iter().flat_map(|&k| [k, blank]))
        .collect();
    let states = ext.len();
    let can_skip = |s: usize| s >= 2 && ext[s] != blank && ext[s] != ext[s - 2];
    let neg = f64::NEG_INFINITY;

    let mut alpha = Array2::from_elem((frames, states), neg);
    alpha[[0, 0]] = log_probs[[0, ext[0]]];
    alpha[[0, 1]] = log_probs[[0, ext[1]]];
    for t in 1..frames {
        for s in 0..states {
            let mut acc = alpha[[t - 1, s]];
            if s >= 1 {
                acc = log_sum_exp2(acc, alpha[[t - 1, s - 1]]);
            }
            if can_skip(s) {
                acc = log_sum_exp2(acc, alpha[[t - 1, s - 2]]);
            }
            alpha[[t, s]] = acc + log_probs[[t, ext[s]]];
        }
    }

    let mut beta = Array2::from_elem((frames, states), neg);
    let last = frames - 1;
    beta[[last, states - 1]] = log_probs[[last, ext[states - 1]]];
    beta[[last, states - 2]] = log_probs[[last, ext[states - 2]]];
    for t in (0..last).rev() {
        for s in 0..states {
            let mut acc = beta[[t + 1, s]];
            if s + 1 < states {
                acc = log_sum_exp2(acc, beta[[t + 1, s + 1]]);
            }
            if s + 2 < states && can_skip(s + 2) {
                acc = log_sum_exp2(acc, beta[[t + 1, s + 2]]);
            }
            beta[[t, s]] = acc + log_probs[[t, ext[s]]];
        }
    }

    let log_p = log_sum_exp2(alpha[[last, states - 1]], alpha[[last, states - 2]]);
    if !log_p.is_finite() {
        return Ok(infeasible());
    }

    // alpha*beta counts the emission at (t, s) twice.
    let mut grad = Array2::zeros((frames, classes));
    for t in 0..frames {
        for (s, &k) in ext.iter().enumerate() {
            let ab = alpha[[t, s]] + beta[[t, s]];
            if ab == neg {
                continue;
            }
            grad[[t, k]] -= (ab - log_probs[[t, k]] - log_p).exp();
        }
    }

    Ok(CtcOutput {
        loss: -log_p,
        grad,
        feasible: true,
    })
}

/// CTC on unnormalized scores: applies a row-wise log-softmax first and
/// returns the gradient with respect to the scores.
pub fn ctc_loss_from_logits(logits: ArrayView2<f64>, target: &[usize], blank: usize) -> Result<CtcOutput> {
    let log_probs = log_softmax_rows(logits);
    let mut out = ctc_loss(log_probs.view(), target, blank)?;
    if out.feasible {
        let probs = softmax_rows(logits);
        out.grad = log_softmax_backward(&out.grad, &probs);
    }
    Ok(out)
}

/// Chain rule through a row-wise log-softmax: dz = g - p * sum(g).
pub(crate) fn log_softmax_backward(grad_log_probs: &Array2<f64>, probs: &Array2<f64>) -> Array2<f64> {
    let mut out = grad_log_probs.clone();
    for (mut row, p) in out.axis_iter_mut(Axis(0)).zip(probs.axis_iter(Axis(0))) {
        let total: f64 = row.sum();
        row.zip_mut_with(&p, |g, &pk| *g -= pk * total);
    }
    out
}

/// Best-path decoding: per-row argmax (ties to the lower class), merge
/// repeats, then drop blanks.
pub fn ctc_greedy_decode(probs: ArrayView2<f64>, blank: usize) -> Vec<usize> {
    let path: Vec<usize> = probs.axis_iter(Axis(0)).map(argmax).collect();
    collapse_path(&path, blank)
}

pub fn collapse_path(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &k in path {
        if Some(k) != prev && k != blank {
            out.push(k);
        }
        prev = Some(k);
    }
    out
}

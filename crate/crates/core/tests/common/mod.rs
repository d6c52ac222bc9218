//! Independent oracles and small fixtures shared by the integration tests
//! and the acceptance suite.
#![allow(dead_code)]

use kdhtr_core::grapheme::{Grapheme, GraphemeInventory};
use kdhtr_core::numeric::log_softmax_rows;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &c in path {
        if Some(c) != prev && c != blank {
            out.push(c);
        }
        prev = Some(c);
    }
    out
}

/// `-ln` of the summed probability of every frame path that collapses to
/// `target`, found by enumerating all `classes^frames` paths.
pub fn brute_force_ctc(log_probs: &Array2<f64>, target: &[usize], blank: usize) -> f64 {
    let (frames, classes) = log_probs.dim();
    let mut path = vec![0usize; frames];
    let mut total = 0.0;
    loop {
        if collapse(&path, blank) == target {
            total += (0..frames).map(|t| log_probs[[t, path[t]]]).sum::<f64>().exp();
        }
        let mut i = 0;
        loop {
            if i == frames {
                return -total.ln();
            }
            path[i] += 1;
            if path[i] < classes {
                break;
            }
            path[i] = 0;
            i += 1;
        }
    }
}

/// Central differences of `f` at `x`, one coordinate at a time.
pub fn finite_diff(f: &dyn Fn(&Array2<f64>) -> f64, x: &Array2<f64>, step: f64) -> Array2<f64> {
    let mut grad = Array2::zeros(x.raw_dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + step;
        let up = f(&probe);
        probe[idx] = orig - step;
        let down = f(&probe);
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * step);
    }
    grad
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)`; entries with tiny
/// gradients would otherwise be dominated by finite-difference rounding.
pub fn relative_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let scale = a.mapv(|v| v * v).sum().sqrt().max(b.mapv(|v| v * v).sum().sqrt());
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

pub fn random_logits(frames: usize, classes: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((frames, classes), || rng.random_range(-2.0..2.0))
}

pub fn random_log_probs(frames: usize, classes: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    log_softmax_rows(random_logits(frames, classes, rng).view())
}

/// Plain recursive Levenshtein distance.
pub fn edit_distance_oracle<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    match (a.split_first(), b.split_first()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = edit_distance_oracle(ra, rb) + usize::from(x != y);
            let del = edit_distance_oracle(ra, b) + 1;
            let ins = edit_distance_oracle(a, rb) + 1;
            sub.min(del).min(ins)
        }
    }
}

/// Every sequence over `0..alphabet` of length `0..=max_len`.
pub fn all_sequences(alphabet: u8, max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for s in &frontier {
            for c in 0..alphabet {
                let mut t: Vec<u8> = s.clone();
                t.push(c);
                next.push(t);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// A synthetic grapheme: one private-use codepoint per id.
pub fn synthetic_grapheme(id: u32) -> Grapheme {
    Grapheme::new(char::from_u32(0xE000 + id).expect("private use area").to_string()).expect("non-empty")
}

pub fn inventory_of(ids: impl IntoIterator<Item = u32>, support: u64, tag: &str) -> GraphemeInventory {
    GraphemeInventory::from_counts(ids.into_iter().map(|i| (synthetic_grapheme(i), support)), tag)
}

/// Levenshtein distance by recursion over suffix positions, memoized so
/// length-6 pairs stay cheap.
pub fn edit_distance_memo<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    fn go<T: PartialEq>(a: &[T], b: &[T], i: usize, j: usize, memo: &mut [Option<usize>], w: usize) -> usize {
        if i == a.len() {
            return b.len() - j;
        }
        if j == b.len() {
            return a.len() - i;
        }
        if let Some(d) = memo[i * w + j] {
            return d;
        }
        let sub = go(a, b, i + 1, j + 1, memo, w) + usize::from(a[i] != b[j]);
        let del = go(a, b, i + 1, j, memo, w) + 1;
        let ins = go(a, b, i, j + 1, memo, w) + 1;
        let d = sub.min(del).min(ins);
        memo[i * w + j] = Some(d);
        d
    }
    let w = b.len() + 1;
    go(a, b, 0, 0, &mut vec![None; (a.len() + 1) * w], w)
}

mod common;

use common::{brute_force_ctc, random_log_probs, rng};
use kdhtr_core::ctc::{ctc_greedy_decode, ctc_loss, min_frames};
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn dp_matches_enumeration_on_random_small_instances() {
    let mut r = rng(11);
    for frames in 1..=6 {
        for classes in 2..=4 {
            let lp = random_log_probs(frames, classes, &mut r);
            let blank = classes - 1;
            for target in [vec![0], vec![0, 0], vec![classes - 2, 0], vec![0, classes - 2, 0]] {
                if target.iter().any(|&c| c >= blank) {
                    continue;
                }
                let dp = ctc_loss(lp.view(), &target, blank).unwrap();
                let oracle = brute_force_ctc(&lp, &target, blank);
                if oracle.is_infinite() {
                    assert!(dp.loss.is_infinite() && !dp.feasible);
                } else {
                    assert!((dp.loss - oracle).abs() < 1e-10, "{frames} {classes} {target:?}");
                }
            }
        }
    }
}

#[test]
fn uniform_distribution_matches_enumeration() {
    let lp = Array2::from_elem((5, 3), -(3f64.ln()));
    let got = ctc_loss(lp.view(), &[0, 1], 2).unwrap().loss;
    assert!((got - brute_force_ctc(&lp, &[0, 1], 2)).abs() < 1e-12);
}

fn one_hot(path: &[usize], classes: usize) -> Array2<f64> {
    let mut m = Array2::zeros((path.len(), classes));
    for (t, &c) in path.iter().enumerate() {
        m[[t, c]] = 1.0;
    }
    m
}

/// A random alignment of `target` into `frames` frames: each symbol gets a
/// run of at least one frame and blanks fill the remaining frames, with a
/// mandatory blank between equal neighbors.
fn alignment(target: &[usize], frames: usize, blank: usize, cuts: &[usize]) -> Vec<usize> {
    let mut path = Vec::new();
    for (i, &c) in target.iter().enumerate() {
        if i > 0 && target[i - 1] == c {
            path.push(blank);
        }
        path.push(c);
    }
    let mut extra = frames - path.len();
    let mut out = Vec::new();
    for (i, &p) in path.iter().enumerate() {
        let n = if extra > 0 {
            cuts.get(i).copied().unwrap_or(0) % (extra + 1)
        } else {
            0
        };
        extra -= n;
        for _ in 0..n {
            out.push(if i % 2 == 0 { blank } else { p });
        }
        out.push(p);
    }
    out.extend(std::iter::repeat_n(blank, extra));
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn loss_is_non_negative(seed in any::<u64>(), frames in 1usize..8, len in 1usize..4) {
        let mut r = rng(seed);
        let lp = random_log_probs(frames, 4, &mut r);
        let target: Vec<usize> = (0..len).map(|i| (seed as usize + i) % 3).collect();
        let out = ctc_loss(lp.view(), &target, 3).unwrap();
        prop_assert!(out.loss >= 0.0);
        prop_assert_eq!(out.feasible, min_frames(&target) <= frames);
    }

    #[test]
    fn one_hot_alignment_decodes_to_target(
        target in proptest::collection::vec(0usize..4, 1..6),
        slack in 0usize..6,
        cuts in proptest::collection::vec(0usize..10, 12),
    ) {
        let blank = 4;
        let frames = min_frames(&target) + slack;
        let path = alignment(&target, frames.max(1), blank, &cuts);
        prop_assert_eq!(path.len(), frames.max(1));
        let decoded = ctc_greedy_decode(one_hot(&path, 5).view(), blank);
        prop_assert_eq!(decoded, target.clone());
        let lp = one_hot(&path, 5).mapv(|p| if p > 0.0 { 0.0 } else { f64::NEG_INFINITY });
        prop_assert_eq!(ctc_loss(lp.view(), &target, blank).unwrap().loss, 0.0);
    }
}

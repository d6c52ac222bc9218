mod common;

use common::{finite_diff, random_logits, relative_error, rng};
use kdhtr_core::ctc::ctc_loss_from_logits;
use kdhtr_core::distill::{conventional_kd_loss, lila_boti_loss, stack_teacher_outputs, DistillConfig, KdWeightMode};
use kdhtr_core::numeric::softmax;
use kdhtr_core::LogitSequence;
use ndarray::Array1;
use rand::Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn target(r: &mut rand_chacha::ChaCha8Rng, len: usize, blank: usize) -> Vec<usize> {
    (0..len).map(|_| r.random_range(0..blank)).collect()
}

fn config(r: &mut rand_chacha::ChaCha8Rng) -> DistillConfig {
    DistillConfig {
        alpha: r.random_range(0.0..1.0),
        tau: r.random_range(0.5..4.0),
        kd_weight_mode: if r.random() {
            KdWeightMode::Paper
        } else {
            KdWeightMode::Hinton
        },
        ..Default::default()
    }
}

#[test]
fn ctc_gradient_matches_finite_differences() {
    let mut r = rng(1);
    for case in 0..25 {
        let (frames, classes) = (r.random_range(3..9), r.random_range(3..6));
        let z = random_logits(frames, classes, &mut r);
        let len = r.random_range(1..=frames / 2);
        let t = target(&mut r, len, classes - 1);
        let analytic = ctc_loss_from_logits(z.view(), &t, classes - 1).unwrap().grad;
        let numeric = finite_diff(
            &|x| ctc_loss_from_logits(x.view(), &t, classes - 1).unwrap().loss,
            &z,
            STEP,
        );
        let err = relative_error(&analytic, &numeric);
        assert!(err < TOL, "case {case}: relative error {err}");
    }
}

#[test]
fn lila_gradient_matches_finite_differences() {
    let mut r = rng(2);
    for case in 0..25 {
        let (frames, classes) = (r.random_range(4..10), r.random_range(3..6));
        let z = random_logits(frames, classes, &mut r);
        let n_x = r.random_range(1..=frames / 2);
        let t = target(&mut r, n_x, classes - 1);
        let per: Vec<Array1<f64>> = (0..n_x)
            .map(|_| softmax(random_logits(1, classes - 1, &mut r).row(0)))
            .collect();
        let stack = stack_teacher_outputs(&per, frames).unwrap();
        let cfg = config(&mut r);
        let loss = |x: &ndarray::Array2<f64>| {
            lila_boti_loss(&LogitSequence::new(x.clone()).unwrap(), &t, &stack, &cfg).unwrap()
        };
        let err = relative_error(&loss(&z).grad, &finite_diff(&|x| loss(x).total, &z, STEP));
        assert!(err < TOL, "case {case}: relative error {err}");
    }
}

#[test]
fn conventional_gradient_matches_finite_differences() {
    let mut r = rng(3);
    for case in 0..25 {
        let (frames, classes) = (r.random_range(3..9), r.random_range(3..6));
        let z = random_logits(frames, classes, &mut r);
        let teacher = LogitSequence::new(random_logits(frames, classes, &mut r)).unwrap();
        let len = r.random_range(1..=frames / 2);
        let t = target(&mut r, len, classes - 1);
        let cfg = config(&mut r);
        let loss = |x: &ndarray::Array2<f64>| {
            conventional_kd_loss(&LogitSequence::new(x.clone()).unwrap(), &teacher, &t, &cfg).unwrap()
        };
        let err = relative_error(&loss(&z).grad, &finite_diff(&|x| loss(x).total, &z, STEP));
        assert!(err < TOL, "case {case}: relative error {err}");
    }
}

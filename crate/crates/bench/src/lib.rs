//! Seeded fixtures shared by the benchmarks in `benches/`.

use kdhtr_core::grapheme::Grapheme;
use kdhtr_core::synthgen::{render_word, WriterStyle};
use kdhtr_core::GrayImage;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `(frames, classes)` logits uniform in [-3, 3].
pub fn logits(frames: usize, classes: usize, seed: u64) -> Array2<f64> {
    let mut r = rng(seed);
    Array2::from_shape_simple_fn((frames, classes), || r.random_range(-3.0..3.0))
}

/// A target over `0..classes - 1` (the last class is blank) with no
/// adjacent repeats.
pub fn target(len: usize, classes: usize, seed: u64) -> Vec<usize> {
    let mut r = rng(seed);
    let mut out: Vec<usize> = Vec::with_capacity(len);
    while out.len() < len {
        let c = r.random_range(0..classes - 1);
        if out.last() != Some(&c) {
            out.push(c);
        }
    }
    out
}

pub fn symbols(len: usize, alphabet: u8, seed: u64) -> Vec<u8> {
    let mut r = rng(seed);
    (0..len).map(|_| r.random_range(0..alphabet)).collect()
}

/// Normalized probability vectors, one per grapheme.
pub fn distributions(n: usize, classes: usize, seed: u64) -> Vec<Array1<f64>> {
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let v = Array1::from_shape_simple_fn(classes, || r.random_range(0.01..1.0));
            let s = v.sum();
            v / s
        })
        .collect()
}

pub fn word_images(n: usize, height: usize, width: usize) -> Vec<GrayImage> {
    let letters = ["ক", "খ", "গ", "ঘ", "চ"];
    let word: Vec<Grapheme> = letters.iter().map(|g| Grapheme::new(*g).expect("literal")).collect();
    (0..n)
        .map(|i| {
            render_word(
                &word[..2 + i % 4],
                height,
                width,
                &WriterStyle::sample(i as u64),
                i as u64,
                0.05,
            )
            .expect("renders")
        })
        .collect()
}

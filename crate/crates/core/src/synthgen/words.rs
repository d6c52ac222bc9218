//! Word images in a "handwritten" style: the procedural skeletons distorted
//! per writer, laid out left to right in equal cells.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::GrayImage;
use super::render::{add_noise, derive_seed, rasterize, skeleton, Frame, Stroke};
use crate::error::{Error, Result};
use crate::grapheme::Grapheme;

/// Per-writer distortion parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WriterStyle {
    pub writer_seed: u64,
    /// Horizontal shear factor.
    pub slant: f64,
    pub thickness_scale: f64,
    /// Std-dev of the writer's consistent stroke displacement, in glyph units.
    pub jitter: f64,
    pub scale: f64,
}

impl WriterStyle {
    pub fn sample(writer_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[b"writer", &writer_seed.to_le_bytes()]));
        Self {
            writer_seed,
            slant: rng.random_range(-0.25..=0.25),
            thickness_scale: rng.random_range(0.8..=1.3),
            jitter: rng.random_range(0.02..=0.05),
            scale: rng.random_range(0.8..=0.95),
        }
    }

    fn perturb(&self, strokes: &[Stroke], g: &Grapheme, instance: &mut ChaCha8Rng) -> Vec<Stroke> {
        let mut writer = ChaCha8Rng::seed_from_u64(derive_seed(&[
            b"hand",
            &self.writer_seed.to_le_bytes(),
            g.as_str().as_bytes(),
        ]));
        let habit = Normal::new(0.0, self.jitter).expect("finite jitter");
        let tremor = Normal::new(0.0, self.jitter / 3.0).expect("finite jitter");
        strokes
            .iter()
            .map(|s| {
                s.iter()
                    .map(|&(u, v)| {
                        (
                            u + habit.sample(&mut writer) + tremor.sample(instance),
                            v + habit.sample(&mut writer) + tremor.sample(instance),
                        )
                    })
                    .collect()
            })
            .collect()
    }
}

/// Draws `graphemes` into a `height x width` canvas, one equal-width cell
/// per grapheme.
pub fn render_word(
    graphemes: &[Grapheme],
    height: usize,
    width: usize,
    style: &WriterStyle,
    instance_seed: u64,
    noise: f64,
) -> Result<GrayImage> {
    if graphemes.is_empty() {
        return Err(Error::EmptyLabel);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        b"word",
        &style.writer_seed.to_le_bytes(),
        &instance_seed.to_le_bytes(),
    ]));
    let cell = width as f64 / graphemes.len() as f64;
    let size = (height as f64).min(cell);
    let mut canvas = GrayImage::new(height, width);
    for (i, g) in graphemes.iter().enumerate() {
        let strokes = style.perturb(&skeleton(g)?, g, &mut rng);
        let frame = Frame::new(
            cell * (i as f64 + 0.5) + rng.random_range(-0.05..=0.05) * size,
            height as f64 / 2.0 + rng.random_range(-0.05..=0.05) * size,
            size,
            rng.random_range(-0.05..=0.05),
            style.scale * rng.random_range(0.95..=1.05),
            style.slant,
            (size * 0.08 * style.thickness_scale).max(1.0),
        );
        rasterize(&mut canvas, &strokes, &frame);
    }
    add_noise(&mut canvas, &mut rng, noise);
    Ok(canvas)
}

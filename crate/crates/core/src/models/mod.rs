//! Character teacher classifiers and the CRNN word recognizer.

mod checkpoint;
mod student;
mod teacher;

use ndarray::{Array2, Array4, ArrayView2};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nn::{Parameterized, Scalar};
use crate::numeric::softmax_rows;
use crate::synthgen::GrayImage;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use student::{ConvBlock, Student, StudentCache, StudentConfig};
pub use teacher::{Teacher, TeacherArch, TeacherCache, TeacherConfig};

/// Per-frame class scores of one word, blank in the last column.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitSequence(Array2<f64>);

impl LogitSequence {
    pub fn new(scores: Array2<f64>) -> Result<Self> {
        if scores.nrows() == 0 || scores.ncols() < 2 {
            return Err(Error::ShapeMismatch(format!("logit sequence {:?}", scores.dim())));
        }
        if scores.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged("non-finite logits".into()));
        }
        Ok(Self(scores))
    }

    pub fn scores(&self) -> ArrayView2<'_, f64> {
        self.0.view()
    }

    pub fn into_scores(self) -> Array2<f64> {
        self.0
    }

    pub fn n_seq(&self) -> usize {
        self.0.nrows()
    }

    pub fn classes(&self) -> usize {
        self.0.ncols()
    }

    pub fn blank(&self) -> usize {
        self.0.ncols() - 1
    }

    pub fn probs(&self) -> Array2<f64> {
        softmax_rows(self.0.view())
    }

    /// Greedy best-path decoding into class indices.
    pub fn decode(&self) -> Vec<usize> {
        crate::ctc::ctc_greedy_decode(self.probs().view(), self.blank())
    }
}

/// A network that can be rebuilt from its configuration and stored in a
/// checkpoint.
pub trait Model: Parameterized<f32> + Sized {
    const KIND: &'static str;
    type Config: Serialize + DeserializeOwned + Clone;

    fn config(&self) -> &Self::Config;
    fn build(config: &Self::Config, seed: u64) -> Result<Self>;
}

/// Stacks equally sized images into an `(N, 1, H, W)` batch.
pub fn images_to_batch<T: Scalar>(images: &[&GrayImage]) -> Result<Array4<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::ShapeMismatch("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut batch = Array4::zeros((images.len(), 1, h, w));
    for (i, img) in images.iter().enumerate() {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::ShapeMismatch(format!(
                "image {i} is {}x{}, batch is {h}x{w}",
                img.height(),
                img.width()
            )));
        }
        let dst = batch.slice_mut(ndarray::s![i, 0, .., ..]);
        for (d, &p) in dst.into_iter().zip(img.pixels()) {
            *d = T::c(p as f64);
        }
    }
    Ok(batch)
}

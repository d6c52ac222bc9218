use ndarray::{s, Array2, Array3, Array4, ArrayView3, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{images_to_batch, LogitSequence, Model};
use crate::error::{Error, Result};
use crate::nn::{
    join, relu, relu_backward, reshape, BatchNorm2d, BatchNormCache, BiLstm, BiLstmCache, Conv2d, Linear, MaxPool2d,
    Param, Parameterized, PoolCache, Scalar,
};
use crate::synthgen::GrayImage;

/// One backbone stage: convolution, optional batch norm, ReLU, optional
/// max pooling (stride equal to the window).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvBlock {
    pub channels: usize,
    pub kernel: (usize, usize),
    pub padding: (usize, usize),
    pub pool: Option<(usize, usize)>,
    pub batch_norm: bool,
}

impl ConvBlock {
    pub const fn new(
        channels: usize,
        kernel: (usize, usize),
        padding: (usize, usize),
        pool: Option<(usize, usize)>,
    ) -> Self {
        Self {
            channels,
            kernel,
            padding,
            pool,
            batch_norm: true,
        }
    }

    fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let h = (h + 2 * self.padding.0).checked_sub(self.kernel.0)? + 1;
        let w = (w + 2 * self.padding.1).checked_sub(self.kernel.1)? + 1;
        match self.pool {
            Some((ph, pw)) => Some((h / ph, w / pw)),
            None => Some((h, w)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudentConfig {
    /// Graphemes plus the trailing blank.
    pub num_classes: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub n_seq: usize,
    pub backbone: Vec<ConvBlock>,
    pub recurrent_hidden: usize,
}

impl StudentConfig {
    /// VGG-style backbone for 32x128 word images: five stages collapse the
    /// height to 1 and leave 31 columns.
    pub fn crnn(num_classes: usize) -> Self {
        Self {
            num_classes,
            input_height: 32,
            input_width: 128,
            n_seq: 31,
            backbone: vec![
                ConvBlock::new(64, (3, 3), (1, 1), Some((2, 2))),
                ConvBlock::new(128, (3, 3), (1, 1), Some((2, 2))),
                ConvBlock::new(256, (3, 3), (1, 1), Some((2, 1))),
                ConvBlock::new(256, (3, 3), (1, 1), Some((2, 1))),
                ConvBlock::new(512, (2, 2), (0, 0), None),
            ],
            recurrent_hidden: 256,
        }
    }

    /// Four-stage variant for 16x64 images with `base`-scaled widths and 15
    /// output frames.
    pub fn compact(num_classes: usize, base: usize, recurrent_hidden: usize) -> Self {
        Self {
            num_classes,
            input_height: 16,
            input_width: 64,
            n_seq: 15,
            backbone: vec![
                ConvBlock::new(base, (3, 3), (1, 1), Some((2, 2))),
                ConvBlock::new(2 * base, (3, 3), (1, 1), Some((2, 2))),
                ConvBlock::new(4 * base, (3, 3), (1, 1), Some((2, 1))),
                ConvBlock::new(4 * base, (2, 2), (0, 0), None),
            ],
            recurrent_hidden,
        }
    }

    pub fn blank(&self) -> usize {
        self.num_classes - 1
    }

    /// Backbone output `(height, columns)` for an input size.
    pub fn feature_hw(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        self.backbone.iter().try_fold((height, width), |(h, w), b| {
            b.output_hw(h, w).filter(|&(h, w)| h > 0 && w > 0)
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_classes < 2 {
            return bad(format!(
                "student needs at least one grapheme plus blank, got {}",
                self.num_classes
            ));
        }
        if self.n_seq == 0 || self.recurrent_hidden == 0 || self.backbone.is_empty() {
            return bad("n_seq, recurrent_hidden and backbone must be non-empty".into());
        }
        if self
            .backbone
            .iter()
            .any(|b| b.channels == 0 || b.kernel.0 == 0 || b.kernel.1 == 0)
        {
            return bad("backbone stages need positive channels and kernels".into());
        }
        if self
            .backbone
            .iter()
            .any(|b| b.pool.is_some_and(|(h, w)| h == 0 || w == 0))
        {
            return bad("pool windows must be positive".into());
        }
        match self.feature_hw(self.input_height, self.input_width) {
            Some((1, cols)) if cols >= self.n_seq => Ok(()),
            Some((1, cols)) => Err(Error::InputTooNarrow {
                got: cols,
                need: self.n_seq,
            }),
            Some((h, _)) => bad(format!("backbone leaves feature height {h}, expected 1")),
            None => bad("backbone reduces the configured input to nothing".into()),
        }
    }
}

#[derive(Debug, Clone)]
struct Stage<T> {
    conv: Conv2d<T>,
    bn: Option<BatchNorm2d<T>>,
    pool: Option<MaxPool2d>,
}

#[derive(Debug, Clone)]
struct StageCache<T> {
    x: Array4<T>,
    bn: Option<BatchNormCache<T>>,
    activated: Array4<T>,
    pool: Option<PoolCache>,
}

impl<T: Scalar> Stage<T> {
    fn forward(&self, x: ArrayView4<T>, train: bool) -> (Array4<T>, StageCache<T>) {
        let z = self.conv.forward(x);
        let (z, bn) = match (&self.bn, train) {
            (Some(bn), true) => {
                let (y, c) = bn.forward_train(z.view());
                (y, Some(c))
            }
            (Some(bn), false) => (bn.forward_eval(z.view()), None),
            (None, _) => (z, None),
        };
        let activated = relu(z);
        let (out, pool) = match &self.pool {
            Some(p) => {
                let (y, c) = p.forward(activated.view());
                (y, Some(c))
            }
            None => (activated.clone(), None),
        };
        (
            out,
            StageCache {
                x: x.to_owned(),
                bn,
                activated,
                pool,
            },
        )
    }

    fn backward(&mut self, c: &StageCache<T>, dy: Array4<T>) -> Array4<T> {
        let da = match (&self.pool, &c.pool) {
            (Some(p), Some(pc)) => p.backward(pc, dy.view()),
            _ => dy,
        };
        let mut dz = relu_backward(c.activated.view(), da);
        if let Some(bn) = &mut self.bn {
            dz = bn.backward(c.bn.as_ref().expect("training cache"), dz.view());
        }
        self.conv.backward(c.x.view(), dz.view())
    }
}

/// Column ranges averaged into each output frame.
fn frame_bins(columns: usize, frames: usize) -> Vec<(usize, usize)> {
    (0..frames)
        .map(|i| (i * columns / frames, ((i + 1) * columns).div_ceil(frames)))
        .collect()
}

#[derive(Debug, Clone)]
pub struct StudentCache<T> {
    stages: Vec<StageCache<T>>,
    feature_dim: (usize, usize, usize, usize),
    rnn: BiLstmCache<T>,
    rnn_out: Array2<T>,
}

/// CRNN word recognizer: convolutional backbone, bidirectional LSTM,
/// per-frame linear classifier with blank as the last class.
#[derive(Debug, Clone)]
pub struct Student<T> {
    config: StudentConfig,
    stages: Vec<Stage<T>>,
    rnn: BiLstm<T>,
    head: Linear<T>,
}

impl<T: Scalar> Student<T> {
    pub fn new(config: StudentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cin = 1;
        let stages = config
            .backbone
            .iter()
            .map(|b| {
                let stage = Stage {
                    conv: Conv2d::new(cin, b.channels, b.kernel, 1, b.padding, !b.batch_norm, &mut rng),
                    bn: b.batch_norm.then(|| BatchNorm2d::new(b.channels)),
                    pool: b.pool.map(|(kh, kw)| MaxPool2d { kh, kw }),
                };
                cin = b.channels;
                stage
            })
            .collect();
        let rnn = BiLstm::new(cin, config.recurrent_hidden, &mut rng);
        let head = Linear::new(2 * config.recurrent_hidden, config.num_classes, false, &mut rng);
        Ok(Self {
            config,
            stages,
            rnn,
            head,
        })
    }

    pub fn config(&self) -> &StudentConfig {
        &self.config
    }

    pub fn n_seq(&self) -> usize {
        self.config.n_seq
    }

    fn check_input(&self, x: &ArrayView4<T>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 1 || h != self.config.input_height {
            return Err(Error::ShapeMismatch(format!(
                "student expects 1x{}xW input, got {c}x{h}x{w}",
                self.config.input_height
            )));
        }
        match self.config.feature_hw(h, w) {
            Some((_, cols)) if cols >= self.config.n_seq => Ok(()),
            found => Err(Error::InputTooNarrow {
                got: found.map_or(0, |(_, cols)| cols),
                need: self.config.n_seq,
            }),
        }
    }

    /// `(N, C, 1, W)` features to `(n_seq, N, C)` frames.
    fn to_frames(&self, features: &Array4<T>) -> Array3<T> {
        let (n, c, _, w) = features.dim();
        let frames = self.config.n_seq;
        let mut seq = Array3::zeros((frames, n, c));
        for (t, (lo, hi)) in frame_bins(w, frames).into_iter().enumerate() {
            let k = T::c((hi - lo) as f64);
            let mean = features.slice(s![.., .., 0, lo..hi]).sum_axis(Axis(2)).mapv(|v| v / k);
            seq.index_axis_mut(Axis(0), t).assign(&mean);
        }
        seq
    }

    fn frames_to_features(&self, d_seq: ArrayView3<T>, dim: (usize, usize, usize, usize)) -> Array4<T> {
        let (n, c, h, w) = dim;
        let mut d = Array4::zeros((n, c, h, w));
        for (t, (lo, hi)) in frame_bins(w, self.config.n_seq).into_iter().enumerate() {
            let k = T::c((hi - lo) as f64);
            let g = d_seq.index_axis(Axis(0), t).mapv(|v| v / k);
            for col in lo..hi {
                let mut dst = d.slice_mut(s![.., .., 0, col]);
                dst += &g;
            }
        }
        d
    }

    fn run(&self, x: ArrayView4<T>, train: bool) -> (Array3<T>, StudentCache<T>) {
        let mut h = x.to_owned();
        let mut stages = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            let (out, c) = stage.forward(h.view(), train);
            stages.push(c);
            h = out;
        }
        let feature_dim = h.dim();
        let seq = self.to_frames(&h);
        let (rnn_seq, rnn) = self.rnn.forward(seq.view());
        let (frames, n, width) = rnn_seq.dim();
        let rnn_out = reshape(rnn_seq, (frames * n, width));
        let logits = reshape(self.head.forward(rnn_out.view()), (frames, n, self.config.num_classes));
        let cache = StudentCache {
            stages,
            feature_dim,
            rnn,
            rnn_out,
        };
        (logits, cache)
    }

    /// Inference-mode logits, `(n_seq, N, classes)`.
    pub fn forward(&self, x: ArrayView4<T>) -> Result<Array3<T>> {
        self.check_input(&x)?;
        Ok(self.run(x, false).0)
    }

    pub fn forward_train(&self, x: ArrayView4<T>) -> Result<(Array3<T>, StudentCache<T>)> {
        self.check_input(&x)?;
        Ok(self.run(x, true))
    }

    /// Accumulates parameter gradients from `(n_seq, N, classes)` logit
    /// gradients.
    pub fn backward(&mut self, cache: &StudentCache<T>, d_logits: ArrayView3<T>) {
        let (frames, n, k) = d_logits.dim();
        let d_flat = reshape(d_logits.to_owned(), (frames * n, k));
        let d_rnn = self.head.backward(cache.rnn_out.view(), d_flat.view());
        let d_rnn = reshape(d_rnn, (frames, n, 2 * self.config.recurrent_hidden));
        let d_seq = self.rnn.backward(&cache.rnn, d_rnn.view());
        let mut dh = self.frames_to_features(d_seq.view(), cache.feature_dim);
        for (stage, c) in self.stages.iter_mut().zip(&cache.stages).rev() {
            dh = stage.backward(c, dh);
        }
    }

    /// Splits `(n_seq, N, classes)` logits into per-word sequences.
    pub fn split_sequences(logits: ArrayView3<T>) -> Result<Vec<LogitSequence>> {
        logits
            .axis_iter(Axis(1))
            .map(|m| LogitSequence::new(m.mapv(Scalar::f64)))
            .collect()
    }

    pub fn logit_sequences(&self, images: &[&GrayImage]) -> Result<Vec<LogitSequence>> {
        let x = images_to_batch::<T>(images)?;
        Self::split_sequences(self.forward(x.view())?.view())
    }

    pub fn student_forward(&self, image: &GrayImage) -> Result<LogitSequence> {
        Ok(self.logit_sequences(&[image])?.remove(0))
    }
}

impl<T: Scalar> Parameterized<T> for Student<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        for (i, s) in self.stages.iter().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            s.conv.visit(&join(&p, "conv"), f);
            if let Some(bn) = &s.bn {
                bn.visit(&join(&p, "bn"), f);
            }
        }
        self.rnn.visit(&join(prefix, "rnn"), f);
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        for (i, s) in self.stages.iter_mut().enumerate() {
            let p = join(prefix, &format!("stage{i}"));
            s.conv.visit_mut(&join(&p, "conv"), f);
            if let Some(bn) = &mut s.bn {
                bn.visit_mut(&join(&p, "bn"), f);
            }
        }
        self.rnn.visit_mut(&join(prefix, "rnn"), f);
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl Model for Student<f32> {
    const KIND: &'static str = "student";
    type Config = StudentConfig;

    fn config(&self) -> &StudentConfig {
        &self.config
    }

    fn build(config: &StudentConfig, seed: u64) -> Result<Self> {
        Student::new(config.clone(), seed)
    }
}

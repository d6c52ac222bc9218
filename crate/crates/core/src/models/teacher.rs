use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, Array4, ArrayView2, ArrayView4, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{images_to_batch, Model};
use crate::error::{Error, Result};
use crate::nn::{
    join, relu, relu_backward, reshape, BatchNorm2d, BatchNormCache, Conv2d, Linear, MaxPool2d, Param, Parameterized,
    PoolCache, Scalar,
};
use crate::synthgen::GrayImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TeacherArch {
    Conv2,
    Resnet18,
}

impl TeacherArch {
    pub fn as_str(self) -> &'static str {
        match self {
            TeacherArch::Conv2 => "conv2",
            TeacherArch::Resnet18 => "resnet18",
        }
    }
}

impl fmt::Display for TeacherArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TeacherArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conv2" => Ok(TeacherArch::Conv2),
            "resnet18" => Ok(TeacherArch::Resnet18),
            other => Err(Error::InvalidConfig(format!("unknown teacher architecture {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    pub arch: TeacherArch,
    pub num_classes: usize,
    /// Square input side in pixels.
    pub input_size: usize,
    /// Channels of the first stage; later stages scale from it.
    pub width: usize,
    /// Dense hidden units (conv2 only).
    pub hidden: usize,
}

impl TeacherConfig {
    pub fn new(arch: TeacherArch, num_classes: usize) -> Self {
        let (width, hidden) = match arch {
            TeacherArch::Conv2 => (32, 128),
            TeacherArch::Resnet18 => (64, 0),
        };
        Self {
            arch,
            num_classes,
            input_size: 32,
            width,
            hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "teacher needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.width == 0 {
            return Err(Error::InvalidConfig("teacher width must be positive".into()));
        }
        match self.arch {
            TeacherArch::Conv2 if self.input_size < 4 || self.hidden == 0 => Err(Error::InvalidConfig(
                "conv2 needs input_size >= 4 and hidden > 0".into(),
            )),
            TeacherArch::Resnet18 if self.input_size < 8 => {
                Err(Error::InvalidConfig("resnet18 needs input_size >= 8".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
struct Conv2Net<T> {
    conv1: Conv2d<T>,
    conv2: Conv2d<T>,
    pool: MaxPool2d,
    hidden: Linear<T>,
    classifier: Linear<T>,
}

#[derive(Debug, Clone)]
struct Conv2Cache<T> {
    x: Array4<T>,
    a1: Array4<T>,
    p1: PoolCache,
    x2: Array4<T>,
    a2: Array4<T>,
    p2: PoolCache,
    flat_shape: (usize, usize, usize, usize),
    flat: Array2<T>,
    h: Array2<T>,
}

impl<T: Scalar> Conv2Net<T> {
    fn new(cfg: &TeacherConfig, rng: &mut ChaCha8Rng) -> Self {
        let w = cfg.width;
        let side = cfg.input_size / 4;
        Self {
            conv1: Conv2d::new(1, w, (3, 3), 1, (1, 1), true, rng),
            conv2: Conv2d::new(w, 2 * w, (3, 3), 1, (1, 1), true, rng),
            pool: MaxPool2d { kh: 2, kw: 2 },
            hidden: Linear::new(2 * w * side * side, cfg.hidden, true, rng),
            classifier: Linear::new(cfg.hidden, cfg.num_classes, false, rng),
        }
    }

    fn forward(&self, x: ArrayView4<T>) -> (Array2<T>, Conv2Cache<T>) {
        let a1 = relu(self.conv1.forward(x));
        let (x2, p1) = self.pool.forward(a1.view());
        let a2 = relu(self.conv2.forward(x2.view()));
        let (pooled, p2) = self.pool.forward(a2.view());
        let flat_shape = pooled.dim();
        let n = flat_shape.0;
        let flat = reshape(pooled, (n, flat_shape.1 * flat_shape.2 * flat_shape.3));
        let h = relu(self.hidden.forward(flat.view()));
        let logits = self.classifier.forward(h.view());
        let cache = Conv2Cache {
            x: x.to_owned(),
            a1,
            p1,
            x2,
            a2,
            p2,
            flat_shape,
            flat,
            h,
        };
        (logits, cache)
    }

    fn backward(&mut self, c: &Conv2Cache<T>, d_logits: ArrayView2<T>) {
        let dh = self.classifier.backward(c.h.view(), d_logits);
        let dh = relu_backward(c.h.view(), dh);
        let dflat = self.hidden.backward(c.flat.view(), dh.view());
        let dpooled = reshape(dflat, c.flat_shape);
        let da2 = self.pool.backward(&c.p2, dpooled.view());
        let dz2 = relu_backward(c.a2.view(), da2);
        let dx2 = self.conv2.backward(c.x2.view(), dz2.view());
        let da1 = self.pool.backward(&c.p1, dx2.view());
        let dz1 = relu_backward(c.a1.view(), da1);
        self.conv1.backward(c.x.view(), dz1.view());
    }
}

impl<T: Scalar> Parameterized<T> for Conv2Net<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.hidden.visit(&join(prefix, "hidden"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.hidden.visit_mut(&join(prefix, "hidden"), f);
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

/// Convolution followed by batch normalization.
#[derive(Debug, Clone)]
struct ConvBn<T> {
    conv: Conv2d<T>,
    bn: BatchNorm2d<T>,
}

#[derive(Debug, Clone)]
struct ConvBnCache<T> {
    x: Array4<T>,
    bn: Option<BatchNormCache<T>>,
}

impl<T: Scalar> ConvBn<T> {
    fn new(cin: usize, cout: usize, k: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            conv: Conv2d::new(cin, cout, (k, k), stride, (k / 2, k / 2), false, rng),
            bn: BatchNorm2d::new(cout),
        }
    }

    fn forward(&self, x: ArrayView4<T>, train: bool) -> (Array4<T>, ConvBnCache<T>) {
        let z = self.conv.forward(x);
        let (y, bn) = if train {
            let (y, c) = self.bn.forward_train(z.view());
            (y, Some(c))
        } else {
            (self.bn.forward_eval(z.view()), None)
        };
        (y, ConvBnCache { x: x.to_owned(), bn })
    }

    fn backward(&mut self, c: &ConvBnCache<T>, dy: ArrayView4<T>) -> Array4<T> {
        let dz = self.bn.backward(c.bn.as_ref().expect("training cache"), dy);
        self.conv.backward(c.x.view(), dz.view())
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.conv.visit(&join(prefix, "conv"), f);
        self.bn.visit(&join(prefix, "bn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.conv.visit_mut(&join(prefix, "conv"), f);
        self.bn.visit_mut(&join(prefix, "bn"), f);
    }
}

#[derive(Debug, Clone)]
struct BasicBlock<T> {
    first: ConvBn<T>,
    second: ConvBn<T>,
    downsample: Option<ConvBn<T>>,
}

#[derive(Debug, Clone)]
struct BasicBlockCache<T> {
    first: ConvBnCache<T>,
    a1: Array4<T>,
    second: ConvBnCache<T>,
    downsample: Option<ConvBnCache<T>>,
    out: Array4<T>,
}

impl<T: Scalar> BasicBlock<T> {
    fn new(cin: usize, cout: usize, stride: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            first: ConvBn::new(cin, cout, 3, stride, rng),
            second: ConvBn::new(cout, cout, 3, 1, rng),
            downsample: (stride != 1 || cin != cout).then(|| ConvBn::new(cin, cout, 1, stride, rng)),
        }
    }

    fn forward(&self, x: ArrayView4<T>, train: bool) -> (Array4<T>, BasicBlockCache<T>) {
        let (z1, first) = self.first.forward(x, train);
        let a1 = relu(z1);
        let (z2, second) = self.second.forward(a1.view(), train);
        let (shortcut, downsample) = match &self.downsample {
            Some(d) => {
                let (s, c) = d.forward(x, train);
                (s, Some(c))
            }
            None => (x.to_owned(), None),
        };
        let out = relu(z2 + shortcut);
        let cache = BasicBlockCache {
            first,
            a1,
            second,
            downsample,
            out: out.clone(),
        };
        (out, cache)
    }

    fn backward(&mut self, c: &BasicBlockCache<T>, dy: Array4<T>) -> Array4<T> {
        let dsum = relu_backward(c.out.view(), dy);
        let da1 = self.second.backward(&c.second, dsum.view());
        let dz1 = relu_backward(c.a1.view(), da1);
        let dx = self.first.backward(&c.first, dz1.view());
        match (&mut self.downsample, &c.downsample) {
            (Some(d), Some(dc)) => dx + d.backward(dc, dsum.view()),
            _ => dx + dsum,
        }
    }

    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.first.visit(&join(prefix, "first"), f);
        self.second.visit(&join(prefix, "second"), f);
        if let Some(d) = &self.downsample {
            d.visit(&join(prefix, "downsample"), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.first.visit_mut(&join(prefix, "first"), f);
        self.second.visit_mut(&join(prefix, "second"), f);
        if let Some(d) = &mut self.downsample {
            d.visit_mut(&join(prefix, "downsample"), f);
        }
    }
}

/// 18-layer residual network with a 3x3 stem for small inputs: four stages of
/// two basic blocks at widths `w, 2w, 4w, 8w`, global average pooling, one
/// linear classifier.
#[derive(Debug, Clone)]
struct ResNet18<T> {
    stem: ConvBn<T>,
    blocks: Vec<BasicBlock<T>>,
    classifier: Linear<T>,
}

#[derive(Debug, Clone)]
struct ResNetCache<T> {
    stem: ConvBnCache<T>,
    a0: Array4<T>,
    blocks: Vec<BasicBlockCache<T>>,
    pooled_from: (usize, usize, usize, usize),
    features: Array2<T>,
}

impl<T: Scalar> ResNet18<T> {
    fn new(cfg: &TeacherConfig, rng: &mut ChaCha8Rng) -> Self {
        let w = cfg.width;
        let stem = ConvBn::new(1, w, 3, 1, rng);
        let mut blocks = Vec::with_capacity(8);
        let mut cin = w;
        for (stage, mult) in [1, 2, 4, 8].into_iter().enumerate() {
            let cout = w * mult;
            for b in 0..2 {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(cin, cout, stride, rng));
                cin = cout;
            }
        }
        Self {
            stem,
            blocks,
            classifier: Linear::new(cin, cfg.num_classes, false, rng),
        }
    }

    fn forward(&self, x: ArrayView4<T>, train: bool) -> (Array2<T>, ResNetCache<T>) {
        let (z0, stem) = self.stem.forward(x, train);
        let a0 = relu(z0);
        let mut h = a0.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (out, c) = block.forward(h.view(), train);
            caches.push(c);
            h = out;
        }
        let pooled_from = h.dim();
        let area = T::c((pooled_from.2 * pooled_from.3) as f64);
        let features = h.sum_axis(Axis(3)).sum_axis(Axis(2)).mapv(|v| v / area);
        let logits = self.classifier.forward(features.view());
        let cache = ResNetCache {
            stem,
            a0,
            blocks: caches,
            pooled_from,
            features,
        };
        (logits, cache)
    }

    fn backward(&mut self, c: &ResNetCache<T>, d_logits: ArrayView2<T>) {
        let df = self.classifier.backward(c.features.view(), d_logits);
        let (n, ch, h, w) = c.pooled_from;
        let area = T::c((h * w) as f64);
        let mut dh = Array4::zeros((n, ch, h, w));
        for ((b, k), &g) in df.indexed_iter() {
            dh.slice_mut(ndarray::s![b, k, .., ..]).fill(g / area);
        }
        for (block, cache) in self.blocks.iter_mut().zip(&c.blocks).rev() {
            dh = block.backward(cache, dh);
        }
        let dz0 = relu_backward(c.a0.view(), dh);
        self.stem.backward(&c.stem, dz0.view());
    }
}

impl<T: Scalar> Parameterized<T> for ResNet18<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("block{i}")), f);
        }
        self.classifier.visit(&join(prefix, "classifier"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("block{i}")), f);
        }
        self.classifier.visit_mut(&join(prefix, "classifier"), f);
    }
}

#[derive(Debug, Clone)]
enum TeacherNet<T> {
    Conv2(Conv2Net<T>),
    Resnet18(ResNet18<T>),
}

#[derive(Debug, Clone)]
enum TeacherCacheInner<T> {
    Conv2(Conv2Cache<T>),
    Resnet18(ResNetCache<T>),
}

/// Opaque activations kept by [`Teacher::forward_train`].
#[derive(Debug, Clone)]
pub struct TeacherCache<T>(TeacherCacheInner<T>);

/// Isolated-character classifier.
#[derive(Debug, Clone)]
pub struct Teacher<T> {
    config: TeacherConfig,
    net: TeacherNet<T>,
}

impl<T: Scalar> Teacher<T> {
    pub fn new(config: TeacherConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = match config.arch {
            TeacherArch::Conv2 => TeacherNet::Conv2(Conv2Net::new(&config, &mut rng)),
            TeacherArch::Resnet18 => TeacherNet::Resnet18(ResNet18::new(&config, &mut rng)),
        };
        Ok(Self { config, net })
    }

    pub fn config(&self) -> &TeacherConfig {
        &self.config
    }

    fn check_input(&self, x: &ArrayView4<T>) -> Result<()> {
        let s = self.config.input_size;
        let (_, c, h, w) = x.dim();
        if (c, h, w) != (1, s, s) {
            return Err(Error::ShapeMismatch(format!(
                "teacher expects 1x{s}x{s} input, got {c}x{h}x{w}"
            )));
        }
        Ok(())
    }

    /// Inference-mode logits for an `(N, 1, S, S)` batch.
    pub fn forward(&self, x: ArrayView4<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        Ok(match &self.net {
            TeacherNet::Conv2(n) => n.forward(x).0,
            TeacherNet::Resnet18(n) => n.forward(x, false).0,
        })
    }

    /// Training-mode logits plus the activations needed by
    /// [`Teacher::backward`].
    pub fn forward_train(&self, x: ArrayView4<T>) -> Result<(Array2<T>, TeacherCache<T>)> {
        self.check_input(&x)?;
        Ok(match &self.net {
            TeacherNet::Conv2(n) => {
                let (y, c) = n.forward(x);
                (y, TeacherCache(TeacherCacheInner::Conv2(c)))
            }
            TeacherNet::Resnet18(n) => {
                let (y, c) = n.forward(x, true);
                (y, TeacherCache(TeacherCacheInner::Resnet18(c)))
            }
        })
    }

    /// Accumulates parameter gradients; batch-norm running statistics are
    /// updated here.
    pub fn backward(&mut self, cache: &TeacherCache<T>, d_logits: ArrayView2<T>) {
        match (&mut self.net, &cache.0) {
            (TeacherNet::Conv2(n), TeacherCacheInner::Conv2(c)) => n.backward(c, d_logits),
            (TeacherNet::Resnet18(n), TeacherCacheInner::Resnet18(c)) => n.backward(c, d_logits),
            _ => panic!("teacher cache from a different architecture"),
        }
    }

    /// Logits for a batch of images in double precision.
    pub fn logits(&self, images: &[&GrayImage]) -> Result<Array2<f64>> {
        let x = images_to_batch::<T>(images)?;
        Ok(self.forward(x.view())?.mapv(Scalar::f64))
    }

    /// Logits over the teacher classes for one image.
    pub fn teacher_forward(&self, image: &GrayImage) -> Result<Array1<f64>> {
        Ok(self.logits(&[image])?.row(0).to_owned())
    }
}

impl<T: Scalar> Parameterized<T> for Teacher<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        match &self.net {
            TeacherNet::Conv2(n) => n.visit(prefix, f),
            TeacherNet::Resnet18(n) => n.visit(prefix, f),
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        match &mut self.net {
            TeacherNet::Conv2(n) => n.visit_mut(prefix, f),
            TeacherNet::Resnet18(n) => n.visit_mut(prefix, f),
        }
    }
}

impl Model for Teacher<f32> {
    const KIND: &'static str = "teacher";
    type Config = TeacherConfig;

    fn config(&self) -> &TeacherConfig {
        &self.config
    }

    fn build(config: &TeacherConfig, seed: u64) -> Result<Self> {
        Teacher::new(config.clone(), seed)
    }
}

use ndarray::{s, Array, Array1, Array2, Array4, ArrayView, ArrayView3, ArrayView4, Axis, Dimension, Ix1, Ix2};
use rand::Rng;

use super::{join, reshape, Param, Parameterized, Scalar};

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    /// `(out, in * kh * kw)`
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: (usize, usize),
}

fn out_len(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad).saturating_sub(kernel) / stride + 1
}

impl<T: Scalar> Conv2d<T> {
    /// He-uniform weights, zero bias.
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: (usize, usize),
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = in_channels * kernel.0 * kernel.1;
        Self {
            weight: Param::uniform(&[out_channels, fan_in], (6.0 / fan_in as f64).sqrt(), rng),
            bias: bias.then(|| Param::zeros(&[out_channels])),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            out_len(h, self.kernel.0, self.stride, self.padding.0),
            out_len(w, self.kernel.1, self.stride, self.padding.1),
        )
    }

    fn im2col(&self, x: ArrayView3<T>, ho: usize, wo: usize) -> Array2<T> {
        let (c, h, w) = x.dim();
        let (kh, kw) = self.kernel;
        let (ph, pw) = (self.padding.0 as isize, self.padding.1 as isize);
        let mut col = Array2::zeros((c * kh * kw, ho * wo));
        let src = x.as_standard_layout();
        let src = src.as_slice().expect("standard layout");
        let dst = col.as_slice_mut().expect("fresh array");
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    let out = &mut dst[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - ph;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ci * h + iy as usize) * w;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - pw;
                            if ix >= 0 && ix < w as isize {
                                out[oy * wo + ox] = src[base + ix as usize];
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im(&self, col: &Array2<T>, dx: &mut [T], (c, h, w): (usize, usize, usize), ho: usize, wo: usize) {
        let (kh, kw) = self.kernel;
        let (ph, pw) = (self.padding.0 as isize, self.padding.1 as isize);
        let src = col.as_slice().expect("standard layout");
        for ci in 0..c {
            for ki in 0..kh {
                for kj in 0..kw {
                    let row = (ci * kh + ki) * kw + kj;
                    let inp = &src[row * ho * wo..(row + 1) * ho * wo];
                    for oy in 0..ho {
                        let iy = (oy * self.stride + ki) as isize - ph;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let base = (ci * h + iy as usize) * w;
                        for ox in 0..wo {
                            let ix = (ox * self.stride + kj) as isize - pw;
                            if ix >= 0 && ix < w as isize {
                                dx[base + ix as usize] += inp[oy * wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, x: ArrayView4<T>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (ho, wo) = self.output_hw(h, w);
        let weight = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-d weight");
        let mut y = Array4::zeros((n, self.out_channels, ho, wo));
        for (xi, mut yi) in x.outer_iter().zip(y.outer_iter_mut()) {
            let col = self.im2col(xi, ho, wo);
            let out = weight.dot(&col);
            yi.assign(&reshape(out, (self.out_channels, ho, wo)));
        }
        if let Some(b) = &self.bias {
            for (co, &bv) in b.value.iter().enumerate() {
                y.slice_mut(s![.., co, .., ..]).mapv_inplace(|v| v + bv);
            }
        }
        y
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, x: ArrayView4<T>, dy: ArrayView4<T>) -> Array4<T> {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = self.output_hw(h, w);
        let mut dx = Array4::zeros((n, c, h, w));
        let weight = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-d weight")
            .to_owned();
        let mut dw = Array2::zeros(weight.raw_dim());
        for ((xi, dyi), mut dxi) in x.outer_iter().zip(dy.outer_iter()).zip(dx.outer_iter_mut()) {
            let col = self.im2col(xi, ho, wo);
            let dyi = dyi.as_standard_layout();
            let dy2 = dyi
                .view()
                .into_shape_with_order((self.out_channels, ho * wo))
                .expect("dy shape");
            ndarray::linalg::general_mat_mul(T::one(), &dy2, &col.t(), T::one(), &mut dw);
            let dcol = weight.t().dot(&dy2);
            self.col2im(&dcol, dxi.as_slice_mut().expect("standard layout"), (c, h, w), ho, wo);
        }
        self.weight.grad.zip_mut_with(&dw.into_dyn(), |g, &d| *g += d);
        if let Some(b) = &mut self.bias {
            let db = dy.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
            b.grad.zip_mut_with(&db.into_dyn(), |g, &d| *g += d);
        }
        dx
    }
}

impl<T: Scalar> Parameterized<T> for Conv2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

pub fn relu<T: Scalar, D: Dimension>(mut x: Array<T, D>) -> Array<T, D> {
    x.mapv_inplace(|v| v.max(T::zero()));
    x
}

/// Gradient of ReLU given its output.
pub fn relu_backward<T: Scalar, D: Dimension>(y: ArrayView<T, D>, mut dy: Array<T, D>) -> Array<T, D> {
    dy.zip_mut_with(&y, |d, &v| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    dy
}

/// Non-overlapping max pooling with stride equal to the window; trailing
/// rows/columns that do not fill a window are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2d {
    pub kh: usize,
    pub kw: usize,
}

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_dim: (usize, usize, usize, usize),
    argmax: Vec<usize>,
}

impl MaxPool2d {
    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (h / self.kh, w / self.kw)
    }

    pub fn forward<T: Scalar>(&self, x: ArrayView4<T>) -> (Array4<T>, PoolCache) {
        let (n, c, h, w) = x.dim();
        let (ho, wo) = self.output_hw(h, w);
        let x = x.as_standard_layout();
        let src = x.as_slice().expect("standard layout");
        let mut y = Array4::zeros((n, c, ho, wo));
        let mut argmax = vec![0; n * c * ho * wo];
        for (plane, (out, arg)) in y
            .as_slice_mut()
            .expect("fresh")
            .chunks_mut(ho * wo)
            .zip(argmax.chunks_mut(ho * wo))
            .enumerate()
        {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * self.kh * w + ox * self.kw;
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let i = base + (oy * self.kh + ky) * w + ox * self.kw + kx;
                            if src[i] > src[best] {
                                best = i;
                            }
                        }
                    }
                    out[oy * wo + ox] = src[best];
                    arg[oy * wo + ox] = best;
                }
            }
        }
        (
            y,
            PoolCache {
                input_dim: (n, c, h, w),
                argmax,
            },
        )
    }

    pub fn backward<T: Scalar>(&self, cache: &PoolCache, dy: ArrayView4<T>) -> Array4<T> {
        let mut dx = Array4::zeros(cache.input_dim);
        let dst = dx.as_slice_mut().expect("fresh");
        for (&i, &g) in cache.argmax.iter().zip(dy.iter()) {
            dst[i] += g;
        }
        dx
    }
}

/// Fully connected layer on `(batch, in)` rows.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    /// `(out, in)`
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Scalar> Linear<T> {
    /// He-uniform when a ReLU follows, `1 / sqrt(fan_in)` otherwise.
    pub fn new(input: usize, output: usize, relu_follows: bool, rng: &mut impl Rng) -> Self {
        let bound = if relu_follows {
            (6.0 / input as f64).sqrt()
        } else {
            (1.0 / input as f64).sqrt()
        };
        Self {
            weight: Param::uniform(&[output, input], bound, rng),
            bias: Param::zeros(&[output]),
        }
    }

    pub fn forward(&self, x: ndarray::ArrayView2<T>) -> Array2<T> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-d weight");
        let b = self.bias.value.view().into_dimensionality::<Ix1>().expect("1-d bias");
        let mut y = x.dot(&w.t());
        y += &b;
        y
    }

    pub fn backward(&mut self, x: ndarray::ArrayView2<T>, dy: ndarray::ArrayView2<T>) -> Array2<T> {
        let w = self
            .weight
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .expect("2-d weight");
        let mut dw = self
            .weight
            .grad
            .view_mut()
            .into_dimensionality::<Ix2>()
            .expect("2-d grad");
        ndarray::linalg::general_mat_mul(T::one(), &dy.t(), &x, T::one(), &mut dw);
        let db = dy.sum_axis(Axis(0));
        self.bias.grad.zip_mut_with(&db.into_dyn(), |g, &d| *g += d);
        dy.dot(&w)
    }
}

impl<T: Scalar> Parameterized<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Per-channel batch normalization over `(N, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    pub momentum: f64,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Array4<T>,
    inv_std: Array1<T>,
    mean: Array1<T>,
    var: Array1<T>,
    count: usize,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(ndarray::ArrayD::ones(ndarray::IxDyn(&[channels]))),
            beta: Param::zeros(&[channels]),
            running_mean: Param::buffer(ndarray::ArrayD::zeros(ndarray::IxDyn(&[channels]))),
            running_var: Param::buffer(ndarray::ArrayD::ones(ndarray::IxDyn(&[channels]))),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    fn affine(&self, xhat: &Array4<T>) -> Array4<T> {
        let mut y = xhat.clone();
        for (c, mut plane) in y.axis_iter_mut(Axis(1)).enumerate() {
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            plane.mapv_inplace(|v| v * g + b);
        }
        y
    }

    /// Normalizes with running statistics.
    pub fn forward_eval(&self, x: ArrayView4<T>) -> Array4<T> {
        let mut xhat = x.to_owned();
        for (c, mut plane) in xhat.axis_iter_mut(Axis(1)).enumerate() {
            let m = self.running_mean.value[c];
            let inv = T::one() / (self.running_var.value[c] + T::c(self.eps)).sqrt();
            plane.mapv_inplace(|v| (v - m) * inv);
        }
        self.affine(&xhat)
    }

    /// Normalizes with batch statistics. Running statistics are folded in by
    /// [`BatchNorm2d::backward`].
    pub fn forward_train(&self, x: ArrayView4<T>) -> (Array4<T>, BatchNormCache<T>) {
        let (n, c, h, w) = x.dim();
        let count = n * h * w;
        let mut mean = Array1::zeros(c);
        let mut var = Array1::zeros(c);
        let mut inv_std = Array1::zeros(c);
        let mut xhat = x.to_owned();
        for (ci, mut plane) in xhat.axis_iter_mut(Axis(1)).enumerate() {
            let m = plane.sum() / T::c(count as f64);
            let v = plane.mapv(|x| (x - m) * (x - m)).sum() / T::c(count as f64);
            let inv = T::one() / (v + T::c(self.eps)).sqrt();
            plane.mapv_inplace(|x| (x - m) * inv);
            mean[ci] = m;
            var[ci] = v;
            inv_std[ci] = inv;
        }
        let y = self.affine(&xhat);
        (
            y,
            BatchNormCache {
                xhat,
                inv_std,
                mean,
                var,
                count,
            },
        )
    }

    pub fn backward(&mut self, cache: &BatchNormCache<T>, dy: ArrayView4<T>) -> Array4<T> {
        let m = T::c(cache.count as f64);
        let mut dx = Array4::zeros(dy.raw_dim());
        for ci in 0..dy.dim().1 {
            let dyc = dy.index_axis(Axis(1), ci);
            let xh = cache.xhat.index_axis(Axis(1), ci);
            let sum_dy = dyc.sum();
            let sum_dy_xh = (&dyc * &xh).sum();
            self.gamma.grad[ci] += sum_dy_xh;
            self.beta.grad[ci] += sum_dy;
            let k = self.gamma.value[ci] * cache.inv_std[ci] / m;
            let mut dxc = dx.index_axis_mut(Axis(1), ci);
            ndarray::Zip::from(&mut dxc)
                .and(&dyc)
                .and(&xh)
                .for_each(|d, &g, &x| *d = k * (m * g - sum_dy - x * sum_dy_xh));
            let mom = T::c(self.momentum);
            let unbiased = if cache.count > 1 {
                cache.var[ci] * m / (m - T::one())
            } else {
                cache.var[ci]
            };
            let rm = &mut self.running_mean.value[ci];
            *rm = *rm * (T::one() - mom) + cache.mean[ci] * mom;
            let rv = &mut self.running_var.value[ci];
            *rv = *rv * (T::one() - mom) + unbiased * mom;
        }
        dx
    }
}

impl<T: Scalar> Parameterized<T> for BatchNorm2d<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
        f(&join(prefix, "running_mean"), &self.running_mean);
        f(&join(prefix, "running_var"), &self.running_var);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand4(shape: (usize, usize, usize, usize), rng: &mut ChaCha8Rng) -> Array4<f64> {
        Array::from_shape_simple_fn(shape, || rng.random_range(-1.0..1.0))
    }

    /// Direct nested-loop convolution.
    fn naive_conv(conv: &Conv2d<f64>, x: &Array4<f64>) -> Array4<f64> {
        let (n, _, h, w) = x.dim();
        let (ho, wo) = conv.output_hw(h, w);
        let (kh, kw) = conv.kernel;
        let mut y = Array4::zeros((n, conv.out_channels, ho, wo));
        for b in 0..n {
            for co in 0..conv.out_channels {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.as_ref().map_or(0.0, |b| b.value[co]);
                        for ci in 0..conv.in_channels {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * conv.stride + ki) as isize - conv.padding.0 as isize;
                                    let ix = (ox * conv.stride + kj) as isize - conv.padding.1 as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                        let wi = (ci * kh + ki) * kw + kj;
                                        acc += conv.weight.value[[co, wi]] * x[[b, ci, iy as usize, ix as usize]];
                                    }
                                }
                            }
                        }
                        y[[b, co, oy, ox]] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (k, stride, pad) in [
            ((3, 3), 1, (1, 1)),
            ((2, 2), 1, (0, 0)),
            ((3, 3), 2, (1, 1)),
            ((1, 1), 2, (0, 0)),
        ] {
            let mut conv = Conv2d::<f64>::new(2, 3, k, stride, pad, true, &mut rng);
            conv.bias
                .as_mut()
                .unwrap()
                .value
                .mapv_inplace(|_| rng.random_range(-1.0..1.0));
            let x = rand4((2, 2, 5, 6), &mut rng);
            let diff = (&conv.forward(x.view()) - &naive_conv(&conv, &x))
                .mapv(f64::abs)
                .fold(0.0, |a: f64, &b| a.max(b));
            assert!(diff < 1e-12, "{k:?} {stride} {pad:?}: {diff}");
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::<f64>::new(2, 3, (3, 3), 2, (1, 1), true, &mut rng);
        let x = rand4((2, 2, 5, 5), &mut rng);
        let r = rand4((2, 3, 3, 3), &mut rng);
        let loss = |c: &Conv2d<f64>, x: &Array4<f64>| (&c.forward(x.view()) * &r).sum();
        let dx = conv.backward(x.view(), r.view());
        let eps = 1e-6;
        for idx in [[0, 0, 0, 0], [1, 1, 2, 3], [0, 1, 4, 4]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&conv, &xp) - loss(&conv, &xm)) / (2.0 * eps);
            assert!((fd - dx[idx]).abs() < 1e-7, "{idx:?}");
        }
        for wi in [0, 7, 17] {
            let analytic = conv.weight.grad[[1, wi]];
            let mut c2 = conv.clone();
            c2.weight.value[[1, wi]] += eps;
            let lp = loss(&c2, &x);
            c2.weight.value[[1, wi]] -= 2.0 * eps;
            let fd = (lp - loss(&c2, &x)) / (2.0 * eps);
            assert!((fd - analytic).abs() < 1e-7);
        }
    }

    #[test]
    fn pool_routes_gradient_to_max() {
        let x = Array4::from_shape_vec((1, 1, 2, 4), vec![1.0, 5.0, 0.0, 0.0, 2.0, 3.0, 0.0, 9.0]).unwrap();
        let pool = MaxPool2d { kh: 2, kw: 2 };
        let (y, cache) = pool.forward(x.view());
        assert_eq!(y.iter().copied().collect::<Vec<f64>>(), [5.0, 9.0]);
        let dx = pool.backward(&cache, Array4::<f64>::ones((1, 1, 1, 2)).view());
        assert_eq!(dx[[0, 0, 0, 1]], 1.0);
        assert_eq!(dx[[0, 0, 1, 3]], 1.0);
        assert_eq!(dx.sum(), 2.0);
    }

    #[test]
    fn batchnorm_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bn = BatchNorm2d::<f64>::new(2);
        bn.gamma.value.mapv_inplace(|_| rng.random_range(0.5..1.5));
        let x = rand4((3, 2, 2, 2), &mut rng);
        let r = rand4((3, 2, 2, 2), &mut rng);
        let loss = |bn: &BatchNorm2d<f64>, x: &Array4<f64>| (&bn.forward_train(x.view()).0 * &r).sum();
        let (_, cache) = bn.forward_train(x.view());
        let dx = bn.clone().backward(&cache, r.view());
        let eps = 1e-6;
        for idx in [[0, 0, 0, 0], [2, 1, 1, 0]] {
            let mut xp = x.clone();
            xp[idx] += eps;
            let mut xm = x.clone();
            xm[idx] -= eps;
            let fd = (loss(&bn, &xp) - loss(&bn, &xm)) / (2.0 * eps);
            assert!((fd - dx[idx]).abs() < 1e-6, "{fd} vs {}", dx[idx]);
        }
    }
}

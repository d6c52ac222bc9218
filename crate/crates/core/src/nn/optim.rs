use std::collections::HashMap;

use ndarray::ArrayD;

use super::{Parameterized, Scalar};

pub trait Optimizer<T: Scalar> {
    /// Applies accumulated gradients to every trainable parameter.
    fn step(&mut self, model: &mut dyn Parameterized<T>);
    fn learning_rate(&self) -> f64;
    fn set_learning_rate(&mut self, lr: f64);
}

/// SGD with classical momentum and optional L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<String, ArrayD<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }
}

impl<T: Scalar> Optimizer<T> for Sgd<T> {
    fn step(&mut self, model: &mut dyn Parameterized<T>) {
        let (lr, mu, wd) = (T::c(self.lr), T::c(self.momentum), T::c(self.weight_decay));
        model.visit_mut("", &mut |name, p| {
            if !p.trainable {
                return;
            }
            let v = self
                .velocity
                .entry(name.to_string())
                .or_insert_with(|| ArrayD::zeros(p.value.raw_dim()));
            ndarray::Zip::from(&mut p.value)
                .and(v)
                .and(&p.grad)
                .for_each(|w, v, &g| {
                    *v = mu * *v + g + wd * *w;
                    *w -= lr * *v;
                });
        });
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    moments: HashMap<String, (ArrayD<T>, ArrayD<T>)>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }
}

impl<T: Scalar> Optimizer<T> for Adam<T> {
    fn step(&mut self, model: &mut dyn Parameterized<T>) {
        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let lr_t = self.lr * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step));
        let (b1, b2, lr_t, eps) = (T::c(b1), T::c(b2), T::c(lr_t), T::c(self.eps));
        model.visit_mut("", &mut |name, p| {
            if !p.trainable {
                return;
            }
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (ArrayD::zeros(p.value.raw_dim()), ArrayD::zeros(p.value.raw_dim())));
            ndarray::Zip::from(&mut p.value)
                .and(m)
                .and(v)
                .and(&p.grad)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    *w -= lr_t * *m / (v.sqrt() + eps);
                });
        });
    }

    fn learning_rate(&self) -> f64 {
        self.lr
    }

    fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }
}

/// Rescales gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(model: &mut dyn Parameterized<T>, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    model.visit("", &mut |_, p| {
        if p.trainable {
            sq += p.grad.iter().map(|g| g.f64() * g.f64()).sum::<f64>();
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm && norm.is_finite() {
        let k = T::c(max_norm / norm);
        model.visit_mut("", &mut |_, p| {
            if p.trainable {
                p.grad.mapv_inplace(|g| g * k);
            }
        });
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Linear, Param};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quadratic_descent(opt: &mut dyn Optimizer<f64>) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lin = Linear::<f64>::new(2, 1, false, &mut rng);
        let x = array![[1.0, 2.0], [0.5, -1.0], [-1.0, 0.0]];
        let y = array![[3.0], [-1.0], [0.5]];
        let mut last = f64::INFINITY;
        for _ in 0..500 {
            lin.zero_grad();
            let out = lin.forward(x.view());
            let diff = &out - &y;
            last = diff.mapv(|d| d * d).sum();
            lin.backward(x.view(), (diff * 2.0).view());
            opt.step(&mut lin);
        }
        last
    }

    #[test]
    fn sgd_and_adam_fit_least_squares() {
        let sgd = quadratic_descent(&mut Sgd::new(0.02, 0.9, 0.0));
        let adam = quadratic_descent(&mut Adam::new(0.05));
        assert!(sgd < 0.2, "{sgd}");
        assert!(adam < 0.2, "{adam}");
    }

    #[test]
    fn clipping_caps_norm() {
        struct One(Param<f64>);
        impl Parameterized<f64> for One {
            fn visit(&self, _: &str, f: &mut dyn FnMut(&str, &Param<f64>)) {
                f("p", &self.0)
            }
            fn visit_mut(&mut self, _: &str, f: &mut dyn FnMut(&str, &mut Param<f64>)) {
                f("p", &mut self.0)
            }
        }
        let mut m = One(Param::zeros(&[2]));
        m.0.grad = array![3.0, 4.0].into_dyn();
        assert_eq!(clip_grad_norm(&mut m, 1.0), 5.0);
        assert!((m.0.grad[[0]] - 0.6).abs() < 1e-12);
    }
}

use ndarray::{concatenate, s, Array2, Array3, ArrayView2, ArrayView3, Axis, Ix1, Ix2};
use rand::Rng;

use super::{join, reshape, Param, Parameterized, Scalar};

/// Single-direction LSTM over `(time, batch, features)` with gate order
/// input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm<T> {
    /// `(4 * hidden, input)`
    pub w_ih: Param<T>,
    /// `(4 * hidden, hidden)`
    pub w_hh: Param<T>,
    pub bias: Param<T>,
    pub hidden: usize,
    pub reverse: bool,
}

#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    input: Array3<T>,
    /// Activated gates per processing step, `(steps, batch, 4 * hidden)`.
    gates: Array3<T>,
    cell: Array3<T>,
    cell_tanh: Array3<T>,
    /// Hidden states in processing order.
    hidden: Array3<T>,
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

impl<T: Scalar> Lstm<T> {
    /// Uniform `1 / sqrt(hidden)` init; forget-gate bias starts at 1.
    pub fn new(input: usize, hidden: usize, reverse: bool, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut bias = Param::zeros(&[4 * hidden]);
        bias.value.slice_mut(s![hidden..2 * hidden]).fill(T::one());
        Self {
            w_ih: Param::uniform(&[4 * hidden, input], bound, rng),
            w_hh: Param::uniform(&[4 * hidden, hidden], bound, rng),
            bias,
            hidden,
            reverse,
        }
    }

    fn time_index(&self, step: usize, steps: usize) -> usize {
        if self.reverse {
            steps - 1 - step
        } else {
            step
        }
    }

    fn w_ih(&self) -> ArrayView2<'_, T> {
        self.w_ih.value.view().into_dimensionality::<Ix2>().expect("2-d weight")
    }

    fn w_hh(&self) -> ArrayView2<'_, T> {
        self.w_hh.value.view().into_dimensionality::<Ix2>().expect("2-d weight")
    }

    /// Returns hidden states in time order, `(time, batch, hidden)`.
    pub fn forward(&self, x: ArrayView3<T>) -> (Array3<T>, LstmCache<T>) {
        let (steps, batch, features) = x.dim();
        let hd = self.hidden;
        let flat = reshape(x.to_owned(), (steps * batch, features));
        let bias = self.bias.value.view().into_dimensionality::<Ix1>().expect("1-d bias");
        let mut projected = flat.dot(&self.w_ih().t());
        projected += &bias;
        let projected = reshape(projected, (steps, batch, 4 * hd));

        let mut gates = Array3::zeros((steps, batch, 4 * hd));
        let mut cell = Array3::zeros((steps, batch, hd));
        let mut cell_tanh = Array3::zeros((steps, batch, hd));
        let mut hidden = Array3::zeros((steps, batch, hd));
        let mut h = Array2::<T>::zeros((batch, hd));
        let mut c = Array2::<T>::zeros((batch, hd));
        let w_hh_t = self.w_hh().t().to_owned();
        for step in 0..steps {
            let t = self.time_index(step, steps);
            let mut z = h.dot(&w_hh_t);
            z += &projected.index_axis(Axis(0), t);
            for b in 0..batch {
                for j in 0..hd {
                    let i = sigmoid(z[[b, j]]);
                    let f = sigmoid(z[[b, hd + j]]);
                    let g = z[[b, 2 * hd + j]].tanh();
                    let o = sigmoid(z[[b, 3 * hd + j]]);
                    let cv = f * c[[b, j]] + i * g;
                    let ct = cv.tanh();
                    c[[b, j]] = cv;
                    h[[b, j]] = o * ct;
                    gates[[step, b, j]] = i;
                    gates[[step, b, hd + j]] = f;
                    gates[[step, b, 2 * hd + j]] = g;
                    gates[[step, b, 3 * hd + j]] = o;
                    cell[[step, b, j]] = cv;
                    cell_tanh[[step, b, j]] = ct;
                }
            }
            hidden.index_axis_mut(Axis(0), step).assign(&h);
        }
        let mut output = Array3::zeros((steps, batch, hd));
        for step in 0..steps {
            output
                .index_axis_mut(Axis(0), self.time_index(step, steps))
                .assign(&hidden.index_axis(Axis(0), step));
        }
        let cache = LstmCache {
            input: x.to_owned(),
            gates,
            cell,
            cell_tanh,
            hidden,
        };
        (output, cache)
    }

    /// `d_output` is in time order. Accumulates parameter gradients.
    pub fn backward(&mut self, cache: &LstmCache<T>, d_output: ArrayView3<T>) -> Array3<T> {
        let (steps, batch, features) = cache.input.dim();
        let hd = self.hidden;
        let w_hh = self.w_hh().to_owned();
        let mut dz_all = Array3::<T>::zeros((steps, batch, 4 * hd));
        let mut dh_next = Array2::<T>::zeros((batch, hd));
        let mut dc_next = Array2::<T>::zeros((batch, hd));
        let mut dw_hh = Array2::<T>::zeros((4 * hd, hd));
        for step in (0..steps).rev() {
            let t = self.time_index(step, steps);
            let mut dz = Array2::<T>::zeros((batch, 4 * hd));
            for b in 0..batch {
                for j in 0..hd {
                    let i = cache.gates[[step, b, j]];
                    let f = cache.gates[[step, b, hd + j]];
                    let g = cache.gates[[step, b, 2 * hd + j]];
                    let o = cache.gates[[step, b, 3 * hd + j]];
                    let ct = cache.cell_tanh[[step, b, j]];
                    let c_prev = if step > 0 {
                        cache.cell[[step - 1, b, j]]
                    } else {
                        T::zero()
                    };
                    let dh = d_output[[t, b, j]] + dh_next[[b, j]];
                    let d_o = dh * ct;
                    let dc = dh * o * (T::one() - ct * ct) + dc_next[[b, j]];
                    let di = dc * g;
                    let dg = dc * i;
                    let df = dc * c_prev;
                    dc_next[[b, j]] = dc * f;
                    dz[[b, j]] = di * i * (T::one() - i);
                    dz[[b, hd + j]] = df * f * (T::one() - f);
                    dz[[b, 2 * hd + j]] = dg * (T::one() - g * g);
                    dz[[b, 3 * hd + j]] = d_o * o * (T::one() - o);
                }
            }
            if step > 0 {
                let h_prev = cache.hidden.index_axis(Axis(0), step - 1);
                ndarray::linalg::general_mat_mul(T::one(), &dz.t(), &h_prev, T::one(), &mut dw_hh);
            }
            dh_next = dz.dot(&w_hh);
            dz_all.index_axis_mut(Axis(0), t).assign(&dz);
        }
        let dz_flat = reshape(dz_all, (steps * batch, 4 * hd));
        let x_flat = reshape(cache.input.clone(), (steps * batch, features));
        {
            let mut g = self
                .w_ih
                .grad
                .view_mut()
                .into_dimensionality::<Ix2>()
                .expect("2-d grad");
            ndarray::linalg::general_mat_mul(T::one(), &dz_flat.t(), &x_flat, T::one(), &mut g);
        }
        self.w_hh.grad.zip_mut_with(&dw_hh.into_dyn(), |g, &d| *g += d);
        let db = dz_flat.sum_axis(Axis(0));
        self.bias.grad.zip_mut_with(&db.into_dyn(), |g, &d| *g += d);
        reshape(dz_flat.dot(&self.w_ih()), (steps, batch, features))
    }
}

impl<T: Scalar> Parameterized<T> for Lstm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        f(&join(prefix, "w_ih"), &self.w_ih);
        f(&join(prefix, "w_hh"), &self.w_hh);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        f(&join(prefix, "w_ih"), &mut self.w_ih);
        f(&join(prefix, "w_hh"), &mut self.w_hh);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Forward and reverse LSTMs with outputs concatenated to `2 * hidden`.
#[derive(Debug, Clone)]
pub struct BiLstm<T> {
    pub forward_dir: Lstm<T>,
    pub reverse_dir: Lstm<T>,
}

#[derive(Debug, Clone)]
pub struct BiLstmCache<T> {
    forward_dir: LstmCache<T>,
    reverse_dir: LstmCache<T>,
}

impl<T: Scalar> BiLstm<T> {
    pub fn new(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Self {
            forward_dir: Lstm::new(input, hidden, false, rng),
            reverse_dir: Lstm::new(input, hidden, true, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward_dir.hidden
    }

    pub fn forward(&self, x: ArrayView3<T>) -> (Array3<T>, BiLstmCache<T>) {
        let (a, ca) = self.forward_dir.forward(x);
        let (b, cb) = self.reverse_dir.forward(x);
        let out = concatenate(Axis(2), &[a.view(), b.view()]).expect("matching shapes");
        (
            out,
            BiLstmCache {
                forward_dir: ca,
                reverse_dir: cb,
            },
        )
    }

    pub fn backward(&mut self, cache: &BiLstmCache<T>, d_output: ArrayView3<T>) -> Array3<T> {
        let hd = self.hidden();
        let da = self
            .forward_dir
            .backward(&cache.forward_dir, d_output.slice(s![.., .., ..hd]));
        let db = self
            .reverse_dir
            .backward(&cache.reverse_dir, d_output.slice(s![.., .., hd..]));
        da + db
    }
}

impl<T: Scalar> Parameterized<T> for BiLstm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param<T>)) {
        self.forward_dir.visit(&join(prefix, "fwd"), f);
        self.reverse_dir.visit(&join(prefix, "rev"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param<T>)) {
        self.forward_dir.visit_mut(&join(prefix, "fwd"), f);
        self.reverse_dir.visit_mut(&join(prefix, "rev"), f);
    }
}

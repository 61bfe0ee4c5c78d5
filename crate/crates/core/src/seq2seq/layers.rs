//! Parameter containers and the forward/backward rules of the dense
//! building blocks.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Real;

const LN_EPS: f64 = 1e-5;

/// Visitor over named parameter tensors in a fixed order.
pub(crate) trait Visit<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[T]));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &mut [T]));
}

fn normal_matrix<T: Real, R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<T> {
    let dist = Normal::new(0.0, std).expect("valid std");
    Array2::from_shape_simple_fn((rows, cols), || T::lit(dist.sample(rng)))
}

pub(crate) fn init_embedding<T: Real, R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array2<T> {
    normal_matrix(rows, cols, std, rng)
}

/// `y = x W + b` with `W` stored `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            weight: Array2::zeros((input, output)),
            bias: Array1::zeros(output),
        }
    }

    pub fn init<R: Rng>(input: usize, output: usize, gain: f64, rng: &mut R) -> Self {
        Self {
            weight: normal_matrix(input, output, gain / (input as f64).sqrt(), rng),
            bias: Array1::zeros(output),
        }
    }

    pub fn forward(&self, x: &Array2<T>) -> Array2<T> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulate parameter gradients into `grad` and return `dL/dx`.
    pub fn backward(&self, x: &Array2<T>, dy: &Array2<T>, grad: &mut Linear<T>) -> Array2<T> {
        general_mat_mul(T::one(), &x.t(), dy, T::one(), &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.t())
    }

    pub(crate) fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> Linear<U> {
        Linear {
            weight: self.weight.mapv(f),
            bias: self.bias.mapv(f),
        }
    }
}

impl<T: Real> Visit<T> for Linear<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[T])) {
        f(format!("{prefix}.weight"), self.weight.shape(), self.weight.as_slice().expect("contiguous"));
        f(format!("{prefix}.bias"), self.bias.shape(), self.bias.as_slice().expect("contiguous"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &mut [T])) {
        let shape = self.weight.shape().to_vec();
        f(format!("{prefix}.weight"), &shape, self.weight.as_slice_mut().expect("contiguous"));
        let shape = self.bias.shape().to_vec();
        f(format!("{prefix}.bias"), &shape, self.bias.as_slice_mut().expect("contiguous"));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub gamma: Array1<T>,
    pub beta: Array1<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerNormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
}

impl<T: Real> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            gamma: Array1::zeros(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub(crate) fn forward(&self, x: &Array2<T>) -> (Array2<T>, LayerNormCache<T>) {
        let dim = T::lit(x.ncols() as f64);
        let eps = T::lit(LN_EPS);
        let mut xhat = x.clone();
        let mut inv_std = Array1::zeros(x.nrows());
        for (mut row, s) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
            let mean = row.sum() / dim;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).sum::<T>() / dim;
            let inv = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * inv);
            *s = inv;
        }
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        (y, LayerNormCache { xhat, inv_std })
    }

    /// Single-row forward without a cache, used by incremental decoding.
    pub(crate) fn forward_row(&self, x: &[T], out: &mut [T]) {
        let dim = T::lit(x.len() as f64);
        let mean = x.iter().copied().sum::<T>() / dim;
        let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dim;
        let inv = T::one() / (var + T::lit(LN_EPS)).sqrt();
        for (i, o) in out.iter_mut().enumerate() {
            *o = (x[i] - mean) * inv * self.gamma[i] + self.beta[i];
        }
    }

    pub(crate) fn backward(&self, cache: &LayerNormCache<T>, dy: &Array2<T>, grad: &mut LayerNorm<T>) -> Array2<T> {
        grad.gamma += &(dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let dim = T::lit(dy.ncols() as f64);
        let mut dx = dy * &self.gamma;
        Zip::from(dx.rows_mut())
            .and(cache.xhat.rows())
            .and(&cache.inv_std)
            .for_each(|mut row, xhat, &inv| {
                let mean_d = row.sum() / dim;
                let mean_dx = row.iter().zip(xhat.iter()).map(|(&a, &b)| a * b).sum::<T>() / dim;
                Zip::from(&mut row).and(&xhat).for_each(|d, &xh| {
                    *d = inv * (*d - mean_d - xh * mean_dx);
                });
            });
        dx
    }

    pub(crate) fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> LayerNorm<U> {
        LayerNorm {
            gamma: self.gamma.mapv(f),
            beta: self.beta.mapv(f),
        }
    }
}

impl<T: Real> Visit<T> for LayerNorm<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[T])) {
        f(format!("{prefix}.gamma"), self.gamma.shape(), self.gamma.as_slice().expect("contiguous"));
        f(format!("{prefix}.beta"), self.beta.shape(), self.beta.as_slice().expect("contiguous"));
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &mut [T])) {
        let shape = self.gamma.shape().to_vec();
        f(format!("{prefix}.gamma"), &shape, self.gamma.as_slice_mut().expect("contiguous"));
        let shape = self.beta.shape().to_vec();
        f(format!("{prefix}.beta"), &shape, self.beta.as_slice_mut().expect("contiguous"));
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

pub(crate) fn gelu<T: Real>(z: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    half * z * (T::one() + (c * (z + a * z * z * z)).tanh())
}

pub(crate) fn gelu_grad<T: Real>(z: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(GELU_A);
    let half = T::lit(0.5);
    let t = (c * (z + a * z * z * z)).tanh();
    half * (T::one() + t) + half * z * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * a * z * z)
}

/// Position-wise `fc2(gelu(fc1(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct FeedForwardCache<T> {
    pre: Array2<T>,
    act: Array2<T>,
}

impl<T: Real> FeedForward<T> {
    pub fn zeros(d: usize, ff: usize) -> Self {
        Self {
            fc1: Linear::zeros(d, ff),
            fc2: Linear::zeros(ff, d),
        }
    }

    pub fn init<R: Rng>(d: usize, ff: usize, out_gain: f64, rng: &mut R) -> Self {
        Self {
            fc1: Linear::init(d, ff, 1.0, rng),
            fc2: Linear::init(ff, d, out_gain, rng),
        }
    }

    pub(crate) fn forward(&self, x: &Array2<T>) -> (Array2<T>, FeedForwardCache<T>) {
        let pre = self.fc1.forward(x);
        let act = pre.mapv(gelu);
        let y = self.fc2.forward(&act);
        (y, FeedForwardCache { pre, act })
    }

    pub(crate) fn backward(&self, x: &Array2<T>, cache: &FeedForwardCache<T>, dy: &Array2<T>, grad: &mut FeedForward<T>) -> Array2<T> {
        let mut dact = self.fc2.backward(&cache.act, dy, &mut grad.fc2);
        Zip::from(&mut dact).and(&cache.pre).for_each(|d, &z| *d = *d * gelu_grad(z));
        self.fc1.backward(x, &dact, &mut grad.fc1)
    }

    pub(crate) fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> FeedForward<U> {
        FeedForward {
            fc1: self.fc1.map(f),
            fc2: self.fc2.map(f),
        }
    }
}

impl<T: Real> Visit<T> for FeedForward<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[T])) {
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &mut [T])) {
        self.fc1.visit_mut(&format!("{prefix}.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.fc2"), f);
    }
}

/// Query/key/value/output projections of one multi-head attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionWeights<T> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

impl<T: Real> AttentionWeights<T> {
    pub fn zeros(d: usize) -> Self {
        Self {
            q: Linear::zeros(d, d),
            k: Linear::zeros(d, d),
            v: Linear::zeros(d, d),
            o: Linear::zeros(d, d),
        }
    }

    pub fn init<R: Rng>(d: usize, out_gain: f64, rng: &mut R) -> Self {
        Self {
            q: Linear::init(d, d, 1.0, rng),
            k: Linear::init(d, d, 1.0, rng),
            v: Linear::init(d, d, 1.0, rng),
            o: Linear::init(d, d, out_gain, rng),
        }
    }

    pub(crate) fn map<U: Real>(&self, f: impl Fn(T) -> U + Copy) -> AttentionWeights<U> {
        AttentionWeights {
            q: self.q.map(f),
            k: self.k.map(f),
            v: self.v.map(f),
            o: self.o.map(f),
        }
    }
}

impl<T: Real> Visit<T> for AttentionWeights<T> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &[T])) {
        self.q.visit(&format!("{prefix}.q"), f);
        self.k.visit(&format!("{prefix}.k"), f);
        self.v.visit(&format!("{prefix}.v"), f);
        self.o.visit(&format!("{prefix}.o"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &[usize], &mut [T])) {
        self.q.visit_mut(&format!("{prefix}.q"), f);
        self.k.visit_mut(&format!("{prefix}.k"), f);
        self.v.visit_mut(&format!("{prefix}.v"), f);
        self.o.visit_mut(&format!("{prefix}.o"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_difference() {
        for z in [-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(z + h) - gelu(z - h)) / (2.0 * h);
            assert!((fd - gelu_grad(z)).abs() < 1e-8, "z={z}");
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let ln = LayerNorm::<f64>::new(4);
        let x = ndarray::array![[1.0, 2.0, 3.0, 4.0], [10.0, -10.0, 0.0, 5.0]];
        let (y, _) = ln.forward(&x);
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.iter().map(|v| v * v).sum::<f64>() / 4.0;
            assert!((var - 1.0).abs() < 1e-4);
        }
        let mut out = [0.0; 4];
        ln.forward_row(x.row(1).as_slice().unwrap(), &mut out);
        for (a, b) in out.iter().zip(y.row(1)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

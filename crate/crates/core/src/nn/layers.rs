use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::params::{push, push_mut, Parameters, Tensor, TensorMut};
use super::scalar::{cst, Scalar};

/// Epsilon used by every normalization in the model.
pub const NORM_EPS: f64 = 1e-6;

/// Samples from N(0, std^2) truncated to two standard deviations.
pub fn trunc_normal<F: Scalar, R: Rng + ?Sized>(shape: (usize, usize), std: f64, rng: &mut R) -> Array2<F> {
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn(shape, || loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 2.0 * std {
            return cst(x);
        }
    })
}

/// `y = x W + b` with `W` stored as `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F> {
    pub weight: Array2<F>,
    pub bias: Array1<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((inputs, outputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: trunc_normal((inputs, outputs), 0.02, rng),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> Array2<F> {
        let mut y = x.dot(&self.weight);
        y += &self.bias;
        y
    }

    /// Accumulates parameter gradients only.
    pub fn backward_params(&self, x: ArrayView2<'_, F>, dy: ArrayView2<'_, F>, grad: &mut Self) {
        general_mat_mul(F::one(), &x.t(), &dy, F::one(), &mut grad.weight);
        grad.bias += &dy.sum_axis(Axis(0));
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&self, x: ArrayView2<'_, F>, dy: ArrayView2<'_, F>, grad: &mut Self) -> Array2<F> {
        self.backward_params(x, dy, grad);
        dy.dot(&self.weight.t())
    }
}

impl<F: Scalar> Parameters<F> for Linear<F> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a, F>>) {
        push(out, prefix, "weight", &self.weight);
        push(out, prefix, "bias", &self.bias);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, F>>) {
        push_mut(out, prefix, "weight", &mut self.weight);
        push_mut(out, prefix, "bias", &mut self.bias);
    }
}

/// Saved per-row statistics for [`LayerNorm::backward`].
#[derive(Debug, Clone)]
pub struct NormCache<F> {
    xhat: Array2<F>,
    rstd: Array1<F>,
}

/// Normalizes each row to zero mean and unit (population) variance.
pub fn normalize_rows<F: Scalar>(x: ArrayView2<'_, F>, eps: f64) -> (Array2<F>, Array1<F>) {
    let n: F = cst(x.ncols() as f64);
    let eps: F = cst(eps);
    let mut xhat = x.to_owned();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in xhat.axis_iter_mut(Axis(0)).zip(rstd.iter_mut()) {
        let mean = row.iter().fold(F::zero(), |a, &b| a + b) / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().fold(F::zero(), |a, &b| a + b * b) / n;
        let s = F::one() / (var + eps).sqrt();
        row.mapv_inplace(|v| v * s);
        *r = s;
    }
    (xhat, rstd)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F> {
    pub gamma: Array1<F>,
    pub beta: Array1<F>,
}

impl<F: Scalar> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        Self {
            gamma: Array1::ones(dim),
            beta: Array1::zeros(dim),
        }
    }

    pub fn forward(&self, x: ArrayView2<'_, F>) -> (Array2<F>, NormCache<F>) {
        let (xhat, rstd) = normalize_rows(x, NORM_EPS);
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        (y, NormCache { xhat, rstd })
    }

    pub fn backward(&self, cache: &NormCache<F>, dy: ArrayView2<'_, F>, grad: &mut Self) -> Array2<F> {
        grad.gamma += &(&dy * &cache.xhat).sum_axis(Axis(0));
        grad.beta += &dy.sum_axis(Axis(0));
        let n: F = cst(dy.ncols() as f64);
        let mut dx = &dy * &self.gamma;
        for ((mut g, xh), &r) in dx
            .axis_iter_mut(Axis(0))
            .zip(cache.xhat.axis_iter(Axis(0)))
            .zip(cache.rstd.iter())
        {
            let mean_g = g.iter().fold(F::zero(), |a, &b| a + b) / n;
            let mean_gx = g
                .iter()
                .zip(xh.iter())
                .fold(F::zero(), |a, (&b, &c)| a + b * c)
                / n;
            Zip::from(&mut g)
                .and(&xh)
                .for_each(|gi, &x| *gi = r * (*gi - mean_g - x * mean_gx));
        }
        dx
    }
}

impl<F: Scalar> Parameters<F> for LayerNorm<F> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a, F>>) {
        push(out, prefix, "gamma", &self.gamma);
        push(out, prefix, "beta", &self.beta);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, F>>) {
        push_mut(out, prefix, "gamma", &mut self.gamma);
        push_mut(out, prefix, "beta", &mut self.beta);
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// `tanh` through a single `exp`, noticeably cheaper than libm's `tanh`.
#[inline]
fn fast_tanh<F: Scalar>(u: F) -> F {
    let two = F::one() + F::one();
    F::one() - two / ((two * u).exp() + F::one())
}

/// Tanh-approximated GELU.
pub fn gelu<F: Scalar>(x: &Array2<F>) -> Array2<F> {
    let (k, c, half): (F, F, F) = (cst(GELU_K), cst(GELU_C), cst(0.5));
    x.mapv(|v| half * v * (F::one() + fast_tanh(k * (v + c * v * v * v))))
}

/// `dy * gelu'(x)`.
pub fn gelu_backward<F: Scalar>(x: &Array2<F>, dy: ArrayView2<'_, F>) -> Array2<F> {
    let (k, c, half, three): (F, F, F, F) = (cst(GELU_K), cst(GELU_C), cst(0.5), cst(3.0));
    let mut out = dy.to_owned();
    Zip::from(&mut out).and(x).for_each(|d, &v| {
        let t = fast_tanh(k * (v + c * v * v * v));
        let grad = half * (F::one() + t) + half * v * (F::one() - t * t) * k * (F::one() + three * c * v * v);
        *d *= grad;
    });
    out
}

/// Inverted dropout keep-mask (entries are 0 or `1 / (1 - p)`).
pub fn dropout_mask<F: Scalar, R: Rng + ?Sized>(shape: (usize, usize), p: f64, rng: &mut R) -> Array2<F> {
    let scale: F = cst(1.0 / (1.0 - p));
    Array2::from_shape_simple_fn(shape, || {
        if rng.random::<f64>() < p {
            F::zero()
        } else {
            scale
        }
    })
}

/// Mean softmax cross-entropy over rows; returns the mean loss and
/// `dL/dlogits`.
pub fn softmax_cross_entropy<F: Scalar>(logits: ArrayView2<'_, F>, labels: &[usize]) -> (F, Array2<F>) {
    let probs = softmax_rows(logits);
    let n: F = cst(labels.len() as f64);
    let mut loss = F::zero();
    let mut grad = probs;
    for (mut row, &y) in grad.axis_iter_mut(Axis(0)).zip(labels) {
        loss -= row[y].max(cst(1e-30)).ln();
        row[y] -= F::one();
        row.mapv_inplace(|v| v / n);
    }
    (loss / n, grad)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<F: Scalar>(x: ArrayView2<'_, F>) -> Array2<F> {
    let mut out = x.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        softmax_in_place(row.as_slice_mut().expect("row of owned array"));
    }
    out
}

pub(crate) fn softmax_in_place<F: Scalar>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = F::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

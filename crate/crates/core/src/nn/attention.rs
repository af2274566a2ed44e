use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use super::layers::{softmax_in_place, Linear};
use super::params::{join, Parameters, Tensor, TensorMut};
use super::scalar::{cst, Scalar};

/// Multi-head self-attention over fixed-length sequences stacked row-wise:
/// rows `b*n .. (b+1)*n` of the input belong to sample `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention<F> {
    pub qkv: Linear<F>,
    pub proj: Linear<F>,
    pub heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    x: Array2<F>,
    qkv: Array2<F>,
    /// Softmax weights per `(sample, head)`, sample-major.
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
}

impl<F: Scalar> SelfAttention<F> {
    pub fn init<R: Rng + ?Sized>(dim: usize, heads: usize, rng: &mut R) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "dim must divide into heads");
        Self {
            qkv: Linear::init(dim, 3 * dim, rng),
            proj: Linear::init(dim, dim, rng),
            heads,
        }
    }

    fn dim(&self) -> usize {
        self.proj.outputs()
    }

    pub fn forward(&self, x: Array2<F>, seq_len: usize, keep: bool) -> (Array2<F>, Option<AttentionCache<F>>) {
        let c = self.dim();
        let d = c / self.heads;
        let batch = x.nrows() / seq_len;
        let scale: F = cst(1.0 / (d as f64).sqrt());
        let qkv = self.qkv.forward(x.view());
        let mut ctx = Array2::<F>::zeros((x.nrows(), c));
        let mut probs = Vec::with_capacity(if keep { batch * self.heads } else { 0 });
        let mut scores = Array2::<F>::zeros((seq_len, seq_len));
        for b in 0..batch {
            let rows = b * seq_len..(b + 1) * seq_len;
            for h in 0..self.heads {
                let q = qkv.slice(s![rows.clone(), h * d..(h + 1) * d]);
                let k = qkv.slice(s![rows.clone(), c + h * d..c + (h + 1) * d]);
                let v = qkv.slice(s![rows.clone(), 2 * c + h * d..2 * c + (h + 1) * d]);
                general_mat_mul(scale, &q, &k.t(), F::zero(), &mut scores);
                for mut row in scores.axis_iter_mut(Axis(0)) {
                    softmax_in_place(row.as_slice_mut().expect("contiguous row"));
                }
                let mut out = ctx.slice_mut(s![rows.clone(), h * d..(h + 1) * d]);
                general_mat_mul(F::one(), &scores, &v, F::zero(), &mut out);
                if keep {
                    probs.push(scores.clone());
                }
            }
        }
        let y = self.proj.forward(ctx.view());
        let cache = keep.then(|| AttentionCache { x, qkv, probs, ctx });
        (y, cache)
    }

    pub fn backward(&self, cache: &AttentionCache<F>, dy: ArrayView2<'_, F>, grad: &mut Self) -> Array2<F> {
        let c = self.dim();
        let d = c / self.heads;
        let seq_len = cache.probs.first().map_or(1, |p| p.nrows());
        let batch = cache.x.nrows() / seq_len;
        let scale: F = cst(1.0 / (d as f64).sqrt());
        let dctx = self.proj.backward(cache.ctx.view(), dy, &mut grad.proj);
        let mut dqkv = Array2::<F>::zeros(cache.qkv.dim());
        let mut dp = Array2::<F>::zeros((seq_len, seq_len));
        for b in 0..batch {
            let rows = b * seq_len..(b + 1) * seq_len;
            for h in 0..self.heads {
                let p = &cache.probs[b * self.heads + h];
                let (qc, kc, vc) = (h * d, c + h * d, 2 * c + h * d);
                let q = cache.qkv.slice(s![rows.clone(), qc..qc + d]);
                let k = cache.qkv.slice(s![rows.clone(), kc..kc + d]);
                let v = cache.qkv.slice(s![rows.clone(), vc..vc + d]);
                let dout = dctx.slice(s![rows.clone(), qc..qc + d]);
                general_mat_mul(F::one(), &dout, &v.t(), F::zero(), &mut dp);
                general_mat_mul(
                    F::one(),
                    &p.t(),
                    &dout,
                    F::zero(),
                    &mut dqkv.slice_mut(s![rows.clone(), vc..vc + d]),
                );
                // softmax backward, then fold in the score scale
                for (mut g, pr) in dp.axis_iter_mut(Axis(0)).zip(p.axis_iter(Axis(0))) {
                    let dot = g.iter().zip(pr.iter()).fold(F::zero(), |a, (&x, &y)| a + x * y);
                    Zip::from(&mut g).and(&pr).for_each(|gi, &pi| *gi = pi * (*gi - dot) * scale);
                }
                general_mat_mul(
                    F::one(),
                    &dp,
                    &k,
                    F::zero(),
                    &mut dqkv.slice_mut(s![rows.clone(), qc..qc + d]),
                );
                general_mat_mul(
                    F::one(),
                    &dp.t(),
                    &q,
                    F::zero(),
                    &mut dqkv.slice_mut(s![rows.clone(), kc..kc + d]),
                );
            }
        }
        self.qkv.backward(cache.x.view(), dqkv.view(), &mut grad.qkv)
    }
}

impl<F: Scalar> Parameters<F> for SelfAttention<F> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a, F>>) {
        self.qkv.collect(&join(prefix, "qkv"), out);
        self.proj.collect(&join(prefix, "proj"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, F>>) {
        self.qkv.collect_mut(&join(prefix, "qkv"), out);
        self.proj.collect_mut(&join(prefix, "proj"), out);
    }
}

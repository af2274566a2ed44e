use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::attention::{AttentionCache, SelfAttention};
use super::layers::{dropout_mask, gelu, gelu_backward, LayerNorm, Linear, NormCache};
use super::params::{join, Parameters, Tensor, TensorMut};
use super::scalar::Scalar;

/// Where layer normalization sits relative to each residual connection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NormPlacement {
    /// `LN(x + f(x))`
    #[default]
    Post,
    /// `x + f(LN(x))`
    Pre,
}

/// Per-call forward settings.
pub struct Pass<'r> {
    /// Keep activations for a backward pass.
    pub keep: bool,
    pub dropout: f64,
    pub rng: Option<&'r mut ChaCha8Rng>,
}

impl Pass<'_> {
    /// Deterministic forward without caches (teacher, feature extraction).
    pub fn inference() -> Pass<'static> {
        Pass {
            keep: false,
            dropout: 0.0,
            rng: None,
        }
    }

    /// Deterministic forward that keeps caches.
    pub fn train() -> Pass<'static> {
        Pass {
            keep: true,
            dropout: 0.0,
            rng: None,
        }
    }

    fn drop_mask<F: Scalar>(&mut self, shape: (usize, usize)) -> Option<Array2<F>> {
        if self.dropout <= 0.0 {
            return None;
        }
        let rng = self
            .rng
            .as_deref_mut()
            .expect("dropout needs an rng in the forward pass");
        Some(dropout_mask(shape, self.dropout, rng))
    }
}

/// One transformer layer: self-attention then a GELU feed-forward network.
#[derive(Debug, Clone, PartialEq)]
pub struct Block<F> {
    pub attn: SelfAttention<F>,
    pub norm1: LayerNorm<F>,
    pub fc1: Linear<F>,
    pub fc2: Linear<F>,
    pub norm2: LayerNorm<F>,
}

#[derive(Debug, Clone)]
pub struct BlockCache<F> {
    attn: AttentionCache<F>,
    norm1: NormCache<F>,
    norm2: NormCache<F>,
    ffn_in: Array2<F>,
    pre_act: Array2<F>,
    hidden: Array2<F>,
    drop_attn: Option<Array2<F>>,
    drop_ffn: Option<Array2<F>>,
}

/// What a block forward produced.
pub struct BlockOutput<F> {
    pub out: Array2<F>,
    /// Feed-forward sub-layer activation before its residual connection.
    pub ffn: Array2<F>,
    pub cache: Option<BlockCache<F>>,
}

fn apply_mask<F: Scalar>(x: &mut Array2<F>, mask: &Option<Array2<F>>) {
    if let Some(m) = mask {
        *x *= m;
    }
}

fn masked<F: Scalar>(dy: ArrayView2<'_, F>, mask: &Option<Array2<F>>) -> Array2<F> {
    match mask {
        Some(m) => &dy * m,
        None => dy.to_owned(),
    }
}

impl<F: Scalar> Block<F> {
    pub fn init<R: Rng + ?Sized>(dim: usize, heads: usize, ffn_dim: usize, rng: &mut R) -> Self {
        Self {
            attn: SelfAttention::init(dim, heads, rng),
            norm1: LayerNorm::new(dim),
            fc1: Linear::init(dim, ffn_dim, rng),
            fc2: Linear::init(ffn_dim, dim, rng),
            norm2: LayerNorm::new(dim),
        }
    }

    fn ffn(&self, x: ArrayView2<'_, F>) -> (Array2<F>, Array2<F>, Array2<F>) {
        let pre = self.fc1.forward(x);
        let hidden = gelu(&pre);
        let out = self.fc2.forward(hidden.view());
        (out, pre, hidden)
    }

    pub fn forward(&self, x: Array2<F>, seq_len: usize, norm: NormPlacement, pass: &mut Pass<'_>) -> BlockOutput<F> {
        let keep = pass.keep;
        match norm {
            NormPlacement::Post => {
                let residual = x.clone();
                let (mut a, attn) = self.attn.forward(x, seq_len, keep);
                let drop_attn = pass.drop_mask(a.dim());
                apply_mask(&mut a, &drop_attn);
                a += &residual;
                let (x1, norm1) = self.norm1.forward(a.view());
                let (mut f, pre_act, hidden) = self.ffn(x1.view());
                let ffn = f.clone();
                let drop_ffn = pass.drop_mask(f.dim());
                apply_mask(&mut f, &drop_ffn);
                f += &x1;
                let (out, norm2) = self.norm2.forward(f.view());
                let cache = attn.map(|attn| BlockCache {
                    attn,
                    norm1,
                    norm2,
                    ffn_in: x1,
                    pre_act,
                    hidden,
                    drop_attn,
                    drop_ffn,
                });
                BlockOutput { out, ffn, cache }
            }
            NormPlacement::Pre => {
                let (n1, norm1) = self.norm1.forward(x.view());
                let (mut a, attn) = self.attn.forward(n1, seq_len, keep);
                let drop_attn = pass.drop_mask(a.dim());
                apply_mask(&mut a, &drop_attn);
                a += &x;
                let x1 = a;
                let (n2, norm2) = self.norm2.forward(x1.view());
                let (mut f, pre_act, hidden) = self.ffn(n2.view());
                let ffn = f.clone();
                let drop_ffn = pass.drop_mask(f.dim());
                apply_mask(&mut f, &drop_ffn);
                f += &x1;
                let cache = attn.map(|attn| BlockCache {
                    attn,
                    norm1,
                    norm2,
                    ffn_in: n2,
                    pre_act,
                    hidden,
                    drop_attn,
                    drop_ffn,
                });
                BlockOutput { out: f, ffn, cache }
            }
        }
    }

    fn ffn_backward(&self, cache: &BlockCache<F>, dffn: ArrayView2<'_, F>, grad: &mut Self) -> Array2<F> {
        let dh = self.fc2.backward(cache.hidden.view(), dffn, &mut grad.fc2);
        let dpre = gelu_backward(&cache.pre_act, dh.view());
        self.fc1.backward(cache.ffn_in.view(), dpre.view(), &mut grad.fc1)
    }

    pub fn backward(
        &self,
        cache: &BlockCache<F>,
        dy: ArrayView2<'_, F>,
        norm: NormPlacement,
        grad: &mut Self,
    ) -> Array2<F> {
        match norm {
            NormPlacement::Post => {
                let dh2 = self.norm2.backward(&cache.norm2, dy, &mut grad.norm2);
                let df = masked(dh2.view(), &cache.drop_ffn);
                let mut dx1 = self.ffn_backward(cache, df.view(), grad);
                dx1 += &dh2;
                let dh1 = self.norm1.backward(&cache.norm1, dx1.view(), &mut grad.norm1);
                let da = masked(dh1.view(), &cache.drop_attn);
                let mut dx = self.attn.backward(&cache.attn, da.view(), &mut grad.attn);
                dx += &dh1;
                dx
            }
            NormPlacement::Pre => {
                let df = masked(dy, &cache.drop_ffn);
                let dn2 = self.ffn_backward(cache, df.view(), grad);
                let mut dx1 = self.norm2.backward(&cache.norm2, dn2.view(), &mut grad.norm2);
                dx1 += &dy;
                let da = masked(dx1.view(), &cache.drop_attn);
                let dn1 = self.attn.backward(&cache.attn, da.view(), &mut grad.attn);
                let mut dx = self.norm1.backward(&cache.norm1, dn1.view(), &mut grad.norm1);
                dx += &dx1;
                dx
            }
        }
    }
}

impl<F: Scalar> Parameters<F> for Block<F> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a, F>>) {
        self.attn.collect(&join(prefix, "attn"), out);
        self.norm1.collect(&join(prefix, "norm1"), out);
        self.fc1.collect(&join(prefix, "fc1"), out);
        self.fc2.collect(&join(prefix, "fc2"), out);
        self.norm2.collect(&join(prefix, "norm2"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, F>>) {
        self.attn.collect_mut(&join(prefix, "attn"), out);
        self.norm1.collect_mut(&join(prefix, "norm1"), out);
        self.fc1.collect_mut(&join(prefix, "fc1"), out);
        self.fc2.collect_mut(&join(prefix, "fc2"), out);
        self.norm2.collect_mut(&join(prefix, "norm2"), out);
    }
}

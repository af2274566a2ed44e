use ndarray::{Array1, Array2, ArrayView2, Axis, Ix3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::block::{Block, BlockCache, NormPlacement, Pass};
use super::layers::{trunc_normal, LayerNorm, Linear, NormCache};
use super::params::{join, push, push_mut, Parameters, Tensor, TensorMut};
use super::scalar::{cst, Scalar};
use crate::error::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    /// Embedding width `C_e`.
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Frames per segment `l`.
    pub segment_len: usize,
    /// Joints `V`.
    pub joints: usize,
    /// Segments per sequence `T_e`.
    pub segments: usize,
    /// Coordinates per joint `C_s`.
    pub channels: usize,
    pub dropout: f64,
    pub norm: NormPlacement,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            enc_layers: 8,
            dec_layers: 3,
            dim: 256,
            heads: 8,
            ffn_dim: 1024,
            segment_len: 3,
            joints: 25,
            segments: 30,
            channels: 3,
            dropout: 0.0,
            norm: NormPlacement::Post,
        }
    }
}

impl ModelConfig {
    /// The small configuration used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            enc_layers: 2,
            dec_layers: 1,
            dim: 16,
            heads: 2,
            ffn_dim: 32,
            segment_len: 3,
            joints: 5,
            segments: 4,
            channels: 3,
            dropout: 0.0,
            norm: NormPlacement::Post,
        }
    }

    /// Tokens per full sequence, `T_e * V`.
    pub fn tokens(&self) -> usize {
        self.segments * self.joints
    }

    /// Values per token input, `l * C_s`.
    pub fn token_inputs(&self) -> usize {
        self.segment_len * self.channels
    }

    /// Raw frames per sequence, `T_s = T_e * l`.
    pub fn frames(&self) -> usize {
        self.segments * self.segment_len
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embedding width {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.enc_layers == 0 || self.ffn_dim == 0 || self.segment_len == 0 {
            return Err(Error::Config("layer counts and widths must be positive".into()));
        }
        if self.joints < 2 || self.segments == 0 || self.channels == 0 {
            return Err(Error::Config("need >= 2 joints, >= 1 segment, >= 1 channel".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn block_params(&self) -> usize {
        let (c, h) = (self.dim, self.ffn_dim);
        4 * c * c + 2 * c * h + 9 * c + h
    }

    fn final_norm_params(&self) -> usize {
        match self.norm {
            NormPlacement::Post => 0,
            NormPlacement::Pre => 2 * self.dim,
        }
    }

    /// Closed-form parameter count of the encoder alone.
    pub fn encoder_params(&self) -> usize {
        let c = self.dim;
        self.token_inputs() * c
            + c
            + self.segments * c
            + self.joints * c
            + self.enc_layers * self.block_params()
            + self.final_norm_params()
    }

    /// Closed-form parameter count of the whole pretraining model.
    pub fn param_count(&self) -> usize {
        let c = self.dim;
        let decoder = c + self.segments * c + self.joints * c + self.dec_layers * self.block_params()
            + self.final_norm_params();
        let head = c * c + c;
        self.encoder_params() + decoder + head
    }
}

/// Which per-layer activation the encoder reports alongside its output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LayerTap {
    /// Each block's output, after the feed-forward residual and norm.
    #[default]
    BlockOutput,
    /// The feed-forward sub-layer activation before the residual.
    FfnActivation,
}

fn add_positions<F: Scalar>(x: &mut Array2<F>, pos_t: &Array2<F>, pos_s: &Array2<F>) {
    let (te, c) = pos_t.dim();
    let v = pos_s.nrows();
    let rows = x.nrows();
    let mut view = x
        .view_mut()
        .into_shape_with_order((rows / (te * v), te, v, c))
        .expect("token rows are whole sequences");
    view += &pos_t.view().into_shape_with_order((te, 1, c)).expect("pos_t");
    view += &pos_s.view().into_shape_with_order((1, v, c)).expect("pos_s");
}

fn position_grads<F: Scalar>(d: ArrayView2<'_, F>, pos_t: &mut Array2<F>, pos_s: &mut Array2<F>) {
    let (te, c) = pos_t.dim();
    let v = pos_s.nrows();
    let rows = d.nrows();
    let d4 = d
        .into_shape_with_order((rows / (te * v), te, v, c))
        .expect("token rows are whole sequences");
    let over_batch = d4.sum_axis(Axis(0));
    *pos_t += &over_batch.sum_axis(Axis(1));
    *pos_s += &over_batch.sum_axis(Axis(0));
}

fn check_finite<F: Scalar>(x: &Array2<F>, what: &str, layer: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("{what} layer {layer} produced non-finite activations")))
    }
}

#[derive(Debug, Clone)]
pub struct StackCache<F> {
    blocks: Vec<BlockCache<F>>,
    final_norm: Option<NormCache<F>>,
}

fn run_stack<F: Scalar>(
    blocks: &[Block<F>],
    final_norm: &Option<LayerNorm<F>>,
    mut x: Array2<F>,
    seq_len: usize,
    norm: NormPlacement,
    tap: Option<LayerTap>,
    pass: &mut Pass<'_>,
    what: &str,
) -> Result<(Array2<F>, Vec<Array2<F>>, Option<StackCache<F>>)> {
    let mut caches = Vec::with_capacity(blocks.len());
    let mut taps = Vec::new();
    for (i, block) in blocks.iter().enumerate() {
        let out = block.forward(x, seq_len, norm, pass);
        check_finite(&out.out, what, i)?;
        match tap {
            Some(LayerTap::BlockOutput) => taps.push(out.out.clone()),
            Some(LayerTap::FfnActivation) => taps.push(out.ffn),
            None => {}
        }
        if let Some(c) = out.cache {
            caches.push(c);
        }
        x = out.out;
    }
    let mut final_cache = None;
    if let Some(ln) = final_norm {
        let (y, c) = ln.forward(x.view());
        final_cache = Some(c);
        x = y;
    }
    let cache = pass.keep.then_some(StackCache {
        blocks: caches,
        final_norm: final_cache,
    });
    Ok((x, taps, cache))
}

fn stack_backward<F: Scalar>(
    blocks: &[Block<F>],
    final_norm: &Option<LayerNorm<F>>,
    cache: &StackCache<F>,
    dy: ArrayView2<'_, F>,
    norm: NormPlacement,
    grad_blocks: &mut [Block<F>],
    grad_norm: &mut Option<LayerNorm<F>>,
) -> Array2<F> {
    let mut d = match (final_norm, &cache.final_norm, grad_norm.as_mut()) {
        (Some(ln), Some(c), Some(g)) => ln.backward(c, dy, g),
        _ => dy.to_owned(),
    };
    for ((block, c), g) in blocks.iter().zip(&cache.blocks).zip(grad_blocks.iter_mut()).rev() {
        d = block.backward(c, d.view(), norm, g);
    }
    d
}

/// Joint embedding plus a stack of transformer blocks. The teacher is a
/// copy of the student's encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<F> {
    pub embed: Linear<F>,
    /// Temporal position embedding, `T_e x C_e`.
    pub pos_t: Array2<F>,
    /// Spatial position embedding, `V x C_e`.
    pub pos_s: Array2<F>,
    pub blocks: Vec<Block<F>>,
    /// Present only with pre-norm blocks.
    pub final_norm: Option<LayerNorm<F>>,
    pub norm: NormPlacement,
}

/// Encoder result for a batch of equally long token sequences.
pub struct EncoderOutput<F> {
    pub out: Array2<F>,
    pub taps: Vec<Array2<F>>,
    pub cache: Option<StackCache<F>>,
}

impl<F: Scalar> Encoder<F> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let c = cfg.dim;
        Self {
            embed: Linear::init(cfg.token_inputs(), c, rng),
            pos_t: trunc_normal((cfg.segments, c), 0.02, rng),
            pos_s: trunc_normal((cfg.joints, c), 0.02, rng),
            blocks: (0..cfg.enc_layers)
                .map(|_| Block::init(c, cfg.heads, cfg.ffn_dim, rng))
                .collect(),
            final_norm: (cfg.norm == NormPlacement::Pre).then(|| LayerNorm::new(c)),
            norm: cfg.norm,
        }
    }

    pub fn tokens(&self) -> usize {
        self.pos_t.nrows() * self.pos_s.nrows()
    }

    /// `LinearProj(I') + E_t + E_s` for `B * T_e * V` segment rows stacked
    /// sample-major, then time-major, then joint.
    pub fn embed(&self, segments: ArrayView2<'_, F>) -> Result<Array2<F>> {
        if segments.ncols() != self.embed.inputs() || !segments.nrows().is_multiple_of(self.tokens()) {
            return Err(Error::Shape(format!(
                "segment rows must be a multiple of {} with {} values, got {:?}",
                self.tokens(),
                self.embed.inputs(),
                segments.dim()
            )));
        }
        let mut x = self.embed.forward(segments);
        add_positions(&mut x, &self.pos_t, &self.pos_s);
        Ok(x)
    }

    pub fn embed_backward(&self, segments: ArrayView2<'_, F>, d: ArrayView2<'_, F>, grad: &mut Self) {
        self.embed.backward_params(segments, d, &mut grad.embed);
        position_grads(d, &mut grad.pos_t, &mut grad.pos_s);
    }

    /// Runs the block stack over `x`, whose rows are `seq_len`-token samples.
    pub fn forward_tokens(
        &self,
        x: Array2<F>,
        seq_len: usize,
        tap: Option<LayerTap>,
        pass: &mut Pass<'_>,
    ) -> Result<EncoderOutput<F>> {
        if seq_len == 0 || !x.nrows().is_multiple_of(seq_len) {
            return Err(Error::Shape(format!(
                "{} token rows do not split into sequences of {seq_len}",
                x.nrows()
            )));
        }
        let (out, taps, cache) =
            run_stack(&self.blocks, &self.final_norm, x, seq_len, self.norm, tap, pass, "encoder")?;
        Ok(EncoderOutput { out, taps, cache })
    }

    pub fn backward_tokens(&self, cache: &StackCache<F>, dy: ArrayView2<'_, F>, grad: &mut Self) -> Array2<F> {
        stack_backward(
            &self.blocks,
            &self.final_norm,
            cache,
            dy,
            self.norm,
            &mut grad.blocks,
            &mut grad.final_norm,
        )
    }

    /// Full unmasked pass: embedding then every block.
    pub fn encode_full(
        &self,
        segments: ArrayView2<'_, F>,
        tap: Option<LayerTap>,
        pass: &mut Pass<'_>,
    ) -> Result<EncoderOutput<F>> {
        let x = self.embed(segments)?;
        self.forward_tokens(x, self.tokens(), tap, pass)
    }

    /// Mean over all output tokens of each sample (`B x C_e`).
    pub fn features(&self, segments: ArrayView2<'_, F>) -> Result<Array2<F>> {
        let out = self.encode_full(segments, None, &mut Pass::inference())?;
        Ok(mean_pool(out.out.view(), self.tokens()))
    }
}

impl<F: Scalar> Parameters<F> for Encoder<F> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a, F>>) {
        self.embed.collect(&join(prefix, "embed"), out);
        push(out, prefix, "pos_t", &self.pos_t);
        push(out, prefix, "pos_s", &self.pos_s);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&join(prefix, &format!("blocks.{i}")), out);
        }
        if let Some(n) = &self.final_norm {
            n.collect(&join(prefix, "final_norm"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, F>>) {
        self.embed.collect_mut(&join(prefix, "embed"), out);
        push_mut(out, prefix, "pos_t", &mut self.pos_t);
        push_mut(out, prefix, "pos_s", &mut self.pos_s);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&join(prefix, &format!("blocks.{i}")), out);
        }
        if let Some(n) = &mut self.final_norm {
            n.collect_mut(&join(prefix, "final_norm"), out);
        }
    }
}

/// Mean over consecutive groups of `seq_len` rows.
pub fn mean_pool<F: Scalar>(x: ArrayView2<'_, F>, seq_len: usize) -> Array2<F> {
    let (rows, c) = x.dim();
    x.into_shape_with_order((rows / seq_len, seq_len, c))
        .expect("rows are whole sequences")
        .mean_axis(Axis(1))
        .expect("non-empty sequences")
}

/// Spreads a pooled gradient back over each sample's tokens.
pub fn mean_pool_backward<F: Scalar>(d: ArrayView2<'_, F>, seq_len: usize) -> Array2<F> {
    let (b, c) = d.dim();
    let scale: F = cst(1.0 / seq_len as f64);
    let mut out = Array2::zeros((b * seq_len, c));
    for (i, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
        row.assign(&d.row(i / seq_len));
        row *= scale;
    }
    out
}

/// Row indices of visible tokens for a stacked batch mask (`true` = masked),
/// and the per-sample visible count, which must be equal across samples.
pub fn visible_rows(mask: &[bool], tokens: usize) -> Result<(Vec<usize>, usize)> {
    if tokens == 0 || !mask.len().is_multiple_of(tokens) {
        return Err(Error::Shape(format!(
            "mask of {} entries is not a whole number of {tokens}-token samples",
            mask.len()
        )));
    }
    let rows: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter(|(_, &m)| !m)
        .map(|(i, _)| i)
        .collect();
    let batch = mask.len() / tokens;
    let per = rows.len() / batch.max(1);
    if per == 0 {
        return Err(Error::Config("every token is masked; the encoder has no input".into()));
    }
    for b in 0..batch {
        let n = mask[b * tokens..(b + 1) * tokens].iter().filter(|&&m| !m).count();
        if n != per {
            return Err(Error::Shape(format!(
                "sample {b} has {n} visible tokens, expected {per}"
            )));
        }
    }
    Ok((rows, per))
}

/// Visible tokens with their positions in the full token grid.
#[derive(Debug, Clone)]
pub struct TokenBatch<F> {
    pub tokens: Array2<F>,
    /// Row of each token in the full `B * T_e * V` grid.
    pub rows: Vec<usize>,
    pub per_sample: usize,
}

/// Keeps the unmasked rows of `embeddings`, in flattened order.
pub fn gather_visible<F: Scalar>(embeddings: ArrayView2<'_, F>, mask: &[bool], tokens: usize) -> Result<TokenBatch<F>> {
    if embeddings.nrows() != mask.len() {
        return Err(Error::Shape(format!(
            "{} embeddings vs {} mask entries",
            embeddings.nrows(),
            mask.len()
        )));
    }
    let (rows, per_sample) = visible_rows(mask, tokens)?;
    Ok(TokenBatch {
        tokens: embeddings.select(Axis(0), &rows),
        rows,
        per_sample,
    })
}

/// Inverse of [`gather_visible`]: writes tokens back at their rows, zero
/// elsewhere.
pub fn scatter_rows<F: Scalar>(tokens: ArrayView2<'_, F>, rows: &[usize], total: usize) -> Array2<F> {
    let mut out = Array2::zeros((total, tokens.ncols()));
    for (src, &r) in tokens.axis_iter(Axis(0)).zip(rows) {
        out.row_mut(r).assign(&src);
    }
    out
}

/// Lightweight decoder: fills masked slots with a shared token, adds its
/// own position embeddings and runs `L_d` blocks over the full grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<F> {
    pub mask_token: Array1<F>,
    pub pos_t: Array2<F>,
    pub pos_s: Array2<F>,
    pub blocks: Vec<Block<F>>,
    pub final_norm: Option<LayerNorm<F>>,
    pub norm: NormPlacement,
}

pub struct DecoderCache<F> {
    stack: StackCache<F>,
    rows: Vec<usize>,
}

impl<F: Scalar> Decoder<F> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Self {
        let c = cfg.dim;
        Self {
            mask_token: trunc_normal((1, c), 0.02, rng).row(0).to_owned(),
            pos_t: trunc_normal((cfg.segments, c), 0.02, rng),
            pos_s: trunc_normal((cfg.joints, c), 0.02, rng),
            blocks: (0..cfg.dec_layers)
                .map(|_| Block::init(c, cfg.heads, cfg.ffn_dim, rng))
                .collect(),
            final_norm: (cfg.norm == NormPlacement::Pre).then(|| LayerNorm::new(c)),
            norm: cfg.norm,
        }
    }

    pub fn tokens(&self) -> usize {
        self.pos_t.nrows() * self.pos_s.nrows()
    }

    /// Decoder input before any block: encoded tokens at `rows`, the mask
    /// token everywhere else, plus decoder position embeddings.
    pub fn assemble(&self, latents: ArrayView2<'_, F>, rows: &[usize], batch: usize) -> Result<Array2<F>> {
        let total = batch * self.tokens();
        let mut full = Array2::zeros((total, self.mask_token.len()));
        full += &self.mask_token;
        let mut seen = vec![false; total];
        for (src, &r) in latents.axis_iter(Axis(0)).zip(rows) {
            if r >= total || std::mem::replace(&mut seen[r], true) {
                return Err(Error::Shape(format!("visible token row {r} repeated or out of range")));
            }
            full.row_mut(r).assign(&src);
        }
        add_positions(&mut full, &self.pos_t, &self.pos_s);
        Ok(full)
    }

    pub fn forward(
        &self,
        latents: ArrayView2<'_, F>,
        rows: &[usize],
        batch: usize,
        pass: &mut Pass<'_>,
    ) -> Result<(Array2<F>, Option<DecoderCache<F>>)> {
        let full = self.assemble(latents, rows, batch)?;
        let (out, _, stack) =
            run_stack(&self.blocks, &self.final_norm, full, self.tokens(), self.norm, None, pass, "decoder")?;
        let cache = stack.map(|stack| DecoderCache {
            stack,
            rows: rows.to_vec(),
        });
        Ok((out, cache))
    }

    /// Returns the gradient with respect to the visible latents.
    pub fn backward(&self, cache: &DecoderCache<F>, dy: ArrayView2<'_, F>, grad: &mut Self) -> Array2<F> {
        let d_full = stack_backward(
            &self.blocks,
            &self.final_norm,
            &cache.stack,
            dy,
            self.norm,
            &mut grad.blocks,
            &mut grad.final_norm,
        );
        position_grads(d_full.view(), &mut grad.pos_t, &mut grad.pos_s);
        let mut visible = vec![false; d_full.nrows()];
        for &r in &cache.rows {
            visible[r] = true;
        }
        for (row, _) in d_full.axis_iter(Axis(0)).zip(&visible).filter(|(_, &v)| !v) {
            grad.mask_token += &row;
        }
        d_full.select(Axis(0), &cache.rows)
    }
}

impl<F: Scalar> Parameters<F> for Decoder<F> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a, F>>) {
        push(out, prefix, "mask_token", &self.mask_token);
        push(out, prefix, "pos_t", &self.pos_t);
        push(out, prefix, "pos_s", &self.pos_s);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&join(prefix, &format!("blocks.{i}")), out);
        }
        if let Some(n) = &self.final_norm {
            n.collect(&join(prefix, "final_norm"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, F>>) {
        push_mut(out, prefix, "mask_token", &mut self.mask_token);
        push_mut(out, prefix, "pos_t", &mut self.pos_t);
        push_mut(out, prefix, "pos_s", &mut self.pos_s);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.collect_mut(&join(prefix, &format!("blocks.{i}")), out);
        }
        if let Some(n) = &mut self.final_norm {
            n.collect_mut(&join(prefix, "final_norm"), out);
        }
    }
}

/// Student network: encoder over visible tokens, decoder over the full grid,
/// and a linear head regressing teacher targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton2Vec<F> {
    pub encoder: Encoder<F>,
    pub decoder: Decoder<F>,
    pub head: Linear<F>,
}

/// Student forward result, kept for the backward pass.
pub struct StudentPass<F> {
    /// `B * T_e * V x C_e` predictions for every token.
    pub predictions: Array2<F>,
    segments: Array2<F>,
    visible: TokenBatch<F>,
    encoder: Option<StackCache<F>>,
    decoder: Option<DecoderCache<F>>,
    decoded: Array2<F>,
}

impl<F: Scalar> Skeleton2Vec<F> {
    pub fn init<R: Rng + ?Sized>(cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            encoder: Encoder::init(cfg, rng),
            decoder: Decoder::init(cfg, rng),
            head: Linear::init(cfg.dim, cfg.dim, rng),
        })
    }

    /// Masked forward. `segments` stacks `B * T_e * V` token inputs and
    /// `mask` flags the masked ones.
    pub fn forward_student(&self, segments: ArrayView2<'_, F>, mask: &[bool], pass: &mut Pass<'_>) -> Result<StudentPass<F>> {
        let tokens = self.encoder.tokens();
        let emb = self.encoder.embed(segments)?;
        let visible = gather_visible(emb.view(), mask, tokens)?;
        let batch = mask.len() / tokens;
        let enc = self
            .encoder
            .forward_tokens(visible.tokens.clone(), visible.per_sample, None, pass)?;
        let (decoded, decoder) = self.decoder.forward(enc.out.view(), &visible.rows, batch, pass)?;
        let predictions = self.head.forward(decoded.view());
        Ok(StudentPass {
            predictions,
            segments: segments.to_owned(),
            visible,
            encoder: enc.cache,
            decoder,
            decoded,
        })
    }

    /// Gradients of a loss with `dL/dpredictions = d_pred`.
    pub fn backward_student(&self, pass: &StudentPass<F>, d_pred: ArrayView2<'_, F>) -> Result<Self> {
        let (Some(enc_cache), Some(dec_cache)) = (&pass.encoder, &pass.decoder) else {
            return Err(Error::Config("forward pass ran without keeping caches".into()));
        };
        let mut grad = self.zeros_like();
        let d_dec = self.head.backward(pass.decoded.view(), d_pred, &mut grad.head);
        let d_lat = self.decoder.backward(dec_cache, d_dec.view(), &mut grad.decoder);
        let d_tok = self.encoder.backward_tokens(enc_cache, d_lat.view(), &mut grad.encoder);
        let d_emb = scatter_rows(d_tok.view(), &pass.visible.rows, pass.segments.nrows());
        self.encoder
            .embed_backward(pass.segments.view(), d_emb.view(), &mut grad.encoder);
        Ok(grad)
    }
}

impl<F: Scalar> Parameters<F> for Skeleton2Vec<F> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a, F>>) {
        self.encoder.collect(&join(prefix, "encoder"), out);
        self.decoder.collect(&join(prefix, "decoder"), out);
        self.head.collect(&join(prefix, "head"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, F>>) {
        self.encoder.collect_mut(&join(prefix, "encoder"), out);
        self.decoder.collect_mut(&join(prefix, "decoder"), out);
        self.head.collect_mut(&join(prefix, "head"), out);
    }
}

/// Classification head over mean-pooled tokens: LN, optional GELU hidden
/// layers, then a linear map to class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierHead<F> {
    pub norm: LayerNorm<F>,
    pub hidden: Vec<Linear<F>>,
    pub out: Linear<F>,
}

pub struct HeadCache<F> {
    norm: NormCache<F>,
    inputs: Vec<Array2<F>>,
    pre_acts: Vec<Array2<F>>,
}

impl<F: Scalar> ClassifierHead<F> {
    pub fn init<R: Rng + ?Sized>(dim: usize, classes: usize, hidden_layers: usize, rng: &mut R) -> Self {
        Self {
            norm: LayerNorm::new(dim),
            hidden: (0..hidden_layers).map(|_| Linear::init(dim, dim, rng)).collect(),
            out: Linear::init(dim, classes, rng),
        }
    }

    pub fn classes(&self) -> usize {
        self.out.outputs()
    }

    pub fn forward(&self, pooled: ArrayView2<'_, F>) -> (Array2<F>, HeadCache<F>) {
        let (mut x, norm) = self.norm.forward(pooled);
        let mut inputs = Vec::with_capacity(self.hidden.len() + 1);
        let mut pre_acts = Vec::with_capacity(self.hidden.len());
        for layer in &self.hidden {
            let pre = layer.forward(x.view());
            inputs.push(x);
            x = super::layers::gelu(&pre);
            pre_acts.push(pre);
        }
        let logits = self.out.forward(x.view());
        inputs.push(x);
        (logits, HeadCache { norm, inputs, pre_acts })
    }

    pub fn backward(&self, cache: &HeadCache<F>, d_logits: ArrayView2<'_, F>, grad: &mut Self) -> Array2<F> {
        let n = self.hidden.len();
        let mut d = self.out.backward(cache.inputs[n].view(), d_logits, &mut grad.out);
        for i in (0..n).rev() {
            let dpre = super::layers::gelu_backward(&cache.pre_acts[i], d.view());
            d = self.hidden[i].backward(cache.inputs[i].view(), dpre.view(), &mut grad.hidden[i]);
        }
        self.norm.backward(&cache.norm, d.view(), &mut grad.norm)
    }
}

impl<F: Scalar> Parameters<F> for ClassifierHead<F> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a, F>>) {
        self.norm.collect(&join(prefix, "norm"), out);
        for (i, l) in self.hidden.iter().enumerate() {
            l.collect(&join(prefix, &format!("hidden.{i}")), out);
        }
        self.out.collect(&join(prefix, "out"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, F>>) {
        self.norm.collect_mut(&join(prefix, "norm"), out);
        for (i, l) in self.hidden.iter_mut().enumerate() {
            l.collect_mut(&join(prefix, &format!("hidden.{i}")), out);
        }
        self.out.collect_mut(&join(prefix, "out"), out);
    }
}

/// Encoder plus classification head, trained end to end for fine-tuning.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier<F> {
    pub encoder: Encoder<F>,
    pub head: ClassifierHead<F>,
}

pub struct ClassifierPass<F> {
    pub logits: Array2<F>,
    segments: Array2<F>,
    encoder: Option<StackCache<F>>,
    head: HeadCache<F>,
}

impl<F: Scalar> Classifier<F> {
    pub fn forward(&self, segments: ArrayView2<'_, F>, pass: &mut Pass<'_>) -> Result<ClassifierPass<F>> {
        let out = self.encoder.encode_full(segments, None, pass)?;
        let pooled = mean_pool(out.out.view(), self.encoder.tokens());
        let (logits, head) = self.head.forward(pooled.view());
        Ok(ClassifierPass {
            logits,
            segments: segments.to_owned(),
            encoder: out.cache,
            head,
        })
    }

    pub fn backward(&self, pass: &ClassifierPass<F>, d_logits: ArrayView2<'_, F>) -> Result<Self> {
        let Some(enc_cache) = &pass.encoder else {
            return Err(Error::Config("forward pass ran without keeping caches".into()));
        };
        let mut grad = self.zeros_like();
        let d_pooled = self.head.backward(&pass.head, d_logits, &mut grad.head);
        let d_tokens = mean_pool_backward(d_pooled.view(), self.encoder.tokens());
        let d_emb = self
            .encoder
            .backward_tokens(enc_cache, d_tokens.view(), &mut grad.encoder);
        self.encoder
            .embed_backward(pass.segments.view(), d_emb.view(), &mut grad.encoder);
        Ok(grad)
    }
}

impl<F: Scalar> Parameters<F> for Classifier<F> {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<Tensor<'a, F>>) {
        self.encoder.collect(&join(prefix, "encoder"), out);
        self.head.collect(&join(prefix, "head"), out);
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<TensorMut<'a, F>>) {
        self.encoder.collect_mut(&join(prefix, "encoder"), out);
        self.head.collect_mut(&join(prefix, "head"), out);
    }
}

/// Reshapes `B x T_e x V x (l*C)` segments into stacked token rows.
pub fn stack_segments<F: Scalar>(batch: &[ndarray::Array<F, Ix3>]) -> Array2<F> {
    let Some(first) = batch.first() else {
        return Array2::zeros((0, 0));
    };
    let (te, v, k) = first.dim();
    let mut out = Array2::zeros((batch.len() * te * v, k));
    for (b, seg) in batch.iter().enumerate() {
        let flat = seg
            .view()
            .into_shape_with_order((te * v, k))
            .expect("contiguous segments");
        out.slice_mut(ndarray::s![b * te * v..(b + 1) * te * v, ..])
            .assign(&flat);
    }
    out
}

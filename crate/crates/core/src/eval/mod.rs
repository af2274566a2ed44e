//! Downstream protocols on a pretrained teacher encoder: linear probe,
//! fine-tuning, semi-supervised fine-tuning and transfer, plus multi-crop
//! inference, reports and the ablation runner.

mod ablation;
mod finetune;
mod probe;
mod report;

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{segment, uniform_sample, Dataset, SampleMode, SkeletonSequence, Split};
use crate::error::{Error, Result};
use crate::nn::{softmax_rows, stack_segments, Classifier, Encoder, Pass};

pub use ablation::{parse_grid, run_ablation, AblationAxis, AblationCell, AblationTable};
pub use finetune::{
    finetune_eval, semi_supervised_eval, stratified_subset, transfer_eval, transfer_encoder, FinetuneConfig,
    SemiConfig,
};
pub use probe::{extract_features, linear_probe, train_linear, LinearProbe, LinearProbeConfig, Standardizer};
pub use report::{accuracy_summary, EvalReport, Protocol};

/// Anything that maps stacked token inputs to class logits.
pub trait Scorer {
    /// `segments` stacks `B * T_e * V` token rows; returns `B x classes`.
    fn logits(&self, segments: ArrayView2<'_, f32>) -> Result<Array2<f32>>;
    fn frames(&self) -> usize;
    fn segment_len(&self) -> usize;
}

impl Scorer for Classifier<f32> {
    fn logits(&self, segments: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        Ok(self.forward(segments, &mut Pass::inference())?.logits)
    }

    fn frames(&self) -> usize {
        self.encoder.pos_t.nrows() * self.segment_len()
    }

    fn segment_len(&self) -> usize {
        self.encoder.embed.inputs() / crate::data::CHANNELS
    }
}

/// Labelled sequences of one split.
#[derive(Debug, Clone)]
pub struct LabelledSplit {
    pub sequences: Vec<SkeletonSequence>,
    pub labels: Vec<usize>,
}

impl LabelledSplit {
    pub fn from_dataset(dataset: &Dataset, split: Split) -> Result<Self> {
        let mut sequences = Vec::new();
        let mut labels = Vec::new();
        for i in dataset.split_indices(split) {
            let seq = &dataset.sequences[i];
            let label = seq.label.ok_or_else(|| {
                Error::Config(format!(
                    "sequence {:?} has no label",
                    dataset.manifest.records[i].id
                ))
            })?;
            sequences.push(seq.clone());
            labels.push(label);
        }
        if sequences.is_empty() {
            return Err(Error::Config(format!("dataset has no {split:?} sequences")));
        }
        Ok(Self { sequences, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            sequences: indices.iter().map(|&i| self.sequences[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Resamples to `frames` frames and splits into `T_e x V x (l * C)` tokens.
pub fn sequence_tokens<R: Rng + ?Sized>(
    seq: &SkeletonSequence,
    frames: usize,
    segment_len: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Array3<f32>> {
    let s = uniform_sample(seq, frames, mode, rng);
    Ok(segment(s.frames.view(), segment_len)?.segments)
}

/// Mean of the post-softmax scores of `crops` train-mode resamplings.
pub fn ten_crop_predict<S: Scorer + ?Sized, R: Rng + ?Sized>(
    scorer: &S,
    seq: &SkeletonSequence,
    crops: usize,
    rng: &mut R,
) -> Result<Array1<f64>> {
    if crops == 0 {
        return Err(Error::Config("need at least one crop".into()));
    }
    let tokens = (0..crops)
        .map(|_| sequence_tokens(seq, scorer.frames(), scorer.segment_len(), SampleMode::Train, rng))
        .collect::<Result<Vec<_>>>()?;
    let logits = scorer.logits(stack_segments(&tokens).view())?;
    let probs = softmax_rows(logits.mapv(f64::from).view());
    Ok(probs.mean_axis(ndarray::Axis(0)).expect("at least one crop"))
}

pub(crate) const EVAL_STREAM: u64 = 9;

/// The fixed generator used for evaluation crops.
pub fn eval_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EVAL_STREAM);
    rng
}

/// Multi-crop class predictions for a whole split.
pub fn predict_split<S: Scorer + ?Sized>(scorer: &S, split: &LabelledSplit, crops: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = eval_rng(seed);
    split
        .sequences
        .iter()
        .map(|s| {
            let p = ten_crop_predict(scorer, s, crops, &mut rng)?;
            Ok(argmax(p.view()))
        })
        .collect()
}

pub(crate) fn argmax(p: ndarray::ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > p[best] {
            best = i;
        }
    }
    best
}

/// Encoder-only forward helper that batches sequences for feature
/// extraction.
pub(crate) fn encoder_tokens(encoder: &Encoder<f32>) -> (usize, usize) {
    let l = encoder.embed.inputs() / crate::data::CHANNELS;
    (encoder.pos_t.nrows() * l, l)
}

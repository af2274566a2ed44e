use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::report::{mean_per_class, score, EvalReport, Protocol};
use super::{encoder_tokens, eval_rng, predict_split, sequence_tokens, LabelledSplit, Scorer};
use crate::data::{Dataset, SampleMode, Split};
use crate::error::{Error, Result};
use crate::nn::{param_hash, softmax_cross_entropy, stack_segments, Encoder, Linear, Parameters};
use crate::optim::{lr_schedule, Sgd};

const FEATURE_BATCH: usize = 64;
const SHUFFLE_STREAM: u64 = 10;
const STANDARDIZE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Resampled crops averaged at test time.
    pub crops: usize,
    pub seed: u64,
}

impl Default for LinearProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            batch_size: 256,
            crops: 10,
            seed: 0,
        }
    }
}

/// Frozen encoder followed by a trained linear classifier on mean-pooled
/// features, standardized with statistics of the training features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub encoder: Encoder<f32>,
    pub standardizer: Standardizer,
    pub linear: Linear<f64>,
}

/// Fixed per-feature affine map to zero mean and unit variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub inv_std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(features: ArrayView2<'_, f64>) -> Self {
        let mean = features.mean_axis(Axis(0)).expect("at least one feature row");
        let inv_std = features.std_axis(Axis(0), 0.0).mapv(|s| 1.0 / (s * s + STANDARDIZE_EPS).sqrt());
        Self { mean, inv_std }
    }

    pub fn apply(&self, features: ArrayView2<'_, f64>) -> Array2<f64> {
        (&features - &self.mean) * &self.inv_std
    }
}

impl Scorer for LinearProbe {
    fn logits(&self, segments: ArrayView2<'_, f32>) -> Result<Array2<f32>> {
        let f = self.encoder.features(segments)?.mapv(f64::from);
        let z = self.standardizer.apply(f.view());
        Ok(self.linear.forward(z.view()).mapv(|x| x as f32))
    }

    fn frames(&self) -> usize {
        encoder_tokens(&self.encoder).0
    }

    fn segment_len(&self) -> usize {
        encoder_tokens(&self.encoder).1
    }
}

/// Mean-pooled encoder features (`N x C_e`) of single test-mode crops.
pub fn extract_features(encoder: &Encoder<f32>, split: &LabelledSplit) -> Result<Array2<f64>> {
    let (frames, l) = encoder_tokens(encoder);
    let mut rng = eval_rng(0);
    let mut out = Array2::zeros((split.len(), encoder.pos_t.ncols()));
    for (chunk_idx, chunk) in split.sequences.chunks(FEATURE_BATCH).enumerate() {
        let tokens = chunk
            .iter()
            .map(|s| sequence_tokens(s, frames, l, SampleMode::Test, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let f = encoder.features(stack_segments(&tokens).view())?;
        let start = chunk_idx * FEATURE_BATCH;
        out.slice_mut(ndarray::s![start..start + chunk.len(), ..])
            .assign(&f.mapv(f64::from));
    }
    Ok(out)
}

/// Softmax regression with momentum SGD and a cosine-to-zero schedule.
pub fn train_linear(features: ArrayView2<'_, f64>, labels: &[usize], classes: usize, cfg: &LinearProbeConfig) -> Result<Linear<f64>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = eval_rng(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let mut linear = Linear::<f64>::zeros(features.ncols(), classes);
    let mut opt = Sgd::new(&linear, cfg.momentum, cfg.weight_decay);
    let steps_per_epoch = labels.len().div_ceil(cfg.batch_size) as u64;
    let total = steps_per_epoch * cfg.epochs as u64;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let x = features.select(Axis(0), chunk);
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let logits = linear.forward(x.view());
            let (_, d) = softmax_cross_entropy(logits.view(), &y);
            let mut grad = linear.zeros_like();
            linear.backward_params(x.view(), d.view(), &mut grad);
            opt.step(&mut linear, &grad, lr_schedule(step, total, 0, cfg.lr, 0.0))?;
            step += 1;
        }
    }
    Ok(linear)
}

pub(crate) fn check_compatible(encoder: &Encoder<f32>, dataset: &Dataset) -> Result<()> {
    if encoder.pos_s.nrows() != dataset.num_joints() {
        return Err(Error::Shape(format!(
            "encoder expects {} joints, dataset has {}",
            encoder.pos_s.nrows(),
            dataset.num_joints()
        )));
    }
    Ok(())
}

pub(crate) fn check_labels(split: &LabelledSplit, classes: usize) -> Result<()> {
    match split.labels.iter().find(|&&y| y >= classes) {
        Some(y) => Err(Error::Config(format!("label {y} outside {classes} classes"))),
        None => Ok(()),
    }
}

/// Trains a linear classifier on frozen `encoder` features and evaluates it
/// with multi-crop inference on the test split.
pub fn linear_probe(encoder: &Encoder<f32>, dataset: &Dataset, cfg: &LinearProbeConfig) -> Result<(EvalReport, LinearProbe)> {
    check_compatible(encoder, dataset)?;
    let classes = dataset.num_classes();
    let train = LabelledSplit::from_dataset(dataset, Split::Train)?;
    let test = LabelledSplit::from_dataset(dataset, Split::Test)?;
    check_labels(&train, classes)?;
    check_labels(&test, classes)?;
    let before = param_hash(encoder);

    let features = extract_features(encoder, &train)?;
    let standardizer = Standardizer::fit(features.view());
    let z = standardizer.apply(features.view());
    let linear = train_linear(z.view(), &train.labels, classes, cfg)?;
    let probe = LinearProbe {
        encoder: encoder.clone(),
        standardizer,
        linear,
    };
    let pred = predict_split(&probe, &test, cfg.crops, cfg.seed)?;
    let (acc, per_class) = score(&pred, &test.labels, classes);

    let after = param_hash(&probe.encoder);
    if after != before || param_hash(encoder) != before {
        return Err(Error::Config("encoder changed during a frozen probe".into()));
    }
    let report = EvalReport {
        protocol: Protocol::Linear,
        dataset: dataset.manifest.name.clone(),
        accuracy_mean: acc,
        accuracy_std: None,
        run_accuracies: vec![acc],
        per_class: mean_per_class(&[per_class]),
        checkpoint_hash: before,
        encoder_hash_after: after,
        config: serde_json::to_value(cfg)?,
        notes: vec!["features: mean over all encoder output tokens, standardized with training-split statistics".into()],
    };
    Ok((report, probe))
}

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::probe::{check_compatible, check_labels};
use super::report::{accuracy_summary, mean_per_class, score, EvalReport, Protocol};
use super::{encoder_tokens, predict_split, LabelledSplit};
use crate::data::{random_rotation, segment, uniform_sample, Dataset, SampleMode, Split};
use crate::error::{Error, Result};
use crate::nn::{param_hash, softmax_cross_entropy, stack_segments, Classifier, ClassifierHead, Encoder, Pass};
use crate::optim::{lr_schedule, AdamW};

const HEAD_STREAM: u64 = 11;
const TRAIN_STREAM: u64 = 12;
const SUBSET_STREAM: u64 = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub batch_size: usize,
    /// GELU hidden layers between the pooled-feature norm and the output.
    pub hidden_layers: usize,
    pub dropout: f64,
    /// Maximum rotation angle per axis for augmentation, radians.
    pub rotation: f64,
    pub crops: usize,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            warmup_epochs: 5,
            peak_lr: 3e-4,
            final_lr: 1e-5,
            weight_decay: 0.05,
            betas: [0.9, 0.999],
            batch_size: 48,
            hidden_layers: 0,
            dropout: 0.0,
            rotation: 0.3,
            crops: 10,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemiConfig {
    /// Fraction of each class's training labels kept.
    pub fraction: f64,
    pub runs: usize,
    pub finetune: FinetuneConfig,
}

impl Default for SemiConfig {
    fn default() -> Self {
        Self {
            fraction: 0.01,
            runs: 5,
            finetune: FinetuneConfig::default(),
        }
    }
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fine-tunes `encoder` with a fresh head on `train`; returns the model.
pub fn train_classifier(encoder: &Encoder<f32>, train: &LabelledSplit, classes: usize, cfg: &FinetuneConfig) -> Result<Classifier<f32>> {
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut model = Classifier {
        encoder: encoder.clone(),
        head: ClassifierHead::init(encoder.pos_t.ncols(), classes, cfg.hidden_layers, &mut seeded(cfg.seed, HEAD_STREAM)),
    };
    let (frames, l) = encoder_tokens(encoder);
    let mut opt = AdamW::new(&model, (cfg.betas[0], cfg.betas[1]), cfg.weight_decay);
    let mut rng = seeded(cfg.seed, TRAIN_STREAM);
    let steps_per_epoch = train.len().div_ceil(cfg.batch_size) as u64;
    let total = steps_per_epoch * cfg.epochs as u64;
    let warmup = steps_per_epoch * cfg.warmup_epochs as u64;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let mut tokens = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let s = uniform_sample(&train.sequences[i], frames, SampleMode::Train, &mut rng);
                let s = random_rotation(&s, cfg.rotation, &mut rng);
                tokens.push(segment(s.frames.view(), l)?.segments);
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let x = stack_segments(&tokens);
            let mut pass = Pass {
                keep: true,
                dropout: cfg.dropout,
                rng: Some(&mut rng),
            };
            let out = model.forward(x.view(), &mut pass)?;
            let (loss, d) = softmax_cross_entropy(out.logits.view(), &labels);
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("fine-tuning loss {loss} at step {step}")));
            }
            let grads = model.backward(&out, d.view())?;
            step += 1;
            opt.step(&mut model, &grads, lr_schedule(step, total, warmup, cfg.peak_lr, cfg.final_lr))?;
        }
    }
    Ok(model)
}

struct RunResult {
    accuracy: f64,
    per_class: Vec<Option<f64>>,
    model: Classifier<f32>,
}

fn finetune_run(encoder: &Encoder<f32>, train: &LabelledSplit, test: &LabelledSplit, classes: usize, cfg: &FinetuneConfig) -> Result<RunResult> {
    let model = train_classifier(encoder, train, classes, cfg)?;
    let pred = predict_split(&model, test, cfg.crops, cfg.seed)?;
    let (accuracy, per_class) = score(&pred, &test.labels, classes);
    Ok(RunResult {
        accuracy,
        per_class,
        model,
    })
}

fn labelled_splits(dataset: &Dataset) -> Result<(LabelledSplit, LabelledSplit)> {
    let train = LabelledSplit::from_dataset(dataset, Split::Train)?;
    let test = LabelledSplit::from_dataset(dataset, Split::Test)?;
    check_labels(&train, dataset.num_classes())?;
    check_labels(&test, dataset.num_classes())?;
    Ok((train, test))
}

/// End-to-end fine-tuning of `encoder` plus a new head.
pub fn finetune_eval(encoder: &Encoder<f32>, dataset: &Dataset, cfg: &FinetuneConfig) -> Result<(EvalReport, Classifier<f32>)> {
    finetune_protocol(encoder, dataset, cfg, Protocol::Finetune, Vec::new())
}

fn finetune_protocol(
    encoder: &Encoder<f32>,
    dataset: &Dataset,
    cfg: &FinetuneConfig,
    protocol: Protocol,
    notes: Vec<String>,
) -> Result<(EvalReport, Classifier<f32>)> {
    check_compatible(encoder, dataset)?;
    let (train, test) = labelled_splits(dataset)?;
    let run = finetune_run(encoder, &train, &test, dataset.num_classes(), cfg)?;
    let report = EvalReport {
        protocol,
        dataset: dataset.manifest.name.clone(),
        accuracy_mean: run.accuracy,
        accuracy_std: None,
        run_accuracies: vec![run.accuracy],
        per_class: run.per_class,
        checkpoint_hash: param_hash(encoder),
        encoder_hash_after: param_hash(&run.model.encoder),
        config: serde_json::to_value(cfg)?,
        notes,
    };
    Ok((report, run.model))
}

/// Indices keeping `round(fraction * n_c)` examples of every class, in
/// their original order.
pub fn stratified_subset(labels: &[usize], classes: usize, fraction: f64, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("label fraction {fraction} not in (0, 1]")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, &y) in labels.iter().enumerate() {
        by_class[y].push(i);
    }
    let mut empty = Vec::new();
    let mut keep = Vec::new();
    for (c, members) in by_class.iter_mut().enumerate() {
        let n = (fraction * members.len() as f64).round() as usize;
        if n == 0 {
            empty.push(c);
            continue;
        }
        members.shuffle(rng);
        keep.extend_from_slice(&members[..n]);
    }
    if !empty.is_empty() {
        return Err(Error::Stratification(empty));
    }
    keep.sort_unstable();
    Ok(keep)
}

/// Fine-tuning on class-stratified label subsets, averaged over runs.
pub fn semi_supervised_eval(encoder: &Encoder<f32>, dataset: &Dataset, cfg: &SemiConfig) -> Result<EvalReport> {
    check_compatible(encoder, dataset)?;
    if cfg.runs == 0 {
        return Err(Error::Config("need at least one run".into()));
    }
    let classes = dataset.num_classes();
    let (train, test) = labelled_splits(dataset)?;
    let mut accuracies = Vec::new();
    let mut per_class = Vec::new();
    let mut last_hash = String::new();
    let mut subset_sizes = Vec::new();
    for r in 0..cfg.runs {
        let seed = cfg.finetune.seed + r as u64;
        let subset = stratified_subset(&train.labels, classes, cfg.fraction, &mut seeded(seed, SUBSET_STREAM))?;
        subset_sizes.push(subset.len());
        let run_cfg = FinetuneConfig {
            seed,
            ..cfg.finetune.clone()
        };
        let run = finetune_run(encoder, &train.subset(&subset), &test, classes, &run_cfg)?;
        accuracies.push(run.accuracy);
        per_class.push(run.per_class);
        last_hash = param_hash(&run.model.encoder);
    }
    let (mean, std) = accuracy_summary(&accuracies);
    Ok(EvalReport {
        protocol: Protocol::Semi,
        dataset: dataset.manifest.name.clone(),
        accuracy_mean: mean,
        accuracy_std: std,
        run_accuracies: accuracies,
        per_class: mean_per_class(&per_class),
        checkpoint_hash: param_hash(encoder),
        encoder_hash_after: last_hash,
        config: serde_json::to_value(cfg)?,
        notes: vec![format!(
            "label subsets are class-stratified; sizes per run {subset_sizes:?}"
        )],
    })
}

/// Adapts a source encoder to a target skeleton. Joint counts must match
/// unless `joint_map[v]` names the source joint whose spatial embedding
/// target joint `v` takes over.
pub fn transfer_encoder(encoder: &Encoder<f32>, target_joints: usize, joint_map: Option<&[usize]>) -> Result<Encoder<f32>> {
    let source = encoder.pos_s.nrows();
    let Some(map) = joint_map else {
        if source == target_joints {
            return Ok(encoder.clone());
        }
        return Err(Error::Config(format!(
            "source has {source} joints, target {target_joints}; a joint map is required"
        )));
    };
    if map.len() != target_joints {
        return Err(Error::Config(format!(
            "joint map has {} entries for {target_joints} target joints",
            map.len()
        )));
    }
    if let Some(&bad) = map.iter().find(|&&j| j >= source) {
        return Err(Error::Config(format!("joint map refers to source joint {bad} of {source}")));
    }
    let mut out = encoder.clone();
    out.pos_s = Array2::from_shape_fn((target_joints, encoder.pos_s.ncols()), |(v, c)| encoder.pos_s[[map[v], c]]);
    Ok(out)
}

/// Fine-tunes a source-pretrained encoder on the target dataset.
pub fn transfer_eval(
    encoder: &Encoder<f32>,
    target: &Dataset,
    joint_map: Option<&[usize]>,
    cfg: &FinetuneConfig,
) -> Result<(EvalReport, Classifier<f32>)> {
    let adapted = transfer_encoder(encoder, target.num_joints(), joint_map)?;
    let mut notes = Vec::new();
    if let Some(map) = joint_map {
        notes.push(format!("joint map {map:?}"));
    }
    let (mut report, model) = finetune_protocol(&adapted, target, cfg, Protocol::Transfer, notes)?;
    report.checkpoint_hash = param_hash(encoder);
    Ok((report, model))
}

//! Masked-prediction pretraining with an EMA teacher.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_checkpoint, Checkpoint};
use crate::data::{compute_motion, random_rotation, segment, uniform_sample, Dataset, SampleMode, SkeletonSequence, Split};
use crate::distill::{collapse_stats, ema_update, masked_l2_grad, tau_schedule, teacher_targets, CollapseStats, TargetBundle};
use crate::error::{Error, Result};
use crate::masking::{mask_from_intensity, segment_motion_intensity, MaskStats, MaskStatsAccumulator, MaskStrategy};
use crate::nn::{stack_segments, Encoder, LayerTap, ModelConfig, NormPlacement, Parameters, Pass, Skeleton2Vec};
use crate::optim::{clip_grad_norm, lr_schedule, AdamW};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const FINAL_CHECKPOINT: &str = "checkpoint";
pub const CHECKPOINT_DIR: &str = "checkpoints";
const HISTORY_LEN: usize = 256;

/// Transformer sizes; joint and segment counts come from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Architecture {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub dropout: f64,
    pub norm: NormPlacement,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            enc_layers: 8,
            dec_layers: 3,
            dim: 256,
            heads: 8,
            ffn_dim: 1024,
            dropout: 0.0,
            norm: NormPlacement::Post,
        }
    }
}

impl Architecture {
    /// Four 64-wide encoder layers; small enough for CPU experiments.
    pub fn toy() -> Self {
        Self {
            enc_layers: 4,
            dec_layers: 1,
            dim: 64,
            heads: 4,
            ffn_dim: 128,
            dropout: 0.0,
            norm: NormPlacement::Post,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    /// Frames per resampled sequence, `T_s`.
    pub frames: usize,
    /// Frames per segment, `l`.
    pub segment_len: usize,
    /// Tube length `alpha` in segments.
    pub tube_length: usize,
    pub beta: f64,
    pub mask_ratio: f64,
    pub mask_strategy: MaskStrategy,
    pub tau0: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub peak_lr: f64,
    pub final_lr: f64,
    pub weight_decay: f64,
    pub betas: [f64; 2],
    pub batch_size: usize,
    pub seed: u64,
    /// Steps between metric records; the last step of every epoch is
    /// always recorded.
    pub log_interval: usize,
    /// Epochs between periodic checkpoints; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub grad_clip: Option<f64>,
    /// Maximum rotation angle per axis for augmentation, radians.
    pub rotation: f64,
    pub target_tap: LayerTap,
    pub model: Architecture,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            frames: 90,
            segment_len: 3,
            tube_length: 5,
            beta: 0.1,
            mask_ratio: 0.9,
            mask_strategy: MaskStrategy::MotionAware,
            tau0: 0.9999,
            epochs: 600,
            warmup_epochs: 20,
            peak_lr: 1e-3,
            final_lr: 1e-5,
            weight_decay: 0.05,
            betas: [0.9, 0.95],
            batch_size: 128,
            seed: 0,
            log_interval: 10,
            checkpoint_every: 50,
            grad_clip: None,
            rotation: 0.3,
            target_tap: LayerTap::BlockOutput,
            model: Architecture::default(),
        }
    }
}

impl PretrainConfig {
    /// The small synthetic-data setting: 30 frames, 4x64 encoder, 50 epochs.
    pub fn toy() -> Self {
        Self {
            frames: 30,
            epochs: 50,
            warmup_epochs: 5,
            tau0: 0.996,
            batch_size: 32,
            log_interval: 5,
            model: Architecture::toy(),
            ..Self::default()
        }
    }

    pub fn segments(&self) -> usize {
        self.frames / self.segment_len.max(1)
    }

    pub fn model_config(&self, joints: usize) -> ModelConfig {
        ModelConfig {
            enc_layers: self.model.enc_layers,
            dec_layers: self.model.dec_layers,
            dim: self.model.dim,
            heads: self.model.heads,
            ffn_dim: self.model.ffn_dim,
            segment_len: self.segment_len,
            joints,
            segments: self.segments(),
            channels: crate::data::CHANNELS,
            dropout: self.model.dropout,
            norm: self.model.norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.segment_len == 0 || self.frames == 0 || !self.frames.is_multiple_of(self.segment_len) {
            return bad(format!(
                "frames {} must be a positive multiple of segment_len {}",
                self.frames, self.segment_len
            ));
        }
        if self.tube_length == 0 {
            return bad("tube_length must be at least 1".into());
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!("mask_ratio {} not in (0, 1)", self.mask_ratio));
        }
        if self.beta < 0.0 || !self.beta.is_finite() {
            return bad(format!("beta {} must be finite and non-negative", self.beta));
        }
        if !(0.0..=1.0).contains(&self.tau0) {
            return bad(format!("tau0 {} not in [0, 1]", self.tau0));
        }
        if self.batch_size == 0 || self.log_interval == 0 {
            return bad("batch_size and log_interval must be positive".into());
        }
        if !(self.peak_lr >= 0.0 && self.final_lr >= 0.0 && self.weight_decay >= 0.0) {
            return bad("learning rates and weight decay must be non-negative".into());
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad(format!("grad_clip {c} must be positive"));
            }
        }
        Ok(())
    }
}

/// Independent random streams so that changing one consumer does not shift
/// the others.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngStreams {
    /// Epoch shuffles.
    pub data: ChaCha8Rng,
    /// Frame sampling and rotations.
    pub augment: ChaCha8Rng,
    pub mask: ChaCha8Rng,
    pub dropout: ChaCha8Rng,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl RngStreams {
    /// Stream 0 of `seed` is reserved for parameter initialization.
    pub fn new(seed: u64) -> Self {
        Self {
            data: stream(seed, 1),
            augment: stream(seed, 2),
            mask: stream(seed, 3),
            dropout: stream(seed, 4),
        }
    }
}

pub fn init_rng(seed: u64) -> ChaCha8Rng {
    stream(seed, 0)
}

/// One JSON line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: usize,
    /// Mean loss over the steps since the previous record.
    pub loss: f64,
    pub lr: f64,
    pub tau: f64,
    pub per_channel_std_mean: f64,
    pub per_token_std_mean: f64,
    pub collapse_alarm: bool,
}

/// Flags collapse once the per-channel spread of the targets stays below
/// `threshold` for `patience` consecutive records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseMonitor {
    pub threshold: f64,
    pub patience: usize,
    pub consecutive: usize,
}

impl Default for CollapseMonitor {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            patience: 10,
            consecutive: 0,
        }
    }
}

impl CollapseMonitor {
    /// Feeds one record's statistics; returns whether the alarm is raised.
    pub fn observe(&mut self, stats: &CollapseStats) -> bool {
        if stats.per_channel_std_mean < self.threshold {
            self.consecutive += 1;
        } else {
            self.consecutive = 0;
        }
        self.alarm()
    }

    pub fn alarm(&self) -> bool {
        self.consecutive >= self.patience
    }
}

/// Everything besides parameters and optimizer moments needed to resume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub rng: RngStreams,
    /// Mean training loss of each completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Most recent metric records.
    pub history: VecDeque<MetricRecord>,
    pub collapse: CollapseMonitor,
    interval_loss: f64,
    interval_steps: u64,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        Self {
            step: 0,
            epoch: 0,
            rng: RngStreams::new(seed),
            epoch_losses: Vec::new(),
            history: VecDeque::new(),
            collapse: CollapseMonitor::default(),
            interval_loss: 0.0,
            interval_steps: 0,
        }
    }
}

/// Network inputs for one step.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    /// `B * T_e * V x (l * C)` token inputs.
    pub segments: Array2<f32>,
    /// Row-aligned with `segments`; `true` marks a masked token.
    pub mask: Vec<bool>,
    pub size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub loss: f64,
    pub lr: f64,
    pub tau: f64,
    pub collapse: CollapseStats,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    config: PretrainConfig,
    state: TrainState,
    steps_per_epoch: u64,
    pool_size: usize,
}

/// Owns the student, teacher, optimizer and the pretraining pool.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: PretrainConfig,
    pub model: ModelConfig,
    pub student: Skeleton2Vec<f32>,
    pub teacher: Encoder<f32>,
    pub optimizer: AdamW<f32>,
    pub state: TrainState,
    pool: Vec<SkeletonSequence>,
}

impl Trainer {
    /// Fresh run on the training split of `dataset`.
    pub fn new(config: PretrainConfig, dataset: &Dataset) -> Result<Self> {
        Self::from_sequences(config, pretraining_pool(dataset))
    }

    pub fn from_sequences(config: PretrainConfig, pool: Vec<SkeletonSequence>) -> Result<Self> {
        config.validate()?;
        let joints = check_pool(&pool)?;
        let model = config.model_config(joints);
        let student = Skeleton2Vec::init(&model, &mut init_rng(config.seed))?;
        let teacher = student.encoder.clone();
        let optimizer = AdamW::new(&student, (config.betas[0], config.betas[1]), config.weight_decay);
        Ok(Self {
            state: TrainState::new(config.seed),
            config,
            model,
            student,
            teacher,
            optimizer,
            pool,
        })
    }

    /// Continues the run stored in `checkpoint`.
    pub fn resume(checkpoint: Checkpoint, dataset: &Dataset) -> Result<Self> {
        let pool = pretraining_pool(dataset);
        let meta: Metadata = serde_json::from_value(checkpoint.metadata)
            .map_err(|e| Error::Config(format!("checkpoint lacks training state: {e}")))?;
        let joints = check_pool(&pool)?;
        if meta.config.model_config(joints) != checkpoint.model {
            return Err(Error::Config("checkpoint model does not match its config and this dataset".into()));
        }
        if meta.pool_size != pool.len() {
            return Err(Error::Config(format!(
                "checkpoint was trained on {} sequences, dataset provides {}",
                meta.pool_size,
                pool.len()
            )));
        }
        let optimizer = checkpoint
            .optimizer
            .ok_or_else(|| Error::Config("checkpoint has no optimizer state".into()))?;
        Ok(Self {
            config: meta.config,
            model: checkpoint.model,
            student: checkpoint.student,
            teacher: checkpoint.teacher,
            optimizer,
            state: meta.state,
            pool,
        })
    }

    pub fn pool_size(&self) -> usize {
        self.pool.len()
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.pool.len().div_ceil(self.config.batch_size) as u64
    }

    pub fn total_steps(&self) -> u64 {
        self.steps_per_epoch() * self.config.epochs as u64
    }

    pub fn warmup_steps(&self) -> u64 {
        self.steps_per_epoch() * self.config.warmup_epochs as u64
    }

    /// Learning rate of the `update`-th optimizer step, counted from 1, so
    /// the last warmup update runs at the peak and the final update at
    /// `final_lr`.
    pub fn lr_at(&self, update: u64) -> f64 {
        lr_schedule(
            update,
            self.total_steps(),
            self.warmup_steps(),
            self.config.peak_lr,
            self.config.final_lr,
        )
    }

    /// EMA decay applied after the `update`-th step, counted from 1.
    pub fn tau_at(&self, update: u64) -> f64 {
        tau_schedule(update, self.total_steps(), self.config.tau0)
    }

    /// Resamples, rotates, segments and masks the pool entries at `indices`.
    pub fn prepare_batch(&mut self, indices: &[usize]) -> Result<PreparedBatch> {
        let cfg = &self.config;
        let rng = &mut self.state.rng;
        let mut segments = Vec::with_capacity(indices.len());
        let mut mask = Vec::with_capacity(indices.len() * self.model.tokens());
        for &i in indices {
            let seq = self
                .pool
                .get(i)
                .ok_or_else(|| Error::Config(format!("pool index {i} out of range")))?;
            let sampled = uniform_sample(seq, cfg.frames, SampleMode::Train, &mut rng.augment);
            let view = random_rotation(&sampled, cfg.rotation, &mut rng.augment);
            let seg = segment(view.frames.view(), cfg.segment_len)?;
            let motion = compute_motion(&view);
            let motion_seg = segment(motion.frames.view(), cfg.segment_len)?;
            let intensity = segment_motion_intensity(motion_seg.segments.view());
            let m = mask_from_intensity(
                cfg.mask_strategy,
                intensity.view(),
                cfg.tube_length,
                cfg.beta,
                cfg.mask_ratio,
                &mut rng.mask,
            )?;
            mask.extend(m.iter().copied());
            segments.push(seg.segments);
        }
        Ok(PreparedBatch {
            segments: stack_segments(&segments),
            mask,
            size: indices.len(),
        })
    }

    /// Teacher targets on the full token grid; never modifies the teacher.
    pub fn compute_targets(&self, batch: &PreparedBatch) -> Result<TargetBundle<f32>> {
        teacher_targets(&self.teacher, batch.segments.view(), self.config.target_tap)
    }

    /// One optimizer update of the student; returns the loss.
    pub fn student_update(&mut self, batch: &PreparedBatch, targets: &Array2<f32>, lr: f64) -> Result<f64> {
        let mut pass = Pass {
            keep: true,
            dropout: self.model.dropout,
            rng: Some(&mut self.state.rng.dropout),
        };
        let out = self.student.forward_student(batch.segments.view(), &batch.mask, &mut pass)?;
        let (loss, d) = masked_l2_grad(targets.view(), out.predictions.view(), &batch.mask)?;
        let loss = f64::from(loss);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {loss} at step {} (epoch {}, lr {lr:e})",
                self.state.step, self.state.epoch
            )));
        }
        let mut grads = self.student.backward_student(&out, d.view())?;
        if let Some(c) = self.config.grad_clip {
            clip_grad_norm(&mut grads, c);
        }
        self.optimizer.step(&mut self.student, &grads, lr)?;
        if !self.student.all_finite() {
            return Err(Error::NonFinite(format!(
                "student parameters after step {} (loss {loss}, lr {lr:e})",
                self.state.step
            )));
        }
        Ok(loss)
    }

    /// Moves the teacher toward the student encoder.
    pub fn ema_step(&mut self, tau: f64) -> Result<()> {
        ema_update(&mut self.teacher, &self.student.encoder, tau)
    }

    /// Full step on the pool entries at `indices`.
    pub fn train_step(&mut self, indices: &[usize]) -> Result<StepMetrics> {
        let update = self.state.step + 1;
        let (lr, tau) = (self.lr_at(update), self.tau_at(update));
        let batch = self.prepare_batch(indices)?;
        let targets = self.compute_targets(&batch)?;
        let loss = self.student_update(&batch, &targets.targets, lr)?;
        self.ema_step(tau)?;
        self.state.step += 1;
        Ok(StepMetrics {
            loss,
            lr,
            tau,
            collapse: collapse_stats(targets.targets.view(), self.model.tokens()),
        })
    }

    /// One pass over the shuffled pool. Records are handed to `sink` as they
    /// are produced; returns the epoch's mean loss.
    pub fn run_epoch(&mut self, sink: &mut dyn FnMut(&MetricRecord) -> Result<()>) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.pool.len()).collect();
        order.shuffle(&mut self.state.rng.data);
        let mut total = 0.0;
        let mut steps = 0usize;
        let batches = order.len().div_ceil(self.config.batch_size);
        for (i, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let m = self.train_step(chunk)?;
            total += m.loss;
            steps += 1;
            self.state.interval_loss += m.loss;
            self.state.interval_steps += 1;
            if self.state.step.is_multiple_of(self.config.log_interval as u64) || i + 1 == batches {
                let alarm = self.state.collapse.observe(&m.collapse);
                let record = MetricRecord {
                    step: self.state.step,
                    epoch: self.state.epoch,
                    loss: self.state.interval_loss / self.state.interval_steps as f64,
                    lr: m.lr,
                    tau: m.tau,
                    per_channel_std_mean: m.collapse.per_channel_std_mean,
                    per_token_std_mean: m.collapse.per_token_std_mean,
                    collapse_alarm: alarm,
                };
                self.state.interval_loss = 0.0;
                self.state.interval_steps = 0;
                if self.state.history.len() == HISTORY_LEN {
                    self.state.history.pop_front();
                }
                self.state.history.push_back(record.clone());
                sink(&record)?;
            }
        }
        let mean = total / steps.max(1) as f64;
        self.state.epoch += 1;
        self.state.epoch_losses.push(mean);
        Ok(mean)
    }

    pub fn is_finished(&self) -> bool {
        self.state.epoch >= self.config.epochs
    }

    /// Snapshot of the complete training state.
    pub fn checkpoint(&self) -> Checkpoint {
        let meta = Metadata {
            config: self.config.clone(),
            state: self.state.clone(),
            steps_per_epoch: self.steps_per_epoch(),
            pool_size: self.pool.len(),
        };
        Checkpoint {
            model: self.model.clone(),
            student: self.student.clone(),
            teacher: self.teacher.clone(),
            optimizer: Some(self.optimizer.clone()),
            metadata: serde_json::to_value(meta).expect("training metadata serializes"),
        }
    }

    /// Trains until `config.epochs` (or `stop_after` epochs in total, if
    /// smaller), writing metrics and checkpoints under `out` when given.
    pub fn run(&mut self, out: Option<&Path>, stop_after: Option<usize>) -> Result<PretrainOutcome> {
        let target = stop_after.map_or(self.config.epochs, |s| s.min(self.config.epochs));
        let mut writer = match out {
            Some(dir) => Some(MetricsWriter::open(dir, self.state.step)?),
            None => None,
        };
        let mut records = Vec::new();
        let mut warnings = Vec::new();
        let (threshold, patience) = (self.state.collapse.threshold, self.state.collapse.patience);
        while self.state.epoch < target {
            let mut sink = |r: &MetricRecord| -> Result<()> {
                if r.collapse_alarm {
                    warnings.push(format!(
                        "step {}: target per-channel std {:.4} below {threshold} for {patience}+ consecutive records",
                        r.step, r.per_channel_std_mean
                    ));
                }
                if let Some(w) = &mut writer {
                    w.write(r)?;
                }
                records.push(r.clone());
                Ok(())
            };
            self.run_epoch(&mut sink)?;
            let every = self.config.checkpoint_every;
            if let Some(dir) = out {
                if every > 0 && self.state.epoch.is_multiple_of(every) && self.state.epoch < self.config.epochs {
                    let path = dir.join(CHECKPOINT_DIR).join(format!("epoch_{:04}", self.state.epoch));
                    self.checkpoint().save(&path)?;
                }
            }
        }
        let checkpoint = self.checkpoint();
        if let Some(dir) = out {
            checkpoint.save(&dir.join(FINAL_CHECKPOINT))?;
        }
        Ok(PretrainOutcome {
            checkpoint,
            records,
            epoch_losses: self.state.epoch_losses.clone(),
            warnings,
        })
    }
}

/// Result of [`Trainer::run`].
#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Final state; its teacher is the encoder used downstream.
    pub checkpoint: Checkpoint,
    /// Records produced by this call.
    pub records: Vec<MetricRecord>,
    /// Mean loss of every completed epoch, including earlier runs.
    pub epoch_losses: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Trains from scratch on the training split of `dataset`.
pub fn pretrain(config: PretrainConfig, dataset: &Dataset, out: Option<&Path>) -> Result<PretrainOutcome> {
    Trainer::new(config, dataset)?.run(out, None)
}

/// Continues the run saved at `checkpoint_dir`.
pub fn resume_pretrain(checkpoint_dir: &Path, dataset: &Dataset, out: Option<&Path>) -> Result<PretrainOutcome> {
    let ckpt = load_checkpoint(checkpoint_dir)?;
    Trainer::resume(ckpt, dataset)?.run(out, None)
}

/// Unlabelled pretraining sequences: the training split, or everything when
/// the dataset has no split.
pub fn pretraining_pool(dataset: &Dataset) -> Vec<SkeletonSequence> {
    let idx = dataset.split_indices(Split::Train);
    idx.iter().map(|&i| dataset.sequences[i].clone()).collect()
}

fn check_pool(pool: &[SkeletonSequence]) -> Result<usize> {
    let first = pool
        .first()
        .ok_or_else(|| Error::Config("pretraining needs at least one training sequence".into()))?;
    let joints = first.joints();
    if let Some(bad) = pool.iter().find(|s| s.joints() != joints) {
        return Err(Error::Shape(format!(
            "mixed joint counts in pool: {joints} and {}",
            bad.joints()
        )));
    }
    Ok(joints)
}

struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    /// Opens `metrics.jsonl` keeping only records up to `step`, so a fresh
    /// run starts empty and a resumed run drops anything logged after its
    /// checkpoint.
    fn open(dir: &Path, step: u64) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path: PathBuf = dir.join(METRICS_FILE);
        let kept: Vec<String> = match fs::read_to_string(&path) {
            Ok(text) if step > 0 => text
                .lines()
                .filter(|l| serde_json::from_str::<MetricRecord>(l).is_ok_and(|r| r.step <= step))
                .map(str::to_string)
                .collect(),
            _ => Vec::new(),
        };
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        for line in kept {
            writeln!(out, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        Ok(Self { out })
    }

    fn write(&mut self, r: &MetricRecord) -> Result<()> {
        let line = serde_json::to_string(r)?;
        writeln!(self.out, "{line}").and_then(|_| self.out.flush()).map_err(|e| Error::Io {
            path: PathBuf::from(METRICS_FILE),
            source: e,
        })
    }
}

/// Reads `metrics.jsonl` back.
pub fn read_metrics(dir: &Path) -> Result<Vec<MetricRecord>> {
    let path = dir.join(METRICS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Mask statistics of the pretraining pipeline over `pool`, drawing
/// `samples` augmented crops per sequence.
pub fn mask_statistics(config: &PretrainConfig, pool: &[SkeletonSequence], samples: usize) -> Result<MaskStats> {
    config.validate()?;
    check_pool(pool)?;
    let mut rng = RngStreams::new(config.seed);
    let mut acc = MaskStatsAccumulator::default();
    for seq in pool {
        for _ in 0..samples {
            let sampled = uniform_sample(seq, config.frames, SampleMode::Train, &mut rng.augment);
            let view = random_rotation(&sampled, config.rotation, &mut rng.augment);
            let motion = compute_motion(&view);
            let motion_seg = segment(motion.frames.view(), config.segment_len)?;
            let intensity = segment_motion_intensity(motion_seg.segments.view());
            let mask = mask_from_intensity(
                config.mask_strategy,
                intensity.view(),
                config.tube_length,
                config.beta,
                config.mask_ratio,
                &mut rng.mask,
            )?;
            acc.add(mask.view(), intensity.view());
        }
    }
    Ok(acc.finish())
}

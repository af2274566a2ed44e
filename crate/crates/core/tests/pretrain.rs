use skel2vec::checkpoint::{load_checkpoint, read_manifest};
use skel2vec::data::{generate_synthetic_dataset, Dataset, SyntheticSpec};
use skel2vec::masking::MaskStrategy;
use skel2vec::nn::{param_hash, Encoder};
use skel2vec::pretrain::{
    init_rng, mask_statistics, pretrain, pretraining_pool, read_metrics, resume_pretrain, PretrainConfig, Trainer,
    CHECKPOINT_DIR, FINAL_CHECKPOINT,
};
use skel2vec::Error;

fn dataset(per_class: usize, seed: u64) -> Dataset {
    generate_synthetic_dataset(&SyntheticSpec {
        classes: 4,
        per_class,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap()
}

fn short(epochs: usize) -> PretrainConfig {
    PretrainConfig {
        epochs,
        warmup_epochs: 1,
        batch_size: 8,
        log_interval: 2,
        ..PretrainConfig::toy()
    }
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let data = dataset(5, 0);
    let cfg = PretrainConfig { seed: 9, ..short(0) };
    let out = pretrain(cfg.clone(), &data, None).unwrap();
    let init = Encoder::<f32>::init(&cfg.model_config(data.num_joints()), &mut init_rng(9));
    assert_eq!(param_hash(&out.checkpoint.teacher), param_hash(&init));
    assert_eq!(out.checkpoint.student.encoder, out.checkpoint.teacher);
    assert!(out.records.is_empty());
    assert!(out.epoch_losses.is_empty());
}

#[test]
fn tau_one_freezes_the_teacher() {
    let data = dataset(5, 1);
    let cfg = PretrainConfig { tau0: 1.0, ..short(2) };
    let tr = Trainer::new(cfg.clone(), &data).unwrap();
    let before = param_hash(&tr.teacher);
    let out = pretrain(cfg, &data, None).unwrap();
    assert_eq!(param_hash(&out.checkpoint.teacher), before);
    assert_ne!(param_hash(&out.checkpoint.student.encoder), before);
}

#[test]
fn manifest_records_the_resolved_config() {
    let data = dataset(5, 2);
    let dir = tempfile::tempdir().unwrap();
    let cfg = short(1);
    pretrain(cfg.clone(), &data, Some(dir.path())).unwrap();
    let manifest = read_manifest(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
    let stored: PretrainConfig = serde_json::from_value(manifest.metadata["config"].clone()).unwrap();
    assert_eq!(stored, cfg);
    assert_eq!(stored.beta, 0.1);
    assert_eq!(stored.mask_ratio, 0.9);
    assert_eq!(stored.tube_length, 5);
    assert_eq!(manifest.teacher_hash, load_checkpoint(&dir.path().join(FINAL_CHECKPOINT)).unwrap().teacher_hash());
}

#[test]
fn periodic_checkpoints_and_metrics() {
    let data = dataset(5, 3);
    let dir = tempfile::tempdir().unwrap();
    let cfg = PretrainConfig {
        checkpoint_every: 1,
        ..short(3)
    };
    let out = pretrain(cfg.clone(), &data, Some(dir.path())).unwrap();
    for epoch in [1, 2] {
        assert!(dir.path().join(CHECKPOINT_DIR).join(format!("epoch_{epoch:04}")).exists());
    }
    assert!(!dir.path().join(CHECKPOINT_DIR).join("epoch_0003").exists());
    let records = read_metrics(dir.path()).unwrap();
    assert_eq!(records.len(), out.records.len());
    assert!(records.windows(2).all(|w| w[0].step < w[1].step));
    let last = records.last().unwrap();
    assert_eq!(last.epoch, 2);

    // A fresh run into the same directory replaces the stream.
    pretrain(cfg, &data, Some(dir.path())).unwrap();
    assert_eq!(read_metrics(dir.path()).unwrap().len(), records.len());
}

#[test]
fn resume_from_a_periodic_checkpoint() {
    let data = dataset(5, 4);
    let dir = tempfile::tempdir().unwrap();
    let cfg = PretrainConfig {
        checkpoint_every: 1,
        ..short(2)
    };
    let full = pretrain(cfg, &data, Some(dir.path())).unwrap();
    let resumed = resume_pretrain(&dir.path().join(CHECKPOINT_DIR).join("epoch_0001"), &data, None).unwrap();
    assert_eq!(resumed.epoch_losses, full.epoch_losses);
    assert_eq!(resumed.checkpoint.teacher_hash(), full.checkpoint.teacher_hash());
}

#[test]
fn resume_rejects_a_different_dataset() {
    let data = dataset(5, 5);
    let dir = tempfile::tempdir().unwrap();
    pretrain(short(1), &data, Some(dir.path())).unwrap();
    let other = dataset(7, 5);
    let err = resume_pretrain(&dir.path().join(FINAL_CHECKPOINT), &other, None).unwrap_err();
    assert!(matches!(err, Error::Config(_)), "{err}");
}

#[test]
fn invalid_configs_are_rejected() {
    let data = dataset(3, 6);
    for cfg in [
        PretrainConfig { mask_ratio: 1.0, ..short(1) },
        PretrainConfig { batch_size: 0, ..short(1) },
        PretrainConfig { tau0: 1.5, ..short(1) },
        PretrainConfig { frames: 31, ..short(1) },
    ] {
        assert!(Trainer::new(cfg, &data).is_err());
    }
}

#[test]
fn motion_bias_raises_motion_coverage() {
    let data = dataset(5, 7);
    let pool = pretraining_pool(&data);
    let base = PretrainConfig::toy();
    let coverage = |strategy, beta| {
        let cfg = PretrainConfig {
            mask_strategy: strategy,
            beta,
            mask_ratio: 0.5,
            ..base.clone()
        };
        mask_statistics(&cfg, &pool, 8).unwrap()
    };
    let random = coverage(MaskStrategy::Random, 0.0);
    let biased = coverage(MaskStrategy::MotionAware, 2.0);
    assert!(biased.motion_coverage > random.motion_coverage + 0.05);
    assert!(biased.persistence > random.persistence);
    let total: f64 = random.joint_frequency.iter().sum::<f64>() / random.joint_frequency.len() as f64;
    assert!((total - 8.0 / 15.0).abs() < 1e-9);
}

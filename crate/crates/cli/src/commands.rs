use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use skel2vec::checkpoint::{load_checkpoint, read_manifest};
use skel2vec::config::{parse_document, parse_value, resolve, set_path};
use skel2vec::data::{generate_synthetic_dataset, load_dataset, SyntheticSpec};
use skel2vec::eval::{
    finetune_eval, linear_probe, parse_grid, run_ablation, semi_supervised_eval, transfer_eval, AblationAxis,
    EvalReport, FinetuneConfig, LinearProbeConfig, SemiConfig,
};
use skel2vec::pretrain::{mask_statistics, pretraining_pool, resume_pretrain, PretrainConfig, Trainer};

use crate::run_dir::{content_hash, resolve as resolve_out, write_record, RunRecord};
use crate::{
    AblateArgs, Cli, Command, ConfigArgs, DataCommand, DataGenArgs, EvalArgs, InspectArgs, MaskCommand, MaskStatsArgs,
    PretrainArgs,
};

pub fn dispatch(cli: Cli) -> Result<()> {
    let root = cli.out_root.as_deref();
    match cli.command {
        Command::Data(DataCommand::Gen(args)) => data_gen(root, args),
        Command::Pretrain(args) => pretrain(root, args),
        Command::Eval(args) => eval(root, args),
        Command::Mask(MaskCommand::Stats(args)) => mask_stats(root, args),
        Command::Ablate(args) => ablate(root, args),
        Command::Inspect(args) => inspect(args),
    }
}

/// Flag layer: only flags the user actually passed.
#[derive(Default)]
struct Flags(Value);

impl Flags {
    fn set<T: Serialize>(&mut self, key: &str, value: Option<T>) -> Result<()> {
        if let Some(v) = value {
            if self.0.is_null() {
                self.0 = json!({});
            }
            set_path(&mut self.0, key, serde_json::to_value(v)?)?;
        }
        Ok(())
    }
}

/// Defaults < config file < `--set` overrides < dedicated flags.
fn resolve_config<T: Serialize + DeserializeOwned>(defaults: &T, args: &ConfigArgs, flags: Flags) -> Result<T> {
    let mut layers = Vec::new();
    if let Some(path) = &args.config {
        layers.push(read_document(path)?);
    }
    let mut sets = json!({});
    for kv in &args.overrides {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
        set_path(&mut sets, k.trim(), parse_value(v.trim()))?;
    }
    layers.push(sets);
    if !flags.0.is_null() {
        layers.push(flags.0);
    }
    Ok(resolve(defaults, layers)?)
}

fn read_document(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    parse_document(&text).with_context(|| format!("parsing config {}", path.display()))
}

fn preset(name: &str) -> Result<PretrainConfig> {
    match name {
        "full" => Ok(PretrainConfig::default()),
        "toy" => Ok(PretrainConfig::toy()),
        other => bail!("unknown preset {other:?} (expected full or toy)"),
    }
}

fn argv() -> Vec<String> {
    std::env::args().collect()
}

fn config_inputs<'a>(args: &'a ConfigArgs, rest: &[&'a Path]) -> Vec<&'a Path> {
    let mut v: Vec<&Path> = rest.to_vec();
    if let Some(c) = &args.config {
        v.push(c.as_path());
    }
    v
}

fn data_gen(root: Option<&Path>, args: DataGenArgs) -> Result<()> {
    let mut flags = Flags::default();
    flags.set("classes", args.classes)?;
    flags.set("per_class", args.per_class)?;
    flags.set("joints", args.joints)?;
    flags.set("frames", args.frames)?;
    flags.set("noise", args.noise)?;
    flags.set("seed", args.seed)?;
    let spec: SyntheticSpec = resolve_config(&SyntheticSpec::default(), &args.config, flags)?;
    let out = resolve_out(root, args.out.as_deref(), "data");
    let dataset = generate_synthetic_dataset(&spec)?;
    dataset.save(&out)?;
    write_record(
        &out,
        &RunRecord {
            command: "data gen",
            argv: argv(),
            version: env!("CARGO_PKG_VERSION"),
            config: serde_json::to_value(&spec)?,
            seeds: vec![spec.seed],
            input_hash: content_hash(&config_inputs(&args.config, &[]))?,
            outputs: vec!["manifest.json".into(), "data.bin".into()],
        },
    )?;
    println!(
        "wrote {} sequences ({} classes, {} joints) to {}",
        dataset.len(),
        dataset.num_classes(),
        dataset.num_joints(),
        out.display()
    );
    Ok(())
}

fn pretrain(root: Option<&Path>, args: PretrainArgs) -> Result<()> {
    let out = resolve_out(root, args.out.as_deref(), "pretrain");
    let dataset = load_dataset(&args.data).with_context(|| format!("loading dataset {}", args.data.display()))?;
    let outcome = match &args.resume {
        Some(ckpt) => {
            if args.config.config.is_some() || !args.config.overrides.is_empty() || args.epochs.is_some() {
                bail!("--resume continues the stored configuration; drop --config, --set and --epochs");
            }
            resume_pretrain(ckpt, &dataset, Some(&out))?
        }
        None => {
            let mut flags = Flags::default();
            flags.set("epochs", args.epochs)?;
            flags.set("seed", args.seed)?;
            flags.set("batch_size", args.batch_size)?;
            let cfg = resolve_config(&preset(&args.preset)?, &args.config, flags)?;
            Trainer::new(cfg, &dataset)?.run(Some(&out), None)?
        }
    };
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let cfg: Value = outcome.checkpoint.metadata["config"].clone();
    let summary = json!({
        "epoch_losses": outcome.epoch_losses,
        "teacher_hash": outcome.checkpoint.teacher_hash(),
        "warnings": outcome.warnings,
    });
    let summary_path = out.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", summary_path.display()))?;
    let mut inputs = config_inputs(&args.config, &[args.data.as_path()]);
    if let Some(r) = &args.resume {
        inputs.push(r.as_path());
    }
    write_record(
        &out,
        &RunRecord {
            command: "pretrain",
            argv: argv(),
            version: env!("CARGO_PKG_VERSION"),
            seeds: vec![cfg["seed"].as_u64().unwrap_or_default()],
            config: cfg,
            input_hash: content_hash(&inputs)?,
            outputs: vec!["checkpoint".into(), "metrics.jsonl".into(), "summary.json".into()],
        },
    )?;
    let last = outcome.epoch_losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "pretrained {} epochs, final epoch loss {last:.4}; checkpoint in {}",
        outcome.epoch_losses.len(),
        out.join("checkpoint").display()
    );
    Ok(())
}

fn eval(root: Option<&Path>, args: EvalArgs) -> Result<()> {
    let out = resolve_out(root, args.out.as_deref(), &format!("eval-{}", args.protocol));
    let ckpt = load_checkpoint(&args.ckpt).with_context(|| format!("loading checkpoint {}", args.ckpt.display()))?;
    let dataset = load_dataset(&args.data).with_context(|| format!("loading dataset {}", args.data.display()))?;
    let semi = args.protocol == "semi";
    if !semi && (args.fraction.is_some() || args.runs.is_some()) {
        bail!("--fraction and --runs only apply to the semi protocol");
    }
    if args.protocol != "transfer" && args.joint_map.is_some() {
        bail!("--joint-map only applies to the transfer protocol");
    }
    let mut flags = Flags::default();
    let prefix = if semi { "finetune." } else { "" };
    flags.set(&format!("{prefix}epochs"), args.epochs)?;
    flags.set(&format!("{prefix}seed"), args.seed)?;
    flags.set("fraction", args.fraction)?;
    flags.set("runs", args.runs)?;

    let teacher = &ckpt.teacher;
    let (report, config, seeds): (EvalReport, Value, Vec<u64>) = match args.protocol.as_str() {
        "linear" => {
            let cfg: LinearProbeConfig = resolve_config(&LinearProbeConfig::default(), &args.config, flags)?;
            let (r, _) = linear_probe(teacher, &dataset, &cfg)?;
            (r, serde_json::to_value(&cfg)?, vec![cfg.seed])
        }
        "finetune" => {
            let cfg: FinetuneConfig = resolve_config(&FinetuneConfig::default(), &args.config, flags)?;
            let (r, _) = finetune_eval(teacher, &dataset, &cfg)?;
            (r, serde_json::to_value(&cfg)?, vec![cfg.seed])
        }
        "semi" => {
            let cfg: SemiConfig = resolve_config(&SemiConfig::default(), &args.config, flags)?;
            let r = semi_supervised_eval(teacher, &dataset, &cfg)?;
            let seeds = (0..cfg.runs as u64).map(|i| cfg.finetune.seed + i).collect();
            (r, serde_json::to_value(&cfg)?, seeds)
        }
        "transfer" => {
            let cfg: FinetuneConfig = resolve_config(&FinetuneConfig::default(), &args.config, flags)?;
            let (r, _) = transfer_eval(teacher, &dataset, args.joint_map.as_deref(), &cfg)?;
            (r, serde_json::to_value(&cfg)?, vec![cfg.seed])
        }
        other => bail!("unknown protocol {other:?}"),
    };
    report.write(&out, "report")?;
    write_record(
        &out,
        &RunRecord {
            command: "eval",
            argv: argv(),
            version: env!("CARGO_PKG_VERSION"),
            config: json!({"protocol": args.protocol, "settings": config}),
            seeds,
            input_hash: content_hash(&config_inputs(&args.config, &[args.ckpt.as_path(), args.data.as_path()]))?,
            outputs: vec!["report.json".into(), "report.csv".into()],
        },
    )?;
    match report.accuracy_std {
        Some(s) => println!(
            "{} accuracy {:.4} ± {s:.4} over {} runs",
            args.protocol,
            report.accuracy_mean,
            report.run_accuracies.len()
        ),
        None => println!("{} accuracy {:.4}", args.protocol, report.accuracy_mean),
    }
    println!("report written to {}", out.display());
    Ok(())
}

fn mask_stats(root: Option<&Path>, args: MaskStatsArgs) -> Result<()> {
    let out = resolve_out(root, args.out.as_deref(), "mask-stats");
    let dataset = load_dataset(&args.data).with_context(|| format!("loading dataset {}", args.data.display()))?;
    let mut flags = Flags::default();
    flags.set("mask_strategy", args.strategy.clone())?;
    flags.set("tube_length", args.alpha)?;
    flags.set("beta", args.beta)?;
    flags.set("mask_ratio", args.ratio)?;
    flags.set("seed", args.seed)?;
    let cfg = resolve_config(&preset(&args.preset)?, &args.config, flags)?;
    let stats = mask_statistics(&cfg, &pretraining_pool(&dataset), args.samples)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let json_path = out.join("mask_stats.json");
    fs::write(&json_path, serde_json::to_string_pretty(&stats)?)?;
    let csv_path = out.join("joint_frequency.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["joint", "masked_fraction"])?;
    for (j, f) in stats.joint_frequency.iter().enumerate() {
        w.write_record([j.to_string(), f.to_string()])?;
    }
    w.flush()?;
    write_record(
        &out,
        &RunRecord {
            command: "mask stats",
            argv: argv(),
            version: env!("CARGO_PKG_VERSION"),
            config: json!({"pretrain": cfg, "samples": args.samples}),
            seeds: vec![cfg.seed],
            input_hash: content_hash(&config_inputs(&args.config, &[args.data.as_path()]))?,
            outputs: vec!["mask_stats.json".into(), "joint_frequency.csv".into()],
        },
    )?;
    println!(
        "{} masks: persistence {:.3}, mean masked run {:.2} segments, motion coverage {:.3}",
        stats.samples, stats.persistence, stats.mean_masked_run, stats.motion_coverage
    );
    Ok(())
}

fn ablate(root: Option<&Path>, args: AblateArgs) -> Result<()> {
    let axis: AblationAxis = args.axis.parse()?;
    let out = resolve_out(root, args.out.as_deref(), &format!("ablate-{}", axis.name()));
    let dataset = load_dataset(&args.data).with_context(|| format!("loading dataset {}", args.data.display()))?;
    let mut flags = Flags::default();
    flags.set("epochs", args.epochs)?;
    let base = resolve_config(&preset(&args.preset)?, &args.config, flags)?;
    let probe: LinearProbeConfig = match &args.probe_config {
        Some(p) => resolve(&LinearProbeConfig::default(), [read_document(p)?])?,
        None => LinearProbeConfig::default(),
    };
    let grid = match &args.grid {
        Some(g) => parse_grid(axis, g, &base)?,
        None => axis.default_grid(&base),
    };
    let table = run_ablation(axis, &grid, &base, &probe, &args.seeds, &dataset)?;
    table.write(&out)?;
    let mut inputs: Vec<&Path> = config_inputs(&args.config, &[args.data.as_path()]);
    let probe_path: Option<PathBuf> = args.probe_config.clone();
    if let Some(p) = &probe_path {
        inputs.push(p.as_path());
    }
    write_record(
        &out,
        &RunRecord {
            command: "ablate",
            argv: argv(),
            version: env!("CARGO_PKG_VERSION"),
            config: json!({"axis": axis, "grid": grid, "base": base, "probe": probe}),
            seeds: args.seeds.clone(),
            input_hash: content_hash(&inputs)?,
            outputs: vec!["ablation.json".into(), "ablation.csv".into(), "ablation.svg".into()],
        },
    )?;
    for row in &table.summary {
        match row.accuracy_mean {
            Some(m) => println!("{} = {:<12} accuracy {m:.4} ({} runs)", axis.name(), row.value, row.completed),
            None => println!("{} = {:<12} failed", axis.name(), row.value),
        }
    }
    println!("tables and plot written to {}", out.display());
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    let manifest = read_manifest(&args.ckpt).with_context(|| format!("reading {}", args.ckpt.display()))?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&manifest)?);
        return Ok(());
    }
    let m = &manifest.model;
    println!("checkpoint    {}", args.ckpt.display());
    println!("format        v{}", manifest.version);
    println!(
        "model         L_e={} L_d={} C_e={} heads={} ffn={} V={} T_e={} l={} norm={:?}",
        m.enc_layers, m.dec_layers, m.dim, m.heads, m.ffn_dim, m.joints, m.segments, m.segment_len, m.norm
    );
    for (group, n) in manifest.group_sizes() {
        println!("{group:<13} {n} values");
    }
    println!("tensors       {} ({} bytes)", manifest.tensors.len(), manifest.total_bytes());
    println!("teacher hash  {}", manifest.teacher_hash);
    if let Some(o) = &manifest.optimizer {
        println!("optimizer     AdamW t={} betas=({}, {}) wd={}", o.t, o.beta1, o.beta2, o.weight_decay);
    }
    let state = &manifest.metadata["state"];
    if !state.is_null() {
        println!("progress      epoch {} step {}", state["epoch"], state["step"]);
    }
    Ok(())
}

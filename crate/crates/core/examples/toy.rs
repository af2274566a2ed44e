//! Pretrains on the synthetic toy dataset and compares a linear probe on
//! the teacher with one on a randomly initialized encoder.
//!
//! ```sh
//! cargo run --release -p skel2vec --example toy -- [epochs] [seed]
//! ```

use std::time::Instant;

use skel2vec::data::{generate_synthetic_dataset, SyntheticSpec};
use skel2vec::eval::{linear_probe, LinearProbeConfig};
use skel2vec::nn::Encoder;
use skel2vec::pretrain::{init_rng, PretrainConfig, Trainer};

fn main() -> skel2vec::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map_or(50, |s| s.parse().expect("epochs must be an integer"));
    let seed = args.next().map_or(0, |s| s.parse().expect("seed must be an integer"));

    let data = generate_synthetic_dataset(&SyntheticSpec::default())?;
    let cfg = PretrainConfig {
        epochs,
        seed,
        ..PretrainConfig::toy()
    };
    let start = Instant::now();
    let run = Trainer::new(cfg.clone(), &data)?.run(None, None)?;
    println!("pretrained {epochs} epochs in {:.1}s", start.elapsed().as_secs_f64());
    for (e, loss) in run.epoch_losses.iter().enumerate() {
        println!("epoch {e:>3} loss {loss:.4}");
    }

    let probe = LinearProbeConfig {
        seed,
        ..LinearProbeConfig::default()
    };
    let (pretrained, _) = linear_probe(&run.checkpoint.teacher, &data, &probe)?;
    let random = Encoder::<f32>::init(&cfg.model_config(data.num_joints()), &mut init_rng(seed));
    let (baseline, _) = linear_probe(&random, &data, &probe)?;
    println!(
        "linear probe: pretrained {:.3}, random init {:.3}",
        pretrained.accuracy_mean, baseline.accuracy_mean
    );
    Ok(())
}

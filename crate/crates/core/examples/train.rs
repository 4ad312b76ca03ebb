//! Train a small network on synthetic data and watch the focal loss and the
//! held-out AUC per epoch. The checkpoint is written next to the log.

use hvan::data::synth::{synth_generate, SynthConfig};
use hvan::network::ModelConfig;
use hvan::pipeline::{train_run, RunConfig, CHECKPOINT_FILE, LOG_FILE};
use hvan::train::TrainConfig;

fn main() -> hvan::Result<()> {
    let dir = tempfile::tempdir().expect("temporary directory");
    let cfg = RunConfig {
        seed: 3,
        cases: 120,
        synth: SynthConfig::default(),
        model: ModelConfig {
            input_size: [32; 3],
            stage_channels: [4, 8, 16, 32],
            ..ModelConfig::default()
        },
        train: TrainConfig {
            lr: 1e-3,
            epochs: 6,
            augment_flips: true,
            ..TrainConfig::default()
        },
    };
    synth_generate(cfg.cases, cfg.seed, &cfg.synth, dir.path())?;
    let out = dir.path().join("run");
    let summary = train_run(&cfg, &dir.path().join("manifest.csv"), &out, None)?;

    println!("run {}", summary.digest);
    for e in &summary.epochs {
        println!("epoch {:>2}  loss {:.4}  val AUC {}", e.epoch, e.loss, fmt(e.val_auc));
    }
    if let Some(m) = summary.test {
        println!("test: AUC {}  F1 {}  accuracy {}", fmt(m.auc), fmt(m.f1), fmt(m.accuracy));
    }
    for f in [CHECKPOINT_FILE, LOG_FILE] {
        println!("{} ({} bytes)", f, std::fs::metadata(out.join(f)).map(|m| m.len()).unwrap_or(0));
    }
    Ok(())
}

fn fmt(x: Option<f64>) -> String {
    x.map_or("n/a".into(), |v| format!("{v:.3}"))
}

//! Train briefly, then reload the saved checkpoint and evaluate it on each
//! split of the manifest.

use hvan::data::synth::{synth_generate, SynthConfig};
use hvan::data::Split;
use hvan::network::ModelConfig;
use hvan::pipeline::{eval_run, train_run, RunConfig, CHECKPOINT_FILE};
use hvan::train::TrainConfig;

fn main() -> hvan::Result<()> {
    let dir = tempfile::tempdir().expect("temporary directory");
    let cfg = RunConfig {
        cases: 40,
        model: ModelConfig {
            input_size: [32; 3],
            stage_channels: [4, 8, 16, 32],
            ..ModelConfig::default()
        },
        train: TrainConfig { lr: 1e-3, epochs: 2, ..TrainConfig::default() },
        ..RunConfig::default()
    };
    synth_generate(cfg.cases, cfg.seed, &SynthConfig::default(), dir.path())?;
    let manifest = dir.path().join("manifest.csv");
    train_run(&cfg, &manifest, dir.path(), None)?;

    let ckpt = dir.path().join(CHECKPOINT_FILE);
    for split in [Split::Train, Split::Test] {
        let m = eval_run(&ckpt, &manifest, split)?;
        println!("{split}: {}", serde_json::to_string(&m)?);
    }
    Ok(())
}

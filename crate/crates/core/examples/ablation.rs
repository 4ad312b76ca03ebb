//! Train every row of the ablation grid with identical settings and print
//! the resulting table. Small widths and few epochs keep it quick.

use hvan::data::synth::synth_generate;
use hvan::network::ModelConfig;
use hvan::pipeline::{ablate, RunConfig, ABLATION_FILE};
use hvan::train::TrainConfig;

fn main() -> hvan::Result<()> {
    let dir = tempfile::tempdir().expect("temporary directory");
    let cfg = RunConfig {
        cases: 30,
        model: ModelConfig {
            input_size: [32; 3],
            stage_channels: [4, 8, 16, 32],
            ..ModelConfig::default()
        },
        train: TrainConfig { lr: 1e-3, epochs: 2, ..TrainConfig::default() },
        ..RunConfig::default()
    };
    synth_generate(cfg.cases, cfg.seed, &cfg.synth, dir.path())?;
    let rows = ablate(&cfg, &dir.path().join("manifest.csv"), dir.path())?;

    println!("{:<20} {:>6} {:>6} {:>9}", "config", "AUC", "F1", "accuracy");
    for r in &rows {
        let f = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.3}"));
        println!("{:<20} {:>6} {:>6} {:>9}", r.ablation.label, f(r.metrics.auc), f(r.metrics.f1), f(r.metrics.accuracy));
    }
    print!("\n{}", std::fs::read_to_string(dir.path().join(ABLATION_FILE)).unwrap_or_default());
    Ok(())
}

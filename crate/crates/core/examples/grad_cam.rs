//! Class activation maps for one case after a short training run. The maps
//! are written as raw volumes; here we also report where their mass sits
//! relative to the synthetic lesion.

use hvan::data::synth::{sample_case, synth_generate};
use hvan::network::ModelConfig;
use hvan::pipeline::{cam_case, train_run, RunConfig, CHECKPOINT_FILE};
use hvan::train::TrainConfig;

fn main() -> hvan::Result<()> {
    let dir = tempfile::tempdir().expect("temporary directory");
    let cfg = RunConfig {
        cases: 120,
        model: ModelConfig {
            input_size: [32; 3],
            stage_channels: [4, 8, 16, 32],
            ..ModelConfig::default()
        },
        train: TrainConfig { lr: 1e-3, epochs: 6, augment_flips: true, ..TrainConfig::default() },
        ..RunConfig::default()
    };
    let manifest = synth_generate(cfg.cases, cfg.seed, &cfg.synth, dir.path())?;
    let manifest_path = dir.path().join("manifest.csv");
    train_run(&cfg, &manifest_path, dir.path(), None)?;

    let index = manifest.rows.len() - 1;
    let case = manifest.rows[index].id.clone();
    // stage 1 keeps the finest grid; at 32³ the last stage is a single voxel
    let (maps, files) = cam_case(&dir.path().join(CHECKPOINT_FILE), &manifest_path, &case, 1, &dir.path().join("cam"))?;
    for f in &files {
        println!("wrote {}", f.display());
    }

    // share of each map's mass inside the lesion's bounding box, against the
    // share of the volume the box covers
    let lesion = sample_case(&cfg.synth, cfg.seed, index).lesion;
    let axes = lesion.semi_axes();
    let lo: Vec<usize> = (0..3).map(|i| (lesion.center[i] - axes[i]).floor().max(0.0) as usize).collect();
    let hi: Vec<usize> = (0..3).map(|i| ((lesion.center[i] + axes[i]).ceil() as usize).min(31)).collect();
    let share = (0..3).map(|i| hi[i] - lo[i] + 1).product::<usize>() as f64 / 32768.0;
    for (name, map) in [("transverse", maps.transverse), ("sagittal", maps.sagittal)] {
        let Some(m) = map else { continue };
        let total: f64 = m.data().iter().map(|&x| x as f64).sum();
        let mut inside = 0.0;
        for h in lo[0]..=hi[0] {
            for w in lo[1]..=hi[1] {
                for d in lo[2]..=hi[2] {
                    inside += m.get(&[h, w, d]) as f64;
                }
            }
        }
        println!("{name:<10} {:.1}% of the map in the lesion box ({:.1}% of the volume)", 100.0 * inside / total.max(f64::MIN_POSITIVE), 100.0 * share);
    }
    Ok(())
}

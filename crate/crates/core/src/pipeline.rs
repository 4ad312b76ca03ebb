//! End-to-end operations over files: generate a synthetic set, train,
//! evaluate, run the ablation grid, and export activation maps. Each is a
//! single call so the command-line front end stays a thin shell.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cam::{grad_cam, CamMaps};
use crate::checkpoint::Checkpoint;
use crate::data::synth::{synth_generate, SynthConfig};
use crate::data::{resize_volume, write_volume, Manifest, Split, VolumeMeta};
use crate::error::{HvanError, Result};
use crate::metrics::MetricsReport;
use crate::network::{Ablation, Model, ModelConfig, ABLATION_GRID};
use crate::planes::View;
use crate::train::{evaluate_checkpoint, prepare, EpochRecord, Example, TrainConfig, Trainer};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOG_FILE: &str = "train_log.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const CONFIG_FILE: &str = "config.json";
pub const ABLATION_FILE: &str = "ablation.csv";

/// Every tunable of a run, stored as one JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed of the synthetic generator.
    pub seed: u64,
    /// Number of synthetic cases to generate.
    pub cases: usize,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: 100,
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parse a config file; malformed or unknown fields are configuration
    /// errors.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| HvanError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HvanError::Config(format!("{}: {e}", path.display())))
    }

    /// Use `seed` for data generation, initialization, and batch order.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
        self
    }

    /// Cube edge length for both generated volumes and the model input.
    pub fn with_size(mut self, size: usize) -> Self {
        self.synth.size = size;
        self.model.input_size = [size; 3];
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.model.validate()?;
        self.train.validate()
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        let hash = Sha256::digest(&json);
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

/// Write `cfg.cases` synthetic pairs and their manifest under `out`.
pub fn synth_data(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    cfg.synth.validate()?;
    synth_generate(cfg.cases, cfg.seed, &cfg.synth, out)
}

fn load_examples(manifest: &Manifest, split: Split, size: [usize; 3]) -> Result<Vec<Example>> {
    prepare(&manifest.load_split(split)?, size)
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub digest: String,
    pub epochs: Vec<EpochRecord>,
    pub test: Option<MetricsReport>,
}

/// Train on the manifest's train split, validating each epoch on its test
/// split. The checkpoint is rewritten after every epoch, so an interrupted
/// run continues from `out/checkpoint.bin` via `resume`.
pub fn train_run(cfg: &RunConfig, manifest: &Path, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let manifest = Manifest::read(manifest)?;
    fs::create_dir_all(out).map_err(|e| HvanError::io(out, e))?;
    let resumed = resume.map(Checkpoint::load).transpose()?;
    let size = resumed.as_ref().map_or(cfg.model.input_size, |c| c.model.input_size);
    let train = load_examples(&manifest, Split::Train, size)?;
    let test = load_examples(&manifest, Split::Test, size)?;
    let trainer = match resumed {
        Some(ckpt) => Trainer::resume(ckpt, &train)?,
        None => Trainer::new(&cfg.model, &cfg.train, &train)?,
    };
    let val = (!test.is_empty()).then_some(test.as_slice());
    let config = RunConfig {
        model: trainer.ckpt.model.clone(),
        train: trainer.ckpt.train.clone(),
        ..cfg.clone()
    };
    write_json(&out.join(CONFIG_FILE), &config)?;
    let mut trainer = trainer.with_log(out.join(LOG_FILE));
    let ckpt_path = out.join(CHECKPOINT_FILE);
    let mut epochs = Vec::new();
    while !trainer.finished(train.len()) {
        if let (_, Some(record)) = trainer.step(&train, val)? {
            trainer.ckpt.save(&ckpt_path)?;
            epochs.push(record);
        }
    }
    trainer.ckpt.save(&ckpt_path)?;
    let test = match val {
        Some(v) => Some(trainer.evaluate(v)?),
        None => None,
    };
    if let Some(m) = &test {
        write_json(&out.join(METRICS_FILE), m)?;
    }
    Ok(TrainSummary {
        digest: config.digest(),
        epochs,
        test,
    })
}

/// Metrics of a checkpoint on one split of a manifest.
pub fn eval_run(checkpoint: &Path, manifest: &Path, split: Split) -> Result<MetricsReport> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let cases = load_examples(&Manifest::read(manifest)?, split, ckpt.model.input_size)?;
    if cases.is_empty() {
        return Err(HvanError::Data(format!("manifest has no {split} cases")));
    }
    evaluate_checkpoint(&ckpt, &cases)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub ablation: Ablation,
    pub metrics: MetricsReport,
}

/// Train and test every row of [`ABLATION_GRID`] with otherwise identical
/// settings, writing one combined CSV to `out/ablation.csv`.
pub fn ablate(cfg: &RunConfig, manifest: &Path, out: &Path) -> Result<Vec<AblationRow>> {
    cfg.model.validate()?;
    cfg.train.validate()?;
    let manifest = Manifest::read(manifest)?;
    let train = load_examples(&manifest, Split::Train, cfg.model.input_size)?;
    let test = load_examples(&manifest, Split::Test, cfg.model.input_size)?;
    if test.is_empty() {
        return Err(HvanError::Data("ablation needs a non-empty test split".into()));
    }
    fs::create_dir_all(out).map_err(|e| HvanError::io(out, e))?;
    let mut rows = Vec::with_capacity(ABLATION_GRID.len());
    for ablation in ABLATION_GRID {
        let model = cfg.model.with_ablation(&ablation);
        let mut trainer = Trainer::new(&model, &cfg.train, &train)?;
        trainer.run(&train, None, |_| {})?;
        rows.push(AblationRow {
            ablation,
            metrics: trainer.evaluate(&test)?,
        });
    }
    write_ablation_csv(&out.join(ABLATION_FILE), &rows)?;
    Ok(rows)
}

pub const ABLATION_HEADER: [&str; 11] = [
    "config",
    "transverse",
    "sagittal",
    "iva",
    "cva",
    "hvaf",
    "auc",
    "f1",
    "accuracy",
    "sensitivity",
    "specificity",
];

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ABLATION_HEADER)?;
    let metric = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
    for r in rows {
        let a = &r.ablation;
        let m = &r.metrics;
        let flags = [a.transverse, a.sagittal, a.iva, a.cva, a.hvaf].map(|f| u8::from(f).to_string());
        let mut record = vec![a.label.to_string()];
        record.extend(flags);
        record.extend([m.auc, m.f1, m.accuracy, m.sensitivity, m.specificity].map(metric));
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| HvanError::io(path, e))
}

/// Activation maps for one manifest case, written as `{id}_cam_t.raw` and
/// `{id}_cam_s.raw` (with sidecars) under `out`.
pub fn cam_case(checkpoint: &Path, manifest: &Path, case: &str, stage: usize, out: &Path) -> Result<(CamMaps, Vec<PathBuf>)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let manifest = Manifest::read(manifest)?;
    let row = manifest
        .rows
        .iter()
        .find(|r| r.id == case)
        .ok_or_else(|| HvanError::Data(format!("case `{case}` is not in the manifest")))?;
    let pair = manifest.load(row)?;
    let size = ckpt.model.input_size;
    let shape: Vec<usize> = [1, 1].into_iter().chain(size).collect();
    let as_input = |v| -> Result<_> { Ok(resize_volume(v, size)?.reshape(&shape)?) };
    let (vt, vs) = (as_input(&pair.vol_t)?, as_input(&pair.vol_s)?);
    let model = Model::build(&ckpt.model)?;
    let maps = grad_cam(&model, &ckpt.params, Some(&vt), Some(&vs), stage)?;
    fs::create_dir_all(out).map_err(|e| HvanError::io(out, e))?;
    let mut written = Vec::new();
    for (map, view, tag) in [(&maps.transverse, View::Transverse, "t"), (&maps.sagittal, View::Sagittal, "s")] {
        if let Some(m) = map {
            let path = out.join(format!("{case}_cam_{tag}.raw"));
            write_volume(&path, m, &VolumeMeta::new(size, view))?;
            written.push(path);
        }
    }
    Ok((maps, written))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| HvanError::io(path, e))
}

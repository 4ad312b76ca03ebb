//! Focal-loss training with Adam, and evaluation.
//!
//! Batch order is derived from `(seed, epoch)` alone, so a run resumed from
//! any checkpoint replays the uninterrupted run exactly.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use hvan_tensor::{Adam, AdamConfig, Graph, Real, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, TrainProgress};
use crate::data::{resize_volume, CasePair};
use crate::error::{HvanError, Result};
use crate::metrics::{confusion_metrics, MetricsReport, DEFAULT_THRESHOLD};
use crate::network::{Model, ModelConfig};
use crate::nn::Ctx;

/// Probabilities are clamped to `[FOCAL_EPS, 1 - FOCAL_EPS]`.
pub const FOCAL_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: u64,
    pub batch_size: usize,
    pub focal_gamma: f64,
    /// Weight of the positive class; the negative-class fraction of the
    /// training set when unset.
    pub focal_alpha: Option<f64>,
    pub threshold: f64,
    pub seed: u64,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<u64>,
    /// Randomly flip each training pair along `H`, `W`, and `D` (both views
    /// alike).
    pub augment_flips: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            epochs: 100,
            batch_size: 4,
            focal_gamma: 2.0,
            focal_alpha: None,
            threshold: DEFAULT_THRESHOLD,
            seed: 0,
            max_steps: None,
            augment_flips: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HvanError::Config(m.to_string()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be positive");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be at least 1");
        }
        if !(self.focal_gamma >= 0.0) {
            return bad("focal gamma must be non-negative");
        }
        if matches!(self.focal_alpha, Some(a) if !(a > 0.0 && a < 1.0)) {
            return bad("focal alpha must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad("threshold must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Per-example focal loss `-α_t (1 - p_t)^γ log p_t`, where `α_t = alpha`
/// for `y = 1` and `1 - alpha` otherwise.
pub fn focal_loss_single(p: f64, y: u8, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
    let (pt, at) = if y == 1 { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

/// Batch mean of [`focal_loss_single`] with an explicit per-example `α_t`.
pub fn focal_loss_weighted(p: &[f64], y: &[u8], alpha_t: &[f64], gamma: f64) -> f64 {
    let n = p.len() as f64;
    p.iter()
        .zip(y)
        .zip(alpha_t)
        .map(|((&p, &y), &a)| {
            let p = p.clamp(FOCAL_EPS, 1.0 - FOCAL_EPS);
            let pt = if y == 1 { p } else { 1.0 - p };
            -a * (1.0 - pt).powf(gamma) * pt.ln()
        })
        .sum::<f64>()
        / n
}

/// Batch-mean focal loss.
pub fn focal_loss(p: &[f64], y: &[u8], alpha: f64, gamma: f64) -> f64 {
    let at: Vec<f64> = y.iter().map(|&y| if y == 1 { alpha } else { 1.0 - alpha }).collect();
    focal_loss_weighted(p, y, &at, gamma)
}

/// Differentiable batch-mean focal loss of logits `(B, 1)`; returns shape `[1]`.
pub fn focal_loss_graph<T: Real>(g: &mut Graph<T>, logits: Var, labels: &[u8], alpha: f64, gamma: f64) -> Var {
    let shape = g.shape(logits).to_vec();
    assert_eq!(shape.iter().product::<usize>(), labels.len(), "one label per logit");
    let col = |f: &dyn Fn(u8) -> f64| {
        Tensor::from_vec(&shape, labels.iter().map(|&y| T::of(f(y))).collect()).expect("label column")
    };
    let sign = g.constant(col(&|y| if y == 1 { 1.0 } else { -1.0 }));
    let offset = g.constant(col(&|y| if y == 1 { 0.0 } else { 1.0 }));
    let weight = g.constant(col(&|y| if y == 1 { alpha } else { 1.0 - alpha }));
    let p = g.sigmoid(logits);
    let p = g.clamp(p, FOCAL_EPS, 1.0 - FOCAL_EPS);
    // p_t = p for positives, 1 - p for negatives
    let pt = g.mul(p, sign);
    let pt = g.add(pt, offset);
    let log_pt = g.log(pt);
    let one_minus = g.scale(pt, -1.0);
    let one_minus = g.add_scalar(one_minus, 1.0);
    let modulator = g.pow_scalar(one_minus, gamma);
    let term = g.mul(modulator, log_pt);
    let term = g.mul(term, weight);
    let mean = g.mean_all(term);
    g.scale(mean, -1.0)
}

/// A case resized to the model input, as `(1, 1, H, W, D)` tensors.
#[derive(Clone, Debug)]
pub struct Example {
    pub id: String,
    pub vol_t: Tensor<f32>,
    pub vol_s: Tensor<f32>,
    pub label: u8,
}

pub fn prepare(cases: &[CasePair], size: [usize; 3]) -> Result<Vec<Example>> {
    let [h, w, d] = size;
    cases
        .iter()
        .map(|c| {
            let fit = |v: &Tensor<f32>| -> Result<Tensor<f32>> {
                let r = if v.shape() == size { v.clone() } else { resize_volume(v, size)? };
                Ok(r.into_reshape(&[1, 1, h, w, d])?)
            };
            Ok(Example {
                id: c.id.clone(),
                vol_t: fit(&c.vol_t)?,
                vol_s: fit(&c.vol_s)?,
                label: c.label,
            })
        })
        .collect()
}

/// Stack the examples at `idx` into `(B, 1, H, W, D)` batches.
pub fn stack(examples: &[Example], idx: &[usize]) -> (Tensor<f32>, Tensor<f32>, Vec<u8>) {
    let t: Vec<&Tensor<f32>> = idx.iter().map(|&i| &examples[i].vol_t).collect();
    let s: Vec<&Tensor<f32>> = idx.iter().map(|&i| &examples[i].vol_s).collect();
    let y = idx.iter().map(|&i| examples[i].label).collect();
    (
        Tensor::concat(&t, 0).expect("equal volume shapes"),
        Tensor::concat(&s, 0).expect("equal volume shapes"),
        y,
    )
}

/// Example order of `epoch`.
pub fn epoch_order(seed: u64, epoch: u64, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

/// Reverse the spatial axes of a `(1, 1, H, W, D)` volume selected by
/// `mask` (bit 0 = `H`, bit 1 = `W`, bit 2 = `D`).
pub fn flip_axes(v: &Tensor<f32>, mask: u8) -> Tensor<f32> {
    if mask == 0 {
        return v.clone();
    }
    let s = v.shape();
    let (h, w, d) = (s[2], s[3], s[4]);
    let src = v.data();
    Tensor::from_fn(s, |flat| {
        let (mut i, mut j, mut k) = (flat / (w * d) % h, flat / d % w, flat % d);
        if mask & 1 != 0 {
            i = h - 1 - i;
        }
        if mask & 2 != 0 {
            j = w - 1 - j;
        }
        if mask & 4 != 0 {
            k = d - 1 - k;
        }
        src[(i * w + j) * d + k]
    })
}

/// Separates the flip stream from the shuffle stream of the same seed.
const FLIP_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Flip masks for the examples of optimizer step `step`.
pub fn flip_masks(seed: u64, step: u64, n: usize) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ FLIP_SALT);
    rng.set_stream(step);
    (0..n).map(|_| rng.gen_range(0..8u8)).collect()
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub loss: f64,
    pub val_auc: Option<f64>,
}

pub struct Trainer {
    pub model: Model,
    pub ckpt: Checkpoint,
    alpha: f64,
    log: Option<PathBuf>,
}

impl Trainer {
    /// Fresh run on `train`; parameters drawn from the model seed.
    pub fn new(model_cfg: &ModelConfig, train_cfg: &TrainConfig, train: &[Example]) -> Result<Self> {
        train_cfg.validate()?;
        let model = Model::build(model_cfg)?;
        let ckpt = Checkpoint {
            model: model_cfg.clone(),
            train: train_cfg.clone(),
            params: model.init(),
            optimizer: Adam::new(AdamConfig {
                lr: train_cfg.lr,
                ..AdamConfig::default()
            }),
            progress: TrainProgress::default(),
        };
        Self::resume(ckpt, train)
    }

    /// Continue the run stored in `ckpt`.
    pub fn resume(ckpt: Checkpoint, train: &[Example]) -> Result<Self> {
        ckpt.train.validate()?;
        let model = Model::build(&ckpt.model)?;
        if train.is_empty() {
            return Err(HvanError::Data("training set is empty".into()));
        }
        let positives = train.iter().filter(|e| e.label == 1).count();
        if positives == 0 || positives == train.len() {
            return Err(HvanError::Data("training set needs both classes".into()));
        }
        let alpha = ckpt
            .train
            .focal_alpha
            .unwrap_or((train.len() - positives) as f64 / train.len() as f64);
        Ok(Self {
            model,
            ckpt,
            alpha,
            log: None,
        })
    }

    /// Append one CSV row per finished epoch to `path`.
    pub fn with_log(mut self, path: impl Into<PathBuf>) -> Self {
        self.log = Some(path.into());
        self
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.ckpt.train.batch_size) as u64
    }

    /// Loss and parameter gradients of one batch.
    pub fn loss_and_grads(&self, vt: &Tensor<f32>, vs: &Tensor<f32>, y: &[u8]) -> Result<(f64, hvan_tensor::ParamStore<f32>)> {
        let mut cx = Ctx::new(&self.ckpt.params);
        let t = self.model.config.use_transverse.then(|| cx.g.constant(vt.clone()));
        let s = self.model.config.use_sagittal.then(|| cx.g.constant(vs.clone()));
        let pass = self.model.forward_graph(&mut cx, t, s)?;
        let loss = focal_loss_graph(&mut cx.g, pass.logits, y, self.alpha, self.ckpt.train.focal_gamma);
        let value = cx.g.value(loss).data()[0].f64();
        if !value.is_finite() {
            return Err(HvanError::Numeric(format!(
                "non-finite loss at step {}",
                self.ckpt.progress.step
            )));
        }
        let grads = cx.g.backward(loss);
        Ok((value, cx.param_grads(&grads)))
    }

    /// One optimizer step on the next batch. Returns the batch loss and, when
    /// the step finished an epoch, that epoch's record.
    pub fn step(&mut self, train: &[Example], val: Option<&[Example]>) -> Result<(f64, Option<EpochRecord>)> {
        let spe = self.steps_per_epoch(train.len());
        let p = &self.ckpt.progress;
        let (epoch, pos) = (p.step / spe, (p.step % spe) as usize);
        let order = epoch_order(self.ckpt.train.seed, epoch, train.len());
        let bs = self.ckpt.train.batch_size;
        let idx = &order[pos * bs..((pos + 1) * bs).min(train.len())];
        let (mut vt, mut vs, y) = stack(train, idx);
        if self.ckpt.train.augment_flips {
            let masks = flip_masks(self.ckpt.train.seed, self.ckpt.progress.step, idx.len());
            let flip = |v: &Tensor<f32>| {
                let parts: Vec<Tensor<f32>> = masks
                    .iter()
                    .enumerate()
                    .map(|(b, &m)| flip_axes(&v.narrow(0, b, 1), m))
                    .collect();
                Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0).expect("equal shapes")
            };
            vt = flip(&vt);
            vs = flip(&vs);
        }
        let (loss, grads) = self.loss_and_grads(&vt, &vs, &y)?;
        self.ckpt.optimizer.step(&mut self.ckpt.params, &grads);
        let p = &mut self.ckpt.progress;
        p.step += 1;
        p.epoch_loss_sum += loss;
        p.epoch_steps += 1;
        if p.step % spe != 0 {
            return Ok((loss, None));
        }
        let record = EpochRecord {
            epoch: p.step / spe,
            loss: p.epoch_loss_sum / p.epoch_steps as f64,
            val_auc: None,
        };
        p.epoch = record.epoch;
        p.epoch_loss_sum = 0.0;
        p.epoch_steps = 0;
        let record = EpochRecord {
            val_auc: match val {
                Some(v) if !v.is_empty() => self.evaluate(v)?.auc,
                _ => None,
            },
            ..record
        };
        self.append_log(&record)?;
        Ok((loss, Some(record)))
    }

    fn append_log(&self, r: &EpochRecord) -> Result<()> {
        let Some(path) = &self.log else { return Ok(()) };
        let fresh = !path.exists();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| HvanError::io(path, e))?;
        let mut line = String::new();
        if fresh {
            line.push_str("epoch,loss,val_auc\n");
        }
        let auc = r.val_auc.map(|a| a.to_string()).unwrap_or_default();
        line.push_str(&format!("{},{},{}\n", r.epoch, r.loss, auc));
        f.write_all(line.as_bytes()).map_err(|e| HvanError::io(path, e))
    }

    /// Whether the configured epochs or step budget are used up.
    pub fn finished(&self, n_train: usize) -> bool {
        let total = self.ckpt.train.epochs * self.steps_per_epoch(n_train);
        let limit = self.ckpt.train.max_steps.map_or(total, |m| m.min(total));
        self.ckpt.progress.step >= limit
    }

    /// Train until [`Self::finished`]; `on_epoch` sees every epoch record.
    pub fn run(
        &mut self,
        train: &[Example],
        val: Option<&[Example]>,
        mut on_epoch: impl FnMut(&EpochRecord),
    ) -> Result<()> {
        while !self.finished(train.len()) {
            if let (_, Some(r)) = self.step(train, val)? {
                on_epoch(&r);
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, cases: &[Example]) -> Result<MetricsReport> {
        evaluate(&self.model, &self.ckpt.params, cases, self.ckpt.train.threshold)
    }
}

/// Train from scratch to completion.
pub fn train(
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    train: &[Example],
    val: Option<&[Example]>,
    log: Option<&Path>,
) -> Result<Checkpoint> {
    let mut t = Trainer::new(model_cfg, train_cfg, train)?;
    if let Some(p) = log {
        t = t.with_log(p);
    }
    t.run(train, val, |_| {})?;
    Ok(t.ckpt)
}

/// Cases scored per forward pass during evaluation.
const EVAL_BATCH: usize = 8;

/// Positive-class probability of every example.
pub fn predict(model: &Model, params: &hvan_tensor::ParamStore<f32>, cases: &[Example]) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..cases.len()).collect();
    let mut out = Vec::with_capacity(cases.len());
    for chunk in idx.chunks(EVAL_BATCH) {
        let (vt, vs, _) = stack(cases, chunk);
        let t = model.config.use_transverse.then_some(&vt);
        let s = model.config.use_sagittal.then_some(&vs);
        out.extend(model.predict_proba(params, t, s)?);
    }
    Ok(out)
}

pub fn evaluate(
    model: &Model,
    params: &hvan_tensor::ParamStore<f32>,
    cases: &[Example],
    threshold: f64,
) -> Result<MetricsReport> {
    let probs = predict(model, params, cases)?;
    let labels: Vec<u8> = cases.iter().map(|c| c.label).collect();
    confusion_metrics(&probs, &labels, threshold)
}

/// Evaluate a checkpoint at its stored threshold.
pub fn evaluate_checkpoint(ckpt: &Checkpoint, cases: &[Example]) -> Result<MetricsReport> {
    let model = Model::build(&ckpt.model)?;
    evaluate(&model, &ckpt.params, cases, ckpt.train.threshold)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn focal_examples() {
        assert!((focal_loss_single(0.5, 1, 1.0, 0.0) - 0.693_147).abs() < 1e-6);
        assert!((focal_loss_single(0.5, 1, 1.0, 2.0) - 0.173_287).abs() < 1e-6);
        assert!(focal_loss_single(1.0 - FOCAL_EPS, 1, 1.0, 2.0) < 1e-12);
    }

    #[test]
    fn graph_loss_matches_scalar_loss() {
        let z = [-2.0, -0.3, 0.0, 1.7, 4.0];
        let y = [0, 1, 0, 1, 1];
        let mut g = Graph::<f64>::new();
        let logits = g.constant(Tensor::from_vec(&[5, 1], z.to_vec()).unwrap());
        let l = focal_loss_graph(&mut g, logits, &y, 0.3, 2.0);
        let p: Vec<f64> = z.iter().map(|&z| crate::network::sigmoid(z)).collect();
        assert!((g.value(l).data()[0] - focal_loss(&p, &y, 0.3, 2.0)).abs() < 1e-12);
    }

    #[test]
    fn epoch_orders_are_permutations_that_vary() {
        let a = epoch_order(1, 0, 10);
        let mut s = a.clone();
        s.sort();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
        assert_ne!(a, epoch_order(1, 1, 10));
        assert_eq!(a, epoch_order(1, 0, 10));
    }
}

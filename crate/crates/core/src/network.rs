//! Dual-stream encoder, fusion, and classification head.
//!
//! Each enabled view has its own stem (stride-2 conv block to half the first
//! stage width) and four stages of stride-2 downsampling, two residual
//! blocks, and the stage's attention modules. After the last stage the
//! streams are fused (adaptive fusion or channel concatenation), globally
//! average-pooled, and mapped to one logit.

use hvan_tensor::{ParamStore, Real, Reduction, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{CvaBlock, HvaStage, IvaBlock, DEFAULT_PROJECTED_TOKENS};
use crate::error::{HvanError, Result};
use crate::fusion::{HvafParams, DEFAULT_REDUCTION};
use crate::nn::{Conv, ConvNormAct, Ctx, Linear, ResidualBlock};
use crate::planes::View;

pub const STAGES: usize = 4;
/// Total spatial downsampling of the encoder.
pub const DOWNSAMPLE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    /// Global average pool followed by one linear layer.
    #[default]
    GapLinear,
}

/// Architecture description. Parameter names and shapes follow from it alone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// `[H, W, D]` of the input volumes.
    pub input_size: [usize; 3],
    pub stage_channels: [usize; STAGES],
    /// Upper bound on compressed tokens per plane, per stage.
    pub projected_tokens: [usize; STAGES],
    pub use_transverse: bool,
    pub use_sagittal: bool,
    pub use_iva: bool,
    pub use_cva: bool,
    pub use_hvaf: bool,
    pub fusion_reduction: usize,
    pub head: Head,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_size: [128; 3],
            stage_channels: [32, 64, 128, 256],
            projected_tokens: [DEFAULT_PROJECTED_TOKENS; STAGES],
            use_transverse: true,
            use_sagittal: true,
            use_iva: true,
            use_cva: true,
            use_hvaf: true,
            fusion_reduction: DEFAULT_REDUCTION,
            head: Head::GapLinear,
            seed: 0,
        }
    }
}

/// One row of the ablation grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub label: &'static str,
    pub transverse: bool,
    pub sagittal: bool,
    pub iva: bool,
    pub cva: bool,
    pub hvaf: bool,
}

/// The eight flag combinations compared in the ablation study, in order.
pub const ABLATION_GRID: [Ablation; 8] = [
    Ablation { label: "TV", transverse: true, sagittal: false, iva: false, cva: false, hvaf: false },
    Ablation { label: "TV+IVA", transverse: true, sagittal: false, iva: true, cva: false, hvaf: false },
    Ablation { label: "SV", transverse: false, sagittal: true, iva: false, cva: false, hvaf: false },
    Ablation { label: "SV+IVA", transverse: false, sagittal: true, iva: true, cva: false, hvaf: false },
    Ablation { label: "TV+SV", transverse: true, sagittal: true, iva: false, cva: false, hvaf: false },
    Ablation { label: "TV+SV+IVA", transverse: true, sagittal: true, iva: true, cva: false, hvaf: false },
    Ablation { label: "TV+SV+IVA+CVA", transverse: true, sagittal: true, iva: true, cva: true, hvaf: false },
    Ablation { label: "TV+SV+IVA+CVA+HVAF", transverse: true, sagittal: true, iva: true, cva: true, hvaf: true },
];

impl ModelConfig {
    /// Copy of `self` with the ablation flags of `row`.
    pub fn with_ablation(&self, row: &Ablation) -> Self {
        Self {
            use_transverse: row.transverse,
            use_sagittal: row.sagittal,
            use_iva: row.iva,
            use_cva: row.cva,
            use_hvaf: row.hvaf,
            ..self.clone()
        }
    }

    pub fn dual_view(&self) -> bool {
        self.use_transverse && self.use_sagittal
    }

    pub fn views(&self) -> Vec<View> {
        let mut v = Vec::new();
        if self.use_transverse {
            v.push(View::Transverse);
        }
        if self.use_sagittal {
            v.push(View::Sagittal);
        }
        v
    }

    /// `[H, W, D]` after the stem and `stage + 1` downsamplings.
    pub fn stage_spatial(&self, stage: usize) -> [usize; 3] {
        self.input_size.map(|n| n >> (stage + 2))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HvanError::Config(m));
        if !self.use_transverse && !self.use_sagittal {
            return bad("at least one view must be enabled".into());
        }
        if self.use_cva && !self.dual_view() {
            return bad("cross-view attention requires both views".into());
        }
        if self.use_hvaf && !self.dual_view() {
            return bad("adaptive fusion requires both views".into());
        }
        if let Some(n) = self.input_size.iter().find(|&&n| n == 0 || n % DOWNSAMPLE != 0) {
            return bad(format!("input extent {n} is not a positive multiple of {DOWNSAMPLE}"));
        }
        if self.stage_channels[0] < 2 || self.stage_channels.iter().any(|&c| c == 0) {
            return bad(format!(
                "stage channels {:?} must be positive with the first at least 2",
                self.stage_channels
            ));
        }
        if self.projected_tokens.iter().any(|&p| p == 0) {
            return bad("projected token counts must be positive".into());
        }
        if self.use_hvaf {
            let both = 2 * self.stage_channels[STAGES - 1];
            if self.fusion_reduction == 0 || both % self.fusion_reduction != 0 {
                return bad(format!(
                    "fusion reduction {} must divide {both}",
                    self.fusion_reduction
                ));
            }
        }
        Ok(())
    }

    /// Width of the pooled feature vector entering the head.
    pub fn head_features(&self) -> usize {
        self.stage_channels[STAGES - 1] * self.views().len()
    }
}

#[derive(Clone, Debug)]
struct EncoderStage {
    down: ConvNormAct,
    blocks: [ResidualBlock; 2],
}

#[derive(Clone, Debug)]
struct Stream {
    stem: ConvNormAct,
    stages: Vec<EncoderStage>,
}

impl Stream {
    fn new(prefix: &str, config: &ModelConfig) -> Self {
        let channels = &config.stage_channels;
        let c0 = channels[0] / 2;
        let voxels = |s: [usize; 3]| s.iter().product::<usize>();
        let stem_voxels = voxels(config.input_size.map(|n| n / 2));
        let stem = ConvNormAct::new(Conv::cube(format!("{prefix}.stem"), 1, c0, 2), stem_voxels);
        let mut cin = c0;
        let stages = channels
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let name = format!("{prefix}.stage{}", i + 1);
                let v = voxels(config.stage_spatial(i));
                let s = EncoderStage {
                    down: ConvNormAct::new(Conv::cube(format!("{name}.down"), cin, c, 2), v),
                    blocks: [
                        ResidualBlock::new(format!("{name}.res0"), c, c, v),
                        ResidualBlock::new(format!("{name}.res1"), c, c, v),
                    ],
                };
                cin = c;
                s
            })
            .collect();
        Self { stem, stages }
    }

    fn init<T: Real>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha8Rng) {
        self.stem.init(store, rng);
        for s in &self.stages {
            s.down.init(store, rng);
            for b in &s.blocks {
                b.init(store, rng);
            }
        }
    }

    fn stage_forward<T: Real>(&self, cx: &mut Ctx<T>, stage: usize, x: Var) -> Var {
        let s = &self.stages[stage];
        let mut y = s.down.forward(cx, x);
        for b in &s.blocks {
            y = b.forward(cx, y);
        }
        y
    }
}

/// Graph handles produced by one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// `(B, 1)`.
    pub logits: Var,
    /// Per stage, the transverse and sagittal maps after its attention modules.
    pub stage_features: Vec<(Option<Var>, Option<Var>)>,
}

/// The assembled network; parameters live in a separate [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    transverse: Option<Stream>,
    sagittal: Option<Stream>,
    attention: Vec<HvaStage>,
    fusion: Option<HvafParams>,
    head: Linear,
}

impl Model {
    pub fn build(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let ch = &config.stage_channels;
        let transverse = config.use_transverse.then(|| Stream::new("t", config));
        let sagittal = config.use_sagittal.then(|| Stream::new("s", config));
        let mut attention = Vec::with_capacity(STAGES);
        for (i, &c) in ch.iter().enumerate() {
            let spatial = config.stage_spatial(i);
            let cap = config.projected_tokens[i];
            let name = format!("stage{}", i + 1);
            let iva = |view: View, on: bool| -> Result<Option<IvaBlock>> {
                (config.use_iva && on)
                    .then(|| IvaBlock::new(&format!("{name}.iva_{}", tag(view)), view, c, spatial, cap))
                    .transpose()
            };
            let cva = |view: View| -> Result<Option<CvaBlock>> {
                config
                    .use_cva
                    .then(|| CvaBlock::new(&format!("{name}.cva_{}", tag(view)), view, c, spatial, cap))
                    .transpose()
            };
            attention.push(HvaStage {
                iva_t: iva(View::Transverse, config.use_transverse)?,
                iva_s: iva(View::Sagittal, config.use_sagittal)?,
                cva_t: cva(View::Transverse)?,
                cva_s: cva(View::Sagittal)?,
            });
        }
        let fusion = config
            .use_hvaf
            .then(|| HvafParams::new("fusion", ch[STAGES - 1], config.fusion_reduction))
            .transpose()?;
        Ok(Self {
            head: Linear::new("head", config.head_features(), 1),
            config: config.clone(),
            transverse,
            sagittal,
            attention,
            fusion,
        })
    }

    /// Fresh parameters drawn from the config seed.
    pub fn init<T: Real>(&self) -> ParamStore<T> {
        self.init_with_seed(self.config.seed)
    }

    pub fn init_with_seed<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for s in [&self.transverse, &self.sagittal].into_iter().flatten() {
            s.init(&mut store, &mut rng);
        }
        for a in &self.attention {
            a.init(&mut store, &mut rng);
        }
        if let Some(f) = &self.fusion {
            f.init(&mut store, &mut rng);
        }
        self.head.init(&mut store, &mut rng);
        store
    }

    /// Shape check for one view's input batch `(B, 1, H, W, D)`.
    pub fn check_input(&self, view: View, shape: &[usize]) -> Result<()> {
        let [h, w, d] = self.config.input_size;
        if shape.len() != 5 || shape[0] == 0 || shape[1] != 1 || shape[2..] != [h, w, d] {
            return Err(HvanError::Shape(format!(
                "{view} input {shape:?}, expected (B, 1, {h}, {w}, {d})"
            )));
        }
        Ok(())
    }

    /// Record the forward pass on `cx`. Inputs of disabled views are ignored;
    /// inputs of enabled views are required.
    pub fn forward_graph<T: Real>(
        &self,
        cx: &mut Ctx<T>,
        v_t: Option<Var>,
        v_s: Option<Var>,
    ) -> Result<ForwardPass> {
        let input = |view: View, stream: &Option<Stream>, v: Option<Var>, cx: &Ctx<T>| -> Result<Option<Var>> {
            if stream.is_none() {
                return Ok(None);
            }
            let v = v.ok_or_else(|| HvanError::Shape(format!("missing {view} input")))?;
            self.check_input(view, cx.g.shape(v))?;
            Ok(Some(v))
        };
        let t_in = input(View::Transverse, &self.transverse, v_t, cx)?;
        let s_in = input(View::Sagittal, &self.sagittal, v_s, cx)?;
        if let (Some(a), Some(b)) = (t_in, s_in) {
            if cx.g.shape(a)[0] != cx.g.shape(b)[0] {
                return Err(HvanError::Shape("view batches differ in size".into()));
            }
        }
        let mut t = t_in.map(|x| self.transverse.as_ref().unwrap().stem.forward(cx, x));
        let mut s = s_in.map(|x| self.sagittal.as_ref().unwrap().stem.forward(cx, x));
        let mut stage_features = Vec::with_capacity(STAGES);
        for (i, hva) in self.attention.iter().enumerate() {
            t = t.map(|x| self.transverse.as_ref().unwrap().stage_forward(cx, i, x));
            s = s.map(|x| self.sagittal.as_ref().unwrap().stage_forward(cx, i, x));
            (t, s) = hva.forward(cx, t, s)?;
            stage_features.push((t, s));
        }
        let fused = match (t, s, &self.fusion) {
            (Some(a), Some(b), Some(f)) => f.forward(cx, a, b)?,
            (Some(a), Some(b), None) => cx.g.concat(&[a, b], 1),
            (Some(a), None, _) | (None, Some(a), _) => a,
            (None, None, _) => unreachable!("config validation guarantees a view"),
        };
        let pooled = cx.g.reduce(fused, &[2, 3, 4], Reduction::Mean);
        let b = cx.g.shape(pooled)[0];
        let flat = cx.g.reshape(pooled, &[b, self.config.head_features()]);
        let logits = self.head.forward(cx, flat);
        Ok(ForwardPass {
            logits,
            stage_features,
        })
    }

    /// Logits `(B, 1)` for concrete inputs `(B, 1, H, W, D)`.
    pub fn forward<T: Real>(
        &self,
        params: &ParamStore<T>,
        v_t: Option<&Tensor<T>>,
        v_s: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        let mut cx = Ctx::frozen(params);
        let t = v_t.map(|v| cx.g.constant(v.clone()));
        let s = v_s.map(|v| cx.g.constant(v.clone()));
        let pass = self.forward_graph(&mut cx, t, s)?;
        let logits = cx.g.value(pass.logits).clone();
        if !logits.all_finite() {
            return Err(HvanError::Numeric("non-finite logits".into()));
        }
        Ok(logits)
    }

    /// Positive-class probabilities, one per batch element.
    pub fn predict_proba<T: Real>(
        &self,
        params: &ParamStore<T>,
        v_t: Option<&Tensor<T>>,
        v_s: Option<&Tensor<T>>,
    ) -> Result<Vec<f64>> {
        let logits = self.forward(params, v_t, v_s)?;
        Ok(logits.data().iter().map(|&z| sigmoid(z.f64())).collect())
    }
}

fn tag(view: View) -> &'static str {
    match view {
        View::Transverse => "t",
        View::Sagittal => "s",
    }
}

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

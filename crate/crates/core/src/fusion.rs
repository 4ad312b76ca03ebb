//! Hybrid-view adaptive fusion.
//!
//! The two streams are concatenated along channels and re-weighted by a
//! channel gate built from spatially average- and max-pooled descriptors fed
//! through a shared two-layer perceptron. The result is split back into its
//! view halves; each half is re-weighted by a spatial gate computed from its
//! own channel-pooled maps by a single 3x3x3 convolution (shared by both
//! views), and the halves are concatenated again.

use hvan_tensor::{Conv3dGeometry, ParamStore, Real, Reduction, Var};
use rand::Rng;

use crate::error::{HvanError, Result};
use crate::nn::{Conv, Ctx, Linear};
use crate::planes::FeatureMap5D;

pub const DEFAULT_REDUCTION: usize = 16;

#[derive(Clone, Debug)]
pub struct HvafParams {
    pub name: String,
    /// Channels per view.
    pub channels: usize,
    pub reduction: usize,
    pub fc1: Linear,
    pub fc2: Linear,
    pub conv: Conv,
}

impl HvafParams {
    pub fn new(name: &str, channels: usize, reduction: usize) -> Result<Self> {
        let both = 2 * channels;
        if reduction == 0 || both % reduction != 0 {
            return Err(HvanError::Config(format!(
                "fusion reduction ratio {reduction} must divide {both} channels"
            )));
        }
        let hidden = both / reduction;
        Ok(Self {
            name: name.to_string(),
            channels,
            reduction,
            fc1: Linear::new(format!("{name}.mlp.fc1"), both, hidden),
            fc2: Linear::new(format!("{name}.mlp.fc2"), hidden, both),
            conv: Conv {
                name: format!("{name}.spatial_conv"),
                cin: 2,
                cout: 1,
                kernel: [3; 3],
                geom: Conv3dGeometry::new(1, [1; 3]),
                bias: true,
            },
        })
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.fc1.init(store, rng);
        self.fc2.init(store, rng);
        self.conv.init(store, rng);
    }

    fn mlp<T: Real>(&self, cx: &mut Ctx<T>, pooled: Var) -> Var {
        let b = cx.g.shape(pooled)[0];
        let flat = cx.g.reshape(pooled, &[b, 2 * self.channels]);
        let h = self.fc1.forward(cx, flat);
        let h = cx.g.relu(h);
        self.fc2.forward(cx, h)
    }

    /// Channel attention map `(B, 2C, 1, 1, 1)` of a concatenated map.
    pub fn channel_gate_map<T: Real>(&self, cx: &mut Ctx<T>, concat: Var) -> Var {
        let s = cx.g.shape(concat).to_vec();
        let avg = cx.g.reduce(concat, &[2, 3, 4], Reduction::Mean);
        let max = cx.g.reduce(concat, &[2, 3, 4], Reduction::Max);
        let a = self.mlp(cx, avg);
        let m = self.mlp(cx, max);
        let logits = cx.g.add(a, m);
        let gate = cx.g.sigmoid(logits);
        cx.g.reshape(gate, &[s[0], s[1], 1, 1, 1])
    }

    /// `A_c ⊙ concat(f_t, f_s)`, with `2C` channels.
    pub fn channel_gate<T: Real>(&self, cx: &mut Ctx<T>, f_t: Var, f_s: Var) -> Result<Var> {
        self.check_pair(cx, f_t, f_s)?;
        let concat = cx.g.concat(&[f_t, f_s], 1);
        let gate = self.channel_gate_map(cx, concat);
        Ok(cx.g.mul(gate, concat))
    }

    /// Spatial attention map `(B, 1, H, W, D)` of one view's features.
    pub fn spatial_gate_map<T: Real>(&self, cx: &mut Ctx<T>, f: Var) -> Var {
        let avg = cx.g.reduce(f, &[1], Reduction::Mean);
        let max = cx.g.reduce(f, &[1], Reduction::Max);
        let stacked = cx.g.concat(&[avg, max], 1);
        let logits = self.conv.forward(cx, stacked);
        cx.g.sigmoid(logits)
    }

    /// `A_s ⊙ f` for one separated view.
    pub fn spatial_gate<T: Real>(&self, cx: &mut Ctx<T>, f: Var) -> Result<Var> {
        let s = cx.g.shape(f);
        if s.len() != 5 || s[1] != self.channels {
            return Err(HvanError::Shape(format!(
                "{}: spatial gate input {s:?} does not have {} channels",
                self.name, self.channels
            )));
        }
        let gate = self.spatial_gate_map(cx, f);
        Ok(cx.g.mul(gate, f))
    }

    /// Channel gate, split, per-view spatial gates, concatenation.
    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, f_t: Var, f_s: Var) -> Result<Var> {
        let gated = self.channel_gate(cx, f_t, f_s)?;
        let c = self.channels;
        let t = cx.g.narrow(gated, 1, 0, c);
        let s = cx.g.narrow(gated, 1, c, c);
        let t = self.spatial_gate(cx, t)?;
        let s = self.spatial_gate(cx, s)?;
        Ok(cx.g.concat(&[t, s], 1))
    }

    fn check_pair<T: Real>(&self, cx: &Ctx<T>, f_t: Var, f_s: Var) -> Result<()> {
        let (a, b) = (cx.g.shape(f_t), cx.g.shape(f_s));
        if a != b || a.len() != 5 || a[1] != self.channels {
            return Err(HvanError::Shape(format!(
                "{}: streams {a:?} and {b:?} must match with {} channels",
                self.name, self.channels
            )));
        }
        Ok(())
    }
}

/// Inference-mode fusion of two concrete maps.
pub fn hvaf_forward<T: Real>(
    f_t: &FeatureMap5D<T>,
    f_s: &FeatureMap5D<T>,
    params: &HvafParams,
    store: &ParamStore<T>,
) -> Result<FeatureMap5D<T>> {
    let mut cx = Ctx::frozen(store);
    let t = cx.g.constant(f_t.tensor().clone());
    let s = cx.g.constant(f_s.tensor().clone());
    let y = params.forward(&mut cx, t, s)?;
    FeatureMap5D::new(cx.g.value(y).clone())
}

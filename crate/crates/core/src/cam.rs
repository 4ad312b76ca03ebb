//! Gradient-weighted class activation maps.
//!
//! For a chosen stage, each stream's feature map `A` (after the stage's
//! attention modules) is weighted per channel by the spatial mean of
//! `∂ logit / ∂ A`, summed over channels, rectified, upsampled to the input
//! size, and min-max normalized to `[0, 1]`.

use hvan_tensor::{ParamStore, Tensor};

use crate::data::{resize_volume, Volume};
use crate::error::{HvanError, Result};
use crate::network::{Model, STAGES};
use crate::nn::Ctx;

/// One map per enabled view, each `[H, W, D]` of the input.
#[derive(Clone, Debug, PartialEq)]
pub struct CamMaps {
    pub transverse: Option<Volume>,
    pub sagittal: Option<Volume>,
}

/// Maps for a single case; `v_t`/`v_s` are `(1, 1, H, W, D)` and `stage` is
/// 1-based.
pub fn grad_cam(
    model: &Model,
    params: &ParamStore<f32>,
    v_t: Option<&Tensor<f32>>,
    v_s: Option<&Tensor<f32>>,
    stage: usize,
) -> Result<CamMaps> {
    if !(1..=STAGES).contains(&stage) {
        return Err(HvanError::Config(format!("stage must be in 1..={STAGES}, got {stage}")));
    }
    let mut cx = Ctx::frozen(params);
    // leaf inputs make every intermediate map differentiable
    let t = model.config.use_transverse.then(|| v_t.map(|v| cx.g.leaf(v.clone()))).flatten();
    let s = model.config.use_sagittal.then(|| v_s.map(|v| cx.g.leaf(v.clone()))).flatten();
    let pass = model.forward_graph(&mut cx, t, s)?;
    if cx.g.shape(pass.logits)[0] != 1 {
        return Err(HvanError::Shape("class activation maps take one case at a time".into()));
    }
    let grads = cx.g.backward(pass.logits);
    let (ft, fs) = pass.stage_features[stage - 1];
    let map = |f: Option<hvan_tensor::Var>| -> Result<Option<Volume>> {
        let Some(f) = f else { return Ok(None) };
        let a = cx.g.value(f);
        let zero = Tensor::zeros(a.shape());
        let g = grads.get(f).unwrap_or(&zero);
        Ok(Some(weighted_map(a, g, model.config.input_size)?))
    };
    Ok(CamMaps {
        transverse: map(ft)?,
        sagittal: map(fs)?,
    })
}

/// `normalize(upsample(ReLU(Σ_c mean(G_c) A_c)))` for one `(1, C, h, w, d)`
/// feature map `a` and its gradient `g`.
pub fn weighted_map(a: &Tensor<f32>, g: &Tensor<f32>, size: [usize; 3]) -> Result<Volume> {
    let s = a.shape();
    let (c, spatial) = (s[1], s[2] * s[3] * s[4]);
    let mut cam = vec![0.0f64; spatial];
    for ch in 0..c {
        let base = ch * spatial;
        let w = g.data()[base..base + spatial].iter().map(|&v| v as f64).sum::<f64>() / spatial as f64;
        for (out, &v) in cam.iter_mut().zip(&a.data()[base..base + spatial]) {
            *out += w * v as f64;
        }
    }
    let cam = Tensor::from_vec(&s[2..], cam.into_iter().map(|v| v.max(0.0) as f32).collect())?;
    Ok(min_max(&resize_volume(&cam, size)?))
}

/// Rescale to `[0, 1]`; a constant volume becomes all zeros.
pub fn min_max(v: &Volume) -> Volume {
    let lo = v.data().iter().copied().fold(f32::INFINITY, f32::min);
    let hi = v.data().iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if hi <= lo {
        return Tensor::zeros(v.shape());
    }
    let span = (hi - lo) as f64;
    v.map(|x| (((x - lo) as f64) / span) as f32)
}

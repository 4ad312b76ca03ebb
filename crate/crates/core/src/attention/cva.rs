//! Cross-view attention and the per-stage hybrid-view composite.
//!
//! To refine stream `X` with the orthogonal stream `Y`, both are folded into
//! planes of `Y`'s imaging plane. Queries come from `Y`; keys and both
//! values come from `X`, and the residual adds `X`'s own planar features.

use hvan_tensor::{ParamStore, Real, Var};
use rand::Rng;

use super::epa::{paired_attention, EpaParams};
use super::iva::IvaBlock;
use crate::error::{HvanError, Result};
use crate::nn::{Ctx, ResidualBlock};
use crate::planes::{tokens_of, untokens, FeatureMap5D, View};

#[derive(Clone, Debug)]
pub struct CvaBlock {
    /// Stream whose features are refined (and replaced).
    pub refined: View,
    pub epa: EpaParams,
    pub refine: ResidualBlock,
}

impl CvaBlock {
    pub fn new(
        name: &str,
        refined: View,
        channels: usize,
        spatial: [usize; 3],
        projected_cap: usize,
    ) -> Result<Self> {
        let plane = refined.other();
        let tokens = plane.tokens(spatial);
        let epa = EpaParams::new(
            format!("{name}.epa"),
            channels,
            tokens,
            projected_cap.min(tokens),
        )?;
        let (kernel, padding) = plane.in_plane_kernel();
        let refine =
            ResidualBlock::with_kernel(
            format!("{name}.refine"),
            channels,
            channels,
            kernel,
            padding,
            spatial.iter().product(),
        );
        Ok(Self {
            refined,
            epa,
            refine,
        })
    }

    /// View whose planes the attention runs on.
    pub fn plane(&self) -> View {
        self.refined.other()
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.epa.init(store, rng);
        self.refine.init(store, rng);
    }

    /// Cross attention plus residual, without refinement.
    pub fn attend<T: Real>(&self, cx: &mut Ctx<T>, refined: Var, query: Var) -> Result<Var> {
        let dims = cx.g.shape(refined).to_vec();
        if dims != cx.g.shape(query) {
            return Err(HvanError::Shape(format!(
                "{}: refined stream {dims:?} vs query stream {:?}",
                self.epa.name,
                cx.g.shape(query)
            )));
        }
        if dims.len() != 5 || dims[1] != self.epa.channels {
            return Err(HvanError::Shape(format!(
                "{}: input {dims:?} does not have {} channels",
                self.epa.name, self.epa.channels
            )));
        }
        let plane = self.plane();
        let kv = tokens_of(&mut cx.g, refined, plane);
        let q = tokens_of(&mut cx.g, query, plane);
        let y = paired_attention(cx, q, kv, &self.epa)?;
        Ok(untokens(
            &mut cx.g,
            y,
            plane,
            [dims[0], dims[1], dims[2], dims[3], dims[4]],
        ))
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, refined: Var, query: Var) -> Result<Var> {
        let y = self.attend(cx, refined, query)?;
        Ok(self.refine.forward(cx, y))
    }
}

/// Refine the transverse stream using sagittal queries on sagittal planes.
pub fn cva_refine_transverse<T: Real>(
    f_t: &FeatureMap5D<T>,
    f_s: &FeatureMap5D<T>,
    block: &CvaBlock,
    params: &ParamStore<T>,
) -> Result<FeatureMap5D<T>> {
    debug_assert_eq!(block.refined, View::Transverse);
    run_cva(f_t, f_s, block, params)
}

/// Refine the sagittal stream using transverse queries on transverse planes.
pub fn cva_refine_sagittal<T: Real>(
    f_t: &FeatureMap5D<T>,
    f_s: &FeatureMap5D<T>,
    block: &CvaBlock,
    params: &ParamStore<T>,
) -> Result<FeatureMap5D<T>> {
    debug_assert_eq!(block.refined, View::Sagittal);
    run_cva(f_s, f_t, block, params)
}

fn run_cva<T: Real>(
    refined: &FeatureMap5D<T>,
    query: &FeatureMap5D<T>,
    block: &CvaBlock,
    params: &ParamStore<T>,
) -> Result<FeatureMap5D<T>> {
    let mut cx = Ctx::frozen(params);
    let r = cx.g.constant(refined.tensor().clone());
    let q = cx.g.constant(query.tensor().clone());
    let y = block.forward(&mut cx, r, q)?;
    FeatureMap5D::new(cx.g.value(y).clone())
}

/// Attention modules of one encoder stage. Absent blocks are skipped
/// (ablations).
#[derive(Clone, Debug, Default)]
pub struct HvaStage {
    pub iva_t: Option<IvaBlock>,
    pub iva_s: Option<IvaBlock>,
    pub cva_t: Option<CvaBlock>,
    pub cva_s: Option<CvaBlock>,
}

impl HvaStage {
    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        if let Some(b) = &self.iva_t {
            b.init(store, rng);
        }
        if let Some(b) = &self.iva_s {
            b.init(store, rng);
        }
        if let Some(b) = &self.cva_t {
            b.init(store, rng);
        }
        if let Some(b) = &self.cva_s {
            b.init(store, rng);
        }
    }

    /// Intra-view attention on each present stream, then both cross-view
    /// refinements computed from the same post-IVA pair.
    pub fn forward<T: Real>(
        &self,
        cx: &mut Ctx<T>,
        f_t: Option<Var>,
        f_s: Option<Var>,
    ) -> Result<(Option<Var>, Option<Var>)> {
        let t = match (&self.iva_t, f_t) {
            (Some(b), Some(x)) => Some(b.forward(cx, x)?),
            (_, x) => x,
        };
        let s = match (&self.iva_s, f_s) {
            (Some(b), Some(x)) => Some(b.forward(cx, x)?),
            (_, x) => x,
        };
        let (Some(t0), Some(s0)) = (t, s) else {
            if self.cva_t.is_some() || self.cva_s.is_some() {
                return Err(HvanError::Config(
                    "cross-view attention needs both streams".into(),
                ));
            }
            return Ok((t, s));
        };
        let t1 = match &self.cva_t {
            Some(b) => b.forward(cx, t0, s0)?,
            None => t0,
        };
        let s1 = match &self.cva_s {
            Some(b) => b.forward(cx, s0, t0)?,
            None => s0,
        };
        Ok((Some(t1), Some(s1)))
    }
}

/// Inference-mode stage on concrete maps.
pub fn hva_stage<T: Real>(
    f_t: &FeatureMap5D<T>,
    f_s: &FeatureMap5D<T>,
    stage: &HvaStage,
    params: &ParamStore<T>,
) -> Result<(FeatureMap5D<T>, FeatureMap5D<T>)> {
    if f_t.dims() != f_s.dims() {
        return Err(HvanError::Shape(format!(
            "stream shapes differ: {:?} vs {:?}",
            f_t.dims(),
            f_s.dims()
        )));
    }
    let mut cx = Ctx::frozen(params);
    let t = cx.g.constant(f_t.tensor().clone());
    let s = cx.g.constant(f_s.tensor().clone());
    let (t, s) = stage.forward(&mut cx, Some(t), Some(s))?;
    Ok((
        FeatureMap5D::new(cx.g.value(t.unwrap()).clone())?,
        FeatureMap5D::new(cx.g.value(s.unwrap()).clone())?,
    ))
}

//! Intra-view attention: paired attention over the planes of one view,
//! followed by an in-plane residual refinement.

use hvan_tensor::{ParamStore, Real, Var};
use rand::Rng;

use super::epa::{paired_attention, EpaParams};
use crate::error::{HvanError, Result};
use crate::nn::{Ctx, ResidualBlock};
use crate::planes::{tokens_of, untokens, FeatureMap5D, View};

#[derive(Clone, Debug)]
pub struct IvaBlock {
    pub view: View,
    pub epa: EpaParams,
    pub refine: ResidualBlock,
}

impl IvaBlock {
    /// Block for `channels`-wide maps of spatial extent `spatial = [H, W, D]`,
    /// compressing each plane's tokens to at most `projected_cap`.
    pub fn new(
        name: &str,
        view: View,
        channels: usize,
        spatial: [usize; 3],
        projected_cap: usize,
    ) -> Result<Self> {
        let tokens = view.tokens(spatial);
        let epa = EpaParams::new(
            format!("{name}.epa"),
            channels,
            tokens,
            projected_cap.min(tokens),
        )?;
        let (kernel, padding) = view.in_plane_kernel();
        let refine =
            ResidualBlock::with_kernel(
            format!("{name}.refine"),
            channels,
            channels,
            kernel,
            padding,
            spatial.iter().product(),
        );
        Ok(Self { view, epa, refine })
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.epa.init(store, rng);
        self.refine.init(store, rng);
    }

    fn check(&self, dims: &[usize]) -> Result<()> {
        if dims.len() != 5 || dims[1] != self.epa.channels {
            return Err(HvanError::Shape(format!(
                "{}: input {dims:?} does not have {} channels",
                self.epa.name, self.epa.channels
            )));
        }
        Ok(())
    }

    /// Attention over planes plus the residual input, reshaped back to
    /// `(B, C, H, W, D)`; no refinement.
    pub fn attend<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let dims = cx.g.shape(x).to_vec();
        self.check(&dims)?;
        let t = tokens_of(&mut cx.g, x, self.view);
        let y = paired_attention(cx, t, t, &self.epa)?;
        Ok(untokens(
            &mut cx.g,
            y,
            self.view,
            [dims[0], dims[1], dims[2], dims[3], dims[4]],
        ))
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Result<Var> {
        let y = self.attend(cx, x)?;
        Ok(self.refine.forward(cx, y))
    }
}

/// Inference-mode intra-view attention on a concrete feature map.
pub fn iva_forward<T: Real>(
    f: &FeatureMap5D<T>,
    block: &IvaBlock,
    params: &ParamStore<T>,
) -> Result<FeatureMap5D<T>> {
    let mut cx = Ctx::frozen(params);
    let x = cx.g.constant(f.tensor().clone());
    let y = block.forward(&mut cx, x)?;
    FeatureMap5D::new(cx.g.value(y).clone())
}

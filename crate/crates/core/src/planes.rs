//! Volume axis conventions and the view-plane reshapes.
//!
//! Feature maps are `(B, C, H, W, D)`. The transverse view images the
//! `(H, W)` plane and scans along `D`; the sagittal view images `(W, D)` and
//! scans along `H`. Attention within a view runs on planar batches where the
//! scanning axis has been folded into the batch: plane `d` of sample `b`
//! becomes batch row `b * D + d` (transverse) and plane `h` becomes
//! `b * H + h` (sagittal).

use hvan_tensor::{Graph, Real, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{HvanError, Result};

/// Acquisition view of a stream, which fixes its imaging plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Transverse,
    Sagittal,
}

impl View {
    pub fn other(self) -> View {
        match self {
            View::Transverse => View::Sagittal,
            View::Sagittal => View::Transverse,
        }
    }

    /// Index of the scanning axis within `(B, C, H, W, D)`.
    pub fn imaging_axis(self) -> usize {
        match self {
            View::Transverse => 4,
            View::Sagittal => 2,
        }
    }

    /// In-plane extents `(A1, A2)` of a `(H, W, D)` volume.
    pub fn plane_extent(self, [h, w, d]: [usize; 3]) -> (usize, usize) {
        match self {
            View::Transverse => (h, w),
            View::Sagittal => (w, d),
        }
    }

    /// Number of tokens per plane.
    pub fn tokens(self, spatial: [usize; 3]) -> usize {
        let (a, b) = self.plane_extent(spatial);
        a * b
    }

    /// 3D kernel extents that act only within this view's plane.
    pub fn in_plane_kernel(self) -> ([usize; 3], [usize; 3]) {
        match self {
            View::Transverse => ([3, 3, 1], [1, 1, 0]),
            View::Sagittal => ([1, 3, 3], [0, 1, 1]),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Transverse => "transverse",
            View::Sagittal => "sagittal",
        }
    }

    /// Axis order taking `(B, C, H, W, D)` to `(B, S, C, A1, A2)`.
    fn to_planes_axes(self) -> [usize; 5] {
        match self {
            View::Transverse => [0, 4, 1, 2, 3],
            View::Sagittal => [0, 2, 1, 3, 4],
        }
    }

    /// Inverse of [`Self::to_planes_axes`].
    fn from_planes_axes(self) -> [usize; 5] {
        match self {
            View::Transverse => [0, 2, 3, 4, 1],
            View::Sagittal => [0, 2, 1, 3, 4],
        }
    }

    /// Axis order taking `(B, C, H, W, D)` to `(B, S, A1, A2, C)`, i.e.
    /// planes already laid out as token rows.
    fn to_tokens_axes(self) -> [usize; 5] {
        match self {
            View::Transverse => [0, 4, 2, 3, 1],
            View::Sagittal => [0, 2, 3, 4, 1],
        }
    }

    fn from_tokens_axes(self) -> [usize; 5] {
        match self {
            View::Transverse => [0, 4, 2, 3, 1],
            View::Sagittal => [0, 4, 1, 2, 3],
        }
    }
}

impl std::fmt::Display for View {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Batched five-axis feature tensor `(B, C, H, W, D)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap5D<T> {
    data: Tensor<T>,
}

impl<T: Real> FeatureMap5D<T> {
    pub fn new(data: Tensor<T>) -> Result<Self> {
        let s = data.shape();
        if s.len() != 5 || s.iter().any(|&n| n == 0) {
            return Err(HvanError::Shape(format!(
                "feature map must be (B, C, H, W, D) with positive extents, got {s:?}"
            )));
        }
        if !data.all_finite() {
            return Err(HvanError::Numeric("feature map contains non-finite values".into()));
        }
        Ok(Self { data })
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.data
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.data
    }

    /// `[B, C, H, W, D]`.
    pub fn dims(&self) -> [usize; 5] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3], s[4]]
    }
}

/// A feature map with one view's scanning axis folded into the batch.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarBatch<T> {
    pub data: Tensor<T>,
    pub origin: View,
    /// `(B, H, W, D)` of the source map.
    pub parent_dims: [usize; 4],
}

pub fn to_transverse_planes<T: Real>(f: &FeatureMap5D<T>) -> PlanarBatch<T> {
    to_planes(f, View::Transverse)
}

pub fn to_sagittal_planes<T: Real>(f: &FeatureMap5D<T>) -> PlanarBatch<T> {
    to_planes(f, View::Sagittal)
}

pub fn to_planes<T: Real>(f: &FeatureMap5D<T>, view: View) -> PlanarBatch<T> {
    let [b, c, h, w, d] = f.dims();
    let (a1, a2) = view.plane_extent([h, w, d]);
    let scan = f.dims()[view.imaging_axis()];
    let data = f
        .tensor()
        .permute(&view.to_planes_axes())
        .into_reshape(&[b * scan, c, a1, a2])
        .expect("plane reshape preserves length");
    PlanarBatch {
        data,
        origin: view,
        parent_dims: [b, h, w, d],
    }
}

pub fn from_planes<T: Real>(p: &PlanarBatch<T>) -> Result<FeatureMap5D<T>> {
    let [b, h, w, d] = p.parent_dims;
    let s = p.data.shape();
    let (a1, a2) = p.origin.plane_extent([h, w, d]);
    let scan = match p.origin {
        View::Transverse => d,
        View::Sagittal => h,
    };
    if s.len() != 4 || s[0] != b * scan || s[2] != a1 || s[3] != a2 {
        return Err(HvanError::Shape(format!(
            "{} planar batch {s:?} inconsistent with parent (B,H,W,D) = {:?}",
            p.origin, p.parent_dims
        )));
    }
    let c = s[1];
    let data = p
        .data
        .reshape(&[b, scan, c, a1, a2])?
        .permute(&p.origin.from_planes_axes());
    FeatureMap5D::new(data)
}

// ---- graph counterparts ------------------------------------------------------

/// `(B, C, H, W, D)` -> token rows `(B * S, A1 * A2, C)` for `view`.
pub fn tokens_of(g: &mut Graph<impl Real>, x: Var, view: View) -> Var {
    let s = g.shape(x).to_vec();
    let (b, c) = (s[0], s[1]);
    let scan = s[view.imaging_axis()];
    let n = view.tokens([s[2], s[3], s[4]]);
    let p = g.permute(x, &view.to_tokens_axes());
    g.reshape(p, &[b * scan, n, c])
}

/// Inverse of [`tokens_of`] for a map of shape `dims = [B, C, H, W, D]`.
pub fn untokens(g: &mut Graph<impl Real>, t: Var, view: View, dims: [usize; 5]) -> Var {
    let [b, c, h, w, d] = dims;
    let (a1, a2) = view.plane_extent([h, w, d]);
    let scan = dims[view.imaging_axis()];
    let r = g.reshape(t, &[b, scan, a1, a2, c]);
    g.permute(r, &view.from_tokens_axes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: &[usize]) -> FeatureMap5D<f64> {
        FeatureMap5D::new(Tensor::from_fn(shape, |i| i as f64)).unwrap()
    }

    #[test]
    fn transverse_shape() {
        let p = to_transverse_planes(&ramp(&[2, 3, 4, 5, 6]));
        assert_eq!(p.data.shape(), &[12, 3, 4, 5]);
    }

    #[test]
    fn sagittal_shape() {
        let p = to_sagittal_planes(&ramp(&[1, 2, 3, 4, 5]));
        assert_eq!(p.data.shape(), &[3, 2, 4, 5]);
    }

    #[test]
    fn single_voxel_lands_at_documented_index() {
        let mut t = Tensor::<f64>::zeros(&[2, 3, 4, 5, 6]);
        t.set(&[1, 0, 2, 3, 4], 1.0);
        let p = to_transverse_planes(&FeatureMap5D::new(t).unwrap());
        assert_eq!(p.data.get(&[6 + 4, 0, 2, 3]), 1.0);
        assert_eq!(p.data.sum(), 1.0);

        let mut t = Tensor::<f64>::zeros(&[1, 2, 3, 4, 5]);
        t.set(&[0, 1, 2, 1, 0], 1.0);
        let p = to_sagittal_planes(&FeatureMap5D::new(t).unwrap());
        assert_eq!(p.data.get(&[2, 1, 1, 0]), 1.0);
        assert_eq!(p.data.sum(), 1.0);
    }

    #[test]
    fn zero_round_trips_to_zero() {
        let z = FeatureMap5D::new(Tensor::<f32>::zeros(&[1, 2, 2, 2, 2])).unwrap();
        for view in [View::Transverse, View::Sagittal] {
            assert_eq!(from_planes(&to_planes(&z, view)).unwrap(), z);
        }
    }

    #[test]
    fn rejects_inconsistent_parent_dims() {
        let mut p = to_transverse_planes(&ramp(&[1, 2, 3, 4, 5]));
        p.parent_dims = [1, 3, 4, 4];
        assert!(matches!(from_planes(&p), Err(HvanError::Shape(_))));
    }

    #[test]
    fn rejects_bad_feature_maps() {
        assert!(FeatureMap5D::new(Tensor::<f32>::zeros(&[1, 2, 3, 4])).is_err());
        assert!(FeatureMap5D::new(Tensor::<f32>::zeros(&[1, 0, 3, 4, 1])).is_err());
        assert!(FeatureMap5D::new(Tensor::<f32>::full(&[1, 1, 1, 1, 1], f32::NAN)).is_err());
    }

    #[test]
    fn token_layout_matches_planar_layout() {
        let f = ramp(&[2, 3, 2, 4, 5]);
        for view in [View::Transverse, View::Sagittal] {
            let planar = to_planes(&f, view);
            let [bp, c, a1, a2] = [
                planar.data.shape()[0],
                planar.data.shape()[1],
                planar.data.shape()[2],
                planar.data.shape()[3],
            ];
            let want = planar
                .data
                .reshape(&[bp, c, a1 * a2])
                .unwrap()
                .permute(&[0, 2, 1]);
            let mut g = Graph::new();
            let x = g.constant(f.tensor().clone());
            let t = tokens_of(&mut g, x, view);
            assert_eq!(g.value(t), &want);
            let back = untokens(&mut g, t, view, f.dims());
            assert_eq!(g.value(back), f.tensor());
        }
    }
}

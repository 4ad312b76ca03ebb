//! Fold a feature map into transverse and sagittal plane batches and back.

use hvan::planes::{from_planes, to_planes, FeatureMap5D, View};
use hvan_tensor::Tensor;

fn main() -> hvan::Result<()> {
    // (B, C, H, W, D) with every entry equal to its flat index
    let f = FeatureMap5D::new(Tensor::from_fn(&[2, 3, 4, 5, 6], |i| i as f32))?;
    for view in [View::Transverse, View::Sagittal] {
        let planes = to_planes(&f, view);
        let back = from_planes(&planes)?;
        println!(
            "{:<10} imaging axis {}  planes {:?}  tokens per plane {}  round trip exact: {}",
            view.name(),
            ["H", "W", "D"][view.imaging_axis() - 2],
            planes.data.shape(),
            view.tokens([4, 5, 6]),
            back == f
        );
    }
    Ok(())
}

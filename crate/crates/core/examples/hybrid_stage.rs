//! One encoder stage of hybrid-view attention: intra-view attention on each
//! stream, then cross-view refinement of each stream from the other.

use hvan::attention::{hva_stage, CvaBlock, HvaStage, IvaBlock};
use hvan::planes::{FeatureMap5D, View};
use hvan_tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hvan::Result<()> {
    let (channels, spatial) = (8, [6, 5, 4]);
    let stage = HvaStage {
        iva_t: Some(IvaBlock::new("iva_t", View::Transverse, channels, spatial, 64)?),
        iva_s: Some(IvaBlock::new("iva_s", View::Sagittal, channels, spatial, 64)?),
        cva_t: Some(CvaBlock::new("cva_t", View::Transverse, channels, spatial, 64)?),
        cva_s: Some(CvaBlock::new("cva_s", View::Sagittal, channels, spatial, 64)?),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    stage.init::<f64, _>(&mut store, &mut rng);

    let shape = [2, channels, spatial[0], spatial[1], spatial[2]];
    let f_t = FeatureMap5D::new(Tensor::<f64>::randn(&shape, 1.0, &mut rng))?;
    let f_s = FeatureMap5D::new(Tensor::<f64>::randn(&shape, 1.0, &mut rng))?;
    let (t, s) = hva_stage(&f_t, &f_s, &stage, &store)?;

    let params: usize = store.values().map(|p| p.len()).sum();
    println!("stage parameters: {params} in {} tensors", store.len());
    println!("transverse stream {:?} -> {:?}", f_t.dims(), t.dims());
    println!("sagittal stream   {:?} -> {:?}", f_s.dims(), s.dims());
    Ok(())
}

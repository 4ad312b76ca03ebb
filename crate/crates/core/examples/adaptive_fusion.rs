//! Hybrid-view adaptive fusion of two feature maps, with the channel and
//! spatial gates shown separately.

use hvan::fusion::{hvaf_forward, HvafParams, DEFAULT_REDUCTION};
use hvan::nn::Ctx;
use hvan::planes::FeatureMap5D;
use hvan_tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hvan::Result<()> {
    let channels = 32;
    let fusion = HvafParams::new("hvaf", channels, DEFAULT_REDUCTION)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    fusion.init::<f32, _>(&mut store, &mut rng);

    let shape = [1, channels, 4, 4, 4];
    let f_t = FeatureMap5D::new(Tensor::<f32>::randn(&shape, 1.0, &mut rng))?;
    let f_s = FeatureMap5D::new(Tensor::<f32>::randn(&shape, 1.0, &mut rng))?;

    let mut cx = Ctx::frozen(&store);
    let t = cx.g.constant(f_t.tensor().clone());
    let s = cx.g.constant(f_s.tensor().clone());
    let both = cx.g.concat(&[t, s], 1);
    let channel_gate = fusion.channel_gate_map(&mut cx, both);
    let gate = cx.g.value(channel_gate).data();
    let (lo, hi) = gate.iter().fold((f32::MAX, f32::MIN), |(l, h), &x| (l.min(x), h.max(x)));
    println!("channel gate {:?} in [{lo:.3}, {hi:.3}]", cx.g.shape(channel_gate));

    let fused = hvaf_forward(&f_t, &f_s, &fusion, &store)?;
    println!("fused map {:?} from two {:?} views", fused.dims(), f_t.dims());
    Ok(())
}

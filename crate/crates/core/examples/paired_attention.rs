//! Efficient paired attention on random tokens: the compressed spatial map,
//! the channel map, and the combined update.

use hvan::attention::{epa_project, paired_attention, EpaParams};
use hvan::attention::epa::{channel_attention_map, spatial_attention_map};
use hvan::nn::Ctx;
use hvan_tensor::{ParamStore, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> hvan::Result<()> {
    let (planes, tokens, channels, projected) = (3, 100, 16, 32);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let epa = EpaParams::new("epa", channels, tokens, projected)?;
    let mut store = ParamStore::new();
    epa.init::<f32, _>(&mut store, &mut rng);

    let x = Tensor::<f32>::randn(&[planes, tokens, channels], 1.0, &mut rng);
    let mut cx = Ctx::frozen(&store);
    let t = cx.g.constant(x);
    let p = epa_project(&mut cx, t, t, &epa)?;
    let (spatial, compressed) = spatial_attention_map(&mut cx, &p, &epa);
    let channel = channel_attention_map(&mut cx, &p, &epa);
    let out = paired_attention(&mut cx, t, t, &epa)?;

    let row_sum = |v| cx.g.value(v).data()[..cx.g.shape(v)[2]].iter().sum::<f32>();
    println!("spatial map {:?} (first row sums to {:.6})", cx.g.shape(spatial), row_sum(spatial));
    println!("compressed values {:?}", cx.g.shape(compressed));
    println!("channel map {:?} (first row sums to {:.6})", cx.g.shape(channel), row_sum(channel));
    println!("output {:?}", cx.g.shape(out));
    Ok(())
}

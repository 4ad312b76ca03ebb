//! Dense loop evaluation of paired attention, used as an independent oracle.

use hvan::attention::epa::{channel_attention, epa_project, paired_attention, spatial_attention, EpaParams};
use hvan::nn::Ctx;
use hvan_tensor::graph::NORM_EPS;
use hvan_tensor::{ParamStore, Tensor};
use rand::Rng;

use super::{randn, rng};

pub type Mat = Vec<Vec<f64>>;

pub fn epa_store(p: &EpaParams, seed: u64) -> ParamStore<f64> {
    let mut store = ParamStore::new();
    p.init(&mut store, &mut rng(seed));
    store
}

/// Replace every parameter of `p` with a generic random value so no test
/// relies on the structure of the default initialization.
pub fn randomize(store: &mut ParamStore<f64>, p: &EpaParams, seed: u64) {
    let mut r = rng(seed);
    for (name, t) in store.iter_mut() {
        if !name.starts_with(&p.name) {
            continue;
        }
        *t = if name.ends_with("temp_spatial") || name.ends_with("temp_channel") {
            Tensor::scalar(r.gen_range(0.5..3.0))
        } else {
            Tensor::randn(t.shape(), 0.7, &mut r)
        };
    }
}

pub fn rows(t: &Tensor<f64>, b: usize) -> Mat {
    let (n, c) = (t.shape()[1], t.shape()[2]);
    (0..n).map(|i| (0..c).map(|j| t.get(&[b, i, j])).collect()).collect()
}

pub fn matrix(t: &Tensor<f64>) -> Mat {
    let (r, c) = (t.shape()[0], t.shape()[1]);
    (0..r).map(|i| (0..c).map(|j| t.get(&[i, j])).collect()).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

/// Dense loop evaluation of the paired attention block for one batch row.
pub struct Oracle {
    pub q: Mat,
    pub k: Mat,
    pub vs: Mat,
    pub vc: Mat,
    pub spatial: Mat,
    pub channel: Mat,
    pub out: Mat,
}

pub fn oracle(store: &ParamStore<f64>, p: &EpaParams, q_tokens: &Mat, kv_tokens: &Mat) -> Oracle {
    let c = p.channels;
    let gamma = store[&format!("{}.norm.gamma", p.name)].data().to_vec();
    let beta = store[&format!("{}.norm.beta", p.name)].data().to_vec();
    let norm = |x: &Vec<f64>| -> Vec<f64> {
        let mean = x.iter().sum::<f64>() / c as f64;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c as f64;
        (0..c).map(|j| (x[j] - mean) / (var + NORM_EPS).sqrt() * gamma[j] + beta[j]).collect()
    };
    let linear = |lin: &hvan::nn::Linear, x: &Mat| -> Mat {
        let w = matrix(&store[&lin.weight()]);
        let b = store[&lin.bias()].data();
        x.iter()
            .map(|row| (0..c).map(|j| b[j] + (0..c).map(|i| row[i] * w[i][j]).sum::<f64>()).collect())
            .collect()
    };
    let qn: Mat = q_tokens.iter().map(norm).collect();
    let kvn: Mat = kv_tokens.iter().map(norm).collect();
    let q = linear(&p.query, &qn);
    let k = linear(&p.key, &kvn);
    let vs = linear(&p.value_spatial, &kvn);
    let vc = linear(&p.value_channel, &kvn);

    let n = q.len();
    let ek = matrix(&store[&p.key_proj()]);
    let ev = matrix(&store[&p.value_proj()]);
    let gs = store[&p.temp_spatial()].data()[0];
    let gc = store[&p.temp_channel()].data()[0];
    let project = |e: &Mat, x: &Mat| -> Mat {
        e.iter()
            .map(|er| (0..c).map(|j| (0..n).map(|t| er[t] * x[t][j]).sum()).collect())
            .collect()
    };
    let kp = project(&ek, &k);
    let vp = project(&ev, &vs);
    let spatial: Mat = q
        .iter()
        .map(|qi| {
            let logits: Vec<f64> = kp.iter().map(|kr| (0..c).map(|j| qi[j] * kr[j]).sum::<f64>() / gs).collect();
            let a = softmax(&logits);
            (0..c).map(|j| (0..a.len()).map(|r| a[r] * vp[r][j]).sum()).collect()
        })
        .collect();
    let map: Mat = (0..c)
        .map(|i| {
            let logits: Vec<f64> = (0..c).map(|j| (0..n).map(|t| q[t][i] * k[t][j]).sum::<f64>() / gc).collect();
            softmax(&logits)
        })
        .collect();
    let channel: Mat = vc
        .iter()
        .map(|vr| (0..c).map(|j| (0..c).map(|i| vr[i] * map[i][j]).sum()).collect())
        .collect();
    let out = (0..n)
        .map(|t| (0..c).map(|j| spatial[t][j] + channel[t][j] + kv_tokens[t][j]).collect())
        .collect();
    Oracle { q, k, vs, vc, spatial, channel, out }
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    a.iter()
        .flatten()
        .zip(b.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn identity(n: usize) -> Tensor<f64> {
    Tensor::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
}

// ---- hand-evaluated cases --------------------------------------------------


/// Worst deviation of the spatial, channel, and combined outputs from
/// [`oracle`] over `instances` random blocks with `C <= 8` and `N <= 16`.
/// Odd instances replace the default initialization with generic values;
/// two thirds of them attend across two different token sets.
pub fn dense_sweep(instances: u64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for k in 0..instances {
        let c = r.gen_range(1..=8);
        let n = r.gen_range(1..=16);
        let proj_tokens = r.gen_range(1..=n);
        let batch = r.gen_range(1..=2);
        let p = EpaParams::new("a", c, n, proj_tokens).unwrap();
        let mut store = epa_store(&p, k);
        if k % 2 == 1 {
            randomize(&mut store, &p, 1000 + k);
        }
        let (xq, xkv) = (randn(&[batch, n, c], 2 * k), randn(&[batch, n, c], 2 * k + 1));
        let cross = k % 3 != 0;
        let mut cx = Ctx::frozen(&store);
        let kv = cx.g.constant(xkv.clone());
        let q = if cross { cx.g.constant(xq.clone()) } else { kv };
        let proj = epa_project(&mut cx, q, kv, &p).unwrap();
        let s = spatial_attention(&mut cx, &proj, &p);
        let ch = channel_attention(&mut cx, &proj, &p);
        let out = paired_attention(&mut cx, q, kv, &p).unwrap();
        for b in 0..batch {
            let qrows = rows(if cross { &xq } else { &xkv }, b);
            let o = oracle(&store, &p, &qrows, &rows(&xkv, b));
            for (got, want) in [
                (proj.query, &o.q),
                (proj.key, &o.k),
                (proj.value_spatial, &o.vs),
                (proj.value_channel, &o.vc),
                (s, &o.spatial),
                (ch, &o.channel),
                (out, &o.out),
            ] {
                worst = worst.max(max_diff(&rows(cx.g.value(got), b), want));
            }
        }
    }
    worst
}

//! Helpers shared by the integration tests.
#![allow(dead_code)]

pub mod epa_oracle;
pub mod grad_cases;

use hvan::nn::Ctx;
use hvan_tensor::gradcheck::{central_difference, central_difference_param, GradCheckReport};
use hvan_tensor::{ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
/// Step for whole-network checks, small enough not to straddle ReLU kinks.
pub const FD_STEP_NETWORK: f64 = 1e-7;
pub const GRAD_TOL: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut rng(seed))
}

/// `sum(y ⊙ r)` for a fixed random `r`, turning any output into a scalar
/// whose gradient exercises every output element.
pub fn project(cx: &mut Ctx<f64>, y: Var, seed: u64) -> Var {
    let r = randn(cx.g.shape(y), seed);
    let r = cx.g.constant(r);
    let p = cx.g.mul(y, r);
    cx.g.sum_all(p)
}

fn sample_indices(len: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= k {
        (0..len).collect()
    } else {
        (0..k).map(|_| rng.gen_range(0..len)).collect()
    }
}

/// Compare reverse-mode gradients of the scalar `loss` with central
/// differences on up to `per_tensor` entries of every parameter and input.
pub fn check_gradients(
    params: &ParamStore<f64>,
    step: f64,
    inputs: &[Tensor<f64>],
    per_tensor: usize,
    seed: u64,
    loss: impl Fn(&mut Ctx<f64>, &[Var]) -> Var,
) -> GradCheckReport {
    let mut cx = Ctx::new(params);
    let vars: Vec<Var> = inputs.iter().map(|t| cx.g.leaf(t.clone())).collect();
    let root = loss(&mut cx, &vars);
    let grads = cx.g.backward(root);
    let pgrads = cx.param_grads(&grads);

    let eval = |p: &ParamStore<f64>, xs: &[Tensor<f64>]| -> f64 {
        let mut cx = Ctx::frozen(p);
        let vars: Vec<Var> = xs.iter().map(|t| cx.g.constant(t.clone())).collect();
        let root = loss(&mut cx, &vars);
        cx.g.value(root).data()[0]
    };

    let mut pick = rng(seed);
    let mut report = GradCheckReport::default();
    let mut store = params.clone();
    let names: Vec<String> = store.keys().cloned().collect();
    for name in names {
        let zero = Tensor::zeros(store[&name].shape());
        let analytic = pgrads.get(&name).unwrap_or(&zero).clone();
        for i in sample_indices(analytic.len(), per_tensor, &mut pick) {
            let numeric = central_difference_param(&mut store, &name, i, step, |p| eval(p, inputs));
            report.record(|| format!("{name}[{i}]"), analytic.data()[i], numeric);
        }
    }
    let mut xs = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in sample_indices(analytic.len(), per_tensor, &mut pick) {
            let mut x = xs[k].clone();
            let numeric = central_difference(&mut x, i, step, |x| {
                xs[k] = x.clone();
                let v = eval(params, &xs);
                v
            });
            xs[k] = inputs[k].clone();
            report.record(|| format!("input{k}[{i}]"), analytic.data()[i], numeric);
        }
    }
    report
}

/// `n` in-memory phantom pairs at the config's size, z-scored like loaded
/// cases.
pub fn synth_examples(cfg: &hvan::data::SynthConfig, n: usize, seed: u64) -> Vec<hvan::train::Example> {
    use hvan::data::synth::{render_views, sample_case};
    use hvan::data::{zscore, CasePair};
    let cases: Vec<CasePair> = (0..n)
        .map(|i| {
            let meta = sample_case(cfg, seed, i);
            let (t, s) = render_views(&meta, cfg, seed, i);
            CasePair { id: meta.id, vol_t: zscore(&t), vol_s: zscore(&s), label: meta.label }
        })
        .collect();
    hvan::train::prepare(&cases, [cfg.size; 3]).unwrap()
}

/// The smallest network the encoder admits, at 32³.
pub fn tiny_model() -> hvan::network::ModelConfig {
    hvan::network::ModelConfig {
        input_size: [32; 3],
        stage_channels: [4, 8, 16, 32],
        ..Default::default()
    }
}

/// Train the full tiny model on eight pairs with full batches until the
/// full-batch focal loss drops below `target`. Returns the step and loss at
/// which it did, checking every ten steps up to `max_steps`.
pub fn overfit_eight_pairs(target: f64, max_steps: u64) -> Option<(u64, f64)> {
    use hvan::train::{focal_loss, predict, TrainConfig, Trainer};
    let data = synth_examples(&hvan::data::SynthConfig::default(), 8, 11);
    let train = TrainConfig {
        lr: 1e-3,
        batch_size: 8,
        epochs: max_steps,
        ..TrainConfig::default()
    };
    let mut t = Trainer::new(&tiny_model(), &train, &data).unwrap();
    let labels: Vec<u8> = data.iter().map(|e| e.label).collect();
    for step in 1..=max_steps {
        t.step(&data, None).unwrap();
        if step % 10 == 0 {
            let p = predict(&t.model, &t.ckpt.params, &data).unwrap();
            let loss = focal_loss(&p, &labels, t.alpha(), t.ckpt.train.focal_gamma);
            if loss < target {
                return Some((step, loss));
            }
        }
    }
    None
}

//! Paired spatial/channel attention with shared queries and keys.
//!
//! Token rows `(B', N, C)` are normalized per token and projected into a
//! shared query, a shared key, and separate spatial and channel values.
//! Spatial attention first compresses keys and spatial values along the
//! token axis from `N` to `P` with learned maps, then computes
//! `softmax(Q K_pᵀ / γ_s) V_p` (softmax over the `P` axis). Channel attention
//! computes `V_c softmax(Qᵀ K / γ_c)` with the softmax over the second axis of
//! the `C x C` map. Both temperatures are learned.

use hvan_tensor::{ParamStore, Real, Tensor, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{HvanError, Result};
use crate::nn::{Ctx, Linear, TokenNorm};

/// Default upper bound on the compressed token count.
pub const DEFAULT_PROJECTED_TOKENS: usize = 64;

/// Scale of the value projections at initialization, relative to the other
/// linears. A fresh block then adds little to its residual path instead of
/// unit-scale noise that is the same at every position.
pub const VALUE_INIT_GAIN: f64 = 0.1;

/// Parameter layout of one paired-attention block operating on planes of
/// `tokens` positions with `channels` features.
#[derive(Clone, Debug)]
pub struct EpaParams {
    pub name: String,
    pub channels: usize,
    pub tokens: usize,
    pub projected: usize,
    pub norm: TokenNorm,
    pub query: Linear,
    pub key: Linear,
    pub value_spatial: Linear,
    pub value_channel: Linear,
}

impl EpaParams {
    pub fn new(name: impl Into<String>, channels: usize, tokens: usize, projected: usize) -> Result<Self> {
        let name = name.into();
        if projected == 0 || projected > tokens {
            return Err(HvanError::Config(format!(
                "{name}: projected token count {projected} must be in 1..={tokens}"
            )));
        }
        let lin = |s: &str| Linear::new(format!("{name}.{s}"), channels, channels);
        Ok(Self {
            norm: TokenNorm {
                name: format!("{name}.norm"),
                channels,
            },
            query: lin("query"),
            key: lin("key"),
            value_spatial: lin("value_spatial"),
            value_channel: lin("value_channel"),
            channels,
            tokens,
            projected,
            name,
        })
    }

    pub fn key_proj(&self) -> String {
        format!("{}.key_proj", self.name)
    }

    pub fn value_proj(&self) -> String {
        format!("{}.value_proj", self.name)
    }

    pub fn temp_spatial(&self) -> String {
        format!("{}.temp_spatial", self.name)
    }

    pub fn temp_channel(&self) -> String {
        format!("{}.temp_channel", self.name)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.norm.init(store);
        for lin in [&self.query, &self.key, &self.value_spatial, &self.value_channel] {
            lin.init(store, rng);
        }
        for lin in [&self.value_spatial, &self.value_channel] {
            let w = store[&lin.weight()].map(|x| x * T::of(VALUE_INIT_GAIN));
            store.insert(lin.weight(), w);
        }
        store.insert(self.key_proj(), orthonormal_rows(self.projected, self.tokens, rng));
        store.insert(self.value_proj(), orthonormal_rows(self.projected, self.tokens, rng));
        let temp = (self.channels as f64).sqrt();
        store.insert(self.temp_spatial(), Tensor::scalar(T::of(temp)));
        store.insert(self.temp_channel(), Tensor::scalar(T::of(temp)));
    }
}

/// `rows x cols` matrix (`rows <= cols`) with orthonormal rows, from
/// Gram-Schmidt on a Gaussian draw.
pub fn orthonormal_rows<T: Real, R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor<T> {
    assert!(rows <= cols, "cannot fit {rows} orthonormal rows in dimension {cols}");
    let mut m: Vec<Vec<f64>> = Vec::with_capacity(rows);
    while m.len() < rows {
        let mut v: Vec<f64> = (0..cols).map(|_| StandardNormal.sample(rng)).collect();
        for u in &m {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            for (x, y) in v.iter_mut().zip(u) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            m.push(v);
        }
    }
    Tensor::from_vec(&[rows, cols], m.into_iter().flatten().map(T::of).collect())
        .expect("orthonormal shape")
}

/// Query, key, and the two values, each `(B', N, C)`.
#[derive(Clone, Copy, Debug)]
pub struct Projections {
    pub query: Var,
    pub key: Var,
    pub value_spatial: Var,
    pub value_channel: Var,
}

fn check_tokens<T: Real>(cx: &Ctx<T>, x: Var, params: &EpaParams, role: &str) -> Result<()> {
    let s = cx.g.shape(x);
    if s.len() != 3 || s[1] != params.tokens || s[2] != params.channels {
        return Err(HvanError::Shape(format!(
            "{}: {role} tokens {s:?}, expected (B', {}, {})",
            params.name, params.tokens, params.channels
        )));
    }
    Ok(())
}

/// Project token rows. The query comes from `query_tokens`; keys and values
/// from `kv_tokens`. Passing the same var for both gives self-attention.
pub fn epa_project<T: Real>(
    cx: &mut Ctx<T>,
    query_tokens: Var,
    kv_tokens: Var,
    params: &EpaParams,
) -> Result<Projections> {
    check_tokens(cx, query_tokens, params, "query")?;
    check_tokens(cx, kv_tokens, params, "key/value")?;
    if cx.g.shape(query_tokens) != cx.g.shape(kv_tokens) {
        return Err(HvanError::Shape(format!(
            "{}: query tokens {:?} vs key/value tokens {:?}",
            params.name,
            cx.g.shape(query_tokens),
            cx.g.shape(kv_tokens)
        )));
    }
    let kv = params.norm.forward(cx, kv_tokens);
    let q_in = if query_tokens == kv_tokens {
        kv
    } else {
        params.norm.forward(cx, query_tokens)
    };
    Ok(Projections {
        query: params.query.forward(cx, q_in),
        key: params.key.forward(cx, kv),
        value_spatial: params.value_spatial.forward(cx, kv),
        value_channel: params.value_channel.forward(cx, kv),
    })
}

/// `softmax(Q (E_K K)ᵀ / γ_s) (E_V V_s)`, returning `(B', N, C)`.
pub fn spatial_attention<T: Real>(cx: &mut Ctx<T>, p: &Projections, params: &EpaParams) -> Var {
    let (map, v) = spatial_attention_map(cx, p, params);
    cx.g.matmul(map, v)
}

/// The `(B', N, P)` attention map and the `(B', P, C)` compressed values.
pub fn spatial_attention_map<T: Real>(cx: &mut Ctx<T>, p: &Projections, params: &EpaParams) -> (Var, Var) {
    let ek = cx.param(&params.key_proj());
    let ev = cx.param(&params.value_proj());
    let temp = cx.param(&params.temp_spatial());
    let k_proj = cx.g.matmul(ek, p.key);
    let v_proj = cx.g.matmul(ev, p.value_spatial);
    let logits = cx.g.matmul_t(p.query, k_proj, false, true);
    let logits = cx.g.div(logits, temp);
    (cx.g.softmax_last(logits), v_proj)
}

/// `V_c softmax(Qᵀ K / γ_c)`, returning `(B', N, C)`.
pub fn channel_attention<T: Real>(cx: &mut Ctx<T>, p: &Projections, params: &EpaParams) -> Var {
    let map = channel_attention_map(cx, p, params);
    cx.g.matmul(p.value_channel, map)
}

/// The `(B', C, C)` channel attention map.
pub fn channel_attention_map<T: Real>(cx: &mut Ctx<T>, p: &Projections, params: &EpaParams) -> Var {
    let temp = cx.param(&params.temp_channel());
    let logits = cx.g.matmul_t(p.query, p.key, true, false);
    let logits = cx.g.div(logits, temp);
    cx.g.softmax_last(logits)
}

/// Spatial branch + channel branch + `kv_tokens` (the refined stream).
pub fn paired_attention<T: Real>(
    cx: &mut Ctx<T>,
    query_tokens: Var,
    kv_tokens: Var,
    params: &EpaParams,
) -> Result<Var> {
    let p = epa_project(cx, query_tokens, kv_tokens, params)?;
    let s = spatial_attention(cx, &p, params);
    let c = channel_attention(cx, &p, params);
    let branches = cx.g.add(s, c);
    Ok(cx.g.add(branches, kv_tokens))
}

//! Forward and backward kernels behind the graph operations.

use crate::graph::{BinOp, Conv3dGeometry, Reduction};
use crate::tensor::{strides_of, Real, Tensor};

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

// ---- broadcasting ---------------------------------------------------------

struct Broadcast {
    out: Vec<usize>,
    sa: Vec<usize>,
    sb: Vec<usize>,
}

fn broadcast_plan(a: &[usize], b: &[usize]) -> Broadcast {
    let rank = a.len().max(b.len());
    let pad = |s: &[usize]| {
        let mut p = vec![1; rank - s.len()];
        p.extend_from_slice(s);
        p
    };
    let (pa, pb) = (pad(a), pad(b));
    let (ta, tb) = (strides_of(&pa), strides_of(&pb));
    let mut out = vec![0; rank];
    let mut sa = vec![0; rank];
    let mut sb = vec![0; rank];
    for ax in 0..rank {
        out[ax] = match (pa[ax], pb[ax]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => panic!("cannot broadcast {a:?} with {b:?}"),
        };
        sa[ax] = if pa[ax] == 1 { 0 } else { ta[ax] };
        sb[ax] = if pb[ax] == 1 { 0 } else { tb[ax] };
    }
    Broadcast { out, sa, sb }
}

/// Walk `shape` in row-major order, tracking two strided offsets.
fn walk2(shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n: usize = shape.iter().product();
    let rank = shape.len();
    let mut idx = vec![0usize; rank];
    let (mut ao, mut bo) = (0usize, 0usize);
    for oi in 0..n {
        f(oi, ao, bo);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            ao += sa[ax];
            bo += sb[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            ao -= sa[ax] * shape[ax];
            bo -= sb[ax] * shape[ax];
            idx[ax] = 0;
        }
    }
}

#[inline]
fn apply<T: Real>(op: BinOp, x: T, y: T) -> T {
    match op {
        BinOp::Add => x + y,
        BinOp::Sub => x - y,
        BinOp::Mul => x * y,
        BinOp::Div => x / y,
    }
}

pub fn broadcast_binary<T: Real>(op: BinOp, a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    if a.shape() == b.shape() {
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| apply(op, x, y))
            .collect();
        return Tensor::from_vec(a.shape(), data).unwrap();
    }
    let plan = broadcast_plan(a.shape(), b.shape());
    let (ad, bd) = (a.data(), b.data());
    let mut out = Tensor::zeros(&plan.out);
    let od = out.data_mut();
    walk2(&plan.out, &plan.sa, &plan.sb, |oi, ai, bi| {
        od[oi] = apply(op, ad[ai], bd[bi]);
    });
    out
}

pub fn broadcast_binary_backward<T: Real>(
    op: BinOp,
    a: &Tensor<T>,
    b: &Tensor<T>,
    go: &Tensor<T>,
    want_a: bool,
    want_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let mut ga = want_a.then(|| Tensor::zeros(a.shape()));
    let mut gb = want_b.then(|| Tensor::zeros(b.shape()));
    let (ad, bd, gd) = (a.data(), b.data(), go.data());
    let mut step = |oi: usize, ai: usize, bi: usize| {
        let g = gd[oi];
        let (x, y) = (ad[ai], bd[bi]);
        let (da, db) = match op {
            BinOp::Add => (g, g),
            BinOp::Sub => (g, -g),
            BinOp::Mul => (g * y, g * x),
            BinOp::Div => (g / y, -g * x / (y * y)),
        };
        if let Some(t) = ga.as_mut() {
            t.data_mut()[ai] += da;
        }
        if let Some(t) = gb.as_mut() {
            t.data_mut()[bi] += db;
        }
    };
    if a.shape() == b.shape() {
        for i in 0..go.len() {
            step(i, i, i);
        }
    } else {
        let plan = broadcast_plan(a.shape(), b.shape());
        walk2(&plan.out, &plan.sa, &plan.sb, step);
    }
    (ga, gb)
}

// ---- matrix products ------------------------------------------------------

/// `c (m x n) += op(a) (m x k) * op(b) (k x n)`. `a` is stored `m x k`, or
/// `k x m` when `ta`; likewise `b` is `k x n`, or `n x k` when `tb`.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(m: usize, n: usize, k: usize, a: &[T], ta: bool, b: &[T], tb: bool, c: &mut [T]) {
    let bt;
    let b = if tb {
        let mut t = vec![T::zero(); k * n];
        for j in 0..n {
            for p in 0..k {
                t[p * n + j] = b[j * k + p];
            }
        }
        bt = t;
        &bt[..]
    } else {
        b
    };
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = if ta { a[p * m + i] } else { a[i * k + p] };
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

struct MatDims {
    prefix: Vec<usize>,
    batch: usize,
    /// Stored rows and columns.
    rows: usize,
    cols: usize,
}

fn mat_dims(shape: &[usize]) -> MatDims {
    assert!(shape.len() >= 2, "matmul operand must have rank >= 2, got {shape:?}");
    let r = shape.len();
    let prefix = shape[..r - 2].to_vec();
    MatDims {
        batch: prefix.iter().product(),
        prefix,
        rows: shape[r - 2],
        cols: shape[r - 1],
    }
}

fn op_dims(d: &MatDims, t: bool) -> (usize, usize) {
    if t {
        (d.cols, d.rows)
    } else {
        (d.rows, d.cols)
    }
}

fn batch_prefix(da: &MatDims, db: &MatDims) -> (Vec<usize>, usize) {
    if da.batch == db.batch {
        let p = if da.prefix.len() >= db.prefix.len() {
            &da.prefix
        } else {
            &db.prefix
        };
        (p.clone(), da.batch)
    } else if da.batch == 1 {
        (db.prefix.clone(), db.batch)
    } else if db.batch == 1 {
        (da.prefix.clone(), da.batch)
    } else {
        panic!(
            "matmul batch mismatch {:?} vs {:?}",
            da.prefix, db.prefix
        );
    }
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Tensor<T> {
    let (da, db) = (mat_dims(a.shape()), mat_dims(b.shape()));
    let (m, ka) = op_dims(&da, ta);
    let (kb, n) = op_dims(&db, tb);
    assert_eq!(ka, kb, "matmul inner dimension {:?} x {:?}", a.shape(), b.shape());
    let (mut shape, batch) = batch_prefix(&da, &db);
    shape.extend([m, n]);
    let mut out = Tensor::zeros(&shape);
    let (asz, bsz) = (da.rows * da.cols, db.rows * db.cols);
    let od = out.data_mut();
    for bi in 0..batch {
        let ao = if da.batch == 1 { 0 } else { bi * asz };
        let bo = if db.batch == 1 { 0 } else { bi * bsz };
        gemm(
            m,
            n,
            ka,
            &a.data()[ao..ao + asz],
            ta,
            &b.data()[bo..bo + bsz],
            tb,
            &mut od[bi * m * n..(bi + 1) * m * n],
        );
    }
    out
}

pub fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    ta: bool,
    tb: bool,
    go: &Tensor<T>,
    want_a: bool,
    want_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let (da, db) = (mat_dims(a.shape()), mat_dims(b.shape()));
    let (m, k) = op_dims(&da, ta);
    let (_, n) = op_dims(&db, tb);
    let (_, batch) = batch_prefix(&da, &db);
    let (asz, bsz) = (da.rows * da.cols, db.rows * db.cols);
    let mut ga = want_a.then(|| Tensor::zeros(a.shape()));
    let mut gb = want_b.then(|| Tensor::zeros(b.shape()));
    for bi in 0..batch {
        let ao = if da.batch == 1 { 0 } else { bi * asz };
        let bo = if db.batch == 1 { 0 } else { bi * bsz };
        let g = &go.data()[bi * m * n..(bi + 1) * m * n];
        let (av, bv) = (&a.data()[ao..ao + asz], &b.data()[bo..bo + bsz]);
        if let Some(t) = ga.as_mut() {
            let dst = &mut t.data_mut()[ao..ao + asz];
            if ta {
                // stored k x m: op(B) * goᵀ
                gemm(k, m, n, bv, tb, g, true, dst);
            } else {
                // stored m x k: go * op(B)ᵀ
                gemm(m, k, n, g, false, bv, !tb, dst);
            }
        }
        if let Some(t) = gb.as_mut() {
            let dst = &mut t.data_mut()[bo..bo + bsz];
            if tb {
                // stored n x k: goᵀ * op(A)
                gemm(n, k, m, g, true, av, ta, dst);
            } else {
                // stored k x n: op(A)ᵀ * go
                gemm(k, n, m, av, !ta, g, false, dst);
            }
        }
    }
    (ga, gb)
}

// ---- layout ---------------------------------------------------------------

pub fn narrow_backward<T: Real>(
    shape: &[usize],
    go: &Tensor<T>,
    axis: usize,
    start: usize,
) -> Tensor<T> {
    let mut g = Tensor::zeros(shape);
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let len = go.shape()[axis];
    let n = shape[axis];
    for o in 0..outer {
        let dst = (o * n + start) * inner;
        let src = o * len * inner;
        g.data_mut()[dst..dst + len * inner].copy_from_slice(&go.data()[src..src + len * inner]);
    }
    g
}

// ---- reductions -----------------------------------------------------------

fn reduced_shape(shape: &[usize], mask: &[bool]) -> Vec<usize> {
    shape
        .iter()
        .zip(mask)
        .map(|(&n, &m)| if m { 1 } else { n })
        .collect()
}

fn masked_strides(shape: &[usize], mask: &[bool]) -> Vec<usize> {
    let out = reduced_shape(shape, mask);
    strides_of(&out)
        .into_iter()
        .zip(mask)
        .map(|(s, &m)| if m { 0 } else { s })
        .collect()
}

/// Returns the reduced tensor and, for `Max`, the flat input index of each
/// output's maximum (first occurrence).
pub fn reduce<T: Real>(x: &Tensor<T>, mask: &[bool], kind: Reduction) -> (Tensor<T>, Vec<usize>) {
    let shape = reduced_shape(x.shape(), mask);
    let os = masked_strides(x.shape(), mask);
    let is = x.strides();
    let init = match kind {
        Reduction::Max => T::neg_infinity(),
        _ => T::zero(),
    };
    let mut out = Tensor::full(&shape, init);
    let mut argmax = if kind == Reduction::Max {
        vec![0; out.len()]
    } else {
        Vec::new()
    };
    let xd = x.data();
    let od = out.data_mut();
    walk2(x.shape(), &is, &os, |_, xi, oi| match kind {
        Reduction::Max => {
            if xd[xi] > od[oi] {
                od[oi] = xd[xi];
                argmax[oi] = xi;
            }
        }
        _ => od[oi] += xd[xi],
    });
    if kind == Reduction::Mean {
        let count = T::of((x.len() / out.len().max(1)) as f64);
        for v in out.data_mut() {
            *v /= count;
        }
    }
    (out, argmax)
}

pub fn reduce_backward<T: Real>(
    shape: &[usize],
    mask: &[bool],
    kind: Reduction,
    argmax: &[usize],
    go: &Tensor<T>,
) -> Tensor<T> {
    let mut g = Tensor::zeros(shape);
    match kind {
        Reduction::Max => {
            for (o, &xi) in argmax.iter().enumerate() {
                g.data_mut()[xi] += go.data()[o];
            }
        }
        Reduction::Sum | Reduction::Mean => {
            let scale = if kind == Reduction::Mean {
                T::one() / T::of((g.len() / go.len().max(1)) as f64)
            } else {
                T::one()
            };
            let os = masked_strides(shape, mask);
            let is = strides_of(shape);
            let gd = go.data();
            let dst = g.data_mut();
            walk2(shape, &is, &os, |_, xi, oi| dst[xi] = gd[oi] * scale);
        }
    }
    g
}

pub fn softmax_last<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = *x.shape().last().expect("softmax of rank-0 tensor");
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(n) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    out
}

pub fn softmax_last_backward<T: Real>(y: &Tensor<T>, go: &Tensor<T>) -> Tensor<T> {
    let n = *y.shape().last().unwrap();
    let mut g = Tensor::zeros(y.shape());
    for ((gr, yr), dr) in g
        .data_mut()
        .chunks_mut(n)
        .zip(y.data().chunks(n))
        .zip(go.data().chunks(n))
    {
        let dot: T = yr.iter().zip(dr).map(|(&a, &b)| a * b).sum();
        for ((gv, &yv), &dv) in gr.iter_mut().zip(yr).zip(dr) {
            *gv = yv * (dv - dot);
        }
    }
    g
}

// ---- convolution ----------------------------------------------------------

/// Output positions `o` with `0 <= o*s + k - p < n`.
#[inline]
fn valid_range(k: usize, p: usize, s: usize, n: usize, out: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let hi = if n + p > k {
        ((n + p - k - 1) / s + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

struct ConvShape {
    batch: usize,
    cin: usize,
    cout: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    output: [usize; 3],
    geom: Conv3dGeometry,
}

impl ConvShape {
    fn new(x: &[usize], w: &[usize], geom: Conv3dGeometry) -> Self {
        assert_eq!(x.len(), 5, "conv3d input must be (B, C, H, W, D), got {x:?}");
        assert_eq!(w.len(), 5, "conv3d weight must be (Co, Ci, KH, KW, KD), got {w:?}");
        assert_eq!(x[1], w[1], "conv3d channel mismatch {x:?} vs {w:?}");
        let input = [x[2], x[3], x[4]];
        let kernel = [w[2], w[3], w[4]];
        Self {
            batch: x[0],
            cin: x[1],
            cout: w[0],
            input,
            kernel,
            output: geom.output_extent(input, kernel),
            geom,
        }
    }

    fn in_vol(&self) -> usize {
        self.input.iter().product()
    }

    fn out_vol(&self) -> usize {
        self.output.iter().product()
    }

    fn kvol(&self) -> usize {
        self.kernel.iter().product()
    }

    /// Calls `f(weight_tap, out_offset, in_offset, run_len)` for each
    /// contiguous run along the last output axis. Offsets are relative to
    /// one (batch, channel) volume; the input run has stride `stride[2]`.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let [h, w, d] = self.input;
        let [ho, wo, dout] = self.output;
        let [kh, kw, kd] = self.kernel;
        let [sh, sw, sd] = self.geom.stride;
        let [ph, pw, pd] = self.geom.padding;
        for a in 0..kh {
            let (h0, h1) = valid_range(a, ph, sh, h, ho);
            for b in 0..kw {
                let (w0, w1) = valid_range(b, pw, sw, w, wo);
                for c in 0..kd {
                    let (d0, d1) = valid_range(c, pd, sd, d, dout);
                    if d1 == d0 {
                        continue;
                    }
                    let tap = (a * kw + b) * kd + c;
                    for oh in h0..h1 {
                        let ih = oh * sh + a - ph;
                        for ow in w0..w1 {
                            let iw = ow * sw + b - pw;
                            let id = d0 * sd + c - pd;
                            f(tap, (oh * wo + ow) * dout + d0, (ih * w + iw) * d + id, d1 - d0);
                        }
                    }
                }
            }
        }
    }
}

pub fn conv3d_forward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    geom: Conv3dGeometry,
) -> Tensor<T> {
    let cs = ConvShape::new(x.shape(), w.shape(), geom);
    let [ho, wo, dout] = cs.output;
    let mut out = Tensor::zeros(&[cs.batch, cs.cout, ho, wo, dout]);
    let (iv, ov, kv) = (cs.in_vol(), cs.out_vol(), cs.kvol());
    let sd = geom.stride[2];
    let (xd, wd) = (x.data(), w.data());
    let od = out.data_mut();
    for b in 0..cs.batch {
        for o in 0..cs.cout {
            let dst = &mut od[(b * cs.cout + o) * ov..(b * cs.cout + o + 1) * ov];
            if let Some(bias) = bias {
                dst.fill(bias.data()[o]);
            }
            for i in 0..cs.cin {
                let src = &xd[(b * cs.cin + i) * iv..(b * cs.cin + i + 1) * iv];
                let wk = &wd[(o * cs.cin + i) * kv..(o * cs.cin + i + 1) * kv];
                cs.for_each_tap(|tap, oo, io, n| {
                    let wv = wk[tap];
                    let orow = &mut dst[oo..oo + n];
                    if sd == 1 {
                        for (ov, &xv) in orow.iter_mut().zip(&src[io..io + n]) {
                            *ov += wv * xv;
                        }
                    } else {
                        for (j, ov) in orow.iter_mut().enumerate() {
                            *ov += wv * src[io + j * sd];
                        }
                    }
                });
            }
        }
    }
    out
}

#[allow(clippy::type_complexity)]
pub fn conv3d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    go: &Tensor<T>,
    geom: Conv3dGeometry,
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>) {
    let cs = ConvShape::new(x.shape(), w.shape(), geom);
    let (iv, ov, kv) = (cs.in_vol(), cs.out_vol(), cs.kvol());
    let sd = geom.stride[2];
    let (xd, wd, gd) = (x.data(), w.data(), go.data());
    let mut gx = want_x.then(|| Tensor::zeros(x.shape()));
    let mut gw = want_w.then(|| Tensor::zeros(w.shape()));
    let gb = want_b.then(|| {
        let mut gb = Tensor::zeros(&[cs.cout]);
        for b in 0..cs.batch {
            for o in 0..cs.cout {
                let s: T = gd[(b * cs.cout + o) * ov..(b * cs.cout + o + 1) * ov]
                    .iter()
                    .copied()
                    .sum();
                gb.data_mut()[o] += s;
            }
        }
        gb
    });
    for b in 0..cs.batch {
        for o in 0..cs.cout {
            let g = &gd[(b * cs.cout + o) * ov..(b * cs.cout + o + 1) * ov];
            for i in 0..cs.cin {
                let kbase = (o * cs.cin + i) * kv;
                let xbase = (b * cs.cin + i) * iv;
                if let Some(gx) = gx.as_mut() {
                    let wk = &wd[kbase..kbase + kv];
                    let dst = &mut gx.data_mut()[xbase..xbase + iv];
                    cs.for_each_tap(|tap, oo, io, n| {
                        let wv = wk[tap];
                        for j in 0..n {
                            dst[io + j * sd] += wv * g[oo + j];
                        }
                    });
                }
                if let Some(gw) = gw.as_mut() {
                    let src = &xd[xbase..xbase + iv];
                    let dst = &mut gw.data_mut()[kbase..kbase + kv];
                    cs.for_each_tap(|tap, oo, io, n| {
                        let mut acc = T::zero();
                        if sd == 1 {
                            for (&gv, &xv) in g[oo..oo + n].iter().zip(&src[io..io + n]) {
                                acc += gv * xv;
                            }
                        } else {
                            for j in 0..n {
                                acc += g[oo + j] * src[io + j * sd];
                            }
                        }
                        dst[tap] += acc;
                    });
                }
            }
        }
    }
    (gx, gw, gb)
}

// ---- normalization --------------------------------------------------------

type NormForward<T> = (Tensor<T>, Vec<T>, Vec<T>);
type NormBackward<T> = (Tensor<T>, Tensor<T>, Tensor<T>);

fn normalize_block<T: Real>(src: &[T], xhat: &mut [T], eps: T) -> T {
    let n = T::of(src.len() as f64);
    let mean = src.iter().copied().sum::<T>() / n;
    let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    let inv = T::one() / (var + eps).sqrt();
    for (h, &v) in xhat.iter_mut().zip(src) {
        *h = (v - mean) * inv;
    }
    inv
}

fn normalize_block_backward<T: Real>(dxhat: &[T], xhat: &[T], inv: T, dx: &mut [T]) {
    let n = T::of(dxhat.len() as f64);
    let m1 = dxhat.iter().copied().sum::<T>() / n;
    let m2 = dxhat.iter().zip(xhat).map(|(&a, &b)| a * b).sum::<T>() / n;
    for ((d, &g), &h) in dx.iter_mut().zip(dxhat).zip(xhat) {
        *d = inv * (g - m1 - h * m2);
    }
}

pub fn group_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    groups: usize,
    eps: T,
) -> NormForward<T> {
    let s = x.shape();
    assert!(s.len() >= 2, "group norm input needs (B, C, ...)");
    let (bn, c) = (s[0], s[1]);
    assert!(groups > 0 && c % groups == 0, "groups {groups} must divide channels {c}");
    assert_eq!(gamma.len(), c, "group norm gamma length");
    assert_eq!(beta.len(), c, "group norm beta length");
    let spatial: usize = s[2..].iter().product();
    let block = c / groups * spatial;
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(bn * groups);
    for (src, dst) in x.data().chunks(block).zip(xhat.chunks_mut(block)) {
        inv_std.push(normalize_block(src, dst, eps));
    }
    let mut out = Tensor::zeros(s);
    for (ci, (o, h)) in out
        .data_mut()
        .chunks_mut(spatial)
        .zip(xhat.chunks(spatial))
        .enumerate()
    {
        let ch = ci % c;
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for (ov, &hv) in o.iter_mut().zip(h) {
            *ov = hv * g + b;
        }
    }
    (out, xhat, inv_std)
}

pub fn group_norm_backward<T: Real>(
    shape: &[usize],
    gamma: &Tensor<T>,
    groups: usize,
    xhat: &[T],
    inv_std: &[T],
    go: &Tensor<T>,
) -> NormBackward<T> {
    let c = shape[1];
    let spatial: usize = shape[2..].iter().product();
    let block = c / groups * spatial;
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut dxhat = vec![T::zero(); go.len()];
    for (ci, ((g, h), dh)) in go
        .data()
        .chunks(spatial)
        .zip(xhat.chunks(spatial))
        .zip(dxhat.chunks_mut(spatial))
        .enumerate()
    {
        let ch = ci % c;
        let gm = gamma.data()[ch];
        let mut sg = T::zero();
        let mut sb = T::zero();
        for ((&gv, &hv), d) in g.iter().zip(h).zip(dh.iter_mut()) {
            sg += gv * hv;
            sb += gv;
            *d = gv * gm;
        }
        dgamma.data_mut()[ch] += sg;
        dbeta.data_mut()[ch] += sb;
    }
    let mut dx = Tensor::zeros(shape);
    for (((d, h), out), &inv) in dxhat
        .chunks(block)
        .zip(xhat.chunks(block))
        .zip(dx.data_mut().chunks_mut(block))
        .zip(inv_std)
    {
        normalize_block_backward(d, h, inv, out);
    }
    (dx, dgamma, dbeta)
}

pub fn layer_norm_forward<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> NormForward<T> {
    let c = *x.shape().last().expect("layer norm of rank-0 tensor");
    assert_eq!(gamma.len(), c, "layer norm gamma length");
    assert_eq!(beta.len(), c, "layer norm beta length");
    let mut xhat = vec![T::zero(); x.len()];
    let mut inv_std = Vec::with_capacity(x.len() / c.max(1));
    for (src, dst) in x.data().chunks(c).zip(xhat.chunks_mut(c)) {
        inv_std.push(normalize_block(src, dst, eps));
    }
    let mut out = Tensor::zeros(x.shape());
    for (o, h) in out.data_mut().chunks_mut(c).zip(xhat.chunks(c)) {
        for ((ov, &hv), (&g, &b)) in o.iter_mut().zip(h).zip(gamma.data().iter().zip(beta.data())) {
            *ov = hv * g + b;
        }
    }
    (out, xhat, inv_std)
}

pub fn layer_norm_backward<T: Real>(
    shape: &[usize],
    gamma: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    go: &Tensor<T>,
) -> NormBackward<T> {
    let c = *shape.last().unwrap();
    let mut dgamma = Tensor::zeros(&[c]);
    let mut dbeta = Tensor::zeros(&[c]);
    let mut dx = Tensor::zeros(shape);
    let mut dxhat = vec![T::zero(); c];
    for (((g, h), out), &inv) in go
        .data()
        .chunks(c)
        .zip(xhat.chunks(c))
        .zip(dx.data_mut().chunks_mut(c))
        .zip(inv_std)
    {
        for j in 0..c {
            dgamma.data_mut()[j] += g[j] * h[j];
            dbeta.data_mut()[j] += g[j];
            dxhat[j] = g[j] * gamma.data()[j];
        }
        normalize_block_backward(&dxhat, h, inv, out);
    }
    (dx, dgamma, dbeta)
}

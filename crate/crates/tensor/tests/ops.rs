use hvan_tensor::gradcheck::{central_difference, GradCheckReport};
use hvan_tensor::{BinOp, Conv3dGeometry, Graph, Reduction, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-6;

/// Checks d(sum(w * f(inputs)))/d(inputs) against central differences,
/// with a fixed random weighting `w` so every output contributes.
fn check(inputs: &[Tensor<f64>], f: impl Fn(&mut Graph<f64>, &[Var]) -> Var) -> GradCheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eval = |xs: &[Tensor<f64>], weights: Option<&Tensor<f64>>| -> (f64, Vec<Tensor<f64>>, Tensor<f64>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.leaf(x.clone())).collect();
        let out = f(&mut g, &vars);
        let w = weights.cloned().unwrap_or_else(|| Tensor::ones(g.shape(out)));
        let wv = g.constant(w.clone());
        let prod = g.mul(out, wv);
        let loss = g.sum_all(prod);
        let grads = g.backward(loss);
        let gs = vars.iter().map(|&v| grads.get(v).unwrap().clone()).collect();
        (g.value(loss).data()[0], gs, w)
    };
    let shape = {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|x| g.leaf(x.clone())).collect();
        let out = f(&mut g, &vars);
        g.shape(out).to_vec()
    };
    let weights = Tensor::randn(&shape, 1.0, &mut rng);
    let (_, analytic, _) = eval(inputs, Some(&weights));
    let mut report = GradCheckReport::default();
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut x = input.clone();
            let numeric = central_difference(&mut x, i, STEP, |x| {
                let mut xs = inputs.to_vec();
                xs[k] = x.clone();
                eval(&xs, Some(&weights)).0
            });
            report.record(|| format!("input {k}[{i}]"), analytic[k].data()[i], numeric);
        }
    }
    report
}

fn rnd(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn assert_ok(name: &str, r: GradCheckReport) {
    assert!(r.checked > 0, "{name}: nothing checked");
    assert!(r.max_rel_error <= TOL, "{name}: rel err {} at {}", r.max_rel_error, r.worst);
}

#[test]
fn broadcast_arithmetic_gradients() {
    for op in [BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div] {
        let a = rnd(&[2, 3, 4], 1);
        let b = rnd(&[1, 3, 1], 2).map(|v| v.abs() + 0.5);
        assert_ok(&format!("{op:?}"), check(&[a, b], move |g, v| g.binary(op, v[0], v[1])));
        let s = rnd(&[1], 3).map(|v| v.abs() + 0.5);
        let m = rnd(&[2, 5], 4);
        assert_ok(&format!("{op:?} scalar"), check(&[m, s], move |g, v| g.binary(op, v[0], v[1])));
    }
}

#[test]
fn unary_gradients() {
    let x = rnd(&[3, 4], 5);
    assert_ok("sigmoid", check(&[x.clone()], |g, v| g.sigmoid(v[0])));
    assert_ok("scale", check(&[x.clone()], |g, v| g.scale(v[0], -2.5)));
    assert_ok("relu", check(&[x.clone()], |g, v| g.relu(v[0])));
    let pos = x.map(|v| v.abs() + 0.2);
    assert_ok("log", check(&[pos.clone()], |g, v| g.log(v[0])));
    assert_ok("pow", check(&[pos], |g, v| g.pow_scalar(v[0], 2.5)));
    assert_ok("clamp", check(&[x], |g, v| g.clamp(v[0], -0.5, 0.7)));
}

#[test]
fn matmul_gradients_all_transpose_modes() {
    for ta in [false, true] {
        for tb in [false, true] {
            let a = if ta { rnd(&[2, 4, 3], 6) } else { rnd(&[2, 3, 4], 6) };
            let b = if tb { rnd(&[2, 5, 4], 7) } else { rnd(&[2, 4, 5], 7) };
            assert_ok("bmm", check(&[a, b], move |g, v| g.matmul_t(v[0], v[1], ta, tb)));
            // shared left matrix broadcast over the batch
            let a2 = if ta { rnd(&[4, 3], 8) } else { rnd(&[3, 4], 8) };
            let b2 = if tb { rnd(&[2, 5, 4], 9) } else { rnd(&[2, 4, 5], 9) };
            assert_ok("shared lhs", check(&[a2, b2], move |g, v| g.matmul_t(v[0], v[1], ta, tb)));
            let a3 = if ta { rnd(&[2, 4, 3], 10) } else { rnd(&[2, 3, 4], 10) };
            let b3 = if tb { rnd(&[5, 4], 11) } else { rnd(&[4, 5], 11) };
            assert_ok("shared rhs", check(&[a3, b3], move |g, v| g.matmul_t(v[0], v[1], ta, tb)));
        }
    }
}

#[test]
fn matmul_matches_triple_loop() {
    let a = rnd(&[3, 2, 4], 12);
    let b = rnd(&[3, 4, 5], 13);
    let mut g = Graph::new();
    let (va, vb) = (g.constant(a.clone()), g.constant(b.clone()));
    let c = g.matmul(va, vb);
    for n in 0..3 {
        for i in 0..2 {
            for j in 0..5 {
                let want: f64 = (0..4).map(|k| a.get(&[n, i, k]) * b.get(&[n, k, j])).sum();
                assert!((g.value(c).get(&[n, i, j]) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn layout_gradients() {
    let x = rnd(&[2, 3, 4], 14);
    assert_ok("permute", check(&[x.clone()], |g, v| g.permute(v[0], &[2, 0, 1])));
    assert_ok("reshape", check(&[x.clone()], |g, v| g.reshape(v[0], &[6, 4])));
    assert_ok("narrow", check(&[x.clone()], |g, v| g.narrow(v[0], 1, 1, 2)));
    let y = rnd(&[2, 2, 4], 15);
    assert_ok("concat", check(&[x, y], |g, v| g.concat(&[v[0], v[1]], 1)));
}

#[test]
fn reduction_gradients() {
    let x = rnd(&[2, 3, 2, 2], 16);
    for kind in [Reduction::Sum, Reduction::Mean, Reduction::Max] {
        assert_ok("reduce spatial", check(&[x.clone()], move |g, v| g.reduce(v[0], &[2, 3], kind)));
        assert_ok("reduce channel", check(&[x.clone()], move |g, v| g.reduce(v[0], &[1], kind)));
    }
    assert_ok("softmax", check(&[x], |g, v| g.softmax_last(v[0])));
}

#[test]
fn softmax_rows_sum_to_one() {
    let x = rnd(&[4, 7], 17).map(|v| 30.0 * v);
    let mut g = Graph::new();
    let v = g.constant(x);
    let s = g.softmax_last(v);
    for row in g.value(s).data().chunks(7) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn norm_gradients() {
    let x = rnd(&[2, 4, 2, 3, 2], 18);
    let gamma = rnd(&[4], 19);
    let beta = rnd(&[4], 20);
    assert_ok(
        "group norm",
        check(&[x, gamma.clone(), beta.clone()], |g, v| g.group_norm(v[0], v[1], v[2], 2)),
    );
    let t = rnd(&[3, 5, 4], 21);
    assert_ok("layer norm", check(&[t, gamma, beta], |g, v| g.layer_norm(v[0], v[1], v[2])));
}

fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, geom: Conv3dGeometry) -> Tensor<f64> {
    let (xs, ws) = (x.shape(), w.shape());
    let out = geom.output_extent([xs[2], xs[3], xs[4]], [ws[2], ws[3], ws[4]]);
    let mut y = Tensor::zeros(&[xs[0], ws[0], out[0], out[1], out[2]]);
    for n in 0..xs[0] {
        for o in 0..ws[0] {
            for p in 0..out[0] {
                for q in 0..out[1] {
                    for r in 0..out[2] {
                        let mut acc = b.data()[o];
                        for i in 0..xs[1] {
                            for a in 0..ws[2] {
                                for bb in 0..ws[3] {
                                    for c in 0..ws[4] {
                                        let ih = (p * geom.stride[0] + a) as isize - geom.padding[0] as isize;
                                        let iw = (q * geom.stride[1] + bb) as isize - geom.padding[1] as isize;
                                        let id = (r * geom.stride[2] + c) as isize - geom.padding[2] as isize;
                                        if ih < 0 || iw < 0 || id < 0 {
                                            continue;
                                        }
                                        let (ih, iw, id) = (ih as usize, iw as usize, id as usize);
                                        if ih >= xs[2] || iw >= xs[3] || id >= xs[4] {
                                            continue;
                                        }
                                        acc += w.get(&[o, i, a, bb, c]) * x.get(&[n, i, ih, iw, id]);
                                    }
                                }
                            }
                        }
                        y.set(&[n, o, p, q, r], acc);
                    }
                }
            }
        }
    }
    y
}

#[test]
fn conv3d_matches_sliding_window_oracle() {
    let cases = [
        ([2, 2, 5, 4, 6], [3, 2, 3, 3, 3], Conv3dGeometry::new(1, [1, 1, 1])),
        ([1, 3, 6, 6, 6], [2, 3, 3, 3, 3], Conv3dGeometry::new(2, [1, 1, 1])),
        ([1, 2, 4, 5, 3], [2, 2, 3, 3, 1], Conv3dGeometry::new(1, [1, 1, 0])),
        ([1, 2, 3, 4, 5], [2, 2, 1, 3, 3], Conv3dGeometry::new(1, [0, 1, 1])),
        ([1, 2, 3, 3, 3], [4, 2, 1, 1, 1], Conv3dGeometry::new(1, [0, 0, 0])),
        ([2, 1, 7, 5, 5], [2, 1, 3, 3, 3], Conv3dGeometry::new(2, [1, 1, 1])),
    ];
    for (k, (xs, ws, geom)) in cases.into_iter().enumerate() {
        let x = rnd(&xs, 30 + k as u64);
        let w = rnd(&ws, 40 + k as u64);
        let b = rnd(&[ws[0]], 50 + k as u64);
        let mut g = Graph::new();
        let (vx, vw, vb) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        let y = g.conv3d(vx, vw, Some(vb), geom);
        let want = conv_oracle(&x, &w, &b, geom);
        assert_eq!(g.shape(y), want.shape(), "case {k}");
        assert!(g.value(y).max_abs_diff(&want) < 1e-12, "case {k}");
    }
}

#[test]
fn conv3d_gradients() {
    let x = rnd(&[2, 2, 4, 3, 5], 60);
    let w = rnd(&[3, 2, 3, 3, 3], 61);
    let b = rnd(&[3], 62);
    for geom in [Conv3dGeometry::new(1, [1, 1, 1]), Conv3dGeometry::new(2, [1, 1, 1])] {
        assert_ok(
            "conv3d",
            check(&[x.clone(), w.clone(), b.clone()], move |g, v| g.conv3d(v[0], v[1], Some(v[2]), geom)),
        );
    }
    let w2 = rnd(&[2, 2, 3, 3, 1], 63);
    assert_ok(
        "conv3d anisotropic",
        check(&[x, w2], |g, v| g.conv3d(v[0], v[1], None, Conv3dGeometry::new(1, [1, 1, 0]))),
    );
}

#[test]
fn gradient_accumulates_over_reuse() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(Tensor::from_vec(&[2], vec![1.5, -2.0]).unwrap());
    let y = g.mul(x, x);
    let z = g.add(y, x);
    let s = g.sum_all(z);
    let grads = g.backward(s);
    assert_eq!(grads.get(x).unwrap().data(), &[4.0, -3.0]);
}

#[test]
fn constants_receive_no_gradient() {
    let mut g = Graph::<f64>::new();
    let c = g.constant(Tensor::ones(&[3]));
    let x = g.leaf(Tensor::ones(&[3]));
    let y = g.mul(c, x);
    let s = g.sum_all(y);
    let grads = g.backward(s);
    assert!(grads.get(c).is_none());
    assert!(grads.get(x).is_some());
}

proptest! {
    #[test]
    fn permute_inverse_round_trips(dims in proptest::collection::vec(1usize..4, 1..5), seed in 0u64..1000) {
        let x = rnd(&dims, seed);
        let rank = dims.len();
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.rotate_left(seed as usize % rank);
        let mut inv = vec![0; rank];
        for (i, &a) in axes.iter().enumerate() {
            inv[a] = i;
        }
        prop_assert_eq!(x.permute(&axes).permute(&inv), x);
    }

    #[test]
    fn broadcast_add_matches_explicit_expansion(b in 1usize..4, c in 1usize..4, s in 1usize..5) {
        let big = rnd(&[b, c, s], 1);
        let small = rnd(&[b, c, 1], 2);
        let mut g = Graph::new();
        let (x, y) = (g.constant(big.clone()), g.constant(small.clone()));
        let z = g.add(x, y);
        for i in 0..b { for j in 0..c { for k in 0..s {
            prop_assert_eq!(g.value(z).get(&[i, j, k]), big.get(&[i, j, k]) + small.get(&[i, j, 0]));
        }}}
    }
}

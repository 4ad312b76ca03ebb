//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied to its [`Var`]s together with
//! the forward value. [`Graph::backward`] walks the tape in reverse and
//! returns the gradient of a root node with respect to every node that
//! depends on a differentiable leaf. Nodes are appended in evaluation order,
//! so the tape is already topologically sorted.
//!
//! Shape errors inside the tape are programming errors and panic; callers
//! validate user-facing inputs before building a graph.

use crate::kernels;
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

/// Stride and zero-padding of a 3D convolution, per spatial axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv3dGeometry {
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

impl Conv3dGeometry {
    pub fn new(stride: usize, padding: [usize; 3]) -> Self {
        Self {
            stride: [stride; 3],
            padding,
        }
    }

    /// Output spatial extents for an input of `input` voxels and a kernel of
    /// `kernel` taps.
    pub fn output_extent(&self, input: [usize; 3], kernel: [usize; 3]) -> [usize; 3] {
        let mut out = [0; 3];
        for a in 0..3 {
            let padded = input[a] + 2 * self.padding[a];
            assert!(padded >= kernel[a], "kernel larger than padded input");
            out[a] = (padded - kernel[a]) / self.stride[a] + 1;
        }
        out
    }
}

enum Op<T> {
    Leaf,
    Binary(BinOp, Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    PowScalar(Var, f64),
    Clamp(Var, f64, f64),
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Permute(Var, Vec<usize>),
    Reshape(Var),
    Concat(Vec<Var>, usize),
    Narrow(Var, usize, usize),
    Reduce {
        x: Var,
        mask: Vec<bool>,
        kind: Reduction,
        argmax: Vec<usize>,
    },
    SoftmaxLast(Var),
    Conv3d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: Conv3dGeometry,
    },
    GroupNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        groups: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

pub const NORM_EPS: f64 = 1e-5;

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Leaf => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    /// Differentiable leaf (parameter or input under test).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        let v = self.push(value, Op::Leaf, &[]);
        self.nodes[v.0].requires_grad = true;
        v
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ---- elementwise -------------------------------------------------

    pub fn binary(&mut self, op: BinOp, a: Var, b: Var) -> Var {
        let value = kernels::broadcast_binary(op, self.value(a), self.value(b));
        self.push(value, Op::Binary(op, a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinOp::Mul, a, b)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.binary(BinOp::Div, a, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let k = T::of(c);
        let value = self.value(x).map(|v| v * k);
        self.push(value, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let k = T::of(c);
        let value = self.value(x).map(|v| v + k);
        self.push(value, Op::AddScalar(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(value, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(kernels::sigmoid);
        self.push(value, Op::Sigmoid(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.ln());
        self.push(value, Op::Log(x), &[x])
    }

    pub fn pow_scalar(&mut self, x: Var, p: f64) -> Var {
        let e = T::of(p);
        let value = self.value(x).map(|v| v.powf(e));
        self.push(value, Op::PowScalar(x, p), &[x])
    }

    /// Clamp into `[lo, hi]`; the gradient passes only inside the interval.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::of(lo), T::of(hi));
        let value = self.value(x).map(|v| v.max(l).min(h));
        self.push(value, Op::Clamp(x, lo, hi), &[x])
    }

    // ---- linear algebra ------------------------------------------------

    /// Batched matrix product over the last two axes. Leading axes must
    /// agree, or one operand may be a plain matrix broadcast over the batch.
    /// `ta` / `tb` transpose the last two axes of the operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Var {
        let value = kernels::matmul(self.value(a), self.value(b), ta, tb);
        self.push(value, Op::MatMul { a, b, ta, tb }, &[a, b])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_t(a, b, false, false)
    }

    // ---- layout ---------------------------------------------------------

    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Var {
        let value = self.value(x).permute(axes);
        self.push(value, Op::Permute(x, axes.to_vec()), &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self
            .value(x)
            .reshape(shape)
            .unwrap_or_else(|e| panic!("reshape: {e}"));
        self.push(value, Op::Reshape(x), &[x])
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Var {
        let parts: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat(&parts, axis).unwrap_or_else(|e| panic!("concat: {e}"));
        self.push(value, Op::Concat(xs.to_vec(), axis), xs)
    }

    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Var {
        let value = self.value(x).narrow(axis, start, len);
        self.push(value, Op::Narrow(x, axis, start), &[x])
    }

    // ---- reductions -----------------------------------------------------

    /// Reduce over `axes`, keeping them as extent-1 axes.
    pub fn reduce(&mut self, x: Var, axes: &[usize], kind: Reduction) -> Var {
        let rank = self.value(x).rank();
        let mut mask = vec![false; rank];
        for &a in axes {
            assert!(a < rank, "reduction axis {a} out of range");
            mask[a] = true;
        }
        let (value, argmax) = kernels::reduce(self.value(x), &mask, kind);
        self.push(
            value,
            Op::Reduce {
                x,
                mask,
                kind,
                argmax,
            },
            &[x],
        )
    }

    pub fn sum_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        let r = self.reduce(x, &axes, Reduction::Sum);
        self.reshape(r, &[1])
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let axes: Vec<usize> = (0..self.value(x).rank()).collect();
        let r = self.reduce(x, &axes, Reduction::Mean);
        self.reshape(r, &[1])
    }

    pub fn softmax_last(&mut self, x: Var) -> Var {
        let value = kernels::softmax_last(self.value(x));
        self.push(value, Op::SoftmaxLast(x), &[x])
    }

    // ---- layers ---------------------------------------------------------

    /// `x`: (B, Ci, H, W, D); `w`: (Co, Ci, KH, KW, KD); `b`: (Co).
    pub fn conv3d(&mut self, x: Var, w: Var, b: Option<Var>, geom: Conv3dGeometry) -> Var {
        let value = kernels::conv3d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            geom,
        );
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(value, Op::Conv3d { x, w, b, geom }, &inputs)
    }

    /// Group normalization over (channels-in-group x spatial) per sample,
    /// with per-channel affine `gamma`, `beta`.
    pub fn group_norm(&mut self, x: Var, gamma: Var, beta: Var, groups: usize) -> Var {
        let (value, xhat, inv_std) = kernels::group_norm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            groups,
            T::of(NORM_EPS),
        );
        self.push(
            value,
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    /// Normalization over the last axis with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (value, xhat, inv_std) = kernels::layer_norm_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            T::of(NORM_EPS),
        );
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            &[x, gamma, beta],
        )
    }

    // ---- backward -------------------------------------------------------

    /// Gradient of `sum(root)` with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let seed = Tensor::ones(self.shape(root));
        self.backward_seeded(root, seed)
    }

    /// Vector-Jacobian product with an explicit upstream gradient for `root`.
    pub fn backward_seeded(&self, root: Var, seed: Tensor<T>) -> Gradients<T> {
        assert_eq!(seed.shape(), self.shape(root), "seed shape");
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(seed);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(go) = grads[i].take() else {
                continue;
            };
            self.propagate(node, &go, &mut grads);
            grads[i] = Some(go);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<T>, go: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            &Op::Binary(op, a, b) => {
                let (ga, gb) =
                    kernels::broadcast_binary_backward(op, val(a), val(b), go, wants(a), wants(b));
                if let Some(g) = ga {
                    accumulate(grads, a, g);
                }
                if let Some(g) = gb {
                    accumulate(grads, b, g);
                }
            }
            &Op::Scale(x, c) => {
                let k = T::of(c);
                accumulate(grads, x, go.map(|g| g * k));
            }
            &Op::AddScalar(x) => accumulate(grads, x, go.clone()),
            &Op::Relu(x) => {
                let g = zip_map(go, val(x), |g, x| if x > T::zero() { g } else { T::zero() });
                accumulate(grads, x, g);
            }
            &Op::Sigmoid(x) => {
                let g = zip_map(go, &node.value, |g, y| g * y * (T::one() - y));
                accumulate(grads, x, g);
            }
            &Op::Log(x) => {
                let g = zip_map(go, val(x), |g, x| g / x);
                accumulate(grads, x, g);
            }
            &Op::PowScalar(x, p) => {
                let e = T::of(p);
                let g = zip_map(go, val(x), |g, x| g * e * x.powf(e - T::one()));
                accumulate(grads, x, g);
            }
            &Op::Clamp(x, lo, hi) => {
                let (l, h) = (T::of(lo), T::of(hi));
                let g = zip_map(go, val(x), |g, x| if x >= l && x <= h { g } else { T::zero() });
                accumulate(grads, x, g);
            }
            &Op::MatMul { a, b, ta, tb } => {
                let (ga, gb) =
                    kernels::matmul_backward(val(a), val(b), ta, tb, go, wants(a), wants(b));
                if let Some(g) = ga {
                    accumulate(grads, a, g);
                }
                if let Some(g) = gb {
                    accumulate(grads, b, g);
                }
            }
            Op::Permute(x, axes) => {
                let mut inv = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inv[a] = i;
                }
                accumulate(grads, *x, go.permute(&inv));
            }
            &Op::Reshape(x) => {
                let g = go.reshape(val(x).shape()).expect("reshape grad");
                accumulate(grads, x, g);
            }
            Op::Concat(xs, axis) => {
                let mut start = 0;
                for &x in xs {
                    let len = val(x).shape()[*axis];
                    if wants(x) {
                        accumulate(grads, x, go.narrow(*axis, start, len));
                    }
                    start += len;
                }
            }
            &Op::Narrow(x, axis, start) => {
                let g = kernels::narrow_backward(val(x).shape(), go, axis, start);
                accumulate(grads, x, g);
            }
            Op::Reduce {
                x,
                mask,
                kind,
                argmax,
            } => {
                let g = kernels::reduce_backward(val(*x).shape(), mask, *kind, argmax, go);
                accumulate(grads, *x, g);
            }
            &Op::SoftmaxLast(x) => {
                accumulate(grads, x, kernels::softmax_last_backward(&node.value, go));
            }
            &Op::Conv3d { x, w, b, geom } => {
                let (gx, gw, gb) = kernels::conv3d_backward(
                    val(x),
                    val(w),
                    go,
                    geom,
                    wants(x),
                    wants(w),
                    b.is_some_and(&wants),
                );
                if let Some(g) = gx {
                    accumulate(grads, x, g);
                }
                if let Some(g) = gw {
                    accumulate(grads, w, g);
                }
                if let (Some(b), Some(g)) = (b, gb) {
                    accumulate(grads, b, g);
                }
            }
            Op::GroupNorm {
                x,
                gamma,
                beta,
                groups,
                xhat,
                inv_std,
            } => {
                let (gx, gg, gbeta) = kernels::group_norm_backward(
                    val(*x).shape(),
                    val(*gamma),
                    *groups,
                    xhat,
                    inv_std,
                    go,
                );
                if wants(*x) {
                    accumulate(grads, *x, gx);
                }
                if wants(*gamma) {
                    accumulate(grads, *gamma, gg);
                }
                if wants(*beta) {
                    accumulate(grads, *beta, gbeta);
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let (gx, gg, gbeta) =
                    kernels::layer_norm_backward(val(*x).shape(), val(*gamma), xhat, inv_std, go);
                if wants(*x) {
                    accumulate(grads, *x, gx);
                }
                if wants(*gamma) {
                    accumulate(grads, *gamma, gg);
                }
                if wants(*beta) {
                    accumulate(grads, *beta, gbeta);
                }
            }
        }
    }
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("zip_map shape")
}

fn accumulate<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Result of [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

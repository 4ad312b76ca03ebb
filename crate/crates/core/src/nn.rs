//! Layer building blocks on top of the autodiff graph.
//!
//! Layers are lightweight descriptors that know their parameter names and
//! shapes. Parameter values live in a [`ParamStore`]; a [`Ctx`] binds a store
//! to a graph for one forward pass.

use std::collections::HashMap;

use hvan_tensor::{Conv3dGeometry, Gradients, Graph, ParamStore, Real, Tensor, Var};
use rand::Rng;

/// Maximum group count for group normalization.
pub const MAX_NORM_GROUPS: usize = 8;
/// Minimum number of values each normalization group must pool over.
pub const MIN_GROUP_SIZE: usize = 64;

/// Largest divisor of `channels`, at most [`MAX_NORM_GROUPS`], whose groups
/// pool at least [`MIN_GROUP_SIZE`] values over a map of `voxels` positions;
/// 1 if none does.
pub fn norm_groups(channels: usize, voxels: usize) -> usize {
    (1..=MAX_NORM_GROUPS.min(channels))
        .rev()
        .find(|g| channels % g == 0 && channels / g * voxels >= MIN_GROUP_SIZE)
        .unwrap_or(1)
}

/// A graph plus the parameter store it reads from.
pub struct Ctx<'p, T: Real> {
    pub g: Graph<T>,
    params: &'p ParamStore<T>,
    vars: HashMap<String, Var>,
    trainable: bool,
}

impl<'p, T: Real> Ctx<'p, T> {
    /// Parameters enter the graph as differentiable leaves.
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            g: Graph::new(),
            params,
            vars: HashMap::new(),
            trainable: true,
        }
    }

    /// Parameters enter as constants; only explicitly created leaves get
    /// gradients.
    pub fn frozen(params: &'p ParamStore<T>) -> Self {
        Self {
            trainable: false,
            ..Self::new(params)
        }
    }

    pub fn param(&mut self, name: &str) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let value = self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("parameter `{name}` missing from store"))
            .clone();
        let v = if self.trainable {
            self.g.leaf(value)
        } else {
            self.g.constant(value)
        };
        self.vars.insert(name.to_string(), v);
        v
    }

    /// Gradients of every parameter used in this pass, by name.
    pub fn param_grads(&self, grads: &Gradients<T>) -> ParamStore<T> {
        self.vars
            .iter()
            .filter_map(|(k, &v)| grads.get(v).map(|g| (k.clone(), g.clone())))
            .collect()
    }
}

fn normal<T: Real, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    Tensor::randn(shape, std, rng)
}

#[derive(Clone, Debug)]
pub struct Conv {
    pub name: String,
    pub cin: usize,
    pub cout: usize,
    pub kernel: [usize; 3],
    pub geom: Conv3dGeometry,
    pub bias: bool,
}

impl Conv {
    pub fn cube(name: impl Into<String>, cin: usize, cout: usize, stride: usize) -> Self {
        Self {
            name: name.into(),
            cin,
            cout,
            kernel: [3; 3],
            geom: Conv3dGeometry::new(stride, [1; 3]),
            bias: false,
        }
    }

    pub fn weight(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn weight_shape(&self) -> [usize; 5] {
        let [a, b, c] = self.kernel;
        [self.cout, self.cin, a, b, c]
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let fan_in = self.cin * self.kernel.iter().product::<usize>();
        let std = (2.0 / fan_in as f64).sqrt();
        store.insert(self.weight(), normal(&self.weight_shape(), std, rng));
        if self.bias {
            store.insert(self.bias_name(), Tensor::zeros(&[self.cout]));
        }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Var {
        let w = cx.param(&self.weight());
        let b = self.bias.then(|| cx.param(&self.bias_name()));
        cx.g.conv3d(x, w, b, self.geom)
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub name: String,
    pub channels: usize,
    pub groups: usize,
}

impl GroupNorm {
    /// Norm for maps of `channels` x `voxels` spatial positions.
    pub fn new(name: impl Into<String>, channels: usize, voxels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            groups: norm_groups(channels, voxels),
        }
    }

    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) {
        store.insert(format!("{}.gamma", self.name), Tensor::ones(&[self.channels]));
        store.insert(format!("{}.beta", self.name), Tensor::zeros(&[self.channels]));
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Var {
        let gamma = cx.param(&format!("{}.gamma", self.name));
        let beta = cx.param(&format!("{}.beta", self.name));
        cx.g.group_norm(x, gamma, beta, self.groups)
    }
}

/// Normalization over the trailing (channel) axis of token rows.
#[derive(Clone, Debug)]
pub struct TokenNorm {
    pub name: String,
    pub channels: usize,
}

impl TokenNorm {
    pub fn init<T: Real>(&self, store: &mut ParamStore<T>) {
        store.insert(format!("{}.gamma", self.name), Tensor::ones(&[self.channels]));
        store.insert(format!("{}.beta", self.name), Tensor::zeros(&[self.channels]));
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Var {
        let gamma = cx.param(&format!("{}.gamma", self.name));
        let beta = cx.param(&format!("{}.beta", self.name));
        cx.g.layer_norm(x, gamma, beta)
    }
}

/// `y = x W + b` over the trailing axis; `W` is stored `(din, dout)`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub din: usize,
    pub dout: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, din: usize, dout: usize) -> Self {
        Self {
            name: name.into(),
            din,
            dout,
        }
    }

    pub fn weight(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        let std = (1.0 / self.din as f64).sqrt();
        store.insert(self.weight(), normal(&[self.din, self.dout], std, rng));
        store.insert(self.bias(), Tensor::zeros(&[self.dout]));
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Var {
        let w = cx.param(&self.weight());
        let b = cx.param(&self.bias());
        // a rank-3 input broadcasts the matrix over its leading axis
        let y = cx.g.matmul(x, w);
        cx.g.add(y, b)
    }
}

/// Convolution, group normalization, ReLU.
#[derive(Clone, Debug)]
pub struct ConvNormAct {
    pub conv: Conv,
    pub norm: GroupNorm,
}

impl ConvNormAct {
    /// `voxels` is the spatial size of the convolution output.
    pub fn new(conv: Conv, voxels: usize) -> Self {
        let norm = GroupNorm::new(format!("{}.norm", conv.name), conv.cout, voxels);
        let conv = Conv {
            name: format!("{}.conv", conv.name),
            ..conv
        };
        Self { conv, norm }
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.conv.init(store, rng);
        self.norm.init(store);
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Var {
        let y = self.conv.forward(cx, x);
        let y = self.norm.forward(cx, y);
        cx.g.relu(y)
    }
}

/// Two-convolution residual block: conv-norm-ReLU-conv-norm, plus the
/// shortcut (a 1x1x1 convolution and norm when the channel count changes),
/// followed by ReLU.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub name: String,
    pub conv1: Conv,
    pub norm1: GroupNorm,
    pub conv2: Conv,
    pub norm2: GroupNorm,
    pub shortcut: Option<(Conv, GroupNorm)>,
}

impl ResidualBlock {
    /// Isotropic 3x3x3 block on maps of `voxels` spatial positions.
    pub fn new(name: impl Into<String>, cin: usize, cout: usize, voxels: usize) -> Self {
        Self::with_kernel(name, cin, cout, [3; 3], [1; 3], voxels)
    }

    pub fn with_kernel(
        name: impl Into<String>,
        cin: usize,
        cout: usize,
        kernel: [usize; 3],
        padding: [usize; 3],
        voxels: usize,
    ) -> Self {
        let name = name.into();
        let conv = |suffix: &str, cin: usize| Conv {
            name: format!("{name}.{suffix}"),
            cin,
            cout,
            kernel,
            geom: Conv3dGeometry::new(1, padding),
            bias: false,
        };
        let shortcut = (cin != cout).then(|| {
            (
                Conv {
                    name: format!("{name}.shortcut.conv"),
                    cin,
                    cout,
                    kernel: [1; 3],
                    geom: Conv3dGeometry::new(1, [0; 3]),
                    bias: false,
                },
                GroupNorm::new(format!("{name}.shortcut.norm"), cout, voxels),
            )
        });
        Self {
            conv1: conv("conv1", cin),
            norm1: GroupNorm::new(format!("{name}.norm1"), cout, voxels),
            conv2: conv("conv2", cout),
            norm2: GroupNorm::new(format!("{name}.norm2"), cout, voxels),
            shortcut,
            name,
        }
    }

    pub fn init<T: Real, R: Rng + ?Sized>(&self, store: &mut ParamStore<T>, rng: &mut R) {
        self.conv1.init(store, rng);
        self.norm1.init(store);
        self.conv2.init(store, rng);
        self.norm2.init(store);
        if let Some((c, n)) = &self.shortcut {
            c.init(store, rng);
            n.init(store);
        }
    }

    pub fn forward<T: Real>(&self, cx: &mut Ctx<T>, x: Var) -> Var {
        let y = self.conv1.forward(cx, x);
        let y = self.norm1.forward(cx, y);
        let y = cx.g.relu(y);
        let y = self.conv2.forward(cx, y);
        let y = self.norm2.forward(cx, y);
        let skip = match &self.shortcut {
            Some((c, n)) => {
                let s = c.forward(cx, x);
                n.forward(cx, s)
            }
            None => x,
        };
        let sum = cx.g.add(y, skip);
        cx.g.relu(sum)
    }
}

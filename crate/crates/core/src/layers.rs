//! Parameters, seeded initialisation and the plain layers (convolution,
//! batch normalisation, dense) the blocks are assembled from.

use alloc::string::String;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::Graph;
use crate::tensor::{ConvSpec, Real, Shape, Tensor};
use crate::Result;

/// Identity of a parameter tensor. Clones of a parameter share it, so a
/// graph recording both sees one leaf.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(usize);

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A named tensor owned by a layer. Non-trainable entries (normalisation
/// running statistics) travel with checkpoints but are not counted as
/// parameters.
#[derive(Clone, Debug)]
pub struct Param<T> {
    id: ParamId,
    name: String,
    trainable: bool,
    pub value: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param {
            id: ParamId::fresh(),
            name: name.into(),
            trainable: true,
            value,
        }
    }

    pub fn buffer(name: impl Into<String>, value: Tensor<T>) -> Self {
        Param {
            trainable: false,
            ..Param::new(name, value)
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn trainable(&self) -> bool {
        self.trainable
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn shape(&self) -> Shape {
        self.value.shape()
    }
}

/// Anything that owns parameters.
pub trait Module<T: Real> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>));

    /// Number of trainable scalars.
    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| {
            if p.trainable() {
                n += p.numel();
            }
        });
        n
    }

    /// Overwrites every trainable parameter whose name contains `pattern`.
    fn fill_matching(&mut self, pattern: &str, value: T) {
        self.visit_mut(&mut |p| {
            if p.trainable() && p.name().contains(pattern) {
                p.value.data_mut().iter_mut().for_each(|v| *v = value);
            }
        });
    }
}

impl<T: Real, M: Module<T>> Module<T> for Vec<M> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.iter().for_each(|m| m.visit(f));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.iter_mut().for_each(|m| m.visit_mut(f));
    }
}

impl<T: Real, M: Module<T>> Module<T> for Option<M> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        if let Some(m) = self {
            m.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        if let Some(m) = self {
            m.visit_mut(f);
        }
    }
}

/// Deterministic parameter factory: a ChaCha8 stream plus the dotted name
/// prefix of the layer being built.
pub struct Init {
    rng: ChaCha8Rng,
    path: Vec<String>,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            path: Vec::new(),
        }
    }

    /// Runs `f` with `name` appended to the parameter name prefix.
    pub fn scope<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> R) -> R {
        self.path.push(name.into());
        let r = f(self);
        self.path.pop();
        r
    }

    pub fn name(&self, leaf: &str) -> String {
        let mut s = self.path.join(".");
        if !s.is_empty() {
            s.push('.');
        }
        s.push_str(leaf);
        s
    }

    /// He-uniform: `U(−b, b)` with `b = sqrt(6 / fan_in)`.
    pub fn he_uniform<T: Real>(&mut self, leaf: &str, shape: Shape, fan_in: usize) -> Param<T> {
        let bound = Float::sqrt(6.0 / fan_in.max(1) as f64);
        let rng = &mut self.rng;
        let value = Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..bound)));
        Param::new(self.name(leaf), value)
    }

    pub fn zeros<T: Real>(&mut self, leaf: &str, shape: Shape) -> Param<T> {
        Param::new(self.name(leaf), Tensor::zeros(shape))
    }

    pub fn ones<T: Real>(&mut self, leaf: &str, shape: Shape) -> Param<T> {
        Param::new(self.name(leaf), Tensor::ones(shape))
    }

    pub fn uniform<T: Real>(&mut self, leaf: &str, shape: Shape, lo: f64, hi: f64) -> Param<T> {
        let rng = &mut self.rng;
        let value = Tensor::from_fn(shape, |_| T::of(rng.gen_range(lo..hi)));
        Param::new(self.name(leaf), value)
    }
}

/// Shape of a per-channel vector parameter.
pub const fn vector(len: usize) -> Shape {
    Shape::new(1, len, 1, 1)
}

/// Convolution with an optional per-channel bias.
#[derive(Clone, Debug)]
pub struct Conv<T> {
    pub spec: ConvSpec,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Real> Conv<T> {
    pub fn new(init: &mut Init, leaf: &str, spec: ConvSpec, bias: bool) -> Result<Self> {
        spec.validate()?;
        init.scope(leaf, |init| {
            let ws = spec.weight_shape();
            let fan_in = ws.channels * ws.height * ws.width;
            Ok(Conv {
                spec,
                weight: init.he_uniform("weight", ws, fan_in),
                bias: bias.then(|| init.zeros("bias", vector(spec.out_channels))),
            })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let w = g.param(&self.weight)?;
        let b = match &self.bias {
            Some(b) => Some(g.param(b)?),
            None => None,
        };
        g.conv2d(x, &w, b.as_ref(), &self.spec)
    }
}

impl<T: Real> Module<T> for Conv<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        self.bias.iter().for_each(|b| f(b));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        self.bias.iter_mut().for_each(|b| f(b));
    }
}

/// Inference-mode batch normalisation. Scale and shift are trainable; the
/// running statistics are buffers.
#[derive(Clone, Debug)]
pub struct BatchNorm<T> {
    pub scale: Param<T>,
    pub shift: Param<T>,
    pub mean: Param<T>,
    pub var: Param<T>,
    pub eps: T,
}

impl<T: Real> BatchNorm<T> {
    pub fn new(init: &mut Init, leaf: &str, channels: usize) -> Self {
        init.scope(leaf, |init| BatchNorm {
            scale: init.ones("scale", vector(channels)),
            shift: init.zeros("shift", vector(channels)),
            mean: Param::buffer(init.name("running_mean"), Tensor::zeros(vector(channels))),
            var: Param::buffer(init.name("running_var"), Tensor::ones(vector(channels))),
            eps: T::of(1e-5),
        })
    }

    pub fn channels(&self) -> usize {
        self.scale.numel()
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let scale = g.param(&self.scale)?;
        let shift = g.param(&self.shift)?;
        g.batchnorm(
            x,
            &scale,
            &shift,
            self.mean.value.data(),
            self.var.value.data(),
            self.eps,
        )
    }
}

impl<T: Real> Module<T> for BatchNorm<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.scale);
        f(&self.shift);
        f(&self.mean);
        f(&self.var);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.scale);
        f(&mut self.shift);
        f(&mut self.mean);
        f(&mut self.var);
    }
}

/// Convolution, batch normalisation and an optional ReLU.
#[derive(Clone, Debug)]
pub struct ConvBn<T> {
    pub conv: Conv<T>,
    pub bn: BatchNorm<T>,
    pub relu: bool,
}

impl<T: Real> ConvBn<T> {
    pub fn new(init: &mut Init, leaf: &str, spec: ConvSpec, relu: bool) -> Result<Self> {
        init.scope(leaf, |init| {
            Ok(ConvBn {
                conv: Conv::new(init, "conv", spec, false)?,
                bn: BatchNorm::new(init, "bn", spec.out_channels),
                relu,
            })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let y = self.conv.forward(g, x)?;
        let y = self.bn.forward(g, &y)?;
        if self.relu {
            g.relu(&y)
        } else {
            Ok(y)
        }
    }
}

impl<T: Real> Module<T> for ConvBn<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }
}

/// Dense layer over per-sample channel vectors.
#[derive(Clone, Debug)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
}

impl<T: Real> Linear<T> {
    pub fn new(init: &mut Init, leaf: &str, inputs: usize, outputs: usize, bias: bool) -> Self {
        init.scope(leaf, |init| Linear {
            weight: init.he_uniform("weight", Shape::new(outputs, inputs, 1, 1), inputs),
            bias: bias.then(|| init.zeros("bias", vector(outputs))),
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape().channels
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape().batch
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let w = g.param(&self.weight)?;
        let b = match &self.bias {
            Some(b) => Some(g.param(b)?),
            None => None,
        };
        g.fully_connected(x, &w, b.as_ref())
    }
}

impl<T: Real> Module<T> for Linear<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.weight);
        self.bias.iter().for_each(|b| f(b));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.weight);
        self.bias.iter_mut().for_each(|b| f(b));
    }
}

/// Depthwise 3×3 (+BN) followed by pointwise 1×1 (+BN+ReLU); the
/// resampling unit of transitions and the aggregation head.
#[derive(Clone, Debug)]
pub struct DwPw<T> {
    pub dw: ConvBn<T>,
    pub pw: ConvBn<T>,
}

impl<T: Real> DwPw<T> {
    pub fn new(
        init: &mut Init,
        leaf: &str,
        inputs: usize,
        outputs: usize,
        stride: usize,
        relu: bool,
    ) -> Result<Self> {
        init.scope(leaf, |init| {
            Ok(DwPw {
                dw: ConvBn::new(
                    init,
                    "dw",
                    ConvSpec::depthwise(inputs, 3).stride(stride),
                    false,
                )?,
                pw: ConvBn::new(init, "pw", ConvSpec::pointwise(inputs, outputs), relu)?,
            })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let y = self.dw.forward(g, x)?;
        self.pw.forward(g, &y)
    }
}

impl<T: Real> Module<T> for DwPw<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.dw.visit(f);
        self.pw.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.dw.visit_mut(f);
        self.pw.visit_mut(f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded() {
        let a: Param<f64> = Init::new(9).he_uniform("w", Shape::new(2, 3, 3, 3), 27);
        let b: Param<f64> = Init::new(9).he_uniform("w", Shape::new(2, 3, 3, 3), 27);
        assert_eq!(a.value, b.value);
        assert_ne!(a.id(), b.id());
        let bound = (6.0f64 / 27.0).sqrt();
        assert!(a.value.data().iter().all(|v| v.abs() < bound));
    }

    #[test]
    fn names_follow_scopes() {
        let mut init = Init::new(0);
        let conv: Conv<f32> = init
            .scope("stage2", |i| {
                Conv::new(i, "fuse", ConvSpec::pointwise(2, 4), true)
            })
            .unwrap();
        assert_eq!(conv.weight.name(), "stage2.fuse.weight");
        assert_eq!(conv.bias.as_ref().unwrap().name(), "stage2.fuse.bias");
        assert_eq!(conv.num_params(), 12);
    }

    #[test]
    fn batchnorm_counts_only_affine() {
        let bn: BatchNorm<f32> = BatchNorm::new(&mut Init::new(0), "bn", 5);
        assert_eq!(bn.num_params(), 10);
        let mut all = 0;
        bn.visit(&mut |p| all += p.numel());
        assert_eq!(all, 20);
    }
}

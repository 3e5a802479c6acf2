//! Adaptive context modelling: pool, shift, weight. Dense context modelling
//! runs it jointly over all branches of a stage; global context modelling
//! runs it per branch with a single pooled cell.

use alloc::vec::Vec;

use crate::autograd::Graph;
use crate::layers::{BatchNorm, Conv, Init, Module, Param};
use crate::tensor::{ConvSpec, Real, Shape, Tensor};
use crate::{Error, Result};

/// Bottleneck ratio of the shift in dense context modelling.
pub const DCM_RATIO: usize = 16;
/// Bottleneck ratio of the shift in global context modelling.
pub const GCM_RATIO: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AcmSpec {
    pub channels: usize,
    pub out: (usize, usize),
    pub ratio: usize,
}

impl AcmSpec {
    pub fn new(channels: usize, out: (usize, usize), ratio: usize) -> Result<Self> {
        if channels == 0 || out.0 == 0 || out.1 == 0 || ratio == 0 {
            return Err(Error::invalid(
                "acm",
                "channels, output size and ratio must be positive",
            ));
        }
        Ok(AcmSpec {
            channels,
            out,
            ratio,
        })
    }

    /// Width of the shift bottleneck, `max(C/r, 1)`.
    pub fn hidden(&self) -> usize {
        (self.channels / self.ratio).max(1)
    }
}

/// Branch layout of one stage as seen by dense context modelling.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DcmStageSpec {
    pub channels: Vec<usize>,
    pub resolutions: Vec<(usize, usize)>,
}

impl DcmStageSpec {
    /// Checks that every branch halves the resolution and doubles the
    /// channels of the previous one.
    pub fn new(channels: Vec<usize>, resolutions: Vec<(usize, usize)>) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("dcm", "at least one branch is required"));
        }
        if channels.len() != resolutions.len() {
            return Err(Error::mismatch(
                "dcm",
                "branches",
                channels.len(),
                resolutions.len(),
            ));
        }
        for k in 1..channels.len() {
            if channels[k] != 2 * channels[k - 1] {
                return Err(Error::mismatch(
                    "dcm",
                    "branch channels",
                    2 * channels[k - 1],
                    channels[k],
                ));
            }
            let (h, w) = resolutions[k - 1];
            if resolutions[k] != (h / 2, w / 2) || h % 2 != 0 || w % 2 != 0 {
                return Err(Error::invalid(
                    "dcm",
                    alloc::format!(
                        "branch {k} resolution {:?} is not half of {:?}",
                        resolutions[k],
                        (h, w)
                    ),
                ));
            }
        }
        Ok(DcmStageSpec {
            channels,
            resolutions,
        })
    }

    pub fn lowest(&self) -> (usize, usize) {
        *self.resolutions.last().expect("non-empty")
    }

    pub fn total_channels(&self) -> usize {
        self.channels.iter().sum()
    }
}

/// 1×1 convolution to one logit map, softmax within each pooling bin, and
/// the mask-weighted sum of every channel.
#[derive(Clone, Debug)]
pub struct AcmPool<T> {
    pub mask: Conv<T>,
}

impl<T: Real> AcmPool<T> {
    pub fn new(init: &mut Init, leaf: &str, channels: usize) -> Result<Self> {
        Ok(AcmPool {
            mask: Conv::new(init, leaf, ConvSpec::pointwise(channels, 1), true)?,
        })
    }

    pub fn forward<G: Graph<T>>(
        &self,
        g: &mut G,
        x: &G::Value,
        out: (usize, usize),
    ) -> Result<G::Value> {
        let logits = self.mask.forward(g, x)?;
        g.context_pool(x, &logits, out)
    }
}

impl<T: Real> Module<T> for AcmPool<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.mask.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.mask.visit_mut(f);
    }
}

/// Two 1×1 convolutions with normalisation and ReLU between them, applied
/// at every pooled position.
#[derive(Clone, Debug)]
pub struct Shift<T> {
    pub reduce: Conv<T>,
    pub bn: BatchNorm<T>,
    pub expand: Conv<T>,
}

impl<T: Real> Shift<T> {
    pub fn new(init: &mut Init, leaf: &str, channels: usize, hidden: usize) -> Result<Self> {
        init.scope(leaf, |init| {
            Ok(Shift {
                reduce: Conv::new(init, "reduce", ConvSpec::pointwise(channels, hidden), true)?,
                bn: BatchNorm::new(init, "bn", hidden),
                expand: Conv::new(init, "expand", ConvSpec::pointwise(hidden, channels), true)?,
            })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let h = self.reduce.forward(g, x)?;
        let h = self.bn.forward(g, &h)?;
        let h = g.relu(&h)?;
        self.expand.forward(g, &h)
    }
}

impl<T: Real> Module<T> for Shift<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.reduce.visit(f);
        self.bn.visit(f);
        self.expand.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.reduce.visit_mut(f);
        self.bn.visit_mut(f);
        self.expand.visit_mut(f);
    }
}

/// `x ⊙ sigmoid(ctx)`; `ctx` has the spatial size of `x` or a single cell.
pub fn apply_context<T: Real, G: Graph<T>>(
    g: &mut G,
    x: &G::Value,
    ctx: &G::Value,
) -> Result<G::Value> {
    let (xs, cs) = (g.shape(x), g.shape(ctx));
    let spatial_ok =
        (cs.height, cs.width) == (xs.height, xs.width) || (cs.height, cs.width) == (1, 1);
    if cs.channels != xs.channels || !spatial_ok {
        return Err(Error::invalid(
            "context_weight",
            alloc::format!("context {cs} does not broadcast to {xs}"),
        ));
    }
    let gate = g.sigmoid(ctx)?;
    g.mul(x, &gate)
}

/// Tensor form of [`apply_context`].
pub fn context_weight<T: Real>(x: &Tensor<T>, ctx: &Tensor<T>) -> Result<Tensor<T>> {
    apply_context(&mut crate::autograd::Eval::new(), x, ctx)
}

/// Pool to `spec.out`, shift, upsample back if needed, weight.
#[derive(Clone, Debug)]
pub struct Acm<T> {
    pub spec: AcmSpec,
    pub pool: AcmPool<T>,
    pub shift: Shift<T>,
}

impl<T: Real> Acm<T> {
    pub fn new(init: &mut Init, leaf: &str, spec: AcmSpec) -> Result<Self> {
        init.scope(leaf, |init| {
            Ok(Acm {
                spec,
                pool: AcmPool::new(init, "pool", spec.channels)?,
                shift: Shift::new(init, "shift", spec.channels, spec.hidden())?,
            })
        })
    }

    /// Global context modelling: pooled to a single cell.
    pub fn global(init: &mut Init, leaf: &str, channels: usize, ratio: usize) -> Result<Self> {
        Self::new(init, leaf, AcmSpec::new(channels, (1, 1), ratio)?)
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let s = g.shape(x);
        if s.channels != self.spec.channels {
            return Err(Error::mismatch(
                "acm",
                "channels",
                self.spec.channels,
                s.channels,
            ));
        }
        let ctx = self.pool.forward(g, x, self.spec.out)?;
        let ctx = self.shift.forward(g, &ctx)?;
        let ctx = if self.spec.out == (1, 1) || self.spec.out == (s.height, s.width) {
            ctx
        } else {
            g.upsample(&ctx, (s.height, s.width))?
        };
        apply_context(g, x, &ctx)
    }
}

impl<T: Real> Module<T> for Acm<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.pool.visit(f);
        self.shift.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.pool.visit_mut(f);
        self.shift.visit_mut(f);
    }
}

/// Dense context modelling over the branches of a stage. Every branch but
/// the lowest-resolution one is context-pooled to the lowest resolution;
/// the lowest enters unpooled. One shift runs over the concatenation and
/// each branch is weighted by its upsampled share.
#[derive(Clone, Debug)]
pub struct Dcm<T> {
    pub channels: Vec<usize>,
    pub pools: Vec<AcmPool<T>>,
    pub shift: Shift<T>,
}

impl<T: Real> Dcm<T> {
    pub fn new(init: &mut Init, leaf: &str, channels: &[usize], ratio: usize) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::invalid("dcm", "at least one branch is required"));
        }
        let spec = AcmSpec::new(channels.iter().sum(), (1, 1), ratio)?;
        init.scope(leaf, |init| {
            let pools = channels[..channels.len() - 1]
                .iter()
                .enumerate()
                .map(|(k, &c)| AcmPool::new(init, &alloc::format!("pool{k}"), c))
                .collect::<Result<Vec<_>>>()?;
            Ok(Dcm {
                channels: channels.to_vec(),
                pools,
                shift: Shift::new(init, "shift", spec.channels, spec.hidden())?,
            })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, xs: &[G::Value]) -> Result<Vec<G::Value>> {
        let n = self.channels.len();
        if xs.len() != n {
            return Err(Error::mismatch("dcm", "branches", n, xs.len()));
        }
        let shapes: Vec<Shape> = xs.iter().map(|x| g.shape(x)).collect();
        for (k, s) in shapes.iter().enumerate() {
            if s.channels != self.channels[k] {
                return Err(Error::mismatch(
                    "dcm",
                    "branch channels",
                    self.channels[k],
                    s.channels,
                ));
            }
        }
        let low = (shapes[n - 1].height, shapes[n - 1].width);
        let mut pooled = Vec::with_capacity(n);
        for (pool, x) in self.pools.iter().zip(xs) {
            pooled.push(pool.forward(g, x, low)?);
        }
        pooled.push(xs[n - 1].clone());
        let cat = if n == 1 {
            pooled.pop().expect("one branch")
        } else {
            g.concat(&pooled)?
        };
        let ctx = self.shift.forward(g, &cat)?;
        let parts = if n == 1 {
            alloc::vec![ctx]
        } else {
            g.split(&ctx, &self.channels)?
        };
        let mut ys = Vec::with_capacity(n);
        for (k, (x, c)) in xs.iter().zip(parts).enumerate() {
            let s = shapes[k];
            let c = if (s.height, s.width) == low {
                c
            } else {
                g.upsample(&c, (s.height, s.width))?
            };
            ys.push(apply_context(g, x, &c)?);
        }
        Ok(ys)
    }
}

impl<T: Real> Module<T> for Dcm<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.pools.visit(f);
        self.shift.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.pools.visit_mut(f);
        self.shift.visit_mut(f);
    }
}

//! Stage and stem blocks, multi-scale fusion and branch transitions.
//!
//! Normalisation follows every convolution; ReLU follows 1×1 convolutions
//! only.

use alloc::format;
use alloc::vec::Vec;

use crate::acm::{apply_context, Acm, Dcm, DCM_RATIO, GCM_RATIO};
use crate::autograd::{scoped, split_even, Graph};
use crate::dsc::{DkaConv, Dsc};
use crate::layers::{BatchNorm, Conv, ConvBn, DwPw, Init, Module, Param};
use crate::tensor::{ConvSpec, Real};
use crate::{Error, Result};

/// Which operators a block is assembled from. The defaults give the
/// dynamic blocks; the alternatives give the static baseline used for
/// ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct BlockOptions {
    /// Adaptive context modelling (dense + global) instead of
    /// cross-resolution and spatial weighting.
    pub acm: bool,
    /// Dynamic split convolution instead of a plain depthwise 3×3.
    pub dsc: bool,
    pub dcm_ratio: usize,
    pub gcm_ratio: usize,
    /// Ratios of the static weighting baseline.
    pub crw_ratio: usize,
    pub sw_ratio: usize,
}

impl Default for BlockOptions {
    fn default() -> Self {
        BlockOptions {
            acm: true,
            dsc: true,
            dcm_ratio: DCM_RATIO,
            gcm_ratio: GCM_RATIO,
            crw_ratio: 8,
            sw_ratio: 4,
        }
    }
}

/// DKA-wrapped convolution with normalisation and optional ReLU.
#[derive(Clone, Debug)]
pub struct DkaConvBn<T> {
    pub conv: DkaConv<T>,
    pub bn: BatchNorm<T>,
    pub relu: bool,
}

impl<T: Real> DkaConvBn<T> {
    pub fn new(init: &mut Init, leaf: &str, spec: ConvSpec, n: usize, relu: bool) -> Result<Self> {
        init.scope(leaf, |init| {
            Ok(DkaConvBn {
                conv: DkaConv::new(init, "conv", spec, n)?,
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

impl<T: Real> Module<T> for DkaConvBn<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv.visit(f);
        self.bn.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_mut(f);
        self.bn.visit_mut(f);
    }
}

/// Static cross-resolution weighting: average-pool every branch to the
/// lowest resolution, a 1×1 bottleneck, sigmoid weights redistributed by
/// upsampling.
#[derive(Clone, Debug)]
pub struct CrossResolutionWeighting<T> {
    pub channels: Vec<usize>,
    pub reduce: ConvBn<T>,
    pub expand: ConvBn<T>,
}

impl<T: Real> CrossResolutionWeighting<T> {
    pub fn new(init: &mut Init, leaf: &str, channels: &[usize], ratio: usize) -> Result<Self> {
        let total: usize = channels.iter().sum();
        let hidden = (total / ratio.max(1)).max(1);
        init.scope(leaf, |init| {
            Ok(CrossResolutionWeighting {
                channels: channels.to_vec(),
                reduce: ConvBn::new(init, "reduce", ConvSpec::pointwise(total, hidden), true)?,
                expand: ConvBn::new(init, "expand", ConvSpec::pointwise(hidden, total), false)?,
            })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, xs: &[G::Value]) -> Result<Vec<G::Value>> {
        let n = self.channels.len();
        if xs.len() != n {
            return Err(Error::mismatch("crw", "branches", n, xs.len()));
        }
        let low = {
            let s = g.shape(&xs[n - 1]);
            (s.height, s.width)
        };
        let mut pooled = Vec::with_capacity(n);
        for x in &xs[..n - 1] {
            pooled.push(g.adaptive_avg_pool(x, low)?);
        }
        pooled.push(xs[n - 1].clone());
        let cat = if n == 1 {
            pooled.pop().expect("one branch")
        } else {
            g.concat(&pooled)?
        };
        let h = self.reduce.forward(g, &cat)?;
        let ctx = self.expand.forward(g, &h)?;
        let parts = if n == 1 {
            alloc::vec![ctx]
        } else {
            g.split(&ctx, &self.channels)?
        };
        let mut ys = Vec::with_capacity(n);
        for (x, c) in xs.iter().zip(parts) {
            let s = g.shape(x);
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

impl<T: Real> Module<T> for CrossResolutionWeighting<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.reduce.visit(f);
        self.expand.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.reduce.visit_mut(f);
        self.expand.visit_mut(f);
    }
}

/// Static per-branch channel weighting: global average pool, 1×1
/// bottleneck with ReLU, sigmoid weights.
#[derive(Clone, Debug)]
pub struct SpatialWeighting<T> {
    pub reduce: Conv<T>,
    pub expand: Conv<T>,
}

impl<T: Real> SpatialWeighting<T> {
    pub fn new(init: &mut Init, leaf: &str, channels: usize, ratio: usize) -> Result<Self> {
        let hidden = (channels / ratio.max(1)).max(1);
        init.scope(leaf, |init| {
            Ok(SpatialWeighting {
                reduce: Conv::new(init, "reduce", ConvSpec::pointwise(channels, hidden), true)?,
                expand: Conv::new(init, "expand", ConvSpec::pointwise(hidden, channels), true)?,
            })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let p = g.global_avg_pool(x)?;
        let h = self.reduce.forward(g, &p)?;
        let h = g.relu(&h)?;
        let ctx = self.expand.forward(g, &h)?;
        apply_context(g, x, &ctx)
    }
}

impl<T: Real> Module<T> for SpatialWeighting<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.reduce.visit(f);
        self.expand.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.reduce.visit_mut(f);
        self.expand.visit_mut(f);
    }
}

#[derive(Clone, Debug)]
pub enum StageContext<T> {
    Dense(Dcm<T>),
    CrossResolution(CrossResolutionWeighting<T>),
}

impl<T: Real> StageContext<T> {
    fn forward<G: Graph<T>>(&self, g: &mut G, xs: &[G::Value]) -> Result<Vec<G::Value>> {
        match self {
            StageContext::Dense(m) => m.forward(g, xs),
            StageContext::CrossResolution(m) => m.forward(g, xs),
        }
    }
}

impl<T: Real> Module<T> for StageContext<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        match self {
            StageContext::Dense(m) => m.visit(f),
            StageContext::CrossResolution(m) => m.visit(f),
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            StageContext::Dense(m) => m.visit_mut(f),
            StageContext::CrossResolution(m) => m.visit_mut(f),
        }
    }
}

#[derive(Clone, Debug)]
pub enum BranchConv<T> {
    Dynamic(Dsc<T>),
    Depthwise(Conv<T>),
}

#[derive(Clone, Debug)]
pub enum BranchContext<T> {
    Global(Acm<T>),
    Spatial(SpatialWeighting<T>),
}

/// Per-branch part of a DMC operator: convolution + BN, then context.
#[derive(Clone, Debug)]
pub struct DmcBranch<T> {
    pub conv: BranchConv<T>,
    pub bn: BatchNorm<T>,
    pub context: BranchContext<T>,
}

impl<T: Real> DmcBranch<T> {
    fn new(
        init: &mut Init,
        leaf: &str,
        c: usize,
        g: usize,
        n: usize,
        opts: &BlockOptions,
    ) -> Result<Self> {
        init.scope(leaf, |init| {
            let conv = if opts.dsc {
                BranchConv::Dynamic(Dsc::new(init, "dsc", c, g, n)?)
            } else {
                BranchConv::Depthwise(Conv::new(init, "dw", ConvSpec::depthwise(c, 3), false)?)
            };
            let bn = BatchNorm::new(init, "bn", c);
            let context = if opts.acm {
                BranchContext::Global(Acm::global(init, "gcm", c, opts.gcm_ratio)?)
            } else {
                BranchContext::Spatial(SpatialWeighting::new(init, "sw", c, opts.sw_ratio)?)
            };
            Ok(DmcBranch { conv, bn, context })
        })
    }

    fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let y = match &self.conv {
            BranchConv::Dynamic(m) => scoped(g, "dsc", |g| m.forward(g, x))?,
            BranchConv::Depthwise(m) => scoped(g, "dw", |g| m.forward(g, x))?,
        };
        let y = self.bn.forward(g, &y)?;
        match &self.context {
            BranchContext::Global(m) => scoped(g, "gcm", |g| m.forward(g, &y)),
            BranchContext::Spatial(m) => scoped(g, "sw", |g| m.forward(g, &y)),
        }
    }
}

impl<T: Real> Module<T> for DmcBranch<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        match &self.conv {
            BranchConv::Dynamic(m) => m.visit(f),
            BranchConv::Depthwise(m) => m.visit(f),
        }
        self.bn.visit(f);
        match &self.context {
            BranchContext::Global(m) => m.visit(f),
            BranchContext::Spatial(m) => m.visit(f),
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match &mut self.conv {
            BranchConv::Dynamic(m) => m.visit_mut(f),
            BranchConv::Depthwise(m) => m.visit_mut(f),
        }
        self.bn.visit_mut(f);
        match &mut self.context {
            BranchContext::Global(m) => m.visit_mut(f),
            BranchContext::Spatial(m) => m.visit_mut(f),
        }
    }
}

/// Dynamic multi-scale context operator over all branches of a stage.
///
/// Each branch is split into a passive and an active half. The active
/// halves pass dense context modelling jointly, then per branch a DSC with
/// BN and a GCM. Passive and processed halves are concatenated and
/// shuffled with two groups.
#[derive(Clone, Debug)]
pub struct DmcBlock<T> {
    pub channels: Vec<usize>,
    pub context: StageContext<T>,
    pub branches: Vec<DmcBranch<T>>,
}

impl<T: Real> DmcBlock<T> {
    pub fn new(
        init: &mut Init,
        leaf: &str,
        channels: &[usize],
        groups: &[usize],
        kernels: &[usize],
        opts: &BlockOptions,
    ) -> Result<Self> {
        let n = channels.len();
        if n == 0 {
            return Err(Error::invalid("dmc", "at least one branch is required"));
        }
        if groups.len() < n || kernels.len() < n {
            return Err(Error::invalid(
                "dmc",
                format!("need G and N for {n} branches"),
            ));
        }
        if let Some(&c) = channels.iter().find(|&&c| c % 2 != 0) {
            return Err(Error::Indivisible {
                op: "dmc",
                what: "channels",
                value: c,
                divisor: 2,
            });
        }
        let active: Vec<usize> = channels.iter().map(|c| c / 2).collect();
        init.scope(leaf, |init| {
            let context = if opts.acm {
                StageContext::Dense(Dcm::new(init, "dcm", &active, opts.dcm_ratio)?)
            } else {
                StageContext::CrossResolution(CrossResolutionWeighting::new(
                    init,
                    "crw",
                    &active,
                    opts.crw_ratio,
                )?)
            };
            let branches = (0..n)
                .map(|k| {
                    DmcBranch::new(
                        init,
                        &format!("branch{k}"),
                        active[k],
                        groups[k],
                        kernels[k],
                        opts,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(DmcBlock {
                channels: channels.to_vec(),
                context,
                branches,
            })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, xs: &[G::Value]) -> Result<Vec<G::Value>> {
        let n = self.channels.len();
        if xs.len() != n {
            return Err(Error::mismatch("dmc", "branches", n, xs.len()));
        }
        let mut passive = Vec::with_capacity(n);
        let mut active = Vec::with_capacity(n);
        for (k, x) in xs.iter().enumerate() {
            let c = g.shape(x).channels;
            if c != self.channels[k] {
                return Err(Error::mismatch(
                    "dmc",
                    "branch channels",
                    self.channels[k],
                    c,
                ));
            }
            let mut halves = scoped(g, &format!("branch{k}"), |g| split_even(g, x, 2))?;
            active.push(halves.pop().expect("two halves"));
            passive.push(halves.pop().expect("two halves"));
        }
        let name = match self.context {
            StageContext::Dense(_) => "dcm",
            StageContext::CrossResolution(_) => "crw",
        };
        let active = scoped(g, name, |g| self.context.forward(g, &active))?;
        let mut ys = Vec::with_capacity(n);
        for (k, ((branch, p), a)) in self.branches.iter().zip(passive).zip(active).enumerate() {
            let y = scoped(g, &format!("branch{k}"), |g| {
                let a = branch.forward(g, &a)?;
                let y = g.concat(&[p, a])?;
                g.shuffle(&y, 2)
            })?;
            ys.push(y);
        }
        Ok(ys)
    }
}

impl<T: Real> Module<T> for DmcBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.context.visit(f);
        self.branches.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.context.visit_mut(f);
        self.branches.visit_mut(f);
    }
}

/// Stride-2 stem block. The channels are split in two; one half runs
/// strided DW 3×3, GCM, 1×1; the other DW 3×3, GCM, 1×1, strided DW 3×3.
/// Every convolution takes its kernel from dynamic kernel aggregation.
#[derive(Clone, Debug)]
pub struct DgcBlock<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub a_dw: DkaConvBn<T>,
    pub a_gcm: Acm<T>,
    pub a_pw: DkaConvBn<T>,
    pub b_dw: DkaConvBn<T>,
    pub b_gcm: Acm<T>,
    pub b_pw: DkaConvBn<T>,
    pub b_down: DkaConvBn<T>,
}

impl<T: Real> DgcBlock<T> {
    pub fn new(
        init: &mut Init,
        leaf: &str,
        in_channels: usize,
        out_channels: usize,
        kernels: usize,
        gcm_ratio: usize,
    ) -> Result<Self> {
        for (what, c) in [("in_channels", in_channels), ("out_channels", out_channels)] {
            if c == 0 || c % 2 != 0 {
                return Err(Error::Indivisible {
                    op: "dgc",
                    what,
                    value: c,
                    divisor: 2,
                });
            }
        }
        let (h, o) = (in_channels / 2, out_channels / 2);
        init.scope(leaf, |init| {
            Ok(DgcBlock {
                in_channels,
                out_channels,
                a_dw: DkaConvBn::new(
                    init,
                    "a_dw",
                    ConvSpec::depthwise(h, 3).stride(2),
                    kernels,
                    false,
                )?,
                a_gcm: Acm::global(init, "a_gcm", h, gcm_ratio)?,
                a_pw: DkaConvBn::new(init, "a_pw", ConvSpec::pointwise(h, o), kernels, true)?,
                b_dw: DkaConvBn::new(init, "b_dw", ConvSpec::depthwise(h, 3), kernels, false)?,
                b_gcm: Acm::global(init, "b_gcm", h, gcm_ratio)?,
                b_pw: DkaConvBn::new(init, "b_pw", ConvSpec::pointwise(h, o), kernels, true)?,
                b_down: DkaConvBn::new(
                    init,
                    "b_down",
                    ConvSpec::depthwise(o, 3).stride(2),
                    kernels,
                    false,
                )?,
            })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let c = g.shape(x).channels;
        if c != self.in_channels {
            return Err(Error::mismatch("dgc", "channels", self.in_channels, c));
        }
        let mut halves = split_even(g, x, 2)?;
        let xb = halves.pop().expect("two halves");
        let xa = halves.pop().expect("two halves");
        let ya = scoped(g, "a", |g| {
            let y = self.a_dw.forward(g, &xa)?;
            let y = scoped(g, "gcm", |g| self.a_gcm.forward(g, &y))?;
            self.a_pw.forward(g, &y)
        })?;
        let yb = scoped(g, "b", |g| {
            let y = self.b_dw.forward(g, &xb)?;
            let y = scoped(g, "gcm", |g| self.b_gcm.forward(g, &y))?;
            let y = self.b_pw.forward(g, &y)?;
            self.b_down.forward(g, &y)
        })?;
        let y = g.concat(&[ya, yb])?;
        g.shuffle(&y, 2)
    }

    /// The dynamic convolutions, in forward order.
    pub fn dynamic_convs(&self) -> [&DkaConvBn<T>; 5] {
        [&self.a_dw, &self.a_pw, &self.b_dw, &self.b_pw, &self.b_down]
    }
}

impl<T: Real> Module<T> for DgcBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.a_dw.visit(f);
        self.a_gcm.visit(f);
        self.a_pw.visit(f);
        self.b_dw.visit(f);
        self.b_gcm.visit(f);
        self.b_pw.visit(f);
        self.b_down.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.a_dw.visit_mut(f);
        self.a_gcm.visit_mut(f);
        self.a_pw.visit_mut(f);
        self.b_dw.visit_mut(f);
        self.b_gcm.visit_mut(f);
        self.b_pw.visit_mut(f);
        self.b_down.visit_mut(f);
    }
}

/// Static shuffle-style stem block of the baseline: one half runs strided
/// DW 3×3 and 1×1; the other 1×1 expansion, strided DW 3×3, 1×1.
#[derive(Clone, Debug)]
pub struct LiteStemBlock<T> {
    pub in_channels: usize,
    pub a: DwPw<T>,
    pub b_expand: ConvBn<T>,
    pub b: DwPw<T>,
}

impl<T: Real> LiteStemBlock<T> {
    pub fn new(
        init: &mut Init,
        leaf: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        if in_channels % 2 != 0 || out_channels % 2 != 0 {
            return Err(Error::Indivisible {
                op: "lite_stem",
                what: "channels",
                value: in_channels,
                divisor: 2,
            });
        }
        let (h, o) = (in_channels / 2, out_channels / 2);
        init.scope(leaf, |init| {
            Ok(LiteStemBlock {
                in_channels,
                a: DwPw::new(init, "a", h, o, 2, true)?,
                b_expand: ConvBn::new(init, "b_expand", ConvSpec::pointwise(h, in_channels), true)?,
                b: DwPw::new(init, "b", in_channels, o, 2, true)?,
            })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let mut halves = split_even(g, x, 2)?;
        let xb = halves.pop().expect("two halves");
        let xa = halves.pop().expect("two halves");
        let ya = scoped(g, "a", |g| self.a.forward(g, &xa))?;
        let yb = scoped(g, "b", |g| {
            let y = self.b_expand.forward(g, &xb)?;
            self.b.forward(g, &y)
        })?;
        let y = g.concat(&[ya, yb])?;
        g.shuffle(&y, 2)
    }
}

impl<T: Real> Module<T> for LiteStemBlock<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.a.visit(f);
        self.b_expand.visit(f);
        self.b.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.a.visit_mut(f);
        self.b_expand.visit_mut(f);
        self.b.visit_mut(f);
    }
}

/// Path from input branch `j` to output branch `i` of a fusion layer.
#[derive(Clone, Debug)]
pub enum FusePath<T> {
    Identity,
    /// 1×1 to the target width, BN, bilinear upsample.
    Up(ConvBn<T>),
    /// One (strided DW 3×3 + BN, 1×1 + BN) step per halving; ReLU after
    /// all but the last step.
    Down(Vec<DwPw<T>>),
}

impl<T: Real> Module<T> for FusePath<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        match self {
            FusePath::Identity => {}
            FusePath::Up(m) => m.visit(f),
            FusePath::Down(m) => m.visit(f),
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        match self {
            FusePath::Identity => {}
            FusePath::Up(m) => m.visit_mut(f),
            FusePath::Down(m) => m.visit_mut(f),
        }
    }
}

/// Every output branch sums resampled contributions of all input branches.
#[derive(Clone, Debug)]
pub struct Fusion<T> {
    pub channels: Vec<usize>,
    /// `paths[i][j]`: from branch `j` into branch `i`.
    pub paths: Vec<Vec<FusePath<T>>>,
}

impl<T: Real> Fusion<T> {
    pub fn new(init: &mut Init, leaf: &str, channels: &[usize]) -> Result<Self> {
        let n = channels.len();
        init.scope(leaf, |init| {
            let mut paths = Vec::with_capacity(n);
            for i in 0..n {
                let mut row = Vec::with_capacity(n);
                for j in 0..n {
                    let name = format!("branch{i}.from{j}");
                    let path = if j == i {
                        FusePath::Identity
                    } else if j > i {
                        let spec = ConvSpec::pointwise(channels[j], channels[i]);
                        FusePath::Up(ConvBn::new(init, &name, spec, false)?)
                    } else {
                        let steps = init.scope(&name, |init| {
                            (0..i - j)
                                .map(|k| {
                                    let last = k == i - j - 1;
                                    let out = if last { channels[i] } else { channels[j] };
                                    DwPw::new(init, &format!("step{k}"), channels[j], out, 2, !last)
                                })
                                .collect::<Result<Vec<_>>>()
                        })?;
                        FusePath::Down(steps)
                    };
                    row.push(path);
                }
                paths.push(row);
            }
            Ok(Fusion {
                channels: channels.to_vec(),
                paths,
            })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, xs: &[G::Value]) -> Result<Vec<G::Value>> {
        let n = self.channels.len();
        if xs.len() != n {
            return Err(Error::mismatch("fusion", "branches", n, xs.len()));
        }
        for (k, x) in xs.iter().enumerate() {
            let c = g.shape(x).channels;
            if c != self.channels[k] {
                return Err(Error::mismatch(
                    "fusion",
                    "branch channels",
                    self.channels[k],
                    c,
                ));
            }
        }
        let mut ys = Vec::with_capacity(n);
        for (i, row) in self.paths.iter().enumerate() {
            let target = {
                let s = g.shape(&xs[i]);
                (s.height, s.width)
            };
            let y = scoped(g, &format!("branch{i}"), |g| {
                let mut acc: Option<G::Value> = None;
                for (j, path) in row.iter().enumerate() {
                    let t = scoped(g, &format!("from{j}"), |g| match path {
                        FusePath::Identity => Ok(xs[j].clone()),
                        FusePath::Up(m) => {
                            let y = m.forward(g, &xs[j])?;
                            g.upsample(&y, target)
                        }
                        FusePath::Down(steps) => {
                            let mut y = xs[j].clone();
                            for s in steps {
                                y = s.forward(g, &y)?;
                            }
                            Ok(y)
                        }
                    })?;
                    acc = Some(match acc {
                        Some(a) => g.add(&a, &t)?,
                        None => t,
                    });
                }
                Ok(acc.expect("at least one branch"))
            })?;
            let s = g.shape(&y);
            if (s.height, s.width) != target {
                return Err(Error::mismatch(
                    "fusion",
                    "branch height",
                    target.0,
                    s.height,
                ));
            }
            ys.push(y);
        }
        Ok(ys)
    }

    /// Number of input→output paths, identities included.
    pub fn path_count(&self) -> usize {
        self.paths.iter().map(Vec::len).sum()
    }
}

impl<T: Real> Module<T> for Fusion<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.paths.iter().for_each(|row| row.visit(f));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.paths.iter_mut().for_each(|row| row.visit_mut(f));
    }
}

/// Stage boundary: existing branches adapt their width if it changes; a new
/// branch of the next width is derived from the lowest-resolution input by
/// a strided DW 3×3 and a 1×1.
#[derive(Clone, Debug)]
pub struct Transition<T> {
    pub adapt: Vec<Option<DwPw<T>>>,
    pub new_branch: DwPw<T>,
}

impl<T: Real> Transition<T> {
    pub fn new(init: &mut Init, leaf: &str, prev: &[usize], next: &[usize]) -> Result<Self> {
        if prev.is_empty() || next.len() != prev.len() + 1 {
            return Err(Error::invalid(
                "transition",
                format!(
                    "expected {} output branches, got {}",
                    prev.len() + 1,
                    next.len()
                ),
            ));
        }
        init.scope(leaf, |init| {
            let adapt = prev
                .iter()
                .zip(next)
                .enumerate()
                .map(|(k, (&p, &q))| {
                    (p != q)
                        .then(|| DwPw::new(init, &format!("branch{k}"), p, q, 1, true))
                        .transpose()
                })
                .collect::<Result<Vec<_>>>()?;
            let k = prev.len();
            let new_branch = DwPw::new(init, &format!("branch{k}"), prev[k - 1], next[k], 2, true)?;
            Ok(Transition { adapt, new_branch })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, xs: &[G::Value]) -> Result<Vec<G::Value>> {
        if xs.len() != self.adapt.len() {
            return Err(Error::mismatch(
                "transition",
                "branches",
                self.adapt.len(),
                xs.len(),
            ));
        }
        let mut ys = Vec::with_capacity(xs.len() + 1);
        for (k, (x, a)) in xs.iter().zip(&self.adapt).enumerate() {
            ys.push(match a {
                Some(m) => scoped(g, &format!("branch{k}"), |g| m.forward(g, x))?,
                None => x.clone(),
            });
        }
        let k = xs.len();
        let last = &xs[k - 1];
        ys.push(scoped(g, &format!("branch{k}"), |g| {
            self.new_branch.forward(g, last)
        })?);
        Ok(ys)
    }
}

impl<T: Real> Module<T> for Transition<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.adapt.iter().for_each(|a| a.visit(f));
        self.new_branch.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.adapt.iter_mut().for_each(|a| a.visit_mut(f));
        self.new_branch.visit_mut(f);
    }
}

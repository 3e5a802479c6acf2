//! Whole-network configuration, construction, forward pass and heatmap
//! decoding.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::autograd::{scoped, Eval, Graph};
use crate::blocks::{BlockOptions, DgcBlock, DmcBlock, Fusion, LiteStemBlock, Transition};
use crate::complexity::{ComplexityReport, CostGraph, LayerNode, Totals};
use crate::layers::{Conv, ConvBn, DwPw, Init, Module, Param};
use crate::tensor::{ConvSpec, Real, Shape, Tensor};
use crate::{Error, Result};

/// Default seed for parameter initialisation.
pub const DEFAULT_SEED: u64 = 20_220_430;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Variant {
    #[cfg_attr(feature = "serde", serde(rename = "18"))]
    Dite18,
    #[cfg_attr(feature = "serde", serde(rename = "30"))]
    Dite30,
    #[cfg_attr(feature = "serde", serde(rename = "custom"))]
    Custom,
}

impl Variant {
    /// Module counts per stage, stem first.
    pub fn module_counts(self) -> Option<[usize; 4]> {
        match self {
            Variant::Dite18 => Some([1, 2, 4, 2]),
            Variant::Dite30 => Some([1, 3, 8, 3]),
            Variant::Custom => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum StemKind {
    /// 3×3 strided convolution followed by the dynamic global context block.
    #[default]
    Dgc,
    /// 3×3 strided convolution followed by the static shuffle stem block.
    Lite,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum HeadKind {
    /// Low-to-high aggregation of all branches, then the keypoint conv.
    #[default]
    Iterative,
    /// Keypoint conv on the highest-resolution branch only.
    Plain,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageConfig {
    pub modules: usize,
    pub branches: usize,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelConfig {
    pub variant: Variant,
    /// Branch widths, highest resolution first.
    pub widths: Vec<usize>,
    pub stem_width: usize,
    /// Stem first; stage `s` has `s + 1` branches.
    pub stages: Vec<StageConfig>,
    /// SCS groups per branch.
    #[cfg_attr(feature = "serde", serde(rename = "G"))]
    pub groups: Vec<usize>,
    /// DKA kernels per branch; the first entry also drives the stem.
    #[cfg_attr(feature = "serde", serde(rename = "N"))]
    pub kernels: Vec<usize>,
    /// Default input `[height, width]`.
    pub input: [usize; 2],
    pub keypoints: usize,
    #[cfg_attr(feature = "serde", serde(default))]
    pub blocks: BlockOptions,
    #[cfg_attr(feature = "serde", serde(default))]
    pub stem: StemKind,
    #[cfg_attr(feature = "serde", serde(default))]
    pub head: HeadKind,
}

fn stages(counts: &[usize]) -> Vec<StageConfig> {
    counts
        .iter()
        .enumerate()
        .map(|(s, &modules)| StageConfig {
            modules,
            branches: s + 1,
        })
        .collect()
}

impl ModelConfig {
    fn dite(variant: Variant) -> Self {
        ModelConfig {
            variant,
            widths: vec![40, 80, 160, 320],
            stem_width: 32,
            stages: stages(&variant.module_counts().expect("named variant")),
            groups: vec![1, 1, 2, 4],
            kernels: vec![4, 4, 2, 1],
            input: [256, 192],
            keypoints: 17,
            blocks: BlockOptions::default(),
            stem: StemKind::Dgc,
            head: HeadKind::Iterative,
        }
    }

    pub fn dite18() -> Self {
        Self::dite(Variant::Dite18)
    }

    pub fn dite30() -> Self {
        Self::dite(Variant::Dite30)
    }

    /// Two stages at width 4 on a 32×32 input, for tests and gradient
    /// checks.
    pub fn tiny() -> Self {
        ModelConfig {
            variant: Variant::Custom,
            widths: vec![4, 8],
            stem_width: 4,
            stages: stages(&[1, 1]),
            groups: vec![1, 2],
            kernels: vec![2, 2],
            input: [32, 32],
            keypoints: 3,
            blocks: BlockOptions::default(),
            stem: StemKind::Dgc,
            head: HeadKind::Iterative,
        }
    }

    /// Static baseline: shuffle stem, cross-resolution and spatial
    /// weighting, plain depthwise convolutions.
    pub fn into_baseline(mut self) -> Self {
        self.stem = StemKind::Lite;
        self.blocks.acm = false;
        self.blocks.dsc = false;
        self
    }

    /// Resolves a configuration id: a base name (`dite18`, `dite30`,
    /// `lite18`, `lite30`, `tiny`) followed by `+`-separated modifiers:
    /// `acm`, `dsc` (enable on a baseline), `G<digits>`, `N<digits>` (one
    /// digit per branch), `dgc`/`litestem` (stem kind), `plainhead`.
    pub fn from_id(id: &str) -> Result<Self> {
        let mut parts = id.split('+');
        let base = parts.next().unwrap_or("");
        let mut cfg = match base {
            "dite18" => Self::dite18(),
            "dite30" => Self::dite30(),
            "lite18" => Self::dite18().into_baseline(),
            "lite30" => Self::dite30().into_baseline(),
            "tiny" => Self::tiny(),
            _ => return Err(Error::Config(format!("unknown configuration `{base}`"))),
        };
        for m in parts {
            match m {
                "acm" => cfg.blocks.acm = true,
                "dsc" => cfg.blocks.dsc = true,
                "dgc" => cfg.stem = StemKind::Dgc,
                "litestem" => cfg.stem = StemKind::Lite,
                "plainhead" => cfg.head = HeadKind::Plain,
                _ if m.starts_with('G') => cfg.groups = digits(id, &m[1..])?,
                _ if m.starts_with('N') => cfg.kernels = digits(id, &m[1..])?,
                _ => return Err(Error::Config(format!("unknown modifier `{m}` in `{id}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn branches(&self) -> usize {
        self.stages.last().map_or(0, |s| s.branches)
    }

    /// Total downsampling of the lowest-resolution branch.
    pub fn max_stride(&self) -> usize {
        1 << (self.branches() + 1)
    }

    /// Module counts, stem first.
    pub fn module_counts(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.modules).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.stages.is_empty() {
            return bad("at least the stem stage is required".into());
        }
        if self.stages[0]
            != (StageConfig {
                modules: 1,
                branches: 1,
            })
        {
            return bad("the first stage is the stem: 1 module, 1 branch".into());
        }
        for (s, st) in self.stages.iter().enumerate() {
            if st.branches != s + 1 {
                return bad(format!(
                    "stage {} must have {} branches, has {}",
                    s + 1,
                    s + 1,
                    st.branches
                ));
            }
            if st.modules == 0 {
                return bad(format!("stage {} has no modules", s + 1));
            }
        }
        if let Some(counts) = self.variant.module_counts() {
            if self.module_counts() != counts {
                return bad(format!(
                    "variant {:?} requires module counts {counts:?}, got {:?}",
                    self.variant,
                    self.module_counts()
                ));
            }
        }
        let n = self.branches();
        if self.widths.len() != n {
            return bad(format!(
                "{n} branches need {n} widths, got {}",
                self.widths.len()
            ));
        }
        for k in 1..n {
            if self.widths[k] != 2 * self.widths[k - 1] {
                return bad(format!(
                    "width of branch {} must double that of branch {k}",
                    k + 1
                ));
            }
        }
        if self.groups.len() != n || self.kernels.len() != n {
            return bad(format!("G and N need one entry per branch ({n})"));
        }
        for k in 0..n {
            let (w, gk, nk) = (self.widths[k], self.groups[k], self.kernels[k]);
            if gk == 0 || nk == 0 {
                return bad(format!("G and N of branch {} must be positive", k + 1));
            }
            if w % 2 != 0 || (w / 2) % gk != 0 {
                return bad(format!(
                    "half of width {w} of branch {} is not divisible by G = {gk}",
                    k + 1
                ));
            }
        }
        if self.stem_width < 2 || self.stem_width % 2 != 0 {
            return bad(format!("stem width {} must be even", self.stem_width));
        }
        self.check_input(self.input[0], self.input[1])?;
        if self.keypoints == 0 {
            return bad("at least one keypoint is required".into());
        }
        let o = &self.blocks;
        if o.dcm_ratio == 0 || o.gcm_ratio == 0 || o.crw_ratio == 0 || o.sw_ratio == 0 {
            return bad("bottleneck ratios must be positive".into());
        }
        Ok(())
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let m = self.max_stride();
        if h == 0 || w == 0 || h % m != 0 || w % m != 0 {
            return Err(Error::Config(format!(
                "input {h}x{w} must be a positive multiple of {m}"
            )));
        }
        Ok(())
    }
}

fn digits(id: &str, s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Err(Error::Config(format!("empty digit list in `{id}`")));
    }
    s.chars()
        .map(|c| {
            c.to_digit(10)
                .map(|d| d as usize)
                .ok_or_else(|| Error::Config(format!("`{c}` is not a digit in `{id}`")))
        })
        .collect()
}

#[derive(Clone, Debug)]
pub enum StemBlock<T> {
    Dgc(DgcBlock<T>),
    Lite(LiteStemBlock<T>),
}

#[derive(Clone, Debug)]
pub struct Stem<T> {
    pub conv: ConvBn<T>,
    pub block: StemBlock<T>,
}

impl<T: Real> Stem<T> {
    fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let y = scoped(g, "conv", |g| self.conv.forward(g, x))?;
        match &self.block {
            StemBlock::Dgc(b) => scoped(g, "dgc", |g| b.forward(g, &y)),
            StemBlock::Lite(b) => scoped(g, "block", |g| b.forward(g, &y)),
        }
    }
}

impl<T: Real> Module<T> for Stem<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.conv.visit(f);
        match &self.block {
            StemBlock::Dgc(b) => b.visit(f),
            StemBlock::Lite(b) => b.visit(f),
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv.visit_mut(f);
        match &mut self.block {
            StemBlock::Dgc(b) => b.visit_mut(f),
            StemBlock::Lite(b) => b.visit_mut(f),
        }
    }
}

/// Two DMC operators followed by one fusion layer.
#[derive(Clone, Debug)]
pub struct CrossResolutionModule<T> {
    pub dmc: Vec<DmcBlock<T>>,
    pub fusion: Fusion<T>,
}

impl<T: Real> CrossResolutionModule<T> {
    fn forward<G: Graph<T>>(&self, g: &mut G, xs: Vec<G::Value>) -> Result<Vec<G::Value>> {
        let mut xs = xs;
        for (d, block) in self.dmc.iter().enumerate() {
            xs = scoped(g, &format!("dmc{d}"), |g| block.forward(g, &xs))?;
        }
        scoped(g, "fusion", |g| self.fusion.forward(g, &xs))
    }
}

impl<T: Real> Module<T> for CrossResolutionModule<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.dmc.visit(f);
        self.fusion.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.dmc.visit_mut(f);
        self.fusion.visit_mut(f);
    }
}

#[derive(Clone, Debug)]
pub struct Stage<T> {
    pub transition: Transition<T>,
    pub modules: Vec<CrossResolutionModule<T>>,
}

impl<T: Real> Module<T> for Stage<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.transition.visit(f);
        self.modules.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.transition.visit_mut(f);
        self.modules.visit_mut(f);
    }
}

/// Branch aggregation (low to high: upsample, add, depthwise-separable
/// projection to the next width) and the 1×1 keypoint convolution.
#[derive(Clone, Debug)]
pub struct Head<T> {
    /// Lowest-resolution branch first.
    pub aggregate: Vec<DwPw<T>>,
    pub keypoint: Conv<T>,
}

impl<T: Real> Head<T> {
    fn features<G: Graph<T>>(&self, g: &mut G, xs: &[G::Value]) -> Result<G::Value> {
        if self.aggregate.is_empty() {
            return Ok(xs[0].clone());
        }
        let mut last: Option<G::Value> = None;
        for (i, (x, proj)) in xs.iter().rev().zip(&self.aggregate).enumerate() {
            let y = scoped(g, &format!("aggregate{i}"), |g| {
                let s = match &last {
                    Some(l) => {
                        let sh = g.shape(x);
                        let up = g.upsample(l, (sh.height, sh.width))?;
                        g.add(x, &up)?
                    }
                    None => x.clone(),
                };
                proj.forward(g, &s)
            })?;
            last = Some(y);
        }
        Ok(last.expect("at least one branch"))
    }
}

impl<T: Real> Module<T> for Head<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.aggregate.visit(f);
        self.keypoint.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.aggregate.visit_mut(f);
        self.keypoint.visit_mut(f);
    }
}

#[derive(Clone, Debug)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub stem: Stem<T>,
    pub stages: Vec<Stage<T>>,
    pub head: Head<T>,
}

impl<T: Real> Model<T> {
    /// Builds the network with parameters drawn from `seed`.
    pub fn build(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed);
        let init = &mut init;
        let sw = config.stem_width;
        let stem = init.scope("stem", |init| -> Result<_> {
            let conv = ConvBn::new(
                init,
                "conv",
                ConvSpec::new(3, sw, 3).stride(2).padding(1),
                true,
            )?;
            let block = match config.stem {
                StemKind::Dgc => StemBlock::Dgc(DgcBlock::new(
                    init,
                    "dgc",
                    sw,
                    sw,
                    config.kernels[0],
                    config.blocks.gcm_ratio,
                )?),
                StemKind::Lite => StemBlock::Lite(LiteStemBlock::new(init, "block", sw, sw)?),
            };
            Ok(Stem { conv, block })
        })?;

        let mut widths = vec![sw];
        let mut stages = Vec::new();
        for (s, st) in config.stages.iter().enumerate().skip(1) {
            let next = config.widths[..st.branches].to_vec();
            let stage = init.scope(&format!("stage{}", s + 1), |init| -> Result<_> {
                let transition = Transition::new(init, "transition", &widths, &next)?;
                let modules = (0..st.modules)
                    .map(|m| {
                        init.scope(&format!("module{m}"), |init| {
                            let dmc = (0..2)
                                .map(|d| {
                                    DmcBlock::new(
                                        init,
                                        &format!("dmc{d}"),
                                        &next,
                                        &config.groups,
                                        &config.kernels,
                                        &config.blocks,
                                    )
                                })
                                .collect::<Result<Vec<_>>>()?;
                            let fusion = Fusion::new(init, "fusion", &next)?;
                            Ok(CrossResolutionModule { dmc, fusion })
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Stage {
                    transition,
                    modules,
                })
            })?;
            stages.push(stage);
            widths = next;
        }

        let head = init.scope("head", |init| -> Result<_> {
            let aggregate = match config.head {
                HeadKind::Plain => Vec::new(),
                HeadKind::Iterative => {
                    let rev: Vec<usize> = widths.iter().rev().copied().collect();
                    (0..rev.len())
                        .map(|i| {
                            let out = rev.get(i + 1).copied().unwrap_or(rev[i]);
                            DwPw::new(init, &format!("aggregate{i}"), rev[i], out, 1, true)
                        })
                        .collect::<Result<Vec<_>>>()?
                }
            };
            let keypoint = Conv::new(
                init,
                "keypoint",
                ConvSpec::pointwise(widths[0], config.keypoints),
                true,
            )?;
            Ok(Head {
                aggregate,
                keypoint,
            })
        })?;

        Ok(Model {
            config: config.clone(),
            stem,
            stages,
            head,
        })
    }

    fn check_input<G: Graph<T>>(&self, g: &G, x: &G::Value) -> Result<()> {
        let s = g.shape(x);
        if s.channels != 3 {
            return Err(Error::mismatch("model", "input channels", 3, s.channels));
        }
        self.config.check_input(s.height, s.width)
    }

    /// Per-branch features after the last stage, highest resolution first.
    pub fn branches<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<Vec<G::Value>> {
        self.check_input(g, x)?;
        let y = scoped(g, "stem", |g| self.stem.forward(g, x))?;
        let mut xs = vec![y];
        for (s, stage) in self.stages.iter().enumerate() {
            xs = scoped(g, &format!("stage{}", s + 2), |g| {
                let mut xs = scoped(g, "transition", |g| stage.transition.forward(g, &xs))?;
                for (m, module) in stage.modules.iter().enumerate() {
                    xs = scoped(g, &format!("module{m}"), |g| module.forward(g, xs))?;
                }
                Ok(xs)
            })?;
        }
        Ok(xs)
    }

    /// Backbone output: highest-resolution features at a quarter of the
    /// input size, after branch aggregation.
    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let xs = self.branches(g, x)?;
        scoped(g, "head", |g| self.head.features(g, &xs))
    }

    /// Keypoint heatmaps.
    pub fn heatmaps<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let xs = self.branches(g, x)?;
        scoped(g, "head", |g| {
            let f = self.head.features(g, &xs)?;
            scoped(g, "keypoint", |g| self.head.keypoint.forward(g, &f))
        })
    }

    /// Heatmaps and decoded keypoints for every sample of `x`.
    pub fn predict(&self, x: &Tensor<T>) -> Result<PoseOutput<T>> {
        let hm = self.heatmaps(&mut Eval::new(), x)?;
        let s = x.shape();
        let keypoints = decode_heatmaps(&hm, (s.height, s.width))?;
        Ok(PoseOutput {
            heatmaps: hm,
            keypoints,
        })
    }

    /// Named parameters in visiting order, buffers included.
    pub fn named_params(&self) -> Vec<(String, Shape, bool)> {
        let mut v = Vec::new();
        self.visit(&mut |p| v.push((p.name().to_string(), p.shape(), p.trainable())));
        v
    }
}

impl<T: Real> Module<T> for Model<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.stem.visit(f);
        self.stages.visit(f);
        self.head.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_mut(f);
        self.stages.visit_mut(f);
        self.head.visit_mut(f);
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Keypoint {
    /// Input-pixel coordinates.
    pub x: f64,
    pub y: f64,
    pub score: f64,
    /// The channel was constant; the centre was returned.
    pub flat: bool,
}

#[derive(Clone, Debug)]
pub struct PoseOutput<T> {
    pub heatmaps: Tensor<T>,
    /// Per sample, one keypoint per heatmap channel.
    pub keypoints: Vec<Vec<Keypoint>>,
}

/// Quarter offset toward the larger neighbour; zero on ties or at a border.
fn quarter(lo: Option<f64>, hi: Option<f64>) -> f64 {
    match (lo, hi) {
        (Some(l), Some(h)) if h > l => 0.25,
        (Some(l), Some(h)) if l > h => -0.25,
        _ => 0.0,
    }
}

/// Argmax per channel (lowest flat index on ties), shifted a quarter pixel
/// per axis toward the larger neighbour, scaled by `input / heatmap`.
pub fn decode_heatmaps<T: Real>(
    hm: &Tensor<T>,
    input: (usize, usize),
) -> Result<Vec<Vec<Keypoint>>> {
    let s = hm.shape();
    if input.0 < s.height || input.1 < s.width {
        return Err(Error::invalid(
            "decode_heatmaps",
            "input smaller than heatmap",
        ));
    }
    let sy = input.0 as f64 / s.height as f64;
    let sx = input.1 as f64 / s.width as f64;
    let mut out = Vec::with_capacity(s.batch);
    for n in 0..s.batch {
        let mut kps = Vec::with_capacity(s.channels);
        for c in 0..s.channels {
            let p = hm.plane(n, c);
            let at = |h: usize, w: usize| p[h * s.width + w].as_f64();
            let (mut best, mut arg) = (p[0], 0);
            for (i, &v) in p.iter().enumerate() {
                if v > best {
                    best = v;
                    arg = i;
                }
            }
            let flat = p.iter().all(|&v| v == p[0]);
            let (py, px) = (arg / s.width, arg % s.width);
            let (x, y) = if flat {
                ((s.width - 1) as f64 / 2.0, (s.height - 1) as f64 / 2.0)
            } else {
                let left = (px > 0).then(|| at(py, px - 1));
                let right = (px + 1 < s.width).then(|| at(py, px + 1));
                let up = (py > 0).then(|| at(py - 1, px));
                let down = (py + 1 < s.height).then(|| at(py + 1, px));
                (
                    px as f64 + quarter(left, right),
                    py as f64 + quarter(up, down),
                )
            };
            kps.push(Keypoint {
                x: x * sx,
                y: y * sy,
                score: best.as_f64(),
                flat,
            });
        }
        out.push(kps);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageSummary {
    pub name: String,
    pub modules: usize,
    pub branches: usize,
    pub widths: Vec<usize>,
}

/// Structured description of a built model at one input size.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ModelSummary {
    pub variant: Variant,
    pub input: (usize, usize),
    pub stages: Vec<StageSummary>,
    pub layers: Vec<LayerNode>,
    pub total: Totals,
}

/// Complexity analysis of the whole network (heatmap head included) at
/// `input = (height, width)`, batch one.
pub fn analyze<T: Real>(model: &Model<T>, input: (usize, usize)) -> Result<ComplexityReport> {
    let mut g = CostGraph::new();
    let x = g.input(Shape::new(1, 3, input.0, input.1));
    model.heatmaps(&mut g, &x)?;
    Ok(ComplexityReport::from_nodes(input, g.into_nodes()))
}

pub fn export_summary<T: Real>(model: &Model<T>, input: (usize, usize)) -> Result<ModelSummary> {
    let report = analyze(model, input)?;
    let cfg = &model.config;
    let stages = cfg
        .stages
        .iter()
        .enumerate()
        .map(|(s, st)| StageSummary {
            name: if s == 0 {
                "stem".into()
            } else {
                format!("stage{}", s + 1)
            },
            modules: st.modules,
            branches: st.branches,
            widths: if s == 0 {
                vec![cfg.stem_width]
            } else {
                cfg.widths[..st.branches].to_vec()
            },
        })
        .collect();
    Ok(ModelSummary {
        variant: cfg.variant,
        input,
        stages,
        layers: report.nodes,
        total: report.total,
    })
}

/// One cell of a `G`/`N` grid: the totals, or why the combination was
/// rejected.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepCell {
    pub groups: Vec<usize>,
    pub kernels: Vec<usize>,
    pub result: core::result::Result<Totals, String>,
}

/// Analyzes `base` for every pair in `g_grid × n_grid`, rows over `G`.
/// Invalid combinations yield an error cell and do not stop the sweep.
pub fn sweep_hyperparams(
    base: &ModelConfig,
    g_grid: &[Vec<usize>],
    n_grid: &[Vec<usize>],
    input: (usize, usize),
) -> Vec<SweepCell> {
    let mut cells = Vec::with_capacity(g_grid.len() * n_grid.len());
    for groups in g_grid {
        for kernels in n_grid {
            let mut cfg = base.clone();
            cfg.groups = groups.clone();
            cfg.kernels = kernels.clone();
            let result = cfg
                .validate()
                .and_then(|_| Model::<f32>::build(&cfg, DEFAULT_SEED))
                .and_then(|m| analyze(&m, input))
                .map(|r| r.total)
                .map_err(|e| e.to_string());
            cells.push(SweepCell {
                groups: groups.clone(),
                kernels: kernels.clone(),
                result,
            });
        }
    }
    cells
}

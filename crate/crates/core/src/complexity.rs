//! Static parameter and multiply-add accounting.
//!
//! [`CostGraph`] runs a layer's forward code on shapes alone and records one
//! [`LayerNode`] per operation. One FLOP is one multiply-add. Convolutions
//! count `H_out·W_out·C_out·(C_in/groups)·kh·kw`, dense layers `in·out`,
//! pooling one per input element, upsampling and elementwise arithmetic one
//! per output element, context pooling one per input element for the
//! weighted sum. Bias additions are not counted. Normalisation, activations
//! and kernel aggregation are tallied but kept out of the headline total.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use crate::autograd::Graph;
use crate::layers::{Param, ParamId};
use crate::tensor::{self, ConvSpec, Real, Shape, Tensor};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Category {
    Conv,
    Linear,
    Pool,
    ContextPool,
    Elementwise,
    Upsample,
    Norm,
    Activation,
    Aggregate,
    Layout,
}

impl Category {
    /// Counted in the headline FLOP total.
    pub fn headline(self) -> bool {
        matches!(
            self,
            Category::Conv
                | Category::Linear
                | Category::Pool
                | Category::ContextPool
                | Category::Elementwise
                | Category::Upsample
        )
    }
}

/// One recorded operation.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerNode {
    /// Dotted scope path of the operation.
    pub name: String,
    pub kind: String,
    pub category: Category,
    pub inputs: Vec<Shape>,
    pub output: Shape,
    /// Trainable scalars first consumed by this operation.
    pub params: u64,
    pub flops: u64,
}

/// Shape-level value of a [`CostGraph`].
#[derive(Clone, Debug)]
pub struct CostValue {
    shape: Shape,
    param: Option<(ParamId, u64)>,
}

impl CostValue {
    pub fn shape(&self) -> Shape {
        self.shape
    }
}

/// Shape propagation with cost recording. Parameters are attributed to the
/// first operation consuming them.
#[derive(Debug, Default)]
pub struct CostGraph {
    nodes: Vec<LayerNode>,
    scope: Vec<String>,
    claimed: BTreeSet<ParamId>,
}

impl CostGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn into_nodes(self) -> Vec<LayerNode> {
        self.nodes
    }

    /// A graph input of the given shape.
    pub fn input(&self, shape: Shape) -> CostValue {
        CostValue { shape, param: None }
    }

    fn record(
        &mut self,
        kind: &str,
        category: Category,
        inputs: &[&CostValue],
        output: Shape,
        flops: u64,
    ) -> CostValue {
        let mut params = 0;
        for v in inputs {
            if let Some((id, n)) = v.param {
                if self.claimed.insert(id) {
                    params += n;
                }
            }
        }
        self.nodes.push(LayerNode {
            name: self.scope.join("."),
            kind: kind.into(),
            category,
            inputs: inputs.iter().map(|v| v.shape).collect(),
            output,
            params,
            flops,
        });
        CostValue {
            shape: output,
            param: None,
        }
    }

    fn same_shape(op: &'static str, a: Shape, b: Shape) -> Result<()> {
        let names = ["batch", "channels", "height", "width"];
        for ((x, y), name) in a.dims().iter().zip(b.dims().iter()).zip(names) {
            if x != y {
                return Err(Error::mismatch(op, name, *x, *y));
            }
        }
        Ok(())
    }

    fn broadcast(op: &'static str, a: Shape, b: Shape) -> Result<()> {
        if a == b {
            return Ok(());
        }
        let per_channel = (b.batch == a.batch || b.batch == 1)
            && b.channels == a.channels
            && b.height == 1
            && b.width == 1;
        if per_channel {
            Ok(())
        } else {
            Err(Error::invalid(
                op,
                alloc::format!("{b} does not broadcast to {a}"),
            ))
        }
    }
}

fn numel(s: Shape) -> u64 {
    s.numel() as u64
}

impl<T: Real> Graph<T> for CostGraph {
    type Value = CostValue;

    fn shape(&self, v: &CostValue) -> Shape {
        v.shape
    }

    fn param(&mut self, p: &Param<T>) -> Result<CostValue> {
        let n = if p.trainable() { p.numel() as u64 } else { 0 };
        Ok(CostValue {
            shape: p.shape(),
            param: Some((p.id(), n)),
        })
    }

    fn constant(&mut self, t: &Tensor<T>) -> Result<CostValue> {
        Ok(CostValue {
            shape: t.shape(),
            param: None,
        })
    }

    fn conv2d(
        &mut self,
        x: &CostValue,
        w: &CostValue,
        bias: Option<&CostValue>,
        spec: &ConvSpec,
    ) -> Result<CostValue> {
        let out = spec.output_shape(x.shape)?;
        spec.check_weight(w.shape)?;
        if let Some(b) = bias {
            if b.shape.numel() != spec.out_channels {
                return Err(Error::mismatch(
                    "conv2d",
                    "bias length",
                    spec.out_channels,
                    b.shape.numel(),
                ));
            }
        }
        let kind = if spec.is_depthwise() {
            "depthwise_conv"
        } else if spec.kernel == (1, 1) && spec.groups == 1 {
            "pointwise_conv"
        } else {
            "conv"
        };
        let mut inputs = alloc::vec![x, w];
        inputs.extend(bias);
        Ok(self.record(kind, Category::Conv, &inputs, out, spec.macs(out)))
    }

    fn fully_connected(
        &mut self,
        x: &CostValue,
        w: &CostValue,
        bias: Option<&CostValue>,
    ) -> Result<CostValue> {
        let (xs, ws) = (x.shape, w.shape);
        if xs.channels * xs.height * xs.width != ws.channels {
            return Err(Error::mismatch(
                "fully_connected",
                "input features",
                ws.channels,
                xs.channels,
            ));
        }
        let out = Shape::new(xs.batch, ws.batch, 1, 1);
        let mut inputs = alloc::vec![x, w];
        inputs.extend(bias);
        let flops = (xs.batch * ws.batch * ws.channels) as u64;
        Ok(self.record("linear", Category::Linear, &inputs, out, flops))
    }

    fn batchnorm(
        &mut self,
        x: &CostValue,
        scale: &CostValue,
        shift: &CostValue,
        mean: &[T],
        var: &[T],
        _eps: T,
    ) -> Result<CostValue> {
        let c = x.shape.channels;
        for (name, len) in [
            ("scale length", scale.shape.numel()),
            ("shift length", shift.shape.numel()),
            ("mean length", mean.len()),
            ("var length", var.len()),
        ] {
            if len != c {
                return Err(Error::mismatch("batchnorm", name, c, len));
            }
        }
        Ok(self.record(
            "batchnorm",
            Category::Norm,
            &[x, scale, shift],
            x.shape,
            numel(x.shape),
        ))
    }

    fn relu(&mut self, x: &CostValue) -> Result<CostValue> {
        Ok(self.record("relu", Category::Activation, &[x], x.shape, numel(x.shape)))
    }

    fn sigmoid(&mut self, x: &CostValue) -> Result<CostValue> {
        Ok(self.record(
            "sigmoid",
            Category::Activation,
            &[x],
            x.shape,
            numel(x.shape),
        ))
    }

    fn add(&mut self, a: &CostValue, b: &CostValue) -> Result<CostValue> {
        Self::broadcast("add", a.shape, b.shape)?;
        Ok(self.record(
            "add",
            Category::Elementwise,
            &[a, b],
            a.shape,
            numel(a.shape),
        ))
    }

    fn mul(&mut self, a: &CostValue, b: &CostValue) -> Result<CostValue> {
        Self::broadcast("mul", a.shape, b.shape)?;
        Ok(self.record(
            "mul",
            Category::Elementwise,
            &[a, b],
            a.shape,
            numel(a.shape),
        ))
    }

    fn scale(&mut self, x: &CostValue, _s: T) -> Result<CostValue> {
        Ok(self.record(
            "scale",
            Category::Elementwise,
            &[x],
            x.shape,
            numel(x.shape),
        ))
    }

    fn sum(&mut self, x: &CostValue) -> Result<CostValue> {
        Ok(self.record(
            "sum",
            Category::Elementwise,
            &[x],
            Shape::new(1, 1, 1, 1),
            numel(x.shape),
        ))
    }

    fn global_avg_pool(&mut self, x: &CostValue) -> Result<CostValue> {
        let out = x.shape.with_spatial(1, 1);
        Ok(self.record("global_avg_pool", Category::Pool, &[x], out, numel(x.shape)))
    }

    fn adaptive_avg_pool(&mut self, x: &CostValue, out: (usize, usize)) -> Result<CostValue> {
        check_pool("adaptive_avg_pool", x.shape, out)?;
        let o = x.shape.with_spatial(out.0, out.1);
        Ok(self.record("adaptive_avg_pool", Category::Pool, &[x], o, numel(x.shape)))
    }

    fn upsample(&mut self, x: &CostValue, out: (usize, usize)) -> Result<CostValue> {
        let s = x.shape;
        if out.0 < s.height || out.1 < s.width {
            return Err(Error::invalid(
                "bilinear_upsample",
                "output smaller than input",
            ));
        }
        let o = s.with_spatial(out.0, out.1);
        Ok(self.record("upsample", Category::Upsample, &[x], o, numel(o)))
    }

    fn context_pool(
        &mut self,
        x: &CostValue,
        logits: &CostValue,
        out: (usize, usize),
    ) -> Result<CostValue> {
        check_pool("context_pool", x.shape, out)?;
        let l = logits.shape;
        if l.channels != 1
            || l.batch != x.shape.batch
            || (l.height, l.width) != (x.shape.height, x.shape.width)
        {
            return Err(Error::invalid(
                "context_pool",
                alloc::format!("logits {l} do not match {}", x.shape),
            ));
        }
        let o = x.shape.with_spatial(out.0, out.1);
        Ok(self.record(
            "context_pool",
            Category::ContextPool,
            &[x, logits],
            o,
            numel(x.shape),
        ))
    }

    fn split(&mut self, x: &CostValue, sizes: &[usize]) -> Result<Vec<CostValue>> {
        let total: usize = sizes.iter().sum();
        if total != x.shape.channels || sizes.contains(&0) {
            return Err(Error::mismatch(
                "channel_split",
                "channels",
                x.shape.channels,
                total,
            ));
        }
        self.record("split", Category::Layout, &[x], x.shape, 0);
        Ok(sizes
            .iter()
            .map(|&c| CostValue {
                shape: x.shape.with_channels(c),
                param: None,
            })
            .collect())
    }

    fn concat(&mut self, xs: &[CostValue]) -> Result<CostValue> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("channel_concat", "no inputs"))?
            .shape;
        let mut c = 0;
        for v in xs {
            Self::same_shape(
                "channel_concat",
                first.with_channels(v.shape.channels),
                v.shape,
            )?;
            c += v.shape.channels;
        }
        let refs: Vec<&CostValue> = xs.iter().collect();
        Ok(self.record("concat", Category::Layout, &refs, first.with_channels(c), 0))
    }

    fn shuffle(&mut self, x: &CostValue, groups: usize) -> Result<CostValue> {
        tensor::shuffle_permutation(x.shape.channels, groups)?;
        Ok(self.record("shuffle", Category::Layout, &[x], x.shape, 0))
    }

    fn batch_item(&mut self, x: &CostValue, n: usize) -> Result<CostValue> {
        if n >= x.shape.batch {
            return Err(Error::invalid("batch_item", "index out of range"));
        }
        let s = x.shape;
        Ok(self.record(
            "batch_item",
            Category::Layout,
            &[x],
            Shape::new(1, s.channels, s.height, s.width),
            0,
        ))
    }

    fn batch_stack(&mut self, xs: &[CostValue]) -> Result<CostValue> {
        let first = xs
            .first()
            .ok_or_else(|| Error::invalid("batch_stack", "no inputs"))?
            .shape;
        for v in xs {
            Self::same_shape("batch_stack", first, v.shape)?;
        }
        let refs: Vec<&CostValue> = xs.iter().collect();
        let out = Shape::new(
            first.batch * xs.len(),
            first.channels,
            first.height,
            first.width,
        );
        Ok(self.record("batch_stack", Category::Layout, &refs, out, 0))
    }

    fn aggregate(&mut self, bank: &CostValue, coeffs: &CostValue) -> Result<CostValue> {
        let c = coeffs.shape;
        if c.batch != 1 || c.height != 1 || c.width != 1 {
            return Err(Error::invalid(
                "aggregate",
                "coefficients must be (1, N, 1, 1)",
            ));
        }
        let n = c.channels;
        let b = bank.shape;
        if b.batch % n != 0 {
            return Err(Error::Indivisible {
                op: "aggregate",
                what: "bank rows",
                value: b.batch,
                divisor: n,
            });
        }
        let out = Shape::new(b.batch / n, b.channels, b.height, b.width);
        Ok(self.record(
            "aggregate",
            Category::Aggregate,
            &[bank, coeffs],
            out,
            numel(b),
        ))
    }

    fn push_scope(&mut self, name: &str) {
        self.scope.push(name.into());
    }

    fn pop_scope(&mut self) {
        self.scope.pop();
    }
}

fn check_pool(op: &'static str, s: Shape, out: (usize, usize)) -> Result<()> {
    if out.0 == 0 || out.1 == 0 || out.0 > s.height || out.1 > s.width {
        return Err(Error::invalid(
            op,
            alloc::format!("cannot pool {s} to {}x{}", out.0, out.1),
        ));
    }
    Ok(())
}

/// Parameter and FLOP tallies of a set of nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Totals {
    pub params: u64,
    /// Headline multiply-adds.
    pub flops: u64,
    /// Multiply-adds including normalisation, activation and aggregation.
    pub flops_all: u64,
}

impl Totals {
    fn add(&mut self, n: &LayerNode) {
        self.params += n.params;
        self.flops_all += n.flops;
        if n.category.headline() {
            self.flops += n.flops;
        }
    }

    pub fn of<'a>(nodes: impl IntoIterator<Item = &'a LayerNode>) -> Self {
        let mut t = Totals::default();
        nodes.into_iter().for_each(|n| t.add(n));
        t
    }

    pub fn mparams(&self) -> f64 {
        self.params as f64 / 1e6
    }

    pub fn mflops(&self) -> f64 {
        self.flops as f64 / 1e6
    }

    pub fn gflops(&self) -> f64 {
        self.flops as f64 / 1e9
    }
}

/// Totals of one named group, in order of first appearance.
#[derive(Clone, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Group {
    pub name: String,
    pub totals: Totals,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComplexityReport {
    pub input: (usize, usize),
    pub nodes: Vec<LayerNode>,
    pub total: Totals,
    pub by_stage: Vec<Group>,
    pub by_block: Vec<Group>,
    pub by_branch: Vec<Group>,
    pub by_category: Vec<Group>,
}

/// Stage key: the first scope component.
pub fn stage_key(name: &str) -> String {
    name.split('.').next().unwrap_or("").into()
}

/// Block key: three components inside stages (`stage2.module0.dmc1`), two
/// elsewhere (`stem.dgc`, `head.keypoint`).
pub fn block_key(name: &str) -> String {
    let depth = if name.starts_with("stage") { 3 } else { 2 };
    name.split('.').take(depth).collect::<Vec<_>>().join(".")
}

/// Branch key: the stage plus the first `branchK` component, or
/// `<stage>.shared` for operations spanning branches.
pub fn branch_key(name: &str) -> String {
    let stage = stage_key(name);
    match name.split('.').find(|s| s.starts_with("branch")) {
        Some(b) => alloc::format!("{stage}.{b}"),
        None => alloc::format!("{stage}.shared"),
    }
}

fn group_by(nodes: &[LayerNode], key: impl Fn(&LayerNode) -> String) -> Vec<Group> {
    let mut groups: Vec<Group> = Vec::new();
    for n in nodes {
        let k = key(n);
        match groups.iter_mut().find(|g| g.name == k) {
            Some(g) => g.totals.add(n),
            None => {
                let mut totals = Totals::default();
                totals.add(n);
                groups.push(Group { name: k, totals });
            }
        }
    }
    groups
}

impl ComplexityReport {
    pub fn from_nodes(input: (usize, usize), nodes: Vec<LayerNode>) -> Self {
        let total = Totals::of(&nodes);
        let by_stage = group_by(&nodes, |n| stage_key(&n.name));
        let by_block = group_by(&nodes, |n| block_key(&n.name));
        let by_branch = group_by(&nodes, |n| branch_key(&n.name));
        let by_category = group_by(&nodes, |n| {
            let s = alloc::format!("{:?}", n.category);
            s.to_lowercase()
        });
        ComplexityReport {
            input,
            nodes,
            total,
            by_stage,
            by_block,
            by_branch,
            by_category,
        }
    }

    pub fn stage(&self, name: &str) -> Option<Totals> {
        self.by_stage
            .iter()
            .find(|g| g.name == name)
            .map(|g| g.totals)
    }

    /// Totals of every node whose scope starts with `prefix`.
    pub fn scope_totals(&self, prefix: &str) -> Totals {
        Totals::of(self.nodes.iter().filter(|n| {
            n.name == prefix
                || n.name.starts_with(prefix) && n.name[prefix.len()..].starts_with('.')
        }))
    }
}

/// One expected result: a configuration id, an input size and the printed
/// figures with their tolerances.
///
/// `params` is in millions, `mflops` in millions of multiply-adds. A
/// measured value `m` passes against printed value `v` when
/// `(v − step/2)·(1 − tol) ≤ m ≤ (v + step)·(1 + tol)`, where `step` is the
/// unit of the last printed digit (zero for an exact figure). With zero
/// step this is the plain relative tolerance `|m/v − 1| ≤ tol`.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Expectation {
    pub config_id: String,
    pub input_h: usize,
    pub input_w: usize,
    pub params: f64,
    pub mflops: f64,
    pub tol_params: f64,
    pub tol_flops: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub params_step: f64,
    #[cfg_attr(feature = "serde", serde(default))]
    pub mflops_step: f64,
}

/// Acceptance interval of a printed figure.
pub fn band(value: f64, step: f64, tol: f64) -> (f64, f64) {
    (
        (value - step / 2.0) * (1.0 - tol),
        (value + step) * (1.0 + tol),
    )
}

fn within(m: f64, value: f64, step: f64, tol: f64) -> bool {
    let (lo, hi) = band(value, step, tol);
    lo <= m && m <= hi
}

/// Stage-level share of a measured total, to localise a mismatch.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageDiff {
    pub stage: String,
    pub params: u64,
    pub flops: u64,
    pub params_share: f64,
    pub flops_share: f64,
    /// Signed difference to the same stage of a reference report, if one
    /// was supplied.
    pub params_delta: Option<i64>,
    pub flops_delta: Option<i64>,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Verdict {
    pub expectation: Expectation,
    /// `None` when the configuration could not be built or analysed.
    pub measured: Option<Totals>,
    pub error: Option<String>,
    pub params_rel_error: f64,
    pub flops_rel_error: f64,
    pub params_ok: bool,
    pub flops_ok: bool,
    pub stages: Vec<StageDiff>,
}

impl Verdict {
    pub fn passed(&self) -> bool {
        self.params_ok && self.flops_ok
    }
}

/// Compares one report against its expectation. `reference`, if given,
/// is subtracted stage by stage to localise differences.
pub fn verify_against_paper(
    expectation: &Expectation,
    report: &ComplexityReport,
    reference: Option<&ComplexityReport>,
) -> Verdict {
    let t = report.total;
    let (mp, mf) = (t.mparams(), t.mflops());
    let e = expectation;
    let stages = report
        .by_stage
        .iter()
        .map(|g| {
            let r = reference.and_then(|r| r.stage(&g.name));
            StageDiff {
                stage: g.name.clone(),
                params: g.totals.params,
                flops: g.totals.flops,
                params_share: g.totals.params as f64 / t.params.max(1) as f64,
                flops_share: g.totals.flops as f64 / t.flops.max(1) as f64,
                params_delta: r.map(|r| g.totals.params as i64 - r.params as i64),
                flops_delta: r.map(|r| g.totals.flops as i64 - r.flops as i64),
            }
        })
        .collect();
    Verdict {
        expectation: e.clone(),
        measured: Some(t),
        error: None,
        params_rel_error: mp / e.params - 1.0,
        flops_rel_error: mf / e.mflops - 1.0,
        params_ok: within(mp, e.params, e.params_step, e.tol_params),
        flops_ok: within(mf, e.mflops, e.mflops_step, e.tol_flops),
        stages,
    }
}

/// Verdict for an expectation whose configuration failed to resolve.
pub fn missing_verdict(expectation: &Expectation, error: String) -> Verdict {
    Verdict {
        expectation: expectation.clone(),
        measured: None,
        error: Some(error),
        params_rel_error: f64::NAN,
        flops_rel_error: f64::NAN,
        params_ok: false,
        flops_ok: false,
        stages: Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{Conv, Init};

    #[test]
    fn conv_cost_and_params() {
        let mut init = Init::new(0);
        let conv = Conv::<f32>::new(
            &mut init,
            "c",
            ConvSpec::new(3, 8, 3).padding(1).stride(2),
            true,
        )
        .unwrap();
        let mut g = CostGraph::new();
        let x = g.input(Shape::new(1, 3, 16, 16));
        let y = conv.forward(&mut g, &x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 8, 8, 8));
        let t = Totals::of(g.nodes());
        assert_eq!(t.params, 8 * 3 * 9 + 8);
        assert_eq!(t.flops, 8 * 8 * 8 * 27);
    }

    #[test]
    fn shared_parameter_counted_once() {
        let mut init = Init::new(0);
        let conv = Conv::<f32>::new(&mut init, "c", ConvSpec::pointwise(2, 2), false).unwrap();
        let mut g = CostGraph::new();
        let x = g.input(Shape::new(1, 2, 4, 4));
        let y = conv.forward(&mut g, &x).unwrap();
        conv.forward(&mut g, &y).unwrap();
        assert_eq!(Totals::of(g.nodes()).params, 4);
    }

    #[test]
    fn band_bounds() {
        let (lo, hi) = band(0.20, 0.01, 0.02);
        assert!((lo - 0.1911).abs() < 1e-12 && (hi - 0.2142).abs() < 1e-12);
        let (lo, hi) = band(209.8, 0.0, 0.02);
        assert!((lo - 205.604).abs() < 1e-9 && (hi - 213.996).abs() < 1e-9);
    }

    #[test]
    fn keys() {
        assert_eq!(
            block_key("stage3.module2.dmc1.branch0.dsc"),
            "stage3.module2.dmc1"
        );
        assert_eq!(block_key("stem.dgc.a"), "stem.dgc");
        assert_eq!(
            branch_key("stage3.module2.fusion.branch1.from0"),
            "stage3.branch1"
        );
        assert_eq!(branch_key("stage3.module2.dmc0.dcm"), "stage3.shared");
    }
}

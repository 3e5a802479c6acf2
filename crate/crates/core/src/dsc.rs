//! Split-concat-shuffle depthwise convolution, dynamic kernel aggregation,
//! and their combination.

use alloc::vec::Vec;

use crate::autograd::{scoped, split_even, Eval, Graph};
use crate::layers::{Init, Linear, Module, Param};
use crate::tensor::{self, ConvSpec, Real, Shape, Tensor};
use crate::{Error, Result};

/// Channel split into `groups` groups, group `i` (1-based) convolved
/// depthwise with a `(2i+1)×(2i+1)` kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ScsSpec {
    pub channels: usize,
    pub groups: usize,
}

impl ScsSpec {
    pub fn new(channels: usize, groups: usize) -> Result<Self> {
        if channels == 0 || groups == 0 {
            return Err(Error::invalid(
                "scs",
                "channels and groups must be positive",
            ));
        }
        if channels % groups != 0 {
            return Err(Error::Indivisible {
                op: "scs",
                what: "channels",
                value: channels,
                divisor: groups,
            });
        }
        Ok(ScsSpec { channels, groups })
    }

    pub fn group_channels(&self) -> usize {
        self.channels / self.groups
    }

    pub fn kernel_sizes(&self) -> Vec<usize> {
        (1..=self.groups).map(|i| 2 * i + 1).collect()
    }

    /// Depthwise convolution of group `i` (0-based).
    pub fn group_conv(&self, i: usize) -> ConvSpec {
        ConvSpec::depthwise(self.group_channels(), 2 * i + 3)
    }

    /// Weights of one static kernel set: `Σ_i (C/G)·K_i²`.
    pub fn params(&self) -> usize {
        self.kernel_sizes()
            .iter()
            .map(|k| self.group_channels() * k * k)
            .sum()
    }
}

/// Kernel attention `C → max(C/4, 1) → outputs`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DkaSpec {
    pub in_channels: usize,
    pub num_kernels: usize,
}

impl DkaSpec {
    pub fn new(in_channels: usize, num_kernels: usize) -> Result<Self> {
        if in_channels == 0 || num_kernels == 0 {
            return Err(Error::invalid(
                "dka",
                "channels and kernel count must be positive",
            ));
        }
        Ok(DkaSpec {
            in_channels,
            num_kernels,
        })
    }

    pub fn hidden(&self) -> usize {
        (self.in_channels / 4).max(1)
    }
}

/// `HWC + C²/4 + CN/4`: global pooling plus the two attention layers.
pub fn dka_overhead_flops(c: u64, h: u64, w: u64, n: u64) -> u64 {
    h * w * c + c * c / 4 + c * n / 4
}

/// `Sigmoid(FC(ReLU(FC(GAP(x)))))`, one gate per kernel, not normalised.
#[derive(Clone, Debug)]
pub struct DkaAttention<T> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Real> DkaAttention<T> {
    pub fn new(init: &mut Init, leaf: &str, in_channels: usize, outputs: usize) -> Result<Self> {
        let spec = DkaSpec::new(in_channels, outputs)?;
        Ok(init.scope(leaf, |init| DkaAttention {
            fc1: Linear::new(init, "fc1", in_channels, spec.hidden(), false),
            fc2: Linear::new(init, "fc2", spec.hidden(), outputs, true),
        }))
    }

    pub fn outputs(&self) -> usize {
        self.fc2.outputs()
    }

    /// Gates of shape `(n, outputs, 1, 1)`.
    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let s = g.shape(x);
        if s.channels != self.fc1.inputs() {
            return Err(Error::mismatch(
                "dka_attention",
                "channels",
                self.fc1.inputs(),
                s.channels,
            ));
        }
        let p = g.global_avg_pool(x)?;
        let h = self.fc1.forward(g, &p)?;
        let h = g.relu(&h)?;
        let a = self.fc2.forward(g, &h)?;
        g.sigmoid(&a)
    }
}

impl<T: Real> Module<T> for DkaAttention<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.fc1.visit(f);
        self.fc2.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.fc1.visit_mut(f);
        self.fc2.visit_mut(f);
    }
}

/// Attention gates for `x`, evaluated directly.
pub fn dka_attention<T: Real>(x: &Tensor<T>, attention: &DkaAttention<T>) -> Result<Tensor<T>> {
    attention.forward(&mut Eval::new(), x)
}

/// `W = Σ_i a_i·w_i` over a bank of kernels stacked along the leading axis.
pub fn dka_aggregate<T: Real>(bank: &Tensor<T>, a: &[T]) -> Result<Tensor<T>> {
    tensor::bank_combine(bank, a)
}

/// Convolves each sample with the kernel aggregated from its own gates.
/// `coeffs` is `(n, N, 1, 1)`; `bank` stacks `N` kernels of `spec`.
pub(crate) fn dynamic_conv<T: Real, G: Graph<T>>(
    g: &mut G,
    x: &G::Value,
    bank: &G::Value,
    coeffs: &G::Value,
    spec: &ConvSpec,
) -> Result<G::Value> {
    let n = g.shape(x).batch;
    if g.shape(coeffs).batch != n {
        return Err(Error::mismatch(
            "dynamic_conv",
            "batch",
            n,
            g.shape(coeffs).batch,
        ));
    }
    if n == 1 {
        let w = g.aggregate(bank, coeffs)?;
        return g.conv2d(x, &w, None, spec);
    }
    let mut ys = Vec::with_capacity(n);
    for b in 0..n {
        let xb = g.batch_item(x, b)?;
        let ab = g.batch_item(coeffs, b)?;
        let w = g.aggregate(bank, &ab)?;
        ys.push(g.conv2d(&xb, &w, None, spec)?);
    }
    g.batch_stack(&ys)
}

fn bank_param<T: Real>(init: &mut Init, leaf: &str, spec: &ConvSpec, n: usize) -> Param<T> {
    let ws = spec.weight_shape();
    let fan_in = ws.channels * ws.height * ws.width;
    init.he_uniform(
        leaf,
        Shape::new(n * ws.batch, ws.channels, ws.height, ws.width),
        fan_in,
    )
}

/// A convolution whose kernel is aggregated from `N` candidates by
/// attention over its own input. Bias-free.
#[derive(Clone, Debug)]
pub struct DkaConv<T> {
    pub spec: ConvSpec,
    pub bank: Param<T>,
    pub attention: DkaAttention<T>,
}

impl<T: Real> DkaConv<T> {
    pub fn new(init: &mut Init, leaf: &str, spec: ConvSpec, num_kernels: usize) -> Result<Self> {
        spec.validate()?;
        init.scope(leaf, |init| {
            Ok(DkaConv {
                spec,
                bank: bank_param(init, "bank", &spec, num_kernels),
                attention: DkaAttention::new(init, "attention", spec.in_channels, num_kernels)?,
            })
        })
    }

    pub fn num_kernels(&self) -> usize {
        self.attention.outputs()
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let a = self.attention.forward(g, x)?;
        let bank = g.param(&self.bank)?;
        dynamic_conv(g, x, &bank, &a, &self.spec)
    }
}

impl<T: Real> Module<T> for DkaConv<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        f(&self.bank);
        self.attention.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        f(&mut self.bank);
        self.attention.visit_mut(f);
    }
}

/// Split, per-group depthwise convolution with the given static kernels,
/// concatenation and shuffle.
pub fn scs_forward<T: Real>(
    x: &Tensor<T>,
    spec: &ScsSpec,
    weights: &[Tensor<T>],
) -> Result<Tensor<T>> {
    if x.shape().channels != spec.channels {
        return Err(Error::mismatch(
            "scs",
            "channels",
            spec.channels,
            x.shape().channels,
        ));
    }
    if weights.len() != spec.groups {
        return Err(Error::mismatch(
            "scs",
            "kernel count",
            spec.groups,
            weights.len(),
        ));
    }
    let parts = tensor::channel_split(x, spec.groups)?;
    let ys = parts
        .iter()
        .zip(weights)
        .enumerate()
        .map(|(i, (p, w))| tensor::conv2d(p, w, &spec.group_conv(i)))
        .collect::<Result<Vec<_>>>()?;
    tensor::channel_shuffle(&tensor::channel_concat(&ys)?, spec.groups)
}

/// Dynamic split convolution: SCS whose group kernels come from per-group
/// banks of `N` kernels. A single attention over the whole input produces
/// all `G·N` gates; group `i` uses gates `i·N .. (i+1)·N`.
#[derive(Clone, Debug)]
pub struct Dsc<T> {
    pub scs: ScsSpec,
    pub num_kernels: usize,
    pub attention: DkaAttention<T>,
    pub banks: Vec<Param<T>>,
}

impl<T: Real> Dsc<T> {
    pub fn new(
        init: &mut Init,
        leaf: &str,
        channels: usize,
        groups: usize,
        num_kernels: usize,
    ) -> Result<Self> {
        let scs = ScsSpec::new(channels, groups)?;
        DkaSpec::new(channels, num_kernels)?;
        init.scope(leaf, |init| {
            let attention = DkaAttention::new(init, "attention", channels, groups * num_kernels)?;
            let banks = (0..groups)
                .map(|i| {
                    bank_param(
                        init,
                        &alloc::format!("bank{i}"),
                        &scs.group_conv(i),
                        num_kernels,
                    )
                })
                .collect();
            Ok(Dsc {
                scs,
                num_kernels,
                attention,
                banks,
            })
        })
    }

    pub fn forward<G: Graph<T>>(&self, g: &mut G, x: &G::Value) -> Result<G::Value> {
        let c = g.shape(x).channels;
        if c != self.scs.channels {
            return Err(Error::mismatch("dsc", "channels", self.scs.channels, c));
        }
        let groups = self.scs.groups;
        let a = self.attention.forward(g, x)?;
        let gates = split_even(g, &a, groups)?;
        let parts = split_even(g, x, groups)?;
        let mut ys = Vec::with_capacity(groups);
        for (i, (p, gate)) in parts.iter().zip(&gates).enumerate() {
            let y = scoped(g, &alloc::format!("group{i}"), |g| {
                let bank = g.param(&self.banks[i])?;
                dynamic_conv(g, p, &bank, gate, &self.scs.group_conv(i))
            })?;
            ys.push(y);
        }
        let y = g.concat(&ys)?;
        g.shuffle(&y, groups)
    }
}

impl<T: Real> Module<T> for Dsc<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param<T>)) {
        self.attention.visit(f);
        self.banks.iter().for_each(|b| f(b));
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.attention.visit_mut(f);
        self.banks.iter_mut().for_each(|b| f(b));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: Shape) -> Tensor<f64> {
        Tensor::from_fn(shape, |[n, c, h, w]| {
            ((n * 7 + c * 5 + h * 3 + w) % 11) as f64 * 0.1 - 0.4
        })
    }

    #[test]
    fn scs_kernel_sizes() {
        assert_eq!(ScsSpec::new(8, 4).unwrap().kernel_sizes(), [3, 5, 7, 9]);
        assert_eq!(ScsSpec::new(8, 1).unwrap().kernel_sizes(), [3]);
        assert!(ScsSpec::new(6, 4).is_err());
    }

    #[test]
    fn scs_with_delta_kernels_is_a_shuffle() {
        let spec = ScsSpec::new(4, 2).unwrap();
        let x = ramp(Shape::new(1, 4, 5, 5));
        let delta = |k: usize| {
            Tensor::from_fn(Shape::new(2, 1, k, k), |[_, _, h, w]| {
                if h == k / 2 && w == k / 2 {
                    1.0
                } else {
                    0.0
                }
            })
        };
        let y = scs_forward(&x, &spec, &[delta(3), delta(5)]).unwrap();
        assert_eq!(y, tensor::channel_shuffle(&x, 2).unwrap());
    }

    #[test]
    fn overhead_formula() {
        assert_eq!(dka_overhead_flops(64, 16, 16, 4), 17472);
        assert_eq!(dka_overhead_flops(4, 1, 1, 0), 8);
        let ratio = dka_overhead_flops(40, 64, 48, 4) as f64 / (64.0 * 48.0 * 1600.0 * 9.0);
        assert!(ratio < 0.01);
    }

    #[test]
    fn zero_attention_gives_half_gates() {
        let mut init = Init::new(1);
        let mut att = DkaAttention::<f64>::new(&mut init, "a", 8, 3).unwrap();
        att.fill_matching("", 0.0);
        let a = dka_attention(&ramp(Shape::new(2, 8, 3, 3)), &att).unwrap();
        assert_eq!(a.shape(), Shape::new(2, 3, 1, 1));
        assert!(a.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn aggregate_identical_bank_sums_gates() {
        let one = ramp(Shape::new(1, 1, 3, 3));
        assert_eq!(
            dka_aggregate(&one, &[0.5]).unwrap(),
            tensor::scale(&one, 0.5)
        );
        let bank = Tensor::stack_batch(&[one.clone(), one.clone(), one.clone()]).unwrap();
        let w = dka_aggregate(&bank, &[0.25, 0.5, 0.125]).unwrap();
        assert!(w.max_abs_diff(&tensor::scale(&one, 0.875)) < 1e-15);
    }

    #[test]
    fn degenerate_dsc_is_half_scaled_depthwise() {
        let mut init = Init::new(3);
        let mut dsc = Dsc::<f64>::new(&mut init, "dsc", 4, 1, 1).unwrap();
        dsc.attention.fill_matching("", 0.0);
        let x = ramp(Shape::new(1, 4, 5, 5));
        let y = dsc.forward(&mut Eval::new(), &x).unwrap();
        let w = tensor::scale(&dsc.banks[0].value, 0.5);
        let want = tensor::conv2d(&x, &w, &ConvSpec::depthwise(4, 3)).unwrap();
        assert!(y.max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn batched_dsc_matches_per_sample() {
        let mut init = Init::new(5);
        let dsc = Dsc::<f64>::new(&mut init, "dsc", 8, 2, 3).unwrap();
        let x = ramp(Shape::new(2, 8, 6, 6));
        let mut g = Eval::new();
        let y = dsc.forward(&mut g, &x).unwrap();
        assert_eq!(g.aggregations(), 4);
        for b in 0..2 {
            let yb = dsc
                .forward(&mut Eval::new(), &x.batch_item(b).unwrap())
                .unwrap();
            assert_eq!(y.batch_item(b).unwrap(), yb);
        }
    }
}

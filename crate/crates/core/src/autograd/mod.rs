//! The [`Graph`] abstraction that every layer is written against, with three
//! interpreters:
//!
//! * [`Eval`] computes tensors directly,
//! * [`Tape`] computes tensors and records them for reverse-mode
//!   differentiation,
//! * [`CostGraph`](crate::complexity::CostGraph) propagates shapes only and
//!   tallies parameters and multiply-adds.
//!
//! Writing a layer once against [`Graph`] keeps the executed network, the
//! differentiated network and the analysed network structurally identical.

mod eval;
mod gradcheck;
mod tape;

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::layers::Param;
use crate::tensor::{ConvSpec, Real, Shape, Tensor};
use crate::Result;

pub use eval::Eval;
pub use gradcheck::{
    finite_diff_check, Differentiable, GradCheckConfig, GradCheckReport, ParamCheck,
};
pub use tape::{Gradients, Tape, Var};

/// Operations available to layers.
///
/// Broadcasting in [`add`](Graph::add) and [`mul`](Graph::mul) only covers a
/// right operand holding one value per (sample, channel).
pub trait Graph<T: Real> {
    type Value: Clone;

    fn shape(&self, v: &Self::Value) -> Shape;

    /// A layer parameter. Repeated calls with the same parameter yield the
    /// same leaf.
    fn param(&mut self, p: &Param<T>) -> Result<Self::Value>;
    /// A tensor that is not differentiated.
    fn constant(&mut self, t: &Tensor<T>) -> Result<Self::Value>;

    fn conv2d(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        bias: Option<&Self::Value>,
        spec: &ConvSpec,
    ) -> Result<Self::Value>;
    fn fully_connected(
        &mut self,
        x: &Self::Value,
        w: &Self::Value,
        bias: Option<&Self::Value>,
    ) -> Result<Self::Value>;
    fn batchnorm(
        &mut self,
        x: &Self::Value,
        scale: &Self::Value,
        shift: &Self::Value,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Self::Value>;

    fn relu(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn sigmoid(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn add(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn mul(&mut self, a: &Self::Value, b: &Self::Value) -> Result<Self::Value>;
    fn scale(&mut self, x: &Self::Value, s: T) -> Result<Self::Value>;
    fn sum(&mut self, x: &Self::Value) -> Result<Self::Value>;

    fn global_avg_pool(&mut self, x: &Self::Value) -> Result<Self::Value>;
    fn adaptive_avg_pool(&mut self, x: &Self::Value, out: (usize, usize)) -> Result<Self::Value>;
    fn upsample(&mut self, x: &Self::Value, out: (usize, usize)) -> Result<Self::Value>;
    fn context_pool(
        &mut self,
        x: &Self::Value,
        logits: &Self::Value,
        out: (usize, usize),
    ) -> Result<Self::Value>;

    fn split(&mut self, x: &Self::Value, sizes: &[usize]) -> Result<Vec<Self::Value>>;
    fn concat(&mut self, xs: &[Self::Value]) -> Result<Self::Value>;
    fn shuffle(&mut self, x: &Self::Value, groups: usize) -> Result<Self::Value>;
    fn batch_item(&mut self, x: &Self::Value, n: usize) -> Result<Self::Value>;
    fn batch_stack(&mut self, xs: &[Self::Value]) -> Result<Self::Value>;

    /// `Σ_i coeffs[0, i] · bank_i` over a bank of `coeffs.channels` stacked
    /// kernels; `coeffs` has shape `(1, N, 1, 1)`.
    fn aggregate(&mut self, bank: &Self::Value, coeffs: &Self::Value) -> Result<Self::Value>;

    /// Enters a named region; names nest and label recorded nodes.
    fn push_scope(&mut self, _name: &str) {}
    fn pop_scope(&mut self) {}
}

/// Runs `f` inside the named scope of `g`.
pub fn scoped<T: Real, G: Graph<T>, R>(
    g: &mut G,
    name: &str,
    f: impl FnOnce(&mut G) -> Result<R>,
) -> Result<R> {
    g.push_scope(name);
    let r = f(g);
    g.pop_scope();
    r
}

/// Splits into `parts` equal channel groups.
pub fn split_even<T: Real, G: Graph<T>>(
    g: &mut G,
    x: &G::Value,
    parts: usize,
) -> Result<Vec<G::Value>> {
    let c = g.shape(x).channels;
    if parts == 0 || c % parts != 0 {
        return Err(crate::Error::Indivisible {
            op: "channel_split",
            what: "channels",
            value: c,
            divisor: parts,
        });
    }
    g.split(x, &alloc::vec![c / parts; parts])
}

/// Seeded random weights in `[-1, 1)` with the given shape, for probe losses.
pub fn probe_weights<T: Real>(shape: Shape, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-1.0..1.0)))
}

/// `Σ r ⊙ y` for fixed random `r`: a scalar whose gradient exercises every
/// element of `y` with a different weight.
pub fn probe_loss<T: Real, G: Graph<T>>(g: &mut G, y: &G::Value, seed: u64) -> Result<G::Value> {
    let r = probe_weights(g.shape(y), seed);
    let r = g.constant(&r)?;
    let p = g.mul(y, &r)?;
    g.sum(&p)
}

/// Sum of [`probe_loss`] over several outputs, with distinct weights each.
pub fn probe_loss_all<T: Real, G: Graph<T>>(
    g: &mut G,
    ys: &[G::Value],
    seed: u64,
) -> Result<G::Value> {
    let mut total: Option<G::Value> = None;
    for (i, y) in ys.iter().enumerate() {
        let l = probe_loss(g, y, seed.wrapping_add(i as u64 * 7919))?;
        total = Some(match total {
            Some(t) => g.add(&t, &l)?,
            None => l,
        });
    }
    total.ok_or_else(|| crate::Error::invalid("probe_loss", "no outputs"))
}

use alloc::vec::Vec;

use super::Graph;
use crate::layers::Param;
use crate::tensor::{self, ConvSpec, Real, Shape, Tensor};
use crate::{Error, Result};

/// Direct evaluation. Keeps a count of kernel aggregations so tests can
/// observe how often dynamic kernels are consulted.
#[derive(Debug, Default)]
pub struct Eval {
    aggregations: usize,
    ops: usize,
}

impl Eval {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of [`Graph::aggregate`] calls so far.
    pub fn aggregations(&self) -> usize {
        self.aggregations
    }

    /// Number of operations executed so far.
    pub fn ops(&self) -> usize {
        self.ops
    }

    fn tick(&mut self) {
        self.ops += 1;
    }
}

pub(crate) fn add_bias<T: Real>(y: Tensor<T>, bias: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    match bias {
        Some(b) => {
            if b.numel() != y.shape().channels {
                return Err(Error::mismatch(
                    "conv2d",
                    "bias length",
                    y.shape().channels,
                    b.numel(),
                ));
            }
            tensor::add(&y, b)
        }
        None => Ok(y),
    }
}

impl<T: Real> Graph<T> for Eval {
    type Value = Tensor<T>;

    fn shape(&self, v: &Tensor<T>) -> Shape {
        v.shape()
    }

    fn param(&mut self, p: &Param<T>) -> Result<Tensor<T>> {
        Ok(p.value.clone())
    }

    fn constant(&mut self, t: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(t.clone())
    }

    fn conv2d(
        &mut self,
        x: &Tensor<T>,
        w: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        spec: &ConvSpec,
    ) -> Result<Tensor<T>> {
        self.tick();
        add_bias(tensor::conv2d(x, w, spec)?, bias)
    }

    fn fully_connected(
        &mut self,
        x: &Tensor<T>,
        w: &Tensor<T>,
        bias: Option<&Tensor<T>>,
    ) -> Result<Tensor<T>> {
        self.tick();
        tensor::fully_connected(x, w, bias)
    }

    fn batchnorm(
        &mut self,
        x: &Tensor<T>,
        scale: &Tensor<T>,
        shift: &Tensor<T>,
        mean: &[T],
        var: &[T],
        eps: T,
    ) -> Result<Tensor<T>> {
        self.tick();
        tensor::batchnorm_inference(x, scale.data(), shift.data(), mean, var, eps)
    }

    fn relu(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.tick();
        Ok(tensor::relu(x))
    }

    fn sigmoid(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.tick();
        Ok(tensor::sigmoid(x))
    }

    fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.tick();
        tensor::add(a, b)
    }

    fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.tick();
        tensor::mul(a, b)
    }

    fn scale(&mut self, x: &Tensor<T>, s: T) -> Result<Tensor<T>> {
        self.tick();
        Ok(tensor::scale(x, s))
    }

    fn sum(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.tick();
        Ok(Tensor::scalar(tensor::sum(x)))
    }

    fn global_avg_pool(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.tick();
        tensor::global_avg_pool(x)
    }

    fn adaptive_avg_pool(&mut self, x: &Tensor<T>, out: (usize, usize)) -> Result<Tensor<T>> {
        self.tick();
        tensor::adaptive_avg_pool(x, out)
    }

    fn upsample(&mut self, x: &Tensor<T>, out: (usize, usize)) -> Result<Tensor<T>> {
        self.tick();
        tensor::bilinear_upsample(x, out)
    }

    fn context_pool(
        &mut self,
        x: &Tensor<T>,
        logits: &Tensor<T>,
        out: (usize, usize),
    ) -> Result<Tensor<T>> {
        self.tick();
        tensor::context_pool(x, logits, out)
    }

    fn split(&mut self, x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
        self.tick();
        tensor::channel_split_sizes(x, sizes)
    }

    fn concat(&mut self, xs: &[Tensor<T>]) -> Result<Tensor<T>> {
        self.tick();
        tensor::channel_concat(xs)
    }

    fn shuffle(&mut self, x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
        self.tick();
        tensor::channel_shuffle(x, groups)
    }

    fn batch_item(&mut self, x: &Tensor<T>, n: usize) -> Result<Tensor<T>> {
        self.tick();
        x.batch_item(n)
    }

    fn batch_stack(&mut self, xs: &[Tensor<T>]) -> Result<Tensor<T>> {
        self.tick();
        Tensor::stack_batch(xs)
    }

    fn aggregate(&mut self, bank: &Tensor<T>, coeffs: &Tensor<T>) -> Result<Tensor<T>> {
        self.tick();
        self.aggregations += 1;
        check_coeffs(coeffs.shape())?;
        tensor::bank_combine(bank, coeffs.data())
    }
}

pub(crate) fn check_coeffs(s: Shape) -> Result<()> {
    if s.batch != 1 || s.height != 1 || s.width != 1 {
        return Err(Error::invalid(
            "aggregate",
            alloc::format!("coefficients must be (1, N, 1, 1), got {s}"),
        ));
    }
    Ok(())
}

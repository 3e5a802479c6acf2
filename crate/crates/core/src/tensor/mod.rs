//! Dense 4-D tensors in batch-channel-height-width layout and the primitive
//! kernels every layer is composed from.
//!
//! All functions here are pure: they borrow their inputs and return freshly
//! allocated outputs, so any number of them may run concurrently.

mod channel;
mod conv;
mod elementwise;
mod pool;

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::iter::Sum;

use num_traits::Float;

use crate::{Error, Result};

pub use channel::{
    channel_concat, channel_shuffle, channel_split, channel_split_sizes, shuffle_permutation,
};
pub use conv::{
    conv2d, conv2d_backward_input, conv2d_backward_weight, naive_conv_oracle, ConvSpec,
};
pub use elementwise::{
    add, bank_combine, batchnorm_inference, fully_connected, matmul, mul, relu, scale, sigmoid,
    softmax, sum,
};
pub use pool::{
    adaptive_avg_pool, adaptive_pool_backward, bilinear_backward, bilinear_upsample, bin_range,
    context_mask, context_pool, context_pool_backward, global_avg_pool,
};

/// Element type of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Real: Float + Default + fmt::Debug + fmt::Display + Send + Sync + Sum + 'static {
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn of(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn of(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

/// Batch, channel, height and width extents of a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        Shape {
            batch,
            channels,
            height,
            width,
        }
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.height, self.width]
    }

    pub const fn from_dims(d: [usize; 4]) -> Self {
        Shape::new(d[0], d[1], d[2], d[3])
    }

    pub const fn numel(&self) -> usize {
        self.batch * self.channels * self.height * self.width
    }

    /// Elements in one `height × width` plane.
    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn with_channels(&self, channels: usize) -> Self {
        Shape::new(self.batch, channels, self.height, self.width)
    }

    pub const fn with_spatial(&self, height: usize, width: usize) -> Self {
        Shape::new(self.batch, self.channels, height, width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims().iter().any(|&d| d == 0) {
            return Err(Error::invalid(
                "shape",
                alloc::format!("zero extent in {self}"),
            ));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.channels, self.height, self.width
        )
    }
}

/// Dense row-major tensor; width is the fastest-varying axis.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(Error::mismatch(
                "tensor",
                "data length",
                shape.numel(),
                data.len(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: Shape, value: T) -> Self {
        assert!(
            shape.numel() > 0,
            "tensor extents must be non-zero, got {shape}"
        );
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    /// A `1×1×1×1` tensor.
    pub fn scalar(value: T) -> Self {
        Self::full(Shape::new(1, 1, 1, 1), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.batch {
            for c in 0..shape.channels {
                for h in 0..shape.height {
                    for w in 0..shape.width {
                        data.push(f([n, c, h, w]));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn offset(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let s = &self.shape;
        ((n * s.channels + c) * s.height + h) * s.width + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.offset(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, value: T) {
        let i = self.offset(n, c, h, w);
        self.data[i] = value;
    }

    /// Contiguous `height × width` plane of sample `n`, channel `c`.
    pub fn plane(&self, n: usize, c: usize) -> &[T] {
        let p = self.shape.plane();
        let start = (n * self.shape.channels + c) * p;
        &self.data[start..start + p]
    }

    pub fn reshape(&self, shape: Shape) -> Result<Self> {
        shape.validate()?;
        if shape.numel() != self.numel() {
            return Err(Error::mismatch(
                "reshape",
                "element count",
                self.numel(),
                shape.numel(),
            ));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::invalid(
                "zip",
                alloc::format!("shapes {} and {} differ", self.shape, other.shape),
            ));
        }
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Sample `n` as a batch-of-one tensor.
    pub fn batch_item(&self, n: usize) -> Result<Self> {
        if n >= self.shape.batch {
            return Err(Error::invalid(
                "batch_item",
                alloc::format!("index {n} out of range for batch {}", self.shape.batch),
            ));
        }
        let per = self.numel() / self.shape.batch;
        Ok(Tensor {
            shape: Shape::new(1, self.shape.channels, self.shape.height, self.shape.width),
            data: self.data[n * per..(n + 1) * per].to_vec(),
        })
    }

    /// Concatenates tensors along the batch axis.
    pub fn stack_batch(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::invalid("stack_batch", "no tensors"))?;
        let inner = first.shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        let mut batch = 0;
        for t in items {
            if t.shape.channels != inner.channels
                || t.shape.height != inner.height
                || t.shape.width != inner.width
            {
                return Err(Error::invalid(
                    "stack_batch",
                    alloc::format!("shape {} does not match {}", t.shape, inner),
                ));
            }
            batch += t.shape.batch;
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: Shape::new(batch, inner.channels, inner.height, inner.width),
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Debug-build check that a kernel produced no NaN/Inf from finite inputs.
#[inline]
pub(crate) fn debug_check_finite<T: Real>(op: &str, inputs_finite: bool, out: &Tensor<T>) {
    if cfg!(debug_assertions) && inputs_finite {
        debug_assert!(
            out.all_finite(),
            "{op} produced non-finite output from finite inputs"
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn length_must_match_shape() {
        let err = Tensor::<f64>::from_vec(Shape::new(1, 2, 2, 2), vec![0.0; 7]).unwrap_err();
        assert!(matches!(
            err,
            Error::ShapeMismatch {
                expected: 8,
                actual: 7,
                ..
            }
        ));
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(Tensor::<f32>::from_vec(Shape::new(1, 0, 2, 2), vec![]).is_err());
    }

    #[test]
    fn row_major_width_fastest() {
        let t = Tensor::<f64>::from_fn(Shape::new(1, 2, 2, 3), |[_, c, h, w]| {
            (c * 100 + h * 10 + w) as f64
        });
        assert_eq!(t.data()[1], 1.0);
        assert_eq!(t.data()[3], 10.0);
        assert_eq!(t.data()[6], 100.0);
        assert_eq!(t.at(0, 1, 1, 2), 112.0);
    }

    #[test]
    fn batch_roundtrip() {
        let t = Tensor::<f64>::from_fn(Shape::new(3, 2, 1, 2), |[n, c, _, w]| {
            (n * 7 + c * 3 + w) as f64
        });
        let items: Vec<_> = (0..3).map(|n| t.batch_item(n).unwrap()).collect();
        assert_eq!(Tensor::stack_batch(&items).unwrap(), t);
    }
}

use alloc::vec;

use super::{debug_check_finite, Real, Shape, Tensor};
use crate::{Error, Result};

/// Geometry of a grouped 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    /// Square `k×k` kernel, stride 1, no padding, one group.
    pub const fn new(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }

    pub const fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, 1)
    }

    /// `k×k` depthwise convolution padded to keep the spatial size at stride 1.
    pub const fn depthwise(channels: usize, k: usize) -> Self {
        Self::new(channels, channels, k)
            .groups(channels)
            .padding(k / 2)
    }

    pub const fn stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub const fn padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub const fn groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if self.in_channels == 0
            || self.out_channels == 0
            || kh == 0
            || kw == 0
            || self.stride == 0
            || self.groups == 0
        {
            return Err(Error::invalid(
                "conv2d",
                alloc::format!("zero-sized spec {self:?}"),
            ));
        }
        if self.in_channels % self.groups != 0 {
            return Err(Error::Indivisible {
                op: "conv2d",
                what: "in_channels",
                value: self.in_channels,
                divisor: self.groups,
            });
        }
        if self.out_channels % self.groups != 0 {
            return Err(Error::Indivisible {
                op: "conv2d",
                what: "out_channels",
                value: self.out_channels,
                divisor: self.groups,
            });
        }
        Ok(())
    }

    /// Shape of the weight tensor: `(out, in/groups, kh, kw)`.
    pub fn weight_shape(&self) -> Shape {
        Shape::new(
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel.0,
            self.kernel.1,
        )
    }

    /// Output spatial extent along one axis.
    fn out_extent(&self, input: usize, k: usize, dim: &'static str) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < k {
            return Err(Error::invalid(
                "conv2d",
                alloc::format!(
                    "{dim} {input} with padding {} is smaller than kernel {k}",
                    self.padding
                ),
            ));
        }
        Ok((padded - k) / self.stride + 1)
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        self.validate()?;
        if input.channels != self.in_channels {
            return Err(Error::mismatch(
                "conv2d",
                "input channels",
                self.in_channels,
                input.channels,
            ));
        }
        let oh = self.out_extent(input.height, self.kernel.0, "height")?;
        let ow = self.out_extent(input.width, self.kernel.1, "width")?;
        Ok(Shape::new(input.batch, self.out_channels, oh, ow))
    }

    pub fn check_weight(&self, w: Shape) -> Result<()> {
        let want = self.weight_shape();
        let names = [
            "weight out_channels",
            "weight in_channels/groups",
            "kernel height",
            "kernel width",
        ];
        for ((&e, &a), name) in want.dims().iter().zip(w.dims().iter()).zip(names) {
            if e != a {
                return Err(Error::mismatch("conv2d", name, e, a));
            }
        }
        Ok(())
    }

    /// Multiply-adds for one forward pass producing `out`.
    pub fn macs(&self, out: Shape) -> u64 {
        (out.numel() * (self.in_channels / self.groups) * self.kernel.0 * self.kernel.1) as u64
    }
}

/// Range of output positions whose tap `k` lands inside `[0, input)`.
#[inline]
fn valid_range(input: usize, out: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // in = o*stride + k - pad must satisfy 0 <= in < input
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi = if input + pad <= k {
        0
    } else {
        ((input + pad - k - 1) / stride + 1).min(out)
    };
    (lo, hi.max(lo))
}

/// Grouped 2-D convolution without bias.
///
/// Accumulates whole output planes tap by tap. For every output element the
/// terms are summed in the same `(ci, ky, kx)` order as
/// [`naive_conv_oracle`], so both produce identical bits.
pub fn conv2d<T: Real>(x: &Tensor<T>, w: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let out_shape = spec.output_shape(x.shape())?;
    spec.check_weight(w.shape())?;
    let xs = x.shape();
    let (kh, kw) = spec.kernel;
    let (s, p) = (spec.stride, spec.padding);
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let (oh_n, ow_n) = (out_shape.height, out_shape.width);
    let mut out = Tensor::zeros(out_shape);
    let wd = w.data();
    let xd = x.data();
    let xplane = xs.plane();
    let oplane = out_shape.plane();
    let od = out.data_mut();

    for n in 0..xs.batch {
        for oc in 0..spec.out_channels {
            let g = oc / cout_g;
            let obase = (n * spec.out_channels + oc) * oplane;
            let oslice = &mut od[obase..obase + oplane];
            for ci in 0..cin_g {
                let ic = g * cin_g + ci;
                let xbase = (n * xs.channels + ic) * xplane;
                let xslice = &xd[xbase..xbase + xplane];
                for ky in 0..kh {
                    let (oh_lo, oh_hi) = valid_range(xs.height, oh_n, ky, s, p);
                    for kx in 0..kw {
                        let wv = wd[((oc * cin_g + ci) * kh + ky) * kw + kx];
                        let (ow_lo, ow_hi) = valid_range(xs.width, ow_n, kx, s, p);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + ky - p;
                            let orow = &mut oslice[oh * ow_n..(oh + 1) * ow_n];
                            let xrow = &xslice[ih * xs.width..(ih + 1) * xs.width];
                            if s == 1 {
                                let off = kx as isize - p as isize;
                                for ow in ow_lo..ow_hi {
                                    let iw = (ow as isize + off) as usize;
                                    orow[ow] = orow[ow] + wv * xrow[iw];
                                }
                            } else {
                                for ow in ow_lo..ow_hi {
                                    let iw = ow * s + kx - p;
                                    orow[ow] = orow[ow] + wv * xrow[iw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    debug_check_finite("conv2d", x.all_finite() && w.all_finite(), &out);
    Ok(out)
}

/// Reference grouped convolution written as the literal nested-loop sum.
pub fn naive_conv_oracle<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let out_shape = spec.output_shape(x.shape())?;
    spec.check_weight(w.shape())?;
    let xs = x.shape();
    let (kh, kw) = spec.kernel;
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let mut out = Tensor::zeros(out_shape);
    for n in 0..out_shape.batch {
        for oc in 0..out_shape.channels {
            let g = oc / cout_g;
            for oh in 0..out_shape.height {
                for ow in 0..out_shape.width {
                    let mut acc = T::zero();
                    for ci in 0..cin_g {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let ih = (oh * spec.stride + ky) as isize - spec.padding as isize;
                                let iw = (ow * spec.stride + kx) as isize - spec.padding as isize;
                                if ih < 0
                                    || iw < 0
                                    || ih as usize >= xs.height
                                    || iw as usize >= xs.width
                                {
                                    continue;
                                }
                                acc = acc
                                    + w.at(oc, ci, ky, kx)
                                        * x.at(n, g * cin_g + ci, ih as usize, iw as usize);
                            }
                        }
                    }
                    out.set(n, oc, oh, ow, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Gradient of [`conv2d`] with respect to its input.
pub fn conv2d_backward_input<T: Real>(
    dy: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    input: Shape,
) -> Result<Tensor<T>> {
    let out_shape = spec.output_shape(input)?;
    if dy.shape() != out_shape {
        return Err(Error::invalid(
            "conv2d_backward_input",
            alloc::format!(
                "gradient shape {} != output shape {}",
                dy.shape(),
                out_shape
            ),
        ));
    }
    let (kh, kw) = spec.kernel;
    let (s, p) = (spec.stride, spec.padding);
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let mut dx = vec![T::zero(); input.numel()];
    let wd = w.data();
    let dyd = dy.data();
    for n in 0..input.batch {
        for oc in 0..spec.out_channels {
            let g = oc / cout_g;
            let dbase = (n * spec.out_channels + oc) * out_shape.plane();
            for ci in 0..cin_g {
                let ic = g * cin_g + ci;
                let xbase = (n * input.channels + ic) * input.plane();
                for ky in 0..kh {
                    let (oh_lo, oh_hi) = valid_range(input.height, out_shape.height, ky, s, p);
                    for kx in 0..kw {
                        let wv = wd[((oc * cin_g + ci) * kh + ky) * kw + kx];
                        let (ow_lo, ow_hi) = valid_range(input.width, out_shape.width, kx, s, p);
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + ky - p;
                            for ow in ow_lo..ow_hi {
                                let iw = ow * s + kx - p;
                                let g = dyd[dbase + oh * out_shape.width + ow];
                                let i = xbase + ih * input.width + iw;
                                dx[i] = dx[i] + wv * g;
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(input, dx)
}

/// Gradient of [`conv2d`] with respect to its weight.
pub fn conv2d_backward_weight<T: Real>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let input = x.shape();
    let out_shape = spec.output_shape(input)?;
    if dy.shape() != out_shape {
        return Err(Error::invalid(
            "conv2d_backward_weight",
            alloc::format!(
                "gradient shape {} != output shape {}",
                dy.shape(),
                out_shape
            ),
        ));
    }
    let (kh, kw) = spec.kernel;
    let (s, p) = (spec.stride, spec.padding);
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let wshape = spec.weight_shape();
    let mut dw = vec![T::zero(); wshape.numel()];
    let xd = x.data();
    let dyd = dy.data();
    for n in 0..input.batch {
        for oc in 0..spec.out_channels {
            let g = oc / cout_g;
            let dbase = (n * spec.out_channels + oc) * out_shape.plane();
            for ci in 0..cin_g {
                let ic = g * cin_g + ci;
                let xbase = (n * input.channels + ic) * input.plane();
                for ky in 0..kh {
                    let (oh_lo, oh_hi) = valid_range(input.height, out_shape.height, ky, s, p);
                    for kx in 0..kw {
                        let (ow_lo, ow_hi) = valid_range(input.width, out_shape.width, kx, s, p);
                        let mut acc = T::zero();
                        for oh in oh_lo..oh_hi {
                            let ih = oh * s + ky - p;
                            for ow in ow_lo..ow_hi {
                                let iw = ow * s + kx - p;
                                acc = acc
                                    + dyd[dbase + oh * out_shape.width + ow]
                                        * xd[xbase + ih * input.width + iw];
                            }
                        }
                        let i = ((oc * cin_g + ci) * kh + ky) * kw + kx;
                        dw[i] = dw[i] + acc;
                    }
                }
            }
        }
    }
    Tensor::from_vec(wshape, dw)
}

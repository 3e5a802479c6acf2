use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use super::{debug_check_finite, Real, Shape, Tensor};
use crate::{Error, Result};

/// Input rows `[start, end)` feeding output cell `i` when `input` cells are
/// pooled to `output` cells. Bins tile exactly when `output` divides `input`
/// and overlap by one cell otherwise.
pub fn bin_range(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = i * input / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

fn check_pool_target(op: &'static str, s: Shape, out: (usize, usize)) -> Result<()> {
    if out.0 == 0 || out.1 == 0 {
        return Err(Error::invalid(op, "target size must be at least 1x1"));
    }
    if out.0 > s.height || out.1 > s.width {
        return Err(Error::invalid(
            op,
            alloc::format!(
                "target {}x{} exceeds input {}x{}",
                out.0,
                out.1,
                s.height,
                s.width
            ),
        ));
    }
    Ok(())
}

/// Mean of every adaptive bin.
///
/// Each mean is taken relative to the first element of its bin, so constant
/// fields come out exactly.
pub fn adaptive_avg_pool<T: Real>(x: &Tensor<T>, out: (usize, usize)) -> Result<Tensor<T>> {
    let s = x.shape();
    check_pool_target("adaptive_avg_pool", s, out)?;
    let shape = s.with_spatial(out.0, out.1);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..s.batch {
        for c in 0..s.channels {
            let plane = x.plane(n, c);
            for i in 0..out.0 {
                let (h0, h1) = bin_range(i, s.height, out.0);
                for j in 0..out.1 {
                    let (w0, w1) = bin_range(j, s.width, out.1);
                    let first = plane[h0 * s.width + w0];
                    let mut acc = T::zero();
                    for h in h0..h1 {
                        for w in w0..w1 {
                            acc = acc + (plane[h * s.width + w] - first);
                        }
                    }
                    let count = T::of(((h1 - h0) * (w1 - w0)) as f64);
                    data.push(first + acc / count);
                }
            }
        }
    }
    let y = Tensor::from_vec(shape, data)?;
    debug_check_finite("adaptive_avg_pool", x.all_finite(), &y);
    Ok(y)
}

pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    adaptive_avg_pool(x, (1, 1))
}

pub fn adaptive_pool_backward<T: Real>(dy: &Tensor<T>, input: Shape) -> Result<Tensor<T>> {
    let o = dy.shape();
    check_pool_target("adaptive_pool_backward", input, (o.height, o.width))?;
    let mut dx = Tensor::zeros(input);
    for n in 0..input.batch {
        for c in 0..input.channels {
            for i in 0..o.height {
                let (h0, h1) = bin_range(i, input.height, o.height);
                for j in 0..o.width {
                    let (w0, w1) = bin_range(j, input.width, o.width);
                    let g = dy.at(n, c, i, j) / T::of(((h1 - h0) * (w1 - w0)) as f64);
                    for h in h0..h1 {
                        for w in w0..w1 {
                            let k = dx.offset(n, c, h, w);
                            dx.data_mut()[k] = dx.data()[k] + g;
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Source taps and fraction for output index `i` under half-pixel centres.
fn bilinear_tap(i: usize, input: usize, output: usize) -> (usize, usize, f64) {
    let scale = input as f64 / output as f64;
    let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (Float::floor(src) as usize).min(input - 1);
    let i1 = (i0 + 1).min(input - 1);
    (i0, i1, src - i0 as f64)
}

fn check_upsample_target(op: &'static str, s: Shape, out: (usize, usize)) -> Result<()> {
    if out.0 < s.height || out.1 < s.width {
        return Err(Error::invalid(
            op,
            alloc::format!(
                "target {}x{} is smaller than input {}x{}; pool instead",
                out.0,
                out.1,
                s.height,
                s.width
            ),
        ));
    }
    Ok(())
}

/// Bilinear resize to a larger grid with half-pixel centres
/// (`align_corners = false`); source coordinates below zero are clamped.
pub fn bilinear_upsample<T: Real>(x: &Tensor<T>, out: (usize, usize)) -> Result<Tensor<T>> {
    let s = x.shape();
    check_upsample_target("bilinear_upsample", s, out)?;
    let rows: Vec<_> = (0..out.0)
        .map(|i| bilinear_tap(i, s.height, out.0))
        .collect();
    let cols: Vec<_> = (0..out.1)
        .map(|j| bilinear_tap(j, s.width, out.1))
        .collect();
    let shape = s.with_spatial(out.0, out.1);
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..s.batch {
        for c in 0..s.channels {
            let p = x.plane(n, c);
            for &(h0, h1, ly) in &rows {
                let ly = T::of(ly);
                for &(w0, w1, lx) in &cols {
                    let lx = T::of(lx);
                    let a = p[h0 * s.width + w0];
                    let b = p[h0 * s.width + w1];
                    let cc = p[h1 * s.width + w0];
                    let d = p[h1 * s.width + w1];
                    // lerp form keeps constant fields exact
                    let top = a + lx * (b - a);
                    let bottom = cc + lx * (d - cc);
                    data.push(top + ly * (bottom - top));
                }
            }
        }
    }
    let y = Tensor::from_vec(shape, data)?;
    debug_check_finite("bilinear_upsample", x.all_finite(), &y);
    Ok(y)
}

pub fn bilinear_backward<T: Real>(dy: &Tensor<T>, input: Shape) -> Result<Tensor<T>> {
    let o = dy.shape();
    check_upsample_target("bilinear_backward", input, (o.height, o.width))?;
    let rows: Vec<_> = (0..o.height)
        .map(|i| bilinear_tap(i, input.height, o.height))
        .collect();
    let cols: Vec<_> = (0..o.width)
        .map(|j| bilinear_tap(j, input.width, o.width))
        .collect();
    let mut dx = vec![T::zero(); input.numel()];
    for n in 0..input.batch {
        for c in 0..input.channels {
            let base = (n * input.channels + c) * input.plane();
            for (i, &(h0, h1, ly)) in rows.iter().enumerate() {
                let ly = T::of(ly);
                for (j, &(w0, w1, lx)) in cols.iter().enumerate() {
                    let lx = T::of(lx);
                    let g = dy.at(n, c, i, j);
                    let one = T::one();
                    let mut put = |h: usize, w: usize, wt: T| {
                        let k = base + h * input.width + w;
                        dx[k] = dx[k] + wt * g;
                    };
                    put(h0, w0, (one - ly) * (one - lx));
                    put(h0, w1, (one - ly) * lx);
                    put(h1, w0, ly * (one - lx));
                    put(h1, w1, ly * lx);
                }
            }
        }
    }
    Tensor::from_vec(input, dx)
}

fn check_context_args<T: Real>(
    op: &'static str,
    x: &Tensor<T>,
    logits: &Tensor<T>,
    out: (usize, usize),
) -> Result<()> {
    let s = x.shape();
    let l = logits.shape();
    if l.channels != 1 {
        return Err(Error::mismatch(op, "logit channels", 1, l.channels));
    }
    if l.batch != s.batch {
        return Err(Error::mismatch(op, "logit batch", s.batch, l.batch));
    }
    if l.height != s.height {
        return Err(Error::mismatch(op, "logit height", s.height, l.height));
    }
    if l.width != s.width {
        return Err(Error::mismatch(op, "logit width", s.width, l.width));
    }
    check_pool_target(op, s, out)
}

/// Softmax of `logits` restricted to each bin, written into `mask`
/// (indexed by position within the bin).
fn bin_softmax<T: Real>(
    logits: &[T],
    width: usize,
    hr: (usize, usize),
    wr: (usize, usize),
    mask: &mut Vec<T>,
) {
    mask.clear();
    let mut max = T::neg_infinity();
    for h in hr.0..hr.1 {
        for w in wr.0..wr.1 {
            max = max.max(logits[h * width + w]);
        }
    }
    let mut total = T::zero();
    for h in hr.0..hr.1 {
        for w in wr.0..wr.1 {
            let e = (logits[h * width + w] - max).exp();
            total = total + e;
            mask.push(e);
        }
    }
    for m in mask.iter_mut() {
        *m = *m / total;
    }
}

/// Attention-weighted pooling to `out` cells.
///
/// For every output cell the single-channel `logits` are softmax-normalised
/// over that cell's adaptive bin and used to average every channel of `x`
/// over the bin. With one output cell this is the global context pooling
/// of a GCNet-style block.
pub fn context_pool<T: Real>(
    x: &Tensor<T>,
    logits: &Tensor<T>,
    out: (usize, usize),
) -> Result<Tensor<T>> {
    check_context_args("context_pool", x, logits, out)?;
    let s = x.shape();
    let shape = s.with_spatial(out.0, out.1);
    let mut y = Tensor::zeros(shape);
    let mut mask = Vec::new();
    for n in 0..s.batch {
        let l = logits.plane(n, 0);
        for i in 0..out.0 {
            let hr = bin_range(i, s.height, out.0);
            for j in 0..out.1 {
                let wr = bin_range(j, s.width, out.1);
                bin_softmax(l, s.width, hr, wr, &mut mask);
                for c in 0..s.channels {
                    let p = x.plane(n, c);
                    let first = p[hr.0 * s.width + wr.0];
                    let mut acc = T::zero();
                    let mut k = 0;
                    for h in hr.0..hr.1 {
                        for w in wr.0..wr.1 {
                            acc = acc + mask[k] * (p[h * s.width + w] - first);
                            k += 1;
                        }
                    }
                    y.set(n, c, i, j, first + acc);
                }
            }
        }
    }
    debug_check_finite("context_pool", x.all_finite() && logits.all_finite(), &y);
    Ok(y)
}

/// The explicit mask matrix behind [`context_pool`]: shape
/// `(batch, 1, out_h·out_w, H·W)`, each row a distribution over input
/// positions that is zero outside its bin.
pub fn context_mask<T: Real>(logits: &Tensor<T>, out: (usize, usize)) -> Result<Tensor<T>> {
    let l = logits.shape();
    if l.channels != 1 {
        return Err(Error::mismatch(
            "context_mask",
            "logit channels",
            1,
            l.channels,
        ));
    }
    check_pool_target("context_mask", l, out)?;
    let rows = out.0 * out.1;
    let mut m = Tensor::zeros(Shape::new(l.batch, 1, rows, l.plane()));
    let mut mask = Vec::new();
    for n in 0..l.batch {
        let lp = logits.plane(n, 0);
        for i in 0..out.0 {
            let hr = bin_range(i, l.height, out.0);
            for j in 0..out.1 {
                let wr = bin_range(j, l.width, out.1);
                bin_softmax(lp, l.width, hr, wr, &mut mask);
                let mut k = 0;
                for h in hr.0..hr.1 {
                    for w in wr.0..wr.1 {
                        m.set(n, 0, i * out.1 + j, h * l.width + w, mask[k]);
                        k += 1;
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Gradients of [`context_pool`] with respect to `x` and `logits`.
pub fn context_pool_backward<T: Real>(
    dy: &Tensor<T>,
    x: &Tensor<T>,
    logits: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let o = dy.shape();
    let out = (o.height, o.width);
    check_context_args("context_pool_backward", x, logits, out)?;
    let y = context_pool(x, logits, out)?;
    let s = x.shape();
    let mut dx = Tensor::zeros(s);
    let mut dl = Tensor::zeros(logits.shape());
    let mut mask = Vec::new();
    for n in 0..s.batch {
        let l = logits.plane(n, 0);
        for i in 0..out.0 {
            let hr = bin_range(i, s.height, out.0);
            for j in 0..out.1 {
                let wr = bin_range(j, s.width, out.1);
                bin_softmax(l, s.width, hr, wr, &mut mask);
                for c in 0..s.channels {
                    let g = dy.at(n, c, i, j);
                    let yc = y.at(n, c, i, j);
                    let mut k = 0;
                    for h in hr.0..hr.1 {
                        for w in wr.0..wr.1 {
                            let xi = dx.offset(n, c, h, w);
                            let xv = x.data()[xi];
                            dx.data_mut()[xi] = dx.data()[xi] + mask[k] * g;
                            let li = dl.offset(n, 0, h, w);
                            dl.data_mut()[li] = dl.data()[li] + g * mask[k] * (xv - yc);
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    Ok((dx, dl))
}

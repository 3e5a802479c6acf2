use alloc::vec::Vec;

use super::{debug_check_finite, Real, Shape, Tensor};
use crate::{Error, Result};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Softmax along `axis` (0 = batch, 1 = channels, 2 = height, 3 = width).
pub fn softmax<T: Real>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis > 3 {
        return Err(Error::invalid(
            "softmax",
            alloc::format!("axis {axis} out of range 0..4"),
        ));
    }
    let dims = x.shape().dims();
    let len = dims[axis];
    let stride: usize = dims[axis + 1..].iter().product();
    let outer: usize = dims[..axis].iter().product();
    let mut y = x.clone();
    let d = y.data_mut();
    for o in 0..outer {
        for i in 0..stride {
            let base = o * len * stride + i;
            let idx = |k: usize| base + k * stride;
            let max = (0..len).fold(T::neg_infinity(), |m, k| m.max(d[idx(k)]));
            let mut total = T::zero();
            for k in 0..len {
                let e = (d[idx(k)] - max).exp();
                d[idx(k)] = e;
                total = total + e;
            }
            for k in 0..len {
                d[idx(k)] = d[idx(k)] / total;
            }
        }
    }
    debug_check_finite("softmax", x.all_finite(), &y);
    Ok(y)
}

fn check_vector(op: &'static str, what: &'static str, v: Shape, len: usize) -> Result<()> {
    if v.numel() != len || v.channels != len {
        return Err(Error::mismatch(op, what, len, v.channels));
    }
    Ok(())
}

/// Dense layer on `(batch, in, 1, 1)` inputs with weight `(out, in, 1, 1)`
/// and optional bias `(1, out, 1, 1)`.
pub fn fully_connected<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let s = x.shape();
    let ws = w.shape();
    if s.height != 1 || s.width != 1 {
        return Err(Error::invalid(
            "fully_connected",
            alloc::format!("input must be a vector per sample, got {s}"),
        ));
    }
    if ws.height != 1 || ws.width != 1 {
        return Err(Error::invalid(
            "fully_connected",
            alloc::format!("weight must be (out, in, 1, 1), got {ws}"),
        ));
    }
    if ws.channels != s.channels {
        return Err(Error::mismatch(
            "fully_connected",
            "input features",
            ws.channels,
            s.channels,
        ));
    }
    let (fin, fout) = (ws.channels, ws.batch);
    if let Some(b) = b {
        check_vector("fully_connected", "bias length", b.shape(), fout)?;
    }
    let mut data = Vec::with_capacity(s.batch * fout);
    for n in 0..s.batch {
        let xv = &x.data()[n * fin..(n + 1) * fin];
        for o in 0..fout {
            let row = &w.data()[o * fin..(o + 1) * fin];
            let mut acc = T::zero();
            for (a, c) in row.iter().zip(xv) {
                acc = acc + *a * *c;
            }
            if let Some(b) = b {
                acc = acc + b.data()[o];
            }
            data.push(acc);
        }
    }
    Tensor::from_vec(Shape::new(s.batch, fout, 1, 1), data)
}

/// Batched matrix product over the trailing two axes:
/// `(B, C, m, k) · (B, C, k, n) → (B, C, m, n)`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.batch != sb.batch {
        return Err(Error::mismatch("matmul", "batch", sa.batch, sb.batch));
    }
    if sa.channels != sb.channels {
        return Err(Error::mismatch(
            "matmul",
            "channels",
            sa.channels,
            sb.channels,
        ));
    }
    if sa.width != sb.height {
        return Err(Error::mismatch(
            "matmul",
            "inner dimension",
            sa.width,
            sb.height,
        ));
    }
    let (m, k, n) = (sa.height, sa.width, sb.width);
    let shape = Shape::new(sa.batch, sa.channels, m, n);
    let mut out = Tensor::zeros(shape);
    for bi in 0..sa.batch {
        for c in 0..sa.channels {
            let ap = a.plane(bi, c);
            let bp = b.plane(bi, c);
            let base = out.offset(bi, c, 0, 0);
            let od = &mut out.data_mut()[base..base + m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut acc = T::zero();
                    for t in 0..k {
                        acc = acc + ap[i * k + t] * bp[t * n + j];
                    }
                    od[i * n + j] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// `scale · (x − mean) / sqrt(var + eps) + shift`, per channel.
pub fn batchnorm_inference<T: Real>(
    x: &Tensor<T>,
    scale: &[T],
    shift: &[T],
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Tensor<T>> {
    let s = x.shape();
    for (what, v) in [
        ("scale length", scale),
        ("shift length", shift),
        ("mean length", mean),
        ("var length", var),
    ] {
        if v.len() != s.channels {
            return Err(Error::mismatch("batchnorm", what, s.channels, v.len()));
        }
    }
    if let Some(c) = var.iter().position(|&v| v < T::zero()) {
        return Err(Error::invalid(
            "batchnorm",
            alloc::format!("negative variance {} in channel {c}", var[c]),
        ));
    }
    let plane = s.plane();
    let mut y = x.clone();
    let d = y.data_mut();
    for n in 0..s.batch {
        for c in 0..s.channels {
            let inv = scale[c] / (var[c] + eps).sqrt();
            let base = (n * s.channels + c) * plane;
            for v in &mut d[base..base + plane] {
                *v = (*v - mean[c]) * inv + shift[c];
            }
        }
    }
    debug_check_finite("batchnorm", x.all_finite(), &y);
    Ok(y)
}

/// Whether `b` can be broadcast onto `a`: identical shapes, or one value per
/// (sample, channel) with a batch of 1 or of `a.batch`.
pub(crate) fn broadcastable(a: Shape, b: Shape) -> bool {
    a == b
        || (b.height == 1
            && b.width == 1
            && b.channels == a.channels
            && (b.batch == a.batch || b.batch == 1))
}

fn broadcast_zip<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa == sb {
        return a.zip_map(b, f);
    }
    if !broadcastable(sa, sb) {
        return Err(Error::invalid(
            op,
            alloc::format!("cannot broadcast {sb} onto {sa}"),
        ));
    }
    let plane = sa.plane();
    let mut y = a.clone();
    let d = y.data_mut();
    for n in 0..sa.batch {
        for c in 0..sa.channels {
            let bv = b.data()[(if sb.batch == 1 { 0 } else { n }) * sa.channels + c];
            let base = (n * sa.channels + c) * plane;
            for v in &mut d[base..base + plane] {
                *v = f(*v, bv);
            }
        }
    }
    Ok(y)
}

/// `a + b`, broadcasting a per-channel `b` over space.
pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_zip("add", a, b, |p, q| p + q)
}

/// `a ⊙ b`, broadcasting a per-channel `b` over space.
pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_zip("mul", a, b, |p, q| p * q)
}

pub fn scale<T: Real>(x: &Tensor<T>, s: T) -> Tensor<T> {
    x.map(|v| v * s)
}

pub fn sum<T: Real>(x: &Tensor<T>) -> T {
    x.data().iter().copied().sum()
}

/// `Σ_i coeffs[i] · bank_i` where the bank stacks `coeffs.len()` equally
/// shaped kernels along the leading axis.
pub fn bank_combine<T: Real>(bank: &Tensor<T>, coeffs: &[T]) -> Result<Tensor<T>> {
    let s = bank.shape();
    let n = coeffs.len();
    if n == 0 || s.batch % n != 0 {
        return Err(Error::Indivisible {
            op: "bank_combine",
            what: "bank rows",
            value: s.batch,
            divisor: n,
        });
    }
    let shape = Shape::new(s.batch / n, s.channels, s.height, s.width);
    let len = shape.numel();
    let mut data = alloc::vec![T::zero(); len];
    for (i, &a) in coeffs.iter().enumerate() {
        for (d, &w) in data.iter_mut().zip(&bank.data()[i * len..(i + 1) * len]) {
            *d = *d + a * w;
        }
    }
    Tensor::from_vec(shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let x = Tensor::<f64>::zeros(Shape::new(1, 2, 1, 1));
        assert_eq!(softmax(&x, 1).unwrap().data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_axis_checked() {
        assert!(softmax(&Tensor::<f64>::zeros(Shape::new(1, 1, 1, 1)), 4).is_err());
    }

    #[test]
    fn softmax_sums_along_width() {
        let x = Tensor::from_fn(Shape::new(2, 3, 2, 5), |[n, c, h, w]| {
            ((n + c * h) as f64 - w as f64 * 1.7).cos() * 9.0
        });
        let y = softmax(&x, 3).unwrap();
        for row in y.data().chunks(5) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_centre_and_tails() {
        let x = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![0.0f64, -800.0, 800.0]).unwrap();
        let y = sigmoid(&x);
        assert_eq!(y.data(), &[0.5, 0.0, 1.0]);
    }

    #[test]
    fn relu_idempotent() {
        let x = Tensor::from_fn(Shape::new(1, 1, 3, 3), |[_, _, h, w]| h as f64 - w as f64);
        assert_eq!(relu(&relu(&x)), relu(&x));
    }

    #[test]
    fn matmul_small() {
        let a =
            Tensor::from_vec(Shape::new(1, 1, 2, 3), vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Tensor::from_vec(
            Shape::new(1, 1, 3, 2),
            vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0],
        )
        .unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn batchnorm_identity_and_constant() {
        let x = Tensor::from_fn(Shape::new(1, 2, 2, 2), |[_, c, h, w]| {
            (c + h * w) as f64 * 0.3
        });
        let y = batchnorm_inference(&x, &[1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], 0.0)
            .unwrap();
        assert_eq!(y, x);
        let x = Tensor::full(Shape::new(1, 1, 2, 2), 4.0);
        let y = batchnorm_inference(&x, &[2.0], &[-1.5], &[4.0], &[0.5], 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == -1.5));
        assert!(batchnorm_inference(&x, &[1.0], &[0.0], &[0.0], &[-1.0], 0.0).is_err());
    }

    #[test]
    fn broadcast_mul() {
        let x = Tensor::ones(Shape::new(2, 2, 2, 2));
        let g = Tensor::from_vec(Shape::new(2, 2, 1, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = mul(&x, &g).unwrap();
        assert_eq!(y.at(1, 0, 1, 1), 3.0);
        assert!(mul(&x, &Tensor::ones(Shape::new(1, 3, 1, 1))).is_err());
    }

    #[test]
    fn fc_with_bias() {
        let x = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1.0, 2.0]).unwrap();
        let w =
            Tensor::from_vec(Shape::new(3, 2, 1, 1), vec![1.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let b = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![0.5, 0.5, 0.5]).unwrap();
        assert_eq!(
            fully_connected(&x, &w, Some(&b)).unwrap().data(),
            &[1.5, 2.5, 3.5]
        );
    }
}

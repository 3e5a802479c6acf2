use alloc::vec::Vec;

use super::{Real, Shape, Tensor};
use crate::{Error, Result};

/// Splits `x` into `parts` equal channel groups, in order.
pub fn channel_split<T: Real>(x: &Tensor<T>, parts: usize) -> Result<Vec<Tensor<T>>> {
    let c = x.shape().channels;
    if parts == 0 || c % parts != 0 {
        return Err(Error::Indivisible {
            op: "channel_split",
            what: "channels",
            value: c,
            divisor: parts,
        });
    }
    channel_split_sizes(x, &alloc::vec![c / parts; parts])
}

/// Splits `x` into consecutive channel groups of the given sizes.
pub fn channel_split_sizes<T: Real>(x: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let s = x.shape();
    let total: usize = sizes.iter().sum();
    if total != s.channels {
        return Err(Error::mismatch(
            "channel_split",
            "sum of part sizes",
            s.channels,
            total,
        ));
    }
    if sizes.iter().any(|&k| k == 0) {
        return Err(Error::invalid("channel_split", "empty part"));
    }
    let plane = s.plane();
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &k in sizes {
        let shape = s.with_channels(k);
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..s.batch {
            let base = (n * s.channels + start) * plane;
            data.extend_from_slice(&x.data()[base..base + k * plane]);
        }
        out.push(Tensor::from_vec(shape, data)?);
        start += k;
    }
    Ok(out)
}

/// Concatenates tensors along the channel axis.
pub fn channel_concat<T: Real>(xs: &[Tensor<T>]) -> Result<Tensor<T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::invalid("channel_concat", "no tensors"))?
        .shape();
    let mut channels = 0;
    for t in xs {
        let s = t.shape();
        if s.batch != first.batch {
            return Err(Error::mismatch(
                "channel_concat",
                "batch",
                first.batch,
                s.batch,
            ));
        }
        if s.height != first.height {
            return Err(Error::mismatch(
                "channel_concat",
                "height",
                first.height,
                s.height,
            ));
        }
        if s.width != first.width {
            return Err(Error::mismatch(
                "channel_concat",
                "width",
                first.width,
                s.width,
            ));
        }
        channels += s.channels;
    }
    let shape = first.with_channels(channels);
    let plane = shape.plane();
    let mut data = Vec::with_capacity(shape.numel());
    for n in 0..shape.batch {
        for t in xs {
            let c = t.shape().channels;
            data.extend_from_slice(&t.data()[n * c * plane..(n + 1) * c * plane]);
        }
    }
    Tensor::from_vec(shape, data)
}

/// Source channel for each output channel of a shuffle with `groups` groups:
/// view channels as `(groups, C/groups)`, transpose, flatten.
pub fn shuffle_permutation(channels: usize, groups: usize) -> Result<Vec<usize>> {
    if groups == 0 || channels % groups != 0 {
        return Err(Error::Indivisible {
            op: "channel_shuffle",
            what: "channels",
            value: channels,
            divisor: groups,
        });
    }
    let per = channels / groups;
    let mut src = Vec::with_capacity(channels);
    for k in 0..per {
        for g in 0..groups {
            src.push(g * per + k);
        }
    }
    Ok(src)
}

pub fn channel_shuffle<T: Real>(x: &Tensor<T>, groups: usize) -> Result<Tensor<T>> {
    let s = x.shape();
    let src = shuffle_permutation(s.channels, groups)?;
    permute_channels(x, &src)
}

/// `out[:, i] = x[:, src[i]]`.
pub(crate) fn permute_channels<T: Real>(x: &Tensor<T>, src: &[usize]) -> Result<Tensor<T>> {
    let s = x.shape();
    let plane = s.plane();
    let mut data = Vec::with_capacity(s.numel());
    for n in 0..s.batch {
        for &c in src {
            let base = (n * s.channels + c) * plane;
            data.extend_from_slice(&x.data()[base..base + plane]);
        }
    }
    Tensor::from_vec(Shape::new(s.batch, src.len(), s.height, s.width), data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labelled(c: usize) -> Tensor<f64> {
        Tensor::from_fn(Shape::new(2, c, 2, 3), |[n, c, h, w]| {
            (n * 1000 + c * 100 + h * 10 + w) as f64
        })
    }

    fn channel_of(t: &Tensor<f64>, c: usize) -> usize {
        (t.at(0, c, 0, 0) as usize / 100) % 10
    }

    #[test]
    fn split_halves() {
        let x = labelled(4);
        let parts = channel_split(&x, 2).unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(channel_of(&parts[0], 1), 1);
        assert_eq!(channel_of(&parts[1], 0), 2);
        assert_eq!(parts[1].at(1, 1, 1, 2), 1312.0);
    }

    #[test]
    fn split_into_three() {
        let parts = channel_split(&labelled(6), 3).unwrap();
        assert!(parts.iter().all(|p| p.shape().channels == 2));
        assert_eq!(channel_of(&parts[2], 0), 4);
    }

    #[test]
    fn indivisible_split_rejected() {
        assert!(matches!(
            channel_split(&labelled(5), 2),
            Err(Error::Indivisible {
                value: 5,
                divisor: 2,
                ..
            })
        ));
    }

    #[test]
    fn concat_inverts_split() {
        let x = labelled(6);
        let parts = channel_split_sizes(&x, &[1, 3, 2]).unwrap();
        assert_eq!(channel_concat(&parts).unwrap(), x);
    }

    #[test]
    fn shuffle_order() {
        assert_eq!(shuffle_permutation(4, 2).unwrap(), [0, 2, 1, 3]);
        assert_eq!(shuffle_permutation(6, 3).unwrap(), [0, 2, 4, 1, 3, 5]);
        let y = channel_shuffle(&labelled(4), 2).unwrap();
        let order: Vec<_> = (0..4).map(|c| channel_of(&y, c)).collect();
        assert_eq!(order, [0, 2, 1, 3]);
    }

    #[test]
    fn shuffle_one_group_is_identity() {
        let x = labelled(5);
        assert_eq!(channel_shuffle(&x, 1).unwrap(), x);
    }

    #[test]
    fn swapped_factors_invert() {
        let x = labelled(8);
        let y = channel_shuffle(&channel_shuffle(&x, 2).unwrap(), 4).unwrap();
        assert_eq!(y, x);
    }
}

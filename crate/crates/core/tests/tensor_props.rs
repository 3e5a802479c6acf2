use dite_core::tensor::{
    adaptive_avg_pool, batchnorm_inference, bilinear_upsample, channel_concat, channel_shuffle,
    channel_split, conv2d, matmul, naive_conv_oracle, shuffle_permutation, softmax,
};
use dite_core::{ConvSpec, Shape, Tensor};
use proptest::prelude::*;

fn tensor(shape: Shape, seed: u64) -> Tensor<f64> {
    dite_core::autograd::probe_weights(shape, seed)
}

fn conv_case() -> impl Strategy<Value = (Shape, ConvSpec, u64)> {
    (
        1usize..3,
        1usize..4,
        1usize..4,
        1usize..4,
        1usize..5,
        0usize..3,
        1usize..3,
        3usize..9,
        3usize..9,
        any::<u64>(),
    )
        .prop_map(|(n, g, cin_g, cout_g, k, pad, stride, h, w, seed)| {
            let k = k.min(h + 2 * pad).min(w + 2 * pad);
            let spec = ConvSpec::new(g * cin_g, g * cout_g, k)
                .groups(g)
                .padding(pad)
                .stride(stride);
            (Shape::new(n, g * cin_g, h, w), spec, seed)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(160))]

    #[test]
    fn conv_matches_loop_oracle((shape, spec, seed) in conv_case()) {
        let x = tensor(shape, seed);
        let w = tensor(spec.weight_shape(), seed ^ 0x5a5a);
        let fast = conv2d(&x, &w, &spec).unwrap();
        let slow = naive_conv_oracle(&x, &w, &spec).unwrap();
        prop_assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn concat_inverts_split(c in 1usize..5, parts in 1usize..4, h in 1usize..5, seed in any::<u64>()) {
        let x = tensor(Shape::new(2, c * parts, h, 3), seed);
        let back = channel_concat(&channel_split(&x, parts).unwrap()).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn shuffle_is_an_invertible_permutation(a in 1usize..6, b in 1usize..6, seed in any::<u64>()) {
        let c = a * b;
        let mut p = shuffle_permutation(c, a).unwrap();
        p.sort_unstable();
        prop_assert_eq!(p, (0..c).collect::<Vec<_>>());
        let x = tensor(Shape::new(1, c, 2, 2), seed);
        let back = channel_shuffle(&channel_shuffle(&x, a).unwrap(), b).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn softmax_sums_to_one(c in 1usize..8, axis in 1usize..4, seed in any::<u64>()) {
        let x = dite_core::tensor::Tensor::from_fn(Shape::new(2, c, 3, 4), {
            let t = tensor(Shape::new(2, c, 3, 4), seed);
            move |[n, ch, h, w]| 20.0 * t.at(n, ch, h, w)
        });
        let y = softmax(&x, axis).unwrap();
        let s = y.shape();
        let len = s.dims()[axis];
        for n in 0..s.batch {
            for i in 0..s.numel() / s.batch / len {
                let mut idx = [n, 0, 0, 0];
                let mut rest = i;
                for d in (1..4).rev().filter(|&d| d != axis) {
                    idx[d] = rest % s.dims()[d];
                    rest /= s.dims()[d];
                }
                let total: f64 = (0..len).map(|k| { let mut j = idx; j[axis] = k; y.at(j[0], j[1], j[2], j[3]) }).sum();
                prop_assert!((total - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn pooling_constant_fields_is_exact(h in 1usize..12, w in 1usize..12, oh in 1usize..6, ow in 1usize..6, v in -5.0f64..5.0) {
        prop_assume!(oh <= h && ow <= w);
        let x = Tensor::full(Shape::new(1, 2, h, w), v);
        let y = adaptive_avg_pool(&x, (oh, ow)).unwrap();
        prop_assert!(y.data().iter().all(|&u| u == v));
        let up = bilinear_upsample(&x, (h + oh, w + ow)).unwrap();
        prop_assert!(up.data().iter().all(|&u| u == v));
    }

    #[test]
    fn operations_are_pure((shape, spec, seed) in conv_case()) {
        let x = tensor(shape, seed);
        let w = tensor(spec.weight_shape(), seed.wrapping_add(1));
        prop_assert_eq!(conv2d(&x, &w, &spec).unwrap(), conv2d(&x, &w, &spec).unwrap());
    }
}

#[test]
fn split_six_into_three() {
    let x = Tensor::from_fn(Shape::new(1, 6, 1, 1), |[_, c, _, _]| c as f64);
    let parts = channel_split(&x, 3).unwrap();
    assert_eq!(parts.len(), 3);
    for (i, p) in parts.iter().enumerate() {
        assert_eq!(p.data(), &[2.0 * i as f64, 2.0 * i as f64 + 1.0]);
    }
}

#[test]
fn ramp_pools_to_bin_means() {
    let x = Tensor::from_fn(Shape::new(1, 1, 4, 4), |[_, _, h, w]| (4 * h + w) as f64);
    let y = adaptive_avg_pool(&x, (2, 2)).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for h in 2 * i..2 * i + 2 {
                for w in 2 * j..2 * j + 2 {
                    s += x.at(0, 0, h, w);
                }
            }
            assert_eq!(y.at(0, 0, i, j), s / 4.0);
        }
    }
}

#[test]
fn upsample_then_pool_round_trips_ramps() {
    // Interior bins of a linear ramp survive; the clamped border does not.
    let x = Tensor::from_fn(Shape::new(1, 1, 6, 6), |[_, _, h, w]| {
        0.3 * h as f64 - 0.2 * w as f64
    });
    let y = adaptive_avg_pool(&bilinear_upsample(&x, (12, 12)).unwrap(), (6, 6)).unwrap();
    for h in 1..5 {
        for w in 1..5 {
            assert!((y.at(0, 0, h, w) - x.at(0, 0, h, w)).abs() < 1e-6);
        }
    }
    let c = Tensor::full(Shape::new(1, 2, 3, 5), 1.75);
    assert_eq!(
        adaptive_avg_pool(&bilinear_upsample(&c, (6, 10)).unwrap(), (3, 5)).unwrap(),
        c
    );
}

#[test]
fn matmul_matches_triple_loop() {
    let a = tensor(Shape::new(1, 1, 2, 3), 1);
    let b = tensor(Shape::new(1, 1, 3, 2), 2);
    let c = matmul(&a, &b).unwrap();
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..3 {
                s += a.at(0, 0, i, k) * b.at(0, 0, k, j);
            }
            assert_eq!(c.at(0, 0, i, j), s);
        }
    }
}

#[test]
fn batchnorm_matches_scalar_loop() {
    let x = tensor(Shape::new(2, 3, 2, 2), 3);
    let (scale, shift) = ([0.5, -1.5, 2.0], [0.1, 0.2, -0.3]);
    let (mean, var) = ([0.05, -0.2, 0.3], [0.8, 1.3, 0.25]);
    let y = batchnorm_inference(&x, &scale, &shift, &mean, &var, 1e-5).unwrap();
    for n in 0..2 {
        for c in 0..3 {
            for h in 0..2 {
                for w in 0..2 {
                    let want = scale[c] * (x.at(n, c, h, w) - mean[c]) / (var[c] + 1e-5f64).sqrt()
                        + shift[c];
                    assert!((y.at(n, c, h, w) - want).abs() < 1e-12);
                }
            }
        }
    }
    assert!(batchnorm_inference(&x, &scale, &shift, &mean, &[1.0, -1.0, 1.0], 1e-5).is_err());
}

//! Context modelling and dynamic convolution against loop oracles.

use dite_core::acm::{Acm, AcmSpec, Dcm, Shift, DCM_RATIO, GCM_RATIO};
use dite_core::autograd::{probe_weights, Eval};
use dite_core::complexity::{CostGraph, Totals};
use dite_core::dsc::{
    dka_aggregate, dka_attention, dka_overhead_flops, DkaAttention, Dsc, ScsSpec,
};
use dite_core::layers::{Init, Module};
use dite_core::tensor::context_pool;
use dite_core::{Shape, Tensor};
use proptest::prelude::*;

fn t(shape: Shape, seed: u64) -> Tensor<f64> {
    probe_weights(shape, seed)
}

fn bin(i: usize, len: usize, out: usize) -> (usize, usize) {
    ((i * len) / out, ((i + 1) * len).div_ceil(out))
}

fn pool_oracle(x: &Tensor<f64>, logits: &Tensor<f64>, out: (usize, usize)) -> Tensor<f64> {
    let s = x.shape();
    Tensor::from_fn(
        Shape::new(s.batch, s.channels, out.0, out.1),
        |[n, c, i, j]| {
            let (h0, h1) = bin(i, s.height, out.0);
            let (w0, w1) = bin(j, s.width, out.1);
            let mut m = f64::NEG_INFINITY;
            for h in h0..h1 {
                for w in w0..w1 {
                    m = m.max(logits.at(n, 0, h, w));
                }
            }
            let (mut num, mut den) = (0.0, 0.0);
            for h in h0..h1 {
                for w in w0..w1 {
                    let e = (logits.at(n, 0, h, w) - m).exp();
                    num += e * x.at(n, c, h, w);
                    den += e;
                }
            }
            num / den
        },
    )
}

fn close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| (x - y).abs() <= tol * y.abs().max(1.0))
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn context_pool_matches_oracle(c in 1usize..4, h in 1usize..9, w in 1usize..9, oh in 1usize..4, ow in 1usize..4, seed in any::<u64>()) {
        prop_assume!(oh <= h && ow <= w);
        let x = t(Shape::new(2, c, h, w), seed);
        let logits = t(Shape::new(2, 1, h, w), seed ^ 7).map(|v| 8.0 * v);
        let y = context_pool(&x, &logits, (oh, ow)).unwrap();
        prop_assert!(close(&y, &pool_oracle(&x, &logits, (oh, ow)), 1e-12));
    }

    #[test]
    fn mask_weights_form_a_simplex(h in 1usize..9, w in 1usize..9, oh in 1usize..4, ow in 1usize..4, seed in any::<u64>()) {
        prop_assume!(oh <= h && ow <= w);
        // Pooling a field of ones sums the mask weights of each bin; a
        // ramp stays within the bin's range (convex combination).
        let logits = t(Shape::new(1, 1, h, w), seed).map(|v| 30.0 * v);
        let ones = Tensor::ones(Shape::new(1, 1, h, w));
        let y = context_pool(&ones, &logits, (oh, ow)).unwrap();
        prop_assert!(y.data().iter().all(|v| (v - 1.0).abs() < 1e-12));
        let ramp = Tensor::from_fn(Shape::new(1, 1, h, w), |[_, _, i, j]| (i * w + j) as f64);
        let y = context_pool(&ramp, &logits, (oh, ow)).unwrap();
        for i in 0..oh {
            for j in 0..ow {
                let (h0, h1) = bin(i, h, oh);
                let (w0, w1) = bin(j, w, ow);
                let lo = (h0 * w + w0) as f64;
                let hi = ((h1 - 1) * w + w1 - 1) as f64;
                let v = y.at(0, 0, i, j);
                prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
            }
        }
    }

    #[test]
    fn dsc_preserves_shape(gi in 0usize..3, n in 1usize..5, per in 1usize..3, hw in 3usize..8, seed in any::<u64>()) {
        let groups = [1, 2, 4][gi];
        let c = groups * per * 2;
        let dsc = Dsc::<f64>::new(&mut Init::new(seed), "dsc", c, groups, n).unwrap();
        let x = t(Shape::new(1, c, hw, hw + 1), seed);
        let y = dsc.forward(&mut Eval::new(), &x).unwrap();
        prop_assert_eq!(y.shape(), x.shape());
        prop_assert!(y.all_finite());
    }
}

#[test]
fn global_acm_matches_composition() {
    let c = 16;
    let mut init = Init::new(3);
    let mut acm = Acm::<f64>::global(&mut init, "gcm", c, GCM_RATIO).unwrap();
    acm.visit_mut(&mut |p| {
        if p.trainable() {
            let shape = p.shape();
            p.value = t(shape, p.numel() as u64 + 11);
        }
    });
    let x = t(Shape::new(2, c, 5, 6), 4);
    let y = acm.forward(&mut Eval::new(), &x).unwrap();

    let hidden = c / GCM_RATIO;
    let (mw, mb) = (
        &acm.pool.mask.weight.value,
        acm.pool.mask.bias.as_ref().unwrap().value.data()[0],
    );
    let sh = &acm.shift;
    for n in 0..2 {
        let mut logits = vec![];
        for h in 0..5 {
            for w in 0..6 {
                logits.push(
                    mb + (0..c)
                        .map(|k| mw.at(0, k, 0, 0) * x.at(n, k, h, w))
                        .sum::<f64>(),
                );
            }
        }
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        let pooled: Vec<f64> = (0..c)
            .map(|k| (0..30).map(|i| e[i] / z * x.at(n, k, i / 6, i % 6)).sum())
            .collect();
        let rb = sh.reduce.bias.as_ref().unwrap().value.data();
        let eb = sh.expand.bias.as_ref().unwrap().value.data();
        let bn = &sh.bn;
        let hid: Vec<f64> = (0..hidden)
            .map(|o| {
                let v = rb[o]
                    + (0..c)
                        .map(|k| sh.reduce.weight.value.at(o, k, 0, 0) * pooled[k])
                        .sum::<f64>();
                let v = bn.scale.value.data()[o] * (v - bn.mean.value.data()[o])
                    / (bn.var.value.data()[o] + 1e-5).sqrt()
                    + bn.shift.value.data()[o];
                v.max(0.0)
            })
            .collect();
        for k in 0..c {
            let ctx = eb[k]
                + (0..hidden)
                    .map(|o| sh.expand.weight.value.at(k, o, 0, 0) * hid[o])
                    .sum::<f64>();
            for h in 0..5 {
                for w in 0..6 {
                    let want = x.at(n, k, h, w) * sigmoid(ctx);
                    assert!((y.at(n, k, h, w) - want).abs() < 1e-12, "{n} {k} {h} {w}");
                }
            }
        }
    }
}

#[test]
fn shift_commutes_with_spatial_permutation() {
    let mut init = Init::new(5);
    let shift = Shift::<f64>::new(&mut init, "shift", 8, 2).unwrap();
    let x = t(Shape::new(1, 8, 3, 4), 6);
    let flip =
        |a: &Tensor<f64>| Tensor::from_fn(a.shape(), |[n, c, h, w]| a.at(n, c, 2 - h, 3 - w));
    let a = flip(&shift.forward(&mut Eval::new(), &x).unwrap());
    let b = shift.forward(&mut Eval::new(), &flip(&x)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn general_acm_upsamples_context() {
    let mut init = Init::new(8);
    let acm = Acm::<f64>::new(&mut init, "acm", AcmSpec::new(8, (2, 3), 4).unwrap()).unwrap();
    let x = t(Shape::new(1, 8, 6, 9), 9);
    let y = acm.forward(&mut Eval::new(), &x).unwrap();
    assert_eq!(y.shape(), x.shape());
    // Gates are strictly between zero and one.
    for (a, b) in y.data().iter().zip(x.data()) {
        assert!(a.abs() <= b.abs() && a * b >= 0.0);
    }
}

#[test]
fn dense_context_shapes_and_zero_shift() {
    let widths = [8, 16, 32];
    let mut dcm = Dcm::<f64>::new(&mut Init::new(1), "dcm", &widths, DCM_RATIO).unwrap();
    let xs: Vec<_> = widths
        .iter()
        .enumerate()
        .map(|(k, &c)| t(Shape::new(1, c, 16 >> k, 12 >> k), k as u64))
        .collect();
    let ys = dcm.forward(&mut Eval::new(), &xs).unwrap();
    for (x, y) in xs.iter().zip(&ys) {
        assert_eq!(x.shape(), y.shape());
    }
    dcm.fill_matching("shift.expand", 0.0);
    let ys = dcm.forward(&mut Eval::new(), &xs).unwrap();
    for (x, y) in xs.iter().zip(&ys) {
        assert_eq!(*y, x.map(|v| 0.5 * v));
    }
    // A single branch degenerates to global modelling without pooling.
    let one = Dcm::<f64>::new(&mut Init::new(1), "dcm", &[16], DCM_RATIO).unwrap();
    assert!(one.pools.is_empty());
    let x = t(Shape::new(1, 16, 4, 4), 3);
    assert_eq!(
        one.forward(&mut Eval::new(), std::slice::from_ref(&x))
            .unwrap()[0]
            .shape(),
        x.shape()
    );
}

#[test]
fn aggregation_is_linear() {
    let bank = t(Shape::new(3 * 4, 1, 5, 5), 1);
    let a = [0.2, -0.7, 1.3];
    let w = dka_aggregate(&bank, &a).unwrap();
    assert_eq!(w.shape(), Shape::new(4, 1, 5, 5));
    let per = 4 * 25;
    for (i, v) in w.data().iter().enumerate() {
        let want: f64 = (0..3).map(|k| a[k] * bank.data()[k * per + i]).sum();
        assert!((v - want).abs() < 1e-14);
    }
    let b = [1.0, 2.0, -0.5];
    let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
    let lhs = dka_aggregate(&bank, &sum).unwrap();
    let rhs = dka_aggregate(&bank, &a)
        .unwrap()
        .zip_map(&dka_aggregate(&bank, &b).unwrap(), |x, y| x + y)
        .unwrap();
    assert!(close(&lhs, &rhs, 1e-14));
}

#[test]
fn attention_depends_on_input() {
    let att = DkaAttention::<f64>::new(&mut Init::new(2), "attention", 16, 4).unwrap();
    let a = dka_attention(&t(Shape::new(1, 16, 4, 4), 1), &att).unwrap();
    let b = dka_attention(&t(Shape::new(1, 16, 4, 4), 2), &att).unwrap();
    assert_eq!(a.shape(), Shape::new(1, 4, 1, 1));
    assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    assert!(a.max_abs_diff(&b) > 1e-6);
}

#[test]
fn zero_attention_with_doubled_delta_is_identity() {
    let mut dsc = Dsc::<f64>::new(&mut Init::new(4), "dsc", 8, 1, 1).unwrap();
    dsc.fill_matching("attention.fc2", 0.0);
    let bank = &mut dsc.banks[0].value;
    bank.data_mut().iter_mut().for_each(|v| *v = 0.0);
    for c in 0..8 {
        bank.set(c, 0, 1, 1, 2.0);
    }
    let x = t(Shape::new(1, 8, 5, 5), 3);
    assert_eq!(dsc.forward(&mut Eval::new(), &x).unwrap(), x);
}

#[test]
fn batched_dsc_matches_per_sample() {
    let dsc = Dsc::<f64>::new(&mut Init::new(6), "dsc", 8, 2, 3).unwrap();
    let x = t(Shape::new(3, 8, 6, 5), 1);
    let y = dsc.forward(&mut Eval::new(), &x).unwrap();
    for n in 0..3 {
        let yi = dsc
            .forward(&mut Eval::new(), &x.batch_item(n).unwrap())
            .unwrap();
        assert_eq!(y.batch_item(n).unwrap(), yi);
    }
}

#[test]
fn scs_parameters_match_analyzer() {
    for (c, groups, n) in [(40, 1, 4), (80, 2, 2), (160, 4, 1), (20, 2, 3)] {
        let scs = ScsSpec::new(c, groups).unwrap();
        let ks = scs.kernel_sizes();
        assert_eq!(ks, (0..groups).map(|i| 2 * i + 3).collect::<Vec<_>>());
        assert_eq!(
            scs.params(),
            (0..groups)
                .map(|i| (c / groups) * ks[i] * ks[i])
                .sum::<usize>()
        );
        let dsc = Dsc::<f32>::new(&mut Init::new(1), "dsc", c, groups, n).unwrap();
        let banks: usize = dsc.banks.iter().map(|b| b.numel()).sum();
        assert_eq!(banks, n * scs.params());
        let mut g = CostGraph::new();
        let x = g.input(Shape::new(1, c, 16, 12));
        dsc.forward(&mut g, &x).unwrap();
        assert_eq!(Totals::of(g.nodes()).params, dsc.num_params() as u64);
    }
}

#[test]
fn dka_overhead_formula() {
    assert_eq!(dka_overhead_flops(64, 8, 8, 4), 64 * 64 + 64 * 64 / 4 + 64);
    assert_eq!(dka_overhead_flops(32, 1, 1, 1), 32 + 256 + 8);
}

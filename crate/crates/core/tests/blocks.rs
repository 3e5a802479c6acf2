use dite_core::autograd::{probe_weights, Eval};
use dite_core::blocks::{BlockOptions, DgcBlock, DmcBlock, Fusion, Transition};
use dite_core::layers::{Init, Module};
use dite_core::{Shape, Tensor};

fn t(shape: Shape, seed: u64) -> Tensor<f64> {
    probe_weights(shape, seed)
}

fn inputs(widths: &[usize], h: usize, w: usize) -> Vec<Tensor<f64>> {
    widths
        .iter()
        .enumerate()
        .map(|(k, &c)| t(Shape::new(1, c, h >> k, w >> k), 40 + k as u64))
        .collect()
}

#[test]
fn dmc_passes_the_passive_half_through() {
    for opts in [
        BlockOptions::default(),
        BlockOptions {
            acm: false,
            dsc: false,
            ..Default::default()
        },
    ] {
        let widths = [8, 16, 32];
        let dmc = DmcBlock::<f64>::new(
            &mut Init::new(2),
            "dmc",
            &widths,
            &[1, 2, 4],
            &[4, 2, 1],
            &opts,
        )
        .unwrap();
        let xs = inputs(&widths, 16, 12);
        let ys = dmc.forward(&mut Eval::new(), &xs).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let s = x.shape();
            assert_eq!(y.shape(), s);
            // Shuffling [passive, active] with two groups interleaves them.
            for k in 0..s.channels / 2 {
                for h in 0..s.height {
                    for w in 0..s.width {
                        assert_eq!(y.at(0, 2 * k, h, w), x.at(0, k, h, w));
                    }
                }
            }
        }
    }
}

#[test]
fn single_branch_dmc_with_neutral_gates_quarters_the_active_half() {
    let c = 16;
    let mut dmc = DmcBlock::<f64>::new(
        &mut Init::new(3),
        "dmc",
        &[c],
        &[1],
        &[1],
        &BlockOptions::default(),
    )
    .unwrap();
    dmc.fill_matching("shift.expand", 0.0);
    dmc.fill_matching("attention.fc2", 0.0);
    dmc.fill_matching("bank0", 0.0);
    dmc.visit_mut(&mut |p| {
        if p.name().ends_with("bank0") {
            for k in 0..c / 2 {
                p.value.set(k, 0, 1, 1, 2.0);
            }
        }
    });
    let x = t(Shape::new(1, c, 6, 5), 1);
    let y = dmc
        .forward(&mut Eval::new(), std::slice::from_ref(&x))
        .unwrap()
        .remove(0);
    let bn = 1.0 / (1.0f64 + 1e-5).sqrt();
    for k in 0..c / 2 {
        for h in 0..6 {
            for w in 0..5 {
                let want = 0.25 * bn * x.at(0, c / 2 + k, h, w);
                assert!((y.at(0, 2 * k + 1, h, w) - want).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn dgc_aggregates_five_kernels() {
    let dgc = DgcBlock::<f64>::new(&mut Init::new(1), "dgc", 8, 8, 4, 8).unwrap();
    let x = t(Shape::new(1, 8, 16, 12), 2);
    let mut g = Eval::new();
    let y = dgc.forward(&mut g, &x).unwrap();
    assert_eq!(g.aggregations(), 5);
    assert_eq!(dgc.dynamic_convs().len(), 5);
    assert_eq!(y.shape(), Shape::new(1, 8, 8, 6));
    assert!(DgcBlock::<f64>::new(&mut Init::new(1), "dgc", 7, 8, 4, 8).is_err());
}

#[test]
fn fusion_has_n_squared_paths() {
    for n in 1..=4 {
        let widths: Vec<usize> = (0..n).map(|k| 8 << k).collect();
        assert_eq!(
            Fusion::<f32>::new(&mut Init::new(0), "fusion", &widths)
                .unwrap()
                .path_count(),
            n * n
        );
    }
}

#[test]
fn fusion_without_cross_paths_is_identity() {
    let widths = [4, 8, 16, 32];
    let mut fusion = Fusion::<f64>::new(&mut Init::new(9), "fusion", &widths).unwrap();
    let xs = inputs(&widths, 16, 16);
    let ys = fusion.forward(&mut Eval::new(), &xs).unwrap();
    assert!(xs.iter().zip(&ys).any(|(x, y)| x != y));
    fusion.fill_matching(".from", 0.0);
    let ys = fusion.forward(&mut Eval::new(), &xs).unwrap();
    assert_eq!(xs, ys);
}

#[test]
fn transition_adds_a_half_resolution_branch() {
    let tr = Transition::<f64>::new(&mut Init::new(1), "transition", &[32], &[40, 80]).unwrap();
    let ys = tr
        .forward(&mut Eval::new(), &[t(Shape::new(1, 32, 16, 12), 1)])
        .unwrap();
    assert_eq!(ys[0].shape(), Shape::new(1, 40, 16, 12));
    assert_eq!(ys[1].shape(), Shape::new(1, 80, 8, 6));
    let tr =
        Transition::<f64>::new(&mut Init::new(1), "transition", &[40, 80], &[40, 80, 160]).unwrap();
    assert!(tr.adapt.iter().all(Option::is_none));
    let ys = tr
        .forward(&mut Eval::new(), &inputs(&[40, 80], 16, 12))
        .unwrap();
    assert_eq!(ys[2].shape(), Shape::new(1, 160, 4, 3));
}

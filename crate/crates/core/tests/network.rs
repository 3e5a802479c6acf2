use dite_core::autograd::{probe_weights, Eval};
use dite_core::complexity::{Category, CostGraph};
use dite_core::layers::Module;
use dite_core::network::{
    analyze, export_summary, sweep_hyperparams, Model, ModelConfig, DEFAULT_SEED,
};
use dite_core::{Shape, Tensor};

fn image(h: usize, w: usize, seed: u64) -> Tensor<f32> {
    probe_weights(Shape::new(1, 3, h, w), seed)
}

#[test]
fn backbone_output_is_a_quarter_of_the_input() {
    let model = Model::<f32>::build(&ModelConfig::dite18(), DEFAULT_SEED).unwrap();
    for (h, w) in [(256, 192), (256, 256), (384, 288), (64, 32)] {
        let mut g = CostGraph::new();
        let x = g.input(Shape::new(1, 3, h, w));
        let y = model.forward(&mut g, &x).unwrap();
        assert_eq!(y.shape(), Shape::new(1, 40, h / 4, w / 4));
        let stem = g
            .nodes()
            .iter()
            .rev()
            .find(|n| n.name.starts_with("stem."))
            .unwrap();
        assert_eq!((stem.output.height, stem.output.width), (h / 4, w / 4));
    }
    let mut g = CostGraph::new();
    let x = g.input(Shape::new(1, 3, 250, 192));
    assert!(model.forward(&mut g, &x).is_err());
}

#[test]
fn branch_widths_and_resolutions() {
    for cfg in [
        ModelConfig::dite18(),
        ModelConfig::dite30(),
        ModelConfig::tiny(),
    ] {
        let model = Model::<f32>::build(&cfg, 1).unwrap();
        let (h, w) = (cfg.input[0], cfg.input[1]);
        let mut g = CostGraph::new();
        let x = g.input(Shape::new(1, 3, h, w));
        let xs = model.branches(&mut g, &x).unwrap();
        assert_eq!(xs.len(), cfg.branches());
        for (k, v) in xs.iter().enumerate() {
            assert_eq!(
                v.shape(),
                Shape::new(1, cfg.widths[0] << k, h >> (k + 2), w >> (k + 2))
            );
        }
    }
}

#[test]
fn tiny_model_runs_end_to_end() {
    let cfg = ModelConfig::tiny();
    let model = Model::<f32>::build(&cfg, 7).unwrap();
    let out = model.predict(&image(32, 32, 1)).unwrap();
    assert_eq!(out.heatmaps.shape(), Shape::new(1, 3, 8, 8));
    assert!(out.heatmaps.all_finite());
    assert_eq!(out.keypoints[0].len(), 3);
    for kp in &out.keypoints[0] {
        assert!(kp.x >= 0.0 && kp.x < 32.0 && kp.y >= 0.0 && kp.y < 32.0);
    }
    let f = model.forward(&mut Eval::new(), &image(32, 32, 1)).unwrap();
    assert_eq!(f.shape(), Shape::new(1, 4, 8, 8));
}

#[test]
fn forward_is_deterministic() {
    let cfg = ModelConfig::tiny();
    let x = image(32, 32, 3);
    let a = Model::<f32>::build(&cfg, 11).unwrap().predict(&x).unwrap();
    let b = Model::<f32>::build(&cfg, 11).unwrap().predict(&x).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.heatmaps), bits(&b.heatmaps));
    assert_eq!(a.keypoints, b.keypoints);
    let c = Model::<f32>::build(&cfg, 12).unwrap().predict(&x).unwrap();
    assert_ne!(bits(&a.heatmaps), bits(&c.heatmaps));
}

#[test]
fn summaries_list_stages_and_every_node() {
    for (cfg, stages) in [(ModelConfig::dite18(), 4), (ModelConfig::tiny(), 2)] {
        let model = Model::<f32>::build(&cfg, 1).unwrap();
        let input = (cfg.input[0], cfg.input[1]);
        let summary = export_summary(&model, input).unwrap();
        assert_eq!(summary.stages.len(), stages);
        let report = analyze(&model, input).unwrap();
        assert_eq!(summary.layers.len(), report.nodes.len());
        assert_eq!(summary.total, report.total);
    }
    let s = export_summary(
        &Model::<f32>::build(&ModelConfig::dite18(), 1).unwrap(),
        (256, 192),
    )
    .unwrap();
    assert_eq!(
        s.stages.iter().map(|s| s.modules).collect::<Vec<_>>(),
        [1, 2, 4, 2]
    );
    assert_eq!(
        s.stages.iter().map(|s| s.branches).collect::<Vec<_>>(),
        [1, 2, 3, 4]
    );
}

#[test]
fn analyzed_params_equal_allocated_params() {
    for id in [
        "dite18",
        "dite30",
        "lite18",
        "lite18+acm",
        "lite18+dsc",
        "tiny",
        "dite18+G4444+N1111",
    ] {
        let cfg = ModelConfig::from_id(id).unwrap();
        let model = Model::<f32>::build(&cfg, 1).unwrap();
        let report = analyze(&model, (cfg.input[0], cfg.input[1])).unwrap();
        assert_eq!(report.total.params, model.num_params() as u64, "{id}");
        let stages: u64 = report.by_stage.iter().map(|g| g.totals.params).sum();
        assert_eq!(stages, report.total.params, "{id}");
    }
}

#[test]
fn spatial_costs_scale_with_area() {
    let model = Model::<f32>::build(&ModelConfig::dite18(), 1).unwrap();
    let small = analyze(&model, (128, 96)).unwrap();
    let large = analyze(&model, (256, 192)).unwrap();
    assert_eq!(small.nodes.len(), large.nodes.len());
    let (mut conv_small, mut conv_large) = (0, 0);
    for (a, b) in small.nodes.iter().zip(&large.nodes) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.params, b.params);
        // Kernel aggregation produces weights, not features.
        let x = a.inputs[0];
        let spatial = x.height * x.width > 1 && a.category != Category::Aggregate;
        if spatial {
            assert_eq!(4 * a.flops, b.flops, "{}", a.name);
        }
        if a.category == Category::Conv && spatial {
            conv_small += a.flops;
            conv_large += b.flops;
        }
    }
    assert_eq!(4 * conv_small, conv_large);
}

#[test]
fn sweep_is_monotone_in_every_coordinate() {
    let grid: Vec<Vec<usize>> = [
        [1, 1, 1, 1],
        [4, 4, 2, 1],
        [1, 2, 4, 4],
        [4, 4, 4, 4],
        [1, 1, 2, 4],
        [4, 2, 1, 1],
    ]
    .iter()
    .map(|v| v.to_vec())
    .collect();
    let cells = sweep_hyperparams(&ModelConfig::dite18(), &grid, &grid, (256, 192));
    assert_eq!(cells.len(), 36);
    let le = |a: &[usize], b: &[usize]| a.iter().zip(b).all(|(x, y)| x <= y);
    for a in &cells {
        for b in &cells {
            if le(&a.groups, &b.groups) && le(&a.kernels, &b.kernels) {
                let (ta, tb) = (a.result.as_ref().unwrap(), b.result.as_ref().unwrap());
                assert!(ta.params <= tb.params, "{:?} {:?}", a, b);
                assert!(ta.flops <= tb.flops, "{:?} {:?}", a, b);
            }
        }
    }
    let bad = sweep_hyperparams(
        &ModelConfig::dite18(),
        &[vec![3, 1, 1, 1], vec![1, 1, 1, 1]],
        &[vec![1, 1, 1, 1]],
        (256, 192),
    );
    assert!(bad[0].result.is_err());
    assert!(bad[1].result.is_ok());
}

//! Probes shared by the gradient tests and the acceptance run.
#![allow(dead_code)]

use dite_core::acm::{Acm, Dcm, DCM_RATIO, GCM_RATIO};
use dite_core::autograd::{probe_loss, probe_loss_all, Differentiable, GradCheckConfig, Graph};
use dite_core::blocks::{DgcBlock, DmcBlock, Fusion, Transition};
use dite_core::dsc::Dsc;
use dite_core::layers::{Conv, Init, Module, Param};
use dite_core::network::{Model, ModelConfig};
use dite_core::{Result, Shape};

/// A layer with its inputs held as parameters, so the check also covers
/// gradients flowing back to the inputs.
pub struct Probe<L> {
    pub layer: L,
    pub inputs: Vec<Param<f64>>,
}

pub fn input(name: &str, shape: Shape, seed: u64) -> Param<f64> {
    Param::new(name, dite_core::autograd::probe_weights(shape, seed))
}

impl<L: Module<f64>> Module<f64> for Probe<L> {
    fn visit(&self, f: &mut dyn FnMut(&Param<f64>)) {
        self.inputs.iter().for_each(|p| f(p));
        self.layer.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
        self.inputs.iter_mut().for_each(|p| f(p));
        self.layer.visit_mut(f);
    }
}

macro_rules! single {
    ($ty:ty) => {
        impl Differentiable<f64> for Probe<$ty> {
            fn objective<G: Graph<f64>>(&self, g: &mut G) -> Result<G::Value> {
                let x = g.param(&self.inputs[0])?;
                let y = self.layer.forward(g, &x)?;
                probe_loss(g, &y, 99)
            }
        }
    };
}

macro_rules! multi {
    ($ty:ty) => {
        impl Differentiable<f64> for Probe<$ty> {
            fn objective<G: Graph<f64>>(&self, g: &mut G) -> Result<G::Value> {
                let xs = self
                    .inputs
                    .iter()
                    .map(|p| g.param(p))
                    .collect::<Result<Vec<_>>>()?;
                let ys = self.layer.forward(g, &xs)?;
                probe_loss_all(g, &ys, 99)
            }
        }
    };
}

single!(Conv<f64>);
single!(Dsc<f64>);
single!(Acm<f64>);
single!(DgcBlock<f64>);
multi!(Dcm<f64>);
multi!(DmcBlock<f64>);
multi!(Fusion<f64>);
multi!(Transition<f64>);

/// Moves batch-norm statistics away from the identity so their use is
/// exercised.
pub fn perturb_stats<M: Module<f64>>(m: &mut M) {
    let mut k = 0.0f64;
    m.visit_mut(&mut |p| {
        if p.name().ends_with("running_mean") {
            p.value.data_mut().iter_mut().for_each(|v| {
                k += 0.37;
                *v = 0.1 * k.sin();
            });
        } else if p.name().ends_with("running_var") {
            p.value.data_mut().iter_mut().for_each(|v| {
                k += 0.53;
                *v = 1.0 + 0.3 * k.cos().abs();
            });
        }
    });
}

pub struct EndToEnd {
    pub model: Model<f64>,
    pub x: Param<f64>,
}

impl Module<f64> for EndToEnd {
    fn visit(&self, f: &mut dyn FnMut(&Param<f64>)) {
        f(&self.x);
        self.model.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param<f64>)) {
        f(&mut self.x);
        self.model.visit_mut(f);
    }
}

impl Differentiable<f64> for EndToEnd {
    fn objective<G: Graph<f64>>(&self, g: &mut G) -> Result<G::Value> {
        let x = g.param(&self.x)?;
        let y = self.model.heatmaps(g, &x)?;
        probe_loss(g, &y, 5)
    }
}

pub fn dsc() -> Probe<Dsc<f64>> {
    let layer = Dsc::new(&mut Init::new(2), "dsc", 4, 2, 2).unwrap();
    Probe {
        layer,
        inputs: vec![input("x", Shape::new(1, 4, 6, 6), 2)],
    }
}

pub fn gcm() -> Probe<Acm<f64>> {
    let mut layer = Acm::global(&mut Init::new(4), "gcm", 4, GCM_RATIO).unwrap();
    perturb_stats(&mut layer);
    Probe {
        layer,
        inputs: vec![input("x", Shape::new(1, 4, 6, 6), 4)],
    }
}

pub fn dcm() -> Probe<Dcm<f64>> {
    let mut layer = Dcm::new(&mut Init::new(6), "dcm", &[2, 4, 8], DCM_RATIO).unwrap();
    perturb_stats(&mut layer);
    let inputs = vec![
        input("x0", Shape::new(1, 2, 8, 8), 60),
        input("x1", Shape::new(1, 4, 4, 4), 61),
        input("x2", Shape::new(1, 8, 2, 2), 62),
    ];
    Probe { layer, inputs }
}

pub fn dgc() -> Probe<DgcBlock<f64>> {
    let mut layer = DgcBlock::new(&mut Init::new(7), "dgc", 4, 4, 2, GCM_RATIO).unwrap();
    perturb_stats(&mut layer);
    Probe {
        layer,
        inputs: vec![input("x", Shape::new(1, 4, 8, 8), 7)],
    }
}

/// Tiny two-stage model with its input as a parameter.
pub fn end_to_end() -> EndToEnd {
    let model = Model::build(&ModelConfig::tiny(), 12).unwrap();
    let x = Param::new(
        "x",
        dite_core::autograd::probe_weights(Shape::new(1, 3, 32, 32), 12),
    );
    EndToEnd { model, x }
}

/// Settings of the end-to-end check: the model has too many scalars to
/// perturb every one.
pub fn end_to_end_config() -> GradCheckConfig {
    GradCheckConfig::default().tol(1e-3).sample(24)
}

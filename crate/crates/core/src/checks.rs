//! Finite-difference suite over the building blocks and a tiny model, in
//! double precision.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::acm::{Acm, Dcm, DCM_RATIO, GCM_RATIO};
use crate::autograd::{
    finite_diff_check, probe_loss_all, probe_weights, Differentiable, GradCheckConfig,
    GradCheckReport, Graph,
};
use crate::blocks::{BlockOptions, DgcBlock, DmcBlock, Fusion};
use crate::dsc::Dsc;
use crate::layers::{Init, Module, Param};
use crate::network::{Model, ModelConfig};
use crate::{Result, Shape};

/// Operator tolerance.
pub const OP_TOL: f64 = 1e-4;
/// End-to-end tolerance.
pub const MODEL_TOL: f64 = 1e-3;

trait Layer {
    fn run<G: Graph<f64>>(&self, g: &mut G, xs: &[G::Value]) -> Result<Vec<G::Value>>;
}

macro_rules! one {
    ($ty:ty) => {
        impl Layer for $ty {
            fn run<G: Graph<f64>>(&self, g: &mut G, xs: &[G::Value]) -> Result<Vec<G::Value>> {
                Ok(vec![self.forward(g, &xs[0])?])
            }
        }
    };
}

macro_rules! many {
    ($ty:ty) => {
        impl Layer for $ty {
            fn run<G: Graph<f64>>(&self, g: &mut G, xs: &[G::Value]) -> Result<Vec<G::Value>> {
                self.forward(g, xs)
            }
        }
    };
}

one!(Dsc<f64>);
one!(Acm<f64>);
one!(DgcBlock<f64>);
many!(Dcm<f64>);
many!(DmcBlock<f64>);
many!(Fusion<f64>);

impl Layer for Model<f64> {
    fn run<G: Graph<f64>>(&self, g: &mut G, xs: &[G::Value]) -> Result<Vec<G::Value>> {
        Ok(vec![self.heatmaps(g, &xs[0])?])
    }
}

/// A layer with its inputs held as parameters.
struct Probe<L> {
    layer: L,
    inputs: Vec<Param<f64>>,
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

impl<L: Layer + Module<f64>> Differentiable<f64> for Probe<L> {
    fn objective<G: Graph<f64>>(&self, g: &mut G) -> Result<G::Value> {
        let xs = self
            .inputs
            .iter()
            .map(|p| g.param(p))
            .collect::<Result<Vec<_>>>()?;
        let ys = self.layer.run(g, &xs)?;
        probe_loss_all(g, &ys, 99)
    }
}

fn inputs(shapes: &[Shape], seed: u64) -> Vec<Param<f64>> {
    shapes
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            Param::new(
                alloc::format!("input{k}"),
                probe_weights(s, seed + k as u64),
            )
        })
        .collect()
}

/// Moves normalisation statistics off the identity.
fn perturb_stats<M: Module<f64>>(m: &mut M) {
    let mut k = 0.0f64;
    m.visit_mut(&mut |p| {
        if p.name().ends_with("running_mean") {
            p.value.data_mut().iter_mut().for_each(|v| {
                k += 0.37;
                *v = 0.1 * Float::sin(k);
            });
        } else if p.name().ends_with("running_var") {
            p.value.data_mut().iter_mut().for_each(|v| {
                k += 0.53;
                *v = 1.0 + 0.3 * Float::abs(Float::cos(k));
            });
        }
    });
}

#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

fn run<L: Layer + Module<f64>>(
    name: &str,
    mut layer: L,
    shapes: &[Shape],
    seed: u64,
    cfg: GradCheckConfig,
) -> Result<SuiteEntry> {
    perturb_stats(&mut layer);
    let mut probe = Probe {
        layer,
        inputs: inputs(shapes, seed),
    };
    Ok(SuiteEntry {
        name: name.to_string(),
        report: finite_diff_check(&mut probe, cfg)?,
    })
}

/// Checks DSC, GCM, DCM, DGC, a DMC block, fusion and the tiny model.
pub fn gradient_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let op = GradCheckConfig::default().tol(OP_TOL);
    let init = &mut Init::new(seed);
    let s = Shape::new;
    let three = [s(1, 2, 8, 8), s(1, 4, 4, 4), s(1, 8, 2, 2)];
    let two = [s(1, 4, 6, 6), s(1, 8, 3, 3)];
    let opts = BlockOptions::default();
    let model = Model::build(&ModelConfig::tiny(), seed)?;
    Ok(vec![
        run(
            "dsc",
            Dsc::new(init, "dsc", 4, 2, 2)?,
            &[s(1, 4, 6, 6)],
            seed,
            op,
        )?,
        run(
            "gcm",
            Acm::global(init, "gcm", 4, GCM_RATIO)?,
            &[s(1, 4, 6, 6)],
            seed,
            op,
        )?,
        run(
            "dcm",
            Dcm::new(init, "dcm", &[2, 4, 8], DCM_RATIO)?,
            &three,
            seed,
            op,
        )?,
        run(
            "dgc",
            DgcBlock::new(init, "dgc", 4, 4, 2, GCM_RATIO)?,
            &[s(1, 4, 8, 8)],
            seed,
            op,
        )?,
        run(
            "dmc",
            DmcBlock::new(init, "dmc", &[4, 8], &[1, 2], &[2, 2], &opts)?,
            &two,
            seed,
            op,
        )?,
        run(
            "fusion",
            Fusion::new(init, "fusion", &[2, 4, 8])?,
            &three,
            seed,
            op,
        )?,
        run(
            "tiny model",
            model,
            &[s(1, 3, 32, 32)],
            seed,
            GradCheckConfig::default().tol(MODEL_TOL).sample(24),
        )?,
    ])
}

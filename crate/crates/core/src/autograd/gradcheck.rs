use alloc::string::String;
use alloc::vec::Vec;

use super::{Eval, Graph, Tape};
use crate::layers::{Module, Param};
use crate::tensor::{Real, Tensor};
use crate::{Error, Result};

/// A parameterised scalar function whose parameters can be perturbed in
/// place.
pub trait Differentiable<T: Real>: Module<T> {
    fn objective<G: Graph<T>>(&self, g: &mut G) -> Result<G::Value>;
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Largest acceptable relative error.
    pub tol: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is zero are judged by absolute error.
    pub floor: f64,
    /// Check at most this many evenly spaced entries per parameter.
    pub max_per_param: Option<usize>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tol: 1e-4,
            floor: 1e-6,
            max_per_param: None,
        }
    }
}

impl GradCheckConfig {
    pub fn tol(self, tol: f64) -> Self {
        GradCheckConfig { tol, ..self }
    }

    pub fn sample(self, max_per_param: usize) -> Self {
        GradCheckConfig {
            max_per_param: Some(max_per_param),
            ..self
        }
    }
}

/// Outcome for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Some objective or gradient value was NaN or infinite.
    pub non_finite: bool,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        !self.params.is_empty()
            && self
                .params
                .iter()
                .all(|p| !p.non_finite && p.max_rel_error < self.tol)
    }

    pub fn checked(&self) -> usize {
        self.params.iter().map(|p| p.checked).sum()
    }
}

fn objective_value<T: Real, M: Differentiable<T>>(model: &M) -> Result<f64> {
    let mut g = Eval::new();
    let y: Tensor<T> = model.objective(&mut g)?;
    if y.numel() != 1 {
        return Err(Error::NotScalar { len: y.numel() });
    }
    Ok(y.data()[0].as_f64())
}

fn sample_indices(len: usize, max: Option<usize>) -> Vec<usize> {
    match max {
        Some(m) if m < len => {
            let m = m.max(1);
            (0..m).map(|i| i * len / m).collect()
        }
        _ => (0..len).collect(),
    }
}

/// Compares reverse-mode gradients of every trainable parameter against
/// central differences of the objective.
///
/// Relative error per entry is `|a − n| / max(|a|, |n|, floor)`.
pub fn finite_diff_check<T: Real, M: Differentiable<T>>(
    model: &mut M,
    cfg: GradCheckConfig,
) -> Result<GradCheckReport> {
    if !(cfg.step > 0.0) {
        return Err(Error::invalid("finite_diff_check", "step must be positive"));
    }
    let mut tape = Tape::new();
    let out = model.objective(&mut tape)?;
    let grads = tape.backward(&out)?;

    let mut analytic: Vec<(String, Option<Tensor<T>>, usize)> = Vec::new();
    model.visit(&mut |p: &Param<T>| {
        if p.trainable() {
            analytic.push((p.name().into(), grads.param(p).cloned(), p.numel()));
        }
    });

    let mut report = GradCheckReport {
        params: Vec::with_capacity(analytic.len()),
        tol: cfg.tol,
    };
    for (slot, (name, grad, numel)) in analytic.into_iter().enumerate() {
        let mut check = ParamCheck {
            name,
            checked: 0,
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            non_finite: false,
        };
        for i in sample_indices(numel, cfg.max_per_param) {
            let a = grad.as_ref().map_or(0.0, |g| g.data()[i].as_f64());
            let plus = perturbed(model, slot, i, cfg.step)?;
            let minus = perturbed(model, slot, i, -cfg.step)?;
            let n = (plus - minus) / (2.0 * cfg.step);
            check.checked += 1;
            if !a.is_finite() || !n.is_finite() {
                check.non_finite = true;
                continue;
            }
            let err = (a - n).abs() / a.abs().max(n.abs()).max(cfg.floor);
            if err >= check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = n;
            }
        }
        report.params.push(check);
    }
    Ok(report)
}

/// Objective with trainable parameter number `slot`, entry `i`, shifted by
/// `delta`; the parameter is restored afterwards.
fn perturbed<T: Real, M: Differentiable<T>>(
    model: &mut M,
    slot: usize,
    i: usize,
    delta: f64,
) -> Result<f64> {
    let mut original = None;
    shift_entry(model, slot, i, |v| {
        original = Some(v);
        T::of(v.as_f64() + delta)
    });
    let value = objective_value(model);
    let orig = original.expect("parameter slot exists");
    shift_entry(model, slot, i, |_| orig);
    value
}

fn shift_entry<T: Real, M: Module<T>>(
    model: &mut M,
    slot: usize,
    i: usize,
    mut f: impl FnMut(T) -> T,
) {
    let mut k = 0;
    model.visit_mut(&mut |p| {
        if p.trainable() {
            if k == slot {
                let d = p.value.data_mut();
                d[i] = f(d[i]);
            }
            k += 1;
        }
    });
}

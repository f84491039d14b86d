//! Central finite-difference checks of analytic gradients.

use alloc::string::String;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::geometry::ViewpointBins;
use crate::model::{Model, ModelError, ModelInput};
use crate::tensor::{Tensor, TensorError};

/// Default central-difference step.
pub const STEP: f64 = 1e-5;

/// Denominator floor of [`relative_error`]. Below it the comparison is
/// effectively absolute, so exactly-zero gradients do not divide by zero.
pub const FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let d = (analytic - numeric).abs();
    d / analytic.abs().max(numeric.abs()).max(FLOOR)
}

/// Worst element found by a check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst_name: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradCheck {
    fn new() -> Self {
        Self {
            checked: 0,
            max_rel_err: 0.0,
            worst_name: String::new(),
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
        }
    }

    fn record(&mut self, name: &str, index: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        let e = relative_error(analytic, numeric);
        if e > self.max_rel_err || self.checked == 1 {
            self.max_rel_err = e;
            self.worst_name = name.into();
            self.worst_index = index;
            self.analytic = analytic;
            self.numeric = numeric;
        }
    }
}

/// Checks every element of every input of a scalar-valued graph function.
/// `build` records the function on a fresh graph given one parameter var per
/// input tensor.
pub fn check_graph<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |ts: &[Tensor]| -> Result<f64, TensorError> {
        let mut g = Graph::new();
        let vars = ts.iter().map(|t| g.input(t.clone())).collect::<Result<Vec<_>, _>>()?;
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).data()[0])
    };
    let mut g = Graph::new();
    let vars = inputs.iter().map(|t| g.param(t.clone())).collect::<Result<Vec<_>, _>>()?;
    let out = build(&mut g, &vars)?;
    g.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|v| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    let mut report = GradCheck::new();
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let x = t.data()[i];
            work[k].data_mut()[i] = x + h;
            let up = eval(&work)?;
            work[k].data_mut()[i] = x - h;
            let down = eval(&work)?;
            work[k].data_mut()[i] = x;
            let a = analytic[k].get(i).copied().unwrap_or(0.0);
            report.record(&alloc::format!("input{k}"), i, a, (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}

/// Checks every parameter of `model` on one instance against the summed
/// per-angle loss. Parameters the pass does not touch must have a zero
/// numeric gradient.
pub fn check_model(
    model: &Model,
    input: &ModelInput<'_>,
    target: ViewpointBins,
    h: f64,
) -> Result<GradCheck, ModelError> {
    let (_, grads) = model.loss_and_gradients(input, target)?;
    let mut work = model.clone();
    let mut report = GradCheck::new();
    let names: Vec<String> = model.params.names().map(String::from).collect();
    for name in &names {
        let n = model.params.get(name).expect("listed").len();
        for i in 0..n {
            let x = model.params.get(name).expect("listed").data()[i];
            work.params.get_mut(name).expect("listed").data_mut()[i] = x + h;
            let up = work.loss(input, target)?;
            work.params.get_mut(name).expect("listed").data_mut()[i] = x - h;
            let down = work.loss(input, target)?;
            work.params.get_mut(name).expect("listed").data_mut()[i] = x;
            let a = grads.get(name).map_or(0.0, |g| g[i]);
            report.record(name, i, a, (up - down) / (2.0 * h));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_error(2.0, 2.0), 0.0);
        assert_eq!(relative_error(1.0, 0.5), 0.5);
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert!((relative_error(0.0, 1e-9) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn quadratic_passes() {
        let x = Tensor::vector(alloc::vec![0.3, -1.2, 2.0]);
        let r = check_graph(&[x], STEP, |g, v| {
            let sq = g.mul(v[0], v[0])?;
            g.sum(sq)
        })
        .unwrap();
        assert_eq!(r.checked, 3);
        assert!(r.max_rel_err < 1e-8, "{r:?}");
    }
}

//! Geometric structure-aware classification loss.
//!
//! For one angle head with logits over `n` bins and ground-truth bin `g`,
//! the loss is `-Σ_b exp(-d(b, g) / t) · log p(b)` where `p = softmax(logits)`
//! and `d` is the circular bin distance in radians. Neighbouring bins share
//! credit with the ground truth, which couples predictions of nearby views.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::autodiff::{Graph, Var};
use crate::geometry::circular_bin_distance;
use crate::tensor::TensorError;

/// Temperature at which a one-bin offset carries weight `e^-1`.
pub fn default_temperature(n: usize) -> f64 {
    2.0 * PI / n as f64
}

/// Per-bin weights `exp(-d(b, gt) / t)`.
pub fn loss_weights(gt_bin: usize, n: usize, t: f64) -> Result<Vec<f64>, TensorError> {
    if !(t > 0.0) {
        return Err(TensorError::InvalidArgument {
            op: "structure_aware_loss",
            detail: format!("temperature must be positive, got {t}"),
        });
    }
    (0..n)
        .map(|b| {
            circular_bin_distance(b, gt_bin, n)
                .map(|d| libm::exp(-d / t))
                .map_err(|e| TensorError::InvalidArgument {
                    op: "structure_aware_loss",
                    detail: format!("{e}"),
                })
        })
        .collect()
}

/// Records the loss for one head on `graph` and returns the scalar node.
pub fn structure_aware_loss(
    graph: &mut Graph,
    logits: Var,
    gt_bin: usize,
    t: f64,
) -> Result<Var, TensorError> {
    let n = graph.value(logits).len();
    let w = loss_weights(gt_bin, n, t)?;
    let logp = graph.log_softmax(logits)?;
    let s = graph.dot_const(logp, w)?;
    graph.scale(s, -1.0)
}

/// Plain cross-entropy `-log softmax(logits)[gt]`.
pub fn cross_entropy(graph: &mut Graph, logits: Var, gt_bin: usize) -> Result<Var, TensorError> {
    let logp = graph.log_softmax(logits)?;
    let p = graph.pick(logp, gt_bin)?;
    graph.scale(p, -1.0)
}

/// The loss evaluated directly on a slice of logits, without a graph.
pub fn structure_aware_loss_value(logits: &[f64], gt_bin: usize, t: f64) -> Result<f64, TensorError> {
    let w = loss_weights(gt_bin, logits.len(), t)?;
    let logp = crate::autodiff::log_softmax(logits);
    let mut s = 0.0;
    for (a, b) in w.iter().zip(&logp) {
        s += a * b;
    }
    Ok(-s)
}

/// Smallest attainable loss for one head: reached at `p = w / Σw`, so it is
/// zero only in the cross-entropy limit.
pub fn loss_floor(n: usize, t: f64) -> Result<f64, TensorError> {
    let w = loss_weights(0, n, t)?;
    let total: f64 = w.iter().sum();
    Ok(-w.iter().map(|wi| if *wi > 0.0 { wi * libm::log(wi / total) } else { 0.0 }).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn floor_is_attained_at_normalized_weights() {
        let (n, t) = (24, default_temperature(24));
        let w = loss_weights(5, n, t).unwrap();
        let logits: Vec<f64> = w.iter().map(|x| libm::log(*x)).collect();
        let at = structure_aware_loss_value(&logits, 5, t).unwrap();
        assert!((at - loss_floor(n, t).unwrap()).abs() < 1e-12);
        let mut worse = logits.clone();
        worse[5] += 0.1;
        assert!(structure_aware_loss_value(&worse, 5, t).unwrap() > at);
        assert!(loss_floor(n, 1e-6).unwrap().abs() < 1e-12);
    }

    #[test]
    fn rejects_non_positive_temperature() {
        assert!(loss_weights(0, 8, 0.0).is_err());
        assert!(loss_weights(0, 8, -1.0).is_err());
        assert!(loss_weights(8, 8, 1.0).is_err());
    }

    #[test]
    fn default_temperature_gives_e_inverse_at_one_bin() {
        let w = loss_weights(3, 24, default_temperature(24)).unwrap();
        assert!((w[4] - libm::exp(-1.0)).abs() < 1e-15);
        assert!((w[2] - libm::exp(-1.0)).abs() < 1e-15);
        assert_eq!(w[3], 1.0);
    }

    #[test]
    fn tiny_temperature_is_cross_entropy() {
        let logits = Tensor::vector((0..24).map(|i| (i as f64 * 0.37).sin()).collect());
        for gt in [0, 5, 23] {
            let mut g = Graph::new();
            let l = g.param(logits.clone()).unwrap();
            let a = structure_aware_loss(&mut g, l, gt, 1e-6).unwrap();
            let b = cross_entropy(&mut g, l, gt).unwrap();
            assert_eq!(g.value(a).data()[0].to_bits(), g.value(b).data()[0].to_bits());
        }
    }

    #[test]
    fn graph_and_direct_values_agree() {
        let logits: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let mut g = Graph::new();
        let l = g.param(Tensor::vector(logits.clone())).unwrap();
        let loss = structure_aware_loss(&mut g, l, 2, 0.5).unwrap();
        let direct = structure_aware_loss_value(&logits, 2, 0.5).unwrap();
        assert_eq!(g.value(loss).data()[0], direct);
    }
}

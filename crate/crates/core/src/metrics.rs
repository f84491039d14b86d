//! Accuracy at a threshold, median error, and the Acc@Thresh curve.

use alloc::vec::Vec;
use core::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("no errors to aggregate")]
    Empty,
    #[error("error {0} outside [0, pi]")]
    OutOfRange(f64),
    #[error("empty threshold grid")]
    EmptyGrid,
    #[error("threshold grid must be ascending within [0, pi/4]")]
    BadGrid,
}

fn check(errors: &[f64]) -> Result<(), MetricError> {
    if errors.is_empty() {
        return Err(MetricError::Empty);
    }
    match errors.iter().find(|e| !(**e >= 0.0 && **e <= PI)) {
        Some(e) => Err(MetricError::OutOfRange(*e)),
        None => Ok(()),
    }
}

/// Fraction of errors strictly below `thresh` (radians).
pub fn acc_at(errors: &[f64], thresh: f64) -> Result<f64, MetricError> {
    check(errors)?;
    Ok(errors.iter().filter(|e| **e < thresh).count() as f64 / errors.len() as f64)
}

/// Median error in degrees; the mean of the two middle values for even counts.
pub fn med_err(errors: &[f64]) -> Result<f64, MetricError> {
    check(errors)?;
    let mut v: Vec<f64> = errors.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    };
    Ok(m.to_degrees())
}

/// `Acc@Thresh` samples and the area under them normalized by `π/4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccCurve {
    pub thresholds: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub nauc: f64,
}

/// `n + 1` equispaced thresholds on `[0, π/4]`.
pub fn default_grid(n: usize) -> Vec<f64> {
    (0..=n).map(|i| PI / 4.0 * i as f64 / n as f64).collect()
}

/// Accuracy at each grid threshold and the trapezoid area divided by `π/4`.
pub fn acc_curve_nauc(errors: &[f64], grid: &[f64]) -> Result<AccCurve, MetricError> {
    check(errors)?;
    if grid.is_empty() {
        return Err(MetricError::EmptyGrid);
    }
    let ascending = grid.windows(2).all(|w| w[0] < w[1]);
    if !ascending || grid[0] < 0.0 || grid[grid.len() - 1] > PI / 4.0 + 1e-12 {
        return Err(MetricError::BadGrid);
    }
    let accuracy: Vec<f64> = grid
        .iter()
        .map(|t| acc_at(errors, *t))
        .collect::<Result<_, _>>()?;
    let area: f64 = grid
        .windows(2)
        .zip(accuracy.windows(2))
        .map(|(t, a)| (t[1] - t[0]) * (a[0] + a[1]) / 2.0)
        .sum();
    Ok(AccCurve {
        thresholds: grid.to_vec(),
        accuracy,
        nauc: area / (PI / 4.0),
    })
}

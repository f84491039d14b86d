//! Evaluation battery: per-class and per-keypoint metrics, blank-input
//! ablations, keypoint perturbation sweeps and paired error comparisons.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{bin_center, Viewpoint, ViewpointBins};
use crate::keypoint::{perturb_keypoint, KeypointClassVector, KeypointMap};
use crate::metrics::{acc_at, acc_curve_nauc, default_grid, med_err, AccCurve, MetricError};
use crate::model::{Model, ModelError, ModelInput, ObjectClassSpec};
use crate::render::Instance;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("config/dataset mismatch: {0}")]
    Mismatch(String),
    #[error("unsupported variant: {0}")]
    Variant(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// One prediction request. `x`/`y` may differ from the instance's own
/// keypoint (perturbation); blank flags replace the map or class vector with
/// zeros.
#[derive(Debug, Clone, Copy)]
pub struct Query<'a> {
    pub instance: &'a Instance,
    pub x: usize,
    pub y: usize,
    pub blank_map: bool,
    pub blank_class: bool,
}

impl<'a> Query<'a> {
    pub fn plain(instance: &'a Instance) -> Self {
        Self {
            instance,
            x: instance.x,
            y: instance.y,
            blank_map: false,
            blank_class: false,
        }
    }
}

/// Anything that maps a query to viewpoint bins.
pub trait Predictor {
    fn n_bins(&self) -> usize;
    fn predict_bins(&self, q: &Query<'_>) -> Result<ViewpointBins, EvalError>;
}

impl Predictor for Model {
    fn n_bins(&self) -> usize {
        self.config.n_bins
    }

    fn predict_bins(&self, q: &Query<'_>) -> Result<ViewpointBins, EvalError> {
        let inst = q.instance;
        let (map, class) = self.encode_keypoint(q.x, q.y, inst.object, inst.keypoint)?;
        let map = if q.blank_map {
            KeypointMap::blank(self.config.image_size, self.config.map_kind)
        } else {
            map
        };
        let class = if q.blank_class {
            KeypointClassVector::blank(self.config.total_keypoint_classes())
        } else {
            class
        };
        let image = inst.image.to_tensor();
        let p = self.predict(&ModelInput {
            image: &image,
            map: &map,
            class: &class,
            object: inst.object,
        })?;
        Ok(p.bins)
    }
}

/// Returns the ground-truth bins; an upper bound for any classifier.
#[derive(Debug, Clone, Copy)]
pub struct PerfectPredictor {
    pub n_bins: usize,
}

impl Predictor for PerfectPredictor {
    fn n_bins(&self) -> usize {
        self.n_bins
    }

    fn predict_bins(&self, q: &Query<'_>) -> Result<ViewpointBins, EvalError> {
        Ok(q.instance.bins(self.n_bins))
    }
}

/// Geodesic error (radians) between bin-center predictions and the true angles.
pub fn instance_error(pred: ViewpointBins, gt: &Viewpoint, n: usize) -> f64 {
    crate::geometry::viewpoint_error(&pred.center(n), gt)
}

/// Largest possible error of a perfect bin prediction: half a bin per angle.
pub fn quantization_bound(n: usize) -> f64 {
    3.0 * (bin_center(0, n)).to_radians()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub count: usize,
    pub acc: f64,
    pub med_err_deg: f64,
}

impl GroupMetrics {
    fn of(errors: &[f64]) -> Result<Self, MetricError> {
        Ok(Self {
            count: errors.len(),
            acc: acc_at(errors, PI / 6.0)?,
            med_err_deg: med_err(errors)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub object: usize,
    pub name: String,
    #[serde(flatten)]
    pub metrics: GroupMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointMetrics {
    pub object: usize,
    pub keypoint: usize,
    pub name: String,
    #[serde(flatten)]
    pub metrics: GroupMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceError {
    pub id: u64,
    pub object: usize,
    pub keypoint: usize,
    pub predicted: ViewpointBins,
    /// Radians.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tag: String,
    pub n_bins: usize,
    /// Only classes with at least one instance.
    pub classes: Vec<ClassMetrics>,
    /// Mean over `classes` of per-class accuracy.
    pub mean_acc: f64,
    /// Mean over `classes` of per-class median error, degrees.
    pub mean_med_err_deg: f64,
    pub keypoints: Vec<KeypointMetrics>,
    pub curve: AccCurve,
    pub instances: Vec<InstanceError>,
}

/// Aggregates per-instance errors.
pub fn summarize(
    tag: &str,
    n_bins: usize,
    objects: &[ObjectClassSpec],
    instances: Vec<InstanceError>,
) -> Result<EvalReport, EvalError> {
    if instances.is_empty() {
        return Err(MetricError::Empty.into());
    }
    let mut by_class: Vec<Vec<f64>> = vec![Vec::new(); objects.len()];
    let mut by_kp: Vec<Vec<Vec<f64>>> = objects.iter().map(|o| vec![Vec::new(); o.keypoints.len()]).collect();
    for e in &instances {
        by_class[e.object].push(e.error);
        by_kp[e.object][e.keypoint].push(e.error);
    }
    let mut classes = Vec::new();
    for (o, errs) in by_class.iter().enumerate() {
        if !errs.is_empty() {
            classes.push(ClassMetrics {
                object: o,
                name: objects[o].name.clone(),
                metrics: GroupMetrics::of(errs)?,
            });
        }
    }
    let mut keypoints = Vec::new();
    for (o, kps) in by_kp.iter().enumerate() {
        for (k, errs) in kps.iter().enumerate() {
            if !errs.is_empty() {
                keypoints.push(KeypointMetrics {
                    object: o,
                    keypoint: k,
                    name: objects[o].keypoints[k].clone(),
                    metrics: GroupMetrics::of(errs)?,
                });
            }
        }
    }
    let nc = classes.len() as f64;
    let mean_acc = classes.iter().map(|c| c.metrics.acc).sum::<f64>() / nc;
    let mean_med_err_deg = classes.iter().map(|c| c.metrics.med_err_deg).sum::<f64>() / nc;
    let all: Vec<f64> = instances.iter().map(|e| e.error).collect();
    let curve = acc_curve_nauc(&all, &default_grid(90))?;
    Ok(EvalReport {
        tag: tag.into(),
        n_bins,
        classes,
        mean_acc,
        mean_med_err_deg,
        keypoints,
        curve,
        instances,
    })
}

fn check_instances(objects: &[ObjectClassSpec], instances: &[Instance]) -> Result<(), EvalError> {
    if instances.is_empty() {
        return Err(EvalError::Invalid("empty test set".into()));
    }
    let counts: Vec<usize> = objects.iter().map(|o| o.keypoints.len()).collect();
    for inst in instances {
        inst.validate(&counts).map_err(EvalError::Mismatch)?;
    }
    Ok(())
}

/// Knobs shared by the evaluation entry points.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EvalOptions {
    pub blank_map: bool,
    pub blank_class: bool,
}

/// Runs `predictor` on every instance and aggregates.
pub fn evaluate<P: Predictor + ?Sized>(
    predictor: &P,
    objects: &[ObjectClassSpec],
    instances: &[Instance],
    options: EvalOptions,
    tag: &str,
) -> Result<EvalReport, EvalError> {
    check_instances(objects, instances)?;
    let n = predictor.n_bins();
    let mut errors = Vec::with_capacity(instances.len());
    for inst in instances {
        let q = Query {
            blank_map: options.blank_map,
            blank_class: options.blank_class,
            ..Query::plain(inst)
        };
        let predicted = predictor.predict_bins(&q)?;
        errors.push(InstanceError {
            id: inst.id,
            object: inst.object,
            keypoint: inst.keypoint,
            predicted,
            error: instance_error(predicted, &inst.viewpoint, n),
        });
    }
    summarize(tag, n, objects, errors)
}

/// One row of the blank-input ablation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `true` when the ground-truth keypoint map is used, `false` when blank.
    pub map: bool,
    pub class: bool,
    pub classes: Vec<ClassMetrics>,
    pub mean_acc: f64,
    pub mean_med_err_deg: f64,
}

/// Evaluates a keypoint-attention model with true and blank keypoint map and
/// class vector in all four combinations. Row order: both true, map only
/// true, class only true, both blank.
pub fn ablation_eval(
    model: &Model,
    instances: &[Instance],
) -> Result<Vec<AblationRow>, EvalError> {
    if !model.variant().learns_attention() {
        return Err(EvalError::Variant(format!(
            "ablation needs learned keypoint attention, got {}",
            model.variant()
        )));
    }
    let mut rows = Vec::with_capacity(4);
    for (map, class) in [(true, true), (true, false), (false, true), (false, false)] {
        let r = evaluate(
            model,
            &model.config.objects,
            instances,
            EvalOptions {
                blank_map: !map,
                blank_class: !class,
            },
            "ablation",
        )?;
        rows.push(AblationRow {
            map,
            class,
            classes: r.classes,
            mean_acc: r.mean_acc,
            mean_med_err_deg: r.mean_med_err_deg,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    /// Perturbation standard deviation in pixels.
    pub sigma: f64,
    pub trials: usize,
    /// Mean over trials of the mean class accuracy.
    pub mean_acc: f64,
    pub mean_med_err_deg: f64,
    /// Mean class accuracy of each trial.
    pub trial_acc: Vec<f64>,
}

/// Replaces each instance's keypoint location with a Gaussian perturbation
/// (clamped to the image) and re-evaluates, `trials` times per sigma. A zero
/// sigma runs once and reproduces [`evaluate`] exactly.
pub fn sensitivity_sweep(
    model: &Model,
    instances: &[Instance],
    sigmas: &[f64],
    trials: usize,
    seed: u64,
) -> Result<Vec<SweepRow>, EvalError> {
    if !model.variant().uses_map() {
        return Err(EvalError::Variant(format!(
            "sweep needs a keypoint-map variant, got {}",
            model.variant()
        )));
    }
    if trials == 0 {
        return Err(EvalError::Invalid("trials must be positive".into()));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(EvalError::Invalid(format!("sigma {s} must be nonnegative")));
    }
    let objects = &model.config.objects;
    check_instances(objects, instances)?;
    let n = model.config.n_bins;
    let mut rows = Vec::with_capacity(sigmas.len());
    for (si, &sigma) in sigmas.iter().enumerate() {
        let runs = if sigma == 0.0 { 1 } else { trials };
        let mut trial_acc = Vec::with_capacity(runs);
        let mut trial_med = Vec::with_capacity(runs);
        for t in 0..runs {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((si as u64) << 32) | t as u64);
            let mut errors = Vec::with_capacity(instances.len());
            for inst in instances {
                let s = inst.image.size;
                let (x, y) = perturb_keypoint(inst.x, inst.y, sigma, s, &mut rng);
                let predicted = model.predict_bins(&Query {
                    x,
                    y,
                    ..Query::plain(inst)
                })?;
                errors.push(InstanceError {
                    id: inst.id,
                    object: inst.object,
                    keypoint: inst.keypoint,
                    predicted,
                    error: instance_error(predicted, &inst.viewpoint, n),
                });
            }
            let r = summarize("sweep", n, objects, errors)?;
            trial_acc.push(r.mean_acc);
            trial_med.push(r.mean_med_err_deg);
        }
        let k = runs as f64;
        let (mean_acc, mean_med_err_deg) = if runs == 1 {
            (trial_acc[0], trial_med[0])
        } else {
            (trial_acc.iter().sum::<f64>() / k, trial_med.iter().sum::<f64>() / k)
        };
        rows.push(SweepRow {
            sigma,
            trials: runs,
            mean_acc,
            mean_med_err_deg,
            trial_acc,
        });
    }
    Ok(rows)
}

/// Per-instance comparison of two reports over the same test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub count: usize,
    /// Mean of `error_a - error_b`, degrees; negative when `a` is better.
    pub mean_delta_deg: f64,
    /// Fraction of instances where `a` has strictly lower error.
    pub a_better: f64,
    pub b_better: f64,
}

pub fn paired_error_deltas(a: &EvalReport, b: &EvalReport) -> Result<PairedComparison, EvalError> {
    if a.instances.len() != b.instances.len() || a.instances.iter().zip(&b.instances).any(|(x, y)| x.id != y.id) {
        return Err(EvalError::Mismatch("paired comparison needs identical test sets".into()));
    }
    if a.instances.is_empty() {
        return Err(MetricError::Empty.into());
    }
    let n = a.instances.len() as f64;
    let (mut sum, mut wa, mut wb) = (0.0, 0usize, 0usize);
    for (x, y) in a.instances.iter().zip(&b.instances) {
        sum += (x.error - y.error).to_degrees();
        if x.error < y.error {
            wa += 1;
        } else if y.error < x.error {
            wb += 1;
        }
    }
    Ok(PairedComparison {
        count: a.instances.len(),
        mean_delta_deg: sum / n,
        a_better: wa as f64 / n,
        b_better: wb as f64 / n,
    })
}

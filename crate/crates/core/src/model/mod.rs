//! The keypoint-conditioned viewpoint network.

mod config;
mod network;
mod params;

use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use thiserror::Error;

pub use config::{ConfigIssue, ConvSpec, ModelConfig, ModelVariant, ObjectClassSpec};
pub use network::{fixed_attention_map, keypoint_stream, FixedAttention, Forward, ModelInput};
pub use params::{
    check_layout, head_bias, head_weight, init_params, parameter_layout, Gradients, Parameters,
    ANGLE_NAMES,
};

use crate::autodiff::softmax;
use crate::geometry::{Viewpoint, ViewpointBins};
use crate::keypoint::{one_hot_class, KeypointClassVector, KeypointError, KeypointMap};
use crate::objective::structure_aware_loss;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Keypoint(#[from] KeypointError),
    #[error("unknown object class {0}")]
    UnknownObject(usize),
    #[error("keypoint class {kp} is not defined for object class {obj}")]
    UnknownKeypoint { obj: usize, kp: usize },
    #[error("missing parameter `{0}`")]
    MissingParameter(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invalid config: {0}")]
    Config(String),
}

/// Attention over the attended layer's `h x w` depth-column grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMap {
    pub h: usize,
    pub w: usize,
    /// Row-major, nonnegative, summing to one.
    pub values: Vec<f64>,
}

impl WeightMap {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.w + col]
    }

    pub fn is_simplex(&self, tol: f64) -> bool {
        let sum: f64 = self.values.iter().sum();
        self.values.iter().all(|&v| v >= 0.0) && (sum - 1.0).abs() <= tol
    }
}

/// Output of [`Model::predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Per-angle probability vectors (azimuth, elevation, tilt).
    pub probabilities: [Vec<f64>; 3],
    pub bins: ViewpointBins,
    /// Bin-center angles of the argmax bins, in degrees.
    pub angles: Viewpoint,
    /// `None` for the image-only variant.
    pub weight_map: Option<WeightMap>,
}

/// Lowest index among the maxima.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Parameters,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        validate(&config)?;
        let params = init_params(&config, rng);
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: Parameters) -> Result<Self, ModelError> {
        validate(&config)?;
        check_layout(&config, &params).map_err(ModelError::Config)?;
        Ok(Self { config, params })
    }

    pub fn variant(&self) -> ModelVariant {
        self.config.variant
    }

    /// Keypoint map and one-hot class for a clicked keypoint.
    pub fn encode_keypoint(
        &self,
        x: usize,
        y: usize,
        obj: usize,
        kp: usize,
    ) -> Result<(KeypointMap, KeypointClassVector), ModelError> {
        let c = &self.config;
        if obj >= c.objects.len() {
            return Err(ModelError::UnknownObject(obj));
        }
        let global = c
            .global_keypoint_index(obj, kp)
            .ok_or(ModelError::UnknownKeypoint { obj, kp })?;
        let map = KeypointMap::new(c.map_kind, x, y, c.image_size)?;
        let class = one_hot_class(global, c.total_keypoint_classes())?;
        Ok((map, class))
    }

    /// Records a forward pass. With `trainable`, parameters are
    /// differentiable leaves.
    pub fn forward(&self, input: &ModelInput<'_>, trainable: bool) -> Result<Forward, ModelError> {
        network::forward(&self.config, &self.params, input, trainable)
    }

    pub fn logits(&self, input: &ModelInput<'_>) -> Result<[Vec<f64>; 3], ModelError> {
        let f = self.forward(input, false)?;
        Ok(f.logits.map(|v| f.graph.value(v).data().to_vec()))
    }

    /// Summed per-angle structure-aware loss and its parameter gradients.
    /// Only parameters touched by the pass appear in the gradient map.
    pub fn loss_and_gradients(
        &self,
        input: &ModelInput<'_>,
        target: ViewpointBins,
    ) -> Result<(f64, Gradients), ModelError> {
        let mut f = self.forward(input, true)?;
        let t = self.config.temperature;
        let targets = target.as_array();
        let mut total = None;
        for (angle, &bin) in targets.iter().enumerate() {
            let l = structure_aware_loss(&mut f.graph, f.logits[angle], bin, t)?;
            total = Some(match total {
                None => l,
                Some(acc) => f.graph.add(acc, l)?,
            });
        }
        let total = total.expect("three angles");
        f.graph.backward(total)?;
        let loss = f.graph.value(total).data()[0];
        let grads = f
            .params
            .iter()
            .map(|(name, v)| {
                let g = f.graph.grad(*v).expect("trainable leaf").to_vec();
                (name.clone(), g)
            })
            .collect();
        Ok((loss, grads))
    }

    /// Scalar loss without gradients.
    pub fn loss(&self, input: &ModelInput<'_>, target: ViewpointBins) -> Result<f64, ModelError> {
        let logits = self.logits(input)?;
        let mut total = 0.0;
        for (l, bin) in logits.iter().zip(target.as_array()) {
            total += crate::objective::structure_aware_loss_value(l, bin, self.config.temperature)?;
        }
        Ok(total)
    }

    pub fn predict(&self, input: &ModelInput<'_>) -> Result<Prediction, ModelError> {
        let f = self.forward(input, false)?;
        let probabilities = f.logits.map(|v| softmax(f.graph.value(v).data()));
        let bins = ViewpointBins::from_array([
            argmax(&probabilities[0]),
            argmax(&probabilities[1]),
            argmax(&probabilities[2]),
        ]);
        let weight_map = f.weight_map.map(|v| {
            let t = f.graph.value(v);
            WeightMap {
                h: t.shape()[0],
                w: t.shape()[1],
                values: t.data().to_vec(),
            }
        });
        Ok(Prediction {
            probabilities,
            bins,
            angles: bins.center(self.config.n_bins),
            weight_map,
        })
    }

    /// Convenience wrapper: encode `(x, y, kp)` and predict.
    pub fn predict_click(
        &self,
        image: &Tensor,
        x: usize,
        y: usize,
        kp: usize,
        obj: usize,
    ) -> Result<Prediction, ModelError> {
        let (map, class) = self.encode_keypoint(x, y, obj, kp)?;
        self.predict(&ModelInput {
            image,
            map: &map,
            class: &class,
            object: obj,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }
}

fn validate(config: &ModelConfig) -> Result<(), ModelError> {
    config.validate().map_err(|issues| {
        let msgs: Vec<String> = issues.iter().map(|i| alloc::format!("{i}")).collect();
        ModelError::Config(msgs.join("; "))
    })
}

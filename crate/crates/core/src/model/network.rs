//! Forward pass of the viewpoint network and its variants.
//!
//! Image stream: conv/ReLU(/pool) layers, then a rectified fully connected
//! layer producing the global image features. Keypoint stream: the keypoint
//! map is max-pooled, flattened and projected; the one-hot class is
//! projected; both feed a bias-free projection whose softmax, reshaped to the
//! attended layer's grid, weights that layer's depth columns. The weighted
//! column sum is concatenated with the image features, passed through one
//! rectified hidden layer, and classified by per-object, per-angle heads.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::config::{ModelConfig, ModelVariant};
use super::params::*;
use super::{ModelError, WeightMap};
use crate::autodiff::{Graph, Var};
use crate::keypoint::{KeypointClassVector, KeypointMap};
use crate::tensor::Tensor;

/// Which fixed attention a baseline uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedAttention {
    Gaussian,
    Uniform,
}

/// Weight map that ignores the keypoint: a centered Gaussian with standard
/// deviation `6 · h / 13`, or a box filter. Both are normalized to sum 1.
pub fn fixed_attention_map(kind: FixedAttention, h: usize, w: usize) -> WeightMap {
    let values = match kind {
        FixedAttention::Uniform => alloc::vec![1.0 / (h * w) as f64; h * w],
        FixedAttention::Gaussian => {
            let sigma = 6.0 * h as f64 / 13.0;
            let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
            let raw: Vec<f64> = (0..h * w)
                .map(|i| {
                    let (dy, dx) = ((i / w) as f64 - cy, (i % w) as f64 - cx);
                    libm::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma))
                })
                .collect();
            let z: f64 = raw.iter().sum();
            raw.into_iter().map(|v| v / z).collect()
        }
    };
    WeightMap { h, w, values }
}

/// Inputs of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    /// `[3, s, s]` image.
    pub image: &'a Tensor,
    pub map: &'a KeypointMap,
    pub class: &'a KeypointClassVector,
    pub object: usize,
}

/// A recorded forward pass.
#[derive(Debug)]
pub struct Forward {
    pub graph: Graph,
    /// Parameters registered on the graph (only those the pass touched).
    pub params: BTreeMap<String, Var>,
    pub logits: [Var; 3],
    pub weight_map: Option<Var>,
}

struct Recorder<'p> {
    graph: Graph,
    params: &'p Parameters,
    vars: BTreeMap<String, Var>,
    trainable: bool,
}

impl Recorder<'_> {
    fn p(&mut self, name: &str) -> Result<Var, ModelError> {
        if let Some(v) = self.vars.get(name) {
            return Ok(*v);
        }
        let t = self
            .params
            .get(name)
            .ok_or_else(|| ModelError::MissingParameter(name.into()))?
            .clone();
        let v = if self.trainable {
            self.graph.param(t)?
        } else {
            self.graph.input(t)?
        };
        self.vars.insert(name.into(), v);
        Ok(v)
    }
}

/// Keypoint stream: returns `(keypoint features [d], weight map [h, w])`.
///
/// The three projections have no bias, so blank map and class inputs give
/// all-zero logits and therefore the uniform weight map.
pub fn keypoint_stream(
    graph: &mut Graph,
    config: &ModelConfig,
    params: &BTreeMap<String, Var>,
    map: &KeypointMap,
    class: &KeypointClassVector,
    conv_acts: Var,
) -> Result<(Var, Var), ModelError> {
    let get = |name: &str| {
        params
            .get(name)
            .copied()
            .ok_or_else(|| ModelError::MissingParameter(name.into()))
    };
    let variant = config.variant;
    let s = config.image_size;
    let mut feats: Option<Var> = None;
    if variant.uses_map() {
        if map.size != s {
            return Err(ModelError::Input(format!(
                "keypoint map is {0}x{0}, model expects {s}x{s}",
                map.size
            )));
        }
        let m = graph.input(Tensor::new(&[1, s, s], map.grid.clone())?)?;
        let pooled = graph.maxpool2d(m, config.map_pool, config.map_pool)?;
        let flat = graph.flatten(pooled)?;
        feats = Some(graph.linear(flat, get(KP_MAP_WEIGHT)?, None)?);
    }
    if variant.uses_class() {
        let total = config.total_keypoint_classes();
        if class.len() != total {
            return Err(ModelError::Input(format!(
                "class vector has length {}, model expects {total}",
                class.len()
            )));
        }
        let c = graph.input(Tensor::vector(class.values.clone()))?;
        let gc = graph.linear(c, get(KP_CLASS_WEIGHT)?, None)?;
        feats = Some(match feats {
            Some(gm) => graph.concat(gm, gc)?,
            None => gc,
        });
    }
    let feats = feats.ok_or_else(|| {
        ModelError::Input(format!("variant {variant} has no learned attention"))
    })?;
    let logits = graph.linear(feats, get(KP_ATTENTION_WEIGHT)?, None)?;
    let soft = graph.softmax(logits)?;
    let (_, h, w) = config.attention_grid();
    let wm = graph.reshape(soft, &[h, w])?;
    let kp = graph.scale_sum(conv_acts, wm)?;
    Ok((kp, wm))
}

pub(super) fn forward(
    config: &ModelConfig,
    params: &Parameters,
    input: &ModelInput<'_>,
    trainable: bool,
) -> Result<Forward, ModelError> {
    let s = config.image_size;
    if input.image.shape() != [3, s, s] {
        return Err(ModelError::Input(format!(
            "image shape {:?}, model expects [3, {s}, {s}]",
            input.image.shape()
        )));
    }
    if input.object >= config.objects.len() {
        return Err(ModelError::UnknownObject(input.object));
    }
    let mut r = Recorder {
        graph: Graph::new(),
        params,
        vars: BTreeMap::new(),
        trainable,
    };

    let mut x = r.graph.input(input.image.clone())?;
    let mut attended = None;
    let last = config.convs.len() - 1;
    for (i, spec) in config.convs.iter().enumerate() {
        let k = r.p(&conv_weight(i))?;
        let b = r.p(&conv_bias(i))?;
        x = r.graph.conv2d(x, k, Some(b), spec.stride, spec.pad)?;
        x = r.graph.relu(x)?;
        if i == last {
            attended = Some(x);
        }
        if spec.pool > 1 {
            x = r.graph.maxpool2d(x, spec.pool, spec.pool)?;
        }
    }
    let attended = attended.expect("at least one conv layer");
    let flat = r.graph.flatten(x)?;
    let (fw, fb) = (r.p(IMAGE_FC_WEIGHT)?, r.p(IMAGE_FC_BIAS)?);
    let fc = r.graph.linear(flat, fw, Some(fb))?;
    let image_features = r.graph.relu(fc)?;

    let (_, h, w) = config.attention_grid();
    let (kp_features, weight_map) = match config.variant {
        ModelVariant::ImageOnly => (None, None),
        ModelVariant::FixedGaussian | ModelVariant::FixedUniform => {
            let kind = if config.variant == ModelVariant::FixedGaussian {
                FixedAttention::Gaussian
            } else {
                FixedAttention::Uniform
            };
            let map = fixed_attention_map(kind, h, w);
            let wm = r.graph.input(Tensor::new(&[h, w], map.values)?)?;
            let kp = r.graph.scale_sum(attended, wm)?;
            (Some(kp), Some(wm))
        }
        _ => {
            if config.variant.uses_map() {
                r.p(KP_MAP_WEIGHT)?;
            }
            if config.variant.uses_class() {
                r.p(KP_CLASS_WEIGHT)?;
            }
            r.p(KP_ATTENTION_WEIGHT)?;
            let (kp, wm) = keypoint_stream(
                &mut r.graph,
                config,
                &r.vars,
                input.map,
                input.class,
                attended,
            )?;
            (Some(kp), Some(wm))
        }
    };

    let fused_in = match kp_features {
        Some(kp) => r.graph.concat(kp, image_features)?,
        None => image_features,
    };
    let (uw, ub) = (r.p(FUSE_WEIGHT)?, r.p(FUSE_BIAS)?);
    let hidden = r.graph.linear(fused_in, uw, Some(ub))?;
    let hidden = r.graph.relu(hidden)?;

    let mut logits = Vec::with_capacity(3);
    for angle in 0..3 {
        let hw = r.p(&head_weight(input.object, angle))?;
        let hb = r.p(&head_bias(input.object, angle))?;
        logits.push(r.graph.linear(hidden, hw, Some(hb))?);
    }
    Ok(Forward {
        graph: r.graph,
        params: r.vars,
        logits: [logits[0], logits[1], logits[2]],
        weight_map,
    })
}

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::window_output_len;
use crate::keypoint::MapKind;
use crate::objective::default_temperature;
use crate::render::catalog;

/// Architecture configurations compared in the evaluation battery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// Attention from keypoint map and keypoint class.
    #[default]
    ChFull,
    /// Attention from the keypoint map only.
    ChMapOnly,
    /// Attention from the keypoint class only.
    ChClassOnly,
    /// Fixed centered Gaussian attention; ignores the keypoint.
    FixedGaussian,
    /// Fixed uniform attention; ignores the keypoint.
    FixedUniform,
    /// No keypoint stream at all.
    ImageOnly,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 6] = [
        ModelVariant::ChFull,
        ModelVariant::ChMapOnly,
        ModelVariant::ChClassOnly,
        ModelVariant::FixedGaussian,
        ModelVariant::FixedUniform,
        ModelVariant::ImageOnly,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ModelVariant::ChFull => "ch_full",
            ModelVariant::ChMapOnly => "ch_map_only",
            ModelVariant::ChClassOnly => "ch_class_only",
            ModelVariant::FixedGaussian => "fixed_gaussian",
            ModelVariant::FixedUniform => "fixed_uniform",
            ModelVariant::ImageOnly => "image_only",
        }
    }

    pub fn uses_map(&self) -> bool {
        matches!(self, ModelVariant::ChFull | ModelVariant::ChMapOnly)
    }

    pub fn uses_class(&self) -> bool {
        matches!(self, ModelVariant::ChFull | ModelVariant::ChClassOnly)
    }

    /// Learned, keypoint-driven attention.
    pub fn learns_attention(&self) -> bool {
        self.uses_map() || self.uses_class()
    }

    pub fn has_keypoint_features(&self) -> bool {
        !matches!(self, ModelVariant::ImageOnly)
    }
}

impl fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelVariant::ALL
            .iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| format!("unknown model variant `{s}`"))
    }
}

/// One convolution + ReLU, optionally followed by `pool x pool` max pooling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// Pool window and stride; 1 disables pooling.
    pub pool: usize,
}

impl ConvSpec {
    pub const fn new(channels: usize, kernel: usize, stride: usize, pad: usize, pool: usize) -> Self {
        Self {
            channels,
            kernel,
            stride,
            pad,
            pool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectClassSpec {
    pub name: String,
    pub keypoints: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: usize,
    /// Image stream; the last layer's activations (before its pool) are attended.
    pub convs: Vec<ConvSpec>,
    pub image_feature_dim: usize,
    /// Max-pool window and stride applied to the keypoint map.
    pub map_pool: usize,
    pub map_feature_dim: usize,
    pub class_feature_dim: usize,
    pub fused_dim: usize,
    pub n_bins: usize,
    pub objects: Vec<ObjectClassSpec>,
    pub map_kind: MapKind,
    pub temperature: f64,
    pub variant: ModelVariant,
}

/// A failed config check, located by its field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub field: String,
    pub message: String,
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        let n_bins = 24;
        Self {
            image_size: 64,
            convs: vec![
                ConvSpec::new(8, 3, 2, 1, 2),
                ConvSpec::new(16, 3, 1, 1, 1),
                ConvSpec::new(24, 3, 2, 1, 1),
                ConvSpec::new(32, 3, 1, 1, 2),
            ],
            image_feature_dim: 128,
            map_pool: 8,
            map_feature_dim: 64,
            class_feature_dim: 16,
            fused_dim: 128,
            n_bins,
            objects: catalog::object_class_specs(),
            map_kind: MapKind::Chebyshev,
            temperature: default_temperature(n_bins),
            variant: ModelVariant::ChFull,
        }
    }
}

impl ModelConfig {
    /// A very small network, used by gradient checks and quick tests.
    pub fn tiny() -> Self {
        let n_bins = 8;
        Self {
            image_size: 12,
            convs: vec![ConvSpec::new(3, 3, 2, 1, 1), ConvSpec::new(4, 3, 1, 1, 2)],
            image_feature_dim: 6,
            map_pool: 3,
            map_feature_dim: 5,
            class_feature_dim: 3,
            fused_dim: 7,
            n_bins,
            objects: vec![
                ObjectClassSpec {
                    name: "a".to_string(),
                    keypoints: vec!["p".to_string(), "q".to_string()],
                },
                ObjectClassSpec {
                    name: "b".to_string(),
                    keypoints: vec!["r".to_string(), "s".to_string(), "t".to_string()],
                },
            ],
            map_kind: MapKind::Chebyshev,
            temperature: default_temperature(n_bins),
            variant: ModelVariant::ChFull,
        }
    }

    pub fn with_variant(mut self, variant: ModelVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn total_keypoint_classes(&self) -> usize {
        self.objects.iter().map(|o| o.keypoints.len()).sum()
    }

    /// Index of keypoint `kp` of object `obj` in the one-hot class vector.
    pub fn global_keypoint_index(&self, obj: usize, kp: usize) -> Option<usize> {
        let o = self.objects.get(obj)?;
        if kp >= o.keypoints.len() {
            return None;
        }
        Some(self.objects[..obj].iter().map(|o| o.keypoints.len()).sum::<usize>() + kp)
    }

    /// Spatial shapes `(channels, h, w)` after each conv layer (before pooling),
    /// and the final pooled shape.
    pub fn conv_shapes(&self) -> Option<(Vec<(usize, usize, usize)>, (usize, usize, usize))> {
        let (mut c, mut h, mut w) = (3usize, self.image_size, self.image_size);
        let mut out = Vec::new();
        for spec in &self.convs {
            h = window_output_len(h, spec.kernel, spec.stride, spec.pad)?;
            w = window_output_len(w, spec.kernel, spec.stride, spec.pad)?;
            c = spec.channels;
            out.push((c, h, w));
            if spec.pool > 1 {
                h = window_output_len(h, spec.pool, spec.pool, 0)?;
                w = window_output_len(w, spec.pool, spec.pool, 0)?;
            }
        }
        Some((out, (c, h, w)))
    }

    /// Depth and spatial grid `(d, h_conv, w_conv)` of the attended layer.
    pub fn attention_grid(&self) -> (usize, usize, usize) {
        let (layers, _) = self.conv_shapes().expect("validated config");
        *layers.last().expect("at least one conv layer")
    }

    pub fn pooled_map_side(&self) -> usize {
        window_output_len(self.image_size, self.map_pool, self.map_pool, 0).unwrap_or(0)
    }

    /// Input width of the attention projection for this variant.
    pub fn attention_input_dim(&self) -> usize {
        let mut n = 0;
        if self.variant.uses_map() {
            n += self.map_feature_dim;
        }
        if self.variant.uses_class() {
            n += self.class_feature_dim;
        }
        n
    }

    pub fn fused_input_dim(&self) -> usize {
        let mut n = self.image_feature_dim;
        if self.variant.has_keypoint_features() {
            n += self.attention_grid().0;
        }
        n
    }

    pub fn validate(&self) -> Result<(), Vec<ConfigIssue>> {
        let mut issues = Vec::new();
        let mut issue = |field: &str, message: String| {
            issues.push(ConfigIssue {
                field: field.to_string(),
                message,
            })
        };
        if self.image_size < 2 {
            issue("model.image_size", "must be at least 2".to_string());
        }
        if self.convs.is_empty() {
            issue("model.convs", "at least one conv layer required".to_string());
        }
        for (i, c) in self.convs.iter().enumerate() {
            if c.channels == 0 || c.kernel == 0 || c.stride == 0 || c.pool == 0 {
                issue(
                    &format!("model.convs[{i}]"),
                    "channels, kernel, stride and pool must be positive".to_string(),
                );
            }
        }
        if self.image_size >= 2 && !self.convs.is_empty() && self.conv_shapes().is_none() {
            issue(
                "model.convs",
                format!("layers do not fit a {0}x{0} image", self.image_size),
            );
        }
        for (field, v) in [
            ("model.image_feature_dim", self.image_feature_dim),
            ("model.map_feature_dim", self.map_feature_dim),
            ("model.class_feature_dim", self.class_feature_dim),
            ("model.fused_dim", self.fused_dim),
            ("model.map_pool", self.map_pool),
        ] {
            if v == 0 {
                issue(field, "must be positive".to_string());
            }
        }
        if self.map_pool > self.image_size {
            issue("model.map_pool", "larger than the image".to_string());
        }
        if self.n_bins < 2 {
            issue("model.n_bins", "must be at least 2".to_string());
        }
        if self.objects.is_empty() {
            issue("model.objects", "at least one object class required".to_string());
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.keypoints.is_empty() {
                issue(
                    &format!("model.objects[{i}].keypoints"),
                    format!("object class `{}` has no keypoint classes", o.name),
                );
            }
        }
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            issue("model.temperature", "must be positive and finite".to_string());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }
}

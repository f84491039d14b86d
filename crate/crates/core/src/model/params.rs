use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;

use super::config::ModelConfig;
use crate::tensor::Tensor;

pub const ANGLE_NAMES: [&str; 3] = ["azimuth", "elevation", "tilt"];

/// Learnable tensors keyed by unique name; iteration order is by name.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Parameters {
    tensors: BTreeMap<String, Tensor>,
}

/// Gradients keyed like [`Parameters`].
pub type Gradients = BTreeMap<String, Vec<f64>>;

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) -> Option<Tensor> {
        self.tensors.insert(name.into(), t)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }

    /// Zero-filled gradient buffers matching every tensor.
    pub fn zeros_like(&self) -> Gradients {
        self.tensors
            .iter()
            .map(|(k, t)| (k.clone(), alloc::vec![0.0; t.len()]))
            .collect()
    }

    /// FNV-1a over names, shapes and raw bits; a cheap continuity fingerprint.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for (name, t) in &self.tensors {
            feed(name.as_bytes());
            for d in t.shape() {
                feed(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                feed(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

pub fn conv_weight(i: usize) -> String {
    format!("conv{i}.weight")
}

pub fn conv_bias(i: usize) -> String {
    format!("conv{i}.bias")
}

pub fn head_weight(obj: usize, angle: usize) -> String {
    format!("head.{obj}.{}.weight", ANGLE_NAMES[angle])
}

pub fn head_bias(obj: usize, angle: usize) -> String {
    format!("head.{obj}.{}.bias", ANGLE_NAMES[angle])
}

pub const IMAGE_FC_WEIGHT: &str = "image_fc.weight";
pub const IMAGE_FC_BIAS: &str = "image_fc.bias";
pub const KP_MAP_WEIGHT: &str = "kp_map.weight";
pub const KP_CLASS_WEIGHT: &str = "kp_class.weight";
pub const KP_ATTENTION_WEIGHT: &str = "kp_attention.weight";
pub const FUSE_WEIGHT: &str = "fuse.weight";
pub const FUSE_BIAS: &str = "fuse.bias";

fn he_normal<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let std = libm::sqrt(2.0 / fan_in as f64);
    Tensor::from_fn(shape, |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * std
    })
}

fn uniform_fan_in<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / libm::sqrt(fan_in as f64);
    Tensor::from_fn(shape, |_| rng.random_range(-bound..bound))
}

/// Expected `(name, shape)` list for a config, in initialization order.
pub fn parameter_layout(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut layout = Vec::new();
    let mut c_in = 3;
    for (i, spec) in config.convs.iter().enumerate() {
        layout.push((
            conv_weight(i),
            alloc::vec![spec.channels, c_in, spec.kernel, spec.kernel],
        ));
        layout.push((conv_bias(i), alloc::vec![spec.channels]));
        c_in = spec.channels;
    }
    let (_, (pc, ph, pw)) = config.conv_shapes().expect("validated config");
    layout.push((
        IMAGE_FC_WEIGHT.into(),
        alloc::vec![config.image_feature_dim, pc * ph * pw],
    ));
    layout.push((IMAGE_FC_BIAS.into(), alloc::vec![config.image_feature_dim]));
    let variant = config.variant;
    if variant.uses_map() {
        let side = config.pooled_map_side();
        layout.push((
            KP_MAP_WEIGHT.into(),
            alloc::vec![config.map_feature_dim, side * side],
        ));
    }
    if variant.uses_class() {
        layout.push((
            KP_CLASS_WEIGHT.into(),
            alloc::vec![config.class_feature_dim, config.total_keypoint_classes()],
        ));
    }
    if variant.learns_attention() {
        let (_, h, w) = config.attention_grid();
        layout.push((
            KP_ATTENTION_WEIGHT.into(),
            alloc::vec![h * w, config.attention_input_dim()],
        ));
    }
    layout.push((
        FUSE_WEIGHT.into(),
        alloc::vec![config.fused_dim, config.fused_input_dim()],
    ));
    layout.push((FUSE_BIAS.into(), alloc::vec![config.fused_dim]));
    for obj in 0..config.objects.len() {
        for angle in 0..3 {
            layout.push((head_weight(obj, angle), alloc::vec![config.n_bins, config.fused_dim]));
            layout.push((head_bias(obj, angle), alloc::vec![config.n_bins]));
        }
    }
    layout
}

/// Random initialization: He-normal for rectified layers, uniform
/// `±1/√fan_in` for the pure linear maps, zero biases.
pub fn init_params<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Parameters {
    let mut params = Parameters::new();
    for (name, shape) in parameter_layout(config) {
        let t = if name.ends_with(".bias") {
            Tensor::zeros(&shape)
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let rectified = name.starts_with("conv") || name == IMAGE_FC_WEIGHT || name == FUSE_WEIGHT;
            if rectified {
                he_normal(&shape, fan_in, rng)
            } else {
                uniform_fan_in(&shape, fan_in, rng)
            }
        };
        params.insert(name, t);
    }
    params
}

/// Checks that `params` holds exactly the tensors `config` needs.
pub fn check_layout(config: &ModelConfig, params: &Parameters) -> Result<(), String> {
    let layout = parameter_layout(config);
    if layout.len() != params.len() {
        return Err(format!(
            "expected {} tensors for variant {}, found {}",
            layout.len(),
            config.variant,
            params.len()
        ));
    }
    for (name, shape) in layout {
        match params.get(&name) {
            None => return Err(format!("missing tensor `{name}`")),
            Some(t) if t.shape() != shape.as_slice() => {
                return Err(format!(
                    "tensor `{name}` has shape {:?}, expected {shape:?}",
                    t.shape()
                ))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::augment::{add_noise, crop_jitter, occlude, Domain, Instance, Split};
use super::image::Image;
use super::mesh::{normalize, ObjectSpec, Vec3};
use super::raster::{render, Background, CameraPose, RenderOptions};
use super::RenderError;
use crate::geometry::{wrap_degrees, Viewpoint};

/// Sampled angles are rounded to this many steps per degree, so that
/// `360 - a` and its wrap are exact in `f64`.
pub const ANGLE_STEPS_PER_DEGREE: f64 = 1024.0;

pub fn quantize_angle(a: f64) -> f64 {
    libm::round(a * ANGLE_STEPS_PER_DEGREE) / ANGLE_STEPS_PER_DEGREE
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraRanges {
    /// Degrees, half-open.
    pub azimuth: [f64; 2],
    pub elevation: [f64; 2],
    pub tilt_sigma: f64,
    /// Tilt samples beyond `±tilt_limit` are redrawn.
    pub tilt_limit: f64,
    /// Camera distance in bounding radii.
    pub distance: [f64; 2],
}

impl Default for CameraRanges {
    fn default() -> Self {
        Self {
            azimuth: [0.0, 360.0],
            elevation: [-10.0, 60.0],
            tilt_sigma: 5.0,
            tilt_limit: 15.0,
            distance: [2.6, 3.4],
        }
    }
}

impl CameraRanges {
    pub fn validate(&self) -> Result<(), RenderError> {
        let range = |name: &'static str, r: [f64; 2]| {
            if r[0].is_finite() && r[1].is_finite() && r[0] < r[1] {
                Ok(())
            } else {
                Err(RenderError::EmptyRange(name))
            }
        };
        range("azimuth", self.azimuth)?;
        range("elevation", self.elevation)?;
        range("distance", self.distance)?;
        if !(self.tilt_sigma >= 0.0 && self.tilt_sigma.is_finite()) {
            return Err(RenderError::EmptyRange("tilt_sigma"));
        }
        if !(self.tilt_limit >= 0.0 && self.tilt_limit.is_finite()) {
            return Err(RenderError::EmptyRange("tilt_limit"));
        }
        if self.distance[0] <= 1.1 {
            return Err(RenderError::InvalidConfig {
                field: "camera.distance",
                message: "camera distance must exceed 1.1 bounding radii".into(),
            });
        }
        Ok(())
    }
}

/// Draws a camera pose. Azimuth and tilt are returned wrapped into `[0, 360)`.
pub fn sample_camera<R: Rng + ?Sized>(rng: &mut R, ranges: &CameraRanges) -> Result<CameraPose, RenderError> {
    ranges.validate()?;
    let az = rng.random_range(ranges.azimuth[0]..ranges.azimuth[1]);
    let el = rng.random_range(ranges.elevation[0]..ranges.elevation[1]);
    let tilt = if ranges.tilt_sigma == 0.0 {
        0.0
    } else {
        loop {
            let t: f64 = rng.sample::<f64, _>(StandardNormal) * ranges.tilt_sigma;
            if t.abs() <= ranges.tilt_limit {
                break t;
            }
        }
    };
    let distance = rng.random_range(ranges.distance[0]..ranges.distance[1]);
    let el = quantize_angle(el).clamp(ranges.elevation[0], ranges.elevation[1]);
    let tilt = quantize_angle(tilt).clamp(-ranges.tilt_limit, ranges.tilt_limit);
    Ok(CameraPose {
        viewpoint: Viewpoint::new(wrap_degrees(quantize_angle(az)), el, wrap_degrees(tilt)),
        distance,
    })
}

/// Light direction in camera coordinates, from the camera's hemisphere and
/// biased upward (camera y points down).
pub fn sample_light<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v: Vec3 = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let v = normalize(v);
        if v[2] < -0.3 && v[1] < 0.3 && v.iter().all(|c| c.is_finite()) {
            return v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationConfig {
    pub domain: Domain,
    pub renders_per_class: usize,
    /// Final crop side `s`.
    pub image_size: usize,
    /// Side of the full rendered frame before cropping.
    pub render_size: usize,
    /// Train, val and test fractions, assigned per render.
    pub split: [f64; 3],
    pub camera: CameraRanges,
    /// Crop jitter as a fraction of the box size.
    pub jitter: f64,
    pub ambient: f32,
    pub seed: u64,
    /// Overrides of the per-domain defaults below when set.
    pub noise_sigma: Option<f64>,
    pub max_occluders: Option<usize>,
    /// Stop after this many instances; the last render keeps only the
    /// keypoints that fit.
    pub max_instances: Option<usize>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            domain: Domain::Synthetic,
            renders_per_class: 600,
            image_size: 64,
            render_size: 128,
            split: [0.8, 0.1, 0.1],
            camera: CameraRanges::default(),
            jitter: 0.15,
            ambient: 0.35,
            seed: 0,
            noise_sigma: None,
            max_occluders: None,
            max_instances: None,
        }
    }
}

impl GenerationConfig {
    pub fn noise(&self) -> f64 {
        self.noise_sigma.unwrap_or(match self.domain {
            Domain::Synthetic => 0.01,
            Domain::Realish => 0.05,
        })
    }

    pub fn occluders(&self) -> usize {
        self.max_occluders.unwrap_or(match self.domain {
            Domain::Synthetic => 0,
            Domain::Realish => 2,
        })
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        self.camera.validate()?;
        if self.renders_per_class == 0 {
            return Err(RenderError::EmptyClass("renders_per_class is zero".into()));
        }
        if self.image_size < 8 {
            return Err(RenderError::InvalidConfig {
                field: "image_size",
                message: "must be at least 8".into(),
            });
        }
        if self.render_size < 8 {
            return Err(RenderError::InvalidConfig {
                field: "render_size",
                message: "must be at least 8".into(),
            });
        }
        let total: f64 = self.split.iter().sum();
        if self.split.iter().any(|f| !(*f >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(RenderError::InvalidConfig {
                field: "split",
                message: "fractions must be nonnegative and sum to 1".into(),
            });
        }
        if !(0.0..1.0).contains(&self.jitter) {
            return Err(RenderError::InvalidConfig {
                field: "jitter",
                message: "must be in [0, 1)".into(),
            });
        }
        Ok(())
    }
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent RNG stream for one render.
pub fn render_rng(seed: u64, domain: Domain, render_id: u64) -> ChaCha8Rng {
    let d = match domain {
        Domain::Synthetic => 0x5359,
        Domain::Realish => 0x5245,
    };
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ d) ^ render_id))
}

/// One rendered, cropped frame and the keypoints that survived.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderRecord {
    pub id: u64,
    pub object: usize,
    pub split: Split,
    pub domain: Domain,
    pub pose: CameraPose,
    pub image: Arc<Image>,
    /// `(keypoint class, x, y)`.
    pub keypoints: Vec<(usize, usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub object_names: Vec<String>,
    pub keypoint_names: Vec<Vec<String>>,
    pub mirror: Vec<Vec<usize>>,
    pub renders: Vec<RenderRecord>,
    pub instances: Vec<Instance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub object: String,
    pub renders: usize,
    pub instances: usize,
    /// Per local keypoint class.
    pub keypoints: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub renders: usize,
    pub instances: usize,
    pub classes: Vec<ClassCount>,
    /// Instances per split, in train/val/test order.
    pub splits: [usize; 3],
}

impl Dataset {
    pub fn keypoints_per_object(&self) -> Vec<usize> {
        self.keypoint_names.iter().map(|k| k.len()).collect()
    }

    pub fn split(&self, split: Split) -> Vec<&Instance> {
        self.instances.iter().filter(|i| i.split == split).collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut classes: Vec<ClassCount> = self
            .object_names
            .iter()
            .zip(&self.keypoint_names)
            .map(|(o, k)| ClassCount {
                object: o.clone(),
                renders: 0,
                instances: 0,
                keypoints: vec![0; k.len()],
            })
            .collect();
        for r in &self.renders {
            classes[r.object].renders += 1;
        }
        let mut splits = [0; 3];
        for i in &self.instances {
            classes[i.object].instances += 1;
            classes[i.object].keypoints[i.keypoint] += 1;
            splits[Split::ALL.iter().position(|s| *s == i.split).expect("split")] += 1;
        }
        DatasetSummary {
            renders: self.renders.len(),
            instances: self.instances.len(),
            classes,
            splits,
        }
    }
}

fn pick_split<R: Rng + ?Sized>(fractions: &[f64; 3], rng: &mut R) -> Split {
    let u: f64 = rng.random();
    if u < fractions[0] {
        Split::Train
    } else if u < fractions[0] + fractions[1] {
        Split::Val
    } else {
        Split::Test
    }
}

/// Renders, crops and post-processes one frame.
pub fn generate_render(
    config: &GenerationConfig,
    objects: &[ObjectSpec],
    id: u64,
) -> Result<RenderRecord, RenderError> {
    let object = (id % objects.len() as u64) as usize;
    let spec = &objects[object];
    let mut rng = render_rng(config.seed, config.domain, id);
    let split = pick_split(&config.split, &mut rng);
    let pose = sample_camera(&mut rng, &config.camera)?;
    let light = sample_light(&mut rng);
    let background_seed: u64 = rng.random();
    let opts = RenderOptions {
        size: config.render_size,
        ambient: config.ambient,
        background: match config.domain {
            Domain::Synthetic => Background::Smooth,
            Domain::Realish => Background::Textured,
        },
    };
    let full = render(spec, &pose, light, background_seed, &opts)?;
    let mut sample = crop_jitter(&full, &mut rng, config.jitter, config.image_size)?;
    let color_jitter = match config.domain {
        Domain::Synthetic => 0.0,
        Domain::Realish => 0.15,
    };
    add_noise(&mut sample.image, config.noise(), color_jitter, &mut rng);
    if config.occluders() > 0 {
        occlude(&mut sample, config.occluders(), 0.15, 0.35, &mut rng);
    }
    let keypoints = sample
        .visible_keypoints
        .iter()
        .map(|k| (k.class, k.x as usize, k.y as usize))
        .collect();
    Ok(RenderRecord {
        id,
        object,
        split,
        domain: config.domain,
        pose,
        image: Arc::new(sample.image),
        keypoints,
    })
}

/// Builds a dataset of `renders_per_class` frames per object class, one
/// instance per surviving keypoint. Render `i` shows object `i mod n`.
pub fn generate_dataset(config: &GenerationConfig, objects: &[ObjectSpec]) -> Result<Dataset, RenderError> {
    config.validate()?;
    if objects.is_empty() {
        return Err(RenderError::EmptyClass("no object classes".into()));
    }
    for o in objects {
        if o.keypoints.is_empty() {
            return Err(RenderError::EmptyClass(alloc::format!("object `{}` has no keypoints", o.name)));
        }
    }
    let total = (config.renders_per_class * objects.len()) as u64;
    let mut ds = Dataset {
        object_names: objects.iter().map(|o| o.name.clone()).collect(),
        keypoint_names: objects.iter().map(|o| o.keypoint_names()).collect(),
        mirror: objects.iter().map(|o| o.mirror.clone()).collect(),
        ..Dataset::default()
    };
    let cap = config.max_instances.unwrap_or(usize::MAX);
    for id in 0..total {
        if ds.instances.len() >= cap {
            break;
        }
        let mut r = generate_render(config, objects, id)?;
        r.keypoints.truncate(cap - ds.instances.len());
        for &(keypoint, x, y) in &r.keypoints {
            ds.instances.push(Instance {
                id: ds.instances.len() as u64,
                render_id: r.id,
                split: r.split,
                object: r.object,
                keypoint,
                x,
                y,
                viewpoint: r.pose.viewpoint,
                domain: r.domain,
                image: r.image.clone(),
            });
        }
        ds.renders.push(r);
    }
    Ok(ds)
}

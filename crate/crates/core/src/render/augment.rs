use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::raster::{RenderedSample, VisibleKeypoint};
use super::RenderError;
use crate::geometry::{wrap_degrees, Viewpoint, ViewpointBins};

/// Smallest crop side, in source pixels.
pub const MIN_CROP: f64 = 8.0;
const CROP_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    #[default]
    Synthetic,
    Realish,
}

impl Domain {
    pub fn name(&self) -> &'static str {
        match self {
            Domain::Synthetic => "synthetic",
            Domain::Realish => "realish",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// One training or evaluation example: an image crop, a clicked keypoint,
/// and the viewpoint label.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub render_id: u64,
    pub split: Split,
    pub object: usize,
    /// Keypoint class, local to `object`.
    pub keypoint: usize,
    pub x: usize,
    pub y: usize,
    /// Degrees; azimuth and tilt in `[0, 360)`.
    pub viewpoint: Viewpoint,
    pub domain: Domain,
    pub image: Arc<Image>,
}

impl Instance {
    pub fn bins(&self, n: usize) -> ViewpointBins {
        self.viewpoint.to_bins(n)
    }

    /// Checks coordinate and class ranges against a per-object keypoint count.
    pub fn validate(&self, keypoints_per_object: &[usize]) -> Result<(), alloc::string::String> {
        use alloc::format;
        let s = self.image.size;
        if self.x >= s || self.y >= s {
            return Err(format!("instance {}: ({}, {}) outside {s}x{s}", self.id, self.x, self.y));
        }
        let Some(&k) = keypoints_per_object.get(self.object) else {
            return Err(format!("instance {}: unknown object class {}", self.id, self.object));
        };
        if self.keypoint >= k {
            return Err(format!(
                "instance {}: keypoint {} invalid for object class {}",
                self.id, self.keypoint, self.object
            ));
        }
        let v = self.viewpoint;
        if ![v.azimuth, v.elevation, v.tilt].iter().all(|a| a.is_finite()) {
            return Err(format!("instance {}: non-finite viewpoint", self.id));
        }
        Ok(())
    }
}

/// Horizontal flip: mirrors the image, reflects the keypoint column, swaps
/// left/right keypoint classes and negates azimuth and tilt.
pub fn flip_augment(inst: &Instance, mirror: &[usize]) -> Instance {
    let s = inst.image.size;
    let v = inst.viewpoint;
    Instance {
        image: Arc::new(inst.image.flipped_horizontal()),
        x: s - 1 - inst.x,
        keypoint: mirror[inst.keypoint],
        viewpoint: Viewpoint::new(wrap_degrees(360.0 - v.azimuth), v.elevation, wrap_degrees(360.0 - v.tilt)),
        ..inst.clone()
    }
}

/// Crop rectangle in continuous pixel-edge coordinates (pixel `k` spans
/// `[k - 0.5, k + 0.5]`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropBox {
    pub left: f64,
    pub top: f64,
    pub right: f64,
    pub bottom: f64,
}

impl CropBox {
    pub fn width(&self) -> f64 {
        self.right - self.left
    }

    pub fn height(&self) -> f64 {
        self.bottom - self.top
    }

    /// Source pixel coordinates to output pixel coordinates for an `s x s` resample.
    pub fn map(&self, u: f64, v: f64, s: usize) -> (f64, f64) {
        (
            (u - self.left) * s as f64 / self.width() - 0.5,
            (v - self.top) * s as f64 / self.height() - 0.5,
        )
    }
}

/// Tight box around the projected mesh, each edge moved by an independent
/// uniform offset of up to `jitter` times the box size, clipped to the frame.
pub fn jittered_box<R: Rng + ?Sized>(bbox: [f64; 4], size: usize, jitter: f64, rng: &mut R) -> CropBox {
    let (l, t, r, b) = (bbox[0] - 0.5, bbox[1] - 0.5, bbox[2] + 0.5, bbox[3] + 0.5);
    let (w, h) = (r - l, b - t);
    let mut j = |extent: f64| {
        if jitter > 0.0 {
            rng.random_range(-jitter..jitter) * extent
        } else {
            0.0
        }
    };
    let lim = size as f64 - 0.5;
    CropBox {
        left: (l + j(w)).max(-0.5),
        top: (t + j(h)).max(-0.5),
        right: (r + j(w)).min(lim),
        bottom: (b + j(h)).min(lim),
    }
}

/// Resamples `crop` of `src` to `s x s`, averaging `k x k` bilinear taps per
/// output pixel when downsampling.
pub fn resample(src: &Image, crop: &CropBox, s: usize) -> Image {
    let (sx, sy) = (crop.width() / s as f64, crop.height() / s as f64);
    let kx = libm::ceil(sx).max(1.0) as usize;
    let ky = libm::ceil(sy).max(1.0) as usize;
    let norm = 1.0 / (kx * ky) as f32;
    let mut out = Image::new(s);
    for j in 0..s {
        for i in 0..s {
            let mut acc = [0.0f32; 3];
            for a in 0..ky {
                let v = crop.top + (j as f64 + (a as f64 + 0.5) / ky as f64) * sy;
                for b in 0..kx {
                    let u = crop.left + (i as f64 + (b as f64 + 0.5) / kx as f64) * sx;
                    let px = src.sample(u, v);
                    for c in 0..3 {
                        acc[c] += px[c];
                    }
                }
            }
            out.set(i, j, acc.map(|v| (v * norm).clamp(0.0, 1.0)));
        }
    }
    out
}

/// Crops the object with a randomly perturbed box and resamples it to
/// `s x s`. Keypoints are remapped and rounded; those leaving the crop are
/// dropped. Crops narrower than [`MIN_CROP`] pixels are redrawn.
pub fn crop_jitter<R: Rng + ?Sized>(
    sample: &RenderedSample,
    rng: &mut R,
    jitter: f64,
    s: usize,
) -> Result<RenderedSample, RenderError> {
    let size = sample.image.size;
    let mut crop = None;
    for _ in 0..CROP_ATTEMPTS {
        let c = jittered_box(sample.bbox, size, jitter, rng);
        if c.width() >= MIN_CROP && c.height() >= MIN_CROP {
            crop = Some(c);
            break;
        }
    }
    let crop = crop.ok_or(RenderError::DegenerateCrop)?;
    let image = resample(&sample.image, &crop, s);
    let visible_keypoints = sample
        .visible_keypoints
        .iter()
        .filter_map(|k| {
            let (x, y) = crop.map(k.x, k.y, s);
            let (x, y) = (libm::round(x), libm::round(y));
            let inside = x >= 0.0 && y >= 0.0 && x < s as f64 && y < s as f64;
            inside.then_some(VisibleKeypoint { class: k.class, x, y })
        })
        .collect();
    let (x0, y0) = crop.map(sample.bbox[0], sample.bbox[1], s);
    let (x1, y1) = crop.map(sample.bbox[2], sample.bbox[3], s);
    let max = s as f64 - 1.0;
    Ok(RenderedSample {
        image,
        viewpoint: sample.viewpoint,
        visible_keypoints,
        camera: sample.camera,
        bbox: [x0.max(0.0), y0.max(0.0), x1.min(max), y1.min(max)],
    })
}

/// Per-channel gain, offset, and additive Gaussian pixel noise.
pub fn add_noise<R: Rng + ?Sized>(img: &mut Image, sigma: f64, color_jitter: f64, rng: &mut R) {
    let mut gain = [1.0f32; 3];
    let mut bias = [0.0f32; 3];
    if color_jitter > 0.0 {
        for c in 0..3 {
            gain[c] = 1.0 + rng.random_range(-color_jitter..color_jitter) as f32;
            bias[c] = rng.random_range(-color_jitter..color_jitter) as f32 * 0.3;
        }
    }
    for (i, v) in img.data.iter_mut().enumerate() {
        let c = i % 3;
        let n: f64 = if sigma > 0.0 {
            rng.sample::<f64, _>(StandardNormal) * sigma
        } else {
            0.0
        };
        *v = (*v * gain[c] + bias[c] + n as f32).clamp(0.0, 1.0);
    }
}

/// Axis-aligned solid rectangle in output pixels, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Occluder {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub color: [f32; 3],
}

impl Occluder {
    pub fn covers(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }
}

/// Paints up to `max_count` random rectangles with sides between
/// `min_frac` and `max_frac` of the image, with a faint texture, and drops the
/// keypoints they cover.
pub fn occlude<R: Rng + ?Sized>(
    sample: &mut RenderedSample,
    max_count: usize,
    min_frac: f64,
    max_frac: f64,
    rng: &mut R,
) -> Vec<Occluder> {
    let s = sample.image.size;
    let count = rng.random_range(0..=max_count);
    let mut occluders = Vec::with_capacity(count);
    for _ in 0..count {
        let w = ((rng.random_range(min_frac..max_frac) * s as f64) as usize).clamp(1, s);
        let h = ((rng.random_range(min_frac..max_frac) * s as f64) as usize).clamp(1, s);
        let x0 = rng.random_range(0..=s - w);
        let y0 = rng.random_range(0..=s - h);
        let color = [rng.random::<f32>(), rng.random::<f32>(), rng.random::<f32>()];
        let o = Occluder {
            x0,
            y0,
            x1: x0 + w - 1,
            y1: y0 + h - 1,
            color,
        };
        for y in o.y0..=o.y1 {
            for x in o.x0..=o.x1 {
                let t = if (x / 3 + y / 3) % 2 == 0 { 0.0 } else { 0.08 };
                sample.image.set(x, y, color.map(|c| (c * 0.9 + t).clamp(0.0, 1.0)));
            }
        }
        occluders.push(o);
    }
    sample
        .visible_keypoints
        .retain(|k| !occluders.iter().any(|o| o.covers(k.x as usize, k.y as usize)));
    occluders
}

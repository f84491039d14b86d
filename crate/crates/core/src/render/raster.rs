use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::mesh::{dot, ObjectSpec, Vec3};
use super::RenderError;
use crate::geometry::{RotationMatrix, Viewpoint};

/// Canonical object axes (x forward, y left, z up) to camera axes at zero
/// viewpoint (x right, y down, z along the view ray): the camera sits on the
/// +x axis looking at the object's front.
const AXES: RotationMatrix = RotationMatrix([[0.0, 1.0, 0.0], [0.0, 0.0, -1.0], [-1.0, 0.0, 0.0]]);

/// Object-to-camera rotation for a viewpoint:
/// `Rz(tilt) · Rx(elevation) · AXES · Rz(-azimuth)`. Positive elevation
/// raises the camera above the object; azimuth 90 faces its left side.
pub fn camera_rotation(v: &Viewpoint) -> RotationMatrix {
    let d = PI / 180.0;
    RotationMatrix::rz(v.tilt * d) * RotationMatrix::rx(v.elevation * d) * AXES * RotationMatrix::rz(-v.azimuth * d)
}

/// Viewpoint plus camera distance, in units of the object's bounding radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub viewpoint: Viewpoint,
    pub distance: f64,
}

/// Pinhole camera looking at the object's origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub rotation: RotationMatrix,
    /// World-space distance from the camera center to the object origin.
    pub distance: f64,
    /// Focal length in pixels.
    pub focal: f64,
    pub size: usize,
}

impl Camera {
    /// Focal length chosen so an object at twice its bounding radius would
    /// fill the frame.
    pub fn new(pose: &CameraPose, radius: f64, size: usize) -> Self {
        Self {
            rotation: camera_rotation(&pose.viewpoint),
            distance: pose.distance * radius,
            focal: size as f64,
            size,
        }
    }

    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let mut c = self.rotation.apply(p);
        c[2] += self.distance;
        c
    }

    /// Pixel coordinates (centers at integers) and depth of a camera-space point.
    pub fn project_camera(&self, c: Vec3) -> (f64, f64, f64) {
        let mid = (self.size as f64 - 1.0) / 2.0;
        (mid + self.focal * c[0] / c[2], mid + self.focal * c[1] / c[2], c[2])
    }

    pub fn project(&self, p: Vec3) -> (f64, f64, f64) {
        self.project_camera(self.to_camera(p))
    }

    /// Camera center in object coordinates.
    pub fn view_position(&self) -> Vec3 {
        self.rotation.transpose().apply([0.0, 0.0, -self.distance])
    }
}

/// Background style.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    /// Low-frequency value noise.
    #[default]
    Smooth,
    /// Value noise plus higher-frequency octaves and stripes.
    Textured,
}

/// Keypoint in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisibleKeypoint {
    pub class: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedSample {
    pub image: Image,
    pub viewpoint: Viewpoint,
    pub visible_keypoints: Vec<VisibleKeypoint>,
    pub camera: CameraPose,
    /// Tight projected bounding box `(x0, y0, x1, y1)` of the mesh, in pixel
    /// coordinates, clipped to the frame.
    pub bbox: [f64; 4],
}

struct ScreenTri {
    p: [(f64, f64); 3],
    inv_z: [f64; 3],
    area: f64,
}

impl ScreenTri {
    /// Perspective-correct depth at `(u, v)` if inside (edges inclusive within `tol`).
    fn depth_at(&self, u: f64, v: f64, tol: f64) -> Option<f64> {
        let [a, b, c] = self.p;
        let w0 = edge(b, c, (u, v)) / self.area;
        let w1 = edge(c, a, (u, v)) / self.area;
        let w2 = edge(a, b, (u, v)) / self.area;
        if w0 < -tol || w1 < -tol || w2 < -tol {
            return None;
        }
        let iz = w0 * self.inv_z[0] + w1 * self.inv_z[1] + w2 * self.inv_z[2];
        (iz > 0.0).then(|| 1.0 / iz)
    }
}

fn edge(a: (f64, f64), b: (f64, f64), p: (f64, f64)) -> f64 {
    (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0)
}

/// Smallest camera depth allowed for any vertex, as a fraction of the camera distance.
const NEAR: f64 = 0.05;

fn smoothstep(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise on a `cells x cells` lattice, bilinear with smoothstep.
fn value_noise<R: Rng>(rng: &mut R, size: usize, cells: usize, amp: f32) -> Vec<[f32; 3]> {
    let n = cells + 1;
    let nodes: Vec<[f32; 3]> = (0..n * n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    let mut out = vec![[0.0f32; 3]; size * size];
    for y in 0..size {
        let gy = y as f32 / size as f32 * cells as f32;
        let (iy, fy) = (gy as usize, smoothstep(gy - libm::floorf(gy)));
        for x in 0..size {
            let gx = x as f32 / size as f32 * cells as f32;
            let (ix, fx) = (gx as usize, smoothstep(gx - libm::floorf(gx)));
            let (a, b) = (nodes[iy * n + ix], nodes[iy * n + ix + 1]);
            let (c, d) = (nodes[(iy + 1) * n + ix], nodes[(iy + 1) * n + ix + 1]);
            for k in 0..3 {
                let top = a[k] + (b[k] - a[k]) * fx;
                let bot = c[k] + (d[k] - c[k]) * fx;
                out[y * size + x][k] = amp * (top + (bot - top) * fy);
            }
        }
    }
    out
}

fn background(seed: u64, size: usize, style: Background) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = Image::new(size);
    let base = value_noise(&mut rng, size, 3, 1.0);
    let detail = match style {
        Background::Smooth => None,
        Background::Textured => Some(value_noise(&mut rng, size, 11, 1.0)),
    };
    let (freq, phase, angle): (f32, f32, f32) = (
        rng.random_range(0.15..0.6),
        rng.random_range(0.0..6.3),
        rng.random_range(0.0..3.2),
    );
    let (ca, sa) = (libm::cosf(angle), libm::sinf(angle));
    for y in 0..size {
        for x in 0..size {
            let p = y * size + x;
            let mut px = [0.0f32; 3];
            for k in 0..3 {
                px[k] = 0.15 + 0.7 * base[p][k];
            }
            if let Some(d) = &detail {
                let stripe = 0.12 * libm::sinf(freq * (ca * x as f32 + sa * y as f32) + phase);
                for k in 0..3 {
                    px[k] = (0.55 * px[k] + 0.45 * d[p][k] + stripe).clamp(0.0, 1.0);
                }
            }
            img.set(x, y, px);
        }
    }
    img
}

/// Shading parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RenderOptions {
    pub size: usize,
    pub ambient: f32,
    pub background: Background,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            size: 128,
            ambient: 0.35,
            background: Background::Smooth,
        }
    }
}

/// Renders `spec` seen from `pose`, lit by a directional light arriving from
/// `light_dir` (camera coordinates, pointing toward the light).
///
/// Keypoint visibility: the keypoint's projected pixel lies in the frame and
/// its depth is at most the nearest front-facing surface depth sampled at its
/// exact projected position plus `1e-3` of the mesh depth range. A keypoint
/// that no front-facing triangle covers is treated as hidden.
pub fn render(
    spec: &ObjectSpec,
    pose: &CameraPose,
    light_dir: Vec3,
    background_seed: u64,
    opts: &RenderOptions,
) -> Result<RenderedSample, RenderError> {
    let size = opts.size;
    if size < 2 {
        return Err(RenderError::InvalidConfig {
            field: "size",
            message: "render size below 2".into(),
        });
    }
    let camera = Camera::new(pose, spec.bounding_radius(), size);
    let light = super::mesh::normalize(light_dir);

    let mut tris = Vec::with_capacity(spec.triangles.len());
    let (mut zmin, mut zmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut bbox = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for t in &spec.triangles {
        let c = t.vertices.map(|v| camera.to_camera(v));
        for v in &c {
            if v[2] <= NEAR * camera.distance {
                return Err(RenderError::DegenerateCamera);
            }
            zmin = zmin.min(v[2]);
            zmax = zmax.max(v[2]);
            let (u, w, _) = camera.project_camera(*v);
            bbox = [bbox[0].min(u), bbox[1].min(w), bbox[2].max(u), bbox[3].max(w)];
        }
        let n = camera.rotation.apply(t.normal);
        // camera at the origin: front-facing when the normal opposes the ray
        if dot(n, c[0]) >= 0.0 {
            continue;
        }
        let p = c.map(|v| {
            let (u, w, _) = camera.project_camera(v);
            (u, w)
        });
        let area = edge(p[0], p[1], p[2]);
        if area.abs() < 1e-12 {
            continue;
        }
        let shade = opts.ambient + (1.0 - opts.ambient) * dot(n, light).max(0.0) as f32;
        let color = t.color.map(|k| (k * shade).clamp(0.0, 1.0));
        tris.push((
            ScreenTri {
                p,
                inv_z: c.map(|v| 1.0 / v[2]),
                area,
            },
            color,
        ));
    }

    let mut image = background(background_seed, size, opts.background);
    let mut zbuf = vec![f64::INFINITY; size * size];
    let max = size as f64 - 1.0;
    for (t, color) in &tris {
        let xs = [t.p[0].0, t.p[1].0, t.p[2].0];
        let ys = [t.p[0].1, t.p[1].1, t.p[2].1];
        let x0 = libm::ceil(xs.iter().copied().fold(f64::INFINITY, f64::min).max(0.0)) as usize;
        let x1 = libm::floor(xs.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(max));
        let y0 = libm::ceil(ys.iter().copied().fold(f64::INFINITY, f64::min).max(0.0)) as usize;
        let y1 = libm::floor(ys.iter().copied().fold(f64::NEG_INFINITY, f64::max).min(max));
        if x1 < 0.0 || y1 < 0.0 {
            continue;
        }
        for y in y0..=y1 as usize {
            for x in x0..=x1 as usize {
                if let Some(z) = t.depth_at(x as f64, y as f64, 0.0) {
                    let i = y * size + x;
                    if z < zbuf[i] {
                        zbuf[i] = z;
                        image.set(x, y, *color);
                    }
                }
            }
        }
    }

    let eps = 1e-3 * (zmax - zmin);
    let mut visible_keypoints = Vec::new();
    for (class, kp) in spec.keypoints.iter().enumerate() {
        let (u, v, z) = camera.project(kp.position);
        let (px, py) = (libm::round(u), libm::round(v));
        if px < 0.0 || py < 0.0 || px > max || py > max {
            continue;
        }
        let surface = tris
            .iter()
            .filter_map(|(t, _)| t.depth_at(u, v, 1e-9))
            .fold(f64::INFINITY, f64::min);
        if surface.is_finite() && z <= surface + eps {
            visible_keypoints.push(VisibleKeypoint { class, x: u, y: v });
        }
    }

    let bbox = [bbox[0].max(0.0), bbox[1].max(0.0), bbox[2].min(max), bbox[3].min(max)];
    Ok(RenderedSample {
        image,
        viewpoint: pose.viewpoint,
        visible_keypoints,
        camera: *pose,
        bbox,
    })
}

use alloc::string::String;
use alloc::vec::Vec;

pub type Vec3 = [f64; 3];

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn scale(a: Vec3, k: f64) -> Vec3 {
    [a[0] * k, a[1] * k, a[2] * k]
}

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    libm::sqrt(dot(a, a))
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    if n == 0.0 {
        a
    } else {
        scale(a, 1.0 / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triangle {
    pub vertices: [Vec3; 3],
    /// Unit outward normal.
    pub normal: Vec3,
    pub color: [f32; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint3 {
    pub name: String,
    pub position: Vec3,
}

/// A renderable object class. Canonical frame: x forward, y left, z up;
/// the mirror plane is `y = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub name: String,
    pub triangles: Vec<Triangle>,
    pub keypoints: Vec<Keypoint3>,
    /// `mirror[k]` is the keypoint that `k` becomes under a left/right flip.
    pub mirror: Vec<usize>,
}

impl ObjectSpec {
    /// Radius of the smallest origin-centered sphere containing the mesh.
    pub fn bounding_radius(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|t| t.vertices.iter())
            .map(|v| norm(*v))
            .fold(0.0, f64::max)
    }

    pub fn keypoint_names(&self) -> Vec<String> {
        self.keypoints.iter().map(|k| k.name.clone()).collect()
    }

    /// Distance from keypoint `k` to the nearest mesh triangle.
    pub fn keypoint_surface_distance(&self, k: usize) -> f64 {
        let p = self.keypoints[k].position;
        self.triangles
            .iter()
            .map(|t| point_triangle_distance(p, &t.vertices))
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks the structural invariants; returns a description of the first
    /// violation.
    pub fn check(&self) -> Result<(), String> {
        use alloc::format;
        if self.mirror.len() != self.keypoints.len() {
            return Err(format!("{}: mirror table length mismatch", self.name));
        }
        for (k, kp) in self.keypoints.iter().enumerate() {
            let d = self.keypoint_surface_distance(k);
            if d > 1e-6 {
                return Err(format!("{}: keypoint `{}` is {d:e} off the mesh", self.name, kp.name));
            }
            let m = self.mirror[k];
            if m >= self.keypoints.len() || self.mirror[m] != k {
                return Err(format!("{}: mirror table is not an involution at {k}", self.name));
            }
            let on_plane = kp.position[1].abs() < 1e-9;
            if on_plane != (m == k) {
                return Err(format!(
                    "{}: keypoint `{}` mirror fixes a point off the centerline or moves one on it",
                    self.name, kp.name
                ));
            }
            let q = self.keypoints[m].position;
            let p = kp.position;
            if (p[0] - q[0]).abs() > 1e-9 || (p[1] + q[1]).abs() > 1e-9 || (p[2] - q[2]).abs() > 1e-9 {
                return Err(format!("{}: keypoint `{}` and its mirror are not reflections", self.name, kp.name));
            }
        }
        Ok(())
    }
}

/// Euclidean distance from `p` to a solid triangle.
pub fn point_triangle_distance(p: Vec3, t: &[Vec3; 3]) -> f64 {
    let [a, b, c] = *t;
    let (ab, ac, ap) = (sub(b, a), sub(c, a), sub(p, a));
    let (d1, d2) = (dot(ab, ap), dot(ac, ap));
    let closest = if d1 <= 0.0 && d2 <= 0.0 {
        a
    } else {
        let bp = sub(p, b);
        let (d3, d4) = (dot(ab, bp), dot(ac, bp));
        let cp = sub(p, c);
        let (d5, d6) = (dot(ab, cp), dot(ac, cp));
        let vc = d1 * d4 - d3 * d2;
        let vb = d5 * d2 - d1 * d6;
        let va = d3 * d6 - d5 * d4;
        if d3 >= 0.0 && d4 <= d3 {
            b
        } else if d6 >= 0.0 && d5 <= d6 {
            c
        } else if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
            add(a, scale(ab, d1 / (d1 - d3)))
        } else if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
            add(a, scale(ac, d2 / (d2 - d6)))
        } else if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
            add(b, scale(sub(c, b), (d4 - d3) / ((d4 - d3) + (d5 - d6))))
        } else {
            let denom = 1.0 / (va + vb + vc);
            add(a, add(scale(ab, vb * denom), scale(ac, vc * denom)))
        }
    };
    norm(sub(p, closest))
}

/// Accumulates convex parts into a triangle list.
#[derive(Debug, Default)]
pub struct MeshBuilder {
    pub triangles: Vec<Triangle>,
}

impl MeshBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Planar convex polygon, fan-triangulated from its first vertex. The
    /// normal is oriented away from `inside`.
    pub fn polygon(&mut self, pts: &[Vec3], inside: Vec3, color: [f32; 3]) {
        let mut n = normalize(cross(sub(pts[1], pts[0]), sub(pts[2], pts[0])));
        if dot(n, sub(pts[0], inside)) < 0.0 {
            n = scale(n, -1.0);
        }
        for i in 1..pts.len() - 1 {
            self.triangles.push(Triangle {
                vertices: [pts[0], pts[i], pts[i + 1]],
                normal: n,
                color,
            });
        }
    }

    /// Hexahedron from 8 corners indexed by bits `(x_hi, y_hi, z_hi)`:
    /// `c[xi * 4 + yi * 2 + zi]`. Face colors in the order
    /// `+x, -x, +y, -y, +z, -z`.
    pub fn hexahedron(&mut self, c: [Vec3; 8], colors: [[f32; 3]; 6]) {
        let center = scale(c.iter().fold([0.0; 3], |acc, v| add(acc, *v)), 1.0 / 8.0);
        let faces: [[usize; 4]; 6] = [
            [4, 5, 7, 6],
            [0, 2, 3, 1],
            [2, 6, 7, 3],
            [0, 1, 5, 4],
            [1, 3, 7, 5],
            [0, 4, 6, 2],
        ];
        for (f, color) in faces.iter().zip(colors) {
            let pts = [c[f[0]], c[f[1]], c[f[2]], c[f[3]]];
            self.polygon(&pts, center, color);
        }
    }

    pub fn cuboid(&mut self, lo: Vec3, hi: Vec3, colors: [[f32; 3]; 6]) {
        let mut c = [[0.0; 3]; 8];
        for (i, v) in c.iter_mut().enumerate() {
            *v = [
                if i & 4 != 0 { hi[0] } else { lo[0] },
                if i & 2 != 0 { hi[1] } else { lo[1] },
                if i & 1 != 0 { hi[2] } else { lo[2] },
            ];
        }
        self.hexahedron(c, colors);
    }

    /// Regular-polygon prism with its axis along y, `(x, z)` center; caps are
    /// fanned from their centers so the hub is a vertex.
    pub fn cylinder_y(
        &mut self,
        center: (f64, f64),
        radius: f64,
        y: (f64, f64),
        sides: usize,
        cap: [f32; 3],
        tread: [f32; 3],
    ) {
        let inside = [center.0, (y.0 + y.1) / 2.0, center.1];
        let ring = |yy: f64| -> Vec<Vec3> {
            (0..sides)
                .map(|i| {
                    let a = 2.0 * core::f64::consts::PI * i as f64 / sides as f64;
                    [center.0 + radius * libm::cos(a), yy, center.1 + radius * libm::sin(a)]
                })
                .collect()
        };
        let (r0, r1) = (ring(y.0), ring(y.1));
        for (r, yy) in [(&r0, y.0), (&r1, y.1)] {
            let hub = [center.0, yy, center.1];
            for i in 0..sides {
                let pts = [hub, r[i], r[(i + 1) % sides]];
                self.polygon(&pts, inside, cap);
            }
        }
        for i in 0..sides {
            let j = (i + 1) % sides;
            self.polygon(&[r0[i], r0[j], r1[j], r1[i]], inside, tread);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_triangle_distance_regions() {
        let t = [[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!((point_triangle_distance([0.2, 0.2, 3.0], &t) - 3.0).abs() < 1e-12);
        assert!((point_triangle_distance([-1.0, -1.0, 0.0], &t) - libm::sqrt(2.0)).abs() < 1e-12);
        assert!((point_triangle_distance([0.5, -2.0, 0.0], &t) - 2.0).abs() < 1e-12);
        assert!((point_triangle_distance([1.0, 1.0, 0.0], &t) - libm::sqrt(0.5)).abs() < 1e-12);
        assert_eq!(point_triangle_distance([1.0, 0.0, 0.0], &t), 0.0);
    }

    #[test]
    fn cuboid_normals_point_outward() {
        let mut b = MeshBuilder::new();
        b.cuboid([-1.0, -2.0, -3.0], [1.0, 2.0, 3.0], [[0.5; 3]; 6]);
        assert_eq!(b.triangles.len(), 12);
        for t in &b.triangles {
            let c = scale(add(add(t.vertices[0], t.vertices[1]), t.vertices[2]), 1.0 / 3.0);
            assert!(dot(t.normal, c) > 0.0);
            assert!((norm(t.normal) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cylinder_hub_is_a_vertex() {
        let mut b = MeshBuilder::new();
        b.cylinder_y((1.0, 0.5), 0.4, (0.1, 0.3), 10, [0.1; 3], [0.2; 3]);
        assert_eq!(b.triangles.len(), 10 * 2 + 10 * 2);
        let hub = [1.0, 0.3, 0.5];
        assert!(b.triangles.iter().any(|t| t.vertices.contains(&hub)));
    }
}

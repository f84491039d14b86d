//! Built-in object classes: parametric bus, car and motorcycle meshes with
//! named surface keypoints.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use super::mesh::{sub, MeshBuilder, Keypoint3, ObjectSpec, Vec3};
use crate::model::ObjectClassSpec;

pub const BUS_KEYPOINTS: [&str; 12] = [
    "Back left lower corner",
    "Back left upper corner",
    "Back right lower corner",
    "Back right upper corner",
    "Front left lower corner",
    "Front left upper corner",
    "Front right lower corner",
    "Front right upper corner",
    "Left back wheel",
    "Left front wheel",
    "Right back wheel",
    "Right front wheel",
];

pub const CAR_KEYPOINTS: [&str; 12] = [
    "Left front wheel",
    "Left back wheel",
    "Right front wheel",
    "Right back wheel",
    "Left front light",
    "Right front light",
    "Left front windshield",
    "Right front windshield",
    "Left back trunk",
    "Right back trunk",
    "Left back windshield",
    "Right back windshield",
];

pub const MOTORCYCLE_KEYPOINTS: [&str; 10] = [
    "Seat back",
    "Seat front",
    "Head center",
    "Headlight center",
    "Back wheel, left side",
    "Front wheel, left side",
    "Left handle end",
    "Back wheel, right side",
    "Front wheel, right side",
    "Right handle end",
];

const DARK: [f32; 3] = [0.12, 0.12, 0.12];
const HUB: [f32; 3] = [0.38, 0.38, 0.4];

/// The three built-in classes, in class-index order.
pub fn builtin_objects() -> Vec<ObjectSpec> {
    alloc::vec![bus(), car(), motorcycle()]
}

/// Names and keypoint lists of the built-in classes.
pub fn object_class_specs() -> Vec<ObjectClassSpec> {
    builtin_objects()
        .iter()
        .map(|o| ObjectClassSpec {
            name: o.name.clone(),
            keypoints: o.keypoint_names(),
        })
        .collect()
}

fn swap_side(name: &str) -> String {
    name.replace("Left", "\u{1}")
        .replace("Right", "Left")
        .replace('\u{1}', "Right")
        .replace("left", "\u{1}")
        .replace("right", "left")
        .replace('\u{1}', "right")
}

/// Pairs keypoints by swapping "left" and "right" in their names.
pub fn mirror_table_by_name(names: &[&str]) -> Vec<usize> {
    names
        .iter()
        .enumerate()
        .map(|(i, n)| {
            let m = swap_side(n);
            names.iter().position(|o| *o == m).unwrap_or(i)
        })
        .collect()
}

/// Re-centers the mesh on its bounding-box center and attaches keypoints.
fn finish(name: &str, b: MeshBuilder, names: &[&str], positions: &[Vec3]) -> ObjectSpec {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for t in &b.triangles {
        for v in &t.vertices {
            for k in 0..3 {
                lo[k] = lo[k].min(v[k]);
                hi[k] = hi[k].max(v[k]);
            }
        }
    }
    let c = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0, (lo[2] + hi[2]) / 2.0];
    let mut triangles = b.triangles;
    for t in &mut triangles {
        for v in &mut t.vertices {
            *v = sub(*v, c);
        }
    }
    ObjectSpec {
        name: name.to_string(),
        triangles,
        keypoints: names
            .iter()
            .zip(positions)
            .map(|(n, p)| Keypoint3 {
                name: n.to_string(),
                position: sub(*p, c),
            })
            .collect(),
        mirror: mirror_table_by_name(names),
    }
}

/// Elongated box on four wheel blocks. Symmetric front to back in shape and
/// color, so the image alone cannot tell the ends apart.
pub fn bus() -> ObjectSpec {
    let side = [0.86, 0.66, 0.2];
    let front = [0.62, 0.66, 0.62];
    let back = front;
    let roof = [0.82, 0.82, 0.78];
    let mut b = MeshBuilder::new();
    let (l, w, z0, z1) = (2.0, 0.55, 0.25, 1.55);
    b.cuboid([-l, -w, z0], [l, w, z1], [front, back, side, side, roof, DARK]);
    let (wx, wr, wt) = (1.3, 0.3, 0.07);
    for x in [-wx, wx] {
        for (y0, y1) in [(w, w + wt), (-w - wt, -w)] {
            b.cuboid([x - wr, y0, 0.0], [x + wr, y1, 2.0 * wr], [DARK, DARK, HUB, HUB, DARK, DARK]);
        }
    }
    let (wy, wz) = (w + wt, wr);
    let pos = [
        [-l, w, z0],
        [-l, w, z1],
        [-l, -w, z0],
        [-l, -w, z1],
        [l, w, z0],
        [l, w, z1],
        [l, -w, z0],
        [l, -w, z1],
        [-wx, wy, wz],
        [wx, wy, wz],
        [-wx, -wy, wz],
        [wx, -wy, wz],
    ];
    finish("bus", b, &BUS_KEYPOINTS, &pos)
}

/// Low box with a wedge-shaped cabin set slightly forward of center, lamps on
/// the front face and cylinder wheels.
pub fn car() -> ObjectSpec {
    let body = [0.72, 0.16, 0.14];
    let glass_f = [0.55, 0.72, 0.86];
    let glass_b = [0.45, 0.58, 0.72];
    let window = [0.5, 0.62, 0.74];
    let lamp = [0.98, 0.95, 0.7];
    let mut b = MeshBuilder::new();
    let (l, w, z0, z1) = (2.0, 0.85, 0.3, 0.9);
    b.cuboid([-l, -w, z0], [l, w, z1], [body, body, body, body, body, DARK]);
    // cabin: bottom x in [-1.2, 0.9], top x in [-0.8, 0.3]
    let (cy0, cy1, cz) = (0.8, 0.7, 1.4);
    let (bx0, bx1, tx0, tx1) = (-1.2, 0.9, -0.8, 0.3);
    let mut c = [[0.0; 3]; 8];
    for (i, v) in c.iter_mut().enumerate() {
        let (xi, yi, zi) = (i & 4 != 0, i & 2 != 0, i & 1 != 0);
        let x = match (xi, zi) {
            (false, false) => bx0,
            (true, false) => bx1,
            (false, true) => tx0,
            (true, true) => tx1,
        };
        let yw = if zi { cy1 } else { cy0 };
        *v = [x, if yi { yw } else { -yw }, if zi { cz } else { z1 }];
    }
    b.hexahedron(c, [glass_f, glass_b, window, window, body, DARK]);
    let (lx, ly, lz) = (l + 0.03, 0.6, 0.7);
    for y in [-ly, ly] {
        b.cuboid([l, y - 0.15, lz - 0.08], [lx, y + 0.15, lz + 0.08], [lamp, lamp, lamp, lamp, lamp, lamp]);
    }
    let (wx, wr, wz, wt) = (1.3, 0.33, 0.33, 0.1);
    for x in [-wx, wx] {
        b.cylinder_y((x, wz), wr, (w, w + wt), 12, HUB, DARK);
        b.cylinder_y((x, wz), wr, (-w - wt, -w), 12, HUB, DARK);
    }
    let wy = w + wt;
    let pos = [
        [wx, wy, wz],
        [-wx, wy, wz],
        [wx, -wy, wz],
        [-wx, -wy, wz],
        [lx, ly, lz],
        [lx, -ly, lz],
        [tx1, cy1, cz],
        [tx1, -cy1, cz],
        [-l, w, z1],
        [-l, -w, z1],
        [tx0, cy1, cz],
        [tx0, -cy1, cz],
    ];
    finish("car", b, &CAR_KEYPOINTS, &pos)
}

/// Slim frame between two cylinder wheels, with seat, head, headlight and a
/// wide handlebar.
pub fn motorcycle() -> ObjectSpec {
    let paint = [0.2, 0.32, 0.72];
    let seat = [0.28, 0.17, 0.1];
    let chrome = [0.72, 0.72, 0.74];
    let light = [0.97, 0.96, 0.72];
    let mut b = MeshBuilder::new();
    let (wx, wr, wt) = (1.1, 0.45, 0.08);
    for x in [-wx, wx] {
        b.cylinder_y((x, wr), wr, (-wt, wt), 12, HUB, DARK);
    }
    b.cuboid([-0.9, -0.14, 0.5], [0.9, 0.14, 0.95], [paint; 6]);
    let (sx0, sx1, sz) = (-0.7, 0.0, 1.0);
    b.cuboid([sx0, -0.16, 0.95], [sx1, 0.16, sz], [seat; 6]);
    let (hx0, hx1, hz0, hz1) = (0.85, 1.05, 0.75, 1.05);
    b.cuboid([hx0, -0.12, hz0], [hx1, 0.12, hz1], [light, paint, paint, paint, paint, paint]);
    b.cuboid([1.0, -0.05, 0.45], [1.1, 0.05, 0.75], [chrome; 6]);
    b.cuboid([0.75, -0.04, 0.95], [0.85, 0.04, 1.15], [chrome; 6]);
    let (bx, by, bz0, bz1) = ((0.75, 0.85), 0.45, 1.15, 1.22);
    b.cuboid([bx.0, -by, bz0], [bx.1, by, bz1], [chrome; 6]);
    let hmid = (bz0 + bz1) / 2.0;
    let bxm = (bx.0 + bx.1) / 2.0;
    let pos = [
        [sx0, 0.0, sz],
        [sx1, 0.0, sz],
        [(hx0 + hx1) / 2.0, 0.0, hz1],
        [hx1, 0.0, (hz0 + hz1) / 2.0],
        [-wx, wt, wr],
        [wx, wt, wr],
        [bxm, by, hmid],
        [-wx, -wt, wr],
        [wx, -wt, wr],
        [bxm, -by, hmid],
    ];
    finish("motorcycle", b, &MOTORCYCLE_KEYPOINTS, &pos)
}

/// Mirror-symmetric convex box with keypoints at face centers and the four
/// top corners; used by visibility tests.
pub fn test_cuboid() -> ObjectSpec {
    let mut b = MeshBuilder::new();
    let (l, w, h) = (1.2, 0.7, 0.5);
    b.cuboid(
        [-l, -w, -h],
        [l, w, h],
        [
            [0.9, 0.2, 0.2],
            [0.2, 0.9, 0.2],
            [0.2, 0.2, 0.9],
            [0.9, 0.9, 0.2],
            [0.2, 0.9, 0.9],
            [0.9, 0.2, 0.9],
        ],
    );
    let names = [
        "Front center",
        "Back center",
        "Left center",
        "Right center",
        "Top center",
        "Bottom center",
        "Front left top",
        "Front right top",
        "Back left top",
        "Back right top",
    ];
    let pos = [
        [l, 0.0, 0.0],
        [-l, 0.0, 0.0],
        [0.0, w, 0.0],
        [0.0, -w, 0.0],
        [0.0, 0.0, h],
        [0.0, 0.0, -h],
        [l, w, h],
        [l, -w, h],
        [-l, w, h],
        [-l, -w, h],
    ];
    finish("cuboid", b, &names, &pos)
}

use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// Square RGB image, `f32` in `[0, 1]`, stored row-major as `[y][x][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub size: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            data: vec![0.0; size * size * 3],
        }
    }

    pub fn from_data(size: usize, data: Vec<f32>) -> Option<Self> {
        (data.len() == size * size * 3).then_some(Self { size, data })
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.size + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.size + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers at
    /// integers), clamped at the border.
    pub fn sample(&self, u: f64, v: f64) -> [f32; 3] {
        let max = (self.size - 1) as f64;
        let (u, v) = (u.clamp(0.0, max), v.clamp(0.0, max));
        let (x0, y0) = (libm::floor(u) as usize, libm::floor(v) as usize);
        let (x1, y1) = ((x0 + 1).min(self.size - 1), (y0 + 1).min(self.size - 1));
        let (fx, fy) = ((u - x0 as f64) as f32, (v - y0 as f64) as f32);
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0f32; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bot = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bot - top) * fy;
        }
        out
    }

    /// Mirror about the vertical axis.
    pub fn flipped_horizontal(&self) -> Self {
        let s = self.size;
        let mut out = Self::new(s);
        for y in 0..s {
            for x in 0..s {
                out.set(s - 1 - x, y, self.get(x, y));
            }
        }
        out
    }

    /// Channel-first `[3, s, s]` tensor for the network.
    pub fn to_tensor(&self) -> Tensor {
        let s = self.size;
        let mut data = vec![0.0; 3 * s * s];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * s * s + p] = px[c] as f64;
            }
        }
        Tensor::new(&[3, s, s], data).expect("image tensor shape")
    }

    pub fn all_in_unit_range(&self) -> bool {
        self.data.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

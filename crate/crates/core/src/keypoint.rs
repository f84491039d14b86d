//! Encodings of the clicked keypoint: an image-sized keypoint map and a
//! one-hot keypoint-class vector, plus the location perturbation sampler.
//!
//! Coordinates are integer pixels `(x, y)` = (column, row) with the origin
//! at the top-left. Grids are stored row-major, `grid[y * s + x]`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KeypointError {
    #[error("keypoint ({x}, {y}) outside a {size}x{size} image")]
    OutsideImage { x: usize, y: usize, size: usize },
    #[error("keypoint class {class} out of range for {total} classes")]
    ClassOutOfRange { class: usize, total: usize },
    #[error("image size must be at least 2, got {0}")]
    ImageTooSmall(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    #[default]
    Chebyshev,
    Euclidean,
    Manhattan,
    Gaussian,
}

impl MapKind {
    pub const ALL: [MapKind; 4] = [
        MapKind::Chebyshev,
        MapKind::Euclidean,
        MapKind::Manhattan,
        MapKind::Gaussian,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MapKind::Chebyshev => "chebyshev",
            MapKind::Euclidean => "euclidean",
            MapKind::Manhattan => "manhattan",
            MapKind::Gaussian => "gaussian",
        }
    }
}

/// An `s x s` grid in `[0, 1]` encoding one keypoint location.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointMap {
    pub size: usize,
    pub kind: MapKind,
    /// `None` for the all-zero map used by blank-input ablations.
    pub source: Option<(usize, usize)>,
    pub grid: Vec<f64>,
}

impl KeypointMap {
    pub fn new(kind: MapKind, x: usize, y: usize, size: usize) -> Result<Self, KeypointError> {
        if size < 2 {
            return Err(KeypointError::ImageTooSmall(size));
        }
        if x >= size || y >= size {
            return Err(KeypointError::OutsideImage { x, y, size });
        }
        let span = (size - 1) as f64;
        let sigma = gaussian_sigma(size);
        let mut grid = Vec::with_capacity(size * size);
        for row in 0..size {
            for col in 0..size {
                let dx = col.abs_diff(x) as f64;
                let dy = row.abs_diff(y) as f64;
                let v = match kind {
                    MapKind::Chebyshev => dx.max(dy) / span,
                    MapKind::Euclidean => libm::sqrt(dx * dx + dy * dy) / (libm::sqrt(2.0) * span),
                    MapKind::Manhattan => (dx + dy) / (2.0 * span),
                    // peak value exp(0) = 1 is the largest over all maps
                    MapKind::Gaussian => libm::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)),
                };
                grid.push(v.clamp(0.0, 1.0));
            }
        }
        Ok(Self {
            size,
            kind,
            source: Some((x, y)),
            grid,
        })
    }

    pub fn blank(size: usize, kind: MapKind) -> Self {
        Self {
            size,
            kind,
            source: None,
            grid: vec![0.0; size * size],
        }
    }

    /// Value at column `x`, row `y`.
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.grid[y * self.size + x]
    }
}

/// Gaussian standard deviation: 10% of the image side, rounded, at least one pixel.
pub fn gaussian_sigma(size: usize) -> f64 {
    libm::round(0.10 * size as f64).max(1.0)
}

pub fn chebyshev_map(x: usize, y: usize, size: usize) -> Result<KeypointMap, KeypointError> {
    KeypointMap::new(MapKind::Chebyshev, x, y, size)
}

pub fn euclidean_map(x: usize, y: usize, size: usize) -> Result<KeypointMap, KeypointError> {
    KeypointMap::new(MapKind::Euclidean, x, y, size)
}

pub fn manhattan_map(x: usize, y: usize, size: usize) -> Result<KeypointMap, KeypointError> {
    KeypointMap::new(MapKind::Manhattan, x, y, size)
}

pub fn gaussian_map(x: usize, y: usize, size: usize) -> Result<KeypointMap, KeypointError> {
    KeypointMap::new(MapKind::Gaussian, x, y, size)
}

/// One-hot encoding of a keypoint class over all classes of all objects.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointClassVector {
    pub values: Vec<f64>,
    pub hot: Option<usize>,
}

impl KeypointClassVector {
    pub fn blank(total: usize) -> Self {
        Self {
            values: vec![0.0; total],
            hot: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub fn one_hot_class(class: usize, total: usize) -> Result<KeypointClassVector, KeypointError> {
    if class >= total {
        return Err(KeypointError::ClassOutOfRange { class, total });
    }
    let mut values = vec![0.0; total];
    values[class] = 1.0;
    Ok(KeypointClassVector {
        values,
        hot: Some(class),
    })
}

/// Draws `N((x, y), σ² I)`, rounds to the nearest pixel and clamps into the
/// image. `sigma_px <= 0` returns the keypoint unchanged without consuming
/// randomness.
pub fn perturb_keypoint<R: Rng + ?Sized>(
    x: usize,
    y: usize,
    sigma_px: f64,
    size: usize,
    rng: &mut R,
) -> (usize, usize) {
    if !(sigma_px > 0.0) {
        return (x, y);
    }
    let max = (size - 1) as f64;
    let dx: f64 = rng.sample(StandardNormal);
    let dy: f64 = rng.sample(StandardNormal);
    let nx = libm::round(x as f64 + sigma_px * dx).clamp(0.0, max);
    let ny = libm::round(y as f64 + sigma_px * dy).clamp(0.0, max);
    (nx as usize, ny as usize)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chebyshev_examples() {
        let m = chebyshev_map(0, 0, 5).unwrap();
        assert_eq!(m.at(0, 0), 0.0);
        assert_eq!(m.at(4, 4), 1.0);
        let m = chebyshev_map(2, 2, 5).unwrap();
        for (x, y) in [(0, 0), (4, 0), (0, 4), (4, 4)] {
            assert_eq!(m.at(x, y), 0.5);
        }
    }

    #[test]
    fn euclidean_and_manhattan_examples() {
        let e = euclidean_map(0, 0, 5).unwrap();
        let m = manhattan_map(0, 0, 5).unwrap();
        assert_eq!(e.at(0, 0), 0.0);
        assert_eq!(m.at(0, 0), 0.0);
        assert!((e.at(4, 4) - 1.0).abs() < 1e-15);
        assert_eq!(m.at(4, 0), 0.5);
    }

    #[test]
    fn gaussian_examples() {
        let s = 40;
        let sigma = gaussian_sigma(s) as usize;
        assert_eq!(sigma, 4);
        let g = gaussian_map(20, 20, s).unwrap();
        assert_eq!(g.at(20, 20), 1.0);
        assert!((g.at(20 + sigma, 20) - libm::exp(-0.5)).abs() < 1e-15);
        assert!((g.at(20, 20 - sigma) - 0.6065306597126334).abs() < 1e-15);
    }

    #[test]
    fn gaussian_sigma_never_zero() {
        assert_eq!(gaussian_sigma(4), 1.0);
        assert_eq!(gaussian_sigma(64), 6.0);
    }

    #[test]
    fn rejects_outside_keypoints() {
        assert_eq!(
            chebyshev_map(5, 0, 5),
            Err(KeypointError::OutsideImage { x: 5, y: 0, size: 5 })
        );
        assert!(gaussian_map(0, 9, 5).is_err());
        assert_eq!(chebyshev_map(0, 0, 1), Err(KeypointError::ImageTooSmall(1)));
    }

    #[test]
    fn one_hot_examples() {
        assert_eq!(one_hot_class(0, 4).unwrap().values, [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(one_hot_class(3, 4).unwrap().values, [0.0, 0.0, 0.0, 1.0]);
        assert!(one_hot_class(4, 4).is_err());
    }

    #[test]
    fn zero_sigma_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(perturb_keypoint(3, 7, 0.0, 16, &mut rng), (3, 7));
    }

    #[test]
    fn perturbed_samples_stay_in_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..2000 {
            let (x, y) = perturb_keypoint(1, 14, 50.0, 16, &mut rng);
            assert!(x < 16 && y < 16);
        }
    }
}

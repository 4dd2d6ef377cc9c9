//! Dense-feature similarity engine.
//!
//! Cosine similarity between patch vectors, lifted from the patch grid to
//! pixel resolution by bilinear interpolation, summed over anchor points,
//! and differentiated with central differences. Point selection for the
//! prompt builder lives in [`points`].

mod feature_map;
pub mod points;

pub use feature_map::FeatureMap;
pub use points::{region_similarity_stats, sample_anchors, select_negative, select_positive};

use rayon::prelude::*;
use thiserror::Error;

use crate::mask::{MaskError, PixelPoint};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimilarityError {
    #[error("malformed feature map: {0}")]
    Format(String),
    #[error("patch vector {0} is all zeros")]
    ZeroVector(usize),
    #[error("patch vector {0} has non-finite entries")]
    NonFinite(usize),
    #[error("anchor list is empty")]
    NoAnchors,
    #[error("region or mask is empty")]
    EmptyMask,
    #[error("map is {0}x{1} but mask is {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Row-major per-pixel real values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    width: u32,
    height: u32,
    values: Vec<f64>,
}

impl ScalarMap {
    pub fn new(width: u32, height: u32, values: Vec<f64>) -> Result<Self, SimilarityError> {
        if values.len() != width as usize * height as usize {
            return Err(SimilarityError::Format(format!(
                "{} values for a {width}x{height} map",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(SimilarityError::NonFinite(i));
        }
        Ok(ScalarMap { width, height, values })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> f64) -> Self {
        let mut values = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        ScalarMap { width, height, values }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        self.values[y as usize * self.width as usize + x as usize]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Central differences in the interior, one-sided at the borders, zero
    /// along an axis of length 1.
    pub fn gradient(&self) -> (ScalarMap, ScalarMap) {
        let (w, h) = (self.width, self.height);
        let gx = ScalarMap::from_fn(w, h, |x, y| {
            if w == 1 {
                0.0
            } else if x == 0 {
                self.get(1, y) - self.get(0, y)
            } else if x == w - 1 {
                self.get(x, y) - self.get(x - 1, y)
            } else {
                (self.get(x + 1, y) - self.get(x - 1, y)) / 2.0
            }
        });
        let gy = ScalarMap::from_fn(w, h, |x, y| {
            if h == 1 {
                0.0
            } else if y == 0 {
                self.get(x, 1) - self.get(x, 0)
            } else if y == h - 1 {
                self.get(x, y) - self.get(x, y - 1)
            } else {
                (self.get(x, y + 1) - self.get(x, y - 1)) / 2.0
            }
        });
        (gx, gy)
    }
}

/// An accumulated similarity map together with its spatial gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityField {
    pub map: ScalarMap,
    pub grad_x: ScalarMap,
    pub grad_y: ScalarMap,
}

impl SimilarityField {
    pub fn from_map(map: ScalarMap) -> Self {
        let (grad_x, grad_y) = map.gradient();
        SimilarityField { map, grad_x, grad_y }
    }
}

/// Cosine similarity of the anchor's patch against every patch, at grid scale.
pub fn anchor_similarity_grid(f: &FeatureMap, p: PixelPoint) -> Result<Vec<f64>, SimilarityError> {
    p.check_bounds(f.image_w(), f.image_h())?;
    let (ax, ay) = f.cell_of(p.x, p.y);
    let anchor = f.unit_vector(ax, ay);
    let mut out = Vec::with_capacity(f.grid_w() as usize * f.grid_h() as usize);
    for gy in 0..f.grid_h() {
        for gx in 0..f.grid_w() {
            let v = f.unit_vector(gx, gy);
            out.push(anchor.iter().zip(v).map(|(a, b)| a * b).sum());
        }
    }
    Ok(out)
}

/// Bilinear lift of a `grid_w x grid_h` grid to `width x height` pixels,
/// sampling at pixel centers with edge clamping.
pub fn upsample_bilinear(grid: &[f64], grid_w: u32, grid_h: u32, width: u32, height: u32) -> ScalarMap {
    debug_assert_eq!(grid.len(), grid_w as usize * grid_h as usize);
    let axis = |i: u32, n: u32, g: u32| -> (usize, usize, f64) {
        let pos = ((i as f64 + 0.5) * g as f64 / n as f64 - 0.5).clamp(0.0, (g - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(g as usize - 1);
        (i0, i1, pos - i0 as f64)
    };
    let cols: Vec<_> = (0..width).map(|x| axis(x, width, grid_w)).collect();
    let gw = grid_w as usize;
    ScalarMap::from_fn(width, height, |x, y| {
        let (y0, y1, fy) = axis(y, height, grid_h);
        let (x0, x1, fx) = cols[x as usize];
        let top = grid[y0 * gw + x0] * (1.0 - fx) + grid[y0 * gw + x1] * fx;
        let bottom = grid[y1 * gw + x0] * (1.0 - fx) + grid[y1 * gw + x1] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Pixel-resolution cosine similarity map for a single anchor.
pub fn anchor_similarity(f: &FeatureMap, p: PixelPoint) -> Result<ScalarMap, SimilarityError> {
    let grid = anchor_similarity_grid(f, p)?;
    Ok(upsample_bilinear(&grid, f.grid_w(), f.grid_h(), f.image_w(), f.image_h()))
}

/// Sum of per-anchor similarity maps plus its gradient.
///
/// Per-anchor grids are computed in parallel and summed in anchor order, so
/// the result does not depend on scheduling.
pub fn accumulate(f: &FeatureMap, anchors: &[PixelPoint]) -> Result<SimilarityField, SimilarityError> {
    if anchors.is_empty() {
        return Err(SimilarityError::NoAnchors);
    }
    let grids = anchors
        .par_iter()
        .map(|&p| anchor_similarity_grid(f, p))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sum = vec![0.0; grids[0].len()];
    for g in &grids {
        for (s, v) in sum.iter_mut().zip(g) {
            *s += v;
        }
    }
    let map = upsample_bilinear(&sum, f.grid_w(), f.grid_h(), f.image_w(), f.image_h());
    Ok(SimilarityField::from_map(map))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_clusters() -> FeatureMap {
        // 2x2 grid: left column along e0, right column along e1.
        FeatureMap::new(2, 2, 2, 4, 4, vec![1.0, 0.0, 0.0, 3.0, 2.0, 0.0, 0.0, 1.0]).unwrap()
    }

    #[test]
    fn constant_features_give_constant_map() {
        let f = FeatureMap::new(3, 3, 4, 9, 9, [0.5f32, -1.0, 2.0, 0.25].repeat(9)).unwrap();
        let m = anchor_similarity(&f, PixelPoint::positive(4, 4)).unwrap();
        assert!(m.values().iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn orthogonal_clusters_at_grid_scale() {
        let grid = anchor_similarity_grid(&two_clusters(), PixelPoint::positive(0, 3)).unwrap();
        assert_eq!(grid, vec![1.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn out_of_bounds_anchor_rejected() {
        assert!(anchor_similarity(&two_clusters(), PixelPoint::positive(4, 0)).is_err());
        assert_eq!(accumulate(&two_clusters(), &[]), Err(SimilarityError::NoAnchors));
    }

    #[test]
    fn upsample_interpolates_between_cell_centers() {
        // 2x1 grid onto 4x1 pixels: cell centers sit at pixel 0.5 and 2.5 in
        // pixel-center coordinates, i.e. positions -0.25, 0.25, 0.75, 1.25.
        let m = upsample_bilinear(&[0.0, 1.0], 2, 1, 4, 1);
        assert_eq!(m.values(), &[0.0, 0.25, 0.75, 1.0]);
    }

    #[test]
    fn gradient_central_and_one_sided() {
        let m = ScalarMap::new(4, 1, vec![0.0, 1.0, 4.0, 9.0]).unwrap();
        let (gx, gy) = m.gradient();
        assert_eq!(gx.values(), &[1.0, 2.0, 4.0, 5.0]);
        assert_eq!(gy.values(), &[0.0; 4]);
    }

    #[test]
    fn duplicate_anchor_doubles_map() {
        let f = two_clusters();
        let p = PixelPoint::positive(1, 1);
        let once = accumulate(&f, &[p]).unwrap();
        let twice = accumulate(&f, &[p, p]).unwrap();
        for (a, b) in once.map.values().iter().zip(twice.map.values()) {
            assert_eq!(2.0 * a, *b);
        }
        assert_eq!(once.map, anchor_similarity(&f, p).unwrap());
    }
}

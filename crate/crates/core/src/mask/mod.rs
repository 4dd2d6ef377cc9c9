//! Binary mask and box algebra.
//!
//! Every mask produced anywhere in the pipeline is a [`BinaryMask`]: a
//! row-major bitset of exactly `width * height` pixels. All operations are
//! pure and return new values.

mod bbox;
mod components;
pub mod io;
mod metrics;

pub use bbox::BBox;
pub use components::{connected_components, region_center, Region};
pub use metrics::{ciou, giou, iou, mask_box_iou, IouSample};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MaskError {
    #[error("mask dimensions {0}x{1} do not match {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("mask dimensions must be at least 1x1, got {0}x{1}")]
    ZeroSized(u32, u32),
    #[error("bit buffer holds {got} pixels, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("box {0} is not within a {1}x{2} image")]
    BoxOutOfBounds(BBox, u32, u32),
    #[error("degenerate box {0}")]
    DegenerateBox(BBox),
    #[error("region is empty")]
    EmptyRegion,
    #[error("empty sample list")]
    NoSamples,
    #[error("point ({0}, {1}) is outside a {2}x{3} image")]
    PointOutOfBounds(u32, u32, u32, u32),
    #[error("malformed mask data: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// A pixel coordinate carrying a prompt polarity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: u32,
    pub y: u32,
    pub polarity: Polarity,
}

impl PixelPoint {
    pub fn positive(x: u32, y: u32) -> Self {
        Self { x, y, polarity: Polarity::Positive }
    }

    pub fn negative(x: u32, y: u32) -> Self {
        Self { x, y, polarity: Polarity::Negative }
    }

    pub fn with_polarity(self, polarity: Polarity) -> Self {
        Self { polarity, ..self }
    }

    pub fn distance(&self, other: &PixelPoint) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        (dx * dx + dy * dy).sqrt()
    }

    pub fn check_bounds(&self, width: u32, height: u32) -> Result<(), MaskError> {
        if self.x < width && self.y < height {
            Ok(())
        } else {
            Err(MaskError::PointOutOfBounds(self.x, self.y, width, height))
        }
    }
}

const WORD: usize = 64;

/// Row-major bitset over image pixels.
///
/// Bits past `width * height` in the last word are always zero, so word-wise
/// popcounts and equality are exact.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl std::fmt::Debug for BinaryMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BinaryMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &self.area())
            .finish()
    }
}

impl BinaryMask {
    pub fn empty(width: u32, height: u32) -> Result<Self, MaskError> {
        if width == 0 || height == 0 {
            return Err(MaskError::ZeroSized(width, height));
        }
        let len = width as usize * height as usize;
        Ok(Self { width, height, words: vec![0; len.div_ceil(WORD)] })
    }

    pub fn full(width: u32, height: u32) -> Result<Self, MaskError> {
        let mut m = Self::empty(width, height)?;
        for w in &mut m.words {
            *w = u64::MAX;
        }
        m.clear_tail();
        Ok(m)
    }

    pub fn from_bools(width: u32, height: u32, bits: &[bool]) -> Result<Self, MaskError> {
        let mut m = Self::empty(width, height)?;
        if bits.len() != m.len() {
            return Err(MaskError::LengthMismatch { expected: m.len(), got: bits.len() });
        }
        for (i, &b) in bits.iter().enumerate() {
            if b {
                m.words[i / WORD] |= 1 << (i % WORD);
            }
        }
        Ok(m)
    }

    /// Builds a mask by evaluating `f(x, y)` for every pixel.
    pub fn from_fn(
        width: u32,
        height: u32,
        mut f: impl FnMut(u32, u32) -> bool,
    ) -> Result<Self, MaskError> {
        let mut m = Self::empty(width, height)?;
        for y in 0..height {
            for x in 0..width {
                if f(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        Ok(m)
    }

    /// Rasterizes a box into a filled mask.
    pub fn from_box(width: u32, height: u32, b: &BBox) -> Result<Self, MaskError> {
        b.check_within(width, height)?;
        Self::from_fn(width, height, |x, y| b.contains(x, y))
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

    /// Total pixel count.
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    #[inline]
    fn index(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> bool {
        let i = self.index(x, y);
        self.words[i / WORD] >> (i % WORD) & 1 == 1
    }

    /// Bounds-checked variant of [`get`](Self::get); out-of-image reads are `false`.
    pub fn get_signed(&self, x: i64, y: i64) -> bool {
        x >= 0
            && y >= 0
            && (x as u64) < self.width as u64
            && (y as u64) < self.height as u64
            && self.get(x as u32, y as u32)
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        let i = self.index(x, y);
        if value {
            self.words[i / WORD] |= 1 << (i % WORD);
        } else {
            self.words[i / WORD] &= !(1 << (i % WORD));
        }
    }

    pub fn area(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Iterates set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let width = self.width as usize;
        self.words.iter().enumerate().flat_map(move |(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                let i = wi * WORD + bit;
                Some(((i % width) as u32, (i / width) as u32))
            })
        })
    }

    pub fn to_bools(&self) -> Vec<bool> {
        (0..self.len()).map(|i| self.words[i / WORD] >> (i % WORD) & 1 == 1).collect()
    }

    fn clear_tail(&mut self) {
        let rem = self.len() % WORD;
        if rem != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << rem) - 1;
            }
        }
    }

    fn check_same_dims(&self, other: &BinaryMask) -> Result<(), MaskError> {
        if self.dims() == other.dims() {
            Ok(())
        } else {
            Err(MaskError::DimensionMismatch(self.width, self.height, other.width, other.height))
        }
    }

    fn zip_words(
        &self,
        other: &BinaryMask,
        op: impl Fn(u64, u64) -> u64,
    ) -> Result<BinaryMask, MaskError> {
        self.check_same_dims(other)?;
        let words = self.words.iter().zip(&other.words).map(|(&a, &b)| op(a, b)).collect();
        Ok(BinaryMask { width: self.width, height: self.height, words })
    }

    pub fn intersect(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.zip_words(other, |a, b| a & b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.zip_words(other, |a, b| a | b)
    }

    /// Pixels set in `self` and not in `other`.
    pub fn difference(&self, other: &BinaryMask) -> Result<BinaryMask, MaskError> {
        self.zip_words(other, |a, b| a & !b)
    }

    pub fn complement(&self) -> BinaryMask {
        let mut m = BinaryMask {
            width: self.width,
            height: self.height,
            words: self.words.iter().map(|w| !w).collect(),
        };
        m.clear_tail();
        m
    }

    /// `(|a ∩ b|, |a ∪ b|)` without allocating.
    pub fn overlap_counts(&self, other: &BinaryMask) -> Result<(usize, usize), MaskError> {
        self.check_same_dims(other)?;
        Ok(self.words.iter().zip(&other.words).fold((0, 0), |(i, u), (&a, &b)| {
            (i + (a & b).count_ones() as usize, u + (a | b).count_ones() as usize)
        }))
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> Result<bool, MaskError> {
        self.check_same_dims(other)?;
        Ok(self.words.iter().zip(&other.words).all(|(&a, &b)| a & !b == 0))
    }

    pub fn is_disjoint(&self, other: &BinaryMask) -> Result<bool, MaskError> {
        self.check_same_dims(other)?;
        Ok(self.words.iter().zip(&other.words).all(|(&a, &b)| a & b == 0))
    }

    /// Tight bounding box of the set pixels, `None` for an empty mask.
    pub fn bounding_box(&self) -> Option<BBox> {
        let mut it = self.iter_set();
        let (x0, y0) = it.next()?;
        let (mut x_min, mut x_max, mut y_max) = (x0, x0, y0);
        for (x, y) in it {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_max = y;
        }
        Some(BBox { x_min, y_min: y0, x_max: x_max + 1, y_max: y_max + 1 })
    }

    /// Mean of set-pixel coordinates.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let n = self.area();
        if n == 0 {
            return None;
        }
        let (sx, sy) = self
            .iter_set()
            .fold((0u64, 0u64), |(sx, sy), (x, y)| (sx + x as u64, sy + y as u64));
        Some((sx as f64 / n as f64, sy as f64 / n as f64))
    }

    /// 4-neighbourhood erosion; pixels outside the image count as unset.
    pub fn erode4(&self) -> BinaryMask {
        let mut out = BinaryMask::empty(self.width, self.height).expect("dims already valid");
        for (x, y) in self.iter_set() {
            let (xi, yi) = (x as i64, y as i64);
            if self.get_signed(xi - 1, yi)
                && self.get_signed(xi + 1, yi)
                && self.get_signed(xi, yi - 1)
                && self.get_signed(xi, yi + 1)
            {
                out.set(x, y, true);
            }
        }
        out
    }

    /// Square-window dilation by `radius` pixels (8-connected growth).
    pub fn dilate(&self, radius: u32) -> BinaryMask {
        let mut out = self.clone();
        let r = radius as i64;
        for (x, y) in self.iter_set() {
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx >= 0 && ny >= 0 && nx < self.width as i64 && ny < self.height as i64 {
                        out.set(nx as u32, ny as u32, true);
                    }
                }
            }
        }
        out
    }

    /// Square-window erosion by `radius` pixels; the image border counts as unset.
    pub fn erode(&self, radius: u32) -> BinaryMask {
        self.complement().dilate_with_border(radius).complement()
    }

    fn dilate_with_border(&self, radius: u32) -> BinaryMask {
        // Treat out-of-image pixels as set so erosion eats in from the border.
        let mut out = self.dilate(radius);
        let r = radius;
        for y in 0..self.height {
            for x in 0..self.width {
                if x < r || y < r || x + r >= self.width || y + r >= self.height {
                    out.set(x, y, true);
                }
            }
        }
        out
    }
}

use serde::{Deserialize, Serialize};

use super::MaskError;

/// Axis-aligned pixel box; min corner inclusive, max corner exclusive.
///
/// Serialized as `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", try_from = "[u32; 4]")]
pub struct BBox {
    pub x_min: u32,
    pub y_min: u32,
    pub x_max: u32,
    pub y_max: u32,
}

impl BBox {
    pub fn new(x_min: u32, y_min: u32, x_max: u32, y_max: u32) -> Result<Self, MaskError> {
        let b = BBox { x_min, y_min, x_max, y_max };
        if x_min >= x_max || y_min >= y_max {
            return Err(MaskError::DegenerateBox(b));
        }
        Ok(b)
    }

    pub fn width(&self) -> u32 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> u32 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> usize {
        self.width() as usize * self.height() as usize
    }

    pub fn contains(&self, x: u32, y: u32) -> bool {
        x >= self.x_min && x < self.x_max && y >= self.y_min && y < self.y_max
    }

    pub fn is_within(&self, width: u32, height: u32) -> bool {
        self.x_min < self.x_max && self.y_min < self.y_max && self.x_max <= width && self.y_max <= height
    }

    pub fn check_within(&self, width: u32, height: u32) -> Result<(), MaskError> {
        if self.is_within(width, height) {
            Ok(())
        } else {
            Err(MaskError::BoxOutOfBounds(*self, width, height))
        }
    }

    /// Clamps the box into the image; `None` if nothing is left.
    pub fn clamped(&self, width: u32, height: u32) -> Option<BBox> {
        let x_max = self.x_max.min(width);
        let y_max = self.y_max.min(height);
        BBox::new(self.x_min.min(x_max), self.y_min.min(y_max), x_max, y_max).ok()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min as f64 + self.x_max as f64) / 2.0,
            (self.y_min as f64 + self.y_max as f64) / 2.0,
        )
    }
}

impl std::fmt::Display for BBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}, {}, {})", self.x_min, self.y_min, self.x_max, self.y_max)
    }
}

impl From<BBox> for [u32; 4] {
    fn from(b: BBox) -> Self {
        [b.x_min, b.y_min, b.x_max, b.y_max]
    }
}

impl TryFrom<[u32; 4]> for BBox {
    type Error = MaskError;

    fn try_from(v: [u32; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(2, 0, 2, 5).is_err());
        assert!(BBox::new(0, 3, 1, 1).is_err());
    }

    #[test]
    fn bounds_and_clamping() {
        let b = BBox::new(1, 1, 5, 4).unwrap();
        assert!(b.is_within(5, 4));
        assert!(!b.is_within(4, 4));
        assert_eq!(b.clamped(3, 3), Some(BBox::new(1, 1, 3, 3).unwrap()));
        assert_eq!(BBox::new(5, 5, 9, 9).unwrap().clamped(4, 4), None);
    }

    #[test]
    fn serializes_as_array() {
        let b = BBox::new(0, 1, 2, 3).unwrap();
        assert_eq!(serde_json::to_string(&b).unwrap(), "[0,1,2,3]");
        assert!(serde_json::from_str::<BBox>("[3,1,2,3]").is_err());
    }
}

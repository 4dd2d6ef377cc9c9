use super::{BBox, BinaryMask, MaskError};

/// Intersection over union. Two empty masks score 0, never 1: a candidate
/// with no pixels must not pass an overlap filter.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, MaskError> {
    let (inter, union) = a.overlap_counts(b)?;
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

/// IoU between a mask and a box rasterized as a filled mask.
pub fn mask_box_iou(m: &BinaryMask, b: &BBox) -> Result<f64, MaskError> {
    let boxed = BinaryMask::from_box(m.width(), m.height(), b)?;
    iou(m, &boxed)
}

/// Per-sample intersection and union counts, kept so aggregate metrics can be
/// recomputed from stored reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
pub struct IouSample {
    pub intersection: usize,
    pub union: usize,
}

impl IouSample {
    pub fn measure(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self, MaskError> {
        let (intersection, union) = pred.overlap_counts(gt)?;
        Ok(IouSample { intersection, union })
    }

    pub fn iou(&self) -> f64 {
        if self.union == 0 {
            0.0
        } else {
            self.intersection as f64 / self.union as f64
        }
    }
}

/// Mean per-sample IoU.
pub fn giou(samples: &[(BinaryMask, BinaryMask)]) -> Result<f64, MaskError> {
    if samples.is_empty() {
        return Err(MaskError::NoSamples);
    }
    let mut sum = 0.0;
    for (pred, gt) in samples {
        sum += iou(pred, gt)?;
    }
    Ok(sum / samples.len() as f64)
}

/// Cumulative IoU: summed intersections over summed unions.
pub fn ciou(samples: &[(BinaryMask, BinaryMask)]) -> Result<f64, MaskError> {
    if samples.is_empty() {
        return Err(MaskError::NoSamples);
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (pred, gt) in samples {
        let (i, u) = pred.overlap_counts(gt)?;
        inter += i;
        union += u;
    }
    Ok(if union == 0 { 0.0 } else { inter as f64 / union as f64 })
}

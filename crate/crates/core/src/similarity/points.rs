//! Anchor sampling and positive/negative point selection over a similarity field.

use super::{ScalarMap, SimilarityError, SimilarityField};
use crate::mask::{region_center, BinaryMask, PixelPoint};

fn check_dims(map: &ScalarMap, mask: &BinaryMask) -> Result<(), SimilarityError> {
    if map.dims() == mask.dims() {
        Ok(())
    } else {
        Err(SimilarityError::DimensionMismatch(map.width(), map.height(), mask.width(), mask.height()))
    }
}

/// Deterministically picks `k` anchor pixels inside `omega`.
///
/// The mask is eroded by one pixel (unless that empties it) and its bounding
/// box split into a `ceil(sqrt(k)) x ceil(sqrt(k))` grid. Each occupied cell,
/// in row-major order, contributes the in-mask pixel nearest the centroid of
/// its in-cell pixels. The list is truncated to `k`, or padded with the
/// center of the eroded mask.
pub fn sample_anchors(omega: &BinaryMask, k: usize) -> Result<Vec<PixelPoint>, SimilarityError> {
    if omega.is_empty() || k == 0 {
        return Err(SimilarityError::EmptyMask);
    }
    let eroded = omega.erode4();
    let core = if eroded.is_empty() { omega.clone() } else { eroded };
    let bbox = core.bounding_box().expect("core is nonempty");
    let g = (k as f64).sqrt().ceil() as usize;
    let (bw, bh) = (bbox.width() as usize, bbox.height() as usize);

    let mut cells: Vec<Option<BinaryMask>> = vec![None; g * g];
    for (x, y) in core.iter_set() {
        let cx = (x - bbox.x_min) as usize * g / bw;
        let cy = (y - bbox.y_min) as usize * g / bh;
        let cell = cells[cy * g + cx].get_or_insert_with(|| {
            BinaryMask::empty(core.width(), core.height()).expect("dims already valid")
        });
        cell.set(x, y, true);
    }

    let mut anchors: Vec<PixelPoint> = cells
        .iter()
        .flatten()
        .map(|cell| region_center(cell).expect("occupied cell"))
        .take(k)
        .collect();
    let pad = region_center(&core)?;
    anchors.resize(k, pad);
    Ok(anchors)
}

/// The in-`omega` pixel with the largest field value, ties by smallest `(y, x)`.
pub fn select_positive(field: &SimilarityField, omega: &BinaryMask) -> Result<PixelPoint, SimilarityError> {
    check_dims(&field.map, omega)?;
    let mut best: Option<(f64, u32, u32)> = None;
    for (x, y) in omega.iter_set() {
        let v = field.map.get(x, y);
        if best.is_none_or(|(bv, _, _)| v > bv) {
            best = Some((v, x, y));
        }
    }
    best.map(|(_, x, y)| PixelPoint::positive(x, y)).ok_or(SimilarityError::EmptyMask)
}

/// Score of a negative-point candidate: the similarity decay rate along the
/// unit direction pointing away from the positive point.
#[inline]
pub fn decay_score(field: &SimilarityField, p_pos: PixelPoint, x: u32, y: u32) -> f64 {
    let dx = x as f64 - p_pos.x as f64;
    let dy = y as f64 - p_pos.y as f64;
    let norm = (dx * dx + dy * dy).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    -(field.grad_x.get(x, y) * dx / norm + field.grad_y.get(x, y) * dy / norm)
}

/// Negative point outside `omega` along the steepest similarity decay from
/// `p_pos`, restricted to pixels whose value is below `s_neg * max(field)`.
///
/// `s_neg` is relative to the field maximum because the accumulated field
/// scales with the anchor count. Returns `None` when no pixel qualifies.
pub fn select_negative(
    field: &SimilarityField,
    omega: &BinaryMask,
    p_pos: PixelPoint,
    s_neg: f64,
) -> Result<Option<PixelPoint>, SimilarityError> {
    check_dims(&field.map, omega)?;
    p_pos.check_bounds(omega.width(), omega.height())?;
    let threshold = s_neg * field.map.max();
    let mut best: Option<(f64, u32, u32)> = None;
    for (x, y) in omega.complement().iter_set() {
        if field.map.get(x, y) >= threshold {
            continue;
        }
        let score = decay_score(field, p_pos, x, y);
        if best.is_none_or(|(bs, _, _)| score > bs) {
            best = Some((score, x, y));
        }
    }
    Ok(best.map(|(_, x, y)| PixelPoint::negative(x, y)))
}

/// Exact `(min, max)` of `map` over the pixels of `region`.
pub fn region_similarity_stats(map: &ScalarMap, region: &BinaryMask) -> Result<(f64, f64), SimilarityError> {
    check_dims(map, region)?;
    region
        .iter_set()
        .map(|(x, y)| map.get(x, y))
        .fold(None, |acc: Option<(f64, f64)>, v| {
            Some(acc.map_or((v, v), |(lo, hi)| (lo.min(v), hi.max(v))))
        })
        .ok_or(SimilarityError::EmptyMask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(w: u32, h: u32, f: impl FnMut(u32, u32) -> f64) -> SimilarityField {
        SimilarityField::from_map(ScalarMap::from_fn(w, h, f))
    }

    #[test]
    fn single_anchor_is_region_center() {
        let omega = BinaryMask::from_fn(10, 8, |x, y| (2..9).contains(&x) && (1..6).contains(&y)).unwrap();
        let anchors = sample_anchors(&omega, 1).unwrap();
        assert_eq!(anchors, vec![region_center(&omega).unwrap()]);
    }

    #[test]
    fn four_anchors_land_in_distinct_quadrants() {
        let omega = BinaryMask::full(8, 8).unwrap();
        let anchors = sample_anchors(&omega, 4).unwrap();
        // Eroded core is [1, 7)^2, split at 4: cells [1,4) and [4,7).
        // Centroids (2, 2), (5, 2), (2, 5), (5, 5) are pixels themselves.
        let expected: Vec<_> = [(2, 2), (5, 2), (2, 5), (5, 5)]
            .iter()
            .map(|&(x, y)| PixelPoint::positive(x, y))
            .collect();
        assert_eq!(anchors, expected);
    }

    #[test]
    fn single_pixel_mask_pads_with_copies() {
        let mut omega = BinaryMask::empty(5, 5).unwrap();
        omega.set(3, 1, true);
        let anchors = sample_anchors(&omega, 5).unwrap();
        assert_eq!(anchors, vec![PixelPoint::positive(3, 1); 5]);
        assert_eq!(sample_anchors(&BinaryMask::empty(5, 5).unwrap(), 3), Err(SimilarityError::EmptyMask));
    }

    #[test]
    fn positive_tie_break_and_unique_max() {
        let omega = BinaryMask::from_fn(6, 6, |x, y| x >= 2 && y >= 3).unwrap();
        let flat = field(6, 6, |_, _| 0.7);
        assert_eq!(select_positive(&flat, &omega).unwrap(), PixelPoint::positive(2, 3));
        let peaked = field(6, 6, |x, y| if (x, y) == (4, 5) { 2.0 } else { 0.0 });
        assert_eq!(select_positive(&peaked, &omega).unwrap(), PixelPoint::positive(4, 5));
    }

    #[test]
    fn negative_on_constant_field() {
        let omega = BinaryMask::from_fn(4, 4, |x, y| x < 2 && y < 2).unwrap();
        let pos = PixelPoint::positive(0, 0);
        // Positive constant: nothing lies below 0.3 * c.
        assert_eq!(select_negative(&field(4, 4, |_, _| 1.0), &omega, pos, 0.3).unwrap(), None);
        // Negative constant: everything outside qualifies with score 0,
        // so the first pixel outside omega in raster order wins.
        let neg = select_negative(&field(4, 4, |_, _| -1.0), &omega, pos, 0.3).unwrap();
        assert_eq!(neg, Some(PixelPoint::negative(2, 0)));
    }

    #[test]
    fn negative_absent_when_everything_outside_is_similar() {
        let omega = BinaryMask::from_fn(5, 5, |x, _| x == 0).unwrap();
        let f = field(5, 5, |x, _| 1.0 - 0.01 * x as f64);
        assert_eq!(select_negative(&f, &omega, PixelPoint::positive(0, 2), 0.3).unwrap(), None);
    }

    #[test]
    fn region_stats() {
        let map = ScalarMap::from_fn(3, 3, |x, y| (x + 3 * y) as f64);
        let region = BinaryMask::from_fn(3, 3, |x, y| x >= 1 && y <= 1).unwrap();
        assert_eq!(region_similarity_stats(&map, &region).unwrap(), (1.0, 5.0));
        let mut one = BinaryMask::empty(3, 3).unwrap();
        one.set(2, 2, true);
        assert_eq!(region_similarity_stats(&map, &one).unwrap(), (8.0, 8.0));
        assert_eq!(
            region_similarity_stats(&map, &BinaryMask::empty(3, 3).unwrap()),
            Err(SimilarityError::EmptyMask)
        );
    }
}

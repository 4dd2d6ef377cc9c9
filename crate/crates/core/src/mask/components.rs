use super::{BinaryMask, MaskError, PixelPoint};

/// A single 4-connected component with its cached area and center.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    mask: BinaryMask,
    area: usize,
    center: PixelPoint,
}

impl Region {
    /// Wraps a mask as a region, checking that it is nonempty and 4-connected.
    pub fn from_mask(mask: BinaryMask) -> Result<Region, MaskError> {
        let area = mask.area();
        let center = region_center(&mask)?;
        let (x, y) = mask.iter_set().next().ok_or(MaskError::EmptyRegion)?;
        if flood4(&mask, x, y).area() != area {
            return Err(MaskError::Format("region mask is not 4-connected".into()));
        }
        Ok(Region { mask, area, center })
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn area(&self) -> usize {
        self.area
    }

    pub fn center(&self) -> PixelPoint {
        self.center
    }

    pub fn into_mask(self) -> BinaryMask {
        self.mask
    }
}

/// The set pixel closest to the centroid of `mask`, ties by smallest `(y, x)`.
///
/// Always lands on the mask, even for concave shapes whose centroid does not.
pub fn region_center(mask: &BinaryMask) -> Result<PixelPoint, MaskError> {
    let n = mask.area() as i128;
    if n == 0 {
        return Err(MaskError::EmptyRegion);
    }
    let (sx, sy) = mask
        .iter_set()
        .fold((0i128, 0i128), |(sx, sy), (x, y)| (sx + x as i128, sy + y as i128));
    // Distances scaled by n^2 stay integral, so ties are exact.
    let mut best: Option<(i128, u32, u32)> = None;
    // Row-major iteration, so strict `<` keeps the smallest (y, x) on ties.
    for (x, y) in mask.iter_set() {
        let dx = n * x as i128 - sx;
        let dy = n * y as i128 - sy;
        let d = dx * dx + dy * dy;
        if best.is_none_or(|(bd, _, _)| d < bd) {
            best = Some((d, x, y));
        }
    }
    let (_, x, y) = best.expect("nonempty mask");
    Ok(PixelPoint::positive(x, y))
}

fn flood4(mask: &BinaryMask, sx: u32, sy: u32) -> BinaryMask {
    let (w, h) = mask.dims();
    let mut out = BinaryMask::empty(w, h).expect("dims already valid");
    let mut stack = vec![(sx, sy)];
    out.set(sx, sy, true);
    while let Some((x, y)) = stack.pop() {
        let mut visit = |nx: u32, ny: u32| {
            if mask.get(nx, ny) && !out.get(nx, ny) {
                out.set(nx, ny, true);
                stack.push((nx, ny));
            }
        };
        if x > 0 {
            visit(x - 1, y);
        }
        if x + 1 < w {
            visit(x + 1, y);
        }
        if y > 0 {
            visit(x, y - 1);
        }
        if y + 1 < h {
            visit(x, y + 1);
        }
    }
    out
}

/// Maximal 4-connected components with `area >= min_area`.
///
/// Ordered by descending area; ties go to the component whose first pixel in
/// raster order comes first.
pub fn connected_components(mask: &BinaryMask, min_area: usize) -> Vec<Region> {
    let mut remaining = mask.clone();
    let mut found: Vec<(usize, usize, Region)> = Vec::new();
    // Raster order of discovery doubles as the tie-break key.
    let mut order = 0;
    loop {
        let Some((x, y)) = remaining.iter_set().next() else { break };
        let comp = flood4(&remaining, x, y);
        remaining = remaining.difference(&comp).expect("same dims");
        let area = comp.area();
        if area >= min_area.max(1) {
            let center = region_center(&comp).expect("component is nonempty");
            found.push((area, order, Region { mask: comp, area, center }));
        }
        order += 1;
    }
    found.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    found.into_iter().map(|(_, _, r)| r).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(w: u32, h: u32, s: &str) -> BinaryMask {
        let bits: Vec<bool> = s.chars().filter(|c| !c.is_whitespace()).map(|c| c == '#').collect();
        BinaryMask::from_bools(w, h, &bits).unwrap()
    }

    #[test]
    fn empty_mask_has_no_components() {
        assert!(connected_components(&BinaryMask::empty(4, 4).unwrap(), 1).is_empty());
    }

    #[test]
    fn two_disjoint_blocks() {
        let m = rows(5, 2, "##.## ##.##");
        let regions = connected_components(&m, 1);
        assert_eq!(regions.len(), 2);
        assert!(regions.iter().all(|r| r.area() == 4));
        // Equal areas: left block (first in raster order) comes first.
        assert!(regions[0].mask().get(0, 0));
    }

    #[test]
    fn diagonal_pixels_are_separate() {
        let m = rows(2, 2, "#. .#");
        assert_eq!(connected_components(&m, 1).len(), 2);
    }

    #[test]
    fn min_area_filters_small_components() {
        let m = rows(5, 2, "###.# ###..");
        let regions = connected_components(&m, 2);
        assert_eq!(regions.len(), 1);
        assert_eq!(regions[0].area(), 6);
    }

    #[test]
    fn ordered_by_descending_area() {
        let m = rows(6, 1, "#.###.");
        let areas: Vec<usize> = connected_components(&m, 1).iter().map(Region::area).collect();
        assert_eq!(areas, vec![3, 1]);
    }

    #[test]
    fn center_of_block_and_single_pixel() {
        let full = BinaryMask::full(3, 3).unwrap();
        assert_eq!(region_center(&full).unwrap(), PixelPoint::positive(1, 1));
        let single = rows(3, 2, "... ..#");
        assert_eq!(region_center(&single).unwrap(), PixelPoint::positive(2, 1));
        assert_eq!(region_center(&BinaryMask::empty(2, 2).unwrap()), Err(MaskError::EmptyRegion));
    }

    #[test]
    fn center_of_l_shape_lies_on_the_shape() {
        // Pixels: (0,0),(0,1),(0,2),(1,2),(2,2). Centroid (0.6, 1.4) is off the shape.
        // Squared distances: (0,1)->0.52, (1,2)->0.52, (0,2)->0.72, others larger.
        // Tie between (0,1) and (1,2) goes to smaller y.
        let l = rows(3, 3, "#.. #.. ###");
        assert!(!l.get(1, 1));
        assert_eq!(region_center(&l).unwrap(), PixelPoint::positive(0, 1));
    }

    #[test]
    fn region_from_mask_rejects_disconnected() {
        assert!(Region::from_mask(rows(3, 1, "#.#")).is_err());
        let r = Region::from_mask(rows(3, 1, "##.")).unwrap();
        assert_eq!(r.area(), 2);
    }
}

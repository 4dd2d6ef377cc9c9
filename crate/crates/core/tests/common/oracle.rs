//! Brute-force reference implementations, written independently of the
//! library: plain `Vec<bool>` grids, union-find labelling, tent-weight
//! interpolation and exhaustive arg-max scans.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use refseg_core::mask::{BinaryMask, PixelPoint};
use refseg_core::similarity::{FeatureMap, SimilarityField};

/// Row-major boolean grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub w: usize,
    pub h: usize,
    pub bits: Vec<bool>,
}

impl Grid {
    pub fn of(m: &BinaryMask) -> Grid {
        let (w, h) = (m.width() as usize, m.height() as usize);
        let mut bits = vec![false; w * h];
        for y in 0..h {
            for x in 0..w {
                bits[y * w + x] = m.get(x as u32, y as u32);
            }
        }
        Grid { w, h, bits }
    }

    pub fn zip(&self, o: &Grid, f: impl Fn(bool, bool) -> bool) -> Grid {
        Grid { w: self.w, h: self.h, bits: self.bits.iter().zip(&o.bits).map(|(&a, &b)| f(a, b)).collect() }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Random mask: blobs of random rectangles over sparse noise.
pub fn random_mask(rng: &mut ChaCha8Rng, max_side: u32) -> BinaryMask {
    let w = rng.random_range(1..=max_side);
    let h = rng.random_range(1..=max_side);
    let noise = rng.random_range(0.0..0.6);
    let mut bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(noise)).collect();
    for _ in 0..rng.random_range(0..6) {
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        let (x1, y1) = (rng.random_range(x0..w) + 1, rng.random_range(y0..h) + 1);
        let value = rng.random_bool(0.7);
        for y in y0..y1 {
            for x in x0..x1 {
                bits[(y * w + x) as usize] = value;
            }
        }
    }
    BinaryMask::from_bools(w, h, &bits).unwrap()
}

pub fn iou(a: &Grid, b: &Grid) -> f64 {
    let inter = a.zip(b, |x, y| x && y).count();
    let union = a.zip(b, |x, y| x || y).count();
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// 4-connected components via union-find, as sorted pixel-index lists,
/// ordered by descending size then by first pixel.
pub fn components(g: &Grid, min_area: usize) -> Vec<Vec<usize>> {
    let n = g.w * g.h;
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        if !g.bits[i] {
            continue;
        }
        let (x, y) = (i % g.w, i / g.w);
        for j in [(x + 1 < g.w).then(|| i + 1), (y + 1 < g.h).then(|| i + g.w)].into_iter().flatten() {
            if g.bits[j] {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in (0..n).filter(|&i| g.bits[i]) {
        let r = find(&mut parent, i);
        groups.entry(r).or_default().push(i);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().filter(|c| c.len() >= min_area.max(1)).collect();
    out.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    out
}

/// Pixel of `pixels` nearest the centroid; ties to the smallest `(y, x)`.
pub fn center(pixels: &[(usize, usize)]) -> (usize, usize) {
    let n = pixels.len() as i128;
    let sx: i128 = pixels.iter().map(|p| p.0 as i128).sum();
    let sy: i128 = pixels.iter().map(|p| p.1 as i128).sum();
    *pixels
        .iter()
        .min_by_key(|&&(x, y)| {
            let (dx, dy) = (x as i128 * n - sx, y as i128 * n - sy);
            (dx * dx + dy * dy, y, x)
        })
        .unwrap()
}

/// Random feature map: a few cluster directions plus noise, so similarity
/// fields have structure.
pub fn random_features(rng: &mut ChaCha8Rng, max_grid: u32, max_image: u32) -> FeatureMap {
    let gw = rng.random_range(1..=max_grid);
    let gh = rng.random_range(1..=max_grid);
    let iw = rng.random_range(gw..=max_image.max(gw));
    let ih = rng.random_range(gh..=max_image.max(gh));
    let dim = rng.random_range(1..=8u32);
    let clusters: Vec<Vec<f32>> =
        (0..3).map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).collect();
    let mut values = Vec::new();
    for _ in 0..gw * gh {
        let c = &clusters[rng.random_range(0..3)];
        let mut v: Vec<f32> = c.iter().map(|a| a + rng.random_range(-0.3f32..0.3)).collect();
        if v.iter().all(|x| *x == 0.0) {
            v[0] = 1.0;
        }
        values.extend(v);
    }
    FeatureMap::new(gh, gw, dim, iw, ih, values).unwrap()
}

fn unit(f: &FeatureMap, gx: usize, gy: usize) -> Vec<f64> {
    let d = f.dim() as usize;
    let i = (gy * f.grid_w() as usize + gx) * d;
    let v: Vec<f64> = f.raw_values()[i..i + d].iter().map(|&x| x as f64).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / norm).collect()
}

/// Tent weight of grid index `i` at continuous position `u`.
fn tent(u: f64, i: usize) -> f64 {
    (1.0 - (u - i as f64).abs()).max(0.0)
}

fn grid_pos(p: usize, pixels: usize, cells: usize) -> f64 {
    ((p as f64 + 0.5) * cells as f64 / pixels as f64 - 0.5).clamp(0.0, (cells - 1) as f64)
}

/// Summed cosine-similarity map at pixel resolution for `anchors`.
pub fn similarity(f: &FeatureMap, anchors: &[(usize, usize)]) -> Vec<f64> {
    let (gw, gh) = (f.grid_w() as usize, f.grid_h() as usize);
    let (iw, ih) = (f.image_w() as usize, f.image_h() as usize);
    let mut grid = vec![0.0; gw * gh];
    for &(ax, ay) in anchors {
        let a = unit(f, (ax * gw / iw).min(gw - 1), (ay * gh / ih).min(gh - 1));
        for gy in 0..gh {
            for gx in 0..gw {
                grid[gy * gw + gx] += a.iter().zip(unit(f, gx, gy)).map(|(p, q)| p * q).sum::<f64>();
            }
        }
    }
    let mut out = vec![0.0; iw * ih];
    for y in 0..ih {
        let v = grid_pos(y, ih, gh);
        for x in 0..iw {
            let u = grid_pos(x, iw, gw);
            let mut s = 0.0;
            for gy in 0..gh {
                let wy = tent(v, gy);
                if wy == 0.0 {
                    continue;
                }
                for gx in 0..gw {
                    s += wy * tent(u, gx) * grid[gy * gw + gx];
                }
            }
            out[y * iw + x] = s;
        }
    }
    out
}

/// Central differences inside, one-sided at the borders, zero for width 1.
pub fn gradient(map: &[f64], w: usize, h: usize) -> (Vec<f64>, Vec<f64>) {
    let at = |x: usize, y: usize| map[y * w + x];
    let mut gx = vec![0.0; w * h];
    let mut gy = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            if xr > xl {
                gx[y * w + x] = (at(xr, y) - at(xl, y)) / (xr - xl) as f64;
            }
            if yd > yu {
                gy[y * w + x] = (at(x, yd) - at(x, yu)) / (yd - yu) as f64;
            }
        }
    }
    (gx, gy)
}

/// Exhaustive positive point: maximal field value on the mask, ties to smallest `(y, x)`.
pub fn positive(field: &SimilarityField, omega: &Grid) -> Option<(usize, usize)> {
    let mut best: Option<(f64, usize, usize)> = None;
    for y in 0..omega.h {
        for x in 0..omega.w {
            if !omega.bits[y * omega.w + x] {
                continue;
            }
            let v = field.map.get(x as u32, y as u32);
            if best.is_none_or(|(b, _, _)| v > b) {
                best = Some((v, x, y));
            }
        }
    }
    best.map(|(_, x, y)| (x, y))
}

/// Exhaustive negative point: among off-mask pixels below `s_neg * max`,
/// the steepest decay away from `pos`; ties to smallest `(y, x)`.
pub fn negative(field: &SimilarityField, omega: &Grid, pos: (usize, usize), s_neg: f64) -> Option<(usize, usize)> {
    let max = field.map.values().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<(f64, usize, usize)> = None;
    for y in 0..omega.h {
        for x in 0..omega.w {
            let (xu, yu) = (x as u32, y as u32);
            if omega.bits[y * omega.w + x] || field.map.get(xu, yu) >= s_neg * max {
                continue;
            }
            let (dx, dy) = (x as f64 - pos.0 as f64, y as f64 - pos.1 as f64);
            let r = (dx * dx + dy * dy).sqrt();
            let score = if r == 0.0 { 0.0 } else { -(field.grad_x.get(xu, yu) * dx / r + field.grad_y.get(xu, yu) * dy / r) };
            if best.is_none_or(|(b, _, _)| score > b) {
                best = Some((score, x, y));
            }
        }
    }
    best.map(|(_, x, y)| (x, y))
}

pub fn point(p: PixelPoint) -> (usize, usize) {
    (p.x as usize, p.y as usize)
}

use std::io::{Read, Write};

use super::SimilarityError;

const MAGIC: &[u8; 4] = b"FMAP";
const VERSION: u32 = 1;

/// Patch-grid feature tensor describing an `image_w x image_h` image.
///
/// Patch vectors are unit-normalized on construction; the raw values are
/// kept so the map can be written back out unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    grid_h: u32,
    grid_w: u32,
    dim: u32,
    image_w: u32,
    image_h: u32,
    raw: Vec<f32>,
    unit: Vec<f64>,
}

impl FeatureMap {
    pub fn new(
        grid_h: u32,
        grid_w: u32,
        dim: u32,
        image_w: u32,
        image_h: u32,
        values: Vec<f32>,
    ) -> Result<Self, SimilarityError> {
        if grid_h == 0 || grid_w == 0 || dim == 0 || image_w == 0 || image_h == 0 {
            return Err(SimilarityError::Format("zero-sized feature map".into()));
        }
        let expected = grid_h as usize * grid_w as usize * dim as usize;
        if values.len() != expected {
            return Err(SimilarityError::Format(format!(
                "expected {expected} feature values, got {}",
                values.len()
            )));
        }
        let d = dim as usize;
        let mut unit = Vec::with_capacity(expected);
        for (cell, v) in values.chunks_exact(d).enumerate() {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(SimilarityError::NonFinite(cell));
            }
            let norm = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(SimilarityError::ZeroVector(cell));
            }
            unit.extend(v.iter().map(|&x| x as f64 / norm));
        }
        Ok(FeatureMap { grid_h, grid_w, dim, image_w, image_h, raw: values, unit })
    }

    pub fn grid_h(&self) -> u32 {
        self.grid_h
    }

    pub fn grid_w(&self) -> u32 {
        self.grid_w
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn image_w(&self) -> u32 {
        self.image_w
    }

    pub fn image_h(&self) -> u32 {
        self.image_h
    }

    pub fn raw_values(&self) -> &[f32] {
        &self.raw
    }

    /// Unit-normalized vector of grid cell `(gx, gy)`.
    pub fn unit_vector(&self, gx: u32, gy: u32) -> &[f64] {
        let d = self.dim as usize;
        let i = (gy as usize * self.grid_w as usize + gx as usize) * d;
        &self.unit[i..i + d]
    }

    /// Grid cell containing pixel `(x, y)`.
    pub fn cell_of(&self, x: u32, y: u32) -> (u32, u32) {
        let gx = (x as u64 * self.grid_w as u64 / self.image_w as u64) as u32;
        let gy = (y as u64 * self.grid_h as u64 / self.image_h as u64) as u32;
        (gx.min(self.grid_w - 1), gy.min(self.grid_h - 1))
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        for v in [VERSION, self.grid_h, self.grid_w, self.dim, self.image_w, self.image_h] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &self.raw {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(28 + self.raw.len() * 4);
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, SimilarityError> {
        let io = |e: std::io::Error| SimilarityError::Format(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(SimilarityError::Format("missing FMAP magic".into()));
        }
        let mut header = [0u32; 6];
        for h in &mut header {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(io)?;
            *h = u32::from_le_bytes(b);
        }
        let [version, grid_h, grid_w, dim, image_w, image_h] = header;
        if version != VERSION {
            return Err(SimilarityError::Format(format!("unsupported FMAP version {version}")));
        }
        let count = grid_h as usize * grid_w as usize * dim as usize;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(io)?;
        if bytes.len() != count * 4 {
            return Err(SimilarityError::Format(format!(
                "FMAP payload holds {} bytes, expected {}",
                bytes.len(),
                count * 4
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        FeatureMap::new(grid_h, grid_w, dim, image_w, image_h, values)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SimilarityError> {
        Self::read_from(bytes)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, SimilarityError> {
        let bytes = std::fs::read(path)
            .map_err(|e| SimilarityError::Format(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

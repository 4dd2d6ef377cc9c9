use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};
use sha2::{Digest, Sha256};

/// An RGB input image with its PNG encoding and content digest.
///
/// The digest is `sha256:<hex>` over the PNG bytes, which is also the key a
/// gateway returns for an uploaded image.
#[derive(Clone)]
pub struct Image {
    rgb: RgbImage,
    png: Vec<u8>,
    digest: String,
}

impl std::fmt::Debug for Image {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Image")
            .field("width", &self.rgb.width())
            .field("height", &self.rgb.height())
            .field("digest", &self.digest)
            .finish()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Image {
    pub fn from_rgb(rgb: RgbImage) -> Self {
        let mut buf = Cursor::new(Vec::new());
        rgb.write_to(&mut buf, ImageFormat::Png).expect("in-memory PNG encoding cannot fail");
        let png = buf.into_inner();
        let digest = format!("sha256:{}", sha256_hex(&png));
        Image { rgb, png, digest }
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, image::ImageError> {
        let rgb = image::load_from_memory(bytes)?.to_rgb8();
        Ok(Self::from_rgb(rgb))
    }

    pub fn load(path: &Path) -> Result<Self, image::ImageError> {
        Ok(Self::from_rgb(image::open(path)?.to_rgb8()))
    }

    pub fn rgb(&self) -> &RgbImage {
        &self.rgb
    }

    pub fn png_bytes(&self) -> &[u8] {
        &self.png
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn width(&self) -> u32 {
        self.rgb.width()
    }

    pub fn height(&self) -> u32 {
        self.rgb.height()
    }

    pub fn dims(&self) -> (u32, u32) {
        self.rgb.dimensions()
    }
}

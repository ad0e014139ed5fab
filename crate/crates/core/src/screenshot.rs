//! Original-image handle used by the pipeline.
//!
//! Dimensions are known up front; pixel data is decoded lazily, only when a
//! backend actually asks for encoded crop bytes. Synthetic runs use
//! `blank:WxH` references that never touch the filesystem.

use std::io::Cursor;
use std::path::{Path, PathBuf};
use std::sync::{Arc, OnceLock};

use image::{DynamicImage, ImageFormat, RgbImage};
use thiserror::Error;

use crate::geometry::PixelBox;

#[derive(Debug, Error)]
pub enum ImageLoadError {
    #[error("cannot read image {path}: {message}")]
    Read { path: String, message: String },
    #[error("malformed image reference `{0}` (expected a path, an http(s) URL or blank:WxH)")]
    BadReference(String),
    #[error("crop {crop:?} lies outside the {width}x{height} image")]
    CropOutOfBounds {
        crop: PixelBox,
        width: u32,
        height: u32,
    },
    #[error("failed to encode crop: {0}")]
    Encode(String),
}

#[derive(Debug, Clone)]
enum Source {
    File(PathBuf),
    Memory(Arc<DynamicImage>),
    Blank,
}

#[derive(Debug)]
pub struct Screenshot {
    source: Source,
    width: u32,
    height: u32,
    decoded: OnceLock<Result<Arc<DynamicImage>, String>>,
}

impl Screenshot {
    pub fn blank(width: u32, height: u32) -> Self {
        Self {
            source: Source::Blank,
            width: width.max(1),
            height: height.max(1),
            decoded: OnceLock::new(),
        }
    }

    pub fn from_image(img: DynamicImage) -> Self {
        let (width, height) = (img.width(), img.height());
        Self {
            source: Source::Memory(Arc::new(img)),
            width,
            height,
            decoded: OnceLock::new(),
        }
    }

    /// Opens a file, reading only the header for dimensions.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, ImageLoadError> {
        let path = path.as_ref();
        let (width, height) =
            image::image_dimensions(path).map_err(|e| ImageLoadError::Read {
                path: path.display().to_string(),
                message: e.to_string(),
            })?;
        Ok(Self {
            source: Source::File(path.to_path_buf()),
            width,
            height,
            decoded: OnceLock::new(),
        })
    }

    /// Resolves a manifest image reference. Relative paths are taken
    /// relative to `base_dir`.
    pub fn from_reference(reference: &str, base_dir: &Path) -> Result<Self, ImageLoadError> {
        if let Some((w, h)) = parse_blank(reference)? {
            return Ok(Self::blank(w, h));
        }
        if reference.starts_with("http://") || reference.starts_with("https://") {
            return fetch_url(reference);
        }
        let path = Path::new(reference);
        let path = if path.is_absolute() {
            path.to_path_buf()
        } else {
            base_dir.join(path)
        };
        Self::open(path)
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

    pub fn is_blank(&self) -> bool {
        matches!(self.source, Source::Blank)
    }

    fn pixels(&self) -> Result<Arc<DynamicImage>, ImageLoadError> {
        let res = self.decoded.get_or_init(|| match &self.source {
            Source::Memory(img) => Ok(img.clone()),
            Source::Blank => Ok(Arc::new(DynamicImage::ImageRgb8(RgbImage::new(
                self.width,
                self.height,
            )))),
            Source::File(path) => image::open(path)
                .map(Arc::new)
                .map_err(|e| format!("{}: {e}", path.display())),
        });
        res.clone().map_err(|message| ImageLoadError::Read {
            path: self.describe(),
            message,
        })
    }

    /// Crops in original-image pixels and encodes losslessly as PNG.
    pub fn encode_crop_png(&self, crop: &PixelBox) -> Result<Vec<u8>, ImageLoadError> {
        if !crop.fits_in(self.width, self.height) {
            return Err(ImageLoadError::CropOutOfBounds {
                crop: *crop,
                width: self.width,
                height: self.height,
            });
        }
        let view = if self.is_blank() {
            DynamicImage::ImageRgb8(RgbImage::new(crop.width, crop.height))
        } else {
            self.pixels()?
                .crop_imm(crop.left, crop.top, crop.width, crop.height)
        };
        let mut out = Cursor::new(Vec::new());
        view.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| ImageLoadError::Encode(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn describe(&self) -> String {
        match &self.source {
            Source::File(p) => p.display().to_string(),
            Source::Memory(_) => format!("<memory {}x{}>", self.width, self.height),
            Source::Blank => format!("blank:{}x{}", self.width, self.height),
        }
    }
}

fn parse_blank(reference: &str) -> Result<Option<(u32, u32)>, ImageLoadError> {
    let Some(dims) = reference.strip_prefix("blank:") else {
        return Ok(None);
    };
    let bad = || ImageLoadError::BadReference(reference.to_string());
    let (w, h) = dims.split_once(['x', 'X']).ok_or_else(bad)?;
    let w: u32 = w.trim().parse().map_err(|_| bad())?;
    let h: u32 = h.trim().parse().map_err(|_| bad())?;
    if w == 0 || h == 0 {
        return Err(bad());
    }
    Ok(Some((w, h)))
}

fn fetch_url(url: &str) -> Result<Screenshot, ImageLoadError> {
    let read_err = |message: String| ImageLoadError::Read {
        path: url.to_string(),
        message,
    };
    let mut resp = ureq::get(url).call().map_err(|e| read_err(e.to_string()))?;
    let bytes = resp
        .body_mut()
        .read_to_vec()
        .map_err(|e| read_err(e.to_string()))?;
    let img = image::load_from_memory(&bytes).map_err(|e| read_err(e.to_string()))?;
    Ok(Screenshot::from_image(img))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_reference() {
        let s = Screenshot::from_reference("blank:3840x2160", Path::new(".")).unwrap();
        assert_eq!(s.dims(), (3840, 2160));
        assert!(Screenshot::from_reference("blank:0x5", Path::new(".")).is_err());
        assert!(Screenshot::from_reference("blank:axb", Path::new(".")).is_err());
    }

    #[test]
    fn crop_encodes_png_of_crop_size() {
        let img = DynamicImage::ImageRgb8(RgbImage::from_fn(40, 30, |x, y| {
            image::Rgb([x as u8, y as u8, 0])
        }));
        let s = Screenshot::from_image(img);
        let png = s.encode_crop_png(&PixelBox::new(10, 5, 20, 10)).unwrap();
        let back = image::load_from_memory(&png).unwrap().to_rgb8();
        assert_eq!(back.dimensions(), (20, 10));
        assert_eq!(back.get_pixel(0, 0), &image::Rgb([10, 5, 0]));
        assert!(s.encode_crop_png(&PixelBox::new(30, 0, 20, 10)).is_err());
    }

    #[test]
    fn missing_file_is_an_error() {
        let err = Screenshot::open("/nonexistent/shot.png").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/shot.png"));
    }
}

//! Coordinate algebra for viewports, crop windows and pixel mapping.
//!
//! Normalized quantities ([`NormPoint`], [`Viewport`]) are generic over the
//! float type; pixel quantities ([`PixelPoint`], [`PixelBox`]) are integers.
//! Every crop is expressed in pixels of the *original* image, so composing
//! views never accumulates mapping error.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point ({x}, {y}) is outside the unit square")]
    PointOutOfRange { x: f64, y: f64 },
    #[error("viewport ({x1}, {y1}, {x2}, {y2}) is not a non-empty sub-rectangle of the unit square")]
    InvalidViewport { x1: f64, y1: f64, x2: f64, y2: f64 },
    #[error("cannot split {width}x{height} into a {rows}x{cols} grid")]
    DegenerateGrid {
        width: u32,
        height: u32,
        rows: u32,
        cols: u32,
    },
    #[error("shrink ratio {0} is outside the open interval (0, 1)")]
    InvalidShrinkRatio(f64),
    #[error("minimum crop size must be at least 1 pixel")]
    InvalidMinCrop,
}

/// A point in normalized coordinates of some view, `0 <= x, y <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormPoint<S = f64> {
    pub x: S,
    pub y: S,
}

impl<S: Scalar> NormPoint<S> {
    pub fn new(x: S, y: S) -> Result<Self, GeometryError> {
        let unit = |v: S| v >= S::zero() && v <= S::one();
        if unit(x) && unit(y) {
            Ok(Self { x, y })
        } else {
            Err(GeometryError::PointOutOfRange {
                x: x.to_f64_lossy(),
                y: y.to_f64_lossy(),
            })
        }
    }

    /// Clamps each coordinate into `[0, 1]`. NaN maps to 0.
    pub fn clamped(x: S, y: S) -> Self {
        let clamp = |v: S| {
            if v.is_nan() {
                S::zero()
            } else {
                v.max(S::zero()).min(S::one())
            }
        };
        Self {
            x: clamp(x),
            y: clamp(y),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x >= S::zero() && self.x <= S::one() && self.y >= S::zero() && self.y <= S::one()
    }
}

/// Integer pixel location. Bounds are relative to the image it addresses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelPoint {
    pub x: u32,
    pub y: u32,
}

impl PixelPoint {
    pub const fn new(x: u32, y: u32) -> Self {
        Self { x, y }
    }

    /// Euclidean distance in pixels.
    pub fn distance(&self, other: &PixelPoint) -> f64 {
        let dx = self.x as f64 - other.x as f64;
        let dy = self.y as f64 - other.y as f64;
        dx.hypot(dy)
    }
}

/// Normalized rectangle `(x1, y1, x2, y2)` over the original image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Viewport<S = f64> {
    pub x1: S,
    pub y1: S,
    pub x2: S,
    pub y2: S,
}

impl<S: Scalar> Viewport<S> {
    pub fn full() -> Self {
        Self {
            x1: S::zero(),
            y1: S::zero(),
            x2: S::one(),
            y2: S::one(),
        }
    }

    pub fn new(x1: S, y1: S, x2: S, y2: S) -> Result<Self, GeometryError> {
        let v = Self { x1, y1, x2, y2 };
        if v.is_valid() {
            Ok(v)
        } else {
            Err(GeometryError::InvalidViewport {
                x1: x1.to_f64_lossy(),
                y1: y1.to_f64_lossy(),
                x2: x2.to_f64_lossy(),
                y2: y2.to_f64_lossy(),
            })
        }
    }

    pub fn is_valid(&self) -> bool {
        S::zero() <= self.x1
            && self.x1 < self.x2
            && self.x2 <= S::one()
            && S::zero() <= self.y1
            && self.y1 < self.y2
            && self.y2 <= S::one()
    }

    pub fn width(&self) -> S {
        self.x2 - self.x1
    }

    pub fn height(&self) -> S {
        self.y2 - self.y1
    }

    pub fn area(&self) -> S {
        self.width() * self.height()
    }

    pub fn contains(&self, p: &NormPoint<S>) -> bool {
        self.x1 <= p.x && p.x <= self.x2 && self.y1 <= p.y && p.y <= self.y2
    }
}

/// Pixel rectangle `[left, left + width) x [top, top + height)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PixelBox {
    pub left: u32,
    pub top: u32,
    pub width: u32,
    pub height: u32,
}

impl PixelBox {
    pub const fn new(left: u32, top: u32, width: u32, height: u32) -> Self {
        Self {
            left,
            top,
            width,
            height,
        }
    }

    pub const fn full(width: u32, height: u32) -> Self {
        Self::new(0, 0, width, height)
    }

    pub fn right(&self) -> u32 {
        self.left + self.width
    }

    pub fn bottom(&self) -> u32 {
        self.top + self.height
    }

    pub fn area(&self) -> u64 {
        self.width as u64 * self.height as u64
    }

    pub fn fits_in(&self, img_w: u32, img_h: u32) -> bool {
        self.width >= 1
            && self.height >= 1
            && self.left as u64 + self.width as u64 <= img_w as u64
            && self.top as u64 + self.height as u64 <= img_h as u64
    }

    pub fn intersects(&self, other: &PixelBox) -> bool {
        self.left < other.right()
            && other.left < self.right()
            && self.top < other.bottom()
            && other.top < self.bottom()
    }

    pub fn intersection(&self, other: &PixelBox) -> Option<PixelBox> {
        if !self.intersects(other) {
            return None;
        }
        let left = self.left.max(other.left);
        let top = self.top.max(other.top);
        let right = self.right().min(other.right());
        let bottom = self.bottom().min(other.bottom());
        Some(PixelBox::new(left, top, right - left, bottom - top))
    }

    /// Center in continuous pixel coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            self.left as f64 + self.width as f64 / 2.0,
            self.top as f64 + self.height as f64 / 2.0,
        )
    }
}

/// How a crop window that would cross the image edge is placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    /// Keep the window size, translate it back inside the image.
    #[default]
    Shift,
    /// Keep the center, intersect the window with the image.
    Clip,
    /// Keep the center, reduce the window to the largest centered fit.
    Shrink,
}

impl BoundaryMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            BoundaryMode::Shift => "shift",
            BoundaryMode::Clip => "clip",
            BoundaryMode::Shrink => "shrink",
        }
    }
}

impl std::str::FromStr for BoundaryMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "shift" => Ok(BoundaryMode::Shift),
            "clip" => Ok(BoundaryMode::Clip),
            "shrink" => Ok(BoundaryMode::Shrink),
            other => Err(format!(
                "unknown boundary mode `{other}` (expected shift, clip or shrink)"
            )),
        }
    }
}

impl std::fmt::Display for BoundaryMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Maps a point predicted on view `viewport` back to original-image
/// normalized coordinates.
pub fn map_to_original<S: Scalar>(p: NormPoint<S>, viewport: &Viewport<S>) -> NormPoint<S> {
    NormPoint {
        x: viewport.x1 + (viewport.x2 - viewport.x1) * p.x,
        y: viewport.y1 + (viewport.y2 - viewport.y1) * p.y,
    }
}

/// Converts a normalized point to a pixel index, rounding half away from
/// zero and clamping into `[0, dim - 1]`.
pub fn to_pixels<S: Scalar>(p: NormPoint<S>, width: u32, height: u32) -> PixelPoint {
    fn axis<S: Scalar>(v: S, dim: u32) -> u32 {
        let max = dim.saturating_sub(1) as f64;
        let scaled = (S::from_count(dim) * v).round().to_f64_lossy();
        if scaled.is_nan() {
            return 0;
        }
        scaled.clamp(0.0, max) as u32
    }
    PixelPoint {
        x: axis(p.x, width),
        y: axis(p.y, height),
    }
}

/// Splits an image into `rows x cols` disjoint tiles in row-major order.
/// Remainder pixels go to the last row and column.
pub fn patch_grid(
    width: u32,
    height: u32,
    rows: u32,
    cols: u32,
) -> Result<Vec<PixelBox>, GeometryError> {
    if rows == 0 || cols == 0 || width < cols || height < rows {
        return Err(GeometryError::DegenerateGrid {
            width,
            height,
            rows,
            cols,
        });
    }
    let tile_w = width / cols;
    let tile_h = height / rows;
    let mut tiles = Vec::with_capacity((rows * cols) as usize);
    for r in 0..rows {
        let top = r * tile_h;
        let h = if r + 1 == rows { height - top } else { tile_h };
        for c in 0..cols {
            let left = c * tile_w;
            let w = if c + 1 == cols { width - left } else { tile_w };
            tiles.push(PixelBox::new(left, top, w, h));
        }
    }
    Ok(tiles)
}

/// Size of the next crop: `max(floor(rho * dim), m)` per axis, never larger
/// than the current view, so a view already at or below the floor does not
/// grow back.
pub fn next_crop_size(
    width_t: u32,
    height_t: u32,
    rho: f64,
    min_crop: u32,
) -> Result<(u32, u32), GeometryError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(GeometryError::InvalidShrinkRatio(rho));
    }
    if min_crop == 0 {
        return Err(GeometryError::InvalidMinCrop);
    }
    let axis = |dim: u32| {
        let shrunk = (rho * dim as f64).floor() as u32;
        shrunk.max(min_crop).min(dim).max(1)
    };
    Ok((axis(width_t), axis(height_t)))
}

/// Places a `w x h` window around `center` inside an `img_w x img_h` image.
///
/// Sizes are clamped into `[1, img]` and the center into the image, so the
/// result is always a non-empty box inside the image.
pub fn place_window(
    center: PixelPoint,
    w: u32,
    h: u32,
    img_w: u32,
    img_h: u32,
    mode: BoundaryMode,
) -> PixelBox {
    let (left, width) = place_axis(center.x, w, img_w, mode);
    let (top, height) = place_axis(center.y, h, img_h, mode);
    PixelBox::new(left, top, width, height)
}

fn place_axis(center: u32, size: u32, dim: u32, mode: BoundaryMode) -> (u32, u32) {
    let dim = dim.max(1);
    let size = size.clamp(1, dim);
    let c = center.min(dim - 1) as i64;
    let (size_i, dim_i) = (size as i64, dim as i64);
    match mode {
        BoundaryMode::Shift => {
            let start = (c - size_i / 2).clamp(0, dim_i - size_i);
            (start as u32, size)
        }
        BoundaryMode::Clip => {
            let start = c - size_i / 2;
            let lo = start.max(0);
            let hi = (start + size_i).min(dim_i);
            (lo as u32, (hi - lo) as u32)
        }
        BoundaryMode::Shrink => {
            let half = (size_i / 2).min(c).min(dim_i - c);
            if half == 0 {
                (c as u32, 1)
            } else {
                ((c - half) as u32, (2 * half) as u32)
            }
        }
    }
}

/// Normalizes an original-image pixel box into a viewport.
pub fn viewport_from_box<S: Scalar>(b: &PixelBox, img_w: u32, img_h: u32) -> Viewport<S> {
    let (w, h) = (S::from_count(img_w), S::from_count(img_h));
    Viewport {
        x1: S::from_count(b.left) / w,
        y1: S::from_count(b.top) / h,
        x2: S::from_count(b.left + b.width) / w,
        y2: S::from_count(b.top + b.height) / h,
    }
}

/// Half-open containment test.
pub fn point_in_box(p: &PixelPoint, b: &PixelBox) -> bool {
    b.left <= p.x && p.x < b.right() && b.top <= p.y && p.y < b.bottom()
}

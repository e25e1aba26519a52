//! Bounding-box representations and overlap.
//!
//! [`BBox`] (normalized center format) is the canonical box used across the
//! crate. [`PixelRect`] only appears at format boundaries such as Pascal VOC
//! corners or canvas mapping.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack allowed on the `[0, 1]` boundary checks.
pub const BOUNDARY_EPS: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("box size must be positive, got w={w} h={h}")]
    NonPositiveSize { w: f64, h: f64 },
    #[error("box extends outside the unit square: cx={cx} cy={cy} w={w} h={h}")]
    OutOfBounds { cx: f64, cy: f64, w: f64, h: f64 },
    #[error("non-finite box coordinate")]
    NonFinite,
    #[error("image dimensions must be at least 1x1, got {0}x{1}")]
    DegenerateImage(u32, u32),
    #[error("invalid pixel rectangle ({xmin}, {ymin}, {xmax}, {ymax})")]
    InvalidRect {
        xmin: f64,
        ymin: f64,
        xmax: f64,
        ymax: f64,
    },
}

/// Axis-aligned box in normalized center format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    /// Builds a box and checks the unit-square invariants.
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self, GeometryError> {
        let b = BBox { cx, cy, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let BBox { cx, cy, w, h } = *self;
        if ![cx, cy, w, h].iter().all(|v| v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(GeometryError::NonPositiveSize { w, h });
        }
        let inside =
            |c: f64, s: f64| c - s / 2.0 >= -BOUNDARY_EPS && c + s / 2.0 <= 1.0 + BOUNDARY_EPS;
        if !inside(cx, w) || !inside(cy, h) || w > 1.0 + BOUNDARY_EPS || h > 1.0 + BOUNDARY_EPS {
            return Err(GeometryError::OutOfBounds { cx, cy, w, h });
        }
        Ok(())
    }

    /// Builds a box from normalized corners after clamping them to `[0, 1]`.
    ///
    /// Returns `None` when the clamped box has no area.
    pub fn from_corners_clamped(x0: f64, y0: f64, x1: f64, y1: f64) -> Option<Self> {
        if ![x0, y0, x1, y1].iter().all(|v| v.is_finite()) {
            return None;
        }
        let (x0, x1) = (x0.clamp(0.0, 1.0), x1.clamp(0.0, 1.0));
        let (y0, y1) = (y0.clamp(0.0, 1.0), y1.clamp(0.0, 1.0));
        if x1 <= x0 || y1 <= y0 {
            return None;
        }
        Some(BBox {
            cx: (x0 + x1) / 2.0,
            cy: (y0 + y1) / 2.0,
            w: x1 - x0,
            h: y1 - y0,
        })
    }

    /// `(xmin, ymin, xmax, ymax)` in normalized units.
    #[inline]
    pub fn corners(&self) -> (f64, f64, f64, f64) {
        (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )
    }

    #[inline]
    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let (ax0, ay0, ax1, ay1) = self.corners();
        let (bx0, by0, bx1, by1) = other.corners();
        let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
        let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
        iw * ih
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        iou(self, other)
    }
}

/// Intersection over union of two boxes.
///
/// Boxes that share only an edge have zero intersection area and IoU 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Corner rectangle in pixel units, origin at the top-left of the image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelRect {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl PixelRect {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, GeometryError> {
        let r = PixelRect {
            xmin,
            ymin,
            xmax,
            ymax,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let PixelRect {
            xmin,
            ymin,
            xmax,
            ymax,
        } = *self;
        let finite = [xmin, ymin, xmax, ymax].iter().all(|v| v.is_finite());
        if !finite || xmin >= xmax || ymin >= ymax || xmin < 0.0 || ymin < 0.0 {
            return Err(GeometryError::InvalidRect {
                xmin,
                ymin,
                xmax,
                ymax,
            });
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }
}

fn check_dims(img_w: u32, img_h: u32) -> Result<(f64, f64), GeometryError> {
    if img_w == 0 || img_h == 0 {
        return Err(GeometryError::DegenerateImage(img_w, img_h));
    }
    Ok((img_w as f64, img_h as f64))
}

/// Maps a normalized box onto an `img_w` x `img_h` pixel grid.
pub fn to_pixel(b: &BBox, img_w: u32, img_h: u32) -> Result<PixelRect, GeometryError> {
    let (w, h) = check_dims(img_w, img_h)?;
    let (x0, y0, x1, y1) = b.corners();
    Ok(PixelRect {
        xmin: (x0 * w).max(0.0),
        ymin: (y0 * h).max(0.0),
        xmax: x1 * w,
        ymax: y1 * h,
    })
}

/// Inverse of [`to_pixel`]. The rectangle must lie inside the image.
pub fn from_pixel(r: &PixelRect, img_w: u32, img_h: u32) -> Result<BBox, GeometryError> {
    let (w, h) = check_dims(img_w, img_h)?;
    r.validate()?;
    BBox::new(
        (r.xmin + r.xmax) / 2.0 / w,
        (r.ymin + r.ymax) / 2.0 / h,
        (r.xmax - r.xmin) / w,
        (r.ymax - r.ymin) / h,
    )
}

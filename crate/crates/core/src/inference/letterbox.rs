use image::imageops::{self, FilterType};

use super::InferenceError;
use crate::geometry::BBox;
use crate::raster::RasterImage;

/// Canvas fill around the resized image.
pub const LETTERBOX_FILL: [u8; 3] = [128, 128, 128];

/// Affine map from source pixels to network-canvas pixels:
/// `canvas = source * scale + pad`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Letterbox {
    pub scale: f64,
    pub pad_x: u32,
    pub pad_y: u32,
    pub src_w: u32,
    pub src_h: u32,
    pub net_w: u32,
    pub net_h: u32,
}

impl Letterbox {
    pub fn compute(src_w: u32, src_h: u32, net_w: u32, net_h: u32) -> Result<Self, InferenceError> {
        if net_w == 0 || net_h == 0 || !net_w.is_multiple_of(32) || !net_h.is_multiple_of(32) {
            return Err(InferenceError::Config(format!(
                "network size {net_w}x{net_h} must be a positive multiple of 32"
            )));
        }
        if src_w == 0 || src_h == 0 {
            return Err(InferenceError::Config("source image is empty".into()));
        }
        let scale = (net_w as f64 / src_w as f64).min(net_h as f64 / src_h as f64);
        let (rw, rh) = resized_dims(src_w, src_h, scale, net_w, net_h);
        Ok(Letterbox {
            scale,
            pad_x: (net_w - rw) / 2,
            pad_y: (net_h - rh) / 2,
            src_w,
            src_h,
            net_w,
            net_h,
        })
    }

    /// Size of the resized image inside the canvas.
    pub fn resized(&self) -> (u32, u32) {
        resized_dims(self.src_w, self.src_h, self.scale, self.net_w, self.net_h)
    }

    pub fn to_canvas(&self, x: f64, y: f64) -> (f64, f64) {
        (
            x * self.scale + self.pad_x as f64,
            y * self.scale + self.pad_y as f64,
        )
    }

    pub fn to_source(&self, x: f64, y: f64) -> (f64, f64) {
        (
            (x - self.pad_x as f64) / self.scale,
            (y - self.pad_y as f64) / self.scale,
        )
    }

    /// Maps a canvas-normalized box to source-normalized coordinates,
    /// clamped to the source image. `None` if nothing of it lies on the image.
    pub fn box_to_source(&self, b: &BBox) -> Option<BBox> {
        let (x0, y0, x1, y1) = b.corners();
        let (nw, nh) = (self.net_w as f64, self.net_h as f64);
        let (sx0, sy0) = self.to_source(x0 * nw, y0 * nh);
        let (sx1, sy1) = self.to_source(x1 * nw, y1 * nh);
        let (w, h) = (self.src_w as f64, self.src_h as f64);
        BBox::from_corners_clamped(sx0 / w, sy0 / h, sx1 / w, sy1 / h)
    }
}

fn resized_dims(src_w: u32, src_h: u32, scale: f64, net_w: u32, net_h: u32) -> (u32, u32) {
    let rw = ((src_w as f64 * scale).round() as u32).clamp(1, net_w);
    let rh = ((src_h as f64 * scale).round() as u32).clamp(1, net_h);
    (rw, rh)
}

/// Aspect-preserving resize onto a gray `net_w x net_h` canvas, centered.
pub fn letterbox(
    img: &RasterImage,
    net_w: u32,
    net_h: u32,
) -> Result<(RasterImage, Letterbox), InferenceError> {
    let lb = Letterbox::compute(img.width(), img.height(), net_w, net_h)?;
    let (rw, rh) = lb.resized();
    let resized = if (rw, rh) == (img.width(), img.height()) {
        img.clone()
    } else {
        RasterImage::from(imageops::resize(
            &img.to_rgb_image(),
            rw,
            rh,
            FilterType::Triangle,
        ))
    };
    if (rw, rh) == (net_w, net_h) {
        return Ok((resized, lb));
    }
    let mut canvas = RasterImage::filled(net_w, net_h, LETTERBOX_FILL);
    for y in 0..rh {
        for x in 0..rw {
            canvas.put(x + lb.pad_x, y + lb.pad_y, resized.get(x, y));
        }
    }
    Ok((canvas, lb))
}

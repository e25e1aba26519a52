//! Deterministic image and box augmentations: right-angle and arbitrary
//! rotation, up/right flips and box blur.
//!
//! Every transform returns a new image together with the boxes mapped into
//! the new frame. Nothing here uses randomness.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::annotations::{AnnotatedBox, ImageAnnotation};
use crate::geometry::BBox;
use crate::raster::RasterImage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AugmentError {
    #[error("rotation angle must lie in (0, 360) degrees, got {0}")]
    InvalidAngle(f64),
    #[error("blur radius must be at least 1")]
    InvalidRadius,
    #[error("unknown augmentation {0:?}")]
    UnknownOp(String),
    #[error("{image_id}: annotation is {ann_w}x{ann_h} but image is {img_w}x{img_h}")]
    DimsMismatch {
        image_id: String,
        ann_w: u32,
        ann_h: u32,
        img_w: u32,
        img_h: u32,
    },
    #[error("{image_id}: {message}")]
    Image { image_id: String, message: String },
}

/// One augmentation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AugmentOp {
    Rot90,
    Rot180,
    Rot270,
    /// Clockwise rotation by an arbitrary angle in degrees. Lossy: boxes
    /// become the hull of their rotated corners.
    Rotate(f64),
    FlipUp,
    FlipRight,
    /// Box blur with a `(2r+1)` square kernel.
    Blur(u32),
}

impl AugmentOp {
    pub fn validate(&self) -> Result<(), AugmentError> {
        match *self {
            AugmentOp::Rotate(t) if !(t.is_finite() && t > 0.0 && t < 360.0) => {
                Err(AugmentError::InvalidAngle(t))
            }
            AugmentOp::Blur(0) => Err(AugmentError::InvalidRadius),
            _ => Ok(()),
        }
    }

    /// Suffix used to derive augmented image ids, e.g. `case01__rot90`.
    pub fn id_suffix(&self) -> String {
        match *self {
            AugmentOp::Rot90 => "rot90".into(),
            AugmentOp::Rot180 => "rot180".into(),
            AugmentOp::Rot270 => "rot270".into(),
            AugmentOp::Rotate(t) => format!("rot{t}"),
            AugmentOp::FlipUp => "flip_up".into(),
            AugmentOp::FlipRight => "flip_right".into(),
            AugmentOp::Blur(r) => format!("blur{r}"),
        }
    }

    pub fn apply(
        &self,
        img: &RasterImage,
        boxes: &[AnnotatedBox],
    ) -> Result<(RasterImage, Vec<AnnotatedBox>), AugmentError> {
        self.validate()?;
        let bboxes: Vec<BBox> = boxes.iter().map(|b| b.bbox).collect();
        let (out, mapped) = match *self {
            AugmentOp::Rot90 => rotate(img, &bboxes, 90.0)?,
            AugmentOp::Rot180 => rotate(img, &bboxes, 180.0)?,
            AugmentOp::Rot270 => rotate(img, &bboxes, 270.0)?,
            AugmentOp::Rotate(t) => rotate(img, &bboxes, t)?,
            AugmentOp::FlipUp => flip_up(img, &bboxes),
            AugmentOp::FlipRight => flip_right(img, &bboxes),
            AugmentOp::Blur(r) => blur(img, &bboxes, r)?,
        };
        let relabeled = boxes
            .iter()
            .zip(mapped)
            .map(|(src, bbox)| AnnotatedBox {
                class_id: src.class_id,
                bbox,
            })
            .collect();
        Ok((out, relabeled))
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            AugmentOp::Rotate(t) => write!(f, "rot:{t}"),
            AugmentOp::Blur(r) => write!(f, "blur:{r}"),
            other => f.write_str(&other.id_suffix()),
        }
    }
}

impl FromStr for AugmentOp {
    type Err = AugmentError;

    /// Accepts `rot90`, `rot180`, `rot270`, `rot:<deg>`, `flip_up`,
    /// `flip_right` and `blur:<radius>` (plain `blur` means radius 1).
    fn from_str(s: &str) -> Result<Self, AugmentError> {
        let s = s.trim();
        let unknown = || AugmentError::UnknownOp(s.to_string());
        let op = match s {
            "rot90" => AugmentOp::Rot90,
            "rot180" => AugmentOp::Rot180,
            "rot270" => AugmentOp::Rot270,
            "flip_up" => AugmentOp::FlipUp,
            "flip_right" => AugmentOp::FlipRight,
            "blur" => AugmentOp::Blur(1),
            _ => match s.split_once(':') {
                Some(("rot", deg)) => AugmentOp::Rotate(deg.parse().map_err(|_| unknown())?),
                Some(("blur", r)) => AugmentOp::Blur(r.parse().map_err(|_| unknown())?),
                _ => return Err(unknown()),
            },
        };
        op.validate()?;
        Ok(op)
    }
}

/// Parses a comma-separated op list such as `rot90,flip_up,blur:2`.
pub fn parse_ops(list: &str) -> Result<Vec<AugmentOp>, AugmentError> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect()
}

/// Horizontal mirror: `cx -> 1 - cx`.
pub fn flip_right(img: &RasterImage, boxes: &[BBox]) -> (RasterImage, Vec<BBox>) {
    let (w, h) = (img.width(), img.height());
    let mut out = img.clone();
    for y in 0..h {
        for x in 0..w {
            out.put(x, y, img.get(w - 1 - x, y));
        }
    }
    let mapped = boxes
        .iter()
        .map(|b| BBox {
            cx: 1.0 - b.cx,
            ..*b
        })
        .collect();
    (out, mapped)
}

/// Vertical mirror: `cy -> 1 - cy`.
pub fn flip_up(img: &RasterImage, boxes: &[BBox]) -> (RasterImage, Vec<BBox>) {
    let (w, h) = (img.width(), img.height());
    let row = w as usize * 3;
    let src = img.pixels();
    let mut pixels = Vec::with_capacity(src.len());
    for y in (0..h as usize).rev() {
        pixels.extend_from_slice(&src[y * row..(y + 1) * row]);
    }
    let out = RasterImage::new(w, h, pixels).expect("same dimensions");
    let mapped = boxes
        .iter()
        .map(|b| BBox {
            cy: 1.0 - b.cy,
            ..*b
        })
        .collect();
    (out, mapped)
}

/// Clockwise rotation by `degrees`, black fill for non-right angles.
pub fn rotate(
    img: &RasterImage,
    boxes: &[BBox],
    degrees: f64,
) -> Result<(RasterImage, Vec<BBox>), AugmentError> {
    rotate_with_fill(img, boxes, degrees, [0, 0, 0])
}

pub fn rotate_with_fill(
    img: &RasterImage,
    boxes: &[BBox],
    degrees: f64,
    fill: [u8; 3],
) -> Result<(RasterImage, Vec<BBox>), AugmentError> {
    AugmentOp::Rotate(degrees).validate()?;
    let quarter = if degrees == 90.0 {
        Some(1)
    } else if degrees == 180.0 {
        Some(2)
    } else if degrees == 270.0 {
        Some(3)
    } else {
        None
    };
    match quarter {
        Some(q) => Ok(rotate_quarters(img, boxes, q)),
        None => Ok(rotate_arbitrary(img, boxes, degrees, fill)),
    }
}

fn rotate_quarters(img: &RasterImage, boxes: &[BBox], quarters: u8) -> (RasterImage, Vec<BBox>) {
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = if quarters % 2 == 1 { (h, w) } else { (w, h) };
    let mut out = RasterImage::filled(ow, oh, [0, 0, 0]);
    for y in 0..oh {
        for x in 0..ow {
            let (sx, sy) = match quarters {
                1 => (y, h - 1 - x),
                2 => (w - 1 - x, h - 1 - y),
                _ => (w - 1 - y, x),
            };
            out.put(x, y, img.get(sx, sy));
        }
    }
    let mapped = boxes
        .iter()
        .map(|b| match quarters {
            1 => BBox {
                cx: 1.0 - b.cy,
                cy: b.cx,
                w: b.h,
                h: b.w,
            },
            2 => BBox {
                cx: 1.0 - b.cx,
                cy: 1.0 - b.cy,
                w: b.w,
                h: b.h,
            },
            _ => BBox {
                cx: b.cy,
                cy: 1.0 - b.cx,
                w: b.h,
                h: b.w,
            },
        })
        .collect();
    (out, mapped)
}

/// Canvas size that holds a `w x h` image rotated by `degrees`.
pub fn rotated_canvas(w: u32, h: u32, degrees: f64) -> (u32, u32) {
    let t = degrees.to_radians();
    let (s, c) = (libm::sin(t).abs(), libm::cos(t).abs());
    let (w, h) = (w as f64, h as f64);
    let nw = (w * c + h * s - 1e-9).ceil().max(1.0);
    let nh = (w * s + h * c - 1e-9).ceil().max(1.0);
    (nw as u32, nh as u32)
}

fn rotate_arbitrary(
    img: &RasterImage,
    boxes: &[BBox],
    degrees: f64,
    fill: [u8; 3],
) -> (RasterImage, Vec<BBox>) {
    let (w, h) = (img.width(), img.height());
    let (ow, oh) = rotated_canvas(w, h, degrees);
    let t = degrees.to_radians();
    let (sin, cos) = (libm::sin(t), libm::cos(t));
    let (icx, icy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (ocx, ocy) = (ow as f64 / 2.0, oh as f64 / 2.0);

    // y points down, so this matrix turns the picture clockwise.
    let forward = |x: f64, y: f64| {
        let (dx, dy) = (x - icx, y - icy);
        (dx * cos - dy * sin + ocx, dx * sin + dy * cos + ocy)
    };

    let mut out = RasterImage::filled(ow, oh, fill);
    for y in 0..oh {
        for x in 0..ow {
            let (dx, dy) = (x as f64 + 0.5 - ocx, y as f64 + 0.5 - ocy);
            let sx = (dx * cos + dy * sin + icx).floor();
            let sy = (-dx * sin + dy * cos + icy).floor();
            if sx >= 0.0 && sy >= 0.0 && sx < w as f64 && sy < h as f64 {
                out.put(x, y, img.get(sx as u32, sy as u32));
            }
        }
    }

    let (fw, fh) = (w as f64, h as f64);
    let (gw, gh) = (ow as f64, oh as f64);
    let mapped = boxes
        .iter()
        .map(|b| {
            let (x0, y0, x1, y1) = b.corners();
            let pts = [
                forward(x0 * fw, y0 * fh),
                forward(x1 * fw, y0 * fh),
                forward(x1 * fw, y1 * fh),
                forward(x0 * fw, y1 * fh),
            ];
            let (mut lx, mut ly, mut hx, mut hy) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
            for (px, py) in pts {
                lx = lx.min(px);
                ly = ly.min(py);
                hx = hx.max(px);
                hy = hy.max(py);
            }
            BBox::from_corners_clamped(lx / gw, ly / gh, hx / gw, hy / gh)
                .expect("rotated box lies on the enlarged canvas")
        })
        .collect();
    (out, mapped)
}

/// Box blur with an edge-clamped `(2r+1)^2` normalized kernel. Boxes are
/// returned unchanged.
pub fn blur(
    img: &RasterImage,
    boxes: &[BBox],
    radius: u32,
) -> Result<(RasterImage, Vec<BBox>), AugmentError> {
    AugmentOp::Blur(radius).validate()?;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let r = radius as i64;
    let n = ((2 * r + 1) * (2 * r + 1)) as u64;
    let src = img.pixels();
    let idx = |x: i64, y: i64| ((y * w + x) * 3) as usize;

    // Horizontal window sums first, then vertical sums of those; the two
    // passes add the same terms as the full 2-D window.
    let mut rows = vec![0u64; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0u64; 3];
            for dx in -r..=r {
                let sx = (x + dx).clamp(0, w - 1);
                let i = idx(sx, y);
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += src[i + c] as u64;
                }
            }
            rows[idx(x, y)..idx(x, y) + 3].copy_from_slice(&acc);
        }
    }
    let mut pixels = vec![0u8; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0u64; 3];
            for dy in -r..=r {
                let sy = (y + dy).clamp(0, h - 1);
                let i = idx(x, sy);
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += rows[i + c];
                }
            }
            let o = idx(x, y);
            for c in 0..3 {
                pixels[o + c] = ((acc[c] + n / 2) / n) as u8;
            }
        }
    }
    let out = RasterImage::new(img.width(), img.height(), pixels).expect("same dimensions");
    Ok((out, boxes.to_vec()))
}

/// An image with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub annotation: ImageAnnotation,
    pub image: RasterImage,
}

impl Sample {
    pub fn augment(&self, op: AugmentOp) -> Result<Sample, AugmentError> {
        let a = &self.annotation;
        if (a.img_w, a.img_h) != (self.image.width(), self.image.height()) {
            return Err(AugmentError::DimsMismatch {
                image_id: a.image_id.clone(),
                ann_w: a.img_w,
                ann_h: a.img_h,
                img_w: self.image.width(),
                img_h: self.image.height(),
            });
        }
        let (image, boxes) = op.apply(&self.image, &a.boxes)?;
        Ok(Sample {
            annotation: ImageAnnotation {
                image_id: format!("{}__{}", a.image_id, op.id_suffix()),
                img_w: image.width(),
                img_h: image.height(),
                boxes,
            },
            image,
        })
    }
}

/// Each input followed by one derived sample per op, in op order.
pub fn expand_dataset(samples: &[Sample], ops: &[AugmentOp]) -> Result<Vec<Sample>, AugmentError> {
    for op in ops {
        op.validate()?;
    }
    let groups: Vec<Vec<Sample>> = samples
        .par_iter()
        .map(|s| {
            let mut group = Vec::with_capacity(ops.len() + 1);
            group.push(s.clone());
            for op in ops {
                group.push(s.augment(*op)?);
            }
            Ok(group)
        })
        .collect::<Result<_, AugmentError>>()?;
    Ok(groups.into_iter().flatten().collect())
}

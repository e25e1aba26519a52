#![allow(dead_code)]

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use woundscope_core::{AnnotatedBox, BBox, ImageAnnotation};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// A box fully inside the unit square with each side at least `min_side`.
pub fn random_box<R: Rng>(rng: &mut R, min_side: f64) -> BBox {
    let w = rng.random_range(min_side..=1.0);
    let h = rng.random_range(min_side..=1.0);
    let cx = rng.random_range(w / 2.0..=1.0 - w / 2.0);
    let cy = rng.random_range(h / 2.0..=1.0 - h / 2.0);
    BBox::new(cx, cy, w, h).expect("constructed inside the unit square")
}

pub fn corners(b: &BBox) -> [f64; 4] {
    let (x0, y0, x1, y1) = b.corners();
    [x0, y0, x1, y1]
}

pub fn random_annotation<R: Rng>(rng: &mut R, id: &str, num_classes: u32) -> ImageAnnotation {
    let img_w = rng.random_range(16..=2000);
    let img_h = rng.random_range(16..=2000);
    let n = rng.random_range(0..=6);
    // at least 4 px per side so integer corners stay meaningful
    let min_side = (4.0 / img_w.min(img_h) as f64).max(0.01);
    let boxes = (0..n)
        .map(|_| AnnotatedBox {
            class_id: rng.random_range(0..num_classes),
            bbox: random_box(rng, min_side),
        })
        .collect();
    ImageAnnotation {
        image_id: id.to_string(),
        img_w,
        img_h,
        boxes,
    }
}

mod common;

use common::{random_annotation, random_box, rng};
use rand::Rng;
use woundscope_core::annotations::emit_yolo_txt;
use woundscope_core::augment::{
    blur, expand_dataset, flip_right, flip_up, parse_ops, rotate, AugmentOp, Sample,
};
use woundscope_core::{BBox, RasterImage};
use woundscope_testkit::{box_blur_direct, rotate_box_by_corners};

fn noise(seed: u64, w: u32, h: u32) -> RasterImage {
    let mut r = rng(seed);
    let px: Vec<u8> = (0..w * h * 3).map(|_| r.random()).collect();
    RasterImage::new(w, h, px).unwrap()
}

fn close(a: &BBox, b: &BBox, tol: f64) -> bool {
    (a.cx - b.cx).abs() <= tol
        && (a.cy - b.cy).abs() <= tol
        && (a.w - b.w).abs() <= tol
        && (a.h - b.h).abs() <= tol
}

#[test]
fn quarter_turns_match_corner_oracle() {
    let mut r = rng(31);
    let img = RasterImage::filled(7, 5, [0; 3]);
    let boxes: Vec<BBox> = (0..500).map(|_| random_box(&mut r, 0.001)).collect();
    for (deg, quarters) in [(90.0, 1), (180.0, 2), (270.0, 3)] {
        let (out, mapped) = rotate(&img, &boxes, deg).unwrap();
        if quarters % 2 == 1 {
            assert_eq!((out.width(), out.height()), (5, 7));
        } else {
            assert_eq!((out.width(), out.height()), (7, 5));
        }
        for (b, m) in boxes.iter().zip(&mapped) {
            let [cx, cy, w, h] = rotate_box_by_corners(b.cx, b.cy, b.w, b.h, quarters);
            let want = BBox { cx, cy, w, h };
            assert!(close(m, &want, 1e-12), "{deg}: {m:?} vs {want:?}");
        }
    }
}

#[test]
fn rot90_moves_pixels_clockwise() {
    let img = noise(32, 6, 4);
    let (out, _) = rotate(&img, &[], 90.0).unwrap();
    for y in 0..4 {
        for x in 0..6 {
            // source (x, y) lands at (h - 1 - y, x)
            assert_eq!(out.get(3 - y, x), img.get(x, y));
        }
    }
}

#[test]
fn rot90_four_times_is_identity() {
    let img = noise(33, 9, 5);
    let mut r = rng(33);
    let boxes: Vec<BBox> = (0..50).map(|_| random_box(&mut r, 0.01)).collect();
    let (mut cur, mut cur_boxes) = (img.clone(), boxes.clone());
    for _ in 0..4 {
        let (i, b) = rotate(&cur, &cur_boxes, 90.0).unwrap();
        cur = i;
        cur_boxes = b;
    }
    assert_eq!(cur, img);
    for (a, b) in boxes.iter().zip(&cur_boxes) {
        assert!(close(a, b, 1e-12));
    }
}

#[test]
fn flips_are_involutions() {
    let img = noise(34, 8, 3);
    let mut r = rng(34);
    let boxes: Vec<BBox> = (0..100).map(|_| random_box(&mut r, 0.01)).collect();
    for flip in [flip_right, flip_up] {
        let (i1, b1) = flip(&img, &boxes);
        let (i2, b2) = flip(&i1, &b1);
        assert_eq!(i2, img);
        for (a, b) in boxes.iter().zip(&b2) {
            assert!(close(a, b, 1e-15));
        }
    }
    let (fr, b) = flip_right(&img, &[BBox::new(0.25, 0.4, 0.1, 0.2).unwrap()]);
    assert!((b[0].cx - 0.75).abs() < 1e-15 && b[0].cy == 0.4);
    assert_eq!(fr.get(0, 1), img.get(7, 1));
    let (fu, b) = flip_up(&img, &[BBox::new(0.25, 0.4, 0.1, 0.2).unwrap()]);
    assert!((b[0].cy - 0.6).abs() < 1e-15 && b[0].cx == 0.25);
    assert_eq!(fu.get(2, 0), img.get(2, 2));
}

#[test]
fn blur_matches_direct_filter_and_keeps_boxes() {
    for (seed, w, h, radius) in [
        (35, 13, 9, 1),
        (36, 4, 11, 2),
        (37, 1, 1, 3),
        (38, 20, 2, 5),
    ] {
        let img = noise(seed, w, h);
        let mut r = rng(seed);
        let boxes: Vec<BBox> = (0..10).map(|_| random_box(&mut r, 0.01)).collect();
        let (out, kept) = blur(&img, &boxes, radius).unwrap();
        let want = box_blur_direct(w as usize, h as usize, img.pixels(), radius as usize);
        assert_eq!(out.pixels(), &want[..]);
        assert_eq!(kept, boxes);
    }
}

#[test]
fn blur_leaves_annotation_text_byte_identical() {
    let mut r = rng(39);
    let mut a = random_annotation(&mut r, "x", 1);
    a.img_w = 12;
    a.img_h = 10;
    let sample = Sample {
        image: noise(39, 12, 10),
        annotation: a.clone(),
    };
    let out = sample.augment(AugmentOp::Blur(2)).unwrap();
    assert_eq!(emit_yolo_txt(&out.annotation), emit_yolo_txt(&a));
    assert_eq!(out.annotation.image_id, "x__blur2");
}

#[test]
fn expand_count_law() {
    let mut r = rng(40);
    let samples: Vec<Sample> = (0..5)
        .map(|i| {
            let (w, h) = (r.random_range(2..20), r.random_range(2..20));
            let mut a = random_annotation(&mut r, &format!("s{i}"), 1);
            a.img_w = w;
            a.img_h = h;
            Sample {
                image: noise(i, w, h),
                annotation: a,
            }
        })
        .collect();
    for list in [
        "",
        "rot90",
        "rot90,flip_up,flip_right,blur:2",
        "rot:33,rot180,rot270,flip_up",
    ] {
        let ops = parse_ops(list).unwrap();
        let out = expand_dataset(&samples, &ops).unwrap();
        assert_eq!(out.len(), samples.len() * (1 + ops.len()), "{list}");
        for (k, s) in out.iter().enumerate() {
            let src = &samples[k / (1 + ops.len())];
            match k % (1 + ops.len()) {
                0 => assert_eq!(s, src),
                j => assert_eq!(
                    s.annotation.image_id,
                    format!("{}__{}", src.annotation.image_id, ops[j - 1].id_suffix())
                ),
            }
            assert_eq!(s.annotation.boxes.len(), src.annotation.boxes.len());
        }
    }
}

#[test]
fn arbitrary_rotation_contains_rotated_corners() {
    let mut r = rng(41);
    let img = RasterImage::filled(40, 30, [200; 3]);
    for _ in 0..200 {
        let b = random_box(&mut r, 0.05);
        let deg: f64 = r.random_range(1.0..359.0);
        let (out, mapped) = rotate(&img, &[b], deg).unwrap();
        let (ow, oh) = (out.width() as f64, out.height() as f64);
        let t = deg.to_radians();
        let (x0, y0, x1, y1) = b.corners();
        let m = mapped[0];
        for (x, y) in [(x0, y0), (x1, y0), (x1, y1), (x0, y1)] {
            // pixel space, relative to the source centre, clockwise in image coordinates
            let (px, py) = (x * 40.0 - 20.0, y * 30.0 - 15.0);
            let (qx, qy) = (px * t.cos() - py * t.sin(), px * t.sin() + py * t.cos());
            let (nx, ny) = ((qx + ow / 2.0) / ow, (qy + oh / 2.0) / oh);
            let (m0, n0, m1, n1) = m.corners();
            assert!(nx >= m0 - 1e-9 && nx <= m1 + 1e-9, "{deg}");
            assert!(ny >= n0 - 1e-9 && ny <= n1 + 1e-9, "{deg}");
        }
    }
}

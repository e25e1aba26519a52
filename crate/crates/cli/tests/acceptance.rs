//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every check compares against an independent oracle from
//! `woundscope-testkit` or a fixed constant.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use tower::ServiceExt;
use woundscope_core::annotations::{
    emit_dims_tsv, emit_voc_xml, emit_yolo_txt, parse_dims_tsv, parse_voc_xml, parse_yolo_txt,
};
use woundscope_core::augment::{
    blur, expand_dataset, flip_right, flip_up, parse_ops, rotate, Sample,
};
use woundscope_core::detection::{read_jsonl, write_jsonl};
use woundscope_core::evaluation::{precision_recall_f1, MatchCounts};
use woundscope_core::geometry::to_pixel;
use woundscope_core::inference::{
    decode_head, decode_heads, nms, HeadTensor, ReplayBackend, ScoreMode, Tensor, BUILTIN_MODELS,
    YOLOV3_416,
};
use woundscope_core::{
    detect, evaluate, iou, AnnotatedBox, BBox, ClassMap, Detection, EvalConfig, ImageAnnotation,
    ModelConfig, RasterImage,
};
use woundscope_service::{router, AppState, Registry, ServiceConfig, Settings};
use woundscope_testkit::{
    ap_bruteforce, clamp_unit, decode_scalar, greedy_match, iou_monte_carlo, nms_naive,
    rotate_box_by_corners, HeadSpec, PlainBox, ScoredBox,
};

type Check = Result<(), String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

fn random_box(r: &mut StdRng, min_side: f64) -> BBox {
    let w = r.random_range(min_side..=1.0);
    let h = r.random_range(min_side..=1.0);
    let cx = r.random_range(w / 2.0..=1.0 - w / 2.0);
    let cy = r.random_range(h / 2.0..=1.0 - h / 2.0);
    BBox::new(cx, cy, w, h).expect("inside the unit square")
}

fn corners(b: &BBox) -> [f64; 4] {
    let (x0, y0, x1, y1) = b.corners();
    [x0, y0, x1, y1]
}

fn random_annotation(r: &mut StdRng, id: &str, classes: u32) -> ImageAnnotation {
    let (img_w, img_h) = (r.random_range(16..=2000), r.random_range(16..=2000));
    let min_side = (4.0 / img_w.min(img_h) as f64).max(0.01);
    let boxes = (0..r.random_range(0..=6))
        .map(|_| AnnotatedBox {
            class_id: r.random_range(0..classes),
            bbox: random_box(r, min_side),
        })
        .collect();
    ImageAnnotation {
        image_id: id.to_string(),
        img_w,
        img_h,
        boxes,
    }
}

fn noise(seed: u64, w: u32, h: u32) -> RasterImage {
    let mut r = rng(seed);
    RasterImage::new(w, h, (0..w * h * 3).map(|_| r.random()).collect()).unwrap()
}

fn close(a: &BBox, b: &BBox, tol: f64) -> bool {
    (a.cx - b.cx).abs() <= tol
        && (a.cy - b.cy).abs() <= tol
        && (a.w - b.w).abs() <= tol
        && (a.h - b.h).abs() <= tol
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures")
}

fn iou_suite() -> Check {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let a = random_box(&mut r, 0.05);
        let b = random_box(&mut r, 0.05);
        ensure!(iou(&a, &b) == iou(&b, &a), "asymmetric for {a:?} {b:?}");
        ensure!(iou(&a, &a) == 1.0, "iou(a, a) != 1 for {a:?}");
        let est = iou_monte_carlo(corners(&a), corners(&b), 40_000, &mut r);
        worst = worst.max((iou(&a, &b) - est).abs());
    }
    let left = BBox::new(0.2, 0.5, 0.2, 0.2).unwrap();
    ensure!(
        iou(&left, &BBox::new(0.7, 0.5, 0.2, 0.2).unwrap()) == 0.0,
        "disjoint boxes overlap"
    );
    ensure!(
        iou(&left, &BBox::new(0.4, 0.5, 0.2, 0.2).unwrap()) == 0.0,
        "shared edge counts as overlap"
    );
    ensure!(worst < 0.01, "Monte-Carlo deviation {worst}");
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2}s");
    Ok(())
}

fn max_pixel_error(a: &ImageAnnotation, b: &ImageAnnotation) -> Result<f64, String> {
    ensure!(a.boxes.len() == b.boxes.len(), "box count changed");
    let mut worst: f64 = 0.0;
    for (x, y) in a.boxes.iter().zip(&b.boxes) {
        ensure!(x.class_id == y.class_id, "class changed");
        let p = to_pixel(&x.bbox, a.img_w, a.img_h).unwrap();
        let q = to_pixel(&y.bbox, b.img_w, b.img_h).unwrap();
        for d in [
            p.xmin - q.xmin,
            p.ymin - q.ymin,
            p.xmax - q.xmax,
            p.ymax - q.ymax,
        ] {
            worst = worst.max(d.abs());
        }
    }
    Ok(worst)
}

fn format_suite() -> Check {
    let mut r = rng(102);
    let cm = ClassMap::new(["wound", "scar", "ulcer"]).unwrap();
    for i in 0..1000 {
        let a = random_annotation(&mut r, &format!("img{i}"), 3);
        let text = emit_yolo_txt(&a);
        let back =
            parse_yolo_txt(&text, &a.image_id, a.img_w, a.img_h).map_err(|e| e.to_string())?;
        ensure!(emit_yolo_txt(&back) == text, "YOLO text not stable for {i}");
        for (x, y) in a.boxes.iter().zip(&back.boxes) {
            ensure!(
                close(&x.bbox, &y.bbox, 5e-7 + 1e-12),
                "YOLO round trip off for {i}"
            );
        }

        let xml = emit_voc_xml(&a, &cm).map_err(|e| e.to_string())?;
        let voc = parse_voc_xml(&xml, &cm).map_err(|e| e.to_string())?;
        let err = max_pixel_error(&a, &voc)?;
        ensure!(err < 1.0, "VOC round trip {err}px for {i}");

        let via = parse_voc_xml(&emit_voc_xml(&back, &cm).unwrap(), &cm).unwrap();
        let again = parse_yolo_txt(&emit_yolo_txt(&via), &a.image_id, a.img_w, a.img_h).unwrap();
        let bound = 0.5 + 1e-6 * a.img_w.max(a.img_h) as f64;
        let err = max_pixel_error(&a, &again)?;
        ensure!(
            err <= bound + 1e-9,
            "composition {err}px > {bound}px for {i}"
        );
    }

    let sample = random_annotation(&mut r, "seed", 3);
    let seeds = [
        emit_yolo_txt(&sample),
        emit_voc_xml(&sample, &cm).unwrap(),
        emit_dims_tsv([&sample]),
    ];
    let alphabet = b"0123456789. -+eE\t\n<>/=\"abcdhimnoxyz_{}:,[]";
    for i in 0..10_000 {
        let text = if r.random_bool(0.5) {
            let mut b = seeds[i % 3].clone().into_bytes();
            for _ in 0..r.random_range(1..8) {
                if b.is_empty() {
                    break;
                }
                let k = r.random_range(0..b.len());
                match r.random_range(0..3) {
                    0 => b[k] = alphabet[r.random_range(0..alphabet.len())],
                    1 => {
                        b.remove(k);
                    }
                    _ => b.insert(k, alphabet[r.random_range(0..alphabet.len())]),
                }
            }
            String::from_utf8_lossy(&b).into_owned()
        } else {
            (0..r.random_range(0..200))
                .map(|_| alphabet[r.random_range(0..alphabet.len())] as char)
                .collect()
        };
        let outcome = catch_unwind(|| match i % 5 {
            0 => drop(parse_yolo_txt(&text, "f", 640, 480)),
            1 => drop(parse_voc_xml(&text, &cm)),
            2 => drop(parse_dims_tsv(&text)),
            3 => drop(read_jsonl(&text)),
            _ => drop(Tensor::from_bytes(text.as_bytes())),
        });
        ensure!(outcome.is_ok(), "parser panicked on input {text:?}");
    }
    Ok(())
}

fn augmentation_suite() -> Check {
    let mut r = rng(103);
    let canvas = RasterImage::filled(7, 5, [0; 3]);
    let boxes: Vec<BBox> = (0..500).map(|_| random_box(&mut r, 0.001)).collect();
    for (deg, quarters) in [(90.0, 1), (180.0, 2), (270.0, 3)] {
        let (_, mapped) = rotate(&canvas, &boxes, deg).map_err(|e| e.to_string())?;
        for (b, m) in boxes.iter().zip(&mapped) {
            let [cx, cy, w, h] = rotate_box_by_corners(b.cx, b.cy, b.w, b.h, quarters);
            ensure!(
                close(m, &BBox { cx, cy, w, h }, 1e-12),
                "rot{deg} disagrees with corner oracle"
            );
        }
    }

    let img = noise(103, 9, 5);
    let (mut cur, mut cur_boxes) = (img.clone(), boxes.clone());
    for _ in 0..4 {
        (cur, cur_boxes) = rotate(&cur, &cur_boxes, 90.0).unwrap();
    }
    ensure!(cur == img, "rot90^4 changed pixels");
    ensure!(
        boxes
            .iter()
            .zip(&cur_boxes)
            .all(|(a, b)| close(a, b, 1e-12)),
        "rot90^4 moved boxes"
    );

    for flip in [flip_right, flip_up] {
        let (i1, b1) = flip(&img, &boxes);
        let (i2, b2) = flip(&i1, &b1);
        ensure!(i2 == img, "flip is not an involution on pixels");
        ensure!(
            boxes.iter().zip(&b2).all(|(a, b)| close(a, b, 1e-15)),
            "flip is not an involution on boxes"
        );
    }

    let (_, kept) = blur(&img, &boxes, 2).map_err(|e| e.to_string())?;
    ensure!(kept == boxes, "blur moved boxes");
    let mut a = random_annotation(&mut r, "b", 1);
    (a.img_w, a.img_h) = (9, 5);
    let blurred = Sample {
        image: img.clone(),
        annotation: a.clone(),
    }
    .augment(woundscope_core::augment::AugmentOp::Blur(2))
    .map_err(|e| e.to_string())?;
    ensure!(
        emit_yolo_txt(&blurred.annotation) == emit_yolo_txt(&a),
        "blur changed annotation text"
    );

    let samples: Vec<Sample> = (0..5)
        .map(|i| {
            let (w, h) = (r.random_range(2..20), r.random_range(2..20));
            let mut a = random_annotation(&mut r, &format!("s{i}"), 1);
            (a.img_w, a.img_h) = (w, h);
            Sample {
                image: noise(i, w, h),
                annotation: a,
            }
        })
        .collect();
    for list in [
        "",
        "rot90",
        "rot90,rot180,rot270",
        "rot90,flip_up,flip_right,blur:2,rot:33",
    ] {
        let ops = parse_ops(list).map_err(|e| e.to_string())?;
        let out = expand_dataset(&samples, &ops).map_err(|e| e.to_string())?;
        ensure!(
            out.len() == samples.len() * (1 + ops.len()),
            "count law fails for {list:?}"
        );
    }
    Ok(())
}

fn random_head(r: &mut StdRng, cfg: &ModelConfig, k: usize) -> HeadTensor {
    let mut h = HeadTensor::filled(cfg, &cfg.heads[k], 0.0);
    let ch = h.channels();
    for (i, v) in h.values.iter_mut().enumerate() {
        *v = match i % ch {
            4 => r.random_range(-8.0..3.0),
            2 | 3 => r.random_range(-2.0..2.0),
            _ => r.random_range(-6.0..6.0),
        };
    }
    h
}

fn decode_suite() -> Check {
    let big = ModelConfig::yolov3_416();
    let tiny = ModelConfig::tiny_yolov3();
    ensure!(
        big.grid_shapes() == vec![(52, 52), (26, 26), (13, 13)],
        "yolov3-416 grids {:?}",
        big.grid_shapes()
    );
    ensure!(
        tiny.grid_shapes() == vec![(26, 26), (13, 13)],
        "tiny grids {:?}",
        tiny.grid_shapes()
    );

    let mut r = rng(104);
    let mut total = 0;
    for case in 0..100 {
        let mut cfg = if case % 2 == 0 {
            tiny.clone()
        } else {
            big.clone()
        };
        cfg.num_classes = r.random_range(1..=4);
        cfg.conf_threshold = r.random_range(0.05..0.6);
        let objectness_only = case % 5 == 0;
        if objectness_only {
            cfg.score_mode = ScoreMode::Objectness;
        }
        let k = r.random_range(0..cfg.heads.len());
        let h = random_head(&mut r, &cfg, k);
        let got = decode_head(&h, &cfg).map_err(|e| e.to_string())?;
        let spec = HeadSpec {
            grid_h: h.grid_h as usize,
            grid_w: h.grid_w as usize,
            anchors: &h.anchors,
            num_classes: h.num_classes,
            stride: h.stride,
            net_w: cfg.net_w,
            net_h: cfg.net_h,
        };
        let want: Vec<_> =
            decode_scalar(&h.values, &spec, cfg.conf_threshold as f32, objectness_only)
                .into_iter()
                .filter_map(|d| {
                    clamp_unit(d.cx as f64, d.cy as f64, d.w as f64, d.h as f64)
                        .map(|b| (b, d.class_id as u32, d.score as f64))
                })
                .collect();
        ensure!(
            got.len() == want.len(),
            "case {case}: {} vs {} boxes",
            got.len(),
            want.len()
        );
        for (g, (b, class_id, score)) in got.iter().zip(&want) {
            ensure!(g.class_id == *class_id, "case {case}: class differs");
            ensure!(
                (g.score - score).abs() <= 1e-5,
                "case {case}: score differs"
            );
            for (x, y) in [g.bbox.cx, g.bbox.cy, g.bbox.w, g.bbox.h].iter().zip(b) {
                ensure!((x - y).abs() <= 1e-5, "case {case}: {x} vs {y}");
            }
        }
        total += got.len();
    }
    ensure!(total > 1000, "oracle saw only {total} boxes");

    let heads: Vec<HeadTensor> = (0..tiny.heads.len())
        .map(|k| random_head(&mut r, &tiny, k))
        .collect();
    let mut prev: Option<Vec<Detection>> = None;
    for conf in [0.0, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0] {
        let cfg = ModelConfig {
            conf_threshold: conf,
            ..tiny.clone()
        };
        let out = nms(&decode_heads(&heads, &cfg).unwrap(), cfg.nms_iou_threshold);
        if let Some(p) = &prev {
            ensure!(
                out.iter().all(|d| p.contains(d)),
                "conf {conf} produced a new box"
            );
        }
        prev = Some(out);
    }
    Ok(())
}

fn nms_suite() -> Check {
    let start = Instant::now();
    let mut r = rng(105);
    let plain = |d: &Detection| ScoredBox {
        bbox: [d.bbox.cx, d.bbox.cy, d.bbox.w, d.bbox.h],
        class_id: d.class_id,
        score: d.score,
    };
    for case in 0..2000 {
        let dets: Vec<Detection> = (0..r.random_range(0..60))
            .map(|_| {
                let score = r.random_range(0..20u32) as f64 / 20.0;
                Detection::new(random_box(&mut r, 0.02), r.random_range(0..3), score).unwrap()
            })
            .collect();
        let t = [0.0, 0.3, 0.45, 0.5, 0.7, 1.0][case % 6];
        let out = nms(&dets, t);
        ensure!(nms(&out, t) == out, "case {case}: not idempotent");
        ensure!(
            out.iter().all(|d| dets.contains(d)),
            "case {case}: not a subset"
        );
        for (i, a) in out.iter().enumerate() {
            for b in &out[i + 1..] {
                ensure!(
                    a.class_id != b.class_id || iou(&a.bbox, &b.bbox) <= t,
                    "case {case}: pairwise bound"
                );
            }
        }
        let naive = nms_naive(&dets.iter().map(plain).collect::<Vec<_>>(), t);
        ensure!(
            out.iter().map(plain).collect::<Vec<_>>() == naive,
            "case {case}: differs from naive NMS"
        );
        if t == 1.0 {
            ensure!(
                out.len() == dets.len(),
                "case {case}: threshold 1.00 suppressed boxes"
            );
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 5.0, "took {secs:.2}s");
    Ok(())
}

fn jitter(r: &mut StdRng, b: &BBox) -> BBox {
    let (x0, y0, x1, y1) = b.corners();
    let s = 0.3 * b.w.min(b.h);
    let mut d = || r.random_range(-s..=s);
    BBox::from_corners_clamped(x0 + d(), y0 + d(), x1 + d(), y1 + d()).unwrap_or(*b)
}

fn evaluation_suite() -> Check {
    let mut r = rng(106);
    let cm = ClassMap::new(["wound", "scar"]).unwrap();
    for case in 0..200 {
        let mut gts = Vec::new();
        let mut dets: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
        let mut images = Vec::new();
        for i in 0..r.random_range(1..=5) {
            let id = format!("img{i}");
            let boxes: Vec<AnnotatedBox> = (0..r.random_range(0..=5))
                .map(|_| AnnotatedBox {
                    class_id: r.random_range(0..2),
                    bbox: random_box(&mut r, 0.05),
                })
                .collect();
            let ds: Vec<Detection> = (0..r.random_range(0..=10))
                .map(|_| {
                    let (bbox, c) = if !boxes.is_empty() && r.random_bool(0.7) {
                        let g = boxes[r.random_range(0..boxes.len())];
                        (jitter(&mut r, &g.bbox), g.class_id)
                    } else {
                        (random_box(&mut r, 0.05), r.random_range(0..2))
                    };
                    Detection::new(bbox, c, r.random::<f64>()).unwrap()
                })
                .collect();
            let pb = |c, s, b: &BBox| PlainBox {
                class_id: c,
                score: s,
                corners: corners(b),
            };
            images.push((
                boxes
                    .iter()
                    .map(|b| pb(b.class_id, 1.0, &b.bbox))
                    .collect::<Vec<_>>(),
                ds.iter()
                    .map(|d| pb(d.class_id, d.score, &d.bbox))
                    .collect::<Vec<_>>(),
            ));
            dets.insert(id.clone(), ds);
            gts.push(ImageAnnotation {
                image_id: id,
                img_w: 640,
                img_h: 480,
                boxes,
            });
        }
        let iou_t = [0.3, 0.5, 0.7][case % 3];
        let conf = [0.0, 0.2, 0.5][case % 3];
        let cfg = EvalConfig {
            iou_threshold: iou_t,
            conf_threshold: conf,
        };
        let report = evaluate(&dets, &gts, &cm, &cfg).map_err(|e| e.to_string())?;

        let flags = greedy_match(&images, iou_t);
        let (mut tp, mut fp, mut total_gt) = (0usize, 0usize, 0usize);
        let mut aps = Vec::new();
        for class_id in 0..2u32 {
            let mut labels = Vec::new();
            let mut num_gt = 0;
            for ((g, d), f) in images.iter().zip(&flags) {
                num_gt += g.iter().filter(|b| b.class_id == class_id).count();
                for (b, &hit) in d.iter().zip(f) {
                    if b.class_id == class_id {
                        labels.push((b.score, hit));
                        if b.score >= conf {
                            if hit {
                                tp += 1
                            } else {
                                fp += 1
                            }
                        }
                    }
                }
            }
            total_gt += num_gt;
            let got = report.classes[class_id as usize].ap;
            if num_gt == 0 {
                ensure!(
                    got.is_none(),
                    "case {case}: AP for a class without ground truth"
                );
            } else {
                let want = ap_bruteforce(&labels, num_gt);
                let got = got.ok_or("missing AP")?;
                ensure!(
                    (got - want).abs() <= 1e-9,
                    "case {case}: AP {got} vs {want}"
                );
                aps.push(want);
            }
        }
        let want_map = if aps.is_empty() {
            0.0
        } else {
            aps.iter().sum::<f64>() / aps.len() as f64
        };
        ensure!(
            (report.map - want_map).abs() <= 1e-9,
            "case {case}: mAP {} vs {want_map}",
            report.map
        );
        let p = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let rc = if total_gt == 0 {
            0.0
        } else {
            tp as f64 / total_gt as f64
        };
        ensure!(
            (report.precision - p).abs() <= 1e-9,
            "case {case}: precision"
        );
        ensure!((report.recall - rc).abs() <= 1e-9, "case {case}: recall");
    }

    let gts: Vec<ImageAnnotation> = (0..10)
        .map(|i| ImageAnnotation {
            image_id: format!("p{i}"),
            img_w: 64,
            img_h: 64,
            boxes: (0..3)
                .map(|_| AnnotatedBox {
                    class_id: 0,
                    bbox: random_box(&mut r, 0.05),
                })
                .collect(),
        })
        .collect();
    let dets = gts
        .iter()
        .map(|a| {
            (
                a.image_id.clone(),
                a.boxes
                    .iter()
                    .map(|b| Detection::new(b.bbox, 0, 0.99).unwrap())
                    .collect(),
            )
        })
        .collect();
    let rep = evaluate(&dets, &gts, &ClassMap::wound(), &EvalConfig::default())
        .map_err(|e| e.to_string())?;
    ensure!(
        (rep.precision, rep.recall, rep.f1, rep.map) == (1.0, 1.0, 1.0, 1.0),
        "perfect detector scored {rep:?}"
    );

    // counts chosen so precision is 0.925 and recall 0.905
    let prf = precision_recall_f1(MatchCounts {
        tp: 837_125,
        fp: 67_875,
        fn_: 87_875,
    });
    ensure!(
        (prf.precision - 0.925).abs() < 1e-12 && (prf.recall - 0.905).abs() < 1e-12,
        "{prf:?}"
    );
    ensure!((prf.f1 - 0.915).abs() <= 0.0005, "f1 {}", prf.f1);
    Ok(())
}

fn e2e_golden() -> Check {
    let e2e = fixtures().join("e2e");
    let img = RasterImage::open(&e2e.join("scene01.png")).map_err(|e| e.to_string())?;
    for model in BUILTIN_MODELS {
        let cfg = ModelConfig::builtin(model).unwrap();
        let expected = std::fs::read_to_string(e2e.join(format!("expected-{model}.jsonl")))
            .map_err(|e| e.to_string())?;
        let run = || -> Result<String, String> {
            let mut backend =
                ReplayBackend::open(e2e.join("replay").join(model)).map_err(|e| e.to_string())?;
            let dets = detect(&img, "scene01", &mut backend, &cfg).map_err(|e| e.to_string())?;
            Ok(write_jsonl(dets.iter().map(|d| ("scene01", d))))
        };
        let first = run()?;
        ensure!(
            first == expected,
            "{model}: output differs from committed JSONL"
        );
        let threaded: Vec<String> = std::thread::scope(|s| {
            let handles: Vec<_> = (0..4).map(|_| s.spawn(run)).collect();
            handles
                .into_iter()
                .map(|h| h.join().unwrap())
                .collect::<Result<_, _>>()
        })?;
        ensure!(
            threaded.iter().all(|t| *t == first),
            "{model}: runs disagree"
        );
    }
    Ok(())
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (
        status,
        resp.into_body()
            .collect()
            .await
            .unwrap()
            .to_bytes()
            .to_vec(),
    )
}

fn put_settings(body: &str) -> Request<Body> {
    Request::put("/api/settings")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

fn post_image(uri: &str, bytes: Vec<u8>) -> Request<Body> {
    Request::post(uri)
        .header(header::CONTENT_TYPE, "image/png")
        .body(Body::from(bytes))
        .unwrap()
}

async fn service_contract() -> Check {
    let e2e = fixtures().join("e2e");
    let build = |max_body_bytes| {
        let mut registry = Registry::builtin();
        registry
            .attach_replay(&e2e.join("replay"), YOLOV3_416)
            .unwrap();
        let config = ServiceConfig {
            max_body_bytes,
            ..ServiceConfig::default()
        };
        router(Arc::new(
            AppState::new(config, registry, Settings::default()).unwrap(),
        ))
    };
    let app = build(woundscope_service::DEFAULT_MAX_BODY_BYTES);
    let png = std::fs::read(e2e.join("scene01.png")).map_err(|e| e.to_string())?;

    let (status, body) = send(
        &app,
        Request::get("/api/settings").body(Body::empty()).unwrap(),
    )
    .await;
    ensure!(status == StatusCode::OK, "GET settings: {status}");
    let s: Settings = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
    ensure!(
        s.conf_threshold == 0.2 && s.nms_iou_threshold == 0.5,
        "defaults {s:?}"
    );

    let (status, _) = send(
        &app,
        put_settings(r#"{"model":"tiny-yolov3","conf_threshold":0.35,"nms_iou_threshold":0.45}"#),
    )
    .await;
    ensure!(status == StatusCode::OK, "PUT settings: {status}");
    let (_, body) = send(
        &app,
        Request::get("/api/settings").body(Body::empty()).unwrap(),
    )
    .await;
    let s: Settings = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
    ensure!(
        s == Settings {
            model: "tiny-yolov3".into(),
            conf_threshold: 0.35,
            nms_iou_threshold: 0.45
        },
        "round trip {s:?}"
    );
    send(
        &app,
        put_settings(r#"{"model":"yolov3-416","conf_threshold":0.2,"nms_iou_threshold":0.5}"#),
    )
    .await;

    let (status, _) = send(&app, put_settings("{not json")).await;
    ensure!(
        status == StatusCode::BAD_REQUEST,
        "malformed settings: {status}"
    );
    let (status, _) = send(
        &app,
        put_settings(r#"{"model":"yolov3-416","conf_threshold":1.5,"nms_iou_threshold":0.5}"#),
    )
    .await;
    ensure!(
        status == StatusCode::UNPROCESSABLE_ENTITY,
        "out-of-range settings: {status}"
    );
    let (status, _) = send(&app, post_image("/api/detect", Vec::new())).await;
    ensure!(status == StatusCode::BAD_REQUEST, "empty image: {status}");
    let (status, _) = send(&app, post_image("/api/detect", b"not an image".to_vec())).await;
    ensure!(
        status == StatusCode::BAD_REQUEST,
        "undecodable image: {status}"
    );
    let (status, _) = send(
        &app,
        post_image("/api/detect?image_id=scene01&conf=7", png.clone()),
    )
    .await;
    ensure!(
        status == StatusCode::UNPROCESSABLE_ENTITY,
        "bad conf override: {status}"
    );
    let (status, _) = send(
        &build(1024),
        post_image("/api/detect?image_id=scene01", png.clone()),
    )
    .await;
    ensure!(
        status == StatusCode::PAYLOAD_TOO_LARGE,
        "oversized body: {status}"
    );

    let tasks: Vec<_> = (0..32)
        .map(|_| {
            let app = app.clone();
            let png = png.clone();
            tokio::spawn(async move {
                send(&app, post_image("/api/detect?image_id=scene01", png)).await
            })
        })
        .collect();
    let mut bodies = Vec::new();
    for t in tasks {
        let (status, body) = t.await.map_err(|e| e.to_string())?;
        ensure!(status == StatusCode::OK, "detect: {status}");
        let mut v: serde_json::Value = serde_json::from_slice(&body).map_err(|e| e.to_string())?;
        v.as_object_mut().unwrap().remove("elapsed_ms");
        bodies.push(v);
    }
    ensure!(
        bodies.iter().all(|b| *b == bodies[0]),
        "concurrent bodies differ"
    );
    let n = bodies[0]["detections"]
        .as_array()
        .map(Vec::len)
        .unwrap_or(0);
    ensure!(n > 0, "golden scene produced no detections");
    Ok(())
}

fn run(name: &str, check: impl FnOnce() -> Check) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into()))
    });
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(()) => {
            println!("PASS  {name:<22} ({secs:.2}s)");
            true
        }
        Err(why) => {
            println!("FAIL  {name:<22} ({secs:.2}s): {why}");
            false
        }
    }
}

fn main() -> ExitCode {
    let rt = tokio::runtime::Runtime::new().expect("tokio runtime");
    let results = [
        run("IoU suite", iou_suite),
        run("Format suite", format_suite),
        run("Augmentation suite", augmentation_suite),
        run("Decode suite", decode_suite),
        run("NMS suite", nms_suite),
        run("Evaluation suite", evaluation_suite),
        run("End-to-end golden", e2e_golden),
        run("Service contract", || rt.block_on(service_contract())),
    ];
    let passed = results.iter().filter(|&&ok| ok).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed == results.len() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

//! Reference oracles for the test suites.
//!
//! Everything here works on plain numbers and slices and never calls into
//! `woundscope-core`, so the checks stay independent of the code under test.
//! The implementations favour obviousness over speed.

use rand::Rng;

/// `[xmin, ymin, xmax, ymax]`.
pub type Corners = [f64; 4];

pub fn corners(cx: f64, cy: f64, w: f64, h: f64) -> Corners {
    [cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0]
}

fn inside(p: (f64, f64), c: &Corners) -> bool {
    p.0 >= c[0] && p.0 <= c[2] && p.1 >= c[1] && p.1 <= c[3]
}

/// Estimates IoU by uniform sampling over the hull of both boxes.
pub fn iou_monte_carlo<R: Rng>(a: Corners, b: Corners, samples: usize, rng: &mut R) -> f64 {
    let lo_x = a[0].min(b[0]);
    let lo_y = a[1].min(b[1]);
    let hi_x = a[2].max(b[2]);
    let hi_y = a[3].max(b[3]);
    let (mut both, mut either) = (0usize, 0usize);
    for _ in 0..samples {
        let p = (
            lo_x + rng.random::<f64>() * (hi_x - lo_x),
            lo_y + rng.random::<f64>() * (hi_y - lo_y),
        );
        let (ia, ib) = (inside(p, &a), inside(p, &b));
        if ia && ib {
            both += 1;
        }
        if ia || ib {
            either += 1;
        }
    }
    if either == 0 {
        0.0
    } else {
        both as f64 / either as f64
    }
}

/// Plain area formula, written out separately from the library version.
pub fn iou_reference(a: Corners, b: Corners) -> f64 {
    let ix = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let iy = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    let inter = ix * iy;
    let area = |c: Corners| (c[2] - c[0]) * (c[3] - c[1]);
    let union = area(a) + area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Rotates a normalized box clockwise by `quarters * 90` degrees by moving
/// its four corners and taking their axis-aligned hull. Returns
/// `(cx, cy, w, h)`.
pub fn rotate_box_by_corners(cx: f64, cy: f64, w: f64, h: f64, quarters: u32) -> [f64; 4] {
    let c = corners(cx, cy, w, h);
    let mut pts = [(c[0], c[1]), (c[2], c[1]), (c[2], c[3]), (c[0], c[3])];
    for _ in 0..quarters % 4 {
        for p in pts.iter_mut() {
            // clockwise quarter turn of the unit square with y pointing down
            *p = (1.0 - p.1, p.0);
        }
    }
    let xs = pts.map(|p| p.0);
    let ys = pts.map(|p| p.1);
    let min = |v: [f64; 4]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: [f64; 4]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (x0, x1, y0, y1) = (min(xs), max(xs), min(ys), max(ys));
    [(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0]
}

/// Direct 2-D box filter over an RGB buffer: every output pixel averages the
/// `(2r+1)^2` window around it, coordinates clamped at the border, rounded
/// half up.
pub fn box_blur_direct(width: usize, height: usize, rgb: &[u8], radius: usize) -> Vec<u8> {
    let r = radius as isize;
    let n = ((2 * r + 1) * (2 * r + 1)) as u64;
    let mut out = vec![0u8; rgb.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            for ch in 0..3 {
                let mut sum = 0u64;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let sx = (x + dx).clamp(0, width as isize - 1) as usize;
                        let sy = (y + dy).clamp(0, height as isize - 1) as usize;
                        sum += rgb[(sy * width + sx) * 3 + ch] as u64;
                    }
                }
                out[(y as usize * width + x as usize) * 3 + ch] = ((sum + n / 2) / n) as u8;
            }
        }
    }
    out
}

/// Geometry of one head for [`decode_scalar`].
#[derive(Debug, Clone)]
pub struct HeadSpec<'a> {
    pub grid_h: usize,
    pub grid_w: usize,
    pub anchors: &'a [[f32; 2]],
    pub num_classes: usize,
    pub stride: u32,
    pub net_w: u32,
    pub net_h: u32,
}

/// One decoded box before clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarDet {
    pub row: usize,
    pub col: usize,
    pub anchor: usize,
    pub class_id: usize,
    pub score: f32,
    pub cx: f32,
    pub cy: f32,
    pub w: f32,
    pub h: f32,
}

fn sig(x: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-x))
}

/// Naive nested-loop YOLO decode over a `[grid_h][grid_w][anchor][5+C]`
/// buffer. Computes every quantity for every cell before thresholding.
pub fn decode_scalar(
    values: &[f32],
    spec: &HeadSpec<'_>,
    conf_threshold: f32,
    objectness_only: bool,
) -> Vec<ScalarDet> {
    let channels = 5 + spec.num_classes;
    let na = spec.anchors.len();
    let mut out = Vec::new();
    for row in 0..spec.grid_h {
        for col in 0..spec.grid_w {
            for anchor in 0..na {
                let base = ((row * spec.grid_w + col) * na + anchor) * channels;
                let t = &values[base..base + channels];
                let obj = sig(t[4]);
                let mut best_class = 0;
                let mut best_prob = sig(t[5]);
                for c in 1..spec.num_classes {
                    let p = sig(t[5 + c]);
                    if p > best_prob {
                        best_prob = p;
                        best_class = c;
                    }
                }
                let score = if objectness_only {
                    obj
                } else {
                    obj * best_prob
                };
                let stride = spec.stride as f32;
                let cx = (col as f32 + sig(t[0])) * stride / spec.net_w as f32;
                let cy = (row as f32 + sig(t[1])) * stride / spec.net_h as f32;
                let w = spec.anchors[anchor][0] * libm::expf(t[2]) / spec.net_w as f32;
                let h = spec.anchors[anchor][1] * libm::expf(t[3]) / spec.net_h as f32;
                if score >= conf_threshold {
                    out.push(ScalarDet {
                        row,
                        col,
                        anchor,
                        class_id: best_class,
                        score,
                        cx,
                        cy,
                        w,
                        h,
                    });
                }
            }
        }
    }
    out
}

/// Clamps a center-format box to the unit square; `None` if nothing is left.
/// Returns `(cx, cy, w, h)`.
pub fn clamp_unit(cx: f64, cy: f64, w: f64, h: f64) -> Option<[f64; 4]> {
    clamp_corners(corners(cx, cy, w, h))
}

/// Clamps corners to the unit square and returns `(cx, cy, w, h)`.
pub fn clamp_corners(c: Corners) -> Option<[f64; 4]> {
    if c.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x0 = c[0].clamp(0.0, 1.0);
    let y0 = c[1].clamp(0.0, 1.0);
    let x1 = c[2].clamp(0.0, 1.0);
    let y1 = c[3].clamp(0.0, 1.0);
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    Some([(x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0])
}

/// A scored box for [`nms_naive`]; `bbox` is `(cx, cy, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredBox {
    pub bbox: [f64; 4],
    pub class_id: u32,
    pub score: f64,
}

/// Quadratic greedy NMS. Repeatedly picks the best remaining box (highest
/// score, lowest index) and removes same-class boxes whose IoU with it is
/// strictly greater than the threshold.
pub fn nms_naive(boxes: &[ScoredBox], threshold: f64) -> Vec<ScoredBox> {
    let mut alive: Vec<bool> = vec![true; boxes.len()];
    let mut kept: Vec<usize> = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..boxes.len() {
            if !alive[i] {
                continue;
            }
            if best.is_none_or(|b| boxes[i].score > boxes[b].score) {
                best = Some(i);
            }
        }
        let Some(b) = best else { break };
        alive[b] = false;
        kept.push(b);
        let kb = boxes[b].bbox;
        for i in 0..boxes.len() {
            if alive[i] && boxes[i].class_id == boxes[b].class_id {
                let o = iou_reference(
                    corners(kb[0], kb[1], kb[2], kb[3]),
                    corners(
                        boxes[i].bbox[0],
                        boxes[i].bbox[1],
                        boxes[i].bbox[2],
                        boxes[i].bbox[3],
                    ),
                );
                if o > threshold {
                    alive[i] = false;
                }
            }
        }
    }
    kept.into_iter().map(|i| boxes[i]).collect()
}

/// AP by exhaustive integration of the interpolated precision curve.
///
/// Every distinct score is tried as a cut-off to get `(recall, precision)`
/// points by counting; the interpolated precision is then integrated over
/// recall as a step function, evaluating it at the midpoint of each
/// interval between consecutive recall levels.
pub fn ap_bruteforce(labels: &[(f64, bool)], total_gt: usize) -> f64 {
    if total_gt == 0 || labels.is_empty() {
        return 0.0;
    }
    let mut thresholds: Vec<f64> = labels.iter().map(|l| l.0).collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let tp = labels.iter().filter(|l| l.0 >= t && l.1).count();
            let n = labels.iter().filter(|l| l.0 >= t).count();
            (tp as f64 / total_gt as f64, tp as f64 / n as f64)
        })
        .collect();
    let interp = |r: f64| {
        points
            .iter()
            .filter(|p| p.0 >= r)
            .map(|p| p.1)
            .fold(0.0, f64::max)
    };
    let mut levels: Vec<f64> = points.iter().map(|p| p.0).collect();
    levels.push(0.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    levels
        .windows(2)
        .map(|w| (w[1] - w[0]) * interp((w[0] + w[1]) / 2.0))
        .sum()
}

/// Reference single-image pipeline over raw head buffers: scalar decode,
/// clamp to the canvas, NMS, then undo an aspect-preserving centered
/// letterbox of a `src_w x src_h` image. Returns boxes in output order.
pub fn pipeline_oracle(
    heads: &[(&[f32], HeadSpec<'_>)],
    conf_threshold: f32,
    nms_threshold: f64,
    src_w: u32,
    src_h: u32,
) -> Vec<ScoredBox> {
    let mut raw = Vec::new();
    let (mut net_w, mut net_h) = (0, 0);
    for (values, spec) in heads {
        net_w = spec.net_w;
        net_h = spec.net_h;
        for d in decode_scalar(values, spec, conf_threshold, false) {
            let Some(bbox) = clamp_unit(d.cx as f64, d.cy as f64, d.w as f64, d.h as f64) else {
                continue;
            };
            raw.push(ScoredBox {
                bbox,
                class_id: d.class_id as u32,
                score: d.score as f64,
            });
        }
    }
    let scale = (net_w as f64 / src_w as f64).min(net_h as f64 / src_h as f64);
    let fit_w = ((src_w as f64 * scale).round() as u32).clamp(1, net_w);
    let fit_h = ((src_h as f64 * scale).round() as u32).clamp(1, net_h);
    let pad_x = ((net_w - fit_w) / 2) as f64;
    let pad_y = ((net_h - fit_h) / 2) as f64;
    let unmap_x = |x: f64| (x * net_w as f64 - pad_x) / scale / src_w as f64;
    let unmap_y = |y: f64| (y * net_h as f64 - pad_y) / scale / src_h as f64;
    nms_naive(&raw, nms_threshold)
        .into_iter()
        .filter_map(|b| {
            let c = corners(b.bbox[0], b.bbox[1], b.bbox[2], b.bbox[3]);
            clamp_corners([unmap_x(c[0]), unmap_y(c[1]), unmap_x(c[2]), unmap_y(c[3])])
                .map(|bbox| ScoredBox { bbox, ..b })
        })
        .collect()
}

/// Ground truth or detection box on one image for the matching oracles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlainBox {
    pub class_id: u32,
    pub score: f64,
    pub corners: Corners,
}

/// Score-ordered greedy matching over all images at once, restated from the
/// matching rule: strictly-greater IoU against the best still-unmatched
/// ground truth of the same class and image. Detections are visited by
/// descending score, ties broken by image index then detection index.
/// Returns one TP flag per detection, in input layout.
pub fn greedy_match(
    images: &[(Vec<PlainBox>, Vec<PlainBox>)],
    iou_threshold: f64,
) -> Vec<Vec<bool>> {
    let mut order: Vec<(usize, usize)> = Vec::new();
    for (i, (_, dets)) in images.iter().enumerate() {
        for j in 0..dets.len() {
            order.push((i, j));
        }
    }
    order.sort_by(|a, b| {
        let sa = images[a.0].1[a.1].score;
        let sb = images[b.0].1[b.1].score;
        sb.total_cmp(&sa).then(a.cmp(b))
    });
    let mut used: Vec<Vec<bool>> = images.iter().map(|(g, _)| vec![false; g.len()]).collect();
    let mut flags: Vec<Vec<bool>> = images.iter().map(|(_, d)| vec![false; d.len()]).collect();
    for (i, j) in order {
        let d = images[i].1[j];
        let mut best_k = None;
        let mut best_iou = -1.0;
        for (k, g) in images[i].0.iter().enumerate() {
            if used[i][k] || g.class_id != d.class_id {
                continue;
            }
            let o = iou_reference(d.corners, g.corners);
            if o > best_iou {
                best_iou = o;
                best_k = Some(k);
            }
        }
        if let Some(k) = best_k {
            if best_iou > iou_threshold {
                used[i][k] = true;
                flags[i][j] = true;
            }
        }
    }
    flags
}

/// Largest number of detection/ground-truth pairs with IoU above the
/// threshold such that no box is used twice, by exhaustive search.
pub fn max_matching_tp(gts: &[Corners], dets: &[Corners], iou_threshold: f64) -> usize {
    fn go(d: usize, gts: &[Corners], dets: &[Corners], used: &mut Vec<bool>, t: f64) -> usize {
        if d == dets.len() {
            return 0;
        }
        let mut best = go(d + 1, gts, dets, used, t);
        for k in 0..gts.len() {
            if !used[k] && iou_reference(dets[d], gts[k]) > t {
                used[k] = true;
                best = best.max(1 + go(d + 1, gts, dets, used, t));
                used[k] = false;
            }
        }
        best
    }
    go(0, gts, dets, &mut vec![false; gts.len()], iou_threshold)
}

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::detection::Detection;
use crate::geometry::iou;

fn by_score_then_index(dets: &[Detection]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        dets[b]
            .score
            .total_cmp(&dets[a].score)
            .then_with(|| a.cmp(&b))
    }
}

/// Greedy per-class non-maximum suppression.
///
/// Within each class, boxes are visited by descending score (earlier input
/// wins ties) and a box is dropped when its IoU with an already kept box is
/// strictly greater than `iou_threshold`. With a threshold of 1.0 nothing is
/// suppressed. The result is ordered by descending score, then input index.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        by_class.entry(d.class_id).or_default().push(i);
    }

    let mut kept: Vec<usize> = Vec::with_capacity(dets.len());
    for (_, mut idx) in by_class {
        idx.sort_by(by_score_then_index(dets));
        let mut class_kept: Vec<usize> = Vec::new();
        for i in idx {
            let suppressed = class_kept
                .iter()
                .any(|&k| iou(&dets[k].bbox, &dets[i].bbox) > iou_threshold);
            if !suppressed {
                class_kept.push(i);
            }
        }
        kept.extend(class_kept);
    }
    kept.sort_by(by_score_then_index(dets));
    kept.into_iter().map(|i| dets[i]).collect()
}

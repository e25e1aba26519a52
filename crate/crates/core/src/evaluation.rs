//! Detection/ground-truth matching and the precision, recall, F1 and
//! all-point interpolated AP/mAP metrics.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotations::{ClassMap, ImageAnnotation};
use crate::detection::Detection;
use crate::geometry::iou;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("detections reference images missing from the ground truth: {}", .0.join(", "))]
    UnknownImages(Vec<String>),
    #[error("ground truth lists image {0:?} more than once")]
    DuplicateImage(String),
    #[error("class id {class_id} out of range for {num_classes} classes")]
    ClassOutOfRange { class_id: u32, num_classes: usize },
    #[error("{name} threshold {value} outside [0, 1]")]
    Threshold { name: &'static str, value: f64 },
}

/// Operating point of an evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    /// A detection matches when IoU is strictly greater than this.
    pub iou_threshold: f64,
    /// Detections below this score are ignored for precision/recall/F1.
    pub conf_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iou_threshold: 0.5,
            conf_threshold: 0.2,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        for (name, value) in [
            ("iou", self.iou_threshold),
            ("confidence", self.conf_threshold),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(EvalError::Threshold { name, value });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// A detection after matching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDetection {
    pub image_id: String,
    pub detection: Detection,
    pub tp: bool,
    /// Index of the matched box in the image's ground truth.
    pub matched_gt: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// Labels in processing order: class, then descending score.
    pub labels: Vec<LabeledDetection>,
    /// Ground-truth box count per class id.
    pub gt_per_class: BTreeMap<u32, usize>,
}

impl MatchResult {
    pub fn total_gt(&self) -> usize {
        self.gt_per_class.values().sum()
    }

    /// Counts over detections scoring at least `conf_threshold`.
    pub fn counts(&self, conf_threshold: f64) -> MatchCounts {
        let (mut tp, mut fp) = (0, 0);
        for l in self
            .labels
            .iter()
            .filter(|l| l.detection.score >= conf_threshold)
        {
            if l.tp {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        MatchCounts {
            tp,
            fp,
            fn_: self.total_gt() - tp,
        }
    }

    /// `(score, is_tp)` pairs of one class.
    pub fn class_labels(&self, class_id: u32) -> Vec<(f64, bool)> {
        self.labels
            .iter()
            .filter(|l| l.detection.class_id == class_id)
            .map(|l| (l.detection.score, l.tp))
            .collect()
    }
}

/// Ordering that does not depend on input order: class, descending score,
/// image id, then box coordinates.
fn canonical(a: &(&str, &Detection), b: &(&str, &Detection)) -> Ordering {
    let (ia, da) = a;
    let (ib, db) = b;
    da.class_id
        .cmp(&db.class_id)
        .then_with(|| db.score.total_cmp(&da.score))
        .then_with(|| ia.cmp(ib))
        .then_with(|| da.bbox.cx.total_cmp(&db.bbox.cx))
        .then_with(|| da.bbox.cy.total_cmp(&db.bbox.cy))
        .then_with(|| da.bbox.w.total_cmp(&db.bbox.w))
        .then_with(|| da.bbox.h.total_cmp(&db.bbox.h))
}

fn index_ground_truth(
    gts: &[ImageAnnotation],
) -> Result<BTreeMap<&str, &ImageAnnotation>, EvalError> {
    let mut by_id = BTreeMap::new();
    for a in gts {
        if by_id.insert(a.image_id.as_str(), a).is_some() {
            return Err(EvalError::DuplicateImage(a.image_id.clone()));
        }
    }
    Ok(by_id)
}

/// Greedy score-ordered matching, per class.
///
/// Each detection takes the unmatched same-class ground-truth box with the
/// highest IoU in its image (lower index on ties). It is a true positive
/// when that IoU is strictly greater than `iou_threshold`; the box is then
/// consumed. Ground-truth images without detections are allowed; detections
/// for images absent from the ground truth are an error.
pub fn match_detections(
    dets: &BTreeMap<String, Vec<Detection>>,
    gts: &[ImageAnnotation],
    iou_threshold: f64,
) -> Result<MatchResult, EvalError> {
    let gt_by_id = index_ground_truth(gts)?;
    let unknown: Vec<String> = dets
        .keys()
        .filter(|id| !gt_by_id.contains_key(id.as_str()))
        .cloned()
        .collect();
    if !unknown.is_empty() {
        return Err(EvalError::UnknownImages(unknown));
    }

    let mut gt_per_class: BTreeMap<u32, usize> = BTreeMap::new();
    for a in gts {
        for b in &a.boxes {
            *gt_per_class.entry(b.class_id).or_default() += 1;
        }
    }

    let mut order: Vec<(&str, &Detection)> = dets
        .iter()
        .flat_map(|(id, ds)| ds.iter().map(move |d| (id.as_str(), d)))
        .collect();
    order.sort_by(canonical);

    let mut used: BTreeMap<&str, Vec<bool>> = gt_by_id
        .iter()
        .map(|(id, a)| (*id, vec![false; a.boxes.len()]))
        .collect();

    let mut labels = Vec::with_capacity(order.len());
    for (image_id, det) in order {
        let gt = gt_by_id[image_id];
        let taken = used.get_mut(image_id).expect("indexed above");
        let mut best: Option<(usize, f64)> = None;
        for (k, g) in gt.boxes.iter().enumerate() {
            if taken[k] || g.class_id != det.class_id {
                continue;
            }
            let o = iou(&det.bbox, &g.bbox);
            if best.is_none_or(|(_, b)| o > b) {
                best = Some((k, o));
            }
        }
        let matched = best.filter(|&(_, o)| o > iou_threshold).map(|(k, _)| k);
        if let Some(k) = matched {
            taken[k] = true;
        }
        labels.push(LabeledDetection {
            image_id: image_id.to_string(),
            detection: *det,
            tp: matched.is_some(),
            matched_gt: matched,
        });
    }

    Ok(MatchResult {
        labels,
        gt_per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Precision, recall and their harmonic mean. Any zero denominator yields 0.
pub fn precision_recall_f1(c: MatchCounts) -> PrecisionRecallF1 {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    PrecisionRecallF1 {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
    pub score_threshold: f64,
}

/// Precision/recall at every distinct score, highest first. Detections with
/// equal scores enter the curve together.
pub fn pr_curve(labels: &[(f64, bool)], total_gt: usize) -> Vec<PrPoint> {
    let mut sorted = labels.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let score = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == score {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let recall = if total_gt == 0 {
            0.0
        } else {
            tp as f64 / total_gt as f64
        };
        points.push(PrPoint {
            recall,
            precision: tp as f64 / (tp + fp) as f64,
            score_threshold: score,
        });
    }
    points
}

/// Highest precision among points with recall at least `recall`; 0 if none.
pub fn interp_precision(curve: &[PrPoint], recall: f64) -> f64 {
    curve
        .iter()
        .filter(|p| p.recall >= recall)
        .map(|p| p.precision)
        .fold(0.0, f64::max)
}

/// All-point interpolated AP: `sum (r_n - r_{n-1}) * P_interp(r_n)` over the
/// distinct recall levels of the curve, starting from `r_0 = 0`.
pub fn average_precision(curve: &[PrPoint]) -> f64 {
    // recall is non-decreasing along the curve, so the points with
    // recall >= r_n form a suffix and P_interp is a suffix maximum
    let mut suffix_max = vec![0.0f64; curve.len()];
    let mut running = 0.0f64;
    for (i, p) in curve.iter().enumerate().rev() {
        running = running.max(p.precision);
        suffix_max[i] = running;
    }
    let mut ap = 0.0;
    let mut prev = 0.0;
    for (i, p) in curve.iter().enumerate() {
        if p.recall > prev {
            ap += (p.recall - prev) * suffix_max[i];
            prev = p.recall;
        }
    }
    ap
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: u32,
    pub name: String,
    pub num_gt: usize,
    pub num_detections: usize,
    /// `None` when the class has no ground-truth boxes.
    pub ap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub iou_threshold: f64,
    pub conf_threshold: f64,
    pub num_images: usize,
    pub classes: Vec<ClassReport>,
    /// Mean AP over classes that have ground truth.
    pub map: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: MatchCounts,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports always serialize")
    }

    /// Plain-text table with Precision, Recall, F1-Score and mAP columns.
    pub fn to_table(&self, label: &str) -> String {
        let width = label.len().max(7);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>6}  {:>8}  {:>5}",
            "Network", "Precision", "Recall", "F1-Score", "mAP"
        );
        let _ = writeln!(
            out,
            "{:<width$}  {:>9.3}  {:>6.3}  {:>8.3}  {:>5.3}",
            label, self.precision, self.recall, self.f1, self.map
        );
        if self.classes.len() > 1 {
            out.push('\n');
            let tag_width = self
                .classes
                .iter()
                .map(|c| c.name.len() + 4)
                .max()
                .unwrap_or(0);
            for c in &self.classes {
                let ap =
                    c.ap.map_or_else(|| "-".to_string(), |ap| format!("{ap:.3}"));
                let tag = format!("AP[{}]", c.name);
                let _ = writeln!(
                    out,
                    "  {tag:<tag_width$}  {ap:>5}  (gt {}, det {})",
                    c.num_gt, c.num_detections
                );
            }
        }
        out
    }
}

/// Matches, then reports operating-point P/R/F1 and per-class AP/mAP.
pub fn evaluate(
    dets: &BTreeMap<String, Vec<Detection>>,
    gts: &[ImageAnnotation],
    classes: &ClassMap,
    cfg: &EvalConfig,
) -> Result<EvalReport, EvalError> {
    cfg.validate()?;
    let check = |class_id: u32| {
        if (class_id as usize) < classes.len() {
            Ok(())
        } else {
            Err(EvalError::ClassOutOfRange {
                class_id,
                num_classes: classes.len(),
            })
        }
    };
    for d in dets.values().flatten() {
        check(d.class_id)?;
    }
    for b in gts.iter().flat_map(|a| &a.boxes) {
        check(b.class_id)?;
    }

    let matched = match_detections(dets, gts, cfg.iou_threshold)?;
    let counts = matched.counts(cfg.conf_threshold);
    let prf = precision_recall_f1(counts);

    let mut class_reports = Vec::with_capacity(classes.len());
    for (id, name) in classes.names().iter().enumerate() {
        let class_id = id as u32;
        let num_gt = matched.gt_per_class.get(&class_id).copied().unwrap_or(0);
        let labels = matched.class_labels(class_id);
        let ap = (num_gt > 0).then(|| average_precision(&pr_curve(&labels, num_gt)));
        class_reports.push(ClassReport {
            class_id,
            name: name.clone(),
            num_gt,
            num_detections: labels.len(),
            ap,
        });
    }
    let aps: Vec<f64> = class_reports.iter().filter_map(|c| c.ap).collect();
    let map = if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    };

    let images: BTreeSet<&str> = gts.iter().map(|a| a.image_id.as_str()).collect();
    Ok(EvalReport {
        iou_threshold: cfg.iou_threshold,
        conf_threshold: cfg.conf_threshold,
        num_images: images.len(),
        classes: class_reports,
        map,
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        counts,
    })
}

//! YOLOv3 head decoding.
//!
//! For a cell at `(row, col)` and anchor `(pw, ph)`:
//!
//! ```text
//! cx = (col + sigmoid(tx)) * stride / net_w     w = pw * exp(tw) / net_w
//! cy = (row + sigmoid(ty)) * stride / net_h     h = ph * exp(th) / net_h
//! ```
//!
//! All arithmetic is `f32` through `libm`, so results are bit-identical on
//! every platform.

use super::config::{ModelConfig, ScoreMode};
use super::tensor::HeadTensor;
use super::InferenceError;
use crate::detection::Detection;
use crate::geometry::BBox;

#[inline]
pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + libm::expf(-x))
}

fn check_head(h: &HeadTensor, cfg: &ModelConfig) -> Result<(), InferenceError> {
    let expected = [
        cfg.net_h / h.stride.max(1),
        cfg.net_w / h.stride.max(1),
        h.anchors.len() as u32,
        5 + cfg.num_classes as u32,
    ];
    let consistent = h.stride > 0
        && cfg.net_w.is_multiple_of(h.stride)
        && cfg.net_h.is_multiple_of(h.stride)
        && !h.anchors.is_empty()
        && h.dims() == expected
        && h.values.len() == expected.iter().map(|&d| d as usize).product::<usize>();
    if !consistent {
        return Err(InferenceError::DimMismatch {
            expected: expected.to_vec(),
            actual: h.dims().to_vec(),
        });
    }
    Ok(())
}

/// Decodes one head into canvas-normalized detections (before NMS).
///
/// A cell/anchor is kept when its score reaches `cfg.conf_threshold`. Boxes
/// are clamped to the canvas; boxes with no area left are dropped. Output
/// order is row, column, anchor.
pub fn decode_head(h: &HeadTensor, cfg: &ModelConfig) -> Result<Vec<Detection>, InferenceError> {
    check_head(h, cfg)?;
    let conf = cfg.conf_threshold as f32;
    let stride = h.stride as f32;
    let (net_w, net_h) = (cfg.net_w as f32, cfg.net_h as f32);
    let channels = h.channels();
    let per_row = h.grid_w as usize * h.num_anchors();

    let mut out = Vec::new();
    for (k, t) in h.values.chunks_exact(channels).enumerate() {
        let objectness = sigmoid(t[4]);
        // class probabilities are at most 1, so this bound is exact; NaN fails
        if objectness.partial_cmp(&conf).is_none_or(|o| o.is_lt()) {
            continue;
        }
        let (mut class_id, mut class_prob) = (0usize, f32::NEG_INFINITY);
        for (c, &logit) in t[5..].iter().enumerate() {
            let p = sigmoid(logit);
            if p > class_prob {
                class_id = c;
                class_prob = p;
            }
        }
        let score = match cfg.score_mode {
            ScoreMode::ObjectnessTimesClass => objectness * class_prob,
            ScoreMode::Objectness => objectness,
        };
        if score.partial_cmp(&conf).is_none_or(|o| o.is_lt()) {
            continue;
        }

        let row = (k / per_row) as f32;
        let col = ((k % per_row) / h.num_anchors()) as f32;
        let [pw, ph] = h.anchors[k % h.num_anchors()];
        let cx = (col + sigmoid(t[0])) * stride / net_w;
        let cy = (row + sigmoid(t[1])) * stride / net_h;
        let bw = pw * libm::expf(t[2]) / net_w;
        let bh = ph * libm::expf(t[3]) / net_h;

        let (cx, cy, bw, bh) = (cx as f64, cy as f64, bw as f64, bh as f64);
        let Some(bbox) =
            BBox::from_corners_clamped(cx - bw / 2.0, cy - bh / 2.0, cx + bw / 2.0, cy + bh / 2.0)
        else {
            continue;
        };
        out.push(Detection {
            bbox,
            class_id: class_id as u32,
            score: (score as f64).clamp(0.0, 1.0),
        });
    }
    Ok(out)
}

/// Decodes every head in order and concatenates the results.
pub fn decode_heads(
    heads: &[HeadTensor],
    cfg: &ModelConfig,
) -> Result<Vec<Detection>, InferenceError> {
    if heads.len() != cfg.heads.len() {
        return Err(InferenceError::HeadCount {
            expected: cfg.heads.len(),
            actual: heads.len(),
        });
    }
    let mut all = Vec::new();
    for h in heads {
        all.extend(decode_head(h, cfg)?);
    }
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quiet_head(cfg: &ModelConfig, head: usize) -> HeadTensor {
        let mut h = HeadTensor::filled(cfg, &cfg.heads[head], 0.0);
        for a in 0..h.num_anchors() {
            for r in 0..h.grid_h {
                for c in 0..h.grid_w {
                    h.cell_mut(r, c, a)[4] = -20.0;
                }
            }
        }
        h
    }

    #[test]
    fn suppressed_objectness_yields_nothing() {
        let cfg = ModelConfig::yolov3_416();
        for i in 0..3 {
            assert!(decode_head(&quiet_head(&cfg, i), &cfg).unwrap().is_empty());
        }
    }

    #[test]
    fn single_active_cell() {
        let cfg = ModelConfig::yolov3_416();
        let mut h = quiet_head(&cfg, 2);
        assert_eq!((h.grid_h, h.grid_w), (13, 13));
        let cell = h.cell_mut(6, 6, 0);
        cell[..4].copy_from_slice(&[0.0, 0.0, 0.0, 0.0]);
        cell[4] = 10.0;
        cell[5] = 10.0;
        let dets = decode_head(&h, &cfg).unwrap();
        assert_eq!(dets.len(), 1);
        let d = dets[0];
        assert_eq!((d.bbox.cx, d.bbox.cy), (0.5, 0.5));
        assert!((d.bbox.w - 116.0 / 416.0).abs() < 1e-6);
        assert!((d.bbox.h - 90.0 / 416.0).abs() < 1e-6);
        let s = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((d.score - s * s).abs() < 1e-6);
        assert!((d.score - 0.99991).abs() < 1e-5);
    }

    #[test]
    fn score_modes() {
        let mut cfg = ModelConfig::tiny_yolov3();
        let mut h = quiet_head(&cfg, 1);
        let cell = h.cell_mut(2, 3, 1);
        cell[4] = 3.0; // sigmoid ~ 0.953
        cell[5] = -3.0; // sigmoid ~ 0.047
        assert!(decode_head(&h, &cfg).unwrap().is_empty());
        cfg.score_mode = ScoreMode::Objectness;
        let d = decode_head(&h, &cfg).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d[0].score - 0.952_574).abs() < 1e-5);
    }

    #[test]
    fn multi_class_argmax() {
        let mut cfg = ModelConfig::tiny_yolov3();
        cfg.num_classes = 3;
        let mut h = quiet_head(&cfg, 0);
        let cell = h.cell_mut(0, 0, 2);
        cell[4] = 8.0;
        cell[5..8].copy_from_slice(&[-1.0, 4.0, 4.0]);
        let d = decode_head(&h, &cfg).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].class_id, 1);
        // box hangs off the top-left corner and gets clamped
        assert_eq!(d[0].bbox.corners().0, 0.0);
    }

    #[test]
    fn dim_mismatch_is_reported() {
        let cfg = ModelConfig::yolov3_416();
        let tiny = ModelConfig::tiny_yolov3();
        let h = HeadTensor::filled(&tiny, &tiny.heads[0], 0.0);
        let mut other = cfg.clone();
        other.num_classes = 2;
        assert!(matches!(
            decode_head(&h, &other),
            Err(InferenceError::DimMismatch { .. })
        ));
        let mut truncated = h.clone();
        truncated.values.pop();
        assert!(decode_head(&truncated, &tiny).is_err());
        assert!(matches!(
            decode_heads(&[h], &tiny),
            Err(InferenceError::HeadCount {
                expected: 2,
                actual: 1
            })
        ));
    }

    #[test]
    fn nan_logits_are_ignored() {
        let cfg = ModelConfig::tiny_yolov3();
        let mut h = quiet_head(&cfg, 1);
        h.cell_mut(1, 1, 0)[4] = f32::NAN;
        let c = h.cell_mut(2, 2, 0);
        c[4] = 10.0;
        c[5] = 10.0;
        c[2] = f32::NAN;
        assert!(decode_head(&h, &cfg).unwrap().is_empty());
    }
}

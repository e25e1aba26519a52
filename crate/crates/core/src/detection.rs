//! Scored detections and the JSON-lines interchange used to feed them to the
//! evaluator from any model.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{BBox, GeometryError};

/// A predicted box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: u32,
    pub score: f64,
}

impl Detection {
    pub fn new(bbox: BBox, class_id: u32, score: f64) -> Result<Self, DetectionError> {
        let d = Detection {
            bbox,
            class_id,
            score,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), DetectionError> {
        self.bbox.validate()?;
        if !(0.0..=1.0).contains(&self.score) {
            return Err(DetectionError::Score(self.score));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("score {0} outside [0, 1]")]
    Score(f64),
    #[error(transparent)]
    Box(#[from] GeometryError),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

/// One line of the interchange file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class_id: u32,
    pub score: f64,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl DetectionRecord {
    pub fn new(image_id: &str, d: &Detection) -> Self {
        DetectionRecord {
            image_id: image_id.to_string(),
            class_id: d.class_id,
            score: d.score,
            cx: d.bbox.cx,
            cy: d.bbox.cy,
            w: d.bbox.w,
            h: d.bbox.h,
        }
    }

    pub fn detection(&self) -> Result<Detection, DetectionError> {
        Detection::new(
            BBox {
                cx: self.cx,
                cy: self.cy,
                w: self.w,
                h: self.h,
            },
            self.class_id,
            self.score,
        )
    }
}

/// Serializes detections, one JSON object per line, in the given order.
pub fn write_jsonl<'a>(records: impl IntoIterator<Item = (&'a str, &'a Detection)>) -> String {
    let mut out = String::new();
    for (id, d) in records {
        let line = serde_json::to_string(&DetectionRecord::new(id, d))
            .expect("detection records always serialize");
        let _ = writeln!(out, "{line}");
    }
    out
}

/// Parses an interchange file; blank lines are skipped.
pub fn read_jsonl(text: &str) -> Result<Vec<(String, Detection)>, DetectionError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let rec: DetectionRecord = serde_json::from_str(raw).map_err(|e| DetectionError::Line {
            line,
            message: e.to_string(),
        })?;
        let det = rec.detection().map_err(|e| DetectionError::Line {
            line,
            message: e.to_string(),
        })?;
        out.push((rec.image_id, det));
    }
    Ok(out)
}

/// Groups parsed records by image id, keeping file order within an image.
pub fn group_by_image(records: Vec<(String, Detection)>) -> BTreeMap<String, Vec<Detection>> {
    let mut map: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for (id, d) in records {
        map.entry(id).or_default().push(d);
    }
    map
}

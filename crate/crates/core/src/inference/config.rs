use std::path::Path;

use serde::{Deserialize, Serialize};

use super::InferenceError;

/// Names of the built-in model geometries.
pub const YOLOV3_416: &str = "yolov3-416";
pub const TINY_YOLOV3: &str = "tiny-yolov3";
pub const BUILTIN_MODELS: [&str; 2] = [YOLOV3_416, TINY_YOLOV3];

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.2;
pub const DEFAULT_NMS_IOU_THRESHOLD: f64 = 0.5;

/// How the per-box score compared against `conf_threshold` is formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// `sigmoid(objectness) * max_c sigmoid(class_c)`
    #[default]
    ObjectnessTimesClass,
    /// `sigmoid(objectness)` alone; the class is still the arg-max.
    Objectness,
}

/// One output scale of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Network pixels per grid cell.
    pub stride: u32,
    /// Anchor priors `(width, height)` in network pixels.
    pub anchors: Vec<[f32; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default = "default_net")]
    pub net_w: u32,
    #[serde(default = "default_net")]
    pub net_h: u32,
    #[serde(default = "default_classes")]
    pub num_classes: usize,
    #[serde(default = "default_conf")]
    pub conf_threshold: f64,
    #[serde(default = "default_nms")]
    pub nms_iou_threshold: f64,
    #[serde(default)]
    pub score_mode: ScoreMode,
    pub heads: Vec<HeadConfig>,
}

fn default_net() -> u32 {
    416
}
fn default_classes() -> usize {
    1
}
fn default_conf() -> f64 {
    DEFAULT_CONF_THRESHOLD
}
fn default_nms() -> f64 {
    DEFAULT_NMS_IOU_THRESHOLD
}

fn head(stride: u32, anchors: [[f32; 2]; 3]) -> HeadConfig {
    HeadConfig {
        stride,
        anchors: anchors.to_vec(),
    }
}

impl ModelConfig {
    /// Three heads at strides 8, 16 and 32 with the COCO YOLOv3 anchors.
    pub fn yolov3_416() -> Self {
        ModelConfig {
            name: YOLOV3_416.to_string(),
            net_w: 416,
            net_h: 416,
            num_classes: 1,
            conf_threshold: DEFAULT_CONF_THRESHOLD,
            nms_iou_threshold: DEFAULT_NMS_IOU_THRESHOLD,
            score_mode: ScoreMode::default(),
            heads: vec![
                head(8, [[10.0, 13.0], [16.0, 30.0], [33.0, 23.0]]),
                head(16, [[30.0, 61.0], [62.0, 45.0], [59.0, 119.0]]),
                head(32, [[116.0, 90.0], [156.0, 198.0], [373.0, 326.0]]),
            ],
        }
    }

    /// Two heads at strides 16 and 32 with the tiny-YOLOv3 anchors.
    pub fn tiny_yolov3() -> Self {
        ModelConfig {
            name: TINY_YOLOV3.to_string(),
            heads: vec![
                head(16, [[10.0, 14.0], [23.0, 27.0], [37.0, 58.0]]),
                head(32, [[81.0, 82.0], [135.0, 169.0], [344.0, 319.0]]),
            ],
            ..ModelConfig::yolov3_416()
        }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            YOLOV3_416 => Some(ModelConfig::yolov3_416()),
            TINY_YOLOV3 => Some(ModelConfig::tiny_yolov3()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |m: String| Err(InferenceError::Config(m));
        if self.name.trim().is_empty() {
            return bad("model name is empty".into());
        }
        if self.net_w == 0
            || self.net_h == 0
            || !self.net_w.is_multiple_of(32)
            || !self.net_h.is_multiple_of(32)
        {
            return bad(format!(
                "network size {}x{} must be a positive multiple of 32",
                self.net_w, self.net_h
            ));
        }
        if self.num_classes == 0 {
            return bad("num_classes must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.conf_threshold) {
            return bad(format!(
                "conf_threshold {} outside [0, 1]",
                self.conf_threshold
            ));
        }
        if !(0.0..=1.0).contains(&self.nms_iou_threshold) {
            return bad(format!(
                "nms_iou_threshold {} outside [0, 1]",
                self.nms_iou_threshold
            ));
        }
        if self.heads.is_empty() {
            return bad("at least one head is required".into());
        }
        for h in &self.heads {
            if h.stride == 0
                || !self.net_w.is_multiple_of(h.stride)
                || !self.net_h.is_multiple_of(h.stride)
            {
                return bad(format!(
                    "stride {} does not divide {}x{}",
                    h.stride, self.net_w, self.net_h
                ));
            }
            if h.anchors.is_empty() {
                return bad(format!("stride {} has no anchors", h.stride));
            }
            if h.anchors
                .iter()
                .flatten()
                .any(|v| !(v.is_finite() && *v > 0.0))
            {
                return bad(format!("stride {} has a non-positive anchor", h.stride));
            }
        }
        Ok(())
    }

    /// `(grid_h, grid_w)` per head, in head order.
    pub fn grid_shapes(&self) -> Vec<(u32, u32)> {
        self.heads
            .iter()
            .map(|h| (self.net_h / h.stride, self.net_w / h.stride))
            .collect()
    }

    pub fn from_toml_str(text: &str) -> Result<Self, InferenceError> {
        let cfg: ModelConfig =
            toml::from_str(text).map_err(|e| InferenceError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model config always serializes")
    }

    pub fn load(path: &Path) -> Result<Self, InferenceError> {
        let text = std::fs::read_to_string(path).map_err(|e| InferenceError::io(path, e))?;
        ModelConfig::from_toml_str(&text)
            .map_err(|e| InferenceError::Config(format!("{}: {e}", path.display())))
    }
}

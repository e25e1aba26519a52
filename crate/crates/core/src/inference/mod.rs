//! Preprocessing, YOLO head decoding, NMS and the model-backend contract.

mod backend;
mod config;
mod decode;
mod letterbox;
mod nms;
mod tensor;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use backend::{check_image_id, Backend, InferenceRequest, ReplayBackend};
pub use config::{
    HeadConfig, ModelConfig, ScoreMode, BUILTIN_MODELS, DEFAULT_CONF_THRESHOLD,
    DEFAULT_NMS_IOU_THRESHOLD, TINY_YOLOV3, YOLOV3_416,
};
pub use decode::{decode_head, decode_heads, sigmoid};
pub use letterbox::{letterbox, Letterbox, LETTERBOX_FILL};
pub use nms::nms;
pub use tensor::{HeadTensor, Tensor, WLT_MAGIC};

use crate::detection::Detection;
use crate::raster::RasterImage;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid tensor: {0}")]
    Tensor(String),
    #[error("head tensor dims {actual:?} do not match expected {expected:?}")]
    DimMismatch {
        expected: Vec<u32>,
        actual: Vec<u32>,
    },
    #[error("backend returned {actual} heads, model has {expected}")]
    HeadCount { expected: usize, actual: usize },
    #[error("no stored tensors for image {image_id:?} ({})", path.display())]
    UnknownImage { image_id: String, path: PathBuf },
    #[error("invalid image id {0:?}")]
    InvalidImageId(String),
    #[error("backend {backend}: {message}")]
    Backend { backend: String, message: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl InferenceError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        InferenceError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn is_io(&self) -> bool {
        matches!(
            self,
            InferenceError::Io { .. } | InferenceError::UnknownImage { .. }
        )
    }
}

/// Full single-image pipeline: letterbox, backend, decode every head, NMS,
/// then map boxes back onto the source image.
pub fn detect(
    img: &RasterImage,
    image_id: &str,
    backend: &mut dyn Backend,
    cfg: &ModelConfig,
) -> Result<Vec<Detection>, InferenceError> {
    cfg.validate()?;
    let (canvas, lb) = letterbox(img, cfg.net_w, cfg.net_h)?;
    let heads = backend
        .infer(&InferenceRequest {
            image_id,
            canvas: &canvas,
            config: cfg,
        })
        .map_err(|e| match e {
            e @ (InferenceError::Backend { .. }
            | InferenceError::UnknownImage { .. }
            | InferenceError::Io { .. }) => e,
            other => InferenceError::Backend {
                backend: backend.name().to_string(),
                message: other.to_string(),
            },
        })?;
    let raw = decode_heads(&heads, cfg)?;
    let kept = nms(&raw, cfg.nms_iou_threshold);
    Ok(kept
        .into_iter()
        .filter_map(|d| {
            lb.box_to_source(&d.bbox)
                .map(|bbox| Detection { bbox, ..d })
        })
        .collect())
}

//! Object-detection tooling for wound localization: box geometry, YOLO and
//! Pascal VOC annotations, deterministic augmentation, YOLOv3 head decoding
//! with NMS, and IoU/precision/recall/F1/mAP evaluation.

pub mod annotations;
pub mod augment;
pub mod detection;
pub mod evaluation;
pub mod geometry;
pub mod inference;
pub mod raster;

pub use annotations::{AnnotatedBox, AnnotationFormat, ClassMap, ImageAnnotation};
pub use detection::Detection;
pub use evaluation::{evaluate, EvalConfig, EvalReport};
pub use geometry::{iou, BBox, PixelRect};
pub use inference::{detect, Backend, ModelConfig, ReplayBackend};
pub use raster::RasterImage;

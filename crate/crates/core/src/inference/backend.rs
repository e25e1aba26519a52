use std::path::{Path, PathBuf};

use super::config::ModelConfig;
use super::tensor::{HeadTensor, Tensor};
use super::InferenceError;
use crate::raster::RasterImage;

/// What a backend receives for one inference call.
#[derive(Debug, Clone, Copy)]
pub struct InferenceRequest<'a> {
    pub image_id: &'a str,
    /// Letterboxed network input.
    pub canvas: &'a RasterImage,
    pub config: &'a ModelConfig,
}

/// A model runtime producing raw head tensors.
///
/// Calls take `&mut self`: a backend may keep session state, so each call has
/// exclusive access. Run one backend per worker for parallel inference.
pub trait Backend: Send {
    fn name(&self) -> &str;

    /// Returns one tensor per configured head, in head order.
    fn infer(&mut self, request: &InferenceRequest<'_>) -> Result<Vec<HeadTensor>, InferenceError>;
}

/// Image ids double as file names, so they are restricted to
/// `[A-Za-z0-9._-]` and may not start with a dot.
pub fn check_image_id(id: &str) -> Result<(), InferenceError> {
    let ok = !id.is_empty()
        && id.len() <= 255
        && !id.starts_with('.')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'));
    if ok {
        Ok(())
    } else {
        Err(InferenceError::InvalidImageId(id.to_string()))
    }
}

/// Serves pre-recorded head tensors from `<dir>/<image_id>.head<k>.wlt`.
#[derive(Debug, Clone)]
pub struct ReplayBackend {
    dir: PathBuf,
}

impl ReplayBackend {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, InferenceError> {
        let dir = dir.into();
        if !dir.is_dir() {
            return Err(InferenceError::io(
                &dir,
                std::io::Error::new(std::io::ErrorKind::NotFound, "replay directory not found"),
            ));
        }
        Ok(ReplayBackend { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn head_path(dir: &Path, image_id: &str, head: usize) -> PathBuf {
        dir.join(format!("{image_id}.head{head}.wlt"))
    }

    pub fn has_image(&self, image_id: &str) -> bool {
        check_image_id(image_id).is_ok() && Self::head_path(&self.dir, image_id, 0).is_file()
    }

    /// Reads the stored heads for `image_id`. Needs only shared access.
    pub fn load(
        &self,
        image_id: &str,
        cfg: &ModelConfig,
    ) -> Result<Vec<HeadTensor>, InferenceError> {
        check_image_id(image_id)?;
        let mut heads = Vec::with_capacity(cfg.heads.len());
        for (k, head) in cfg.heads.iter().enumerate() {
            let path = Self::head_path(&self.dir, image_id, k);
            if !path.is_file() {
                return Err(InferenceError::UnknownImage {
                    image_id: image_id.to_string(),
                    path,
                });
            }
            let tensor = Tensor::read(&path)?;
            heads.push(HeadTensor::from_tensor(tensor, cfg, head)?);
        }
        Ok(heads)
    }

    /// Stores heads in the layout [`ReplayBackend::load`] expects.
    pub fn record(dir: &Path, image_id: &str, heads: &[HeadTensor]) -> Result<(), InferenceError> {
        check_image_id(image_id)?;
        std::fs::create_dir_all(dir).map_err(|e| InferenceError::io(dir, e))?;
        for (k, h) in heads.iter().enumerate() {
            h.to_tensor().write(&Self::head_path(dir, image_id, k))?;
        }
        Ok(())
    }
}

impl Backend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn infer(&mut self, request: &InferenceRequest<'_>) -> Result<Vec<HeadTensor>, InferenceError> {
        self.load(request.image_id, request.config)
    }
}

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, Mutex};

use woundscope_core::inference::{Backend, InferenceError, ModelConfig, ReplayBackend};

/// A backend behind a lock: backends get exclusive access per call.
pub type SharedBackend = Arc<Mutex<Box<dyn Backend>>>;

/// Model configurations the service knows, and the backends able to run them.
#[derive(Default, Clone)]
pub struct Registry {
    models: BTreeMap<String, ModelConfig>,
    backends: BTreeMap<String, SharedBackend>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Registry")
            .field("models", &self.models.keys().collect::<Vec<_>>())
            .field("backends", &self.backends.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Registry {
    /// Both built-in models, no backends.
    pub fn builtin() -> Self {
        let models = [ModelConfig::yolov3_416(), ModelConfig::tiny_yolov3()]
            .into_iter()
            .map(|m| (m.name.clone(), m))
            .collect();
        Registry {
            models,
            backends: BTreeMap::new(),
        }
    }

    /// Adds or replaces a model configuration.
    pub fn add_model(&mut self, cfg: ModelConfig) {
        self.models.insert(cfg.name.clone(), cfg);
    }

    pub fn add_backend(&mut self, model: &str, backend: Box<dyn Backend>) {
        self.backends
            .insert(model.to_string(), Arc::new(Mutex::new(backend)));
    }

    /// Attaches replay backends from `dir`. A subdirectory named after a
    /// known model serves that model; tensor files directly in `dir` serve
    /// `default_model`.
    pub fn attach_replay(&mut self, dir: &Path, default_model: &str) -> Result<(), InferenceError> {
        let root = ReplayBackend::open(dir)?;
        let names: Vec<String> = self.models.keys().cloned().collect();
        for name in names {
            let sub = dir.join(&name);
            if sub.is_dir() {
                self.add_backend(&name, Box::new(ReplayBackend::open(sub)?));
            }
        }
        let has_flat_tensors = fs::read_dir(dir)
            .map_err(|e| InferenceError::Io {
                path: dir.to_path_buf(),
                source: e,
            })?
            .filter_map(|e| e.ok())
            .any(|e| e.file_name().to_string_lossy().ends_with(".wlt"));
        if has_flat_tensors && !self.backends.contains_key(default_model) {
            self.add_backend(default_model, Box::new(root));
        }
        Ok(())
    }

    pub fn model(&self, name: &str) -> Option<&ModelConfig> {
        self.models.get(name)
    }

    pub fn models(&self) -> impl Iterator<Item = &ModelConfig> {
        self.models.values()
    }

    pub fn backend(&self, model: &str) -> Option<&SharedBackend> {
        self.backends.get(model)
    }

    pub fn backend_name(&self, model: &str) -> Option<String> {
        let b = self.backends.get(model)?;
        let guard = b.lock().unwrap_or_else(|p| p.into_inner());
        Some(guard.name().to_string())
    }
}

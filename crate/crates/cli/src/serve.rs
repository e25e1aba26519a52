use std::io::Write;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use woundscope_service::{router, AppState, Registry, ServiceConfig, Settings};

use crate::commands::{class_map, model_config, replay_dir};
use crate::error::{CliError, CliResult};
use crate::GlobalOpts;

pub fn run(
    g: &GlobalOpts,
    addr: &str,
    backend: Option<&str>,
    model: &str,
    max_body_bytes: usize,
) -> CliResult<()> {
    let addr: SocketAddr = addr
        .parse()
        .map_err(|e| CliError::validation(format!("invalid --addr {addr:?}: {e}")))?;
    let cfg = model_config(g, model)?;
    let replay = backend.map(replay_dir).transpose()?;

    let mut registry = Registry::builtin();
    registry.add_model(cfg.clone());
    if let Some(dir) = &replay {
        registry.attach_replay(dir, &cfg.name)?;
    }
    let degraded = registry.backend(&cfg.name).is_none();
    let dirs: Vec<&Path> = replay.as_deref().into_iter().collect();
    let config = ServiceConfig {
        max_body_bytes,
        classes: class_map(g, &dirs)?,
        ..ServiceConfig::from_env()
    };
    let settings = Settings {
        model: cfg.name.clone(),
        conf_threshold: cfg.conf_threshold,
        nms_iou_threshold: cfg.nms_iou_threshold,
    };
    let state =
        AppState::new(config, registry, settings).map_err(|e| CliError::validation(e.message))?;
    if degraded {
        tracing::warn!(model = %cfg.name, "no backend for the active model; serving degraded");
    }

    let runtime = tokio::runtime::Runtime::new()
        .map_err(|e| CliError::internal(format!("cannot start runtime: {e}")))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::io(Path::new(&addr.to_string()), e))?;
        let local = listener
            .local_addr()
            .map_err(|e| CliError::internal(e.to_string()))?;
        println!("listening on http://{local}");
        let _ = std::io::stdout().flush();
        tracing::info!(%local, "serving");

        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        };
        woundscope_service::serve(listener, router(Arc::new(state)), shutdown)
            .await
            .map_err(|e| CliError::internal(format!("server error: {e}")))
    })
}

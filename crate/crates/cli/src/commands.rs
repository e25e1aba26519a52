use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::json;
use woundscope_core::annotations::{
    emit_dims_tsv, emit_voc_xml, emit_yolo_txt, scan_dataset, DatasetEntry, CLASSES_FILE,
    DIMS_SIDECAR,
};
use woundscope_core::augment::{parse_ops, Sample};
use woundscope_core::detection::{group_by_image, read_jsonl, write_jsonl};
use woundscope_core::inference::{
    check_image_id, decode_heads, nms, HeadTensor, InferenceError, Tensor,
};
use woundscope_core::{
    detect, evaluate, AnnotationFormat, ClassMap, EvalConfig, ImageAnnotation, ModelConfig,
    RasterImage, ReplayBackend,
};

use crate::error::{CliError, CliResult};
use crate::{Cli, Command, GlobalOpts, Output, ReportFormat};

pub fn run(cli: Cli) -> CliResult<()> {
    let g = &cli.global;
    match cli.command {
        Command::Convert {
            from,
            to,
            input,
            out,
            images,
            format,
        } => convert(
            g,
            from.into(),
            to.into(),
            &input,
            &out,
            images.as_deref(),
            format,
        ),
        Command::Augment {
            input,
            out,
            ops,
            annotation_format,
            force,
            format,
        } => augment(
            g,
            &input,
            &out,
            &ops,
            annotation_format.into(),
            force,
            format,
        ),
        Command::Decode {
            heads,
            model,
            conf,
            nms,
            image_id,
            out,
        } => decode(g, &heads, &model, conf, nms, &image_id, out.as_deref()),
        Command::Detect {
            image,
            backend,
            out,
            model,
            image_id,
            conf,
            nms,
        } => detect_cmd(
            g,
            &image,
            &backend,
            out.as_deref(),
            &model,
            image_id,
            conf,
            nms,
        ),
        Command::Eval {
            dets,
            gt,
            gt_format,
            images,
            iou,
            conf,
            format,
            name,
        } => eval(
            g,
            &dets,
            &gt,
            gt_format.into(),
            images.as_deref(),
            iou,
            conf,
            format,
            &name,
        ),
        Command::Serve {
            addr,
            backend,
            model,
            max_body_bytes,
        } => crate::serve::run(g, &addr, backend.as_deref(), &model, max_body_bytes),
    }
}

/// `--classes`, else `classes.txt` in the first directory that has one, else
/// the single "wound" class.
pub fn class_map(g: &GlobalOpts, dirs: &[&Path]) -> CliResult<ClassMap> {
    if let Some(path) = &g.classes {
        return Ok(ClassMap::load(path)?);
    }
    for dir in dirs {
        let path = dir.join(CLASSES_FILE);
        if path.is_file() {
            return Ok(ClassMap::load(&path)?);
        }
    }
    Ok(ClassMap::wound())
}

/// `--config` when given, otherwise the named built-in model.
pub fn model_config(g: &GlobalOpts, name: &str) -> CliResult<ModelConfig> {
    let cfg = match &g.config {
        Some(path) => ModelConfig::load(path)?,
        None => ModelConfig::builtin(name).ok_or_else(|| {
            CliError::validation(format!(
                "unknown model {name:?} (built-in: {})",
                woundscope_core::inference::BUILTIN_MODELS.join(", ")
            ))
        })?,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `replay:DIR`.
pub fn replay_dir(spec: &str) -> CliResult<PathBuf> {
    match spec.split_once(':') {
        Some(("replay", dir)) if !dir.is_empty() => Ok(PathBuf::from(dir)),
        _ => Err(CliError::validation(format!(
            "unsupported backend {spec:?} (expected replay:DIR)"
        ))),
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn emit(a: &ImageAnnotation, format: AnnotationFormat, classes: &ClassMap) -> CliResult<String> {
    Ok(match format {
        AnnotationFormat::Yolo => emit_yolo_txt(a),
        AnnotationFormat::Voc => emit_voc_xml(a, classes)?,
    })
}

fn print_json(value: serde_json::Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(&value).expect("json values serialize")
    );
}

fn convert(
    g: &GlobalOpts,
    from: AnnotationFormat,
    to: AnnotationFormat,
    input: &Path,
    out: &Path,
    images: Option<&Path>,
    format: Output,
) -> CliResult<()> {
    let image_dir = images.unwrap_or(input);
    let classes = class_map(g, &[input, image_dir])?;
    let index = scan_dataset(input, image_dir, from)?;
    create_dir(out)?;

    let mut converted = Vec::new();
    let mut failures: Vec<(PathBuf, CliError)> = Vec::new();
    for entry in index.entries.iter().filter(|e| e.annotation_path.is_some()) {
        let src = entry.annotation_path.clone().expect("filtered");
        let result = index
            .load_entry(entry, &classes)
            .map_err(CliError::from)
            .and_then(|a| {
                let text = emit(&a, to, &classes)?;
                write_file(
                    &out.join(format!("{}.{}", a.image_id, to.extension())),
                    text,
                )?;
                Ok(a)
            });
        match result {
            Ok(a) => converted.push(a),
            Err(e) => {
                tracing::warn!(file = %src.display(), "{e}");
                failures.push((src, e));
            }
        }
    }
    if !converted.is_empty() {
        if to == AnnotationFormat::Yolo {
            write_file(&out.join(DIMS_SIDECAR), emit_dims_tsv(&converted))?;
        }
        write_file(&out.join(CLASSES_FILE), classes.names().join("\n") + "\n")?;
    }

    match format {
        Output::Text => {
            println!("converted {} files", converted.len());
            for (path, e) in &failures {
                println!("failed {}: {e}", path.display());
            }
        }
        Output::Json => print_json(json!({
            "converted": converted.len(),
            "failed": failures
                .iter()
                .map(|(p, e)| json!({"file": p.display().to_string(), "error": e.message}))
                .collect::<Vec<_>>(),
        })),
    }
    match failures.iter().map(|(_, e)| e.kind).max() {
        None => Ok(()),
        Some(kind) => Err(CliError {
            kind,
            message: format!(
                "{} of {} files failed",
                failures.len(),
                failures.len() + converted.len()
            ),
        }),
    }
}

fn is_nonempty_dir(path: &Path) -> CliResult<bool> {
    match fs::read_dir(path) {
        Ok(mut it) => Ok(it.next().is_some()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(false),
        Err(e) => Err(CliError::io(path, e)),
    }
}

fn copy_original(entry: &DatasetEntry, out: &Path) -> CliResult<()> {
    for src in [&entry.image_path, &entry.annotation_path]
        .into_iter()
        .flatten()
    {
        let name = src.file_name().expect("listed files have names");
        let dst = out.join(name);
        fs::copy(src, &dst).map_err(|e| CliError::io(&dst, e))?;
    }
    Ok(())
}

fn augment(
    g: &GlobalOpts,
    input: &Path,
    out: &Path,
    ops: &str,
    ann_format: AnnotationFormat,
    force: bool,
    format: Output,
) -> CliResult<()> {
    let ops = parse_ops(ops)?;
    for op in &ops {
        op.validate()?;
    }
    if input == out {
        return Err(CliError::validation("--out must differ from --in"));
    }
    if !force && is_nonempty_dir(out)? {
        return Err(CliError::validation(format!(
            "{} is not empty (use --force to write into it)",
            out.display()
        )));
    }
    let classes = class_map(g, &[input])?;
    let index = scan_dataset(input, input, ann_format)?;
    create_dir(out)?;

    let mut all = Vec::new();
    for entry in &index.entries {
        let image_path = entry.image_path.as_ref().ok_or_else(|| {
            CliError::validation(format!("{}: annotation has no image", entry.image_id))
        })?;
        let annotation = index.load_entry(entry, &classes)?;
        let image = RasterImage::open(image_path)?;
        let sample = Sample { annotation, image };
        copy_original(entry, out)?;
        if entry.annotation_path.is_none() {
            let text = emit(&sample.annotation, ann_format, &classes)?;
            write_file(
                &out.join(format!("{}.{}", entry.image_id, ann_format.extension())),
                text,
            )?;
        }
        for op in &ops {
            let aug = sample.augment(*op)?;
            let id = &aug.annotation.image_id;
            aug.image.save_png(&out.join(format!("{id}.png")))?;
            let text = emit(&aug.annotation, ann_format, &classes)?;
            write_file(&out.join(format!("{id}.{}", ann_format.extension())), text)?;
            all.push(aug.annotation);
        }
        all.push(sample.annotation);
    }
    if ann_format == AnnotationFormat::Yolo && !all.is_empty() {
        all.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        write_file(&out.join(DIMS_SIDECAR), emit_dims_tsv(&all))?;
    }
    if !all.is_empty() {
        write_file(&out.join(CLASSES_FILE), classes.names().join("\n") + "\n")?;
    }

    let inputs = index.entries.len();
    match format {
        Output::Text => println!("{inputs} images in, {} images out", all.len()),
        Output::Json => print_json(json!({"inputs": inputs, "outputs": all.len()})),
    }
    Ok(())
}

fn with_overrides(mut cfg: ModelConfig, conf: Option<f64>, nms: Option<f64>) -> ModelConfig {
    if let Some(c) = conf {
        cfg.conf_threshold = c;
    }
    if let Some(n) = nms {
        cfg.nms_iou_threshold = n;
    }
    cfg
}

fn emit_output(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::io(Path::new("<stdout>"), e))
        }
    }
}

fn decode(
    g: &GlobalOpts,
    paths: &[PathBuf],
    model: &str,
    conf: Option<f64>,
    nms_thr: Option<f64>,
    image_id: &str,
    out: Option<&Path>,
) -> CliResult<()> {
    let cfg = with_overrides(model_config(g, model)?, conf, None);
    if paths.len() != cfg.heads.len() {
        return Err(InferenceError::HeadCount {
            expected: cfg.heads.len(),
            actual: paths.len(),
        }
        .into());
    }
    let heads = paths
        .iter()
        .zip(&cfg.heads)
        .map(|(p, h)| {
            HeadTensor::from_tensor(Tensor::read(p)?, &cfg, h)
                .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut dets = decode_heads(&heads, &cfg)?;
    if let Some(t) = nms_thr {
        dets = nms(&dets, t);
    }
    emit_output(out, &write_jsonl(dets.iter().map(|d| (image_id, d))))
}

#[allow(clippy::too_many_arguments)]
fn detect_cmd(
    g: &GlobalOpts,
    image: &Path,
    backend: &str,
    out: Option<&Path>,
    model: &str,
    image_id: Option<String>,
    conf: Option<f64>,
    nms_thr: Option<f64>,
) -> CliResult<()> {
    let cfg = with_overrides(model_config(g, model)?, conf, nms_thr);
    let dir = replay_dir(backend)?;
    let per_model = dir.join(&cfg.name);
    let mut replay = ReplayBackend::open(if per_model.is_dir() { per_model } else { dir })?;

    let image_id = match image_id {
        Some(id) => id,
        None => image
            .file_stem()
            .and_then(|s| s.to_str())
            .map(str::to_string)
            .ok_or_else(|| CliError::validation("cannot derive an image id; pass --image-id"))?,
    };
    check_image_id(&image_id)?;
    let img = RasterImage::open(image)?;
    let dets = detect(&img, &image_id, &mut replay, &cfg)?;
    tracing::info!(image_id, count = dets.len(), "detected");
    emit_output(
        out,
        &write_jsonl(dets.iter().map(|d| (image_id.as_str(), d))),
    )
}

#[allow(clippy::too_many_arguments)]
fn eval(
    g: &GlobalOpts,
    dets_path: &Path,
    gt: &Path,
    gt_format: AnnotationFormat,
    images: Option<&Path>,
    iou: f64,
    conf: f64,
    format: ReportFormat,
    name: &str,
) -> CliResult<()> {
    let image_dir = images.unwrap_or(gt);
    let classes = class_map(g, &[gt, image_dir])?;
    let text = fs::read_to_string(dets_path).map_err(|e| CliError::io(dets_path, e))?;
    let dets = group_by_image(
        read_jsonl(&text)
            .map_err(|e| CliError::validation(format!("{}: {e}", dets_path.display())))?,
    );
    let gts = woundscope_core::annotations::load_dataset(gt, image_dir, gt_format, &classes)?;
    let cfg = EvalConfig {
        iou_threshold: iou,
        conf_threshold: conf,
    };
    let report = evaluate(&dets, &gts, &classes, &cfg)?;
    match format {
        ReportFormat::Table => print!("{}", report.to_table(name)),
        ReportFormat::Json => println!("{}", report.to_json()),
    }
    Ok(())
}

//! `woundscope`: convert, augment, decode, detect, evaluate and serve.
//!
//! Exit codes: 0 success, 1 invalid input or flags, 2 I/O failure, 3 internal
//! error.

mod commands;
mod error;
mod serve;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tracing_subscriber::EnvFilter;

use error::{CliError, Kind};

#[derive(Debug, Parser)]
#[command(name = "woundscope", version, about = "Wound localization toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// Model configuration file (TOML); overrides --model
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Class names, one per line; defaults to classes.txt beside the data, then "wound"
    #[arg(long, global = true, value_name = "FILE")]
    pub classes: Option<PathBuf>,
    /// Log filter, e.g. "info" or "woundscope_service=debug"
    #[arg(long, global = true, default_value = "warn", value_name = "LEVEL")]
    pub log_level: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Yolo,
    Voc,
}

impl From<Format> for woundscope_core::AnnotationFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Yolo => woundscope_core::AnnotationFormat::Yolo,
            Format::Voc => woundscope_core::AnnotationFormat::Voc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err(format!("{v} is outside [0, 1]"))
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert annotations between YOLO txt and Pascal VOC xml
    Convert {
        #[arg(long, value_enum)]
        from: Format,
        #[arg(long, value_enum)]
        to: Format,
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Image directory used for YOLO dimensions (default: --in)
        #[arg(long, value_name = "DIR")]
        images: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "text")]
        format: Output,
    },
    /// Expand a dataset with rotated, flipped and blurred copies
    Augment {
        #[arg(long = "in", value_name = "DIR")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Comma-separated: rot90, rot180, rot270, rot:<deg>, flip_up, flip_right, blur:<r>
        #[arg(long)]
        ops: String,
        /// Annotation format of the dataset
        #[arg(long = "annotations", value_enum, default_value = "yolo")]
        annotation_format: Format,
        /// Allow writing into a non-empty output directory
        #[arg(long)]
        force: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: Output,
    },
    /// Decode raw head tensors into canvas-normalized detections (JSONL)
    Decode {
        /// WLT1 tensor files in head order
        #[arg(long = "head", value_name = "FILE", required = true, num_args = 1..)]
        heads: Vec<PathBuf>,
        #[arg(long, default_value = woundscope_core::inference::YOLOV3_416)]
        model: String,
        #[arg(long, value_parser = unit_interval)]
        conf: Option<f64>,
        /// Also apply NMS with this IoU threshold
        #[arg(long, value_parser = unit_interval)]
        nms: Option<f64>,
        #[arg(long, default_value = "canvas")]
        image_id: String,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline on one image
    Detect {
        #[arg(long, value_name = "FILE")]
        image: PathBuf,
        /// Backend spec, currently `replay:DIR`
        #[arg(long)]
        backend: String,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
        #[arg(long, default_value = woundscope_core::inference::YOLOV3_416)]
        model: String,
        /// Defaults to the image file stem
        #[arg(long)]
        image_id: Option<String>,
        #[arg(long, value_parser = unit_interval)]
        conf: Option<f64>,
        #[arg(long, value_parser = unit_interval)]
        nms: Option<f64>,
    },
    /// Score detections against ground truth
    Eval {
        /// Detections in the JSONL interchange format
        #[arg(long, value_name = "FILE")]
        dets: PathBuf,
        #[arg(long, value_name = "DIR")]
        gt: PathBuf,
        #[arg(long, value_enum, default_value = "yolo")]
        gt_format: Format,
        /// Image directory used for YOLO dimensions (default: --gt)
        #[arg(long, value_name = "DIR")]
        images: Option<PathBuf>,
        #[arg(long, default_value_t = 0.5, value_parser = unit_interval)]
        iou: f64,
        #[arg(long, default_value_t = 0.2, value_parser = unit_interval)]
        conf: f64,
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
        /// Row label in the table
        #[arg(long, default_value = "model")]
        name: String,
    },
    /// Serve the HTTP API
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        /// Backend spec, `replay:DIR`; without it the service reports degraded
        #[arg(long)]
        backend: Option<String>,
        /// Initial model
        #[arg(long, default_value = woundscope_core::inference::YOLOV3_416)]
        model: String,
        #[arg(long, default_value_t = woundscope_service::DEFAULT_MAX_BODY_BYTES)]
        max_body_bytes: usize,
    },
}

fn init_logging(level: &str) -> Result<(), CliError> {
    let filter = EnvFilter::try_new(level)
        .map_err(|e| CliError::validation(format!("invalid --log-level {level:?}: {e}")))?;
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                Kind::Validation.exit_code()
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = init_logging(&cli.global.log_level).and_then(|_| commands::run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.kind.exit_code()
        }
    }
}

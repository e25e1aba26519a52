//! YOLO-txt and Pascal VOC annotation interchange.
//!
//! Both formats decode into [`ImageAnnotation`], which stores boxes in
//! normalized center form. Pixel corners only exist while reading or writing
//! VOC documents.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{from_pixel, to_pixel, BBox, GeometryError, PixelRect};

/// Name of the optional image-dimension sidecar next to annotation files.
pub const DIMS_SIDECAR: &str = "dims.tsv";
/// Class list file skipped when scanning YOLO label directories.
pub const CLASSES_FILE: &str = "classes.txt";
pub const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: {source}")]
    InvalidLineBox {
        line: usize,
        #[source]
        source: GeometryError,
    },
    #[error("malformed XML: {0}")]
    Xml(String),
    #[error("missing element {0}")]
    MissingElement(String),
    #[error("invalid value in {path}: {value:?}")]
    InvalidValue { path: String, value: String },
    #[error("invalid box: {0}")]
    InvalidBox(#[from] GeometryError),
    #[error("unknown class name {0:?}")]
    UnknownClass(String),
    #[error("class id {class_id} out of range for {num_classes} classes")]
    ClassOutOfRange { class_id: u32, num_classes: usize },
    #[error("invalid class map: {0}")]
    InvalidClassMap(String),
    #[error("no image or dims entry for {0:?}")]
    MissingImage(String),
    #[error("ambiguous image for {0:?}: several files share the stem")]
    AmbiguousImage(String),
    #[error("cannot read image dimensions of {path}: {message}")]
    ImageHeader { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    InFile {
        path: PathBuf,
        #[source]
        source: Box<AnnotationError>,
    },
}

impl AnnotationError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AnnotationError::Io {
            path: path.into(),
            source,
        }
    }

    fn in_file(self, path: &Path) -> Self {
        match self {
            e @ (AnnotationError::Io { .. } | AnnotationError::InFile { .. }) => e,
            e => AnnotationError::InFile {
                path: path.to_path_buf(),
                source: Box::new(e),
            },
        }
    }

    /// True when the failure came from the filesystem rather than content.
    pub fn is_io(&self) -> bool {
        match self {
            AnnotationError::Io { .. } | AnnotationError::ImageHeader { .. } => true,
            AnnotationError::InFile { source, .. } => source.is_io(),
            _ => false,
        }
    }
}

type Result<T, E = AnnotationError> = std::result::Result<T, E>;

/// Ordered class names; the position of a name is its class id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassMap {
    names: Vec<String>,
}

impl ClassMap {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(AnnotationError::InvalidClassMap("no classes".into()));
        }
        let mut seen = BTreeSet::new();
        for n in &names {
            if n.trim().is_empty() {
                return Err(AnnotationError::InvalidClassMap("empty class name".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(AnnotationError::InvalidClassMap(format!(
                    "duplicate class {n:?}"
                )));
            }
        }
        Ok(ClassMap { names })
    }

    /// The single-class map `["wound"]`.
    pub fn wound() -> Self {
        ClassMap {
            names: vec!["wound".to_string()],
        }
    }

    /// One class name per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        ClassMap::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| AnnotationError::io(path, e))?;
        ClassMap::parse(&text).map_err(|e| e.in_file(path))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn id_of(&self, name: &str) -> Option<u32> {
        self.names.iter().position(|n| n == name).map(|i| i as u32)
    }

    pub fn name_of(&self, class_id: u32) -> Option<&str> {
        self.names.get(class_id as usize).map(String::as_str)
    }

    pub fn check(&self, class_id: u32) -> Result<()> {
        if (class_id as usize) < self.names.len() {
            Ok(())
        } else {
            Err(AnnotationError::ClassOutOfRange {
                class_id,
                num_classes: self.names.len(),
            })
        }
    }
}

impl Default for ClassMap {
    fn default() -> Self {
        ClassMap::wound()
    }
}

impl TryFrom<Vec<String>> for ClassMap {
    type Error = AnnotationError;

    fn try_from(names: Vec<String>) -> Result<Self> {
        ClassMap::new(names)
    }
}

impl From<ClassMap> for Vec<String> {
    fn from(m: ClassMap) -> Self {
        m.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedBox {
    pub class_id: u32,
    pub bbox: BBox,
}

/// Ground truth for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageAnnotation {
    pub image_id: String,
    pub img_w: u32,
    pub img_h: u32,
    pub boxes: Vec<AnnotatedBox>,
}

impl ImageAnnotation {
    pub fn empty(image_id: impl Into<String>, img_w: u32, img_h: u32) -> Self {
        ImageAnnotation {
            image_id: image_id.into(),
            img_w,
            img_h,
            boxes: Vec::new(),
        }
    }

    pub fn validate(&self, classes: &ClassMap) -> Result<()> {
        if self.img_w == 0 || self.img_h == 0 {
            return Err(GeometryError::DegenerateImage(self.img_w, self.img_h).into());
        }
        for b in &self.boxes {
            classes.check(b.class_id)?;
            b.bbox.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnnotationFormat {
    Yolo,
    Voc,
}

impl AnnotationFormat {
    pub fn extension(self) -> &'static str {
        match self {
            AnnotationFormat::Yolo => "txt",
            AnnotationFormat::Voc => "xml",
        }
    }
}

impl FromStr for AnnotationFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "yolo" => Ok(AnnotationFormat::Yolo),
            "voc" => Ok(AnnotationFormat::Voc),
            other => Err(format!(
                "unknown annotation format {other:?} (expected yolo or voc)"
            )),
        }
    }
}

fn parse_unit(field: &str, what: &str, line: usize) -> Result<f64> {
    let v: f64 = field.parse().map_err(|_| AnnotationError::Parse {
        line,
        message: format!("{what} is not a number: {field:?}"),
    })?;
    if !(0.0..=1.0).contains(&v) {
        return Err(AnnotationError::Parse {
            line,
            message: format!("{what} {v} outside [0, 1]"),
        });
    }
    Ok(v)
}

/// Parses a YOLO label file: one `class cx cy w h` line per box.
pub fn parse_yolo_txt(
    text: &str,
    image_id: &str,
    img_w: u32,
    img_h: u32,
) -> Result<ImageAnnotation> {
    if img_w == 0 || img_h == 0 {
        return Err(GeometryError::DegenerateImage(img_w, img_h).into());
    }
    let mut boxes = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 5 {
            return Err(AnnotationError::Parse {
                line,
                message: format!("expected 5 fields, found {}", fields.len()),
            });
        }
        let class_id: u32 = fields[0].parse().map_err(|_| AnnotationError::Parse {
            line,
            message: format!("class is not a non-negative integer: {:?}", fields[0]),
        })?;
        let cx = parse_unit(fields[1], "cx", line)?;
        let cy = parse_unit(fields[2], "cy", line)?;
        let w = parse_unit(fields[3], "w", line)?;
        let h = parse_unit(fields[4], "h", line)?;
        let bbox = BBox::new(cx, cy, w, h)
            .map_err(|source| AnnotationError::InvalidLineBox { line, source })?;
        boxes.push(AnnotatedBox { class_id, bbox });
    }
    Ok(ImageAnnotation {
        image_id: image_id.to_string(),
        img_w,
        img_h,
        boxes,
    })
}

/// Serializes boxes as YOLO lines with six decimals.
pub fn emit_yolo_txt(a: &ImageAnnotation) -> String {
    let mut out = String::with_capacity(a.boxes.len() * 40);
    for b in &a.boxes {
        let _ = writeln!(
            out,
            "{} {:.6} {:.6} {:.6} {:.6}",
            b.class_id, b.bbox.cx, b.bbox.cy, b.bbox.w, b.bbox.h
        );
    }
    out
}

fn child<'a, 'i>(
    node: roxmltree::Node<'a, 'i>,
    name: &str,
    path: &str,
) -> Result<roxmltree::Node<'a, 'i>> {
    node.children()
        .find(|c| c.is_element() && c.tag_name().name() == name)
        .ok_or_else(|| AnnotationError::MissingElement(format!("{path}/{name}")))
}

fn number(node: roxmltree::Node<'_, '_>, name: &str, path: &str) -> Result<f64> {
    let el = child(node, name, path)?;
    let text = el.text().unwrap_or("").trim();
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(AnnotationError::InvalidValue {
            path: format!("{path}/{name}"),
            value: text.to_string(),
        }),
    }
}

fn dimension(node: roxmltree::Node<'_, '_>, name: &str, path: &str) -> Result<u32> {
    let v = number(node, name, path)?;
    if v < 1.0 || v > u32::MAX as f64 || v.fract() != 0.0 {
        return Err(AnnotationError::InvalidValue {
            path: format!("{path}/{name}"),
            value: v.to_string(),
        });
    }
    Ok(v as u32)
}

/// Parses a Pascal VOC document. Unknown elements are ignored.
///
/// The image id comes from the stem of `<filename>` when present.
pub fn parse_voc_xml(xml: &str, classes: &ClassMap) -> Result<ImageAnnotation> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| AnnotationError::Xml(e.to_string()))?;
    let root = doc.root_element();
    let root_path = root.tag_name().name().to_string();

    let size = child(root, "size", &root_path)?;
    let size_path = format!("{root_path}/size");
    let img_w = dimension(size, "width", &size_path)?;
    let img_h = dimension(size, "height", &size_path)?;

    let image_id = root
        .children()
        .find(|c| c.is_element() && c.tag_name().name() == "filename")
        .and_then(|n| n.text())
        .map(|f| {
            Path::new(f.trim())
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default()
        })
        .unwrap_or_default();

    let mut boxes = Vec::new();
    for (k, obj) in root
        .children()
        .filter(|c| c.is_element() && c.tag_name().name() == "object")
        .enumerate()
    {
        let obj_path = format!("{root_path}/object[{k}]");
        let name = child(obj, "name", &obj_path)?
            .text()
            .unwrap_or("")
            .trim()
            .to_string();
        let class_id = classes
            .id_of(&name)
            .ok_or(AnnotationError::UnknownClass(name))?;
        let bb_path = format!("{obj_path}/bndbox");
        let bndbox = child(obj, "bndbox", &obj_path)?;
        let rect = PixelRect {
            xmin: number(bndbox, "xmin", &bb_path)?,
            ymin: number(bndbox, "ymin", &bb_path)?,
            xmax: number(bndbox, "xmax", &bb_path)?,
            ymax: number(bndbox, "ymax", &bb_path)?,
        };
        let bbox = from_pixel(&rect, img_w, img_h)?;
        boxes.push(AnnotatedBox { class_id, bbox });
    }

    Ok(ImageAnnotation {
        image_id,
        img_w,
        img_h,
        boxes,
    })
}

fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// Rounds a corner pair to integer pixels, keeping at least one pixel of extent.
fn round_span(lo: f64, hi: f64, limit: u32) -> (u64, u64) {
    let limit = limit as f64;
    let mut a = lo.round().clamp(0.0, limit);
    let mut b = hi.round().clamp(0.0, limit);
    if b <= a {
        if a < limit {
            b = a + 1.0;
        } else {
            a = b - 1.0;
        }
    }
    (a as u64, b as u64)
}

/// Writes a Pascal VOC document with integer pixel corners.
pub fn emit_voc_xml(a: &ImageAnnotation, classes: &ClassMap) -> Result<String> {
    let mut out = String::new();
    out.push_str("<annotation>\n");
    let _ = writeln!(out, "\t<filename>{}</filename>", escape_xml(&a.image_id));
    out.push_str("\t<size>\n");
    let _ = writeln!(out, "\t\t<width>{}</width>", a.img_w);
    let _ = writeln!(out, "\t\t<height>{}</height>", a.img_h);
    out.push_str("\t\t<depth>3</depth>\n");
    out.push_str("\t</size>\n");
    for b in &a.boxes {
        let name = classes
            .name_of(b.class_id)
            .ok_or(AnnotationError::ClassOutOfRange {
                class_id: b.class_id,
                num_classes: classes.len(),
            })?;
        let r = to_pixel(&b.bbox, a.img_w, a.img_h)?;
        let (xmin, xmax) = round_span(r.xmin, r.xmax, a.img_w);
        let (ymin, ymax) = round_span(r.ymin, r.ymax, a.img_h);
        out.push_str("\t<object>\n");
        let _ = writeln!(out, "\t\t<name>{}</name>", escape_xml(name));
        out.push_str("\t\t<pose>Unspecified</pose>\n");
        out.push_str("\t\t<truncated>0</truncated>\n");
        out.push_str("\t\t<difficult>0</difficult>\n");
        out.push_str("\t\t<bndbox>\n");
        let _ = writeln!(out, "\t\t\t<xmin>{xmin}</xmin>");
        let _ = writeln!(out, "\t\t\t<ymin>{ymin}</ymin>");
        let _ = writeln!(out, "\t\t\t<xmax>{xmax}</xmax>");
        let _ = writeln!(out, "\t\t\t<ymax>{ymax}</ymax>");
        out.push_str("\t\t</bndbox>\n");
        out.push_str("\t</object>\n");
    }
    out.push_str("</annotation>\n");
    Ok(out)
}

/// Image dimensions keyed by image id, as stored in `dims.tsv`.
pub type DimsTable = BTreeMap<String, (u32, u32)>;

pub fn parse_dims_tsv(text: &str) -> Result<DimsTable> {
    let mut table = DimsTable::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
        let bad = |message: String| AnnotationError::Parse { line, message };
        if fields.len() != 3 {
            return Err(bad(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let parse_dim = |s: &str| match s.parse::<u32>() {
            Ok(v) if v >= 1 => Ok(v),
            _ => Err(bad(format!("invalid dimension {s:?}"))),
        };
        let w = parse_dim(fields[1])?;
        let h = parse_dim(fields[2])?;
        table.insert(fields[0].to_string(), (w, h));
    }
    Ok(table)
}

pub fn emit_dims_tsv<'a>(annotations: impl IntoIterator<Item = &'a ImageAnnotation>) -> String {
    let mut out = String::new();
    for a in annotations {
        let _ = writeln!(out, "{}\t{}\t{}", a.image_id, a.img_w, a.img_h);
    }
    out
}

fn read_dims_file(dir: &Path) -> Result<DimsTable> {
    let path = dir.join(DIMS_SIDECAR);
    match fs::read_to_string(&path) {
        Ok(text) => parse_dims_tsv(&text).map_err(|e| e.in_file(&path)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(DimsTable::new()),
        Err(e) => Err(AnnotationError::io(path, e)),
    }
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let rd = fs::read_dir(dir).map_err(|e| AnnotationError::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| AnnotationError::io(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

fn stem_of(path: &Path) -> Option<String> {
    path.file_stem().map(|s| s.to_string_lossy().into_owned())
}

fn has_ext(path: &Path, exts: &[&str]) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
        .unwrap_or(false)
}

/// One image of a dataset directory pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetEntry {
    pub image_id: String,
    pub annotation_path: Option<PathBuf>,
    pub image_path: Option<PathBuf>,
}

/// Listing of an annotation directory and its image directory.
#[derive(Debug, Clone)]
pub struct DatasetIndex {
    pub format: AnnotationFormat,
    pub entries: Vec<DatasetEntry>,
    pub dims: DimsTable,
}

/// Lists annotation files, images and sidecar ids, sorted by image id.
pub fn scan_dataset(
    annotation_dir: &Path,
    image_dir: &Path,
    format: AnnotationFormat,
) -> Result<DatasetIndex> {
    let mut entries: BTreeMap<String, DatasetEntry> = BTreeMap::new();
    let blank = |id: &str| DatasetEntry {
        image_id: id.to_string(),
        annotation_path: None,
        image_path: None,
    };

    for path in list_dir(annotation_dir)? {
        if !has_ext(&path, &[format.extension()]) {
            continue;
        }
        if path.file_name().and_then(|n| n.to_str()) == Some(CLASSES_FILE) {
            continue;
        }
        let Some(id) = stem_of(&path) else { continue };
        entries
            .entry(id.clone())
            .or_insert_with(|| blank(&id))
            .annotation_path = Some(path);
    }

    let mut image_seen: BTreeSet<String> = BTreeSet::new();
    for path in list_dir(image_dir)? {
        if !has_ext(&path, &IMAGE_EXTENSIONS) {
            continue;
        }
        let Some(id) = stem_of(&path) else { continue };
        if !image_seen.insert(id.clone()) {
            return Err(AnnotationError::AmbiguousImage(id));
        }
        entries
            .entry(id.clone())
            .or_insert_with(|| blank(&id))
            .image_path = Some(path);
    }

    let mut dims = read_dims_file(image_dir)?;
    if annotation_dir != image_dir {
        dims.extend(read_dims_file(annotation_dir)?);
    }
    for id in dims.keys() {
        entries.entry(id.clone()).or_insert_with(|| blank(id));
    }

    Ok(DatasetIndex {
        format,
        entries: entries.into_values().collect(),
        dims,
    })
}

impl DatasetIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Pixel dimensions from the sidecar, falling back to the image header.
    pub fn dimensions(&self, entry: &DatasetEntry) -> Result<(u32, u32)> {
        if let Some(&d) = self.dims.get(&entry.image_id) {
            return Ok(d);
        }
        let path = entry
            .image_path
            .as_ref()
            .ok_or_else(|| AnnotationError::MissingImage(entry.image_id.clone()))?;
        image::image_dimensions(path).map_err(|e| AnnotationError::ImageHeader {
            path: path.clone(),
            message: e.to_string(),
        })
    }

    pub fn load_entry(&self, entry: &DatasetEntry, classes: &ClassMap) -> Result<ImageAnnotation> {
        let Some(path) = &entry.annotation_path else {
            let (w, h) = self.dimensions(entry)?;
            return Ok(ImageAnnotation::empty(&entry.image_id, w, h));
        };
        let text = fs::read_to_string(path).map_err(|e| AnnotationError::io(path, e))?;
        let ann = match self.format {
            AnnotationFormat::Yolo => {
                let (w, h) = self.dimensions(entry)?;
                parse_yolo_txt(&text, &entry.image_id, w, h)
            }
            AnnotationFormat::Voc => parse_voc_xml(&text, classes).map(|mut a| {
                a.image_id = entry.image_id.clone();
                a
            }),
        }
        .and_then(|a| a.validate(classes).map(|_| a))
        .map_err(|e| e.in_file(path))?;
        Ok(ann)
    }

    /// Loads every entry, in parallel, preserving the sorted order.
    pub fn load_all(&self, classes: &ClassMap) -> Result<Vec<ImageAnnotation>> {
        self.entries
            .par_iter()
            .map(|e| self.load_entry(e, classes))
            .collect()
    }
}

/// Loads a dataset sorted by image id.
///
/// Images without an annotation file become zero-box entries. YOLO files need
/// either a same-stem image in `image_dir` or a `dims.tsv` row.
pub fn load_dataset(
    annotation_dir: &Path,
    image_dir: &Path,
    format: AnnotationFormat,
    classes: &ClassMap,
) -> Result<Vec<ImageAnnotation>> {
    scan_dataset(annotation_dir, image_dir, format)?.load_all(classes)
}

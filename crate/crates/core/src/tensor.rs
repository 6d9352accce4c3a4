//! Dense tensor containers and dataset manifests.
//!
//! All pipeline inputs arrive as files in a small binary container format
//! (`SFT1`): magic bytes, a dtype code, a rank, little-endian `u32` dims and a
//! row-major payload. Probability tensors are validated on load so nothing
//! downstream ever sees a non-distribution.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SFT1";
pub const DTYPE_F32: u8 = 0;
pub const DTYPE_U16: u8 = 1;

/// Per-pixel class probabilities must sum to one within this tolerance.
/// Loose enough for 32-bit softmax outputs, tight enough to catch junk.
pub const PROB_SUM_TOLERANCE: f64 = 1e-4;

pub const DEFAULT_IGNORE_ID: u16 = 255;

fn default_ignore() -> Option<u16> {
    Some(DEFAULT_IGNORE_ID)
}

/// The label space: `num_classes` semantic classes, the subset treated as
/// foreground, optional display names and an optional ignore label excluded
/// from all ground-truth counting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSchema {
    pub num_classes: u16,
    /// Ordered, duplicate-free, strict non-empty subset of `0..num_classes`.
    /// The order fixes the layout of per-class feature columns.
    pub foreground_ids: Vec<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class_names: Option<Vec<String>>,
    #[serde(default = "default_ignore")]
    pub ignore_id: Option<u16>,
}

impl ClassSchema {
    pub fn new(num_classes: u16, foreground_ids: Vec<u16>) -> Result<Self> {
        let schema = ClassSchema {
            num_classes,
            foreground_ids,
            class_names: None,
            ignore_id: Some(DEFAULT_IGNORE_ID),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::validation(format!(
                "schema needs at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.foreground_ids.is_empty() {
            return Err(Error::validation("foreground_ids must not be empty"));
        }
        let mut seen = BTreeSet::new();
        for &id in &self.foreground_ids {
            if id >= self.num_classes {
                return Err(Error::validation(format!(
                    "foreground id {} out of range (num_classes {})",
                    id, self.num_classes
                )));
            }
            if !seen.insert(id) {
                return Err(Error::validation(format!("duplicate foreground id {id}")));
            }
        }
        if self.foreground_ids.len() >= self.num_classes as usize {
            return Err(Error::validation(
                "foreground_ids must be a strict subset of the class set",
            ));
        }
        if let Some(ignore) = self.ignore_id {
            if ignore < self.num_classes {
                return Err(Error::validation(format!(
                    "ignore_id {} collides with a class id",
                    ignore
                )));
            }
        }
        if let Some(names) = &self.class_names {
            if names.len() != self.num_classes as usize {
                return Err(Error::validation(format!(
                    "class_names has {} entries for {} classes",
                    names.len(),
                    self.num_classes
                )));
            }
        }
        Ok(())
    }

    pub fn num_foreground(&self) -> usize {
        self.foreground_ids.len()
    }

    pub fn is_foreground(&self, class_id: u16) -> bool {
        self.foreground_ids.contains(&class_id)
    }

    /// Background class ids in ascending order.
    pub fn background_ids(&self) -> Vec<u16> {
        (0..self.num_classes).filter(|id| !self.is_foreground(*id)).collect()
    }

    /// Reserved code for "collapsed background" in fused label maps: one past
    /// the last class id, so real class ids stay stable.
    pub fn background_sentinel(&self) -> u16 {
        self.num_classes
    }

    pub fn is_ignore(&self, value: u16) -> bool {
        self.ignore_id == Some(value)
    }

    pub fn class_name(&self, class_id: u16) -> String {
        match &self.class_names {
            Some(names) => names[class_id as usize].clone(),
            None => format!("class_{class_id}"),
        }
    }
}

/// H×W×C per-pixel class probabilities, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbTensor {
    height: u32,
    width: u32,
    num_classes: u16,
    values: Vec<f32>,
}

impl ProbTensor {
    pub fn new(height: u32, width: u32, num_classes: u16, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation("probability tensor dims must be positive"));
        }
        if num_classes < 2 {
            return Err(Error::validation("probability tensor needs at least 2 classes"));
        }
        let expected = height as usize * width as usize * num_classes as usize;
        if values.len() != expected {
            return Err(Error::validation(format!(
                "probability tensor payload has {} values, expected {expected}",
                values.len()
            )));
        }
        let tensor = ProbTensor { height, width, num_classes, values };
        tensor.validate_values()?;
        Ok(tensor)
    }

    fn validate_values(&self) -> Result<()> {
        let c = self.num_classes as usize;
        for (pixel, row) in self.values.chunks_exact(c).enumerate() {
            let mut sum = 0.0f64;
            for &v in row {
                if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                    return Err(Error::validation(format!(
                        "probability value {v} at pixel {pixel} outside [0, 1]"
                    )));
                }
                sum += v as f64;
            }
            if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
                return Err(Error::validation(format!(
                    "probabilities at pixel {pixel} sum to {sum}, not 1"
                )));
            }
        }
        Ok(())
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn num_classes(&self) -> u16 {
        self.num_classes
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// The probability vector of one pixel.
    pub fn pixel(&self, row: u32, col: u32) -> &[f32] {
        let c = self.num_classes as usize;
        let base = (row as usize * self.width as usize + col as usize) * c;
        &self.values[base..base + c]
    }

    pub fn prob(&self, row: u32, col: u32, class_id: u16) -> f32 {
        self.pixel(row, col)[class_id as usize]
    }
}

/// H×W per-pixel foreground probabilities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ForegroundMap {
    height: u32,
    width: u32,
    values: Vec<f32>,
}

impl ForegroundMap {
    pub fn new(height: u32, width: u32, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation("foreground map dims must be positive"));
        }
        if values.len() != height as usize * width as usize {
            return Err(Error::validation(format!(
                "foreground map payload has {} values, expected {}",
                values.len(),
                height as usize * width as usize
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::validation(format!(
                    "foreground probability {v} at pixel {i} outside [0, 1]"
                )));
            }
        }
        Ok(ForegroundMap { height, width, values })
    }

    pub fn zeros(height: u32, width: u32) -> Self {
        ForegroundMap {
            height,
            width,
            values: vec![0.0; height as usize * width as usize],
        }
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn value(&self, row: u32, col: u32) -> f32 {
        self.values[row as usize * self.width as usize + col as usize]
    }
}

/// H×W integer class map (class ids, an ignore label, or the fused background
/// sentinel).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: u32,
    width: u32,
    values: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: u32, width: u32, values: Vec<u16>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation("label map dims must be positive"));
        }
        if values.len() != height as usize * width as usize {
            return Err(Error::validation(format!(
                "label map payload has {} values, expected {}",
                values.len(),
                height as usize * width as usize
            )));
        }
        Ok(LabelMap { height, width, values })
    }

    pub fn filled(height: u32, width: u32, value: u16) -> Self {
        LabelMap {
            height,
            width,
            values: vec![value; height as usize * width as usize],
        }
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn values(&self) -> &[u16] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [u16] {
        &mut self.values
    }

    pub fn get(&self, row: u32, col: u32) -> u16 {
        self.values[row as usize * self.width as usize + col as usize]
    }

    pub fn set(&mut self, row: u32, col: u32, value: u16) {
        self.values[row as usize * self.width as usize + col as usize] = value;
    }

    /// Checks every value is a class id, the ignore label, or (when allowed)
    /// the fused background sentinel.
    pub fn validate_against(&self, schema: &ClassSchema, allow_sentinel: bool) -> Result<()> {
        for (i, &v) in self.values.iter().enumerate() {
            let ok = v < schema.num_classes
                || schema.is_ignore(v)
                || (allow_sentinel && v == schema.background_sentinel());
            if !ok {
                return Err(Error::validation(format!(
                    "label {v} at pixel {i} is not a class id{}",
                    if schema.ignore_id.is_some() { " or the ignore label" } else { "" }
                )));
            }
        }
        Ok(())
    }
}

/// Any tensor the container format can hold.
#[derive(Debug, Clone, PartialEq)]
pub enum Tensor {
    Prob(ProbTensor),
    Foreground(ForegroundMap),
    Labels(LabelMap),
}

impl Tensor {
    pub fn kind(&self) -> &'static str {
        match self {
            Tensor::Prob(_) => "probability tensor",
            Tensor::Foreground(_) => "foreground map",
            Tensor::Labels(_) => "label map",
        }
    }
}

fn encode_tensor(tensor: &Tensor) -> Vec<u8> {
    let (dtype, dims, payload_len): (u8, Vec<u32>, usize) = match tensor {
        Tensor::Prob(t) => (
            DTYPE_F32,
            vec![t.height, t.width, t.num_classes as u32],
            t.values.len() * 4,
        ),
        Tensor::Foreground(t) => (DTYPE_F32, vec![t.height, t.width], t.values.len() * 4),
        Tensor::Labels(t) => (DTYPE_U16, vec![t.height, t.width], t.values.len() * 2),
    };
    let mut out = Vec::with_capacity(6 + dims.len() * 4 + payload_len);
    out.extend_from_slice(&MAGIC);
    out.push(dtype);
    out.push(dims.len() as u8);
    for d in &dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match tensor {
        Tensor::Prob(t) => {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Tensor::Foreground(t) => {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Tensor::Labels(t) => {
            for v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

pub fn save_tensor(path: &Path, tensor: &Tensor) -> Result<()> {
    fs::write(path, encode_tensor(tensor)).map_err(|e| Error::io(path, e))
}

pub struct TensorHeader {
    pub dtype: u8,
    pub dims: Vec<u32>,
    /// Offset of the payload within the file.
    pub payload_offset: usize,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<TensorHeader> {
    if bytes.len() < 6 {
        return Err(Error::format(path, "file too short for header"));
    }
    if bytes[0..4] != MAGIC {
        return Err(Error::format(path, "bad magic"));
    }
    let dtype = bytes[4];
    let rank = bytes[5] as usize;
    let header_len = 6 + rank * 4;
    if bytes.len() < header_len {
        return Err(Error::format(path, "file too short for declared rank"));
    }
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let start = 6 + i * 4;
        dims.push(u32::from_le_bytes(bytes[start..start + 4].try_into().unwrap()));
    }
    Ok(TensorHeader { dtype, dims, payload_offset: header_len })
}

/// Reads only the container header; used by manifest validation to check
/// shapes without touching payloads.
pub fn read_header(path: &Path) -> Result<TensorHeader> {
    let mut buf = [0u8; 6 + 4 * 8];
    let n = {
        use std::io::Read;
        let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut read = 0;
        loop {
            match f.read(&mut buf[read..]) {
                Ok(0) => break,
                Ok(k) => {
                    read += k;
                    if read == buf.len() {
                        break;
                    }
                }
                Err(e) => return Err(Error::io(path, e)),
            }
        }
        read
    };
    parse_header(path, &buf[..n])
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(path, &bytes)?;
    let payload = &bytes[header.payload_offset..];
    let elem_count: u64 = header.dims.iter().map(|&d| d as u64).product();
    match (header.dtype, header.dims.len()) {
        (DTYPE_F32, 3) => {
            check_payload(path, payload, elem_count, 4)?;
            let values = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let c = header.dims[2];
            if c > u16::MAX as u32 {
                return Err(Error::format(path, "class dimension exceeds u16 range"));
            }
            ProbTensor::new(header.dims[0], header.dims[1], c as u16, values)
                .map(Tensor::Prob)
                .map_err(|e| Error::format(path, e.to_string()))
        }
        (DTYPE_F32, 2) => {
            check_payload(path, payload, elem_count, 4)?;
            let values = payload
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            ForegroundMap::new(header.dims[0], header.dims[1], values)
                .map(Tensor::Foreground)
                .map_err(|e| Error::format(path, e.to_string()))
        }
        (DTYPE_U16, 2) => {
            check_payload(path, payload, elem_count, 2)?;
            let values = payload
                .chunks_exact(2)
                .map(|b| u16::from_le_bytes(b.try_into().unwrap()))
                .collect();
            LabelMap::new(header.dims[0], header.dims[1], values)
                .map(Tensor::Labels)
                .map_err(|e| Error::format(path, e.to_string()))
        }
        (dtype, rank) => Err(Error::format(
            path,
            format!("unsupported dtype/rank combination ({dtype}, {rank})"),
        )),
    }
}

fn check_payload(path: &Path, payload: &[u8], elems: u64, elem_size: u64) -> Result<()> {
    let expected = elems.checked_mul(elem_size).ok_or_else(|| Error::format(path, "dims overflow"))?;
    if payload.len() as u64 != expected {
        return Err(Error::format(
            path,
            format!("payload is {} bytes, header declares {expected}", payload.len()),
        ));
    }
    Ok(())
}

pub fn load_prob_tensor(path: &Path) -> Result<ProbTensor> {
    match load_tensor(path)? {
        Tensor::Prob(t) => Ok(t),
        other => Err(Error::format(path, format!("expected probability tensor, found {}", other.kind()))),
    }
}

pub fn load_foreground_map(path: &Path) -> Result<ForegroundMap> {
    match load_tensor(path)? {
        Tensor::Foreground(t) => Ok(t),
        other => Err(Error::format(path, format!("expected foreground map, found {}", other.kind()))),
    }
}

pub fn load_label_map(path: &Path) -> Result<LabelMap> {
    match load_tensor(path)? {
        Tensor::Labels(t) => Ok(t),
        other => Err(Error::format(path, format!("expected label map, found {}", other.kind()))),
    }
}

/// One dataset image: ids plus relative paths to the three tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub probs: String,
    pub foreground: String,
    pub labels: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: ClassSchema,
    pub images: Vec<ImageRecord>,
}

/// A manifest bound to the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub dir: PathBuf,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.manifest.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.images.is_empty()
    }

    pub fn schema(&self) -> &ClassSchema {
        &self.manifest.schema
    }

    pub fn image_id(&self, index: usize) -> &str {
        &self.manifest.images[index].id
    }

    pub fn record_paths(&self, index: usize) -> (PathBuf, PathBuf, PathBuf) {
        let rec = &self.manifest.images[index];
        (
            self.dir.join(&rec.probs),
            self.dir.join(&rec.foreground),
            self.dir.join(&rec.labels),
        )
    }

    /// Loads and cross-validates one record's tensors (shapes against each
    /// other, class count and label values against the schema).
    pub fn load_image(&self, index: usize) -> Result<(ProbTensor, ForegroundMap, LabelMap)> {
        let rec = &self.manifest.images[index];
        let (probs_path, fg_path, labels_path) = self.record_paths(index);
        let probs = load_prob_tensor(&probs_path)
            .map_err(|e| Error::validation(format!("record '{}': {e}", rec.id)))?;
        let fg = load_foreground_map(&fg_path)
            .map_err(|e| Error::validation(format!("record '{}': {e}", rec.id)))?;
        let labels = load_label_map(&labels_path)
            .map_err(|e| Error::validation(format!("record '{}': {e}", rec.id)))?;
        if probs.num_classes() != self.schema().num_classes {
            return Err(Error::validation(format!(
                "record '{}': tensor has {} classes, schema has {}",
                rec.id,
                probs.num_classes(),
                self.schema().num_classes
            )));
        }
        let shapes = [
            (probs.height(), probs.width()),
            (fg.height(), fg.width()),
            (labels.height(), labels.width()),
        ];
        if shapes[0] != shapes[1] || shapes[0] != shapes[2] {
            return Err(Error::validation(format!(
                "record '{}': tensor shapes differ: {:?}",
                rec.id, shapes
            )));
        }
        labels
            .validate_against(self.schema(), false)
            .map_err(|e| Error::validation(format!("record '{}': {e}", rec.id)))?;
        Ok((probs, fg, labels))
    }
}

pub fn save_manifest(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut text = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::validation(format!("manifest serialization failed: {e}")))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads a manifest and validates it: non-empty, unique ids, schema
/// consistency, all referenced files present with matching shapes. Only the
/// container headers are read here; payload validation happens on image load.
pub fn load_manifest(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(path, format!("invalid manifest JSON: {e}")))?;
    manifest.schema.validate()?;
    if manifest.images.is_empty() {
        return Err(Error::format(path, "empty manifest".to_string()));
    }
    let dir = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
    let mut seen = BTreeSet::new();
    for rec in &manifest.images {
        if !seen.insert(rec.id.clone()) {
            return Err(Error::validation(format!("duplicate image id '{}'", rec.id)));
        }
        let probs_path = dir.join(&rec.probs);
        let fg_path = dir.join(&rec.foreground);
        let labels_path = dir.join(&rec.labels);
        let probs = read_header(&probs_path)
            .map_err(|e| annotate_record(&rec.id, e))?;
        let fg = read_header(&fg_path).map_err(|e| annotate_record(&rec.id, e))?;
        let labels = read_header(&labels_path).map_err(|e| annotate_record(&rec.id, e))?;
        if probs.dtype != DTYPE_F32 || probs.dims.len() != 3 {
            return Err(Error::validation(format!(
                "record '{}': '{}' is not a probability tensor",
                rec.id, rec.probs
            )));
        }
        if fg.dtype != DTYPE_F32 || fg.dims.len() != 2 {
            return Err(Error::validation(format!(
                "record '{}': '{}' is not a foreground map",
                rec.id, rec.foreground
            )));
        }
        if labels.dtype != DTYPE_U16 || labels.dims.len() != 2 {
            return Err(Error::validation(format!(
                "record '{}': '{}' is not a label map",
                rec.id, rec.labels
            )));
        }
        if probs.dims[2] != manifest.schema.num_classes as u32 {
            return Err(Error::validation(format!(
                "record '{}': tensor has {} classes, schema has {}",
                rec.id, probs.dims[2], manifest.schema.num_classes
            )));
        }
        let hw = [&probs.dims[0..2], &fg.dims[0..2], &labels.dims[0..2]];
        if hw[0] != hw[1] || hw[0] != hw[2] {
            return Err(Error::validation(format!(
                "record '{}': tensor shapes differ: probs {:?}, foreground {:?}, labels {:?}",
                rec.id, hw[0], hw[1], hw[2]
            )));
        }
    }
    Ok(Dataset { manifest, dir })
}

fn annotate_record(id: &str, err: Error) -> Error {
    match err {
        Error::Io { path, source } => Error::validation(format!(
            "record '{id}': cannot read '{}': {source}",
            path.display()
        )),
        other => Error::validation(format!("record '{id}': {other}")),
    }
}

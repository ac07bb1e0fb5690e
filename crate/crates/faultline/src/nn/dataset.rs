//! Dataset container and ingestion: IDX (gzipped MNIST layout), labeled
//! CSV, and a seeded synthetic blob generator for desk-scale experiments.

use flate2::read::GzDecoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("bad IDX magic in {path}: expected {expected:#010x}, got {got:#010x}")]
    BadMagic { path: String, expected: u32, got: u32 },
    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("csv error in {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{0}")]
    Invalid(String),
}

/// One sample: features in [0, 1) plus its class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub input: Vec<f64>,
    pub label: usize,
}

/// A labeled dataset with all inputs validated into [0, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    items: Vec<DatasetItem>,
    class_count: usize,
}

impl Dataset {
    pub fn new(items: Vec<DatasetItem>, class_count: usize) -> Result<Self, DatasetError> {
        if items.is_empty() {
            return Err(DatasetError::Invalid("dataset has no items".into()));
        }
        let features = items[0].input.len();
        for (idx, item) in items.iter().enumerate() {
            if item.input.len() != features {
                return Err(DatasetError::Invalid(format!(
                    "item {idx} has {} features, expected {features}",
                    item.input.len()
                )));
            }
            if item.label >= class_count {
                return Err(DatasetError::Invalid(format!(
                    "item {idx} label {} out of range for {class_count} classes",
                    item.label
                )));
            }
            if let Some(bad) = item.input.iter().find(|v| !(0.0..1.0).contains(*v)) {
                return Err(DatasetError::Invalid(format!(
                    "item {idx} feature {bad} outside [0, 1)"
                )));
            }
        }
        Ok(Self { items, class_count })
    }

    pub fn items(&self) -> &[DatasetItem] {
        &self.items
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature_count(&self) -> usize {
        self.items[0].input.len()
    }

    /// Keeps only the first `n` items (handy for sizing experiments).
    pub fn truncate(&mut self, n: usize) {
        if n > 0 {
            self.items.truncate(n);
        }
    }

    /// Loads a gzipped IDX image/label pair (the MNIST distribution
    /// layout). Pixels map to [0, 1) by dividing by 256.
    pub fn from_idx_gz(images: &Path, labels: &Path) -> Result<Self, DatasetError> {
        let image_bytes = read_gz(images)?;
        let label_bytes = read_gz(labels)?;

        let img_magic = be_u32(&image_bytes, 0, images)?;
        if img_magic != 0x0000_0803 {
            return Err(DatasetError::BadMagic {
                path: images.display().to_string(),
                expected: 0x0000_0803,
                got: img_magic,
            });
        }
        let count = be_u32(&image_bytes, 4, images)? as usize;
        let rows = be_u32(&image_bytes, 8, images)? as usize;
        let cols = be_u32(&image_bytes, 12, images)? as usize;
        let pixels = rows * cols;
        let expected_len = 16 + count * pixels;
        if image_bytes.len() < expected_len {
            return Err(DatasetError::Invalid(format!(
                "{}: truncated image data ({} bytes, need {expected_len})",
                images.display(),
                image_bytes.len()
            )));
        }

        let lbl_magic = be_u32(&label_bytes, 0, labels)?;
        if lbl_magic != 0x0000_0801 {
            return Err(DatasetError::BadMagic {
                path: labels.display().to_string(),
                expected: 0x0000_0801,
                got: lbl_magic,
            });
        }
        let label_count = be_u32(&label_bytes, 4, labels)? as usize;
        if label_count != count {
            return Err(DatasetError::CountMismatch { images: count, labels: label_count });
        }
        if label_bytes.len() < 8 + count {
            return Err(DatasetError::Invalid(format!(
                "{}: truncated label data",
                labels.display()
            )));
        }

        let mut items = Vec::with_capacity(count);
        let mut max_label = 0usize;
        for n in 0..count {
            let start = 16 + n * pixels;
            let input: Vec<f64> = image_bytes[start..start + pixels]
                .iter()
                .map(|&p| p as f64 / 256.0)
                .collect();
            let label = label_bytes[8 + n] as usize;
            max_label = max_label.max(label);
            items.push(DatasetItem { input, label });
        }
        Dataset::new(items, max_label + 1)
    }

    /// Loads a CSV with the label in the first column; the remaining
    /// columns are features, each divided by `divisor`.
    pub fn from_csv(path: &Path, divisor: f64) -> Result<Self, DatasetError> {
        let wrap_csv = |source| DatasetError::Csv { path: path.display().to_string(), source };
        let file = File::open(path)
            .map_err(|source| DatasetError::Io { path: path.display().to_string(), source })?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(BufReader::new(file));
        let mut items = Vec::new();
        let mut max_label = 0usize;
        for record in reader.records() {
            let record = record.map_err(wrap_csv)?;
            let mut fields = record.iter();
            let label: usize = fields
                .next()
                .ok_or_else(|| DatasetError::Invalid(format!("{}: empty row", path.display())))?
                .trim()
                .parse()
                .map_err(|e| {
                    DatasetError::Invalid(format!("{}: bad label: {e}", path.display()))
                })?;
            let input = fields
                .map(|f| {
                    f.trim().parse::<f64>().map(|v| v / divisor).map_err(|e| {
                        DatasetError::Invalid(format!("{}: bad feature: {e}", path.display()))
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            max_label = max_label.max(label);
            items.push(DatasetItem { input, label });
        }
        Dataset::new(items, max_label + 1)
    }

    /// Deterministic synthetic blobs: one random center per class inside
    /// `[0, center_scale)`, points jittered by ±`spread` and clamped into
    /// [0, 1). Small `center_scale` yields the near-zero, sparse data the
    /// fault experiments rely on. Labels cycle round-robin.
    pub fn blobs(
        features: usize,
        classes: usize,
        items: usize,
        center_scale: f64,
        spread: f64,
        seed: u64,
    ) -> Result<Self, DatasetError> {
        if features == 0 || classes == 0 || items == 0 {
            return Err(DatasetError::Invalid("blobs need features, classes, items >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..features).map(|_| rng.gen::<f64>() * center_scale).collect())
            .collect();
        let mut out = Vec::with_capacity(items);
        for n in 0..items {
            let label = n % classes;
            let input = centers[label]
                .iter()
                .map(|&c| {
                    let jitter = (rng.gen::<f64>() * 2.0 - 1.0) * spread;
                    (c + jitter).clamp(0.0, 1.0 - 1e-9)
                })
                .collect();
            out.push(DatasetItem { input, label });
        }
        Dataset::new(out, classes)
    }
}

fn read_gz(path: &Path) -> Result<Vec<u8>, DatasetError> {
    let wrap = |source| DatasetError::Io { path: path.display().to_string(), source };
    let file = File::open(path).map_err(wrap)?;
    let mut bytes = Vec::new();
    GzDecoder::new(BufReader::new(file)).read_to_end(&mut bytes).map_err(wrap)?;
    Ok(bytes)
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32, DatasetError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DatasetError::Invalid(format!("{}: truncated header", path.display())))
}

//! Quantized weight storage, in memory and on disk.
//!
//! On disk an archive is a directory holding `manifest.json` plus one raw
//! file per weight matrix and bias vector. Raw files are row-major with the
//! input index as the row, one little-endian signed 16-bit word per entry,
//! each word being the value's raw fixed-point encoding (sign-extended to
//! 16 bits). Biases are stored in the layer's WR format; the engine
//! re-encodes them into the IMR format when it seeds an accumulator.

use super::{FloatWeights, FormatPlan, NetworkTopology};
use crate::fxp::{quantize, FixedPointFormat, FixedPointValue};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("{what} for layer {layer}: expected {expected}, got {got}")]
    Shape { what: &'static str, layer: usize, expected: usize, got: usize },
    #[error("format {format} is wider than the 16-bit archive word")]
    WordTooNarrow { format: FixedPointFormat },
}

/// One stage's quantized parameters. `weights` is row-major with the input
/// index as the row: entry `(i, o)` at `i * n_out + o`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weights: Vec<FixedPointValue>,
    pub biases: Vec<FixedPointValue>,
}

/// A trained network quantized under a [`FormatPlan`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightArchive {
    topology: NetworkTopology,
    formats: FormatPlan,
    layers: Vec<LayerParams>,
}

#[derive(Serialize, Deserialize)]
struct ManifestLayer {
    weights_file: String,
    biases_file: String,
    rows: usize,
    cols: usize,
    ir_format: FixedPointFormat,
    wr_format: FixedPointFormat,
    imr_format: FixedPointFormat,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    topology: NetworkTopology,
    byte_order: String,
    word: String,
    output_format: FixedPointFormat,
    layers: Vec<ManifestLayer>,
}

impl WeightArchive {
    /// Quantizes float weights and biases under the plan's WR formats.
    pub fn from_float(weights: &FloatWeights, formats: FormatPlan) -> Result<Self, ArchiveError> {
        let topology = weights.topology.clone();
        let stages = topology.stage_count();
        if formats.wr.len() != stages || formats.ir.len() != stages + 1 {
            return Err(ArchiveError::Manifest(format!(
                "format plan covers {} stages, topology has {stages}",
                formats.wr.len()
            )));
        }
        let sizes = topology.layer_sizes();
        let mut layers = Vec::with_capacity(stages);
        for j in 0..stages {
            let wr = formats.wr[j];
            let expected = sizes[j] * sizes[j + 1];
            if weights.weights[j].len() != expected {
                return Err(ArchiveError::Shape {
                    what: "weight matrix",
                    layer: j,
                    expected,
                    got: weights.weights[j].len(),
                });
            }
            layers.push(LayerParams {
                weights: weights.weights[j].iter().map(|&w| quantize(w, wr)).collect(),
                biases: weights.biases[j].iter().map(|&b| quantize(b, wr)).collect(),
            });
        }
        Ok(Self { topology, formats, layers })
    }

    pub fn from_parts(
        topology: NetworkTopology,
        formats: FormatPlan,
        layers: Vec<LayerParams>,
    ) -> Result<Self, ArchiveError> {
        let sizes = topology.layer_sizes();
        if layers.len() != topology.stage_count() {
            return Err(ArchiveError::Manifest(format!(
                "{} layer parameter sets for {} stages",
                layers.len(),
                topology.stage_count()
            )));
        }
        for (j, layer) in layers.iter().enumerate() {
            let expected = sizes[j] * sizes[j + 1];
            if layer.weights.len() != expected {
                return Err(ArchiveError::Shape {
                    what: "weight matrix",
                    layer: j,
                    expected,
                    got: layer.weights.len(),
                });
            }
            if layer.biases.len() != sizes[j + 1] {
                return Err(ArchiveError::Shape {
                    what: "bias vector",
                    layer: j,
                    expected: sizes[j + 1],
                    got: layer.biases.len(),
                });
            }
        }
        Ok(Self { topology, formats, layers })
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn formats(&self) -> &FormatPlan {
        &self.formats
    }

    pub fn layer(&self, j: usize) -> &LayerParams {
        &self.layers[j]
    }

    /// Writes the archive directory (created if missing). Deterministic:
    /// the same archive always produces byte-identical files.
    pub fn save(&self, dir: &Path) -> Result<(), ArchiveError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| ArchiveError::Io { path, source }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let mut manifest_layers = Vec::with_capacity(self.layers.len());
        let sizes = self.topology.layer_sizes();
        for (j, layer) in self.layers.iter().enumerate() {
            let wr = self.formats.wr[j];
            if wr.width() > 16 {
                return Err(ArchiveError::WordTooNarrow { format: wr });
            }
            let weights_file = format!("w{j}.raw");
            let biases_file = format!("b{j}.raw");
            let encode = |values: &[FixedPointValue]| {
                let mut bytes = Vec::with_capacity(values.len() * 2);
                for v in values {
                    bytes.extend_from_slice(&(v.as_int() as i16).to_le_bytes());
                }
                bytes
            };
            let wpath = dir.join(&weights_file);
            fs::write(&wpath, encode(&layer.weights)).map_err(io(&wpath))?;
            let bpath = dir.join(&biases_file);
            fs::write(&bpath, encode(&layer.biases)).map_err(io(&bpath))?;
            manifest_layers.push(ManifestLayer {
                weights_file,
                biases_file,
                rows: sizes[j],
                cols: sizes[j + 1],
                ir_format: self.formats.ir[j],
                wr_format: wr,
                imr_format: self.formats.imr[j],
            });
        }
        let manifest = Manifest {
            topology: self.topology.clone(),
            byte_order: "little_endian".into(),
            word: "i16".into(),
            output_format: self.formats.output(),
            layers: manifest_layers,
        };
        let path = dir.join("manifest.json");
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| ArchiveError::Manifest(e.to_string()))?;
        fs::write(&path, json + "\n").map_err(io(&path))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, ArchiveError> {
        let manifest_path = dir.join("manifest.json");
        let bytes = fs::read(&manifest_path)
            .map_err(|source| ArchiveError::Io { path: manifest_path.display().to_string(), source })?;
        let manifest: Manifest = serde_json::from_slice(&bytes)
            .map_err(|e| ArchiveError::Manifest(e.to_string()))?;
        if manifest.byte_order != "little_endian" || manifest.word != "i16" {
            return Err(ArchiveError::Manifest(format!(
                "unsupported encoding {}/{}",
                manifest.byte_order, manifest.word
            )));
        }
        let sizes = manifest.topology.layer_sizes().to_vec();
        if manifest.layers.len() + 1 != sizes.len() {
            return Err(ArchiveError::Manifest(format!(
                "{} layer entries for {} neuron layers",
                manifest.layers.len(),
                sizes.len()
            )));
        }
        let mut formats = FormatPlan { ir: Vec::new(), wr: Vec::new(), imr: Vec::new() };
        let mut layers = Vec::with_capacity(manifest.layers.len());
        for (j, ml) in manifest.layers.iter().enumerate() {
            if ml.rows != sizes[j] || ml.cols != sizes[j + 1] {
                return Err(ArchiveError::Shape {
                    what: "manifest matrix shape",
                    layer: j,
                    expected: sizes[j] * sizes[j + 1],
                    got: ml.rows * ml.cols,
                });
            }
            if ml.wr_format.width() > 16 {
                return Err(ArchiveError::WordTooNarrow { format: ml.wr_format });
            }
            formats.ir.push(ml.ir_format);
            formats.wr.push(ml.wr_format);
            formats.imr.push(ml.imr_format);
            let decode = |file: &str, expected: usize| -> Result<Vec<FixedPointValue>, ArchiveError> {
                let path = dir.join(file);
                let raw = fs::read(&path)
                    .map_err(|source| ArchiveError::Io { path: path.display().to_string(), source })?;
                if raw.len() != expected * 2 {
                    return Err(ArchiveError::Shape {
                        what: "raw file length (words)",
                        layer: j,
                        expected,
                        got: raw.len() / 2,
                    });
                }
                Ok(raw
                    .chunks_exact(2)
                    .map(|c| {
                        let word = i16::from_le_bytes([c[0], c[1]]);
                        FixedPointValue::from_raw(word as i32 as u32, ml.wr_format)
                    })
                    .collect())
            };
            layers.push(LayerParams {
                weights: decode(&ml.weights_file, ml.rows * ml.cols)?,
                biases: decode(&ml.biases_file, ml.cols)?,
            });
        }
        formats.ir.push(manifest.output_format);
        Self::from_parts(manifest.topology, formats, layers)
    }
}

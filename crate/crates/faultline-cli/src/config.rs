//! The declarative run configuration: one TOML file describes the network,
//! the data, training, calibration, the accelerator, and the campaign, so
//! an experiment is a diffable document rather than a flag soup. Command
//! line flags override the few fields that vary between runs (seed,
//! trials, output directory).

use anyhow::{bail, Context as _, Result};
use faultline::accel::RegisterClass;
use faultline::faults::{Component, FaultKind};
use faultline::mitigate::Technique;
use faultline::nn::{Activation, CalibrationOptions, TrainConfig};
use serde::Deserialize;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub topology: TopologySection,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub calibration: CalibrationSection,
    pub accelerator: AcceleratorSection,
    #[serde(default)]
    pub archive: Option<ArchiveSection>,
    #[serde(default)]
    pub campaign: CampaignSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologySection {
    /// Layer sizes, inputs first: `[16, 8, 4]` is a 16-8-4 network.
    pub layers: Vec<usize>,
    pub activation: Activation,
}

/// Where the data comes from. Blob datasets are synthesized on the fly
/// as one seeded draw split into training and evaluation halves;
/// file-backed kinds resolve relative paths against the config file's
/// directory.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSection {
    Blobs {
        classes: usize,
        train_items: usize,
        eval_items: usize,
        center_scale: f64,
        spread: f64,
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        eval_images: PathBuf,
        eval_labels: PathBuf,
        /// Keep only the first N items of each split.
        #[serde(default)]
        limit: Option<usize>,
    },
    Csv {
        train: PathBuf,
        eval: PathBuf,
        /// Feature values are divided by this on load.
        divisor: f64,
        #[serde(default)]
        limit: Option<usize>,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: u32,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self { epochs: d.epochs, learning_rate: d.learning_rate, seed: d.seed }
    }
}

impl TrainSection {
    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSection {
    pub ir_width: u8,
    pub wr_width: u8,
    pub imr_width: u8,
    pub unify_layers: bool,
}

impl Default for CalibrationSection {
    fn default() -> Self {
        let d = CalibrationOptions::default();
        Self {
            ir_width: d.ir_width,
            wr_width: d.wr_width,
            imr_width: d.imr_width,
            unify_layers: d.unify_layers,
        }
    }
}

impl CalibrationSection {
    pub fn to_options(&self) -> CalibrationOptions {
        CalibrationOptions {
            ir_width: self.ir_width,
            wr_width: self.wr_width,
            imr_width: self.imr_width,
            unify_layers: self.unify_layers,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcceleratorSection {
    pub num_pes: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveSection {
    /// Directory holding a saved weight archive. When present, commands
    /// load it instead of training in-process.
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CampaignSection {
    pub master_seed: u64,
    pub trials: usize,
    /// Swept fault-bit counts; 0 is the fault-free baseline point.
    pub bit_counts: Vec<usize>,
    pub kind: FaultKind,
    pub mitigation: Technique,
    /// Optional fault placement constraints.
    pub class: Option<RegisterClass>,
    pub layer: Option<usize>,
    pub component: Option<Component>,
    /// PE counts the pe-count preset sweeps over.
    pub pe_list: Vec<usize>,
    /// Tolerance (error percentage points) for convergence reports.
    pub error_margin: f64,
}

impl Default for CampaignSection {
    fn default() -> Self {
        Self {
            master_seed: 42,
            trials: 1000,
            bit_counts: vec![0, 1, 2, 4, 8, 16],
            kind: FaultKind::StuckAt1,
            mitigation: Technique::None,
            class: None,
            layer: None,
            component: None,
            pe_list: vec![64, 256, 1024],
            error_margin: 1.0,
        }
    }
}

/// Parses and sanity-checks a config file. Returns the config together
/// with the raw bytes (hashed into the run manifest).
pub fn load(path: &Path) -> Result<(FileConfig, Vec<u8>)> {
    let bytes = std::fs::read(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let text = std::str::from_utf8(&bytes).context("config is not UTF-8")?;
    let config: FileConfig = toml::from_str(text)
        .with_context(|| format!("parsing config {}", path.display()))?;
    validate(&config)?;
    Ok((config, bytes))
}

fn validate(config: &FileConfig) -> Result<()> {
    if config.topology.layers.len() < 2 {
        bail!("topology needs at least an input and an output layer");
    }
    if let DatasetSection::Blobs { classes, .. } = &config.dataset {
        let outputs = *config.topology.layers.last().unwrap();
        if *classes != outputs {
            bail!("dataset has {classes} classes but the network has {outputs} outputs");
        }
    }
    if config.campaign.trials == 0 {
        bail!("campaign.trials must be at least 1");
    }
    if config.campaign.bit_counts.is_empty() {
        bail!("campaign.bit_counts must not be empty");
    }
    Ok(())
}

/// Resolves a possibly-relative data path against the config's directory.
pub fn resolve_path(config_path: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config_path.parent().unwrap_or(Path::new(".")).join(p)
    }
}

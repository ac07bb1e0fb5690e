//! Turns a parsed config into the live objects a command needs: datasets,
//! a weight archive (loaded from disk or trained in-process), and the
//! accelerator configuration.

use crate::config::{resolve_path, DatasetSection, FileConfig};
use anyhow::{bail, Context as _, Result};
use faultline::accel::AcceleratorConfig;
use faultline::nn::{
    calibrate, train, Activation, Dataset, FloatWeights, FormatPlan, NetworkTopology,
    WeightArchive,
};
use std::path::Path;

/// Preset axes override pieces of the base configuration. Anything that
/// changes the network or the data forces an in-process retrain.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub activation: Option<Activation>,
    pub dataset_seed: Option<u64>,
    pub center_scale: Option<f64>,
    pub num_pes: Option<usize>,
}

impl Overrides {
    fn needs_retrain(&self) -> bool {
        self.activation.is_some()
            || self.dataset_seed.is_some()
            || self.center_scale.is_some()
    }
}

pub struct Context {
    pub eval_set: Dataset,
    pub archive: WeightArchive,
    pub accel: AcceleratorConfig,
}

/// Training plus calibration, separated out so `train` can save the pieces.
pub fn train_archive(
    config: &FileConfig,
    config_path: &Path,
    overrides: Overrides,
) -> Result<(Dataset, Dataset, FloatWeights, WeightArchive)> {
    let (train_set, eval_set) = datasets(config, config_path, overrides)?;
    let topology = topology(config, overrides)?;
    check_dataset(&topology, &train_set, "training")?;
    check_dataset(&topology, &eval_set, "evaluation")?;
    let weights = train(&topology, &train_set, &config.train.to_train_config())
        .context("training failed")?;
    let plan: FormatPlan = calibrate(&weights, &train_set, &config.calibration.to_options())
        .context("format calibration failed")?;
    let archive = WeightArchive::from_float(&weights, plan)
        .context("quantizing trained weights failed")?;
    Ok((train_set, eval_set, weights, archive))
}

/// The full context: archive from `[archive].dir` when configured and no
/// override forces a retrain, otherwise trained in-process.
pub fn build(config: &FileConfig, config_path: &Path, overrides: Overrides) -> Result<Context> {
    let (eval_set, archive) = match (&config.archive, overrides.needs_retrain()) {
        (Some(section), false) => {
            let dir = resolve_path(config_path, &section.dir);
            let archive = WeightArchive::load(&dir)
                .with_context(|| format!("loading archive {}", dir.display()))?;
            let topology = topology(config, overrides)?;
            if archive.topology() != &topology {
                bail!(
                    "archive {} was built for another topology/activation",
                    dir.display()
                );
            }
            let (_, eval_set) = datasets(config, config_path, overrides)?;
            (eval_set, archive)
        }
        _ => {
            let (_, eval_set, _, archive) = train_archive(config, config_path, overrides)?;
            (eval_set, archive)
        }
    };
    check_dataset(archive.topology(), &eval_set, "evaluation")?;
    let num_pes = overrides.num_pes.unwrap_or(config.accelerator.num_pes);
    let accel = AcceleratorConfig::from_archive(&archive, num_pes)?;
    Ok(Context { eval_set, archive, accel })
}

fn topology(config: &FileConfig, overrides: Overrides) -> Result<NetworkTopology> {
    let activation = overrides.activation.unwrap_or(config.topology.activation);
    Ok(NetworkTopology::new(config.topology.layers.clone(), activation)?)
}

fn datasets(
    config: &FileConfig,
    config_path: &Path,
    overrides: Overrides,
) -> Result<(Dataset, Dataset)> {
    match &config.dataset {
        DatasetSection::Blobs { classes, train_items, eval_items, center_scale, spread, seed } => {
            let features = config.topology.layers[0];
            let scale = overrides.center_scale.unwrap_or(*center_scale);
            let seed = overrides.dataset_seed.unwrap_or(*seed);
            // One draw, then split: both halves see the same class centers
            // (and the round-robin labels keep both halves balanced), with
            // disjoint jitter.
            let full = Dataset::blobs(
                features,
                *classes,
                train_items + eval_items,
                scale,
                *spread,
                seed,
            )?;
            let train_set = Dataset::new(full.items()[..*train_items].to_vec(), *classes)?;
            let eval_set = Dataset::new(full.items()[*train_items..].to_vec(), *classes)?;
            Ok((train_set, eval_set))
        }
        DatasetSection::Idx { train_images, train_labels, eval_images, eval_labels, limit } => {
            reject_blob_overrides(overrides, "idx")?;
            let mut train_set = Dataset::from_idx_gz(
                &resolve_path(config_path, train_images),
                &resolve_path(config_path, train_labels),
            )?;
            let mut eval_set = Dataset::from_idx_gz(
                &resolve_path(config_path, eval_images),
                &resolve_path(config_path, eval_labels),
            )?;
            if let Some(n) = limit {
                train_set.truncate(*n);
                eval_set.truncate(*n);
            }
            Ok((train_set, eval_set))
        }
        DatasetSection::Csv { train, eval, divisor, limit } => {
            reject_blob_overrides(overrides, "csv")?;
            let mut train_set = Dataset::from_csv(&resolve_path(config_path, train), *divisor)?;
            let mut eval_set = Dataset::from_csv(&resolve_path(config_path, eval), *divisor)?;
            if let Some(n) = limit {
                train_set.truncate(*n);
                eval_set.truncate(*n);
            }
            Ok((train_set, eval_set))
        }
    }
}

fn reject_blob_overrides(overrides: Overrides, kind: &str) -> Result<()> {
    if overrides.dataset_seed.is_some() || overrides.center_scale.is_some() {
        bail!("this preset varies the synthetic dataset and needs `kind = \"blobs\"`, not {kind}");
    }
    Ok(())
}

fn check_dataset(topology: &NetworkTopology, dataset: &Dataset, what: &str) -> Result<()> {
    if dataset.feature_count() != topology.input_size() {
        bail!(
            "{what} data has {} features, the network takes {}",
            dataset.feature_count(),
            topology.input_size()
        );
    }
    if dataset.class_count() > topology.output_size() {
        bail!(
            "{what} data has {} classes, the network only has {} outputs",
            dataset.class_count(),
            topology.output_size()
        );
    }
    Ok(())
}

//! Statistical fault campaigns: many independently seeded trials per
//! fault-bit count, aggregated around the median.
//!
//! Each trial draws one random fault (register, bits, and — for transients
//! — a cycle), runs the whole evaluation set through the engine with that
//! fault present, and reports the classification error. Per-trial RNG
//! streams are derived by hashing (master seed, bit count, trial index),
//! so a trial's outcome never depends on execution order or thread count:
//! the data-parallel and sequential paths produce bit-identical results,
//! and rerunning any single trial in isolation reproduces it.
//!
//! Error distributions under faults are heavy-tailed — most faults land in
//! dead bits or drown in the network's margins while a rare sign flip in a
//! hot register is catastrophic — so the campaign headline is the median
//! across trials, with mean, standard deviation, and the running median
//! kept alongside to judge convergence.

use crate::accel::{run_inference, AccelError, AcceleratorConfig, CycleSchedule};
use crate::faults::{
    generate_fault, ActiveFault, Component, FaultError, FaultFilter, FaultKind, FaultSpec,
};
use crate::mitigate::Technique;
use crate::nn::{Activation, Dataset, NnError, WeightArchive};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("a campaign needs at least one trial per point")]
    NoTrials,
    #[error("a campaign needs at least one fault-bit count")]
    NoBitCounts,
    #[error("convergence needs at least two trials, got {0}")]
    TooFewTrials(usize),
    #[error(transparent)]
    Fault(#[from] FaultError),
    #[error(transparent)]
    Accel(#[from] AccelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("thread pool: {0}")]
    Pool(String),
}

/// What to sweep and how hard: the fault-bit counts (0 means a fault-free
/// baseline point), trials per count, the fault kind, placement
/// constraints (whose `count` field is overridden by each swept value),
/// and the mitigation under test.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignSettings {
    pub master_seed: u64,
    pub trials: usize,
    pub bit_counts: Vec<usize>,
    pub kind: FaultKind,
    pub filter: FaultFilter,
    pub mitigation: Technique,
}

impl CampaignSettings {
    /// An unconstrained sweep over k = 0..=max_bits.
    pub fn sweep(master_seed: u64, trials: usize, max_bits: usize, kind: FaultKind) -> Self {
        Self {
            master_seed,
            trials,
            bit_counts: (0..=max_bits).collect(),
            kind,
            filter: FaultFilter::any(1),
            mitigation: Technique::None,
        }
    }
}

/// One trial's outcome: the drawn fault (none for the k = 0 baseline) and
/// the evaluation-set error it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub bit_count: usize,
    pub trial: usize,
    pub error_pct: f64,
    pub fault: Option<FaultSpec>,
}

/// Aggregates of one swept bit count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignPoint {
    pub bit_count: usize,
    /// Per-trial error percentages, in trial order.
    pub errors: Vec<f64>,
    /// The headline statistic.
    pub median: f64,
    pub mean: f64,
    /// Sample standard deviation (n-1); zero for a single trial.
    pub stddev: f64,
    /// `running_median[t]` is the median of `errors[0..=t]`.
    pub running_median: Vec<f64>,
}

/// A full sweep. Carries everything needed to reproduce it and nothing
/// that varies between identical reruns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub master_seed: u64,
    pub trials: usize,
    pub kind: FaultKind,
    pub mitigation: Technique,
    pub points: Vec<CampaignPoint>,
}

impl CampaignResult {
    pub fn point(&self, bit_count: usize) -> Option<&CampaignPoint> {
        self.points.iter().find(|p| p.bit_count == bit_count)
    }
}

/// The RNG seed of one trial: SHA-256 over a domain tag, the master seed,
/// the bit count, and the trial index (all little-endian). Every trial
/// gets its own stream regardless of how the sweep is chopped up.
pub fn trial_seed(master_seed: u64, bit_count: usize, trial: usize) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(b"faultline.trial");
    hasher.update(master_seed.to_le_bytes());
    hasher.update((bit_count as u64).to_le_bytes());
    hasher.update((trial as u64).to_le_bytes());
    hasher.finalize().into()
}

/// A fixed evaluation context: one accelerator, one weight archive, one
/// dataset. Campaigns run against it.
pub struct Campaign<'a> {
    config: &'a AcceleratorConfig,
    archive: &'a WeightArchive,
    dataset: &'a Dataset,
    schedule: CycleSchedule,
}

impl<'a> Campaign<'a> {
    pub fn new(
        config: &'a AcceleratorConfig,
        archive: &'a WeightArchive,
        dataset: &'a Dataset,
    ) -> Self {
        let schedule = CycleSchedule::new(config);
        Self { config, archive, dataset, schedule }
    }

    /// Runs trial `trial` of bit count `bit_count` from scratch. The same
    /// arguments always reproduce the same result.
    pub fn run_trial(
        &self,
        settings: &CampaignSettings,
        bit_count: usize,
        trial: usize,
    ) -> Result<TrialResult, CampaignError> {
        let mut rng =
            ChaCha8Rng::from_seed(trial_seed(settings.master_seed, bit_count, trial));
        let fault = if bit_count == 0 {
            None
        } else {
            let mut filter = settings.filter;
            filter.count = bit_count;
            let spec =
                generate_fault(&mut rng, settings.kind, &filter, self.config, &self.schedule)?;
            Some(ActiveFault::resolve(spec, self.config, &self.schedule)?)
        };
        let mut wrong = 0usize;
        for item in self.dataset.items() {
            let outcome = run_inference(
                self.config,
                self.archive,
                &item.input,
                fault.as_ref(),
                settings.mitigation,
                false,
            )?;
            if outcome.class != item.label {
                wrong += 1;
            }
        }
        Ok(TrialResult {
            bit_count,
            trial,
            error_pct: wrong as f64 / self.dataset.items().len() as f64 * 100.0,
            fault: fault.map(|f| f.spec().clone()),
        })
    }

    /// The sweep, one thread, no feature requirements.
    pub fn run_campaign_sequential(
        &self,
        settings: &CampaignSettings,
    ) -> Result<CampaignResult, CampaignError> {
        let jobs = job_list(settings)?;
        let trials = jobs
            .iter()
            .map(|&(k, t)| self.run_trial(settings, k, t))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(aggregate(settings, trials))
    }

    /// The sweep, fanned out across worker threads (`FAULTLINE_THREADS`
    /// caps them; unset means all cores). Bit-identical to the sequential
    /// path because trials are seeded independently of scheduling.
    #[cfg(feature = "parallel")]
    pub fn run_campaign(
        &self,
        settings: &CampaignSettings,
    ) -> Result<CampaignResult, CampaignError> {
        use rayon::prelude::*;

        let jobs = job_list(settings)?;
        let run = || {
            jobs.par_iter()
                .map(|&(k, t)| self.run_trial(settings, k, t))
                .collect::<Result<Vec<_>, _>>()
        };
        let trials = match crate::configured_threads() {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CampaignError::Pool(e.to_string()))?
                .install(run),
            None => run(),
        }?;
        Ok(aggregate(settings, trials))
    }

    /// Without the `parallel` feature the one implementation serves both
    /// names.
    #[cfg(not(feature = "parallel"))]
    pub fn run_campaign(
        &self,
        settings: &CampaignSettings,
    ) -> Result<CampaignResult, CampaignError> {
        self.run_campaign_sequential(settings)
    }
}

fn job_list(settings: &CampaignSettings) -> Result<Vec<(usize, usize)>, CampaignError> {
    if settings.trials == 0 {
        return Err(CampaignError::NoTrials);
    }
    if settings.bit_counts.is_empty() {
        return Err(CampaignError::NoBitCounts);
    }
    Ok(settings
        .bit_counts
        .iter()
        .flat_map(|&k| (0..settings.trials).map(move |t| (k, t)))
        .collect())
}

fn aggregate(settings: &CampaignSettings, trials: Vec<TrialResult>) -> CampaignResult {
    let points = trials
        .chunks(settings.trials)
        .map(|chunk| {
            let errors: Vec<f64> = chunk.iter().map(|t| t.error_pct).collect();
            let running_median =
                (0..errors.len()).map(|t| median(&errors[..=t])).collect();
            CampaignPoint {
                bit_count: chunk[0].bit_count,
                median: median(&errors),
                mean: mean(&errors),
                stddev: sample_stddev(&errors),
                running_median,
                errors,
            }
        })
        .collect();
    CampaignResult {
        master_seed: settings.master_seed,
        trials: settings.trials,
        kind: settings.kind,
        mitigation: settings.mitigation,
        points,
    }
}

/// Median with the even-count midpoint convention.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaN errors"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_stddev(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    let var =
        values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64;
    var.sqrt()
}

/// How a point's running median approaches its final value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub bit_count: usize,
    pub final_median: f64,
    /// First trial index from which the running median stays within
    /// `tolerance` of the final median for the rest of the campaign, if
    /// it ever settles.
    pub settled_after: Option<usize>,
    /// Sample standard deviation of the running median over the trailing
    /// half of the trials — how much the headline was still moving.
    pub trailing_stddev: f64,
}

pub fn convergence_report(
    point: &CampaignPoint,
    tolerance: f64,
) -> Result<ConvergenceReport, CampaignError> {
    let n = point.running_median.len();
    if n < 2 {
        return Err(CampaignError::TooFewTrials(n));
    }
    let settled_after = point
        .running_median
        .iter()
        .rposition(|m| (m - point.median).abs() > tolerance)
        .map_or(Some(0), |last_bad| {
            (last_bad + 1 < n).then_some(last_bad + 1)
        });
    Ok(ConvergenceReport {
        bit_count: point.bit_count,
        final_median: point.median,
        settled_after,
        trailing_stddev: sample_stddev(&point.running_median[n / 2..]),
    })
}

/// One axis of the canned experiment matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetExperiment {
    pub name: &'static str,
    pub variants: Vec<PresetVariant>,
}

/// One point on an axis. Only the fields the axis varies are set; the
/// caller fills everything else from its base configuration. Variants
/// setting `activation` or dataset fields need a retrain.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PresetVariant {
    pub label: String,
    pub kind: Option<FaultKind>,
    pub layer: Option<usize>,
    pub component: Option<Component>,
    /// Largest sensible fault-bit count for the variant (component axes
    /// cap the sweep at the component's width).
    pub max_bits: Option<usize>,
    pub activation: Option<Activation>,
    pub num_pes: Option<usize>,
    pub dataset_seed: Option<u64>,
    pub center_scale: Option<f64>,
}

/// The experiment matrix: one preset per studied axis, expanded against a
/// concrete accelerator (layer count, component widths) and a PE-count
/// list.
pub fn preset_experiments(
    config: &AcceleratorConfig,
    pe_list: &[usize],
) -> Vec<PresetExperiment> {
    let variant = |label: String| PresetVariant { label, ..PresetVariant::default() };

    let fault_kind = PresetExperiment {
        name: "fault-kind",
        variants: FaultKind::ALL
            .iter()
            .map(|&kind| PresetVariant { kind: Some(kind), ..variant(kind.to_string()) })
            .collect(),
    };

    let nn_data = PresetExperiment {
        name: "nn-data",
        variants: (0..3)
            .map(|i| PresetVariant {
                dataset_seed: Some(1000 + i),
                ..variant(format!("data-{i}"))
            })
            .collect(),
    };

    let nn_layer = PresetExperiment {
        name: "nn-layer",
        variants: (0..config.topology().stage_count())
            .map(|j| PresetVariant { layer: Some(j), ..variant(format!("layer-{j}")) })
            .collect(),
    };

    let activation = PresetExperiment {
        name: "activation",
        variants: [Activation::Logsig, Activation::Satlin]
            .iter()
            .map(|&a| PresetVariant {
                activation: Some(a),
                ..variant(format!("{a:?}").to_lowercase())
            })
            .collect(),
    };

    // Component sweeps cap k at the widest instance of the component
    // across the three register classes; classes whose instance is
    // narrower simply fall out of the draw at larger k.
    let component_width = |c: Component| {
        crate::accel::RegisterClass::ALL
            .iter()
            .filter_map(|&class| config.uniform_class_format(class))
            .map(|f| c.bit_range(f).len())
            .max()
            .unwrap_or(0)
    };
    let fp_component = PresetExperiment {
        name: "fp-component",
        variants: Component::ALL
            .iter()
            .filter(|&&c| component_width(c) > 0)
            .map(|&c| PresetVariant {
                component: Some(c),
                max_bits: Some(component_width(c)),
                ..variant(c.to_string())
            })
            .collect(),
    };

    let pe_count = PresetExperiment {
        name: "pe-count",
        variants: pe_list
            .iter()
            .map(|&p| PresetVariant { num_pes: Some(p), ..variant(format!("p{p}")) })
            .collect(),
    };

    let data_spread = PresetExperiment {
        name: "data-spread",
        variants: [0.4, 0.7, 1.0]
            .iter()
            .map(|&s| PresetVariant {
                center_scale: Some(s),
                ..variant(format!("spread-{s}"))
            })
            .collect(),
    };

    vec![fault_kind, nn_data, nn_layer, activation, fp_component, pe_count, data_spread]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fxp::FixedPointFormat;
    use crate::nn::{FloatWeights, FormatPlan, NetworkTopology, RefMode};
    use rand::Rng;

    fn fmt(s: u8, d: u8, f: u8) -> FixedPointFormat {
        FixedPointFormat::new(s, d, f).unwrap()
    }

    fn fixture() -> (AcceleratorConfig, WeightArchive, Dataset) {
        let sizes = vec![6usize, 4, 3];
        let topology = NetworkTopology::new(sizes.clone(), Activation::Logsig).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let stages = sizes.len() - 1;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for j in 0..stages {
            weights.push(
                (0..sizes[j] * sizes[j + 1])
                    .map(|_| rng.gen_range(-1.0..1.0))
                    .collect::<Vec<f64>>(),
            );
            biases.push((0..sizes[j + 1]).map(|_| rng.gen_range(-0.5..0.5)).collect());
        }
        let plan = FormatPlan {
            ir: vec![fmt(0, 0, 16); stages + 1],
            wr: vec![fmt(1, 4, 11); stages],
            imr: vec![fmt(1, 6, 16); stages],
        };
        let archive =
            WeightArchive::from_float(&FloatWeights { topology, weights, biases }, plan)
                .unwrap();
        let config = AcceleratorConfig::from_archive(&archive, 4).unwrap();
        let dataset = Dataset::blobs(6, 3, 18, 0.8, 0.1, 5).unwrap();
        (config, archive, dataset)
    }

    #[test]
    fn trial_seeds_separate_every_coordinate() {
        let base = trial_seed(1, 2, 3);
        assert_eq!(base, trial_seed(1, 2, 3));
        assert_ne!(base, trial_seed(2, 2, 3));
        assert_ne!(base, trial_seed(1, 3, 3));
        assert_ne!(base, trial_seed(1, 2, 4));
    }

    #[test]
    fn baseline_point_is_the_fault_free_error() {
        let (config, archive, dataset) = fixture();
        let campaign = Campaign::new(&config, &archive, &dataset);
        let settings = CampaignSettings {
            master_seed: 7,
            trials: 5,
            bit_counts: vec![0],
            kind: FaultKind::StuckAt1,
            filter: FaultFilter::any(1),
            mitigation: Technique::None,
        };
        let result = campaign.run_campaign_sequential(&settings).unwrap();
        let expected =
            crate::nn::dataset_error(&archive, &dataset, RefMode::Quantized).unwrap();
        let point = &result.points[0];
        assert!(point.errors.iter().all(|&e| e == expected));
        assert_eq!(point.median, expected);
        assert_eq!(point.stddev, 0.0);
    }

    #[test]
    fn trials_reproduce_in_isolation() {
        let (config, archive, dataset) = fixture();
        let campaign = Campaign::new(&config, &archive, &dataset);
        let settings = CampaignSettings {
            master_seed: 11,
            trials: 6,
            bit_counts: vec![0, 1, 2],
            kind: FaultKind::Transient,
            filter: FaultFilter::any(1),
            mitigation: Technique::None,
        };
        let result = campaign.run_campaign_sequential(&settings).unwrap();
        // Any single (k, trial) rerun standalone matches the sweep.
        let replay = campaign.run_trial(&settings, 2, 4).unwrap();
        assert_eq!(replay.error_pct, result.point(2).unwrap().errors[4]);
        assert!(replay.fault.is_some());
        // And the point order in the sweep doesn't contaminate anything.
        let shuffled = CampaignSettings { bit_counts: vec![2, 0, 1], ..settings.clone() };
        let reshuffled = campaign.run_campaign_sequential(&shuffled).unwrap();
        for k in [0usize, 1, 2] {
            assert_eq!(result.point(k).unwrap(), reshuffled.point(k).unwrap());
        }
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_and_sequential_agree_bit_for_bit() {
        let (config, archive, dataset) = fixture();
        let campaign = Campaign::new(&config, &archive, &dataset);
        let settings = CampaignSettings {
            master_seed: 13,
            trials: 8,
            bit_counts: vec![0, 1, 3],
            kind: FaultKind::StuckAt0,
            filter: FaultFilter::any(1),
            mitigation: Technique::Hybrid,
        };
        let par = campaign.run_campaign(&settings).unwrap();
        let seq = campaign.run_campaign_sequential(&settings).unwrap();
        assert_eq!(par, seq);
    }

    #[test]
    fn statistics_match_hand_values() {
        assert_eq!(median(&[3.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 3.0]), 3.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
        assert_eq!(sample_stddev(&[5.0]), 0.0);
        // Hand value: values 2,4,4,4,5,5,7,9 have mean 5, sample var 32/7.
        let s = sample_stddev(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert!((s - (32.0f64 / 7.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn running_median_tracks_prefixes() {
        let errors = [10.0, 0.0, 20.0, 0.0];
        let running: Vec<f64> = (0..errors.len()).map(|t| median(&errors[..=t])).collect();
        assert_eq!(running, vec![10.0, 5.0, 10.0, 5.0]);
    }

    #[test]
    fn convergence_report_flags_the_settle_point() {
        let point = CampaignPoint {
            bit_count: 1,
            errors: vec![],
            median: 10.0,
            mean: 0.0,
            stddev: 0.0,
            running_median: vec![40.0, 25.0, 10.5, 10.0, 10.0],
        };
        let report = convergence_report(&point, 1.0).unwrap();
        assert_eq!(report.settled_after, Some(2)); // 10.5 is already within 1.0
        assert_eq!(report.final_median, 10.0);

        let never = CampaignPoint {
            running_median: vec![40.0, 25.0, 10.0, 30.0],
            ..point.clone()
        };
        assert_eq!(convergence_report(&never, 1.0).unwrap().settled_after, None);

        let instant = CampaignPoint {
            running_median: vec![10.0, 10.0, 10.0],
            ..point.clone()
        };
        assert_eq!(convergence_report(&instant, 1.0).unwrap().settled_after, Some(0));

        let single = CampaignPoint { running_median: vec![10.0], ..point };
        assert!(matches!(
            convergence_report(&single, 1.0),
            Err(CampaignError::TooFewTrials(1))
        ));
    }

    #[test]
    fn mitigated_trials_share_fault_draws_with_unmitigated() {
        // The fault sequence depends only on (seed, k, trial); mitigation
        // changes outcomes, never which faults are drawn.
        let (config, archive, dataset) = fixture();
        let campaign = Campaign::new(&config, &archive, &dataset);
        let base = CampaignSettings {
            master_seed: 21,
            trials: 4,
            bit_counts: vec![2],
            kind: FaultKind::StuckAt1,
            filter: FaultFilter::any(1),
            mitigation: Technique::None,
        };
        let masked = CampaignSettings { mitigation: Technique::Word, ..base.clone() };
        for t in 0..4 {
            let a = campaign.run_trial(&base, 2, t).unwrap();
            let b = campaign.run_trial(&masked, 2, t).unwrap();
            assert_eq!(a.fault, b.fault);
        }
    }

    #[test]
    fn empty_settings_are_rejected() {
        let (config, archive, dataset) = fixture();
        let campaign = Campaign::new(&config, &archive, &dataset);
        let mut settings = CampaignSettings::sweep(1, 0, 2, FaultKind::StuckAt0);
        assert!(matches!(
            campaign.run_campaign_sequential(&settings),
            Err(CampaignError::NoTrials)
        ));
        settings.trials = 1;
        settings.bit_counts.clear();
        assert!(matches!(
            campaign.run_campaign_sequential(&settings),
            Err(CampaignError::NoBitCounts)
        ));
    }

    #[test]
    fn preset_matrix_covers_the_seven_axes() {
        let (config, _, _) = fixture();
        let presets = preset_experiments(&config, &[64, 256, 1024]);
        let names: Vec<&str> = presets.iter().map(|p| p.name).collect();
        assert_eq!(
            names,
            [
                "fault-kind",
                "nn-data",
                "nn-layer",
                "activation",
                "fp-component",
                "pe-count",
                "data-spread"
            ]
        );
        for p in &presets {
            assert!(!p.variants.is_empty(), "{} has no variants", p.name);
            let mut labels: Vec<&str> =
                p.variants.iter().map(|v| v.label.as_str()).collect();
            labels.sort();
            labels.dedup();
            assert_eq!(labels.len(), p.variants.len(), "{} labels collide", p.name);
        }
        // Axis-specific expansions.
        assert_eq!(presets[2].variants.len(), config.topology().stage_count());
        let comp = &presets[4].variants;
        let max_bits = |label: &str| {
            comp.iter().find(|v| v.label == label).unwrap().max_bits.unwrap()
        };
        // IR s0.d0.f16 / WR s1.d4.f11 / IMR s1.d6.f16: widest sign 1,
        // widest digit run 6, widest fraction run 16.
        assert_eq!(max_bits("sign"), 1);
        assert_eq!(max_bits("digit"), 6);
        assert_eq!(max_bits("fraction"), 16);
        let pes: Vec<usize> =
            presets[5].variants.iter().map(|v| v.num_pes.unwrap()).collect();
        assert_eq!(pes, [64, 256, 1024]);
    }
}

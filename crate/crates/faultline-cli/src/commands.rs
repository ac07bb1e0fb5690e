//! The five subcommands. Every command writes its outputs plus a
//! `run_manifest.json` into the output directory, and identical
//! invocations produce byte-identical files — nothing time- or
//! machine-dependent goes into any of them.

use crate::config::{self, CampaignSection, FileConfig};
use crate::context::{self, Context, Overrides};
use anyhow::{Context as _, Result};
use faultline::accel::{cycles_for_inference, run_inference, RegisterClass, RegisterTrace};
use faultline::analysis;
use faultline::campaign::{
    convergence_report, preset_experiments, Campaign, CampaignResult, CampaignSettings,
    ConvergenceReport, PresetVariant,
};
use faultline::faults::FaultFilter;
use faultline::mitigate::{sign_msb_agreement, Technique};
use faultline::nn::{dataset_error, RefMode};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt;
use std::fs;
use std::path::Path;

/// The tool was invoked wrongly (unknown preset, say) — distinct from a
/// runtime failure so `main` can exit 2 the way clap does for bad flags.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// What `--seed` means for the command that received it.
enum SeedUse {
    Training,
    Master,
    Dataset,
}

/// Applies the seed override and reports the effective value recorded in
/// the manifest (none when a file-backed dataset leaves `infer`/`analyze`
/// without a seed to override).
fn apply_seed(config: &mut FileConfig, seed: Option<u64>, use_: SeedUse) -> Option<u64> {
    match use_ {
        SeedUse::Training => {
            if let Some(s) = seed {
                config.train.seed = s;
            }
            Some(config.train.seed)
        }
        SeedUse::Master => {
            if let Some(s) = seed {
                config.campaign.master_seed = s;
            }
            Some(config.campaign.master_seed)
        }
        SeedUse::Dataset => match &config.dataset {
            config::DatasetSection::Blobs { seed: base, .. } => Some(seed.unwrap_or(*base)),
            _ => None,
        },
    }
}

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_path: String,
    /// SHA-256 of the config file bytes, so a result can be matched to the
    /// exact configuration that produced it.
    config_sha256: String,
    seed: Option<u64>,
    out_dir: String,
    tool_version: &'a str,
}

fn write_manifest(
    out: &Path,
    command: &str,
    config_path: &Path,
    config_bytes: &[u8],
    seed: Option<u64>,
) -> Result<()> {
    let manifest = RunManifest {
        command,
        config_path: config_path.display().to_string(),
        config_sha256: hex(&Sha256::digest(config_bytes)),
        seed,
        out_dir: out.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION"),
    };
    write_json(&out.join("run_manifest.json"), &manifest)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn layer_string(sizes: &[usize]) -> String {
    sizes.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("-")
}

/// `train`: fit the float network, calibrate fixed-point formats against
/// the training split, and save the quantized archive into `--out`.
pub fn cmd_train(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let (mut config, bytes) = config::load(config_path)?;
    let seed = apply_seed(&mut config, seed, SeedUse::Training);
    let (train_set, eval_set, weights, archive) =
        context::train_archive(&config, config_path, Overrides::default())?;
    ensure_dir(out)?;
    archive.save(out)?;
    write_manifest(out, "train", config_path, &bytes, seed)?;
    let float_err = weights.error_pct(&eval_set)?;
    let quant_err = dataset_error(&archive, &eval_set, RefMode::Quantized)?;
    println!(
        "trained {} on {} items; eval error {:.2}% float, {:.2}% quantized",
        layer_string(archive.topology().layer_sizes()),
        train_set.items().len(),
        float_err,
        quant_err,
    );
    println!("archive saved to {}", out.display());
    Ok(())
}

/// `infer`: run the whole evaluation split through the simulated
/// accelerator, fault-free, and report the error rate. `--trace` also
/// dumps the first item's register trace as CSV.
pub fn cmd_infer(config_path: &Path, seed: Option<u64>, out: &Path, trace: bool) -> Result<()> {
    let (mut config, bytes) = config::load(config_path)?;
    let override_seed = dataset_override(&config, seed)?;
    let seed = apply_seed(&mut config, seed, SeedUse::Dataset);
    let ctx = context::build(
        &config,
        config_path,
        Overrides { dataset_seed: override_seed, ..Overrides::default() },
    )?;
    ensure_dir(out)?;

    let mut wrong = 0usize;
    let mut wrap_events = 0u64;
    let mut trace_csv = None;
    for (i, item) in ctx.eval_set.items().iter().enumerate() {
        let outcome = run_inference(
            &ctx.accel,
            &ctx.archive,
            &item.input,
            None,
            Technique::None,
            trace && i == 0,
        )?;
        if outcome.class != item.label {
            wrong += 1;
        }
        wrap_events += outcome.wrap_events;
        if let Some(t) = outcome.trace {
            let mut buf = Vec::new();
            t.write_csv(&mut buf)?;
            trace_csv = Some(String::from_utf8(buf).expect("trace CSV is ASCII"));
        }
    }
    let items = ctx.eval_set.items().len();
    let error_pct = wrong as f64 / items as f64 * 100.0;

    #[derive(Serialize)]
    struct InferReport {
        items: usize,
        error_pct: f64,
        wrap_events: u64,
        cycles_per_item: u64,
    }
    write_json(
        &out.join("result.json"),
        &InferReport {
            items,
            error_pct,
            wrap_events,
            cycles_per_item: cycles_for_inference(&ctx.accel),
        },
    )?;
    if let Some(csv) = trace_csv {
        write_text(&out.join("trace.csv"), &csv)?;
    }
    write_manifest(out, "infer", config_path, &bytes, seed)?;
    println!(
        "{items} items in {} cycles each: error {error_pct:.2}%, {wrap_events} wrap events",
        cycles_for_inference(&ctx.accel)
    );
    Ok(())
}

/// For `infer`/`analyze`, `--seed` re-seeds a synthetic dataset (which also
/// retrains the network on the re-seeded training split). It has nothing to
/// override on a file-backed dataset, so reject it there rather than
/// silently ignoring it.
fn dataset_override(config: &FileConfig, seed: Option<u64>) -> Result<Option<u64>> {
    match (seed, matches!(config.dataset, config::DatasetSection::Blobs { .. })) {
        (Some(_), false) => Err(UsageError(
            "--seed re-seeds a synthetic dataset; this config uses a file-backed one".into(),
        )
        .into()),
        (seed, _) => Ok(seed),
    }
}

/// Campaign settings out of the config's `[campaign]` section.
fn base_settings(section: &CampaignSection) -> CampaignSettings {
    CampaignSettings {
        master_seed: section.master_seed,
        trials: section.trials,
        bit_counts: section.bit_counts.clone(),
        kind: section.kind,
        filter: FaultFilter {
            class: section.class,
            layer: section.layer,
            component: section.component,
            count: 1,
        },
        mitigation: section.mitigation,
    }
}

/// Runs one campaign and writes its four files into `out`:
/// `result.json` (everything), `result.csv` (`k,median,stddev`),
/// `convergence.csv` (the running-median series per point), and
/// `convergence.json` (settling summaries, tolerance = `error_margin`).
fn run_and_write(
    ctx: &Context,
    settings: &CampaignSettings,
    error_margin: f64,
    out: &Path,
) -> Result<CampaignResult> {
    ensure_dir(out)?;
    let campaign = Campaign::new(&ctx.accel, &ctx.archive, &ctx.eval_set);
    let result = campaign.run_campaign(settings)?;
    write_json(&out.join("result.json"), &result)?;
    write_text(&out.join("result.csv"), &analysis::sweep_table(&result))?;

    let mut series = String::from("k,trial,running_median\n");
    for point in &result.points {
        for (trial, m) in point.running_median.iter().enumerate() {
            series.push_str(&format!("{},{trial},{m}\n", point.bit_count));
        }
    }
    write_text(&out.join("convergence.csv"), &series)?;

    let reports: Vec<ConvergenceReport> = result
        .points
        .iter()
        .filter(|p| p.errors.len() >= 2)
        .map(|p| convergence_report(p, error_margin))
        .collect::<Result<_, _>>()?;
    write_json(&out.join("convergence.json"), &reports)?;
    Ok(result)
}

fn medians_line(result: &CampaignResult) -> String {
    result
        .points
        .iter()
        .map(|p| format!("k={} {:.2}%", p.bit_count, p.median))
        .collect::<Vec<_>>()
        .join(", ")
}

/// `campaign`: the seeded fault-injection sweep. Without `--preset`, one
/// campaign straight from the config; with it, every variant of the named
/// experiment axis lands in `out/<preset>/<variant>/`.
pub fn cmd_campaign(
    config_path: &Path,
    seed: Option<u64>,
    trials: Option<usize>,
    out: &Path,
    preset: Option<&str>,
) -> Result<()> {
    let (mut config, bytes) = config::load(config_path)?;
    let seed = apply_seed(&mut config, seed, SeedUse::Master);
    if let Some(t) = trials {
        config.campaign.trials = t;
    }
    let base_ctx = context::build(&config, config_path, Overrides::default())?;

    match preset {
        None => {
            let settings = base_settings(&config.campaign);
            let result =
                run_and_write(&base_ctx, &settings, config.campaign.error_margin, out)?;
            write_manifest(out, "campaign", config_path, &bytes, seed)?;
            println!(
                "campaign done, {} trials per point: {}",
                settings.trials,
                medians_line(&result)
            );
        }
        Some(name) => {
            let experiments = preset_experiments(&base_ctx.accel, &config.campaign.pe_list);
            let Some(experiment) = experiments.iter().find(|e| e.name == name) else {
                let known =
                    experiments.iter().map(|e| e.name).collect::<Vec<_>>().join(", ");
                return Err(UsageError(format!(
                    "unknown preset `{name}` (available: {known})"
                ))
                .into());
            };
            for variant in &experiment.variants {
                let ctx = variant_context(&config, config_path, &base_ctx, variant)?;
                let mut settings = base_settings(&config.campaign);
                if let Some(kind) = variant.kind {
                    settings.kind = kind;
                }
                if let Some(layer) = variant.layer {
                    settings.filter.layer = Some(layer);
                }
                if let Some(component) = variant.component {
                    settings.filter.component = Some(component);
                }
                if let Some(max) = variant.max_bits {
                    settings.bit_counts = (0..=max).collect();
                }
                let dir = out.join(experiment.name).join(&variant.label);
                let result =
                    run_and_write(ctx.as_ref(), &settings, config.campaign.error_margin, &dir)?;
                println!("{}/{}: {}", experiment.name, variant.label, medians_line(&result));
            }
            write_manifest(out, "campaign", config_path, &bytes, seed)?;
        }
    }
    Ok(())
}

/// Either the base context or a freshly built one when the variant bends
/// the network, the data, or the PE count.
fn variant_context<'a>(
    config: &FileConfig,
    config_path: &Path,
    base: &'a Context,
    variant: &PresetVariant,
) -> Result<MaybeOwned<'a>> {
    let overrides = Overrides {
        activation: variant.activation,
        dataset_seed: variant.dataset_seed,
        center_scale: variant.center_scale,
        num_pes: variant.num_pes,
    };
    if overrides.activation.is_none()
        && overrides.dataset_seed.is_none()
        && overrides.center_scale.is_none()
        && overrides.num_pes.is_none()
    {
        Ok(MaybeOwned::Borrowed(base))
    } else {
        Ok(MaybeOwned::Owned(Box::new(context::build(config, config_path, overrides)?)))
    }
}

enum MaybeOwned<'a> {
    Borrowed(&'a Context),
    Owned(Box<Context>),
}

impl MaybeOwned<'_> {
    fn as_ref(&self) -> &Context {
        match self {
            MaybeOwned::Borrowed(c) => c,
            MaybeOwned::Owned(c) => c,
        }
    }
}

/// `mitigate-eval`: the same seeded campaign under every technique. The
/// fault draws depend only on the seeds, so the four sweeps see identical
/// faults and the comparison isolates the mitigation.
pub fn cmd_mitigate_eval(
    config_path: &Path,
    seed: Option<u64>,
    trials: Option<usize>,
    out: &Path,
) -> Result<()> {
    let (mut config, bytes) = config::load(config_path)?;
    let seed = apply_seed(&mut config, seed, SeedUse::Master);
    if let Some(t) = trials {
        config.campaign.trials = t;
    }
    let ctx = context::build(&config, config_path, Overrides::default())?;
    let campaign = Campaign::new(&ctx.accel, &ctx.archive, &ctx.eval_set);

    let mut results = Vec::new();
    for technique in Technique::ALL {
        let mut settings = base_settings(&config.campaign);
        settings.mitigation = technique;
        results.push(campaign.run_campaign(&settings)?);
    }
    let [none, word, bit, hybrid]: [CampaignResult; 4] =
        results.try_into().expect("one result per technique");

    ensure_dir(out)?;
    let mut csv = String::from(
        "k,none,word,bit,hybrid,word_gain_pct,bit_gain_pct,hybrid_gain_pct\n",
    );
    for (i, point) in none.points.iter().enumerate() {
        let (n, w, b, h) = (
            point.median,
            word.points[i].median,
            bit.points[i].median,
            hybrid.points[i].median,
        );
        csv.push_str(&format!(
            "{},{n},{w},{b},{h},{},{},{}\n",
            point.bit_count,
            gain(n, w),
            gain(n, b),
            gain(n, h),
        ));
    }
    write_text(&out.join("comparison.csv"), &csv)?;

    #[derive(Serialize)]
    struct MitigationComparison {
        none: CampaignResult,
        word: CampaignResult,
        bit: CampaignResult,
        hybrid: CampaignResult,
    }
    let comparison = MitigationComparison { none, word, bit, hybrid };
    write_json(&out.join("comparison.json"), &comparison)?;
    write_manifest(out, "mitigate-eval", config_path, &bytes, seed)?;
    println!("mitigate-eval done: none {}", medians_line(&comparison.none));
    println!("               hybrid {}", medians_line(&comparison.hybrid));
    Ok(())
}

/// Median error removed by a technique, as a percentage of the unmitigated
/// median; blank when the unmitigated median is already zero.
fn gain(none: f64, mitigated: f64) -> String {
    if none == 0.0 {
        String::new()
    } else {
        format!("{}", (none - mitigated) / none * 100.0)
    }
}

/// `analyze`: fault-free traces over the evaluation split, reduced to the
/// bit-sparsity report and the sign/MSB agreement rates that motivate the
/// masking designs. Agreement is `null` for unsigned register formats.
pub fn cmd_analyze(config_path: &Path, seed: Option<u64>, out: &Path) -> Result<()> {
    let (mut config, bytes) = config::load(config_path)?;
    let override_seed = dataset_override(&config, seed)?;
    let seed = apply_seed(&mut config, seed, SeedUse::Dataset);
    let ctx = context::build(
        &config,
        config_path,
        Overrides { dataset_seed: override_seed, ..Overrides::default() },
    )?;

    let mut pooled = RegisterTrace::default();
    for item in ctx.eval_set.items() {
        let outcome = run_inference(
            &ctx.accel,
            &ctx.archive,
            &item.input,
            None,
            Technique::None,
            true,
        )?;
        pooled.concat(outcome.trace.as_ref().expect("trace was requested"));
    }
    let sparsity = analysis::sparsity(&pooled)?;

    #[derive(Serialize)]
    struct AgreementReport {
        wr_sign_msb: Option<f64>,
        imr_sign_msb: Option<f64>,
    }
    let agreement = AgreementReport {
        wr_sign_msb: sign_msb_agreement(pooled.class_values(RegisterClass::Wr)).ok(),
        imr_sign_msb: sign_msb_agreement(pooled.class_values(RegisterClass::Imr)).ok(),
    };

    ensure_dir(out)?;
    write_json(&out.join("sparsity.json"), &sparsity)?;
    write_json(&out.join("agreement.json"), &agreement)?;
    write_manifest(out, "analyze", config_path, &bytes, seed)?;

    let ratio = |stats: faultline::analysis::ClassBitStats| match stats.zero_one_ratio() {
        Some(r) => format!("{r:.2}"),
        None => "inf".into(),
    };
    println!(
        "sparsity over {} items: IR {} zeros/one, WR {}, IMR {}",
        ctx.eval_set.items().len(),
        ratio(sparsity.ir),
        ratio(sparsity.wr),
        ratio(sparsity.imr),
    );
    if let (Some(wr), Some(imr)) = (agreement.wr_sign_msb, agreement.imr_sign_msb) {
        println!("sign/MSB agreement: WR {:.1}%, IMR {:.1}%", wr * 100.0, imr * 100.0);
    }
    Ok(())
}

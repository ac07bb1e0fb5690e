//! The release gate: twelve numbered checks covering the exact cycle and
//! storage formulas, zero-fault and exhaustive-fault oracle equivalence,
//! the fault-campaign orderings, mitigation behavior, trace statistics,
//! convergence, CLI byte-determinism, and the documented six-layer
//! cycle-count discrepancy.
//!
//! Heavy fixtures (trained nets, 1000-trial campaigns) are lazily built
//! once and shared; run with `-- --nocapture` to see one PASS line per
//! check. Everything is seeded, so a failure is a behavior change, never
//! noise.

mod oracle;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::LazyLock;

use faultline::accel::{
    cycles_for_inference, run_inference, total_fault_bits, AcceleratorConfig, CycleSchedule,
    RegisterClass, RegisterTrace,
};
use faultline::campaign::{convergence_report, Campaign, CampaignResult, CampaignSettings};
use faultline::faults::{ActiveFault, Component, FaultFilter, FaultKind, FaultScope, FaultSpec};
use faultline::fxp::FixedPointFormat;
use faultline::mitigate::{sign_msb_agreement, Technique};
use faultline::nn::{
    calibrate, classify_reference, train, Activation, CalibrationOptions, Dataset, FormatPlan,
    NetworkTopology, RefMode, TrainConfig, WeightArchive,
};
use oracle::ReplayFault;
use tempfile::TempDir;

const TRIALS: usize = 1000;
const MASTER_SEED: u64 = 2024;
const TOLERANCE: f64 = 1.0;

fn fmt(s: u8, d: u8, f: u8) -> FixedPointFormat {
    FixedPointFormat::new(s, d, f).unwrap()
}

/// A 16-bit IR / 16-bit WR / 23-bit IMR plan for topologies that only need
/// cycle or storage arithmetic, not trained weights.
fn default_widths(stages: usize) -> FormatPlan {
    FormatPlan {
        ir: vec![fmt(0, 0, 16); stages + 1],
        wr: vec![fmt(1, 3, 12); stages],
        imr: vec![fmt(1, 6, 16); stages],
    }
}

fn config_for(layers: Vec<usize>, num_pes: usize) -> AcceleratorConfig {
    let plan = default_widths(layers.len() - 1);
    let topology = NetworkTopology::new(layers, Activation::Logsig).unwrap();
    AcceleratorConfig::new(topology, num_pes, plan).unwrap()
}

/// A trained net plus the dataset half training never saw.
struct Net {
    archive: WeightArchive,
    eval: Dataset,
    accel: AcceleratorConfig,
}

/// Trains on blob data: one seeded draw, first half for training, second
/// half for evaluation (same class centers, labels round-robin in both).
fn trained_net(
    layers: Vec<usize>,
    num_pes: usize,
    items_per_half: usize,
    center_scale: f64,
    spread: f64,
    dataset_seed: u64,
    training: TrainConfig,
) -> Net {
    let features = layers[0];
    let classes = *layers.last().unwrap();
    let full = Dataset::blobs(
        features,
        classes,
        2 * items_per_half,
        center_scale,
        spread,
        dataset_seed,
    )
    .unwrap();
    let train_set = Dataset::new(full.items()[..items_per_half].to_vec(), classes).unwrap();
    let eval = Dataset::new(full.items()[items_per_half..].to_vec(), classes).unwrap();
    let topology = NetworkTopology::new(layers, Activation::Logsig).unwrap();
    let weights = train(&topology, &train_set, &training).unwrap();
    let plan = calibrate(&weights, &train_set, &CalibrationOptions::default()).unwrap();
    let archive = WeightArchive::from_float(&weights, plan).unwrap();
    let accel = AcceleratorConfig::from_archive(&archive, num_pes).unwrap();
    Net { archive, eval, accel }
}

/// The desk-scale workhorse most checks run against: 12-8-3 on tight
/// three-class blobs, trained to a clean 0% split error, P = 16.
static DESK: LazyLock<Net> = LazyLock::new(|| {
    let training = TrainConfig { epochs: 400, learning_rate: 0.5, seed: 4 };
    trained_net(vec![12, 8, 3], 16, 48, 0.25, 0.04, 7, training)
});

/// Mid-sized net for the zero-fault equivalence sweep, P = 64.
static MID: LazyLock<Net> = LazyLock::new(|| {
    let training = TrainConfig { epochs: 250, learning_rate: 0.5, seed: 5 };
    trained_net(vec![64, 32, 10], 64, 80, 0.6, 0.1, 11, training)
});

/// Small enough to enumerate every possible single-bit fault, P = 2.
static TINY: LazyLock<Net> = LazyLock::new(|| {
    let training = TrainConfig { epochs: 300, learning_rate: 0.5, seed: 6 };
    trained_net(vec![8, 4, 2], 2, 16, 0.5, 0.08, 9, training)
});

fn sweep(kind: FaultKind, mitigation: Technique) -> CampaignSettings {
    CampaignSettings {
        master_seed: MASTER_SEED,
        trials: TRIALS,
        bit_counts: (0..=16).collect(),
        kind,
        filter: FaultFilter::any(1),
        mitigation,
    }
}

fn run(net: &Net, settings: &CampaignSettings) -> CampaignResult {
    Campaign::new(&net.accel, &net.archive, &net.eval).run_campaign(settings).unwrap()
}

/// The same sweep with the desk net's weights streamed over a different
/// lane count.
fn run_desk_at(num_pes: usize, kind: FaultKind) -> CampaignResult {
    let accel = AcceleratorConfig::from_archive(&DESK.archive, num_pes).unwrap();
    Campaign::new(&accel, &DESK.archive, &DESK.eval)
        .run_campaign(&sweep(kind, Technique::None))
        .unwrap()
}

static STUCK1: LazyLock<CampaignResult> =
    LazyLock::new(|| run(&DESK, &sweep(FaultKind::StuckAt1, Technique::None)));
static STUCK0: LazyLock<CampaignResult> =
    LazyLock::new(|| run(&DESK, &sweep(FaultKind::StuckAt0, Technique::None)));
static TRANSIENT: LazyLock<CampaignResult> =
    LazyLock::new(|| run(&DESK, &sweep(FaultKind::Transient, Technique::None)));

fn median_at(result: &CampaignResult, k: usize) -> f64 {
    result.point(k).unwrap().median
}

#[test]
fn criterion_01_cycle_formula_matches_published_counts() {
    assert_eq!(cycles_for_inference(&config_for(vec![784, 128, 10], 64)), 1588);
    assert_eq!(cycles_for_inference(&config_for(vec![4, 2, 1], 2)), 5);
    println!("criterion 01 PASS: 1588 cycles (784-128-10, P=64) and 5 cycles (4-2-1, P=2)");
}

#[test]
fn criterion_02_fault_site_count_matches_the_storage_sum() {
    let config = config_for(vec![784, 128, 10], 64);
    assert_eq!(total_fault_bits(&config), 4969);
    println!("criterion 02 PASS: 64*16 + 64*16 + 127*23 = 4969 fault-addressable bits");
}

#[test]
fn criterion_03_zero_fault_runs_match_the_flat_reference_on_every_item() {
    let mut checked = 0usize;
    for net in [&*DESK, &*MID, &*TINY] {
        for item in net.eval.items() {
            let got =
                run_inference(&net.accel, &net.archive, &item.input, None, Technique::None, false)
                    .unwrap();
            let want = classify_reference(&net.archive, &item.input, RefMode::Quantized).unwrap();
            assert_eq!(
                got.class,
                want,
                "engine and flat reference disagree on a clean run ({:?})",
                net.accel.topology().layer_sizes()
            );
            checked += 1;
        }
    }
    println!(
        "criterion 03 PASS: engine argmax equals the flat quantized reference on all {checked} items across 3 nets"
    );
}

#[test]
fn criterion_04_every_single_bit_fault_matches_the_brute_force_replay() {
    let net = &*TINY;
    let p = net.accel.num_pes();
    let schedule = CycleSchedule::new(&net.accel);
    let total_cycles = cycles_for_inference(&net.accel);
    let items: Vec<&[f64]> =
        net.eval.items().iter().take(3).map(|it| it.input.as_slice()).collect();

    // The replay must agree on clean runs before fault agreement means
    // anything.
    for input in &items {
        let clean =
            run_inference(&net.accel, &net.archive, input, None, Technique::None, false).unwrap();
        assert_eq!(clean.outputs, oracle::replay(&net.archive, p, input, None));
    }

    let compare = |spec: FaultSpec, replay_fault: &ReplayFault| {
        let active = ActiveFault::resolve(spec, &net.accel, &schedule).unwrap();
        for input in &items {
            let got = run_inference(
                &net.accel,
                &net.archive,
                input,
                Some(&active),
                Technique::None,
                false,
            )
            .unwrap();
            let want = oracle::replay(&net.archive, p, input, Some(replay_fault));
            assert_eq!(
                got.outputs,
                want,
                "divergence under {:?} {} index {} mask {:#x} cycles {:?}",
                replay_fault.kind,
                replay_fault.class,
                replay_fault.index,
                replay_fault.mask,
                replay_fault.active,
            );
        }
    };

    let mut faults = 0usize;
    for class in [RegisterClass::Ir, RegisterClass::Wr, RegisterClass::Imr] {
        let count = net.accel.register_count(class);
        let width = net.accel.register_width(class);
        for index in 0..count {
            for bit in 0..width {
                for kind in [FaultKind::StuckAt0, FaultKind::StuckAt1] {
                    compare(
                        FaultSpec {
                            kind,
                            class,
                            index: index as u32,
                            bits: vec![bit],
                            scope: FaultScope::WholeInference,
                            cycle: None,
                        },
                        &ReplayFault {
                            kind,
                            class,
                            index,
                            mask: 1 << bit,
                            active: 0..total_cycles,
                        },
                    );
                    faults += 1;
                }
                for cycle in 0..total_cycles {
                    compare(
                        FaultSpec {
                            kind: FaultKind::Transient,
                            class,
                            index: index as u32,
                            bits: vec![bit],
                            scope: FaultScope::WholeInference,
                            cycle: Some(cycle),
                        },
                        &ReplayFault {
                            kind: FaultKind::Transient,
                            class,
                            index,
                            mask: 1 << bit,
                            active: cycle..cycle + 1,
                        },
                    );
                    faults += 1;
                }
            }
        }
    }
    println!(
        "criterion 04 PASS: {faults} enumerated faults x {} inputs, all outputs bit-equal to the replay",
        items.len()
    );
}

#[test]
fn criterion_05_stuck_at_1_dominates_stuck_at_0_dominates_transient() {
    for k in 1..=16 {
        let sa1 = median_at(&STUCK1, k);
        let sa0 = median_at(&STUCK0, k);
        let tr = median_at(&TRANSIENT, k);
        assert!(sa1 >= sa0 - TOLERANCE, "k={k}: stuck-at-1 {sa1} < stuck-at-0 {sa0} - 1");
        assert!(sa1 >= tr - TOLERANCE, "k={k}: stuck-at-1 {sa1} < transient {tr} - 1");
        assert!(sa0 >= tr - TOLERANCE, "k={k}: stuck-at-0 {sa0} < transient {tr} - 1");
    }
    println!(
        "criterion 05 PASS: medians order stuck-at-1 >= stuck-at-0 >= transient at every k in 1..=16 (within 1 point)"
    );
}

#[test]
fn criterion_06_more_lanes_never_worsen_permanent_faults_and_transients_do_not_care() {
    for (kind, base) in [(FaultKind::StuckAt1, &STUCK1), (FaultKind::StuckAt0, &STUCK0)] {
        let p64 = run_desk_at(64, kind);
        let p256 = run_desk_at(256, kind);
        for k in 0..=16 {
            let m16 = median_at(base, k);
            let m64 = median_at(&p64, k);
            let m256 = median_at(&p256, k);
            assert!(m64 <= m16 + 1e-9, "{kind:?} k={k}: median rose from {m16} (P=16) to {m64} (P=64)");
            assert!(m256 <= m64 + 1e-9, "{kind:?} k={k}: median rose from {m64} (P=64) to {m256} (P=256)");
        }
    }
    for num_pes in [64, 256] {
        let result = run_desk_at(num_pes, FaultKind::Transient);
        for k in 0..=16 {
            let here = median_at(&result, k);
            let at16 = median_at(&TRANSIENT, k);
            assert!(
                (here - at16).abs() <= TOLERANCE,
                "transient k={k}: median {here} at P={num_pes} vs {at16} at P=16"
            );
        }
    }
    println!(
        "criterion 06 PASS: permanent medians non-increasing over P in {{16, 64, 256}}, transient medians within 1 point"
    );
}

#[test]
fn criterion_07_fault_impact_follows_positional_significance() {
    let mut medians = Vec::new();
    for component in [Component::Sign, Component::Digit, Component::Fraction] {
        let settings = CampaignSettings {
            master_seed: MASTER_SEED,
            trials: TRIALS,
            bit_counts: vec![1],
            kind: FaultKind::StuckAt1,
            filter: FaultFilter {
                class: None,
                layer: None,
                component: Some(component),
                count: 1,
            },
            mitigation: Technique::None,
        };
        medians.push(run(&DESK, &settings).points[0].median);
    }
    let [sign, digit, fraction] = medians[..] else { unreachable!() };
    assert!(sign >= digit - TOLERANCE, "sign {sign} < digit {digit} - 1");
    assert!(digit >= fraction - TOLERANCE, "digit {digit} < fraction {fraction} - 1");
    println!(
        "criterion 07 PASS: k=1 medians sign {sign:.1} >= digit {digit:.1} >= fraction {fraction:.1} (within 1 point)"
    );
}

#[test]
fn criterion_08_mitigation_orders_and_word_masking_flattens() {
    let word = run(&DESK, &sweep(FaultKind::StuckAt1, Technique::Word));
    let bit = run(&DESK, &sweep(FaultKind::StuckAt1, Technique::Bit));
    let hybrid = run(&DESK, &sweep(FaultKind::StuckAt1, Technique::Hybrid));
    for k in 1..=16 {
        let h = median_at(&hybrid, k);
        let b = median_at(&bit, k);
        let w = median_at(&word, k);
        assert!(h <= b + 1e-9, "k={k}: hybrid {h} above bit masking {b}");
        assert!(h <= w + 1e-9, "k={k}: hybrid {h} above word masking {w}");
    }
    let flat = median_at(&word, 1);
    for k in 2..=16 {
        assert_eq!(
            median_at(&word, k),
            flat,
            "word masking median moved between k=1 and k={k}"
        );
    }
    assert_eq!(
        median_at(&hybrid, 0),
        median_at(&STUCK1, 0),
        "hybrid with no faults must equal the unmitigated baseline"
    );
    println!(
        "criterion 08 PASS: hybrid <= bit and <= word at k=1..16, word masking flat at {flat:.1}, hybrid k=0 equals baseline"
    );
}

#[test]
fn criterion_09_sign_and_msb_agree_on_at_least_99_pct_of_latches() {
    let mut pooled = RegisterTrace::default();
    for item in DESK.eval.items() {
        let out =
            run_inference(&DESK.accel, &DESK.archive, &item.input, None, Technique::None, true)
                .unwrap();
        pooled.concat(&out.trace.unwrap());
    }
    let wr = sign_msb_agreement(pooled.class_values(RegisterClass::Wr)).unwrap();
    let imr = sign_msb_agreement(pooled.class_values(RegisterClass::Imr)).unwrap();
    assert!(wr >= 0.99, "WR sign/MSB agreement {wr:.5} below 0.99");
    assert!(imr >= 0.99, "IMR sign/MSB agreement {imr:.5} below 0.99");
    println!(
        "criterion 09 PASS: sign/MSB agreement WR {:.2}%, IMR {:.2}%",
        wr * 100.0,
        imr * 100.0
    );
}

#[test]
fn criterion_10_running_medians_settle_before_the_last_trial() {
    let mut worst = 0usize;
    for point in &STUCK1.points {
        assert_eq!(point.running_median.len(), TRIALS, "running-median series not emitted in full");
        let report = convergence_report(point, TOLERANCE).unwrap();
        let settled = report
            .settled_after
            .unwrap_or_else(|| panic!("k={} never settled within ±1 point", point.bit_count));
        assert!(settled < TRIALS, "k={}: settled only at the final trial", point.bit_count);
        worst = worst.max(settled);
    }
    println!(
        "criterion 10 PASS: all running medians settle within ±1 point of their final value (latest onset: trial {worst} of {TRIALS})"
    );
}

/// Collects every file under `dir` as relative path -> bytes.
fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn visit(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                visit(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    visit(dir, dir, &mut out);
    out
}

#[test]
fn criterion_11_every_command_reruns_byte_identical() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("run.toml");
    fs::write(
        &config,
        r#"
[topology]
layers = [6, 4, 3]
activation = "logsig"

[dataset]
kind = "blobs"
classes = 3
train_items = 24
eval_items = 12
center_scale = 0.7
spread = 0.1
seed = 7

[train]
epochs = 40
learning_rate = 0.5
seed = 3

[accelerator]
num_pes = 4

[campaign]
master_seed = 11
trials = 6
bit_counts = [0, 1, 2]
kind = "stuck_at_1"
pe_list = [2, 4]
"#,
    )
    .unwrap();

    let commands: &[&[&str]] = &[
        &["train"],
        &["infer", "--trace"],
        &["campaign"],
        &["mitigate-eval"],
        &["analyze"],
    ];
    // Identical invocations: same config, same out path, run twice with a
    // snapshot in between.
    let out_root = dir.path().join("out");
    let mut runs = Vec::new();
    for pass in 0..2 {
        for args in commands {
            let out_dir = out_root.join(args[0]);
            let status = Command::new(env!("CARGO_BIN_EXE_faultline"))
                .arg(args[0])
                .args(&args[1..])
                .arg("--config")
                .arg(&config)
                .arg("--out")
                .arg(&out_dir)
                .env_remove("FAULTLINE_THREADS")
                .status()
                .unwrap();
            assert!(status.success(), "{} failed on pass {pass}", args[0]);
        }
        runs.push(snapshot(&out_root));
        fs::remove_dir_all(&out_root).unwrap();
    }
    assert_eq!(runs[0].len(), runs[1].len());
    for (path, bytes) in &runs[0] {
        assert_eq!(
            Some(bytes),
            runs[1].get(path),
            "{path} differs between identical reruns"
        );
    }
    println!(
        "criterion 11 PASS: 5 commands rerun byte-identical across {} output files",
        runs[0].len()
    );
}

#[test]
fn criterion_12_six_layer_cycle_count_and_the_documented_discrepancy() {
    let config = config_for(vec![784, 1024, 512, 256, 128, 10], 64);
    assert_eq!(cycles_for_inference(&config), 23_316);
    let readme = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../README.md")).unwrap();
    assert!(
        readme.contains("23,316"),
        "README must state the six-layer schedule's 23,316-cycle count"
    );
    assert!(
        readme.contains("1,490,944"),
        "README must record the often-quoted 1,490,944 figure and why it differs"
    );
    println!(
        "criterion 12 PASS: six-layer schedule takes 23,316 cycles; README records the 1,490,944 discrepancy"
    );
}

//! Float-side reference model: network topology, activation functions,
//! golden float/quantized forward passes, and per-layer precision
//! calibration.
//!
//! The quantized reference here is the oracle the cycle-accurate engine is
//! tested against: it accumulates each neuron flat, which is bit-equal to
//! the engine's adder-tree order because fixed-point addition wraps (see
//! [`crate::fxp::add`]).

mod archive;
mod dataset;
mod train;

pub use archive::{ArchiveError, LayerParams, WeightArchive};
pub use dataset::{Dataset, DatasetError, DatasetItem};
pub use train::{train, TrainConfig};

use crate::fxp::{
    add, convert, multiply, quantize, to_real, FixedPointFormat, FixedPointValue,
};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("dimension mismatch: expected {expected} {what}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Divergence { epoch: u32 },
    #[error(
        "calibration overflow for {class} at layer {layer}: needs {needed} sign+digit bits \
         but the word is only {width} wide"
    )]
    CalibrationOverflow { class: &'static str, layer: usize, needed: u32, width: u8 },
}

/// Activation applied to every hidden/output neuron.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// Piecewise-linear logistic sigmoid; output in [0,1].
    Logsig,
    /// Positive saturating linear: clamp(x, 0, 1).
    Satlin,
}

impl Activation {
    /// Float-side evaluation (exact sigmoid / clamp), used by training and
    /// the float reference.
    pub fn apply_float(&self, x: f64) -> f64 {
        match self {
            Activation::Logsig => 1.0 / (1.0 + (-x).exp()),
            Activation::Satlin => x.clamp(0.0, 1.0),
        }
    }

    /// Fixed-point evaluation as the accelerator's activation unit computes
    /// it; both the quantized reference and the engine call this.
    pub fn apply_fixed(&self, x: FixedPointValue, out: FixedPointFormat) -> FixedPointValue {
        let r = match self {
            Activation::Logsig => logsig_pwl(to_real(x)),
            Activation::Satlin => to_real(x).clamp(0.0, 1.0),
        };
        quantize(r, out)
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Logsig => "logsig",
            Activation::Satlin => "satlin",
        })
    }
}

impl FromStr for Activation {
    type Err = NnError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "logsig" => Ok(Activation::Logsig),
            "satlin" => Ok(Activation::Satlin),
            other => Err(NnError::InvalidTopology(format!("unknown activation {other:?}"))),
        }
    }
}

/// Number of uniform PWL segments over [-8, 8].
const LOGSIG_SEGMENTS: u32 = 32;
const LOGSIG_RANGE: f64 = 8.0;

/// Piecewise-linear logistic sigmoid: 32 uniform segments over [-8, 8] with
/// exact-sigmoid knot values, clamped to 0 below and 1 above the range.
/// Interpolation error stays under 0.01; 0 maps to exactly 0.5 (a knot).
pub fn logsig_pwl(x: f64) -> f64 {
    if x <= -LOGSIG_RANGE {
        return 0.0;
    }
    if x >= LOGSIG_RANGE {
        return 1.0;
    }
    let step = 2.0 * LOGSIG_RANGE / LOGSIG_SEGMENTS as f64;
    let seg = (((x + LOGSIG_RANGE) / step) as u32).min(LOGSIG_SEGMENTS - 1);
    let x0 = -LOGSIG_RANGE + seg as f64 * step;
    let sigmoid = |t: f64| 1.0 / (1.0 + (-t).exp());
    let (y0, y1) = (sigmoid(x0), sigmoid(x0 + step));
    y0 + (x - x0) / step * (y1 - y0)
}

/// Fixed-point logistic sigmoid (see [`logsig_pwl`]).
pub fn logsig(x: FixedPointValue, out: FixedPointFormat) -> FixedPointValue {
    Activation::Logsig.apply_fixed(x, out)
}

/// Fixed-point positive saturating linear: clamp(x, 0, 1) quantized.
pub fn satlin(x: FixedPointValue, out: FixedPointFormat) -> FixedPointValue {
    Activation::Satlin.apply_fixed(x, out)
}

/// Layer sizes plus the activation shared by all neurons.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkTopology {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

impl NetworkTopology {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self, NnError> {
        if layer_sizes.len() < 2 {
            return Err(NnError::InvalidTopology(format!(
                "need at least 2 layers, got {}",
                layer_sizes.len()
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(NnError::InvalidTopology("layer sizes must be >= 1".into()));
        }
        Ok(Self { layer_sizes, activation })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of matrix multiplications (Layer_j stages): one fewer than
    /// the number of neuron layers.
    pub fn stage_count(&self) -> usize {
        self.layer_sizes.len() - 1
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Float weights as produced by the trainer, before quantization.
///
/// `weights[j]` is the Layer_j matrix stored row-major with the input index
/// as the row: entry `(i, o)` lives at `i * |L_{j+1}| + o`.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatWeights {
    pub topology: NetworkTopology,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl FloatWeights {
    /// Forward pass returning the output-layer activations.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let sizes = self.topology.layer_sizes();
        if input.len() != sizes[0] {
            return Err(NnError::DimensionMismatch {
                what: "inputs",
                expected: sizes[0],
                got: input.len(),
            });
        }
        let act = self.topology.activation();
        let mut x = input.to_vec();
        for j in 0..self.topology.stage_count() {
            let n_out = sizes[j + 1];
            let mut y = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let mut acc = self.biases[j][o];
                for (i, &xi) in x.iter().enumerate() {
                    acc += self.weights[j][i * n_out + o] * xi;
                }
                y.push(act.apply_float(acc));
            }
            x = y;
        }
        Ok(x)
    }

    pub fn classify(&self, input: &[f64]) -> Result<usize, NnError> {
        Ok(argmax(&self.forward(input)?))
    }

    /// Fraction of misclassified items, in percent.
    pub fn error_pct(&self, dataset: &Dataset) -> Result<f64, NnError> {
        if dataset.items().is_empty() {
            return Err(NnError::EmptyDataset);
        }
        let mut wrong = 0usize;
        for item in dataset.items() {
            if self.classify(&item.input)? != item.label {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / dataset.items().len() as f64 * 100.0)
    }
}

/// Per-stage register formats: `ir[j]` is the format of values entering
/// Layer_j (so `ir[0]` is the input format and the final entry is the
/// network-output format), `wr[j]`/`imr[j]` cover Layer_j's weights and
/// adder tree. `ir` has one more entry than `wr`/`imr`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatPlan {
    pub ir: Vec<FixedPointFormat>,
    pub wr: Vec<FixedPointFormat>,
    pub imr: Vec<FixedPointFormat>,
}

impl FormatPlan {
    pub fn stage_count(&self) -> usize {
        self.wr.len()
    }

    /// Format of the network's output values.
    pub fn output(&self) -> FixedPointFormat {
        *self.ir.last().unwrap()
    }

    fn check(&self, topology: &NetworkTopology) -> Result<(), NnError> {
        let stages = topology.stage_count();
        for (what, len, expected) in [
            ("ir formats", self.ir.len(), stages + 1),
            ("wr formats", self.wr.len(), stages),
            ("imr formats", self.imr.len(), stages),
        ] {
            if len != expected {
                return Err(NnError::DimensionMismatch { what, expected, got: len });
            }
        }
        Ok(())
    }

    /// Whether each class uses one word width across all stages (bit-level
    /// fault indices are only comparable under uniform widths).
    pub fn uniform_widths(&self) -> bool {
        let same = |v: &[FixedPointFormat]| v.iter().all(|f| f.width() == v[0].width());
        same(&self.ir) && same(&self.wr) && same(&self.imr)
    }

    /// Whether each class uses one identical format across all stages.
    pub fn uniform_formats(&self) -> bool {
        let same = |v: &[FixedPointFormat]| v.iter().all(|f| *f == v[0]);
        same(&self.ir) && same(&self.wr) && same(&self.imr)
    }
}

/// Word widths and layer policy for [`calibrate`].
///
/// Defaults mirror the hardware baseline: 16-bit input and weight words,
/// 23-bit intermediate words, and one shared format per class across all
/// layers (`unify_layers`), which component-targeted fault filters require.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub ir_width: u8,
    pub wr_width: u8,
    pub imr_width: u8,
    pub unify_layers: bool,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { ir_width: 16, wr_width: 16, imr_width: 23, unify_layers: true }
    }
}

/// Running (min, max) of every value observed for one register class.
#[derive(Debug, Clone, Copy)]
struct Range {
    min: f64,
    max: f64,
}

impl Range {
    const EMPTY: Range = Range { min: f64::INFINITY, max: f64::NEG_INFINITY };

    fn note(&mut self, v: f64) {
        self.min = self.min.min(v);
        self.max = self.max.max(v);
    }

    fn merge(&mut self, other: Range) {
        self.min = self.min.min(other.min);
        self.max = self.max.max(other.max);
    }

    fn to_format(
        self,
        width: u8,
        class: &'static str,
        layer: usize,
    ) -> Result<FixedPointFormat, NnError> {
        let (min, max) = if self.min.is_finite() { (self.min, self.max) } else { (0.0, 0.0) };
        let sign = u8::from(min < 0.0);
        let magnitude = min.abs().max(max.abs());
        let mut digit: u8 = 0;
        while (digit as f64).exp2() <= magnitude {
            digit += 1;
            if u32::from(sign) + u32::from(digit) > width as u32 {
                return Err(NnError::CalibrationOverflow {
                    class,
                    layer,
                    needed: u32::from(sign) + u32::from(digit),
                    width,
                });
            }
        }
        FixedPointFormat::new(sign, digit, width - sign - digit)
            .map_err(|e| NnError::InvalidTopology(e.to_string()))
    }
}

/// Derives per-layer register formats from a fault-free float run over the
/// whole dataset.
///
/// For each Layer_j the pass records everything its registers could latch:
/// inputs (IR), weights and biases (WR), and for IMR every product, every
/// contiguous partial sum a tree node could hold (tracked exactly via
/// min/max subarray sums), and the bias-seeded accumulator prefixes. Sign
/// bits appear only where negative values occur; digit widths are the
/// smallest d with max |value| < 2^d; the fraction takes the remaining
/// width. Wider-than-word digit requirements fail calibration.
pub fn calibrate(
    weights: &FloatWeights,
    dataset: &Dataset,
    options: &CalibrationOptions,
) -> Result<FormatPlan, NnError> {
    if dataset.items().is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let topology = &weights.topology;
    let sizes = topology.layer_sizes();
    if dataset.feature_count() != sizes[0] {
        return Err(NnError::DimensionMismatch {
            what: "inputs",
            expected: sizes[0],
            got: dataset.feature_count(),
        });
    }
    let stages = topology.stage_count();
    let act = topology.activation();

    let mut ir = vec![Range::EMPTY; stages + 1];
    let mut wr = vec![Range::EMPTY; stages];
    let mut imr = vec![Range::EMPTY; stages];

    // Weights and biases are data-independent; record them once.
    for (j, range) in wr.iter_mut().enumerate() {
        for &w in &weights.weights[j] {
            range.note(w);
        }
        for &b in &weights.biases[j] {
            range.note(b);
        }
    }

    for item in dataset.items() {
        let mut x = item.input.clone();
        for v in &x {
            ir[0].note(*v);
        }
        for j in 0..stages {
            let (n_in, n_out) = (sizes[j], sizes[j + 1]);
            let mut y = Vec::with_capacity(n_out);
            for o in 0..n_out {
                // Tree nodes hold sums of contiguous product runs; the
                // extreme such sums are the classic min/max subarray sums,
                // tracked in one scan. Accumulator prefixes carry the bias.
                let bias = weights.biases[j][o];
                imr[j].note(bias);
                let mut acc = bias;
                let (mut best_hi, mut run_hi) = (f64::NEG_INFINITY, 0.0f64);
                let (mut best_lo, mut run_lo) = (f64::INFINITY, 0.0f64);
                for (i, &xi) in x.iter().enumerate() {
                    let p = weights.weights[j][i * n_out + o] * xi;
                    run_hi = p.max(run_hi + p);
                    best_hi = best_hi.max(run_hi);
                    run_lo = p.min(run_lo + p);
                    best_lo = best_lo.min(run_lo);
                    acc += p;
                    imr[j].note(acc);
                }
                if n_in > 0 {
                    imr[j].note(best_hi);
                    imr[j].note(best_lo);
                }
                let a = act.apply_float(acc);
                ir[j + 1].note(a);
                y.push(a);
            }
            x = y;
        }
    }

    if options.unify_layers {
        let fold = |ranges: &[Range]| {
            let mut all = Range::EMPTY;
            for r in ranges {
                all.merge(*r);
            }
            all
        };
        let (ai, aw, am) = (fold(&ir), fold(&wr), fold(&imr));
        ir.iter_mut().for_each(|r| *r = ai);
        wr.iter_mut().for_each(|r| *r = aw);
        imr.iter_mut().for_each(|r| *r = am);
    }

    let plan = FormatPlan {
        ir: ir
            .into_iter()
            .enumerate()
            .map(|(j, r)| r.to_format(options.ir_width, "IR", j))
            .collect::<Result<_, _>>()?,
        wr: wr
            .into_iter()
            .enumerate()
            .map(|(j, r)| r.to_format(options.wr_width, "WR", j))
            .collect::<Result<_, _>>()?,
        imr: imr
            .into_iter()
            .enumerate()
            .map(|(j, r)| r.to_format(options.imr_width, "IMR", j))
            .collect::<Result<_, _>>()?,
    };
    plan.check(topology)?;
    Ok(plan)
}

/// Which arithmetic the golden reference uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefMode {
    /// f64 forward pass over dequantized weights with exact activations.
    Float,
    /// Bit-exact fixed-point forward pass, flat accumulation per neuron.
    Quantized,
}

/// Golden-reference classification of one input.
///
/// `Quantized` mode reproduces the accelerator's arithmetic exactly: it
/// quantizes the input, multiplies into the IMR format, accumulates with
/// wrap-around adds (flat order — bit-equal to any tree order), and applies
/// the fixed-point activation. Ties in the final argmax go to the lowest
/// class index.
pub fn classify_reference(
    archive: &WeightArchive,
    input: &[f64],
    mode: RefMode,
) -> Result<usize, NnError> {
    let sizes = archive.topology().layer_sizes();
    if input.len() != sizes[0] {
        return Err(NnError::DimensionMismatch {
            what: "inputs",
            expected: sizes[0],
            got: input.len(),
        });
    }
    match mode {
        RefMode::Float => {
            let act = archive.topology().activation();
            let mut x = input.to_vec();
            for j in 0..archive.topology().stage_count() {
                let layer = archive.layer(j);
                let n_out = sizes[j + 1];
                let mut y = Vec::with_capacity(n_out);
                for o in 0..n_out {
                    let mut acc = to_real(layer.biases[o]);
                    for (i, &xi) in x.iter().enumerate() {
                        acc += to_real(layer.weights[i * n_out + o]) * xi;
                    }
                    y.push(act.apply_float(acc));
                }
                x = y;
            }
            Ok(argmax(&x))
        }
        RefMode::Quantized => {
            let out = quantized_outputs(archive, input)?;
            let ints: Vec<i64> = out.iter().map(|v| v.as_int()).collect();
            Ok(argmax(&ints))
        }
    }
}

/// The quantized reference's output-layer values (pre-argmax), used by
/// equivalence tests against the cycle-accurate engine.
pub fn quantized_outputs(
    archive: &WeightArchive,
    input: &[f64],
) -> Result<Vec<FixedPointValue>, NnError> {
    let topology = archive.topology();
    let sizes = topology.layer_sizes();
    if input.len() != sizes[0] {
        return Err(NnError::DimensionMismatch {
            what: "inputs",
            expected: sizes[0],
            got: input.len(),
        });
    }
    let act = topology.activation();
    let plan = archive.formats();
    let mut x: Vec<FixedPointValue> =
        input.iter().map(|&v| quantize(v, plan.ir[0])).collect();
    for j in 0..topology.stage_count() {
        let layer = archive.layer(j);
        let n_out = sizes[j + 1];
        let imr_fmt = plan.imr[j];
        let mut y = Vec::with_capacity(n_out);
        for o in 0..n_out {
            let mut acc = convert(layer.biases[o], imr_fmt);
            for (i, &xi) in x.iter().enumerate() {
                let p = multiply(layer.weights[i * n_out + o], xi, imr_fmt);
                acc = add(acc, p).expect("imr formats match");
            }
            y.push(act.apply_fixed(acc, plan.ir[j + 1]));
        }
        x = y;
    }
    Ok(x)
}

/// Percentage of dataset items the reference misclassifies.
pub fn dataset_error(
    archive: &WeightArchive,
    dataset: &Dataset,
    mode: RefMode,
) -> Result<f64, NnError> {
    if dataset.items().is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut wrong = 0usize;
    for item in dataset.items() {
        if classify_reference(archive, &item.input, mode)? != item.label {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / dataset.items().len() as f64 * 100.0)
}

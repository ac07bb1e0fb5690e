//! The accelerator's architecture: PE array sizing, register file layout,
//! and the cycle schedule that streams matrix products through it.
//!
//! P processing elements multiply in parallel each cycle. Three register
//! classes latch the datapath state and are the fault-injection surface:
//!
//! - `IR`: P input operands,
//! - `WR`: P weight operands,
//! - `IMR`: 2P-1 intermediate values — P multiplier outputs (the adder
//!   tree's leaves) plus P-1 internal tree nodes.
//!
//! Per-neuron accumulators sit behind the tree root; they use the IMR
//! format but are not separately addressable faultable state (the IMR count
//! law |IMR| = 2P-1 is what sizes the corruptible-bit budget).

mod engine;

pub use engine::{run_inference, InferenceOutcome};

use crate::nn::{FormatPlan, NetworkTopology};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::ops::Range;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AccelError {
    #[error("number of PEs must be a power of two >= 1, got {0}")]
    BadPeCount(usize),
    #[error("format plan mismatch: {0}")]
    BadFormats(String),
    #[error("layer index {layer} out of range ({stages} stages)")]
    LayerOutOfRange { layer: usize, stages: usize },
    #[error("archive/config mismatch: {0}")]
    Mismatch(String),
    #[error("input has {got} features, topology expects {expected}")]
    InputSize { expected: usize, got: usize },
    #[error("invalid fault target: {0}")]
    FaultTarget(String),
    #[error("trace io error: {0}")]
    TraceIo(#[from] std::io::Error),
    #[error(transparent)]
    Fxp(#[from] crate::fxp::FxpError),
}

/// The three fault-targetable register classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RegisterClass {
    #[serde(rename = "IR")]
    Ir,
    #[serde(rename = "WR")]
    Wr,
    #[serde(rename = "IMR")]
    Imr,
}

impl RegisterClass {
    pub const ALL: [RegisterClass; 3] = [RegisterClass::Ir, RegisterClass::Wr, RegisterClass::Imr];
}

impl fmt::Display for RegisterClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegisterClass::Ir => "IR",
            RegisterClass::Wr => "WR",
            RegisterClass::Imr => "IMR",
        })
    }
}

impl FromStr for RegisterClass {
    type Err = AccelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "IR" | "ir" => Ok(RegisterClass::Ir),
            "WR" | "wr" => Ok(RegisterClass::Wr),
            "IMR" | "imr" => Ok(RegisterClass::Imr),
            other => Err(AccelError::Mismatch(format!("unknown register class {other:?}"))),
        }
    }
}

/// Sizing and formats of one accelerator instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceleratorConfig {
    topology: NetworkTopology,
    num_pes: usize,
    formats: FormatPlan,
}

impl AcceleratorConfig {
    /// Word widths must be uniform per class across layers (fault bit
    /// indices address one physical register width); the per-layer
    /// digit/fraction split may still vary.
    pub fn new(
        topology: NetworkTopology,
        num_pes: usize,
        formats: FormatPlan,
    ) -> Result<Self, AccelError> {
        if num_pes == 0 || !num_pes.is_power_of_two() {
            return Err(AccelError::BadPeCount(num_pes));
        }
        if formats.wr.len() != topology.stage_count() || formats.ir.len() != topology.stage_count() + 1 {
            return Err(AccelError::BadFormats(format!(
                "plan covers {} stages, topology has {}",
                formats.wr.len(),
                topology.stage_count()
            )));
        }
        if !formats.uniform_widths() {
            return Err(AccelError::BadFormats(
                "register word widths differ across layers".into(),
            ));
        }
        Ok(Self { topology, num_pes, formats })
    }

    pub fn from_archive(
        archive: &crate::nn::WeightArchive,
        num_pes: usize,
    ) -> Result<Self, AccelError> {
        Self::new(archive.topology().clone(), num_pes, archive.formats().clone())
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn num_pes(&self) -> usize {
        self.num_pes
    }

    pub fn formats(&self) -> &FormatPlan {
        &self.formats
    }

    /// Registers in a class: P inputs, P weights, 2P-1 intermediates.
    pub fn register_count(&self, class: RegisterClass) -> usize {
        match class {
            RegisterClass::Ir | RegisterClass::Wr => self.num_pes,
            RegisterClass::Imr => 2 * self.num_pes - 1,
        }
    }

    /// Word width of a class (uniform across layers by construction).
    pub fn register_width(&self, class: RegisterClass) -> u8 {
        match class {
            RegisterClass::Ir => self.formats.ir[0].width(),
            RegisterClass::Wr => self.formats.wr[0].width(),
            RegisterClass::Imr => self.formats.imr[0].width(),
        }
    }

    /// The class's format when it is identical across all layers —
    /// required to resolve sign/digit/fraction component bit ranges.
    pub fn uniform_class_format(
        &self,
        class: RegisterClass,
    ) -> Option<crate::fxp::FixedPointFormat> {
        let formats = match class {
            RegisterClass::Ir => &self.formats.ir,
            RegisterClass::Wr => &self.formats.wr,
            RegisterClass::Imr => &self.formats.imr,
        };
        formats.iter().all(|f| *f == formats[0]).then(|| formats[0])
    }
}

/// Clock cycles to classify one input: each Layer_j needs
/// ceil(|L_j|*|L_{j+1}| / P) cycles, and the layers run back to back.
pub fn cycles_for_inference(config: &AcceleratorConfig) -> u64 {
    CycleSchedule::new(config).total_cycles()
}

/// Total corruptible bits: sum over classes of register count x width.
pub fn total_fault_bits(config: &AcceleratorConfig) -> u64 {
    RegisterClass::ALL
        .iter()
        .map(|&c| config.register_count(c) as u64 * config.register_width(c) as u64)
        .sum()
}

/// Cycle window of Layer_j, for layer-scoped fault activation.
pub fn layer_window(config: &AcceleratorConfig, layer: usize) -> Result<Range<u64>, AccelError> {
    CycleSchedule::new(config).window(layer)
}

/// Per-layer cycle windows of one inference. Windows are gapless, ordered,
/// and partition [0, T).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleSchedule {
    windows: Vec<Range<u64>>,
}

impl CycleSchedule {
    pub fn new(config: &AcceleratorConfig) -> Self {
        let sizes = config.topology().layer_sizes();
        let p = config.num_pes() as u64;
        let mut windows = Vec::with_capacity(sizes.len() - 1);
        let mut start = 0u64;
        for j in 0..sizes.len() - 1 {
            let products = (sizes[j] * sizes[j + 1]) as u64;
            let len = products.div_ceil(p);
            windows.push(start..start + len);
            start += len;
        }
        Self { windows }
    }

    pub fn total_cycles(&self) -> u64 {
        self.windows.last().map_or(0, |w| w.end)
    }

    pub fn windows(&self) -> &[Range<u64>] {
        &self.windows
    }

    pub fn window(&self, layer: usize) -> Result<Range<u64>, AccelError> {
        self.windows
            .get(layer)
            .cloned()
            .ok_or(AccelError::LayerOutOfRange { layer, stages: self.windows.len() })
    }

    /// Which layer a cycle belongs to.
    pub fn layer_of(&self, cycle: u64) -> Option<usize> {
        self.windows.iter().position(|w| w.contains(&cycle))
    }
}

/// Start index of an adder-tree level within the IMR file: level 0 is the
/// P leaves, level l >= 1 starts at 2P - (P >> (l-1)); the root is the last
/// register, index 2P-2.
pub fn imr_level_offset(num_pes: usize, level: u32) -> usize {
    if level == 0 {
        0
    } else {
        2 * num_pes - (num_pes >> (level - 1))
    }
}

/// One latched register value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceRecord {
    pub cycle: u64,
    pub class: RegisterClass,
    pub index: u32,
    pub value: crate::fxp::FixedPointValue,
}

/// Every value latched during one inference, in write order: per cycle the
/// P IR lanes, P WR lanes, then the 2P-1 IMR entries bottom-up.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegisterTrace {
    records: Vec<TraceRecord>,
}

impl RegisterTrace {
    pub(crate) fn push(
        &mut self,
        cycle: u64,
        class: RegisterClass,
        index: u32,
        value: crate::fxp::FixedPointValue,
    ) {
        self.records.push(TraceRecord { cycle, class, index, value });
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    /// Values latched by one register class.
    pub fn class_values(
        &self,
        class: RegisterClass,
    ) -> impl Iterator<Item = crate::fxp::FixedPointValue> + '_ {
        self.records.iter().filter(move |r| r.class == class).map(|r| r.value)
    }

    pub fn concat(&mut self, other: &RegisterTrace) {
        self.records.extend_from_slice(&other.records);
    }

    /// CSV export: `cycle,class,index,raw` with the raw value zero-padded
    /// to the register width in hex digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), AccelError> {
        writeln!(out, "cycle,class,index,raw")?;
        for r in &self.records {
            let nibbles = (r.value.format().width() as usize).div_ceil(4);
            writeln!(out, "{},{},{},{:0nibbles$x}", r.cycle, r.class, r.index, r.value.raw())?;
        }
        Ok(())
    }
}

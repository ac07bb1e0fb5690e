//! Derived statistics over traces and campaign results: register bit
//! sparsity, input value histograms, and plot-ready sweep tables.
//!
//! The sparsity numbers explain why the masking techniques work at all:
//! registers of a quantized NN datapath hold far more 0 than 1 bits
//! (near-zero inputs and products leave high-order bits blank), so forcing
//! suspect bits toward the word's sign/zero side usually lands on the
//! truth. The reports here measure exactly that skew for a given trace.

use crate::accel::{RegisterClass, RegisterTrace};
use crate::campaign::CampaignResult;
use crate::fxp::to_real;
use serde::{Deserialize, Serialize};
use std::fmt::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("sparsity needs a nonempty trace")]
    EmptyTrace,
}

/// Bit tallies of one register class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassBitStats {
    pub zeros: u64,
    pub ones: u64,
}

impl ClassBitStats {
    pub fn total(&self) -> u64 {
        self.zeros + self.ones
    }

    /// Zeros per one — the sparsity headline. `None` when no one-bits were
    /// observed (the ratio would be infinite).
    pub fn zero_one_ratio(&self) -> Option<f64> {
        (self.ones > 0).then(|| self.zeros as f64 / self.ones as f64)
    }

    fn absorb(&mut self, raw: u32, width: u8) {
        let ones = raw.count_ones() as u64;
        self.ones += ones;
        self.zeros += width as u64 - ones;
    }
}

/// Bit sparsity per register class plus the distribution of input-register
/// values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub ir: ClassBitStats,
    pub wr: ClassBitStats,
    pub imr: ClassBitStats,
    /// IR values bucketed over [0, 1) in steps of 0.1. Out-of-range values
    /// clamp into the edge buckets, so the counts always sum to the number
    /// of IR writes.
    pub ir_histogram: [u64; 10],
}

impl SparsityReport {
    pub fn class(&self, class: RegisterClass) -> &ClassBitStats {
        match class {
            RegisterClass::Ir => &self.ir,
            RegisterClass::Wr => &self.wr,
            RegisterClass::Imr => &self.imr,
        }
    }

    /// All three classes pooled.
    pub fn overall(&self) -> ClassBitStats {
        ClassBitStats {
            zeros: self.ir.zeros + self.wr.zeros + self.imr.zeros,
            ones: self.ir.ones + self.wr.ones + self.imr.ones,
        }
    }

    pub fn ir_samples(&self) -> u64 {
        self.ir_histogram.iter().sum()
    }
}

/// Tallies every latched bit in the trace.
pub fn sparsity(trace: &RegisterTrace) -> Result<SparsityReport, AnalysisError> {
    if trace.records().is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    let mut report = SparsityReport {
        ir: ClassBitStats::default(),
        wr: ClassBitStats::default(),
        imr: ClassBitStats::default(),
        ir_histogram: [0; 10],
    };
    for r in trace.records() {
        let stats = match r.class {
            RegisterClass::Ir => &mut report.ir,
            RegisterClass::Wr => &mut report.wr,
            RegisterClass::Imr => &mut report.imr,
        };
        stats.absorb(r.value.raw(), r.value.format().width());
        if r.class == RegisterClass::Ir {
            let bucket = (to_real(r.value) * 10.0).floor().clamp(0.0, 9.0) as usize;
            report.ir_histogram[bucket] += 1;
        }
    }
    Ok(report)
}

/// The error-versus-fault-count sweep as CSV: `k,median,stddev`, one row
/// per point, k ascending. Values print in shortest-round-trip decimal, so
/// parsing the table back recovers them exactly.
pub fn sweep_table(result: &CampaignResult) -> String {
    let mut points: Vec<_> = result.points.iter().collect();
    points.sort_by_key(|p| p.bit_count);
    let mut out = String::from("k,median,stddev\n");
    for p in points {
        writeln!(out, "{},{},{}", p.bit_count, p.median, p.stddev).expect("string write");
    }
    out
}

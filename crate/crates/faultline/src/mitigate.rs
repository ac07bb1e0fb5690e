//! Fault-mitigation techniques applied at register write time.
//!
//! All three techniques assume a perfect detection oracle: the simulator
//! knows exactly which bits a fault changed at each write (Razor-style
//! shadow latches provide this in hardware). Corrections rewrite the latch
//! before the value is consumed downstream.
//!
//! Writing N for the register width: bit N-1 is the sign position and bit
//! N-2 the "MSB" — the highest non-sign bit. In sparse near-zero data both
//! almost always agree, which is what makes masking with them effective.

use crate::fxp::FixedPointValue;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MitigateError {
    #[error("unknown mitigation technique {0:?}")]
    UnknownTechnique(String),
    #[error("sign/MSB agreement needs a sign bit and width >= 2, got {0}")]
    NoSignBit(crate::fxp::FixedPointFormat),
    #[error("sign/MSB agreement over an empty trace")]
    EmptyTrace,
}

/// Mitigation selection as it appears in campaign configs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Technique {
    /// Faults pass through uncorrected.
    #[default]
    None,
    /// Zero the whole word on any detected flip.
    Word,
    /// Copy the (possibly corrupted) sign bit into flipped non-sign bits.
    Bit,
    /// Sign repair from the MSB, then bit masking with the repaired sign.
    Hybrid,
}

impl Technique {
    pub const ALL: [Technique; 4] =
        [Technique::None, Technique::Word, Technique::Bit, Technique::Hybrid];
}

impl fmt::Display for Technique {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Technique::None => "none",
            Technique::Word => "word",
            Technique::Bit => "bit",
            Technique::Hybrid => "hybrid",
        })
    }
}

impl FromStr for Technique {
    type Err = MitigateError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(Technique::None),
            "word" => Ok(Technique::Word),
            "bit" => Ok(Technique::Bit),
            "hybrid" => Ok(Technique::Hybrid),
            other => Err(MitigateError::UnknownTechnique(other.into())),
        }
    }
}

/// A register value right after fault application, with the oracle's set of
/// bits that actually changed (as a mask). An empty mask means the write
/// was clean.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectionReport {
    pub value: FixedPointValue,
    pub flipped: u32,
}

impl DetectionReport {
    pub fn clean(value: FixedPointValue) -> Self {
        Self { value, flipped: 0 }
    }

    fn is_flipped(&self, bit: u8) -> bool {
        self.flipped >> bit & 1 == 1
    }
}

fn with_bit(v: FixedPointValue, bit: u8, level: bool) -> FixedPointValue {
    let raw = if level { v.raw() | 1 << bit } else { v.raw() & !(1 << bit) };
    FixedPointValue::from_raw(raw, v.format())
}

/// Minerva word masking: any detected flip zeroes the whole word.
pub fn word_masking(report: DetectionReport) -> FixedPointValue {
    if report.flipped == 0 {
        report.value
    } else {
        FixedPointValue::zero(report.value.format())
    }
}

/// Minerva bit masking: every flipped non-sign bit is overwritten with the
/// current sign bit. A flipped sign bit is left as-is — the mask source
/// itself can be faulty, which is this technique's known weakness.
pub fn bit_masking(report: DetectionReport) -> FixedPointValue {
    if report.flipped == 0 {
        return report.value;
    }
    let n = report.value.format().width();
    let sign = report.value.raw() >> (n - 1) & 1 == 1;
    let mut v = report.value;
    for bit in 0..n - 1 {
        if report.is_flipped(bit) {
            v = with_bit(v, bit, sign);
        }
    }
    v
}

/// The enhanced hybrid, in exactly this order:
///
/// 1. both bit N-1 and bit N-2 flipped — no trustworthy mask source is
///    left, zero the word;
/// 2. else a flipped sign bit is rebuilt from the MSB (bit N-2);
/// 3. every remaining flipped bit below the sign is overwritten with the
///    repaired sign bit.
pub fn hybrid(report: DetectionReport) -> FixedPointValue {
    if report.flipped == 0 {
        return report.value;
    }
    let n = report.value.format().width();
    let fmt = report.value.format();
    if report.is_flipped(n - 1) && report.is_flipped(n - 2) {
        return FixedPointValue::zero(fmt);
    }
    let mut v = report.value;
    if report.is_flipped(n - 1) {
        let msb = v.raw() >> (n - 2) & 1 == 1;
        v = with_bit(v, n - 1, msb);
    }
    let sign = v.raw() >> (n - 1) & 1 == 1;
    for bit in 0..n - 1 {
        if report.is_flipped(bit) {
            v = with_bit(v, bit, sign);
        }
    }
    v
}

/// Applies the selected technique to one detection report.
pub fn apply(technique: Technique, report: DetectionReport) -> FixedPointValue {
    match technique {
        Technique::None => report.value,
        Technique::Word => word_masking(report),
        Technique::Bit => bit_masking(report),
        Technique::Hybrid => hybrid(report),
    }
}

/// Fraction of values whose sign bit (N-1) equals their MSB (N-2) — the
/// statistic motivating sign repair from the MSB. All values must be signed
/// and at least two bits wide; an empty input is an error.
pub fn sign_msb_agreement<I>(values: I) -> Result<f64, MitigateError>
where
    I: IntoIterator<Item = FixedPointValue>,
{
    let mut total = 0u64;
    let mut agree = 0u64;
    for v in values {
        let fmt = v.format();
        if !fmt.is_signed() || fmt.width() < 2 {
            return Err(MitigateError::NoSignBit(fmt));
        }
        let n = fmt.width();
        total += 1;
        if (v.raw() >> (n - 1) & 1) == (v.raw() >> (n - 2) & 1) {
            agree += 1;
        }
    }
    if total == 0 {
        return Err(MitigateError::EmptyTrace);
    }
    Ok(agree as f64 / total as f64)
}

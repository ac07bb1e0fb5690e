//! Register fault model: what can break, how a fault is described, and how
//! a random one is drawn.
//!
//! A fault pins a set of bit positions in exactly one register. Stuck-at
//! faults force those bits to a level on every write for as long as the
//! fault is in scope; a transient fault inverts them on the write of one
//! single cycle. Faults act at write time — a stuck-at bit only manifests
//! when the value being latched disagrees with the stuck level, and the
//! set of bits that actually flipped is reported alongside the corrupted
//! value so detection-based mitigation can react to it.

use crate::accel::{AcceleratorConfig, CycleSchedule, RegisterClass};
use crate::fxp::{FixedPointFormat, FixedPointValue};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FaultError {
    #[error("fault filter cannot be satisfied: {0}")]
    Unsatisfiable(String),
    #[error("fault bit count must be at least 1")]
    ZeroBits,
    #[error("component filter needs one {class} format shared by all layers")]
    NeedsUniformFormat { class: RegisterClass },
    #[error("invalid fault spec: {0}")]
    BadSpec(String),
    #[error(transparent)]
    Accel(#[from] crate::accel::AccelError),
}

/// How the targeted bits misbehave.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FaultKind {
    #[serde(rename = "stuck_at_0")]
    StuckAt0,
    #[serde(rename = "stuck_at_1")]
    StuckAt1,
    #[serde(rename = "transient")]
    Transient,
}

impl FaultKind {
    pub const ALL: [FaultKind; 3] = [FaultKind::StuckAt0, FaultKind::StuckAt1, FaultKind::Transient];
}

impl fmt::Display for FaultKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FaultKind::StuckAt0 => "stuck_at_0",
            FaultKind::StuckAt1 => "stuck_at_1",
            FaultKind::Transient => "transient",
        })
    }
}

impl FromStr for FaultKind {
    type Err = FaultError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stuck_at_0" => Ok(FaultKind::StuckAt0),
            "stuck_at_1" => Ok(FaultKind::StuckAt1),
            "transient" => Ok(FaultKind::Transient),
            other => Err(FaultError::BadSpec(format!("unknown fault kind {other:?}"))),
        }
    }
}

/// A field of the fixed-point word, for faults aimed at sign, integer
/// digits, or fraction bits specifically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Sign,
    Digit,
    Fraction,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Sign, Component::Digit, Component::Fraction];

    /// Bit positions the component occupies, LSB first: fraction in the low
    /// bits, digits above, the sign on top. May be empty (unsigned formats
    /// have no sign bit).
    pub fn bit_range(&self, format: FixedPointFormat) -> Range<u8> {
        let f = format.fraction_bits();
        let d = format.digit_bits();
        match self {
            Component::Fraction => 0..f,
            Component::Digit => f..f + d,
            Component::Sign => f + d..format.width(),
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Sign => "sign",
            Component::Digit => "digit",
            Component::Fraction => "fraction",
        })
    }
}

impl FromStr for Component {
    type Err = FaultError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sign" => Ok(Component::Sign),
            "digit" => Ok(Component::Digit),
            "fraction" => Ok(Component::Fraction),
            other => Err(FaultError::BadSpec(format!("unknown component {other:?}"))),
        }
    }
}

/// When the fault is live: the whole run, or only while one layer's
/// products stream through the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultScope {
    WholeInference,
    Layer(usize),
}

/// A fully pinned-down fault, serializable for replay. `cycle` is set for
/// transient faults only.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    pub class: RegisterClass,
    pub index: u32,
    pub bits: Vec<u8>,
    pub scope: FaultScope,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<u64>,
}

/// Constraints narrowing where random faults may land. `count` is the
/// number of distinct bits each fault pins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultFilter {
    #[serde(default)]
    pub class: Option<RegisterClass>,
    #[serde(default)]
    pub layer: Option<usize>,
    #[serde(default)]
    pub component: Option<Component>,
    pub count: usize,
}

impl FaultFilter {
    /// No restrictions beyond the bit count.
    pub fn any(count: usize) -> Self {
        Self { class: None, layer: None, component: None, count }
    }
}

/// Draws one fault uniformly: first a register (uniform over every
/// register whose admissible bit set is large enough), then `count`
/// distinct bits from that set, then — for transients — a cycle from the
/// scope's window. Draw order is fixed so equal seeds replay bit-equal.
pub fn generate_fault<R: Rng>(
    rng: &mut R,
    kind: FaultKind,
    filter: &FaultFilter,
    config: &AcceleratorConfig,
    schedule: &CycleSchedule,
) -> Result<FaultSpec, FaultError> {
    let k = filter.count;
    if k == 0 {
        return Err(FaultError::ZeroBits);
    }
    let scope = match filter.layer {
        Some(j) => {
            schedule.window(j)?;
            FaultScope::Layer(j)
        }
        None => FaultScope::WholeInference,
    };
    let window = scope_window(scope, schedule).expect("scope validated above");

    struct Candidate {
        class: RegisterClass,
        bits: Vec<u8>,
        registers: u64,
    }
    let classes: Vec<RegisterClass> = match filter.class {
        Some(c) => vec![c],
        None => RegisterClass::ALL.to_vec(),
    };
    let mut candidates = Vec::new();
    for class in classes {
        let bits: Vec<u8> = match filter.component {
            None => (0..config.register_width(class)).collect(),
            Some(component) => {
                let format = config
                    .uniform_class_format(class)
                    .ok_or(FaultError::NeedsUniformFormat { class })?;
                component.bit_range(format).collect()
            }
        };
        if bits.len() >= k {
            candidates.push(Candidate {
                class,
                bits,
                registers: config.register_count(class) as u64,
            });
        }
    }
    let total: u64 = candidates.iter().map(|c| c.registers).sum();
    if total == 0 {
        return Err(FaultError::Unsatisfiable(format!(
            "no register offers {k} admissible bit(s) under {filter:?}"
        )));
    }

    let mut pick = rng.gen_range(0..total);
    let chosen = candidates
        .iter()
        .find(|c| {
            if pick < c.registers {
                true
            } else {
                pick -= c.registers;
                false
            }
        })
        .expect("pick < total");

    let mut bits = BTreeSet::new();
    while bits.len() < k {
        bits.insert(chosen.bits[rng.gen_range(0..chosen.bits.len())]);
    }

    let cycle = match kind {
        FaultKind::Transient => Some(window.start + rng.gen_range(0..window.end - window.start)),
        _ => None,
    };

    Ok(FaultSpec {
        kind,
        class: chosen.class,
        index: pick as u32,
        bits: bits.into_iter().collect(),
        scope,
        cycle,
    })
}

fn scope_window(scope: FaultScope, schedule: &CycleSchedule) -> Result<Range<u64>, FaultError> {
    Ok(match scope {
        FaultScope::WholeInference => 0..schedule.total_cycles(),
        FaultScope::Layer(j) => schedule.window(j)?,
    })
}

/// A spec checked against a concrete accelerator and bound to its cycle
/// window, ready for the engine's write path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveFault {
    spec: FaultSpec,
    window: Range<u64>,
    mask: u32,
}

impl ActiveFault {
    pub fn resolve(
        spec: FaultSpec,
        config: &AcceleratorConfig,
        schedule: &CycleSchedule,
    ) -> Result<Self, FaultError> {
        let count = config.register_count(spec.class) as u32;
        if spec.index >= count {
            return Err(FaultError::BadSpec(format!(
                "{} index {} out of range (have {count})",
                spec.class, spec.index
            )));
        }
        if spec.bits.is_empty() {
            return Err(FaultError::ZeroBits);
        }
        let width = config.register_width(spec.class);
        let mut mask = 0u32;
        for &b in &spec.bits {
            if b >= width {
                return Err(FaultError::BadSpec(format!(
                    "bit {b} outside the {width}-bit {} word",
                    spec.class
                )));
            }
            if mask & (1 << b) != 0 {
                return Err(FaultError::BadSpec(format!("bit {b} listed twice")));
            }
            mask |= 1 << b;
        }
        let window = scope_window(spec.scope, schedule)?;
        match (spec.kind, spec.cycle) {
            (FaultKind::Transient, Some(c)) if !window.contains(&c) => {
                return Err(FaultError::BadSpec(format!(
                    "transient cycle {c} outside scope window {window:?}"
                )));
            }
            (FaultKind::Transient, None) => {
                return Err(FaultError::BadSpec("transient fault needs a cycle".into()));
            }
            (FaultKind::StuckAt0 | FaultKind::StuckAt1, Some(_)) => {
                return Err(FaultError::BadSpec(
                    "cycle only applies to transient faults".into(),
                ));
            }
            _ => {}
        }
        Ok(Self { spec, window, mask })
    }

    pub fn spec(&self) -> &FaultSpec {
        &self.spec
    }

    pub fn window(&self) -> Range<u64> {
        self.window.clone()
    }

    /// Applies the fault to one register write. Returns the value actually
    /// latched plus the mask of bits that changed (zero when the fault
    /// does not manifest on this write).
    #[inline]
    pub fn corrupt(
        &self,
        class: RegisterClass,
        index: u32,
        cycle: u64,
        value: FixedPointValue,
    ) -> (FixedPointValue, u32) {
        if class != self.spec.class || index != self.spec.index || !self.window.contains(&cycle) {
            return (value, 0);
        }
        let raw = value.raw();
        let new = match self.spec.kind {
            FaultKind::StuckAt0 => raw & !self.mask,
            FaultKind::StuckAt1 => raw | self.mask,
            FaultKind::Transient if self.spec.cycle == Some(cycle) => raw ^ self.mask,
            FaultKind::Transient => raw,
        };
        (FixedPointValue::from_raw(new, value.format()), raw ^ new)
    }
}

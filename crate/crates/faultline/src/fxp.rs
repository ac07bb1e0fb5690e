//! Two's-complement fixed-point words as latched by the datapath registers.
//!
//! A word is described by a [`FixedPointFormat`]: an optional sign bit, a
//! digit (integer) component, and a fraction component, packed MSB-first as
//! `sign | digit | fraction`. The numeric value of a word is its signed (or
//! unsigned, when there is no sign bit) integer interpretation scaled by
//! `2^-fraction_bits`.
//!
//! Quantization truncates toward negative infinity and saturates to the
//! representable range. Addition wraps around at the word width, which keeps
//! it associative and commutative bit-exactly; multiplication computes the
//! exact double-width product, truncates the fraction, and wraps the integer
//! part into the output width.

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Widest register word the simulator models.
pub const MAX_WIDTH: u8 = 32;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FxpError {
    #[error("invalid fixed-point format: {0}")]
    InvalidFormat(String),
    #[error("format mismatch: {lhs} vs {rhs}")]
    FormatMismatch { lhs: FixedPointFormat, rhs: FixedPointFormat },
    #[error("bit index {index} out of range for width {width}")]
    BitIndexOutOfRange { index: u8, width: u8 },
}

/// Bit layout of a register class: sign, digit, and fraction widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FixedPointFormat {
    sign_bits: u8,
    digit_bits: u8,
    fraction_bits: u8,
}

impl FixedPointFormat {
    pub fn new(sign_bits: u8, digit_bits: u8, fraction_bits: u8) -> Result<Self, FxpError> {
        if sign_bits > 1 {
            return Err(FxpError::InvalidFormat(format!(
                "sign_bits must be 0 or 1, got {sign_bits}"
            )));
        }
        let total = sign_bits as u32 + digit_bits as u32 + fraction_bits as u32;
        if total == 0 || total > MAX_WIDTH as u32 {
            return Err(FxpError::InvalidFormat(format!(
                "total width must be in [1, {MAX_WIDTH}], got {total}"
            )));
        }
        Ok(Self { sign_bits, digit_bits, fraction_bits })
    }

    pub fn sign_bits(&self) -> u8 {
        self.sign_bits
    }

    pub fn digit_bits(&self) -> u8 {
        self.digit_bits
    }

    pub fn fraction_bits(&self) -> u8 {
        self.fraction_bits
    }

    /// Total word width in bits.
    pub fn width(&self) -> u8 {
        self.sign_bits + self.digit_bits + self.fraction_bits
    }

    pub fn is_signed(&self) -> bool {
        self.sign_bits == 1
    }

    /// Mask selecting the word's valid bits.
    pub fn mask(&self) -> u32 {
        width_mask(self.width())
    }

    /// Smallest representable value.
    pub fn min_value(&self) -> f64 {
        self.min_int() as f64 * self.ulp()
    }

    /// Largest representable value.
    pub fn max_value(&self) -> f64 {
        self.max_int() as f64 * self.ulp()
    }

    /// Weight of the least significant bit.
    pub fn ulp(&self) -> f64 {
        (-(self.fraction_bits as f64)).exp2()
    }

    fn min_int(&self) -> i64 {
        if self.is_signed() {
            -(1i64 << (self.width() - 1))
        } else {
            0
        }
    }

    fn max_int(&self) -> i64 {
        if self.is_signed() {
            (1i64 << (self.width() - 1)) - 1
        } else {
            (1i64 << self.width()) - 1
        }
    }
}

fn width_mask(width: u8) -> u32 {
    if width >= 32 {
        u32::MAX
    } else {
        (1u32 << width) - 1
    }
}

impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}.d{}.f{}", self.sign_bits, self.digit_bits, self.fraction_bits)
    }
}

impl FromStr for FixedPointFormat {
    type Err = FxpError;

    /// Parses the `"sS.dD.fF"` notation used in configs and reports.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || FxpError::InvalidFormat(format!("expected \"sS.dD.fF\", got {s:?}"));
        let mut parts = s.split('.');
        let mut field = |prefix: char| -> Result<u8, FxpError> {
            let part = parts.next().ok_or_else(err)?;
            let digits = part.strip_prefix(prefix).ok_or_else(err)?;
            digits.parse::<u8>().map_err(|_| err())
        };
        let sign = field('s')?;
        let digit = field('d')?;
        let fraction = field('f')?;
        if parts.next().is_some() {
            return Err(err());
        }
        Self::new(sign, digit, fraction)
    }
}

impl Serialize for FixedPointFormat {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FixedPointFormat {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(D::Error::custom)
    }
}

/// One register word: raw bits plus the format they are interpreted under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FixedPointValue {
    raw: u32,
    format: FixedPointFormat,
}

impl FixedPointValue {
    /// Wraps raw bits into a value; bits above the format width are dropped.
    pub fn from_raw(raw: u32, format: FixedPointFormat) -> Self {
        Self { raw: raw & format.mask(), format }
    }

    pub fn zero(format: FixedPointFormat) -> Self {
        Self { raw: 0, format }
    }

    pub fn raw(&self) -> u32 {
        self.raw
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    /// Signed (or unsigned) integer interpretation of the raw bits.
    pub fn as_int(&self) -> i64 {
        if self.format.is_signed() {
            let shift = 64 - self.format.width() as u32;
            (((self.raw as u64) << shift) as i64) >> shift
        } else {
            self.raw as i64
        }
    }

    pub fn bit(&self, index: u8) -> Result<bool, FxpError> {
        self.check_index(index)?;
        Ok(self.raw >> index & 1 == 1)
    }

    fn check_index(&self, index: u8) -> Result<(), FxpError> {
        if index >= self.format.width() {
            Err(FxpError::BitIndexOutOfRange { index, width: self.format.width() })
        } else {
            Ok(())
        }
    }
}

/// Quantizes a real number: scale by `2^fraction_bits`, floor, saturate.
///
/// Saturation absorbs any out-of-range input, so this never fails. NaN maps
/// to zero.
pub fn quantize(x: f64, format: FixedPointFormat) -> FixedPointValue {
    if x.is_nan() {
        return FixedPointValue::zero(format);
    }
    let scaled = (x * (format.fraction_bits as f64).exp2()).floor();
    let min = format.min_int();
    let max = format.max_int();
    let int = if scaled <= min as f64 {
        min
    } else if scaled >= max as f64 {
        max
    } else {
        scaled as i64
    };
    FixedPointValue::from_raw(int as u32, format)
}

/// Exact real value of a word. Inverse of [`quantize`] on representables.
pub fn to_real(v: FixedPointValue) -> f64 {
    v.as_int() as f64 * v.format.ulp()
}

/// Exact double-width product, fraction truncated (floor) to the output
/// format, integer part wrapped modulo the output width.
pub fn multiply(
    a: FixedPointValue,
    b: FixedPointValue,
    out: FixedPointFormat,
) -> FixedPointValue {
    multiply_checked(a, b, out).0
}

/// [`multiply`] plus a flag reporting whether the exact scaled product
/// wrapped out of the output format's range.
pub fn multiply_checked(
    a: FixedPointValue,
    b: FixedPointValue,
    out: FixedPointFormat,
) -> (FixedPointValue, bool) {
    let product = a.as_int() as i128 * b.as_int() as i128;
    let shift = a.format.fraction_bits as i32 + b.format.fraction_bits as i32
        - out.fraction_bits as i32;
    // Arithmetic right shift floors; left shift cannot overflow i128 here.
    let scaled = if shift >= 0 { product >> shift } else { product << -shift };
    let result = FixedPointValue::from_raw(scaled as u32, out);
    (result, result.as_int() as i128 != scaled)
}

/// Re-encodes a value under another format: the fraction is extended or
/// floor-truncated, the integer part wrapped into the new width. Exact
/// whenever the target is at least as wide in both directions.
pub fn convert(v: FixedPointValue, out: FixedPointFormat) -> FixedPointValue {
    convert_checked(v, out).0
}

/// [`convert`] plus a flag reporting whether the value's integer part no
/// longer fits (wrapped) under the new format.
pub fn convert_checked(v: FixedPointValue, out: FixedPointFormat) -> (FixedPointValue, bool) {
    let int = v.as_int() as i128;
    let shift = v.format.fraction_bits as i32 - out.fraction_bits as i32;
    let scaled = if shift >= 0 { int >> shift } else { int << -shift };
    let result = FixedPointValue::from_raw(scaled as u32, out);
    (result, result.as_int() as i128 != scaled)
}

/// Wrap-around two's-complement addition at the common format.
pub fn add(a: FixedPointValue, b: FixedPointValue) -> Result<FixedPointValue, FxpError> {
    if a.format != b.format {
        return Err(FxpError::FormatMismatch { lhs: a.format, rhs: b.format });
    }
    Ok(FixedPointValue::from_raw(a.raw.wrapping_add(b.raw), a.format))
}

/// Like [`add`], additionally reporting whether the true sum wrapped out of
/// the representable range. The wrap flag feeds overflow accounting; the
/// returned value is the plain wrapped result either way.
pub fn add_checked(
    a: FixedPointValue,
    b: FixedPointValue,
) -> Result<(FixedPointValue, bool), FxpError> {
    let exact = a.as_int() + b.as_int();
    let sum = add(a, b)?;
    Ok((sum, sum.as_int() != exact))
}

/// Inverts bit `index`, leaving all other bits unchanged.
pub fn flip_bit(v: FixedPointValue, index: u8) -> Result<FixedPointValue, FxpError> {
    v.check_index(index)?;
    Ok(FixedPointValue::from_raw(v.raw ^ (1 << index), v.format))
}

/// Forces bit `index` to `level`. Idempotent; changes the word iff the
/// stored bit differs from the forced level.
pub fn stuck_at(v: FixedPointValue, index: u8, level: bool) -> Result<FixedPointValue, FxpError> {
    v.check_index(index)?;
    let raw = if level { v.raw | (1 << index) } else { v.raw & !(1 << index) };
    Ok(FixedPointValue::from_raw(raw, v.format))
}

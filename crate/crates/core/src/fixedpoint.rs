//! Parametric Q-format fixed-point emulation.
//!
//! Values are carried as scaled integers (`raw`, worth `raw * 2^-fl`) so all
//! arithmetic is bit-exact and platform independent. Binary operations use
//! double-width (i128) intermediates with a single rounding at the end.
//!
//! The rest of the pipeline quantizes through the [`Arith`] hook: float mode
//! is a passthrough, fixed mode rounds after every operation, and the
//! recording hook collects value ranges for integer-bit allocation. All three
//! share one kernel code path, so only arithmetic precision differs between
//! a floating and a fixed run.

use std::cell::Cell;
use std::collections::BTreeMap;

use crate::{Error, Result};

/// Rounding applied when dropping fraction bits.
///
/// `Truncate` rounds toward zero (sign-magnitude bit drop), not toward
/// negative infinity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rounding {
    #[default]
    NearestTiesAway,
    Truncate,
}

/// Behavior when a result exceeds the representable range.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Overflow {
    #[default]
    Saturate,
    Wrap,
}

/// Two's-complement Q-format: `word_length` total bits of which
/// `fraction_length` sit right of the binary point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QFormat {
    pub word_length: u32,
    pub fraction_length: u32,
    pub rounding: Rounding,
    pub overflow: Overflow,
}

impl QFormat {
    /// Validates and builds a format. Word length is capped at 63 so raw
    /// values fit an i64 with intermediate headroom.
    pub fn new(word_length: u32, fraction_length: u32, rounding: Rounding, overflow: Overflow) -> Result<Self> {
        if !(2..=63).contains(&word_length) {
            return Err(Error::Config(format!("word_length {word_length} outside [2, 63]")));
        }
        if fraction_length > word_length - 1 {
            return Err(Error::Config(format!(
                "fraction_length {fraction_length} exceeds word_length-1 = {}",
                word_length - 1
            )));
        }
        Ok(QFormat { word_length, fraction_length, rounding, overflow })
    }

    /// Saturating format with round-to-nearest, the pipeline default.
    pub fn saturating(word_length: u32, fraction_length: u32) -> Result<Self> {
        Self::new(word_length, fraction_length, Rounding::NearestTiesAway, Overflow::Saturate)
    }

    pub fn raw_min(&self) -> i64 {
        -(1i64 << (self.word_length - 1))
    }

    pub fn raw_max(&self) -> i64 {
        (1i64 << (self.word_length - 1)) - 1
    }

    /// Largest representable value, `2^(wl-1-fl) - 2^-fl`.
    pub fn value_max(&self) -> f64 {
        self.raw_max() as f64 * self.step()
    }

    /// Smallest representable value, `-2^(wl-1-fl)`.
    pub fn value_min(&self) -> f64 {
        self.raw_min() as f64 * self.step()
    }

    /// Quantization step `2^-fl`.
    pub fn step(&self) -> f64 {
        exp2i(-(self.fraction_length as i32))
    }
}

fn exp2i(e: i32) -> f64 {
    (e as f64).exp2()
}

/// A quantized value: worth `raw * 2^-fraction_length`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FixedValue {
    pub raw: i64,
    pub format: QFormat,
}

impl FixedValue {
    pub fn value(&self) -> f64 {
        self.raw as f64 * self.format.step()
    }
}

/// Drops `shift` low bits of `v` under the given rounding mode.
fn shift_round(v: i128, shift: u32, rounding: Rounding) -> i128 {
    if shift == 0 {
        return v;
    }
    let d = 1i128 << shift;
    match rounding {
        Rounding::Truncate => v / d,
        Rounding::NearestTiesAway => {
            let half = d >> 1;
            if v >= 0 {
                (v + half) / d
            } else {
                (v - half) / d
            }
        }
    }
}

/// Applies the overflow policy, mapping an ideal raw integer into range.
fn apply_overflow(v: i128, format: QFormat) -> i64 {
    let min = format.raw_min() as i128;
    let max = format.raw_max() as i128;
    match format.overflow {
        Overflow::Saturate => v.clamp(min, max) as i64,
        Overflow::Wrap => {
            let m = 1i128 << format.word_length;
            let r = ((v - min).rem_euclid(m)) + min;
            r as i64
        }
    }
}

/// Quantizes an f64 onto the format's grid. NaN is a domain error;
/// infinities saturate (wrap maps them to 0, all low bits being zero).
pub fn quantize(x: f64, format: QFormat) -> Result<FixedValue> {
    if x.is_nan() {
        return Err(Error::Domain("quantize of NaN".into()));
    }
    let scaled = x * exp2i(format.fraction_length as i32);
    let rounded = match format.rounding {
        Rounding::NearestTiesAway => scaled.round(),
        Rounding::Truncate => scaled.trunc(),
    };
    // Beyond i128 every f64 integer is a multiple of 2^75 or more, so all
    // word-length-sized low bits are zero.
    let raw = if rounded >= 1.7e38 {
        match format.overflow {
            Overflow::Saturate => format.raw_max(),
            Overflow::Wrap => apply_overflow(0, format),
        }
    } else if rounded <= -1.7e38 {
        match format.overflow {
            Overflow::Saturate => format.raw_min(),
            Overflow::Wrap => apply_overflow(0, format),
        }
    } else {
        apply_overflow(rounded as i128, format)
    };
    Ok(FixedValue { raw, format })
}

/// Adds two fixed values into `out`: exact wide alignment, one rounding.
pub fn fx_add(a: FixedValue, b: FixedValue, out: QFormat) -> FixedValue {
    let common = a.format.fraction_length.max(b.format.fraction_length);
    let va = (a.raw as i128) << (common - a.format.fraction_length);
    let vb = (b.raw as i128) << (common - b.format.fraction_length);
    let sum = va + vb;
    let raw = rescale(sum, common, out);
    FixedValue { raw, format: out }
}

/// Multiplies two fixed values into `out`: exact double-width product, one
/// rounding.
pub fn fx_mul(a: FixedValue, b: FixedValue, out: QFormat) -> FixedValue {
    let prod = a.raw as i128 * b.raw as i128;
    let frac = a.format.fraction_length + b.format.fraction_length;
    let raw = rescale(prod, frac, out);
    FixedValue { raw, format: out }
}

/// Moves a wide raw value from `from_fl` fraction bits to `out`'s format.
fn rescale(v: i128, from_fl: u32, out: QFormat) -> i64 {
    let ideal = if out.fraction_length >= from_fl {
        let k = out.fraction_length - from_fl;
        match v.checked_mul(1i128 << k) {
            Some(w) => w,
            // The exact value no longer fits i128, so it is far outside the
            // word: saturate by sign, or reduce modulo 2^wl before shifting
            // (the shifted-out high bits cannot reach the low word anyway).
            None => match out.overflow {
                Overflow::Saturate => {
                    return if v > 0 { out.raw_max() } else { out.raw_min() };
                }
                Overflow::Wrap => {
                    if k >= out.word_length {
                        0
                    } else {
                        v.rem_euclid(1i128 << out.word_length) << k
                    }
                }
            },
        }
    } else {
        shift_round(v, from_fl - out.fraction_length, out.rounding)
    };
    apply_overflow(ideal, out)
}

/// Quantize-after-every-operation hook threaded through the numeric kernels.
pub trait Arith {
    /// Rounds an operation result onto the active grid (identity in float
    /// mode).
    fn q(&self, x: f64) -> f64;

    /// Reciprocal as the hardware would produce it: exact division in float
    /// mode, Newton-Raphson with a 16-entry seed table in fixed mode.
    fn recip(&self, x: f64) -> f64 {
        self.q(1.0 / x)
    }
}

// References forward both methods so `&dyn Arith` keeps the implementor's
// reciprocal instead of falling back to the default.
impl<T: Arith + ?Sized> Arith for &T {
    fn q(&self, x: f64) -> f64 {
        (**self).q(x)
    }
    fn recip(&self, x: f64) -> f64 {
        (**self).recip(x)
    }
}

/// Arithmetic mode for one variable group.
#[derive(Clone, Copy, Debug)]
pub enum Quantizer {
    Float,
    Fixed(QFormat),
}

impl Quantizer {
    pub fn is_fixed(&self) -> bool {
        matches!(self, Quantizer::Fixed(_))
    }
}

/// Newton-Raphson iterations used for pipeline reciprocals in fixed mode.
pub const NR_PIPELINE_ITERS: u32 = 3;

impl Arith for Quantizer {
    #[inline]
    fn q(&self, x: f64) -> f64 {
        match self {
            Quantizer::Float => x,
            Quantizer::Fixed(f) => match quantize(x, *f) {
                Ok(v) => v.value(),
                // NaN only reaches here on already-broken inputs; propagate.
                Err(_) => f64::NAN,
            },
        }
    }

    fn recip(&self, x: f64) -> f64 {
        match self {
            Quantizer::Float => 1.0 / x,
            Quantizer::Fixed(_) => nr_recip_seeded(x, NR_PIPELINE_ITERS, self),
        }
    }
}

/// Newton-Raphson reciprocal with the fixed-mode lookup seed, every step
/// quantized through `a`. Shared by the quantized LLL and K-best paths.
pub fn nr_recip_seeded<A: Arith>(x: f64, iters: u32, a: &A) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return a.q(if x < 0.0 { f64::NEG_INFINITY } else { f64::INFINITY });
    }
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let ax = x.abs();
    // Normalize ax = m * 2^e with m in [1,2); shifts are exact in hardware.
    let e = ax.log2().floor() as i32;
    let m = ax * exp2i(-e);
    let idx = (((m - 1.0) * 16.0) as usize).min(15);
    let mid = 1.0 + (idx as f64 + 0.5) / 16.0;
    let mut r = a.q((1.0 / mid) * exp2i(-e));
    for _ in 0..iters {
        let t = a.q(x.abs() * r);
        let u = a.q(2.0 - t);
        r = a.q(r * u);
    }
    sign * r
}

/// One observed variable range.
#[derive(Clone, Debug)]
pub struct RangeEntry {
    pub name: String,
    pub min: f64,
    pub max: f64,
    /// Integer bits (sign included) needed to hold the observed range.
    pub int_bits: u32,
}

/// Range-profiling output: one entry per observed variable name.
#[derive(Clone, Debug, Default)]
pub struct RangeProfile {
    pub entries: Vec<RangeEntry>,
}

impl RangeProfile {
    pub fn get(&self, name: &str) -> Option<&RangeEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Integer bits (sign included) for a magnitude: ceil(log2(m+1)) plus one
/// sign bit, floored at 2 so a degenerate all-zero observation still gets a
/// guard bit.
pub fn required_int_bits(magnitude: f64) -> u32 {
    let m = magnitude.abs();
    let bits = (m + 1.0).log2().ceil().max(0.0) as u32;
    (bits + 1).max(2)
}

/// Builds a range profile from a trace of named observations.
pub fn profile_ranges(observations: &[(&str, f64)]) -> Result<RangeProfile> {
    if observations.is_empty() {
        return Err(Error::Domain("empty observation trace".into()));
    }
    let mut acc: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
    for &(name, v) in observations {
        if v.is_nan() {
            return Err(Error::Domain(format!("NaN observation for {name}")));
        }
        let e = acc.entry(name).or_insert((v, v));
        e.0 = e.0.min(v);
        e.1 = e.1.max(v);
    }
    let entries = acc
        .into_iter()
        .map(|(name, (min, max))| RangeEntry {
            name: name.to_string(),
            min,
            max,
            int_bits: required_int_bits(min.abs().max(max.abs())),
        })
        .collect();
    Ok(RangeProfile { entries })
}

/// Min/max recorder for one variable group, used by the profiling hook.
#[derive(Debug)]
pub struct RangeTracker {
    min: Cell<f64>,
    max: Cell<f64>,
}

impl Default for RangeTracker {
    fn default() -> Self {
        RangeTracker { min: Cell::new(f64::INFINITY), max: Cell::new(f64::NEG_INFINITY) }
    }
}

impl RangeTracker {
    pub fn observe(&self, x: f64) {
        if x.is_finite() {
            self.min.set(self.min.get().min(x));
            self.max.set(self.max.get().max(x));
        }
    }

    /// (min, max) seen so far; None if nothing was observed.
    pub fn range(&self) -> Option<(f64, f64)> {
        let (lo, hi) = (self.min.get(), self.max.get());
        (lo <= hi).then_some((lo, hi))
    }

    pub fn merge(&self, other: (f64, f64)) {
        self.observe(other.0);
        self.observe(other.1);
    }
}

/// Profiling hook: passes values through untouched while recording ranges.
pub struct Recorder<'a>(pub &'a RangeTracker);

impl Arith for Recorder<'_> {
    fn q(&self, x: f64) -> f64 {
        self.0.observe(x);
        x
    }

    fn recip(&self, x: f64) -> f64 {
        let r = 1.0 / x;
        self.0.observe(r);
        r
    }
}

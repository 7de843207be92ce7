//! Experiment configuration: TOML schema, validation, and the mapping from
//! a word length to per-group fixed-point formats.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::fixedpoint::{required_int_bits, Overflow, QFormat, Quantizer, Rounding};
use crate::model::Modulation;
use crate::softdec::LdpcCode;
use crate::{Error, Result};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mimo: MimoSection,
    pub sweep: SweepSection,
    #[serde(default)]
    pub coding: Option<CodingSection>,
    #[serde(default)]
    pub arithmetic: ArithmeticSection,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MimoSection {
    pub n_tx: usize,
    pub n_rx: usize,
    pub modulation: Modulation,
    /// Survivors kept per tree level.
    pub k: usize,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Strictly increasing grid, dB.
    pub snr_db: Vec<f64>,
    #[serde(default = "default_outer")]
    pub max_outer_iterations: usize,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Hard cap on trials at one grid point.
    pub trials_per_point: u64,
    #[serde(default = "default_target_errors")]
    pub target_bit_errors: u64,
    #[serde(default = "default_min_bits")]
    pub min_bits_per_point: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodingSection {
    /// Parity-check file, relative paths resolved against the config file.
    pub parity: PathBuf,
    #[serde(default = "default_ldpc_iters")]
    pub max_ldpc_iterations: usize,
    #[serde(default = "default_scale")]
    pub min_sum_scale: f64,
    #[serde(default = "default_clip")]
    pub llr_clip: f64,
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ArithmeticMode {
    #[default]
    Float,
    Fixed,
}

#[derive(Clone, Debug, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ArithmeticSection {
    #[serde(default)]
    pub mode: ArithmeticMode,
    /// Shared word length when formats are derived by range profiling.
    #[serde(default = "default_word_length")]
    pub word_length: u32,
    /// Explicit per-group formats; overrides profiling entirely.
    #[serde(default)]
    pub formats: Option<ExplicitFormats>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitFormats {
    pub channel: FormatSpec,
    pub lll: FormatSpec,
    pub ped: FormatSpec,
    pub llr: FormatSpec,
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormatSpec {
    pub word_length: u32,
    pub fraction_length: u32,
    #[serde(default)]
    pub rounding: Rounding,
    #[serde(default)]
    pub overflow: Overflow,
}

impl FormatSpec {
    pub fn to_format(self) -> Result<QFormat> {
        QFormat::new(self.word_length, self.fraction_length, self.rounding, self.overflow)
    }
}

fn default_outer() -> usize {
    4
}
fn default_epsilon() -> f64 {
    1e-2
}
fn default_target_errors() -> u64 {
    200
}
fn default_min_bits() -> u64 {
    20_000
}
fn default_ldpc_iters() -> usize {
    25
}
fn default_scale() -> f64 {
    0.75
}
fn default_clip() -> f64 {
    25.0
}
fn default_word_length() -> u32 {
    16
}

impl ExperimentConfig {
    pub fn from_str_validated(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates; relative parity paths become absolute against
    /// the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("read {}: {e}", path.display())))?;
        let mut cfg = Self::from_str_validated(&text)?;
        if let Some(coding) = cfg.coding.as_mut() {
            if coding.parity.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                coding.parity = base.join(&coding.parity);
            }
        }
        Ok(cfg)
    }

    pub fn bits_per_use(&self) -> usize {
        self.mimo.n_tx * self.mimo.modulation.bits_per_symbol()
    }

    fn validate(&self) -> Result<()> {
        let m = &self.mimo;
        if m.n_tx == 0 || m.n_rx == 0 {
            return Err(Error::Config("antenna counts must be positive".into()));
        }
        if m.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        let s = &self.sweep;
        if s.snr_db.is_empty() {
            return Err(Error::Config("snr_db grid is empty".into()));
        }
        if s.snr_db.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("snr_db grid must be strictly increasing".into()));
        }
        if s.trials_per_point == 0 {
            return Err(Error::Config("trials_per_point must be positive".into()));
        }
        if s.max_outer_iterations == 0 {
            return Err(Error::Config("max_outer_iterations must be positive".into()));
        }
        if !(s.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be positive".into()));
        }
        if let Some(c) = &self.coding {
            if c.max_ldpc_iterations == 0 {
                return Err(Error::Config("max_ldpc_iterations must be positive".into()));
            }
            if !(0.0 < c.min_sum_scale && c.min_sum_scale <= 1.0) {
                return Err(Error::Config(format!("min_sum_scale {} outside (0, 1]", c.min_sum_scale)));
            }
            if !(c.llr_clip > 0.0) {
                return Err(Error::Config("llr_clip must be positive".into()));
            }
        }
        let a = &self.arithmetic;
        if a.mode == ArithmeticMode::Fixed && a.formats.is_none() && !(2..=63).contains(&a.word_length) {
            return Err(Error::Config(format!("word_length {} outside 2..=63", a.word_length)));
        }
        Ok(())
    }

    /// Loads the parity code and checks it tiles the MIMO frame.
    pub fn load_code(&self) -> Result<Option<LdpcCode>> {
        let Some(c) = &self.coding else { return Ok(None) };
        let code = LdpcCode::load(&c.parity)?;
        let per_use = self.bits_per_use();
        if code.n() % per_use != 0 {
            return Err(Error::Config(format!(
                "block length {} is not a whole number of channel uses of {per_use} bits",
                code.n()
            )));
        }
        Ok(Some(code))
    }
}

/// One quantizer per pipeline stage group.
#[derive(Clone, Copy, Debug)]
pub struct GroupFormats {
    pub channel: QFormat,
    pub lll: QFormat,
    pub ped: QFormat,
    pub llr: QFormat,
}

impl GroupFormats {
    pub fn from_explicit(f: &ExplicitFormats) -> Result<Self> {
        Ok(GroupFormats {
            channel: f.channel.to_format()?,
            lll: f.lll.to_format()?,
            ped: f.ped.to_format()?,
            llr: f.llr.to_format()?,
        })
    }

    /// Shared word length, per-group fraction length chosen so the profiled
    /// magnitude fits: fraction = word_length - int_bits(max |value|).
    pub fn uniform(word_length: u32, ranges: &GroupRanges) -> Result<Self> {
        let fit = |label: &str, magnitude: f64| -> Result<QFormat> {
            let int_bits = required_int_bits(magnitude);
            if int_bits >= word_length {
                return Err(Error::Config(format!(
                    "{label} group needs {int_bits} integer bits; word length {word_length} leaves no fraction"
                )));
            }
            QFormat::new(word_length, word_length - int_bits, Rounding::NearestTiesAway, Overflow::Saturate)
        };
        Ok(GroupFormats {
            channel: fit("channel", ranges.channel)?,
            lll: fit("lll", ranges.lll)?,
            ped: fit("ped", ranges.ped)?,
            llr: fit("llr", ranges.llr)?,
        })
    }

    pub fn quantizers(&self) -> GroupQuantizers {
        GroupQuantizers {
            channel: Quantizer::Fixed(self.channel),
            lll: Quantizer::Fixed(self.lll),
            ped: Quantizer::Fixed(self.ped),
            llr: Quantizer::Fixed(self.llr),
        }
    }
}

/// Peak absolute values observed per group during a profiling pass.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroupRanges {
    pub channel: f64,
    pub lll: f64,
    pub ped: f64,
    pub llr: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct GroupQuantizers {
    pub channel: Quantizer,
    pub lll: Quantizer,
    pub ped: Quantizer,
    pub llr: Quantizer,
}

impl GroupQuantizers {
    pub fn float() -> Self {
        GroupQuantizers {
            channel: Quantizer::Float,
            lll: Quantizer::Float,
            ped: Quantizer::Float,
            llr: Quantizer::Float,
        }
    }
}

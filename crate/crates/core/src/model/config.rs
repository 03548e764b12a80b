use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{config_err, Error, Result};
use crate::tensor::DType;

/// Order in which the eight directional layers are applied.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TdeOrder {
    /// Ho, Ve, Co, Ho, Ve, Co, Ho, Ve from input to output.
    HorizontalFirst,
    /// The reverse sequence: Ve, Ho, Co, Ve, Ho, Co, Ve, Ho.
    VerticalFirst,
}

impl fmt::Display for TdeOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TdeOrder::HorizontalFirst => "horizontal-first",
            TdeOrder::VerticalFirst => "vertical-first",
        })
    }
}

impl FromStr for TdeOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "horizontal-first" => Ok(TdeOrder::HorizontalFirst),
            "vertical-first" => Ok(TdeOrder::VerticalFirst),
            _ => Err(config_err!("unknown tde order {s:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub channels: usize,
    pub heads: usize,
    pub gte_window: usize,
    pub tde_window: usize,
    pub patch: usize,
    pub tde_patch: usize,
    pub shift: usize,
    pub rate: usize,
    pub gte_rel_bias: bool,
    pub tde_rel_bias: bool,
    pub tde_order: TdeOrder,
    pub precision: DType,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::paper()
    }
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            in_channels: 1,
            channels: 64,
            heads: 4,
            gte_window: 96,
            tde_window: 48,
            patch: 6,
            tde_patch: 6,
            shift: 24,
            rate: 3,
            gte_rel_bias: false,
            tde_rel_bias: true,
            tde_order: TdeOrder::HorizontalFirst,
            precision: DType::F32,
        }
    }

    pub fn toy() -> Self {
        ModelConfig {
            channels: 8,
            heads: 2,
            gte_window: 16,
            tde_window: 8,
            patch: 2,
            tde_patch: 2,
            shift: 4,
            ..ModelConfig::paper()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(ModelConfig::paper()),
            "toy" => Ok(ModelConfig::toy()),
            _ => Err(config_err!("unknown preset {name:?} (expected paper or toy)")),
        }
    }

    /// Token dimension in the global blocks.
    pub fn gte_dim(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    pub fn tde_dim(&self) -> usize {
        self.channels * self.tde_patch * self.tde_patch
    }

    /// Tokens per side of a global window.
    pub fn gte_grid(&self) -> usize {
        self.gte_window / self.patch
    }

    pub fn tde_grid(&self) -> usize {
        self.tde_window / self.tde_patch
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.in_channels, 1 | 3) {
            return Err(config_err!("in_channels must be 1 or 3, got {}", self.in_channels));
        }
        if self.channels == 0 || self.heads == 0 {
            return Err(config_err!("channels and heads must be positive"));
        }
        if self.gte_window < 2 || self.tde_window < 2 {
            return Err(config_err!("window sizes must be at least 2"));
        }
        if self.patch == 0 || !self.gte_window.is_multiple_of(self.patch) {
            return Err(config_err!("patch {} does not divide gte_window {}", self.patch, self.gte_window));
        }
        if self.tde_patch == 0 || !self.tde_window.is_multiple_of(self.tde_patch) {
            return Err(config_err!(
                "tde_patch {} does not divide tde_window {}",
                self.tde_patch,
                self.tde_window
            ));
        }
        if self.shift >= self.tde_window {
            return Err(config_err!("shift {} must be below tde_window {}", self.shift, self.tde_window));
        }
        for (what, d) in [("gte", self.gte_dim()), ("tde", self.tde_dim())] {
            if d % self.heads != 0 {
                return Err(config_err!("{what} token dimension {d} is not divisible by {} heads", self.heads));
            }
        }
        if self.rate == 0 {
            return Err(config_err!("dilation rate must be at least 1"));
        }
        Ok(())
    }

    /// Canonical `key=value` pairs, sorted by key.
    pub fn to_pairs(&self) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("in_channels", self.in_channels.to_string()),
            ("channels", self.channels.to_string()),
            ("heads", self.heads.to_string()),
            ("gte_window", self.gte_window.to_string()),
            ("tde_window", self.tde_window.to_string()),
            ("patch", self.patch.to_string()),
            ("tde_patch", self.tde_patch.to_string()),
            ("shift", self.shift.to_string()),
            ("rate", self.rate.to_string()),
            ("gte_rel_bias", self.gte_rel_bias.to_string()),
            ("tde_rel_bias", self.tde_rel_bias.to_string()),
            ("tde_order", self.tde_order.to_string()),
            ("precision", self.precision.name().to_string()),
        ])
    }

    /// Sets one field from its text form. `shift` is not re-derived when windows change.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num(key: &str, v: &str) -> Result<usize> {
            v.parse().map_err(|_| config_err!("{key}: expected a non-negative integer, got {v:?}"))
        }
        fn flag(key: &str, v: &str) -> Result<bool> {
            v.parse().map_err(|_| config_err!("{key}: expected true or false, got {v:?}"))
        }
        match key {
            "in_channels" => self.in_channels = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "gte_window" => self.gte_window = num(key, value)?,
            "tde_window" => self.tde_window = num(key, value)?,
            "patch" => self.patch = num(key, value)?,
            "tde_patch" => self.tde_patch = num(key, value)?,
            "shift" => self.shift = num(key, value)?,
            "rate" => self.rate = num(key, value)?,
            "gte_rel_bias" => self.gte_rel_bias = flag(key, value)?,
            "tde_rel_bias" => self.tde_rel_bias = flag(key, value)?,
            "tde_order" => self.tde_order = value.parse()?,
            "precision" => {
                self.precision = DType::parse(value).ok_or_else(|| config_err!("precision: expected f32 or f64, got {value:?}"))?
            }
            _ => return Err(config_err!("unknown model setting {key:?}")),
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::paper().validate().unwrap();
        ModelConfig::toy().validate().unwrap();
        assert_eq!(ModelConfig::paper().gte_dim(), 2304);
        assert_eq!(ModelConfig::paper().gte_grid() * ModelConfig::paper().gte_grid(), 256);
    }

    #[test]
    fn text_form_round_trips() {
        let mut c = ModelConfig::toy();
        c.tde_order = TdeOrder::VerticalFirst;
        c.precision = DType::F64;
        let mut back = ModelConfig::paper();
        for (k, v) in c.to_pairs() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(back, c);
    }

    #[test]
    fn invalid_settings_are_rejected() {
        let mut c = ModelConfig::toy();
        c.patch = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.shift = 8;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::toy();
        c.heads = 3;
        assert!(c.validate().is_err());
        assert!(ModelConfig::toy().set("bogus", "1").is_err());
        assert!(ModelConfig::toy().set("heads", "-1").is_err());
    }
}

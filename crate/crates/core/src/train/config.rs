use std::collections::BTreeMap;

use super::loss::LossMode;
use super::optim::Adam;
use crate::error::{config_err, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Noise standard deviation on the 0–255 scale.
    pub sigma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub base_lr: f64,
    pub adam: Adam,
    pub patch_size: usize,
    pub patches_per_image: usize,
    pub seed: u64,
    pub augment: bool,
    pub loss: LossMode,
    /// Stop after this many optimizer steps (0: run every epoch).
    pub max_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            sigma: 25.0,
            batch_size: 8,
            epochs: 28,
            base_lr: 1e-4,
            adam: Adam::default(),
            patch_size: 96,
            patches_per_image: 48,
            seed: 0,
            augment: true,
            loss: LossMode::PerPixelMean,
            max_steps: 0,
        }
    }
}

impl TrainConfig {
    /// Settings used with the toy model: a higher rate and 32-pixel patches, so
    /// every crop spans several global windows.
    pub fn toy() -> Self {
        TrainConfig {
            patch_size: 32,
            patches_per_image: 8,
            base_lr: 2e-3,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(config_err!("sigma must be finite and non-negative, got {}", self.sigma));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.patch_size == 0 || self.patches_per_image == 0 {
            return Err(config_err!("batch, epochs, patch_size and patches_per_image must be positive"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(config_err!("learning rate must be positive, got {}", self.base_lr));
        }
        let Adam { beta1, beta2, eps } = self.adam;
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps >= 0.0) {
            return Err(config_err!("adam betas must lie in [0, 1) and eps must be non-negative"));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> BTreeMap<&'static str, String> {
        BTreeMap::from([
            ("sigma", self.sigma.to_string()),
            ("batch", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr", self.base_lr.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("patch_size", self.patch_size.to_string()),
            ("patches_per_image", self.patches_per_image.to_string()),
            ("seed", self.seed.to_string()),
            ("augment", self.augment.to_string()),
            ("loss", self.loss.name().to_string()),
            ("max_steps", self.max_steps.to_string()),
        ])
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: std::str::FromStr>(key: &str, v: &str) -> Result<V> {
            v.parse().map_err(|_| config_err!("{key}: cannot parse {v:?}"))
        }
        match key {
            "sigma" => self.sigma = parse(key, value)?,
            "batch" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr" => self.base_lr = parse(key, value)?,
            "beta1" => self.adam.beta1 = parse(key, value)?,
            "beta2" => self.adam.beta2 = parse(key, value)?,
            "adam_eps" => self.adam.eps = parse(key, value)?,
            "patch_size" => self.patch_size = parse(key, value)?,
            "patches_per_image" => self.patches_per_image = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "augment" => self.augment = parse(key, value)?,
            "loss" => {
                self.loss = LossMode::parse(value).ok_or_else(|| config_err!("loss: expected per-pixel-mean or raw-sum"))?
            }
            "max_steps" => self.max_steps = parse(key, value)?,
            _ => return Err(config_err!("unknown train setting {key:?}")),
        }
        Ok(())
    }
}

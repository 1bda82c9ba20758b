use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::LrSchedule;

/// Architecture and training hyperparameters.
///
/// Serialized as a flat `key = value` file whose keys are the field names;
/// list values are comma-separated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonetConfig {
    /// Edge length of the cubic input patch.
    pub patch_size: usize,
    /// Kernel size of each parallel input convolution.
    pub scales: Vec<usize>,
    pub filters_per_scale: usize,
    /// Widths of the fully-connected chain; the last entry is the class count.
    pub fc_sizes: Vec<usize>,
    pub dropout: f64,
    pub online_epochs: usize,
    pub online_lr: f64,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub pretrain_drops: Vec<usize>,
    pub pretrain_drop_factor: f64,
    /// Patches drawn per class per volume in each pre-training epoch.
    pub pretrain_samples_per_class: usize,
    /// Minibatch size; `0` selects the whole set when it has at most
    /// `2^14` samples and `2^12`-sample minibatches otherwise.
    pub batch_size: usize,
    pub momentum: f64,
    pub seed: u64,
}

impl Default for MonetConfig {
    fn default() -> Self {
        MonetConfig {
            patch_size: 9,
            scales: vec![1, 3, 5, 9],
            filters_per_scale: 32,
            fc_sizes: vec![32, 16, 2],
            dropout: 0.3,
            online_epochs: 200,
            online_lr: 1e-2,
            pretrain_epochs: 50,
            pretrain_lr: 1e-3,
            pretrain_drops: vec![35, 45],
            pretrain_drop_factor: 0.1,
            pretrain_samples_per_class: 256,
            batch_size: 0,
            momentum: 0.0,
            seed: 0,
        }
    }
}

impl MonetConfig {
    /// The single-scale ablation: one `patch_size` kernel carrying all
    /// `scales * filters` filters.
    pub fn no_multiscale() -> Self {
        let base = MonetConfig::default();
        MonetConfig {
            scales: vec![base.patch_size],
            filters_per_scale: base.filters_per_scale * base.scales.len(),
            ..base
        }
    }

    pub fn feature_width(&self) -> usize {
        self.scales.len() * self.filters_per_scale
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.patch_size == 0 || self.patch_size % 2 == 0 {
            return bad(format!("patch_size must be odd, got {}", self.patch_size));
        }
        if self.scales.is_empty() {
            return bad("scales must not be empty".into());
        }
        for &k in &self.scales {
            if k % 2 == 0 || k > self.patch_size {
                return bad(format!(
                    "scale {k} must be odd and at most patch_size {}",
                    self.patch_size
                ));
            }
        }
        if self.filters_per_scale == 0 {
            return bad("filters_per_scale must be positive".into());
        }
        if self.fc_sizes.last() != Some(&2) || self.fc_sizes.contains(&0) {
            return bad(format!("fc_sizes must be positive and end in 2, got {:?}", self.fc_sizes));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must be in [0, 1), got {}", self.dropout));
        }
        self.online_schedule().validate()?;
        self.pretrain_schedule().validate()?;
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }

    pub fn online_schedule(&self) -> LrSchedule {
        LrSchedule::Cosine {
            lr0: self.online_lr,
            epochs: self.online_epochs,
        }
    }

    pub fn pretrain_schedule(&self) -> LrSchedule {
        LrSchedule::Step {
            lr0: self.pretrain_lr,
            drops: self.pretrain_drops.clone(),
            factor: self.pretrain_drop_factor,
        }
    }

    pub fn effective_batch_size(&self, samples: usize) -> usize {
        match self.batch_size {
            0 if samples <= 1 << 14 => samples.max(1),
            0 => 1 << 12,
            n => n,
        }
    }

    pub fn to_kv_string(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut s = String::new();
        let _ = writeln!(s, "patch_size = {}", self.patch_size);
        let _ = writeln!(s, "scales = {}", list(&self.scales));
        let _ = writeln!(s, "filters_per_scale = {}", self.filters_per_scale);
        let _ = writeln!(s, "fc_sizes = {}", list(&self.fc_sizes));
        let _ = writeln!(s, "dropout = {}", self.dropout);
        let _ = writeln!(s, "online_epochs = {}", self.online_epochs);
        let _ = writeln!(s, "online_lr = {}", self.online_lr);
        let _ = writeln!(s, "pretrain_epochs = {}", self.pretrain_epochs);
        let _ = writeln!(s, "pretrain_lr = {}", self.pretrain_lr);
        let _ = writeln!(s, "pretrain_drops = {}", list(&self.pretrain_drops));
        let _ = writeln!(s, "pretrain_drop_factor = {}", self.pretrain_drop_factor);
        let _ = writeln!(s, "pretrain_samples_per_class = {}", self.pretrain_samples_per_class);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "momentum = {}", self.momentum);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }

    /// Parses a `key = value` file. Unset keys keep their defaults.
    pub fn from_kv_str(text: &str) -> Result<Self> {
        let mut cfg = MonetConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| Error::Parse { line: n + 1, msg };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| err(format!("bad number {v:?} for {key}")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| err(format!("bad integer {v:?} for {key}")));
            let list = |v: &str| -> Result<Vec<usize>> {
                if v.is_empty() {
                    return Ok(Vec::new());
                }
                v.split(',').map(|t| int(t.trim())).collect()
            };
            match key {
                "patch_size" => cfg.patch_size = int(value)?,
                "scales" => cfg.scales = list(value)?,
                "filters_per_scale" => cfg.filters_per_scale = int(value)?,
                "fc_sizes" => cfg.fc_sizes = list(value)?,
                "dropout" => cfg.dropout = num(value)?,
                "online_epochs" => cfg.online_epochs = int(value)?,
                "online_lr" => cfg.online_lr = num(value)?,
                "pretrain_epochs" => cfg.pretrain_epochs = int(value)?,
                "pretrain_lr" => cfg.pretrain_lr = num(value)?,
                "pretrain_drops" => cfg.pretrain_drops = list(value)?,
                "pretrain_drop_factor" => cfg.pretrain_drop_factor = num(value)?,
                "pretrain_samples_per_class" => cfg.pretrain_samples_per_class = int(value)?,
                "batch_size" => cfg.batch_size = int(value)?,
                "momentum" => cfg.momentum = num(value)?,
                "seed" => {
                    cfg.seed = value
                        .parse()
                        .map_err(|_| err(format!("bad seed {value:?}")))?
                }
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MonetConfig::from_kv_str(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = MonetConfig::default();
        c.validate().unwrap();
        assert_eq!(c.feature_width(), 128);
        let ablation = MonetConfig::no_multiscale();
        ablation.validate().unwrap();
        assert_eq!(ablation.scales, vec![9]);
        assert_eq!(ablation.feature_width(), 128);
    }

    #[test]
    fn kv_round_trip() {
        let c = MonetConfig {
            scales: vec![1, 3],
            seed: 42,
            online_lr: 0.05,
            ..Default::default()
        };
        assert_eq!(MonetConfig::from_kv_str(&c.to_kv_string()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(MonetConfig::from_kv_str("scales = 1,4").is_err());
        assert!(MonetConfig::from_kv_str("scales = 11").is_err());
        assert!(MonetConfig::from_kv_str("fc_sizes = 32,16").is_err());
        assert!(MonetConfig::from_kv_str("dropout = 1").is_err());
        assert!(MonetConfig::from_kv_str("colour = blue").is_err());
        assert!(MonetConfig::from_kv_str("patch_size 9").is_err());
    }

    #[test]
    fn batch_size_rule() {
        let c = MonetConfig::default();
        assert_eq!(c.effective_batch_size(700), 700);
        assert_eq!(c.effective_batch_size(1 << 14), 1 << 14);
        assert_eq!(c.effective_batch_size((1 << 14) + 1), 1 << 12);
    }
}

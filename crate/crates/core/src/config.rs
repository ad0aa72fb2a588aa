//! The full run description read by the command-line tool.
//!
//! A run file is `key=value` text covering the model, the optimizer, the data
//! split, augmentation and the training loop. Unknown keys are rejected. An
//! optional `scale` key picks the defaults that the other keys override, and
//! the shorthand keys `variant` and `augmentation` expand into the flags they
//! stand for, so rendering a parsed file always yields explicit values only.

use std::fs;
use std::path::Path;

use crate::data::{AugmentationPolicy, SplitSpec};
use crate::error::{Error, Result};
use crate::kv;
use crate::model::{ModelConfig, Scale};
use crate::train::{OptimizerConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scale: Scale,
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    pub split: SplitSpec,
    pub augmentation: AugmentationPolicy,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn for_scale(scale: Scale) -> Self {
        let train = match scale {
            Scale::Paper => TrainConfig::default(),
            Scale::Desk => TrainConfig {
                epochs: 10,
                batch_size: 2,
                max_steps: 0,
            },
        };
        Self {
            scale,
            model: ModelConfig::for_scale(scale),
            optimizer: OptimizerConfig::default(),
            split: SplitSpec::default(),
            augmentation: AugmentationPolicy::full(),
            train,
        }
    }

    /// Seeds both the weights and the split.
    pub fn set_seed(&mut self, seed: u64) {
        self.model.seed = seed;
        self.split.seed = seed;
    }

    /// Applies one pair, failing on keys no component knows.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if key == "scale" {
            let scale = Scale::parse(v).ok_or_else(|| Error::config(key, format!("expected paper or desk, got {v:?}")))?;
            if scale != self.scale {
                *self = Self::for_scale(scale);
            }
            return Ok(());
        }
        let known = self.model.set(key, v)?
            || self.optimizer.set(key, v)?
            || self.split.set(key, v)?
            || self.augmentation.set(key, v)?
            || self.train.set(key, v)?;
        if known {
            Ok(())
        } else {
            Err(Error::config(key, "unknown key"))
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.split.validate()?;
        self.augmentation.validate()?;
        self.train.validate()
    }

    /// Parses run text over the defaults of `scale`. A `scale` key inside the
    /// text must come first, since it resets everything before it.
    pub fn parse(text: &str, scale: Scale) -> Result<Self> {
        let entries = kv::parse_lines(text)?;
        if let Some(pos) = entries.iter().position(|(k, _)| k == "scale") {
            if pos != 0 {
                return Err(Error::config("scale", "must be the first key"));
            }
        }
        let mut c = Self::for_scale(scale);
        for (k, v) in &entries {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path, scale: Scale) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text, scale)
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = vec![("scale".to_string(), self.scale.as_str().to_string())];
        out.extend(self.model.entries());
        out.extend(self.optimizer.entries());
        out.extend(self.split.entries());
        out.extend(self.augmentation.entries());
        out.extend(self.train.entries());
        out
    }

    pub fn to_text(&self) -> String {
        kv::render(&self.entries())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("lr=0.01\nlearning_rate=3\n", Scale::Desk).unwrap_err();
        assert!(err.to_string().contains("learning_rate"), "{err}");
    }

    #[test]
    fn size_not_a_multiple_is_rejected() {
        let err = RunConfig::parse("input_size=100x100", Scale::Desk).unwrap_err();
        assert!(err.to_string().contains("input_size"), "{err}");
    }

    #[test]
    fn shorthands_expand() {
        let c = RunConfig::parse("variant=seConv\naugmentation=hflip\n", Scale::Desk).unwrap();
        assert!(!c.model.use_aspp && !c.model.use_meca);
        assert!(c.augmentation.hflip && !c.augmentation.rotate);
        let again = RunConfig::parse(&c.to_text(), Scale::Paper).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn scale_must_lead() {
        assert!(RunConfig::parse("lr=0.1\nscale=desk\n", Scale::Paper).is_err());
        let c = RunConfig::parse("scale=desk\nlr=0.1\n", Scale::Paper).unwrap();
        assert_eq!(c.model, ModelConfig::desk());
        assert_eq!(c.optimizer.lr, 0.1);
    }
}

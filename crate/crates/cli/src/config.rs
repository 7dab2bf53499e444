use std::path::Path;

use anyhow::{bail, Context};
use meltpool_core::annotate::{default_presets, MgacParams, CANDIDATE_COUNT};
use meltpool_core::augment::AugmentationConfig;
use meltpool_core::dataset::SyntheticSpec;
use meltpool_unet::grid::CellGain;
use meltpool_unet::{TrainConfig, UNetConfig};
use serde::Deserialize;

/// Optional overrides read from `--config`. Sections left out keep their
/// defaults; unknown keys are rejected.
///
/// ```toml
/// [unet]
/// input_side = 128
/// base_channels = 16
///
/// [train]
/// batch_size = 2
/// learning_rate = 1e-4
///
/// [[grid.init_gains]]
/// batch_size = 8
/// learning_rate = 1e-3
/// init_gain = 1e4
/// ```
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub augment: AugmentationConfig,
    pub unet: UNetConfig,
    pub train: TrainConfig,
    pub synth: SyntheticSpec,
    pub grid: GridSection,
    /// Exactly seven contour presets, replacing the built-in ones.
    pub mgac: Option<Vec<MgacParams>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub init_gains: Vec<CellGain>,
}

impl FileConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: FileConfig = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate().with_context(|| format!("in {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.augment.validate()?;
        self.unet.validate()?;
        self.train.validate()?;
        self.synth.validate()?;
        if let Some(p) = &self.mgac {
            if p.len() != CANDIDATE_COUNT {
                bail!("expected {CANDIDATE_COUNT} mgac presets, got {}", p.len());
            }
            for preset in p {
                preset.validate()?;
            }
        }
        Ok(())
    }

    pub fn presets(&self) -> Vec<MgacParams> {
        self.mgac.clone().unwrap_or_else(default_presets)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_sections_keep_defaults() {
        let cfg: FileConfig = toml::from_str(
            "[unet]\ninput_side = 128\nbase_channels = 16\n[train]\nbatch_size = 2\n\
             [[grid.init_gains]]\nbatch_size = 8\nlearning_rate = 1e-3\ninit_gain = 1e4\n",
        )
        .unwrap();
        assert_eq!(cfg.unet.input_side, 128);
        assert_eq!(cfg.unet.levels, UNetConfig::default().levels);
        assert_eq!(cfg.train.batch_size, 2);
        assert_eq!(cfg.train.learning_rate, TrainConfig::default().learning_rate);
        assert_eq!(cfg.grid.init_gains.len(), 1);
        assert_eq!(cfg.presets(), default_presets());
        cfg.validate().unwrap();
    }

    #[test]
    fn bad_values_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[unet]\nwidth = 3\n").is_err());
        let cfg: FileConfig = toml::from_str("[unet]\ninput_side = 100\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg: FileConfig = toml::from_str(
            "[[mgac]]\nsigma = 2.0\nalpha = 100.0\nballoon = 1.0\nsmoothing = 1\nthreshold = 0.3\niterations = 10\n",
        )
        .unwrap();
        assert!(cfg.validate().is_err());
    }
}

//! Experiment configuration: a preset, optionally overlaid by a TOML file.
//!
//! The overlay is merged key by key, so a file only needs the values it changes.
//! Per-component seeds are always taken from the top-level `seed`.

use std::path::Path;

use clap::ValueEnum;
use csirff_core::{ChannelModelSpec, LsConfig, LsTrainConfig, PopulationConfig};
use csirff_neural::{EncoderConfig, HeadConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Desk,
    Paper,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_realizations: usize,
    pub snr_grid: Vec<f64>,
    /// Samples per device in the flat-channel set used by the no-augmentation variants.
    pub flat_realizations: usize,
    pub record_cap: usize,
    pub split_fractions: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// SNR at which per-channel accuracy is reported.
    pub fixed_snr_db: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistanceConfig {
    pub snr_db: f64,
    /// LoS reference estimates per device.
    pub los_references: usize,
    /// Noisy shots averaged into each LoS reference.
    pub los_shots: usize,
    /// Cap on multipath records per device and channel.
    pub max_per_condition: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub population: PopulationConfig,
    pub channels: Vec<ChannelModelSpec>,
    pub dataset: DatasetConfig,
    pub ls: LsConfig,
    pub ls_train: LsTrainConfig,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub stage1: TrainConfig,
    pub stage2: TrainConfig,
    pub eval: EvalConfig,
    pub distances: DistanceConfig,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let snr_grid: Vec<f64> = (1..=8).map(|i| 5.0 * i as f64).collect();
        let common = Self {
            seed: 0,
            population: PopulationConfig::default(),
            channels: ChannelModelSpec::default_grid(),
            dataset: DatasetConfig {
                n_realizations: 50,
                snr_grid,
                flat_realizations: 50,
                record_cap: 2_000_000,
                split_fractions: csirff_core::dataset::DEFAULT_FRACTIONS,
            },
            ls: LsConfig::default(),
            ls_train: LsTrainConfig::default(),
            encoder: EncoderConfig::desk(),
            head: HeadConfig::default(),
            stage1: TrainConfig { lr: 1e-3, max_epochs: 20, ..TrainConfig::desk() },
            stage2: TrainConfig { lr: 1e-3, max_epochs: 25, ..TrainConfig::desk() },
            eval: EvalConfig { fixed_snr_db: 40.0, batch_size: 256 },
            distances: DistanceConfig { snr_db: 40.0, los_references: 5, los_shots: 100, max_per_condition: 20 },
        };
        match preset {
            Preset::Desk => common,
            Preset::Paper => Self {
                dataset: DatasetConfig { n_realizations: 1000, flat_realizations: 1000, ..common.dataset },
                encoder: EncoderConfig::paper(),
                stage1: TrainConfig::paper(),
                stage2: TrainConfig::paper(),
                ..common
            },
        }
    }

    /// Preset, then the overlay file, then the seed override.
    pub fn load(preset: Preset, overlay: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let text = match overlay {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?),
            None => None,
        };
        Self::from_parts(preset, text.as_deref(), seed)
    }

    pub fn from_parts(preset: Preset, overlay: Option<&str>, seed: Option<u64>) -> Result<Self> {
        let mut cfg = Self::preset(preset);
        if let Some(text) = overlay {
            let patch: toml::Table = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
            let mut base = toml::Table::try_from(&cfg).map_err(|e| CliError::Config(e.to_string()))?;
            merge(&mut base, patch);
            cfg = toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.propagate_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    fn propagate_seed(&mut self) {
        self.population.seed = self.seed;
        self.ls_train.seed = self.seed;
        self.stage1.seed = self.seed;
        self.stage2.seed = self.seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.population.validate()?;
        self.encoder.validate()?;
        self.stage1.validate()?;
        self.stage2.validate()?;
        if self.head.n_classes != self.population.n_devices {
            return Err(CliError::Config(format!(
                "head has {} classes but the population has {} devices",
                self.head.n_classes, self.population.n_devices
            )));
        }
        if self.channels.is_empty() || self.dataset.snr_grid.is_empty() || self.dataset.n_realizations == 0 {
            return Err(CliError::Config("dataset needs channels, SNR levels and realizations".into()));
        }
        if self.eval.batch_size == 0 || self.distances.los_shots == 0 || self.distances.los_references < 2 {
            return Err(CliError::Config("eval batch, LoS shots and at least two LoS references are required".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn merge(base: &mut toml::Table, patch: toml::Table) {
    for (k, v) in patch {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(p)) => merge(b, p),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overlay_changes_only_named_keys() {
        let cfg = ExperimentConfig::from_parts(Preset::Desk, Some("[dataset]\nn_realizations = 7\n"), None).unwrap();
        let base = ExperimentConfig::preset(Preset::Desk);
        assert_eq!(cfg.dataset.n_realizations, 7);
        assert_eq!(cfg.dataset.snr_grid, base.dataset.snr_grid);
        assert_eq!(cfg.stage1, base.stage1);
    }

    #[test]
    fn seed_reaches_every_component() {
        let cfg = ExperimentConfig::from_parts(Preset::Desk, None, Some(9)).unwrap();
        assert_eq!([cfg.population.seed, cfg.ls_train.seed, cfg.stage1.seed, cfg.stage2.seed], [9; 4]);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_config_errors() {
        for text in ["[dataset]\nbogus = 1\n", "[population]\nscale = 3.0\n", "[stage1]\ntau = 0.0\n", "nonsense ="] {
            let err = ExperimentConfig::from_parts(Preset::Desk, Some(text), None).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn presets_round_trip_through_toml() {
        for p in [Preset::Desk, Preset::Paper] {
            let cfg = ExperimentConfig::preset(p);
            let again = ExperimentConfig::from_parts(p, Some(&cfg.to_toml()), None).unwrap();
            assert_eq!(again, cfg);
        }
        assert_eq!(ExperimentConfig::preset(Preset::Paper).encoder.embed_dim, 512);
    }
}

//! Dataset assembly and model training for each experiment variant.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use clap::ValueEnum;
use csirff_core::dataset::{base_csi, split_dataset};
use csirff_core::features::network_input_f32;
use csirff_core::rng::DOMAIN_MISC;
use csirff_core::{
    build_dataset, build_flat_dataset, generate_population, BuildOptions, Dataset, DatasetRecord, DatasetSplit,
    DevicePopulation, FingerprintEstimate, LsExtractor, LsModel, RandomStream, SubcarrierGrid,
};
use csirff_neural::{train_stage1, train_stage2, ModelCheckpoint, Samples, TrainData};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

/// Training recipe. `Full` pre-trains contrastively on augmented data; the
/// others drop the pre-training, the augmentation, or both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoScl,
    NoDa,
    NoDaNoScl,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoScl, Variant::NoDa, Variant::NoDaNoScl];

    pub fn pretrains(self) -> bool {
        matches!(self, Self::Full | Self::NoDa)
    }

    pub fn augments(self) -> bool {
        matches!(self, Self::Full | Self::NoScl)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoScl => "no_scl",
            Self::NoDa => "no_da",
            Self::NoDaNoScl => "no_da_no_scl",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| CliError::Config(format!("unknown variant {s:?}")))
    }
}

/// Train/validation fractions of the flat-channel set. It is never tested on.
pub const FLAT_FRACTIONS: [f64; 3] = [0.8, 0.2, 0.0];

pub fn grid() -> Arc<SubcarrierGrid> {
    Arc::new(SubcarrierGrid::wifi_20mhz())
}

pub fn population(cfg: &ExperimentConfig) -> Result<DevicePopulation> {
    Ok(generate_population(&cfg.population, grid())?)
}

pub fn dataset(cfg: &ExperimentConfig, pop: &DevicePopulation) -> Result<Dataset> {
    let opts = BuildOptions {
        n_realizations: cfg.dataset.n_realizations,
        snr_grid: cfg.dataset.snr_grid.clone(),
        seed: cfg.seed,
        record_cap: cfg.dataset.record_cap,
    };
    Ok(build_dataset(pop, &cfg.channels, &opts)?)
}

pub fn flat_dataset(cfg: &ExperimentConfig, pop: &DevicePopulation) -> Result<Dataset> {
    Ok(build_flat_dataset(pop, cfg.dataset.flat_realizations, cfg.seed)?)
}

pub fn split(cfg: &ExperimentConfig, records: &[DatasetRecord]) -> Result<DatasetSplit> {
    Ok(split_dataset(records, cfg.dataset.split_fractions, cfg.seed)?)
}

pub fn flat_split(cfg: &ExperimentConfig, records: &[DatasetRecord]) -> Result<DatasetSplit> {
    Ok(split_dataset(records, FLAT_FRACTIONS, cfg.seed)?)
}

/// Network inputs for the selected records.
pub fn samples(records: &[DatasetRecord], idx: &[usize]) -> Result<Samples> {
    let n_sub = records.first().map_or(0, |r| r.csi.len());
    let mut inputs = Vec::with_capacity(idx.len() * 2 * n_sub);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        let r = records.get(i).ok_or_else(|| CliError::Data(format!("split index {i} out of range")))?;
        if r.csi.len() != n_sub {
            return Err(CliError::Data("records have differing subcarrier counts".into()));
        }
        inputs.extend(network_input_f32(&r.csi));
        labels.push(r.label as usize);
    }
    Ok(Samples::new(inputs, labels, n_sub)?)
}

pub fn train_data(records: &[DatasetRecord], split: &DatasetSplit) -> Result<TrainData> {
    Ok(TrainData { train: samples(records, &split.train)?, val: samples(records, &split.val)? })
}

/// Records and split a variant trains on.
pub struct TrainingSets<'a> {
    pub augmented: (&'a [DatasetRecord], &'a DatasetSplit),
    pub flat: (&'a [DatasetRecord], &'a DatasetSplit),
}

impl<'a> TrainingSets<'a> {
    pub fn for_variant(&self, v: Variant) -> (&'a [DatasetRecord], &'a DatasetSplit) {
        if v.augments() {
            self.augmented
        } else {
            self.flat
        }
    }
}

pub fn run_stage1(cfg: &ExperimentConfig, sets: &TrainingSets<'_>, v: Variant) -> Result<ModelCheckpoint> {
    if !v.pretrains() {
        return Err(CliError::Config(format!("variant {v} has no contrastive stage")));
    }
    let (records, split) = sets.for_variant(v);
    let data = train_data(records, split)?;
    log::info!("stage 1 ({v}): {} train, {} val", data.train.len(), data.val.len());
    Ok(train_stage1(&data, &cfg.encoder, &cfg.head, &cfg.stage1)?)
}

/// Stage 2; `stage1` must be given exactly when the variant pre-trains.
pub fn run_stage2(
    cfg: &ExperimentConfig,
    sets: &TrainingSets<'_>,
    v: Variant,
    stage1: Option<&ModelCheckpoint>,
) -> Result<ModelCheckpoint> {
    if v.pretrains() != stage1.is_some() {
        return Err(CliError::Config(format!(
            "variant {v} {} a stage-1 checkpoint",
            if v.pretrains() { "needs" } else { "does not take" }
        )));
    }
    let (records, split) = sets.for_variant(v);
    let data = train_data(records, split)?;
    log::info!("stage 2 ({v}): {} train, {} val", data.train.len(), data.val.len());
    Ok(train_stage2(stage1, &data, &cfg.encoder, &cfg.head, &cfg.stage2, false)?)
}

pub fn train_variant(cfg: &ExperimentConfig, sets: &TrainingSets<'_>, v: Variant) -> Result<ModelCheckpoint> {
    let stage1 = if v.pretrains() { Some(run_stage1(cfg, sets, v)?) } else { None };
    run_stage2(cfg, sets, v, stage1.as_ref())
}

/// LS estimates of the selected records, labeled and tagged by channel.
pub fn ls_estimates(
    ex: &LsExtractor,
    grid: &Arc<SubcarrierGrid>,
    records: &[DatasetRecord],
    idx: &[usize],
) -> Result<Vec<FingerprintEstimate>> {
    idx.iter()
        .map(|&i| {
            let r = &records[i];
            Ok(ex.extract(&r.to_csi(grid.clone())?, Some(r.label as u32), r.channel_tag.name())?)
        })
        .collect()
}

/// LS baseline: the FC classifier trained on estimates from the flat-channel
/// reference set.
pub fn train_ls_baseline(cfg: &ExperimentConfig, flat: &[DatasetRecord], flat_split: &DatasetSplit) -> Result<LsModel> {
    let g = grid();
    let ex = LsExtractor::new(g.clone(), cfg.ls)?;
    let train = ls_estimates(&ex, &g, flat, &flat_split.train)?;
    let val = ls_estimates(&ex, &g, flat, &flat_split.val)?;
    Ok(csirff_core::train_ls_classifier(&train, &val, cfg.population.n_devices, &cfg.ls_train)?)
}

/// LoS reference estimates: each averages `shots` noisy captures of the
/// flat-channel measurement at `snr_db`.
pub fn los_references(
    pop: &DevicePopulation,
    ex: &LsExtractor,
    per_device: usize,
    shots: usize,
    snr_db: f64,
    seed: u64,
) -> Result<Vec<FingerprintEstimate>> {
    let noise = csirff_core::NoiseSpec::new(snr_db)?;
    let mut out = Vec::with_capacity(pop.len() * per_device);
    for d in 0..pop.len() {
        let base = base_csi(pop, d)?;
        let mut rng = RandomStream::derive(seed, DOMAIN_MISC, d as u64);
        for _ in 0..per_device {
            let ms = (0..shots)
                .map(|_| csirff_core::add_awgn(&base, &noise, &mut rng))
                .collect::<csirff_core::Result<Vec<_>>>()?;
            out.push(ex.extract(&csirff_core::denoise_average(&ms)?, Some(d as u32), "LoS")?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!("bogus".parse::<Variant>().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn only_pretraining_variants_take_stage1() {
        let pretrain: Vec<_> = Variant::ALL.into_iter().filter(|v| v.pretrains()).collect();
        let augment: Vec<_> = Variant::ALL.into_iter().filter(|v| v.augments()).collect();
        assert_eq!(pretrain, [Variant::Full, Variant::NoDa]);
        assert_eq!(augment, [Variant::Full, Variant::NoScl]);
    }
}

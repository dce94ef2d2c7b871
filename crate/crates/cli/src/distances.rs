//! Fingerprint distance study: LS estimates from LoS references and from
//! multipath records, summarized per condition.

use std::collections::BTreeMap;

use csirff_core::dataset::snr_to_centidb;
use csirff_core::ls::{distance_study, DistanceSummary};
use csirff_core::{DatasetRecord, DevicePopulation, LsExtractor};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{los_references, ls_estimates};

pub fn run_distance_study(
    cfg: &ExperimentConfig,
    pop: &DevicePopulation,
    records: &[DatasetRecord],
) -> Result<Vec<DistanceSummary>> {
    let d = &cfg.distances;
    let ex = LsExtractor::new(pop.grid.clone(), cfg.ls)?;
    let mut set = los_references(pop, &ex, d.los_references, d.los_shots, d.snr_db, cfg.seed)?;
    let snr = snr_to_centidb(d.snr_db)?;
    let mut taken: BTreeMap<(u16, u8), usize> = BTreeMap::new();
    let idx: Vec<usize> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.snr_centidb == snr)
        .filter(|(_, r)| {
            let n = taken.entry((r.label, r.channel_tag.code())).or_default();
            *n += 1;
            *n <= d.max_per_condition
        })
        .map(|(i, _)| i)
        .collect();
    if idx.is_empty() {
        log::warn!("no multipath records at {} dB; only the LoS reference is summarized", d.snr_db);
    }
    set.extend(ls_estimates(&ex, &pop.grid, records, &idx)?);
    distance_study(&set).map_err(|e| CliError::Data(e.to_string()))
}

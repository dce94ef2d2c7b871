//! Accuracy per SNR for each training variant, plus the LS baseline.

use std::fmt::Write;

use csirff_core::{Dataset, DatasetSplit, DevicePopulation, LsExtractor};
use csirff_neural::network_from_checkpoint;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::metrics::{run_eval, Classifier, LsClassifier, MetricsReport, NetworkClassifier};
use crate::pipeline::{flat_split, grid, train_ls_baseline, train_variant, TrainingSets, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub accuracy: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub snr_db: Vec<f64>,
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, method: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    pub fn accuracy(&self, method: &str, snr_db: f64) -> Option<f64> {
        let col = self.snr_db.iter().position(|&s| s == snr_db)?;
        self.row(method).map(|r| r.accuracy[col])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("method");
        for snr in &self.snr_db {
            write!(s, ",{snr}").unwrap();
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.method);
            for a in &r.accuracy {
                write!(s, ",{a:.2}").unwrap();
            }
            s.push('\n');
        }
        s
    }
}

fn row(method: &str, snr_grid: &[f64], m: &MetricsReport) -> AblationRow {
    AblationRow {
        method: method.to_string(),
        accuracy: snr_grid.iter().map(|&s| m.accuracy_at(s).unwrap_or(f64::NAN)).collect(),
    }
}

/// Everything an ablation produces, with the per-method reports.
pub struct AblationRun {
    pub table: AblationTable,
    pub reports: Vec<(String, MetricsReport)>,
}

/// Train each variant and evaluate on the test part of `ds`. The flat-channel
/// set for the no-augmentation variants and the LS baseline is built from `pop`.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    pop: &DevicePopulation,
    ds: &Dataset,
    split: &DatasetSplit,
    variants: &[Variant],
    with_ls: bool,
) -> Result<AblationRun> {
    let flat = crate::pipeline::flat_dataset(cfg, pop)?;
    let fsplit = flat_split(cfg, &flat.records)?;
    let sets = TrainingSets { augmented: (&ds.records, split), flat: (&flat.records, &fsplit) };
    let test: Vec<_> = split.test.iter().map(|&i| ds.records[i].clone()).collect();
    let snr_grid = &cfg.dataset.snr_grid;
    let mut reports = Vec::new();
    let mut eval = |name: &str, clf: &mut dyn Classifier| -> Result<()> {
        let m = run_eval(clf, &test, cfg.eval.fixed_snr_db)?;
        log::info!("{name}: {:.2}% overall", m.accuracy);
        reports.push((name.to_string(), m));
        Ok(())
    };
    for &v in variants {
        let ckpt = train_variant(cfg, &sets, v)?;
        let net = network_from_checkpoint(&ckpt)?;
        eval(v.name(), &mut NetworkClassifier { net, batch_size: cfg.eval.batch_size })?;
    }
    if with_ls {
        let model = train_ls_baseline(cfg, &flat.records, &fsplit)?;
        let g = grid();
        let extractor = LsExtractor::new(g.clone(), cfg.ls)?;
        eval("ls_baseline", &mut LsClassifier { model, extractor, grid: g })?;
    }
    let rows = reports.iter().map(|(name, m)| row(name, snr_grid, m)).collect();
    Ok(AblationRun { table: AblationTable { snr_db: snr_grid.clone(), rows }, reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_one_column_per_snr() {
        let t = AblationTable {
            snr_db: vec![5.0, 40.0],
            rows: vec![AblationRow { method: "full".into(), accuracy: vec![20.0, 97.125] }],
        };
        assert_eq!(t.to_csv(), "method,5,40\nfull,20.00,97.12\n");
        assert_eq!(t.accuracy("full", 40.0), Some(97.125));
        assert_eq!(t.accuracy("full", 10.0), None);
    }
}

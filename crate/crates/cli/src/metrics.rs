//! Single-sample identification metrics.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::sync::Arc;
use std::time::Instant;

use csirff_core::dataset::snr_to_centidb;
use csirff_core::{ChannelTag, DatasetRecord, LsExtractor, LsModel, SubcarrierGrid};
use csirff_neural::{argmax_rows, Network};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::pipeline::samples;

/// Anything that labels records one at a time.
pub trait Classifier {
    fn n_classes(&self) -> usize;
    fn classify(&mut self, records: &[DatasetRecord]) -> Result<Vec<usize>>;
}

pub struct NetworkClassifier {
    pub net: Network<f32>,
    pub batch_size: usize,
}

impl Classifier for NetworkClassifier {
    fn n_classes(&self) -> usize {
        self.net.head.n_classes
    }

    fn classify(&mut self, records: &[DatasetRecord]) -> Result<Vec<usize>> {
        let idx: Vec<usize> = (0..records.len()).collect();
        let s = samples(records, &idx)?;
        let mut out = Vec::with_capacity(records.len());
        for chunk in idx.chunks(self.batch_size.max(1)) {
            let (x, _) = s.batch(chunk);
            out.extend(argmax_rows(&self.net.logits(&x)?));
        }
        Ok(out)
    }
}

pub struct LsClassifier {
    pub model: LsModel,
    pub extractor: LsExtractor,
    pub grid: Arc<SubcarrierGrid>,
}

impl Classifier for LsClassifier {
    fn n_classes(&self) -> usize {
        self.model.n_classes
    }

    fn classify(&mut self, records: &[DatasetRecord]) -> Result<Vec<usize>> {
        let idx: Vec<usize> = (0..records.len()).collect();
        let est = crate::pipeline::ls_estimates(&self.extractor, &self.grid, records, &idx)?;
        Ok(self.model.predict(&est)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub group: String,
    pub snr_db: f64,
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    /// Zero when the class is never predicted.
    pub precision: f64,
    pub recall: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_records: u64,
    pub accuracy: f64,
    /// Over all channels, one row per stored SNR.
    pub by_snr: Vec<GroupAccuracy>,
    /// At the fixed SNR, one row per channel.
    pub by_channel: Vec<GroupAccuracy>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub per_class: Vec<ClassMetrics>,
    pub runtime_secs: f64,
}

fn percent(correct: u64, total: u64) -> f64 {
    100.0 * correct as f64 / total as f64
}

fn group_rows<K: Ord + Copy>(hits: &BTreeMap<K, (u64, u64)>, name: impl Fn(K) -> (String, f64)) -> Vec<GroupAccuracy> {
    hits.iter()
        .map(|(&k, &(correct, total))| {
            let (group, snr_db) = name(k);
            GroupAccuracy { group, snr_db, correct, total, accuracy: percent(correct, total) }
        })
        .collect()
}

/// Classify every record on its own and aggregate.
pub fn run_eval(clf: &mut dyn Classifier, records: &[DatasetRecord], fixed_snr_db: f64) -> Result<MetricsReport> {
    if records.is_empty() {
        return Err(CliError::Data("no test records".into()));
    }
    let start = Instant::now();
    let n = clf.n_classes();
    let pred = clf.classify(records)?;
    let fixed = snr_to_centidb(fixed_snr_db)?;
    let mut confusion = vec![vec![0u64; n]; n];
    let mut by_snr: BTreeMap<i16, (u64, u64)> = BTreeMap::new();
    let mut by_channel: BTreeMap<ChannelTag, (u64, u64)> = BTreeMap::new();
    for (r, &p) in records.iter().zip(&pred) {
        let t = r.label as usize;
        if t >= n || p >= n {
            return Err(CliError::Data(format!("label {t} or prediction {p} outside {n} classes")));
        }
        confusion[t][p] += 1;
        let hit = (t == p) as u64;
        let e = by_snr.entry(r.snr_centidb).or_default();
        e.0 += hit;
        e.1 += 1;
        if r.snr_centidb == fixed {
            let e = by_channel.entry(r.channel_tag).or_default();
            e.0 += hit;
            e.1 += 1;
        }
    }
    if by_channel.is_empty() {
        log::warn!("no test records at {fixed_snr_db} dB; per-channel accuracy omitted");
    }
    let correct: u64 = (0..n).map(|i| confusion[i][i]).sum();
    let per_class = (0..n)
        .map(|c| {
            let support: u64 = confusion[c].iter().sum();
            let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
            let tp = confusion[c][c];
            ClassMetrics {
                class: c,
                precision: if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 },
                recall: if support == 0 { 0.0 } else { tp as f64 / support as f64 },
                support,
            }
        })
        .collect();
    let snr_name = |c: i16| {
        let r =
            DatasetRecord { label: 0, channel_tag: ChannelTag::Flat, snr_centidb: c, realization_id: 0, csi: vec![] };
        (format!("{}", r.snr_db()), r.snr_db())
    };
    Ok(MetricsReport {
        n_records: records.len() as u64,
        accuracy: percent(correct, records.len() as u64),
        by_snr: group_rows(&by_snr, snr_name),
        by_channel: group_rows(&by_channel, |t| (t.name().to_string(), fixed_snr_db)),
        confusion,
        per_class,
        runtime_secs: start.elapsed().as_secs_f64(),
    })
}

impl MetricsReport {
    pub fn accuracy_at(&self, snr_db: f64) -> Option<f64> {
        self.by_snr.iter().find(|g| g.snr_db == snr_db).map(|g| g.accuracy)
    }

    pub fn by_snr_csv(&self) -> String {
        let mut s = String::from("snr_db,correct,total,accuracy\n");
        for g in &self.by_snr {
            writeln!(s, "{},{},{},{}", g.group, g.correct, g.total, g.accuracy).unwrap();
        }
        s
    }

    pub fn by_channel_csv(&self) -> String {
        let mut s = String::from("channel_tag,snr_db,correct,total,accuracy\n");
        for g in &self.by_channel {
            writeln!(s, "{},{},{},{},{}", g.group, g.snr_db, g.correct, g.total, g.accuracy).unwrap();
        }
        s
    }

    pub fn confusion_csv(&self) -> String {
        let n = self.confusion.len();
        let mut s = String::from("true");
        for p in 0..n {
            write!(s, ",pred_{p}").unwrap();
        }
        s.push('\n');
        for (t, row) in self.confusion.iter().enumerate() {
            write!(s, "{t}").unwrap();
            for v in row {
                write!(s, ",{v}").unwrap();
            }
            s.push('\n');
        }
        s
    }

    pub fn per_class_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,support\n");
        for c in &self.per_class {
            writeln!(s, "{},{},{},{}", c.class, c.precision, c.recall, c.support).unwrap();
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use csirff_core::RandomStream;

    struct Echo(usize);

    impl Classifier for Echo {
        fn n_classes(&self) -> usize {
            self.0
        }
        fn classify(&mut self, records: &[DatasetRecord]) -> Result<Vec<usize>> {
            Ok(records.iter().map(|r| r.label as usize).collect())
        }
    }

    struct Uniform(usize, RandomStream);

    impl Classifier for Uniform {
        fn n_classes(&self) -> usize {
            self.0
        }
        fn classify(&mut self, records: &[DatasetRecord]) -> Result<Vec<usize>> {
            Ok(records.iter().map(|_| self.1.below(self.0)).collect())
        }
    }

    fn records(n: usize, classes: u16) -> Vec<DatasetRecord> {
        (0..n)
            .map(|i| DatasetRecord {
                label: (i % classes as usize) as u16,
                channel_tag: ChannelTag::from_code(((i / 8) % 6) as u8).unwrap(),
                snr_centidb: 500 * (1 + (i % 8) as i16),
                realization_id: i as u32,
                csi: vec![],
            })
            .collect()
    }

    #[test]
    fn echo_classifier_is_perfect() {
        let r = records(1000, 19);
        let m = run_eval(&mut Echo(19), &r, 40.0).unwrap();
        assert_eq!(m.accuracy, 100.0);
        assert!(m.by_snr.iter().chain(&m.by_channel).all(|g| g.accuracy == 100.0));
        assert_eq!(m.by_snr.len(), 8);
        assert_eq!(m.by_channel.len(), 6);
        for (i, row) in m.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<u64>(), row[i]);
        }
    }

    #[test]
    fn uniform_classifier_is_at_chance() {
        let r = records(20_000, 19);
        let m = run_eval(&mut Uniform(19, RandomStream::new(3)), &r, 40.0).unwrap();
        assert!((m.accuracy - 100.0 / 19.0).abs() < 1.0, "{}", m.accuracy);
    }

    #[test]
    fn trace_over_total_is_the_accuracy() {
        let r = records(5000, 7);
        let m = run_eval(&mut Uniform(7, RandomStream::new(4)), &r, 40.0).unwrap();
        let trace: u64 = (0..7).map(|i| m.confusion[i][i]).sum();
        assert_eq!(100.0 * trace as f64 / 5000.0, m.accuracy);
        for (c, row) in m.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<u64>(), m.per_class[c].support);
        }
    }

    struct Fixed(usize, Vec<usize>);

    impl Classifier for Fixed {
        fn n_classes(&self) -> usize {
            self.0
        }
        fn classify(&mut self, _: &[DatasetRecord]) -> Result<Vec<usize>> {
            Ok(self.1.clone())
        }
    }

    proptest::proptest! {
        #[test]
        fn confusion_agrees_with_counts(pairs in proptest::collection::vec((0u16..5, 0usize..5), 1..400)) {
            let mut r = records(pairs.len(), 5);
            for (rec, (t, _)) in r.iter_mut().zip(&pairs) {
                rec.label = *t;
            }
            let preds = pairs.iter().map(|p| p.1).collect();
            let m = run_eval(&mut Fixed(5, preds), &r, 40.0).unwrap();
            for c in 0..5 {
                let support = r.iter().filter(|x| x.label as usize == c).count() as u64;
                proptest::prop_assert_eq!(m.confusion[c].iter().sum::<u64>(), support);
            }
            let trace: u64 = (0..5).map(|i| m.confusion[i][i]).sum();
            proptest::prop_assert_eq!(m.accuracy, 100.0 * trace as f64 / r.len() as f64);
            for g in m.by_snr.iter().chain(&m.by_channel) {
                proptest::prop_assert!((0.0..=100.0).contains(&g.accuracy));
            }
        }
    }

    #[test]
    fn missing_fixed_snr_omits_channel_rows() {
        let m = run_eval(&mut Echo(19), &records(100, 19), 37.0).unwrap();
        assert!(m.by_channel.is_empty());
        assert_eq!(m.confusion_csv().lines().count(), 20);
    }
}

//! Model-based fingerprint extraction.
//!
//! A low-order channel is fitted to the CSI in the partial-DFT tap basis; the
//! multiplicative residual `c / h - 1` is the fingerprint estimate.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::basis::{tap_basis, ThinQr};
use crate::devices::fingerprint_distance;
use crate::error::{CoreError, Result};
use crate::signal::{same_grid, CsiVector, SubcarrierGrid};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsConfig {
    /// Channel order `L`: taps at delays `0..L` samples.
    pub num_taps: usize,
    /// Bins whose fitted channel magnitude falls below this are zero-filled.
    pub fade_epsilon: f64,
}

impl Default for LsConfig {
    fn default() -> Self {
        Self { num_taps: 9, fade_epsilon: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FingerprintEstimate {
    pub values: Vec<Complex64>,
    /// Bins zero-filled because the fitted channel faded.
    pub faded: Vec<bool>,
    pub source_label: Option<u32>,
    pub condition_tag: String,
}

impl FingerprintEstimate {
    pub fn faded_count(&self) -> usize {
        self.faded.iter().filter(|&&f| f).count()
    }
}

/// Least-squares extractor with a factored tap basis, reusable across vectors on one grid.
#[derive(Debug, Clone)]
pub struct LsExtractor {
    grid: Arc<SubcarrierGrid>,
    cfg: LsConfig,
    qr: ThinQr,
}

impl LsExtractor {
    pub fn new(grid: Arc<SubcarrierGrid>, cfg: LsConfig) -> Result<Self> {
        if cfg.num_taps == 0 || cfg.num_taps > grid.len() {
            return Err(CoreError::Config(format!("LS order {} outside 1..={}", cfg.num_taps, grid.len())));
        }
        if !(cfg.fade_epsilon > 0.0) {
            return Err(CoreError::Config(format!("fade_epsilon must be positive, got {}", cfg.fade_epsilon)));
        }
        let delays: Vec<f64> = (0..cfg.num_taps).map(|l| l as f64).collect();
        let qr = ThinQr::new(&tap_basis(&grid, &delays))?;
        Ok(Self { grid, cfg, qr })
    }

    pub fn config(&self) -> &LsConfig {
        &self.cfg
    }

    /// Fitted tap coefficients `a`.
    pub fn fit_taps(&self, c: &CsiVector) -> Result<Vec<Complex64>> {
        same_grid(&self.grid, c.grid())?;
        Ok(self.qr.solve(c.values()))
    }

    /// Fitted channel `F_L a`.
    pub fn fit_channel(&self, c: &CsiVector) -> Result<Vec<Complex64>> {
        same_grid(&self.grid, c.grid())?;
        Ok(self.qr.project(c.values()))
    }

    pub fn extract(&self, c: &CsiVector, label: Option<u32>, condition_tag: &str) -> Result<FingerprintEstimate> {
        let h = self.fit_channel(c)?;
        let mut values = Vec::with_capacity(h.len());
        let mut faded = Vec::with_capacity(h.len());
        for (ci, hi) in c.values().iter().zip(&h) {
            if hi.norm() >= self.cfg.fade_epsilon {
                values.push(ci / hi - 1.0);
                faded.push(false);
            } else {
                values.push(Complex64::default());
                faded.push(true);
            }
        }
        if faded.iter().all(|&f| f) {
            return Err(CoreError::AllFaded { epsilon: self.cfg.fade_epsilon });
        }
        Ok(FingerprintEstimate { values, faded, source_label: label, condition_tag: condition_tag.to_string() })
    }
}

/// One-off extraction; builds the basis each call.
pub fn extract_fingerprint_ls(c: &CsiVector, cfg: &LsConfig) -> Result<FingerprintEstimate> {
    LsExtractor::new(c.grid().clone(), *cfg)?.extract(c, None, "")
}

/// Elementwise complex mean of repeated measurements.
pub fn denoise_average(measurements: &[CsiVector]) -> Result<CsiVector> {
    let first = measurements.first().ok_or_else(|| CoreError::Insufficient("no measurements to average".into()))?;
    let mut acc = vec![Complex64::default(); first.len()];
    for m in measurements {
        same_grid(first.grid(), m.grid())?;
        acc.iter_mut().zip(m.values()).for_each(|(a, v)| *a += v);
    }
    let n = measurements.len() as f64;
    CsiVector::new(acc.into_iter().map(|v| v / n).collect(), first.grid().clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DistanceKind {
    InterClass,
    IntraClass,
}

impl DistanceKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::InterClass => "inter_class",
            Self::IntraClass => "intra_class",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumber {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumber {
    /// Linear-interpolation quantiles. Panics on an empty slice.
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = p * (v.len() - 1) as f64;
            let lo = h.floor() as usize;
            let hi = h.ceil() as usize;
            v[lo] + (h - lo as f64) * (v[hi] - v[lo])
        };
        Self { min: v[0], q1: q(0.25), median: q(0.5), q3: q(0.75), max: v[v.len() - 1] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSummary {
    pub kind: DistanceKind,
    pub condition_tag: String,
    pub five_number: FiveNumber,
    pub n_pairs: usize,
}

/// Pairwise distances inside each condition group, split into same-label and
/// cross-label pairs. Groups appear in order of first occurrence.
pub fn distance_study(estimates: &[FingerprintEstimate]) -> Result<Vec<DistanceSummary>> {
    if estimates.len() < 2 {
        return Err(CoreError::Insufficient(format!("{} estimates, need at least 2", estimates.len())));
    }
    let mut order: Vec<&str> = Vec::new();
    let mut groups: BTreeMap<&str, Vec<&FingerprintEstimate>> = BTreeMap::new();
    for e in estimates {
        if e.source_label.is_none() {
            log::warn!("estimate in group {:?} has no label; skipped", e.condition_tag);
            continue;
        }
        let g = groups.entry(e.condition_tag.as_str()).or_default();
        if g.is_empty() {
            order.push(e.condition_tag.as_str());
        }
        g.push(e);
    }
    let mut out = Vec::new();
    for tag in order {
        let g = &groups[tag];
        let (mut intra, mut inter) = (Vec::new(), Vec::new());
        for i in 0..g.len() {
            for j in i + 1..g.len() {
                let d = fingerprint_distance(&g[i].values, &g[j].values);
                if g[i].source_label == g[j].source_label {
                    intra.push(d);
                } else {
                    inter.push(d);
                }
            }
        }
        for (kind, d) in [(DistanceKind::InterClass, inter), (DistanceKind::IntraClass, intra)] {
            if !d.is_empty() {
                out.push(DistanceSummary {
                    kind,
                    condition_tag: tag.to_string(),
                    five_number: FiveNumber::of(&d),
                    n_pairs: d.len(),
                });
            }
        }
    }
    if out.is_empty() {
        return Err(CoreError::Insufficient("no labeled pairs within any condition group".into()));
    }
    Ok(out)
}

pub fn summaries_to_csv(summaries: &[DistanceSummary]) -> String {
    let mut s = String::from("kind,condition_tag,min,q1,median,q3,max,n_pairs\n");
    for d in summaries {
        let f = d.five_number;
        let _ = writeln!(
            s,
            "{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{}",
            d.kind.name(),
            d.condition_tag,
            f.min,
            f.q1,
            f.median,
            f.q3,
            f.max,
            d.n_pairs
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<SubcarrierGrid> {
        Arc::new(SubcarrierGrid::wifi_20mhz())
    }

    fn est(values: Vec<Complex64>, label: u32, tag: &str) -> FingerprintEstimate {
        let n = values.len();
        FingerprintEstimate { values, faded: vec![false; n], source_label: Some(label), condition_tag: tag.into() }
    }

    #[test]
    fn flat_channel_gives_zero_fingerprint() {
        let c = CsiVector::ones(grid()).scale(Complex64::new(0.3, -1.2));
        let e = extract_fingerprint_ls(&c, &LsConfig { num_taps: 1, ..Default::default() }).unwrap();
        assert!(e.values.iter().all(|v| v.norm() < 1e-10));
        assert_eq!(e.faded_count(), 0);
    }

    #[test]
    fn faded_bins_are_zero_filled_and_flagged() {
        let g = grid();
        let mut v = vec![Complex64::new(1.0, 0.0); 52];
        v[3] = Complex64::new(0.0, 0.0);
        let e = LsExtractor::new(g.clone(), LsConfig { num_taps: 52, fade_epsilon: 1e-6 })
            .unwrap()
            .extract(&CsiVector::new(v, g.clone()).unwrap(), Some(0), "x")
            .unwrap();
        assert!(e.faded[3]);
        assert_eq!(e.values[3], Complex64::default());
        assert_eq!(e.faded_count(), 1);
        let zero = CsiVector::new(vec![Complex64::default(); 52], g).unwrap();
        assert!(matches!(extract_fingerprint_ls(&zero, &LsConfig::default()), Err(CoreError::AllFaded { .. })));
    }

    #[test]
    fn invalid_orders_are_rejected() {
        assert!(LsExtractor::new(grid(), LsConfig { num_taps: 0, ..Default::default() }).is_err());
        assert!(LsExtractor::new(grid(), LsConfig { num_taps: 53, ..Default::default() }).is_err());
        assert!(LsExtractor::new(grid(), LsConfig { fade_epsilon: 0.0, ..Default::default() }).is_err());
    }

    #[test]
    fn average_of_one_and_of_copies() {
        let c = CsiVector::new((0..52).map(|k| Complex64::new(k as f64, 1.0)).collect(), grid()).unwrap();
        assert_eq!(denoise_average(std::slice::from_ref(&c)).unwrap(), c);
        assert_eq!(denoise_average(&vec![c.clone(); 7]).unwrap(), c);
        assert!(denoise_average(&[]).is_err());
    }

    #[test]
    fn identical_same_label_pair_has_zero_intra() {
        let v = vec![Complex64::new(0.1, 0.2); 4];
        let s = distance_study(&[est(v.clone(), 3, "g"), est(v, 3, "g")]).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].kind, DistanceKind::IntraClass);
        assert_eq!(s[0].five_number, FiveNumber { min: 0.0, q1: 0.0, median: 0.0, q3: 0.0, max: 0.0 });
        assert!(distance_study(&s.iter().map(|_| est(vec![], 0, "g")).take(1).collect::<Vec<_>>()).is_err());
    }

    #[test]
    fn five_number_interpolates() {
        let f = FiveNumber::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!(f, FiveNumber { min: 1.0, q1: 1.75, median: 2.5, q3: 3.25, max: 4.0 });
    }

    #[test]
    fn csv_has_documented_columns() {
        let v = vec![Complex64::new(0.1, 0.0)];
        let s = distance_study(&[est(v.clone(), 0, "LoS"), est(v, 1, "LoS")]).unwrap();
        let csv = summaries_to_csv(&s);
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "kind,condition_tag,min,q1,median,q3,max,n_pairs");
        assert!(lines.next().unwrap().starts_with("inter_class,LoS,0.000000000,"));
    }
}

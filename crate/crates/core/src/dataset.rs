//! Labeled CSI datasets: augmentation, generation, splits and the record file.
//!
//! Record file layout (little-endian):
//!
//! ```text
//! header   magic "CSF1", version u16, n_subcarriers u16, record_count u64
//! record   label u16, channel_tag u8, snr_centidb i16, realization_id u32,
//!          n_subcarriers x (re f32, im f32)
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use num_complex::{Complex32, Complex64};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bytes::ByteReader;
use crate::channel::{sample_channel, ChannelModelSpec, ChannelTag, MultipathChannel};
use crate::devices::{hex_digest, DevicePopulation};
use crate::error::{CoreError, FormatError, Result};
use crate::rng::{RandomStream, DOMAIN_DATASET, DOMAIN_FLAT, DOMAIN_SPLIT};
use crate::signal::{add_awgn, CsiVector, NoiseSpec, SubcarrierGrid};

pub const DATASET_MAGIC: &[u8; 4] = b"CSF1";
pub const DATASET_VERSION: u16 = 1;
const HEADER_BYTES: usize = 16;
/// Stored SNR of noiseless records.
pub const NOISELESS_CENTIDB: i16 = i16::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub label: u16,
    pub channel_tag: ChannelTag,
    pub snr_centidb: i16,
    pub realization_id: u32,
    pub csi: Vec<Complex32>,
}

impl DatasetRecord {
    /// `f64::INFINITY` for noiseless records.
    pub fn snr_db(&self) -> f64 {
        if self.snr_centidb == NOISELESS_CENTIDB {
            f64::INFINITY
        } else {
            self.snr_centidb as f64 / 100.0
        }
    }

    pub fn csi64(&self) -> Vec<Complex64> {
        self.csi.iter().map(|v| Complex64::new(v.re as f64, v.im as f64)).collect()
    }

    pub fn to_csi(&self, grid: Arc<SubcarrierGrid>) -> Result<CsiVector> {
        CsiVector::new(self.csi64(), grid)
    }
}

pub fn snr_to_centidb(snr_db: f64) -> Result<i16> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(NOISELESS_CENTIDB);
    }
    let c = (snr_db * 100.0).round();
    if !c.is_finite() || c.abs() >= NOISELESS_CENTIDB as f64 || (c / 100.0 - snr_db).abs() > 1e-9 {
        return Err(CoreError::Config(format!("snr {snr_db} dB is not representable in centi-dB")));
    }
    Ok(c as i16)
}

/// `h_a * c_d + z_a`.
pub fn augment_sample(
    c_d: &CsiVector,
    h_a: &MultipathChannel,
    noise: &NoiseSpec,
    rng: &mut RandomStream,
) -> Result<CsiVector> {
    let mixed = h_a.freq_response.hadamard(c_d)?;
    add_awgn(&mixed, noise, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub n_realizations: usize,
    pub snr_grid: Vec<f64>,
    pub seed: u64,
    /// Refuse to generate more records than this.
    pub record_cap: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self { n_realizations: 50, snr_grid: (1..=8).map(|i| 5.0 * i as f64).collect(), seed: 0, record_cap: 2_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub fft_size: usize,
    pub n_subcarriers: usize,
    pub sample_period: f64,
}

impl GridInfo {
    pub fn of(g: &SubcarrierGrid) -> Self {
        Self { fft_size: g.fft_size(), n_subcarriers: g.len(), sample_period: g.sample_period() }
    }
}

/// Structured description of a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u16,
    pub record_count: u64,
    pub n_devices: usize,
    pub grid: GridInfo,
    pub channels: Vec<ChannelModelSpec>,
    pub channel_tags: Vec<String>,
    pub snr_grid: Vec<f64>,
    pub n_realizations: usize,
    pub seed: u64,
    pub population_hash: String,
    pub dataset_hash: String,
    #[serde(default)]
    pub split_fallback: bool,
}

impl DatasetManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable manifest")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CoreError::Config(format!("manifest: {e}")))
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub manifest: DatasetManifest,
}

/// Noiseless base measurement of a device: flat unit channel times `1 + f`.
pub fn base_csi(pop: &DevicePopulation, device: usize) -> Result<CsiVector> {
    pop.fingerprint(device).as_csi(pop.grid.clone())
}

fn to_f32(c: &CsiVector) -> Vec<Complex32> {
    c.values().iter().map(|v| Complex32::new(v.re as f32, v.im as f32)).collect()
}

/// Records produced for a device x channel x SNR x realization grid.
pub fn record_count(n_devices: usize, n_channels: usize, n_snr: usize, n_realizations: usize) -> Option<usize> {
    n_devices.checked_mul(n_channels)?.checked_mul(n_snr)?.checked_mul(n_realizations)
}

/// One record per (device, channel, SNR, realization), in that nesting order.
/// Each tuple draws from its own stream, so any record can be regenerated alone.
pub fn build_dataset(pop: &DevicePopulation, channels: &[ChannelModelSpec], opts: &BuildOptions) -> Result<Dataset> {
    if opts.snr_grid.is_empty() || opts.n_realizations == 0 || channels.is_empty() {
        return Err(CoreError::Config("dataset needs channels, SNR levels and realizations".into()));
    }
    let total = record_count(pop.len(), channels.len(), opts.snr_grid.len(), opts.n_realizations)
        .ok_or_else(|| CoreError::ResourceLimit("record count overflows".into()))?;
    if total > opts.record_cap {
        return Err(CoreError::ResourceLimit(format!("{total} records exceed the cap of {}", opts.record_cap)));
    }
    if opts.n_realizations > u32::MAX as usize {
        return Err(CoreError::Config("n_realizations exceeds u32".into()));
    }
    let noise: Vec<(NoiseSpec, i16)> =
        opts.snr_grid.iter().map(|&s| Ok((NoiseSpec::new(s)?, snr_to_centidb(s)?))).collect::<Result<_>>()?;
    for c in channels {
        c.validate(&pop.grid)?;
    }
    let mut records = Vec::with_capacity(total);
    let mut tuple = 0u64;
    for dev in 0..pop.len() {
        let c_d = base_csi(pop, dev)?;
        for spec in channels {
            for (ns, centi) in &noise {
                for r in 0..opts.n_realizations {
                    let mut rng = RandomStream::derive(opts.seed, DOMAIN_DATASET, tuple);
                    let h_a = sample_channel(spec, pop.grid.clone(), &mut rng)?;
                    let c = augment_sample(&c_d, &h_a, ns, &mut rng)?;
                    records.push(DatasetRecord {
                        label: dev as u16,
                        channel_tag: spec.tag(),
                        snr_centidb: *centi,
                        realization_id: r as u32,
                        csi: to_f32(&c),
                    });
                    tuple += 1;
                }
            }
        }
    }
    let manifest = manifest_for(pop, channels, opts, &records);
    Ok(Dataset { records, manifest })
}

/// Flat-channel noiseless samples: `g * (1 + f)` with a random complex gain `g`.
pub fn build_flat_dataset(pop: &DevicePopulation, n_realizations: usize, seed: u64) -> Result<Dataset> {
    if n_realizations == 0 {
        return Err(CoreError::Config("n_realizations must be positive".into()));
    }
    let mut records = Vec::with_capacity(pop.len() * n_realizations);
    for dev in 0..pop.len() {
        let c_d = base_csi(pop, dev)?;
        for r in 0..n_realizations {
            let mut rng = RandomStream::derive(seed, DOMAIN_FLAT, (dev * n_realizations + r) as u64);
            let g = rng.complex_normal();
            records.push(DatasetRecord {
                label: dev as u16,
                channel_tag: ChannelTag::Flat,
                snr_centidb: NOISELESS_CENTIDB,
                realization_id: r as u32,
                csi: to_f32(&c_d.scale(g)),
            });
        }
    }
    let opts = BuildOptions { n_realizations, snr_grid: Vec::new(), seed, record_cap: usize::MAX };
    let manifest = manifest_for(pop, &[], &opts, &records);
    Ok(Dataset { records, manifest })
}

fn manifest_for(
    pop: &DevicePopulation,
    channels: &[ChannelModelSpec],
    opts: &BuildOptions,
    records: &[DatasetRecord],
) -> DatasetManifest {
    let mut tags: Vec<String> = channels.iter().map(|c| c.tag().name().to_string()).collect();
    if channels.is_empty() {
        tags.push(ChannelTag::Flat.name().into());
    }
    DatasetManifest {
        format: String::from_utf8_lossy(DATASET_MAGIC).into_owned(),
        version: DATASET_VERSION,
        record_count: records.len() as u64,
        n_devices: pop.len(),
        grid: GridInfo::of(&pop.grid),
        channels: channels.to_vec(),
        channel_tags: tags,
        snr_grid: opts.snr_grid.clone(),
        n_realizations: opts.n_realizations,
        seed: opts.seed,
        population_hash: pop.hash_hex(),
        dataset_hash: hex_digest(&records_to_bytes(records, pop.grid.len()).expect("records match the grid")),
        split_fallback: false,
    }
}

/// Key that stratified splits preserve proportions within.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StratumKey {
    pub label: u16,
    pub channel_tag: ChannelTag,
    pub snr_centidb: i16,
}

impl StratumKey {
    pub fn of(r: &DatasetRecord) -> Self {
        Self { label: r.label, channel_tag: r.channel_tag, snr_centidb: r.snr_centidb }
    }
}

/// Smallest stratum that is split on its own; below this the split is global.
pub const MIN_STRATUM: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Set when some stratum was too small and a global split was used instead.
    pub fallback: bool,
}

/// Per-part counts for `n` items by largest remainder; ties go to the earlier part.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for i in 0..3 {
        counts[i] = (exact[i] + 1e-9).floor() as usize;
    }
    let mut left = n - counts.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| {
        let ra = exact[a] - counts[a] as f64;
        let rb = exact[b] - counts[b] as f64;
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn check_fractions(f: [f64; 3]) -> Result<()> {
    if f.iter().any(|v| !(0.0..=1.0).contains(v)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CoreError::Config(format!("split fractions {f:?} must be in [0, 1] and sum to 1")));
    }
    Ok(())
}

/// Stratified split over arbitrary keys.
pub fn split_keys(keys: &[StratumKey], fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    check_fractions(fractions)?;
    let mut strata: BTreeMap<StratumKey, Vec<usize>> = BTreeMap::new();
    for (i, k) in keys.iter().enumerate() {
        strata.entry(*k).or_default().push(i);
    }
    let fallback = strata.values().any(|v| v.len() < MIN_STRATUM);
    let groups: Vec<Vec<usize>> = if fallback {
        log::warn!("a stratum has fewer than {MIN_STRATUM} records; using a global split");
        vec![(0..keys.len()).collect()]
    } else {
        strata.into_values().collect()
    };
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (gi, mut g) in groups.into_iter().enumerate() {
        let mut rng = RandomStream::derive(seed, DOMAIN_SPLIT, gi as u64);
        g.shuffle(rng.rng_mut());
        let [a, b, _] = split_counts(g.len(), fractions);
        train.extend_from_slice(&g[..a]);
        val.extend_from_slice(&g[a..a + b]);
        test.extend_from_slice(&g[a + b..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(DatasetSplit { train, val, test, fallback })
}

pub fn split_dataset(records: &[DatasetRecord], fractions: [f64; 3], seed: u64) -> Result<DatasetSplit> {
    let keys: Vec<StratumKey> = records.iter().map(StratumKey::of).collect();
    split_keys(&keys, fractions, seed)
}

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.8, 0.1, 0.1];

pub fn records_to_bytes(records: &[DatasetRecord], n_subcarriers: usize) -> Result<Vec<u8>> {
    if n_subcarriers > u16::MAX as usize {
        return Err(CoreError::Config("too many subcarriers for the record format".into()));
    }
    let mut out = Vec::with_capacity(HEADER_BYTES + records.len() * (9 + 8 * n_subcarriers));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(n_subcarriers as u16).to_le_bytes());
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        if r.csi.len() != n_subcarriers {
            return Err(CoreError::GridMismatch(format!(
                "record with {} bins in a {n_subcarriers}-bin file",
                r.csi.len()
            )));
        }
        out.extend_from_slice(&r.label.to_le_bytes());
        out.push(r.channel_tag.code());
        out.extend_from_slice(&r.snr_centidb.to_le_bytes());
        out.extend_from_slice(&r.realization_id.to_le_bytes());
        for v in &r.csi {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        }
    }
    Ok(out)
}

/// Decoded file contents.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordFile {
    pub n_subcarriers: usize,
    pub records: Vec<DatasetRecord>,
}

pub fn records_from_bytes(bytes: &[u8]) -> std::result::Result<RecordFile, FormatError> {
    let mut r = ByteReader::new(bytes);
    r.magic(DATASET_MAGIC)?;
    let version = r.u16()?;
    if version != DATASET_VERSION {
        return Err(FormatError::Version(version));
    }
    let n = r.u16()? as usize;
    let count = r.u64()?;
    let per = 9 + 8 * n;
    let need = (count as u128) * per as u128;
    if need > r.remaining() as u128 {
        return Err(FormatError::Truncated {
            offset: r.pos,
            needed: (need - r.remaining() as u128).min(usize::MAX as u128) as usize,
        });
    }
    let mut records = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let label = r.u16()?;
        let code = r.u8()?;
        let channel_tag =
            ChannelTag::from_code(code).ok_or_else(|| FormatError::Corrupt(format!("channel tag {code}")))?;
        let snr_centidb = r.i16()?;
        let realization_id = r.u32()?;
        let mut csi = Vec::with_capacity(n);
        for _ in 0..n {
            csi.push(Complex32::new(r.f32()?, r.f32()?));
        }
        records.push(DatasetRecord { label, channel_tag, snr_centidb, realization_id, csi });
    }
    r.finish()?;
    Ok(RecordFile { n_subcarriers: n, records })
}

pub fn write_records(path: &Path, records: &[DatasetRecord], n_subcarriers: usize) -> Result<String> {
    let bytes = records_to_bytes(records, n_subcarriers)?;
    std::fs::write(path, &bytes)?;
    Ok(hex_digest(&bytes))
}

pub fn read_records(path: &Path) -> Result<RecordFile> {
    Ok(records_from_bytes(&std::fs::read(path)?)?)
}

/// Check that `records` belong to `pop`'s grid and label range.
pub fn check_compatible(records: &[DatasetRecord], pop: &DevicePopulation) -> Result<()> {
    for r in records {
        if r.csi.len() != pop.grid.len() {
            return Err(CoreError::GridMismatch(format!("record has {} bins, grid {}", r.csi.len(), pop.grid.len())));
        }
        if r.label as usize >= pop.len() {
            return Err(CoreError::Config(format!("label {} outside a {}-device population", r.label, pop.len())));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::devices::{generate_population, PopulationConfig};

    fn pop(n: usize) -> DevicePopulation {
        let cfg = PopulationConfig { n_devices: n, ..Default::default() };
        generate_population(&cfg, Arc::new(SubcarrierGrid::wifi_20mhz())).unwrap()
    }

    fn rec(label: u16, tag: ChannelTag, snr: i16) -> DatasetRecord {
        DatasetRecord {
            label,
            channel_tag: tag,
            snr_centidb: snr,
            realization_id: 0,
            csi: vec![Complex32::new(1.0, 0.0); 2],
        }
    }

    #[test]
    fn identity_augmentation() {
        let p = pop(2);
        let c_d = base_csi(&p, 1).unwrap();
        let h = MultipathChannel::identity(p.grid.clone());
        let out = augment_sample(&c_d, &h, &NoiseSpec::disabled(), &mut RandomStream::new(0)).unwrap();
        assert_eq!(out, c_d);
    }

    #[test]
    fn two_record_dataset() {
        let p = pop(2);
        let opts = BuildOptions { n_realizations: 1, snr_grid: vec![20.0], ..Default::default() };
        let d = build_dataset(&p, &ChannelModelSpec::default_grid()[..1], &opts).unwrap();
        assert_eq!(d.records.len(), 2);
        assert_ne!(d.records[0].label, d.records[1].label);
        assert_eq!(d.manifest.record_count, 2);
    }

    #[test]
    fn record_cap_is_enforced() {
        let opts = BuildOptions { n_realizations: 10, record_cap: 100, ..Default::default() };
        assert!(matches!(
            build_dataset(&pop(2), &ChannelModelSpec::default_grid(), &opts),
            Err(CoreError::ResourceLimit(_))
        ));
    }

    #[test]
    fn split_counts_follow_largest_remainder() {
        assert_eq!(split_counts(10, DEFAULT_FRACTIONS), [8, 1, 1]);
        assert_eq!(split_counts(50, DEFAULT_FRACTIONS), [40, 5, 5]);
        assert_eq!(split_counts(11, DEFAULT_FRACTIONS), [9, 1, 1]);
        assert_eq!(split_counts(13, DEFAULT_FRACTIONS), [11, 1, 1]);
        assert_eq!(split_counts(14, DEFAULT_FRACTIONS), [11, 2, 1]);
        assert_eq!(split_counts(0, DEFAULT_FRACTIONS), [0, 0, 0]);
    }

    #[test]
    fn single_stratum_of_ten() {
        let recs: Vec<_> = (0..10).map(|_| rec(0, ChannelTag::BLos, 4000)).collect();
        let s = split_dataset(&recs, DEFAULT_FRACTIONS, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert!(!s.fallback);
    }

    #[test]
    fn small_strata_fall_back_to_global_split() {
        let recs: Vec<_> = (0..20).map(|i| rec(i % 4, ChannelTag::BLos, 4000)).collect();
        let s = split_dataset(&recs, DEFAULT_FRACTIONS, 1).unwrap();
        assert!(s.fallback);
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (16, 2, 2));
        assert!(split_dataset(&recs, [0.5, 0.5, 0.5], 1).is_err());
    }

    #[test]
    fn centidb_conversion() {
        assert_eq!(snr_to_centidb(40.0).unwrap(), 4000);
        assert_eq!(snr_to_centidb(-7.25).unwrap(), -725);
        assert_eq!(snr_to_centidb(f64::INFINITY).unwrap(), NOISELESS_CENTIDB);
        assert!(snr_to_centidb(0.001).is_err());
        assert!(snr_to_centidb(f64::NAN).is_err());
    }

    #[test]
    fn empty_file_round_trips() {
        let bytes = records_to_bytes(&[], 52).unwrap();
        assert_eq!(bytes.len(), HEADER_BYTES);
        let back = records_from_bytes(&bytes).unwrap();
        assert!(back.records.is_empty());
        assert_eq!(back.n_subcarriers, 52);
    }

    #[test]
    fn corrupted_headers_are_typed() {
        let recs = vec![rec(1, ChannelTag::CNlos, 500), rec(0, ChannelTag::Flat, NOISELESS_CENTIDB)];
        let bytes = records_to_bytes(&recs, 2).unwrap();
        assert_eq!(records_from_bytes(&bytes).unwrap().records, recs);
        let mut b = bytes.clone();
        b[1] = b'X';
        assert!(matches!(records_from_bytes(&b), Err(FormatError::BadMagic { .. })));
        let mut b = bytes.clone();
        b[4] = 7;
        assert!(matches!(records_from_bytes(&b), Err(FormatError::Version(7))));
        assert!(matches!(records_from_bytes(&bytes[..bytes.len() - 4]), Err(FormatError::Truncated { .. })));
        assert!(matches!(records_from_bytes(&bytes[..3]), Err(FormatError::Truncated { .. })));
        let mut b = bytes.clone();
        b[HEADER_BYTES + 2] = 9;
        assert!(matches!(records_from_bytes(&b), Err(FormatError::Corrupt(_))));
        let mut b = bytes;
        b.push(0);
        assert!(matches!(records_from_bytes(&b), Err(FormatError::Corrupt(_))));
    }
}

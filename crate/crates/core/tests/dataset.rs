use std::f64::consts::PI;
use std::sync::Arc;

use csirff_core::dataset::{record_count, records_from_bytes, records_to_bytes, split_keys, StratumKey};
use csirff_core::devices::hex_digest;
use csirff_core::*;
use num_complex::{Complex32, Complex64};
use proptest::prelude::*;

fn grid() -> Arc<SubcarrierGrid> {
    Arc::new(SubcarrierGrid::wifi_20mhz())
}

fn random_csi(g: &Arc<SubcarrierGrid>, rng: &mut RandomStream) -> CsiVector {
    CsiVector::new((0..g.len()).map(|_| rng.complex_normal()).collect(), g.clone()).unwrap()
}

#[test]
fn augmentation_is_elementwise_product_plus_noise() {
    let g = grid();
    let mut rng = RandomStream::new(1);
    let spec = ChannelModelSpec::default_for(ChannelModel::ModelC, false);
    for i in 0..1000 {
        let c_d = random_csi(&g, &mut rng);
        let h = sample_channel(&spec, g.clone(), &mut rng).unwrap();
        let noiseless = augment_sample(&c_d, &h, &NoiseSpec::disabled(), &mut rng).unwrap();
        for k in 0..g.len() {
            let want = h.freq_response.values()[k] * c_d.values()[k];
            assert!((noiseless.values()[k] - want).norm() < 1e-10);
        }
        let noise = NoiseSpec::new(10.0 + (i % 30) as f64).unwrap();
        let mut a = RandomStream::new(i);
        let mut b = RandomStream::new(i);
        let got = augment_sample(&c_d, &h, &noise, &mut a).unwrap();
        let want = add_awgn(&noiseless, &noise, &mut b).unwrap();
        for (x, y) in got.values().iter().zip(want.values()) {
            assert!((x - y).norm() < 1e-10);
        }
    }
}

fn dft(x: &[Complex64], sign: f64) -> Vec<Complex64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            x.iter()
                .enumerate()
                .map(|(t, v)| v * Complex64::from_polar(1.0, sign * 2.0 * PI * (k * t) as f64 / n as f64))
                .sum()
        })
        .collect()
}

#[test]
fn augmentation_equals_circular_convolution_in_time() {
    let active: Vec<i32> = (-32..32).filter(|&k| k != 0).collect();
    let g = Arc::new(SubcarrierGrid::new(64, active.clone(), 50e-9).unwrap());
    let mut rng = RandomStream::new(2);
    for _ in 0..50 {
        let mut spectrum = vec![Complex64::new(0.0, 0.0); 64];
        let c_d = random_csi(&g, &mut rng);
        for (k, v) in active.iter().zip(c_d.values()) {
            spectrum[k.rem_euclid(64) as usize] = *v;
        }
        spectrum[0] = rng.complex_normal();
        let x: Vec<Complex64> = dft(&spectrum, 1.0).into_iter().map(|v| v / 64.0).collect();
        let taps: Vec<Complex64> = (0..9).map(|_| rng.complex_normal()).collect();
        let y: Vec<Complex64> =
            (0..64).map(|n| taps.iter().enumerate().map(|(l, h)| h * x[(n + 64 - l) % 64]).sum()).collect();
        let y_f = dft(&y, -1.0);
        let h = MultipathChannel::from_taps(taps, g.clone()).unwrap();
        let got = augment_sample(&c_d, &h, &NoiseSpec::disabled(), &mut rng).unwrap();
        for (k, v) in active.iter().zip(got.values()) {
            assert!((y_f[k.rem_euclid(64) as usize] - v).norm() < 1e-10);
        }
    }
}

#[test]
fn full_scale_record_count() {
    assert_eq!(record_count(19, 6, 8, 1000), Some(912_000));
    assert_eq!(record_count(19, 6, 8, 50), Some(45_600));
    assert_eq!(record_count(usize::MAX, 2, 1, 1), None);
}

#[test]
fn full_scale_split_sizes() {
    let mut keys = Vec::with_capacity(912_000);
    for label in 0..19u16 {
        for tag in ChannelTag::MULTIPATH {
            for snr in (5..=40).step_by(5) {
                for _ in 0..1000 {
                    keys.push(StratumKey { label, channel_tag: tag, snr_centidb: snr * 100 });
                }
            }
        }
    }
    let s = split_keys(&keys, [0.8, 0.1, 0.1], 0).unwrap();
    assert_eq!((s.train.len(), s.val.len(), s.test.len()), (729_600, 91_200, 91_200));
    assert!(!s.fallback);
}

fn small_dataset(seed: u64) -> Dataset {
    let pop = generate_population(&PopulationConfig { n_devices: 3, seed, ..Default::default() }, grid()).unwrap();
    let channels = ChannelModelSpec::default_grid();
    build_dataset(
        &pop,
        &channels[..2],
        &BuildOptions { n_realizations: 12, snr_grid: vec![10.0, 30.0], seed, ..Default::default() },
    )
    .unwrap()
}

#[test]
fn strata_are_split_within_one_record() {
    let ds = small_dataset(3);
    let s = split_dataset(&ds.records, [0.7, 0.2, 0.1], 5).unwrap();
    assert!(!s.fallback);
    let mut strata = std::collections::BTreeMap::<_, [usize; 4]>::new();
    for (part, idx) in [&s.train, &s.val, &s.test].into_iter().enumerate() {
        for &i in idx {
            let e = strata.entry(StratumKey::of(&ds.records[i])).or_default();
            e[part] += 1;
            e[3] += 1;
        }
    }
    for counts in strata.values() {
        for (part, f) in [0.7, 0.2, 0.1].into_iter().enumerate() {
            assert!((counts[part] as f64 - f * counts[3] as f64).abs() <= 1.0, "{counts:?}");
        }
    }
}

#[test]
fn build_is_byte_deterministic() {
    let a = small_dataset(4);
    let b = small_dataset(4);
    let n = grid().len();
    assert_eq!(records_to_bytes(&a.records, n).unwrap(), records_to_bytes(&b.records, n).unwrap());
    assert_eq!(a.manifest.dataset_hash, b.manifest.dataset_hash);
    assert_ne!(a.manifest.dataset_hash, small_dataset(5).manifest.dataset_hash);
}

#[test]
fn random_records_round_trip() {
    let mut rng = RandomStream::new(6);
    let tags: Vec<ChannelTag> = (0..7).map(|c| ChannelTag::from_code(c).unwrap()).collect();
    let records: Vec<DatasetRecord> = (0..1000)
        .map(|i| DatasetRecord {
            label: rng.below(19) as u16,
            channel_tag: tags[rng.below(7) as usize],
            snr_centidb: (rng.below(6000) as i16) - 1000,
            realization_id: i,
            csi: (0..52).map(|_| Complex32::new(rng.normal() as f32, rng.normal() as f32)).collect(),
        })
        .collect();
    let bytes = records_to_bytes(&records, 52).unwrap();
    let back = records_from_bytes(&bytes).unwrap();
    assert_eq!(back.records, records);
    assert_eq!(records_to_bytes(&back.records, back.n_subcarriers).unwrap(), bytes);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("records.csf");
    let hash = write_records(&path, &records, 52).unwrap();
    assert_eq!(read_records(&path).unwrap().records, records);
    assert_eq!(hash, hex_digest(&std::fs::read(&path).unwrap()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_partition(labels in prop::collection::vec(0u16..4, 1..300), seed in any::<u64>(), a in 0.0f64..1.0) {
        let b = (1.0 - a) / 2.0;
        let keys: Vec<_> = labels
            .iter()
            .map(|&label| StratumKey { label, channel_tag: ChannelTag::Flat, snr_centidb: 0 })
            .collect();
        let s = split_keys(&keys, [a, b, 1.0 - a - b], seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..keys.len()).collect::<Vec<_>>());
    }
}

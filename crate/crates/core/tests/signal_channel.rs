use std::f64::consts::PI;
use std::sync::Arc;

use csirff_core::channel::{freq_response, response_at_delays};
use csirff_core::signal::wrapped_arg;
use csirff_core::*;
use num_complex::Complex64;
use proptest::prelude::*;

fn grid() -> Arc<SubcarrierGrid> {
    Arc::new(SubcarrierGrid::wifi_20mhz())
}

fn random_vec(rng: &mut RandomStream, n: usize, scale: f64) -> Vec<Complex64> {
    (0..n).map(|_| rng.complex_normal() * scale).collect()
}

/// Direct N-point DFT of zero-padded taps, indexed by unsigned bin.
fn dft_oracle(taps: &[Complex64], n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| {
            taps.iter()
                .enumerate()
                .map(|(l, t)| t * Complex64::from_polar(1.0, -2.0 * PI * (k * l % n) as f64 / n as f64))
                .sum()
        })
        .collect()
}

#[test]
fn compose_matches_elementwise_oracle_and_is_linear() {
    let g = grid();
    let mut rng = RandomStream::new(10);
    for _ in 0..1000 {
        let h = CsiVector::new(random_vec(&mut rng, 52, 1.0), g.clone()).unwrap();
        let fp = DeviceFingerprint::new(0, random_vec(&mut rng, 52, 0.05)).unwrap();
        let out = compose_csi(&h, &fp, &NoiseSpec::disabled(), &mut rng).unwrap();
        for k in 0..52 {
            let want = h.values()[k] + h.values()[k] * fp.deviations()[k];
            assert!((out.values()[k] - want).norm() <= 1e-10 * want.norm().max(1.0));
        }
        let alpha = rng.complex_normal();
        let scaled = compose_csi(&h.scale(alpha), &fp, &NoiseSpec::disabled(), &mut rng).unwrap();
        for k in 0..52 {
            assert!((scaled.values()[k] - alpha * out.values()[k]).norm() < 1e-10);
        }
    }
}

#[test]
fn unit_channel_gives_one_plus_f() {
    let mut rng = RandomStream::new(11);
    let fp = DeviceFingerprint::new(3, random_vec(&mut rng, 52, 0.03)).unwrap();
    let out = compose_csi(&CsiVector::ones(grid()), &fp, &NoiseSpec::disabled(), &mut rng).unwrap();
    for (o, f) in out.values().iter().zip(fp.deviations()) {
        assert_eq!(*o, Complex64::new(1.0, 0.0) + f);
    }
}

#[test]
fn compose_is_bit_reproducible() {
    let run = || {
        let mut rng = RandomStream::derive(5, 9, 1);
        let h = CsiVector::new(random_vec(&mut rng, 52, 1.0), grid()).unwrap();
        let fp = DeviceFingerprint::new(0, random_vec(&mut rng, 52, 0.03)).unwrap();
        compose_csi(&h, &fp, &NoiseSpec::new(15.0).unwrap(), &mut rng).unwrap()
    };
    let a = run();
    let b = run();
    assert!(a
        .values()
        .iter()
        .zip(b.values())
        .all(|(x, y)| x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()));
}

fn measured_snr_db(snr: f64, signal_scale: f64, draws: usize, seed: u64) -> (f64, f64) {
    let g = grid();
    let mut rng = RandomStream::new(seed);
    let c = CsiVector::new(random_vec(&mut rng, 52, 1.0), g).unwrap();
    let c = c.scale(Complex64::new(signal_scale / c.power().sqrt(), 0.0));
    let spec = NoiseSpec::new(snr).unwrap();
    let mut noise_power = 0.0;
    let mut n = 0usize;
    while n < draws {
        let y = add_awgn(&c, &spec, &mut rng).unwrap();
        for (a, b) in y.values().iter().zip(c.values()) {
            noise_power += (a - b).norm_sqr();
        }
        n += 52;
    }
    let noise = noise_power / n as f64;
    (10.0 * (c.power() / noise).log10(), noise / c.power())
}

#[test]
fn awgn_is_calibrated_to_measured_power() {
    for scale in [1.0, 0.01, 40.0] {
        let (snr, _) = measured_snr_db(20.0, scale, 100_000, 12);
        assert!((snr - 20.0).abs() < 0.1, "scale {scale}: {snr}");
    }
    let (_, ratio) = measured_snr_db(0.0, 1.0, 100_000, 13);
    assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
}

#[test]
fn freq_response_matches_direct_dft() {
    let g = grid();
    let mut rng = RandomStream::new(14);
    for _ in 0..20 {
        let taps = random_vec(&mut rng, 9, 1.0);
        let h = freq_response(&taps, g.clone()).unwrap();
        let full = dft_oracle(&taps, 64);
        for (i, v) in h.values().iter().enumerate() {
            assert!((v - full[g.bin(i)]).norm() < 1e-10);
        }
    }
    assert!(freq_response(&[Complex64::new(1.0, 0.0)], g)
        .unwrap()
        .values()
        .iter()
        .all(|v| *v == Complex64::new(1.0, 0.0)));
}

#[test]
fn parseval_on_the_full_grid() {
    // Every non-DC bin as active; the DC bin is the plain tap sum.
    let full = Arc::new(SubcarrierGrid::new(64, (-31..=-1).chain(1..=32).collect(), 50e-9).unwrap());
    let mut rng = RandomStream::new(15);
    for _ in 0..20 {
        let taps = random_vec(&mut rng, 18, 0.4);
        let h = freq_response(&taps, full.clone()).unwrap();
        let dc: Complex64 = taps.iter().sum();
        let mean = (h.values().iter().map(|v| v.norm_sqr()).sum::<f64>() + dc.norm_sqr()) / 64.0;
        let energy: f64 = taps.iter().map(|t| t.norm_sqr()).sum();
        assert!((mean - energy).abs() < 1e-10);
    }
}

#[test]
fn fractional_delays_reduce_to_partial_dft_at_sample_spacing() {
    let g = grid();
    let mut rng = RandomStream::new(16);
    let taps = random_vec(&mut rng, 5, 1.0);
    let a = freq_response(&taps, g.clone()).unwrap();
    let b = response_at_delays(&taps, &[0.0, 1.0, 2.0, 3.0, 4.0], g).unwrap();
    for (x, y) in a.values().iter().zip(b.values()) {
        assert!((x - y).norm() < 1e-12);
    }
}

#[test]
fn model_b_power_is_unit_in_expectation() {
    let g = grid();
    let mut rng = RandomStream::new(17);
    for los in [false, true] {
        let spec = ChannelModelSpec::default_for(ChannelModel::ModelB, los);
        let n = 100_000;
        let p: f64 = (0..n)
            .map(|_| sample_channel(&spec, g.clone(), &mut rng).unwrap().taps.iter().map(|t| t.norm_sqr()).sum::<f64>())
            .sum::<f64>()
            / n as f64;
        assert!((p - 1.0).abs() < 0.02, "los {los}: {p}");
    }
}

#[test]
fn model_c_rms_delay_spread_from_empirical_pdp() {
    let g = grid();
    let mut rng = RandomStream::new(18);
    let spec = ChannelModelSpec::default_for(ChannelModel::ModelC, false);
    let mut pdp = vec![0.0; spec.num_taps];
    let n = 100_000;
    for _ in 0..n {
        let ch = sample_channel(&spec, g.clone(), &mut rng).unwrap();
        pdp.iter_mut().zip(&ch.taps).for_each(|(p, t)| *p += t.norm_sqr() / n as f64);
    }
    let total: f64 = pdp.iter().sum();
    let d = spec.delays();
    let m: f64 = pdp.iter().zip(&d).map(|(p, d)| p * d).sum::<f64>() / total;
    let m2: f64 = pdp.iter().zip(&d).map(|(p, d)| p * d * d).sum::<f64>() / total;
    let rms = (m2 - m * m).sqrt();
    assert!((rms / spec.rms_delay_spread - 1.0).abs() < 0.05, "{rms:e}");
}

#[test]
fn channel_draws_are_bit_identical_for_a_seed() {
    let spec = ChannelModelSpec::default_for(ChannelModel::ModelD, true);
    let a = sample_channel(&spec, grid(), &mut RandomStream::derive(1, 2, 3)).unwrap();
    let b = sample_channel(&spec, grid(), &mut RandomStream::derive(1, 2, 3)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn negative_unit_has_phase_pi() {
    let g = Arc::new(SubcarrierGrid::new(4, vec![1], 50e-9).unwrap());
    let m = amp_phase_split(&CsiVector::new(vec![Complex64::new(-2.0, 0.0)], g).unwrap());
    assert_eq!(m.amplitude, vec![2.0]);
    assert_eq!(m.phase, vec![PI]);
}

proptest! {
    #[test]
    fn amp_phase_round_trip(seed in any::<u64>(), scale in 1e-6f64..1e6) {
        let mut rng = RandomStream::new(seed);
        let c = CsiVector::new(random_vec(&mut rng, 52, scale), grid()).unwrap();
        let m = amp_phase_split(&c);
        prop_assert!(m.amplitude.iter().all(|&a| a >= 0.0));
        prop_assert!(m.phase.iter().all(|&p| p > -PI && p <= PI));
        for (r, v) in m.reconstruct().iter().zip(c.values()) {
            prop_assert!((r - v).norm() <= 1e-12 * v.norm());
        }
    }

    #[test]
    fn wrapped_arg_stays_in_range(re in -10.0f64..10.0, im in -10.0f64..10.0) {
        let p = wrapped_arg(Complex64::new(re, im));
        prop_assert!(p > -PI && p <= PI);
    }
}

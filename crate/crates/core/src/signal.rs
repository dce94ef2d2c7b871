//! Subcarrier grid and the CSI signal model `c = h * (1 + f) + z`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::RandomStream;

pub const SNR_MIN_DB: f64 = -10.0;
pub const SNR_MAX_DB: f64 = 60.0;

/// Active OFDM subcarriers with their signed DFT indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubcarrierGrid {
    fft_size: usize,
    active: Vec<i32>,
    sample_period: f64,
}

impl SubcarrierGrid {
    pub fn new(fft_size: usize, active: Vec<i32>, sample_period: f64) -> Result<Self> {
        if active.is_empty() {
            return Err(CoreError::Config("grid needs at least one active subcarrier".into()));
        }
        if active.contains(&0) {
            return Err(CoreError::Config("DC bin cannot be active".into()));
        }
        if active.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CoreError::Config("active indices must be strictly increasing".into()));
        }
        let span = (active[active.len() - 1] - active[0] + 1) as usize;
        if span > fft_size {
            return Err(CoreError::Config(format!("index span {span} exceeds fft size {fft_size}")));
        }
        if !(sample_period > 0.0) {
            return Err(CoreError::Config(format!("sample period must be positive, got {sample_period}")));
        }
        Ok(Self { fft_size, active, sample_period })
    }

    /// 20 MHz 802.11 grid: 52 active bins -26..-1, 1..26 of a 64-point FFT.
    pub fn wifi_20mhz() -> Self {
        let active = (-26..=-1).chain(1..=26).collect();
        Self { fft_size: 64, active, sample_period: 50e-9 }
    }

    pub fn len(&self) -> usize {
        self.active.len()
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn active(&self) -> &[i32] {
        &self.active
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    /// Unsigned DFT bin of active subcarrier `i`.
    pub fn bin(&self, i: usize) -> usize {
        self.active[i].rem_euclid(self.fft_size as i32) as usize
    }

    /// `exp(-j 2 pi k d / N)` for active subcarrier `i` and delay `d` in samples.
    pub fn phasor(&self, i: usize, delay_samples: f64) -> Complex64 {
        Complex64::from_polar(1.0, -2.0 * PI * self.active[i] as f64 * delay_samples / self.fft_size as f64)
    }
}

/// Complex response over the active subcarriers of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiVector {
    values: Vec<Complex64>,
    grid: Arc<SubcarrierGrid>,
}

impl CsiVector {
    pub fn new(values: Vec<Complex64>, grid: Arc<SubcarrierGrid>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(CoreError::GridMismatch(format!("{} values for a {}-bin grid", values.len(), grid.len())));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(CoreError::NonFinite("CSI vector"));
        }
        Ok(Self { values, grid })
    }

    pub fn ones(grid: Arc<SubcarrierGrid>) -> Self {
        Self { values: vec![Complex64::new(1.0, 0.0); grid.len()], grid }
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex64> {
        self.values
    }

    pub fn grid(&self) -> &Arc<SubcarrierGrid> {
        &self.grid
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean power over subcarriers.
    pub fn power(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.values.len() as f64
    }

    pub fn scale(&self, alpha: Complex64) -> Self {
        Self { values: self.values.iter().map(|v| v * alpha).collect(), grid: self.grid.clone() }
    }

    /// Elementwise product; both operands must share a grid.
    pub fn hadamard(&self, other: &CsiVector) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a * b).collect();
        Self::new(values, self.grid.clone())
    }
}

pub(crate) fn same_grid(a: &Arc<SubcarrierGrid>, b: &Arc<SubcarrierGrid>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a == b {
        Ok(())
    } else {
        Err(CoreError::GridMismatch(format!("{}-bin grid vs {}-bin grid", a.len(), b.len())))
    }
}

/// Per-device multiplicative deviation `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceFingerprint {
    device_id: u32,
    deviations: Arc<[Complex64]>,
}

impl DeviceFingerprint {
    pub fn new(device_id: u32, deviations: Vec<Complex64>) -> Result<Self> {
        if deviations.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(CoreError::NonFinite("fingerprint"));
        }
        Ok(Self { device_id, deviations: deviations.into() })
    }

    pub fn device_id(&self) -> u32 {
        self.device_id
    }

    pub fn deviations(&self) -> &[Complex64] {
        &self.deviations
    }

    pub fn len(&self) -> usize {
        self.deviations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deviations.is_empty()
    }

    pub fn rms(&self) -> f64 {
        (self.deviations.iter().map(|v| v.norm_sqr()).sum::<f64>() / self.deviations.len() as f64).sqrt()
    }

    pub fn max_modulus(&self) -> f64 {
        self.deviations.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `1 + f` on `grid`.
    pub fn as_csi(&self, grid: Arc<SubcarrierGrid>) -> Result<CsiVector> {
        CsiVector::new(self.deviations.iter().map(|f| 1.0 + f).collect(), grid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub enabled: bool,
}

impl NoiseSpec {
    pub fn new(snr_db: f64) -> Result<Self> {
        if !(SNR_MIN_DB..=SNR_MAX_DB).contains(&snr_db) {
            return Err(CoreError::Config(format!("snr_db {snr_db} outside [{SNR_MIN_DB}, {SNR_MAX_DB}]")));
        }
        Ok(Self { snr_db, enabled: true })
    }

    pub fn disabled() -> Self {
        Self { snr_db: f64::INFINITY, enabled: false }
    }
}

/// Noiseless composite followed by optional AWGN.
pub fn compose_csi(
    h: &CsiVector,
    fp: &DeviceFingerprint,
    noise: &NoiseSpec,
    rng: &mut RandomStream,
) -> Result<CsiVector> {
    if fp.len() != h.len() {
        return Err(CoreError::GridMismatch(format!("fingerprint has {} bins, channel {}", fp.len(), h.len())));
    }
    let values = h.values().iter().zip(fp.deviations()).map(|(h, f)| h * (1.0 + f)).collect();
    let clean = CsiVector::new(values, h.grid().clone())?;
    add_awgn(&clean, noise, rng)
}

/// Adds circular Gaussian noise whose power is set from the measured power of `c`.
pub fn add_awgn(c: &CsiVector, noise: &NoiseSpec, rng: &mut RandomStream) -> Result<CsiVector> {
    if !noise.enabled {
        return Ok(c.clone());
    }
    if !noise.snr_db.is_finite() {
        return Err(CoreError::Config(format!("snr_db {}", noise.snr_db)));
    }
    let p = c.power();
    if p == 0.0 {
        return Err(CoreError::ZeroPower);
    }
    let sigma = (p * 10f64.powf(-noise.snr_db / 10.0)).sqrt();
    let values = c.values().iter().map(|v| v + rng.complex_normal() * sigma).collect();
    CsiVector::new(values, c.grid().clone())
}

/// Linear amplitude and wrapped phase rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AmpPhaseMatrix {
    pub amplitude: Vec<f64>,
    pub phase: Vec<f64>,
}

impl AmpPhaseMatrix {
    pub fn reconstruct(&self) -> Vec<Complex64> {
        self.amplitude.iter().zip(&self.phase).map(|(&a, &p)| Complex64::from_polar(a, p)).collect()
    }
}

/// Phase in (-pi, pi] with `arg(0) = 0`.
pub fn wrapped_arg(v: Complex64) -> f64 {
    if v.re == 0.0 && v.im == 0.0 {
        return 0.0;
    }
    let p = v.im.atan2(v.re);
    if p <= -PI {
        PI
    } else {
        p
    }
}

pub fn amp_phase_split(c: &CsiVector) -> AmpPhaseMatrix {
    amp_phase_of(c.values())
}

pub fn amp_phase_of(values: &[Complex64]) -> AmpPhaseMatrix {
    AmpPhaseMatrix {
        amplitude: values.iter().map(|v| v.norm()).collect(),
        phase: values.iter().map(|&v| wrapped_arg(v)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn wifi_grid_layout() {
        let g = SubcarrierGrid::wifi_20mhz();
        assert_eq!(g.len(), 52);
        assert_eq!(g.active()[0], -26);
        assert_eq!(g.active()[51], 26);
        assert_eq!(g.bin(0), 38);
        assert_eq!(g.bin(26), 1);
        assert!(SubcarrierGrid::new(64, vec![-1, 0, 1], 50e-9).is_err());
        assert!(SubcarrierGrid::new(64, vec![2, 1], 50e-9).is_err());
        assert!(SubcarrierGrid::new(4, vec![-3, 3], 50e-9).is_err());
    }

    #[test]
    fn zero_fingerprint_without_noise_returns_channel() {
        let g = Arc::new(SubcarrierGrid::wifi_20mhz());
        let mut r = RandomStream::new(1);
        let h = CsiVector::new((0..52).map(|i| c(i as f64 * 0.1, -1.0)).collect(), g).unwrap();
        let fp = DeviceFingerprint::new(0, vec![Complex64::default(); 52]).unwrap();
        let out = compose_csi(&h, &fp, &NoiseSpec::disabled(), &mut r).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn toy_grid_product() {
        let g = Arc::new(SubcarrierGrid::new(8, vec![-2, -1, 1, 2], 50e-9).unwrap());
        let h = CsiVector::new(vec![c(1., 0.), c(0., 1.), c(-1., 0.), c(0., -1.)], g).unwrap();
        let fp = DeviceFingerprint::new(0, vec![c(0.1, 0.), c(0., 0.), c(-0.1, 0.), c(0., 0.)]).unwrap();
        let out = compose_csi(&h, &fp, &NoiseSpec::disabled(), &mut RandomStream::new(0)).unwrap();
        assert_eq!(out.values(), &[c(1.1, 0.), c(0., 1.), c(-0.9, 0.), c(0., -1.)]);
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let g = Arc::new(SubcarrierGrid::wifi_20mhz());
        let fp = DeviceFingerprint::new(0, vec![Complex64::default(); 4]).unwrap();
        let h = CsiVector::ones(g);
        assert!(matches!(
            compose_csi(&h, &fp, &NoiseSpec::disabled(), &mut RandomStream::new(0)),
            Err(CoreError::GridMismatch(_))
        ));
        assert!(DeviceFingerprint::new(0, vec![c(f64::NAN, 0.)]).is_err());
    }

    #[test]
    fn awgn_rejects_zero_power_and_out_of_range_snr() {
        let g = Arc::new(SubcarrierGrid::wifi_20mhz());
        let zero = CsiVector::new(vec![Complex64::default(); 52], g).unwrap();
        let n = NoiseSpec::new(20.0).unwrap();
        assert!(matches!(add_awgn(&zero, &n, &mut RandomStream::new(0)), Err(CoreError::ZeroPower)));
        assert!(NoiseSpec::new(61.0).is_err());
        assert!(NoiseSpec::new(-11.0).is_err());
        assert_eq!(add_awgn(&zero, &NoiseSpec::disabled(), &mut RandomStream::new(0)).unwrap(), zero);
    }

    #[test]
    fn phase_branch_conventions() {
        let g = Arc::new(SubcarrierGrid::new(8, vec![1, 2], 50e-9).unwrap());
        let m = amp_phase_split(&CsiVector::new(vec![c(1., 0.), c(0., 1.)], g).unwrap());
        assert_eq!(m.amplitude, vec![1.0, 1.0]);
        assert_eq!(m.phase, vec![0.0, PI / 2.0]);
        assert_eq!(wrapped_arg(c(-2.0, 0.0)), PI);
        assert_eq!(wrapped_arg(c(-2.0, -0.0)), PI);
        assert_eq!(wrapped_arg(c(0.0, 0.0)), 0.0);
        assert_eq!(wrapped_arg(c(-0.0, -0.0)), 0.0);
    }
}

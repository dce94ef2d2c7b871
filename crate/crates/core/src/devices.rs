//! Synthetic device fingerprint populations.

use std::path::Path;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{tap_basis, ThinQr};
use crate::bytes::ByteReader;
use crate::error::{CoreError, FormatError, Result};
use crate::rng::{RandomStream, DOMAIN_POPULATION};
use crate::signal::{DeviceFingerprint, SubcarrierGrid};

pub const POPULATION_MAGIC: &[u8; 4] = b"CSP1";
pub const POPULATION_VERSION: u16 = 1;
pub const MAX_SCALE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FingerprintProfile {
    /// I.i.d. complex normal per subcarrier.
    Gaussian,
    /// Random polynomial across the band plus per-bin ripple.
    Smooth,
}

impl FingerprintProfile {
    fn code(self) -> u8 {
        match self {
            Self::Gaussian => 0,
            Self::Smooth => 1,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Self::Gaussian),
            1 => Some(Self::Smooth),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationConfig {
    pub n_devices: usize,
    pub profile: FingerprintProfile,
    /// Target RMS of every fingerprint.
    pub scale: f64,
    pub identifiability_order: usize,
    pub seed: u64,
    /// Polynomial degree of the smooth profile.
    pub smooth_degree: usize,
    /// Ripple std relative to unit polynomial coefficients.
    pub smooth_ripple: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            n_devices: 19,
            profile: FingerprintProfile::Smooth,
            scale: 0.03,
            identifiability_order: 1,
            seed: 0,
            smooth_degree: 3,
            smooth_ripple: 0.6,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices < 2 || self.n_devices > u16::MAX as usize {
            return Err(CoreError::Config(format!("n_devices must be in 2..=65535, got {}", self.n_devices)));
        }
        if !(0.0..=MAX_SCALE).contains(&self.scale) {
            return Err(CoreError::Config(format!("scale must be in [0, {MAX_SCALE}], got {}", self.scale)));
        }
        if self.identifiability_order == 0 {
            return Err(CoreError::Config("identifiability_order must be at least 1".into()));
        }
        if !(self.smooth_ripple >= 0.0) || !self.smooth_ripple.is_finite() {
            return Err(CoreError::Config(format!("smooth_ripple {}", self.smooth_ripple)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DevicePopulation {
    pub config: PopulationConfig,
    pub grid: Arc<SubcarrierGrid>,
    pub fingerprints: Vec<DeviceFingerprint>,
}

/// Projector removing content at delays `-(order-1)..=(order-1)` samples.
pub fn identifiability_basis(grid: &SubcarrierGrid, order: usize) -> Result<ThinQr> {
    let o = order as i64 - 1;
    let delays: Vec<f64> = (-o..=o).map(|d| d as f64).collect();
    ThinQr::new(&tap_basis(grid, &delays))
}

pub fn generate_population(cfg: &PopulationConfig, grid: Arc<SubcarrierGrid>) -> Result<DevicePopulation> {
    cfg.validate()?;
    let n = grid.len();
    if 2 * cfg.identifiability_order - 1 >= n {
        return Err(CoreError::Config(format!(
            "identifiability_order {} leaves no free dimensions on a {n}-bin grid",
            cfg.identifiability_order
        )));
    }
    let projector = identifiability_basis(&grid, cfg.identifiability_order)?;
    let x: Vec<f64> = (0..n).map(|i| if n == 1 { 0.0 } else { -1.0 + 2.0 * i as f64 / (n - 1) as f64 }).collect();
    let mut fingerprints = Vec::with_capacity(cfg.n_devices);
    for dev in 0..cfg.n_devices {
        let mut rng = RandomStream::derive(cfg.seed, DOMAIN_POPULATION, dev as u64);
        let raw: Vec<Complex64> = match cfg.profile {
            FingerprintProfile::Gaussian => (0..n).map(|_| rng.complex_normal()).collect(),
            FingerprintProfile::Smooth => {
                let coef: Vec<Complex64> = (0..=cfg.smooth_degree).map(|_| rng.complex_normal()).collect();
                x.iter()
                    .map(|&xi| {
                        let poly: Complex64 = coef.iter().rev().fold(Complex64::default(), |acc, c| acc * xi + c);
                        poly + rng.complex_normal() * cfg.smooth_ripple
                    })
                    .collect()
            }
        };
        let f = projector.residual(&raw);
        let rms = (f.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64).sqrt();
        if !(rms > 0.0) {
            return Err(CoreError::Config(format!("device {dev}: fingerprint vanished after projection")));
        }
        let k = cfg.scale / rms;
        fingerprints.push(DeviceFingerprint::new(dev as u32, f.iter().map(|v| v * k).collect())?);
    }
    Ok(DevicePopulation { config: cfg.clone(), grid, fingerprints })
}

pub fn fingerprint_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
}

/// Smallest Euclidean distance between two fingerprints of the population.
pub fn min_interclass_distance(fps: &[DeviceFingerprint]) -> Result<f64> {
    if fps.len() < 2 {
        return Err(CoreError::Insufficient(format!("{} devices, need at least 2", fps.len())));
    }
    let mut best = f64::INFINITY;
    for i in 0..fps.len() {
        for j in i + 1..fps.len() {
            best = best.min(fingerprint_distance(fps[i].deviations(), fps[j].deviations()));
        }
    }
    Ok(best)
}

impl DevicePopulation {
    pub fn len(&self) -> usize {
        self.fingerprints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fingerprints.is_empty()
    }

    pub fn fingerprint(&self, device: usize) -> &DeviceFingerprint {
        &self.fingerprints[device]
    }

    pub fn min_interclass_distance(&self) -> Result<f64> {
        min_interclass_distance(&self.fingerprints)
    }

    /// Sidecar layout (little-endian): magic "CSP1", version u16, fft_size u16,
    /// n_subcarriers u16, sample_period f64, active indices i16 each, profile u8,
    /// scale f64, identifiability_order u32, seed u64, smooth_degree u32,
    /// smooth_ripple f64, n_devices u32, then per device id u32 and
    /// n_subcarriers (re f64, im f64) pairs.
    pub fn to_bytes(&self) -> Vec<u8> {
        let g = &self.grid;
        let c = &self.config;
        let mut out = Vec::new();
        out.extend_from_slice(POPULATION_MAGIC);
        out.extend_from_slice(&POPULATION_VERSION.to_le_bytes());
        out.extend_from_slice(&(g.fft_size() as u16).to_le_bytes());
        out.extend_from_slice(&(g.len() as u16).to_le_bytes());
        out.extend_from_slice(&g.sample_period().to_le_bytes());
        for &k in g.active() {
            out.extend_from_slice(&(k as i16).to_le_bytes());
        }
        out.push(c.profile.code());
        out.extend_from_slice(&c.scale.to_le_bytes());
        out.extend_from_slice(&(c.identifiability_order as u32).to_le_bytes());
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.extend_from_slice(&(c.smooth_degree as u32).to_le_bytes());
        out.extend_from_slice(&c.smooth_ripple.to_le_bytes());
        out.extend_from_slice(&(self.fingerprints.len() as u32).to_le_bytes());
        for fp in &self.fingerprints {
            out.extend_from_slice(&fp.device_id().to_le_bytes());
            for v in fp.deviations() {
                out.extend_from_slice(&v.re.to_le_bytes());
                out.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.magic(POPULATION_MAGIC)?;
        let version = r.u16()?;
        if version != POPULATION_VERSION {
            return Err(FormatError::Version(version).into());
        }
        let fft_size = r.u16()? as usize;
        let n = r.u16()? as usize;
        let period = r.f64()?;
        let mut active = Vec::with_capacity(n);
        for _ in 0..n {
            active.push(r.i16()? as i32);
        }
        let grid =
            SubcarrierGrid::new(fft_size, active, period).map_err(|e| FormatError::Corrupt(format!("grid: {e}")))?;
        let profile = r.u8()?;
        let profile = FingerprintProfile::from_code(profile)
            .ok_or_else(|| FormatError::Corrupt(format!("profile code {profile}")))?;
        let config = PopulationConfig {
            profile,
            scale: r.f64()?,
            identifiability_order: r.u32()? as usize,
            seed: r.u64()?,
            smooth_degree: r.u32()? as usize,
            smooth_ripple: r.f64()?,
            n_devices: r.u32()? as usize,
        };
        if config.n_devices.saturating_mul(4 + 16 * n) > r.remaining() {
            return Err(FormatError::Truncated {
                offset: r.pos,
                needed: config.n_devices * (4 + 16 * n) - r.remaining(),
            }
            .into());
        }
        let mut fingerprints = Vec::with_capacity(config.n_devices);
        for _ in 0..config.n_devices {
            let id = r.u32()?;
            let mut dev = Vec::with_capacity(n);
            for _ in 0..n {
                dev.push(Complex64::new(r.f64()?, r.f64()?));
            }
            fingerprints.push(DeviceFingerprint::new(id, dev).map_err(|e| FormatError::Corrupt(e.to_string()))?);
        }
        r.finish()?;
        if fingerprints.iter().enumerate().any(|(i, f)| f.device_id() as usize != i) {
            return Err(FormatError::Corrupt("device ids are not contiguous from 0".into()).into());
        }
        Ok(Self { config, grid: Arc::new(grid), fingerprints })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the sidecar bytes, hex encoded.
    pub fn hash_hex(&self) -> String {
        hex_digest(&self.to_bytes())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Arc<SubcarrierGrid> {
        Arc::new(SubcarrierGrid::wifi_20mhz())
    }

    #[test]
    fn zero_scale_gives_zero_fingerprints() {
        let cfg = PopulationConfig { n_devices: 2, scale: 0.0, ..Default::default() };
        let pop = generate_population(&cfg, grid()).unwrap();
        assert!(pop.fingerprints.iter().all(|f| f.deviations().iter().all(|v| *v == Complex64::default())));
        assert_eq!(pop.min_interclass_distance().unwrap(), 0.0);
    }

    #[test]
    fn rms_matches_scale() {
        for profile in [FingerprintProfile::Gaussian, FingerprintProfile::Smooth] {
            let cfg = PopulationConfig { profile, identifiability_order: 4, ..Default::default() };
            let pop = generate_population(&cfg, grid()).unwrap();
            for f in &pop.fingerprints {
                assert!((f.rms() - 0.03).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hand_set_minimum_distance() {
        let mut e1 = vec![Complex64::default(); 3];
        let mut e2 = e1.clone();
        e1[0] = Complex64::new(1.0, 0.0);
        e2[1] = Complex64::new(1.0, 0.0);
        let fps = vec![
            DeviceFingerprint::new(0, e1.iter().map(|v| v * 0.1).collect()).unwrap(),
            DeviceFingerprint::new(1, e2.iter().map(|v| v * 0.1).collect()).unwrap(),
            DeviceFingerprint::new(2, e1.iter().map(|v| v * 0.2).collect()).unwrap(),
        ];
        assert!((min_interclass_distance(&fps).unwrap() - 0.1).abs() < 1e-15);
        assert!(min_interclass_distance(&fps[..1]).is_err());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let g = grid();
        for cfg in [
            PopulationConfig { n_devices: 1, ..Default::default() },
            PopulationConfig { scale: 0.25, ..Default::default() },
            PopulationConfig { scale: -0.01, ..Default::default() },
            PopulationConfig { identifiability_order: 0, ..Default::default() },
            PopulationConfig { identifiability_order: 30, ..Default::default() },
        ] {
            assert!(generate_population(&cfg, g.clone()).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn sidecar_round_trip_and_errors() {
        let pop = generate_population(&PopulationConfig::default(), grid()).unwrap();
        let bytes = pop.to_bytes();
        let back = DevicePopulation::from_bytes(&bytes).unwrap();
        assert_eq!(back, pop);
        assert_eq!(back.to_bytes(), bytes);
        let mut bad = bytes.clone();
        bad[0] = b'Z';
        assert!(matches!(DevicePopulation::from_bytes(&bad), Err(CoreError::Format(FormatError::BadMagic { .. }))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(DevicePopulation::from_bytes(&bad), Err(CoreError::Format(FormatError::Version(2)))));
        assert!(matches!(
            DevicePopulation::from_bytes(&bytes[..bytes.len() - 1]),
            Err(CoreError::Format(FormatError::Truncated { .. }))
        ));
    }
}

//! Tapped-delay-line indoor channels.
//!
//! Taps sit on a uniform delay grid (`tap_spacing`, 10 ns by default) with an
//! exponential power-delay profile solved for the requested rms delay spread.
//! Frequency responses are evaluated at the exact tap delays, which reduces to
//! the partial DFT when the spacing equals the sample period.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::RandomStream;
use crate::signal::{CsiVector, SubcarrierGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelModel {
    ModelB,
    ModelC,
    ModelD,
}

impl ChannelModel {
    pub const ALL: [ChannelModel; 3] = [ChannelModel::ModelB, ChannelModel::ModelC, ChannelModel::ModelD];

    pub fn letter(self) -> char {
        match self {
            Self::ModelB => 'B',
            Self::ModelC => 'C',
            Self::ModelD => 'D',
        }
    }
}

impl FromStr for ChannelModel {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "B" | "MODELB" | "MODEL-B" | "MODEL_B" => Ok(Self::ModelB),
            "C" | "MODELC" | "MODEL-C" | "MODEL_C" => Ok(Self::ModelC),
            "D" | "MODELD" | "MODEL-D" | "MODEL_D" => Ok(Self::ModelD),
            other => Err(CoreError::Config(format!("unknown channel model {other:?}"))),
        }
    }
}

/// Dataset channel condition: a model under LoS or NLoS, or the flat reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelTag {
    BLos,
    BNlos,
    CLos,
    CNlos,
    DLos,
    DNlos,
    /// Flat, noiseless reference samples.
    Flat,
}

impl ChannelTag {
    pub const MULTIPATH: [ChannelTag; 6] =
        [ChannelTag::BLos, ChannelTag::BNlos, ChannelTag::CLos, ChannelTag::CNlos, ChannelTag::DLos, ChannelTag::DNlos];

    pub fn new(model: ChannelModel, los: bool) -> Self {
        match (model, los) {
            (ChannelModel::ModelB, true) => Self::BLos,
            (ChannelModel::ModelB, false) => Self::BNlos,
            (ChannelModel::ModelC, true) => Self::CLos,
            (ChannelModel::ModelC, false) => Self::CNlos,
            (ChannelModel::ModelD, true) => Self::DLos,
            (ChannelModel::ModelD, false) => Self::DNlos,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        [Self::BLos, Self::BNlos, Self::CLos, Self::CNlos, Self::DLos, Self::DNlos, Self::Flat]
            .get(code as usize)
            .copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::BLos => "B-LoS",
            Self::BNlos => "B-NLoS",
            Self::CLos => "C-LoS",
            Self::CNlos => "C-NLoS",
            Self::DLos => "D-LoS",
            Self::DNlos => "D-NLoS",
            Self::Flat => "Flat",
        }
    }
}

impl fmt::Display for ChannelTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModelSpec {
    pub name: ChannelModel,
    pub los: bool,
    pub num_taps: usize,
    /// Seconds.
    pub rms_delay_spread: f64,
    /// Power ratio of the fixed LoS component to the diffuse part of tap 0. May be infinite.
    pub rician_k_db: f64,
    /// Seconds between consecutive taps.
    pub tap_spacing: f64,
}

impl ChannelModelSpec {
    pub const DEFAULT_TAP_SPACING: f64 = 10e-9;
    pub const DEFAULT_RICIAN_K_DB: f64 = 3.0;

    pub fn default_for(name: ChannelModel, los: bool) -> Self {
        let (num_taps, rms_ns) = match name {
            ChannelModel::ModelB => (9, 15.0),
            ChannelModel::ModelC => (14, 30.0),
            ChannelModel::ModelD => (18, 50.0),
        };
        Self {
            name,
            los,
            num_taps,
            rms_delay_spread: rms_ns * 1e-9,
            rician_k_db: Self::DEFAULT_RICIAN_K_DB,
            tap_spacing: Self::DEFAULT_TAP_SPACING,
        }
    }

    /// The six default conditions in tag order.
    pub fn default_grid() -> Vec<Self> {
        ChannelModel::ALL.iter().flat_map(|&m| [Self::default_for(m, true), Self::default_for(m, false)]).collect()
    }

    pub fn tag(&self) -> ChannelTag {
        ChannelTag::new(self.name, self.los)
    }

    pub fn validate(&self, grid: &SubcarrierGrid) -> Result<()> {
        if self.num_taps == 0 {
            return Err(CoreError::Config("num_taps must be at least 1".into()));
        }
        if !(self.rms_delay_spread > 0.0) || !(self.tap_spacing > 0.0) {
            return Err(CoreError::Config("rms delay spread and tap spacing must be positive".into()));
        }
        if self.rician_k_db.is_nan() {
            return Err(CoreError::Config("rician_k_db is NaN".into()));
        }
        let max_delay = (self.num_taps - 1) as f64 * self.tap_spacing / grid.sample_period();
        if self.num_taps > grid.fft_size() || max_delay >= grid.fft_size() as f64 {
            return Err(CoreError::Config(format!(
                "{} taps spanning {max_delay:.2} samples do not fit a {}-point FFT",
                self.num_taps,
                grid.fft_size()
            )));
        }
        Ok(())
    }

    /// Tap delays in seconds.
    pub fn delays(&self) -> Vec<f64> {
        (0..self.num_taps).map(|l| l as f64 * self.tap_spacing).collect()
    }

    /// Expected tap powers, summing to one.
    pub fn power_profile(&self) -> Result<Vec<f64>> {
        exponential_profile(&self.delays(), self.rms_delay_spread)
    }
}

/// Exponential profile over `delays` whose rms delay spread equals `rms`.
///
/// Bisects the decay constant on a log scale. A single tap has no spread and
/// gets the trivial profile.
pub fn exponential_profile(delays: &[f64], rms: f64) -> Result<Vec<f64>> {
    if delays.len() == 1 {
        return Ok(vec![1.0]);
    }
    let profile = |beta: f64| -> Vec<f64> {
        let w: Vec<f64> = delays.iter().map(|d| (-(d - delays[0]) / beta).exp()).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    };
    let spread = |p: &[f64]| {
        let m: f64 = p.iter().zip(delays).map(|(p, d)| p * d).sum();
        let m2: f64 = p.iter().zip(delays).map(|(p, d)| p * d * d).sum();
        (m2 - m * m).max(0.0).sqrt()
    };
    let uniform = vec![1.0 / delays.len() as f64; delays.len()];
    if spread(&uniform) <= rms {
        return Err(CoreError::Config(format!(
            "rms delay spread {:.3e} s not reachable with {} taps (max {:.3e} s)",
            rms,
            delays.len(),
            spread(&uniform)
        )));
    }
    let (mut lo, mut hi) = (1e-15f64.ln(), 1e3f64.ln());
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if spread(&profile(mid.exp())) < rms {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(profile((0.5 * (lo + hi)).exp()))
}

/// One static channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct MultipathChannel {
    pub taps: Vec<Complex64>,
    /// Tap delays in seconds.
    pub delays: Vec<f64>,
    pub freq_response: CsiVector,
    pub tag: Option<ChannelTag>,
}

impl MultipathChannel {
    /// Channel from sample-spaced taps.
    pub fn from_taps(taps: Vec<Complex64>, grid: Arc<SubcarrierGrid>) -> Result<Self> {
        let freq_response = freq_response(&taps, grid.clone())?;
        let delays = (0..taps.len()).map(|l| l as f64 * grid.sample_period()).collect();
        Ok(Self { taps, delays, freq_response, tag: None })
    }

    /// Single unit tap: the all-ones response.
    pub fn identity(grid: Arc<SubcarrierGrid>) -> Self {
        Self::from_taps(vec![Complex64::new(1.0, 0.0)], grid).expect("one tap always fits")
    }
}

/// Draw a channel for `spec`. Every tap is circular Gaussian with the profile's
/// power; under LoS tap 0 also carries a fixed component of phase zero.
pub fn sample_channel(
    spec: &ChannelModelSpec,
    grid: Arc<SubcarrierGrid>,
    rng: &mut RandomStream,
) -> Result<MultipathChannel> {
    spec.validate(&grid)?;
    let p = spec.power_profile()?;
    let mut taps: Vec<Complex64> = p.iter().map(|&pl| rng.complex_normal() * pl.sqrt()).collect();
    if spec.los {
        let k = 10f64.powf(spec.rician_k_db / 10.0);
        let (fixed, diffuse) = if k.is_infinite() { (1.0, 0.0) } else { (k / (k + 1.0), 1.0 / (k + 1.0)) };
        taps[0] = Complex64::new((p[0] * fixed).sqrt(), 0.0) + taps[0] * diffuse.sqrt();
    }
    let delays = spec.delays();
    let delay_samples: Vec<f64> = delays.iter().map(|d| d / grid.sample_period()).collect();
    let freq_response = response_at_delays(&taps, &delay_samples, grid)?;
    Ok(MultipathChannel { taps, delays, freq_response, tag: Some(spec.tag()) })
}

/// `H[k] = sum_l taps[l] exp(-j 2 pi k l / N)` at the active bins.
pub fn freq_response(taps: &[Complex64], grid: Arc<SubcarrierGrid>) -> Result<CsiVector> {
    if taps.len() > grid.fft_size() {
        return Err(CoreError::Config(format!("{} taps exceed fft size {}", taps.len(), grid.fft_size())));
    }
    let delays: Vec<f64> = (0..taps.len()).map(|l| l as f64).collect();
    response_at_delays(taps, &delays, grid)
}

/// Response of taps at arbitrary (possibly fractional) delays given in samples.
pub fn response_at_delays(taps: &[Complex64], delay_samples: &[f64], grid: Arc<SubcarrierGrid>) -> Result<CsiVector> {
    if taps.len() != delay_samples.len() {
        return Err(CoreError::Config("one delay per tap required".into()));
    }
    let values =
        (0..grid.len()).map(|i| taps.iter().zip(delay_samples).map(|(t, &d)| t * grid.phasor(i, d)).sum()).collect();
    CsiVector::new(values, grid)
}

/// `[model]` table of a channel config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    pub name: String,
    pub num_taps: Option<usize>,
    pub rms_ns: Option<f64>,
    #[serde(default)]
    pub los: bool,
    pub rician_k_db: Option<f64>,
    pub tap_spacing_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfigFile {
    pub model: ChannelSection,
}

impl ChannelSection {
    /// Defaults for the named model with the given keys overridden.
    pub fn to_spec(&self) -> Result<ChannelModelSpec> {
        let mut spec = ChannelModelSpec::default_for(self.name.parse()?, self.los);
        if let Some(n) = self.num_taps {
            spec.num_taps = n;
        }
        if let Some(r) = self.rms_ns {
            spec.rms_delay_spread = r * 1e-9;
        }
        if let Some(k) = self.rician_k_db {
            spec.rician_k_db = k;
        }
        if let Some(s) = self.tap_spacing_ns {
            spec.tap_spacing = s * 1e-9;
        }
        Ok(spec)
    }
}

pub fn parse_channel_config(text: &str) -> Result<ChannelModelSpec> {
    let file: ChannelConfigFile = toml::from_str(text).map_err(|e| CoreError::Config(e.to_string()))?;
    file.model.to_spec()
}

pub fn load_channel_config(path: &Path) -> Result<ChannelModelSpec> {
    parse_channel_config(&std::fs::read_to_string(path)?)
}

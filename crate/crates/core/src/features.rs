//! Network input features.
//!
//! A CSI vector is first brought to a common reference: the phase of its
//! coherent sum is rotated to zero and the amplitude is scaled to unit RMS.
//! The result is split into amplitude and wrapped-phase rows.

use num_complex::{Complex32, Complex64};

use crate::signal::{amp_phase_of, wrapped_arg};

/// Remove the common gain and phase of `values`.
pub fn normalize_csi(values: &[Complex64]) -> Vec<Complex64> {
    let sum: Complex64 = values.iter().sum();
    let rot = Complex64::from_polar(1.0, -wrapped_arg(sum));
    let rms = (values.iter().map(|v| v.norm_sqr()).sum::<f64>() / values.len().max(1) as f64).sqrt();
    let gain = if rms > 0.0 { rot / rms } else { rot };
    values.iter().map(|v| v * gain).collect()
}

/// `[amplitude row, phase row]`, length `2 * values.len()`.
pub fn network_input(values: &[Complex64]) -> Vec<f32> {
    let m = amp_phase_of(&normalize_csi(values));
    m.amplitude.iter().chain(&m.phase).map(|&v| v as f32).collect()
}

/// Same as [`network_input`] for stored single-precision CSI.
pub fn network_input_f32(values: &[Complex32]) -> Vec<f32> {
    let wide: Vec<Complex64> = values.iter().map(|v| Complex64::new(v.re as f64, v.im as f64)).collect();
    network_input(&wide)
}

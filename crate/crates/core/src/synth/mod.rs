//! Synthetic measurement streams: MKID complex transmission and qubit
//! prepare–idle–measure records.

mod iq;
mod qpiq;
mod qubit;

pub use iq::{synth_iq_stream, IqStream, IqSynthesizer};
pub use qpiq::{read_qpiq, read_qpiq_segments, write_qpiq, QpiqHeader, QpiqReader, QPIQ_MAGIC, QPIQ_VERSION};
pub use qubit::{
    inject_tls_jumps, read_qubit_records, synth_p1_series, synth_qubit_stream, synth_qubit_windows, write_qubit_records,
    Prep, QubitCycleParams, QubitRecord, QubitSynthesizer, TimeSeries, TlsJumps,
};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Notch-coupled resonator seen through the feedline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResonatorParams {
    /// Resonance frequency (GHz).
    pub f0: f64,
    pub qi: f64,
    pub qe: f64,
    /// Resonance shift per film quasiparticle (Hz/QP).
    pub hz_per_qp: f64,
    /// Probe tone offset from f0 (kHz).
    pub probe_offset: f64,
    /// Per-quadrature noise std of one 1 µs bin.
    pub noise_sigma: f64,
}

impl Default for ResonatorParams {
    fn default() -> Self {
        let (qi, qe) = (30e3, 50e3);
        let q = 1.0 / (1.0 / qi + 1.0 / qe);
        Self {
            // f0 = Q × 250 kHz linewidth
            f0: q * 250e3 * 1e-9,
            qi,
            qe,
            hz_per_qp: 0.67,
            probe_offset: 0.0,
            noise_sigma: 0.015,
        }
    }
}

impl ResonatorParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("f0", self.f0), ("qi", self.qi), ("qe", self.qe)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("resonator.{name} must be positive")));
            }
        }
        if !(self.noise_sigma >= 0.0) || !self.hz_per_qp.is_finite() || !self.probe_offset.is_finite() {
            return Err(Error::config("resonator: noise_sigma must be non-negative and all values finite"));
        }
        Ok(())
    }

    pub fn total_q(&self) -> f64 {
        1.0 / (1.0 / self.qi + 1.0 / self.qe)
    }

    pub fn f0_hz(&self) -> f64 {
        self.f0 * 1e9
    }

    /// Full width at half maximum, f0 / Q (Hz).
    pub fn linewidth_hz(&self) -> f64 {
        self.f0_hz() / self.total_q()
    }

    /// Single-pole response time 1 / (2π · linewidth), in ns.
    pub fn response_time_ns(&self) -> f64 {
        1e9 / (2.0 * std::f64::consts::PI * self.linewidth_hz())
    }

    pub fn probe_hz(&self) -> f64 {
        self.f0_hz() + self.probe_offset * 1e3
    }
}

/// Feedline transmission at `freq_hz` for a resonance moved by `shift_hz`:
/// `1 − (Q/Qe) / (1 + 2iQ (f − f0 − δf) / f0)`.
pub fn s21(freq_hz: f64, r: &ResonatorParams, shift_hz: f64) -> Complex64 {
    let q = r.total_q();
    let f0 = r.f0_hz();
    let x = 2.0 * q * (freq_hz - f0 - shift_hz) / f0;
    Complex64::new(1.0, 0.0) - Complex64::new(q / r.qe, 0.0) / Complex64::new(1.0, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn defaults_follow_quality_factors() {
        let r = ResonatorParams::default();
        assert_relative_eq!(r.total_q(), 18_750.0, max_relative = 1e-12);
        assert_relative_eq!(r.f0, 4.6875, max_relative = 1e-12);
        assert_relative_eq!(r.linewidth_hz(), 250e3, max_relative = 1e-12);
        assert_relative_eq!(r.response_time_ns(), 636.6, max_relative = 1e-3);
    }

    #[test]
    fn on_resonance_depth() {
        let r = ResonatorParams::default();
        assert_relative_eq!(s21(r.f0_hz(), &r, 0.0).norm(), 0.625, max_relative = 1e-12);
    }

    #[test]
    fn far_off_resonance_is_unity() {
        let r = ResonatorParams::default();
        assert_relative_eq!(s21(r.f0_hz() + 1e9, &r, 0.0).norm(), 1.0, epsilon = 1e-4);
    }

    #[test]
    fn shift_moves_the_dip() {
        let r = ResonatorParams::default();
        let shifted = s21(r.f0_hz() - 50e3, &r, -50e3);
        assert_relative_eq!(shifted.norm(), 0.625, max_relative = 1e-12);
        assert!(s21(r.f0_hz(), &r, -50e3).norm() > 0.625);
    }

    #[test]
    fn invalid_resonator_rejected() {
        let r = ResonatorParams { qi: 0.0, ..Default::default() };
        assert!(r.validate().is_err());
        let r = ResonatorParams { noise_sigma: -1.0, ..Default::default() };
        assert!(r.validate().is_err());
    }
}

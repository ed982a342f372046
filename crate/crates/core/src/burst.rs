//! Quasiparticle burst dynamics: junction QP density, MKID QP count and the
//! qubit outcome probabilities that follow a radiation event.
//!
//! Times are in ns on the event timeline unless a name says otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::QpRateConversion;
use crate::radsource::RadiationEvent;

/// Events older than this many decay constants are dropped from sums.
const DECAY_HORIZON: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BurstParams {
    /// Peak junction QP density per deposited energy (µm⁻³ / MeV).
    pub junction_density_per_energy: f64,
    /// Trapping rate s in ṅ = −s·n (s⁻¹).
    pub trapping_rate: f64,
    /// Recovery time of the excess |0⟩ → |1⟩ excitations (µs).
    pub excitation_recovery: f64,
    /// Excess excitation probability right after an event.
    pub excitation_peak: f64,
    /// MKID fast recovery time (µs).
    pub mkid_fast_recovery: f64,
    /// MKID slow recovery time (ms).
    pub mkid_slow_recovery: f64,
    pub mkid_slow_fraction: f64,
    /// Fraction of the chip deposit that ends up in the MKID film.
    pub film_energy_fraction: f64,
    /// Relaxation-free |1⟩ survival probability over one idle.
    pub p1_baseline: f64,
    /// Background excited-state probability for prep-0 cycles.
    pub excitation_baseline: f64,
    /// Γ_qp per junction QP density (s⁻¹ per µm⁻³).
    pub rate_conversion: QpRateConversion,
}

impl Default for BurstParams {
    fn default() -> Self {
        Self {
            junction_density_per_energy: 240.0,
            trapping_rate: 1.0 / 13e-6,
            excitation_recovery: 8.3,
            excitation_peak: 0.05,
            mkid_fast_recovery: 35.0,
            mkid_slow_recovery: 2.0,
            mkid_slow_fraction: 0.1,
            // 25 eV in the film for a 40 keV chip deposit.
            film_energy_fraction: 25.0 / 40e3,
            p1_baseline: 0.95,
            excitation_baseline: 0.02,
            rate_conversion: QpRateConversion::default(),
        }
    }
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

impl BurstParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("junction_density_per_energy", self.junction_density_per_energy),
            ("trapping_rate", self.trapping_rate),
            ("excitation_recovery", self.excitation_recovery),
            ("mkid_fast_recovery", self.mkid_fast_recovery),
            ("mkid_slow_recovery", self.mkid_slow_recovery),
            ("film_energy_fraction", self.film_energy_fraction),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("burst.{name} must be positive")));
            }
        }
        let fractions = [
            ("excitation_peak", self.excitation_peak),
            ("mkid_slow_fraction", self.mkid_slow_fraction),
            ("film_energy_fraction", self.film_energy_fraction),
            ("p1_baseline", self.p1_baseline),
            ("excitation_baseline", self.excitation_baseline),
        ];
        for (name, v) in fractions {
            if !in_unit(v) {
                return Err(Error::config(format!("burst.{name} must lie in [0, 1]")));
            }
        }
        if self.excitation_baseline + self.excitation_peak > 1.0 {
            return Err(Error::config("burst.excitation_baseline + excitation_peak exceeds 1"));
        }
        QpRateConversion::new(self.rate_conversion.value())?;
        Ok(())
    }

    /// Trapping time 1/s in µs.
    pub fn trapping_time_us(&self) -> f64 {
        1e6 / self.trapping_rate
    }
}

/// Events with `time_ns <= t` and within `horizon_ns` of `t`, newest last.
fn preceding(events: &[RadiationEvent], t: f64, horizon_ns: f64) -> &[RadiationEvent] {
    let end = events.partition_point(|e| e.time_ns <= t);
    let start = events[..end].partition_point(|e| e.time_ns < t - horizon_ns);
    &events[start..end]
}

/// Junction QP density (µm⁻³) at time `t_ns`: `baseline` plus the trapped
/// decay of every earlier deposit. `events` must be time-sorted.
pub fn junction_nqp(t_ns: f64, events: &[RadiationEvent], p: &BurstParams, baseline: f64) -> f64 {
    let horizon = DECAY_HORIZON / p.trapping_rate * 1e9;
    baseline
        + preceding(events, t_ns, horizon)
            .iter()
            .map(|e| {
                let dt_s = (t_ns - e.time_ns) * 1e-9;
                p.junction_density_per_energy * e.energy_kev * 1e-3 * (-p.trapping_rate * dt_s).exp()
            })
            .sum::<f64>()
}

/// QPs created in the MKID film by a deposit of `energy_kev`.
pub fn mkid_initial_count(energy_kev: f64, p: &BurstParams, gap_uev: f64) -> f64 {
    // keV → µeV is 1e9
    p.film_energy_fraction * energy_kev * 1e9 / gap_uev
}

/// MKID film QP count at `t_ns` with bi-exponential recovery.
pub fn mkid_qp_count(t_ns: f64, events: &[RadiationEvent], p: &BurstParams, gap_uev: f64) -> f64 {
    let fast = p.mkid_fast_recovery * 1e3;
    let slow = p.mkid_slow_recovery * 1e6;
    preceding(events, t_ns, DECAY_HORIZON * slow.max(fast))
        .iter()
        .map(|e| {
            let dt = t_ns - e.time_ns;
            let shape = (1.0 - p.mkid_slow_fraction) * (-dt / fast).exp() + p.mkid_slow_fraction * (-dt / slow).exp();
            mkid_initial_count(e.energy_kev, p, gap_uev) * shape
        })
        .sum()
}

/// Probability of still finding a qubit prepared in |1⟩ after an idle of
/// `idle_us` ending at `t_ns`, with the QP-induced rate from the junction
/// density at that time.
pub fn p1_survival(t_ns: f64, events: &[RadiationEvent], p: &BurstParams, idle_us: f64) -> f64 {
    let n = junction_nqp(t_ns, events, p, 0.0);
    let gamma = p.rate_conversion.gamma_qp(n);
    let prob = p.p1_baseline * (-gamma * idle_us * 1e-6).exp();
    debug_assert!(in_unit(prob));
    prob
}

/// Excited-state probability of a prep-0 cycle `delta_t_us` after an event.
pub fn p_excite(delta_t_us: f64, p: &BurstParams) -> f64 {
    if delta_t_us < 0.0 {
        return p.excitation_baseline;
    }
    let prob = p.excitation_baseline + p.excitation_peak * (-delta_t_us / p.excitation_recovery).exp();
    debug_assert!(in_unit(prob));
    prob
}

/// `p_excite` relative to the most recent event at or before `t_ns`.
pub fn p_excite_at(t_ns: f64, events: &[RadiationEvent], p: &BurstParams) -> f64 {
    let horizon = DECAY_HORIZON * p.excitation_recovery * 1e3;
    match preceding(events, t_ns, horizon).last() {
        Some(e) => p_excite((t_ns - e.time_ns) * 1e-3, p),
        None => p.excitation_baseline,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    JunctionDensity,
    MkidCount,
}

/// A QP density or count versus time (µs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QpTrace {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub kind: TraceKind,
}

impl QpTrace {
    pub fn new(times: Vec<f64>, values: Vec<f64>, kind: TraceKind) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Format("trace times and values differ in length".into()));
        }
        if times.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Format("trace times must be strictly increasing".into()));
        }
        if values.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::Format("trace values must be non-negative".into()));
        }
        Ok(Self { times, values, kind })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t_us,value`.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["t_us", "value"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            out.write_record([t.to_string(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Samples junction density (`gap_uev = None`) or MKID count on `times_us`.
pub fn sample_trace(times_us: &[f64], events: &[RadiationEvent], p: &BurstParams, gap_uev: Option<f64>) -> Result<QpTrace> {
    let (values, kind) = match gap_uev {
        None => (
            times_us.iter().map(|&t| junction_nqp(t * 1e3, events, p, 0.0)).collect(),
            TraceKind::JunctionDensity,
        ),
        Some(gap) => (
            times_us.iter().map(|&t| mkid_qp_count(t * 1e3, events, p, gap)).collect(),
            TraceKind::MkidCount,
        ),
    };
    QpTrace::new(times_us.to_vec(), values, kind)
}

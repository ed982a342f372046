use serde::{Deserialize, Serialize};

use super::{offline_detect, TriggerConfig};
use crate::burst::BurstParams;
use crate::error::{Error, Result};
use crate::radsource::RadiationEvent;
use crate::seed::Seed;
use crate::synth::{IqSynthesizer, ResonatorParams};

/// Samples per injection trial; the event lands after the noise estimate
/// has warmed up.
const TRIAL_SAMPLES: u64 = 12_288;
const INJECT_AT: u64 = 6_000;
/// A detection counts if it falls this close to the injected time (µs).
const MATCH_WINDOW_US: f64 = 50.0;
/// Timestamp tolerance used for the `timely` tally (µs).
const TIMELY_US: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyPoint {
    pub energy_kev: f64,
    pub trials: u32,
    pub detected: u32,
    /// Detections within 2 µs of the injected time.
    pub timely: u32,
    pub max_abs_error_ns: f64,
    /// Mean signed timestamp error of the detections (ns).
    pub mean_error_ns: f64,
}

impl EfficiencyPoint {
    pub fn efficiency(&self) -> f64 {
        f64::from(self.detected) / f64::from(self.trials)
    }
}

/// Fraction of single-event streams in which the offline detector finds the
/// injected deposit, per energy.
pub fn detection_efficiency_curve(
    energies_kev: &[f64],
    resonator: &ResonatorParams,
    burst: &BurstParams,
    film_gap_uev: f64,
    cfg: &TriggerConfig,
    n_trials: u32,
    seed: Seed,
) -> Result<Vec<EfficiencyPoint>> {
    if n_trials < 100 {
        return Err(Error::domain("need at least 100 trials per energy"));
    }
    let bin = 1000u32;
    energies_kev
        .iter()
        .enumerate()
        .map(|(ei, &energy)| {
            let mut point = EfficiencyPoint {
                energy_kev: energy,
                trials: n_trials,
                detected: 0,
                timely: 0,
                max_abs_error_ns: 0.0,
                mean_error_ns: 0.0,
            };
            let mut error_sum = 0.0;
            for trial in 0..n_trials {
                let trial_seed = seed.child("efficiency", ((ei as u64) << 32) | u64::from(trial));
                let t0 = (INJECT_AT as f64 + trial_seed.uniform("offset", 0)) * f64::from(bin);
                let events = if energy > 0.0 { vec![RadiationEvent { time_ns: t0, energy_kev: energy }] } else { vec![] };
                let synth = IqSynthesizer::new(events, *resonator, *burst, film_gap_uev, bin, trial_seed)?;
                let stream = synth.segment(0, TRIAL_SAMPLES as usize);
                let found = offline_detect(&stream, cfg, "eff")?
                    .into_iter()
                    .map(|e| e.time_ns - t0)
                    .filter(|d| d.abs() <= MATCH_WINDOW_US * 1e3)
                    .min_by(|a, b| a.abs().total_cmp(&b.abs()));
                if let Some(err) = found {
                    point.detected += 1;
                    point.timely += u32::from(err.abs() <= TIMELY_US * 1e3);
                    point.max_abs_error_ns = point.max_abs_error_ns.max(err.abs());
                    error_sum += err;
                }
            }
            if point.detected > 0 {
                point.mean_error_ns = error_sum / f64::from(point.detected);
            }
            Ok(point)
        })
        .collect()
}

//! Event detectors for MKID streams: the live IQ-asymmetry trigger and the
//! offline matched-filter detector.

mod efficiency;
mod live;
mod offline;

pub use efficiency::{detection_efficiency_curve, EfficiencyPoint};
pub use live::{live_trigger, IqBaseline, LiveTrigger, MIN_BASELINE_SAMPLES};
pub use offline::{exp_template, matched_filter_scores, offline_detect, OfflineDetector};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Pulses raise |S21| (on-resonance probing).
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TriggerConfig {
    /// Live trigger window (samples).
    pub live_window: usize,
    /// Radius beyond which samples count as "outer" (σ).
    pub live_outer_radius: f64,
    /// Offset of the outer centroid that fires the live trigger (σ).
    pub live_com_threshold: f64,
    /// Offline detection threshold (σ).
    pub offline_threshold: f64,
    /// Level the score must fall below before the detector re-arms (σ).
    pub offline_rearm: f64,
    /// Timestamps go to the earliest sample within this fraction of the
    /// excursion maximum.
    pub peak_fraction: f64,
    /// Matched-filter template decay time (µs).
    pub template_tau: f64,
    /// Template length in units of `template_tau`.
    pub template_length: f64,
    /// Retrigger suppression (µs).
    pub holdoff: f64,
    /// Latency added to every offline timestamp (µs), calibrated so that
    /// timestamps are unbiased for the default pulse shape.
    pub timing_offset: f64,
    pub highpass_cutoff: f64,
    pub lowpass_cutoff: f64,
    /// Trailing window of the robust noise estimate (ms).
    pub sigma_window: f64,
    pub polarity: Polarity,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            live_window: 256,
            live_outer_radius: 2.0,
            live_com_threshold: 3.0,
            offline_threshold: 8.0,
            offline_rearm: 4.0,
            peak_fraction: 0.05,
            template_tau: 35.0,
            template_length: 5.0,
            holdoff: 20.0,
            timing_offset: 0.85,
            highpass_cutoff: 100.0,
            lowpass_cutoff: 200e3,
            sigma_window: 100.0,
            polarity: Polarity::Positive,
        }
    }
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("live_outer_radius", self.live_outer_radius),
            ("live_com_threshold", self.live_com_threshold),
            ("offline_threshold", self.offline_threshold),
            ("template_tau", self.template_tau),
            ("template_length", self.template_length),
            ("highpass_cutoff", self.highpass_cutoff),
            ("lowpass_cutoff", self.lowpass_cutoff),
            ("sigma_window", self.sigma_window),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("trigger.{name} must be positive")));
            }
        }
        if !(self.offline_rearm >= 0.0 && self.offline_rearm <= self.offline_threshold) {
            return Err(Error::config("trigger.offline_rearm must lie in [0, offline_threshold]"));
        }
        if !(0.0..1.0).contains(&self.peak_fraction) {
            return Err(Error::config("trigger.peak_fraction must lie in [0, 1)"));
        }
        if !self.timing_offset.is_finite() {
            return Err(Error::config("trigger.timing_offset must be finite"));
        }
        if !(self.holdoff >= 0.0 && self.holdoff.is_finite()) {
            return Err(Error::config("trigger.holdoff must be non-negative"));
        }
        if self.live_window == 0 {
            return Err(Error::config("trigger.live_window must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    #[serde(rename = "t_ns")]
    pub time_ns: f64,
    /// Matched-filter statistic (σ).
    pub score: f64,
    pub channel: String,
}

/// CSV with header `t_ns,score,channel`.
pub fn write_trigger_events<W: Write>(w: W, events: &[TriggerEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_ns", "score", "channel"])?;
    for e in events {
        out.write_record([e.time_ns.to_string(), e.score.to_string(), e.channel.clone()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_trigger_events<R: Read>(r: R) -> Result<Vec<TriggerEvent>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        TriggerConfig::default().validate().unwrap();
        let bad = TriggerConfig { offline_threshold: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = TriggerConfig { holdoff: -1.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(toml::from_str::<TriggerConfig>("holdoff = 10.0\nbogus = 1").is_err());
        let c: TriggerConfig = toml::from_str("holdoff = 10.0\npolarity = \"negative\"").unwrap();
        assert_eq!(c.polarity, Polarity::Negative);
    }

    #[test]
    fn events_csv_round_trip() {
        let ev = vec![
            TriggerEvent { time_ns: 1000.0, score: 9.5, channel: "mkid1".into() },
            TriggerEvent { time_ns: 2.5e12, score: 120.25, channel: "mkid2".into() },
        ];
        let mut buf = Vec::new();
        write_trigger_events(&mut buf, &ev).unwrap();
        assert!(buf.starts_with(b"t_ns,score,channel\n"));
        assert_eq!(read_trigger_events(&buf[..]).unwrap(), ev);
    }
}

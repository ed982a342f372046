//! Event-gated synthesis: only the MKID samples and qubit cycles near
//! ground-truth events are generated, on the true logical timeline.

use serde::{Deserialize, Serialize};

use super::config::{AlignOn, RunConfig};
use crate::analyze::{
    align_and_tally, extract_nqp_trace, fit_exp_recovery, fit_nqp_peak, AlignedHistogram, Direction, NqpExtraction,
    RecoveryFit,
};
use crate::error::{Error, Result};
use crate::radsource::{detect_outcome, sample_events, RadiationEvent};
use crate::synth::{synth_qubit_windows, IqStream, IqSynthesizer, Prep, QubitRecord, QubitSynthesizer};
use crate::trigger::{OfflineDetector, TriggerEvent};

/// MKID sample width (ns).
pub const MKID_BIN_NS: u32 = 1000;

/// Ground-truth events of a run.
pub fn truth_events(cfg: &RunConfig, duration_s: f64) -> Result<Vec<RadiationEvent>> {
    sample_events(
        cfg.source.rate_hz,
        duration_s,
        &cfg.spectrum,
        cfg.source.threshold_kev,
        cfg.seed.child("source", 0),
    )
}

/// Events seen by detector `channel` (index into `cfg.detectors`).
pub fn channel_events(cfg: &RunConfig, channel: usize, events: &[RadiationEvent]) -> Vec<RadiationEvent> {
    let d = &cfg.detectors[channel];
    let seed = cfg.seed.child("coupling", 0);
    events.iter().copied().filter(|e| detect_outcome(e, d, seed)).collect()
}

pub fn channel_synth(cfg: &RunConfig, channel: usize, events: Vec<RadiationEvent>) -> Result<IqSynthesizer> {
    IqSynthesizer::new(
        events,
        cfg.resonator,
        cfg.burst,
        cfg.film_gap()?,
        MKID_BIN_NS,
        cfg.seed.child("mkid", channel as u64),
    )
}

/// Merged `(first sample, length)` ranges covering every event's gate.
pub fn gate_ranges(cfg: &RunConfig, times_ns: &[f64]) -> Vec<(u64, usize)> {
    let bin = f64::from(MKID_BIN_NS);
    let pre = cfg.gate.mkid_pre_ms * 1e6;
    let post = cfg.gate.mkid_post_ms * 1e6;
    let mut out: Vec<(u64, u64)> = Vec::new();
    for &t in times_ns {
        let lo = ((t - pre) / bin).floor().max(0.0) as u64;
        let hi = ((t + post) / bin).ceil() as u64;
        match out.last_mut() {
            Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
            _ => out.push((lo, hi)),
        }
    }
    out.into_iter().map(|(lo, hi)| (lo, (hi - lo) as usize)).collect()
}

/// Offline detection on one gated segment with a fresh detector.
pub fn detect_segment(cfg: &RunConfig, stream: &IqStream, channel: &str) -> Result<Vec<TriggerEvent>> {
    let mut det = OfflineDetector::new(&cfg.trigger, channel, stream.start_time_ns, stream.bin_width_ns)?;
    let mut found = det.push(&stream.samples);
    found.extend(det.finish()?);
    Ok(found)
}

/// Clusters detections from all channels that fall within `window_ns` of a
/// cluster's first member; each cluster is stamped by its highest score.
pub fn merge_detections(mut all: Vec<TriggerEvent>, window_ns: f64) -> Vec<f64> {
    all.sort_by(|a, b| a.time_ns.total_cmp(&b.time_ns));
    let mut out: Vec<f64> = Vec::new();
    let mut cluster: Option<(f64, f64, f64)> = None; // (first, best time, best score)
    for e in all {
        match cluster.as_mut() {
            Some(c) if e.time_ns - c.0 <= window_ns => {
                if e.score > c.2 {
                    c.1 = e.time_ns;
                    c.2 = e.score;
                }
            }
            _ => {
                if let Some(c) = cluster.take() {
                    out.push(c.1);
                }
                cluster = Some((e.time_ns, e.time_ns, e.score));
            }
        }
    }
    out.extend(cluster.map(|c| c.1));
    out.sort_by(f64::total_cmp);
    out
}

pub fn qubit_synth<'a>(cfg: &RunConfig, events: &'a [RadiationEvent], prep: Prep) -> Result<QubitSynthesizer<'a>> {
    QubitSynthesizer::new(events, cfg.qubit, prep, cfg.burst, cfg.seed.child("qubit", prep.as_u8().into()))
}

/// Qubit cycles around each centre, wide enough for alignment on any
/// timestamp within the gate margin.
pub fn gated_qubit_records(cfg: &RunConfig, synth: &QubitSynthesizer<'_>, centers_ns: &[f64]) -> Result<Vec<QubitRecord>> {
    let m = cfg.gate.qubit_margin_us;
    synth_qubit_windows(synth, centers_ns, cfg.analysis.before_us + m, cfg.analysis.after_us + m)
}

/// Histogram, recovery fit and (for prep 1) the extracted density trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryAnalysis {
    pub n_events: usize,
    pub histogram: AlignedHistogram,
    pub fit: Option<RecoveryFit>,
    pub fit_error: Option<String>,
    pub nqp: Option<NqpExtraction>,
    pub nqp_fit: Option<RecoveryFit>,
    pub nqp_error: Option<String>,
}

pub fn analyze_recovery(cfg: &RunConfig, records: &[QubitRecord], centers_ns: &[f64]) -> Result<RecoveryAnalysis> {
    let a = &cfg.analysis;
    let histogram = align_and_tally(records, centers_ns, a.before_us, a.after_us, a.bin_width_us)?;
    let direction = match histogram.prep {
        Some(Prep::Ground) => Direction::Bump,
        _ => Direction::Dip,
    };
    let (fit, fit_error) = split(fit_exp_recovery(&histogram, direction))?;
    let (mut nqp, mut nqp_fit, mut nqp_error) = (None, None, None);
    if histogram.prep == Some(Prep::Excited) {
        // Unperturbed level from the fit, else the pre-event bins.
        let baseline = fit.as_ref().map(|f| f.baseline).filter(|b| *b > 0.0 && *b <= 1.0).or_else(|| {
            let (s, n) = (0..histogram.len())
                .filter(|&i| histogram.center(i) < 0.0)
                .fold((0, 0), |(s, n), i| (s + histogram.successes[i], n + histogram.trials[i]));
            (n > 0 && s > 0).then(|| s as f64 / n as f64)
        });
        match baseline {
            Some(b) => {
                let x = extract_nqp_trace(&histogram, cfg.qubit.idle, b, cfg.burst.rate_conversion)?;
                (nqp_fit, nqp_error) = split(fit_nqp_peak(&x))?;
                nqp = Some(x);
            }
            None => nqp_error = Some("no baseline P(1) available".into()),
        }
    }
    Ok(RecoveryAnalysis { n_events: centers_ns.len(), histogram, fit, fit_error, nqp, nqp_fit, nqp_error })
}

/// Fit failures are results, not errors; anything else propagates.
fn split(r: Result<RecoveryFit>) -> Result<(Option<RecoveryFit>, Option<String>)> {
    match r {
        Ok(f) => Ok((Some(f), None)),
        Err(e @ (Error::FitFailed(_) | Error::Domain(_))) => Ok((None, Some(e.to_string()))),
        Err(e) => Err(e),
    }
}

/// In-memory run that keeps simulating until `n_events` alignment events
/// (detections, or truth events with `align_on = truth`) have been
/// collected, then aligns the qubit records of `prep` on them.
pub fn recovery_experiment(cfg: &RunConfig, n_events: usize, prep: Prep) -> Result<RecoveryAnalysis> {
    cfg.validate()?;
    if n_events == 0 {
        return Err(Error::domain("need at least one event"));
    }
    if !(cfg.source.rate_hz > 0.0) {
        return Err(Error::config("source.rate_hz must be positive for a recovery experiment"));
    }
    // Twice the expected span; a lossy trigger that needs more is reported.
    let span_s = 2.0 * n_events as f64 / cfg.source.rate_hz + 10.0;
    let truth = truth_events(cfg, span_s)?;
    let times: Vec<f64> = truth.iter().map(|e| e.time_ns).collect();
    let centers = match cfg.analysis.align_on {
        AlignOn::Truth => {
            if times.len() < n_events {
                return Err(Error::domain("not enough events generated"));
            }
            times[..n_events].to_vec()
        }
        AlignOn::Detected => {
            let synths = (0..cfg.detectors.len())
                .map(|c| channel_synth(cfg, c, channel_events(cfg, c, &truth)))
                .collect::<Result<Vec<_>>>()?;
            let mut centers = Vec::with_capacity(n_events);
            for (first, len) in gate_ranges(cfg, &times) {
                let mut found = Vec::new();
                for (c, synth) in synths.iter().enumerate() {
                    found.extend(detect_segment(cfg, &synth.segment(first, len), &cfg.detectors[c].name)?);
                }
                centers.extend(merge_detections(found, cfg.analysis.coincidence_window_us * 1e3));
                if centers.len() >= n_events {
                    break;
                }
            }
            if centers.len() < n_events {
                return Err(Error::domain(format!(
                    "only {} of {n_events} events detected; check trigger and detector settings",
                    centers.len()
                )));
            }
            centers.truncate(n_events);
            centers
        }
    };
    let synth = qubit_synth(cfg, &truth, prep)?;
    let records = gated_qubit_records(cfg, &synth, &centers)?;
    analyze_recovery(cfg, &records, &centers)
}

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{ks_one_sample, robust_location_scale, KsResult};
use crate::synth::TimeSeries;

/// Change points closer than this are one scrambling event (s).
const MERGE_S: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrambleEvent {
    /// Boundary between the two compared windows (ns).
    pub time_ns: f64,
    /// |Δmean| in standard errors.
    pub z: f64,
    pub delta: f64,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Per-bin noise pooled over the whole series: MAD of first differences,
/// which a handful of jumps cannot inflate.
fn pooled_bin_sigma(values: &[f64]) -> f64 {
    let mut diffs: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
    robust_location_scale(&mut diffs).1 / std::f64::consts::SQRT_2
}

/// Sudden P(1) changes: at every bin boundary, compares the means of the
/// `window_bins` bins on either side and flags boundaries where they differ
/// by more than `k_sigma` standard errors. The standard error uses a
/// per-bin noise level pooled over the series. Flags closer than 2 s are
/// merged into the strongest one.
pub fn detect_tls_scrambles(series: &TimeSeries, k_sigma: f64, window_bins: usize) -> Result<Vec<ScrambleEvent>> {
    if window_bins == 0 {
        return Err(Error::domain("change-point window must be positive"));
    }
    if series.len() < 2 * window_bins {
        return Err(Error::domain(format!(
            "series of {} bins is shorter than two {window_bins}-bin windows",
            series.len()
        )));
    }
    let w = window_bins;
    let se = pooled_bin_sigma(&series.values) * (2.0 / w as f64).sqrt();
    let mut merged: Vec<ScrambleEvent> = Vec::new();
    for b in w..=series.len() - w {
        let delta = mean(&series.values[b..b + w]) - mean(&series.values[b - w..b]);
        let z = delta.abs() / se;
        if !(z > k_sigma) {
            continue;
        }
        let ev = ScrambleEvent { time_ns: series.start_ns + b as f64 * series.bin_ns, z, delta };
        match merged.last_mut() {
            Some(last) if ev.time_ns - last.time_ns < MERGE_S * 1e9 => {
                if ev.z > last.z {
                    *last = ev;
                }
            }
            _ => merged.push(ev),
        }
    }
    Ok(merged)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo_s: f64,
    pub hi_s: f64,
    pub count: u64,
    /// Expected count for independent Poisson radiation.
    pub expected: f64,
}

/// Nearest-preceding-radiation statistics for TLS events.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub n_tls: usize,
    pub n_radiation: usize,
    pub span_s: f64,
    /// Radiation rate |rad| / span (s⁻¹).
    pub lambda: f64,
    /// Nearest-preceding Δt per TLS event with a preceding event (s).
    pub delta_t_s: Vec<f64>,
    pub histogram: Vec<HistogramBin>,
    pub ks: Option<KsResult>,
    pub exclusion_window_s: f64,
    /// Analytic P(no Δt below the exclusion window | independence).
    pub p_zero_within: f64,
    pub observed_within: usize,
    pub min_delta_t_s: Option<f64>,
    pub flags: Vec<String>,
}

/// Options for [`correlation_report`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationOptions {
    /// Subtracted from each Δt (floored at 0) for timestamp uncertainty (s).
    pub timing_uncertainty_s: f64,
    pub hist_min_s: f64,
    pub hist_max_s: f64,
    pub bins_per_decade: usize,
}

impl Default for CorrelationOptions {
    fn default() -> Self {
        // Half of the 100 ms P(1) averaging bin.
        Self { timing_uncertainty_s: 0.05, hist_min_s: 0.1, hist_max_s: 1e4, bins_per_decade: 5 }
    }
}

/// Tests TLS scrambling times against independence from radiation.
///
/// Under independence the nearest-preceding Δt is exponential with rate
/// λ = |rad| / span, and the chance that none of the N TLS events falls
/// within `w` of a preceding event is exp(−λ·w·N).
pub fn correlation_report(
    tls_ns: &[f64],
    rad_ns: &[f64],
    span_s: f64,
    exclusion_window_s: f64,
    opts: &CorrelationOptions,
) -> Result<CorrelationReport> {
    if !(span_s > 0.0) {
        return Err(Error::domain("observation span must be positive"));
    }
    if tls_ns.windows(2).any(|w| w[0] > w[1]) || rad_ns.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("event lists must be sorted"));
    }
    if !(opts.hist_min_s > 0.0 && opts.hist_max_s > opts.hist_min_s && opts.bins_per_decade > 0) {
        return Err(Error::domain("invalid histogram range"));
    }
    let lambda = rad_ns.len() as f64 / span_s;
    let mut flags = Vec::new();
    let delta_t_s: Vec<f64> = tls_ns
        .iter()
        .filter_map(|&t| {
            let k = rad_ns.partition_point(|&r| r <= t);
            (k > 0).then(|| ((t - rad_ns[k - 1]) * 1e-9 - opts.timing_uncertainty_s).max(0.0))
        })
        .collect();
    let unmatched = tls_ns.len() - delta_t_s.len();
    if tls_ns.is_empty() {
        flags.push("no TLS events: statistics undefined".to_string());
    } else if unmatched > 0 {
        flags.push(format!("{unmatched} TLS events precede all radiation events and were skipped"));
    }
    if rad_ns.is_empty() {
        flags.push("no radiation events: rate is zero".to_string());
    }

    let decades = (opts.hist_max_s / opts.hist_min_s).log10();
    let nbins = (decades * opts.bins_per_decade as f64).ceil() as usize;
    let edge = |i: usize| opts.hist_min_s * 10f64.powf(i as f64 / opts.bins_per_decade as f64);
    let n = delta_t_s.len() as f64;
    let histogram = (0..nbins)
        .map(|i| {
            let (lo, hi) = (edge(i), edge(i + 1).min(opts.hist_max_s));
            HistogramBin {
                lo_s: lo,
                hi_s: hi,
                count: delta_t_s.iter().filter(|&&d| d >= lo && d < hi).count() as u64,
                expected: n * ((-lambda * lo).exp() - (-lambda * hi).exp()),
            }
        })
        .collect();

    let ks = if lambda > 0.0 { ks_one_sample(&delta_t_s, |x| 1.0 - (-lambda * x).exp()) } else { None };
    Ok(CorrelationReport {
        n_tls: tls_ns.len(),
        n_radiation: rad_ns.len(),
        span_s,
        lambda,
        observed_within: delta_t_s.iter().filter(|&&d| d < exclusion_window_s).count(),
        min_delta_t_s: delta_t_s.iter().copied().reduce(f64::min),
        delta_t_s,
        histogram,
        ks,
        exclusion_window_s,
        p_zero_within: (-lambda * exclusion_window_s * tls_ns.len() as f64).exp(),
        flags,
    })
}

impl CorrelationReport {
    /// Histogram CSV with header `lo_s,hi_s,count,expected`.
    pub fn write_histogram_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["lo_s", "hi_s", "count", "expected"])?;
        for b in &self.histogram {
            out.write_record([b.lo_s.to_string(), b.hi_s.to_string(), b.count.to_string(), b.expected.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seed;
    use crate::stats::chi_square_uniformity;
    use crate::synth::{inject_tls_jumps, synth_p1_series, QubitCycleParams, TlsJumps};
    use approx::assert_relative_eq;

    fn series(values: Vec<f64>) -> TimeSeries {
        TimeSeries { start_ns: 0.0, bin_ns: 1e8, values }
    }

    #[test]
    fn constant_series_has_no_scrambles() {
        assert!(detect_tls_scrambles(&series(vec![0.5; 100]), 5.0, 10).unwrap().is_empty());
    }

    #[test]
    fn short_series_rejected() {
        assert!(detect_tls_scrambles(&series(vec![0.5; 19]), 5.0, 10).is_err());
    }

    fn noisy_with_jumps(times_s: &[f64], seed: u64) -> TimeSeries {
        // 100 ms bins of ~100 cycles each → per-bin σ ≈ 0.05 at P = 0.5.
        let cycle = QubitCycleParams { readout_error: 0.0, reset: 950.0, ..Default::default() };
        let base = synth_p1_series(30.0, 100.0, &cycle, 0.5, &TlsJumps::default(), Seed(seed)).unwrap();
        let sizes = (0..times_s.len()).map(|i| if i % 2 == 0 { 0.2 } else { -0.2 }).collect();
        let jumps = TlsJumps::new(times_s.iter().map(|t| t * 1e9).collect(), sizes).unwrap();
        inject_tls_jumps(&base, &jumps).unwrap()
    }

    #[test]
    fn injected_jump_found_within_200ms() {
        // Per-boundary false-alarm rate at 5σ is ~6e-7, so an occasional
        // extra flag over 50 × 280 boundaries is allowed for.
        let good = (0..50)
            .filter(|&seed| {
                let ev = detect_tls_scrambles(&noisy_with_jumps(&[12.0], seed), 5.0, 10).unwrap();
                ev.len() == 1 && (ev[0].time_ns - 12e9).abs() <= 2e8
            })
            .count();
        assert!(good >= 49, "{good}/50");
    }

    #[test]
    fn two_jumps_ten_seconds_apart() {
        let ev = detect_tls_scrambles(&noisy_with_jumps(&[8.0, 18.0], 3), 5.0, 10).unwrap();
        assert_eq!(ev.len(), 2, "{ev:?}");
    }

    #[test]
    fn default_rate_and_zero_window_probability() {
        let span = 430.0 * 3600.0;
        let rad: Vec<f64> = (0..18_454).map(|i| f64::from(i) * span / 18_454.0 * 1e9).collect();
        let tls: Vec<f64> = (0..371).map(|i| (f64::from(i) + 0.5) * span / 371.0 * 1e9).collect();
        let r = correlation_report(&tls, &rad, span, 0.126, &CorrelationOptions::default()).unwrap();
        assert_relative_eq!(r.lambda, 0.011_921_2, max_relative = 1e-5);
        assert_relative_eq!(r.p_zero_within, 0.572_77, max_relative = 1e-4);
    }

    #[test]
    fn empty_tls_is_flagged() {
        let r = correlation_report(&[], &[1.0, 2.0], 10.0, 0.1, &CorrelationOptions::default()).unwrap();
        assert!(r.ks.is_none());
        assert!(!r.flags.is_empty());
        assert_eq!(r.p_zero_within, 1.0);
    }

    #[test]
    fn close_pairs_are_counted() {
        let r = correlation_report(&[10.2e9], &[10.0e9], 100.0, 0.2, &CorrelationOptions::default()).unwrap();
        assert_relative_eq!(r.delta_t_s[0], 0.15, epsilon = 1e-9);
        assert_eq!(r.observed_within, 1);
    }

    fn poisson(rate: f64, span: f64, seed: Seed, tag: &str) -> Vec<f64> {
        let mut t = 0.0;
        let mut v = Vec::new();
        for i in 0.. {
            t += -(1.0 - seed.uniform(tag, i)).ln() / rate;
            if t >= span {
                break;
            }
            v.push(t * 1e9);
        }
        v
    }

    #[test]
    fn independent_streams_give_uniform_p_values() {
        let span = 430.0 * 3600.0;
        let p: Vec<f64> = (0..200)
            .map(|s| {
                let seed = Seed(1000 + s);
                let rad = poisson(18_454.0 / span, span, seed, "rad");
                let tls = poisson(371.0 / span, span, seed, "tls");
                let r = correlation_report(&tls, &rad, span, 0.126, &CorrelationOptions::default()).unwrap();
                r.ks.unwrap().p_value
            })
            .collect();
        assert!(chi_square_uniformity(&p, 10) > 0.01);
    }
}

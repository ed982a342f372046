use std::io::{Read, Write};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::burst::{p1_survival, p_excite_at, BurstParams};
use crate::error::{Error, Result};
use crate::radsource::RadiationEvent;
use crate::seed::Seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Prep {
    Ground,
    Excited,
}

impl Prep {
    pub fn as_u8(self) -> u8 {
        match self {
            Prep::Ground => 0,
            Prep::Excited => 1,
        }
    }
}

impl TryFrom<u8> for Prep {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Prep::Ground),
            1 => Ok(Prep::Excited),
            other => Err(format!("qubit state must be 0 or 1, got {other}")),
        }
    }
}

impl From<Prep> for u8 {
    fn from(p: Prep) -> u8 {
        p.as_u8()
    }
}

/// One prepare–idle–measure cycle. `time_ns` is the readout midpoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QubitRecord {
    #[serde(rename = "t_ns")]
    pub time_ns: f64,
    pub prep: Prep,
    pub outcome: u8,
}

/// Durations in µs; `ej_over_ec` and `f_q` (GHz) are carried as metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QubitCycleParams {
    pub prep_duration: f64,
    pub idle: f64,
    pub readout: f64,
    pub reset: f64,
    pub ej_over_ec: f64,
    pub f_q: f64,
    /// Symmetric assignment error of the readout.
    pub readout_error: f64,
}

impl Default for QubitCycleParams {
    fn default() -> Self {
        Self {
            prep_duration: 0.1,
            idle: 1.0,
            readout: 1.0,
            reset: 50.0,
            ej_over_ec: 350.0,
            f_q: 11.0,
            readout_error: 0.01,
        }
    }
}

impl QubitCycleParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("prep_duration", self.prep_duration),
            ("idle", self.idle),
            ("readout", self.readout),
            ("reset", self.reset),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(format!("qubit.{name} must be positive")));
            }
        }
        if !(0.0..=0.5).contains(&self.readout_error) {
            return Err(Error::config("qubit.readout_error must lie in [0, 0.5]"));
        }
        Ok(())
    }

    pub fn period_us(&self) -> f64 {
        self.prep_duration + self.idle + self.readout + self.reset
    }

    /// Offset of the readout midpoint from the start of a cycle (µs).
    pub fn readout_offset_us(&self) -> f64 {
        self.prep_duration + self.idle + 0.5 * self.readout
    }

    /// Probability of reading 1 given true excited-state probability `p`.
    pub fn observed(&self, p: f64) -> f64 {
        p * (1.0 - self.readout_error) + (1.0 - p) * self.readout_error
    }
}

/// Piecewise-constant P(1) offsets, each applying from its jump time on.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TlsJumps {
    pub times_ns: Vec<f64>,
    pub magnitudes: Vec<f64>,
}

impl TlsJumps {
    pub fn new(times_ns: Vec<f64>, magnitudes: Vec<f64>) -> Result<Self> {
        if times_ns.len() != magnitudes.len() {
            return Err(Error::domain("jump times and magnitudes differ in length"));
        }
        if times_ns.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::domain("jump times must be sorted"));
        }
        Ok(Self { times_ns, magnitudes })
    }

    pub fn offset_at(&self, t_ns: f64) -> f64 {
        let n = self.times_ns.partition_point(|&t| t <= t_ns);
        self.magnitudes[..n].iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.times_ns.is_empty()
    }
}

fn check_probability(p: f64, t_ns: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&p) {
        Ok(p)
    } else {
        Err(Error::domain(format!("probability {p} out of [0, 1] at t = {t_ns} ns")))
    }
}

/// Uniformly binned time series (e.g. P(1) averaged over 100 ms).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub start_ns: f64,
    pub bin_ns: f64,
    pub values: Vec<f64>,
}

impl TimeSeries {
    /// Centre time of bin `i`.
    pub fn time_of(&self, i: usize) -> f64 {
        self.start_ns + (i as f64 + 0.5) * self.bin_ns
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Adds the TLS offsets to a P(1) series, bin by bin at the bin centre.
pub fn inject_tls_jumps(series: &TimeSeries, jumps: &TlsJumps) -> Result<TimeSeries> {
    let values = series
        .values
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let t = series.time_of(i);
            check_probability(v + jumps.offset_at(t), t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TimeSeries { values, ..series.clone() })
}

/// Generates qubit records on the global cycle grid.
///
/// Cycle `i` starts at `origin + i·period`; its outcome depends only on the
/// seed and `i`, so any subset of cycles can be generated on its own.
#[derive(Debug, Clone)]
pub struct QubitSynthesizer<'a> {
    events: &'a [RadiationEvent],
    cycle: QubitCycleParams,
    prep: Prep,
    burst: BurstParams,
    seed: Seed,
    origin_ns: f64,
    tls: Option<&'a TlsJumps>,
}

impl<'a> QubitSynthesizer<'a> {
    /// `events` must be time-sorted.
    pub fn new(events: &'a [RadiationEvent], cycle: QubitCycleParams, prep: Prep, burst: BurstParams, seed: Seed) -> Result<Self> {
        cycle.validate()?;
        burst.validate()?;
        if events.windows(2).any(|w| w[0].time_ns > w[1].time_ns) {
            return Err(Error::domain("events must be time-sorted"));
        }
        Ok(Self { events, cycle, prep, burst, seed, origin_ns: 0.0, tls: None })
    }

    pub fn with_tls(mut self, tls: &'a TlsJumps) -> Self {
        self.tls = Some(tls);
        self
    }

    pub fn with_origin(mut self, origin_ns: f64) -> Self {
        self.origin_ns = origin_ns;
        self
    }

    pub fn period_ns(&self) -> f64 {
        self.cycle.period_us() * 1e3
    }

    pub fn readout_time(&self, i: u64) -> f64 {
        self.origin_ns + i as f64 * self.period_ns() + self.cycle.readout_offset_us() * 1e3
    }

    /// True probability of ending in |1⟩ for a cycle read out at `t_ns`.
    pub fn probability(&self, t_ns: f64) -> Result<f64> {
        let base = match self.prep {
            Prep::Excited => p1_survival(t_ns, self.events, &self.burst, self.cycle.idle),
            Prep::Ground => p_excite_at(t_ns, self.events, &self.burst),
        };
        let offset = self.tls.map_or(0.0, |j| j.offset_at(t_ns));
        check_probability(base + offset, t_ns)
    }

    pub fn record(&self, i: u64) -> Result<QubitRecord> {
        let t = self.readout_time(i);
        let p = self.probability(t)?;
        let mut rng = self.seed.rng("qubit-cycle", i);
        let state = rng.random::<f64>() < p;
        let flipped = rng.random::<f64>() < self.cycle.readout_error;
        Ok(QubitRecord { time_ns: t, prep: self.prep, outcome: u8::from(state ^ flipped) })
    }

    /// Index range of cycles whose readout lies in `[t0, t1]`.
    pub fn cycles_between(&self, t0: f64, t1: f64) -> std::ops::Range<u64> {
        let period = self.period_ns();
        let offset = self.origin_ns + self.cycle.readout_offset_us() * 1e3;
        let lo = ((t0 - offset) / period).ceil().max(0.0) as u64;
        let hi = ((t1 - offset) / period).floor();
        if hi < 0.0 {
            return 0..0;
        }
        lo..(hi as u64 + 1).max(lo)
    }
}

/// All cycles tiling `[0, duration_s)`.
pub fn synth_qubit_stream(
    events: &[RadiationEvent],
    cycle: &QubitCycleParams,
    prep: Prep,
    burst: &BurstParams,
    duration_s: f64,
    seed: Seed,
    tls: Option<&TlsJumps>,
) -> Result<Vec<QubitRecord>> {
    let mut synth = QubitSynthesizer::new(events, *cycle, prep, *burst, seed)?;
    if let Some(j) = tls {
        synth = synth.with_tls(j);
    }
    let n = (duration_s * 1e9 / synth.period_ns()).ceil() as u64;
    (0..n).map(|i| synth.record(i)).collect()
}

/// Only the cycles read out within `[c − before_us, c + after_us]` of some
/// centre `c`. Records are identical to those of [`synth_qubit_stream`].
pub fn synth_qubit_windows(
    synth: &QubitSynthesizer<'_>,
    centers_ns: &[f64],
    before_us: f64,
    after_us: f64,
) -> Result<Vec<QubitRecord>> {
    let mut ranges: Vec<std::ops::Range<u64>> = centers_ns
        .iter()
        .map(|&c| synth.cycles_between(c - before_us * 1e3, c + after_us * 1e3))
        .filter(|r| !r.is_empty())
        .collect();
    ranges.sort_by_key(|r| r.start);
    let mut merged: Vec<std::ops::Range<u64>> = Vec::new();
    for r in ranges {
        match merged.last_mut() {
            Some(last) if r.start <= last.end => last.end = last.end.max(r.end),
            _ => merged.push(r),
        }
    }
    merged.into_iter().flatten().map(|i| synth.record(i)).collect()
}

/// P(1) averaged over `bin_ms` bins, drawn as binomial tallies of the
/// cycles in each bin. Radiation bursts are too short to matter at this
/// averaging and are not modelled here.
pub fn synth_p1_series(
    duration_s: f64,
    bin_ms: f64,
    cycle: &QubitCycleParams,
    p1_baseline: f64,
    tls: &TlsJumps,
    seed: Seed,
) -> Result<TimeSeries> {
    cycle.validate()?;
    if !(duration_s > 0.0 && bin_ms > 0.0) {
        return Err(Error::domain("duration and bin width must be positive"));
    }
    let bin_ns = bin_ms * 1e6;
    let n_bins = (duration_s * 1e9 / bin_ns).floor() as usize;
    let per_bin = (bin_ns / (cycle.period_us() * 1e3)).floor() as u64;
    if per_bin == 0 {
        return Err(Error::domain("bin shorter than one qubit cycle"));
    }
    let mut series = TimeSeries { start_ns: 0.0, bin_ns, values: Vec::with_capacity(n_bins) };
    for i in 0..n_bins {
        let t = series.time_of(i);
        let p = check_probability(p1_baseline + tls.offset_at(t), t)?;
        let dist = Binomial::new(per_bin, cycle.observed(p)).map_err(|e| Error::domain(e.to_string()))?;
        let k = dist.sample(&mut seed.rng("p1-series", i as u64));
        series.values.push(k as f64 / per_bin as f64);
    }
    Ok(series)
}

/// CSV with header `t_ns,prep,outcome`.
pub fn write_qubit_records<W: Write>(w: W, records: &[QubitRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t_ns", "prep", "outcome"])?;
    for r in records {
        out.write_record([r.time_ns.to_string(), r.prep.as_u8().to_string(), r.outcome.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_qubit_records<R: Read>(r: R) -> Result<Vec<QubitRecord>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let rec: QubitRecord = row?;
        if rec.outcome > 1 {
            return Err(Error::Format(format!("outcome must be 0 or 1, got {}", rec.outcome)));
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn cycle_period_from_defaults() {
        assert_relative_eq!(QubitCycleParams::default().period_us(), 52.1, max_relative = 1e-12);
    }

    #[test]
    fn prep1_without_events_matches_baseline() {
        let cycle = QubitCycleParams { readout_error: 0.0, ..Default::default() };
        let burst = BurstParams::default();
        let recs = synth_qubit_stream(&[], &cycle, Prep::Excited, &burst, 2.0, Seed(3), None).unwrap();
        let n = recs.len() as f64;
        let frac = recs.iter().filter(|r| r.outcome == 1).count() as f64 / n;
        let se = (0.95 * 0.05 / n).sqrt();
        assert!((frac - 0.95).abs() < 3.0 * se, "{frac}");
    }

    #[test]
    fn prep0_without_events_matches_excitation_baseline() {
        let cycle = QubitCycleParams::default();
        let burst = BurstParams::default();
        let recs = synth_qubit_stream(&[], &cycle, Prep::Ground, &burst, 100_000.0 * 52.1e-6, Seed(8), None).unwrap();
        assert_eq!(recs.len(), 100_000);
        let p = cycle.observed(burst.excitation_baseline);
        let frac = recs.iter().filter(|r| r.outcome == 1).count() as f64 / 1e5;
        assert!((frac - p).abs() < 3.0 * (p * (1.0 - p) / 1e5).sqrt(), "{frac}");
    }

    #[test]
    fn timestamps_have_constant_period() {
        let recs = synth_qubit_stream(&[], &QubitCycleParams::default(), Prep::Excited, &BurstParams::default(), 0.01, Seed(1), None).unwrap();
        let d0 = recs[1].time_ns - recs[0].time_ns;
        assert_relative_eq!(d0, 52_100.0, max_relative = 1e-12);
        assert!(recs.windows(2).all(|w| ((w[1].time_ns - w[0].time_ns) - d0).abs() < 1e-6));
    }

    #[test]
    fn windowed_records_match_full_stream() {
        let events = vec![
            RadiationEvent { time_ns: 1.0e6, energy_kev: 350.0 },
            RadiationEvent { time_ns: 1.1e6, energy_kev: 800.0 },
        ];
        let (cycle, burst) = (QubitCycleParams::default(), BurstParams::default());
        let full = synth_qubit_stream(&events, &cycle, Prep::Excited, &burst, 0.01, Seed(5), None).unwrap();
        let synth = QubitSynthesizer::new(&events, cycle, Prep::Excited, burst, Seed(5)).unwrap();
        let gated = synth_qubit_windows(&synth, &[1.0e6, 1.1e6], 200.0, 200.0).unwrap();
        let expected: Vec<_> = full
            .iter()
            .filter(|r| (0.8e6..=1.3e6).contains(&r.time_ns))
            .copied()
            .collect();
        assert_eq!(gated, expected);
    }

    #[test]
    fn tls_offsets() {
        let j = TlsJumps::new(vec![10.0, 20.0], vec![0.2, -0.2]).unwrap();
        assert_eq!(j.offset_at(5.0), 0.0);
        assert_relative_eq!(j.offset_at(15.0), 0.2);
        assert_relative_eq!(j.offset_at(25.0), 0.0, epsilon = 1e-15);
        let s = TimeSeries { start_ns: 0.0, bin_ns: 1.0, values: vec![0.5; 30] };
        assert_eq!(inject_tls_jumps(&s, &TlsJumps::default()).unwrap(), s);
        let out = inject_tls_jumps(&s, &j).unwrap();
        assert_eq!(out.values[29], 0.5);
        assert_relative_eq!(out.values[12], 0.7);
        let too_big = TlsJumps::new(vec![1.0], vec![0.6]).unwrap();
        assert!(inject_tls_jumps(&s, &too_big).is_err());
    }

    #[test]
    fn tls_jump_visible_in_outcomes() {
        let cycle = QubitCycleParams { readout_error: 0.0, ..Default::default() };
        let burst = BurstParams { p1_baseline: 0.5, ..Default::default() };
        let t0 = 10_000.0 * 52_100.0;
        let j = TlsJumps::new(vec![t0], vec![0.2]).unwrap();
        let recs = synth_qubit_stream(&[], &cycle, Prep::Excited, &burst, 2.0 * t0 * 1e-9, Seed(2), Some(&j)).unwrap();
        let mean = |rs: &[QubitRecord]| rs.iter().map(|r| f64::from(r.outcome)).sum::<f64>() / rs.len() as f64;
        let (before, after): (Vec<_>, Vec<_>) = recs.iter().partition(|r| r.time_ns < t0);
        let diff = mean(&after) - mean(&before);
        let se = (0.5 * 0.5 / 1e4 + 0.7 * 0.3 / 1e4f64).sqrt();
        assert!((diff - 0.2).abs() < 3.0 * se, "{diff}");
    }

    #[test]
    fn p1_series_tracks_baseline() {
        let cycle = QubitCycleParams::default();
        let s = synth_p1_series(10.0, 100.0, &cycle, 0.6, &TlsJumps::default(), Seed(1)).unwrap();
        assert_eq!(s.len(), 100);
        let mean = s.values.iter().sum::<f64>() / 100.0;
        assert!((mean - cycle.observed(0.6)).abs() < 0.01);
    }

    #[test]
    fn records_csv_round_trip() {
        let recs = synth_qubit_stream(&[], &QubitCycleParams::default(), Prep::Ground, &BurstParams::default(), 0.001, Seed(1), None).unwrap();
        let mut buf = Vec::new();
        write_qubit_records(&mut buf, &recs).unwrap();
        assert!(buf.starts_with(b"t_ns,prep,outcome\n"));
        assert_eq!(read_qubit_records(&buf[..]).unwrap(), recs);
        assert!(read_qubit_records(&b"t_ns,prep,outcome\n1,2,0\n"[..]).is_err());
    }
}

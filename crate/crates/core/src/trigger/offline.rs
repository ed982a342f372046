use std::collections::VecDeque;

use num_complex::Complex32;

use super::{Polarity, TriggerConfig, TriggerEvent};
use crate::error::{Error, Result};
use crate::stats::{median_in_place, MAD_TO_SIGMA};
use crate::synth::IqStream;

/// Samples per processing block. Blocks sit at fixed offsets from the start
/// of the stream, which keeps the output independent of how input arrives.
const BLOCK: usize = 4096;
/// Every this many filter outputs feeds the noise estimate.
const DECIMATION: u64 = 64;
/// Noise-estimate entries needed before anything can trigger.
const MIN_SIGMA_VALUES: usize = 48;

/// Unit-norm decaying exponential `exp(−k/τ)`, `len` samples.
pub fn exp_template(tau_samples: f64, len: usize) -> Vec<f64> {
    let mut t: Vec<f64> = (0..len).map(|k| (-(k as f64) / tau_samples).exp()).collect();
    let norm = t.iter().map(|v| v * v).sum::<f64>().sqrt();
    t.iter_mut().for_each(|v| *v /= norm);
    t
}

/// Direct correlation `y[n] = Σₖ x[n+k]·template[k]`, zero beyond the end.
pub fn matched_filter_scores(x: &[f64], template: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| x[n..].iter().zip(template).map(|(a, b)| a * b).sum())
        .collect()
}

/// Scores of the excursion in progress.
#[derive(Debug, Clone, Default)]
struct Excursion {
    first: u64,
    /// Score of the sample preceding `first`, when known.
    before: Option<f64>,
    scores: Vec<f64>,
}

impl Excursion {
    /// Where the score first reaches `fraction` below the excursion
    /// maximum, in samples from the stream start, interpolated linearly
    /// between neighbouring samples; plus the score there.
    fn peak(&self, fraction: f64) -> (f64, f64) {
        let max = self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let floor = max * (1.0 - fraction);
        let k = self.scores.iter().position(|&z| z >= floor).unwrap_or(0);
        let prev = if k > 0 { Some(self.scores[k - 1]) } else { self.before };
        let pos = match prev {
            Some(p) if p < floor => k as f64 - 1.0 + (floor - p) / (self.scores[k] - p),
            _ => k as f64,
        };
        (self.first as f64 + pos, self.scores[k])
    }
}

/// Streaming offline detector for one channel.
///
/// |S21| → single-pole high-pass → single-pole low-pass → correlation with
/// a unit-norm exponential template → (y − median)/σ with σ from the MAD of
/// a trailing window → threshold. Each excursion (from crossing the
/// threshold until falling below the re-arm level) yields one event stamped
/// at the leading edge of its maximum: the point where the score first comes
/// within `peak_fraction` of the excursion peak, interpolated between
/// samples. For a saturated pulse, whose score flattens into a noisy
/// plateau, that is the plateau onset rather than a random point on it.
/// Events within the holdoff of the previous one are dropped.
#[derive(Debug, Clone)]
pub struct OfflineDetector {
    channel: String,
    threshold: f64,
    rearm: f64,
    peak_fraction: f64,
    sign: f64,
    start_ns: u64,
    bin_ns: f64,
    holdoff_ns: f64,
    offset_ns: f64,

    hp_alpha: f64,
    lp_beta: f64,
    hp_prev: Option<f64>,
    hp_y: f64,
    lp_y: f64,

    decay: f64,
    decay_l: f64,
    template_len: usize,
    template_norm: f64,

    /// Low-passed samples from absolute index `buf_start` on.
    buf: Vec<f64>,
    buf_start: u64,
    acc: Vec<f64>,

    ring: VecDeque<f64>,
    ring_cap: usize,
    scratch: Vec<f64>,
    noise: Option<(f64, f64)>,

    excursion: Option<Excursion>,
    last_event_ns: Option<f64>,
    last_z: Option<f64>,
    last_idx: u64,
    seen: u64,
}

impl OfflineDetector {
    pub fn new(cfg: &TriggerConfig, channel: impl Into<String>, start_ns: u64, bin_width_ns: u32) -> Result<Self> {
        cfg.validate()?;
        if bin_width_ns == 0 {
            return Err(Error::config("bin width must be positive"));
        }
        let dt = f64::from(bin_width_ns) * 1e-9;
        let rc_hp = 1.0 / (2.0 * std::f64::consts::PI * cfg.highpass_cutoff);
        let rc_lp = 1.0 / (2.0 * std::f64::consts::PI * cfg.lowpass_cutoff);
        let tau_samples = cfg.template_tau * 1e3 / f64::from(bin_width_ns);
        let template_len = (cfg.template_length * tau_samples).ceil().max(1.0) as usize;
        let decay = (-1.0 / tau_samples).exp();
        let template_norm = (0..template_len).map(|k| decay.powi(2 * k as i32)).sum::<f64>().sqrt();
        let ring_cap = ((cfg.sigma_window * 1e-3 / dt) / DECIMATION as f64).ceil().max(MIN_SIGMA_VALUES as f64) as usize;
        Ok(Self {
            channel: channel.into(),
            threshold: cfg.offline_threshold,
            rearm: cfg.offline_rearm,
            peak_fraction: cfg.peak_fraction,
            sign: match cfg.polarity {
                Polarity::Positive => 1.0,
                Polarity::Negative => -1.0,
            },
            start_ns,
            bin_ns: f64::from(bin_width_ns),
            holdoff_ns: cfg.holdoff * 1e3,
            offset_ns: cfg.timing_offset * 1e3,
            hp_alpha: rc_hp / (rc_hp + dt),
            lp_beta: dt / (rc_lp + dt),
            hp_prev: None,
            hp_y: 0.0,
            lp_y: 0.0,
            decay,
            decay_l: decay.powi(template_len as i32),
            template_len,
            template_norm,
            buf: Vec::with_capacity(BLOCK + template_len + 1),
            buf_start: 0,
            acc: vec![0.0; BLOCK + template_len + 1],
            ring: VecDeque::with_capacity(ring_cap),
            ring_cap,
            scratch: Vec::with_capacity(ring_cap),
            noise: None,
            excursion: None,
            last_event_ns: None,
            last_z: None,
            last_idx: 0,
            seen: 0,
        })
    }

    pub fn template_len(&self) -> usize {
        self.template_len
    }

    /// Current noise estimate (median, σ) of the filter output, if any.
    pub fn noise(&self) -> Option<(f64, f64)> {
        self.noise
    }

    /// Feeds the next samples; returns events that are final.
    pub fn push(&mut self, samples: &[Complex32]) -> Vec<TriggerEvent> {
        let mut out = Vec::new();
        for s in samples {
            let (re, im) = (f64::from(s.re), f64::from(s.im));
            let mag = (re * re + im * im).sqrt();
            let prev = *self.hp_prev.get_or_insert(mag);
            self.hp_y = self.hp_alpha * (self.hp_y + mag - prev);
            self.hp_prev = Some(mag);
            self.lp_y += self.lp_beta * (self.hp_y - self.lp_y);
            self.buf.push(self.lp_y);
            if self.buf.len() == BLOCK + self.template_len {
                self.process_block(BLOCK, &mut out);
            }
        }
        self.seen += samples.len() as u64;
        out
    }

    /// Flushes the tail (template treated as zero past the end).
    pub fn finish(mut self) -> Result<Vec<TriggerEvent>> {
        if self.seen < self.template_len as u64 {
            return Err(Error::domain(format!(
                "stream of {} samples is shorter than the {}-sample template",
                self.seen, self.template_len
            )));
        }
        let mut out = Vec::new();
        while !self.buf.is_empty() {
            let len = self.buf.len().min(BLOCK);
            self.process_block(len, &mut out);
        }
        if let Some(ex) = self.excursion.take() {
            let (i, score) = ex.peak(self.peak_fraction);
            self.emit(i, score, &mut out);
        }
        Ok(out)
    }

    fn refresh_noise(&mut self) {
        if self.ring.len() < MIN_SIGMA_VALUES {
            return;
        }
        self.scratch.clear();
        self.scratch.extend(self.ring.iter());
        let med = median_in_place(&mut self.scratch);
        self.scratch.iter_mut().for_each(|v| *v = (*v - med).abs());
        let sigma = MAD_TO_SIGMA * median_in_place(&mut self.scratch);
        self.noise = Some((med, sigma.max(1e-300)));
    }

    /// Scores the first `len` buffered samples using everything buffered as
    /// lookahead, then drops them.
    fn process_block(&mut self, len: usize, out: &mut Vec<TriggerEvent>) {
        self.refresh_noise();
        let avail = self.buf.len();
        // acc[m] = Σ_{k ≥ 0} buf[m + k]·decay^k over the buffered data.
        self.acc[avail] = 0.0;
        for m in (0..avail).rev() {
            self.acc[m] = self.buf[m] + self.decay * self.acc[m + 1];
        }
        let l = self.template_len;
        for m in 0..len {
            let tail = if m + l <= avail { self.acc[m + l] } else { 0.0 };
            let y = (self.acc[m] - self.decay_l * tail) / self.template_norm;
            let idx = self.buf_start + m as u64;
            if let Some((med, sigma)) = self.noise {
                let z = self.sign * (y - med) / sigma;
                self.track(idx, z, out);
            }
            if idx % DECIMATION == 0 {
                if self.ring.len() == self.ring_cap {
                    self.ring.pop_front();
                }
                self.ring.push_back(y);
            }
        }
        self.buf.drain(..len);
        self.buf_start += len as u64;
    }

    fn track(&mut self, idx: u64, z: f64, out: &mut Vec<TriggerEvent>) {
        match &mut self.excursion {
            Some(ex) if z < self.rearm => {
                let (i, score) = ex.peak(self.peak_fraction);
                self.excursion = None;
                self.emit(i, score, out);
            }
            Some(ex) => ex.scores.push(z),
            None if z > self.threshold => {
                let before = self.last_z.filter(|_| idx > 0 && self.last_idx == idx - 1);
                self.excursion = Some(Excursion { first: idx, before, scores: vec![z] });
            }
            None => {}
        }
        self.last_z = Some(z);
        self.last_idx = idx;
    }

    /// `pos` is a fractional sample index; samples are stamped at bin centres.
    fn emit(&mut self, pos: f64, score: f64, out: &mut Vec<TriggerEvent>) {
        let t = self.start_ns as f64 + (pos + 0.5) * self.bin_ns + self.offset_ns;
        if let Some(last) = self.last_event_ns {
            if t - last < self.holdoff_ns {
                return;
            }
        }
        self.last_event_ns = Some(t);
        out.push(TriggerEvent { time_ns: t, score, channel: self.channel.clone() });
    }
}

/// Runs the detector over a whole stream.
pub fn offline_detect(stream: &IqStream, cfg: &TriggerConfig, channel: &str) -> Result<Vec<TriggerEvent>> {
    let mut det = OfflineDetector::new(cfg, channel, stream.start_time_ns, stream.bin_width_ns)?;
    if stream.len() < det.template_len() {
        return Err(Error::domain(format!(
            "stream of {} samples is shorter than the {}-sample template",
            stream.len(),
            det.template_len()
        )));
    }
    let mut events = det.push(&stream.samples);
    events.extend(det.finish()?);
    Ok(events)
}

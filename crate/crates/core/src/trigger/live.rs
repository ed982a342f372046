use num_complex::{Complex32, Complex64};

use super::TriggerConfig;
use crate::error::{Error, Result};

/// Samples required before a baseline is trusted.
pub const MIN_BASELINE_SAMPLES: u64 = 1000;

/// Running centroid and per-quadrature spread of quiet IQ samples.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IqBaseline {
    n: u64,
    mean: Complex64,
    // Welford sums of squared deviations, per quadrature.
    m2: (f64, f64),
}

impl IqBaseline {
    pub fn estimate(samples: &[Complex32]) -> Result<Self> {
        let mut b = Self::default();
        b.extend(samples);
        if b.n < MIN_BASELINE_SAMPLES {
            return Err(Error::domain(format!(
                "baseline needs at least {MIN_BASELINE_SAMPLES} samples, got {}",
                b.n
            )));
        }
        Ok(b)
    }

    pub fn extend(&mut self, samples: &[Complex32]) {
        for s in samples {
            let x = Complex64::new(f64::from(s.re), f64::from(s.im));
            self.n += 1;
            let d = x - self.mean;
            self.mean += d / self.n as f64;
            let d2 = x - self.mean;
            self.m2.0 += d.re * d2.re;
            self.m2.1 += d.im * d2.im;
        }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn centroid(&self) -> Complex64 {
        self.mean
    }

    /// Per-quadrature standard deviations (I, Q).
    pub fn sigma(&self) -> (f64, f64) {
        if self.n < 2 {
            return (0.0, 0.0);
        }
        let d = (self.n - 1) as f64;
        ((self.m2.0 / d).sqrt(), (self.m2.1 / d).sqrt())
    }

    pub fn is_ready(&self) -> bool {
        self.n >= MIN_BASELINE_SAMPLES
    }
}

/// IQ-asymmetry decision for one window.
///
/// Coordinates are scaled by the per-quadrature σ. Samples farther than
/// `live_outer_radius` from the baseline centroid form the outer set; the
/// trigger fires when that set's centroid sits more than
/// `live_com_threshold` from the baseline centroid. Noise scatters the outer
/// set symmetrically, so its centroid stays near the centre.
pub fn live_trigger(window: &[Complex32], baseline: &IqBaseline, cfg: &TriggerConfig) -> bool {
    if !baseline.is_ready() {
        return false;
    }
    let c = baseline.centroid();
    let floor = f64::EPSILON * c.norm().max(1.0);
    let (si, sq) = baseline.sigma();
    let (si, sq) = (si.max(floor), sq.max(floor));
    let r2 = cfg.live_outer_radius * cfg.live_outer_radius;
    let (mut sum_i, mut sum_q, mut n) = (0.0, 0.0, 0u32);
    for s in window {
        let di = (f64::from(s.re) - c.re) / si;
        let dq = (f64::from(s.im) - c.im) / sq;
        if di * di + dq * dq > r2 {
            sum_i += di;
            sum_q += dq;
            n += 1;
        }
    }
    if n == 0 {
        return false;
    }
    let (ci, cq) = (sum_i / f64::from(n), sum_q / f64::from(n));
    (ci * ci + cq * cq).sqrt() > cfg.live_com_threshold
}

/// Streaming live trigger over consecutive non-overlapping windows.
///
/// Quiet windows feed the baseline; windows that fire are excluded so that
/// events do not drag the centroid.
#[derive(Debug, Clone)]
pub struct LiveTrigger {
    cfg: TriggerConfig,
    baseline: IqBaseline,
    pending: Vec<Complex32>,
    windows: u64,
}

impl LiveTrigger {
    pub fn new(cfg: TriggerConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { pending: Vec::with_capacity(cfg.live_window), cfg, baseline: IqBaseline::default(), windows: 0 })
    }

    pub fn baseline(&self) -> &IqBaseline {
        &self.baseline
    }

    /// Feeds samples; returns the indices of completed windows that fired.
    pub fn push(&mut self, samples: &[Complex32]) -> Vec<u64> {
        let mut fired = Vec::new();
        let w = self.cfg.live_window;
        let mut rest = samples;
        while !rest.is_empty() {
            let take = (w - self.pending.len()).min(rest.len());
            self.pending.extend_from_slice(&rest[..take]);
            rest = &rest[take..];
            if self.pending.len() == w {
                if live_trigger(&self.pending, &self.baseline, &self.cfg) {
                    fired.push(self.windows);
                } else {
                    self.baseline.extend(&self.pending);
                }
                self.pending.clear();
                self.windows += 1;
            }
        }
        fired
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seed;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, sigma: f64, seed: u64) -> Vec<Complex32> {
        let mut rng = Seed(seed).rng("live-test", 0);
        (0..n)
            .map(|_| {
                let i: f64 = StandardNormal.sample(&mut rng);
                let q: f64 = StandardNormal.sample(&mut rng);
                Complex32::new((0.625 + sigma * i) as f32, (sigma * q) as f32)
            })
            .collect()
    }

    #[test]
    fn baseline_needs_enough_samples() {
        assert!(IqBaseline::estimate(&noise(999, 0.03, 1)).is_err());
        let b = IqBaseline::estimate(&noise(100_000, 0.03, 1)).unwrap();
        let (si, sq) = b.sigma();
        assert!((si - 0.03).abs() < 1e-3 && (sq - 0.03).abs() < 1e-3);
        assert!((b.centroid().re - 0.625).abs() < 1e-3);
    }

    #[test]
    fn noise_rarely_fires() {
        let cfg = TriggerConfig::default();
        let b = IqBaseline::estimate(&noise(10_000, 0.03, 2)).unwrap();
        let data = noise(10_000 * cfg.live_window, 0.03, 3);
        let fired = data.chunks(cfg.live_window).filter(|w| live_trigger(w, &b, &cfg)).count();
        assert!(fired <= 10, "{fired} of 10000 windows fired");
    }

    #[test]
    fn zero_noise_never_fires() {
        let cfg = TriggerConfig::default();
        let quiet = vec![Complex32::new(0.625, 0.0); 2000];
        let b = IqBaseline::estimate(&quiet).unwrap();
        assert!(!live_trigger(&quiet[..256], &b, &cfg));
    }

    #[test]
    fn displaced_cluster_fires() {
        let cfg = TriggerConfig::default();
        let b = IqBaseline::estimate(&noise(5000, 0.03, 4)).unwrap();
        let mut w = noise(256, 0.03, 5);
        for s in w.iter_mut().take(40) {
            s.re += 0.3;
        }
        assert!(live_trigger(&w, &b, &cfg));
    }

    #[test]
    fn streaming_trigger_reports_window_index() {
        let cfg = TriggerConfig::default();
        let mut data = noise(20 * 256, 0.03, 6);
        for s in &mut data[15 * 256 + 10..15 * 256 + 60] {
            s.re += 0.3;
        }
        let mut t = LiveTrigger::new(cfg).unwrap();
        let mut fired = Vec::new();
        for chunk in data.chunks(1000) {
            fired.extend(t.push(chunk));
        }
        assert_eq!(fired, vec![15]);
    }
}

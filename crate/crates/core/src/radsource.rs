//! Ground-truth ionizing-radiation events: Poisson arrivals, deposited
//! energies and per-detector detection outcomes.

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::seed::Seed;

/// A timestamped energy deposit on the chip.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiationEvent {
    #[serde(rename = "t_ns")]
    pub time_ns: f64,
    #[serde(rename = "energy_keV")]
    pub energy_kev: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrumFamily {
    /// Log-normal with log-median ln(median) and log-sigma √(2 ln(mean/median)).
    #[default]
    LogNormal,
}

/// Deposited-energy spectrum (keV), parameterised by its summary statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySpectrum {
    #[serde(default)]
    pub family: SpectrumFamily,
    pub median: f64,
    pub mean: f64,
    pub lower_cut: f64,
    pub upper_cut: f64,
}

impl Default for EnergySpectrum {
    fn default() -> Self {
        Self {
            family: SpectrumFamily::LogNormal,
            median: 260.0,
            mean: 340.0,
            lower_cut: 0.1,
            upper_cut: 12_000.0,
        }
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

impl EnergySpectrum {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower_cut > 0.0 && self.lower_cut < self.median && self.median < self.upper_cut) {
            return Err(Error::config("spectrum: need 0 < lower_cut < median < upper_cut"));
        }
        if self.mean < self.median {
            return Err(Error::config("spectrum: mean must not be below the median"));
        }
        Ok(())
    }

    fn log_mu(&self) -> f64 {
        self.median.ln()
    }

    fn log_sigma(&self) -> f64 {
        (2.0 * (self.mean / self.median).ln()).sqrt()
    }

    fn standardize(&self, x: f64) -> f64 {
        let s = self.log_sigma();
        if s == 0.0 {
            return if x < self.median { f64::NEG_INFINITY } else { f64::INFINITY };
        }
        (x.ln() - self.log_mu()) / s
    }

    /// Draw from the spectrum truncated to `[lo, hi] ∩ [lower_cut, upper_cut]`
    /// by inverse-CDF sampling.
    pub fn sample_between<R: Rng + ?Sized>(&self, lo: f64, hi: f64, rng: &mut R) -> f64 {
        let lo = lo.max(self.lower_cut);
        let hi = hi.min(self.upper_cut);
        if lo >= hi {
            return hi;
        }
        let (a, b) = (self.standardize(lo), self.standardize(hi));
        let n = std_normal();
        let u: f64 = rng.random();
        // Sample in the tail nearest zero for accuracy of the inverse CDF.
        let z = if a > 0.0 {
            let (fa, fb) = (n.cdf(-b), n.cdf(-a));
            -n.inverse_cdf(fa + u * (fb - fa))
        } else {
            let (fa, fb) = (n.cdf(a), n.cdf(b));
            n.inverse_cdf(fa + u * (fb - fa))
        };
        (self.log_mu() + self.log_sigma() * z).exp().clamp(lo, hi)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.sample_between(self.lower_cut, self.upper_cut, rng)
    }

    /// E[X | lo ≤ X ≤ hi] for the truncated spectrum, in closed form.
    pub fn conditional_mean(&self, lo: f64, hi: f64) -> f64 {
        let lo = lo.max(self.lower_cut);
        let hi = hi.min(self.upper_cut);
        if lo >= hi {
            return hi;
        }
        let s = self.log_sigma();
        let n = std_normal();
        let (a, b) = (self.standardize(lo), self.standardize(hi));
        let mass = n.cdf(b) - n.cdf(a);
        let first = n.cdf(b - s) - n.cdf(a - s);
        let mean = (self.log_mu() + 0.5 * s * s).exp() * first / mass;
        mean.clamp(lo, hi)
    }
}

/// Mean deposit of events at or above `threshold` keV.
pub fn conditional_mean_above(s: &EnergySpectrum, threshold: f64) -> f64 {
    s.conditional_mean(threshold, s.upper_cut)
}

/// A single seeded draw from the spectrum.
pub fn sample_deposit_energy(s: &EnergySpectrum, seed: Seed) -> f64 {
    s.sample(&mut seed.rng("deposit", 0))
}

/// `n` seeded draws from the spectrum truncated below at `threshold`.
pub fn sample_deposits(s: &EnergySpectrum, threshold: f64, n: usize, seed: Seed) -> Vec<f64> {
    let mut rng = seed.rng("deposits", 0);
    (0..n).map(|_| s.sample_between(threshold, s.upper_cut, &mut rng)).collect()
}

/// Homogeneous Poisson arrival times (ns) over `[0, duration_s)`.
pub fn sample_arrivals(rate_hz: f64, duration_s: f64, seed: Seed) -> Result<Vec<f64>> {
    if !(rate_hz >= 0.0 && rate_hz.is_finite()) {
        return Err(Error::domain("arrival rate must be non-negative"));
    }
    if !(duration_s > 0.0) {
        return Err(Error::domain("duration must be positive"));
    }
    if rate_hz == 0.0 {
        return Ok(Vec::new());
    }
    let gaps = Exp::new(rate_hz).expect("positive rate");
    let mut rng = seed.rng("arrivals", 0);
    let mut out = Vec::with_capacity((rate_hz * duration_s * 1.1) as usize + 8);
    let mut t = 0.0;
    loop {
        t += gaps.sample(&mut rng);
        if t >= duration_s {
            break;
        }
        out.push(t * 1e9);
    }
    Ok(out)
}

/// Arrivals with energies drawn from `spectrum` above `threshold` keV.
pub fn sample_events(
    rate_hz: f64,
    duration_s: f64,
    spectrum: &EnergySpectrum,
    threshold: f64,
    seed: Seed,
) -> Result<Vec<RadiationEvent>> {
    let times = sample_arrivals(rate_hz, duration_s, seed.child("times", 0))?;
    let energies = sample_deposits(spectrum, threshold, times.len(), seed.child("energies", 0));
    Ok(times
        .into_iter()
        .zip(energies)
        .map(|(time_ns, energy_kev)| RadiationEvent { time_ns, energy_kev })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSpec {
    pub name: String,
    pub efficiency: f64,
    /// Minimum deposit (keV) the detector can see at all.
    #[serde(default)]
    pub threshold: f64,
}

impl DetectorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::config(format!("detector {}: efficiency must lie in [0, 1]", self.name)));
        }
        if !(self.threshold >= 0.0) {
            return Err(Error::config(format!("detector {}: threshold must be non-negative", self.name)));
        }
        Ok(())
    }
}

fn detector_tag(name: &str) -> u64 {
    Seed(0).derive(name, 0)
}

/// Whether detector `d` registers event `e`: never below threshold, else a
/// Bernoulli draw keyed by the event, the detector name and the seed.
pub fn detect_outcome(e: &RadiationEvent, d: &DetectorSpec, seed: Seed) -> bool {
    if e.energy_kev < d.threshold {
        return false;
    }
    let key = e.time_ns.to_bits() ^ e.energy_kev.to_bits().rotate_left(17) ^ detector_tag(&d.name);
    seed.uniform("detect", key) < d.efficiency
}

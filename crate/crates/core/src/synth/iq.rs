use num_complex::{Complex32, Complex64};
use rand_distr::{Distribution, StandardNormal};

use super::{s21, ResonatorParams};
use crate::burst::{mkid_initial_count, BurstParams};
use crate::error::{Error, Result};
use crate::radsource::RadiationEvent;
use crate::seed::Seed;

/// Samples sharing one noise generator; fixed so that any range of the
/// stream can be regenerated independently of how it was chunked.
const NOISE_BLOCK: u64 = 4096;

/// Deposits older than this many slow recovery times no longer contribute.
const SIGNAL_HORIZON: f64 = 40.0;

/// Uniformly binned complex transmission samples.
#[derive(Debug, Clone, PartialEq)]
pub struct IqStream {
    pub start_time_ns: u64,
    pub bin_width_ns: u32,
    pub samples: Vec<Complex32>,
}

impl IqStream {
    pub fn new(start_time_ns: u64, bin_width_ns: u32, samples: Vec<Complex32>) -> Result<Self> {
        if bin_width_ns == 0 {
            return Err(Error::Format("bin width must be positive".into()));
        }
        if samples.iter().any(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::Format("IQ samples must be finite".into()));
        }
        Ok(Self { start_time_ns, bin_width_ns, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Start time of bin `i` (ns).
    pub fn time_of(&self, i: usize) -> f64 {
        self.start_time_ns as f64 + i as f64 * f64::from(self.bin_width_ns)
    }

    pub fn end_time_ns(&self) -> f64 {
        self.time_of(self.len())
    }
}

/// One decaying component passed through the resonator's single-pole
/// response, averaged over a bin.
#[derive(Debug, Clone, Copy)]
struct FilteredDecay {
    weight: f64,
    tau: f64,
    gain: f64,
}

impl FilteredDecay {
    fn new(weight: f64, tau: f64, response: f64) -> Self {
        // Nudge away from the degenerate τ == τ_r case of the closed form.
        let tau = if (tau - response).abs() < 1e-9 * tau { tau * (1.0 + 1e-6) } else { tau };
        Self { weight, tau, gain: tau / (tau - response) }
    }

    /// ∫ₐᵇ of `weight · gain · (e^{−t/τ} − e^{−t/τ_r})` dt.
    #[inline]
    fn integral(&self, a: f64, b: f64, response: f64) -> f64 {
        let decay = self.tau * ((-a / self.tau).exp() - (-b / self.tau).exp());
        let rise = response * ((-a / response).exp() - (-b / response).exp());
        self.weight * self.gain * (decay - rise)
    }
}

/// Deterministic MKID stream generator.
///
/// Sample `k` covers `[origin + k·bin, origin + (k+1)·bin)`. Each bin holds
/// the bin-averaged, response-filtered QP count mapped through [`s21`] at
/// the probe frequency, plus Gaussian noise keyed by the bin index.
#[derive(Debug, Clone)]
pub struct IqSynthesizer {
    events: Vec<RadiationEvent>,
    resonator: ResonatorParams,
    burst: BurstParams,
    film_gap_uev: f64,
    origin_ns: u64,
    bin_width_ns: u32,
    seed: Seed,
    components: [FilteredDecay; 2],
    response_ns: f64,
    horizon_ns: f64,
    baseline: Complex64,
}

impl IqSynthesizer {
    pub fn new(
        mut events: Vec<RadiationEvent>,
        resonator: ResonatorParams,
        burst: BurstParams,
        film_gap_uev: f64,
        bin_width_ns: u32,
        seed: Seed,
    ) -> Result<Self> {
        resonator.validate()?;
        burst.validate()?;
        if bin_width_ns == 0 {
            return Err(Error::config("bin width must be positive"));
        }
        if !(film_gap_uev > 0.0) {
            return Err(Error::config("film gap must be positive"));
        }
        events.sort_by(|a, b| a.time_ns.total_cmp(&b.time_ns));
        let response_ns = resonator.response_time_ns();
        let fast = burst.mkid_fast_recovery * 1e3;
        let slow = burst.mkid_slow_recovery * 1e6;
        let components = [
            FilteredDecay::new(1.0 - burst.mkid_slow_fraction, fast, response_ns),
            FilteredDecay::new(burst.mkid_slow_fraction, slow, response_ns),
        ];
        Ok(Self {
            events,
            baseline: s21(resonator.probe_hz(), &resonator, 0.0),
            resonator,
            burst,
            film_gap_uev,
            origin_ns: 0,
            bin_width_ns,
            seed,
            components,
            response_ns,
            horizon_ns: SIGNAL_HORIZON * slow.max(fast),
        })
    }

    /// Moves the time of sample 0.
    pub fn with_origin(mut self, origin_ns: u64) -> Self {
        self.origin_ns = origin_ns;
        self
    }

    pub fn bin_width_ns(&self) -> u32 {
        self.bin_width_ns
    }

    pub fn origin_ns(&self) -> u64 {
        self.origin_ns
    }

    pub fn events(&self) -> &[RadiationEvent] {
        &self.events
    }

    /// Noiseless transmission with no deposits.
    pub fn baseline(&self) -> Complex64 {
        self.baseline
    }

    /// Index of the sample containing time `t_ns`.
    pub fn index_of(&self, t_ns: f64) -> u64 {
        ((t_ns - self.origin_ns as f64) / f64::from(self.bin_width_ns)).floor().max(0.0) as u64
    }

    /// Bin-averaged, response-filtered film QP count over `[t0, t1)`.
    fn filtered_count(&self, t0: f64, t1: f64, active: &[RadiationEvent]) -> f64 {
        let width = t1 - t0;
        let mut total = 0.0;
        for e in active {
            if e.time_ns >= t1 {
                break;
            }
            let a = (t0 - e.time_ns).max(0.0);
            let b = t1 - e.time_ns;
            let n0 = mkid_initial_count(e.energy_kev, &self.burst, self.film_gap_uev);
            let resp: f64 = self.components.iter().map(|c| c.integral(a, b, self.response_ns)).sum();
            total += n0 * resp;
        }
        total / width
    }

    /// Resonance shift (Hz) averaged over sample `index`, noiseless.
    pub fn shift_at(&self, index: u64) -> f64 {
        let bw = f64::from(self.bin_width_ns);
        let t0 = self.origin_ns as f64 + index as f64 * bw;
        let active = self.active_events(t0, t0 + bw);
        -self.resonator.hz_per_qp * self.filtered_count(t0, t0 + bw, active)
    }

    fn active_events(&self, t0: f64, t1: f64) -> &[RadiationEvent] {
        let lo = self.events.partition_point(|e| e.time_ns < t0 - self.horizon_ns);
        let hi = self.events.partition_point(|e| e.time_ns < t1);
        &self.events[lo..hi]
    }

    /// Writes samples `first .. first + out.len()` into `out`.
    pub fn fill(&self, first: u64, out: &mut [Complex32]) {
        let bw = f64::from(self.bin_width_ns);
        let origin = self.origin_ns as f64;
        let sigma = self.resonator.noise_sigma;
        let probe = self.resonator.probe_hz();

        let end = first + out.len() as u64;
        let chunk_t0 = origin + first as f64 * bw;
        let chunk_t1 = origin + end as f64 * bw;
        let active = self.active_events(chunk_t0, chunk_t1);

        let mut noise = vec![0.0f64; 2 * NOISE_BLOCK as usize];
        let mut k = first;
        while k < end {
            let block = k / NOISE_BLOCK;
            let block_start = block * NOISE_BLOCK;
            let block_end = (block_start + NOISE_BLOCK).min(end);
            if sigma > 0.0 {
                let mut rng = self.seed.rng("iq-noise", block);
                let needed = 2 * (block_end - block_start) as usize;
                for v in noise[..needed].iter_mut() {
                    *v = StandardNormal.sample(&mut rng);
                }
            }
            for idx in k..block_end {
                let clean = if active.is_empty() {
                    self.baseline
                } else {
                    let t0 = origin + idx as f64 * bw;
                    let count = self.filtered_count(t0, t0 + bw, active);
                    if count == 0.0 {
                        self.baseline
                    } else {
                        s21(probe, &self.resonator, -self.resonator.hz_per_qp * count)
                    }
                };
                let j = 2 * (idx - block_start) as usize;
                let (ni, nq) = if sigma > 0.0 { (noise[j] * sigma, noise[j + 1] * sigma) } else { (0.0, 0.0) };
                out[(idx - first) as usize] = Complex32::new((clean.re + ni) as f32, (clean.im + nq) as f32);
            }
            k = block_end;
        }
    }

    /// Samples `first .. first + len` as a stream starting at bin `first`.
    pub fn segment(&self, first: u64, len: usize) -> IqStream {
        let mut samples = vec![Complex32::new(0.0, 0.0); len];
        self.fill(first, &mut samples);
        IqStream {
            start_time_ns: self.origin_ns + first * u64::from(self.bin_width_ns),
            bin_width_ns: self.bin_width_ns,
            samples,
        }
    }
}

/// Synthesizes `duration_s` of MKID stream starting at t = 0.
pub fn synth_iq_stream(
    events: &[RadiationEvent],
    resonator: &ResonatorParams,
    burst: &BurstParams,
    film_gap_uev: f64,
    bin_width_ns: u32,
    duration_s: f64,
    seed: Seed,
) -> Result<IqStream> {
    if !(duration_s > 0.0) {
        return Err(Error::domain("duration must be positive"));
    }
    let synth = IqSynthesizer::new(events.to_vec(), *resonator, *burst, film_gap_uev, bin_width_ns, seed)?;
    let len = (duration_s * 1e9 / f64::from(bin_width_ns)).round() as usize;
    Ok(synth.segment(0, len))
}

use serde::{Deserialize, Serialize};

use super::fit::binomial_sigma;
use super::{fit_points_reweighted, AlignedHistogram, Direction, FitPoint, RecoveryFit};
use crate::burst::{QpTrace, TraceKind};
use crate::error::{Error, Result};
use crate::materials::QpRateConversion;
use crate::stats::agresti_coull;

/// Junction QP density recovered from prep-1 survival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NqpExtraction {
    /// Valid bins only, at bin centres (µs).
    pub trace: QpTrace,
    /// 1σ per valid bin (µm⁻³).
    pub sigma: Vec<f64>,
    /// Indices of bins with no trials or P̂(1) = 0.
    pub invalid_bins: Vec<usize>,
    /// Trials per valid bin.
    pub trials: Vec<u64>,
    /// Unperturbed P(1) used for the inversion.
    pub baseline: f64,
    pub idle_us: f64,
    pub conversion: QpRateConversion,
}

impl NqpExtraction {
    /// P(1) the survival model predicts for density `n`.
    fn probability(&self, n: f64) -> f64 {
        self.baseline * (-self.conversion.gamma_qp(n.max(0.0)) * self.idle_us * 1e-6).exp()
    }
}

/// Inverts the survival model bin by bin:
/// Γ_qp = max(0, −ln(P̂(1)/baseline)/idle), n_qp = Γ_qp / c.
pub fn extract_nqp_trace(
    h: &AlignedHistogram,
    idle_us: f64,
    baseline: f64,
    conversion: QpRateConversion,
) -> Result<NqpExtraction> {
    if !(baseline > 0.0 && baseline <= 1.0) {
        return Err(Error::domain("baseline must lie in (0, 1]"));
    }
    if !(idle_us > 0.0) {
        return Err(Error::domain("idle time must be positive"));
    }
    let idle_s = idle_us * 1e-6;
    let (mut times, mut values, mut sigma, mut invalid_bins, mut trials) = (vec![], vec![], vec![], vec![], vec![]);
    for i in 0..h.len() {
        let Some(p) = h.fraction(i).filter(|&p| p > 0.0) else {
            invalid_bins.push(i);
            continue;
        };
        let gamma = (-(p / baseline).ln() / idle_s).max(0.0);
        let sigma_p = agresti_coull(h.successes[i], h.trials[i]).1;
        times.push(h.center(i));
        values.push(conversion.nqp_from_gamma(gamma));
        sigma.push(conversion.nqp_from_gamma(sigma_p / (p * idle_s)));
        trials.push(h.trials[i]);
    }
    Ok(NqpExtraction {
        trace: QpTrace::new(times, values, TraceKind::JunctionDensity)?,
        sigma,
        invalid_bins,
        trials,
        baseline,
        idle_us,
        conversion,
    })
}

/// Bump fit to an extracted trace; `amplitude` is the excess density at
/// Δt = 0 over the pre-event level and `time_constant` the trapping time.
///
/// After a first fit with the per-bin σ, each bin is reweighted by the
/// binomial error of the survival probability the fitted density implies,
/// propagated through the inversion.
pub fn fit_nqp_peak(x: &NqpExtraction) -> Result<RecoveryFit> {
    let points: Vec<FitPoint> = x
        .trace
        .times
        .iter()
        .zip(&x.trace.values)
        .zip(&x.sigma)
        .map(|((&x, &y), &sigma)| FitPoint { x, y, sigma })
        .collect();
    let idle_s = x.idle_us * 1e-6;
    fit_points_reweighted(&points, Direction::Bump, |i, n| {
        let p = x.probability(n);
        x.conversion.nqp_from_gamma(binomial_sigma(p, x.trials[i]) / (p.max(f64::MIN_POSITIVE) * idle_s))
    })
}

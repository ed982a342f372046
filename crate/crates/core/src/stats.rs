//! Small statistics toolbox: robust scale, binomial errors and
//! goodness-of-fit tests used by the trigger and the analyses.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Consistency constant turning the median absolute deviation into a
/// Gaussian standard deviation.
pub const MAD_TO_SIGMA: f64 = 1.4826;

/// Median of `values`; reorders the slice. Returns NaN when empty.
pub fn median_in_place(values: &mut [f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    let mid = n / 2;
    let (lo, m, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *m;
    if n % 2 == 1 {
        upper
    } else {
        let lower = lo.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower + upper)
    }
}

/// Median and MAD-based sigma of `values`; reorders the slice.
pub fn robust_location_scale(values: &mut [f64]) -> (f64, f64) {
    let med = median_in_place(values);
    for v in values.iter_mut() {
        *v = (*v - med).abs();
    }
    let mad = median_in_place(values);
    (med, MAD_TO_SIGMA * mad)
}

/// Agresti–Coull adjusted proportion and its standard error.
///
/// Stays strictly positive for bins with zero or all successes.
pub fn agresti_coull(successes: u64, trials: u64) -> (f64, f64) {
    const Z2: f64 = 4.0; // z = 2, ~95 %
    let n = trials as f64 + Z2;
    let p = (successes as f64 + Z2 / 2.0) / n;
    (p, (p * (1.0 - p) / n).sqrt())
}

/// Survival function of the Kolmogorov distribution, P(K > lambda).
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.18 {
        // Jacobi-theta form converges fast for small arguments.
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        let y = -pi2 / (8.0 * lambda * lambda);
        let sum: f64 = (0..8)
            .map(|k| {
                let m = (2 * k + 1) as f64;
                (m * m * y).exp()
            })
            .sum();
        (1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        let mut sign = 1.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += sign * term;
            if term < 1e-17 {
                break;
            }
            sign = -sign;
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// Outcome of a one-sample Kolmogorov–Smirnov test.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample KS test of `sample` against the continuous CDF `cdf`.
///
/// The p-value uses the asymptotic Kolmogorov distribution with Stephens'
/// small-sample correction. Returns `None` for an empty sample.
pub fn ks_one_sample<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> Option<KsResult> {
    let mut xs: Vec<f64> = sample.iter().copied().filter(|x| x.is_finite()).collect();
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let above = (i + 1) as f64 / n - f;
        let below = f - i as f64 / n;
        d = d.max(above).max(below);
    }
    let sn = n.sqrt();
    let p_value = kolmogorov_survival((sn + 0.12 + 0.11 / sn) * d);
    Some(KsResult { statistic: d, p_value, n: xs.len() })
}

/// Pearson chi-square test that `values` in [0, 1] are uniform, using
/// `bins` equal-width bins. Returns the p-value.
pub fn chi_square_uniformity(values: &[f64], bins: usize) -> f64 {
    assert!(bins >= 2, "need at least two bins");
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = ((v * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let expected = values.len() as f64 / bins as f64;
    let chi2: f64 = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    let dist = ChiSquared::new((bins - 1) as f64).expect("positive dof");
    1.0 - dist.cdf(chi2)
}

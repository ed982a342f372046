use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pairwise conditional detection probabilities between channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMatrix {
    pub channels: Vec<String>,
    pub counts: Vec<u64>,
    /// `coincidences[i][j]`: events of channel j with an event of i nearby.
    pub coincidences: Vec<Vec<u64>>,
    /// P(i|j); `None` where channel j has no events.
    pub probability: Vec<Vec<Option<f64>>>,
    /// Chip-wide efficiency estimate per channel: mean of P(i|j), j ≠ i.
    pub efficiency: Vec<Option<f64>>,
    /// Binomial 1σ of each estimate (mean of the pairwise σ).
    pub efficiency_sigma: Vec<Option<f64>>,
    /// Channels with no events; their columns are undefined.
    pub undefined: Vec<String>,
    pub window_us: f64,
}

fn has_within(sorted: &[f64], t: f64, w: f64) -> bool {
    let k = sorted.partition_point(|&x| x < t - w);
    sorted.get(k).is_some_and(|&x| x <= t + w)
}

/// Builds P(i|j) = coincident(i, j) / count(j) from per-channel event
/// times (ns). Under the chip-wide model every off-diagonal P(i|j) estimates
/// channel i's efficiency.
pub fn conditional_matrix(channels: &[(String, Vec<f64>)], window_us: f64) -> Result<ConditionalMatrix> {
    if channels.len() < 2 {
        return Err(Error::domain("need at least two channels"));
    }
    if !(window_us > 0.0) {
        return Err(Error::domain("coincidence window must be positive"));
    }
    let w = window_us * 1e3;
    let sorted: Vec<Vec<f64>> = channels
        .iter()
        .map(|(_, t)| {
            let mut t = t.clone();
            t.sort_by(f64::total_cmp);
            t
        })
        .collect();
    let n = channels.len();
    let counts: Vec<u64> = sorted.iter().map(|t| t.len() as u64).collect();
    let mut coincidences = vec![vec![0u64; n]; n];
    let mut probability = vec![vec![None; n]; n];
    for i in 0..n {
        for j in 0..n {
            let c = if i == j { counts[j] } else { sorted[j].iter().filter(|&&t| has_within(&sorted[i], t, w)).count() as u64 };
            coincidences[i][j] = c;
            if counts[j] > 0 {
                probability[i][j] = Some(c as f64 / counts[j] as f64);
            }
        }
    }
    let mut efficiency = vec![None; n];
    let mut efficiency_sigma = vec![None; n];
    for i in 0..n {
        let defined: Vec<(f64, u64)> =
            (0..n).filter(|&j| j != i).filter_map(|j| probability[i][j].map(|p| (p, counts[j]))).collect();
        if defined.is_empty() {
            continue;
        }
        let k = defined.len() as f64;
        let mean = defined.iter().map(|d| d.0).sum::<f64>() / k;
        efficiency[i] = Some(mean);
        efficiency_sigma[i] = Some(defined.iter().map(|&(_, m)| (mean * (1.0 - mean) / m as f64).sqrt()).sum::<f64>() / k);
    }
    let undefined = channels.iter().zip(&counts).filter(|(_, &c)| c == 0).map(|((name, _), _)| name.clone()).collect();
    Ok(ConditionalMatrix {
        channels: channels.iter().map(|(c, _)| c.clone()).collect(),
        counts,
        coincidences,
        probability,
        efficiency,
        efficiency_sigma,
        undefined,
        window_us,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::Seed;

    #[test]
    fn identical_streams_give_all_ones() {
        let t: Vec<f64> = (0..50).map(|i| f64::from(i) * 1e9).collect();
        let m = conditional_matrix(&[("a".into(), t.clone()), ("b".into(), t.clone()), ("c".into(), t)], 100.0).unwrap();
        for row in &m.probability {
            assert!(row.iter().all(|p| *p == Some(1.0)));
        }
        assert_eq!(m.efficiency, vec![Some(1.0); 3]);
    }

    #[test]
    fn empty_channel_is_flagged() {
        let m = conditional_matrix(&[("a".into(), vec![1.0, 2e9]), ("b".into(), vec![])], 100.0).unwrap();
        assert_eq!(m.undefined, vec!["b".to_string()]);
        assert_eq!(m.probability[0][1], None);
        assert_eq!(m.efficiency[0], None);
        assert_eq!(m.probability[1][0], Some(0.0));
    }

    #[test]
    fn single_channel_rejected() {
        assert!(conditional_matrix(&[("a".into(), vec![])], 100.0).is_err());
    }

    #[test]
    fn independent_streams_match_chance_rate() {
        // Two Poisson streams, 1 event per 10 ms over 1000 s.
        let draw = |tag: &str| -> Vec<f64> {
            let mut t = 0.0;
            let mut v = Vec::new();
            let mut i = 0;
            while t < 1e12 {
                t += -(1.0 - Seed(4).uniform(tag, i)).ln() * 1e7;
                v.push(t);
                i += 1;
            }
            v
        };
        let m = conditional_matrix(&[("a".into(), draw("a")), ("b".into(), draw("b"))], 100.0).unwrap();
        // P(any within ±100 µs) = 1 − exp(−2·100 µs / 10 ms) ≈ 0.0198.
        let expected = 1.0 - (-0.02f64).exp();
        let p = m.probability[0][1].unwrap();
        assert!((p - expected).abs() < 4.0 * (expected / 1e5).sqrt(), "{p}");
    }

    #[test]
    fn diagonal_is_one() {
        let m = conditional_matrix(&[("a".into(), vec![5.0, 1e9]), ("b".into(), vec![7e5])], 100.0).unwrap();
        assert_eq!(m.probability[0][0], Some(1.0));
        assert_eq!(m.probability[1][1], Some(1.0));
    }
}

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{Prep, QubitRecord};

/// Qubit outcomes tallied against time since the nearest radiation event.
///
/// Bin `i` covers `[start + i·w, start + (i+1)·w)` µs of Δt = t_record − t_event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedHistogram {
    pub start_us: f64,
    pub bin_width_us: f64,
    pub trials: Vec<u64>,
    pub successes: Vec<u64>,
    /// `None` when no record fell into the window.
    pub prep: Option<Prep>,
}

impl AlignedHistogram {
    pub fn empty(before_us: f64, after_us: f64, bin_width_us: f64) -> Result<Self> {
        if !(bin_width_us > 0.0 && before_us >= 0.0 && after_us > 0.0) {
            return Err(Error::domain("alignment window and bin width must be positive"));
        }
        let n = ((before_us + after_us) / bin_width_us).ceil() as usize;
        Ok(Self { start_us: -before_us, bin_width_us, trials: vec![0; n], successes: vec![0; n], prep: None })
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn center(&self, i: usize) -> f64 {
        self.start_us + (i as f64 + 0.5) * self.bin_width_us
    }

    pub fn end_us(&self) -> f64 {
        self.start_us + self.len() as f64 * self.bin_width_us
    }

    pub fn total_trials(&self) -> u64 {
        self.trials.iter().sum()
    }

    /// Observed success fraction per bin; `None` for empty bins.
    pub fn fraction(&self, i: usize) -> Option<f64> {
        (self.trials[i] > 0).then(|| self.successes[i] as f64 / self.trials[i] as f64)
    }

    /// CSV with header `dt_us,trials,successes,p`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["dt_us", "trials", "successes", "p"])?;
        for i in 0..self.len() {
            let p = self.fraction(i).map_or(String::new(), |p| p.to_string());
            out.write_record([self.center(i).to_string(), self.trials[i].to_string(), self.successes[i].to_string(), p])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Tallies every record within `(before_us, after_us)` of every event.
///
/// `records` and `event_times_ns` must be time-sorted; a record near two
/// events counts once for each.
pub fn align_and_tally(
    records: &[QubitRecord],
    event_times_ns: &[f64],
    before_us: f64,
    after_us: f64,
    bin_width_us: f64,
) -> Result<AlignedHistogram> {
    let mut h = AlignedHistogram::empty(before_us, after_us, bin_width_us)?;
    if records.windows(2).any(|w| w[0].time_ns > w[1].time_ns) || event_times_ns.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("records and events must be time-sorted"));
    }
    let end = h.end_us();
    for &te in event_times_ns {
        let lo = records.partition_point(|r| r.time_ns < te + h.start_us * 1e3);
        for r in &records[lo..] {
            let dt = (r.time_ns - te) * 1e-3;
            if dt >= end {
                break;
            }
            let bin = ((dt - h.start_us) / bin_width_us).floor();
            if bin < 0.0 {
                continue;
            }
            let bin = bin as usize;
            if bin >= h.len() {
                break;
            }
            match h.prep {
                None => h.prep = Some(r.prep),
                Some(p) if p != r.prep => return Err(Error::domain("records mix prep-0 and prep-1 cycles")),
                Some(_) => {}
            }
            h.trials[bin] += 1;
            h.successes[bin] += u64::from(r.outcome);
        }
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(t_ns: f64, outcome: u8) -> QubitRecord {
        QubitRecord { time_ns: t_ns, prep: Prep::Excited, outcome }
    }

    #[test]
    fn no_events_gives_zero_histogram() {
        let h = align_and_tally(&[rec(0.0, 1)], &[], 200.0, 200.0, 1.0).unwrap();
        assert_eq!(h.len(), 400);
        assert_eq!(h.total_trials(), 0);
        assert_eq!(h.prep, None);
    }

    #[test]
    fn single_record_lands_in_its_bin() {
        let h = align_and_tally(&[rec(1e6 + 5_000.0, 1)], &[1e6], 200.0, 200.0, 1.0).unwrap();
        let i = h.trials.iter().position(|&t| t > 0).unwrap();
        assert_eq!(h.total_trials(), 1);
        assert_eq!(h.center(i), 5.5);
        assert_eq!(h.successes[i], 1);
    }

    #[test]
    fn mixed_prep_rejected() {
        let mut r = vec![rec(0.0, 1), rec(1000.0, 0)];
        r[1].prep = Prep::Ground;
        assert!(align_and_tally(&r, &[500.0], 10.0, 10.0, 1.0).is_err());
    }

    #[test]
    fn full_size_trials_per_bin() {
        // 3731 events, 52.1 µs cycle, ±200 µs window.
        let period = 52_100.0;
        let events: Vec<f64> = (0..3731).map(|i| 1e9 * f64::from(i) + 0.37 * period * f64::from(i % 97)).collect();
        let records: Vec<_> = events
            .iter()
            .flat_map(|&e| {
                let k0 = ((e - 300_000.0) / period).ceil() as i64;
                (k0..k0 + 12).map(move |k| rec(k as f64 * period, 1))
            })
            .collect();
        let h = align_and_tally(&records, &events, 200.0, 200.0, 1.0).unwrap();
        let mean = h.total_trials() as f64 / h.len() as f64;
        assert!((mean - 3731.0 / 52.1).abs() < 2.0, "{mean}");
    }

    proptest! {
        #[test]
        fn counts_are_conserved(
            mut rec_t in proptest::collection::vec(0.0f64..1e7, 0..300),
            mut ev_t in proptest::collection::vec(0.0f64..1e7, 0..20),
            shift in -1e6f64..1e6,
        ) {
            rec_t.sort_by(f64::total_cmp);
            ev_t.sort_by(f64::total_cmp);
            let records: Vec<_> = rec_t.iter().map(|&t| rec(t, 1)).collect();
            let h = align_and_tally(&records, &ev_t, 200.0, 300.0, 1.0).unwrap();
            let pairs = ev_t
                .iter()
                .map(|&e| rec_t.iter().filter(|&&t| {
                    let d = (t - e) * 1e-3;
                    (-200.0..300.0).contains(&d)
                }).count() as u64)
                .sum::<u64>();
            prop_assert_eq!(h.total_trials(), pairs);
            prop_assert!(h.trials.iter().zip(&h.successes).all(|(t, s)| s <= t));

            // Translating the whole time axis changes nothing.
            let moved: Vec<_> = rec_t.iter().map(|&t| rec(t + shift.round(), 1)).collect();
            let ev_moved: Vec<_> = ev_t.iter().map(|&t| t + shift.round()).collect();
            let h2 = align_and_tally(&moved, &ev_moved, 200.0, 300.0, 1.0).unwrap();
            prop_assert_eq!(h2.total_trials(), h.total_trials());
        }
    }
}

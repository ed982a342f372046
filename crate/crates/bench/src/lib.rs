//! Benchmark fixtures shared by the criterion targets.

use qpburst_core::radsource::RadiationEvent;

/// One event of `energy_kev` every `spacing_ms`, starting at 1 ms.
pub fn event_train(n: usize, spacing_ms: f64, energy_kev: f64) -> Vec<RadiationEvent> {
    (0..n)
        .map(|i| RadiationEvent {
            time_ns: (1.0 + i as f64 * spacing_ms) * 1e6,
            energy_kev,
        })
        .collect()
}

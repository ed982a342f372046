use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analyze::CorrelationOptions;
use crate::burst::BurstParams;
use crate::error::{Error, Result};
use crate::materials::MaterialDb;
use crate::radsource::{DetectorSpec, EnergySpectrum};
use crate::seed::Seed;
use crate::synth::{Prep, QubitCycleParams, ResonatorParams};
use crate::trigger::TriggerConfig;

pub const SCHEMA_VERSION: u32 = 1;

/// Radiation source: rate of deposits at or above `threshold_kev`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SourceConfig {
    pub rate_hz: f64,
    pub threshold_kev: f64,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self { rate_hz: 1.0 / 131.0, threshold_kev: 40.0 }
    }
}

/// Which stream is synthesized around each ground-truth event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GateConfig {
    /// MKID samples kept before each event (ms); covers the trigger's noise
    /// estimate warm-up.
    pub mkid_pre_ms: f64,
    /// MKID samples kept after each event (ms).
    pub mkid_post_ms: f64,
    /// Extra qubit cycles kept beyond the alignment window (µs).
    pub qubit_margin_us: f64,
}

impl Default for GateConfig {
    fn default() -> Self {
        Self { mkid_pre_ms: 6.0, mkid_post_ms: 1.0, qubit_margin_us: 50.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlignOn {
    /// Offline-detector timestamps merged across channels.
    Detected,
    /// Ground-truth event times.
    Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisOptions {
    pub before_us: f64,
    pub after_us: f64,
    pub bin_width_us: f64,
    pub coincidence_window_us: f64,
    pub align_on: AlignOn,
    pub k_sigma: f64,
    /// Change-point window on each side, in P(1) bins.
    pub change_window_bins: usize,
    /// Zero-count window for the correlation null (s).
    pub exclusion_window_s: f64,
    pub correlation: CorrelationOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            before_us: 200.0,
            after_us: 200.0,
            bin_width_us: 1.0,
            coincidence_window_us: 100.0,
            align_on: AlignOn::Detected,
            k_sigma: 5.0,
            change_window_bins: 10,
            exclusion_window_s: 0.126,
            correlation: CorrelationOptions::default(),
        }
    }
}

/// TLS scrambling jumps in a slowly sampled P(1) trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TlsConfig {
    /// Poisson rate of scrambling events; 0 disables the trace.
    pub rate_per_hour: f64,
    /// Size of each jump; signs alternate so P(1) stays bounded.
    pub magnitude: f64,
    pub baseline: f64,
    pub bin_ms: f64,
}

impl Default for TlsConfig {
    fn default() -> Self {
        Self { rate_per_hour: 371.0 / 430.0, magnitude: 0.2, baseline: 0.5, bin_ms: 100.0 }
    }
}

fn default_detectors() -> Vec<DetectorSpec> {
    [("mkid1", 0.90), ("mkid2", 0.89), ("mkid3", 0.50)]
        .into_iter()
        .map(|(name, efficiency)| DetectorSpec { name: name.into(), efficiency, threshold: 0.0 })
        .collect()
}

fn default_film() -> String {
    "grAl".into()
}

fn default_prep() -> Prep {
    Prep::Excited
}

/// Everything a run needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: Seed,
    /// Logical duration of the run (s).
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// State prepared at the start of each qubit cycle (0 or 1).
    #[serde(default = "default_prep")]
    pub qubit_prep: Prep,
    /// Material of the MKID film, looked up in the material database.
    #[serde(default = "default_film")]
    pub mkid_film: String,
    #[serde(default)]
    pub source: SourceConfig,
    #[serde(default)]
    pub spectrum: EnergySpectrum,
    #[serde(default = "default_detectors")]
    pub detectors: Vec<DetectorSpec>,
    #[serde(default)]
    pub burst: BurstParams,
    #[serde(default)]
    pub resonator: ResonatorParams,
    #[serde(default)]
    pub qubit: QubitCycleParams,
    #[serde(default)]
    pub trigger: TriggerConfig,
    #[serde(default)]
    pub gate: GateConfig,
    #[serde(default)]
    pub analysis: AnalysisOptions,
    #[serde(default)]
    pub tls: TlsConfig,
}

impl RunConfig {
    /// Defaults throughout, with the given seed and duration.
    pub fn new(seed: Seed, duration_s: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            duration_s,
            output_dir: None,
            qubit_prep: default_prep(),
            mkid_film: default_film(),
            source: SourceConfig::default(),
            spectrum: EnergySpectrum::default(),
            detectors: default_detectors(),
            burst: BurstParams::default(),
            resonator: ResonatorParams::default(),
            qubit: QubitCycleParams::default(),
            trigger: TriggerConfig::default(),
            gate: GateConfig::default(),
            analysis: AnalysisOptions::default(),
            tls: TlsConfig::default(),
        }
    }

    /// Parses and validates.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// MKID film gap (µeV) from the default material database.
    pub fn film_gap(&self) -> Result<f64> {
        let db = MaterialDb::defaults();
        let m = db.get(&self.mkid_film).map_err(|e| Error::config(format!("mkid_film: {e}")))?;
        if !(m.gap > 0.0) {
            return Err(Error::config(format!("mkid_film: {} is not a superconductor", m.name)));
        }
        Ok(m.gap)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return Err(Error::config("duration_s must be positive"));
        }
        if !(self.source.rate_hz >= 0.0 && self.source.rate_hz.is_finite()) {
            return Err(Error::config("source.rate_hz must be non-negative"));
        }
        if !(self.source.threshold_kev >= self.spectrum.lower_cut && self.source.threshold_kev < self.spectrum.upper_cut) {
            return Err(Error::config("source.threshold_kev must lie within the spectrum cuts"));
        }
        self.spectrum.validate()?;
        if self.detectors.is_empty() {
            return Err(Error::config("detectors: at least one MKID channel is required"));
        }
        for (i, d) in self.detectors.iter().enumerate() {
            d.validate()?;
            let ok = !d.name.is_empty() && d.name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
            if !ok {
                return Err(Error::config(format!("detectors[{i}].name must be non-empty [A-Za-z0-9_-]")));
            }
            if self.detectors[..i].iter().any(|o| o.name == d.name) {
                return Err(Error::config(format!("detectors[{i}].name duplicates {:?}", d.name)));
            }
        }
        self.burst.validate()?;
        self.resonator.validate()?;
        self.qubit.validate()?;
        self.trigger.validate()?;
        self.film_gap()?;
        let g = &self.gate;
        if !(g.mkid_pre_ms > 0.0 && g.mkid_post_ms > 0.0 && g.qubit_margin_us >= 0.0) {
            return Err(Error::config("gate: windows must be positive"));
        }
        let a = &self.analysis;
        if !(a.before_us > 0.0 && a.after_us > 0.0 && a.bin_width_us > 0.0) {
            return Err(Error::config("analysis: window and bin width must be positive"));
        }
        if !(a.coincidence_window_us > 0.0 && a.k_sigma > 0.0 && a.change_window_bins >= 1 && a.exclusion_window_s >= 0.0) {
            return Err(Error::config("analysis: coincidence window, k_sigma and change window must be positive"));
        }
        let t = &self.tls;
        if !(t.rate_per_hour >= 0.0 && t.bin_ms > 0.0) {
            return Err(Error::config("tls: rate must be non-negative and bin_ms positive"));
        }
        if !(t.baseline >= 0.0 && t.baseline + t.magnitude.abs() <= 1.0 && t.baseline - t.magnitude.abs() >= 0.0) {
            return Err(Error::config("tls: baseline ± magnitude must stay within [0, 1]"));
        }
        Ok(())
    }
}

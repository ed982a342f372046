use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{AlignOn, RunConfig};
use super::gated::{
    analyze_recovery, channel_events, channel_synth, detect_segment, gate_ranges, gated_qubit_records,
    merge_detections, qubit_synth, truth_events,
};
use super::physics::{physics_table, PhysicsQuery};
use crate::analyze::{
    conditional_matrix, correlation_report, detect_tls_scrambles, ConditionalMatrix, CorrelationReport, RecoveryFit,
    ScrambleEvent,
};
use crate::error::{Error, Result};
use crate::materials::MaterialDb;
use crate::radsource::sample_arrivals;
use crate::synth::{
    read_qubit_records, synth_p1_series, write_qpiq, write_qubit_records, Prep, QpiqReader, TimeSeries, TlsJumps,
};
use crate::trigger::{read_trigger_events, write_trigger_events, LiveTrigger, TriggerEvent};

pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Simulate,
    Detect,
    Analyze,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Simulate, Stage::Detect, Stage::Analyze, Stage::Report];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Simulate => "simulate",
            Stage::Detect => "detect",
            Stage::Analyze => "analyze",
            Stage::Report => "report",
        }
    }

    fn previous(self) -> Option<Stage> {
        let i = Self::ALL.iter().position(|&s| s == self)?;
        i.checked_sub(1).map(|j| Self::ALL[j])
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::config(format!("unknown stage `{s}` (simulate, detect, analyze, report)")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub outputs: Vec<OutputFile>,
    pub wall_s: f64,
}

/// Provenance of a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub toolkit_version: String,
    pub seed: u64,
    pub config_file: String,
    /// SHA-256 of the stored config file's bytes.
    pub config_sha256: String,
    pub stages: Vec<StageRecord>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        let f = File::open(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }

    fn save(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }

    pub fn stage(&self, s: Stage) -> Option<&StageRecord> {
        self.stages.iter().find(|r| r.stage == s)
    }

    fn record(&mut self, rec: StageRecord) {
        self.stages.retain(|r| r.stage != rec.stage);
        self.stages.push(rec);
        self.stages.sort_by_key(|r| Stage::ALL.iter().position(|&s| s == r.stage));
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn describe(dir: &Path, name: &str) -> Result<OutputFile> {
    let bytes = fs::read(dir.join(name))?;
    Ok(OutputFile { path: name.to_string(), sha256: sha256_hex(&bytes), bytes: bytes.len() as u64 })
}

/// Writes the config and returns the manifest to extend: the existing one
/// when it was produced by the same config, a fresh one otherwise.
fn prepare(cfg: &RunConfig, dir: &Path, keep_existing: bool) -> Result<RunManifest> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let text = cfg.to_toml()?;
    let digest = sha256_hex(text.as_bytes());
    if keep_existing && dir.join(MANIFEST_FILE).exists() {
        let m = RunManifest::load(dir)?;
        if m.config_sha256 != digest {
            return Err(Error::config(format!(
                "{} holds a run made with a different config; use a fresh output directory",
                dir.display()
            )));
        }
        return Ok(m);
    }
    fs::write(dir.join(CONFIG_FILE), &text)?;
    Ok(RunManifest {
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed.0,
        config_file: CONFIG_FILE.to_string(),
        config_sha256: digest,
        stages: Vec::new(),
    })
}

fn execute(cfg: &RunConfig, dir: &Path, stage: Stage, manifest: &mut RunManifest) -> Result<()> {
    let start = Instant::now();
    let result = match stage {
        Stage::Simulate => simulate(cfg, dir),
        Stage::Detect => detect(cfg, dir),
        Stage::Analyze => analyze(cfg, dir),
        Stage::Report => report(cfg, dir),
    }
    .and_then(|names| names.iter().map(|n| describe(dir, n)).collect::<Result<Vec<_>>>());
    let wall_s = start.elapsed().as_secs_f64();
    let (status, error, outputs, ret) = match result {
        Ok(outputs) => (StageStatus::Ok, None, outputs, Ok(())),
        Err(e) => (StageStatus::Failed, Some(e.to_string()), Vec::new(), Err(e)),
    };
    log::info!("stage {stage}: {status:?} in {wall_s:.2} s");
    manifest.record(StageRecord { stage, status, error, outputs, wall_s });
    manifest.save(dir)?;
    ret
}

/// Runs every stage into `dir`, stopping at the first failure (which is
/// recorded in the manifest before the error is returned).
pub fn run_pipeline(cfg: &RunConfig, dir: &Path) -> Result<RunManifest> {
    let mut manifest = prepare(cfg, dir, false)?;
    for stage in Stage::ALL {
        execute(cfg, dir, stage, &mut manifest)?;
    }
    Ok(manifest)
}

/// Runs one stage; earlier stages must already have succeeded in `dir`
/// with the same config.
pub fn run_stage(cfg: &RunConfig, dir: &Path, stage: Stage) -> Result<RunManifest> {
    let mut manifest = prepare(cfg, dir, true)?;
    if let Some(prev) = stage.previous() {
        if manifest.stage(prev).is_none_or(|r| r.status != StageStatus::Ok) {
            return Err(Error::config(format!("stage {stage} needs a successful {prev} stage in {}", dir.display())));
        }
    }
    execute(cfg, dir, stage, &mut manifest)?;
    Ok(manifest)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn open(dir: &Path, name: &str) -> Result<BufReader<File>> {
    File::open(dir.join(name))
        .map(BufReader::new)
        .map_err(|e| Error::Format(format!("{name}: {e}")))
}

fn tls_jumps(cfg: &RunConfig) -> Result<TlsJumps> {
    let times = sample_arrivals(cfg.tls.rate_per_hour / 3600.0, cfg.duration_s, cfg.seed.child("tls", 0))?;
    let mags = (0..times.len()).map(|i| if i % 2 == 0 { cfg.tls.magnitude } else { -cfg.tls.magnitude }).collect();
    TlsJumps::new(times, mags)
}

fn simulate(cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let mut outputs = Vec::new();
    let truth = truth_events(cfg, cfg.duration_s)?;
    let times: Vec<f64> = truth.iter().map(|e| e.time_ns).collect();
    log::info!("simulating {} events over {} s", truth.len(), cfg.duration_s);

    let seen: Vec<Vec<bool>> = (0..cfg.detectors.len())
        .map(|c| {
            let ch = channel_events(cfg, c, &truth);
            truth.iter().map(|e| ch.iter().any(|x| x == e)).collect()
        })
        .collect();
    let mut w = csv::Writer::from_writer(create(dir, "events.csv")?);
    let mut header = vec!["t_ns".to_string(), "energy_keV".to_string()];
    header.extend(cfg.detectors.iter().map(|d| d.name.clone()));
    w.write_record(&header)?;
    for (i, e) in truth.iter().enumerate() {
        let mut row = vec![e.time_ns.to_string(), e.energy_kev.to_string()];
        row.extend(seen.iter().map(|s| u8::from(s[i]).to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    outputs.push("events.csv".to_string());

    let gates = gate_ranges(cfg, &times);
    for (c, d) in cfg.detectors.iter().enumerate() {
        let synth = channel_synth(cfg, c, channel_events(cfg, c, &truth))?;
        let name = format!("mkid_{}.qpiq", d.name);
        let mut w = create(dir, &name)?;
        for &(first, len) in &gates {
            write_qpiq(&mut w, &synth.segment(first, len))?;
        }
        w.flush()?;
        outputs.push(name);
    }

    let synth = qubit_synth(cfg, &truth, cfg.qubit_prep)?;
    write_qubit_records(create(dir, "qubit.csv")?, &gated_qubit_records(cfg, &synth, &times)?)?;
    outputs.push("qubit.csv".to_string());

    if cfg.tls.rate_per_hour > 0.0 {
        let jumps = tls_jumps(cfg)?;
        let mut w = csv::Writer::from_writer(create(dir, "tls_truth.csv")?);
        w.write_record(["t_ns", "delta"])?;
        for (t, m) in jumps.times_ns.iter().zip(&jumps.magnitudes) {
            w.write_record([t.to_string(), m.to_string()])?;
        }
        w.flush()?;
        outputs.push("tls_truth.csv".to_string());

        let series = synth_p1_series(
            cfg.duration_s,
            cfg.tls.bin_ms,
            &cfg.qubit,
            cfg.tls.baseline,
            &jumps,
            cfg.seed.child("p1-series", 0),
        )?;
        let mut w = csv::Writer::from_writer(create(dir, "p1_series.csv")?);
        w.write_record(["t_ns", "p1"])?;
        for (i, v) in series.values.iter().enumerate() {
            w.write_record([series.time_of(i).to_string(), v.to_string()])?;
        }
        w.flush()?;
        outputs.push("p1_series.csv".to_string());
    }
    Ok(outputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub name: String,
    pub segments: u64,
    pub samples: u64,
    pub detections: u64,
    /// Live-trigger windows that fired.
    pub live_windows: u64,
    /// Segments in which the live trigger fired at least once.
    pub live_segments: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectSummary {
    pub channels: Vec<ChannelSummary>,
    /// Detections after merging channels within the coincidence window.
    pub merged_events: u64,
}

fn detect(cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let mut all: Vec<TriggerEvent> = Vec::new();
    let mut channels = Vec::new();
    for d in &cfg.detectors {
        let name = format!("mkid_{}.qpiq", d.name);
        let mut reader = QpiqReader::new(open(dir, &name)?);
        let mut s = ChannelSummary {
            name: d.name.clone(),
            segments: 0,
            samples: 0,
            detections: 0,
            live_windows: 0,
            live_segments: 0,
        };
        while reader.next_header()?.is_some() {
            let stream = reader.read_stream()?;
            let found = detect_segment(cfg, &stream, &d.name)?;
            let mut live = LiveTrigger::new(cfg.trigger.clone())?;
            let fired = live.push(&stream.samples).len() as u64;
            s.segments += 1;
            s.samples += stream.len() as u64;
            s.detections += found.len() as u64;
            s.live_windows += fired;
            s.live_segments += u64::from(fired > 0);
            all.extend(found);
        }
        channels.push(s);
    }
    all.sort_by(|a, b| a.time_ns.total_cmp(&b.time_ns).then_with(|| a.channel.cmp(&b.channel)));
    write_trigger_events(create(dir, "detected.csv")?, &all)?;
    let merged_events = merge_detections(all, cfg.analysis.coincidence_window_us * 1e3).len() as u64;
    write_json(dir, "detect_summary.json", &DetectSummary { channels, merged_events })?;
    Ok(vec!["detected.csv".into(), "detect_summary.json".into()])
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Condensed results of the analyze stage (`analysis.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisSummary {
    pub align_on: AlignOn,
    pub n_events: usize,
    pub prep: Option<Prep>,
    pub recovery_fit: Option<RecoveryFit>,
    pub recovery_error: Option<String>,
    /// Bump fit to the extracted junction QP density (prep 1 only).
    pub nqp_fit: Option<RecoveryFit>,
    pub nqp_error: Option<String>,
    pub nqp_invalid_bins: usize,
    pub conditional: Option<ConditionalMatrix>,
    pub conditional_error: Option<String>,
    pub scrambles: Vec<ScrambleEvent>,
    pub correlation: Option<CorrelationReport>,
    pub correlation_error: Option<String>,
}

fn read_column(dir: &Path, name: &str, column: &str) -> Result<Vec<f64>> {
    let mut rdr = csv::Reader::from_reader(open(dir, name)?);
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| Error::Format(format!("{name}: missing column {column}")))?;
    rdr.records()
        .map(|r| {
            let r = r?;
            r[idx].parse::<f64>().map_err(|e| Error::Format(format!("{name}: {e}")))
        })
        .collect()
}

fn analyze(cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let mut outputs = Vec::new();
    let detected = read_trigger_events(open(dir, "detected.csv")?)?;
    let window_ns = cfg.analysis.coincidence_window_us * 1e3;
    let radiation = merge_detections(detected.clone(), window_ns);
    let centers = match cfg.analysis.align_on {
        AlignOn::Detected => radiation.clone(),
        AlignOn::Truth => read_column(dir, "events.csv", "t_ns")?,
    };
    let records = read_qubit_records(open(dir, "qubit.csv")?)?;
    let rec = analyze_recovery(cfg, &records, &centers)?;
    rec.histogram.write_csv(create(dir, "aligned.csv")?)?;
    outputs.push("aligned.csv".to_string());
    if let Some(x) = &rec.nqp {
        x.trace.write_csv(create(dir, "nqp_trace.csv")?)?;
        outputs.push("nqp_trace.csv".to_string());
    }

    let (conditional, conditional_error) = if cfg.detectors.len() >= 2 {
        let per: Vec<(String, Vec<f64>)> = cfg
            .detectors
            .iter()
            .map(|d| (d.name.clone(), detected.iter().filter(|e| e.channel == d.name).map(|e| e.time_ns).collect()))
            .collect();
        match conditional_matrix(&per, cfg.analysis.coincidence_window_us) {
            Ok(m) => (Some(m), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, Some("a single channel has no conditional matrix".into()))
    };

    let (mut scrambles, mut correlation, mut correlation_error) = (Vec::new(), None, None);
    if dir.join("p1_series.csv").exists() {
        let series =
            TimeSeries { start_ns: 0.0, bin_ns: cfg.tls.bin_ms * 1e6, values: read_column(dir, "p1_series.csv", "p1")? };
        scrambles = detect_tls_scrambles(&series, cfg.analysis.k_sigma, cfg.analysis.change_window_bins)?;
        let tls: Vec<f64> = scrambles.iter().map(|s| s.time_ns).collect();
        match correlation_report(
            &tls,
            &radiation,
            cfg.duration_s,
            cfg.analysis.exclusion_window_s,
            &cfg.analysis.correlation,
        ) {
            Ok(r) => {
                r.write_histogram_csv(create(dir, "correlation_hist.csv")?)?;
                outputs.push("correlation_hist.csv".to_string());
                correlation = Some(r);
            }
            Err(e) => correlation_error = Some(e.to_string()),
        }
    }

    let summary = AnalysisSummary {
        align_on: cfg.analysis.align_on,
        n_events: rec.n_events,
        prep: rec.histogram.prep,
        recovery_fit: rec.fit,
        recovery_error: rec.fit_error,
        nqp_fit: rec.nqp_fit,
        nqp_error: rec.nqp_error,
        nqp_invalid_bins: rec.nqp.as_ref().map_or(0, |x| x.invalid_bins.len()),
        conditional,
        conditional_error,
        scrambles,
        correlation,
        correlation_error,
    };
    write_json(dir, "analysis.json", &summary)?;
    outputs.push("analysis.json".to_string());
    Ok(outputs)
}

fn report(_cfg: &RunConfig, dir: &Path) -> Result<Vec<String>> {
    let a: AnalysisSummary = serde_json::from_reader(open(dir, "analysis.json")?)?;
    let d: DetectSummary = serde_json::from_reader(open(dir, "detect_summary.json")?)?;
    let mut w = create(dir, "report.txt")?;
    writeln!(w, "Detection")?;
    for c in &d.channels {
        writeln!(
            w,
            "  {:<8} {:>6} segments {:>10} samples {:>6} detections  live trigger fired in {} segments",
            c.name, c.segments, c.samples, c.detections, c.live_segments
        )?;
    }
    writeln!(w, "  merged events: {}", d.merged_events)?;
    writeln!(w, "\nRecovery ({} events, prep {:?})", a.n_events, a.prep.map(Prep::as_u8))?;
    match (&a.recovery_fit, &a.recovery_error) {
        (Some(f), _) => writeln!(
            w,
            "  {:?}: amplitude {:.4} ± {:.4}, τ {:.2} ± {:.2} µs, baseline {:.4}, χ²/dof {:.3}",
            f.direction, f.amplitude, f.amplitude_err, f.time_constant, f.time_constant_err, f.baseline, f.goodness
        )?,
        (None, e) => writeln!(w, "  fit failed: {}", e.as_deref().unwrap_or("unknown"))?,
    }
    if let Some(f) = &a.nqp_fit {
        writeln!(w, "  peak n_qp {:.1} ± {:.1} µm⁻³, trapping τ {:.2} µs", f.amplitude, f.amplitude_err, f.time_constant)?;
    } else if let Some(e) = &a.nqp_error {
        writeln!(w, "  n_qp fit failed: {e}")?;
    }
    writeln!(w, "\nConditional detection")?;
    match (&a.conditional, &a.conditional_error) {
        (Some(m), _) => {
            for (i, ch) in m.channels.iter().enumerate() {
                let eff = m.efficiency[i].map_or("undefined".to_string(), |e| {
                    format!("{e:.3} ± {:.3}", m.efficiency_sigma[i].unwrap_or(f64::NAN))
                });
                writeln!(w, "  {ch:<8} {:>6} events  efficiency {eff}", m.counts[i])?;
            }
        }
        (None, e) => writeln!(w, "  {}", e.as_deref().unwrap_or("not computed"))?,
    }
    writeln!(w, "\nTLS scrambling")?;
    writeln!(w, "  {} scrambles detected", a.scrambles.len())?;
    if let Some(c) = &a.correlation {
        let p = c.ks.as_ref().map_or("n/a".to_string(), |k| format!("{:.3}", k.p_value));
        writeln!(
            w,
            "  λ = {:.4e} s⁻¹, KS p = {p}, {} within {} s (P(none) = {:.3})",
            c.lambda, c.observed_within, c.exclusion_window_s, c.p_zero_within
        )?;
        for f in &c.flags {
            writeln!(w, "  ! {f}")?;
        }
    }
    let table = physics_table(&MaterialDb::defaults(), &PhysicsQuery::default())?;
    writeln!(w, "\n{table}")?;
    w.flush()?;
    Ok(vec!["report.txt".into()])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stages_parse_and_order() {
        assert_eq!("detect".parse::<Stage>().unwrap(), Stage::Detect);
        assert!("bogus".parse::<Stage>().is_err());
        assert_eq!(Stage::Simulate.previous(), None);
        assert_eq!(Stage::Report.previous(), Some(Stage::Analyze));
    }
}

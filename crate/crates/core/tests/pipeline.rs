use std::fs;

use qpburst_core::materials::MaterialDb;
use qpburst_core::pipeline::{
    physics_table, run_pipeline, run_stage, PhysicsQuery, RunConfig, RunManifest, Stage, StageStatus, CONFIG_FILE,
    MANIFEST_FILE,
};
use qpburst_core::{Error, Seed};

fn small_config(seed: u64) -> RunConfig {
    // Ten hours of logical time gives a few hundred gated events.
    RunConfig::new(Seed(seed), 36_000.0)
}

fn digests(m: &RunManifest) -> Vec<(String, String)> {
    m.stages
        .iter()
        .flat_map(|r| r.outputs.iter().map(|o| (o.path.clone(), o.sha256.clone())))
        .collect()
}

#[test]
fn full_run_is_reproducible_and_complete() {
    let cfg = small_config(21);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ma = run_pipeline(&cfg, a.path()).unwrap();
    let mb = run_pipeline(&cfg, b.path()).unwrap();
    assert_eq!(digests(&ma), digests(&mb));
    for stage in Stage::ALL {
        assert_eq!(ma.stage(stage).unwrap().status, StageStatus::Ok, "{stage}");
    }
    // Every file on disk is the config, the manifest or a hashed output.
    let listed: Vec<String> = digests(&ma).into_iter().map(|(p, _)| p).collect();
    for entry in fs::read_dir(a.path()).unwrap() {
        let name = entry.unwrap().file_name().into_string().unwrap();
        assert!(name == CONFIG_FILE || name == MANIFEST_FILE || listed.contains(&name), "orphan {name}");
    }
    assert_eq!(RunManifest::load(a.path()).unwrap().config_sha256, ma.config_sha256);
}

#[test]
fn stages_require_their_predecessor() {
    let cfg = small_config(22);
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(run_stage(&cfg, dir.path(), Stage::Detect), Err(Error::Config(_))));
    run_stage(&cfg, dir.path(), Stage::Simulate).unwrap();
    run_stage(&cfg, dir.path(), Stage::Detect).unwrap();
    let other = small_config(23);
    assert!(matches!(run_stage(&other, dir.path(), Stage::Analyze), Err(Error::Config(_))));
}

#[test]
fn default_physics_table_matches_frozen_lifetimes() {
    let t = physics_table(&MaterialDb::defaults(), &PhysicsQuery::default()).unwrap();
    let lifetime = |plane: &str| t.lifetimes.iter().find(|r| r.plane == plane).unwrap();
    let al = lifetime("Al");
    let nb = lifetime("Nb");
    assert!((al.override_lifetime_ns.unwrap() - 400.38).abs() < 0.01);
    assert!((nb.override_lifetime_ns.unwrap() - 342.98).abs() < 0.01);
    assert!(!al.flags.is_empty());
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = small_config(24);
    let back = RunConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);
}

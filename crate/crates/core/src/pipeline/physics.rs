use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::materials::{
    bcs_gap_from_tc, dmm_transmission, mean_phonon_velocity, phonon_lifetime, MaterialDb, PhononOverrides,
    StackGeometry,
};

/// Relative difference above which a derived value is flagged against its
/// published counterpart.
pub const DISCREPANCY_TOLERANCE: f64 = 0.01;

/// Which stacks to tabulate.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicsQuery {
    /// Substrate height (µm).
    pub substrate_height_um: f64,
    /// `(substrate, ground plane)` pairs; `None` tabulates every substrate
    /// (gapless material) against every material.
    pub pairs: Option<Vec<(String, String)>>,
    /// Mean velocity for the override column; `None` uses each substrate's
    /// published value, if any.
    pub velocity_override: Option<f64>,
}

impl Default for PhysicsQuery {
    fn default() -> Self {
        Self { substrate_height_um: 500.0, pairs: None, velocity_override: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LifetimeRow {
    pub substrate: String,
    pub plane: String,
    pub mean_velocity: f64,
    pub reference_velocity: Option<f64>,
    pub transmission: f64,
    pub reference_transmission: Option<f64>,
    /// Lifetime from the formula velocity and transmission (ns).
    pub lifetime_ns: f64,
    /// Lifetime with the override velocity and published transmission where
    /// available (ns); `None` when nothing overrides the formula.
    pub override_lifetime_ns: Option<f64>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub material: String,
    pub gap_uev: f64,
    pub critical_temperature: f64,
    pub bcs_gap_uev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicsTable {
    pub substrate_height_um: f64,
    pub lifetimes: Vec<LifetimeRow>,
    pub gaps: Vec<GapRow>,
}

fn flag(what: &str, derived: f64, reference: Option<f64>) -> Option<String> {
    let r = reference?;
    let rel = (derived - r) / r;
    (rel.abs() > DISCREPANCY_TOLERANCE)
        .then(|| format!("{what}: derived {derived:.4} vs published {r:.4} ({:+.1}%)", rel * 100.0))
}

/// Phonon lifetimes for substrate/ground-plane stacks plus BCS gap checks.
pub fn physics_table(db: &MaterialDb, q: &PhysicsQuery) -> Result<PhysicsTable> {
    if !(q.substrate_height_um > 0.0) {
        return Err(Error::config("substrate height must be positive"));
    }
    if let Some(v) = q.velocity_override {
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::config("velocity override must be positive"));
        }
    }
    let pairs = match &q.pairs {
        Some(p) => p.clone(),
        None => db
            .materials
            .iter()
            .filter(|m| m.gap == 0.0)
            .flat_map(|s| db.materials.iter().map(|p| (s.name.clone(), p.name.clone())))
            .collect(),
    };
    let mut lifetimes = Vec::with_capacity(pairs.len());
    for (s, p) in pairs {
        let sub = db.get(&s)?.clone();
        let plane = db.get(&p)?.clone();
        let mean_velocity = mean_phonon_velocity(&sub)?;
        let transmission = dmm_transmission(&sub, &plane)?;
        let reference_velocity = sub.reference_mean_velocity;
        let reference_transmission = db.reference_transmission(&s, &p);
        let g = StackGeometry::new(q.substrate_height_um, sub, plane)?;
        let lifetime_ns = phonon_lifetime(&g, &PhononOverrides::default())?;
        let ov = PhononOverrides {
            mean_velocity: q.velocity_override.or(reference_velocity),
            transmission: reference_transmission,
        };
        let override_lifetime_ns = if ov == PhononOverrides::default() { None } else { Some(phonon_lifetime(&g, &ov)?) };
        let flags = [
            flag("mean velocity (m/s)", mean_velocity, reference_velocity),
            flag("transmission", transmission, reference_transmission),
        ]
        .into_iter()
        .flatten()
        .collect();
        lifetimes.push(LifetimeRow {
            substrate: s,
            plane: p,
            mean_velocity,
            reference_velocity,
            transmission,
            reference_transmission,
            lifetime_ns,
            override_lifetime_ns,
            flags,
        });
    }
    let gaps = db
        .materials
        .iter()
        .filter(|m| m.gap > 0.0)
        .map(|m| GapRow {
            material: m.name.clone(),
            gap_uev: m.gap,
            critical_temperature: m.critical_temperature,
            bcs_gap_uev: bcs_gap_from_tc(m.critical_temperature),
        })
        .collect();
    Ok(PhysicsTable { substrate_height_um: q.substrate_height_um, lifetimes, gaps })
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

impl PhysicsTable {
    /// Lifetime rows as CSV.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "substrate",
            "plane",
            "mean_velocity",
            "reference_velocity",
            "transmission",
            "reference_transmission",
            "lifetime_ns",
            "override_lifetime_ns",
            "flags",
        ])?;
        for r in &self.lifetimes {
            out.write_record([
                r.substrate.clone(),
                r.plane.clone(),
                r.mean_velocity.to_string(),
                opt(r.reference_velocity),
                r.transmission.to_string(),
                opt(r.reference_transmission),
                r.lifetime_ns.to_string(),
                opt(r.override_lifetime_ns),
                r.flags.join("; "),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

impl fmt::Display for PhysicsTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Phonon lifetimes, substrate height {} µm", self.substrate_height_um)?;
        writeln!(
            f,
            "{:<6} {:<6} {:>9} {:>9} {:>7} {:>7} {:>11} {:>11}",
            "sub", "plane", "v (m/s)", "v ref", "P", "P ref", "τ (ns)", "τ ovr (ns)"
        )?;
        let o = |v: Option<f64>, p: usize| v.map_or("-".to_string(), |v| format!("{v:.p$}"));
        for r in &self.lifetimes {
            writeln!(
                f,
                "{:<6} {:<6} {:>9.1} {:>9} {:>7.4} {:>7} {:>11.2} {:>11}",
                r.substrate,
                r.plane,
                r.mean_velocity,
                o(r.reference_velocity, 1),
                r.transmission,
                o(r.reference_transmission, 4),
                r.lifetime_ns,
                o(r.override_lifetime_ns, 2)
            )?;
            for fl in &r.flags {
                writeln!(f, "    ! {fl}")?;
            }
        }
        writeln!(f, "\nSuperconducting gaps")?;
        writeln!(f, "{:<6} {:>10} {:>8} {:>12}", "film", "Δ (µeV)", "Tc (K)", "BCS Δ (µeV)")?;
        for g in &self.gaps {
            writeln!(f, "{:<6} {:>10.1} {:>8.2} {:>12.2}", g.material, g.gap_uev, g.critical_temperature, g.bcs_gap_uev)?;
        }
        Ok(())
    }
}

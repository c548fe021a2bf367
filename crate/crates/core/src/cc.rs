//! Concentration–compactness diagnostics for sequences of odd fields.
//!
//! Ball measures are those of `μ^{T,q}` from [`crate::energy`], with centres
//! on the `x₃` axis. A tail of the sequence is classified as compact,
//! vanishing or splitting into a symmetric pair.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::energy::{Functional, MeasureDensity, Region};
use crate::error::{Result, SolverError};
use crate::field::{bilinear, AxiField, Parity};
use crate::poisson::PoissonSolver;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CcOptions {
    #[serde(rename = "R_list")]
    pub r_list: Vec<f64>,
    pub delta: f64,
    pub eps_v: f64,
    /// Number of trailing fields the classification looks at.
    pub tail: usize,
}

impl Default for CcOptions {
    fn default() -> Self {
        Self {
            r_list: vec![1.0, 2.0, 4.0, 8.0],
            delta: 0.05,
            eps_v: 0.02,
            tail: 3,
        }
    }
}

impl CcOptions {
    pub fn validate(&self) -> Result<()> {
        if self.r_list.is_empty() || self.r_list.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(SolverError::Config(
                "cc.R_list must be a nonempty list of positive radii".into(),
            ));
        }
        for (name, v) in [("cc.delta", self.delta), ("cc.eps_v", self.eps_v)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(SolverError::Config(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        if self.tail == 0 {
            return Err(SolverError::Config("cc.tail must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    Vanishing,
    Dichotomy,
    Compactness,
    Undetermined,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::Vanishing => "Vanishing",
            Classification::Dichotomy => "Dichotomy",
            Classification::Compactness => "Compactness",
            Classification::Undetermined => "Undetermined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub z_c: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    pub mu: f64,
}

/// Scan summary of one field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldScan {
    pub total_mass: f64,
    /// Largest `μ(B_R(0))/c` over the radius list and the radius attaining it.
    pub origin_fraction: f64,
    /// Smallest listed `R` with `μ(B_R(0)) ≥ (1−δ)c`, if any.
    pub compact_radius: Option<f64>,
    /// `sup μ(B_R(z_c))/c` over centres and radii.
    pub sup_fraction: f64,
    /// Centre and radius of the heaviest ball that does not meet its mirror.
    pub pair_center: f64,
    pub pair_radius: f64,
    pub pair_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CcReport {
    /// Total mass `c` of the last field.
    pub total_mass: f64,
    /// `(z_c, R, μ)` for the last field, `z_c ≥ 0` (negative centres mirror).
    pub table: Vec<TableEntry>,
    pub classification: Classification,
    pub best_center: f64,
    pub best_radius: f64,
    pub pair_fractions: Option<(f64, f64)>,
    pub delta: f64,
    pub eps_v: f64,
    #[serde(rename = "R_list")]
    pub r_list: Vec<f64>,
    pub scans: Vec<FieldScan>,
}

impl CcReport {
    pub fn write_json(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let s =
            serde_json::to_string_pretty(self).map_err(|e| SolverError::Parse(e.to_string()))?;
        std::fs::write(path, s + "\n")?;
        Ok(())
    }

    pub fn write_table_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "z_c,R,mu")?;
        for e in &self.table {
            writeln!(w, "{:e},{:e},{:e}", e.z_c, e.radius, e.mu)?;
        }
        Ok(())
    }
}

/// Axis centres `z_c = j h_z`.
fn centers(density: &MeasureDensity) -> Vec<f64> {
    let g = density.grid();
    (0..g.n_z()).map(|j| g.z(j)).collect()
}

fn ball(density: &MeasureDensity, z_c: f64, radius: f64) -> f64 {
    density
        .measure(Region::Ball {
            center_z: z_c,
            radius,
        })
        .total
}

fn scan(
    density: &MeasureDensity,
    options: &CcOptions,
    table: Option<&mut Vec<TableEntry>>,
) -> FieldScan {
    let c = density.total();
    let frac = |m: f64| if c > 0.0 { m / c } else { 0.0 };
    let mut out = FieldScan {
        total_mass: c,
        origin_fraction: 0.0,
        compact_radius: None,
        sup_fraction: 0.0,
        pair_center: 0.0,
        pair_radius: 0.0,
        pair_fraction: 0.0,
    };
    let mut radii = options.r_list.clone();
    radii.sort_by(f64::total_cmp);
    for &r in &radii {
        let f = frac(ball(density, 0.0, r));
        out.origin_fraction = out.origin_fraction.max(f);
        if out.compact_radius.is_none() && f >= 1.0 - options.delta {
            out.compact_radius = Some(r);
        }
    }
    let mut rows = Vec::new();
    for z_c in centers(density) {
        for &r in &radii {
            let mu = ball(density, z_c, r);
            let f = frac(mu);
            out.sup_fraction = out.sup_fraction.max(f);
            // the mirror ball B_R(−z_c) is disjoint from B_R(z_c) iff z_c ≥ R
            if z_c >= r && f > out.pair_fraction {
                out.pair_fraction = f;
                out.pair_center = z_c;
                out.pair_radius = r;
            }
            rows.push(TableEntry { z_c, radius: r, mu });
        }
    }
    if let Some(t) = table {
        *t = rows;
    }
    out
}

/// Classifies the tail of `seq`.
///
/// Compactness: some listed `R` has `μ(B_R(0)) ≥ (1−δ)c` on every tail
/// field. Vanishing: every ball carries at most `ε_v·c`. Dichotomy: the
/// heaviest mirror-disjoint balls each carry `c/2 ± δc`, together leave at
/// most `δc` outside, and their centres move outward along the tail.
pub fn classify(
    seq: &[AxiField],
    functional: &Functional,
    options: &CcOptions,
) -> Result<CcReport> {
    options.validate()?;
    if seq.is_empty() {
        return Err(SolverError::Config(
            "classification needs at least one field".into(),
        ));
    }
    let start = seq.len().saturating_sub(options.tail.max(3));
    let tail = &seq[start..];
    let mut table = Vec::new();
    let mut scans = Vec::with_capacity(tail.len());
    for (k, u) in tail.iter().enumerate() {
        let density = functional.measure_density(u)?;
        let last = k + 1 == tail.len();
        scans.push(scan(
            &density,
            options,
            if last { Some(&mut table) } else { None },
        ));
    }
    let last = *scans.last().expect("nonempty tail");
    let mut report = CcReport {
        total_mass: last.total_mass,
        table,
        classification: Classification::Undetermined,
        best_center: 0.0,
        best_radius: 0.0,
        pair_fractions: None,
        delta: options.delta,
        eps_v: options.eps_v,
        r_list: options.r_list.clone(),
        scans: scans.clone(),
    };
    if tail.len() < 3 || scans.iter().any(|s| !(s.total_mass > 0.0)) {
        return Ok(report);
    }
    if scans.iter().all(|s| s.compact_radius.is_some()) {
        report.classification = Classification::Compactness;
        report.best_center = 0.0;
        report.best_radius = scans
            .iter()
            .filter_map(|s| s.compact_radius)
            .fold(0.0, f64::max);
        return Ok(report);
    }
    if scans.iter().all(|s| s.sup_fraction <= options.eps_v) {
        report.classification = Classification::Vanishing;
        report.best_radius = last.pair_radius;
        return Ok(report);
    }
    let d = options.delta;
    let balanced = scans
        .iter()
        .all(|s| (s.pair_fraction - 0.5).abs() <= d && 1.0 - 2.0 * s.pair_fraction <= d);
    let outward = scans
        .windows(2)
        .all(|w| w[1].pair_center >= w[0].pair_center)
        && scans.last().unwrap().pair_center > scans[0].pair_center;
    if balanced && outward {
        report.classification = Classification::Dichotomy;
        report.best_center = last.pair_center;
        report.best_radius = last.pair_radius;
        // both balls are measured on the same stored nodes
        report.pair_fractions = Some((last.pair_fraction, last.pair_fraction));
    }
    Ok(report)
}

/// The cut-off `ρ`: 1 on `B_R(ξ)`, 0 outside `B_{2R}(ξ)`, linear in
/// `|x − ξ|` between. Its gradient has norm `1/R` on the ramp.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BallCutoff {
    pub center_z: f64,
    pub radius: f64,
}

impl BallCutoff {
    pub fn value(&self, r: f64, z: f64) -> f64 {
        let d = (r * r + (z - self.center_z).powi(2)).sqrt();
        (2.0 - d / self.radius).clamp(0.0, 1.0)
    }

    pub fn gradient_bound(&self) -> f64 {
        1.0 / self.radius
    }
}

/// Cuts the upper bump out of `B_{2R}((0,0,z_c))`, shifts it down by
/// `z_c − 3R` and extends it oddly. The result is not re-projected.
pub fn recenter_surgery(u: &AxiField, z_c: f64, radius: f64) -> Result<AxiField> {
    if u.parity() != Parity::OddInZ {
        return Err(SolverError::ParityMismatch(
            "surgery acts on odd fields".into(),
        ));
    }
    let g = *u.grid();
    if !(radius > 0.0) || !(z_c > 3.0 * radius) {
        return Err(SolverError::SurgeryInfeasible(format!(
            "need z_c > 3R > 0, got z_c = {z_c}, R = {radius}"
        )));
    }
    if z_c + 2.0 * radius > g.z_max() || 2.0 * radius > g.r_max() {
        return Err(SolverError::SurgeryInfeasible(format!(
            "B_2R around z_c = {z_c} (R = {radius}) leaves the box"
        )));
    }
    let cut = BallCutoff {
        center_z: z_c,
        radius,
    };
    let shift = z_c - 3.0 * radius;
    let (h_r, h_z) = (g.h_r(), g.h_z());
    let mut out = AxiField::from_fn(g, Parity::OddInZ, |r, z| {
        let zs = z + shift;
        if zs > g.z_max() {
            return 0.0;
        }
        cut.value(r, zs) * bilinear(u, r / h_r, zs / h_z)
    });
    out.enforce_constraints();
    Ok(out)
}

/// `(∫φ_u u², ∫φ_v v², ∫φ_w w²)` for `v = ρu`, `w = (1−ρ)u` with the
/// cut-off around `±z_c`.
pub fn coulomb_split_check(
    solver: &PoissonSolver,
    u: &AxiField,
    q: f64,
    z_c: f64,
    radius: f64,
) -> Result<(f64, f64, f64)> {
    let cut = BallCutoff {
        center_z: z_c,
        radius,
    };
    let g = *u.grid();
    let rho = AxiField::from_fn(g, Parity::EvenInZ, |r, z| cut.value(r, z));
    let v = u.zip_map(&rho, Parity::OddInZ, |a, b| a * b)?;
    let w = u.zip_map(&rho, Parity::OddInZ, |a, b| a * (1.0 - b))?;
    let full = solver.solve_phi(u, q, None)?.coupling_integral;
    let pv = solver.solve_phi(&v, q, None)?.coupling_integral;
    let pw = solver.solve_phi(&w, q, None)?.coupling_integral;
    Ok((full, pv, pw))
}

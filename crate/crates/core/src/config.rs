//! Run configuration: a TOML file of dotted keys plus `SPCYL_` environment
//! overrides.
//!
//! An override `SPCYL_SECTION__KEY=value` sets `section.key`; a single name
//! such as `SPCYL_Q` sets a top-level key. Values are read as TOML scalars
//! or arrays and fall back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cc::CcOptions;
use crate::energy::CutoffParams;
use crate::error::{Result, SolverError};
use crate::field::AxiGrid;
use crate::manifold::SeedParams;
use crate::minimizer::{Metric, MinimizerOptions};
use crate::nonlinearity::{BLNonlinearity, TabulatedG};
use crate::poisson::{BoundaryMode, PoissonOptions, Preconditioner};
use crate::solution::RescaleMode;

pub const ENV_PREFIX: &str = "SPCYL_";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub n_r: usize,
    pub n_z: usize,
    pub r_max: f64,
    pub z_max: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            n_r: 128,
            n_z: 256,
            r_max: 16.0,
            z_max: 32.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Power,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NonlinearityConfig {
    pub model: ModelKind,
    pub p: f64,
    pub omega: f64,
    /// CSV of `s,g` pairs for `model = "table"`, relative to the config file.
    pub table: Option<PathBuf>,
    pub s_max: f64,
}

impl Default for NonlinearityConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Power,
            p: 3.0,
            omega: 1.0,
            table: None,
            s_max: 1e3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CutoffPolicy {
    /// `T² = 10·max(2J(seed), 8J(seed)³)`.
    Auto,
    Explicit,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CutoffConfig {
    pub policy: CutoffPolicy,
    #[serde(rename = "T")]
    pub t: Option<f64>,
}

impl Default for CutoffConfig {
    fn default() -> Self {
        Self {
            policy: CutoffPolicy::Auto,
            t: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizerConfig {
    pub tol_el: f64,
    pub max_iter: usize,
    pub metric: Metric,
    pub shift: Option<f64>,
    pub snapshot_every: usize,
    /// Replace `u` by `|u|` every this many iterations; 0 keeps the seed
    /// normalization only.
    pub sign_normalize_every: usize,
    pub residual_el_max: f64,
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        let m = MinimizerOptions::default();
        Self {
            tol_el: m.tol_el,
            max_iter: m.max_iter,
            metric: m.metric,
            shift: m.shift,
            snapshot_every: m.snapshot_every,
            sign_normalize_every: m.sign_normalize_every,
            residual_el_max: m.residual_el_max,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoissonConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub boundary: BoundaryMode,
    pub preconditioner: Preconditioner,
}

impl Default for PoissonConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50_000,
            boundary: BoundaryMode::Monopole,
            preconditioner: Preconditioner::FastDiagonal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolutionConfig {
    pub rescale: RescaleMode,
    pub residual_u_max: f64,
    pub residual_phi_max: f64,
    pub phi_consistency_max: f64,
}

impl Default for SolutionConfig {
    fn default() -> Self {
        Self {
            rescale: RescaleMode::GridScaling,
            residual_u_max: 1e-3,
            residual_phi_max: 1e-6,
            phi_consistency_max: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output: PathBuf,
    pub q: f64,
    pub grid: GridConfig,
    pub nonlinearity: NonlinearityConfig,
    pub cutoff: CutoffConfig,
    pub seed: SeedParams,
    pub minimizer: MinimizerConfig,
    pub poisson: PoissonConfig,
    pub cc: CcOptions,
    pub solution: SolutionConfig,
    /// Directory that relative paths resolve against; not read from files.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("out"),
            q: 0.05,
            grid: GridConfig::default(),
            nonlinearity: NonlinearityConfig::default(),
            cutoff: CutoffConfig::default(),
            seed: SeedParams::default(),
            minimizer: MinimizerConfig::default(),
            poisson: PoissonConfig::default(),
            cc: CcOptions::default(),
            solution: SolutionConfig::default(),
            base_dir: PathBuf::from("."),
        }
    }
}

/// Bundled default configuration.
pub const DEFAULT_CONFIG: &str = include_str!("default.toml");

fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just written"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `SPCYL_` overrides from `vars` to a parsed table.
pub fn apply_overrides(
    table: &mut toml::Table,
    vars: impl IntoIterator<Item = (String, String)>,
) -> Result<()> {
    let mut pairs: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.len() > ENV_PREFIX.len())
        .collect();
    pairs.sort();
    for (key, raw) in pairs {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(SolverError::Config(format!(
                "malformed override name {key}"
            )));
        }
        let mut node = &mut *table;
        for part in &path[..path.len() - 1] {
            let entry = node
                .entry(part.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| SolverError::Config(format!("{key}: `{part}` is not a section")))?;
        }
        let leaf = path.last().expect("nonempty path");
        // section keys that are spelled with capitals in files
        let leaf = match leaf.as_str() {
            "r" if path.len() == 2 && path[0] == "seed" => "R".to_string(),
            "t" if path.len() == 2 && path[0] == "cutoff" => "T".to_string(),
            "r_list" if path.len() == 2 && path[0] == "cc" => "R_list".to_string(),
            other => other.to_string(),
        };
        node.insert(leaf, parse_value(&raw));
    }
    Ok(())
}

impl RunConfig {
    /// Parses `text` without environment overrides.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_toml_with(text, std::iter::empty())
    }

    pub fn from_toml_with(
        text: &str,
        vars: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| SolverError::Config(e.message().to_string()))?;
        apply_overrides(&mut table, vars)?;
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| SolverError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, applies the process environment and validates.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            SolverError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut cfg = Self::from_toml_with(&text, std::env::vars())
            .map_err(|e| SolverError::Config(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn default_bundled() -> Self {
        Self::from_toml_str(DEFAULT_CONFIG).expect("bundled default config is valid")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SolverError::Config(m));
        if !(self.q >= 0.0 && self.q.is_finite()) {
            return bad(format!("q must be a nonnegative number, got {}", self.q));
        }
        let g = &self.grid;
        if g.n_r < 8 || g.n_z < 8 {
            return bad(format!(
                "grid.n_r and grid.n_z must be at least 8, got {} and {}",
                g.n_r, g.n_z
            ));
        }
        if !(g.r_max > 0.0 && g.z_max > 0.0 && g.r_max.is_finite() && g.z_max.is_finite()) {
            return bad(format!(
                "grid.r_max and grid.z_max must be positive, got {} and {}",
                g.r_max, g.z_max
            ));
        }
        let n = &self.nonlinearity;
        if !(n.p > 1.0 && n.p < 5.0) {
            return bad(format!("nonlinearity.p must lie in (1, 5), got {}", n.p));
        }
        if !(n.omega > 0.0 && n.omega.is_finite()) {
            return bad(format!(
                "nonlinearity.omega must be positive, got {}",
                n.omega
            ));
        }
        if n.model == ModelKind::Table && n.table.is_none() {
            return bad(
                "nonlinearity.table is required when nonlinearity.model = \"table\"".into(),
            );
        }
        if !(n.s_max > 0.0) {
            return bad(format!(
                "nonlinearity.s_max must be positive, got {}",
                n.s_max
            ));
        }
        match (self.cutoff.policy, self.cutoff.t) {
            (CutoffPolicy::Explicit, None) => {
                return bad("cutoff.T is required when cutoff.policy = \"explicit\"".into())
            }
            (_, Some(t)) if !(t > 0.0) => {
                return bad(format!("cutoff.T must be positive, got {t}"))
            }
            _ => {}
        }
        let s = &self.seed;
        if !(s.radius > 2.0 && s.radius.is_finite()) {
            return bad(format!("seed.R must exceed 2, got {}", s.radius));
        }
        if !(s.amplitude > 0.0 && s.amplitude.is_finite()) {
            return bad(format!(
                "seed.amplitude must be positive, got {}",
                s.amplitude
            ));
        }
        if !(s.mollify >= 0.0) {
            return bad(format!(
                "seed.mollify must be nonnegative, got {}",
                s.mollify
            ));
        }
        let m = &self.minimizer;
        if !(m.tol_el > 0.0) || m.max_iter == 0 {
            return bad(
                "minimizer.tol_el must be positive and minimizer.max_iter at least 1".into(),
            );
        }
        if !(m.residual_el_max > 0.0) {
            return bad(format!(
                "minimizer.residual_el_max must be positive, got {}",
                m.residual_el_max
            ));
        }
        if let Some(c) = m.shift {
            if !(c > 0.0) {
                return bad(format!("minimizer.shift must be positive, got {c}"));
            }
        }
        let p = &self.poisson;
        if !(p.tol > 0.0 && p.tol < 1.0) || p.max_iter == 0 {
            return bad("poisson.tol must lie in (0, 1) and poisson.max_iter be at least 1".into());
        }
        self.cc.validate()?;
        let sol = &self.solution;
        if !(sol.residual_u_max > 0.0
            && sol.residual_phi_max > 0.0
            && sol.phi_consistency_max > 0.0)
        {
            return bad("solution tolerances must be positive".into());
        }
        Ok(())
    }

    pub fn build_grid(&self) -> Result<AxiGrid> {
        AxiGrid::new(
            self.grid.n_r,
            self.grid.n_z,
            self.grid.r_max,
            self.grid.z_max,
        )
    }

    pub fn build_nonlinearity(&self) -> Result<BLNonlinearity> {
        let n = &self.nonlinearity;
        match n.model {
            ModelKind::Power => BLNonlinearity::power(n.p, n.omega),
            ModelKind::Table => {
                let rel = n.table.as_ref().expect("validated");
                let path = if rel.is_absolute() {
                    rel.clone()
                } else {
                    self.base_dir.join(rel)
                };
                let file = std::fs::File::open(&path).map_err(|e| {
                    SolverError::Config(format!(
                        "cannot open nonlinearity table {}: {e}",
                        path.display()
                    ))
                })?;
                BLNonlinearity::from_table(TabulatedG::from_csv(file)?, n.omega, n.p, n.s_max)
            }
        }
    }

    pub fn poisson_options(&self) -> PoissonOptions {
        let p = &self.poisson;
        PoissonOptions {
            tol: p.tol,
            max_iter: p.max_iter,
            boundary: p.boundary,
            preconditioner: p.preconditioner,
        }
    }

    pub fn minimizer_options(&self) -> MinimizerOptions {
        let m = &self.minimizer;
        MinimizerOptions {
            tol_el: m.tol_el,
            max_iter: m.max_iter,
            metric: m.metric,
            shift: m.shift,
            snapshot_every: m.snapshot_every,
            sign_normalize_every: m.sign_normalize_every,
            residual_el_max: m.residual_el_max,
            ..MinimizerOptions::default()
        }
    }

    /// Cut-off for a seed of energy `seed_j`.
    pub fn cutoff_for(&self, seed_norm_sq: f64) -> Result<CutoffParams> {
        match self.cutoff.policy {
            CutoffPolicy::Auto => Ok(CutoffParams::from_reference_norm(seed_norm_sq)),
            CutoffPolicy::Explicit => CutoffParams::new(self.cutoff.t.expect("validated")),
            CutoffPolicy::Off => Ok(CutoffParams::inactive()),
        }
    }

    /// Output directory resolved against the config location.
    pub fn output_dir(&self) -> PathBuf {
        if self.output.is_absolute() {
            self.output.clone()
        } else {
            self.base_dir.join(&self.output)
        }
    }
}

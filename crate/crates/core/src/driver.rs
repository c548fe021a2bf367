//! End-to-end pipeline: seed, minimize, normalize, rescale, verify, classify,
//! and the artifacts of a run.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::cc::{classify, CcReport};
use crate::config::RunConfig;
use crate::energy::{CutoffParams, Functional};
use crate::error::{Result, SolverError};
use crate::field::AxiField;
use crate::manifold::build_seed;
use crate::minimizer::{q_threshold_estimate, HistoryRow, MinimizeResult, Minimizer, StopReason};
use crate::nonlinearity::BLNonlinearity;
use crate::solution::{
    rescale_to_solution, sign_normalize, sign_normalize_checked, SignReport, SolutionPair,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SEED: i32 = 3;
pub const EXIT_MINIMIZE: i32 = 4;
pub const EXIT_VERIFY: i32 = 5;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Reason {
    pub stage: String,
    pub tag: String,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct GridSummary {
    pub n_r: usize,
    pub n_z: usize,
    pub r_max: f64,
    pub z_max: f64,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct NonlinearitySummary {
    pub model: String,
    pub p: f64,
    pub omega: f64,
    pub zeta: f64,
    /// `null` when `g` has no zero beyond `ζ`.
    pub s0: Option<f64>,
}

/// Contents of `summary.json`. Holds no timestamps or timings, so identical
/// runs give identical files.
#[derive(Debug, Clone, Serialize, PartialEq, Default)]
pub struct RunSummary {
    pub status: String,
    pub exit_code: i32,
    pub reason: Option<Reason>,
    pub q: f64,
    pub q_eff: Option<f64>,
    pub lambda: Option<f64>,
    pub mu_projection: Option<f64>,
    pub m_q_upper: Option<f64>,
    pub seed_energy: Option<f64>,
    pub residual_el: Option<f64>,
    pub residual_u: Option<f64>,
    pub residual_phi: Option<f64>,
    pub phi_consistency: Option<f64>,
    pub converged: bool,
    pub stop: Option<String>,
    pub iterations: usize,
    pub polish_iterations: usize,
    #[serde(rename = "kT_ok")]
    pub kt_ok: bool,
    #[serde(rename = "cutoff_T")]
    pub cutoff_t: Option<f64>,
    pub q_threshold: Option<f64>,
    pub q_above_advisory_threshold: bool,
    pub cc_class: Option<String>,
    pub cc_best_center: Option<f64>,
    pub cc_best_radius: Option<f64>,
    pub sign: Option<SignReport>,
    pub grid: Option<GridSummary>,
    pub grid_rescaled: Option<GridSummary>,
    pub nonlinearity: Option<NonlinearitySummary>,
    #[serde(rename = "seed_R")]
    pub seed_radius: f64,
    pub seed_amplitude: f64,
}

/// Everything a run produced in memory.
#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub summary: RunSummary,
    pub output_dir: PathBuf,
    pub minimize: Option<MinimizeResult>,
    pub solution: Option<SolutionPair>,
    pub cc: Option<CcReport>,
    pub runtime_seconds: f64,
}

fn grid_summary(g: &crate::field::AxiGrid) -> GridSummary {
    GridSummary {
        n_r: g.n_r(),
        n_z: g.n_z(),
        r_max: g.r_max(),
        z_max: g.z_max(),
    }
}

fn nl_summary(nl: &BLNonlinearity) -> NonlinearitySummary {
    NonlinearitySummary {
        model: if nl.is_power() {
            "power".into()
        } else {
            "table".into()
        },
        p: nl.p(),
        omega: nl.omega(),
        zeta: nl.zeta(),
        s0: nl.s0().is_finite().then_some(nl.s0()),
    }
}

fn stop_name(s: StopReason) -> String {
    match s {
        StopReason::Tolerance => "tolerance",
        StopReason::Stalled => "stalled",
        StopReason::MaxIterations => "max_iterations",
    }
    .into()
}

fn fail(summary: &mut RunSummary, code: i32, stage: &str, e: &SolverError) {
    summary.status = "failed".into();
    summary.exit_code = code;
    summary.reason = Some(Reason {
        stage: stage.into(),
        tag: e.tag().into(),
        message: e.to_string(),
    });
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(value).map_err(|e| SolverError::Parse(e.to_string()))?;
    std::fs::write(path, s + "\n")?;
    Ok(())
}

fn write_history(path: &Path, rows: &[HistoryRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{}", HistoryRow::CSV_HEADER)?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}

const PLOT_SCRIPT: &str = "\
# gnuplot script for the artifacts of one run
set datafile separator ','
set terminal pngcairo size 1400,450
set output 'run.png'
set multiplot layout 1,3
set title 'u (rescaled, z >= 0)'
set xlabel 'r'
set ylabel 'z'
set view map
splot 'u.csv' every ::1 using 1:2:3 with points pointtype 5 pointsize 0.4 palette notitle
set title 'phi (rescaled)'
splot 'phi.csv' every ::1 using 1:2:3 with points pointtype 5 pointsize 0.4 palette notitle
set title 'descent'
set xlabel 'iteration'
set ylabel 'J'
set logscale y2
set y2tics
plot 'energy_history.csv' every ::1 using 1:5 with lines title 'J', \\
     '' every ::1 using 1:7 axes x1y2 with lines title 'tangent residual'
unset multiplot
";

/// Runs minimize from `start`, then normalizes signs and, if that changed
/// the field, polishes from the normalized field.
fn descend(
    functional: &Functional,
    cfg: &RunConfig,
    start: &AxiField,
) -> Result<(MinimizeResult, usize)> {
    let minimizer = Minimizer::new(functional, cfg.minimizer_options())?;
    let first = minimizer.minimize(start)?;
    let (v, rep) = sign_normalize_checked(functional, &first.u_min)?;
    if !rep.changed {
        return Ok((first, 0));
    }
    log::info!(
        "sign normalization changed {} crossings; polishing",
        rep.interfaces
    );
    let mut polished = minimizer.minimize(&v)?;
    let polish_iterations = polished.iterations;
    let mut snapshots = first.snapshots;
    let offset = first.iterations;
    snapshots.extend(polished.snapshots.drain(..).map(|(k, u)| (k + offset, u)));
    let mut history = first.history;
    history.extend(polished.history.drain(..).map(|mut r| {
        r.iter += offset;
        r
    }));
    polished.snapshots = snapshots;
    polished.history = history;
    polished.iterations += offset;
    polished.seed_energy = first.seed_energy;
    polished.kt_ok &= first.kt_ok;
    Ok((polished, polish_iterations))
}

/// Executes one configured run and writes its artifacts into the output
/// directory. The returned exit code is also recorded in `summary.json`.
pub fn run(cfg: &RunConfig) -> RunOutcome {
    let started = Instant::now();
    let out = cfg.output_dir();
    let mut summary = RunSummary {
        status: "ok".into(),
        q: cfg.q,
        seed_radius: cfg.seed.radius,
        seed_amplitude: cfg.seed.amplitude,
        ..Default::default()
    };
    let mut outcome = RunOutcome {
        exit_code: EXIT_OK,
        summary: RunSummary::default(),
        output_dir: out.clone(),
        minimize: None,
        solution: None,
        cc: None,
        runtime_seconds: 0.0,
    };
    let result = pipeline(cfg, &out, &mut summary, &mut outcome);
    if let Err((code, stage, e)) = result {
        log::error!("{stage} failed: {e}");
        fail(&mut summary, code, &stage, &e);
    }
    outcome.exit_code = summary.exit_code;
    outcome.runtime_seconds = started.elapsed().as_secs_f64();
    if std::fs::create_dir_all(&out).is_ok() {
        if let Err(e) = write_json(&out.join("summary.json"), &summary) {
            log::error!("cannot write summary.json: {e}");
        }
        let timing = serde_json::json!({ "runtime_seconds": outcome.runtime_seconds });
        let _ = write_json(&out.join("timing.json"), &timing);
    }
    outcome.summary = summary;
    outcome
}

type StageError = (i32, String, SolverError);

fn at(code: i32, stage: &str) -> impl Fn(SolverError) -> StageError + '_ {
    move |e| (code, stage.to_string(), e)
}

fn pipeline(
    cfg: &RunConfig,
    out: &Path,
    summary: &mut RunSummary,
    outcome: &mut RunOutcome,
) -> Result<(), StageError> {
    cfg.validate().map_err(at(EXIT_CONFIG, "config"))?;
    let grid = cfg.build_grid().map_err(at(EXIT_CONFIG, "config"))?;
    let nl = cfg
        .build_nonlinearity()
        .map_err(at(EXIT_CONFIG, "config"))?;
    summary.grid = Some(grid_summary(&grid));
    summary.nonlinearity = Some(nl_summary(&nl));
    std::fs::create_dir_all(out).map_err(|e| (EXIT_CONFIG, "output".to_string(), e.into()))?;

    let mut functional = Functional::new(
        grid,
        cfg.q,
        nl.clone(),
        CutoffParams::inactive(),
        cfg.poisson_options(),
    )
    .map_err(at(EXIT_CONFIG, "config"))?;
    let seed = build_seed(grid, &cfg.seed, &nl).map_err(at(EXIT_SEED, "seed"))?;
    let seed = sign_normalize(&seed);
    let seed_j = functional
        .evaluate(&seed)
        .map_err(at(EXIT_SEED, "seed"))?
        .energy
        .j;
    let seed_norm_sq = crate::field::h1_norm_sq(&seed).map_err(at(EXIT_SEED, "seed"))?;
    let cutoff = cfg
        .cutoff_for(seed_norm_sq)
        .map_err(at(EXIT_CONFIG, "config"))?;
    functional.set_cutoff(cutoff);
    summary.seed_energy = Some(seed_j);
    summary.cutoff_t = cutoff.t.is_finite().then_some(cutoff.t);
    if cutoff.t.is_finite() {
        let q_ref = if cfg.q > 0.0 { cfg.q } else { 1.0 };
        let thr = q_threshold_estimate(functional.solver(), cutoff.t, &seed, q_ref)
            .map_err(at(EXIT_SEED, "seed"))?;
        summary.q_threshold = thr.is_finite().then_some(thr);
        summary.q_above_advisory_threshold = cfg.q > thr;
        if cfg.q > thr {
            log::warn!("q = {} exceeds the advisory threshold {thr:.4e}", cfg.q);
        }
    }
    log::info!("seed on M, J = {seed_j:.6}");

    let (result, polish) =
        descend(&functional, cfg, &seed).map_err(at(EXIT_MINIMIZE, "minimize"))?;
    summary.iterations = result.iterations;
    summary.polish_iterations = polish;
    summary.converged = result.converged;
    summary.stop = Some(stop_name(result.stop));
    summary.lambda = Some(result.lambda);
    summary.mu_projection = Some(result.mu_projection);
    summary.m_q_upper = Some(result.m_q);
    summary.residual_el = Some(result.residual_el);
    summary.kt_ok = result.kt_ok;
    log::info!(
        "descent: {} iterations, J = {:.8}, λ = {:.6}, residual_EL = {:.3e}",
        result.iterations,
        result.m_q,
        result.lambda,
        result.residual_el
    );
    write_history(&out.join("energy_history.csv"), &result.history)
        .map_err(at(EXIT_MINIMIZE, "minimize"))?;
    result
        .u_min
        .write_csv_file(out.join("u_min.csv"))
        .map_err(at(EXIT_MINIMIZE, "minimize"))?;
    std::fs::write(out.join("plot.gp"), PLOT_SCRIPT)
        .map_err(|e| (EXIT_MINIMIZE, "output".to_string(), e.into()))?;

    let fields: Vec<AxiField> = result.snapshots.iter().map(|(_, u)| u.clone()).collect();
    let report = classify(&fields, &functional, &cfg.cc).map_err(at(EXIT_VERIFY, "classify"))?;
    report
        .write_json(out.join("cc_report.json"))
        .map_err(at(EXIT_VERIFY, "classify"))?;
    let table = std::fs::File::create(out.join("cc_table.csv"))
        .map_err(|e| (EXIT_VERIFY, "classify".to_string(), e.into()))?;
    report
        .write_table_csv(std::io::BufWriter::new(table))
        .map_err(|e| (EXIT_VERIFY, "classify".to_string(), e.into()))?;
    summary.cc_class = Some(report.classification.as_str().into());
    summary.cc_best_center = Some(report.best_center);
    summary.cc_best_radius = Some(report.best_radius);
    outcome.cc = Some(report);

    if !result.converged {
        let e = SolverError::NoConvergence {
            iterations: result.iterations,
            residual: result.residual_el,
        };
        outcome.minimize = Some(result);
        return Err((EXIT_MINIMIZE, "minimize".into(), e));
    }

    let pair = rescale_to_solution(
        &result,
        cfg.q,
        &nl,
        cfg.poisson_options(),
        cfg.solution.rescale,
    )
    .map_err(at(EXIT_VERIFY, "rescale"))?;
    outcome.minimize = Some(result);
    summary.q_eff = Some(pair.q_eff);
    summary.residual_u = Some(pair.residual_u);
    summary.residual_phi = Some(pair.residual_phi);
    summary.phi_consistency = Some(pair.phi_consistency);
    summary.sign = Some(pair.sign);
    summary.grid_rescaled = Some(grid_summary(pair.u.grid()));
    pair.u
        .write_csv_file(out.join("u.csv"))
        .map_err(at(EXIT_VERIFY, "output"))?;
    pair.phi
        .write_csv_file(out.join("phi.csv"))
        .map_err(at(EXIT_VERIFY, "output"))?;
    let s = &cfg.solution;
    let contract = pair.residual_u <= s.residual_u_max
        && pair.residual_phi <= s.residual_phi_max
        && pair.phi_consistency <= s.phi_consistency_max;
    let msg = format!(
        "residual_u = {:.3e} (max {:.1e}), residual_phi = {:.3e} (max {:.1e}), phi consistency = {:.3e} (max {:.1e})",
        pair.residual_u, s.residual_u_max, pair.residual_phi, s.residual_phi_max, pair.phi_consistency, s.phi_consistency_max
    );
    outcome.solution = Some(pair);
    if !contract {
        return Err((
            EXIT_VERIFY,
            "verify".into(),
            SolverError::ContractViolated(msg),
        ));
    }
    log::info!("{msg}");
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub name: String,
    pub exit_code: i32,
    pub q: f64,
    pub m_q_upper: Option<f64>,
    pub lambda: Option<f64>,
    pub q_eff: Option<f64>,
    pub residual_u: Option<f64>,
    pub cc_class: Option<String>,
}

pub const SWEEP_HEADER: &str = "q,m_q_upper,lambda,q_eff,residual_u,cc_class";

impl SweepRow {
    fn csv_line(&self) -> String {
        let f = |v: Option<f64>| v.map(|x| format!("{x:e}")).unwrap_or_default();
        let class = match (&self.cc_class, self.exit_code) {
            (Some(c), 0) => c.clone(),
            (_, code) => format!("failed({code})"),
        };
        format!(
            "{:e},{},{},{},{},{}",
            self.q,
            f(self.m_q_upper),
            f(self.lambda),
            f(self.q_eff),
            f(self.residual_u),
            class
        )
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub exit_code: i32,
    pub rows: Vec<SweepRow>,
    pub csv_path: PathBuf,
}

/// `*.toml` files of `dir` in name order.
pub fn sweep_configs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| {
            SolverError::Config(format!(
                "cannot read config directory {}: {e}",
                dir.display()
            ))
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml") && p.is_file())
        .collect();
    paths.sort();
    Ok(paths)
}

/// Runs every config of `dir`, each into `out/<file stem>`, and merges the
/// summaries into `out/sweep.csv`.
pub fn sweep(dir: &Path, out: &Path, parallel: bool) -> Result<SweepOutcome> {
    let paths = sweep_configs(dir)?;
    std::fs::create_dir_all(out)?;
    let one = |path: &PathBuf| -> SweepRow {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match RunConfig::load(path) {
            Ok(mut cfg) => {
                cfg.output = out.join(&name);
                let o = run(&cfg);
                let s = &o.summary;
                SweepRow {
                    name,
                    exit_code: o.exit_code,
                    q: s.q,
                    m_q_upper: s.m_q_upper,
                    lambda: s.lambda,
                    q_eff: s.q_eff,
                    residual_u: s.residual_u,
                    cc_class: s.cc_class.clone(),
                }
            }
            Err(e) => {
                log::error!("{e}");
                SweepRow {
                    name,
                    exit_code: EXIT_CONFIG,
                    q: f64::NAN,
                    m_q_upper: None,
                    lambda: None,
                    q_eff: None,
                    residual_u: None,
                    cc_class: None,
                }
            }
        }
    };
    let rows: Vec<SweepRow> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = paths.iter().map(|p| s.spawn(move || one(p))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("sweep worker panicked"))
                .collect()
        })
    } else {
        paths.iter().map(one).collect()
    };
    let csv_path = out.join("sweep.csv");
    let mut w = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in &rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    w.flush()?;
    let exit_code = rows
        .iter()
        .map(|r| r.exit_code)
        .find(|&c| c != 0)
        .unwrap_or(EXIT_OK);
    Ok(SweepOutcome {
        exit_code,
        rows,
        csv_path,
    })
}

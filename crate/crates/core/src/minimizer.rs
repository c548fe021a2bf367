//! Projected-gradient descent for `J_q` on `M`.
//!
//! Each step takes a direction tangent to `M` at `u` (orthogonal to the
//! constraint normal `g(u)`), moves against it, and returns to `M` along
//! the normal `b` below, falling back to dilation.
//! Step lengths come from Armijo backtracking on `J_q`. The direction is
//! either the plain L² projected gradient or its Sobolev counterpart in
//! the metric `P = −Δ_h + c`. For the latter
//!
//! ```text
//! a = P⁻¹∇J,  b = P⁻¹g(u),  μ = ⟨a, g⟩/⟨b, g⟩,  d = a − μ b
//! ```
//!
//! so `⟨d, g⟩ = 0` exactly and `⟨∇J, d⟩ = ⟨d, P d⟩ > 0`.

use serde::{Deserialize, Serialize};

use crate::energy::{EnergyBreakdown, Evaluation, Functional};
use crate::error::{Result, SolverError};
use crate::field::{apply_tg_oddness_check, AxiField, Parity, Stencil};
use crate::linalg::SeparableSolver;
use crate::manifold::{project_to_m_with, retract_along, DELTA_FEAS};
use crate::nonlinearity::BLNonlinearity;
use crate::poisson::PoissonSolver;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    L2,
    Sobolev,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizerOptions {
    /// Stop once the relative tangent residual drops below this.
    pub tol_el: f64,
    pub max_iter: usize,
    pub metric: Metric,
    /// Shift `c` of the Sobolev metric; `None` tracks `ω·μ` along the run.
    pub shift: Option<f64>,
    pub armijo: f64,
    pub max_backtracks: usize,
    /// First trial step; defaults to 1 (Sobolev) or `1/(1 + ‖∇J‖)` (L²).
    pub initial_step: Option<f64>,
    /// Factor applied to the last accepted step to form the next trial.
    pub step_growth: f64,
    pub max_step: f64,
    /// Keep a copy of every K-th accepted iterate.
    pub snapshot_every: usize,
    /// Replace `u` by `|u|` on `z > 0` every K accepted steps (0 disables).
    pub sign_normalize_every: usize,
    /// Converged runs need the final Euler–Lagrange residual below this.
    pub residual_el_max: f64,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        Self {
            tol_el: 1e-5,
            max_iter: 3000,
            metric: Metric::Sobolev,
            shift: None,
            armijo: 1e-4,
            max_backtracks: 30,
            initial_step: None,
            step_growth: 2.0,
            max_step: 8.0,
            snapshot_every: 25,
            sign_normalize_every: 0,
            residual_el_max: 1e-3,
        }
    }
}

/// Projected descent direction at an iterate.
#[derive(Debug, Clone)]
pub struct Direction {
    pub d: AxiField,
    /// `P⁻¹g(u)` (`g(u)` in the L² metric); the retraction moves along it.
    pub normal: AxiField,
    pub slope: f64,
    /// `|⟨d, g⟩| / (‖d‖‖g‖)`.
    pub tangency: f64,
}

/// One accepted iterate.
#[derive(Debug, Clone)]
pub struct MinimizerState {
    pub u: AxiField,
    pub eval: Evaluation,
    pub gradient: AxiField,
    pub j: f64,
    /// Projection coefficient `⟨∇J, g⟩/⟨g, g⟩`.
    pub mu_est: f64,
    /// `‖∇J − μ g‖ / ‖−Δ_h u‖`.
    pub tangent_res: f64,
    /// Last accepted step length (0 before the first step).
    pub step: f64,
    /// Dilation factor of the last retraction.
    pub sigma: f64,
    pub iter: usize,
    pub kt_ok: bool,
    /// `|⟨d, g⟩| / (‖d‖‖g‖)` of the last direction.
    pub tangency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iter: usize,
    pub kinetic: f64,
    pub coupling: f64,
    pub constraint: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "kT")]
    pub kt: f64,
    pub tangent_residual: f64,
    pub sigma: f64,
}

impl HistoryRow {
    pub const CSV_HEADER: &'static str =
        "iter,kinetic,coupling,constraint,J,kT,tangent_residual,sigma";

    pub fn new(iter: usize, e: &EnergyBreakdown, tangent_residual: f64, sigma: f64) -> Self {
        Self {
            iter,
            kinetic: e.kinetic,
            coupling: e.coupling,
            constraint: e.constraint,
            j: e.j,
            kt: e.kt,
            tangent_residual,
            sigma,
        }
    }

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e},{:.15e}",
            self.iter,
            self.kinetic,
            self.coupling,
            self.constraint,
            self.j,
            self.kt,
            self.tangent_residual,
            self.sigma
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    Stalled,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct MinimizeResult {
    pub u_min: AxiField,
    pub phi: AxiField,
    pub energy: EnergyBreakdown,
    /// Final `J`, an upper bound for `m_q`.
    pub m_q: f64,
    /// Rayleigh multiplier `(∫|∇u|² + q∫φu²)/∫g(u)u`.
    pub lambda: f64,
    /// Projection multiplier at the final iterate.
    pub mu_projection: f64,
    pub residual_el: f64,
    pub tangent_res: f64,
    pub iterations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub kt_ok: bool,
    pub history: Vec<HistoryRow>,
    /// `(iter, field)` for every K-th accepted iterate and the last one.
    pub snapshots: Vec<(usize, AxiField)>,
    pub seed_energy: f64,
}

fn g_field(u: &AxiField, nl: &BLNonlinearity) -> AxiField {
    u.map(Parity::OddInZ, |v| nl.g(v))
}

fn dot(st: &Stencil, a: &AxiField, b: &AxiField) -> f64 {
    st.inner_values(a.values(), b.values())
}

/// `⟨∇J, g(u)⟩ / ⟨g(u), g(u)⟩`.
pub fn tangent_multiplier(u: &AxiField, grad: &AxiField, nl: &BLNonlinearity) -> Result<f64> {
    u.same_grid(grad)?;
    let st = Stencil::new(*u.grid());
    let g = g_field(u, nl);
    let gg = dot(&st, &g, &g);
    if !(gg > 0.0) {
        return Err(SolverError::DegenerateConstraintNormal);
    }
    Ok(dot(&st, grad, &g) / gg)
}

/// Rayleigh multiplier and Euler–Lagrange residual
/// `‖−Δ_h u + qφu − λ g(u)‖ / ‖−Δ_h u‖`.
pub fn euler_lagrange(
    functional: &Functional,
    u: &AxiField,
    eval: &Evaluation,
) -> Result<(f64, f64)> {
    let st = functional.stencil();
    let nl = functional.nonlinearity();
    let g = g_field(u, nl);
    let gu = dot(st, &g, u);
    let e = &eval.energy;
    let num = 2.0 * e.kinetic + functional.q() * eval.coulomb.coupling_integral;
    if gu == 0.0 {
        return Err(SolverError::DegenerateConstraintNormal);
    }
    let lambda = num / gu;
    let mut lap = vec![0.0; u.grid().len()];
    st.neg_laplacian(u.values(), Parity::OddInZ, &mut lap);
    let q = functional.q();
    let mut res = vec![0.0; lap.len()];
    for k in 0..lap.len() {
        res[k] = lap[k] + q * eval.coulomb.phi.values()[k] * u.values()[k] - lambda * g.values()[k];
    }
    let num = st.inner_values(&res, &res).sqrt();
    let den = st.inner_values(&lap, &lap).sqrt();
    Ok((lambda, if den > 0.0 { num / den } else { 0.0 }))
}

/// Descent driver holding the functional and reusable solver state.
pub struct Minimizer<'a> {
    functional: &'a Functional,
    options: MinimizerOptions,
    sobolev: Option<SeparableSolver>,
}

impl<'a> Minimizer<'a> {
    pub fn new(functional: &'a Functional, options: MinimizerOptions) -> Result<Self> {
        if !(options.tol_el > 0.0) {
            return Err(SolverError::Config(format!(
                "minimizer.tol_el must be positive, got {}",
                options.tol_el
            )));
        }
        if !(options.armijo > 0.0 && options.armijo < 1.0) {
            return Err(SolverError::Config(format!(
                "minimizer.armijo must lie in (0, 1), got {}",
                options.armijo
            )));
        }
        if !(options.step_growth >= 1.0) || !(options.max_step > 0.0) {
            return Err(SolverError::Config(
                "minimizer step controls must be positive".into(),
            ));
        }
        if let Some(c) = options.shift {
            if !(c > 0.0) {
                return Err(SolverError::Config(format!(
                    "minimizer.shift must be positive, got {c}"
                )));
            }
        }
        let sobolev = match options.metric {
            Metric::Sobolev => Some(SeparableSolver::new(functional.grid(), Parity::OddInZ)),
            Metric::L2 => None,
        };
        Ok(Self {
            functional,
            options,
            sobolev,
        })
    }

    pub fn options(&self) -> &MinimizerOptions {
        &self.options
    }

    /// Evaluates `u` and assembles the state quantities.
    pub fn state_at(
        &self,
        u: AxiField,
        iter: usize,
        step: f64,
        sigma: f64,
        guess: Option<&AxiField>,
    ) -> Result<MinimizerState> {
        let f = self.functional;
        let eval = f.evaluate_with_guess(&u, guess)?;
        let gradient = f.gradient_with_phi(&u, &eval.coulomb.phi)?;
        let mu_est = tangent_multiplier(&u, &gradient, f.nonlinearity())?;
        let tangent_res = self.tangent_residual(&u, &gradient, mu_est);
        let kt_ok = eval.energy.kt == 1.0;
        Ok(MinimizerState {
            j: eval.energy.j,
            u,
            eval,
            gradient,
            mu_est,
            tangent_res,
            step,
            sigma,
            iter,
            kt_ok,
            tangency: 0.0,
        })
    }

    fn tangent_residual(&self, u: &AxiField, gradient: &AxiField, mu: f64) -> f64 {
        let st = self.functional.stencil();
        let nl = self.functional.nonlinearity();
        let mut lap = vec![0.0; u.grid().len()];
        st.neg_laplacian(u.values(), Parity::OddInZ, &mut lap);
        let r: Vec<f64> = gradient
            .values()
            .iter()
            .zip(u.values())
            .map(|(&gr, &v)| gr - mu * nl.g(v))
            .collect();
        let den = st.inner_values(&lap, &lap).sqrt();
        if den > 0.0 {
            st.inner_values(&r, &r).sqrt() / den
        } else {
            0.0
        }
    }

    fn shift(&self, state: &MinimizerState) -> f64 {
        match self.options.shift {
            Some(c) => c,
            None => (self.functional.nonlinearity().omega() * state.mu_est).max(1.0),
        }
    }

    /// Tangent descent direction, the metric normal `P⁻¹g` and the slope
    /// `⟨∇J, d⟩`.
    pub fn direction(&self, state: &MinimizerState) -> Result<Direction> {
        let st = self.functional.stencil();
        let g = g_field(&state.u, self.functional.nonlinearity());
        let grid = *state.u.grid();
        let (a, normal) = match &self.sobolev {
            None => (state.gradient.clone(), g.clone()),
            Some(solver) => {
                let c = self.shift(state);
                let apply = |f: &AxiField| -> Result<AxiField> {
                    let rhs: Vec<f64> = f
                        .values()
                        .iter()
                        .zip(st.mass())
                        .map(|(v, m)| v * m)
                        .collect();
                    let mut x = vec![0.0; grid.len()];
                    solver.solve(c, &rhs, &mut x);
                    AxiField::from_values(grid, Parity::OddInZ, x)
                };
                (apply(&state.gradient)?, apply(&g)?)
            }
        };
        let b_dot_g = dot(st, &normal, &g);
        if !(b_dot_g > 0.0) {
            return Err(SolverError::DegenerateConstraintNormal);
        }
        let mu = dot(st, &a, &g) / b_dot_g;
        let d = a.zip_map(&normal, Parity::OddInZ, |x, y| x - mu * y)?;
        let slope = dot(st, &state.gradient, &d);
        let dn = dot(st, &d, &d).sqrt();
        let gn = dot(st, &g, &g).sqrt();
        let tangency = if dn > 0.0 {
            dot(st, &d, &g).abs() / (dn * gn)
        } else {
            0.0
        };
        Ok(Direction {
            d,
            normal,
            slope,
            tangency,
        })
    }

    fn first_trial(&self, state: &MinimizerState) -> f64 {
        if let Some(s) = self.options.initial_step {
            return s;
        }
        match self.options.metric {
            Metric::Sobolev => 1.0,
            Metric::L2 => {
                let st = self.functional.stencil();
                1.0 / (1.0 + dot(st, &state.gradient, &state.gradient).sqrt())
            }
        }
    }

    /// One Armijo-backtracked projected step. Returns `Ok(None)` at an exact
    /// critical point.
    pub fn step(&self, state: &MinimizerState) -> Result<Option<MinimizerState>> {
        let dir = self.direction(state)?;
        if !(dir.slope > 0.0) {
            return Ok(None);
        }
        let mut tau = if state.step > 0.0 {
            (state.step * self.options.step_growth).min(self.options.max_step)
        } else {
            self.first_trial(state)
        };
        for _ in 0..=self.options.max_backtracks {
            let trial = state
                .u
                .zip_map(&dir.d, Parity::OddInZ, |a, b| a - tau * b)?;
            if let Some((u_new, sigma)) = self.retract(&trial, &dir.normal)? {
                let mut next = self.state_at(
                    u_new,
                    state.iter + 1,
                    tau,
                    sigma,
                    Some(&state.eval.coulomb.phi),
                )?;
                if next.j <= state.j - self.options.armijo * tau * dir.slope {
                    next.tangency = dir.tangency;
                    return Ok(Some(next));
                }
            }
            tau *= 0.5;
        }
        Err(SolverError::StallDetected {
            backtracks: self.options.max_backtracks,
            step: tau,
        })
    }

    /// Normal retraction, falling back to dilation. `None` rejects the trial.
    fn retract(&self, trial: &AxiField, normal: &AxiField) -> Result<Option<(AxiField, f64)>> {
        let nl = self.functional.nonlinearity();
        match retract_along(trial, normal, nl) {
            Ok((u, _)) => return Ok(Some((u, 1.0))),
            Err(SolverError::NoConvergence { .. }) => {}
            Err(e) => return Err(e),
        }
        match project_to_m_with(trial, nl, DELTA_FEAS) {
            Ok(found) => Ok(Some(found)),
            Err(SolverError::ConstraintInfeasible { .. })
            | Err(SolverError::NoConvergence { .. }) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Runs the descent from `seed` (which must lie on `M`).
    pub fn minimize(&self, seed: &AxiField) -> Result<MinimizeResult> {
        let f = self.functional;
        let mut state = self.state_at(seed.clone(), 0, 0.0, 1.0, None)?;
        let seed_energy = state.j;
        let mut history = vec![HistoryRow::new(
            0,
            &state.eval.energy,
            state.tangent_res,
            1.0,
        )];
        let mut snapshots = vec![(0, state.u.clone())];
        let mut kt_ok = state.kt_ok;
        let mut stop = StopReason::MaxIterations;
        while state.iter < self.options.max_iter {
            if state.tangent_res <= self.options.tol_el {
                stop = StopReason::Tolerance;
                break;
            }
            let next = match self.step(&state) {
                Ok(Some(next)) => next,
                Ok(None) => {
                    stop = StopReason::Tolerance;
                    break;
                }
                Err(SolverError::StallDetected { backtracks, step }) => {
                    log::info!("line search stalled at iteration {} ({backtracks} backtracks, step {step:.2e})", state.iter);
                    stop = StopReason::Stalled;
                    break;
                }
                Err(e) => return Err(e),
            };
            debug_assert_eq!(apply_tg_oddness_check(&next.u), 0.0);
            state = next;
            if self.options.sign_normalize_every > 0
                && state.iter % self.options.sign_normalize_every == 0
            {
                let v = state.u.map(Parity::OddInZ, f64::abs);
                state = self.state_at(
                    v,
                    state.iter,
                    state.step,
                    state.sigma,
                    Some(&state.eval.coulomb.phi),
                )?;
            }
            if !state.kt_ok {
                log::warn!(
                    "k_T = {} < 1 at iteration {}",
                    state.eval.energy.kt,
                    state.iter
                );
            }
            kt_ok &= state.kt_ok;
            history.push(HistoryRow::new(
                state.iter,
                &state.eval.energy,
                state.tangent_res,
                state.sigma,
            ));
            if self.options.snapshot_every > 0 && state.iter % self.options.snapshot_every == 0 {
                snapshots.push((state.iter, state.u.clone()));
            }
            if state.iter % 100 == 0 {
                log::debug!(
                    "iter {} J {:.10} res {:.3e} step {:.3e}",
                    state.iter,
                    state.j,
                    state.tangent_res,
                    state.step
                );
            }
        }
        if snapshots.last().map(|s| s.0) != Some(state.iter) {
            snapshots.push((state.iter, state.u.clone()));
        }
        let (lambda, residual_el) = euler_lagrange(f, &state.u, &state.eval)?;
        let converged = residual_el <= self.options.residual_el_max && lambda > 0.0;
        if residual_el <= self.options.residual_el_max && lambda <= 0.0 {
            return Err(SolverError::NegativeMultiplier(lambda));
        }
        Ok(MinimizeResult {
            phi: state.eval.coulomb.phi.clone(),
            energy: state.eval.energy,
            m_q: state.j,
            lambda,
            mu_projection: state.mu_est,
            residual_el,
            tangent_res: state.tangent_res,
            iterations: state.iter,
            converged,
            stop,
            kt_ok,
            history,
            snapshots,
            seed_energy,
            u_min: state.u,
        })
    }
}

/// Convenience wrapper around [`Minimizer::minimize`].
pub fn minimize(
    seed: &AxiField,
    functional: &Functional,
    options: MinimizerOptions,
) -> Result<MinimizeResult> {
    Minimizer::new(functional, options)?.minimize(seed)
}

/// Advisory coupling threshold `√(a/(b T⁴))` with `a = ½∫|∇u|²` and
/// `b = ∫φ_u u² / (q_ref ‖u‖⁴)` evaluated on `probe`.
pub fn q_threshold_estimate(
    solver: &PoissonSolver,
    t: f64,
    probe: &AxiField,
    q_ref: f64,
) -> Result<f64> {
    if !(q_ref > 0.0) {
        return Err(SolverError::Config(format!(
            "reference coupling must be positive, got {q_ref}"
        )));
    }
    let st = solver.stencil();
    let kinetic = 0.5 * 4.0 * std::f64::consts::PI * st.dirichlet_form(probe.values());
    let norm_sq = crate::field::h1_norm_sq(probe)?;
    let s = solver.solve_phi(probe, q_ref, None)?;
    let b = s.coupling_integral / (q_ref * norm_sq * norm_sq);
    if !(b > 0.0) {
        return Ok(f64::INFINITY);
    }
    Ok((kinetic / (b * t.powi(4))).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::CutoffParams;
    use crate::field::{inner, integrate, AxiGrid};
    use crate::manifold::{build_seed, SeedParams};
    use crate::poisson::PoissonOptions;

    fn functional(g: AxiGrid, q: f64) -> Functional {
        let nl = BLNonlinearity::power(3.0, 1.0).unwrap();
        let opts = PoissonOptions {
            preconditioner: crate::poisson::Preconditioner::FastDiagonal,
            ..Default::default()
        };
        Functional::new(g, q, nl, CutoffParams::inactive(), opts).unwrap()
    }

    #[test]
    fn multiplier_projection() {
        let g = AxiGrid::new(24, 32, 4.0, 6.0).unwrap();
        let nl = BLNonlinearity::power(3.0, 1.0).unwrap();
        let u = AxiField::from_fn(g, Parity::OddInZ, |r, z| {
            2.0 * z * (-(r * r + z * z) / 2.0).exp()
        });
        let gu = u.map(Parity::OddInZ, |v| nl.g(v));
        let par = gu.map(Parity::OddInZ, |v| 3.5 * v);
        assert!((tangent_multiplier(&u, &par, &nl).unwrap() - 3.5).abs() < 1e-12);
        // remove the g-component from an arbitrary field
        let h = AxiField::from_fn(g, Parity::OddInZ, |r, z| z * (1.0 + r) * (-(r + z)).exp());
        let c = inner(&h, &gu).unwrap() / inner(&gu, &gu).unwrap();
        let perp = h.zip_map(&gu, Parity::OddInZ, |a, b| a - c * b).unwrap();
        assert!(tangent_multiplier(&u, &perp, &nl).unwrap().abs() < 1e-12);
        let zero = AxiField::zeros(g, Parity::OddInZ);
        assert!(matches!(
            tangent_multiplier(&zero, &zero, &nl),
            Err(SolverError::DegenerateConstraintNormal)
        ));
    }

    #[test]
    fn steps_descend_and_stay_on_m() {
        let g = AxiGrid::new(48, 96, 8.0, 16.0).unwrap();
        let f = functional(g, 0.05);
        let seed = build_seed(g, &SeedParams::default(), f.nonlinearity()).unwrap();
        let m = Minimizer::new(&f, MinimizerOptions::default()).unwrap();
        let mut s = m.state_at(seed, 0, 0.0, 1.0, None).unwrap();
        let j0 = s.j;
        for _ in 0..5 {
            let tangency = m.direction(&s).unwrap().tangency;
            assert!(tangency <= 1e-10, "{tangency}");
            let next = m.step(&s).unwrap().unwrap();
            assert!(next.j <= s.j);
            let i = integrate(&next.u.map(Parity::EvenInZ, |v| f.nonlinearity().big_g(v))).unwrap();
            assert!((i - 1.0).abs() <= 1e-8);
            assert_eq!(apply_tg_oddness_check(&next.u), 0.0);
            s = next;
        }
        assert!(s.j < j0);
    }

    #[test]
    fn l2_metric_also_descends() {
        let g = AxiGrid::new(32, 64, 8.0, 16.0).unwrap();
        let f = functional(g, 0.05);
        let seed = build_seed(g, &SeedParams::default(), f.nonlinearity()).unwrap();
        let m = Minimizer::new(
            &f,
            MinimizerOptions {
                metric: Metric::L2,
                ..Default::default()
            },
        )
        .unwrap();
        let s = m.state_at(seed, 0, 0.0, 1.0, None).unwrap();
        let next = m.step(&s).unwrap().unwrap();
        assert!(next.j < s.j);
    }

    #[test]
    fn threshold_scales_as_inverse_square_of_t() {
        let g = AxiGrid::new(32, 64, 8.0, 16.0).unwrap();
        let f = functional(g, 0.05);
        let seed = build_seed(g, &SeedParams::default(), f.nonlinearity()).unwrap();
        let a = q_threshold_estimate(f.solver(), 3.0, &seed, 0.05).unwrap();
        let b = q_threshold_estimate(f.solver(), 6.0, &seed, 0.05).unwrap();
        assert!(a > 0.0);
        assert!((a / b - 4.0).abs() < 1e-10);
    }
}

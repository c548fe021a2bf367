//! Coulomb potential of a density: `−Δφ = q u²` on the axisymmetric grid.
//!
//! The discrete operator is the finite-volume stiffness of
//! [`Stencil`](crate::field::Stencil) acting on even fields, which is a
//! symmetric M-matrix. Far-field values are either zero ([`BoundaryMode::Dirichlet`])
//! or the monopole `Q/(4π|x|)` with `Q = ∫ρ` ([`BoundaryMode::Monopole`]).

use serde::{Deserialize, Serialize};

use std::sync::OnceLock;

use crate::error::{Result, SolverError};
use crate::field::{dilate, AxiField, AxiGrid, Parity, Stencil, FOUR_PI};
use crate::linalg::{conjugate_gradient, LinearOp, SeparableSolver};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    Dirichlet,
    Monopole,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    None,
    Jacobi,
    /// Exact fast-diagonalization inverse of the stiffness.
    FastDiagonal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoissonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub boundary: BoundaryMode,
    pub preconditioner: Preconditioner,
}

impl Default for PoissonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 50_000,
            boundary: BoundaryMode::Monopole,
            preconditioner: Preconditioner::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoulombSolve {
    pub phi: AxiField,
    pub q: f64,
    /// `∫|∇φ|²` over the box.
    pub dirichlet_energy: f64,
    /// `∫φ u²`.
    pub coupling_integral: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
}

impl CoulombSolve {
    /// `min φ / max φ`; zero for a vanishing potential.
    pub fn min_relative(&self) -> f64 {
        let max = self.phi.max();
        if max > 0.0 {
            self.phi.min() / max
        } else {
            0.0
        }
    }
}

/// Reusable solver for one grid.
#[derive(Debug, Clone)]
pub struct PoissonSolver {
    stencil: Stencil,
    options: PoissonOptions,
    mask: Vec<bool>,
    inv_diag: Option<Vec<f64>>,
    separable: Option<SeparableSolver>,
    harmonic: OnceLock<AxiField>,
}

impl PoissonSolver {
    pub fn new(grid: AxiGrid, options: PoissonOptions) -> Self {
        let stencil = Stencil::new(grid);
        let mask = stencil.free_mask(Parity::EvenInZ);
        let inv_diag = match options.preconditioner {
            Preconditioner::Jacobi => Some(
                stencil
                    .diagonal()
                    .iter()
                    .zip(&mask)
                    .map(|(d, &free)| if free { 1.0 / d } else { 0.0 })
                    .collect(),
            ),
            _ => None,
        };
        let separable = match options.preconditioner {
            Preconditioner::FastDiagonal => Some(SeparableSolver::new(&grid, Parity::EvenInZ)),
            _ => None,
        };
        Self {
            stencil,
            options,
            mask,
            inv_diag,
            separable,
            harmonic: OnceLock::new(),
        }
    }

    pub fn grid(&self) -> &AxiGrid {
        self.stencil.grid()
    }
    pub fn options(&self) -> &PoissonOptions {
        &self.options
    }
    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    /// Potential of an even density `ρ`: `−Δφ = ρ`.
    pub fn solve_density(
        &self,
        rho: &AxiField,
        guess: Option<&AxiField>,
    ) -> Result<(AxiField, usize, f64)> {
        let g = *self.grid();
        if *rho.grid() != g {
            return Err(SolverError::GridMismatch);
        }
        if rho.parity() != Parity::EvenInZ {
            return Err(SolverError::ParityMismatch(
                "a density must be even in z".into(),
            ));
        }
        rho.check_finite()?;
        let charge = self.stencil.integrate_values(rho.values());
        self.solve_with_charge(rho, charge, guess)
    }

    /// Discrete harmonic field carrying the monopole boundary values of a
    /// unit charge. With it the monopole potential splits as
    /// `φ = φ_Dirichlet + Q·H`, so the potential map is not self-adjoint.
    pub fn monopole_harmonic(&self) -> Result<&AxiField> {
        if let Some(h) = self.harmonic.get() {
            return Ok(h);
        }
        let zero = AxiField::zeros(*self.grid(), Parity::EvenInZ);
        let (h, _, _) = self.solve_with_charge(&zero, 1.0, None)?;
        let _ = self.harmonic.set(h);
        Ok(self.harmonic.get().expect("just set"))
    }

    fn solve_with_charge(
        &self,
        rho: &AxiField,
        charge: f64,
        guess: Option<&AxiField>,
    ) -> Result<(AxiField, usize, f64)> {
        let g = *self.grid();
        let n = g.len();
        let mass = self.stencil.mass();
        let mut lift = vec![0.0; n];
        if self.options.boundary == BoundaryMode::Monopole {
            for i in 0..g.n_r() {
                for j in 0..g.n_z() {
                    if g.is_outer(i, j) {
                        let d = g.r(i).hypot(g.z(j));
                        lift[g.idx(i, j)] = charge / (FOUR_PI * d);
                    }
                }
            }
        }
        let mut s_lift = vec![0.0; n];
        self.stencil.apply_stiffness(&lift, &mut s_lift);
        let b: Vec<f64> = (0..n)
            .map(|k| {
                if self.mask[k] {
                    mass[k] * rho.values()[k] - s_lift[k]
                } else {
                    0.0
                }
            })
            .collect();
        let mut x = match guess {
            Some(f) if *f.grid() == g => f.values().to_vec(),
            _ => vec![0.0; n],
        };
        let mut apply = |v: &[f64], out: &mut [f64]| self.stencil.apply_stiffness(v, out);
        let mut jacobi = |r: &[f64], z: &mut [f64]| {
            if let Some(d) = &self.inv_diag {
                z.iter_mut()
                    .zip(r.iter().zip(d))
                    .for_each(|(z, (r, d))| *z = r * d);
            }
        };
        let mut direct = |r: &[f64], z: &mut [f64]| {
            if let Some(s) = &self.separable {
                s.solve(0.0, r, z);
            }
        };
        let precondition: Option<LinearOp> = match self.options.preconditioner {
            Preconditioner::None => None,
            Preconditioner::Jacobi => Some(&mut jacobi),
            Preconditioner::FastDiagonal => Some(&mut direct),
        };
        let outcome = conjugate_gradient(
            &mut apply,
            &b,
            &mut x,
            &self.mask,
            precondition,
            self.options.tol,
            self.options.max_iter,
        )?;
        for k in 0..n {
            if !self.mask[k] {
                x[k] = lift[k];
            }
        }
        let phi = AxiField::from_values(g, Parity::EvenInZ, x)?;
        Ok((phi, outcome.iterations, outcome.relative_residual))
    }

    /// Potential generated by `u`: `−Δφ = q u²`. `q = 0` or `u ≡ 0` gives `φ ≡ 0`.
    pub fn solve_phi(
        &self,
        u: &AxiField,
        q: f64,
        guess: Option<&AxiField>,
    ) -> Result<CoulombSolve> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(SolverError::Config(format!(
                "coupling q must be nonnegative, got {q}"
            )));
        }
        if u.parity() != Parity::OddInZ {
            return Err(SolverError::ParityMismatch(
                "solve_phi expects an odd field".into(),
            ));
        }
        let rho = u.map(Parity::EvenInZ, |v| q * v * v);
        let (phi, iterations, residual) = self.solve_density(&rho, guess)?;
        let u_sq = u.map(Parity::EvenInZ, |v| v * v);
        let coupling_integral = self.stencil.inner_values(phi.values(), u_sq.values());
        let dirichlet_energy = FOUR_PI * self.stencil.dirichlet_form(phi.values());
        Ok(CoulombSolve {
            phi,
            q,
            dirichlet_energy,
            coupling_integral,
            cg_iterations: iterations,
            cg_residual: residual,
        })
    }
}

/// One-shot solve with the default boundary mode.
pub fn solve_phi(u: &AxiField, q: f64, tol: f64, max_iter: usize) -> Result<CoulombSolve> {
    let options = PoissonOptions {
        tol,
        max_iter,
        ..PoissonOptions::default()
    };
    PoissonSolver::new(*u.grid(), options).solve_phi(u, q, None)
}

/// Relative L² discrepancy between `φ_{u_τ}` and `τ² φ_u(·/τ)`, measured on
/// the nodes whose preimage `x/τ` lies inside the box.
pub fn check_scaling_law(solver: &PoissonSolver, u: &AxiField, q: f64, tau: f64) -> Result<f64> {
    let base = solver.solve_phi(u, q, None)?;
    let dilated_u = dilate(u, tau)?;
    let direct = solver.solve_phi(&dilated_u, q, None)?;
    let predicted = dilate(&base.phi, tau)?;
    let g = *solver.grid();
    let mass = solver.stencil().mass();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..g.n_r() {
        for j in 0..g.n_z() {
            if !g.contains(g.r(i) / tau, g.z(j) / tau) {
                continue;
            }
            let k = g.idx(i, j);
            let reference = tau * tau * predicted.values()[k];
            let d = direct.phi.values()[k] - reference;
            num += mass[k] * d * d;
            den += mass[k] * reference * reference;
        }
    }
    Ok(if den > 0.0 { (num / den).sqrt() } else { 0.0 })
}

/// The two ratios `‖φ_u‖_D / (q‖u‖²)` and `∫φ_u u² / (q‖u‖⁴)`.
pub fn check_apriori_bounds(solver: &PoissonSolver, u: &AxiField, q: f64) -> Result<(f64, f64)> {
    let norm_sq = crate::field::h1_norm_sq(u)?;
    if norm_sq == 0.0 || q == 0.0 {
        return Ok((0.0, 0.0));
    }
    let s = solver.solve_phi(u, q, None)?;
    Ok((
        s.dirichlet_energy.sqrt() / (q * norm_sq),
        s.coupling_integral / (q * norm_sq * norm_sq),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(grid: AxiGrid) -> AxiField {
        AxiField::from_fn(grid, Parity::OddInZ, |r, z| {
            z * (-(r * r + (z - 0.5) * (z - 0.5))).exp()
        })
    }

    #[test]
    fn zero_field_gives_zero_potential() {
        let g = AxiGrid::new(16, 16, 4.0, 4.0).unwrap();
        let s = solve_phi(&AxiField::zeros(g, Parity::OddInZ), 1.0, 1e-8, 100).unwrap();
        assert_eq!(s.cg_iterations, 0);
        assert_eq!(s.phi.max_abs(), 0.0);
    }

    #[test]
    fn green_identity_and_positivity_dirichlet() {
        let g = AxiGrid::new(48, 96, 6.0, 12.0).unwrap();
        let opts = PoissonOptions {
            tol: 1e-12,
            boundary: BoundaryMode::Dirichlet,
            ..Default::default()
        };
        let solver = PoissonSolver::new(g, opts);
        let s = solver.solve_phi(&bump(g), 0.7, None).unwrap();
        let rel = (s.dirichlet_energy - s.q * s.coupling_integral).abs() / s.dirichlet_energy;
        assert!(rel < 1e-9, "{rel}");
        assert!(s.min_relative() >= -1e-10);
    }

    #[test]
    fn jacobi_matches_unpreconditioned() {
        let g = AxiGrid::new(32, 48, 6.0, 9.0).unwrap();
        let u = bump(g);
        let plain = PoissonSolver::new(
            g,
            PoissonOptions {
                tol: 1e-11,
                ..Default::default()
            },
        );
        let jac = PoissonSolver::new(
            g,
            PoissonOptions {
                tol: 1e-11,
                preconditioner: Preconditioner::Jacobi,
                ..Default::default()
            },
        );
        let a = plain.solve_phi(&u, 1.0, None).unwrap();
        let b = jac.solve_phi(&u, 1.0, None).unwrap();
        let scale = a.phi.max_abs();
        for (x, y) in a.phi.values().iter().zip(b.phi.values()) {
            assert!((x - y).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn fast_diagonal_converges_immediately() {
        let g = AxiGrid::new(32, 48, 6.0, 9.0).unwrap();
        let u = bump(g);
        let plain = PoissonSolver::new(
            g,
            PoissonOptions {
                tol: 1e-11,
                ..Default::default()
            },
        );
        let fast = PoissonSolver::new(
            g,
            PoissonOptions {
                tol: 1e-11,
                preconditioner: Preconditioner::FastDiagonal,
                ..Default::default()
            },
        );
        let a = plain.solve_phi(&u, 1.0, None).unwrap();
        let b = fast.solve_phi(&u, 1.0, None).unwrap();
        assert!(b.cg_iterations <= 3, "{}", b.cg_iterations);
        let scale = a.phi.max_abs();
        for (x, y) in a.phi.values().iter().zip(b.phi.values()) {
            assert!((x - y).abs() < 1e-8 * scale);
        }
    }

    #[test]
    fn monopole_potential_splits_into_dirichlet_plus_harmonic() {
        let g = AxiGrid::new(32, 64, 6.0, 12.0).unwrap();
        let u = bump(g);
        let opts = |boundary| PoissonOptions {
            tol: 1e-12,
            boundary,
            ..PoissonOptions::default()
        };
        let mono = PoissonSolver::new(g, opts(BoundaryMode::Monopole));
        let dir = PoissonSolver::new(g, opts(BoundaryMode::Dirichlet));
        let q = 0.7;
        let a = mono.solve_phi(&u, q, None).unwrap().phi;
        let b = dir.solve_phi(&u, q, None).unwrap().phi;
        let charge = q * mono.stencil().inner_values(u.values(), u.values());
        let h = mono.monopole_harmonic().unwrap();
        let err = (0..g.len())
            .map(|k| (a.values()[k] - b.values()[k] - charge * h.values()[k]).abs())
            .fold(0.0, f64::max);
        assert!(err <= 1e-9 * a.max_abs(), "{err}");
    }

    #[test]
    fn rejects_even_input() {
        let g = AxiGrid::new(16, 16, 4.0, 4.0).unwrap();
        let even = AxiField::from_fn(g, Parity::EvenInZ, |_, _| 1.0);
        assert!(matches!(
            solve_phi(&even, 1.0, 1e-8, 100),
            Err(SolverError::ParityMismatch(_))
        ));
    }
}

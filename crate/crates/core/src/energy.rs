//! Reduced energy `J_q`, its cut-off variant `J_q^T`, the gradient, and the
//! localized measures used by the concentration–compactness diagnostics.
//!
//! With `φ_u` solving `−Δφ = q u²`,
//!
//! ```text
//! J_q(u)   = ½∫|∇u|² + (q/4)∫φ_u u²
//! J_q^T(u) = ½∫|∇u|² + (q/4) k_T(u) ∫φ_u u²,   k_T(u) = χ(‖u‖²/T²)
//! ```
//!
//! The coupling term is quartic in `u`: `∫φ_u u² = q⟨u², (−Δ)⁻¹u²⟩`. Its
//! derivative in direction `h` is `(q/4)·q·4⟨u², (−Δ)⁻¹(uh)⟩ = q∫φ_u u h`, so
//! the L² gradient of `J_q` is `−Δu + qφ_u u`. On the grid the same algebra
//! goes through with the finite-volume stiffness in place of `−Δ`, which
//! makes the discrete gradient exact for the Dirichlet boundary mode. The
//! monopole mode adds a boundary lift that depends on `∫u²` and is only
//! variational up to that lift.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::field::{h1_norm_sq, AxiField, AxiGrid, Parity, Stencil};
use crate::nonlinearity::{split, BLNonlinearity, SplitParts};
use crate::poisson::{BoundaryMode, CoulombSolve, PoissonOptions, PoissonSolver};

/// Cubic profile: 1 on `[0, 1]`, `1 − 3t² + 2t³` with `t = s − 1` on
/// `[1, 2]`, 0 beyond. `sup|χ′| = 3/2`.
pub fn chi(s: f64) -> f64 {
    if s <= 1.0 {
        1.0
    } else if s >= 2.0 {
        0.0
    } else {
        let t = s - 1.0;
        1.0 - 3.0 * t * t + 2.0 * t * t * t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffParams {
    /// Norm cap `T`.
    pub t: f64,
}

impl CutoffParams {
    pub fn new(t: f64) -> Result<Self> {
        if !(t > 0.0) {
            return Err(SolverError::Config(format!(
                "cut-off T must be positive, got {t}"
            )));
        }
        Ok(Self { t })
    }

    /// No cut-off: `k_T ≡ 1`.
    pub fn inactive() -> Self {
        Self { t: f64::INFINITY }
    }

    /// `T² = 4‖u‖²` for a reference field norm `‖u‖²`.
    pub fn from_reference_norm(norm_sq: f64) -> Self {
        let t_sq = 4.0 * norm_sq.max(0.0);
        Self {
            t: t_sq.sqrt().max(f64::MIN_POSITIVE),
        }
    }

    pub fn k_t(&self, norm_sq: f64) -> f64 {
        if self.t.is_infinite() {
            1.0
        } else {
            chi(norm_sq / (self.t * self.t))
        }
    }
}

/// `k_T(u) = χ(‖u‖²/T²)` with the full H¹ norm.
pub fn kt_guard(u: &AxiField, cutoff: &CutoffParams) -> Result<f64> {
    Ok(cutoff.k_t(h1_norm_sq(u)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    /// `½∫|∇u|²`.
    pub kinetic: f64,
    /// `(q/4)∫φ_u u²`.
    pub coupling: f64,
    pub kt: f64,
    /// `∫G(u)`.
    pub constraint: f64,
    pub j: f64,
    pub jt: f64,
    /// `J_q − ∫G(u)`, the action.
    pub j_action: f64,
    /// `‖u‖² = ∫|∇u|² + ∫u²`.
    pub norm_sq: f64,
}

/// One energy evaluation with the Poisson solve it used.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub energy: EnergyBreakdown,
    pub coulomb: CoulombSolve,
}

/// `J_q` for fixed `q`, nonlinearity, cut-off and grid.
#[derive(Debug, Clone)]
pub struct Functional {
    q: f64,
    nl: BLNonlinearity,
    parts: SplitParts,
    cutoff: CutoffParams,
    solver: PoissonSolver,
}

impl Functional {
    pub fn new(
        grid: AxiGrid,
        q: f64,
        nl: BLNonlinearity,
        cutoff: CutoffParams,
        poisson: PoissonOptions,
    ) -> Result<Self> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(SolverError::Config(format!(
                "coupling q must be nonnegative, got {q}"
            )));
        }
        let parts = split(&nl);
        Ok(Self {
            q,
            nl,
            parts,
            cutoff,
            solver: PoissonSolver::new(grid, poisson),
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn nonlinearity(&self) -> &BLNonlinearity {
        &self.nl
    }
    pub fn parts(&self) -> &SplitParts {
        &self.parts
    }
    pub fn cutoff(&self) -> &CutoffParams {
        &self.cutoff
    }
    pub fn set_cutoff(&mut self, cutoff: CutoffParams) {
        self.cutoff = cutoff;
    }
    pub fn solver(&self) -> &PoissonSolver {
        &self.solver
    }
    pub fn grid(&self) -> &AxiGrid {
        self.solver.grid()
    }
    pub fn stencil(&self) -> &Stencil {
        self.solver.stencil()
    }

    fn check(&self, u: &AxiField) -> Result<()> {
        if u.grid() != self.grid() {
            return Err(SolverError::GridMismatch);
        }
        if u.parity() != Parity::OddInZ {
            return Err(SolverError::ParityMismatch(
                "energies are defined on odd fields".into(),
            ));
        }
        u.check_finite()
    }

    /// `∫G(u)`.
    pub fn constraint(&self, u: &AxiField) -> Result<f64> {
        self.check(u)?;
        Ok(integrate_map(self.stencil(), u, |v| self.nl.big_g(v)))
    }

    pub fn evaluate(&self, u: &AxiField) -> Result<Evaluation> {
        self.evaluate_with_guess(u, None)
    }

    /// One Poisson solve, warm-started from `guess` when given.
    pub fn evaluate_with_guess(
        &self,
        u: &AxiField,
        guess: Option<&AxiField>,
    ) -> Result<Evaluation> {
        self.check(u)?;
        let st = self.stencil();
        let coulomb = self.solver.solve_phi(u, self.q, guess)?;
        let dirichlet = 4.0 * PI * st.dirichlet_form(u.values());
        let kinetic = 0.5 * dirichlet;
        let coupling = 0.25 * self.q * coulomb.coupling_integral;
        let norm_sq = dirichlet + st.inner_values(u.values(), u.values());
        let kt = self.cutoff.k_t(norm_sq);
        let constraint = integrate_map(st, u, |v| self.nl.big_g(v));
        let j = kinetic + coupling;
        let energy = EnergyBreakdown {
            kinetic,
            coupling,
            kt,
            constraint,
            j,
            jt: kinetic + kt * coupling,
            j_action: j - constraint,
            norm_sq,
        };
        Ok(Evaluation { energy, coulomb })
    }

    /// L² gradient `−Δ_h u + qφ_u u` of `J_q`.
    pub fn gradient(&self, u: &AxiField) -> Result<AxiField> {
        let eval = self.evaluate(u)?;
        self.gradient_with_phi(u, &eval.coulomb.phi)
    }

    /// Gradient reusing a potential already computed for `u`.
    pub fn gradient_with_phi(&self, u: &AxiField, phi: &AxiField) -> Result<AxiField> {
        self.check(u)?;
        u.same_grid(phi)?;
        let mut out = vec![0.0; u.grid().len()];
        let st = self.stencil();
        st.neg_laplacian(u.values(), Parity::OddInZ, &mut out);
        for ((o, &v), &p) in out.iter_mut().zip(u.values()).zip(phi.values()) {
            *o += self.q * p * v;
        }
        if self.q > 0.0 && self.solver.options().boundary == BoundaryMode::Monopole {
            // the boundary values depend on the total charge: add the
            // antisymmetric part of the potential map, ½(⟨H, ρ⟩ − Q·H)
            let h = self.solver.monopole_harmonic()?;
            let rho: Vec<f64> = u.values().iter().map(|v| self.q * v * v).collect();
            let charge = st.integrate_values(&rho);
            let hr = st.inner_values(h.values(), &rho);
            for ((o, &v), &hk) in out.iter_mut().zip(u.values()).zip(h.values()) {
                *o += self.q * 0.5 * (hr - charge * hk) * v;
            }
        }
        AxiField::from_values(*u.grid(), Parity::OddInZ, out)
    }

    /// Nodal densities of `μ^{T,q}` for `u`.
    pub fn measure_density(&self, u: &AxiField) -> Result<MeasureDensity> {
        let eval = self.evaluate(u)?;
        self.measure_density_with(u, &eval)
    }

    pub fn measure_density_with(&self, u: &AxiField, eval: &Evaluation) -> Result<MeasureDensity> {
        self.check(u)?;
        let st = self.stencil();
        let mut kinetic = vec![0.0; u.grid().len()];
        st.gradient_density(u.values(), &mut kinetic);
        kinetic.iter_mut().for_each(|v| *v *= 0.5);
        let g2 = u.values().iter().map(|&v| self.parts.big_g2(v)).collect();
        let scale = 0.25 * self.q * eval.energy.kt;
        let coupling = u
            .values()
            .iter()
            .zip(eval.coulomb.phi.values())
            .map(|(&v, &p)| scale * p * v * v)
            .collect();
        Ok(MeasureDensity {
            grid: *u.grid(),
            mass: st.mass().to_vec(),
            kinetic,
            g2,
            coupling,
        })
    }

    /// `μ^{T,q}(Ω)` split into its three parts.
    pub fn local_measure(&self, u: &AxiField, region: Region) -> Result<LocalMeasure> {
        Ok(self.measure_density(u)?.measure(region))
    }
}

fn integrate_map(st: &Stencil, u: &AxiField, f: impl Fn(f64) -> f64) -> f64 {
    let s: f64 = st
        .mass()
        .iter()
        .zip(u.values())
        .map(|(m, &v)| m * f(v))
        .sum();
    4.0 * PI * s
}

/// Subsets of ℝ³ that are invariant under rotation about the `x₃` axis (or,
/// for [`Region::OffAxisBall`], handled by the exact angular fraction).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Whole,
    /// Ball of radius `radius` centred at `(0, 0, center_z)`.
    Ball {
        center_z: f64,
        radius: f64,
    },
    Complement {
        center_z: f64,
        radius: f64,
    },
    /// `inner ≤ |x − (0,0,center_z)| < outer`.
    Shell {
        center_z: f64,
        inner: f64,
        outer: f64,
    },
    /// Ball centred at distance `center_r` from the axis.
    OffAxisBall {
        center_r: f64,
        center_z: f64,
        radius: f64,
    },
}

impl Region {
    /// Half-open node index ranges `(i, j)` outside of which the region
    /// (together with its mirror image) has no nodes.
    fn node_window(&self, g: &AxiGrid) -> ((usize, usize), (usize, usize)) {
        let (r_hi, c, rad) = match *self {
            Region::Ball { center_z, radius } => (radius, center_z, radius),
            Region::Shell {
                center_z, outer, ..
            } => (outer, center_z, outer),
            Region::OffAxisBall {
                center_r,
                center_z,
                radius,
            } => (center_r + radius, center_z, radius),
            Region::Whole | Region::Complement { .. } => return ((0, g.n_r()), (0, g.n_z())),
        };
        let pad = 1e-9;
        let idx = |x: f64, h: f64, n: usize| ((x / h).max(0.0) as usize).min(n);
        let i1 = idx(r_hi / g.h_r() + 1.0 + pad, 1.0, g.n_r());
        let z_lo = (c.abs() - rad).max(0.0);
        let j0 = idx(z_lo / g.h_z() - pad, 1.0, g.n_z());
        let j1 = idx((c.abs() + rad) / g.h_z() + 1.0 + pad, 1.0, g.n_z());
        ((0, i1), (j0, j1.max(j0)))
    }

    /// Angular fraction (in `[0, 1]`) of the ring through `(r, z)` inside the region.
    fn ring_fraction(&self, r: f64, z: f64) -> f64 {
        let inside = |c: f64, rad: f64| r * r + (z - c) * (z - c) <= rad * rad;
        match *self {
            Region::Whole => 1.0,
            Region::Ball { center_z, radius } => f64::from(u8::from(inside(center_z, radius))),
            Region::Complement { center_z, radius } => {
                f64::from(u8::from(!inside(center_z, radius)))
            }
            Region::Shell {
                center_z,
                inner,
                outer,
            } => f64::from(u8::from(
                inside(center_z, outer) && !inside(center_z, inner),
            )),
            Region::OffAxisBall {
                center_r,
                center_z,
                radius,
            } => {
                let rest = radius * radius - (z - center_z) * (z - center_z);
                if rest < 0.0 {
                    return 0.0;
                }
                if r == 0.0 || center_r == 0.0 {
                    return f64::from(u8::from(r * r + center_r * center_r <= rest));
                }
                // |x − c|² = r² + ρ₀² − 2rρ₀cos θ + (z − z_c)²
                let c = (r * r + center_r * center_r - rest) / (2.0 * r * center_r);
                c.clamp(-1.0, 1.0).acos() / PI
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalMeasure {
    pub region: Region,
    /// `½∫_Ω|∇u|²`.
    pub kinetic_part: f64,
    /// `∫_Ω G₂(u)`.
    pub g2_part: f64,
    /// `(q/4)k_T(u)∫_Ω φ_u u²`.
    pub coupling_part: f64,
    pub total: f64,
}

/// Precomputed nodal densities of the measure `μ^{T,q}` for one field.
///
/// A stored node `(r, z)` stands for the two rings at heights `±z`; each
/// contributes `2π m` times its angular fraction inside the region. The
/// measure of a ball at `−z_c` is therefore identical to the one at `+z_c`.
#[derive(Debug, Clone)]
pub struct MeasureDensity {
    grid: AxiGrid,
    mass: Vec<f64>,
    kinetic: Vec<f64>,
    g2: Vec<f64>,
    coupling: Vec<f64>,
}

impl MeasureDensity {
    pub fn grid(&self) -> &AxiGrid {
        &self.grid
    }

    pub fn measure(&self, region: Region) -> LocalMeasure {
        let g = self.grid;
        let (mut k, mut g2, mut c) = (0.0, 0.0, 0.0);
        let ((i0, i1), (j0, j1)) = region.node_window(&g);
        for i in i0..i1 {
            let r = g.r(i);
            for j in j0..j1 {
                let z = g.z(j);
                let w = region.ring_fraction(r, z) + region.ring_fraction(r, -z);
                if w == 0.0 {
                    continue;
                }
                let n = g.idx(i, j);
                let m = w * self.mass[n];
                k += m * self.kinetic[n];
                g2 += m * self.g2[n];
                c += m * self.coupling[n];
            }
        }
        let (k, g2, c) = (2.0 * PI * k, 2.0 * PI * g2, 2.0 * PI * c);
        LocalMeasure {
            region,
            kinetic_part: k,
            g2_part: g2,
            coupling_part: c,
            total: k + g2 + c,
        }
    }

    pub fn total(&self) -> f64 {
        self.measure(Region::Whole).total
    }
}

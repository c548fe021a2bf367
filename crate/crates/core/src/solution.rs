//! From a constrained minimizer to a solution of the coupled system.
//!
//! If `ū` minimizes `J_q` on `M` with multiplier `λ`, then `ũ = ū(·/√λ)`,
//! `φ̃ = φ_ū(·/√λ)` solve
//!
//! ```text
//! −Δũ + q′φ̃ũ = g(ũ),   −Δφ̃ = q′ũ²,   q′ = q/λ.
//! ```

use serde::{Deserialize, Serialize};

use crate::energy::Functional;
use crate::error::{Result, SolverError};
use crate::field::{dilate, AxiField, Parity, Stencil};
use crate::minimizer::MinimizeResult;
use crate::nonlinearity::BLNonlinearity;
use crate::poisson::{PoissonOptions, PoissonSolver};

/// How `x ↦ ū(x/√λ)` is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RescaleMode {
    /// Keep the node values and stretch the grid by `√λ`. Exact for the
    /// discrete operators.
    #[default]
    GridScaling,
    /// Bilinear dilation on the original grid.
    Interpolate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignReport {
    /// Lower edge of the checked band `{z ≥ band_z, |u| ≥ 1% max u}`.
    pub band_z: f64,
    pub min_u_band: f64,
    pub max_u: f64,
    pub min_phi: f64,
    pub max_phi: f64,
    /// Smallest `z` from which the band condition holds.
    pub largest_band_z: f64,
    pub u_ok: bool,
    pub phi_ok: bool,
}

#[derive(Debug, Clone)]
pub struct SolutionPair {
    pub u: AxiField,
    pub phi: AxiField,
    pub q_eff: f64,
    pub lambda: f64,
    pub residual_u: f64,
    pub residual_phi: f64,
    /// `‖φ̃ − φ_check‖/‖φ_check‖` with `φ_check` solved from `ũ`.
    pub phi_consistency: f64,
    pub sign: SignReport,
    /// Both fields vanish identically.
    pub empty: bool,
}

/// Residuals of both equations for one pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemResiduals {
    pub residual_u: f64,
    pub residual_phi: f64,
    pub empty: bool,
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Residuals with the nonlinearity given as node values `g_values`.
pub fn verify_with_values(
    u: &AxiField,
    phi: &AxiField,
    q_eff: f64,
    g_values: &[f64],
) -> Result<SystemResiduals> {
    u.same_grid(phi)?;
    if u.parity() != Parity::OddInZ || phi.parity() != Parity::EvenInZ {
        return Err(SolverError::ParityMismatch(
            "verify expects odd u and even φ".into(),
        ));
    }
    let g = *u.grid();
    let st = Stencil::new(g);
    let n = g.len();
    let mut lap_u = vec![0.0; n];
    st.neg_laplacian(u.values(), Parity::OddInZ, &mut lap_u);
    let mut lap_phi = vec![0.0; n];
    st.neg_laplacian(phi.values(), Parity::EvenInZ, &mut lap_phi);
    let (uv, pv) = (u.values(), phi.values());
    let odd_free = st.free_mask(Parity::OddInZ);
    let even_free = st.free_mask(Parity::EvenInZ);
    let masked = |free: &[bool], f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        (0..n).map(|k| if free[k] { f(k) } else { 0.0 }).collect()
    };
    let gv = masked(&odd_free, &|k| g_values[k]);
    let res_u = masked(&odd_free, &|k| {
        lap_u[k] + q_eff * pv[k] * uv[k] - g_values[k]
    });
    let src = masked(&even_free, &|k| q_eff * uv[k] * uv[k]);
    let res_phi = masked(&even_free, &|k| lap_phi[k] - src[k]);
    let norm = |x: &[f64]| st.inner_values(x, x).sqrt();
    let den_u = norm(&lap_u).max(norm(&gv));
    let den_phi = norm(&lap_phi).max(norm(&src));
    Ok(SystemResiduals {
        residual_u: ratio(norm(&res_u), den_u),
        residual_phi: ratio(norm(&res_phi), den_phi),
        empty: den_u == 0.0 && den_phi == 0.0,
    })
}

/// `‖−Δũ + q′φ̃ũ − g(ũ)‖ / max(‖Δũ‖, ‖g(ũ)‖)` and the analogue for `φ̃`.
pub fn verify_system(
    u: &AxiField,
    phi: &AxiField,
    q_eff: f64,
    nl: &BLNonlinearity,
) -> Result<SystemResiduals> {
    let gv: Vec<f64> = u.values().iter().map(|&v| nl.g(v)).collect();
    verify_with_values(u, phi, q_eff, &gv)
}

/// Sign structure of a pair. The band starts at `band_z`.
pub fn sign_report(u: &AxiField, phi: &AxiField, band_z: f64) -> SignReport {
    let g = *u.grid();
    let max_u = u.max();
    let level = 0.01 * max_u.abs();
    let tol_u = 1e-8 * max_u.abs();
    let mut min_u_band = f64::INFINITY;
    // last row holding a significant negative value
    let mut last_bad: Option<usize> = None;
    for i in 0..g.n_r() {
        for j in 1..g.n_z() {
            let v = u.get(i, j);
            if v.abs() < level {
                continue;
            }
            if g.z(j) >= band_z - 1e-12 * g.z_max() {
                min_u_band = min_u_band.min(v);
            }
            if v < -tol_u {
                last_bad = Some(last_bad.map_or(j, |b: usize| b.max(j)));
            }
        }
    }
    let largest_band_z = match last_bad {
        None => g.h_z(),
        Some(j) if j + 1 < g.n_z() => g.z(j + 1),
        Some(_) => g.z_max(),
    };
    let (min_phi, max_phi) = (phi.min(), phi.max());
    SignReport {
        band_z,
        min_u_band: if min_u_band.is_finite() {
            min_u_band
        } else {
            0.0
        },
        max_u,
        min_phi,
        max_phi,
        largest_band_z,
        u_ok: !(min_u_band < -tol_u),
        phi_ok: min_phi >= -1e-10 * max_phi.abs(),
    }
}

/// Rescales a converged minimizer and verifies the resulting pair.
pub fn rescale_to_solution(
    result: &MinimizeResult,
    q: f64,
    nl: &BLNonlinearity,
    poisson: PoissonOptions,
    mode: RescaleMode,
) -> Result<SolutionPair> {
    let lambda = result.lambda;
    if !(lambda > 0.0) {
        return Err(SolverError::NegativeMultiplier(lambda));
    }
    let s = lambda.sqrt();
    let q_eff = q / lambda;
    let (u, phi) = match mode {
        RescaleMode::GridScaling => (
            result.u_min.on_scaled_grid(s)?,
            result.phi.on_scaled_grid(s)?,
        ),
        RescaleMode::Interpolate => {
            let u = dilate(&result.u_min, s)?;
            let st = Stencil::new(*u.grid());
            let before = st.inner_values(result.u_min.values(), result.u_min.values()) * s * s * s;
            let after = st.inner_values(u.values(), u.values());
            if before > 0.0 && (after - before).abs() > 0.05 * before {
                return Err(SolverError::DomainTooSmall(format!(
                    "rescaling by √λ = {s:.4} moves the solution out of the box"
                )));
            }
            (u, dilate(&result.phi, s)?)
        }
    };
    let check = PoissonSolver::new(*u.grid(), poisson).solve_phi(&u, q_eff, Some(&phi))?;
    let st = Stencil::new(*u.grid());
    let diff: Vec<f64> = phi
        .values()
        .iter()
        .zip(check.phi.values())
        .map(|(a, b)| a - b)
        .collect();
    let den = st
        .inner_values(check.phi.values(), check.phi.values())
        .sqrt();
    let phi_consistency = ratio(st.inner_values(&diff, &diff).sqrt(), den);
    let res = verify_system(&u, &phi, q_eff, nl)?;
    let sign = sign_report(&u, &phi, 2.0 * u.grid().h_z());
    Ok(SolutionPair {
        u,
        phi,
        q_eff,
        lambda,
        residual_u: res.residual_u,
        residual_phi: res.residual_phi,
        phi_consistency,
        sign,
        empty: res.empty,
    })
}

/// `|u|` on the stored half-grid, i.e. `±|u|` on `z ≷ 0`.
pub fn sign_normalize(u: &AxiField) -> AxiField {
    u.map(u.parity(), f64::abs)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignNormalizeReport {
    pub delta_j: f64,
    pub delta_g: f64,
    /// Number of half-grid edges across which `u` changes sign.
    pub interfaces: usize,
    pub changed: bool,
}

/// [`sign_normalize`] with the energy bookkeeping. Energies must agree to
/// `10⁻⁸` relative, or `10⁻³` when sign changes are present.
pub fn sign_normalize_checked(
    functional: &Functional,
    u: &AxiField,
) -> Result<(AxiField, SignNormalizeReport)> {
    let v = sign_normalize(u);
    let changed = v != *u;
    let g = *u.grid();
    let mut interfaces = 0;
    for i in 0..g.n_r() {
        for j in 1..g.n_z() {
            let a = u.get(i, j);
            if j + 1 < g.n_z() && a * u.get(i, j + 1) < 0.0 {
                interfaces += 1;
            }
            if i + 1 < g.n_r() && a * u.get(i + 1, j) < 0.0 {
                interfaces += 1;
            }
        }
    }
    let (ju, jv) = if changed {
        (
            functional.evaluate(u)?.energy.j,
            functional.evaluate(&v)?.energy.j,
        )
    } else {
        (0.0, 0.0)
    };
    let delta_j = (jv - ju).abs();
    let delta_g = if changed {
        (functional.constraint(&v)? - functional.constraint(u)?).abs()
    } else {
        0.0
    };
    let tol = if interfaces > 0 { 1e-3 } else { 1e-8 };
    if delta_j > tol * ju.abs().max(1.0) || delta_g > tol {
        log::warn!("sign normalization moved J by {delta_j:.3e} and ∫G by {delta_g:.3e}");
    }
    Ok((
        v,
        SignNormalizeReport {
            delta_j,
            delta_g,
            interfaces,
            changed,
        },
    ))
}

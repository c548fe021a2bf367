//! The constraint set `M = {∫G(u) = 1}`, the seed family
//! `ρ_R(r, z) = ξ α_R(r) β_R(z)`, and the dilation retraction onto `M`.
//!
//! Dilation restores the constraint: `∫G(u(·/σ)) = σ³∫G(u)`, so
//! `σ = I^{−1/3}` lands on `M` in the continuum. On the grid that first
//! guess is polished by a safeguarded secant iteration in `log σ`. The
//! descent retracts along a normal direction instead ([`retract_along`]),
//! since grid dilation is not smooth in `σ` on narrow fields.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::field::{dilate, AxiField, AxiGrid, Parity, Stencil};
use crate::nonlinearity::BLNonlinearity;

/// Default feasibility floor for `∫G` before a projection is attempted.
pub const DELTA_FEAS: f64 = 1e-6;
/// Target accuracy of `|∫G − 1|`.
pub const CONSTRAINT_TOL: f64 = 1e-8;

/// `1` on `|t| < R`, linear ramp to `0` on `[R, R+1)`.
pub fn alpha_r(t: f64, r: f64) -> f64 {
    let a = t.abs();
    if a < r {
        1.0
    } else if a < r + 1.0 {
        r + 1.0 - a
    } else {
        0.0
    }
}

/// Odd profile: `0` on `[0, 1]`, `t − 1` on `(1, 2]`, `1` on `(2, R]`,
/// `R + 1 − t` on `(R, R+1]`, `0` beyond.
pub fn beta_r(t: f64, r: f64) -> f64 {
    if t < 0.0 {
        return -beta_r(-t, r);
    }
    if t <= 1.0 {
        0.0
    } else if t <= 2.0 {
        t - 1.0
    } else if t <= r {
        1.0
    } else if t <= r + 1.0 {
        r + 1.0 - t
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedParams {
    /// Plateau size `R` (> 2 for a nonempty plateau).
    #[serde(rename = "R")]
    pub radius: f64,
    /// Plateau height `ξ`; needs `G(ξ) > 0`.
    pub amplitude: f64,
    /// Heat-smoothing width applied after construction; 0 disables it.
    pub mollify: f64,
}

impl Default for SeedParams {
    fn default() -> Self {
        Self {
            radius: 2.5,
            amplitude: 1.8,
            mollify: 0.0,
        }
    }
}

fn integral_g(st: &Stencil, values: &[f64], nl: &BLNonlinearity) -> f64 {
    4.0 * std::f64::consts::PI
        * st.mass()
            .iter()
            .zip(values)
            .map(|(m, &v)| m * nl.big_g(v))
            .sum::<f64>()
}

/// `u(r, z) = ρ_R(r/s, z/s)` sampled exactly at the nodes.
fn sample_seed(grid: AxiGrid, p: &SeedParams, s: f64) -> AxiField {
    AxiField::from_fn(grid, Parity::OddInZ, |r, z| {
        p.amplitude * alpha_r(r / s, p.radius) * beta_r(z / s, p.radius)
    })
}

/// Secant iteration on `log F(x) = 0`, `x = log σ`, with bracketing once a
/// sign change is seen. `f` returns `∫G` at dilation `σ`.
fn polish(mut f: impl FnMut(f64) -> Result<f64>, sigma0: f64, slope0: f64) -> Result<(f64, f64)> {
    let mut x = sigma0.ln();
    let mut fx = f(sigma0)?;
    if fx <= 0.0 {
        return Err(SolverError::ConstraintInfeasible { integral: fx });
    }
    let mut y = fx.ln();
    let mut slope = slope0;
    let mut lo: Option<(f64, f64)> = None;
    let mut hi: Option<(f64, f64)> = None;
    for _ in 0..60 {
        if (fx - 1.0).abs() <= CONSTRAINT_TOL {
            return Ok((x.exp(), fx));
        }
        if y < 0.0 {
            lo = Some((x, y));
        } else {
            hi = Some((x, y));
        }
        let mut next = if slope.is_finite() && slope > 0.0 {
            x - y / slope
        } else {
            f64::NAN
        };
        if let (Some((xl, yl)), Some((xh, yh))) = (lo, hi) {
            let (a, b) = if xl < xh { (xl, xh) } else { (xh, xl) };
            if !(next > a && next < b) {
                // regula falsi inside the bracket
                next = xl - yl * (xh - xl) / (yh - yl);
                if !(next > a && next < b) {
                    next = 0.5 * (a + b);
                }
            }
        } else if !next.is_finite() || (next - x).abs() > 1.0 {
            next = x - y.signum() * 0.5;
        }
        let fn_ = f(next.exp())?;
        if fn_ <= 0.0 {
            // shrink toward the last feasible point
            hi = None;
            lo = lo.or(Some((x, y)));
            slope = f64::NAN;
            x = 0.5 * (x + next);
            fx = f(x.exp())?;
            if fx <= 0.0 {
                return Err(SolverError::ConstraintInfeasible { integral: fx });
            }
            y = fx.ln();
            continue;
        }
        let yn = fn_.ln();
        slope = if next != x {
            (yn - y) / (next - x)
        } else {
            slope
        };
        x = next;
        fx = fn_;
        y = yn;
    }
    if (fx - 1.0).abs() <= 1e3 * CONSTRAINT_TOL {
        Ok((x.exp(), fx))
    } else {
        Err(SolverError::NoConvergence {
            iterations: 60,
            residual: (fx - 1.0).abs(),
        })
    }
}

/// Builds the seed `ρ_R(·/σ)` on `grid`, dilated onto `M`.
pub fn build_seed(grid: AxiGrid, params: &SeedParams, nl: &BLNonlinearity) -> Result<AxiField> {
    if !(params.radius > 2.0) || !params.radius.is_finite() {
        return Err(SolverError::Config(format!(
            "seed.R must exceed 2, got {}",
            params.radius
        )));
    }
    if !(params.amplitude > 0.0) || !params.amplitude.is_finite() {
        return Err(SolverError::Config(format!(
            "seed.amplitude must be positive, got {}",
            params.amplitude
        )));
    }
    if !(params.mollify >= 0.0) {
        return Err(SolverError::Config(format!(
            "seed.mollify must be nonnegative, got {}",
            params.mollify
        )));
    }
    if nl.big_g(params.amplitude) <= 0.0 {
        return Err(SolverError::SeedInfeasible {
            integral: nl.big_g(params.amplitude),
        });
    }
    let st = Stencil::new(grid);
    let extent = params.radius + 1.0;
    let fit = grid.r_max().min(grid.z_max()) / extent;
    // trial scale: support fills half the box
    let s_trial = 0.5 * fit;
    let i_trial = integral_g(&st, sample_seed(grid, params, s_trial).values(), nl);
    if i_trial <= 0.0 {
        return Err(SolverError::SeedInfeasible { integral: i_trial });
    }
    let too_big = |s: f64| {
        SolverError::DomainTooSmall(format!(
            "seed support {:.3} exceeds the box (r_max = {}, z_max = {}); enlarge the box",
            s * extent,
            grid.r_max(),
            grid.z_max()
        ))
    };
    let s0 = s_trial * i_trial.powf(-1.0 / 3.0);
    if s0 > fit {
        return Err(too_big(s0));
    }
    let sampled = |s: f64| {
        if s > fit {
            Err(too_big(s))
        } else {
            Ok(integral_g(&st, sample_seed(grid, params, s).values(), nl))
        }
    };
    let (s, _) = polish(sampled, s0, 3.0).map_err(|e| match e {
        SolverError::ConstraintInfeasible { integral } => SolverError::SeedInfeasible { integral },
        other => other,
    })?;
    let h = grid.h_r().max(grid.h_z());
    if s < 2.0 * h {
        log::warn!(
            "seed ramps are {:.2} cells wide; the seed is under-resolved",
            s / h
        );
    }
    let seed = sample_seed(grid, params, s);
    if params.mollify > 0.0 {
        let smooth = mollify(&seed, params.mollify);
        return project_to_m(&smooth, nl).map(|(u, _)| u);
    }
    Ok(seed)
}

/// Explicit heat flow for time `width²/2` with the grid Laplacian.
fn mollify(u: &AxiField, width: f64) -> AxiField {
    let g = *u.grid();
    let st = Stencil::new(g);
    let h = g.h_r().min(g.h_z());
    let total = 0.5 * width * width;
    // stable for the 5-point stencil with the axis factor 4
    let dt_max = 0.1 * h * h;
    let steps = (total / dt_max).ceil().max(1.0) as usize;
    let dt = total / steps as f64;
    let mut v = u.values().to_vec();
    let mut lap = vec![0.0; v.len()];
    for _ in 0..steps {
        st.neg_laplacian(&v, Parity::OddInZ, &mut lap);
        v.iter_mut().zip(&lap).for_each(|(x, l)| *x -= dt * l);
    }
    AxiField::from_values(g, Parity::OddInZ, v).expect("heat flow keeps values finite")
}

/// Dilation onto `M`: returns `u(·/σ)` with `|∫G − 1| ≤ 10⁻⁸` and `σ`.
pub fn project_to_m(u: &AxiField, nl: &BLNonlinearity) -> Result<(AxiField, f64)> {
    project_to_m_with(u, nl, DELTA_FEAS)
}

pub fn project_to_m_with(
    u: &AxiField,
    nl: &BLNonlinearity,
    delta_feas: f64,
) -> Result<(AxiField, f64)> {
    if u.parity() != Parity::OddInZ {
        return Err(SolverError::ParityMismatch(
            "M consists of odd fields".into(),
        ));
    }
    u.check_finite()?;
    let st = Stencil::new(*u.grid());
    let i0 = integral_g(&st, u.values(), nl);
    if !(i0 > delta_feas) {
        return Err(SolverError::ConstraintInfeasible { integral: i0 });
    }
    if (i0 - 1.0).abs() <= CONSTRAINT_TOL {
        return Ok((u.clone(), 1.0));
    }
    let sigma0 = i0.powf(-1.0 / 3.0);
    let (sigma, _) = polish(
        |s| Ok(integral_g(&st, dilate(u, s)?.values(), nl)),
        sigma0,
        3.0,
    )?;
    Ok((dilate(u, sigma)?, sigma))
}

/// Retraction onto `M` along a fixed normal `n`: finds `t` with
/// `∫G(u + t·n) = 1` by Newton's method. Smooth in `u`, unlike the discrete
/// dilation, whose `σ ↦ ∫G` can kink at `σ = 1` on under-resolved fields.
pub fn retract_along(
    u: &AxiField,
    normal: &AxiField,
    nl: &BLNonlinearity,
) -> Result<(AxiField, f64)> {
    if u.parity() != Parity::OddInZ || normal.parity() != Parity::OddInZ {
        return Err(SolverError::ParityMismatch(
            "M consists of odd fields".into(),
        ));
    }
    let st = Stencil::new(*u.grid());
    let four_pi = 4.0 * std::f64::consts::PI;
    let (uv, nv) = (u.values(), normal.values());
    let mut v = uv.to_vec();
    let mut t = 0.0;
    for _ in 0..30 {
        let f = integral_g(&st, &v, nl) - 1.0;
        if f.abs() <= CONSTRAINT_TOL {
            return Ok((AxiField::from_values(*u.grid(), Parity::OddInZ, v)?, t));
        }
        let df = four_pi
            * st.mass()
                .iter()
                .zip(&v)
                .zip(nv)
                .map(|((m, &x), &n)| m * nl.g(x) * n)
                .sum::<f64>();
        if !(df.abs() > 0.0) || !(f / df).is_finite() {
            break;
        }
        t -= f / df;
        for k in 0..v.len() {
            v[k] = uv[k] + t * nv[k];
        }
    }
    Err(SolverError::NoConvergence {
        iterations: 30,
        residual: (integral_g(&st, &v, nl) - 1.0).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{apply_tg_oddness_check, integrate};

    fn nl() -> BLNonlinearity {
        BLNonlinearity::power(3.0, 1.0).unwrap()
    }

    #[test]
    fn profile_values() {
        assert_eq!(alpha_r(3.0, 6.0), 1.0);
        assert_eq!(alpha_r(6.5, 6.0), 0.5);
        assert_eq!(alpha_r(-7.5, 6.0), 0.0);
        assert_eq!(beta_r(1.5, 6.0), 0.5);
        assert_eq!(beta_r(-3.0, 6.0), -1.0);
        assert_eq!(beta_r(0.5, 6.0), 0.0);
        assert_eq!(beta_r(6.25, 6.0), 0.75);
        assert_eq!(beta_r(0.0, 6.0), 0.0);
    }

    #[test]
    fn normal_retraction_restores_constraint() {
        let g = AxiGrid::new(48, 96, 8.0, 16.0).unwrap();
        let nl = nl();
        let seed = build_seed(g, &SeedParams::default(), &nl).unwrap();
        let normal = seed.map(Parity::OddInZ, |v| nl.g(v));
        let off = seed.map(Parity::OddInZ, |v| 1.03 * v);
        let (back, t) = retract_along(&off, &normal, &nl).unwrap();
        let i = integrate(&back.map(Parity::EvenInZ, |v| nl.big_g(v))).unwrap();
        assert!((i - 1.0).abs() <= CONSTRAINT_TOL, "{i}");
        assert!(t != 0.0);
        let (same, t0) = retract_along(&seed, &normal, &nl).unwrap();
        assert_eq!(t0, 0.0);
        assert_eq!(same.values(), seed.values());
        let even = seed.map(Parity::EvenInZ, |v| v);
        assert!(retract_along(&even, &normal, &nl).is_err());
    }

    #[test]
    fn seed_lands_on_m() {
        let g = AxiGrid::new(64, 128, 8.0, 16.0).unwrap();
        let nl = nl();
        let p = SeedParams {
            radius: 6.0,
            amplitude: 2.5,
            mollify: 0.0,
        };
        let unit = sample_seed(g, &p, 1.0);
        assert!(integral_g(&Stencil::new(g), unit.values(), &nl) > 0.0);
        let seed = build_seed(g, &SeedParams::default(), &nl).unwrap();
        let i = integrate(&seed.map(Parity::EvenInZ, |v| nl.big_g(v))).unwrap();
        assert!((i - 1.0).abs() <= 1e-8, "{i}");
        assert_eq!(apply_tg_oddness_check(&seed), 0.0);
    }

    #[test]
    fn seed_infeasible_and_domain_checks() {
        let g = AxiGrid::new(32, 64, 4.0, 8.0).unwrap();
        let nl = nl();
        // G(1.2) < 0 for p = 3, ω = 1
        let bad = SeedParams {
            radius: 4.0,
            amplitude: 1.2,
            mollify: 0.0,
        };
        assert!(matches!(
            build_seed(g, &bad, &nl),
            Err(SolverError::SeedInfeasible { .. })
        ));
        let tiny = AxiGrid::new(16, 16, 0.3, 0.3).unwrap();
        let p = SeedParams {
            radius: 6.0,
            amplitude: 2.5,
            mollify: 0.0,
        };
        assert!(matches!(
            build_seed(tiny, &p, &nl),
            Err(SolverError::DomainTooSmall(_))
        ));
    }

    #[test]
    fn projection_scales_and_is_idempotent() {
        let g = AxiGrid::new(64, 128, 8.0, 16.0).unwrap();
        let nl = nl();
        let seed = build_seed(g, &SeedParams::default(), &nl).unwrap();
        let (same, sigma) = project_to_m(&seed, &nl).unwrap();
        assert!((sigma - 1.0).abs() <= 1e-6);
        assert_eq!(same, seed);
        // halving the length scale divides ∫G by about 8
        let wide = AxiField::from_fn(g, Parity::OddInZ, |r, z| {
            4.0 * (z / 0.5).tanh() * (-(r * r + (z - 2.0).powi(2)) / 2.0).exp()
        });
        let st = Stencil::new(g);
        let i_wide = integral_g(&st, wide.values(), &nl);
        let i_half = integral_g(&st, dilate(&wide, 0.5).unwrap().values(), &nl);
        assert!(
            (i_half - i_wide / 8.0).abs() <= 0.02 * i_wide / 8.0,
            "{i_half} vs {}",
            i_wide / 8.0
        );
        let (back, sigma) = project_to_m(&wide, &nl).unwrap();
        assert!(
            (sigma - i_wide.powf(-1.0 / 3.0)).abs() <= 0.02 * sigma,
            "{sigma}"
        );
        let i = integral_g(&st, back.values(), &nl);
        assert!((i - 1.0).abs() <= 1e-8);
        let zero = AxiField::zeros(g, Parity::OddInZ);
        assert!(matches!(
            project_to_m(&zero, &nl),
            Err(SolverError::ConstraintInfeasible { .. })
        ));
    }

    #[test]
    fn mollified_seed_is_on_m() {
        let g = AxiGrid::new(64, 128, 8.0, 16.0).unwrap();
        let nl = nl();
        let p = SeedParams {
            mollify: 0.04,
            ..SeedParams::default()
        };
        let seed = build_seed(g, &p, &nl).unwrap();
        let i = integrate(&seed.map(Parity::EvenInZ, |v| nl.big_g(v))).unwrap();
        assert!((i - 1.0).abs() <= 1e-8);
    }
}

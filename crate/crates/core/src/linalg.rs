//! Matrix-free conjugate gradients on masked node vectors, and an exact
//! fast-diagonalization solver for the separable axisymmetric stiffness.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, SolverError};
use crate::field::{AxiGrid, Parity};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOutcome {
    pub iterations: usize,
    pub relative_residual: f64,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place linear operator `out = A v`.
pub type LinearOp<'a> = &'a mut dyn FnMut(&[f64], &mut [f64]);

/// Solves `A x = b` for a symmetric positive-definite `A` restricted to the
/// entries where `mask` is true. `apply` may write anything at masked-out
/// entries; they are zeroed before use. `precondition`, when given, applies
/// an SPD approximation of `A⁻¹` and must leave masked-out entries at zero.
/// `x` holds the initial guess on entry.
pub fn conjugate_gradient(
    apply: LinearOp,
    b: &[f64],
    x: &mut [f64],
    mask: &[bool],
    mut precondition: Option<LinearOp>,
    tol: f64,
    max_iter: usize,
) -> Result<CgOutcome> {
    let n = b.len();
    for k in 0..n {
        if !mask[k] {
            x[k] = 0.0;
        }
    }
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(CgOutcome {
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let mut ap = vec![0.0; n];
    let masked_apply = |apply: &mut dyn FnMut(&[f64], &mut [f64]), v: &[f64], out: &mut [f64]| {
        apply(v, out);
        for k in 0..n {
            if !mask[k] {
                out[k] = 0.0;
            }
        }
    };
    masked_apply(apply, x, &mut ap);
    let mut r: Vec<f64> = (0..n)
        .map(|k| if mask[k] { b[k] - ap[k] } else { 0.0 })
        .collect();
    let mut precondition = |r: &[f64], z: &mut [f64]| match precondition.as_mut() {
        Some(p) => p(r, z),
        None => z.copy_from_slice(r),
    };
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut res = dot(&r, &r).sqrt() / b_norm;
    let mut it = 0;
    while res > tol {
        if it >= max_iter {
            return Err(SolverError::NoConvergence {
                iterations: it,
                residual: res,
            });
        }
        masked_apply(apply, &p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            return Err(SolverError::NoConvergence {
                iterations: it,
                residual: res,
            });
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        precondition(&r, &mut z);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
        res = dot(&r, &r).sqrt() / b_norm;
        it += 1;
    }
    Ok(CgOutcome {
        iterations: it,
        relative_residual: res,
    })
}

/// Exact solver for `(S + c·M) x = b` restricted to the free nodes of one
/// parity, where `S` is the finite-volume stiffness and `M` the mass.
///
/// `S = W_z ⊗ A_r + V_r ⊗ A_z` and `M = V_r ⊗ W_z` with diagonal `W_z`, `V_r`,
/// so the generalized eigenvectors `A_z ψ_k = λ_k W_z ψ_k` reduce the system
/// to one tridiagonal solve `(A_r + (λ_k + c)V_r) c_k = ψ_kᵀ b` per mode.
#[derive(Debug, Clone)]
pub struct SeparableSolver {
    n_z: usize,
    free_j: Vec<usize>,
    /// `ψ_k(j)` at `[j·n_modes + k]`.
    psi: Vec<f64>,
    lambda: Vec<f64>,
    radial_diag: Vec<f64>,
    radial_off: Vec<f64>,
    volume: Vec<f64>,
}

impl SeparableSolver {
    pub fn new(grid: &AxiGrid, parity: Parity) -> Self {
        let (n_r, n_z) = (grid.n_r(), grid.n_z());
        let free_j: Vec<usize> = (0..n_z - 1)
            .filter(|&j| parity == Parity::EvenInZ || j > 0)
            .collect();
        let m = free_j.len();
        let inv_h = 1.0 / grid.h_z();
        let w_isqrt: Vec<f64> = free_j
            .iter()
            .map(|&j| grid.axial_weight(j).powf(-0.5))
            .collect();
        // W^{-1/2} A_z W^{-1/2}
        let mut b = DMatrix::<f64>::zeros(m, m);
        for (a, &j) in free_j.iter().enumerate() {
            let edges = if j == 0 { 1.0 } else { 2.0 };
            b[(a, a)] = edges * inv_h * w_isqrt[a] * w_isqrt[a];
            if a + 1 < m {
                let v = -inv_h * w_isqrt[a] * w_isqrt[a + 1];
                b[(a, a + 1)] = v;
                b[(a + 1, a)] = v;
            }
        }
        let eig = SymmetricEigen::new(b);
        let mut psi = vec![0.0; m * m];
        for a in 0..m {
            for k in 0..m {
                psi[a * m + k] = w_isqrt[a] * eig.eigenvectors[(a, k)];
            }
        }
        let lambda = eig.eigenvalues.iter().copied().collect();
        let nfr = n_r - 1;
        let coef = |i: usize| i as f64 + 0.5;
        let radial_diag = (0..nfr)
            .map(|i| coef(i) + if i > 0 { coef(i - 1) } else { 0.0 })
            .collect();
        let radial_off = (0..nfr.saturating_sub(1)).map(|i| -coef(i)).collect();
        let volume = (0..nfr).map(|i| grid.radial_volume(i)).collect();
        Self {
            n_z,
            free_j,
            psi,
            lambda,
            radial_diag,
            radial_off,
            volume,
        }
    }

    /// Solves `(S + shift·M) x = b` on the free nodes; other entries of `x`
    /// are set to zero and other entries of `b` are ignored.
    pub fn solve(&self, shift: f64, b: &[f64], x: &mut [f64]) {
        let m = self.free_j.len();
        let nfr = self.volume.len();
        let n_z = self.n_z;
        let mut d = vec![0.0; nfr * m];
        for i in 0..nfr {
            let row = &mut d[i * m..(i + 1) * m];
            for (a, &j) in self.free_j.iter().enumerate() {
                let bj = b[i * n_z + j];
                if bj != 0.0 {
                    let p = &self.psi[a * m..(a + 1) * m];
                    row.iter_mut().zip(p).for_each(|(r, p)| *r += bj * p);
                }
            }
        }
        // Thomas sweep over i, all modes at once
        let mut cp = vec![0.0; nfr * m];
        let mut denom = vec![0.0; m];
        for i in 0..nfr {
            for k in 0..m {
                let diag = self.radial_diag[i] + (self.lambda[k] + shift) * self.volume[i];
                let (den, rhs) = if i == 0 {
                    (diag, d[k])
                } else {
                    let l = self.radial_off[i - 1];
                    (
                        diag - l * cp[(i - 1) * m + k],
                        d[i * m + k] - l * d[(i - 1) * m + k],
                    )
                };
                denom[k] = den;
                d[i * m + k] = rhs / den;
                cp[i * m + k] = if i + 1 < nfr {
                    self.radial_off[i] / den
                } else {
                    0.0
                };
            }
        }
        for i in (0..nfr.saturating_sub(1)).rev() {
            for k in 0..m {
                d[i * m + k] -= cp[i * m + k] * d[(i + 1) * m + k];
            }
        }
        x.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..nfr {
            let c = &d[i * m..(i + 1) * m];
            for (a, &j) in self.free_j.iter().enumerate() {
                let p = &self.psi[a * m..(a + 1) * m];
                x[i * n_z + j] = p.iter().zip(c).map(|(p, c)| p * c).sum();
            }
        }
    }
}

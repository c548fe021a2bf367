//! Cylindrically symmetric fields on ℝ³ stored on the half-plane `(r, z ≥ 0)`.
//!
//! A node `(i, j)` sits at `(i·h_r, j·h_z)`; column `i = 0` is the symmetry
//! axis and row `j = 0` is the plane `z = 0`. Only `z ≥ 0` is stored: the
//! lower half is recovered from the declared [`Parity`]. Angular dependence
//! cannot be represented, so invariance under rotations about the axis holds
//! by construction.
//!
//! All discrete operators are derived from a single finite-volume Dirichlet
//! form. Each node owns the control volume
//!
//! ```text
//! m_ij = V_i · w_j,   V_0 = h_r²/8,  V_i = r_i h_r,  V_last = (r_max − h_r/4) h_r/2
//!                     w_0 = w_last = h_z/2,  w_j = h_z otherwise
//! ```
//!
//! (the `r` factor of the cylindrical measure is folded into `V_i`), and
//! the Dirichlet form is a weighted sum of squared edge differences. The
//! cylindrical Laplacian is the `m`-weighted gradient of that form, so
//! `⟨−Δ_h f, f⟩ = ‖∇_h f‖²` holds exactly whenever the outer boundary values
//! vanish. On the axis the stencil reduces to `4(u_1 − u_0)/h_r²`, i.e. the
//! regularised `2∂_rr` with an even reflection; on `z = 0` the half cell
//! reproduces the symmetric ghost, and odd fields pin the trace to zero
//! (antisymmetric ghost). Every 3D integral carries the factor
//! `4π = 2 (z-reflection) × 2π (angle)`.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};

pub const FOUR_PI: f64 = 4.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxiGrid {
    n_r: usize,
    n_z: usize,
    r_max: f64,
    z_max: f64,
}

impl AxiGrid {
    pub fn new(n_r: usize, n_z: usize, r_max: f64, z_max: f64) -> Result<Self> {
        if n_r < 8 || n_z < 8 {
            return Err(SolverError::InvalidGrid(format!(
                "need at least 8 nodes per direction, got {n_r}×{n_z}"
            )));
        }
        if !(r_max > 0.0 && r_max.is_finite() && z_max > 0.0 && z_max.is_finite()) {
            return Err(SolverError::InvalidGrid(format!(
                "box extents must be positive, got r_max = {r_max}, z_max = {z_max}"
            )));
        }
        Ok(Self {
            n_r,
            n_z,
            r_max,
            z_max,
        })
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }
    pub fn n_z(&self) -> usize {
        self.n_z
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }
    pub fn z_max(&self) -> f64 {
        self.z_max
    }
    pub fn h_r(&self) -> f64 {
        self.r_max / (self.n_r - 1) as f64
    }
    pub fn h_z(&self) -> f64 {
        self.z_max / (self.n_z - 1) as f64
    }
    pub fn len(&self) -> usize {
        self.n_r * self.n_z
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        i * self.n_z + j
    }
    #[inline]
    pub fn r(&self, i: usize) -> f64 {
        i as f64 * self.h_r()
    }
    #[inline]
    pub fn z(&self, j: usize) -> f64 {
        j as f64 * self.h_z()
    }

    /// Same node counts, box stretched by `factor` in both directions.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(SolverError::InvalidDilation(factor));
        }
        Self::new(self.n_r, self.n_z, self.r_max * factor, self.z_max * factor)
    }

    /// Outer far-field boundary (`r = r_max` or `z = z_max`).
    #[inline]
    pub fn is_outer(&self, i: usize, j: usize) -> bool {
        i + 1 == self.n_r || j + 1 == self.n_z
    }

    /// Nodes carrying unknowns for a field of the given parity.
    #[inline]
    pub fn is_free(&self, i: usize, j: usize, parity: Parity) -> bool {
        !self.is_outer(i, j) && (parity == Parity::EvenInZ || j > 0)
    }

    /// `∫ r dr` over the radial control interval of node `i`.
    pub fn radial_volume(&self, i: usize) -> f64 {
        let h = self.h_r();
        if i == 0 {
            h * h / 8.0
        } else if i + 1 == self.n_r {
            (self.r_max - 0.25 * h) * 0.5 * h
        } else {
            self.r(i) * h
        }
    }

    /// Trapezoid weight of row `j`.
    pub fn axial_weight(&self, j: usize) -> f64 {
        let h = self.h_z();
        if j == 0 || j + 1 == self.n_z {
            0.5 * h
        } else {
            h
        }
    }

    pub fn contains(&self, r: f64, z: f64) -> bool {
        let eps = 1e-12 * self.r_max.max(self.z_max);
        r >= 0.0 && z >= 0.0 && r <= self.r_max + eps && z <= self.z_max + eps
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Parity {
    OddInZ,
    EvenInZ,
}

/// Node values of a cylindrically symmetric function, row-major over `(i, j)`.
///
/// Odd fields always have a zero trace on `z = 0` and zero outer boundary
/// values. Even fields (potentials, densities) may carry nonzero boundary
/// data.
#[derive(Debug, Clone, PartialEq)]
pub struct AxiField {
    grid: AxiGrid,
    values: Vec<f64>,
    parity: Parity,
}

impl AxiField {
    pub fn zeros(grid: AxiGrid, parity: Parity) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            parity,
        }
    }

    /// Samples `f(r, z)` at every node, then imposes the odd-field invariants.
    pub fn from_fn(grid: AxiGrid, parity: Parity, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(grid.len());
        for i in 0..grid.n_r() {
            for j in 0..grid.n_z() {
                values.push(f(grid.r(i), grid.z(j)));
            }
        }
        let mut out = Self {
            grid,
            values,
            parity,
        };
        out.enforce_constraints();
        out
    }

    pub fn from_values(grid: AxiGrid, parity: Parity, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(SolverError::InvalidGrid(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        let mut out = Self {
            grid,
            values,
            parity,
        };
        out.check_finite()?;
        out.enforce_constraints();
        Ok(out)
    }

    pub fn grid(&self) -> &AxiGrid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn parity(&self) -> Parity {
        self.parity
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    /// Zeroes the trace on `z = 0` and the outer boundary for odd fields.
    pub fn enforce_constraints(&mut self) {
        if self.parity != Parity::OddInZ {
            return;
        }
        let g = self.grid;
        for i in 0..g.n_r() {
            for j in 0..g.n_z() {
                if !g.is_free(i, j, Parity::OddInZ) {
                    self.values[g.idx(i, j)] = 0.0;
                }
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(k) => Err(SolverError::NonFiniteField {
                i: k / self.grid.n_z(),
                j: k % self.grid.n_z(),
            }),
        }
    }

    /// Pointwise image under `f`, tagged with `parity`.
    pub fn map(&self, parity: Parity, f: impl Fn(f64) -> f64) -> Self {
        let mut out = Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
            parity,
        };
        out.enforce_constraints();
        out
    }

    pub fn zip_map(
        &self,
        other: &Self,
        parity: Parity,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self> {
        self.same_grid(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| f(a, b))
            .collect();
        let mut out = Self {
            grid: self.grid,
            values,
            parity,
        };
        out.enforce_constraints();
        Ok(out)
    }

    pub fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid == other.grid {
            Ok(())
        } else {
            Err(SolverError::GridMismatch)
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
    pub fn max(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Same values on a stretched copy of the grid: the exact discrete form of
    /// `x ↦ u(x/factor)`.
    pub fn on_scaled_grid(&self, factor: f64) -> Result<Self> {
        Ok(Self {
            grid: self.grid.scaled(factor)?,
            values: self.values.clone(),
            parity: self.parity,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,z,value")?;
        let g = &self.grid;
        for i in 0..g.n_r() {
            for j in 0..g.n_z() {
                writeln!(w, "{:.15e},{:.15e},{:.15e}", g.r(i), g.z(j), self.get(i, j))?;
            }
        }
        Ok(())
    }

    pub fn write_csv_file(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))?;
        Ok(())
    }

    /// Reads a field dump written by [`AxiField::write_csv`]; the grid is
    /// reconstructed from the node coordinates.
    pub fn read_csv<R: Read>(reader: R, parity: Parity) -> Result<Self> {
        let mut lines = BufReader::new(reader).lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "r,z,value" => {}
            _ => return Err(SolverError::Parse("missing header `r,z,value`".into())),
        }
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split(',').map(|s| s.trim().parse::<f64>());
            let mut next = || -> Result<f64> {
                parts
                    .next()
                    .ok_or_else(|| SolverError::Parse(format!("line {}: too few columns", n + 2)))?
                    .map_err(|e| SolverError::Parse(format!("line {}: {e}", n + 2)))
            };
            rows.push((next()?, next()?, next()?));
        }
        let z_count = rows.iter().take_while(|row| row.0 == rows[0].0).count();
        if z_count == 0 || rows.len() % z_count != 0 {
            return Err(SolverError::Parse("rows do not form a tensor grid".into()));
        }
        let n_r = rows.len() / z_count;
        let r_max = rows.last().map(|row| row.0).unwrap_or(0.0);
        let z_max = rows[z_count - 1].1;
        let grid = AxiGrid::new(n_r, z_count, r_max, z_max)?;
        Self::from_values(grid, parity, rows.into_iter().map(|row| row.2).collect())
    }

    pub fn read_csv_file(path: impl AsRef<Path>, parity: Parity) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, parity)
    }
}

/// Precomputed finite-volume weights for one grid.
#[derive(Debug, Clone)]
pub struct Stencil {
    grid: AxiGrid,
    axial: Vec<f64>,
    radial_edge: Vec<f64>,
    axial_edge: Vec<f64>,
    mass: Vec<f64>,
}

impl Stencil {
    pub fn new(grid: AxiGrid) -> Self {
        let radial: Vec<f64> = (0..grid.n_r()).map(|i| grid.radial_volume(i)).collect();
        let axial: Vec<f64> = (0..grid.n_z()).map(|j| grid.axial_weight(j)).collect();
        // r_{i+1/2} h_r / h_r²
        let radial_edge = (0..grid.n_r() - 1).map(|i| i as f64 + 0.5).collect();
        let axial_edge = radial.iter().map(|v| v / grid.h_z()).collect();
        let mut mass = Vec::with_capacity(grid.len());
        for v in &radial {
            for w in &axial {
                mass.push(v * w);
            }
        }
        Self {
            grid,
            axial,
            radial_edge,
            axial_edge,
            mass,
        }
    }

    pub fn grid(&self) -> &AxiGrid {
        &self.grid
    }

    /// Control-volume weights (without the 4π factor).
    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn integrate_values(&self, f: &[f64]) -> f64 {
        FOUR_PI * self.mass.iter().zip(f).map(|(m, v)| m * v).sum::<f64>()
    }

    pub fn inner_values(&self, a: &[f64], b: &[f64]) -> f64 {
        FOUR_PI
            * self
                .mass
                .iter()
                .zip(a.iter().zip(b))
                .map(|(m, (x, y))| m * x * y)
                .sum::<f64>()
    }

    /// Stiffness action `S x`, the gradient of half the Dirichlet form,
    /// evaluated at every node from the literal neighbour values.
    pub fn apply_stiffness(&self, x: &[f64], out: &mut [f64]) {
        let (n_r, n_z) = (self.grid.n_r(), self.grid.n_z());
        for i in 0..n_r {
            let cz = self.axial_edge[i];
            let c_out = if i + 1 < n_r {
                self.radial_edge[i]
            } else {
                0.0
            };
            let c_in = if i > 0 { self.radial_edge[i - 1] } else { 0.0 };
            for j in 0..n_z {
                let k = i * n_z + j;
                let xk = x[k];
                let w = self.axial[j];
                let mut s = 0.0;
                if i + 1 < n_r {
                    s += c_out * w * (xk - x[k + n_z]);
                }
                if i > 0 {
                    s += c_in * w * (xk - x[k - n_z]);
                }
                if j + 1 < n_z {
                    s += cz * (xk - x[k + 1]);
                }
                if j > 0 {
                    s += cz * (xk - x[k - 1]);
                }
                out[k] = s;
            }
        }
    }

    /// Diagonal of the stiffness: the sum of edge weights at each node.
    pub fn diagonal(&self) -> Vec<f64> {
        let (n_r, n_z) = (self.grid.n_r(), self.grid.n_z());
        let mut d = vec![0.0; self.grid.len()];
        for i in 0..n_r {
            for j in 0..n_z {
                let k = i * n_z + j;
                let w = self.axial[j];
                if i + 1 < n_r {
                    d[k] += self.radial_edge[i] * w;
                }
                if i > 0 {
                    d[k] += self.radial_edge[i - 1] * w;
                }
                if j + 1 < n_z {
                    d[k] += self.axial_edge[i];
                }
                if j > 0 {
                    d[k] += self.axial_edge[i];
                }
            }
        }
        d
    }

    /// Discrete `∫|∇f|² / 4π` as a sum over grid edges.
    pub fn dirichlet_form(&self, x: &[f64]) -> f64 {
        let (n_r, n_z) = (self.grid.n_r(), self.grid.n_z());
        let mut total = 0.0;
        for i in 0..n_r {
            let cz = self.axial_edge[i];
            for j in 0..n_z {
                let k = i * n_z + j;
                if i + 1 < n_r {
                    let d = x[k + n_z] - x[k];
                    total += self.radial_edge[i] * self.axial[j] * d * d;
                }
                if j + 1 < n_z {
                    let d = x[k + 1] - x[k];
                    total += cz * d * d;
                }
            }
        }
        total
    }

    /// Nodal `|∇f|²`: each edge's energy split evenly between its endpoints,
    /// divided by the control volume. Integrating it reproduces the Dirichlet
    /// form exactly.
    pub fn gradient_density(&self, x: &[f64], out: &mut [f64]) {
        let (n_r, n_z) = (self.grid.n_r(), self.grid.n_z());
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n_r {
            let cz = self.axial_edge[i];
            for j in 0..n_z {
                let k = i * n_z + j;
                if i + 1 < n_r {
                    let d = x[k + n_z] - x[k];
                    let e = 0.5 * self.radial_edge[i] * self.axial[j] * d * d;
                    out[k] += e;
                    out[k + n_z] += e;
                }
                if j + 1 < n_z {
                    let d = x[k + 1] - x[k];
                    let e = 0.5 * cz * d * d;
                    out[k] += e;
                    out[k + 1] += e;
                }
            }
        }
        for (v, m) in out.iter_mut().zip(&self.mass) {
            *v /= m;
        }
    }

    /// `−Δ_h x` on the free nodes of `parity`, zero elsewhere.
    pub fn neg_laplacian(&self, x: &[f64], parity: Parity, out: &mut [f64]) {
        self.apply_stiffness(x, out);
        let g = self.grid;
        for i in 0..g.n_r() {
            for j in 0..g.n_z() {
                let k = g.idx(i, j);
                out[k] = if g.is_free(i, j, parity) {
                    out[k] / self.mass[k]
                } else {
                    0.0
                };
            }
        }
    }

    /// Indicator of free nodes for `parity`.
    pub fn free_mask(&self, parity: Parity) -> Vec<bool> {
        let g = self.grid;
        let mut mask = Vec::with_capacity(g.len());
        for i in 0..g.n_r() {
            for j in 0..g.n_z() {
                mask.push(g.is_free(i, j, parity));
            }
        }
        mask
    }
}

/// `4π Σ m_ij f_ij`: the 3D integral of a z-even integrand.
pub fn integrate(f: &AxiField) -> Result<f64> {
    f.check_finite()?;
    Ok(Stencil::new(f.grid).integrate_values(&f.values))
}

/// L² inner product over ℝ³ of two fields on the same grid.
pub fn inner(a: &AxiField, b: &AxiField) -> Result<f64> {
    a.same_grid(b)?;
    Ok(Stencil::new(a.grid).inner_values(&a.values, &b.values))
}

pub fn l2_norm(a: &AxiField) -> f64 {
    Stencil::new(a.grid)
        .inner_values(&a.values, &a.values)
        .max(0.0)
        .sqrt()
}

/// Pointwise `|∇u|²`, an even field.
pub fn grad_sq(u: &AxiField) -> Result<AxiField> {
    u.check_finite()?;
    let st = Stencil::new(u.grid);
    let mut out = vec![0.0; u.grid.len()];
    st.gradient_density(&u.values, &mut out);
    Ok(AxiField {
        grid: u.grid,
        values: out,
        parity: Parity::EvenInZ,
    })
}

/// `∫|∇u|²` over ℝ³.
pub fn dirichlet_integral(u: &AxiField) -> f64 {
    FOUR_PI * Stencil::new(u.grid).dirichlet_form(&u.values)
}

/// Cylindrical Laplacian `∂_rr + (1/r)∂_r + ∂_zz`, same parity as the input.
/// Outer boundary nodes (and the `z = 0` row of odd fields) are set to zero.
pub fn laplacian_cyl(f: &AxiField) -> Result<AxiField> {
    f.check_finite()?;
    let st = Stencil::new(f.grid);
    let mut out = vec![0.0; f.grid.len()];
    st.neg_laplacian(&f.values, f.parity, &mut out);
    out.iter_mut().for_each(|v| *v = -*v);
    Ok(AxiField {
        grid: f.grid,
        values: out,
        parity: f.parity,
    })
}

/// `v(r, z) = u(r/σ, z/σ)` by bilinear interpolation; sample points outside
/// the box map to 0.
pub fn dilate(u: &AxiField, sigma: f64) -> Result<AxiField> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(SolverError::InvalidDilation(sigma));
    }
    let g = u.grid;
    if sigma == 1.0 {
        return Ok(u.clone());
    }
    let (h_r, h_z) = (g.h_r(), g.h_z());
    let mut out = vec![0.0; g.len()];
    for i in 0..g.n_r() {
        let rs = g.r(i) / sigma;
        for j in 0..g.n_z() {
            let zs = g.z(j) / sigma;
            if g.contains(rs, zs) {
                out[g.idx(i, j)] = bilinear(u, rs / h_r, zs / h_z);
            }
        }
    }
    let mut v = AxiField {
        grid: g,
        values: out,
        parity: u.parity,
    };
    v.enforce_constraints();
    Ok(v)
}

/// Bilinear interpolation at fractional node coordinates (clamped to the box).
pub(crate) fn bilinear(u: &AxiField, x: f64, y: f64) -> f64 {
    let g = u.grid;
    let i0 = (x.floor().max(0.0) as usize).min(g.n_r() - 2);
    let j0 = (y.floor().max(0.0) as usize).min(g.n_z() - 2);
    let tx = (x - i0 as f64).clamp(0.0, 1.0);
    let ty = (y - j0 as f64).clamp(0.0, 1.0);
    let a = u.get(i0, j0);
    let b = u.get(i0 + 1, j0);
    let c = u.get(i0, j0 + 1);
    let d = u.get(i0 + 1, j0 + 1);
    (1.0 - tx) * ((1.0 - ty) * a + ty * c) + tx * ((1.0 - ty) * b + ty * d)
}

/// Squared H¹ norm `∫|∇u|² + ∫u²`.
pub fn h1_norm_sq(u: &AxiField) -> Result<f64> {
    u.check_finite()?;
    let st = Stencil::new(u.grid);
    Ok(FOUR_PI * st.dirichlet_form(&u.values) + st.inner_values(&u.values, &u.values))
}

/// Largest `|u|` on the plane `z = 0`: the violation of the fixed-point
/// condition of the odd cylindrical symmetry class. Rotational invariance is
/// structural, so only z-antisymmetry can fail.
pub fn apply_tg_oddness_check(u: &AxiField) -> f64 {
    (0..u.grid.n_r())
        .map(|i| u.get(i, 0).abs())
        .fold(0.0, f64::max)
}

//! Berestycki–Lions nonlinearities.
//!
//! A nonlinearity `g` is continuous and odd, behaves like `−ω s` at the
//! origin, grows slower than `s⁵`, and has a point `ζ` with `G(ζ) > 0`.
//! It is truncated to zero beyond its first zero `s₀ ≥ ζ` and split as
//! `g = g₁ − g₂` with `g₁(s) = (g(s) + ω s)⁺` on `s ≥ 0`, both parts
//! extended oddly.

use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::quad::adaptive_simpson;

/// Relative margin by which the default `ζ` sits above the first zero of `G`.
pub const ZETA_MARGIN: f64 = 0.25;

/// Upper end of the search interval for the truncation level of tabulated models.
pub const DEFAULT_S_MAX: f64 = 1e3;

/// Monotone cubic Hermite interpolant (Fritsch–Carlson) of tabulated `g` on
/// `s ≥ 0`, with its exact piecewise-quartic primitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedG {
    s: Vec<f64>,
    g: Vec<f64>,
    slopes: Vec<f64>,
    cumulative: Vec<f64>,
}

impl TabulatedG {
    pub fn new(mut s: Vec<f64>, mut g: Vec<f64>) -> Result<Self> {
        if s.len() != g.len() || s.len() < 2 {
            return Err(SolverError::InvalidModel(
                "table needs at least two (s, g) rows".into(),
            ));
        }
        if s[0] < 0.0 {
            return Err(SolverError::InvalidModel("table must live on s ≥ 0".into()));
        }
        if s.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SolverError::InvalidModel(
                "table abscissae must be strictly increasing".into(),
            ));
        }
        if s.iter().chain(&g).any(|v| !v.is_finite()) {
            return Err(SolverError::InvalidModel(
                "table contains non-finite entries".into(),
            ));
        }
        if s[0] > 0.0 {
            s.insert(0, 0.0);
            g.insert(0, 0.0);
        } else if g[0] != 0.0 {
            return Err(SolverError::InvalidModel(format!(
                "an odd g must vanish at 0, table has g(0) = {}",
                g[0]
            )));
        }
        let slopes = fritsch_carlson(&s, &g);
        let mut cumulative = vec![0.0; s.len()];
        for k in 0..s.len() - 1 {
            let h = s[k + 1] - s[k];
            cumulative[k + 1] =
                cumulative[k] + hermite_integral(g[k], g[k + 1], slopes[k], slopes[k + 1], h, 1.0);
        }
        Ok(Self {
            s,
            g,
            slopes,
            cumulative,
        })
    }

    /// Two-column CSV `s,g`; a non-numeric first line is treated as a header.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut s = Vec::new();
        let mut g = Vec::new();
        for (n, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            if cols.len() < 2 {
                return Err(SolverError::Parse(format!(
                    "line {}: expected two columns",
                    n + 1
                )));
            }
            match (cols[0].parse::<f64>(), cols[1].parse::<f64>()) {
                (Ok(a), Ok(b)) => {
                    s.push(a);
                    g.push(b);
                }
                _ if n == 0 => continue,
                _ => {
                    return Err(SolverError::Parse(format!(
                        "line {}: expected numbers",
                        n + 1
                    )))
                }
            }
        }
        Self::new(s, g)
    }

    pub fn last_abscissa(&self) -> f64 {
        *self.s.last().expect("nonempty table")
    }

    fn locate(&self, s: f64) -> usize {
        match self
            .s
            .binary_search_by(|v| v.partial_cmp(&s).expect("finite"))
        {
            Ok(k) => k.min(self.s.len() - 2),
            Err(k) => k.saturating_sub(1).min(self.s.len() - 2),
        }
    }

    fn eval(&self, s: f64) -> f64 {
        let n = self.s.len();
        if s >= self.s[n - 1] {
            return self.g[n - 1] + self.slopes[n - 1] * (s - self.s[n - 1]);
        }
        let k = self.locate(s);
        let h = self.s[k + 1] - self.s[k];
        let t = (s - self.s[k]) / h;
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.g[k]
            + (t3 - 2.0 * t2 + t) * h * self.slopes[k]
            + (-2.0 * t3 + 3.0 * t2) * self.g[k + 1]
            + (t3 - t2) * h * self.slopes[k + 1]
    }

    fn primitive(&self, s: f64) -> f64 {
        let n = self.s.len();
        if s >= self.s[n - 1] {
            let d = s - self.s[n - 1];
            return self.cumulative[n - 1] + self.g[n - 1] * d + 0.5 * self.slopes[n - 1] * d * d;
        }
        let k = self.locate(s);
        let h = self.s[k + 1] - self.s[k];
        let t = (s - self.s[k]) / h;
        self.cumulative[k]
            + hermite_integral(
                self.g[k],
                self.g[k + 1],
                self.slopes[k],
                self.slopes[k + 1],
                h,
                t,
            )
    }
}

fn fritsch_carlson(s: &[f64], g: &[f64]) -> Vec<f64> {
    let n = s.len();
    let delta: Vec<f64> = (0..n - 1)
        .map(|k| (g[k + 1] - g[k]) / (s[k + 1] - s[k]))
        .collect();
    let mut m = vec![0.0; n];
    m[0] = delta[0];
    m[n - 1] = delta[n - 2];
    for k in 1..n - 1 {
        m[k] = if delta[k - 1] * delta[k] <= 0.0 {
            0.0
        } else {
            0.5 * (delta[k - 1] + delta[k])
        };
    }
    for k in 0..n - 1 {
        if delta[k] == 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        let a = m[k] / delta[k];
        let b = m[k + 1] / delta[k];
        let q = a * a + b * b;
        if q > 9.0 {
            let tau = 3.0 / q.sqrt();
            m[k] = tau * a * delta[k];
            m[k + 1] = tau * b * delta[k];
        }
    }
    m
}

/// `∫₀^{t h}` of the cubic Hermite piece on an interval of length `h`.
fn hermite_integral(y0: f64, y1: f64, m0: f64, m1: f64, h: f64, t: f64) -> f64 {
    let (t2, t3, t4) = (t * t, t * t * t, t * t * t * t);
    let i00 = t - t3 + 0.5 * t4;
    let i10 = 0.5 * t2 - 2.0 * t3 / 3.0 + 0.25 * t4;
    let i01 = t3 - 0.5 * t4;
    let i11 = -t3 / 3.0 + 0.25 * t4;
    h * (i00 * y0 + i10 * h * m0 + i01 * y1 + i11 * h * m1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Model {
    /// `g(s) = |s|^{p−1}s − ω s`.
    Power,
    Tabulated(TabulatedG),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BLNonlinearity {
    model: Model,
    omega: f64,
    p: f64,
    zeta: f64,
    s0: f64,
}

/// Canonical power-minus-linear model.
pub fn make_power_model(p: f64, omega: f64) -> Result<BLNonlinearity> {
    BLNonlinearity::power(p, omega)
}

impl BLNonlinearity {
    pub fn power(p: f64, omega: f64) -> Result<Self> {
        validate_exponents(p, omega)?;
        let zeta = ((p + 1.0) * omega / 2.0).powf(1.0 / (p - 1.0)) * (1.0 + ZETA_MARGIN);
        let out = Self {
            model: Model::Power,
            omega,
            p,
            zeta,
            s0: f64::INFINITY,
        };
        out.verify_positivity()?;
        Ok(out)
    }

    /// User model from a table; `omega` is the declared `−limsup g(s)/s` at 0
    /// and `p` the declared subcritical growth exponent.
    pub fn from_table(table: TabulatedG, omega: f64, p: f64, s_max: f64) -> Result<Self> {
        validate_exponents(p, omega)?;
        let zeta = first_positive_primitive(&table, s_max).ok_or_else(|| {
            SolverError::InvalidModel(format!(
                "G(s) ≤ 0 for every s in (0, {s_max}]; the constraint set would be empty"
            ))
        })?;
        let s0 = truncation_level(&table, zeta, s_max);
        let out = Self {
            model: Model::Tabulated(table),
            omega,
            p,
            zeta,
            s0,
        };
        out.verify_positivity()?;
        Ok(out)
    }

    /// Tabulated model without the `G(ζ) > 0` requirement or truncation;
    /// only for inspecting the split of degenerate instances.
    pub fn from_table_unchecked(table: TabulatedG, omega: f64, p: f64) -> Self {
        Self {
            model: Model::Tabulated(table),
            omega,
            p,
            zeta: f64::NAN,
            s0: f64::INFINITY,
        }
    }

    fn verify_positivity(&self) -> Result<()> {
        let gz = self.big_g(self.zeta);
        if gz > 0.0 {
            Ok(())
        } else {
            Err(SolverError::InvalidModel(format!(
                "G(ζ) = {gz:.3e} ≤ 0 at ζ = {:.6}",
                self.zeta
            )))
        }
    }

    pub fn model(&self) -> &Model {
        &self.model
    }
    pub fn omega(&self) -> f64 {
        self.omega
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn zeta(&self) -> f64 {
        self.zeta
    }
    /// Truncation level; `+∞` when `g` has no zero beyond `ζ`.
    pub fn s0(&self) -> f64 {
        self.s0
    }
    pub fn is_power(&self) -> bool {
        matches!(self.model, Model::Power)
    }

    fn raw_g(&self, s: f64) -> f64 {
        match &self.model {
            Model::Power => s.powf(self.p) - self.omega * s,
            Model::Tabulated(t) => t.eval(s),
        }
    }

    fn raw_big_g(&self, s: f64) -> f64 {
        match &self.model {
            Model::Power => s.powf(self.p + 1.0) / (self.p + 1.0) - 0.5 * self.omega * s * s,
            Model::Tabulated(t) => t.primitive(s),
        }
    }

    /// Truncated nonlinearity `g̃`.
    pub fn g(&self, s: f64) -> f64 {
        let a = s.abs();
        let v = if a > self.s0 { 0.0 } else { self.raw_g(a) };
        if s < 0.0 {
            -v
        } else {
            v
        }
    }

    /// Primitive `G̃(s) = ∫₀ˢ g̃`, even and constant beyond `±s₀`.
    pub fn big_g(&self, s: f64) -> f64 {
        self.raw_big_g(s.abs().min(self.s0))
    }

    /// Untruncated `g`, for inspecting the raw model.
    pub fn g_untruncated(&self, s: f64) -> f64 {
        let v = self.raw_g(s.abs());
        if s < 0.0 {
            -v
        } else {
            v
        }
    }
}

fn validate_exponents(p: f64, omega: f64) -> Result<()> {
    if !(p > 1.0 && p < 5.0) {
        return Err(SolverError::InvalidModel(format!(
            "exponent p must satisfy 1 < p < 5, got {p}"
        )));
    }
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(SolverError::InvalidModel(format!(
            "ω must be positive, got {omega}"
        )));
    }
    Ok(())
}

fn first_positive_primitive(t: &TabulatedG, s_max: f64) -> Option<f64> {
    const SAMPLES: usize = 10_000;
    (1..=SAMPLES)
        .map(|k| s_max * k as f64 / SAMPLES as f64)
        .find(|&s| t.primitive(s) > 0.0)
}

/// `min{s ≥ ζ | g(s) = 0}` by scan and bisection; `+∞` if no zero in `[ζ, s_max]`.
fn truncation_level(t: &TabulatedG, zeta: f64, s_max: f64) -> f64 {
    const SAMPLES: usize = 10_000;
    if t.eval(zeta) == 0.0 {
        return zeta;
    }
    let step = (s_max - zeta) / SAMPLES as f64;
    let mut a = zeta;
    let ga = t.eval(a);
    for k in 1..=SAMPLES {
        let b = zeta + step * k as f64;
        let gb = t.eval(b);
        if gb == 0.0 {
            return b;
        }
        if ga.signum() != gb.signum() {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if t.eval(mid).signum() == ga.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            return 0.5 * (lo + hi);
        }
        a = b;
    }
    f64::INFINITY
}

/// The decomposition `g = g₁ − g₂` with primitives.
#[derive(Debug, Clone)]
pub struct SplitParts {
    nl: BLNonlinearity,
}

pub fn split(nl: &BLNonlinearity) -> SplitParts {
    SplitParts { nl: nl.clone() }
}

impl SplitParts {
    pub fn nonlinearity(&self) -> &BLNonlinearity {
        &self.nl
    }

    fn g1_pos(&self, s: f64) -> f64 {
        match self.nl.model {
            // g + ωs = s^p ≥ 0, so the positive part is inactive
            Model::Power if self.nl.s0.is_infinite() => s.powf(self.nl.p),
            _ => (self.nl.g(s) + self.nl.omega * s).max(0.0),
        }
    }

    pub fn g1(&self, s: f64) -> f64 {
        let v = self.g1_pos(s.abs());
        if s < 0.0 {
            -v
        } else {
            v
        }
    }

    pub fn g2(&self, s: f64) -> f64 {
        self.g1(s) - self.nl.g(s)
    }

    pub fn big_g1(&self, s: f64) -> f64 {
        let a = s.abs();
        match self.nl.model {
            Model::Power if self.nl.s0.is_infinite() => a.powf(self.nl.p + 1.0) / (self.nl.p + 1.0),
            _ => {
                let tol = 1e-13 * (1.0 + a * a);
                adaptive_simpson(&|x| self.g1_pos(x), 0.0, a, tol)
            }
        }
    }

    pub fn big_g2(&self, s: f64) -> f64 {
        match self.nl.model {
            Model::Power if self.nl.s0.is_infinite() => 0.5 * self.nl.omega * s * s,
            _ => self.big_g1(s) - self.nl.big_g(s),
        }
    }

    /// `g₁(s)/s⁵`, which must tend to zero as `s → ∞`.
    pub fn subcritical_ratio(&self, s: f64) -> f64 {
        self.g1(s) / s.powi(5)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthBound {
    /// Inequality, e.g. `g1 <= C s^p + eps s`.
    pub name: &'static str,
    /// Smallest admissible constant over the samples.
    pub constant: f64,
    pub bounded: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub epsilon: f64,
    pub bounds: Vec<GrowthBound>,
}

impl GrowthReport {
    pub fn all_bounded(&self) -> bool {
        self.bounds
            .iter()
            .all(|b| b.bounded && b.constant.is_finite())
    }
}

/// Computes the smallest constants `C_ε` in the growth inequalities
/// `f(s) ≤ C·h(s) + ε·k(s)` for the split parts over `sample_range`, plus
/// asymptotic probes beyond both ends.
pub fn verify_growth_bounds(
    parts: &SplitParts,
    epsilon: f64,
    sample_range: (f64, f64),
) -> Result<GrowthReport> {
    if !(epsilon > 0.0) {
        return Err(SolverError::InvalidModel(format!(
            "ε must be positive, got {epsilon}"
        )));
    }
    let (lo, hi) = sample_range;
    if !(lo > 0.0 && hi > lo) {
        return Err(SolverError::InvalidModel(format!(
            "invalid sample range [{lo}, {hi}]"
        )));
    }
    let p = parts.nl.p;
    let mut samples: Vec<f64> = (0..10_000)
        .map(|k| lo + (hi - lo) * k as f64 / 9_999.0)
        .collect();
    // dense logarithmic coverage of (0, lo]
    samples.extend((1..=200).map(|k| lo * 10f64.powf(-6.0 * k as f64 / 200.0)));
    let tails: Vec<f64> = (1..=3).map(|k| hi * 10f64.powi(k)).collect();

    type Fun<'a> = Box<dyn Fn(f64) -> f64 + 'a>;
    let s_lin: Fun = Box::new(|s| s);
    let s_sq: Fun = Box::new(|s| s * s);
    let g1: Fun = Box::new(|s| parts.g1(s));
    let g2: Fun = Box::new(|s| parts.g2(s));
    let big_g1: Fun = Box::new(|s| parts.big_g1(s));
    let big_g2: Fun = Box::new(|s| parts.big_g2(s));
    let pow_p: Fun = Box::new(move |s| s.powf(p));
    let pow_5: Fun = Box::new(|s| s.powi(5));
    let pow_6: Fun = Box::new(|s| s.powi(6) / 6.0);
    let pow_p1: Fun = Box::new(move |s| s.powf(p + 1.0) / (p + 1.0));

    let cases: [(&'static str, &Fun, &Fun, &Fun); 8] = [
        ("g1 <= C s^p + eps s", &g1, &pow_p, &s_lin),
        ("g1 <= C s^5 + eps s", &g1, &pow_5, &s_lin),
        ("g1 <= C s^p + eps g2", &g1, &pow_p, &g2),
        ("g1 <= C s^5 + eps g2", &g1, &pow_5, &g2),
        ("G1 <= C/6 s^6 + eps s^2", &big_g1, &pow_6, &s_sq),
        ("G1 <= C/(p+1) s^(p+1) + eps s^2", &big_g1, &pow_p1, &s_sq),
        ("G1 <= C/6 s^6 + eps G2", &big_g1, &pow_6, &big_g2),
        ("G1 <= C/(p+1) s^(p+1) + eps G2", &big_g1, &pow_p1, &big_g2),
    ];

    let bounds = cases
        .iter()
        .map(|(name, f, h, k)| {
            let ratio = |s: f64| ((f(s) - epsilon * k(s)).max(0.0)) / h(s);
            let dense = samples.iter().map(|&s| ratio(s)).fold(0.0, f64::max);
            let tail: Vec<f64> = tails.iter().map(|&s| ratio(s)).collect();
            let constant = tail.iter().copied().fold(dense, f64::max);
            // the ratio must saturate: no growth across the last decade
            let saturating = tail[2] <= tail[1] * (1.0 + 1e-3) + 1e-300;
            let bounded = constant.is_finite() && saturating;
            GrowthBound {
                name,
                constant,
                bounded,
            }
        })
        .collect();
    Ok(GrowthReport { epsilon, bounds })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_model_closed_forms() {
        let nl = make_power_model(3.0, 1.0).unwrap();
        assert_eq!(nl.g(1.0), 0.0);
        assert!((nl.big_g(1.0) + 0.25).abs() < 1e-15);
        assert!((nl.big_g(2.0) - 2.0).abs() < 1e-14);
        assert!(nl.big_g(2.0) > 0.0);
        assert!(nl.s0().is_infinite());
        assert!(nl.big_g(nl.zeta()) > 0.0);
        for s in [0.1, 1.0, 7.0] {
            assert_eq!(nl.g(-s), -nl.g(s));
        }
        let s = 1e-6;
        assert!((nl.g(s) / s + 1.0).abs() <= 1e-9);
    }

    #[test]
    fn power_model_rejects_bad_parameters() {
        assert!(make_power_model(5.0, 1.0).is_err());
        assert!(make_power_model(1.0, 1.0).is_err());
        assert!(make_power_model(3.0, 0.0).is_err());
        assert!(make_power_model(3.0, -1.0).is_err());
    }

    #[test]
    fn split_hand_values() {
        let parts = split(&make_power_model(3.0, 1.0).unwrap());
        assert_eq!(parts.g1(2.0), 8.0);
        assert_eq!(parts.g2(2.0), 2.0);
        assert_eq!(parts.g1(-2.0), -8.0);
    }

    #[test]
    fn tabulated_model_truncates_at_first_zero() {
        // g(s) = s³ − s − 0.05 s⁵ has a zero near s = 4.35 beyond ζ
        let s: Vec<f64> = (0..=2000).map(|k| k as f64 * 0.005).collect();
        let g: Vec<f64> = s
            .iter()
            .map(|&x| x.powi(3) - x - 0.05 * x.powi(5))
            .collect();
        let table = TabulatedG::new(s, g).unwrap();
        let nl = BLNonlinearity::from_table(table, 1.0, 3.0, 10.0).unwrap();
        let exact_zero = {
            // root of s² − 1 − 0.05 s⁴ = 0 above 1
            let disc: f64 = 1.0 - 4.0 * 0.05;
            ((1.0 + disc.sqrt()) / (2.0 * 0.05)).sqrt()
        };
        assert!(
            (nl.s0() - exact_zero).abs() < 1e-3,
            "{} vs {exact_zero}",
            nl.s0()
        );
        assert_eq!(nl.g(nl.s0() + 0.5), 0.0);
        let plateau = nl.big_g(nl.s0());
        assert_eq!(nl.big_g(nl.s0() + 3.0), plateau);
        assert_eq!(nl.g(-2.0), -nl.g(2.0));
        // truncated g matches the raw model inside [0, s0]
        assert!((nl.g(2.0) - (8.0 - 2.0 - 0.05 * 32.0)).abs() < 1e-6);
    }

    #[test]
    fn tabulated_primitive_matches_quadrature() {
        let s: Vec<f64> = (0..=400).map(|k| k as f64 * 0.01).collect();
        let g: Vec<f64> = s.iter().map(|&x| x.powi(3) - x).collect();
        let table = TabulatedG::new(s, g).unwrap();
        let nl = BLNonlinearity::from_table(table.clone(), 1.0, 3.0, 4.0).unwrap();
        for x in [0.3, 1.0, 2.2, 3.9] {
            let q = adaptive_simpson(&|t| table.eval(t), 0.0, x, 1e-12);
            assert!((nl.big_g(x) - q).abs() < 1e-9);
            assert!((nl.big_g(x) - (x.powi(4) / 4.0 - x * x / 2.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn tabulated_without_positive_primitive_is_rejected() {
        let s: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let g: Vec<f64> = s.iter().map(|&x| -x).collect();
        let table = TabulatedG::new(s, g).unwrap();
        assert!(matches!(
            BLNonlinearity::from_table(table, 1.0, 3.0, 10.0),
            Err(SolverError::InvalidModel(_))
        ));
    }

    #[test]
    fn table_csv_with_header() {
        let text = "s,g\n0,0\n1,0\n2,6\n3,24\n";
        let table = TabulatedG::from_csv(text.as_bytes()).unwrap();
        assert_eq!(table.last_abscissa(), 3.0);
        assert!(TabulatedG::from_csv("0,1\n1,2\n".as_bytes()).is_err());
    }
}

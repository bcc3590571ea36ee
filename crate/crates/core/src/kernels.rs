//! Second-order kernels on `[-1, 1]` and the Gauss-Legendre machinery used for
//! every population-level integral in the crate.
//!
//! Estimation windows are always expressed in the scaled variable
//! `u = (x - eval) / bandwidth`, so kernel support is fixed at `[-1, 1]` and a
//! boundary evaluation point simply truncates the integration range.

use crate::error::{Error, Result};
use std::sync::OnceLock;

/// Number of Gauss-Legendre nodes per panel used by default.
pub const GL_NODES: usize = 64;
/// Number of equal panels each smooth segment is split into.
pub const GL_PANELS: usize = 4;

/// Kernel weight function with support on `[-1, 1]`.
///
/// The named variants integrate to one. Custom tables are linearly
/// interpolated and are required to be symmetric and nonnegative, but their
/// normalization is left to the caller.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernel {
    /// `K(u) = 1/2`.
    Uniform,
    /// `K(u) = 1 - |u|`.
    Triangular,
    /// `K(u) = 0.75 (1 - u^2)`.
    Epanechnikov,
    /// Piecewise-linear table on knots spanning `[-1, 1]`.
    Custom { knots: Vec<f64>, values: Vec<f64> },
}

impl Kernel {
    /// Builds a custom table kernel, validating shape, sign, and symmetry.
    pub fn custom(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::InvalidKernel(format!(
                "knot/value length mismatch: {} vs {}",
                knots.len(),
                values.len()
            )));
        }
        if knots.len() < 2 {
            return Err(Error::InvalidKernel("need at least two knots".into()));
        }
        if knots.iter().chain(values.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidKernel("non-finite entry".into()));
        }
        if knots.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidKernel("knots must be strictly increasing".into()));
        }
        let (first, last) = (knots[0], *knots.last().unwrap());
        if (first + 1.0).abs() > 1e-12 || (last - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidKernel(format!(
                "table must span [-1, 1], got [{first}, {last}]"
            )));
        }
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(Error::InvalidKernel(format!("negative weight {v}")));
        }
        let kernel = Kernel::Custom { knots: knots.clone(), values: values.clone() };
        let scale = values.iter().cloned().fold(f64::MIN, f64::max).max(1.0);
        for (&u, &v) in knots.iter().zip(&values) {
            let mirrored = kernel.evaluate(-u);
            if (mirrored - v).abs() > 1e-9 * scale {
                return Err(Error::InvalidKernel(format!(
                    "asymmetric table: K({u}) = {v} but K({}) = {mirrored}",
                    -u
                )));
            }
        }
        Ok(kernel)
    }

    /// Kernel weight at `u`; zero outside `[-1, 1]`.
    pub fn evaluate(&self, u: f64) -> f64 {
        if !(-1.0..=1.0).contains(&u) {
            return 0.0;
        }
        match self {
            Kernel::Uniform => 0.5,
            Kernel::Triangular => 1.0 - u.abs(),
            Kernel::Epanechnikov => 0.75 * (1.0 - u * u),
            Kernel::Custom { knots, values } => {
                // binary search for the bracketing knot interval
                let idx = match knots.binary_search_by(|k| k.partial_cmp(&u).unwrap()) {
                    Ok(i) => return values[i],
                    Err(i) => i,
                };
                if idx == 0 || idx == knots.len() {
                    return 0.0;
                }
                let (u0, u1) = (knots[idx - 1], knots[idx]);
                let (v0, v1) = (values[idx - 1], values[idx]);
                v0 + (v1 - v0) * (u - u0) / (u1 - u0)
            }
        }
    }

    /// Points where the kernel is not smooth; integration panels split here.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Kernel::Custom { knots, .. } => knots.clone(),
            _ => vec![-1.0, 0.0, 1.0],
        }
    }

    /// Short identifier used in tabular output.
    pub fn name(&self) -> &'static str {
        match self {
            Kernel::Uniform => "uniform",
            Kernel::Triangular => "triangular",
            Kernel::Epanechnikov => "epanechnikov",
            Kernel::Custom { .. } => "custom",
        }
    }
}

/// Closed subinterval of `[-1, 1]` over which kernel moments are taken.
///
/// Interior evaluation uses the full support; a left support boundary
/// truncates to `[0, 1]` and a right one to `[-1, 0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntegrationRange {
    pub lower: f64,
    pub upper: f64,
}

impl IntegrationRange {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !lower.is_finite() || !upper.is_finite() || lower >= upper || lower < -1.0 || upper > 1.0
        {
            return Err(Error::InvalidConfig(format!(
                "integration range [{lower}, {upper}] must satisfy -1 <= lower < upper <= 1"
            )));
        }
        Ok(Self { lower, upper })
    }

    pub fn interior() -> Self {
        Self { lower: -1.0, upper: 1.0 }
    }

    pub fn left_boundary() -> Self {
        Self { lower: 0.0, upper: 1.0 }
    }

    pub fn right_boundary() -> Self {
        Self { lower: -1.0, upper: 0.0 }
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.lower && u <= self.upper
    }
}

fn legendre_nodes(n: usize) -> Vec<(f64, f64)> {
    // Newton iteration on P_n with the Chebyshev initial guess; symmetric pairs
    // are generated from the first half.
    let mut out = vec![(0.0, 0.0); n];
    let m = n.div_ceil(2);
    for k in 0..m {
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[k] = (-x, w);
        out[n - 1 - k] = (x, w);
    }
    out
}

fn nodes_64() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| legendre_nodes(GL_NODES))
}

fn nodes_128() -> &'static [(f64, f64)] {
    static NODES: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    NODES.get_or_init(|| legendre_nodes(2 * GL_NODES))
}

/// Composite Gauss-Legendre integral of `f` over `[a, b]`.
///
/// The interval is first split at the supplied breakpoints (kernel kinks,
/// support edges), then each piece gets `GL_PANELS` equal panels. Non-finite
/// integrand values are reported as an integration failure rather than
/// propagating NaN.
pub fn integrate(
    f: &dyn Fn(f64) -> f64,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    doubled_nodes: bool,
) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || a >= b {
        return Err(Error::IntegrationFailure(format!("bad interval [{a}, {b}]")));
    }
    let nodes = if doubled_nodes { nodes_128() } else { nodes_64() };
    let mut cuts: Vec<f64> = vec![a, b];
    cuts.extend(breakpoints.iter().copied().filter(|u| *u > a && *u < b));
    cuts.sort_by(|x, y| x.partial_cmp(y).unwrap());
    cuts.dedup();

    let mut total = 0.0;
    for seg in cuts.windows(2) {
        let width = (seg[1] - seg[0]) / GL_PANELS as f64;
        for panel in 0..GL_PANELS {
            let lo = seg[0] + panel as f64 * width;
            let mid = lo + 0.5 * width;
            let half = 0.5 * width;
            for &(x, w) in nodes {
                let fx = f(mid + half * x);
                if !fx.is_finite() {
                    return Err(Error::IntegrationFailure(format!(
                        "integrand not finite at u = {:.6}",
                        mid + half * x
                    )));
                }
                total += w * half * fx;
            }
        }
    }
    Ok(total)
}

/// Integral of an arbitrary function over a truncated kernel range.
pub fn quadrature(f: &dyn Fn(f64) -> f64, range: IntegrationRange) -> Result<f64> {
    integrate(f, range.lower, range.upper, &[0.0], false)
}

/// Truncated kernel moment `∫ K(u)^power u^j du` over `range`.
///
/// `power` must be 1 or 2. Panels split at the kernel's breakpoints, so the
/// result is exact (to roundoff) for the piecewise-polynomial kernels.
pub fn moment(kernel: &Kernel, j: u32, range: IntegrationRange, power: u32) -> Result<f64> {
    if power != 1 && power != 2 {
        return Err(Error::InvalidConfig(format!("moment power must be 1 or 2, got {power}")));
    }
    let f = move |u: f64| kernel.evaluate(u).powi(power as i32) * u.powi(j as i32);
    integrate(&f, range.lower, range.upper, &kernel.breakpoints(), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn named_kernels_integrate_to_one() {
        for k in [Kernel::Uniform, Kernel::Triangular, Kernel::Epanechnikov] {
            let m = moment(&k, 0, IntegrationRange::interior(), 1).unwrap();
            assert_abs_diff_eq!(m, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn frozen_low_order_moments() {
        let int = IntegrationRange::interior();
        assert_abs_diff_eq!(moment(&Kernel::Uniform, 0, int, 1).unwrap(), 1.0, epsilon = 1e-12);
        // oracle: 2 * int_0^1 u^2 (1-u) du = 2 (1/3 - 1/4)
        assert_abs_diff_eq!(
            moment(&Kernel::Triangular, 2, int, 1).unwrap(),
            1.0 / 6.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(moment(&Kernel::Epanechnikov, 2, int, 1).unwrap(), 0.2, epsilon = 1e-12);
        // squared-kernel roughness values
        assert_abs_diff_eq!(moment(&Kernel::Uniform, 0, int, 2).unwrap(), 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(
            moment(&Kernel::Triangular, 0, int, 2).unwrap(),
            2.0 / 3.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(moment(&Kernel::Epanechnikov, 0, int, 2).unwrap(), 0.6, epsilon = 1e-12);
    }

    #[test]
    fn boundary_moment_truncates() {
        let m = moment(&Kernel::Uniform, 1, IntegrationRange::left_boundary(), 1).unwrap();
        assert_abs_diff_eq!(m, 0.25, epsilon = 1e-12);
        let m = moment(&Kernel::Uniform, 1, IntegrationRange::right_boundary(), 1).unwrap();
        assert_abs_diff_eq!(m, -0.25, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_matches_closed_form() {
        let f = |u: f64| Kernel::Uniform.evaluate(u) * u * u;
        let got = quadrature(&f, IntegrationRange::new(0.0, 1.0).unwrap()).unwrap();
        assert_abs_diff_eq!(got, 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn quadrature_rejects_non_finite_integrand() {
        let f = |u: f64| if u > 0.5 { f64::NAN } else { 1.0 };
        let err = quadrature(&f, IntegrationRange::interior()).unwrap_err();
        assert!(matches!(err, Error::IntegrationFailure(_)));
    }

    #[test]
    fn evaluate_outside_support_is_zero() {
        for k in [Kernel::Uniform, Kernel::Triangular, Kernel::Epanechnikov] {
            assert_eq!(k.evaluate(1.0001), 0.0);
            assert_eq!(k.evaluate(-7.0), 0.0);
        }
    }

    #[test]
    fn custom_table_interpolates_and_validates() {
        let tri = Kernel::custom(vec![-1.0, 0.0, 1.0], vec![0.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(tri.evaluate(0.25), 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(
            moment(&tri, 2, IntegrationRange::interior(), 1).unwrap(),
            1.0 / 6.0,
            epsilon = 1e-12
        );

        let neg = Kernel::custom(vec![-1.0, 0.0, 1.0], vec![0.0, -1.0, 0.0]);
        assert!(matches!(neg.unwrap_err(), Error::InvalidKernel(_)));

        let skew = Kernel::custom(vec![-1.0, 0.0, 1.0], vec![0.2, 1.0, 0.4]);
        assert!(matches!(skew.unwrap_err(), Error::InvalidKernel(_)));
    }

    #[test]
    fn range_validation() {
        assert!(IntegrationRange::new(-1.2, 1.0).is_err());
        assert!(IntegrationRange::new(0.5, 0.5).is_err());
        assert!(IntegrationRange::new(-0.25, 0.75).is_ok());
    }

    #[test]
    fn gauss_legendre_is_exact_for_high_degree_polynomials() {
        // degree 127 is the exactness limit for 64 nodes
        let f = |u: f64| u.powi(126);
        let got = integrate(&f, -1.0, 1.0, &[], false).unwrap();
        assert_abs_diff_eq!(got, 2.0 / 127.0, epsilon = 1e-12);
    }

    #[test]
    fn doubled_nodes_agree_on_smooth_integrand() {
        let f = |u: f64| (3.0 * u).sin().exp();
        let a = integrate(&f, -1.0, 1.0, &[], false).unwrap();
        let b = integrate(&f, -1.0, 1.0, &[], true).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

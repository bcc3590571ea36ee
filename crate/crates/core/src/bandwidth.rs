//! Tuning-parameter selection: a mean-squared-error rule of thumb, the
//! coverage-error-optimal bandwidth, a length-versus-coverage trade-off
//! bandwidth, equivalent kernels, and the variance-minimizing bandwidth
//! ratio.

use crate::design::{build_design, factorial, fit_rbc_on_design, global_poly_fit, Boundary, LpConfig};
use crate::edgeworth::{ce_objective, EdgeworthCoefficients};
use crate::error::{Error, Result};
use crate::inference::normal_quantile;
use crate::kernels::{integrate, moment, IntegrationRange, Kernel};
use crate::linalg::{self, basis};
use crate::variance::{sigma2_rbc, HcFlavor};
use crate::Centering;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthMethod {
    MseRot,
    CeOptimal,
    TradeOff,
    Fixed,
}

impl BandwidthMethod {
    pub fn label(self) -> &'static str {
        match self {
            BandwidthMethod::MseRot => "mse-rot",
            BandwidthMethod::CeOptimal => "ce-optimal",
            BandwidthMethod::TradeOff => "trade-off",
            BandwidthMethod::Fixed => "fixed",
        }
    }
}

/// A selected bandwidth `h = h_const * n^{-eta}` with provenance.
#[derive(Debug, Clone, Serialize)]
pub struct BandwidthChoice {
    pub h: f64,
    /// Constant part, in covariate units.
    pub h_const: f64,
    /// Rate exponent; zero for user-fixed bandwidths.
    pub eta: f64,
    pub method: BandwidthMethod,
    /// Trade-off preference in (0, 1) when applicable.
    pub weight: Option<f64>,
    pub diagnostics: Vec<String>,
}

impl BandwidthChoice {
    pub fn fixed(h: f64) -> Result<Self> {
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::InvalidConfig(format!("fixed bandwidth {h} must be positive")));
        }
        Ok(Self {
            h,
            h_const: h,
            eta: 0.0,
            method: BandwidthMethod::Fixed,
            weight: None,
            diagnostics: Vec::new(),
        })
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub(crate) fn iqr(xs: &[f64]) -> Result<f64> {
    if xs.len() < 2 {
        return Err(Error::InsufficientData { needed: 2, got: xs.len() });
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig("covariates must be finite".into()));
    }
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25))
}

/// Interquartile range, widened to half the covariate range when the quartiles
/// coincide.
pub(crate) fn data_scale(xs: &[f64]) -> Result<f64> {
    let s = iqr(xs)?;
    if s > 0.0 {
        return Ok(s);
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    if hi > lo {
        Ok(0.5 * (hi - lo))
    } else {
        Err(Error::InvalidConfig("all covariate values are identical".into()))
    }
}

/// Rule-of-thumb pilot configuration for moment plug-ins: the requested
/// problem at bandwidth `IQR * n^{-1/(2p+3)}`, keeping the bandwidth ratio.
pub fn rot_pilot_config(xs: &[f64], config: &LpConfig) -> Result<LpConfig> {
    let n = xs.len() as f64;
    let h = data_scale(xs)? * n.powf(-1.0 / (2.0 * config.p as f64 + 3.0));
    Ok(LpConfig::new(config.p, config.deriv, h, config.kernel.clone(), config.eval)?
        .with_rho(config.rho)?
        .with_boundary(config.boundary))
}

fn golden_min(f: &mut dyn FnMut(f64) -> Result<f64>, mut a: f64, mut b: f64, tol: f64) -> Result<f64> {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (b - a) > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (a + b))
}

/// Mean-squared-error rule-of-thumb bandwidth.
///
/// Kernel constants come from quadrature on the configured (or interior, when
/// auto) range; curvature and residual variance come from a global polynomial
/// pilot of degree `p + 2` with a uniform reference density on the covariate
/// range. When the curvature estimate is essentially zero the scale-based
/// fallback `IQR * n^{-1/(2p+3)}` is returned with a diagnostic.
pub fn h_mse_rot(xs: &[f64], ys: &[f64], config: &LpConfig) -> Result<BandwidthChoice> {
    let n = xs.len();
    let (p, v) = (config.p, config.deriv);
    let eta = 1.0 / (2.0 * p as f64 + 3.0);
    let pilot = global_poly_fit(xs, ys, config.eval, p + 2)?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let span = hi - lo;
    if !(span > 0.0) {
        return Err(Error::InvalidConfig("all covariate values are identical".into()));
    }

    let range = match config.boundary {
        Boundary::Left => IntegrationRange::left_boundary(),
        Boundary::Right => IntegrationRange::right_boundary(),
        _ => IntegrationRange::interior(),
    };
    let dim = p + 1;
    let mut g = DMatrix::zeros(dim, dim);
    let mut g2 = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            g[(i, j)] = moment(&config.kernel, (i + j) as u32, range, 1)?;
            g2[(i, j)] = moment(&config.kernel, (i + j) as u32, range, 2)?;
        }
    }
    let l = DVector::from_fn(dim, |i, _| {
        moment(&config.kernel, (i + p + 1) as u32, range, 1).unwrap_or(f64::NAN)
    });
    if l.iter().any(|x| !x.is_finite()) {
        return Err(Error::IntegrationFailure("kernel moment did not converge".into()));
    }
    let g_inv = linalg::checked_inverse(&g)?;
    let fv = factorial(v);
    let variance_const = fv * fv * (&g_inv * &g2 * &g_inv)[(v, v)];
    let v_hat = variance_const * pilot.sigma2 * span;
    let b_mse = fv * (&g_inv * basis(dim, v)).dot(&l) * pilot.derivs[p + 1] / factorial(p + 1);

    let mut diagnostics = Vec::new();
    let scale = data_scale(xs)?;
    let ratio = (1.0 + 2.0 * v as f64) * v_hat / (2.0 * (p + 1 - v) as f64 * b_mse * b_mse);
    let h_const = ratio.powf(1.0 / (2.0 * p as f64 + 3.0));
    // a constant several times the full data span signals vanishing curvature
    if !h_const.is_finite() || h_const > 10.0 * span {
        diagnostics.push(
            "curvature estimate is numerically zero; falling back to the scale rule".to_string(),
        );
        return Ok(BandwidthChoice {
            h: scale * (n as f64).powf(-eta),
            h_const: scale,
            eta,
            method: BandwidthMethod::MseRot,
            weight: None,
            diagnostics,
        });
    }
    Ok(BandwidthChoice {
        h: h_const * (n as f64).powf(-eta),
        h_const,
        eta,
        method: BandwidthMethod::MseRot,
        weight: None,
        diagnostics,
    })
}

/// Exponent of the leading bias of the bias-corrected estimate, by boundary
/// status.
fn rbc_bias_exponent(p: usize, boundary: Boundary) -> usize {
    match boundary {
        Boundary::Left | Boundary::Right => p + 2,
        _ => p + 3,
    }
}

pub(crate) fn minimize_ce(
    coeffs: &EdgeworthCoefficients,
    n: usize,
    eta: f64,
    alpha: f64,
    scale: f64,
) -> Result<(f64, Vec<String>)> {
    let lo = (1e-3 * scale).ln();
    let hi = (1e3 * scale).ln();
    let mut diagnostics = Vec::new();
    let steps = 240usize;
    let mut best = (0usize, f64::INFINITY);
    let mut grid = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = lo + (hi - lo) * k as f64 / steps as f64;
        let val = ce_objective(t.exp(), coeffs, n, eta, alpha)?.abs();
        if val < best.1 {
            best = (k, val);
        }
        grid.push(t);
    }
    if best.0 == 0 || best.0 == steps {
        diagnostics.push(format!(
            "coverage-error objective has no interior minimum on [{:.3e}, {:.3e}]; using the bracket endpoint",
            (1e-3 * scale),
            (1e3 * scale)
        ));
        return Ok((grid[best.0].exp(), diagnostics));
    }
    let mut f = |t: f64| ce_objective(t.exp(), coeffs, n, eta, alpha).map(f64::abs);
    let t_min = golden_min(&mut f, grid[best.0 - 1], grid[best.0 + 1], 1e-9)?;
    Ok((t_min.exp(), diagnostics))
}

/// Coverage-error-optimal bandwidth for the bias-corrected interval.
///
/// Plug-in expansion coefficients are estimated at a rule-of-thumb pilot
/// bandwidth, the rate is `eta = 1/(p+4)` interior or `1/(p+3)` at a
/// boundary, and the constant minimizes the absolute coverage-error objective
/// over `[1e-3, 1e3] * scale` by grid scan plus golden-section refinement.
pub fn h_ce_optimal(xs: &[f64], ys: &[f64], config: &LpConfig, alpha: f64) -> Result<BandwidthChoice> {
    let pilot_cfg = rot_pilot_config(xs, config)?;
    let design = build_design(xs, &pilot_cfg)?;
    let a = rbc_bias_exponent(config.p, design.boundary);
    let eta = 1.0 / (1.0 + a as f64);
    let coeffs = EdgeworthCoefficients::estimate(xs, ys, &pilot_cfg, Centering::Rbc)?;
    let scale = data_scale(xs)?;
    let (h_const, diagnostics) = minimize_ce(&coeffs, xs.len(), eta, alpha, scale)?;
    Ok(BandwidthChoice {
        h: h_const * (xs.len() as f64).powf(-eta),
        h_const,
        eta,
        method: BandwidthMethod::CeOptimal,
        weight: None,
        diagnostics,
    })
}

/// Trade-off bandwidth balancing interval length against coverage error.
///
/// Closed form from the first-order condition of
/// `weight * H^{1+2a} 2 B^2 |omega5|` against
/// `(1 - weight) * 4 z^2 sigma2 / H^{1+2v}`; the root exponent is
/// `1/(2 + 2a + 2v)`.
pub fn h_tradeoff(
    xs: &[f64],
    ys: &[f64],
    config: &LpConfig,
    alpha: f64,
    weight: f64,
    eta_to: f64,
) -> Result<BandwidthChoice> {
    if !(weight > 0.0 && weight < 1.0) {
        return Err(Error::InvalidConfig(format!("trade-off weight {weight} must lie in (0, 1)")));
    }
    let pilot_cfg = rot_pilot_config(xs, config)?;
    let design = build_design(xs, &pilot_cfg)?;
    let a = rbc_bias_exponent(config.p, design.boundary) as f64;
    let band = (1.0 / (1.0 + 2.0 * a), 1.0 / (1.0 + a));
    if !(eta_to > band.0 && eta_to <= band.1) {
        return Err(Error::InvalidConfig(format!(
            "trade-off rate {eta_to} outside the admissible band ({:.6}, {:.6}]",
            band.0, band.1
        )));
    }
    let coeffs = EdgeworthCoefficients::estimate(xs, ys, &pilot_cfg, Centering::Rbc)?;
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let omega5_mag = coeffs.omega5(z).abs();
    let rbc = fit_rbc_on_design(ys, &design)?;
    let sigma2 = sigma2_rbc(&rbc, &design, HcFlavor::Hc0)?.sigma2;
    let vf = config.deriv as f64;
    let b2 = coeffs.bias.value * coeffs.bias.value;
    let denom = weight * (1.0 + 2.0 * a) * 2.0 * b2 * omega5_mag;
    let numer = (1.0 - weight) * (1.0 + 2.0 * vf) * 4.0 * z * z * sigma2;
    if !(denom > 1e-300) || !denom.is_finite() || !numer.is_finite() {
        return Err(Error::DegenerateBias);
    }
    let mut diagnostics = Vec::new();
    let mut h_const = (numer / denom).powf(1.0 / (2.0 + 2.0 * a + 2.0 * vf));
    let cap = 1e3 * data_scale(xs)?;
    if h_const > cap {
        h_const = cap;
        diagnostics.push(format!("trade-off constant capped at {cap:.6e}"));
    }
    Ok(BandwidthChoice {
        h: h_const * (xs.len() as f64).powf(-eta_to),
        h_const,
        eta: eta_to,
        method: BandwidthMethod::TradeOff,
        weight: Some(weight),
        diagnostics,
    })
}

/// Limiting weight function of a local polynomial estimate with unit design
/// density: the base kernel contracted through the population moment
/// matrices, with an optional bias-correction piece at bandwidth ratio `rho`.
#[derive(Debug, Clone)]
pub struct EquivalentKernel {
    pub base: Kernel,
    pub rho: f64,
    pub p: usize,
    pub deriv: usize,
    pub range: IntegrationRange,
    /// Degree-`p` weight polynomial on the range-adapted Legendre basis.
    c1: DVector<f64>,
    /// Correction-piece polynomial of degree `p+1` on the same basis, already
    /// carrying the `rho^{p+2}` bias-rate factor; empty when no correction
    /// piece exists.
    c2: DVector<f64>,
    doubled_nodes: bool,
}

impl EquivalentKernel {
    pub fn with_doubled_nodes(mut self) -> Self {
        self.doubled_nodes = true;
        self
    }

    /// One-sided supports collapse to the allowed side of zero.
    pub fn support(&self) -> (f64, f64) {
        let m = if self.c2.is_empty() { 1.0 } else { (1.0 / self.rho).max(1.0) };
        let lo = if self.range.lower >= 0.0 { 0.0 } else { -m };
        let hi = if self.range.upper <= 0.0 { 0.0 } else { m };
        (lo, hi)
    }

    pub fn evaluate(&self, u: f64) -> f64 {
        if (self.range.lower >= 0.0 && u < 0.0) || (self.range.upper <= 0.0 && u > 0.0) {
            return 0.0;
        }
        // open at the outer edge so emitted grids vanish at the endpoints
        let m = if self.c2.is_empty() { 1.0 } else { (1.0 / self.rho).max(1.0) };
        if u.abs() >= m {
            return 0.0;
        }
        let pb = PolyBasis::for_range(self.range);
        let mut val = self.base.evaluate(u) * pb.weighted_eval(&self.c1, u);
        if !self.c2.is_empty() {
            let w = u * self.rho;
            val -= self.base.evaluate(w) * pb.weighted_eval(&self.c2, w);
        }
        val
    }

    /// Kink locations of both pieces, for quadrature segmentation.
    fn breaks(&self) -> Vec<f64> {
        let mut cuts = self.base.breakpoints();
        if !self.c2.is_empty() {
            cuts.extend(self.base.breakpoints().iter().map(|b| b / self.rho));
        }
        cuts
    }

    /// `∫ K_eq(u) u^j du` over the support.
    pub fn moment(&self, j: u32) -> Result<f64> {
        let (lo, hi) = self.support();
        let f = |u: f64| self.evaluate(u) * u.powi(j as i32);
        integrate(&f, lo, hi, &self.breaks(), self.doubled_nodes)
    }

    /// Squared L2 distance to another equivalent kernel over the union of
    /// supports.
    pub fn l2_distance(&self, other: &EquivalentKernel) -> Result<f64> {
        let (lo1, hi1) = self.support();
        let (lo2, hi2) = other.support();
        let (lo, hi) = (lo1.min(lo2), hi1.max(hi2));
        let mut cuts = self.breaks();
        cuts.extend(other.breaks());
        let f = |u: f64| {
            let d = self.evaluate(u) - other.evaluate(u);
            d * d
        };
        integrate(&f, lo, hi, &cuts, self.doubled_nodes)
    }
}

/// Legendre polynomials rescaled onto an integration range.
///
/// Raw monomial moment matrices on a one-sided range are Hilbert-like, with
/// condition numbers near 1e7 by degree five; solutions then violate the
/// moment identities at the 1e-8 level no matter how the solve is done. On
/// this basis the weighted Gram stays well conditioned and coefficients stay
/// small, so the identities hold to roundoff.
#[derive(Debug, Clone, Copy)]
struct PolyBasis {
    scale: f64,
    shift: f64,
}

impl PolyBasis {
    fn for_range(range: IntegrationRange) -> Self {
        let span = range.upper - range.lower;
        PolyBasis { scale: 2.0 / span, shift: -(range.upper + range.lower) / span }
    }

    /// `phi_n(u)` by the three-term recurrence.
    fn phi(&self, u: f64, n: usize) -> f64 {
        let t = self.scale * u + self.shift;
        if n == 0 {
            return 1.0;
        }
        let (mut prev, mut cur) = (1.0, t);
        for j in 1..n {
            let next =
                ((2 * j + 1) as f64 * t * cur - j as f64 * prev) / (j + 1) as f64;
            prev = cur;
            cur = next;
        }
        cur
    }

    /// Dot product of `coeffs` with `(phi_0(u), phi_1(u), ...)`.
    fn weighted_eval(&self, coeffs: &DVector<f64>, u: f64) -> f64 {
        let t = self.scale * u + self.shift;
        let mut acc = coeffs[0];
        if coeffs.len() > 1 {
            acc += coeffs[1] * t;
        }
        let (mut prev, mut cur) = (1.0, t);
        for j in 1..coeffs.len().saturating_sub(1) {
            let next =
                ((2 * j + 1) as f64 * t * cur - j as f64 * prev) / (j + 1) as f64;
            acc += coeffs[j + 1] * next;
            prev = cur;
            cur = next;
        }
        acc
    }

    /// `S[(j, k)]` = coefficient of `u^k` in `phi_j`.
    fn monomial_rows(&self, deg: usize) -> DMatrix<f64> {
        let dim = deg + 1;
        let mut leg = vec![vec![0.0f64; dim]; dim];
        leg[0][0] = 1.0;
        if deg >= 1 {
            leg[1][1] = 1.0;
        }
        for j in 1..deg {
            let a1 = (2 * j + 1) as f64 / (j + 1) as f64;
            let a2 = j as f64 / (j + 1) as f64;
            for k in 0..=j {
                leg[j + 1][k + 1] += a1 * leg[j][k];
            }
            for k in 0..j {
                leg[j + 1][k] -= a2 * leg[j - 1][k];
            }
        }
        let mut out = DMatrix::zeros(dim, dim);
        for j in 0..dim {
            for k in 0..=j {
                if leg[j][k] == 0.0 {
                    continue;
                }
                for m in 0..=k {
                    out[(j, m)] += leg[j][k]
                        * binom(k, m)
                        * self.scale.powi(m as i32)
                        * self.shift.powi((k - m) as i32);
                }
            }
        }
        out
    }
}

fn binom(n: usize, k: usize) -> f64 {
    let mut v = 1.0;
    for i in 0..k {
        v = v * (n - i) as f64 / (i + 1) as f64;
    }
    v
}

/// `∫ K(u) phi_i(u) phi_j(u) du` over `range` on the range-adapted basis.
fn weighted_gram(
    kernel: &Kernel,
    deg: usize,
    range: IntegrationRange,
    pb: &PolyBasis,
) -> Result<DMatrix<f64>> {
    let dim = deg + 1;
    let mut g = DMatrix::zeros(dim, dim);
    for i in 0..dim {
        for j in i..dim {
            let f = |u: f64| kernel.evaluate(u) * pb.phi(u, i) * pb.phi(u, j);
            let v = integrate(&f, range.lower, range.upper, &kernel.breakpoints(), false)?;
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    Ok(g)
}

/// Solves for a polynomial `q` of degree `deg` with `∫ K q u^j du` hitting
/// the monomial targets `t_j`, returned on the range-adapted basis. `smat`
/// must cover at least degree `deg`.
fn moment_matched_poly(
    kernel: &Kernel,
    deg: usize,
    range: IntegrationRange,
    pb: &PolyBasis,
    smat: &DMatrix<f64>,
    targets: &DVector<f64>,
) -> Result<DVector<f64>> {
    let g = weighted_gram(kernel, deg, range, pb)?;
    let rhs = DVector::from_fn(deg + 1, |j, _| {
        (0..=deg).map(|k| smat[(j, k)] * targets[k]).sum()
    });
    linalg::checked_solve(&g, &rhs)
}

/// Equivalent kernel of the bias-corrected estimate.
pub fn equivalent_kernel(
    kernel: &Kernel,
    rho: f64,
    p: usize,
    deriv: usize,
    range: IntegrationRange,
) -> Result<EquivalentKernel> {
    if deriv > p {
        return Err(Error::InvalidConfig(format!(
            "derivative order {deriv} exceeds polynomial degree {p}"
        )));
    }
    if !rho.is_finite() || rho <= 0.0 {
        return Err(Error::InvalidConfig(format!("rho = {rho} must be positive")));
    }
    let pb = PolyBasis::for_range(range);
    let smat = pb.monomial_rows(p + 1);
    let c1 = moment_matched_poly(
        kernel,
        p,
        range,
        &pb,
        &smat,
        &(basis(p + 1, deriv) * factorial(deriv)),
    )?;
    let mut l = DVector::zeros(p + 1);
    for i in 0..=p {
        let f = |u: f64| kernel.evaluate(u) * pb.phi(u, i) * u.powi(p as i32 + 1);
        l[i] = integrate(&f, range.lower, range.upper, &kernel.breakpoints(), false)?;
    }
    let scale = rho.powi(p as i32 + 2) * c1.dot(&l);
    let c2 = moment_matched_poly(
        kernel,
        p + 1,
        range,
        &pb,
        &smat,
        &(basis(p + 2, p + 1) * scale),
    )?;
    Ok(EquivalentKernel {
        base: kernel.clone(),
        rho,
        p,
        deriv,
        range,
        c1,
        c2,
        doubled_nodes: false,
    })
}

/// Reference equivalent kernel: the degree-`p` weight function induced by the
/// uniform base kernel, without a correction piece.
pub fn k_star(p: usize, deriv: usize, range: IntegrationRange) -> Result<EquivalentKernel> {
    if deriv > p {
        return Err(Error::InvalidConfig(format!(
            "derivative order {deriv} exceeds polynomial degree {p}"
        )));
    }
    let kernel = Kernel::Uniform;
    let pb = PolyBasis::for_range(range);
    let smat = pb.monomial_rows(p);
    let c1 = moment_matched_poly(
        &kernel,
        p,
        range,
        &pb,
        &smat,
        &(basis(p + 1, deriv) * factorial(deriv)),
    )?;
    Ok(EquivalentKernel {
        base: kernel,
        rho: 1.0,
        p,
        deriv,
        range,
        c1,
        c2: DVector::zeros(0),
        doubled_nodes: false,
    })
}

/// Bandwidth ratio minimizing the L2 distance between the bias-corrected
/// equivalent kernel and the degree-`p+1` reference kernel.
///
/// A global grid scan (step 0.01 on [0.2, 2.0]) guards against the regime
/// switch at `rho = 1`, where the support of the correction piece crosses the
/// base support; golden-section then refines to 1e-5.
pub fn rho_opt(kernel: &Kernel, p: usize, deriv: usize, range: IntegrationRange) -> Result<f64> {
    rho_opt_with(kernel, p, deriv, range, false)
}

/// As [`rho_opt`], with optional doubled quadrature nodes for convergence
/// checks.
pub fn rho_opt_with(
    kernel: &Kernel,
    p: usize,
    deriv: usize,
    range: IntegrationRange,
    doubled_nodes: bool,
) -> Result<f64> {
    let mut target = k_star(p + 1, deriv, range)?;
    if doubled_nodes {
        target = target.with_doubled_nodes();
    }
    let mut objective = |rho: f64| -> Result<f64> {
        let mut k = equivalent_kernel(kernel, rho, p, deriv, range)?;
        if doubled_nodes {
            k = k.with_doubled_nodes();
        }
        k.l2_distance(&target)
    };
    let (lo, hi, step) = (0.2f64, 2.0f64, 0.01f64);
    let steps = ((hi - lo) / step).round() as usize;
    let mut best = (lo, f64::INFINITY);
    for k in 0..=steps {
        let rho = lo + step * k as f64;
        let val = objective(rho)?;
        if val < best.1 {
            best = (rho, val);
        }
    }
    let a = (best.0 - step).max(lo);
    let b = (best.0 + step).min(hi);
    let refined = golden_min(&mut objective, a, b, 1e-5)?;
    // the argmin can be a set: the correction piece vanishes identically when
    // its coefficient is zero by symmetry; prefer the unit ratio whenever it
    // attains the minimum
    if objective(1.0)? <= objective(refined)? + 1e-12 {
        return Ok(1.0);
    }
    Ok(refined)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn sample(n: usize) -> (Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
        let ys: Vec<f64> =
            xs.iter().map(|&x| (2.2 * x).sin() + 0.4 * x * x * x + 0.2 * (7.0 * x).cos()).collect();
        (xs, ys)
    }

    fn config(p: usize, v: usize) -> LpConfig {
        LpConfig::new(p, v, 0.4, Kernel::Uniform, 0.3).unwrap()
    }

    #[test]
    fn mse_rot_matches_hand_formula_for_uniform_kernel() {
        let (xs, ys) = sample(200);
        let cfg = config(1, 0);
        let choice = h_mse_rot(&xs, &ys, &cfg).unwrap();
        assert!(choice.diagnostics.is_empty());

        // closed-form uniform-kernel constants and an independent pilot via
        // normal equations on the uncentered-but-shifted covariate
        let n = xs.len();
        let deg = 3usize;
        let mut xtx = DMatrix::zeros(deg + 1, deg + 1);
        let mut xty = DVector::zeros(deg + 1);
        for i in 0..n {
            let t = xs[i] - cfg.eval;
            let row = crate::design::poly_vec(t, deg);
            xtx += &row * row.transpose();
            xty += row * ys[i];
        }
        let coef = xtx.lu().solve(&xty).unwrap();
        let mut ssr = 0.0;
        for i in 0..n {
            let t = xs[i] - cfg.eval;
            let fit: f64 = (0..=deg).map(|k| coef[k] * t.powi(k as i32)).sum();
            ssr += (ys[i] - fit) * (ys[i] - fit);
        }
        let sigma2 = ssr / (n - deg - 1) as f64;
        let mu2 = 2.0 * coef[2];
        let span = 2.0;
        // G = diag(1, 1/3), G2 = diag(1/2, 1/6), L = (1/3, 0)
        let v_hat = 0.5 * sigma2 * span;
        let b1 = (1.0 / 3.0) * mu2 / 2.0;
        let h_const = (v_hat / (4.0 * b1 * b1)).powf(0.2);
        assert_relative_eq!(choice.h_const, h_const, max_relative = 1e-10);
        assert_relative_eq!(choice.h, h_const * (n as f64).powf(-0.2), max_relative = 1e-12);

        // rate law with constants held fixed
        let h_double = choice.h_const * (2.0 * n as f64).powf(-choice.eta);
        assert_relative_eq!(h_double / choice.h, 2f64.powf(-0.2), max_relative = 1e-12);
    }

    #[test]
    fn mse_rot_flags_vanishing_curvature() {
        // linear mean plus a residual vector orthogonalised against the cubic
        // pilot basis: the fitted curvature is exactly zero while the residual
        // variance stays real, so the constant blows up and the flag must fire
        let n = 80usize;
        let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let mut basis_cols: Vec<Vec<f64>> = (0..4)
            .map(|k| xs.iter().map(|&x| (x - 0.5).powi(k as i32)).collect())
            .collect();
        for k in 0..4 {
            for j in 0..k {
                let dot: f64 = (0..n).map(|i| basis_cols[k][i] * basis_cols[j][i]).sum();
                for i in 0..n {
                    basis_cols[k][i] -= dot * basis_cols[j][i];
                }
            }
            let norm: f64 = (0..n).map(|i| basis_cols[k][i] * basis_cols[k][i]).sum::<f64>().sqrt();
            for i in 0..n {
                basis_cols[k][i] /= norm;
            }
        }
        let mut resid: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.1 } else { -0.1 }).collect();
        for col in &basis_cols {
            let dot: f64 = (0..n).map(|i| resid[i] * col[i]).sum();
            for i in 0..n {
                resid[i] -= dot * col[i];
            }
        }
        let ys: Vec<f64> = xs.iter().zip(&resid).map(|(&x, &r)| 1.0 + 2.0 * x + r).collect();

        let cfg = LpConfig::new(1, 0, 0.3, Kernel::Triangular, 0.5).unwrap();
        let choice = h_mse_rot(&xs, &ys, &cfg).unwrap();
        assert!(!choice.diagnostics.is_empty());
        let scale = data_scale(&xs).unwrap();
        assert_relative_eq!(choice.h, scale * (n as f64).powf(-0.2), max_relative = 1e-12);
    }

    #[test]
    fn ce_optimal_is_locally_optimal() {
        let (xs, ys) = sample(150);
        let cfg = LpConfig::new(1, 0, 0.4, Kernel::Epanechnikov, 0.1).unwrap();
        let choice = h_ce_optimal(&xs, &ys, &cfg, 0.05).unwrap();
        assert!(choice.diagnostics.is_empty(), "{:?}", choice.diagnostics);
        assert_relative_eq!(choice.eta, 1.0 / 5.0, max_relative = 1e-12);

        let pilot_cfg = rot_pilot_config(&xs, &cfg).unwrap();
        let coeffs =
            EdgeworthCoefficients::estimate(&xs, &ys, &pilot_cfg, Centering::Rbc).unwrap();
        let obj = |h: f64| ce_objective(h, &coeffs, xs.len(), choice.eta, 0.05).unwrap().abs();
        let at = obj(choice.h_const);
        assert!(obj(choice.h_const * 1.01) >= at - 1e-13);
        assert!(obj(choice.h_const * 0.99) >= at - 1e-13);
    }

    #[test]
    fn ce_optimal_constant_is_free_of_n_at_the_optimal_rate() {
        let (xs, ys) = sample(150);
        let cfg = LpConfig::new(1, 0, 0.4, Kernel::Epanechnikov, 0.1).unwrap();
        let pilot_cfg = rot_pilot_config(&xs, &cfg).unwrap();
        let coeffs =
            EdgeworthCoefficients::estimate(&xs, &ys, &pilot_cfg, Centering::Rbc).unwrap();
        let eta = 1.0 / 5.0;
        let scale = data_scale(&xs).unwrap();
        let (h1, _) = minimize_ce(&coeffs, 200, eta, 0.05, scale).unwrap();
        let (h4, _) = minimize_ce(&coeffs, 800, eta, 0.05, scale).unwrap();
        assert_relative_eq!(h1, h4, max_relative = 1e-6);
        let ratio = (h4 * 800f64.powf(-eta)) / (h1 * 200f64.powf(-eta));
        assert_relative_eq!(ratio, 4f64.powf(-eta), max_relative = 0.1);
    }

    #[test]
    fn zero_bias_hits_the_diagnostic_path() {
        let (xs, ys) = sample(120);
        let cfg = config(1, 0);
        let pilot_cfg = rot_pilot_config(&xs, &cfg).unwrap();
        let mut coeffs =
            EdgeworthCoefficients::estimate(&xs, &ys, &pilot_cfg, Centering::Rbc).unwrap();
        coeffs.bias.value = 0.0;
        let (h, diags) = minimize_ce(&coeffs, 300, 0.2, 0.05, 1.0).unwrap();
        assert!(!diags.is_empty());
        assert_relative_eq!(h, 1e3, max_relative = 1e-9);
    }

    #[test]
    fn tradeoff_satisfies_first_order_condition() {
        let (xs, ys) = sample(180);
        let cfg = LpConfig::new(1, 0, 0.4, Kernel::Triangular, 0.2).unwrap();
        let a = 4.0;
        let eta_to = 1.0 / 5.5;
        let weight = 0.4;
        let choice = h_tradeoff(&xs, &ys, &cfg, 0.05, weight, eta_to).unwrap();
        assert_eq!(choice.weight, Some(weight));

        let pilot_cfg = rot_pilot_config(&xs, &cfg).unwrap();
        let coeffs =
            EdgeworthCoefficients::estimate(&xs, &ys, &pilot_cfg, Centering::Rbc).unwrap();
        let design = build_design(&xs, &pilot_cfg).unwrap();
        let rbc = fit_rbc_on_design(&ys, &design).unwrap();
        let sigma2 = sigma2_rbc(&rbc, &design, HcFlavor::Hc0).unwrap().sigma2;
        let z = normal_quantile(0.975).unwrap();
        let h = choice.h_const;
        let lhs = weight * (1.0 + 2.0 * a) * 2.0 * coeffs.bias.value.powi(2)
            * coeffs.omega5(z).abs()
            * h.powf(2.0 * a);
        let rhs = (1.0 - weight) * 1.0 * 4.0 * z * z * sigma2 * h.powf(-2.0);
        assert_relative_eq!(lhs, rhs, max_relative = 1e-10);
    }

    #[test]
    fn tradeoff_weight_limits_behave() {
        let (xs, ys) = sample(150);
        let cfg = config(1, 0);
        let eta_to = 1.0 / 5.0;
        let h_mid = h_tradeoff(&xs, &ys, &cfg, 0.05, 0.5, eta_to).unwrap().h_const;
        let h_heavy = h_tradeoff(&xs, &ys, &cfg, 0.05, 0.99, eta_to).unwrap().h_const;
        assert!(h_heavy < h_mid);
        let h_light = h_tradeoff(&xs, &ys, &cfg, 0.05, 1e-9, eta_to).unwrap().h_const;
        assert!(h_light > h_mid);
        // the tenth root needs an astronomically small weight to pass the cap
        let capped = h_tradeoff(&xs, &ys, &cfg, 0.05, 1e-40, eta_to).unwrap();
        assert!(!capped.diagnostics.is_empty());
        let cap = 1e3 * data_scale(&xs).unwrap();
        assert_relative_eq!(capped.h_const, cap, max_relative = 1e-12);

        assert!(h_tradeoff(&xs, &ys, &cfg, 0.05, 0.5, 0.05).is_err());
        assert!(h_tradeoff(&xs, &ys, &cfg, 0.05, 1.5, eta_to).is_err());
    }

    #[test]
    fn reference_kernel_degree_zero_is_flat() {
        let k = k_star(0, 0, IntegrationRange::interior()).unwrap();
        for u in [-0.9, -0.3, 0.0, 0.4, 0.99] {
            assert_abs_diff_eq!(k.evaluate(u), 0.5, epsilon = 1e-12);
        }
        assert_abs_diff_eq!(k.evaluate(1.2), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn reference_kernel_moments() {
        for (p, v) in [(1usize, 0usize), (2, 0), (2, 1), (3, 1)] {
            let k = k_star(p, v, IntegrationRange::interior()).unwrap();
            for j in 0..=p {
                let want = if j == v { factorial(v) } else { 0.0 };
                assert_abs_diff_eq!(k.moment(j as u32).unwrap(), want, epsilon = 1e-8);
            }
        }
        // one-sided reference kernel still kills the mean
        let kb = k_star(1, 0, IntegrationRange::left_boundary()).unwrap();
        assert_abs_diff_eq!(kb.moment(0).unwrap(), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(kb.moment(1).unwrap(), 0.0, epsilon = 1e-8);
        assert!(kb.evaluate(-0.5) == 0.0);
    }

    #[test]
    fn corrected_kernel_moment_conditions() {
        let cases = [
            (Kernel::Triangular, 0.8, 1usize, 0usize, IntegrationRange::interior()),
            (Kernel::Epanechnikov, 1.3, 2, 1, IntegrationRange::left_boundary()),
            (Kernel::Uniform, 0.6, 1, 1, IntegrationRange::right_boundary()),
        ];
        for (kernel, rho, p, v, range) in cases {
            let ek = equivalent_kernel(&kernel, rho, p, v, range).unwrap();
            for j in 0..=p {
                let want = if j == v { factorial(v) } else { 0.0 };
                assert_abs_diff_eq!(ek.moment(j as u32).unwrap(), want, epsilon = 1e-8);
            }
            assert_abs_diff_eq!(ek.moment((p + 1) as u32).unwrap(), 0.0, epsilon = 1e-8);
            let (lo, hi) = ek.support();
            assert!(hi <= (1.0 / rho).max(1.0) + 1e-12 && lo >= -(1.0 / rho).max(1.0) - 1e-12);
        }
    }

    #[test]
    fn uniform_at_unit_ratio_reproduces_the_reference_kernel() {
        for (p, v) in [(1usize, 0usize), (2, 0)] {
            let ek = equivalent_kernel(&Kernel::Uniform, 1.0, p, v, IntegrationRange::interior())
                .unwrap();
            let target = k_star(p + 1, v, IntegrationRange::interior()).unwrap();
            for k in 0..=200 {
                let u = -1.0 + 2.0 * k as f64 / 200.0;
                // skip the jump points of the uniform kernel
                if (u.abs() - 1.0).abs() < 1e-9 {
                    continue;
                }
                assert_abs_diff_eq!(ek.evaluate(u), target.evaluate(u), epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn uniform_ratio_optimum_is_one() {
        for (p, v) in [(0usize, 0usize), (1, 0), (2, 1)] {
            let rho = rho_opt(&Kernel::Uniform, p, v, IntegrationRange::interior()).unwrap();
            assert_abs_diff_eq!(rho, 1.0, epsilon = 1e-5);
        }
    }

    #[test]
    fn ratio_optimum_is_locally_optimal_and_node_stable() {
        let range = IntegrationRange::left_boundary();
        let rho = rho_opt(&Kernel::Triangular, 1, 0, range).unwrap();
        let target = k_star(2, 0, range).unwrap();
        let obj = |r: f64, fine: bool| {
            let mut ek = equivalent_kernel(&Kernel::Triangular, r, 1, 0, range).unwrap();
            if fine {
                ek = ek.with_doubled_nodes();
            }
            ek.l2_distance(&target).unwrap()
        };
        let at = obj(rho, false);
        assert!(obj(rho + 0.01, false) >= at);
        assert!(obj(rho - 0.01, false) >= at);
        // doubled quadrature nodes leave the optimum essentially unchanged
        let mut f = |r: f64| -> Result<f64> { Ok(obj(r, true)) };
        let refined = golden_min(&mut f, rho - 0.05, rho + 0.05, 1e-6).unwrap();
        assert_relative_eq!(rho, refined, max_relative = 1e-3);
    }
}

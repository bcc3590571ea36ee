//! Local polynomial design matrices, fits, and the robust bias-corrected
//! point estimate.
//!
//! All internal solves run in the scaled parameterization `r_p((x - eval)/h)`,
//! which keeps the Gram matrix well conditioned; coefficients are mapped back
//! through the diagonal scaling `diag(1, h, .., h^p)` afterwards.

use crate::error::{Error, Result};
use crate::kernels::{IntegrationRange, Kernel};
use crate::linalg::{self, basis, KahanSum};
use nalgebra::{DMatrix, DVector};

/// Position of the evaluation point relative to the covariate support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Boundary {
    /// Detect from the sample: within `h` of the sample minimum counts as a
    /// left boundary, within `h` of the maximum as a right boundary.
    #[default]
    Auto,
    Interior,
    Left,
    Right,
}

impl Boundary {
    /// Integration range for population-level kernel moments.
    pub fn range(self) -> IntegrationRange {
        match self {
            Boundary::Left => IntegrationRange::left_boundary(),
            Boundary::Right => IntegrationRange::right_boundary(),
            _ => IntegrationRange::interior(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Boundary::Auto => "auto",
            Boundary::Interior => "interior",
            Boundary::Left => "left",
            Boundary::Right => "right",
        }
    }
}

/// Bandwidth ratio `rho = h / b` is clamped to this interval.
pub const RHO_LIMITS: (f64, f64) = (0.05, 20.0);

/// Everything defining one local polynomial problem.
#[derive(Debug, Clone)]
pub struct LpConfig {
    /// Polynomial degree of the main fit.
    pub p: usize,
    /// Derivative order being estimated (`<= p`).
    pub deriv: usize,
    /// Main bandwidth.
    pub h: f64,
    /// Bias-correction bandwidth; defaults to `h`.
    pub b: f64,
    /// `h / b`, kept consistent with `b`.
    pub rho: f64,
    pub kernel: Kernel,
    /// Evaluation point on the covariate scale.
    pub eval: f64,
    pub boundary: Boundary,
    /// Non-fatal conditions noticed during configuration.
    pub warnings: Vec<String>,
}

impl LpConfig {
    /// Degree-`p` problem at bandwidth `h` with `b = h` (`rho = 1`).
    pub fn new(p: usize, deriv: usize, h: f64, kernel: Kernel, eval: f64) -> Result<Self> {
        if deriv > p {
            return Err(Error::InvalidConfig(format!(
                "derivative order {deriv} exceeds polynomial degree {p}"
            )));
        }
        if p > 9 {
            return Err(Error::InvalidConfig(format!("degree {p} is unreasonably large")));
        }
        if !h.is_finite() || h <= 0.0 {
            return Err(Error::InvalidConfig(format!("bandwidth h = {h} must be positive")));
        }
        if !eval.is_finite() {
            return Err(Error::InvalidConfig("evaluation point must be finite".into()));
        }
        let mut warnings = Vec::new();
        if (p - deriv) % 2 == 0 {
            warnings.push(format!(
                "p - deriv = {} is even; odd differences are the recommended practice",
                p - deriv
            ));
        }
        Ok(Self { p, deriv, h, b: h, rho: 1.0, kernel, eval, boundary: Boundary::Auto, warnings })
    }

    /// Sets the bias-correction bandwidth, clamping `rho` to [`RHO_LIMITS`].
    pub fn with_b(mut self, b: f64) -> Result<Self> {
        if !b.is_finite() || b <= 0.0 {
            return Err(Error::InvalidConfig(format!("bandwidth b = {b} must be positive")));
        }
        let rho = self.h / b;
        let clamped = rho.clamp(RHO_LIMITS.0, RHO_LIMITS.1);
        if clamped != rho {
            self.warnings
                .push(format!("rho = {rho:.4} clamped to {clamped:.4}; b adjusted accordingly"));
        }
        self.rho = clamped;
        self.b = self.h / clamped;
        Ok(self)
    }

    /// Sets `rho = h/b` directly; values outside [`RHO_LIMITS`] are clamped.
    pub fn with_rho(self, rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho <= 0.0 {
            return Err(Error::InvalidConfig(format!("rho = {rho} must be positive")));
        }
        let h = self.h;
        self.with_b(h / rho)
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }
}

/// Global polynomial pilot: derivatives of the regression function at a
/// point plus a residual variance, from one least squares fit.
#[derive(Debug, Clone)]
pub struct GlobalPilot {
    /// `mu^(k)(eval)` for `k = 0..=degree`.
    pub derivs: Vec<f64>,
    /// Residual variance with degrees-of-freedom correction.
    pub sigma2: f64,
}

/// Degree-`degree` polynomial least squares on the whole sample, centered and
/// scaled at `eval` for conditioning. Rank deficiency surfaces as
/// [`Error::PilotSingular`].
pub fn global_poly_fit(xs: &[f64], ys: &[f64], eval: f64, degree: usize) -> Result<GlobalPilot> {
    let n = xs.len();
    if ys.len() != n {
        return Err(Error::InvalidConfig(format!(
            "covariate and response lengths differ: {n} vs {}",
            ys.len()
        )));
    }
    if n < degree + 2 {
        return Err(Error::PilotSingular);
    }
    let scale = xs.iter().map(|x| (x - eval).abs()).fold(0.0f64, f64::max);
    if !(scale > 0.0) {
        return Err(Error::PilotSingular);
    }
    let design = DMatrix::from_fn(n, degree + 1, |i, j| ((xs[i] - eval) / scale).powi(j as i32));
    let svd = design.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || smin / smax < 1e-10 {
        return Err(Error::PilotSingular);
    }
    let rhs = DVector::from_column_slice(ys);
    let coef = svd.solve(&rhs, 0.0).map_err(|_| Error::PilotSingular)?;
    let fitted = design * &coef;
    let mut ssr = KahanSum::default();
    for i in 0..n {
        let r = ys[i] - fitted[i];
        ssr.add(r * r);
    }
    let sigma2 = ssr.value() / (n - degree - 1) as f64;
    let derivs =
        (0..=degree).map(|k| coef[k] * factorial(k) / scale.powi(k as i32)).collect();
    Ok(GlobalPilot { derivs, sigma2 })
}

/// `r_deg(u) = (1, u, .., u^deg)'`.
pub fn poly_vec(u: f64, deg: usize) -> DVector<f64> {
    let mut r = DVector::zeros(deg + 1);
    let mut pw = 1.0;
    for j in 0..=deg {
        r[j] = pw;
        pw *= u;
    }
    r
}

pub(crate) fn factorial(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Sample design quantities for the main (degree `p`, bandwidth `h`) and
/// bias-correction (degree `p+1`, bandwidth `b`) problems.
///
/// `gamma` is the kernel-weighted Gram matrix `(1/nh) Σ K_i r_p(u_i) r_p(u_i)'`,
/// `omega` stacks the weight columns `h^{-1} K_i r_p(u_i)`, and `lambda[k-1]`
/// holds `Ω [u_i^{p+k}]' / n`. Barred fields are the degree-`p+1` analogs at
/// bandwidth `b` with `lambda_bar[k-1] = Ω̄ [u_{b,i}^{p+1+k}]' / n`.
#[derive(Debug, Clone)]
pub struct DesignSystem {
    pub config: LpConfig,
    /// Boundary after auto-detection.
    pub boundary: Boundary,
    pub n: usize,
    /// Observations with positive kernel weight at `h`.
    pub effective_n: usize,
    /// Observations with positive kernel weight at `b`.
    pub effective_n_bar: usize,
    pub gamma: DMatrix<f64>,
    pub gamma_bar: DMatrix<f64>,
    pub omega: DMatrix<f64>,
    pub omega_bar: DMatrix<f64>,
    pub lambda: [DVector<f64>; 3],
    pub lambda_bar: [DVector<f64>; 2],
    /// Scaled covariates `(x_i - eval)/h` and kernel weights at `h`.
    pub u_h: Vec<f64>,
    pub k_h: Vec<f64>,
    /// Scaled covariates and weights at `b`.
    pub u_b: Vec<f64>,
    pub k_b: Vec<f64>,
}

impl DesignSystem {
    pub fn gamma_inv(&self) -> Result<DMatrix<f64>> {
        linalg::checked_inverse(&self.gamma)
    }

    pub fn gamma_bar_inv(&self) -> Result<DMatrix<f64>> {
        linalg::checked_inverse(&self.gamma_bar)
    }
}

/// Builds every design quantity in one pass over the sample.
pub fn build_design(xs: &[f64], config: &LpConfig) -> Result<DesignSystem> {
    if xs.is_empty() {
        return Err(Error::EmptyWindow);
    }
    if let Some(i) = xs.iter().position(|x| !x.is_finite()) {
        return Err(Error::InvalidConfig(format!("covariate {i} is not finite")));
    }
    let n = xs.len();
    let (p, h, b) = (config.p, config.h, config.b);
    let kernel = &config.kernel;

    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in xs {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    let boundary = match config.boundary {
        Boundary::Auto => {
            let near_min = config.eval - h < lo;
            let near_max = config.eval + h > hi;
            match (near_min, near_max) {
                (true, true) => {
                    // window covers the whole support; pick the nearer edge
                    if config.eval - lo <= hi - config.eval {
                        Boundary::Left
                    } else {
                        Boundary::Right
                    }
                }
                (true, false) => Boundary::Left,
                (false, true) => Boundary::Right,
                (false, false) => Boundary::Interior,
            }
        }
        fixed => fixed,
    };

    let mut u_h = Vec::with_capacity(n);
    let mut k_h = Vec::with_capacity(n);
    let mut u_b = Vec::with_capacity(n);
    let mut k_b = Vec::with_capacity(n);
    for &x in xs {
        let uh = (x - config.eval) / h;
        let ub = (x - config.eval) / b;
        u_h.push(uh);
        k_h.push(kernel.evaluate(uh));
        u_b.push(ub);
        k_b.push(kernel.evaluate(ub));
    }
    let effective_n = k_h.iter().filter(|k| **k > 0.0).count();
    let effective_n_bar = k_b.iter().filter(|k| **k > 0.0).count();
    if effective_n == 0 || effective_n_bar == 0 {
        return Err(Error::EmptyWindow);
    }

    let nf = n as f64;
    let mut gamma = DMatrix::zeros(p + 1, p + 1);
    let mut gamma_bar = DMatrix::zeros(p + 2, p + 2);
    let mut omega = DMatrix::zeros(p + 1, n);
    let mut omega_bar = DMatrix::zeros(p + 2, n);
    let mut lambda = [DVector::zeros(p + 1), DVector::zeros(p + 1), DVector::zeros(p + 1)];
    let mut lambda_bar = [DVector::zeros(p + 2), DVector::zeros(p + 2)];

    for i in 0..n {
        if k_h[i] > 0.0 {
            let r = poly_vec(u_h[i], p);
            let w = k_h[i] / h;
            omega.column_mut(i).axpy(w, &r, 0.0);
            let scaled = &r * (w / nf);
            gamma.ger(1.0, &scaled, &r, 1.0);
            for k in 0..3 {
                let pw = u_h[i].powi((p + 1 + k) as i32);
                lambda[k].axpy(pw, &scaled, 1.0);
            }
        }
        if k_b[i] > 0.0 {
            let rb = poly_vec(u_b[i], p + 1);
            let wb = k_b[i] / b;
            omega_bar.column_mut(i).axpy(wb, &rb, 0.0);
            let scaled = &rb * (wb / nf);
            gamma_bar.ger(1.0, &scaled, &rb, 1.0);
            for k in 0..2 {
                let pw = u_b[i].powi((p + 2 + k) as i32);
                lambda_bar[k].axpy(pw, &scaled, 1.0);
            }
        }
    }

    Ok(DesignSystem {
        config: config.clone(),
        boundary,
        n,
        effective_n,
        effective_n_bar,
        gamma,
        gamma_bar,
        omega,
        omega_bar,
        lambda,
        lambda_bar,
        u_h,
        k_h,
        u_b,
        k_b,
    })
}

/// Which of the two regressions inside a [`DesignSystem`] a fit refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum FitTier {
    /// Degree `p` at bandwidth `h`.
    Main,
    /// Degree `p + 1` at bandwidth `b`.
    Bar,
}

/// One weighted least squares fit.
#[derive(Debug, Clone)]
pub struct LpFit {
    /// Degree of the fitted polynomial.
    pub degree: usize,
    /// Bandwidth the fit used.
    pub bandwidth: f64,
    /// Coefficients on `r((x - eval))`; `beta[j]` estimates `mu^(j)/j!`.
    pub beta: DVector<f64>,
    /// Coefficients on the scaled basis `r((x - eval)/bandwidth)`.
    pub beta_scaled: DVector<f64>,
    /// Unweighted residuals `y_i - r(x_i - eval)' beta` for every observation.
    pub residuals: Vec<f64>,
    /// Reciprocal condition number of the scaled Gram matrix.
    pub rcond: f64,
}

pub(crate) fn fit_on_design(ys: &[f64], design: &DesignSystem, tier: FitTier) -> Result<LpFit> {
    if ys.len() != design.n {
        return Err(Error::InvalidConfig(format!(
            "response length {} does not match design size {}",
            ys.len(),
            design.n
        )));
    }
    if let Some(i) = ys.iter().position(|y| !y.is_finite()) {
        return Err(Error::InvalidConfig(format!("response {i} is not finite")));
    }
    let (degree, d, u, k, gram, effective) = match tier {
        FitTier::Main => (
            design.config.p,
            design.config.h,
            &design.u_h,
            &design.k_h,
            &design.gamma,
            design.effective_n,
        ),
        FitTier::Bar => (
            design.config.p + 1,
            design.config.b,
            &design.u_b,
            &design.k_b,
            &design.gamma_bar,
            design.effective_n_bar,
        ),
    };
    let needed = degree + 2;
    if effective < needed {
        return Err(Error::InsufficientData { needed, got: effective });
    }

    let nf = design.n as f64;
    let mut rhs = DVector::zeros(degree + 1);
    for i in 0..design.n {
        if k[i] > 0.0 {
            rhs.axpy(k[i] / d / nf * ys[i], &poly_vec(u[i], degree), 1.0);
        }
    }
    let rc = linalg::rcond(gram);
    if !rc.is_finite() || rc < linalg::RCOND_MIN {
        return Err(Error::Singular { rcond: rc });
    }
    let beta_scaled =
        gram.clone().lu().solve(&rhs).ok_or(Error::Singular { rcond: rc })?;

    let mut beta = beta_scaled.clone();
    let mut pw = 1.0;
    for j in 0..=degree {
        beta[j] /= pw;
        pw *= d;
    }
    let residuals = (0..design.n)
        .map(|i| ys[i] - beta_scaled.dot(&poly_vec(u[i], degree)))
        .collect();

    Ok(LpFit { degree, bandwidth: d, beta, beta_scaled, residuals, rcond: rc })
}

/// Degree-`p` local polynomial fit at bandwidth `h`.
pub fn fit_lp(xs: &[f64], ys: &[f64], config: &LpConfig) -> Result<LpFit> {
    let design = build_design(xs, config)?;
    fit_on_design(ys, &design, FitTier::Main)
}

/// `deriv`-th derivative estimate from a fit: `deriv! * beta[deriv]`.
pub fn point_estimate(fit: &LpFit, deriv: usize) -> Result<f64> {
    if deriv > fit.degree {
        return Err(Error::InvalidConfig(format!(
            "derivative order {deriv} exceeds fitted degree {}",
            fit.degree
        )));
    }
    Ok(factorial(deriv) * fit.beta[deriv])
}

/// Conventional and robust bias-corrected point estimates sharing one design.
#[derive(Debug, Clone)]
pub struct RbcFit {
    /// Conventional estimate `deriv! * beta_p[deriv]`.
    pub theta_p: f64,
    /// Bias-corrected estimate `theta_p - bias_term`.
    pub theta_rbc: f64,
    /// `h^{p+1-deriv} deriv! e_v' Γ^{-1} Λ_1  e_{p+1}' beta_{p+1}`.
    pub bias_term: f64,
    /// Bias-corrected weight matrix `Ω - rho^{p+1} Λ_1 e_{p+1}' Ḡ^{-1} Ω̄`.
    pub omega_rbc: DMatrix<f64>,
    pub fit_p: LpFit,
    pub fit_p1: LpFit,
}

/// Fits both tiers and assembles the bias-corrected estimate.
pub fn fit_rbc(xs: &[f64], ys: &[f64], config: &LpConfig) -> Result<RbcFit> {
    let design = build_design(xs, config)?;
    fit_rbc_on_design(ys, &design)
}

pub fn fit_rbc_on_design(ys: &[f64], design: &DesignSystem) -> Result<RbcFit> {
    let config = &design.config;
    let (p, v) = (config.p, config.deriv);
    let fit_p = fit_on_design(ys, design, FitTier::Main)?;
    let fit_p1 = fit_on_design(ys, design, FitTier::Bar)?;

    let gamma_inv_e = linalg::checked_solve(&design.gamma, &basis(p + 1, v))?;
    let lam1_dot = gamma_inv_e.dot(&design.lambda[0]);
    let vfac = factorial(v);
    let theta_p = vfac * fit_p.beta[v];
    let bias_term = config.h.powi((p + 1 - v) as i32) * vfac * lam1_dot * fit_p1.beta[p + 1];
    let theta_rbc = theta_p - bias_term;

    // weight-matrix form of the same estimate
    let gbar_inv_e = linalg::checked_solve(&design.gamma_bar, &basis(p + 2, p + 1))?;
    let t_row = gbar_inv_e.transpose() * &design.omega_bar;
    let mut omega_rbc = design.omega.clone();
    let scale = -config.rho.powi((p + 1) as i32);
    omega_rbc.ger(scale, &design.lambda[0], &t_row.transpose(), 1.0);

    Ok(RbcFit { theta_p, theta_rbc, bias_term, omega_rbc, fit_p, fit_p1 })
}

impl RbcFit {
    /// Recomputes `theta_rbc` from the weight matrix; used to cross-check the
    /// algebra in tests.
    pub fn theta_from_weights(&self, design: &DesignSystem, ys: &[f64]) -> Result<f64> {
        let config = &design.config;
        let (p, v) = (config.p, config.deriv);
        let gamma_inv_e = linalg::checked_solve(&design.gamma, &basis(p + 1, v))?;
        let wy = &self.omega_rbc * DVector::from_column_slice(ys);
        Ok(factorial(v) / (design.n as f64 * config.h.powi(v as i32)) * gamma_inv_e.dot(&wy))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn simple_config(p: usize, deriv: usize, h: f64) -> LpConfig {
        LpConfig::new(p, deriv, h, Kernel::Uniform, 0.0).unwrap()
    }

    /// Independent brute-force design sums, written directly from the matrix
    /// definitions without reusing library code paths.
    fn naive_gamma_lambda1(xs: &[f64], h: f64, p: usize) -> (DMatrix<f64>, DVector<f64>) {
        let n = xs.len() as f64;
        let mut gamma = DMatrix::zeros(p + 1, p + 1);
        let mut lambda1 = DVector::zeros(p + 1);
        for &x in xs {
            let u: f64 = x / h;
            let k = if u.abs() <= 1.0 { 0.5 } else { 0.0 };
            for j in 0..=p {
                for l in 0..=p {
                    gamma[(j, l)] += k * u.powi((j + l) as i32) / (n * h);
                }
                lambda1[j] += k * u.powi((j + p + 1) as i32) / (n * h);
            }
        }
        (gamma, lambda1)
    }

    #[test]
    fn three_point_design_matches_hand_sums() {
        let xs = [-0.25, 0.0, 0.25];
        let config = simple_config(1, 0, 0.5);
        let d = build_design(&xs, &config).unwrap();

        let (gamma, lambda1) = naive_gamma_lambda1(&xs, 0.5, 1);
        assert_abs_diff_eq!(d.gamma[(0, 0)], gamma[(0, 0)], epsilon = 1e-14);
        assert_abs_diff_eq!(d.gamma[(1, 1)], gamma[(1, 1)], epsilon = 1e-14);
        assert_abs_diff_eq!(d.lambda[0][0], lambda1[0], epsilon = 1e-14);
        assert_abs_diff_eq!(d.lambda[0][1], lambda1[1], epsilon = 1e-14);

        // frozen values from the hand sum: u in {-1/2, 0, 1/2}, K = 1/2
        assert_abs_diff_eq!(d.gamma[(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d.gamma[(0, 1)], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d.gamma[(1, 1)], 1.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d.lambda[0][0], 1.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d.lambda[0][1], 0.0, epsilon = 1e-14);
        assert_eq!(d.effective_n, 3);
        // window [-0.5, 0.5] overruns both data edges; ties resolve left
        assert_eq!(d.boundary, Boundary::Left);
    }

    #[test]
    fn gamma_equals_omega_r_over_n() {
        let xs: Vec<f64> = (0..40).map(|i| -0.9 + 0.046 * i as f64).collect();
        let config = simple_config(2, 1, 0.6);
        let d = build_design(&xs, &config).unwrap();
        let mut rmat = DMatrix::zeros(xs.len(), 3);
        for (i, &u) in d.u_h.iter().enumerate() {
            rmat.row_mut(i).copy_from(&poly_vec(u, 2).transpose());
        }
        let recon = &d.omega * rmat / xs.len() as f64;
        assert_relative_eq!(recon, d.gamma, max_relative = 1e-12);
    }

    #[test]
    fn empty_window_is_an_error() {
        let xs = [5.0, 6.0, 7.0];
        let config = simple_config(1, 0, 0.5);
        assert!(matches!(build_design(&xs, &config), Err(Error::EmptyWindow)));
    }

    #[test]
    fn singular_gram_is_reported() {
        let xs = [0.1; 12];
        let ys = [1.0; 12];
        let config = simple_config(1, 0, 0.5);
        assert!(matches!(fit_lp(&xs, &ys, &config), Err(Error::Singular { .. })));
    }

    #[test]
    fn insufficient_window_is_reported() {
        let xs = [0.0, 0.01, 3.0, 4.0, 5.0];
        let ys = [0.0; 5];
        let config = simple_config(1, 0, 0.05);
        assert!(matches!(fit_lp(&xs, &ys, &config), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn polynomial_of_degree_p_is_reproduced_exactly() {
        let xs: Vec<f64> = (0..60).map(|i| -1.0 + i as f64 / 30.0).collect();
        let truth = |x: f64| 0.7 - 1.3 * x + 0.5 * x * x;
        let ys: Vec<f64> = xs.iter().map(|&x| truth(x)).collect();
        let config = simple_config(2, 0, 0.8);
        let fit = fit_lp(&xs, &ys, &config).unwrap();
        assert_relative_eq!(fit.beta[0], 0.7, max_relative = 1e-10);
        assert_relative_eq!(fit.beta[1], -1.3, max_relative = 1e-10);
        assert_relative_eq!(fit.beta[2], 0.5, max_relative = 1e-10);
        assert!(fit.residuals.iter().all(|r| r.abs() < 1e-10));
        assert_relative_eq!(point_estimate(&fit, 2).unwrap(), 1.0, max_relative = 1e-9);
    }

    #[test]
    fn rho_one_collapses_to_higher_degree_fit() {
        let xs: Vec<f64> = (0..80).map(|i| (i as f64 * 0.7215).sin()).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (2.0 * x).cos() + 0.3 * x).collect();
        for v in 0..2 {
            let config = LpConfig::new(2, v, 0.7, Kernel::Epanechnikov, 0.1).unwrap();
            let rbc = fit_rbc(&xs, &ys, &config).unwrap();
            let direct = factorial(v) * rbc.fit_p1.beta[v];
            assert_relative_eq!(rbc.theta_rbc, direct, max_relative = 1e-10);
        }
    }

    #[test]
    fn weight_form_matches_direct_form() {
        let xs: Vec<f64> = (0..70).map(|i| -1.0 + i as f64 / 35.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (3.0_f64 * x).sin()).collect();
        for rho in [0.5, 1.0, 2.0] {
            let config =
                LpConfig::new(1, 0, 0.4, Kernel::Triangular, 0.2).unwrap().with_rho(rho).unwrap();
            let design = build_design(&xs, &config).unwrap();
            let rbc = fit_rbc_on_design(&ys, &design).unwrap();
            let from_weights = rbc.theta_from_weights(&design, &ys).unwrap();
            assert_relative_eq!(rbc.theta_rbc, from_weights, max_relative = 1e-10);
        }
    }

    #[test]
    fn rbc_is_exact_for_degree_p_plus_one_polynomials() {
        let xs: Vec<f64> = (0..90).map(|i| -1.0 + i as f64 / 45.0).collect();
        // degree p+1 = 2 polynomial; second-degree term defeats the p = 1 fit
        let truth = |x: f64| 1.0 + 0.5 * x - 2.0 * x * x;
        let ys: Vec<f64> = xs.iter().map(|&x| truth(x)).collect();
        for rho in [0.5, 1.0, 2.0] {
            let config =
                LpConfig::new(1, 0, 0.3, Kernel::Uniform, 0.0).unwrap().with_rho(rho).unwrap();
            let rbc = fit_rbc(&xs, &ys, &config).unwrap();
            assert_abs_diff_eq!(rbc.theta_rbc, 1.0, epsilon = 1e-8);
            assert!(rbc.bias_term.abs() > 1e-4, "bias term should be active");
        }
    }

    #[test]
    fn conditional_mean_identity_on_noiseless_data() {
        // mu exactly known with its Taylor coefficients at eval = 0.15
        let eval = 0.15;
        let mu = |x: f64| (2.0 * x).sin() + x * x;
        let d1 = |x: f64| 2.0 * (2.0 * x).cos() + 2.0 * x;
        let xs: Vec<f64> = (0..120).map(|i| -1.0 + i as f64 / 60.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| mu(x)).collect();
        let config = LpConfig::new(1, 0, 0.35, Kernel::Epanechnikov, eval).unwrap();
        let design = build_design(&xs, &config).unwrap();
        let fit = fit_on_design(&ys, &design, FitTier::Main).unwrap();

        let beta_true = DVector::from_vec(vec![mu(eval), d1(eval)]);
        let mut misfit = DVector::zeros(2);
        for (i, &x) in xs.iter().enumerate() {
            let taylor = beta_true[0] + beta_true[1] * (x - eval);
            misfit.axpy(mu(x) - taylor, &design.omega.column(i).clone_owned(), 1.0);
        }
        misfit /= xs.len() as f64;
        let rhs = design.gamma_inv().unwrap() * misfit;
        assert_relative_eq!(fit.beta[0] - mu(eval), rhs[0], max_relative = 1e-10);
    }

    #[test]
    fn constant_shift_moves_level_not_slope() {
        let xs: Vec<f64> = (0..50).map(|i| -1.0 + i as f64 / 25.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| (1.4 * x).cos()).collect();
        let shifted: Vec<f64> = ys.iter().map(|y| y + 10.0).collect();
        let c0 = simple_config(1, 0, 0.5);
        let c1 = LpConfig::new(2, 1, 0.5, Kernel::Uniform, 0.0).unwrap();
        let f0 = fit_lp(&xs, &ys, &c0).unwrap();
        let f0s = fit_lp(&xs, &shifted, &c0).unwrap();
        assert_relative_eq!(
            point_estimate(&f0s, 0).unwrap(),
            point_estimate(&f0, 0).unwrap() + 10.0,
            max_relative = 1e-10
        );
        let f1 = fit_lp(&xs, &ys, &c1).unwrap();
        let f1s = fit_lp(&xs, &shifted, &c1).unwrap();
        assert_relative_eq!(
            point_estimate(&f1s, 1).unwrap(),
            point_estimate(&f1, 1).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn boundary_is_detected_from_the_sample() {
        let xs: Vec<f64> = (0..100).map(|i| i as f64 / 99.0).collect();
        let near_left = LpConfig::new(1, 0, 0.2, Kernel::Uniform, 0.05).unwrap();
        assert_eq!(build_design(&xs, &near_left).unwrap().boundary, Boundary::Left);
        let near_right = LpConfig::new(1, 0, 0.2, Kernel::Uniform, 0.97).unwrap();
        assert_eq!(build_design(&xs, &near_right).unwrap().boundary, Boundary::Right);
        let middle = LpConfig::new(1, 0, 0.2, Kernel::Uniform, 0.5).unwrap();
        assert_eq!(build_design(&xs, &middle).unwrap().boundary, Boundary::Interior);
        let forced = near_left.clone().with_boundary(Boundary::Interior);
        assert_eq!(build_design(&xs, &forced).unwrap().boundary, Boundary::Interior);
    }

    #[test]
    fn parity_and_rho_warnings() {
        let even = LpConfig::new(2, 0, 0.5, Kernel::Uniform, 0.0).unwrap();
        assert!(even.warnings.iter().any(|w| w.contains("even")));
        let odd = LpConfig::new(1, 0, 0.5, Kernel::Uniform, 0.0).unwrap();
        assert!(odd.warnings.is_empty());
        let clamped = odd.with_rho(100.0).unwrap();
        assert_eq!(clamped.rho, RHO_LIMITS.1);
        assert!(clamped.warnings.iter().any(|w| w.contains("clamped")));
    }

    #[test]
    fn config_validation_errors() {
        assert!(LpConfig::new(1, 2, 0.5, Kernel::Uniform, 0.0).is_err());
        assert!(LpConfig::new(1, 0, -0.5, Kernel::Uniform, 0.0).is_err());
        assert!(LpConfig::new(1, 0, 0.5, Kernel::Uniform, f64::NAN).is_err());
    }
}

//! Confidence intervals, Studentized statistics, and the check-function loss
//! used to score empirical coverage.

use crate::bandwidth::BandwidthChoice;
use crate::design::{build_design, fit_on_design, fit_rbc_on_design, point_estimate, FitTier, LpConfig};
use crate::error::{Error, Result};
use crate::variance::{sigma2_conventional, sigma2_rbc, HcFlavor, VarianceEstimate};
use crate::Centering;
use serde::Serialize;

/// Standard normal density.
pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF via the Acklam rational approximation
/// (absolute error below 1.2e-9 on (0, 1)).
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p) || p == 0.0 || p == 1.0 || !p.is_finite() {
        return Err(Error::InvalidConfig(format!("quantile probability {p} must lie in (0, 1)")));
    }
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    let z = if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    Ok(z)
}

/// Two-sided interval `[center - z_high * se, center - z_low * se]`.
#[derive(Debug, Clone, Serialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    /// Nominal coverage, e.g. 0.95.
    pub level: f64,
    pub center: f64,
    pub se: f64,
    pub method: Centering,
    /// Lower standardized quantile (negative for equal-tailed intervals).
    pub z_low: f64,
    pub z_high: f64,
}

impl ConfidenceInterval {
    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }
}

/// Equal-tailed interval at miscoverage `alpha` from precomputed parts.
pub fn ci_from_parts(
    estimate: f64,
    variance: &VarianceEstimate,
    alpha: f64,
) -> Result<ConfidenceInterval> {
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    build_ci_with_quantiles(estimate, variance, -z, z, 1.0 - alpha)
}

/// Full pipeline: fit, Studentize, and interval-ize in one call.
///
/// `config` supplies the problem shape (degree, derivative, kernel,
/// evaluation point, bandwidth ratio); the bandwidth itself comes from `bw`.
/// Conventional centering pairs the degree-p estimate with its own scale;
/// bias-corrected centering pairs the corrected estimate with the
/// correction-aware scale.
pub fn build_ci(
    xs: &[f64],
    ys: &[f64],
    config: &LpConfig,
    alpha: f64,
    method: Centering,
    flavor: HcFlavor,
    bw: &BandwidthChoice,
) -> Result<ConfidenceInterval> {
    let (estimate, variance) = estimate_with_scale(xs, ys, config, method, flavor, bw)?;
    ci_from_parts(estimate, &variance, alpha)
}

/// Point estimate and matching variance for one centering at a selected
/// bandwidth.
pub fn estimate_with_scale(
    xs: &[f64],
    ys: &[f64],
    config: &LpConfig,
    method: Centering,
    flavor: HcFlavor,
    bw: &BandwidthChoice,
) -> Result<(f64, VarianceEstimate)> {
    let cfg = LpConfig::new(config.p, config.deriv, bw.h, config.kernel.clone(), config.eval)?
        .with_rho(config.rho)?
        .with_boundary(config.boundary);
    let design = build_design(xs, &cfg)?;
    match method {
        Centering::Conventional => {
            let fit = fit_on_design(ys, &design, FitTier::Main)?;
            let estimate = point_estimate(&fit, cfg.deriv)?;
            let variance = sigma2_conventional(&fit, &design, flavor)?;
            Ok((estimate, variance))
        }
        Centering::Rbc => {
            let rbc = fit_rbc_on_design(ys, &design)?;
            let variance = sigma2_rbc(&rbc, &design, flavor)?;
            Ok((rbc.theta_rbc, variance))
        }
    }
}

/// Interval from explicit standardized quantiles; supports asymmetric pairs.
pub fn build_ci_with_quantiles(
    estimate: f64,
    variance: &VarianceEstimate,
    z_low: f64,
    z_high: f64,
    level: f64,
) -> Result<ConfidenceInterval> {
    if !estimate.is_finite() {
        return Err(Error::InvalidConfig("estimate is not finite".into()));
    }
    if !variance.se.is_finite() || variance.se < 0.0 {
        return Err(Error::InvalidConfig(format!("standard error {} is invalid", variance.se)));
    }
    if !(z_low < z_high) {
        return Err(Error::InvalidConfig(format!(
            "quantiles must satisfy z_low < z_high, got {z_low} >= {z_high}"
        )));
    }
    Ok(ConfidenceInterval {
        lower: estimate - z_high * variance.se,
        upper: estimate - z_low * variance.se,
        level,
        center: estimate,
        se: variance.se,
        method: variance.centering,
        z_low,
        z_high,
    })
}

/// Studentized deviation from a hypothesized value, from precomputed parts.
pub fn t_from_parts(estimate: f64, true_value: f64, variance: &VarianceEstimate) -> Result<f64> {
    if variance.se == 0.0 {
        return Err(Error::ZeroSe);
    }
    if !variance.se.is_finite() || variance.se < 0.0 {
        return Err(Error::InvalidConfig(format!("standard error {} is invalid", variance.se)));
    }
    Ok((estimate - true_value) / variance.se)
}

/// Full-pipeline t-statistic at a fixed bandwidth taken from `config.h`.
pub fn t_statistic(
    xs: &[f64],
    ys: &[f64],
    config: &LpConfig,
    method: Centering,
    flavor: HcFlavor,
    true_value: f64,
) -> Result<f64> {
    let bw = BandwidthChoice::fixed(config.h)?;
    let (estimate, variance) = estimate_with_scale(xs, ys, config, method, flavor, &bw)?;
    t_from_parts(estimate, true_value, &variance)
}

/// Check-function loss `e (tau - 1{e < 0})`; positive except at zero.
pub fn check_loss(error: f64, tau: f64) -> Result<f64> {
    if !(0.0 < tau && tau < 1.0) {
        return Err(Error::InvalidConfig(format!("tau = {tau} must lie in (0, 1)")));
    }
    if !error.is_finite() {
        return Err(Error::InvalidConfig("loss argument is not finite".into()));
    }
    Ok(error * (tau - if error < 0.0 { 1.0 } else { 0.0 }))
}

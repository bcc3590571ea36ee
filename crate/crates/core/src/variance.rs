//! Fixed-n heteroskedasticity-robust variance estimators for both the
//! conventional and the bias-corrected point estimates.
//!
//! The meat matrix always uses the squared estimation weights actually applied
//! to the data, so no asymptotic approximation enters: `sigma2` is the exact
//! conditional variance formula with plug-in residuals.

use crate::design::{DesignSystem, FitTier, LpFit, RbcFit, factorial, poly_vec};
use crate::error::{Error, Result};
use crate::linalg::{self, basis};
use crate::Centering;
use nalgebra::DMatrix;
use serde::Serialize;

/// Finite-sample residual weighting scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HcFlavor {
    /// Raw squared residuals.
    #[default]
    Hc0,
    /// Degrees-of-freedom scaling by `(n_w - 2 tr Q + tr Q'Q)/n_w`.
    Hc1,
    /// Per-observation scaling by `1/(1 - Q_ii)`.
    Hc2,
    /// Per-observation scaling by `1/(1 - Q_ii)^2`.
    Hc3,
}

impl HcFlavor {
    pub fn label(self) -> &'static str {
        match self {
            HcFlavor::Hc0 => "hc0",
            HcFlavor::Hc1 => "hc1",
            HcFlavor::Hc2 => "hc2",
            HcFlavor::Hc3 => "hc3",
        }
    }
}

/// A variance for one point estimate, with its standard error on the original
/// scale: `se = sqrt(sigma2 / (n h^{1+2 deriv}))`.
#[derive(Debug, Clone, Serialize)]
pub struct VarianceEstimate {
    pub sigma2: f64,
    pub se: f64,
    pub flavor: HcFlavor,
    pub centering: Centering,
}

fn tier_for_fit(fit: &LpFit, design: &DesignSystem) -> Result<FitTier> {
    let c = &design.config;
    if fit.degree == c.p && (fit.bandwidth - c.h).abs() <= 1e-12 * c.h {
        Ok(FitTier::Main)
    } else if fit.degree == c.p + 1 && (fit.bandwidth - c.b).abs() <= 1e-12 * c.b {
        Ok(FitTier::Bar)
    } else {
        Err(Error::InvalidConfig(format!(
            "fit (degree {}, bandwidth {:.4}) does not belong to this design",
            fit.degree, fit.bandwidth
        )))
    }
}

/// Multiplier applied to each squared residual under `flavor`.
///
/// Leverages come from the weighted regression the fit solved, restricted to
/// observations with positive kernel weight; unweighted observations get a
/// multiplier of one (their residuals never enter the meat matrix).
pub fn residual_weights(fit: &LpFit, design: &DesignSystem, flavor: HcFlavor) -> Result<Vec<f64>> {
    let tier = tier_for_fit(fit, design)?;
    let (deg, d, u, k, gram) = match tier {
        FitTier::Main => {
            (design.config.p, design.config.h, &design.u_h, &design.k_h, &design.gamma)
        }
        FitTier::Bar => {
            (design.config.p + 1, design.config.b, &design.u_b, &design.k_b, &design.gamma_bar)
        }
    };
    let n = design.n;
    if matches!(flavor, HcFlavor::Hc0) {
        return Ok(vec![1.0; n]);
    }

    let gram_inv = linalg::checked_inverse(gram)?;
    let nd = n as f64 * d;
    let leverage = |i: usize| {
        let r = poly_vec(u[i], deg);
        k[i] / nd * (gram_inv.clone() * &r).dot(&r)
    };

    match flavor {
        HcFlavor::Hc0 => unreachable!(),
        HcFlavor::Hc1 => {
            let mut n_w = 0usize;
            let mut tr_q = 0.0;
            let mut cross = DMatrix::zeros(deg + 1, deg + 1);
            let mut plain = DMatrix::zeros(deg + 1, deg + 1);
            for i in 0..n {
                if k[i] > 0.0 {
                    n_w += 1;
                    tr_q += leverage(i);
                    let r = poly_vec(u[i], deg);
                    cross.ger((k[i] / d) * (k[i] / d), &r, &r, 1.0);
                    plain.ger(1.0, &r, &r, 1.0);
                }
            }
            let tr_qtq =
                (&gram_inv * plain * &gram_inv * cross).trace() / (n as f64 * n as f64);
            let divisor = (n_w as f64 - 2.0 * tr_q + tr_qtq) / n_w as f64;
            if divisor <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "hc1 degrees-of-freedom divisor {divisor:.3e} is not positive"
                )));
            }
            Ok(k.iter().map(|&ki| if ki > 0.0 { 1.0 / divisor } else { 1.0 }).collect())
        }
        HcFlavor::Hc2 | HcFlavor::Hc3 => {
            let mut out = vec![1.0; n];
            for i in 0..n {
                if k[i] > 0.0 {
                    let q = leverage(i);
                    if q >= 1.0 {
                        return Err(Error::LeverageOne { index: i, leverage: q });
                    }
                    out[i] = match flavor {
                        HcFlavor::Hc2 => 1.0 / (1.0 - q),
                        _ => 1.0 / ((1.0 - q) * (1.0 - q)),
                    };
                }
            }
            Ok(out)
        }
    }
}

/// Fixed-n variance of the conventional degree-`p` estimate.
pub fn sigma2_conventional(
    fit: &LpFit,
    design: &DesignSystem,
    flavor: HcFlavor,
) -> Result<VarianceEstimate> {
    if tier_for_fit(fit, design)? != FitTier::Main {
        return Err(Error::InvalidConfig(
            "conventional variance needs the degree-p fit at bandwidth h".into(),
        ));
    }
    let c = &design.config;
    let (n, h, v) = (design.n, c.h, c.deriv);
    let weights = residual_weights(fit, design, flavor)?;
    let gamma_inv_e = linalg::checked_solve(&design.gamma, &basis(c.p + 1, v))?;

    let mut acc = 0.0;
    for i in 0..n {
        if design.k_h[i] > 0.0 {
            let proj = gamma_inv_e.dot(&poly_vec(design.u_h[i], c.p));
            let term = design.k_h[i] * proj;
            acc += term * term * fit.residuals[i] * fit.residuals[i] * weights[i];
        }
    }
    let vfac = factorial(v);
    let sigma2 = vfac * vfac * acc / (n as f64 * h);
    let se = (sigma2 / (n as f64 * h.powi(1 + 2 * v as i32))).sqrt();
    Ok(VarianceEstimate { sigma2, se, flavor, centering: Centering::Conventional })
}

/// Fixed-n variance of the bias-corrected estimate.
///
/// Residuals come from the degree-`p+1` fit at bandwidth `b`; no further bias
/// correction is applied to them. Leverage weights likewise come from that
/// regression.
pub fn sigma2_rbc(
    rbc: &RbcFit,
    design: &DesignSystem,
    flavor: HcFlavor,
) -> Result<VarianceEstimate> {
    let c = &design.config;
    let (n, h, v) = (design.n, c.h, c.deriv);
    let weights = residual_weights(&rbc.fit_p1, design, flavor)?;
    let gamma_inv_e = linalg::checked_solve(&design.gamma, &basis(c.p + 1, v))?;

    let mut acc = 0.0;
    for i in 0..n {
        let s = gamma_inv_e.dot(&rbc.omega_rbc.column(i));
        let e = rbc.fit_p1.residuals[i];
        acc += s * s * e * e * weights[i];
    }
    let vfac = factorial(v);
    // h Ω Σ Ω' / n with the columns already carrying their h^{-1} K factors
    let sigma2 = vfac * vfac * acc * h / n as f64;
    let se = (sigma2 / (n as f64 * h.powi(1 + 2 * v as i32))).sqrt();
    Ok(VarianceEstimate { sigma2, se, flavor, centering: Centering::Rbc })
}

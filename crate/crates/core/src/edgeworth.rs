//! Coverage-error expansion machinery: influence kernels, plug-in moments,
//! fixed-n bias constants, and the scalar coverage-error objective driving
//! bandwidth selection.
//!
//! Population expectations of windowed quantities are replaced by their sample
//! analogs, `E[h^{-1} g(X_i)] -> (1/nh) Σ_i g(X_i)`, with residuals from a
//! pilot fit standing in for the errors and squared residuals for the
//! conditional variance. Distinct-index expectations average over ordered
//! pairs `i != j`. All reductions use compensated summation so results do not
//! depend on accumulation order beyond 1e-13.

use crate::design::{
    build_design, factorial, fit_on_design, poly_vec, Boundary, DesignSystem, FitTier, LpConfig,
    LpFit,
};
use crate::error::{Error, Result};
use crate::inference::{normal_pdf, normal_quantile};
use crate::linalg::{self, basis, KahanSum};
use crate::Centering;
use nalgebra::{DMatrix, DVector};

/// Plug-in moment estimates feeding the expansion polynomials.
///
/// `cross[k]` is the k-th expectation factor of the twelve-term fourth-order
/// polynomial, in source order; the attached z-polynomials, signs, and
/// variance powers are applied in [`EdgeworthCoefficients::omega4`].
#[derive(Debug, Clone)]
pub struct PluginMoments {
    pub centering: Centering,
    /// `E[h^{-1} l0(X)^2 v(X)]`; strictly positive on nondegenerate data.
    pub sigma_tilde2: f64,
    /// Third moment `E[h^{-1} l0(X)^3 e^3]`.
    pub m3: f64,
    /// `E[h^{-1} l0(X)^4 (e^4 - v(X)^2)]`; identically zero under the
    /// squared-residual plug-in, kept for fidelity to the general formula.
    pub m4: f64,
    pub cross: [f64; 12],
    /// Pilot fit whose residuals fed every moment.
    pub pilot: LpFit,
    pub pilot_config: LpConfig,
}

/// Leading bias constant `B` and its bandwidth exponent `a`, so that the
/// standardized bias is `sqrt(n h) h^a B`.
#[derive(Debug, Clone, Copy)]
pub struct BiasConstant {
    pub value: f64,
    pub exponent: usize,
}

/// Everything needed to evaluate the coverage-error expansion at any quantile.
#[derive(Debug, Clone)]
pub struct EdgeworthCoefficients {
    pub moments: PluginMoments,
    pub sigma_tilde2: f64,
    pub bias: BiasConstant,
    /// Variance-error coefficient; identically zero under fixed-n
    /// Studentization.
    pub lambda: f64,
    pub centering: Centering,
}

/// Influence kernel `l0` at a single covariate value.
///
/// Conventional: `v! e_v' Γ^{-1} (K r_p)((x - eval)/h)`. Bias-corrected:
/// subtracts `rho^{p+1} v! e_v' Γ^{-1} Λ_1 e_{p+1}' Ḡ^{-1} (K r_{p+1})((x - eval)/b)`.
pub fn ell0(design: &DesignSystem, x: f64, centering: Centering) -> Result<f64> {
    let c = &design.config;
    let (p, v) = (c.p, c.deriv);
    let alpha = linalg::checked_solve(&design.gamma, &basis(p + 1, v))? * factorial(v);
    let uh = (x - c.eval) / c.h;
    let conventional = c.kernel.evaluate(uh) * alpha.dot(&poly_vec(uh, p));
    match centering {
        Centering::Conventional => Ok(conventional),
        Centering::Rbc => {
            let clam = alpha.dot(&design.lambda[0]);
            let gbar_e = linalg::checked_solve(&design.gamma_bar, &basis(p + 2, p + 1))?;
            let ub = (x - c.eval) / c.b;
            let tail = c.kernel.evaluate(ub) * gbar_e.dot(&poly_vec(ub, p + 1));
            Ok(conventional - c.rho.powi((p + 1) as i32) * clam * tail)
        }
    }
}

/// Per-observation working quantities for the moment sums.
struct MomentWorkspace {
    n: usize,
    h: f64,
    rho_pow: f64,
    /// Influence values `l0(X_i)` for the requested centering.
    l0: Vec<f64>,
    /// Pilot residuals.
    eps: Vec<f64>,
    /// Tier basis `r_p~(X_{d,i})`, unweighted.
    r_tier: Vec<DVector<f64>>,
    /// Tier kernel-weighted basis `(K r_p~)(X_{d,i})`.
    w_tier: Vec<DVector<f64>>,
    /// `G~^{-1} w_tier`.
    giw: Vec<DVector<f64>>,
    /// Main-tier weighted basis `(K r_p)(X_{h,i})`, used by `l1`.
    col_h: Vec<DVector<f64>>,
    /// `a_j` with `l1_conv(i, j) = a_j . col_h_i`.
    a_row: Vec<DVector<f64>>,
    /// Bar-tier weighted basis and `q_j` with
    /// `l1(i, j) = a_j . col_h_i - rho^{p+1} q_j . col_b_i`; empty for the
    /// conventional centering.
    col_b: Vec<DVector<f64>>,
    q_row: Vec<DVector<f64>>,
}

impl MomentWorkspace {
    fn l1(&self, i: usize, j: usize) -> f64 {
        let mut val = self.a_row[j].dot(&self.col_h[i]);
        if !self.q_row.is_empty() {
            val -= self.rho_pow * self.q_row[j].dot(&self.col_b[i]);
        }
        val
    }

    fn build(design: &DesignSystem, eps: &[f64], centering: Centering) -> Result<Self> {
        let c = &design.config;
        let (p, v, h, b, n) = (c.p, c.deriv, c.h, c.b, design.n);
        let gamma_inv = design.gamma_inv()?;
        let alpha = linalg::checked_solve(&design.gamma, &basis(p + 1, v))? * factorial(v);
        let clam = alpha.dot(&design.lambda[0]);
        let glam = &gamma_inv * &design.lambda[0];
        let gbar_inv = design.gamma_bar_inv()?;
        let gbar_e = gbar_inv.column(p + 1).clone_owned();
        let rho_pow = c.rho.powi((p + 1) as i32);

        let mut col_h = Vec::with_capacity(n);
        let mut col_b = Vec::with_capacity(n);
        let mut l0p = Vec::with_capacity(n);
        let mut l0 = Vec::with_capacity(n);
        for i in 0..n {
            let rh = poly_vec(design.u_h[i], p);
            let ch = rh * design.k_h[i];
            let conv = alpha.dot(&ch);
            l0p.push(conv);
            col_h.push(ch);
            let rb = poly_vec(design.u_b[i], p + 1);
            let cb = rb * design.k_b[i];
            match centering {
                Centering::Conventional => l0.push(conv),
                Centering::Rbc => l0.push(conv - rho_pow * clam * gbar_e.dot(&cb)),
            }
            col_b.push(cb);
        }

        // delta-method rows for the second influence kernel: each j carries the
        // fluctuation of the sample matrices around their means
        let mut a_row = Vec::with_capacity(n);
        let mut q_row = Vec::with_capacity(n);
        for j in 0..n {
            let rj = poly_vec(design.u_h[j], p);
            let a_j = &alpha * h - &gamma_inv * &rj * l0p[j];
            a_row.push(a_j);
            if matches!(centering, Centering::Rbc) {
                let rbj = poly_vec(design.u_b[j], p + 1);
                let cbj = &rbj * design.k_b[j];
                let s1 = h * clam - l0p[j] * glam.dot(&rj);
                let s2 = l0p[j] * design.u_h[j].powi((p + 1) as i32) - h * clam;
                let q_j = &gbar_e * (s1 + s2 + clam * b)
                    - (&gbar_inv * rbj) * (clam * gbar_e.dot(&cbj));
                q_row.push(q_j);
            }
        }

        // tier quantities: conventional reuses (p, h); rbc uses (p+1, b)
        let (r_tier, w_tier, tier_inv): (Vec<_>, Vec<_>, &DMatrix<f64>) = match centering {
            Centering::Conventional => (
                (0..n).map(|i| poly_vec(design.u_h[i], p)).collect(),
                col_h.clone(),
                &gamma_inv,
            ),
            Centering::Rbc => (
                (0..n).map(|i| poly_vec(design.u_b[i], p + 1)).collect(),
                col_b.clone(),
                &gbar_inv,
            ),
        };
        let giw = w_tier.iter().map(|w| tier_inv * w).collect();

        Ok(Self {
            n,
            h,
            rho_pow,
            l0,
            eps: eps.to_vec(),
            r_tier,
            w_tier,
            giw,
            col_h,
            a_row,
            col_b,
            q_row,
        })
    }
}

/// Computes every moment entering the expansion from one pilot fit.
pub fn plugin_moments(
    xs: &[f64],
    ys: &[f64],
    pilot_config: &LpConfig,
    centering: Centering,
) -> Result<PluginMoments> {
    let design = build_design(xs, pilot_config)?;
    let pilot = fit_on_design(ys, &design, FitTier::Main)?;
    let ws = MomentWorkspace::build(&design, &pilot.residuals, centering)?;
    let n = ws.n;
    let nf = n as f64;
    let nh = nf * ws.h;
    let tier_dim = ws.r_tier[0].len();

    let mut s_sigma = KahanSum::default();
    let mut s_m3 = KahanSum::default();
    let mut s_m4 = KahanSum::default();
    let mut s_mbar = KahanSum::default();
    for i in 0..n {
        let (l, e) = (ws.l0[i], ws.eps[i]);
        let le2 = l * l * e * e;
        s_sigma.add(le2);
        s_m3.add(l * l * l * e * e * e);
        s_m4.add(l.powi(4) * (e.powi(4) - (e * e) * (e * e)));
        s_mbar.add(le2);
    }
    let sigma_tilde2 = s_sigma.value() / nh;
    let m3 = s_m3.value() / nh;
    let m4 = s_m4.value() / nh;
    // inner centering constant E[l0^2 v] carries no h^{-1}
    let mbar = s_mbar.value() / nf;
    if !(sigma_tilde2 > 0.0) || !sigma_tilde2.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "pilot variance moment {sigma_tilde2:.3e} is not positive; data are degenerate at this bandwidth"
        )));
    }

    let mut s2 = KahanSum::default();
    let mut s4 = KahanSum::default();
    let mut s5_row = vec![KahanSum::default(); tier_dim];
    let mut s5_col = vec![KahanSum::default(); tier_dim];
    let mut s7_mat = vec![KahanSum::default(); tier_dim * tier_dim];
    let mut s8 = KahanSum::default();
    let mut s9 = KahanSum::default();
    let mut s12 = KahanSum::default();
    for i in 0..n {
        let (l, e) = (ws.l0[i], ws.eps[i]);
        let e2 = e * e;
        s2.add(l * ws.l1(i, i) * e2);
        let lev = ws.r_tier[i].dot(&ws.giw[i]);
        s4.add(l * l * lev * e2);
        for d in 0..tier_dim {
            s5_row[d].add(l * l * l * e2 * ws.r_tier[i][d]);
            s5_col[d].add(ws.w_tier[i][d] * l * e2);
            for d2 in 0..tier_dim {
                s7_mat[d * tier_dim + d2].add(ws.r_tier[i][d] * l * l * ws.r_tier[i][d2]);
            }
        }
        s8.add(l.powi(4) * e2 * e2);
        let centered = l * l * e2 - mbar;
        s9.add(centered * l * l * e2);
        s12.add(centered * centered);
    }

    // distinct-index pair sums, normalized by n (n - 1) h^2
    let mut s6 = KahanSum::default();
    let mut s10 = KahanSum::default();
    let mut s11 = KahanSum::default();
    for i in 0..n {
        let (li, ei) = (ws.l0[i], ws.eps[i]);
        let ei2 = ei * ei;
        if li == 0.0 {
            continue;
        }
        for j in 0..n {
            if j == i {
                continue;
            }
            let (lj, ej) = (ws.l0[j], ws.eps[j]);
            let ej2 = ej * ej;
            let proj = ws.r_tier[i].dot(&ws.giw[j]);
            s6.add(li * li * proj * proj * ej2);
            let l1 = ws.l1(i, j);
            s10.add(l1 * li * lj * lj * ej2 * ei2);
            s11.add(l1 * li * (lj * lj * ej2 - mbar) * ei2);
        }
    }
    let pair_norm = nf * (nf - 1.0) * ws.h * ws.h;

    // factored triple-index term: row . matrix . column built from averages;
    // the row average transposes the column one, so it is reused
    let gamma_tier_inv = match centering {
        Centering::Conventional => design.gamma_inv()?,
        Centering::Rbc => design.gamma_bar_inv()?,
    };
    let mat7 = DMatrix::from_fn(tier_dim, tier_dim, |r, c| s7_mat[r * tier_dim + c].value() / nh);
    let col5 = DVector::from_iterator(tier_dim, s5_col.iter().map(|k| k.value() / nh));
    let row5 = DVector::from_iterator(tier_dim, s5_row.iter().map(|k| k.value() / nh));
    let gi_col = &gamma_tier_inv * &col5;
    let e7 = gi_col.dot(&(&mat7 * &gi_col));
    let e5 = (&gamma_tier_inv * &row5).dot(&col5);

    let cross = [
        m3 * m3,
        s2.value() / nh,
        m4,
        s4.value() / nh,
        e5,
        s6.value() / pair_norm,
        e7,
        s8.value() / nh,
        s9.value() / nh,
        s10.value() / pair_norm,
        s11.value() / pair_norm,
        s12.value() / nh,
    ];

    Ok(PluginMoments {
        centering,
        sigma_tilde2,
        m3,
        m4,
        cross,
        pilot,
        pilot_config: pilot_config.clone(),
    })
}

/// Leading fixed-n bias constant for the requested centering.
///
/// Derivatives of the regression function come from a global polynomial pilot
/// of degree `p + 4`; the matrix factors are the sample design quantities.
/// The exponent is `p+1` for the conventional estimate and, for the
/// bias-corrected one, `p+2` at a boundary or `p+3` in the interior (the
/// ample-smoothness case).
pub fn bias_constant(
    xs: &[f64],
    ys: &[f64],
    config: &LpConfig,
    centering: Centering,
) -> Result<BiasConstant> {
    let design = build_design(xs, config)?;
    bias_constant_on_design(xs, ys, &design, centering)
}

pub fn bias_constant_on_design(
    xs: &[f64],
    ys: &[f64],
    design: &DesignSystem,
    centering: Centering,
) -> Result<BiasConstant> {
    let c = &design.config;
    let (p, v) = (c.p, c.deriv);
    let derivs = crate::design::global_poly_fit(xs, ys, c.eval, p + 4)?.derivs;
    let alpha = linalg::checked_solve(&design.gamma, &basis(p + 1, v))? * factorial(v);
    match centering {
        Centering::Conventional => {
            let value = alpha.dot(&design.lambda[0]) * derivs[p + 1] / factorial(p + 1);
            Ok(BiasConstant { value, exponent: p + 1 })
        }
        Centering::Rbc => {
            let gbar_e = linalg::checked_solve(&design.gamma_bar, &basis(p + 2, p + 1))?;
            let correction1 = gbar_e.dot(&design.lambda_bar[0]);
            // { Λ_2 - rho^{-1} Λ_1 e' Ḡ^{-1} Λ̄_1 } e_v' Γ^{-1}, contracted
            let lead = alpha.dot(&design.lambda[1])
                - alpha.dot(&design.lambda[0]) * correction1 / c.rho;
            match design.boundary {
                Boundary::Left | Boundary::Right => {
                    let value = lead * derivs[p + 2] / factorial(p + 2);
                    Ok(BiasConstant { value, exponent: p + 2 })
                }
                _ => {
                    let correction2 = gbar_e.dot(&design.lambda_bar[1]);
                    let next = alpha.dot(&design.lambda[2])
                        - alpha.dot(&design.lambda[0]) * correction2 / (c.rho * c.rho);
                    let value = derivs[p + 2] / factorial(p + 2) * lead / c.h
                        + derivs[p + 3] / factorial(p + 3) * next;
                    Ok(BiasConstant { value, exponent: p + 3 })
                }
            }
        }
    }
}

impl EdgeworthCoefficients {
    /// Full plug-in estimation: moments and bias constant from one
    /// configuration.
    pub fn estimate(
        xs: &[f64],
        ys: &[f64],
        pilot_config: &LpConfig,
        centering: Centering,
    ) -> Result<Self> {
        let moments = plugin_moments(xs, ys, pilot_config, centering)?;
        let bias = bias_constant(xs, ys, pilot_config, centering)?;
        Ok(Self {
            sigma_tilde2: moments.sigma_tilde2,
            moments,
            bias,
            lambda: 0.0,
            centering,
        })
    }

    pub fn omega1(&self, z: f64) -> f64 {
        let s2 = self.sigma_tilde2;
        normal_pdf(z) * s2.powf(-1.5) * self.moments.m3 * (2.0 * z * z - 1.0) / 6.0
    }

    pub fn omega2(&self, z: f64) -> f64 {
        -normal_pdf(z) / self.sigma_tilde2.sqrt()
    }

    pub fn omega3(&self, z: f64) -> f64 {
        -normal_pdf(z) * z / 2.0
    }

    pub fn omega4(&self, z: f64) -> f64 {
        let s2 = self.sigma_tilde2;
        let z2 = z * z;
        let e = &self.moments.cross;
        let mut total = 0.0;
        total += e[0] / (s2 * s2 * s2) * (z2 * z / 3.0 + 7.0 * z / 4.0 + s2 * z * (z2 - 3.0) / 4.0);
        total += e[1] / s2 * (-z * (z2 - 3.0) / 2.0);
        total += e[2] / (s2 * s2) * (z * (z2 - 3.0) / 8.0);
        total -= e[3] / s2 * (z * (z2 - 1.0) / 2.0);
        total -= e[4] / (s2 * s2) * (z * (z2 - 1.0));
        total += e[5] / s2 * (z * (z2 - 1.0) / 4.0);
        total += e[6] / (s2 * s2) * (z * (z2 - 1.0) / 2.0);
        total += e[7] / (s2 * s2) * (-z * (z2 - 3.0) / 24.0);
        total += e[8] / (s2 * s2) * (z * (z2 - 1.0) / 4.0);
        total += e[9] / (s2 * s2) * (z * (z2 - 3.0));
        total += e[10] / (s2 * s2) * (-z);
        total += e[11] / (s2 * s2) * (-z * (z2 + 1.0) / 8.0);
        normal_pdf(z) * total
    }

    pub fn omega5(&self, z: f64) -> f64 {
        -normal_pdf(z) / self.sigma_tilde2 * z / 2.0
    }

    pub fn omega6(&self, z: f64) -> f64 {
        normal_pdf(z) / (self.sigma_tilde2 * self.sigma_tilde2) * self.moments.m3 * z * z * z / 3.0
    }

    /// Full one-sided expansion term `E(z)` at sample size `n` and
    /// bandwidth `h`.
    pub fn expansion(&self, z: f64, n: usize, h: f64) -> f64 {
        let nh = n as f64 * h;
        let a = self.bias.exponent as i32;
        let eta_bias = nh.sqrt() * h.powi(a) * self.bias.value;
        nh.powf(-0.5) * self.omega1(z)
            + eta_bias * self.omega2(z)
            + self.lambda * self.omega3(z)
            + self.omega4(z) / nh
            + eta_bias * eta_bias * self.omega5(z)
            + h.powi(a) * self.bias.value * self.omega6(z)
    }
}

/// Scalar coverage-error objective in the bandwidth constant `H`, with
/// `h = H n^{-eta}`.
///
/// The three same-order terms of the symmetric-interval coverage error are
/// combined with the n-powers normalized so that, at the coverage-optimal
/// rate `eta = 1/(1 + a)`, every n-factor is one:
/// `CE(H) = 2 ω4(z)/H + H^{1+2a} 2 B^2 ω5(z) + H^a 2 B ω6(z)`.
pub fn ce_objective(
    h_const: f64,
    coeffs: &EdgeworthCoefficients,
    n: usize,
    eta: f64,
    alpha: f64,
) -> Result<f64> {
    if !(h_const > 0.0) || !h_const.is_finite() {
        return Err(Error::InvalidConfig(format!("bandwidth constant {h_const} must be positive")));
    }
    if !(0.0 < eta && eta < 1.0) {
        return Err(Error::InvalidConfig(format!("rate exponent {eta} must lie in (0, 1)")));
    }
    let z = normal_quantile(1.0 - alpha / 2.0)?;
    let a = coeffs.bias.exponent as f64;
    let nf = n as f64;
    let c4 = nf.powf(eta * (1.0 + a) - 1.0);
    let c5 = nf.powf(1.0 - eta * (1.0 + a));
    let b = coeffs.bias.value;
    Ok(c4 * 2.0 * coeffs.omega4(z) / h_const
        + c5 * h_const.powf(1.0 + 2.0 * a) * 2.0 * b * b * coeffs.omega5(z)
        + h_const.powf(a) * 2.0 * b * coeffs.omega6(z))
}

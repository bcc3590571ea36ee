//! Local polynomial point estimates and confidence intervals built to keep
//! coverage error small: robust bias correction for any derivative order,
//! fixed-n Studentization, higher-order coverage expansions, and the
//! bandwidth and kernel-shape selectors they induce.

pub mod bandwidth;
pub mod design;
pub mod edgeworth;
pub mod error;
pub mod harness;
pub mod inference;
pub mod kernels;
pub mod linalg;
pub mod variance;

use serde::Serialize;

/// Which point estimate an interval or variance refers to: the raw degree-p
/// fit or the bias-corrected one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Centering {
    Conventional,
    Rbc,
}

impl Centering {
    pub fn label(self) -> &'static str {
        match self {
            Centering::Conventional => "conventional",
            Centering::Rbc => "rbc",
        }
    }
}

pub use bandwidth::{
    equivalent_kernel, h_ce_optimal, h_mse_rot, h_tradeoff, k_star, rho_opt, rho_opt_with,
    rot_pilot_config, BandwidthChoice, BandwidthMethod, EquivalentKernel,
};
pub use design::{
    build_design, fit_lp, fit_rbc, global_poly_fit, point_estimate, Boundary, DesignSystem,
    GlobalPilot, LpConfig, LpFit, RbcFit,
};
pub use edgeworth::{
    bias_constant, ce_objective, ell0, plugin_moments, BiasConstant, EdgeworthCoefficients,
    PluginMoments,
};
pub use error::{Error, Result};
pub use harness::{
    run_mc, Dgp, McSettings, MethodSummary, NoiseLaw, PipelineSpec, SimulationReport, XLaw,
};
pub use inference::{
    build_ci, build_ci_with_quantiles, check_loss, ci_from_parts, estimate_with_scale, normal_pdf,
    normal_quantile, t_from_parts, t_statistic, ConfidenceInterval,
};
pub use kernels::{moment, quadrature, IntegrationRange, Kernel};
pub use variance::{residual_weights, sigma2_conventional, sigma2_rbc, HcFlavor, VarianceEstimate};

//! Monte Carlo harness: empirical coverage, interval length, and check loss
//! across estimation pipelines on synthetic data generating processes.
//!
//! Replications are seeded by a per-replication stream of one counter-based
//! generator, so any subset of replications reproduces exactly and the report
//! is a deterministic fold over the replication index.

use crate::bandwidth::{
    h_ce_optimal, h_mse_rot, h_tradeoff, rot_pilot_config, BandwidthMethod,
};
use crate::design::{build_design, Boundary, LpConfig};
use crate::error::{Error, Result};
use crate::inference::{build_ci, check_loss, ConfidenceInterval};
use crate::kernels::Kernel;
use crate::linalg::KahanSum;
use crate::variance::HcFlavor;
use crate::Centering;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Normal, StudentT, Uniform};
use serde::Serialize;

/// Covariate law on [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum XLaw {
    Uniform,
    /// Beta(2, 2) stretched to [-1, 1].
    BetaScaled,
}

/// Unit-variance noise law; the conditional variance function scales it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLaw {
    Gaussian,
    /// Student t with 5 degrees of freedom, scaled to unit variance.
    ScaledT5,
}

/// Synthetic regression model: mean function with derivatives through order
/// five, conditional variance, covariate law, and noise law.
#[derive(Clone)]
pub struct Dgp {
    pub name: &'static str,
    /// Returns `[mu(x), mu'(x), .., mu^(5)(x)]`.
    pub mu_derivs: fn(f64) -> [f64; 6],
    pub v_fn: fn(f64) -> f64,
    pub x_law: XLaw,
    pub noise: NoiseLaw,
}

impl std::fmt::Debug for Dgp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dgp")
            .field("name", &self.name)
            .field("x_law", &self.x_law)
            .field("noise", &self.noise)
            .finish()
    }
}

/// Derivative of `sum_j c[j] x^j` of order `k` at `x`.
fn poly_deriv(coeffs: &[f64], k: usize, x: f64) -> f64 {
    let mut acc = 0.0;
    for (j, &c) in coeffs.iter().enumerate().skip(k) {
        let mut fall = 1.0;
        for m in 0..k {
            fall *= (j - m) as f64;
        }
        acc += c * fall * x.powi((j - k) as i32);
    }
    acc
}

fn sine_damped_derivs(x: f64) -> [f64; 6] {
    let g = (-x * x).exp();
    let s = (3.0 * x).sin();
    let c = (3.0 * x).cos();
    // chain-rule ladder for sin(3x): each derivative multiplies by 3 and
    // rotates through the trig cycle
    let f = [s, 3.0 * c, -9.0 * s, -27.0 * c, 81.0 * s, 243.0 * c];
    // exp(-x^2) derivatives are polynomial multiples of the gaussian factor
    let q = [
        1.0,
        -2.0 * x,
        4.0 * x * x - 2.0,
        -8.0 * x * x * x + 12.0 * x,
        16.0 * x.powi(4) - 48.0 * x * x + 12.0,
        -32.0 * x.powi(5) + 160.0 * x.powi(3) - 120.0 * x,
    ];
    let mut out = [0.0; 6];
    for n in 0..6 {
        let mut binom = 1.0;
        for k in 0..=n {
            out[n] += binom * f[k] * q[n - k] * g;
            binom = binom * (n - k) as f64 / (k + 1) as f64;
        }
    }
    out
}

const HETERO_COEFFS: [f64; 7] = [0.3, 0.8, -1.1, 0.6, 1.4, -0.9, 0.7];

fn hetero_poly_derivs(x: f64) -> [f64; 6] {
    std::array::from_fn(|k| poly_deriv(&HETERO_COEFFS, k, x))
}

fn null_linear_derivs(x: f64) -> [f64; 6] {
    std::array::from_fn(|k| poly_deriv(&[0.4, 0.9], k, x))
}

impl Dgp {
    /// Damped sine wave, homoskedastic gaussian noise, uniform covariates.
    pub fn sine_damped() -> Self {
        Dgp {
            name: "sine-damped",
            mu_derivs: sine_damped_derivs,
            v_fn: |_| 0.25,
            x_law: XLaw::Uniform,
            noise: NoiseLaw::Gaussian,
        }
    }

    /// Degree-6 polynomial with heteroskedastic variance and heavy-tailed
    /// noise on bell-shaped covariates.
    pub fn hetero_poly() -> Self {
        Dgp {
            name: "hetero-poly",
            mu_derivs: hetero_poly_derivs,
            v_fn: |x| 0.5 + x * x,
            x_law: XLaw::BetaScaled,
            noise: NoiseLaw::ScaledT5,
        }
    }

    /// Linear mean: the zero-bias null for low-degree fits.
    pub fn null_linear() -> Self {
        Dgp {
            name: "null-linear",
            mu_derivs: null_linear_derivs,
            v_fn: |_| 0.09,
            x_law: XLaw::Uniform,
            noise: NoiseLaw::Gaussian,
        }
    }

    pub fn shipped() -> Vec<Dgp> {
        vec![Dgp::sine_damped(), Dgp::hetero_poly(), Dgp::null_linear()]
    }

    pub fn by_name(name: &str) -> Option<Dgp> {
        Dgp::shipped().into_iter().find(|d| d.name == name)
    }

    pub fn mu(&self, x: f64) -> f64 {
        (self.mu_derivs)(x)[0]
    }

    /// `mu^(k)(x)` for `k <= 5`.
    pub fn mu_deriv(&self, x: f64, k: usize) -> f64 {
        assert!(k <= 5, "derivatives available through order 5");
        (self.mu_derivs)(x)[k]
    }

    /// Finite-difference audit of the supplied derivatives.
    pub fn validate(&self) -> Result<()> {
        let delta = 1e-5;
        for i in 0..20 {
            let x = -0.95 + 1.9 * i as f64 / 19.0;
            for k in 1..=5usize {
                let fd = ((self.mu_derivs)(x + delta)[k - 1] - (self.mu_derivs)(x - delta)[k - 1])
                    / (2.0 * delta);
                let exact = (self.mu_derivs)(x)[k];
                let scale = exact.abs().max(1.0);
                if (fd - exact).abs() > 1e-5 * scale {
                    return Err(Error::InvalidConfig(format!(
                        "derivative order {k} of {} disagrees with finite differences at x = {x:.3}: {exact} vs {fd}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// One sample of size `n`.
    pub fn draw(&self, n: usize, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        let uniform = Uniform::new_inclusive(-1.0f64, 1.0).unwrap();
        let beta = Beta::new(2.0f64, 2.0).unwrap();
        let gauss = Normal::new(0.0f64, 1.0).unwrap();
        let t5 = StudentT::new(5.0f64).unwrap();
        let t_scale = (3.0f64 / 5.0).sqrt();
        let mut xs = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for _ in 0..n {
            let x = match self.x_law {
                XLaw::Uniform => uniform.sample(rng),
                XLaw::BetaScaled => 2.0 * beta.sample(rng) - 1.0,
            };
            let eps = match self.noise {
                NoiseLaw::Gaussian => gauss.sample(rng),
                NoiseLaw::ScaledT5 => t5.sample(rng) * t_scale,
            };
            xs.push(x);
            ys.push(self.mu(x) + (self.v_fn)(x).sqrt() * eps);
        }
        (xs, ys)
    }
}

/// The five estimation pipelines measured by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum PipelineSpec {
    /// Degree-p interval at the MSE rule-of-thumb bandwidth.
    ConventionalMse,
    /// Degree-p interval at the undersmoothed rate `n^{-1/(p+2)}`.
    ConventionalUndersmoothed,
    /// Bias-corrected interval at the MSE rule-of-thumb bandwidth.
    RbcMse,
    /// Bias-corrected interval at the coverage-error-optimal bandwidth.
    RbcCeOptimal,
    /// Bias-corrected interval at the length/coverage trade-off bandwidth.
    RbcTradeoff,
}

impl PipelineSpec {
    pub fn all() -> [PipelineSpec; 5] {
        [
            PipelineSpec::ConventionalMse,
            PipelineSpec::ConventionalUndersmoothed,
            PipelineSpec::RbcMse,
            PipelineSpec::RbcCeOptimal,
            PipelineSpec::RbcTradeoff,
        ]
    }

    pub fn label(self) -> &'static str {
        match self {
            PipelineSpec::ConventionalMse => "conventional-mse",
            PipelineSpec::ConventionalUndersmoothed => "conventional-undersmoothed",
            PipelineSpec::RbcMse => "rbc-mse",
            PipelineSpec::RbcCeOptimal => "rbc-ce-optimal",
            PipelineSpec::RbcTradeoff => "rbc-tradeoff",
        }
    }

    pub fn centering(self) -> Centering {
        match self {
            PipelineSpec::ConventionalMse | PipelineSpec::ConventionalUndersmoothed => {
                Centering::Conventional
            }
            _ => Centering::Rbc,
        }
    }
}

impl std::str::FromStr for PipelineSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        PipelineSpec::all()
            .into_iter()
            .find(|p| p.label() == s)
            .ok_or_else(|| format!("unknown pipeline '{s}'"))
    }
}

/// Problem shape shared by every pipeline in a run.
#[derive(Debug, Clone)]
pub struct McSettings {
    pub p: usize,
    pub deriv: usize,
    pub kernel: Kernel,
    pub eval: f64,
    pub rho: f64,
    pub flavor: HcFlavor,
    /// Check-loss asymmetry on the coverage error.
    pub tau: f64,
    pub tradeoff_weight: f64,
}

impl Default for McSettings {
    fn default() -> Self {
        McSettings {
            p: 1,
            deriv: 0,
            kernel: Kernel::Epanechnikov,
            eval: 0.45,
            rho: 1.0,
            flavor: HcFlavor::Hc0,
            tau: 0.5,
            tradeoff_weight: 0.5,
        }
    }
}

/// Per-pipeline aggregate over the successful replications.
#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: PipelineSpec,
    pub centering: Centering,
    pub coverage: f64,
    pub mean_length: f64,
    pub median_h: f64,
    pub median_rho: f64,
    /// Check loss of `coverage - (1 - alpha)` at the configured tau.
    pub check_loss: f64,
    /// `sqrt(coverage (1 - coverage) / used)`.
    pub mc_se: f64,
    pub used: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulationReport {
    pub dgp: String,
    pub n: usize,
    pub replications: usize,
    pub alpha: f64,
    pub tau: f64,
    pub seed: u64,
    pub eval: f64,
    pub truth: f64,
    pub rows: Vec<MethodSummary>,
    pub diagnostics: Vec<String>,
}

impl SimulationReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// One row per method; numeric columns carry 17 significant digits.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(
            "method\tcentering\tcoverage\tmean_length\tmedian_h\tmedian_rho\tcheck_loss\tmc_se\tused\tfailures\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{}\t{}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{:.16e}\t{}\t{}\n",
                r.method.label(),
                r.centering.label(),
                r.coverage,
                r.mean_length,
                r.median_h,
                r.median_rho,
                r.check_loss,
                r.mc_se,
                r.used,
                r.failures
            ));
        }
        out
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

struct PipelineOutcome {
    ci: ConfidenceInterval,
    h: f64,
    rho: f64,
}

fn run_pipeline(
    spec: PipelineSpec,
    xs: &[f64],
    ys: &[f64],
    alpha: f64,
    settings: &McSettings,
) -> Result<PipelineOutcome> {
    let base = LpConfig::new(settings.p, settings.deriv, 1.0, settings.kernel.clone(), settings.eval)?
        .with_rho(settings.rho)?;
    let n = xs.len() as f64;
    let p = settings.p as f64;
    let bw = match spec {
        PipelineSpec::ConventionalMse | PipelineSpec::RbcMse => h_mse_rot(xs, ys, &base)?,
        PipelineSpec::ConventionalUndersmoothed => {
            let mut bw = h_mse_rot(xs, ys, &base)?;
            // shrink from the n^{-1/(2p+3)} rate to n^{-1/(p+2)}
            let shrink = n.powf(-(1.0 / (p + 2.0) - 1.0 / (2.0 * p + 3.0)));
            bw.h *= shrink;
            bw.eta = 1.0 / (p + 2.0);
            bw.method = BandwidthMethod::Fixed;
            bw.diagnostics.push("undersmoothed from the rule-of-thumb bandwidth".to_string());
            bw
        }
        PipelineSpec::RbcCeOptimal => h_ce_optimal(xs, ys, &base, alpha)?,
        PipelineSpec::RbcTradeoff => {
            let pilot = rot_pilot_config(xs, &base)?;
            let design = build_design(xs, &pilot)?;
            let a = match design.boundary {
                Boundary::Left | Boundary::Right => settings.p + 2,
                _ => settings.p + 3,
            };
            let eta_to = 1.0 / (1.0 + a as f64);
            h_tradeoff(xs, ys, &base, alpha, settings.tradeoff_weight, eta_to)?
        }
    };
    let ci = build_ci(xs, ys, &base, alpha, spec.centering(), settings.flavor, &bw)?;
    Ok(PipelineOutcome { ci, h: bw.h, rho: settings.rho })
}

/// Runs `reps` independent replications of every requested pipeline.
///
/// Failures inside a replication are excluded and counted; more than 1% of
/// failures for any pipeline fails the whole run, since silent exclusion at
/// that rate would bias coverage.
pub fn run_mc(
    dgp: &Dgp,
    n: usize,
    reps: usize,
    alpha: f64,
    methods: &[PipelineSpec],
    seed: u64,
    settings: &McSettings,
) -> Result<SimulationReport> {
    if reps < 100 {
        return Err(Error::InvalidConfig(format!(
            "need at least 100 replications for stable coverage, got {reps}"
        )));
    }
    if n < 50 {
        return Err(Error::InsufficientData { needed: 50, got: n });
    }
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no pipelines requested".into()));
    }
    if !(0.0 < alpha && alpha < 1.0) {
        return Err(Error::InvalidConfig(format!("alpha = {alpha} must lie in (0, 1)")));
    }
    dgp.validate()?;

    let truth = dgp.mu_deriv(settings.eval, settings.deriv);
    let mut diagnostics = Vec::new();
    let max_v = (0..=20)
        .map(|i| (dgp.v_fn)(-1.0 + 0.1 * i as f64))
        .fold(0.0f64, f64::max);
    if !(max_v > 0.0) {
        diagnostics.push("degenerate zero-noise variance function".to_string());
    }

    struct Acc {
        covered: usize,
        used: usize,
        failures: usize,
        length: KahanSum,
        hs: Vec<f64>,
        rhos: Vec<f64>,
    }
    let mut accs: Vec<Acc> = methods
        .iter()
        .map(|_| Acc {
            covered: 0,
            used: 0,
            failures: 0,
            length: KahanSum::default(),
            hs: Vec::with_capacity(reps),
            rhos: Vec::with_capacity(reps),
        })
        .collect();

    for rep in 0..reps {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(rep as u64);
        let (xs, ys) = dgp.draw(n, &mut rng);
        for (mi, &m) in methods.iter().enumerate() {
            match run_pipeline(m, &xs, &ys, alpha, settings) {
                Ok(out) => {
                    let acc = &mut accs[mi];
                    acc.used += 1;
                    if out.ci.covers(truth) {
                        acc.covered += 1;
                    }
                    acc.length.add(out.ci.length());
                    acc.hs.push(out.h);
                    acc.rhos.push(out.rho);
                }
                Err(_) => accs[mi].failures += 1,
            }
        }
    }

    let mut rows = Vec::with_capacity(methods.len());
    for (mi, &m) in methods.iter().enumerate() {
        let acc = &mut accs[mi];
        if acc.failures * 100 > reps {
            return Err(Error::InvalidConfig(format!(
                "{} of {} replications failed for {}; exceeding the 1% budget",
                acc.failures,
                reps,
                m.label()
            )));
        }
        if acc.failures > 0 {
            diagnostics
                .push(format!("{}: {} replications excluded", m.label(), acc.failures));
        }
        let used = acc.used.max(1);
        let coverage = acc.covered as f64 / used as f64;
        rows.push(MethodSummary {
            method: m,
            centering: m.centering(),
            coverage,
            mean_length: acc.length.value() / used as f64,
            median_h: median(&mut acc.hs),
            median_rho: median(&mut acc.rhos),
            check_loss: check_loss(coverage - (1.0 - alpha), settings.tau)?,
            mc_se: (coverage * (1.0 - coverage) / used as f64).sqrt(),
            used: acc.used,
            failures: acc.failures,
        });
    }

    Ok(SimulationReport {
        dgp: dgp.name.to_string(),
        n,
        replications: reps,
        alpha,
        tau: settings.tau,
        seed,
        eval: settings.eval,
        truth,
        rows,
        diagnostics,
    })
}

use std::path::{Path, PathBuf};

use lpci_core::{
    build_ci, build_design, equivalent_kernel, h_ce_optimal, h_mse_rot, h_tradeoff, k_star,
    rho_opt, rho_opt_with, rot_pilot_config, run_mc, BandwidthChoice, Boundary, Centering, Dgp,
    HcFlavor, Kernel, LpConfig, McSettings, PipelineSpec,
};

use crate::error::CliError;
use crate::ingest;
use crate::output::{to_json, BwDocument, FitDocument};
use crate::settings::{
    parse_bool, parse_boundary, parse_bw, parse_flavor, parse_kernel, parse_method, parse_number,
    parse_rho, pick, pick_opt, BwRule, Overlay,
};
use crate::{EstimateArgs, KernelCurvesArgs, RhoTableArgs, SimulateArgs};

/// Fully resolved estimation request, after flag/file/default merging.
pub struct EstimateSpec {
    pub p: usize,
    pub deriv: usize,
    pub kernel: Kernel,
    pub bw: BwRule,
    /// `None` requests ratio selection from the kernel shape.
    pub rho: Option<f64>,
    pub alpha: f64,
    pub eval: f64,
    pub boundary: Boundary,
    pub method: Centering,
    pub flavor: HcFlavor,
    pub weight: f64,
    pub eta_to: Option<f64>,
}

pub fn resolve_estimate(args: &EstimateArgs, default_bw: &str) -> Result<EstimateSpec, CliError> {
    let mut file = Overlay::load(args.config.as_deref())?;
    let p = pick(args.p, &mut file, "p", 1, parse_number("p"))?;
    let deriv = pick(args.deriv, &mut file, "deriv", 0, parse_number("deriv"))?;
    let kernel = parse_kernel(&pick(
        args.kernel.clone(),
        &mut file,
        "kernel",
        "epanechnikov".into(),
        |s| Ok(s.to_string()),
    )?)?;
    let bw = parse_bw(&pick(args.bw.clone(), &mut file, "bw", default_bw.into(), |s| {
        Ok(s.to_string())
    })?)?;
    let rho = parse_rho(&pick(args.rho.clone(), &mut file, "rho", "1".into(), |s| {
        Ok(s.to_string())
    })?)?;
    let level = pick(args.level, &mut file, "level", 0.95, parse_number("level"))?;
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::input(format!("level {level} must lie strictly in (0, 1)")));
    }
    let eval = pick(args.eval, &mut file, "eval", 0.0, parse_number("eval"))?;
    let boundary = parse_boundary(&pick(
        args.boundary.clone(),
        &mut file,
        "boundary",
        "auto".into(),
        |s| Ok(s.to_string()),
    )?)?;
    let method = parse_method(&pick(args.method.clone(), &mut file, "method", "rbc".into(), |s| {
        Ok(s.to_string())
    })?)?;
    let flavor = parse_flavor(&pick(
        args.flavor.clone(),
        &mut file,
        "flavor",
        "hc3".into(),
        |s| Ok(s.to_string()),
    )?)?;
    let weight = pick(args.weight, &mut file, "weight", 0.5, parse_number("weight"))?;
    let eta_to = pick_opt(args.eta_to, &mut file, "eta-to", parse_number("eta-to"))?;
    file.finish()?;
    Ok(EstimateSpec {
        p,
        deriv,
        kernel,
        bw,
        rho,
        alpha: 1.0 - level,
        eval,
        boundary,
        method,
        flavor,
        weight,
        eta_to,
    })
}

/// Boundary status actually in force, resolved from the pilot design when the
/// request says auto.
fn resolve_boundary(
    xs: &[f64],
    base: &LpConfig,
) -> Result<Boundary, CliError> {
    let pilot_cfg = rot_pilot_config(xs, base)?;
    let design = build_design(xs, &pilot_cfg)?;
    Ok(design.boundary)
}

fn resolve_rho(
    spec: &EstimateSpec,
    resolved: Boundary,
    diagnostics: &mut Vec<String>,
) -> Result<f64, CliError> {
    match spec.rho {
        Some(r) => Ok(r),
        None => {
            let r = rho_opt(&spec.kernel, spec.p, spec.deriv, resolved.range())?;
            diagnostics.push(format!("rho {r:.5} from the variance-minimizing ratio rule"));
            Ok(r)
        }
    }
}

fn select_bandwidth(
    xs: &[f64],
    ys: &[f64],
    cfg: &LpConfig,
    spec: &EstimateSpec,
    resolved: Boundary,
) -> Result<BandwidthChoice, CliError> {
    let choice = match spec.bw {
        BwRule::Mse => h_mse_rot(xs, ys, cfg)?,
        BwRule::Ce => h_ce_optimal(xs, ys, cfg, spec.alpha)?,
        BwRule::TradeOff => {
            let a = match resolved {
                Boundary::Left | Boundary::Right => spec.p + 2,
                _ => spec.p + 3,
            };
            let eta = spec.eta_to.unwrap_or(1.0 / (1.0 + a as f64));
            h_tradeoff(xs, ys, cfg, spec.alpha, spec.weight, eta)?
        }
        BwRule::Fixed(h) => BandwidthChoice::fixed(h)?,
    };
    Ok(choice)
}

pub fn run_estimate(data: &Path, spec: &EstimateSpec) -> Result<String, CliError> {
    let (xs, ys) = ingest::read_xy(data)?;
    let mut diagnostics = Vec::new();
    let base = LpConfig::new(spec.p, spec.deriv, 1.0, spec.kernel.clone(), spec.eval)?
        .with_boundary(spec.boundary);
    diagnostics.extend(base.warnings.iter().cloned());

    let resolved = resolve_boundary(&xs, &base)?;
    let rho = resolve_rho(spec, resolved, &mut diagnostics)?;
    let cfg = base.with_rho(rho)?;
    let bw = select_bandwidth(&xs, &ys, &cfg, spec, resolved)?;
    diagnostics.extend(bw.diagnostics.iter().cloned());

    let ci = build_ci(&xs, &ys, &cfg, spec.alpha, spec.method, spec.flavor, &bw)?;
    let final_cfg = LpConfig::new(spec.p, spec.deriv, bw.h, spec.kernel.clone(), spec.eval)?
        .with_rho(rho)?
        .with_boundary(spec.boundary);
    let design = build_design(&xs, &final_cfg)?;

    let doc = FitDocument {
        estimate: ci.center,
        se: ci.se,
        ci: [ci.lower, ci.upper],
        h: bw.h,
        b: final_cfg.b,
        rho: final_cfg.rho,
        p: spec.p,
        deriv: spec.deriv,
        kernel: spec.kernel.name().to_string(),
        method: spec.method.label().to_string(),
        flavor: spec.flavor.label().to_string(),
        boundary: design.boundary.label().to_string(),
        n_effective: design.effective_n,
        diagnostics,
    };
    Ok(to_json(&doc))
}

pub fn run_bwselect(data: &Path, spec: &EstimateSpec) -> Result<String, CliError> {
    let (xs, ys) = ingest::read_xy(data)?;
    let mut diagnostics = Vec::new();
    let base = LpConfig::new(spec.p, spec.deriv, 1.0, spec.kernel.clone(), spec.eval)?
        .with_boundary(spec.boundary);
    diagnostics.extend(base.warnings.iter().cloned());

    let resolved = resolve_boundary(&xs, &base)?;
    let rho = resolve_rho(spec, resolved, &mut diagnostics)?;
    let cfg = base.with_rho(rho)?;
    let bw = select_bandwidth(&xs, &ys, &cfg, spec, resolved)?;
    diagnostics.extend(bw.diagnostics.iter().cloned());

    let doc = BwDocument {
        h: bw.h,
        h_const: bw.h_const,
        eta: bw.eta,
        method: bw.method.label().to_string(),
        weight: bw.weight,
        rho,
        p: spec.p,
        deriv: spec.deriv,
        kernel: spec.kernel.name().to_string(),
        eval: spec.eval,
        boundary: resolved.label().to_string(),
        n: xs.len(),
        diagnostics,
    };
    Ok(to_json(&doc))
}

pub fn run_rho_table(args: &RhoTableArgs) -> Result<String, CliError> {
    let mut file = Overlay::load(args.config.as_deref())?;
    let kernel_filter = pick_opt(args.kernel.clone(), &mut file, "kernel", |s| Ok(s.to_string()))?
        .map(|s| parse_kernel(&s))
        .transpose()?;
    let p_max = pick(args.p_max, &mut file, "p-max", 3, parse_number("p-max"))?;
    let double_nodes =
        pick(args.double_nodes.then_some(true), &mut file, "double-nodes", false, parse_bool)?;
    file.finish()?;

    let kernels = match kernel_filter {
        Some(k) => vec![k],
        None => vec![Kernel::Uniform, Kernel::Triangular, Kernel::Epanechnikov],
    };
    let mut out = String::from("kernel\tp\tv\tboundary\trho_star\tobjective\n");
    for kernel in &kernels {
        for p in 0..=p_max {
            for v in 0..=p {
                for boundary in [Boundary::Interior, Boundary::Left] {
                    let range = boundary.range();
                    let rho_star = rho_opt_with(kernel, p, v, range, double_nodes)?;
                    let mut eq = equivalent_kernel(kernel, rho_star, p, v, range)?;
                    let mut target = k_star(p + 1, v, range)?;
                    if double_nodes {
                        eq = eq.with_doubled_nodes();
                        target = target.with_doubled_nodes();
                    }
                    let objective = eq.l2_distance(&target)?;
                    out.push_str(&format!(
                        "{}\t{}\t{}\t{}\t{:.16e}\t{:.16e}\n",
                        kernel.name(),
                        p,
                        v,
                        boundary.label(),
                        rho_star,
                        objective
                    ));
                }
            }
        }
    }
    Ok(out)
}

pub fn run_kernel_curves(args: &KernelCurvesArgs) -> Result<String, CliError> {
    let mut file = Overlay::load(args.config.as_deref())?;
    let kernel = parse_kernel(&pick(
        args.kernel.clone(),
        &mut file,
        "kernel",
        "epanechnikov".into(),
        |s| Ok(s.to_string()),
    )?)?;
    let p = pick(args.p, &mut file, "p", 1, parse_number("p"))?;
    let deriv = pick(args.deriv, &mut file, "deriv", 0, parse_number("deriv"))?;
    let rho_spec = parse_rho(&pick(args.rho.clone(), &mut file, "rho", "1".into(), |s| {
        Ok(s.to_string())
    })?)?;
    let boundary = parse_boundary(&pick(
        args.boundary.clone(),
        &mut file,
        "boundary",
        "interior".into(),
        |s| Ok(s.to_string()),
    )?)?;
    file.finish()?;
    if boundary == Boundary::Auto {
        return Err(CliError::input(
            "kernel-curves has no data to resolve boundary auto; pass interior, left, or right",
        ));
    }

    let range = boundary.range();
    let rho = match rho_spec {
        Some(r) => r,
        None => rho_opt(&kernel, p, deriv, range)?,
    };
    let corrected = equivalent_kernel(&kernel, rho, p, deriv, range)?;
    let reference = k_star(p + 1, deriv, range)?;
    let (lo, hi) = corrected.support();

    let mut out = String::from("u\tk_star\tk_rbc");
    for j in 0..=p + 1 {
        out.push_str(&format!("\tm{j}"));
    }
    out.push('\n');
    for i in 0..=400 {
        let u = lo + (hi - lo) * i as f64 / 400.0;
        let kr = corrected.evaluate(u);
        out.push_str(&format!("{:.16e}\t{:.16e}\t{:.16e}", u, reference.evaluate(u), kr));
        for j in 0..=p + 1 {
            out.push_str(&format!("\t{:.16e}", u.powi(j as i32) * kr));
        }
        out.push('\n');
    }
    Ok(out)
}

pub struct SimulateOutput {
    pub stdout: String,
    pub tsv: Option<(PathBuf, String)>,
}

pub fn run_simulate(args: &SimulateArgs) -> Result<SimulateOutput, CliError> {
    let mut file = Overlay::load(args.config.as_deref())?;
    let dgp_name =
        pick(args.dgp.clone(), &mut file, "dgp", "sine-damped".into(), |s| Ok(s.to_string()))?;
    let n = pick(args.n, &mut file, "n", 500, parse_number("n"))?;
    let reps = pick(args.reps, &mut file, "reps", 500, parse_number("reps"))?;
    let seed = pick(args.seed, &mut file, "seed", 17, parse_number("seed"))?;
    let methods_spec = pick_opt(args.methods.clone(), &mut file, "methods", |s| Ok(s.to_string()))?;
    let tau = pick(args.tau, &mut file, "tau", 0.5, parse_number("tau"))?;
    let level = pick(args.level, &mut file, "level", 0.95, parse_number("level"))?;
    if !(level > 0.0 && level < 1.0) {
        return Err(CliError::input(format!("level {level} must lie strictly in (0, 1)")));
    }
    let eval = pick(args.eval, &mut file, "eval", 0.45, parse_number("eval"))?;
    let tsv_path = pick_opt(args.tsv.clone(), &mut file, "tsv", |s| Ok(PathBuf::from(s)))?;
    file.finish()?;

    let dgp = Dgp::by_name(&dgp_name).ok_or_else(|| {
        CliError::input(format!(
            "unknown dgp '{dgp_name}'; shipped: sine-damped, hetero-poly, null-linear"
        ))
    })?;
    let methods: Vec<PipelineSpec> = match methods_spec {
        None => PipelineSpec::all().to_vec(),
        Some(list) => list
            .split(',')
            .map(|tok| tok.trim().parse::<PipelineSpec>().map_err(CliError::Input))
            .collect::<Result<_, _>>()?,
    };
    let settings = McSettings { eval, tau, ..McSettings::default() };
    let report = run_mc(&dgp, n, reps, 1.0 - level, &methods, seed, &settings)?;

    let tsv = tsv_path.map(|path| {
        let body = report.to_tsv();
        (path, body)
    });
    Ok(SimulateOutput { stdout: to_json(&report), tsv })
}

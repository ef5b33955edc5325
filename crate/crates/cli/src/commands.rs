use crate::config::{self, GridKind, KernelConfig, ProblemConfig};
use crate::{
    AsymptoticArgs, Cli, CliError, Command, DurbinArgs, ExactArgs, KernelArgs, MethodArg,
    PerturbArgs, SpectrumArgs, ValidateArgs,
};
use serde::Serialize;
use serde_json::{json, Value};
use smallball_core::asymptotics::{dll_asymptotic, naznik_asymptotic, naznik_params, DllSpec};
use smallball_core::durbin::{
    durbin_model, empirical_cdf, simulate_omega2, summarize, write_statistics_csv, FamilySpec,
};
use smallball_core::kernels::KernelSpec;
use smallball_core::perturbation::{
    critical_prefactor, critical_product_check, critical_product_limit, green_base_form,
    spectral_product_check, theorem1_factor, theorem2_closed, theorem3_asymptotic, Criticality,
    PerturbationSpec, PerturbedSystem, PerturbingFn, CLASSIFY_TOL,
};
use smallball_core::quadform::{
    cdf_gil_pelaez, cdf_monte_carlo, cdf_saddlepoint, Method, ProbabilityEstimate, WeightSeq,
};
use smallball_core::spectral::{
    nystrom_spectrum, operator_spectrum, write_eigenfunctions_csv, write_spectrum_csv, Grid,
};
use smallball_core::validation::{run_suite, Suite};
use smallball_core::SmallBallError;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

const VERSION: &str = env!("CARGO_PKG_VERSION");
const QUANTILE_LEVELS: [f64; 7] = [0.1, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99];

#[derive(Serialize)]
struct Report {
    task: &'static str,
    version: &'static str,
    inputs: Value,
    results: Value,
    diagnostics: Value,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = config::load(cli.config.as_deref())?;
    let report_path = cfg
        .outputs
        .as_ref()
        .and_then(|o| o.report.clone())
        .or(cli.report);
    match cli.command {
        Command::Spectrum(a) => spectrum(&cfg, a, report_path),
        Command::Exact(a) => emit(&exact(&cfg, a)?, report_path.as_deref()),
        Command::Asymptotic(a) => emit(&asymptotic(&cfg, a)?, report_path.as_deref()),
        Command::Perturb(a) => emit(&perturb(&cfg, a)?, report_path.as_deref()),
        Command::Durbin(a) => emit(&durbin(&cfg, a)?, report_path.as_deref()),
        Command::Validate(a) => validate(a, report_path.as_deref()),
    }
}

fn emit(report: &Report, path: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(report).map_err(|e| CliError::Failed(e.to_string()))?;
    write_to(path, |w| writeln!(w, "{text}"))
}

fn write_to(
    path: Option<&Path>,
    body: impl FnOnce(&mut dyn Write) -> io::Result<()>,
) -> Result<(), CliError> {
    match path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p)?);
            body(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            body(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).unwrap_or(Value::Null)
}

fn err_json(e: &SmallBallError) -> Value {
    json!({ "error": e.to_string() })
}

fn require<T>(v: Option<T>, what: &str) -> Result<T, CliError> {
    v.ok_or_else(|| CliError::Usage(format!("missing {what}")))
}

struct Setup {
    kernel: KernelSpec,
    grid: Grid,
    echo: Value,
}

fn kernel_setup(
    cfg: &ProblemConfig,
    args: &KernelArgs,
    default_n: usize,
) -> Result<Option<Setup>, CliError> {
    let kc = match (&cfg.kernel, &args.kernel) {
        (Some(k), _) => k.clone(),
        (None, Some(name)) => KernelConfig::from_flags(name, args.alpha, args.green_order)?,
        (None, None) => return Ok(None),
    };
    let (kernel, sampled_grid) = kc.build()?;
    let kind = cfg.grid.or(args.grid).unwrap_or(GridKind::GaussLegendre);
    let grid = match sampled_grid {
        Some(g) => g,
        None => config::build_grid(kind, cfg.grid_size.or(args.n).unwrap_or(default_n))?,
    };
    let echo = json!({
        "kernel": kernel.name(),
        "green_order": kernel.green_order,
        "grid": if matches!(kc, KernelConfig::Sampled { .. }) { "sampled" } else {
            match kind { GridKind::GaussLegendre => "gauss_legendre", GridKind::Graded => "graded" }
        },
        "grid_size": grid.len(),
    });
    Ok(Some(Setup { kernel, grid, echo }))
}

fn spectrum(cfg: &ProblemConfig, a: SpectrumArgs, report: Option<PathBuf>) -> Result<(), CliError> {
    let setup = require(kernel_setup(cfg, &a.kernel, 2000)?, "--kernel")?;
    let k = cfg.k.or(a.k).unwrap_or(10);
    let spec = nystrom_spectrum(&setup.kernel, &setup.grid, k)?;
    let outputs = cfg.outputs.as_ref();
    let csv = outputs.and_then(|o| o.csv.clone()).or(a.csv);
    let eigf = outputs
        .and_then(|o| o.eigenfunctions.clone())
        .or(a.eigenfunctions);

    write_to(csv.as_deref(), |w| write_spectrum_csv(&spec, w))?;
    if let Some(path) = &eigf {
        write_to(Some(path), |w| write_eigenfunctions_csv(&spec, k, w))?;
    }
    // the JSON report goes to stdout only when stdout is not taken by the table
    if report.is_some() || csv.is_some() {
        let exact = setup.kernel.exact_trace();
        let r = Report {
            task: "spectrum",
            version: VERSION,
            inputs: json!({ "setup": setup.echo, "k": k }),
            results: json!({
                "eigenvalues": spec.eigenvalues,
                "trace": spec.trace,
                "tail_sum_bound": spec.tail_sum_bound(),
            }),
            diagnostics: json!({
                "exact_trace": exact,
                "trace_error": exact.map(|t| (t - spec.trace).abs()),
            }),
        };
        emit(&r, report.as_deref())?;
    }
    Ok(())
}

fn estimate(
    w: &WeightSeq,
    r: f64,
    method: Method,
    n_samples: usize,
    seed: u64,
) -> Result<ProbabilityEstimate, SmallBallError> {
    match method {
        Method::GilPelaez => cdf_gil_pelaez(w, r),
        Method::Saddlepoint => cdf_saddlepoint(w, r),
        Method::MonteCarlo => cdf_monte_carlo(w, r, n_samples, seed),
    }
}

fn exact(cfg: &ProblemConfig, a: ExactArgs) -> Result<Report, CliError> {
    let weights_path = cfg.weights.clone().or(a.weights);
    let (weights, source) = match weights_path {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|e| {
                CliError::Usage(format!("cannot read weights {}: {e}", path.display()))
            })?;
            let label = path
                .file_stem()
                .map_or("weights".into(), |s| s.to_string_lossy().into_owned());
            (WeightSeq::parse_csv(&text, label)?, json!(path))
        }
        None => {
            let setup = require(kernel_setup(cfg, &a.kernel, 1000)?, "--weights or --kernel")?;
            let k = cfg.k.or(a.k).unwrap_or(setup.grid.len());
            let spec = nystrom_spectrum(&setup.kernel, &setup.grid, k)?;
            (
                WeightSeq::from_spectrum(&spec, setup.kernel.name())?,
                setup.echo,
            )
        }
    };
    let r = match (cfg.r.or(a.r), cfg.eps.or(a.eps)) {
        (Some(r), _) => r,
        (None, Some(eps)) => eps * eps,
        (None, None) => return Err(CliError::Usage("missing --r or --eps".into())),
    };
    let method = cfg
        .method
        .unwrap_or(match a.method.unwrap_or(MethodArg::Gilpelaez) {
            MethodArg::Gilpelaez => Method::GilPelaez,
            MethodArg::Saddle => Method::Saddlepoint,
            MethodArg::Mc => Method::MonteCarlo,
        });
    let n_samples = cfg.n_samples.or(a.n_samples).unwrap_or(100_000);
    let seed = cfg.seed.or(a.seed).unwrap_or(0);

    let est = estimate(&weights, r, method, n_samples, seed)?;
    let truncation = if method != Method::MonteCarlo && weights.len() >= 4 {
        match estimate(
            &weights.truncate(weights.len() / 2),
            r,
            method,
            n_samples,
            seed,
        ) {
            Ok(half) => json!({
                "half_length": weights.len() / 2,
                "half_value": half.value,
                "relative_change": ((est.log_value - half.log_value).exp_m1()).abs(),
            }),
            Err(e) => err_json(&e),
        }
    } else {
        Value::Null
    };
    Ok(Report {
        task: "exact",
        version: VERSION,
        inputs: json!({
            "weights": source,
            "weight_count": weights.len(),
            "tail_sum_bound": weights.tail_sum_bound(),
            "r": r,
            "method": method,
            "n_samples": (method == Method::MonteCarlo).then_some(n_samples),
            "seed": (method == Method::MonteCarlo).then_some(seed),
        }),
        results: to_json(&est),
        diagnostics: json!({ "error_bound": est.error_bound, "truncation": truncation }),
    })
}

fn power_params(text: &str) -> Result<(f64, f64, f64), CliError> {
    let body = text.strip_prefix("power:").ok_or_else(|| {
        CliError::Usage(format!(
            "--phi must look like power:theta,delta,d, got '{text}'"
        ))
    })?;
    let parts: Vec<f64> = body
        .split(',')
        .map(config::parse_number)
        .collect::<Result<_, _>>()
        .map_err(CliError::Usage)?;
    match parts[..] {
        [t, dl, d] => Ok((t, dl, d)),
        _ => Err(CliError::Usage("--phi power: needs three values".into())),
    }
}

fn asymptotic(cfg: &ProblemConfig, a: AsymptoticArgs) -> Result<Report, CliError> {
    let law = cfg.law.clone().or(a.law).unwrap_or_else(|| "naznik".into());
    let (theta, delta, d) = match (&a.phi, law.as_str()) {
        (Some(p), "dll") if cfg.theta.is_none() => power_params(p)?,
        _ => (
            require(cfg.theta.or(a.theta), "--theta")?,
            require(cfg.delta.or(a.delta), "--delta")?,
            require(cfg.d.or(a.d), "--d")?,
        ),
    };
    let (eps, r) = match (cfg.eps.or(a.eps), cfg.r.or(a.r)) {
        (Some(e), _) => (e, e * e),
        (None, Some(r)) => (r.sqrt(), r),
        (None, None) => return Err(CliError::Usage("missing --eps or --r".into())),
    };
    let inputs = json!({ "law": law, "theta": theta, "delta": delta, "d": d, "eps": eps, "r": r });
    let (results, diagnostics) = match law.as_str() {
        "naznik" => {
            let params = naznik_params(theta, delta, d)?;
            let log_p = naznik_asymptotic(theta, delta, d, eps)?;
            let cross = DllSpec::power_law(theta, delta, d)
                .and_then(|s| dll_asymptotic(&s, r))
                .map(|e| json!({ "dll_log_p": e.log_p, "gap": log_p - e.log_p }))
                .unwrap_or_else(|e| err_json(&e));
            (
                json!({ "log_p": log_p, "constants": params }),
                json!({ "dll_cross_check": cross }),
            )
        }
        "dll" => {
            let spec = DllSpec::power_law(theta, delta, d)?;
            let est = dll_asymptotic(&spec, r)?;
            let cross = naznik_asymptotic(theta, delta, d, eps)
                .map(|nz| json!({ "naznik_log_p": nz, "gap": est.log_p - nz }))
                .unwrap_or_else(|e| err_json(&e));
            (
                json!({ "log_p": est.log_p, "estimate": est, "profile": spec }),
                json!({ "naznik_cross_check": cross }),
            )
        }
        other => {
            return Err(CliError::Usage(format!(
                "unknown law '{other}' (expected naznik or dll)"
            )))
        }
    };
    Ok(Report {
        task: "asymptotic",
        version: VERSION,
        inputs,
        results,
        diagnostics,
    })
}

const PARTIAL_NOTE: &str = "partially critical perturbation: no combined asymptotic factor is \
    produced; treat the non-critical part with --theorem1 and the critical part with --theorem3 \
    on the reduced problems";

fn perturb(cfg: &ProblemConfig, a: PerturbArgs) -> Result<Report, CliError> {
    let setup = require(kernel_setup(cfg, &a.kernel, 1000)?, "--kernel")?;
    let (phis, a_rows): (Vec<PerturbingFn>, Vec<Vec<f64>>) = match &cfg.perturbation {
        Some(p) => (p.phi.iter().map(PerturbingFn::from).collect(), p.a.clone()),
        None => {
            if a.phi.is_empty() {
                return Err(CliError::Usage("missing --phi".into()));
            }
            let phis = a
                .phi
                .iter()
                .map(|s| config::parse_list(s).map(PerturbingFn::Polynomial))
                .collect::<Result<_, _>>()?;
            (phis, config::parse_matrix(&require(a.a.clone(), "--a")?)?)
        }
    };
    let amat = config::matrix_from_rows(&a_rows)?;
    let spec = PerturbationSpec::new(phis, amat)?;
    let m = spec.m();
    let system = PerturbedSystem::new(&setup.kernel, &setup.grid, &spec)?;
    let tol = a.tol.unwrap_or(CLASSIFY_TOL);
    let class = system.classify(tol);
    let terms = cfg.terms.or(a.terms).unwrap_or(200);
    let eps = cfg.eps.or(a.eps);
    let classify_only = !(a.theorem1 || a.theorem3);

    let mut results = json!({
        "q": config::rows_of(&system.gram.q),
        "d": config::rows_of(&system.gram.d),
        "classification": class,
    });
    let mut diagnostics = json!({});
    if class.label == Criticality::Critical {
        diagnostics["annihilation_residual"] = json!(system.annihilation_residual()?);
    }
    if classify_only {
        return Ok(perturb_report(
            &setup,
            &a_rows,
            m,
            tol,
            terms,
            eps,
            results,
            diagnostics,
        ));
    }
    if let Criticality::PartiallyCritical(_) = class.label {
        results["note"] = json!(PARTIAL_NOTE);
        return Ok(perturb_report(
            &setup,
            &a_rows,
            m,
            tol,
            terms,
            eps,
            results,
            diagnostics,
        ));
    }

    let k = (terms + m).min(setup.grid.len());
    let sp0 = operator_spectrum(&system.base, k)?;
    let spa = operator_spectrum(&system.perturbed, k)?;
    if a.theorem1 {
        let factor = theorem1_factor(&system.a, &system.gram.q)?;
        let check = spectral_product_check(&sp0, &spa, terms)?;
        let expected = factor.powi(-2);
        results["theorem1"] = json!({ "factor": factor, "determinant_squared": expected });
        diagnostics["theorem1_eigenproduct"] = json!({
            "check": check,
            "expected": expected,
            "relative_gap": (check.value / expected - 1.0).abs(),
        });
    }
    if a.theorem3 {
        if class.label != Criticality::Critical {
            return Err(SmallBallError::Criticality(
                "--theorem3 needs a critical perturbation; use --theorem1".into(),
            )
            .into());
        }
        let eps = require(eps, "--eps")?;
        let l = require(setup.kernel.green_order, "--green-order for this kernel")?;
        let prefactor = critical_prefactor(&system.gram.q, &system.phi, &setup.grid)?;
        let factor = theorem3_asymptotic(l, m as u32, prefactor, eps)?;
        let base = green_base_form(l, 1.0, 0.0)?;
        let closed = theorem2_closed(&base, m as u32, prefactor);
        let r = eps * eps;
        let via_forms = (closed.log_eval(r) - base.log_eval(r)).exp();
        let check = critical_product_check(&sp0, &spa, m, terms)?;
        let limit = critical_product_limit(&system.phi, &system.gram.q, &sp0, &setup.grid)?;
        results["theorem3"] = json!({ "factor": factor, "prefactor": prefactor, "green_order": l });
        diagnostics["theorem3_form_identity"] = json!({
            "value": via_forms,
            "relative_gap": (via_forms / factor - 1.0).abs(),
        });
        diagnostics["critical_eigenproduct"] = json!({
            "check": check,
            "limit": limit,
            "relative_gap": (check.value / limit - 1.0).abs(),
        });
    }
    Ok(perturb_report(
        &setup,
        &a_rows,
        m,
        tol,
        terms,
        eps,
        results,
        diagnostics,
    ))
}

#[allow(clippy::too_many_arguments)]
fn perturb_report(
    setup: &Setup,
    a_rows: &[Vec<f64>],
    m: usize,
    tol: f64,
    terms: usize,
    eps: Option<f64>,
    results: Value,
    diagnostics: Value,
) -> Report {
    Report {
        task: "perturb",
        version: VERSION,
        inputs: json!({
            "setup": setup.echo,
            "m": m,
            "a": a_rows,
            "classify_tol": tol,
            "terms": terms,
            "eps": eps,
        }),
        results,
        diagnostics,
    }
}

fn durbin(cfg: &ProblemConfig, a: DurbinArgs) -> Result<Report, CliError> {
    let family: FamilySpec = match (&cfg.family, &a.family) {
        (Some(f), _) => f.build()?,
        (None, Some(tag)) => FamilySpec::from_tag(tag)?,
        (None, None) => return Err(CliError::Usage("missing --family".into())),
    };
    let grid_size = cfg.grid_size.or(a.grid_size).unwrap_or(500);
    let grid = config::build_grid(GridKind::Graded, grid_size)?;
    let model = durbin_model(&family, &grid)?;
    let fisher = a.fisher || !a.simulate;

    let mut inputs = json!({ "family": family, "grid_size": grid_size });
    let mut results = json!({});
    let mut diagnostics = json!({
        "q_minus_s": model.q_s_gap,
        "annihilation_residual": model.annihilation_residual,
    });
    if fisher {
        results["fisher"] = json!({
            "s": config::rows_of(&model.s),
            "q": config::rows_of(&model.q),
            "a": config::rows_of(&model.a),
            "classification": model.classification,
            "limit_mean": model.trace(),
        });
    }
    if a.simulate {
        let n = cfg.n.or(a.n).unwrap_or(500);
        let reps = cfg.reps.or(a.reps).unwrap_or(10_000);
        let seed = cfg.seed.or(a.seed).unwrap_or(0);
        inputs["n"] = json!(n);
        inputs["reps"] = json!(reps);
        inputs["seed"] = json!(seed);
        let values = simulate_omega2(&family, n, reps, seed)?;
        let csv = cfg.outputs.as_ref().and_then(|o| o.csv.clone()).or(a.csv);
        if let Some(path) = &csv {
            write_to(Some(path), |w| write_statistics_csv(&values, w))?;
        }
        let summary = summarize(&values, &QUANTILE_LEVELS)?;
        let weights = model.weights(grid.len())?;
        let comparison = summary
            .quantiles
            .iter()
            .map(|&(p, x)| {
                let limit = cdf_gil_pelaez(&weights, x);
                json!({
                    "level": p,
                    "quantile": x,
                    "empirical_cdf": empirical_cdf(&values, x),
                    "limit_cdf": limit.as_ref().map(|e| e.value).ok(),
                    "limit_error_bound": limit.as_ref().map(|e| e.error_bound).ok(),
                })
            })
            .collect::<Vec<_>>();
        results["simulation"] = json!({ "summary": summary, "csv": csv });
        diagnostics["limit_comparison"] = json!({
            "limit_mean": model.trace(),
            "mean_gap_in_std_errors": (summary.mean - model.trace()) / summary.std_error,
            "quantiles": comparison,
        });
    }
    Ok(Report {
        task: "durbin",
        version: VERSION,
        inputs,
        results,
        diagnostics,
    })
}

fn validate(a: ValidateArgs, report: Option<&Path>) -> Result<(), CliError> {
    let suite = Suite::from_name(&a.suite)?;
    let checks = run_suite(suite)?;
    let failed: Vec<&str> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| c.name.as_str())
        .collect();
    let r = Report {
        task: "validate",
        version: VERSION,
        inputs: json!({ "suite": suite }),
        results: json!({ "checks": checks, "passed": failed.is_empty() }),
        diagnostics: json!({ "failed": failed }),
    };
    emit(&r, report)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "validation failed: {}",
            failed.join(", ")
        )))
    }
}

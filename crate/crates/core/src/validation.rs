//! Self-check suites run by `smallball validate`.

use crate::asymptotics::{
    abel_convolve, abel_reduce, differentiate_form, dll_asymptotic, naznik_asymptotic,
    naznik_params, AsymptoticForm, DllSpec,
};
use crate::durbin::{durbin_model, FamilySpec};
use crate::error::{arg, Result};
use crate::kernels::KernelSpec;
use crate::perturbation::{
    critical_prefactor, critical_product_check, critical_product_limit, green_base_form,
    spectral_product_check, theorem1_factor, theorem2_closed, theorem3_asymptotic, Criticality,
    PerturbationSpec, PerturbedSystem, PerturbingFn, CLASSIFY_TOL,
};
use crate::quad::QuadOptions;
use crate::quadform::{cdf_saddlepoint, distortion_constant, WeightSeq};
use crate::spectral::{gauss_legendre_grid, graded_gauss_legendre_grid, operator_spectrum};
use nalgebra::DMatrix;
use serde::Serialize;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Core,
    Asymptotics,
    Durbin,
    All,
}

impl Suite {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "core" => Ok(Suite::Core),
            "asymptotics" => Ok(Suite::Asymptotics),
            "durbin" => Ok(Suite::Durbin),
            "all" => Ok(Suite::All),
            other => arg(format!(
                "unknown suite '{other}' (expected core, asymptotics, durbin or all)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub target: f64,
    /// Allowed deviation; relative unless the name says otherwise.
    pub tol: f64,
    pub passed: bool,
}

impl Check {
    fn relative(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target,
            tol,
            passed: ((value - target) / target).abs() <= tol,
        }
    }

    fn absolute(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target,
            tol,
            passed: (value - target).abs() <= tol,
        }
    }

    fn below(name: &str, value: f64, limit: f64) -> Self {
        Self {
            name: name.into(),
            value,
            target: 0.0,
            tol: limit,
            passed: value < limit,
        }
    }
}

pub fn run_suite(suite: Suite) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Core | Suite::All) {
        core_checks(&mut out)?;
    }
    if matches!(suite, Suite::Asymptotics | Suite::All) {
        asymptotic_checks(&mut out)?;
    }
    if matches!(suite, Suite::Durbin | Suite::All) {
        durbin_checks(&mut out)?;
    }
    Ok(out)
}

fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

fn core_checks(out: &mut Vec<Check>) -> Result<()> {
    let grid = gauss_legendre_grid(1000)?;
    let bridge = KernelSpec::bridge();
    let system = |a: f64| {
        PerturbationSpec::new(vec![PerturbingFn::constant(1.0)], scalar(a))
            .and_then(|s| PerturbedSystem::new(&bridge, &grid, &s))
    };
    let s6 = system(6.0)?;
    let s12 = system(12.0)?;
    let s18 = system(18.0)?;
    let sp0 = operator_spectrum(&s6.base, 1000)?;
    let sp6 = operator_spectrum(&s6.perturbed, 1000)?;
    let sp12 = operator_spectrum(&s12.perturbed, 1000)?;
    let sp18 = operator_spectrum(&s18.perturbed, 40)?;

    let worst = (1..=20)
        .map(|k| {
            let exact = 1.0 / (PI * k as f64).powi(2);
            ((sp0.eigenvalues[k - 1] - exact) / exact).abs()
        })
        .fold(0.0, f64::max);
    out.push(Check::below(
        "bridge_spectrum_max_rel_error_k20",
        worst,
        1e-4,
    ));

    out.push(Check::relative(
        "theorem1_factor",
        theorem1_factor(&s6.a, &s6.gram.q)?,
        2.0,
        1e-10,
    ));
    out.push(Check::relative(
        "spectral_product_N200",
        spectral_product_check(&sp0, &sp6, 200)?.value,
        0.25,
        0.01,
    ));
    let w0 = WeightSeq::from_spectrum(&sp0, "bridge")?.truncate(200);
    let w6 = WeightSeq::from_spectrum(&sp6, "perturbed")?.truncate(200);
    out.push(Check::relative(
        "distortion_constant_N200",
        distortion_constant(&w0, &w6, 0.05)?.value,
        2.0,
        0.01,
    ));
    // A and 2Q⁻¹ − A share D, hence the spectrum
    let dual_gap = (0..20)
        .map(|k| ((sp18.eigenvalues[k] - sp6.eigenvalues[k]) / sp6.eigenvalues[k]).abs())
        .fold(0.0, f64::max);
    out.push(Check::below("duality_max_rel_gap", dual_gap, 1e-8));

    let critical = s12.classify(CLASSIFY_TOL).label == Criticality::Critical;
    out.push(Check::absolute(
        "critical_classification",
        f64::from(u8::from(critical)),
        1.0,
        0.0,
    ));
    out.push(Check::below(
        "annihilation_residual",
        s12.annihilation_residual()?,
        1e-9,
    ));
    out.push(Check::relative(
        "critical_eigenproduct_N200",
        critical_product_check(&sp0, &sp12, 1, 200)?.value,
        critical_product_limit(&s12.phi, &s12.gram.q, &sp0, &grid)?,
        0.01,
    ));

    let prefactor = critical_prefactor(&s12.gram.q, &s12.phi, &grid)?;
    let mut worst = 0.0f64;
    for l in [1u32, 2] {
        for m in [1u32, 2] {
            let base = green_base_form(l, 1.0, 0.0)?;
            let closed = theorem2_closed(&base, m, prefactor);
            let eps = 0.1;
            let r = eps * eps;
            let ratio = (closed.log_eval(r) - base.log_eval(r)).exp();
            let green = theorem3_asymptotic(l, m, prefactor, eps)?;
            worst = worst.max((ratio / green - 1.0).abs());
        }
    }
    out.push(Check::below("theorem2_vs_theorem3_rel_gap", worst, 1e-10));
    Ok(())
}

fn asymptotic_checks(out: &mut Vec<Check>) -> Result<()> {
    let w = naznik_params(PI, -0.5, 2.0)?;
    out.push(Check::relative(
        "naznik_wiener_C",
        w.c,
        4.0 / PI.sqrt(),
        1e-12,
    ));
    let b = naznik_params(PI, 0.0, 2.0)?;
    out.push(Check::relative(
        "naznik_bridge_C",
        b.c,
        2.0 * 2f64.sqrt() / PI.sqrt(),
        1e-12,
    ));

    let spec = DllSpec::power_law(PI, 0.0, 2.0)?;
    let r = 1e-4;
    let dll = dll_asymptotic(&spec, r)?;
    let nz = naznik_asymptotic(PI, 0.0, 2.0, r.sqrt())?;
    out.push(Check::relative(
        "dll_vs_naznik_ratio",
        (dll.log_p - nz).exp(),
        1.0,
        0.05,
    ));

    let wiener = WeightSeq::from_fn(20_000, |k| ((k as f64 - 0.5) * PI).powi(-2), 0.0, "wiener")?;
    let eps = 0.05;
    out.push(Check::absolute(
        "saddlepoint_wiener_log_p",
        cdf_saddlepoint(&wiener, eps * eps)?.log_value,
        naznik_asymptotic(PI, -0.5, 2.0, eps)?,
        1.0,
    ));

    let form = AsymptoticForm::new(1.0, 0.0, 1.0, 1.0)?;
    let r = 0.02;
    let numeric = abel_convolve(
        |x: f64| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 },
        r,
        QuadOptions::default(),
    )?;
    out.push(Check::relative(
        "abel_reduce_r002",
        numeric,
        abel_reduce(&form).eval(r),
        0.1,
    ));

    let x = 0.2;
    let h = 1e-3;
    let f = |x: f64| (-1.0 / x).exp();
    let fd = (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h);
    out.push(Check::relative(
        "tauberian_first_derivative",
        fd,
        differentiate_form(&form, 1).eval(x),
        2e-3,
    ));
    Ok(())
}

fn durbin_checks(out: &mut Vec<Check>) -> Result<()> {
    let grid = graded_gauss_legendre_grid(500)?;
    for tag in [
        "normal_location",
        "normal_location_scale",
        "exponential_rate",
    ] {
        let fam = FamilySpec::from_tag(tag)?;
        let model = durbin_model(&fam, &grid)?;
        out.push(Check::below(
            &format!("{tag}_q_minus_s"),
            model.q_s_gap,
            1e-6,
        ));
        let expect = match fam {
            FamilySpec::NormalLocationScale { .. } => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 2.0]))
            }
            _ => scalar(1.0),
        };
        out.push(Check::below(
            &format!("{tag}_fisher_gap"),
            (&model.s - expect).amax(),
            1e-6,
        ));
    }
    let model = durbin_model(&FamilySpec::from_tag("normal_location")?, &grid)?;
    out.push(Check::relative(
        "normal_location_trace",
        model.trace(),
        1.0 / 6.0 - 1.0 / (2.0 * 3f64.sqrt() * PI),
        1e-8,
    ));
    Ok(())
}

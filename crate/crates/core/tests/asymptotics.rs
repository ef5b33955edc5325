use approx::assert_relative_eq;
use smallball_core::asymptotics::{
    abel_convolve, abel_reduce, differentiate_form, dll_asymptotic, dll_i1, dll_root,
    naznik_asymptotic, naznik_params, AsymptoticForm, DllSpec,
};
use smallball_core::quad::QuadOptions;
use std::f64::consts::PI;

#[test]
fn naznik_classical_cases() {
    let w = naznik_params(PI, -0.5, 2.0).unwrap();
    assert_relative_eq!(w.gamma, 1.0, max_relative = 1e-12);
    assert_relative_eq!(w.c, 4.0 / PI.sqrt(), max_relative = 1e-12);
    assert_relative_eq!(w.coef, 0.125, max_relative = 1e-12);
    let b = naznik_params(PI, 0.0, 2.0).unwrap();
    assert!(b.gamma.abs() < 1e-12);
    assert_relative_eq!(b.c, (8.0 / PI).sqrt(), max_relative = 1e-12);
    assert_relative_eq!(b.coef, 0.125, max_relative = 1e-12);
    // the r-form evaluates to the same log-probability
    let eps = 0.07;
    assert_relative_eq!(
        w.form_in_r().log_eval(eps * eps),
        naznik_asymptotic(PI, -0.5, 2.0, eps).unwrap(),
        max_relative = 1e-12
    );
}

#[test]
fn dll_root_solves_its_equation() {
    let spec = DllSpec::power_law(PI, 0.0, 2.0).unwrap();
    for r in [1e-2, 1e-3] {
        let u = dll_root(&spec, r).unwrap();
        assert!((dll_i1(&spec, u).unwrap() + u * r).abs() < 1e-8 * u * r);
    }
    assert!(dll_root(&spec, 10.0).is_err());
}

#[test]
fn dll_approaches_naznik_for_several_power_laws() {
    for (theta, delta, d) in [
        (PI, -0.5, 2.0),
        (PI, 0.0, 2.0),
        (1.0, 0.5, 3.0),
        (2.0, 0.0, 4.0),
    ] {
        let spec = DllSpec::power_law(theta, delta, d).unwrap();
        let gap = |eps: f64| {
            let dll = dll_asymptotic(&spec, eps * eps).unwrap().log_p;
            (dll - naznik_asymptotic(theta, delta, d, eps).unwrap()).abs()
        };
        let coarse = gap(1e-1);
        let fine = gap(1e-2);
        assert!(
            fine < coarse,
            "({theta}, {delta}, {d}): {coarse} then {fine}"
        );
    }
}

#[test]
fn abel_convolution_of_simple_functions() {
    let opts = QuadOptions::default();
    // ∫₀^r (r − x)^{−1/2} dx = 2√r and ∫₀^r x (r − x)^{−1/2} dx = 4r^{3/2}/3
    for r in [0.1, 1.0, 3.0] {
        assert_relative_eq!(
            abel_convolve(|_| 1.0, r, opts).unwrap(),
            2.0 * r.sqrt(),
            max_relative = 1e-12
        );
        assert_relative_eq!(
            abel_convolve(|x| x, r, opts).unwrap(),
            4.0 * r.powf(1.5) / 3.0,
            max_relative = 1e-12
        );
    }
}

#[test]
fn abel_reduce_improves_as_r_shrinks() {
    let form = AsymptoticForm::new(1.0, 0.0, 1.0, 1.0).unwrap();
    let reduced = abel_reduce(&form);
    let mut last = f64::INFINITY;
    for r in [0.05, 0.02, 0.01] {
        let numeric = abel_convolve(
            |x| if x > 0.0 { (-1.0 / x).exp() } else { 0.0 },
            r,
            QuadOptions::default(),
        )
        .unwrap();
        let rel = (numeric / reduced.eval(r) - 1.0).abs();
        assert!(rel < last);
        last = rel;
    }
    assert!(last < 0.01);
}

#[test]
fn differentiation_matches_finite_differences() {
    let form = AsymptoticForm::new(1.0, 0.0, 1.0, 1.0).unwrap();
    let f = |x: f64| (-1.0 / x).exp();
    let x = 0.2;
    let h = 1e-3;
    let fd = (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h);
    assert_relative_eq!(
        differentiate_form(&form, 1).eval(x),
        fd,
        max_relative = 2e-3
    );
}

#[test]
fn domain_errors() {
    assert!(naznik_params(PI, -1.5, 2.0).unwrap_err().is_argument());
    assert!(naznik_asymptotic(PI, 0.0, 2.0, 0.0).is_err());
    assert!(DllSpec::power_law(PI, 0.0, 0.5).is_err());
    assert!(AsymptoticForm::new(1.0, 0.0, 0.0, 1.0).is_err());
}

use approx::assert_relative_eq;
use nalgebra::{Complex, DMatrix};
use smallball_core::asymptotics::{abel_reduce, differentiate_form};
use smallball_core::kernels::KernelSpec;
use smallball_core::perturbation::{
    bateman_ratio, classify, d_matrix, fredholm_product_ratio, green_base_form,
    spectral_product_check, theorem1_factor, theorem2_closed, theorem2_convolution_numeric,
    Criticality, PerturbationSpec, PerturbedSystem, PerturbingFn, CLASSIFY_TOL,
};
use smallball_core::spectral::{
    fourier_coefficients, gauss_legendre_grid, operator_spectrum, Grid,
};
use smallball_core::SmallBallError;
use std::f64::consts::PI;

fn linear_family(a: DMatrix<f64>, grid: &Grid) -> PerturbedSystem {
    let spec = PerturbationSpec::new(
        vec![
            PerturbingFn::constant(1.0),
            PerturbingFn::Polynomial(vec![0.0, 1.0]),
        ],
        a,
    )
    .unwrap();
    PerturbedSystem::new(&KernelSpec::bridge(), grid, &spec).unwrap()
}

#[test]
fn two_dimensional_transfer_factor_and_interlacing() {
    let grid = gauss_legendre_grid(800).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
    let sys = linear_family(a, &grid);
    // ∫ψφ for φ = (1, t) under the bridge
    let q_exact = DMatrix::from_row_slice(2, 2, &[1.0 / 12.0, 1.0 / 24.0, 1.0 / 24.0, 1.0 / 45.0]);
    assert!((&sys.gram.q - &q_exact).amax() < 1e-12);
    assert_eq!(sys.classify(CLASSIFY_TOL).label, Criticality::NonCritical);

    let factor = theorem1_factor(&sys.a, &sys.gram.q).unwrap();
    let det = (DMatrix::identity(2, 2) - &q_exact * &sys.a).determinant();
    assert_relative_eq!(factor, 1.0 / det.abs(), max_relative = 1e-10);

    let sp0 = operator_spectrum(&sys.base, 400).unwrap();
    let spa = operator_spectrum(&sys.perturbed, 400).unwrap();
    let check = spectral_product_check(&sp0, &spa, 300).unwrap();
    assert_relative_eq!(check.value, det * det, max_relative = 0.01);
    assert!(check.diagnostic < 0.01);

    let m = 2;
    let tol = 1e-12;
    for k in 0..300 {
        assert!(spa.eigenvalues[k] <= sp0.eigenvalues[k.saturating_sub(m)] * (1.0 + tol) || k < m);
        assert!(spa.eigenvalues[k] >= sp0.eigenvalues[k + m] * (1.0 - tol));
    }
}

#[test]
fn dual_matrices_give_the_same_spectrum() {
    let grid = gauss_legendre_grid(600).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 2.0]);
    let sys = linear_family(a.clone(), &grid);
    let dual = sys.gram.q.clone().try_inverse().unwrap() * 2.0 - &a;
    let sys_dual = linear_family(dual.clone(), &grid);
    assert!(
        (d_matrix(&a, &sys.gram.q).unwrap() - d_matrix(&dual, &sys.gram.q).unwrap()).amax() < 1e-8
    );
    let s1 = operator_spectrum(&sys.perturbed, 30).unwrap();
    let s2 = operator_spectrum(&sys_dual.perturbed, 30).unwrap();
    for k in 0..30 {
        assert_relative_eq!(s1.eigenvalues[k], s2.eigenvalues[k], max_relative = 1e-8);
    }
}

#[test]
fn bateman_matches_truncated_fredholm_product() {
    let grid = gauss_legendre_grid(1000).unwrap();
    let spec = PerturbationSpec::new(
        vec![PerturbingFn::constant(1.0)],
        DMatrix::from_element(1, 1, 6.0),
    )
    .unwrap();
    let sys = PerturbedSystem::new(&KernelSpec::bridge(), &grid, &spec).unwrap();
    let sp0 = operator_spectrum(&sys.base, 1000).unwrap();
    let spa = operator_spectrum(&sys.perturbed, 1000).unwrap();
    let coeffs = fourier_coefficients(&sp0, &sys.gram.psi).unwrap();
    for z in [-10.0, -100.0, -1000.0] {
        let bateman = bateman_ratio(Complex::new(z, 0.0), &sp0, &coeffs, &sys.gram.d).unwrap();
        assert!(bateman.im.abs() < 1e-12);
        let product = fredholm_product_ratio(&sp0, &spa, z, 200).unwrap();
        assert_relative_eq!(bateman.re, product, max_relative = 1e-3);
    }
    let one = bateman_ratio(Complex::new(0.0, 0.0), &sp0, &coeffs, &sys.gram.d).unwrap();
    assert_relative_eq!(one.re, 1.0, max_relative = 1e-14);
    let pole = Complex::new(1.0 / sp0.eigenvalues[0], 0.0);
    assert!(matches!(
        bateman_ratio(pole, &sp0, &coeffs, &sys.gram.d),
        Err(SmallBallError::Pole(_))
    ));
}

#[test]
fn classification_of_simple_matrices() {
    let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
    let c = classify(
        &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.25]),
        &q,
        1e-8,
    )
    .unwrap();
    assert_eq!(c.label, Criticality::Critical);
    let p = classify(
        &DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]),
        &q,
        1e-8,
    )
    .unwrap();
    assert_eq!(p.label, Criticality::PartiallyCritical(1));
    assert_eq!(p.defect(), 1);
    let n = classify(&DMatrix::zeros(2, 2), &q, 1e-8).unwrap();
    assert_eq!(n.label, Criticality::NonCritical);
    assert!(matches!(
        theorem1_factor(&DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.0]), &q),
        Err(SmallBallError::Criticality(_))
    ));
}

#[test]
fn nested_abel_matches_closed_pipeline_asymptotically() {
    let base = green_base_form(1, (8.0 / PI).sqrt(), 0.0).unwrap();
    for m in [1u32, 2] {
        let deriv = differentiate_form(&base, m);
        let mut reduced = deriv;
        for _ in 0..m {
            reduced = abel_reduce(&reduced);
        }
        let closed = theorem2_closed(&base, m, 1.0);
        let scale = (2.0 / PI).powf(0.5 * f64::from(m));
        assert_relative_eq!(
            closed.eval(0.01),
            scale * reduced.eval(0.01),
            max_relative = 1e-12
        );

        let f = move |x: f64| if x > 0.0 { deriv.eval(x) } else { 0.0 };
        let mut last = f64::INFINITY;
        for r in [0.03, 0.015, 0.008] {
            let numeric = theorem2_convolution_numeric(&f, m, r).unwrap();
            let rel = (numeric / reduced.eval(r) - 1.0).abs();
            assert!(rel < last, "m = {m}, r = {r}: {rel}");
            last = rel;
        }
        // the gap closes like O(r)
        assert!(last < if m == 1 { 0.02 } else { 0.15 });
    }
}

#[test]
fn rejects_inconsistent_inputs() {
    let grid = gauss_legendre_grid(50).unwrap();
    let dup = PerturbationSpec::new(
        vec![PerturbingFn::constant(1.0), PerturbingFn::constant(2.0)],
        DMatrix::identity(2, 2),
    )
    .unwrap();
    assert!(PerturbedSystem::new(&KernelSpec::bridge(), &grid, &dup).is_err());
    assert!(
        PerturbationSpec::new(vec![PerturbingFn::constant(1.0)], DMatrix::identity(2, 2)).is_err()
    );
    let off = PerturbingFn::Sampled {
        nodes: vec![0.5],
        values: vec![1.0],
    };
    assert!(off.sample(&grid).is_err());
}

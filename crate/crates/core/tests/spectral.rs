use approx::assert_relative_eq;
use nalgebra::DMatrix;
use smallball_core::kernels::{kernel_matrix, weighted_trace, KernelSpec};
use smallball_core::spectral::{
    fourier_coefficients, gauss_legendre_grid, nystrom_spectrum, write_spectrum_csv, Grid,
};
use std::f64::consts::PI;

/// Roots of `(ω² − α²) sin ω − 2αω cos ω` on `(0, upper)`, found by scanning
/// and bisection. The OU eigenvalues are `2α/(α² + ω²)`.
fn ou_frequencies(alpha: f64, count: usize) -> Vec<f64> {
    let f = |w: f64| (w * w - alpha * alpha) * w.sin() - 2.0 * alpha * w * w.cos();
    let mut roots = Vec::new();
    let step = 1e-3;
    let mut a = step;
    while roots.len() < count {
        let b = a + step;
        if f(a) * f(b) < 0.0 {
            let (mut lo, mut hi) = (a, b);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if f(lo) * f(mid) <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        a = b;
    }
    roots
}

#[test]
fn ornstein_uhlenbeck_spectrum_matches_transcendental_roots() {
    let alpha = 1.5;
    let grid = gauss_legendre_grid(1000).unwrap();
    let spec =
        nystrom_spectrum(&KernelSpec::ornstein_uhlenbeck(alpha).unwrap(), &grid, 15).unwrap();
    for (k, w) in ou_frequencies(alpha, 15).iter().enumerate() {
        let exact = 2.0 * alpha / (alpha * alpha + w * w);
        assert_relative_eq!(spec.eigenvalues[k], exact, max_relative = 1e-6);
    }
}

#[test]
fn refinement_changes_leading_eigenvalues_little() {
    let coarse = gauss_legendre_grid(1000).unwrap();
    let fine = gauss_legendre_grid(2000).unwrap();
    for kernel in [
        KernelSpec::wiener(),
        KernelSpec::bridge(),
        KernelSpec::ornstein_uhlenbeck(2.0).unwrap(),
    ] {
        let a = nystrom_spectrum(&kernel, &coarse, 20).unwrap();
        let b = nystrom_spectrum(&kernel, &fine, 20).unwrap();
        for k in 0..20 {
            assert_relative_eq!(a.eigenvalues[k], b.eigenvalues[k], max_relative = 1e-6);
        }
    }
}

#[test]
fn weighted_trace_matches_diagonal_integral() {
    let grid = gauss_legendre_grid(500).unwrap();
    for (kernel, exact) in [
        (KernelSpec::bridge(), 1.0 / 6.0),
        (KernelSpec::wiener(), 0.5),
    ] {
        let m = kernel_matrix(&kernel, &grid).unwrap();
        assert_relative_eq!(weighted_trace(&m, &grid), exact, max_relative = 1e-6);
        assert_eq!(kernel.exact_trace(), Some(exact));
    }
}

#[test]
fn eigenfunctions_are_orthonormal_and_sign_fixed() {
    let grid = gauss_legendre_grid(400).unwrap();
    let spec = nystrom_spectrum(&KernelSpec::bridge(), &grid, 8).unwrap();
    let w = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(grid.weights().to_vec()));
    let g = spec.eigvecs.transpose() * w * &spec.eigvecs;
    assert!((g - DMatrix::identity(8, 8)).amax() < 1e-10);
    for k in 0..8 {
        let first = spec
            .eigvecs
            .column(k)
            .iter()
            .copied()
            .find(|v| v.abs() > 1e-8)
            .unwrap();
        assert!(first > 0.0);
        // u_k = √2 sin(kπt)
        let t = grid.nodes()[200];
        let exact = 2f64.sqrt() * ((k + 1) as f64 * PI * t).sin();
        assert!((spec.eigvecs[(200, k)] - exact).abs() < 1e-6, "k = {k}");
    }
}

#[test]
fn fourier_coefficients_of_constant_under_bridge() {
    let grid = gauss_legendre_grid(1000).unwrap();
    let spec = nystrom_spectrum(&KernelSpec::bridge(), &grid, 40).unwrap();
    let ones = DMatrix::from_element(grid.len(), 1, 1.0);
    let c = fourier_coefficients(&spec, &ones).unwrap();
    for n in 0..40 {
        let k = (n + 1) as f64;
        let exact = 2f64.sqrt() * (1.0 - (k * PI).cos()) / (k * PI);
        assert!((c.a[(n, 0)] - exact).abs() < 1e-7, "n = {n}");
    }
    // Parseval: partial sums stay below ‖1‖² = 1 and approach it
    let partial = |n: usize| (0..n).map(|i| c.a[(i, 0)].powi(2)).sum::<f64>();
    assert!(partial(10) < partial(40) && partial(40) <= 1.0 + 1e-12);
    assert!(1.0 - partial(40) < 0.02);
    // ψ = Gφ = t(1 − t)/2; its spectral Gram sum tends to ∫ψφ = 1/12
    let psi = DMatrix::from_fn(grid.len(), 1, |i, _| {
        let t = grid.nodes()[i];
        0.5 * t * (1.0 - t)
    });
    let cp = fourier_coefficients(&spec, &psi).unwrap();
    assert_relative_eq!(
        cp.gram_sum(&spec, 40)[(0, 0)],
        1.0 / 12.0,
        max_relative = 1e-5
    );
}

#[test]
fn sampled_kernel_reproduces_catalog_kernel() {
    let n = 600;
    let nodes: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
    let m = DMatrix::from_fn(n, n, |i, j| nodes[i].min(nodes[j]) - nodes[i] * nodes[j]);
    let spec = KernelSpec::sampled(nodes.clone(), m).unwrap();
    let grid = Grid::from_nodes(nodes).unwrap();
    let s = nystrom_spectrum(&spec, &grid, 5).unwrap();
    for k in 0..5 {
        let exact = 1.0 / (PI * (k + 1) as f64).powi(2);
        assert_relative_eq!(s.eigenvalues[k], exact, max_relative = 1e-3);
    }
}

#[test]
fn sampled_kernel_rejects_misaligned_grid() {
    let nodes = vec![0.25, 0.5, 0.75];
    let spec = KernelSpec::sampled(nodes, DMatrix::identity(3, 3)).unwrap();
    let grid = gauss_legendre_grid(4).unwrap();
    assert!(nystrom_spectrum(&spec, &grid, 2).is_err());
    assert!(KernelSpec::sampled(vec![0.5, 0.25], DMatrix::identity(2, 2)).is_err());
    assert!(KernelSpec::sampled(vec![0.5], DMatrix::identity(2, 2)).is_err());
}

#[test]
fn spectrum_csv_layout() {
    let grid = gauss_legendre_grid(200).unwrap();
    let spec = nystrom_spectrum(&KernelSpec::wiener(), &grid, 3).unwrap();
    let mut buf = Vec::new();
    write_spectrum_csv(&spec, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "k,mu_k");
    assert_eq!(lines.len(), 4);
    let mu1: f64 = lines[1].split(',').nth(1).unwrap().parse().unwrap();
    assert_relative_eq!(mu1, 4.0 / PI / PI, max_relative = 1e-6);
}

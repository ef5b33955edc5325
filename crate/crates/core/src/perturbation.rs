//! Finite-dimensional perturbations `X_A = X₀ − ψᵀ A ∫ X₀ φ`.
//!
//! With `ψ = G₀φ` and `Q = ∫ψφᵀ`, the perturbed covariance is
//! `G_A = G₀ + ψᵀ D ψ` where `D = −A − Aᵀ + A Q Aᵀ`. The perturbation is
//! classified by the rank defect of `E − AᵀQ`; the small-ball probability of
//! `X_A` relates to that of `X₀` by `1/|det(E − QA)|` in the non-critical case
//! and by a power-law factor in the critical case `A = Q⁻¹`.

use crate::asymptotics::{abel_convolve, abel_reduce, differentiate_form, AsymptoticForm};
use crate::error::{arg, Result, SmallBallError};
use crate::kernels::KernelSpec;
use crate::quad::QuadOptions;
use crate::spectral::{DiscreteOperator, FourierCoeffs, Grid, Spectrum};
use nalgebra::{Complex, DMatrix};
use serde::Serialize;
use std::cell::RefCell;
use std::f64::consts::PI;

/// Default relative tolerance on singular values of `E − AᵀQ`.
pub const CLASSIFY_TOL: f64 = 1e-8;
/// Relative rank threshold for the sampled `φ` family.
const RANK_TOL: f64 = 1e-10;
const NODE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum PerturbingFn {
    /// `Σ_k c_k t^k`.
    Polynomial(Vec<f64>),
    /// Values at grid nodes.
    Sampled { nodes: Vec<f64>, values: Vec<f64> },
}

impl PerturbingFn {
    pub fn constant(c: f64) -> Self {
        PerturbingFn::Polynomial(vec![c])
    }

    /// Values on the grid nodes.
    pub fn sample(&self, grid: &Grid) -> Result<Vec<f64>> {
        match self {
            PerturbingFn::Polynomial(c) => Ok(grid
                .nodes()
                .iter()
                .map(|&t| c.iter().rev().fold(0.0, |acc, &ck| acc * t + ck))
                .collect()),
            PerturbingFn::Sampled { nodes, values } => {
                if nodes.len() != values.len() {
                    return arg("sampled perturbing function: nodes and values differ in length");
                }
                if nodes.len() != grid.len()
                    || nodes
                        .iter()
                        .zip(grid.nodes())
                        .any(|(a, b)| (a - b).abs() > NODE_TOL)
                {
                    return arg("sampled perturbing function does not align with the grid");
                }
                Ok(values.clone())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub phi: Vec<PerturbingFn>,
    pub a: DMatrix<f64>,
}

impl PerturbationSpec {
    pub fn new(phi: Vec<PerturbingFn>, a: DMatrix<f64>) -> Result<Self> {
        let m = phi.len();
        if m == 0 {
            return arg("at least one perturbing function is required");
        }
        if a.nrows() != m || a.ncols() != m {
            return arg(format!(
                "A is {}x{} but there are {m} perturbing functions",
                a.nrows(),
                a.ncols()
            ));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return arg("A has non-finite entries");
        }
        Ok(Self { phi, a })
    }

    pub fn m(&self) -> usize {
        self.phi.len()
    }

    /// `n × m` samples, rejected when zero or rank-deficient.
    pub fn sample(&self, grid: &Grid) -> Result<DMatrix<f64>> {
        let n = grid.len();
        let mut out = DMatrix::zeros(n, self.m());
        for (j, f) in self.phi.iter().enumerate() {
            let v = f.sample(grid)?;
            out.column_mut(j).copy_from_slice(&v);
        }
        check_rank(&out, grid)?;
        Ok(out)
    }
}

/// `Φᵀ W Φ`, the quadrature of `∫ φ φᵀ`.
pub fn weighted_gram(a: &DMatrix<f64>, b: &DMatrix<f64>, grid: &Grid) -> Result<DMatrix<f64>> {
    if a.nrows() != grid.len() || b.nrows() != grid.len() {
        return arg("sampled functions do not align with the grid");
    }
    let mut wb = b.clone();
    for (i, mut row) in wb.row_iter_mut().enumerate() {
        row *= grid.weights()[i];
    }
    Ok(a.transpose() * wb)
}

fn check_rank(phi: &DMatrix<f64>, grid: &Grid) -> Result<()> {
    let g = weighted_gram(phi, phi, grid)?;
    let ev = g.symmetric_eigenvalues();
    let max = ev.max();
    if !(max > 0.0) {
        return Err(SmallBallError::Data(
            "perturbing functions vanish on the grid".into(),
        ));
    }
    let rank = ev.iter().filter(|&&e| e > RANK_TOL * max).count();
    if rank < phi.ncols() {
        return Err(SmallBallError::Data(format!(
            "perturbing functions are linearly dependent: numerical rank {rank} < {}",
            phi.ncols()
        )));
    }
    Ok(())
}

/// `ψ = G₀ φ` under the discrete operator of `kernel` on `grid`.
pub fn compute_psi(kernel: &KernelSpec, phi: &DMatrix<f64>, grid: &Grid) -> Result<DMatrix<f64>> {
    DiscreteOperator::new(kernel, grid)?.apply(phi)
}

/// `Q = ∫ ψ φᵀ`, symmetrized; must be positive definite.
pub fn gram_q(phi: &DMatrix<f64>, psi: &DMatrix<f64>, grid: &Grid) -> Result<DMatrix<f64>> {
    if phi.shape() != psi.shape() {
        return arg("phi and psi sample matrices differ in shape");
    }
    let q = weighted_gram(psi, phi, grid)?;
    let q = (&q + q.transpose()) * 0.5;
    if q.clone().cholesky().is_none() {
        return Err(SmallBallError::Data(
            "Gram matrix Q is not positive definite".into(),
        ));
    }
    Ok(q)
}

/// `D = −A − Aᵀ + A Q Aᵀ`.
pub fn d_matrix(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !a.is_square() || a.shape() != q.shape() {
        return arg(format!(
            "A is {:?} and Q is {:?}; both must be square of equal size",
            a.shape(),
            q.shape()
        ));
    }
    let d = -a - a.transpose() + a * q * a.transpose();
    Ok((&d + d.transpose()) * 0.5)
}

/// `G_A = G₀ + Ψ D Ψᵀ` on the grid.
pub fn perturbed_kernel(
    g0: &DMatrix<f64>,
    psi: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if g0.nrows() != psi.nrows() || !g0.is_square() || psi.ncols() != d.nrows() || !d.is_square() {
        return arg("perturbed kernel: dimension mismatch");
    }
    let g = g0 + psi * d * psi.transpose();
    Ok((&g + g.transpose()) * 0.5)
}

#[derive(Debug, Clone)]
pub struct GramData {
    pub psi: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// Everything derived from a kernel, a grid and a perturbation.
#[derive(Debug, Clone)]
pub struct PerturbedSystem {
    pub phi: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub gram: GramData,
    pub base: DiscreteOperator,
    pub perturbed: DiscreteOperator,
}

impl PerturbedSystem {
    pub fn new(kernel: &KernelSpec, grid: &Grid, spec: &PerturbationSpec) -> Result<Self> {
        let phi = spec.sample(grid)?;
        let base = DiscreteOperator::new(kernel, grid)?;
        let psi = base.apply(&phi)?;
        Self::assemble(phi, psi, spec.a.clone(), base)
    }

    /// Build from precomputed `φ` and `ψ` samples.
    pub fn assemble(
        phi: DMatrix<f64>,
        psi: DMatrix<f64>,
        a: DMatrix<f64>,
        base: DiscreteOperator,
    ) -> Result<Self> {
        let q = gram_q(&phi, &psi, &base.grid)?;
        let d = d_matrix(&a, &q)?;
        let perturbed = base.with_matrix(perturbed_kernel(&base.matrix, &psi, &d)?);
        Ok(Self {
            phi,
            a,
            gram: GramData { psi, q, d },
            base,
            perturbed,
        })
    }

    pub fn classify(&self, tol: f64) -> Classification {
        classify(&self.a, &self.gram.q, tol).expect("shapes validated at construction")
    }

    /// `max |G_A φ_j| / max |G₀ φ_j|` over nodes and `j`; zero in the
    /// critical case.
    pub fn annihilation_residual(&self) -> Result<f64> {
        let r = self.perturbed.apply(&self.phi)?;
        Ok(r.amax() / self.gram.psi.amax())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "s", rename_all = "snake_case")]
pub enum Criticality {
    NonCritical,
    PartiallyCritical(usize),
    Critical,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Classification {
    pub label: Criticality,
    pub singular_values: Vec<f64>,
    pub tol: f64,
}

impl Classification {
    /// Number of vanishing singular values.
    pub fn defect(&self) -> usize {
        match self.label {
            Criticality::NonCritical => 0,
            Criticality::PartiallyCritical(s) => s,
            Criticality::Critical => self.singular_values.len(),
        }
    }
}

/// Count singular values of `E − AᵀQ` below `tol · max(σ_max, 1)`.
pub fn classify(a: &DMatrix<f64>, q: &DMatrix<f64>, tol: f64) -> Result<Classification> {
    if !a.is_square() || a.shape() != q.shape() {
        return arg("classify: A and Q must be square of equal size");
    }
    if !(tol > 0.0) {
        return arg(format!(
            "classification tolerance must be positive, got {tol}"
        ));
    }
    let m = a.nrows();
    let e = DMatrix::<f64>::identity(m, m) - a.transpose() * q;
    let mut sv: Vec<f64> = e.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    let scale = sv.first().copied().unwrap_or(0.0).max(1.0);
    let s = sv.iter().filter(|&&v| v < tol * scale).count();
    let label = match s {
        0 => Criticality::NonCritical,
        s if s == m => Criticality::Critical,
        s => Criticality::PartiallyCritical(s),
    };
    Ok(Classification {
        label,
        singular_values: sv,
        tol,
    })
}

/// `1/|det(E − QA)|`, the non-critical transfer factor.
pub fn theorem1_factor(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<f64> {
    let c = classify(a, q, CLASSIFY_TOL)?;
    if c.label != Criticality::NonCritical {
        return Err(SmallBallError::Criticality(format!(
            "E - QA is singular ({:?}); no non-critical factor",
            c.label
        )));
    }
    let m = a.nrows();
    let det = (DMatrix::<f64>::identity(m, m) - q * a).determinant();
    Ok(1.0 / det.abs())
}

/// A truncated product with its N-vs-N/2 convergence diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProductCheck {
    pub value: f64,
    pub half_value: f64,
    /// `|value/half_value − 1|`.
    pub diagnostic: f64,
    pub n_terms: usize,
}

fn product_check(ratios: impl Fn(usize) -> f64, n: usize) -> ProductCheck {
    let mut log = 0.0;
    let mut half = 0.0;
    for k in 0..n {
        log += ratios(k).ln();
        if k + 1 == n / 2 {
            half = log;
        }
    }
    ProductCheck {
        value: log.exp(),
        half_value: half.exp(),
        diagnostic: (log - half).exp_m1().abs(),
        n_terms: n,
    }
}

fn same_grid(a: &Spectrum, b: &Spectrum) -> Result<()> {
    if a.grid != b.grid {
        return arg("spectra were computed on different grids");
    }
    Ok(())
}

/// `Π_{k≤N} μ_k(A)/μ_k⁰`, which tends to `det(E − QA)²`.
pub fn spectral_product_check(
    spec0: &Spectrum,
    spec_a: &Spectrum,
    n: usize,
) -> Result<ProductCheck> {
    same_grid(spec0, spec_a)?;
    let avail = spec0.eigenvalues.len().min(spec_a.eigenvalues.len());
    if n < 2 || n > avail {
        return arg(format!("N = {n} must lie in [2, {avail}]"));
    }
    Ok(product_check(
        |k| spec_a.eigenvalues[k] / spec0.eigenvalues[k],
        n,
    ))
}

/// Critical case: `Π_{k≤N} μ_k(A)/μ_{k+m}⁰`.
pub fn critical_product_check(
    spec0: &Spectrum,
    spec_a: &Spectrum,
    m: usize,
    n: usize,
) -> Result<ProductCheck> {
    same_grid(spec0, spec_a)?;
    let avail = spec_a
        .eigenvalues
        .len()
        .min(spec0.eigenvalues.len().saturating_sub(m));
    if n < 2 || n > avail {
        return arg(format!("N = {n} must lie in [2, {avail}]"));
    }
    Ok(product_check(
        |k| spec_a.eigenvalues[k] / spec0.eigenvalues[k + m],
        n,
    ))
}

/// Limit of [`critical_product_check`]: `det ∫φφᵀ / (det Q · λ₁⁰⋯λ_m⁰)`.
pub fn critical_product_limit(
    phi: &DMatrix<f64>,
    q: &DMatrix<f64>,
    spec0: &Spectrum,
    grid: &Grid,
) -> Result<f64> {
    let m = phi.ncols();
    if spec0.eigenvalues.len() < m {
        return arg("base spectrum shorter than the perturbation dimension");
    }
    let g = weighted_gram(phi, phi, grid)?;
    let mu: f64 = spec0.eigenvalues[..m].iter().product();
    Ok(g.determinant() * mu / q.determinant())
}

/// `det L(z)` with `L(z) = E + Σ_n λ_n⁰ a_n a_nᵀ/(1 − λ_n⁰/z) · D`, the ratio
/// of perturbed to unperturbed Fredholm determinants.
pub fn bateman_ratio(
    z: Complex<f64>,
    spec0: &Spectrum,
    coeffs: &FourierCoeffs,
    d: &DMatrix<f64>,
) -> Result<Complex<f64>> {
    let m = coeffs.dim();
    if d.shape() != (m, m) {
        return arg("D does not match the number of perturbing functions");
    }
    let n = coeffs.truncation().min(spec0.eigenvalues.len());
    let mut s = DMatrix::<Complex<f64>>::zeros(m, m);
    for k in 0..n {
        let lambda = 1.0 / spec0.eigenvalues[k];
        let gap = z - lambda;
        if gap.norm() <= 1e-9 * lambda {
            return Err(SmallBallError::Pole(format!(
                "z = {z} is within tolerance of eigenvalue λ_{} = {lambda}",
                k + 1
            )));
        }
        // λ/(1 − λ/z) = λz/(z − λ), finite at z = 0
        let w = z * lambda / gap;
        for i in 0..m {
            for j in 0..m {
                s[(i, j)] += w * coeffs.a[(k, i)] * coeffs.a[(k, j)];
            }
        }
    }
    let dc = d.map(|v| Complex::new(v, 0.0));
    let l = DMatrix::<Complex<f64>>::identity(m, m) + s * dc;
    Ok(l.determinant())
}

/// `Π_{k≤N} (1 − z/λ_k)/(1 − z/λ_k⁰)` for real `z`, the truncated Fredholm
/// determinant ratio.
pub fn fredholm_product_ratio(
    spec0: &Spectrum,
    spec_a: &Spectrum,
    z: f64,
    n: usize,
) -> Result<f64> {
    same_grid(spec0, spec_a)?;
    let avail = spec0.eigenvalues.len().min(spec_a.eigenvalues.len());
    if n > avail {
        return arg(format!("N = {n} exceeds the {avail} available eigenvalues"));
    }
    let log: f64 = (0..n)
        .map(|k| ((1.0 - z * spec_a.eigenvalues[k]) / (1.0 - z * spec0.eigenvalues[k])).ln())
        .sum();
    Ok(log.exp())
}

/// `√(det Q / det ∫φφᵀ)`.
pub fn critical_prefactor(q: &DMatrix<f64>, phi: &DMatrix<f64>, grid: &Grid) -> Result<f64> {
    check_rank(phi, grid)?;
    let g = weighted_gram(phi, phi, grid)?;
    if q.shape() != g.shape() {
        return arg("Q does not match the number of perturbing functions");
    }
    let dq = q.determinant();
    if !(dq > 0.0) {
        return Err(SmallBallError::Data("det Q is not positive".into()));
    }
    Ok((dq / g.determinant()).sqrt())
}

/// Critical-case asymptotics from the base form of `P{‖X₀‖² < r}`:
/// differentiate `m` times, Abel-smooth `m` times, and multiply by
/// `prefactor·(2/π)^{m/2}`. Net effect on the form: amplitude times
/// `prefactor·(2𝒟β)^{m/2}`, power shifted by `−m(β+1)/2`.
pub fn theorem2_closed(base: &AsymptoticForm, m: u32, prefactor: f64) -> AsymptoticForm {
    let mut form = differentiate_form(base, m);
    for _ in 0..m {
        form = abel_reduce(&form);
    }
    form.scale(prefactor * (2.0 / PI).powf(0.5 * f64::from(m)))
}

/// `∫₀^r ∫₀^{r₁} ⋯ f(r_m) Π (r_{i−1} − r_i)^{−1/2}`, the `m`-fold nested Abel
/// convolution, by recursive quadrature.
pub fn theorem2_convolution_numeric(f: &dyn Fn(f64) -> f64, m: u32, r: f64) -> Result<f64> {
    if m == 0 {
        return arg("m must be at least 1");
    }
    nested_abel(f, m, r)
}

fn nested_abel(f: &dyn Fn(f64) -> f64, m: u32, r: f64) -> Result<f64> {
    if m == 0 {
        return Ok(f(r));
    }
    if r <= 0.0 {
        return Ok(0.0);
    }
    let failure = RefCell::new(None);
    let opts = if m > 1 {
        QuadOptions::tol(1e-14, 1e-10)
    } else {
        QuadOptions::default()
    };
    let value = abel_convolve(
        |x| match nested_abel(f, m - 1, x) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        r,
        opts,
    )?;
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// Critical factor for a Green process of order `l`:
/// `prefactor · (2l sin(π/(2l)) ε²)^{−lm/(2l−1)}`.
pub fn theorem3_asymptotic(l: u32, m: u32, prefactor: f64, eps: f64) -> Result<f64> {
    if l == 0 {
        return arg("Green order l must be positive");
    }
    if !(eps > 0.0) {
        return arg(format!("eps must be positive, got {eps}"));
    }
    let l = f64::from(l);
    let base = 2.0 * l * (PI / (2.0 * l)).sin() * eps * eps;
    Ok(prefactor * base.powf(-l * f64::from(m) / (2.0 * l - 1.0)))
}

/// Small-ball form in `r = ε²` of a Green process of order `l` whose
/// eigenvalues behave as `(πk)^{−2l}`: order `1/(2l−1)` and rate
/// `((2l−1)/2)·(2l sin(π/(2l)))^{−2l/(2l−1)}`.
pub fn green_base_form(l: u32, amplitude: f64, power: f64) -> Result<AsymptoticForm> {
    if l == 0 {
        return arg("Green order l must be positive");
    }
    let lf = f64::from(l);
    let order = 1.0 / (2.0 * lf - 1.0);
    let s = 2.0 * lf * (PI / (2.0 * lf)).sin();
    let rate = 0.5 / order * s.powf(-(order + 1.0));
    AsymptoticForm::new(amplitude, power, rate, order)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m1(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn d_matrix_arithmetic() {
        assert_eq!(d_matrix(&m1(12.0), &m1(1.0 / 12.0)).unwrap()[(0, 0)], -12.0);
        assert!(d_matrix(&m1(1.0), &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn classification_labels() {
        let q = DMatrix::identity(2, 2);
        let zero = DMatrix::zeros(2, 2);
        assert_eq!(
            classify(&zero, &q, CLASSIFY_TOL).unwrap().label,
            Criticality::NonCritical
        );
        assert_eq!(
            classify(&q, &q, CLASSIFY_TOL).unwrap().label,
            Criticality::Critical
        );
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, 0.0]));
        let c = classify(&a, &q, CLASSIFY_TOL).unwrap();
        assert_eq!(c.label, Criticality::PartiallyCritical(1));
        assert_eq!(c.defect(), 1);
    }

    #[test]
    fn theorem1_factor_cases() {
        let q = m1(1.0 / 12.0);
        assert!((theorem1_factor(&m1(0.0), &q).unwrap() - 1.0).abs() < 1e-15);
        assert!((theorem1_factor(&m1(6.0), &q).unwrap() - 2.0).abs() < 1e-12);
        assert!(matches!(
            theorem1_factor(&m1(12.0), &q),
            Err(SmallBallError::Criticality(_))
        ));
    }

    #[test]
    fn theorem3_examples() {
        let p = 1.0 / (2.0 * 3f64.sqrt());
        assert!((theorem3_asymptotic(1, 1, p, 0.1).unwrap() - 14.433_756_729_740_644).abs() < 1e-9);
        let a = theorem3_asymptotic(1, 1, 1.0, 0.1).unwrap();
        let b = theorem3_asymptotic(1, 1, 1.0, 0.05).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);
        assert!(theorem3_asymptotic(0, 1, 1.0, 0.1).is_err());
    }

    #[test]
    fn nested_abel_constant() {
        let v = theorem2_convolution_numeric(&|_| 1.0, 1, 0.04).unwrap();
        assert!((v - 0.4).abs() < 1e-13);
    }

    #[test]
    fn polynomial_sampling() {
        let g = Grid::new(vec![0.25, 0.75], vec![0.5, 0.5]).unwrap();
        let v = PerturbingFn::Polynomial(vec![1.0, 2.0, 3.0])
            .sample(&g)
            .unwrap();
        assert!((v[0] - (1.0 + 0.5 + 3.0 / 16.0)).abs() < 1e-15);
        let bad = PerturbingFn::Sampled {
            nodes: vec![0.1, 0.9],
            values: vec![1.0, 1.0],
        };
        assert!(bad.sample(&g).is_err());
    }

    #[test]
    fn rank_deficient_family_rejected() {
        let g = crate::spectral::gauss_legendre_grid(20).unwrap();
        let spec = PerturbationSpec::new(
            vec![PerturbingFn::constant(1.0), PerturbingFn::constant(2.0)],
            DMatrix::zeros(2, 2),
        )
        .unwrap();
        assert!(matches!(spec.sample(&g), Err(SmallBallError::Data(_))));
        let zero = PerturbationSpec::new(vec![PerturbingFn::constant(0.0)], m1(1.0)).unwrap();
        assert!(matches!(zero.sample(&g), Err(SmallBallError::Data(_))));
    }
}

//! Nyström discretization of covariance operators on `[0, 1]`.
//!
//! The discrete operator acting on samples `f(tⱼ)` is
//!
//! ```text
//! (K f)ᵢ = Σⱼ wⱼ G(tᵢ, tⱼ) f(tⱼ) + cᵢ f(tᵢ),   cᵢ = ∫₀¹ G(tᵢ, s) ds − Σⱼ wⱼ G(tᵢ, tⱼ)
//! ```
//!
//! i.e. Gauss–Legendre with singularity subtraction. The diagonal correction
//! `cᵢ` absorbs the quadrature error caused by the kink of the kernel on the
//! diagonal; it is available whenever the row integrals are known in closed
//! form (catalog kernels) and is zero otherwise. Because `c` is diagonal, the
//! symmetrized matrix `W^{1/2} M W^{1/2} + diag(c)` has the same spectrum and
//! its eigenvectors are orthonormal in the weighted inner product after
//! scaling by `W^{-1/2}`.

use crate::error::{arg, Result, SmallBallError};
use crate::kernels::{kernel_matrix, weighted_trace, KernelKind, KernelSpec};
use crate::quad::{integrate_best_effort, QuadOptions};
use nalgebra::{DMatrix, DVector};
use std::io::{self, Write};

/// Eigenvalues below this multiple of the largest are discarded.
pub const EIGEN_FLOOR: f64 = 1e-13;
/// A sampled kernel is rejected as non-PSD below `-NEG_TOL · μ₁`.
pub const NEG_TOL: f64 = 1e-9;

/// Quadrature grid on `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Grid {
    pub fn new(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() {
            return arg(format!(
                "grid has {} nodes but {} weights",
                nodes.len(),
                weights.len()
            ));
        }
        if nodes.iter().any(|&x| !(x > 0.0 && x < 1.0)) {
            return arg("grid nodes must lie strictly inside (0, 1)");
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return arg("grid nodes must be strictly increasing");
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return arg("grid weights must be positive");
        }
        let total: f64 = weights.iter().sum();
        if !nodes.is_empty() && (total - 1.0).abs() > 1e-12 {
            return arg(format!("grid weights sum to {total}, expected 1"));
        }
        Ok(Self { nodes, weights })
    }

    pub fn empty() -> Self {
        Self {
            nodes: Vec::new(),
            weights: Vec::new(),
        }
    }

    /// Weights from the Voronoi cells of `nodes` inside `[0, 1]`. Used for
    /// sampled kernels given on an arbitrary interior grid.
    pub fn from_nodes(nodes: Vec<f64>) -> Result<Self> {
        let n = nodes.len();
        let mut weights = Vec::with_capacity(n);
        for i in 0..n {
            let left = if i == 0 {
                0.0
            } else {
                0.5 * (nodes[i - 1] + nodes[i])
            };
            let right = if i + 1 == n {
                1.0
            } else {
                0.5 * (nodes[i] + nodes[i + 1])
            };
            weights.push(right - left);
        }
        Self::new(nodes, weights)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `Σ wᵢ f(tᵢ)`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }

    /// Sample `funcs` at the nodes: column `j` holds `funcs[j](tᵢ)`.
    pub fn sample(&self, funcs: &[&dyn Fn(f64) -> f64]) -> DMatrix<f64> {
        DMatrix::from_fn(self.len(), funcs.len(), |i, j| funcs[j](self.nodes[i]))
    }
}

/// Legendre roots and weights on `[-1, 1]`, roots descending.
fn legendre_rule(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    if n % 2 == 1 {
        x[n / 2] = 0.0;
    }
    (x, w)
}

/// `n`-point Gauss–Legendre rule mapped to `(0, 1)`.
pub fn gauss_legendre_grid(n: usize) -> Result<Grid> {
    if n == 0 {
        return arg("Gauss-Legendre grid needs at least one node");
    }
    let (x, w) = legendre_rule(n);
    // x is descending, so (1 - x)/2 ascends
    let nodes: Vec<f64> = x.iter().map(|&xi| 0.5 * (1.0 - xi)).collect();
    let mut weights: Vec<f64> = w.iter().map(|&wi| 0.5 * wi).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    Grid::new(nodes, weights)
}

/// Gauss–Legendre in `v` pushed through `t = v³(10 − 15v + 6v²)`, which
/// clusters nodes at both endpoints. Integrands with logarithmic or
/// inverse-quantile endpoint singularities converge far faster on it.
pub fn graded_gauss_legendre_grid(n: usize) -> Result<Grid> {
    let base = gauss_legendre_grid(n)?;
    let smooth = |v: f64| v * v * v * (10.0 - 15.0 * v + 6.0 * v * v);
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for (&v, &w) in base.nodes().iter().zip(base.weights()) {
        let t = if v <= 0.5 {
            smooth(v)
        } else {
            1.0 - smooth(1.0 - v)
        };
        nodes.push(t);
        weights.push(w * 30.0 * v * v * (1.0 - v) * (1.0 - v));
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|v| *v /= total);
    Grid::new(nodes, weights).map_err(|_| {
        SmallBallError::Argument(format!(
            "graded grid with {n} nodes collapses onto the endpoints in double precision"
        ))
    })
}

/// `∫₀¹ G(t, s) ds` in closed form for catalog kernels.
pub fn row_integral(spec: &KernelSpec, t: f64) -> Option<f64> {
    match spec.kind {
        KernelKind::Wiener => Some(t - 0.5 * t * t),
        KernelKind::Bridge => Some(0.5 * t * (1.0 - t)),
        KernelKind::OrnsteinUhlenbeck { rate } => {
            Some((2.0 - (-rate * t).exp() - (-rate * (1.0 - t)).exp()) / rate)
        }
        KernelKind::Sampled { .. } => None,
    }
}

/// A kernel discretized on a grid: the raw matrix and the diagonal
/// singularity-subtraction correction.
#[derive(Debug, Clone)]
pub struct DiscreteOperator {
    pub matrix: DMatrix<f64>,
    pub correction: DVector<f64>,
    pub grid: Grid,
}

impl DiscreteOperator {
    pub fn new(spec: &KernelSpec, grid: &Grid) -> Result<Self> {
        let matrix = kernel_matrix(spec, grid)?;
        let correction = match spec.kind {
            KernelKind::Sampled { .. } => DVector::zeros(grid.len()),
            _ => {
                let w = DVector::from_column_slice(grid.weights());
                let naive = &matrix * &w;
                DVector::from_fn(grid.len(), |i, _| {
                    row_integral(spec, grid.nodes()[i]).unwrap_or(naive[i]) - naive[i]
                })
            }
        };
        Ok(Self {
            matrix,
            correction,
            grid: grid.clone(),
        })
    }

    /// An operator given by a raw matrix with no correction.
    pub fn from_matrix(matrix: DMatrix<f64>, grid: &Grid) -> Result<Self> {
        if matrix.nrows() != grid.len() || matrix.ncols() != grid.len() {
            return arg("operator matrix does not match grid size");
        }
        let n = grid.len();
        Ok(Self {
            matrix,
            correction: DVector::zeros(n),
            grid: grid.clone(),
        })
    }

    /// Apply to sampled functions (columns of `f`).
    pub fn apply(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if f.nrows() != self.grid.len() {
            return arg(format!(
                "function samples have {} rows, grid has {} nodes",
                f.nrows(),
                self.grid.len()
            ));
        }
        let w = self.grid.weights();
        let mut wf = f.clone();
        for (i, mut row) in wf.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let mut out = &self.matrix * wf;
        for (i, mut row) in out.row_iter_mut().enumerate() {
            row += f.row(i) * self.correction[i];
        }
        Ok(out)
    }

    /// Trace of the discrete operator, the quadrature of `∫ G(t, t) dt`
    /// plus the correction.
    pub fn trace(&self) -> f64 {
        weighted_trace(&self.matrix, &self.grid) + self.correction.sum()
    }

    /// Same grid and correction, matrix replaced (for perturbed kernels whose
    /// non-smooth part is the base kernel).
    pub fn with_matrix(&self, matrix: DMatrix<f64>) -> Self {
        Self {
            matrix,
            correction: self.correction.clone(),
            grid: self.grid.clone(),
        }
    }
}

/// Leading eigenpairs of a covariance operator.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// `μ₁ ≥ μ₂ ≥ … > 0`.
    pub eigenvalues: Vec<f64>,
    /// Column `k` holds `u_k(tᵢ)`, orthonormal in the weighted inner product.
    pub eigvecs: DMatrix<f64>,
    pub grid: Grid,
    pub truncation_count: usize,
    /// Trace of the discrete operator; `trace − Σ μ_k` bounds the discarded
    /// tail.
    pub trace: f64,
}

impl Spectrum {
    /// `λ_k = 1/μ_k`.
    pub fn lambdas(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|m| 1.0 / m).collect()
    }

    pub fn tail_sum_bound(&self) -> f64 {
        (self.trace - self.eigenvalues.iter().sum::<f64>()).max(0.0)
    }
}

/// Top `k_max` eigenpairs of the catalog or sampled kernel on `grid`.
pub fn nystrom_spectrum(spec: &KernelSpec, grid: &Grid, k_max: usize) -> Result<Spectrum> {
    if k_max > grid.len() {
        return arg(format!(
            "requested {k_max} eigenvalues from a {}-node grid",
            grid.len()
        ));
    }
    let op = DiscreteOperator::new(spec, grid)?;
    operator_spectrum(&op, k_max)
}

/// Top `k_max` eigenpairs of a discretized operator.
pub fn operator_spectrum(op: &DiscreteOperator, k_max: usize) -> Result<Spectrum> {
    let grid = &op.grid;
    let n = grid.len();
    if k_max > n {
        return arg(format!(
            "requested {k_max} eigenvalues from a {n}-node grid"
        ));
    }
    let sqrt_w: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let sym = faer::Mat::<f64>::from_fn(n, n, |i, j| {
        let v = sqrt_w[i] * op.matrix[(i, j)] * sqrt_w[j];
        if i == j {
            v + op.correction[i]
        } else {
            v
        }
    });
    let trace = op.trace();
    if n == 0 || k_max == 0 {
        return Ok(Spectrum {
            eigenvalues: Vec::new(),
            eigvecs: DMatrix::zeros(n, 0),
            grid: grid.clone(),
            truncation_count: 0,
            trace,
        });
    }
    let eig = sym
        .self_adjoint_eigen(faer::Side::Lower)
        .map_err(|e| SmallBallError::Numeric(format!("symmetric eigensolver failed: {e:?}")))?;
    let values = eig.S().column_vector();
    let vectors = eig.U();
    // ascending order from the solver
    let top = values[n - 1];
    let bottom = values[0];
    if top > 0.0 && bottom < -NEG_TOL * top {
        return Err(SmallBallError::Data(format!(
            "kernel is not positive semidefinite: eigenvalue {bottom:e} vs largest {top:e}"
        )));
    }
    let floor = EIGEN_FLOOR * top;
    let mut eigenvalues = Vec::with_capacity(k_max);
    let mut columns = Vec::with_capacity(k_max);
    for idx in (0..n).rev().take(k_max) {
        let mu = values[idx];
        if !(top > 0.0) || mu < floor || mu <= 0.0 {
            break;
        }
        let mut u: Vec<f64> = (0..n).map(|i| vectors[(i, idx)] / sqrt_w[i]).collect();
        let scale = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if let Some(first) = u.iter().find(|v| v.abs() > 1e-8 * scale) {
            if *first < 0.0 {
                u.iter_mut().for_each(|v| *v = -*v);
            }
        }
        eigenvalues.push(mu);
        columns.push(u);
    }
    let k = eigenvalues.len();
    let eigvecs = DMatrix::from_fn(n, k, |i, j| columns[j][i]);
    Ok(Spectrum {
        eigenvalues,
        eigvecs,
        grid: grid.clone(),
        truncation_count: k,
        trace,
    })
}

/// `a[n][j] = Σᵢ wᵢ fⱼ(tᵢ) uₙ(tᵢ)`.
#[derive(Debug, Clone)]
pub struct FourierCoeffs {
    pub a: DMatrix<f64>,
}

impl FourierCoeffs {
    pub fn truncation(&self) -> usize {
        self.a.nrows()
    }

    pub fn dim(&self) -> usize {
        self.a.ncols()
    }

    /// `Σₙ λₙ aₙ aₙᵀ` over the first `n_terms` coefficients, the spectral
    /// form of the Gram matrix `Q`.
    pub fn gram_sum(&self, spectrum: &Spectrum, n_terms: usize) -> DMatrix<f64> {
        let m = self.dim();
        let mut q = DMatrix::zeros(m, m);
        for n in 0..n_terms.min(self.truncation()) {
            let row = self.a.row(n);
            q += row.transpose() * row / spectrum.eigenvalues[n];
        }
        q
    }
}

pub fn fourier_coefficients(spectrum: &Spectrum, funcs: &DMatrix<f64>) -> Result<FourierCoeffs> {
    let grid = &spectrum.grid;
    if funcs.nrows() != grid.len() {
        return arg(format!(
            "function samples have {} rows, spectrum grid has {} nodes",
            funcs.nrows(),
            grid.len()
        ));
    }
    let mut wf = funcs.clone();
    for (i, mut row) in wf.row_iter_mut().enumerate() {
        row *= grid.weights()[i];
    }
    let a = spectrum.eigvecs.transpose() * wf;
    Ok(FourierCoeffs { a })
}

/// `k,mu_k` table.
pub fn write_spectrum_csv<W: Write>(spectrum: &Spectrum, mut out: W) -> io::Result<()> {
    writeln!(out, "k,mu_k")?;
    for (k, mu) in spectrum.eigenvalues.iter().enumerate() {
        writeln!(out, "{},{:e}", k + 1, mu)?;
    }
    Ok(())
}

/// `node,u_1,...,u_k` table of eigenfunction samples.
pub fn write_eigenfunctions_csv<W: Write>(
    spectrum: &Spectrum,
    count: usize,
    mut out: W,
) -> io::Result<()> {
    let count = count.min(spectrum.truncation_count);
    let header: Vec<String> = (1..=count).map(|k| format!("u_{k}")).collect();
    writeln!(out, "node,{}", header.join(","))?;
    for (i, t) in spectrum.grid.nodes().iter().enumerate() {
        write!(out, "{t:e}")?;
        for k in 0..count {
            write!(out, ",{:e}", spectrum.eigvecs[(i, k)])?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Integrate `G(t, ·) f(·)` at every grid node using the semi-separable form
/// of a catalog kernel and adaptive quadrature between consecutive nodes.
/// Accurate for analytic `f` with integrable endpoint singularities, where
/// the sampled rule is not.
pub fn apply_kernel_analytic<F: Fn(f64) -> f64>(
    spec: &KernelSpec,
    f: F,
    grid: &Grid,
) -> Result<Vec<f64>> {
    let sep = spec.semiseparable().ok_or_else(|| {
        SmallBallError::Argument("analytic kernel application needs a catalog kernel".into())
    })?;
    let nodes = grid.nodes();
    let n = nodes.len();
    let opts = QuadOptions::tol(1e-15, 1e-12);
    let piece = |a: f64, b: f64, g: &dyn Fn(f64) -> f64| -> Result<f64> {
        if b - a <= 4.0 * f64::EPSILON * b.abs().max(1.0) {
            return Ok(0.0);
        }
        // near the endpoints the spacing of doubles limits how well the
        // integrand is resolved; take the best estimate available there
        Ok(integrate_best_effort(g, a, b, opts)?.value)
    };
    // quadrature points that round onto an endpoint carry no mass
    let inside = |s: f64| s > 0.0 && s < 1.0;
    let left_integrand = |s: f64| if inside(s) { sep.p(s) * f(s) } else { 0.0 };
    let right_integrand = |s: f64| if inside(s) { sep.q(s) * f(s) } else { 0.0 };
    // left[i] = ∫₀^{tᵢ} p f, right[i] = ∫_{tᵢ}^1 q f
    let mut left = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        let a = if i == 0 { 0.0 } else { nodes[i - 1] };
        acc += piece(a, nodes[i], &left_integrand)?;
        left[i] = acc;
    }
    let mut right = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        let b = if i + 1 == n { 1.0 } else { nodes[i + 1] };
        acc += piece(nodes[i], b, &right_integrand)?;
        right[i] = acc;
    }
    Ok((0..n)
        .map(|i| sep.q(nodes[i]) * left[i] + sep.p(nodes[i]) * right[i])
        .collect())
}

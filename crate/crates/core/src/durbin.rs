//! Durbin processes: the limit of the empirical process when parameters are
//! estimated by maximum likelihood.
//!
//! In the time scale `t = F(x, θ)` the limit has covariance
//! `G_B(s, t) − ψ(s)ᵀ S⁻¹ ψ(t)` with `ψ_j(t) = ∂F/∂θ_j` and Fisher matrix
//! `S = ∫ψ'ψ'ᵀ`. Taking `φ_j = −ψ_j''` gives `G_B φ_j = ψ_j` and `Q = S`, so
//! the Durbin process is the critical perturbation `A = S⁻¹` of the bridge.

use crate::error::{arg, Result, SmallBallError};
use crate::kernels::KernelSpec;
use crate::montecarlo::{open_uniform, run_sharded, std_normal};
use crate::perturbation::{classify, weighted_gram, Classification, CLASSIFY_TOL};
use crate::quadform::WeightSeq;
use crate::special::{norm_cdf, norm_pdf, norm_quantile};
use crate::spectral::{apply_kernel_analytic, operator_spectrum, DiscreteOperator, Grid};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};

/// Tolerance on `‖Q − S‖_∞`.
pub const QS_TOL: f64 = 1e-6;

/// Parametric family and true parameter. `NormalLocation` estimates the mean
/// with known scale; `NormalLocationScale` estimates `(μ, σ)` in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FamilySpec {
    NormalLocation { mu: f64, sigma: f64 },
    NormalLocationScale { mu: f64, sigma: f64 },
    ExponentialRate { rate: f64 },
}

impl FamilySpec {
    /// Standard member of the family named by `tag` (`-` and `_` both
    /// accepted).
    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag.replace('-', "_").as_str() {
            "normal_location" => Ok(FamilySpec::NormalLocation {
                mu: 0.0,
                sigma: 1.0,
            }),
            "normal_location_scale" => Ok(FamilySpec::NormalLocationScale {
                mu: 0.0,
                sigma: 1.0,
            }),
            "exponential_rate" => Ok(FamilySpec::ExponentialRate { rate: 1.0 }),
            other => arg(format!("unsupported family '{other}'")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            FamilySpec::NormalLocation { mu, sigma }
            | FamilySpec::NormalLocationScale { mu, sigma } => {
                mu.is_finite() && sigma > 0.0 && sigma.is_finite()
            }
            FamilySpec::ExponentialRate { rate } => rate > 0.0 && rate.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            arg(format!("invalid family parameters {self:?}"))
        }
    }

    pub fn tag(&self) -> &'static str {
        match self {
            FamilySpec::NormalLocation { .. } => "normal_location",
            FamilySpec::NormalLocationScale { .. } => "normal_location_scale",
            FamilySpec::ExponentialRate { .. } => "exponential_rate",
        }
    }

    /// Number of estimated parameters.
    pub fn m(&self) -> usize {
        match self {
            FamilySpec::NormalLocationScale { .. } => 2,
            _ => 1,
        }
    }

    pub fn theta0(&self) -> Vec<f64> {
        match *self {
            FamilySpec::NormalLocation { mu, .. } => vec![mu],
            FamilySpec::NormalLocationScale { mu, sigma } => vec![mu, sigma],
            FamilySpec::ExponentialRate { rate } => vec![rate],
        }
    }

    /// `ψ_j(t)`.
    pub fn psi(&self, t: f64) -> [f64; 2] {
        match *self {
            FamilySpec::NormalLocation { sigma, .. } => {
                let z = norm_quantile(t);
                [-norm_pdf(z) / sigma, 0.0]
            }
            FamilySpec::NormalLocationScale { sigma, .. } => {
                let z = norm_quantile(t);
                let p = norm_pdf(z);
                [-p / sigma, -z * p / sigma]
            }
            FamilySpec::ExponentialRate { rate } => {
                let s = 1.0 - t;
                [-s * s.ln() / rate, 0.0]
            }
        }
    }

    /// `ψ_j'(t)`.
    pub fn psi_prime(&self, t: f64) -> [f64; 2] {
        match *self {
            FamilySpec::NormalLocation { sigma, .. } => [norm_quantile(t) / sigma, 0.0],
            FamilySpec::NormalLocationScale { sigma, .. } => {
                let z = norm_quantile(t);
                [z / sigma, (z * z - 1.0) / sigma]
            }
            FamilySpec::ExponentialRate { rate } => [(1.0 + (1.0 - t).ln()) / rate, 0.0],
        }
    }

    /// `φ_j(t) = −ψ_j''(t)`.
    pub fn phi(&self, t: f64) -> [f64; 2] {
        match *self {
            FamilySpec::NormalLocation { sigma, .. } => {
                [-1.0 / (sigma * norm_pdf(norm_quantile(t))), 0.0]
            }
            FamilySpec::NormalLocationScale { sigma, .. } => {
                let z = norm_quantile(t);
                let p = norm_pdf(z);
                [-1.0 / (sigma * p), -2.0 * z / (sigma * p)]
            }
            FamilySpec::ExponentialRate { rate } => [1.0 / ((1.0 - t) * rate), 0.0],
        }
    }

    fn cdf(&self, x: f64, theta: &[f64]) -> f64 {
        match *self {
            FamilySpec::NormalLocation { sigma, .. } => norm_cdf((x - theta[0]) / sigma),
            FamilySpec::NormalLocationScale { .. } => norm_cdf((x - theta[0]) / theta[1]),
            FamilySpec::ExponentialRate { .. } => -(-theta[0] * x).exp_m1(),
        }
    }

    /// Closed-form maximum-likelihood estimate.
    fn mle(&self, xs: &[f64]) -> Vec<f64> {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        match self {
            FamilySpec::NormalLocation { .. } => vec![mean],
            FamilySpec::NormalLocationScale { .. } => {
                let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                vec![mean, var.sqrt()]
            }
            FamilySpec::ExponentialRate { .. } => vec![1.0 / mean],
        }
    }

    fn draw(&self, rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
        match *self {
            FamilySpec::NormalLocation { mu, sigma }
            | FamilySpec::NormalLocationScale { mu, sigma } => mu + sigma * std_normal(rng),
            FamilySpec::ExponentialRate { rate } => -(-open_uniform(rng)).ln_1p() / rate,
        }
    }
}

fn sample_family(
    fam: &FamilySpec,
    grid: &Grid,
    f: impl Fn(&FamilySpec, f64) -> [f64; 2],
) -> DMatrix<f64> {
    let m = fam.m();
    let nodes = grid.nodes();
    DMatrix::from_fn(nodes.len(), m, |i, j| f(fam, nodes[i])[j])
}

/// `ψ_j` at the grid nodes (`n × m`).
pub fn durbin_psi(fam: &FamilySpec, grid: &Grid) -> Result<DMatrix<f64>> {
    fam.validate()?;
    Ok(sample_family(fam, grid, FamilySpec::psi))
}

/// `S = ∫ ψ'ψ'ᵀ` by quadrature on `grid`.
pub fn fisher_matrix(fam: &FamilySpec, grid: &Grid) -> Result<DMatrix<f64>> {
    fam.validate()?;
    let dpsi = sample_family(fam, grid, FamilySpec::psi_prime);
    let s = weighted_gram(&dpsi, &dpsi, grid)?;
    Ok((&s + s.transpose()) * 0.5)
}

#[derive(Debug, Clone)]
pub struct DurbinModel {
    pub family: FamilySpec,
    pub grid: Grid,
    pub psi: DMatrix<f64>,
    /// `φ_j = −ψ_j''` at the nodes.
    pub phi: DMatrix<f64>,
    pub s: DMatrix<f64>,
    /// `A = S⁻¹`.
    pub a: DMatrix<f64>,
    /// `Q = ∫ (G_B φ) φᵀ`, with `G_B φ` integrated analytically.
    pub q: DMatrix<f64>,
    /// `‖Q − S‖_∞`.
    pub q_s_gap: f64,
    pub classification: Classification,
    /// `max |G φ_j| / max |ψ_j|` for the Durbin kernel `G`.
    pub annihilation_residual: f64,
}

impl DurbinModel {
    /// `∫₀¹ G(t, t) dt = 1/6 − ∫ ψᵀS⁻¹ψ` by quadrature on the model grid.
    pub fn trace(&self) -> f64 {
        let w = self.grid.weights();
        self.grid
            .nodes()
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let p = self.psi.row(i);
                w[i] * (t * (1.0 - t) - (p * &self.a * p.transpose())[(0, 0)])
            })
            .sum()
    }

    /// Weights of the Durbin quadratic form from the top `k` eigenvalues of
    /// [`DurbinModel::operator`]; the tail bound is `trace − Σ μ_k`.
    pub fn weights(&self, k: usize) -> Result<WeightSeq> {
        let spectrum = operator_spectrum(&self.operator()?, k)?;
        let head_sum: f64 = spectrum.eigenvalues.iter().sum();
        WeightSeq::new(
            spectrum.eigenvalues,
            (self.trace() - head_sum).max(0.0),
            format!("durbin_{}", self.family.tag()),
        )
    }

    /// The Durbin kernel `G_B − ψᵀS⁻¹ψ` discretized on the model grid.
    pub fn operator(&self) -> Result<DiscreteOperator> {
        let base = DiscreteOperator::new(&KernelSpec::bridge(), &self.grid)?;
        let g = &base.matrix - &self.psi * &self.a * self.psi.transpose();
        let g = (&g + g.transpose()) * 0.5;
        Ok(base.with_matrix(g))
    }
}

/// Build the model and verify that it is a critical perturbation of the
/// bridge: `‖Q − S‖_∞ < 1e−6` and `classify(S⁻¹, Q)` is critical.
pub fn durbin_model(fam: &FamilySpec, grid: &Grid) -> Result<DurbinModel> {
    fam.validate()?;
    let m = fam.m();
    let psi = durbin_psi(fam, grid)?;
    let phi = sample_family(fam, grid, FamilySpec::phi);
    let s = fisher_matrix(fam, grid)?;
    let a = s
        .clone()
        .try_inverse()
        .ok_or_else(|| SmallBallError::Numeric("Fisher matrix is singular".into()))?;
    let a = (&a + a.transpose()) * 0.5;

    let bridge = KernelSpec::bridge();
    let mut g_phi = DMatrix::zeros(grid.len(), m);
    for j in 0..m {
        let col = apply_kernel_analytic(&bridge, |t| fam.phi(t)[j], grid)?;
        g_phi.column_mut(j).copy_from_slice(&col);
    }
    let q = weighted_gram(&g_phi, &phi, grid)?;
    let q = (&q + q.transpose()) * 0.5;
    let q_s_gap = (&q - &s).amax();
    if !(q_s_gap < QS_TOL) {
        return Err(SmallBallError::Consistency(format!(
            "{}: ||Q - S||_inf = {q_s_gap:e} exceeds {QS_TOL:e}",
            fam.tag()
        )));
    }
    let classification = classify(&a, &q, CLASSIFY_TOL)?;
    if classification.defect() != m {
        return Err(SmallBallError::Consistency(format!(
            "{}: Durbin perturbation classified as {:?}, expected critical",
            fam.tag(),
            classification.label
        )));
    }
    // G φ = G_B φ − ψ S⁻¹ ∫ψφᵀ
    let residual = &g_phi - &psi * &a * &q;
    let annihilation_residual = residual.amax() / psi.amax();
    Ok(DurbinModel {
        family: *fam,
        grid: grid.clone(),
        psi,
        phi,
        s,
        a,
        q,
        q_s_gap,
        classification,
        annihilation_residual,
    })
}

/// Cramér–von Mises statistic `Σᵢ (t₍ᵢ₎ − (2i−1)/(2n))² + 1/(12n)` of sorted
/// probability-integral transforms. This already equals
/// `n ∫ (F̂_n(t) − t)² dt`.
pub fn cramer_von_mises(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    let sum: f64 = sorted
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let c = (2.0 * i as f64 + 1.0) / (2.0 * n);
            (t - c) * (t - c)
        })
        .sum();
    sum + 1.0 / (12.0 * n)
}

/// `reps` replications of the statistic with parameters estimated by MLE,
/// sharded over replications (see [`crate::montecarlo`]).
pub fn simulate_omega2(fam: &FamilySpec, n: usize, reps: usize, seed: u64) -> Result<Vec<f64>> {
    fam.validate()?;
    if n < 2 {
        return arg(format!("sample size must be at least 2, got {n}"));
    }
    if reps == 0 {
        return arg("reps must be at least 1");
    }
    let shards = run_sharded(seed, reps, |_, count, rng| {
        let mut out = Vec::with_capacity(count);
        let mut xs = vec![0.0; n];
        for _ in 0..count {
            for x in xs.iter_mut() {
                *x = fam.draw(rng);
            }
            let theta = fam.mle(&xs);
            let mut ts: Vec<f64> = xs.iter().map(|&x| fam.cdf(x, &theta)).collect();
            ts.sort_unstable_by(f64::total_cmp);
            out.push(cramer_von_mises(&ts));
        }
        out
    });
    Ok(shards.into_iter().flatten().collect())
}

pub fn write_statistics_csv<W: Write>(values: &[f64], mut out: W) -> io::Result<()> {
    writeln!(out, "rep,omega2")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{},{v:e}", i + 1)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub reps: usize,
    pub mean: f64,
    pub std_error: f64,
    /// `(level, empirical quantile)`.
    pub quantiles: Vec<(f64, f64)>,
}

pub fn summarize(values: &[f64], levels: &[f64]) -> Result<SimulationSummary> {
    if values.is_empty() {
        return arg("no statistics to summarize");
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let quantiles = levels
        .iter()
        .map(|&p| (p, empirical_quantile(&sorted, p)))
        .collect();
    Ok(SimulationSummary {
        reps: values.len(),
        mean,
        std_error: (var / n).sqrt(),
        quantiles,
    })
}

/// Lower empirical quantile `x₍⌈np⌉₎` of sorted data.
pub fn empirical_quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let k = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[k - 1]
}

/// Fraction of values strictly below `x`.
pub fn empirical_cdf(values: &[f64], x: f64) -> f64 {
    values.iter().filter(|&&v| v < x).count() as f64 / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psi_reference_points() {
        let nl = FamilySpec::from_tag("normal-location").unwrap();
        assert!((nl.psi(0.5)[0] + 0.398_942_280_401_432_7).abs() < 1e-15);
        let ex = FamilySpec::from_tag("exponential_rate").unwrap();
        let t = 1.0 - (-1.0f64).exp();
        assert!((ex.psi(t)[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!(FamilySpec::from_tag("weibull").unwrap_err().is_argument());
    }

    #[test]
    fn psi_vanishes_at_endpoints() {
        for tag in [
            "normal_location",
            "normal_location_scale",
            "exponential_rate",
        ] {
            let f = FamilySpec::from_tag(tag).unwrap();
            for t in [1e-12, 1.0 - 1e-12] {
                let p = f.psi(t);
                assert!(p[0].abs() < 1e-9 && p[1].abs() < 1e-9, "{tag} at {t}");
            }
        }
    }

    #[test]
    fn cvm_of_perfect_fit() {
        let n = 10;
        let ts: Vec<f64> = (0..n)
            .map(|i| (2.0 * i as f64 + 1.0) / (2.0 * n as f64))
            .collect();
        assert!((cramer_von_mises(&ts) - 1.0 / 120.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters() {
        let bad = FamilySpec::ExponentialRate { rate: -1.0 };
        assert!(bad.validate().is_err());
        let f = FamilySpec::from_tag("normal_location").unwrap();
        assert!(simulate_omega2(&f, 1, 10, 0).is_err());
    }
}

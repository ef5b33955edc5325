//! Distribution of `Σ μ_k ξ_k²` with independent standard normal `ξ_k`.
//!
//! Three backends: characteristic-function inversion for the bulk, a
//! Lugannani–Rice saddlepoint for the deep left tail (log scale), and sharded
//! Monte Carlo. Only the head `μ₁…μ_N` enters the computation; the tail
//! `Σ_{k>N} μ_k ≤ T` is accounted for by reporting `F(r) − F(r − T)` as part
//! of the error bound.

use crate::error::{arg, Result, SmallBallError};
use crate::montecarlo::{run_sharded, std_normal};
use crate::quad::{integrate, QuadOptions};
use crate::special::{ln_sqrt_2pi, mills_ratio, norm_cdf, norm_pdf};
use crate::spectral::Spectrum;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::fmt;
use std::io::{self, Write};

/// Leading weights of a quadratic form plus a bound on the rest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSeq {
    head: Vec<f64>,
    tail_sum_bound: f64,
    label: String,
}

impl WeightSeq {
    pub fn new(head: Vec<f64>, tail_sum_bound: f64, label: impl Into<String>) -> Result<Self> {
        if head.is_empty() {
            return arg("weight sequence is empty");
        }
        if let Some(bad) = head.iter().find(|&&m| !(m > 0.0 && m.is_finite())) {
            return arg(format!("weights must be positive and finite, found {bad}"));
        }
        if head.windows(2).any(|p| p[1] > p[0]) {
            return arg("weights must be non-increasing");
        }
        if !(tail_sum_bound >= 0.0 && tail_sum_bound.is_finite()) {
            return arg(format!(
                "tail_sum_bound must be non-negative, got {tail_sum_bound}"
            ));
        }
        Ok(Self {
            head,
            tail_sum_bound,
            label: label.into(),
        })
    }

    /// `μ_k = f(k)` for `k = 1..=n`.
    pub fn from_fn(
        n: usize,
        f: impl Fn(usize) -> f64,
        tail_sum_bound: f64,
        label: impl Into<String>,
    ) -> Result<Self> {
        Self::new((1..=n).map(f).collect(), tail_sum_bound, label)
    }

    pub fn from_spectrum(spectrum: &Spectrum, label: impl Into<String>) -> Result<Self> {
        Self::new(
            spectrum.eigenvalues.clone(),
            spectrum.tail_sum_bound(),
            label,
        )
    }

    /// Parse one weight per line. Blank lines are skipped, `#` starts a
    /// comment, `# tail_sum_bound=<v>` sets the tail bound. Lines of the form
    /// `k,mu_k` (spectrum exports) use their last field, and a non-numeric
    /// first line is taken as a header.
    pub fn parse_csv(text: &str, label: impl Into<String>) -> Result<Self> {
        let mut head = Vec::new();
        let mut tail = 0.0;
        let mut seen_data = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                if let Some((key, val)) = comment.split_once('=') {
                    if key.trim() == "tail_sum_bound" {
                        tail = val.trim().parse().map_err(|_| {
                            SmallBallError::Data(format!(
                                "bad tail_sum_bound value '{}'",
                                val.trim()
                            ))
                        })?;
                    }
                }
                continue;
            }
            let field = line.rsplit(',').next().unwrap_or(line).trim();
            match field.parse::<f64>() {
                Ok(v) => {
                    head.push(v);
                    seen_data = true;
                }
                Err(_) if !seen_data && head.is_empty() => seen_data = true,
                Err(_) => {
                    return Err(SmallBallError::Data(format!(
                        "line {}: cannot parse weight '{field}'",
                        lineno + 1
                    )))
                }
            }
        }
        Self::new(head, tail, label)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# tail_sum_bound={:e}", self.tail_sum_bound)?;
        for m in &self.head {
            writeln!(out, "{m:e}")?;
        }
        Ok(())
    }

    pub fn head(&self) -> &[f64] {
        &self.head
    }

    pub fn tail_sum_bound(&self) -> f64 {
        self.tail_sum_bound
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.head.len()
    }

    pub fn is_empty(&self) -> bool {
        self.head.is_empty()
    }

    /// `Σ μ_k` over the head.
    pub fn head_sum(&self) -> f64 {
        self.head.iter().sum()
    }

    /// The first `n` weights; the dropped ones move into the tail bound.
    pub fn truncate(&self, n: usize) -> Self {
        let n = n.clamp(1, self.head.len());
        let dropped: f64 = self.head[n..].iter().sum();
        Self {
            head: self.head[..n].to_vec(),
            tail_sum_bound: self.tail_sum_bound + dropped,
            label: self.label.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[serde(alias = "gilpelaez")]
    GilPelaez,
    #[serde(alias = "saddle")]
    Saddlepoint,
    #[serde(alias = "mc")]
    MonteCarlo,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::GilPelaez => "gil_pelaez",
            Method::Saddlepoint => "saddlepoint",
            Method::MonteCarlo => "monte_carlo",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbabilityEstimate {
    pub value: f64,
    pub log_value: f64,
    pub error_bound: f64,
    pub method: Method,
}

impl ProbabilityEstimate {
    fn from_value(value: f64, error_bound: f64, method: Method) -> Self {
        let value = value.clamp(0.0, 1.0);
        Self {
            value,
            log_value: value.ln(),
            error_bound,
            method,
        }
    }

    fn from_log(log_value: f64, error_bound: f64, method: Method) -> Self {
        let log_value = log_value.min(0.0);
        Self {
            value: log_value.exp(),
            log_value,
            error_bound,
            method,
        }
    }
}

// ---------------------------------------------------------------------------
// Characteristic-function inversion

/// Absolute target for the inversion integral (before division by π).
const GP_TOL: f64 = 1e-11;
const GP_MAX_SEGMENTS: usize = 600;
const WYNN_WINDOW: usize = 16;
const WYNN_MIN: usize = 24;

/// `P{Σ μ_k ξ_k² < r}` over the head by Gil-Pelaez inversion in Imhof's form
///
/// ```text
/// F(r) = 1/2 − (1/π) ∫₀^∞ sin θ(u) / (u ρ(u)) du,
/// θ(u) = ½ Σ atan(μ_k u) − ½ r u,   ρ(u) = Π (1 + μ_k² u²)^{1/4}.
/// ```
///
/// The integral is taken over half periods `2π/r` of the oscillation. It
/// stops once an analytic tail bound is met, falling back on Wynn's epsilon
/// algorithm over the half-period partial sums.
pub fn cdf_gil_pelaez(w: &WeightSeq, r: f64) -> Result<ProbabilityEstimate> {
    check_r(r)?;
    let (value, err) = gil_pelaez_head(w.head(), r)?;
    let shift = tail_shift(w, r, value, |x| Ok(gil_pelaez_head(w.head(), x)?.0))?;
    Ok(ProbabilityEstimate::from_value(
        value,
        err + shift,
        Method::GilPelaez,
    ))
}

fn check_r(r: f64) -> Result<()> {
    if !(r > 0.0 && r.is_finite()) {
        return arg(format!("threshold r must be positive, got {r}"));
    }
    Ok(())
}

/// `F(r) − F(r − T)` for the tail bound `T`.
fn tail_shift(w: &WeightSeq, r: f64, at_r: f64, cdf: impl Fn(f64) -> Result<f64>) -> Result<f64> {
    let t = w.tail_sum_bound();
    if t == 0.0 {
        return Ok(0.0);
    }
    if r - t <= 0.0 {
        return Ok(at_r);
    }
    Ok((at_r - cdf(r - t)?).max(0.0))
}

fn gil_pelaez_head(mu: &[f64], x: f64) -> Result<(f64, f64)> {
    let sum_mu: f64 = mu.iter().sum();
    let integrand = |u: f64| -> f64 {
        if u == 0.0 {
            return 0.5 * (sum_mu - x);
        }
        let mut theta = 0.0;
        let mut log_rho = 0.0;
        for &m in mu {
            let mu_u = m * u;
            theta += mu_u.atan();
            log_rho += (mu_u * mu_u).ln_1p();
        }
        let theta = 0.5 * theta - 0.5 * x * u;
        theta.sin() * (-0.25 * log_rho).exp() / u
    };

    // log of Σ_{j≤k} ln μ_j for the tail bound
    let kmax = mu.len().min(64);
    let mut cum_log_mu = Vec::with_capacity(kmax);
    let mut acc = 0.0;
    for &m in &mu[..kmax] {
        acc += m.ln();
        cum_log_mu.push(acc);
    }
    // ∫_U^∞ du / (u ρ(u)) ≤ min_k 2 / (k U^{k/2} Π_{j≤k} μ_j^{1/2})
    let tail_bound = |u: f64| -> f64 {
        let lu = u.ln();
        cum_log_mu
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let k = (i + 1) as f64;
                (2.0f64.ln() - k.ln() - 0.5 * k * lu - 0.5 * c).exp()
            })
            .fold(f64::INFINITY, f64::min)
    };

    let half_period = 2.0 * PI / x;
    let mut len = half_period.min(1.0 / mu[0]);
    let opts = QuadOptions::tol(1e-14, 1e-12);
    let mut a = 0.0;
    let mut total = 0.0;
    let mut quad_err = 0.0;
    let mut periodic: Vec<f64> = Vec::new();
    for _ in 0..GP_MAX_SEGMENTS {
        let b = a + len;
        let piece = integrate(integrand, a, b, opts)?;
        total += piece.value;
        quad_err += piece.error;
        a = b;
        let bound = tail_bound(a);
        if bound < GP_TOL {
            return Ok((0.5 - total / PI, (quad_err + bound) / PI));
        }
        if len >= half_period {
            periodic.push(total);
            if periodic.len() >= WYNN_MIN {
                let window = &periodic[periodic.len() - WYNN_WINDOW..];
                if let Some((est, delta)) = wynn_epsilon(window) {
                    if delta < GP_TOL {
                        return Ok((0.5 - est / PI, (quad_err + delta) / PI));
                    }
                }
            }
        } else {
            len = (2.0 * len).min(half_period);
        }
    }
    Err(SmallBallError::Numeric(format!(
        "characteristic-function inversion did not converge at r = {x:e} \
         (N = {}, integrated to u = {a:e}, partial value {:e})",
        mu.len(),
        0.5 - total / PI
    )))
}

/// Wynn's epsilon table over partial sums. Returns the deepest even-column
/// estimate and its distance to the previous one.
fn wynn_epsilon(partials: &[f64]) -> Option<(f64, f64)> {
    let mut prev = vec![0.0; partials.len() + 1];
    let mut cur = partials.to_vec();
    let mut estimates = vec![*partials.last()?];
    let mut column = 0;
    while cur.len() > 1 {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for i in 0..cur.len() - 1 {
            let d = cur[i + 1] - cur[i];
            if d == 0.0 || !d.is_finite() {
                break;
            }
            next.push(prev[i + 1] + 1.0 / d);
        }
        if next.len() != cur.len() - 1 {
            break;
        }
        prev = cur;
        cur = next;
        column += 1;
        if column % 2 == 0 {
            estimates.push(*cur.last()?);
        }
    }
    let n = estimates.len();
    if n < 2 {
        return None;
    }
    Some((
        estimates[n - 1],
        (estimates[n - 1] - estimates[n - 2]).abs(),
    ))
}

// ---------------------------------------------------------------------------
// Saddlepoint

struct Cgf<'a> {
    mu: &'a [f64],
}

impl Cgf<'_> {
    fn k0(&self, s: f64) -> f64 {
        -0.5 * self.mu.iter().map(|&m| (-2.0 * s * m).ln_1p()).sum::<f64>()
    }

    fn k1(&self, s: f64) -> f64 {
        self.mu.iter().map(|&m| m / (1.0 - 2.0 * s * m)).sum()
    }

    fn k2(&self, s: f64) -> f64 {
        self.mu
            .iter()
            .map(|&m| {
                let d = 1.0 - 2.0 * s * m;
                2.0 * m * m / (d * d)
            })
            .sum()
    }

    /// Root of `K'(s) = r`, safeguarded Newton inside a bracket.
    fn saddle(&self, r: f64) -> Result<f64> {
        let mean: f64 = self.mu.iter().sum();
        let n = self.mu.len() as f64;
        let (mut lo, mut hi) = if r < mean {
            (-n / (2.0 * r), 0.0)
        } else {
            (0.0, (1.0 - self.mu[0] / r) / (2.0 * self.mu[0]))
        };
        // start at the end where K' is above r so Newton on the convex K'
        // approaches monotonically
        let mut s = hi;
        for _ in 0..2000 {
            let f = self.k1(s) - r;
            if !f.is_finite() {
                break;
            }
            if f.abs() <= 1e-14 * r {
                return Ok(s);
            }
            if f > 0.0 {
                hi = s;
            } else {
                lo = s;
            }
            let newton = s - f / self.k2(s);
            s = if newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 4.0 * f64::EPSILON * s.abs() {
                return Ok(s);
            }
        }
        Err(SmallBallError::Numeric(format!(
            "saddlepoint equation K'(s) = {r:e} not solved in [{lo:e}, {hi:e}]"
        )))
    }
}

/// Lugannani–Rice approximation of `P{Σ μ_k ξ_k² < r}` from the exact
/// cumulant generating function `K(s) = −½ Σ ln(1 − 2sμ_k)`, evaluated in log
/// space so that probabilities far below the double range stay usable.
///
/// The error bound holds only the tail-shift contribution; the relative
/// error of the approximation itself is `O(1/N_eff)` and not bounded.
pub fn cdf_saddlepoint(w: &WeightSeq, r: f64) -> Result<ProbabilityEstimate> {
    check_r(r)?;
    let log_value = saddlepoint_log(w.head(), r)?;
    let value = log_value.exp();
    let shift = tail_shift(w, r, value, |x| Ok(saddlepoint_log(w.head(), x)?.exp()))?;
    Ok(ProbabilityEstimate::from_log(
        log_value,
        shift,
        Method::Saddlepoint,
    ))
}

fn saddlepoint_log(mu: &[f64], r: f64) -> Result<f64> {
    let cgf = Cgf { mu };
    let s = cgf.saddle(r)?;
    let legendre = (s * r - cgf.k0(s)).max(0.0);
    let w = s.signum() * (2.0 * legendre).sqrt();
    if w.abs() < 1e-3 {
        // at the mean: F ≈ ½ + κ₃ / (6 √(2π) κ₂^{3/2})
        let k2: f64 = mu.iter().map(|m| 2.0 * m * m).sum();
        let k3: f64 = mu.iter().map(|m| 8.0 * m * m * m).sum();
        return Ok((0.5 + k3 / (6.0 * (2.0 * PI).sqrt() * k2.powf(1.5))).ln());
    }
    let v = s * cgf.k2(s).sqrt();
    if w < 0.0 {
        let bracket = mills_ratio(-w) + 1.0 / w - 1.0 / v;
        if !(bracket > 0.0) {
            return Err(SmallBallError::Numeric(format!(
                "saddlepoint correction non-positive at r = {r:e} (w = {w}, v = {v})"
            )));
        }
        Ok(-0.5 * w * w - ln_sqrt_2pi() + bracket.ln())
    } else {
        let f = norm_cdf(w) + norm_pdf(w) * (1.0 / w - 1.0 / v);
        Ok(f.clamp(f64::MIN_POSITIVE, 1.0).ln())
    }
}

// ---------------------------------------------------------------------------
// Monte Carlo

/// Fraction of `n_samples` draws of `Σ_{k≤N} μ_k ξ_k²` below `r`, sharded as
/// described in [`crate::montecarlo`]. `error_bound` is three binomial
/// standard errors.
pub fn cdf_monte_carlo(
    w: &WeightSeq,
    r: f64,
    n_samples: usize,
    seed: u64,
) -> Result<ProbabilityEstimate> {
    check_r(r)?;
    if n_samples == 0 {
        return arg("n_samples must be at least 1");
    }
    let mu = w.head();
    let hits: usize = run_sharded(seed, n_samples, |_, count, rng| {
        let mut hits = 0usize;
        for _ in 0..count {
            let mut acc = 0.0;
            let mut inside = true;
            for &m in mu {
                let z = std_normal(rng);
                acc += m * z * z;
                if acc >= r {
                    inside = false;
                    break;
                }
            }
            hits += usize::from(inside);
        }
        hits
    })
    .into_iter()
    .sum();
    let p = hits as f64 / n_samples as f64;
    let se = (p * (1.0 - p) / n_samples as f64).sqrt();
    Ok(ProbabilityEstimate::from_value(
        p,
        3.0 * se,
        Method::MonteCarlo,
    ))
}

// ---------------------------------------------------------------------------
// Distortion constant

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Distortion {
    /// `(Π_{k≤N} μ̃_k/μ_k)^{1/2}`.
    pub value: f64,
    pub log_product: f64,
    /// `|log-product(N) − log-product(N/2)|`.
    pub diagnostic: f64,
    pub n_terms: usize,
}

/// Comparison constant between two weight sequences paired by index over
/// their common length. Fails when the N-vs-N/2 diagnostic exceeds `tol`,
/// which is how an infinite product shows up.
pub fn distortion_constant(w_num: &WeightSeq, w_den: &WeightSeq, tol: f64) -> Result<Distortion> {
    let n = w_num.len().min(w_den.len());
    if n < 2 {
        return arg("distortion constant needs at least two paired weights");
    }
    let logs: Vec<f64> = w_num.head()[..n]
        .iter()
        .zip(&w_den.head()[..n])
        .map(|(a, b)| (a / b).ln())
        .collect();
    let full: f64 = logs.iter().sum();
    let half: f64 = logs[..n / 2].iter().sum();
    let diagnostic = (full - half).abs();
    if !(diagnostic <= tol) {
        return Err(SmallBallError::Numeric(format!(
            "log-product of weight ratios does not settle: change {diagnostic:e} between N = {} and N = {n}",
            n / 2
        )));
    }
    Ok(Distortion {
        value: (0.5 * full).exp(),
        log_product: full,
        diagnostic,
        n_terms: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(m: &[f64]) -> WeightSeq {
        WeightSeq::new(m.to_vec(), 0.0, "t").unwrap()
    }

    #[test]
    fn chi_square_references() {
        let p1 = cdf_gil_pelaez(&single(&[1.0]), 1.0).unwrap();
        assert!((p1.value - 0.682_689_492_137_085_9).abs() < 1e-10, "{p1:?}");
        let p2 = cdf_gil_pelaez(&single(&[1.0, 1.0]), 2.0).unwrap();
        assert!((p2.value - (1.0 - (-1.0f64).exp())).abs() < 1e-10, "{p2:?}");
    }

    #[test]
    fn wynn_accelerates_alternating_series() {
        // ln 2 = 1 − 1/2 + 1/3 − …
        let mut s = 0.0;
        let partials: Vec<f64> = (1..=16)
            .map(|k| {
                s += if k % 2 == 1 { 1.0 } else { -1.0 } / k as f64;
                s
            })
            .collect();
        let (est, _) = wynn_epsilon(&partials).unwrap();
        assert!((est - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn csv_round_trip() {
        let text = "# tail_sum_bound=0.5\n1.0\n\n0.25\n";
        let w = WeightSeq::parse_csv(text, "x").unwrap();
        assert_eq!(w.head(), &[1.0, 0.25]);
        assert_eq!(w.tail_sum_bound(), 0.5);
        let mut buf = Vec::new();
        w.write_csv(&mut buf).unwrap();
        let back = WeightSeq::parse_csv(std::str::from_utf8(&buf).unwrap(), "x").unwrap();
        assert_eq!(back, w);
        let spec = WeightSeq::parse_csv("k,mu_k\n1,2e-1\n2,1e-1\n", "s").unwrap();
        assert_eq!(spec.head(), &[0.2, 0.1]);
        assert!(WeightSeq::parse_csv("1\nabc\n", "bad").is_err());
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(WeightSeq::new(vec![], 0.0, "").is_err());
        assert!(WeightSeq::new(vec![0.1, 0.2], 0.0, "").is_err());
        assert!(WeightSeq::new(vec![0.1, 0.0], 0.0, "").is_err());
        assert!(WeightSeq::new(vec![0.1], -1.0, "").is_err());
    }

    #[test]
    fn truncate_moves_mass_to_tail() {
        let w = WeightSeq::new(vec![0.5, 0.25, 0.125], 0.1, "").unwrap();
        let t = w.truncate(1);
        assert_eq!(t.head(), &[0.5]);
        assert!((t.tail_sum_bound() - 0.475).abs() < 1e-15);
    }
}

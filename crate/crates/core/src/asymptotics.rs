//! Closed-form small-ball asymptotics.
//!
//! Everything here returns logarithms: the probabilities of interest sit far
//! below the smallest positive double.

use crate::error::{arg, Result, SmallBallError};
use crate::quad::{integrate, QuadOptions};
use crate::special::ln_gamma;
use serde::Serialize;
use std::f64::consts::PI;

/// `F(x) ~ 𝒜 x^α exp(−𝒟 x^{−β})` as `x → 0⁺`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticForm {
    pub amplitude: f64,
    pub power: f64,
    pub rate: f64,
    pub order: f64,
}

impl AsymptoticForm {
    pub fn new(amplitude: f64, power: f64, rate: f64, order: f64) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return arg(format!("amplitude must be positive, got {amplitude}"));
        }
        if !power.is_finite() {
            return arg("power must be finite");
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return arg(format!("rate must be positive, got {rate}"));
        }
        if !(order > 0.0 && order.is_finite()) {
            return arg(format!("order must be positive, got {order}"));
        }
        Ok(Self {
            amplitude,
            power,
            rate,
            order,
        })
    }

    pub fn log_eval(&self, x: f64) -> f64 {
        self.amplitude.ln() + self.power * x.ln() - self.rate * x.powf(-self.order)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.log_eval(x).exp()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            amplitude: self.amplitude * factor,
            ..*self
        }
    }
}

/// `m`-th derivative of the form: `(𝒜(𝒟β)^m, α − m(β+1), β, 𝒟)`.
pub fn differentiate_form(form: &AsymptoticForm, m: u32) -> AsymptoticForm {
    let k = f64::from(m);
    AsymptoticForm {
        amplitude: form.amplitude * (form.rate * form.order).powi(m as i32),
        power: form.power - k * (form.order + 1.0),
        ..*form
    }
}

/// Asymptotics of `∫₀^r F(x) (r − x)^{−1/2} dx` for `F` of the given form:
/// amplitude times `√(π/(𝒟β))`, power raised by `(β+1)/2`.
pub fn abel_reduce(form: &AsymptoticForm) -> AsymptoticForm {
    AsymptoticForm {
        amplitude: form.amplitude * (PI / (form.rate * form.order)).sqrt(),
        power: form.power + 0.5 * (form.order + 1.0),
        ..*form
    }
}

/// `∫₀^r f(x) (r − x)^{−1/2} dx`, computed as `2√r ∫₀¹ f(r(1 − v²)) dv`,
/// which removes the endpoint singularity.
pub fn abel_convolve<F: FnMut(f64) -> f64>(mut f: F, r: f64, opts: QuadOptions) -> Result<f64> {
    if !(r > 0.0) {
        return arg(format!("Abel convolution needs r > 0, got {r}"));
    }
    let inner = integrate(|v| f(r * (1.0 - v * v)), 0.0, 1.0, opts)?;
    Ok(2.0 * r.sqrt() * inner.value)
}

// ---------------------------------------------------------------------------
// Nazarov–Nikitin constants

/// Constants of `P{Σ Λ_k ξ_k² ≤ ε²} ~ C ε^γ exp(−coef · ε^{−2/(d−1)})` for
/// `Λ_k = (ϑ(k+δ))^{−d}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NazNikParams {
    pub gamma: f64,
    pub c: f64,
    pub log_c: f64,
    pub coef: f64,
    pub d: f64,
}

impl NazNikParams {
    /// The same asymptotics in the variable `r = ε²`.
    pub fn form_in_r(&self) -> AsymptoticForm {
        AsymptoticForm {
            amplitude: self.c,
            power: 0.5 * self.gamma,
            rate: self.coef,
            order: 1.0 / (self.d - 1.0),
        }
    }
}

/// Literal within this distance of π is read as π.
pub const PI_SNAP_TOL: f64 = 1e-9;

/// Replaces a typed-in approximation of π by the exact constant.
pub fn snap_pi(x: f64) -> f64 {
    if (x - PI).abs() <= PI_SNAP_TOL {
        PI
    } else {
        x
    }
}

pub fn naznik_params(theta: f64, delta: f64, d: f64) -> Result<NazNikParams> {
    let theta = snap_pi(theta);
    if !(theta > 0.0 && theta.is_finite()) {
        return arg(format!("theta must be positive, got {theta}"));
    }
    if !(delta > -1.0 && delta.is_finite()) {
        return arg(format!("delta must exceed -1, got {delta}"));
    }
    if !(d > 1.0 && d.is_finite()) {
        return arg(format!("d must exceed 1, got {d}"));
    }
    let gamma = (2.0 - d - 2.0 * d * delta) / (2.0 * (d - 1.0));
    let s = (PI / d).sin();
    let log_c =
        0.25 * d * (2.0 * PI).ln() + 0.5 * d * gamma * theta.ln() + 0.5 * (1.0 + gamma) * s.ln()
            - 0.5 * (d - 1.0).ln()
            - (1.0 + 0.5 * gamma) * (PI / d).ln()
            - 0.5 * d * ln_gamma(1.0 + delta);
    let coef = 0.5 * (d - 1.0) * (PI / (d * theta * s)).powf(d / (d - 1.0));
    Ok(NazNikParams {
        gamma,
        c: log_c.exp(),
        log_c,
        coef,
        d,
    })
}

/// `ln C + γ ln ε − coef·ε^{−2/(d−1)}`.
pub fn naznik_asymptotic(theta: f64, delta: f64, d: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps.is_finite()) {
        return arg(format!("eps must be positive, got {eps}"));
    }
    let p = naznik_params(theta, delta, d)?;
    Ok(p.log_c + p.gamma * eps.ln() - p.coef * eps.powf(-2.0 / (d - 1.0)))
}

// ---------------------------------------------------------------------------
// DLL asymptotics

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DllSpec {
    /// `φ(t) = (ϑ(t + δ))^{−d}`.
    PowerLaw { theta: f64, delta: f64, d: f64 },
}

impl DllSpec {
    pub fn power_law(theta: f64, delta: f64, d: f64) -> Result<Self> {
        let spec = DllSpec::PowerLaw {
            theta: snap_pi(theta),
            delta,
            d,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Parameter domain plus a spot check of positivity and log-convexity.
    pub fn validate(&self) -> Result<()> {
        let DllSpec::PowerLaw { theta, delta, d } = *self;
        naznik_params(theta, delta, d)?;
        for i in 0..64 {
            let t = 1.0 + f64::from(i) * f64::from(i);
            let (v, d1, d2) = self.phi_derivs(t);
            if !(v > 0.0 && v.is_finite()) {
                return arg(format!("phi({t}) = {v} is not positive"));
            }
            // (ln φ)'' = φ''/φ − (φ'/φ)²
            if d2 / v - (d1 / v).powi(2) < -1e-12 * (d1 / v).powi(2) {
                return arg(format!("phi is not log-convex at t = {t}"));
            }
        }
        Ok(())
    }

    pub fn phi(&self, t: f64) -> f64 {
        let DllSpec::PowerLaw { theta, delta, d } = *self;
        (theta * (t + delta)).powf(-d)
    }

    /// `(φ, φ', φ'')` at `t`.
    pub fn phi_derivs(&self, t: f64) -> (f64, f64, f64) {
        let DllSpec::PowerLaw { delta, d, .. } = *self;
        let v = self.phi(t);
        let x = t + delta;
        (v, -d * v / x, d * (d + 1.0) * v / (x * x))
    }

    /// `∫₁^∞ φ`, the supremum of thresholds with a root.
    pub fn integral(&self) -> f64 {
        let DllSpec::PowerLaw { theta, delta, d } = *self;
        theta.powf(-d) * (1.0 + delta).powf(1.0 - d) / (d - 1.0)
    }

    /// Where `uφ(t) = 1`, the knee of the DLL integrands.
    fn knee(&self, u: f64) -> f64 {
        let DllSpec::PowerLaw { theta, delta, d } = *self;
        (u.powf(1.0 / d) / theta - delta).max(1.0)
    }

    /// `ln C` in the DLL formula: `−½ ln 2π` plus the Euler–Maclaurin limit
    /// of `Σ_{k≥1} g(k) − ∫₁^∞ g − g(1)/2` for `g = ln f(uφ)`, `u → ∞`.
    pub fn log_constant(&self) -> f64 {
        let DllSpec::PowerLaw { delta, d, .. } = *self;
        let remainder = 0.5
            * d
            * (0.5 * (2.0 * PI).ln() - ln_gamma(1.0 + delta) + (0.5 + delta) * (1.0 + delta).ln()
                - (1.0 + delta));
        -0.5 * (2.0 * PI).ln() + remainder
    }
}

/// `ln f(x)` for `f(x) = (1 + 2x)^{−1/2}`.
fn ln_f(x: f64) -> f64 {
    -0.5 * (2.0 * x).ln_1p()
}

fn dll_opts() -> QuadOptions {
    QuadOptions {
        abs_tol: 0.0,
        rel_tol: 1e-12,
        max_intervals: 20_000,
    }
}

/// `∫₁^∞ g(t) dt`, split at the knee `K`. Beyond it `t = K y^{−q}` with
/// `q = 2/(d−1)` turns the `t^{−d}` decay into a smooth `O(y)` integrand.
fn tail_integral(spec: &DllSpec, u: f64, g: impl Fn(f64) -> f64) -> Result<f64> {
    let DllSpec::PowerLaw { d, .. } = *spec;
    let knee = spec.knee(u);
    let q = 2.0 / (d - 1.0);
    let head = integrate(&g, 1.0, knee, dll_opts())?;
    let tail = integrate(
        |y: f64| {
            if y == 0.0 {
                return 0.0;
            }
            let t = knee * y.powf(-q);
            g(t) * q * t / y
        },
        0.0,
        1.0,
        dll_opts(),
    )?;
    Ok(head.value + tail.value)
}

/// `I₀(u) = ∫₁^∞ ln f(uφ)`.
pub fn dll_i0(spec: &DllSpec, u: f64) -> Result<f64> {
    tail_integral(spec, u, |t| ln_f(u * spec.phi(t)))
}

/// `I₁(u) = ∫₁^∞ uφ·(ln f)'(uφ) = −∫₁^∞ uφ/(1 + 2uφ)`.
pub fn dll_i1(spec: &DllSpec, u: f64) -> Result<f64> {
    tail_integral(spec, u, |t| {
        let x = u * spec.phi(t);
        -x / (1.0 + 2.0 * x)
    })
}

/// `I₂(u) = ∫₁^∞ (uφ)²(ln f)''(uφ) = ∫₁^∞ 2(uφ)²/(1 + 2uφ)²`.
pub fn dll_i2(spec: &DllSpec, u: f64) -> Result<f64> {
    tail_integral(spec, u, |t| {
        let x = u * spec.phi(t);
        2.0 * x * x / ((1.0 + 2.0 * x) * (1.0 + 2.0 * x))
    })
}

/// Root `u` of `I₁(u) + ur = 0`.
///
/// `h(u) = I₁(u)/u + r = r − ∫₁^∞ φ/(1 + 2uφ)` increases from
/// `r − ∫₁^∞ φ` to `r`, so the root exists iff `r < ∫₁^∞ φ`. It is located
/// by bracketing and bisection in `ln u`.
pub fn dll_root(spec: &DllSpec, r: f64) -> Result<f64> {
    spec.validate()?;
    if !(r > 0.0 && r.is_finite()) {
        return arg(format!("r must be positive, got {r}"));
    }
    let total = spec.integral();
    if r >= total {
        return Err(SmallBallError::Domain(format!(
            "no DLL root: r = {r} is not below the weight sum {total}"
        )));
    }
    let h = |lu: f64| -> Result<f64> {
        let u = lu.exp();
        let g = tail_integral(spec, u, |t| {
            let p = spec.phi(t);
            p / (1.0 + 2.0 * u * p)
        })?;
        Ok(r - g)
    };
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    let mut h_lo = h(lo)?;
    let mut h_hi = h_lo;
    let mut steps = 0;
    while h_lo > 0.0 {
        lo -= 4.0;
        h_lo = h(lo)?;
        steps += 1;
        if steps > 200 {
            return Err(SmallBallError::Numeric(
                "DLL root bracket (below) not found".into(),
            ));
        }
    }
    while h_hi < 0.0 {
        hi += 4.0;
        h_hi = h(hi)?;
        steps += 1;
        if steps > 400 {
            return Err(SmallBallError::Numeric(
                "DLL root bracket (above) not found".into(),
            ));
        }
    }
    // regula falsi (Illinois) on ln u
    let mut side = 0i8;
    for _ in 0..300 {
        let mid = (lo * h_hi - hi * h_lo) / (h_hi - h_lo);
        let mid = if mid > lo && mid < hi {
            mid
        } else {
            0.5 * (lo + hi)
        };
        let hm = h(mid)?;
        if hm.abs() <= 1e-12 * r || hi - lo < 1e-15 * mid.abs().max(1.0) {
            return Ok(mid.exp());
        }
        if hm < 0.0 {
            lo = mid;
            h_lo = hm;
            if side == -1 {
                h_hi *= 0.5;
            }
            side = -1;
        } else {
            hi = mid;
            h_hi = hm;
            if side == 1 {
                h_lo *= 0.5;
            }
            side = 1;
        }
    }
    Err(SmallBallError::Numeric(format!(
        "DLL root for r = {r} did not converge"
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DllEstimate {
    pub log_p: f64,
    pub u: f64,
    pub i0: f64,
    pub i1: f64,
    pub i2: f64,
    pub log_c: f64,
    /// `I₀(u) + ur`, the exponential part.
    pub exponent: f64,
}

/// `ln [C √(f(uφ(1))/I₂(u)) exp(I₀(u) + ur)]` at the root `u(r)`.
pub fn dll_asymptotic(spec: &DllSpec, r: f64) -> Result<DllEstimate> {
    let u = dll_root(spec, r)?;
    let i0 = dll_i0(spec, u)?;
    let i1 = dll_i1(spec, u)?;
    let i2 = dll_i2(spec, u)?;
    let log_c = spec.log_constant();
    let exponent = i0 + u * r;
    let log_p = log_c + 0.5 * ln_f(u * spec.phi(1.0)) - 0.5 * i2.ln() + exponent;
    Ok(DllEstimate {
        log_p,
        u,
        i0,
        i1,
        i2,
        log_c,
        exponent,
    })
}

//! Closed-form analytics of the infinite-volume correlations.
//!
//! Every θ-integral runs over `[0, ½]^d` (the integrands are even in each
//! `θᵃ ↦ 1 − θᵃ`) with adaptive Gauss–Kronrod and carries an error estimate.
//! Time integrals are done analytically through
//! `∫₀ᵗ (1 − s/t) e^{−zs} ds = t·φ(zt)` with `φ(x) = (x − 1 + e^{−x})/x²`.

pub mod cubic;
pub mod quad;

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use cubic::{alternate_coeffs, AlternateCoeffs, THETA_FLOOR};
pub use quad::{Estimate, QuadOptions};
use quad::{integrate, integrate_cube, integrate_panels};

/// `[0, ¼]` split geometrically towards the origin.
const QUARTER_BREAKS: [f64; 8] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1, 0.25];

/// `|z|t` above which the decaying exponential of `tφ(zt)` is split off.
const SPLIT_ZT: f64 = 30.0;

pub fn omega2(theta: &[f64]) -> f64 {
    4.0 * theta.iter().map(|t| (PI * t).sin().powi(2)).sum::<f64>()
}

/// Magnetic dispersion branches `√(ω² + (B/2)²) ± B/2`.
pub fn dispersion(theta: &[f64], b: f64) -> (f64, f64) {
    let r = (omega2(theta) + 0.25 * b * b).sqrt();
    (r + 0.5 * b, r - 0.5 * b)
}

/// `sin²(2πθ¹)/ω²` with its finite continuation at the origin.
pub fn current_weight(theta: &[f64]) -> f64 {
    let c1 = (PI * theta[0]).cos().powi(2);
    if theta.len() == 1 {
        return c1;
    }
    let s: Vec<f64> = theta.iter().map(|t| (PI * t).sin().powi(2)).collect();
    let tot: f64 = s.iter().sum();
    if tot == 0.0 {
        0.0
    } else {
        s[0] * c1 / tot
    }
}

/// Uniform-charge spectral functions at a given `ω²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformCoeffs {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// `γω² − α₂ ≥ 0`, evaluated without cancellation.
    pub slow_rate: f64,
}

pub fn uniform_coeffs_w2(w2: f64, b: f64, gamma: f64) -> Result<UniformCoeffs> {
    let (b2, g2w4) = (b * b, (gamma * w2).powi(2));
    let x = b2 - g2w4 + 4.0 * w2;
    let prod = 4.0 * g2w4 * b2;
    let s = (x * x + prod).sqrt();
    if s == 0.0 {
        return Err(Error::Degenerate("alpha1^2 + alpha2^2 = 0 (B = 0 and omega = 0)".into()));
    }
    let (a1sq, a2sq) = if x >= 0.0 {
        (0.5 * (x + s), 0.5 * prod / (s + x))
    } else {
        (0.5 * prod / (s - x), 0.5 * (s - x))
    };
    let y1 = b2 + g2w4 - 4.0 * w2;
    let a1_minus_b2 = if y1 > 0.0 { 8.0 * b2 * w2 / (s + y1) } else { 0.5 * (s - y1) };
    let alpha1 = a1sq.sqrt();
    let alpha2 = a2sq.sqrt();
    let c = gamma * w2;
    // γ²ω⁴ − α₂² = 8γ²ω⁶/(P' + s), P' = B² + γ²ω⁴ + 4ω².
    let gap = 8.0 * gamma * gamma * w2.powi(3) / (b2 + g2w4 + 4.0 * w2 + s);
    let slow_rate = if c + alpha2 > 0.0 { gap / (c + alpha2) } else { 0.0 };
    Ok(UniformCoeffs {
        alpha1,
        alpha2,
        beta1: (a2sq + b2) / s,
        beta2: a1_minus_b2 / (2.0 * s),
        slow_rate,
    })
}

/// Per-wavenumber analytic data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralCoeffs {
    pub theta: Vec<f64>,
    pub omega2: f64,
    pub uniform: Option<UniformCoeffs>,
    pub alternate: Option<AlternateCoeffs>,
}

pub fn uniform_coeffs(theta: &[f64], b: f64, gamma: f64) -> Result<SpectralCoeffs> {
    let w2 = omega2(theta);
    Ok(SpectralCoeffs {
        theta: theta.to_vec(),
        omega2: w2,
        uniform: Some(uniform_coeffs_w2(w2, b, gamma)?),
        alternate: None,
    })
}

pub fn cubic_coeffs(theta: f64, b: f64, gamma: f64) -> Result<SpectralCoeffs> {
    Ok(SpectralCoeffs {
        theta: vec![theta],
        omega2: omega2(&[theta]),
        uniform: None,
        alternate: Some(alternate_coeffs(theta, b, gamma)?),
    })
}

/// `(P(λ), Q(λ))` of the uniform charge.
pub fn p_and_q(lambda: f64, w2: f64, b: f64, gamma: f64) -> (f64, f64) {
    let l = lambda + gamma * w2;
    let (g2w4, l2) = ((gamma * w2).powi(2), l * l);
    let p = l * (l2 - g2w4 + 4.0 * w2);
    let q = l2 * l2 + (b * b - g2w4 + 4.0 * w2) * l2 - g2w4 * b * b;
    (p, q)
}

/// `P(λ)/Q(λ)` of the uniform charge.
pub fn p_over_q(lambda: f64, w2: f64, b: f64, gamma: f64) -> f64 {
    let (p, q) = p_and_q(lambda, w2, b, gamma);
    p / q
}

/// `tφ(zt) = ∫₀ᵗ (1 − s/t) e^{−zs} ds`.
pub fn t_phi(z: Complex64, t: f64) -> Complex64 {
    let x = z * t;
    if x.norm() < 0.5 {
        let mut term = Complex64::new(0.5, 0.0);
        let mut sum = term;
        for k in 1..20 {
            term *= -x / (k as f64 + 2.0);
            sum += term;
        }
        sum * t
    } else {
        (x - 1.0 + (-x).exp()) / (x * x) * t
    }
}

fn t_phi_re(z: f64, t: f64) -> f64 {
    t_phi(Complex64::new(z, 0.0), t).re
}

/// Smooth part of `tφ(zt)` once `e^{−zt}/(z²t)` is removed.
fn t_phi_smooth(z: Complex64, t: f64) -> Complex64 {
    1.0 / z - 1.0 / (z * z * t)
}

/// Canonical dynamics variants: pure noise, uniform field, alternate charge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "0")]
    Zero,
    #[serde(rename = "i")]
    I,
    #[serde(rename = "ii")]
    II,
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "0" | "zero" => Ok(Variant::Zero),
            "i" => Ok(Variant::I),
            "ii" => Ok(Variant::II),
            _ => Err(Error::Parse(format!("unknown variant {s:?} (expected 0, i or ii)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum GkSetting {
    Micro { d: usize, dstar: usize },
    Canonical { variant: Variant },
}

fn check_d(d: usize) -> Result<()> {
    if (1..=3).contains(&d) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("d={d} not in 1..=3")))
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("gamma={gamma} must be positive")))
    }
}

/// `∫_{[0,1]^d} f` for integrands even in every coordinate about ½.
fn torus_integral<F: Fn(&[f64]) -> f64 + Sync>(d: usize, f: F, opts: &QuadOptions) -> Result<Estimate> {
    let scale = (1u32 << d) as f64;
    let inner = QuadOptions { abs_tol: opts.abs_tol / scale, ..*opts };
    Ok(integrate_cube(d, &f, &inner)?.scale(scale))
}

/// Laplace transform of the microcanonical current correlation.
pub fn laplace_micro(
    lambda: f64,
    d: usize,
    dstar: usize,
    b: f64,
    gamma: f64,
    e: f64,
    opts: &QuadOptions,
) -> Result<Estimate> {
    check_d(d)?;
    check_gamma(gamma)?;
    if !(lambda > 0.0) || dstar < 2 {
        return Err(Error::InvalidArgument("need lambda > 0 and dstar >= 2".into()));
    }
    let ds = dstar as f64;
    let f = |th: &[f64]| {
        let w2 = omega2(th);
        let w = current_weight(th);
        w * (2.0 * p_over_q(lambda, w2, b, gamma) + (ds - 2.0) / (lambda + gamma * w2))
    };
    Ok(torus_integral(d, f, opts)?.scale(e * e / (ds * ds)))
}

/// Largest `|dα₁/dθ¹|` along a 1-d grid, used to size oscillation panels.
fn max_alpha1_slope(b: f64, gamma: f64) -> f64 {
    let n = 4000;
    let a = |t: f64| uniform_coeffs_w2(omega2(&[t]), b, gamma).map(|u| u.alpha1).unwrap_or(0.0);
    let h = 0.5 / n as f64;
    (0..n).map(|k| ((a((k + 1) as f64 * h) - a(k as f64 * h)) / h).abs()).fold(0.0, f64::max)
}

/// `C₁..C₄` at time `t` (unit prefactors; see [`c_infinity`]).
pub fn c_components(t: f64, d: usize, b: f64, gamma: f64, opts: &QuadOptions) -> Result<[Estimate; 4]> {
    check_d(d)?;
    check_gamma(gamma)?;
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument("t must be >= 0".into()));
    }
    let coeff = move |th: &[f64]| -> Option<(f64, f64, UniformCoeffs)> {
        let w2 = omega2(th);
        uniform_coeffs_w2(w2, b, gamma).ok().map(|u| (w2, current_weight(th), u))
    };
    let c1_at = move |th: &[f64]| {
        coeff(th).map_or(0.0, |(w2, w, u)| w * u.beta1 * (-gamma * w2 * t).exp() * (u.alpha1 * t).cos())
    };
    let c1 = if d == 1 && b != 0.0 && t * max_alpha1_slope(b, gamma) > 50.0 {
        let slope = max_alpha1_slope(b, gamma);
        let width = PI / (4.0 * t * slope);
        let panels = ((0.5 / width).ceil() as usize).min(20_000_000);
        integrate_panels(|x| c1_at(&[x]), 0.0, 0.5, panels).scale(2.0)
    } else {
        let o = QuadOptions { max_intervals: opts.max_intervals.max(20_000), ..*opts };
        torus_integral(d, c1_at, &o)?
    };
    let c2 = torus_integral(
        d,
        |th| coeff(th).map_or(0.0, |(w2, w, u)| w * u.beta2 * (-(gamma * w2 + u.alpha2) * t).exp()),
        opts,
    )?;
    let c3 = torus_integral(d, |th| coeff(th).map_or(0.0, |(_, w, u)| w * u.beta2 * (-u.slow_rate * t).exp()), opts)?;
    let c4 = torus_integral(d, |th| current_weight(th) * (-gamma * omega2(th) * t).exp(), opts)?;
    Ok([c1, c2, c3, c4])
}

/// Microcanonical infinite-volume correlation `C_∞(t)`.
pub fn c_infinity(t: f64, d: usize, dstar: usize, b: f64, gamma: f64, e: f64, opts: &QuadOptions) -> Result<Estimate> {
    let c = c_components(t, d, b, gamma, opts)?;
    let ds = dstar as f64;
    let k = 2.0 / (ds * ds);
    Ok((c[0] + c[1] + c[2]).scale(k * e * e) + c[3].scale((ds - 2.0) / (ds * ds) * e * e))
}

/// Laplace transform of the canonical correlation `D̃_∞(λ)`.
pub fn laplace_canonical(
    lambda: f64,
    variant: Variant,
    b: f64,
    gamma: f64,
    beta: f64,
    opts: &QuadOptions,
) -> Result<Estimate> {
    check_gamma(gamma)?;
    if !(lambda > 0.0) || !(beta > 0.0) {
        return Err(Error::InvalidArgument("need lambda > 0 and beta > 0".into()));
    }
    let pre = 2.0 / (beta * beta);
    let f = |th: &[f64]| {
        let t = th[0];
        let c2 = (PI * t).cos().powi(2);
        let w2 = omega2(th);
        match variant {
            Variant::Zero => c2 / (lambda + gamma * w2),
            Variant::I => c2 * p_over_q(lambda, w2, b, gamma),
            Variant::II => {
                let (r, s) = cubic::r_s(lambda, t, b, gamma);
                c2 * r / s
            }
        }
    };
    Ok(torus_integral(1, f, opts)?.scale(pre))
}

/// Alternate-charge integrand of `D^{(ii)}` on `[0, ¼]` (without `4/β²`).
fn d_ii_integrand(theta: f64, t: f64, b: f64, gamma: f64) -> Result<f64> {
    let a = alternate_coeffs(theta.max(THETA_FLOOR), b, gamma)?;
    let [b1, b2, b3, b4, b5, b6] = a.betas;
    let [a1, a2, a3] = a.alphas;
    let even = 0.5 * (b1 + b4 / a1) * (-a.slow_rate * t).exp() + 0.5 * (b1 - b4 / a1) * (-(2.0 * gamma + a1) * t).exp();
    let (s2, c2) = (a2 * t).sin_cos();
    let (s3, c3) = (a3 * t).sin_cos();
    let osc = b2 * c2 + b3 * c3 + b5 * s2 / a2 + b6 * s3 / a3;
    Ok(even + (-2.0 * gamma * t).exp() * osc)
}

fn quarter_integral<F: Fn(f64) -> Result<f64>>(f: F, opts: &QuadOptions) -> Result<Estimate> {
    let failure = std::cell::RefCell::new(None);
    let out = integrate(
        |x| match f(x) {
            Ok(v) => v,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                0.0
            }
        },
        &QUARTER_BREAKS,
        opts,
    )?;
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(out),
    }
}

/// Canonical infinite-volume correlation `D_∞(t)`.
pub fn d_closed(t: f64, variant: Variant, b: f64, gamma: f64, beta: f64, opts: &QuadOptions) -> Result<Estimate> {
    check_gamma(gamma)?;
    if !(t >= 0.0) || !(beta > 0.0) {
        return Err(Error::InvalidArgument("need t >= 0 and beta > 0".into()));
    }
    let pre = 2.0 / (beta * beta);
    match variant {
        Variant::Zero => Ok(torus_integral(1, |th| current_weight(th) * (-gamma * omega2(th) * t).exp(), opts)?.scale(pre)),
        Variant::I => {
            let c = c_components(t, 1, b, gamma, opts)?;
            Ok((c[0] + c[1] + c[2]).scale(pre))
        }
        Variant::II => Ok(quarter_integral(|x| d_ii_integrand(x, t, b, gamma), opts)?.scale(2.0 * pre)),
    }
}

/// The three uniform-field components `D₁, D₂, D₃` of `D^{(i)}`.
pub fn d_components_i(t: f64, b: f64, gamma: f64, beta: f64, opts: &QuadOptions) -> Result<[Estimate; 3]> {
    let c = c_components(t, 1, b, gamma, opts)?;
    let pre = 2.0 / (beta * beta);
    Ok([c[0].scale(pre), c[1].scale(pre), c[2].scale(pre)])
}

/// Time-integrated uniform-field bracket split into `(smooth, oscillatory)`:
/// `β₁ Re tφ((c − iα₁)t) + β₂ tφ((c+α₂)t) + β₂ tφ((γω²−α₂)t)`.
fn uniform_bracket(w2: f64, b: f64, gamma: f64, t: f64) -> (f64, f64, f64) {
    let Ok(u) = uniform_coeffs_w2(w2, b, gamma) else { return (0.0, 0.0, 0.0) };
    let c = gamma * w2;
    let z = Complex64::new(c, -u.alpha1);
    let rest = u.beta2 * (t_phi_re(c + u.alpha2, t) + t_phi_re(u.slow_rate, t));
    if z.norm() * t >= SPLIT_ZT && u.beta1 != 0.0 {
        let osc = ((-z * t).exp() / (z * z * t)).re;
        let bound = (-c * t).exp() / (z.norm_sqr() * t);
        (u.beta1 * t_phi_smooth(z, t).re + rest, u.beta1 * osc, u.beta1.abs() * bound)
    } else {
        (u.beta1 * t_phi(z, t).re + rest, 0.0, 0.0)
    }
}

fn kappa_uniform(t: f64, d: usize, dstar: usize, b: f64, gamma: f64, opts: &QuadOptions) -> Result<Estimate> {
    let ds = dstar as f64;
    let (k2, k4) = (2.0 / (ds * ds), (ds - 2.0) / (ds * ds));
    let main = torus_integral(
        d,
        |th| {
            let w2 = omega2(th);
            let w = current_weight(th);
            w * (k2 * uniform_bracket(w2, b, gamma, t).0 + k4 * t_phi_re(gamma * w2, t))
        },
        opts,
    )?;
    let bound = torus_integral(d, |th| current_weight(th) * k2 * uniform_bracket(omega2(th), b, gamma, t).2, &QuadOptions::rel(1e-3))?;
    let target = opts.abs_tol.max(opts.rel_tol * main.value.abs());
    let osc = if bound.value <= 0.1 * target {
        Estimate::new(0.0, bound.value)
    } else {
        let o = QuadOptions { abs_tol: 0.1 * target, rel_tol: 0.0, max_intervals: opts.max_intervals.max(50_000) };
        torus_integral(d, |th| current_weight(th) * k2 * uniform_bracket(omega2(th), b, gamma, t).1, &o)?
    };
    Ok(main + osc + Estimate::new(gamma / (2.0 * ds), 0.0))
}

fn kappa_alternate(t: f64, b: f64, gamma: f64, opts: &QuadOptions) -> Result<Estimate> {
    let g = |th: f64| -> Result<f64> {
        let a = alternate_coeffs(th.max(THETA_FLOOR), b, gamma)?;
        let [b1, b2, b3, b4, b5, b6] = a.betas;
        let [a1, a2, a3] = a.alphas;
        let z2 = Complex64::new(2.0 * gamma, -a2);
        let z3 = Complex64::new(2.0 * gamma, -a3);
        let (p2, p3) = (t_phi(z2, t), t_phi(z3, t));
        Ok(0.5 * (b1 + b4 / a1) * t_phi_re(a.slow_rate, t)
            + 0.5 * (b1 - b4 / a1) * t_phi_re(2.0 * gamma + a1, t)
            + b2 * p2.re
            + b3 * p3.re
            + b5 / a2 * p2.im
            + b6 / a3 * p3.im)
    };
    Ok(quarter_integral(g, opts)? + Estimate::new(gamma / 4.0, 0.0))
}

/// Finite-time Green–Kubo integral of the closed-form correlation,
/// including the martingale constant.
pub fn kappa_gk_closed(t: f64, setting: GkSetting, b: f64, gamma: f64, opts: &QuadOptions) -> Result<Estimate> {
    check_gamma(gamma)?;
    if !(t > 0.0) {
        return Err(Error::InvalidArgument("t must be > 0".into()));
    }
    match setting {
        GkSetting::Micro { d, dstar } => {
            check_d(d)?;
            if dstar < 2 {
                return Err(Error::InvalidArgument("dstar must be >= 2".into()));
            }
            kappa_uniform(t, d, dstar, b, gamma, opts)
        }
        GkSetting::Canonical { variant: Variant::Zero } => kappa_uniform(t, 1, 2, 0.0, gamma, opts),
        GkSetting::Canonical { variant: Variant::I } => kappa_uniform(t, 1, 2, b, gamma, opts),
        GkSetting::Canonical { variant: Variant::II } => kappa_alternate(t, b, gamma, opts),
    }
}

/// Uniform bound on the time-integrated `C₁` term,
/// `∫ w |β₁| γω²/(γ²ω⁴ + α₁²) dθ`.
pub fn c1_integrated_bound(d: usize, b: f64, gamma: f64, opts: &QuadOptions) -> Result<Estimate> {
    torus_integral(
        d,
        |th| {
            let w2 = omega2(th);
            uniform_coeffs_w2(w2, b, gamma).map_or(0.0, |u| {
                let c = gamma * w2;
                current_weight(th) * u.beta1.abs() * c / (c * c + u.alpha1 * u.alpha1)
            })
        },
        opts,
    )
}

/// Weighted time integral of `C₁`:
/// `∫ w β₁ ∫₀ᵗ (1 − s/t) e^{−γω²s} cos(α₁s) ds dθ`.
pub fn c1_time_integral(t: f64, d: usize, b: f64, gamma: f64, opts: &QuadOptions) -> Result<Estimate> {
    let o = QuadOptions { max_intervals: opts.max_intervals.max(50_000), ..*opts };
    torus_integral(
        d,
        |th| {
            let w2 = omega2(th);
            uniform_coeffs_w2(w2, b, gamma).map_or(0.0, |u| {
                current_weight(th) * u.beta1 * t_phi(Complex64::new(gamma * w2, -u.alpha1), t).re
            })
        },
        &o,
    )
}

/// What a closed-form series evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "quantity", rename_all = "snake_case")]
pub enum SeriesKind {
    Kappa { setting: GkSetting },
    CInfinity { d: usize, dstar: usize, e: f64 },
    Component { index: usize, d: usize },
    DClosed { variant: Variant, beta: f64 },
}

/// A time series of closed-form values with quadrature error estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClosedFormSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub meta: serde_json::Value,
}

pub fn closed_form_series(
    kind: SeriesKind,
    times: &[f64],
    b: f64,
    gamma: f64,
    opts: &QuadOptions,
) -> Result<ClosedFormSeries> {
    let eval = |t: f64| -> Result<Estimate> {
        match kind {
            SeriesKind::Kappa { setting } => kappa_gk_closed(t, setting, b, gamma, opts),
            SeriesKind::CInfinity { d, dstar, e } => c_infinity(t, d, dstar, b, gamma, e, opts),
            SeriesKind::Component { index, d } => {
                if !(1..=4).contains(&index) {
                    return Err(Error::InvalidArgument(format!("component index {index} not in 1..=4")));
                }
                Ok(c_components(t, d, b, gamma, opts)?[index - 1])
            }
            SeriesKind::DClosed { variant, beta } => d_closed(t, variant, b, gamma, beta, opts),
        }
    };
    let est: Vec<Estimate> = times.par_iter().map(|&t| eval(t)).collect::<Result<_>>()?;
    for (t, e) in times.iter().zip(&est) {
        if !e.error.is_finite() || !e.value.is_finite() {
            return Err(Error::Tolerance(format!("non-finite closed form at t={t}")));
        }
    }
    Ok(ClosedFormSeries {
        times: times.to_vec(),
        values: est.iter().map(|e| e.value).collect(),
        errors: est.iter().map(|e| e.error).collect(),
        meta: serde_json::json!({
            "kind": kind,
            "b": b,
            "gamma": gamma,
            "abs_tol": opts.abs_tol,
            "rel_tol": opts.rel_tol,
        }),
    })
}

/// Log-log least-squares slope.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub points: usize,
    pub window: [f64; 2],
}

pub fn fit_exponent(times: &[f64], values: &[f64], window: [f64; 2]) -> Result<ExponentFit> {
    if times.len() != values.len() {
        return Err(Error::DimensionMismatch { expected: times.len(), got: values.len() });
    }
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window[0] && **t <= window[1])
        .map(|(&t, &v)| (t, v))
        .collect();
    if pts.len() < 8 {
        return Err(Error::InvalidArgument(format!("{} points in window, need >= 8", pts.len())));
    }
    if let Some((t, v)) = pts.iter().find(|(t, v)| !(*v > 0.0) || !(*t > 0.0)) {
        return Err(Error::InvalidArgument(format!("nonpositive value {v} at t={t}")));
    }
    let n = pts.len() as f64;
    let xs: Vec<f64> = pts.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let stderr = (rss / (n - 2.0) / sxx).sqrt();
    Ok(ExponentFit { slope, stderr, intercept, points: pts.len(), window })
}

/// `n` log-spaced times per decade covering `[t0, t1]` inclusive.
pub fn log_times(t0: f64, t1: f64, per_decade: usize) -> Vec<f64> {
    let decades = (t1 / t0).log10();
    let m = (decades * per_decade as f64).round().max(1.0) as usize;
    (0..=m).map(|k| t0 * 10f64.powf(decades * k as f64 / m as f64)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn opts() -> QuadOptions {
        QuadOptions::rel(1e-10)
    }

    #[test]
    fn omega_and_dispersion() {
        assert_eq!(omega2(&[0.0]), 0.0);
        assert!((omega2(&[0.5]) - 4.0).abs() < 1e-15);
        assert!((omega2(&[0.5, 0.5]) - 8.0).abs() < 1e-14);
        let (p, m) = dispersion(&[0.0], 2.0);
        assert!((p - 2.0).abs() < 1e-15 && m.abs() < 1e-15);
        let (p, m) = dispersion(&[0.2], 0.0);
        assert!((p - m).abs() < 1e-15);
        let h = 1e-6;
        for sign in [0, 1] {
            let f = |t: f64| {
                let (p, m) = dispersion(&[t], 1.0);
                if sign == 0 { p } else { m }
            };
            let slope = (f(1e-4 + h) - f(1e-4 - h)) / (2.0 * h);
            assert!(slope.abs() <= 1e-2, "slope {slope}");
        }
    }

    #[test]
    fn uniform_coeffs_residuals() {
        let u = uniform_coeffs_w2(0.0, 3.0, 1.0).unwrap();
        assert!((u.alpha1 - 3.0).abs() < 1e-14 && u.alpha2 == 0.0);
        assert!((u.beta1 - 1.0).abs() < 1e-14 && u.beta2.abs() < 1e-14);
        assert!(uniform_coeffs_w2(0.0, 0.0, 1.0).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let w2 = rng.gen_range(0.0..12.0) * rng.gen::<f64>().powi(4);
            let b = rng.gen_range(-4.0..4.0);
            let g = rng.gen_range(0.05..3.0);
            let u = uniform_coeffs_w2(w2, b, g).unwrap();
            let x = b * b - (g * w2).powi(2) + 4.0 * w2;
            let scale = 1.0 + x.abs() + (g * w2).powi(2) + b * b;
            assert!((u.alpha1.powi(2) - u.alpha2.powi(2) - x).abs() <= 1e-10 * scale);
            assert!((u.alpha1.powi(2) * u.alpha2.powi(2) - g * g * b * b * w2 * w2).abs() <= 1e-10 * scale * scale);
            assert!(u.alpha2 <= g * w2 * (1.0 + 1e-12));
            assert!(u.slow_rate >= 0.0);
            assert!((u.slow_rate - (g * w2 - u.alpha2)).abs() <= 1e-12 * (1.0 + g * w2));
        }
    }

    #[test]
    fn small_theta_ratios() {
        // α₂/(γω²) → 1 and β₂B²/ω² → 2, with Richardson in θ².
        let (b, g): (f64, f64) = (1.0, 0.7);
        let r = |t: f64| {
            let w2 = omega2(&[t]);
            let u = uniform_coeffs_w2(w2, b, g).unwrap();
            (u.alpha2 / (g * w2), u.beta2 * b * b / w2)
        };
        let (a1, b1) = r(2e-3);
        let (a2, b2) = r(1e-3);
        assert!(((4.0 * a2 - a1) / 3.0 - 1.0).abs() < 1e-6);
        assert!(((4.0 * b2 - b1) / 3.0 - 2.0).abs() < 1e-6);
    }

    #[test]
    fn partial_fractions_of_p_over_q() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let w2 = rng.gen_range(1e-3..8.0);
            let b = rng.gen_range(-3.0..3.0);
            let g = rng.gen_range(0.1..2.0);
            let lam = rng.gen_range(0.1..5.0);
            let u = uniform_coeffs_w2(w2, b, g).unwrap();
            let l = lam + g * w2;
            let pf = u.beta1 * l / (l * l + u.alpha1.powi(2)) + u.beta2 / (l + u.alpha2) + u.beta2 / (l - u.alpha2);
            let direct = p_over_q(lam, w2, b, g);
            assert!((pf - direct).abs() < 1e-9 * direct.abs(), "{pf} vs {direct}");
        }
    }

    #[test]
    fn t_phi_branches_agree() {
        for &z in &[Complex64::new(0.3, 0.2), Complex64::new(1.0, -2.0), Complex64::new(0.01, 0.0)] {
            for &t in &[0.5, 1.0, 1.7] {
                // Direct quadrature of ∫₀ᵗ(1 − s/t)e^{−zs}ds.
                let n = 2000;
                let h = t / n as f64;
                let mut acc = Complex64::new(0.0, 0.0);
                for k in 0..=n {
                    let s = k as f64 * h;
                    let w = if k == 0 || k == n { 0.5 } else { 1.0 };
                    acc += w * (1.0 - s / t) * (-z * s).exp();
                }
                acc *= h;
                assert!((t_phi(z, t) - acc).norm() < 1e-6, "{z} {t}");
            }
        }
    }

    #[test]
    fn laplace_zero_field_reduces() {
        let (lam, g) = (0.8, 0.9);
        let full = laplace_micro(lam, 1, 3, 0.0, g, 1.0, &opts()).unwrap().value;
        let reduced = torus_integral(1, |th| current_weight(th) / (lam + g * omega2(th)), &opts()).unwrap().value / 3.0;
        assert!((full - reduced).abs() < 1e-10 * reduced);
    }

    #[test]
    fn abelian_limit() {
        let c0 = c_infinity(0.0, 1, 2, 1.0, 1.0, 1.0, &opts()).unwrap().value;
        for &lam in &[1e3, 1e4] {
            let l = laplace_micro(lam, 1, 2, 1.0, 1.0, 1.0, &opts()).unwrap().value;
            assert!((lam * l / c0 - 1.0).abs() < 5.0 / lam, "{lam}: {} vs {c0}", lam * l);
        }
    }

    #[test]
    fn canonical_i_matches_micro() {
        for &lam in &[0.5, 1.0, 2.0] {
            let a = laplace_canonical(lam, Variant::I, 1.0, 1.0, 1.0, &opts()).unwrap().value;
            let b = laplace_micro(lam, 1, 2, 1.0, 1.0, 1.0, &opts()).unwrap().value;
            // (2/β²)∫cos²P/Q versus (2E²/4)∫cos²P/Q.
            assert!((a - 4.0 * b).abs() < 1e-10 * a.abs());
        }
    }

    #[test]
    fn canonical_ii_zero_field_is_variant_zero() {
        let a = laplace_canonical(1.0, Variant::II, 0.0, 0.5, 1.0, &opts()).unwrap().value;
        let b = laplace_canonical(1.0, Variant::Zero, 0.0, 0.5, 1.0, &opts()).unwrap().value;
        assert!((a - b).abs() < 1e-8 * b.abs(), "{a} vs {b}");
        let sym = quarter_integral(|x| {
            let (_, s) = cubic::r_s(1.0, x, 0.7, 0.5);
            Ok(cubic::r_bar(1.0, x, 0.7, 0.5) / s)
        }, &opts())
        .unwrap()
        .value * 4.0;
        let full = laplace_canonical(1.0, Variant::II, 0.7, 0.5, 1.0, &opts()).unwrap().value;
        assert!((sym - full).abs() < 1e-9 * full.abs());
    }

    #[test]
    fn s_dominates_y_cubed() {
        for &lam in &[0.1, 1.0, 3.0] {
            for &(b, g) in &[(0.0, 0.5), (1.0, 0.5), (5.0, 1.0)] {
                let y: f64 = lam * lam + 4.0 * lam * g;
                for k in 0..=1000 {
                    let (_, s) = cubic::r_s(lam, k as f64 / 1000.0, b, g);
                    assert!(s >= y.powi(3) * (1.0 - 1e-12));
                }
            }
        }
    }

    #[test]
    fn correlations_at_origin() {
        for v in [Variant::Zero, Variant::I, Variant::II] {
            let d0 = d_closed(0.0, v, 1.0, 0.5, 1.0, &opts()).unwrap().value;
            assert!((d0 - 1.0).abs() < 1e-6, "{v:?}: {d0}");
        }
        let d0 = d_closed(0.0, Variant::II, 1.0, 0.5, 2.0, &opts()).unwrap().value;
        assert!((d0 - 0.25).abs() < 1e-6);
        let c = c_components(0.0, 1, 1.0, 1.0, &opts()).unwrap();
        assert!((c[1].value - c[2].value).abs() < 1e-12);
    }

    #[test]
    fn kappa_short_time_matches_series() {
        // κ(t) − γ/4 ≈ (β²/4)·D(0)·t for small t.
        let t = 1e-4;
        for v in [Variant::Zero, Variant::I, Variant::II] {
            let k = kappa_gk_closed(t, GkSetting::Canonical { variant: v }, 1.0, 0.5, &opts()).unwrap().value;
            let lead = 0.25 * t * 0.5;
            assert!(((k - 0.125) / lead - 1.0).abs() < 1e-3, "{v:?}: {k}");
        }
    }

    #[test]
    fn kappa_equals_time_integral_of_d() {
        // κ(t) = (β²/4)∫₀ᵗ(1 − s/t)D(s)ds + γ/4 by direct quadrature in s.
        let (b, g, t) = (1.0, 0.5, 3.0);
        for v in [Variant::Zero, Variant::I, Variant::II] {
            let o = QuadOptions::rel(1e-9);
            let direct = integrate(|s| (1.0 - s / t) * d_closed(s, v, b, g, 1.0, &o).unwrap().value, &[0.0, t], &QuadOptions::rel(1e-8))
                .unwrap()
                .value
                * 0.25
                + g / 4.0;
            let k = kappa_gk_closed(t, GkSetting::Canonical { variant: v }, b, g, &opts()).unwrap().value;
            assert!((k - direct).abs() < 1e-7 * k, "{v:?}: {k} vs {direct}");
        }
    }

    #[test]
    fn c1_time_integral_bounded() {
        let bound = c1_integrated_bound(1, 1.0, 1.0, &opts()).unwrap().value;
        // The bound is a limsup: the excess decays like 1/t.
        let mut prev = f64::INFINITY;
        for &t in &[100.0, 1000.0, 10000.0, 1e5] {
            let v = c1_time_integral(t, 1, 1.0, 1.0, &QuadOptions::rel(1e-8)).unwrap().value;
            let excess = v.abs() - bound;
            assert!(excess <= 0.2 / t, "t={t}: {v} vs {bound}");
            assert!(excess < prev);
            prev = excess;
        }
    }

    #[test]
    fn fit_exact_power() {
        let t = log_times(1.0, 1e3, 4);
        let v: Vec<f64> = t.iter().map(|x| 3.0 * x.powf(0.25)).collect();
        let f = fit_exponent(&t, &v, [1.0, 1e3]).unwrap();
        assert!((f.slope - 0.25).abs() < 1e-12 && f.stderr < 1e-12);
        let lg: Vec<f64> = t.iter().map(|x| 2.0 * (1.0 + x).ln()).collect();
        let early = fit_exponent(&t, &lg, [1.0, 1e2]).unwrap().slope;
        let t2 = log_times(1e3, 1e6, 4);
        let lg2: Vec<f64> = t2.iter().map(|x| 2.0 * (1.0 + x).ln()).collect();
        let late = fit_exponent(&t2, &lg2, [1e3, 1e6]).unwrap().slope;
        assert!(late < early);
        assert!(fit_exponent(&t[..5], &v[..5], [1.0, 1e3]).is_err());
        let mut bad = v.clone();
        bad[3] = -1.0;
        assert!(fit_exponent(&t, &bad, [1.0, 1e3]).is_err());
    }
}

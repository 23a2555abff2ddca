//! Alternate-charge analytics: the cubic `T(Y)`, its ordered real roots and
//! the partial fractions of `R̄/S`.
//!
//! With `λ̄ = λ + 2γ`, `Y = λ̄² − 4γ²`, `c = cos 2πθ` and `s = sin 2πθ`,
//! `S = 64·T(Y/4)` and on `[0, ¼]` the symmetrised numerator is
//! `R̄ = λ̄·U₁(Y) + U₂(Y)`, so that
//! `R̄/S = Σᵢ (λ̄βᵢ + βᵢ₊₃)/(Y − 4α̃ᵢ)`.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Below this wavenumber the two lower roots are numerically a double root;
/// closed-form integrands are evaluated at the floor instead.
pub const THETA_FLOOR: f64 = 1e-6;

/// Coefficients `[a₂, a₁, a₀]` of the monic cubic `T(Y) = Y³ + a₂Y² + a₁Y + a₀`.
pub fn t_coeffs(theta: f64, b: f64, gamma: f64) -> [f64; 3] {
    let (s, c) = (2.0 * PI * theta).sin_cos();
    let g2 = (gamma * s).powi(2);
    let bt2 = 0.25 * b * b;
    [
        2.0 * (1.0 + bt2 + g2),
        bt2 * bt2 + 2.0 * (1.0 + g2) * bt2 + c * c + 4.0 * g2 + g2 * g2,
        2.0 * bt2 * g2 + g2 * c * c + 2.0 * g2 * g2,
    ]
}

fn t_eval(k: &[f64; 3], y: f64) -> (f64, f64) {
    let v = ((y + k[0]) * y + k[1]) * y + k[2];
    let dv = (3.0 * y + 2.0 * k[0]) * y + k[1];
    (v, dv)
}

/// The three real roots of `T`, descending. Fails when a complex pair exists.
pub fn real_roots(k: &[f64; 3], theta: f64) -> Result<[f64; 3]> {
    let (a2, a1, a0) = (k[0], k[1], k[2]);
    let p = a1 - a2 * a2 / 3.0;
    let q = 2.0 * a2.powi(3) / 27.0 - a2 * a1 / 3.0 + a0;
    let scale = 1.0 + a2.abs().powi(3) + a1.abs().powf(1.5) + a0.abs();
    let disc = 0.25 * q * q + (p / 3.0).powi(3);
    if p >= 0.0 || disc > 1e-13 * scale * scale {
        return Err(Error::ComplexRoots { theta });
    }
    let m = 2.0 * (-p / 3.0).sqrt();
    let arg = ((3.0 * q / (2.0 * p)) * (-3.0 / p).sqrt()).clamp(-1.0, 1.0);
    let phi = arg.acos() / 3.0;
    let shift = a2 / 3.0;
    let mut r = [0.0; 3];
    for (i, ri) in r.iter_mut().enumerate() {
        *ri = m * (phi - 2.0 * PI * i as f64 / 3.0).cos() - shift;
    }
    r.sort_by(|x, y| y.total_cmp(x));
    for ri in &mut r {
        for _ in 0..2 {
            let (v, dv) = t_eval(k, *ri);
            if dv == 0.0 {
                break;
            }
            let cand = *ri - v / dv;
            if t_eval(k, cand).0.abs() < v.abs() {
                *ri = cand;
            } else {
                break;
            }
        }
    }
    Ok(r)
}

/// `U₁(Y)`, the coefficient of `λ̄` in the symmetrised numerator.
pub fn u1(y: f64, theta: f64, b: f64, gamma: f64) -> f64 {
    let c2 = (2.0 * PI * theta).cos().powi(2);
    let (b2, g2) = (b * b, gamma * gamma);
    (b2 + y + 4.0 * g2) * (8.0 + y) - 8.0 * b2 + 4.0 * (4.0 + b2 - 8.0 * g2 - g2 * y) * c2
}

/// `U₂(Y)`, the `λ̄`-free part of the symmetrised numerator.
pub fn u2(y: f64, theta: f64, b: f64, gamma: f64) -> f64 {
    let c2 = (2.0 * PI * theta).cos().powi(2);
    let (b2, g2) = (b * b, gamma * gamma);
    (2.0 * b2 * gamma * (4.0 + y) + 2.0 * gamma * (y + 4.0 * g2) * (y + 8.0)) * c2
        + 8.0 * gamma * (4.0 - 8.0 * g2 - g2 * y) * c2 * c2
}

/// `R(λ)` and `S(λ)` over the full period (before symmetrisation).
pub fn r_s(lambda: f64, theta: f64, b: f64, gamma: f64) -> (f64, f64) {
    let c = (2.0 * PI * theta).cos();
    let l = lambda + 2.0 * gamma;
    let (b2, g2, l2) = (b * b, gamma * gamma, l * l);
    let k = 4.0 + 4.0 * g2 * g2 - g2 * (8.0 + l2);
    let base = (b2 + l2) * (8.0 - 4.0 * g2 + l2) - 8.0 * b2;
    let r = l * base
        + 2.0 * (b2 * (2.0 * l + gamma * (4.0 - 4.0 * g2 + l2)) + gamma * l2 * (8.0 - 4.0 * g2 + l2)) * c
        + k * (4.0 * l * c * c + 8.0 * gamma * c * c * c);
    let s = (b2 + l2) * base
        + 8.0 * (-b2 * g2 * (4.0 - 4.0 * g2 + l2) + l2 * (2.0 + 4.0 * g2 * g2 - g2 * (8.0 + l2))) * c * c
        - 16.0 * g2 * k * c.powi(4);
    (r, s)
}

/// `S̃(Y)`, the denominator written in `Y = λ² + 4λγ`.
pub fn s_tilde(y: f64, theta: f64, b: f64, gamma: f64) -> f64 {
    let (s, c) = (2.0 * PI * theta).sin_cos();
    let (b2, gs2) = (b * b, (gamma * s).powi(2));
    y.powi(3)
        + (8.0 + 2.0 * b2 + 8.0 * gs2) * y * y
        + (b2 * b2 + 8.0 * (1.0 + gs2) * b2 + 16.0 * c * c + 64.0 * gs2 + 16.0 * gs2 * gs2) * y
        + 32.0 * b2 * gs2
        + 64.0 * gs2 * c * c
        + 128.0 * gs2 * gs2
}

/// Symmetrised numerator `R̄(λ) = λ̄U₁ + U₂` on `[0, ¼]`.
pub fn r_bar(lambda: f64, theta: f64, b: f64, gamma: f64) -> f64 {
    let l = lambda + 2.0 * gamma;
    let y = l * l - 4.0 * gamma * gamma;
    l * u1(y, theta, b, gamma) + u2(y, theta, b, gamma)
}

/// Per-wavenumber alternate-charge data.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct AlternateCoeffs {
    /// Roots `α̃₁ > α̃₂ > α̃₃` of `T`.
    pub roots: [f64; 3],
    /// `α₁ = √(4γ² + 4α̃₁)`, `α₂,₃ = √(−4γ² − 4α̃₂,₃)`.
    pub alphas: [f64; 3],
    pub betas: [f64; 6],
    /// `2γ − α₁ = −4α̃₁/(2γ + α₁)`, the slow decay rate.
    pub slow_rate: f64,
}

/// Roots, frequencies and partial-fraction weights at `θ ∈ (0, ¼]`.
pub fn alternate_coeffs(theta: f64, b: f64, gamma: f64) -> Result<AlternateCoeffs> {
    if !(theta > 0.0 && theta <= 0.25) {
        return Err(Error::InvalidArgument(format!("theta={theta} outside (0, 1/4]")));
    }
    if gamma <= 0.0 {
        return Err(Error::InvalidArgument("gamma must be positive".into()));
    }
    let k = t_coeffs(theta, b, gamma);
    let r = real_roots(&k, theta)?;
    let g2 = gamma * gamma;
    if gamma <= 1.0 {
        let bt = 0.25 * b * b + 1.0;
        let ordered = 0.0 > r[0] && r[0] > -g2 && -g2 > r[1] && r[1] > -bt && -bt > r[2];
        if !ordered {
            return Err(Error::Degenerate(format!("root ordering violated at theta={theta}: {r:?}")));
        }
    } else if r[0] <= -g2 || r[1] >= -g2 {
        return Err(Error::ComplexRoots { theta });
    }
    let alphas = [
        (4.0 * g2 + 4.0 * r[0]).sqrt(),
        (-4.0 * g2 - 4.0 * r[1]).sqrt(),
        (-4.0 * g2 - 4.0 * r[2]).sqrt(),
    ];
    let mut betas = [0.0; 6];
    for i in 0..3 {
        let mut den = 1.0;
        for j in 0..3 {
            if j != i {
                den *= 4.0 * (r[i] - r[j]);
            }
        }
        betas[i] = u1(4.0 * r[i], theta, b, gamma) / den;
        betas[i + 3] = u2(4.0 * r[i], theta, b, gamma) / den;
    }
    let slow_rate = -4.0 * r[0] / (2.0 * gamma + alphas[0]);
    Ok(AlternateCoeffs { roots: r, alphas, betas, slow_rate })
}

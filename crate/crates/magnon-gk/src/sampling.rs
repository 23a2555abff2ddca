//! Exact samplers for the microcanonical and canonical measures, and a Monte
//! Carlo check of the finite-volume ensemble identities.
//!
//! Microcanonical draws use normal-mode coordinates: with
//! `ω^N(ξ) = 2N^{-d/2}(Σ_a sin²(πξ^a/N))^{1/2}`, `q̃ = ω^N q̂` and
//! `ṽ = N^{-d/2} v̂`, the energy is `½ Σ_{ξ≠0} |q̃|² + |ṽ|²`. Taking one
//! representative of each pair `{ξ, −ξ}` (and `Re/√2` for the self-conjugate
//! modes of even `N`), the real coordinates are uniform on the sphere of
//! radius `√(N^d E)` in dimension `2 dstar (N^d − 1)`; a normalized Gaussian
//! vector is exactly uniform there.

use std::f64::consts::PI;

use num_complex::Complex64 as C;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::LatticeFft;
use crate::lattice::{Coords, LatticeSpec, PhaseState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnsembleSpec {
    Microcanonical { e: f64 },
    Canonical {
        beta: f64,
        #[serde(default)]
        tau: Vec<f64>,
    },
}

impl EnsembleSpec {
    pub fn check(&self, spec: &LatticeSpec) -> Result<()> {
        match self {
            EnsembleSpec::Microcanonical { e } => {
                if !(*e > 0.0 && e.is_finite()) {
                    return Err(Error::InvalidArgument("energy per site must be > 0".into()));
                }
                if spec.coords != Coords::Position {
                    return Err(Error::InvalidSpec("microcanonical sampling needs position coordinates".into()));
                }
            }
            EnsembleSpec::Canonical { beta, tau } => {
                if !(*beta > 0.0 && beta.is_finite()) {
                    return Err(Error::InvalidArgument("beta must be > 0".into()));
                }
                if spec.coords != Coords::Deformation {
                    return Err(Error::InvalidSpec("canonical sampling needs deformation coordinates".into()));
                }
                if !tau.is_empty() && tau.len() != spec.dstar {
                    return Err(Error::DimensionMismatch { expected: spec.dstar, got: tau.len() });
                }
            }
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, spec: &LatticeSpec, rng: &mut R) -> Result<PhaseState> {
        match self {
            EnsembleSpec::Microcanonical { e } => sample_microcanonical(spec, *e, rng),
            EnsembleSpec::Canonical { beta, tau } => sample_canonical(spec, *beta, tau, rng),
        }
    }
}

/// Uniform draw from the surface `H = N^d e`, `Σq = Σv = 0`.
pub fn sample_microcanonical<R: Rng + ?Sized>(spec: &LatticeSpec, e: f64, rng: &mut R) -> Result<PhaseState> {
    EnsembleSpec::Microcanonical { e }.check(spec)?;
    let n = spec.n;
    let d = spec.d;
    let ds = spec.dstar;
    let fft = LatticeFft::new(n, d);
    let len = fft.len();
    let nd_half = (len as f64).sqrt();

    // Gaussian coordinates, then normalize to the sphere.
    let dim = 2 * ds * (len - 1);
    let mut g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
    let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = (len as f64 * e).sqrt() / norm;
    g.iter_mut().for_each(|x| *x *= scale);

    let omega_n: Vec<f64> = (0..len)
        .map(|k| {
            let xi = fft.mode(k);
            let s: f64 = (0..d).map(|a| (PI * xi[a] as f64 / n as f64).sin().powi(2)).sum();
            2.0 * s.sqrt() / nd_half
        })
        .collect();

    let mut qh = vec![vec![C::new(0.0, 0.0); len]; ds];
    let mut vh = vec![vec![C::new(0.0, 0.0); len]; ds];
    let mut it = g.into_iter();
    let mut next = || it.next().expect("coordinate count matches sphere dimension");
    for k in 1..len {
        let kn = fft.negate(k);
        if kn < k {
            continue;
        }
        for j in 0..ds {
            let (qt, vt) = if kn == k {
                let s2 = std::f64::consts::SQRT_2;
                (C::new(s2 * next(), 0.0), C::new(s2 * next(), 0.0))
            } else {
                (C::new(next(), next()), C::new(next(), next()))
            };
            qh[j][k] = qt / omega_n[k];
            vh[j][k] = vt * nd_half;
            qh[j][kn] = qh[j][k].conj();
            vh[j][kn] = vh[j][k].conj();
        }
    }
    let mut s = PhaseState::zeros(spec);
    for j in 0..ds {
        fft.inverse(&mut qh[j]);
        fft.inverse(&mut vh[j]);
        for x in 0..len {
            s.pos[x * ds + j] = qh[j][x].re;
            s.vel[x * ds + j] = vh[j][x].re;
        }
    }
    Ok(s)
}

/// Product Gaussian measure: `v ~ N(0, 1/β)`, `r^j ~ N(−τ_j, 1/β)`.
pub fn sample_canonical<R: Rng + ?Sized>(
    spec: &LatticeSpec,
    beta: f64,
    tau: &[f64],
    rng: &mut R,
) -> Result<PhaseState> {
    EnsembleSpec::Canonical { beta, tau: tau.to_vec() }.check(spec)?;
    let sd = beta.recip().sqrt();
    let ds = spec.dstar;
    let mut s = PhaseState::zeros(spec);
    for (i, r) in s.pos.iter_mut().enumerate() {
        let shift = tau.get(i % ds).copied().unwrap_or(0.0);
        *r = -shift + sd * rng.sample::<f64, _>(StandardNormal);
    }
    for v in s.vel.iter_mut() {
        *v = sd * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(s)
}

/// One estimated ensemble moment with its references.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MomentCheck {
    pub name: String,
    pub estimate: f64,
    pub stderr: f64,
    /// Exact finite-`N` value.
    pub exact: f64,
    /// Value of the leading-order (large-`N`) formula.
    pub leading: f64,
}

impl MomentCheck {
    /// `|estimate − exact| / stderr`.
    pub fn z_exact(&self) -> f64 {
        (self.estimate - self.exact).abs() / self.stderr.max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub n: usize,
    pub samples: usize,
    pub checks: Vec<MomentCheck>,
}

/// `Σ_{ξ≠0} sin(θ_ξ·x) sin(θ_ξ·e₁) / Σ_a sin²(πξ^a/N)`.
pub fn fourier_sum_iv(spec: &LatticeSpec, x: &[usize]) -> f64 {
    let n = spec.n;
    let fft = LatticeFft::new(n, spec.d);
    (1..fft.len())
        .map(|k| {
            let xi = fft.mode(k);
            let dot: usize = (0..spec.d).map(|a| xi[a] * x.get(a).copied().unwrap_or(0)).sum();
            let th = 2.0 * PI / n as f64;
            let den: f64 = (0..spec.d).map(|a| (PI * xi[a] as f64 / n as f64).sin().powi(2)).sum();
            (th * dot as f64).sin() * (th * xi[0] as f64).sin() / den
        })
        .sum()
}

/// Exact finite-`N` values of the four ensemble moments, with
/// `M = N^d − 1`: `E/d*`, `3E²M/(d*(d*M+1))`, `E²(M²+2)/(d*M(d*M+1))` and
/// `E²/(d*(d*M+1)) · Σ_{ξ≠0}(…)` for (iv) at `x = e₁`.
pub fn exact_moments(spec: &LatticeSpec, e: f64) -> [f64; 4] {
    let m = spec.sites() as f64 - 1.0;
    let ds = spec.dstar as f64;
    let mut e1 = vec![0; spec.d];
    e1[0] = 1;
    [
        e / ds,
        3.0 * e * e * m / (ds * (ds * m + 1.0)),
        e * e * (m * m + 2.0) / (ds * m * (ds * m + 1.0)),
        e * e / (ds * (ds * m + 1.0)) * fourier_sum_iv(spec, &e1),
    ]
}

/// Leading-order formulas: `E/d*`, `3E²/d*²`, `E²/d*²` and
/// `N^{-d} E²/d*² Σ_{ξ≠0}(…)`.
pub fn leading_moments(spec: &LatticeSpec, e: f64) -> [f64; 4] {
    let ds = spec.dstar as f64;
    let mut e1 = vec![0; spec.d];
    e1[0] = 1;
    let c = e * e / (ds * ds);
    [e / ds, 3.0 * c, c, c / spec.sites() as f64 * fourier_sum_iv(spec, &e1)]
}

/// Monte Carlo estimates of the four moments. Each sample contributes its
/// average over sites and components (samples are independent, so the
/// standard error is the plain one over samples).
pub fn ensemble_checks<R: Rng + ?Sized>(
    spec: &LatticeSpec,
    e: f64,
    samples: usize,
    rng: &mut R,
) -> Result<EnsembleReport> {
    if samples < 2 {
        return Err(Error::EmptyEnsemble);
    }
    EnsembleSpec::Microcanonical { e }.check(spec)?;
    let ds = spec.dstar;
    let sites = spec.sites();
    let top = spec.topology();
    let mut acc = [(0.0f64, 0.0f64); 4];
    for _ in 0..samples {
        let s = sample_microcanonical(spec, e, rng)?;
        let mut m = [0.0; 4];
        for x in 0..sites {
            let xp = top.fwd[0][x];
            let xm = top.bwd[0][x];
            for j in 0..ds {
                let v2 = s.v(x, j).powi(2);
                m[0] += v2;
                m[1] += v2 * v2;
                m[2] += v2 * s.v(xp, j).powi(2);
                // (q_{x+e} − q_{x−e})² v_x², the x = e₁ case of (iv) translated.
                m[3] += (s.q(xp, j) - s.q(xm, j)).powi(2) * v2;
            }
        }
        for (a, mi) in acc.iter_mut().zip(m) {
            let val = mi / (sites * ds) as f64;
            a.0 += val;
            a.1 += val * val;
        }
    }
    let ns = samples as f64;
    let exact = exact_moments(spec, e);
    let leading = leading_moments(spec, e);
    let names = ["v^2", "v^4", "v0^2 ve1^2", "(q_e1-q_-e1)^2 v0^2"];
    let checks = (0..4)
        .map(|i| {
            let mean = acc[i].0 / ns;
            let var = (acc[i].1 / ns - mean * mean).max(0.0) * ns / (ns - 1.0);
            MomentCheck {
                name: names[i].to_string(),
                estimate: mean,
                stderr: (var / ns).sqrt(),
                exact: exact[i],
                leading: leading[i],
            }
        })
        .collect();
    Ok(EnsembleReport { n: spec.n, samples, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{total_energy, Charge};
    use crate::rng::stream_rng;

    #[test]
    fn microcanonical_constraints_hold_exactly() {
        for spec in [
            LatticeSpec::position(1, 2, 9, 1.0, 1.0).unwrap(),
            LatticeSpec::position(1, 3, 8, 0.0, 1.0).unwrap(),
            LatticeSpec::position(2, 2, 4, 1.0, 1.0).unwrap(),
            LatticeSpec::position(3, 1, 3, 0.0, 1.0).unwrap(),
        ] {
            let mut rng = stream_rng(1, 4);
            let s = sample_microcanonical(&spec, 0.7, &mut rng).unwrap();
            let target = spec.sites() as f64 * 0.7;
            assert!((total_energy(&s) - target).abs() < 1e-10 * target);
            let (qm, vm) = s.means();
            assert!(qm.iter().chain(&vm).all(|m| m.abs() < 1e-12));
        }
    }

    #[test]
    fn exact_moments_agree_with_mc_for_odd_and_even_n() {
        for n in [5, 6] {
            let spec = LatticeSpec::position(1, 2, n, 1.0, 1.0).unwrap();
            let mut rng = stream_rng(2, 4);
            let r = ensemble_checks(&spec, 1.0, 20000, &mut rng).unwrap();
            for c in &r.checks {
                assert!(c.z_exact() < 4.0, "n={n} {}: {} vs {} ± {}", c.name, c.estimate, c.exact, c.stderr);
            }
        }
    }

    #[test]
    fn canonical_moments() {
        let spec = LatticeSpec::deformation(64, 1.0, 1.0, Charge::Uniform).unwrap();
        let mut rng = stream_rng(3, 4);
        let s = sample_canonical(&spec, 2.0, &[0.5, -1.0], &mut rng).unwrap();
        let (rm, vm) = s.means();
        assert!((rm[0] + 0.5).abs() < 0.3 && (rm[1] - 1.0).abs() < 0.3);
        assert!(vm[0].abs() < 0.3);
        assert!(sample_canonical(&spec, -1.0, &[], &mut rng).is_err());
        let pos = LatticeSpec::position(1, 2, 5, 1.0, 1.0).unwrap();
        assert!(sample_canonical(&pos, 1.0, &[], &mut rng).is_err());
        assert!(sample_microcanonical(&spec, 1.0, &mut rng).is_err());
    }

    #[test]
    fn ensemble_spec_json() {
        let e: EnsembleSpec = serde_json::from_str(r#"{"kind":"canonical","beta":1.0}"#).unwrap();
        assert_eq!(e, EnsembleSpec::Canonical { beta: 1.0, tau: vec![] });
        let m: EnsembleSpec = serde_json::from_str(r#"{"kind":"microcanonical","e":2.0}"#).unwrap();
        assert_eq!(m, EnsembleSpec::Microcanonical { e: 2.0 });
    }
}

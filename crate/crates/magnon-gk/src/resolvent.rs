//! Explicit solutions of the resolvent equation `(λ − L)u = Σ_x j^1_{x,x+e₁}`
//! and their certification at finite `N`.
//!
//! The kernels are solved per wavenumber at exactly `θ = ξ/N`, inverted to
//! real space and assembled into [`QuadraticObservable`]s on the bilinear
//! templates
//!
//! ```text
//! scalar:     Σ g(x−y) q^j_x v^j_y
//! uniform:    Σ g¹ q¹_x q²_y + g² (q¹_x v¹_y + q²_x v²_y) + g³ (q¹_x v²_y − q²_x v¹_y) + g⁴ v¹_x v²_y
//! alternate:  Σ_{x≡y} (−1)^y (h¹ q¹_x q²_y + h² v¹_x v²_y)
//!             + Σ h³ (q¹_x v¹_y + q²_x v²_y) + h⁴ (−1)^y (q¹_x v²_y − q²_x v¹_y)
//! ```
//!
//! Every claim is then checked through [`apply_generator`], which knows
//! nothing about these formulas.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix4, Vector4};
use num_complex::Complex64 as C;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::LatticeFft;
use crate::lattice::{r_to_q_matrix, Charge, Coords, LatticeSpec};
use crate::observables::{
    mean_product_observable, residual_norm, total_current_observable, GeneratorSpec, GeneratorVariant,
    QuadraticObservable,
};
use crate::spectral::{omega2, p_and_q};

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("lambda must be > 0, got {lambda}")))
    }
}

/// `ĝ_λ(θ) = i sin(2πθ¹)/(λ + γω²)`, the field-free kernel.
pub fn ghat_scalar(theta: &[f64], lambda: f64, gamma: f64) -> C {
    C::new(0.0, (2.0 * PI * theta[0]).sin() / (lambda + gamma * omega2(theta)))
}

/// The 4×4 Fourier system satisfied by `(ĝ¹, ĝ², ĝ³, ĝ⁴)`, right-hand side
/// `(0, i sin 2πθ¹, 0, 0)`.
pub fn uniform_system(theta: &[f64], lambda: f64, b: f64, gamma: f64) -> Matrix4<f64> {
    let w2 = omega2(theta);
    let l = lambda + gamma * w2;
    #[rustfmt::skip]
    let m = Matrix4::new(
        lambda, 0.0, 2.0 * w2, 0.0,
        0.0, l, b, 0.0,
        -1.0, -b, l, w2,
        0.0, 0.0, -2.0, lambda + 2.0 * gamma * w2,
    );
    m
}

/// Closed-form solution of [`uniform_system`]:
/// `i sin(2πθ¹)/Q · (−2Bω²(λ+2γω²), P, Bλ(λ+2γω²), 2Bλ)`.
pub fn ghat_uniform(theta: &[f64], lambda: f64, b: f64, gamma: f64) -> [C; 4] {
    let w2 = omega2(theta);
    let (p, q) = p_and_q(lambda, w2, b, gamma);
    let s = (2.0 * PI * theta[0]).sin() / q;
    let m = lambda + 2.0 * gamma * w2;
    [-2.0 * b * w2 * m, p, b * lambda * m, 2.0 * b * lambda].map(|c| C::new(0.0, s * c))
}

/// Parity-split Fourier values of the alternate-charge kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlternateKernels {
    pub h3o: C,
    pub h3e: C,
    pub h4o: C,
    pub h4e: C,
    /// `(4/λ)(−ĥ⁴ₑ − cos(2πθ) ĥ⁴ₒ)`.
    pub h1e: C,
    /// `2ĥ⁴ₑ/(λ + 4γ)`.
    pub h2e: C,
}

impl AlternateKernels {
    /// `ĥ³ = ĥ³ₒ + ĥ³ₑ`.
    pub fn h3(&self) -> C {
        self.h3o + self.h3e
    }
}

/// The 4×4 system in `(ĥ³ₒ, ĥ³ₑ, ĥ⁴ₒ, ĥ⁴ₑ)` with `λ̄ = λ + 2γ`,
/// right-hand side `(i sin 2πθ, 0, 0, 0)`.
pub fn alternate_system(theta: f64, lambda: f64, b: f64, gamma: f64) -> Matrix4<f64> {
    let lb = lambda + 2.0 * gamma;
    let c = (2.0 * PI * theta).cos();
    #[rustfmt::skip]
    let m = Matrix4::new(
        lb, -2.0 * gamma * c, b, 0.0,
        -2.0 * gamma * c, lb, 0.0, b,
        -b, 0.0, lb, 2.0 * c * (gamma - 2.0 / (lb + 2.0 * gamma)),
        0.0, -b, 2.0 * c * (gamma + 2.0 / (lb - 2.0 * gamma)), lb * (1.0 + 8.0 / (lb * lb - 4.0 * gamma * gamma)),
    );
    m
}

pub fn hhat_alternate(theta: f64, lambda: f64, b: f64, gamma: f64) -> Result<AlternateKernels> {
    check_lambda(lambda)?;
    let m = alternate_system(theta, lambda, b, gamma);
    let rhs = Vector4::new((2.0 * PI * theta).sin(), 0.0, 0.0, 0.0);
    // The system is real with an imaginary right-hand side: solve for −i·ĥ.
    let x = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular(format!("alternate kernel system at theta={theta}, lambda={lambda}")))?;
    let i = |v: f64| C::new(0.0, v);
    let (h3o, h3e, h4o, h4e) = (i(x[0]), i(x[1]), i(x[2]), i(x[3]));
    let c = (2.0 * PI * theta).cos();
    Ok(AlternateKernels {
        h3o,
        h3e,
        h4o,
        h4e,
        h1e: (-h4e - h4o * c) * (4.0 / lambda),
        h2e: h4e * (2.0 / (lambda + 4.0 * gamma)),
    })
}

/// Per-wavenumber kernel values, indexed like [`LatticeFft`] modes.
#[derive(Debug, Clone, PartialEq)]
pub enum Kernels {
    Scalar(Vec<C>),
    /// `g` holds `(ĝ¹..ĝ⁴)` for the field plane; `scalar` serves components `j ≥ 3`.
    Uniform { g: Vec<[C; 4]>, scalar: Vec<C> },
    Alternate(Vec<AlternateKernels>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    pub lambda: f64,
    /// The position-coordinate spec the kernels act on.
    pub spec: LatticeSpec,
    pub kernels: Kernels,
}

/// The position-coordinate model whose resolvent is solved for `spec`; for
/// deformation specs this is the formal `(q, v)` image with the same charges.
pub fn position_image(spec: &LatticeSpec) -> LatticeSpec {
    LatticeSpec { coords: Coords::Position, ..*spec }
}

/// `L^{(#)}` acting on `(q, v)` functions for the model of `spec`.
pub fn q_generator(spec: &LatticeSpec) -> GeneratorSpec {
    let variant = match spec.charge {
        Charge::Alternate => GeneratorVariant::PositionAlternate,
        _ => GeneratorVariant::MicroUniform,
    };
    GeneratorSpec { variant, b: spec.field(), gamma: spec.gamma }
}

pub fn kernel_set(spec: &LatticeSpec, lambda: f64) -> Result<KernelSet> {
    check_lambda(lambda)?;
    let ps = position_image(spec);
    let fft = LatticeFft::new(ps.n, ps.d);
    let n = ps.n as f64;
    let theta = |k: usize| -> Vec<f64> { fft.mode(k)[..ps.d].iter().map(|&x| x as f64 / n).collect() };
    let len = fft.len();
    let g = spec.gamma;
    let kernels = match spec.charge {
        Charge::Zero => Kernels::Scalar((0..len).map(|k| ghat_scalar(&theta(k), lambda, g)).collect()),
        Charge::Uniform => Kernels::Uniform {
            g: (0..len).map(|k| ghat_uniform(&theta(k), lambda, spec.b, g)).collect(),
            scalar: (0..len).map(|k| ghat_scalar(&theta(k), lambda, g)).collect(),
        },
        Charge::Alternate => {
            if spec.d != 1 || spec.dstar != 2 || spec.n % 2 != 0 {
                return Err(Error::InvalidSpec("alternate kernels need d=1, dstar=2, even n".into()));
            }
            Kernels::Alternate((0..len).map(|k| hhat_alternate(theta(k)[0], lambda, spec.b, g)).collect::<Result<_>>()?)
        }
    };
    Ok(KernelSet { lambda, spec: ps, kernels })
}

impl KernelSet {
    fn idft(&self, vals: impl Iterator<Item = C>) -> Vec<f64> {
        let fft = LatticeFft::new(self.spec.n, self.spec.d);
        let mut data: Vec<C> = vals.collect();
        fft.inverse(&mut data);
        data.iter().map(|z| z.re).collect()
    }

    /// Real-space kernels `z ↦ g(z)` (site-indexed lags), by name.
    pub fn real_space(&self) -> Vec<(&'static str, Vec<f64>)> {
        match &self.kernels {
            Kernels::Scalar(g) => vec![("g", self.idft(g.iter().copied()))],
            Kernels::Uniform { g, scalar } => vec![
                ("g1", self.idft(g.iter().map(|v| v[0]))),
                ("g2", self.idft(g.iter().map(|v| v[1]))),
                ("g3", self.idft(g.iter().map(|v| v[2]))),
                ("g4", self.idft(g.iter().map(|v| v[3]))),
                ("g", self.idft(scalar.iter().copied())),
            ],
            Kernels::Alternate(h) => vec![
                ("h1", self.idft(h.iter().map(|v| v.h1e))),
                ("h2", self.idft(h.iter().map(|v| v.h2e))),
                ("h3", self.idft(h.iter().map(|v| v.h3o + v.h3e))),
                ("h4", self.idft(h.iter().map(|v| v.h4o + v.h4e))),
            ],
        }
    }

    /// `max |g(z) + g(−z)|` and `max |Σ_z g(z)|` over all real-space kernels.
    pub fn symmetry_defects(&self) -> (f64, f64) {
        let fft = LatticeFft::new(self.spec.n, self.spec.d);
        let (mut anti, mut sum): (f64, f64) = (0.0, 0.0);
        for (_, g) in self.real_space() {
            for (z, v) in g.iter().enumerate() {
                anti = anti.max((v + g[fft.negate(z)]).abs());
            }
            sum = sum.max(g.iter().sum::<f64>().abs());
        }
        (anti, sum)
    }

    /// The resolvent solution `u` assembled on the bilinear templates.
    pub fn assemble(&self) -> Result<QuadraticObservable> {
        let ps = self.spec;
        let mut u = QuadraticObservable::zero(&ps)?;
        let sites = ps.sites();
        let lag = |x: usize, y: usize| -> usize {
            let (cx, cy) = (ps.site_coords(x), ps.site_coords(y));
            let mut c = [0usize; 3];
            for a in 0..ps.d {
                c[a] = (cx[a] + ps.n - cy[a]) % ps.n;
            }
            ps.site_index(&c[..ps.d])
        };
        let (q, v) = (|x, j| ps.pos_index(x, j), |x, j| ps.vel_index(x, j));
        let real = self.real_space();
        let k = |name: &str| -> &Vec<f64> { &real.iter().find(|(n, _)| *n == name).expect("kernel present").1 };
        for x in 0..sites {
            for y in 0..sites {
                let z = lag(x, y);
                match &self.kernels {
                    Kernels::Scalar(_) => {
                        for j in 0..ps.dstar {
                            u.add_bilinear(q(x, j), v(y, j), k("g")[z]);
                        }
                    }
                    Kernels::Uniform { .. } => {
                        let (g1, g2, g3, g4) = (k("g1")[z], k("g2")[z], k("g3")[z], k("g4")[z]);
                        u.add_bilinear(q(x, 0), q(y, 1), g1);
                        u.add_bilinear(q(x, 0), v(y, 0), g2);
                        u.add_bilinear(q(x, 1), v(y, 1), g2);
                        u.add_bilinear(q(x, 0), v(y, 1), g3);
                        u.add_bilinear(q(x, 1), v(y, 0), -g3);
                        u.add_bilinear(v(x, 0), v(y, 1), g4);
                        for j in 2..ps.dstar {
                            u.add_bilinear(q(x, j), v(y, j), k("g")[z]);
                        }
                    }
                    Kernels::Alternate(_) => {
                        let sy = if y % 2 == 0 { 1.0 } else { -1.0 };
                        if (x + ps.n - y) % 2 == 0 {
                            u.add_bilinear(q(x, 0), q(y, 1), sy * k("h1")[z]);
                            u.add_bilinear(v(x, 0), v(y, 1), sy * k("h2")[z]);
                        }
                        let (h3, h4) = (k("h3")[z], k("h4")[z]);
                        u.add_bilinear(q(x, 0), v(y, 0), h3);
                        u.add_bilinear(q(x, 1), v(y, 1), h3);
                        u.add_bilinear(q(x, 0), v(y, 1), sy * h4);
                        u.add_bilinear(q(x, 1), v(y, 0), -sy * h4);
                    }
                }
            }
        }
        Ok(u)
    }
}

/// The resolvent solution for `spec` (on its position image).
pub fn build_u(spec: &LatticeSpec, lambda: f64) -> Result<QuadraticObservable> {
    kernel_set(spec, lambda)?.assemble()
}

/// `‖(λ − L^{(#)})u − Σ_x j^1‖` for the built `u`.
pub fn resolvent_residual(spec: &LatticeSpec, lambda: f64) -> Result<f64> {
    let u = build_u(spec, lambda)?;
    let rhs = total_current_observable(&u.spec, 0)?;
    residual_norm(lambda, &u, &rhs, &q_generator(spec))
}

fn require_chain(spec: &LatticeSpec) -> Result<()> {
    if spec.coords != Coords::Deformation || spec.d != 1 || spec.dstar != 2 {
        return Err(Error::InvalidSpec("reduction needs the deformation chain d=1, dstar=2".into()));
    }
    Ok(())
}

/// `Φ: (r, v) ↦ (q, v)` as a matrix acting on flattened states.
pub fn phi_matrix(spec: &LatticeSpec) -> Result<DMatrix<f64>> {
    require_chain(spec)?;
    let n = spec.n;
    let m = r_to_q_matrix(n);
    let len = spec.state_len();
    let mut a = DMatrix::zeros(len, len);
    for x in 0..n {
        for y in 0..n {
            for j in 0..2 {
                a[(spec.pos_index(x, j), spec.pos_index(y, j))] = m[x][y];
            }
        }
    }
    for i in spec.half_len()..len {
        a[(i, i)] = 1.0;
    }
    Ok(a)
}

type Functional = Vec<(usize, f64)>;

fn mean_functional(spec: &LatticeSpec, j: usize, vel: bool, alternating: bool) -> Functional {
    let n = spec.n;
    (0..n)
        .map(|x| {
            let idx = if vel { spec.vel_index(x, j) } else { spec.pos_index(x, j) };
            let s = if alternating && x % 2 == 1 { -1.0 } else { 1.0 };
            (idx, s / n as f64)
        })
        .collect()
}

fn add_product(u: &mut QuadraticObservable, a: &Functional, b: &Functional, c: f64) {
    for &(i, ai) in a {
        for &(k, bk) in b {
            u.add_bilinear(i, k, c * ai * bk);
        }
    }
}

/// Solution `v**` of `(λ − L_r^{(#)}) v** = N Σ_j r̄^j v̄^j`.
///
/// The overall sign is the one fixed by the equation (it reduces to
/// `(N/λ) Σ_j r̄^j v̄^j` at `B = 0` for every variant).
pub fn v_star_star(spec: &LatticeSpec, lambda: f64) -> Result<QuadraticObservable> {
    require_chain(spec)?;
    check_lambda(lambda)?;
    let nf = spec.n as f64;
    let b = spec.field();
    let rb = |j| mean_functional(spec, j, false, false);
    let vb = |j| mean_functional(spec, j, true, false);
    let rc = |j| mean_functional(spec, j, false, true);
    let vc = |j| mean_functional(spec, j, true, true);
    let mut u = QuadraticObservable::zero(spec)?;
    match spec.charge {
        Charge::Zero => {
            for j in 0..2 {
                add_product(&mut u, &rb(j), &vb(j), nf / lambda);
            }
        }
        Charge::Uniform => {
            let c = nf / (lambda * lambda + b * b);
            add_product(&mut u, &rb(0), &vb(0), c * lambda);
            add_product(&mut u, &rb(0), &vb(1), c * b);
            add_product(&mut u, &rb(1), &vb(0), -c * b);
            add_product(&mut u, &rb(1), &vb(1), c * lambda);
        }
        Charge::Alternate => {
            let g = spec.gamma;
            let k = lambda * lambda + 4.0 * g * lambda + 4.0;
            let c = nf / (lambda * (k + b * b));
            add_product(&mut u, &rb(0), &vb(0), c * k);
            add_product(&mut u, &rb(1), &vc(0), -c * b * lambda);
            add_product(&mut u, &rb(0), &vc(1), c * b * lambda);
            add_product(&mut u, &rb(1), &vb(1), c * k);
            add_product(&mut u, &rb(0), &rc(1), 2.0 * c * b);
            add_product(&mut u, &rb(1), &rc(0), -2.0 * c * b);
        }
    }
    Ok(u)
}

/// `v = u∘Φ − v**`, the solution of `(λ − L_r^{(#)}) v = Σ_x j^1_{x,x+1}`.
pub fn canonical_solution(spec: &LatticeSpec, lambda: f64) -> Result<QuadraticObservable> {
    let u = build_u(spec, lambda)?;
    let vs = u.pullback(&phi_matrix(spec)?, spec)?;
    vs.sub(&v_star_star(spec, lambda)?)
}

/// Outcome of the coordinate-reduction checks for one parameter tuple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReductionReport {
    /// `max_j |Σ_x ∂u/∂q_x^j|` of the position-space solution.
    pub shift_sensitivity: f64,
    /// `‖(λ − L_r)(u∘Φ) − Σ_x j^1 − N Σ_j r̄^j v̄^j‖`.
    pub pullback_residual: f64,
    /// `‖(λ − L_r) v** − N Σ_j r̄^j v̄^j‖`.
    pub vss_residual: f64,
    /// `‖(λ − L_r)(u∘Φ − v**) − Σ_x j^1‖`.
    pub full_residual: f64,
}

pub fn certify_reduction(spec: &LatticeSpec, lambda: f64) -> Result<ReductionReport> {
    require_chain(spec)?;
    let u = build_u(spec, lambda)?;
    let gr = GeneratorSpec::for_spec(spec);
    let ur = u.pullback(&phi_matrix(spec)?, spec)?;
    let cur = total_current_observable(spec, 0)?;
    let mean = mean_product_observable(spec)?;
    let vss = v_star_star(spec, lambda)?;
    Ok(ReductionReport {
        shift_sensitivity: u.shift_sensitivity(),
        pullback_residual: residual_norm(lambda, &ur, &cur.add(&mean)?, &gr)?,
        vss_residual: residual_norm(lambda, &vss, &mean, &gr)?,
        full_residual: residual_norm(lambda, &ur.sub(&vss)?, &cur, &gr)?,
    })
}

/// `D̃_N(λ) = E_β[v_{λ,N} j^1_{0,1}]` exactly, by Gaussian moment
/// calculus under the product canonical measure (`τ = 0`):
/// `E[zᵀKz · zᵀJz] = 2 tr(KJ)/β²` when `J` has zero diagonal.
pub fn finite_laplace_canonical(spec: &LatticeSpec, lambda: f64, beta: f64) -> Result<f64> {
    require_chain(spec)?;
    if !(beta > 0.0) {
        return Err(Error::InvalidArgument("beta must be > 0".into()));
    }
    let u = build_u(spec, lambda)?;
    let vss = v_star_star(spec, lambda)?;
    let m = r_to_q_matrix(spec.n);
    // (u∘Φ)[r_0^j, v_y^j] = Σ_x Φ[q_x, r_0] u[q_x^j, v_y^j].
    let mut acc = 0.0;
    for j in 0..2 {
        for y in [0, 1] {
            let vy = spec.vel_index(y, j);
            let pulled: f64 = (0..spec.n).map(|x| m[x][0] * u.kernel[(spec.pos_index(x, j), vy)]).sum();
            acc += pulled - vss.kernel[(spec.pos_index(0, j), vy)];
        }
    }
    // j^1_{0,1} = −½ Σ_j r_0^j (v_0^j + v_1^j) has symmetric entries −¼.
    Ok(-acc / (beta * beta))
}

/// Which resolvent identity a certification case exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertVariant {
    MicroUniform,
    #[serde(rename = "canonical-0")]
    Canonical0,
    #[serde(rename = "canonical-i")]
    CanonicalI,
    #[serde(rename = "canonical-ii")]
    CanonicalII,
}

impl CertVariant {
    pub const ALL: [CertVariant; 4] =
        [CertVariant::MicroUniform, CertVariant::Canonical0, CertVariant::CanonicalI, CertVariant::CanonicalII];

    pub fn spec(self, n: usize, b: f64, gamma: f64) -> Result<LatticeSpec> {
        match self {
            CertVariant::MicroUniform => LatticeSpec::position(1, 2, n, b, gamma),
            CertVariant::Canonical0 => LatticeSpec::deformation(n, b, gamma, Charge::Zero),
            CertVariant::CanonicalI => LatticeSpec::deformation(n, b, gamma, Charge::Uniform),
            CertVariant::CanonicalII => LatticeSpec::deformation(n, b, gamma, Charge::Alternate),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertifyOptions {
    pub n: usize,
    pub lambdas: Vec<f64>,
    pub b: Vec<f64>,
    pub gamma: Vec<f64>,
    pub variants: Vec<CertVariant>,
    /// Bound on `‖(λ − L)u − rhs‖` for the kernels and the reduction.
    pub tol_residual: f64,
    /// Bound on the `v**` identities.
    pub tol_identity: f64,
    /// Negative control: added to one diagonal-adjacent kernel entry of `u`.
    #[serde(default)]
    pub perturb: Option<f64>,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        CertifyOptions {
            n: 8,
            lambdas: vec![0.5, 1.0, 2.0],
            b: vec![0.0, 1.0, -2.0],
            gamma: vec![0.5, 1.0],
            variants: CertVariant::ALL.to_vec(),
            tol_residual: 1e-10,
            tol_identity: 1e-12,
            perturb: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertCase {
    pub variant: CertVariant,
    pub n: usize,
    pub lambda: f64,
    pub b: f64,
    pub gamma: f64,
    pub residual: f64,
    pub kernel_antisymmetry: f64,
    pub kernel_sum: f64,
    pub reduction: Option<ReductionReport>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificationReport {
    pub schema_version: u32,
    pub options: CertifyOptions,
    pub cases: Vec<CertCase>,
    pub all_pass: bool,
}

fn certify_case(v: CertVariant, lambda: f64, b: f64, gamma: f64, o: &CertifyOptions) -> Result<CertCase> {
    let spec = v.spec(o.n, b, gamma)?;
    let ks = kernel_set(&spec, lambda)?;
    let (anti, sum) = ks.symmetry_defects();
    let mut u = ks.assemble()?;
    if let Some(eps) = o.perturb {
        let (i, k) = (u.spec.pos_index(0, 0), u.spec.vel_index(1, 0));
        u.add_bilinear(i, k, eps);
    }
    let rhs = total_current_observable(&u.spec, 0)?;
    let residual = residual_norm(lambda, &u, &rhs, &q_generator(&spec))?;
    let reduction = match v {
        CertVariant::MicroUniform => None,
        _ => Some(certify_reduction(&spec, lambda)?),
    };
    let tr = o.tol_residual;
    let mut pass = residual <= tr && anti <= 1e-12 && sum <= 1e-12;
    if let Some(r) = &reduction {
        pass &= r.shift_sensitivity <= tr
            && r.pullback_residual <= tr
            && r.full_residual <= tr
            && r.vss_residual <= o.tol_identity;
    }
    Ok(CertCase { variant: v, n: o.n, lambda, b, gamma, residual, kernel_antisymmetry: anti, kernel_sum: sum, reduction, pass })
}

/// Runs the full certification matrix (parallel over parameter tuples).
pub fn certify(opts: &CertifyOptions) -> Result<CertificationReport> {
    let mut tuples = Vec::new();
    for &v in &opts.variants {
        for &l in &opts.lambdas {
            for &b in &opts.b {
                for &g in &opts.gamma {
                    tuples.push((v, l, b, g));
                }
            }
        }
    }
    let cases = tuples
        .par_iter()
        .map(|&(v, l, b, g)| certify_case(v, l, b, g, opts))
        .collect::<Result<Vec<_>>>()?;
    let all_pass = cases.iter().all(|c| c.pass);
    Ok(CertificationReport { schema_version: 1, options: opts.clone(), cases, all_pass })
}

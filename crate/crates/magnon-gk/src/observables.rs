//! Exact algebra of degree-≤2 observables `u(z) = zᵀKz + ℓ·z + c` and exact
//! application of the generators to them.
//!
//! For a linear drift `ż = Mz`, the first-order part acts as
//! `K ↦ MᵀK + KM`, `ℓ ↦ Mᵀℓ`. The exchange part `S f = Σ_{bonds,j} f∘P − f`
//! acts by permutation conjugation, `K ↦ Σ (PKP − K)`. Everything is dense
//! and exact up to floating-point arithmetic.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::lattice::{linear_drift, Charge, Coords, LatticeSpec, PhaseState};

/// Flattened size cap for dense kernels, `N^d · dstar ≤ 4096`.
pub const DENSE_CAP: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticObservable {
    pub spec: LatticeSpec,
    pub kernel: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub constant: f64,
}

impl QuadraticObservable {
    pub fn zero(spec: &LatticeSpec) -> Result<Self> {
        if spec.half_len() > DENSE_CAP {
            return Err(Error::CapExceeded { size: spec.half_len(), cap: DENSE_CAP });
        }
        let n = spec.state_len();
        Ok(QuadraticObservable {
            spec: *spec,
            kernel: DMatrix::zeros(n, n),
            linear: DVector::zeros(n),
            constant: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.kernel.nrows()
    }

    /// Adds `c · z_i z_k` keeping the kernel symmetric.
    pub fn add_bilinear(&mut self, i: usize, k: usize, c: f64) {
        if i == k {
            self.kernel[(i, i)] += c;
        } else {
            self.kernel[(i, k)] += 0.5 * c;
            self.kernel[(k, i)] += 0.5 * c;
        }
    }

    pub fn eval_flat(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: z.len() });
        }
        let zv = DVector::from_column_slice(z);
        Ok(zv.dot(&(&self.kernel * &zv)) + self.linear.dot(&zv) + self.constant)
    }

    pub fn eval(&self, s: &PhaseState) -> Result<f64> {
        self.eval_flat(&s.flat())
    }

    pub fn scaled(&self, a: f64) -> Self {
        QuadraticObservable {
            spec: self.spec,
            kernel: &self.kernel * a,
            linear: &self.linear * a,
            constant: self.constant * a,
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        Ok(QuadraticObservable {
            spec: self.spec,
            kernel: &self.kernel + &other.kernel,
            linear: &self.linear + &other.linear,
            constant: self.constant + other.constant,
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scaled(-1.0))
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        Ok(())
    }

    /// Frobenius norm of the kernel plus the Euclidean norm of the linear part
    /// plus `|constant|`.
    pub fn norm(&self) -> f64 {
        self.kernel.norm() + self.linear.norm() + self.constant.abs()
    }

    /// `u ∘ A` for a linear change of variables `z_old = A z_new`.
    pub fn pullback(&self, a: &DMatrix<f64>, new_spec: &LatticeSpec) -> Result<Self> {
        if a.nrows() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: a.nrows() });
        }
        Ok(QuadraticObservable {
            spec: *new_spec,
            kernel: a.transpose() * &self.kernel * a,
            linear: a.transpose() * &self.linear,
            constant: self.constant,
        })
    }

    /// `max_j |Σ_x ∂u/∂q_x^j|` evaluated as kernel row sums and linear
    /// coefficient sums over the position block. Zero iff `u` is invariant
    /// under global position shifts.
    pub fn shift_sensitivity(&self) -> f64 {
        let spec = &self.spec;
        let ds = spec.dstar;
        let mut worst: f64 = 0.0;
        for j in 0..ds {
            let idx: Vec<usize> = (0..spec.sites()).map(|x| spec.pos_index(x, j)).collect();
            // ∂u/∂z = 2Kz + ℓ; summing over the shift direction s gives 2Ksᵀ-row sums.
            for col in 0..self.dim() {
                let s: f64 = idx.iter().map(|&i| self.kernel[(i, col)]).sum();
                worst = worst.max(2.0 * s.abs());
            }
            let l: f64 = idx.iter().map(|&i| self.linear[i]).sum();
            worst = worst.max(l.abs());
        }
        worst
    }
}

/// Which generator acts on the observables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GeneratorVariant {
    /// `L = A + BG + γS` in position coordinates (field set to 0 gives `L^{(0)}`).
    MicroUniform,
    /// `L^{(ii)}` written formally in position coordinates (`d = 1`).
    PositionAlternate,
    /// `L_r^{(0)}`, `L_r^{(i)}`, `L_r^{(ii)}` in deformation coordinates.
    Canonical0,
    CanonicalI,
    CanonicalII,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorSpec {
    pub variant: GeneratorVariant,
    pub b: f64,
    pub gamma: f64,
}

impl GeneratorSpec {
    /// The generator naturally attached to a spec.
    pub fn for_spec(spec: &LatticeSpec) -> Self {
        let variant = match (spec.coords, spec.charge) {
            (Coords::Position, Charge::Alternate) => GeneratorVariant::PositionAlternate,
            (Coords::Position, _) => GeneratorVariant::MicroUniform,
            (Coords::Deformation, Charge::Zero) => GeneratorVariant::Canonical0,
            (Coords::Deformation, Charge::Uniform) => GeneratorVariant::CanonicalI,
            (Coords::Deformation, Charge::Alternate) => GeneratorVariant::CanonicalII,
        };
        GeneratorSpec { variant, b: spec.field(), gamma: spec.gamma }
    }

    fn coords(&self) -> Coords {
        match self.variant {
            GeneratorVariant::MicroUniform | GeneratorVariant::PositionAlternate => Coords::Position,
            _ => Coords::Deformation,
        }
    }

    fn charge(&self) -> Charge {
        match self.variant {
            GeneratorVariant::MicroUniform | GeneratorVariant::CanonicalI => Charge::Uniform,
            GeneratorVariant::Canonical0 => Charge::Zero,
            GeneratorVariant::PositionAlternate | GeneratorVariant::CanonicalII => Charge::Alternate,
        }
    }

    pub fn check(&self, spec: &LatticeSpec) -> Result<()> {
        if spec.coords != self.coords() {
            return Err(Error::InvalidArgument(format!(
                "generator {:?} does not act on {:?} coordinates",
                self.variant, spec.coords
            )));
        }
        if self.charge() == Charge::Alternate && (spec.d != 1 || spec.dstar != 2 || spec.n % 2 != 0) {
            return Err(Error::InvalidArgument("alternate generator needs d=1, dstar=2, even n".into()));
        }
        Ok(())
    }
}

/// `Lu` as a quadratic observable.
pub fn apply_generator(u: &QuadraticObservable, g: &GeneratorSpec) -> Result<QuadraticObservable> {
    let spec = u.spec;
    g.check(&spec)?;
    if u.dim() != spec.state_len() {
        return Err(Error::DimensionMismatch { expected: spec.state_len(), got: u.dim() });
    }
    let n = u.dim();
    let drift = linear_drift(&spec, g.charge(), g.b);
    // KM via the sparse drift.
    let mut km = DMatrix::<f64>::zeros(n, n);
    let mut lin = DVector::<f64>::zeros(n);
    for &(r, c, m) in &drift {
        // (KM)[:, c] += m K[:, r]
        for i in 0..n {
            km[(i, c)] += m * u.kernel[(i, r)];
        }
        lin[c] += m * u.linear[r];
    }
    let mut kernel = &km + km.transpose();

    // Exchange part.
    let top = spec.topology();
    let k = &u.kernel;
    let mut sk = DMatrix::<f64>::zeros(n, n);
    let mut sl = DVector::<f64>::zeros(n);
    for a in 0..spec.d {
        for x in 0..spec.sites() {
            let y = top.fwd[a][x];
            for j in 0..spec.dstar {
                let p = spec.vel_index(x, j);
                let q = spec.vel_index(y, j);
                let perm = |i: usize| {
                    if i == p {
                        q
                    } else if i == q {
                        p
                    } else {
                        i
                    }
                };
                for i in 0..n {
                    for &jj in &[p, q] {
                        let delta = k[(perm(i), perm(jj))] - k[(i, jj)];
                        sk[(i, jj)] += delta;
                        if i != p && i != q {
                            sk[(jj, i)] += delta;
                        }
                    }
                }
                sl[p] += u.linear[q] - u.linear[p];
                sl[q] += u.linear[p] - u.linear[q];
            }
        }
    }
    kernel += sk * g.gamma;
    lin += sl * g.gamma;
    Ok(QuadraticObservable { spec, kernel, linear: lin, constant: 0.0 })
}

/// `‖(λ − L)u − rhs‖` (kernel Frobenius + linear + constant).
pub fn residual_norm(
    lambda: f64,
    u: &QuadraticObservable,
    rhs: &QuadraticObservable,
    g: &GeneratorSpec,
) -> Result<f64> {
    let lu = apply_generator(u, g)?;
    Ok(u.scaled(lambda).sub(&lu)?.sub(rhs)?.norm())
}

/// Total energy `Σ_x E_x` as an observable.
pub fn energy_observable(spec: &LatticeSpec) -> Result<QuadraticObservable> {
    let mut u = QuadraticObservable::zero(spec)?;
    let ds = spec.dstar;
    let top = spec.topology();
    for x in 0..spec.sites() {
        for j in 0..ds {
            let v = spec.vel_index(x, j);
            u.add_bilinear(v, v, 0.5);
            match spec.coords {
                Coords::Position => {
                    for a in 0..spec.d {
                        let p = spec.pos_index(x, j);
                        let py = spec.pos_index(top.fwd[a][x], j);
                        // |q_y − q_x|² / 2 per bond.
                        u.add_bilinear(p, p, 0.5);
                        u.add_bilinear(py, py, 0.5);
                        u.add_bilinear(p, py, -1.0);
                    }
                }
                Coords::Deformation => {
                    let p = spec.pos_index(x, j);
                    u.add_bilinear(p, p, 0.5);
                }
            }
        }
    }
    Ok(u)
}

/// `Σ_x j^a_{x,x+e_a}` as an observable.
pub fn total_current_observable(spec: &LatticeSpec, a: usize) -> Result<QuadraticObservable> {
    let mut u = QuadraticObservable::zero(spec)?;
    let top = spec.topology();
    for x in 0..spec.sites() {
        let y = top.fwd[a][x];
        for j in 0..spec.dstar {
            let (vx, vy) = (spec.vel_index(x, j), spec.vel_index(y, j));
            match spec.coords {
                Coords::Position => {
                    let (qx, qy) = (spec.pos_index(x, j), spec.pos_index(y, j));
                    for (qi, s) in [(qy, -0.5), (qx, 0.5)] {
                        u.add_bilinear(qi, vx, s);
                        u.add_bilinear(qi, vy, s);
                    }
                }
                Coords::Deformation => {
                    let r = spec.pos_index(x, j);
                    u.add_bilinear(r, vx, -0.5);
                    u.add_bilinear(r, vy, -0.5);
                }
            }
        }
    }
    Ok(u)
}

/// `N Σ_j r̄^j v̄^j` (deformation coordinates).
pub fn mean_product_observable(spec: &LatticeSpec) -> Result<QuadraticObservable> {
    let mut u = QuadraticObservable::zero(spec)?;
    let n = spec.sites() as f64;
    for x in 0..spec.sites() {
        for y in 0..spec.sites() {
            for j in 0..spec.dstar {
                u.add_bilinear(spec.pos_index(x, j), spec.vel_index(y, j), 1.0 / n);
            }
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn all_specs() -> Vec<(LatticeSpec, GeneratorSpec)> {
        let mut v = Vec::new();
        for s in [
            LatticeSpec::position(1, 2, 6, 1.3, 0.7).unwrap(),
            LatticeSpec::position(2, 3, 3, -0.5, 1.0).unwrap(),
            LatticeSpec::deformation(6, 1.1, 0.5, Charge::Zero).unwrap(),
            LatticeSpec::deformation(6, 1.1, 0.5, Charge::Uniform).unwrap(),
            LatticeSpec::deformation(6, 1.1, 0.5, Charge::Alternate).unwrap(),
        ] {
            v.push((s, GeneratorSpec::for_spec(&s)));
        }
        let pa = LatticeSpec {
            coords: Coords::Position,
            ..LatticeSpec::deformation(6, 0.9, 1.0, Charge::Alternate).unwrap()
        };
        v.push((pa, GeneratorSpec { variant: GeneratorVariant::PositionAlternate, b: 0.9, gamma: 1.0 }));
        v
    }

    fn rand_z(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn energy_is_annihilated() {
        for (s, g) in all_specs() {
            let e = energy_observable(&s).unwrap();
            let le = apply_generator(&e, &g).unwrap();
            assert!(le.norm() < 1e-12, "{:?}: {}", g.variant, le.norm());
        }
    }

    #[test]
    fn energy_observable_matches_lattice() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (s, _) in all_specs() {
            let z = rand_z(s.state_len(), &mut rng);
            let st = PhaseState::from_flat(&s, &z).unwrap();
            let u = energy_observable(&s).unwrap();
            let want = crate::lattice::total_energy(&st);
            assert!((u.eval(&st).unwrap() - want).abs() < 1e-12);
            let j = total_current_observable(&s, 0).unwrap();
            let want = crate::lattice::total_currents(&st)[0];
            assert!((j.eval(&st).unwrap() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn field_acts_on_linear_velocity_sum() {
        // u = Σ v¹: the field part of the drift maps it to B Σ v².
        let s = LatticeSpec::position(1, 2, 5, 1.5, 1.0).unwrap();
        let mut u = QuadraticObservable::zero(&s).unwrap();
        for x in 0..5 {
            u.linear[s.vel_index(x, 0)] = 1.0;
        }
        let g = GeneratorSpec::for_spec(&s);
        let lu = apply_generator(&u, &g).unwrap();
        assert!(lu.kernel.norm() == 0.0);
        for x in 0..5 {
            assert!((lu.linear[s.vel_index(x, 1)] - 1.5).abs() < 1e-15);
            assert!(lu.linear[s.vel_index(x, 0)].abs() < 1e-15);
        }
        // Finite-difference oracle along the exact flow direction.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let z = rand_z(s.state_len(), &mut rng);
        let drift = linear_drift(&s, s.charge, s.b);
        let h = 1e-6;
        let mut zp = z.clone();
        for &(i, j, m) in &drift {
            zp[i] += h * m * z[j];
        }
        let fd = (u.eval_flat(&zp).unwrap() - u.eval_flat(&z).unwrap()) / h;
        assert!((fd - lu.eval_flat(&z).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn exchange_on_single_square() {
        let s = LatticeSpec::position(1, 2, 6, 0.0, 1.0).unwrap();
        let mut u = QuadraticObservable::zero(&s).unwrap();
        u.add_bilinear(s.vel_index(0, 0), s.vel_index(0, 0), 1.0);
        // Isolate S: drop the drift by comparing with γ scaling.
        let g1 = GeneratorSpec { variant: GeneratorVariant::MicroUniform, b: 0.0, gamma: 1.0 };
        let g2 = GeneratorSpec { gamma: 2.0, ..g1 };
        let su = apply_generator(&u, &g2).unwrap().sub(&apply_generator(&u, &g1).unwrap()).unwrap();
        let mut want = QuadraticObservable::zero(&s).unwrap();
        want.add_bilinear(s.vel_index(1, 0), s.vel_index(1, 0), 1.0);
        want.add_bilinear(s.vel_index(5, 0), s.vel_index(5, 0), 1.0);
        want.add_bilinear(s.vel_index(0, 0), s.vel_index(0, 0), -2.0);
        assert!(su.sub(&want).unwrap().norm() < 1e-14);
    }

    #[test]
    fn exchange_matches_bruteforce_on_random_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = LatticeSpec::position(2, 2, 3, 0.0, 1.0).unwrap();
        let n = s.state_len();
        let mut u = QuadraticObservable::zero(&s).unwrap();
        for i in 0..n {
            for k in i..n {
                u.add_bilinear(i, k, rng.gen_range(-1.0..1.0));
            }
            u.linear[i] = rng.gen_range(-1.0..1.0);
        }
        let g1 = GeneratorSpec { variant: GeneratorVariant::MicroUniform, b: 0.0, gamma: 1.0 };
        let g0 = GeneratorSpec { gamma: 2.0, ..g1 };
        let su = apply_generator(&u, &g0).unwrap().sub(&apply_generator(&u, &g1).unwrap()).unwrap();
        let z = rand_z(n, &mut rng);
        let top = s.topology();
        let f0 = u.eval_flat(&z).unwrap();
        let mut want = 0.0;
        for a in 0..s.d {
            for x in 0..s.sites() {
                for j in 0..s.dstar {
                    let mut zz = z.clone();
                    zz.swap(s.vel_index(x, j), s.vel_index(top.fwd[a][x], j));
                    want += u.eval_flat(&zz).unwrap() - f0;
                }
            }
        }
        assert!((su.eval_flat(&z).unwrap() - want).abs() < 1e-11);
    }

    #[test]
    fn drift_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (s, g) in all_specs() {
            let n = s.state_len();
            let mut u = QuadraticObservable::zero(&s).unwrap();
            for _ in 0..20 {
                let (i, k) = (rng.gen_range(0..n), rng.gen_range(0..n));
                u.add_bilinear(i, k, rng.gen_range(-1.0..1.0));
            }
            // gamma → tiny isolates the drift.
            let gd = GeneratorSpec { gamma: 1e-300, ..g };
            let lu = apply_generator(&u, &gd).unwrap();
            let z = rand_z(n, &mut rng);
            let drift = linear_drift(&s, g_charge(&g), g.b);
            let mut dz = vec![0.0; n];
            for &(i, j, m) in &drift {
                dz[i] += m * z[j];
            }
            let h = 1e-6;
            let zp: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a + h * b).collect();
            let zm: Vec<f64> = z.iter().zip(&dz).map(|(a, b)| a - h * b).collect();
            let fd = (u.eval_flat(&zp).unwrap() - u.eval_flat(&zm).unwrap()) / (2.0 * h);
            assert!((fd - lu.eval_flat(&z).unwrap()).abs() < 1e-8);
        }
    }

    fn g_charge(g: &GeneratorSpec) -> Charge {
        g.charge()
    }

    #[test]
    fn eval_matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = LatticeSpec::position(1, 2, 4, 1.0, 1.0).unwrap();
        let n = s.state_len();
        let mut u = QuadraticObservable::zero(&s).unwrap();
        for i in 0..n {
            for k in 0..=i {
                u.add_bilinear(i, k, rng.gen_range(-1.0..1.0));
            }
        }
        u.constant = 0.25;
        let z = rand_z(n, &mut rng);
        let mut want = u.constant;
        for i in 0..n {
            for k in 0..n {
                want += z[i] * u.kernel[(i, k)] * z[k];
            }
        }
        assert!((u.eval_flat(&z).unwrap() - want).abs() < 1e-12);
        assert!(u.kernel == u.kernel.transpose());
        assert!(u.eval_flat(&z[1..]).is_err());
    }

    #[test]
    fn residual_lower_bound_under_perturbation() {
        let s = LatticeSpec::position(1, 2, 4, 1.0, 1.0).unwrap();
        let g = GeneratorSpec::for_spec(&s);
        let zero = QuadraticObservable::zero(&s).unwrap();
        assert_eq!(residual_norm(1.0, &zero, &zero, &g).unwrap(), 0.0);
        let mut p = zero.clone();
        p.kernel[(0, 0)] = 1e-3;
        let r = residual_norm(0.5, &p, &zero, &g).unwrap();
        assert!(r >= 0.5 * 1e-3 - 1e-12);
    }
}

//! Dense exact flow for small lattices of any charge pattern.
//!
//! In energy-orthonormal coordinates `w` (where `H = ½|w|²`) the drift `M_w`
//! is skew, so `M_wᵀM_w = −M_w²` is symmetric positive semidefinite with
//! eigenpairs `(W², U)` and
//! `exp(M_w τ) = U cos(Wτ) Uᵀ + M_w U (sin(Wτ)/W) Uᵀ`.
//!
//! Deformation coordinates are already orthonormal. In position coordinates
//! the non-zero Laplacian modes are rescaled, `p = D^{1/2} U_nzᵀ q`, and the
//! mean position (which has no potential energy) is carried separately by
//! integrating the mean velocity exactly.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use super::Propagator;
use crate::error::{Error, Result};
use crate::lattice::{linear_drift, Coords, LatticeSpec, PhaseState};
use crate::observables::DENSE_CAP;

/// Frequencies below this fraction of the largest are treated as exact zeros
/// (eigenvalues of `M_wᵀM_w` are accurate to `ε‖M_w‖²`, so computed null
/// frequencies are `O(√ε)`).
const NULL_MODE_TOL: f64 = 1e-7;

/// Symmetric eigendecomposition `(λ, U)` via faer.
///
/// nalgebra's `SymmetricEigen` was measured to stop with residuals of 1e-9 to
/// 1e-4 on the clustered spectra that occur here (repeated `±k` pairs and
/// rotation planes, nearly diagonal inputs); faer's solver stays at rounding
/// level on the same matrices.
fn symmetric_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let m = faer::Mat::<f64>::from_fn(n, n, |i, j| a[(i, j)]);
    let e = m
        .self_adjoint_eigen(faer::Side::Lower)
        .expect("symmetric eigendecomposition of a finite matrix");
    let (u, s) = (e.U(), e.S().column_vector());
    (DVector::from_fn(n, |i, _| s[i]), DMatrix::from_fn(n, n, |i, j| u[(i, j)]))
}

#[derive(Debug)]
pub struct DenseCache {
    spec: LatticeSpec,
    /// Eigenvectors of `M_wᵀM_w`.
    u: DMatrix<f64>,
    mu: DMatrix<f64>,
    freq: DVector<f64>,
    /// Position coordinates: `q_nz = G p` with `G = U_nz D^{-1/2}` (sites × modes).
    g: Option<DMatrix<f64>>,
    /// `S = D^{1/2} U_nzᵀ` (modes × sites).
    s: Option<DMatrix<f64>>,
    /// Rows: mean-velocity functional of component `j` applied to `U` and `M_w U`.
    vbar_u: Option<DMatrix<f64>>,
    vbar_mu: Option<DMatrix<f64>>,
    /// Offset of the velocity block in `w`.
    voff: usize,
}

impl DenseCache {
    pub fn new(spec: &LatticeSpec) -> Result<Self> {
        spec.validate()?;
        let ds = spec.dstar;
        let sites = spec.sites();
        let (p_modes, dim) = match spec.coords {
            Coords::Position => (sites - 1, (sites - 1) * ds + sites * ds),
            Coords::Deformation => (sites, 2 * sites * ds),
        };
        if dim > DENSE_CAP {
            return Err(Error::CapExceeded { size: dim, cap: DENSE_CAP });
        }
        let voff = p_modes * ds;
        let drift = linear_drift(spec, spec.charge, spec.field());
        let half = spec.half_len();
        let mut mw = DMatrix::<f64>::zeros(dim, dim);
        let (mut g, mut s) = (None, None);
        match spec.coords {
            Coords::Deformation => {
                for &(r, c, v) in &drift {
                    mw[(r, c)] += v;
                }
            }
            Coords::Position => {
                // Scalar stiffness K = −Δ.
                let top = spec.topology();
                let mut k = DMatrix::<f64>::zeros(sites, sites);
                for x in 0..sites {
                    for a in 0..spec.d {
                        for y in [top.fwd[a][x], top.bwd[a][x]] {
                            k[(x, y)] -= 1.0;
                            k[(x, x)] += 1.0;
                        }
                    }
                }
                let (evals, evecs) = symmetric_eigen(&k);
                let zero = evals
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(i, _)| i)
                    .unwrap();
                let nz: Vec<usize> = (0..sites).filter(|&i| i != zero).collect();
                let mut gm = DMatrix::<f64>::zeros(sites, p_modes);
                let mut sm = DMatrix::<f64>::zeros(p_modes, sites);
                for (m, &i) in nz.iter().enumerate() {
                    let lam = evals[i];
                    let rt = lam.sqrt();
                    for x in 0..sites {
                        let u = evecs[(x, i)];
                        gm[(x, m)] = u / rt;
                        sm[(m, x)] = u * rt;
                    }
                }
                for m in 0..p_modes {
                    for x in 0..sites {
                        let c = sm[(m, x)];
                        if c != 0.0 {
                            for j in 0..ds {
                                mw[(m * ds + j, voff + x * ds + j)] += c;
                                mw[(voff + x * ds + j, m * ds + j)] -= c;
                            }
                        }
                    }
                }
                // Velocity–velocity (magnetic) part of the drift.
                for &(r, c, v) in &drift {
                    if r >= half && c >= half {
                        mw[(voff + r - half, voff + c - half)] += v;
                    }
                }
                g = Some(gm);
                s = Some(sm);
            }
        }
        let (w2, u) = symmetric_eigen(&(mw.transpose() * &mw));
        let mut freq = w2.map(|l| l.max(0.0).sqrt());
        let mut mu = &mw * &u;
        // Null modes of `M_w` come out with rounding-level frequencies and
        // `M_w U` columns; left alone they leak the conserved quantities by a
        // systematic amount per flow step. Snap them to an exact identity flow.
        let wmax = freq.max();
        for i in 0..freq.len() {
            if freq[i] <= NULL_MODE_TOL * wmax {
                freq[i] = 0.0;
                mu.column_mut(i).fill(0.0);
            }
        }
        let (vbar_u, vbar_mu) = if spec.coords == Coords::Position {
            let mut a = DMatrix::<f64>::zeros(ds, dim);
            for x in 0..sites {
                for j in 0..ds {
                    a[(j, voff + x * ds + j)] = 1.0 / sites as f64;
                }
            }
            (Some(&a * &u), Some(&a * &mu))
        } else {
            (None, None)
        };
        Ok(DenseCache { spec: *spec, u, mu, freq, g, s, vbar_u, vbar_mu, voff })
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    fn dim(&self) -> usize {
        self.freq.len()
    }
}

#[derive(Clone)]
pub struct DensePropagator {
    cache: Arc<DenseCache>,
    w: DVector<f64>,
    qbar: Vec<f64>,
}

impl DensePropagator {
    pub fn new(cache: Arc<DenseCache>, st: &PhaseState) -> Result<Self> {
        st.check_dims()?;
        if st.spec != cache.spec {
            return Err(Error::InvalidArgument("state spec differs from backend spec".into()));
        }
        let spec = cache.spec;
        let ds = spec.dstar;
        let sites = spec.sites();
        let mut w = DVector::<f64>::zeros(cache.dim());
        let mut qbar = vec![0.0; ds];
        match &cache.s {
            None => {
                for i in 0..spec.half_len() {
                    w[i] = st.pos[i];
                    w[cache.voff + i] = st.vel[i];
                }
            }
            Some(s) => {
                for m in 0..s.nrows() {
                    for j in 0..ds {
                        w[m * ds + j] = (0..sites).map(|x| s[(m, x)] * st.pos[x * ds + j]).sum();
                    }
                }
                for i in 0..spec.half_len() {
                    w[cache.voff + i] = st.vel[i];
                }
                qbar = st.means().0;
            }
        }
        Ok(DensePropagator { cache, w, qbar })
    }

    fn evolved(&self, tau: f64) -> (DVector<f64>, Vec<f64>) {
        if tau == 0.0 {
            return (self.w.clone(), self.qbar.clone());
        }
        let c = self.cache.u.tr_mul(&self.w);
        let f = &self.cache.freq;
        let n = f.len();
        let mut cc = DVector::<f64>::zeros(n);
        let mut cs = DVector::<f64>::zeros(n);
        for i in 0..n {
            let x = f[i] * tau;
            let sn = x.sin();
            // cos − 1 = −2 sin²(x/2), so short steps stay close to the identity.
            cc[i] = -2.0 * (0.5 * x).sin().powi(2) * c[i];
            cs[i] = if x.abs() < 1e-8 { tau } else { sn / f[i] } * c[i];
        }
        // w + U(cos − 1)Uᵀw rather than U cos Uᵀw: the rounding in UUᵀ ≠ I then
        // scales with the step instead of accumulating once per event.
        let w = &self.w + &self.cache.u * cc + &self.cache.mu * &cs;
        let mut qbar = self.qbar.clone();
        if let (Some(au), Some(amu)) = (&self.cache.vbar_u, &self.cache.vbar_mu) {
            // ∫₀^τ cos(Ws) ds and ∫₀^τ sin(Ws)/W ds.
            let mut i1 = DVector::<f64>::zeros(n);
            let mut i2 = DVector::<f64>::zeros(n);
            for i in 0..n {
                let x = f[i] * tau;
                if x.abs() < 1e-4 {
                    i1[i] = tau * (1.0 - x * x / 6.0) * c[i];
                    i2[i] = 0.5 * tau * tau * (1.0 - x * x / 12.0) * c[i];
                } else {
                    i1[i] = x.sin() / f[i] * c[i];
                    i2[i] = (1.0 - x.cos()) / (f[i] * f[i]) * c[i];
                }
            }
            let dq = au * i1 + amu * i2;
            for (q, d) in qbar.iter_mut().zip(dq.iter()) {
                *q += d;
            }
        }
        (w, qbar)
    }

    fn to_state(&self, w: &DVector<f64>, qbar: &[f64]) -> PhaseState {
        let spec = self.cache.spec;
        let ds = spec.dstar;
        let mut st = PhaseState::zeros(&spec);
        for i in 0..spec.half_len() {
            st.vel[i] = w[self.cache.voff + i];
        }
        match &self.cache.g {
            None => {
                for i in 0..spec.half_len() {
                    st.pos[i] = w[i];
                }
            }
            Some(g) => {
                for x in 0..spec.sites() {
                    for j in 0..ds {
                        st.pos[x * ds + j] =
                            qbar[j] + (0..g.ncols()).map(|m| g[(x, m)] * w[m * ds + j]).sum::<f64>();
                    }
                }
            }
        }
        st
    }
}

impl Propagator for DensePropagator {
    fn spec(&self) -> &LatticeSpec {
        &self.cache.spec
    }

    fn advance(&mut self, tau: f64) {
        let (w, q) = self.evolved(tau);
        self.w = w;
        self.qbar = q;
    }

    fn position(&self, site: usize, j: usize) -> f64 {
        let ds = self.cache.spec.dstar;
        match &self.cache.g {
            None => self.w[site * ds + j],
            Some(g) => self.qbar[j] + (0..g.ncols()).map(|m| g[(site, m)] * self.w[m * ds + j]).sum::<f64>(),
        }
    }

    fn velocity(&self, site: usize, j: usize) -> f64 {
        self.w[self.cache.voff + site * self.cache.spec.dstar + j]
    }

    fn add_velocity(&mut self, site: usize, j: usize, delta: f64) {
        let i = self.cache.voff + site * self.cache.spec.dstar + j;
        self.w[i] += delta;
    }

    fn state_ahead(&self, tau: f64) -> PhaseState {
        let (w, q) = self.evolved(tau);
        self.to_state(&w, &q)
    }

    fn max_frequency(&self) -> f64 {
        self.cache.freq.max()
    }

    fn box_clone(&self) -> Box<dyn Propagator> {
        Box::new(self.clone())
    }
}

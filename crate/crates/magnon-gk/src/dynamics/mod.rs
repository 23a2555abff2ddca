//! Exact event-driven simulation: linear flow between exchange events.
//!
//! Exchange events form a Poisson process of rate `γ · dstar · d · N^d`;
//! each event picks a `(component, site, direction)` triple uniformly and
//! swaps that velocity component across the bond. Gaps and triples are drawn
//! from separate ChaCha streams so a trajectory is a pure function of its
//! seed. Between events the state is advanced exactly by one of three
//! backends sharing the [`Propagator`] interface.
//!
//! Time-integrated currents are accumulated with 4-point Gauss–Legendre
//! panels whose width keeps `τ · ω_max ≤ 1/2`, plus the exact jump
//! `(u² − w²)/2` at every swap.

mod dense;
mod fourier;
mod rk4;

use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

pub use dense::{DenseCache, DensePropagator};
pub use fourier::{FourierCache, FourierPropagator};
pub use rk4::{Rk4Cache, Rk4Propagator};

use crate::error::{Error, Result};
use crate::lattice::{site_energies, Charge, Coords, LatticeSpec, PhaseState, Topology};
use crate::observables::DENSE_CAP;
use crate::rng::{stream, stream_rng};

/// `(sin x, cos x)`, with short Taylor polynomials for `|x| < 0.4` (error
/// below 10⁻¹⁸) — the common case for the small gaps between events.
#[inline]
pub(crate) fn sincos(x: f64) -> (f64, f64) {
    if x.abs() < 0.4 {
        let x2 = x * x;
        let s = x
            * (1.0
                - x2 / 6.0
                    * (1.0
                        - x2 / 20.0
                            * (1.0 - x2 / 42.0 * (1.0 - x2 / 72.0 * (1.0 - x2 / 110.0 * (1.0 - x2 / 156.0))))));
        let c = 1.0
            - x2 / 2.0
                * (1.0
                    - x2 / 12.0
                        * (1.0
                            - x2 / 30.0
                                * (1.0
                                    - x2 / 56.0
                                        * (1.0 - x2 / 90.0 * (1.0 - x2 / 132.0 * (1.0 - x2 / 182.0))))));
        (s, c)
    } else {
        x.sin_cos()
    }
}

/// Exact linear flow of one trajectory plus velocity access for swaps.
pub trait Propagator: Send {
    fn spec(&self) -> &LatticeSpec;
    /// Advance the deterministic flow by `tau`.
    fn advance(&mut self, tau: f64);
    fn position(&self, site: usize, j: usize) -> f64;
    fn velocity(&self, site: usize, j: usize) -> f64;
    fn add_velocity(&mut self, site: usize, j: usize, delta: f64);
    /// The state the flow would reach after `tau`, without mutating.
    fn state_ahead(&self, tau: f64) -> PhaseState;
    /// `Σ_x j^a` after a further `tau`, written into `out[a]`.
    fn total_currents_ahead(&self, tau: f64, out: &mut [f64]) {
        let c = crate::lattice::total_currents(&self.state_ahead(tau));
        out.copy_from_slice(&c);
    }
    /// Upper bound on the linear frequencies.
    fn max_frequency(&self) -> f64;
    fn box_clone(&self) -> Box<dyn Propagator>;

    /// Swap component `j` between `x` and `y`; returns the pre-swap `(v_x, v_y)`.
    fn swap(&mut self, x: usize, y: usize, j: usize) -> (f64, f64) {
        let u = self.velocity(x, j);
        let w = self.velocity(y, j);
        self.add_velocity(x, j, w - u);
        self.add_velocity(y, j, u - w);
        (u, w)
    }

    /// `j^a_{x,x+e_a}` now.
    fn bond_current(&self, x: usize, y: usize) -> f64 {
        let spec = self.spec();
        let mut ja = 0.0;
        for j in 0..spec.dstar {
            let dq = match spec.coords {
                Coords::Position => self.position(y, j) - self.position(x, j),
                Coords::Deformation => self.position(x, j),
            };
            ja -= 0.5 * dq * (self.velocity(y, j) + self.velocity(x, j));
        }
        ja
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    /// Per-mode closed-form propagators (translation-invariant charges).
    FourierBlock,
    /// Dense skew eigendecomposition (any charge, small lattices).
    DenseEigen,
    /// Fixed-ratio RK4 reference.
    Rk4,
}

impl BackendKind {
    /// Fourier when possible, dense when it fits, RK4 otherwise.
    pub fn default_for(spec: &LatticeSpec) -> Self {
        if spec.charge != Charge::Alternate {
            BackendKind::FourierBlock
        } else if 2 * spec.half_len() <= DENSE_CAP {
            BackendKind::DenseEigen
        } else {
            BackendKind::Rk4
        }
    }
}

/// Per-model precomputation shared (cheaply cloned) across trajectories.
#[derive(Debug, Clone)]
pub enum Backend {
    Fourier(Arc<FourierCache>),
    Dense(Arc<DenseCache>),
    Rk4(Arc<Rk4Cache>),
}

impl Backend {
    pub fn new(spec: &LatticeSpec, kind: BackendKind) -> Result<Self> {
        Ok(match kind {
            BackendKind::FourierBlock => Backend::Fourier(Arc::new(FourierCache::new(spec)?)),
            BackendKind::DenseEigen => Backend::Dense(Arc::new(DenseCache::new(spec)?)),
            BackendKind::Rk4 => Backend::Rk4(Arc::new(Rk4Cache::new(spec)?)),
        })
    }

    pub fn kind(&self) -> BackendKind {
        match self {
            Backend::Fourier(_) => BackendKind::FourierBlock,
            Backend::Dense(_) => BackendKind::DenseEigen,
            Backend::Rk4(_) => BackendKind::Rk4,
        }
    }

    pub fn spec(&self) -> &LatticeSpec {
        match self {
            Backend::Fourier(c) => c.spec(),
            Backend::Dense(c) => c.spec(),
            Backend::Rk4(c) => c.spec(),
        }
    }

    pub fn propagator(&self, s: &PhaseState) -> Result<Box<dyn Propagator>> {
        Ok(match self {
            Backend::Fourier(c) => Box::new(FourierPropagator::new(c.clone(), s)?),
            Backend::Dense(c) => Box::new(DensePropagator::new(c.clone(), s)?),
            Backend::Rk4(c) => Box::new(Rk4Propagator::new(c.clone(), s)?),
        })
    }
}

/// Deterministic flow `e^{τA}` of a state (no noise).
pub fn evolve_deterministic(state: &PhaseState, dt: f64, backend: &Backend) -> Result<PhaseState> {
    let mut s = backend.propagator(state)?.state_ahead(dt);
    s.time = state.time + dt;
    Ok(s)
}

/// Swap component `j` across the bond `(x, x + e_a)`. Returns the new state
/// and the energy transported into `x`, `(w² − u²)/2`.
pub fn apply_exchange(state: &PhaseState, x: usize, a: usize, j: usize) -> Result<(PhaseState, f64)> {
    let spec = &state.spec;
    if x >= spec.sites() || a >= spec.d || j >= spec.dstar {
        return Err(Error::InvalidArgument(format!("exchange triple ({x}, {a}, {j}) out of range")));
    }
    let y = spec.topology().fwd[a][x];
    let mut s = state.clone();
    let (ix, iy) = (x * spec.dstar + j, y * spec.dstar + j);
    let (u, w) = (s.vel[ix], s.vel[iy]);
    s.vel.swap(ix, iy);
    Ok((s, 0.5 * (w * w - u * u)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tracking {
    /// Only instantaneous currents at output times.
    #[default]
    None,
    /// Time-integrated total current `𝒥_a(t)`.
    Totals,
    /// Time-integrated current of every bond, plus site energies at output
    /// times (enables the continuity check).
    PerBond,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub record_states: bool,
    pub tracking: Tracking,
    pub record_event_times: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub spec: LatticeSpec,
    pub seed: u64,
    pub backend: BackendKind,
    pub dt_out: f64,
    pub times: Vec<f64>,
    pub states: Option<Vec<PhaseState>>,
    /// `Σ_x j^a` at each output time, `[k][a]`.
    pub total_current: Vec<Vec<f64>>,
    /// `j^1_{0, e_1}` at each output time.
    pub origin_current: Vec<f64>,
    /// `𝒥_a(t_k)`, empty unless tracking.
    pub integrated_current: Vec<Vec<f64>>,
    /// `J_{x,x+e_a}(t_k)` laid out `[k][a * sites + x]`.
    pub bond_integrated: Option<Vec<Vec<f64>>>,
    pub site_energies: Option<Vec<Vec<f64>>>,
    pub event_count: u64,
    pub event_times: Option<Vec<f64>>,
    pub final_state: PhaseState,
}

impl Trajectory {
    /// `max_{k,x} |E_x(t_k) − E_x(0) + Σ_a (J_{x,x+e_a} − J_{x−e_a,x})|`.
    pub fn continuity_residual(&self) -> Option<f64> {
        let (bonds, energies) = (self.bond_integrated.as_ref()?, self.site_energies.as_ref()?);
        let sites = self.spec.sites();
        let top = Topology::new(&self.spec);
        let mut worst: f64 = 0.0;
        for (jb, e) in bonds.iter().zip(energies) {
            for x in 0..sites {
                let mut r = e[x] - energies[0][x];
                for a in 0..self.spec.d {
                    r += jb[a * sites + x] - jb[a * sites + top.bwd[a][x]];
                }
                worst = worst.max(r.abs());
            }
        }
        Some(worst)
    }
}

const GL_NODES: [f64; 4] = [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526];
const GL_WEIGHTS: [f64; 4] = [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538];
/// Panel width bound `τ · ω_max`.
const PANEL_PHASE: f64 = 0.5;

struct Accounting<'a> {
    tracking: Tracking,
    top: &'a Topology,
    totals: Vec<f64>,
    bonds: Vec<f64>,
    scratch: Vec<f64>,
}

impl Accounting<'_> {
    fn integrate_gap(&mut self, prop: &dyn Propagator, tau: f64) {
        if self.tracking == Tracking::None || tau <= 0.0 {
            return;
        }
        let panels = ((tau * prop.max_frequency() / PANEL_PHASE).ceil() as usize).max(1);
        let h = tau / panels as f64;
        let spec = *prop.spec();
        let sites = spec.sites();
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * h;
            for (xg, wg) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let t = mid + 0.5 * h * xg;
                let wt = 0.5 * h * wg;
                match self.tracking {
                    Tracking::Totals => {
                        prop.total_currents_ahead(t, &mut self.scratch);
                        for (acc, c) in self.totals.iter_mut().zip(&self.scratch) {
                            *acc += wt * c;
                        }
                    }
                    Tracking::PerBond => {
                        let s = prop.state_ahead(t);
                        for a in 0..spec.d {
                            for x in 0..sites {
                                let y = self.top.fwd[a][x];
                                let mut ja = 0.0;
                                for j in 0..spec.dstar {
                                    let dq = match spec.coords {
                                        Coords::Position => s.q(y, j) - s.q(x, j),
                                        Coords::Deformation => s.q(x, j),
                                    };
                                    ja -= 0.5 * dq * (s.v(y, j) + s.v(x, j));
                                }
                                self.bonds[a * sites + x] += wt * ja;
                                self.totals[a] += wt * ja;
                            }
                        }
                    }
                    Tracking::None => {}
                }
            }
        }
    }
}

/// Run one trajectory on `[0, t_end]`, recording at `k · dt_out`.
pub fn simulate(
    s0: &PhaseState,
    t_end: f64,
    dt_out: f64,
    seed: u64,
    backend: &Backend,
    opts: &SimOptions,
) -> Result<Trajectory> {
    s0.check_dims()?;
    let spec = *backend.spec();
    if s0.spec != spec {
        return Err(Error::InvalidArgument("initial state spec differs from backend spec".into()));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) || !(dt_out > 0.0 && dt_out.is_finite()) {
        return Err(Error::InvalidArgument("t_end must be >= 0 and dt_out > 0".into()));
    }
    let n_out = (t_end / dt_out * (1.0 + 1e-12)).floor() as usize;
    let sites = spec.sites();
    let ds = spec.dstar;
    let top = spec.topology();
    let n_triples = spec.d * sites * ds;
    let gap = Exp::new(spec.event_rate()).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut gap_rng = stream_rng(seed, stream::EVENT_TIMES);
    let mut triple_rng = stream_rng(seed, stream::TRIPLES);

    let mut prop = backend.propagator(s0)?;
    let mut acc = Accounting {
        tracking: opts.tracking,
        top: &top,
        totals: vec![0.0; spec.d],
        bonds: vec![0.0; spec.d * sites],
        scratch: vec![0.0; spec.d],
    };
    let per_bond = opts.tracking == Tracking::PerBond;
    let mut traj = Trajectory {
        spec,
        seed,
        backend: backend.kind(),
        dt_out,
        times: Vec::with_capacity(n_out + 1),
        states: opts.record_states.then(Vec::new),
        total_current: Vec::with_capacity(n_out + 1),
        origin_current: Vec::with_capacity(n_out + 1),
        integrated_current: Vec::new(),
        bond_integrated: per_bond.then(Vec::new),
        site_energies: per_bond.then(Vec::new),
        event_count: 0,
        event_times: opts.record_event_times.then(Vec::new),
        final_state: s0.clone(),
    };
    let origin_partner = top.fwd[0][0];
    let record = |prop: &dyn Propagator, acc: &Accounting, t: f64, traj: &mut Trajectory| {
        traj.times.push(t);
        let mut c = vec![0.0; spec.d];
        prop.total_currents_ahead(0.0, &mut c);
        traj.total_current.push(c);
        traj.origin_current.push(prop.bond_current(0, origin_partner));
        if opts.tracking != Tracking::None {
            traj.integrated_current.push(acc.totals.clone());
        }
        let need_state = opts.record_states || per_bond;
        if need_state {
            let mut s = prop.state_ahead(0.0);
            s.time = t;
            if per_bond {
                traj.site_energies.as_mut().unwrap().push(site_energies(&s));
                traj.bond_integrated.as_mut().unwrap().push(acc.bonds.clone());
            }
            if let Some(st) = traj.states.as_mut() {
                st.push(s);
            }
        }
    };

    let mut t = 0.0;
    record(prop.as_ref(), &acc, 0.0, &mut traj);
    let mut next_k = 1usize;
    let mut next_event: f64 = gap.sample(&mut gap_rng);
    loop {
        let t_out = if next_k <= n_out { next_k as f64 * dt_out } else { t_end };
        if next_event < t_out {
            let tau = next_event - t;
            acc.integrate_gap(prop.as_ref(), tau);
            prop.advance(tau);
            t = next_event;
            let u = triple_rng.gen_range(0..n_triples);
            let j = u % ds;
            let x = (u / ds) % sites;
            let a = u / (ds * sites);
            let y = top.fwd[a][x];
            let (vu, vw) = prop.swap(x, y, j);
            let jump = 0.5 * (vu * vu - vw * vw);
            if opts.tracking != Tracking::None {
                acc.totals[a] += jump;
                if per_bond {
                    acc.bonds[a * sites + x] += jump;
                }
            }
            traj.event_count += 1;
            if let Some(et) = traj.event_times.as_mut() {
                et.push(t);
            }
            next_event = t + gap.sample(&mut gap_rng);
        } else {
            let tau = t_out - t;
            acc.integrate_gap(prop.as_ref(), tau);
            prop.advance(tau);
            t = t_out;
            if next_k <= n_out {
                record(prop.as_ref(), &acc, t, &mut traj);
                next_k += 1;
            } else {
                break;
            }
        }
    }
    let mut fin = prop.state_ahead(0.0);
    fin.time = t;
    traj.final_state = fin;
    Ok(traj)
}

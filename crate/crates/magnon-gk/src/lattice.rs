//! Model description, phase-space states, energies, currents, conserved
//! quantities and the deformation/position coordinate maps.
//!
//! Sites of `Z_N^d` are stored row-major with `index = Σ_a x^a N^a`
//! (first axis fastest). Per-site vectors are flattened as
//! `site * dstar + j`, components `j = 0, 1` being the magnetically coupled
//! plane. The flattened phase vector is `z = (pos ‖ vel)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Charge {
    Zero,
    Uniform,
    Alternate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coords {
    /// `(q, v)`: positions on sites.
    Position,
    /// `(r, v)`: deformations `r_x` on the bond `(x, x+1)`.
    Deformation,
}

/// Static description of the lattice model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub d: usize,
    pub dstar: usize,
    pub n: usize,
    pub b: f64,
    pub gamma: f64,
    pub charge: Charge,
    pub coords: Coords,
}

impl LatticeSpec {
    pub fn new(
        d: usize,
        dstar: usize,
        n: usize,
        b: f64,
        gamma: f64,
        charge: Charge,
        coords: Coords,
    ) -> Result<Self> {
        let s = LatticeSpec { d, dstar, n, b, gamma, charge, coords };
        s.validate()?;
        Ok(s)
    }

    /// Microcanonical-style spec in position coordinates.
    pub fn position(d: usize, dstar: usize, n: usize, b: f64, gamma: f64) -> Result<Self> {
        let charge = if b == 0.0 { Charge::Zero } else { Charge::Uniform };
        Self::new(d, dstar, n, b, gamma, charge, Coords::Position)
    }

    /// Canonical chain `d = 1, dstar = 2` in deformation coordinates.
    pub fn deformation(n: usize, b: f64, gamma: f64, charge: Charge) -> Result<Self> {
        Self::new(1, 2, n, b, gamma, charge, Coords::Deformation)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if !(1..=3).contains(&self.d) {
            return bad("d must be 1, 2 or 3");
        }
        if self.dstar == 0 {
            return bad("dstar must be >= 1");
        }
        if self.charge != Charge::Zero && self.b != 0.0 && self.dstar < 2 {
            return bad("a nonzero field needs dstar >= 2");
        }
        if self.n < 3 {
            return bad("n must be >= 3");
        }
        if !self.b.is_finite() {
            return bad("b must be finite");
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be > 0");
        }
        if self.coords == Coords::Deformation && (self.d != 1 || self.dstar != 2) {
            return bad("deformation coordinates require d = 1, dstar = 2");
        }
        if self.charge == Charge::Alternate {
            if self.d != 1 || self.dstar != 2 || self.coords != Coords::Deformation {
                return bad("alternate charge requires d = 1, dstar = 2, deformation coordinates");
            }
            if self.n % 2 != 0 {
                return bad("alternate charge requires even n");
            }
        }
        Ok(())
    }

    pub fn sites(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Length of `pos` (and of `vel`).
    pub fn half_len(&self) -> usize {
        self.sites() * self.dstar
    }

    /// Length of the flattened phase vector `(pos ‖ vel)`.
    pub fn state_len(&self) -> usize {
        2 * self.half_len()
    }

    pub fn pos_index(&self, site: usize, j: usize) -> usize {
        site * self.dstar + j
    }

    pub fn vel_index(&self, site: usize, j: usize) -> usize {
        self.half_len() + site * self.dstar + j
    }

    /// Effective field felt by the dynamics (zero when the charge is zero).
    pub fn field(&self) -> f64 {
        if self.charge == Charge::Zero {
            0.0
        } else {
            self.b
        }
    }

    /// Per-site charge factor `c_x`: 0, 1 or `(-1)^x`.
    pub fn charge_factor(charge: Charge, site: usize) -> f64 {
        match charge {
            Charge::Zero => 0.0,
            Charge::Uniform => 1.0,
            Charge::Alternate => {
                if site % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }

    /// Total exchange rate `γ · dstar · d · N^d`.
    pub fn event_rate(&self) -> f64 {
        self.gamma * (self.dstar * self.d * self.sites()) as f64
    }

    pub fn site_coords(&self, site: usize) -> [usize; 3] {
        let mut c = [0usize; 3];
        let mut s = site;
        for ca in c.iter_mut().take(self.d) {
            *ca = s % self.n;
            s /= self.n;
        }
        c
    }

    pub fn site_index(&self, coords: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for &c in coords.iter().take(self.d) {
            idx += (c % self.n) * stride;
            stride *= self.n;
        }
        idx
    }

    pub fn topology(&self) -> Topology {
        Topology::new(self)
    }
}

/// Precomputed periodic neighbour tables.
#[derive(Debug, Clone)]
pub struct Topology {
    /// `fwd[a][x]` = index of `x + e_a`.
    pub fwd: Vec<Vec<usize>>,
    /// `bwd[a][x]` = index of `x - e_a`.
    pub bwd: Vec<Vec<usize>>,
}

impl Topology {
    pub fn new(spec: &LatticeSpec) -> Self {
        let sites = spec.sites();
        let mut fwd = vec![vec![0; sites]; spec.d];
        let mut bwd = vec![vec![0; sites]; spec.d];
        for x in 0..sites {
            let c = spec.site_coords(x);
            for a in 0..spec.d {
                let mut cf = c;
                cf[a] = (c[a] + 1) % spec.n;
                fwd[a][x] = spec.site_index(&cf[..spec.d]);
                let mut cb = c;
                cb[a] = (c[a] + spec.n - 1) % spec.n;
                bwd[a][x] = spec.site_index(&cb[..spec.d]);
            }
        }
        Topology { fwd, bwd }
    }
}

/// A point of phase space. `pos` holds `q_x` or `r_x` depending on the
/// coordinates of `spec`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub spec: LatticeSpec,
    pub pos: Vec<f64>,
    pub vel: Vec<f64>,
    pub time: f64,
}

impl PhaseState {
    pub fn zeros(spec: &LatticeSpec) -> Self {
        let m = spec.half_len();
        PhaseState { spec: *spec, pos: vec![0.0; m], vel: vec![0.0; m], time: 0.0 }
    }

    pub fn from_flat(spec: &LatticeSpec, z: &[f64]) -> Result<Self> {
        let m = spec.half_len();
        if z.len() != 2 * m {
            return Err(Error::DimensionMismatch { expected: 2 * m, got: z.len() });
        }
        Ok(PhaseState { spec: *spec, pos: z[..m].to_vec(), vel: z[m..].to_vec(), time: 0.0 })
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(2 * self.pos.len());
        z.extend_from_slice(&self.pos);
        z.extend_from_slice(&self.vel);
        z
    }

    pub fn check_dims(&self) -> Result<()> {
        let m = self.spec.half_len();
        for len in [self.pos.len(), self.vel.len()] {
            if len != m {
                return Err(Error::DimensionMismatch { expected: m, got: len });
            }
        }
        Ok(())
    }

    pub fn q(&self, site: usize, j: usize) -> f64 {
        self.pos[site * self.spec.dstar + j]
    }

    pub fn v(&self, site: usize, j: usize) -> f64 {
        self.vel[site * self.spec.dstar + j]
    }

    /// Per-component means `(pos̄, vel̄)`.
    pub fn means(&self) -> (Vec<f64>, Vec<f64>) {
        let ds = self.spec.dstar;
        let sites = self.spec.sites() as f64;
        let mut pm = vec![0.0; ds];
        let mut vm = vec![0.0; ds];
        for (i, (p, v)) in self.pos.iter().zip(&self.vel).enumerate() {
            pm[i % ds] += p;
            vm[i % ds] += v;
        }
        pm.iter_mut().for_each(|x| *x /= sites);
        vm.iter_mut().for_each(|x| *x /= sites);
        (pm, vm)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// `E_x`: kinetic energy plus half of each adjacent bond's potential energy.
pub fn site_energy(state: &PhaseState, x: usize) -> f64 {
    let spec = &state.spec;
    let ds = spec.dstar;
    let v = &state.vel[x * ds..(x + 1) * ds];
    let mut e = 0.5 * sq(v);
    match spec.coords {
        Coords::Position => {
            let q = &state.pos[x * ds..(x + 1) * ds];
            let top = spec.topology();
            for a in 0..spec.d {
                for y in [top.fwd[a][x], top.bwd[a][x]] {
                    e += 0.25 * sq_dist(&state.pos[y * ds..(y + 1) * ds], q);
                }
            }
        }
        Coords::Deformation => {
            let xm = (x + spec.n - 1) % spec.n;
            e += 0.25 * sq(&state.pos[x * ds..(x + 1) * ds]);
            e += 0.25 * sq(&state.pos[xm * ds..(xm + 1) * ds]);
        }
    }
    e
}

/// All site energies at once (avoids rebuilding the topology per site).
pub fn site_energies(state: &PhaseState) -> Vec<f64> {
    let spec = &state.spec;
    let ds = spec.dstar;
    let sites = spec.sites();
    let mut e: Vec<f64> = (0..sites).map(|x| 0.5 * sq(&state.vel[x * ds..(x + 1) * ds])).collect();
    match spec.coords {
        Coords::Position => {
            let top = spec.topology();
            for x in 0..sites {
                for a in 0..spec.d {
                    let y = top.fwd[a][x];
                    let bond = 0.25 * sq_dist(&state.pos[y * ds..(y + 1) * ds], &state.pos[x * ds..(x + 1) * ds]);
                    e[x] += bond;
                    e[y] += bond;
                }
            }
        }
        Coords::Deformation => {
            for x in 0..sites {
                let bond = 0.25 * sq(&state.pos[x * ds..(x + 1) * ds]);
                e[x] += bond;
                e[(x + 1) % sites] += bond;
            }
        }
    }
    e
}

pub fn total_energy(state: &PhaseState) -> f64 {
    site_energies(state).iter().sum()
}

/// `(j^a, j^s)` on the bond `(x, x + e_a)`.
pub fn instantaneous_current(state: &PhaseState, x: usize, a: usize) -> (f64, f64) {
    let spec = &state.spec;
    let ds = spec.dstar;
    let y = spec.topology().fwd[a][x];
    bond_current(state, x, y, a, ds)
}

fn bond_current(state: &PhaseState, x: usize, y: usize, _a: usize, ds: usize) -> (f64, f64) {
    let spec = &state.spec;
    let mut ja = 0.0;
    let mut js = 0.0;
    for j in 0..ds {
        let vx = state.vel[x * ds + j];
        let vy = state.vel[y * ds + j];
        let dq = match spec.coords {
            Coords::Position => state.pos[y * ds + j] - state.pos[x * ds + j],
            Coords::Deformation => state.pos[x * ds + j],
        };
        ja -= 0.5 * dq * (vy + vx);
        js -= 0.5 * spec.gamma * (vy * vy - vx * vx);
    }
    (ja, js)
}

/// `j^a` on every bond, laid out as `[a * sites + x]`.
pub fn bond_currents(state: &PhaseState) -> Vec<f64> {
    let spec = &state.spec;
    let sites = spec.sites();
    let top = spec.topology();
    let mut out = vec![0.0; spec.d * sites];
    for a in 0..spec.d {
        for x in 0..sites {
            out[a * sites + x] = bond_current(state, x, top.fwd[a][x], a, spec.dstar).0;
        }
    }
    out
}

/// `Σ_x j^a_{x,x+e_a}` for each direction.
pub fn total_currents(state: &PhaseState) -> Vec<f64> {
    let sites = state.spec.sites();
    let b = bond_currents(state);
    (0..state.spec.d).map(|a| b[a * sites..(a + 1) * sites].iter().sum()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConservedSnapshot {
    pub total_energy: f64,
    /// `Σ_x (v_x + Bσ q_x)` (position coordinates; plain momentum for zero
    /// charge in deformation coordinates).
    pub pseudomomentum: Option<Vec<f64>>,
    /// `Σ_x r_x` (deformation coordinates).
    pub total_deformation: Option<Vec<f64>>,
    /// `(Σ_{x even} v¹_x + v¹_{x+1} + B r²_x, Σ_{x even} v²_x + v²_{x+1} − B r¹_x)`.
    pub alt_invariants: Option<[f64; 2]>,
}

pub fn conserved_snapshot(state: &PhaseState) -> ConservedSnapshot {
    let spec = &state.spec;
    let ds = spec.dstar;
    let sites = spec.sites();
    let b = spec.field();
    let sum_pos: Vec<f64> = (0..ds).map(|j| (0..sites).map(|x| state.q(x, j)).sum()).collect();
    let sum_vel: Vec<f64> = (0..ds).map(|j| (0..sites).map(|x| state.v(x, j)).sum()).collect();
    let mut snap = ConservedSnapshot {
        total_energy: total_energy(state),
        pseudomomentum: None,
        total_deformation: None,
        alt_invariants: None,
    };
    match spec.coords {
        Coords::Position => {
            let mut p = sum_vel.clone();
            if ds >= 2 {
                p[0] -= b * sum_pos[1];
                p[1] += b * sum_pos[0];
            }
            snap.pseudomomentum = Some(p);
        }
        Coords::Deformation => {
            snap.total_deformation = Some(sum_pos);
            if spec.charge == Charge::Zero {
                snap.pseudomomentum = Some(sum_vel);
            }
            if spec.charge == Charge::Alternate {
                let mut i1 = 0.0;
                let mut i2 = 0.0;
                for x in (0..sites).step_by(2) {
                    let xp = (x + 1) % sites;
                    i1 += state.v(x, 0) + state.v(xp, 0) + spec.b * state.q(x, 1);
                    i2 += state.v(x, 1) + state.v(xp, 1) - spec.b * state.q(x, 0);
                }
                snap.alt_invariants = Some([i1, i2]);
            }
        }
    }
    snap
}

/// Linear map `r ↦ q` with `q_{x+1} − q_x = r_x − r̄` and `Σ_x q_x = 0`.
///
/// This differs from the cumulative-sum convention `q_x = −Σ_{y ≥ x}(r_y − r̄)`
/// by a global shift only; observables invariant under `q ↦ q + c` (the only
/// ones pushed forward) are unaffected.
pub fn r_to_q_matrix(n: usize) -> Vec<Vec<f64>> {
    let nf = n as f64;
    // Uncentred: q'_x = Σ_{y<x} (r_y − r̄).
    let mut m = vec![vec![0.0; n]; n];
    for (x, row) in m.iter_mut().enumerate() {
        for (y, e) in row.iter_mut().enumerate() {
            *e = if y < x { 1.0 } else { 0.0 } - x as f64 / nf;
        }
    }
    // Centre each column.
    for y in 0..n {
        let mean = (0..n).map(|x| m[x][y]).sum::<f64>() / nf;
        for row in m.iter_mut() {
            row[y] -= mean;
        }
    }
    m
}

pub fn r_to_q(rstate: &PhaseState) -> Result<PhaseState> {
    let spec = rstate.spec;
    if spec.coords != Coords::Deformation {
        return Err(Error::InvalidArgument("r_to_q needs deformation coordinates".into()));
    }
    let n = spec.n;
    let ds = spec.dstar;
    let (rbar, _) = rstate.means();
    let mut pos = vec![0.0; n * ds];
    for j in 0..ds {
        let mut acc = 0.0;
        let mut q = vec![0.0; n];
        for x in 1..n {
            acc += rstate.q(x - 1, j) - rbar[j];
            q[x] = acc;
        }
        let mean = q.iter().sum::<f64>() / n as f64;
        for x in 0..n {
            pos[x * ds + j] = q[x] - mean;
        }
    }
    // The image carries the same field pattern; it is a formal position-space
    // description and is not re-validated.
    let out_spec = LatticeSpec { coords: Coords::Position, ..spec };
    Ok(PhaseState { spec: out_spec, pos, vel: rstate.vel.clone(), time: rstate.time })
}

pub fn q_to_r(qstate: &PhaseState) -> Result<PhaseState> {
    let spec = qstate.spec;
    if spec.coords != Coords::Position || spec.d != 1 {
        return Err(Error::InvalidArgument("q_to_r needs position coordinates with d = 1".into()));
    }
    let n = spec.n;
    let ds = spec.dstar;
    let mut pos = vec![0.0; n * ds];
    for x in 0..n {
        for j in 0..ds {
            pos[x * ds + j] = qstate.q((x + 1) % n, j) - qstate.q(x, j);
        }
    }
    let out_spec = LatticeSpec { coords: Coords::Deformation, ..spec };
    Ok(PhaseState { spec: out_spec, pos, vel: qstate.vel.clone(), time: qstate.time })
}

/// Sparse linear drift `dz/dt = M z` as `(row, col, value)` triplets, for the
/// layout of `spec` and the given charge pattern and field.
pub fn linear_drift(spec: &LatticeSpec, charge: Charge, b: f64) -> Vec<(usize, usize, f64)> {
    let ds = spec.dstar;
    let sites = spec.sites();
    let top = spec.topology();
    let mut t = Vec::new();
    for x in 0..sites {
        for j in 0..ds {
            let p = spec.pos_index(x, j);
            let v = spec.vel_index(x, j);
            match spec.coords {
                Coords::Position => {
                    t.push((p, v, 1.0));
                    for a in 0..spec.d {
                        t.push((v, spec.pos_index(top.fwd[a][x], j), 1.0));
                        t.push((v, spec.pos_index(top.bwd[a][x], j), 1.0));
                        t.push((v, p, -2.0));
                    }
                }
                Coords::Deformation => {
                    let xp = top.fwd[0][x];
                    let xm = top.bwd[0][x];
                    t.push((p, spec.vel_index(xp, j), 1.0));
                    t.push((p, v, -1.0));
                    t.push((v, p, 1.0));
                    t.push((v, spec.pos_index(xm, j), -1.0));
                }
            }
        }
        let c = LatticeSpec::charge_factor(charge, x) * b;
        if c != 0.0 && ds >= 2 {
            // dv¹ += c v², dv² −= c v¹.
            t.push((spec.vel_index(x, 0), spec.vel_index(x, 1), c));
            t.push((spec.vel_index(x, 1), spec.vel_index(x, 0), -c));
        }
    }
    t
}

//! Classical Runge–Kutta reference integrator with a sparse drift.
//!
//! Substeps satisfy `h · ω_max ≤ 0.02` where `ω_max` is the Gershgorin bound
//! of the drift, giving a local error of order `(hω)^5/120 ≈ 3·10⁻¹¹`.

use std::sync::Arc;

use super::Propagator;
use crate::error::{Error, Result};
use crate::lattice::{linear_drift, LatticeSpec, PhaseState};

const H_OMEGA: f64 = 0.02;

#[derive(Debug)]
pub struct Rk4Cache {
    spec: LatticeSpec,
    /// CSR rows of the drift.
    row_start: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    omega_max: f64,
}

impl Rk4Cache {
    pub fn new(spec: &LatticeSpec) -> Result<Self> {
        spec.validate()?;
        let mut t = linear_drift(spec, spec.charge, spec.field());
        t.sort_by_key(|&(r, c, _)| (r, c));
        let dim = spec.state_len();
        let mut merged: Vec<(usize, usize, f64)> = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        let mut row_start = vec![0; dim + 1];
        for &(r, _, _) in &merged {
            row_start[r + 1] += 1;
        }
        for r in 0..dim {
            row_start[r + 1] += row_start[r];
        }
        let cols: Vec<usize> = merged.iter().map(|m| m.1).collect();
        let vals: Vec<f64> = merged.iter().map(|m| m.2).collect();
        let mut omega_max: f64 = 0.0;
        for r in 0..dim {
            let s: f64 = vals[row_start[r]..row_start[r + 1]].iter().map(|v| v.abs()).sum();
            omega_max = omega_max.max(s);
        }
        Ok(Rk4Cache { spec: *spec, row_start, cols, vals, omega_max })
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    fn apply(&self, z: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for i in self.row_start[r]..self.row_start[r + 1] {
                acc += self.vals[i] * z[self.cols[i]];
            }
            *o = acc;
        }
    }
}

#[derive(Clone)]
pub struct Rk4Propagator {
    cache: Arc<Rk4Cache>,
    z: Vec<f64>,
}

impl Rk4Propagator {
    pub fn new(cache: Arc<Rk4Cache>, s: &PhaseState) -> Result<Self> {
        s.check_dims()?;
        if s.spec != cache.spec {
            return Err(Error::InvalidArgument("state spec differs from backend spec".into()));
        }
        Ok(Rk4Propagator { cache, z: s.flat() })
    }

    fn evolved(&self, tau: f64) -> Vec<f64> {
        let mut z = self.z.clone();
        if tau == 0.0 {
            return z;
        }
        let steps = ((tau * self.cache.omega_max / H_OMEGA).ceil() as usize).max(1);
        let h = tau / steps as f64;
        let n = z.len();
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for _ in 0..steps {
            self.cache.apply(&z, &mut k1);
            for i in 0..n {
                tmp[i] = z[i] + 0.5 * h * k1[i];
            }
            self.cache.apply(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = z[i] + 0.5 * h * k2[i];
            }
            self.cache.apply(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = z[i] + h * k3[i];
            }
            self.cache.apply(&tmp, &mut k4);
            for i in 0..n {
                z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        z
    }
}

impl Propagator for Rk4Propagator {
    fn spec(&self) -> &LatticeSpec {
        &self.cache.spec
    }

    fn advance(&mut self, tau: f64) {
        self.z = self.evolved(tau);
    }

    fn position(&self, site: usize, j: usize) -> f64 {
        self.z[self.cache.spec.pos_index(site, j)]
    }

    fn velocity(&self, site: usize, j: usize) -> f64 {
        self.z[self.cache.spec.vel_index(site, j)]
    }

    fn add_velocity(&mut self, site: usize, j: usize, delta: f64) {
        let i = self.cache.spec.vel_index(site, j);
        self.z[i] += delta;
    }

    fn state_ahead(&self, tau: f64) -> PhaseState {
        PhaseState::from_flat(&self.cache.spec, &self.evolved(tau)).expect("length matches spec")
    }

    fn max_frequency(&self) -> f64 {
        self.cache.omega_max
    }

    fn box_clone(&self) -> Box<dyn Propagator> {
        Box::new(self.clone())
    }
}

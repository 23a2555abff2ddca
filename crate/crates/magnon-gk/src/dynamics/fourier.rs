//! Normal-mode propagator for translation-invariant models.
//!
//! Components are packed into complex channels `P = q^j + i q^{j+1}`,
//! `W = v^j + i v^{j+1}`; the magnetically coupled plane is channel 0 and
//! carries `dW/dt ∋ −iB W`, the remaining components are paired with no
//! coupling. Each Fourier mode of a channel then evolves under a 2×2 complex
//! matrix
//!
//! ```text
//! position:     [[0, 1], [−ω², −iB]]
//! deformation:  [[0, a], [−ā, −iB]],   a = e^{iθ} − 1
//! ```
//!
//! with eigenvalues `i s_{1,2}`, `s_{1,2} = (−B ± Ω)/2`, `Ω = √(B² + 4ω²)`.
//! Putzer's formula gives
//! `exp(Mτ) = e^{−iBτ/2} [e^{iΩτ/2} I + τ sinc(Ωτ/2) (M − i s₁ I)]`, one
//! sine/cosine pair per mode and step.
//!
//! The state is kept in Fourier space; a velocity read is an `O(N^d)` twiddle
//! sum and a velocity change is a rank-one update of every mode.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64 as C;

use super::{sincos, Propagator};
use crate::error::{Error, Result};
use crate::fft::LatticeFft;
use crate::lattice::{Charge, Coords, LatticeSpec, PhaseState};

#[derive(Debug, Clone, Copy)]
struct ModeCoef {
    /// `Ω / 2`.
    half_omega: f64,
    s1: f64,
    b: f64,
    m12: C,
    m21: C,
}

#[derive(Debug, Clone)]
struct Channel {
    re: usize,
    im: Option<usize>,
    b: f64,
    modes: Vec<ModeCoef>,
}

/// Immutable per-model tables shared by all trajectories.
#[derive(Debug)]
pub struct FourierCache {
    spec: LatticeSpec,
    fft: LatticeFft,
    channels: Vec<Channel>,
    /// `e^{2πi m/N}`.
    roots: Vec<C>,
    /// `sin θ_a` per mode, `[k * d + a]`.
    sin_theta: Vec<f64>,
    /// `e^{iθ} + 1` per mode (deformation coordinates).
    def_weight: Vec<C>,
    omega_max: f64,
}

impl FourierCache {
    pub fn new(spec: &LatticeSpec) -> Result<Self> {
        spec.validate()?;
        if spec.charge == Charge::Alternate {
            return Err(Error::BackendMismatch(
                "alternate charge breaks translation invariance; use dense or rk4".into(),
            ));
        }
        let n = spec.n;
        let d = spec.d;
        let fft = LatticeFft::new(n, d);
        let len = fft.len();
        let roots: Vec<C> = (0..n).map(|m| C::from_polar(1.0, 2.0 * PI * m as f64 / n as f64)).collect();
        let mut sin_theta = vec![0.0; len * d];
        let mut omega2 = vec![0.0; len];
        let mut def_weight = vec![C::new(0.0, 0.0); len];
        let mut a_def = vec![C::new(0.0, 0.0); len];
        for k in 0..len {
            let xi = fft.mode(k);
            for a in 0..d {
                let th = 2.0 * PI * xi[a] as f64 / n as f64;
                sin_theta[k * d + a] = th.sin();
                let s = (PI * xi[a] as f64 / n as f64).sin();
                omega2[k] += 4.0 * s * s;
            }
            let e = roots[xi[0]];
            def_weight[k] = e + 1.0;
            a_def[k] = e - 1.0;
        }

        let ds = spec.dstar;
        let mut layout = Vec::new();
        let mut j = 0;
        if ds >= 2 {
            layout.push((0, Some(1), spec.field()));
            j = 2;
        }
        while j < ds {
            let im = if j + 1 < ds { Some(j + 1) } else { None };
            layout.push((j, im, 0.0));
            j += 2;
        }
        let mut omega_max: f64 = 0.0;
        let channels = layout
            .into_iter()
            .map(|(re, im, b)| {
                let modes = (0..len)
                    .map(|k| {
                        let w2 = omega2[k];
                        let big = (b * b + 4.0 * w2).sqrt();
                        let s1 = 0.5 * (-b + big);
                        omega_max = omega_max.max(s1.abs()).max((0.5 * (-b - big)).abs());
                        let (m12, m21) = match spec.coords {
                            Coords::Position => (C::new(1.0, 0.0), C::new(-w2, 0.0)),
                            Coords::Deformation => (a_def[k], -a_def[k].conj()),
                        };
                        ModeCoef { half_omega: 0.5 * big, s1, b, m12, m21 }
                    })
                    .collect();
                Channel { re, im, b, modes }
            })
            .collect();
        Ok(FourierCache { spec: *spec, fft, channels, roots, sin_theta, def_weight, omega_max })
    }

    pub fn spec(&self) -> &LatticeSpec {
        &self.spec
    }

    fn channel_of(&self, j: usize) -> (usize, bool) {
        let ds = self.spec.dstar;
        if ds >= 2 {
            if j < 2 {
                (0, j == 1)
            } else {
                (1 + (j - 2) / 2, (j - 2) % 2 == 1)
            }
        } else {
            (j / 2, j % 2 == 1)
        }
    }

    /// Calls `f(k, m)` for every mode `k`, with `m = ξ_k · x mod N`.
    #[inline]
    fn for_each_phase(&self, x: usize, mut f: impl FnMut(usize, usize)) {
        let n = self.spec.n;
        let c = self.spec.site_coords(x);
        let d = self.spec.d;
        let n1 = if d >= 2 { n } else { 1 };
        let n2 = if d >= 3 { n } else { 1 };
        let mut k = 0;
        let mut ph2 = 0;
        for _ in 0..n2 {
            let mut ph1 = ph2;
            for _ in 0..n1 {
                let mut ph0 = ph1;
                for _ in 0..n {
                    f(k, ph0);
                    k += 1;
                    ph0 += c[0];
                    if ph0 >= n {
                        ph0 -= n;
                    }
                }
                ph1 += c[1];
                if ph1 >= n {
                    ph1 -= n;
                }
            }
            ph2 += c[2];
            if ph2 >= n {
                ph2 -= n;
            }
        }
    }
}

/// Mode flow without the channel-global factor `e^{−iBτ/2}`, which is
/// carried in [`FourierPropagator::frame`].
#[inline]
fn step_mode(m: &ModeCoef, tau: f64, p: C, w: C) -> (C, C) {
    let x = m.half_omega * tau;
    let (sh, ch) = sincos(x);
    let dd = if x.abs() < 1e-4 { tau * (1.0 - x * x / 6.0) } else { sh / m.half_omega };
    // e + dd (M − i s₁ I) with M = [[0, m12], [m21, −iB]].
    let a = C::new(ch, sh - dd * m.s1);
    let dm = C::new(ch, sh - dd * (m.b + m.s1));
    if m.m12.im == 0.0 && m.m21.im == 0.0 {
        (a * p + w * (dd * m.m12.re), p * (dd * m.m21.re) + dm * w)
    } else {
        (a * p + dd * (m.m12 * w), dd * (m.m21 * p) + dm * w)
    }
}

/// Fourier-space state of one trajectory.
#[derive(Clone)]
pub struct FourierPropagator {
    cache: Arc<FourierCache>,
    p: Vec<Vec<C>>,
    w: Vec<Vec<C>>,
    /// Per-channel `e^{−iBt/2}`; the physical amplitudes are `frame · p`.
    frame: Vec<C>,
    steps: u32,
}

impl FourierPropagator {
    pub fn new(cache: Arc<FourierCache>, s: &PhaseState) -> Result<Self> {
        s.check_dims()?;
        if s.spec != cache.spec {
            return Err(Error::InvalidArgument("state spec differs from backend spec".into()));
        }
        let ds = cache.spec.dstar;
        let sites = cache.spec.sites();
        let mut p = Vec::new();
        let mut w = Vec::new();
        for ch in &cache.channels {
            let mut pp: Vec<C> = (0..sites)
                .map(|x| C::new(s.pos[x * ds + ch.re], ch.im.map_or(0.0, |j| s.pos[x * ds + j])))
                .collect();
            let mut ww: Vec<C> = (0..sites)
                .map(|x| C::new(s.vel[x * ds + ch.re], ch.im.map_or(0.0, |j| s.vel[x * ds + j])))
                .collect();
            cache.fft.forward(&mut pp);
            cache.fft.forward(&mut ww);
            p.push(pp);
            w.push(ww);
        }
        let frame = vec![C::new(1.0, 0.0); p.len()];
        Ok(FourierPropagator { cache, p, w, frame, steps: 0 })
    }

    fn evolved(&self, tau: f64) -> (Vec<Vec<C>>, Vec<Vec<C>>) {
        let mut p = self.p.clone();
        let mut w = self.w.clone();
        for (c, ch) in self.cache.channels.iter().enumerate() {
            let phase = self.frame[c] * C::from_polar(1.0, -0.5 * ch.b * tau);
            for (k, m) in ch.modes.iter().enumerate() {
                let (a, b) = if tau != 0.0 { step_mode(m, tau, p[c][k], w[c][k]) } else { (p[c][k], w[c][k]) };
                p[c][k] = phase * a;
                w[c][k] = phase * b;
            }
        }
        (p, w)
    }

    fn read(&self, data: &[Vec<C>], site: usize, j: usize) -> f64 {
        let (c, imag) = self.cache.channel_of(j);
        let mut acc = C::new(0.0, 0.0);
        let roots = &self.cache.roots;
        let col = &data[c];
        self.cache.for_each_phase(site, |k, m| acc += col[k] * roots[m]);
        let v = self.frame[c] * acc / self.cache.fft.len() as f64;
        if imag {
            v.im
        } else {
            v.re
        }
    }
}

impl Propagator for FourierPropagator {
    fn spec(&self) -> &LatticeSpec {
        &self.cache.spec
    }

    fn advance(&mut self, tau: f64) {
        if tau == 0.0 {
            return;
        }
        self.steps += 1;
        for (c, ch) in self.cache.channels.iter().enumerate() {
            let f = self.frame[c] * C::from_polar(1.0, -0.5 * ch.b * tau);
            // Renormalise now and then so rounding cannot drift |frame| off 1.
            self.frame[c] = if self.steps % 1024 == 0 { f / f.norm() } else { f };
            let (pc, wc) = (&mut self.p[c], &mut self.w[c]);
            for (k, m) in ch.modes.iter().enumerate() {
                let (a, b) = step_mode(m, tau, pc[k], wc[k]);
                pc[k] = a;
                wc[k] = b;
            }
        }
    }

    fn position(&self, site: usize, j: usize) -> f64 {
        self.read(&self.p, site, j)
    }

    fn velocity(&self, site: usize, j: usize) -> f64 {
        self.read(&self.w, site, j)
    }

    fn add_velocity(&mut self, site: usize, j: usize, delta: f64) {
        let (c, imag) = self.cache.channel_of(j);
        let val = self.frame[c].conj() * if imag { C::new(0.0, delta) } else { C::new(delta, 0.0) };
        let roots = &self.cache.roots;
        let col = &mut self.w[c];
        self.cache.for_each_phase(site, |k, m| col[k] += val * roots[m].conj());
    }

    fn swap(&mut self, x: usize, y: usize, j: usize) -> (f64, f64) {
        let cache = &self.cache;
        if cache.spec.d != 1 {
            let u = self.velocity(x, j);
            let w = self.velocity(y, j);
            self.add_velocity(x, j, w - u);
            self.add_velocity(y, j, u - w);
            return (u, w);
        }
        // One pass reads both sites, one pass applies both rank-one updates.
        let n = cache.spec.n;
        let (c, imag) = cache.channel_of(j);
        let roots = &cache.roots;
        let col = &mut self.w[c];
        let (mut ax, mut ay) = (C::new(0.0, 0.0), C::new(0.0, 0.0));
        let (mut mx, mut my) = (0usize, 0usize);
        for v in col.iter() {
            ax += v * roots[mx];
            ay += v * roots[my];
            mx += x;
            if mx >= n {
                mx -= n;
            }
            my += y;
            if my >= n {
                my -= n;
            }
        }
        let scale = self.frame[c] / n as f64;
        let (vx, vy) = ((scale * ax), (scale * ay));
        let (u, w) = if imag { (vx.im, vy.im) } else { (vx.re, vy.re) };
        let delta = w - u;
        let val = self.frame[c].conj() * if imag { C::new(0.0, delta) } else { C::new(delta, 0.0) };
        let (mut mx, mut my) = (0usize, 0usize);
        for v in col.iter_mut() {
            *v += val * (roots[mx] - roots[my]).conj();
            mx += x;
            if mx >= n {
                mx -= n;
            }
            my += y;
            if my >= n {
                my -= n;
            }
        }
        (u, w)
    }

    fn state_ahead(&self, tau: f64) -> PhaseState {
        let (p, w) = self.evolved(tau);
        let spec = self.cache.spec;
        let ds = spec.dstar;
        let mut s = PhaseState::zeros(&spec);
        for (c, ch) in self.cache.channels.iter().enumerate() {
            let mut pp = p[c].clone();
            let mut ww = w[c].clone();
            self.cache.fft.inverse(&mut pp);
            self.cache.fft.inverse(&mut ww);
            for x in 0..spec.sites() {
                s.pos[x * ds + ch.re] = pp[x].re;
                s.vel[x * ds + ch.re] = ww[x].re;
                if let Some(j) = ch.im {
                    s.pos[x * ds + j] = pp[x].im;
                    s.vel[x * ds + j] = ww[x].im;
                }
            }
        }
        s
    }

    fn total_currents_ahead(&self, tau: f64, out: &mut [f64]) {
        let cache = &self.cache;
        let spec = &cache.spec;
        let d = spec.d;
        out.iter_mut().for_each(|o| *o = 0.0);
        // The channel phase cancels in `p̄ w`.
        for (c, ch) in cache.channels.iter().enumerate() {
            for (k, m) in ch.modes.iter().enumerate() {
                let (p, w) = if tau == 0.0 {
                    (self.p[c][k], self.w[c][k])
                } else {
                    step_mode(m, tau, self.p[c][k], self.w[c][k])
                };
                match spec.coords {
                    Coords::Position => {
                        let im = (p.conj() * w).im;
                        for a in 0..d {
                            out[a] += cache.sin_theta[k * d + a] * im;
                        }
                    }
                    Coords::Deformation => {
                        out[0] += (p.conj() * cache.def_weight[k] * w).re;
                    }
                }
            }
        }
        let len = cache.fft.len() as f64;
        let scale = match spec.coords {
            Coords::Position => -1.0 / len,
            Coords::Deformation => -0.5 / len,
        };
        out.iter_mut().for_each(|o| *o *= scale);
    }

    fn max_frequency(&self) -> f64 {
        self.cache.omega_max
    }

    fn box_clone(&self) -> Box<dyn Propagator> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{total_currents, total_energy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(spec: &LatticeSpec, seed: u64) -> PhaseState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = PhaseState::zeros(spec);
        s.pos.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        s.vel.iter_mut().for_each(|x| *x = rng.gen_range(-1.0..1.0));
        s
    }

    fn specs() -> Vec<LatticeSpec> {
        vec![
            LatticeSpec::position(1, 2, 7, 1.3, 1.0).unwrap(),
            LatticeSpec::position(1, 3, 6, -0.7, 1.0).unwrap(),
            LatticeSpec::position(2, 2, 4, 0.5, 1.0).unwrap(),
            LatticeSpec::position(3, 1, 3, 0.0, 1.0).unwrap(),
            LatticeSpec::deformation(8, 1.0, 1.0, Charge::Uniform).unwrap(),
            LatticeSpec::deformation(5, 2.0, 1.0, Charge::Zero).unwrap(),
        ]
    }

    #[test]
    fn round_trip_and_reads() {
        for spec in specs() {
            let s = random_state(&spec, 3);
            let pr = FourierPropagator::new(Arc::new(FourierCache::new(&spec).unwrap()), &s).unwrap();
            let back = pr.state_ahead(0.0);
            for (a, b) in back.flat().iter().zip(s.flat()) {
                assert!((a - b).abs() < 1e-12);
            }
            for x in 0..spec.sites() {
                for j in 0..spec.dstar {
                    assert!((pr.velocity(x, j) - s.v(x, j)).abs() < 1e-12);
                    assert!((pr.position(x, j) - s.q(x, j)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rank_one_update_and_current_totals() {
        for spec in specs() {
            let s = random_state(&spec, 5);
            let mut pr = FourierPropagator::new(Arc::new(FourierCache::new(&spec).unwrap()), &s).unwrap();
            let j = spec.dstar - 1;
            pr.add_velocity(1, j, 0.25);
            let mut want = s.clone();
            want.vel[spec.dstar + j] += 0.25;
            let got = pr.state_ahead(0.0);
            for (a, b) in got.flat().iter().zip(want.flat()) {
                assert!((a - b).abs() < 1e-12);
            }
            let mut tot = vec![0.0; spec.d];
            pr.total_currents_ahead(0.0, &mut tot);
            for (a, b) in tot.iter().zip(total_currents(&want)) {
                assert!((a - b).abs() < 1e-11, "{spec:?}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn flow_conserves_energy_and_composes() {
        for spec in specs() {
            let s = random_state(&spec, 9);
            let cache = Arc::new(FourierCache::new(&spec).unwrap());
            let mut pr = FourierPropagator::new(cache, &s).unwrap();
            let e0 = total_energy(&s);
            let once = pr.state_ahead(0.9);
            pr.advance(0.3);
            pr.advance(0.6);
            let twice = pr.state_ahead(0.0);
            for (a, b) in once.flat().iter().zip(twice.flat()) {
                assert!((a - b).abs() < 1e-12);
            }
            assert!((total_energy(&once) - e0).abs() < 1e-12 * e0.max(1.0));
        }
    }

    #[test]
    fn fused_swap_matches_reads() {
        for spec in specs() {
            let s = random_state(&spec, 11);
            let mut pr = FourierPropagator::new(Arc::new(FourierCache::new(&spec).unwrap()), &s).unwrap();
            pr.advance(0.37);
            let mut want = pr.state_ahead(0.0);
            let (x, y, j) = (spec.sites() - 1, 0, spec.dstar - 1);
            let (u, w) = pr.swap(x, y, j);
            assert!((u - want.v(x, j)).abs() < 1e-12 && (w - want.v(y, j)).abs() < 1e-12);
            want.vel.swap(x * spec.dstar + j, y * spec.dstar + j);
            for (a, b) in pr.state_ahead(0.0).flat().iter().zip(want.flat()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

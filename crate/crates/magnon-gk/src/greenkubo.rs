//! Monte Carlo Green–Kubo estimators over trajectory ensembles.
//!
//! Trajectory `k` of a run with seed `s` draws its initial state from stream
//! [`stream::INITIAL`] of `member_seed(s, k)` and its noise from the same
//! member seed, so ensembles are reproducible independently of scheduling.
//! Standard errors are leave-one-out jackknife over trajectories.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{simulate, Backend, BackendKind, SimOptions, Trajectory};
use crate::error::{Error, Result};
use crate::lattice::LatticeSpec;
use crate::rng::{member_seed, stream, stream_rng};
use crate::sampling::EnsembleSpec;

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

fn csum<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let mut s = CompensatedSum::default();
    for x in it {
        s.add(x);
    }
    s.value()
}

/// Mean and jackknife standard error of per-trajectory samples.
pub fn jackknife_mean(samples: &[f64]) -> Result<(f64, f64)> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let total = csum(samples.iter().copied());
    let mean = total / n as f64;
    if n == 1 {
        return Ok((mean, 0.0));
    }
    let m = n as f64;
    let var = csum(samples.iter().map(|x| {
        let loo = (total - x) / (m - 1.0);
        (loo - mean).powi(2)
    }));
    Ok((mean, ((m - 1.0) / m * var).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// `E[Σ_x j_{x,x+e}(s) j_{0,e}(0)]` with the lag measured from `t = 0`.
    EnsembleFromOrigin,
    /// `N^{-d} E[J(t+s)J(t)]` averaged over all start times `t` in a trajectory.
    TimeAverage,
    /// `(2N^dE²t)^{-1} E[𝒥_a𝒥_b]` or `β²(8Nt)^{-1} E[𝒥²]`.
    DirectKappa,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub spec: LatticeSpec,
    pub ensemble: EnsembleSpec,
    pub estimator: Estimator,
    pub n_samples: usize,
    pub seed: Option<u64>,
    /// Directions `(a, b)` of the currents involved.
    pub directions: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub meta: SeriesMeta,
}

impl CorrelationSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// An ensemble of trajectories sharing spec, ensemble and base seed.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub ensemble: EnsembleSpec,
    pub seed: u64,
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub spec: LatticeSpec,
    pub ensemble: EnsembleSpec,
    pub n_traj: usize,
    pub t_end: f64,
    pub dt_out: f64,
    pub seed: u64,
    pub backend: Option<BackendKind>,
    #[serde(default)]
    pub options: SimOptions,
}

/// Sample and simulate `n_traj` members in parallel; the result does not
/// depend on the thread count.
pub fn run_ensemble(cfg: &RunConfig) -> Result<Ensemble> {
    cfg.spec.validate()?;
    cfg.ensemble.check(&cfg.spec)?;
    if cfg.n_traj == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let backend = Backend::new(&cfg.spec, cfg.backend.unwrap_or_else(|| BackendKind::default_for(&cfg.spec)))?;
    let trajectories = (0..cfg.n_traj as u64)
        .into_par_iter()
        .map(|k| run_member(cfg, &backend, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble { ensemble: cfg.ensemble.clone(), seed: cfg.seed, trajectories })
}

/// Member `k` of an ensemble run.
pub fn run_member(cfg: &RunConfig, backend: &Backend, k: u64) -> Result<Trajectory> {
    let s = member_seed(cfg.seed, k);
    let mut rng = stream_rng(s, stream::INITIAL);
    let s0 = cfg.ensemble.sample(&cfg.spec, &mut rng)?;
    simulate(&s0, cfg.t_end, cfg.dt_out, s, backend, &cfg.options)
}

fn check_shared(trajs: &[Trajectory]) -> Result<&Trajectory> {
    let first = trajs.first().ok_or(Error::EmptyEnsemble)?;
    for t in trajs {
        if t.spec != first.spec || t.times.len() != first.times.len() || t.dt_out != first.dt_out {
            return Err(Error::InvalidArgument("trajectories do not share spec and output grid".into()));
        }
    }
    Ok(first)
}

fn check_direction(spec: &LatticeSpec, a: usize) -> Result<()> {
    if a >= spec.d {
        return Err(Error::InvalidArgument(format!("direction {a} >= d = {}", spec.d)));
    }
    Ok(())
}

/// Green–Kubo normalisation `κ = factor(t) · E[𝒥_a𝒥_b]`.
fn kappa_factor(spec: &LatticeSpec, ens: &EnsembleSpec, t: f64) -> f64 {
    let sites = spec.sites() as f64;
    match ens {
        EnsembleSpec::Microcanonical { e } => 1.0 / (2.0 * sites * e * e * t),
        EnsembleSpec::Canonical { beta, .. } => beta * beta / (8.0 * sites * t),
    }
}

/// Direct estimator of `κ^{a,b}(t)` at every positive output time.
pub fn estimate_kappa(ens: &Ensemble, a: usize, b: usize) -> Result<CorrelationSeries> {
    let first = check_shared(&ens.trajectories)?;
    let spec = first.spec;
    check_direction(&spec, a)?;
    check_direction(&spec, b)?;
    if ens.trajectories.iter().any(|t| t.integrated_current.is_empty()) {
        return Err(Error::InvalidArgument("trajectories lack integrated currents (enable tracking)".into()));
    }
    let (mut times, mut values, mut stderr) = (vec![], vec![], vec![]);
    for (k, &t) in first.times.iter().enumerate() {
        if t <= 0.0 {
            continue;
        }
        let f = kappa_factor(&spec, &ens.ensemble, t);
        let xs: Vec<f64> = ens
            .trajectories
            .iter()
            .map(|tr| f * tr.integrated_current[k][a] * tr.integrated_current[k][b])
            .collect();
        let (m, se) = jackknife_mean(&xs)?;
        times.push(t);
        values.push(m);
        stderr.push(se);
    }
    Ok(CorrelationSeries {
        times,
        values,
        stderr,
        meta: SeriesMeta {
            spec,
            ensemble: ens.ensemble.clone(),
            estimator: Estimator::DirectKappa,
            n_samples: ens.trajectories.len(),
            seed: Some(ens.seed),
            directions: [a, b],
        },
    })
}

/// Current autocorrelation `C_N(s)` (or `D_N(s)`) on lags `0..=max_lag`
/// output steps in direction `a`.
pub fn estimate_correlation(ens: &Ensemble, estimator: Estimator, a: usize, max_lag: usize) -> Result<CorrelationSeries> {
    let first = check_shared(&ens.trajectories)?;
    let spec = first.spec;
    check_direction(&spec, a)?;
    let k_out = first.times.len() - 1;
    if max_lag > k_out {
        return Err(Error::LagExceedsHorizon { lag: max_lag as f64 * first.dt_out, horizon: first.times[k_out] });
    }
    let sites = spec.sites() as f64;
    let per_traj: Vec<Vec<f64>> = match estimator {
        Estimator::EnsembleFromOrigin => {
            if a != 0 {
                return Err(Error::InvalidArgument("origin current is recorded in direction 0 only".into()));
            }
            ens.trajectories
                .iter()
                .map(|tr| (0..=max_lag).map(|k| tr.total_current[k][a] * tr.origin_current[0]).collect())
                .collect()
        }
        Estimator::TimeAverage => ens
            .trajectories
            .par_iter()
            .map(|tr| {
                (0..=max_lag)
                    .map(|k| {
                        let m = k_out - k + 1;
                        csum((0..m).map(|i| tr.total_current[i + k][a] * tr.total_current[i][a])) / (m as f64 * sites)
                    })
                    .collect()
            })
            .collect(),
        Estimator::DirectKappa => {
            return Err(Error::InvalidArgument("use estimate_kappa for the direct estimator".into()));
        }
    };
    let mut values = Vec::with_capacity(max_lag + 1);
    let mut stderr = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let xs: Vec<f64> = per_traj.iter().map(|v| v[k]).collect();
        let (m, se) = jackknife_mean(&xs)?;
        values.push(m);
        stderr.push(se);
    }
    Ok(CorrelationSeries {
        times: (0..=max_lag).map(|k| k as f64 * first.dt_out).collect(),
        values,
        stderr,
        meta: SeriesMeta {
            spec,
            ensemble: ens.ensemble.clone(),
            estimator,
            n_samples: ens.trajectories.len(),
            seed: Some(ens.seed),
            directions: [a, a],
        },
    })
}

/// Value with a (conservatively propagated) standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GkValue {
    pub value: f64,
    pub stderr: f64,
}

/// `w ∫₀ᵗ (1 − s/t) C(s) ds + const` by the trapezoid rule on the series
/// grid, with `(w, const) = (1/E², γ/(2d*))` or `(β²/4, γ/4)`.
///
/// The error bar adds the per-point errors linearly (lags are correlated).
pub fn gk_integral_of_series(c: &CorrelationSeries, t: f64) -> Result<GkValue> {
    let spec = &c.meta.spec;
    let (w, k0) = match &c.meta.ensemble {
        EnsembleSpec::Microcanonical { e } => (1.0 / (e * e), spec.gamma / (2.0 * spec.dstar as f64)),
        EnsembleSpec::Canonical { beta, .. } => (0.25 * beta * beta, 0.25 * spec.gamma),
    };
    gk_integral_with(&c.times, &c.values, &c.stderr, t, w, k0)
}

/// Trapezoid of `(1 − s/t)·values` on `[0, t]` scaled by `w`, plus `k0`.
pub fn gk_integral_with(times: &[f64], values: &[f64], stderr: &[f64], t: f64, w: f64, k0: f64) -> Result<GkValue> {
    if times.is_empty() || times.len() != values.len() || times.len() != stderr.len() {
        return Err(Error::InvalidArgument("malformed series".into()));
    }
    if !(t > 0.0) || t > *times.last().unwrap() * (1.0 + 1e-12) || times[0] > 0.0 {
        return Err(Error::InvalidArgument(format!("t={t} outside the series grid")));
    }
    let (mut acc, mut err) = (CompensatedSum::default(), 0.0);
    for i in 0..times.len() - 1 {
        let (s0, s1) = (times[i], times[i + 1].min(t));
        if s0 >= t {
            break;
        }
        let lerp = |s: f64, v: &[f64]| v[i] + (v[i + 1] - v[i]) * (s - times[i]) / (times[i + 1] - times[i]);
        let f0 = (1.0 - s0 / t) * values[i];
        let f1 = (1.0 - s1 / t) * lerp(s1, values);
        let e0 = (1.0 - s0 / t) * stderr[i];
        let e1 = (1.0 - s1 / t) * lerp(s1, stderr);
        acc.add(0.5 * (s1 - s0) * (f0 + f1));
        err += 0.5 * (s1 - s0) * (e0 + e1);
    }
    Ok(GkValue { value: w * acc.value() + k0, stderr: w.abs() * err })
}

/// Largest lag trusted against infinite-volume forms: `s ≤ N/4`.
pub fn finite_size_window(spec: &LatticeSpec) -> f64 {
    spec.n as f64 / 4.0
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowComparison {
    /// Max over in-window lags of `|MC − closed| / √(se² + err²)`.
    pub max_z: f64,
    pub points: usize,
    /// Requested lags beyond the finite-size window (not compared).
    pub flagged: Vec<f64>,
}

/// Compare a Monte Carlo series with closed-form values on the same grid.
pub fn compare_with_closed_form(c: &CorrelationSeries, closed: &[f64], closed_err: &[f64]) -> Result<WindowComparison> {
    if closed.len() != c.len() || closed_err.len() != c.len() {
        return Err(Error::DimensionMismatch { expected: c.len(), got: closed.len() });
    }
    let win = finite_size_window(&c.meta.spec);
    let (mut max_z, mut points, mut flagged) = (0.0f64, 0, vec![]);
    for i in 0..c.len() {
        if c.times[i] > win {
            flagged.push(c.times[i]);
            continue;
        }
        let se = (c.stderr[i].powi(2) + closed_err[i].powi(2)).sqrt();
        let diff = (c.values[i] - closed[i]).abs();
        let z = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
        max_z = max_z.max(z);
        points += 1;
    }
    Ok(WindowComparison { max_z, points, flagged })
}

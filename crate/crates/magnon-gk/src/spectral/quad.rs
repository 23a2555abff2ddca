//! Adaptive Gauss–Kronrod (7/15) quadrature with global error control.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
/// Gauss weights for the odd-indexed Kronrod nodes.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Geometric breakpoints used on every `[0, ½]` factor: the slow modes of
/// all closed forms concentrate at `θ → 0`.
pub const ORIGIN_BREAKS: [f64; 8] = [0.0, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 0.1, 0.5];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions { abs_tol: 1e-13, rel_tol: 1e-10, max_intervals: 4000 }
    }
}

impl QuadOptions {
    pub fn rel(rel_tol: f64) -> Self {
        QuadOptions { rel_tol, ..Default::default() }
    }

    fn target(&self, value: f64) -> f64 {
        self.abs_tol.max(self.rel_tol * value.abs())
    }
}

/// A quadrature value with its a-posteriori error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

impl Estimate {
    pub fn new(value: f64, error: f64) -> Self {
        Estimate { value, error }
    }

    pub fn scale(self, c: f64) -> Self {
        Estimate { value: c * self.value, error: c.abs() * self.error }
    }
}

impl std::ops::Add for Estimate {
    type Output = Estimate;
    fn add(self, o: Estimate) -> Estimate {
        Estimate { value: self.value + o.value, error: self.error + o.error }
    }
}

struct Piece {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, o: &Self) -> bool {
        self.error == o.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Piece {
    fn cmp(&self, o: &Self) -> Ordering {
        self.error.total_cmp(&o.error)
    }
}

fn nodes(a: f64, b: f64) -> [f64; 15] {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut x = [0.0; 15];
    for i in 0..7 {
        x[i] = c - h * XGK[i];
        x[14 - i] = c + h * XGK[i];
    }
    x[7] = c;
    x
}

fn rule(a: f64, b: f64, f: &[f64; 15]) -> (f64, f64) {
    let h = 0.5 * (b - a);
    let mut k = WGK[7] * f[7];
    let mut g = WG[3] * f[7];
    for i in 0..7 {
        let s = f[i] + f[14 - i];
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// One 15-point Kronrod panel; returns `(value, |K − G|)`.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let x = nodes(a, b);
    let mut v = [0.0; 15];
    for i in 0..15 {
        v[i] = f(x[i]);
    }
    rule(a, b, &v)
}

fn gk15_par<F: Fn(f64) -> f64 + Sync>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let x = nodes(a, b);
    let vals: Vec<f64> = x.par_iter().map(|&t| f(t)).collect();
    let mut v = [0.0; 15];
    v.copy_from_slice(&vals);
    rule(a, b, &v)
}

fn adaptive<R: FnMut(f64, f64) -> (f64, f64)>(
    mut rule: R,
    breaks: &[f64],
    opts: &QuadOptions,
) -> Result<Estimate> {
    let mut heap = BinaryHeap::new();
    let (mut total, mut err) = (0.0, 0.0);
    for w in breaks.windows(2) {
        if w[1] <= w[0] {
            continue;
        }
        let (v, e) = rule(w[0], w[1]);
        total += v;
        err += e;
        heap.push(Piece { a: w[0], b: w[1], value: v, error: e });
    }
    while err > opts.target(total) {
        if heap.len() >= opts.max_intervals {
            return Err(Error::Quadrature { estimate: err, requested: opts.target(total) });
        }
        let p = heap.pop().expect("non-empty heap");
        let m = 0.5 * (p.a + p.b);
        if m <= p.a || m >= p.b {
            return Err(Error::Quadrature { estimate: err, requested: opts.target(total) });
        }
        let (v1, e1) = rule(p.a, m);
        let (v2, e2) = rule(m, p.b);
        total += v1 + v2 - p.value;
        err += e1 + e2 - p.error;
        heap.push(Piece { a: p.a, b: m, value: v1, error: e1 });
        heap.push(Piece { a: m, b: p.b, value: v2, error: e2 });
    }
    // Recompute the error sum to shed accumulated rounding from the updates.
    let err: f64 = heap.iter().map(|p| p.error).sum();
    let total: f64 = heap.iter().map(|p| p.value).sum();
    Ok(Estimate::new(total, err))
}

/// Adaptive integral of `f` over the union of `breaks` intervals.
pub fn integrate<F: Fn(f64) -> f64>(f: F, breaks: &[f64], opts: &QuadOptions) -> Result<Estimate> {
    adaptive(|a, b| gk15(&f, a, b), breaks, opts)
}

/// As [`integrate`], evaluating the 15 nodes of each panel in parallel.
pub fn integrate_par<F: Fn(f64) -> f64 + Sync>(f: F, breaks: &[f64], opts: &QuadOptions) -> Result<Estimate> {
    adaptive(|a, b| gk15_par(&f, a, b), breaks, opts)
}

/// Fixed-panel Kronrod sum, for integrands whose oscillation scale is known.
pub fn integrate_panels<F: Fn(f64) -> f64 + Sync>(f: F, a: f64, b: f64, panels: usize) -> Estimate {
    let panels = panels.max(1);
    let h = (b - a) / panels as f64;
    let parts: Vec<(f64, f64)> = (0..panels)
        .into_par_iter()
        .map(|k| gk15(&f, a + k as f64 * h, a + (k + 1) as f64 * h))
        .collect();
    parts.iter().fold(Estimate::default(), |acc, &(v, e)| acc + Estimate::new(v, e))
}

/// Nested integral of `f(θ)` over `[0, ½]^d`, each factor split at
/// [`ORIGIN_BREAKS`]. Inner levels run at a tolerance one decade tighter;
/// their residual errors are accumulated into the returned estimate.
pub fn integrate_cube<F: Fn(&[f64]) -> f64 + Sync>(d: usize, f: &F, opts: &QuadOptions) -> Result<Estimate> {
    if d == 0 || d > 3 {
        return Err(Error::InvalidArgument(format!("cube dimension {d} not in 1..=3")));
    }
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let inner_err = Mutex::new(0.0f64);
    let inner = QuadOptions { abs_tol: opts.abs_tol * 0.1, rel_tol: opts.rel_tol * 0.1, ..*opts };
    let rec = |x0: f64| -> f64 {
        match level(1, d, [x0, 0.0, 0.0], f, &inner) {
            Ok(e) => {
                let mut m = inner_err.lock().unwrap();
                *m = m.max(e.error);
                e.value
            }
            Err(e) => {
                failure.lock().unwrap().get_or_insert(e);
                0.0
            }
        }
    };
    let out = if d == 1 {
        integrate(|x| f(&[x]), &ORIGIN_BREAKS, opts)?
    } else {
        integrate_par(rec, &ORIGIN_BREAKS, opts)?
    };
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let extra = 0.5 * inner_err.into_inner().unwrap();
    Ok(Estimate::new(out.value, out.error + extra))
}

fn level<F: Fn(&[f64]) -> f64>(k: usize, d: usize, p: [f64; 3], f: &F, opts: &QuadOptions) -> Result<Estimate> {
    let sub_err = std::cell::Cell::new(0.0f64);
    let failure = std::cell::RefCell::new(None);
    let g = |x: f64| -> f64 {
        let mut q = p;
        q[k] = x;
        if k + 1 == d {
            f(&q[..d])
        } else {
            let inner = QuadOptions { abs_tol: opts.abs_tol * 0.1, rel_tol: opts.rel_tol * 0.1, ..*opts };
            match level(k + 1, d, q, f, &inner) {
                Ok(e) => {
                    sub_err.set(sub_err.get().max(e.error));
                    e.value
                }
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    0.0
                }
            }
        }
    };
    let out = integrate(g, &ORIGIN_BREAKS, opts)?;
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    Ok(Estimate::new(out.value, out.error + 0.5 * sub_err.get()))
}

//! Discrete Fourier transform on `Z_N^d`.
//!
//! Convention: `f̂(ξ) = Σ_z f(z) e^{−2πi ξ·z/N}`, inverse carrying `1/N^d`.
//! Mode indices use the same row-major layout as sites.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct LatticeFft {
    n: usize,
    d: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LatticeFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "LatticeFft(n={}, d={})", self.n, self.d)
    }
}

impl LatticeFft {
    pub fn new(n: usize, d: usize) -> Self {
        let mut planner = FftPlanner::new();
        LatticeFft { n, d, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn run(&self, plan: &Arc<dyn Fft<f64>>, data: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(data.len(), self.len());
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        // Axis 0 is contiguous.
        plan.process_with_scratch(data, &mut scratch);
        let mut line = vec![Complex64::default(); n];
        for axis in 1..self.d {
            let stride = n.pow(axis as u32);
            let block = stride * n;
            for base in (0..data.len()).step_by(block) {
                for off in 0..stride {
                    for (k, l) in line.iter_mut().enumerate() {
                        *l = data[base + off + k * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (k, l) in line.iter().enumerate() {
                        data[base + off + k * stride] = *l;
                    }
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.run(&self.fwd, data);
    }

    pub fn inverse(&self, data: &mut [Complex64]) {
        self.run(&self.inv, data);
        let s = 1.0 / self.len() as f64;
        data.iter_mut().for_each(|x| *x *= s);
    }

    /// `−ξ` for the mode with linear index `k`.
    pub fn negate(&self, k: usize) -> usize {
        let mut out = 0;
        let mut stride = 1;
        let mut r = k;
        for _ in 0..self.d {
            let c = r % self.n;
            r /= self.n;
            out += ((self.n - c) % self.n) * stride;
            stride *= self.n;
        }
        out
    }

    /// Integer mode coordinates of linear index `k`.
    pub fn mode(&self, k: usize) -> [usize; 3] {
        let mut c = [0; 3];
        let mut r = k;
        for ca in c.iter_mut().take(self.d) {
            *ca = r % self.n;
            r /= self.n;
        }
        c
    }
}

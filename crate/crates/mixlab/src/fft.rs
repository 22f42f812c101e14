//! Zero-padded linear convolution of grid fields with kernel tables.
//!
//! Fields live on m^n nodes, kernels on (2m-1)^n offsets; both are embedded
//! in a (2m)^n periodic buffer so the circular convolution equals the linear
//! one on the grid. Axis passes skip lines that are known to be zero on the
//! way in and lines whose output is discarded on the way out.

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

use crate::geometry::Grid;
use crate::kernels::KernelTable;

const CHUNK: usize = 64;

/// Real spectrum of an even kernel on the padded lattice.
#[derive(Clone, Debug)]
pub struct Spectrum(Vec<f64>);

impl Spectrum {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub struct Convolver {
    n: usize,
    m: usize,
    p: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver").field("n", &self.n).field("m", &self.m).finish()
    }
}

impl Convolver {
    pub fn new(grid: &Grid) -> Self {
        let m = grid.nodes_per_axis();
        let p = 2 * m;
        let mut planner = FftPlanner::new();
        Self { n: grid.dim(), m, p, fwd: planner.plan_fft_forward(p), inv: planner.plan_fft_inverse(p) }
    }

    fn padded_len(&self) -> usize {
        self.p.pow(self.n as u32)
    }

    /// Transform the kernel table once.
    pub fn spectrum(&self, table: &KernelTable) -> Spectrum {
        let mut buf = vec![Complex::new(0.0, 0.0); self.padded_len()];
        let m = self.m as i64;
        for (i, &v) in table.values().iter().enumerate() {
            let j = table.offset(i);
            let mut idx = 0usize;
            for &jd in &j[..self.n] {
                idx = idx * self.p + jd.rem_euclid(2 * m) as usize;
            }
            buf[idx].re = v;
        }
        self.passes(&mut buf, true, false);
        Spectrum(buf.into_iter().map(|c| c.re).collect())
    }

    fn load(&self, buf: &mut [Complex<f64>], u: &[f64], imag: bool) {
        for (k, &v) in u.iter().enumerate() {
            let idx = self.embed(k);
            if imag {
                buf[idx].im = v;
            } else {
                buf[idx].re = v;
            }
        }
    }

    fn embed(&self, mut k: usize) -> usize {
        let mut idx = 0;
        let mut mult = 1;
        for _ in 0..self.n {
            idx += (k % self.m) * mult;
            k /= self.m;
            mult *= self.p;
        }
        idx
    }

    /// Lattice sum (K * u)(x) = sum_y K(x - y) u(y), no cell volume.
    pub fn convolve(&self, spec: &Spectrum, u: &[f64]) -> Vec<f64> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.padded_len()];
        self.load(&mut buf, u, false);
        self.passes(&mut buf, true, true);
        for (z, &k) in buf.iter_mut().zip(&spec.0) {
            *z *= k;
        }
        self.passes(&mut buf, false, true);
        let scale = 1.0 / self.padded_len() as f64;
        (0..u.len()).map(|k| buf[self.embed(k)].re * scale).collect()
    }

    /// Two convolutions (A * u, B * w) for the price of one complex transform pair.
    pub fn convolve_pair(&self, a: &Spectrum, u: &[f64], b: &Spectrum, w: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut buf = vec![Complex::new(0.0, 0.0); self.padded_len()];
        self.load(&mut buf, u, false);
        self.load(&mut buf, w, true);
        self.passes(&mut buf, true, true);
        let z = buf.clone();
        for (k, out) in buf.iter_mut().enumerate() {
            let zk = z[k];
            let zm = z[self.mirror(k)].conj();
            let (ak, bk) = (a.0[k], b.0[k]);
            // U = (Z(k) + conj Z(-k))/2, W = (Z(k) - conj Z(-k))/(2i)
            *out = zk * (0.5 * (ak + bk)) + zm * (0.5 * (ak - bk));
        }
        self.passes(&mut buf, false, true);
        let scale = 1.0 / self.padded_len() as f64;
        (0..u.len())
            .map(|k| {
                let c = buf[self.embed(k)];
                (c.re * scale, c.im * scale)
            })
            .unzip()
    }

    fn mirror(&self, mut k: usize) -> usize {
        let mut idx = 0;
        let mut mult = 1;
        for _ in 0..self.n {
            let c = k % self.p;
            idx += ((self.p - c) % self.p) * mult;
            k /= self.p;
            mult *= self.p;
        }
        idx
    }

    // Axis-by-axis transform. With `prune`, only outer blocks whose leading
    // coordinates are < m are touched: on input those are the only nonzero
    // ones, on output the only ones that are read back.
    fn passes(&self, buf: &mut [Complex<f64>], forward: bool, prune: bool) {
        let plan = if forward { &self.fwd } else { &self.inv };
        let mut scratch = vec![Complex::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        let mut tmp = vec![Complex::new(0.0, 0.0); CHUNK * self.p];
        let axes: Vec<usize> = if forward { (0..self.n).rev().collect() } else { (0..self.n).collect() };
        for d in axes {
            let stride = self.p.pow((self.n - 1 - d) as u32);
            let lead = if prune { self.m } else { self.p };
            let blocks = lead.pow(d as u32);
            for b in 0..blocks {
                let mut base = 0;
                let mut rem = b;
                for e in (0..d).rev() {
                    base += (rem % lead) * self.p.pow((self.n - 1 - e) as u32);
                    rem /= lead;
                }
                if stride == 1 {
                    plan.process_with_scratch(&mut buf[base..base + self.p], &mut scratch);
                    continue;
                }
                let mut r0 = 0;
                while r0 < stride {
                    let width = CHUNK.min(stride - r0);
                    for k in 0..self.p {
                        let row = base + k * stride + r0;
                        for r in 0..width {
                            tmp[r * self.p + k] = buf[row + r];
                        }
                    }
                    plan.process_with_scratch(&mut tmp[..width * self.p], &mut scratch);
                    for k in 0..self.p {
                        let row = base + k * stride + r0;
                        for r in 0..width {
                            buf[row + r] = tmp[r * self.p + k];
                        }
                    }
                    r0 += width;
                }
            }
        }
    }
}

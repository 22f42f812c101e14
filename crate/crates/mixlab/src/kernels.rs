//! The constant C(n, s), tabulated Riesz and Gagliardo kernels and their
//! analytic far-field tails.

use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{param, Error, Result};
use crate::geometry::Grid;
use crate::quad::{adaptive, gk15, tensor_gl};

#[derive(Clone, Copy, Debug, Serialize)]
pub struct FracConstant {
    pub n: usize,
    pub s: f64,
    pub value: f64,
    /// Relative error estimate of `value`.
    pub rel_error: f64,
}

fn check_order(s: f64) -> Result<()> {
    if s.is_finite() && s > 0.0 && s < 1.0 {
        Ok(())
    } else {
        Err(param(format!("fractional order s = {s} must lie in (0,1)")))
    }
}

fn check_dim(n: usize) -> Result<()> {
    if (1..=3).contains(&n) {
        Ok(())
    } else {
        Err(param(format!("dimension n = {n} must be 1, 2 or 3")))
    }
}

// 1 - cos t - t^2/2 without cancellation for t <= 1.
fn one_minus_cos_reg(t: f64) -> f64 {
    let t2 = t * t;
    let mut term = t2 * t2 / 24.0;
    let mut sum = 0.0;
    let mut k = 2.0;
    while term.abs() > 1e-300 && k < 30.0 {
        sum -= term;
        term *= -t2 / ((2.0 * k + 1.0) * (2.0 * k + 2.0));
        k += 1.0;
    }
    sum
}

/// I_s = int_0^inf (1 - cos t) t^{-1-2s} dt with an error estimate.
fn radial_integral(s: f64) -> (f64, f64) {
    let a = 1.0 + 2.0 * s;
    let (inner, e_inner) = adaptive(|t: f64| if t == 0.0 { 0.0 } else { one_minus_cos_reg(t) * t.powf(-a) }, 0.0, 1.0, 1e-15, 1e-13);
    let analytic = 1.0 / (4.0 - 4.0 * s) + 1.0 / (2.0 * s);

    // int_1^inf cos t t^{-a}: panels up to T = 2 pi K, then the asymptotic tail.
    let periods = 64;
    let cosf = |t: f64| t.cos() * t.powf(-a);
    let mut osc = 0.0;
    let mut e_osc = 0.0;
    let mut lo = 1.0;
    for k in 1..=periods {
        let hi = 2.0 * PI * k as f64;
        for j in 0..4 {
            let (pa, pb) = (lo + (hi - lo) * j as f64 / 4.0, lo + (hi - lo) * (j + 1) as f64 / 4.0);
            let (v, e) = gk15(&cosf, pa, pb);
            osc += v;
            e_osc += e;
        }
        lo = hi;
    }
    // sin T = 0, cos T = 1: tail = sum_k (-1)^k (a)_{2k+1} T^{-a-2k-1}
    let t = lo;
    let mut poch = a;
    let mut tail = 0.0;
    let mut last = 0.0;
    for k in 0..12 {
        let term = poch * t.powf(-a - 2.0 * k as f64 - 1.0);
        tail += if k % 2 == 0 { term } else { -term };
        last = term;
        poch *= (a + 2.0 * k as f64 + 1.0) * (a + 2.0 * k as f64 + 2.0);
    }
    let value = inner + analytic - (osc + tail);
    (value, e_inner + e_osc + last)
}

/// int over S^{n-1} of |omega_1|^{2s}.
fn sphere_moment(n: usize, s: f64) -> (f64, f64) {
    match n {
        1 => (2.0, 0.0),
        2 => {
            let (v, e) = adaptive(|t: f64| t.cos().powf(2.0 * s), 0.0, 0.5 * PI, 1e-15, 1e-14);
            (4.0 * v, 4.0 * e)
        }
        _ => (4.0 * PI / (2.0 * s + 1.0), 0.0),
    }
}

/// C(n, s) = 1 / int_{R^n} (1 - cos z_1)/|z|^{n+2s} dz by quadrature.
pub fn frac_constant(n: usize, s: f64) -> Result<FracConstant> {
    check_dim(n)?;
    check_order(s)?;
    let (radial, e_r) = radial_integral(s);
    let (sphere, e_s) = sphere_moment(n, s);
    let integral = radial * sphere;
    let rel_error = e_r / radial.abs() + e_s / sphere;
    if !(integral.is_finite() && integral > 0.0) || rel_error > 1e-8 {
        return Err(Error::NoConvergence { what: "C(n,s) quadrature", iterations: 0, best: 1.0 / integral });
    }
    Ok(FracConstant { n, s, value: 1.0 / integral, rel_error })
}

/// Surface measure of the unit sphere in R^n.
pub fn unit_sphere_area(n: usize) -> f64 {
    match n {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

/// int_{|z| > r} |z|^{-n-2s} dz.
pub fn ball_tail(n: usize, s: f64, r: f64) -> f64 {
    unit_sphere_area(n) * r.powf(-2.0 * s) / (2.0 * s)
}

// int over [-1,1]^{n-1} of (1+|v|^2)^{-q/2} and of v_1^2 (1+|v|^2)^{-q/2}.
fn face_integrals(n: usize, q: f64) -> (f64, f64) {
    if n == 1 {
        return (1.0, 0.0);
    }
    let f0 = tensor_gl(|v| (1.0 + v.iter().map(|x| x * x).sum::<f64>()).powf(-0.5 * q), n - 1, -1.0, 1.0, 40);
    let f1 = tensor_gl(|v| v[0] * v[0] * (1.0 + v.iter().map(|x| x * x).sum::<f64>()).powf(-0.5 * q), n - 1, -1.0, 1.0, 40);
    (f0, f1)
}

/// int outside the cube [-a, a]^n of |z|^{-n-2s} dz.
pub fn cube_tail(n: usize, s: f64, a: f64) -> f64 {
    let (f0, _) = face_integrals(n, n as f64 + 2.0 * s);
    2.0 * n as f64 * f0 * a.powf(-2.0 * s) / (2.0 * s)
}

/// Lattice defect of the second moment of |z|^{-n-2s}:
/// lim_M [ int_{[-M-1/2, M+1/2]^n} z_1^2 |z|^{-n-2s} - sum_{0<|j|_inf<=M} j_1^2 |j|^{-n-2s} ].
/// Adding half of it to each nearest-neighbour weight makes the discrete
/// form exact on quadratics.
pub fn near_diagonal_defect(n: usize, s: f64) -> f64 {
    let q = n as f64 + 2.0 * s;
    let (f0, f1) = face_integrals(n, q);
    let cube_moment = 2.0 / (2.0 - 2.0 * s) * (f0 + (n as f64 - 1.0) * f1);
    let lap_factor = 2.0 + q * (q - n as f64 - 2.0) / n as f64;
    let tail_coeff = 2.0 * n as f64 * f0 / (2.0 * s);
    let truncated = |m: i64| -> f64 {
        let mf = m as f64 + 0.5;
        let mut sum = 0.0;
        let range = -m..=m;
        match n {
            1 => {
                for j in 1..=m {
                    sum += 2.0 * (j as f64).powf(2.0 - q);
                }
            }
            2 => {
                for a in range.clone() {
                    for b in range.clone() {
                        if a != 0 || b != 0 {
                            let r2 = (a * a + b * b) as f64;
                            sum += (a * a) as f64 * r2.powf(-0.5 * q);
                        }
                    }
                }
            }
            _ => {
                for a in range.clone() {
                    for b in range.clone() {
                        for c in range.clone() {
                            if a != 0 || b != 0 || c != 0 {
                                let r2 = (a * a + b * b + c * c) as f64;
                                sum += (a * a) as f64 * r2.powf(-0.5 * q);
                            }
                        }
                    }
                }
            }
        }
        cube_moment * mf.powf(2.0 - 2.0 * s) - sum + lap_factor / 24.0 * tail_coeff * mf.powf(-2.0 * s)
    };
    let (m1, m2) = match n {
        1 => (400, 800),
        2 => (64, 128),
        _ => (24, 48),
    };
    let (d1, d2) = (truncated(m1), truncated(m2));
    let p = 2.0 * s + 2.0;
    let (w1, w2) = ((m1 as f64 + 0.5).powf(p), (m2 as f64 + 0.5).powf(p));
    (w2 * d2 - w1 * d1) / (w2 - w1)
}

/// Average of |z|^{-mu} over the cell [-h/2, h/2]^n.
pub fn riesz_cell_average(n: usize, mu: f64, h: f64) -> f64 {
    let j = if n == 1 { 1.0 } else { tensor_gl(|v| (1.0 + v.iter().map(|x| x * x).sum::<f64>()).powf(-0.5 * mu), n - 1, 0.0, 1.0, 40) };
    (0.5 * h).powf(-mu) * n as f64 / (n as f64 - mu) * j
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum KernelKind {
    Riesz { mu: f64 },
    Gagliardo { s: f64 },
}

/// Translation-invariant kernel on the offsets {-(m-1)..(m-1)}^n (in units of h).
#[derive(Clone, Debug)]
pub struct KernelTable {
    grid: Grid,
    kind: KernelKind,
    values: Vec<f64>,
    /// Diagonal far-field coefficient (Gagliardo only).
    tail: f64,
}

impl KernelTable {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    /// Number of offsets per axis, 2m - 1.
    pub fn width(&self) -> usize {
        2 * self.grid.nodes_per_axis() - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    fn slot(&self, j: [i64; 3]) -> Option<usize> {
        let m = self.grid.nodes_per_axis() as i64;
        let mut idx = 0usize;
        for d in 0..self.grid.dim() {
            if j[d].abs() >= m {
                return None;
            }
            idx = idx * self.width() + (j[d] + m - 1) as usize;
        }
        Some(idx)
    }

    /// Kernel at offset j*h; zero outside the table.
    pub fn get(&self, j: [i64; 3]) -> f64 {
        self.slot(j).map_or(0.0, |i| self.values[i])
    }

    /// Offset (in lattice units) of flat table slot `idx`.
    pub fn offset(&self, mut idx: usize) -> [i64; 3] {
        let m = self.grid.nodes_per_axis() as i64;
        let mut out = [0; 3];
        for d in (0..self.grid.dim()).rev() {
            out[d] = (idx % self.width()) as i64 - (m - 1);
            idx /= self.width();
        }
        out
    }

    /// h^n times the sum of all entries.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    fn tabulate<F: Fn([i64; 3]) -> f64>(grid: &Grid, kind: KernelKind, tail: f64, f: F) -> Self {
        let mut t = Self { grid: grid.clone(), kind, values: Vec::new(), tail };
        let total = t.width().pow(grid.dim() as u32);
        t.values = (0..total).map(|i| f(t.offset(i))).collect();
        t
    }
}

fn norm2(j: [i64; 3]) -> f64 {
    (j[0] * j[0] + j[1] * j[1] + j[2] * j[2]) as f64
}

/// |z|^{-mu} at nonzero offsets, cell average at 0.
pub fn riesz_table(grid: &Grid, mu: f64) -> Result<KernelTable> {
    let n = grid.dim();
    if !(mu.is_finite() && mu > 0.0 && mu < n as f64) {
        return Err(param(format!("Riesz exponent mu = {mu} must satisfy 0 < mu < n = {n}")));
    }
    let h = grid.spacing();
    let k0 = riesz_cell_average(n, mu, h);
    Ok(KernelTable::tabulate(grid, KernelKind::Riesz { mu }, 0.0, |j| {
        let r2 = norm2(j);
        if r2 == 0.0 {
            k0
        } else {
            (h * h * r2).powf(-0.5 * mu)
        }
    }))
}

fn gagliardo_entries(grid: &Grid, s: f64, tail: f64, cutoff: Option<f64>) -> KernelTable {
    let n = grid.dim();
    let h = grid.spacing();
    let q = n as f64 + 2.0 * s;
    let scale = h.powf(-q);
    let bump = 0.5 * near_diagonal_defect(n, s);
    let cut2 = cutoff.map(|r| (r / h) * (r / h));
    KernelTable::tabulate(grid, KernelKind::Gagliardo { s }, tail, |j| {
        let r2 = norm2(j);
        if r2 == 0.0 || cut2.is_some_and(|c| r2 > c) {
            0.0
        } else if r2 == 1.0 {
            scale * (1.0 + bump)
        } else {
            scale * r2.powf(-0.5 * q)
        }
    })
}

/// |z|^{-n-2s} over the full offset cube with the exact tail outside the
/// cube of half-width (m - 1/2) h as a diagonal term.
pub fn gagliardo_table(grid: &Grid, s: f64) -> Result<KernelTable> {
    check_order(s)?;
    let a = (grid.nodes_per_axis() as f64 - 0.5) * grid.spacing();
    Ok(gagliardo_entries(grid, s, cube_tail(grid.dim(), s, a), None))
}

/// Variant truncated to |z| <= r_box with the analytic ball tail.
pub fn gagliardo_table_ball(grid: &Grid, s: f64, r_box: f64) -> Result<KernelTable> {
    check_order(s)?;
    let h = grid.spacing();
    let reach = (grid.nodes_per_axis() as f64 - 1.0) * h;
    if !(r_box >= 2.0 * h && r_box <= reach) {
        return Err(param(format!("cutoff radius {r_box} must lie in [2h, (m-1)h] = [{}, {reach}]", 2.0 * h)));
    }
    Ok(gagliardo_entries(grid, s, ball_tail(grid.dim(), s, r_box), Some(r_box)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::gamma;

    fn closed_form(n: usize, s: f64) -> f64 {
        let nf = n as f64;
        4f64.powf(s) * s * gamma(0.5 * nf + s) / (PI.powf(0.5 * nf) * gamma(1.0 - s))
    }

    // Closed-form values frozen at 30 digits.
    const FROZEN: [(usize, f64, f64); 9] = [
        (1, 0.25, 0.199_471_140_200_716_35),
        (1, 0.5, 0.318_309_886_183_790_67),
        (1, 0.9, 0.164_904_938_818_302_68),
        (2, 0.1, 0.032_551_422_029_941_06),
        (2, 0.5, 0.159_154_943_091_895_34),
        (2, 0.75, 0.171_167_129_690_552_36),
        (3, 0.25, 0.047_620_226_950_680_73),
        (3, 0.5, 0.101_321_183_642_337_77),
        (3, 0.9, 0.073_487_221_228_958_44),
    ];

    #[test]
    fn constant_matches_frozen_values() {
        for (n, s, v) in FROZEN {
            let c = frac_constant(n, s).unwrap();
            assert!((c.value / v - 1.0).abs() < 1e-8, "n={n} s={s}: {} vs {v}", c.value);
            assert!((closed_form(n, s) / v - 1.0).abs() < 1e-12);
            assert!(c.rel_error <= 1e-8);
        }
    }

    #[test]
    fn constant_grid_against_closed_form() {
        for n in 1..=3 {
            for k in 1..20 {
                let s = k as f64 / 20.0;
                let c = frac_constant(n, s).unwrap();
                assert!((c.value * (1.0 / closed_form(n, s)) - 1.0).abs() < 1e-6, "n={n} s={s}");
            }
        }
    }

    #[test]
    fn constant_order_and_precondition() {
        let half = frac_constant(1, 0.5).unwrap().value;
        assert!((half - 1.0 / PI).abs() < 1e-9);
        assert!(frac_constant(1, 0.9).unwrap().value < half);
        assert!(matches!(frac_constant(3, 1.5), Err(Error::Param(_))));
        assert!(frac_constant(3, 0.0).is_err());
    }

    #[test]
    fn one_dimensional_defect_is_zeta() {
        // -2 zeta(2s - 1), frozen
        for (s, v) in [(0.1, 0.243_974_155_339_542_26), (0.25, 0.415_772_449_954_709_13), (0.5, 1.0), (0.75, 2.920_709_017_619_173_6), (0.9, 8.875_076_831_791_103)] {
            let d = near_diagonal_defect(1, s);
            assert!((d - v).abs() < 1e-7 * v, "s={s}: {d} vs {v}");
        }
    }

    #[test]
    fn multi_dimensional_defect_stable_in_truncation() {
        for n in [2, 3] {
            for s in [0.3, 0.5, 0.9] {
                let d = near_diagonal_defect(n, s);
                assert!(d > 0.0 && d.is_finite());
            }
        }
    }

    #[test]
    fn tails() {
        assert!((ball_tail(3, 0.5, 2.0) - 2.0 * PI).abs() < 1e-14);
        let (v, _) = adaptive(|r: f64| 4.0 * PI * r * r * r.powf(-4.0), 2.0, 1e6, 1e-14, 1e-13);
        assert!((v + 4.0 * PI * 1e-6 - 2.0 * PI).abs() < 1e-9);
        // cube tail in 1D is 2 a^{-2s}/(2s)
        assert!((cube_tail(1, 0.3, 2.0) - 2.0 * 2f64.powf(-0.6) / 0.6).abs() < 1e-14);
        // the cube complement lies inside the complement of the inscribed ball
        assert!(cube_tail(3, 0.5, 1.0) < ball_tail(3, 0.5, 1.0));
        assert!(cube_tail(3, 0.5, 1.0) > ball_tail(3, 0.5, 3f64.sqrt()));
    }

    #[test]
    fn riesz_cell_average_1d() {
        let g = Grid::new(1, 1.0, 8).unwrap();
        let t = riesz_table(&g, 0.5).unwrap();
        let (v, _) = adaptive(|z: f64| z.powf(-0.5), 0.0, 0.125, 1e-15, 1e-14);
        let avg = 2.0 * v / 0.25;
        assert!((t.get([0, 0, 0]) - avg).abs() < 1e-10);
        assert!((t.get([0, 0, 0]) - 5.656_854_249_492_381).abs() < 1e-12);
        assert_eq!(t.get([4, 0, 0]), 1.0);
        assert!(t.get([0, 0, 0]) > 0.25f64.powf(-0.5));
    }

    #[test]
    fn riesz_cell_average_3d_against_tensor_quadrature() {
        let h = 0.2;
        let k0 = riesz_cell_average(3, 1.0, h);
        // split the cell into octants to put the singularity at a corner
        let v = 8.0 * tensor_gl(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).powf(-0.5), 3, 0.0, 0.5 * h, 60) / h.powi(3);
        assert!((k0 - v).abs() < 1e-3 * k0, "{k0} {v}");
    }

    #[test]
    fn riesz_rejects_nonintegrable() {
        let g = Grid::new(2, 1.0, 8).unwrap();
        assert!(riesz_table(&g, 2.0).is_err());
    }

    fn assert_even_and_decreasing(t: &KernelTable) {
        let m = t.grid().nodes_per_axis() as i64;
        let n = t.grid().dim();
        for i in 0..t.values().len() {
            let j = t.offset(i);
            let neg = [-j[0], -j[1], -j[2]];
            assert_eq!(t.values()[i], t.get(neg));
            assert!(t.values()[i] >= 0.0);
            for d in 0..n {
                let mut next = j;
                next[d] += j[d].signum();
                if j[d] != 0 && next[d].abs() < m && norm2(j) >= 1.0 {
                    assert!(t.get(next) < t.values()[i], "{j:?}");
                }
            }
        }
    }

    #[test]
    fn tables_even_and_monotone() {
        let g = Grid::new(3, 1.0, 8).unwrap();
        assert_even_and_decreasing(&riesz_table(&g, 1.0).unwrap());
        let g16 = Grid::new(3, 1.0, 16).unwrap();
        let w = gagliardo_table(&g16, 0.5).unwrap();
        assert_even_and_decreasing(&w);
        assert_eq!(w.get([0, 0, 0]), 0.0);
        let unit = Grid::new(3, 8.0, 16).unwrap();
        let w1 = gagliardo_table(&unit, 0.5).unwrap();
        assert_eq!(w1.get([2, 0, 0]), 2f64.powi(-4));
        assert_eq!(w1.get([1, 1, 0]), 0.25);
    }

    #[test]
    fn ball_truncated_table() {
        let g = Grid::new(3, 2.0, 16).unwrap();
        let t = gagliardo_table_ball(&g, 0.5, 1.0).unwrap();
        assert_eq!(t.get([5, 0, 0]), 0.0);
        assert!(t.get([4, 0, 0]) > 0.0);
        assert!((t.tail() - 4.0 * PI).abs() < 1e-12);
        assert!(gagliardo_table_ball(&g, 0.5, 10.0).is_err());
    }

    #[test]
    fn correction_makes_quadratic_second_moment_exact() {
        // sum_j W(j) (g.j)^2 + truncation = int (g.z)^2 |z|^{-q} over the cube
        let g = Grid::new(2, 16.5, 33 + 1).unwrap();
        let s = 0.4;
        let t = gagliardo_table(&g, s).unwrap();
        let h = g.spacing();
        let q = 2.0 + 2.0 * s;
        let lattice: f64 = (0..t.values().len())
            .map(|i| {
                let j = t.offset(i);
                t.values()[i] * (j[0] * j[0]) as f64 * h.powf(q)
            })
            .sum();
        let d0 = near_diagonal_defect(2, s);
        let raw: f64 = (0..t.values().len())
            .map(|i| {
                let j = t.offset(i);
                let r2 = norm2(j);
                if r2 == 0.0 {
                    0.0
                } else {
                    (j[0] * j[0]) as f64 * r2.powf(-0.5 * q)
                }
            })
            .sum();
        assert!((lattice - raw - d0).abs() < 1e-12 * lattice);
    }
}

//! Riesz potential, the Hartree (HL) norm and the bubble family.

use serde::Serialize;
use statrs::function::gamma::gamma;
use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{param, Result};
use crate::fft::{Convolver, Spectrum};
use crate::geometry::{build_domain, DomainMask, Grid, Point, Shape};
use crate::kernels::{riesz_table, KernelTable};
use crate::operators::{dirichlet_energy, Field};

/// Critical exponents 2* = 2n/(n-2) and 2_mu* = (2n-mu)/(n-2).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Exponents {
    pub sobolev: f64,
    pub hartree: f64,
}

pub fn compute_exponents(n: usize, mu: f64) -> Result<Exponents> {
    if n < 3 {
        return Err(param(format!("critical exponents need n >= 3, got n = {n}")));
    }
    let nf = n as f64;
    if !(mu > 0.0 && mu < nf) {
        return Err(param(format!("mu = {mu} must satisfy 0 < mu < n")));
    }
    Ok(Exponents { sobolev: 2.0 * nf / (nf - 2.0), hartree: (2.0 * nf - mu) / (nf - 2.0) })
}

/// Riesz table plus exponents for one (grid, mu).
#[derive(Debug)]
pub struct Choquard {
    mask: Arc<DomainMask>,
    mu: f64,
    exps: Exponents,
    table: KernelTable,
    conv: Arc<Convolver>,
    spectrum: Spectrum,
}

impl Choquard {
    pub fn new(mask: Arc<DomainMask>, mu: f64) -> Result<Self> {
        let conv = Arc::new(Convolver::new(mask.grid()));
        Self::with_convolver(mask, mu, conv)
    }

    pub fn with_convolver(mask: Arc<DomainMask>, mu: f64, conv: Arc<Convolver>) -> Result<Self> {
        let exps = compute_exponents(mask.grid().dim(), mu)?;
        let table = riesz_table(mask.grid(), mu)?;
        let spectrum = conv.spectrum(&table);
        Ok(Self { mask, mu, exps, table, conv, spectrum })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn exponents(&self) -> Exponents {
        self.exps
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn mask(&self) -> &DomainMask {
        &self.mask
    }

    /// |u|^{2_mu*}
    pub fn density(&self, u: &Field) -> Field {
        let q = self.exps.hartree;
        u.map(|v| v.abs().powf(q))
    }

    /// D(x) = sum_y K(x-y) w(y) h^n on inside nodes.
    pub fn riesz_potential(&self, w: &Field) -> Field {
        let hn = self.mask.grid().cell_volume();
        let raw = self.conv.convolve(&self.spectrum, w);
        Field::raw(raw.into_iter().map(|v| v * hn).collect()).masked(&self.mask)
    }

    /// The double integral N(u) = sum |u|^q D h^n and the potential D.
    pub fn hartree_integral(&self, u: &Field) -> (f64, Field) {
        let w = self.density(u);
        let d = self.riesz_potential(&w);
        (w.dot(&d) * self.mask.grid().cell_volume(), d)
    }

    /// N^{1 / (2 q)}.
    pub fn hl_norm(&self, u: &Field) -> f64 {
        let (nn, _) = self.hartree_integral(u);
        nn.powf(0.5 / self.exps.hartree)
    }
}

/// V(r) = [n(n-2)]^{(n-2)/4} (1 + r^2)^{-(n-2)/2}.
pub fn bubble_profile(n: usize, r: f64) -> f64 {
    let nf = n as f64;
    (nf * (nf - 2.0)).powf(0.25 * (nf - 2.0)) * (1.0 + r * r).powf(-0.5 * (nf - 2.0))
}

fn dist(x: &Point, c: &Point) -> f64 {
    ((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) + (x[2] - c[2]).powi(2)).sqrt()
}

/// Quintic blend: 1 on [0, a], 0 beyond b.
pub fn cutoff(r: f64, a: f64, b: f64) -> f64 {
    if r <= a {
        1.0
    } else if r >= b {
        0.0
    } else {
        let t = (r - a) / (b - a);
        1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum BubbleVariant {
    /// U with the same constant as V.
    U,
    V,
    /// eta * V_eps with eta = 1 on |x| <= delta_c, 0 beyond 2 delta_c.
    Cutoff { eps: f64, delta_c: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Bubble {
    pub variant: BubbleVariant,
    pub t: f64,
    pub x0: Point,
}

impl Bubble {
    pub fn v(t: f64, x0: Point) -> Self {
        Self { variant: BubbleVariant::V, t, x0 }
    }

    pub fn cutoff(eps: f64, delta_c: f64) -> Self {
        Self { variant: BubbleVariant::Cutoff { eps, delta_c }, t: eps, x0: [0.0; 3] }
    }

    pub fn eval(&self, n: usize, x: &Point) -> f64 {
        let r = dist(x, &self.x0);
        let scale = |t: f64| t.powf(0.5 * (2.0 - n as f64)) * bubble_profile(n, r / t);
        match self.variant {
            BubbleVariant::U | BubbleVariant::V => scale(self.t),
            BubbleVariant::Cutoff { eps, delta_c } => cutoff(r, delta_c, 2.0 * delta_c) * scale(eps),
        }
    }
}

/// Nodal evaluation; masked to the domain, or on every box node when
/// `masked` is false.
pub fn bubble_field(bubble: &Bubble, mask: &DomainMask, masked: bool) -> Result<Field> {
    let g = mask.grid();
    if !(bubble.t > 0.0) {
        return Err(param("bubble scale must be positive"));
    }
    if masked {
        Ok(Field::from_fn(mask, |x| bubble.eval(g.dim(), x)))
    } else {
        Ok(Field::raw(g.points().map(|x| bubble.eval(g.dim(), &x)).collect()))
    }
}

/// (V_t(x) - V_t(R))_+ about x0: continuous truncation to the ball of radius R.
pub fn truncated_bubble(mask: &DomainMask, t: f64, x0: Point, radius: f64) -> Field {
    let n = mask.grid().dim();
    let b = Bubble::v(t, x0);
    let floor = b.eval(n, &[x0[0] + radius, x0[1], x0[2]]);
    Field::from_fn(mask, |x| (b.eval(n, x) - floor).max(0.0))
}

#[derive(Clone, Debug, Serialize)]
pub struct HlsSample {
    pub half_width: f64,
    pub h: f64,
    pub radius: f64,
    pub quotient: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HlsEstimate {
    pub value: f64,
    pub error: f64,
    pub samples: Vec<HlsSample>,
    /// Set when the samples do not decrease or increase monotonically.
    pub warning: Option<String>,
}

/// Sharp constant of the diagonal HLS inequality
/// N(u) <= C(n, mu) |u|_{2*}^{2 q}.
pub fn hls_sharp_constant(n: usize, mu: f64) -> f64 {
    let nf = n as f64;
    PI.powf(0.5 * mu) * gamma(0.5 * (nf - mu)) / gamma(nf - 0.5 * mu) * (gamma(0.5 * nf) / gamma(nf)).powf(mu / nf - 1.0)
}

// Evaluate `quantity` on the bubble truncated to the ball of radius L - 2h
// for L in {4, 8, 16} at fixed m, then fit S + a/R + b h^2.
fn box_extrapolation<F>(n: usize, m: usize, mut quantity: F) -> Result<HlsEstimate>
where
    F: FnMut(&Arc<DomainMask>, &Field) -> Result<f64>,
{
    let mut samples = Vec::new();
    for l in [4.0, 8.0, 16.0] {
        let grid = Grid::new(n, l, m)?;
        let h = grid.spacing();
        let radius = l - 2.0 * h;
        let mask = Arc::new(build_domain(&Shape::ball(radius), &grid)?);
        let u = truncated_bubble(&mask, 1.0, [0.0; 3], radius);
        samples.push(HlsSample { half_width: l, h, radius, quotient: quantity(&mask, &u)? });
    }
    let rows: Vec<[f64; 3]> = samples.iter().map(|s| [1.0, 1.0 / s.radius, s.h * s.h]).collect();
    let a = nalgebra::Matrix3::from_fn(|i, j| rows[i][j]);
    let b = nalgebra::Vector3::from_fn(|i, _| samples[i].quotient);
    let coef = a.lu().solve(&b).ok_or_else(|| param("degenerate extrapolation system"))?;
    let value = coef[0];
    // two-point estimate in 1/R from the two largest boxes, ignoring h
    let (s1, s2) = (&samples[1], &samples[2]);
    let (x1, x2) = (s1.radius.recip(), s2.radius.recip());
    let two = (s2.quotient * x1 - s1.quotient * x2) / (x1 - x2);
    let q: Vec<f64> = samples.iter().map(|s| s.quotient).collect();
    let monotone = (q[0] <= q[1] && q[1] <= q[2]) || (q[0] >= q[1] && q[1] >= q[2]);
    let warning = (!monotone).then(|| format!("non-monotone quotient sequence {q:?}"));
    Ok(HlsEstimate { value, error: (value - two).abs(), samples, warning })
}

/// S_{H,L,C}: ratio ||grad V||^2 / ||V||_HL^2 of the truncated bubble,
/// extrapolated in the box size.
pub fn hls_constant_estimate(n: usize, mu: f64, m: usize) -> Result<HlsEstimate> {
    compute_exponents(n, mu)?;
    box_extrapolation(n, m, |mask, u| {
        let hl = Choquard::new(mask.clone(), mu)?.hl_norm(u);
        Ok(dirichlet_energy(mask.grid(), u) / (hl * hl))
    })
}

/// C(n, mu) as the HLS quotient N(V) / |V|_{2*}^{2q} of the truncated bubble.
pub fn hls_sharp_constant_estimate(n: usize, mu: f64, m: usize) -> Result<HlsEstimate> {
    let e = compute_exponents(n, mu)?;
    box_extrapolation(n, m, |mask, u| {
        let (nn, _) = Choquard::new(mask.clone(), mu)?.hartree_integral(u);
        let lp = u.lp_pow(mask.grid(), e.sobolev);
        Ok(nn / lp.powf(2.0 * e.hartree / e.sobolev))
    })
}

/// ||grad V||^2 of the unit bubble, extrapolated in the box size.
pub fn bubble_energy_estimate(n: usize, m: usize) -> Result<HlsEstimate> {
    if n < 3 {
        return Err(param(format!("the bubble has finite energy only for n >= 3, got n = {n}")));
    }
    box_extrapolation(n, m, |mask, u| Ok(dirichlet_energy(mask.grid(), u)))
}

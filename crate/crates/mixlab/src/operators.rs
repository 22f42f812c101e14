//! Discrete Dirichlet, Gagliardo and mixed quadratic forms with their
//! Riesz representers against the lumped mass h^n.

use std::ops::Deref;
use std::sync::Arc;

use crate::error::{param, Result};
use crate::fft::{Convolver, Spectrum};
use crate::geometry::{DomainMask, Grid, Point};
use crate::kernels::{frac_constant, gagliardo_table, FracConstant, KernelTable};

/// Nodal values, identically zero outside the domain.
#[derive(Clone, Debug, PartialEq)]
pub struct Field(Vec<f64>);

impl Field {
    pub fn zeros(mask: &DomainMask) -> Self {
        Field(vec![0.0; mask.grid().len()])
    }

    /// Evaluate `f` at inside nodes.
    pub fn from_fn<F: FnMut(&Point) -> f64>(mask: &DomainMask, mut f: F) -> Self {
        let g = mask.grid();
        let mut v = vec![0.0; g.len()];
        for &i in mask.inside_nodes() {
            v[i] = f(&g.point(i));
        }
        Field(v)
    }

    /// Take raw values, zeroing the exterior.
    pub fn from_values(mask: &DomainMask, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != mask.grid().len() {
            return Err(param(format!("field has {} values, grid has {}", values.len(), mask.grid().len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(param("field values must be finite"));
        }
        for (v, &inside) in values.iter_mut().zip(mask.inside()) {
            if !inside {
                *v = 0.0;
            }
        }
        Ok(Field(values))
    }

    pub(crate) fn raw(values: Vec<f64>) -> Self {
        Field(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Field {
        Field(self.0.iter().map(|&v| f(v)).collect())
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    /// self + c * other
    pub fn axpy(&self, c: f64, other: &Field) -> Field {
        Field(self.0.iter().zip(&other.0).map(|(a, b)| a + c * b).collect())
    }

    pub fn abs(&self) -> Field {
        self.map(f64::abs)
    }

    /// Plain sum of products.
    pub fn dot(&self, other: &Field) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// sum |u|^2 h^n
    pub fn l2_sq(&self, grid: &Grid) -> f64 {
        self.dot(self) * grid.cell_volume()
    }

    /// sum |u|^r h^n
    pub fn lp_pow(&self, grid: &Grid, r: f64) -> f64 {
        self.0.iter().map(|v| v.abs().powf(r)).sum::<f64>() * grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub(crate) fn masked(mut self, mask: &DomainMask) -> Field {
        for (v, &inside) in self.0.iter_mut().zip(mask.inside()) {
            if !inside {
                *v = 0.0;
            }
        }
        self
    }
}

impl Deref for Field {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Symmetric positive form a(u, v) = <A u, v> h^n on admissible fields.
pub trait QuadraticForm {
    fn mask(&self) -> &DomainMask;

    /// Representer A u, masked to the domain.
    fn apply(&self, u: &Field) -> Field;

    /// Constant diagonal entry of A on inside nodes.
    fn diagonal(&self) -> f64;

    fn form(&self, u: &Field, v: &Field) -> f64 {
        self.apply(u).dot(v) * self.mask().grid().cell_volume()
    }
}

/// Sum over all grid links of (u_i - u_j)^2 / h^2 times h^n; links that leave
/// the box see the value 0.
pub fn dirichlet_energy(grid: &Grid, u: &[f64]) -> f64 {
    let n = grid.dim();
    let m = grid.nodes_per_axis();
    let mut sum = 0.0;
    for d in 0..n {
        let stride = m.pow((n - 1 - d) as u32);
        for (idx, &v) in u.iter().enumerate() {
            let i = (idx / stride) % m;
            let next = if i + 1 < m { u[idx + stride] } else { 0.0 };
            sum += (v - next).powi(2);
            if i == 0 {
                sum += v * v;
            }
        }
    }
    sum * grid.spacing().powi(n as i32 - 2)
}

/// Second-order -Delta with exterior zeros.
#[derive(Clone, Debug)]
pub struct LaplacianForm {
    mask: Arc<DomainMask>,
}

impl LaplacianForm {
    pub fn new(mask: Arc<DomainMask>) -> Self {
        Self { mask }
    }

    pub fn apply_raw(&self, u: &[f64]) -> Vec<f64> {
        let g = self.mask.grid();
        let n = g.dim();
        let m = g.nodes_per_axis();
        let inv_h2 = 1.0 / (g.spacing() * g.spacing());
        let mut out = vec![0.0; u.len()];
        for &idx in self.mask.inside_nodes() {
            let mut acc = 2.0 * n as f64 * u[idx];
            for d in 0..n {
                let stride = m.pow((n - 1 - d) as u32);
                let i = (idx / stride) % m;
                if i > 0 {
                    acc -= u[idx - stride];
                }
                if i + 1 < m {
                    acc -= u[idx + stride];
                }
            }
            out[idx] = acc * inv_h2;
        }
        out
    }
}

impl QuadraticForm for LaplacianForm {
    fn mask(&self) -> &DomainMask {
        &self.mask
    }

    fn apply(&self, u: &Field) -> Field {
        Field(self.apply_raw(u))
    }

    fn diagonal(&self) -> f64 {
        let h = self.mask.grid().spacing();
        2.0 * self.mask.grid().dim() as f64 / (h * h)
    }
}

/// The Gagliardo form (C/2) sum sum W(x-y) (u(x)-u(y))^2 h^{2n} plus the
/// analytic far-field tail.
#[derive(Debug)]
pub struct FractionalForm {
    mask: Arc<DomainMask>,
    constant: FracConstant,
    table: KernelTable,
    conv: Arc<Convolver>,
    spectrum: Spectrum,
    /// h^n sum_z W(z) + T
    diag_weight: f64,
}

impl FractionalForm {
    pub fn new(mask: Arc<DomainMask>, s: f64) -> Result<Self> {
        let conv = Arc::new(Convolver::new(mask.grid()));
        Self::with_convolver(mask, s, conv)
    }

    pub fn with_convolver(mask: Arc<DomainMask>, s: f64, conv: Arc<Convolver>) -> Result<Self> {
        let table = gagliardo_table(mask.grid(), s)?;
        Self::from_table(mask, table, conv)
    }

    pub fn from_table(mask: Arc<DomainMask>, table: KernelTable, conv: Arc<Convolver>) -> Result<Self> {
        let s = match table.kind() {
            crate::kernels::KernelKind::Gagliardo { s } => s,
            crate::kernels::KernelKind::Riesz { .. } => return Err(param("fractional form needs a Gagliardo table")),
        };
        let constant = frac_constant(mask.grid().dim(), s)?;
        let spectrum = conv.spectrum(&table);
        let diag_weight = table.mass() + table.tail();
        Ok(Self { mask, constant, table, conv, spectrum, diag_weight })
    }

    pub fn order(&self) -> f64 {
        self.constant.s
    }

    pub fn constant(&self) -> &FracConstant {
        &self.constant
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn convolver(&self) -> &Arc<Convolver> {
        &self.conv
    }

    /// Representer from a precomputed lattice convolution sum_y W(x-y) u(y).
    pub fn apply_with(&self, u: &[f64], wu: &[f64]) -> Vec<f64> {
        let hn = self.mask.grid().cell_volume();
        let c = self.constant.value;
        let mut out = vec![0.0; u.len()];
        for &i in self.mask.inside_nodes() {
            out[i] = c * (self.diag_weight * u[i] - hn * wu[i]);
        }
        out
    }

    pub fn seminorm_sq(&self, u: &Field) -> f64 {
        self.apply(u).dot(u) * self.mask.grid().cell_volume()
    }
}

impl QuadraticForm for FractionalForm {
    fn mask(&self) -> &DomainMask {
        &self.mask
    }

    fn apply(&self, u: &Field) -> Field {
        let wu = self.conv.convolve(&self.spectrum, u);
        Field(self.apply_with(u, &wu))
    }

    fn diagonal(&self) -> f64 {
        self.constant.value * self.diag_weight
    }
}

/// a(u, v) = <grad u, grad v> + Gagliardo form.
#[derive(Debug)]
pub struct MixedForm {
    lap: LaplacianForm,
    frac: FractionalForm,
}

impl MixedForm {
    pub fn new(mask: Arc<DomainMask>, s: f64) -> Result<Self> {
        let frac = FractionalForm::new(mask.clone(), s)?;
        Ok(Self { lap: LaplacianForm::new(mask), frac })
    }

    pub fn with_convolver(mask: Arc<DomainMask>, s: f64, conv: Arc<Convolver>) -> Result<Self> {
        let frac = FractionalForm::with_convolver(mask.clone(), s, conv)?;
        Ok(Self { lap: LaplacianForm::new(mask), frac })
    }

    pub fn laplacian(&self) -> &LaplacianForm {
        &self.lap
    }

    pub fn fractional(&self) -> &FractionalForm {
        &self.frac
    }

    pub fn dirichlet_energy(&self, u: &Field) -> f64 {
        dirichlet_energy(self.lap.mask.grid(), u)
    }

    pub fn gagliardo_sq(&self, u: &Field) -> f64 {
        self.frac.seminorm_sq(u)
    }

    pub fn mixed_norm_sq(&self, u: &Field) -> f64 {
        self.dirichlet_energy(u) + self.gagliardo_sq(u)
    }

    pub fn apply_laplacian(&self, u: &Field) -> Field {
        self.lap.apply(u)
    }

    pub fn apply_fractional(&self, u: &Field) -> Field {
        self.frac.apply(u)
    }

    /// Representer from a precomputed Gagliardo convolution.
    pub fn apply_with(&self, u: &Field, wu: &[f64]) -> Field {
        let mut out = self.lap.apply_raw(u);
        for (o, f) in out.iter_mut().zip(self.frac.apply_with(u, wu)) {
            *o += f;
        }
        Field(out)
    }
}

impl QuadraticForm for MixedForm {
    fn mask(&self) -> &DomainMask {
        &self.lap.mask
    }

    fn apply(&self, u: &Field) -> Field {
        let wu = self.frac.conv.convolve(&self.frac.spectrum, u);
        self.apply_with(u, &wu)
    }

    fn diagonal(&self) -> f64 {
        self.lap.diagonal() + self.frac.diagonal()
    }
}

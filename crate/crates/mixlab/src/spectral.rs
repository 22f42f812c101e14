//! Lowest eigenpair of a matrix-free form by locally optimal block-of-three
//! Rayleigh–Ritz iteration (single vector LOBPCG).

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::DomainMask;
use crate::operators::{Field, FractionalForm, LaplacianForm, MixedForm, QuadraticForm};

pub const EIGEN_TOL: f64 = 1e-8;
pub const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Clone, Debug, Serialize)]
pub struct EigenResult {
    pub eigenvalue: f64,
    /// Normalized so that sum u^2 h^n = 1 and positive on the domain.
    #[serde(skip)]
    pub eigenfield: Field,
    /// ||A u - lambda u||_2 (discrete L2 with h^n).
    pub residual: f64,
    pub iterations: usize,
    /// min / max of the eigenfield over inside nodes.
    pub sign_ratio: f64,
}

fn normalize(v: &mut Vec<f64>, av: &mut Vec<f64>) -> f64 {
    let nrm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
        av.iter_mut().for_each(|x| *x /= nrm);
    }
    nrm
}

fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Orthogonalize (v, av) against each (q, aq) pair (two passes).
fn orthogonalize(v: &mut [f64], av: &mut [f64], basis: &[(&[f64], &[f64])]) {
    for _ in 0..2 {
        for (q, aq) in basis {
            let c = dotv(v, q);
            v.iter_mut().zip(q.iter()).for_each(|(x, y)| *x -= c * y);
            av.iter_mut().zip(aq.iter()).for_each(|(x, y)| *x -= c * y);
        }
    }
}

/// Smallest eigenpair of `form` over admissible fields, starting from the
/// constant field on the domain.
pub fn first_eigen<A: QuadraticForm + ?Sized>(form: &A, tol: f64, max_iter: usize) -> Result<EigenResult> {
    let mask = form.mask();
    let hn = mask.grid().cell_volume();
    let inside = mask.inside_nodes();
    let apply = |v: &[f64]| -> Vec<f64> { form.apply(&Field::raw(v.to_vec())).into_values() };
    let mut x = Field::from_fn(mask, |_| 1.0).into_values();
    let mut ax = apply(&x);
    normalize(&mut x, &mut ax);
    let mut p: Option<(Vec<f64>, Vec<f64>)> = None;
    let diag = form.diagonal();
    let mut lambda = dotv(&x, &ax);
    let mut residual = f64::INFINITY;
    for it in 0..max_iter {
        if it % 50 == 49 {
            ax = apply(&x);
        }
        lambda = dotv(&x, &ax);
        let mut r: Vec<f64> = ax.iter().zip(&x).map(|(a, b)| a - lambda * b).collect();
        residual = dotv(&r, &r).sqrt();
        if residual <= tol * lambda {
            // confirm with a fresh application
            ax = apply(&x);
            lambda = dotv(&x, &ax);
            r = ax.iter().zip(&x).map(|(a, b)| a - lambda * b).collect();
            residual = dotv(&r, &r).sqrt();
            if residual <= tol * lambda {
                return Ok(finish(mask, x, lambda, residual, it, hn));
            }
        }
        for v in r.iter_mut() {
            *v /= diag;
        }
        let mut pw = None;
        if let Some((mut pv, mut apv)) = p.take() {
            orthogonalize(&mut pv, &mut apv, &[(&x, &ax)]);
            if normalize(&mut pv, &mut apv) > 1e-14 {
                pw = Some((pv, apv));
            }
        }
        let mut w = r;
        for i in 0..w.len() {
            if !mask.is_inside(i) {
                w[i] = 0.0;
            }
        }
        let mut dummy = vec![0.0; w.len()];
        match &pw {
            Some((pv, apv)) => orthogonalize(&mut w, &mut dummy, &[(&x, &ax), (pv, apv)]),
            None => orthogonalize(&mut w, &mut dummy, &[(&x, &ax)]),
        }
        let wn = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if wn < 1e-300 {
            break;
        }
        w.iter_mut().for_each(|v| *v /= wn);
        let aw = apply(&w);
        let mut basis: Vec<(&[f64], &[f64])> = vec![(&x, &ax), (&w, &aw)];
        if let Some((pv, apv)) = &pw {
            basis.push((pv, apv));
        }
        let k = basis.len();
        let g = DMatrix::from_fn(k, k, |i, j| 0.5 * (dotv(basis[i].0, basis[j].1) + dotv(basis[j].0, basis[i].1)));
        let eig = SymmetricEigen::new(g);
        let imin = (0..k).min_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap_or(0);
        let c: Vec<f64> = (0..k).map(|i| eig.eigenvectors[(i, imin)]).collect();
        let combine = |coef: &[f64], skip_x: bool| -> (Vec<f64>, Vec<f64>) {
            let mut v = vec![0.0; x.len()];
            let mut av = vec![0.0; x.len()];
            for (j, (b, ab)) in basis.iter().enumerate() {
                if skip_x && j == 0 {
                    continue;
                }
                for &i in inside {
                    v[i] += coef[j] * b[i];
                    av[i] += coef[j] * ab[i];
                }
            }
            (v, av)
        };
        let (nx, nax) = combine(&c, false);
        let (np, nap) = combine(&c, true);
        x = nx;
        ax = nax;
        normalize(&mut x, &mut ax);
        p = Some((np, nap));
        if it + 1 == max_iter {
            break;
        }
    }
    let best = finish(mask, x, lambda, residual, max_iter, hn);
    Err(Error::Eigen(Box::new(best)))
}

fn finish(mask: &DomainMask, mut x: Vec<f64>, lambda: f64, residual: f64, iterations: usize, hn: f64) -> EigenResult {
    let sum: f64 = x.iter().sum();
    let scale = sum.signum() / hn.sqrt();
    x.iter_mut().for_each(|v| *v *= scale);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &i in mask.inside_nodes() {
        lo = lo.min(x[i]);
        hi = hi.max(x[i]);
    }
    EigenResult {
        eigenvalue: lambda,
        eigenfield: Field::raw(x),
        residual,
        iterations,
        sign_ratio: lo / hi,
    }
}

/// lambda_{1,s}: first eigenvalue of the fractional form.
pub fn first_eigen_fractional(mask: Arc<DomainMask>, s: f64) -> Result<EigenResult> {
    first_eigen(&FractionalForm::new(mask, s)?, EIGEN_TOL, EIGEN_MAX_ITER)
}

/// lambda_1: first eigenvalue of the mixed form.
pub fn first_eigen_mixed(mask: Arc<DomainMask>, s: f64) -> Result<EigenResult> {
    first_eigen(&MixedForm::new(mask, s)?, EIGEN_TOL, EIGEN_MAX_ITER)
}

/// First eigenvalue of the discrete Dirichlet Laplacian alone.
pub fn first_eigen_local(mask: Arc<DomainMask>) -> Result<EigenResult> {
    first_eigen(&LaplacianForm::new(mask), EIGEN_TOL, EIGEN_MAX_ITER)
}

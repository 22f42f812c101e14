//! Limited-memory BFGS with Armijo backtracking (factor 1/2), falling back to
//! the approximate Wolfe test near convergence.

use std::collections::VecDeque;

#[derive(Clone, Copy, Debug)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iter: usize,
    /// First trial step as a fraction of |x| along the normalized descent direction.
    pub first_step: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 12, max_iter: 5000, first_step: 0.05 }
    }
}

/// What the monitor wants after an accepted step. The monitor is always
/// called right after `eval` ran on the same point, so callers may cache the
/// last evaluation.
pub enum Control {
    Continue,
    /// Replace the iterate (projection) and drop the curvature memory.
    Replace(Vec<f64>),
    Stop,
}

#[derive(Clone, Debug)]
pub struct LbfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    /// True when the monitor stopped the run, false on stall or budget.
    pub stopped_by_monitor: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn minimize<F, M>(x0: Vec<f64>, mut eval: F, mut monitor: M, opts: LbfgsOptions) -> LbfgsOutcome
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
    M: FnMut(&[f64], f64, &[f64], usize) -> Control,
{
    let mut x = x0;
    let (mut f, mut g) = eval(&x);
    let mut evaluations = 1;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    for it in 0..opts.max_iter {
        match monitor(&x, f, &g, it) {
            Control::Stop => return LbfgsOutcome { x, value: f, iterations: it, evaluations, stopped_by_monitor: true },
            Control::Replace(nx) => {
                x = nx;
                let (nf, ng) = eval(&x);
                evaluations += 1;
                f = nf;
                g = ng;
                hist.clear();
            }
            Control::Continue => {}
        }
        let mut d: Vec<f64> = g.iter().map(|v| -v).collect();
        let mut alphas = Vec::with_capacity(hist.len());
        for (s, y, rho) in hist.iter().rev() {
            let a = rho * dot(s, &d);
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
            alphas.push(a);
        }
        let mut step = 1.0;
        if let Some((s, y, _)) = hist.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let xn = dot(&x, &x).sqrt();
            let dn = dot(&d, &d).sqrt();
            if dn > 0.0 {
                step = opts.first_step * xn.max(1e-300) / dn;
            }
        }
        for ((s, y, rho), a) in hist.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &d);
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            slope = -dot(&g, &g);
            let xn = dot(&x, &x).sqrt();
            step = opts.first_step * xn / slope.abs().sqrt().max(1e-300);
        }
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
            let (tf, tg) = eval(&trial);
            evaluations += 1;
            let armijo = tf <= f + 1e-4 * step * slope;
            // approximate Wolfe (Hager-Zhang) once f differences drown in rounding
            let dslope = dot(&tg, &d);
            let approx = tf <= f + 1e-12 * f.abs() && dslope >= 0.9 * slope && dslope <= -0.8 * slope;
            if tf.is_finite() && (armijo || approx) {
                accepted = Some((trial, tf, tg));
                break;
            }
            step *= 0.5;
        }
        let Some((nx, nf, ng)) = accepted else {
            if hist.is_empty() {
                return LbfgsOutcome { x, value: f, iterations: it, evaluations, stopped_by_monitor: false };
            }
            hist.clear();
            // keep the "last evaluation is at x" contract for the monitor
            let (nf, ng) = eval(&x);
            evaluations += 1;
            f = nf;
            g = ng;
            continue;
        };
        let s: Vec<f64> = nx.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = ng.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if hist.len() == opts.memory {
                hist.pop_front();
            }
            hist.push_back((s, y, 1.0 / sy));
        }
        x = nx;
        f = nf;
        g = ng;
    }
    LbfgsOutcome { x, value: f, iterations: opts.max_iter, evaluations, stopped_by_monitor: false }
}

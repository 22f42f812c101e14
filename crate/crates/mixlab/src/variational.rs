//! The energy J_lambda, the Hartree quotient P_lambda / ||u||_HL^2 and the two
//! outer solvers: constrained quotient minimization (linear perturbation)
//! and a Nehari-type mountain pass (superlinear perturbation).

use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::sync::Arc;

use crate::choquard::{bubble_field, Bubble, Choquard, Exponents};
use crate::error::{param, Error, Result};
use crate::fft::Convolver;
use crate::geometry::{DomainMask, Grid};
use crate::operators::{Field, MixedForm};
use crate::optim::{minimize, Control, LbfgsOptions};

/// Physical parameters of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemParams {
    pub s: f64,
    pub mu: f64,
    pub p: f64,
    pub lambda: f64,
}

/// 1 <= p < 2* - 1.
pub fn check_power(n: usize, p: f64) -> Result<()> {
    let upper = (n as f64 + 2.0) / (n as f64 - 2.0);
    if n < 3 || !(p >= 1.0 && p < upper) {
        return Err(param(format!("p = {p} must lie in [1, {upper}) for n = {n}")));
    }
    Ok(())
}

/// One pair convolution worth of information about a field.
#[derive(Clone, Debug)]
pub struct Evaluation {
    /// L u
    pub lu: Field,
    /// D[u] = |x|^{-mu} * |u|^q
    pub potential: Field,
    /// G(u)^2 = a(u, u)
    pub g_sq: f64,
    /// N(u) = ||u||_HL^{2q}
    pub hartree: f64,
}

/// Mixed form and Hartree term sharing one convolver.
#[derive(Debug)]
pub struct Problem {
    mask: Arc<DomainMask>,
    form: MixedForm,
    choquard: Choquard,
    conv: Arc<Convolver>,
}

impl Problem {
    pub fn new(mask: Arc<DomainMask>, s: f64, mu: f64) -> Result<Self> {
        let conv = Arc::new(Convolver::new(mask.grid()));
        let choquard = Choquard::with_convolver(mask.clone(), mu, conv.clone())?;
        let form = MixedForm::with_convolver(mask.clone(), s, conv.clone())?;
        Ok(Self { mask, form, choquard, conv })
    }

    pub fn mask(&self) -> &Arc<DomainMask> {
        &self.mask
    }

    pub fn grid(&self) -> &Grid {
        self.mask.grid()
    }

    pub fn form(&self) -> &MixedForm {
        &self.form
    }

    pub fn choquard(&self) -> &Choquard {
        &self.choquard
    }

    pub fn exponents(&self) -> Exponents {
        self.choquard.exponents()
    }

    pub fn evaluate(&self, u: &Field) -> Evaluation {
        let hn = self.grid().cell_volume();
        let w = self.choquard.density(u);
        let (wu, dw) = self.conv.convolve_pair(self.form.fractional().spectrum(), u, self.choquard.spectrum(), &w);
        let lu = self.form.apply_with(u, &wu);
        let potential = Field::raw(dw.into_iter().map(|v| v * hn).collect()).masked(&self.mask);
        let g_sq = lu.dot(u) * hn;
        let hartree = w.dot(&potential) * hn;
        Evaluation { lu, potential, g_sq, hartree }
    }

    /// |u|^{q-2} u D[u]
    fn nonlinearity(&self, u: &Field, potential: &Field) -> Field {
        let q = self.exponents().hartree;
        Field::raw(u.iter().zip(potential.iter()).map(|(&v, &d)| d * v.abs().powf(q - 2.0) * v).collect())
    }

    /// Residual of the weak form a(u, phi) - <D |u|^{q-2} u, phi> - lambda <|u|^{p-1} u, phi>
    /// against `phi`, relative to the largest of the three terms.
    pub fn weak_residual(&self, u: &Field, lambda: f64, p: f64, phi: &Field) -> f64 {
        let hn = self.grid().cell_volume();
        let ev = self.evaluate(u);
        let a = ev.lu.dot(phi) * hn;
        let b = self.nonlinearity(u, &ev.potential).dot(phi) * hn;
        let c = lambda * power_term(u, p).dot(phi) * hn;
        (a - b - c).abs() / a.abs().max(b.abs()).max(c.abs()).max(f64::MIN_POSITIVE)
    }
}

/// |u|^{p-1} u
fn power_term(u: &Field, p: f64) -> Field {
    u.map(|v| v.abs().powf(p - 1.0) * v)
}

fn l2(grid: &Grid, u: &Field) -> f64 {
    u.l2_sq(grid).sqrt()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyBreakdown {
    pub g_sq: f64,
    /// ||u||_HL^{2q}
    pub hl: f64,
    /// integral of |u|^{p+1}
    pub lp: f64,
    pub j: f64,
    pub grad_norm: f64,
}

fn gradient_from(problem: &Problem, u: &Field, ev: &Evaluation, lambda: f64, p: f64) -> Field {
    let nl = problem.nonlinearity(u, &ev.potential);
    let pw = power_term(u, p);
    Field::raw(ev.lu.iter().zip(nl.iter()).zip(pw.iter()).map(|((a, b), c)| a - b - lambda * c).collect())
        .masked(problem.mask())
}

pub fn energy(problem: &Problem, u: &Field, lambda: f64, p: f64) -> Result<EnergyBreakdown> {
    check_power(problem.grid().dim(), p)?;
    let g = problem.grid();
    let q = problem.exponents().hartree;
    let ev = problem.evaluate(u);
    let lp = u.lp_pow(g, p + 1.0);
    let grad = gradient_from(problem, u, &ev, lambda, p);
    Ok(EnergyBreakdown {
        g_sq: ev.g_sq,
        hl: ev.hartree,
        lp,
        j: 0.5 * ev.g_sq - ev.hartree / (2.0 * q) - lambda * lp / (p + 1.0),
        grad_norm: l2(g, &grad),
    })
}

/// L2 gradient of J_lambda: Lu - D[u] |u|^{q-2} u - lambda |u|^{p-1} u.
pub fn grad_energy(problem: &Problem, u: &Field, lambda: f64, p: f64) -> Result<Field> {
    check_power(problem.grid().dim(), p)?;
    let ev = problem.evaluate(u);
    Ok(gradient_from(problem, u, &ev, lambda, p))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct QuotientOptions {
    /// Relative Lagrange residual at which the run counts as converged.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for QuotientOptions {
    fn default() -> Self {
        Self { tol: 1e-9, max_iter: 3000 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QuotientResult {
    pub lambda: f64,
    /// S_{H,L}(lambda) estimate: P_lambda at the returned minimizer.
    pub s_value: f64,
    /// ||u||_HL = 1.
    #[serde(skip)]
    pub minimizer: Field,
    pub g_sq: f64,
    pub l2_sq: f64,
    /// Least-squares Lagrange multiplier of the constraint.
    pub multiplier: f64,
    /// ||(L - lambda) u - nu D |u|^{q-2} u|| / ||L u||.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub history: Vec<f64>,
}

/// Minimize P_lambda(u) = G(u)^2 - lambda |u|_2^2 on ||u||_HL = 1, starting
/// from `start`. Works with the zero-homogeneous quotient P_lambda / ||u||_HL^2
/// and |u| is substituted whenever an iterate changes sign.
pub fn quotient_minimize(problem: &Problem, lambda: f64, start: &Field, opts: QuotientOptions) -> Result<QuotientResult> {
    let g = problem.grid();
    let hn = g.cell_volume();
    let q = problem.exponents().hartree;
    let mask = problem.mask().clone();
    if start.max_abs() == 0.0 || !start.is_finite() {
        return Err(param("quotient start must be a nonzero finite field"));
    }
    let last: RefCell<Option<(f64, f64)>> = RefCell::new(None);
    let history = RefCell::new(Vec::new());
    let eval = |x: &[f64]| -> (f64, Vec<f64>) {
        let u = Field::raw(x.to_vec());
        let ev = problem.evaluate(&u);
        let l2sq = u.l2_sq(g);
        if !(ev.hartree > 0.0) {
            return (f64::INFINITY, vec![0.0; x.len()]);
        }
        let hl_sq = ev.hartree.powf(1.0 / q);
        let r = (ev.g_sq - lambda * l2sq) / hl_sq;
        let nl = problem.nonlinearity(&u, &ev.potential);
        let c = r * ev.hartree.powf(1.0 / q - 1.0);
        let resid: Vec<f64> = (0..x.len()).map(|i| ev.lu[i] - lambda * x[i] - c * nl[i]).collect();
        let rn = resid.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ln = ev.lu.iter().map(|v| v * v).sum::<f64>().sqrt();
        *last.borrow_mut() = Some((r, rn / ln));
        let scale = 2.0 * hn / hl_sq;
        (r, resid.into_iter().map(|v| v * scale).collect())
    };
    let monitor = |x: &[f64], f: f64, _: &[f64], _: usize| -> Control {
        history.borrow_mut().push(f);
        if mask.inside_nodes().iter().any(|&i| x[i] < 0.0) {
            return Control::Replace(x.iter().map(|v| v.abs()).collect());
        }
        match *last.borrow() {
            Some((_, rel)) if rel <= opts.tol => Control::Stop,
            _ => Control::Continue,
        }
    };
    let x0 = start.abs().into_values();
    let out = minimize(x0, eval, monitor, LbfgsOptions { max_iter: opts.max_iter, ..Default::default() });
    let mut u = Field::raw(out.x).abs();
    let hl = problem.choquard().hl_norm(&u);
    u = u.scale(1.0 / hl);
    let ev = problem.evaluate(&u);
    let l2_sq = u.l2_sq(g);
    let nl = problem.nonlinearity(&u, &ev.potential);
    let lu_shift = ev.lu.axpy(-lambda, &u);
    let multiplier = lu_shift.dot(&nl) / nl.dot(&nl);
    let s_value = ev.g_sq - lambda * l2_sq;
    let resid = lu_shift.axpy(-s_value * ev.hartree.powf(1.0 / q - 1.0), &nl);
    let residual = resid.dot(&resid).sqrt() / ev.lu.dot(&ev.lu).sqrt();
    Ok(QuotientResult {
        lambda,
        s_value,
        minimizer: u,
        g_sq: ev.g_sq,
        l2_sq,
        multiplier,
        residual,
        converged: residual <= opts.tol.max(1e-12) * 10.0 && out.stopped_by_monitor,
        iterations: out.iterations,
        history: history.into_inner(),
    })
}

/// Scale a normalized quotient minimizer into a solution of
/// L u = D[u] |u|^{q-2} u + lambda u: u = S^{1/(2q-2)} psi.
pub fn rescale_minimizer(problem: &Problem, result: &QuotientResult) -> Result<Field> {
    if !(result.s_value > 0.0) {
        return Err(Error::Domain(format!("S = {} is not positive, no rescaled solution", result.s_value)));
    }
    let q = problem.exponents().hartree;
    Ok(result.minimizer.scale(result.s_value.powf(1.0 / (2.0 * q - 2.0))))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScanOptions {
    pub quotient: QuotientOptions,
    /// Plateau tolerance relative to |S(0)|; also the drop that marks lambda*.
    pub plateau: f64,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { quotient: QuotientOptions::default(), plateau: 0.02 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanRow {
    pub lambda: f64,
    /// Best value reached by minimizations at this lambda.
    pub s_direct: f64,
    /// Lower envelope over every minimizer found in the scan.
    pub s_value: f64,
    pub l2_sq: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScanReport {
    pub lambda_1s: f64,
    pub lambda_1: f64,
    pub s_zero: f64,
    pub plateau_scatter: f64,
    pub plateau_tolerance: f64,
    pub lambda_star: Option<f64>,
    pub monotone: bool,
    pub rows: Vec<ScanRow>,
    /// (delta, S(lambda* - delta) - S(lambda*)) for the left-continuity probe.
    pub left_probe: Vec<(f64, f64)>,
}

// P_0(u) and |u|_2^2 of a normalized candidate: P_lambda = a - lambda b.
struct Candidate {
    p0: f64,
    l2: f64,
    field: Field,
}

fn envelope(pool: &[Candidate], lambda: f64) -> (f64, f64) {
    pool.iter()
        .map(|c| (c.p0 - lambda * c.l2, c.l2))
        .fold((f64::INFINITY, 0.0), |best, v| if v.0 < best.0 { v } else { best })
}

/// Starting fields for a scan: |eigenfield| plus cut-off bubbles at the
/// centre of width `w h` for each w in `widths`.
pub fn scan_starts(problem: &Problem, eigenfield: &Field, widths: &[f64]) -> Result<Vec<Field>> {
    let g = problem.grid();
    let delta_c = 0.5 * problem.mask().shape().inradius(g.dim());
    let mut starts = vec![eigenfield.abs()];
    for &w in widths {
        starts.push(bubble_field(&Bubble::cutoff(w * g.spacing(), delta_c), problem.mask(), true)?);
    }
    Ok(starts)
}

/// S_{H,L}(lambda) along `lambdas`, plus lambda = 0, from every start in
/// `starts`. Each reported value is the lower envelope of the affine maps
/// lambda -> P_0(psi) - lambda |psi|^2 over all minimizers psi found, which
/// is an upper bound for the discrete infimum and exactly non-increasing.
pub fn lambda_star_scan(
    problem: &Problem,
    lambdas: &[f64],
    lambda_1s: f64,
    lambda_1: f64,
    starts: &[Field],
    opts: &ScanOptions,
) -> Result<ScanReport> {
    if lambdas.is_empty() || lambdas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(param("lambda grid must be nonempty and strictly increasing"));
    }
    if starts.is_empty() {
        return Err(param("need at least one start field"));
    }
    let mut pool = Vec::new();
    let mut direct = Vec::new();
    let mut fields: Vec<Field> = starts.to_vec();
    for &lambda in std::iter::once(&0.0).chain(lambdas) {
        let mut best = (f64::INFINITY, true);
        let mut found = Vec::new();
        for start in &fields {
            let r = quotient_minimize(problem, lambda, start, opts.quotient)?;
            if r.s_value < best.0 {
                best = (r.s_value, r.converged);
            }
            found.push(r.minimizer.clone());
            pool.push(Candidate { p0: r.g_sq, l2: r.l2_sq, field: r.minimizer });
        }
        // warm starts for the next lambda: the originals plus this lambda's minimizers
        fields = starts.iter().cloned().chain(found.into_iter().take(starts.len())).collect();
        direct.push((lambda, best));
    }
    let s_zero = envelope(&pool, 0.0).0;
    let rows: Vec<ScanRow> = direct[1..]
        .iter()
        .map(|&(lambda, (s_direct, converged))| {
            let (s_value, l2_sq) = envelope(&pool, lambda);
            ScanRow { lambda, s_direct, s_value, l2_sq, converged }
        })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].s_value <= w[0].s_value) && rows[0].s_value <= s_zero;
    let plateau_scatter = rows.iter().filter(|r| r.lambda <= lambda_1s).map(|r| (r.s_value - s_zero).abs()).fold(0.0, f64::max);
    let plateau_tolerance = opts.plateau * s_zero.abs();
    let lambda_star = rows.iter().find(|r| r.s_value < s_zero - plateau_tolerance).map(|r| r.lambda);
    let mut left_probe = Vec::new();
    if let Some(ls) = lambda_star {
        let at = envelope(&pool, ls).0;
        for frac in [1e-1, 1e-2, 1e-3] {
            let delta = frac * lambda_1;
            let lam = (ls - delta).max(0.0);
            let seed = pool
                .iter()
                .min_by(|a, b| (a.p0 - lam * a.l2).total_cmp(&(b.p0 - lam * b.l2)))
                .map(|c| c.field.clone())
                .unwrap_or_else(|| starts[0].clone());
            let r = quotient_minimize(problem, lam, &seed, opts.quotient)?;
            pool.push(Candidate { p0: r.g_sq, l2: r.l2_sq, field: r.minimizer });
            left_probe.push((delta, envelope(&pool, lam).0 - at));
        }
    }
    Ok(ScanReport { lambda_1s, lambda_1, s_zero, plateau_scatter, plateau_tolerance, lambda_star, monotone, rows, left_probe })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct Fiber {
    /// The maximizer t* of t -> J(t u).
    pub t: f64,
    /// J(t* u)
    pub level: f64,
    /// |d/dt J(t u)| at t*.
    pub stationarity: f64,
    pub g_sq: f64,
}

// Root of F(s) = g - lambda P e^{(p-1)s} - N e^{(2q-2)s} with F > 0 to the
// left and F < 0 to the right; s = ln t.
fn fiber_root(g: f64, pw: f64, nn: f64, lambda: f64, p: f64, q: f64) -> Result<f64> {
    let (a, b) = (p - 1.0, 2.0 * q - 2.0);
    let f = |s: f64| g - lambda * pw * (a * s).exp() - nn * (b * s).exp();
    let df = |s: f64| -lambda * pw * a * (a * s).exp() - nn * b * (b * s).exp();
    let s0 = (g / nn).ln() / b;
    let (mut lo, mut hi) = (s0, s0);
    let mut k = 0;
    while f(lo) <= 0.0 {
        lo -= 1.0;
        k += 1;
        if k > 200 {
            return Err(Error::Domain("fiber map has no interior maximum".into()));
        }
    }
    k = 0;
    while f(hi) >= 0.0 {
        hi += 1.0;
        k += 1;
        if k > 200 {
            return Err(Error::Domain("fiber map does not turn down".into()));
        }
    }
    let mut s = hi;
    for _ in 0..200 {
        let fs = f(s);
        if fs > 0.0 {
            lo = s;
        } else {
            hi = s;
        }
        let d = df(s);
        let mut next = s - fs / d;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= 1e-15 * s.abs().max(1.0) || hi - lo <= 1e-15 * hi.abs().max(1.0) {
            return Ok(next);
        }
        s = next;
    }
    Ok(s)
}

fn fiber_from(q: f64, g_sq: f64, lp: f64, nn: f64, lambda: f64, p: f64) -> Result<Fiber> {
    let s = fiber_root(g_sq, lp, nn, lambda, p, q)?;
    let t = s.exp();
    let level = 0.5 * t * t * g_sq - t.powf(2.0 * q) * nn / (2.0 * q) - lambda * t.powf(p + 1.0) * lp / (p + 1.0);
    let stationarity = (t * g_sq - lambda * t.powf(p) * lp - t.powf(2.0 * q - 1.0) * nn).abs();
    Ok(Fiber { t, level, stationarity, g_sq })
}

/// Maximize t -> J(t u) over t > 0.
pub fn fibering_max(problem: &Problem, u: &Field, lambda: f64, p: f64) -> Result<Fiber> {
    let n = problem.grid().dim();
    check_power(n, p)?;
    if u.max_abs() == 0.0 {
        return Err(param("fibering needs a nonzero field"));
    }
    let ev = problem.evaluate(u);
    let lp = u.lp_pow(problem.grid(), p + 1.0);
    fiber_from(problem.exponents().hartree, ev.g_sq, lp, ev.hartree, lambda, p)
}

/// (n + 2 - mu) / (4n - 2mu) * S^{(2n - mu)/(n + 2 - mu)}
pub fn compactness_threshold(n: usize, mu: f64, s_hl: f64) -> f64 {
    let nf = n as f64;
    (nf + 2.0 - mu) / (4.0 * nf - 2.0 * mu) * s_hl.powf((2.0 * nf - mu) / (nf + 2.0 - mu))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MountainPassOptions {
    /// Stop when ||grad J(u)||_2 <= tol ||u||_2.
    pub tol: f64,
    pub max_iter: usize,
    /// Scale of the starting bubble; 4h when absent.
    pub eps: Option<f64>,
}

impl Default for MountainPassOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 4000, eps: None }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub lambda: f64,
    pub p: f64,
    pub level: f64,
    pub threshold: f64,
    pub below_threshold: bool,
    pub converged: bool,
    pub trivial_collapse: bool,
    pub iterations: usize,
    /// ||grad J(u)||_2 / ||u||_2 at the returned field.
    pub grad_ratio: f64,
    pub min_inside: f64,
    pub max_abs: f64,
    pub start_max_abs: f64,
    /// Radius of gyration of |u|^{2*}; at or below 2h the run counts as collapsed.
    pub concentration: f64,
    #[serde(skip)]
    pub solution: Field,
    pub history: Vec<f64>,
}

/// Radius of gyration of the critical density |u|^{2*} about its centroid.
pub fn concentration_radius(grid: &Grid, u: &Field) -> f64 {
    let n = grid.dim();
    let crit = 2.0 * n as f64 / (n as f64 - 2.0);
    let w: Vec<f64> = u.iter().map(|v| v.abs().powf(crit)).collect();
    let mass: f64 = w.iter().sum();
    if mass == 0.0 {
        return 0.0;
    }
    let mut c = [0.0; 3];
    for (i, &wi) in w.iter().enumerate() {
        let x = grid.point(i);
        for d in 0..n {
            c[d] += wi * x[d] / mass;
        }
    }
    let m2: f64 = w
        .iter()
        .enumerate()
        .map(|(i, &wi)| {
            let x = grid.point(i);
            wi * (0..n).map(|d| (x[d] - c[d]).powi(2)).sum::<f64>()
        })
        .sum();
    (m2 / mass).sqrt()
}

/// Minimize u -> J(t*(u) u) over directions, starting from the cut-off bubble
/// v_eps centred at the origin. `s_hl` is the HLS-type constant used for the
/// compactness threshold.
pub fn mountain_pass_solve(problem: &Problem, lambda: f64, p: f64, s_hl: f64, opts: MountainPassOptions) -> Result<SolveReport> {
    let g = problem.grid();
    let n = g.dim();
    check_power(n, p)?;
    if !(p > 1.0) {
        return Err(param("mountain pass needs p > 1"));
    }
    let h = g.spacing();
    let hn = g.cell_volume();
    let q = problem.exponents().hartree;
    let mask = problem.mask().clone();
    let eps = opts.eps.unwrap_or(4.0 * h);
    let delta_c = 0.5 * problem.mask().shape().inradius(n);
    let start = bubble_field(&Bubble::cutoff(eps, delta_c), &mask, true)?;
    if start.max_abs() == 0.0 {
        return Err(Error::Domain("starting bubble vanishes on the grid".into()));
    }
    let start_fiber = fibering_max(problem, &start, lambda, p)?;
    let start_max_abs = start.max_abs() * start_fiber.t;

    let last: RefCell<Option<(f64, f64)>> = RefCell::new(None);
    let history = RefCell::new(Vec::new());
    let eval = |x: &[f64]| -> (f64, Vec<f64>) {
        let u = Field::raw(x.to_vec());
        let ev = problem.evaluate(&u);
        let lp = u.lp_pow(g, p + 1.0);
        let Ok(fb) = fiber_from(q, ev.g_sq, lp, ev.hartree, lambda, p) else {
            return (f64::INFINITY, vec![0.0; x.len()]);
        };
        let t = fb.t;
        let nl = problem.nonlinearity(&u, &ev.potential);
        let pw = power_term(&u, p);
        let tq = t.powf(2.0 * q - 1.0);
        let tp = t.powf(p);
        // grad J(t u) on the inside
        let gj: Vec<f64> = (0..x.len())
            .map(|i| if mask.is_inside(i) { t * ev.lu[i] - tq * nl[i] - lambda * tp * pw[i] } else { 0.0 })
            .collect();
        let gn = gj.iter().map(|v| v * v).sum::<f64>().sqrt();
        let un = t * x.iter().map(|v| v * v).sum::<f64>().sqrt();
        *last.borrow_mut() = Some((fb.level, gn / un));
        (fb.level, gj.into_iter().map(|v| v * t * hn).collect())
    };
    let monitor = |x: &[f64], f: f64, _: &[f64], _: usize| -> Control {
        history.borrow_mut().push(f);
        if mask.inside_nodes().iter().any(|&i| x[i] < 0.0) {
            return Control::Replace(x.iter().map(|v| v.abs()).collect());
        }
        match *last.borrow() {
            Some((_, rel)) if rel <= opts.tol => Control::Stop,
            _ => Control::Continue,
        }
    };
    let x0 = start.scale(start_fiber.t).into_values();
    let out = minimize(x0, eval, monitor, LbfgsOptions { max_iter: opts.max_iter, ..Default::default() });
    let dir = Field::raw(out.x).abs();
    let (solution, level) = if dir.max_abs() > 0.0 {
        match fibering_max(problem, &dir, lambda, p) {
            Ok(fb) => (dir.scale(fb.t), fb.level),
            Err(_) => (Field::zeros(&mask), 0.0),
        }
    } else {
        (Field::zeros(&mask), 0.0)
    };
    let grad = grad_energy(problem, &solution, lambda, p)?;
    let un = l2(g, &solution);
    let grad_ratio = if un > 0.0 { l2(g, &grad) / un } else { f64::INFINITY };
    let min_inside = mask.inside_nodes().iter().map(|&i| solution[i]).fold(f64::INFINITY, f64::min);
    let max_abs = solution.max_abs();
    let concentration = concentration_radius(g, &solution);
    let threshold = compactness_threshold(n, problem.choquard().mu(), s_hl);
    let trivial_collapse = max_abs < 1e-6 * start_max_abs || concentration <= 2.0 * h;
    Ok(SolveReport {
        lambda,
        p,
        level,
        threshold,
        below_threshold: level < threshold,
        converged: grad_ratio <= opts.tol,
        trivial_collapse,
        iterations: out.iterations,
        grad_ratio,
        min_inside,
        max_abs,
        start_max_abs,
        concentration,
        solution,
        history: history.into_inner(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_domain, Shape};
    use crate::spectral::first_eigen_mixed;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(m: usize, r: f64) -> Problem {
        let g = Grid::new(3, 1.0, m).unwrap();
        Problem::new(Arc::new(build_domain(&Shape::ball(r), &g).unwrap()), 0.5, 1.0).unwrap()
    }

    fn random(mask: &DomainMask, rng: &mut ChaCha8Rng, lo: f64) -> Field {
        Field::from_fn(mask, |_| rng.random_range(lo..1.0))
    }

    #[test]
    fn power_range() {
        assert!(check_power(3, 1.0).is_ok());
        assert!(check_power(3, 4.99).is_ok());
        assert!(check_power(3, 5.0).is_err());
        assert!(check_power(3, 0.5).is_err());
        assert!(check_power(2, 1.0).is_err());
    }

    #[test]
    fn zero_field_has_zero_energy_and_gradient() {
        let pb = problem(8, 0.45);
        let z = Field::zeros(pb.mask());
        let e = energy(&pb, &z, 3.0, 2.0).unwrap();
        assert_eq!(e.j, 0.0);
        assert_eq!(grad_energy(&pb, &z, 3.0, 2.0).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn breakdown_is_consistent() {
        let pb = problem(8, 0.45);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = random(pb.mask(), &mut rng, -1.0);
        let e = energy(&pb, &u, 2.5, 2.0).unwrap();
        let q = pb.exponents().hartree;
        let j = e.g_sq / 2.0 - e.hl / (2.0 * q) - 2.5 * e.lp / 3.0;
        let big = (e.g_sq / 2.0).max(e.hl / (2.0 * q)).max(2.5 * e.lp / 3.0);
        assert!((e.j - j).abs() <= 1e-12 * big);
        assert!((e.g_sq - pb.form().mixed_norm_sq(&u)).abs() < 1e-10 * e.g_sq);
        assert!((e.hl - pb.choquard().hartree_integral(&u).0).abs() < 1e-10 * e.hl);
    }

    #[test]
    fn odd_powers_are_even_functionals() {
        let pb = problem(8, 0.45);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random(pb.mask(), &mut rng, -1.0);
        for p in [1.0, 3.0] {
            let a = energy(&pb, &u, 1.7, p).unwrap().j;
            let b = energy(&pb, &u.scale(-1.0), 1.7, p).unwrap().j;
            assert_eq!(a, b);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let pb = problem(8, 0.45);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (p, lambda) in [(1.0, 4.0), (2.0, 1.0), (2.5, -1.0)] {
            for _ in 0..3 {
                let u = random(pb.mask(), &mut rng, -1.0);
                let phi = random(pb.mask(), &mut rng, -1.0);
                let eps = 1e-5;
                let jp = energy(&pb, &u.axpy(eps, &phi), lambda, p).unwrap().j;
                let jm = energy(&pb, &u.axpy(-eps, &phi), lambda, p).unwrap().j;
                let fd = (jp - jm) / (2.0 * eps);
                let an = grad_energy(&pb, &u, lambda, p).unwrap().dot(&phi) * pb.grid().cell_volume();
                assert!((fd - an).abs() <= 1e-6 * an.abs(), "p={p} fd={fd} an={an}");
            }
        }
    }

    #[test]
    fn fiber_map_shape_and_covariance() {
        let pb = problem(12, 0.65);
        let u = bubble_field(&Bubble::cutoff(0.2, 0.3), pb.mask(), true).unwrap();
        let lp = |t: f64| energy(&pb, &u.scale(t), 1.0, 2.0).unwrap().j;
        assert!(lp(1e-3) > 0.0);
        assert!(lp(1e3) < 0.0);
        let f1 = fibering_max(&pb, &u, 1.0, 2.0).unwrap();
        let f2 = fibering_max(&pb, &u.scale(2.0), 1.0, 2.0).unwrap();
        assert!((f2.t - f1.t / 2.0).abs() <= 1e-8 * f1.t);
        assert!(f1.stationarity <= 1e-10 * f1.g_sq);
        assert!((f1.level - lp(f1.t)).abs() < 1e-10 * f1.level.abs());
        assert!(lp(0.9 * f1.t) < f1.level && lp(1.1 * f1.t) < f1.level);
        let big = fibering_max(&pb, &u, 1e4, 2.0).unwrap();
        assert!(big.t < f1.t);
        // negative lambda still has a unique maximizer
        let neg = fibering_max(&pb, &u, -1.0, 2.0).unwrap();
        assert!(neg.t > f1.t && neg.stationarity <= 1e-10 * neg.g_sq);
        assert!(fibering_max(&pb, &Field::zeros(pb.mask()), 1.0, 2.0).is_err());
    }

    #[test]
    fn threshold_arithmetic() {
        // coefficient 4/10, exponent 5/4
        assert!((compactness_threshold(3, 1.0, 1.0) - 0.4).abs() < 1e-15);
        assert!((compactness_threshold(3, 1.0, 16.0) - 0.4 * 32.0).abs() < 1e-12);
    }

    #[test]
    fn quotient_minimizer_satisfies_lagrange_condition() {
        let pb = problem(12, 0.65);
        let eig = first_eigen_mixed(pb.mask().clone(), 0.5).unwrap();
        let lambda = 0.5 * eig.eigenvalue;
        let r = quotient_minimize(&pb, lambda, &eig.eigenfield, QuotientOptions::default()).unwrap();
        assert!(r.converged, "residual {}", r.residual);
        assert!((pb.choquard().hl_norm(&r.minimizer) - 1.0).abs() < 1e-10);
        assert!((r.s_value - (r.g_sq - lambda * r.l2_sq)).abs() < 1e-12 * r.g_sq);
        assert!((r.multiplier - r.s_value).abs() <= 1e-8 * r.s_value.abs());
        assert!(r.history.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs()));
        let u = rescale_minimizer(&pb, &r).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10 {
            let phi = random(pb.mask(), &mut rng, -1.0);
            assert!(pb.weak_residual(&u, lambda, 1.0, &phi) <= 1e-5);
        }
    }

    #[test]
    fn quotient_changes_sign_at_the_eigenvalue() {
        let pb = problem(12, 0.65);
        let eig = first_eigen_mixed(pb.mask().clone(), 0.5).unwrap();
        let l1 = eig.eigenvalue;
        let s = |f: f64| quotient_minimize(&pb, f * l1, &eig.eigenfield, QuotientOptions::default()).unwrap().s_value;
        let (a, b, c) = (s(0.5), s(0.9), s(1.5));
        assert!(a > 0.0 && a >= b && c < 0.0, "{a} {b} {c}");
    }
}

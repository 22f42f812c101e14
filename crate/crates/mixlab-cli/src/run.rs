//! One function per subcommand. Each returns its table, a JSON report and
//! the list of failed assertions.

use serde_json::{json, Value};
use std::sync::Arc;

use mixlab::choquard::{hls_constant_estimate, hls_sharp_constant, hls_sharp_constant_estimate, HlsEstimate};
use mixlab::config::RunConfig;
use mixlab::geometry::{boundary_patches, build_domain, DomainMask, Grid};
use mixlab::operators::{FractionalForm, LaplacianForm, MixedForm};
use mixlab::spectral::{first_eigen, EIGEN_MAX_ITER};
use mixlab::variational::{
    lambda_star_scan, mountain_pass_solve, scan_starts, MountainPassOptions, Problem, QuotientOptions, ScanOptions,
};
use mixlab::verify::{
    bubble_limit_experiment, cutoff_bubble_asymptotics, gradient_check, oracle_suite, pohozaev_for, pohozaev_local_refinement,
    predicted_energy_limit, scaling_experiment, weak_residual_check, Bump, SlopeFit,
};
use mixlab::{Error, Result};

use crate::report::{num, Table};

pub struct Outcome {
    pub table: Table,
    pub report: Value,
    pub failures: Vec<String>,
    pub tolerances: Vec<(&'static str, f64)>,
}

impl Outcome {
    fn new(table: Table) -> Self {
        Self { table, report: Value::Null, failures: Vec::new(), tolerances: Vec::new() }
    }

    fn require(&mut self, ok: bool, what: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(what());
        }
    }

    fn tolerance(&mut self, name: &'static str, value: f64) -> f64 {
        if !self.tolerances.iter().any(|(n, _)| *n == name) {
            self.tolerances.push((name, value));
        }
        value
    }
}

pub struct Ctx<'a> {
    pub cfg: Option<&'a RunConfig>,
    pub seed: u64,
    pub jobs: usize,
}

impl Ctx<'_> {
    fn cfg(&self) -> Result<&RunConfig> {
        self.cfg.ok_or_else(|| Error::Config("this subcommand needs --config".into()))
    }
}

/// Maps `f` over `items` on at most `jobs` threads, keeping the order.
fn par_map<T: Sync, R: Send>(jobs: usize, items: &[T], f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let chunk = items.len().div_ceil(jobs.max(1)).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items.chunks(chunk).map(|c| scope.spawn(|| c.iter().map(&f).collect::<Vec<R>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

fn mask_at(cfg: &RunConfig, m: usize) -> Result<Arc<DomainMask>> {
    let grid = Grid::new(cfg.problem.n, cfg.grid.half_width, m)?;
    Ok(Arc::new(build_domain(cfg.shape(), &grid)?))
}

fn resolutions(cfg: &RunConfig) -> Vec<usize> {
    let mut ms = vec![cfg.grid.m];
    ms.extend(&cfg.experiment.refinement);
    ms.sort_unstable();
    ms.dedup();
    ms
}

fn required(v: Option<f64>, key: &str) -> Result<f64> {
    v.ok_or_else(|| Error::Config(format!("this subcommand needs problem.{key}")))
}

pub fn eig(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg()?;
    let s = cfg.problem.s;
    let tol = cfg.tolerances.eigen;
    let ms = resolutions(cfg);
    let results = par_map(ctx.jobs, &ms, |&m| -> Result<[f64; 4]> {
        let mask = mask_at(cfg, m)?;
        let local = first_eigen(&LaplacianForm::new(mask.clone()), tol, EIGEN_MAX_ITER)?;
        let frac = first_eigen(&FractionalForm::new(mask.clone(), s)?, tol, EIGEN_MAX_ITER)?;
        let mixed = first_eigen(&MixedForm::new(mask.clone(), s)?, tol, EIGEN_MAX_ITER)?;
        Ok([mask.grid().spacing(), local.eigenvalue, frac.eigenvalue, mixed.eigenvalue])
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = Outcome::new(Table::new(&["m", "h", "lambda_loc", "lambda_frac", "lambda_mixed", "gap"]));
    out.tolerance("eigen", tol);
    for (&m, r) in ms.iter().zip(&results) {
        let gap = r[3] - r[1] - r[2];
        out.table.push([m.to_string(), num(r[0]), num(r[1]), num(r[2]), num(r[3]), num(gap)]);
        out.require(gap >= 0.0, || format!("lambda_1 >= lambda_loc + lambda_1s fails at m = {m} (gap {gap:e})"));
    }
    if ms.len() > 1 {
        let drift_tol = out.tolerance("eigen_drift", cfg.tolerances.eigen_drift);
        for (w, r) in ms.windows(2).zip(results.windows(2)) {
            for (k, label) in [(1, "local"), (2, "fractional"), (3, "mixed")] {
                let drift = (r[1][k] - r[0][k]).abs() / r[0][k];
                out.require(drift <= drift_tol, || format!("{label} eigenvalue drifts {drift:.4} from m = {} to m = {}", w[0], w[1]));
            }
        }
    }
    out.report = json!({ "m": ms, "eigenvalues": results.iter().map(|r| json!({"h": r[0], "local": r[1], "fractional": r[2], "mixed": r[3]})).collect::<Vec<_>>() });
    Ok(out)
}

pub fn quotient_scan(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg()?;
    let (s, tol) = (cfg.problem.s, &cfg.tolerances);
    let mask = mask_at(cfg, cfg.grid.m)?;
    let problem = Problem::new(mask.clone(), s, cfg.problem.mu)?;
    let frac = first_eigen(&FractionalForm::new(mask.clone(), s)?, tol.eigen, EIGEN_MAX_ITER)?;
    let mixed = first_eigen(problem.form(), tol.eigen, EIGEN_MAX_ITER)?;
    let (l1s, l1) = (frac.eigenvalue, mixed.eigenvalue);
    let lambdas = cfg.scan.lambdas(l1);
    let starts = scan_starts(&problem, &mixed.eigenfield, &cfg.scan.start_widths)?;
    let mut out = Outcome::new(Table::new(&["lambda", "s_direct", "s_value", "l2_sq", "converged"]));
    let opts = ScanOptions {
        quotient: QuotientOptions { tol: out.tolerance("quotient", tol.quotient), ..Default::default() },
        plateau: out.tolerance("plateau", tol.plateau),
    };
    out.tolerance("eigen", tol.eigen);
    let scan = lambda_star_scan(&problem, &lambdas, l1s, l1, &starts, &opts)?;
    for r in &scan.rows {
        out.table.push([num(r.lambda), num(r.s_direct), num(r.s_value), num(r.l2_sq), r.converged.to_string()]);
    }
    let step = lambdas.windows(2).map(|w| w[1] - w[0]).fold(lambdas[0], f64::max);
    check_scan(&mut out, &scan, step);
    out.report = json!({ "scan": scan, "lambda_step": step });
    Ok(out)
}

/// Shape assertions on a lambda scan; `step` is the lambda-grid spacing.
pub fn check_scan(out: &mut Outcome, scan: &mixlab::variational::ScanReport, step: f64) {
    out.require(scan.monotone, || "S(lambda) is not non-increasing".into());
    for r in &scan.rows {
        if r.lambda < scan.lambda_1 - step {
            out.require(r.s_value > 0.0, || format!("S({}) = {} is not positive below lambda_1 = {}", r.lambda, r.s_value, scan.lambda_1));
        } else if r.lambda > scan.lambda_1 + step {
            out.require(r.s_value <= 0.0, || format!("S({}) = {} is positive above lambda_1 = {}", r.lambda, r.s_value, scan.lambda_1));
        }
        if r.lambda <= scan.lambda_1s {
            let dev = (r.s_value - scan.s_zero).abs();
            out.require(dev <= scan.plateau_tolerance, || format!("S({}) leaves the plateau by {dev} > {}", r.lambda, scan.plateau_tolerance));
        }
    }
    match scan.lambda_star {
        Some(ls) => out.require(ls >= scan.lambda_1s - step && ls < scan.lambda_1, || {
            format!("lambda* = {ls} outside [lambda_1s - step, lambda_1) = [{}, {})", scan.lambda_1s - step, scan.lambda_1)
        }),
        None => out.require(false, || "no lambda* detected on the grid".into()),
    }
}

fn hls(cfg: &RunConfig) -> Result<HlsEstimate> {
    hls_constant_estimate(cfg.problem.n, cfg.problem.mu, cfg.experiment.hls_m)
}

fn mp_options(cfg: &RunConfig) -> MountainPassOptions {
    MountainPassOptions { tol: cfg.tolerances.mountain_pass, eps: cfg.experiment.start_width, ..Default::default() }
}

pub fn mountain_pass(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg()?;
    let (lambda, p) = (required(cfg.problem.lambda, "lambda")?, required(cfg.problem.p, "p")?);
    let s_hl = hls(cfg)?;
    let problem = Problem::new(mask_at(cfg, cfg.grid.m)?, cfg.problem.s, cfg.problem.mu)?;
    let mut out = Outcome::new(Table::new(&["iteration", "level"]));
    out.tolerance("mountain_pass", cfg.tolerances.mountain_pass);
    let rep = mountain_pass_solve(&problem, lambda, p, s_hl.value, mp_options(cfg))?;
    for (i, l) in rep.history.iter().enumerate() {
        out.table.push([i.to_string(), num(*l)]);
    }
    let residual = weak_residual_check(&problem, &rep.solution, lambda, p, 10, ctx.seed);
    let res_tol = out.tolerance("weak_residual", cfg.tolerances.weak_residual);
    out.require(rep.converged, || format!("solver did not converge in {} iterations", rep.iterations));
    out.require(!rep.trivial_collapse, || format!("solution collapsed (concentration radius {:.3e})", rep.concentration));
    out.require(rep.min_inside > 0.0, || format!("solution is not positive (min {:e})", rep.min_inside));
    out.require(rep.below_threshold, || format!("level {} not below the threshold {}", rep.level, rep.threshold));
    out.require(residual <= res_tol, || format!("weak residual {residual:e} exceeds {res_tol:e}"));
    out.report = json!({ "solve": rep, "weak_residual": residual, "s_hl": s_hl });
    Ok(out)
}

pub fn pohozaev(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg()?;
    let ms = resolutions(cfg);
    let res = cfg.experiment.patch_resolution;
    if cfg.problem.n < 3 {
        // local-only identity on the Dirichlet eigenfunction
        let shape_r = cfg.shape().inradius(cfg.problem.n);
        let study = pohozaev_local_refinement(cfg.problem.n, shape_r, &ms, res)?;
        let mut out = Outcome::new(Table::new(&["m", "h", "relative"]));
        for ((m, h), r) in study.m.iter().zip(&study.h).zip(&study.relative) {
            out.table.push([m.to_string(), num(*h), num(*r)]);
        }
        out.require(study.relative.windows(2).all(|w| w[1] < w[0]), || "relative residual does not decrease under refinement".into());
        if ms.len() > 1 {
            out.require(study.order >= 1.0, || format!("empirical order {} below 1", study.order));
        }
        out.report = json!({ "mode": "local", "study": study });
        return Ok(out);
    }
    let (lambda, p) = (required(cfg.problem.lambda, "lambda")?, required(cfg.problem.p, "p")?);
    let s_hl = hls(cfg)?.value;
    let runs = par_map(ctx.jobs, &ms, |&m| -> Result<Value> {
        let mask = mask_at(cfg, m)?;
        let problem = Problem::new(mask.clone(), cfg.problem.s, cfg.problem.mu)?;
        let rep = mountain_pass_solve(&problem, lambda, p, s_hl, mp_options(cfg))?;
        let terms = pohozaev_for(&problem, &rep.solution, lambda, p, &boundary_patches(&mask, res))?;
        Ok(json!({ "m": m, "terms": terms, "converged": rep.converged, "trivial_collapse": rep.trivial_collapse, "level": rep.level }))
    });
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    let mut out = Outcome::new(Table::new(&["m", "a", "b", "c1", "c2", "d1", "d2", "residual", "relative"]));
    let tol = out.tolerance("pohozaev", cfg.tolerances.pohozaev);
    out.tolerance("mountain_pass", cfg.tolerances.mountain_pass);
    let rel: Vec<f64> = runs.iter().map(|r| r["terms"]["relative"].as_f64().unwrap_or(f64::NAN)).collect();
    for r in &runs {
        let t = &r["terms"];
        let cell = |k: &str| num(t[k].as_f64().unwrap_or(f64::NAN));
        out.table.push([r["m"].to_string(), cell("a"), cell("b"), cell("c1"), cell("c2"), cell("d1"), cell("d2"), cell("residual"), cell("relative")]);
    }
    out.require(rel.windows(2).all(|w| w[1] < w[0]), || format!("relative residual {rel:?} does not decrease under refinement"));
    let last = *rel.last().unwrap_or(&f64::NAN);
    out.require(last <= tol, || format!("relative residual {last} at the finest grid exceeds {tol}"));
    out.report = json!({ "mode": "mixed", "runs": runs });
    Ok(out)
}

pub fn scaling(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg()?;
    let problem = Problem::new(mask_at(cfg, cfg.grid.m)?, cfg.problem.s, cfg.problem.mu)?;
    let rows = scaling_experiment(&problem, Bump { radius: cfg.experiment.bump_radius }, &cfg.experiment.ks)?;
    let mut out = Outcome::new(Table::new(&["k", "local", "fractional", "total"]));
    let ft = out.tolerance("scaling_fractional", cfg.tolerances.scaling_fractional);
    let lt = out.tolerance("scaling_local", cfg.tolerances.scaling_local);
    let base = rows[0];
    for r in &rows {
        out.table.push([num(r.k), num(r.local), num(r.fractional), num(r.total)]);
        let predicted = base.fractional * (r.k / base.k).powf(2.0 * cfg.problem.s - 2.0);
        let fd = (r.fractional - predicted).abs() / predicted;
        let ld = (r.local - base.local).abs() / base.local;
        out.require(fd <= ft, || format!("fractional column at k = {} deviates {fd:.4} from k^(2s-2)", r.k));
        out.require(ld <= lt, || format!("local column at k = {} drifts {ld:.4}", r.k));
    }
    out.report = json!({ "rows": rows });
    Ok(out)
}

pub fn bubble_limit(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg()?;
    let r = bubble_limit_experiment(cfg.problem.n, cfg.problem.s, &cfg.experiment.ts, cfg.grid.half_width, cfg.grid.m)?;
    let mut out = Outcome::new(Table::new(&["t", "local", "fractional", "g_sq", "model", "deviation"]));
    for row in &r.rows {
        out.table.push([num(row.t), num(row.local), num(row.fractional), num(row.g_sq), num(row.model), num(row.deviation)]);
    }
    let et = out.tolerance("bubble_exponent", cfg.tolerances.bubble_exponent);
    let lt = out.tolerance("bubble_limit", cfg.tolerances.bubble_limit);
    require_fit(&mut out, "exponent of G^2 - ||U||^2", &r.exponent, et);
    out.require(r.limit_gap <= lt, || format!("G^2 at the smallest t is {:.4} away from the extrapolated limit", r.limit_gap));
    out.report = json!({ "bubble_limit": r });
    Ok(out)
}

fn require_fit(out: &mut Outcome, label: &str, fit: &SlopeFit, tol: f64) {
    out.require(fit.conclusive, || format!("{label}: inconclusive fit (R^2 = {:.4})", fit.r_squared));
    out.require(fit.deviation <= tol, || format!("{label}: slope {:.4} vs target {:.4} (deviation {:.4})", fit.slope, fit.target, fit.deviation));
}

pub fn lemma45(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg()?;
    let (p, s) = (required(cfg.problem.p, "p")?, cfg.problem.s);
    let mask = mask_at(cfg, cfg.grid.m)?;
    let n = cfg.problem.n;
    let delta_c = cfg.experiment.delta_c.unwrap_or(0.5 * cfg.shape().inradius(n));
    let eps = if cfg.experiment.eps.is_empty() {
        let (lo, hi) = (4.0 * mask.grid().spacing(), delta_c / 4.0);
        (0..6).map(|i| lo * (hi / lo).powf(i as f64 / 5.0)).collect()
    } else {
        cfg.experiment.eps.clone()
    };
    let a = cutoff_bubble_asymptotics(mask, s, p, &eps, delta_c, cfg.experiment.strict)?;
    let mut out = Outcome::new(Table::new(&["eps", "energy", "seminorm", "power"]));
    for c in &a.samples {
        out.table.push([num(c.eps), num(c.energy), num(c.seminorm), num(c.power)]);
    }
    let tol = out.tolerance("slope", cfg.tolerances.slope);
    out.require(a.range_ok, || "eps range violates 4h <= eps <= delta_c/4 over a decade".into());
    require_fit(&mut out, "energy order", &a.energy_fit, tol);
    require_fit(&mut out, "seminorm order", &a.seminorm_fit, tol);
    require_fit(&mut out, "power order", &a.power_fit, tol);
    let predicted = predicted_energy_limit(n, cfg.problem.mu, cfg.experiment.hls_m)?;
    out.report = json!({ "asymptotics": a, "predicted_energy_limit": predicted, "limit_gap": (a.energy_limit - predicted).abs() / predicted });
    Ok(out)
}

pub fn hls_constant(ctx: &Ctx) -> Result<Outcome> {
    let cfg = ctx.cfg()?;
    let (n, mu, m) = (cfg.problem.n, cfg.problem.mu, cfg.experiment.hls_m);
    let s_hl = hls_constant_estimate(n, mu, m)?;
    let c = hls_sharp_constant_estimate(n, mu, m)?;
    let mut out = Outcome::new(Table::new(&["half_width", "h", "radius", "quotient"]));
    for smp in &s_hl.samples {
        out.table.push([num(smp.half_width), num(smp.h), num(smp.radius), num(smp.quotient)]);
    }
    out.report = json!({ "s_hl": s_hl, "sharp_constant": c, "sharp_constant_closed_form": hls_sharp_constant(n, mu) });
    Ok(out)
}

pub fn oracles(ctx: &Ctx) -> Result<Outcome> {
    let report = oracle_suite(ctx.seed)?;
    let mut out = Outcome::new(Table::new(&["check", "max_deviation", "tolerance", "passed"]));
    for c in &report.checks {
        out.table.push([c.name.clone(), num(c.max_deviation), num(c.tolerance), c.passed.to_string()]);
        out.require(c.passed, || format!("oracle '{}' deviates {:e} > {:e}", c.name, c.max_deviation, c.tolerance));
    }
    out.tolerance("oracle_abs", mixlab::verify::ORACLE_ABS_TOL);
    out.tolerance("gradient_rel", mixlab::verify::GRADIENT_REL_TOL);
    if let Some(cfg) = ctx.cfg {
        // gradient check on the configured problem as well
        if cfg.problem.n >= 3 {
            if let (Some(lambda), Some(p)) = (cfg.problem.lambda, cfg.problem.p) {
                let problem = Problem::new(mask_at(cfg, cfg.grid.m)?, cfg.problem.s, cfg.problem.mu)?;
                let worst = gradient_check(&problem, lambda, p, 10, ctx.seed)?;
                let tol = cfg.tolerances.gradient_rel;
                out.table.push(["energy gradient (config)".into(), num(worst), num(tol), (worst <= tol).to_string()]);
                out.require(worst <= tol, || format!("energy gradient deviates {worst:e} > {tol:e}"));
            }
        }
    }
    out.report = json!({ "oracles": report });
    Ok(out)
}

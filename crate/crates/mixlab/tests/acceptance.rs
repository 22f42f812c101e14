//! Acceptance suite: one PASS/FAIL line per criterion, each with its own
//! wall-clock budget. Run a subset with `cargo test --test acceptance -- 3 5`.

use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mixlab::choquard::hls_constant_estimate;
use mixlab::geometry::{boundary_patches, build_domain, DomainMask, Grid, Shape};
use mixlab::spectral::{first_eigen_fractional, first_eigen_local, first_eigen_mixed};
use mixlab::variational::{compactness_threshold, lambda_star_scan, mountain_pass_solve, scan_starts, MountainPassOptions, Problem, ScanOptions};
use mixlab::verify::{
    bubble_limit_experiment, cutoff_bubble_asymptotics, gradient_check, nonexistence_criterion, oracle_suite, pohozaev_for,
    pohozaev_local_refinement, scaling_experiment, weak_residual_check, Bump,
};
use mixlab::Result;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn ball(n: usize, m: usize, half_width: f64, r: f64) -> Result<Arc<DomainMask>> {
    Ok(Arc::new(build_domain(&Shape::ball(r), &Grid::new(n, half_width, m)?)?))
}

fn oracle_equivalence() -> Result<Verdict> {
    let report = oracle_suite(0)?;
    let kinds = ["riesz potential", "gagliardo form", "mixed operator"];
    let relevant: Vec<_> = report.checks.iter().filter(|c| kinds.iter().any(|k| c.name.starts_with(k))).collect();
    let worst = relevant.iter().map(|c| c.max_deviation).fold(0.0, f64::max);
    let pass = relevant.len() == 9 && relevant.iter().all(|c| c.passed && c.tolerance == 1e-10);
    verdict(pass, format!("{} comparisons on 8^n grids, n = 1..3, worst |diff| = {worst:.2e} (tol 1e-10)", relevant.len()))
}

fn gradient_fidelity() -> Result<Verdict> {
    let mask = ball(3, 8, 1.0, 0.45)?;
    let lambda_1 = first_eigen_mixed(mask.clone(), 0.5)?.eigenvalue;
    let problem = Problem::new(mask, 0.5, 1.0)?;
    let a = gradient_check(&problem, 0.5 * lambda_1, 1.0, 10, 11)?;
    let b = gradient_check(&problem, 1.0, 2.0, 10, 12)?;
    verdict(a <= 1e-6 && b <= 1e-6, format!("worst relative gap {a:.2e} at (p, lambda) = (1, 0.5 lambda_1), {b:.2e} at (2, 1) (tol 1e-6)"))
}

fn scaling_mechanism() -> Result<Verdict> {
    let problem = Problem::new(ball(3, 96, 1.0, 0.9)?, 0.5, 1.0)?;
    let rows = scaling_experiment(&problem, Bump { radius: 0.85 }, &[1.0, 2.0, 4.0])?;
    let base = rows[0];
    let mut frac_dev: f64 = 0.0;
    let mut local_dev: f64 = 0.0;
    for r in &rows {
        let predicted = base.fractional * r.k.powf(-1.0);
        frac_dev = frac_dev.max((r.fractional - predicted).abs() / predicted);
        local_dev = local_dev.max((r.local - base.local).abs() / base.local);
    }
    verdict(
        frac_dev <= 0.03 && local_dev <= 0.02,
        format!("fractional column vs k^(2s-2): {:.2}% (tol 3%), local drift {:.2}% (tol 2%)", 100.0 * frac_dev, 100.0 * local_dev),
    )
}

fn bubble_limit() -> Result<Verdict> {
    let mut pass = true;
    let mut parts = Vec::new();
    for s in [0.3, 0.5, 0.7] {
        let r = bubble_limit_experiment(3, s, &[1.0, 0.5, 0.25, 0.125], 2.0, 96)?;
        let ok = r.exponent.hits(0.10) && r.limit_gap <= 0.05;
        pass &= ok;
        parts.push(format!(
            "s={s}: slope {:.3} vs {:.1} (R^2 {:.3}), limit gap {:.1}%",
            r.exponent.slope,
            r.exponent.target,
            r.exponent.r_squared,
            100.0 * r.limit_gap
        ));
    }
    verdict(pass, parts.join("; "))
}

fn eigenvalue_structure() -> Result<Verdict> {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, shape) in [("ball", Shape::ball(0.8)), ("box", Shape::cube(0.75))] {
        let mut values = Vec::new();
        for m in [64, 128] {
            let mask = Arc::new(build_domain(&shape, &Grid::new(2, 1.0, m)?)?);
            let loc = first_eigen_local(mask.clone())?.eigenvalue;
            let frac = first_eigen_fractional(mask.clone(), 0.5)?.eigenvalue;
            let mixed = first_eigen_mixed(mask, 0.5)?.eigenvalue;
            values.push([loc, frac, mixed]);
        }
        let [loc, frac, mixed] = values[0];
        let gap = mixed - (loc + frac);
        let drift = (0..3).map(|k| (values[1][k] - values[0][k]).abs() / values[0][k]).fold(0.0, f64::max);
        pass &= gap >= 0.0 && drift <= 0.05;
        parts.push(format!("{label}: lambda_1 - lambda_loc - lambda_1s = {gap:.4}, drift {:.2}%", 100.0 * drift));
    }
    verdict(pass, parts.join("; ") + " (drift tol 5%)")
}

fn quotient_profile() -> Result<Verdict> {
    let mask = ball(3, 48, 1.0, 0.8)?;
    let problem = Problem::new(mask.clone(), 0.5, 1.0)?;
    let l1s = first_eigen_fractional(mask.clone(), 0.5)?.eigenvalue;
    let mixed = first_eigen_mixed(mask, 0.5)?;
    let l1 = mixed.eigenvalue;
    let step = 1.5 * l1 / 12.0;
    let lambdas: Vec<f64> = (1..=12).map(|i| (i as f64 - 0.5) * step).collect();
    let starts = scan_starts(&problem, &mixed.eigenfield, &[1.0, 4.0])?;
    let scan = lambda_star_scan(&problem, &lambdas, l1s, l1, &starts, &ScanOptions::default())?;
    let sign_ok = scan
        .rows
        .iter()
        .all(|r| (r.lambda >= l1 - step || r.s_value > 0.0) && (r.lambda <= l1 + step || r.s_value <= 0.0));
    let plateau_ok = scan.rows.iter().filter(|r| r.lambda <= l1s).all(|r| (r.s_value - scan.s_zero).abs() <= scan.plateau_tolerance);
    let star_ok = scan.lambda_star.is_some_and(|ls| ls >= l1s - step && ls < l1);
    let s: Vec<String> = scan.rows.iter().map(|r| format!("{:.3}", r.s_value)).collect();
    verdict(
        scan.monotone && sign_ok && plateau_ok && star_ok,
        format!(
            "monotone {}, sign {sign_ok}, plateau {plateau_ok} (S(0) = {:.4}, tol {:.4}), lambda* = {:?} in [{:.3} - {:.3}, {:.3}): {star_ok}; S = [{}]",
            scan.monotone,
            scan.s_zero,
            scan.plateau_tolerance,
            scan.lambda_star,
            l1s,
            step,
            l1,
            s.join(", ")
        ),
    )
}

fn mountain_pass() -> Result<Verdict> {
    let s_hl = hls_constant_estimate(3, 1.0, 48)?.value;
    let problem = Problem::new(ball(3, 48, 1.0, 0.8)?, 0.5, 1.0)?;
    let rep = mountain_pass_solve(&problem, 1.0, 2.0, s_hl, MountainPassOptions::default())?;
    let residual = weak_residual_check(&problem, &rep.solution, 1.0, 2.0, 10, 3);
    let threshold = compactness_threshold(3, 1.0, s_hl);
    let positive = rep.min_inside > 0.0 && !rep.trivial_collapse;
    verdict(
        rep.converged && positive && rep.level < threshold && residual <= 1e-5,
        format!(
            "converged {}, level {:.4} < 0.4 S^1.25 = {threshold:.4} (S = {s_hl:.4}), weak residual {residual:.1e} (tol 1e-5), \
             min {:.2e}, concentration radius {:.2e} vs 2h = {:.3e}, collapse {}",
            rep.converged,
            rep.level,
            rep.min_inside,
            rep.concentration,
            2.0 * problem.grid().spacing(),
            rep.trivial_collapse
        ),
    )
}

fn pohozaev() -> Result<Verdict> {
    let s_hl = hls_constant_estimate(3, 1.0, 48)?.value;
    let mut rel = Vec::new();
    for m in [24, 48] {
        let mask = ball(3, m, 1.0, 0.8)?;
        let problem = Problem::new(mask.clone(), 0.5, 1.0)?;
        let rep = mountain_pass_solve(&problem, 1.0, 2.0, s_hl, MountainPassOptions::default())?;
        rel.push(pohozaev_for(&problem, &rep.solution, 1.0, 2.0, &boundary_patches(&mask, 2000))?.relative);
    }
    let local = pohozaev_local_refinement(2, 0.8, &[32, 64, 128], 256)?;
    let local_ok = local.relative.windows(2).all(|w| w[1] < w[0]) && local.order >= 1.0;
    verdict(
        rel[1] < rel[0] && rel[1] < 0.10 && local_ok,
        format!(
            "mixed relative residual {:.2}% (m=24) -> {:.2}% (m=48), tol 10%; local-only {:?}, order {:.2} (>= 1)",
            100.0 * rel[0],
            100.0 * rel[1],
            local.relative.iter().map(|r| format!("{r:.1e}")).collect::<Vec<_>>(),
            local.order
        ),
    )
}

fn nonexistence() -> Result<Verdict> {
    // p = (n+2)/(n-2) with lambda < 0 is left out: there the two statements differ
    let tuples: [(usize, f64, f64); 20] = [
        (3, 1.0, -1.0),
        (3, 1.0, 0.0),
        (3, 1.0, 2.0),
        (3, 2.0, -1.0),
        (3, 2.0, 1.0),
        (3, 3.5, -0.5),
        (3, 4.9, 3.0),
        (3, 5.0, 7.0),
        (3, 5.0, 0.0),
        (3, 6.0, 1.0),
        (3, 6.0, -2.0),
        (4, 1.0, -3.0),
        (4, 2.5, 1.0),
        (4, 3.0, 2.0),
        (4, 4.0, -1.0),
        (5, 1.5, -1.0),
        (5, 2.0, 0.5),
        (5, 7.0 / 3.0, 4.0),
        (5, 3.0, -1.0),
        (6, 1.2, 0.0),
    ];
    let mut mismatches = Vec::new();
    for &(n, p, l) in &tuples {
        let v = nonexistence_criterion(n, p, l)?;
        if v.criterion != v.corollary {
            mismatches.push((n, p, l));
        }
    }
    let s_hl = hls_constant_estimate(3, 1.0, 48)?.value;
    let problem = Problem::new(ball(3, 48, 1.0, 0.8)?, 0.5, 1.0)?;
    let regime = nonexistence_criterion(3, 2.0, -1.0)?.criterion;
    let rep = mountain_pass_solve(&problem, -1.0, 2.0, s_hl, MountainPassOptions::default())?;
    verdict(
        mismatches.is_empty() && regime && rep.trivial_collapse,
        format!(
            "truth table mismatches {mismatches:?} on 20 tuples; lambda = -1: criterion {regime}, collapse {} (max {:.2e}, concentration {:.2e})",
            rep.trivial_collapse, rep.max_abs, rep.concentration
        ),
    )
}

fn cutoff_orders() -> Result<Verdict> {
    let mask = ball(3, 96, 1.0, 0.9)?;
    let h = mask.grid().spacing();
    let delta_c = 0.45;
    let strict_eps: Vec<f64> = (0..6).map(|i| 4.0 * h * (delta_c / (16.0 * h)).powf(i as f64 / 5.0)).collect();
    let mut parts = Vec::new();
    let mut pass = true;
    for s in [0.5, 0.9] {
        match cutoff_bubble_asymptotics(mask.clone(), s, 2.0, &strict_eps, delta_c, true) {
            Ok(a) => {
                let ok = a.energy_fit.hits(0.15) && a.seminorm_fit.hits(0.15) && a.power_fit.hits(0.15);
                pass &= ok;
                parts.push(format!(
                    "s={s}: slopes {:.3}/{:.3}/{:.3} vs {:.1}/{:.1}/{:.1}",
                    a.energy_fit.slope, a.seminorm_fit.slope, a.power_fit.slope, a.energy_fit.target, a.seminorm_fit.target, a.power_fit.target
                ));
            }
            Err(e) => {
                pass = false;
                // diagnostics over a decade that ignores the range conditions
                let eps: Vec<f64> = (0..6).map(|i| 0.03 * 10f64.powf(i as f64 / 5.0)).collect();
                let d = cutoff_bubble_asymptotics(mask.clone(), s, 2.0, &eps, delta_c, false)?;
                parts.push(format!(
                    "s={s}: {e}; diagnostic slopes {:.3}/{:.3}/{:.3} vs {:.1}/{:.1}/{:.1} (R^2 {:.3}/{:.3}/{:.3})",
                    d.energy_fit.slope,
                    d.seminorm_fit.slope,
                    d.power_fit.slope,
                    d.energy_fit.target,
                    d.seminorm_fit.target,
                    d.power_fit.target,
                    d.energy_fit.r_squared,
                    d.seminorm_fit.r_squared,
                    d.power_fit.r_squared
                ));
            }
        }
    }
    verdict(pass, parts.join("; ") + " (tol 15%, R^2 >= 0.98)")
}

type Check = fn() -> Result<Verdict>;

const CRITERIA: [(u32, &str, u64, Check); 10] = [
    (1, "oracle equivalence", 10, oracle_equivalence),
    (2, "gradient fidelity", 30, gradient_fidelity),
    (3, "scaling mechanism", 300, scaling_mechanism),
    (4, "bubble limit", 600, bubble_limit),
    (5, "eigenvalue structure", 300, eigenvalue_structure),
    (6, "quotient profile", 1800, quotient_profile),
    (7, "mountain-pass existence", 1800, mountain_pass),
    (8, "pohozaev identity", 1800, pohozaev),
    (9, "nonexistence regime", 600, nonexistence),
    (10, "cut-off bubble orders", 1200, cutoff_orders),
];

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let listing = std::env::args().any(|a| a == "--list");
    let mut failed = 0;
    for (id, name, budget, check) in CRITERIA {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        if listing {
            println!("criterion_{id}: test");
            continue;
        }
        let started = Instant::now();
        let outcome = check();
        let elapsed = started.elapsed();
        let in_budget = elapsed <= Duration::from_secs(budget);
        let (pass, detail) = match outcome {
            Ok(v) if in_budget => (v.pass, v.detail),
            Ok(v) => (false, format!("over budget; {}", v.detail)),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {id:>2} {:<24} {}  [{:.1} s / {budget} s]  {detail}",
            name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

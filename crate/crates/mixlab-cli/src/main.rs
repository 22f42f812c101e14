//! `mixlab`: run one experiment from a TOML config and write
//! `<outdir>/<name>/{manifest.json, result.csv, report.json}`.
//!
//! Exit status: 0 when every assertion of the experiment holds, 1 when one
//! fails or a solver gives up, 2 for invalid input.

mod report;
mod run;

use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use mixlab::config::RunConfig;
use mixlab::Error;

use report::{write_json, GridInfo, Manifest};
use run::{Ctx, Outcome};

#[derive(Parser, Debug)]
#[command(name = "mixlab", version, about = "Experiments for mixed local/nonlocal Choquard problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root directory for run artifacts [default: config outdir, else ./runs].
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,

    /// Seed for every random draw of the run [default: config seed].
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Upper bound on worker threads.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..=256))]
    jobs: u64,

    /// Replace grid.m of the config before validation.
    #[arg(long, global = true)]
    m_override: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// First eigenvalues of the local, fractional and mixed forms.
    Eig,
    /// S(lambda) over a lambda grid and the detected lambda*.
    QuotientScan,
    /// Mountain-pass solve with the level against the compactness threshold.
    MountainPass,
    /// Pohozaev identity terms under refinement.
    Pohozaev,
    /// Quotient split of rescaled bumps u_k.
    Scaling,
    /// G(V_t)^2 as the bubble concentrates.
    BubbleLimit,
    /// Order fits for cut-off bubbles.
    #[command(name = "lemma45", alias = "cutoff-orders")]
    Lemma45,
    /// Extrapolated HLS-type constants.
    HlsConstant,
    /// Brute-force oracle comparisons.
    Oracles,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Eig => "eig",
            Command::QuotientScan => "quotient-scan",
            Command::MountainPass => "mountain-pass",
            Command::Pohozaev => "pohozaev",
            Command::Scaling => "scaling",
            Command::BubbleLimit => "bubble-limit",
            Command::Lemma45 => "lemma45",
            Command::HlsConstant => "hls-constant",
            Command::Oracles => "oracles",
        }
    }
}

fn is_input_error(e: &Error) -> bool {
    matches!(e, Error::Param(_) | Error::Domain(_) | Error::Config(_) | Error::Resolution(_))
}

fn load(cli: &Cli) -> Result<Option<RunConfig>, String> {
    let Some(path) = &cli.config else { return Ok(None) };
    let src = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    RunConfig::parse(&src, cli.m_override).map(Some).map_err(|e| format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    if cfg.is_none() && cli.command != Command::Oracles {
        eprintln!("error: {} needs --config", cli.command.name());
        return ExitCode::from(2);
    }
    let seed = cli.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
    let ctx = Ctx { cfg: cfg.as_ref(), seed, jobs: cli.jobs as usize };
    let started = Instant::now();
    let result = match cli.command {
        Command::Eig => run::eig(&ctx),
        Command::QuotientScan => run::quotient_scan(&ctx),
        Command::MountainPass => run::mountain_pass(&ctx),
        Command::Pohozaev => run::pohozaev(&ctx),
        Command::Scaling => run::scaling(&ctx),
        Command::BubbleLimit => run::bubble_limit(&ctx),
        Command::Lemma45 => run::lemma45(&ctx),
        Command::HlsConstant => run::hls_constant(&ctx),
        Command::Oracles => run::oracles(&ctx),
    };
    let outcome: Outcome = match result {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if is_input_error(&e) { 2 } else { 1 });
        }
    };
    let wall = started.elapsed().as_secs_f64();
    let name = cfg.as_ref().map_or(cli.command.name(), |c| c.name.as_str());
    let root = cli.outdir.clone().or_else(|| cfg.as_ref().and_then(|c| c.outdir.clone())).unwrap_or_else(|| PathBuf::from("runs"));
    let dir = root.join(name);
    let grid = cfg.as_ref().map(|c| GridInfo {
        n: c.problem.n,
        half_width: c.grid.half_width,
        m: c.grid.m,
        h: 2.0 * c.grid.half_width / c.grid.m as f64,
    });
    let manifest = Manifest {
        name,
        subcommand: cli.command.name(),
        version: env!("CARGO_PKG_VERSION"),
        git_describe: env!("MIXLAB_GIT_DESCRIBE"),
        seed,
        jobs: ctx.jobs,
        m_override: cli.m_override,
        config: cfg.as_ref(),
        grid,
        tolerances: outcome.tolerances.clone(),
        wall_time_s: wall,
        passed: outcome.failures.is_empty(),
        failures: &outcome.failures,
    };
    let written = std::fs::create_dir_all(&dir)
        .and_then(|_| write_json(&dir.join("manifest.json"), &manifest))
        .and_then(|_| outcome.table.write(&dir.join("result.csv")))
        .and_then(|_| write_json(&dir.join("report.json"), &outcome.report));
    if let Err(e) = written {
        eprintln!("error: writing {}: {e}", dir.display());
        return ExitCode::from(1);
    }
    if outcome.failures.is_empty() {
        println!("{}: ok ({wall:.1} s) -> {}", cli.command.name(), dir.display());
        ExitCode::SUCCESS
    } else {
        for f in &outcome.failures {
            eprintln!("FAILED: {f}");
        }
        ExitCode::from(1)
    }
}

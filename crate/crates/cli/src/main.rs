//! `gne`: validate step sizes, run the solvers and sweep parameters from a
//! JSON experiment document.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use edgegne::config::{Config, Instance};
use edgegne::experiment::{execute, execute_logged, summarize, sweep, write_csv, Mode, Outcome, Vary};
use edgegne::operators::{assemble_matrices, check_pd_certificate};
use edgegne::stepsizes::validate;
use edgegne::GneError;
use serde_json::json;

#[derive(Parser)]
#[command(name = "gne", version, about = "Distributed GNE seeking: validation, runs and sweeps")]
struct Cli {
    /// Default directory for outputs when no explicit path is given.
    #[arg(long, global = true, env = "GNE_OUT_DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Check step sizes against the admissibility bounds and print the certificate.
    Validate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run one solver and write its record as CSV.
    Run {
        config: PathBuf,
        #[arg(long, value_enum, default_value = "sync")]
        mode: ModeArg,
        /// Seeds the instance generator and the scheduler.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run even if the step sizes fail validation.
        #[arg(long)]
        force: bool,
        /// Line-delimited JSON of every asynchronous activation (k, player, delays, hidden set).
        #[arg(long)]
        debug_log: Option<PathBuf>,
    },
    /// Run every (value, seed) pair and summarize iterations to threshold.
    Sweep {
        config: PathBuf,
        #[arg(long, value_enum)]
        vary: VaryArg,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, value_enum, default_value = "async")]
        mode: ModeArg,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-3)]
        threshold: f64,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        force: bool,
    },
    /// Print a self-contained config with the generated game, graph and step sizes.
    Export {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sync,
    Async,
    SyncFb,
    AsyncFb,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Sync => Mode::Sync,
            ModeArg::Async => Mode::Async,
            ModeArg::SyncFb => Mode::SyncFb,
            ModeArg::AsyncFb => Mode::AsyncFb,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VaryArg {
    Eps,
    Pmin,
}

enum Failure {
    Validation(String),
    Config(String),
    NotConverged(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 1,
            Failure::Config(_) => 2,
            Failure::NotConverged(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Validation(m) | Failure::Config(m) | Failure::NotConverged(m) => m,
        }
    }
}

impl From<GneError> for Failure {
    fn from(e: GneError) -> Self {
        Failure::Config(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Config(format!("{}: {e}", path.display()))
}

fn load(path: &Path, seed: Option<u64>) -> Result<Config, Failure> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let cfg = Config::from_json(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    Ok(match seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

fn default_path(out_dir: &Option<PathBuf>, name: String) -> PathBuf {
    out_dir.clone().unwrap_or_else(|| PathBuf::from(".")).join(name)
}

fn create_parent(path: &Path) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    Ok(())
}

fn cmd_validate(config: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let inst = load(config, seed)?.resolve()?;
    let report = validate(&inst.steps, &inst.game, &inst.graph, &inst.consts)?;
    println!("mu = {:.6e}, L_F = {:.6e}", inst.consts.mu, inst.consts.l_f);
    println!("{report}");
    let cert = match assemble_matrices(&inst.game, &inst.graph, &inst.steps, &inst.consts) {
        Ok(mats) => Some(check_pd_certificate(&mats)),
        Err(GneError::TooLarge { rows, limit }) => {
            println!("certificate skipped: {rows} rows exceed the dense limit {limit}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(c) = cert {
        println!("certificate lambda_min = {c:.6e} {}", if c > 0.0 { "ok" } else { "FAIL" });
    }
    let failed: Vec<String> = report
        .players
        .iter()
        .filter(|p| !p.sigma_ok || !p.tau_ok)
        .map(|p| format!("player {}", p.player))
        .collect();
    if !failed.is_empty() {
        return Err(Failure::Validation(format!("step sizes inadmissible for {}", failed.join(", "))));
    }
    if !report.beta_ok() {
        return Err(Failure::Validation(format!("beta = {:.3e} is not positive", report.beta)));
    }
    if cert.is_some_and(|c| c <= 0.0) {
        return Err(Failure::Validation("certificate is not positive".into()));
    }
    Ok(())
}

fn summary_json(o: &Outcome, seed: u64) -> serde_json::Value {
    let last = o.record.last();
    json!({
        "mode": o.mode.name(),
        "seed": seed,
        "converged": o.record.converged,
        "iterations": o.record.iterations,
        "validated": o.record.validated,
        "flags": o.record.flags,
        "final": last,
        "step_report": o.report,
        "oracle": o.oracle.as_ref().map(|r| json!({
            "x_star": r.reference.x_star(),
            "u_g": r.reference.u_g,
            "u_spread": r.reference.u_spread,
            "extragradient_agreement": r.agreement,
        })),
        "oracle_error": o.oracle_error,
    })
}

fn write_outputs(path: &Path, o: &Outcome, seed: u64) -> Result<(), Failure> {
    create_parent(path)?;
    let file = fs::File::create(path).map_err(io_err(path))?;
    write_csv(std::io::BufWriter::new(file), &o.report.to_string(), &o.record).map_err(io_err(path))?;
    let summary = path.with_extension("summary.json");
    let text = serde_json::to_string_pretty(&summary_json(o, seed)).expect("summary serializes");
    fs::write(&summary, text + "\n").map_err(io_err(&summary))
}

fn check_admissible(inst: &Instance, mode: Mode, force: bool) -> Result<(), Failure> {
    let report = validate(&inst.steps, &inst.game, &inst.graph, &inst.consts)?;
    if !mode.admits(&report) && !force {
        return Err(Failure::Validation(format!(
            "{report}\nstep sizes fail validation for mode {}; pass --force to run anyway",
            mode.name()
        )));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    out_dir: &Option<PathBuf>,
    config: &Path,
    mode: Mode,
    seed: Option<u64>,
    out: Option<PathBuf>,
    force: bool,
    debug_log: Option<PathBuf>,
) -> Result<(), Failure> {
    let cfg = load(config, seed)?;
    let seed = cfg.scheduler.seed;
    let inst = cfg.resolve()?;
    check_admissible(&inst, mode, force)?;
    let outcome = if debug_log.is_some() { execute_logged(&inst, mode, true)? } else { execute(&inst, mode, true)? };
    let path = out.unwrap_or_else(|| default_path(out_dir, format!("run-{}-seed{seed}.csv", mode.name())));
    write_outputs(&path, &outcome, seed)?;
    if let (Some(p), Some(log)) = (&debug_log, &outcome.read_checks) {
        create_parent(p)?;
        let mut f = std::io::BufWriter::new(fs::File::create(p).map_err(io_err(p))?);
        for e in log {
            writeln!(f, "{}", serde_json::to_string(e).expect("entry serializes")).map_err(io_err(p))?;
        }
        f.flush().map_err(io_err(p))?;
    }
    for flag in &outcome.record.flags {
        println!("note: {flag}");
    }
    if let Some(r) = outcome.record.last() {
        let f = |v: Option<f64>| v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "n/a".into());
        println!("k = {}, primal = {}, dual = {}", r.k, f(r.primal_res), f(r.dual_res));
    }
    println!("record written to {}", path.display());
    if !outcome.record.converged {
        return Err(Failure::NotConverged(format!("no convergence within {} iterations", inst.stop.max_iter)));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    out_dir: &Option<PathBuf>,
    config: &Path,
    vary: Vary,
    values: &[f64],
    seeds: u64,
    mode: Mode,
    out: Option<PathBuf>,
    threshold: f64,
    threads: Option<usize>,
    force: bool,
) -> Result<(), Failure> {
    let cfg = load(config, None)?;
    let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let cells = sweep(&cfg, vary, values, seeds, mode, force, threads)?;
    let dir = out.unwrap_or_else(|| default_path(out_dir, format!("sweep-{}", vary.name())));
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut failure = None;
    for c in &cells {
        match &c.outcome {
            Ok(o) => {
                let path = dir.join(format!("{}-{}-seed{}.csv", vary.name(), c.value, c.seed));
                write_outputs(&path, o, c.seed)?;
                if !o.record.converged && failure.is_none() {
                    failure = Some(Failure::NotConverged(format!("{} = {} seed {} did not converge", vary.name(), c.value, c.seed)));
                }
            }
            Err(e @ GneError::StepSize(_)) => {
                return Err(Failure::Validation(format!("{} = {} seed {}: {e}", vary.name(), c.value, c.seed)))
            }
            Err(e) => return Err(Failure::Config(format!("{} = {} seed {}: {e}", vary.name(), c.value, c.seed))),
        }
    }
    let summary = summarize(&cells, threshold);
    let path = dir.join("summary.csv");
    let mut text = String::from("value,runs,reached,median_iterations\n");
    println!("{:>10} {:>6} {:>8} {:>18}", vary.name(), "runs", "reached", "median iterations");
    for s in &summary {
        let med = s.median_iterations.map(|m| m.to_string()).unwrap_or_default();
        text += &format!("{},{},{},{}\n", s.value, s.runs, s.reached, med);
        println!("{:>10} {:>6} {:>8} {:>18}", s.value, s.runs, s.reached, med);
    }
    fs::write(&path, text).map_err(io_err(&path))?;
    println!("summary written to {}", path.display());
    failure.map_or(Ok(()), Err)
}

fn cmd_export(config: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<(), Failure> {
    let inst = load(config, seed)?.resolve()?;
    let text = inst.to_explicit_config()?.to_json() + "\n";
    match out {
        Some(p) => {
            create_parent(&p)?;
            fs::write(&p, text).map_err(io_err(&p))
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Validate { config, seed } => cmd_validate(&config, seed),
        Cmd::Run { config, mode, seed, out, force, debug_log } => {
            cmd_run(&cli.out_dir, &config, mode.into(), seed, out, force, debug_log)
        }
        Cmd::Sweep { config, vary, values, seeds, mode, out, threshold, threads, force } => {
            let vary = match vary {
                VaryArg::Eps => Vary::Eps,
                VaryArg::Pmin => Vary::Pmin,
            };
            cmd_sweep(&cli.out_dir, &config, vary, &values, seeds, mode.into(), out, threshold, threads, force)
        }
        Cmd::Export { config, seed, out } => cmd_export(&config, seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

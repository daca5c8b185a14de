//! `wlab`: run one configured experiment, or summarise a directory of
//! reports.
//!
//! Exit status: 0 when every verdict passes, 1 on any failure (or error),
//! 2 when two independent routes to the same quantity disagree.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use wlab::harness::{exit_code, run, Experiment, ExperimentConfig, Status, Verdict};

#[derive(Parser, Debug)]
#[command(name = "wlab", version, about = "Weighted heat-semigroup and fractional-integration experiments on finite lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory for the JSON report, CSV tables and exported operators.
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Extra halvings of the grid spacing on top of the config's ladder.
    #[arg(long, value_name = "K", default_value_t = 0)]
    refine: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Class constants of power weights against the closed-form criteria.
    Weights(RunArgs),
    /// Operator checks; also exports every rung as MatrixMarket files.
    Assemble(RunArgs),
    /// Semigroup decay slopes.
    Scaling(RunArgs),
    /// Strong and weak-endpoint fractional integration ratios.
    Hls(RunArgs),
    /// Lorentz refinements and exact norm identities.
    Lorentz(RunArgs),
    /// Blow-up outside the reverse-Hölder window.
    Sharpness(RunArgs),
    /// Bounded multipliers and the Calderón oracle.
    Calculus(RunArgs),
    /// Real variable coefficients.
    Coeff(RunArgs),
    /// Comparison with the weighted Riesz sum.
    Riesz(RunArgs),
    /// Gaussian envelopes of the heat kernel.
    Gaussian(RunArgs),
    /// Summarise the JSON reports in a directory.
    Report {
        /// Directory holding `<id>.json` reports.
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // usage errors must not look like an oracle breach
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cmd: Command) -> wlab::Result<i32> {
    let (exp, args) = match cmd {
        Command::Weights(a) => (Experiment::Weights, a),
        Command::Assemble(a) => (Experiment::Assemble, a),
        Command::Scaling(a) => (Experiment::Scaling, a),
        Command::Hls(a) => (Experiment::Hls, a),
        Command::Lorentz(a) => (Experiment::Lorentz, a),
        Command::Sharpness(a) => (Experiment::Sharpness, a),
        Command::Calculus(a) => (Experiment::Calculus, a),
        Command::Coeff(a) => (Experiment::Coeff, a),
        Command::Riesz(a) => (Experiment::Riesz, a),
        Command::Gaussian(a) => (Experiment::Gaussian, a),
        Command::Report { out } => return summarise(&out),
    };
    run_one(exp, &args)
}

fn run_one(exp: Experiment, args: &RunArgs) -> wlab::Result<i32> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(own) = cfg.experiment {
        if own != exp {
            return Err(wlab::Error::Config(format!(
                "{} is a {} config, not {}",
                args.config.display(),
                own.name(),
                exp.name()
            )));
        }
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.ladder.refinements += args.refine;
    cfg.sharpness.halvings += args.refine;

    let report = run(&cfg, Some(exp))?;
    let mut files = report.write(&args.out)?;
    if exp == Experiment::Assemble || cfg.export_operators {
        files.extend(export_operators(&cfg, &args.out)?);
    }
    print!("{}", report.summary());
    for f in &files {
        println!("  wrote  {}", f.display());
    }
    Ok(report.exit_code())
}

/// `<id>.X<extent>_N<points>.stiffness.mtx` and `.mass.mtx` per rung.
fn export_operators(cfg: &ExperimentConfig, dir: &Path) -> wlab::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for spec in cfg.ladder_specs() {
        let op = spec.assemble()?;
        let stem = format!("{}.X{}_N{}", cfg.id, spec.extent, spec.points);
        let s = dir.join(format!("{stem}.stiffness.mtx"));
        let m = dir.join(format!("{stem}.mass.mtx"));
        op.export_matrix_market(&s)?;
        op.export_mass_matrix_market(&m)?;
        out.push(s);
        out.push(m);
    }
    Ok(out)
}

/// The parts of a report that `report` needs; the rest of the file (config
/// echo, tables) is not read back.
#[derive(Deserialize)]
struct Brief {
    id: String,
    experiment: String,
    verdicts: Vec<Verdict>,
    #[serde(default)]
    wall_clock_s: f64,
}

fn summarise(dir: &Path) -> wlab::Result<i32> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    let mut reports: Vec<Brief> = Vec::new();
    for p in &paths {
        let text = std::fs::read_to_string(p)?;
        match serde_json::from_str(&text) {
            Ok(r) => reports.push(r),
            Err(e) => eprintln!("skipping {}: {e}", p.display()),
        }
    }
    if reports.is_empty() {
        return Err(wlab::Error::Config(format!("no reports in {}", dir.display())));
    }
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    w.write_record(["id", "experiment", "check", "status", "detail"])?;
    for r in &reports {
        let tag = match exit_code(r.verdicts.iter().map(|v| v.status)) {
            0 => "PASS",
            1 => "FAIL",
            _ => "BREACH",
        };
        println!("{tag:6} {:24} {:10} {:.1} s", r.id, r.experiment, r.wall_clock_s);
        for v in &r.verdicts {
            if v.status != Status::Pass {
                println!("         {}: {}", v.check, v.detail);
            }
            let status = match v.status {
                Status::Pass => "pass",
                Status::Fail => "fail",
                Status::OracleBreach => "oracle_breach",
            };
            w.write_record([r.id.as_str(), r.experiment.as_str(), v.check.as_str(), status, v.detail.as_str()])?;
        }
    }
    w.flush()?;
    Ok(exit_code(reports.iter().flat_map(|r| r.verdicts.iter().map(|v| v.status))))
}

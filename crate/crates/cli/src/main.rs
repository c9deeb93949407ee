//! `distgeo`: run distributional-geometry experiments from TOML configs.
//!
//! Exit codes: 0 when every expectation passes, 1 when a numerical check
//! fails (report paths are printed), 2 for configuration or usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use distgeo_cli::config::{self, Overrides};
use distgeo_cli::record::{write_json, write_record, OutputFormat, RunRecord};
use distgeo_cli::{allowed_kinds, load_suite_members, resolve_out_dir, run_single, run_suite};

#[derive(Parser)]
#[command(
    name = "distgeo",
    version,
    about = "Numerical experiments in nonlinear distributional geometry"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    config: PathBuf,
    /// Output directory (overrides the config and DISTGEO_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Report format: json, csv, or both (default).
    #[arg(long)]
    format: Option<String>,
    /// Override the coarsest smoothing scale.
    #[arg(long)]
    eps0: Option<f64>,
    /// Override the scale ratio between levels.
    #[arg(long)]
    ratio: Option<f64>,
    /// Override the number of scale levels.
    #[arg(long)]
    levels: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Dump smoothed representatives of an embedded field over a grid;
    /// also runs consistency and exponent scaling configs.
    Embed(RunArgs),
    /// Dump pointwise curvature of a regularized metric over a grid.
    Curvature(RunArgs),
    /// Pair a field against test densities and extrapolate the limit;
    /// also runs delta-net convergence configs.
    Associate(RunArgs),
    /// Cone curvature: delta-mass limit and decay regimes.
    Cone(RunArgs),
    /// Curvature compatibility with classical results.
    Compat(RunArgs),
    /// Commutation of the Lie derivative with the embeddings.
    Commute(RunArgs),
    /// Run a list of member configs and write a roll-up report.
    Suite(RunArgs),
}

impl Command {
    fn split(&self) -> (&'static str, &RunArgs) {
        match self {
            Command::Embed(a) => ("embed", a),
            Command::Curvature(a) => ("curvature", a),
            Command::Associate(a) => ("associate", a),
            Command::Cone(a) => ("cone", a),
            Command::Compat(a) => ("compat", a),
            Command::Commute(a) => ("commute", a),
            Command::Suite(a) => ("suite", a),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (subcommand, args) = cli.command.split();
    match run(subcommand, args) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn config_error(err: &config::ConfigError) -> ExitCode {
    eprintln!("config error: {err}");
    ExitCode::from(2)
}

fn run(subcommand: &'static str, args: &RunArgs) -> anyhow::Result<ExitCode> {
    let overrides = Overrides {
        eps0: args.eps0,
        ratio: args.ratio,
        levels: args.levels,
    };
    let loaded = match config::load(&args.config, &overrides) {
        Ok(l) => l,
        Err(e) => return Ok(config_error(&e)),
    };
    let kind = loaded.config.experiment.kind;
    if !allowed_kinds(subcommand).contains(&kind) {
        eprintln!(
            "config error: field `experiment.kind` is `{}`; run it with the matching subcommand",
            kind.name()
        );
        return Ok(ExitCode::from(2));
    }
    let format = match OutputFormat::parse(
        args.format
            .as_deref()
            .or(loaded.config.output.format.as_deref()),
    ) {
        Ok(f) => f,
        Err(msg) => {
            eprintln!("config error: {msg}");
            return Ok(ExitCode::from(2));
        }
    };
    let out_dir = resolve_out_dir(args.out.as_deref(), loaded.config.output.dir.as_deref());
    std::fs::create_dir_all(&out_dir)?;

    if kind == config::ExperimentKind::Suite {
        let members = match load_suite_members(&loaded, &overrides) {
            Ok(m) => m,
            Err(e) => return Ok(config_error(&e)),
        };
        let (suite, records) = run_suite(&loaded, &members)?;
        let mut paths = Vec::new();
        for record in &records {
            paths.extend(write_record(&out_dir, record, format)?);
            print_record(record);
        }
        let suite_path = out_dir.join(format!("{}.json", suite.label));
        write_json(&suite_path, &suite)?;
        paths.push(suite_path);
        println!(
            "suite `{}`: {}/{} members passed",
            suite.label,
            suite.members.iter().filter(|m| m.pass).count(),
            suite.members.len()
        );
        if suite.pass {
            println!("ok: reports in {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        } else {
            report_failure(&paths);
            Ok(ExitCode::from(1))
        }
    } else {
        let record = run_single(&loaded.config, &loaded.hash)?;
        let paths = write_record(&out_dir, &record, format)?;
        print_record(&record);
        if record.pass {
            println!("ok: reports in {}", out_dir.display());
            Ok(ExitCode::SUCCESS)
        } else {
            report_failure(&paths);
            Ok(ExitCode::from(1))
        }
    }
}

fn print_record(record: &RunRecord) {
    println!(
        "== {} `{}` ({:.1}s, config {})",
        record.experiment,
        record.label,
        record.wall_secs,
        &record.config_hash[..12.min(record.config_hash.len())]
    );
    for e in &record.expectations {
        let status = if e.pass { "pass" } else { "FAIL" };
        match (e.observed, e.target) {
            (Some(obs), Some(t)) => {
                println!("  {status} {}: {obs:.6e} vs {t:.6e} — {}", e.name, e.note)
            }
            (Some(obs), None) => println!("  {status} {}: {obs:.6e} — {}", e.name, e.note),
            _ => println!("  {status} {}: {}", e.name, e.note),
        }
    }
    for w in &record.warnings {
        println!("  note: {w}");
    }
}

fn report_failure(paths: &[PathBuf]) {
    eprintln!("numerical checks failed; reports:");
    for p in paths {
        eprintln!("  {}", p.display());
    }
}

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use netmanip::altmin::{constants, reference_optimum, run, Scenario, Scheme};
use netmanip::cli::{
    exit_code, parse_scenario, read_reference, verify, write_reference, write_trace, CheckStatus, Report,
    TraceFormat, VerifyOptions, EXIT_BOUND_VIOLATION,
};
use netmanip::{par, Error, Result};

#[derive(Parser)]
#[command(name = "netmanip", version, about = "Alternating minimization for network manipulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the exact or inexact scheme and print a JSON report.
    Run(RunArgs),
    /// Print the convergence constants and the stability verdict.
    Constants(ScenarioArg),
    /// Run the invariant checks on a scenario.
    Verify(VerifyArgs),
    /// Compute a high-accuracy optimum and write it as JSON.
    Reference {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct ScenarioArg {
    #[arg(long)]
    scenario: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long, conflicts_with = "inexact")]
    exact: bool,
    /// Use the scenario's delta1/delta2 (the default).
    #[arg(long)]
    inexact: bool,
    /// Where to write the per-iteration trace.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    /// Precomputed optimum; computed on the fly for stable scenarios if absent.
    #[arg(long)]
    ref_optimum: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 300)]
    pairs: usize,
    #[arg(long, default_value_t = 200_000)]
    draws: usize,
}

fn cmd_run(args: &RunArgs, s: &Scenario) -> Result<i32> {
    let scheme = if args.exact { Scheme::Exact } else { Scheme::Inexact };
    let started = Instant::now();
    let reference = match &args.ref_optimum {
        Some(p) => Some(read_reference(s, p)?),
        None => match constants(s) {
            Ok(c) if c.stable => {
                info!("computing reference optimum");
                Some(reference_optimum(s)?)
            }
            _ => None,
        },
    };
    let trace = run(s, scheme, reference.as_ref())?;
    let report = Report::new(&trace, started.elapsed().as_secs_f64());
    if let Some(path) = &args.out {
        let format = match args.format {
            Format::Csv => TraceFormat::Csv,
            Format::Json => TraceFormat::Json,
        };
        write_trace(&trace, format, BufWriter::new(File::create(path)?))?;
    }
    println!("{}", report.to_json());
    if report.bound_violations.unwrap_or(0) > 0 {
        warn!("{} bound violations", report.bound_violations.unwrap_or(0));
        return Ok(EXIT_BOUND_VIOLATION);
    }
    Ok(0)
}

fn cmd_constants(s: &Scenario) -> Result<i32> {
    let c = constants(s)?;
    let kappa = s.network.condition_number()?;
    println!("sigma1 = {}", c.sigma1);
    println!("sigma2 = {}", c.sigma2);
    println!("L1     = {}", c.l1);
    println!("L2     = {}", c.l2);
    println!("lambda = {}", c.lambda);
    println!("kappa  = {kappa}");
    println!("{}", if c.stable { "stable" } else { "unstable" });
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs, s: &Scenario) -> Result<i32> {
    let opts = VerifyOptions {
        pairs: args.pairs,
        draws: args.draws,
        ..VerifyOptions::default()
    };
    let results = verify(s, &opts)?;
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| r.status == CheckStatus::Fail).count();
    println!("{} checks, {failed} failed", results.len());
    Ok(if failed > 0 { EXIT_BOUND_VIOLATION } else { 0 })
}

fn dispatch(cli: &Cli) -> Result<i32> {
    let path = match &cli.command {
        Command::Run(a) => &a.scenario.scenario,
        Command::Constants(a) => &a.scenario,
        Command::Verify(a) => &a.scenario.scenario,
        Command::Reference { scenario, .. } => &scenario.scenario,
    };
    let s = parse_scenario(path)?;
    match &cli.command {
        Command::Run(a) => cmd_run(a, &s),
        Command::Constants(_) => cmd_constants(&s),
        Command::Verify(a) => cmd_verify(a, &s),
        Command::Reference { out, .. } => {
            let r = reference_optimum(&s)?;
            write_reference(&r, out)?;
            info!("{} sweeps, last step {:e}", r.iterations, r.last_step);
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let threads = std::env::var("NETMANIP_THREADS").ok().and_then(|v| v.parse().ok());
    par::init_threads(threads);

    let cli = Cli::parse();
    let code = match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Io(io) = &e {
                if io.kind() == io::ErrorKind::NotFound {
                    eprintln!("(file not found)");
                }
            }
            exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use safebo_core::harness::campaign::{campaign_function, write_outputs, TargetConfig};
use safebo_core::harness::report::{format_summary, read_rows, summarize, write_summary};
use safebo_core::harness::{run_bound_check, run_campaign, BoundCheckConfig, CampaignConfig};
use safebo_core::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(name = "safebo", version, about = "Safe Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a campaign's target functions and write them to text files.
    Generate {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run a campaign and write its CSV outputs.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` in the config.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Summarize one or more per-step CSV files.
    Report {
        #[arg(required = true)]
        steps: Vec<PathBuf>,
        /// Also write the summary table as CSV.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Count datasets where the β = 2 band fails to contain the target.
    BoundCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        functions: usize,
        #[arg(long, default_value_t = 200)]
        datasets: usize,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) => EXIT_CONFIG,
                _ => EXIT_FAILURE,
            })
        }
    }
}

fn dispatch(command: Command) -> safebo_core::Result<u8> {
    match command {
        Command::Generate { config, out } => generate(config, out),
        Command::Run { config, out } => run(config, out),
        Command::Report { steps, out } => report(steps, out),
        Command::BoundCheck {
            seed,
            functions,
            datasets,
            beta,
        } => bound_check(seed, functions, datasets, beta),
    }
}

fn generate(config: PathBuf, out: PathBuf) -> safebo_core::Result<u8> {
    let cfg = CampaignConfig::load(&config)?;
    if matches!(cfg.target, TargetConfig::Files { .. } | TargetConfig::Benchmark { .. }) {
        return Err(Error::Config("generate needs a sampled target (se_onb or pre_rkhs)".into()));
    }
    std::fs::create_dir_all(&out)?;
    for i in 0..cfg.function_count() {
        let path = out.join(format!("{}_f{i:03}.txt", cfg.name));
        campaign_function(&cfg, i)?.save(&path)?;
        println!("{}", path.display());
    }
    Ok(0)
}

fn run(config: PathBuf, out: Option<PathBuf>) -> safebo_core::Result<u8> {
    let cfg = CampaignConfig::load(&config)?;
    let dir = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let result = run_campaign(&cfg)?;
    let paths = write_outputs(&result, &dir, &cfg.name)?;
    for (id, reason) in &result.rejected_functions {
        eprintln!("function {id} rejected: {reason}");
    }
    for r in result.records.iter().filter(|r| r.failure.is_some()) {
        eprintln!(
            "run f{} rep {} (seed {}) failed: {}",
            r.function_id,
            r.rep,
            r.seed,
            r.failure.as_deref().unwrap_or_default()
        );
    }
    print!("{}", format_summary(&result.summary));
    println!("wrote {}", paths.steps.display());

    let violations = result.total_violations();
    let zero_expected = cfg.algorithm.lipschitz_safe() && cfg.noise.bound().is_some_and(|b| b <= cfg.noise_margin());
    if zero_expected && violations > 0 {
        eprintln!("{violations} safety violations where none are expected");
        return Ok(EXIT_VIOLATION);
    }
    Ok(0)
}

fn report(steps: Vec<PathBuf>, out: Option<PathBuf>) -> safebo_core::Result<u8> {
    let mut rows = Vec::new();
    for path in &steps {
        rows.extend(read_rows(path)?);
    }
    let summary = summarize(&rows);
    print!("{}", format_summary(&summary));
    if let Some(out) = out {
        write_summary(&out, &summary)?;
    }
    Ok(0)
}

fn bound_check(seed: u64, functions: usize, datasets: usize, beta: f64) -> safebo_core::Result<u8> {
    if functions == 0 || datasets == 0 || !(beta > 0.0) {
        return Err(Error::Config("functions and datasets must be ≥ 1 and beta positive".into()));
    }
    let cfg = BoundCheckConfig {
        seed,
        functions,
        datasets,
        beta,
        ..BoundCheckConfig::default()
    };
    let r = run_bound_check(&cfg)?;
    println!(
        "violating datasets per function: {:.2} ± {:.2} of {} ({:.2}% overall)",
        r.mean_violations(),
        r.sd_violations(),
        r.datasets,
        100.0 * r.violation_fraction()
    );
    Ok(0)
}

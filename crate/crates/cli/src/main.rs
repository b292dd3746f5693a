use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use qcluster::metrics::summary_table;
use qcluster::workload::{read_schedule_csv, write_schedule_csv, SizeCdf};
use qcluster_cli::{replay, run_cell, run_experiment, schedule, CellManifest, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "qcluster",
    version,
    about = "Queue clustering scheduler experiments",
    after_help = "Environment: QCLUSTER_OUTPUT_DIR and QCLUSTER_PARALLELISM override the config file."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (scheduler, load, seed) cell of an experiment.
    Run {
        config: PathBuf,
        /// Results directory (overrides the config and $QCLUSTER_OUTPUT_DIR).
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Worker threads, 0 for one per core (overrides $QCLUSTER_PARALLELISM).
        #[arg(short, long)]
        jobs: Option<usize>,
        /// Only run cells whose id contains this string.
        #[arg(long)]
        filter: Option<String>,
    },
    /// Re-run a single cell from its manifest.
    Rerun {
        manifest: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Feed a fixed flow schedule to the config's schedulers.
    Replay {
        config: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
        /// Scheduler label to pair every other scheduler against.
        #[arg(long)]
        baseline: Option<String>,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Write the flow schedule a cell would use as CSV.
    ExportSchedule {
        config: PathBuf,
        #[arg(long)]
        load: f64,
        #[arg(long)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// List the builtin flow size distributions.
    Cdfs,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            output,
            jobs,
            filter,
        } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            if let Some(j) = jobs {
                cfg.parallelism = j;
            }
            let outcome = run_experiment(&cfg, filter.as_deref())?;
            let mut rows = Vec::new();
            for c in &outcome.cells {
                match &c.result {
                    Ok(r) => rows.push((c.manifest.cell.clone(), r.clone())),
                    Err(e) => eprintln!("cell {} failed: {e}", c.manifest.cell),
                }
            }
            print!("{}", summary_table(&rows));
            println!("summary: {}", outcome.summary.display());
            Ok(outcome.all_ok())
        }
        Command::Rerun { manifest, output } => {
            let m = CellManifest::read(&manifest)?;
            let report = run_cell(&m, &output)?;
            print!("{}", summary_table(&[(m.cell, report)]));
            Ok(true)
        }
        Command::Replay {
            config,
            schedule,
            baseline,
            output,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let file = File::open(&schedule).with_context(|| format!("opening {}", schedule.display()))?;
            let flows = read_schedule_csv(file).with_context(|| format!("reading {}", schedule.display()))?;
            let reports = replay(&flows, &cfg, baseline.as_deref(), &output)?;
            print!("{}", summary_table(&reports));
            Ok(true)
        }
        Command::ExportSchedule {
            config,
            load,
            seed,
            output,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let flows = schedule(&cfg.workload, &cfg.port, load, seed)?;
            write_schedule_csv(&flows, BufWriter::new(File::create(&output)?))?;
            println!("{} flows -> {}", flows.len(), output.display());
            Ok(true)
        }
        Command::Cdfs => {
            for name in SizeCdf::builtin_names() {
                let cdf = SizeCdf::builtin(name).expect("listed builtin exists");
                println!("{name:<12} mean {:>10.0} B  min {:>6.0} B", cdf.mean(), cdf.min_size());
            }
            Ok(true)
        }
    }
}

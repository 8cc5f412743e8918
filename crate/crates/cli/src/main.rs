use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::Parser;
use surepath::experiment::{analyze_topology, run_experiment, verify, write_analysis, Experiment};

/// Batch driver for the HyperX SurePath simulator.
#[derive(Parser, Debug)]
#[command(name = "surepath", version, about)]
struct Args {
    /// Experiment file with `key = value` lines.
    #[arg(long, value_name = "FILE")]
    experiment: PathBuf,
    /// Graph-only fault sweep (diameter, average distance, connectivity); no simulation.
    #[arg(long, conflicts_with = "verify")]
    analyze: bool,
    /// Directory for the CSV output; defaults to the `output` key as written.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Simulation points run in parallel.
    #[arg(long, default_value_t = default_jobs())]
    jobs: usize,
    /// Only validate the fault sets and check the escape subnetwork for cycles.
    #[arg(long)]
    verify: bool,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(args: Args) -> anyhow::Result<ExitCode> {
    if args.jobs == 0 {
        bail!("--jobs must be positive");
    }
    let exp = Experiment::from_file(&args.experiment)
        .with_context(|| format!("reading {}", args.experiment.display()))?;

    if args.verify {
        let reports = verify(&exp)?;
        for r in &reports {
            println!("{r}");
        }
        let failed = reports.iter().filter(|r| !r.passed()).count();
        return Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE });
    }

    if args.analyze {
        let rows = analyze_topology(&exp, args.jobs)?;
        let path = match &args.out {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                dir.join(exp.output.file_name().unwrap_or("analysis.csv".as_ref()))
            }
            None => exp.output.clone(),
        };
        write_analysis(&rows, std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?)?;
        eprintln!("wrote {} rows to {}", rows.len(), path.display());
        return Ok(ExitCode::SUCCESS);
    }

    let summary = run_experiment(&exp, args.out.as_deref(), args.jobs)?;
    for f in &summary.files {
        eprintln!("wrote {}", f.display());
    }
    if summary.aborted > 0 {
        eprintln!("{} of {} runs aborted", summary.aborted, summary.results.len());
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

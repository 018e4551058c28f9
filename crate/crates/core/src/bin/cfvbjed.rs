use cfvbjed::experiments::{
    figure_preset, overhead_table, run_sweep_with_threads, write_csv, ExperimentConfig, NmseAveraging, SweepResult,
};
use cfvbjed::{Error, SystemConfig};
use clap::{Args, Parser, Subcommand};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

/// Monte-Carlo simulator for VB joint channel estimation and detection in
/// cell-free massive MIMO with quantized fronthaul.
#[derive(Parser)]
#[command(name = "cfvbjed", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sweep described by a TOML file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the setup of one of the published figures.
    Figure {
        /// ser-vs-snr, ser-vs-tp, ser-vs-td, ser-vs-k, ser-vs-l, nmse-vs-snr,
        /// nmse-vs-tp, nmse-vs-td or overhead.
        #[arg(long)]
        name: String,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Trials per grid point (overrides the config).
    #[arg(long)]
    trials: Option<usize>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    /// Output CSV; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock time per row.
    #[arg(long)]
    timing: bool,
    /// NMSE averaging across trials: linear or db.
    #[arg(long)]
    nmse_avg: Option<NmseAveraging>,
}

const FAILURE_LIMIT: f64 = 0.10;

fn open_out(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn apply_overrides(cfg: &mut ExperimentConfig, c: &Common) -> Result<(), Error> {
    if let Some(s) = c.seed {
        cfg.system.master_seed = s;
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    if c.out.is_some() {
        cfg.out.clone_from(&c.out);
    }
    if c.timing {
        cfg.timing = true;
    }
    if let Some(a) = c.nmse_avg {
        cfg.nmse_avg = a;
    }
    cfg.validate()
}

fn run_experiment(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<SweepResult, Error> {
    let methods = cfg.parsed_methods()?;
    let threads = match threads {
        Some(0) => return Err(Error::Config("--threads must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let result = run_sweep_with_threads(&cfg.system, &cfg.sweep, &methods, &cfg.options(), threads)?;
    write_csv(&result.rows, open_out(&cfg.out)?)?;
    Ok(result)
}

fn execute(cli: Cli) -> Result<ExitCode, Error> {
    let (mut cfg, common) = match cli.command {
        Command::Run { config, common } => (ExperimentConfig::from_file(&config)?, common),
        Command::Figure { name, common } if name == "overhead" => {
            let mut w = csv::Writer::from_writer(open_out(&common.out)?);
            for row in overhead_table(&SystemConfig::default()) {
                w.serialize(row)?;
            }
            w.flush()?;
            return Ok(ExitCode::SUCCESS);
        }
        Command::Figure { name, common } => (figure_preset(&name)?, common),
    };
    apply_overrides(&mut cfg, &common)?;
    let result = run_experiment(&cfg, common.threads)?;
    let failures = result.total_failures();
    if failures > 0 {
        eprintln!("{failures} of {} trials failed", result.total_trials());
        for p in &result.points {
            for r in p.trials.iter().flatten().filter_map(|r| r.error.as_ref()).take(5) {
                eprintln!("  {r}");
            }
        }
    }
    if result.failure_fraction() > FAILURE_LIMIT {
        return Ok(ExitCode::from(3));
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(code) => code,
        Err(e @ (Error::Config(_) | Error::InvalidParameter(_))) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lvsmooth::compare::compare;
use lvsmooth::config::{Experiment, ExperimentConfig};
use lvsmooth::manifest;
use lvsmooth::{write_json, HarnessError};

#[derive(Parser)]
#[command(name = "lvsmooth", version, about = "Local volatility calibration experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment (or all of them when none is named).
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the experiment named in the config.
        #[arg(long)]
        experiment: Option<String>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Diff the numeric artifacts of two run directories.
    Compare {
        dir_a: PathBuf,
        dir_b: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Largest absolute difference still reported as a match.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
    },
}

fn init_threads() -> Result<(), HarnessError> {
    let Ok(raw) = std::env::var("LVSMOOTH_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| HarnessError::Usage(format!("LVSMOOTH_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| HarnessError::Usage(format!("cannot size thread pool: {e}")))
}

fn run(cli: Cli) -> Result<i32, HarnessError> {
    init_threads()?;
    match cli.command {
        Command::Run {
            config,
            experiment,
            out,
        } => {
            let override_exp = experiment.as_deref().map(str::parse::<Experiment>).transpose()?;
            let cfg = ExperimentConfig::load(&config)?;
            let experiments = match override_exp.or(cfg.experiment) {
                Some(e) => vec![e],
                None => Experiment::ALL.to_vec(),
            };
            for &e in &experiments {
                cfg.validate(e)?;
            }
            let out = out
                .or_else(|| cfg.output_dir.clone())
                .ok_or_else(|| HarnessError::Usage("no output directory: pass --out or set output_dir".into()))?;
            let m = manifest::run(&cfg, &experiments, &out)?;
            for r in &m.experiments {
                for c in &r.checks {
                    let verdict = if c.passed { "PASS" } else { "FAIL" };
                    let value = c.value.map_or("n/a".to_string(), |v| format!("{v:.6e}"));
                    println!("{verdict} {}/{} = {value} (limit {} {:e})", r.experiment, c.name, c.relation.symbol(), c.limit);
                }
            }
            if let Some(e) = &m.error {
                eprintln!("error: {e}");
            }
            println!("status: {:?}", m.status);
            Ok(m.status.exit_code())
        }
        Command::Compare {
            dir_a,
            dir_b,
            report,
            tolerance,
        } => {
            let rep = compare(&dir_a, &dir_b, tolerance)?;
            write_json(&report, &rep)?;
            for f in &rep.files {
                println!("{:?} {}", f.verdict, f.path);
            }
            Ok(rep.exit_code())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

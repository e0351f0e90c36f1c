use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use tube_mpsc::filter::HaltKind;
use tube_mpsc::harness::experiment::{write_baseline_trace, write_json};
use tube_mpsc::harness::{
    design_stage, load_config, run_baseline, run_experiment, validate_design, write_artifacts, DesignFile,
    ExperimentConfig,
};
use tube_mpsc::scenario::{epsilon_for_confidence, scenario_confidence, support_count};
use tube_mpsc::Error;

#[derive(Parser)]
#[command(name = "mpsc", version, about = "Tube-based model predictive safety certification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design the tube ellipsoid from seeded plant measurements.
    Design {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Run the filtered closed loop and write trace, sets, summary and plots.
    Simulate {
        #[arg(short, long)]
        config: PathBuf,
        /// Design file; a fresh design is computed when omitted.
        #[arg(short, long)]
        design: Option<PathBuf>,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Out-of-sample check of a design against fresh mismatch draws.
    Validate {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        design: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
    },
    /// Scenario confidence arithmetic.
    Confidence {
        #[arg(long)]
        ns: usize,
        /// State dimension of the ellipsoid design.
        #[arg(long)]
        dims: usize,
        #[arg(long)]
        target: f64,
    },
    /// Unfiltered run with the learning input saturated to the input constraints.
    Baseline {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_SAFETY: u8 = 3;
const EXIT_SOLVER: u8 = 4;

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config { .. } | Error::Json(_) | Error::Io(_) | Error::Csv(_) | Error::InvalidArgument(_) | Error::Dimension { .. } => {
            EXIT_CONFIG
        }
        Error::SafetyFault(_) | Error::RecursiveFeasibilityLost { .. } => EXIT_SAFETY,
        _ => EXIT_SOLVER,
    }
}

fn config(path: &Path) -> Result<ExperimentConfig, Error> {
    let (cfg, warnings) = load_config(path)?;
    for w in warnings {
        eprintln!("warning: {w}");
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<u8, Error> {
    match cli.command {
        Command::Design { config: path, output } => {
            let cfg = config(&path)?;
            let r = cfg.resolve()?;
            let design = design_stage(&cfg, &r)?;
            write_json(&output, &DesignFile::from(&design))?;
            Ok(0)
        }
        Command::Simulate { config: path, design, output } => {
            let cfg = config(&path)?;
            let design = design.map(|d| DesignFile::load(&d)?.to_design()).transpose()?;
            let out = run_experiment(&cfg, design, path.parent())?;
            let dir = output
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| PathBuf::from("out"));
            write_artifacts(&dir, &out, &cfg.resolve()?.x_set)?;
            print_json(&out.summary)?;
            Ok(match out.summary.halt.as_ref().map(|h| h.kind) {
                None => 0,
                Some(HaltKind::SafetyFault | HaltKind::FeasibilityLost) => EXIT_SAFETY,
                Some(HaltKind::Solver) => EXIT_SOLVER,
            })
        }
        Command::Validate { config: path, design, trials } => {
            let cfg = config(&path)?;
            let design = DesignFile::load(&design)?.to_design()?;
            print_json(&validate_design(&cfg, &design, trials)?)?;
            Ok(0)
        }
        Command::Confidence { ns, dims, target } => {
            let support = support_count(dims);
            let epsilon = epsilon_for_confidence(ns, support, target)?;
            print_json(&serde_json::json!({
                "N_s": ns,
                "n_s": support,
                "target": target,
                "epsilon": epsilon,
                "confidence": scenario_confidence(ns, support, epsilon)?,
            }))?;
            Ok(0)
        }
        Command::Baseline { config: path, output } => {
            let cfg = config(&path)?;
            let (traj, summary) = run_baseline(&cfg, path.parent())?;
            if let Some(dir) = output {
                std::fs::create_dir_all(&dir)?;
                write_baseline_trace(&dir.join("baseline.csv"), &traj)?;
                write_json(&dir.join("baseline.json"), &summary)?;
            }
            print_json(&summary)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

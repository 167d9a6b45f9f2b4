use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use xpinn_core::config::ExperimentConfig;
use xpinn_core::experiment;

/// XPINN solver and benchmark harness for the Buckley-Leverett equation.
#[derive(Parser)]
#[command(name = "xpinn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Frontal saturation, shock speed and a flux table for a mobility ratio.
    AnalyzeFlux {
        #[arg(long, short = 'm')]
        mobility_ratio: f64,
        /// Write the 501-point flux table here.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Exact saturation profile at one time, as CSV.
    OracleProfile {
        #[arg(long, short = 'm')]
        mobility_ratio: f64,
        #[arg(long, short = 't')]
        time: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
        /// Defaults to standard output.
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
    /// Train one model and grade it.
    Train {
        config: PathBuf,
        /// Overrides the configured output directory.
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
    /// Train all methods of the comparison under one budget.
    Compare {
        config: PathBuf,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
        /// Run the methods concurrently.
        #[arg(long)]
        parallel: bool,
    },
    /// Train an XPINN with and without the interface residual.
    AblateInterface {
        config: PathBuf,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
    /// Write the sampled collocation points as CSV.
    ExportPlan {
        config: PathBuf,
        #[arg(long, short = 'o')]
        output: Option<PathBuf>,
    },
}

fn output_dir(config: &ExperimentConfig, flag: Option<PathBuf>) -> PathBuf {
    flag.unwrap_or_else(|| config.outputs.resolved_directory())
}

fn writer(path: Option<&Path>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> xpinn_core::Result<()> {
    match cli.command {
        Command::AnalyzeFlux { mobility_ratio, table } => {
            let out = table.as_deref().map(File::create).transpose()?.map(BufWriter::new);
            let s = experiment::analyze_flux(mobility_ratio, out)?;
            println!("mobility_ratio = {}", s.mobility_ratio);
            println!("s_star = {:.12}", s.s_star);
            println!("sigma = {:.12}", s.sigma);
        }
        Command::OracleProfile { mobility_ratio, time, points, output } => {
            let mut out = writer(output.as_deref())?;
            experiment::oracle_profile(mobility_ratio, time, points, &mut out)?;
            out.flush()?;
        }
        Command::Train { config, output } => {
            let config = ExperimentConfig::load(&config)?;
            let dir = output_dir(&config, output);
            let result = experiment::run_training(&config, Some(&dir))?;
            let h = &result.outcome.history;
            println!("{} finished {} epochs in {:.1} s", result.mode, h.len(), result.outcome.train_seconds);
            println!("min loss per subnet: {:?}", h.min_loss);
            println!("total min loss: {:e} (epoch {})", h.min_total, h.min_total_epoch);
            println!("L1 = {:e}, L2 = {:e}", result.report.l1_abs, result.report.l2_abs);
            println!("artifacts in {}", dir.display());
        }
        Command::Compare { config, output, parallel } => {
            let mut config = ExperimentConfig::load(&config)?;
            if parallel {
                config.compare.get_or_insert_with(Default::default).parallel = true;
            }
            let dir = output_dir(&config, output);
            let report = experiment::compare(&config, Some(&dir))?;
            let mut out = io::stdout().lock();
            report.write_ranking_csv(&mut out)?;
            writeln!(out, "# {}", report.timing_caveat)?;
        }
        Command::AblateInterface { config, output } => {
            let config = ExperimentConfig::load(&config)?;
            let dir = output_dir(&config, output);
            let r = experiment::ablate_interface(&config, Some(&dir))?;
            for (label, s) in [("with interface", &r.with_interface), ("without interface", &r.without_interface)] {
                println!(
                    "{label}: L2 = {:e}, plateau = {:.4}, shock at t = {} estimated {:.4} (exact {:.4})",
                    s.error.l2_abs, s.plateau_at_probe, r.probe_time, s.shock_estimate_at_probe, r.exact_shock_at_probe
                );
            }
        }
        Command::ExportPlan { config, output } => {
            let config = ExperimentConfig::load(&config)?;
            let mut out = writer(output.as_deref())?;
            experiment::export_plan(&config, &mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

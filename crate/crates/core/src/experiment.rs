//! Experiment drivers behind the command-line tool: flux analysis, exact
//! profiles, single training runs, the five-method comparison and the
//! interface ablation.
//!
//! Every driver works in memory and writes artifacts only when given an
//! output directory.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::decomposition::{build_plan, CollocationPlan};
use crate::error::{Error, Result};
use crate::flux::{FluxModel, ShockAnalysis};
use crate::loss::{LossBreakdown, LossProblem, Mode};
use crate::metrics::{self, ErrorReport, PROFILE_TIMES};
use crate::oracle::ExactSolution;
use crate::subnet::SubnetParams;
use crate::trainer::{train, TrainOutcome};

pub const FLUX_TABLE_POINTS: usize = 501;
pub const PROBE_TIME: f64 = 0.5;
const PROBE_POINTS: usize = 200;
const PROFILE_POINTS: usize = 201;
const SHOCK_SCAN_POINTS: usize = 1001;

pub const TIMING_CAVEAT: &str =
    "train_seconds is wall-clock time on the machine that produced this file; compare it only within one file";

#[derive(Clone, Debug, Serialize)]
pub struct FluxSummary {
    pub mobility_ratio: f64,
    pub s_star: f64,
    pub sigma: f64,
}

/// Shock analysis plus, when `out` is given, a table `s,f,df_ds,d2f_ds2` of
/// 501 uniformly spaced saturations.
pub fn analyze_flux<W: Write>(mobility_ratio: f64, out: Option<W>) -> Result<FluxSummary> {
    let model = FluxModel::new(mobility_ratio)?;
    let a = model.welge_analysis()?;
    if let Some(mut out) = out {
        writeln!(out, "s,f,df_ds,d2f_ds2")?;
        for i in 0..FLUX_TABLE_POINTS {
            let s = i as f64 / (FLUX_TABLE_POINTS - 1) as f64;
            writeln!(out, "{},{},{},{}", s, model.flux(s), model.flux_slope(s), model.flux_curvature(s))?;
        }
    }
    Ok(FluxSummary { mobility_ratio, s_star: a.s_star, sigma: a.sigma })
}

/// Exact profile at time `t` on `nx` uniform points of `[0, 1]`.
pub fn oracle_profile<W: Write>(mobility_ratio: f64, t: f64, nx: usize, out: W) -> Result<()> {
    if nx < 2 {
        return Err(Error::InvalidInput("profile needs at least two points".into()));
    }
    let oracle = ExactSolution::new(FluxModel::new(mobility_ratio)?)?;
    let grid: Vec<f64> = (0..nx).map(|i| i as f64 / (nx - 1) as f64).collect();
    oracle.write_profile_csv(out, t, &grid)
}

fn setup(config: &ExperimentConfig) -> Result<(FluxModel, ShockAnalysis, CollocationPlan)> {
    config.validate()?;
    let model = FluxModel::new(config.flux.mobility_ratio)?;
    let analysis = model.welge_analysis()?;
    let s = &config.sampling;
    let plan = build_plan(&analysis, s.counts(), s.band_halfwidth, s.seed)?;
    Ok((model, analysis, plan))
}

pub fn export_plan<W: Write>(config: &ExperimentConfig, out: W) -> Result<CollocationPlan> {
    let (_, _, plan) = setup(config)?;
    plan.write_csv(out)?;
    Ok(plan)
}

/// Points a method trains on; part of the fair-comparison budget.
pub fn training_point_budget(config: &ExperimentConfig) -> Result<usize> {
    let (model, analysis, plan) = setup(config)?;
    Ok(LossProblem::new(&config.variant, model, analysis, &plan).total_points())
}

/// Outcome of one training run with its grading.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub mode: Mode,
    pub analysis: ShockAnalysis,
    pub outcome: TrainOutcome,
    pub report: ErrorReport,
    pub parameter_count: usize,
    pub point_budget: usize,
    pub plateau: f64,
    pub shock_estimate: f64,
}

impl RunResult {
    pub fn summary(&self) -> RunSummary {
        RunSummary {
            mode: self.mode,
            parameter_count: self.parameter_count,
            point_budget: self.point_budget,
            error: self.report.clone(),
            min_loss: self.outcome.history.min_loss.clone(),
            min_total: self.outcome.history.min_total,
            min_total_epoch: self.outcome.history.min_total_epoch,
            final_losses: self.outcome.history.records.last().map(|r| r.breakdowns.clone()).unwrap_or_default(),
            plateau_at_probe: self.plateau,
            shock_estimate_at_probe: self.shock_estimate,
            exact_shock_at_probe: self.analysis.sigma * PROBE_TIME,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub mode: Mode,
    pub parameter_count: usize,
    pub point_budget: usize,
    pub error: ErrorReport,
    pub min_loss: Vec<f64>,
    pub min_total: f64,
    pub min_total_epoch: usize,
    pub final_losses: Vec<LossBreakdown>,
    pub plateau_at_probe: f64,
    pub shock_estimate_at_probe: f64,
    pub exact_shock_at_probe: f64,
}

/// Builds the plan, trains, and grades the final parameters. With an output
/// directory, writes the run artifacts there; a training abort still leaves
/// the metadata and the last good parameters behind.
pub fn run_training(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<RunResult> {
    let (model, analysis, plan) = setup(config)?;
    let train_config = config.train_config();
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        write_metadata(dir, config, &analysis, &plan)?;
        if config.outputs.export_plan {
            plan.write_csv(BufWriter::new(File::create(dir.join("plan.csv"))?))?;
        }
    }

    let outcome = match train(&train_config, &plan, &model, &analysis) {
        Ok(o) => o,
        Err(Error::NonFiniteLoss { epoch, last_good }) => {
            if let Some(dir) = out_dir {
                write_nets(&dir.join("checkpoints"), "last_good", &last_good)?;
            }
            return Err(Error::NonFiniteLoss { epoch, last_good });
        }
        Err(e) => return Err(e),
    };

    let oracle = ExactSolution::new(model)?;
    let mut report = metrics::grade(&outcome.nets, &oracle, config.outputs.grid_nx, config.outputs.grid_nt)?;
    report.train_seconds = Some(outcome.train_seconds);
    let plateau = metrics::post_shock_plateau(&outcome.nets, &analysis, PROBE_TIME, PROBE_POINTS)?;
    let shock_estimate = metrics::shock_location_estimate(&outcome.nets, &analysis, PROBE_TIME, SHOCK_SCAN_POINTS)?;
    let result = RunResult {
        mode: config.variant.mode,
        analysis,
        parameter_count: train_config.total_parameters(),
        point_budget: LossProblem::new(&config.variant, model, analysis, &plan).total_points(),
        outcome,
        report,
        plateau,
        shock_estimate,
    };

    if let Some(dir) = out_dir {
        write_run_artifacts(dir, config, &result, &oracle)?;
    }
    Ok(result)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}

fn write_nets(dir: &Path, stem: &str, nets: &[SubnetParams]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (q, net) in nets.iter().enumerate() {
        net.write_checkpoint(BufWriter::new(File::create(dir.join(format!("{stem}_subnet{q}.txt")))?))?;
    }
    Ok(())
}

fn write_metadata(dir: &Path, config: &ExperimentConfig, analysis: &ShockAnalysis, plan: &CollocationPlan) -> Result<()> {
    let tc = config.train_config();
    let metadata = json!({
        "config": config.to_canonical_string()?,
        "mode": config.variant.mode,
        "mobility_ratio": config.flux.mobility_ratio,
        "shock": analysis,
        "rng_seed": tc.rng_seed,
        "subnet_init_seeds": (0..tc.architectures.len()).map(|q| tc.subnet_seed(q)).collect::<Vec<_>>(),
        "sampling_seed": plan.rng_seed,
        "architectures": tc.architectures,
        "parameter_count": tc.total_parameters(),
        "adam": tc.adam,
        "learning_rate": tc.learning_rate,
        "epochs": tc.epochs,
        "flux_form": config.variant.flux_kind(),
        "diffusivity_eps": config.variant.diffusivity(),
        "rh_stabilizer_eps": config.variant.rh_stabilizer_eps,
        "interface_residual": config.variant.mode == Mode::Xpinn,
        "interface_average": config.variant.mode.is_xpinn() && config.variant.enable_interface_average,
        "point_counts": config.sampling.counts(),
        "band_halfwidth": plan.band_halfwidth,
        "fold_interface_into_interior": config.variant.fold_interface_into_interior,
        "update_scheme": "simultaneous: every subnet steps from the same pre-update snapshot",
        "data_loss_averaging": "initial and boundary terms each averaged over their own count, then summed",
        "rh_target": "analytic shock speed from the Welge tangent",
        "flux_argument_clamp": crate::loss::FLUX_CLAMP,
        "graded_parameters": "final epoch",
        "norms": "l1 = mean|e|, l2 = sqrt(mean e^2) over the grading grid",
        "timing_caveat": TIMING_CAVEAT,
    });
    write_json(&dir.join("metadata.json"), &metadata)
}

fn write_run_artifacts(dir: &Path, config: &ExperimentConfig, result: &RunResult, oracle: &ExactSolution) -> Result<()> {
    let history = &result.outcome.history;
    history.write_csv(BufWriter::new(File::create(dir.join("history.csv"))?), config.outputs.wall_clock_in_history)?;

    let mut timing = BufWriter::new(File::create(dir.join("timing.csv"))?);
    writeln!(timing, "epoch,elapsed_seconds")?;
    for r in &history.records {
        writeln!(timing, "{},{:.6}", r.epoch, r.elapsed_seconds)?;
    }
    timing.flush()?;

    write_json(&dir.join("report.json"), &result.summary())?;
    if config.outputs.export_profiles {
        metrics::write_profiles_csv(
            BufWriter::new(File::create(dir.join("profiles.csv"))?),
            &result.outcome.nets,
            oracle,
            &PROFILE_TIMES,
            PROFILE_POINTS,
        )?;
    }
    if config.outputs.export_checkpoints {
        let ck = dir.join("checkpoints");
        write_nets(&ck, "final", &result.outcome.nets)?;
        write_nets(&ck, &format!("best_epoch{}", result.outcome.best.epoch), &result.outcome.best.nets)?;
        for c in &result.outcome.checkpoints {
            write_nets(&ck, &format!("epoch{}", c.epoch), &c.nets)?;
        }
    }
    Ok(())
}

/// Rejects a set of method configs whose training budgets differ in epochs,
/// learning rate, optimizer settings or collocation points.
pub fn check_fair_budgets(configs: &[ExperimentConfig]) -> Result<()> {
    let Some(first) = configs.first() else { return Ok(()) };
    let reference = (first.train.epochs, first.train.learning_rate, first.train.adam, training_point_budget(first)?);
    for c in &configs[1..] {
        let budget = (c.train.epochs, c.train.learning_rate, c.train.adam, training_point_budget(c)?);
        if budget != reference {
            return Err(Error::BudgetMismatch(format!(
                "{} trains with (epochs, lr, adam, points) = {:?} but {} uses {:?}",
                c.variant.mode, budget, first.variant.mode, reference
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareEntry {
    pub seed: u64,
    pub summary: RunSummary,
    /// 1 is the lowest L2 error among the methods at this seed.
    pub l2_rank: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub mobility_ratio: f64,
    pub entries: Vec<CompareEntry>,
    pub timing_caveat: &'static str,
}

impl CompareReport {
    pub fn at_seed(&self, seed: u64) -> impl Iterator<Item = &CompareEntry> {
        self.entries.iter().filter(move |e| e.seed == seed)
    }

    pub fn l2(&self, seed: u64, mode: Mode) -> Option<f64> {
        self.at_seed(seed).find(|e| e.summary.mode == mode).map(|e| e.summary.error.l2_abs)
    }

    pub fn write_ranking_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "seed,method,parameters,points,l1_abs,l2_abs,l1_rel,l2_rel,train_seconds,l2_rank")?;
        for e in &self.entries {
            let s = &e.summary;
            writeln!(
                out,
                "{},{},{},{},{:e},{:e},{:e},{:e},{:.3},{}",
                e.seed,
                s.mode,
                s.parameter_count,
                s.point_budget,
                s.error.l1_abs,
                s.error.l2_abs,
                s.error.l1_rel,
                s.error.l2_rel,
                s.error.train_seconds.unwrap_or(f64::NAN),
                e.l2_rank
            )?;
        }
        Ok(())
    }
}

/// Trains every listed method at every seed under one shared budget.
pub fn compare(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<CompareReport> {
    config.validate()?;
    let section = config.compare.clone().unwrap_or_default();
    let mut entries = Vec::new();
    for &seed in &section.seeds {
        let configs: Vec<ExperimentConfig> = section.methods.iter().map(|&m| config.for_method(m, seed)).collect();
        check_fair_budgets(&configs)?;
        let dirs: Vec<Option<PathBuf>> = configs
            .iter()
            .map(|c| out_dir.map(|d| d.join(c.outputs.directory.strip_prefix(&config.outputs.directory).unwrap_or(&c.outputs.directory))))
            .collect();
        let run = |(c, d): (&ExperimentConfig, &Option<PathBuf>)| run_training(c, d.as_deref()).map(|r| r.summary());
        let summaries: Vec<RunSummary> = if section.parallel {
            configs.par_iter().zip(&dirs).map(run).collect::<Result<_>>()?
        } else {
            configs.iter().zip(&dirs).map(run).collect::<Result<_>>()?
        };
        let mut order: Vec<usize> = (0..summaries.len()).collect();
        order.sort_by(|&a, &b| summaries[a].error.l2_abs.total_cmp(&summaries[b].error.l2_abs));
        let mut ranks = vec![0; summaries.len()];
        for (rank, &i) in order.iter().enumerate() {
            ranks[i] = rank + 1;
        }
        entries.extend(summaries.into_iter().zip(ranks).map(|(summary, l2_rank)| CompareEntry { seed, summary, l2_rank }));
    }
    let report = CompareReport { mobility_ratio: config.flux.mobility_ratio, entries, timing_caveat: TIMING_CAVEAT };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
        report.write_ranking_csv(BufWriter::new(File::create(dir.join("ranking.csv"))?))?;
        write_json(&dir.join("compare.json"), &report)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationReport {
    pub with_interface: RunSummary,
    pub without_interface: RunSummary,
    pub exact_shock_at_probe: f64,
    pub probe_time: f64,
}

/// Trains the XPINN of `config` with and without the interface residual,
/// same seed and budget.
pub fn ablate_interface(config: &ExperimentConfig, out_dir: Option<&Path>) -> Result<AblationReport> {
    if !config.variant.mode.is_xpinn() {
        return Err(Error::Config(format!("interface ablation needs an XPINN config, got {}", config.variant.mode)));
    }
    let mut with = config.clone();
    with.variant.mode = Mode::Xpinn;
    let mut without = config.clone();
    without.variant.mode = Mode::XpinnNoInterface;
    let a = run_training(&with, out_dir.map(|d| d.join("with_interface")).as_deref())?;
    let b = run_training(&without, out_dir.map(|d| d.join("without_interface")).as_deref())?;
    let report = AblationReport {
        exact_shock_at_probe: a.analysis.sigma * PROBE_TIME,
        probe_time: PROBE_TIME,
        with_interface: a.summary(),
        without_interface: b.summary(),
    };
    if let Some(dir) = out_dir {
        write_json(&dir.join("ablation.json"), &report)?;
    }
    Ok(report)
}

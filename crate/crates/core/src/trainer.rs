//! Full-batch Adam training of one or two subnetworks.
//!
//! Each epoch evaluates every loss term on the full point sets, takes the
//! gradient of each subnet's own total with the neighbour frozen, and then
//! updates all subnets from that same snapshot.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decomposition::CollocationPlan;
use crate::error::{Error, Result};
use crate::flux::{FluxModel, ShockAnalysis};
use crate::loss::{LossBreakdown, LossProblem, VariantConfig};
use crate::subnet::SubnetParams;

pub const ARCH1_XPINN: [&[usize]; 2] = [&[2, 10, 1], &[2, 10, 1]];
pub const ARCH2_XPINN: [&[usize]; 2] = [&[2, 30, 20, 1], &[2, 10, 1]];
pub const SINGLE_NET: &[usize] = &[2, 30, 22, 1];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Moment estimates for one parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u32,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }

    pub fn step_count(&self) -> u32 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut [f64],
    grads: &[f64],
    learning_rate: f64,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != state.m.len() {
        return Err(Error::DimensionMismatch { expected: state.m.len(), got: params.len() });
    }
    if grads.len() != params.len() {
        return Err(Error::DimensionMismatch { expected: params.len(), got: grads.len() });
    }
    state.step += 1;
    let c1 = 1.0 - config.beta1.powi(state.step as i32);
    let c2 = 1.0 - config.beta2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
        state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= learning_rate * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Zero freezes the parameters.
    pub learning_rate: f64,
    pub adam: AdamConfig,
    pub rng_seed: u64,
    pub variant: VariantConfig,
    /// Layer sizes per subnet, pre-shock first.
    pub architectures: Vec<Vec<usize>>,
    /// Zero disables periodic checkpoints.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            learning_rate: 1e-3,
            adam: AdamConfig::default(),
            rng_seed: 0,
            variant: VariantConfig::default(),
            architectures: ARCH2_XPINN.iter().map(|a| a.to_vec()).collect(),
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    /// Table settings for a mode: architecture 2 for XPINN modes, the
    /// single 2-30-22-1 net otherwise.
    pub fn for_variant(variant: VariantConfig, rng_seed: u64) -> Self {
        let architectures = if variant.mode.is_xpinn() {
            ARCH2_XPINN.iter().map(|a| a.to_vec()).collect()
        } else {
            vec![SINGLE_NET.to_vec()]
        };
        Self { rng_seed, variant, architectures, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::Config(format!("invalid Adam settings {a:?}")));
        }
        let expected = self.variant.mode.subnet_count();
        if self.architectures.len() != expected {
            return Err(Error::ModeMismatch {
                mode: self.variant.mode.to_string(),
                expected,
                got: self.architectures.len(),
            });
        }
        self.variant.validate()
    }

    /// Initialisation seed of subnet `q`, derived from the run seed.
    pub fn subnet_seed(&self, q: usize) -> u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed);
        rng.set_stream(q as u64 + 1);
        rng.random()
    }

    pub fn initial_nets(&self) -> Result<Vec<SubnetParams>> {
        self.architectures
            .iter()
            .enumerate()
            .map(|(q, sizes)| SubnetParams::init(sizes, self.subnet_seed(q)))
            .collect()
    }

    pub fn total_parameters(&self) -> usize {
        self.architectures.iter().map(|a| crate::subnet::parameter_count(a)).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    /// 1-based; losses are those of the parameters entering the epoch.
    pub epoch: usize,
    pub breakdowns: Vec<LossBreakdown>,
    pub elapsed_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    /// Minimum total loss of each subnet over all epochs.
    pub min_loss: Vec<f64>,
    pub min_loss_epoch: Vec<usize>,
    /// Minimum over epochs of the summed subnet totals.
    pub min_total: f64,
    pub min_total_epoch: usize,
}

pub const HISTORY_HEADER: &str =
    "epoch,subnet,data_loss,residual_loss,interface_residual_loss,interface_average_loss,total,elapsed_seconds";

impl TrainingHistory {
    fn new(subnets: usize) -> Self {
        Self {
            records: Vec::new(),
            min_loss: vec![f64::INFINITY; subnets],
            min_loss_epoch: vec![0; subnets],
            min_total: f64::INFINITY,
            min_total_epoch: 0,
        }
    }

    /// Returns whether the summed total reached a new minimum.
    fn push(&mut self, record: EpochRecord) -> bool {
        for (q, b) in record.breakdowns.iter().enumerate() {
            if b.total < self.min_loss[q] {
                self.min_loss[q] = b.total;
                self.min_loss_epoch[q] = record.epoch;
            }
        }
        let sum: f64 = record.breakdowns.iter().map(|b| b.total).sum();
        let improved = sum < self.min_total;
        if improved {
            self.min_total = sum;
            self.min_total_epoch = record.epoch;
        }
        self.records.push(record);
        improved
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Summed subnet totals, one per epoch.
    pub fn totals(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.breakdowns.iter().map(|b| b.total).sum()).collect()
    }

    /// One row per epoch and subnet. The elapsed column is left empty unless
    /// `wall_clock` is set so that reruns produce identical files.
    pub fn write_csv<W: Write>(&self, mut out: W, wall_clock: bool) -> Result<()> {
        writeln!(out, "{HISTORY_HEADER}")?;
        for r in &self.records {
            for (q, b) in r.breakdowns.iter().enumerate() {
                write!(
                    out,
                    "{},{},{:e},{:e},{:e},{:e},{:e},",
                    r.epoch,
                    q,
                    b.data_loss,
                    b.residual_loss,
                    b.interface_residual_loss,
                    b.interface_average_loss,
                    b.total
                )?;
                if wall_clock {
                    write!(out, "{:.6}", r.elapsed_seconds)?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Parameters after `epoch` updates.
    pub epoch: usize,
    pub nets: Vec<SubnetParams>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters after the last update.
    pub nets: Vec<SubnetParams>,
    pub history: TrainingHistory,
    pub checkpoints: Vec<Checkpoint>,
    /// Parameters at the epoch of minimum summed loss.
    pub best: Checkpoint,
    pub train_seconds: f64,
}

pub fn train(
    config: &TrainConfig,
    plan: &CollocationPlan,
    model: &FluxModel,
    analysis: &ShockAnalysis,
) -> Result<TrainOutcome> {
    config.validate()?;
    let problem = LossProblem::new(&config.variant, *model, *analysis, plan);
    let mut nets = config.initial_nets()?;
    let mut states: Vec<AdamState> = nets.iter().map(|n| AdamState::new(n.param_count())).collect();
    let mut history = TrainingHistory::new(nets.len());
    let mut checkpoints = Vec::new();
    let mut best = Checkpoint { epoch: 0, nets: nets.clone() };
    let start = Instant::now();

    for epoch in 1..=config.epochs {
        let abort = |nets: &[SubnetParams]| Error::NonFiniteLoss { epoch, last_good: Box::new(nets.to_vec()) };
        let (breakdowns, grads) = match problem.evaluate_with_gradients(&nets) {
            Ok(v) => v,
            Err(Error::NonFiniteForward { .. } | Error::NonFiniteResidual { .. }) => return Err(abort(&nets)),
            Err(e) => return Err(e),
        };
        let finite = breakdowns.iter().all(|b| b.total.is_finite())
            && grads.iter().flatten().all(|g| g.is_finite());
        if !finite {
            return Err(abort(&nets));
        }

        let improved = history.push(EpochRecord {
            epoch,
            breakdowns,
            elapsed_seconds: start.elapsed().as_secs_f64(),
        });
        if improved {
            best = Checkpoint { epoch: epoch - 1, nets: nets.clone() };
        }

        for ((net, state), grad) in nets.iter_mut().zip(&mut states).zip(&grads) {
            adam_step(state, net.params_mut(), grad, config.learning_rate, &config.adam)?;
        }
        if config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0 {
            checkpoints.push(Checkpoint { epoch, nets: nets.clone() });
        }
    }

    Ok(TrainOutcome { nets, history, checkpoints, best, train_seconds: start.elapsed().as_secs_f64() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{build_plan, PointCounts};
    use crate::loss::Mode;

    fn small_setup() -> (FluxModel, ShockAnalysis, CollocationPlan) {
        let model = FluxModel::new(2.0).unwrap();
        let analysis = model.welge_analysis().unwrap();
        let counts = PointCounts { n_ic: 20, n_bc: 20, n_pre: 100, n_post: 100, n_interface: 20 };
        let plan = build_plan(&analysis, counts, 0.007, 3).unwrap();
        (model, analysis, plan)
    }

    fn small_config(mode: Mode, epochs: usize) -> TrainConfig {
        let mut c = TrainConfig::for_variant(VariantConfig::with_mode(mode), 9);
        c.epochs = epochs;
        c.architectures = if mode.is_xpinn() { vec![vec![2, 8, 1], vec![2, 4, 1]] } else { vec![vec![2, 8, 1]] };
        c.checkpoint_every = 10;
        c
    }

    #[test]
    fn first_adam_step_has_unit_magnitude() {
        for g in [1e-6, 0.3, -2.0, 1e4] {
            let mut state = AdamState::new(1);
            let mut p = [0.5];
            adam_step(&mut state, &mut p, &[g], 1e-3, &AdamConfig::default()).unwrap();
            let delta = p[0] - 0.5;
            assert!((delta + 1e-3 * g.signum()).abs() < 1e-3 * 1e-2, "{g}: {delta}");
        }
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut state = AdamState::new(3);
        let mut p = [1.0, -2.0, 3.0];
        for _ in 0..5 {
            adam_step(&mut state, &mut p, &[0.0; 3], 1e-2, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, [1.0, -2.0, 3.0]);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn adam_rejects_mismatched_lengths() {
        let mut state = AdamState::new(2);
        let mut p = [0.0; 3];
        assert!(matches!(
            adam_step(&mut state, &mut p, &[0.0; 3], 1e-3, &AdamConfig::default()),
            Err(Error::DimensionMismatch { expected: 2, got: 3 })
        ));
        let mut p = [0.0; 2];
        assert!(adam_step(&mut state, &mut p, &[0.0; 3], 1e-3, &AdamConfig::default()).is_err());
    }

    #[test]
    fn zero_learning_rate_freezes_everything() {
        let (model, analysis, plan) = small_setup();
        let mut config = small_config(Mode::Xpinn, 15);
        config.learning_rate = 0.0;
        let out = train(&config, &plan, &model, &analysis).unwrap();
        assert_eq!(out.nets, config.initial_nets().unwrap());
        let first = &out.history.records[0].breakdowns;
        assert!(out.history.records.iter().all(|r| &r.breakdowns == first));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (model, analysis, plan) = small_setup();
        let config = small_config(Mode::Xpinn, 20);
        let a = train(&config, &plan, &model, &analysis).unwrap();
        let b = train(&config, &plan, &model, &analysis).unwrap();
        assert_eq!(a.nets, b.nets);
        let (mut ca, mut cb) = (Vec::new(), Vec::new());
        a.history.write_csv(&mut ca, false).unwrap();
        b.history.write_csv(&mut cb, false).unwrap();
        assert_eq!(ca, cb);
    }

    #[test]
    fn history_minima_and_checkpoints() {
        let (model, analysis, plan) = small_setup();
        let config = small_config(Mode::Xpinn, 30);
        let out = train(&config, &plan, &model, &analysis).unwrap();
        let h = &out.history;
        assert_eq!(h.len(), 30);
        for q in 0..2 {
            let min = h.records.iter().map(|r| r.breakdowns[q].total).fold(f64::INFINITY, f64::min);
            assert_eq!(h.min_loss[q], min);
        }
        let totals = h.totals();
        assert_eq!(h.min_total, totals.iter().copied().fold(f64::INFINITY, f64::min));
        assert_eq!(totals[h.min_total_epoch - 1], h.min_total);
        assert_eq!(out.checkpoints.iter().map(|c| c.epoch).collect::<Vec<_>>(), vec![10, 20, 30]);
        assert_eq!(out.checkpoints.last().unwrap().nets, out.nets);

        let problem = LossProblem::new(&config.variant, model, analysis, &plan);
        let best_sum: f64 = problem.evaluate(&out.best.nets).unwrap().iter().map(|b| b.total).sum();
        assert_eq!(best_sum, h.min_total);
    }

    #[test]
    fn training_reduces_loss() {
        let (model, analysis, plan) = small_setup();
        for mode in [Mode::Xpinn, Mode::StandardPinn, Mode::DiffusivityPinn] {
            let mut config = small_config(mode, 300);
            config.learning_rate = 5e-3;
            let out = train(&config, &plan, &model, &analysis).unwrap();
            let totals = out.history.totals();
            assert!(totals[299] < 0.5 * totals[0], "{mode}: {} -> {}", totals[0], totals[299]);
        }
    }

    #[test]
    fn csv_layout() {
        let (model, analysis, plan) = small_setup();
        let out = train(&small_config(Mode::StandardPinn, 3), &plan, &model, &analysis).unwrap();
        let mut buf = Vec::new();
        out.history.write_csv(&mut buf, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], HISTORY_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[1].starts_with("1,0,") && lines[1].ends_with(','));

        let mut buf = Vec::new();
        out.history.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(!text.lines().nth(3).unwrap().ends_with(','));
    }

    #[test]
    fn non_finite_loss_reports_epoch() {
        let (model, analysis, plan) = small_setup();
        let mut config = small_config(Mode::StandardPinn, 50);
        config.learning_rate = 1e300;
        match train(&config, &plan, &model, &analysis) {
            Err(Error::NonFiniteLoss { epoch, last_good }) => {
                assert!(epoch >= 2);
                assert_eq!(last_good.len(), 1);
                assert!(last_good[0].params().iter().all(|p| p.is_finite()));
            }
            other => panic!("expected abort, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_configs() {
        let (model, analysis, plan) = small_setup();
        let mut c = small_config(Mode::Xpinn, 0);
        assert!(train(&c, &plan, &model, &analysis).is_err());
        c.epochs = 1;
        c.architectures.pop();
        assert!(matches!(train(&c, &plan, &model, &analysis), Err(Error::ModeMismatch { .. })));
    }

    #[test]
    fn default_parameter_budgets() {
        assert_eq!(TrainConfig::for_variant(VariantConfig::with_mode(Mode::Xpinn), 0).total_parameters(), 777);
        assert_eq!(TrainConfig::for_variant(VariantConfig::with_mode(Mode::OleinikPinn), 0).total_parameters(), 798);
        let c = TrainConfig::default();
        assert_ne!(c.subnet_seed(0), c.subnet_seed(1));
    }
}

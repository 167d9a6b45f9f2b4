//! Experiment configuration files.
//!
//! Configs are TOML with the sections `[flux]`, `[variant]`,
//! `[architecture]`, `[train]` (and `[train.adam]`), `[sampling]`,
//! `[outputs]` and an optional `[compare]`. Only `[flux]` is required;
//! everything else falls back to the table settings. See `configs/` for
//! annotated examples.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::decomposition::{PointCounts, DEFAULT_BAND_HALFWIDTH};
use crate::error::{Error, Result};
use crate::loss::{Mode, VariantConfig};
use crate::metrics::DEFAULT_GRID;
use crate::trainer::{AdamConfig, TrainConfig, ARCH2_XPINN, SINGLE_NET};

/// Overrides the root that relative output directories resolve against.
pub const OUTPUT_ROOT_ENV: &str = "XPINN_OUTPUT_ROOT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluxSection {
    pub mobility_ratio: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchitectureSection {
    /// Layer sizes per subnet, pre-shock first. Empty means the table
    /// architecture for the mode.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub subnets: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub rng_seed: u64,
    pub checkpoint_every: usize,
    pub adam: AdamConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            rng_seed: t.rng_seed,
            checkpoint_every: t.checkpoint_every,
            adam: t.adam,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingSection {
    pub n_ic: usize,
    pub n_bc: usize,
    pub n_pre: usize,
    pub n_post: usize,
    pub n_interface: usize,
    pub band_halfwidth: f64,
    pub seed: u64,
}

impl Default for SamplingSection {
    fn default() -> Self {
        let c = PointCounts::default();
        Self {
            n_ic: c.n_ic,
            n_bc: c.n_bc,
            n_pre: c.n_pre,
            n_post: c.n_post,
            n_interface: c.n_interface,
            band_halfwidth: DEFAULT_BAND_HALFWIDTH,
            seed: 0,
        }
    }
}

impl SamplingSection {
    pub fn counts(&self) -> PointCounts {
        PointCounts {
            n_ic: self.n_ic,
            n_bc: self.n_bc,
            n_pre: self.n_pre,
            n_post: self.n_post,
            n_interface: self.n_interface,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputsSection {
    pub directory: PathBuf,
    /// Fill the elapsed-seconds history column; makes histories differ
    /// between otherwise identical runs.
    pub wall_clock_in_history: bool,
    pub export_profiles: bool,
    pub export_plan: bool,
    pub export_checkpoints: bool,
    pub grid_nx: usize,
    pub grid_nt: usize,
}

impl Default for OutputsSection {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("runs/default"),
            wall_clock_in_history: false,
            export_profiles: true,
            export_plan: false,
            export_checkpoints: true,
            grid_nx: DEFAULT_GRID,
            grid_nt: DEFAULT_GRID,
        }
    }
}

impl OutputsSection {
    /// `directory`, placed under `$XPINN_OUTPUT_ROOT` when that is set and
    /// the directory is relative.
    pub fn resolved_directory(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.directory.is_relative() => Path::new(&root).join(&self.directory),
            _ => self.directory.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareSection {
    pub methods: Vec<Mode>,
    /// Each seed drives both the initialisation and the sampling.
    pub seeds: Vec<u64>,
    pub xpinn_subnets: Vec<Vec<usize>>,
    pub single_net: Vec<usize>,
    /// Run methods on worker threads instead of one after another.
    pub parallel: bool,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            methods: Mode::ALL_METHODS.to_vec(),
            seeds: vec![0],
            xpinn_subnets: ARCH2_XPINN.iter().map(|a| a.to_vec()).collect(),
            single_net: SINGLE_NET.to_vec(),
            parallel: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub flux: FluxSection,
    #[serde(default)]
    pub variant: VariantConfig,
    #[serde(default)]
    pub architecture: ArchitectureSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub sampling: SamplingSection,
    #[serde(default)]
    pub outputs: OutputsSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
}

impl ExperimentConfig {
    pub fn new(mobility_ratio: f64, mode: Mode) -> Self {
        Self {
            flux: FluxSection { mobility_ratio },
            variant: VariantConfig::with_mode(mode),
            architecture: ArchitectureSection::default(),
            train: TrainSection::default(),
            sampling: SamplingSection::default(),
            outputs: OutputsSection::default(),
            compare: None,
        }
    }

    /// Parses and validates; parse errors carry line and column.
    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| match e {
            Error::ConfigParse(inner) => Error::Config(format!("{}: {inner}", path.display())),
            other => other,
        })
    }

    /// Every field written out explicitly, in a fixed order.
    pub fn to_canonical_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.flux.mobility_ratio.is_finite() && self.flux.mobility_ratio > 0.0) {
            return Err(Error::InvalidMobilityRatio(self.flux.mobility_ratio));
        }
        if !(self.train.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.train.learning_rate)));
        }
        if self.outputs.grid_nx < crate::metrics::MIN_GRID || self.outputs.grid_nt < crate::metrics::MIN_GRID {
            return Err(Error::Config(format!("grading grid must be at least {0}x{0}", crate::metrics::MIN_GRID)));
        }
        if let Some(c) = &self.compare {
            if c.methods.is_empty() || c.seeds.is_empty() {
                return Err(Error::Config("compare needs at least one method and one seed".into()));
            }
        }
        self.train_config().validate()
    }

    pub fn architectures(&self) -> Vec<Vec<usize>> {
        if !self.architecture.subnets.is_empty() {
            self.architecture.subnets.clone()
        } else if self.variant.mode.is_xpinn() {
            ARCH2_XPINN.iter().map(|a| a.to_vec()).collect()
        } else {
            vec![SINGLE_NET.to_vec()]
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.train.epochs,
            learning_rate: self.train.learning_rate,
            adam: self.train.adam,
            rng_seed: self.train.rng_seed,
            variant: self.variant.clone(),
            architectures: self.architectures(),
            checkpoint_every: self.train.checkpoint_every,
        }
    }

    /// The config of one method of a comparison at one seed.
    pub fn for_method(&self, mode: Mode, seed: u64) -> Self {
        let compare = self.compare.clone().unwrap_or_default();
        let mut c = self.clone();
        c.compare = None;
        c.variant.mode = mode;
        c.architecture.subnets =
            if mode.is_xpinn() { compare.xpinn_subnets.clone() } else { vec![compare.single_net.clone()] };
        c.train.rng_seed = seed;
        c.sampling.seed = seed;
        c.outputs.directory = self.outputs.directory.join(format!("seed{seed}")).join(mode.name());
        c
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
[flux]
mobility_ratio = 2.0

[variant]
mode = "xpinn"

[architecture]
subnets = [[2, 30, 20, 1], [2, 10, 1]]

[train]
epochs = 5000
learning_rate = 1e-3
rng_seed = 7

[train.adam]
beta1 = 0.9

[sampling]
n_pre = 2000
seed = 7

[outputs]
directory = "runs/arch2"
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ExperimentConfig::parse(FULL).unwrap();
        assert_eq!(c.flux.mobility_ratio, 2.0);
        assert_eq!(c.train.rng_seed, 7);
        assert_eq!(c.train.adam, AdamConfig::default());
        assert_eq!(c.sampling.counts(), PointCounts::default());
        assert_eq!(c.variant.diffusivity_eps, 2.5e-3);
        assert!(c.compare.is_none());
        assert_eq!(c.train_config().total_parameters(), 777);
    }

    #[test]
    fn minimal_config_uses_table_architectures() {
        let c = ExperimentConfig::parse("[flux]\nmobility_ratio = 30\n[variant]\nmode = \"oleinik_pinn\"\n").unwrap();
        assert_eq!(c.architectures(), vec![vec![2, 30, 22, 1]]);
    }

    #[test]
    fn canonical_form_is_a_fixed_point() {
        let mut with_compare = ExperimentConfig::parse(FULL).unwrap();
        with_compare.compare = Some(CompareSection::default());
        for c in [ExperimentConfig::parse(FULL).unwrap(), with_compare] {
            let text = c.to_canonical_string().unwrap();
            let back = ExperimentConfig::parse(&text).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.to_canonical_string().unwrap(), text);
        }
    }

    #[test]
    fn parse_errors_report_lines() {
        let err = ExperimentConfig::parse("[flux]\nmobility_ratio = 2\n[train]\nepochs = \"many\"\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 4"), "{msg}");

        let err = ExperimentConfig::parse("[flux]\nmobility_ratio = 2\n[train]\nepoch = 3\n").unwrap_err();
        assert!(err.to_string().contains("epoch"), "{err}");
    }

    #[test]
    fn rejects_invalid_values() {
        assert!(ExperimentConfig::parse("[flux]\nmobility_ratio = -1\n").is_err());
        assert!(ExperimentConfig::parse("[flux]\nmobility_ratio = 2\n[train]\nlearning_rate = 0\n").is_err());
        assert!(ExperimentConfig::parse("[flux]\nmobility_ratio = 2\n[train]\nepochs = 0\n").is_err());
        assert!(ExperimentConfig::parse("[variant]\nmode = \"xpinn\"\n").is_err());
        let wrong_arity = "[flux]\nmobility_ratio = 2\n[variant]\nmode = \"standard_pinn\"\n[architecture]\nsubnets = [[2, 5, 1], [2, 5, 1]]\n";
        assert!(matches!(ExperimentConfig::parse(wrong_arity), Err(Error::ModeMismatch { .. })));
    }

    #[test]
    fn method_configs_share_budgets() {
        let mut c = ExperimentConfig::parse(FULL).unwrap();
        c.compare = Some(CompareSection::default());
        let x = c.for_method(Mode::Xpinn, 3);
        let s = c.for_method(Mode::WelgePinn, 3);
        assert_eq!(x.train_config().total_parameters(), 777);
        assert_eq!(s.train_config().total_parameters(), 798);
        assert_eq!((x.train.epochs, x.train.learning_rate), (s.train.epochs, s.train.learning_rate));
        assert_eq!((x.sampling.seed, s.train.rng_seed), (3, 3));
        assert!(s.outputs.directory.ends_with("seed3/welge_pinn"));
    }

    #[test]
    fn output_root_override() {
        let out = OutputsSection { directory: "runs/a".into(), ..OutputsSection::default() };
        // Only checks the composition rule; the variable itself is process-global.
        let root = std::env::var_os(OUTPUT_ROOT_ENV);
        let expected = root.map_or_else(|| PathBuf::from("runs/a"), |r| Path::new(&r).join("runs/a"));
        assert_eq!(out.resolved_directory(), expected);
        let abs = OutputsSection { directory: "/tmp/x".into(), ..OutputsSection::default() };
        assert_eq!(abs.resolved_directory(), PathBuf::from("/tmp/x"));
    }
}

//! Extended physics-informed neural networks (XPINN) for the Buckley-Leverett
//! equation with a nonconvex fractional-flow function.
//!
//! The crate is organised bottom-up:
//!
//! - [`flux`]: fractional flow, Welge tangent analysis and the modified fluxes
//!   used by the entropy-corrected PINN baselines.
//! - [`oracle`]: exact entropy solution of the Riemann problem (rarefaction
//!   fan followed by a shock) used to grade every trained model.
//! - [`diff`]: scalar reverse-mode tape, forward-mode input derivatives, and the
//!   fused batched kernel used for training.
//! - [`subnet`]: feed-forward networks with layer-wise adaptive tanh slopes.
//! - [`decomposition`]: pre-/post-shock space-time decomposition and stitching.
//! - [`loss`]: data, PDE residual, Rankine-Hugoniot and interface-average terms.
//! - [`trainer`]: full-batch Adam training with per-epoch loss history.
//! - [`metrics`]: L1/L2 grading against the oracle and shock diagnostics.
//! - [`config`] and [`experiment`]: reproducible, file-driven experiment runs.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod decomposition;
pub mod diff;
pub mod error;
pub mod experiment;
pub mod flux;
pub mod loss;
pub mod metrics;
pub mod oracle;
pub mod subnet;
pub mod trainer;

pub use decomposition::{build_plan, stitch_prediction, CollocationPlan, Point, PointCounts, Region};
pub use error::{Error, Result};
pub use flux::{FluxModel, ModifiedFluxKind, ShockAnalysis};
pub use loss::{LossBreakdown, Mode, VariantConfig};
pub use metrics::ErrorReport;
pub use oracle::ExactSolution;
pub use subnet::SubnetParams;
pub use trainer::{TrainConfig, TrainingHistory};

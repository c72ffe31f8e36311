//! Truncated-rollout approximate dynamic programming for finite-horizon Markov
//! decision problems whose objective is the directed information from the
//! controlled source to the control process, under stage-wise distortion
//! constraints handled through Lagrange multipliers.
//!
//! The information state is truncated to memory one: every quantity at stage
//! `t` is indexed by the previous control `u_{t−1}`. Costs are in nats.
//!
//! The pipeline is:
//!
//! 1. [`offline::train`] solves the trailing `N_s` stages backward on a
//!    [`grid::BeliefGrid`], producing an [`offline::OfflineArtifact`].
//! 2. [`rollout::run_online`] walks forward from the initial policy, solving a
//!    one-step lookahead at the actual information state of each stage.
//! 3. [`rollout::run_repeated`] refines the grid to the visited range and
//!    repeats; [`rollout::run_baseline`] trains the full horizon and replays
//!    stored grid policies for comparison.

pub mod baa;
pub mod clock;
pub mod error;
pub mod grid;
pub mod harness;
pub mod info;
pub mod offline;
pub mod oracle;
pub mod parallel;
pub mod prob;
pub mod problem;
pub mod rollout;

pub use baa::{solve_stage, BaaConfig, StageInput, StageSolution};
pub use error::{ConfigViolation, Error, Result};
pub use grid::{build_uniform_grid, BeliefGrid, GridIndex};
pub use offline::{load_artifact, save_artifact, train, OfflineArtifact, QTable};
pub use prob::{ControlMarginal, ControlPolicy, InformationState, SimplexVector, StageKernel, TransitionKernel};
pub use problem::{InitialPolicy, Problem};
pub use rollout::{run_baseline, run_online, run_repeated, RolloutConfig, RolloutTrajectory};

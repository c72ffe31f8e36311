//! A fully specified finite-horizon problem instance.

use serde::{Deserialize, Serialize};

use crate::baa::StageInput;
use crate::error::{Error, Result};
use crate::info::{DistortionFunction, LagrangeSchedule};
use crate::prob::{ControlPolicy, InformationState, SimplexVector, StageKernel, TransitionKernel};

/// How the stage-0 policy `μ_0 = P(u_0 | x_0)` is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPolicy {
    /// Supplied by the configuration; one row per initial state.
    Fixed(ControlPolicy),
    /// Chosen by the same stage solver as every later stage.
    Optimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub kernel: TransitionKernel,
    pub distortion: DistortionFunction,
    pub schedule: LagrangeSchedule,
    pub initial_policy: InitialPolicy,
}

impl Problem {
    pub fn new(
        kernel: TransitionKernel,
        distortion: DistortionFunction,
        schedule: LagrangeSchedule,
        initial_policy: InitialPolicy,
    ) -> Result<Self> {
        let states = kernel.stage(0).states();
        if distortion.states() != states {
            return Err(Error::Shape("distortion table does not match the state alphabet".into()));
        }
        if schedule.len() != kernel.horizon() + 1 {
            return Err(Error::Shape(format!(
                "schedule covers {} stages, horizon needs {}",
                schedule.len(),
                kernel.horizon() + 1
            )));
        }
        let controls = distortion.controls();
        for t in 1..=kernel.horizon() {
            if kernel.stage(t).contexts() != controls {
                return Err(Error::Shape(format!(
                    "kernel stage {t} has {} contexts, expected {controls}",
                    kernel.stage(t).contexts()
                )));
            }
        }
        if let InitialPolicy::Fixed(mu0) = &initial_policy {
            if mu0.stage != 0 || mu0.contexts() != 1 || mu0.states() != states || mu0.controls() != controls {
                return Err(Error::Shape(
                    "initial policy must be a single-context stage-0 policy over the alphabets".into(),
                ));
            }
        }
        Ok(Self {
            kernel,
            distortion,
            schedule,
            initial_policy,
        })
    }

    /// The time-invariant binary chain with Hamming distortion and constant multipliers.
    pub fn binary_symmetric(
        alpha0: f64,
        alpha1: f64,
        p0: SimplexVector,
        initial_policy: InitialPolicy,
        s: f64,
        d: f64,
        horizon: usize,
    ) -> Result<Self> {
        let kernel = TransitionKernel::time_invariant(
            p0,
            StageKernel::binary_symmetric(alpha0, alpha1)?,
            horizon,
        )?;
        Self::new(
            kernel,
            DistortionFunction::hamming(2),
            LagrangeSchedule::constant(s, d, horizon)?,
            initial_policy,
        )
    }

    pub fn horizon(&self) -> usize {
        self.kernel.horizon()
    }

    pub fn states(&self) -> usize {
        self.distortion.states()
    }

    pub fn controls(&self) -> usize {
        self.distortion.controls()
    }

    pub fn initial_distribution(&self) -> &SimplexVector {
        &self.kernel.stage(0).rows()[0]
    }

    pub fn stage_input<'a>(
        &'a self,
        belief: &'a InformationState,
        t: usize,
        context: usize,
    ) -> StageInput<'a> {
        StageInput {
            belief,
            kernel: self.kernel.stage(t),
            context,
            multiplier: self.schedule.multiplier(t),
            threshold: self.schedule.threshold(t),
            distortion: &self.distortion,
        }
    }

    /// The same time-invariant problem over another horizon, reusing the stage-1
    /// kernel and multipliers. Fails for stage-dependent kernels.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self> {
        let n = self.horizon();
        if n == 0 {
            return Err(Error::Unsupported("cannot extend a zero-horizon problem".into()));
        }
        let stage = self.kernel.stage(1);
        if self.kernel.stages()[1..].iter().any(|s| s != stage) {
            return Err(Error::Unsupported("horizon sweeps need a time-invariant kernel".into()));
        }
        let kernel =
            TransitionKernel::time_invariant(self.initial_distribution().clone(), stage.clone(), horizon)?;
        let s: Vec<f64> = (0..=horizon)
            .map(|t| self.schedule.multiplier(t.min(n)))
            .collect();
        let d: Vec<f64> = (0..=horizon)
            .map(|t| self.schedule.threshold(t.min(n)))
            .collect();
        Self::new(
            kernel,
            self.distortion.clone(),
            LagrangeSchedule::new(s, d)?,
            self.initial_policy.clone(),
        )
    }
}

//! Probability primitives and the controlled-source system model.
//!
//! All history dependence is truncated to the previous control (memory-1):
//! beliefs, policies, output distributions and control marginals are indexed
//! by a *context* `u_prev`. Stage 0 is represented with one dummy context and
//! one dummy previous state, so its kernel row is the initial state
//! distribution and its belief is the point mass `[1.0]`.
//!
//! Layouts:
//! - [`StageKernel`] row `(x_prev, u_prev)` is a distribution over the next state.
//! - [`ControlPolicy`] row `(u_prev, x)` is a distribution over the control.
//! - [`InformationState`] row `u_prev` is a distribution over the previous state.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Entries of a [`SimplexVector`] must sum to one within this tolerance.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Default clamp applied before any logarithm or division.
pub const DEFAULT_PROB_FLOOR: f64 = 1e-12;

/// A finite probability distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SimplexVector(Vec<f64>);

impl SimplexVector {
    /// Validates `probs` as a distribution without rescaling it.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::InvalidDistribution("empty vector".into()));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidDistribution(format!("entry {p} outside [0, 1]")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!("entries sum to {sum}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over an empty alphabet");
        Self(vec![1.0 / n as f64; n])
    }

    pub fn point_mass(n: usize, at: usize) -> Self {
        assert!(at < n, "point mass index {at} outside alphabet of size {n}");
        let mut v = vec![0.0; n];
        v[at] = 1.0;
        Self(v)
    }

    /// Binary distribution `[p, 1 - p]`.
    pub fn binary(p: f64) -> Result<Self> {
        Self::new(vec![p, 1.0 - p])
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Clamps every entry to at least `floor` and renormalizes.
    pub fn floored(&self, floor: f64) -> Self {
        floor_and_normalize(&self.0, floor)
    }

    /// L1 distance to another distribution of the same length.
    pub fn l1_distance(&self, other: &SimplexVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

impl std::ops::Index<usize> for SimplexVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl TryFrom<Vec<f64>> for SimplexVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<SimplexVector> for Vec<f64> {
    fn from(v: SimplexVector) -> Vec<f64> {
        v.0
    }
}

/// Rescales a nonnegative vector onto the simplex, preserving order.
pub fn normalize(v: &[f64]) -> Result<SimplexVector> {
    if v.is_empty() {
        return Err(Error::InvalidDistribution("empty vector".into()));
    }
    if let Some(p) = v.iter().find(|p| !p.is_finite() || **p < 0.0) {
        return Err(Error::InvalidDistribution(format!("entry {p} is negative or not finite")));
    }
    let sum: f64 = v.iter().sum();
    if sum <= 0.0 {
        return Err(Error::DegenerateDistribution);
    }
    Ok(SimplexVector(v.iter().map(|p| p / sum).collect()))
}

pub(crate) fn floor_and_normalize(v: &[f64], floor: f64) -> SimplexVector {
    let clamped: Vec<f64> = v.iter().map(|p| p.max(floor)).collect();
    let sum: f64 = clamped.iter().sum();
    SimplexVector(clamped.into_iter().map(|p| p / sum).collect())
}

/// One stage `w_t` of the transition kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageKernel {
    prev_states: usize,
    contexts: usize,
    rows: Vec<SimplexVector>,
}

impl StageKernel {
    /// `rows[x_prev * contexts + u_prev]` is the next-state distribution.
    pub fn new(prev_states: usize, contexts: usize, rows: Vec<SimplexVector>) -> Result<Self> {
        if prev_states == 0 || contexts == 0 {
            return Err(Error::Shape("kernel needs at least one previous state and context".into()));
        }
        if rows.len() != prev_states * contexts {
            return Err(Error::Shape(format!(
                "kernel has {} rows, expected {}",
                rows.len(),
                prev_states * contexts
            )));
        }
        let states = rows[0].len();
        if rows.iter().any(|r| r.len() != states) {
            return Err(Error::Shape("kernel rows differ in length".into()));
        }
        Ok(Self {
            prev_states,
            contexts,
            rows,
        })
    }

    /// Stage-0 kernel: a single dummy `(x_prev, u_prev)` emitting the initial distribution.
    pub fn initial(p0: SimplexVector) -> Self {
        Self {
            prev_states: 1,
            contexts: 1,
            rows: vec![p0],
        }
    }

    /// Binary controlled Markov chain: under context `u`, the state flips with probability `alpha_u`.
    pub fn binary_symmetric(alpha0: f64, alpha1: f64) -> Result<Self> {
        let mut rows = Vec::with_capacity(4);
        for x_prev in 0..2 {
            for alpha in [alpha0, alpha1] {
                let stay = 1.0 - alpha;
                rows.push(if x_prev == 0 {
                    SimplexVector::new(vec![stay, alpha])?
                } else {
                    SimplexVector::new(vec![alpha, stay])?
                });
            }
        }
        Self::new(2, 2, rows)
    }

    pub fn prev_states(&self) -> usize {
        self.prev_states
    }

    pub fn contexts(&self) -> usize {
        self.contexts
    }

    pub fn states(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, x_prev: usize, u_prev: usize) -> &SimplexVector {
        &self.rows[x_prev * self.contexts + u_prev]
    }

    pub fn rows(&self) -> &[SimplexVector] {
        &self.rows
    }
}

/// The full kernel, one [`StageKernel`] per stage `t = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionKernel {
    stages: Vec<StageKernel>,
}

impl TransitionKernel {
    /// `stages[0]` must be the stage-0 initial kernel.
    pub fn new(stages: Vec<StageKernel>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::Shape("kernel needs the initial stage".into()));
        }
        if stages[0].prev_states != 1 || stages[0].contexts != 1 {
            return Err(Error::Shape("stage-0 kernel must have a single dummy row".into()));
        }
        let states = stages[0].states();
        if stages.iter().any(|s| s.states() != states) {
            return Err(Error::Shape("all stages must share the state alphabet".into()));
        }
        for pair in stages.windows(2).skip(1) {
            if pair[1].prev_states != pair[0].states() {
                return Err(Error::Shape("kernel stages do not chain".into()));
            }
        }
        Ok(Self { stages })
    }

    /// Time-invariant kernel over `horizon` stages after the initial one.
    pub fn time_invariant(p0: SimplexVector, stage: StageKernel, horizon: usize) -> Result<Self> {
        let mut stages = Vec::with_capacity(horizon + 1);
        stages.push(StageKernel::initial(p0));
        stages.extend(std::iter::repeat_n(stage, horizon));
        Self::new(stages)
    }

    /// Horizon `N` (stages run `0..=N`).
    pub fn horizon(&self) -> usize {
        self.stages.len() - 1
    }

    pub fn stage(&self, t: usize) -> &StageKernel {
        &self.stages[t]
    }

    pub fn stages(&self) -> &[StageKernel] {
        &self.stages
    }
}

/// `μ_t(u | u_prev, x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPolicy {
    pub stage: usize,
    states: usize,
    rows: Vec<SimplexVector>,
}

impl ControlPolicy {
    /// `rows[u_prev * states + x]` is the control distribution.
    pub fn new(stage: usize, states: usize, rows: Vec<SimplexVector>) -> Result<Self> {
        if states == 0 || rows.is_empty() || !rows.len().is_multiple_of(states) {
            return Err(Error::Shape(format!(
                "{} policy rows do not tile {} states",
                rows.len(),
                states
            )));
        }
        let controls = rows[0].len();
        if rows.iter().any(|r| r.len() != controls) {
            return Err(Error::Shape("policy rows differ in length".into()));
        }
        Ok(Self {
            stage,
            states,
            rows,
        })
    }

    /// Builds a policy from one row block (rows over `x`) per context.
    pub fn from_blocks(stage: usize, blocks: Vec<Vec<SimplexVector>>) -> Result<Self> {
        let states = blocks.first().map_or(0, Vec::len);
        Self::new(stage, states, blocks.into_iter().flatten().collect())
    }

    /// Policy ignoring the state: `μ(·|u_prev, x) = q` for every context and state.
    pub fn state_independent(stage: usize, contexts: usize, states: usize, q: SimplexVector) -> Self {
        Self {
            stage,
            states,
            rows: vec![q; contexts * states],
        }
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn contexts(&self) -> usize {
        self.rows.len() / self.states
    }

    pub fn controls(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, u_prev: usize, x: usize) -> &SimplexVector {
        &self.rows[u_prev * self.states + x]
    }

    /// The row block `μ(·|u_prev, ·)`.
    pub fn block(&self, u_prev: usize) -> &[SimplexVector] {
        &self.rows[u_prev * self.states..(u_prev + 1) * self.states]
    }

    pub fn rows(&self) -> &[SimplexVector] {
        &self.rows
    }
}

/// `ν_t(u | u_prev)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputDistribution {
    pub stage: usize,
    pub rows: Vec<SimplexVector>,
}

impl OutputDistribution {
    pub fn row(&self, u_prev: usize) -> &SimplexVector {
        &self.rows[u_prev]
    }
}

/// `b_t(x_prev | u_prev)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InformationState {
    pub stage: usize,
    rows: Vec<SimplexVector>,
}

impl InformationState {
    pub fn new(stage: usize, rows: Vec<SimplexVector>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("information state needs at least one context".into()));
        }
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Shape("belief rows differ in length".into()));
        }
        Ok(Self { stage, rows })
    }

    /// Stage-0 belief: one context holding the dummy previous state.
    pub fn initial() -> Self {
        Self {
            stage: 0,
            rows: vec![SimplexVector::point_mass(1, 0)],
        }
    }

    pub fn contexts(&self) -> usize {
        self.rows.len()
    }

    pub fn states(&self) -> usize {
        self.rows[0].len()
    }

    pub fn row(&self, u_prev: usize) -> &SimplexVector {
        &self.rows[u_prev]
    }

    pub fn rows(&self) -> &[SimplexVector] {
        &self.rows
    }

    pub fn with_stage(mut self, stage: usize) -> Self {
        self.stage = stage;
        self
    }

    /// Sum over contexts of the row-wise L1 distance.
    pub fn l1_distance(&self, other: &InformationState) -> f64 {
        self.rows
            .iter()
            .zip(&other.rows)
            .map(|(a, b)| a.l1_distance(b))
            .sum()
    }
}

/// `P_t(u_prev)`, the weight of each context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlMarginal {
    pub stage: usize,
    pub dist: SimplexVector,
}

impl ControlMarginal {
    pub fn initial() -> Self {
        Self {
            stage: 0,
            dist: SimplexVector::point_mass(1, 0),
        }
    }

    pub fn weight(&self, u_prev: usize) -> f64 {
        self.dist[u_prev]
    }
}

fn check_stage(expected: usize, found: usize, what: &'static str) -> Result<()> {
    if expected != found {
        return Err(Error::StageMismatch {
            expected,
            found,
            what,
        });
    }
    Ok(())
}

fn check_belief_kernel(b: &InformationState, w: &StageKernel) -> Result<()> {
    if b.contexts() != w.contexts() || b.states() != w.prev_states() {
        return Err(Error::Shape(format!(
            "belief is {}x{} but kernel expects {}x{}",
            b.contexts(),
            b.states(),
            w.contexts(),
            w.prev_states()
        )));
    }
    Ok(())
}

fn check_policy(b: &InformationState, mu: &ControlPolicy, w: &StageKernel) -> Result<()> {
    check_stage(b.stage, mu.stage, "policy")?;
    check_belief_kernel(b, w)?;
    if mu.contexts() != b.contexts() || mu.states() != w.states() {
        return Err(Error::Shape("policy does not match belief contexts or states".into()));
    }
    Ok(())
}

/// `P(x | u_prev) = Σ_{x_prev} w(x | x_prev, u_prev) b(x_prev | u_prev)`.
pub fn state_marginal(b: &InformationState, w: &StageKernel, u_prev: usize) -> Result<Vec<f64>> {
    check_belief_kernel(b, w)?;
    if u_prev >= b.contexts() {
        return Err(Error::Shape(format!("context {u_prev} out of range")));
    }
    let mut px = vec![0.0; w.states()];
    for (x_prev, bp) in b.row(u_prev).probs().iter().enumerate() {
        for (acc, wp) in px.iter_mut().zip(w.row(x_prev, u_prev).probs()) {
            *acc += wp * bp;
        }
    }
    Ok(px)
}

/// Unnormalized posterior `μ(u|x) P(x)` and its normalizer.
pub(crate) fn joint_column(px: &[f64], block: &[SimplexVector], u: usize) -> (Vec<f64>, f64) {
    let col: Vec<f64> = px.iter().zip(block).map(|(p, row)| p * row[u]).collect();
    let z = col.iter().sum();
    (col, z)
}

/// Belief recursion: the posterior over the current state after observing
/// control `u` in context `u_prev`.
pub fn belief_update(
    b: &InformationState,
    mu: &ControlPolicy,
    w: &StageKernel,
    u_prev: usize,
    u: usize,
) -> Result<SimplexVector> {
    check_policy(b, mu, w)?;
    let px = state_marginal(b, w, u_prev)?;
    let (col, z) = joint_column(&px, mu.block(u_prev), u);
    if z <= 0.0 {
        return Err(Error::UnreachableOutput {
            context: u_prev,
            control: u,
        });
    }
    Ok(SimplexVector(col.into_iter().map(|p| p / z).collect()))
}

/// Posterior for every control outcome; unreachable controls map to `None`.
pub fn successor_beliefs(
    b: &InformationState,
    mu: &ControlPolicy,
    w: &StageKernel,
    u_prev: usize,
) -> Result<Vec<Option<SimplexVector>>> {
    check_policy(b, mu, w)?;
    let px = state_marginal(b, w, u_prev)?;
    Ok(successors_from_marginal(&px, mu.block(u_prev)))
}

pub(crate) fn successors_from_marginal(
    px: &[f64],
    block: &[SimplexVector],
) -> Vec<Option<SimplexVector>> {
    let controls = block[0].len();
    (0..controls)
        .map(|u| {
            let (col, z) = joint_column(px, block, u);
            (z > 0.0).then(|| SimplexVector(col.into_iter().map(|p| p / z).collect()))
        })
        .collect()
}

/// `ν(u | u_prev) = Σ_{x_prev, x} μ(u|u_prev, x) w(x|x_prev, u_prev) b(x_prev|u_prev)`.
pub fn output_distribution(
    b: &InformationState,
    mu: &ControlPolicy,
    w: &StageKernel,
    u_prev: usize,
) -> Result<SimplexVector> {
    check_policy(b, mu, w)?;
    let px = state_marginal(b, w, u_prev)?;
    Ok(output_from_marginal(&px, mu.block(u_prev)))
}

pub(crate) fn output_from_marginal(px: &[f64], block: &[SimplexVector]) -> SimplexVector {
    let mut nu = vec![0.0; block[0].len()];
    for (p, row) in px.iter().zip(block) {
        for (acc, q) in nu.iter_mut().zip(row.probs()) {
            *acc += p * q;
        }
    }
    let z: f64 = nu.iter().sum();
    SimplexVector(nu.into_iter().map(|v| v / z).collect())
}

/// Output distributions for every context.
pub fn output_distributions(
    b: &InformationState,
    mu: &ControlPolicy,
    w: &StageKernel,
) -> Result<OutputDistribution> {
    let rows = (0..b.contexts())
        .map(|c| output_distribution(b, mu, w, c))
        .collect::<Result<_>>()?;
    Ok(OutputDistribution {
        stage: b.stage,
        rows,
    })
}

/// Chain rule for the control marginal: `m'(u) = Σ_{u_prev} ν(u|u_prev) m(u_prev)`.
pub fn control_marginal_update(
    m: &ControlMarginal,
    nu: &OutputDistribution,
) -> Result<ControlMarginal> {
    check_stage(m.stage, nu.stage, "output distribution")?;
    if nu.rows.len() != m.dist.len() {
        return Err(Error::Shape("marginal and output distribution disagree on contexts".into()));
    }
    let mut next = vec![0.0; nu.rows[0].len()];
    for (weight, row) in m.dist.probs().iter().zip(&nu.rows) {
        for (acc, q) in next.iter_mut().zip(row.probs()) {
            *acc += weight * q;
        }
    }
    Ok(ControlMarginal {
        stage: m.stage + 1,
        dist: normalize(&next)?,
    })
}

/// Advances the memory-1 information state and the control marginal one stage.
///
/// Row `u` of the new state is `P(x_t | u_t = u)`: the per-context posteriors
/// from [`belief_update`] mixed with weights `P(u_prev | u) ∝ ν(u|u_prev) m(u_prev)`.
/// Controls with zero marginal probability get a uniform placeholder row.
pub fn next_information_state(
    b: &InformationState,
    mu: &ControlPolicy,
    w: &StageKernel,
    m: &ControlMarginal,
) -> Result<(InformationState, ControlMarginal)> {
    check_policy(b, mu, w)?;
    check_stage(b.stage, m.stage, "control marginal")?;
    let states = w.states();
    let controls = mu.controls();
    let mut joint = vec![vec![0.0; states]; controls];
    for u_prev in 0..b.contexts() {
        let weight = m.weight(u_prev);
        if weight == 0.0 {
            continue;
        }
        let px = state_marginal(b, w, u_prev)?;
        for (x, p) in px.iter().enumerate() {
            for (u, q) in mu.row(u_prev, x).probs().iter().enumerate() {
                joint[u][x] += weight * p * q;
            }
        }
    }
    let totals: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let rows = joint
        .iter()
        .zip(&totals)
        .map(|(r, z)| {
            if *z > 0.0 {
                SimplexVector(r.iter().map(|p| p / z).collect())
            } else {
                SimplexVector::uniform(states)
            }
        })
        .collect();
    Ok((
        InformationState {
            stage: b.stage + 1,
            rows,
        },
        ControlMarginal {
            stage: m.stage + 1,
            dist: normalize(&totals)?,
        },
    ))
}

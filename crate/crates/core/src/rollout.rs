//! The online forward pass.
//!
//! At every stage the engine solves a one-step lookahead problem per context at
//! the current information state, using the trained tables as the continuation,
//! assembles the stage policy, and propagates the information state and the
//! control marginal. The same forward machinery, with table lookups instead of
//! fresh solves, evaluates the full-horizon baseline.

use serde::{Deserialize, Serialize};

use crate::baa::{matched_output, q_evaluate, solve_stage, BaaConfig, ContinuationLookup, StageSolution, Terminal};
use crate::clock::Stopwatch;
use crate::error::{Error, Result};
use crate::grid::{build_uniform_grid, refine_from_trajectory, BeliefGrid, GridIndex};
use crate::info::{expected_distortion, lagrangian_stage_cost, stage_mutual_information};
use crate::offline::{train, OfflineArtifact, QTable, TableContinuation, TrainReport};
use crate::prob::{
    next_information_state, output_distributions, ControlMarginal, ControlPolicy, InformationState,
    OutputDistribution, SimplexVector,
};
use crate::problem::{InitialPolicy, Problem};

/// Contexts whose marginal weight is below this get a placeholder policy.
pub const ZERO_WEIGHT: f64 = 1e-12;

/// How the per-context stage policy is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Fresh stage solve at the online belief, kept only if it beats the base policy.
    #[default]
    Lookahead,
    /// Best of all stored grid policies at the online belief.
    GridPolicies,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub rounds: usize,
    /// Forward pass with stored grid policies only.
    pub baseline: bool,
    pub selection: Selection,
    pub solver: BaaConfig,
    /// Offline pool size; `0` uses the runtime default.
    pub workers: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            rounds: 1,
            baseline: false,
            selection: Selection::Lookahead,
            solver: BaaConfig::default(),
            workers: 0,
        }
    }
}

/// Where a context's stage policy came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicySource {
    Lookahead,
    Base,
    Stored(GridIndex),
}

/// The policy chosen for one context and its lookahead value.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextChoice {
    pub context: usize,
    pub mu: Vec<SimplexVector>,
    pub nu: SimplexVector,
    /// Lookahead value of `mu` with its matched output distribution.
    pub q_value: f64,
    /// Value of the base policy at the nearest grid point under the same continuation.
    pub base_q_value: f64,
    pub source: PolicySource,
    /// The fresh solve, when one was run.
    pub solution: Option<StageSolution>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub belief: InformationState,
    pub policy: ControlPolicy,
    pub output: OutputDistribution,
    pub marginal: ControlMarginal,
    pub stage_mi: f64,
    pub expected_distortion: f64,
    pub lagrangian_cost: f64,
    pub cumulative_di: f64,
    /// Marginal-averaged lookahead value of the selected policy.
    pub averaged_q: Option<f64>,
    /// Marginal-averaged value of the base policy under the same continuation.
    pub averaged_base_q: Option<f64>,
    pub wall_time_ms: f64,
}

impl PartialEq for StageRecord {
    fn eq(&self, o: &Self) -> bool {
        self.stage == o.stage
            && self.belief == o.belief
            && self.policy == o.policy
            && self.output == o.output
            && self.marginal == o.marginal
            && self.stage_mi.to_bits() == o.stage_mi.to_bits()
            && self.expected_distortion.to_bits() == o.expected_distortion.to_bits()
            && self.lagrangian_cost.to_bits() == o.lagrangian_cost.to_bits()
            && self.cumulative_di.to_bits() == o.cumulative_di.to_bits()
            && self.averaged_q.map(f64::to_bits) == o.averaged_q.map(f64::to_bits)
            && self.averaged_base_q.map(f64::to_bits) == o.averaged_base_q.map(f64::to_bits)
    }
}

/// Stage records for `t = 0..=N`; equality ignores wall times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutTrajectory {
    pub stages: Vec<StageRecord>,
    pub total_di: f64,
    pub total_lagrangian: f64,
}

impl RolloutTrajectory {
    pub fn stage_mi(&self) -> Vec<f64> {
        self.stages.iter().map(|s| s.stage_mi).collect()
    }

    pub fn mean_stage_mi(&self) -> f64 {
        self.total_di / self.stages.len() as f64
    }

    pub fn wall_time_ms(&self) -> f64 {
        self.stages.iter().map(|s| s.wall_time_ms).sum()
    }
}

/// Continuation used by the lookahead at one stage.
#[derive(Debug, Clone, Copy)]
pub enum StageContinuation<'a> {
    Terminal,
    Table(TableContinuation<'a>),
}

impl ContinuationLookup for StageContinuation<'_> {
    fn value(&self, successor: &InformationState, u: usize) -> f64 {
        match self {
            StageContinuation::Terminal => Terminal.value(successor, u),
            StageContinuation::Table(t) => t.value(successor, u),
        }
    }
}

fn stored_table(artifact: &OfflineArtifact, stage: usize) -> Result<&QTable> {
    artifact
        .table(stage)
        .ok_or_else(|| Error::Precondition(format!("artifact has no table for stage {stage}")))
}

/// Stage `N` uses zero; stages inside the trained window read the table of
/// the next stage; earlier stages all read the table of the first trained stage.
pub fn continuation_for(artifact: &OfflineArtifact, t: usize) -> Result<StageContinuation<'_>> {
    let n = artifact.header.horizon;
    if t >= n {
        return Ok(StageContinuation::Terminal);
    }
    let table = stored_table(artifact, (t + 1).max(artifact.first_stage()))?;
    Ok(StageContinuation::Table(TableContinuation {
        grid: &artifact.grid,
        table,
    }))
}

/// The table holding the base policy used at stage `t`.
pub fn base_table(artifact: &OfflineArtifact, t: usize) -> Result<&QTable> {
    stored_table(artifact, t.max(artifact.first_stage()))
}

fn check_artifact(problem: &Problem, artifact: &OfflineArtifact) -> Result<()> {
    let h = &artifact.header;
    if h.horizon != problem.horizon() || h.states != problem.states() || h.controls != problem.controls() {
        return Err(Error::Shape("artifact was trained for a different problem shape".into()));
    }
    Ok(())
}

/// Lagrangian value of `mu` with its matched output distribution.
fn evaluate(
    problem: &Problem,
    b: &InformationState,
    t: usize,
    c: usize,
    mu: &[SimplexVector],
    cont: &dyn ContinuationLookup,
) -> Result<(SimplexVector, f64)> {
    let input = problem.stage_input(b, t, c);
    let nu = matched_output(&input, mu)?;
    let q = q_evaluate(&input, mu, &nu, cont)?;
    Ok((nu, q))
}

/// One-step lookahead at online belief `b` for every context of stage `t ≥ 1`.
pub fn lookahead_q(
    problem: &Problem,
    artifact: &OfflineArtifact,
    b: &InformationState,
    t: usize,
    cfg: &RolloutConfig,
) -> Result<Vec<ContextChoice>> {
    check_artifact(problem, artifact)?;
    if t == 0 || t > problem.horizon() {
        return Err(Error::Precondition(format!(
            "lookahead stage {t} outside 1..={}",
            problem.horizon()
        )));
    }
    let cont = continuation_for(artifact, t)?;
    let base = base_table(artifact, t)?;
    let nearest = artifact.grid.nearest(b);
    (0..b.contexts())
        .map(|c| {
            let base_mu = &base.entry(nearest).contexts[c].mu_star;
            let (base_nu, base_q) = evaluate(problem, b, t, c, base_mu, &cont)?;
            let base_choice = ContextChoice {
                context: c,
                mu: base_mu.clone(),
                nu: base_nu,
                q_value: base_q,
                base_q_value: base_q,
                source: PolicySource::Base,
                solution: None,
            };
            match cfg.selection {
                Selection::Lookahead => {
                    let sol = solve_stage(&problem.stage_input(b, t, c), &cont, &cfg.solver)?;
                    let (nu, q) = evaluate(problem, b, t, c, &sol.mu_star, &cont)?;
                    if q <= base_q {
                        Ok(ContextChoice {
                            context: c,
                            mu: sol.mu_star.clone(),
                            nu,
                            q_value: q,
                            base_q_value: base_q,
                            source: PolicySource::Lookahead,
                            solution: Some(sol),
                        })
                    } else {
                        Ok(ContextChoice {
                            solution: Some(sol),
                            ..base_choice
                        })
                    }
                }
                Selection::GridPolicies => {
                    let mut best = base_choice;
                    for (i, e) in base.entries().iter().enumerate() {
                        let mu = &e.contexts[c].mu_star;
                        let (nu, q) = evaluate(problem, b, t, c, mu, &cont)?;
                        if q < best.q_value {
                            best = ContextChoice {
                                context: c,
                                mu: mu.clone(),
                                nu,
                                q_value: q,
                                base_q_value: base_q,
                                source: PolicySource::Stored(GridIndex(i)),
                                solution: None,
                            };
                        }
                    }
                    Ok(best)
                }
            }
        })
        .collect()
}

/// Assembles the stage policy from per-context choices.
///
/// Returns the policy and the marginal-averaged lookahead value.
pub fn rollout_policy_select(
    stage: usize,
    choices: &[ContextChoice],
    m: &ControlMarginal,
) -> Result<(ControlPolicy, f64)> {
    if choices.len() != m.dist.len() {
        return Err(Error::Shape("need one choice per context".into()));
    }
    let mut averaged = 0.0;
    let blocks = choices
        .iter()
        .enumerate()
        .map(|(c, choice)| {
            let w = m.weight(c);
            if w < ZERO_WEIGHT {
                let controls = choice.nu.len();
                vec![SimplexVector::uniform(controls); choice.mu.len()]
            } else {
                averaged += w * choice.q_value;
                choice.mu.clone()
            }
        })
        .collect();
    Ok((ControlPolicy::from_blocks(stage, blocks)?, averaged))
}

fn averaged_base(choices: &[ContextChoice], m: &ControlMarginal) -> f64 {
    choices
        .iter()
        .enumerate()
        .filter(|(c, _)| m.weight(*c) >= ZERO_WEIGHT)
        .map(|(c, ch)| m.weight(c) * ch.base_q_value)
        .sum()
}

fn initial_policy(
    problem: &Problem,
    artifact: &OfflineArtifact,
    cfg: &RolloutConfig,
) -> Result<(ControlPolicy, Option<f64>)> {
    match &problem.initial_policy {
        InitialPolicy::Fixed(mu0) => Ok((mu0.clone(), None)),
        InitialPolicy::Optimize => {
            let b = InformationState::initial();
            let cont = continuation_for(artifact, 0)?;
            let sol = solve_stage(&problem.stage_input(&b, 0, 0), &cont, &cfg.solver)?;
            let (_, q) = evaluate(problem, &b, 0, 0, &sol.mu_star, &cont)?;
            Ok((ControlPolicy::from_blocks(0, vec![sol.mu_star])?, Some(q)))
        }
    }
}

fn baseline_policy(
    artifact: &OfflineArtifact,
    b: &InformationState,
    m: &ControlMarginal,
    t: usize,
) -> Result<ControlPolicy> {
    let table = base_table(artifact, t)?;
    let entry = table.entry(artifact.grid.nearest(b));
    let blocks = entry
        .contexts
        .iter()
        .enumerate()
        .map(|(c, e)| {
            if m.weight(c) < ZERO_WEIGHT {
                vec![SimplexVector::uniform(e.nu_star.len()); e.mu_star.len()]
            } else {
                e.mu_star.clone()
            }
        })
        .collect();
    ControlPolicy::from_blocks(t, blocks)
}

fn propagation(stage: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Propagation {
        stage,
        source: Box::new(e),
    }
}

/// Forward pass from the initial policy; `cfg.baseline` selects stored
/// policies instead of the lookahead.
pub fn run_forward(
    problem: &Problem,
    artifact: &OfflineArtifact,
    cfg: &RolloutConfig,
) -> Result<RolloutTrajectory> {
    check_artifact(problem, artifact)?;
    let n = problem.horizon();
    let mut b = InformationState::initial();
    let mut m = ControlMarginal::initial();
    let mut stages = Vec::with_capacity(n + 1);
    let mut cumulative_di = 0.0;
    let mut total_lagrangian = 0.0;
    for t in 0..=n {
        let clock = Stopwatch::start();
        let (policy, averaged_q, averaged_base_q) = if t == 0 {
            let (mu, q) = initial_policy(problem, artifact, cfg)?;
            (mu, q, None)
        } else if cfg.baseline {
            (baseline_policy(artifact, &b, &m, t)?, None, None)
        } else {
            let choices = lookahead_q(problem, artifact, &b, t, cfg).map_err(propagation(t))?;
            let (mu, q) = rollout_policy_select(t, &choices, &m)?;
            (mu, Some(q), Some(averaged_base(&choices, &m)))
        };
        let w = problem.kernel.stage(t);
        let step = || -> Result<_> {
            let output = output_distributions(&b, &policy, w)?;
            let mi = stage_mutual_information(&b, &policy, w, &output, &m)?;
            let dist = expected_distortion(&b, &policy, w, &problem.distortion, &m)?;
            let next = if t < n {
                Some(next_information_state(&b, &policy, w, &m)?)
            } else {
                None
            };
            Ok((output, mi, dist, next))
        };
        let (output, mi, dist, next) = step().map_err(propagation(t))?;
        let lagrangian = lagrangian_stage_cost(
            mi,
            dist,
            problem.schedule.multiplier(t),
            problem.schedule.threshold(t),
        );
        cumulative_di += mi;
        total_lagrangian += lagrangian;
        let wall_time_ms = clock.elapsed_ms();
        let (b_next, m_next) = match next {
            Some(pair) => pair,
            None => (b.clone(), m.clone()),
        };
        stages.push(StageRecord {
            stage: t,
            belief: std::mem::replace(&mut b, b_next),
            policy,
            output,
            marginal: std::mem::replace(&mut m, m_next),
            stage_mi: mi,
            expected_distortion: dist,
            lagrangian_cost: lagrangian,
            cumulative_di,
            averaged_q,
            averaged_base_q,
            wall_time_ms,
        });
    }
    Ok(RolloutTrajectory {
        stages,
        total_di: cumulative_di,
        total_lagrangian,
    })
}

/// The rollout forward pass with lookahead at every online stage.
pub fn run_online(
    problem: &Problem,
    artifact: &OfflineArtifact,
    cfg: &RolloutConfig,
) -> Result<RolloutTrajectory> {
    run_forward(
        problem,
        artifact,
        &RolloutConfig {
            baseline: false,
            ..cfg.clone()
        },
    )
}

/// One round of repeated rollout.
#[derive(Debug, Clone)]
pub struct RoundResult {
    pub round: usize,
    pub train: TrainReport,
    pub trajectory: RolloutTrajectory,
    pub online_wall_ms: f64,
}

/// Train and roll out `cfg.rounds` times, refining the grid to the visited
/// range after each round.
pub fn run_repeated(
    problem: &Problem,
    levels: usize,
    rolling_horizon: usize,
    cfg: &RolloutConfig,
) -> Result<Vec<RoundResult>> {
    if cfg.rounds == 0 {
        return Err(Error::Precondition("at least one rollout round is required".into()));
    }
    let mut grid: BeliefGrid = build_uniform_grid(levels, problem.states(), problem.controls())?;
    let mut rounds: Vec<RoundResult> = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        if let Some(prev) = rounds.last() {
            grid = refine_from_trajectory(&prev.trajectory, levels)?;
        }
        let report = train(problem, &grid, rolling_horizon, &cfg.solver, cfg.workers)?;
        let clock = Stopwatch::start();
        let trajectory = run_online(problem, &report.artifact, cfg)?;
        rounds.push(RoundResult {
            round,
            train: report,
            trajectory,
            online_wall_ms: clock.elapsed_ms(),
        });
    }
    Ok(rounds)
}

/// Full-horizon training on the uniform grid followed by a table-lookup forward pass.
pub fn run_baseline(
    problem: &Problem,
    levels: usize,
    cfg: &RolloutConfig,
) -> Result<(TrainReport, RolloutTrajectory)> {
    let grid = build_uniform_grid(levels, problem.states(), problem.controls())?;
    let report = train(problem, &grid, problem.horizon(), &cfg.solver, cfg.workers)?;
    let trajectory = run_forward(
        problem,
        &report.artifact,
        &RolloutConfig {
            baseline: true,
            ..cfg.clone()
        },
    )?;
    Ok((report, trajectory))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn choice(c: usize, q: f64) -> ContextChoice {
        ContextChoice {
            context: c,
            mu: vec![SimplexVector::binary(0.9).unwrap(), SimplexVector::binary(0.2).unwrap()],
            nu: SimplexVector::uniform(2),
            q_value: q,
            base_q_value: q,
            source: PolicySource::Lookahead,
            solution: None,
        }
    }

    fn marginal(p: f64) -> ControlMarginal {
        ControlMarginal {
            stage: 2,
            dist: SimplexVector::binary(p).unwrap(),
        }
    }

    #[test]
    fn averaged_value_is_marginal_weighted() {
        let (_, q) = rollout_policy_select(2, &[choice(0, 0.5), choice(1, 1.0)], &marginal(0.6)).unwrap();
        assert!((q - 0.7).abs() < 1e-15);
    }

    #[test]
    fn zero_weight_context_gets_placeholder() {
        let (mu, q) = rollout_policy_select(2, &[choice(0, 0.5), choice(1, 9.0)], &marginal(1.0)).unwrap();
        assert_eq!(q, 0.5);
        assert_eq!(mu.row(1, 0), &SimplexVector::uniform(2));
        assert_eq!(mu.row(1, 1), &SimplexVector::uniform(2));
        assert_eq!(mu.row(0, 0), &SimplexVector::binary(0.9).unwrap());
    }

    fn problem(horizon: usize, s: f64) -> Problem {
        Problem::binary_symmetric(
            0.4,
            0.8,
            SimplexVector::uniform(2),
            InitialPolicy::Fixed(
                ControlPolicy::new(
                    0,
                    2,
                    vec![SimplexVector::binary(0.8).unwrap(), SimplexVector::binary(0.2).unwrap()],
                )
                .unwrap(),
            ),
            s,
            0.1,
            horizon,
        )
        .unwrap()
    }

    #[test]
    fn continuation_stage_rule() {
        let p = problem(6, -2.0);
        let grid = build_uniform_grid(3, 2, 2).unwrap();
        let a = train(&p, &grid, 2, &BaaConfig::default(), 1).unwrap().artifact;
        assert!(matches!(continuation_for(&a, 6).unwrap(), StageContinuation::Terminal));
        let stage_of = |t| match continuation_for(&a, t).unwrap() {
            StageContinuation::Table(tc) => tc.table.stage,
            StageContinuation::Terminal => usize::MAX,
        };
        assert_eq!(stage_of(5), 6);
        assert_eq!(stage_of(4), 5);
        assert_eq!(stage_of(1), 5);
        assert_eq!(base_table(&a, 1).unwrap().stage, 5);
        assert_eq!(base_table(&a, 6).unwrap().stage, 6);
    }

    #[test]
    fn trajectory_bookkeeping() {
        let p = problem(6, -2.0);
        let grid = build_uniform_grid(4, 2, 2).unwrap();
        let a = train(&p, &grid, 2, &BaaConfig::default(), 1).unwrap().artifact;
        let traj = run_online(&p, &a, &RolloutConfig::default()).unwrap();
        assert_eq!(traj.stages.len(), 7);
        let mut acc = 0.0;
        for s in &traj.stages {
            acc += s.stage_mi;
            assert_eq!(s.cumulative_di, acc);
        }
        assert_eq!(traj.total_di, traj.stage_mi().iter().sum::<f64>());
        let lag: f64 = traj
            .stages
            .iter()
            .map(|s| s.stage_mi + 2.0 * (s.expected_distortion - 0.1))
            .sum();
        assert!((traj.total_lagrangian - lag).abs() < 1e-12);
        for s in traj.stages.iter().skip(1) {
            assert!(s.averaged_q.unwrap() <= s.averaged_base_q.unwrap() + 1e-9);
        }
    }

    #[test]
    fn one_stage_horizon_matches_direct_solve() {
        let p = problem(1, -2.0);
        let grid = build_uniform_grid(5, 2, 2).unwrap();
        let a = train(&p, &grid, 1, &BaaConfig::default(), 1).unwrap().artifact;
        let traj = run_online(&p, &a, &RolloutConfig::default()).unwrap();
        let s1 = &traj.stages[1];
        for c in 0..2 {
            if s1.marginal.weight(c) < ZERO_WEIGHT {
                continue;
            }
            let input = p.stage_input(&s1.belief, 1, c);
            let sol = solve_stage(&input, &Terminal, &BaaConfig::default()).unwrap();
            for (row, expect) in s1.policy.block(c).iter().zip(&sol.mu_star) {
                assert!(row.l1_distance(expect) < 1e-6 || s1.averaged_q <= s1.averaged_base_q);
            }
        }
    }

    #[test]
    fn baseline_and_rollout_agree_on_unit_horizon_grid_points() {
        let p = problem(1, -2.0);
        let cfg = RolloutConfig::default();
        let (_, base) = run_baseline(&p, 5, &cfg).unwrap();
        let rounds = run_repeated(&p, 5, 1, &cfg).unwrap();
        assert_eq!(rounds.len(), 1);
        assert!(rounds[0].trajectory.total_lagrangian <= base.total_lagrangian + 1e-9);
    }
}

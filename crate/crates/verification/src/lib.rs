//! Randomized invariant checks shared by the acceptance suite.
//!
//! Each check takes a small generated case, rebuilds the instance from its
//! seed and returns `Err` with a description on the first violation.
//! [`run_property`] drives a check through proptest's runner.

use dirollout::info::stage_mutual_information;
use dirollout::offline::{artifact_to_string, OfflineArtifact};
use dirollout::prob::{next_information_state, output_distributions, StageKernel, TransitionKernel};
use dirollout::rollout::{run_repeated, RoundResult};
use dirollout::{
    build_uniform_grid, run_online, train, ControlMarginal, ControlPolicy, InformationState, InitialPolicy,
    Problem, RolloutConfig, SimplexVector,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestError, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<(), String>;

/// Tolerance on the sum of every distribution.
pub const SUM_TOL: f64 = 1e-9;
/// Agreement between propagated beliefs and the enumerated joint.
pub const ENUMERATION_TOL: f64 = 1e-10;
/// Largest total directed information allowed with the constraint switched off.
pub const ZERO_MULTIPLIER_DI: f64 = 1e-8;

/// A small binary problem for train-and-roll-out properties.
#[derive(Debug, Clone)]
pub struct TinyCase {
    pub seed: u64,
    pub horizon: usize,
    pub levels: usize,
    pub rolling_horizon: usize,
    pub optimize_initial: bool,
}

pub fn tiny_case() -> impl Strategy<Value = TinyCase> {
    (any::<u64>(), 1usize..=4, 2usize..=4, any::<bool>()).prop_flat_map(|(seed, horizon, levels, optimize_initial)| {
        (1..=horizon).prop_map(move |rolling_horizon| TinyCase {
            seed,
            horizon,
            levels,
            rolling_horizon,
            optimize_initial,
        })
    })
}

/// A random chain with up to three states and controls for enumeration checks.
#[derive(Debug, Clone)]
pub struct ChainCase {
    pub seed: u64,
    pub states: usize,
    pub controls: usize,
    pub horizon: usize,
}

pub fn chain_case() -> impl Strategy<Value = ChainCase> {
    (any::<u64>(), 2usize..=3, 2usize..=3, 1usize..=3).prop_map(|(seed, states, controls, horizon)| ChainCase {
        seed,
        states,
        controls,
        horizon,
    })
}

fn random_simplex(rng: &mut ChaCha8Rng, n: usize) -> SimplexVector {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    dirollout::prob::normalize(&raw).expect("positive weights")
}

fn random_policy(rng: &mut ChaCha8Rng, stage: usize, contexts: usize, states: usize, controls: usize) -> ControlPolicy {
    let rows = (0..contexts * states).map(|_| random_simplex(rng, controls)).collect();
    ControlPolicy::new(stage, states, rows).expect("consistent shape")
}

/// The binary problem a [`TinyCase`] describes, with multiplier `s` if given.
pub fn tiny_problem(case: &TinyCase, s: Option<f64>) -> Problem {
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let alpha0 = rng.random_range(0.05..0.95);
    let alpha1 = rng.random_range(0.05..0.95);
    let p0 = SimplexVector::binary(rng.random_range(0.1..0.9)).expect("in range");
    let s = s.unwrap_or_else(|| rng.random_range(-4.0..-0.5));
    let d = rng.random_range(0.0..0.3);
    let initial = if case.optimize_initial {
        InitialPolicy::Optimize
    } else {
        InitialPolicy::Fixed(random_policy(&mut rng, 0, 1, 2, 2))
    };
    Problem::binary_symmetric(alpha0, alpha1, p0, initial, s, d, case.horizon).expect("valid parameters")
}

fn simplex_ok(what: &str, p: &[f64]) -> Check {
    let sum: f64 = p.iter().sum();
    if p.iter().any(|x| !(0.0..=1.0).contains(x)) || (sum - 1.0).abs() > SUM_TOL {
        return Err(format!("{what} is not a distribution: {p:?}"));
    }
    Ok(())
}

fn err(e: dirollout::Error) -> String {
    e.to_string()
}

fn artifact_text(a: &OfflineArtifact) -> Result<String, String> {
    artifact_to_string(a).map_err(err)
}

fn cfg(workers: usize) -> RolloutConfig {
    RolloutConfig {
        workers,
        ..RolloutConfig::default()
    }
}

/// Every distribution stored in the artifact or produced by the forward pass is normalized.
pub fn check_normalization(case: &TinyCase) -> Check {
    let problem = tiny_problem(case, None);
    let grid = build_uniform_grid(case.levels, 2, 2).map_err(err)?;
    let report = train(&problem, &grid, case.rolling_horizon, &Default::default(), 1).map_err(err)?;
    for table in &report.artifact.tables {
        for (i, entry) in table.entries().iter().enumerate() {
            for (c, ctx) in entry.contexts.iter().enumerate() {
                let at = format!("stage {} point {i} context {c}", table.stage);
                simplex_ok(&format!("{at} output"), ctx.nu_star.probs())?;
                for row in &ctx.mu_star {
                    simplex_ok(&format!("{at} policy row"), row.probs())?;
                }
            }
        }
    }
    let traj = run_online(&problem, &report.artifact, &cfg(1)).map_err(err)?;
    for st in &traj.stages {
        let t = st.stage;
        simplex_ok(&format!("marginal at {t}"), st.marginal.dist.probs())?;
        for row in st.belief.rows() {
            simplex_ok(&format!("belief row at {t}"), row.probs())?;
        }
        for row in st.policy.rows() {
            simplex_ok(&format!("policy row at {t}"), row.probs())?;
        }
        for row in &st.output.rows {
            simplex_ok(&format!("output row at {t}"), row.probs())?;
        }
    }
    Ok(())
}

/// With `s ≡ 0` the optimal controls ignore the state, so no information flows.
pub fn check_zero_multiplier(case: &TinyCase) -> Check {
    let case = TinyCase {
        optimize_initial: true,
        ..case.clone()
    };
    let problem = tiny_problem(&case, Some(0.0));
    let grid = build_uniform_grid(case.levels, 2, 2).map_err(err)?;
    let artifact = train(&problem, &grid, case.rolling_horizon, &Default::default(), 1)
        .map_err(err)?
        .artifact;
    let traj = run_online(&problem, &artifact, &cfg(1)).map_err(err)?;
    if !(traj.total_di <= ZERO_MULTIPLIER_DI) {
        return Err(format!("total directed information {:e} with s = 0", traj.total_di));
    }
    Ok(())
}

/// Artifacts and trajectories are bitwise identical across runs and worker counts.
pub fn check_determinism(case: &TinyCase) -> Check {
    let problem = tiny_problem(case, None);
    let run = |workers: usize| -> Result<Vec<RoundResult>, String> {
        run_repeated(
            &problem,
            case.levels,
            case.rolling_horizon,
            &RolloutConfig {
                rounds: 2,
                ..cfg(workers)
            },
        )
        .map_err(err)
    };
    let reference = run(1)?;
    for workers in [1, 3] {
        let other = run(workers)?;
        for (a, b) in reference.iter().zip(&other) {
            if artifact_text(&a.train.artifact)? != artifact_text(&b.train.artifact)? {
                return Err(format!("round {} artifact differs with {workers} workers", a.round));
            }
            if a.trajectory != b.trajectory {
                return Err(format!("round {} trajectory differs with {workers} workers", a.round));
            }
        }
    }
    Ok(())
}

/// Propagated information states, control marginals and stage mutual
/// information agree with exhaustive enumeration of the joint over
/// `(x_0, u_0, …, x_t, u_t)`.
pub fn check_belief_enumeration(case: &ChainCase) -> Check {
    let (nx, nu, n) = (case.states, case.controls, case.horizon);
    let mut rng = ChaCha8Rng::seed_from_u64(case.seed);
    let p0 = random_simplex(&mut rng, nx);
    let mut stages = vec![StageKernel::initial(p0.clone())];
    for _ in 0..n {
        let rows = (0..nx * nu).map(|_| random_simplex(&mut rng, nx)).collect();
        stages.push(StageKernel::new(nx, nu, rows).map_err(err)?);
    }
    let kernel = TransitionKernel::new(stages).map_err(err)?;
    let policies: Vec<ControlPolicy> = (0..=n)
        .map(|t| random_policy(&mut rng, t, if t == 0 { 1 } else { nu }, nx, nu))
        .collect();

    // joint[t][(u_prev * nx + x) * nu + u] = P(u_{t−1}, x_t, u_t), with u_{−1} = 0
    let mut joint = vec![vec![0.0; nu * nx * nu]; n + 1];
    enumerate(&kernel, &policies, &mut joint, 0, 0, 0, 1.0, nx, nu);

    let mut b = InformationState::initial();
    let mut m = ControlMarginal::initial();
    for t in 0..=n {
        let w = kernel.stage(t);
        let mu = &policies[t];
        let out = output_distributions(&b, mu, w).map_err(err)?;
        let mi = stage_mutual_information(&b, mu, w, &out, &m).map_err(err)?;
        let j = &joint[t];
        let idx = |up: usize, x: usize, u: usize| (up * nx + x) * nu + u;
        let contexts = if t == 0 { 1 } else { nu };
        let mut mi_enum = 0.0;
        for up in 0..contexts {
            let p_up: f64 = (0..nx).flat_map(|x| (0..nu).map(move |u| (x, u))).map(|(x, u)| j[idx(up, x, u)]).sum();
            for x in 0..nx {
                let p_up_x: f64 = (0..nu).map(|u| j[idx(up, x, u)]).sum();
                for u in 0..nu {
                    let p_up_u: f64 = (0..nx).map(|x2| j[idx(up, x2, u)]).sum();
                    let p = j[idx(up, x, u)];
                    if p > 0.0 {
                        mi_enum += p * (p * p_up / (p_up_x * p_up_u)).ln();
                    }
                }
            }
        }
        if (mi - mi_enum).abs() > ENUMERATION_TOL {
            return Err(format!("stage {t}: mutual information {mi} vs enumerated {mi_enum}"));
        }
        if t == n {
            break;
        }
        let (b_next, m_next) = next_information_state(&b, mu, w, &m).map_err(err)?;
        for u in 0..nu {
            let p_u: f64 = (0..contexts).flat_map(|up| (0..nx).map(move |x| (up, x))).map(|(up, x)| j[idx(up, x, u)]).sum();
            if (m_next.dist[u] - p_u).abs() > ENUMERATION_TOL {
                return Err(format!("stage {}: marginal of u = {u} is {} vs enumerated {p_u}", t + 1, m_next.dist[u]));
            }
            for x in 0..nx {
                let p_xu: f64 = (0..contexts).map(|up| j[idx(up, x, u)]).sum();
                let posterior = p_xu / p_u;
                let got = b_next.row(u)[x];
                if (got - posterior).abs() > ENUMERATION_TOL {
                    return Err(format!(
                        "stage {}: P(x = {x} | u = {u}) is {got} vs enumerated {posterior}",
                        t + 1
                    ));
                }
            }
        }
        b = b_next;
        m = m_next;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn enumerate(
    kernel: &TransitionKernel,
    policies: &[ControlPolicy],
    joint: &mut [Vec<f64>],
    t: usize,
    x_prev: usize,
    u_prev: usize,
    p: f64,
    nx: usize,
    nu: usize,
) {
    if t >= joint.len() {
        return;
    }
    let w = kernel.stage(t);
    let ctx = if t == 0 { 0 } else { u_prev };
    for x in 0..nx {
        let px = p * w.row(if t == 0 { 0 } else { x_prev }, ctx)[x];
        for u in 0..nu {
            let pxu = px * policies[t].row(ctx, x)[u];
            joint[t][(ctx * nx + x) * nu + u] += pxu;
            enumerate(kernel, policies, joint, t + 1, x, u, pxu, nx, nu);
        }
    }
}

/// Runs `check` on `cases` generated inputs; returns the number of cases run
/// or the minimal failing input and its message.
pub fn run_property<S>(name: &str, cases: u32, strategy: S, check: impl Fn(&S::Value) -> Check) -> Result<u32, String>
where
    S: Strategy,
    S::Value: std::fmt::Debug,
{
    let config = Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    };
    let mut runner = TestRunner::new_with_rng(config, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let outcome = runner.run(&strategy, |case| check(&case).map_err(TestCaseError::fail));
    match outcome {
        Ok(()) => Ok(cases),
        Err(TestError::Fail(reason, case)) => Err(format!("{name}: {reason} for {case:?}")),
        Err(TestError::Abort(reason)) => Err(format!("{name}: aborted: {reason}")),
    }
}

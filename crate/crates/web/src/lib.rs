//! Browser bindings for the demo page in `www/`.
//!
//! Each exported function takes plain numbers and returns a JSON string, so
//! the page needs no generated TypeScript glue beyond `JSON.parse`. The same
//! functions are callable natively, which is how they are tested.

use dirollout::baa::{solve_stage_traced, Terminal};
use dirollout::oracle::{achieved_point, analytic_rd_point, StageInstance};
use dirollout::{
    run_baseline, run_repeated, BaaConfig, ControlPolicy, InformationState, InitialPolicy, Problem, RolloutConfig,
    RolloutTrajectory, SimplexVector, StageInput, StageKernel,
};
use dirollout::info::DistortionFunction;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Largest horizon the comparison accepts; keeps a page interaction under a few seconds.
pub const MAX_DEMO_HORIZON: usize = 60;
pub const MAX_DEMO_LEVELS: usize = 24;

#[derive(Debug, Clone, Serialize)]
pub struct RdPoint {
    pub slope: f64,
    pub distortion: f64,
    pub rate_nats: f64,
    pub analytic_distortion: f64,
    pub analytic_rate_nats: f64,
    pub iterations: usize,
}

/// Solves the one-stage symmetric binary problem at `points` slopes spread
/// evenly over `[s_min, s_max]` and pairs each result with the closed form.
pub fn rd_curve(s_min: f64, s_max: f64, points: usize) -> Result<Vec<RdPoint>, String> {
    if !(s_min < s_max && s_max < 0.0) || !(2..=200).contains(&points) {
        return Err("need s_min < s_max < 0 and 2..=200 points".into());
    }
    let cfg = BaaConfig::with_epsilon(1e-8);
    (0..points)
        .map(|k| {
            let s = s_min + (s_max - s_min) * k as f64 / (points - 1) as f64;
            let (d, r) = analytic_rd_point(s).map_err(|e| e.to_string())?;
            let inst = StageInstance::symmetric(s, d);
            let mut iterations = 0;
            let sol = solve_stage_traced(&inst.input(), &Terminal, &cfg, &mut |_| iterations += 1)
                .map_err(|e| e.to_string())?;
            let (dist, rate) = achieved_point(&inst.input(), &sol.mu_star).map_err(|e| e.to_string())?;
            Ok(RdPoint {
                slope: s,
                distortion: dist,
                rate_nats: rate,
                analytic_distortion: d,
                analytic_rate_nats: r,
                iterations,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub upper: f64,
    pub lower: f64,
    pub objective: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StageTrace {
    pub iterations: Vec<TracePoint>,
    pub q_value: f64,
    pub converged: bool,
    /// `μ*(u = 0 | x)` for `x = 0, 1`.
    pub policy_first_control: [f64; 2],
}

/// Traces one stage solve at belief `P(x_prev = 0 | u_prev = 0) = b`,
/// context 0, on the binary chain with flip probabilities `alpha0, alpha1`.
pub fn stage_trace(b: f64, alpha0: f64, alpha1: f64, s: f64, epsilon: f64) -> Result<StageTrace, String> {
    let belief = InformationState::new(
        1,
        vec![
            SimplexVector::binary(b).map_err(|e| e.to_string())?,
            SimplexVector::uniform(2),
        ],
    )
    .map_err(|e| e.to_string())?;
    let kernel = StageKernel::binary_symmetric(alpha0, alpha1).map_err(|e| e.to_string())?;
    let rho = DistortionFunction::hamming(2);
    let input = StageInput {
        belief: &belief,
        kernel: &kernel,
        context: 0,
        multiplier: s,
        threshold: 0.0,
        distortion: &rho,
    };
    let cfg = BaaConfig {
        max_iterations: 5_000,
        ..BaaConfig::with_epsilon(epsilon)
    };
    let mut iterations = Vec::new();
    let sol = solve_stage_traced(&input, &Terminal, &cfg, &mut |r| {
        iterations.push(TracePoint {
            iteration: r.iteration,
            upper: r.upper,
            lower: r.lower,
            objective: r.bounded_objective,
            gap: r.gap,
        })
    })
    .map_err(|e| e.to_string())?;
    Ok(StageTrace {
        iterations,
        q_value: sol.q_value,
        converged: sol.converged,
        policy_first_control: [sol.mu_star[0][0], sol.mu_star[1][0]],
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Series {
    pub stage_mi_nats: Vec<f64>,
    pub lagrangian_stage_cost: Vec<f64>,
    pub total_lagrangian: f64,
    pub directed_information_nats: f64,
}

impl From<&RolloutTrajectory> for Series {
    fn from(t: &RolloutTrajectory) -> Self {
        Self {
            stage_mi_nats: t.stage_mi(),
            lagrangian_stage_cost: t.stages.iter().map(|s| s.lagrangian_cost).collect(),
            total_lagrangian: t.total_lagrangian,
            directed_information_nats: t.total_di,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub rollout: Series,
    pub baseline: Series,
}

/// Rollout with truncation `rolling_horizon` against full-horizon table
/// replay on the binary chain, both on an `levels`-point grid per context.
pub fn compare(
    alpha0: f64,
    alpha1: f64,
    s: f64,
    d: f64,
    horizon: usize,
    levels: usize,
    rolling_horizon: usize,
) -> Result<Comparison, String> {
    if horizon > MAX_DEMO_HORIZON || levels > MAX_DEMO_LEVELS {
        return Err(format!(
            "the demo caps the horizon at {MAX_DEMO_HORIZON} and the grid at {MAX_DEMO_LEVELS} levels"
        ));
    }
    let mu0 = ControlPolicy::new(
        0,
        2,
        vec![
            SimplexVector::binary(0.8).map_err(|e| e.to_string())?,
            SimplexVector::binary(0.2).map_err(|e| e.to_string())?,
        ],
    )
    .map_err(|e| e.to_string())?;
    let problem = Problem::binary_symmetric(
        alpha0,
        alpha1,
        SimplexVector::uniform(2),
        InitialPolicy::Fixed(mu0),
        s,
        d,
        horizon,
    )
    .map_err(|e| e.to_string())?;
    let cfg = RolloutConfig {
        workers: 1,
        ..RolloutConfig::default()
    };
    let rounds = run_repeated(&problem, levels, rolling_horizon, &cfg).map_err(|e| e.to_string())?;
    let (_, baseline) = run_baseline(&problem, levels, &cfg).map_err(|e| e.to_string())?;
    Ok(Comparison {
        rollout: Series::from(&rounds[0].trajectory),
        baseline: Series::from(&baseline),
    })
}

fn to_json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let value = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = rdCurve)]
pub fn rd_curve_json(s_min: f64, s_max: f64, points: usize) -> Result<String, JsError> {
    to_json(rd_curve(s_min, s_max, points))
}

#[wasm_bindgen(js_name = stageTrace)]
pub fn stage_trace_json(b: f64, alpha0: f64, alpha1: f64, s: f64, epsilon: f64) -> Result<String, JsError> {
    to_json(stage_trace(b, alpha0, alpha1, s, epsilon))
}

#[wasm_bindgen(js_name = compare)]
pub fn compare_json(
    alpha0: f64,
    alpha1: f64,
    s: f64,
    d: f64,
    horizon: usize,
    levels: usize,
    rolling_horizon: usize,
) -> Result<String, JsError> {
    to_json(compare(alpha0, alpha1, s, d, horizon, levels, rolling_horizon))
}

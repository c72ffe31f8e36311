//! Per-stage alternating minimization.
//!
//! For one belief, one context `u_prev` and a continuation value of the next
//! stage, the stage objective
//!
//! ```text
//! Q(μ, ν) = Σ_{x,u} P(x) μ(u|x) [ ln(μ(u|x)/ν(u)) − s ρ(x,u) + Q_next(u) ] + s D
//! ```
//!
//! is minimized by alternating closed-form updates of the policy `μ` and the
//! output distribution `ν`. With `A(x,u) = exp(s ρ(x,u) − Q_next(u))` the
//! updates are `μ ∝ ν A` (row-wise in `x`) and `ν ← ν c` with
//! `c(u) = Σ_x P(x) A(x,u) / Σ_{u'} ν(u') A(x,u')`. The gap between the upper
//! and lower bounds on the optimum, `T_U − T_L`, certifies the stopping point.
//!
//! `Q_next(u)` depends on the successor belief, which depends on `μ`. The
//! continuation is re-read from the current iterate at the start of every
//! iteration and held fixed while the two updates run. If the continuation
//! values ever return to a set seen earlier in the same solve, they are frozen
//! for the rest of the solve, which makes the remaining iterations a plain
//! convex alternating minimization.
//!
//! Everything here works in the log domain: the exponent table is stored, and
//! `A` is only materialized on request.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::info::{context_distortion, kl_term, DistortionFunction};
use crate::prob::{
    floor_and_normalize, normalize, output_from_marginal, state_marginal, successors_from_marginal,
    InformationState, SimplexVector, StageKernel, DEFAULT_PROB_FLOOR,
};

/// Objective increase tolerated across a frozen-continuation sweep.
pub const REGRESSION_TOLERANCE: f64 = 1e-9;
/// Objective increase between iterations that is counted as a diagnostic.
pub const RISE_WARNING: f64 = 1e-6;

/// Continuation value `Q_{t+1}` of entering a successor information state in context `u`.
pub trait ContinuationLookup: Sync {
    fn value(&self, successor: &InformationState, u: usize) -> f64;
}

/// Zero continuation of the terminal stage.
#[derive(Debug, Clone, Copy, Default)]
pub struct Terminal;

impl ContinuationLookup for Terminal {
    fn value(&self, _: &InformationState, _: usize) -> f64 {
        0.0
    }
}

impl<F> ContinuationLookup for F
where
    F: Fn(&InformationState, usize) -> f64 + Sync,
{
    fn value(&self, successor: &InformationState, u: usize) -> f64 {
        self(successor, u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaaConfig {
    /// Stopping gap `T_U − T_L`, nats.
    pub epsilon: f64,
    pub max_iterations: usize,
    pub prob_floor: f64,
    /// Magnitude bound on every exponent of `A`.
    pub exponent_cap: f64,
    /// Starting output distribution; uniform when absent.
    pub initial_output: Option<SimplexVector>,
}

impl Default for BaaConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_iterations: 100_000,
            prob_floor: DEFAULT_PROB_FLOOR,
            exponent_cap: 700.0,
            initial_output: None,
        }
    }
}

impl BaaConfig {
    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::Precondition("epsilon must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Precondition("max_iterations must be at least 1".into()));
        }
        if !(self.prob_floor > 0.0 && self.prob_floor < 1e-3) {
            return Err(Error::Precondition("prob_floor must lie in (0, 1e-3)".into()));
        }
        if !(self.exponent_cap > 0.0) {
            return Err(Error::Precondition("exponent_cap must be positive".into()));
        }
        Ok(())
    }
}

/// Everything that pins down one per-context stage problem.
#[derive(Debug, Clone, Copy)]
pub struct StageInput<'a> {
    pub belief: &'a InformationState,
    pub kernel: &'a StageKernel,
    pub context: usize,
    pub multiplier: f64,
    pub threshold: f64,
    pub distortion: &'a DistortionFunction,
}

impl StageInput<'_> {
    fn prepare(&self) -> Result<Vec<f64>> {
        if !(self.multiplier <= 0.0) {
            return Err(Error::Precondition(format!(
                "multiplier {} violates s_t <= 0",
                self.multiplier
            )));
        }
        if self.distortion.states() != self.kernel.states() {
            return Err(Error::Shape("distortion table does not match the state alphabet".into()));
        }
        state_marginal(self.belief, self.kernel, self.context)
    }
}

/// Exponents `ln A(x,u) = s ρ(x,u) − Q_next(u)`, row-major in `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentTable {
    states: usize,
    controls: usize,
    exponents: Vec<f64>,
    continuation: Vec<f64>,
    /// Number of exponents clipped to the cap.
    pub capped: usize,
}

impl ExponentTable {
    pub fn exponent(&self, x: usize, u: usize) -> f64 {
        self.exponents[x * self.controls + u]
    }

    /// `A(x, u)`.
    pub fn factor(&self, x: usize, u: usize) -> f64 {
        self.exponent(x, u).exp()
    }

    /// The continuation values `Q_next(u)` that entered the table.
    pub fn continuation(&self) -> &[f64] {
        &self.continuation
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn controls(&self) -> usize {
        self.controls
    }

    fn row(&self, x: usize) -> &[f64] {
        &self.exponents[x * self.controls..(x + 1) * self.controls]
    }
}

/// Successor information state for every control; unreachable rows are uniform placeholders.
pub(crate) fn successor_state(px: &[f64], block: &[SimplexVector], stage: usize) -> InformationState {
    let rows = successors_from_marginal(px, block)
        .into_iter()
        .map(|s| s.unwrap_or_else(|| SimplexVector::uniform(px.len())))
        .collect();
    InformationState::new(stage, rows).expect("successor rows share the state alphabet")
}

fn continuation_values(
    px: &[f64],
    block: &[SimplexVector],
    stage: usize,
    cont: &dyn ContinuationLookup,
) -> Vec<f64> {
    let succ = successor_state(px, block, stage);
    (0..block[0].len()).map(|u| cont.value(&succ, u)).collect()
}

fn build_table(
    rho: &DistortionFunction,
    s: f64,
    continuation: Vec<f64>,
    cap: f64,
) -> ExponentTable {
    let states = rho.states();
    let controls = rho.controls();
    let mut capped = 0;
    let mut exponents = Vec::with_capacity(states * controls);
    for x in 0..states {
        for (u, q) in continuation.iter().enumerate() {
            let e = s * rho.get(x, u) - q;
            if e.abs() > cap {
                capped += 1;
                exponents.push(e.clamp(-cap, cap));
            } else {
                exponents.push(e);
            }
        }
    }
    ExponentTable {
        states,
        controls,
        exponents,
        continuation,
        capped,
    }
}

/// Builds the exponent table from the successor beliefs induced by `mu_current`.
pub fn exponent_factor(
    input: &StageInput<'_>,
    cont: &dyn ContinuationLookup,
    mu_current: &[SimplexVector],
    cap: f64,
) -> Result<ExponentTable> {
    let px = input.prepare()?;
    check_block(mu_current, px.len(), input.distortion.controls())?;
    let values = continuation_values(&px, mu_current, input.belief.stage + 1, cont);
    Ok(build_table(input.distortion, input.multiplier, values, cap))
}

fn check_block(block: &[SimplexVector], states: usize, controls: usize) -> Result<()> {
    if block.len() != states || block.iter().any(|r| r.len() != controls) {
        return Err(Error::Shape(format!(
            "policy block must be {states} rows over {controls} controls"
        )));
    }
    Ok(())
}

fn log_sum_exp(weights: &[f64], exps: &[f64]) -> f64 {
    let max = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = weights
        .iter()
        .zip(exps)
        .map(|(w, e)| w * (e - max).exp())
        .sum();
    max + sum.ln()
}

fn check_positive(nu: &SimplexVector) -> Result<()> {
    if nu.probs().iter().any(|p| *p <= 0.0) {
        return Err(Error::Precondition(
            "output distribution must have strictly positive components".into(),
        ));
    }
    Ok(())
}

/// Per-`x` normalizers `ln Σ_u ν(u) A(x,u)`.
fn normalizers(nu: &SimplexVector, a: &ExponentTable) -> Vec<f64> {
    (0..a.states).map(|x| log_sum_exp(nu.probs(), a.row(x))).collect()
}

/// Policy step: `μ(u|x) = ν(u) A(x,u) / Σ_{u'} ν(u') A(x,u')`.
pub fn policy_update(nu: &SimplexVector, a: &ExponentTable) -> Result<Vec<SimplexVector>> {
    check_positive(nu)?;
    if nu.len() != a.controls {
        return Err(Error::Shape("output distribution does not match the exponent table".into()));
    }
    let lse = normalizers(nu, a);
    Ok(policy_from(nu, a, &lse))
}

fn policy_from(nu: &SimplexVector, a: &ExponentTable, lse: &[f64]) -> Vec<SimplexVector> {
    (0..a.states)
        .map(|x| {
            let row: Vec<f64> = nu
                .probs()
                .iter()
                .zip(a.row(x))
                .map(|(q, e)| q * (e - lse[x]).exp())
                .collect();
            normalize(&row).expect("policy row has positive mass")
        })
        .collect()
}

/// `c(u) = Σ_x P(x) A(x,u) / Σ_{u'} ν(u') A(x,u')`.
fn c_factors(px: &[f64], a: &ExponentTable, lse: &[f64]) -> Vec<f64> {
    let mut c = vec![0.0; a.controls];
    for (x, p) in px.iter().enumerate() {
        for (cu, e) in c.iter_mut().zip(a.row(x)) {
            *cu += p * (e - lse[x]).exp();
        }
    }
    c
}

/// Output step: `ν'(u) = ν(u) c(u)`, renormalized.
pub fn output_update(
    input: &StageInput<'_>,
    nu: &SimplexVector,
    a: &ExponentTable,
) -> Result<SimplexVector> {
    check_positive(nu)?;
    let px = input.prepare()?;
    let lse = normalizers(nu, a);
    let c = c_factors(&px, a, &lse);
    let next: Vec<f64> = nu.probs().iter().zip(&c).map(|(q, cu)| q * cu).collect();
    normalize(&next)
}

/// `Σ_{x,u} P(x) μ [ln(μ/ν) − e(x,u)]` for an arbitrary per-`(x,u)` exponent.
fn frozen_objective(
    px: &[f64],
    mu: &[SimplexVector],
    nu: &SimplexVector,
    a: &ExponentTable,
    floor: f64,
) -> f64 {
    let mut g = 0.0;
    for (x, (p, row)) in px.iter().zip(mu).enumerate() {
        let mut inner = 0.0;
        for (u, q) in row.probs().iter().enumerate() {
            inner += kl_term(*q, nu[u], floor) - q * a.exponent(x, u);
        }
        g += p * inner;
    }
    g
}

/// Stage Q value of an iterate, with the continuation read from the
/// successor beliefs that `mu` itself induces.
pub fn q_evaluate(
    input: &StageInput<'_>,
    mu: &[SimplexVector],
    nu: &SimplexVector,
    cont: &dyn ContinuationLookup,
) -> Result<f64> {
    let px = input.prepare()?;
    check_block(mu, px.len(), input.distortion.controls())?;
    let values = continuation_values(&px, mu, input.belief.stage + 1, cont);
    Ok(q_with_values(&px, mu, nu, &values, input, DEFAULT_PROB_FLOOR))
}

fn q_with_values(
    px: &[f64],
    mu: &[SimplexVector],
    nu: &SimplexVector,
    values: &[f64],
    input: &StageInput<'_>,
    floor: f64,
) -> f64 {
    let s = input.multiplier;
    let mut q = 0.0;
    for (x, (p, row)) in px.iter().zip(mu).enumerate() {
        let mut inner = 0.0;
        for (u, m) in row.probs().iter().enumerate() {
            inner += kl_term(*m, nu[u], floor) + m * (values[u] - s * input.distortion.get(x, u));
        }
        q += p * inner;
    }
    q + s * input.threshold
}

/// Upper and lower bounds on the stage optimum at an iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub upper: f64,
    pub lower: f64,
    /// `T_U − T_L`.
    pub gap: f64,
}

fn bounds_from(
    px: &[f64],
    nu: &SimplexVector,
    lse: &[f64],
    c: &[f64],
    s: f64,
    d_s: f64,
) -> Bounds {
    let base: f64 = -px.iter().zip(lse).map(|(p, l)| p * l).sum::<f64>();
    let t_upper: f64 = -nu
        .probs()
        .iter()
        .zip(c)
        .map(|(q, cu)| if *cu > 0.0 { q * cu * cu.ln() } else { 0.0 })
        .sum::<f64>();
    // max_u ln c(u), first index on ties
    let mut best = f64::NEG_INFINITY;
    for cu in c {
        let l = cu.ln();
        if l > best {
            best = l;
        }
    }
    let t_lower = -best;
    Bounds {
        upper: base + t_upper + s * d_s,
        lower: base + t_lower + s * d_s,
        gap: t_upper - t_lower,
    }
}

/// Bounds at output iterate `nu` for the exponent table `a`; `d_s` is the
/// distortion that stands in for the optimal one.
pub fn bounds(
    input: &StageInput<'_>,
    nu: &SimplexVector,
    a: &ExponentTable,
    d_s: f64,
) -> Result<Bounds> {
    check_positive(nu)?;
    let px = input.prepare()?;
    let lse = normalizers(nu, a);
    let c = c_factors(&px, a, &lse);
    Ok(bounds_from(&px, nu, &lse, &c, input.multiplier, d_s))
}

/// One logged iteration of [`solve_stage_traced`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub gap: f64,
    pub upper: f64,
    pub lower: f64,
    /// Stage objective at the new iterate under the iteration's continuation, with `D_t`.
    pub objective: f64,
    /// Same objective with the iterate's own distortion in place of `D_t`;
    /// this is the quantity the bounds sandwich.
    pub bounded_objective: f64,
    pub continuation_changed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub exponent_cap_hits: usize,
    pub continuation_changes: usize,
    pub continuation_frozen: bool,
    /// Iterations where the objective rose by more than [`RISE_WARNING`]
    /// because the continuation moved.
    pub objective_rises: usize,
    pub negative_gaps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSolution {
    /// Rows `μ*(·|x)`, one per state.
    pub mu_star: Vec<SimplexVector>,
    pub nu_star: SimplexVector,
    pub q_value: f64,
    pub iterations: usize,
    pub final_gap: f64,
    pub converged: bool,
    pub diagnostics: SolveDiagnostics,
}

pub fn solve_stage(
    input: &StageInput<'_>,
    cont: &dyn ContinuationLookup,
    cfg: &BaaConfig,
) -> Result<StageSolution> {
    solve_stage_traced(input, cont, cfg, &mut |_| {})
}

/// [`solve_stage`] that reports every iteration to `sink`.
pub fn solve_stage_traced(
    input: &StageInput<'_>,
    cont: &dyn ContinuationLookup,
    cfg: &BaaConfig,
    sink: &mut dyn FnMut(&IterationRecord),
) -> Result<StageSolution> {
    cfg.validate()?;
    let px = input.prepare()?;
    let controls = input.distortion.controls();
    let floor = cfg.prob_floor;
    let s = input.multiplier;
    let next_stage = input.belief.stage + 1;

    let mut nu = match &cfg.initial_output {
        Some(v) if v.len() == controls => v.floored(floor),
        Some(_) => return Err(Error::Shape("initial output has the wrong length".into())),
        None => SimplexVector::uniform(controls),
    };
    check_positive(&nu)?;
    let mut mu = vec![nu.clone(); px.len()];

    let mut diag = SolveDiagnostics::default();
    let mut seen: Vec<Vec<u64>> = Vec::new();
    let mut frozen: Option<ExponentTable> = None;
    let mut last_values: Option<Vec<f64>> = None;
    let mut last_objective: Option<f64> = None;
    let mut gap = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        let table = match &frozen {
            Some(t) => t.clone(),
            None => {
                let values = continuation_values(&px, &mu, next_stage, cont);
                build_table(input.distortion, s, values, cfg.exponent_cap)
            }
        };
        let changed = last_values
            .as_ref()
            .is_some_and(|v| v.as_slice() != table.continuation());
        if changed {
            diag.continuation_changes += 1;
            let key: Vec<u64> = table.continuation().iter().map(|v| v.to_bits()).collect();
            if seen.contains(&key) {
                diag.continuation_frozen = true;
                frozen = Some(table.clone());
            }
        }
        if frozen.is_none() {
            let key: Vec<u64> = table.continuation().iter().map(|v| v.to_bits()).collect();
            if !seen.contains(&key) {
                seen.push(key);
            }
        }
        diag.exponent_cap_hits += table.capped;

        let before = frozen_objective(&px, &mu, &nu, &table, floor);
        let lse = normalizers(&nu, &table);
        let c = c_factors(&px, &table, &lse);
        let mu_next = policy_from(&nu, &table, &lse);
        let nu_raw: Vec<f64> = nu.probs().iter().zip(&c).map(|(q, cu)| q * cu).collect();
        let nu_next = floor_and_normalize(&nu_raw, floor);

        let d_s = context_distortion(&px, &mu_next, input.distortion);
        let b = bounds_from(&px, &nu, &lse, &c, s, d_s);
        let after = frozen_objective(&px, &mu_next, &nu_next, &table, floor);
        iterations += 1;

        if after > before + REGRESSION_TOLERANCE {
            return Err(Error::NumericalRegression {
                iteration: iterations,
                rise: after - before,
            });
        }
        if let Some(prev) = last_objective {
            if after > prev + RISE_WARNING {
                diag.objective_rises += 1;
            }
        }
        if b.gap < -1e-9 {
            diag.negative_gaps += 1;
        }
        sink(&IterationRecord {
            iteration: iterations,
            gap: b.gap,
            upper: b.upper,
            lower: b.lower,
            objective: after + s * input.threshold,
            bounded_objective: after + s * d_s,
            continuation_changed: changed,
        });

        last_objective = Some(after);
        last_values = Some(table.continuation().to_vec());
        mu = mu_next;
        nu = nu_next;
        gap = b.gap;
        if gap <= cfg.epsilon {
            converged = true;
            break;
        }
    }

    let values = continuation_values(&px, &mu, next_stage, cont);
    let q_value = q_with_values(&px, &mu, &nu, &values, input, floor);
    Ok(StageSolution {
        mu_star: mu,
        nu_star: nu,
        q_value,
        iterations,
        final_gap: gap,
        converged,
        diagnostics: diag,
    })
}

/// The output distribution matched to a policy block at this stage input.
pub fn matched_output(input: &StageInput<'_>, mu: &[SimplexVector]) -> Result<SimplexVector> {
    let px = input.prepare()?;
    check_block(mu, px.len(), input.distortion.controls())?;
    Ok(output_from_marginal(&px, mu))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::InformationState;

    struct Fixture {
        belief: InformationState,
        kernel: StageKernel,
        rho: DistortionFunction,
    }

    impl Fixture {
        fn new(p: f64, alpha0: f64, alpha1: f64) -> Self {
            Self {
                belief: InformationState::new(
                    1,
                    vec![SimplexVector::binary(p).unwrap(), SimplexVector::binary(0.3).unwrap()],
                )
                .unwrap(),
                kernel: StageKernel::binary_symmetric(alpha0, alpha1).unwrap(),
                rho: DistortionFunction::hamming(2),
            }
        }

        fn input(&self, s: f64, d: f64) -> StageInput<'_> {
            StageInput {
                belief: &self.belief,
                kernel: &self.kernel,
                context: 0,
                multiplier: s,
                threshold: d,
                distortion: &self.rho,
            }
        }
    }

    fn uniform_block() -> Vec<SimplexVector> {
        vec![SimplexVector::uniform(2); 2]
    }

    #[test]
    fn exponent_factor_identity_and_hamming() {
        let f = Fixture::new(0.5, 0.5, 0.5);
        let a = exponent_factor(&f.input(0.0, 0.0), &Terminal, &uniform_block(), 700.0).unwrap();
        for x in 0..2 {
            for u in 0..2 {
                assert_eq!(a.factor(x, u), 1.0);
            }
        }
        let a = exponent_factor(&f.input(-2.0, 0.0), &Terminal, &uniform_block(), 700.0).unwrap();
        assert_eq!(a.factor(0, 0), 1.0);
        assert_eq!(a.factor(1, 1), 1.0);
        assert!((a.factor(0, 1) - (-2.0f64).exp()).abs() < 1e-15);
        assert!((a.factor(0, 1) - 0.1353).abs() < 1e-4);
    }

    #[test]
    fn exponent_factor_with_continuation() {
        let f = Fixture::new(0.8, 0.4, 0.8);
        let cont = |b: &InformationState, u: usize| 0.3 * b.row(u)[0] + 0.1 * u as f64;
        let mu = vec![SimplexVector::binary(0.9).unwrap(), SimplexVector::binary(0.2).unwrap()];
        let input = f.input(-1.5, 0.0);
        let a = exponent_factor(&input, &cont, &mu, 700.0).unwrap();
        // independent recomputation of the successor beliefs and exponents
        let px0 = 0.8 * 0.6 + 0.2 * 0.4;
        let px = [px0, 1.0 - px0];
        for u in 0..2 {
            let joint: Vec<f64> = (0..2).map(|x| px[x] * mu[x][u]).collect();
            let z: f64 = joint.iter().sum();
            let q = 0.3 * joint[0] / z + 0.1 * u as f64;
            for x in 0..2 {
                let rho = if x == u { 0.0 } else { 1.0 };
                assert!((a.factor(x, u) - (-1.5 * rho - q).exp()).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn exponent_cap_is_counted() {
        let f = Fixture::new(0.5, 0.5, 0.5);
        let big = |_: &InformationState, _: usize| 1000.0;
        let a = exponent_factor(&f.input(-1.0, 0.0), &big, &uniform_block(), 700.0).unwrap();
        assert_eq!(a.capped, 4);
        assert_eq!(a.exponent(0, 0), -700.0);
    }

    #[test]
    fn policy_update_examples() {
        let f = Fixture::new(0.5, 0.5, 0.5);
        let ones = exponent_factor(&f.input(0.0, 0.0), &Terminal, &uniform_block(), 700.0).unwrap();
        let nu = SimplexVector::binary(0.3).unwrap();
        let mu = policy_update(&nu, &ones).unwrap();
        for row in &mu {
            assert!((row[0] - 0.3).abs() < 1e-15);
        }

        let a = exponent_factor(&f.input(-2.0, 0.0), &Terminal, &uniform_block(), 700.0).unwrap();
        let mu = policy_update(&SimplexVector::uniform(2), &a).unwrap();
        let expected = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((mu[0][0] - expected).abs() < 1e-15);
        assert!((mu[0][0] - 0.8808).abs() < 1e-4);

        let point = SimplexVector::point_mass(2, 0);
        assert!(matches!(policy_update(&point, &a), Err(Error::Precondition(_))));
    }

    #[test]
    fn output_update_examples() {
        let f = Fixture::new(0.5, 0.5, 0.5);
        let ones = exponent_factor(&f.input(0.0, 0.0), &Terminal, &uniform_block(), 700.0).unwrap();
        let nu = SimplexVector::binary(0.3).unwrap();
        let next = output_update(&f.input(0.0, 0.0), &nu, &ones).unwrap();
        assert!((next[0] - 0.3).abs() < 1e-15);

        let input = f.input(-2.0, 0.0);
        let a = exponent_factor(&input, &Terminal, &uniform_block(), 700.0).unwrap();
        let next = output_update(&input, &SimplexVector::uniform(2), &a).unwrap();
        assert!((next[0] - 0.5).abs() < 1e-15);

        // skewed marginal [0.58, 0.42]: b = [0.9, 0.1], alpha0 = 0.4
        let skew = Fixture::new(0.9, 0.4, 0.8);
        let input = skew.input(-2.0, 0.0);
        let a = exponent_factor(&input, &Terminal, &uniform_block(), 700.0).unwrap();
        let next = output_update(&input, &SimplexVector::uniform(2), &a).unwrap();
        // ν'(0) = 0.5 * [0.58 * 1/(0.5(1+e)) + 0.42 * e/(0.5(1+e))], e = exp(-2)
        let e = (-2.0f64).exp();
        let c0 = 0.58 / (0.5 * (1.0 + e)) + 0.42 * e / (0.5 * (1.0 + e));
        assert!((next[0] - 0.5 * c0).abs() < 1e-14);
        assert!((next[0] - (0.58 + 0.42 * e) / (1.0 + e)).abs() < 1e-14);
    }

    #[test]
    fn q_evaluate_examples() {
        let f = Fixture::new(0.5, 0.5, 0.5);
        let nu = SimplexVector::binary(0.4).unwrap();
        let mu = vec![nu.clone(), nu.clone()];
        assert_eq!(q_evaluate(&f.input(0.0, 0.3), &mu, &nu, &Terminal).unwrap(), 0.0);
    }

    #[test]
    fn bounds_collapse_for_unit_factor() {
        let f = Fixture::new(0.5, 0.5, 0.5);
        let input = f.input(0.0, 0.0);
        let ones = exponent_factor(&input, &Terminal, &uniform_block(), 700.0).unwrap();
        let b = bounds(&input, &SimplexVector::binary(0.2).unwrap(), &ones, 0.0).unwrap();
        assert_eq!(b.gap, 0.0);
        assert_eq!(b.upper, b.lower);
    }

    #[test]
    fn solve_stage_trivial_multiplier() {
        let f = Fixture::new(0.7, 0.4, 0.8);
        let sol = solve_stage(&f.input(0.0, 0.2), &Terminal, &BaaConfig::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert!(sol.converged);
        assert_eq!(sol.q_value, 0.0);
        for row in &sol.mu_star {
            assert_eq!(row, &sol.nu_star);
        }
    }

    #[test]
    fn solve_stage_symmetric_rate_distortion_point() {
        let f = Fixture::new(0.5, 0.5, 0.5);
        let d_s = (-2.0f64).exp() / (1.0 + (-2.0f64).exp());
        let input = f.input(-2.0, d_s);
        let sol = solve_stage(&input, &Terminal, &BaaConfig::with_epsilon(1e-10)).unwrap();
        let px = [0.5, 0.5];
        let d = context_distortion(&px, &sol.mu_star, &f.rho);
        assert!((d - 0.1192).abs() < 1e-4);
        // with D_t equal to the achieved distortion, Q reduces to the rate
        assert!((sol.q_value - 0.3278).abs() < 1e-4);
    }

    #[test]
    fn sandwich_and_monotone_trace() {
        let f = Fixture::new(0.93, 0.15, 0.7);
        let cont = |_: &InformationState, u: usize| [0.2, 0.45][u];
        let input = f.input(-1.3, 0.1);
        let mut trace = Vec::new();
        let sol = solve_stage_traced(&input, &cont, &BaaConfig::with_epsilon(1e-9), &mut |r| {
            trace.push(*r)
        })
        .unwrap();
        assert!(sol.converged);
        assert!(trace.len() > 2);
        assert!(trace[0].gap > 0.0);
        for r in &trace {
            assert!(r.upper >= r.bounded_objective - 1e-8);
            assert!(r.bounded_objective >= r.lower - 1e-8);
        }
        for pair in trace.windows(2) {
            assert!(pair[1].objective <= pair[0].objective + 1e-12);
        }
        assert!(trace.last().unwrap().gap < trace[0].gap);
    }

    #[test]
    fn solve_stage_is_deterministic() {
        let f = Fixture::new(0.61, 0.25, 0.8);
        let cont = |b: &InformationState, u: usize| b.row(u)[0] * 0.4;
        let run = || {
            let mut trace = Vec::new();
            let sol = solve_stage_traced(&f.input(-2.5, 0.1), &cont, &BaaConfig::default(), &mut |r| {
                trace.push(*r)
            })
            .unwrap();
            (sol, trace)
        };
        let (a, ta) = run();
        let (b, tb) = run();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
    }

    #[test]
    fn iteration_cap_flags_non_convergence() {
        let f = Fixture::new(0.9, 0.4, 0.8);
        let cfg = BaaConfig {
            epsilon: 1e-14,
            max_iterations: 3,
            ..BaaConfig::default()
        };
        let sol = solve_stage(&f.input(-3.0, 0.0), &Terminal, &cfg).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations, 3);
        assert!(sol.final_gap > 1e-14);
    }

    #[test]
    fn positive_multiplier_is_rejected() {
        let f = Fixture::new(0.9, 0.4, 0.8);
        assert!(matches!(
            solve_stage(&f.input(0.5, 0.0), &Terminal, &BaaConfig::default()),
            Err(Error::Precondition(_))
        ));
    }
}

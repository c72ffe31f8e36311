//! Stage-wise information and distortion costs, all in nats.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{
    output_distributions, state_marginal, ControlMarginal, ControlPolicy, InformationState,
    OutputDistribution, StageKernel, DEFAULT_PROB_FLOOR,
};

/// `ρ(x, u)`, shared by every stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistortionFunction {
    states: usize,
    controls: usize,
    table: Vec<f64>,
}

impl DistortionFunction {
    /// `table[x * controls + u]`.
    pub fn new(states: usize, controls: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != states * controls || states == 0 || controls == 0 {
            return Err(Error::Shape(format!(
                "distortion table has {} entries, expected {}x{}",
                table.len(),
                states,
                controls
            )));
        }
        if table.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidDistribution(
                "distortion entries must be finite and nonnegative".into(),
            ));
        }
        Ok(Self {
            states,
            controls,
            table,
        })
    }

    pub fn hamming(n: usize) -> Self {
        let table = (0..n * n)
            .map(|i| if i / n == i % n { 0.0 } else { 1.0 })
            .collect();
        Self {
            states: n,
            controls: n,
            table,
        }
    }

    pub fn get(&self, x: usize, u: usize) -> f64 {
        self.table[x * self.controls + u]
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn controls(&self) -> usize {
        self.controls
    }
}

/// Lagrange multipliers `s_t ≤ 0` and thresholds `D_t ≥ 0` for `t = 0..=N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagrangeSchedule {
    multipliers: Vec<f64>,
    thresholds: Vec<f64>,
}

impl LagrangeSchedule {
    pub fn new(multipliers: Vec<f64>, thresholds: Vec<f64>) -> Result<Self> {
        if multipliers.len() != thresholds.len() || multipliers.is_empty() {
            return Err(Error::Shape("multiplier and threshold schedules differ in length".into()));
        }
        if let Some(s) = multipliers.iter().find(|s| !(s.is_finite() && **s <= 0.0)) {
            return Err(Error::Precondition(format!("multiplier {s} violates s_t <= 0")));
        }
        if let Some(d) = thresholds.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
            return Err(Error::Precondition(format!("threshold {d} violates D_t >= 0")));
        }
        Ok(Self {
            multipliers,
            thresholds,
        })
    }

    pub fn constant(s: f64, d: f64, horizon: usize) -> Result<Self> {
        Self::new(vec![s; horizon + 1], vec![d; horizon + 1])
    }

    pub fn multiplier(&self, t: usize) -> f64 {
        self.multipliers[t]
    }

    pub fn threshold(&self, t: usize) -> f64 {
        self.thresholds[t]
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }
}

/// `p ln(p / q)` with both arguments clamped to `floor` inside the logarithm.
pub(crate) fn kl_term(p: f64, q: f64, floor: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p * (p.max(floor) / q.max(floor)).ln()
    }
}

fn check_weights(b: &InformationState, m: &ControlMarginal) -> Result<()> {
    if m.dist.len() != b.contexts() {
        return Err(Error::Shape("control marginal does not match belief contexts".into()));
    }
    Ok(())
}

/// Conditional mutual information `I(X_t; U_t | U_{t-1})` of one stage, weighted
/// over contexts by the control marginal. `nu` need not match `(b, mu, w)`.
pub fn stage_mutual_information(
    b: &InformationState,
    mu: &ControlPolicy,
    w: &StageKernel,
    nu: &OutputDistribution,
    m: &ControlMarginal,
) -> Result<f64> {
    check_weights(b, m)?;
    let mut total = 0.0;
    for u_prev in 0..b.contexts() {
        let weight = m.weight(u_prev);
        if weight == 0.0 {
            continue;
        }
        let px = state_marginal(b, w, u_prev)?;
        let nu_row = nu.row(u_prev);
        let mut ctx = 0.0;
        for (x, p) in px.iter().enumerate() {
            for (u, q) in mu.row(u_prev, x).probs().iter().enumerate() {
                ctx += p * kl_term(*q, nu_row[u], DEFAULT_PROB_FLOOR);
            }
        }
        total += weight * ctx;
    }
    if total < -1e-9 {
        let matched = output_distributions(b, mu, w)?;
        let is_matched = matched
            .rows
            .iter()
            .zip(&nu.rows)
            .all(|(a, b)| a.l1_distance(b) <= 1e-9);
        if is_matched {
            return Err(Error::NumericalConsistency(format!(
                "mutual information {total} is negative with the matched output distribution"
            )));
        }
    }
    Ok(total)
}

/// Directed information: the sum of stage mutual informations.
pub fn directed_information(stage_costs: &[f64]) -> f64 {
    stage_costs.iter().sum()
}

/// `E[ρ(X_t, U_t)]` weighted over contexts by the control marginal.
pub fn expected_distortion(
    b: &InformationState,
    mu: &ControlPolicy,
    w: &StageKernel,
    rho: &DistortionFunction,
    m: &ControlMarginal,
) -> Result<f64> {
    check_weights(b, m)?;
    let mut total = 0.0;
    for u_prev in 0..b.contexts() {
        let weight = m.weight(u_prev);
        if weight == 0.0 {
            continue;
        }
        let px = state_marginal(b, w, u_prev)?;
        total += weight * context_distortion(&px, mu.block(u_prev), rho);
    }
    Ok(total)
}

pub(crate) fn context_distortion(
    px: &[f64],
    block: &[crate::prob::SimplexVector],
    rho: &DistortionFunction,
) -> f64 {
    let mut d = 0.0;
    for (x, (p, row)) in px.iter().zip(block).enumerate() {
        for (u, q) in row.probs().iter().enumerate() {
            d += p * q * rho.get(x, u);
        }
    }
    d
}

/// Expected Lagrangian stage cost `I − s_t (E[ρ] − D_t)`.
pub fn lagrangian_stage_cost(mi: f64, dist: f64, s_t: f64, d_t: f64) -> f64 {
    mi - s_t * (dist - d_t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prob::SimplexVector;

    fn uniform_setup() -> (InformationState, StageKernel, ControlMarginal) {
        (
            InformationState::new(1, vec![SimplexVector::uniform(2); 2]).unwrap(),
            StageKernel::binary_symmetric(0.3, 0.6).unwrap(),
            ControlMarginal {
                stage: 1,
                dist: SimplexVector::binary(0.4).unwrap(),
            },
        )
    }

    fn copy_policy() -> ControlPolicy {
        ControlPolicy::new(
            1,
            2,
            vec![
                SimplexVector::point_mass(2, 0),
                SimplexVector::point_mass(2, 1),
                SimplexVector::point_mass(2, 0),
                SimplexVector::point_mass(2, 1),
            ],
        )
        .unwrap()
    }

    #[test]
    fn mi_vanishes_for_state_independent_policy() {
        let (b, w, m) = uniform_setup();
        let q = SimplexVector::binary(0.3).unwrap();
        let mu = ControlPolicy::state_independent(1, 2, 2, q.clone());
        let nu = OutputDistribution {
            stage: 1,
            rows: vec![q.clone(), q],
        };
        assert_eq!(stage_mutual_information(&b, &mu, &w, &nu, &m).unwrap(), 0.0);
    }

    #[test]
    fn mi_of_copy_policy_is_one_bit() {
        // Uniform belief through a symmetric kernel keeps the state marginal uniform.
        let (b, w, m) = uniform_setup();
        let mu = copy_policy();
        let nu = output_distributions(&b, &mu, &w).unwrap();
        let mi = stage_mutual_information(&b, &mu, &w, &nu, &m).unwrap();
        assert!((mi - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn directed_information_is_additive() {
        assert_eq!(directed_information(&[0.0; 5]), 0.0);
        let ln2 = std::f64::consts::LN_2;
        assert_eq!(directed_information(&[ln2, ln2]), 2.0 * ln2);
    }

    #[test]
    fn distortion_examples() {
        let (b, w, m) = uniform_setup();
        let rho = DistortionFunction::hamming(2);
        assert_eq!(expected_distortion(&b, &copy_policy(), &w, &rho, &m).unwrap(), 0.0);
        let skew = InformationState::new(
            1,
            vec![SimplexVector::binary(0.9).unwrap(), SimplexVector::binary(0.2).unwrap()],
        )
        .unwrap();
        let mu = ControlPolicy::state_independent(1, 2, 2, SimplexVector::uniform(2));
        let d = expected_distortion(&skew, &mu, &w, &rho, &m).unwrap();
        assert!((d - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lagrangian_examples() {
        assert_eq!(lagrangian_stage_cost(0.0, 0.1, -2.0, 0.1), 0.0);
        assert!((lagrangian_stage_cost(0.5, 0.2, -2.0, 0.1) - 0.7).abs() < 1e-15);
        assert_eq!(lagrangian_stage_cost(0.37, 0.9, 0.0, 0.1), 0.37);
    }

    #[test]
    fn schedule_validation() {
        assert!(LagrangeSchedule::new(vec![-1.0, 0.5], vec![0.1, 0.1]).is_err());
        assert!(LagrangeSchedule::new(vec![-1.0, -0.5], vec![0.1, -0.1]).is_err());
        assert!(LagrangeSchedule::new(vec![-1.0], vec![0.1, 0.1]).is_err());
        assert!(LagrangeSchedule::constant(-2.0, 0.1, 3).unwrap().len() == 4);
    }

    #[test]
    fn hamming_table() {
        let rho = DistortionFunction::hamming(3);
        assert_eq!(rho.get(1, 1), 0.0);
        assert_eq!(rho.get(2, 0), 1.0);
    }
}

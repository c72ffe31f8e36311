//! Randomized invariants of the stage solver, the information measures and the grid.

use dirollout::baa::{
    bounds, exponent_factor, matched_output, output_update, policy_update, q_evaluate, solve_stage_traced, Terminal,
};
use dirollout::info::{expected_distortion, stage_mutual_information, DistortionFunction};
use dirollout::prob::{output_distributions, OutputDistribution};
use dirollout::{
    build_uniform_grid, BaaConfig, ControlMarginal, ControlPolicy, InformationState, SimplexVector, StageInput,
    StageKernel,
};
use proptest::prelude::*;

fn binary(p: f64) -> SimplexVector {
    SimplexVector::binary(p).unwrap()
}

fn prob() -> impl Strategy<Value = f64> {
    0.01f64..0.99
}

/// A stage-1 binary setting: belief, kernel, policy and control marginal.
#[derive(Debug, Clone)]
struct Setting {
    belief: InformationState,
    kernel: StageKernel,
    policy: ControlPolicy,
    marginal: ControlMarginal,
}

fn setting() -> impl Strategy<Value = Setting> {
    (
        (prob(), prob()),
        (0.05f64..0.95, 0.05f64..0.95),
        proptest::collection::vec(prob(), 4),
        prob(),
    )
        .prop_map(|((b0, b1), (a0, a1), mu, m)| Setting {
            belief: InformationState::new(1, vec![binary(b0), binary(b1)]).unwrap(),
            kernel: StageKernel::binary_symmetric(a0, a1).unwrap(),
            policy: ControlPolicy::from_blocks(1, vec![vec![binary(mu[0]), binary(mu[1])], vec![binary(mu[2]), binary(mu[3])]])
                .unwrap(),
            marginal: ControlMarginal {
                stage: 1,
                dist: binary(m),
            },
        })
}

fn hamming() -> DistortionFunction {
    DistortionFunction::hamming(2)
}

fn input<'a>(s: &'a Setting, rho: &'a DistortionFunction, c: usize, mult: f64) -> StageInput<'a> {
    StageInput {
        belief: &s.belief,
        kernel: &s.kernel,
        context: c,
        multiplier: mult,
        threshold: 0.1,
        distortion: rho,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn mutual_information_is_nonnegative(s in setting()) {
        let nu = output_distributions(&s.belief, &s.policy, &s.kernel).unwrap();
        let mi = stage_mutual_information(&s.belief, &s.policy, &s.kernel, &nu, &s.marginal).unwrap();
        prop_assert!(mi >= -1e-9, "mi = {mi}");
    }

    #[test]
    fn matched_output_minimizes_the_divergence(s in setting(), q0 in prob(), q1 in prob()) {
        let matched = output_distributions(&s.belief, &s.policy, &s.kernel).unwrap();
        let other = OutputDistribution { stage: 1, rows: vec![binary(q0), binary(q1)] };
        let a = stage_mutual_information(&s.belief, &s.policy, &s.kernel, &matched, &s.marginal).unwrap();
        let b = stage_mutual_information(&s.belief, &s.policy, &s.kernel, &other, &s.marginal).unwrap();
        prop_assert!(a <= b + 1e-12, "matched {a} > mismatched {b}");
    }

    #[test]
    fn distortion_is_linear_in_the_policy(s in setting(), t in 0.0f64..1.0, p in proptest::collection::vec(prob(), 4)) {
        let other = ControlPolicy::from_blocks(1, vec![vec![binary(p[0]), binary(p[1])], vec![binary(p[2]), binary(p[3])]]).unwrap();
        let mix_rows: Vec<SimplexVector> = s.policy.rows().iter().zip(other.rows())
            .map(|(a, b)| SimplexVector::new(a.probs().iter().zip(b.probs()).map(|(x, y)| t * x + (1.0 - t) * y).collect()).unwrap())
            .collect();
        let mix = ControlPolicy::new(1, 2, mix_rows).unwrap();
        let rho = hamming();
        let d = |mu: &ControlPolicy| expected_distortion(&s.belief, mu, &s.kernel, &rho, &s.marginal).unwrap();
        let lhs = d(&mix);
        let rhs = t * d(&s.policy) + (1.0 - t) * d(&other);
        prop_assert!((lhs - rhs).abs() <= 1e-12);
    }

    #[test]
    fn nearest_is_idempotent_and_minimal(n in 2usize..30, b0 in 0.0f64..=1.0, b1 in 0.0f64..=1.0) {
        let grid = build_uniform_grid(n, 2, 2).unwrap();
        let b = InformationState::new(0, vec![binary(b0), binary(b1)]).unwrap();
        let i = grid.nearest(&b);
        prop_assert_eq!(grid.nearest(grid.point(i)), i);
        let best = grid.point(i).l1_distance(&b);
        for p in grid.points() {
            prop_assert!(best <= p.l1_distance(&b) + 1e-15);
        }
    }

    #[test]
    fn stage_solve_is_sandwiched_and_monotone(s in setting(), c in 0usize..2, mult in -5.0f64..-0.1) {
        let rho = hamming();
        let inp = input(&s, &rho, c, mult);
        let mut trace = Vec::new();
        let sol = solve_stage_traced(&inp, &Terminal, &BaaConfig::with_epsilon(1e-9), &mut |r| trace.push(*r)).unwrap();
        prop_assert!(sol.converged);
        for r in &trace {
            prop_assert!(r.upper + 1e-8 >= r.bounded_objective);
            prop_assert!(r.bounded_objective + 1e-8 >= r.lower);
            prop_assert!(!r.continuation_changed);
        }
        for w in trace.windows(2) {
            prop_assert!(w[1].objective <= w[0].objective + 1e-12);
        }
        let nu = matched_output(&inp, &sol.mu_star).unwrap();
        let q = q_evaluate(&inp, &sol.mu_star, &nu, &Terminal).unwrap();
        prop_assert!((q - sol.q_value).abs() <= 1e-9);
    }

    #[test]
    fn unit_factor_is_a_fixed_point(s in setting(), c in 0usize..2, q in prob()) {
        let rho = hamming();
        let inp = input(&s, &rho, c, 0.0);
        let nu = binary(q);
        let block = vec![nu.clone(), nu.clone()];
        let a = exponent_factor(&inp, &Terminal, &block, 700.0).unwrap();
        let mu = policy_update(&nu, &a).unwrap();
        for row in &mu {
            prop_assert!(row.l1_distance(&nu) <= 1e-15);
        }
        let next = output_update(&inp, &nu, &a).unwrap();
        prop_assert!(next.l1_distance(&nu) <= 1e-15);
        let b = bounds(&inp, &nu, &a, 0.0).unwrap();
        prop_assert!(b.gap.abs() <= 1e-15);
    }
}

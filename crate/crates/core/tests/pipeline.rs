//! Training, artifact persistence, rollout and baseline on small problems.

use dirollout::baa::solve_stage;
use dirollout::grid::refine_from_trajectory;
use dirollout::offline::{artifact_to_string, fingerprint};
use dirollout::oracle::{brute_force_horizon, random_binary_problem, refined_horizon_minimum, HORIZON_BUDGET};
use dirollout::rollout::continuation_for;
use dirollout::{
    build_uniform_grid, load_artifact, run_baseline, run_online, run_repeated, save_artifact, train, BaaConfig, Error,
    GridIndex, InitialPolicy, Problem, RolloutConfig, SimplexVector,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn example(horizon: usize) -> Problem {
    let mu0 = dirollout::ControlPolicy::new(
        0,
        2,
        vec![SimplexVector::binary(0.8).unwrap(), SimplexVector::binary(0.2).unwrap()],
    )
    .unwrap();
    Problem::binary_symmetric(
        0.4,
        0.8,
        SimplexVector::binary(0.5).unwrap(),
        InitialPolicy::Fixed(mu0),
        -2.0,
        0.12,
        horizon,
    )
    .unwrap()
}

fn seeded(seed: u64, horizon: usize) -> Problem {
    random_binary_problem(&mut ChaCha8Rng::seed_from_u64(seed), horizon).unwrap()
}

#[test]
fn artifact_file_round_trip_is_exact() {
    let problem = example(6);
    let grid = build_uniform_grid(6, 2, 2).unwrap();
    let cfg = BaaConfig::default();
    let artifact = train(&problem, &grid, 3, &cfg, 1).unwrap().artifact;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("artifact.json");
    save_artifact(&artifact, &path).unwrap();
    let loaded = load_artifact(&path, Some(&fingerprint(&problem, 3, 6, &cfg))).unwrap();
    assert_eq!(loaded, artifact);
    assert_eq!(artifact_to_string(&loaded).unwrap(), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn stale_fingerprint_is_rejected() {
    let problem = example(4);
    let grid = build_uniform_grid(5, 2, 2).unwrap();
    let artifact = train(&problem, &grid, 2, &BaaConfig::default(), 1).unwrap().artifact;
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.json");
    save_artifact(&artifact, &path).unwrap();
    let other = fingerprint(&problem, 2, 5, &BaaConfig::with_epsilon(1e-7));
    assert!(matches!(load_artifact(&path, Some(&other)), Err(Error::StaleArtifact { .. })));
}

#[test]
fn training_is_bitwise_reproducible_across_worker_counts() {
    let problem = seeded(3, 8);
    let grid = build_uniform_grid(8, 2, 2).unwrap();
    let cfg = BaaConfig::default();
    let a = artifact_to_string(&train(&problem, &grid, 4, &cfg, 1).unwrap().artifact).unwrap();
    let b = artifact_to_string(&train(&problem, &grid, 4, &cfg, 1).unwrap().artifact).unwrap();
    let c = artifact_to_string(&train(&problem, &grid, 4, &cfg, 3).unwrap().artifact).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn tables_satisfy_the_backward_recursion() {
    let problem = seeded(5, 5);
    let grid = build_uniform_grid(7, 2, 2).unwrap();
    let cfg = BaaConfig::default();
    let artifact = train(&problem, &grid, 2, &cfg, 1).unwrap().artifact;
    let t = problem.horizon() - 1;
    let table = artifact.table(t).unwrap();
    let cont = continuation_for(&artifact, t).unwrap();
    let stage_grid = grid.at_stage(t);
    for (i, b) in stage_grid.points().iter().enumerate() {
        for c in 0..2 {
            let sol = solve_stage(&problem.stage_input(b, t, c), &cont, &cfg).unwrap();
            let stored = table.entry(GridIndex(i)).contexts[c].q_value;
            assert!((sol.q_value - stored).abs() <= 1e-9, "point {i} context {c}");
        }
    }
}

#[test]
fn zero_multiplier_tables_vanish_for_every_truncation() {
    let problem = Problem::binary_symmetric(
        0.3,
        0.7,
        SimplexVector::binary(0.4).unwrap(),
        InitialPolicy::Optimize,
        0.0,
        0.2,
        4,
    )
    .unwrap();
    let grid = build_uniform_grid(5, 2, 2).unwrap();
    for n_s in 1..=4 {
        let artifact = train(&problem, &grid, n_s, &BaaConfig::default(), 1).unwrap().artifact;
        for table in &artifact.tables {
            for e in table.entries() {
                for ctx in &e.contexts {
                    assert!(ctx.q_value.abs() <= 1e-8, "N_s = {n_s}, stage {}", table.stage);
                }
            }
        }
        let traj = run_online(&problem, &artifact, &RolloutConfig::default()).unwrap();
        assert!(traj.total_di <= 1e-8);
    }
}

#[test]
fn one_round_matches_train_then_rollout() {
    let problem = seeded(9, 10);
    let cfg = RolloutConfig {
        workers: 1,
        ..RolloutConfig::default()
    };
    let round = run_repeated(&problem, 8, 3, &cfg).unwrap().remove(0);
    let grid = build_uniform_grid(8, 2, 2).unwrap();
    let artifact = train(&problem, &grid, 3, &cfg.solver, 1).unwrap().artifact;
    assert_eq!(round.train.artifact, artifact);
    assert_eq!(round.trajectory, run_online(&problem, &artifact, &cfg).unwrap());
}

#[test]
fn refined_grid_follows_the_visited_range() {
    let problem = example(20);
    let cfg = RolloutConfig {
        rounds: 2,
        workers: 1,
        ..RolloutConfig::default()
    };
    let rounds = run_repeated(&problem, 10, 3, &cfg).unwrap();
    let uniform = build_uniform_grid(10, 2, 2).unwrap();
    let refined = refine_from_trajectory(&rounds[0].trajectory, 10).unwrap();
    assert_ne!(refined.axes(), uniform.axes());
    assert_eq!(rounds[1].train.artifact.grid, refined);
    for (c, axis) in refined.axes().iter().enumerate() {
        let (lo, hi) = (axis[0], axis[axis.len() - 1]);
        for st in rounds[0].trajectory.stages.iter().filter(|s| s.stage >= 1) {
            if st.marginal.weight(c) > 1e-12 {
                let p = st.belief.row(c)[0];
                assert!(p >= lo - 0.1 * (hi - lo) - 1e-12 && p <= hi + 0.1 * (hi - lo) + 1e-12);
            }
        }
    }
}

#[test]
fn lookahead_never_loses_to_the_base_policy_stagewise() {
    for seed in 0..6 {
        let problem = seeded(seed, 12);
        let cfg = RolloutConfig {
            workers: 1,
            ..RolloutConfig::default()
        };
        let traj = run_repeated(&problem, 8, 3, &cfg).unwrap().remove(0).trajectory;
        for st in traj.stages.iter().filter(|s| s.stage >= 1) {
            let (q, base) = (st.averaged_q.unwrap(), st.averaged_base_q.unwrap());
            assert!(q <= base + 1e-9, "seed {seed} stage {}: {q} > {base}", st.stage);
        }
    }
}

#[test]
fn baseline_and_rollout_report_consistent_totals() {
    let problem = seeded(2, 10);
    let cfg = RolloutConfig {
        workers: 1,
        ..RolloutConfig::default()
    };
    let (_, traj) = run_baseline(&problem, 6, &cfg).unwrap();
    let sum: f64 = traj.stages.iter().map(|s| s.lagrangian_cost).sum();
    assert!((sum - traj.total_lagrangian).abs() <= 1e-12);
    assert!((traj.stages.last().unwrap().cumulative_di - traj.total_di).abs() <= 1e-12);
    assert_eq!(traj.stages.len(), 11);
}

#[test]
fn horizon_oracle_is_monotone_in_resolution() {
    for seed in 0..3 {
        let problem = seeded(seed, 2);
        let coarse = brute_force_horizon(&problem, 7, HORIZON_BUDGET).unwrap().minimum;
        let fine = brute_force_horizon(&problem, 13, HORIZON_BUDGET).unwrap().minimum;
        let refined = refined_horizon_minimum(&problem, 7, HORIZON_BUDGET).unwrap().minimum;
        assert!(fine <= coarse + 1e-12, "seed {seed}: {fine} > {coarse}");
        assert!(refined <= coarse + 1e-12, "seed {seed}: {refined} > {coarse}");
    }
}

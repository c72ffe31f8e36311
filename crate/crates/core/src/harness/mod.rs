//! Command orchestration behind the `dirollout` binary.
//!
//! Each command reads a [`config::ProblemConfig`], runs one pipeline and
//! writes its files into the output directory:
//!
//! | command    | files                                                          |
//! |------------|----------------------------------------------------------------|
//! | `train`    | `artifact.json`, `train_summary.json`                          |
//! | `rollout`  | `artifact.json`, `rollout_trajectory.csv`, `rollout_summary.json` |
//! | `repeat`   | `artifact_round{r}.json`, `trajectory_round{r}.csv`, `repeat_summary.json` |
//! | `baseline` | `baseline_artifact.json`, `baseline_trajectory.csv`, `baseline_summary.json` |
//! | `oracle`   | `oracle_report.txt`, `oracle_report.json`, `oracle_summary.json` |
//! | `bench`    | `bench_report.json`, `bench_summary.json`                      |

pub mod bench;
pub mod config;
pub mod report;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baa::{solve_stage, BaaConfig, Terminal};
use crate::clock::Stopwatch;
use crate::error::{ConfigViolation, Error, Result};
use crate::grid::build_uniform_grid;
use crate::offline::{fingerprint, load_artifact, save_artifact, train, TrainReport};
use crate::oracle::{
    achieved_point, analytic_rd_point, brute_force_horizon, brute_force_stage, random_binary_problem,
    random_stage_instance, refined_horizon_minimum, Comparison, OracleEntry, OracleReport, StageInstance,
    HORIZON_BUDGET, MAX_ORACLE_HORIZON,
};
use crate::problem::Problem;
use crate::rollout::{run_baseline, run_online, run_repeated, RolloutTrajectory};

use config::ProblemConfig;
use report::{trajectory_rows, write_trajectory_csv, RunRecord, RunSummary, RunTotals};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Train,
    Rollout,
    Repeat,
    Baseline,
    Oracle,
    Bench,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Rollout => "rollout",
            Command::Repeat => "repeat",
            Command::Baseline => "baseline",
            Command::Oracle => "oracle",
            Command::Bench => "bench",
        }
    }
}

/// Command-line values that take precedence over the configuration file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    pub out: PathBuf,
    pub overrides: Overrides,
    /// Existing artifact for `rollout`; trained on the fly when absent.
    pub artifact: Option<PathBuf>,
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ProblemConfig> {
    let mut cfg = config::parse_config(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(vec![ConfigViolation::new(
            path.display().to_string(),
            format!("cannot read configuration: {io}"),
        )]),
        other => other,
    })?;
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    if let Some(workers) = overrides.workers {
        cfg.workers = workers;
    }
    if let Some(eps) = overrides.epsilon {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(vec![ConfigViolation::new(
                "--epsilon",
                format!("must be positive and finite (got {eps})"),
            )]));
        }
        cfg.epsilon_nats = eps;
    }
    Ok(cfg)
}

/// Runs one command end to end and returns the summary it wrote.
pub fn execute(inv: &Invocation) -> Result<RunSummary> {
    let cfg = load_config(&inv.config, &inv.overrides)?;
    let problem = cfg.problem()?;
    std::fs::create_dir_all(&inv.out)?;
    let ctx = Context {
        cfg: &cfg,
        problem: &problem,
        out: &inv.out,
    };
    let runs = match inv.command {
        Command::Train => ctx.train()?,
        Command::Rollout => ctx.rollout(inv.artifact.as_deref())?,
        Command::Repeat => ctx.repeat()?,
        Command::Baseline => ctx.baseline()?,
        Command::Oracle => ctx.oracle()?,
        Command::Bench => ctx.bench()?,
    };
    let summary = RunSummary {
        command: inv.command.name().into(),
        fingerprint: ctx.fingerprint(cfg.rolling_horizon),
        seed: cfg.seed,
        workers: cfg.workers,
        runs,
    };
    summary.write(&inv.out.join(format!("{}_summary.json", inv.command.name())))?;
    Ok(summary)
}

struct Context<'a> {
    cfg: &'a ProblemConfig,
    problem: &'a Problem,
    out: &'a Path,
}

impl Context<'_> {
    fn fingerprint(&self, rolling_horizon: usize) -> String {
        fingerprint(
            self.problem,
            rolling_horizon,
            self.cfg.quantization_levels,
            &self.cfg.solver(),
        )
    }

    fn train_uniform(&self, rolling_horizon: usize) -> Result<TrainReport> {
        let grid = build_uniform_grid(
            self.cfg.quantization_levels,
            self.problem.states(),
            self.problem.controls(),
        )?;
        train(self.problem, &grid, rolling_horizon, &self.cfg.solver(), self.cfg.workers)
    }

    fn write_trajectory(&self, traj: &RolloutTrajectory, name: &str) -> Result<RunTotals> {
        let rows = trajectory_rows(traj);
        write_trajectory_csv(&rows, &self.out.join(name))?;
        Ok(RunTotals::from_rows(&rows))
    }

    fn train(&self) -> Result<Vec<RunRecord>> {
        let report = self.train_uniform(self.cfg.rolling_horizon)?;
        save_artifact(&report.artifact, &self.out.join("artifact.json"))?;
        Ok(vec![RunRecord {
            label: "train".into(),
            trajectory_csv: None,
            artifact: Some("artifact.json".into()),
            rolling_horizon: self.cfg.rolling_horizon,
            offline_wall_ms: report.total_wall_ms(),
            online_wall_ms: 0.0,
            flagged_points: report.flagged,
            totals: None,
        }])
    }

    fn rollout(&self, artifact: Option<&Path>) -> Result<Vec<RunRecord>> {
        let (artifact, name, offline_wall_ms, flagged) = match artifact {
            Some(path) => (
                load_artifact(path, Some(&self.fingerprint(self.cfg.rolling_horizon)))?,
                path.display().to_string(),
                0.0,
                0,
            ),
            None => {
                let report = self.train_uniform(self.cfg.rolling_horizon)?;
                save_artifact(&report.artifact, &self.out.join("artifact.json"))?;
                let ms = report.total_wall_ms();
                (report.artifact, "artifact.json".to_string(), ms, report.flagged)
            }
        };
        let clock = Stopwatch::start();
        let traj = run_online(self.problem, &artifact, &self.cfg.rollout())?;
        let online_wall_ms = clock.elapsed_ms();
        let totals = self.write_trajectory(&traj, "rollout_trajectory.csv")?;
        Ok(vec![RunRecord {
            label: "rollout".into(),
            trajectory_csv: Some("rollout_trajectory.csv".into()),
            artifact: Some(name),
            rolling_horizon: self.cfg.rolling_horizon,
            offline_wall_ms,
            online_wall_ms,
            flagged_points: flagged,
            totals: Some(totals),
        }])
    }

    fn repeat(&self) -> Result<Vec<RunRecord>> {
        let rounds = run_repeated(
            self.problem,
            self.cfg.quantization_levels,
            self.cfg.rolling_horizon,
            &self.cfg.rollout(),
        )?;
        let mut runs = Vec::with_capacity(rounds.len());
        for r in rounds {
            let artifact = format!("artifact_round{}.json", r.round);
            let csv = format!("trajectory_round{}.csv", r.round);
            save_artifact(&r.train.artifact, &self.out.join(&artifact))?;
            let totals = self.write_trajectory(&r.trajectory, &csv)?;
            runs.push(RunRecord {
                label: format!("round {}", r.round),
                trajectory_csv: Some(csv),
                artifact: Some(artifact),
                rolling_horizon: self.cfg.rolling_horizon,
                offline_wall_ms: r.train.total_wall_ms(),
                online_wall_ms: r.online_wall_ms,
                flagged_points: r.train.flagged,
                totals: Some(totals),
            });
        }
        Ok(runs)
    }

    fn baseline(&self) -> Result<Vec<RunRecord>> {
        let clock = Stopwatch::start();
        let (report, traj) = run_baseline(self.problem, self.cfg.quantization_levels, &self.cfg.rollout())?;
        let total_ms = clock.elapsed_ms();
        save_artifact(&report.artifact, &self.out.join("baseline_artifact.json"))?;
        let totals = self.write_trajectory(&traj, "baseline_trajectory.csv")?;
        let offline_wall_ms = report.total_wall_ms();
        Ok(vec![RunRecord {
            label: "baseline".into(),
            trajectory_csv: Some("baseline_trajectory.csv".into()),
            artifact: Some("baseline_artifact.json".into()),
            rolling_horizon: self.problem.horizon(),
            offline_wall_ms,
            online_wall_ms: (total_ms - offline_wall_ms).max(0.0),
            flagged_points: report.flagged,
            totals: Some(totals),
        }])
    }

    fn oracle(&self) -> Result<Vec<RunRecord>> {
        let report = oracle_suite(self.cfg, self.problem)?;
        std::fs::write(self.out.join("oracle_report.txt"), report.to_text())?;
        std::fs::write(
            self.out.join("oracle_report.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
        Ok(Vec::new())
    }

    fn bench(&self) -> Result<Vec<RunRecord>> {
        let report = bench::run_bench(
            self.problem,
            self.cfg.quantization_levels,
            self.cfg.rolling_horizon,
            &self.cfg.bench,
            &self.cfg.rollout(),
        )?;
        std::fs::write(
            self.out.join("bench_report.json"),
            serde_json::to_string_pretty(&report)? + "\n",
        )?;
        Ok(Vec::new())
    }
}

/// Number of random one-stage instances in the oracle suite.
pub const ORACLE_STAGE_INSTANCES: usize = 25;
/// Number of random two-stage instances in the oracle suite.
pub const ORACLE_HORIZON_INSTANCES: usize = 5;

/// Stopping tolerance for the solve checked against the grid at 1e-9.
pub const TIGHT_EPSILON: f64 = 1e-11;

/// Compares the solvers against the oracles on instances drawn from `cfg.seed`,
/// plus the configured problem itself when it is small enough.
pub fn oracle_suite(cfg: &ProblemConfig, problem: &Problem) -> Result<OracleReport> {
    let mut report = OracleReport::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let solver = cfg.solver();

    let s = cfg.multiplier_s.iter().copied().find(|s| *s < 0.0).unwrap_or(-2.0);
    let (d, r) = analytic_rd_point(s)?;
    let inst = StageInstance::symmetric(s, d);
    let sol = solve_stage(&inst.input(), &Terminal, &BaaConfig::with_epsilon(1e-8))?;
    let (d_hat, r_hat) = achieved_point(&inst.input(), &sol.mu_star)?;
    let label = format!("symmetric uniform s={s}");
    report.push(OracleEntry::new("rd_distortion", &label, d, d_hat, 1e-4, Comparison::Within));
    report.push(OracleEntry::new("rd_rate_nats", &label, r, r_hat, 1e-4, Comparison::Within));

    // Comparing against the grid at 1e-9 needs a solve converged well below that.
    let tight = BaaConfig {
        epsilon: TIGHT_EPSILON,
        max_iterations: 1_000_000,
        ..solver.clone()
    };
    for k in 0..ORACLE_STAGE_INSTANCES {
        let inst = random_stage_instance(&mut rng);
        let input = inst.input();
        let q = solve_stage(&input, &Terminal, &solver)?.q_value;
        let tight = solve_stage(&input, &Terminal, &tight)?.q_value;
        let bf = brute_force_stage(&input, &Terminal, 200)?;
        let label = format!("random stage #{k}");
        report.push(OracleEntry::new("stage_q_m200", &label, bf, q, 1e-3, Comparison::Within));
        report.push(OracleEntry::new("stage_q_not_above_grid", &label, bf, tight, 1e-9, Comparison::NotAbove));
        if k < 3 {
            let mut prev = brute_force_stage(&input, &Terminal, 20)?;
            for m in [50, 100, 200] {
                let next = brute_force_stage(&input, &Terminal, m)?;
                report.push(OracleEntry::new(
                    format!("stage_grid_monotone_m{m}"),
                    &label,
                    prev,
                    next,
                    0.0,
                    Comparison::NotAbove,
                ));
                prev = next;
            }
        }
    }

    let mut horizon_cases: Vec<(String, Problem)> = Vec::new();
    if (1..=MAX_ORACLE_HORIZON).contains(&problem.horizon()) && problem.states() == 2 && problem.controls() == 2 {
        horizon_cases.push(("configured problem".into(), problem.clone()));
    }
    for k in 0..ORACLE_HORIZON_INSTANCES {
        horizon_cases.push((format!("random N=2 #{k}"), random_binary_problem(&mut rng, 2)?));
    }
    for (label, p) in horizon_cases {
        let n_s = cfg.rolling_horizon.clamp(1, p.horizon());
        let grid = build_uniform_grid(cfg.quantization_levels, 2, 2)?;
        let artifact = train(&p, &grid, n_s, &solver, cfg.workers)?.artifact;
        let rollout = run_online(&p, &artifact, &cfg.rollout())?.total_lagrangian;
        let exact = refined_horizon_minimum(&p, 20, HORIZON_BUDGET)?.minimum;
        let on_grid = brute_force_horizon(&p, 20, HORIZON_BUDGET)?.minimum;
        report.push(OracleEntry::new("horizon_rollout_not_below", &label, exact, rollout, 1e-6, Comparison::NotBelow));
        report.push(OracleEntry::new("horizon_grid_m20", &label, on_grid, rollout, 0.0, Comparison::Reported));
    }
    Ok(report)
}

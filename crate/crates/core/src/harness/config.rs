//! JSON problem configuration.
//!
//! Parsing walks the document by hand rather than deriving it so that every
//! violated constraint is reported at once, each with its field path.

use std::path::Path;

use serde::Serialize;
use serde_json::{Map, Value};

use crate::baa::BaaConfig;
use crate::error::{ConfigViolation, Error, Result};
use crate::info::{DistortionFunction, LagrangeSchedule};
use crate::prob::{ControlPolicy, SimplexVector, StageKernel, TransitionKernel, SUM_TOLERANCE};
use crate::problem::{InitialPolicy, Problem};
use crate::rollout::{RolloutConfig, Selection};

pub const SCHEMA_VERSION: u64 = 1;

/// Transition kernel as written in the configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelSpec {
    /// Binary chain flipping with probability `alpha0` under `u_prev = 0` and `alpha1` under `u_prev = 1`.
    BinarySymmetric { alpha0: f64, alpha1: f64 },
    /// One matrix for every stage: `[u_prev][x_prev]` is a distribution over `x`.
    Stationary(Vec<Vec<Vec<f64>>>),
    /// One matrix per stage `t = 1..=N`, each laid out as in `Stationary`.
    PerStage(Vec<Vec<Vec<Vec<f64>>>>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DistortionSpec {
    Hamming,
    /// `[x][u]`.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialPolicySpec {
    Optimize,
    /// `[x_0]` is a distribution over `u_0`.
    Matrix(Vec<Vec<f64>>),
}

/// Sweep lists for the scaling benchmark.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchSpec {
    pub levels: Vec<usize>,
    pub rolling_horizons: Vec<usize>,
    pub horizons: Vec<usize>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            levels: vec![10, 20, 40],
            rolling_horizons: vec![2, 4, 8],
            horizons: vec![25, 50, 100],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProblemConfig {
    pub schema_version: u64,
    pub states: usize,
    pub controls: usize,
    pub horizon: usize,
    pub rolling_horizon: usize,
    pub quantization_levels: usize,
    pub kernel: KernelSpec,
    pub initial_state_distribution: Vec<f64>,
    pub initial_policy: InitialPolicySpec,
    /// Optional `P_0(u_0)`; when present it must agree with the one implied
    /// by the initial policy and state distribution.
    pub initial_control_marginal: Option<Vec<f64>>,
    pub distortion: DistortionSpec,
    pub multiplier_s: Vec<f64>,
    pub threshold_d: Vec<f64>,
    pub epsilon_nats: f64,
    pub max_iterations: usize,
    pub prob_floor: f64,
    pub rollout_rounds: usize,
    pub selection: Selection,
    pub seed: u64,
    /// `0` lets the runtime pick.
    pub workers: usize,
    pub bench: BenchSpec,
}

impl ProblemConfig {
    pub fn problem(&self) -> Result<Problem> {
        let p0 = SimplexVector::new(self.initial_state_distribution.clone())?;
        let kernel = match &self.kernel {
            KernelSpec::BinarySymmetric { alpha0, alpha1 } => TransitionKernel::time_invariant(
                p0,
                StageKernel::binary_symmetric(*alpha0, *alpha1)?,
                self.horizon,
            )?,
            KernelSpec::Stationary(m) => {
                TransitionKernel::time_invariant(p0, stage_kernel(m)?, self.horizon)?
            }
            KernelSpec::PerStage(stages) => {
                let mut all = vec![StageKernel::initial(p0)];
                for m in stages {
                    all.push(stage_kernel(m)?);
                }
                TransitionKernel::new(all)?
            }
        };
        let distortion = match &self.distortion {
            DistortionSpec::Hamming => DistortionFunction::hamming(self.states),
            DistortionSpec::Matrix(m) => {
                DistortionFunction::new(self.states, self.controls, m.concat())?
            }
        };
        let initial_policy = match &self.initial_policy {
            InitialPolicySpec::Optimize => InitialPolicy::Optimize,
            InitialPolicySpec::Matrix(rows) => InitialPolicy::Fixed(ControlPolicy::new(
                0,
                self.states,
                rows.iter()
                    .map(|r| SimplexVector::new(r.clone()))
                    .collect::<Result<_>>()?,
            )?),
        };
        Problem::new(
            kernel,
            distortion,
            LagrangeSchedule::new(self.multiplier_s.clone(), self.threshold_d.clone())?,
            initial_policy,
        )
    }

    pub fn solver(&self) -> BaaConfig {
        BaaConfig {
            epsilon: self.epsilon_nats,
            max_iterations: self.max_iterations,
            prob_floor: self.prob_floor,
            ..BaaConfig::default()
        }
    }

    pub fn rollout(&self) -> RolloutConfig {
        RolloutConfig {
            rounds: self.rollout_rounds,
            baseline: false,
            selection: self.selection,
            solver: self.solver(),
            workers: self.workers,
        }
    }
}

/// `[u_prev][x_prev]` rows into the kernel's `x_prev`-major layout.
fn stage_kernel(m: &[Vec<Vec<f64>>]) -> Result<StageKernel> {
    let contexts = m.len();
    let prev_states = m.first().map_or(0, Vec::len);
    let mut rows = Vec::with_capacity(contexts * prev_states);
    for x_prev in 0..prev_states {
        for block in m {
            rows.push(SimplexVector::new(block[x_prev].clone())?);
        }
    }
    StageKernel::new(prev_states, contexts, rows)
}

pub fn parse_config(path: &Path) -> Result<ProblemConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<ProblemConfig> {
    let doc: Value = serde_json::from_str(text)
        .map_err(|e| Error::Config(vec![ConfigViolation::new("$", format!("not valid JSON: {e}"))]))?;
    let Some(obj) = doc.as_object() else {
        return Err(Error::Config(vec![ConfigViolation::new("$", "expected an object")]));
    };
    let mut w = Walker {
        obj,
        errs: Vec::new(),
    };
    let cfg = w.config();
    match cfg {
        Some(cfg) if w.errs.is_empty() => Ok(cfg),
        _ => Err(Error::Config(w.errs)),
    }
}

struct Walker<'a> {
    obj: &'a Map<String, Value>,
    errs: Vec<ConfigViolation>,
}

const KNOWN_FIELDS: &[&str] = &[
    "schema_version",
    "states",
    "controls",
    "horizon",
    "rolling_horizon",
    "quantization_levels",
    "kernel",
    "initial_state_distribution",
    "initial_policy",
    "initial_control_marginal",
    "distortion",
    "multiplier_s",
    "threshold_d",
    "epsilon_nats",
    "max_iterations",
    "prob_floor",
    "rollout_rounds",
    "selection",
    "seed",
    "workers",
    "bench",
];

impl Walker<'_> {
    fn fail(&mut self, field: impl Into<String>, msg: impl Into<String>) {
        self.errs.push(ConfigViolation::new(field, msg));
    }

    fn required(&mut self, key: &str) -> Option<&Value> {
        let v = self.obj.get(key);
        if v.is_none() {
            self.fail(key, "missing field");
        }
        v
    }

    fn uint(&mut self, key: &str, default: Option<u64>) -> Option<u64> {
        let v = match (self.obj.get(key), default) {
            (Some(v), _) => v,
            (None, Some(d)) => return Some(d),
            (None, None) => {
                self.fail(key, "missing field");
                return None;
            }
        };
        let out = v.as_u64();
        if out.is_none() {
            self.fail(key, format!("expected a non-negative integer, got {v}"));
        }
        out
    }

    fn real(&mut self, key: &str, default: Option<f64>) -> Option<f64> {
        let v = match (self.obj.get(key), default) {
            (Some(v), _) => v,
            (None, Some(d)) => return Some(d),
            (None, None) => {
                self.fail(key, "missing field");
                return None;
            }
        };
        let out = v.as_f64().filter(|x| x.is_finite());
        if out.is_none() {
            self.fail(key, format!("expected a finite number, got {v}"));
        }
        out
    }

    fn config(&mut self) -> Option<ProblemConfig> {
        for key in self.obj.keys() {
            if !KNOWN_FIELDS.contains(&key.as_str()) {
                self.errs.push(ConfigViolation::new(key.clone(), "unknown field"));
            }
        }
        let schema_version = self.uint("schema_version", None);
        if let Some(v) = schema_version {
            if v != SCHEMA_VERSION {
                self.fail("schema_version", format!("unsupported version {v}, expected {SCHEMA_VERSION}"));
            }
        }
        let states = self.positive("states");
        let controls = self.positive("controls");
        let horizon = self.uint("horizon", None).map(|v| v as usize);
        let rolling_horizon = self.uint("rolling_horizon", None).map(|v| v as usize);
        if let (Some(n), Some(ns)) = (horizon, rolling_horizon) {
            if ns > n {
                self.fail("rolling_horizon", format!("must not exceed horizon {n} (got {ns})"));
            }
        }
        let quantization_levels = self.uint("quantization_levels", None).map(|v| v as usize);
        if quantization_levels.is_some_and(|n| n < 2) {
            self.fail("quantization_levels", "must be at least 2");
        }
        let kernel = self.kernel(states, controls, horizon);
        let initial_state_distribution = self
            .required("initial_state_distribution")
            .cloned()
            .and_then(|v| self.distribution("initial_state_distribution", &v, states));
        let initial_policy = self.initial_policy(states, controls);
        let initial_control_marginal = self.marginal(controls, &initial_state_distribution, &initial_policy);
        let distortion = self.distortion(states, controls);
        let multiplier_s = self.schedule("multiplier_s", horizon);
        if let Some(s) = &multiplier_s {
            for (t, v) in s.iter().enumerate() {
                if *v > 0.0 {
                    self.fail(format!("multiplier_s[{t}]"), format!("s_t ≤ 0 is required (got {v})"));
                }
            }
        }
        let threshold_d = self.schedule("threshold_d", horizon);
        if let Some(d) = &threshold_d {
            for (t, v) in d.iter().enumerate() {
                if *v < 0.0 {
                    self.fail(format!("threshold_d[{t}]"), format!("must be non-negative (got {v})"));
                }
            }
        }
        let epsilon_nats = self.real("epsilon_nats", Some(1e-6));
        if epsilon_nats.is_some_and(|e| e <= 0.0) {
            self.fail("epsilon_nats", "must be positive");
        }
        let max_iterations = self.uint("max_iterations", Some(100_000)).map(|v| v as usize);
        if max_iterations == Some(0) {
            self.fail("max_iterations", "must be positive");
        }
        let prob_floor = self.real("prob_floor", Some(crate::prob::DEFAULT_PROB_FLOOR));
        if prob_floor.is_some_and(|f| !(f > 0.0 && f < 0.5)) {
            self.fail("prob_floor", "must lie in (0, 0.5)");
        }
        let rollout_rounds = self.uint("rollout_rounds", Some(1)).map(|v| v as usize);
        if rollout_rounds == Some(0) {
            self.fail("rollout_rounds", "must be at least 1");
        }
        let selection = self.selection();
        let seed = self.uint("seed", Some(0));
        let workers = self.uint("workers", Some(0)).map(|v| v as usize);
        let bench = self.bench();

        Some(ProblemConfig {
            schema_version: schema_version?,
            states: states?,
            controls: controls?,
            horizon: horizon?,
            rolling_horizon: rolling_horizon?,
            quantization_levels: quantization_levels?,
            kernel: kernel?,
            initial_state_distribution: initial_state_distribution?,
            initial_policy: initial_policy?,
            initial_control_marginal,
            distortion: distortion?,
            multiplier_s: multiplier_s?,
            threshold_d: threshold_d?,
            epsilon_nats: epsilon_nats?,
            max_iterations: max_iterations?,
            prob_floor: prob_floor?,
            rollout_rounds: rollout_rounds?,
            selection: selection?,
            seed: seed?,
            workers: workers?,
            bench: bench?,
        })
    }

    fn positive(&mut self, key: &str) -> Option<usize> {
        let v = self.uint(key, None)?;
        if v < 2 {
            self.fail(key, format!("alphabet needs at least 2 symbols (got {v})"));
            return None;
        }
        Some(v as usize)
    }

    fn numbers(&mut self, path: &str, v: &Value) -> Option<Vec<f64>> {
        let Some(arr) = v.as_array() else {
            self.fail(path, "expected an array of numbers");
            return None;
        };
        let mut out = Vec::with_capacity(arr.len());
        let mut ok = true;
        for (i, x) in arr.iter().enumerate() {
            match x.as_f64().filter(|f| f.is_finite()) {
                Some(f) => out.push(f),
                None => {
                    self.fail(format!("{path}[{i}]"), format!("expected a finite number, got {x}"));
                    ok = false;
                }
            }
        }
        ok.then_some(out)
    }

    fn distribution(&mut self, path: &str, v: &Value, len: Option<usize>) -> Option<Vec<f64>> {
        let p = self.numbers(path, v)?;
        let mut ok = true;
        if let Some(n) = len {
            if p.len() != n {
                self.fail(path, format!("expected {n} entries, got {}", p.len()));
                ok = false;
            }
        }
        for (i, x) in p.iter().enumerate() {
            if *x < 0.0 {
                self.fail(format!("{path}[{i}]"), format!("probability must be non-negative (got {x})"));
                ok = false;
            }
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            self.fail(path, format!("probabilities sum to {sum}, expected 1"));
            ok = false;
        }
        ok.then_some(p)
    }

    /// Rows that are each a distribution of length `cols`, `rows` of them.
    fn stochastic(&mut self, path: &str, v: &Value, rows: Option<usize>, cols: Option<usize>) -> Option<Vec<Vec<f64>>> {
        let Some(arr) = v.as_array() else {
            self.fail(path, "expected an array of rows");
            return None;
        };
        let mut ok = true;
        if let Some(n) = rows {
            if arr.len() != n {
                self.fail(path, format!("expected {n} rows, got {}", arr.len()));
                ok = false;
            }
        }
        let mut out = Vec::with_capacity(arr.len());
        for (i, row) in arr.iter().enumerate() {
            match self.distribution(&format!("{path}[{i}]"), row, cols) {
                Some(r) => out.push(r),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn kernel_matrix(
        &mut self,
        path: &str,
        v: &Value,
        states: Option<usize>,
        controls: Option<usize>,
    ) -> Option<Vec<Vec<Vec<f64>>>> {
        let Some(arr) = v.as_array() else {
            self.fail(path, "expected one block per previous control");
            return None;
        };
        let mut ok = true;
        if let Some(c) = controls {
            if arr.len() != c {
                self.fail(path, format!("expected {c} blocks (one per previous control), got {}", arr.len()));
                ok = false;
            }
        }
        let mut out = Vec::with_capacity(arr.len());
        for (u, block) in arr.iter().enumerate() {
            match self.stochastic(&format!("{path}[{u}]"), block, states, states) {
                Some(b) => out.push(b),
                None => ok = false,
            }
        }
        ok.then_some(out)
    }

    fn kernel(&mut self, states: Option<usize>, controls: Option<usize>, horizon: Option<usize>) -> Option<KernelSpec> {
        let v = self.required("kernel")?.clone();
        let Some(obj) = v.as_object().filter(|o| o.len() == 1) else {
            self.fail("kernel", "expected exactly one of binary_symmetric, stationary, per_stage");
            return None;
        };
        let (kind, body) = obj.iter().next()?;
        match kind.as_str() {
            "binary_symmetric" => {
                if states.is_some_and(|s| s != 2) || controls.is_some_and(|c| c != 2) {
                    self.fail("kernel.binary_symmetric", "needs binary state and control alphabets");
                }
                let mut alpha = |name: &str| {
                    let path = format!("kernel.binary_symmetric.{name}");
                    match body.get(name).and_then(Value::as_f64) {
                        Some(a) if a > 0.0 && a < 1.0 => Some(a),
                        Some(a) => {
                            self.fail(path, format!("must lie in (0, 1) (got {a})"));
                            None
                        }
                        None => {
                            self.fail(path, "missing or not a number");
                            None
                        }
                    }
                };
                let alpha0 = alpha("alpha0");
                let alpha1 = alpha("alpha1");
                Some(KernelSpec::BinarySymmetric {
                    alpha0: alpha0?,
                    alpha1: alpha1?,
                })
            }
            "stationary" => self
                .kernel_matrix("kernel.stationary", body, states, controls)
                .map(KernelSpec::Stationary),
            "per_stage" => {
                let Some(arr) = body.as_array() else {
                    self.fail("kernel.per_stage", "expected one matrix per stage");
                    return None;
                };
                let mut ok = true;
                if let Some(n) = horizon {
                    if arr.len() != n {
                        self.fail("kernel.per_stage", format!("expected {n} stage matrices, got {}", arr.len()));
                        ok = false;
                    }
                }
                let mut out = Vec::with_capacity(arr.len());
                for (i, m) in arr.iter().enumerate() {
                    match self.kernel_matrix(&format!("kernel.per_stage[{i}]"), m, states, controls) {
                        Some(k) => out.push(k),
                        None => ok = false,
                    }
                }
                ok.then_some(KernelSpec::PerStage(out))
            }
            other => {
                self.fail("kernel", format!("unknown kernel kind {other:?}"));
                None
            }
        }
    }

    fn initial_policy(&mut self, states: Option<usize>, controls: Option<usize>) -> Option<InitialPolicySpec> {
        let v = self.required("initial_policy")?.clone();
        if v.as_str() == Some("optimize") {
            return Some(InitialPolicySpec::Optimize);
        }
        if v.is_string() {
            self.fail("initial_policy", "expected a matrix or \"optimize\"");
            return None;
        }
        self.stochastic("initial_policy", &v, states, controls)
            .map(InitialPolicySpec::Matrix)
    }

    fn marginal(
        &mut self,
        controls: Option<usize>,
        p0: &Option<Vec<f64>>,
        policy: &Option<InitialPolicySpec>,
    ) -> Option<Vec<f64>> {
        let v = self.obj.get("initial_control_marginal")?.clone();
        let given = self.distribution("initial_control_marginal", &v, controls)?;
        match (p0, policy) {
            (Some(p0), Some(InitialPolicySpec::Matrix(mu))) if mu.len() == p0.len() => {
                for (u, g) in given.iter().enumerate() {
                    let implied: f64 = p0.iter().zip(mu).map(|(p, row)| p * row.get(u).copied().unwrap_or(0.0)).sum();
                    if (implied - g).abs() > 1e-9 {
                        self.fail(
                            format!("initial_control_marginal[{u}]"),
                            format!("{g} disagrees with {implied} implied by the initial policy and state distribution"),
                        );
                    }
                }
            }
            (_, Some(InitialPolicySpec::Optimize)) => {
                self.fail("initial_control_marginal", "cannot be given when the initial policy is optimized");
            }
            _ => {}
        }
        Some(given)
    }

    fn distortion(&mut self, states: Option<usize>, controls: Option<usize>) -> Option<DistortionSpec> {
        let v = self
            .obj
            .get("distortion")
            .cloned()
            .unwrap_or_else(|| Value::String("hamming".into()));
        if v.as_str() == Some("hamming") {
            if let (Some(s), Some(c)) = (states, controls) {
                if s != c {
                    self.fail("distortion", "hamming distortion needs equal state and control alphabets");
                }
            }
            return Some(DistortionSpec::Hamming);
        }
        let Some(arr) = v.as_array() else {
            self.fail("distortion", "expected \"hamming\" or a matrix");
            return None;
        };
        let mut ok = true;
        if let Some(s) = states {
            if arr.len() != s {
                self.fail("distortion", format!("expected {s} rows, got {}", arr.len()));
                ok = false;
            }
        }
        let mut out = Vec::with_capacity(arr.len());
        for (x, row) in arr.iter().enumerate() {
            let path = format!("distortion[{x}]");
            let Some(r) = self.numbers(&path, row) else {
                ok = false;
                continue;
            };
            if let Some(c) = controls {
                if r.len() != c {
                    self.fail(path.clone(), format!("expected {c} entries, got {}", r.len()));
                    ok = false;
                }
            }
            if r.iter().any(|d| *d < 0.0) {
                self.fail(path, "distortion values must be non-negative");
                ok = false;
            }
            out.push(r);
        }
        ok.then_some(DistortionSpec::Matrix(out))
    }

    /// A scalar broadcast to every stage or a list of length `N + 1`.
    fn schedule(&mut self, key: &str, horizon: Option<usize>) -> Option<Vec<f64>> {
        let v = self.required(key)?.clone();
        if let Some(x) = v.as_f64() {
            return horizon.map(|n| vec![x; n + 1]);
        }
        let list = self.numbers(key, &v)?;
        if let Some(n) = horizon {
            if list.len() != n + 1 {
                self.fail(key, format!("expected {} entries (horizon + 1), got {}", n + 1, list.len()));
                return None;
            }
        }
        Some(list)
    }

    fn selection(&mut self) -> Option<Selection> {
        match self.obj.get("selection").map(|v| v.as_str()) {
            None | Some(Some("lookahead")) => Some(Selection::Lookahead),
            Some(Some("grid_policies")) => Some(Selection::GridPolicies),
            _ => {
                self.fail("selection", "expected \"lookahead\" or \"grid_policies\"");
                None
            }
        }
    }

    fn bench(&mut self) -> Option<BenchSpec> {
        let mut spec = BenchSpec::default();
        let Some(v) = self.obj.get("bench").cloned() else {
            return Some(spec);
        };
        let Some(obj) = v.as_object() else {
            self.fail("bench", "expected an object");
            return None;
        };
        let mut ok = true;
        for (key, body) in obj {
            let slot = match key.as_str() {
                "levels" => &mut spec.levels,
                "rolling_horizons" => &mut spec.rolling_horizons,
                "horizons" => &mut spec.horizons,
                _ => {
                    self.fail(format!("bench.{key}"), "unknown field");
                    ok = false;
                    continue;
                }
            };
            let path = format!("bench.{key}");
            match body.as_array().and_then(|a| a.iter().map(Value::as_u64).collect::<Option<Vec<_>>>()) {
                Some(list) if list.iter().all(|x| *x > 0) => {
                    *slot = list.into_iter().map(|x| x as usize).collect();
                }
                _ => {
                    self.fail(path, "expected a list of positive integers");
                    ok = false;
                }
            }
        }
        ok.then_some(spec)
    }
}

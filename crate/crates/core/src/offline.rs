//! Backward training of the base policy over the trailing stages.
//!
//! For each stage from `N` down to `N − N_s + 1`, every grid belief is solved
//! once per context with [`solve_stage`]. The last stage uses the terminal
//! (zero) continuation; every earlier stage reads its continuation from the
//! table trained just before it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baa::{solve_stage, BaaConfig, ContinuationLookup, StageSolution, Terminal};
use crate::clock::Stopwatch;
use crate::error::{Error, Result};
use crate::grid::{BeliefGrid, GridIndex};
use crate::parallel::map_indexed;
use crate::prob::{InformationState, SimplexVector};
use crate::problem::Problem;

pub const ARTIFACT_FORMAT: &str = "dirollout-artifact";
pub const ARTIFACT_VERSION: u32 = 1;
/// Largest tolerated fraction of non-converged grid points per stage.
pub const MAX_FLAGGED_FRACTION: f64 = 0.1;

/// The stored solution for one grid point and one context.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextEntry {
    pub q_value: f64,
    /// Rows `μ*(·|x)`, one per state.
    pub mu_star: Vec<SimplexVector>,
    pub nu_star: SimplexVector,
    pub converged: bool,
    pub iterations: usize,
    pub final_gap: f64,
}

impl From<StageSolution> for ContextEntry {
    fn from(s: StageSolution) -> Self {
        Self {
            q_value: s.q_value,
            mu_star: s.mu_star,
            nu_star: s.nu_star,
            converged: s.converged,
            iterations: s.iterations,
            final_gap: s.final_gap,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub contexts: Vec<ContextEntry>,
}

impl GridEntry {
    /// True when any context failed to converge.
    pub fn flagged(&self) -> bool {
        self.contexts.iter().any(|c| !c.converged)
    }
}

/// Per-grid-point solutions of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FlatTable", into = "FlatTable")]
pub struct QTable {
    pub stage: usize,
    entries: Vec<GridEntry>,
}

impl QTable {
    pub fn new(stage: usize, entries: Vec<GridEntry>) -> Result<Self> {
        let first = entries
            .first()
            .ok_or_else(|| Error::Shape("a Q table needs at least one entry".into()))?;
        let contexts = first.contexts.len();
        let states = first.contexts.first().map_or(0, |c| c.mu_star.len());
        let controls = first.contexts.first().map_or(0, |c| c.nu_star.len());
        if contexts == 0 || states == 0 {
            return Err(Error::Shape("Q table entries must be nonempty".into()));
        }
        for e in &entries {
            if e.contexts.len() != contexts {
                return Err(Error::Shape("Q table entries differ in context count".into()));
            }
            for c in &e.contexts {
                if !c.q_value.is_finite() {
                    return Err(Error::NumericalConsistency(format!(
                        "stage {stage} has a non-finite Q value"
                    )));
                }
                if c.mu_star.len() != states
                    || c.nu_star.len() != controls
                    || c.mu_star.iter().any(|r| r.len() != controls)
                {
                    return Err(Error::Shape("Q table entries differ in shape".into()));
                }
            }
        }
        Ok(Self { stage, entries })
    }

    pub fn entries(&self) -> &[GridEntry] {
        &self.entries
    }

    pub fn entry(&self, i: GridIndex) -> &GridEntry {
        &self.entries[i.0]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn flagged(&self) -> usize {
        self.entries.iter().filter(|e| e.flagged()).count()
    }

    fn dims(&self) -> (usize, usize, usize) {
        let c = &self.entries[0].contexts[0];
        (self.entries[0].contexts.len(), c.mu_star.len(), c.nu_star.len())
    }
}

/// Serialized table: flattened arrays in point → context → state → control order.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct FlatTable {
    stage: usize,
    points: usize,
    contexts: usize,
    states: usize,
    controls: usize,
    q_values: Vec<f64>,
    mu_star: Vec<f64>,
    nu_star: Vec<f64>,
    converged: Vec<bool>,
    iterations: Vec<usize>,
    final_gap: Vec<f64>,
}

impl From<QTable> for FlatTable {
    fn from(t: QTable) -> Self {
        let (contexts, states, controls) = t.dims();
        let cells = t.entries.iter().flat_map(|e| e.contexts.iter());
        FlatTable {
            stage: t.stage,
            points: t.entries.len(),
            contexts,
            states,
            controls,
            q_values: cells.clone().map(|c| c.q_value).collect(),
            mu_star: cells
                .clone()
                .flat_map(|c| c.mu_star.iter().flat_map(|r| r.probs().iter().copied()))
                .collect(),
            nu_star: cells
                .clone()
                .flat_map(|c| c.nu_star.probs().iter().copied())
                .collect(),
            converged: cells.clone().map(|c| c.converged).collect(),
            iterations: cells.clone().map(|c| c.iterations).collect(),
            final_gap: cells.map(|c| c.final_gap).collect(),
        }
    }
}

impl TryFrom<FlatTable> for QTable {
    type Error = Error;

    fn try_from(f: FlatTable) -> Result<Self> {
        let cells = f.points * f.contexts;
        let sizes_ok = f.q_values.len() == cells
            && f.mu_star.len() == cells * f.states * f.controls
            && f.nu_star.len() == cells * f.controls
            && f.converged.len() == cells
            && f.iterations.len() == cells
            && f.final_gap.len() == cells;
        if !sizes_ok || f.states == 0 || f.controls == 0 {
            return Err(Error::Parse(format!(
                "table for stage {} has inconsistent array lengths",
                f.stage
            )));
        }
        let block = f.states * f.controls;
        let mut entries = Vec::with_capacity(f.points);
        for p in 0..f.points {
            let mut contexts = Vec::with_capacity(f.contexts);
            for c in 0..f.contexts {
                let k = p * f.contexts + c;
                let mu_star = f.mu_star[k * block..(k + 1) * block]
                    .chunks(f.controls)
                    .map(|r| SimplexVector::new(r.to_vec()))
                    .collect::<Result<_>>()?;
                let nu_star =
                    SimplexVector::new(f.nu_star[k * f.controls..(k + 1) * f.controls].to_vec())?;
                contexts.push(ContextEntry {
                    q_value: f.q_values[k],
                    mu_star,
                    nu_star,
                    converged: f.converged[k],
                    iterations: f.iterations[k],
                    final_gap: f.final_gap[k],
                });
            }
            entries.push(GridEntry { contexts });
        }
        QTable::new(f.stage, entries)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHeader {
    pub format: String,
    pub version: u32,
    pub fingerprint: String,
    pub states: usize,
    pub controls: usize,
    pub horizon: usize,
    pub rolling_horizon: usize,
}

/// Trained Q tables for stages `N` down to `N − N_s + 1` on one grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineArtifact {
    pub header: ArtifactHeader,
    pub grid: BeliefGrid,
    /// Ordered from stage `N` downwards.
    pub tables: Vec<QTable>,
}

impl OfflineArtifact {
    /// First stage covered by the tables, `N − N_s + 1`.
    pub fn first_stage(&self) -> usize {
        self.header.horizon + 1 - self.header.rolling_horizon
    }

    pub fn table(&self, stage: usize) -> Option<&QTable> {
        let n = self.header.horizon;
        if stage > n || stage < self.first_stage() {
            return None;
        }
        self.tables.get(n - stage)
    }

    fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.rolling_horizon == 0 || h.rolling_horizon > h.horizon {
            return Err(Error::Parse(format!(
                "rolling horizon {} is outside 1..={}",
                h.rolling_horizon, h.horizon
            )));
        }
        if self.tables.len() != h.rolling_horizon {
            return Err(Error::Parse(format!(
                "artifact holds {} tables for a rolling horizon of {}",
                self.tables.len(),
                h.rolling_horizon
            )));
        }
        for (i, t) in self.tables.iter().enumerate() {
            if t.stage != h.horizon - i {
                return Err(Error::Parse(format!(
                    "table {i} is for stage {}, expected {}",
                    t.stage,
                    h.horizon - i
                )));
            }
            if t.len() != self.grid.len() {
                return Err(Error::Parse(format!(
                    "table for stage {} has {} entries, grid has {}",
                    t.stage,
                    t.len(),
                    self.grid.len()
                )));
            }
            let (contexts, states, controls) = t.dims();
            if contexts != self.grid.contexts() || states != h.states || controls != h.controls {
                return Err(Error::Parse(format!(
                    "table for stage {} does not match the artifact alphabets",
                    t.stage
                )));
            }
        }
        Ok(())
    }
}

/// The artifact plus the per-stage timings of the run that produced it.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub artifact: OfflineArtifact,
    /// `(stage, milliseconds)` in training order.
    pub stage_wall_ms: Vec<(usize, f64)>,
    pub flagged: usize,
    pub total_points: usize,
}

impl TrainReport {
    pub fn total_wall_ms(&self) -> f64 {
        self.stage_wall_ms.iter().map(|(_, ms)| ms).sum()
    }
}

/// Continuation read from a trained table at the nearest grid point.
#[derive(Debug, Clone, Copy)]
pub struct TableContinuation<'a> {
    pub grid: &'a BeliefGrid,
    pub table: &'a QTable,
}

impl ContinuationLookup for TableContinuation<'_> {
    fn value(&self, successor: &InformationState, u: usize) -> f64 {
        self.table.entry(self.grid.nearest(successor)).contexts[u].q_value
    }
}

/// Stored Q value at the grid point nearest to `b`, in context `u`.
pub fn continuation_lookup(
    table: &QTable,
    grid: &BeliefGrid,
    b: &InformationState,
    u: usize,
) -> Result<f64> {
    if table.is_empty() {
        return Err(Error::Precondition("continuation lookup on an empty table".into()));
    }
    if table.len() != grid.len() || b.contexts() != grid.contexts() {
        return Err(Error::Shape("table, grid and belief disagree in size".into()));
    }
    let entry = table.entry(grid.nearest(b));
    entry
        .contexts
        .get(u)
        .map(|c| c.q_value)
        .ok_or_else(|| Error::Shape(format!("context {u} out of range")))
}

#[derive(Serialize)]
struct FingerprintInput<'a> {
    problem: &'a Problem,
    rolling_horizon: usize,
    levels: usize,
    epsilon: f64,
    max_iterations: usize,
    prob_floor: f64,
    exponent_cap: f64,
    initial_output: &'a Option<SimplexVector>,
}

/// Hex SHA-256 of everything that determines the trained tables.
pub fn fingerprint(problem: &Problem, rolling_horizon: usize, levels: usize, cfg: &BaaConfig) -> String {
    let input = FingerprintInput {
        problem,
        rolling_horizon,
        levels,
        epsilon: cfg.epsilon,
        max_iterations: cfg.max_iterations,
        prob_floor: cfg.prob_floor,
        exponent_cap: cfg.exponent_cap,
        initial_output: &cfg.initial_output,
    };
    let bytes = serde_json::to_vec(&input).expect("fingerprint input serializes");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Trains stages `N ..= N − N_s + 1` on `grid`.
///
/// `workers` bounds the pool that solves grid points within a stage; `0`
/// uses the runtime default. The result does not depend on it.
pub fn train(
    problem: &Problem,
    grid: &BeliefGrid,
    rolling_horizon: usize,
    cfg: &BaaConfig,
    workers: usize,
) -> Result<TrainReport> {
    let n = problem.horizon();
    if rolling_horizon == 0 || rolling_horizon > n {
        return Err(Error::Precondition(format!(
            "rolling horizon {rolling_horizon} must lie in 1..={n}"
        )));
    }
    if grid.contexts() != problem.controls() || grid.points()[0].states() != problem.states() {
        return Err(Error::Shape("grid does not match the problem alphabets".into()));
    }
    cfg.validate()?;

    let controls = problem.controls();
    let mut tables: Vec<QTable> = Vec::with_capacity(rolling_horizon);
    let mut stage_wall_ms = Vec::with_capacity(rolling_horizon);
    let mut flagged = 0;
    for t in (n + 1 - rolling_horizon..=n).rev() {
        let clock = Stopwatch::start();
        let stage_grid = grid.at_stage(t);
        let next = tables.last().map(|table| TableContinuation { grid, table });
        let entries = map_indexed(stage_grid.len(), workers, |i| {
            let b = stage_grid.point(GridIndex(i));
            let contexts = (0..controls)
                .map(|c| {
                    let input = problem.stage_input(b, t, c);
                    let sol = match &next {
                        Some(cont) => solve_stage(&input, cont, cfg)?,
                        None => solve_stage(&input, &Terminal, cfg)?,
                    };
                    Ok(ContextEntry::from(sol))
                })
                .collect::<Result<_>>()?;
            Ok(GridEntry { contexts })
        })?;
        let table = QTable::new(t, entries)?;
        let stage_flagged = table.flagged();
        if stage_flagged as f64 > MAX_FLAGGED_FRACTION * table.len() as f64 {
            return Err(Error::TrainingFailure {
                stage: t,
                flagged: stage_flagged,
                total: table.len(),
            });
        }
        flagged += stage_flagged;
        tables.push(table);
        stage_wall_ms.push((t, clock.elapsed_ms()));
    }

    let artifact = OfflineArtifact {
        header: ArtifactHeader {
            format: ARTIFACT_FORMAT.into(),
            version: ARTIFACT_VERSION,
            fingerprint: fingerprint(problem, rolling_horizon, grid.levels(), cfg),
            states: problem.states(),
            controls,
            horizon: n,
            rolling_horizon,
        },
        grid: grid.clone(),
        tables,
    };
    Ok(TrainReport {
        total_points: artifact.grid.len() * rolling_horizon,
        artifact,
        stage_wall_ms,
        flagged,
    })
}

pub fn artifact_to_string(a: &OfflineArtifact) -> Result<String> {
    Ok(serde_json::to_string(a)?)
}

/// Parses an artifact, checking the format tag, version and, when given, the fingerprint.
pub fn artifact_from_str(text: &str, expected_fingerprint: Option<&str>) -> Result<OfflineArtifact> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let header = value
        .get("header")
        .ok_or_else(|| Error::Parse("artifact has no header".into()))?;
    let format = header.get("format").and_then(|v| v.as_str());
    if format != Some(ARTIFACT_FORMAT) {
        return Err(Error::Parse(format!(
            "not a {ARTIFACT_FORMAT} file (format {format:?})"
        )));
    }
    match header.get("version").and_then(|v| v.as_u64()) {
        Some(v) if v == ARTIFACT_VERSION as u64 => {}
        found => {
            let found = found.map_or_else(|| "missing".to_string(), |v| v.to_string());
            return Err(Error::Parse(format!(
                "artifact version {found} is not supported; expected version {ARTIFACT_VERSION}"
            )));
        }
    }
    let artifact: OfflineArtifact = serde_json::from_value(value)?;
    artifact.validate()?;
    if let Some(expected) = expected_fingerprint {
        if artifact.header.fingerprint != expected {
            return Err(Error::StaleArtifact {
                expected: expected.to_string(),
                found: artifact.header.fingerprint.clone(),
            });
        }
    }
    Ok(artifact)
}

pub fn save_artifact(a: &OfflineArtifact, path: &Path) -> Result<()> {
    std::fs::write(path, artifact_to_string(a)?)?;
    Ok(())
}

pub fn load_artifact(path: &Path, expected_fingerprint: Option<&str>) -> Result<OfflineArtifact> {
    artifact_from_str(&std::fs::read_to_string(path)?, expected_fingerprint)
}

//! Finite grids over the binary information-state space.
//!
//! A grid is the Cartesian product, over contexts, of a per-context axis of
//! binary distributions `[p, 1 − p]`. Points are ordered lexicographically with
//! context 0 most significant, so a grid with `n` levels and `k` contexts has
//! `n^k` points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{InformationState, SimplexVector};
use crate::rollout::RolloutTrajectory;

/// Position of a point inside a [`BeliefGrid`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridIndex(pub usize);

/// Contexts with marginal weight at or below this are ignored when refining.
pub const REFINE_WEIGHT_FLOOR: f64 = 1e-12;
/// Fraction of the visited range added on each side when refining.
pub const REFINE_PADDING: f64 = 0.05;
/// Half-width used when every visited value coincides.
pub const REFINE_DEGENERATE_HALF_WIDTH: f64 = 0.05;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct BeliefGrid {
    pub stage: usize,
    axes: Vec<Vec<f64>>,
    rows: Vec<Vec<SimplexVector>>,
    points: Vec<InformationState>,
}

/// Serialized form: the per-context axes of first components.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct GridSpec {
    stage: usize,
    axes: Vec<Vec<f64>>,
}

impl TryFrom<GridSpec> for BeliefGrid {
    type Error = Error;
    fn try_from(g: GridSpec) -> Result<Self> {
        BeliefGrid::from_axes(g.stage, g.axes)
    }
}

impl From<BeliefGrid> for GridSpec {
    fn from(g: BeliefGrid) -> Self {
        GridSpec {
            stage: g.stage,
            axes: g.axes,
        }
    }
}

impl PartialEq for BeliefGrid {
    fn eq(&self, other: &Self) -> bool {
        self.stage == other.stage && self.axes == other.axes
    }
}

impl BeliefGrid {
    /// Builds the product grid from one ascending axis of first components per context.
    pub fn from_axes(stage: usize, axes: Vec<Vec<f64>>) -> Result<Self> {
        if axes.is_empty() {
            return Err(Error::Shape("grid needs at least one context".into()));
        }
        let levels = axes[0].len();
        if levels == 0 || axes.iter().any(|a| a.len() != levels) {
            return Err(Error::Shape("every context axis needs the same nonzero length".into()));
        }
        for axis in &axes {
            if axis.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
                return Err(Error::InvalidDistribution(
                    "grid values must lie in the open interval (0, 1)".into(),
                ));
            }
            if axis.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Shape("grid axes must be strictly ascending".into()));
            }
        }
        let rows: Vec<Vec<SimplexVector>> = axes
            .iter()
            .map(|axis| {
                axis.iter()
                    .map(|p| SimplexVector::binary(*p))
                    .collect::<Result<_>>()
            })
            .collect::<Result<_>>()?;
        let contexts = axes.len();
        let size = levels
            .checked_pow(contexts as u32)
            .ok_or_else(|| Error::Shape("grid too large".into()))?;
        let mut points = Vec::with_capacity(size);
        for flat in 0..size {
            let digits = digits_of(flat, levels, contexts);
            let point_rows = digits
                .iter()
                .enumerate()
                .map(|(c, d)| rows[c][*d].clone())
                .collect();
            points.push(InformationState::new(stage, point_rows)?);
        }
        Ok(Self {
            stage,
            axes,
            rows,
            points,
        })
    }

    pub fn levels(&self) -> usize {
        self.axes[0].len()
    }

    pub fn contexts(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn axes(&self) -> &[Vec<f64>] {
        &self.axes
    }

    pub fn points(&self) -> &[InformationState] {
        &self.points
    }

    pub fn point(&self, i: GridIndex) -> &InformationState {
        &self.points[i.0]
    }

    /// The same grid relabelled to another stage.
    pub fn at_stage(&self, stage: usize) -> Self {
        Self {
            stage,
            axes: self.axes.clone(),
            rows: self.rows.clone(),
            points: self
                .points
                .iter()
                .map(|p| p.clone().with_stage(stage))
                .collect(),
        }
    }

    /// Index of the point with the smallest total L1 distance to `b`; ties go to the lowest index.
    ///
    /// The summed distance separates over contexts, so each context is
    /// resolved on its own axis by bisection.
    pub fn nearest(&self, b: &InformationState) -> GridIndex {
        assert_eq!(b.contexts(), self.contexts(), "belief and grid disagree on contexts");
        let levels = self.levels();
        let mut flat = 0;
        for (c, axis) in self.axes.iter().enumerate() {
            let row = b.row(c);
            let p = row[0];
            let pos = axis.partition_point(|v| *v < p);
            let lo = pos.saturating_sub(1);
            let hi = (pos + 1).min(levels - 1);
            let mut best = lo;
            let mut best_d = row.l1_distance(&self.rows[c][lo]);
            for i in lo + 1..=hi {
                let d = row.l1_distance(&self.rows[c][i]);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            flat = flat * levels + best;
        }
        GridIndex(flat)
    }
}

fn digits_of(mut flat: usize, levels: usize, contexts: usize) -> Vec<usize> {
    let mut digits = vec![0; contexts];
    for d in digits.iter_mut().rev() {
        *d = flat % levels;
        flat /= levels;
    }
    digits
}

/// `n` cell midpoints `(i − 0.5)/n` per context for binary alphabets.
pub fn build_uniform_grid(n: usize, x_size: usize, u_size: usize) -> Result<BeliefGrid> {
    if n < 2 {
        return Err(Error::Unsupported(format!("quantization level {n} is below 2")));
    }
    if x_size != 2 || u_size != 2 {
        return Err(Error::Unsupported(format!(
            "grids support binary alphabets only (got |X| = {x_size}, |U| = {u_size})"
        )));
    }
    let axis = midpoints(0.0, 1.0, n);
    BeliefGrid::from_axes(0, vec![axis; u_size])
}

fn midpoints(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let width = (hi - lo) / n as f64;
    (1..=n).map(|i| lo + (i as f64 - 0.5) * width).collect()
}

/// Per-context interval refinement from visited first components.
///
/// `visited` yields `(context, first component)` pairs.
pub fn refine_from_values(
    contexts: usize,
    visited: impl IntoIterator<Item = (usize, f64)>,
    n: usize,
) -> Result<BeliefGrid> {
    if n < 2 {
        return Err(Error::Unsupported(format!("quantization level {n} is below 2")));
    }
    let mut ranges = vec![(f64::INFINITY, f64::NEG_INFINITY); contexts];
    for (c, p) in visited {
        let r = &mut ranges[c];
        r.0 = r.0.min(p);
        r.1 = r.1.max(p);
    }
    let axes = ranges
        .into_iter()
        .map(|(lo, hi)| {
            let (lo, hi) = if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo <= 0.0 {
                (
                    (lo - REFINE_DEGENERATE_HALF_WIDTH).max(0.0),
                    (hi + REFINE_DEGENERATE_HALF_WIDTH).min(1.0),
                )
            } else {
                let pad = REFINE_PADDING * (hi - lo);
                ((lo - pad).max(0.0), (hi + pad).min(1.0))
            };
            midpoints(lo, hi, n)
        })
        .collect();
    BeliefGrid::from_axes(0, axes)
}

/// Grid spanning the empirical per-context range of a rollout's beliefs.
pub fn refine_from_trajectory(traj: &RolloutTrajectory, n: usize) -> Result<BeliefGrid> {
    let online: Vec<_> = traj.stages.iter().filter(|s| s.stage >= 1).collect();
    if online.is_empty() {
        return Err(Error::Precondition("trajectory has no online stages".into()));
    }
    let contexts = online[0].belief.contexts();
    let visited = online.iter().flat_map(|s| {
        (0..contexts)
            .filter(move |&c| s.marginal.weight(c) > REFINE_WEIGHT_FLOOR)
            .map(move |c| (c, s.belief.row(c)[0]))
    });
    refine_from_values(contexts, visited, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(p0: f64, p1: f64) -> InformationState {
        InformationState::new(
            0,
            vec![SimplexVector::binary(p0).unwrap(), SimplexVector::binary(p1).unwrap()],
        )
        .unwrap()
    }

    fn scan(grid: &BeliefGrid, b: &InformationState) -> GridIndex {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in grid.points().iter().enumerate() {
            let d = b.l1_distance(p);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        GridIndex(best)
    }

    #[test]
    fn uniform_grid_midpoints() {
        let g = build_uniform_grid(2, 2, 2).unwrap();
        assert_eq!(g.len(), 4);
        assert_eq!(g.axes()[0], vec![0.25, 0.75]);
        assert_eq!(g.point(GridIndex(1)).row(1).probs(), &[0.75, 0.25]);
        assert_eq!(g.point(GridIndex(2)).row(0).probs(), &[0.75, 0.25]);
        assert_eq!(build_uniform_grid(20, 2, 2).unwrap().len(), 400);
    }

    #[test]
    fn uniform_grid_is_interior() {
        let g = build_uniform_grid(17, 2, 2).unwrap();
        for p in g.points() {
            for r in p.rows() {
                assert!(r[0] > 0.0 && r[0] < 1.0);
            }
        }
    }

    #[test]
    fn uniform_grid_rejects_bad_sizes() {
        assert!(matches!(build_uniform_grid(1, 2, 2), Err(Error::Unsupported(_))));
        assert!(matches!(build_uniform_grid(4, 3, 2), Err(Error::Unsupported(_))));
    }

    #[test]
    fn nearest_examples() {
        let g = build_uniform_grid(5, 2, 2).unwrap();
        for (i, p) in g.points().iter().enumerate() {
            assert_eq!(g.nearest(p), GridIndex(i));
        }
        let g2 = build_uniform_grid(2, 2, 2).unwrap();
        assert_eq!(g2.nearest(&state(0.5, 0.5)), GridIndex(0));
        assert_eq!(g2.nearest(&state(0.9, 0.1)), GridIndex(2));
    }

    #[test]
    fn nearest_matches_scan() {
        let g = build_uniform_grid(13, 2, 2).unwrap();
        let mut p = 0.0137;
        for _ in 0..500 {
            p = (p * 7.31 + 0.219) % 1.0;
            let q = (p * 3.7 + 0.41) % 1.0;
            let b = state(p, q);
            assert_eq!(g.nearest(&b), scan(&g, &b));
        }
    }

    #[test]
    fn nearest_converges_with_resolution() {
        let coarse = build_uniform_grid(10, 2, 2).unwrap();
        let fine = build_uniform_grid(40, 2, 2).unwrap();
        let b = state(0.3141, 0.8672);
        let dc = b.l1_distance(coarse.point(coarse.nearest(&b)));
        let df = b.l1_distance(fine.point(fine.nearest(&b)));
        assert!(df < dc);
    }

    #[test]
    fn refine_degenerate_range() {
        let g = refine_from_values(2, [(0, 0.5), (1, 0.5)], 4).unwrap();
        let axis = &g.axes()[0];
        assert!((axis[0] - 0.4625).abs() < 1e-12);
        assert!((axis[3] - 0.5375).abs() < 1e-12);
        assert!(((axis[0] + axis[3]) / 2.0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn refine_padded_range() {
        let g = refine_from_values(2, [(0, 0.3), (0, 0.7), (1, 0.3), (1, 0.7)], 2).unwrap();
        assert!((g.axes()[0][0] - 0.39).abs() < 1e-12);
        assert!((g.axes()[0][1] - 0.61).abs() < 1e-12);
        assert_eq!(g.len(), 4);
    }

    #[test]
    fn refine_clamps_to_unit_interval() {
        let g = refine_from_values(2, [(0, 0.001), (0, 0.999), (1, 0.2)], 3).unwrap();
        for axis in g.axes() {
            assert!(axis.iter().all(|p| *p > 0.0 && *p < 1.0));
        }
    }

    #[test]
    fn grid_serialization_rebuilds_points() {
        let g = refine_from_values(2, [(0, 0.2), (0, 0.6), (1, 0.4), (1, 0.45)], 3).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        let back: BeliefGrid = serde_json::from_str(&json).unwrap();
        assert_eq!(g, back);
        assert_eq!(g.points(), back.points());
    }
}

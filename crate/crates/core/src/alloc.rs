//! Per-task layer allocation under a marginal-benefit threshold `c`.
//!
//! The rule has two phases:
//! 1. Starting from one distilled layer, add a layer while the next KD
//!    candidate improves the score by at least `c`.
//! 2. From there, switch to the undistilled model `(L*, s*)` if it improves
//!    the score by at least `c` per extra layer on average.

use serde::{Deserialize, Serialize};

use crate::distill::ALLOCATOR_LAYER_CAP;
use crate::error::{Error, Result};
use crate::merge::{overhead, Overhead, TaskShape};

/// Absolute slack on threshold comparisons. Ladder scores are decimal
/// fractions, so a difference like `92.7 - 90.7` may land a few ulps below
/// the threshold it is compared with.
pub const GAIN_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub layers: usize,
    pub score: f64,
}

/// Dev scores of one task at increasing task-specific depth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceLadder {
    pub task: String,
    #[serde(default)]
    pub frozen_depth: Option<usize>,
    /// Distilled students with 1, 2, ... task-specific layers.
    pub kd: Vec<Candidate>,
    /// The undistilled teacher.
    #[serde(default)]
    pub no_kd: Option<Candidate>,
}

impl PerformanceLadder {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Allocation(format!("ladder `{}`: {m}", self.task)));
        if self.kd.is_empty() {
            return bad("no KD candidates".into());
        }
        if self.kd.len() > ALLOCATOR_LAYER_CAP {
            return bad(format!("{} KD candidates exceed the cap of {ALLOCATOR_LAYER_CAP}", self.kd.len()));
        }
        for (i, c) in self.kd.iter().enumerate() {
            if c.layers != i + 1 {
                return bad(format!("KD layer counts must run 1, 2, ..; found {} at position {}", c.layers, i + 1));
            }
            if !c.score.is_finite() {
                return bad(format!("score for {} layers is not finite", c.layers));
            }
        }
        if let Some(t) = self.no_kd {
            if t.layers <= ALLOCATOR_LAYER_CAP {
                return bad(format!("no-KD candidate with {} layers must exceed the cap", t.layers));
            }
            if !t.score.is_finite() {
                return bad("no-KD score is not finite".into());
            }
        }
        Ok(())
    }
}

/// Chosen candidate for one task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub layers: usize,
    pub score: f64,
    /// False when the undistilled teacher was chosen.
    pub distilled: bool,
}

fn meets(gain: f64, c: f64) -> bool {
    gain >= c - GAIN_SLACK
}

/// Applies the two-phase rule to one ladder.
pub fn select_layers(ladder: &PerformanceLadder, c: f64) -> Result<Selection> {
    if c.is_nan() || c <= 0.0 {
        return Err(Error::Allocation(format!("threshold must be positive, got {c}")));
    }
    ladder.validate()?;
    let kd = &ladder.kd;
    let mut i = 0;
    while i + 1 < kd.len() && meets(kd[i + 1].score - kd[i].score, c) {
        i += 1;
    }
    let current = kd[i];
    if let Some(t) = ladder.no_kd {
        let per_layer = (t.score - current.score) / (t.layers - current.layers) as f64;
        if meets(per_layer, c) {
            return Ok(Selection { layers: t.layers, score: t.score, distilled: false });
        }
    }
    Ok(Selection { layers: current.layers, score: current.score, distilled: true })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSelection {
    pub task: String,
    pub frozen_depth: usize,
    #[serde(flatten)]
    pub selection: Selection,
}

/// One threshold's allocation across all tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub c: f64,
    pub selections: Vec<TaskSelection>,
    /// Mean score of the selected candidates.
    pub average: f64,
    pub overhead: Overhead,
}

/// Allocations for each threshold in `cs`, with shared-prefix overhead
/// against `reference_per_task` layers per task.
pub fn tradeoff_report(ladders: &[PerformanceLadder], cs: &[f64], reference_per_task: usize) -> Result<Vec<TradeoffRow>> {
    if ladders.is_empty() {
        return Err(Error::Allocation("no ladders".into()));
    }
    let mut rows = Vec::with_capacity(cs.len());
    for &c in cs {
        let mut selections = Vec::with_capacity(ladders.len());
        for l in ladders {
            let frozen_depth =
                l.frozen_depth.ok_or_else(|| Error::Allocation(format!("ladder `{}` has no frozen depth", l.task)))?;
            selections.push(TaskSelection { task: l.task.clone(), frozen_depth, selection: select_layers(l, c)? });
        }
        let shapes: Vec<TaskShape> =
            selections.iter().map(|s| TaskShape { frozen_depth: s.frozen_depth, task_layers: s.selection.layers }).collect();
        let average = selections.iter().map(|s| s.selection.score).sum::<f64>() / selections.len() as f64;
        rows.push(TradeoffRow { c, average, overhead: overhead(&shapes, true, reference_per_task), selections });
    }
    Ok(rows)
}

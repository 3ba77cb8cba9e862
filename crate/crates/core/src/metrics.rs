//! Forgetting and transfer diagnostics from run logs.
//!
//! Curves are smoothed with a trailing window, boundary returns are read at
//! the first-cycle task boundaries, and each diagnostic cell normalizes a
//! return difference by the absolute maximum return the task ever reached
//! in the first pass. Cell values are scaled by 10 for readability.
//! Aggregates first average each seed across a row or column, then take
//! mean and standard error over those per-seed values.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::env::Split;
use crate::harness::{EvalRecord, RunLog};
use crate::schedule::Schedule;

/// Cells whose normalizer falls below this are reported as undefined.
pub const DENOMINATOR_FLOOR: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("task {task}: no evaluation at or before boundary B_{boundary}")]
    MissingBoundary { task: usize, boundary: i64 },
    #[error("at least one seed is required")]
    NoSeeds,
    #[error("no logs found")]
    NoLogs,
    #[error("inconsistent log set: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricKind {
    Forgetting,
    Transfer,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Forgetting => "forgetting",
            MetricKind::Transfer => "transfer",
        }
    }
}

/// Divisor for aggregate standard errors. The default uses the size of the
/// aggregated per-seed set; the alternative divides by the square root of
/// the task count instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SemMode {
    #[default]
    SetSize,
    TaskCount,
}

/// One task's smoothed evaluation series for one seed and split.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnCurve {
    pub task: usize,
    pub split: Split,
    pub seed: u64,
    pub points: Vec<(u64, f64)>,
}

/// Boundary returns for a single seed: r_end(i, j) for j in {-1, 0..N-1}
/// (j = -1 is the timestep-0 evaluation) plus the first-pass maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryReturns {
    ends: Vec<Vec<f64>>,
    pub r_max: Vec<f64>,
}

impl BoundaryReturns {
    pub fn tasks(&self) -> usize {
        self.ends.len()
    }

    pub fn r_end(&self, i: usize, j: i64) -> f64 {
        self.ends[i][(j + 1) as usize]
    }

    /// Construct from explicit values; `ends[i][0]` is the j = -1 column.
    pub fn from_parts(ends: Vec<Vec<f64>>, r_max: Vec<f64>) -> BoundaryReturns {
        assert!(ends.iter().all(|row| row.len() == ends.len() + 1));
        assert_eq!(ends.len(), r_max.len());
        BoundaryReturns { ends, r_max }
    }
}

/// Trailing moving average: point k averages the up-to-`w` most recent raw
/// values ending at k, so the window is shorter at the start.
pub fn smooth_curve(points: &[(u64, f64)], w: usize) -> Vec<(u64, f64)> {
    assert!(w >= 1);
    (0..points.len())
        .map(|k| {
            let lo = (k + 1).saturating_sub(w);
            let window = &points[lo..=k];
            let mean = window.iter().map(|&(_, v)| v).sum::<f64>() / window.len() as f64;
            (points[k].0, mean)
        })
        .collect()
}

/// Linear interpolation; exact at knots. `t` must lie within the span.
pub fn interpolate(points: &[(u64, f64)], t: u64) -> f64 {
    debug_assert!(!points.is_empty());
    match points.binary_search_by_key(&t, |&(x, _)| x) {
        Ok(idx) => points[idx].1,
        Err(idx) => {
            assert!(idx > 0 && idx < points.len(), "query {t} outside curve span");
            let (x0, y0) = points[idx - 1];
            let (x1, y1) = points[idx];
            let frac = (t - x0) as f64 / (x1 - x0) as f64;
            y0 + frac * (y1 - y0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignedCurve {
    pub grid: Vec<u64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
}

/// Interpolate every seed's curve onto a common grid (clamped to the
/// intersection of spans) and take mean and sample standard error across
/// seeds. A single seed yields zero standard errors by convention.
pub fn align_curves(curves: &[&[(u64, f64)]], grid_interval: u64) -> Result<AlignedCurve, MetricError> {
    if curves.is_empty() || curves.iter().any(|c| c.is_empty()) {
        return Err(MetricError::NoSeeds);
    }
    if grid_interval == 0 {
        return Err(MetricError::Inconsistent("grid interval must be positive".to_string()));
    }
    let lo = curves.iter().map(|c| c[0].0).max().unwrap();
    let hi = curves.iter().map(|c| c[c.len() - 1].0).min().unwrap();
    if lo > hi {
        return Err(MetricError::Inconsistent("curve spans do not intersect".to_string()));
    }
    let mut grid = Vec::new();
    let mut t = lo;
    loop {
        grid.push(t);
        match t.checked_add(grid_interval) {
            Some(next) if next <= hi => t = next,
            _ => break,
        }
    }
    let mut mean = Vec::with_capacity(grid.len());
    let mut stderr = Vec::with_capacity(grid.len());
    for &t in &grid {
        let values: Vec<f64> = curves.iter().map(|c| interpolate(c, t)).collect();
        let (m, sem) = mean_sem(&values, values.len());
        mean.push(m);
        stderr.push(sem);
    }
    Ok(AlignedCurve { grid, mean, stderr })
}

/// Sample mean and standard error of a set, with an explicit divisor count
/// for the error term. Sets of size one get a zero standard error.
fn mean_sem(values: &[f64], divisor_count: usize) -> (f64, f64) {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt() / (divisor_count as f64).sqrt())
}

/// Boundary returns for one seed. `curves[i]` is task i's smoothed curve on
/// the preferred split; boundaries come from the first cycle only, and the
/// maximum spans the whole first pass.
pub fn boundary_returns(
    curves: &[Vec<(u64, f64)>],
    schedule: &Schedule,
) -> Result<BoundaryReturns, MetricError> {
    let n = curves.len();
    let first_cycle: Vec<u64> = (0..n)
        .map(|j| schedule.first_cycle_end(j).expect("schedule covers every task"))
        .collect();
    let first_pass_end = *first_cycle.last().unwrap();
    let mut ends = Vec::with_capacity(n);
    let mut r_max = Vec::with_capacity(n);
    for (i, curve) in curves.iter().enumerate() {
        let mut row = Vec::with_capacity(n + 1);
        let at_or_before = |cutoff: u64, boundary: i64| -> Result<f64, MetricError> {
            curve
                .iter()
                .take_while(|&&(t, _)| t <= cutoff)
                .last()
                .map(|&(_, v)| v)
                .ok_or(MetricError::MissingBoundary { task: i, boundary })
        };
        row.push(at_or_before(0, -1)?);
        for (j, &b) in first_cycle.iter().enumerate() {
            row.push(at_or_before(b, j as i64)?);
        }
        ends.push(row);
        let max = curve
            .iter()
            .filter(|&&(t, _)| t < first_pass_end)
            .map(|&(_, v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(MetricError::MissingBoundary { task: i, boundary: 0 });
        }
        r_max.push(max);
    }
    Ok(BoundaryReturns { ends, r_max })
}

/// Normalized drop on earlier task i caused by training later task j
/// (i < j): positive values mean forgetting, negative backward transfer.
/// `None` when the normalizer is below the floor.
pub fn forgetting(i: usize, j: usize, br: &BoundaryReturns) -> Option<f64> {
    assert!(i < j, "forgetting is defined for i < j");
    let denom = br.r_max[i].abs();
    if denom <= DENOMINATOR_FLOOR {
        return None;
    }
    Some((br.r_end(i, j as i64 - 1) - br.r_end(i, j as i64)) / denom)
}

/// Normalized gain on later task i caused by training earlier task j
/// (i > j): positive values mean zero-shot forward transfer. j = 0 compares
/// against the timestep-0 evaluation.
pub fn transfer(i: usize, j: usize, br: &BoundaryReturns) -> Option<f64> {
    assert!(i > j, "transfer is defined for i > j");
    let denom = br.r_max[i].abs();
    if denom <= DENOMINATOR_FLOOR {
        return None;
    }
    Some((br.r_end(i, j as i64) - br.r_end(i, j as i64 - 1)) / denom)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStat {
    pub mean: f64,
    pub sem: f64,
}

/// Diagnostic matrix with per-seed raw sets and aggregate margins. Values
/// are scaled by 10. Cells can be absent either structurally (the index
/// constraint) or because every seed's normalizer was below the floor.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricTable {
    pub kind: MetricKind,
    pub task_names: Vec<String>,
    pub cells: Vec<Vec<Option<CellStat>>>,
    /// Seed-resolved raw sets behind each populated cell (already scaled).
    pub raw: Vec<Vec<Vec<f64>>>,
    pub row_avg: Vec<Option<CellStat>>,
    pub col_avg: Vec<Option<CellStat>>,
    pub overall: Option<CellStat>,
    pub seeds: usize,
    /// Single-seed tables report all standard errors as zero.
    pub single_seed: bool,
    /// Cells dropped because a seed's normalizer was below the floor.
    pub undefined: Vec<(usize, usize, usize)>,
}

fn cell_defined(kind: MetricKind, i: usize, j: usize) -> bool {
    match kind {
        MetricKind::Forgetting => i < j,
        MetricKind::Transfer => i > j,
    }
}

fn cell_value(kind: MetricKind, i: usize, j: usize, br: &BoundaryReturns) -> Option<f64> {
    match kind {
        MetricKind::Forgetting => forgetting(i, j, br),
        MetricKind::Transfer => transfer(i, j, br),
    }
}

/// Build the diagnostic table: cell means and SEMs from the per-seed sets,
/// margins from per-seed row/column averages, and the overall aggregate
/// from per-seed full-table means.
pub fn diagnostic_table(
    kind: MetricKind,
    per_seed: &[BoundaryReturns],
    task_names: &[String],
    sem_mode: SemMode,
) -> Result<MetricTable, MetricError> {
    if per_seed.is_empty() {
        return Err(MetricError::NoSeeds);
    }
    let n = task_names.len();
    if per_seed.iter().any(|br| br.tasks() != n) {
        return Err(MetricError::Inconsistent("boundary returns disagree on task count".to_string()));
    }
    let seeds = per_seed.len();
    let agg_divisor = |set_len: usize| match sem_mode {
        SemMode::SetSize => set_len,
        SemMode::TaskCount => n,
    };
    let mut raw = vec![vec![Vec::new(); n]; n];
    let mut undefined = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if !cell_defined(kind, i, j) {
                continue;
            }
            for (s, br) in per_seed.iter().enumerate() {
                match cell_value(kind, i, j, br) {
                    Some(v) => raw[i][j].push(10.0 * v),
                    None => undefined.push((i, j, s)),
                }
            }
        }
    }
    let cells: Vec<Vec<Option<CellStat>>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    let set = &raw[i][j];
                    if set.is_empty() {
                        None
                    } else {
                        let (mean, sem) = mean_sem(set, set.len());
                        Some(CellStat { mean, sem })
                    }
                })
                .collect()
        })
        .collect();

    // Margins: average each seed across the row (or column) first, then
    // aggregate those per-seed values.
    let margin = |sets_for_seed: &dyn Fn(usize) -> Vec<f64>| -> Option<CellStat> {
        let per_seed_avgs: Vec<f64> = (0..seeds)
            .filter_map(|s| {
                let vals = sets_for_seed(s);
                if vals.is_empty() {
                    None
                } else {
                    Some(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            })
            .collect();
        if per_seed_avgs.is_empty() {
            None
        } else {
            let (mean, sem) = mean_sem(&per_seed_avgs, agg_divisor(per_seed_avgs.len()));
            Some(CellStat { mean, sem })
        }
    };
    let value_for = |i: usize, j: usize, s: usize| -> Option<f64> {
        if !cell_defined(kind, i, j) {
            return None;
        }
        per_seed.get(s).and_then(|br| cell_value(kind, i, j, br)).map(|v| 10.0 * v)
    };
    let row_avg: Vec<Option<CellStat>> = (0..n)
        .map(|i| margin(&|s| (0..n).filter_map(|j| value_for(i, j, s)).collect()))
        .collect();
    let col_avg: Vec<Option<CellStat>> = (0..n)
        .map(|j| margin(&|s| (0..n).filter_map(|i| value_for(i, j, s)).collect()))
        .collect();
    let overall = margin(&|s| {
        (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .filter_map(|(i, j)| value_for(i, j, s))
            .collect()
    });

    Ok(MetricTable {
        kind,
        task_names: task_names.to_vec(),
        cells,
        raw,
        row_avg,
        col_avg,
        overall,
        seeds,
        single_seed: seeds == 1,
        undefined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryStat {
    pub kind: MetricKind,
    pub mean: f64,
    pub sem: f64,
}

/// Scaled summary over all populated pairs; by construction it equals the
/// diagnostic table's overall aggregate for the same inputs.
pub fn summary_stat(
    kind: MetricKind,
    per_seed: &[BoundaryReturns],
    task_names: &[String],
    sem_mode: SemMode,
) -> Result<SummaryStat, MetricError> {
    let table = diagnostic_table(kind, per_seed, task_names, sem_mode)?;
    let overall = table.overall.ok_or(MetricError::Inconsistent(
        "no populated pairs; every cell was undefined".to_string(),
    ))?;
    Ok(SummaryStat { kind, mean: overall.mean, sem: overall.sem })
}

/// Per-task, per-split final performance: the last smoothed value of each
/// seed's curve, aggregated as mean and standard error across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalPerf {
    pub task: usize,
    pub name: String,
    pub split: Split,
    pub mean: f64,
    pub sem: f64,
    pub per_seed: Vec<f64>,
    pub single_seed: bool,
}

pub fn final_performance(logs: &[&RunLog], w: usize) -> Result<Vec<FinalPerf>, MetricError> {
    if logs.is_empty() {
        return Err(MetricError::NoLogs);
    }
    let names: Vec<String> = logs[0].header.tasks.iter().map(|t| t.name.clone()).collect();
    let mut out = Vec::new();
    for (task, name) in names.iter().enumerate() {
        for split in [Split::Train, Split::Test] {
            let mut finals = Vec::with_capacity(logs.len());
            for log in logs {
                let curve = smooth_curve(&curve_points(&log.records, task, split), w);
                let last = curve.last().ok_or(MetricError::MissingBoundary {
                    task,
                    boundary: -1,
                })?;
                finals.push(last.1);
            }
            let (mean, sem) = mean_sem(&finals, finals.len());
            out.push(FinalPerf {
                task,
                name: name.clone(),
                split,
                mean,
                sem,
                per_seed: finals,
                single_seed: logs.len() == 1,
            });
        }
    }
    Ok(out)
}

/// Time-ordered (timestep, mean_return) points for one task and split.
pub fn curve_points(records: &[EvalRecord], task: usize, split: Split) -> Vec<(u64, f64)> {
    records
        .iter()
        .filter(|r| r.task == task && r.split == split)
        .map(|r| (r.timestep, r.mean_return))
        .collect()
}

/// Boundary returns for one log, using each task's test-split curve when it
/// declares a harder variant and the train-split curve otherwise.
pub fn boundary_returns_for_log(log: &RunLog) -> Result<BoundaryReturns, MetricError> {
    let schedule = log
        .header
        .schedule()
        .map_err(|e| MetricError::Inconsistent(format!("bad schedule in header: {e}")))?;
    let w = log.header.smoothing_window;
    let curves: Vec<Vec<(u64, f64)>> = log
        .header
        .tasks
        .iter()
        .enumerate()
        .map(|(task, echo)| {
            let split = if echo.has_variant { Split::Test } else { Split::Train };
            smooth_curve(&curve_points(&log.records, task, split), w)
        })
        .collect();
    boundary_returns(&curves, &schedule)
}

/// Group parsed logs by policy name, preserving file order within a group.
pub fn group_by_policy(logs: &[RunLog]) -> BTreeMap<String, Vec<&RunLog>> {
    let mut map: BTreeMap<String, Vec<&RunLog>> = BTreeMap::new();
    for log in logs {
        map.entry(log.header.policy.clone()).or_default().push(log);
    }
    map
}

/// Check that all logs in a group describe the same experiment shape.
pub fn check_consistent(logs: &[&RunLog]) -> Result<(), MetricError> {
    let first = logs.first().ok_or(MetricError::NoLogs)?;
    for log in &logs[1..] {
        if log.header.tasks != first.header.tasks || log.header.cycles != first.header.cycles {
            return Err(MetricError::Inconsistent(format!(
                "run {} disagrees with {} on the task sequence",
                log.header.run_id, first.header.run_id
            )));
        }
    }
    Ok(())
}

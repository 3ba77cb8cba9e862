//! Task sequences and training schedules.
//!
//! A schedule tiles `[0, total_steps)` with one segment per (cycle, task),
//! in declared task order, repeated for the configured number of cycles.

use thiserror::Error;

use crate::config::TaskSpec;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScheduleError {
    #[error("task list is empty")]
    EmptyTaskList,
    #[error("schedule budget overflows the 64-bit step counter")]
    BudgetOverflow,
    #[error("step {step} out of range [0, {total})")]
    StepOutOfRange { step: u64, total: u64 },
}

/// Half-open training interval for one task visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Segment {
    pub task_id: usize,
    pub cycle: usize,
    pub start: u64,
    pub end: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    pub segments: Vec<Segment>,
    pub total_steps: u64,
}

impl Schedule {
    /// The segment containing step `t`. Boundaries are half-open, so the
    /// step at a boundary belongs to the starting segment.
    pub fn task_at(&self, t: u64) -> Result<(usize, usize), ScheduleError> {
        if t >= self.total_steps {
            return Err(ScheduleError::StepOutOfRange { step: t, total: self.total_steps });
        }
        let idx = self
            .segments
            .partition_point(|s| s.end <= t);
        let seg = &self.segments[idx];
        debug_assert!(seg.start <= t && t < seg.end);
        Ok((seg.task_id, seg.cycle))
    }

    /// End boundary B_j of task j's first-cycle visit.
    pub fn first_cycle_end(&self, task_id: usize) -> Option<u64> {
        self.segments
            .iter()
            .find(|s| s.cycle == 0 && s.task_id == task_id)
            .map(|s| s.end)
    }
}

/// Expand per-visit budgets into N*M ordered segments.
pub fn build_schedule(tasks: &[TaskSpec], cycles: usize) -> Result<Schedule, ScheduleError> {
    let budgets: Vec<u64> = tasks.iter().map(|t| t.frames_per_visit).collect();
    build_schedule_from_budgets(&budgets, cycles)
}

/// Same tiling when only budgets are known (e.g. when reconstructing a
/// schedule from a run-log header).
pub fn build_schedule_from_budgets(budgets: &[u64], cycles: usize) -> Result<Schedule, ScheduleError> {
    if budgets.is_empty() || cycles == 0 {
        return Err(ScheduleError::EmptyTaskList);
    }
    let mut segments = Vec::with_capacity(budgets.len() * cycles);
    let mut cursor: u64 = 0;
    for cycle in 0..cycles {
        for (task_id, &budget) in budgets.iter().enumerate() {
            let end = cursor.checked_add(budget).ok_or(ScheduleError::BudgetOverflow)?;
            segments.push(Segment { task_id, cycle, start: cursor, end });
            cursor = end;
        }
    }
    Ok(Schedule { segments, total_steps: cursor })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::test_support::task;
    use proptest::prelude::*;

    #[test]
    fn two_tasks_two_cycles_tile_exactly() {
        let tasks = vec![task(0, "a", 100), task(1, "b", 100)];
        let s = build_schedule(&tasks, 2).unwrap();
        let got: Vec<(usize, usize, u64, u64)> =
            s.segments.iter().map(|g| (g.task_id, g.cycle, g.start, g.end)).collect();
        assert_eq!(
            got,
            vec![(0, 0, 0, 100), (1, 0, 100, 200), (0, 1, 200, 300), (1, 1, 300, 400)]
        );
        assert_eq!(s.total_steps, 400);
    }

    #[test]
    fn single_task_single_cycle() {
        let s = build_schedule(&[task(0, "only", 50)], 1).unwrap();
        assert_eq!(s.segments.len(), 1);
        assert_eq!(
            s.segments[0],
            Segment { task_id: 0, cycle: 0, start: 0, end: 50 }
        );
        assert_eq!(s.total_steps, 50);
    }

    #[test]
    fn paper_scale_budget_arithmetic() {
        // 6 tasks x 5M per visit, 5 cycles: 25M per task.
        let tasks: Vec<_> = (0..6).map(|i| task(i, "t", 5_000_000)).collect();
        let s = build_schedule(&tasks, 5).unwrap();
        assert_eq!(s.segments.len(), 30);
        assert_eq!(s.total_steps, 5 * 6 * 5_000_000);
        for id in 0..6 {
            let per_task: u64 = s
                .segments
                .iter()
                .filter(|g| g.task_id == id)
                .map(|g| g.end - g.start)
                .sum();
            assert_eq!(per_task, 25_000_000);
        }
    }

    #[test]
    fn empty_task_list_is_rejected() {
        assert_eq!(build_schedule(&[], 1), Err(ScheduleError::EmptyTaskList));
    }

    #[test]
    fn budget_overflow_is_rejected() {
        let tasks = vec![task(0, "a", u64::MAX), task(1, "b", 2)];
        assert_eq!(build_schedule(&tasks, 1), Err(ScheduleError::BudgetOverflow));
    }

    #[test]
    fn task_at_boundary_arithmetic() {
        let tasks = vec![task(0, "a", 100), task(1, "b", 100)];
        let s = build_schedule(&tasks, 2).unwrap();
        assert_eq!(s.task_at(150).unwrap(), (1, 0));
        assert_eq!(s.task_at(200).unwrap(), (0, 1)); // half-open boundaries
        assert_eq!(s.task_at(399).unwrap(), (1, 1));
        assert_eq!(
            s.task_at(400),
            Err(ScheduleError::StepOutOfRange { step: 400, total: 400 })
        );
    }

    proptest! {
        // Every step belongs to exactly one segment, and spans sum to total.
        #[test]
        fn segments_partition_the_step_range(
            budgets in prop::collection::vec(1u64..20, 1..5),
            cycles in 1usize..4,
        ) {
            let s = build_schedule_from_budgets(&budgets, cycles).unwrap();
            let span_sum: u64 = s.segments.iter().map(|g| g.end - g.start).sum();
            prop_assert_eq!(span_sum, s.total_steps);
            prop_assert_eq!(s.segments.len(), budgets.len() * cycles);
            for t in 0..s.total_steps {
                let hits = s
                    .segments
                    .iter()
                    .filter(|g| g.start <= t && t < g.end)
                    .count();
                prop_assert_eq!(hits, 1);
                let (task_id, cycle) = s.task_at(t).unwrap();
                let seg = s.segments.iter().find(|g| g.start <= t && t < g.end).unwrap();
                prop_assert_eq!((task_id, cycle), (seg.task_id, seg.cycle));
            }
        }
    }
}

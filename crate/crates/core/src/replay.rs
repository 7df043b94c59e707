//! Rehearsal buffer: one stored cycle of windowed samples per enrolled task,
//! together with that cycle's sensor-value distribution.

use serde::{Deserialize, Serialize};

use crate::data::{make_cycle_windows, ExperimentDataset};
use crate::drift::EmpiricalDistribution;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BufferEntry {
    pub task_id: usize,
    /// Windowed (sensor window, target angle) pairs from the stored cycle.
    pub windows: Vec<(Vec<f64>, f64)>,
    pub distribution: EmpiricalDistribution,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ReplayBuffer {
    entries: Vec<BufferEntry>,
}

impl ReplayBuffer {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BufferEntry] {
        &self.entries
    }

    /// Stores the first cycle of `task`: its stride-1 windows and its sensor
    /// distribution. Exactly one cycle is kept per task.
    pub fn enroll(&mut self, task_id: usize, task: &ExperimentDataset, window_length: usize) -> Result<()> {
        if self.entries.iter().any(|e| e.task_id == task_id) {
            return Err(Error::Protocol(format!("task {task_id} already enrolled in replay buffer")));
        }
        let first_cycle = task
            .samples
            .first()
            .map(|s| s.cycle)
            .ok_or_else(|| Error::Domain("cannot enroll an empty experiment".into()))?;
        let cycle_samples: Vec<_> =
            task.samples.iter().filter(|s| s.cycle == first_cycle).cloned().collect();
        let windows = make_cycle_windows(&cycle_samples, window_length)?;
        let distribution =
            EmpiricalDistribution::new(cycle_samples.iter().map(|s| s.sensor).collect())?;
        self.entries.push(BufferEntry { task_id, windows, distribution });
        Ok(())
    }

    /// Test hook: insert a pre-built entry.
    pub fn insert_raw(
        &mut self,
        task_id: usize,
        windows: Vec<(Vec<f64>, f64)>,
        distribution: EmpiricalDistribution,
    ) {
        self.entries.push(BufferEntry { task_id, windows, distribution });
    }
}

//! RMSE, R² and the RMSE-based continual-learning metrics (backward and
//! forward knowledge transfer, forgetting) computed from the accuracy
//! matrix.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `a[i][j]` is the RMSE on task j's test set after finishing training on
/// task i. `a_prime[j]` is the RMSE on task j at random initialization,
/// needed for forward-transfer scoring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub a: Vec<Vec<f64>>,
    pub a_prime: Option<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(a: Vec<Vec<f64>>) -> Result<Self> {
        let t = a.len();
        if t == 0 || a.iter().any(|row| row.len() != t) {
            return Err(Error::Domain("accuracy matrix must be square and non-empty".into()));
        }
        if a.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Domain("accuracy matrix entries must be finite and non-negative".into()));
        }
        Ok(Self { a, a_prime: None })
    }

    pub fn with_a_prime(mut self, a_prime: Vec<f64>) -> Result<Self> {
        if a_prime.len() != self.task_count() {
            return Err(Error::Dimension(format!(
                "a' length {} does not match task count {}",
                a_prime.len(),
                self.task_count()
            )));
        }
        self.a_prime = Some(a_prime);
        Ok(self)
    }

    pub fn task_count(&self) -> usize {
        self.a.len()
    }
}

pub fn rmse(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Dimension(format!(
            "rmse: prediction length {} vs target length {}",
            pred.len(),
            target.len()
        )));
    }
    let n = pred.len() as f64;
    Ok((pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n).sqrt())
}

pub fn r2(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Dimension(format!(
            "r2: prediction length {} vs target length {}",
            pred.len(),
            target.len()
        )));
    }
    let n = target.len() as f64;
    let mean = target.iter().sum::<f64>() / n;
    let ss_tot: f64 = target.iter().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Domain("r2 undefined for a zero-variance target".into()));
    }
    let ss_res: f64 = pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Mean change of final-row error relative to the error right after each
/// task was learned. Negative values mean later training helped earlier
/// tasks.
pub fn bwt(m: &AccuracyMatrix) -> Result<f64> {
    let t = m.task_count();
    if t < 2 {
        return Err(Error::Domain("bwt is ambiguous for a single task".into()));
    }
    let last = &m.a[t - 1];
    let sum: f64 = (0..t - 1).map(|j| last[j] - m.a[j][j]).sum();
    Ok(sum / (t - 1) as f64)
}

/// Mean error on each not-yet-seen task right before it is learned, relative
/// to a randomly initialized model. Negative values mean earlier training
/// helped future tasks.
pub fn fwt(m: &AccuracyMatrix) -> Result<f64> {
    let t = m.task_count();
    if t < 2 {
        return Err(Error::Domain("fwt is ambiguous for a single task".into()));
    }
    let a_prime = m
        .a_prime
        .as_ref()
        .ok_or_else(|| Error::Domain("fwt needs random-initialization errors (a')".into()))?;
    let sum: f64 = (1..t).map(|j| m.a[j - 1][j] - a_prime[j]).sum();
    Ok(sum / (t - 1) as f64)
}

/// Per-task forgetting: final error minus the best error ever achieved on
/// that task before the final task, zero for the last task. Returns the
/// vector and its mean.
pub fn forgetting(m: &AccuracyMatrix) -> Result<(Vec<f64>, f64)> {
    let t = m.task_count();
    if t < 2 {
        return Err(Error::Domain("forgetting is ambiguous for a single task".into()));
    }
    let mut per_task = Vec::with_capacity(t);
    for j in 0..t - 1 {
        let best = (j..t - 1).map(|l| m.a[l][j]).fold(f64::INFINITY, f64::min);
        per_task.push(m.a[t - 1][j] - best);
    }
    per_task.push(0.0);
    let mean = per_task.iter().sum::<f64>() / t as f64;
    Ok((per_task, mean))
}

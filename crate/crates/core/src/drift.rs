//! Empirical 1-D Wasserstein distance and the drift gate that decides
//! whether an incoming signal triggers adaptive training.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::ReplayBuffer;

/// An empirical distribution over sensor values. Keeps both the original
/// sample order and a sorted cache for quantile integration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EmpiricalDistribution {
    samples: Vec<f64>,
    sorted: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn new(samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Domain("empirical distribution needs at least one sample".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("empirical distribution has non-finite samples".into()));
        }
        let mut sorted = samples.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(Self { samples, sorted })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Order-1 Wasserstein distance between two empirical distributions via
/// exact integration of the piecewise-constant quantile functions. For equal
/// sample counts this reduces to the mean absolute difference of the sorted
/// samples.
pub fn wasserstein1(a: &EmpiricalDistribution, b: &EmpiricalDistribution) -> f64 {
    let xs = a.sorted();
    let ys = b.sorted();
    let n = xs.len();
    let m = ys.len();
    if n == m {
        return xs.iter().zip(ys).map(|(x, y)| (x - y).abs()).sum::<f64>() / n as f64;
    }
    // Merge the breakpoint sets {k/n} and {k/m}; compare fractions with
    // integer cross-multiplication so segment boundaries stay exact.
    let mut total = 0.0;
    let mut i = 0usize;
    let mut j = 0usize;
    let mut prev = 0.0f64;
    while i < n && j < m {
        let na = ((i + 1) * m) as u64;
        let nb = ((j + 1) * n) as u64;
        let next = if na <= nb { (i + 1) as f64 / n as f64 } else { (j + 1) as f64 / m as f64 };
        total += (next - prev) * (xs[i] - ys[j]).abs();
        prev = next;
        if na <= nb {
            i += 1;
        }
        if nb <= na {
            j += 1;
        }
    }
    total
}

/// Threshold for the adaptive-training gate, in sensor-signal units.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DriftGateConfig {
    pub threshold: f64,
    /// When set, only this leading fraction of the incoming signal is
    /// compared against the stored distributions.
    pub leading_fraction: Option<f64>,
}

impl DriftGateConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::Config(format!("gate threshold must be positive, got {threshold}")));
        }
        Ok(Self { threshold, leading_fraction: None })
    }
}

/// Outcome of one gate evaluation, logged per experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateOutcome {
    pub decision: bool,
    pub min_distance: f64,
    pub nearest_task: usize,
}

/// Compares the incoming distribution against every distribution stored in
/// the replay buffer; the gate fires when even the nearest stored task is
/// farther than the threshold.
pub fn should_adapt(
    incoming: &EmpiricalDistribution,
    buffer: &ReplayBuffer,
    config: &DriftGateConfig,
) -> Result<GateOutcome> {
    if buffer.is_empty() {
        return Err(Error::Domain(
            "drift gate consulted with an empty replay buffer; enroll the base task first".into(),
        ));
    }
    let sliced;
    let incoming = match config.leading_fraction {
        Some(frac) if frac > 0.0 && frac < 1.0 => {
            let keep = ((incoming.len() as f64 * frac).ceil() as usize).max(1);
            sliced = EmpiricalDistribution::new(incoming.samples()[..keep].to_vec())?;
            &sliced
        }
        _ => incoming,
    };
    let mut min_distance = f64::INFINITY;
    let mut nearest_task = 0;
    for entry in buffer.entries() {
        let d = wasserstein1(incoming, &entry.distribution);
        if d < min_distance {
            min_distance = d;
            nearest_task = entry.task_id;
        }
    }
    Ok(GateOutcome { decision: min_distance > config.threshold, min_distance, nearest_task })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[f64]) -> EmpiricalDistribution {
        EmpiricalDistribution::new(v.to_vec()).unwrap()
    }

    #[test]
    fn identical_multisets_have_zero_distance() {
        let a = dist(&[3.0, 1.0, 2.0]);
        let b = dist(&[2.0, 3.0, 1.0]);
        assert_eq!(wasserstein1(&a, &b), 0.0);
    }

    #[test]
    fn translation_gives_absolute_shift() {
        let a = dist(&[0.5, -1.0, 2.0, 0.0]);
        let shifted = dist(&a.samples().iter().map(|v| v + 3.25).collect::<Vec<_>>());
        assert!((wasserstein1(&a, &shifted) - 3.25).abs() < 1e-12);
    }

    #[test]
    fn two_point_closed_form() {
        let a = dist(&[0.0, 1.0]);
        let b = dist(&[0.0, 3.0]);
        assert_eq!(wasserstein1(&a, &b), 1.0);
    }

    #[test]
    fn unequal_counts_quantile_integration() {
        // a = {0, 1} (quantile: 0 on [0,.5), 1 on [.5,1))
        // b = {0, 0, 3} (quantile: 0 on [0,2/3), 3 on [2/3,1))
        // ∫|Qa−Qb| = .5·0 + (2/3−1/2)·1 + (1/3)·2 = 1/6 + 2/3 = 5/6
        let a = dist(&[0.0, 1.0]);
        let b = dist(&[0.0, 0.0, 3.0]);
        let expect = 5.0 / 6.0;
        assert!((wasserstein1(&a, &b) - expect).abs() < 1e-12);
        assert!((wasserstein1(&b, &a) - expect).abs() < 1e-12);
    }

    #[test]
    fn empty_distribution_rejected() {
        assert!(EmpiricalDistribution::new(vec![]).is_err());
    }

    #[test]
    fn gate_on_empty_buffer_is_an_error() {
        let buffer = ReplayBuffer::new();
        let cfg = DriftGateConfig::new(0.1).unwrap();
        assert!(should_adapt(&dist(&[1.0]), &buffer, &cfg).is_err());
    }

    #[test]
    fn gate_fires_only_beyond_threshold() {
        let mut buffer = ReplayBuffer::new();
        buffer.insert_raw(0, vec![], dist(&[0.0, 1.0, 2.0]));
        let cfg = DriftGateConfig::new(0.5).unwrap();

        let same = should_adapt(&dist(&[0.0, 1.0, 2.0]), &buffer, &cfg).unwrap();
        assert!(!same.decision);
        assert_eq!(same.min_distance, 0.0);

        let shifted = should_adapt(&dist(&[1.0, 2.0, 3.0]), &buffer, &cfg).unwrap();
        assert!(shifted.decision);
        assert!((shifted.min_distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_task_is_reported() {
        let mut buffer = ReplayBuffer::new();
        buffer.insert_raw(0, vec![], dist(&[0.0, 1.0]));
        buffer.insert_raw(1, vec![], dist(&[10.0, 11.0]));
        let cfg = DriftGateConfig::new(0.5).unwrap();
        let incoming = dist(&[9.0, 10.0]);
        // Brute force over both stored tasks.
        let d0 = wasserstein1(&incoming, &dist(&[0.0, 1.0]));
        let d1 = wasserstein1(&incoming, &dist(&[10.0, 11.0]));
        assert!(d1 < d0);
        let out = should_adapt(&incoming, &buffer, &cfg).unwrap();
        assert_eq!(out.nearest_task, 1);
        assert!((out.min_distance - d1).abs() < 1e-12);
    }

    #[test]
    fn leading_fraction_slices_the_incoming_signal() {
        let mut buffer = ReplayBuffer::new();
        buffer.insert_raw(0, vec![], dist(&[0.0, 0.0]));
        let mut cfg = DriftGateConfig::new(0.5).unwrap();
        cfg.leading_fraction = Some(0.5);
        // First half matches the stored distribution, second half is far off.
        let incoming = dist(&[0.0, 0.0, 100.0, 100.0]);
        let out = should_adapt(&incoming, &buffer, &cfg).unwrap();
        assert!(!out.decision);
        assert_eq!(out.min_distance, 0.0);
    }
}

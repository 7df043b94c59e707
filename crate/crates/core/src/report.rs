//! Run reports: the JSON document produced by the benchmark/ablation
//! commands, per-seed and aggregated, plus the plot-ready CSV emitters and
//! the human-readable summary.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{bwt, forgetting, fwt, AccuracyMatrix};
use crate::trainer::GateRecord;

pub const REPORT_VERSION: u32 = 1;

/// One trained model's results within one seeded run. The baseline trains
/// once, so its matrix has a single row; sequential models have T rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelReport {
    pub label: String,
    /// RMSE on every task's test set after each training stage.
    pub matrix: Vec<Vec<f64>>,
    /// Per-task RMSE at random initialization (the FWT reference).
    pub a_prime: Option<Vec<f64>>,
    /// Final-stage RMSE per task.
    pub final_rmse: Vec<f64>,
    /// Mean of `final_rmse` over tasks.
    pub overall_rmse: f64,
    pub bwt: Option<f64>,
    pub fwt: Option<f64>,
    pub forgetting: Option<Vec<f64>>,
    pub forgetting_mean: Option<f64>,
    pub gate_threshold: Option<f64>,
    pub gate_log: Vec<GateRecord>,
    /// Wall-clock seconds; excluded from determinism comparisons.
    pub wall_clock_s: f64,
}

impl ModelReport {
    /// Builds a report from a stage-by-task RMSE matrix. Square matrices get
    /// the continual-learning metrics; a single evaluation row does not.
    pub fn from_matrix(
        label: &str,
        matrix: Vec<Vec<f64>>,
        a_prime: Option<Vec<f64>>,
        gate_threshold: Option<f64>,
        gate_log: Vec<GateRecord>,
        wall_clock_s: f64,
    ) -> Result<Self> {
        let final_rmse = matrix
            .last()
            .cloned()
            .ok_or_else(|| Error::Domain("model report needs at least one evaluation row".into()))?;
        let overall_rmse = final_rmse.iter().sum::<f64>() / final_rmse.len() as f64;
        let square = matrix.len() == final_rmse.len() && matrix.len() >= 2;
        let (bwt_v, fwt_v, forget_v, forget_mean) = if square {
            let mut m = AccuracyMatrix::new(matrix.clone())?;
            if let Some(ap) = &a_prime {
                m = m.with_a_prime(ap.clone())?;
            }
            let (per_task, mean) = forgetting(&m)?;
            let fwt_v = if m.a_prime.is_some() { Some(fwt(&m)?) } else { None };
            (Some(bwt(&m)?), fwt_v, Some(per_task), Some(mean))
        } else {
            (None, None, None, None)
        };
        Ok(Self {
            label: label.to_string(),
            matrix,
            a_prime,
            final_rmse,
            overall_rmse,
            bwt: bwt_v,
            fwt: fwt_v,
            forgetting: forget_v,
            forgetting_mean: forget_mean,
            gate_threshold,
            gate_log,
            wall_clock_s,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    /// Index of the base experiment before reordering.
    pub base_index: usize,
    pub models: Vec<ModelReport>,
}

/// Mean ± std over seeds for one model label.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateReport {
    pub label: String,
    pub mean_overall_rmse: f64,
    pub std_overall_rmse: f64,
    pub mean_final_rmse: Vec<f64>,
    pub std_final_rmse: Vec<f64>,
    pub mean_bwt: Option<f64>,
    pub mean_fwt: Option<f64>,
    pub mean_forgetting: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub version: u32,
    /// "benchmark" or "ablate".
    pub mode: String,
    pub seeds: Vec<u64>,
    pub task_count: usize,
    pub per_seed: Vec<SeedReport>,
    pub aggregate: Vec<AggregateReport>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl RunReport {
    /// Aggregates per-seed results; `per_seed` must be non-empty and every
    /// seed must report the same labels in the same order.
    pub fn new(mode: &str, seeds: Vec<u64>, per_seed: Vec<SeedReport>) -> Result<Self> {
        let first = per_seed
            .first()
            .ok_or_else(|| Error::Domain("run report needs at least one seed".into()))?;
        let labels: Vec<String> = first.models.iter().map(|m| m.label.clone()).collect();
        let task_count = first.models[0].final_rmse.len();
        for sr in &per_seed {
            let got: Vec<String> = sr.models.iter().map(|m| m.label.clone()).collect();
            if got != labels {
                return Err(Error::Domain("inconsistent model labels across seeds".into()));
            }
        }
        let mut aggregate = Vec::with_capacity(labels.len());
        for (k, label) in labels.iter().enumerate() {
            let overall: Vec<f64> = per_seed.iter().map(|s| s.models[k].overall_rmse).collect();
            let (mean_overall, std_overall) = mean_std(&overall);
            let mut mean_final = Vec::with_capacity(task_count);
            let mut std_final = Vec::with_capacity(task_count);
            for j in 0..task_count {
                let per_task: Vec<f64> = per_seed.iter().map(|s| s.models[k].final_rmse[j]).collect();
                let (m, s) = mean_std(&per_task);
                mean_final.push(m);
                std_final.push(s);
            }
            let mean_of = |f: &dyn Fn(&ModelReport) -> Option<f64>| -> Option<f64> {
                let vals: Option<Vec<f64>> = per_seed.iter().map(|s| f(&s.models[k])).collect();
                vals.map(|v| mean_std(&v).0)
            };
            aggregate.push(AggregateReport {
                label: label.clone(),
                mean_overall_rmse: mean_overall,
                std_overall_rmse: std_overall,
                mean_final_rmse: mean_final,
                std_final_rmse: std_final,
                mean_bwt: mean_of(&|m| m.bwt),
                mean_fwt: mean_of(&|m| m.fwt),
                mean_forgetting: mean_of(&|m| m.forgetting_mean),
            });
        }
        Ok(Self { version: REPORT_VERSION, mode: mode.to_string(), seeds, task_count, per_seed, aggregate })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let report: RunReport = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        if report.version != REPORT_VERSION {
            return Err(Error::Format(format!(
                "unsupported report version {} (expected {REPORT_VERSION})",
                report.version
            )));
        }
        Ok(report)
    }

    pub fn aggregate_for(&self, label: &str) -> Option<&AggregateReport> {
        self.aggregate.iter().find(|a| a.label == label)
    }

    /// Flat CSV table of the aggregate (the per-task RMSE bar data).
    pub fn rmse_table_csv(&self) -> String {
        let mut out = String::from("model,task,mean_rmse,std_rmse\n");
        for agg in &self.aggregate {
            for j in 0..self.task_count {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    agg.label, j, agg.mean_final_rmse[j], agg.std_final_rmse[j]
                ));
            }
        }
        out
    }

    /// Per-seed continual-learning metric series.
    pub fn cl_metrics_csv(&self) -> String {
        let mut out = String::from("model,seed,overall_rmse,bwt,fwt,forgetting_mean\n");
        let fmt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for sr in &self.per_seed {
            for m in &sr.models {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    m.label,
                    sr.seed,
                    m.overall_rmse,
                    fmt(m.bwt),
                    fmt(m.fwt),
                    fmt(m.forgetting_mean)
                ));
            }
        }
        out
    }

    /// Gate decision log across seeds.
    pub fn gate_log_csv(&self) -> String {
        let mut out = String::from("model,seed,task,min_distance,threshold,adapted\n");
        for sr in &self.per_seed {
            for m in &sr.models {
                for g in &m.gate_log {
                    out.push_str(&format!(
                        "{},{},{},{},{},{}\n",
                        m.label, sr.seed, g.task_id, g.min_distance, g.threshold, g.adapted
                    ));
                }
            }
        }
        out
    }

    /// Human-readable summary; numbers are read straight from the report.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{} run over {} seed(s), {} tasks\n\n",
            self.mode,
            self.seeds.len(),
            self.task_count
        ));
        out.push_str("overall RMSE (deg), mean ± std over seeds:\n");
        for agg in &self.aggregate {
            out.push_str(&format!(
                "  {:<16} {:>8.4} ± {:.4}\n",
                agg.label, agg.mean_overall_rmse, agg.std_overall_rmse
            ));
        }
        out.push_str("\nper-task final RMSE (deg), mean over seeds:\n");
        out.push_str(&format!("  {:<16}", "task"));
        for j in 0..self.task_count {
            out.push_str(&format!(" {j:>7}"));
        }
        out.push('\n');
        for agg in &self.aggregate {
            out.push_str(&format!("  {:<16}", agg.label));
            for v in &agg.mean_final_rmse {
                out.push_str(&format!(" {v:>7.3}"));
            }
            out.push('\n');
        }
        out.push_str("\ncontinual-learning metrics, mean over seeds:\n");
        for agg in &self.aggregate {
            let fmt = |v: Option<f64>| v.map_or_else(|| "      -".into(), |x| format!("{x:>7.4}"));
            out.push_str(&format!(
                "  {:<16} BWT {}  FWT {}  forgetting {}\n",
                agg.label,
                fmt(agg.mean_bwt),
                fmt(agg.mean_fwt),
                fmt(agg.mean_forgetting)
            ));
        }
        out
    }
}

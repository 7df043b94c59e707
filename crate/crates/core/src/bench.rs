//! Command implementations: dataset generation, the benchmark and ablation
//! runs over all seeds, and report rendering.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::config::RunConfig;
use crate::data::{save_csv, synthesize_suite, SuiteConfig, TaskSequence};
use crate::error::{Error, Result};
use crate::model::TwoPartModel;
use crate::report::{ModelReport, RunReport, SeedReport};
use crate::trainer::{
    predictions, random_init_errors, run_continual, train_baseline, train_rr_variant, train_tl,
    TrainerConfig,
};

pub const LABEL_BASELINE: &str = "baseline";
pub const LABEL_TL: &str = "tl";
pub const LABEL_RR_NO_ADAPTIVE: &str = "rr-adaptive";
pub const LABEL_RR_ADAPTIVE: &str = "rr+adaptive";
pub const LABEL_CL: &str = "cl";

/// Model labels trained by `cmd_benchmark`.
pub const BENCHMARK_LABELS: [&str; 3] = [LABEL_BASELINE, LABEL_TL, LABEL_CL];
/// Model labels trained by `cmd_ablate` (the four-bar comparison).
pub const ABLATION_LABELS: [&str; 4] =
    [LABEL_BASELINE, LABEL_TL, LABEL_RR_NO_ADAPTIVE, LABEL_RR_ADAPTIVE];

/// One seed's results plus the final models, kept for trace emission.
pub struct SeedRun {
    pub report: SeedReport,
    pub models: Vec<(String, TwoPartModel)>,
    pub tasks: TaskSequence,
}

fn train_label(
    label: &str,
    tasks: &TaskSequence,
    cfg: &TrainerConfig,
    a_prime: &[f64],
) -> Result<(ModelReport, TwoPartModel)> {
    let started = Instant::now();
    let (model, matrix, threshold, gate_log) = match label {
        LABEL_BASELINE => {
            let (model, errors) = train_baseline(tasks, cfg)?;
            (model, vec![errors], None, Vec::new())
        }
        LABEL_TL => {
            let (model, matrix) = train_tl(tasks, cfg)?;
            (model, matrix.a, None, Vec::new())
        }
        LABEL_RR_NO_ADAPTIVE => {
            let out = train_rr_variant(tasks, cfg, false)?;
            (out.model, out.matrix.a, None, Vec::new())
        }
        LABEL_RR_ADAPTIVE | LABEL_CL => {
            let out = run_continual(tasks, cfg)?;
            (out.model, out.matrix.a, Some(out.threshold), out.gate_log)
        }
        other => return Err(Error::Config(format!("unknown model label {other:?}"))),
    };
    let report = ModelReport::from_matrix(
        label,
        matrix,
        Some(a_prime.to_vec()),
        threshold,
        gate_log,
        started.elapsed().as_secs_f64(),
    )?;
    Ok((report, model))
}

/// Trains every label on one seed's task sequence.
pub fn run_seed(cfg: &RunConfig, seed: u64, labels: &[&str]) -> Result<SeedRun> {
    let tasks = cfg.load_tasks(seed)?;
    let trainer = cfg.trainer_for_seed(seed);
    let a_prime = random_init_errors(&tasks.test, &trainer, 3)?;
    let mut models = Vec::with_capacity(labels.len());
    let mut reports = Vec::with_capacity(labels.len());
    for label in labels {
        let (report, model) = train_label(label, &tasks, &trainer, &a_prime)?;
        reports.push(report);
        models.push((label.to_string(), model));
    }
    Ok(SeedRun {
        report: SeedReport { seed, base_index: tasks.base_index, models: reports },
        models,
        tasks,
    })
}

/// Runs all seeds, in `jobs` parallel worker slots when jobs > 1. Results
/// are reassembled in seed order, so aggregation is order-independent.
fn run_all_seeds(cfg: &RunConfig, labels: &[&str]) -> Result<Vec<SeedRun>> {
    let seeds = &cfg.run.seeds;
    if cfg.run.jobs <= 1 || seeds.len() <= 1 {
        return seeds.iter().map(|&s| run_seed(cfg, s, labels)).collect();
    }
    let n_slots = cfg.run.jobs.min(seeds.len());
    let mut slots: Vec<Vec<u64>> = vec![Vec::new(); n_slots];
    for (i, &s) in seeds.iter().enumerate() {
        slots[i % n_slots].push(s);
    }
    let mut indexed: Vec<(u64, SeedRun)> = std::thread::scope(|scope| {
        let handles: Vec<_> = slots
            .iter()
            .map(|slot| {
                scope.spawn(move || -> Result<Vec<(u64, SeedRun)>> {
                    slot.iter().map(|&s| run_seed(cfg, s, labels).map(|r| (s, r))).collect()
                })
            })
            .collect();
        let mut all = Vec::with_capacity(seeds.len());
        let mut first_err = None;
        for h in handles {
            match h.join().expect("seed worker panicked") {
                Ok(mut part) => all.append(&mut part),
                Err(e) if first_err.is_none() => first_err = Some(e),
                Err(_) => {}
            }
        }
        match first_err {
            Some(e) => Err(e),
            None => Ok(all),
        }
    })?;
    // Restore the configured seed order.
    indexed.sort_by_key(|(s, _)| seeds.iter().position(|x| x == s).unwrap());
    Ok(indexed.into_iter().map(|(_, r)| r).collect())
}

/// Predicted-vs-true traces on every test set for the first seed's final
/// models: one CSV per task, one prediction column per model label.
fn write_traces(dir: &Path, run: &SeedRun) -> Result<()> {
    for (j, exp) in run.tasks.test.iter().enumerate() {
        let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
        let mut targets = Vec::new();
        for (label, model) in &run.models {
            let (preds, t) = predictions(model, exp)?;
            targets = t;
            columns.push((label.clone(), preds));
        }
        let mut out = String::from("t,target");
        for (label, _) in &columns {
            out.push(',');
            out.push_str(label);
        }
        out.push('\n');
        for i in 0..targets.len() {
            out.push_str(&format!("{},{}", i, targets[i]));
            for (_, preds) in &columns {
                out.push_str(&format!(",{}", preds[i]));
            }
            out.push('\n');
        }
        fs::write(dir.join(format!("traces_task{j}.csv")), out)?;
    }
    Ok(())
}

fn run_and_write(cfg: &RunConfig, mode: &str, labels: &[&str], out_dir: &Path) -> Result<RunReport> {
    fs::create_dir_all(out_dir)?;
    let runs = run_all_seeds(cfg, labels)?;
    let per_seed = runs.iter().map(|r| r.report.clone()).collect();
    let report = RunReport::new(mode, cfg.run.seeds.clone(), per_seed)?;
    report.save(&out_dir.join("report.json"))?;
    fs::write(out_dir.join("rmse_per_task.csv"), report.rmse_table_csv())?;
    fs::write(out_dir.join("cl_metrics.csv"), report.cl_metrics_csv())?;
    fs::write(out_dir.join("gate_log.csv"), report.gate_log_csv())?;
    write_traces(out_dir, &runs[0])?;
    Ok(report)
}

/// Writes the 9 + 9 synthetic experiments of the first seed as CSV files.
pub fn cmd_generate(cfg: &RunConfig, out_dir: &Path) -> Result<Vec<PathBuf>> {
    if cfg.data.is_some() {
        return Err(Error::Config("generate needs a synthetic configuration, not CSV sources".into()));
    }
    fs::create_dir_all(out_dir)?;
    let suite = SuiteConfig { seed: cfg.run.seeds[0], ..cfg.suite() };
    let (train, test) = synthesize_suite(&suite)?;
    let mut written = Vec::with_capacity(train.len() + test.len());
    for (kind, set) in [("train", &train), ("test", &test)] {
        for exp in set {
            let path = out_dir.join(format!("{kind}_{}.csv", exp.experiment_id));
            save_csv(exp, &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

/// Baseline vs transfer learning vs the proposed method, over all seeds.
pub fn cmd_benchmark(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport> {
    run_and_write(cfg, "benchmark", &BENCHMARK_LABELS, out_dir)
}

/// The four-model ablation comparison, over all seeds.
pub fn cmd_ablate(cfg: &RunConfig, out_dir: &Path) -> Result<RunReport> {
    run_and_write(cfg, "ablate", &ABLATION_LABELS, out_dir)
}

/// Renders a stored report; `csv_only` suppresses the prose summary.
pub fn cmd_report(path: &Path, csv_only: bool) -> Result<String> {
    let report = RunReport::load(path)?;
    if csv_only {
        Ok(report.rmse_table_csv())
    } else {
        Ok(report.summary())
    }
}

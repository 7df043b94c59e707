//! The training protocol: base training on the lowest-hysteresis signal, a
//! Wasserstein-gated two-phase adaptive update with rehearsal and a
//! regression LWF term, plus the benchmark trainers (single-network
//! baseline, transfer learning) and the no-adaptive-phase ablation.

use serde::{Deserialize, Serialize};

use crate::data::{make_windows, ExperimentDataset, TaskSequence};
use crate::drift::{should_adapt, wasserstein1, DriftGateConfig, EmpiricalDistribution};
use crate::error::{Error, Result};
use crate::metrics::{rmse, AccuracyMatrix};
use crate::model::{Part, TwoPartModel};
use crate::replay::ReplayBuffer;
use crate::tensor::Parameterized;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    pub base_epochs: usize,
    /// Brief static-part retrain at the start of each adaptive update. The
    /// count trades two failure modes: too few epochs leave the encoder
    /// reading a drifted baseline through the wrong operating point, while
    /// every extra epoch moves the shared feature space away from what the
    /// replay buffer's old tasks were encoded under, eroding early-task
    /// accuracy over a long sequence.
    pub static_phase_epochs: usize,
    pub dynamic_phase_epochs: usize,
    /// Weight of the L1 teacher-student regularization term.
    pub lambda_lwf: f64,
    /// Drift-gate threshold; calibrated from the base task when absent.
    pub gate_threshold: Option<f64>,
    /// Compare only this leading fraction of an incoming signal.
    pub gate_leading_fraction: Option<f64>,
    pub window_length: usize,
    /// Adam step size for the static part; see `model::STATIC_LR`.
    pub static_lr: f64,
    /// Adam step size for the dynamic part.
    pub dynamic_lr: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            base_epochs: 300,
            static_phase_epochs: 10,
            dynamic_phase_epochs: 100,
            lambda_lwf: 1.0,
            gate_threshold: None,
            gate_leading_fraction: None,
            window_length: 30,
            static_lr: crate::model::STATIC_LR,
            dynamic_lr: crate::model::DYNAMIC_LR,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_epochs == 0 || self.static_phase_epochs == 0 || self.dynamic_phase_epochs == 0 {
            return Err(Error::Config("all epoch counts must be at least 1".into()));
        }
        if self.lambda_lwf < 0.0 {
            return Err(Error::Config("lambda_lwf must be non-negative".into()));
        }
        if self.window_length == 0 {
            return Err(Error::Config("window length must be positive".into()));
        }
        if !(self.static_lr > 0.0) || !(self.dynamic_lr > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        Ok(())
    }

    /// A fresh two-part model under this configuration's seed and step sizes.
    pub fn fresh_model(&self) -> TwoPartModel {
        TwoPartModel::with_learning_rates(self.window_length, self.seed, self.static_lr, self.dynamic_lr)
    }
}

/// One gate decision, logged per processed experiment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateRecord {
    pub task_id: usize,
    pub min_distance: f64,
    pub threshold: f64,
    pub adapted: bool,
}

/// Mutable state threaded through one continual run.
pub struct ContinualRunState {
    pub model: TwoPartModel,
    pub buffer: ReplayBuffer,
    pub gate: DriftGateConfig,
    pub rows: Vec<Vec<f64>>,
    pub gate_log: Vec<GateRecord>,
}

/// Result of a full continual run over a task sequence.
pub struct ContinualOutcome {
    pub model: TwoPartModel,
    pub matrix: AccuracyMatrix,
    pub gate_log: Vec<GateRecord>,
    pub threshold: f64,
    pub base_epoch_losses: Vec<f64>,
}

// ─── Shared helpers ─────────────────────────────────────────────────────

/// L1 subgradient convention: sign(0) = 0.
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn sensor_distribution(exp: &ExperimentDataset) -> Result<EmpiricalDistribution> {
    EmpiricalDistribution::new(exp.samples.iter().map(|s| s.sensor).collect())
}

/// Predictions and targets over an experiment's stride-1 windows.
pub fn predictions(model: &TwoPartModel, exp: &ExperimentDataset) -> Result<(Vec<f64>, Vec<f64>)> {
    let windows = make_windows(exp, model.window_length)?;
    let mut preds = Vec::with_capacity(windows.windows.len());
    let mut targets = Vec::with_capacity(windows.windows.len());
    for (w, y) in &windows.windows {
        preds.push(model.forward(w)?);
        targets.push(*y);
    }
    Ok((preds, targets))
}

pub fn evaluate(model: &TwoPartModel, exp: &ExperimentDataset) -> Result<f64> {
    let (preds, targets) = predictions(model, exp)?;
    rmse(&preds, &targets)
}

fn evaluate_all(model: &TwoPartModel, tests: &[ExperimentDataset]) -> Result<Vec<f64>> {
    tests.iter().map(|exp| evaluate(model, exp)).collect()
}

/// Deterministic per-epoch visit order. Updating windows in time order lets
/// the model chase the signal within a pass and leaves the final parameters
/// wherever the last window happened to sit; a seeded shuffle decorrelates
/// consecutive updates.
fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::nn::seeded_rng(seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    for i in (1..n).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    order
}

/// Linear step-size decay to 10% of the initial rate by the final epoch;
/// settles the end state of the noisy per-window updates.
fn decayed_lr(lr0: f64, epoch: usize, total: usize) -> f64 {
    if total <= 1 {
        return lr0;
    }
    lr0 * (1.0 - 0.9 * epoch as f64 / (total - 1) as f64)
}

/// One pass of per-window MSE updates over `windows` in the given order,
/// stepping every non-frozen parameter. Returns the mean loss of the pass.
fn mse_epoch(model: &mut TwoPartModel, windows: &[(Vec<f64>, f64)], order: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for &k in order {
        let (window, target) = &windows[k];
        model.zero_grads();
        let cache = model.forward_cached(window)?;
        let diff = cache.dyn_cache.prediction - target;
        total += diff * diff;
        model.backward(&cache, 2.0 * diff);
        model.step()?;
    }
    Ok(total / windows.len() as f64)
}

/// Gate threshold: 3x the median Wasserstein distance between consecutive
/// cycles of the base signal.
pub fn calibrate_threshold(base: &ExperimentDataset) -> Result<f64> {
    if base.n_cycles < 2 {
        return Err(Error::Domain("threshold calibration needs at least two cycles".into()));
    }
    let mut cycle_dists: Vec<EmpiricalDistribution> = Vec::with_capacity(base.n_cycles);
    for cycle in 0..base.n_cycles {
        let sensors: Vec<f64> =
            base.samples.iter().filter(|s| s.cycle == cycle).map(|s| s.sensor).collect();
        cycle_dists.push(EmpiricalDistribution::new(sensors)?);
    }
    let mut dists: Vec<f64> = cycle_dists
        .windows(2)
        .map(|pair| wasserstein1(&pair[0], &pair[1]))
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = dists.len() / 2;
    let median =
        if dists.len() % 2 == 0 { (dists[mid - 1] + dists[mid]) / 2.0 } else { dists[mid] };
    if median <= 0.0 {
        return Err(Error::Domain("degenerate base signal: zero cycle-to-cycle distance".into()));
    }
    Ok(3.0 * median)
}

// ─── Continual learning protocol ────────────────────────────────────────

/// Trains the static part on the base signal through the frozen all-ones
/// dynamic part, then freezes it and enrolls the base task. Returns the mean
/// loss of every epoch.
pub fn train_base(
    model: &mut TwoPartModel,
    buffer: &mut ReplayBuffer,
    base_task: &ExperimentDataset,
    cfg: &TrainerConfig,
) -> Result<Vec<f64>> {
    let windows = make_windows(base_task, cfg.window_length)?;
    let mut losses = Vec::with_capacity(cfg.base_epochs);
    for epoch in 0..cfg.base_epochs {
        model.set_learning_rate(Part::Static, decayed_lr(cfg.static_lr, epoch, cfg.base_epochs));
        let order = epoch_order(windows.windows.len(), cfg.seed, epoch);
        losses.push(mse_epoch(model, &windows.windows, &order)?);
    }
    model.set_learning_rate(Part::Static, cfg.static_lr);
    model.set_part_frozen(Part::Static, true);
    buffer.enroll(base_task.experiment_id, base_task, cfg.window_length)?;
    Ok(losses)
}

/// The two-phase adaptive update. Phase A briefly retrains the static part
/// on the new signal with the dynamic part frozen; Phase B retrains the
/// dynamic part on the new signal plus all rehearsal windows, with the L1
/// teacher-student term anchored to the pre-update model.
pub fn adaptive_update(
    model: &mut TwoPartModel,
    buffer: &ReplayBuffer,
    task: &ExperimentDataset,
    cfg: &TrainerConfig,
) -> Result<()> {
    if buffer.is_empty() {
        return Err(Error::Protocol("adaptive update before base enrollment".into()));
    }
    let teacher = model.snapshot();
    let new_windows = make_windows(task, cfg.window_length)?.windows;

    // Phase A: static retrain, dynamic frozen.
    model.set_part_frozen(Part::Static, false);
    model.set_part_frozen(Part::Dynamic, true);
    for epoch in 0..cfg.static_phase_epochs {
        model.set_learning_rate(Part::Static, decayed_lr(cfg.static_lr, epoch, cfg.static_phase_epochs));
        let order = epoch_order(new_windows.len(), cfg.seed, epoch);
        mse_epoch(model, &new_windows, &order)?;
    }
    model.set_learning_rate(Part::Static, cfg.static_lr);
    model.set_part_frozen(Part::Static, true);

    // Phase B: dynamic retrain with rehearsal and the LWF term. The static
    // part is frozen now, so its features can be computed once per window.
    model.set_part_frozen(Part::Dynamic, false);
    model.break_dynamic_symmetry(cfg.seed);
    // Phase A just moved the static features, so the dynamic optimizer's
    // accumulated moments describe a gradient landscape that no longer
    // exists; starting each Phase B from fresh moments avoids Adam taking
    // its first steps along stale directions.
    for st in &mut model.dynamic_opt {
        st.m = crate::tensor::Tensor::zeros(st.m.shape.clone());
        st.v = crate::tensor::Tensor::zeros(st.v.shape.clone());
        st.step_count = 0;
    }
    let mut new_feats = Vec::with_capacity(new_windows.len());
    let mut teacher_preds = Vec::with_capacity(new_windows.len());
    for (window, _) in &new_windows {
        new_feats.push(model.static_features(window)?);
        teacher_preds.push(teacher.forward(window)?);
    }
    let mut replay: Vec<(Vec<f64>, f64)> = Vec::new();
    for entry in buffer.entries() {
        for (window, target) in &entry.windows {
            replay.push((model.static_features(window)?, *target));
        }
    }
    // The buffer holds one cycle per task while the new task contributes
    // every window, so rehearsal is repeated to carry comparable weight.
    let base_len = replay.len();
    let repeats = (new_windows.len() as f64 / base_len as f64).round().max(1.0) as usize;
    for _ in 1..repeats {
        replay.extend_from_slice(&replay[..base_len].to_vec());
    }

    // Every epoch visits all new-task windows (MSE + LWF term) and all
    // rehearsal windows (MSE), interleaved by the seeded shuffle.
    let n_new = new_windows.len();
    for epoch in 0..cfg.dynamic_phase_epochs {
        model.set_learning_rate(Part::Dynamic, decayed_lr(cfg.dynamic_lr, epoch, cfg.dynamic_phase_epochs));
        for k in epoch_order(n_new + replay.len(), cfg.seed, epoch) {
            model.dynamic_part.zero_grads();
            let d_pred;
            let cache;
            if k < n_new {
                cache = model.dynamic_forward(&new_feats[k])?;
                let p = cache.prediction;
                d_pred = 2.0 * (p - new_windows[k].1) + cfg.lambda_lwf * sign(p - teacher_preds[k]);
            } else {
                let (features, target) = &replay[k - n_new];
                cache = model.dynamic_forward(features)?;
                d_pred = 2.0 * (cache.prediction - target);
            }
            model.dynamic_backward(&cache, d_pred);
            model.step()?;
        }
    }
    model.set_learning_rate(Part::Dynamic, cfg.dynamic_lr);
    model.set_part_frozen(Part::Dynamic, true);
    Ok(())
}

/// Gates one incoming task, adapts and enrolls it when the gate fires, and
/// appends an accuracy-matrix row by evaluating every task's test set.
pub fn process_task(
    state: &mut ContinualRunState,
    task: &ExperimentDataset,
    tests: &[ExperimentDataset],
    cfg: &TrainerConfig,
) -> Result<GateRecord> {
    let incoming = sensor_distribution(task)?;
    let outcome = should_adapt(&incoming, &state.buffer, &state.gate)?;
    if outcome.decision {
        adaptive_update(&mut state.model, &state.buffer, task, cfg)?;
        state.buffer.enroll(task.experiment_id, task, cfg.window_length)?;
    }
    state.rows.push(evaluate_all(&state.model, tests)?);
    let record = GateRecord {
        task_id: task.experiment_id,
        min_distance: outcome.min_distance,
        threshold: state.gate.threshold,
        adapted: outcome.decision,
    };
    state.gate_log.push(record.clone());
    Ok(record)
}

/// The full proposed method over an ordered task sequence.
pub fn run_continual(tasks: &TaskSequence, cfg: &TrainerConfig) -> Result<ContinualOutcome> {
    cfg.validate()?;
    if tasks.is_empty() {
        return Err(Error::Domain("empty task sequence".into()));
    }
    let threshold = match cfg.gate_threshold {
        Some(t) => t,
        None => calibrate_threshold(&tasks.train[0])?,
    };
    let mut gate = DriftGateConfig::new(threshold)?;
    gate.leading_fraction = cfg.gate_leading_fraction;

    let mut model = cfg.fresh_model();
    let mut buffer = ReplayBuffer::new();
    let base_epoch_losses = train_base(&mut model, &mut buffer, &tasks.train[0], cfg)?;

    let mut state = ContinualRunState { model, buffer, gate, rows: Vec::new(), gate_log: Vec::new() };
    state.rows.push(evaluate_all(&state.model, &tasks.test)?);
    for task in &tasks.train[1..] {
        process_task(&mut state, task, &tasks.test, cfg)?;
    }
    Ok(ContinualOutcome {
        model: state.model,
        matrix: AccuracyMatrix::new(state.rows)?,
        gate_log: state.gate_log,
        threshold,
        base_epoch_losses,
    })
}

// ─── Benchmarks and ablation ────────────────────────────────────────────

/// Single unified network (random init, one optimizer, nothing frozen)
/// trained on the base task only; evaluation is read-only.
pub fn train_baseline(tasks: &TaskSequence, cfg: &TrainerConfig) -> Result<(TwoPartModel, Vec<f64>)> {
    cfg.validate()?;
    let mut model = TwoPartModel::new_unified(cfg.window_length, cfg.seed);
    let windows = make_windows(&tasks.train[0], cfg.window_length)?;
    for epoch in 0..cfg.base_epochs {
        let lr = decayed_lr(crate::model::DYNAMIC_LR, epoch, cfg.base_epochs);
        model.set_learning_rate(Part::Static, lr);
        model.set_learning_rate(Part::Dynamic, lr);
        let order = epoch_order(windows.windows.len(), cfg.seed, epoch);
        mse_epoch(&mut model, &windows.windows, &order)?;
    }
    let errors = evaluate_all(&model, &tasks.test)?;
    Ok((model, errors))
}

/// Transfer learning: base training as in the proposed method, then the
/// dynamic part alone is fine-tuned on every subsequent task in order. No
/// gate, no rehearsal, no regularization.
pub fn train_tl(tasks: &TaskSequence, cfg: &TrainerConfig) -> Result<(TwoPartModel, AccuracyMatrix)> {
    cfg.validate()?;
    let mut model = cfg.fresh_model();
    let mut scratch_buffer = ReplayBuffer::new();
    train_base(&mut model, &mut scratch_buffer, &tasks.train[0], cfg)?;

    let mut rows = vec![evaluate_all(&model, &tasks.test)?];
    for task in &tasks.train[1..] {
        let new_windows = make_windows(task, cfg.window_length)?.windows;
        model.set_part_frozen(Part::Dynamic, false);
        model.break_dynamic_symmetry(cfg.seed);
        let mut feats = Vec::with_capacity(new_windows.len());
        for (window, _) in &new_windows {
            feats.push(model.static_features(window)?);
        }
        for epoch in 0..cfg.dynamic_phase_epochs {
            model.set_learning_rate(Part::Dynamic, decayed_lr(cfg.dynamic_lr, epoch, cfg.dynamic_phase_epochs));
            for k in epoch_order(new_windows.len(), cfg.seed, epoch) {
                model.dynamic_part.zero_grads();
                let cache = model.dynamic_forward(&feats[k])?;
                let d_pred = 2.0 * (cache.prediction - new_windows[k].1);
                model.dynamic_backward(&cache, d_pred);
                model.step()?;
            }
        }
        model.set_learning_rate(Part::Dynamic, cfg.dynamic_lr);
        model.set_part_frozen(Part::Dynamic, true);
        rows.push(evaluate_all(&model, &tasks.test)?);
    }
    Ok((model, AccuracyMatrix::new(rows)?))
}

/// Rehearsal + regularization ablation. With `adaptive` the full proposed
/// method runs unchanged; without it the adaptive two-phase update is
/// dropped: the static part stays frozen at its base-training state (it is
/// only ever unfrozen by Phase A), and every subsequent task fine-tunes the
/// dynamic part on the new windows plus balanced rehearsal windows, with the
/// LWF teacher term, unconditionally (no gate). Relative to transfer
/// learning this isolates what rehearsal + regularization contribute;
/// relative to the full method it isolates the adaptive phases.
pub fn train_rr_variant(tasks: &TaskSequence, cfg: &TrainerConfig, adaptive: bool) -> Result<ContinualOutcome> {
    if adaptive {
        return run_continual(tasks, cfg);
    }
    cfg.validate()?;
    let mut model = cfg.fresh_model();
    let mut buffer = ReplayBuffer::new();
    let base_epoch_losses = train_base(&mut model, &mut buffer, &tasks.train[0], cfg)?;

    let mut rows = vec![evaluate_all(&model, &tasks.test)?];
    for task in &tasks.train[1..] {
        let teacher = model.snapshot();
        let new_windows = make_windows(task, cfg.window_length)?.windows;
        model.set_part_frozen(Part::Dynamic, false);
        model.break_dynamic_symmetry(cfg.seed);
        // The static part never moves here, so features can be cached.
        let mut new_items: Vec<(Vec<f64>, f64, f64)> = Vec::with_capacity(new_windows.len());
        for (window, target) in &new_windows {
            new_items.push((model.static_features(window)?, *target, teacher.forward(window)?));
        }
        let mut replay: Vec<(Vec<f64>, f64)> = Vec::new();
        for entry in buffer.entries() {
            for (window, target) in &entry.windows {
                replay.push((model.static_features(window)?, *target));
            }
        }
        // Same rehearsal balancing as Phase B of the adaptive update.
        let base_len = replay.len();
        let repeats = (new_items.len() as f64 / base_len as f64).round().max(1.0) as usize;
        for _ in 1..repeats {
            replay.extend_from_slice(&replay[..base_len].to_vec());
        }
        let n_new = new_items.len();
        for epoch in 0..cfg.dynamic_phase_epochs {
            model.set_learning_rate(Part::Dynamic, decayed_lr(cfg.dynamic_lr, epoch, cfg.dynamic_phase_epochs));
            for k in epoch_order(n_new + replay.len(), cfg.seed, epoch) {
                model.dynamic_part.zero_grads();
                let d_pred;
                let cache;
                if k < n_new {
                    let (features, target, teacher_pred) = &new_items[k];
                    cache = model.dynamic_forward(features)?;
                    let p = cache.prediction;
                    d_pred = 2.0 * (p - target) + cfg.lambda_lwf * sign(p - teacher_pred);
                } else {
                    let (features, target) = &replay[k - n_new];
                    cache = model.dynamic_forward(features)?;
                    d_pred = 2.0 * (cache.prediction - target);
                }
                model.dynamic_backward(&cache, d_pred);
                model.step()?;
            }
        }
        model.set_learning_rate(Part::Dynamic, cfg.dynamic_lr);
        model.set_part_frozen(Part::Dynamic, true);
        buffer.enroll(task.experiment_id, task, cfg.window_length)?;
        rows.push(evaluate_all(&model, &tasks.test)?);
    }
    Ok(ContinualOutcome {
        model,
        matrix: AccuracyMatrix::new(rows)?,
        gate_log: Vec::new(),
        threshold: f64::NAN,
        base_epoch_losses,
    })
}

/// RMSE on every test set for randomly initialized models, averaged over
/// `n_inits` seeds. Used as the a' reference of forward-transfer scoring.
pub fn random_init_errors(
    tests: &[ExperimentDataset],
    cfg: &TrainerConfig,
    n_inits: usize,
) -> Result<Vec<f64>> {
    let mut sums = vec![0.0; tests.len()];
    for k in 0..n_inits {
        let model = TwoPartModel::new_unified(cfg.window_length, cfg.seed.wrapping_add(7919 * (k as u64 + 1)));
        for (j, exp) in tests.iter().enumerate() {
            sums[j] += evaluate(&model, exp)?;
        }
    }
    Ok(sums.into_iter().map(|s| s / n_inits as f64).collect())
}

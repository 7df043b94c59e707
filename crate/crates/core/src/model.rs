//! The two-part network: a recurrent feature extractor ("static part") that
//! is frozen after base training, and a dense head ("dynamic part") that is
//! retrained adaptively when drift is detected.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, adam_step, relu, relu_backward, AdamState, Dense, Lstm, LstmCache};
use crate::tensor::{Parameter, Parameterized};

pub const LSTM_HIDDEN: usize = 16;
pub const STATIC_OUT: usize = 64;
pub const DYN_HIDDEN_1: usize = 64;
pub const DYN_HIDDEN_2: usize = 256;

/// LSTM(1 -> 16) over the window, flattened to 16·L, then dense to 64 + ReLU.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StaticPart {
    pub lstm: Lstm,
    pub head: Dense,
}

/// Dense 64 -> 64 + ReLU, 64 -> 256 + ReLU, 256 -> 1 with no activation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicPart {
    pub fc1: Dense,
    pub fc2: Dense,
    pub out: Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Static,
    Dynamic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoPartModel {
    pub static_part: StaticPart,
    pub dynamic_part: DynamicPart,
    pub window_length: usize,
    /// Adam states in the part's parameter visit order; never shared.
    pub static_opt: Vec<AdamState>,
    pub dynamic_opt: Vec<AdamState>,
}

impl Parameterized for StaticPart {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.lstm.visit_params(f);
        self.head.visit_params(f);
    }
}

impl Parameterized for DynamicPart {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.fc1.visit_params(f);
        self.fc2.visit_params(f);
        self.out.visit_params(f);
    }
}

impl Parameterized for TwoPartModel {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.static_part.visit_params(f);
        self.dynamic_part.visit_params(f);
    }
}

/// Activations recorded by a full forward pass for backprop.
pub struct ForwardCache {
    pub window: Vec<f64>,
    pub lstm_cache: LstmCache,
    pub hidden: Vec<f64>,
    pub head_pre: Vec<f64>,
    pub features: Vec<f64>,
    pub dyn_cache: DynCache,
}

/// Activations of the dynamic stack alone, keyed by its 64-value input.
pub struct DynCache {
    pub input: Vec<f64>,
    pub fc1_pre: Vec<f64>,
    pub fc1_out: Vec<f64>,
    pub fc2_pre: Vec<f64>,
    pub fc2_out: Vec<f64>,
    pub prediction: f64,
}

fn adam_states_for<M: Parameterized>(part: &mut M, lr: f64, weight_decay: f64) -> Vec<AdamState> {
    let mut states = Vec::new();
    part.visit_params(&mut |p| {
        states.push(AdamState::new(p.value.shape.clone(), lr, weight_decay));
    });
    states
}

/// Default static-part learning rate. The frozen all-ones dynamic stack
/// multiplies the summed static features by 64·256, so static parameters
/// need far smaller steps than usual to keep the output stable.
pub const STATIC_LR: f64 = 1e-6;
pub const DYNAMIC_LR: f64 = 1e-3;
pub const DYNAMIC_WEIGHT_DECAY: f64 = 1e-4;

/// Initial scale of the static head's random weights. Small enough that the
/// initial prediction stays manageable despite the all-ones gain, yet large
/// enough that the rows keep distinct random directions after training: the
/// frozen all-ones stack sends identical gradients to every active head row,
/// so with a much smaller init the learned common component swamps the random
/// spread, the feature map collapses toward rank one, and the dynamic part
/// can no longer tell drifted tasks apart during rehearsal.
pub const HEAD_INIT_SCALE: f64 = 0.3;

impl TwoPartModel {
    /// Fresh model: static part randomly initialized and trainable, dynamic
    /// part all-ones weights / zero biases and frozen.
    pub fn new(window_length: usize, seed: u64) -> Self {
        Self::with_learning_rates(window_length, seed, STATIC_LR, DYNAMIC_LR)
    }

    pub fn with_learning_rates(window_length: usize, seed: u64, static_lr: f64, dynamic_lr: f64) -> Self {
        let mut rng = nn::seeded_rng(seed);
        let mut head = Dense::new("static.head", LSTM_HIDDEN * window_length, STATIC_OUT, &mut rng);
        for v in &mut head.weight.value.values {
            *v *= HEAD_INIT_SCALE;
        }
        let mut static_part = StaticPart { lstm: Lstm::new("static.lstm", 1, LSTM_HIDDEN, &mut rng), head };
        let mut dynamic_part = DynamicPart {
            fc1: Dense::constant("dynamic.fc1", STATIC_OUT, DYN_HIDDEN_1, 1.0, 0.0),
            fc2: Dense::constant("dynamic.fc2", DYN_HIDDEN_1, DYN_HIDDEN_2, 1.0, 0.0),
            out: Dense::constant("dynamic.out", DYN_HIDDEN_2, 1, 1.0, 0.0),
        };
        dynamic_part.set_frozen(true);
        let static_opt = adam_states_for(&mut static_part, static_lr, 0.0);
        let dynamic_opt = adam_states_for(&mut dynamic_part, dynamic_lr, DYNAMIC_WEIGHT_DECAY);
        Self { static_part, dynamic_part, window_length, static_opt, dynamic_opt }
    }

    /// Same stack with every layer randomly initialized and trainable, and a
    /// single optimizer setting (no weight decay). Used by the single-network
    /// baseline and as the random reference for forward-transfer scoring.
    pub fn new_unified(window_length: usize, seed: u64) -> Self {
        let mut rng = nn::seeded_rng(seed);
        let mut static_part = StaticPart {
            lstm: Lstm::new("static.lstm", 1, LSTM_HIDDEN, &mut rng),
            head: Dense::new("static.head", LSTM_HIDDEN * window_length, STATIC_OUT, &mut rng),
        };
        let mut dynamic_part = DynamicPart {
            fc1: Dense::new("dynamic.fc1", STATIC_OUT, DYN_HIDDEN_1, &mut rng),
            fc2: Dense::new("dynamic.fc2", DYN_HIDDEN_1, DYN_HIDDEN_2, &mut rng),
            out: Dense::new("dynamic.out", DYN_HIDDEN_2, 1, &mut rng),
        };
        let static_opt = adam_states_for(&mut static_part, 1e-3, 0.0);
        let dynamic_opt = adam_states_for(&mut dynamic_part, 1e-3, 0.0);
        Self { static_part, dynamic_part, window_length, static_opt, dynamic_opt }
    }

    /// Adds a tiny seeded perturbation to every still-constant dynamic
    /// tensor. The all-ones initialization gives every unit of a layer an
    /// identical gradient, so without this the units would stay identical
    /// forever and the stack would act as a single neuron. Called when the
    /// dynamic part first becomes trainable; a no-op once trained.
    pub fn break_dynamic_symmetry(&mut self, seed: u64) {
        let mut rng = nn::seeded_rng(seed ^ 0xd15e_a5e5_0f0f_0f0f);
        self.dynamic_part.visit_params(&mut |p| {
            let constant = p.value.values.iter().all(|&v| v == p.value.values[0]);
            if constant {
                for v in &mut p.value.values {
                    *v += rand::Rng::gen_range(&mut rng, -1e-3..1e-3);
                }
            }
        });
    }

    /// Sets the Adam step size of every parameter in one part (used by the
    /// per-epoch decay schedule).
    pub fn set_learning_rate(&mut self, part: Part, lr: f64) {
        let states = match part {
            Part::Static => &mut self.static_opt,
            Part::Dynamic => &mut self.dynamic_opt,
        };
        for s in states {
            s.lr = lr;
        }
    }

    pub fn set_part_frozen(&mut self, part: Part, frozen: bool) {
        match part {
            Part::Static => self.static_part.set_frozen(frozen),
            Part::Dynamic => self.dynamic_part.set_frozen(frozen),
        }
    }

    fn check_window(&self, window: &[f64]) -> Result<()> {
        if window.len() != self.window_length {
            return Err(Error::Dimension(format!(
                "window length {} does not match model window length {}",
                window.len(),
                self.window_length
            )));
        }
        Ok(())
    }

    /// Predicted bending angle for one window. Pure in (parameters, window);
    /// the recurrent state starts from zero for every window.
    pub fn forward(&self, window: &[f64]) -> Result<f64> {
        Ok(self.forward_cached(window)?.dyn_cache.prediction)
    }

    pub fn forward_cached(&self, window: &[f64]) -> Result<ForwardCache> {
        self.check_window(window)?;
        let (hidden, lstm_cache) = self.static_part.lstm.forward(window)?;
        let head_pre = self.static_part.head.forward(&hidden)?;
        let features = relu(&head_pre);
        let dyn_cache = self.dynamic_forward(&features)?;
        Ok(ForwardCache {
            window: window.to_vec(),
            lstm_cache,
            hidden,
            head_pre,
            features,
            dyn_cache,
        })
    }

    /// Static features only (the 64-value ReLU output of the static head).
    pub fn static_features(&self, window: &[f64]) -> Result<Vec<f64>> {
        self.check_window(window)?;
        let (hidden, _) = self.static_part.lstm.forward(window)?;
        Ok(relu(&self.static_part.head.forward(&hidden)?))
    }

    pub fn dynamic_forward(&self, features: &[f64]) -> Result<DynCache> {
        let fc1_pre = self.dynamic_part.fc1.forward(features)?;
        let fc1_out = relu(&fc1_pre);
        let fc2_pre = self.dynamic_part.fc2.forward(&fc1_out)?;
        let fc2_out = relu(&fc2_pre);
        let prediction = self.dynamic_part.out.forward(&fc2_out)?[0];
        Ok(DynCache { input: features.to_vec(), fc1_pre, fc1_out, fc2_pre, fc2_out, prediction })
    }

    /// Backprop through the dynamic stack only; returns d_features.
    pub fn dynamic_backward(&mut self, cache: &DynCache, d_pred: f64) -> Vec<f64> {
        let d_fc2_out = self.dynamic_part.out.backward(&cache.fc2_out, &[d_pred]);
        let d_fc2_pre = relu_backward(&cache.fc2_pre, &d_fc2_out);
        let d_fc1_out = self.dynamic_part.fc2.backward(&cache.fc1_out, &d_fc2_pre);
        let d_fc1_pre = relu_backward(&cache.fc1_pre, &d_fc1_out);
        self.dynamic_part.fc1.backward(&cache.input, &d_fc1_pre)
    }

    /// Full backprop. Gradients flow through frozen parts; freezing only
    /// gates optimizer updates.
    pub fn backward(&mut self, cache: &ForwardCache, d_pred: f64) {
        let d_features = self.dynamic_backward(&cache.dyn_cache, d_pred);
        let d_head_pre = relu_backward(&cache.head_pre, &d_features);
        let d_hidden = self.static_part.head.backward(&cache.hidden, &d_head_pre);
        self.static_part.lstm.backward(&cache.lstm_cache, &d_hidden);
    }

    /// Applies one Adam step to every non-frozen parameter of both parts.
    pub fn step(&mut self) -> Result<()> {
        let states = &mut self.static_opt;
        let mut idx = 0;
        let mut result = Ok(());
        self.static_part.visit_params(&mut |p| {
            if result.is_ok() {
                result = adam_step(p, &mut states[idx]);
            }
            idx += 1;
        });
        result?;
        let states = &mut self.dynamic_opt;
        let mut idx = 0;
        let mut result = Ok(());
        self.dynamic_part.visit_params(&mut |p| {
            if result.is_ok() {
                result = adam_step(p, &mut states[idx]);
            }
            idx += 1;
        });
        result
    }

    /// Closed-form parameter count for the fixed architecture at window
    /// length L.
    pub fn expected_param_count(window_length: usize) -> usize {
        let total = 1 + LSTM_HIDDEN;
        let lstm = 4 * (LSTM_HIDDEN * total + LSTM_HIDDEN);
        let head = STATIC_OUT * (LSTM_HIDDEN * window_length) + STATIC_OUT;
        let dynamic = DYN_HIDDEN_1 * STATIC_OUT
            + DYN_HIDDEN_1
            + DYN_HIDDEN_2 * DYN_HIDDEN_1
            + DYN_HIDDEN_2
            + DYN_HIDDEN_2
            + 1;
        lstm + head + dynamic
    }

    /// Value-faithful deep copy, usable as an immutable teacher.
    pub fn snapshot(&self) -> TwoPartModel {
        self.clone()
    }

    pub fn save_snapshot(&self, path: &Path) -> Result<()> {
        let file = SnapshotFile { version: SNAPSHOT_VERSION, model: self.clone() };
        fs::write(path, serde_json::to_vec(&file)?)?;
        Ok(())
    }

    pub fn load_snapshot(path: &Path) -> Result<TwoPartModel> {
        let bytes = fs::read(path)?;
        let file: SnapshotFile = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("snapshot {}: {e}", path.display())))?;
        if file.version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!(
                "snapshot {}: unsupported version {}",
                path.display(),
                file.version
            )));
        }
        Ok(file.model)
    }
}

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct SnapshotFile {
    version: u32,
    model: TwoPartModel,
}

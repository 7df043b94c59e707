//! Minimal reverse-mode engine: dense and LSTM layers, losses, Adam with
//! decoupled weight decay, and a finite-difference gradient checker.
//!
//! Everything runs on single unbatched samples in f64. Layers keep their
//! parameters and accumulate gradients into each parameter's `grad` slot;
//! forward passes are `&self` and return whatever cache the backward pass
//! needs, so inference stays pure.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Parameter, Parameterized, Tensor};

// ─── Initialization ─────────────────────────────────────────────────────

pub fn uniform_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor { shape, values }
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ─── Dense layer ────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    /// Shape [n_out, n_in].
    pub weight: Parameter,
    pub bias: Parameter,
}

impl Dense {
    pub fn new(name: &str, n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (n_in as f64).sqrt();
        Self {
            n_in,
            n_out,
            weight: Parameter::new(format!("{name}.weight"), uniform_tensor(rng, vec![n_out, n_in], bound)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::zeros(vec![n_out])),
        }
    }

    /// Constant-initialized dense layer (weights `w`, biases `b`).
    pub fn constant(name: &str, n_in: usize, n_out: usize, w: f64, b: f64) -> Self {
        Self {
            n_in,
            n_out,
            weight: Parameter::new(format!("{name}.weight"), Tensor::filled(vec![n_out, n_in], w)),
            bias: Parameter::new(format!("{name}.bias"), Tensor::filled(vec![n_out], b)),
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.n_in {
            return Err(Error::Dimension(format!(
                "dense {}: input length {} does not match weight shape {:?}",
                self.weight.name,
                input.len(),
                self.weight.value.shape
            )));
        }
        let w = &self.weight.value.values;
        let b = &self.bias.value.values;
        let mut out = Vec::with_capacity(self.n_out);
        for i in 0..self.n_out {
            let row = &w[i * self.n_in..(i + 1) * self.n_in];
            let dot: f64 = row.iter().zip(input).map(|(wij, xj)| wij * xj).sum();
            out.push(b[i] + dot);
        }
        Ok(out)
    }

    /// Accumulates parameter gradients and returns d_input.
    pub fn backward(&mut self, input: &[f64], d_out: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.n_in);
        debug_assert_eq!(d_out.len(), self.n_out);
        let w = &self.weight.value.values;
        let wg = &mut self.weight.grad.values;
        let bg = &mut self.bias.grad.values;
        let mut d_in = vec![0.0; self.n_in];
        for i in 0..self.n_out {
            let di = d_out[i];
            bg[i] += di;
            let row = &w[i * self.n_in..(i + 1) * self.n_in];
            let grow = &mut wg[i * self.n_in..(i + 1) * self.n_in];
            for j in 0..self.n_in {
                grow[j] += di * input[j];
                d_in[j] += di * row[j];
            }
        }
        d_in
    }
}

// ─── Activations ────────────────────────────────────────────────────────

pub fn relu(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&x| x.max(0.0)).collect()
}

/// `pre` is the pre-activation input that produced the ReLU output.
pub fn relu_backward(pre: &[f64], d_out: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(d_out)
        .map(|(&x, &d)| if x > 0.0 { d } else { 0.0 })
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

// ─── LSTM ───────────────────────────────────────────────────────────────

/// Standard four-gate LSTM. Gate weights act on the concatenation
/// [x_t, h_{t-1}], each with shape [hidden, input + hidden].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Lstm {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_i: Parameter,
    pub w_f: Parameter,
    pub w_g: Parameter,
    pub w_o: Parameter,
    pub b_i: Parameter,
    pub b_f: Parameter,
    pub b_g: Parameter,
    pub b_o: Parameter,
}

/// Per-timestep activations kept for backpropagation through time.
pub struct LstmCache {
    len: usize,
    concat: Vec<Vec<f64>>,
    gate_i: Vec<Vec<f64>>,
    gate_f: Vec<Vec<f64>>,
    gate_g: Vec<Vec<f64>>,
    gate_o: Vec<Vec<f64>>,
    cell: Vec<Vec<f64>>,
    tanh_cell: Vec<Vec<f64>>,
}

impl Lstm {
    pub fn new(name: &str, input_size: usize, hidden_size: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (hidden_size as f64).sqrt();
        let total = input_size + hidden_size;
        let mut weight = |gate: &str| {
            Parameter::new(
                format!("{name}.w_{gate}"),
                uniform_tensor(rng, vec![hidden_size, total], bound),
            )
        };
        let w_i = weight("i");
        let w_f = weight("f");
        let w_g = weight("g");
        let w_o = weight("o");
        Self {
            input_size,
            hidden_size,
            w_i,
            w_f,
            w_g,
            w_o,
            b_i: Parameter::new(format!("{name}.b_i"), Tensor::zeros(vec![hidden_size])),
            // Forget gate bias starts at 1 so early training does not wipe the cell state.
            b_f: Parameter::new(format!("{name}.b_f"), Tensor::filled(vec![hidden_size], 1.0)),
            b_g: Parameter::new(format!("{name}.b_g"), Tensor::zeros(vec![hidden_size])),
            b_o: Parameter::new(format!("{name}.b_o"), Tensor::zeros(vec![hidden_size])),
        }
    }

    /// Runs the recurrence over `sequence` (row-major [L, input_size]) from a
    /// zero initial state and returns all hidden states as [L, hidden_size].
    pub fn forward(&self, sequence: &[f64]) -> Result<(Vec<f64>, LstmCache)> {
        if sequence.is_empty() {
            return Err(Error::Domain("lstm: empty input sequence".into()));
        }
        if sequence.len() % self.input_size != 0 {
            return Err(Error::Dimension(format!(
                "lstm: sequence length {} is not a multiple of input size {}",
                sequence.len(),
                self.input_size
            )));
        }
        let len = sequence.len() / self.input_size;
        let h_size = self.hidden_size;
        let total = self.input_size + h_size;

        let mut cache = LstmCache {
            len,
            concat: Vec::with_capacity(len),
            gate_i: Vec::with_capacity(len),
            gate_f: Vec::with_capacity(len),
            gate_g: Vec::with_capacity(len),
            gate_o: Vec::with_capacity(len),
            cell: Vec::with_capacity(len),
            tanh_cell: Vec::with_capacity(len),
        };

        let mut h = vec![0.0; h_size];
        let mut c = vec![0.0; h_size];
        let mut hidden_all = Vec::with_capacity(len * h_size);

        for t in 0..len {
            let mut concat = Vec::with_capacity(total);
            concat.extend_from_slice(&sequence[t * self.input_size..(t + 1) * self.input_size]);
            concat.extend_from_slice(&h);

            let gate = |w: &Parameter, b: &Parameter, j: usize| -> f64 {
                let row = &w.value.values[j * total..(j + 1) * total];
                b.value.values[j] + row.iter().zip(&concat).map(|(wv, xv)| wv * xv).sum::<f64>()
            };

            let mut gi = vec![0.0; h_size];
            let mut gf = vec![0.0; h_size];
            let mut gg = vec![0.0; h_size];
            let mut go = vec![0.0; h_size];
            let mut tc = vec![0.0; h_size];
            for j in 0..h_size {
                gi[j] = sigmoid(gate(&self.w_i, &self.b_i, j));
                gf[j] = sigmoid(gate(&self.w_f, &self.b_f, j));
                gg[j] = gate(&self.w_g, &self.b_g, j).tanh();
                go[j] = sigmoid(gate(&self.w_o, &self.b_o, j));
                c[j] = gf[j] * c[j] + gi[j] * gg[j];
                tc[j] = c[j].tanh();
                h[j] = go[j] * tc[j];
            }
            hidden_all.extend_from_slice(&h);

            cache.concat.push(concat);
            cache.gate_i.push(gi);
            cache.gate_f.push(gf);
            cache.gate_g.push(gg);
            cache.gate_o.push(go);
            cache.cell.push(c.clone());
            cache.tanh_cell.push(tc);
        }
        Ok((hidden_all, cache))
    }

    /// BPTT. `d_hidden` is the gradient of the loss w.r.t. every hidden state
    /// ([L, hidden_size]). Accumulates parameter gradients, returns d_input.
    pub fn backward(&mut self, cache: &LstmCache, d_hidden: &[f64]) -> Vec<f64> {
        let h_size = self.hidden_size;
        let total = self.input_size + h_size;
        debug_assert_eq!(d_hidden.len(), cache.len * h_size);

        let mut d_input = vec![0.0; cache.len * self.input_size];
        let mut dh_next = vec![0.0; h_size];
        let mut dc_next = vec![0.0; h_size];

        for t in (0..cache.len).rev() {
            let concat = &cache.concat[t];
            let gi = &cache.gate_i[t];
            let gf = &cache.gate_f[t];
            let gg = &cache.gate_g[t];
            let go = &cache.gate_o[t];
            let tc = &cache.tanh_cell[t];

            let mut d_concat = vec![0.0; total];
            let mut dc_prev = vec![0.0; h_size];

            for j in 0..h_size {
                let dh = d_hidden[t * h_size + j] + dh_next[j];
                let d_go = dh * tc[j];
                let dc = dh * go[j] * (1.0 - tc[j] * tc[j]) + dc_next[j];

                let c_prev = if t > 0 { cache.cell[t - 1][j] } else { 0.0 };
                let d_gf = dc * c_prev;
                let d_gi = dc * gg[j];
                let d_gg = dc * gi[j];
                dc_prev[j] = dc * gf[j];

                // Back through the gate nonlinearities to pre-activations.
                let pre = [
                    (d_gi * gi[j] * (1.0 - gi[j]), &mut self.w_i, &mut self.b_i),
                    (d_gf * gf[j] * (1.0 - gf[j]), &mut self.w_f, &mut self.b_f),
                    (d_gg * (1.0 - gg[j] * gg[j]), &mut self.w_g, &mut self.b_g),
                    (d_go * go[j] * (1.0 - go[j]), &mut self.w_o, &mut self.b_o),
                ];
                for (d_pre, w, b) in pre {
                    b.grad.values[j] += d_pre;
                    let row = &w.value.values[j * total..(j + 1) * total];
                    let grow = &mut w.grad.values[j * total..(j + 1) * total];
                    for k in 0..total {
                        grow[k] += d_pre * concat[k];
                        d_concat[k] += d_pre * row[k];
                    }
                }
            }

            for k in 0..self.input_size {
                d_input[t * self.input_size + k] = d_concat[k];
            }
            dh_next.copy_from_slice(&d_concat[self.input_size..]);
            dc_next = dc_prev;
        }
        d_input
    }
}

impl Parameterized for Lstm {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.w_i);
        f(&mut self.w_f);
        f(&mut self.w_g);
        f(&mut self.w_o);
        f(&mut self.b_i);
        f(&mut self.b_f);
        f(&mut self.b_g);
        f(&mut self.b_o);
    }
}

impl Parameterized for Dense {
    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

// ─── Losses ─────────────────────────────────────────────────────────────

fn check_lengths(pred: &[f64], target: &[f64]) -> Result<usize> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Dimension(format!(
            "loss: prediction length {} vs target length {}",
            pred.len(),
            target.len()
        )));
    }
    Ok(pred.len())
}

pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    let n = check_lengths(pred, target)? as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n)
}

/// d mse / d pred.
pub fn mse_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    let n = check_lengths(pred, target)? as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| 2.0 * (p - t) / n).collect())
}

pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    let n = check_lengths(pred, target)? as f64;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum::<f64>() / n)
}

/// d l1 / d pred, with sign(0) taken as 0.
pub fn l1_grad(pred: &[f64], target: &[f64]) -> Result<Vec<f64>> {
    let n = check_lengths(pred, target)? as f64;
    Ok(pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let d = p - t;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect())
}

// ─── Adam ───────────────────────────────────────────────────────────────

/// Per-parameter Adam state. Weight decay is decoupled: it scales the value
/// directly before the moment update instead of entering the gradient.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(shape: Vec<usize>, lr: f64, weight_decay: f64) -> Self {
        Self {
            m: Tensor::zeros(shape.clone()),
            v: Tensor::zeros(shape),
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
        }
    }
}

/// One Adam step. Frozen parameters are skipped silently with their state
/// (moments and step count) left untouched.
pub fn adam_step(param: &mut Parameter, state: &mut AdamState) -> Result<()> {
    if param.frozen {
        return Ok(());
    }
    if !param.grad.all_finite() {
        return Err(Error::Numeric(format!(
            "non-finite gradient in parameter '{}'",
            param.name
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for k in 0..param.value.values.len() {
        let g = param.grad.values[k];
        let value = &mut param.value.values[k];
        *value -= state.lr * state.weight_decay * *value;
        let m = &mut state.m.values[k];
        let v = &mut state.v.values[k];
        *m = state.beta1 * *m + (1.0 - state.beta1) * g;
        *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *value -= state.lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

// ─── Gradient verification ──────────────────────────────────────────────

/// Central finite differences against analytic gradients.
///
/// `run_backward` must zero gradients, run forward + backward, and leave
/// analytic gradients in each parameter's grad slot. `loss` runs a pure
/// forward pass. At most `samples_per_param` coordinates are probed per
/// parameter tensor, picked deterministically from `seed`.
pub fn grad_check<M: Parameterized>(
    model: &mut M,
    mut loss: impl FnMut(&M) -> f64,
    mut run_backward: impl FnMut(&mut M),
    step: f64,
    samples_per_param: usize,
    seed: u64,
) -> f64 {
    run_backward(model);
    let mut analytic: Vec<Vec<f64>> = Vec::new();
    model.visit_params(&mut |p| analytic.push(p.grad.values.clone()));

    let mut rng = seeded_rng(seed);
    let mut max_rel = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let coords: Vec<usize> = if n <= samples_per_param {
            (0..n).collect()
        } else {
            (0..samples_per_param).map(|_| rng.gen_range(0..n)).collect()
        };
        for k in coords {
            let nudge = |model: &mut M, delta: f64| {
                let mut idx = 0;
                model.visit_params(&mut |p| {
                    if idx == pi {
                        p.value.values[k] += delta;
                    }
                    idx += 1;
                });
            };
            nudge(model, step);
            let plus = loss(model);
            nudge(model, -2.0 * step);
            let minus = loss(model);
            nudge(model, step);
            let numeric = (plus - minus) / (2.0 * step);
            let a = grads[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            max_rel = max_rel.max(rel);
        }
    }
    max_rel
}

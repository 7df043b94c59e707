//! Dataset representation, synthetic drift-signal generation, CSV
//! ingestion, windowing, angle computation and hysteresis-based base-task
//! selection.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::seeded_rng;

/// One time-ordered measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: usize,
    /// Amplified sensor voltage, arbitrary units.
    pub sensor: f64,
    /// Tip bending angle in degrees.
    pub angle: f64,
    pub cycle: usize,
}

/// One experiment's samples, time ordered.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentDataset {
    pub experiment_id: usize,
    pub samples: Vec<Sample>,
    pub n_cycles: usize,
}

/// Stride-1 sliding windows of sensor values; the target is the angle at
/// each window's final timestep.
#[derive(Debug, Clone)]
pub struct WindowedDataset {
    pub windows: Vec<(Vec<f64>, f64)>,
}

/// An ordered task list with the base task first, plus the matching test
/// datasets in the same order.
#[derive(Debug, Clone)]
pub struct TaskSequence {
    pub base_index: usize,
    pub train: Vec<ExperimentDataset>,
    pub test: Vec<ExperimentDataset>,
}

impl TaskSequence {
    /// Reorders `train`/`test` so the experiment with the lowest hysteresis
    /// area comes first; the rest keep their original order.
    pub fn from_experiments(
        train: Vec<ExperimentDataset>,
        test: Vec<ExperimentDataset>,
    ) -> Result<Self> {
        if train.is_empty() || train.len() != test.len() {
            return Err(Error::Domain(format!(
                "task sequence needs matching train/test lists, got {} and {}",
                train.len(),
                test.len()
            )));
        }
        let base_index = select_base(&train)?;
        let mut ordered_train = Vec::with_capacity(train.len());
        let mut ordered_test = Vec::with_capacity(test.len());
        for (i, (tr, te)) in train.into_iter().zip(test).enumerate() {
            if i == base_index {
                ordered_train.insert(0, tr);
                ordered_test.insert(0, te);
            } else {
                ordered_train.push(tr);
                ordered_test.push(te);
            }
        }
        Ok(Self { base_index, train: ordered_train, test: ordered_test })
    }

    pub fn len(&self) -> usize {
        self.train.len()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_empty()
    }
}

// ─── Angle computation ──────────────────────────────────────────────────

/// Angle between two 2-D vectors in degrees, in [0, 180].
pub fn bending_angle(a: [f64; 2], b: [f64; 2]) -> Result<f64> {
    let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1]).sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("bending angle of a zero-length vector".into()));
    }
    let cos = ((a[0] * b[0] + a[1] * b[1]) / (na * nb)).clamp(-1.0, 1.0);
    Ok(cos.acos().to_degrees())
}

// ─── Hysteresis ─────────────────────────────────────────────────────────

/// Mean over cycles of the absolute shoelace area of the loop traced in the
/// (sensor, angle) plane.
pub fn hysteresis_area(exp: &ExperimentDataset) -> Result<f64> {
    let mut total = 0.0;
    let mut cycles = 0usize;
    let mut start = 0usize;
    while start < exp.samples.len() {
        let cycle = exp.samples[start].cycle;
        let mut end = start;
        while end < exp.samples.len() && exp.samples[end].cycle == cycle {
            end += 1;
        }
        let pts = &exp.samples[start..end];
        if pts.len() < 3 {
            return Err(Error::Domain(format!(
                "cycle {cycle} has only {} samples; need at least 3 for a loop area",
                pts.len()
            )));
        }
        let mut twice_area = 0.0;
        for i in 0..pts.len() {
            let p = &pts[i];
            let q = &pts[(i + 1) % pts.len()];
            twice_area += p.sensor * q.angle - q.sensor * p.angle;
        }
        total += twice_area.abs() / 2.0;
        cycles += 1;
        start = end;
    }
    if cycles == 0 {
        return Err(Error::Domain("experiment has no samples".into()));
    }
    Ok(total / cycles as f64)
}

/// Index of the experiment with the lowest hysteresis area; ties break to
/// the lowest experiment id.
pub fn select_base(experiments: &[ExperimentDataset]) -> Result<usize> {
    if experiments.is_empty() {
        return Err(Error::Domain("no experiments to select a base from".into()));
    }
    let mut best = 0usize;
    let mut best_area = f64::INFINITY;
    let mut best_id = usize::MAX;
    for (i, exp) in experiments.iter().enumerate() {
        let area = hysteresis_area(exp)?;
        if area < best_area || (area == best_area && exp.experiment_id < best_id) {
            best = i;
            best_area = area;
            best_id = exp.experiment_id;
        }
    }
    Ok(best)
}

// ─── Windowing ──────────────────────────────────────────────────────────

pub fn make_windows(exp: &ExperimentDataset, window_length: usize) -> Result<WindowedDataset> {
    make_cycle_windows(&exp.samples, window_length).map(|windows| WindowedDataset { windows })
}

/// Stride-1 windows over a contiguous slice of samples.
pub fn make_cycle_windows(samples: &[Sample], window_length: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    if window_length == 0 || samples.len() < window_length {
        return Err(Error::Domain(format!(
            "{} samples cannot form windows of length {window_length}",
            samples.len()
        )));
    }
    let mut windows = Vec::with_capacity(samples.len() - window_length + 1);
    for k in 0..=samples.len() - window_length {
        let window: Vec<f64> = samples[k..k + window_length].iter().map(|s| s.sensor).collect();
        windows.push((window, samples[k + window_length - 1].angle));
    }
    Ok(windows)
}

// ─── Synthetic generator ────────────────────────────────────────────────

/// Parameters for one synthetic experiment. The angle trajectory is a
/// smoothed triangle wave; the sensor signal is a gain times the angle plus
/// a rate-direction-dependent hysteresis bump, a constant offset, a slow
/// linear drift and Gaussian noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_cycles: usize,
    pub samples_per_cycle: usize,
    /// Peak bending angle in degrees.
    pub theta_max: f64,
    /// Sensor units per degree.
    pub gain: f64,
    /// Hysteresis strength; zero gives a zero-width loop.
    pub hysteresis: f64,
    /// Per-cycle peak-angle factor range: cycle `c` of `n` peaks at
    /// `theta_max` times the high end on the first cycle, descending linearly
    /// to the low end on the last. Without this variation the trajectory
    /// repeats exactly and a model can regress the angle from the window's
    /// shape alone, ignoring its amplitude — which would make it artificially
    /// immune to sensitivity drift. `(1.0, 1.0)` disables it.
    pub amp_range: (f64, f64),
    /// Constant per-experiment sensor offset.
    pub offset: f64,
    /// Slow drift in sensor units per sample.
    pub drift_slope: f64,
    /// Gaussian noise standard deviation on the sensor value.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_cycles: 5,
            samples_per_cycle: 320,
            theta_max: 100.0,
            gain: 0.01,
            hysteresis: 0.0005,
            amp_range: (0.95, 1.0),
            offset: 0.0,
            drift_slope: 0.0,
            noise_std: 0.002,
            seed: 0,
        }
    }
}

fn smoothstep(x: f64) -> f64 {
    x * x * (3.0 - 2.0 * x)
}

pub fn synthesize_experiment(cfg: &SynthConfig) -> Result<ExperimentDataset> {
    synthesize_experiment_with_id(cfg, 0)
}

pub fn synthesize_experiment_with_id(cfg: &SynthConfig, experiment_id: usize) -> Result<ExperimentDataset> {
    if cfg.n_cycles == 0 || cfg.samples_per_cycle < 3 {
        return Err(Error::Config(format!(
            "synthetic experiment needs positive cycles and >= 3 samples per cycle, got {} x {}",
            cfg.n_cycles, cfg.samples_per_cycle
        )));
    }
    if !(cfg.theta_max > 0.0) || cfg.hysteresis < 0.0 || cfg.noise_std < 0.0 {
        return Err(Error::Config("invalid synthetic signal parameters".into()));
    }
    let (amp_lo, amp_hi) = cfg.amp_range;
    if !(amp_lo > 0.0) || amp_hi < amp_lo {
        return Err(Error::Config("invalid per-cycle amplitude range".into()));
    }
    let mut rng = seeded_rng(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).unwrap();
    let spc = cfg.samples_per_cycle;
    let mut samples = Vec::with_capacity(cfg.n_cycles * spc);
    let mut t = 0usize;
    for cycle in 0..cfg.n_cycles {
        // Deterministic per-cycle peak: full amplitude on the first cycle,
        // descending linearly to the low end on the last. Varying the peak
        // breaks the shape-only shortcut (see SynthConfig::amp_range); making
        // the pattern a function of the cycle index rather than a random draw
        // keeps train and test cycles at matching amplitudes, so a stored
        // cycle is representative of the paired test set by construction.
        let frac = if cfg.n_cycles > 1 { cycle as f64 / (cfg.n_cycles - 1) as f64 } else { 0.0 };
        let peak = cfg.theta_max * (amp_hi - (amp_hi - amp_lo) * frac);
        for s in 0..spc {
            let u = s as f64 / spc as f64;
            let tri = 1.0 - (2.0 * u - 1.0).abs();
            let angle = peak * smoothstep(tri);
            let direction = if u < 0.5 { 1.0 } else { -1.0 };
            let bump = cfg.hysteresis * direction * angle * (1.0 - angle / peak);
            let eps = if cfg.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            let sensor = cfg.gain * angle + bump + cfg.offset + cfg.drift_slope * t as f64 + eps;
            samples.push(Sample { t, sensor, angle, cycle });
            t += 1;
        }
    }
    Ok(ExperimentDataset { experiment_id, samples, n_cycles: cfg.n_cycles })
}

/// Parameters for a full nine-experiment suite (train + test pairs).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub n_experiments: usize,
    pub signal: SynthConfig,
    /// Relative per-experiment gain spread. Gains rise evenly from
    /// `gain * (1 - gain_range)` to `gain * (1 + gain_range)` across the
    /// experiment sequence, modelling a progressive sensitivity change.
    /// A sensitivity change alters the slope of the windowed signal, so
    /// windows from different experiments stay distinguishable and a single
    /// model can fit them jointly.
    pub gain_range: f64,
    /// Per-experiment baseline offsets rise evenly over ±offset_range with
    /// the sequence, like the other drift parameters.
    pub offset_range: f64,
    /// Upper bound for the total slow drift accumulated over an experiment.
    pub drift_total_range: f64,
    /// Per-experiment hysteresis strength, rising evenly over this range as
    /// the sequence progresses (loop width grows with degradation, so the
    /// first experiment is the natural base signal).
    pub hysteresis_range: (f64, f64),
    pub seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            n_experiments: 9,
            signal: SynthConfig::default(),
            gain_range: 0.5,
            offset_range: 0.3,
            drift_total_range: 0.01,
            hysteresis_range: (0.0002, 0.002),
            seed: 0,
        }
    }
}

/// Nine train and nine test experiments. Train/test pairs share gain,
/// offset, drift slope and hysteresis strength but use independent noise
/// draws.
pub fn synthesize_suite(cfg: &SuiteConfig) -> Result<(Vec<ExperimentDataset>, Vec<ExperimentDataset>)> {
    if cfg.n_experiments == 0 {
        return Err(Error::Config("suite needs at least one experiment".into()));
    }
    let n = cfg.n_experiments;
    let mut rng = seeded_rng(cfg.seed ^ 0x5eed_5eed);
    // Offsets rise evenly with the sequence, like gain and hysteresis: the
    // drift is progressive, so consecutive experiments stay uniformly close
    // in raw signal space. The ramp is centred on zero — the suite's signals
    // as a whole straddle the encoder's linear region; anchoring the same
    // ramp entirely on one side of zero was tried and degraded every
    // sequential learner. (A shuffled offset order was also tried and
    // rejected: it lets non-adjacent experiments nearly collide in raw
    // window space, which made results swing wildly with the shuffle draw.)
    let offsets: Vec<f64> = (0..n)
        .map(|e| {
            if n == 1 {
                0.0
            } else {
                -cfg.offset_range + 2.0 * cfg.offset_range * e as f64 / (n - 1) as f64
            }
        })
        .collect();
    // Gain and hysteresis rise monotonically across the sequence: a
    // progressively degrading sensor gets more sensitive and wider-looped,
    // which makes the first experiment the lowest-hysteresis base signal.
    let fraction = |e: usize| if n == 1 { 0.5 } else { e as f64 / (n - 1) as f64 };
    let gains: Vec<f64> =
        (0..n).map(|e| cfg.signal.gain * (1.0 - cfg.gain_range + 2.0 * cfg.gain_range * fraction(e))).collect();
    let total_samples = (cfg.signal.n_cycles * cfg.signal.samples_per_cycle) as f64;
    let (h_lo, h_hi) = cfg.hysteresis_range;
    let mut train = Vec::with_capacity(n);
    let mut test = Vec::with_capacity(n);
    for e in 0..n {
        let drift_total: f64 = rng.gen_range(0.0..=cfg.drift_total_range.max(f64::MIN_POSITIVE));
        let hysteresis = h_lo + (h_hi - h_lo) * fraction(e);
        let base = SynthConfig {
            gain: gains[e],
            offset: offsets[e],
            drift_slope: drift_total / total_samples,
            hysteresis,
            ..cfg.signal.clone()
        };
        let train_cfg = SynthConfig { seed: cfg.seed.wrapping_mul(1000).wrapping_add(2 * e as u64), ..base.clone() };
        let test_cfg = SynthConfig { seed: cfg.seed.wrapping_mul(1000).wrapping_add(2 * e as u64 + 1), ..base };
        train.push(synthesize_experiment_with_id(&train_cfg, e)?);
        test.push(synthesize_experiment_with_id(&test_cfg, e)?);
    }
    Ok((train, test))
}

// ─── CSV ingestion ──────────────────────────────────────────────────────

pub const CSV_HEADER: &str = "t,sensor,angle,cycle";

pub fn save_csv(exp: &ExperimentDataset, path: &Path) -> Result<()> {
    let mut out = String::with_capacity(exp.samples.len() * 32);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for s in &exp.samples {
        // `{}` on f64 renders the shortest string that parses back exactly.
        out.push_str(&format!("{},{},{},{}\n", s.t, s.sensor, s.angle, s.cycle));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_csv(path: &Path, experiment_id: usize) -> Result<ExperimentDataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    for required in ["t", "sensor", "angle", "cycle"] {
        if !cols.iter().any(|c| *c == required) {
            return Err(Error::Format(format!(
                "{}: missing column \"{required}\" in header",
                path.display()
            )));
        }
    }
    let idx = |name: &str| cols.iter().position(|c| *c == name).unwrap();
    let (ti, si, ai, ci) = (idx("t"), idx("sensor"), idx("angle"), idx("cycle"));

    let mut samples = Vec::new();
    let mut last_t: Option<usize> = None;
    for (line_no, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Error::Format(format!(
                "{}:{}: expected {} fields, got {}",
                path.display(),
                line_no + 1,
                cols.len(),
                fields.len()
            )));
        }
        let parse_f = |field: &str, name: &str| -> Result<f64> {
            field.parse::<f64>().map_err(|_| {
                Error::Format(format!(
                    "{}:{}: non-numeric {name} value {field:?}",
                    path.display(),
                    line_no + 1
                ))
            })
        };
        let parse_u = |field: &str, name: &str| -> Result<usize> {
            field.parse::<usize>().map_err(|_| {
                Error::Format(format!(
                    "{}:{}: non-numeric {name} value {field:?}",
                    path.display(),
                    line_no + 1
                ))
            })
        };
        let t = parse_u(fields[ti], "t")?;
        if let Some(prev) = last_t {
            if t <= prev {
                return Err(Error::Format(format!(
                    "{}:{}: time index {t} is not increasing (previous {prev})",
                    path.display(),
                    line_no + 1
                )));
            }
        }
        last_t = Some(t);
        samples.push(Sample {
            t,
            sensor: parse_f(fields[si], "sensor")?,
            angle: parse_f(fields[ai], "angle")?,
            cycle: parse_u(fields[ci], "cycle")?,
        });
    }
    if samples.is_empty() {
        return Err(Error::Format(format!("{}: no samples", path.display())));
    }
    let n_cycles = samples.iter().map(|s| s.cycle).max().unwrap() + 1;
    Ok(ExperimentDataset { experiment_id, samples, n_cycles })
}

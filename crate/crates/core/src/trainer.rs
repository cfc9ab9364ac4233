//! Quantization-aware training: the α escalation loop for weight
//! compression, the activation-precision descent, and ablation sweeps.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    argmax_rows, cross_entropy, sgd_step, Dataset, GradientSet, Layer, Linear, Model, OptimState,
    PactLayer, Task, Tensor, Weights,
};
use crate::quant::{
    compression_ratio, regularizer, regularizer_coefficients, reshape_conv, BitLayer,
    CompressionRatio,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Increment of the regularization strength per sweep step.
    pub delta_alpha: f64,
    /// The sweep never goes past this α.
    pub alpha_ceiling: f64,
    pub init_act_bits: u32,
    pub init_weight_bits: u32,
    pub total_epochs: usize,
    /// 1-based epochs after which planes are re-quantized and block
    /// precisions adjusted.
    pub requant_epochs: Vec<usize>,
    /// Largest tolerated accuracy drop against the float baseline (fraction).
    pub accuracy_budget: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    /// Hidden width (blobs MLP) or output channels (images conv net).
    pub hidden: usize,
    pub init_beta: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            delta_alpha: 5e-6,
            alpha_ceiling: 1.0,
            init_act_bits: 8,
            init_weight_bits: 8,
            total_epochs: 60,
            requant_epochs: vec![20, 40, 60],
            accuracy_budget: 0.01,
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 32,
            train_samples: 512,
            test_samples: 512,
            hidden: 32,
            init_beta: 4.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.delta_alpha.is_finite() && self.delta_alpha > 0.0) {
            return bad("delta_alpha must be positive");
        }
        if self.alpha_ceiling.is_nan() || self.alpha_ceiling < self.delta_alpha {
            return bad("alpha_ceiling must be at least delta_alpha");
        }
        if !(1..=16).contains(&self.init_act_bits) {
            return bad("init_act_bits must be in 1..=16");
        }
        if !(1..=16).contains(&self.init_weight_bits) {
            return bad("init_weight_bits must be in 1..=16");
        }
        if self.total_epochs == 0 {
            return bad("total_epochs must be positive");
        }
        if self
            .requant_epochs
            .iter()
            .any(|&e| e == 0 || e > self.total_epochs)
        {
            return bad("requant_epochs must lie in [1, total_epochs]");
        }
        if !(0.0..=1.0).contains(&self.accuracy_budget) {
            return bad("accuracy_budget must be a fraction in [0, 1]");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0)
            || !(0.0..1.0).contains(&self.momentum)
        {
            return bad("learning_rate must be positive and momentum in [0, 1)");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 || self.train_samples == 0 || self.test_samples == 0 {
            return bad("batch_size and sample counts must be positive");
        }
        if self.hidden == 0 || !(self.init_beta.is_finite() && self.init_beta > 0.0) {
            return bad("hidden must be positive and init_beta > 0");
        }
        Ok(())
    }

    /// Spacing reported in sweep output: the first re-quantization epoch.
    pub fn requant_interval(&self) -> usize {
        self.requant_epochs.iter().copied().min().unwrap_or(0)
    }

    /// Re-quantize every `interval` epochs.
    pub fn with_interval(&self, interval: usize) -> Self {
        let interval = interval.max(1);
        Self {
            requant_epochs: (1..=self.total_epochs / interval)
                .map(|k| k * interval)
                .collect(),
            ..self.clone()
        }
    }
}

/// A task, its data, and the shared initial bit-plane model every run
/// restarts from.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub task: Task,
    pub config: TrainConfig,
    pub train: Dataset,
    pub test: Dataset,
    pub init: Model,
}

impl Experiment {
    pub fn new(task: Task, config: TrainConfig, ou_height: usize, ou_width: usize) -> Result<Self> {
        config.validate()?;
        let (train, test) = task.generate(config.seed, config.train_samples, config.test_samples);
        let init = build_model(task, &config, ou_height, ou_width);
        Ok(Self {
            task,
            config,
            train,
            test,
            init,
        })
    }
}

const IMAGE_SIDE: usize = 8;
const CONV_K: usize = 3;

/// Bit-plane network for `task`, seeded from the config.
pub fn build_model(task: Task, cfg: &TrainConfig, ou_height: usize, ou_width: usize) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0005_eed0_fb17);
    let n = cfg.init_weight_bits;
    let act = cfg.init_act_bits;
    let dense = |rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize| {
        let w = kaiming(rng, fan_in, fan_in * fan_out);
        let bits = BitLayer::from_weights(&w, fan_in, fan_out, n, ou_height, ou_width);
        Layer::Linear(Linear::dense(Weights::Bits(bits), vec![0.0; fan_out]))
    };
    let pact = || Layer::Pact(PactLayer::new(cfg.init_beta, act, true));
    match task {
        Task::Blobs => {
            let h = cfg.hidden;
            let l1 = dense(&mut rng, 2, h);
            let l2 = dense(&mut rng, h, h);
            let l3 = dense(&mut rng, h, task.classes());
            Model::new(vec![l1, pact(), l2, pact(), l3])
        }
        Task::Images => {
            let c_out = cfg.hidden;
            let fan_in = CONV_K * CONV_K;
            let w4 = Tensor::new(
                vec![c_out, 1, CONV_K, CONV_K],
                kaiming(&mut rng, fan_in, c_out * fan_in),
            )
            .expect("conv weight shape");
            let mat = reshape_conv(&w4).expect("4D conv weights");
            let bits = BitLayer::from_weights(mat.data(), fan_in, c_out, n, ou_height, ou_width);
            let conv = Layer::Linear(Linear::conv(
                Weights::Bits(bits),
                vec![0.0; c_out],
                1,
                CONV_K,
                IMAGE_SIDE,
                IMAGE_SIDE,
            ));
            let side = IMAGE_SIDE - CONV_K + 1;
            let fc = dense(&mut rng, c_out * side * side, task.classes());
            Model::new(vec![conv, pact(), fc])
        }
    }
}

fn kaiming(rng: &mut ChaCha8Rng, fan_in: usize, count: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..count)
        .map(|_| rng.random_range(-bound..bound))
        .collect()
}

/// Composite objective `CE + α Σ_r coeff_r · B_GL(Wʳ)` on one batch and its
/// gradient w.r.t. every parameter. Returns `(total, ce, grads)`.
pub fn loss_and_gradients(
    model: &mut Model,
    inputs: &Tensor,
    labels: &[usize],
    alpha: f64,
) -> Result<(f64, f64, GradientSet)> {
    let logits = model.forward(inputs)?;
    let (ce, dlogits) = cross_entropy(&logits, labels)?;
    let mut grads = model.backward(&dlogits)?;
    let layers = model.bit_layers();
    let reg = regularizer(&layers, alpha);
    if alpha != 0.0 {
        let coeffs = regularizer_coefficients(&layers);
        let lasso: Vec<Vec<Vec<f64>>> = layers.iter().map(|l| l.group_lasso_grad()).collect();
        for (pos, li, bit) in model.plane_param_positions() {
            let scale = alpha * coeffs[li];
            for (g, r) in grads.grads[pos].iter_mut().zip(&lasso[li][bit as usize]) {
                *g += scale * r;
            }
        }
    }
    Ok((ce + reg, ce, grads))
}

/// Top-1 accuracy on `data`.
pub fn evaluate(model: &mut Model, data: &Dataset) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut correct = 0usize;
    for chunk in idx.chunks(256) {
        let (x, y) = data.batch(chunk);
        let logits = model.forward(&x)?;
        correct += argmax_rows(&logits)
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count();
    }
    Ok(correct as f64 / data.len().max(1) as f64)
}

/// How a run treats the bit planes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RunMode {
    /// Continuous planes throughout, no re-quantization: the float
    /// reference.
    Float,
    /// Float training, then one final re-quantization with every block kept
    /// at full precision.
    FullPrecision,
    /// Scheduled re-quantization and precision adjustment, plus a final one.
    Blockwise,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub model: Model,
    pub alpha: f64,
    pub act_bits: Option<u32>,
    pub requant_interval: usize,
    pub accuracy: f64,
    pub compression: CompressionRatio,
    pub retained_bits: u64,
    /// Retained bit count after every precision adjustment, in order.
    pub retained_history: Vec<u64>,
    pub final_loss: f64,
}

impl RunResult {
    pub fn row(&self) -> SweepRow {
        SweepRow {
            alpha: self.alpha,
            interval: self.requant_interval,
            act_bits: self.act_bits.unwrap_or(32),
            accuracy: self.accuracy,
            weight_ratio: self.compression.weight,
            act_ratio: self.compression.act,
            retained_bits: self.retained_bits,
        }
    }
}

fn requantize_all(model: &mut Model, adjust: bool) {
    for layer in model.bit_layers_mut() {
        layer.requantize();
        if adjust {
            layer.adjust_precision();
        }
    }
}

fn retained(model: &Model) -> u64 {
    model.bit_layers().iter().map(|l| l.retained_bits()).sum()
}

/// Train from `exp.init` for `total_epochs` with regularization `alpha`.
///
/// `act_bits = None` trains with clipped but unquantized activations.
pub fn train_run(
    exp: &Experiment,
    config: &TrainConfig,
    alpha: f64,
    act_bits: Option<u32>,
    mode: RunMode,
) -> Result<RunResult> {
    let mut model = exp.init.clone();
    model.set_activation_bits(act_bits);
    let mut state = OptimState::new(
        config.learning_rate,
        config.momentum,
        config.weight_decay,
        config.total_epochs,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..exp.train.len()).collect();
    let mut history = Vec::new();
    let mut last_loss = f64::NAN;

    for epoch in 1..=config.total_epochs {
        state.epoch = epoch - 1;
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = exp.train.batch(chunk);
            let (loss, _, grads) = loss_and_gradients(&mut model, &x, &y, alpha)?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, loss });
            }
            last_loss = loss;
            let mut params = model.params_mut();
            sgd_step(&mut params, &grads.grads, &mut state);
            drop(params);
            model.project();
        }
        if mode == RunMode::Blockwise && config.requant_epochs.contains(&epoch) {
            requantize_all(&mut model, true);
            zero_masked_velocity(&mut model, &mut state);
            history.push(retained(&model));
        }
    }
    match mode {
        RunMode::Float => {}
        RunMode::FullPrecision => requantize_all(&mut model, false),
        RunMode::Blockwise => {
            requantize_all(&mut model, true);
            history.push(retained(&model));
        }
    }
    let accuracy = evaluate(&mut model, &exp.test)?;
    let compression = compression_ratio(model.bit_layers(), act_bits.unwrap_or(32));
    Ok(RunResult {
        retained_bits: retained(&model),
        model,
        alpha,
        act_bits,
        requant_interval: if mode == RunMode::Blockwise {
            config.requant_interval()
        } else {
            0
        },
        accuracy,
        compression,
        retained_history: history,
        final_loss: last_loss,
    })
}

fn zero_masked_velocity(model: &mut Model, state: &mut OptimState) {
    if state.velocity.is_empty() {
        return;
    }
    let positions = model.plane_param_positions();
    for (li, layer) in model.bit_layers().into_iter().enumerate() {
        let slots: Vec<usize> = positions
            .iter()
            .filter(|p| p.1 == li)
            .map(|p| p.0)
            .collect();
        let mut planes: Vec<Vec<f64>> = slots
            .iter()
            .map(|&pos| std::mem::take(&mut state.velocity[pos]))
            .collect();
        layer.zero_masked(&mut planes);
        for (&pos, plane) in slots.iter().zip(planes) {
            state.velocity[pos] = plane;
        }
    }
}

/// The α = 0 float reference: no activation quantization, no
/// re-quantization.
pub fn float_baseline(exp: &Experiment) -> Result<RunResult> {
    train_run(exp, &exp.config, 0.0, None, RunMode::Float)
}

/// The α values a sweep walks through.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaSchedule {
    /// `Δα, 2Δα, …` up to the ceiling.
    Linear { delta: f64, ceiling: f64 },
    /// Explicit values, in order.
    List(Vec<f64>),
}

impl AlphaSchedule {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        AlphaSchedule::Linear {
            delta: cfg.delta_alpha,
            ceiling: cfg.alpha_ceiling,
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            AlphaSchedule::Linear { delta, ceiling } => {
                let steps = (ceiling / delta + 1e-9).floor() as usize;
                (1..=steps).map(|k| k as f64 * delta).collect()
            }
            AlphaSchedule::List(v) => v.clone(),
        }
    }
}

/// Result of a budget-bounded search (α sweep or activation descent).
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub chosen: RunResult,
    /// The very first candidate already broke the budget.
    pub out_of_budget: bool,
    /// Every run performed, in order.
    pub rows: Vec<SweepRow>,
}

fn accuracy_loss(baseline: f64, acc: f64) -> f64 {
    baseline - acc
}

/// Raise α until the accuracy loss exceeds the budget and return the last
/// run within budget. Every step restarts from the initial weights.
///
/// An α of exactly zero trains in [`RunMode::FullPrecision`].
pub fn alpha_sweep(
    exp: &Experiment,
    baseline_accuracy: f64,
    schedule: &AlphaSchedule,
) -> Result<SearchOutcome> {
    let cfg = &exp.config;
    let act = Some(cfg.init_act_bits);
    let mut rows = Vec::new();
    let mut best: Option<RunResult> = None;
    for alpha in schedule.values() {
        let mode = if alpha == 0.0 {
            RunMode::FullPrecision
        } else {
            RunMode::Blockwise
        };
        let run = train_run(exp, cfg, alpha, act, mode)?;
        rows.push(run.row());
        log::info!(
            "alpha {alpha:.3e}: accuracy {:.4}, weight ratio {:.2}",
            run.accuracy,
            run.compression.weight
        );
        if accuracy_loss(baseline_accuracy, run.accuracy) > cfg.accuracy_budget {
            return Ok(match best {
                Some(chosen) => SearchOutcome {
                    chosen,
                    out_of_budget: false,
                    rows,
                },
                None => SearchOutcome {
                    chosen: run,
                    out_of_budget: true,
                    rows,
                },
            });
        }
        best = Some(run);
    }
    let chosen = best.ok_or_else(|| Error::Config("alpha schedule is empty".into()))?;
    Ok(SearchOutcome {
        chosen,
        out_of_budget: false,
        rows,
    })
}

/// Lower the activation precision one bit at a time at fixed α, keeping the
/// last precision whose accuracy loss stays within budget.
pub fn act_precision_descent(
    exp: &Experiment,
    baseline_accuracy: f64,
    start: RunResult,
) -> Result<SearchOutcome> {
    let cfg = &exp.config;
    let alpha = start.alpha;
    let mode = if alpha == 0.0 {
        RunMode::FullPrecision
    } else {
        RunMode::Blockwise
    };
    let mut bits = start.act_bits.unwrap_or(cfg.init_act_bits);
    let mut best = start;
    let mut rows = Vec::new();
    while bits > 1 {
        bits -= 1;
        let run = train_run(exp, cfg, alpha, Some(bits), mode)?;
        rows.push(run.row());
        log::info!("act bits {bits}: accuracy {:.4}", run.accuracy);
        if accuracy_loss(baseline_accuracy, run.accuracy) > cfg.accuracy_budget {
            break;
        }
        best = run;
    }
    Ok(SearchOutcome {
        chosen: best,
        out_of_budget: false,
        rows,
    })
}

/// Full-factorial grid over α and re-quantization interval at the initial
/// activation precision. Cells run in parallel; output order is
/// interval-major, then α, independent of scheduling.
pub fn ablation_sweep(
    exp: &Experiment,
    alphas: &[f64],
    intervals: &[usize],
) -> Result<Vec<SweepRow>> {
    let cells: Vec<(usize, f64)> = intervals
        .iter()
        .flat_map(|&i| alphas.iter().map(move |&a| (i, a)))
        .collect();
    cells
        .par_iter()
        .map(|&(interval, alpha)| {
            let cfg = exp.config.with_interval(interval);
            train_run(
                exp,
                &cfg,
                alpha,
                Some(cfg.init_act_bits),
                RunMode::Blockwise,
            )
            .map(|r| r.row())
        })
        .collect()
}

/// One line of sweep output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub alpha: f64,
    pub interval: usize,
    pub act_bits: u32,
    pub accuracy: f64,
    pub weight_ratio: f64,
    pub act_ratio: f64,
    pub retained_bits: u64,
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

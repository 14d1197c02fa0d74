//! Per-pair SGD through the unrolled solver.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{loss_and_grad, LossConfig, LossKind};
use crate::metrics;
use crate::model::{forward, forward_with, ModelConfig, PreparedPair};
use crate::ops::{Eval, Mat, MatrixOps};
use crate::projections::hungarian;
use crate::qap::FwTrainConfig;
use crate::refinement::{ParamVars, ParameterSet, DEFAULT_LAYERS};
use crate::tape::Tape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    ReverseMode,
    FiniteDifference,
}

/// Central-difference step of the finite-difference oracle.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub m1: usize,
    pub m2: usize,
    pub loss: LossKind,
    pub loss_cfg: LossConfig,
    pub seed: u64,
    pub gradient_mode: GradientMode,
    /// GCN depth used when parameters are freshly initialized.
    pub layers: usize,
    pub temperature: f64,
    pub kernel_eps: f64,
    /// Rescales a step whose gradient norm exceeds this bound; `None` is
    /// plain SGD. The false-matching loss grows like `e^{α S₊}`, so a poor
    /// early assignment produces gradients large enough to wreck the
    /// parameters in one unclipped step.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let fw = FwTrainConfig::default();
        Self {
            epochs: 30,
            learning_rate: 1e-3,
            m1: fw.outer,
            m2: fw.inner,
            loss: LossKind::FalseMatching,
            loss_cfg: LossConfig::default(),
            seed: 0,
            gradient_mode: GradientMode::ReverseMode,
            layers: DEFAULT_LAYERS,
            temperature: fw.temperature,
            kernel_eps: ModelConfig::default().kernel_eps,
            grad_clip: Some(10.0),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::invalid("temperature must be positive"));
        }
        if !(self.kernel_eps >= 0.0 && self.kernel_eps.is_finite()) {
            return Err(Error::invalid("kernel_eps must be non-negative"));
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid("grad_clip must be positive"));
            }
        }
        self.loss_cfg.validate()
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            fw: FwTrainConfig {
                outer: self.m1,
                inner: self.m2,
                temperature: self.temperature,
                ..FwTrainConfig::default()
            },
            kernel_eps: self.kernel_eps,
        }
    }
}

/// Loss at the current parameters and its gradient with respect to them.
pub fn grad_params(
    pair: &PreparedPair,
    params: &ParameterSet,
    model: &ModelConfig,
    kind: LossKind,
    loss_cfg: &LossConfig,
    mode: GradientMode,
) -> Result<(f64, ParameterSet)> {
    let (loss, grads, _) = loss_grad_output(pair, params, model, kind, loss_cfg, mode)?;
    Ok((loss, grads))
}

/// As [`grad_params`], also returning the forward output.
fn loss_grad_output(
    pair: &PreparedPair,
    params: &ParameterSet,
    model: &ModelConfig,
    kind: LossKind,
    loss_cfg: &LossConfig,
    mode: GradientMode,
) -> Result<(f64, ParameterSet, Mat)> {
    let (loss, grads, x) = match mode {
        GradientMode::ReverseMode => reverse_mode(pair, params, model, kind, loss_cfg)?,
        GradientMode::FiniteDifference => finite_difference(pair, params, model, kind, loss_cfg)?,
    };
    if !grads.is_finite() {
        return Err(Error::numerical(
            "gradient",
            "parameter gradient is not finite",
        ));
    }
    Ok((loss, grads, x))
}

fn checked_loss(kind: LossKind, x: &Mat, target: &Mat, cfg: &LossConfig) -> Result<(f64, Mat)> {
    let (loss, grad) = loss_and_grad(kind, x, target, cfg)?;
    if !loss.is_finite() {
        return Err(Error::numerical("loss", format!("loss value {loss}")));
    }
    Ok((loss, grad))
}

fn reverse_mode(
    pair: &PreparedPair,
    params: &ParameterSet,
    model: &ModelConfig,
    kind: LossKind,
    loss_cfg: &LossConfig,
) -> Result<(f64, ParameterSet, Mat)> {
    let mut tape = Tape::new();
    let vars = ParamVars::register(&mut tape, params);
    let (x, _) = forward_with(&mut tape, pair, &vars, model)?;
    let x_value = tape.value(&x).clone();
    let (loss, seed) = checked_loss(kind, &x_value, &pair.target, loss_cfg)?;
    let adjoints = tape.backward(x, seed);
    let mut grads = params.clone();
    for (slot, var) in grads.tensors_mut().into_iter().zip(vars.in_order()) {
        *slot = adjoints.get_or_zeros(var, slot.shape());
    }
    Ok((loss, grads, x_value))
}

fn output_at(pair: &PreparedPair, params: &ParameterSet, model: &ModelConfig) -> Result<Mat> {
    let mut ops = Eval;
    let vars = ParamVars::register(&mut ops, params);
    Ok(forward_with(&mut ops, pair, &vars, model)?.0)
}

fn finite_difference(
    pair: &PreparedPair,
    params: &ParameterSet,
    model: &ModelConfig,
    kind: LossKind,
    loss_cfg: &LossConfig,
) -> Result<(f64, ParameterSet, Mat)> {
    let x = output_at(pair, params, model)?;
    let loss = checked_loss(kind, &x, &pair.target, loss_cfg)?.0;
    let loss_at = |p: &ParameterSet| -> Result<f64> {
        let x = output_at(pair, p, model)?;
        Ok(loss_and_grad(kind, &x, &pair.target, loss_cfg)?.0)
    };
    let mut grads = params.clone();
    let mut probe = params.clone();
    let count = grads.tensors_mut().len();
    for t in 0..count {
        let len = grads.tensors_mut()[t].len();
        for k in 0..len {
            let orig = probe.tensors_mut()[t][k];
            probe.tensors_mut()[t][k] = orig + FD_STEP;
            let up = loss_at(&probe)?;
            probe.tensors_mut()[t][k] = orig - FD_STEP;
            let down = loss_at(&probe)?;
            probe.tensors_mut()[t][k] = orig;
            grads.tensors_mut()[t][k] = (up - down) / (2.0 * FD_STEP);
        }
    }
    Ok((loss, grads, x))
}

/// `params − lr · grads`.
pub fn sgd_step(params: &ParameterSet, grads: &ParameterSet, lr: f64) -> Result<ParameterSet> {
    if !params.same_shape(grads) {
        return Err(Error::invalid(
            "gradient shapes differ from parameter shapes",
        ));
    }
    let mut next = params.clone();
    let mut g = grads.clone();
    for (p, g) in next.tensors_mut().into_iter().zip(g.tensors_mut()) {
        if p.shape() != g.shape() {
            return Err(Error::invalid(
                "gradient shapes differ from parameter shapes",
            ));
        }
        *p -= &*g * lr;
    }
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub train_acc: f64,
    pub param_norm: f64,
}

/// Where and why a run stopped early.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainFailure {
    pub epoch: usize,
    pub step: usize,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub params: ParameterSet,
    /// One record per completed epoch.
    pub history: Vec<EpochRecord>,
    pub failure: Option<TrainFailure>,
}

impl TrainRun {
    /// Writes `epoch,mean_loss,train_acc,param_norm` rows.
    pub fn write_history_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        w.write_record(["epoch", "mean_loss", "train_acc", "param_norm"])?;
        for rec in &self.history {
            w.serialize(rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Epochs of per-pair updates over a seeded shuffle of `data`.
///
/// Numerical failures stop the run and are returned in
/// [`TrainRun::failure`] together with the history so far; the parameters are
/// the last finite ones.
pub fn train(data: &[PreparedPair], init: ParameterSet, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    init.validate()?;
    let model = cfg.model();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut params = init;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut acc_sum) = (0.0, 0.0);
        for (step, &i) in order.iter().enumerate() {
            let pair = &data[i];
            let outcome = train_step(pair, &params, &model, cfg);
            match outcome {
                Ok((loss, acc, next)) => {
                    loss_sum += loss;
                    acc_sum += acc;
                    params = next;
                }
                Err(e) if e.is_numerical() => {
                    return Ok(TrainRun {
                        params,
                        history,
                        failure: Some(TrainFailure {
                            epoch,
                            step,
                            message: e.to_string(),
                        }),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let n = data.len() as f64;
        history.push(EpochRecord {
            epoch,
            mean_loss: loss_sum / n,
            train_acc: acc_sum / n,
            param_norm: params.norm(),
        });
    }
    Ok(TrainRun {
        params,
        history,
        failure: None,
    })
}

fn train_step(
    pair: &PreparedPair,
    params: &ParameterSet,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(f64, f64, ParameterSet)> {
    let (loss, grads, x) = loss_grad_output(
        pair,
        params,
        model,
        cfg.loss,
        &cfg.loss_cfg,
        cfg.gradient_mode,
    )?;
    // Rounded accuracy of the pre-update forward pass.
    let acc = metrics::accuracy(&hungarian(&x)?, &pair.gt)?;
    let lr = clipped_rate(cfg.learning_rate, grads.norm(), cfg.grad_clip);
    let next = sgd_step(params, &grads, lr)?;
    if !next.is_finite() {
        return Err(Error::numerical("update", "parameters became non-finite"));
    }
    Ok((loss, acc, next))
}

/// Step size that caps the update length at `lr * clip`.
pub fn clipped_rate(lr: f64, grad_norm: f64, clip: Option<f64>) -> f64 {
    match clip {
        Some(c) if grad_norm > c => lr * c / grad_norm,
        _ => lr,
    }
}

/// Mean rounded training-mode accuracy over `data`.
pub fn mean_accuracy(
    data: &[PreparedPair],
    params: &ParameterSet,
    model: &ModelConfig,
) -> Result<f64> {
    let mut total = 0.0;
    for pair in data {
        let (x, _) = forward(pair, params, model)?;
        total += metrics::accuracy(&hungarian(&x)?, &pair.gt)?;
    }
    Ok(total / data.len().max(1) as f64)
}

/// Norm-wise relative error `‖a − b‖ / max(‖a‖, ‖b‖)` over all tensors.
pub fn relative_error(a: &ParameterSet, b: &ParameterSet) -> f64 {
    let mut diff = 0.0;
    for ((_, x), (_, y)) in a.tensors().into_iter().zip(b.tensors()) {
        diff += (x - y).norm_squared();
    }
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        diff.sqrt() / scale
    }
}

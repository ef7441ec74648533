//! Losses, Adam, the learning-rate schedule, the training loop and evaluation.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{Graph, Ops, Parameter, Tensor};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::field::{Field, OperatorKind};
use crate::model::{write_checkpoint, BlockKind, BlockState, EStableNet};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub halve_every: usize,
    pub restart_every: usize,
    /// Weight of the `G` residual penalty; 0 disables it.
    pub beta: f64,
    pub seed: u64,
    /// Evaluate on the test split every this many epochs (and always on the
    /// last one).
    pub eval_every: usize,
    /// Minibatches are split into this many chunks evaluated in parallel.
    /// Results depend on the value, so it is part of the configuration.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            weight_decay: 0.0,
            batch_size: 16,
            epochs: 1,
            halve_every: 50,
            restart_every: 200,
            beta: 0.0,
            seed: 0,
            eval_every: 1,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::TrainConfig(m.into()));
        if !(self.lr0 > 0.0) || !self.lr0.is_finite() {
            return bad("lr0 must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.halve_every == 0 || self.restart_every == 0 {
            return bad("halve_every and restart_every must be positive");
        }
        if self.halve_every > self.restart_every {
            return bad("halve_every must not exceed restart_every");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be positive");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        Ok(())
    }
}

/// `lr0 * 2^-floor((epoch mod restart_every) / halve_every)`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = (epoch % cfg.restart_every) / cfg.halve_every;
    cfg.lr0 * 0.5f64.powi(halvings as i32)
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &[Parameter]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One Adam step on the accumulated gradients, with coupled L2 weight decay
/// (`grad += weight_decay * param`). Parameters are left untouched if any
/// gradient is non-finite.
pub fn adam_step(params: &mut [Parameter], state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    if let Some(p) = params.iter().find(|p| p.grad.data().iter().any(|g| !g.is_finite())) {
        return Err(Error::NonFiniteGradient(p.name.clone()));
    }
    state.t += 1;
    let bc1 = 1.0 - ADAM_BETA1.powi(state.t as i32);
    let bc2 = 1.0 - ADAM_BETA2.powi(state.t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let grad = p.grad.data();
        let value = p.value.data_mut();
        for j in 0..value.len() {
            let g = grad[j] + weight_decay * value[j];
            m[j] = ADAM_BETA1 * m[j] + (1.0 - ADAM_BETA1) * g;
            v[j] = ADAM_BETA2 * v[j] + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            value[j] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

/// Mean over batch and grid points of `(pred - truth)^2`.
pub fn mse_loss<O: Ops>(ops: &mut O, pred: &O::V, truth: &O::V) -> Result<O::V> {
    let d = ops.sub(pred, truth)?;
    Ok(ops.mean_sq(&d))
}

/// `beta * sum_n mean |P phi^n - G(H^n U^{n+1})|^2` with `H^n = 1/g^n` and `P`
/// the projection onto the range of `G` (identity for `G = I`). Zero up to
/// rounding whenever the blocks use the exact `G^{-1}`. Returns `None` when
/// `beta` is zero or the network has no `g` field.
pub fn g_residual_penalty<O: Ops>(
    ops: &mut O,
    trace: &[BlockState<O::V>],
    net_outputs: &[O::V],
    beta: f64,
    g_inverse_kind: OperatorKind,
) -> Result<Option<O::V>> {
    if beta == 0.0 || net_outputs.is_empty() || trace.len() != net_outputs.len() + 1 {
        return Ok(None);
    }
    let mut total: Option<O::V> = None;
    for (n, g) in net_outputs.iter().enumerate() {
        let Some(u_next) = trace[n + 1].u.as_ref() else {
            return Ok(None);
        };
        let h = ops.recip(g);
        let hu = ops.mul(&h, u_next)?;
        let g_hu = ops.g_apply(&hu, g_inverse_kind)?;
        let phi = &trace[n].phi;
        let projected = match g_inverse_kind {
            OperatorKind::Identity => phi.clone(),
            kind => {
                let inv = ops.g_inverse(phi, kind)?;
                ops.g_apply(&inv, kind)?
            }
        };
        let term = mse_loss(ops, &projected, &g_hu)?;
        total = Some(match total {
            None => term,
            Some(t) => ops.add(&t, &term)?,
        });
    }
    Ok(total.map(|t| ops.scale(&t, beta)))
}

/// Stacks `phi0` and `phi_t` of the given samples.
fn stack(samples: &[&Sample]) -> Result<(Vec<Field>, Tensor)> {
    let phi0: Vec<Field> = samples.iter().map(|s| s.phi0.clone()).collect();
    let truth = Tensor::from_fields(samples.iter().map(|s| &s.phi_t))?;
    Ok((phi0, truth))
}

/// Forward and backward on one chunk. Returns the chunk's MSE and the
/// gradients of `weight * (mse + penalty)`.
fn chunk_gradients(net: &EStableNet, samples: &[&Sample], beta: f64, weight: f64) -> Result<(f64, Vec<Tensor>)> {
    let (phi0, truth) = stack(samples)?;
    let mut g = Graph::new();
    let vars = net.bind(&mut g);
    let x = g.constant(Tensor::from_fields(&phi0)?);
    let u0 = net.initial_aux(&phi0)?.map(|u| g.constant(u));
    let (trace, outputs) = net.forward_with_outputs(&mut g, &vars, x, u0)?;
    let t = g.constant(truth);
    let mse = mse_loss(&mut g, &trace.last().unwrap().phi, &t)?;
    let mse_value = g.value(&mse).item();
    let mut loss = mse;
    if net.config.kind == BlockKind::EStable {
        if let Some(p) = g_residual_penalty(&mut g, &trace, &outputs, beta, net.config.g_inverse)? {
            loss = g.add(&loss, &p)?;
        }
    }
    if weight != 1.0 {
        loss = g.scale(&loss, weight);
    }
    let mut params: Vec<Parameter> = net
        .params
        .iter()
        .map(|p| Parameter::new(p.name.clone(), p.value.clone()))
        .collect();
    g.backward(loss, &mut params)?;
    Ok((mse_value, params.into_iter().map(|p| p.grad).collect()))
}

/// Accumulates the minibatch gradient into `net`'s parameter gradients and
/// returns the minibatch MSE. The batch is split into `workers` contiguous
/// chunks; partial results are summed in chunk order.
pub fn accumulate_batch_gradient(net: &mut EStableNet, batch: &[&Sample], beta: f64, workers: usize) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::TrainConfig("empty minibatch".into()));
    }
    let chunks = workers.clamp(1, batch.len());
    let per = batch.len().div_ceil(chunks);
    let parts: Vec<&[&Sample]> = batch.chunks(per).collect();
    let total = batch.len() as f64;
    let eval = |part: &&[&Sample]| {
        let weight = if parts.len() == 1 { 1.0 } else { part.len() as f64 / total };
        chunk_gradients(net, part, beta, weight).map(|(mse, grads)| (mse * part.len() as f64, grads))
    };
    let results: Vec<Result<(f64, Vec<Tensor>)>> = if parts.len() == 1 {
        parts.iter().map(eval).collect()
    } else {
        parts.par_iter().map(eval).collect()
    };
    let mut sse = 0.0;
    for r in results {
        let (s, grads) = r?;
        sse += s;
        for (p, gr) in net.params.iter_mut().zip(grads) {
            p.grad.data_mut().iter_mut().zip(gr.data()).for_each(|(a, b)| *a += b);
        }
    }
    Ok(sse / total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalMetrics {
    pub mse: f64,
    pub rel_l2: f64,
    /// Samples left out of `rel_l2` because their truth has zero norm.
    pub skipped: usize,
}

/// Test metrics: MSE over all samples and grid points, and the per-sample
/// relative L2 error averaged over the samples.
pub fn evaluate(net: &EStableNet, samples: &[Sample], batch_size: usize) -> Result<EvalMetrics> {
    if samples.is_empty() {
        return Err(Error::TrainConfig("cannot evaluate on an empty set".into()));
    }
    let mut sse = 0.0;
    let mut points = 0usize;
    let mut rel_sum = 0.0;
    let mut rel_count = 0usize;
    for chunk in samples.chunks(batch_size.max(1)) {
        let phi0: Vec<Field> = chunk.iter().map(|s| s.phi0.clone()).collect();
        let pred = net.predict(&phi0)?;
        for (p, s) in pred.iter().zip(chunk) {
            let diff = p.sub(&s.phi_t)?;
            sse += diff.values().iter().map(|v| v * v).sum::<f64>();
            points += diff.values().len();
            let truth_norm = s.phi_t.norm();
            if truth_norm > 0.0 {
                rel_sum += diff.norm() / truth_norm;
                rel_count += 1;
            }
        }
    }
    Ok(EvalMetrics {
        mse: sse / points as f64,
        rel_l2: if rel_count > 0 { rel_sum / rel_count as f64 } else { f64::NAN },
        skipped: samples.len() - rel_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub train_mse: f64,
    pub test: Option<EvalMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub log: Vec<EpochMetrics>,
    pub best_epoch: Option<usize>,
    pub best_test_mse: f64,
    pub best_test_rel_l2: f64,
}

/// Where training writes its artifacts. Both are optional.
#[derive(Debug, Clone, Default)]
pub struct TrainOutputs {
    /// Best-by-test checkpoint, rewritten on every improvement.
    pub checkpoint: Option<PathBuf>,
    /// CSV metric log, one row per epoch.
    pub metrics: Option<PathBuf>,
}

/// Minibatch Adam training. On return `net` holds the best-by-test
/// parameters (the final ones if no test set is given). A non-finite loss
/// aborts with [`Error::NonFiniteLoss`] after restoring the best parameters;
/// the checkpoint on disk is left as it was.
pub fn train(
    net: &mut EStableNet,
    train_set: &[Sample],
    test_set: &[Sample],
    cfg: &TrainConfig,
    outputs: &TrainOutputs,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::TrainConfig("training set is empty".into()));
    }
    net.check_grid(Some(train_set[0].phi0.grid()))?;

    let mut log_file = match &outputs.metrics {
        Some(path) => {
            let f = File::create(path).map_err(|e| Error::io(path, e))?;
            let mut w = BufWriter::new(f);
            writeln!(w, "epoch,lr,train_mse,test_mse,test_rel_l2").map_err(|e| Error::io(path, e))?;
            Some((w, path.as_path()))
        }
        None => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut adam = AdamState::new(&net.params);
    let mut best: Option<(usize, EvalMetrics, Vec<Tensor>)> = None;
    let mut report = TrainReport {
        log: Vec::with_capacity(cfg.epochs),
        best_epoch: None,
        best_test_mse: f64::INFINITY,
        best_test_rel_l2: f64::NAN,
    };

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let mut sse = 0.0;
        for batch_idx in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = batch_idx.iter().map(|&i| &train_set[i]).collect();
            net.zero_grad();
            let step = accumulate_batch_gradient(net, &batch, cfg.beta, cfg.workers).and_then(|mse| {
                if !mse.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch });
                }
                adam_step(&mut net.params, &mut adam, lr, cfg.weight_decay)?;
                Ok(mse)
            });
            match step {
                Ok(mse) => sse += mse * batch.len() as f64,
                Err(e) => {
                    if let Some((_, _, params)) = &best {
                        restore(net, params);
                    }
                    return Err(e);
                }
            }
        }
        let train_mse = sse / train_set.len() as f64;

        let last = epoch + 1 == cfg.epochs;
        let test = if !test_set.is_empty() && (epoch % cfg.eval_every == 0 || last) {
            Some(evaluate(net, test_set, cfg.batch_size.max(32))?)
        } else {
            None
        };
        if let Some(m) = test {
            if m.mse < report.best_test_mse {
                report.best_test_mse = m.mse;
                report.best_test_rel_l2 = m.rel_l2;
                report.best_epoch = Some(epoch);
                best = Some((epoch, m, net.params.iter().map(|p| p.value.clone()).collect()));
                if let Some(path) = &outputs.checkpoint {
                    write_checkpoint(net, path)?;
                }
            }
        }

        let metrics = EpochMetrics {
            epoch,
            lr,
            train_mse,
            test,
        };
        if let Some((w, path)) = log_file.as_mut() {
            write_log_row(w, &metrics).map_err(|e| Error::io(*path, e))?;
        }
        on_epoch(&metrics);
        report.log.push(metrics);
    }

    if let Some((w, path)) = log_file.as_mut() {
        w.flush().map_err(|e| Error::io(*path, e))?;
    }
    match &best {
        Some((_, _, params)) => restore(net, params),
        None => {
            if let Some(path) = &outputs.checkpoint {
                write_checkpoint(net, path)?;
            }
        }
    }
    Ok(report)
}

fn restore(net: &mut EStableNet, values: &[Tensor]) {
    for (p, v) in net.params.iter_mut().zip(values) {
        p.value = v.clone();
    }
}

fn write_log_row(w: &mut impl Write, m: &EpochMetrics) -> std::io::Result<()> {
    match m.test {
        Some(t) => writeln!(w, "{},{:e},{:e},{:e},{:e}", m.epoch, m.lr, m.train_mse, t.mse, t.rel_l2),
        None => writeln!(w, "{},{:e},{:e},,", m.epoch, m.lr, m.train_mse),
    }
}

/// Reads a metric log written by [`train`].
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<EpochMetrics>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let bad = || Error::format(path, format!("line {}: malformed row", i + 1));
        if cols.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let test = if cols[3].is_empty() {
            None
        } else {
            Some(EvalMetrics {
                mse: num(cols[3])?,
                rel_l2: num(cols[4])?,
                skipped: 0,
            })
        };
        out.push(EpochMetrics {
            epoch: cols[0].parse().map_err(|_| bad())?,
            lr: num(cols[1])?,
            train_mse: num(cols[2])?,
            test,
        });
    }
    Ok(out)
}

//! Losses, optimizers and the mini-batch training loop.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, PROB_FLOOR};
use crate::error::{Error, Result};
use crate::graph::{Graph, GraphDataset};
use crate::model::{build_contexts, forward, GraphContext, LpStages, Model, ModelConfig, ModelParams, StageKind};

/// `−(1/c) Σ p_i log max(q_i, 1e-12)`.
pub fn cross_entropy_loss(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() || p.is_empty() {
        return Err(Error::contract(format!(
            "cross entropy needs equal nonempty lengths, got {} and {}",
            p.len(),
            q.len()
        )));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > 1e-6 || q.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::contract(format!("probabilities must be nonnegative and sum to 1, sum is {total}")));
    }
    let c = p.len() as f64;
    Ok(-p.iter().zip(q).map(|(pi, qi)| pi * qi.max(PROB_FLOOR).ln()).sum::<f64>() / c)
}

/// Layout of an assignment matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    /// `n × m`, columns are clusters.
    NodesByClusters,
    /// `m × n`, rows are clusters.
    ClustersByNodes,
}

/// `‖A − S Sᵀ‖_F` with `S` taken as `n × m`.
pub fn link_prediction_loss(a: &DMatrix<f64>, s: &DMatrix<f64>, orientation: Orientation) -> Result<f64> {
    let s = match orientation {
        Orientation::NodesByClusters => s.clone(),
        Orientation::ClustersByNodes => s.transpose(),
    };
    if a.nrows() != a.ncols() || s.nrows() != a.nrows() {
        return Err(Error::contract(format!(
            "link prediction shapes: A {:?}, S (as n×m) {:?}",
            a.shape(),
            s.shape()
        )));
    }
    Ok((a - &s * s.transpose()).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_epsilon: f64,
    pub l_p: f64,
    pub beta: f64,
    pub l_total: f64,
}

pub fn total_loss(l_epsilon: f64, l_p: f64, beta: f64) -> Result<LossBreakdown> {
    check_beta(beta)?;
    Ok(LossBreakdown {
        l_epsilon,
        l_p,
        beta,
        l_total: (1.0 - beta) * l_epsilon + beta * l_p,
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::Config(format!("beta must lie in [0, 1], got {beta}")))
    }
}

/// Loss, prediction and (optionally) parameter gradients for one graph.
#[derive(Debug, Clone)]
pub struct GraphEval {
    pub loss: LossBreakdown,
    pub predicted: usize,
    pub gradients: Option<Gradients>,
}

/// Forward pass plus loss; with `backward` set also the reverse sweep.
///
/// With `beta == 0` the link-prediction term is evaluated for reporting
/// only and never enters the tape.
pub fn graph_loss(
    config: &ModelConfig,
    params: &ModelParams,
    graph: &Graph,
    ctx: &GraphContext,
    beta: f64,
    backward: bool,
) -> Result<GraphEval> {
    check_beta(beta)?;
    let mut f = forward(config, params, graph, ctx)?;
    let predicted = f.predicted();
    let ce = f.tape.softmax_cross_entropy(f.logits, graph.label())?;
    let l_epsilon = f.tape.scalar(ce);
    let pooled: Vec<_> = f
        .stages
        .iter()
        .enumerate()
        .filter(|(k, st)| st.kind == StageKind::Pool && (config.lp_stages == LpStages::All || *k == 0))
        .map(|(_, st)| *st)
        .collect();

    let (l_p, root) = if beta == 0.0 {
        let mut total = 0.0;
        for st in &pooled {
            let s = f.tape.value(st.assignment.expect("pooling stage has an assignment"));
            total += link_prediction_loss(f.tape.value(st.adjacency_in), s, Orientation::ClustersByNodes)?;
        }
        let l_p = if pooled.is_empty() { 0.0 } else { total / pooled.len() as f64 };
        (l_p, ce)
    } else {
        let mut terms = Vec::with_capacity(pooled.len());
        for st in &pooled {
            let s = st.assignment.expect("pooling stage has an assignment");
            let s_t = f.tape.transpose(s);
            let sts = f.tape.matmul(s_t, s)?;
            let resid = f.tape.sub(st.adjacency_in, sts)?;
            terms.push(f.tape.frob_norm(resid));
        }
        let weighted_ce = f.tape.scale(ce, 1.0 - beta);
        if terms.is_empty() {
            (0.0, weighted_ce)
        } else {
            let sum = f.tape.sum(&terms)?;
            let lp = f.tape.scale(sum, 1.0 / terms.len() as f64);
            let weighted_lp = f.tape.scale(lp, beta);
            let root = f.tape.sum(&[weighted_ce, weighted_lp])?;
            (f.tape.scalar(lp), root)
        }
    };
    let loss = total_loss(l_epsilon, l_p, beta)?;
    let gradients = if backward { Some(f.tape.backward(root)?) } else { None };
    Ok(GraphEval {
        loss,
        predicted,
        gradients,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    #[default]
    AdaptiveMoments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub grad_clip_norm: Option<f64>,
    pub beta: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 16,
            grad_clip_norm: Some(5.0),
            beta: 0.1,
            seed: 0,
            optimizer: OptimizerKind::AdaptiveMoments,
            momentum: 0.9,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if let Some(c) = self.grad_clip_norm {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("grad_clip_norm must be positive, got {c}"));
            }
        }
        check_beta(self.beta)?;
        if !(0.0..1.0).contains(&self.momentum)
            || !(0.0..1.0).contains(&self.adam_beta1)
            || !(0.0..1.0).contains(&self.adam_beta2)
            || !(self.adam_eps > 0.0)
        {
            return bad("momentum and moment decay rates must lie in [0, 1), adam_eps > 0".into());
        }
        Ok(())
    }
}

/// Optimizer moments, one buffer pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    first: ModelParams,
    second: ModelParams,
    /// Top-left extent of every gradient seen so far, per tensor. `None`
    /// updates whole tensors.
    extents: Option<BTreeMap<String, (usize, usize)>>,
}

impl OptimizerState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            step: 0,
            first: params.zeros_like(),
            second: params.zeros_like(),
            extents: None,
        }
    }

    /// State that only updates the regions registered through [`Self::touch`].
    /// Entries outside them have zero gradient and zero moments, so their
    /// update is exactly zero and can be skipped.
    pub fn tracked(params: &ModelParams) -> Self {
        Self {
            extents: Some(BTreeMap::new()),
            ..Self::new(params)
        }
    }

    pub fn touch(&mut self, grads: &Gradients) {
        if let Some(ext) = &mut self.extents {
            for (name, block) in &grads.blocks {
                let e = ext.entry(name.clone()).or_insert((0, 0));
                e.0 = e.0.max(block.nrows());
                e.1 = e.1.max(block.ncols());
            }
        }
    }

    fn region(&self, name: &str, shape: (usize, usize)) -> (usize, usize) {
        match &self.extents {
            None => shape,
            Some(ext) => ext.get(name).copied().unwrap_or((0, 0)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub grad_norm: f64,
    /// Factor applied to the gradient by clipping (1 when not clipped).
    pub clip_scale: f64,
}

/// One update with optional global-norm clipping applied first.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    config: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<StepInfo> {
    let mut sq = 0.0;
    for (name, g) in grads.iter() {
        let g = g.view((0, 0), state.region(name, g.shape()));
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!(
                "gradient of `{name}` has non-finite entries (max |g| = {})",
                g.iter().fold(0.0f64, |m, v| m.max(v.abs()))
            )));
        }
        sq += g.norm_squared();
    }
    let grad_norm = sq.sqrt();
    let clip_scale = match config.grad_clip_norm {
        Some(c) if grad_norm > c => c / grad_norm,
        _ => 1.0,
    };
    state.step += 1;
    let lr = config.learning_rate;
    let t = state.step as i32;
    for (name, p) in params.iter_mut() {
        let g = grads.get(name)?;
        if g.shape() != p.shape() {
            return Err(Error::contract(format!(
                "gradient of `{name}` is {:?}, parameter is {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let region = state.region(name, p.shape());
        let g = g.view((0, 0), region);
        let mut p = p.view_mut((0, 0), region);
        let m = state.first.iter_mut().find(|(k, _)| *k == name).map(|(_, v)| v);
        let m = m.ok_or_else(|| Error::contract(format!("optimizer state lacks `{name}`")))?;
        match config.optimizer {
            OptimizerKind::SgdMomentum => {
                let mut m = m.view_mut((0, 0), region);
                for (pi, (mi, gi)) in p.iter_mut().zip(m.iter_mut().zip(g.iter())) {
                    *mi = config.momentum * *mi + clip_scale * gi;
                    *pi -= lr * *mi;
                }
            }
            OptimizerKind::AdaptiveMoments => {
                let v = state
                    .second
                    .iter_mut()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| v)
                    .ok_or_else(|| Error::contract(format!("optimizer state lacks `{name}`")))?;
                let mut m = m.view_mut((0, 0), region);
                let mut v = v.view_mut((0, 0), region);
                let (b1, b2) = (config.adam_beta1, config.adam_beta2);
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                for ((pi, gi), (mi, vi)) in p.iter_mut().zip(g.iter()).zip(m.iter_mut().zip(v.iter_mut())) {
                    let gc = clip_scale * gi;
                    *mi = b1 * *mi + (1.0 - b1) * gc;
                    *vi = b2 * *vi + (1.0 - b2) * gc * gc;
                    *pi -= lr * (*mi / c1) / ((*vi / c2).sqrt() + config.adam_eps);
                }
            }
        }
    }
    Ok(StepInfo { grad_norm, clip_scale })
}

/// Graphs with their precomputed contexts.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub graphs: Vec<Graph>,
    pub contexts: Vec<GraphContext>,
}

impl Prepared {
    pub fn new(config: &ModelConfig, graphs: Vec<Graph>) -> Result<Self> {
        let contexts = build_contexts(config, &graphs)?;
        Ok(Self { graphs, contexts })
    }

    pub fn from_dataset(config: &ModelConfig, dataset: &GraphDataset) -> Result<Self> {
        Self::new(config, dataset.graphs().to_vec())
    }

    pub fn len(&self) -> usize {
        self.graphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.graphs.is_empty()
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.graphs.len()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub accuracy: f64,
    pub loss: LossBreakdown,
}

fn mean_loss(losses: &[LossBreakdown], beta: f64) -> LossBreakdown {
    let k = losses.len().max(1) as f64;
    let mut out = LossBreakdown {
        l_epsilon: 0.0,
        l_p: 0.0,
        beta,
        l_total: 0.0,
    };
    for l in losses {
        out.l_epsilon += l.l_epsilon / k;
        out.l_p += l.l_p / k;
        out.l_total += l.l_total / k;
    }
    out
}

/// Accuracy and mean loss over `indices` without gradients.
pub fn evaluate(model: &Model, data: &Prepared, indices: &[usize], beta: f64) -> Result<EvalSummary> {
    let evals: Vec<GraphEval> = indices
        .par_iter()
        .map(|&i| graph_loss(&model.config, &model.params, &data.graphs[i], &data.contexts[i], beta, false))
        .collect::<Result<_>>()?;
    let correct = indices
        .iter()
        .zip(&evals)
        .filter(|(&i, e)| e.predicted == data.graphs[i].label())
        .count();
    let losses: Vec<_> = evals.iter().map(|e| e.loss).collect();
    Ok(EvalSummary {
        accuracy: if indices.is_empty() { 0.0 } else { correct as f64 / indices.len() as f64 },
        loss: mean_loss(&losses, beta),
    })
}

/// Predicted class for each index.
pub fn predict_all(model: &Model, data: &Prepared, indices: &[usize]) -> Result<Vec<usize>> {
    indices
        .par_iter()
        .map(|&i| Ok(model.forward(&data.graphs[i], &data.contexts[i])?.predicted()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_epsilon: f64,
    pub l_p: f64,
    pub l_total: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub initial_train_acc: f64,
    pub initial_val_acc: f64,
    /// 0 when the initial parameters were never beaten.
    pub best_epoch: usize,
    pub best_val_acc: f64,
    pub best_val_loss: f64,
    pub final_train_acc: f64,
    pub seconds: f64,
    pub epochs: Vec<EpochRecord>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    /// Parameters at the best validation epoch.
    pub best: Model,
    pub last: Model,
}

/// Sums per-graph gradient blocks into full-size buffers, scaled by `weight`.
fn accumulate(into: &mut ModelParams, grads: &Gradients, weight: f64) -> Result<()> {
    for (name, block) in &grads.blocks {
        let full = into
            .iter_mut()
            .find(|(k, _)| *k == name)
            .map(|(_, v)| v)
            .ok_or_else(|| Error::contract(format!("gradient for unknown parameter `{name}`")))?;
        let (r, c) = block.shape();
        let mut view = full.view_mut((0, 0), (r, c));
        view.zip_apply(block, |a, b| *a += weight * b);
    }
    Ok(())
}

/// Mini-batch training on `train_idx` with best-validation selection.
///
/// Batches are evaluated in parallel and reduced in index order, so results
/// do not depend on the thread count.
pub fn fit(model: Model, data: &Prepared, train_idx: &[usize], val_idx: &[usize], config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    model.config.validate()?;
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Split("training and validation sets must be nonempty".into()));
    }
    if let Some(&i) = train_idx.iter().chain(val_idx).find(|&&i| data.graphs[i].label() >= model.config.class_count) {
        return Err(Error::contract(format!(
            "graph `{}` has label {} but the model has {} classes",
            data.graphs[i].id(),
            data.graphs[i].label(),
            model.config.class_count
        )));
    }
    let start = Instant::now();
    let beta = config.beta;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = model;
    let mut state = OptimizerState::tracked(&model.params);
    let mut grads = model.params.zeros_like();
    let initial_train = evaluate(&model, data, train_idx, beta)?;
    let initial_val = evaluate(&model, data, val_idx, beta)?;
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_key = (initial_val.accuracy, -initial_val.loss.l_total);
    let mut records = Vec::with_capacity(config.epochs);
    let mut order = train_idx.to_vec();
    let mut warned: BTreeSet<String> = BTreeSet::new();
    let mut last_finite: Option<usize> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut losses = Vec::with_capacity(order.len());
        let mut correct = 0usize;
        for batch in order.chunks(config.batch_size) {
            let evals: Vec<GraphEval> = batch
                .par_iter()
                .map(|&i| graph_loss(&model.config, &model.params, &data.graphs[i], &data.contexts[i], beta, true))
                .collect::<Result<_>>()?;
            let mut touched = BTreeSet::new();
            for (&i, e) in batch.iter().zip(&evals) {
                if !e.loss.l_total.is_finite() {
                    return Err(Error::Divergence { epoch, last_finite });
                }
                if e.predicted == data.graphs[i].label() {
                    correct += 1;
                }
                let g = e.gradients.as_ref().expect("requested gradients");
                touched.extend(g.blocks.keys().cloned());
                state.touch(g);
                accumulate(&mut grads, g, 1.0 / batch.len() as f64)?;
                losses.push(e.loss);
            }
            for name in model.params.names() {
                if !touched.contains(name) && warned.insert(name.to_owned()) {
                    log::warn!("parameter `{name}` received no gradient (unused by every graph in a batch)");
                }
            }
            optimizer_step(&mut model.params, &grads, config, &mut state)?;
            for (name, g) in grads.iter_mut() {
                let region = state.region(name, g.shape());
                g.view_mut((0, 0), region).fill(0.0);
            }
        }
        let train_loss = mean_loss(&losses, beta);
        if !train_loss.l_total.is_finite() {
            return Err(Error::Divergence { epoch, last_finite });
        }
        let val = evaluate(&model, data, val_idx, beta)?;
        if !val.loss.l_total.is_finite() {
            return Err(Error::Divergence { epoch, last_finite });
        }
        last_finite = Some(epoch);
        let record = EpochRecord {
            epoch,
            l_epsilon: train_loss.l_epsilon,
            l_p: train_loss.l_p,
            l_total: train_loss.l_total,
            train_acc: correct as f64 / order.len() as f64,
            val_acc: val.accuracy,
        };
        log::debug!(
            "epoch {epoch}: loss {:.5} train {:.3} val {:.3}",
            record.l_total,
            record.train_acc,
            record.val_acc
        );
        let key = (val.accuracy, -val.loss.l_total);
        if key > best_key {
            best_key = key;
            best_epoch = epoch;
            best = model.clone();
        }
        records.push(record);
    }
    let final_train = evaluate(&model, data, train_idx, beta)?;
    let report = TrainReport {
        model: model.config.clone(),
        train: config.clone(),
        initial_train_acc: initial_train.accuracy,
        initial_val_acc: initial_val.accuracy,
        best_epoch,
        best_val_acc: best_key.0,
        best_val_loss: -best_key.1,
        final_train_acc: final_train.accuracy,
        seconds: start.elapsed().as_secs_f64(),
        epochs: records,
    };
    Ok(TrainOutcome {
        report,
        best,
        last: model,
    })
}

/// Convenience wrapper: separate train and validation datasets.
pub fn train(model: Model, train_set: &GraphDataset, val_set: &GraphDataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut graphs = train_set.graphs().to_vec();
    graphs.extend_from_slice(val_set.graphs());
    let data = Prepared::new(&model.config, graphs)?;
    let train_idx: Vec<usize> = (0..train_set.len()).collect();
    let val_idx: Vec<usize> = (train_set.len()..data.len()).collect();
    fit(model, &data, &train_idx, &val_idx, config)
}

/// Per-epoch CSV: `epoch,l_epsilon,l_p,l_total,train_acc,val_acc`.
pub fn write_epoch_csv(path: &Path, records: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn csv_io(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!("checked io error"),
        }
    } else {
        Error::Csv(e)
    }
}

/// Largest relative discrepancy per tensor between reverse-mode gradients
/// and central differences, `|g − d| / max(|g|, |d|, floor)`.
pub fn gradient_check(
    config: &ModelConfig,
    params: &ModelParams,
    graph: &Graph,
    ctx: &GraphContext,
    beta: f64,
    step: f64,
    floor: f64,
) -> Result<Vec<(String, f64)>> {
    let analytic = graph_loss(config, params, graph, ctx, beta, true)?
        .gradients
        .expect("requested gradients");
    let mut full = params.zeros_like();
    accumulate(&mut full, &analytic, 1.0)?;
    let loss_at = |p: &ModelParams| -> Result<f64> { Ok(graph_loss(config, p, graph, ctx, beta, false)?.loss.l_total) };
    let mut out = Vec::new();
    let mut probe = params.clone();
    for (name, tensor) in params.iter() {
        let g = full.get(name)?.clone();
        let mut worst = 0.0f64;
        for idx in 0..tensor.len() {
            let base = tensor[idx];
            let mut plus = tensor.clone();
            plus[idx] = base + step;
            probe.set(name, plus)?;
            let up = loss_at(&probe)?;
            let mut minus = tensor.clone();
            minus[idx] = base - step;
            probe.set(name, minus)?;
            let down = loss_at(&probe)?;
            probe.set(name, tensor.clone())?;
            let fd = (up - down) / (2.0 * step);
            let err = (g[idx] - fd).abs() / g[idx].abs().max(fd.abs()).max(floor);
            worst = worst.max(err);
        }
        out.push((name.clone(), worst));
    }
    Ok(out)
}

//! Episode loss, Adam with step-decayed learning rate, the training loop and
//! the evaluation harness.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::episode::{sample_episode, stream_rng, Dataset, Episode, EpisodeSpec};
use crate::error::{Error, Result};
use crate::gnn::{forward, layout_labels, EpisodeModel, Forward, GnnModel};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: u64,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub total_episodes: usize,
    pub eval_episodes: usize,
    /// Weight λ of the edge BCE term; the class CE term gets `1 - λ`.
    pub edge_loss_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            initial_lr: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_every: 15_000,
            weight_decay: 1e-5,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            total_episodes: 0,
            eval_episodes: 10_000,
            edge_loss_weight: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("initial_lr", self.initial_lr),
            ("lr_decay_factor", self.lr_decay_factor),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Parameter(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        if self.lr_decay_every == 0 {
            return Err(Error::Parameter("lr_decay_every must be positive".into()));
        }
        if self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Parameter("weight_decay must be ≥ 0".into()));
        }
        for (name, b) in [
            ("adam_beta1", self.adam_beta1),
            ("adam_beta2", self.adam_beta2),
        ] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Parameter(format!(
                    "{name} must lie in [0, 1), got {b}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.edge_loss_weight) {
            return Err(Error::Parameter(format!(
                "edge_loss_weight must lie in [0, 1], got {}",
                self.edge_loss_weight
            )));
        }
        Ok(())
    }
}

/// `initial_lr · decay^⌊iteration / every⌋`.
pub fn lr_at(iteration: u64, config: &TrainConfig) -> f64 {
    // Repeated multiplication keeps 1e-3 · 0.1 · 0.1 bit-equal to 1e-5,
    // which `powi` does not.
    let mut lr = config.initial_lr;
    for _ in 0..iteration / config.lr_decay_every {
        lr *= config.lr_decay_factor;
    }
    lr
}

/// Same-class indicator over the nodes of a layout.
fn edge_targets(labels: &[usize]) -> Tensor {
    let n = labels.len();
    let data = (0..n * n)
        .map(|k| (labels[k / n] == labels[k % n]) as u8 as f64)
        .collect();
    Tensor::new(vec![n, n], data).expect("square")
}

/// `(1 - λ)·CE(queries) + λ·BCE(all layers, all pairs)`.
pub fn episode_loss(
    tape: &mut Tape,
    out: &Forward,
    episode: &Episode,
    edge_weight: f64,
) -> Result<Var> {
    let ce = tape.nll_mean(out.prediction, &episode.query_labels)?;
    let mut edge_terms = Vec::new();
    for pass in &out.passes {
        let targets = edge_targets(&layout_labels(episode, &pass.layout));
        for &z in &pass.logits {
            edge_terms.push(tape.bce_logits_mean(z, &targets)?);
        }
    }
    let ce = tape.scalar_mul(ce, 1.0 - edge_weight);
    if edge_terms.is_empty() {
        return Ok(ce);
    }
    let mut bce = edge_terms[0];
    for &t in &edge_terms[1..] {
        bce = tape.add(bce, t)?;
    }
    let bce = tape.scalar_mul(bce, edge_weight / edge_terms.len() as f64);
    tape.add(ce, bce)
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<Vec<f64>>,
    pub second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        AdamState {
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }
}

/// One Adam update with bias correction, preceded by decoupled weight decay
/// `p ← p − lr·wd·p`.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Contract(format!(
            "adam_step got {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.first[i].len() != p.len() {
            return Err(Error::Contract(format!(
                "adam_step shape mismatch at parameter {i}: {:?} vs {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    let decay = lr * config.weight_decay;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for (((x, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *x -= decay * *x;
            *mi = b1 * *mi + (1.0 - b1) * gi;
            *vi = b2 * *vi + (1.0 - b2) * gi * gi;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *x -= lr * m_hat / (v_hat.sqrt() + config.adam_eps);
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Loss and gradients (in [`GnnModel::params`] order) for one episode.
pub fn loss_and_grads(
    model: &GnnModel,
    episode: &Episode,
    edge_weight: f64,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let out = forward(&mut tape, &bound, episode)?;
    let loss = episode_loss(&mut tape, &out, episode, edge_weight)?;
    let grads = tape.backward(loss)?;
    let value = tape.value(loss).item();
    Ok((value, bound.vars().iter().map(|&v| grads.wrt(v)).collect()))
}

/// Episodic training: one sampled episode per iteration, drawn from stream
/// `iteration` of `config.seed`.
pub fn train(
    model: &mut GnnModel,
    dataset: &Dataset,
    spec: &EpisodeSpec,
    config: &TrainConfig,
) -> Result<Vec<LossRecord>> {
    config.validate()?;
    spec.validate()?;
    check_compatible(model, dataset)?;
    let mut state = AdamState::new(&model.params());
    let mut curve = Vec::with_capacity(config.total_episodes);
    for iteration in 0..config.total_episodes {
        let episode = sample_episode(
            dataset,
            spec,
            &mut stream_rng(config.seed, iteration as u64),
        )?;
        let (loss, grads) = loss_and_grads(model, &episode, config.edge_loss_weight)?;
        if !loss.is_finite() {
            return Err(Error::Numeric("training loss"));
        }
        let lr = lr_at(iteration as u64, config);
        adam_step(&mut model.params_mut(), &grads, &mut state, lr, config)?;
        curve.push(LossRecord {
            iteration,
            lr,
            loss,
        });
    }
    Ok(curve)
}

fn check_compatible(model: &GnnModel, dataset: &Dataset) -> Result<()> {
    if model.encoder.input_dim() != dataset.feature_dim() {
        return Err(Error::dim(
            "model input vs dataset features",
            &[model.encoder.input_dim()],
            &[dataset.feature_dim()],
        ));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub mean_accuracy: f64,
    /// `1.96 · sample_std / sqrt(episode_count)`.
    pub ci95: f64,
    pub episode_count: usize,
    pub accuracies: Vec<f64>,
    /// SHA-256 over the fingerprints of the evaluated episodes, in order.
    pub stream_checksum: String,
}

/// Mean and 95% confidence half-width of per-episode accuracies.
pub fn mean_and_ci95(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

/// Accuracy over `episodes` tasks from stream `i` of `seed`.
///
/// Episodes are evaluated in parallel and merged by index, so the report does
/// not depend on the thread count.
pub fn evaluate<M: EpisodeModel + ?Sized>(
    model: &M,
    dataset: &Dataset,
    spec: &EpisodeSpec,
    episodes: usize,
    seed: u64,
) -> Result<EvalReport> {
    if episodes == 0 {
        return Err(Error::Parameter(
            "evaluation needs at least one episode".into(),
        ));
    }
    spec.validate()?;
    let results: Vec<(f64, [u8; 32])> = (0..episodes)
        .into_par_iter()
        .map(|i| {
            let episode = sample_episode(dataset, spec, &mut stream_rng(seed, i as u64))?;
            let prediction = model.predict(&episode)?;
            Ok((
                prediction.accuracy(&episode.query_labels),
                episode.fingerprint(),
            ))
        })
        .collect::<Result<_>>()?;

    let mut hasher = Sha256::new();
    for (_, fp) in &results {
        hasher.update(fp);
    }
    let accuracies: Vec<f64> = results.into_iter().map(|(a, _)| a).collect();
    let (mean_accuracy, ci95) = mean_and_ci95(&accuracies);
    Ok(EvalReport {
        mean_accuracy,
        ci95,
        episode_count: episodes,
        accuracies,
        stream_checksum: hex::encode(hasher.finalize()),
    })
}

/// Writes `iteration,lr,loss` rows.
pub fn write_loss_csv(path: impl AsRef<Path>, curve: &[LossRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iteration,lr,loss")?;
    for r in curve {
        writeln!(w, "{},{},{}", r.iteration, r.lr, r.loss)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `mean,ci95,episodes` rows.
pub fn write_eval_csv(path: impl AsRef<Path>, reports: &[EvalReport]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "mean,ci95,episodes")?;
    for r in reports {
        writeln!(w, "{},{},{}", r.mean_accuracy, r.ci95, r.episode_count)?;
    }
    w.flush()?;
    Ok(())
}

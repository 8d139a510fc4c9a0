//! Minibatch SGD training with optional activation compression, logging the
//! memory held for the backward pass and the ranks chosen at every step.

mod config;
mod ledger;
mod network;
mod optim;

pub use config::{LayerSpec, Method, TrainConfig};
pub use ledger::{ledger_aggregate, MemoryLedger, MemoryRecord, MemoryStats, StorageTag, BYTES_PER_ELEMENT};
pub use network::{ForwardPass, Gradients, Layer, Network, ParamGrad, Saved, Storage, StoredActivation};
pub use optim::{clip_global_norm, CosineSchedule, Sgd};

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::softmax_cross_entropy;
use crate::data::Dataset;
use crate::error::{argument, Error, Result};

/// Min/mean/max of the rank chosen for one mode of one layer over an epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankStats {
    pub layer: usize,
    /// 1-based mode; SVD-compressed layers only report mode 1.
    pub mode: usize,
    pub min: usize,
    pub mean: f64,
    pub max: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    /// Learning rate at the epoch's first step.
    pub lr: f64,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub memory: MemoryStats,
    pub ranks: Vec<RankStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochReport>,
    pub best_val_accuracy: f64,
    /// Aggregate over every step of the run.
    pub memory: MemoryStats,
    pub ledger: MemoryLedger,
    pub network: Network,
}

/// Trains a freshly initialised network on `train_set` and evaluates on
/// `validation` after every epoch. Incomplete final batches are dropped.
pub fn train(config: &TrainConfig, train_set: &Dataset, validation: &Dataset) -> Result<TrainReport> {
    config.validate()?;
    let mut network = Network::build(&config.architecture, train_set.sample_dims(), config.trainable_layers, config.seed)?;
    if config.standardize_inputs {
        let (mean, std) = train_set.pixel_stats();
        network.set_input_standardization(mean, std)?;
    }
    fine_tune(config, network, train_set, validation)
}

/// Like [`train`], but starting from the weights of `network`. The trainable
/// layers are re-selected from `config`; `config.architecture` must describe
/// the same network. The network's input standardization is kept as is.
pub fn fine_tune(config: &TrainConfig, mut network: Network, train_set: &Dataset, validation: &Dataset) -> Result<TrainReport> {
    config.validate()?;
    if train_set.sample_dims() != validation.sample_dims() || train_set.sample_dims() != network.input_dims() {
        return Err(argument("network, train and validation samples differ in shape"));
    }
    if network.layers.len() != config.architecture.len() {
        return Err(argument("network does not match the configured architecture"));
    }
    if config.batch_size > train_set.len() {
        return Err(argument(format!(
            "batch size {} exceeds the {} training samples",
            config.batch_size,
            train_set.len()
        )));
    }
    network.set_trainable(config.trainable_layers)?;
    let classes = train_set.classes.max(validation.classes);
    if network.classes() != classes {
        return Err(argument(format!("network predicts {} classes, data has {classes}", network.classes())));
    }

    let steps_per_epoch = train_set.len() / config.batch_size;
    let schedule = CosineSchedule { initial: config.learning_rate, total_steps: steps_per_epoch * config.epochs };
    let sgd = Sgd { momentum: config.momentum, weight_decay: config.weight_decay };
    let trainable = network.trainable_layers();
    let storage = Storage { method: config.method, epsilon: config.epsilon, compress_linear: config.compress_linear };
    let mut velocity: Vec<(Vec<f64>, Vec<f64>)> = network
        .layers
        .iter()
        .map(|l| l.parameters().map_or((Vec::new(), Vec::new()), |(w, b)| (vec![0.0; w.len()], vec![0.0; b.len()])))
        .collect();

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut ledger = MemoryLedger::new();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step = 0;

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let epoch_start = step;
        let (mut loss_sum, mut correct) = (0.0, 0);
        let mut ranks: Vec<(usize, usize, Vec<usize>)> = Vec::new();
        for batch in order.chunks_exact(config.batch_size) {
            let (x, labels) = train_set.batch(batch);
            let pass = network.forward_train(&x, storage)?;
            let (loss, grad) = softmax_cross_entropy(&pass.logits, &labels)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at step {step}")));
            }
            loss_sum += loss;
            correct += count_correct(&pass.logits, &labels);

            for s in &pass.stored {
                let mut k = [0; 4];
                k[..s.ranks.len()].copy_from_slice(&s.ranks);
                ledger.push(MemoryRecord::new(step, s.layer, s.tag, s.dims, k, s.elements));
                for (mode, &k) in s.ranks.iter().enumerate() {
                    match ranks.iter_mut().find(|(l, m, _)| *l == s.layer && *m == mode + 1) {
                        Some((_, _, ks)) => ks.push(k),
                        None => ranks.push((s.layer, mode + 1, vec![k])),
                    }
                }
            }
            ledger.push_aux(step, pass.aux_bytes);

            let mut grads = network.backward(&pass, &grad, false)?;
            let mut slices: Vec<&mut [f64]> = Vec::new();
            for g in grads.params.iter_mut().flatten() {
                slices.push(&mut g.weight);
                slices.push(&mut g.bias);
            }
            let norm = clip_global_norm(&mut slices, config.grad_clip);
            let lr = schedule.lr(step);
            for &i in &trainable {
                let g = grads.params[i].as_ref().expect("trainable layers receive gradients");
                let (w, b) = network.layers[i].parameters_mut().expect("trainable layers have parameters");
                let (vw, vb) = &mut velocity[i];
                sgd.step(w, &g.weight, vw, lr);
                sgd.step(b, &g.bias, vb, lr);
            }
            debug!("step {step}: loss {loss:.5}, grad norm {norm:.4}, lr {lr:.5}");
            step += 1;
        }

        let memory = if ledger.is_empty() {
            MemoryStats { peak: 0.0, mean: 0.0, std: 0.0 }
        } else {
            ledger.aggregate_steps(epoch_start, step)?
        };
        let val_accuracy = evaluate(&network, validation, config.batch_size)?;
        let report = EpochReport {
            epoch,
            lr: schedule.lr(epoch_start),
            train_loss: loss_sum / steps_per_epoch as f64,
            train_accuracy: correct as f64 / (steps_per_epoch * config.batch_size) as f64,
            val_accuracy,
            memory,
            ranks: ranks.into_iter().map(|(layer, mode, ks)| summarize(layer, mode, &ks)).collect(),
        };
        info!(
            "epoch {epoch}: loss {:.4}, train acc {:.3}, val acc {:.3}, peak {} B",
            report.train_loss, report.train_accuracy, report.val_accuracy, report.memory.peak
        );
        epochs.push(report);
    }

    let memory = if ledger.is_empty() { MemoryStats { peak: 0.0, mean: 0.0, std: 0.0 } } else { ledger.aggregate()? };
    let best_val_accuracy = epochs.iter().map(|e| e.val_accuracy).fold(0.0, f64::max);
    Ok(TrainReport { config: config.clone(), epochs, best_val_accuracy, memory, ledger, network })
}

fn summarize(layer: usize, mode: usize, ks: &[usize]) -> RankStats {
    RankStats {
        layer,
        mode,
        min: ks.iter().copied().min().unwrap_or(0),
        mean: ks.iter().sum::<usize>() as f64 / ks.len() as f64,
        max: ks.iter().copied().max().unwrap_or(0),
    }
}

fn count_correct(logits: &crate::tensor::Matrix, labels: &[usize]) -> usize {
    labels
        .iter()
        .enumerate()
        .filter(|&(i, &label)| {
            let row = logits.row(i);
            let best = (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best });
            best == label
        })
        .count()
}

/// Top-1 accuracy of `network` on `dataset`.
pub fn evaluate(network: &Network, dataset: &Dataset, batch_size: usize) -> Result<f64> {
    if dataset.is_empty() || batch_size == 0 {
        return Err(argument("evaluation needs a non-empty dataset and a positive batch size"));
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0;
    for chunk in indices.chunks(batch_size) {
        let (x, labels) = dataset.batch(chunk);
        correct += count_correct(&network.forward(&x)?, &labels);
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Per-epoch mean rank of `mode` (1-based) for the layer at architecture
/// index `layer`. Frozen layers, and runs without compression, give an empty
/// series.
pub fn kj_trajectory(report: &TrainReport, layer: usize, mode: usize) -> Result<Vec<f64>> {
    let net = &report.network;
    if !net.layers.get(layer).is_some_and(Layer::has_parameters) {
        return Err(Error::NotFound(format!("layer {layer} is not a conv or linear layer")));
    }
    if !(1..=4).contains(&mode) {
        return Err(Error::NotFound(format!("mode {mode} (modes are 1 to 4)")));
    }
    if !net.is_trainable(layer) {
        return Ok(Vec::new());
    }
    Ok(report
        .epochs
        .iter()
        .filter_map(|e| e.ranks.iter().find(|r| r.layer == layer && r.mode == mode).map(|r| r.mean))
        .collect())
}

/// Ranks HOSVD would choose at `epsilon` for the inputs of every trainable
/// conv layer, over `dataset` in batches of `batch_size` (last partial batch
/// dropped).
pub fn probe_ranks(network: &Network, dataset: &Dataset, epsilon: f64, batch_size: usize) -> Result<Vec<StoredActivation>> {
    if batch_size == 0 || batch_size > dataset.len() {
        return Err(argument(format!("batch size {batch_size} invalid for {} samples", dataset.len())));
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let mut out = Vec::new();
    for chunk in indices.chunks_exact(batch_size) {
        let (x, _) = dataset.batch(chunk);
        let pass = network.forward_train(&x, Storage::new(Method::Hosvd, epsilon))?;
        out.extend(pass.stored.into_iter().filter(|s| s.tag == StorageTag::Hosvd));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn tiny_config(method: Method) -> TrainConfig {
        let arch = vec![
            LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1, padding: 1, dilation: 1, groups: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Conv { out_channels: 4, kernel: 3, stride: 1, padding: 1, dilation: 1, groups: 1 },
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Linear { out_features: 2 },
        ];
        let mut c = TrainConfig::with_defaults(arch, 2, 2, 8);
        c.method = method;
        c
    }

    #[test]
    fn runs_are_deterministic() {
        let tr = generate_synthetic(2, 12, 8, 1).unwrap();
        let va = generate_synthetic(2, 4, 8, 2).unwrap();
        let c = tiny_config(Method::Hosvd);
        let a = train(&c, &tr, &va).unwrap();
        let b = train(&c, &tr, &va).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frozen_layers_do_not_move() {
        let tr = generate_synthetic(2, 12, 8, 1).unwrap();
        let va = generate_synthetic(2, 4, 8, 2).unwrap();
        let c = tiny_config(Method::Svd);
        let init = Network::build(&c.architecture, [1, 8, 8], c.trainable_layers, c.seed).unwrap();
        let report = train(&c, &tr, &va).unwrap();
        assert_eq!(report.network.layers[0], init.layers[0]);
        assert_ne!(report.network.layers[3], init.layers[3]);
        assert!(kj_trajectory(&report, 0, 1).unwrap().is_empty());
        assert_eq!(kj_trajectory(&report, 3, 1).unwrap().len(), 2);
        assert!(kj_trajectory(&report, 3, 2).unwrap().is_empty());
        assert!(matches!(kj_trajectory(&report, 1, 1), Err(Error::NotFound(_))));
        assert!(matches!(kj_trajectory(&report, 3, 5), Err(Error::NotFound(_))));
    }

    #[test]
    fn vanilla_memory_is_constant() {
        let tr = generate_synthetic(2, 12, 8, 1).unwrap();
        let va = generate_synthetic(2, 4, 8, 2).unwrap();
        let report = train(&tiny_config(Method::None), &tr, &va).unwrap();
        // conv input 8x4x4x4 plus linear input 8x16, 4 bytes each.
        assert_eq!(report.memory.peak, (4.0 * (8 * 4 * 4 * 4 + 8 * 16) as f64));
        assert_eq!(report.memory.std, 0.0);
    }

    #[test]
    fn oversized_batch_is_rejected() {
        let tr = generate_synthetic(2, 2, 8, 1).unwrap();
        assert!(train(&tiny_config(Method::None), &tr, &tr).is_err());
    }
}

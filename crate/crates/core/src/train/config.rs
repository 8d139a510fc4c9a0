use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};

/// Compression applied to the activations kept for the backward pass.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    None,
    Svd,
    Hosvd,
}

/// One entry of the architecture. Parameters with defaults may be omitted
/// from a JSON config.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
        #[serde(default = "one")]
        dilation: usize,
        #[serde(default = "one")]
        groups: usize,
    },
    Relu,
    MaxPool {
        size: usize,
    },
    Flatten,
    Linear {
        out_features: usize,
    },
}

impl LayerSpec {
    pub fn has_parameters(&self) -> bool {
        matches!(self, Self::Conv { .. } | Self::Linear { .. })
    }
}

fn one() -> usize {
    1
}

fn yes() -> bool {
    true
}

fn default_epsilon() -> f64 {
    0.8
}

fn default_lr() -> f64 {
    0.05
}

fn default_weight_decay() -> f64 {
    1e-4
}

fn default_clip() -> f64 {
    2.0
}

fn default_seed() -> u64 {
    233
}

/// Everything that determines a training run besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub architecture: Vec<LayerSpec>,
    #[serde(default)]
    pub method: Method,
    /// Explained-variance threshold; ignored when `method` is `none`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Whether the inputs of trainable linear layers are compressed too.
    /// When false they are kept dense and only conv inputs are decomposed.
    #[serde(default = "yes")]
    pub compress_linear: bool,
    /// Standardize inputs with the training set's pixel mean and std.
    #[serde(default = "yes")]
    pub standardize_inputs: bool,
    /// Number of conv/linear layers trained, counted from the output end.
    pub trainable_layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// Global L2 gradient-norm threshold.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl TrainConfig {
    /// Three conv blocks and a linear head for `classes`-way classification.
    pub fn small_cnn(classes: usize) -> Vec<LayerSpec> {
        let conv = |out_channels| LayerSpec::Conv { out_channels, kernel: 3, stride: 1, padding: 1, dilation: 1, groups: 1 };
        vec![
            conv(8),
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            conv(16),
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            conv(16),
            LayerSpec::Relu,
            LayerSpec::MaxPool { size: 2 },
            LayerSpec::Flatten,
            LayerSpec::Linear { out_features: classes },
        ]
    }

    /// Recipe defaults (lr 0.05, no momentum, weight decay 1e-4, clip 2.0).
    pub fn with_defaults(architecture: Vec<LayerSpec>, trainable_layers: usize, epochs: usize, batch_size: usize) -> Self {
        Self {
            architecture,
            method: Method::None,
            epsilon: default_epsilon(),
            compress_linear: true,
            standardize_inputs: true,
            trainable_layers,
            epochs,
            batch_size,
            learning_rate: default_lr(),
            momentum: 0.0,
            weight_decay: default_weight_decay(),
            grad_clip: default_clip(),
            seed: default_seed(),
        }
    }

    pub fn parameter_layers(&self) -> usize {
        self.architecture.iter().filter(|l| l.has_parameters()).count()
    }

    pub fn validate(&self) -> Result<()> {
        if self.architecture.is_empty() {
            return Err(argument("architecture is empty"));
        }
        if self.method != Method::None && !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(argument(format!("epsilon must lie in (0, 1], got {}", self.epsilon)));
        }
        if self.trainable_layers > self.parameter_layers() {
            return Err(argument(format!(
                "{} trainable layers requested but the network has {}",
                self.trainable_layers,
                self.parameter_layers()
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(argument("epochs and batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip > 0.0) {
            return Err(argument("learning_rate and grad_clip must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(argument("momentum must lie in [0, 1) and weight_decay be non-negative"));
        }
        Ok(())
    }
}

//! A sequential network whose forward pass records what the backward pass
//! needs, compressing the inputs of trainable conv and linear layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{LayerSpec, Method};
use super::ledger::StorageTag;
use crate::autograd::{
    conv2d_forward, conv2d_grad_input, conv2d_grad_weight_exact, conv2d_grad_weight_hosvd, conv2d_grad_weight_svd,
    linear_forward, linear_grad_input, linear_grad_weight, linear_grad_weight_svd, maxpool2d_backward,
    maxpool2d_forward, relu_backward, relu_forward, ConvSpec, ConvWeights, LinearWeights,
};
use crate::compress::{hosvd_compress, svd_compress, svd_compress_tensor, Compressed, HosvdCompressed, SvdCompressed};
use crate::error::{argument, shape, Result};
use crate::tensor::{Matrix, Tensor4};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv { spec: ConvSpec, weights: ConvWeights, bias: Vec<f64> },
    Relu,
    MaxPool { size: usize },
    Flatten,
    Linear { weights: LinearWeights, bias: Vec<f64> },
}

impl Layer {
    pub fn has_parameters(&self) -> bool {
        matches!(self, Self::Conv { .. } | Self::Linear { .. })
    }

    /// Weight and bias slices, for layers that have them.
    pub fn parameters(&self) -> Option<(&[f64], &[f64])> {
        match self {
            Self::Conv { weights, bias, .. } => Some((weights.tensor().data(), bias)),
            Self::Linear { weights, bias } => Some((weights.matrix().data(), bias)),
            _ => None,
        }
    }

    pub fn parameters_mut(&mut self) -> Option<(&mut [f64], &mut [f64])> {
        match self {
            Self::Conv { weights, bias, .. } => Some((weights.tensor_mut().data_mut(), bias)),
            Self::Linear { weights, bias } => Some((weights.matrix_mut().data_mut(), bias)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    trainable: Vec<bool>,
    input_dims: [usize; 3],
    /// `(mean, std)` subtracted from and divided into every input pixel.
    input_standardization: Option<(f64, f64)>,
}

/// What one layer kept from its forward pass.
#[derive(Debug, Clone)]
pub enum Saved {
    Nothing,
    Dense(Tensor4),
    Svd(SvdCompressed),
    Hosvd(HosvdCompressed),
    /// The input was identically zero, so the weight gradient is zero.
    Zero,
    ReluMask(Vec<bool>),
    PoolIndices(Vec<u32>),
}

/// Ledger view of one saved activation.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredActivation {
    pub layer: usize,
    pub tag: StorageTag,
    pub dims: [usize; 4],
    pub elements: usize,
    /// Per-mode ranks for HOSVD, the single rank for SVD, empty otherwise.
    pub ranks: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Matrix,
    pub saved: Vec<Saved>,
    pub input_dims: Vec<[usize; 4]>,
    pub stored: Vec<StoredActivation>,
    /// Bytes of ReLU masks (1 per element) and pooling indices (4 per element).
    pub aux_bytes: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Indexed by layer; `Some` for trainable layers.
    pub params: Vec<Option<ParamGrad>>,
    /// Gradient w.r.t. each layer's input, when recorded. The input gradient
    /// of the first trainable layer is never computed.
    pub input_grads: Vec<Option<Tensor4>>,
}

fn kaiming_uniform(rng: &mut ChaCha8Rng, n: usize, fan_in: usize) -> Vec<f64> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn to_matrix(t: &Tensor4) -> Matrix {
    let [b, ..] = t.dims();
    Matrix::new(b, t.len() / b.max(1), t.data().to_vec()).expect("rows times cols equals len")
}

impl Network {
    /// Builds the layers for inputs of `input_dims = [C, H, W]`, marking the
    /// last `trainable_layers` conv/linear layers trainable. Weights are
    /// Kaiming-uniform from a seeded generator; biases start at zero.
    pub fn build(architecture: &[LayerSpec], input_dims: [usize; 3], trainable_layers: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [mut c, mut h, mut w] = input_dims;
        let mut layers = Vec::with_capacity(architecture.len());
        for (i, spec) in architecture.iter().enumerate() {
            let layer = match *spec {
                LayerSpec::Conv { out_channels, kernel, stride, padding, dilation, groups } => {
                    let cs = ConvSpec::new(kernel, stride, dilation, groups, padding)?;
                    if out_channels == 0 || c % groups != 0 || out_channels % groups != 0 {
                        return Err(argument(format!(
                            "layer {i}: {groups} groups do not divide {c} input and {out_channels} output channels"
                        )));
                    }
                    let cin = c / groups;
                    let fan_in = cin * kernel * kernel;
                    let data = kaiming_uniform(&mut rng, out_channels * fan_in, fan_in);
                    let weights = ConvWeights::new(Tensor4::new([out_channels, cin, kernel, kernel], data)?)?;
                    (h, w) = (cs.output_size(h)?, cs.output_size(w)?);
                    c = out_channels;
                    Layer::Conv { spec: cs, weights, bias: vec![0.0; out_channels] }
                }
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::MaxPool { size } => {
                    if size == 0 || size > h || size > w {
                        return Err(argument(format!("layer {i}: pool size {size} invalid for {h}x{w} input")));
                    }
                    (h, w) = (h / size, w / size);
                    Layer::MaxPool { size }
                }
                LayerSpec::Flatten => {
                    (c, h, w) = (c * h * w, 1, 1);
                    Layer::Flatten
                }
                LayerSpec::Linear { out_features } => {
                    if h != 1 || w != 1 {
                        return Err(shape(format!("layer {i}: linear layer needs a flattened input, got {c}x{h}x{w}")));
                    }
                    if out_features == 0 {
                        return Err(argument(format!("layer {i}: out_features must be positive")));
                    }
                    let data = kaiming_uniform(&mut rng, out_features * c, c);
                    let weights = LinearWeights::new(Matrix::new(out_features, c, data)?)?;
                    c = out_features;
                    Layer::Linear { weights, bias: vec![0.0; out_features] }
                }
            };
            layers.push(layer);
        }
        if h != 1 || w != 1 {
            return Err(shape(format!("network output is {c}x{h}x{w}, expected a vector of class scores")));
        }
        let trainable = vec![false; layers.len()];
        let mut net = Self { layers, trainable, input_dims, input_standardization: None };
        net.set_trainable(trainable_layers)?;
        Ok(net)
    }

    /// Marks the last `count` conv/linear layers trainable and freezes the rest.
    pub fn set_trainable(&mut self, count: usize) -> Result<()> {
        let param_count = self.layers.iter().filter(|l| l.has_parameters()).count();
        if count > param_count {
            return Err(argument(format!("{count} trainable layers requested, network has {param_count}")));
        }
        let mut remaining = count;
        for (i, l) in self.layers.iter().enumerate().rev() {
            self.trainable[i] = remaining > 0 && l.has_parameters();
            if self.trainable[i] {
                remaining -= 1;
            }
        }
        Ok(())
    }

    pub fn set_input_standardization(&mut self, mean: f64, std: f64) -> Result<()> {
        if !(std > 0.0) || !mean.is_finite() || !std.is_finite() {
            return Err(argument(format!("cannot standardize with mean {mean} and std {std}")));
        }
        self.input_standardization = Some((mean, std));
        Ok(())
    }

    pub fn input_standardization(&self) -> Option<(f64, f64)> {
        self.input_standardization
    }

    fn prepare(&self, x: &Tensor4) -> Tensor4 {
        let mut a = x.clone();
        if let Some((mean, std)) = self.input_standardization {
            a.data_mut().iter_mut().for_each(|v| *v = (*v - mean) / std);
        }
        a
    }

    pub fn input_dims(&self) -> [usize; 3] {
        self.input_dims
    }

    /// Number of output classes.
    pub fn classes(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Linear { weights, .. } => Some(weights.out_features()),
                Layer::Conv { weights, .. } => Some(weights.out_channels()),
                _ => None,
            })
            .unwrap_or(self.input_dims[0])
    }

    pub fn is_trainable(&self, layer: usize) -> bool {
        self.trainable.get(layer).copied().unwrap_or(false)
    }

    /// Architecture indices of the trainable layers, in order.
    pub fn trainable_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.trainable[i]).collect()
    }

    fn first_trainable(&self) -> Option<usize> {
        self.trainable.iter().position(|&t| t)
    }

    /// All weights and biases, concatenated in layer order.
    pub fn flat_parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.layers.iter().filter_map(Layer::parameters) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    /// Inference pass returning `B × classes` logits.
    pub fn forward(&self, x: &Tensor4) -> Result<Matrix> {
        let mut a = self.prepare(x);
        for layer in &self.layers {
            a = self.apply(layer, &a)?.0;
        }
        Ok(to_matrix(&a))
    }

    fn apply(&self, layer: &Layer, a: &Tensor4) -> Result<(Tensor4, Saved)> {
        Ok(match layer {
            Layer::Conv { spec, weights, bias } => {
                let mut y = conv2d_forward(a, weights, spec)?;
                let [_, co, ho, wo] = y.dims();
                let plane = ho * wo;
                for (p, chunk) in y.data_mut().chunks_mut(plane).enumerate() {
                    let b = bias[p % co];
                    chunk.iter_mut().for_each(|v| *v += b);
                }
                (y, Saved::Nothing)
            }
            Layer::Relu => {
                let (y, mask) = relu_forward(a);
                (y, Saved::ReluMask(mask))
            }
            Layer::MaxPool { size } => {
                let (y, idx) = maxpool2d_forward(a, *size)?;
                (y, Saved::PoolIndices(idx))
            }
            Layer::Flatten => {
                let [b, c, h, w] = a.dims();
                (a.clone().reshape([b, c * h * w, 1, 1])?, Saved::Nothing)
            }
            Layer::Linear { weights, bias } => {
                let [b, f, h, w] = a.dims();
                if h != 1 || w != 1 {
                    return Err(shape(format!("linear layer received a {f}x{h}x{w} input")));
                }
                let mut y = linear_forward(&to_matrix(a), weights)?;
                let o = y.cols();
                for (i, v) in y.data_mut().iter_mut().enumerate() {
                    *v += bias[i % o];
                }
                (Tensor4::new([b, o, 1, 1], y.into_data())?, Saved::Nothing)
            }
        })
    }

    /// Training pass. Trainable conv/linear layers keep their input dense
    /// or compressed as `storage` dictates. Under `Method::Hosvd`, linear
    /// inputs are matrices and use the truncated SVD.
    pub fn forward_train(&self, x: &Tensor4, storage: Storage) -> Result<ForwardPass> {
        let first = self.first_trainable().unwrap_or(self.layers.len());
        let mut saved = Vec::with_capacity(self.layers.len());
        let mut input_dims = Vec::with_capacity(self.layers.len());
        let mut stored = Vec::new();
        let mut aux_bytes = 0;
        let mut a = self.prepare(x);
        for (i, layer) in self.layers.iter().enumerate() {
            input_dims.push(a.dims());
            let (y, kept) = self.apply(layer, &a)?;
            let keep = if i < first {
                Saved::Nothing
            } else if layer.has_parameters() {
                let (s, record) = save_activation(i, layer, &a, storage)?;
                stored.push(record);
                s
            } else {
                match &kept {
                    Saved::ReluMask(m) => aux_bytes += m.len(),
                    Saved::PoolIndices(p) => aux_bytes += 4 * p.len(),
                    _ => {}
                }
                kept
            };
            saved.push(keep);
            a = y;
        }
        Ok(ForwardPass { logits: to_matrix(&a), saved, input_dims, stored, aux_bytes })
    }

    /// Backpropagates `grad_logits` (`B × classes`) down to the first
    /// trainable layer. Input gradients are only ever computed from weights
    /// and masks, never from the stored activations.
    pub fn backward(&self, pass: &ForwardPass, grad_logits: &Matrix, record_input_grads: bool) -> Result<Gradients> {
        let n = self.layers.len();
        let mut params = vec![None; n];
        let mut input_grads = vec![None; n];
        let Some(first) = self.first_trainable() else {
            return Ok(Gradients { params, input_grads });
        };
        let [b, ..] = pass.input_dims[0];
        let mut g = Tensor4::new([b, grad_logits.cols(), 1, 1], grad_logits.data().to_vec())?;
        for i in (first..n).rev() {
            let dims = pass.input_dims[i];
            let need_input = i > first;
            let gx = match (&self.layers[i], &pass.saved[i]) {
                (Layer::Conv { spec, weights, .. }, saved) => {
                    let gw = match saved {
                        Saved::Dense(a) => conv2d_grad_weight_exact(a, &g, spec)?.into_tensor().into_data(),
                        Saved::Hosvd(c) => conv2d_grad_weight_hosvd(c, &g, spec)?.into_tensor().into_data(),
                        Saved::Svd(c) => conv2d_grad_weight_svd(c, &g, spec)?.into_tensor().into_data(),
                        Saved::Zero => vec![0.0; weights.tensor().len()],
                        _ => return Err(argument(format!("layer {i}: no activation saved"))),
                    };
                    let [_, co, ho, wo] = g.dims();
                    let mut gb = vec![0.0; co];
                    for (p, chunk) in g.data().chunks(ho * wo).enumerate() {
                        gb[p % co] += chunk.iter().sum::<f64>();
                    }
                    params[i] = Some(ParamGrad { weight: gw, bias: gb });
                    if need_input {
                        Some(conv2d_grad_input(weights, &g, spec, dims)?)
                    } else {
                        None
                    }
                }
                (Layer::Linear { weights, .. }, saved) => {
                    let gy = to_matrix(&g);
                    let gw = match saved {
                        Saved::Dense(a) => linear_grad_weight(&to_matrix(a), &gy)?.matrix().data().to_vec(),
                        Saved::Svd(c) => linear_grad_weight_svd(c, &gy)?.matrix().data().to_vec(),
                        Saved::Zero => vec![0.0; weights.matrix().data().len()],
                        _ => return Err(argument(format!("layer {i}: no activation saved"))),
                    };
                    let o = gy.cols();
                    let mut gb = vec![0.0; o];
                    for (k, v) in gy.data().iter().enumerate() {
                        gb[k % o] += v;
                    }
                    params[i] = Some(ParamGrad { weight: gw, bias: gb });
                    if need_input {
                        Some(Tensor4::new(dims, linear_grad_input(weights, &gy)?.into_data())?)
                    } else {
                        None
                    }
                }
                (Layer::Relu, Saved::ReluMask(mask)) => Some(relu_backward(&g, mask)?),
                (Layer::MaxPool { .. }, Saved::PoolIndices(idx)) => Some(maxpool2d_backward(&g, idx, dims)?),
                (Layer::Flatten, _) => Some(g.clone().reshape(dims)?),
                _ => return Err(argument(format!("layer {i}: forward state missing"))),
            };
            match gx {
                Some(gx) => {
                    if record_input_grads {
                        input_grads[i] = Some(gx.clone());
                    }
                    g = gx;
                }
                None => break,
            }
        }
        Ok(Gradients { params, input_grads })
    }
}

/// How the forward pass keeps the inputs of trainable layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Storage {
    pub method: Method,
    pub epsilon: f64,
    pub compress_linear: bool,
}

impl Storage {
    pub fn dense() -> Self {
        Self { method: Method::None, epsilon: 1.0, compress_linear: false }
    }

    pub fn new(method: Method, epsilon: f64) -> Self {
        Self { method, epsilon, compress_linear: true }
    }
}

fn save_activation(layer_index: usize, layer: &Layer, a: &Tensor4, storage: Storage) -> Result<(Saved, StoredActivation)> {
    let dims = a.dims();
    let record = |tag, elements, ranks| StoredActivation { layer: layer_index, tag, dims, elements, ranks };
    let is_conv = matches!(layer, Layer::Conv { .. });
    let method = if is_conv || storage.compress_linear { storage.method } else { Method::None };
    let epsilon = storage.epsilon;
    if method != Method::None && a.data().iter().all(|v| *v == 0.0) {
        return Ok((Saved::Zero, record(StorageTag::Zero, 0, Vec::new())));
    }
    Ok(match method {
        Method::None => (Saved::Dense(a.clone()), record(StorageTag::Vanilla, a.len(), Vec::new())),
        Method::Hosvd if is_conv => {
            let c = hosvd_compress(a, epsilon)?;
            let r = record(StorageTag::Hosvd, c.stored_elements(), c.ranks().to_vec());
            (Saved::Hosvd(c), r)
        }
        _ => {
            let c = if is_conv { svd_compress_tensor(a, epsilon)? } else { svd_compress(&to_matrix(a), epsilon)? };
            let r = record(StorageTag::Svd, c.stored_elements(), vec![c.rank()]);
            (Saved::Svd(c), r)
        }
    })
}

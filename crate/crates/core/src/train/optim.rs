//! SGD with momentum and weight decay, global L2 gradient clipping and a
//! cosine-annealed learning rate.

/// Cosine decay from `initial` at step 0 to zero at step `total_steps − 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineSchedule {
    pub initial: f64,
    pub total_steps: usize,
}

impl CosineSchedule {
    pub fn lr(&self, step: usize) -> f64 {
        if self.total_steps <= 1 {
            return self.initial;
        }
        let progress = step.min(self.total_steps - 1) as f64 / (self.total_steps - 1) as f64;
        0.5 * self.initial * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [&mut [f64]], max_norm: f64) -> f64 {
    let norm = grads.iter().flat_map(|g| g.iter()).map(|v| v * v).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    /// One update of `params` in place; `velocity` holds the momentum buffer.
    pub fn step(&self, params: &mut [f64], grads: &[f64], velocity: &mut [f64], lr: f64) {
        for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
            let d = g + self.weight_decay * *p;
            *v = self.momentum * *v + d;
            *p -= lr * *v;
        }
    }
}

//! Per-step accounting of the memory held for the backward pass.
//!
//! Bytes are reported at 4 bytes per stored element (single-precision
//! storage), independently of the `f64` arithmetic used for training.

use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};

pub const BYTES_PER_ELEMENT: usize = 4;

/// How an activation was held between the forward and backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageTag {
    /// Dense activation.
    Vanilla,
    Svd,
    Hosvd,
    /// Activation was identically zero; nothing stored.
    Zero,
}

impl StorageTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Vanilla => "vanilla",
            Self::Svd => "svd",
            Self::Hosvd => "hosvd",
            Self::Zero => "zero",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "vanilla" => Some(Self::Vanilla),
            "svd" => Some(Self::Svd),
            "hosvd" => Some(Self::Hosvd),
            "zero" => Some(Self::Zero),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryRecord {
    pub step: usize,
    /// Index of the layer in the architecture.
    pub layer: usize,
    pub tag: StorageTag,
    /// Dense dims of the activation; linear inputs are `[B, F, 1, 1]`.
    pub dims: [usize; 4],
    /// Per-mode ranks for HOSVD, `[K, 0, 0, 0]` for SVD, zeros otherwise.
    pub ranks: [usize; 4],
    pub elements: usize,
    pub bytes: usize,
}

impl MemoryRecord {
    pub fn new(step: usize, layer: usize, tag: StorageTag, dims: [usize; 4], ranks: [usize; 4], elements: usize) -> Self {
        Self { step, layer, tag, dims, ranks, elements, bytes: elements * BYTES_PER_ELEMENT }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryStats {
    pub peak: f64,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

/// Activation records plus the separate byte count of ReLU masks and
/// pooling indices, which are not part of the activation-memory figures.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryLedger {
    pub records: Vec<MemoryRecord>,
    /// `(step, bytes)` of masks and indices.
    pub aux: Vec<(usize, usize)>,
}

impl MemoryLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: MemoryRecord) {
        self.records.push(record);
    }

    pub fn push_aux(&mut self, step: usize, bytes: usize) {
        self.aux.push((step, bytes));
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Activation bytes summed per step, in step order.
    pub fn step_totals(&self) -> Vec<(usize, usize)> {
        let mut totals: Vec<(usize, usize)> = Vec::new();
        for r in &self.records {
            match totals.last_mut() {
                Some((step, bytes)) if *step == r.step => *bytes += r.bytes,
                _ => totals.push((r.step, r.bytes)),
            }
        }
        totals
    }

    /// Peak, mean and population std of per-step activation bytes.
    pub fn aggregate(&self) -> Result<MemoryStats> {
        let totals: Vec<f64> = self.step_totals().into_iter().map(|(_, b)| b as f64).collect();
        aggregate_values(&totals)
    }

    /// Same as [`aggregate`](Self::aggregate) restricted to `first..last` steps.
    pub fn aggregate_steps(&self, first: usize, last: usize) -> Result<MemoryStats> {
        let totals: Vec<f64> = self
            .step_totals()
            .into_iter()
            .filter(|(s, _)| (first..last).contains(s))
            .map(|(_, b)| b as f64)
            .collect();
        aggregate_values(&totals)
    }
}

/// Free-function form of [`MemoryLedger::aggregate`].
pub fn ledger_aggregate(ledger: &MemoryLedger) -> Result<MemoryStats> {
    ledger.aggregate()
}

fn aggregate_values(values: &[f64]) -> Result<MemoryStats> {
    if values.is_empty() {
        return Err(argument("empty memory ledger"));
    }
    let n = values.len() as f64;
    let peak = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(MemoryStats { peak, mean, std: var.sqrt() })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record() {
        let mut l = MemoryLedger::new();
        l.push(MemoryRecord::new(0, 0, StorageTag::Vanilla, [10, 1, 1, 1], [0; 4], 10));
        let s = l.aggregate().unwrap();
        assert_eq!((s.peak, s.mean, s.std), (40.0, 40.0, 0.0));
    }

    #[test]
    fn two_steps() {
        let mut l = MemoryLedger::new();
        let record = |step, bytes| MemoryRecord { bytes, ..MemoryRecord::new(step, 0, StorageTag::Hosvd, [1; 4], [1; 4], 0) };
        l.push(record(0, 2));
        l.push(record(1, 4));
        let s = l.aggregate().unwrap();
        assert_eq!((s.peak, s.mean, s.std), (4.0, 3.0, 1.0));
    }

    #[test]
    fn layers_of_one_step_are_summed() {
        let mut l = MemoryLedger::new();
        let dense = |step, layer, n| MemoryRecord::new(step, layer, StorageTag::Vanilla, [n, 1, 1, 1], [0; 4], n);
        l.push(dense(0, 0, 1));
        l.push(dense(0, 3, 2));
        l.push(dense(1, 0, 5));
        assert_eq!(l.step_totals(), vec![(0, 12), (1, 20)]);
        assert_eq!(l.aggregate_steps(1, 2).unwrap().peak, 20.0);
    }

    #[test]
    fn empty_ledger_is_an_error() {
        assert!(MemoryLedger::new().aggregate().is_err());
    }
}

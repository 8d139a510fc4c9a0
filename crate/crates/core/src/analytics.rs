//! Closed-form cost and quality predictions for a single convolutional
//! layer trained with HOSVD-compressed activations.
//!
//! Every count is accumulated in `u128` and converted to `f64` once, so the
//! reported values do not depend on evaluation order. Counts beyond 2⁵³
//! lose integer exactness in that final conversion.

use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};

/// Sizes of one conv layer: input `B×C×H×W`, output `B×C'×H'×W'`, kernel `D×D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub b: usize,
    pub c: usize,
    pub c_out: usize,
    pub h: usize,
    pub w: usize,
    pub h_out: usize,
    pub w_out: usize,
    pub d: usize,
}

impl LayerShape {
    pub fn new(b: usize, c: usize, c_out: usize, h: usize, w: usize, h_out: usize, w_out: usize, d: usize) -> Result<Self> {
        let s = Self { b, c, c_out, h, w, h_out, w_out, d };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.b, self.c, self.c_out, self.h, self.w, self.h_out, self.w_out, self.d];
        if all.contains(&0) {
            return Err(argument(format!("layer shape entries must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// Input activation dims `[B, C, H, W]`.
    pub fn input_dims(&self) -> [usize; 4] {
        [self.b, self.c, self.h, self.w]
    }
}

/// Per-mode truncation ranks `(K₁, K₂, K₃, K₄)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RankTuple(pub [usize; 4]);

impl RankTuple {
    pub fn new(k: [usize; 4], shape: &LayerShape) -> Result<Self> {
        let dims = shape.input_dims();
        for (j, (&kj, &mj)) in k.iter().zip(&dims).enumerate() {
            if kj == 0 || kj > mj {
                return Err(argument(format!("K{} = {kj} outside [1, {mj}]", j + 1)));
            }
        }
        Ok(Self(k))
    }
}

fn u(x: usize) -> u128 {
    x as u128
}

/// `(1 − ε)⁻²`: signal-to-noise ratio of a truncated activation, and of the
/// weight gradient computed from it.
pub fn snr(epsilon: f64) -> Result<f64> {
    if epsilon == 1.0 {
        return Err(Error::Domain("SNR is infinite at epsilon = 1".into()));
    }
    if !(0.0..1.0).contains(&epsilon) {
        return Err(argument(format!("epsilon must lie in [0, 1), got {epsilon}")));
    }
    // `1 − ε` cancels catastrophically for decimal inputs (1 − 0.8 is
    // 0.19999999999999996); snapping the complement to 15 significant
    // digits recovers the intended decimal before inverting.
    let noise: f64 = format!("{:.14e}", 1.0 - epsilon).parse().expect("formatted float parses");
    let amplitude = 1.0 / noise;
    Ok(amplitude * amplitude)
}

/// Dense element count `BCHW` and HOSVD stored count
/// `K₁K₂K₃K₄ + BK₁ + CK₂ + HK₃ + WK₄`: the exact numerator and denominator
/// of [`compression_ratio`].
pub fn compression_ratio_parts(shape: &LayerShape, k: &RankTuple) -> (u128, u128) {
    let [k1, k2, k3, k4] = k.0.map(u);
    let dense = u(shape.b) * u(shape.c) * u(shape.h) * u(shape.w);
    let stored = k1 * k2 * k3 * k4 + u(shape.b) * k1 + u(shape.c) * k2 + u(shape.h) * k3 + u(shape.w) * k4;
    (dense, stored)
}

/// `R_C = BCHW / (K₁K₂K₃K₄ + BK₁ + CK₂ + HK₃ + WK₄)`.
pub fn compression_ratio(shape: &LayerShape, k: &RankTuple) -> f64 {
    let (dense, stored) = compression_ratio_parts(shape, k);
    dense as f64 / stored as f64
}

/// The five denominator terms of [`speedup_ratio`], in printed order:
/// `K₁C'H'W'B`, `K₁K₂HK₄K₃`, `K₁K₂HWK₄`, `C'K₂D²H'W'K₁`, `C'CD²K₂`.
pub fn speedup_terms(shape: &LayerShape, k: &RankTuple) -> [u128; 5] {
    let [k1, k2, k3, k4] = k.0.map(u);
    let (b, c, co, h, w) = (u(shape.b), u(shape.c), u(shape.c_out), u(shape.h), u(shape.w));
    let (ho, wo, d) = (u(shape.h_out), u(shape.w_out), u(shape.d));
    [
        k1 * co * ho * wo * b,
        k1 * k2 * h * k4 * k3,
        k1 * k2 * h * w * k4,
        co * k2 * d * d * ho * wo * k1,
        co * c * d * d * k2,
    ]
}

/// Backward-pass speedup `R_S = D²CC'BH'W' / Σ speedup_terms`.
pub fn speedup_ratio(shape: &LayerShape, k: &RankTuple) -> f64 {
    let denom: u128 = speedup_terms(shape, k).iter().sum();
    vanilla_weight_grad_flops_exact(shape) as f64 / denom as f64
}

fn vanilla_weight_grad_flops_exact(s: &LayerShape) -> u128 {
    u(s.d) * u(s.d) * u(s.c) * u(s.c_out) * u(s.b) * u(s.h_out) * u(s.w_out)
}

fn svd_cost(m: u128, n: u128) -> u128 {
    let (hi, lo) = if m >= n { (m, n) } else { (n, m) };
    hi * hi * lo
}

/// Decomposition cost `Σ_j max(m_j, n_j)² · min(m_j, n_j)` over the four
/// unfoldings `B×CHW`, `C×BHW`, `H×BCW`, `W×BCH`.
pub fn hosvd_overhead_flops(s: &LayerShape) -> f64 {
    let (b, c, h, w) = (u(s.b), u(s.c), u(s.h), u(s.w));
    let total = svd_cost(b, c * h * w) + svd_cost(c, b * h * w) + svd_cost(h, b * c * w) + svd_cost(w, b * c * h);
    total as f64
}

/// Forward cost of plain training, `D²CC'BHW`.
pub fn vanilla_forward_flops(s: &LayerShape) -> f64 {
    (u(s.d) * u(s.d) * u(s.c) * u(s.c_out) * u(s.b) * u(s.h) * u(s.w)) as f64
}

/// Forward cost with compression: overhead plus the vanilla forward.
pub fn hosvd_total_forward_flops(s: &LayerShape) -> f64 {
    let (b, c, h, w) = (u(s.b), u(s.c), u(s.h), u(s.w));
    let overhead = svd_cost(b, c * h * w) + svd_cost(c, b * h * w) + svd_cost(h, b * c * w) + svd_cost(w, b * c * h);
    let vanilla = u(s.d) * u(s.d) * u(s.c) * u(s.c_out) * b * h * w;
    (overhead + vanilla) as f64
}

/// `R_FLOPs = D²CC'BH'W' / (D²CC'BH'W' + D²CC'BHW + D²CC')`.
pub fn backward_forward_ratio(s: &LayerShape) -> f64 {
    let base = u(s.d) * u(s.d) * u(s.c) * u(s.c_out);
    let forward = base * u(s.b) * u(s.h_out) * u(s.w_out);
    let input_grad = base * u(s.b) * u(s.h) * u(s.w);
    forward as f64 / (forward + input_grad + base) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(b: usize, c: usize, co: usize, h: usize, w: usize, ho: usize, wo: usize, d: usize) -> LayerShape {
        LayerShape::new(b, c, co, h, w, ho, wo, d).unwrap()
    }

    #[test]
    fn snr_values() {
        assert_eq!(snr(0.8).unwrap(), 25.0);
        assert_eq!(snr(0.0).unwrap(), 1.0);
        assert_eq!(snr(0.9).unwrap(), 100.0);
        assert!(matches!(snr(1.0), Err(Error::Domain(_))));
        assert!(snr(-0.1).is_err());
    }

    #[test]
    fn compression_ratio_examples() {
        let s = shape(8, 4, 4, 8, 8, 8, 8, 3);
        let k = RankTuple::new([2, 2, 2, 2], &s).unwrap();
        assert_eq!(compression_ratio_parts(&s, &k), (2048, 72));
        assert!((compression_ratio(&s, &k) - 2048.0 / 72.0).abs() < 1e-12);
        let one = shape(1, 1, 1, 1, 1, 1, 1, 1);
        assert_eq!(compression_ratio(&one, &RankTuple([1, 1, 1, 1])), 0.2);
    }

    #[test]
    fn ratios_decrease_in_every_rank() {
        let s = shape(8, 6, 5, 7, 9, 7, 9, 3);
        for j in 0..4 {
            let mut k = [2, 2, 2, 2];
            let mut prev_c = f64::INFINITY;
            let mut prev_s = f64::INFINITY;
            for kj in 1..=s.input_dims()[j] {
                k[j] = kj;
                let r = RankTuple::new(k, &s).unwrap();
                let (rc, rs) = (compression_ratio(&s, &r), speedup_ratio(&s, &r));
                assert!(rc < prev_c && rs < prev_s);
                prev_c = rc;
                prev_s = rs;
            }
        }
    }

    #[test]
    fn unit_shape_speedup() {
        let one = shape(1, 1, 1, 1, 1, 1, 1, 1);
        let k = RankTuple([1, 1, 1, 1]);
        assert_eq!(speedup_terms(&one, &k), [1; 5]);
        assert_eq!(speedup_ratio(&one, &k), 0.2);
    }

    #[test]
    fn flops_examples() {
        let one = shape(1, 1, 1, 1, 1, 1, 1, 1);
        assert_eq!(hosvd_overhead_flops(&one), 4.0);
        assert_eq!(vanilla_forward_flops(&one), 1.0);
        assert_eq!(hosvd_total_forward_flops(&one), 5.0);
        assert_eq!(backward_forward_ratio(&one), 1.0 / 3.0);

        let s = shape(2, 3, 6, 4, 5, 4, 5, 3);
        // B×CHW = 2×60, C×BHW = 3×40, H×BCW = 4×30, W×BCH = 5×24.
        let expected = 60.0 * 60.0 * 2.0 + 40.0 * 40.0 * 3.0 + 30.0 * 30.0 * 4.0 + 24.0 * 24.0 * 5.0;
        assert_eq!(hosvd_overhead_flops(&s), expected);
        assert_eq!(vanilla_forward_flops(&s), 9.0 * 3.0 * 6.0 * 2.0 * 4.0 * 5.0);
        assert_eq!(hosvd_total_forward_flops(&s), expected + 6480.0);

        let swapped = shape(2, 3, 6, 5, 4, 5, 4, 3);
        assert_eq!(hosvd_overhead_flops(&s), hosvd_overhead_flops(&swapped));
    }

    #[test]
    fn rank_tuple_bounds() {
        let s = shape(2, 3, 6, 4, 5, 4, 5, 3);
        assert!(RankTuple::new([3, 1, 1, 1], &s).is_err());
        assert!(RankTuple::new([0, 1, 1, 1], &s).is_err());
        assert!(LayerShape::new(0, 1, 1, 1, 1, 1, 1, 1).is_err());
    }
}

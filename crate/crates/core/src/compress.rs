//! Stored forms of activations: a truncated matrix SVD of the `B × (CHW)`
//! reshape, and a truncated HOSVD (Tucker core plus one factor per mode).
//!
//! Both pick their ranks with [`rank_for_variance`] on a single shared
//! explained-variance threshold `epsilon`.

use rayon::prelude::*;

use crate::error::{argument, shape, Result};
use crate::linalg::{left_singular, rank_for_variance, retained_variance, svd};
use crate::tensor::{mode_product, mode_unfold, Matrix, Tensor4};

/// Anything that occupies memory as a compressed activation.
pub trait Compressed {
    /// Number of reals kept in memory.
    fn stored_elements(&self) -> usize;

    /// Number of reals the dense activation would occupy.
    fn dense_elements(&self) -> usize;
}

/// Shape the SVD-compressed activation had before its matrix reshape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OriginalDims {
    /// Convolutional input, reshaped to `B × (C·H·W)`.
    Conv([usize; 4]),
    /// Linear-layer input, already a `rows × cols` matrix.
    Linear(usize, usize),
}

/// Truncated SVD `left · rightᵀ` with `left = U_K Σ_K` and `right = V_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdCompressed {
    pub left: Matrix,
    pub right: Matrix,
    pub original_dims: OriginalDims,
    pub epsilon: f64,
}

impl SvdCompressed {
    pub fn rank(&self) -> usize {
        self.left.cols()
    }

    /// Dense `rows × cols` matrix (the reshaped form for conv inputs).
    pub fn reconstruct(&self) -> Matrix {
        self.left.matmul_t(&self.right).expect("factor ranks agree")
    }

    /// Dense activation in its original 4-mode layout.
    pub fn reconstruct_tensor(&self) -> Result<Tensor4> {
        match self.original_dims {
            OriginalDims::Conv(dims) => Tensor4::new(dims, self.reconstruct().into_data()),
            OriginalDims::Linear(r, c) => {
                Err(shape(format!("linear activation {r}x{c} has no 4-mode layout")))
            }
        }
    }
}

impl Compressed for SvdCompressed {
    fn stored_elements(&self) -> usize {
        self.rank() * (self.left.rows() + self.right.rows())
    }

    fn dense_elements(&self) -> usize {
        self.left.rows() * self.right.rows()
    }
}

/// Truncated HOSVD: `core ×₁ U⁽¹⁾ ×₂ U⁽²⁾ ×₃ U⁽³⁾ ×₄ U⁽⁴⁾`.
#[derive(Debug, Clone, PartialEq)]
pub struct HosvdCompressed {
    /// `(K₁, K₂, K₃, K₄)` core.
    pub core: Tensor4,
    /// `factors[j]` is `dims[j] × K_{j+1}` with orthonormal columns.
    pub factors: [Matrix; 4],
    pub epsilon: f64,
    /// Fraction of each unfolding's energy kept by its factor. Diagnostic only.
    pub retained_variance: [f64; 4],
}

impl HosvdCompressed {
    pub fn ranks(&self) -> [usize; 4] {
        self.core.dims()
    }

    /// Dims of the activation this was built from.
    pub fn original_dims(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|j| self.factors[j].rows())
    }

    /// Dense tensor `core ×₁ U⁽¹⁾ ×₂ U⁽²⁾ ×₃ U⁽³⁾ ×₄ U⁽⁴⁾`.
    pub fn reconstruct(&self) -> Tensor4 {
        let mut t = self.core.clone();
        for (j, u) in self.factors.iter().enumerate() {
            t = mode_product(&t, u, j + 1).expect("factor shapes checked at construction");
        }
        t
    }
}

impl Compressed for HosvdCompressed {
    fn stored_elements(&self) -> usize {
        let k = self.ranks();
        let m = self.original_dims();
        k.iter().product::<usize>() + m.iter().zip(&k).map(|(a, b)| a * b).sum::<usize>()
    }

    fn dense_elements(&self) -> usize {
        self.original_dims().iter().product()
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(argument(format!("epsilon must lie in (0, 1], got {epsilon}")));
    }
    Ok(())
}

fn check_energy(data: &[f64]) -> Result<()> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(argument("activation has non-finite entries"));
    }
    if data.iter().all(|v| *v == 0.0) {
        return Err(argument("zero-energy input cannot be compressed"));
    }
    Ok(())
}

/// Truncated SVD of a matrix-shaped activation (linear-layer input).
pub fn svd_compress(a: &Matrix, epsilon: f64) -> Result<SvdCompressed> {
    compress_matrix(a, epsilon, OriginalDims::Linear(a.rows(), a.cols()))
}

/// Truncated SVD of a conv activation reshaped to `B × (C·H·W)`.
pub fn svd_compress_tensor(t: &Tensor4, epsilon: f64) -> Result<SvdCompressed> {
    let [b, c, h, w] = t.dims();
    let a = Matrix::new(b, c * h * w, t.data().to_vec())?;
    compress_matrix(&a, epsilon, OriginalDims::Conv(t.dims()))
}

fn compress_matrix(a: &Matrix, epsilon: f64, original_dims: OriginalDims) -> Result<SvdCompressed> {
    check_epsilon(epsilon)?;
    check_energy(a.data())?;
    let f = svd(a)?;
    let k = rank_for_variance(&f.s, epsilon)?;
    let mut left = f.u.leading_columns(k);
    for i in 0..left.rows() {
        for (t, s) in f.s.iter().take(k).enumerate() {
            left.set(i, t, left.get(i, t) * s);
        }
    }
    Ok(SvdCompressed { left, right: f.v.leading_columns(k), original_dims, epsilon })
}

/// Per-mode truncation of one unfolding: the leading factor and the full
/// singular spectrum it was cut from.
#[derive(Debug, Clone)]
pub struct ModeTruncation {
    pub factor: Matrix,
    pub singular_values: Vec<f64>,
}

/// Leading left singular vectors of the mode-`mode` unfolding of `t`.
pub fn truncate_mode(t: &Tensor4, mode: usize, epsilon: f64) -> Result<ModeTruncation> {
    let size = t.dims()[mode - 1];
    if size == 1 {
        let s = t.frobenius_norm();
        return Ok(ModeTruncation { factor: Matrix::identity(1), singular_values: vec![s] });
    }
    let unfolding = mode_unfold(t, mode)?;
    let (u, s) = left_singular(&unfolding)?;
    let k = rank_for_variance(&s, epsilon)?;
    Ok(ModeTruncation { factor: u.leading_columns(k), singular_values: s })
}

/// Classic truncated HOSVD: every factor comes from an unfolding of the
/// original tensor, and the core is `t` projected onto all four factors.
pub fn hosvd_compress(t: &Tensor4, epsilon: f64) -> Result<HosvdCompressed> {
    check_epsilon(epsilon)?;
    check_energy(t.data())?;
    let modes: Vec<ModeTruncation> =
        (1..=4).into_par_iter().map(|mode| truncate_mode(t, mode, epsilon)).collect::<Result<_>>()?;

    let mut core = t.clone();
    for (j, m) in modes.iter().enumerate() {
        core = mode_product(&core, &m.factor.transpose(), j + 1)?;
    }
    let retained_variance =
        [0, 1, 2, 3].map(|j| retained_variance(&modes[j].singular_values, modes[j].factor.cols()));
    let mut it = modes.into_iter().map(|m| m.factor);
    let factors = [(); 4].map(|_| it.next().expect("four modes"));
    Ok(HosvdCompressed { core, factors, epsilon, retained_variance })
}

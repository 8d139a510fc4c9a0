//! Fully connected layer `y = x · Wᵀ` with `W ∈ R^{O×I}`.

use crate::compress::SvdCompressed;
use crate::error::{argument, shape, Result};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearWeights(Matrix);

impl LinearWeights {
    /// `w` is `out_features × in_features`.
    pub fn new(w: Matrix) -> Result<Self> {
        if !w.is_finite() {
            return Err(argument("linear weights have non-finite entries"));
        }
        Ok(Self(w))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.0
    }

    pub fn out_features(&self) -> usize {
        self.0.rows()
    }

    pub fn in_features(&self) -> usize {
        self.0.cols()
    }
}

pub fn linear_forward(x: &Matrix, w: &LinearWeights) -> Result<Matrix> {
    if x.cols() != w.in_features() {
        return Err(shape(format!("input has {} features, layer expects {}", x.cols(), w.in_features())));
    }
    x.matmul_t(w.matrix())
}

/// `∂L/∂W = gyᵀ · a`, laid out `O × I`.
pub fn linear_grad_weight(a: &Matrix, gy: &Matrix) -> Result<LinearWeights> {
    if a.rows() != gy.rows() {
        return Err(shape(format!("batch mismatch: activation {} rows, gradient {}", a.rows(), gy.rows())));
    }
    LinearWeights::new(gy.t_matmul(a)?)
}

/// `∂L/∂W` from an SVD-compressed activation, contracted through the
/// factors as `(gyᵀ · U_KΣ_K) · V_Kᵀ`.
pub fn linear_grad_weight_svd(c: &SvdCompressed, gy: &Matrix) -> Result<LinearWeights> {
    if c.left.rows() != gy.rows() {
        return Err(shape(format!(
            "batch mismatch: activation {} rows, gradient {}",
            c.left.rows(),
            gy.rows()
        )));
    }
    LinearWeights::new(gy.t_matmul(&c.left)?.matmul_t(&c.right)?)
}

/// `∂L/∂x = gy · W`. Uses the exact weights only.
pub fn linear_grad_input(w: &LinearWeights, gy: &Matrix) -> Result<Matrix> {
    if gy.cols() != w.out_features() {
        return Err(shape(format!("gradient has {} features, layer produces {}", gy.cols(), w.out_features())));
    }
    gy.matmul(w.matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::svd_compress;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(m: usize, n: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_and_zero_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(3, 4, &mut rng);
        let id = LinearWeights::new(Matrix::identity(4)).unwrap();
        assert_eq!(linear_forward(&x, &id).unwrap(), x);
        assert!(linear_forward(&Matrix::zeros(3, 4), &id).unwrap().data().iter().all(|v| *v == 0.0));

        let gy = random(4, 5, &mut rng);
        assert_eq!(linear_grad_weight(&Matrix::identity(4), &gy).unwrap().matrix(), &gy.transpose());
        assert!(linear_grad_weight(&x, &Matrix::zeros(3, 2)).unwrap().matrix().data().iter().all(|v| *v == 0.0));
        assert_eq!(linear_grad_input(&id, &x).unwrap(), x);
    }

    #[test]
    fn forward_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random(3, 5, &mut rng);
        let w = LinearWeights::new(random(4, 5, &mut rng)).unwrap();
        let y = linear_forward(&x, &w).unwrap();
        for b in 0..3 {
            for o in 0..4 {
                let mut acc = 0.0;
                for i in 0..5 {
                    acc += x.get(b, i) * w.matrix().get(o, i);
                }
                assert!((y.get(b, o) - acc).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn compressed_gradient_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(6, 8, &mut rng);
        let gy = random(6, 3, &mut rng);
        let dense = linear_grad_weight(&a, &gy).unwrap();
        let c = svd_compress(&a, 1.0).unwrap();
        let fast = linear_grad_weight_svd(&c, &gy).unwrap();
        assert!(fast.matrix().max_abs_diff(dense.matrix()) < 1e-8);

        let lossy = svd_compress(&a, 0.6).unwrap();
        let oracle = linear_grad_weight(&lossy.reconstruct(), &gy).unwrap();
        assert!(linear_grad_weight_svd(&lossy, &gy).unwrap().matrix().max_abs_diff(oracle.matrix()) < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let w = LinearWeights::new(Matrix::zeros(2, 3)).unwrap();
        assert!(linear_forward(&Matrix::zeros(1, 4), &w).is_err());
        assert!(linear_grad_input(&w, &Matrix::zeros(1, 3)).is_err());
        assert!(linear_grad_weight(&Matrix::zeros(2, 3), &Matrix::zeros(1, 2)).is_err());
    }
}

//! Singular value decomposition and explained-variance rank selection.
//!
//! The SVD is a one-sided (Hestenes) Jacobi iteration run on the triangular
//! factor of a Householder QR of the tall orientation of the input. The QR
//! step shrinks the working matrix to `n × n` with `n = min(rows, cols)`, so
//! the heavily rectangular unfoldings produced by the HOSVD stay cheap.
//!
//! Output conventions:
//! - `s` is sorted non-increasing; equal values keep their pre-sort order.
//! - Every left singular vector is signed so that its entry of largest
//!   magnitude (lowest index on ties) is non-negative; `v` is flipped along.

use crate::error::{argument, Error, Result};
use crate::tensor::{dot, Matrix};

/// Off-diagonal convergence threshold of the Jacobi sweeps, relative to the
/// norms of the two columns being compared.
pub const JACOBI_TOLERANCE: f64 = 1e-12;

/// Sweep cap before the SVD reports non-convergence.
pub const MAX_SWEEPS: usize = 100;

/// Cumulative explained variance within this distance of 1 counts as
/// complete, so exact trailing zeros are never kept.
pub const FULL_VARIANCE_SLACK: f64 = 1e-12;

/// Thin SVD `a = u · diag(s) · vᵀ` with `r = min(rows, cols)` triplets.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// `rows × r`, orthonormal columns.
    pub u: Matrix,
    /// `r` singular values, non-increasing.
    pub s: Vec<f64>,
    /// `cols × r`, orthonormal columns.
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// `u_K · diag(s_K) · v_Kᵀ` from the leading `k` triplets.
    pub fn truncated_product(&self, k: usize) -> Matrix {
        let k = k.min(self.s.len());
        let (m, n) = (self.u.rows(), self.v.rows());
        let mut out = Matrix::zeros(m, n);
        for t in 0..k {
            let st = self.s[t];
            for i in 0..m {
                let ui = self.u.get(i, t) * st;
                if ui == 0.0 {
                    continue;
                }
                for j in 0..n {
                    let cur = out.get(i, j);
                    out.set(i, j, cur + ui * self.v.get(j, t));
                }
            }
        }
        out
    }
}

/// Full thin SVD of `a`.
pub fn svd(a: &Matrix) -> Result<SvdFactors> {
    check_input(a)?;
    let (m, n) = (a.rows(), a.cols());
    let mut out = if m >= n {
        // Columns of `a` as contiguous vectors.
        let cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
        let tall = tall_svd(cols, m, true, (m, n))?;
        SvdFactors { u: tall.left.expect("left requested"), s: tall.s, v: tall.right }
    } else {
        // Decompose aᵀ, whose columns are the rows of `a`.
        let cols: Vec<Vec<f64>> = (0..m).map(|i| a.row(i).to_vec()).collect();
        let tall = tall_svd(cols, n, true, (m, n))?;
        SvdFactors { u: tall.right, s: tall.s, v: tall.left.expect("left requested") }
    };
    fix_signs(&mut out.u, Some(&mut out.v));
    Ok(out)
}

/// Left singular vectors and singular values only.
///
/// Produces exactly the `u` and `s` of [`svd`] but skips forming the right
/// factor when `a` is wide, which is the common case for mode unfoldings.
pub fn left_singular(a: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    check_input(a)?;
    let (m, n) = (a.rows(), a.cols());
    let (mut u, s) = if m >= n {
        let cols: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
        let tall = tall_svd(cols, m, true, (m, n))?;
        (tall.left.expect("left requested"), tall.s)
    } else {
        let cols: Vec<Vec<f64>> = (0..m).map(|i| a.row(i).to_vec()).collect();
        let tall = tall_svd(cols, n, false, (m, n))?;
        (tall.right, tall.s)
    };
    fix_signs(&mut u, None);
    Ok((u, s))
}

/// Smallest `K ≥ 1` whose leading squared singular values carry at least
/// `epsilon` of the total energy `Σ s²`.
pub fn rank_for_variance(s: &[f64], epsilon: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(argument(format!("explained variance threshold must lie in [0, 1], got {epsilon}")));
    }
    if s.is_empty() {
        return Err(argument("no singular values"));
    }
    if s.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(argument("singular values must be finite and non-negative"));
    }
    if s.windows(2).any(|w| w[1] > w[0]) {
        return Err(argument("singular values must be sorted non-increasing"));
    }
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(argument("zero-energy input"));
    }
    let mut cumulative = 0.0;
    for (i, v) in s.iter().enumerate() {
        cumulative += v * v;
        let fraction = cumulative / total;
        if fraction >= epsilon || fraction >= 1.0 - FULL_VARIANCE_SLACK {
            return Ok(i + 1);
        }
    }
    Ok(s.len())
}

/// Fraction of `Σ s²` carried by the leading `k` values.
pub fn retained_variance(s: &[f64], k: usize) -> f64 {
    let total: f64 = s.iter().map(|v| v * v).sum();
    let kept: f64 = s.iter().take(k).map(|v| v * v).sum();
    kept / total
}

fn check_input(a: &Matrix) -> Result<()> {
    if !a.is_finite() {
        return Err(argument(format!("svd input {}x{} has non-finite entries", a.rows(), a.cols())));
    }
    Ok(())
}

struct TallSvd {
    /// `m × n` left vectors of the tall matrix, when requested.
    left: Option<Matrix>,
    s: Vec<f64>,
    /// `n × n` right vectors of the tall matrix.
    right: Matrix,
}

/// SVD of an `m × n` matrix (`m ≥ n`) given as `n` columns of length `m`.
fn tall_svd(mut cols: Vec<Vec<f64>>, m: usize, want_left: bool, shape: (usize, usize)) -> Result<TallSvd> {
    let n = cols.len();
    debug_assert!(m >= n);
    let reflectors = householder_in_place(&mut cols);

    // Upper-triangular R, stored by columns.
    let mut w: Vec<Vec<f64>> = (0..n).map(|j| (0..n).map(|i| if i <= j { cols[j][i] } else { 0.0 }).collect()).collect();
    let mut v: Vec<Vec<f64>> = (0..n).map(|j| unit(n, j)).collect();

    // Columns below roundoff level relative to the whole matrix carry no
    // information; rotating them against each other never settles.
    let frob = w.iter().map(|c| dot(c, c)).sum::<f64>().sqrt();
    let floor = n as f64 * f64::EPSILON * frob;
    let floor2 = floor * floor;

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for i in 0..n {
            for j in i + 1..n {
                let alpha = dot(&w[i], &w[i]);
                let beta = dot(&w[j], &w[j]);
                let gamma = dot(&w[i], &w[j]);
                if gamma == 0.0
                    || alpha <= floor2
                    || beta <= floor2
                    || gamma.abs() <= JACOBI_TOLERANCE * alpha.sqrt() * beta.sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_pair(&mut w, i, j, c, s);
                rotate_pair(&mut v, i, j, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Numeric(format!(
            "Jacobi SVD of a {}x{} matrix did not converge in {MAX_SWEEPS} sweeps",
            shape.0, shape.1
        )));
    }

    let mut s: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    if s.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric(format!("non-finite singular value for a {}x{} matrix", shape.0, shape.1)));
    }
    let s_max = s.iter().copied().fold(0.0, f64::max);
    let negligible = floor.max(s_max * 1e-150);
    let mut basis: Vec<Option<Vec<f64>>> = w
        .into_iter()
        .zip(&s)
        .map(|(col, &sv)| if sv > negligible && sv > 0.0 { Some(col.iter().map(|x| x / sv).collect()) } else { None })
        .collect();
    for (sv, b) in s.iter_mut().zip(&basis) {
        if b.is_none() {
            *sv = 0.0;
        }
    }
    complete_basis(&mut basis, n);
    let u_small: Vec<Vec<f64>> = basis.into_iter().map(|c| c.expect("completed")).collect();

    // Stable descending order.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| s[b].partial_cmp(&s[a]).expect("finite"));

    let s_sorted: Vec<f64> = order.iter().map(|&k| s[k]).collect();
    let right = Matrix::from_fn(n, n, |i, k| v[order[k]][i]);
    let left = want_left.then(|| {
        let mut left = Matrix::zeros(m, n);
        for (k, &src) in order.iter().enumerate() {
            let q_col = apply_q(&reflectors, &u_small[src], m);
            for (i, x) in q_col.into_iter().enumerate() {
                left.set(i, k, x);
            }
        }
        left
    });
    Ok(TallSvd { left, s: s_sorted, right })
}

fn unit(n: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[k] = 1.0;
    e
}

fn rotate_pair(cols: &mut [Vec<f64>], i: usize, j: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(j);
    for (x, y) in lo[i].iter_mut().zip(hi[0].iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Householder reflector acting on rows `offset..`; `None` when it is the identity.
struct Reflector {
    offset: usize,
    v: Option<Vec<f64>>,
}

/// Reduces the columns to upper-triangular form in place and returns the
/// reflectors whose product is `Q`.
fn householder_in_place(cols: &mut [Vec<f64>]) -> Vec<Reflector> {
    let n = cols.len();
    let mut reflectors = Vec::with_capacity(n);
    for k in 0..n {
        let x = &cols[k][k..];
        let norm = dot(x, x).sqrt();
        if norm == 0.0 {
            reflectors.push(Reflector { offset: k, v: None });
            continue;
        }
        let alpha = if x[0] >= 0.0 { -norm } else { norm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm = dot(&v, &v).sqrt();
        if vnorm == 0.0 {
            reflectors.push(Reflector { offset: k, v: None });
            continue;
        }
        v.iter_mut().for_each(|e| *e /= vnorm);
        for col in cols.iter_mut().skip(k) {
            let tail = &mut col[k..];
            let p = 2.0 * dot(&v, tail);
            for (t, &vi) in tail.iter_mut().zip(&v) {
                *t -= p * vi;
            }
        }
        reflectors.push(Reflector { offset: k, v: Some(v) });
    }
    reflectors
}

/// `Q · [x; 0]` for an `n`-vector `x`, producing an `m`-vector.
fn apply_q(reflectors: &[Reflector], x: &[f64], m: usize) -> Vec<f64> {
    let mut y = vec![0.0; m];
    y[..x.len()].copy_from_slice(x);
    for r in reflectors.iter().rev() {
        if let Some(v) = &r.v {
            let tail = &mut y[r.offset..];
            let p = 2.0 * dot(v, tail);
            for (t, &vi) in tail.iter_mut().zip(v) {
                *t -= p * vi;
            }
        }
    }
    y
}

/// Fills `None` slots with unit vectors orthogonal to every filled slot.
fn complete_basis(basis: &mut [Option<Vec<f64>>], n: usize) {
    for slot in 0..basis.len() {
        if basis[slot].is_some() {
            continue;
        }
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..n {
            let mut cand = unit(n, e);
            // Two Gram-Schmidt passes.
            for _ in 0..2 {
                for q in basis.iter().flatten() {
                    let p = dot(q, &cand);
                    for (c, &qi) in cand.iter_mut().zip(q) {
                        *c -= p * qi;
                    }
                }
            }
            let norm = dot(&cand, &cand).sqrt();
            if best.as_ref().map_or(true, |(b, _)| norm > *b) {
                best = Some((norm, cand));
            }
        }
        let (norm, mut cand) = best.expect("n > 0");
        cand.iter_mut().for_each(|c| *c /= norm);
        basis[slot] = Some(cand);
    }
}

fn fix_signs(u: &mut Matrix, mut v: Option<&mut Matrix>) {
    for k in 0..u.cols() {
        let mut pivot = 0;
        let mut best = -1.0;
        for i in 0..u.rows() {
            let a = u.get(i, k).abs();
            if a > best {
                best = a;
                pivot = i;
            }
        }
        if u.get(pivot, k) < 0.0 {
            for i in 0..u.rows() {
                u.set(i, k, -u.get(i, k));
            }
            if let Some(v) = v.as_deref_mut() {
                for i in 0..v.rows() {
                    v.set(i, k, -v.get(i, k));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(m: usize, n: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0))
    }

    fn orthonormality_defect(q: &Matrix) -> f64 {
        let g = q.t_matmul(q).unwrap();
        g.max_abs_diff(&Matrix::identity(q.cols()))
    }

    /// Eigenvalues of a symmetric 3×3 matrix from its characteristic cubic
    /// (trigonometric solution), sorted descending.
    fn sym3_eigenvalues(a: &Matrix) -> [f64; 3] {
        let (a11, a12, a13) = (a.get(0, 0), a.get(0, 1), a.get(0, 2));
        let (a22, a23, a33) = (a.get(1, 1), a.get(1, 2), a.get(2, 2));
        let p1 = a12 * a12 + a13 * a13 + a23 * a23;
        let q = (a11 + a22 + a33) / 3.0;
        let p2 = (a11 - q).powi(2) + (a22 - q).powi(2) + (a33 - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let b = Matrix::from_fn(3, 3, |i, j| (a.get(i, j) - if i == j { q } else { 0.0 }) / p);
        let det_b = b.get(0, 0) * (b.get(1, 1) * b.get(2, 2) - b.get(1, 2) * b.get(2, 1))
            - b.get(0, 1) * (b.get(1, 0) * b.get(2, 2) - b.get(1, 2) * b.get(2, 0))
            + b.get(0, 2) * (b.get(1, 0) * b.get(2, 1) - b.get(1, 1) * b.get(2, 0));
        let r = (det_b / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        let e2 = 3.0 * q - e1 - e3;
        [e1, e2, e3]
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let f = svd(&Matrix::identity(3)).unwrap();
        assert_eq!(f.s, vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_matrix() {
        let a = Matrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let f = svd(&a).unwrap();
        assert_eq!(f.s, vec![4.0, 3.0]);
        for q in [&f.u, &f.v] {
            for k in 0..2 {
                let col = q.column(k);
                assert_eq!(col.iter().filter(|x| x.abs() == 1.0).count(), 1);
                assert_eq!(col.iter().filter(|x| **x == 0.0).count(), 1);
            }
        }
    }

    #[test]
    fn random_tall_and_wide_reconstruct() {
        for (m, n, seed) in [(8, 5, 1), (5, 8, 2), (1, 7, 3), (7, 1, 4), (6, 6, 5)] {
            let a = random_matrix(m, n, seed);
            let f = svd(&a).unwrap();
            assert_eq!(f.rank(), m.min(n));
            let err = f.truncated_product(f.rank()).max_abs_diff(&a);
            assert!(err <= 1e-6 * a.frobenius_norm(), "{m}x{n}: {err}");
            assert!(orthonormality_defect(&f.u) < 1e-8);
            assert!(orthonormality_defect(&f.v) < 1e-8);
            assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn singular_values_match_gram_eigenvalues() {
        for seed in 0..20 {
            let a = random_matrix(3, 3, 100 + seed);
            let gram = a.t_matmul(&a).unwrap();
            let eig = sym3_eigenvalues(&gram);
            let f = svd(&a).unwrap();
            for (sv, ev) in f.s.iter().zip(eig) {
                assert!((sv * sv - ev).abs() < 1e-10 * (1.0 + ev.abs()), "seed {seed}: {sv}² vs {ev}");
            }
        }
    }

    #[test]
    fn rank_deficient_input_keeps_orthonormal_factors() {
        let mut a = random_matrix(6, 4, 9);
        // Duplicate a column and zero another.
        for i in 0..6 {
            a.set(i, 3, a.get(i, 0));
            a.set(i, 2, 0.0);
        }
        let f = svd(&a).unwrap();
        assert!(f.s[2] < 1e-12 && f.s[3] < 1e-12);
        assert!(orthonormality_defect(&f.u) < 1e-8);
        assert!(orthonormality_defect(&f.v) < 1e-8);
        assert!(f.truncated_product(4).max_abs_diff(&a) < 1e-12);

        let zero = svd(&Matrix::zeros(3, 2)).unwrap();
        assert_eq!(zero.s, vec![0.0, 0.0]);
        assert!(orthonormality_defect(&zero.u) < 1e-12);
    }

    #[test]
    fn identical_rows_converge() {
        let row: Vec<f64> = (0..24).map(|j| ((j * 7) % 5) as f64 * 0.37 - 0.5).collect();
        let a = Matrix::from_fn(4, 24, |_, j| row[j]);
        let f = svd(&a).unwrap();
        assert!(f.s[1..].iter().all(|&x| x == 0.0));
        assert!(orthonormality_defect(&f.u) < 1e-12);
        assert!(f.truncated_product(1).max_abs_diff(&a) < 1e-12);
        let (u, s) = left_singular(&a).unwrap();
        assert_eq!(s, f.s);
        assert!(orthonormality_defect(&u) < 1e-12);
    }

    #[test]
    fn left_singular_agrees_with_full_svd() {
        for (m, n) in [(4, 30), (30, 4), (5, 5)] {
            let a = random_matrix(m, n, (m * 31 + n) as u64);
            let f = svd(&a).unwrap();
            let (u, s) = left_singular(&a).unwrap();
            assert_eq!(u, f.u);
            assert_eq!(s, f.s);
        }
    }

    #[test]
    fn sign_convention_makes_largest_entry_nonnegative() {
        let a = random_matrix(5, 9, 77);
        let f = svd(&a).unwrap();
        for k in 0..f.u.cols() {
            let col = f.u.column(k);
            let (idx, _) = col.iter().enumerate().fold((0, -1.0), |acc, (i, x)| if x.abs() > acc.1 { (i, x.abs()) } else { acc });
            assert!(col[idx] >= 0.0);
        }
        assert_eq!(svd(&a).unwrap(), f);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut a = Matrix::identity(2);
        a.set(0, 1, f64::NAN);
        assert!(matches!(svd(&a), Err(Error::Argument(_))));
    }

    #[test]
    fn rank_selection_examples() {
        assert_eq!(rank_for_variance(&[4.0, 3.0], 0.6).unwrap(), 1);
        assert_eq!(rank_for_variance(&[4.0, 3.0], 0.7).unwrap(), 2);
        assert_eq!(rank_for_variance(&[4.0, 3.0, 1.0], 0.0).unwrap(), 1);
        assert_eq!(rank_for_variance(&[4.0, 3.0, 1.0], 1.0).unwrap(), 3);
        assert_eq!(rank_for_variance(&[4.0, 3.0, 0.0, 0.0], 1.0).unwrap(), 2);
        assert!(rank_for_variance(&[0.0, 0.0], 0.5).is_err());
        assert!(rank_for_variance(&[1.0], 1.5).is_err());
        assert!(rank_for_variance(&[1.0, 2.0], 0.5).is_err());
    }
}

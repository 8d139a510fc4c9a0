//! Self-checks run by `lowrank verify`: gradient correctness, decomposition
//! quality and the analytic formulas, each over seeded random cases.

use clap::ValueEnum;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lowrank_core::analytics::{backward_forward_ratio, compression_ratio, compression_ratio_parts, snr, speedup_ratio};
use lowrank_core::autograd::{
    conv2d_forward, conv2d_grad_input, conv2d_grad_weight_exact, conv2d_grad_weight_hosvd, linear_forward,
    linear_grad_input, linear_grad_weight, linear_grad_weight_svd,
};
use lowrank_core::linalg::retained_variance;
use lowrank_core::{
    hosvd_compress, rank_for_variance, svd, svd_compress, ConvSpec, ConvWeights, LayerShape, LinearWeights, Matrix,
    RankTuple, Tensor4,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Gradients,
    Decomp,
    Analytics,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    /// First few failure descriptions.
    pub failures: Vec<String>,
}

impl SuiteResult {
    fn new(name: &'static str) -> Self {
        Self { name, passed: 0, total: 0, failures: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: impl FnOnce() -> String) {
        self.total += 1;
        if ok {
            self.passed += 1;
        } else if self.failures.len() < 10 {
            self.failures.push(what());
        }
    }

    pub fn all_passed(&self) -> bool {
        self.passed == self.total
    }
}

pub fn run_suites(suite: Suite) -> Vec<SuiteResult> {
    match suite {
        Suite::Gradients => vec![gradients()],
        Suite::Decomp => vec![decomp()],
        Suite::Analytics => vec![analytics()],
        Suite::All => vec![gradients(), decomp(), analytics()],
    }
}

pub fn format_table(results: &[SuiteResult]) -> String {
    let mut out = format!("{:<12} {:>8} {:>8}\n", "suite", "passed", "total");
    for r in results {
        out.push_str(&format!("{:<12} {:>8} {:>8}\n", r.name, r.passed, r.total));
        for f in &r.failures {
            out.push_str(&format!("  FAILED: {f}\n"));
        }
    }
    out
}

fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor4 {
    Tensor4::from_fn(dims, |_| rng.random_range(-1.0..1.0))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// A random conv problem: input dims, layer and output channels.
#[derive(Debug, Clone, Copy)]
pub struct ConvCase {
    pub input: [usize; 4],
    pub out_channels: usize,
    pub spec: ConvSpec,
}

/// Draws B ≤ 4, C, C' ≤ 8, H, W ≤ 12, D ∈ {1,3,5}, stride and dilation in
/// {1,2}, groups in {1, 2, gcd(C,C')} and padding in {0,1}, redrawing until
/// the output is non-empty.
pub fn random_conv_case(rng: &mut ChaCha8Rng) -> ConvCase {
    loop {
        let (b, c, co) = (rng.random_range(1..=4), rng.random_range(1..=8), rng.random_range(1..=8));
        let (h, w) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let kernel = [1, 3, 5][rng.random_range(0..3)];
        let (stride, dilation, padding) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(0..=1));
        let groups = match rng.random_range(0..3) {
            0 => 1,
            1 => 2,
            _ => gcd(c, co),
        };
        if c % groups != 0 || co % groups != 0 {
            continue;
        }
        let spec = ConvSpec::new(kernel, stride, dilation, groups, padding).expect("positive parameters");
        if spec.output_size(h).is_ok() && spec.output_size(w).is_ok() {
            return ConvCase { input: [b, c, h, w], out_channels: co, spec };
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn gradients() -> SuiteResult {
    let mut r = SuiteResult::new("gradients");
    let mut rng = ChaCha8Rng::seed_from_u64(0x6752_6164);
    let h = 1e-5;
    for case_index in 0..60 {
        let case = random_conv_case(&mut rng);
        let spec = case.spec;
        let [_, c, ih, iw] = case.input;
        let x = random_tensor(&mut rng, case.input);
        let w = ConvWeights::new(random_tensor(&mut rng, [case.out_channels, c / spec.groups, spec.kernel, spec.kernel]))
            .expect("weight shape");
        let y = conv2d_forward(&x, &w, &spec).expect("forward");
        let gy = random_tensor(&mut rng, y.dims());
        let loss = |x: &Tensor4, w: &ConvWeights| conv2d_forward(x, w, &spec).expect("forward").inner(&gy);
        let gw = conv2d_grad_weight_exact(&x, &gy, &spec).expect("grad weight");
        let gx = conv2d_grad_input(&w, &gy, &spec, case.input).expect("grad input");

        for _ in 0..2 {
            let i = rng.random_range(0..w.tensor().len());
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp.tensor_mut().data_mut()[i] += h;
            wm.tensor_mut().data_mut()[i] -= h;
            let fd = (loss(&x, &wp) - loss(&x, &wm)) / (2.0 * h);
            let an = gw.tensor().data()[i];
            r.check(rel_err(fd, an) <= 1e-4, || format!("conv case {case_index}: dW[{i}] fd {fd} vs {an}"));

            let j = rng.random_range(0..x.len());
            let (mut xp, mut xm) = (x.clone(), x.clone());
            xp.data_mut()[j] += h;
            xm.data_mut()[j] -= h;
            let fd = (loss(&xp, &w) - loss(&xm, &w)) / (2.0 * h);
            let an = gx.data()[j];
            r.check(rel_err(fd, an) <= 1e-4, || format!("conv case {case_index}: dX[{j}] fd {fd} vs {an}"));
        }

        let (a, b, d) = (y.inner(&gy), x.inner(&gx), w.tensor().inner(gw.tensor()));
        let scale = a.abs().max(1e-300);
        r.check((a - b).abs() <= 1e-9 * scale && (a - d).abs() <= 1e-9 * scale, || {
            format!("conv case {case_index} ({ih}x{iw}, {spec:?}): adjoint {a} {b} {d}")
        });

        for eps in [1.0, 0.5, 0.8, 0.9] {
            let compressed = hosvd_compress(&x, eps).expect("compress");
            let got = conv2d_grad_weight_hosvd(&compressed, &gy, &spec).expect("hosvd grad");
            let want = if eps == 1.0 {
                gw.clone()
            } else {
                conv2d_grad_weight_exact(&compressed.reconstruct(), &gy, &spec).expect("oracle")
            };
            let diff = got.tensor().max_abs_diff(want.tensor());
            r.check(diff <= 1e-8, || format!("conv case {case_index}: hosvd eps {eps} differs by {diff}"));
        }
    }

    for case_index in 0..20 {
        let (b, i, o) = (rng.random_range(1..=6), rng.random_range(1..=10), rng.random_range(1..=6));
        let a = random_matrix(&mut rng, b, i);
        let w = LinearWeights::new(random_matrix(&mut rng, o, i)).expect("weights");
        let gy = random_matrix(&mut rng, b, o);
        let loss = |a: &Matrix, w: &LinearWeights| {
            let y = linear_forward(a, w).expect("forward");
            y.data().iter().zip(gy.data()).map(|(p, q)| p * q).sum::<f64>()
        };
        let gw = linear_grad_weight(&a, &gy).expect("grad weight");
        let ga = linear_grad_input(&w, &gy).expect("grad input");
        let k = rng.random_range(0..o * i);
        let (mut wp, mut wm) = (w.clone(), w.clone());
        wp.matrix_mut().data_mut()[k] += h;
        wm.matrix_mut().data_mut()[k] -= h;
        let fd = (loss(&a, &wp) - loss(&a, &wm)) / (2.0 * h);
        r.check(rel_err(fd, gw.matrix().data()[k]) <= 1e-4, || format!("linear case {case_index}: dW fd {fd}"));
        let k = rng.random_range(0..b * i);
        let (mut ap, mut am) = (a.clone(), a.clone());
        ap.data_mut()[k] += h;
        am.data_mut()[k] -= h;
        let fd = (loss(&ap, &w) - loss(&am, &w)) / (2.0 * h);
        r.check(rel_err(fd, ga.data()[k]) <= 1e-4, || format!("linear case {case_index}: dA fd {fd}"));

        let c = svd_compress(&a, 0.8).expect("compress");
        let got = linear_grad_weight_svd(&c, &gy).expect("svd grad");
        let want = linear_grad_weight(&c.reconstruct(), &gy).expect("oracle");
        let diff = got.matrix().max_abs_diff(want.matrix());
        r.check(diff <= 1e-10, || format!("linear case {case_index}: svd gradient differs by {diff}"));
    }
    r
}

fn decomp() -> SuiteResult {
    let mut r = SuiteResult::new("decomp");
    let mut rng = ChaCha8Rng::seed_from_u64(0x6465_636f);
    for case_index in 0..50 {
        let (m, n) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let a = random_matrix(&mut rng, m, n);
        let f = svd(&a).expect("svd");
        let energy = a.frobenius_norm().powi(2);
        let k = rng.random_range(0..=f.s.len());
        let approx = f.truncated_product(k);
        let err: f64 = a.data().iter().zip(approx.data()).map(|(x, y)| (x - y) * (x - y)).sum();
        let tail: f64 = f.s[k..].iter().map(|s| s * s).sum();
        r.check((err - tail).abs() <= 1e-9 * energy, || format!("matrix {case_index}: tail {err} vs {tail}"));
        let ortho = |q: &Matrix| q.t_matmul(q).expect("gram").max_abs_diff(&Matrix::identity(q.cols()));
        r.check(ortho(&f.u) <= 1e-8 && ortho(&f.v) <= 1e-8, || format!("matrix {case_index}: factors not orthonormal"));
        r.check(f.s.windows(2).all(|w| w[0] >= w[1]), || format!("matrix {case_index}: unsorted spectrum"));
    }
    for case_index in 0..50 {
        let dims = [rng.random_range(1..=6), rng.random_range(1..=6), rng.random_range(1..=8), rng.random_range(1..=8)];
        let t = random_tensor(&mut rng, dims);
        let eps = [0.5, 0.8, 0.9, 0.99][case_index % 4];
        let c = hosvd_compress(&t, eps).expect("hosvd");
        let energy = t.frobenius_norm().powi(2);
        let recon = c.reconstruct();
        let err: f64 = recon.data().iter().zip(t.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        let bound: f64 = c.retained_variance.iter().map(|v| (1.0 - v) * energy).sum();
        r.check(err <= bound + 1e-9 * energy, || format!("tensor {case_index}: error {err} above bound {bound}"));
        for mode in 1..=4 {
            let unfolding = lowrank_core::mode_unfold(&t, mode).expect("unfold");
            let s = svd(&unfolding).expect("svd").s;
            let k = c.ranks()[mode - 1];
            let minimal = k == rank_for_variance(&s, eps).expect("rank")
                && retained_variance(&s, k) >= eps
                && (k == 1 || retained_variance(&s, k - 1) < eps);
            r.check(minimal, || format!("tensor {case_index}: mode {mode} rank {k} not minimal"));
        }
    }
    r
}

fn analytics() -> SuiteResult {
    let mut r = SuiteResult::new("analytics");
    r.check(snr(0.8).ok() == Some(25.0), || format!("snr(0.8) = {:?}", snr(0.8)));
    let grid: Vec<f64> = (0..100).map(|i| snr(0.99 * i as f64 / 99.0).expect("in range")).collect();
    r.check(grid.windows(2).all(|w| w[0] < w[1]), || "snr not strictly increasing".into());

    let mut rng = ChaCha8Rng::seed_from_u64(0x616e_616c);
    for case_index in 0..1000 {
        let mut d = || rng.random_range(1..=64);
        let (b, c, co, h, w, kernel) = (d(), d(), d(), d(), d(), [1, 3, 5, 7][case_index % 4]);
        let s = LayerShape::new(b, c, co, h, w, h, w, kernel).expect("positive");
        r.check(backward_forward_ratio(&s) < 1.0, || format!("shape {s:?}: backward/forward ratio >= 1"));
        let k = RankTuple::new([b, c, h, w].map(|m| rng.random_range(1..=m)), &s).expect("in range");
        let (dense, stored) = compression_ratio_parts(&s, &k);
        let back = compression_ratio(&s, &k) * stored as f64;
        r.check((back - dense as f64).abs() <= dense as f64 * f64::EPSILON, || format!("shape {s:?}: R_C identity"));
    }
    let s = LayerShape::new(16, 12, 10, 9, 11, 9, 11, 3).expect("positive");
    for j in 0..4 {
        let mut k = [3, 3, 3, 3];
        let (mut prev_c, mut prev_s) = (f64::INFINITY, f64::INFINITY);
        let mut decreasing = true;
        for kj in 1..=s.input_dims()[j] {
            k[j] = kj;
            let t = RankTuple::new(k, &s).expect("in range");
            let (rc, rs) = (compression_ratio(&s, &t), speedup_ratio(&s, &t));
            decreasing &= rc < prev_c && rs < prev_s;
            (prev_c, prev_s) = (rc, rs);
        }
        r.check(decreasing, || format!("ratios not decreasing in K{}", j + 1));
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suites_pass() {
        for result in run_suites(Suite::All) {
            assert!(result.all_passed(), "{}", format_table(&[result]));
        }
    }
}

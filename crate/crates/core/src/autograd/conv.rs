//! 2-D convolution (cross-correlation) with stride, dilation, groups and
//! symmetric zero padding, and its gradients.
//!
//! Channel grouping: with `G` groups, input channels split into blocks of
//! `N_in = C / G` and output channels into blocks of `N_out = C' / G`.
//! Output channel `g·N_out + c'` only sees input channels `g·N_in + c`.

use crate::compress::{HosvdCompressed, SvdCompressed};
use crate::error::{argument, shape, Result};
use crate::tensor::{mode_product, Matrix, Tensor4};

/// Geometry of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct ConvSpec {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
    pub groups: usize,
    pub padding: usize,
}

impl ConvSpec {
    pub fn new(kernel: usize, stride: usize, dilation: usize, groups: usize, padding: usize) -> Result<Self> {
        let spec = Self { kernel, stride, dilation, groups, padding };
        spec.validate()?;
        Ok(spec)
    }

    /// Unit stride and dilation, one group, no padding.
    pub fn simple(kernel: usize) -> Self {
        Self { kernel, stride: 1, dilation: 1, groups: 1, padding: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 || self.stride == 0 || self.dilation == 0 || self.groups == 0 {
            return Err(argument(format!("kernel, stride, dilation and groups must be >= 1: {self:?}")));
        }
        Ok(())
    }

    /// `⌊(n + 2·padding − dilation·(D−1) − 1) / stride⌋ + 1`.
    pub fn output_size(&self, n: usize) -> Result<usize> {
        let span = self.dilation * (self.kernel - 1) + 1;
        let padded = n + 2 * self.padding;
        if padded < span {
            return Err(shape(format!("input extent {n} (padded {padded}) smaller than kernel span {span}")));
        }
        Ok((padded - span) / self.stride + 1)
    }
}

/// Kernel tensor of dims `(C', C/groups, D, D)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights(Tensor4);

impl ConvWeights {
    pub fn new(t: Tensor4) -> Result<Self> {
        let [_, _, kh, kw] = t.dims();
        if kh != kw {
            return Err(argument(format!("kernel must be square, got {kh}x{kw}")));
        }
        if !t.is_finite() {
            return Err(argument("conv weights have non-finite entries"));
        }
        Ok(Self(t))
    }

    pub fn tensor(&self) -> &Tensor4 {
        &self.0
    }

    pub fn tensor_mut(&mut self) -> &mut Tensor4 {
        &mut self.0
    }

    pub fn into_tensor(self) -> Tensor4 {
        self.0
    }

    pub fn out_channels(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn in_channels_per_group(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn kernel(&self) -> usize {
        self.0.dims()[2]
    }
}

/// Resolved sizes of one convolution call.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    batch: usize,
    c_in: usize,
    c_out: usize,
    h: usize,
    w: usize,
    h_out: usize,
    w_out: usize,
    n_in: usize,
    n_out: usize,
    spec: ConvSpec,
}

impl Geometry {
    fn bind(input: [usize; 4], c_out: usize, spec: &ConvSpec) -> Result<Self> {
        spec.validate()?;
        let [batch, c_in, h, w] = input;
        if c_in % spec.groups != 0 || c_out % spec.groups != 0 {
            return Err(shape(format!(
                "channels ({c_in} in, {c_out} out) not divisible by {} groups",
                spec.groups
            )));
        }
        Ok(Self {
            batch,
            c_in,
            c_out,
            h,
            w,
            h_out: spec.output_size(h)?,
            w_out: spec.output_size(w)?,
            n_in: c_in / spec.groups,
            n_out: c_out / spec.groups,
            spec: *spec,
        })
    }

    fn weight_dims(&self) -> [usize; 4] {
        [self.c_out, self.n_in, self.spec.kernel, self.spec.kernel]
    }

    fn output_dims(&self) -> [usize; 4] {
        [self.batch, self.c_out, self.h_out, self.w_out]
    }

    fn check_weights(&self, w: &ConvWeights) -> Result<()> {
        if w.tensor().dims() != self.weight_dims() {
            return Err(shape(format!(
                "weights {:?} do not match expected {:?}",
                w.tensor().dims(),
                self.weight_dims()
            )));
        }
        Ok(())
    }

    fn check_output(&self, gy: &Tensor4) -> Result<()> {
        if gy.dims() != self.output_dims() {
            return Err(shape(format!(
                "output gradient {:?} does not match conv output {:?}",
                gy.dims(),
                self.output_dims()
            )));
        }
        Ok(())
    }

    /// Output positions `o` for which `o·stride + tap·dilation − padding`
    /// falls inside `[0, extent)`, as a half-open range.
    #[inline]
    fn valid_outputs(&self, tap: usize, extent: usize, out_extent: usize) -> (usize, usize) {
        let s = self.spec.stride as isize;
        let offset = (tap * self.spec.dilation) as isize - self.spec.padding as isize;
        // o·s + offset >= 0  and  o·s + offset <= extent − 1
        let lo = if offset >= 0 { 0 } else { (-offset + s - 1) / s };
        let hi_num = extent as isize - 1 - offset;
        let hi = if hi_num < 0 { 0 } else { (hi_num / s + 1).min(out_extent as isize) };
        let lo = lo.min(hi);
        (lo as usize, hi as usize)
    }

    #[inline]
    fn input_index(&self, o: usize, tap: usize) -> usize {
        o * self.spec.stride + tap * self.spec.dilation - self.spec.padding
    }
}

/// Calls `f(out_plane_index, in_plane_index, weight_index, hi_range…)` for
/// every (b, output channel, input channel, kernel tap) combination.
fn for_each_tap(g: &Geometry, mut f: impl FnMut(usize, usize, usize, usize, usize)) {
    let d = g.spec.kernel;
    for b in 0..g.batch {
        for co in 0..g.c_out {
            let group = co / g.n_out;
            for ic in 0..g.n_in {
                let ci = group * g.n_in + ic;
                for k in 0..d {
                    for l in 0..d {
                        f(b * g.c_out + co, b * g.c_in + ci, ((co * g.n_in + ic) * d + k) * d + l, k, l);
                    }
                }
            }
        }
    }
}

/// Grouped cross-correlation `y = x ⋆ w`.
pub fn conv2d_forward(x: &Tensor4, w: &ConvWeights, spec: &ConvSpec) -> Result<Tensor4> {
    let g = Geometry::bind(x.dims(), w.out_channels(), spec)?;
    g.check_weights(w)?;
    let mut y = Tensor4::zeros(g.output_dims());
    let (x_plane, y_plane) = (g.h * g.w, g.h_out * g.w_out);
    let (xd, wd) = (x.data(), w.tensor().data());
    let yd = y.data_mut();
    for_each_tap(&g, |out_p, in_p, wi, k, l| {
        let wv = wd[wi];
        if wv == 0.0 {
            return;
        }
        let (h0, h1) = g.valid_outputs(k, g.h, g.h_out);
        let (w0, w1) = g.valid_outputs(l, g.w, g.w_out);
        for ho in h0..h1 {
            let hi = g.input_index(ho, k);
            let y_row = out_p * y_plane + ho * g.w_out;
            let x_row = in_p * x_plane + hi * g.w;
            for wo in w0..w1 {
                yd[y_row + wo] += wv * xd[x_row + g.input_index(wo, l)];
            }
        }
    });
    Ok(y)
}

/// `ΔW_{c',c,k,l} = Σ_{b,h',w'} x̲_{b, c_g, h'·s + k·d, w'·s + l·d} · ΔY_{b,c',h',w'}`
/// over the zero-padded input.
pub fn conv2d_grad_weight_exact(x: &Tensor4, gy: &Tensor4, spec: &ConvSpec) -> Result<ConvWeights> {
    let g = Geometry::bind(x.dims(), gy.dims()[1], spec)?;
    g.check_output(gy)?;
    let mut dw = Tensor4::zeros(g.weight_dims());
    let (x_plane, y_plane) = (g.h * g.w, g.h_out * g.w_out);
    let (xd, gd) = (x.data(), gy.data());
    let dwd = dw.data_mut();
    for_each_tap(&g, |out_p, in_p, wi, k, l| {
        let (h0, h1) = g.valid_outputs(k, g.h, g.h_out);
        let (w0, w1) = g.valid_outputs(l, g.w, g.w_out);
        let mut acc = 0.0;
        for ho in h0..h1 {
            let hi = g.input_index(ho, k);
            let y_row = out_p * y_plane + ho * g.w_out;
            let x_row = in_p * x_plane + hi * g.w;
            for wo in w0..w1 {
                acc += gd[y_row + wo] * xd[x_row + g.input_index(wo, l)];
            }
        }
        dwd[wi] += acc;
    });
    ConvWeights::new(dw)
}

/// Gradient of `⟨conv2d_forward(x, w), gy⟩` with respect to `x`: the
/// adjoint of the forward map. `input_dims` is needed because strided
/// convolutions do not determine the input extent from the output.
pub fn conv2d_grad_input(
    w: &ConvWeights,
    gy: &Tensor4,
    spec: &ConvSpec,
    input_dims: [usize; 4],
) -> Result<Tensor4> {
    let g = Geometry::bind(input_dims, w.out_channels(), spec)?;
    g.check_weights(w)?;
    g.check_output(gy)?;
    let mut gx = Tensor4::zeros(input_dims);
    let (x_plane, y_plane) = (g.h * g.w, g.h_out * g.w_out);
    let (wd, gd) = (w.tensor().data(), gy.data());
    let gxd = gx.data_mut();
    for_each_tap(&g, |out_p, in_p, wi, k, l| {
        let wv = wd[wi];
        if wv == 0.0 {
            return;
        }
        let (h0, h1) = g.valid_outputs(k, g.h, g.h_out);
        let (w0, w1) = g.valid_outputs(l, g.w, g.w_out);
        for ho in h0..h1 {
            let hi = g.input_index(ho, k);
            let y_row = out_p * y_plane + ho * g.w_out;
            let x_row = in_p * x_plane + hi * g.w;
            for wo in w0..w1 {
                gxd[x_row + g.input_index(wo, l)] += wv * gd[y_row + wo];
            }
        }
    });
    Ok(gx)
}

/// `factor` with `padding` zero rows above and below.
fn pad_rows(factor: &Matrix, padding: usize) -> Matrix {
    let rows = factor.rows() + 2 * padding;
    Matrix::from_fn(rows, factor.cols(), |i, j| {
        if i < padding || i >= padding + factor.rows() {
            0.0
        } else {
            factor.get(i - padding, j)
        }
    })
}

/// Weight gradient computed from the HOSVD factors without rebuilding the
/// activation.
///
/// The contraction runs in four stages:
/// 1. `Z1[k1,c',h',w'] = Σ_b ΔY[b,c',h',w'] · U1[b,k1]`
/// 2. `Z2[k1,k2,h,k4] = Σ_k3 S[k1,k2,k3,k4] · U3̲[h,k3]`
/// 3. `Z3[k1,k2,h,w]  = Σ_k4 Z2[k1,k2,h,k4] · U4̲[w,k4]`
/// 4. `Z4[c',k2,k,l]  = Σ_{h',w',k1} Z3[k1,k2,h'·s+k·d,w'·s+l·d] · Z1[k1,c',h',w']`
///
/// and finally `ΔW[c',c,k,l] = Σ_k2 Z4[c',k2,k,l] · U2[c_g,k2]`. Padding is
/// carried only by the zero rows of `U3̲` and `U4̲`.
pub fn conv2d_grad_weight_hosvd(c: &HosvdCompressed, gy: &Tensor4, spec: &ConvSpec) -> Result<ConvWeights> {
    let g = Geometry::bind(c.original_dims(), gy.dims()[1], spec)?;
    g.check_output(gy)?;
    let [u1, u2, u3, u4] = &c.factors;
    let [k1, k2, _, _] = c.ranks();
    let d = spec.kernel;

    let z1 = mode_product(gy, &u1.transpose(), 1)?;
    let z2 = mode_product(&c.core, &pad_rows(u3, spec.padding), 3)?;
    let z3 = mode_product(&z2, &pad_rows(u4, spec.padding), 4)?;

    let (hp, wp) = (g.h + 2 * spec.padding, g.w + 2 * spec.padding);
    let (z1d, z3d) = (z1.data(), z3.data());
    let mut z4 = vec![0.0; g.c_out * k2 * d * d];
    for co in 0..g.c_out {
        for j2 in 0..k2 {
            for k in 0..d {
                for l in 0..d {
                    let mut acc = 0.0;
                    for j1 in 0..k1 {
                        let z3_plane = (j1 * k2 + j2) * hp * wp;
                        let z1_plane = (j1 * g.c_out + co) * g.h_out * g.w_out;
                        for ho in 0..g.h_out {
                            let h = ho * spec.stride + k * spec.dilation;
                            let z3_row = z3_plane + h * wp;
                            let z1_row = z1_plane + ho * g.w_out;
                            for wo in 0..g.w_out {
                                let w = wo * spec.stride + l * spec.dilation;
                                acc += z3d[z3_row + w] * z1d[z1_row + wo];
                            }
                        }
                    }
                    z4[((co * k2 + j2) * d + k) * d + l] = acc;
                }
            }
        }
    }

    let mut dw = Tensor4::zeros(g.weight_dims());
    let dwd = dw.data_mut();
    for co in 0..g.c_out {
        let group = co / g.n_out;
        for ic in 0..g.n_in {
            let cg = group * g.n_in + ic;
            for kl in 0..d * d {
                let mut acc = 0.0;
                for j2 in 0..k2 {
                    acc += z4[(co * k2 + j2) * d * d + kl] * u2.get(cg, j2);
                }
                dwd[(co * g.n_in + ic) * d * d + kl] = acc;
            }
        }
    }
    ConvWeights::new(dw)
}

/// Weight gradient from an SVD-compressed activation: rebuild the
/// `B × (CHW)` matrix, then take the exact gradient.
pub fn conv2d_grad_weight_svd(c: &SvdCompressed, gy: &Tensor4, spec: &ConvSpec) -> Result<ConvWeights> {
    let x = c.reconstruct_tensor()?;
    conv2d_grad_weight_exact(&x, gy, spec)
}

//! Forward and backward kernels. These are pure functions; the tape in
//! [`super::Tape`] records which of them ran and replays the backward halves.

use super::{Scalar, Shape, Tensor};
use crate::error::{Error, Result};

/// Lower clamp on vector norms inside [`cosine_distance`].
pub const COSINE_EPS: f64 = 1e-8;

fn check_bias<T: Scalar>(op: &'static str, bias: &Tensor<T>, cout: usize) -> Result<()> {
    if bias.numel() != cout {
        return Err(Error::shape(
            op,
            "bias length",
            format!("expected {cout} values, got {}", bias.numel()),
        ));
    }
    Ok(())
}

fn conv_geometry<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<(usize, usize)> {
    let [_, cin, h, w] = input.dims();
    let [cout, wcin, kh, kw] = weight.dims();
    if kh != kw || !(1..=3).contains(&kh) {
        return Err(Error::Unsupported(format!(
            "conv2d kernel must be square with size 1, 2 or 3, got {kh}x{kw}"
        )));
    }
    if stride != 1 && stride != 2 {
        return Err(Error::Unsupported(format!(
            "conv2d stride must be 1 or 2, got {stride}"
        )));
    }
    if wcin != cin {
        return Err(Error::shape(
            "conv2d",
            "input channels",
            format!("input has {cin} channels, weight expects {wcin}"),
        ));
    }
    check_bias("conv2d", bias, cout)?;
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return Err(Error::shape(
            "conv2d",
            "spatial extent",
            format!("padded input {}x{} smaller than kernel {kh}", h + 2 * pad, w + 2 * pad),
        ));
    }
    Ok(((h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1))
}

/// Unfolds one sample `(C, H, W)` into `(C*k*k, Ho*Wo)` columns.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    src: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let plane = ho * wo;
    for ci in 0..c {
        let chan = &src[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((ci * k + ky) * k + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let dst = &mut row[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let line = &chan[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            line[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `dst`.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    cols: &[T],
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
    dst: &mut [T],
) {
    let plane = ho * wo;
    for ci in 0..c {
        let chan = &mut dst[ci * h * w..(ci + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((ci * k + ky) * k + kx) * plane..][..plane];
                for oy in 0..ho {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let line = &mut chan[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..wo {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            line[ix as usize] = line[ix as usize] + row[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn is_pointwise(k: usize, stride: usize, pad: usize) -> bool {
    k == 1 && stride == 1 && pad == 0
}

/// 2-D convolution with zero padding. `weight` is `(Cout, Cin, k, k)`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let (ho, wo) = conv_geometry(input, weight, bias, stride, pad)?;
    let [n, cin, h, w] = input.dims();
    let [cout, _, k, _] = weight.dims();
    let plane = ho * wo;
    let depth = cin * k * k;
    let mut out = Tensor::zeros([n, cout, ho, wo]);
    let mut cols = if is_pointwise(k, stride, pad) {
        Vec::new()
    } else {
        vec![T::zero(); depth * plane]
    };
    for i in 0..n {
        let dst = out.sample_mut(i);
        for (co, chunk) in dst.chunks_mut(plane).enumerate() {
            chunk.fill(bias.data()[co]);
        }
        let src: &[T] = if cols.is_empty() {
            input.sample(i)
        } else {
            im2col(input.sample(i), cin, h, w, k, stride, pad, ho, wo, &mut cols);
            &cols
        };
        T::gemm(cout, depth, plane, weight.data(), false, src, false, dst, true);
    }
    Ok(out)
}

/// Gradients of [`conv2d`]: `(d_input, d_weight, d_bias)`. `d_input` is only
/// computed when `need_input` is set.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [n, cin, h, w] = input.dims();
    let [cout, _, k, _] = weight.dims();
    let [_, _, ho, wo] = grad_out.dims();
    let plane = ho * wo;
    let depth = cin * k * k;
    let pointwise = is_pointwise(k, stride, pad);
    let mut d_weight = Tensor::zeros(weight.shape());
    let mut d_bias = vec![T::zero(); cout];
    let mut d_input = need_input.then(|| Tensor::zeros(input.shape()));
    let mut cols = vec![T::zero(); if pointwise { 0 } else { depth * plane }];
    let mut d_cols = vec![T::zero(); if need_input && !pointwise { depth * plane } else { 0 }];
    for i in 0..n {
        let g = grad_out.sample(i);
        for (co, chunk) in g.chunks(plane).enumerate() {
            d_bias[co] = chunk.iter().fold(d_bias[co], |a, &b| a + b);
        }
        let src: &[T] = if pointwise {
            input.sample(i)
        } else {
            im2col(input.sample(i), cin, h, w, k, stride, pad, ho, wo, &mut cols);
            &cols
        };
        T::gemm(cout, plane, depth, g, false, src, true, d_weight.data_mut(), true);
        if let Some(dx) = d_input.as_mut() {
            if pointwise {
                T::gemm(
                    depth,
                    cout,
                    plane,
                    weight.data(),
                    true,
                    g,
                    false,
                    dx.sample_mut(i),
                    true,
                );
            } else {
                T::gemm(depth, cout, plane, weight.data(), true, g, false, &mut d_cols, false);
                col2im(&d_cols, cin, h, w, k, stride, pad, ho, wo, dx.sample_mut(i));
            }
        }
    }
    (d_input, d_weight, Tensor::vector(d_bias))
}

fn tconv_geometry<T: Scalar>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>, stride: usize) -> Result<()> {
    let [_, cin, _, _] = input.dims();
    let [wcin, cout, kh, kw] = weight.dims();
    if kh != 2 || kw != 2 || stride != 2 {
        return Err(Error::Unsupported(format!(
            "transpose_conv2d supports only a 2x2 kernel with stride 2, got {kh}x{kw} stride {stride}"
        )));
    }
    if wcin != cin {
        return Err(Error::shape(
            "transpose_conv2d",
            "input channels",
            format!("input has {cin} channels, weight expects {wcin}"),
        ));
    }
    check_bias("transpose_conv2d", bias, cout)
}

/// Transposed convolution, kernel 2x2 stride 2. `weight` is `(Cin, Cout, 2, 2)`.
/// Every input pixel writes a disjoint 2x2 output block.
pub fn transpose_conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
) -> Result<Tensor<T>> {
    tconv_geometry(input, weight, bias, stride)?;
    let [n, cin, h, w] = input.dims();
    let cout = weight.dims()[1];
    let plane = h * w;
    let mut out = Tensor::zeros([n, cout, 2 * h, 2 * w]);
    let mut cols = vec![T::zero(); cout * 4 * plane];
    for i in 0..n {
        // (Cout*4, HW) = W^T (Cout*4, Cin) x X (Cin, HW)
        T::gemm(
            cout * 4,
            cin,
            plane,
            weight.data(),
            true,
            input.sample(i),
            false,
            &mut cols,
            false,
        );
        let dst = out.sample_mut(i);
        for co in 0..cout {
            let b = bias.data()[co];
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &cols[(co * 4 + a * 2 + bb) * plane..][..plane];
                    for y in 0..h {
                        let out_row = &mut dst[(co * 2 * h + 2 * y + a) * 2 * w..][..2 * w];
                        for x in 0..w {
                            out_row[2 * x + bb] = row[y * w + x] + b;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub fn transpose_conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [n, cin, h, w] = input.dims();
    let cout = weight.dims()[1];
    let plane = h * w;
    let mut d_weight = Tensor::zeros(weight.shape());
    let mut d_bias = vec![T::zero(); cout];
    let mut d_input = need_input.then(|| Tensor::zeros(input.shape()));
    let mut d_cols = vec![T::zero(); cout * 4 * plane];
    for i in 0..n {
        let g = grad_out.sample(i);
        for co in 0..cout {
            for a in 0..2 {
                for bb in 0..2 {
                    let row = &mut d_cols[(co * 4 + a * 2 + bb) * plane..][..plane];
                    for y in 0..h {
                        let g_row = &g[(co * 2 * h + 2 * y + a) * 2 * w..][..2 * w];
                        for x in 0..w {
                            row[y * w + x] = g_row[2 * x + bb];
                        }
                    }
                }
            }
            let chunk = &g[co * 4 * plane..(co + 1) * 4 * plane];
            d_bias[co] = chunk.iter().fold(d_bias[co], |a, &b| a + b);
        }
        // dW (Cin, Cout*4) += X (Cin, HW) x dC^T (HW, Cout*4)
        T::gemm(
            cin,
            plane,
            cout * 4,
            input.sample(i),
            false,
            &d_cols,
            true,
            d_weight.data_mut(),
            true,
        );
        if let Some(dx) = d_input.as_mut() {
            // dX (Cin, HW) = W (Cin, Cout*4) x dC (Cout*4, HW)
            T::gemm(
                cin,
                cout * 4,
                plane,
                weight.data(),
                false,
                &d_cols,
                false,
                dx.sample_mut(i),
                false,
            );
        }
    }
    (d_input, d_weight, Tensor::vector(d_bias))
}

/// Per-`(sample, group)` statistics cached by the forward pass.
#[derive(Debug, Clone)]
pub struct GroupStats<T> {
    pub mean: Vec<T>,
    pub rstd: Vec<T>,
}

fn check_group_norm<T: Scalar>(
    input: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<()> {
    let c = input.dims()[1];
    if groups == 0 || !c.is_multiple_of(groups) {
        return Err(Error::shape(
            "group_norm",
            "channels",
            format!("{c} channels not divisible into {groups} groups"),
        ));
    }
    if gamma.numel() != c || beta.numel() != c {
        return Err(Error::shape(
            "group_norm",
            "affine length",
            format!("expected {c}, got gamma {} / beta {}", gamma.numel(), beta.numel()),
        ));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("group_norm eps must be > 0, got {eps}")));
    }
    Ok(())
}

pub fn group_norm<T: Scalar>(
    input: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    group_norm_with_stats(input, groups, gamma, beta, eps).map(|(t, _)| t)
}

pub fn group_norm_with_stats<T: Scalar>(
    input: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, GroupStats<T>)> {
    check_group_norm(input, groups, gamma, beta, eps)?;
    let [n, c, h, w] = input.dims();
    let per_group = c / groups;
    let plane = h * w;
    let span = per_group * plane;
    let mut out = Tensor::zeros(input.shape());
    let mut stats = GroupStats {
        mean: Vec::with_capacity(n * groups),
        rstd: Vec::with_capacity(n * groups),
    };
    for i in 0..n {
        let src = input.sample(i);
        let dst = out.sample_mut(i);
        for g in 0..groups {
            let x = &src[g * span..(g + 1) * span];
            let mean = x.iter().map(|v| v.as_f64()).sum::<f64>() / span as f64;
            let var = x.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / span as f64;
            let rstd = 1.0 / (var + eps).sqrt();
            let (mean_t, rstd_t) = (T::of(mean), T::of(rstd));
            for ci in 0..per_group {
                let ch = g * per_group + ci;
                let (ga, be) = (gamma.data()[ch], beta.data()[ch]);
                let off = ci * plane;
                for (d, &v) in dst[g * span + off..][..plane].iter_mut().zip(&x[off..off + plane]) {
                    *d = (v - mean_t) * rstd_t * ga + be;
                }
            }
            stats.mean.push(mean_t);
            stats.rstd.push(rstd_t);
        }
    }
    Ok((out, stats))
}

pub fn group_norm_backward<T: Scalar>(
    input: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    stats: &GroupStats<T>,
    grad_out: &Tensor<T>,
    need_input: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = input.dims();
    let per_group = c / groups;
    let plane = h * w;
    let span = per_group * plane;
    let mut d_gamma = vec![0.0f64; c];
    let mut d_beta = vec![0.0f64; c];
    let mut d_input = need_input.then(|| Tensor::zeros(input.shape()));
    let mut xhat = vec![0.0f64; span];
    let mut dxhat = vec![0.0f64; span];
    for i in 0..n {
        let src = input.sample(i);
        let g_all = grad_out.sample(i);
        for g in 0..groups {
            let mean = stats.mean[i * groups + g].as_f64();
            let rstd = stats.rstd[i * groups + g].as_f64();
            let (mut sum_dxhat, mut sum_dxhat_xhat) = (0.0, 0.0);
            for ci in 0..per_group {
                let ch = g * per_group + ci;
                let ga = gamma.data()[ch].as_f64();
                for p in 0..plane {
                    let idx = g * span + ci * plane + p;
                    let xh = (src[idx].as_f64() - mean) * rstd;
                    let dy = g_all[idx].as_f64();
                    d_gamma[ch] += dy * xh;
                    d_beta[ch] += dy;
                    let dxh = dy * ga;
                    xhat[ci * plane + p] = xh;
                    dxhat[ci * plane + p] = dxh;
                    sum_dxhat += dxh;
                    sum_dxhat_xhat += dxh * xh;
                }
            }
            if let Some(dx) = d_input.as_mut() {
                let m = span as f64;
                let dst = &mut dx.sample_mut(i)[g * span..(g + 1) * span];
                for (j, d) in dst.iter_mut().enumerate() {
                    *d = T::of(rstd / m * (m * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat));
                }
            }
        }
    }
    let to_t = |v: Vec<f64>| Tensor::vector(v.into_iter().map(T::of).collect());
    (d_input, to_t(d_gamma), to_t(d_beta))
}

pub fn relu<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad_out: &Tensor<T>) -> Tensor<T> {
    input
        .zip_map(grad_out, |x, g| if x > T::zero() { g } else { T::zero() })
        .expect("relu grad shape")
}

/// Channel concatenation, `a` first.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let [na, ca, ha, wa] = a.dims();
    let [nb, cb, hb, wb] = b.dims();
    if (na, ha, wa) != (nb, hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            "batch/height/width",
            format!("{} vs {}", a.shape(), b.shape()),
        ));
    }
    let mut data = Vec::with_capacity(a.numel() + b.numel());
    for i in 0..na {
        data.extend_from_slice(a.sample(i));
        data.extend_from_slice(b.sample(i));
    }
    Tensor::new([na, ca + cb, ha, wa], data)
}

/// Splits a concatenated gradient back into the `a` and `b` parts.
pub fn split_channels<T: Scalar>(grad: &Tensor<T>, ca: usize) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = grad.dims();
    let plane = h * w;
    let (mut ga, mut gb) = (Vec::new(), Vec::new());
    for i in 0..n {
        let s = grad.sample(i);
        ga.extend_from_slice(&s[..ca * plane]);
        gb.extend_from_slice(&s[ca * plane..]);
    }
    (
        Tensor::new([n, ca, h, w], ga).expect("split a"),
        Tensor::new([n, c - ca, h, w], gb).expect("split b"),
    )
}

fn check_same(op: &'static str, a: Shape, b: Shape) -> Result<()> {
    if a != b {
        return Err(Error::shape(op, "all extents", format!("{a} vs {b}")));
    }
    Ok(())
}

/// Per-location channel statistics `(dot, |a|, |b|)`.
fn cosine_terms<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Vec<(f64, f64, f64)> {
    let [n, c, h, w] = a.dims();
    let plane = h * w;
    let mut terms = vec![(0.0, 0.0, 0.0); n * plane];
    for i in 0..n {
        let (sa, sb) = (a.sample(i), b.sample(i));
        for ci in 0..c {
            for p in 0..plane {
                let (x, y) = (sa[ci * plane + p].as_f64(), sb[ci * plane + p].as_f64());
                let t = &mut terms[i * plane + p];
                t.0 += x * y;
                t.1 += x * x;
                t.2 += y * y;
            }
        }
    }
    for t in &mut terms {
        t.1 = t.1.sqrt();
        t.2 = t.2.sqrt();
    }
    terms
}

/// Mean over `(sample, y, x)` of `1 - cos(a, b)` along channels.
pub fn cosine_distance<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    check_same("cosine_distance", a.shape(), b.shape())?;
    let terms = cosine_terms(a, b);
    let total: f64 = terms
        .iter()
        .map(|&(dot, na, nb)| 1.0 - dot / (na.max(COSINE_EPS) * nb.max(COSINE_EPS)))
        .sum();
    Ok(total / terms.len() as f64)
}

/// Gradients of [`cosine_distance`] with respect to `a` and `b`, scaled by
/// the upstream scalar `upstream`.
pub fn cosine_distance_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, upstream: f64) -> (Tensor<T>, Tensor<T>) {
    let [n, c, h, w] = a.dims();
    let plane = h * w;
    let terms = cosine_terms(a, b);
    let scale = -upstream / terms.len() as f64;
    let mut ga = Tensor::zeros(a.shape());
    let mut gb = Tensor::zeros(b.shape());
    for i in 0..n {
        let (sa, sb) = (a.sample(i), b.sample(i));
        let da = ga.sample_mut(i);
        for ci in 0..c {
            for p in 0..plane {
                let (dot, na, nb) = terms[i * plane + p];
                let (nac, nbc) = (na.max(COSINE_EPS), nb.max(COSINE_EPS));
                let cos = dot / (nac * nbc);
                let (x, y) = (sa[ci * plane + p].as_f64(), sb[ci * plane + p].as_f64());
                let mut g = y / (nac * nbc);
                if na > COSINE_EPS {
                    g -= cos * x / (na * na);
                }
                da[ci * plane + p] = T::of(scale * g);
            }
        }
        let db = gb.sample_mut(i);
        for ci in 0..c {
            for p in 0..plane {
                let (dot, na, nb) = terms[i * plane + p];
                let (nac, nbc) = (na.max(COSINE_EPS), nb.max(COSINE_EPS));
                let cos = dot / (nac * nbc);
                let (x, y) = (sa[ci * plane + p].as_f64(), sb[ci * plane + p].as_f64());
                let mut g = x / (nac * nbc);
                if nb > COSINE_EPS {
                    g -= cos * y / (nb * nb);
                }
                db[ci * plane + p] = T::of(scale * g);
            }
        }
    }
    (ga, gb)
}

/// Mean of `|a - b|^p`, `p` in {1, 2}. No square root for `p = 2`.
pub fn lp_distance<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, p: u32) -> Result<f64> {
    check_same("lp_distance", a.shape(), b.shape())?;
    let total: f64 = match p {
        1 => a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x.as_f64() - y.as_f64()).abs())
            .sum(),
        2 => a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2))
            .sum(),
        _ => return Err(Error::Unsupported(format!("lp_distance p must be 1 or 2, got {p}"))),
    };
    Ok(total / a.numel() as f64)
}

/// Gradient of [`lp_distance`] with respect to `a`; the `b` gradient is its negation.
pub fn lp_distance_backward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, p: u32, upstream: f64) -> Tensor<T> {
    let scale = upstream / a.numel() as f64;
    a.zip_map(b, |x, y| {
        let d = x.as_f64() - y.as_f64();
        let g = if p == 1 {
            if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            }
        } else {
            2.0 * d
        };
        T::of(scale * g)
    })
    .expect("lp grad shape")
}

/// Non-overlapping average pooling with a square window.
pub fn avg_pool<T: Scalar>(input: &Tensor<T>, window: usize) -> Result<Tensor<T>> {
    let [n, c, h, w] = input.dims();
    if window == 0 || h % window != 0 || w % window != 0 {
        return Err(Error::shape(
            "avg_pool",
            "spatial extent",
            format!("{h}x{w} not divisible by window {window}"),
        ));
    }
    let (ho, wo) = (h / window, w / window);
    let norm = T::of(1.0 / (window * window) as f64);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    for i in 0..n {
        for ci in 0..c {
            for y in 0..ho {
                for x in 0..wo {
                    let mut acc = T::zero();
                    for dy in 0..window {
                        for dx in 0..window {
                            acc = acc + input.at(i, ci, y * window + dy, x * window + dx);
                        }
                    }
                    let idx = out.index(i, ci, y, x);
                    out.data_mut()[idx] = acc * norm;
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = SplitMix64::new(seed);
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
    }

    /// Direct sliding-window sum, independent of im2col/gemm.
    fn conv_oracle(x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>, s: usize, p: usize) -> Tensor<f64> {
        let [n, cin, h, w] = x.dims();
        let [cout, _, k, _] = wt.dims();
        let ho = (h + 2 * p - k) / s + 1;
        let wo = (w + 2 * p - k) / s + 1;
        Tensor::from_fn([n, cout, ho, wo], |[i, co, oy, ox]| {
            let mut acc = b.data()[co];
            for ci in 0..cin {
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * s + ky) as isize - p as isize;
                        let ix = (ox * s + kx) as isize - p as isize;
                        if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                            acc += x.at(i, ci, iy as usize, ix as usize) * wt.at(co, ci, ky, kx);
                        }
                    }
                }
            }
            acc
        })
    }

    #[test]
    fn conv_identity_kernel() {
        let x = random([1, 1, 3, 4], 1);
        let y = conv2d(&x, &Tensor::ones([1, 1, 1, 1]), &Tensor::zeros([1, 1, 1, 1]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_zero_weights_annihilate() {
        let x = random([2, 3, 5, 5], 2);
        let y = conv2d(&x, &Tensor::zeros([4, 3, 3, 3]), &Tensor::zeros([1, 4, 1, 1]), 2, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(y.dims(), [2, 4, 3, 3]);
    }

    #[test]
    fn conv_all_ones_3x3_on_2x2() {
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let wt = Tensor::ones([1, 1, 3, 3]);
        let b = Tensor::zeros([1, 1, 1, 1]);
        let y = conv2d(&x, &wt, &b, 1, 1).unwrap();
        // every padded 3x3 window covers the whole 2x2 input
        assert_eq!(y.data(), &[10.0, 10.0, 10.0, 10.0]);
        assert_eq!(y, conv_oracle(&x, &wt, &b, 1, 1));
    }

    #[test]
    fn conv_matches_sliding_window_oracle() {
        for (k, s, p, seed) in [(3, 1, 1, 3), (3, 2, 1, 4), (2, 2, 0, 5), (1, 1, 0, 6), (3, 2, 0, 7)] {
            let x = random([2, 3, 7, 6], seed);
            let wt = random([4, 3, k, k], seed + 100);
            let b = random([1, 4, 1, 1], seed + 200);
            let y = conv2d(&x, &wt, &b, s, p).unwrap();
            assert!(
                y.max_abs_diff(&conv_oracle(&x, &wt, &b, s, p)) < 1e-12,
                "k={k} s={s} p={p}"
            );
        }
    }

    #[test]
    fn conv_same_padding_preserves_extent() {
        let x = random([1, 2, 5, 9], 8);
        let y = conv2d(&x, &random([3, 2, 3, 3], 9), &Tensor::zeros([1, 3, 1, 1]), 1, 1).unwrap();
        assert_eq!(y.dims(), [1, 3, 5, 9]);
    }

    #[test]
    fn conv_shape_errors_name_dimension() {
        let x = random([1, 2, 4, 4], 1);
        let err = conv2d(&x, &random([1, 3, 3, 3], 2), &Tensor::zeros([1, 1, 1, 1]), 1, 1).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let err = conv2d(&x, &random([1, 2, 3, 3], 2), &Tensor::zeros([1, 2, 1, 1]), 1, 1).unwrap_err();
        assert!(err.to_string().contains("bias"), "{err}");
        assert!(matches!(
            conv2d(&x, &random([1, 2, 5, 5], 2), &Tensor::zeros([1, 1, 1, 1]), 1, 1),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            conv2d(&x, &random([1, 2, 3, 3], 2), &Tensor::zeros([1, 1, 1, 1]), 3, 1),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn tconv_scatter_by_hand() {
        let x = Tensor::<f64>::new([1, 1, 1, 1], vec![5.0]).unwrap();
        let wt = Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = transpose_conv2d(&x, &wt, &Tensor::zeros([1, 1, 1, 1]), 2).unwrap();
        assert_eq!(y.dims(), [1, 1, 2, 2]);
        assert_eq!(y.data(), &[5.0, 10.0, 15.0, 20.0]);
    }

    #[test]
    fn tconv_shapes_and_zeros() {
        let x = Tensor::<f32>::zeros([1, 3, 14, 14]);
        let y = transpose_conv2d(&x, &Tensor::ones([3, 2, 2, 2]), &Tensor::zeros([1, 2, 1, 1]), 2).unwrap();
        assert_eq!(y.dims(), [1, 2, 28, 28]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert!(matches!(
            transpose_conv2d(&x, &Tensor::ones([3, 2, 3, 3]), &Tensor::zeros([1, 2, 1, 1]), 2),
            Err(Error::Unsupported(_))
        ));
        assert!(matches!(
            transpose_conv2d(&x, &Tensor::ones([3, 2, 2, 2]), &Tensor::zeros([1, 2, 1, 1]), 1),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn tconv_matches_dense_matrix_oracle() {
        // Build the dense (Cout*2H*2W) x (Cin*H*W) matrix of the map from unit inputs,
        // then check the adjoint pairing <T x, y> == <x, T^T y> via the backward pass.
        let wt = random([1, 1, 2, 2], 11);
        let b = Tensor::zeros([1, 1, 1, 1]);
        let (h, w) = (3, 3);
        let mut dense = vec![vec![0.0; h * w]; 4 * h * w];
        for j in 0..h * w {
            let mut e = Tensor::<f64>::zeros([1, 1, h, w]);
            e.data_mut()[j] = 1.0;
            let col = transpose_conv2d(&e, &wt, &b, 2).unwrap();
            for (i, v) in col.data().iter().enumerate() {
                dense[i][j] = *v;
            }
        }
        // Each output is touched by exactly one input: the 2x2 blocks are disjoint.
        for row in &dense {
            assert_eq!(row.iter().filter(|v| **v != 0.0).count(), 1);
        }
        let x = random([1, 1, h, w], 12);
        let y = random([1, 1, 2 * h, 2 * w], 13);
        let (dx, _, _) = transpose_conv2d_backward(&x, &wt, &y, true);
        let dx = dx.unwrap();
        for j in 0..h * w {
            let expect: f64 = (0..4 * h * w).map(|i| dense[i][j] * y.data()[i]).sum();
            assert!((dx.data()[j] - expect).abs() < 1e-12);
        }
        // The adjoint is 2x2 stride-2 pooling weighted by the kernel.
        let pooled = Tensor::from_fn([1, 1, h, w], |[_, _, i, j]| {
            (0..2)
                .flat_map(|a| (0..2).map(move |c| (a, c)))
                .map(|(a, c)| y.at(0, 0, 2 * i + a, 2 * j + c) * wt.at(0, 0, a, c))
                .sum()
        });
        assert!(pooled.max_abs_diff(&dx) < 1e-12);
    }

    #[test]
    fn group_norm_constant_input_is_zero() {
        let x = Tensor::<f64>::full([2, 4, 3, 3], 1.5);
        let y = group_norm(&x, 2, &Tensor::ones([1, 4, 1, 1]), &Tensor::zeros([1, 4, 1, 1]), 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_norm_zero_gamma_gives_beta() {
        let x = random([1, 4, 3, 3], 3);
        let beta = Tensor::vector(vec![0.5, -1.0, 2.0, 3.0]);
        let y = group_norm(&x, 2, &Tensor::zeros([1, 4, 1, 1]), &beta, 1e-5).unwrap();
        for c in 0..4 {
            for p in 0..9 {
                assert_eq!(y.data()[c * 9 + p], beta.data()[c]);
            }
        }
    }

    #[test]
    fn group_norm_matches_direct_statistics() {
        let x = random([1, 2, 4, 5], 4);
        let y = group_norm(&x, 1, &Tensor::ones([1, 2, 1, 1]), &Tensor::zeros([1, 2, 1, 1]), 1e-5).unwrap();
        let vals = x.data();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        for (o, v) in y.data().iter().zip(vals) {
            assert!((o - (v - mean) / (var + 1e-5).sqrt()).abs() < 1e-6);
        }
        let m = y.data().iter().sum::<f64>() / 40.0;
        let v = y.data().iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 40.0;
        assert!(m.abs() < 1e-5 && (v - 1.0).abs() < 1e-4);
    }

    #[test]
    fn group_norm_rejects_indivisible() {
        let x = random([1, 6, 2, 2], 4);
        let g = Tensor::ones([1, 6, 1, 1]);
        assert!(group_norm(&x, 4, &g, &Tensor::zeros([1, 6, 1, 1]), 1e-5).is_err());
    }

    #[test]
    fn relu_values() {
        let x = Tensor::<f32>::new([1, 1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let g = relu_backward(&x, &Tensor::ones([1, 1, 1, 3]));
        assert_eq!(g.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn concat_shapes() {
        let a = random([1, 2, 2, 2], 1);
        let b = random([1, 3, 2, 2], 2);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.dims(), [1, 5, 2, 2]);
        let (ga, gb) = split_channels(&c, 2);
        assert_eq!((ga, gb), (a.clone(), b));
        let empty = Tensor::<f64>::zeros([1, 0, 2, 2]);
        assert_eq!(concat_channels(&a, &empty).unwrap(), a);
        assert!(concat_channels(&a, &random([1, 1, 3, 2], 3)).is_err());
    }

    #[test]
    fn cosine_distance_values() {
        let f = random([2, 5, 3, 3], 5);
        assert!(cosine_distance(&f, &f).unwrap().abs() < 1e-12);
        assert!((cosine_distance(&f, &f.scale(-1.0)).unwrap() - 2.0).abs() < 1e-12);
        assert!(cosine_distance(&f, &f.scale(3.7)).unwrap().abs() < 1e-12);
        assert!(cosine_distance(&f, &random([2, 5, 3, 2], 1)).is_err());
    }

    #[test]
    fn cosine_invariant_to_per_location_scaling() {
        let a = random([2, 4, 3, 3], 6);
        let b = random([2, 4, 3, 3], 7);
        let mut rng = SplitMix64::new(8);
        let scales: Vec<f64> = (0..18).map(|_| rng.uniform(0.1, 10.0)).collect();
        let scaled = Tensor::from_fn(b.shape(), |[n, c, y, x]| b.at(n, c, y, x) * scales[n * 9 + y * 3 + x]);
        let d0 = cosine_distance(&a, &b).unwrap();
        let d1 = cosine_distance(&a, &scaled).unwrap();
        assert!((d0 - d1).abs() < 1e-6);
        let d = cosine_distance(&a, &b).unwrap();
        assert!((0.0..=2.0).contains(&d));
    }

    #[test]
    fn lp_values() {
        let a = Tensor::<f64>::new([1, 1, 1, 2], vec![0.0, 0.0]).unwrap();
        let b = Tensor::new([1, 1, 1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(lp_distance(&a, &b, 1).unwrap(), 3.5);
        assert_eq!(lp_distance(&a, &a, 2).unwrap(), 0.0);
        let x = random([2, 3, 4, 4], 9);
        let y = random([2, 3, 4, 4], 10);
        let mut oracle = 0.0;
        for i in 0..x.numel() {
            let d = x.data()[i] - y.data()[i];
            oracle += d * d;
        }
        oracle /= x.numel() as f64;
        assert!((lp_distance(&x, &y, 2).unwrap() - oracle).abs() < 1e-6);
        assert!(lp_distance(&x, &y, 3).is_err());
    }

    #[test]
    fn avg_pool_means() {
        let x = Tensor::<f64>::from_fn([1, 1, 2, 4], |[_, _, y, x]| (y * 4 + x) as f64);
        let p = avg_pool(&x, 2).unwrap();
        assert_eq!(p.data(), &[2.5, 4.5]);
        assert!(avg_pool(&x, 3).is_err());
    }
}

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Lanczos window half-width.
pub const LANCZOS_A: f64 = 3.0;

/// `sinc(x) * sinc(x / a)` on `|x| < a`, zero elsewhere and exactly zero at
/// nonzero integers.
pub fn lanczos_kernel(x: f64) -> f64 {
    if x == 0.0 {
        return 1.0;
    }
    if x.abs() >= LANCZOS_A || x.fract() == 0.0 {
        return 0.0;
    }
    let px = PI * x;
    LANCZOS_A * px.sin() * (px / LANCZOS_A).sin() / (px * px)
}

/// Normalized `(source index, weight)` taps for each output position of an
/// axis resampled from `n_src` to `n_dst`. Out-of-range taps are clamped to
/// the edge.
pub fn lanczos_weights(n_src: usize, n_dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_src as f64 / n_dst as f64;
    let last = n_src as isize - 1;
    (0..n_dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale - 0.5;
            let base = center.floor() as isize;
            let mut taps: Vec<(usize, f64)> = Vec::with_capacity(6);
            for j in base - 2..=base + 3 {
                let wgt = lanczos_kernel(center - j as f64);
                if wgt == 0.0 {
                    continue;
                }
                let idx = j.clamp(0, last) as usize;
                match taps.iter_mut().find(|(k, _)| *k == idx) {
                    Some(t) => t.1 += wgt,
                    None => taps.push((idx, wgt)),
                }
            }
            let total: f64 = taps.iter().map(|t| t.1).sum();
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

/// Separable Lanczos-3 resampling of every channel to `height x width`.
/// Output values are not range-clamped.
pub fn lanczos_resize<T: Scalar>(input: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    if height == 0 || width == 0 {
        return Err(Error::InvalidArgument(format!(
            "lanczos target must be at least 1x1, got {height}x{width}"
        )));
    }
    let [n, c, h, w] = input.dims();
    let wy = lanczos_weights(h, height);
    let wx = lanczos_weights(w, width);
    let mut out = Tensor::zeros([n, c, height, width]);
    let mut tmp = vec![0.0f64; h * width];
    for i in 0..n {
        for ci in 0..c {
            let src = &input.sample(i)[ci * h * w..(ci + 1) * h * w];
            for y in 0..h {
                let line = &src[y * w..(y + 1) * w];
                for (x, taps) in wx.iter().enumerate() {
                    tmp[y * width + x] = taps.iter().map(|&(j, k)| line[j].as_f64() * k).sum();
                }
            }
            let off = out.index(i, ci, 0, 0);
            let dst = &mut out.data_mut()[off..off + height * width];
            for (y, taps) in wy.iter().enumerate() {
                for x in 0..width {
                    let v: f64 = taps.iter().map(|&(j, k)| tmp[j * width + x] * k).sum();
                    dst[y * width + x] = T::of(v);
                }
            }
        }
    }
    Ok(out)
}

//! Baseline upsamplers: bilinear, resize-convolution, joint bilateral, and
//! the Lanczos resampler used before keypoint matching.
//!
//! Every resampler uses half-pixel centers: output index `i` of an axis
//! resized from `n` to `m` samples the source at `(i + 0.5) * n / m - 0.5`.

mod jbu;
mod lanczos;

use crate::error::{Error, Result};
use crate::tensor::{ops, Scalar, Tensor};

pub use jbu::{jbu_upsample, JbuParams, JointBilateral};
pub use lanczos::{lanczos_kernel, lanczos_resize, lanczos_weights, LANCZOS_A};

/// Which upsampler to run and its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum UpsampleSpec {
    Bilinear { factor: usize },
    ResizeConv { weight: Tensor, bias: Tensor },
    Jbu(JbuParams),
    Lanczos { height: usize, width: usize },
}

impl UpsampleSpec {
    /// Applies the method once. `guidance` is required for JBU only.
    pub fn apply(&self, features: &Tensor, guidance: Option<&Tensor>) -> Result<Tensor> {
        match self {
            UpsampleSpec::Bilinear { factor } => {
                if *factor == 0 || !factor.is_power_of_two() {
                    return Err(Error::InvalidArgument(format!(
                        "bilinear factor must be a power of two >= 1, got {factor}"
                    )));
                }
                let [_, _, h, w] = features.dims();
                Ok(bilinear_resize(features, h * factor, w * factor))
            }
            UpsampleSpec::ResizeConv { weight, bias } => resize_conv(features, weight, bias),
            UpsampleSpec::Jbu(p) => {
                let g = guidance.ok_or_else(|| Error::InvalidArgument("JBU needs a guidance image".into()))?;
                jbu_upsample(features, g, p)
            }
            UpsampleSpec::Lanczos { height, width } => lanczos_resize(features, *height, *width),
        }
    }
}

/// Source coordinate and interpolation taps along one axis.
fn linear_taps(n_src: usize, n_dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_src as f64 / n_dst as f64;
    (0..n_dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_src - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n_src - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect()
}

/// Bilinear resampling to arbitrary extents, edge-clamped.
pub fn bilinear_resize<T: Scalar>(input: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    let [n, c, h, w] = input.dims();
    let ys = linear_taps(h, out_h);
    let xs = linear_taps(w, out_w);
    let mut out = Tensor::zeros([n, c, out_h, out_w]);
    let mut row = vec![0.0f64; w];
    for i in 0..n {
        for ci in 0..c {
            let src = &input.sample(i)[ci * h * w..(ci + 1) * h * w];
            let dst_off = out.index(i, ci, 0, 0);
            for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                for (x, r) in row.iter_mut().enumerate() {
                    *r = src[y0 * w + x].as_f64() * (1.0 - fy) + src[y1 * w + x].as_f64() * fy;
                }
                let dst = &mut out.data_mut()[dst_off + oy * out_w..][..out_w];
                for (d, &(x0, x1, fx)) in dst.iter_mut().zip(&xs) {
                    *d = T::of(row[x0] * (1.0 - fx) + row[x1] * fx);
                }
            }
        }
    }
    out
}

pub fn bilinear_upsample_2x<T: Scalar>(features: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = features.dims();
    bilinear_resize(features, 2 * h, 2 * w)
}

/// Halves both extents; with half-pixel centers this is exact 2x2 averaging.
pub fn bilinear_downsample_2x<T: Scalar>(image: &Tensor<T>) -> Result<Tensor<T>> {
    let [_, _, h, w] = image.dims();
    if h % 2 != 0 || w % 2 != 0 || h < 2 || w < 2 {
        return Err(Error::Geometry(format!("cannot halve odd extents {h}x{w}")));
    }
    Ok(bilinear_resize(image, h / 2, w / 2))
}

/// Bilinear 2x followed by a same-padded 3x3 convolution.
pub fn resize_conv(features: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    check_resize_conv(features.dims()[1], weight)?;
    ops::conv2d(&bilinear_upsample_2x(features), weight, bias, 1, 1)
}

fn check_resize_conv(d: usize, weight: &Tensor) -> Result<()> {
    let [co, ci, kh, kw] = weight.dims();
    if co != d || ci != d || kh != 3 || kw != 3 {
        return Err(Error::shape(
            "resize_conv",
            "weight",
            format!(
                "expected ({d}, {d}, 3, 3) for {d}-channel features, got {}",
                weight.shape()
            ),
        ));
    }
    Ok(())
}

/// Trainable resize-convolution baseline: the same objective as LiFT with
/// the network replaced by bilinear 2x + one 3x3 conv.
#[derive(Debug, Clone, PartialEq)]
pub struct ResizeConv {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ResizeConv {
    /// Center-tap identity kernel: starts out equal to bilinear upsampling.
    pub fn identity(dim: usize) -> Self {
        let weight = Tensor::from_fn(
            [dim, dim, 3, 3],
            |[o, i, y, x]| {
                if o == i && y == 1 && x == 1 {
                    1.0
                } else {
                    0.0
                }
            },
        );
        Self {
            weight,
            bias: Tensor::zeros([1, dim, 1, 1]),
        }
    }

    pub fn forward(&self, features: &Tensor) -> Result<Tensor> {
        resize_conv(features, &self.weight, &self.bias)
    }
}

impl crate::train::Upsampler for ResizeConv {
    fn name(&self) -> &str {
        "resize-conv"
    }

    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.weight, &self.bias]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn forward_tape(
        &self,
        tape: &mut crate::tensor::Tape,
        params: &[crate::tensor::Var],
        features: crate::tensor::Var,
        _image: &Tensor,
    ) -> Result<crate::tensor::Var> {
        check_resize_conv(tape.value(features).dims()[1], &self.weight)?;
        // Features are constants of the objective, so the bilinear stage
        // needs no backward rule.
        let up = tape.constant(bilinear_upsample_2x(tape.value(features)));
        tape.conv2d(up, params[0], params[1], 1, 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = SplitMix64::new(seed);
        Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0) as f32)
    }

    #[test]
    fn bilinear_ramp() {
        let x = Tensor::<f64>::new([1, 1, 1, 4], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = bilinear_upsample_2x(&x);
        assert_eq!(y.dims(), [1, 1, 2, 8]);
        assert_eq!(&y.data()[..8], &[0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0]);
    }

    #[test]
    fn bilinear_constant_and_single_pixel() {
        let x = Tensor::<f32>::full([1, 2, 3, 5], 0.7);
        assert!(bilinear_upsample_2x(&x).data().iter().all(|&v| v == 0.7));
        let one = Tensor::<f32>::full([1, 1, 1, 1], 4.0);
        let y = bilinear_upsample_2x(&one);
        assert_eq!(y.dims(), [1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn downsample_averages_blocks() {
        let x = Tensor::<f64>::from_fn([1, 1, 2, 4], |[_, _, y, x]| (y * 4 + x) as f64);
        let d = bilinear_downsample_2x(&x).unwrap();
        assert_eq!(d.data(), &[2.5, 4.5]);
        assert!(bilinear_downsample_2x(&Tensor::<f64>::zeros([1, 1, 3, 4])).is_err());
    }

    #[test]
    fn resize_conv_identity_is_bilinear() {
        let f = random([1, 4, 3, 5], 1);
        let rc = ResizeConv::identity(4);
        let y = rc.forward(&f).unwrap();
        assert!(y.max_abs_diff(&bilinear_upsample_2x(&f)) < 1e-6);
    }

    #[test]
    fn resize_conv_zero_and_composition() {
        let f = random([2, 3, 4, 4], 2);
        let zero = resize_conv(&f, &Tensor::zeros([3, 3, 3, 3]), &Tensor::zeros([1, 3, 1, 1])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
        let w = random([3, 3, 3, 3], 3);
        let b = random([1, 3, 1, 1], 4);
        let composed = ops::conv2d(&bilinear_upsample_2x(&f), &w, &b, 1, 1).unwrap();
        assert_eq!(resize_conv(&f, &w, &b).unwrap(), composed);
        assert!(resize_conv(&f, &random([2, 3, 3, 3], 5), &Tensor::zeros([1, 2, 1, 1])).is_err());
    }

    #[test]
    fn spec_apply_dispatches() {
        let f = random([1, 2, 3, 3], 6);
        let up = UpsampleSpec::Bilinear { factor: 4 }.apply(&f, None).unwrap();
        assert_eq!(up.dims(), [1, 2, 12, 12]);
        assert!(UpsampleSpec::Bilinear { factor: 3 }.apply(&f, None).is_err());
        assert!(UpsampleSpec::Jbu(JbuParams::default()).apply(&f, None).is_err());
    }
}

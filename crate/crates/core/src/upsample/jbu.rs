//! Joint bilateral upsampling of a feature map guided by an image at twice
//! the feature resolution.

use crate::error::{Error, Result};
use crate::tensor::{CustomOp, Tape, Tensor, Var};
use crate::train::Upsampler;

/// Floor on the normalizing weight sum.
const MIN_WEIGHT_SUM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JbuParams {
    /// Spatial bandwidth, in low-resolution pixels.
    pub sigma_spatial: f64,
    /// Range bandwidth, in guidance intensity units.
    pub sigma_range: f64,
    /// Half-width of the square low-resolution neighbourhood.
    pub radius: usize,
}

impl Default for JbuParams {
    fn default() -> Self {
        Self {
            sigma_spatial: 1.0,
            sigma_range: 0.15,
            radius: 2,
        }
    }
}

impl JbuParams {
    fn validate(&self) -> Result<()> {
        if self.sigma_spatial.is_nan()
            || self.sigma_spatial <= 0.0
            || self.sigma_range.is_nan()
            || self.sigma_range <= 0.0
            || self.radius == 0
        {
            return Err(Error::InvalidArgument(format!(
                "JBU needs positive sigmas and radius >= 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Channel-mean guidance at high resolution and its 2x2 block means, which
/// stand in for the guidance value at each low-resolution pixel.
struct Guidance {
    high: Vec<f64>,
    low: Vec<f64>,
}

fn guidance_planes(guidance: &Tensor, i: usize, h: usize, w: usize) -> Guidance {
    let cg = guidance.dims()[1];
    let (hh, ww) = (2 * h, 2 * w);
    let s = guidance.sample(i);
    let mut high = vec![0.0; hh * ww];
    for c in 0..cg {
        for (p, v) in high.iter_mut().enumerate() {
            *v += s[c * hh * ww + p] as f64 / cg as f64;
        }
    }
    let mut low = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            low[y * w + x] = (high[2 * y * ww + 2 * x]
                + high[2 * y * ww + 2 * x + 1]
                + high[(2 * y + 1) * ww + 2 * x]
                + high[(2 * y + 1) * ww + 2 * x + 1])
                / 4.0;
        }
    }
    Guidance { high, low }
}

fn check_geometry(features: &Tensor, guidance: &Tensor) -> Result<()> {
    let [n, _, h, w] = features.dims();
    let [gn, _, gh, gw] = guidance.dims();
    if gn != n || gh != 2 * h || gw != 2 * w {
        return Err(Error::Geometry(format!(
            "JBU guidance must be ({n}, C, {}, {}) for features {}, got {}",
            2 * h,
            2 * w,
            features.shape(),
            guidance.shape()
        )));
    }
    Ok(())
}

/// One neighbour's contribution: low-res index, weight, and the squared
/// spatial / range distances the weight was built from.
struct Tap {
    p: usize,
    w: f64,
    ds2: f64,
    dr2: f64,
}

/// Visits the weighted neighbourhood of every high-resolution pixel.
fn for_each_output(h: usize, w: usize, g: &Guidance, params: &JbuParams, mut f: impl FnMut(usize, &[Tap], f64)) {
    let (hh, ww) = (2 * h, 2 * w);
    let r = params.radius as isize;
    let two_ss = 2.0 * params.sigma_spatial * params.sigma_spatial;
    let two_sr = 2.0 * params.sigma_range * params.sigma_range;
    let mut taps = Vec::with_capacity((2 * params.radius + 1).pow(2));
    for qy in 0..hh {
        let py_pos = (qy as f64 + 0.5) / 2.0 - 0.5;
        let cy = (qy / 2) as isize;
        for qx in 0..ww {
            let px_pos = (qx as f64 + 0.5) / 2.0 - 0.5;
            let cx = (qx / 2) as isize;
            let gq = g.high[qy * ww + qx];
            taps.clear();
            let mut total = 0.0;
            for py in (cy - r).max(0)..=(cy + r).min(h as isize - 1) {
                for px in (cx - r).max(0)..=(cx + r).min(w as isize - 1) {
                    let p = py as usize * w + px as usize;
                    let ds2 = (py as f64 - py_pos).powi(2) + (px as f64 - px_pos).powi(2);
                    let dr2 = (gq - g.low[p]).powi(2);
                    let wt = (-ds2 / two_ss).exp() * (-dr2 / two_sr).exp();
                    total += wt;
                    taps.push(Tap { p, w: wt, ds2, dr2 });
                }
            }
            f(qy * ww + qx, &taps, total.max(MIN_WEIGHT_SUM));
        }
    }
}

/// `out(q) = sum_p F(p) w(p, q) / sum_p w(p, q)` with a Gaussian spatial term
/// and a Gaussian range term on guidance intensity.
pub fn jbu_upsample(features: &Tensor, guidance: &Tensor, params: &JbuParams) -> Result<Tensor> {
    params.validate()?;
    check_geometry(features, guidance)?;
    let [n, d, h, w] = features.dims();
    let plane = 4 * h * w;
    let mut out = Tensor::zeros([n, d, 2 * h, 2 * w]);
    for i in 0..n {
        let g = guidance_planes(guidance, i, h, w);
        let src = features.sample(i).to_vec();
        let dst = out.sample_mut(i);
        for_each_output(h, w, &g, params, |q, taps, total| {
            for c in 0..d {
                let acc: f64 = taps.iter().map(|t| src[c * h * w + t.p] as f64 * t.w).sum();
                dst[c * plane + q] = (acc / total) as f32;
            }
        });
    }
    Ok(out)
}

/// JBU with trainable bandwidths, optimized under the same reconstruction
/// objective as LiFT. The radius stays fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct JointBilateral {
    pub sigma_spatial: Tensor,
    pub sigma_range: Tensor,
    pub radius: usize,
}

impl JointBilateral {
    pub fn new(params: JbuParams) -> Self {
        Self {
            sigma_spatial: Tensor::scalar(params.sigma_spatial as f32),
            sigma_range: Tensor::scalar(params.sigma_range as f32),
            radius: params.radius,
        }
    }

    pub fn params(&self) -> JbuParams {
        JbuParams {
            sigma_spatial: (self.sigma_spatial.data()[0] as f64).abs(),
            sigma_range: (self.sigma_range.data()[0] as f64).abs(),
            radius: self.radius,
        }
    }
}

/// Guidance for a feature map at `h x w`: the channel-standardized image
/// resampled to `2h x 2w`.
pub(crate) fn guidance_for(image: &Tensor, h: usize, w: usize) -> Tensor {
    let std = crate::lift::standardize_image(image);
    super::bilinear_resize(&std, 2 * h, 2 * w)
}

struct JbuBackward {
    guidance: Tensor,
    params: JbuParams,
}

impl CustomOp<f32> for JbuBackward {
    fn name(&self) -> &'static str {
        "jbu"
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad_out: &Tensor) -> Result<Vec<Option<Tensor>>> {
        let features = inputs[0];
        let [n, d, h, w] = features.dims();
        let plane = 4 * h * w;
        let (ss, sr) = (self.params.sigma_spatial, self.params.sigma_range);
        let mut d_feat = Tensor::zeros(features.shape());
        let (mut d_ss, mut d_sr) = (0.0f64, 0.0f64);
        for i in 0..n {
            let g = guidance_planes(&self.guidance, i, h, w);
            let src = features.sample(i).to_vec();
            let out = output.sample(i);
            let go = grad_out.sample(i);
            let df = d_feat.sample_mut(i);
            for_each_output(h, w, &g, &self.params, |q, taps, total| {
                for c in 0..d {
                    let up = go[c * plane + q] as f64;
                    if up == 0.0 {
                        continue;
                    }
                    let o = out[c * plane + q] as f64;
                    for t in taps {
                        df[c * h * w + t.p] += (up * t.w / total) as f32;
                        let diff = src[c * h * w + t.p] as f64 - o;
                        d_ss += up * t.w * t.ds2 / ss.powi(3) * diff / total;
                        d_sr += up * t.w * t.dr2 / sr.powi(3) * diff / total;
                    }
                }
            });
        }
        // Sign of the stored parameter: the forward pass uses |sigma|.
        let sign = |t: &Tensor| if t.data()[0] < 0.0 { -1.0 } else { 1.0 };
        Ok(vec![
            Some(d_feat),
            Some(Tensor::scalar((d_ss * sign(inputs[1])) as f32)),
            Some(Tensor::scalar((d_sr * sign(inputs[2])) as f32)),
        ])
    }
}

impl Upsampler for JointBilateral {
    fn name(&self) -> &str {
        "jbu"
    }

    fn parameters(&self) -> Vec<&Tensor> {
        vec![&self.sigma_spatial, &self.sigma_range]
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.sigma_spatial, &mut self.sigma_range]
    }

    fn forward_tape(&self, tape: &mut Tape, params: &[Var], features: Var, image: &Tensor) -> Result<Var> {
        let p = JbuParams {
            sigma_spatial: (tape.value(params[0]).data()[0] as f64).abs(),
            sigma_range: (tape.value(params[1]).data()[0] as f64).abs(),
            radius: self.radius,
        };
        let [_, _, h, w] = tape.value(features).dims();
        let guidance = guidance_for(image, h, w);
        let out = jbu_upsample(tape.value(features), &guidance, &p)?;
        Ok(tape.custom(
            &[features, params[0], params[1]],
            out,
            Box::new(JbuBackward { guidance, params: p }),
        ))
    }
}

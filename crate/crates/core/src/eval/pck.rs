use super::KeypointPair;
use crate::error::{Error, Result};
use crate::tensor::{ops::COSINE_EPS, Tensor};
use crate::upsample::lanczos_resize;

/// Unit-normalized per-pixel descriptors of sample 0, `(h*w) x D` row-major.
fn normalized_rows(features: &Tensor) -> Vec<f32> {
    let [_, d, h, w] = features.dims();
    let plane = h * w;
    let src = features.sample(0);
    let mut rows = vec![0.0f32; plane * d];
    for p in 0..plane {
        let norm = (0..d)
            .map(|c| (src[c * plane + p] as f64).powi(2))
            .sum::<f64>()
            .sqrt()
            .max(COSINE_EPS);
        for c in 0..d {
            rows[p * d + c] = (src[c * plane + p] as f64 / norm) as f32;
        }
    }
    rows
}

fn at_resolution(features: &Tensor, (w, h): (usize, usize)) -> Result<Tensor> {
    let [n, _, fh, fw] = features.dims();
    if n != 1 {
        return Err(Error::InvalidArgument(format!(
            "keypoint matching takes one image, got {n}"
        )));
    }
    if (fh, fw) == (h, w) {
        Ok(features.clone())
    } else {
        lanczos_resize(features, h, w)
    }
}

/// Predicted target pixel `(x, y)` for each source keypoint.
fn transfer(feats_src: &Tensor, feats_tgt: &Tensor, pair: &KeypointPair) -> Result<Vec<[f64; 2]>> {
    pair.validate()?;
    let src = at_resolution(feats_src, pair.source_size)?;
    let tgt = at_resolution(feats_tgt, pair.target_size)?;
    let d = src.dims()[1];
    if tgt.dims()[1] != d {
        return Err(Error::shape(
            "pck",
            "channels",
            format!("source {d}, target {}", tgt.dims()[1]),
        ));
    }
    let (sw, sh) = pair.source_size;
    let tw = pair.target_size.0;
    let src_rows = normalized_rows(&src);
    let tgt_rows = normalized_rows(&tgt);
    let mut out = Vec::with_capacity(pair.keypoints.len());
    for &(s, _) in &pair.keypoints {
        let sx = (s[0].round() as usize).min(sw - 1);
        let sy = (s[1].round() as usize).min(sh - 1);
        let q = &src_rows[(sy * sw + sx) * d..][..d];
        let mut best = (f32::NEG_INFINITY, 0usize);
        for (p, row) in tgt_rows.chunks_exact(d).enumerate() {
            let sim: f32 = row.iter().zip(q).map(|(a, b)| a * b).sum();
            if sim > best.0 {
                best = (sim, p);
            }
        }
        out.push([(best.1 % tw) as f64, (best.1 / tw) as f64]);
    }
    Ok(out)
}

/// Fraction of keypoints whose nearest-neighbor match lands within
/// `alpha * max(target box w, h)` of the true location, per alpha. Feature
/// maps not already at image resolution are Lanczos-resized to it.
pub fn pck(feats_src: &Tensor, feats_tgt: &Tensor, pair: &KeypointPair, alphas: &[f64]) -> Result<Vec<f64>> {
    let preds = transfer(feats_src, feats_tgt, pair)?;
    let base = pair.target_bbox.w.max(pair.target_bbox.h);
    let dists: Vec<f64> = preds
        .iter()
        .zip(&pair.keypoints)
        .map(|(p, (_, t))| ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt())
        .collect();
    Ok(alphas
        .iter()
        .map(|&a| dists.iter().filter(|&&d| d <= a * base).count() as f64 / dists.len() as f64)
        .collect())
}

/// Mean keypoint transfer distance divided by `max(target box w, h)`: a
/// threshold-free companion to [`pck`].
pub fn keypoint_transfer_error(feats_src: &Tensor, feats_tgt: &Tensor, pair: &KeypointPair) -> Result<f64> {
    let preds = transfer(feats_src, feats_tgt, pair)?;
    let base = pair.target_bbox.w.max(pair.target_bbox.h);
    let total: f64 = preds
        .iter()
        .zip(&pair.keypoints)
        .map(|(p, (_, t))| ((p[0] - t[0]).powi(2) + (p[1] - t[1]).powi(2)).sqrt() / base)
        .sum();
    Ok(total / preds.len() as f64)
}

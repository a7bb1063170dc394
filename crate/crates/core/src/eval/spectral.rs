use std::collections::VecDeque;

use super::BBox;
use crate::error::{Error, Result};
use crate::tensor::{ops::COSINE_EPS, Tensor};

/// Largest graph [`fiedler_vector`] accepts.
pub const MAX_GRAPH_NODES: usize = 4096;
/// Default cosine threshold for a strong edge.
pub const TOKENCUT_TAU: f64 = 0.2;
/// Weight of edges below the threshold.
pub const TOKENCUT_FLOOR: f64 = 1e-5;

const JACOBI_TOL: f64 = 1e-9;
const JACOBI_MAX_SWEEPS: usize = 100;

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[i * n + j] * a[i * n + j];
            }
        }
    }
    s.sqrt()
}

/// Full eigendecomposition of a symmetric row-major `n x n` matrix by cyclic
/// Jacobi rotations, run until the off-diagonal Frobenius norm drops below
/// 1e-9. Returns eigenvalues in ascending order with matching unit
/// eigenvectors.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    if matrix.len() != n * n {
        return Err(Error::InvalidArgument(format!(
            "matrix has {} entries, expected {n}x{n}",
            matrix.len()
        )));
    }
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let mut sweeps = 0;
    while off_diagonal_norm(&a, n) >= JACOBI_TOL {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::Degenerate(format!(
                "Jacobi iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps"
            )));
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    let np = c * akp - s * akq;
                    let nq = s * akp + c * akq;
                    a[k * n + p] = np;
                    a[p * n + k] = np;
                    a[k * n + q] = nq;
                    a[q * n + k] = nq;
                }
                a[p * n + p] -= t * apq;
                a[q * n + q] += t * apq;
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[i * n + i].total_cmp(&a[j * n + j]));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let vectors = order.iter().map(|&j| (0..n).map(|k| v[k * n + j]).collect()).collect();
    Ok((values, vectors))
}

/// Second-smallest eigenpair of the normalized Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct FiedlerPair {
    pub value: f64,
    /// Eigenvector mapped back by `D^{-1/2}`; its largest-magnitude entry is
    /// positive.
    pub vector: Vec<f64>,
    /// Unit eigenvector of `L_sym` before the mapping, same sign.
    pub symmetric: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fiedler pair of `L_sym = I - D^{-1/2} W D^{-1/2}` for a symmetric,
/// nonnegative affinity matrix with positive degrees.
///
/// When the smallest eigenvalue is repeated, the returned vector is the
/// unit vector of the two-dimensional bottom eigenspace orthogonal to
/// `D^{1/2} 1`.
pub fn fiedler_vector(w: &[f64], n: usize) -> Result<FiedlerPair> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("graph needs at least 2 nodes, got {n}")));
    }
    if n > MAX_GRAPH_NODES {
        return Err(Error::TooLarge(format!(
            "graph has {n} nodes, limit is {MAX_GRAPH_NODES}"
        )));
    }
    if w.len() != n * n {
        return Err(Error::InvalidArgument(format!(
            "affinity has {} entries, expected {n}x{n}",
            w.len()
        )));
    }
    let scale = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in 0..n {
            let x = w[i * n + j];
            if !(x >= 0.0 && x.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "affinity ({i}, {j}) = {x} is not a finite nonnegative value"
                )));
            }
            if (x - w[j * n + i]).abs() > 1e-12 * scale {
                return Err(Error::InvalidArgument(format!(
                    "affinity is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let degrees: Vec<f64> = (0..n).map(|i| w[i * n..(i + 1) * n].iter().sum()).collect();
    if let Some(i) = degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::Degenerate(format!("node {i} has zero degree")));
    }
    let inv_sqrt: Vec<f64> = degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            l[i * n + j] = id - inv_sqrt[i] * w[i * n + j] * inv_sqrt[j];
        }
    }
    let (values, vectors) = jacobi_eigen(&l, n)?;
    let norm = degrees.iter().sum::<f64>().sqrt();
    let u0: Vec<f64> = degrees.iter().map(|d| d.sqrt() / norm).collect();
    let (v1, v2) = (&vectors[0], &vectors[1]);
    let (a, b) = (dot(&u0, v2), dot(&u0, v1));
    let mut y: Vec<f64> = v1.iter().zip(v2).map(|(p, q)| a * p - b * q).collect();
    let yn = dot(&y, &y).sqrt();
    if yn > 1e-12 {
        y.iter_mut().for_each(|v| *v /= yn);
    } else {
        y = v2.clone();
    }
    let mut vector: Vec<f64> = y.iter().zip(&inv_sqrt).map(|(v, s)| v * s).collect();
    let peak = vector
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if v.abs() > vector[best].abs() { i } else { best });
    if vector[peak] < 0.0 {
        vector.iter_mut().for_each(|v| *v = -*v);
        y.iter_mut().for_each(|v| *v = -*v);
    }
    Ok(FiedlerPair {
        value: values[1],
        vector,
        symmetric: y,
    })
}

/// `W_ij = 1` where the cosine of tokens `i` and `j` is at least `tau`, else
/// [`TOKENCUT_FLOOR`]. Tokens are the `h*w` positions of sample 0 in raster
/// order.
pub fn affinity_matrix(features: &Tensor, tau: f64) -> Vec<f64> {
    let [_, d, h, w] = features.dims();
    let n = h * w;
    let src = features.sample(0);
    let tokens: Vec<Vec<f64>> = (0..n)
        .map(|p| {
            let t: Vec<f64> = (0..d).map(|c| src[c * n + p] as f64).collect();
            let norm = dot(&t, &t).sqrt().max(COSINE_EPS);
            t.into_iter().map(|v| v / norm).collect()
        })
        .collect();
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            let v = if dot(&tokens[i], &tokens[j]) >= tau {
                1.0
            } else {
                TOKENCUT_FLOOR
            };
            a[i * n + j] = v;
            a[j * n + i] = v;
        }
    }
    a
}

/// Result of [`tokencut_discover`]; the box is in feature-grid units.
#[derive(Debug, Clone, PartialEq)]
pub struct Discovery {
    pub bbox: BBox,
    /// Every affinity was equal, so there is no cut; `bbox` is the whole grid.
    pub degenerate: bool,
    pub eigenvalue: f64,
    /// Foreground cells before the connected-component step, raster order.
    pub foreground: Vec<bool>,
}

/// Largest 4-connected component of `mask` (first in raster order on ties).
fn largest_component(mask: &[bool], h: usize, w: usize) -> Vec<usize> {
    let mut seen = vec![false; mask.len()];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(p) = queue.pop_front() {
            comp.push(p);
            let (y, x) = (p / w, p % w);
            let mut visit = |q: usize| {
                if mask[q] && !seen[q] {
                    seen[q] = true;
                    queue.push_back(q);
                }
            };
            if y > 0 {
                visit(p - w);
            }
            if y + 1 < h {
                visit(p + w);
            }
            if x > 0 {
                visit(p - 1);
            }
            if x + 1 < w {
                visit(p + 1);
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

/// Graph-cut object discovery on one feature map `(1, D, h, w)`.
///
/// Bipartitions the token graph at the mean of the Fiedler vector, keeps the
/// side holding its largest-magnitude entry, and boxes the largest
/// 4-connected region of that side.
pub fn tokencut_discover(features: &Tensor, tau: f64) -> Result<Discovery> {
    let [n, _, h, w] = features.dims();
    if n != 1 {
        return Err(Error::InvalidArgument(format!("discovery takes one image, got {n}")));
    }
    if h * w < 4 {
        return Err(Error::InvalidArgument(format!(
            "discovery needs at least 4 tokens, got {h}x{w}"
        )));
    }
    let whole = BBox::new(0.0, 0.0, w as f64, h as f64);
    let aff = affinity_matrix(features, tau);
    if aff.iter().all(|&v| v == aff[0]) {
        return Ok(Discovery {
            bbox: whole,
            degenerate: true,
            eigenvalue: f64::NAN,
            foreground: vec![true; h * w],
        });
    }
    let pair = fiedler_vector(&aff, h * w)?;
    let v = &pair.vector;
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let peak = v
        .iter()
        .enumerate()
        .fold(0, |b, (i, x)| if x.abs() > v[b].abs() { i } else { b });
    let upper = v[peak] > mean;
    let foreground: Vec<bool> = v.iter().map(|&x| if upper { x > mean } else { x <= mean }).collect();
    let comp = largest_component(&foreground, h, w);
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for &p in &comp {
        let (y, x) = (p / w, p % w);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x + 1);
        y1 = y1.max(y + 1);
    }
    Ok(Discovery {
        bbox: BBox::new(x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64),
        degenerate: false,
        eigenvalue: pair.value,
        foreground,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorLoc {
    pub score: f64,
    pub correct: usize,
    pub evaluated: usize,
    /// Images without ground truth, left out of the score.
    pub skipped: usize,
}

/// Fraction of images whose predicted box reaches IoU >= 0.5 with some
/// ground-truth box. Images with no ground truth are skipped and counted.
pub fn corloc(preds: &[BBox], gts: &[Vec<BBox>]) -> Result<CorLoc> {
    if preds.len() != gts.len() {
        return Err(Error::InvalidArgument(format!(
            "{} predictions for {} ground-truth sets",
            preds.len(),
            gts.len()
        )));
    }
    let (mut correct, mut evaluated, mut skipped) = (0, 0, 0);
    for (p, g) in preds.iter().zip(gts) {
        if g.is_empty() {
            skipped += 1;
            continue;
        }
        evaluated += 1;
        if g.iter().any(|b| p.iou(b) >= 0.5) {
            correct += 1;
        }
    }
    if evaluated == 0 {
        return Err(Error::InvalidArgument("no image has ground-truth boxes".into()));
    }
    Ok(CorLoc {
        score: correct as f64 / evaluated as f64,
        correct,
        evaluated,
        skipped,
    })
}

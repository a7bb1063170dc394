use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::image::GrayImage;
use crate::tensor::{ops::COSINE_EPS, Tensor};

/// Reference token for a self-similarity map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Anchor {
    /// `(floor(h/2), floor(w/2))`.
    #[default]
    Center,
    At {
        row: usize,
        col: usize,
    },
}

impl Anchor {
    pub fn resolve(self, h: usize, w: usize) -> (usize, usize) {
        match self {
            Anchor::Center => (h / 2, w / 2),
            Anchor::At { row, col } => (row, col),
        }
    }
}

impl FromStr for Anchor {
    type Err = Error;

    /// `center` or `row,col`.
    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("center") {
            return Ok(Anchor::Center);
        }
        let bad = || Error::InvalidArgument(format!("anchor must be `center` or `row,col`, got `{s}`"));
        let (r, c) = s.split_once(',').ok_or_else(bad)?;
        Ok(Anchor::At {
            row: r.trim().parse().map_err(|_| bad())?,
            col: c.trim().parse().map_err(|_| bad())?,
        })
    }
}

const FLAT_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMap {
    pub height: usize,
    pub width: usize,
    /// Cosine similarity to the anchor, row-major.
    pub raw: Vec<f64>,
    pub anchor: (usize, usize),
}

impl SimilarityMap {
    fn range(&self) -> (f64, f64) {
        let min = self.raw.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (min, max)
    }

    /// True when the map has no dynamic range (spread at most 1e-12), so
    /// min-max rescaling is undefined.
    pub fn is_flat(&self) -> bool {
        let (min, max) = self.range();
        max - min <= FLAT_TOL
    }

    /// `(v - min) / (max - min)`; a flat map rescales to all ones.
    pub fn rescaled(&self) -> Vec<f64> {
        let (min, max) = self.range();
        if max - min > FLAT_TOL {
            self.raw.iter().map(|v| (v - min) / (max - min)).collect()
        } else {
            vec![1.0; self.raw.len()]
        }
    }

    pub fn render(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.rescaled().iter().map(|v| (v * 255.0).round() as u8).collect(),
        }
    }
}

/// Cosine similarity of the anchor token of sample 0 against every position.
pub fn self_similarity_map(features: &Tensor, anchor: Anchor) -> Result<SimilarityMap> {
    let [_, d, h, w] = features.dims();
    let (ay, ax) = anchor.resolve(h, w);
    if ay >= h || ax >= w {
        return Err(Error::InvalidArgument(format!(
            "anchor ({ay}, {ax}) outside {h}x{w} map"
        )));
    }
    let plane = h * w;
    let src = features.sample(0);
    let a: Vec<f64> = (0..d).map(|c| src[c * plane + ay * w + ax] as f64).collect();
    let an = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if an == 0.0 {
        return Err(Error::Degenerate(format!("anchor feature at ({ay}, {ax}) is zero")));
    }
    let raw = (0..plane)
        .map(|p| {
            let (mut dot, mut nn) = (0.0, 0.0);
            for (c, av) in a.iter().enumerate() {
                let v = src[c * plane + p] as f64;
                dot += av * v;
                nn += v * v;
            }
            dot / (an * nn.sqrt().max(COSINE_EPS))
        })
        .collect();
    Ok(SimilarityMap {
        height: h,
        width: w,
        raw,
        anchor: (ay, ax),
    })
}

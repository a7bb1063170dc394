//! Measurement battery: keypoint correspondence, CKA scale invariance,
//! spectral object discovery, self-similarity maps and analytic cost
//! accounting.

mod cka;
mod flops;
mod pck;
mod simmap;
mod spectral;

use std::fmt::Write as _;

use crate::error::{Error, Result};

pub use cka::{linear_cka, scale_invariance_curve, CkaMatrix};
pub use flops::{
    flops_model, lift_macs, tradeoff_csv, tradeoff_curve, upsampler_macs, CostReport, LayerCost, TradeoffMethod,
    TradeoffPoint, VitArch, VitCost,
};
pub use pck::{keypoint_transfer_error, pck};
pub use simmap::{self_similarity_map, Anchor, SimilarityMap};
pub use spectral::{
    affinity_matrix, corloc, fiedler_vector, jacobi_eigen, tokencut_discover, CorLoc, Discovery, FiedlerPair,
    MAX_GRAPH_NODES, TOKENCUT_FLOOR, TOKENCUT_TAU,
};

/// Axis-aligned box `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn area(&self) -> f64 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn iou(&self, other: &BBox) -> f64 {
        let ix = (self.x + self.w).min(other.x + other.w) - self.x.max(other.x);
        let iy = (self.y + self.h).min(other.y + other.h) - self.y.max(other.y);
        let inter = ix.max(0.0) * iy.max(0.0);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn scale(&self, sx: f64, sy: f64) -> BBox {
        BBox::new(self.x * sx, self.y * sy, self.w * sx, self.h * sy)
    }
}

/// Keypoint correspondences between two images, in pixel units.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointPair {
    pub source_id: String,
    pub target_id: String,
    /// `(width, height)` of the source image.
    pub source_size: (usize, usize),
    pub target_size: (usize, usize),
    /// `(source (x, y), target (x, y))`.
    pub keypoints: Vec<([f64; 2], [f64; 2])>,
    pub source_bbox: BBox,
    pub target_bbox: BBox,
}

impl KeypointPair {
    pub fn validate(&self) -> Result<()> {
        if self.keypoints.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "pair {} -> {} has no keypoints",
                self.source_id, self.target_id
            )));
        }
        let inside =
            |p: [f64; 2], (w, h): (usize, usize)| p[0] >= 0.0 && p[1] >= 0.0 && p[0] < w as f64 && p[1] < h as f64;
        for (i, &(s, t)) in self.keypoints.iter().enumerate() {
            if !inside(s, self.source_size) || !inside(t, self.target_size) {
                return Err(Error::InvalidArgument(format!("keypoint {i} lies outside its image")));
            }
        }
        for b in [&self.source_bbox, &self.target_bbox] {
            if !(b.w > 0.0 && b.h > 0.0) {
                return Err(Error::InvalidArgument(format!("box {b:?} has no extent")));
            }
        }
        Ok(())
    }
}

/// A named metric with its configuration echo, written as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub metric: String,
    pub config: Vec<(String, String)>,
    pub values: Vec<(String, f64)>,
}

impl EvalReport {
    pub fn new(metric: impl Into<String>) -> Self {
        Self {
            metric: metric.into(),
            ..Default::default()
        }
    }

    pub fn with_config(mut self, key: impl Into<String>, value: impl ToString) -> Self {
        self.config.push((key.into(), value.to_string()));
        self
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.values.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.iter().find(|(n, _)| n == name).map(|v| v.1)
    }

    /// `metric,<config keys>,name,value` with one row per value.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric");
        for (k, _) in &self.config {
            let _ = write!(out, ",{k}");
        }
        out.push_str(",name,value\n");
        for (name, value) in &self.values {
            out.push_str(&self.metric);
            for (_, v) in &self.config {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{name},{value}");
        }
        out
    }
}

//! Analytic multiply-accumulate (MAC) counts.
//!
//! Two backbone conventions are reported side by side:
//!
//! * `table`: parameterized layers only (patch embedding, QKV, output
//!   projection, MLP), one MAC per weight use. This is linear in the token
//!   count and is the headline figure.
//! * `full`: `table` plus the two attention products (`N² · dim` each per
//!   block). `full_gflops` doubles it to count multiplies and adds
//!   separately.
//!
//! Convolutions cost `out_positions · Cin · Cout · k²`; the 2x2/stride-2
//! transposed convolution costs `out_positions · Cin · Cout`.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::lift::LiftConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VitArch {
    pub name: String,
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub patch: usize,
}

impl VitArch {
    pub fn new(name: &str, depth: usize, dim: usize, heads: usize, patch: usize) -> Self {
        Self {
            name: name.to_string(),
            depth,
            dim,
            heads,
            patch,
        }
    }

    pub const NAMES: [&'static str; 6] = ["vit-s16", "vit-b16", "vit-l16", "vit-s8", "vit-b8", "vit-l8"];
}

impl FromStr for VitArch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        let (depth, dim, heads, patch) = match lower.as_str() {
            "vit-s16" => (12, 384, 6, 16),
            "vit-b16" => (12, 768, 12, 16),
            "vit-l16" => (24, 1024, 16, 16),
            "vit-s8" => (12, 384, 6, 8),
            "vit-b8" => (12, 768, 12, 8),
            "vit-l8" => (24, 1024, 16, 8),
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "unknown architecture `{s}` (one of {})",
                    VitArch::NAMES.join(", ")
                )))
            }
        };
        Ok(VitArch::new(&lower, depth, dim, heads, patch))
    }
}

/// Whole-model MACs per component for one forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VitCost {
    /// Patch grid extent per axis.
    pub grid: usize,
    /// Patch tokens plus the class token.
    pub tokens: usize,
    pub patch_embed: u64,
    pub qkv: u64,
    pub attn_scores: u64,
    pub attn_values: u64,
    pub proj: u64,
    pub mlp: u64,
}

impl VitCost {
    pub fn new(arch: &VitArch, resolution: usize, stride: usize) -> Result<Self> {
        if stride == 0 || stride > arch.patch {
            return Err(Error::InvalidArgument(format!(
                "stride must be in 1..={}, got {stride}",
                arch.patch
            )));
        }
        if resolution < arch.patch {
            return Err(Error::InvalidArgument(format!(
                "resolution {resolution} is smaller than patch {}",
                arch.patch
            )));
        }
        let grid = (resolution - arch.patch) / stride + 1;
        let patches = (grid * grid) as u64;
        let n = patches + 1;
        let (l, d) = (arch.depth as u64, arch.dim as u64);
        Ok(Self {
            grid,
            tokens: n as usize,
            patch_embed: patches * 3 * (arch.patch * arch.patch) as u64 * d,
            qkv: l * n * 3 * d * d,
            attn_scores: l * n * n * d,
            attn_values: l * n * n * d,
            proj: l * n * d * d,
            mlp: l * n * 8 * d * d,
        })
    }

    /// Parameterized layers only.
    pub fn table_macs(&self) -> u64 {
        self.patch_embed + self.qkv + self.proj + self.mlp
    }

    pub fn attention_macs(&self) -> u64 {
        self.attn_scores + self.attn_values
    }

    pub fn full_macs(&self) -> u64 {
        self.table_macs() + self.attention_macs()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerCost {
    pub name: String,
    pub macs: u64,
}

/// Per-layer MACs of one LiFT application on an `h x w` feature grid.
pub fn lift_macs(config: &LiftConfig, h: usize, w: usize) -> Result<Vec<LayerCost>> {
    config.validate()?;
    let d = config.feature_dim as u64;
    let (h, w) = (h as u64, w as u64);
    let p = config.patch as u64;
    let mut layers = Vec::new();
    if config.use_image {
        let mut cin = 3u64;
        for (s, &c) in config.encoder_channels.iter().enumerate() {
            let div = 1u64 << (s + 1);
            let positions = (p * h / div) * (p * w / div);
            layers.push(LayerCost {
                name: format!("enc{s}.conv"),
                macs: positions * cin * c as u64 * 9,
            });
            cin = c as u64;
        }
    }
    let deep = config.deep_channels() as u64;
    let skip = config.skip_channels() as u64;
    let out_positions = 4 * h * w;
    layers.push(LayerCost {
        name: "fuse.tconv".into(),
        macs: out_positions * (d + deep) * deep,
    });
    layers.push(LayerCost {
        name: "out.conv".into(),
        macs: out_positions * (deep + skip) * d,
    });
    Ok(layers)
}

/// Upsampling stage appended to the backbone in a cost sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TradeoffMethod {
    /// Backbone features as they are.
    Raw,
    Bilinear,
    ResizeConv,
    Jbu {
        radius: usize,
    },
    Lift,
}

impl TradeoffMethod {
    pub fn name(&self) -> &'static str {
        match self {
            TradeoffMethod::Raw => "raw",
            TradeoffMethod::Bilinear => "bilinear",
            TradeoffMethod::ResizeConv => "rc",
            TradeoffMethod::Jbu { .. } => "jbu",
            TradeoffMethod::Lift => "lift",
        }
    }
}

impl FromStr for TradeoffMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "raw" | "none" => Ok(TradeoffMethod::Raw),
            "bilinear" => Ok(TradeoffMethod::Bilinear),
            "rc" | "resize-conv" => Ok(TradeoffMethod::ResizeConv),
            "jbu" => Ok(TradeoffMethod::Jbu { radius: 2 }),
            "lift" => Ok(TradeoffMethod::Lift),
            _ => Err(Error::InvalidArgument(format!(
                "unknown method `{s}` (raw, bilinear, rc, jbu, lift)"
            ))),
        }
    }
}

/// MACs of one 2x upsampling of a `(D, h, w)` map. Interpolation counts one
/// MAC per tap.
pub fn upsampler_macs(method: TradeoffMethod, arch: &VitArch, h: usize, w: usize) -> Result<u64> {
    let d = arch.dim as u64;
    let out = 4 * (h * w) as u64;
    Ok(match method {
        TradeoffMethod::Raw => 0,
        TradeoffMethod::Bilinear => out * d * 4,
        TradeoffMethod::ResizeConv => out * d * 4 + out * d * d * 9,
        TradeoffMethod::Jbu { radius } => {
            let taps = (2 * radius + 1) as u64;
            out * d * taps * taps
        }
        TradeoffMethod::Lift => {
            let cfg = LiftConfig::new(arch.dim, arch.patch);
            lift_macs(&cfg, h, w)?.iter().map(|l| l.macs).sum()
        }
    })
}

/// Backbone cost at one geometry, optionally with one LiFT application.
#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub arch: VitArch,
    pub resolution: usize,
    pub stride: usize,
    pub vit: VitCost,
    pub lift: Option<Vec<LayerCost>>,
}

impl CostReport {
    /// Headline backbone figure in G(MAC), table convention.
    pub fn backbone_table_g(&self) -> f64 {
        self.vit.table_macs() as f64 / 1e9
    }

    pub fn backbone_full_gmacs(&self) -> f64 {
        self.vit.full_macs() as f64 / 1e9
    }

    pub fn backbone_full_gflops(&self) -> f64 {
        2.0 * self.backbone_full_gmacs()
    }

    pub fn lift_gmacs(&self) -> Option<f64> {
        self.lift
            .as_ref()
            .map(|l| l.iter().map(|x| x.macs).sum::<u64>() as f64 / 1e9)
    }

    /// LiFT cost relative to the backbone, both in the table convention.
    pub fn lift_overhead(&self) -> Option<f64> {
        self.lift_gmacs().map(|g| g / self.backbone_table_g())
    }

    pub fn to_text(&self) -> String {
        let v = &self.vit;
        let mut s = String::new();
        let _ = writeln!(
            s,
            "arch: {} (depth {}, dim {}, heads {}, patch {})",
            self.arch.name, self.arch.depth, self.arch.dim, self.arch.heads, self.arch.patch
        );
        let _ = writeln!(s, "resolution: {}", self.resolution);
        let _ = writeln!(s, "stride: {}", self.stride);
        let _ = writeln!(s, "grid: {0}x{0}", v.grid);
        let _ = writeln!(s, "tokens: {}", v.tokens);
        let _ = writeln!(
            s,
            "convention: table = MACs of parameterized layers; full = table + attention products; flops = 2 x MACs"
        );
        for (name, macs) in [
            ("patch_embed", v.patch_embed),
            ("qkv", v.qkv),
            ("attn_scores", v.attn_scores),
            ("attn_values", v.attn_values),
            ("proj", v.proj),
            ("mlp", v.mlp),
        ] {
            let _ = writeln!(s, "macs.{name}: {macs}");
        }
        let _ = writeln!(s, "backbone_gflops_table: {:.4}", self.backbone_table_g());
        let _ = writeln!(s, "backbone_gmacs_full: {:.4}", self.backbone_full_gmacs());
        let _ = writeln!(s, "backbone_gflops_full: {:.4}", self.backbone_full_gflops());
        if let Some(layers) = &self.lift {
            for l in layers {
                let _ = writeln!(s, "lift.{}: {}", l.name, l.macs);
            }
            let g = self.lift_gmacs().unwrap_or_default();
            let _ = writeln!(s, "lift_gflops_table: {g:.4}");
            let _ = writeln!(s, "total_gflops_table: {:.4}", self.backbone_table_g() + g);
            let _ = writeln!(s, "lift_overhead: {:.4}", self.lift_overhead().unwrap_or_default());
        }
        s
    }
}

/// Backbone cost at `resolution`/`stride`, plus one LiFT application on its
/// grid when `lift` is given.
pub fn flops_model(arch: &VitArch, resolution: usize, stride: usize, lift: Option<&LiftConfig>) -> Result<CostReport> {
    let vit = VitCost::new(arch, resolution, stride)?;
    let lift = lift.map(|cfg| lift_macs(cfg, vit.grid, vit.grid)).transpose()?;
    Ok(CostReport {
        arch: arch.clone(),
        resolution,
        stride,
        vit,
        lift,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffPoint {
    pub method: String,
    pub resolution: usize,
    pub stride: usize,
    /// Backbone plus upsampler, table convention.
    pub gflops: f64,
    pub score: f64,
}

/// Pairs each `(method, resolution, stride)` with its cost and score.
pub fn tradeoff_curve(
    arch: &VitArch,
    configs: &[(TradeoffMethod, usize, usize)],
    scores: &[f64],
) -> Result<Vec<TradeoffPoint>> {
    if configs.len() != scores.len() {
        return Err(Error::InvalidArgument(format!(
            "{} configurations but {} scores",
            configs.len(),
            scores.len()
        )));
    }
    configs
        .iter()
        .zip(scores)
        .map(|(&(method, resolution, stride), &score)| {
            let vit = VitCost::new(arch, resolution, stride)?;
            let extra = upsampler_macs(method, arch, vit.grid, vit.grid)?;
            Ok(TradeoffPoint {
                method: method.name().to_string(),
                resolution,
                stride,
                gflops: (vit.table_macs() + extra) as f64 / 1e9,
                score,
            })
        })
        .collect()
}

pub fn tradeoff_csv(points: &[TradeoffPoint]) -> String {
    let mut out = String::from("method,resolution,stride,gflops,score\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{}",
            p.method, p.resolution, p.stride, p.gflops, p.score
        );
    }
    out
}

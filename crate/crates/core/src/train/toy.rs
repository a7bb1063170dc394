//! Desk-scale stand-ins: a frozen seeded featurizer in place of a ViT, and
//! procedurally generated scenes with known object boxes.

use crate::error::{Error, Result};
use crate::eval::BBox;
use crate::lift::standardize_image;
use crate::rng::SplitMix64;
use crate::tensor::{ops, Tensor};

const HIDDEN: usize = 16;

/// conv 3→16 (3x3, stride 2) → ReLU → conv 16→D (3x3, stride 2) → ReLU →
/// average pool over `P/4`, applied to the standardized image.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyFeaturizer {
    conv1: (Tensor, Tensor),
    conv2: (Tensor, Tensor),
    patch: usize,
    seed: u64,
}

impl ToyFeaturizer {
    pub fn new(seed: u64, patch: usize, dim: usize) -> Result<Self> {
        if patch < 4 || !patch.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "toy featurizer patch must be a positive multiple of 4, got {patch}"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "toy featurizer needs at least one channel".into(),
            ));
        }
        let mut rng = SplitMix64::new(seed);
        let mut kaiming = |shape: [usize; 4]| {
            let bound = (6.0 / (shape[1] * 9) as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.uniform(-bound, bound) as f32)
        };
        let w1 = kaiming([HIDDEN, 3, 3, 3]);
        let w2 = kaiming([dim, HIDDEN, 3, 3]);
        Ok(Self {
            conv1: (w1, Tensor::zeros([1, HIDDEN, 1, 1])),
            conv2: (w2, Tensor::zeros([1, dim, 1, 1])),
            patch,
            seed,
        })
    }

    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn dim(&self) -> usize {
        self.conv2.0.dims()[0]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// `[0, 1]` image `(N, 3, H, W)` to features `(N, D, H/P, W/P)`.
    pub fn apply(&self, image: &Tensor) -> Result<Tensor> {
        let [_, c, h, w] = image.dims();
        if c != 3 {
            return Err(Error::shape("toy_featurizer", "channels", format!("need RGB, got {c}")));
        }
        if h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::Geometry(format!(
                "image {h}x{w} is not divisible by patch {}",
                self.patch
            )));
        }
        let x = standardize_image(image);
        let x = ops::relu(&ops::conv2d(&x, &self.conv1.0, &self.conv1.1, 2, 1)?);
        let x = ops::relu(&ops::conv2d(&x, &self.conv2.0, &self.conv2.1, 2, 1)?);
        ops::avg_pool(&x, self.patch / 4)
    }
}

/// One-shot form of [`ToyFeaturizer`].
pub fn toy_featurizer(image: &Tensor, seed: u64, patch: usize, dim: usize) -> Result<Tensor> {
    ToyFeaturizer::new(seed, patch, dim)?.apply(image)
}

/// A generated image and the boxes of its foreground objects, in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyScene {
    pub image: Tensor,
    pub boxes: Vec<BBox>,
}

#[derive(Clone, Copy)]
enum Shape {
    Rect,
    Ellipse,
}

struct Blob {
    shape: Shape,
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    color: [f64; 3],
    stripes: Option<([f64; 3], f64, usize)>,
}

impl Blob {
    fn random(rng: &mut SplitMix64, res: usize, lo: f64, hi: f64, avoid: [f64; 3]) -> Self {
        let r = res as f64;
        let w = (rng.uniform(lo, hi) * r).round().max(2.0);
        let h = (rng.uniform(lo, hi) * r).round().max(2.0);
        let x0 = rng.uniform(0.0, r - w).round();
        let y0 = rng.uniform(0.0, r - h).round();
        let shape = if rng.next_f64() < 0.5 {
            Shape::Rect
        } else {
            Shape::Ellipse
        };
        // Keep the object visibly distinct from the background.
        let mut color = [0.0; 3];
        for _ in 0..16 {
            color = [rng.next_f64(), rng.next_f64(), rng.next_f64()];
            let dist: f64 = color
                .iter()
                .zip(&avoid)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            if dist > 0.45 {
                break;
            }
        }
        let stripes = (rng.next_f64() < 0.5).then(|| {
            let second = [rng.next_f64(), rng.next_f64(), rng.next_f64()];
            (second, rng.uniform(6.0, 16.0).round(), rng.below(3))
        });
        Self {
            shape,
            x0,
            y0,
            w,
            h,
            color,
            stripes,
        }
    }

    fn covers(&self, x: usize, y: usize) -> bool {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let inside_box = px >= self.x0 && px < self.x0 + self.w && py >= self.y0 && py < self.y0 + self.h;
        match self.shape {
            Shape::Rect => inside_box,
            Shape::Ellipse => {
                let dx = (px - self.x0 - self.w / 2.0) / (self.w / 2.0);
                let dy = (py - self.y0 - self.h / 2.0) / (self.h / 2.0);
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    fn color_at(&self, x: usize, y: usize) -> [f64; 3] {
        match self.stripes {
            Some((second, period, orient)) => {
                let t = match orient {
                    0 => x as f64,
                    1 => y as f64,
                    _ => (x + y) as f64,
                };
                if (t / period).floor() as i64 % 2 == 0 {
                    self.color
                } else {
                    second
                }
            }
            None => self.color,
        }
    }

    /// Tight pixel box of the covered area.
    fn bbox(&self, res: usize) -> BBox {
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for y in 0..res {
            for x in 0..res {
                if self.covers(x, y) {
                    x0 = x0.min(x);
                    y0 = y0.min(y);
                    x1 = x1.max(x + 1);
                    y1 = y1.max(y + 1);
                }
            }
        }
        BBox::new(x0 as f64, y0 as f64, (x1 - x0) as f64, (y1 - y0) as f64)
    }
}

/// Smooth two-color background with pixel noise, one large foreground object
/// (solid or striped rectangle/ellipse) and up to two small distractors.
/// Only the large object is reported in `boxes`.
pub fn generate_scene(rng: &mut SplitMix64, res: usize) -> ToyScene {
    let c0 = [rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)];
    let c1 = [rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)];
    let angle = rng.uniform(0.0, std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let mean_bg = [(c0[0] + c1[0]) / 2.0, (c0[1] + c1[1]) / 2.0, (c0[2] + c1[2]) / 2.0];
    let main = Blob::random(rng, res, 0.3, 0.6, mean_bg);
    let extra: Vec<Blob> = (0..rng.below(3))
        .map(|_| Blob::random(rng, res, 0.06, 0.14, mean_bg))
        .collect();
    let r = res as f64;
    let mut image = Tensor::zeros([1, 3, res, res]);
    let plane = res * res;
    for y in 0..res {
        for x in 0..res {
            let t = (((x as f64 - r / 2.0) * ca + (y as f64 - r / 2.0) * sa) / r + 0.5).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = c0[c] + (c1[c] - c0[c]) * t;
            }
            if main.covers(x, y) {
                px = main.color_at(x, y);
            }
            for b in &extra {
                if b.covers(x, y) {
                    px = b.color_at(x, y);
                }
            }
            for (c, v) in px.iter().enumerate() {
                let noisy = v + 0.02 * rng.normal();
                image.data_mut()[c * plane + y * res + x] = noisy.clamp(0.0, 1.0) as f32;
            }
        }
    }
    ToyScene {
        image,
        boxes: vec![main.bbox(res)],
    }
}

/// Per-channel affine color perturbation: `v * U[0.8, 1.2] + U[-0.1, 0.1]`,
/// clamped to `[0, 1]`.
pub fn color_jitter(image: &Tensor, rng: &mut SplitMix64) -> Tensor {
    let [_, c, _, _] = image.dims();
    let coeffs: Vec<(f64, f64)> = (0..c)
        .map(|_| (rng.uniform(0.8, 1.2), rng.uniform(-0.1, 0.1)))
        .collect();
    Tensor::from_fn(image.shape(), |[n, ch, y, x]| {
        let (s, b) = coeffs[ch];
        (image.at(n, ch, y, x) as f64 * s + b).clamp(0.0, 1.0) as f32
    })
}

/// Translates content by `(dx, dy)` pixels; uncovered pixels repeat the edge.
pub fn shift_image(image: &Tensor, dx: isize, dy: isize) -> Tensor {
    let [_, _, h, w] = image.dims();
    Tensor::from_fn(image.shape(), |[n, c, y, x]| {
        let sy = (y as isize - dy).clamp(0, h as isize - 1) as usize;
        let sx = (x as isize - dx).clamp(0, w as isize - 1) as usize;
        image.at(n, c, sy, sx)
    })
}

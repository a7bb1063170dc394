//! The LiFT block: a small image encoder, fusion with the backbone features,
//! and a 2x2/stride-2 transposed convolution that doubles their resolution.
//!
//! Layout for patch size `P` with `S = log2(P)` encoder stages:
//!
//! ```text
//! image (P·h) ─ enc1 ─ enc2 ─ … ─ enc(S-1) ──────────────┐ skip, 2h
//!                                     └─ encS ─┐ h        │
//! features (h) ────────────────────── concat ──┴─ tconv ─ relu ─ concat ─ 1x1 ─ out (2h)
//! ```
//!
//! Each encoder stage is conv 3x3/stride 2 → group norm (8 groups) → ReLU.

mod weights;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Tape, Tensor, Var};
use crate::train::Upsampler;
use crate::upsample::bilinear_resize;

pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

/// Per-channel image mean used to standardize `[0, 1]` RGB input.
pub const IMAGE_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
/// Per-channel image standard deviation.
pub const IMAGE_STD: [f64; 3] = [0.229, 0.224, 0.225];

pub const NORM_GROUPS: usize = 8;
pub const NORM_EPS: f64 = 1e-5;
/// Deepest supported recursion for [`lift_apply_recursive`].
pub const MAX_RECURSION: usize = 4;

/// `(x - mean) / std` per RGB channel.
pub fn standardize_image<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let [_, c, _, _] = image.dims();
    Tensor::from_fn(image.shape(), |[n, ch, y, x]| {
        let v = image.at(n, ch, y, x).as_f64();
        if c == 3 {
            T::of((v - IMAGE_MEAN[ch]) / IMAGE_STD[ch])
        } else {
            T::of(v)
        }
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LiftConfig {
    /// Backbone feature channels `D`.
    pub feature_dim: usize,
    /// Backbone patch size (= stride) `P`.
    pub patch: usize,
    /// One entry per encoder stage, strictly increasing.
    pub encoder_channels: Vec<usize>,
    /// `false` feeds zeros in place of every image-derived tensor.
    pub use_image: bool,
    pub seed: u64,
}

impl LiftConfig {
    /// Default channel plan: 32, 64, … doubling, one stage per factor of two in `P`.
    pub fn new(feature_dim: usize, patch: usize) -> Self {
        let stages = if patch.is_power_of_two() {
            patch.trailing_zeros() as usize
        } else {
            0
        };
        Self {
            feature_dim,
            patch,
            encoder_channels: (0..stages).map(|i| 32 << i).collect(),
            use_image: true,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_image(mut self, use_image: bool) -> Self {
        self.use_image = use_image;
        self
    }

    pub fn with_channels(mut self, channels: Vec<usize>) -> Self {
        self.encoder_channels = channels;
        self
    }

    pub fn stages(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Channels of the deepest encoder output (feature resolution).
    pub fn deep_channels(&self) -> usize {
        *self.encoder_channels.last().expect("validated config has stages")
    }

    /// Channels of the encoder output at twice the feature resolution.
    pub fn skip_channels(&self) -> usize {
        self.encoder_channels[self.stages() - 2]
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch < 4 || !self.patch.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "patch size must be a power of two >= 4, got {}",
                self.patch
            )));
        }
        let stages = self.patch.trailing_zeros() as usize;
        if self.stages() != stages {
            return Err(Error::InvalidArgument(format!(
                "patch {} needs {stages} encoder stages, got {}",
                self.patch,
                self.stages()
            )));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be >= 1".into()));
        }
        if self.encoder_channels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(format!(
                "encoder channels must be strictly increasing, got {:?}",
                self.encoder_channels
            )));
        }
        if let Some(c) = self.encoder_channels.iter().find(|c| **c % NORM_GROUPS != 0) {
            return Err(Error::InvalidArgument(format!(
                "encoder channel count {c} is not divisible by {NORM_GROUPS} norm groups"
            )));
        }
        Ok(())
    }

    /// Names and shapes of every parameter, in storage order.
    pub fn parameter_shapes(&self) -> Vec<(String, [usize; 4])> {
        let mut out = Vec::new();
        let mut cin = 3;
        for (i, &c) in self.encoder_channels.iter().enumerate() {
            let s = i + 1;
            out.push((format!("enc{s}.conv.weight"), [c, cin, 3, 3]));
            out.push((format!("enc{s}.conv.bias"), [1, c, 1, 1]));
            out.push((format!("enc{s}.norm.gamma"), [1, c, 1, 1]));
            out.push((format!("enc{s}.norm.beta"), [1, c, 1, 1]));
            cin = c;
        }
        let (d, deep, skip) = (self.feature_dim, self.deep_channels(), self.skip_channels());
        out.push(("fuse.weight".into(), [d + deep, deep, 2, 2]));
        out.push(("fuse.bias".into(), [1, deep, 1, 1]));
        out.push(("out.weight".into(), [d, deep + skip, 1, 1]));
        out.push(("out.bias".into(), [1, d, 1, 1]));
        out
    }
}

/// LiFT parameters together with the configuration they were built for.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftModel<T: Scalar = f32> {
    config: LiftConfig,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
}

/// Deterministic Kaiming-uniform initialization (`bound = sqrt(6 / fan_in)`),
/// zero biases, unit norm scale and zero norm shift.
pub fn init_lift(config: LiftConfig) -> Result<LiftModel> {
    config.validate()?;
    let mut rng = SplitMix64::new(config.seed);
    let mut names = Vec::new();
    let mut params = Vec::new();
    for (name, shape) in config.parameter_shapes() {
        let t = if name.ends_with(".weight") {
            // Inputs feeding one output: Cin*k*k for convs, Cin for the
            // non-overlapping transposed conv.
            let fan_in = if name.starts_with("fuse") {
                shape[0]
            } else {
                shape[1] * shape[2] * shape[3]
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            Tensor::from_fn(shape, |_| rng.uniform(-bound, bound) as f32)
        } else if name.ends_with(".gamma") {
            Tensor::ones(shape)
        } else {
            Tensor::zeros(shape)
        };
        names.push(name);
        params.push(t);
    }
    Ok(LiftModel { config, names, params })
}

impl<T: Scalar> LiftModel<T> {
    /// Assembles a model from named tensors, checking them against `config`.
    pub fn from_parts(config: LiftConfig, named: Vec<(String, Tensor<T>)>) -> Result<Self> {
        config.validate()?;
        let expected = config.parameter_shapes();
        if expected.len() != named.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} parameter tensors, got {}",
                expected.len(),
                named.len()
            )));
        }
        for ((en, es), (n, t)) in expected.iter().zip(&named) {
            if en != n || t.dims() != *es {
                return Err(Error::InvalidArgument(format!(
                    "parameter `{n}` {} does not match expected `{en}` {:?}",
                    t.shape(),
                    es
                )));
            }
        }
        let (names, params) = named.into_iter().unzip();
        Ok(Self { config, names, params })
    }

    pub fn config(&self) -> &LiftConfig {
        &self.config
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn cast<U: Scalar>(&self) -> LiftModel<U> {
        LiftModel {
            config: self.config.clone(),
            names: self.names.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(Tensor::all_finite)
    }

    fn check_geometry(&self, features: &Tensor<T>, image: &Tensor<T>) -> Result<()> {
        let [n, d, h, w] = features.dims();
        let [ni, ci, hi, wi] = image.dims();
        let p = self.config.patch;
        if d != self.config.feature_dim {
            return Err(Error::Geometry(format!(
                "features have {d} channels, model expects {}",
                self.config.feature_dim
            )));
        }
        if ni != n || ci != 3 || hi != p * h || wi != p * w {
            return Err(Error::Geometry(format!(
                "image must be ({n}, 3, {}, {}) for features {} at patch {p}, got {}",
                p * h,
                p * w,
                features.shape(),
                image.shape()
            )));
        }
        Ok(())
    }

    /// Records one LiFT application on `tape`. `params` are the vars holding
    /// this model's tensors (trainable or constant); `image` is standardized.
    pub fn forward_on_tape(&self, tape: &mut Tape<T>, params: &[Var], features: Var, image: Var) -> Result<Var> {
        self.check_geometry(tape.value(features), tape.value(image))?;
        let cfg = &self.config;
        let stages = cfg.stages();
        let [n, _, h, w] = tape.value(features).dims();
        let (deep, skip) = if cfg.use_image {
            let mut x = image;
            let mut skip = None;
            for s in 0..stages {
                let base = 4 * s;
                let y = tape.conv2d(x, params[base], params[base + 1], 2, 1)?;
                let y = tape.group_norm(y, NORM_GROUPS, params[base + 2], params[base + 3], NORM_EPS)?;
                x = tape.relu(y);
                if s + 2 == stages {
                    skip = Some(x);
                }
            }
            (x, skip.expect("at least two stages"))
        } else {
            let deep = tape.constant(Tensor::zeros([n, cfg.deep_channels(), h, w]));
            let skip = tape.constant(Tensor::zeros([n, cfg.skip_channels(), 2 * h, 2 * w]));
            (deep, skip)
        };
        let head = 4 * stages;
        let fused = tape.concat_channels(features, deep)?;
        let up = tape.transpose_conv2d(fused, params[head], params[head + 1], 2)?;
        let up = tape.relu(up);
        let joined = tape.concat_channels(up, skip)?;
        tape.conv2d(joined, params[head + 2], params[head + 3], 1, 0)
    }
}

/// One LiFT application: features `(N, D, h, w)` and a standardized image
/// `(N, 3, P·h, P·w)` to features `(N, D, 2h, 2w)`.
pub fn lift_forward<T: Scalar>(model: &LiftModel<T>, features: &Tensor<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    model.check_geometry(features, image)?;
    let mut tape = Tape::new();
    let params: Vec<Var> = model.params.iter().map(|p| tape.constant(p.clone())).collect();
    let f = tape.constant(features.clone());
    let img = tape.constant(image.clone());
    let out = model.forward_on_tape(&mut tape, &params, f, img)?;
    Ok(tape.value(out).clone())
}

/// Applies LiFT `k` times. Before pass `i > 1` the image is bilinearly
/// resized to `P` times the current feature extents.
pub fn lift_apply_recursive<T: Scalar>(
    model: &LiftModel<T>,
    features: &Tensor<T>,
    image: &Tensor<T>,
    k: usize,
) -> Result<Tensor<T>> {
    if k == 0 || k > MAX_RECURSION {
        return Err(Error::InvalidArgument(format!(
            "recursion depth must be in 1..={MAX_RECURSION}, got {k}"
        )));
    }
    let p = model.config.patch;
    let mut current = lift_forward(model, features, image)?;
    for _ in 1..k {
        let [_, _, h, w] = current.dims();
        let resized = bilinear_resize(image, p * h, p * w);
        current = lift_forward(model, &current, &resized)?;
    }
    Ok(current)
}

pub fn count_params<T: Scalar>(model: &LiftModel<T>) -> usize {
    model.params.iter().map(Tensor::numel).sum()
}

impl<T: Scalar> Upsampler<T> for LiftModel<T> {
    fn name(&self) -> &str {
        if self.config.use_image {
            "lift"
        } else {
            "lift-no-image"
        }
    }

    fn parameters(&self) -> Vec<&Tensor<T>> {
        self.params.iter().collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.params.iter_mut().collect()
    }

    fn parameter_names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn forward_tape(&self, tape: &mut Tape<T>, params: &[Var], features: Var, image: &Tensor<T>) -> Result<Var> {
        let img = tape.constant(standardize_image(image));
        self.forward_on_tape(tape, params, features, img)
    }
}

//! The multi-scale reconstruction objective, Adam, the training loop and the
//! toy featurizer that stands in for a frozen ViT.
//!
//! For a triplet of features at scales 1, 1/2 and 1/4 the objective is
//!
//! ```text
//! d(F_1, Θ(F_1/2, x_1/2)) + d(F_1/2, Θ(F_1/4, x_1/4))
//! ```
//!
//! with the backbone features held constant.

mod adam;
pub mod toy;

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{ops, Scalar, Tape, Tensor, Var};
use crate::upsample::bilinear_upsample_2x;

pub use adam::{adam_step, AdamState};
pub use toy::{toy_featurizer, ToyFeaturizer};

/// A 2x feature upsampler that can be recorded on a tape and trained.
pub trait Upsampler<T: Scalar = f32> {
    fn name(&self) -> &str;

    fn parameters(&self) -> Vec<&Tensor<T>>;

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>>;

    fn parameter_names(&self) -> Vec<String> {
        (0..self.parameters().len()).map(|i| format!("param{i}")).collect()
    }

    /// Records `features (N, D, h, w) -> (N, D, 2h, 2w)`. `params` hold this
    /// upsampler's tensors in [`Upsampler::parameters`] order; `image` is the
    /// `[0, 1]` RGB image paired with `features`.
    fn forward_tape(&self, tape: &mut Tape<T>, params: &[Var], features: Var, image: &Tensor<T>) -> Result<Var>;

    /// Inference without gradient tracking.
    fn upsample(&self, features: &Tensor<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let params: Vec<Var> = self
            .parameters()
            .into_iter()
            .map(|p| tape.constant(p.clone()))
            .collect();
        let f = tape.constant(features.clone());
        let out = self.forward_tape(&mut tape, &params, f, image)?;
        Ok(tape.value(out).clone())
    }
}

/// Parameter-free bilinear 2x, usable wherever an [`Upsampler`] is expected.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Bilinear;

impl<T: Scalar> Upsampler<T> for Bilinear {
    fn name(&self) -> &str {
        "bilinear"
    }

    fn parameters(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }

    fn forward_tape(&self, tape: &mut Tape<T>, _params: &[Var], features: Var, _image: &Tensor<T>) -> Result<Var> {
        let up = bilinear_upsample_2x(tape.value(features));
        Ok(tape.constant(up))
    }
}

/// Backbone features of one image at scales 1, 1/2 and 1/4, with the images
/// for the two lower scales.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleTriplet<T: Scalar = f32> {
    pub feats_full: Tensor<T>,
    pub feats_half: Tensor<T>,
    pub feats_quarter: Tensor<T>,
    pub img_half: Tensor<T>,
    pub img_quarter: Tensor<T>,
}

impl<T: Scalar> ScaleTriplet<T> {
    pub fn new(
        feats_full: Tensor<T>,
        feats_half: Tensor<T>,
        feats_quarter: Tensor<T>,
        img_half: Tensor<T>,
        img_quarter: Tensor<T>,
    ) -> Result<Self> {
        let t = Self {
            feats_full,
            feats_half,
            feats_quarter,
            img_half,
            img_quarter,
        };
        t.validate()?;
        Ok(t)
    }

    /// Patch size implied by the image/feature ratio.
    pub fn patch(&self) -> usize {
        self.img_half.dims()[2] / self.feats_half.dims()[2]
    }

    pub fn validate(&self) -> Result<()> {
        let [n, d, h, w] = self.feats_full.dims();
        let [hn, hd, hh, hw] = self.feats_half.dims();
        let [qn, qd, qh, qw] = self.feats_quarter.dims();
        if hn != n || qn != n || hd != d || qd != d {
            return Err(Error::Geometry(format!(
                "feature batches/channels disagree: {}, {}, {}",
                self.feats_full.shape(),
                self.feats_half.shape(),
                self.feats_quarter.shape()
            )));
        }
        if h != 2 * hh || w != 2 * hw {
            return Err(Error::Geometry(format!(
                "scale-1 features {}x{} are not twice the half-scale {hh}x{hw}",
                h, w
            )));
        }
        if hh != 2 * qh || hw != 2 * qw {
            return Err(Error::Geometry(format!(
                "half-scale features {hh}x{hw} are not twice the quarter-scale {qh}x{qw}"
            )));
        }
        let [in_, ic, ih, iw] = self.img_half.dims();
        if in_ != n || ic != 3 || ih % hh != 0 || ih / hh == 0 || iw != ih / hh * hw {
            return Err(Error::Geometry(format!(
                "half-scale image {} does not tile features {}",
                self.img_half.shape(),
                self.feats_half.shape()
            )));
        }
        let p = ih / hh;
        if self.img_quarter.dims() != [n, 3, p * qh, p * qw] {
            return Err(Error::Geometry(format!(
                "quarter-scale image is {}, expected ({n}, 3, {}, {})",
                self.img_quarter.shape(),
                p * qh,
                p * qw
            )));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> ScaleTriplet<U> {
        ScaleTriplet {
            feats_full: self.feats_full.cast(),
            feats_half: self.feats_half.cast(),
            feats_quarter: self.feats_quarter.cast(),
            img_half: self.img_half.cast(),
            img_quarter: self.img_quarter.cast(),
        }
    }
}

/// Distance `d` between an upsampled map and its target.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Distance {
    /// Mean over locations of `1 - cos`.
    #[default]
    Cosine,
    /// Mean absolute difference.
    L1,
    /// Mean squared difference.
    L2,
}

impl Distance {
    pub const ALL: [Distance; 3] = [Distance::Cosine, Distance::L1, Distance::L2];

    pub fn as_str(self) -> &'static str {
        match self {
            Distance::Cosine => "cosine",
            Distance::L1 => "l1",
            Distance::L2 => "l2",
        }
    }

    pub fn eval<T: Scalar>(self, a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
        match self {
            Distance::Cosine => ops::cosine_distance(a, b),
            Distance::L1 => ops::lp_distance(a, b, 1),
            Distance::L2 => ops::lp_distance(a, b, 2),
        }
    }

    pub fn record<T: Scalar>(self, tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var> {
        match self {
            Distance::Cosine => tape.cosine_distance(a, b),
            Distance::L1 => tape.lp_distance(a, b, 1),
            Distance::L2 => tape.lp_distance(a, b, 2),
        }
    }
}

impl std::fmt::Display for Distance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Distance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cosine" | "cos" => Ok(Distance::Cosine),
            "l1" => Ok(Distance::L1),
            "l2" => Ok(Distance::L2),
            _ => Err(Error::InvalidArgument(format!(
                "unknown distance `{s}` (cosine, l1, l2)"
            ))),
        }
    }
}

/// Records the two-branch objective for one triplet and returns the loss var.
pub fn recon_loss_tape<T: Scalar, U: Upsampler<T> + ?Sized>(
    model: &U,
    tape: &mut Tape<T>,
    params: &[Var],
    triplet: &ScaleTriplet<T>,
    distance: Distance,
) -> Result<Var> {
    triplet.validate()?;
    let half = tape.constant(triplet.feats_half.clone());
    let quarter = tape.constant(triplet.feats_quarter.clone());
    let full = tape.constant(triplet.feats_full.clone());
    let up_half = model.forward_tape(tape, params, half, &triplet.img_half)?;
    let a = distance.record(tape, up_half, full)?;
    let up_quarter = model.forward_tape(tape, params, quarter, &triplet.img_quarter)?;
    let b = distance.record(tape, up_quarter, half)?;
    tape.add(a, b)
}

/// Objective value for one triplet, without gradients.
pub fn recon_loss<T: Scalar, U: Upsampler<T> + ?Sized>(
    model: &U,
    triplet: &ScaleTriplet<T>,
    distance: Distance,
) -> Result<f64> {
    let mut tape = Tape::new();
    let params: Vec<Var> = model
        .parameters()
        .into_iter()
        .map(|p| tape.constant(p.clone()))
        .collect();
    let loss = recon_loss_tape(model, &mut tape, &params, triplet, distance)?;
    Ok(tape.scalar(loss))
}

/// Objective value and gradients with respect to every model parameter.
pub fn recon_loss_grad<T: Scalar, U: Upsampler<T> + ?Sized>(
    model: &U,
    triplet: &ScaleTriplet<T>,
    distance: Distance,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let values = model.parameters();
    let params: Vec<Var> = values.iter().map(|p| tape.param((*p).clone())).collect();
    let loss = recon_loss_tape(model, &mut tape, &params, triplet, distance)?;
    let mut grads = tape.backward(loss)?;
    let g = params
        .iter()
        .zip(&values)
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    Ok((tape.scalar(loss), g))
}

/// Mean objective over a held-out set.
pub fn eval_recon<U: Upsampler + ?Sized>(model: &U, heldout: &[ScaleTriplet], distance: Distance) -> Result<f64> {
    if heldout.is_empty() {
        return Err(Error::InvalidArgument("held-out set is empty".into()));
    }
    let mut total = 0.0;
    for t in heldout {
        total += recon_loss(model, t, distance)?;
    }
    Ok(total / heldout.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub distance: Distance,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// When set, run exactly this many optimizer steps, continuing into
    /// further epochs as needed; `epochs` is then ignored.
    pub max_steps: Option<usize>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            distance: Distance::Cosine,
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 5,
            max_steps: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return Err(Error::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.max_steps == Some(0) {
            return Err(Error::InvalidArgument("max_steps must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps <= 0.0 {
            return Err(Error::InvalidArgument(
                "Adam betas must lie in [0, 1) and eps must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Per-step batch losses and per-epoch means.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossCurve {
    pub steps: Vec<StepLoss>,
    pub epoch_means: Vec<f64>,
}

impl LossCurve {
    /// `epoch,step,loss` rows with a header; epochs and steps count from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,step,loss\n");
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{}", s.epoch, s.step, s.loss);
        }
        out
    }
}

/// Mean batch loss and mean gradients, reduced in sample order.
fn batch_gradients<U: Upsampler>(model: &U, batch: &[&ScaleTriplet], distance: Distance) -> Result<(f64, Vec<Tensor>)> {
    let mut loss = 0.0;
    let mut sum: Option<Vec<Tensor>> = None;
    for t in batch {
        let (l, g) = recon_loss_grad(model, *t, distance)?;
        loss += l;
        match &mut sum {
            None => sum = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
        }
    }
    let scale = 1.0 / batch.len() as f32;
    let grads = sum.unwrap_or_default().into_iter().map(|g| g.scale(scale)).collect();
    Ok((loss / batch.len() as f64, grads))
}

/// Trains `model` on `dataset`. Without `max_steps` this runs
/// `epochs * ceil(len / batch)` steps. Sample order is reshuffled every epoch
/// from `config.seed`.
pub fn train<U: Upsampler>(mut model: U, dataset: &[ScaleTriplet], config: &TrainConfig) -> Result<(U, LossCurve)> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    for (i, t) in dataset.iter().enumerate() {
        t.validate().map_err(|e| Error::Record {
            record: i + 1,
            source: Box::new(e),
        })?;
    }
    let per_epoch = dataset.len().div_ceil(config.batch_size);
    let total = config.max_steps.unwrap_or(config.epochs * per_epoch);
    let mut state = AdamState::new(&model.parameters());
    let mut rng = SplitMix64::new(config.seed);
    let mut curve = LossCurve::default();
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut step = 0;
    let mut epoch = 0;
    while step < total {
        epoch += 1;
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0;
        for chunk in order.chunks(config.batch_size) {
            if step == total {
                break;
            }
            let batch: Vec<&ScaleTriplet> = chunk.iter().map(|&i| &dataset[i]).collect();
            let (loss, grads) = batch_gradients(&model, &batch, config.distance)?;
            adam_step(&mut model.parameters_mut(), &grads, &mut state, config)?;
            step += 1;
            epoch_loss += loss;
            epoch_batches += 1;
            curve.steps.push(StepLoss { epoch, step, loss });
        }
        curve.epoch_means.push(epoch_loss / epoch_batches as f64);
    }
    Ok((model, curve))
}

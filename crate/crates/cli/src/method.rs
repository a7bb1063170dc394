//! Upsampler selection shared by the `upsample`, `eval-*` and `tradeoff`
//! commands.

use liftkit::lift::{lift_apply_recursive, load_weights, standardize_image, MAX_RECURSION};
use liftkit::train::Upsampler;
use liftkit::upsample::{bilinear_resize, bilinear_upsample_2x, JbuParams, JointBilateral, ResizeConv};
use liftkit::{LiftModel, Tensor};

use crate::cli::{MethodArg, MethodOpts};
use crate::CliError;

pub enum Method {
    Raw,
    Bilinear,
    ResizeConv,
    Jbu(JointBilateral),
    Lift(Box<LiftModel>),
}

pub struct Pipeline {
    method: Method,
    k: usize,
}

impl Pipeline {
    pub fn new(method: Method, k: usize) -> Result<Self, CliError> {
        if k == 0 || k > MAX_RECURSION {
            return Err(CliError::Usage(format!("--k must be in 1..={MAX_RECURSION}, got {k}")));
        }
        Ok(Self { method, k })
    }

    /// `--weights` wins over `--method`; with neither, `default` applies.
    pub fn from_opts(opts: &MethodOpts, allow_raw: bool, default: MethodArg) -> Result<Self, CliError> {
        if opts.weights.is_some() && opts.method.is_some() {
            return Err(CliError::Usage("give either --weights or --method, not both".into()));
        }
        let method = match (&opts.weights, opts.method.unwrap_or(default)) {
            (Some(path), _) => Method::Lift(Box::new(load_weights(path)?)),
            (None, MethodArg::Raw) if !allow_raw => {
                return Err(CliError::Usage(
                    "`raw` performs no upsampling; pick bilinear, rc, jbu or --weights".into(),
                ))
            }
            (None, MethodArg::Raw) => Method::Raw,
            (None, MethodArg::Bilinear) => Method::Bilinear,
            (None, MethodArg::Rc) => Method::ResizeConv,
            (None, MethodArg::Jbu) => Method::Jbu(JointBilateral::new(JbuParams::default())),
        };
        Self::new(method, opts.k)
    }

    pub fn name(&self) -> &str {
        match &self.method {
            Method::Raw => "raw",
            Method::Bilinear => "bilinear",
            Method::ResizeConv => "rc",
            Method::Jbu(_) => "jbu",
            Method::Lift(m) => m.name(),
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn needs_image(&self) -> bool {
        match &self.method {
            Method::Jbu(_) => true,
            Method::Lift(m) => m.config().use_image,
            _ => false,
        }
    }

    /// Upsamples `features` `k` times. `image` is the `[0, 1]` RGB image the
    /// features came from; LiFT resizes it to `P` times the feature grid.
    pub fn apply(&self, features: &Tensor, image: Option<&Tensor>) -> Result<Tensor, CliError> {
        if self.needs_image() && image.is_none() {
            return Err(CliError::Usage(format!("{} needs a guidance image", self.name())));
        }
        let mut current = features.clone();
        match &self.method {
            Method::Raw => {}
            Method::Bilinear => {
                for _ in 0..self.k {
                    current = bilinear_upsample_2x(&current);
                }
            }
            Method::ResizeConv => {
                let rc = ResizeConv::identity(features.dims()[1]);
                for _ in 0..self.k {
                    current = rc.forward(&current)?;
                }
            }
            Method::Jbu(jbu) => {
                let image = image.expect("checked above");
                for _ in 0..self.k {
                    current = jbu.upsample(&current, image)?;
                }
            }
            Method::Lift(model) => {
                let p = model.config().patch;
                let [n, _, h, w] = features.dims();
                let guide = match image {
                    Some(img) if model.config().use_image => {
                        let [_, _, ih, iw] = img.dims();
                        let sized = if (ih, iw) == (p * h, p * w) {
                            img.clone()
                        } else {
                            bilinear_resize(img, p * h, p * w)
                        };
                        standardize_image(&sized)
                    }
                    _ => Tensor::zeros([n, 3, p * h, p * w]),
                };
                current = lift_apply_recursive(model, features, &guide, self.k)?;
            }
        }
        Ok(current)
    }
}

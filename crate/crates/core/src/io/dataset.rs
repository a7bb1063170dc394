//! Assembling manifests into training/evaluation samples, and generating the
//! toy dataset.

use std::path::{Path, PathBuf};

use super::blob::{read_blob, write_blob};
use super::image::{quantize_image, read_ppm, write_ppm};
use super::text::{format_boxes, format_keypoints, read_boxes, read_keypoints, Manifest, ManifestRecord};
use crate::error::{Error, Result};
use crate::eval::{BBox, KeypointPair};
use crate::rng::SplitMix64;
use crate::tensor::Tensor;
use crate::train::toy::{color_jitter, generate_scene, shift_image};
use crate::train::{ScaleTriplet, ToyFeaturizer};
use crate::upsample::bilinear_downsample_2x;

/// One manifest record, loaded and validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// Full-resolution `[0, 1]` image `(1, 3, H, W)`.
    pub image: Tensor,
    pub triplet: ScaleTriplet,
    pub keypoints: Option<KeypointPair>,
    pub boxes: Option<Vec<BBox>>,
}

impl Sample {
    pub fn patch(&self) -> usize {
        self.triplet.patch()
    }
}

fn check_full_image(image: &Tensor, feats: &Tensor, patch: usize) -> Result<()> {
    let [_, _, h, w] = feats.dims();
    if image.dims() != [1, 3, patch * h, patch * w] {
        return Err(Error::Geometry(format!(
            "image is {}, expected (1, 3, {}, {}) for scale-1 features {}",
            image.shape(),
            patch * h,
            patch * w,
            feats.shape()
        )));
    }
    Ok(())
}

fn load_record(dir: &Path, r: &ManifestRecord) -> Result<Sample> {
    let image = read_ppm(dir.join(&r.image))?;
    let feats_full = read_blob(dir.join(&r.s1))?;
    let feats_half = read_blob(dir.join(&r.s1_2))?;
    let feats_quarter = read_blob(dir.join(&r.s1_4))?;
    let img_half = match &r.img1_2 {
        Some(p) => read_ppm(dir.join(p))?,
        None => bilinear_downsample_2x(&image)?,
    };
    let img_quarter = match &r.img1_4 {
        Some(p) => read_ppm(dir.join(p))?,
        None => bilinear_downsample_2x(&img_half)?,
    };
    let triplet = ScaleTriplet::new(feats_full, feats_half, feats_quarter, img_half, img_quarter)?;
    check_full_image(&image, &triplet.feats_full, triplet.patch())?;
    let keypoints = r.keypoints.as_ref().map(|p| read_keypoints(dir.join(p))).transpose()?;
    let boxes = r.boxes.as_ref().map(|p| read_boxes(dir.join(p))).transpose()?;
    Ok(Sample {
        id: r.id.clone(),
        image,
        triplet,
        keypoints,
        boxes,
    })
}

/// Loads and validates every record; the first failure aborts with its
/// 1-based record number.
pub fn load_dataset(manifest_path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = manifest_path.as_ref();
    let manifest = Manifest::read(path)?;
    let dir = path.parent().unwrap_or(Path::new("."));
    manifest
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            load_record(dir, r).map_err(|e| Error::Record {
                record: i + 1,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Settings for the procedurally generated dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyConfig {
    pub n: usize,
    pub res: usize,
    /// Drives scene content, jitter and shifts.
    pub seed: u64,
    /// Seeds the frozen featurizer; kept apart from `seed` so train and
    /// held-out sets share one backbone.
    pub featurizer_seed: u64,
    pub patch: usize,
    pub dim: usize,
    /// Make every odd-indexed sample an integer-shifted copy of its
    /// predecessor (after jitter), annotated with keypoint correspondences.
    pub pairs: bool,
    pub jitter: bool,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n: 8,
            res: 224,
            seed: 0,
            featurizer_seed: 0,
            patch: 8,
            dim: 64,
            pairs: true,
            jitter: true,
        }
    }
}

/// Keypoints placed per shifted pair.
pub const TOY_KEYPOINTS: usize = 8;

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch < 4 || !self.patch.is_multiple_of(4) {
            return Err(Error::InvalidArgument(format!(
                "patch must be a positive multiple of 4, got {}",
                self.patch
            )));
        }
        if self.res == 0 || !self.res.is_multiple_of(4 * self.patch) {
            return Err(Error::InvalidArgument(format!(
                "resolution {} must be a positive multiple of 4 x patch = {}",
                self.res,
                4 * self.patch
            )));
        }
        Ok(())
    }

    pub fn featurizer(&self) -> Result<ToyFeaturizer> {
        ToyFeaturizer::new(self.featurizer_seed, self.patch, self.dim)
    }

    pub fn id(i: usize) -> String {
        format!("toy{i:04}")
    }
}

fn clip_box(b: &BBox, res: usize) -> Option<BBox> {
    let r = res as f64;
    let x0 = b.x.clamp(0.0, r);
    let y0 = b.y.clamp(0.0, r);
    let x1 = (b.x + b.w).clamp(0.0, r);
    let y1 = (b.y + b.h).clamp(0.0, r);
    (x1 > x0 && y1 > y0).then(|| BBox::new(x0, y0, x1 - x0, y1 - y0))
}

/// Triplet and full image for a quantized image.
pub fn featurize_sample(featurizer: &ToyFeaturizer, image: &Tensor) -> Result<(Tensor, ScaleTriplet)> {
    let image = quantize_image(image);
    let half = bilinear_downsample_2x(&image)?;
    let quarter = bilinear_downsample_2x(&half)?;
    let triplet = ScaleTriplet::new(
        featurizer.apply(&image)?,
        featurizer.apply(&half)?,
        featurizer.apply(&quarter)?,
        half,
        quarter,
    )?;
    Ok((image, triplet))
}

/// Generates the toy dataset in memory; writing it with [`write_toy_dataset`]
/// and loading it back yields identical samples.
pub fn generate_toy_samples(cfg: &ToyConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let featurizer = cfg.featurizer()?;
    let mut root = SplitMix64::new(cfg.seed ^ 0x7079_5f64_6174_6173);
    let mut samples = Vec::with_capacity(cfg.n);
    let mut previous: Option<(Tensor, Vec<BBox>)> = None;
    for i in 0..cfg.n {
        let mut rng = root.fork();
        // A pair's target is an exact warp of its source, photometry included,
        // so only fresh scenes are jittered.
        let (picture, boxes, keypoints) = match (&previous, cfg.pairs && i % 2 == 1) {
            (Some((src, src_boxes)), true) => {
                let p = cfg.patch as isize;
                let dx = rng.below(4 * p as usize + 1) as isize - 2 * p;
                let dy = rng.below(4 * p as usize + 1) as isize - 2 * p;
                let shifted = shift_image(src, dx, dy);
                let moved: Vec<BBox> = src_boxes
                    .iter()
                    .filter_map(|b| clip_box(&b.translate(dx as f64, dy as f64), cfg.res))
                    .collect();
                let pair = toy_pair(&mut rng, cfg, i, &src_boxes[0], dx, dy);
                (shifted, moved, pair)
            }
            _ => {
                let scene = generate_scene(&mut rng, cfg.res);
                let picture = if cfg.jitter {
                    color_jitter(&scene.image, &mut rng)
                } else {
                    scene.image
                };
                (picture, scene.boxes, None)
            }
        };
        let (image, triplet) = featurize_sample(&featurizer, &picture)?;
        previous = Some((picture, boxes.clone()));
        samples.push(Sample {
            id: ToyConfig::id(i),
            image,
            triplet,
            keypoints,
            boxes: Some(boxes),
        });
    }
    Ok(samples)
}

/// Keypoints inside the source object that stay inside the image after the
/// shift.
fn toy_pair(
    rng: &mut SplitMix64,
    cfg: &ToyConfig,
    i: usize,
    src_box: &BBox,
    dx: isize,
    dy: isize,
) -> Option<KeypointPair> {
    let res = cfg.res as isize;
    let x_lo = (src_box.x as isize).max(-dx).max(0);
    let x_hi = ((src_box.x + src_box.w) as isize).min(res - dx).min(res);
    let y_lo = (src_box.y as isize).max(-dy).max(0);
    let y_hi = ((src_box.y + src_box.h) as isize).min(res - dy).min(res);
    if x_hi <= x_lo || y_hi <= y_lo {
        return None;
    }
    let keypoints = (0..TOY_KEYPOINTS)
        .map(|_| {
            let x = x_lo + rng.below((x_hi - x_lo) as usize) as isize;
            let y = y_lo + rng.below((y_hi - y_lo) as usize) as isize;
            ([x as f64, y as f64], [(x + dx) as f64, (y + dy) as f64])
        })
        .collect();
    let target_bbox = clip_box(&src_box.translate(dx as f64, dy as f64), cfg.res)?;
    Some(KeypointPair {
        source_id: ToyConfig::id(i - 1),
        target_id: ToyConfig::id(i),
        source_size: (cfg.res, cfg.res),
        target_size: (cfg.res, cfg.res),
        keypoints,
        source_bbox: *src_box,
        target_bbox,
    })
}

/// Writes images, blobs, annotations and `manifest.tsv` under `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, samples: &[Sample], comments: Vec<String>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    for sub in ["images", "features", "annotations"] {
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::from(e).in_file(dir.join(sub)))?;
    }
    let mut manifest = Manifest {
        comments,
        records: Vec::with_capacity(samples.len()),
    };
    for s in samples {
        let rel = |sub: &str, name: String| format!("{sub}/{name}");
        let record = ManifestRecord {
            id: s.id.clone(),
            image: rel("images", format!("{}.ppm", s.id)),
            s1: rel("features", format!("{}_s1.lftb", s.id)),
            s1_2: rel("features", format!("{}_s1-2.lftb", s.id)),
            s1_4: rel("features", format!("{}_s1-4.lftb", s.id)),
            img1_2: None,
            img1_4: None,
            keypoints: s.keypoints.as_ref().map(|_| rel("annotations", format!("{}.kp", s.id))),
            boxes: s.boxes.as_ref().map(|_| rel("annotations", format!("{}.boxes", s.id))),
        };
        write_ppm(&s.image, dir.join(&record.image))?;
        write_blob(&s.triplet.feats_full, dir.join(&record.s1))?;
        write_blob(&s.triplet.feats_half, dir.join(&record.s1_2))?;
        write_blob(&s.triplet.feats_quarter, dir.join(&record.s1_4))?;
        if let (Some(p), Some(kp)) = (&record.keypoints, &s.keypoints) {
            let path = dir.join(p);
            std::fs::write(&path, format_keypoints(kp)).map_err(|e| Error::from(e).in_file(&path))?;
        }
        if let (Some(p), Some(b)) = (&record.boxes, &s.boxes) {
            let path = dir.join(p);
            std::fs::write(&path, format_boxes(b)).map_err(|e| Error::from(e).in_file(&path))?;
        }
        manifest.records.push(record);
    }
    let path = dir.join("manifest.tsv");
    manifest.write(&path)?;
    Ok(path)
}

/// Generates and writes the toy dataset; returns the manifest path.
pub fn write_toy_dataset(dir: impl AsRef<Path>, cfg: &ToyConfig) -> Result<PathBuf> {
    let samples = generate_toy_samples(cfg)?;
    let comment = Manifest::toy_comment(&cfg.featurizer()?, cfg.res);
    write_dataset(dir, &samples, vec![comment])
}

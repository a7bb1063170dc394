use std::collections::HashMap;
use std::path::Path;

use liftkit::eval::{
    corloc, flops_model, keypoint_transfer_error, pck, scale_invariance_curve, self_similarity_map, tokencut_discover,
    tradeoff_csv, tradeoff_curve, Anchor, EvalReport, KeypointPair, TradeoffMethod, VitArch,
};
use liftkit::io::{
    load_dataset, read_blob, read_ppm, write_blob, write_pgm, write_toy_dataset, Manifest, Sample, ToyConfig,
};
use liftkit::lift::{count_params, save_weights};
use liftkit::train::{train, Distance, ToyFeaturizer, TrainConfig};
use liftkit::upsample::{bilinear_resize, JbuParams, JointBilateral};
use liftkit::{init_lift, Error, LiftConfig, Tensor};

use crate::cli::*;
use crate::method::{Method, Pipeline};
use crate::CliError;

fn usage(e: impl ToString) -> CliError {
    CliError::Usage(e.to_string())
}

fn data(msg: impl Into<String>) -> CliError {
    CliError::Data(Error::InvalidArgument(msg.into()))
}

/// Prints `text` and, when asked, writes it to `out` too.
fn emit(text: &str, out: Option<&Path>) -> Result<(), CliError> {
    print!("{text}");
    if let Some(path) = out {
        std::fs::write(path, text).map_err(|e| Error::from(e).in_file(path))?;
    }
    Ok(())
}

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenToy(a) => gen_toy(a),
        Command::Train(a) => train_cmd(a),
        Command::Upsample(a) => upsample(a),
        Command::EvalPck(a) => eval_pck(a),
        Command::EvalCka(a) => eval_cka(a),
        Command::EvalDiscovery(a) => eval_discovery(a),
        Command::Simmap(a) => simmap(a),
        Command::Flops(a) => flops(a),
        Command::Tradeoff(a) => tradeoff(a),
    }
}

fn gen_toy(a: GenToyArgs) -> Result<(), CliError> {
    let cfg = ToyConfig {
        n: a.n,
        res: a.res,
        seed: a.seed,
        featurizer_seed: a.featurizer_seed,
        patch: a.patch,
        dim: a.dim,
        pairs: !a.no_pairs,
        jitter: !a.no_jitter,
    };
    cfg.validate().map_err(usage)?;
    cfg.featurizer().map_err(usage)?;
    let path = write_toy_dataset(&a.out, &cfg)?;
    println!("wrote {} samples to {}", cfg.n, path.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<(), CliError> {
    let config = TrainConfig {
        distance: match a.distance {
            DistanceArg::Cosine => Distance::Cosine,
            DistanceArg::L1 => Distance::L1,
            DistanceArg::L2 => Distance::L2,
        },
        learning_rate: a.lr,
        batch_size: a.batch,
        epochs: a.epochs,
        max_steps: a.max_steps,
        seed: a.seed,
        ..TrainConfig::default()
    };
    config.validate().map_err(usage)?;
    let samples = load_dataset(&a.manifest)?;
    let first = samples
        .first()
        .ok_or_else(|| data(format!("{} has no records", a.manifest.display())))?;
    let mut lift = LiftConfig::new(first.triplet.feats_full.dims()[1], first.triplet.patch())
        .with_seed(a.seed)
        .with_image(!a.no_image);
    if let Some(ch) = &a.channels {
        lift = lift.with_channels(ch.clone());
    }
    let model = init_lift(lift).map_err(|e| if a.channels.is_some() { usage(e) } else { e.into() })?;
    let triplets: Vec<_> = samples.into_iter().map(|s| s.triplet).collect();
    let (model, curve) = train(model, &triplets, &config)?;
    for (i, m) in curve.epoch_means.iter().enumerate() {
        println!("epoch {}: mean {} loss {m:.6}", i + 1, config.distance);
    }
    save_weights(&model, &a.out)?;
    println!(
        "wrote {} ({} parameters, {} steps)",
        a.out.display(),
        count_params(&model),
        curve.steps.len()
    );
    if let Some(path) = &a.curve {
        std::fs::write(path, curve.to_csv()).map_err(|e| Error::from(e).in_file(path))?;
    }
    Ok(())
}

fn upsample(a: UpsampleArgs) -> Result<(), CliError> {
    let pipe = Pipeline::from_opts(&a.method, false, MethodArg::Bilinear)?;
    let features = read_blob(&a.input)?;
    let image = a.image.as_ref().map(read_ppm).transpose()?;
    let out = pipe.apply(&features, image.as_ref())?;
    write_blob(&out, &a.out)?;
    println!(
        "{} x{}: {:?} -> {:?}",
        pipe.name(),
        pipe.k(),
        features.dims(),
        out.dims()
    );
    Ok(())
}

fn by_id(samples: &[Sample]) -> HashMap<&str, &Sample> {
    samples.iter().map(|s| (s.id.as_str(), s)).collect()
}

fn pair_members<'a>(
    index: &HashMap<&str, &'a Sample>,
    kp: &KeypointPair,
) -> Result<(&'a Sample, &'a Sample), CliError> {
    let get = |id: &str| {
        index
            .get(id)
            .copied()
            .ok_or_else(|| data(format!("keypoint file names unknown sample `{id}`")))
    };
    Ok((get(&kp.source_id)?, get(&kp.target_id)?))
}

fn check_alphas(alphas: &[f64]) -> Result<(), CliError> {
    if alphas.is_empty() || alphas.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(usage(format!("alphas must be finite and non-negative, got {alphas:?}")));
    }
    Ok(())
}

fn eval_pck(a: EvalPckArgs) -> Result<(), CliError> {
    check_alphas(&a.alphas)?;
    let pipe = Pipeline::from_opts(&a.method, true, MethodArg::Raw)?;
    let samples = load_dataset(&a.manifest)?;
    let index = by_id(&samples);
    let mut sums = vec![0.0; a.alphas.len()];
    let mut error = 0.0;
    let mut pairs = 0usize;
    for kp in samples.iter().filter_map(|s| s.keypoints.as_ref()) {
        let (src, tgt) = pair_members(&index, kp)?;
        let fs = pipe.apply(&src.triplet.feats_full, Some(&src.image))?;
        let ft = pipe.apply(&tgt.triplet.feats_full, Some(&tgt.image))?;
        for (s, v) in sums.iter_mut().zip(pck(&fs, &ft, kp, &a.alphas)?) {
            *s += v;
        }
        error += keypoint_transfer_error(&fs, &ft, kp)?;
        pairs += 1;
    }
    if pairs == 0 {
        return Err(data(format!("{} has no keypoint pairs", a.manifest.display())));
    }
    let mut report = EvalReport::new("pck")
        .with_config("method", pipe.name())
        .with_config("k", pipe.k())
        .with_config("pairs", pairs);
    for (alpha, s) in a.alphas.iter().zip(&sums) {
        report.push(format!("pck@{alpha}"), s / pairs as f64);
    }
    report.push("transfer_error", error / pairs as f64);
    emit(&report.to_csv(), a.out.as_deref())
}

fn toy_featurizer(manifest: &Path) -> Result<ToyFeaturizer, CliError> {
    Manifest::read(manifest)?.toy_featurizer()?.ok_or_else(|| {
        data(format!(
            "{} does not name a toy featurizer, so images cannot be re-featurized at other scales",
            manifest.display()
        ))
    })
}

fn eval_cka(a: EvalCkaArgs) -> Result<(), CliError> {
    let pipe = Pipeline::from_opts(&a.method, true, MethodArg::Raw)?;
    let mut scales = a.scales.clone();
    scales.sort_unstable();
    scales.dedup();
    let featurizer = toy_featurizer(&a.manifest)?;
    let p = featurizer.patch();
    if scales.is_empty() || scales.iter().any(|&s| s == 0 || s % p != 0) {
        return Err(usage(format!(
            "scales must be positive multiples of the featurizer patch {p}, got {:?}",
            a.scales
        )));
    }
    let images: Vec<Tensor> = load_dataset(&a.manifest)?.into_iter().map(|s| s.image).collect();
    let mut failure = None;
    let matrix = scale_invariance_curve(
        |img, s| {
            let resized = bilinear_resize(img, s, s);
            let f = featurizer.apply(&resized)?;
            pipe.apply(&f, Some(&resized)).map_err(|e| match e {
                CliError::Data(e) => e,
                other => {
                    let msg = other.to_string();
                    failure = Some(other);
                    Error::InvalidArgument(msg)
                }
            })
        },
        &images,
        &scales,
        &scales,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let matrix = matrix?;
    println!("# cka method={} k={} images={}", pipe.name(), pipe.k(), images.len());
    emit(&matrix.to_csv(), a.out.as_deref())
}

fn eval_discovery(a: EvalDiscoveryArgs) -> Result<(), CliError> {
    if !(-1.0..=1.0).contains(&a.tau) {
        return Err(usage(format!("--tau is a cosine threshold in [-1, 1], got {}", a.tau)));
    }
    let pipe = Pipeline::from_opts(&a.method, true, MethodArg::Raw)?;
    let samples = load_dataset(&a.manifest)?;
    let mut preds = Vec::with_capacity(samples.len());
    let mut gts = Vec::with_capacity(samples.len());
    let mut degenerate = 0usize;
    for s in &samples {
        let feats = pipe.apply(&s.triplet.feats_full, Some(&s.image))?;
        let [_, _, h, w] = feats.dims();
        let [_, _, ih, iw] = s.image.dims();
        let found = tokencut_discover(&feats, a.tau)?;
        degenerate += found.degenerate as usize;
        preds.push(found.bbox.scale(iw as f64 / w as f64, ih as f64 / h as f64));
        gts.push(s.boxes.clone().unwrap_or_default());
    }
    let c = corloc(&preds, &gts)?;
    let mut report = EvalReport::new("corloc")
        .with_config("method", pipe.name())
        .with_config("k", pipe.k())
        .with_config("tau", a.tau);
    report.push("corloc", c.score);
    report.push("correct", c.correct as f64);
    report.push("evaluated", c.evaluated as f64);
    report.push("skipped", c.skipped as f64);
    report.push("degenerate", degenerate as f64);
    if c.skipped > 0 {
        eprintln!(
            "warning: {} image(s) without ground-truth boxes were skipped",
            c.skipped
        );
    }
    emit(&report.to_csv(), a.out.as_deref())
}

fn simmap(a: SimmapArgs) -> Result<(), CliError> {
    let anchor: Anchor = a.anchor.parse().map_err(usage)?;
    let features = read_blob(&a.input)?;
    let map = self_similarity_map(&features, anchor)?;
    write_pgm(&map.render(), &a.out)?;
    let lo = map.raw.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.raw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    println!(
        "{}x{} anchor ({}, {}) min {lo:.6} max {hi:.6} -> {}",
        map.height,
        map.width,
        map.anchor.0,
        map.anchor.1,
        a.out.display()
    );
    if map.is_flat() {
        eprintln!("warning: similarity map has zero dynamic range");
    }
    Ok(())
}

fn parse_arch(s: &str) -> Result<VitArch, CliError> {
    s.parse().map_err(usage)
}

fn flops(a: FlopsArgs) -> Result<(), CliError> {
    let arch = parse_arch(&a.arch)?;
    let stride = a.stride.unwrap_or(arch.patch);
    let lift = a.with_lift.then(|| LiftConfig::new(arch.dim, arch.patch));
    let report = flops_model(&arch, a.res, stride, lift.as_ref()).map_err(usage)?;
    print!("{}", report.to_text());
    Ok(())
}

/// `pair` with every coordinate mapped onto a `res x res` copy of its images.
fn pair_at(pair: &KeypointPair, res: usize) -> KeypointPair {
    let r = res as f64;
    let (sx, sy) = (r / pair.source_size.0 as f64, r / pair.source_size.1 as f64);
    let (tx, ty) = (r / pair.target_size.0 as f64, r / pair.target_size.1 as f64);
    let clamp = |v: f64| v.clamp(0.0, r - 1.0);
    KeypointPair {
        source_size: (res, res),
        target_size: (res, res),
        keypoints: pair
            .keypoints
            .iter()
            .map(|(s, t)| {
                (
                    [clamp(s[0] * sx), clamp(s[1] * sy)],
                    [clamp(t[0] * tx), clamp(t[1] * ty)],
                )
            })
            .collect(),
        source_bbox: pair.source_bbox.scale(sx, sy),
        target_bbox: pair.target_bbox.scale(tx, ty),
        ..pair.clone()
    }
}

/// Mean PCK@alpha over the toy pairs, with images re-featurized at `res`.
fn toy_score(
    pipe: &Pipeline,
    featurizer: &ToyFeaturizer,
    samples: &[Sample],
    res: usize,
    alpha: f64,
) -> Result<f64, CliError> {
    let index = by_id(samples);
    let featurize = |s: &Sample| -> Result<Tensor, CliError> {
        let img = bilinear_resize(&s.image, res, res);
        let f = featurizer.apply(&img)?;
        pipe.apply(&f, Some(&img))
    };
    let (mut total, mut pairs) = (0.0, 0usize);
    for kp in samples.iter().filter_map(|s| s.keypoints.as_ref()) {
        let (src, tgt) = pair_members(&index, kp)?;
        total += pck(&featurize(src)?, &featurize(tgt)?, &pair_at(kp, res), &[alpha])?[0];
        pairs += 1;
    }
    if pairs == 0 {
        return Err(data("manifest has no keypoint pairs to score"));
    }
    Ok(total / pairs as f64)
}

fn tradeoff(a: TradeoffArgs) -> Result<(), CliError> {
    let arch = parse_arch(&a.arch)?;
    check_alphas(&[a.alpha])?;
    let stride = a.stride.unwrap_or(arch.patch);
    let methods = a
        .methods
        .iter()
        .map(|m| m.parse::<TradeoffMethod>().map_err(usage))
        .collect::<Result<Vec<_>, _>>()?;
    if methods.is_empty() || a.resolutions.is_empty() {
        return Err(usage("need at least one method and one resolution"));
    }
    let configs: Vec<_> = methods
        .iter()
        .flat_map(|&m| a.resolutions.iter().map(move |&r| (m, r, stride)))
        .collect();
    let scores = match &a.manifest {
        None => vec![f64::NAN; configs.len()],
        Some(path) => {
            let featurizer = toy_featurizer(path)?;
            if let Some(r) = a.resolutions.iter().find(|&&r| r == 0 || r % featurizer.patch() != 0) {
                return Err(usage(format!(
                    "resolution {r} is not a multiple of the toy featurizer patch {}",
                    featurizer.patch()
                )));
            }
            let samples = load_dataset(path)?;
            let mut scores = Vec::with_capacity(configs.len());
            for &(method, res, _) in &configs {
                let m = match method {
                    TradeoffMethod::Raw => Method::Raw,
                    TradeoffMethod::Bilinear => Method::Bilinear,
                    TradeoffMethod::ResizeConv => Method::ResizeConv,
                    TradeoffMethod::Jbu { radius } => Method::Jbu(JointBilateral::new(JbuParams {
                        radius,
                        ..JbuParams::default()
                    })),
                    TradeoffMethod::Lift => {
                        let w = a
                            .weights
                            .as_ref()
                            .ok_or_else(|| usage("scoring `lift` needs --weights"))?;
                        Method::Lift(Box::new(liftkit::lift::load_weights(w)?))
                    }
                };
                scores.push(toy_score(&Pipeline::new(m, 1)?, &featurizer, &samples, res, a.alpha)?);
            }
            scores
        }
    };
    let points = tradeoff_curve(&arch, &configs, &scores).map_err(usage)?;
    emit(&tradeoff_csv(&points), a.out.as_deref())
}

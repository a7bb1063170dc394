//! Acceptance run: one PASS/FAIL line per criterion A1-A11.
//!
//! Failures are reported, not hidden. The process exits non-zero on any
//! failure only when `LIFTKIT_ACCEPTANCE_STRICT=1`, so the workspace test run
//! can complete while still printing every verdict.

mod common;

use std::collections::HashMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use liftkit::eval::{flops_model, VitArch};
use liftkit::eval::{keypoint_transfer_error, pck, scale_invariance_curve, KeypointPair};
use liftkit::io::dataset::{generate_toy_samples, Sample};
use liftkit::io::text::{format_boxes, format_keypoints};
use liftkit::io::{
    decode_blob, decode_pgm, decode_ppm, encode_blob, encode_pgm, encode_ppm, parse_boxes, parse_keypoints, Manifest,
    ToyConfig,
};
use liftkit::lift::{count_params, read_weights, write_weights};
use liftkit::train::{eval_recon, train, Bilinear, Distance, ToyFeaturizer, Upsampler};
use liftkit::upsample::{bilinear_resize, bilinear_upsample_2x};
use liftkit::{init_lift, lift_apply_recursive, lift_forward, LiftConfig, LiftModel, Result, Tensor, TrainConfig};

struct Verdict {
    id: &'static str,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn verdict(id: &'static str, title: &'static str, pass: bool, detail: String) -> Verdict {
    let v = Verdict {
        id,
        title,
        pass,
        detail,
    };
    println!(
        "{} {} {}: {}",
        v.id,
        if v.pass { "PASS" } else { "FAIL" },
        v.title,
        v.detail
    );
    v
}

fn errored(id: &'static str, title: &'static str, e: impl std::fmt::Display) -> Verdict {
    verdict(id, title, false, format!("error: {e}"))
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

// A1 ---------------------------------------------------------------------

fn a1() -> Verdict {
    let start = Instant::now();
    let results = common::gradient_suite(11, 3);
    let took = start.elapsed();
    let worst = results
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    let has_full = results.iter().any(|r| r.name.starts_with("lift_forward"));
    let pass = worst.max_rel_error < common::GRAD_TOL && has_full && took < Duration::from_secs(120);
    verdict(
        "A1",
        "gradient integrity",
        pass,
        format!(
            "{} checks, worst {:.2e} ({}) < 1e-4, runtime {} < 120s",
            results.len(),
            worst.max_rel_error,
            worst.name,
            secs(took)
        ),
    )
}

// A2 ---------------------------------------------------------------------

/// Closed form: per encoder stage a 3x3 conv with bias plus GroupNorm affine,
/// then the 2x2 transposed conv and the 1x1 projection.
fn param_closed_form(d: usize, channels: &[usize]) -> usize {
    let mut cin = 3;
    let mut total = 0;
    for &c in channels {
        total += c * cin * 9 + c + 2 * c;
        cin = c;
    }
    let deep = channels[channels.len() - 1];
    let skip = channels[channels.len() - 2];
    total + (d + deep) * deep * 4 + deep + (deep + skip) * d + d
}

fn a2() -> Verdict {
    match init_lift(LiftConfig::new(384, 16)) {
        Ok(model) => {
            let n = count_params(&model);
            let oracle = param_closed_form(384, &[32, 64, 128, 256]);
            let pass = n == oracle && (1_000_000..=1_400_000).contains(&n);
            verdict(
                "A2",
                "parameter budget",
                pass,
                format!("count {n}, closed form {oracle}, range [1.0M, 1.4M]"),
            )
        }
        Err(e) => errored("A2", "parameter budget", e),
    }
}

// A3 ---------------------------------------------------------------------

fn a3() -> Verdict {
    let run = || -> Result<Verdict> {
        let arch: VitArch = "vit-s16".parse()?;
        let lift = LiftConfig::new(384, 16);
        let at224 = flops_model(&arch, 224, 16, Some(&lift))?;
        let at448 = flops_model(&arch, 448, 16, None)?;
        let g = at224.backbone_table_g();
        let ratio = at448.backbone_table_g() / g;
        let overhead = at224.lift_overhead().unwrap_or(f64::NAN);
        let within = (g / 4.34 - 1.0).abs() <= 0.10;
        let pass = within && (3.8..=4.1).contains(&ratio) && overhead < 0.25;
        Ok(verdict(
            "A3",
            "cost model",
            pass,
            format!(
                "ViT-S/16@224 {g:.4} G (target 4.34 +-10%), 448/224 ratio {ratio:.3} in [3.8, 4.1], \
                 LiFT {:.4} G = {:.1}% overhead < 25%",
                at224.lift_gmacs().unwrap_or(f64::NAN),
                100.0 * overhead
            ),
        ))
    };
    run().unwrap_or_else(|e| errored("A3", "cost model", e))
}

// Shared toy setup for A4, A5, A8, A9 -------------------------------------

const TOY_RES: usize = 224;
const TOY_PATCH: usize = 8;
const TOY_DIM: usize = 64;

struct ToyRun {
    heldout: Vec<Sample>,
    untrained: LiftModel,
    trained: LiftModel,
    took: Duration,
}

fn toy(n: usize, res: usize, seed: u64) -> Result<Vec<Sample>> {
    generate_toy_samples(&ToyConfig {
        n,
        res,
        seed,
        featurizer_seed: 0,
        patch: TOY_PATCH,
        dim: TOY_DIM,
        pairs: true,
        jitter: true,
    })
}

fn toy_run() -> Result<ToyRun> {
    let start = Instant::now();
    let train_set: Vec<_> = toy(512, TOY_RES, 0)?.into_iter().map(|s| s.triplet).collect();
    let heldout = toy(64, TOY_RES, 1000)?;
    let untrained = init_lift(LiftConfig::new(TOY_DIM, TOY_PATCH))?;
    let cfg = TrainConfig {
        distance: Distance::Cosine,
        max_steps: Some(200),
        ..TrainConfig::default()
    };
    let (trained, _) = train(untrained.clone(), &train_set, &cfg)?;
    Ok(ToyRun {
        heldout,
        untrained,
        trained,
        took: start.elapsed(),
    })
}

fn triplets(samples: &[Sample]) -> Vec<liftkit::ScaleTriplet> {
    samples.iter().map(|s| s.triplet.clone()).collect()
}

fn a4_a5(run: &ToyRun) -> [Verdict; 2] {
    let ho = triplets(&run.heldout);
    let scores = (|| -> Result<(f64, f64, f64)> {
        Ok((
            eval_recon(&run.untrained, &ho, Distance::Cosine)?,
            eval_recon(&run.trained, &ho, Distance::Cosine)?,
            eval_recon(&Bilinear, &ho, Distance::Cosine)?,
        ))
    })();
    match scores {
        Ok((untrained, trained, bilinear)) => {
            let ratio = trained / untrained;
            let a4 = ratio <= 0.6 && trained < bilinear && run.took < Duration::from_secs(600);
            [
                verdict(
                    "A4",
                    "training efficacy",
                    a4,
                    format!(
                        "held-out cosine recon: trained {trained:.4} = {ratio:.3} x untrained {untrained:.4} (<= 0.6), \
                         bilinear {bilinear:.4} (trained must be strictly lower), gen+train {} < 600s",
                        secs(run.took)
                    ),
                ),
                verdict(
                    "A5",
                    "random-LiFT sanity",
                    untrained > bilinear,
                    format!("untrained {untrained:.4} > bilinear {bilinear:.4}"),
                ),
            ]
        }
        Err(e) => [
            errored("A4", "training efficacy", &e),
            errored("A5", "random-LiFT sanity", &e),
        ],
    }
}

// Correspondence helpers --------------------------------------------------

fn pairs(samples: &[Sample]) -> Vec<(&Sample, &Sample, &KeypointPair)> {
    let index: HashMap<&str, &Sample> = samples.iter().map(|s| (s.id.as_str(), s)).collect();
    samples
        .iter()
        .filter_map(|s| s.keypoints.as_ref())
        .map(|kp| (index[kp.source_id.as_str()], index[kp.target_id.as_str()], kp))
        .collect()
}

fn mean_pck(up: &dyn Upsampler, samples: &[Sample], alpha: f64) -> Result<f64> {
    let ps = pairs(samples);
    let mut total = 0.0;
    for (s, t, kp) in &ps {
        let fs = up.upsample(&s.triplet.feats_full, &s.image)?;
        let ft = up.upsample(&t.triplet.feats_full, &t.image)?;
        total += pck(&fs, &ft, kp, &[alpha])?[0];
    }
    Ok(total / ps.len() as f64)
}

fn mean_transfer_error(up: &dyn Upsampler, samples: &[Sample]) -> Result<f64> {
    let ps = pairs(samples);
    let mut total = 0.0;
    for (s, t, kp) in &ps {
        let fs = up.upsample(&s.triplet.feats_full, &s.image)?;
        let ft = up.upsample(&t.triplet.feats_full, &t.image)?;
        total += keypoint_transfer_error(&fs, &ft, kp)?;
    }
    Ok(total / ps.len() as f64)
}

// A6 ---------------------------------------------------------------------

const A6_RES: usize = 128;
const A6_STEPS: usize = 60;
const A6_SEEDS: [u64; 3] = [1, 2, 3];

fn a6() -> Verdict {
    let title = "ablation battery";
    let start = Instant::now();
    let combos = [
        (Distance::Cosine, true),
        (Distance::L1, true),
        (Distance::L2, true),
        (Distance::Cosine, false),
    ];
    let mut lines = Vec::new();
    let mut all_converge = true;
    let mut cosine_img_wins = 0;
    for seed in A6_SEEDS {
        let run = || -> Result<Vec<(f64, f64)>> {
            let train_set = triplets(&toy(128, A6_RES, 100 + seed)?);
            let heldout = toy(32, A6_RES, 5000 + seed)?;
            let mut out = Vec::new();
            for (distance, use_image) in combos {
                let model = init_lift(
                    LiftConfig::new(TOY_DIM, TOY_PATCH)
                        .with_seed(seed)
                        .with_image(use_image),
                )?;
                let cfg = TrainConfig {
                    distance,
                    max_steps: Some(A6_STEPS),
                    seed,
                    ..TrainConfig::default()
                };
                let (trained, curve) = train(model, &train_set, &cfg)?;
                let first = curve.steps[0].loss;
                let tail = &curve.steps[curve.steps.len() - 5..];
                let last = tail.iter().map(|s| s.loss).sum::<f64>() / tail.len() as f64;
                out.push((1.0 - last / first, mean_transfer_error(&trained, &heldout)?));
            }
            Ok(out)
        };
        match run() {
            Ok(results) => {
                let cells: Vec<String> = combos
                    .iter()
                    .zip(&results)
                    .map(|((d, img), (drop, err))| {
                        format!(
                            "{d}{} drop {:.0}% err {err:.4}",
                            if *img { "" } else { "/no-img" },
                            100.0 * drop
                        )
                    })
                    .collect();
                lines.push(format!("seed {seed}: {}", cells.join(", ")));
                all_converge &= results.iter().all(|(drop, _)| *drop >= 0.4);
                let best = results.iter().skip(1).map(|r| r.1).fold(f64::INFINITY, f64::min);
                if results[0].1 < best {
                    cosine_img_wins += 1;
                }
            }
            Err(e) => return errored("A6", title, e),
        }
    }
    let pass = all_converge && cosine_img_wins >= 2;
    verdict(
        "A6",
        title,
        pass,
        format!(
            "all drops >= 40%: {all_converge}; cosine+image lowest transfer error in {cosine_img_wins}/3 seeds (need 2); {} [{}]",
            secs(start.elapsed()),
            lines.join("; ")
        ),
    )
}

// A7 ---------------------------------------------------------------------

fn a7() -> Verdict {
    let r = common::spectral_agreement(20, 10, 7);
    let pass = r.min_abs_cos >= 0.999 && r.max_eigenvalue_error <= 1e-8;
    verdict(
        "A7",
        "spectral solver",
        pass,
        format!(
            "20 random 10x10 graphs: min |cos| {:.9} >= 0.999, max eigenvalue error {:.2e} <= 1e-8",
            r.min_abs_cos, r.max_eigenvalue_error
        ),
    )
}

// A8 ---------------------------------------------------------------------

fn a8(run: &ToyRun) -> Verdict {
    let scores = (|| -> Result<(f64, f64)> {
        Ok((
            mean_pck(&run.trained, &run.heldout, 0.05)?,
            mean_pck(&Bilinear, &run.heldout, 0.05)?,
        ))
    })();
    match scores {
        Ok((lift, bilinear)) => verdict(
            "A8",
            "synthetic correspondence",
            lift >= bilinear,
            format!(
                "PCK@0.05 over {} shifted pairs: LiFT {lift:.4} >= bilinear {bilinear:.4}",
                pairs(&run.heldout).len()
            ),
        ),
        Err(e) => errored("A8", "synthetic correspondence", e),
    }
}

// A9 ---------------------------------------------------------------------

fn a9(run: &ToyRun) -> Verdict {
    let title = "scale invariance";
    let featurizer = match ToyFeaturizer::new(0, TOY_PATCH, TOY_DIM) {
        Ok(f) => f,
        Err(e) => return errored("A9", title, e),
    };
    let images: Vec<Tensor> = run.heldout.iter().map(|s| s.image.clone()).collect();
    let scales = [56, 224];
    let curve = |method: &str| {
        scale_invariance_curve(
            |img, s| {
                let resized = bilinear_resize(img, s, s);
                let f = featurizer.apply(&resized)?;
                match method {
                    "raw" => Ok(f),
                    "bilinear" => Ok(bilinear_upsample_2x(&f)),
                    _ => run.trained.upsample(&f, &resized),
                }
            },
            &images,
            &scales,
            &scales,
        )
    };
    let mut cross = Vec::new();
    let mut worst_identity: f64 = 0.0;
    for method in ["raw", "bilinear", "lift"] {
        match curve(method) {
            Ok(m) => {
                for s in scales {
                    let dev = (m.get(s, s).unwrap_or(f64::NAN) - 1.0).abs();
                    // NaN must not slip through `max`.
                    worst_identity = if dev.is_nan() || worst_identity.is_nan() {
                        f64::NAN
                    } else {
                        worst_identity.max(dev)
                    };
                }
                cross.push(m.get(56, 224).unwrap_or(f64::NAN));
            }
            Err(e) => return errored("A9", title, e),
        }
    }
    let [raw, bilinear, lift] = [cross[0], cross[1], cross[2]];
    let pass = lift >= raw && lift >= bilinear && worst_identity <= 1e-6;
    verdict(
        "A9",
        title,
        pass,
        format!(
            "CKA(56->224) over {} images: LiFT {lift:.4} >= raw {raw:.4}, >= bilinear {bilinear:.4}; \
             max |identity - 1| {worst_identity:.1e} <= 1e-6",
            images.len()
        ),
    )
}

// A10 --------------------------------------------------------------------

fn a10() -> Verdict {
    let run = || -> Result<(bool, [usize; 4])> {
        let model = init_lift(LiftConfig::new(384, 16))?;
        let mut rng = liftkit::rng::SplitMix64::new(4);
        let feats = Tensor::from_fn([1, 384, 14, 14], |_| rng.uniform(-1.0, 1.0) as f32);
        let image = Tensor::from_fn([1, 3, 224, 224], |_| rng.uniform(-2.0, 2.0) as f32);
        let twice = lift_apply_recursive(&model, &feats, &image, 2)?;
        let once = lift_apply_recursive(&model, &feats, &image, 1)?;
        let direct = lift_forward(&model, &feats, &image)?;
        Ok((once.bit_eq(&direct), twice.dims()))
    };
    match run() {
        Ok((bitwise, dims)) => verdict(
            "A10",
            "recursion",
            bitwise && dims == [1, 384, 56, 56],
            format!("k=2 on 14x14 gives {dims:?}; k=1 bitwise equal to single forward: {bitwise}"),
        ),
        Err(e) => errored("A10", "recursion", e),
    }
}

// A11 --------------------------------------------------------------------

fn fixture(name: &str) -> Vec<u8> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name);
    std::fs::read(&path).unwrap_or_default()
}

type RoundTrip = Box<dyn Fn() -> Result<bool>>;

fn a11() -> Verdict {
    let text = |name| String::from_utf8(fixture(name)).unwrap_or_default();
    let checks: [(&str, RoundTrip); 7] = [
        (
            "LFTB",
            Box::new(|| Ok(encode_blob(&decode_blob(&fixture("golden.lftb"))?) == fixture("golden.lftb"))),
        ),
        (
            "LFTW",
            Box::new(|| Ok(write_weights(&read_weights(&fixture("golden.lftw"))?) == fixture("golden.lftw"))),
        ),
        (
            "manifest",
            Box::new(move || {
                Ok(Manifest::parse(&text("golden_manifest.tsv"))?.to_text() == text("golden_manifest.tsv"))
            }),
        ),
        (
            "PPM",
            Box::new(|| Ok(encode_ppm(&decode_ppm(&fixture("golden.ppm"))?)? == fixture("golden.ppm"))),
        ),
        (
            "PGM",
            Box::new(|| Ok(encode_pgm(&decode_pgm(&fixture("golden.pgm"))?) == fixture("golden.pgm"))),
        ),
        (
            "keypoints",
            Box::new(move || Ok(format_keypoints(&parse_keypoints(&text("golden.kp"))?) == text("golden.kp"))),
        ),
        (
            "boxes",
            Box::new(move || Ok(format_boxes(&parse_boxes(&text("golden.boxes"))?) == text("golden.boxes"))),
        ),
    ];
    let mut failed = Vec::new();
    for (name, check) in &checks {
        match check() {
            Ok(true) => {}
            Ok(false) => failed.push(format!("{name} differs")),
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }
    verdict(
        "A11",
        "formats",
        failed.is_empty(),
        if failed.is_empty() {
            format!("{} golden fixtures decode and re-encode byte-identically", checks.len())
        } else {
            failed.join("; ")
        },
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut verdicts = vec![a1(), a2(), a3()];
    let toy = toy_run();
    match &toy {
        Ok(run) => verdicts.extend(a4_a5(run)),
        Err(e) => {
            verdicts.push(errored("A4", "training efficacy", e));
            verdicts.push(errored("A5", "random-LiFT sanity", e));
        }
    }
    verdicts.push(a6());
    verdicts.push(a7());
    match &toy {
        Ok(run) => {
            verdicts.push(a8(run));
            verdicts.push(a9(run));
        }
        Err(e) => {
            verdicts.push(errored("A8", "synthetic correspondence", e));
            verdicts.push(errored("A9", "scale invariance", e));
        }
    }
    verdicts.push(a10());
    verdicts.push(a11());
    let passed = verdicts.iter().filter(|v| v.pass).count();
    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.pass).map(|v| v.id).collect();
    println!(
        "acceptance: {passed}/{} passed{} in {}",
        verdicts.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(", failing {}", failed.join(" "))
        },
        secs(start.elapsed())
    );
    if !failed.is_empty() && std::env::var("LIFTKIT_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

//! End-to-end runs of the `liftkit` binary on generated toy data.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use liftkit::io::{read_blob, read_pgm};
use liftkit::lift::load_weights;

fn liftkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_liftkit"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = liftkit(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> (i32, String) {
    let out = liftkit(dir, args);
    (
        out.status.code().unwrap(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

/// A 64x64 toy set (grids 8/4/2) and LiFT weights trained on it for one epoch.
struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

fn workspace() -> &'static Workspace {
    static WS: OnceLock<Workspace> = OnceLock::new();
    WS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(
            &root,
            &[
                "gen-toy", "--n", "8", "--res", "64", "--seed", "2", "--dim", "16", "--out", "toy",
            ],
        );
        ok(
            &root,
            &[
                "train",
                "--manifest",
                "toy/manifest.tsv",
                "--epochs",
                "1",
                "--batch",
                "4",
                "--out",
                "w.lftw",
            ],
        );
        Workspace { _dir: dir, root }
    })
}

/// Value of `name` in an `EvalReport` CSV.
fn report_value(csv: &str, name: &str) -> f64 {
    let line = csv
        .lines()
        .find(|l| l.split(',').rev().nth(1) == Some(name))
        .unwrap_or_else(|| panic!("{name} missing from\n{csv}"));
    line.rsplit(',').next().unwrap().parse().unwrap()
}

#[test]
fn gen_toy_then_train_one_epoch_writes_weights() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-toy", "--n", "8", "--res", "224", "--seed", "7"]);
    assert!(dir.path().join("toy/manifest.tsv").exists());
    let out = ok(dir.path(), &["train", "--epochs", "1"]);
    assert!(out.contains("epoch 1"), "{out}");
    let w = dir.path().join("lift.lftw");
    assert!(w.exists());
    let model = load_weights(&w).unwrap();
    assert_eq!(model.config().feature_dim, 64);
    assert_eq!(model.config().patch, 8);
}

#[test]
fn gen_toy_layout() {
    let root = &workspace().root;
    for i in 0..8 {
        let id = format!("toy{i:04}");
        assert!(root.join(format!("toy/images/{id}.ppm")).exists());
        for scale in ["s1", "s1-2", "s1-4"] {
            assert!(root.join(format!("toy/features/{id}_{scale}.lftb")).exists());
        }
        assert!(root.join(format!("toy/annotations/{id}.boxes")).exists());
    }
    assert!(root.join("toy/annotations/toy0001.kp").exists());
    let s1 = read_blob(root.join("toy/features/toy0000_s1.lftb")).unwrap();
    assert_eq!(s1.dims(), [1, 16, 8, 8]);
}

#[test]
fn train_options_and_loss_curve() {
    let root = &workspace().root;
    let out = ok(
        root,
        &[
            "train",
            "--manifest",
            "toy/manifest.tsv",
            "--distance",
            "l2",
            "--lr",
            "0.0005",
            "--max-steps",
            "3",
            "--batch",
            "2",
            "--seed",
            "4",
            "--no-image",
            "--channels",
            "8,16,32",
            "--curve",
            "curve.csv",
            "--out",
            "noimg.lftw",
        ],
    );
    assert!(out.contains("3 steps"), "{out}");
    let model = load_weights(root.join("noimg.lftw")).unwrap();
    assert!(!model.config().use_image);
    assert_eq!(model.config().encoder_channels, vec![8, 16, 32]);
    let curve = std::fs::read_to_string(root.join("curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 4);
    assert!(curve.starts_with("epoch,step,loss\n"));
}

#[test]
fn upsample_bilinear_doubles_a_14x14_blob() {
    let dir = tempfile::tempdir().unwrap();
    let blob = liftkit::Tensor::from_fn([1, 4, 14, 14], |[_, c, y, x]| (c + y * x) as f32);
    liftkit::io::write_blob(&blob, dir.path().join("in.lftb")).unwrap();
    ok(
        dir.path(),
        &[
            "upsample", "--method", "bilinear", "--in", "in.lftb", "--out", "out.lftb",
        ],
    );
    assert_eq!(read_blob(dir.path().join("out.lftb")).unwrap().dims(), [1, 4, 28, 28]);
}

#[test]
fn upsample_every_method_and_recursion() {
    let root = &workspace().root;
    let input = "toy/features/toy0002_s1.lftb";
    let image = "toy/images/toy0002.ppm";
    for (args, side) in [
        (vec!["--method", "rc"], 16),
        (vec!["--method", "jbu", "--image", image], 16),
        (vec!["--method", "bilinear", "--k", "3"], 64),
        (vec!["--weights", "w.lftw", "--image", image], 16),
        (vec!["--weights", "w.lftw", "--image", image, "--k", "2"], 32),
    ] {
        let mut full = vec!["upsample", "--in", input, "--out", "up.lftb"];
        full.extend(args.iter());
        ok(root, &full);
        assert_eq!(
            read_blob(root.join("up.lftb")).unwrap().dims(),
            [1, 16, side, side],
            "{args:?}"
        );
    }
}

#[test]
fn eval_pck_reports_each_alpha() {
    let root = &workspace().root;
    for method in [
        &["--method", "raw"][..],
        &["--method", "bilinear"],
        &["--method", "jbu"],
        &["--weights", "w.lftw"],
    ] {
        let mut args = vec!["eval-pck", "--manifest", "toy/manifest.tsv", "--alphas", "0.2,0.1"];
        args.extend(method);
        let csv = ok(root, &args);
        for name in ["pck@0.2", "pck@0.1"] {
            assert!((0.0..=1.0).contains(&report_value(&csv, name)), "{csv}");
        }
        assert!(report_value(&csv, "pck@0.2") >= report_value(&csv, "pck@0.1"));
        assert!(report_value(&csv, "transfer_error") >= 0.0);
    }
}

#[test]
fn eval_cka_matrix_has_unit_diagonal() {
    let root = &workspace().root;
    for method in [
        &["--method", "raw"][..],
        &["--method", "bilinear"],
        &["--weights", "w.lftw"],
    ] {
        let mut args = vec![
            "eval-cka",
            "--manifest",
            "toy/manifest.tsv",
            "--scales",
            "64,32",
            "--out",
            "cka.csv",
        ];
        args.extend(method);
        let out = ok(root, &args);
        let csv = std::fs::read_to_string(root.join("cka.csv")).unwrap();
        assert!(out.ends_with(&csv));
        let rows: Vec<Vec<f64>> = csv
            .lines()
            .filter(|l| l.starts_with(|c: char| c.is_ascii_digit()))
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        assert!(!rows.is_empty(), "{csv}");
        for r in &rows {
            let (src, dst, value) = (r[0], r[1], r[2]);
            assert!((0.0..=1.0 + 1e-9).contains(&value));
            if src == dst {
                assert!((value - 1.0).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn eval_discovery_scores_corloc() {
    let root = &workspace().root;
    for method in [&["--method", "raw"][..], &["--weights", "w.lftw"]] {
        let mut args = vec!["eval-discovery", "--manifest", "toy/manifest.tsv", "--tau", "0.2"];
        args.extend(method);
        let csv = ok(root, &args);
        assert!((0.0..=1.0).contains(&report_value(&csv, "corloc")));
        assert_eq!(report_value(&csv, "evaluated"), 8.0);
    }
}

#[test]
fn simmap_writes_pgm_of_blob_extent() {
    let root = &workspace().root;
    let out = ok(
        root,
        &[
            "simmap",
            "--in",
            "toy/features/toy0003_s1.lftb",
            "--anchor",
            "2,5",
            "--out",
            "s.pgm",
        ],
    );
    assert!(out.contains("anchor (2, 5)"), "{out}");
    let pgm = read_pgm(root.join("s.pgm")).unwrap();
    assert_eq!((pgm.width, pgm.height), (8, 8));
    assert_eq!(pgm.pixels.iter().max(), Some(&255));
    ok(
        root,
        &["simmap", "--in", "toy/features/toy0003_s1.lftb", "--out", "c.pgm"],
    );
}

#[test]
fn flops_prints_vit_s16_cost() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(
        dir.path(),
        &["flops", "--arch", "vit-s16", "--res", "224", "--stride", "16"],
    );
    let headline: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("backbone_gflops_table: "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((headline - 4.34).abs() <= 0.1 * 4.34, "{headline}");
    assert!(!out.contains("lift"));
    let with = ok(dir.path(), &["flops", "--arch", "vit-s16", "--with-lift"]);
    assert!(with.contains("lift_overhead"));
}

#[test]
fn tradeoff_emits_csv_with_and_without_scores() {
    let root = &workspace().root;
    let csv = ok(
        root,
        &["tradeoff", "--methods", "raw,lift", "--resolutions", "56,112,224"],
    );
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(csv.lines().next(), Some("method,resolution,stride,gflops,score"));
    assert_eq!(rows.len(), 6);
    let g = |i: usize| rows[i].split(',').nth(3).unwrap().parse::<f64>().unwrap();
    assert!(g(0) < g(1) && g(1) < g(2));
    assert!(g(3) > g(0));
    let scored = ok(
        root,
        &[
            "tradeoff",
            "--methods",
            "bilinear,jbu,lift",
            "--resolutions",
            "32,64",
            "--manifest",
            "toy/manifest.tsv",
            "--weights",
            "w.lftw",
        ],
    );
    for row in scored.lines().skip(1) {
        let score: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&score), "{row}");
    }
}

#[test]
fn usage_errors_exit_1() {
    let root = &workspace().root;
    for args in [
        &["bogus"][..],
        &[],
        &["train", "--bogus-flag"],
        &["train", "--distance", "l3"],
        &["train", "--manifest", "toy/manifest.tsv", "--lr", "-1"],
        &["upsample", "--in", "x", "--out", "y", "--method", "raw"],
        &[
            "upsample",
            "--in",
            "x",
            "--out",
            "y",
            "--method",
            "bilinear",
            "--weights",
            "w.lftw",
        ],
        &[
            "upsample",
            "--in",
            "toy/features/toy0000_s1.lftb",
            "--out",
            "y",
            "--method",
            "bilinear",
            "--k",
            "9",
        ],
        &[
            "upsample",
            "--in",
            "toy/features/toy0000_s1.lftb",
            "--out",
            "y",
            "--method",
            "jbu",
        ],
        &["eval-pck", "--manifest", "toy/manifest.tsv", "--alphas", "x"],
        &["eval-cka", "--manifest", "toy/manifest.tsv", "--scales", "30"],
        &[
            "simmap",
            "--in",
            "toy/features/toy0000_s1.lftb",
            "--anchor",
            "up",
            "--out",
            "s.pgm",
        ],
        &["flops", "--arch", "resnet50"],
        &["gen-toy", "--res", "100", "--out", "bad"],
    ] {
        let (c, stderr) = code(root, args);
        assert_eq!(c, 1, "{args:?}: {stderr}");
        assert!(!stderr.is_empty());
    }
}

#[test]
fn data_errors_exit_2() {
    let root = &workspace().root;
    std::fs::write(root.join("garbage.lftb"), b"LFTX\x01").unwrap();
    std::fs::write(root.join("bare.tsv"), "liftkit-manifest v1\n").unwrap();
    for args in [
        &["eval-pck", "--manifest", "missing.tsv"][..],
        &["upsample", "--in", "garbage.lftb", "--out", "y", "--method", "bilinear"],
        &["simmap", "--in", "garbage.lftb", "--out", "s.pgm"],
        &["train", "--manifest", "bare.tsv"],
        &["eval-pck", "--manifest", "bare.tsv"],
        &["eval-cka", "--manifest", "bare.tsv", "--scales", "32"],
        &[
            "upsample",
            "--in",
            "toy/features/toy0000_s1.lftb",
            "--out",
            "y",
            "--weights",
            "garbage.lftb",
        ],
    ] {
        let (c, stderr) = code(root, args);
        assert_eq!(c, 2, "{args:?}: {stderr}");
        assert!(stderr.starts_with("error:"), "{stderr}");
    }
}

#[test]
fn help_exits_0() {
    let dir = tempfile::tempdir().unwrap();
    let out = liftkit(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gen-toy"));
}

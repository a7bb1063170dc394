//! Helpers shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use liftkit::rng::SplitMix64;
use liftkit::tensor::{grad_check, Tape, Var};
use liftkit::train::{recon_loss_tape, Distance, ScaleTriplet};
use liftkit::{init_lift, LiftConfig, Result, Tensor};

pub const GRAD_TOL: f64 = 1e-4;
const EPS: f64 = 1e-5;

pub fn random(shape: [usize; 4], rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
}

/// Entries bounded away from zero, so kinks stay out of finite-difference reach.
pub fn away_from_zero(shape: [usize; 4], rng: &mut SplitMix64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v = rng.uniform(0.1, 1.0);
        if rng.next_f64() < 0.5 {
            -v
        } else {
            v
        }
    })
}

/// Random extents within `4 x 8 x 6 x 6`, channels a multiple of `c_mult`.
fn random_shape(rng: &mut SplitMix64, c_mult: usize, min_hw: usize) -> [usize; 4] {
    let n = 1 + rng.below(4);
    let c = c_mult * (1 + rng.below(8 / c_mult));
    let h = min_hw + rng.below(7 - min_hw);
    let w = min_hw + rng.below(7 - min_hw);
    [n, c, h, w]
}

pub struct GradResult {
    pub name: String,
    pub max_rel_error: f64,
}

fn run(
    out: &mut Vec<GradResult>,
    name: String,
    params: &[Tensor<f64>],
    graph: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
) {
    let r = grad_check(params, EPS, graph).expect("graph builds");
    out.push(GradResult {
        name,
        max_rel_error: r.max_rel_error,
    });
}

/// Central-difference checks of every differentiable op on random shapes,
/// then of a full LiFT graph and of the two-branch objective.
pub fn gradient_suite(seed: u64, rounds: usize) -> Vec<GradResult> {
    let mut rng = SplitMix64::new(seed);
    let mut out = Vec::new();
    for round in 0..rounds {
        // conv2d, stride 1 or 2, padding 0 or 1
        let s = random_shape(&mut rng, 1, 3);
        let (stride, pad) = (1 + rng.below(2), rng.below(2));
        let k = 1 + 2 * rng.below(2);
        let co = 1 + rng.below(8);
        let target_h = (s[2] + 2 * pad - k) / stride + 1;
        let target_w = (s[3] + 2 * pad - k) / stride + 1;
        let target = random([s[0], co, target_h, target_w], &mut rng);
        let params = [
            random(s, &mut rng),
            random([co, s[1], k, k], &mut rng),
            random([1, co, 1, 1], &mut rng),
        ];
        run(
            &mut out,
            format!("conv2d#{round} {s:?} k{k} s{stride} p{pad}"),
            &params,
            |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], stride, pad)?;
                let tg = t.constant(target.clone());
                t.lp_distance(y, tg, 2)
            },
        );

        // transposed conv 2x2 stride 2
        let s = random_shape(&mut rng, 1, 1);
        let co = 1 + rng.below(8);
        let target = random([s[0], co, 2 * s[2], 2 * s[3]], &mut rng);
        let params = [
            random(s, &mut rng),
            random([s[1], co, 2, 2], &mut rng),
            random([1, co, 1, 1], &mut rng),
        ];
        run(&mut out, format!("transpose_conv2d#{round} {s:?}"), &params, |t, v| {
            let y = t.transpose_conv2d(v[0], v[1], v[2], 2)?;
            let tg = t.constant(target.clone());
            t.lp_distance(y, tg, 2)
        });

        // group norm
        let groups = [1, 2, 4][rng.below(3)];
        let s = random_shape(&mut rng, groups, 2);
        let target = random(s, &mut rng);
        let params = [
            random(s, &mut rng),
            random([1, s[1], 1, 1], &mut rng),
            random([1, s[1], 1, 1], &mut rng),
        ];
        run(
            &mut out,
            format!("group_norm#{round} {s:?} g{groups}"),
            &params,
            |t, v| {
                let y = t.group_norm(v[0], groups, v[1], v[2], 1e-5)?;
                let tg = t.constant(target.clone());
                t.lp_distance(y, tg, 2)
            },
        );

        // relu
        let s = random_shape(&mut rng, 1, 1);
        let target = random(s, &mut rng);
        run(
            &mut out,
            format!("relu#{round} {s:?}"),
            &[away_from_zero(s, &mut rng)],
            |t, v| {
                let y = t.relu(v[0]);
                let tg = t.constant(target.clone());
                t.lp_distance(y, tg, 2)
            },
        );

        // concat + add + sum
        let s = random_shape(&mut rng, 1, 1);
        let s2 = [s[0], 1 + rng.below(8), s[2], s[3]];
        let weight = random([s[0], s[1] + s2[1], s[2], s[3]], &mut rng);
        let params = [random(s, &mut rng), random(s2, &mut rng)];
        run(
            &mut out,
            format!("concat_add_sum#{round} {s:?}+{s2:?}"),
            &params,
            |t, v| {
                let cat = t.concat_channels(v[0], v[1])?;
                let w = t.constant(weight.clone());
                let y = t.add(cat, w)?;
                let y = t.relu(y);
                Ok(t.sum(y))
            },
        );

        // distances
        let s = random_shape(&mut rng, 1, 1);
        let a = random(s, &mut rng);
        let offset = away_from_zero(s, &mut rng);
        let b = a.zip_map(&offset, |x, o| x + o).unwrap();
        for (label, p) in [("cosine", 0u32), ("l1", 1), ("l2", 2)] {
            run(
                &mut out,
                format!("{label}#{round} {s:?}"),
                &[a.clone(), b.clone()],
                |t, v| {
                    if p == 0 {
                        t.cosine_distance(v[0], v[1])
                    } else {
                        t.lp_distance(v[0], v[1], p)
                    }
                },
            );
        }
    }

    // Full LiFT graph: every weight plus the input features.
    let model = init_lift(LiftConfig::new(8, 4).with_channels(vec![8, 16]).with_seed(seed))
        .unwrap()
        .cast::<f64>();
    let features = random([2, 8, 3, 3], &mut rng);
    let image = random([2, 3, 12, 12], &mut rng);
    let target = random([2, 8, 6, 6], &mut rng);
    let mut params: Vec<Tensor<f64>> = model.tensors().to_vec();
    params.push(features);
    let np = model.tensors().len();
    run(&mut out, "lift_forward full graph".into(), &params, |t, v| {
        let img = t.constant(image.clone());
        let y = model.forward_on_tape(t, &v[..np], v[np], img)?;
        let tg = t.constant(target.clone());
        t.cosine_distance(y, tg)
    });

    // Two-branch reconstruction objective, each distance.
    let triplet = ScaleTriplet::new(
        random([1, 8, 8, 8], &mut rng),
        random([1, 8, 4, 4], &mut rng),
        random([1, 8, 2, 2], &mut rng),
        random([1, 3, 16, 16], &mut rng).map(|v| 0.5 + 0.5 * v),
        random([1, 3, 8, 8], &mut rng).map(|v| 0.5 + 0.5 * v),
    )
    .unwrap();
    for d in Distance::ALL {
        run(&mut out, format!("recon_loss {d}"), model.tensors(), |t, v| {
            recon_loss_tape(&model, t, v, &triplet, d)
        });
    }
    out
}

/// `L_sym = I - D^{-1/2} W D^{-1/2}` as a dense nalgebra matrix.
pub fn normalized_laplacian(w: &[f64], n: usize) -> nalgebra::DMatrix<f64> {
    let deg: Vec<f64> = (0..n).map(|i| w[i * n..(i + 1) * n].iter().sum()).collect();
    nalgebra::DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - w[i * n + j] / (deg[i] * deg[j]).sqrt()
    })
}

/// Second-smallest eigenpair of `L_sym` from nalgebra's symmetric solver.
pub fn oracle_fiedler(w: &[f64], n: usize) -> (f64, Vec<f64>) {
    let eig = nalgebra::SymmetricEigen::new(normalized_laplacian(w, n));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let k = order[1];
    (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect())
}

pub struct SpectralAgreement {
    pub min_abs_cos: f64,
    pub max_eigenvalue_error: f64,
}

/// Compares `fiedler_vector` with the oracle on `count` random symmetric
/// `n x n` affinity matrices.
pub fn spectral_agreement(count: usize, n: usize, seed: u64) -> SpectralAgreement {
    let mut rng = SplitMix64::new(seed);
    let mut out = SpectralAgreement {
        min_abs_cos: f64::INFINITY,
        max_eigenvalue_error: 0.0,
    };
    for _ in 0..count {
        let mut w = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = rng.next_f64();
                w[i * n + j] = v;
                w[j * n + i] = v;
            }
        }
        let pair = liftkit::eval::fiedler_vector(&w, n).expect("valid affinity");
        let (value, vector) = oracle_fiedler(&w, n);
        let dot: f64 = pair.symmetric.iter().zip(&vector).map(|(a, b)| a * b).sum();
        let na = pair.symmetric.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = vector.iter().map(|v| v * v).sum::<f64>().sqrt();
        out.min_abs_cos = out.min_abs_cos.min((dot / (na * nb)).abs());
        out.max_eigenvalue_error = out.max_eigenvalue_error.max((pair.value - value).abs());
    }
    out
}

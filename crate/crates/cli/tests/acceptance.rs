//! Acceptance suite: one line per criterion, PASS or FAIL.
//!
//! Runs without the libtest harness so every line is printed in order.
//! Arguments that are plain numbers pick criteria (`-- 7 9`); none runs all.

// Oracles spell out their sums index by index on purpose.
#![allow(clippy::needless_range_loop)]

use std::panic::AssertUnwindSafe;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use crowdspeak::encoding::{
    fisher_gradients, fit_gmm, FisherModel, GmmConfig, GmmModel, NormOrder, PcaModel,
};
use crowdspeak::evaluation::{
    gmm_sweep, prepare_examples, roc_auc, run_experiment, ExperimentConfig, Method, Report,
};
use crowdspeak::filtering::{
    select_indices, FilterConfig, KeypointSubset, UpperBodyPart, NUM_PARTS,
};
use crowdspeak::geometry::Homography;
use crowdspeak::ingest::{body25, Keypoint, KeypointSet, NUM_KEYPOINTS};
use crowdspeak::learning::{AccelCnn, CnnConfig};
use crowdspeak::synth::{gen_scene, SceneConfig};
use crowdspeak::tracking::{assign_poses, PoseTrack, TrackHead, TrackerConfig};
use crowdspeak::trajectories::Trajectory;
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- 1

fn chest_pose(rng: &mut ChaCha8Rng, frame: u32) -> KeypointSet {
    let mut kp = [Keypoint::UNDETECTED; NUM_KEYPOINTS];
    if rng.random_bool(0.85) {
        kp[body25::NECK] = Keypoint::new(
            rng.random_range(0.0..100.0),
            rng.random_range(0.0..100.0),
            0.9,
        );
    }
    KeypointSet::new(frame, kp)
}

fn chest_cost(a: &KeypointSet, b: &KeypointSet, d_th: f64) -> Option<f64> {
    let (ka, kb) = (a.keypoints[body25::NECK], b.keypoints[body25::NECK]);
    if ka.confidence <= 0.0 || kb.confidence <= 0.0 {
        return None;
    }
    let d = (ka.x - kb.x).hypot(ka.y - kb.y);
    (d <= d_th).then_some(d)
}

/// Every partial injective map heads → detections; most pairs, then least
/// cost (summed in head order).
fn brute_force(cost: &[Vec<Option<f64>>], n_det: usize) -> (usize, f64) {
    fn go(
        h: usize,
        cost: &[Vec<Option<f64>>],
        used: &mut Vec<bool>,
        n: usize,
        c: f64,
        best: &mut (usize, f64),
    ) {
        if h == cost.len() {
            if n > best.0 || (n == best.0 && c < best.1) {
                *best = (n, c);
            }
            return;
        }
        go(h + 1, cost, used, n, c, best);
        for d in 0..used.len() {
            if let (false, Some(x)) = (used[d], cost[h][d]) {
                used[d] = true;
                go(h + 1, cost, used, n + 1, c + x, best);
                used[d] = false;
            }
        }
    }
    let mut best = (0, 0.0);
    go(0, cost, &mut vec![false; n_det], 0, 0.0, &mut best);
    best
}

fn assignment_optimality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = TrackerConfig {
        d_th: 40.0,
        r_th: 10,
        chest_index: body25::NECK,
    };
    let mut failures = 0;
    let mut over = 0;
    for _ in 0..500 {
        let nh = rng.random_range(0..=6);
        let nd = rng.random_range(0..=6);
        let prev: Vec<KeypointSet> = (0..nh).map(|_| chest_pose(&mut rng, 0)).collect();
        let dets: Vec<KeypointSet> = (0..nd).map(|_| chest_pose(&mut rng, 1)).collect();
        let heads: Vec<TrackHead> = prev
            .iter()
            .enumerate()
            .map(|(i, p)| TrackHead {
                track_id: i as u32,
                pose: p,
                last_frame: 0,
            })
            .collect();
        let a = assign_poses(&heads, &dets, &cfg);
        let cost: Vec<Vec<Option<f64>>> = prev
            .iter()
            .map(|h| dets.iter().map(|d| chest_cost(h, d, cfg.d_th)).collect())
            .collect();
        let (n, c) = brute_force(&cost, nd);
        let got: f64 = a
            .matches
            .iter()
            .map(|&(h, d)| cost[h][d].unwrap_or(f64::NAN))
            .sum();
        over += a
            .matches
            .iter()
            .filter(|&&(h, d)| cost[h][d].is_none())
            .count();
        if a.matches.len() != n || got != c || a.total_cost(&heads, &dets, cfg.chest_index) != c {
            failures += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        failures == 0 && over == 0 && secs < 5.0,
        format!("500 instances: {failures} cost mismatches, {over} pairs beyond D_th, {secs:.2} s (< 5 s)"),
    )
}

// ---------------------------------------------------------------- 2

fn random_gmm(rng: &mut ChaCha8Rng, k: usize, d: usize) -> GmmModel {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let s: f64 = raw.iter().sum();
    GmmModel {
        weights: raw.iter().map(|w| w / s).collect(),
        means: (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect(),
        variances: (0..k)
            .map(|_| (0..d).map(|_| rng.random_range(0.3..2.0)).collect())
            .collect(),
    }
}

fn log_gauss(x: &[f64], mu: &[f64], var: &[f64]) -> f64 {
    let mut s = 0.0;
    for j in 0..x.len() {
        s += -0.5 * ((2.0 * std::f64::consts::PI * var[j]).ln() + (x[j] - mu[j]).powi(2) / var[j]);
    }
    s
}

fn posteriors(g: &GmmModel, x: &[f64]) -> Vec<f64> {
    let lp: Vec<f64> = (0..g.weights.len())
        .map(|k| g.weights[k].ln() + log_gauss(x, &g.means[k], &g.variances[k]))
        .collect();
    let m = lp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = lp.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Mean then deviation gradients, each `1/(T·√w)` and `1/(T·√(2w))` scaled.
fn fv_loops(g: &GmmModel, xs: &[Vec<f64>]) -> Vec<f64> {
    let (k, d) = (g.weights.len(), g.means[0].len());
    let t = xs.len() as f64;
    let mut mu = vec![0.0; k * d];
    let mut sd = vec![0.0; k * d];
    for x in xs {
        let gamma = posteriors(g, x);
        for i in 0..k {
            for j in 0..d {
                let z = (x[j] - g.means[i][j]) / g.variances[i][j].sqrt();
                mu[i * d + j] += gamma[i] * z;
                sd[i * d + j] += gamma[i] * (z * z - 1.0);
            }
        }
    }
    for i in 0..k {
        for j in 0..d {
            mu[i * d + j] /= t * g.weights[i].sqrt();
            sd[i * d + j] /= t * (2.0 * g.weights[i]).sqrt();
        }
    }
    mu.extend(sd);
    mu
}

fn power_l2(mut v: Vec<f64>, alpha: f64) -> Vec<f64> {
    for z in &mut v {
        *z = z.signum() * z.abs().powf(alpha);
    }
    let n = v.iter().map(|z| z * z).sum::<f64>().sqrt();
    v.iter().map(|z| z / n).collect()
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}

fn fv_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut shape_errors = 0;
    for _ in 0..100 {
        let k = rng.random_range(1..=4);
        let dp = rng.random_range(1..=4);
        let dd = dp + rng.random_range(0..=3);
        let t = rng.random_range(1..=20);
        let gmm = random_gmm(&mut rng, k, dp);
        let pca = PcaModel {
            mean: (0..dd).map(|_| rng.random_range(-1.0..1.0)).collect(),
            basis: (0..dd)
                .map(|_| (0..dp).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            eigenvalues: (0..dp).map(|c| 2.0 / (c + 1) as f64).collect(),
        };
        let alpha = [0.5, 1.0, rng.random_range(0.2..1.0)][rng.random_range(0..3)];
        let model = FisherModel {
            version: 1,
            k,
            d: dd,
            d_prime: dp,
            pca: pca.clone(),
            gmm: gmm.clone(),
            norm_order: NormOrder::PowerThenL2,
            alpha,
            seed: 0,
        };
        let desc: Vec<Vec<f32>> = (0..t)
            .map(|_| (0..dd).map(|_| rng.random_range(-2.0f32..2.0)).collect())
            .collect();
        // Whitening by explicit loops: y_c = Σ_r (x_r − m_r)·B[r][c] / √λ_c.
        let white: Vec<Vec<f64>> = desc
            .iter()
            .map(|x| {
                (0..dp)
                    .map(|c| {
                        let mut s = 0.0;
                        for r in 0..dd {
                            s += (x[r] as f64 - pca.mean[r]) * pca.basis[r][c];
                        }
                        s / pca.eigenvalues[c].sqrt()
                    })
                    .collect()
            })
            .collect();
        let raw = fv_loops(&gmm, &white);
        let want = power_l2(raw.clone(), alpha);
        match (
            model.encoder().encode(desc.iter().map(|v| v.as_slice())),
            fisher_gradients(&gmm, &white),
        ) {
            (Ok(fv), Ok(g)) => {
                worst = worst
                    .max(rel_diff(&fv.values, &want))
                    .max(rel_diff(&g, &raw))
            }
            _ => shape_errors += 1,
        }
    }

    let mut drops = 0;
    let mut skipped = 0;
    for fit in 0..50u64 {
        let k = rng.random_range(1..=4);
        let d = rng.random_range(1..=4);
        let truth = random_gmm(&mut rng, k, d);
        let n = rng.random_range(40..300);
        let data: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut u = rng.random::<f64>();
                let c = truth.weights.iter().position(|&w| {
                    u -= w;
                    u <= 0.0
                });
                let c = c.unwrap_or(k - 1);
                (0..d)
                    .map(|j| {
                        let z: f64 =
                            rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng);
                        truth.means[c][j] + z * truth.variances[c][j].sqrt()
                    })
                    .collect()
            })
            .collect();
        let cfg = GmmConfig {
            components: rng.random_range(1..=4),
            max_iter: 60,
            tol: 0.0,
            seed: fit,
            ..GmmConfig::default()
        };
        let (_, trace) = fit_gmm(&data, &cfg).expect("EM fit");
        for (i, w) in trace.log_likelihood.windows(2).enumerate() {
            // A re-seeded component legitimately restarts the ascent.
            if trace.reinit_at.contains(&i) {
                skipped += 1;
                continue;
            }
            if w[1] < w[0] - 1e-8 * w[0].abs().max(1.0) {
                drops += 1;
            }
        }
    }
    outcome(
        worst <= 1e-10 && shape_errors == 0 && drops == 0,
        format!(
            "100 encodings: worst relative error {worst:.2e} (≤ 1e-10); 50 EM fits: {drops} log-likelihood drops \
             ({skipped} re-seeding steps exempt)"
        ),
    )
}

// ---------------------------------------------------------------- 3

/// `G_Xᵀ F⁻¹ G_Y` with the gradient of the mean log-likelihood in the raw
/// (μ, σ) parameters and the diagonal closed-form information matrix.
fn fisher_kernel(g: &GmmModel, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let grad = |set: &[Vec<f64>]| -> Vec<f64> {
        let (k, d) = (g.weights.len(), g.means[0].len());
        let mut out = vec![0.0; 2 * k * d];
        for x in set {
            let gamma = posteriors(g, x);
            for i in 0..k {
                for j in 0..d {
                    let s = g.variances[i][j].sqrt();
                    let diff = x[j] - g.means[i][j];
                    out[i * d + j] += gamma[i] * diff / (s * s);
                    out[k * d + i * d + j] += gamma[i] * (diff * diff / (s * s * s) - 1.0 / s);
                }
            }
        }
        out.iter().map(|v| v / set.len() as f64).collect()
    };
    let (k, d) = (g.weights.len(), g.means[0].len());
    let (gx, gy) = (grad(xs), grad(ys));
    let mut s = 0.0;
    for i in 0..k {
        for j in 0..d {
            let var = g.variances[i][j];
            s += gx[i * d + j] * gy[i * d + j] * var / g.weights[i];
            s += gx[k * d + i * d + j] * gy[k * d + i * d + j] * var / (2.0 * g.weights[i]);
        }
    }
    s
}

fn kernel_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let k = rng.random_range(1..=2);
        let d = rng.random_range(1..=2);
        let gmm = random_gmm(&mut rng, k, d);
        let (nx, ny) = (rng.random_range(1..=12), rng.random_range(1..=12));
        let mut set = |n: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..d).map(|_| rng.random_range(-2.5..2.5)).collect())
                .collect()
        };
        let (x, y) = (set(nx), set(ny));
        let fx = crowdspeak::encoding::normalize_fv(
            fisher_gradients(&gmm, &x).unwrap(),
            1.0,
            NormOrder::PowerThenL2,
        )
        .unwrap();
        let fy = crowdspeak::encoding::normalize_fv(
            fisher_gradients(&gmm, &y).unwrap(),
            1.0,
            NormOrder::PowerThenL2,
        )
        .unwrap();
        let dot: f64 = fx.values.iter().zip(&fy.values).map(|(a, b)| a * b).sum();
        let want = fisher_kernel(&gmm, &x, &y)
            / (fisher_kernel(&gmm, &x, &x) * fisher_kernel(&gmm, &y, &y)).sqrt();
        worst = worst.max((dot - want).abs());
    }
    outcome(
        worst <= 1e-8,
        format!("200 pairs (K ≤ 2, D′ ≤ 2): worst |Δ| {worst:.2e} (≤ 1e-8)"),
    )
}

// ---------------------------------------------------------------- 4

fn cnn_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = CnnConfig {
        channels: [4, 6, 6, 6, 6],
        hidden: [8, 8],
        zero_output_init: false,
        ..CnnConfig::default()
    };
    let model = AccelCnn::new(cfg, 4).expect("cnn");
    let n = model.num_params();
    let h = 1e-6;
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..5 {
        let x: Vec<f64> = (0..model.input_size())
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let y = rng.random_bool(0.5);
        let (_, grad) = model
            .loss_and_grad(&model.params, &x, y, None)
            .expect("gradient");
        for _ in 0..20 {
            let i = rng.random_range(0..n);
            let mut p = model.params.clone();
            p[i] += h;
            let up = model.loss(&p, &x, y, None).unwrap();
            p[i] -= 2.0 * h;
            let down = model.loss(&p, &x, y, None).unwrap();
            let num = (up - down) / (2.0 * h);
            let a = grad[i];
            // Parameters feeding a dead unit have an exactly zero gradient.
            let err = if a.abs().max(num.abs()) < 1e-10 {
                0.0
            } else {
                (a - num).abs() / a.abs().max(num.abs())
            };
            worst = worst.max(err);
            checked += 1;
        }
    }
    outcome(worst < 1e-4, format!("{checked} parameter checks over {n} parameters: worst relative error {worst:.2e} (< 1e-4)"))
}

// ---------------------------------------------------------------- 5

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut cases = 0;
    while cases < 300 {
        let n = rng.random_range(2..=500);
        let levels = [3, 10, 0][rng.random_range(0..3)];
        let s: Vec<f64> = (0..n)
            .map(|_| {
                if levels > 0 {
                    rng.random_range(0..levels) as f64 / levels as f64
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let p = y.iter().filter(|&&b| b).count();
        if p == 0 || p == n {
            continue;
        }
        let mut wins = 0.0;
        for i in 0..n {
            for j in 0..n {
                if y[i] && !y[j] {
                    wins += if s[i] > s[j] {
                        1.0
                    } else if s[i] == s[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        let want = wins / (p * (n - p)) as f64;
        worst = worst.max((roc_auc(&s, &y).unwrap() - want).abs());
        cases += 1;
    }
    outcome(
        worst <= 1e-12,
        format!("{cases} score sets (n ≤ 500, with ties): worst |Δ| {worst:.2e} (≤ 1e-12)"),
    )
}

// ---------------------------------------------------------------- 6

type M3 = [[f64; 3]; 3];

fn mul(m: &M3, v: [f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

fn adjugate(m: &M3) -> M3 {
    let c =
        |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ]
}

/// Pixels per ground metre at `p`: mean image distance covered by two
/// orthogonal 1 cm ground steps. `None` at or above the horizon.
fn oracle_ppm(h: &M3, inv: &M3, reference: [f64; 2], p: [f64; 2]) -> Option<f64> {
    let v = mul(inv, [p[0], p[1], 1.0]);
    let r = mul(inv, [reference[0], reference[1], 1.0]);
    if v[2].signum() != r[2].signum() || v[2] == 0.0 {
        return None;
    }
    let g = [v[0] / v[2], v[1] / v[2]];
    let delta = 0.01;
    let mut total = 0.0;
    for d in [[delta, 0.0], [0.0, delta]] {
        let q = mul(h, [g[0] + d[0], g[1] + d[1], 1.0]);
        let q = [q[0] / q[2], q[1] / q[2]];
        total += (q[0] - p[0]).hypot(q[1] - p[1]) / delta;
    }
    Some(total / 2.0)
}

fn oracle_part(pose: &KeypointSet, part: UpperBodyPart) -> Option<[f64; 2]> {
    let one = |i: usize| {
        let k = pose.keypoints[i];
        (k.confidence > 0.0).then_some([k.x, k.y])
    };
    match part {
        UpperBodyPart::Head => {
            let pts: Vec<[f64; 2]> = body25::HEAD_PARTS.iter().filter_map(|&i| one(i)).collect();
            (!pts.is_empty()).then(|| {
                let n = pts.len() as f64;
                [
                    pts.iter().map(|p| p[0]).sum::<f64>() / n,
                    pts.iter().map(|p| p[1]).sum::<f64>() / n,
                ]
            })
        }
        UpperBodyPart::Neck => one(body25::NECK),
        UpperBodyPart::RShoulder => one(body25::R_SHOULDER),
        UpperBodyPart::LShoulder => one(body25::L_SHOULDER),
        UpperBodyPart::RElbow => one(body25::R_ELBOW),
        UpperBodyPart::LElbow => one(body25::L_ELBOW),
        UpperBodyPart::RWrist => one(body25::R_WRIST),
        UpperBodyPart::LWrist => one(body25::L_WRIST),
    }
}

fn filtering_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut mismatched = 0;
    let (mut selected, mut total) = (0usize, 0usize);
    let upper = [
        body25::NOSE,
        body25::R_EYE,
        body25::L_EYE,
        body25::R_EAR,
        body25::L_EAR,
        body25::NECK,
        body25::R_SHOULDER,
        body25::L_SHOULDER,
        body25::R_ELBOW,
        body25::L_ELBOW,
        body25::R_WRIST,
        body25::L_WRIST,
    ];
    for _ in 0..100 {
        // Overhead-style camera over a ground plane, randomly perturbed.
        let mut hm: M3 = [
            [700.0, 640.0, 4900.0],
            [0.0, -400.0, 9100.0],
            [0.0, 1.0, 7.0],
        ];
        for row in hm.iter_mut() {
            for v in row.iter_mut() {
                *v *= 1.0 + rng.random_range(-0.05..0.05);
            }
        }
        let m = Matrix3::from_fn(|r, c| hm[r][c]);
        let rg = mul(&hm, [0.0, 2.0, 1.0]);
        let reference = [rg[0] / rg[2], rg[1] / rg[2]];
        let h = Homography::from_matrix(m, reference).expect("invertible");
        let inv = adjugate(&hm);

        let g0 = [rng.random_range(-3.0..3.0), rng.random_range(-4.0..6.0)];
        let c = mul(&hm, [g0[0], g0[1], 1.0]);
        let centre = [c[0] / c[2], c[1] / c[2]];
        let start = rng.random_range(0..20u32);
        let len = rng.random_range(1..12u32);
        let poses: Vec<KeypointSet> = (0..len)
            .map(|f| {
                let mut kp = [Keypoint::UNDETECTED; NUM_KEYPOINTS];
                for &i in &upper {
                    if rng.random_bool(0.8) {
                        kp[i] = Keypoint::new(
                            centre[0] + rng.random_range(-60.0..60.0),
                            centre[1] + rng.random_range(-60.0..60.0),
                            rng.random_range(0.1..1.0),
                        );
                    }
                }
                KeypointSet::new(start + f, kp)
            })
            .collect();
        let track = PoseTrack::from_poses(0, poses);
        let trajs: Vec<Trajectory> = (0..60)
            .map(|_| Trajectory {
                start_frame: rng.random_range(start.saturating_sub(3)..start + len + 3),
                scale: 0,
                points: vec![[
                    (centre[0] + rng.random_range(-120.0..120.0)) as f32,
                    (centre[1] + rng.random_range(-120.0..120.0)) as f32,
                ]],
                descriptor: Vec::new(),
            })
            .collect();
        let subset = match rng.random_range(0..3) {
            0 => KeypointSubset::UpperBody,
            1 => KeypointSubset::HandsAndHead,
            _ => {
                let mut parts: Vec<UpperBodyPart> = UpperBodyPart::ALL
                    .iter()
                    .copied()
                    .filter(|_| rng.random_bool(0.4))
                    .collect();
                if parts.is_empty() {
                    parts.push(UpperBodyPart::Neck);
                }
                KeypointSubset::Custom(parts)
            }
        };
        let cfg = FilterConfig {
            radii: [0; NUM_PARTS].map(|_| rng.random_range(8.0..60.0)),
            subset: subset.clone(),
            frame_window: rng.random_range(0..=2),
        };
        let got = select_indices(&trajs, &track, &h, &cfg);

        let ref_ppm = oracle_ppm(&hm, &inv, reference, reference).unwrap();
        let mask = subset.mask();
        let mut want = Vec::new();
        for (ti, t) in trajs.iter().enumerate() {
            let o = [t.points[0][0] as f64, t.points[0][1] as f64];
            let mut hit = false;
            for pose in &track.poses {
                let n = t.start_frame as i64;
                if (pose.frame as i64 - n).abs() > cfg.frame_window as i64 {
                    continue;
                }
                for part in UpperBodyPart::ALL {
                    let j = part as usize;
                    if !mask[j] {
                        continue;
                    }
                    let Some(p) = oracle_part(pose, part) else {
                        continue;
                    };
                    let Some(ppm) = oracle_ppm(&hm, &inv, reference, p) else {
                        continue;
                    };
                    let s = if p == reference { 1.0 } else { ppm / ref_ppm };
                    if (o[0] - p[0]).hypot(o[1] - p[1]) < cfg.radii[j] * s {
                        hit = true;
                    }
                }
            }
            if hit {
                want.push(ti);
            }
        }
        selected += want.len();
        total += trajs.len();
        if got != want {
            mismatched += 1;
        }
    }
    outcome(
        mismatched == 0,
        format!("100 segments: {mismatched} differ from the exhaustive oracle ({selected}/{total} trajectories selected)"),
    )
}

// ---------------------------------------------------------------- 7, 9

fn benchmark_scene() -> SceneConfig {
    SceneConfig {
        n_agents: 24,
        duration: 260.0,
        contamination: 1.0,
        seed: 1,
        ..SceneConfig::default()
    }
}

fn row(report: &Report, m: Method) -> (f64, f64) {
    let r = report
        .methods
        .iter()
        .find(|r| r.method == m)
        .expect("method row");
    (
        r.mean_auc.unwrap_or(f64::NAN),
        r.trajectories_mean.unwrap_or(f64::NAN),
    )
}

fn video_benchmark() -> (Report, f64, usize) {
    let start = Instant::now();
    let scene = gen_scene(&benchmark_scene()).expect("scene");
    let cfg = ExperimentConfig {
        folds: 10,
        seed: 1,
        methods: vec![Method::FvFull, Method::FvUpperBody, Method::FvHandsAndHead],
        ..ExperimentConfig::default()
    };
    let examples = prepare_examples(&scene.dataset, &cfg).expect("examples");
    let out = run_experiment(&scene.dataset, &examples, &cfg).expect("experiment");
    (out.report, start.elapsed().as_secs_f64(), examples.len())
}

fn directional_selection(report: &Report, secs: f64, n: usize) -> Outcome {
    let (full, tf) = row(report, Method::FvFull);
    let (upper, _) = row(report, Method::FvUpperBody);
    let (hh, th) = row(report, Method::FvHandsAndHead);
    let ratio = th / tf;
    let pass = n >= 2000
        && hh >= upper
        && upper >= full
        && hh - full >= 0.02
        && ratio <= 0.5
        && secs < 600.0;
    outcome(
        pass,
        format!(
            "{n} segments, 10 folds: HandsAndHead {hh:.3} ≥ UpperBody {upper:.3} ≥ Full {full:.3}, gap {:+.3} (≥ +0.02), \
             trajectory ratio {:.0}% (≤ 50%), {secs:.0} s (< 600 s)",
            hh - full,
            100.0 * ratio
        ),
    )
}

fn contamination_trend(report: &Report) -> Outcome {
    let curve = |m: Method| {
        report
            .contamination_curves
            .iter()
            .find(|c| c.method == m.name())
    };
    let (Some(full), Some(hh)) = (curve(Method::FvFull), curve(Method::FvHandsAndHead)) else {
        return outcome(false, "contamination curves missing");
    };
    let (rho, sf) = (
        full.spearman.unwrap_or(f64::NAN),
        full.slope.unwrap_or(f64::NAN),
    );
    let sh = hh.slope.unwrap_or(f64::NAN);
    outcome(
        sf < 0.0 && rho < -0.5 && sh.abs() < sf.abs(),
        format!("FV-Full slope {sf:.3} (ρ = {rho:.2} < −0.5); FV-HandsAndHead slope {sh:.3}, |{sh:.3}| < |{sf:.3}|"),
    )
}

// ---------------------------------------------------------------- 8, 10

fn small_scene() -> SceneConfig {
    SceneConfig {
        n_agents: 12,
        duration: 150.0,
        contamination: 1.0,
        seed: 2,
        ..SceneConfig::default()
    }
}

fn small_experiment(methods: Vec<Method>) -> ExperimentConfig {
    ExperimentConfig {
        folds: 5,
        seed: 2,
        methods,
        cnn_inner_folds: 2,
        cnn: CnnConfig {
            channels: [8, 16, 32, 32, 32],
            hidden: [64, 64],
            max_epochs: 30,
            patience: 5,
            ..CnnConfig::default()
        },
        ..ExperimentConfig::default()
    }
}

fn fusion_gain() -> Outcome {
    let scene = gen_scene(&small_scene()).expect("scene");
    let cfg = small_experiment(vec![
        Method::FvHandsAndHead,
        Method::Cnn,
        Method::Multimodal,
    ]);
    let examples = prepare_examples(&scene.dataset, &cfg).expect("examples");
    let report = run_experiment(&scene.dataset, &examples, &cfg)
        .expect("experiment")
        .report;
    let (v, _) = row(&report, Method::FvHandsAndHead);
    let (a, _) = row(&report, Method::Cnn);
    let (f, _) = row(&report, Method::Multimodal);
    outcome(
        f >= v.max(a) + 0.01,
        format!(
            "fused {f:.3} vs video {v:.3} / accel {a:.3}: gain {:+.3} (≥ +0.01)",
            f - v.max(a)
        ),
    )
}

fn gmm_plateau() -> Outcome {
    let scene = gen_scene(&small_scene()).expect("scene");
    let cfg = small_experiment(vec![Method::FvFull, Method::FvHandsAndHead]);
    let examples = prepare_examples(&scene.dataset, &cfg).expect("examples");
    let sweep = gmm_sweep(&scene.dataset, &examples, &cfg, &[16, 256]).expect("sweep");
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for m in [Method::FvFull, Method::FvHandsAndHead] {
        let at = |k: usize| {
            sweep
                .iter()
                .find(|p| p.method == m && p.components == k)
                .and_then(|p| p.mean_auc)
        };
        let (a, b) = (at(16).unwrap_or(f64::NAN), at(256).unwrap_or(f64::NAN));
        worst = worst.max((a - b).abs());
        if (a - b).is_nan() {
            worst = f64::NAN;
        }
        parts.push(format!("{} K=16 {a:.3} / K=256 {b:.3}", m.name()));
    }
    outcome(
        worst <= 0.03,
        format!("{}; worst |Δ| {worst:.3} (≤ 0.03)", parts.join(", ")),
    )
}

// ---------------------------------------------------------------- 11

const DETERMINISM_CONFIG: &str = r#"
seed = 11
data = "data"
output = "out"

[synth]
n_agents = 8
duration = 90.0
contamination = 1.0

[experiment]
folds = 4
tuning_folds = 2
cnn_inner_folds = 2
radius_grid = [24.0, 32.0, 48.0]

[experiment.encoder]
sample_size = 20000
pca_sample_size = 5000

[experiment.encoder.gmm]
components = 16
max_iter = 30

[experiment.cnn]
channels = [8, 16, 32, 32, 32]
hidden = [64, 64]
max_epochs = 10
patience = 3

[evaluate]
gmm_sweep = [4, 16]
"#;

fn cli(cfg: &Path, stage: &str) -> bool {
    Command::new(env!("CARGO_BIN_EXE_crowdspeak"))
        .arg(stage)
        .arg("--config")
        .arg(cfg)
        .env("RUST_LOG", "warn")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn determinism() -> Outcome {
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().expect("tempdir");
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, DETERMINISM_CONFIG).unwrap();
        if !cli(&cfg, "synth") || !cli(&cfg, "evaluate") {
            return outcome(false, "synth or evaluate failed");
        }
        reports.push(std::fs::read(dir.path().join("out/report.json")).unwrap());
    }
    outcome(
        reports[0] == reports[1],
        format!(
            "two synth+evaluate runs: report.json {} bytes, identical: {}",
            reports[0].len(),
            reports[0] == reports[1]
        ),
    )
}

// ----------------------------------------------------------------

fn main() {
    let picked: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |n: usize| picked.is_empty() || picked.contains(&n);
    let names = [
        "assignment optimality",
        "Fisher-vector oracle and EM monotonicity",
        "Fisher kernel identity",
        "CNN gradient check",
        "AUC oracle",
        "filtering oracle",
        "trajectory selection ordering",
        "late-fusion gain",
        "contamination trend",
        "GMM-size plateau",
        "determinism",
    ];
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let guard = |f: &dyn Fn() -> Outcome| -> Outcome {
        std::panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        })
    };
    let mut report = |n: usize, o: Outcome| {
        println!(
            "criterion {n:>2} ({}): {} — {}",
            names[n - 1],
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((n, o));
    };
    let singles: [(usize, &dyn Fn() -> Outcome); 6] = [
        (1, &assignment_optimality),
        (2, &fv_oracle),
        (3, &kernel_identity),
        (4, &cnn_gradient_check),
        (5, &auc_oracle),
        (6, &filtering_oracle),
    ];
    for (n, f) in singles {
        if want(n) {
            report(n, guard(f));
        }
    }
    if want(7) || want(9) {
        match std::panic::catch_unwind(video_benchmark) {
            Ok((r, secs, n)) => {
                if want(7) {
                    report(7, directional_selection(&r, secs, n));
                }
                if want(9) {
                    report(9, contamination_trend(&r));
                }
            }
            Err(_) => {
                for n in [7, 9].into_iter().filter(|&n| want(n)) {
                    report(n, outcome(false, "benchmark run panicked"));
                }
            }
        }
    }
    if want(8) {
        report(8, guard(&fusion_gain));
    }
    if want(10) {
        report(10, guard(&gmm_plateau));
    }
    if want(11) {
        report(11, guard(&determinism));
    }
    let failed: Vec<usize> = results
        .iter()
        .filter(|(_, o)| !o.pass)
        .map(|(n, _)| *n)
        .collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        std::process::exit(1);
    }
}

//! Logistic late fusion of the video and acceleration probabilities.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionModel {
    pub w_video: f64,
    pub w_accel: f64,
    pub intercept: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn nll(beta: &[f64; 3], x: &[[f64; 3]], y: &[bool]) -> f64 {
    x.iter()
        .zip(y)
        .map(|(r, &l)| {
            let z = beta[0] * r[0] + beta[1] * r[1] + beta[2] * r[2];
            let sp = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            sp - if l { z } else { 0.0 }
        })
        .sum()
}

fn gradient_hessian(beta: &[f64; 3], x: &[[f64; 3]], y: &[bool]) -> ([f64; 3], [[f64; 3]; 3]) {
    let mut g = [0.0; 3];
    let mut h = [[0.0; 3]; 3];
    for (r, &l) in x.iter().zip(y) {
        let p = sigmoid(beta[0] * r[0] + beta[1] * r[1] + beta[2] * r[2]);
        let e = p - f64::from(u8::from(l));
        let w = p * (1.0 - p);
        for i in 0..3 {
            g[i] += e * r[i];
            for j in 0..3 {
                h[i][j] += w * r[i] * r[j];
            }
        }
    }
    (g, h)
}

fn solve3(h: [[f64; 3]; 3], g: [f64; 3]) -> Option<[f64; 3]> {
    let m = nalgebra::Matrix3::from_fn(|i, j| h[i][j]);
    let v = nalgebra::Vector3::from(g);
    let s = m.cholesky()?.solve(&v);
    s.iter().all(|z| z.is_finite()).then(|| [s[0], s[1], s[2]])
}

/// Fits `sigmoid(w_v·s_v + w_a·s_a + c)` without regularisation by
/// Newton–Raphson (at most 100 iterations). If the classes are separable, or
/// Newton cannot make progress, a gradient fit with steps capped at unit
/// length takes over and a warning is logged.
pub fn fuse_fit(video: &[f64], accel: &[f64], labels: &[bool]) -> Result<FusionModel> {
    if video.len() != accel.len() || video.len() != labels.len() {
        return Err(Error::Shape("fusion inputs differ in length".into()));
    }
    if video.iter().chain(accel).any(|s| !s.is_finite()) {
        return Err(Error::Range("non-finite fusion score".into()));
    }
    if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
        return Err(Error::Fit("fusion needs both classes".into()));
    }
    let x: Vec<[f64; 3]> = video
        .iter()
        .zip(accel)
        .map(|(&v, &a)| [v, a, 1.0])
        .collect();
    let n = x.len() as f64;
    let mut beta = [0.0; 3];
    let mut f = nll(&beta, &x, labels);
    let mut ok = false;
    for _ in 0..100 {
        let (g, h) = gradient_hessian(&beta, &x, labels);
        let Some(step) = solve3(h, g) else { break };
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-10 {
            let cand = [
                beta[0] - t * step[0],
                beta[1] - t * step[1],
                beta[2] - t * step[2],
            ];
            let fc = nll(&cand, &x, labels);
            if fc <= f {
                beta = cand;
                f = fc;
                moved = true;
                break;
            }
            t /= 2.0;
        }
        if !moved {
            break;
        }
        if g.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-10 * n
            || step.iter().all(|s| (t * s).abs() < 1e-12)
        {
            ok = true;
            break;
        }
    }
    let separated = f < 1e-6 * n || beta.iter().any(|b| b.abs() > 1e6);
    if !ok || separated {
        log::warn!("fusion logistic regression did not converge (separable scores?); using bounded gradient steps");
        beta = [0.0; 3];
        for _ in 0..2000 {
            let (g, _) = gradient_hessian(&beta, &x, labels);
            let g: Vec<f64> = g.iter().map(|v| v / n).collect();
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-8 {
                break;
            }
            // rate 4, step length capped at 1
            let scale = (4.0 * norm).min(1.0) / norm;
            for i in 0..3 {
                beta[i] -= scale * g[i];
            }
        }
    }
    Ok(FusionModel {
        w_video: beta[0],
        w_accel: beta[1],
        intercept: beta[2],
    })
}

impl FusionModel {
    pub fn apply(&self, video: f64, accel: f64) -> f64 {
        sigmoid(self.w_video * video + self.w_accel * accel + self.intercept)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: FusionModel = serde_json::from_str(&text)?;
        if ![m.w_video, m.w_accel, m.intercept]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Schema(
                "fusion model has non-finite parameters".into(),
            ));
        }
        Ok(m)
    }
}

//! L2-regularised linear SVM trained with Pegasos-style SGD.

use std::collections::HashMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::platt::{platt_apply, platt_fit};
use crate::error::{Error, Result};
use crate::evaluation::{grouped_kfold, roc_auc};

pub const LAMBDA_GRID: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub l2_lambda: f64,
    #[serde(rename = "platt_A")]
    pub platt_a: f64,
    #[serde(rename = "platt_B")]
    pub platt_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvmConfig {
    pub lambda_grid: Vec<f64>,
    pub epochs: usize,
    pub inner_folds: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig {
            lambda_grid: LAMBDA_GRID.to_vec(),
            epochs: 10,
            inner_folds: 4,
        }
    }
}

fn check(x: &[&[f64]], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} rows vs {} labels",
            x.len(),
            y.len()
        )));
    }
    if !y.iter().any(|&l| l) || y.iter().all(|&l| l) {
        return Err(Error::Fit("SVM training needs both classes".into()));
    }
    let d = x[0].len();
    if x.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("ragged SVM input".into()));
    }
    if x.iter().any(|r| r.iter().any(|v| !v.is_finite())) {
        return Err(Error::Range("non-finite SVM input".into()));
    }
    Ok(d)
}

/// Distinct `(row, label)` pairs with their multiplicities, in first-seen order.
fn dedup(x: &[&[f64]], y: &[bool]) -> Vec<(usize, f64)> {
    let mut seen: HashMap<(Vec<u64>, bool), usize> = HashMap::new();
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (i, (r, &l)) in x.iter().zip(y).enumerate() {
        let key = (r.iter().map(|v| v.to_bits()).collect(), l);
        match seen.get(&key) {
            Some(&u) => out[u].1 += 1.0,
            None => {
                seen.insert(key, out.len());
                out.push((i, 1.0));
            }
        }
    }
    out
}

/// Minimises `(λ/2)(‖w‖² + b²) + mean hinge` with step `1/(λt)`.
///
/// The bias is learnt as the weight of a constant unit feature. Exact duplicate
/// rows are merged and weighted, so duplicating the whole training set leaves
/// the result unchanged.
pub fn train_svm(
    x: &[&[f64]],
    y: &[bool],
    lambda: f64,
    epochs: usize,
    seed: u64,
) -> Result<LinearSvm> {
    let d = check(x, y)?;
    if !(lambda > 0.0) {
        return Err(Error::Config(format!(
            "lambda must be positive, got {lambda}"
        )));
    }
    let rows = dedup(x, y);
    let total: f64 = rows.iter().map(|r| r.1).sum();
    let scale_w = rows.len() as f64 / total;
    let sq: Vec<f64> = rows
        .iter()
        .map(|&(i, _)| x[i].iter().map(|v| v * v).sum::<f64>() + 1.0)
        .collect();
    let radius = 1.0 / lambda.sqrt();

    // w = s·v, b = s·vb
    let mut v = vec![0.0; d];
    let mut vb = 0.0;
    let mut s = 1.0;
    let mut norm2_v = 0.0;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0u64;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &u in &order {
            t += 1;
            let (i, mult) = rows[u];
            let row = x[i];
            let label = if y[i] { 1.0 } else { -1.0 };
            let eta = 1.0 / (lambda * t as f64);
            let dot: f64 = v.iter().zip(row).map(|(a, b)| a * b).sum::<f64>() + vb;
            let margin = label * s * dot;
            let shrink = 1.0 - eta * lambda;
            if shrink <= 0.0 {
                v.iter_mut().for_each(|z| *z = 0.0);
                vb = 0.0;
                norm2_v = 0.0;
                s = 1.0;
            } else {
                s *= shrink;
            }
            if margin < 1.0 {
                let c = eta * label * scale_w * mult / s;
                let dot_now = if shrink <= 0.0 { 0.0 } else { dot };
                for (a, b) in v.iter_mut().zip(row) {
                    *a += c * b;
                }
                vb += c;
                norm2_v += 2.0 * c * dot_now + c * c * sq[u];
            }
            let norm = s * norm2_v.max(0.0).sqrt();
            if norm > radius {
                s *= radius / norm;
            }
            if s < 1e-9 {
                v.iter_mut().for_each(|z| *z *= s);
                vb *= s;
                norm2_v *= s * s;
                s = 1.0;
            }
        }
    }
    let weights: Vec<f64> = v.iter().map(|z| z * s).collect();
    let bias = vb * s;
    if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(Error::Divergence("SVM weights became non-finite".into()));
    }
    Ok(LinearSvm {
        weights,
        bias,
        l2_lambda: lambda,
        platt_a: -1.0,
        platt_b: 0.0,
    })
}

/// `(λ/2)(‖w‖² + b²) + mean hinge` — the quantity [`train_svm`] minimises.
pub fn svm_objective(w: &[f64], b: f64, lambda: f64, x: &[&[f64]], y: &[bool]) -> f64 {
    let reg = 0.5 * lambda * (w.iter().map(|v| v * v).sum::<f64>() + b * b);
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(r, &l)| {
            let m = w.iter().zip(r.iter()).map(|(a, c)| a * c).sum::<f64>() + b;
            (1.0 - if l { m } else { -m }).max(0.0)
        })
        .sum();
    reg + hinge / x.len() as f64
}

impl LinearSvm {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.bias
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        platt_apply(self.platt_a, self.platt_b, self.margin(x))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: LinearSvm = serde_json::from_str(&text)?;
        if m.weights
            .iter()
            .chain([&m.bias, &m.platt_a, &m.platt_b])
            .any(|v| !v.is_finite())
        {
            return Err(Error::Schema("SVM model has non-finite parameters".into()));
        }
        Ok(m)
    }
}

/// Result of [`fit_svm_cv`]: the model plus the tuning trace.
#[derive(Debug, Clone)]
pub struct SvmFit {
    pub model: LinearSvm,
    /// Mean inner-fold AUC for each grid value.
    pub cv_auc: Vec<(f64, f64)>,
    /// Out-of-fold margins of the chosen λ, aligned with the training rows.
    pub oof_margins: Vec<f64>,
}

/// Picks λ by grouped inner CV on AUC, calibrates Platt on the pooled
/// out-of-fold margins of the chosen λ, then refits on everything.
pub fn fit_svm_cv<S: AsRef<str>>(
    x: &[&[f64]],
    y: &[bool],
    groups: &[S],
    cfg: &SvmConfig,
    seed: u64,
) -> Result<SvmFit> {
    check(x, y)?;
    if cfg.lambda_grid.is_empty() {
        return Err(Error::Config("empty lambda grid".into()));
    }
    let plan = grouped_kfold(groups, cfg.inner_folds, seed)?;
    let mut splits = Vec::with_capacity(cfg.inner_folds);
    for f in 0..cfg.inner_folds {
        splits.push(plan.split(groups, f)?);
    }
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    let mut cv_auc = Vec::new();
    for &lambda in &cfg.lambda_grid {
        let mut oof = vec![0.0; x.len()];
        let mut aucs = Vec::new();
        for (train, test) in &splits {
            let tx: Vec<&[f64]> = train.iter().map(|&i| x[i]).collect();
            let ty: Vec<bool> = train.iter().map(|&i| y[i]).collect();
            if !ty.iter().any(|&l| l) || ty.iter().all(|&l| l) {
                continue;
            }
            let m = train_svm(&tx, &ty, lambda, cfg.epochs, seed)?;
            let scores: Vec<f64> = test.iter().map(|&i| m.margin(x[i])).collect();
            for (&i, &s) in test.iter().zip(&scores) {
                oof[i] = s;
            }
            let labels: Vec<bool> = test.iter().map(|&i| y[i]).collect();
            if let Ok(a) = roc_auc(&scores, &labels) {
                aucs.push(a);
            }
        }
        let mean = if aucs.is_empty() {
            0.5
        } else {
            aucs.iter().sum::<f64>() / aucs.len() as f64
        };
        cv_auc.push((lambda, mean));
        if best.as_ref().is_none_or(|b| mean > b.1) {
            best = Some((lambda, mean, oof));
        }
    }
    let (lambda, _, oof) = best.unwrap();
    let mut model = train_svm(x, y, lambda, cfg.epochs, seed)?;
    let (a, b) = platt_fit(&oof, y)?;
    model.platt_a = a;
    model.platt_b = b;
    Ok(SvmFit {
        model,
        cv_auc,
        oof_margins: oof,
    })
}

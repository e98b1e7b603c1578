//! Platt scaling of classifier margins into probabilities.

use crate::error::{Error, Result};

pub fn platt_apply(a: f64, b: f64, m: f64) -> f64 {
    let z = a * m + b;
    if z >= 0.0 {
        let e = (-z).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Negative log-likelihood with Platt's smoothed targets.
pub fn platt_nll(a: f64, b: f64, margins: &[f64], labels: &[bool]) -> f64 {
    let (hi, lo) = targets(labels);
    margins
        .iter()
        .zip(labels)
        .map(|(&m, &l)| {
            let t = if l { hi } else { lo };
            let z = a * m + b;
            if z >= 0.0 {
                t * z + (-z).exp().ln_1p()
            } else {
                (t - 1.0) * z + z.exp().ln_1p()
            }
        })
        .sum()
}

fn targets(labels: &[bool]) -> (f64, f64) {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    ((pos + 1.0) / (pos + 2.0), 1.0 / (neg + 2.0))
}

/// Fits `(A, B)` by Newton's method with backtracking (at most 100 iterations),
/// following Lin, Lin & Weng's numerically careful formulation.
pub fn platt_fit(margins: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if margins.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} margins vs {} labels",
            margins.len(),
            labels.len()
        )));
    }
    if margins.iter().any(|m| !m.is_finite()) {
        return Err(Error::Range("non-finite margin".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::Fit("Platt calibration needs both classes".into()));
    }
    let (hi, lo) = targets(labels);
    let mut a = 0.0;
    let mut b = ((neg + 1.0) / (pos + 1.0)).ln();
    let mut fval = platt_nll(a, b, margins, labels);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (1e-12, 1e-12, 0.0, 0.0, 0.0);
        for (&m, &l) in margins.iter().zip(labels) {
            let t = if l { hi } else { lo };
            let p = platt_apply(a, b, m);
            let q = 1.0 - p;
            let d2 = p * q;
            h11 += m * m * d2;
            h22 += d2;
            h21 += m * d2;
            let d1 = t - p;
            g1 += m * d1;
            g2 += d1;
        }
        if g1.abs() < 1e-5 && g2.abs() < 1e-5 {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        let mut moved = false;
        while step >= 1e-10 {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = platt_nll(na, nb, margins, labels);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                moved = true;
                break;
            }
            step /= 2.0;
        }
        if !moved {
            break;
        }
    }
    Ok((a, b))
}

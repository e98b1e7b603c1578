//! PCA with whitening, keeping the leading components that explain a target
//! share of the variance.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `D` rows of `D′` columns; columns are orthonormal principal axes.
    pub basis: Vec<Vec<f64>>,
    /// Descending, all positive.
    pub eigenvalues: Vec<f64>,
}

/// Fits on the rows of `sample` (`n × D`).
pub fn fit_pca(sample: &[Vec<f64>], variance_keep: f64) -> Result<PcaModel> {
    let n = sample.len();
    if n < 2 {
        return Err(Error::EmptyInput(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    if !(variance_keep > 0.0 && variance_keep <= 1.0) {
        return Err(Error::Config(format!(
            "variance_keep {variance_keep} outside (0, 1]"
        )));
    }
    let d = sample[0].len();
    if d == 0 || sample.iter().any(|r| r.len() != d) {
        return Err(Error::Shape("PCA rows must share a positive length".into()));
    }
    if sample.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Range("PCA sample contains non-finite values".into()));
    }
    if n <= d {
        log::warn!(
            "PCA on {n} rows of dimension {d}: at most {} components are identifiable",
            n - 1
        );
    }

    let mut mean = vec![0.0; d];
    for r in sample {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, d, |i, j| sample[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lead = eig.eigenvalues[order[0]];
    if !(lead > 0.0) {
        return Err(Error::Degenerate("sample has no variance".into()));
    }
    let total: f64 = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).sum();
    let floor = lead * 1e-12;
    let mut keep = 0;
    let mut cum = 0.0;
    for &i in &order {
        let l = eig.eigenvalues[i];
        if l <= floor {
            break;
        }
        keep += 1;
        cum += l;
        if cum >= variance_keep * total * (1.0 - 1e-12) {
            break;
        }
    }

    let mut basis = vec![vec![0.0; keep]; d];
    let mut eigenvalues = Vec::with_capacity(keep);
    for (k, &i) in order.iter().take(keep).enumerate() {
        let col = eig.eigenvectors.column(i);
        // Fix the sign so the largest-magnitude loading is positive.
        let pivot = (0..d)
            .max_by(|&a, &b| col[a].abs().total_cmp(&col[b].abs()))
            .unwrap();
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..d {
            basis[r][k] = sign * col[r];
        }
        eigenvalues.push(eig.eigenvalues[i]);
    }
    Ok(PcaModel {
        mean,
        basis,
        eigenvalues,
    })
}

impl PcaModel {
    pub fn input_dims(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dims(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Row-major `D′ × D` projection with the whitening scale folded in.
    pub fn projector(&self) -> Projector {
        let (d, k) = (self.input_dims(), self.output_dims());
        let mut rows = vec![0.0; k * d];
        for c in 0..k {
            let s = 1.0 / self.eigenvalues[c].sqrt();
            for r in 0..d {
                rows[c * d + r] = self.basis[r][c] * s;
            }
        }
        Projector {
            mean: self.mean.clone(),
            rows,
            out: k,
        }
    }

    pub fn whiten(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.output_dims()];
        for (c, o) in out.iter_mut().enumerate() {
            let s = 1.0 / self.eigenvalues[c].sqrt();
            *o = s * x
                .iter()
                .zip(&self.mean)
                .zip(&self.basis)
                .map(|((xv, m), b)| (xv - m) * b[c])
                .sum::<f64>();
        }
        out
    }
}

/// Precomputed whitening map for bulk use.
#[derive(Debug, Clone)]
pub struct Projector {
    mean: Vec<f64>,
    rows: Vec<f64>,
    out: usize,
}

impl Projector {
    pub fn output_dims(&self) -> usize {
        self.out
    }

    pub fn apply_f32(&self, x: &[f32], out: &mut [f64]) {
        let d = self.mean.len();
        let centered: Vec<f64> = x
            .iter()
            .zip(&self.mean)
            .map(|(&v, m)| v as f64 - m)
            .collect();
        for (c, o) in out.iter_mut().enumerate().take(self.out) {
            let row = &self.rows[c * d..(c + 1) * d];
            *o = row.iter().zip(&centered).map(|(a, b)| a * b).sum();
        }
    }

    pub fn apply(&self, x: &[f32]) -> Vec<f64> {
        let mut out = vec![0.0; self.out];
        self.apply_f32(x, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..d).map(|_| StandardNormal.sample(rng)).collect())
            .collect()
    }

    #[test]
    fn isotropic_keeps_both_dims() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = gaussian(&mut rng, 5000, 2);
        let p = fit_pca(&data, 0.95).unwrap();
        assert_eq!(p.output_dims(), 2);
        for l in &p.eigenvalues {
            assert!((l - 1.0).abs() < 0.08);
        }
    }

    #[test]
    fn line_in_3d_has_one_component() {
        let data: Vec<Vec<f64>> = (0..50)
            .map(|i| {
                let t = i as f64 * 0.3 - 4.0;
                vec![1.0 + 2.0 * t, -t, 0.5 * t]
            })
            .collect();
        let p = fit_pca(&data, 0.95).unwrap();
        assert_eq!(p.output_dims(), 1);
    }

    #[test]
    fn constant_data_is_degenerate() {
        let data = vec![vec![1.0, 2.0]; 10];
        assert!(matches!(fit_pca(&data, 0.95), Err(Error::Degenerate(_))));
    }

    #[test]
    fn basis_orthonormal_and_reconstruction_matches_dense_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = 6;
        let mix: Vec<Vec<f64>> = gaussian(&mut rng, d, d);
        let data: Vec<Vec<f64>> = gaussian(&mut rng, 400, d)
            .into_iter()
            .map(|z| {
                (0..d)
                    .map(|i| (0..d).map(|j| mix[i][j] * z[j]).sum::<f64>() + i as f64)
                    .collect()
            })
            .collect();
        let p = fit_pca(&data, 1.0).unwrap();
        let k = p.output_dims();
        for a in 0..k {
            for b in 0..k {
                let dot: f64 = (0..d).map(|r| p.basis[r][a] * p.basis[r][b]).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        assert!(p.eigenvalues.windows(2).all(|w| w[0] >= w[1]));

        // Oracle: full eigendecomposition of the sample covariance via SVD of
        // the centered data; projection onto all axes reconstructs exactly.
        let n = data.len();
        let mean: Vec<f64> = (0..d)
            .map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n as f64)
            .collect();
        let x = DMatrix::from_fn(n, d, |i, j| data[i][j] - mean[j]);
        let svd = x.clone().svd(false, true);
        let mut sv: Vec<f64> = svd
            .singular_values
            .iter()
            .map(|s| s * s / (n as f64 - 1.0))
            .collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in sv.iter().zip(&p.eigenvalues) {
            assert!((a - b).abs() < 1e-8 * sv[0]);
        }
        for row in data.iter().take(20) {
            let y = p.whiten(row);
            let back: Vec<f64> = (0..d)
                .map(|r| {
                    mean[r]
                        + (0..k)
                            .map(|c| p.basis[r][c] * y[c] * p.eigenvalues[c].sqrt())
                            .sum::<f64>()
                })
                .collect();
            for (a, b) in back.iter().zip(row) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn whitening_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let data: Vec<Vec<f64>> = gaussian(&mut rng, 3000, 3)
            .into_iter()
            .map(|z| vec![3.0 * z[0] + 1.0, 0.5 * z[1] - z[0], 2.0 * z[2] + 0.3 * z[1]])
            .collect();
        let p = fit_pca(&data, 1.0).unwrap();
        assert!(p.whiten(&p.mean).iter().all(|v| v.abs() < 1e-12));
        let ys: Vec<Vec<f64>> = data.iter().map(|r| p.whiten(r)).collect();
        for c in 0..p.output_dims() {
            let m = ys.iter().map(|y| y[c]).sum::<f64>() / ys.len() as f64;
            let v = ys.iter().map(|y| (y[c] - m).powi(2)).sum::<f64>() / (ys.len() as f64 - 1.0);
            assert!((v - 1.0).abs() < 0.05);
        }
        let proj = p.projector();
        let x32: Vec<f32> = data[0].iter().map(|&v| v as f32).collect();
        let a = proj.apply(&x32);
        let b = p.whiten(&x32.iter().map(|&v| v as f64).collect::<Vec<_>>());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
    }

    #[test]
    fn identity_covariance_whitening_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = gaussian(&mut rng, 20000, 4);
        let p = fit_pca(&data, 1.0).unwrap();
        let ratio: f64 = data
            .iter()
            .take(2000)
            .map(|x| {
                let c: Vec<f64> = x.iter().zip(&p.mean).map(|(a, m)| a - m).collect();
                let n0 = c.iter().map(|v| v * v).sum::<f64>().sqrt();
                let n1 = p.whiten(x).iter().map(|v| v * v).sum::<f64>().sqrt();
                n1 / n0
            })
            .sum::<f64>()
            / 2000.0;
        assert!((ratio - 1.0).abs() < 0.05);
    }
}

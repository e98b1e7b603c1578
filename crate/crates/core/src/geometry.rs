//! Ground-plane homography from floor marks and the position-dependent
//! pixel scale used to size filter radii and box padding.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground plane (meters) to image plane (pixels) mapping.
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    pub matrix: Matrix3<f64>,
    pub inverse: Matrix3<f64>,
    pub reference: [f64; 2],
    /// RMS reprojection error of the calibration marks, in pixels.
    pub rms: f64,
    ref_pixels_per_meter: f64,
}

pub const DEFAULT_DELTA: f64 = 0.01;

/// Floor-mark correspondences as stored in `calib.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Calibration {
    pub ground: Vec<[f64; 2]>,
    pub image: Vec<[f64; 2]>,
    #[serde(rename = "ref", default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<[f64; 2]>,
}

impl Calibration {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn homography(&self) -> Result<Homography> {
        if self.ground.len() != self.image.len() {
            return Err(Error::Schema(format!(
                "calibration has {} ground points but {} image points",
                self.ground.len(),
                self.image.len()
            )));
        }
        let pairs: Vec<([f64; 2], [f64; 2])> = self
            .ground
            .iter()
            .copied()
            .zip(self.image.iter().copied())
            .collect();
        let h = estimate_homography(&pairs)?;
        match self.reference {
            Some(r) => h.with_reference(r),
            None => Ok(h),
        }
    }
}

fn apply(m: &Matrix3<f64>, p: [f64; 2]) -> Option<[f64; 2]> {
    let v = m * Vector3::new(p[0], p[1], 1.0);
    let (x, y) = (v[0] / v[2], v[1] / v[2]);
    (v[2].abs() > 1e-12 && x.is_finite() && y.is_finite()).then_some([x, y])
}

fn normalizer(pts: &[[f64; 2]]) -> Matrix3<f64> {
    let n = pts.len() as f64;
    let cx = pts.iter().map(|p| p[0]).sum::<f64>() / n;
    let cy = pts.iter().map(|p| p[1]).sum::<f64>() / n;
    let mean_dist = pts
        .iter()
        .map(|p| (p[0] - cx).hypot(p[1] - cy))
        .sum::<f64>()
        / n;
    let s = if mean_dist > 1e-15 {
        std::f64::consts::SQRT_2 / mean_dist
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * cx, 0.0, s, -s * cy, 0.0, 0.0, 1.0)
}

fn collinear(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let scale = (b[0] - a[0]).hypot(b[1] - a[1]) * (c[0] - a[0]).hypot(c[1] - a[1]);
    cross.abs() <= 1e-12 * scale.max(1e-300)
}

/// Normalized direct linear transform from `(ground, image)` correspondences.
pub fn estimate_homography(pairs: &[([f64; 2], [f64; 2])]) -> Result<Homography> {
    if pairs.len() < 4 {
        return Err(Error::Geometry(format!(
            "homography needs at least 4 correspondences, got {}",
            pairs.len()
        )));
    }
    let ground: Vec<[f64; 2]> = pairs.iter().map(|p| p.0).collect();
    let image: Vec<[f64; 2]> = pairs.iter().map(|p| p.1).collect();
    if pairs.len() == 4 {
        for (i, j, k) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
            if collinear(ground[i], ground[j], ground[k]) {
                return Err(Error::Degenerate("three ground marks are collinear".into()));
            }
        }
    }
    let tg = normalizer(&ground);
    let ti = normalizer(&image);

    // Padded to at least 9 rows so the SVD exposes the full right null space.
    let rows = (2 * pairs.len()).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (k, (g, im)) in ground.iter().zip(&image).enumerate() {
        let gn = apply(&tg, *g).expect("affine normalizer");
        let inn = apply(&ti, *im).expect("affine normalizer");
        let (x, y, u, v) = (gn[0], gn[1], inn[0], inn[1]);
        let r0 = [-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u];
        let r1 = [0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v];
        for c in 0..9 {
            a[(2 * k, c)] = r0[c];
            a[(2 * k + 1, c)] = r1[c];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Geometry("SVD failed".into()))?;
    let sv = &svd.singular_values;
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&i, &j| sv[j].total_cmp(&sv[i]));
    let largest = sv[order[0]];
    if sv[order[7]] <= 1e-10 * largest {
        return Err(Error::Degenerate(
            "correspondences do not determine a unique homography".into(),
        ));
    }
    let h = v_t.row(order[8]);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let ti_inv = ti
        .try_inverse()
        .ok_or_else(|| Error::Geometry("singular normalizer".into()))?;
    let mut m = ti_inv * hn * tg;
    if m[(2, 2)].abs() < 1e-14 {
        return Err(Error::Geometry(
            "homography has vanishing (2,2) entry".into(),
        ));
    }
    m /= m[(2, 2)];

    let mut sq = 0.0;
    for (g, im) in ground.iter().zip(&image) {
        let p = apply(&m, *g).ok_or_else(|| Error::Geometry("mark maps to infinity".into()))?;
        sq += (p[0] - im[0]).powi(2) + (p[1] - im[1]).powi(2);
    }
    let rms = (sq / pairs.len() as f64).sqrt();

    let n = ground.len() as f64;
    let centroid = [
        ground.iter().map(|g| g[0]).sum::<f64>() / n,
        ground.iter().map(|g| g[1]).sum::<f64>() / n,
    ];
    let reference =
        apply(&m, centroid).ok_or_else(|| Error::Geometry("centroid maps to infinity".into()))?;
    let mut h = Homography::from_matrix(m, reference)?;
    h.rms = rms;
    Ok(h)
}

impl Homography {
    /// Wraps a ground→image matrix. The matrix must be invertible.
    pub fn from_matrix(matrix: Matrix3<f64>, reference: [f64; 2]) -> Result<Self> {
        let det = matrix.determinant();
        if !det.is_finite() || det.abs() < 1e-300 {
            return Err(Error::Degenerate("homography is singular".into()));
        }
        let inverse = matrix
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("homography is singular".into()))?;
        let mut h = Homography {
            matrix,
            inverse,
            reference,
            rms: 0.0,
            ref_pixels_per_meter: 1.0,
        };
        h.ref_pixels_per_meter = h.pixels_per_meter(reference, DEFAULT_DELTA)?;
        Ok(h)
    }

    pub fn identity() -> Self {
        Self::from_matrix(Matrix3::identity(), [0.0, 0.0]).expect("identity is invertible")
    }

    pub fn with_reference(mut self, reference: [f64; 2]) -> Result<Self> {
        self.ref_pixels_per_meter = self.pixels_per_meter(reference, DEFAULT_DELTA)?;
        self.reference = reference;
        Ok(self)
    }

    pub fn ground_to_image(&self, g: [f64; 2]) -> Option<[f64; 2]> {
        apply(&self.matrix, g)
    }

    /// Ground position of an image point; `None` at or beyond the horizon.
    pub fn image_to_ground(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        let v = self.inverse * Vector3::new(p[0], p[1], 1.0);
        let r = self.inverse * Vector3::new(self.reference[0], self.reference[1], 1.0);
        if v[2].abs() <= 1e-12 * v.norm() || v[2].signum() != r[2].signum() {
            return None;
        }
        apply(&self.inverse, p)
    }

    /// Image pixels per ground meter at `p`, averaged over two orthogonal
    /// ground displacements of length `delta`.
    pub fn pixels_per_meter(&self, p: [f64; 2], delta: f64) -> Result<f64> {
        let g = self
            .image_to_ground(p)
            .ok_or_else(|| Error::Geometry(format!("point {p:?} is at or beyond the horizon")))?;
        let mut total = 0.0;
        for d in [[delta, 0.0], [0.0, delta]] {
            let q = self
                .ground_to_image([g[0] + d[0], g[1] + d[1]])
                .ok_or_else(|| {
                    Error::Geometry(format!("ground point near {g:?} is not visible"))
                })?;
            total += (q[0] - p[0]).hypot(q[1] - p[1]) / delta;
        }
        let l = total / 2.0;
        if !l.is_finite() {
            return Err(Error::Geometry(format!("non-finite scale at {p:?}")));
        }
        Ok(l)
    }

    /// Pixel scale at `p` relative to the reference point.
    pub fn scale_factor(&self, p: [f64; 2], delta: f64) -> Result<f64> {
        if p == self.reference && delta == DEFAULT_DELTA {
            return Ok(1.0);
        }
        let reference = if delta == DEFAULT_DELTA {
            self.ref_pixels_per_meter
        } else {
            self.pixels_per_meter(self.reference, delta)?
        };
        Ok(self.pixels_per_meter(p, delta)? / reference)
    }

    pub fn calibration_json(&self) -> serde_json::Value {
        let m: Vec<Vec<f64>> = (0..3)
            .map(|r| (0..3).map(|c| self.matrix[(r, c)]).collect())
            .collect();
        serde_json::json!({ "matrix": m, "ref": self.reference, "rms": self.rms })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]
    }

    fn perspective() -> Matrix3<f64> {
        Matrix3::new(120.0, 15.0, 400.0, -8.0, 60.0, 300.0, 0.01, 0.08, 1.0)
    }

    #[test]
    fn identity_and_scale_recovered() {
        let pairs: Vec<_> = square().into_iter().map(|p| (p, p)).collect();
        let h = estimate_homography(&pairs).unwrap();
        assert!((h.matrix - Matrix3::identity()).norm() < 1e-9);
        assert!(h.rms < 1e-9);
        assert!((h.matrix * h.inverse - Matrix3::identity()).norm() < 1e-9);

        let pairs: Vec<_> = square()
            .into_iter()
            .map(|p| (p, [2.0 * p[0], 2.0 * p[1]]))
            .collect();
        let h = estimate_homography(&pairs).unwrap();
        assert!((h.matrix - Matrix3::from_diagonal(&Vector3::new(2.0, 2.0, 1.0))).norm() < 1e-9);
    }

    #[test]
    fn random_homography_recovered_up_to_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let truth: Matrix3<f64> = Matrix3::from_fn(|r, c| {
                if r == 2 && c == 2 {
                    1.0
                } else if r == 2 {
                    rng.random_range(-0.05..0.05)
                } else {
                    rng.random_range(-100.0..100.0)
                }
            });
            if truth.determinant().abs() < 1.0 {
                continue;
            }
            let pairs: Vec<_> = (0..8)
                .map(|_| {
                    let g = [rng.random_range(0.0..5.0), rng.random_range(0.0..5.0)];
                    (g, apply(&truth, g).unwrap())
                })
                .collect();
            let h = estimate_homography(&pairs).unwrap();
            let rel = (h.matrix - truth).norm() / truth.norm();
            assert!(rel < 1e-6, "relative error {rel}");
        }
    }

    #[test]
    fn degenerate_and_arity_errors() {
        let pairs: Vec<_> = square().into_iter().take(3).map(|p| (p, p)).collect();
        assert!(matches!(
            estimate_homography(&pairs),
            Err(Error::Geometry(_))
        ));
        let line: Vec<_> = (0..4).map(|i| ([i as f64, 0.0], [i as f64, 1.0])).collect();
        assert!(matches!(
            estimate_homography(&line),
            Err(Error::Degenerate(_))
        ));
        let mut pts: Vec<_> = (0..6)
            .map(|i| ([i as f64, 2.0 * i as f64], [i as f64, 0.0]))
            .collect();
        pts.push(([0.0, 1.0], [1.0, 1.0]));
        assert!(matches!(
            estimate_homography(&pts),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn scale_factor_basics() {
        let h = Homography::from_matrix(perspective(), [500.0, 400.0]).unwrap();
        assert_eq!(h.scale_factor([500.0, 400.0], DEFAULT_DELTA).unwrap(), 1.0);
        let id = Homography::identity();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let p = [
                rng.random_range(-100.0..100.0),
                rng.random_range(-100.0..100.0),
            ];
            assert!((id.scale_factor(p, DEFAULT_DELTA).unwrap() - 1.0).abs() < 1e-9);
        }
    }

    fn analytic_sigma(m: &Matrix3<f64>, g: [f64; 2]) -> f64 {
        // Jacobian of (x,y) -> (a·g/c·g, b·g/c·g)
        let v = m * Vector3::new(g[0], g[1], 1.0);
        let w = v[2];
        let mut cols = [0.0; 2];
        for (k, col) in cols.iter_mut().enumerate() {
            let du = (m[(0, k)] * w - v[0] * m[(2, k)]) / (w * w);
            let dv = (m[(1, k)] * w - v[1] * m[(2, k)]) / (w * w);
            *col = du.hypot(dv);
        }
        (cols[0] + cols[1]) / 2.0
    }

    #[test]
    fn scale_factor_matches_analytic_jacobian() {
        let m = perspective();
        let h = Homography::from_matrix(m, [500.0, 400.0]).unwrap();
        let g_ref = h.image_to_ground(h.reference).unwrap();
        let sigma_ref = analytic_sigma(&m, g_ref);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let g = [rng.random_range(0.0..6.0), rng.random_range(0.0..6.0)];
            let p = h.ground_to_image(g).unwrap();
            let s = h.scale_factor(p, 1e-3).unwrap();
            let oracle = analytic_sigma(&m, g) / sigma_ref;
            assert!(
                (s - oracle).abs() < 1e-4 * oracle.max(1.0),
                "{s} vs {oracle}"
            );
        }
    }

    #[test]
    fn horizon_is_rejected() {
        let h = Homography::from_matrix(perspective(), [500.0, 400.0]).unwrap();
        // The horizon is the image of the ground line at infinity: far along +y.
        let far = h.ground_to_image([0.0, 1e9]).unwrap();
        let beyond = [far[0], far[1] + (far[1] - 400.0).signum() * 50.0];
        assert!(matches!(
            h.scale_factor(beyond, DEFAULT_DELTA),
            Err(Error::Geometry(_))
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn invariant_to_matrix_rescaling(c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0], gx in 0.0f64..6.0, gy in 0.0f64..6.0) {
                let h1 = Homography::from_matrix(perspective(), [500.0, 400.0]).unwrap();
                let h2 = Homography::from_matrix(perspective() * c, [500.0, 400.0]).unwrap();
                let p = h1.ground_to_image([gx, gy]).unwrap();
                let (s1, s2) = (h1.scale_factor(p, DEFAULT_DELTA).unwrap(), h2.scale_factor(p, DEFAULT_DELTA).unwrap());
                prop_assert!((s1 - s2).abs() <= 1e-9 * s1.abs().max(1.0));
            }

            #[test]
            fn affine_scale_is_constant(a in -5.0f64..5.0, b in -5.0f64..5.0, x in -200.0f64..200.0, y in -200.0f64..200.0) {
                let m = Matrix3::new(3.0 + a, 0.5, 10.0, b, 2.0, -4.0, 0.0, 0.0, 1.0);
                prop_assume!(m.determinant().abs() > 0.1);
                let h = Homography::from_matrix(m, [0.0, 0.0]).unwrap();
                prop_assert!((h.scale_factor([x, y], DEFAULT_DELTA).unwrap() - 1.0).abs() < 1e-9);
            }

            #[test]
            fn smaller_delta_is_stable(gx in 0.0f64..6.0, gy in 0.0f64..6.0) {
                let h = Homography::from_matrix(perspective(), [500.0, 400.0]).unwrap();
                let p = h.ground_to_image([gx, gy]).unwrap();
                let s1 = h.scale_factor(p, 0.01).unwrap();
                let s2 = h.scale_factor(p, 0.001).unwrap();
                prop_assert!((s1 - s2).abs() < 1e-3 * s1);
            }
        }
    }
}

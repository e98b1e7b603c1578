//! Dense optical flow by pyramidal block matching.
//!
//! Good enough to drive the tracker on synthetic or well-textured footage;
//! anything better can be plugged in through [`FlowEstimator`].

use super::image::{FlowField, GrayImage};
use crate::error::{Error, Result};

pub trait FlowEstimator: Sync {
    fn estimate(&self, a: &GrayImage, b: &GrayImage) -> Result<FlowField>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockMatching {
    pub levels: usize,
    /// Search radius at the coarsest level.
    pub coarse_radius: i32,
    /// Search radius around the upsampled prediction at finer levels.
    pub fine_radius: i32,
    /// Odd SSD window side.
    pub window: usize,
}

impl Default for BlockMatching {
    fn default() -> Self {
        BlockMatching {
            levels: 3,
            coarse_radius: 4,
            fine_radius: 2,
            window: 7,
        }
    }
}

/// Reference estimator with default settings.
pub fn estimate_flow(a: &GrayImage, b: &GrayImage) -> Result<FlowField> {
    BlockMatching::default().estimate(a, b)
}

impl FlowEstimator for BlockMatching {
    fn estimate(&self, a: &GrayImage, b: &GrayImage) -> Result<FlowField> {
        if a.width() != b.width() || a.height() != b.height() {
            return Err(Error::Shape(format!(
                "frames differ in size: {}x{} vs {}x{}",
                a.width(),
                a.height(),
                b.width(),
                b.height()
            )));
        }
        if a.width() == 0 || a.height() == 0 {
            return Err(Error::Shape("empty frame".into()));
        }
        let mut pa = vec![a.clone()];
        let mut pb = vec![b.clone()];
        while pa.len() < self.levels.max(1) {
            let last = pa.last().unwrap();
            if last.width() < 2 * self.window || last.height() < 2 * self.window {
                break;
            }
            let (na, nb) = (last.blur121().half(), pb.last().unwrap().blur121().half());
            pa.push(na);
            pb.push(nb);
        }

        let top = pa.len() - 1;
        let mut pred: Vec<[i32; 2]> = vec![[0, 0]; pa[top].width() * pa[top].height()];
        let mut radius = self.coarse_radius;
        for level in (0..=top).rev() {
            let (ia, ib) = (&pa[level], &pb[level]);
            let (w, h) = (ia.width(), ia.height());
            if level != top {
                let (pw, ph) = (pa[level + 1].width(), pa[level + 1].height());
                pred = (0..w * h)
                    .map(|i| {
                        let (x, y) = ((i % w / 2).min(pw - 1), (i / w / 2).min(ph - 1));
                        let d = pred[y * pw + x];
                        [2 * d[0], 2 * d[1]]
                    })
                    .collect();
            }
            for y in 0..h {
                for x in 0..w {
                    let i = y * w + x;
                    pred[i] = self.search(ia, ib, x, y, pred[i], radius);
                }
            }
            if level != 0 {
                // Coarse matches on small textures are noisy; a median keeps
                // isolated failures from propagating down the pyramid.
                pred = median3(&pred, w, h);
            }
            radius = self.fine_radius;
        }

        let (w, h) = (a.width(), a.height());
        let mut u = vec![0.0f32; w * h];
        let mut v = vec![0.0f32; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                let d = pred[i];
                let c0 = self.ssd(a, b, x, y, d[0], d[1]);
                if c0 == 0.0 {
                    u[i] = d[0] as f32;
                    v[i] = d[1] as f32;
                    continue;
                }
                let sx = parabolic(
                    self.ssd(a, b, x, y, d[0] - 1, d[1]),
                    c0,
                    self.ssd(a, b, x, y, d[0] + 1, d[1]),
                );
                let sy = parabolic(
                    self.ssd(a, b, x, y, d[0], d[1] - 1),
                    c0,
                    self.ssd(a, b, x, y, d[0], d[1] + 1),
                );
                u[i] = (d[0] as f64 + sx) as f32;
                v[i] = (d[1] as f64 + sy) as f32;
            }
        }
        FlowField::new(w, h, u, v)
    }
}

impl BlockMatching {
    fn ssd(&self, a: &GrayImage, b: &GrayImage, x: usize, y: usize, dx: i32, dy: i32) -> f64 {
        let r = (self.window / 2) as isize;
        let (x, y) = (x as isize, y as isize);
        let mut s = 0.0f64;
        for j in -r..=r {
            for i in -r..=r {
                let pa = a.get_clamped(x + i, y + j);
                let pb = b.get_clamped(x + i + dx as isize, y + j + dy as isize);
                let d = (pa - pb) as f64;
                s += d * d;
            }
        }
        s
    }

    /// Best integer displacement within `radius` of `center`; the center wins ties.
    fn search(
        &self,
        a: &GrayImage,
        b: &GrayImage,
        x: usize,
        y: usize,
        center: [i32; 2],
        radius: i32,
    ) -> [i32; 2] {
        let mut best = center;
        let mut best_cost = self.ssd(a, b, x, y, center[0], center[1]);
        for dy in -radius..=radius {
            for dx in -radius..=radius {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let d = [center[0] + dx, center[1] + dy];
                let c = self.ssd(a, b, x, y, d[0], d[1]);
                if c < best_cost {
                    best_cost = c;
                    best = d;
                }
            }
        }
        best
    }
}

fn median3(d: &[[i32; 2]], w: usize, h: usize) -> Vec<[i32; 2]> {
    let mut out = vec![[0, 0]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut us = [0i32; 9];
            let mut vs = [0i32; 9];
            let mut k = 0;
            for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    us[k] = d[yy * w + xx][0];
                    vs[k] = d[yy * w + xx][1];
                    k += 1;
                }
            }
            us[..k].sort_unstable();
            vs[..k].sort_unstable();
            out[y * w + x] = [us[k / 2], vs[k / 2]];
        }
    }
    out
}

/// Vertex offset of the parabola through three equally spaced costs.
fn parabolic(cm: f64, c0: f64, cp: f64) -> f64 {
    let denom = cm - 2.0 * c0 + cp;
    if denom <= 1e-12 {
        return 0.0;
    }
    (0.5 * (cm - cp) / denom).clamp(-0.5, 0.5)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn texture(x: f64, y: f64) -> f64 {
        // Smooth, aperiodic enough over a few hundred pixels.
        100.0
            + 40.0 * (0.31 * x + 0.17 * y).sin()
            + 30.0 * (0.23 * y - 0.11 * x).cos()
            + 25.0 * (0.07 * x * 0.9 + 0.41 * y).sin() * (0.19 * x).cos()
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let img = GrayImage::from_fn(48, 40, |x, y| texture(x as f64, y as f64) as f32);
        let flow = estimate_flow(&img, &img).unwrap();
        assert!(flow.u.iter().chain(&flow.v).all(|&c| c == 0.0));
    }

    #[test]
    fn integer_translation_recovered() {
        let a = GrayImage::from_fn(96, 72, |x, y| texture(x as f64, y as f64) as f32);
        let b = GrayImage::from_fn(96, 72, |x, y| texture(x as f64 - 3.0, y as f64) as f32);
        let flow = estimate_flow(&a, &b).unwrap();
        for y in 12..60 {
            for x in 12..80 {
                let d = flow.at(x, y);
                assert!(
                    (d[0] - 3.0).abs() <= 0.5 && d[1].abs() <= 0.5,
                    "({x},{y}) -> {d:?}"
                );
            }
        }
    }

    #[test]
    fn rotation_field_endpoint_error_below_one_pixel() {
        let (w, h) = (120usize, 96usize);
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let theta = 2.0f64.to_radians();
        let (c, s) = (theta.cos(), theta.sin());
        let a = GrayImage::from_fn(w, h, |x, y| texture(x as f64, y as f64) as f32);
        // b(q) = a(R⁻¹ q): content rotates by theta about the center.
        let b = GrayImage::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            texture(cx + c * dx + s * dy, cy - s * dx + c * dy) as f32
        });
        let truth = FlowField::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            [c * dx - s * dy - dx, s * dx + c * dy - dy]
        });
        let flow = estimate_flow(&a, &b).unwrap();
        let epe = flow.mean_endpoint_error(&truth, 10).unwrap();
        assert!(epe < 1.0, "endpoint error {epe}");
    }

    #[test]
    fn mismatched_sizes_rejected() {
        let a = GrayImage::filled(10, 10, 0.0);
        let b = GrayImage::filled(11, 10, 0.0);
        assert!(matches!(estimate_flow(&a, &b), Err(Error::Shape(_))));
    }
}

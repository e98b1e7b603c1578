//! Grayscale frames and dense flow fields, plus the resampling helpers the
//! multi-scale pipeline needs.

use crate::error::{Error, Result};

/// Row-major single-channel image with `f32` intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "image {width}x{height} needs {} pixels, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        GrayImage {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Pixel lookup with border replication.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn bilinear(&self, x: f64, y: f64) -> f64 {
        bilinear(&self.data, self.width, self.height, x, y)
    }

    /// Resamples by `factor`, output size rounded; pixel centers map through
    /// [`to_full`].
    pub fn rescale(&self, factor: f64) -> GrayImage {
        if factor == 1.0 {
            return self.clone();
        }
        let (w, h) = scaled_size(self.width, self.height, factor);
        GrayImage::from_fn(w, h, |x, y| {
            let p = to_full([x as f64, y as f64], factor);
            self.bilinear(p[0], p[1]) as f32
        })
    }

    /// Separable [1 2 1]/4 smoothing with replicated borders.
    pub fn blur121(&self) -> GrayImage {
        let (w, h) = (self.width, self.height);
        let rows = GrayImage::from_fn(w, h, |x, y| {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            0.25 * self.get(xm, y) + 0.5 * self.get(x, y) + 0.25 * self.get(xp, y)
        });
        GrayImage::from_fn(w, h, |x, y| {
            let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
            0.25 * rows.get(x, ym) + 0.5 * rows.get(x, y) + 0.25 * rows.get(x, yp)
        })
    }

    /// 2×2 box average; odd trailing rows/columns are dropped.
    pub fn half(&self) -> GrayImage {
        let (w, h) = (self.width / 2, self.height / 2);
        GrayImage::from_fn(w, h, |x, y| {
            let (x2, y2) = (2 * x, 2 * y);
            0.25 * (self.get(x2, y2)
                + self.get(x2 + 1, y2)
                + self.get(x2, y2 + 1)
                + self.get(x2 + 1, y2 + 1))
        })
    }

    /// Central-difference gradients with replicated borders.
    pub fn gradients(&self) -> (Vec<f32>, Vec<f32>) {
        gradients(&self.data, self.width, self.height)
    }

    /// Smallest eigenvalue of the 3×3-summed structure tensor at each pixel.
    pub fn min_eigenvalue_map(&self) -> Vec<f64> {
        let (gx, gy) = self.gradients();
        let (w, h) = (self.width, self.height);
        let mut xx = vec![0.0f64; w * h];
        let mut xy = vec![0.0f64; w * h];
        let mut yy = vec![0.0f64; w * h];
        for i in 0..w * h {
            let (a, b) = (gx[i] as f64, gy[i] as f64);
            xx[i] = a * a;
            xy[i] = a * b;
            yy[i] = b * b;
        }
        let (sxx, sxy, syy) = (box3(&xx, w, h), box3(&xy, w, h), box3(&yy, w, h));
        (0..w * h)
            .map(|i| {
                let half_tr = 0.5 * (sxx[i] + syy[i]);
                let d = 0.5 * (sxx[i] - syy[i]);
                (half_tr - (d * d + sxy[i] * sxy[i]).sqrt()).max(0.0)
            })
            .collect()
    }
}

/// Dense displacement field; `(u, v)` in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    pub u: Vec<f32>,
    pub v: Vec<f32>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, u: Vec<f32>, v: Vec<f32>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(Error::Shape(format!(
                "flow components do not match {width}x{height}"
            )));
        }
        if u.iter().chain(&v).any(|c| !c.is_finite()) {
            return Err(Error::Range("flow contains non-finite values".into()));
        }
        Ok(FlowField {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [f64; 2],
    ) -> Self {
        let mut u = Vec::with_capacity(width * height);
        let mut v = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let d = f(x, y);
                u.push(d[0] as f32);
                v.push(d[1] as f32);
            }
        }
        FlowField {
            width,
            height,
            u,
            v,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> [f32; 2] {
        let i = y * self.width + x;
        [self.u[i], self.v[i]]
    }

    /// Componentwise median over the 3×3 neighbourhood (borders replicated).
    pub fn median_at(&self, x: usize, y: usize) -> [f64; 2] {
        let mut us = [0.0f32; 9];
        let mut vs = [0.0f32; 9];
        let mut k = 0;
        for dy in -1isize..=1 {
            for dx in -1isize..=1 {
                let xx = (x as isize + dx).clamp(0, self.width as isize - 1) as usize;
                let yy = (y as isize + dy).clamp(0, self.height as isize - 1) as usize;
                let i = yy * self.width + xx;
                us[k] = self.u[i];
                vs[k] = self.v[i];
                k += 1;
            }
        }
        us.sort_unstable_by(f32::total_cmp);
        vs.sort_unstable_by(f32::total_cmp);
        [us[4] as f64, vs[4] as f64]
    }

    /// Resamples to a scaled grid; displacements are scaled by the same factor.
    pub fn rescale(&self, factor: f64) -> FlowField {
        if factor == 1.0 {
            return self.clone();
        }
        let (w, h) = scaled_size(self.width, self.height, factor);
        FlowField::from_fn(w, h, |x, y| {
            let p = to_full([x as f64, y as f64], factor);
            [
                factor * bilinear(&self.u, self.width, self.height, p[0], p[1]),
                factor * bilinear(&self.v, self.width, self.height, p[0], p[1]),
            ]
        })
    }

    /// Mean endpoint error against `other` over pixels at least `margin` from the border.
    pub fn mean_endpoint_error(&self, other: &FlowField, margin: usize) -> Result<f64> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape("flow fields differ in size".into()));
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for y in margin..self.height.saturating_sub(margin) {
            for x in margin..self.width.saturating_sub(margin) {
                let (a, b) = (self.at(x, y), other.at(x, y));
                sum += ((a[0] - b[0]) as f64).hypot((a[1] - b[1]) as f64);
                n += 1;
            }
        }
        if n == 0 {
            return Err(Error::EmptyInput("no interior pixels".into()));
        }
        Ok(sum / n as f64)
    }
}

/// Output size of a rescale; at least one pixel in each direction.
pub fn scaled_size(width: usize, height: usize, factor: f64) -> (usize, usize) {
    (
        ((width as f64 * factor).round() as usize).max(1),
        ((height as f64 * factor).round() as usize).max(1),
    )
}

/// Maps a scaled-grid coordinate to full resolution (pixel centers aligned).
#[inline]
pub fn to_full(p: [f64; 2], factor: f64) -> [f64; 2] {
    [(p[0] + 0.5) / factor - 0.5, (p[1] + 0.5) / factor - 0.5]
}

#[inline]
pub fn to_scaled(p: [f64; 2], factor: f64) -> [f64; 2] {
    [(p[0] + 0.5) * factor - 0.5, (p[1] + 0.5) * factor - 0.5]
}

fn bilinear(data: &[f32], w: usize, h: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let p = |xx: usize, yy: usize| data[yy * w + xx] as f64;
    (1.0 - fy) * ((1.0 - fx) * p(x0, y0) + fx * p(x1, y0))
        + fy * ((1.0 - fx) * p(x0, y1) + fx * p(x1, y1))
}

pub(crate) fn gradients(data: &[f32], w: usize, h: usize) -> (Vec<f32>, Vec<f32>) {
    let mut gx = vec![0.0f32; w * h];
    let mut gy = vec![0.0f32; w * h];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            gx[y * w + x] = 0.5 * (data[y * w + xp] - data[y * w + xm]);
            gy[y * w + x] = 0.5 * (data[yp * w + x] - data[ym * w + x]);
        }
    }
    (gx, gy)
}

fn box3(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut rows = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let (xm, xp) = (x.saturating_sub(1), (x + 1).min(w - 1));
            rows[y * w + x] = src[y * w + xm] + src[y * w + x] + src[y * w + xp];
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        let (ym, yp) = (y.saturating_sub(1), (y + 1).min(h - 1));
        for x in 0..w {
            out[y * w + x] = rows[ym * w + x] + rows[y * w + x] + rows[yp * w + x];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinate_maps_are_inverse() {
        let f = std::f64::consts::FRAC_1_SQRT_2;
        let p = [12.25, 7.5];
        let q = to_full(to_scaled(p, f), f);
        assert!((p[0] - q[0]).abs() < 1e-12 && (p[1] - q[1]).abs() < 1e-12);
    }

    #[test]
    fn rescale_of_linear_ramp_stays_linear() {
        let img = GrayImage::from_fn(64, 48, |x, y| (2 * x + y) as f32);
        let f = 0.5;
        let small = img.rescale(f);
        assert_eq!((small.width(), small.height()), (32, 24));
        for y in 2..20 {
            for x in 2..28 {
                let p = to_full([x as f64, y as f64], f);
                let expect = 2.0 * p[0] + p[1];
                assert!((small.get(x, y) as f64 - expect).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn flow_rescale_scales_displacements() {
        let flow = FlowField::from_fn(40, 30, |_, _| [2.0, -1.0]);
        let s = flow.rescale(0.5);
        assert_eq!(s.at(5, 5), [1.0, -0.5]);
    }

    #[test]
    fn median_ignores_single_outlier() {
        let mut flow = FlowField::zeros(5, 5);
        flow.u[2 * 5 + 2] = 100.0;
        assert_eq!(flow.median_at(2, 2), [0.0, 0.0]);
    }

    #[test]
    fn min_eigenvalue_zero_on_flat_and_edges() {
        let flat = GrayImage::filled(10, 10, 3.0);
        assert!(flat.min_eigenvalue_map().iter().all(|&e| e == 0.0));
        let edge = GrayImage::from_fn(10, 10, |x, _| if x < 5 { 0.0 } else { 1.0 });
        assert!(edge.min_eigenvalue_map().iter().all(|&e| e.abs() < 1e-12));
        let corner = GrayImage::from_fn(10, 10, |x, y| if x < 5 && y < 5 { 1.0 } else { 0.0 });
        assert!(corner.min_eigenvalue_map()[4 * 10 + 4] > 0.0);
    }
}

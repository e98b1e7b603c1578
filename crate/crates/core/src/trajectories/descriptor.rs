//! Trajectory-shape, HOG, HOF and MBH descriptors of the spatio-temporal
//! tube around a tracked point.
//!
//! Every pixel contributes to exactly one orientation bin (no interpolation),
//! weighted by its magnitude. Bins are centred on their nominal angle, so bin 0
//! covers horizontal gradients (HOG) and rightward motion (HOF, MBH).

use std::f64::consts::PI;

use super::image::{gradients, FlowField, GrayImage};
use super::TrajectoryParams;
use crate::error::{Error, Result};

pub const SHAPE_DIMS: usize = 30;
pub const HOG_DIMS: usize = 96;
pub const HOF_DIMS: usize = 108;
pub const MBH_DIMS: usize = 192;
pub const DESCRIPTOR_DIMS: usize = SHAPE_DIMS + HOG_DIMS + HOF_DIMS + MBH_DIMS;

pub const HOG_BINS: usize = 8;
pub const HOF_BINS: usize = 9;
pub const MBH_BINS: usize = 8;

/// Index ranges of the four descriptor blocks for a given parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub shape: (usize, usize),
    pub hog: (usize, usize),
    pub hof: (usize, usize),
    pub mbh: (usize, usize),
}

impl Layout {
    pub fn new(params: &TrajectoryParams) -> Self {
        let cells = params.cells_xy * params.cells_xy * params.cells_t;
        let shape = 2 * params.length;
        let hog = cells * HOG_BINS;
        let hof = cells * HOF_BINS;
        let mbh = 2 * cells * MBH_BINS;
        Layout {
            shape: (0, shape),
            hog: (shape, shape + hog),
            hof: (shape + hog, shape + hog + hof),
            mbh: (shape + hog + hof, shape + hog + hof + mbh),
        }
    }

    pub fn dims(&self) -> usize {
        self.mbh.1
    }
}

#[derive(Debug, Clone, Default)]
struct Binned {
    bin: Vec<u8>,
    weight: Vec<f32>,
}

/// Per-pixel orientation bins and weights for one frame at one scale.
#[derive(Debug, Clone)]
pub struct FrameFeatures {
    width: usize,
    height: usize,
    hog: Binned,
    hof: Binned,
    mbhx: Binned,
    mbhy: Binned,
}

#[inline]
fn unsigned_bin(gx: f64, gy: f64, bins: usize) -> usize {
    let mut a = gy.atan2(gx);
    if a < 0.0 {
        a += PI;
    }
    ((a / (PI / bins as f64) + 0.5).floor() as usize) % bins
}

#[inline]
fn signed_bin(dx: f64, dy: f64, bins: usize) -> usize {
    let mut a = dy.atan2(dx);
    if a < 0.0 {
        a += 2.0 * PI;
    }
    ((a / (2.0 * PI / bins as f64) + 0.5).floor() as usize) % bins
}

fn bin_gradients(gx: &[f32], gy: &[f32], signed: bool) -> Binned {
    let mut out = Binned {
        bin: Vec::with_capacity(gx.len()),
        weight: Vec::with_capacity(gx.len()),
    };
    for (&a, &b) in gx.iter().zip(gy) {
        let (a, b) = (a as f64, b as f64);
        let mag = a.hypot(b);
        let bin = if mag == 0.0 {
            0
        } else if signed {
            signed_bin(a, b, MBH_BINS)
        } else {
            unsigned_bin(a, b, HOG_BINS)
        };
        out.bin.push(bin as u8);
        out.weight.push(mag as f32);
    }
    out
}

impl FrameFeatures {
    /// `flow` is the field from this frame to the next one.
    pub fn compute(frame: &GrayImage, flow: &FlowField, hof_zero_threshold: f64) -> Result<Self> {
        let (w, h) = (frame.width(), frame.height());
        if flow.width() != w || flow.height() != h {
            return Err(Error::Shape(format!(
                "flow {}x{} does not match frame {w}x{h}",
                flow.width(),
                flow.height()
            )));
        }
        let (gx, gy) = frame.gradients();
        let hog = bin_gradients(&gx, &gy, false);

        let mut hof = Binned::default();
        for (&u, &v) in flow.u.iter().zip(&flow.v) {
            let (u, v) = (u as f64, v as f64);
            let mag = u.hypot(v);
            if mag < hof_zero_threshold {
                hof.bin.push((HOF_BINS - 1) as u8);
                hof.weight.push(1.0);
            } else {
                hof.bin.push(signed_bin(u, v, HOF_BINS - 1) as u8);
                hof.weight.push(mag as f32);
            }
        }

        let (ux, uy) = gradients(&flow.u, w, h);
        let (vx, vy) = gradients(&flow.v, w, h);
        Ok(FrameFeatures {
            width: w,
            height: h,
            hog,
            hof,
            mbhx: bin_gradients(&ux, &uy, true),
            mbhy: bin_gradients(&vx, &vy, true),
        })
    }
}

/// Displacements normalised by their summed magnitude; `None` for a static track.
pub fn shape_descriptor(points: &[[f64; 2]]) -> Option<Vec<f64>> {
    let steps: Vec<[f64; 2]> = points
        .windows(2)
        .map(|p| [p[1][0] - p[0][0], p[1][1] - p[0][1]])
        .collect();
    let total: f64 = steps.iter().map(|d| d[0].hypot(d[1])).sum();
    if !(total > 0.0) {
        return None;
    }
    Some(
        steps
            .iter()
            .flat_map(|d| [d[0] / total, d[1] / total])
            .collect(),
    )
}

fn l2_normalize_cells(hist: &mut [f64], bins: usize) {
    for cell in hist.chunks_mut(bins) {
        let n = cell.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 0.0 {
            cell.iter_mut().for_each(|v| *v /= n);
        }
    }
}

/// Full descriptor from scale-space points and the features of the first
/// `params.length` frames of the track.
pub fn describe_tube(
    points: &[[f64; 2]],
    features: &[&FrameFeatures],
    params: &TrajectoryParams,
) -> Vec<f32> {
    let l = params.length;
    assert_eq!(points.len(), l + 1, "track must have L+1 points");
    assert!(features.len() >= l, "need features for L frames");
    let shape = shape_descriptor(points).expect("pruned tracks are never static");

    let nxy = params.cells_xy;
    let nt = params.cells_t;
    let cells = nxy * nxy * nt;
    let mut hog = vec![0.0f64; cells * HOG_BINS];
    let mut hof = vec![0.0f64; cells * HOF_BINS];
    let mut mbhx = vec![0.0f64; cells * MBH_BINS];
    let mut mbhy = vec![0.0f64; cells * MBH_BINS];

    let n = params.patch as isize;
    for t in 0..l {
        let f = features[t];
        let ct = t * nt / l;
        let x0 = points[t][0].round() as isize - n / 2;
        let y0 = points[t][1].round() as isize - n / 2;
        for dy in 0..n {
            let y = y0 + dy;
            if y < 0 || y >= f.height as isize {
                continue;
            }
            let cy = dy as usize * nxy / params.patch;
            for dx in 0..n {
                let x = x0 + dx;
                if x < 0 || x >= f.width as isize {
                    continue;
                }
                let cx = dx as usize * nxy / params.patch;
                let cell = (ct * nxy + cy) * nxy + cx;
                let i = y as usize * f.width + x as usize;
                hog[cell * HOG_BINS + f.hog.bin[i] as usize] += f.hog.weight[i] as f64;
                hof[cell * HOF_BINS + f.hof.bin[i] as usize] += f.hof.weight[i] as f64;
                mbhx[cell * MBH_BINS + f.mbhx.bin[i] as usize] += f.mbhx.weight[i] as f64;
                mbhy[cell * MBH_BINS + f.mbhy.bin[i] as usize] += f.mbhy.weight[i] as f64;
            }
        }
    }
    l2_normalize_cells(&mut hog, HOG_BINS);
    l2_normalize_cells(&mut hof, HOF_BINS);
    l2_normalize_cells(&mut mbhx, MBH_BINS);
    l2_normalize_cells(&mut mbhy, MBH_BINS);

    shape
        .into_iter()
        .chain(hog)
        .chain(hof)
        .chain(mbhx)
        .chain(mbhy)
        .map(|v| v as f32)
        .collect()
}

/// Describes a track given its own frames and flows (`frames[t]`, `flows[t]`
/// for `t < L`), all at the scale the points are expressed in.
pub fn describe(
    points: &[[f64; 2]],
    frames: &[GrayImage],
    flows: &[FlowField],
    params: &TrajectoryParams,
) -> Result<Vec<f32>> {
    let l = params.length;
    if points.len() != l + 1 || frames.len() < l || flows.len() < l {
        return Err(Error::Shape(format!(
            "describe needs {} points and {l} frames/flows, got {}/{}/{}",
            l + 1,
            points.len(),
            frames.len(),
            flows.len()
        )));
    }
    if shape_descriptor(points).is_none() {
        return Err(Error::Degenerate(
            "trajectory has zero total displacement".into(),
        ));
    }
    let feats = frames[..l]
        .iter()
        .zip(&flows[..l])
        .map(|(f, fl)| FrameFeatures::compute(f, fl, params.hof_zero_threshold))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&FrameFeatures> = feats.iter().collect();
    Ok(describe_tube(points, &refs, params))
}

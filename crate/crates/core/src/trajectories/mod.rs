//! Dense trajectories: multi-scale grid sampling, median-filtered flow
//! tracking over `L` frames, static/erratic pruning and tube descriptors.

pub mod descriptor;
pub mod flow;
pub mod image;
pub mod io;

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use descriptor::{describe, Layout, DESCRIPTOR_DIMS, HOF_DIMS, HOG_DIMS, MBH_DIMS, SHAPE_DIMS};
pub use flow::{estimate_flow, BlockMatching, FlowEstimator};
pub use image::{FlowField, GrayImage};
pub use io::{load_trajectories, save_trajectories};

use crate::error::{Error, Result};
use descriptor::FrameFeatures;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrajectoryParams {
    /// Grid stride `W` in pixels.
    pub stride: usize,
    /// Track length `L` in frames.
    pub length: usize,
    /// Tube side `N` in pixels.
    pub patch: usize,
    pub cells_xy: usize,
    pub cells_t: usize,
    pub scales: usize,
    pub scale_factor: f64,
    /// Static-track threshold on the positional standard deviation.
    pub min_flow_var: f64,
    /// Largest allowed single-step displacement.
    pub max_displacement: f64,
    /// Erratic if one step exceeds this fraction of the path length.
    pub erratic_ratio: f64,
    pub hof_zero_threshold: f64,
    /// Texture gate, relative to the strongest corner response in the frame.
    pub texture_quality: f64,
    /// Scales whose short side falls below this are skipped.
    pub min_scale_size: usize,
}

impl Default for TrajectoryParams {
    fn default() -> Self {
        TrajectoryParams {
            stride: 5,
            length: 15,
            patch: 32,
            cells_xy: 2,
            cells_t: 3,
            scales: 8,
            scale_factor: std::f64::consts::FRAC_1_SQRT_2,
            min_flow_var: 3f64.sqrt(),
            max_displacement: 50.0,
            erratic_ratio: 0.7,
            hof_zero_threshold: 0.4,
            texture_quality: 0.001,
            min_scale_size: 32,
        }
    }
}

impl TrajectoryParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("stride", self.stride),
            ("length", self.length),
            ("patch", self.patch),
            ("cells_xy", self.cells_xy),
            ("cells_t", self.cells_t),
            ("scales", self.scales),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !self.length.is_multiple_of(self.cells_t) || !self.patch.is_multiple_of(self.cells_xy) {
            return Err(Error::Config("cells must evenly divide the tube".into()));
        }
        if !(self.scale_factor > 0.0 && self.scale_factor <= 1.0) {
            return Err(Error::Config("scale_factor must be in (0, 1]".into()));
        }
        if !(self.min_flow_var > 0.0 && self.max_displacement > 0.0 && self.erratic_ratio > 0.0) {
            return Err(Error::Config("pruning thresholds must be positive".into()));
        }
        if self.scales > u8::MAX as usize {
            return Err(Error::Config("too many scales".into()));
        }
        Ok(())
    }

    pub fn factor(&self, scale: usize) -> f64 {
        self.scale_factor.powi(scale as i32)
    }

    pub fn descriptor_dims(&self) -> usize {
        Layout::new(self).dims()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub start_frame: u32,
    pub scale: u8,
    /// `L+1` points in full-resolution pixels.
    pub points: Vec<[f32; 2]>,
    pub descriptor: Vec<f32>,
}

impl Trajectory {
    /// First tracked point.
    pub fn origin(&self) -> [f64; 2] {
        [self.points[0][0] as f64, self.points[0][1] as f64]
    }
}

/// Grid nodes of one scale that pass the texture gate and are at least
/// `stride` away from every point in `existing`.
pub fn sample_scale(
    frame: &GrayImage,
    existing: &[[f64; 2]],
    stride: usize,
    quality: f64,
) -> Vec<[f64; 2]> {
    let (w, h) = (frame.width(), frame.height());
    let (nx, ny) = (w / stride, h / stride);
    if nx == 0 || ny == 0 {
        return Vec::new();
    }
    let eig = frame.min_eigenvalue_map();
    let max_eig = eig.iter().copied().fold(0.0f64, f64::max);
    let threshold = quality * max_eig;

    // Occupancy buckets of side `stride`; a neighbour within `stride` can only
    // sit in the 3×3 surrounding buckets.
    let bx = w / stride + 2;
    let by = h / stride + 2;
    let mut buckets: Vec<Vec<[f64; 2]>> = vec![Vec::new(); bx * by];
    let bucket_of = |p: [f64; 2]| -> Option<(usize, usize)> {
        let (x, y) = (
            (p[0] / stride as f64).floor(),
            (p[1] / stride as f64).floor(),
        );
        (x >= -1.0 && y >= -1.0 && x < (bx - 1) as f64 && y < (by - 1) as f64)
            .then_some(((x + 1.0) as usize, (y + 1.0) as usize))
    };
    for &p in existing {
        if let Some((x, y)) = bucket_of(p) {
            buckets[y * bx + x].push(p);
        }
    }
    let r2 = (stride * stride) as f64;

    let mut out = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            let (x, y) = (i * stride + stride / 2, j * stride + stride / 2);
            if eig[y * w + x] <= threshold {
                continue;
            }
            let p = [x as f64, y as f64];
            let (cx, cy) = bucket_of(p).expect("grid node inside frame");
            let occupied = (cy.saturating_sub(1)..=(cy + 1).min(by - 1)).any(|yy| {
                (cx.saturating_sub(1)..=(cx + 1).min(bx - 1)).any(|xx| {
                    buckets[yy * bx + xx]
                        .iter()
                        .any(|q| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) < r2)
                })
            });
            if !occupied {
                out.push(p);
            }
        }
    }
    out
}

/// Samples every usable scale of `frame`. `existing` holds `(point, scale)`
/// pairs in that scale's coordinates; results use the same convention.
pub fn sample_points(
    frame: &GrayImage,
    existing: &[([f64; 2], u8)],
    params: &TrajectoryParams,
) -> Vec<([f64; 2], u8)> {
    let mut out = Vec::new();
    for s in 0..params.scales {
        let f = params.factor(s);
        let (w, h) = image::scaled_size(frame.width(), frame.height(), f);
        if w.min(h) < params.min_scale_size {
            continue;
        }
        let img = frame.rescale(f);
        let here: Vec<[f64; 2]> = existing
            .iter()
            .filter(|e| e.1 as usize == s)
            .map(|e| e.0)
            .collect();
        out.extend(
            sample_scale(&img, &here, params.stride, params.texture_quality)
                .into_iter()
                .map(|p| (p, s as u8)),
        );
    }
    out
}

/// One tracking step; `None` once the point leaves the frame.
pub fn step(p: [f64; 2], flow: &FlowField) -> Option<[f64; 2]> {
    let (w, h) = (flow.width() as f64, flow.height() as f64);
    let x = p[0].round();
    let y = p[1].round();
    if x < 0.0 || y < 0.0 || x >= w || y >= h {
        return None;
    }
    let d = flow.median_at(x as usize, y as usize);
    let q = [p[0] + d[0], p[1] + d[1]];
    (q[0] >= 0.0 && q[1] >= 0.0 && q[0] <= w - 1.0 && q[1] <= h - 1.0).then_some(q)
}

/// Follows `p` through consecutive flows; `None` if it leaves the frame.
pub fn track_point(p: [f64; 2], flows: &[FlowField]) -> Option<Vec<[f64; 2]>> {
    let mut pts = Vec::with_capacity(flows.len() + 1);
    pts.push(p);
    let mut cur = p;
    for f in flows {
        cur = step(cur, f)?;
        pts.push(cur);
    }
    Some(pts)
}

/// `true` if the track should be kept.
pub fn prune(points: &[[f64; 2]], params: &TrajectoryParams) -> bool {
    let n = points.len() as f64;
    if points.len() < 2 {
        return false;
    }
    let mx = points.iter().map(|p| p[0]).sum::<f64>() / n;
    let my = points.iter().map(|p| p[1]).sum::<f64>() / n;
    let var = points
        .iter()
        .map(|p| (p[0] - mx).powi(2) + (p[1] - my).powi(2))
        .sum::<f64>()
        / n;
    if var.sqrt() < params.min_flow_var {
        return false;
    }
    let steps: Vec<f64> = points
        .windows(2)
        .map(|p| (p[1][0] - p[0][0]).hypot(p[1][1] - p[0][1]))
        .collect();
    let total: f64 = steps.iter().sum();
    let max_step = steps.iter().copied().fold(0.0, f64::max);
    !(max_step > params.max_displacement || max_step > params.erratic_ratio * total)
}

struct Active {
    start: u32,
    points: Vec<[f64; 2]>,
}

fn extract_scale(
    frames: &[GrayImage],
    flows: &[FlowField],
    params: &TrajectoryParams,
    s: usize,
) -> Result<Vec<Trajectory>> {
    let f = params.factor(s);
    let l = params.length;
    let mut active: Vec<Active> = Vec::new();
    let mut window: VecDeque<FrameFeatures> = VecDeque::with_capacity(l + 1);
    let mut out = Vec::new();

    for (t, frame) in frames.iter().enumerate() {
        let img = frame.rescale(f);
        let existing: Vec<[f64; 2]> = active.iter().map(|a| *a.points.last().unwrap()).collect();
        for p in sample_scale(&img, &existing, params.stride, params.texture_quality) {
            active.push(Active {
                start: t as u32,
                points: vec![p],
            });
        }
        let Some(flow) = flows.get(t) else { break };
        let flow = flow.rescale(f);
        window.push_back(FrameFeatures::compute(
            &img,
            &flow,
            params.hof_zero_threshold,
        )?);
        if window.len() > l {
            window.pop_front();
        }

        let mut still = Vec::with_capacity(active.len());
        for mut a in active.drain(..) {
            let Some(q) = step(*a.points.last().unwrap(), &flow) else {
                continue;
            };
            a.points.push(q);
            if a.points.len() < l + 1 {
                still.push(a);
                continue;
            }
            if !prune(&a.points, params) {
                continue;
            }
            let feats: Vec<&FrameFeatures> = window.iter().collect();
            let descriptor = descriptor::describe_tube(&a.points, &feats, params);
            out.push(Trajectory {
                start_frame: a.start,
                scale: s as u8,
                points: a
                    .points
                    .iter()
                    .map(|&p| {
                        let q = image::to_full(p, f);
                        [q[0] as f32, q[1] as f32]
                    })
                    .collect(),
                descriptor,
            });
        }
        active = still;
    }
    Ok(out)
}

/// Full pipeline over a clip. Output is ordered by `(start_frame, scale)`,
/// then by sampling order.
pub fn extract(
    frames: &[GrayImage],
    flows: &[FlowField],
    params: &TrajectoryParams,
) -> Result<Vec<Trajectory>> {
    params.validate()?;
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    if flows.len() + 1 != frames.len() {
        return Err(Error::Shape(format!(
            "{} frames need {} flows, got {}",
            frames.len(),
            frames.len() - 1,
            flows.len()
        )));
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    if frames.iter().any(|f| f.width() != w || f.height() != h)
        || flows.iter().any(|f| f.width() != w || f.height() != h)
    {
        return Err(Error::Shape("frames and flows must share one size".into()));
    }
    let scales: Vec<usize> = (0..params.scales)
        .filter(|&s| {
            let (sw, sh) = image::scaled_size(w, h, params.factor(s));
            sw.min(sh) >= params.min_scale_size
        })
        .collect();
    let per_scale = scales
        .par_iter()
        .map(|&s| extract_scale(frames, flows, params, s))
        .collect::<Result<Vec<_>>>()?;
    let mut all: Vec<Trajectory> = per_scale.into_iter().flatten().collect();
    all.sort_by_key(|t| (t.start_frame, t.scale));
    Ok(all)
}

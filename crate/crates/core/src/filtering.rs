//! Pose-based trajectory selection, upper-body boxes and cross-contamination.
//!
//! A trajectory belongs to the target if its origin lies within `R_j·S(p)` of
//! one of the target's upper-body keypoints `p` in the frame it starts, or in
//! the frame before or after. `S` is the homography-derived pixel scale at the
//! keypoint, so radii are expressed in pixels at the reference position.

use std::io::Write;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Homography, DEFAULT_DELTA};
use crate::ingest::{body25, KeypointSet};
use crate::tracking::{head_keypoint, PoseTrack};
use crate::trajectories::Trajectory;

/// The eight upper-body points used for selection. The head is the mean of
/// the detected face keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpperBodyPart {
    Head,
    Neck,
    RShoulder,
    LShoulder,
    RElbow,
    LElbow,
    RWrist,
    LWrist,
}

pub const NUM_PARTS: usize = 8;

impl UpperBodyPart {
    pub const ALL: [UpperBodyPart; NUM_PARTS] = [
        UpperBodyPart::Head,
        UpperBodyPart::Neck,
        UpperBodyPart::RShoulder,
        UpperBodyPart::LShoulder,
        UpperBodyPart::RElbow,
        UpperBodyPart::LElbow,
        UpperBodyPart::RWrist,
        UpperBodyPart::LWrist,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn locate(self, pose: &KeypointSet) -> Option<[f64; 2]> {
        let k = match self {
            UpperBodyPart::Head => return head_keypoint(pose),
            UpperBodyPart::Neck => body25::NECK,
            UpperBodyPart::RShoulder => body25::R_SHOULDER,
            UpperBodyPart::LShoulder => body25::L_SHOULDER,
            UpperBodyPart::RElbow => body25::R_ELBOW,
            UpperBodyPart::LElbow => body25::L_ELBOW,
            UpperBodyPart::RWrist => body25::R_WRIST,
            UpperBodyPart::LWrist => body25::L_WRIST,
        };
        pose.keypoint(k)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeypointSubset {
    UpperBody,
    /// Head and both wrists.
    HandsAndHead,
    Custom(Vec<UpperBodyPart>),
}

impl KeypointSubset {
    pub fn mask(&self) -> [bool; NUM_PARTS] {
        let mut m = [false; NUM_PARTS];
        match self {
            KeypointSubset::UpperBody => m = [true; NUM_PARTS],
            KeypointSubset::HandsAndHead => {
                for p in [
                    UpperBodyPart::Head,
                    UpperBodyPart::RWrist,
                    UpperBodyPart::LWrist,
                ] {
                    m[p.index()] = true;
                }
            }
            KeypointSubset::Custom(parts) => {
                for p in parts {
                    m[p.index()] = true;
                }
            }
        }
        m
    }

    pub fn name(&self) -> String {
        match self {
            KeypointSubset::UpperBody => "UpperBody".into(),
            KeypointSubset::HandsAndHead => "HandsAndHead".into(),
            KeypointSubset::Custom(parts) => {
                let names: Vec<String> = parts.iter().map(|p| format!("{p:?}")).collect();
                format!("Custom({})", names.join("+"))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    /// Reference-position pixel radius per part, in [`UpperBodyPart::ALL`] order.
    pub radii: [f64; NUM_PARTS],
    pub subset: KeypointSubset,
    /// Frames on either side of the start frame that are also compared.
    pub frame_window: u32,
}

impl FilterConfig {
    pub fn uniform(radius: f64, subset: KeypointSubset) -> Self {
        FilterConfig {
            radii: [radius; NUM_PARTS],
            subset,
            frame_window: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radii.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
            return Err(Error::Config("filter radii must be positive".into()));
        }
        if !self.subset.mask().iter().any(|&b| b) {
            return Err(Error::Config("keypoint subset is empty".into()));
        }
        Ok(())
    }
}

/// Part positions and pixel scales of one pose.
#[derive(Debug, Clone, Copy)]
struct PartScales {
    pos: [Option<[f64; 2]>; NUM_PARTS],
    scale: [f64; NUM_PARTS],
}

fn part_scales(pose: &KeypointSet, h: &Homography) -> PartScales {
    let mut pos = [None; NUM_PARTS];
    let mut scale = [0.0; NUM_PARTS];
    for part in UpperBodyPart::ALL {
        let i = part.index();
        if let Some(p) = part.locate(pose) {
            // Keypoints at or past the horizon cannot be scaled; they never match.
            if let Ok(s) = h.scale_factor(p, DEFAULT_DELTA) {
                pos[i] = Some(p);
                scale[i] = s;
            }
        }
    }
    PartScales { pos, scale }
}

fn track_scales(track: &PoseTrack, h: &Homography) -> Vec<PartScales> {
    track.poses.iter().map(|p| part_scales(p, h)).collect()
}

fn window_frames(track: &PoseTrack, n: u32, window: u32) -> impl Iterator<Item = usize> + '_ {
    let lo = n.saturating_sub(window);
    (lo..=n.saturating_add(window))
        .filter_map(move |m| m.checked_sub(track.start_frame).map(|i| i as usize))
        .filter(move |&i| i < track.poses.len())
}

/// Indices (ascending) of the trajectories selected for `track`.
pub fn select_indices(
    trajs: &[Trajectory],
    track: &PoseTrack,
    h: &Homography,
    cfg: &FilterConfig,
) -> Vec<usize> {
    let mask = cfg.subset.mask();
    let scales = track_scales(track, h);
    trajs
        .iter()
        .enumerate()
        .filter(|(_, t)| {
            let o = t.origin();
            window_frames(track, t.start_frame, cfg.frame_window).any(|m| {
                let ps = &scales[m];
                (0..NUM_PARTS).any(|j| {
                    mask[j]
                        && ps.pos[j].is_some_and(|p| {
                            (o[0] - p[0]).hypot(o[1] - p[1]) < cfg.radii[j] * ps.scale[j]
                        })
                })
            })
        })
        .map(|(i, _)| i)
        .collect()
}

pub fn select_trajectories<'a>(
    trajs: &'a [Trajectory],
    track: &PoseTrack,
    h: &Homography,
    cfg: &FilterConfig,
) -> Vec<&'a Trajectory> {
    select_indices(trajs, track, h, cfg)
        .into_iter()
        .map(|i| &trajs[i])
        .collect()
}

/// Per trajectory and part, the smallest scale-normalised distance
/// `‖o − p‖ / S(p)` over the comparison window (`∞` if never observed).
///
/// Lets a whole radius grid be evaluated without touching poses again;
/// `d < R` agrees with the direct test except within rounding of the boundary.
pub fn part_distances(
    trajs: &[Trajectory],
    track: &PoseTrack,
    h: &Homography,
    window: u32,
) -> Vec<[f64; NUM_PARTS]> {
    let scales = track_scales(track, h);
    trajs
        .iter()
        .map(|t| {
            let o = t.origin();
            let mut best = [f64::INFINITY; NUM_PARTS];
            for m in window_frames(track, t.start_frame, window) {
                let ps = &scales[m];
                for j in 0..NUM_PARTS {
                    if let Some(p) = ps.pos[j] {
                        let d = (o[0] - p[0]).hypot(o[1] - p[1]) / ps.scale[j];
                        best[j] = best[j].min(d);
                    }
                }
            }
            best
        })
        .collect()
}

/// Selection from precomputed [`part_distances`].
pub fn select_by_distance(
    dist: &[f64; NUM_PARTS],
    radii: &[f64; NUM_PARTS],
    mask: &[bool; NUM_PARTS],
) -> bool {
    (0..NUM_PARTS).any(|j| mask[j] && dist[j] < radii[j])
}

/// Axis-aligned box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn area(&self) -> f64 {
        (self.x1 - self.x0).max(0.0) * (self.y1 - self.y0).max(0.0)
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let w = self.x1.min(other.x1) - self.x0.max(other.x0);
        let h = self.y1.min(other.y1) - self.y0.max(other.y0);
        w.max(0.0) * h.max(0.0)
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.x0 + self.x1), 0.5 * (self.y0 + self.y1)]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.x0 && p[0] <= self.x1 && p[1] >= self.y0 && p[1] <= self.y1
    }
}

/// Box over the detected upper-body parts, padded by `pad_ground` meters
/// converted to pixels at the box center.
pub fn upper_body_bounding_box(
    pose: &KeypointSet,
    h: &Homography,
    pad_ground: f64,
) -> Result<BBox> {
    let pts: Vec<[f64; 2]> = UpperBodyPart::ALL
        .iter()
        .filter_map(|p| p.locate(pose))
        .collect();
    if pts.is_empty() {
        return Err(Error::MissingData(format!(
            "no upper-body keypoint detected in frame {}",
            pose.frame
        )));
    }
    let mut b = BBox {
        x0: f64::INFINITY,
        y0: f64::INFINITY,
        x1: f64::NEG_INFINITY,
        y1: f64::NEG_INFINITY,
    };
    for p in &pts {
        b.x0 = b.x0.min(p[0]);
        b.y0 = b.y0.min(p[1]);
        b.x1 = b.x1.max(p[0]);
        b.y1 = b.y1.max(p[1]);
    }
    if pad_ground != 0.0 {
        let pad = pad_ground * h.pixels_per_meter(b.center(), DEFAULT_DELTA)?;
        b = BBox {
            x0: b.x0 - pad,
            y0: b.y0 - pad,
            x1: b.x1 + pad,
            y1: b.y1 + pad,
        };
    }
    Ok(b)
}

/// Summed intersection of the other boxes with `target`, over its area.
pub fn contamination_frame(target: &BBox, others: &[BBox]) -> Result<f64> {
    let area = target.area();
    if !(area > 0.0) {
        return Err(Error::Degenerate("target box has zero area".into()));
    }
    Ok(others.iter().map(|o| target.intersection(o)).sum::<f64>() / area)
}

/// Lower median; `None` for an empty slice.
pub fn lower_median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    Some(v[(v.len() - 1) / 2])
}

/// Median per-frame contamination of `target` over `frames`. Frames where the
/// target box is undefined (or degenerate) are skipped.
pub fn contamination_segment(
    target: &PoseTrack,
    frames: Range<u32>,
    all_tracks: &[PoseTrack],
    h: &Homography,
    pad_ground: f64,
) -> Result<f64> {
    let mut scores = Vec::new();
    for f in frames.clone() {
        let Some(pose) = target.pose_at(f) else {
            continue;
        };
        let Ok(tb) = upper_body_bounding_box(pose, h, pad_ground) else {
            continue;
        };
        let others: Vec<BBox> = all_tracks
            .iter()
            .filter(|t| t.track_id != target.track_id)
            .filter_map(|t| t.pose_at(f))
            .filter_map(|p| upper_body_bounding_box(p, h, pad_ground).ok())
            .collect();
        if let Ok(c) = contamination_frame(&tb, &others) {
            scores.push(c);
        }
    }
    lower_median(&scores).ok_or_else(|| {
        Error::MissingData(format!(
            "track {} has no valid box in frames {}..{}",
            target.track_id, frames.start, frames.end
        ))
    })
}

/// Trajectories whose origin lies inside the target's padded upper-body box
/// in their start frame: the unfiltered per-person baseline.
pub fn select_in_box(
    trajs: &[Trajectory],
    track: &PoseTrack,
    h: &Homography,
    pad_ground: f64,
) -> Vec<usize> {
    let mut cache: Option<(u32, Option<BBox>)> = None;
    let mut out = Vec::new();
    for (i, t) in trajs.iter().enumerate() {
        let b = match cache {
            Some((f, b)) if f == t.start_frame => b,
            _ => {
                let b = track
                    .pose_at(t.start_frame)
                    .and_then(|p| upper_body_bounding_box(p, h, pad_ground).ok());
                cache = Some((t.start_frame, b));
                b
            }
        };
        if b.is_some_and(|b| b.contains(t.origin())) {
            out.push(i);
        }
    }
    out
}

/// Index range of trajectories starting in `frames`, for input sorted by start frame.
pub fn start_range(trajs: &[Trajectory], frames: Range<u32>) -> Range<usize> {
    let lo = trajs.partition_point(|t| t.start_frame < frames.start);
    let hi = trajs.partition_point(|t| t.start_frame < frames.end);
    lo..hi.max(lo)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReportRow {
    pub segment_id: String,
    pub n_total: usize,
    pub n_selected: usize,
    pub contamination: f64,
    pub subset: String,
}

pub fn write_filter_report<W: Write>(out: &mut W, rows: &[FilterReportRow]) -> Result<()> {
    let io = |e| Error::io("<filter report>", e);
    writeln!(out, "segment_id,n_total,n_selected,contamination,subset").map_err(io)?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.segment_id, r.n_total, r.n_selected, r.contamination, r.subset
        )
        .map_err(io)?;
    }
    Ok(())
}

//! Frame-to-frame association of detected skeletons into pose tracks.
//!
//! Each frame's detections are matched to the heads of recent tracks by
//! optimal assignment on chest-keypoint distance. Skipped frames inside a
//! track are filled by linear interpolation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::assignment;
use crate::error::{Error, Result};
use crate::ingest::{body25, Keypoint, KeypointSet, PoseFrames, NUM_KEYPOINTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    /// Maximum chest distance (pixels) for a detection to extend a track.
    pub d_th: f64,
    /// Tracks whose last pose is `r_th` or more frames old are closed.
    pub r_th: u32,
    #[serde(default = "default_chest")]
    pub chest_index: usize,
}

fn default_chest() -> usize {
    body25::NECK
}

impl TrackerConfig {
    /// Staleness threshold of one second of video.
    pub fn for_fps(d_th: f64, fps: f64) -> Self {
        TrackerConfig {
            d_th,
            r_th: (fps.round() as u32).max(1),
            chest_index: body25::NECK,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d_th > 0.0) {
            return Err(Error::Config(format!(
                "d_th must be positive, got {}",
                self.d_th
            )));
        }
        if self.r_th < 1 {
            return Err(Error::Config("r_th must be at least 1".into()));
        }
        if self.chest_index >= NUM_KEYPOINTS {
            return Err(Error::Config(format!(
                "chest index {} out of range",
                self.chest_index
            )));
        }
        Ok(())
    }
}

/// Frame-contiguous sequence of one person's poses.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTrack {
    pub track_id: u32,
    pub start_frame: u32,
    pub poses: Vec<KeypointSet>,
    pub interpolated: Vec<bool>,
}

impl PoseTrack {
    /// Builds a track from consecutive, non-interpolated poses.
    pub fn from_poses(track_id: u32, poses: Vec<KeypointSet>) -> Self {
        let start_frame = poses.first().map_or(0, |p| p.frame);
        let interpolated = vec![false; poses.len()];
        PoseTrack {
            track_id,
            start_frame,
            poses,
            interpolated,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn end_frame(&self) -> u32 {
        self.start_frame + self.poses.len() as u32 - 1
    }

    pub fn pose_at(&self, frame: u32) -> Option<&KeypointSet> {
        frame
            .checked_sub(self.start_frame)
            .and_then(|i| self.poses.get(i as usize))
    }

    /// Splits so the first part ends at `frame - 1`; the second part gets `new_id`.
    pub fn split_at(&self, frame: u32, new_id: u32) -> Result<(PoseTrack, PoseTrack)> {
        if frame <= self.start_frame || frame > self.end_frame() {
            return Err(Error::Range(format!(
                "split frame {frame} outside ({}, {}]",
                self.start_frame,
                self.end_frame()
            )));
        }
        let cut = (frame - self.start_frame) as usize;
        let first = PoseTrack {
            track_id: self.track_id,
            start_frame: self.start_frame,
            poses: self.poses[..cut].to_vec(),
            interpolated: self.interpolated[..cut].to_vec(),
        };
        let second = PoseTrack {
            track_id: new_id,
            start_frame: frame,
            poses: self.poses[cut..].to_vec(),
            interpolated: self.interpolated[cut..].to_vec(),
        };
        Ok((first, second))
    }

    /// Most frequent person label over observed (non-interpolated) poses.
    /// Ties go to the lexicographically smallest label.
    pub fn majority_person(&self) -> Option<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for (pose, &interp) in self.poses.iter().zip(&self.interpolated) {
            if let (Some(p), false) = (pose.person.as_deref(), interp) {
                *counts.entry(p).or_default() += 1;
            }
        }
        let best = counts.values().copied().max()?;
        counts
            .into_iter()
            .find(|&(_, c)| c == best)
            .map(|(p, _)| p.to_string())
    }
}

/// Euclidean chest distance; `None` when either chest is undetected.
pub fn pose_distance(a: &KeypointSet, b: &KeypointSet, chest_index: usize) -> Option<f64> {
    let pa = a.keypoint(chest_index)?;
    let pb = b.keypoint(chest_index)?;
    Some((pa[0] - pb[0]).hypot(pa[1] - pb[1]))
}

/// Mean of the detected nose, eye and ear keypoints.
pub fn head_keypoint(pose: &KeypointSet) -> Option<[f64; 2]> {
    let mut sum = [0.0, 0.0];
    let mut n = 0usize;
    for &i in &body25::HEAD_PARTS {
        if let Some(p) = pose.keypoint(i) {
            sum[0] += p[0];
            sum[1] += p[1];
            n += 1;
        }
    }
    (n > 0).then(|| [sum[0] / n as f64, sum[1] / n as f64])
}

/// The most recent pose of an open track, as seen by the assignment step.
#[derive(Debug, Clone, Copy)]
pub struct TrackHead<'a> {
    pub track_id: u32,
    pub pose: &'a KeypointSet,
    pub last_frame: u32,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(index into heads, index into detections)`, ordered by head.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_detections: Vec<usize>,
}

impl Assignment {
    pub fn total_cost(&self, heads: &[TrackHead], detections: &[KeypointSet], chest: usize) -> f64 {
        self.matches
            .iter()
            .map(|&(h, d)| pose_distance(heads[h].pose, &detections[d], chest).unwrap_or(f64::NAN))
            .sum()
    }
}

/// Optimal matching of detections to track heads; pairs farther than `d_th`
/// (or with an undetected chest) cannot be matched.
pub fn assign_poses(
    heads: &[TrackHead],
    detections: &[KeypointSet],
    cfg: &TrackerConfig,
) -> Assignment {
    let costs: Vec<Vec<Option<f64>>> = heads
        .iter()
        .map(|h| {
            detections
                .iter()
                .map(|d| pose_distance(h.pose, d, cfg.chest_index).filter(|&c| c <= cfg.d_th))
                .collect()
        })
        .collect();
    let matches = assignment::solve_partial(&costs, detections.len());
    let mut taken = vec![false; detections.len()];
    for &(_, d) in &matches {
        taken[d] = true;
    }
    let unmatched_detections = (0..detections.len()).filter(|&d| !taken[d]).collect();
    Assignment {
        matches,
        unmatched_detections,
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrackingResult {
    pub tracks: Vec<PoseTrack>,
    /// Detections skipped because their chest keypoint was undetected.
    pub dropped_poses: usize,
}

fn interpolate(a: &KeypointSet, b: &KeypointSet, frame: u32) -> KeypointSet {
    let t = (frame - a.frame) as f64 / (b.frame - a.frame) as f64;
    let mut keypoints = [Keypoint::UNDETECTED; NUM_KEYPOINTS];
    for (out, (ka, kb)) in keypoints
        .iter_mut()
        .zip(a.keypoints.iter().zip(&b.keypoints))
    {
        if ka.is_detected() && kb.is_detected() {
            *out = Keypoint::new(
                ka.x + t * (kb.x - ka.x),
                ka.y + t * (kb.y - ka.y),
                ka.confidence.min(kb.confidence),
            );
        }
    }
    KeypointSet {
        frame,
        keypoints,
        person: a.person.clone(),
    }
}

/// Processes frames in order, growing tracks by optimal assignment.
pub fn build_tracks(frames: &PoseFrames, cfg: &TrackerConfig) -> Result<TrackingResult> {
    cfg.validate()?;
    let mut tracks: Vec<PoseTrack> = Vec::new();
    let mut dropped = 0usize;

    for (&n, poses) in frames {
        let detections: Vec<&KeypointSet> = poses
            .iter()
            .filter(|p| {
                let ok = p.keypoints[cfg.chest_index].is_detected();
                if !ok {
                    dropped += 1;
                }
                ok
            })
            .collect();
        let open: Vec<usize> = tracks
            .iter()
            .enumerate()
            .filter(|(_, t)| n > t.end_frame() && n - t.end_frame() < cfg.r_th)
            .map(|(i, _)| i)
            .collect();
        let det_owned: Vec<KeypointSet> = detections.iter().map(|&d| d.clone()).collect();
        let result = {
            let heads: Vec<TrackHead> = open
                .iter()
                .map(|&i| {
                    let t = &tracks[i];
                    TrackHead {
                        track_id: t.track_id,
                        pose: t.poses.last().expect("tracks are never empty"),
                        last_frame: t.end_frame(),
                    }
                })
                .collect();
            assign_poses(&heads, &det_owned, cfg)
        };
        for &(h, d) in &result.matches {
            let track = &mut tracks[open[h]];
            let last = track.poses.last().expect("tracks are never empty").clone();
            for m in last.frame + 1..n {
                track.poses.push(interpolate(&last, &det_owned[d], m));
                track.interpolated.push(true);
            }
            track.poses.push(det_owned[d].clone());
            track.interpolated.push(false);
        }
        for &d in &result.unmatched_detections {
            let id = tracks.len() as u32;
            tracks.push(PoseTrack::from_poses(id, vec![det_owned[d].clone()]));
        }
    }
    Ok(TrackingResult {
        tracks,
        dropped_poses: dropped,
    })
}

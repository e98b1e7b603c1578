//! Pose, acceleration and voice-activity inputs, and the fixed-length
//! segmentation of pose tracks into labelled examples.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tracking::PoseTrack;

/// Number of keypoints in a BODY25 skeleton.
pub const NUM_KEYPOINTS: usize = 25;

/// BODY25 keypoint indices used by the pipeline.
pub mod body25 {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const MID_HIP: usize = 8;
    pub const R_HIP: usize = 9;
    pub const R_KNEE: usize = 10;
    pub const R_ANKLE: usize = 11;
    pub const L_HIP: usize = 12;
    pub const L_KNEE: usize = 13;
    pub const L_ANKLE: usize = 14;
    pub const R_EYE: usize = 15;
    pub const L_EYE: usize = 16;
    pub const R_EAR: usize = 17;
    pub const L_EAR: usize = 18;
    pub const L_BIG_TOE: usize = 19;
    pub const L_SMALL_TOE: usize = 20;
    pub const L_HEEL: usize = 21;
    pub const R_BIG_TOE: usize = 22;
    pub const R_SMALL_TOE: usize = 23;
    pub const R_HEEL: usize = 24;

    /// Keypoints averaged into the single head point.
    pub const HEAD_PARTS: [usize; 5] = [NOSE, R_EYE, L_EYE, R_EAR, L_EAR];
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
}

impl Keypoint {
    pub const UNDETECTED: Keypoint = Keypoint {
        x: 0.0,
        y: 0.0,
        confidence: 0.0,
    };

    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Keypoint { x, y, confidence }
    }

    /// Position of a detected keypoint; `None` when confidence is zero.
    pub fn position(&self) -> Option<[f64; 2]> {
        (self.confidence > 0.0).then_some([self.x, self.y])
    }

    pub fn is_detected(&self) -> bool {
        self.confidence > 0.0
    }
}

/// One detected skeleton in one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet {
    pub frame: u32,
    pub keypoints: [Keypoint; NUM_KEYPOINTS],
    /// Participant identity, when the detection file carries one.
    pub person: Option<String>,
}

impl KeypointSet {
    pub fn new(frame: u32, keypoints: [Keypoint; NUM_KEYPOINTS]) -> Self {
        KeypointSet {
            frame,
            keypoints,
            person: None,
        }
    }

    pub fn undetected(frame: u32) -> Self {
        Self::new(frame, [Keypoint::UNDETECTED; NUM_KEYPOINTS])
    }

    pub fn keypoint(&self, index: usize) -> Option<[f64; 2]> {
        self.keypoints[index].position()
    }
}

/// Map from frame index to the poses detected in that frame, in file order.
pub type PoseFrames = BTreeMap<u32, Vec<KeypointSet>>;

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    frame: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    person: Option<String>,
    kp: Vec<[f64; 3]>,
}

pub(crate) fn keypoints_from_rows(rows: &[[f64; 3]]) -> Result<[Keypoint; NUM_KEYPOINTS]> {
    if rows.len() != NUM_KEYPOINTS {
        return Err(Error::Schema(format!(
            "expected {NUM_KEYPOINTS} keypoints, found {}",
            rows.len()
        )));
    }
    let mut out = [Keypoint::UNDETECTED; NUM_KEYPOINTS];
    for (slot, row) in out.iter_mut().zip(rows) {
        if !(0.0..=1.0).contains(&row[2]) {
            return Err(Error::Schema(format!(
                "confidence {} outside [0,1]",
                row[2]
            )));
        }
        if row[2] > 0.0 && !(row[0].is_finite() && row[1].is_finite()) {
            return Err(Error::Schema(
                "non-finite coordinate on a detected keypoint".into(),
            ));
        }
        *slot = Keypoint::new(row[0], row[1], row[2]);
    }
    Ok(out)
}

pub(crate) fn keypoints_to_rows(kps: &[Keypoint; NUM_KEYPOINTS]) -> Vec<[f64; 3]> {
    kps.iter().map(|k| [k.x, k.y, k.confidence]).collect()
}

fn open_lines(path: &Path) -> Result<impl Iterator<Item = (usize, std::io::Result<String>)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(BufReader::new(file)
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l)))
}

/// Reads a `poses.ndjson` file into per-frame pose lists.
pub fn load_pose_frames(path: &Path) -> Result<PoseFrames> {
    let mut frames = PoseFrames::new();
    let name = path.display().to_string();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: PoseRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: name.clone(),
            line: line_no,
            msg: e.to_string(),
        })?;
        let keypoints = keypoints_from_rows(&rec.kp).map_err(|e| match e {
            Error::Schema(msg) => Error::Schema(format!("{name}:{line_no}: {msg}")),
            other => other,
        })?;
        frames.entry(rec.frame).or_default().push(KeypointSet {
            frame: rec.frame,
            keypoints,
            person: rec.person,
        });
    }
    Ok(frames)
}

pub fn write_pose_frames<W: Write>(out: &mut W, frames: &PoseFrames) -> Result<()> {
    for poses in frames.values() {
        for pose in poses {
            let rec = PoseRecord {
                frame: pose.frame,
                person: pose.person.clone(),
                kp: keypoints_to_rows(&pose.keypoints),
            };
            serde_json::to_writer(&mut *out, &rec)?;
            out.write_all(b"\n").map_err(|e| Error::io("<poses>", e))?;
        }
    }
    Ok(())
}

pub fn save_pose_frames(path: &Path, frames: &PoseFrames) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_pose_frames(&mut w, frames)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Three-axis acceleration samples with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelSeries {
    pub sample_rate: f64,
    /// `(t, ax, ay, az)` rows.
    pub samples: Vec<[f64; 4]>,
}

impl AccelSeries {
    /// Builds a series, inferring the nominal rate from the median sample spacing.
    pub fn new(samples: Vec<[f64; 4]>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::MissingData(
                "acceleration series needs at least 2 samples".into(),
            ));
        }
        let mut gaps = Vec::with_capacity(samples.len() - 1);
        for w in samples.windows(2) {
            let dt = w[1][0] - w[0][0];
            if !(dt > 0.0) {
                return Err(Error::Schema(format!(
                    "acceleration timestamps not strictly increasing at t={}",
                    w[1][0]
                )));
            }
            gaps.push(dt);
        }
        gaps.sort_by(f64::total_cmp);
        let median = gaps[gaps.len() / 2];
        Ok(AccelSeries {
            sample_rate: 1.0 / median,
            samples,
        })
    }

    /// True when every spacing is within 1% of the nominal period.
    pub fn is_uniform(&self) -> bool {
        let period = 1.0 / self.sample_rate;
        self.samples
            .windows(2)
            .all(|w| ((w[1][0] - w[0][0]) - period).abs() <= 0.01 * period)
    }

    pub fn start(&self) -> f64 {
        self.samples[0][0]
    }

    pub fn end(&self) -> f64 {
        self.samples[self.samples.len() - 1][0]
    }
}

/// Reads an `accel.csv` file with header `t,x,y,z`.
pub fn load_accel_csv(path: &Path) -> Result<AccelSeries> {
    let name = path.display().to_string();
    let mut rows = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line_no == 1 {
            let header: Vec<&str> = line.trim().split(',').map(str::trim).collect();
            if header != ["t", "x", "y", "z"] {
                return Err(Error::Schema(format!("{name}: expected header t,x,y,z")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let vals = parse_csv_floats(&line, 4, &name, line_no)?;
        rows.push([vals[0], vals[1], vals[2], vals[3]]);
    }
    let series = AccelSeries::new(rows)?;
    if !series.is_uniform() {
        log::warn!("{name}: acceleration sample spacing deviates from nominal by more than 1%");
    }
    Ok(series)
}

pub fn save_accel_csv(path: &Path, series: &AccelSeries) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "t,x,y,z").map_err(io)?;
    for s in &series.samples {
        writeln!(w, "{},{},{},{}", s[0], s[1], s[2], s[3]).map_err(io)?;
    }
    w.flush().map_err(io)
}

fn parse_csv_floats(line: &str, n: usize, name: &str, line_no: usize) -> Result<Vec<f64>> {
    let vals: std::result::Result<Vec<f64>, _> =
        line.split(',').map(|f| f.trim().parse::<f64>()).collect();
    let vals = vals.map_err(|e| Error::Parse {
        path: name.to_string(),
        line: line_no,
        msg: e.to_string(),
    })?;
    if vals.len() != n {
        return Err(Error::Parse {
            path: name.to_string(),
            line: line_no,
            msg: format!("expected {n} fields, found {}", vals.len()),
        });
    }
    Ok(vals)
}

/// Binary voice-activity stream sampled at a fixed rate.
#[derive(Debug, Clone, PartialEq)]
pub struct VadSeries {
    pub rate: f64,
    pub values: Vec<u8>,
}

impl VadSeries {
    pub const DEFAULT_RATE: f64 = 100.0;

    pub fn new(rate: f64, values: Vec<u8>) -> Result<Self> {
        if !(rate > 0.0) {
            return Err(Error::Schema(format!(
                "VAD rate must be positive, got {rate}"
            )));
        }
        if let Some(v) = values.iter().find(|&&v| v > 1) {
            return Err(Error::Schema(format!("VAD value {v} is not binary")));
        }
        Ok(VadSeries { rate, values })
    }

    pub fn duration(&self) -> f64 {
        self.values.len() as f64 / self.rate
    }

    fn index(&self, t: f64) -> usize {
        (t * self.rate).round().max(0.0) as usize
    }
}

/// Reads a `vad.csv` file with header `t,v`.
pub fn load_vad_csv(path: &Path) -> Result<VadSeries> {
    let name = path.display().to_string();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line_no, line) in open_lines(path)? {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line_no == 1 {
            let header: Vec<&str> = line.trim().split(',').map(str::trim).collect();
            if header != ["t", "v"] {
                return Err(Error::Schema(format!("{name}: expected header t,v")));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let vals = parse_csv_floats(&line, 2, &name, line_no)?;
        if vals[1] != 0.0 && vals[1] != 1.0 {
            return Err(Error::Schema(format!(
                "{name}:{line_no}: VAD value must be 0 or 1"
            )));
        }
        times.push(vals[0]);
        values.push(vals[1] as u8);
    }
    let rate = if times.len() >= 2 {
        (times.len() - 1) as f64 / (times[times.len() - 1] - times[0])
    } else {
        VadSeries::DEFAULT_RATE
    };
    VadSeries::new(rate, values)
}

pub fn save_vad_csv(path: &Path, vad: &VadSeries) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "t,v").map_err(io)?;
    for (i, v) in vad.values.iter().enumerate() {
        writeln!(w, "{},{}", i as f64 / vad.rate, v).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Labels a window 1 iff its fraction of positive VAD samples reaches `threshold`.
pub fn aggregate_label(vad: &VadSeries, start: f64, duration: f64, threshold: f64) -> Result<u8> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Range(format!("threshold {threshold} outside (0,1)")));
    }
    let (lo, hi) = (vad.index(start), vad.index(start + duration));
    if start < 0.0 || hi > vad.values.len() || hi <= lo {
        return Err(Error::Range(format!(
            "window [{start}, {}) outside VAD series of {} s",
            start + duration,
            vad.duration()
        )));
    }
    Ok(window_label(&vad.values[lo..hi], threshold))
}

fn window_label(window: &[u8], threshold: f64) -> u8 {
    let positives = window.iter().filter(|&&v| v == 1).count();
    u8::from(positives as f64 >= threshold * window.len() as f64)
}

/// Acceleration window as three axis rows of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelWindow {
    pub axes: [Vec<f64>; 3],
}

impl AccelWindow {
    pub fn len(&self) -> usize {
        self.axes[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Linearly resamples `duration` seconds from `start` to `round(duration·target_rate)` samples.
pub fn resample_accel(
    series: &AccelSeries,
    target_rate: f64,
    start: f64,
    duration: f64,
) -> Result<AccelWindow> {
    let n = (duration * target_rate).round() as usize;
    let period = 1.0 / series.sample_rate;
    let samples = &series.samples;
    let mut axes = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    let mut j = 0usize;
    for k in 0..n {
        let t = start + k as f64 / target_rate;
        if t < series.start() || t > series.end() {
            return Err(Error::MissingData(format!(
                "acceleration does not cover t={t:.4} (series spans {:.4}..{:.4})",
                series.start(),
                series.end()
            )));
        }
        while j + 2 < samples.len() && samples[j + 1][0] < t {
            j += 1;
        }
        // samples[j].t <= t <= samples[j+1].t
        let (a, b) = (&samples[j], &samples[(j + 1).min(samples.len() - 1)]);
        let gap = b[0] - a[0];
        if gap > 2.0 * period {
            return Err(Error::MissingData(format!(
                "acceleration gap of {gap:.4} s around t={t:.4}"
            )));
        }
        let f = if gap > 0.0 { (t - a[0]) / gap } else { 0.0 };
        for (axis, out) in axes.iter_mut().enumerate() {
            out.push(a[axis + 1] + f * (b[axis + 1] - a[axis + 1]));
        }
    }
    Ok(AccelWindow { axes })
}

/// Parameters for cutting tracks into labelled examples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SegmentConfig {
    pub duration: f64,
    pub label_threshold: f64,
    pub accel_rate: f64,
    /// Largest VAD shortfall (seconds) that is zero-padded instead of rejected.
    pub max_vad_pad: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            duration: 3.0,
            label_threshold: 0.25,
            accel_rate: 20.0,
            max_vad_pad: 1.0,
        }
    }
}

impl SegmentConfig {
    pub fn frames_per_segment(&self, fps: f64) -> usize {
        (self.duration * fps - 1e-9).ceil() as usize
    }
}

/// One fixed-length example cut from a pose track.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub person_id: String,
    pub camera_id: String,
    pub track_id: u32,
    pub start_frame: u32,
    pub n_frames: usize,
    pub start_time: f64,
    pub duration: f64,
    pub poses: Vec<KeypointSet>,
    pub accel_window: Option<AccelWindow>,
    pub label: u8,
    pub group_key: String,
}

pub fn group_key(person_id: &str, camera_id: &str) -> String {
    format!("{person_id}:{camera_id}")
}

/// Cuts a track into consecutive non-overlapping windows starting at the track start.
/// The trailing remainder shorter than one window is dropped.
pub fn segment_track(
    track: &PoseTrack,
    person_id: &str,
    camera_id: &str,
    vad: &VadSeries,
    accel: Option<&AccelSeries>,
    fps: f64,
    cfg: &SegmentConfig,
) -> Result<Vec<Segment>> {
    if !(fps > 0.0) {
        return Err(Error::Config(format!("fps must be positive, got {fps}")));
    }
    let per = cfg.frames_per_segment(fps);
    let count = track.len() / per;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let start_frame = track.start_frame + (k * per) as u32;
        let start_time = start_frame as f64 / fps;
        let label = padded_label(vad, start_time, cfg)?;
        let accel_window =
            accel.and_then(|a| resample_accel(a, cfg.accel_rate, start_time, cfg.duration).ok());
        let offset = k * per;
        out.push(Segment {
            person_id: person_id.to_string(),
            camera_id: camera_id.to_string(),
            track_id: track.track_id,
            start_frame,
            n_frames: per,
            start_time,
            duration: cfg.duration,
            poses: track.poses[offset..offset + per].to_vec(),
            accel_window,
            label,
            group_key: group_key(person_id, camera_id),
        });
    }
    Ok(out)
}

fn padded_label(vad: &VadSeries, start: f64, cfg: &SegmentConfig) -> Result<u8> {
    let end = start + cfg.duration;
    if end <= vad.duration() + 1e-9 {
        return aggregate_label(vad, start, cfg.duration, cfg.label_threshold);
    }
    let shortfall = end - vad.duration();
    if shortfall > cfg.max_vad_pad {
        return Err(Error::Range(format!(
            "VAD stream ends {shortfall:.3} s before the video window at {start:.3} s"
        )));
    }
    let lo = vad.index(start);
    let hi = vad.index(end);
    let mut window: Vec<u8> = vad.values.get(lo..).unwrap_or(&[]).to_vec();
    window.resize(hi - lo, 0);
    Ok(window_label(&window, cfg.label_threshold))
}

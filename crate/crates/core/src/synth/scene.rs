//! Conversation-group scenes: skeletons seen by one pinhole camera, with
//! speech-dependent trajectory descriptors, chest acceleration and VAD.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CameraData, Dataset, Manifest, PersonData};
use crate::error::{Error, Result};
use crate::geometry::Calibration;
use crate::ingest::{
    body25, AccelSeries, Keypoint, KeypointSet, PoseFrames, VadSeries, NUM_KEYPOINTS,
};
use crate::trajectories::{Trajectory, DESCRIPTOR_DIMS};

/// Depth of the floor-mark origin in front of the camera, meters.
pub const MARK_ORIGIN: f64 = 7.0;

/// Pinhole camera with a horizontal optical axis: ground `(x, depth)` and
/// height `z` map to `(u0 + f·x/depth, v_horizon + f·(height − z)/depth)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CameraConfig {
    pub focal: f64,
    pub u0: f64,
    pub v_horizon: f64,
    pub height: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            focal: 700.0,
            u0: 640.0,
            v_horizon: -400.0,
            height: 9.0,
        }
    }
}

impl CameraConfig {
    pub fn project(&self, p: [f64; 3]) -> [f64; 2] {
        [
            self.u0 + self.focal * p[0] / p[1],
            self.v_horizon + self.focal * (self.height - p[2]) / p[1],
        ]
    }

    /// Ground → image in the floor-mark frame, whose origin is the ground
    /// point `(0, MARK_ORIGIN)` (the camera foot maps to infinity, so it
    /// cannot be the origin of a homography with `A[2][2] = 1`).
    pub fn ground_matrix(&self) -> Matrix3<f64> {
        let d = MARK_ORIGIN;
        Matrix3::new(
            self.focal,
            self.u0,
            d * self.u0,
            0.0,
            self.v_horizon,
            d * self.v_horizon + self.focal * self.height,
            0.0,
            1.0,
            d,
        ) / d
    }

    /// Floor-mark coordinates of a ground point.
    pub fn to_marks(&self, g: [f64; 2]) -> [f64; 2] {
        [g[0], g[1] - MARK_ORIGIN]
    }

    /// Closed-form pixels per meter at image point `q` read as a ground point,
    /// averaged over unit steps along both ground axes.
    pub fn pixels_per_meter(&self, q: [f64; 2]) -> f64 {
        let depth = self.focal * self.height / (q[1] - self.v_horizon);
        let x = (q[0] - self.u0) * depth / self.focal;
        let along_x = self.focal / depth;
        let along_depth = self.focal * x.hypot(self.height) / (depth * depth);
        0.5 * (along_x + along_depth)
    }

    /// Image point used as the radius reference: the ground point `(0, 7)`.
    pub fn reference(&self) -> [f64; 2] {
        self.project([0.0, 7.0, 0.0])
    }
}

/// Trajectory source regions on (or off) a body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Head,
    Wrist,
    Elbow,
    Shoulder,
    Neck,
    Torso,
    Legs,
    Background,
}

pub const NUM_REGIONS: usize = 8;

impl Region {
    pub const ALL: [Region; NUM_REGIONS] = [
        Region::Head,
        Region::Wrist,
        Region::Elbow,
        Region::Shoulder,
        Region::Neck,
        Region::Torso,
        Region::Legs,
        Region::Background,
    ];
}

/// Latent descriptor model: `x = B·z + ε` with `z` drawn per trajectory around
/// a region centre, shifted along a region direction while the source speaks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorConfig {
    pub latent_dims: usize,
    /// Spread of the region centres.
    pub region_spread: f64,
    /// Shift while speaking, per region in [`Region::ALL`] order.
    pub speech_shift: [f64; NUM_REGIONS],
    pub within_noise: f64,
    /// Per person and 3 s block, shared by all of that person's trajectories.
    pub style_noise: f64,
    pub identity_noise: f64,
    pub output_noise: f64,
}

impl Default for DescriptorConfig {
    fn default() -> Self {
        DescriptorConfig {
            latent_dims: 12,
            region_spread: 2.5,
            speech_shift: [1.2, 1.0, 0.25, 0.1, 0.1, 0.05, 0.0, 0.0],
            within_noise: 1.0,
            style_noise: 0.35,
            identity_noise: 0.3,
            output_noise: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub n_agents: usize,
    /// Seconds.
    pub duration: f64,
    pub fps: f64,
    pub group_size: [usize; 2],
    /// Mean turn length and mean pause between turns of a group, seconds.
    pub speak_on_mean: f64,
    pub speak_off_mean: f64,
    pub gesture_gain: f64,
    /// 0 spreads groups out, 1 packs members shoulder to shoulder.
    pub contamination: f64,
    pub camera: CameraConfig,
    /// Trajectories per frame per region, in [`Region::ALL`] order; the
    /// background rate is per frame for the whole image.
    pub trajectory_rates: [f64; NUM_REGIONS],
    pub keypoint_noise: f64,
    pub keypoint_dropout: f64,
    pub accel_rate: f64,
    pub accel_noise: f64,
    pub accel_speech: f64,
    pub descriptor: DescriptorConfig,
    /// Box padding (meters) used for the planted contamination.
    pub box_pad: f64,
    pub segment_seconds: f64,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            n_agents: 12,
            duration: 60.0,
            fps: 10.0,
            group_size: [2, 4],
            speak_on_mean: 3.0,
            speak_off_mean: 1.5,
            gesture_gain: 1.0,
            contamination: 0.5,
            camera: CameraConfig::default(),
            trajectory_rates: [0.5, 0.3, 0.15, 0.15, 0.1, 2.0, 0.3, 2.0],
            keypoint_noise: 2.0,
            keypoint_dropout: 0.03,
            accel_rate: 50.0,
            accel_noise: 0.3,
            accel_speech: 0.1,
            descriptor: DescriptorConfig::default(),
            box_pad: 0.15,
            segment_seconds: 3.0,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.duration,
            self.fps,
            self.speak_on_mean,
            self.speak_off_mean,
            self.accel_rate,
            self.segment_seconds,
            self.descriptor.within_noise,
        ];
        if self.n_agents == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(
                "scene sizes, rates and durations must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.contamination) {
            return Err(Error::Config(format!(
                "contamination {} outside [0, 1]",
                self.contamination
            )));
        }
        if self.contamination > 0.0 && self.n_agents < 2 {
            return Err(Error::Config(
                "contamination needs at least two agents".into(),
            ));
        }
        if self.group_size[0] == 0 || self.group_size[0] > self.group_size[1] {
            return Err(Error::Config("group size range is empty".into()));
        }
        if self.trajectory_rates.iter().any(|r| !(*r >= 0.0)) || self.descriptor.latent_dims == 0 {
            return Err(Error::Config("bad trajectory rates or latent size".into()));
        }
        if self.descriptor.latent_dims > DESCRIPTOR_DIMS {
            return Err(Error::Config(
                "latent space larger than the descriptor".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.keypoint_dropout) {
            return Err(Error::Config("keypoint dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    pub fn segment_frames(&self) -> usize {
        (self.segment_seconds * self.fps - 1e-9).ceil() as usize
    }
}

/// What the generator planted, for checking the pipeline against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub camera_id: String,
    /// Speaking intervals `[start, end)` in seconds per person.
    pub speaking: BTreeMap<String, Vec<[f64; 2]>>,
    /// Index of the source person per trajectory (in stored order); −1 for background.
    pub trajectory_source: Vec<i32>,
    pub trajectory_region: Vec<Region>,
    pub segment_frames: usize,
    /// Contamination of each person's consecutive segments from frame 0,
    /// computed from the noise-free skeletons.
    pub contamination: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub dataset: Dataset,
    pub truth: GroundTruth,
}

impl SynthScene {
    /// Writes the dataset layout plus `ground_truth.json`.
    pub fn save(&self, dir: &Path) -> Result<Manifest> {
        let manifest = self.dataset.save(dir, Some("ground_truth.json"))?;
        let p = dir.join("ground_truth.json");
        std::fs::write(&p, serde_json::to_string(&self.truth)?).map_err(|e| Error::io(&p, e))?;
        Ok(manifest)
    }
}

pub fn person_id(i: usize) -> String {
    format!("p{i:02}")
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

struct Group {
    members: Vec<usize>,
    radius: f64,
    center: Vec<[f64; 2]>,
    angle: Vec<f64>,
    /// Speaker index into `members` per turn, with `[start, end)` seconds.
    turns: Vec<(usize, f64, f64)>,
}

fn layout_groups(cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut groups = Vec::new();
    let mut next = 0;
    while next < cfg.n_agents {
        let left = cfg.n_agents - next;
        let mut size = rng
            .random_range(cfg.group_size[0]..=cfg.group_size[1])
            .min(left);
        // Avoid a trailing group smaller than the minimum when possible.
        if left - size > 0 && left - size < cfg.group_size[0] {
            size = left;
        }
        groups.push((next..next + size).collect());
        next += size;
    }
    groups
}

fn ou_step(x: f64, target: f64, tau: f64, sigma: f64, dt: f64, rng: &mut ChaCha8Rng) -> f64 {
    let a = (-dt / tau).exp();
    target + (x - target) * a + sigma * (1.0 - a * a).sqrt() * gauss(rng)
}

fn group_radius(cfg: &SceneConfig, size: usize, rng: &mut ChaCha8Rng) -> f64 {
    if size == 1 {
        return 0.0;
    }
    (1.4 - 0.8 * cfg.contamination) * rng.random_range(0.85..1.15)
}

fn simulate_group(
    cfg: &SceneConfig,
    members: Vec<usize>,
    radius: f64,
    home: [f64; 2],
    rng: &mut ChaCha8Rng,
) -> Group {
    let n = cfg.n_frames();
    let dt = 1.0 / cfg.fps;
    let mut center = Vec::with_capacity(n);
    let mut angle = Vec::with_capacity(n);
    let (mut c, mut th, mut omega) = (home, rng.random_range(0.0..std::f64::consts::TAU), 0.0);
    for _ in 0..n {
        center.push(c);
        angle.push(th);
        c[0] = ou_step(c[0], home[0], 20.0, 0.12, dt, rng);
        c[1] = ou_step(c[1], home[1], 20.0, 0.12, dt, rng);
        omega = ou_step(omega, 0.0, 5.0, 0.12, dt, rng);
        th += omega * dt;
    }
    let mut turns = Vec::new();
    let on = Exp::new(1.0 / cfg.speak_on_mean).unwrap();
    let off = Exp::new(1.0 / cfg.speak_off_mean).unwrap();
    let mut t = off.sample(rng);
    let mut last = usize::MAX;
    while t < cfg.duration {
        let mut who = rng.random_range(0..members.len());
        if members.len() > 1 && who == last {
            who = (who + 1 + rng.random_range(0..members.len() - 1)) % members.len();
        }
        let len = on.sample(rng).max(0.3);
        turns.push((who, t, (t + len).min(cfg.duration)));
        last = who;
        t += len + off.sample(rng).max(0.1);
    }
    Group {
        members,
        radius,
        center,
        angle,
        turns,
    }
}

struct DescriptorModel {
    basis: Vec<f64>,
    q: usize,
    centers: Vec<Vec<f64>>,
    directions: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

fn descriptor_model(cfg: &DescriptorConfig, rng: &mut ChaCha8Rng) -> DescriptorModel {
    let q = cfg.latent_dims;
    let g = DMatrix::from_fn(DESCRIPTOR_DIMS, q, |_, _| gauss(rng));
    let qr = g.qr().q();
    let mut basis = vec![0.0; DESCRIPTOR_DIMS * q];
    for r in 0..DESCRIPTOR_DIMS {
        for c in 0..q {
            basis[r * q + c] = qr[(r, c)];
        }
    }
    let centers = (0..NUM_REGIONS)
        .map(|_| (0..q).map(|_| cfg.region_spread * gauss(rng)).collect())
        .collect();
    let directions = (0..NUM_REGIONS)
        .map(|_| {
            let v: Vec<f64> = (0..q).map(|_| gauss(rng)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect();
    let offset = (0..DESCRIPTOR_DIMS)
        .map(|_| 0.05 * rng.random::<f64>())
        .collect();
    DescriptorModel {
        basis,
        q,
        centers,
        directions,
        offset,
    }
}

impl DescriptorModel {
    fn emit(&self, z: &[f64], noise: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
        (0..DESCRIPTOR_DIMS)
            .map(|r| {
                let row = &self.basis[r * self.q..(r + 1) * self.q];
                let v: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + self.offset[r];
                (v + noise * gauss(rng)) as f32
            })
            .collect()
    }
}

/// Body-frame skeleton: (right, forward, up) in meters, BODY25 order.
fn rest_skeleton() -> [[f64; 3]; NUM_KEYPOINTS] {
    let mut s = [[0.0; 3]; NUM_KEYPOINTS];
    use body25::*;
    s[NOSE] = [0.0, 0.10, 1.62];
    s[NECK] = [0.0, 0.0, 1.45];
    s[R_SHOULDER] = [0.19, 0.0, 1.42];
    s[L_SHOULDER] = [-0.19, 0.0, 1.42];
    s[R_ELBOW] = [0.24, 0.02, 1.12];
    s[L_ELBOW] = [-0.24, 0.02, 1.12];
    s[R_WRIST] = [0.26, 0.08, 0.82];
    s[L_WRIST] = [-0.26, 0.08, 0.82];
    s[MID_HIP] = [0.0, 0.0, 0.95];
    s[R_HIP] = [0.10, 0.0, 0.95];
    s[L_HIP] = [-0.10, 0.0, 0.95];
    s[R_KNEE] = [0.10, 0.02, 0.50];
    s[L_KNEE] = [-0.10, 0.02, 0.50];
    s[R_ANKLE] = [0.10, 0.0, 0.08];
    s[L_ANKLE] = [-0.10, 0.0, 0.08];
    s[R_EYE] = [0.035, 0.08, 1.66];
    s[L_EYE] = [-0.035, 0.08, 1.66];
    s[R_EAR] = [0.075, 0.0, 1.63];
    s[L_EAR] = [-0.075, 0.0, 1.63];
    s[L_BIG_TOE] = [-0.10, 0.15, 0.0];
    s[L_SMALL_TOE] = [-0.14, 0.13, 0.0];
    s[L_HEEL] = [-0.10, -0.05, 0.0];
    s[R_BIG_TOE] = [0.10, 0.15, 0.0];
    s[R_SMALL_TOE] = [0.14, 0.13, 0.0];
    s[R_HEEL] = [0.10, -0.05, 0.0];
    s
}

/// Noise-free per-frame state of one agent.
struct AgentTrack {
    /// Image keypoints per frame.
    keypoints: Vec<[[f64; 2]; NUM_KEYPOINTS]>,
    speaking: Vec<bool>,
    gesture: Vec<f64>,
    intervals: Vec<[f64; 2]>,
}

fn speaking_at(intervals: &[[f64; 2]], t: f64) -> bool {
    intervals.iter().any(|iv| t >= iv[0] && t < iv[1])
}

fn simulate_agent(
    cfg: &SceneConfig,
    group: &Group,
    slot: usize,
    rng: &mut ChaCha8Rng,
) -> AgentTrack {
    let n = cfg.n_frames();
    let dt = 1.0 / cfg.fps;
    let m = group.members.len();
    let intervals: Vec<[f64; 2]> = group
        .turns
        .iter()
        .filter(|t| t.0 == slot)
        .map(|t| [t.1, t.2])
        .collect();
    let skeleton = rest_skeleton();
    let mut jitter = [0.0, 0.0];
    let mut solo_heading = rng.random_range(0.0..std::f64::consts::TAU);
    let mut sway = 0.0;
    let mut gesture = 0.0;
    let mut gesture_target = 0.0;
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let mut out = AgentTrack {
        keypoints: Vec::with_capacity(n),
        speaking: Vec::with_capacity(n),
        gesture: Vec::with_capacity(n),
        intervals,
    };
    for f in 0..n {
        let t = f as f64 * dt;
        let speaking = speaking_at(&out.intervals, t);
        let c = group.center[f];
        let (pos, facing) = if m == 1 {
            solo_heading = ou_step(solo_heading, solo_heading, 10.0, 0.05, dt, rng);
            (
                [c[0] + jitter[0], c[1] + jitter[1]],
                [solo_heading.cos(), solo_heading.sin()],
            )
        } else {
            let a = group.angle[f] + std::f64::consts::TAU * slot as f64 / m as f64;
            let p = [
                c[0] + group.radius * a.cos() + jitter[0],
                c[1] + group.radius * a.sin() + jitter[1],
            ];
            let d = [c[0] - p[0], c[1] - p[1]];
            let norm = d[0].hypot(d[1]).max(1e-9);
            (p, [d[0] / norm, d[1] / norm])
        };
        jitter[0] = ou_step(jitter[0], 0.0, 3.0, 0.1, dt, rng);
        jitter[1] = ou_step(jitter[1], 0.0, 3.0, 0.1, dt, rng);
        sway = ou_step(sway, 0.0, 1.0, 0.02, dt, rng);
        if rng.random::<f64>() < dt {
            gesture_target = if speaking {
                rng.random_range(0.3..1.0) * cfg.gesture_gain
            } else {
                0.1 * rng.random::<f64>()
            };
        }
        if speaking && gesture_target < 0.2 {
            gesture_target = rng.random_range(0.3..1.0) * cfg.gesture_gain;
        }
        if !speaking && gesture_target > 0.2 && rng.random::<f64>() < 2.0 * dt {
            gesture_target = 0.0;
        }
        gesture += (gesture_target - gesture) * (1.0 - (-dt / 0.3f64).exp());
        let right = [facing[1], -facing[0]];
        let nod = if speaking {
            0.02 * (2.0 * std::f64::consts::TAU * t + phase).sin()
        } else {
            0.0
        };
        let mut kps = [[0.0; 2]; NUM_KEYPOINTS];
        for (j, s) in skeleton.iter().enumerate() {
            let (mut a, mut b, mut z) = (s[0] + sway, s[1], s[2]);
            use body25::*;
            if [NOSE, R_EYE, L_EYE, R_EAR, L_EAR].contains(&j) {
                z += nod;
                b += nod;
            }
            let lift = |g: f64, k: f64| g * (0.7 + 0.3 * (k * t + phase).sin());
            if j == R_WRIST || j == L_WRIST {
                let g = lift(gesture, if j == R_WRIST { 3.0 } else { 2.3 });
                a -= a.signum() * 0.06 * g;
                b += 0.22 * g;
                z += 0.30 * g;
            }
            if j == R_ELBOW || j == L_ELBOW {
                let g = lift(gesture, if j == R_ELBOW { 3.0 } else { 2.3 });
                b += 0.08 * g;
                z += 0.08 * g;
            }
            let gx = pos[0] + a * right[0] + b * facing[0];
            let gy = pos[1] + a * right[1] + b * facing[1];
            kps[j] = cfg.camera.project([gx, gy, z]);
        }
        out.keypoints.push(kps);
        out.speaking.push(speaking);
        out.gesture.push(gesture);
    }
    out
}

fn head_point(k: &[[f64; 2]; NUM_KEYPOINTS]) -> [f64; 2] {
    let parts = body25::HEAD_PARTS;
    let mut s = [0.0, 0.0];
    for &j in &parts {
        s[0] += k[j][0];
        s[1] += k[j][1];
    }
    [s[0] / parts.len() as f64, s[1] / parts.len() as f64]
}

const UPPER: [usize; 7] = [
    body25::NECK,
    body25::R_SHOULDER,
    body25::L_SHOULDER,
    body25::R_ELBOW,
    body25::L_ELBOW,
    body25::R_WRIST,
    body25::L_WRIST,
];

/// `[x0, y0, x1, y1]` of the noise-free upper body, padded by `pad` meters.
fn truth_box(cam: &CameraConfig, k: &[[f64; 2]; NUM_KEYPOINTS], pad: f64) -> [f64; 4] {
    let h = head_point(k);
    let (mut x0, mut y0, mut x1, mut y1) = (h[0], h[1], h[0], h[1]);
    for &j in &UPPER {
        x0 = x0.min(k[j][0]);
        y0 = y0.min(k[j][1]);
        x1 = x1.max(k[j][0]);
        y1 = y1.max(k[j][1]);
    }
    let p = pad * cam.pixels_per_meter([(x0 + x1) / 2.0, (y0 + y1) / 2.0]);
    [x0 - p, y0 - p, x1 + p, y1 + p]
}

fn overlap(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let w = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
    let h = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
    w * h
}

fn planted_contamination(cfg: &SceneConfig, agents: &[AgentTrack]) -> Vec<Vec<f64>> {
    let n = cfg.n_frames();
    let per = cfg.segment_frames();
    let boxes: Vec<Vec<[f64; 4]>> = agents
        .iter()
        .map(|a| {
            a.keypoints
                .iter()
                .map(|k| truth_box(&cfg.camera, k, cfg.box_pad))
                .collect()
        })
        .collect();
    (0..agents.len())
        .map(|i| {
            (0..n / per)
                .map(|s| {
                    let mut scores: Vec<f64> = (s * per..(s + 1) * per)
                        .map(|f| {
                            let me = &boxes[i][f];
                            let area = (me[2] - me[0]) * (me[3] - me[1]);
                            let inter: f64 = (0..agents.len())
                                .filter(|&j| j != i)
                                .map(|j| overlap(me, &boxes[j][f]))
                                .sum();
                            inter / area
                        })
                        .collect();
                    scores.sort_by(f64::total_cmp);
                    scores[(scores.len() - 1) / 2]
                })
                .collect()
        })
        .collect()
}

fn noisy_pose(
    cfg: &SceneConfig,
    frame: u32,
    person: &str,
    k: &[[f64; 2]; NUM_KEYPOINTS],
    rng: &mut ChaCha8Rng,
) -> KeypointSet {
    let mut kps = [Keypoint::UNDETECTED; NUM_KEYPOINTS];
    for (j, p) in k.iter().enumerate() {
        // The chest point anchors tracking; it is almost always found.
        let drop = if j == body25::NECK {
            cfg.keypoint_dropout * 0.1
        } else {
            cfg.keypoint_dropout
        };
        let conf = rng.random_range(0.55..1.0);
        let dx = cfg.keypoint_noise * gauss(rng);
        let dy = cfg.keypoint_noise * gauss(rng);
        if rng.random::<f64>() >= drop {
            kps[j] = Keypoint::new(p[0] + dx, p[1] + dy, conf);
        }
    }
    let mut set = KeypointSet::new(frame, kps);
    set.person = Some(person.to_string());
    set
}

struct Emitted {
    traj: Trajectory,
    region: Region,
}

/// Image anchor of a region at frame `f`, and the in-region offset scale (m).
fn region_anchor(region: Region, side: usize, k: &[[f64; 2]; NUM_KEYPOINTS]) -> [f64; 2] {
    use body25::*;
    match region {
        Region::Head => head_point(k),
        Region::Wrist => k[[R_WRIST, L_WRIST][side]],
        Region::Elbow => k[[R_ELBOW, L_ELBOW][side]],
        Region::Shoulder => k[[R_SHOULDER, L_SHOULDER][side]],
        Region::Neck => k[NECK],
        Region::Torso => k[NECK],
        Region::Legs => k[MID_HIP],
        Region::Background => [0.0, 0.0],
    }
}

#[allow(clippy::too_many_arguments)]
fn agent_trajectories(
    cfg: &SceneConfig,
    model: &DescriptorModel,
    agent: &AgentTrack,
    agent_index: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Emitted> {
    let n = cfg.n_frames();
    let q = model.q;
    let dc = &cfg.descriptor;
    let per = cfg.segment_frames();
    // Nuisance offsets are drawn independently per region (clothing and
    // texture differ across the body), per person and per segment block.
    let identity: Vec<Vec<f64>> = (0..NUM_REGIONS)
        .map(|_| (0..q).map(|_| dc.identity_noise * gauss(rng)).collect())
        .collect();
    let mut style: Vec<Vec<f64>> = vec![vec![0.0; q]; NUM_REGIONS];
    let mut out = Vec::new();
    let len = 16;
    for f in 0..n {
        if f % per == 0 {
            for s in style.iter_mut() {
                s.iter_mut().for_each(|v| *v = dc.style_noise * gauss(rng));
            }
        }
        let k = &agent.keypoints[f];
        let t_neck = k[body25::NECK];
        let t_hip = k[body25::MID_HIP];
        let shoulder_w = (k[body25::R_SHOULDER][0] - k[body25::L_SHOULDER][0])
            .abs()
            .max(4.0);
        let body_scale = (t_hip[1] - t_neck[1]).abs().max(4.0) / 0.5; // pixels per meter near the torso
        for (ri, &region) in Region::ALL.iter().enumerate().take(NUM_REGIONS - 1) {
            let rate = cfg.trajectory_rates[ri];
            let sides = if matches!(region, Region::Wrist | Region::Elbow | Region::Shoulder) {
                2
            } else {
                1
            };
            for side in 0..sides {
                let count = if rate > 0.0 {
                    Poisson::new(rate).unwrap().sample(rng) as usize
                } else {
                    0
                };
                for _ in 0..count {
                    let anchor = region_anchor(region, side, k);
                    let (ox, oy) = match region {
                        Region::Head => (
                            0.07 * body_scale * gauss(rng),
                            0.07 * body_scale * gauss(rng),
                        ),
                        Region::Wrist | Region::Elbow => (
                            0.05 * body_scale * gauss(rng),
                            0.05 * body_scale * gauss(rng),
                        ),
                        Region::Shoulder | Region::Neck => (
                            0.04 * body_scale * gauss(rng),
                            0.04 * body_scale * gauss(rng),
                        ),
                        Region::Torso => (
                            rng.random_range(-0.4..0.4) * shoulder_w,
                            rng.random_range(0.1..0.8) * (t_hip[1] - t_neck[1]),
                        ),
                        Region::Legs => (
                            rng.random_range(-0.3..0.3) * shoulder_w,
                            rng.random_range(0.0..1.8) * (t_hip[1] - t_neck[1]),
                        ),
                        Region::Background => unreachable!(),
                    };
                    let mut points = Vec::with_capacity(len);
                    let mut drift = [0.0, 0.0];
                    for i in 0..len {
                        let g = (f + i).min(n - 1);
                        let a = region_anchor(region, side, &agent.keypoints[g]);
                        points.push([
                            (anchor[0] + ox + a[0] - anchor[0] + drift[0]) as f32,
                            (anchor[1] + oy + a[1] - anchor[1] + drift[1]) as f32,
                        ]);
                        drift[0] += 0.3 * gauss(rng);
                        drift[1] += 0.3 * gauss(rng);
                    }
                    let active = match region {
                        Region::Wrist | Region::Elbow => agent.gesture[f].min(1.5),
                        _ => f64::from(u8::from(agent.speaking[f])),
                    };
                    let shift = dc.speech_shift[ri]
                        * active
                        * if matches!(region, Region::Wrist | Region::Elbow) {
                            1.0
                        } else {
                            cfg.gesture_gain
                        };
                    let z: Vec<f64> = (0..q)
                        .map(|d| {
                            model.centers[ri][d]
                                + shift * model.directions[ri][d]
                                + identity[ri][d]
                                + style[ri][d]
                                + dc.within_noise * gauss(rng)
                        })
                        .collect();
                    let descriptor = model.emit(&z, dc.output_noise, rng);
                    out.push(Emitted {
                        traj: Trajectory {
                            start_frame: f as u32,
                            scale: 0,
                            points,
                            descriptor,
                        },
                        region,
                    });
                }
            }
        }
    }
    let _ = agent_index;
    out
}

fn background_trajectories(
    cfg: &SceneConfig,
    model: &DescriptorModel,
    rng: &mut ChaCha8Rng,
) -> Vec<Emitted> {
    let n = cfg.n_frames();
    let q = model.q;
    let ri = NUM_REGIONS - 1;
    let rate = cfg.trajectory_rates[ri];
    let (w, h) = (2.0 * cfg.camera.u0, cfg.camera.project([0.0, 4.0, 0.0])[1]);
    let mut out = Vec::new();
    if rate <= 0.0 {
        return out;
    }
    let pois = Poisson::new(rate).unwrap();
    for f in 0..n {
        let count = pois.sample(rng) as usize;
        for _ in 0..count {
            let o = [rng.random_range(0.0..w), rng.random_range(0.0..h)];
            let mut points = Vec::with_capacity(16);
            let mut p = o;
            for _ in 0..16 {
                points.push([p[0] as f32, p[1] as f32]);
                p[0] += 0.5 * gauss(rng);
                p[1] += 0.5 * gauss(rng);
            }
            let z: Vec<f64> = (0..q)
                .map(|d| model.centers[ri][d] + cfg.descriptor.within_noise * gauss(rng))
                .collect();
            let descriptor = model.emit(&z, cfg.descriptor.output_noise, rng);
            out.push(Emitted {
                traj: Trajectory {
                    start_frame: f as u32,
                    scale: 0,
                    points,
                    descriptor,
                },
                region: Region::Background,
            });
        }
    }
    out
}

fn accel_series(
    cfg: &SceneConfig,
    agent: &AgentTrack,
    rng: &mut ChaCha8Rng,
) -> Result<AccelSeries> {
    let n = (cfg.duration * cfg.accel_rate).round() as usize + 1;
    // Fixed sensor tilt: gravity split over the axes.
    let tilt: [f64; 3] = {
        let v = [0.3 * gauss(rng), 0.3 * gauss(rng), 1.0];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        [9.81 * v[0] / norm, 9.81 * v[1] / norm, 9.81 * v[2] / norm]
    };
    let noise = cfg.accel_noise * rng.random_range(0.6..1.4);
    let mut sway = [0.0; 3];
    // Speech moves the chest in smooth bursts rather than white jitter, so it
    // survives per-window standardisation.
    let mut voice = [0.0; 3];
    let dt = 1.0 / cfg.accel_rate;
    let mut samples = Vec::with_capacity(n);
    let fps_frames = agent.gesture.len();
    for i in 0..n {
        let t = i as f64 * dt;
        let speaking = speaking_at(&agent.intervals, t);
        let f = ((t * cfg.fps) as usize).min(fps_frames - 1);
        let g = agent.gesture[f];
        let mut row = [t, 0.0, 0.0, 0.0];
        for a in 0..3 {
            sway[a] = ou_step(sway[a], 0.0, 2.0, 0.05, dt, rng);
            let amp = if speaking { cfg.accel_speech } else { 0.0 };
            voice[a] = ou_step(voice[a], 0.0, 0.15, amp, dt, rng);
            let motion = 0.3 * g * (std::f64::consts::TAU * 1.5 * t + a as f64).sin();
            row[a + 1] = tilt[a] + sway[a] + voice[a] + motion + noise * gauss(rng);
        }
        samples.push(row);
    }
    AccelSeries::new(samples)
}

fn vad_series(cfg: &SceneConfig, agent: &AgentTrack) -> Result<VadSeries> {
    let rate = VadSeries::DEFAULT_RATE;
    let n = (cfg.duration * rate).round() as usize;
    let values = (0..n)
        .map(|i| u8::from(speaking_at(&agent.intervals, i as f64 / rate)))
        .collect();
    VadSeries::new(rate, values)
}

fn place_groups(cfg: &SceneConfig, radii: &[f64], rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let gap = 1.6 - 1.0 * cfg.contamination;
    let mut homes: Vec<[f64; 2]> = Vec::new();
    for (g, &r) in radii.iter().enumerate() {
        let mut best = ([0.0, 7.0], f64::NEG_INFINITY);
        for _ in 0..500 {
            let y = rng.random_range(4.8..11.0);
            let c = [rng.random_range(-0.75 * y..0.75 * y), y];
            // Clearance to the nearest placed group, edge to edge.
            let d = homes
                .iter()
                .zip(radii)
                .map(|(h, &rh)| (h[0] - c[0]).hypot(h[1] - c[1]) - r - rh)
                .fold(f64::INFINITY, f64::min);
            if d >= gap {
                best = (c, d);
                break;
            }
            if d > best.1 {
                best = (c, d);
            }
        }
        if best.1 < gap && g > 0 {
            log::debug!("group {g} placed with clearance {:.2} m", best.1);
        }
        homes.push(best.0);
    }
    homes
}

fn simulate(cfg: &SceneConfig) -> (DescriptorModel, Vec<AgentTrack>) {
    let mut rng = substream(cfg.seed, 0);
    let model = descriptor_model(&cfg.descriptor, &mut rng);
    let member_lists = layout_groups(cfg, &mut rng);
    let radii: Vec<f64> = member_lists
        .iter()
        .map(|m| group_radius(cfg, m.len(), &mut rng))
        .collect();
    let homes = place_groups(cfg, &radii, &mut rng);
    let groups: Vec<Group> = member_lists
        .into_iter()
        .zip(radii.into_iter().zip(homes))
        .enumerate()
        .map(|(g, (members, (r, home)))| {
            simulate_group(
                cfg,
                members,
                r,
                home,
                &mut substream(cfg.seed, 1000 + g as u64),
            )
        })
        .collect();
    let mut slots = vec![(0usize, 0usize); cfg.n_agents];
    for (g, group) in groups.iter().enumerate() {
        for (s, &a) in group.members.iter().enumerate() {
            slots[a] = (g, s);
        }
    }
    let agents: Vec<AgentTrack> = (0..cfg.n_agents)
        .into_par_iter()
        .map(|a| {
            simulate_agent(
                cfg,
                &groups[slots[a].0],
                slots[a].1,
                &mut substream(cfg.seed, 2000 + a as u64),
            )
        })
        .collect();
    (model, agents)
}

/// Noise-free image keypoints, `[agent][frame]`, exactly as `gen_scene`
/// would animate them for the same config.
pub fn agent_keypoints(cfg: &SceneConfig) -> Result<Vec<Vec<[[f64; 2]; NUM_KEYPOINTS]>>> {
    cfg.validate()?;
    Ok(simulate(cfg).1.into_iter().map(|a| a.keypoints).collect())
}

/// Generates a full scene. Every stream is derived from `cfg.seed`, and
/// per-agent work uses its own substream, so thread count never matters.
pub fn gen_scene(cfg: &SceneConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let (model, agents) = simulate(cfg);

    struct AgentOut {
        poses: Vec<KeypointSet>,
        trajs: Vec<Emitted>,
        accel: AccelSeries,
        vad: VadSeries,
    }
    let outs: Vec<AgentOut> = agents
        .par_iter()
        .enumerate()
        .map(|(a, agent)| -> Result<AgentOut> {
            let pid = person_id(a);
            let mut r = substream(cfg.seed, 3000 + a as u64);
            let poses = agent
                .keypoints
                .iter()
                .enumerate()
                .map(|(f, k)| noisy_pose(cfg, f as u32, &pid, k, &mut r))
                .collect();
            let trajs = agent_trajectories(
                cfg,
                &model,
                agent,
                a,
                &mut substream(cfg.seed, 4000 + a as u64),
            );
            let accel = accel_series(cfg, agent, &mut substream(cfg.seed, 5000 + a as u64))?;
            let vad = vad_series(cfg, agent)?;
            Ok(AgentOut {
                poses,
                trajs,
                accel,
                vad,
            })
        })
        .collect::<Result<_>>()?;
    let background = background_trajectories(cfg, &model, &mut substream(cfg.seed, 6000));

    let mut pose_frames = PoseFrames::new();
    for f in 0..cfg.n_frames() {
        pose_frames.insert(f as u32, outs.iter().map(|o| o.poses[f].clone()).collect());
    }
    let mut tagged: Vec<(i32, Emitted)> = Vec::new();
    let mut persons = Vec::new();
    let mut speaking = BTreeMap::new();
    for (a, o) in outs.into_iter().enumerate() {
        tagged.extend(o.trajs.into_iter().map(|e| (a as i32, e)));
        persons.push(PersonData {
            id: person_id(a),
            vad: o.vad,
            accel: Some(o.accel),
        });
        speaking.insert(person_id(a), agents[a].intervals.clone());
    }
    tagged.extend(background.into_iter().map(|e| (-1, e)));
    tagged.sort_by_key(|(_, e)| e.traj.start_frame);

    let contamination = planted_contamination(cfg, &agents)
        .into_iter()
        .enumerate()
        .map(|(a, v)| (person_id(a), v))
        .collect();
    let truth = GroundTruth {
        camera_id: "cam0".into(),
        speaking,
        trajectory_source: tagged.iter().map(|t| t.0).collect(),
        trajectory_region: tagged.iter().map(|t| t.1.region).collect(),
        segment_frames: cfg.segment_frames(),
        contamination,
    };
    let reference = cfg.camera.reference();
    let marks: Vec<[f64; 2]> = [-3.0, 0.0, 3.0]
        .iter()
        .flat_map(|&x| [5.0, 7.0, 9.5].map(|y| [x, y]))
        .collect();
    let image = marks
        .iter()
        .map(|&g| cfg.camera.project([g[0], g[1], 0.0]))
        .collect();
    let ground = marks.iter().map(|&g| cfg.camera.to_marks(g)).collect();
    let calibration = Calibration {
        ground,
        image,
        reference: Some(reference),
    };
    // Same estimate a reader of the saved calibration gets.
    let homography = calibration.homography()?;
    let camera = CameraData {
        id: "cam0".into(),
        calibration,
        homography,
        poses: pose_frames,
        trajectories: tagged.into_iter().map(|t| t.1.traj).collect(),
    };
    Ok(SynthScene {
        dataset: Dataset {
            fps: cfg.fps,
            cameras: vec![camera],
            persons,
        },
        truth,
    })
}

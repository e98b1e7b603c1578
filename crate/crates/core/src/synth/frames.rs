//! Low-resolution video of textured blobs riding on the synthetic skeletons,
//! with the exact flow that produced each frame pair.
//!
//! Blobs are rigid discs whose texture is attached to the disc, so every
//! covered pixel moves by the disc's own displacement. The background is a
//! static texture with zero flow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scene::{agent_keypoints, SceneConfig};
use crate::error::{Error, Result};
use crate::ingest::body25;
use crate::trajectories::{FlowField, GrayImage};

/// Sum of a few oriented sinusoids: smooth enough for block matching,
/// busy enough to pass the corner test everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    mean: f64,
    waves: Vec<[f64; 4]>,
}

impl Texture {
    pub fn random(mean: f64, contrast: f64, rng: &mut ChaCha8Rng) -> Self {
        let waves = (0..3)
            .map(|_| {
                let theta = rng.random_range(0.0..std::f64::consts::PI);
                let period = rng.random_range(5.0..11.0);
                let k = std::f64::consts::TAU / period;
                [
                    k * theta.cos(),
                    k * theta.sin(),
                    rng.random_range(0.0..std::f64::consts::TAU),
                    contrast / 3.0,
                ]
            })
            .collect();
        Texture { mean, waves }
    }

    pub fn at(&self, x: f64, y: f64) -> f64 {
        self.mean
            + self
                .waves
                .iter()
                .map(|w| w[3] * (w[0] * x + w[1] * y + w[2]).sin())
                .sum::<f64>()
    }
}

/// A disc following `path` (one centre per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub radius: f64,
    pub path: Vec<[f64; 2]>,
    pub texture: Texture,
}

impl Blob {
    fn covers(&self, f: usize, x: f64, y: f64) -> bool {
        let c = self.path[f];
        (x - c[0]).powi(2) + (y - c[1]).powi(2) <= self.radius * self.radius
    }
}

#[derive(Debug, Clone)]
pub struct SynthFrames {
    pub frames: Vec<GrayImage>,
    /// `flows[t]` carries frame `t` onto frame `t + 1`.
    pub flows: Vec<FlowField>,
}

/// Draws `blobs` (later ones on top) over `background`. All paths must have
/// the same length.
pub fn render(
    width: usize,
    height: usize,
    background: &Texture,
    blobs: &[Blob],
) -> Result<SynthFrames> {
    let n = blobs.first().map_or(1, |b| b.path.len());
    if blobs.iter().any(|b| b.path.len() != n) {
        return Err(Error::Shape("blob paths differ in length".into()));
    }
    let top = |f: usize, x: usize, y: usize| {
        let (px, py) = (x as f64, y as f64);
        blobs.iter().rev().find(|b| b.covers(f, px, py))
    };
    let frames = (0..n)
        .map(|f| {
            GrayImage::from_fn(width, height, |x, y| {
                let v = match top(f, x, y) {
                    Some(b) => b
                        .texture
                        .at(x as f64 - b.path[f][0], y as f64 - b.path[f][1]),
                    None => background.at(x as f64, y as f64),
                };
                v as f32
            })
        })
        .collect();
    let flows = (0..n.saturating_sub(1))
        .map(|f| {
            FlowField::from_fn(width, height, |x, y| match top(f, x, y) {
                Some(b) => [
                    b.path[f + 1][0] - b.path[f][0],
                    b.path[f + 1][1] - b.path[f][1],
                ],
                None => [0.0, 0.0],
            })
        })
        .collect();
    Ok(SynthFrames { frames, flows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameConfig {
    pub scene: SceneConfig,
    pub width: usize,
    pub height: usize,
    /// Disc radius in output pixels.
    pub blob_radius: f64,
    /// Only the first `max_frames` frames are rendered, if set.
    pub max_frames: Option<usize>,
}

impl Default for FrameConfig {
    fn default() -> Self {
        FrameConfig {
            scene: SceneConfig {
                n_agents: 4,
                duration: 4.0,
                ..SceneConfig::default()
            },
            width: 320,
            height: 240,
            blob_radius: 4.0,
            max_frames: None,
        }
    }
}

/// Keypoints that get a blob.
const BLOB_JOINTS: [usize; 13] = [
    body25::NOSE,
    body25::NECK,
    body25::R_SHOULDER,
    body25::L_SHOULDER,
    body25::R_ELBOW,
    body25::L_ELBOW,
    body25::R_WRIST,
    body25::L_WRIST,
    body25::MID_HIP,
    body25::R_KNEE,
    body25::L_KNEE,
    body25::R_ANKLE,
    body25::L_ANKLE,
];

/// Renders the scene that `gen_scene` would animate for `cfg.scene`, scaled
/// from the 1280×960 camera image down to `width × height`.
pub fn gen_frames(cfg: &FrameConfig) -> Result<SynthFrames> {
    if cfg.width == 0 || cfg.height == 0 || cfg.width > 320 || cfg.height > 240 {
        return Err(Error::Config(format!(
            "frame size {}x{} outside 1..=320 x 1..=240",
            cfg.width, cfg.height
        )));
    }
    if !(cfg.blob_radius > 0.0) {
        return Err(Error::Config("blob_radius must be positive".into()));
    }
    let agents = agent_keypoints(&cfg.scene)?;
    let n = cfg
        .max_frames
        .map_or(cfg.scene.n_frames(), |m| m.min(cfg.scene.n_frames()));
    let (sx, sy) = (cfg.width as f64 / 1280.0, cfg.height as f64 / 960.0);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.scene.seed);
    rng.set_stream(7000);
    let background = Texture::random(0.3, 0.12, &mut rng);
    // Far agents first so nearer ones occlude them.
    let mut order: Vec<usize> = (0..agents.len()).collect();
    order.sort_by(|&a, &b| agents[a][0][body25::NECK][1].total_cmp(&agents[b][0][body25::NECK][1]));
    let mut blobs = Vec::new();
    for a in order {
        for &j in &BLOB_JOINTS {
            let path = agents[a][..n]
                .iter()
                .map(|k| [k[j][0] * sx, k[j][1] * sy])
                .collect();
            let texture = Texture::random(rng.random_range(0.45..0.75), 0.4, &mut rng);
            blobs.push(Blob {
                radius: cfg.blob_radius,
                path,
                texture,
            });
        }
    }
    render(cfg.width, cfg.height, &background, &blobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectories::{estimate_flow, extract, TrajectoryParams};

    fn moving_blob(velocity: [f64; 2], frames: usize) -> SynthFrames {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let background = Texture::random(0.3, 0.12, &mut rng);
        let texture = Texture::random(0.6, 0.4, &mut rng);
        let path = (0..frames)
            .map(|t| [50.0 + velocity[0] * t as f64, 60.0 + velocity[1] * t as f64])
            .collect();
        render(
            160,
            120,
            &background,
            &[Blob {
                radius: 25.0,
                path,
                texture,
            }],
        )
        .unwrap()
    }

    #[test]
    fn static_scene_has_no_flow_and_no_trajectories() {
        let s = moving_blob([0.0, 0.0], 20);
        assert!(s.flows.iter().all(|f| f
            .mean_endpoint_error(&FlowField::zeros(160, 120), 0)
            .unwrap()
            == 0.0));
        assert!(s.frames.windows(2).all(|w| w[0] == w[1]));
        let trajs = extract(&s.frames, &s.flows, &TrajectoryParams::default()).unwrap();
        assert!(trajs.is_empty());
    }

    #[test]
    fn translating_blob_gives_planted_steps() {
        let s = moving_blob([2.0, 0.0], 20);
        let trajs = extract(&s.frames, &s.flows, &TrajectoryParams::default()).unwrap();
        // Points that start well inside the disc never leave it.
        let inner: Vec<_> = trajs
            .iter()
            .filter(|t| {
                let c = [50.0 + 2.0 * t.start_frame as f64, 60.0];
                let p = t.points[0];
                (p[0] as f64 - c[0]).hypot(p[1] as f64 - c[1]) < 20.0
            })
            .collect();
        assert!(inner.len() >= 10, "{} interior trajectories", inner.len());
        for t in &inner {
            for w in t.points.windows(2) {
                assert!(
                    (w[1][0] - w[0][0] - 2.0).abs() <= 0.5 && (w[1][1] - w[0][1]).abs() <= 0.5,
                    "{w:?}"
                );
            }
        }
    }

    #[test]
    fn estimated_flow_matches_analytic_flow() {
        let s = moving_blob([2.0, 0.0], 4);
        for (w, truth) in s.frames.windows(2).zip(&s.flows) {
            let est = estimate_flow(&w[0], &w[1]).unwrap();
            assert!(est.mean_endpoint_error(truth, 8).unwrap() < 1.0);
        }
        let cfg = FrameConfig {
            max_frames: Some(6),
            ..FrameConfig::default()
        };
        let s = gen_frames(&cfg).unwrap();
        assert_eq!(s.frames.len(), 6);
        assert_eq!((s.frames[0].width(), s.frames[0].height()), (320, 240));
        for (w, truth) in s.frames.windows(2).zip(&s.flows) {
            let est = estimate_flow(&w[0], &w[1]).unwrap();
            assert!(est.mean_endpoint_error(truth, 8).unwrap() < 1.0);
        }
    }

    #[test]
    fn frames_follow_the_scene_deterministically() {
        let cfg = FrameConfig {
            max_frames: Some(3),
            ..FrameConfig::default()
        };
        let a = gen_frames(&cfg).unwrap();
        let b = gen_frames(&cfg).unwrap();
        assert_eq!(a.frames, b.frames);
        // Pixels under a neck blob carry that neck's displacement.
        let k = agent_keypoints(&cfg.scene).unwrap();
        let (sx, sy) = (0.25, 0.25);
        let neck =
            |a: usize, f: usize| [k[a][f][body25::NECK][0] * sx, k[a][f][body25::NECK][1] * sy];
        let any_match = (0..k.len()).any(|ag| {
            let p = neck(ag, 0);
            let q = neck(ag, 1);
            let v = a.flows[0].at(p[0].round() as usize, p[1].round() as usize);
            (v[0] as f64 - (q[0] - p[0])).abs() < 1e-5 && (v[1] as f64 - (q[1] - p[1])).abs() < 1e-5
        });
        assert!(any_match);
        assert!(gen_frames(&FrameConfig { width: 640, ..cfg }).is_err());
    }
}

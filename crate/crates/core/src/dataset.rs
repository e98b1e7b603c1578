//! On-disk dataset layout: a `manifest.json` naming per-camera pose,
//! trajectory and calibration files and per-person VAD and acceleration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Calibration, Homography};
use crate::ingest::{
    load_accel_csv, load_pose_frames, load_vad_csv, save_accel_csv, save_pose_frames, save_vad_csv,
    AccelSeries, PoseFrames, VadSeries,
};
use crate::trajectories::{load_trajectories, save_trajectories, Trajectory};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraEntry {
    pub id: String,
    pub poses: String,
    pub calibration: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<String>,
    /// Directory of numbered grayscale frames, when raw video is available.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<String>,
    /// Pose pixels per frame pixel, when the frames are downscaled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PersonEntry {
    pub id: String,
    pub vad: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accel: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub fps: f64,
    pub cameras: Vec<CameraEntry>,
    pub persons: Vec<PersonEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    /// Hash of the run config that generated the dataset, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl Manifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Schema(format!(
                "unsupported manifest version {}",
                m.version
            )));
        }
        if !(m.fps > 0.0) {
            return Err(Error::Schema(format!(
                "fps must be positive, got {}",
                m.fps
            )));
        }
        Ok(m)
    }

    /// Group keys (`person:camera`) of every person/camera pair.
    pub fn groups(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.cameras {
            for p in &self.persons {
                out.push(crate::ingest::group_key(&p.id, &c.id));
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CameraData {
    pub id: String,
    pub calibration: Calibration,
    pub homography: Homography,
    pub poses: PoseFrames,
    /// Sorted by start frame.
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PersonData {
    pub id: String,
    pub vad: VadSeries,
    pub accel: Option<AccelSeries>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub fps: f64,
    pub cameras: Vec<CameraData>,
    pub persons: Vec<PersonData>,
}

fn resolve(root: &Path, rel: &str) -> PathBuf {
    root.join(rel)
}

impl Dataset {
    /// Reads everything listed in `dir/manifest.json`. Cameras without a
    /// trajectory file get an empty trajectory list.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::load(&dir.join("manifest.json"))?;
        let mut cameras = Vec::new();
        for c in &manifest.cameras {
            let calibration = Calibration::load(&resolve(dir, &c.calibration))?;
            let homography = calibration.homography()?;
            let poses = load_pose_frames(&resolve(dir, &c.poses))?;
            let mut trajectories = match &c.trajectories {
                Some(t) => load_trajectories(&resolve(dir, t))?,
                None => Vec::new(),
            };
            trajectories.sort_by_key(|t| t.start_frame);
            cameras.push(CameraData {
                id: c.id.clone(),
                calibration,
                homography,
                poses,
                trajectories,
            });
        }
        let mut persons = Vec::new();
        for p in &manifest.persons {
            let vad = load_vad_csv(&resolve(dir, &p.vad))?;
            let accel = p
                .accel
                .as_ref()
                .map(|a| load_accel_csv(&resolve(dir, a)))
                .transpose()?;
            persons.push(PersonData {
                id: p.id.clone(),
                vad,
                accel,
            });
        }
        Ok(Dataset {
            fps: manifest.fps,
            cameras,
            persons,
        })
    }

    /// Writes the standard layout under `dir` and returns the manifest.
    pub fn save(&self, dir: &Path, ground_truth: Option<&str>) -> Result<Manifest> {
        let mkdir = |p: &Path| std::fs::create_dir_all(p).map_err(|e| Error::io(p, e));
        mkdir(dir)?;
        let mut cams = Vec::new();
        for c in &self.cameras {
            mkdir(&dir.join(&c.id))?;
            let poses = format!("{}/poses.ndjson", c.id);
            let calibration = format!("{}/calib.json", c.id);
            let trajectories = format!("{}/traj.bin", c.id);
            save_pose_frames(&dir.join(&poses), &c.poses)?;
            let p = dir.join(&calibration);
            std::fs::write(&p, serde_json::to_string_pretty(&c.calibration)?)
                .map_err(|e| Error::io(&p, e))?;
            save_trajectories(&dir.join(&trajectories), &c.trajectories)?;
            cams.push(CameraEntry {
                id: c.id.clone(),
                poses,
                calibration,
                trajectories: Some(trajectories),
                frames: None,
                frame_scale: None,
            });
        }
        let mut persons = Vec::new();
        for p in &self.persons {
            mkdir(&dir.join("persons").join(&p.id))?;
            let vad = format!("persons/{}/vad.csv", p.id);
            save_vad_csv(&dir.join(&vad), &p.vad)?;
            let accel = match &p.accel {
                Some(a) => {
                    let rel = format!("persons/{}/accel.csv", p.id);
                    save_accel_csv(&dir.join(&rel), a)?;
                    Some(rel)
                }
                None => None,
            };
            persons.push(PersonEntry {
                id: p.id.clone(),
                vad,
                accel,
            });
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            fps: self.fps,
            cameras: cams,
            persons,
            ground_truth: ground_truth.map(str::to_string),
            config_hash: None,
        };
        let p = dir.join("manifest.json");
        std::fs::write(&p, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(&p, e))?;
        Ok(manifest)
    }

    pub fn person(&self, id: &str) -> Option<&PersonData> {
        self.persons.iter().find(|p| p.id == id)
    }
}

//! Synthetic scenes with planted ground truth.

pub mod frames;
pub mod scene;

pub use frames::{gen_frames, render, Blob, FrameConfig, SynthFrames, Texture};
pub use scene::{
    agent_keypoints, gen_scene, person_id, CameraConfig, DescriptorConfig, GroundTruth, Region,
    SceneConfig, SynthScene, MARK_ORIGIN,
};

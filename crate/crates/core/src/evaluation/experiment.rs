//! Grouped cross-validation of every method on one dataset.
//!
//! Examples are prepared once (tracking, segmentation, candidate trajectories
//! with their distances to each upper-body part, contamination, acceleration
//! windows). Each outer fold then fits its own PCA/GMM codebook on training
//! descriptors, whitens the candidate universe once, caches sparse posteriors
//! and builds every method's Fisher vectors from that cache.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::analysis::{binned_auc, AnalysisRow, BinCurve};
use super::folds::{assert_disjoint, grouped_kfold};
use super::metrics::{mean, roc_auc, std_dev};
use crate::dataset::Dataset;
use crate::encoding::{normalize_fv, EncoderConfig, FisherModel, GmmConfig, GmmEval, NormOrder};
use crate::error::{Error, Result};
use crate::filtering::{
    contamination_segment, part_distances, select_by_distance, select_in_box, start_range,
    KeypointSubset, NUM_PARTS,
};
use crate::ingest::{segment_track, SegmentConfig};
use crate::learning::{
    cnn_train, fit_svm_cv, fuse_fit, normalize_window, platt_apply, train_svm, window_input,
    CnnConfig, SvmConfig, UNINFORMATIVE_PROBABILITY,
};
use crate::tracking::{build_tracks, TrackerConfig};

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "FV-Full")]
    FvFull,
    #[serde(rename = "FV-Sampled")]
    FvSampled,
    #[serde(rename = "FV-UpperBody")]
    FvUpperBody,
    #[serde(rename = "FV-HandsAndHead")]
    FvHandsAndHead,
    #[serde(rename = "CNN")]
    Cnn,
    #[serde(rename = "Multimodal")]
    Multimodal,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::FvFull,
        Method::FvSampled,
        Method::FvUpperBody,
        Method::FvHandsAndHead,
        Method::Cnn,
        Method::Multimodal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::FvFull => "FV-Full",
            Method::FvSampled => "FV-Sampled",
            Method::FvUpperBody => "FV-UpperBody",
            Method::FvHandsAndHead => "FV-HandsAndHead",
            Method::Cnn => "CNN",
            Method::Multimodal => "Multimodal",
        }
    }

    pub fn is_video(self) -> bool {
        matches!(
            self,
            Method::FvFull | Method::FvSampled | Method::FvUpperBody | Method::FvHandsAndHead
        )
    }

    pub fn subset(self) -> Option<KeypointSubset> {
        match self {
            Method::FvUpperBody => Some(KeypointSubset::UpperBody),
            Method::FvHandsAndHead => Some(KeypointSubset::HandsAndHead),
            _ => None,
        }
    }
}

fn benchmark_encoder() -> EncoderConfig {
    EncoderConfig {
        gmm: GmmConfig {
            components: 64,
            max_iter: 50,
            ..GmmConfig::default()
        },
        sample_size: 50_000,
        pca_sample_size: 10_000,
        ..EncoderConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub folds: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub segment: SegmentConfig,
    /// Tracker assignment threshold in pixels.
    pub tracker_d_th: f64,
    pub frame_window: u32,
    /// Padding (meters) of the upper-body box used for FV-Full and contamination.
    pub box_pad: f64,
    pub sample_probability: f64,
    /// Candidate reference radii (pixels) for the keypoint filters.
    pub radius_grid: Vec<f64>,
    /// Fixed λ while the radius is tuned on a grouped holdout.
    pub tuning_lambda: f64,
    pub tuning_folds: usize,
    /// Video method whose scores are fused with the accelerometer.
    pub fusion_video: Method,
    pub encoder: EncoderConfig,
    pub svm: SvmConfig,
    pub cnn: CnnConfig,
    pub cnn_inner_folds: usize,
    /// Posteriors below this are dropped from the cached soft assignments.
    pub posterior_floor: f64,
    pub bins: usize,
    pub min_bin_examples: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            folds: 10,
            seed: 0,
            methods: Method::ALL.to_vec(),
            segment: SegmentConfig::default(),
            tracker_d_th: 40.0,
            frame_window: 1,
            box_pad: 0.15,
            sample_probability: 0.34,
            radius_grid: vec![16.0, 24.0, 32.0, 48.0, 64.0],
            tuning_lambda: 1e-4,
            tuning_folds: 4,
            fusion_video: Method::FvHandsAndHead,
            encoder: benchmark_encoder(),
            svm: SvmConfig::default(),
            cnn: CnnConfig::default(),
            cnn_inner_folds: 3,
            posterior_floor: 1e-5,
            bins: 10,
            min_bin_examples: 20,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.folds < 2 || self.tuning_folds < 2 || self.cnn_inner_folds < 2 {
            return Err(Error::Config("fold counts must be at least 2".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("no methods requested".into()));
        }
        if self.radius_grid.is_empty() || self.radius_grid.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config(
                "radius grid must be non-empty and positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.sample_probability) {
            return Err(Error::Config("sample probability outside [0, 1]".into()));
        }
        if !self.fusion_video.is_video() {
            return Err(Error::Config("fusion_video must be an FV method".into()));
        }
        if !(self.tuning_lambda > 0.0) || !(self.posterior_floor >= 0.0) || !(self.box_pad >= 0.0) {
            return Err(Error::Config(
                "tuning λ, posterior floor and box pad must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn wants(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }
}

/// One labelled segment and everything the methods need from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub person: String,
    pub camera: usize,
    pub group: String,
    pub start_frame: u32,
    pub label: bool,
    pub contamination: Option<f64>,
    /// Trajectories starting in the segment that are inside the padded box or
    /// within the largest grid radius of some part (indices into the camera list).
    pub candidates: Vec<u32>,
    pub in_box: Vec<bool>,
    pub distances: Vec<[f32; NUM_PARTS]>,
    /// Normalised, flattened acceleration window.
    pub accel: Option<Vec<f64>>,
}

/// Tracks every camera, cuts segments and gathers per-segment candidates.
pub fn prepare_examples(ds: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<Example>> {
    let tracker = TrackerConfig::for_fps(cfg.tracker_d_th, ds.fps);
    tracker.validate()?;
    let max_r = cfg.radius_grid.iter().copied().fold(0.0, f64::max);
    let mut out = Vec::new();
    for (ci, cam) in ds.cameras.iter().enumerate() {
        let tracking = build_tracks(&cam.poses, &tracker)?;
        if tracking.dropped_poses > 0 {
            log::info!(
                "{}: {} poses could not join a track",
                cam.id,
                tracking.dropped_poses
            );
        }
        let tracks = &tracking.tracks;
        let mut jobs = Vec::new();
        for track in tracks {
            let Some(pid) = track.majority_person() else {
                continue;
            };
            let Some(person) = ds.person(&pid) else {
                log::warn!(
                    "{}: track {} belongs to unknown person {pid}",
                    cam.id,
                    track.track_id
                );
                continue;
            };
            for seg in segment_track(
                track,
                &pid,
                &cam.id,
                &person.vad,
                person.accel.as_ref(),
                ds.fps,
                &cfg.segment,
            )? {
                jobs.push((track, seg));
            }
        }
        let examples: Vec<Example> = jobs
            .par_iter()
            .map(|(track, seg)| {
                let frames = seg.start_frame..seg.start_frame + seg.n_frames as u32;
                let range = start_range(&cam.trajectories, frames.clone());
                let slice = &cam.trajectories[range.clone()];
                let boxed: BTreeSet<usize> =
                    select_in_box(slice, track, &cam.homography, cfg.box_pad)
                        .into_iter()
                        .collect();
                let dist = part_distances(slice, track, &cam.homography, cfg.frame_window);
                let mut candidates = Vec::new();
                let mut in_box = Vec::new();
                let mut distances = Vec::new();
                for (i, d) in dist.iter().enumerate() {
                    let inside = boxed.contains(&i);
                    if inside || d.iter().any(|&v| v < max_r) {
                        candidates.push((range.start + i) as u32);
                        in_box.push(inside);
                        distances.push(d.map(|v| v as f32));
                    }
                }
                let contamination =
                    contamination_segment(track, frames, tracks, &cam.homography, cfg.box_pad).ok();
                let accel = seg
                    .accel_window
                    .as_ref()
                    .map(|w| window_input(&normalize_window(w)));
                Example {
                    id: format!(
                        "{}/{}/t{}/f{}",
                        cam.id, seg.person_id, seg.track_id, seg.start_frame
                    ),
                    person: seg.person_id.clone(),
                    camera: ci,
                    group: seg.group_key.clone(),
                    start_frame: seg.start_frame,
                    label: seg.label == 1,
                    contamination,
                    candidates,
                    in_box,
                    distances,
                    accel,
                }
            })
            .collect();
        out.extend(examples);
    }
    if out.is_empty() {
        return Err(Error::EmptyInput(
            "no labelled segments in the dataset".into(),
        ));
    }
    Ok(out)
}

/// Which trajectories of an example a method encodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Selection {
    Full,
    Sampled {
        probability: f64,
        seed: u64,
    },
    Keypoints {
        mask: [bool; NUM_PARTS],
        radius: f64,
    },
}

impl Selection {
    /// Positions within `e.candidates` that are selected. `index` seeds the
    /// per-example sampling stream.
    pub fn pick(&self, e: &Example, index: usize) -> Vec<usize> {
        match *self {
            Selection::Full => (0..e.candidates.len()).filter(|&i| e.in_box[i]).collect(),
            Selection::Sampled { probability, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(index as u64);
                (0..e.candidates.len())
                    .filter(|&i| e.in_box[i] && rng.random_bool(probability))
                    .collect()
            }
            Selection::Keypoints { mask, radius } => {
                let radii = [radius; NUM_PARTS];
                (0..e.candidates.len())
                    .filter(|&i| select_by_distance(&e.distances[i].map(f64::from), &radii, &mask))
                    .collect()
            }
        }
    }
}

impl ExperimentConfig {
    /// Selection a video method uses; keypoint methods take `radius`.
    pub fn selection(&self, m: Method, radius: f64) -> Option<Selection> {
        match m {
            Method::FvFull => Some(Selection::Full),
            Method::FvSampled => Some(Selection::Sampled {
                probability: self.sample_probability,
                seed: self.seed ^ 0x5A3D_1E55,
            }),
            Method::FvUpperBody | Method::FvHandsAndHead => Some(Selection::Keypoints {
                mask: m.subset()?.mask(),
                radius,
            }),
            Method::Cnn | Method::Multimodal => None,
        }
    }
}

/// PCA + GMM codebook on the in-box trajectories of `rows` (each trajectory once).
pub fn fit_codebook(
    ds: &Dataset,
    examples: &[Example],
    rows: &[usize],
    enc: &EncoderConfig,
) -> Result<FisherModel> {
    let mut seen = BTreeSet::new();
    for &i in rows {
        let e = &examples[i];
        for (c, &inside) in e.candidates.iter().zip(&e.in_box) {
            if inside {
                seen.insert((e.camera, *c));
            }
        }
    }
    let descs: Vec<&[f32]> = seen
        .iter()
        .map(|&(cam, t)| {
            ds.cameras[cam].trajectories[t as usize]
                .descriptor
                .as_slice()
        })
        .collect();
    FisherModel::fit(&descs, enc)
}

/// Whitened candidate descriptors with sparse soft assignments, for one codebook.
pub struct FvCache<'a> {
    eval: &'a GmmEval,
    alpha: f64,
    order: NormOrder,
    /// Per camera, row of each trajectory in the cache.
    rows: Vec<BTreeMap<u32, usize>>,
    whitened: Vec<f64>,
    posteriors: Vec<Vec<(u32, f64)>>,
}

impl<'a> FvCache<'a> {
    pub fn build(
        model: &FisherModel,
        eval: &'a GmmEval,
        ds: &Dataset,
        examples: &[Example],
        floor: f64,
    ) -> Self {
        let mut rows: Vec<BTreeMap<u32, usize>> = vec![BTreeMap::new(); ds.cameras.len()];
        let mut order = Vec::new();
        for e in examples {
            for &c in &e.candidates {
                let next = order.len();
                if let std::collections::btree_map::Entry::Vacant(v) = rows[e.camera].entry(c) {
                    v.insert(next);
                    order.push((e.camera, c));
                }
            }
        }
        let proj = model.pca.projector();
        let d = proj.output_dims();
        let k = model.k;
        // Whitened rows plus sparse posteriors per chunk.
        type Chunk = (Vec<f64>, Vec<Vec<(u32, f64)>>);
        let chunks: Vec<Chunk> = order
            .par_chunks(1024)
            .map(|chunk| {
                let mut w = vec![0.0; chunk.len() * d];
                let mut post = Vec::with_capacity(chunk.len());
                let mut gamma = vec![0.0; k];
                for (r, &(cam, t)) in chunk.iter().enumerate() {
                    let y = &mut w[r * d..(r + 1) * d];
                    proj.apply_f32(&ds.cameras[cam].trajectories[t as usize].descriptor, y);
                    eval.posteriors_into(y, &mut gamma);
                    post.push(
                        gamma
                            .iter()
                            .enumerate()
                            .filter(|(_, &g)| g > floor)
                            .map(|(i, &g)| (i as u32, g))
                            .collect(),
                    );
                }
                (w, post)
            })
            .collect();
        let mut whitened = Vec::with_capacity(order.len() * d);
        let mut posteriors = Vec::with_capacity(order.len());
        for (w, p) in chunks {
            whitened.extend(w);
            posteriors.extend(p);
        }
        FvCache {
            eval,
            alpha: model.alpha,
            order: model.norm_order,
            rows,
            whitened,
            posteriors,
        }
    }

    /// Normalised Fisher vector of the selected candidates; `None` when empty.
    pub fn encode(&self, e: &Example, picked: &[usize]) -> Result<Option<Vec<f64>>> {
        if picked.is_empty() {
            return Ok(None);
        }
        let (k, d) = (self.eval.k, self.eval.d);
        let mut g_mu = vec![0.0; k * d];
        let mut g_sigma = vec![0.0; k * d];
        for &i in picked {
            let r = self.rows[e.camera][&e.candidates[i]];
            let x = &self.whitened[r * d..(r + 1) * d];
            for &(c, g) in &self.posteriors[r] {
                let c = c as usize;
                let mu = &self.eval.means[c * d..(c + 1) * d];
                let isd = &self.eval.inv_sd[c * d..(c + 1) * d];
                for j in 0..d {
                    let z = (x[j] - mu[j]) * isd[j];
                    g_mu[c * d + j] += g * z;
                    g_sigma[c * d + j] += g * (z * z - 1.0);
                }
            }
        }
        let t = picked.len() as f64;
        for c in 0..k {
            let a = 1.0 / (t * self.eval.sqrt_w[c]);
            let b = a / std::f64::consts::SQRT_2;
            for j in 0..d {
                g_mu[c * d + j] *= a;
                g_sigma[c * d + j] *= b;
            }
        }
        g_mu.extend(g_sigma);
        Ok(Some(normalize_fv(g_mu, self.alpha, self.order)?.values))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRow {
    pub method: Method,
    /// Test AUC per outer fold; `None` when the fold had a single class.
    pub fold_auc: Vec<Option<f64>>,
    pub mean_auc: Option<f64>,
    pub std_auc: Option<f64>,
    /// Test examples scored over all folds.
    pub n_examples: usize,
    pub trajectories_mean: Option<f64>,
    pub trajectories_std: Option<f64>,
    /// Chosen filter radius per fold (keypoint methods).
    pub radius: Vec<Option<f64>>,
    /// Chosen SVM λ per fold (FV methods).
    pub lambda: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub folds: usize,
    pub n_examples: usize,
    pub n_positive: usize,
    pub n_groups: usize,
    pub n_with_accel: usize,
    pub methods: Vec<MethodRow>,
    pub contamination_curves: Vec<BinCurve>,
    pub trajectory_curves: Vec<BinCurve>,
    /// Mean AUC against GMM size, when a sweep was run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub gmm_sweep: Vec<SweepPoint>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub components: usize,
    pub method: Method,
    pub mean_auc: Option<f64>,
    pub std_auc: Option<f64>,
}

impl Report {
    pub fn row(&self, m: Method) -> Option<&MethodRow> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Pooled out-of-fold test score of one example under one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub example: String,
    pub group: String,
    pub fold: usize,
    pub method: Method,
    pub label: bool,
    pub score: f64,
    pub contamination: Option<f64>,
    pub n_trajectories: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub report: Report,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone, Default)]
struct MethodFold {
    auc: Option<f64>,
    /// (example, score, selected trajectory count)
    scores: Vec<(usize, f64, Option<usize>)>,
    radius: Option<f64>,
    lambda: Option<f64>,
}

#[derive(Debug, Clone, Default)]
struct FoldResult {
    methods: BTreeMap<Method, MethodFold>,
    notes: Vec<String>,
}

fn both_classes(y: &[bool]) -> bool {
    y.iter().any(|&l| l) && !y.iter().all(|&l| l)
}

fn auc_of(idx: &[usize], scores: &[f64], examples: &[Example]) -> Option<f64> {
    let labels: Vec<bool> = idx.iter().map(|&i| examples[i].label).collect();
    roc_auc(scores, &labels).ok()
}

fn fold_seed(seed: u64, fold: usize, salt: u64) -> u64 {
    seed ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

struct Fitted {
    test_scores: Vec<f64>,
    /// Calibrated out-of-fold scores of the training examples.
    train_oof: Vec<f64>,
    lambda: f64,
}

/// Fits the SVM on the training examples that have a Fisher vector, then
/// scores the test examples (empty sets get the uninformative probability).
fn fit_and_score(
    fvs: &[Option<Vec<f64>>],
    train: &[usize],
    test: &[usize],
    examples: &[Example],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Option<Fitted>> {
    let rows: Vec<usize> = train
        .iter()
        .copied()
        .filter(|&i| fvs[i].is_some())
        .collect();
    let y: Vec<bool> = rows.iter().map(|&i| examples[i].label).collect();
    if !both_classes(&y) {
        return Ok(None);
    }
    let groups: Vec<&str> = rows.iter().map(|&i| examples[i].group.as_str()).collect();
    let all_groups: Vec<&str> = examples.iter().map(|e| e.group.as_str()).collect();
    assert_disjoint(&all_groups, &rows, test, "SVM")?;
    let x: Vec<&[f64]> = rows.iter().map(|&i| fvs[i].as_deref().unwrap()).collect();
    let fit = fit_svm_cv(&x, &y, &groups, &cfg.svm, seed)?;
    let m = &fit.model;
    let test_scores = test
        .iter()
        .map(|&i| {
            fvs[i]
                .as_deref()
                .map_or(UNINFORMATIVE_PROBABILITY, |v| m.probability(v))
        })
        .collect();
    let mut train_oof = vec![UNINFORMATIVE_PROBABILITY; examples.len()];
    for (&i, &margin) in rows.iter().zip(&fit.oof_margins) {
        train_oof[i] = platt_apply(m.platt_a, m.platt_b, margin);
    }
    let train_oof = train.iter().map(|&i| train_oof[i]).collect();
    Ok(Some(Fitted {
        test_scores,
        train_oof,
        lambda: m.l2_lambda,
    }))
}

/// Radius with the best holdout AUC on a grouped split of the training
/// examples, at a fixed λ; ties go to the smaller radius.
fn tune_radius(
    cache: &FvCache,
    mask: [bool; NUM_PARTS],
    train: &[usize],
    examples: &[Example],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<f64> {
    let groups: Vec<&str> = train.iter().map(|&i| examples[i].group.as_str()).collect();
    let plan = grouped_kfold(&groups, cfg.tuning_folds, seed)?;
    let (inner, hold) = plan.split(&groups, 0)?;
    let (inner, hold): (Vec<usize>, Vec<usize>) = (
        inner.iter().map(|&i| train[i]).collect(),
        hold.iter().map(|&i| train[i]).collect(),
    );
    let mut best = (f64::NEG_INFINITY, cfg.radius_grid[0]);
    let mut grid = cfg.radius_grid.clone();
    grid.sort_by(f64::total_cmp);
    for &radius in &grid {
        let sel = Selection::Keypoints { mask, radius };
        let fv = |i: usize| cache.encode(&examples[i], &sel.pick(&examples[i], i));
        let rows: Vec<(usize, Vec<f64>)> = inner
            .iter()
            .filter_map(|&i| fv(i).transpose().map(|v| v.map(|v| (i, v))))
            .collect::<Result<_>>()?;
        let y: Vec<bool> = rows.iter().map(|r| examples[r.0].label).collect();
        if !both_classes(&y) {
            continue;
        }
        let x: Vec<&[f64]> = rows.iter().map(|r| r.1.as_slice()).collect();
        let model = train_svm(&x, &y, cfg.tuning_lambda, cfg.svm.epochs, seed)?;
        let scores: Vec<f64> = hold
            .iter()
            .map(|&i| Ok(fv(i)?.map_or(0.0, |v| model.margin(&v))))
            .collect::<Result<_>>()?;
        if let Some(a) = auc_of(&hold, &scores, examples) {
            if a > best.0 {
                best = (a, radius);
            }
        }
    }
    Ok(best.1)
}

struct CnnScores {
    test: Vec<f64>,
    /// Out-of-fold accelerometer scores of the training examples with accel.
    oof: BTreeMap<usize, f64>,
}

/// Ensemble of inner-fold CNNs: each is early-stopped on its own held-out
/// inner fold, which also yields out-of-fold scores for fusion.
fn cnn_scores(
    train: &[usize],
    test: &[usize],
    examples: &[Example],
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<Option<CnnScores>> {
    let train: Vec<usize> = train
        .iter()
        .copied()
        .filter(|&i| examples[i].accel.is_some())
        .collect();
    let test: Vec<usize> = test
        .iter()
        .copied()
        .filter(|&i| examples[i].accel.is_some())
        .collect();
    let y: Vec<bool> = train.iter().map(|&i| examples[i].label).collect();
    if !both_classes(&y) || test.is_empty() {
        return Ok(None);
    }
    let groups: Vec<&str> = train.iter().map(|&i| examples[i].group.as_str()).collect();
    let plan = grouped_kfold(&groups, cfg.cnn_inner_folds, seed)?;
    let all_groups: Vec<&str> = examples.iter().map(|e| e.group.as_str()).collect();
    let mut test_sum = vec![0.0; test.len()];
    let mut models = 0usize;
    let mut oof = BTreeMap::new();
    for f in 0..cfg.cnn_inner_folds {
        let (a, b) = plan.split(&groups, f)?;
        let fit: Vec<usize> = a.iter().map(|&i| train[i]).collect();
        let val: Vec<usize> = b.iter().map(|&i| train[i]).collect();
        assert_disjoint(&all_groups, &fit, &test, "CNN")?;
        let pack = |idx: &[usize]| -> Vec<(Vec<f64>, bool)> {
            idx.iter()
                .map(|&i| (examples[i].accel.clone().unwrap(), examples[i].label))
                .collect()
        };
        let tr = pack(&fit);
        if !both_classes(&tr.iter().map(|e| e.1).collect::<Vec<_>>()) {
            continue;
        }
        let (model, _) = cnn_train(&tr, &pack(&val), &cfg.cnn, seed ^ f as u64)?;
        for &i in &val {
            oof.insert(i, model.predict_proba(examples[i].accel.as_ref().unwrap())?);
        }
        for (s, &i) in test_sum.iter_mut().zip(&test) {
            *s += model.predict_proba(examples[i].accel.as_ref().unwrap())?;
        }
        models += 1;
    }
    if models == 0 {
        return Ok(None);
    }
    Ok(Some(CnnScores {
        test: test_sum.iter().map(|s| s / models as f64).collect(),
        oof,
    }))
}

fn run_fold(
    fold: usize,
    ds: &Dataset,
    examples: &[Example],
    train: &[usize],
    test: &[usize],
    cfg: &ExperimentConfig,
) -> Result<FoldResult> {
    let groups: Vec<&str> = examples.iter().map(|e| e.group.as_str()).collect();
    assert_disjoint(&groups, train, test, &format!("outer fold {fold}"))?;
    let mut res = FoldResult::default();
    let video: Vec<Method> = cfg
        .methods
        .iter()
        .copied()
        .filter(|m| m.is_video())
        .chain(cfg.wants(Method::Multimodal).then_some(cfg.fusion_video))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut video_fits: BTreeMap<Method, Fitted> = BTreeMap::new();
    if !video.is_empty() {
        // Codebook from the training examples' in-box trajectories only.
        let mut enc = cfg.encoder.clone();
        enc.gmm.seed = fold_seed(cfg.seed, fold, 1);
        let model = fit_codebook(ds, examples, train, &enc)?;
        let eval = model.gmm.evaluator();
        let cache = FvCache::build(&model, &eval, ds, examples, cfg.posterior_floor);
        for &m in &video {
            let seed = fold_seed(cfg.seed, fold, 10 + m as u64);
            let radius = match m.subset() {
                Some(s) => Some(tune_radius(&cache, s.mask(), train, examples, cfg, seed)?),
                None => None,
            };
            let sel = cfg
                .selection(m, radius.unwrap_or(0.0))
                .expect("video method");
            let picks: Vec<Vec<usize>> = examples
                .par_iter()
                .enumerate()
                .map(|(i, e)| sel.pick(e, i))
                .collect();
            let fvs: Vec<Option<Vec<f64>>> = examples
                .par_iter()
                .zip(&picks)
                .map(|(e, p)| cache.encode(e, p))
                .collect::<Result<_>>()?;
            match fit_and_score(&fvs, train, test, examples, cfg, seed)? {
                Some(fit) => {
                    let mf = MethodFold {
                        auc: auc_of(test, &fit.test_scores, examples),
                        scores: test
                            .iter()
                            .zip(&fit.test_scores)
                            .map(|(&i, &s)| (i, s, Some(picks[i].len())))
                            .collect(),
                        radius,
                        lambda: Some(fit.lambda),
                    };
                    if mf.auc.is_none() {
                        res.notes
                            .push(format!("fold {fold}: {} test AUC undefined", m.name()));
                    }
                    if cfg.wants(m) {
                        res.methods.insert(m, mf);
                    }
                    video_fits.insert(m, fit);
                }
                None => res.notes.push(format!(
                    "fold {fold}: {} skipped, training set has one class",
                    m.name()
                )),
            }
        }
    }
    if cfg.wants(Method::Cnn) || cfg.wants(Method::Multimodal) {
        let seed = fold_seed(cfg.seed, fold, 20);
        let accel_test: Vec<usize> = test
            .iter()
            .copied()
            .filter(|&i| examples[i].accel.is_some())
            .collect();
        match cnn_scores(train, test, examples, cfg, seed)? {
            Some(cnn) => {
                if cfg.wants(Method::Cnn) {
                    res.methods.insert(
                        Method::Cnn,
                        MethodFold {
                            auc: auc_of(&accel_test, &cnn.test, examples),
                            scores: accel_test
                                .iter()
                                .zip(&cnn.test)
                                .map(|(&i, &s)| (i, s, None))
                                .collect(),
                            ..Default::default()
                        },
                    );
                }
                if cfg.wants(Method::Multimodal) {
                    if let Some(v) = video_fits.get(&cfg.fusion_video) {
                        let pos: BTreeMap<usize, usize> =
                            train.iter().enumerate().map(|(p, &i)| (i, p)).collect();
                        let pairs: Vec<(f64, f64, bool)> = cnn
                            .oof
                            .iter()
                            .map(|(&i, &a)| (v.train_oof[pos[&i]], a, examples[i].label))
                            .collect();
                        let vs: Vec<f64> = pairs.iter().map(|p| p.0).collect();
                        let acc: Vec<f64> = pairs.iter().map(|p| p.1).collect();
                        let ys: Vec<bool> = pairs.iter().map(|p| p.2).collect();
                        if both_classes(&ys) {
                            let fusion = fuse_fit(&vs, &acc, &ys)?;
                            let vtest: BTreeMap<usize, f64> = test
                                .iter()
                                .copied()
                                .zip(v.test_scores.iter().copied())
                                .collect();
                            let fused: Vec<f64> = accel_test
                                .iter()
                                .zip(&cnn.test)
                                .map(|(i, &a)| fusion.apply(vtest[i], a))
                                .collect();
                            res.methods.insert(
                                Method::Multimodal,
                                MethodFold {
                                    auc: auc_of(&accel_test, &fused, examples),
                                    scores: accel_test
                                        .iter()
                                        .zip(&fused)
                                        .map(|(&i, &s)| (i, s, None))
                                        .collect(),
                                    ..Default::default()
                                },
                            );
                        }
                    }
                }
            }
            None => res
                .notes
                .push(format!("fold {fold}: accelerometer models skipped")),
        }
    }
    Ok(res)
}

fn opt_stats(v: &[f64]) -> (Option<f64>, Option<f64>) {
    match v.len() {
        0 => (None, None),
        1 => (Some(v[0]), None),
        _ => (Some(mean(v)), Some(std_dev(v))),
    }
}

/// Runs every requested method under grouped k-fold CV on prepared examples.
pub fn run_experiment(
    ds: &Dataset,
    examples: &[Example],
    cfg: &ExperimentConfig,
) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let groups: Vec<&str> = examples.iter().map(|e| e.group.as_str()).collect();
    let plan = grouped_kfold(&groups, cfg.folds, cfg.seed)?;
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..cfg.folds)
        .map(|f| plan.split(&groups, f))
        .collect::<Result<_>>()?;
    let results: Vec<FoldResult> = splits
        .par_iter()
        .enumerate()
        .map(|(f, (train, test))| run_fold(f, ds, examples, train, test, cfg))
        .collect::<Result<_>>()?;

    let mut methods = Vec::new();
    let mut predictions = Vec::new();
    let mut contamination_curves = Vec::new();
    let mut trajectory_curves = Vec::new();
    let mut notes: Vec<String> = results
        .iter()
        .flat_map(|r| r.notes.iter().cloned())
        .collect();
    for &m in Method::ALL.iter().filter(|m| cfg.wants(**m)) {
        let per: Vec<Option<&MethodFold>> = results.iter().map(|r| r.methods.get(&m)).collect();
        let fold_auc: Vec<Option<f64>> = per.iter().map(|p| p.and_then(|p| p.auc)).collect();
        let defined: Vec<f64> = fold_auc.iter().flatten().copied().collect();
        let (mean_auc, std_auc) = opt_stats(&defined);
        let mut rows_c = Vec::new();
        let mut rows_t = Vec::new();
        let mut counts = Vec::new();
        for (f, p) in per.iter().enumerate() {
            let Some(p) = p else { continue };
            for &(i, score, n) in &p.scores {
                let e = &examples[i];
                if let Some(c) = e.contamination {
                    rows_c.push(AnalysisRow {
                        score,
                        label: e.label,
                        value: c,
                    });
                }
                if let Some(n) = n {
                    counts.push(n as f64);
                    rows_t.push(AnalysisRow {
                        score,
                        label: e.label,
                        value: n as f64,
                    });
                }
                predictions.push(Prediction {
                    example: e.id.clone(),
                    group: e.group.clone(),
                    fold: f,
                    method: m,
                    label: e.label,
                    score,
                    contamination: e.contamination,
                    n_trajectories: n,
                });
            }
        }
        let (trajectories_mean, trajectories_std) = opt_stats(&counts);
        contamination_curves.push(binned_auc(
            m.name(),
            "contamination",
            &rows_c,
            cfg.bins,
            cfg.min_bin_examples,
        ));
        if m.is_video() {
            trajectory_curves.push(binned_auc(
                m.name(),
                "trajectories",
                &rows_t,
                cfg.bins,
                cfg.min_bin_examples,
            ));
        }
        if defined.is_empty() {
            notes.push(format!("{}: no fold produced an AUC", m.name()));
        }
        methods.push(MethodRow {
            method: m,
            n_examples: per.iter().flatten().map(|p| p.scores.len()).sum(),
            fold_auc,
            mean_auc,
            std_auc,
            trajectories_mean,
            trajectories_std,
            radius: per.iter().map(|p| p.and_then(|p| p.radius)).collect(),
            lambda: per.iter().map(|p| p.and_then(|p| p.lambda)).collect(),
        });
    }
    for c in contamination_curves.iter().chain(&trajectory_curves) {
        let n = c.bins.iter().filter(|b| b.auc.is_none()).count();
        if n > 0 {
            notes.push(format!(
                "{} by {}: {n} bin(s) suppressed",
                c.method, c.variable
            ));
        }
    }
    let n_groups = groups.iter().collect::<BTreeSet<_>>().len();
    let report = Report {
        version: REPORT_VERSION,
        config_hash: String::new(),
        seed: cfg.seed,
        folds: cfg.folds,
        n_examples: examples.len(),
        n_positive: examples.iter().filter(|e| e.label).count(),
        n_groups,
        n_with_accel: examples.iter().filter(|e| e.accel.is_some()).count(),
        methods,
        contamination_curves,
        trajectory_curves,
        gmm_sweep: Vec::new(),
        notes,
    };
    Ok(ExperimentOutput {
        report,
        predictions,
    })
}

/// Reruns the requested video methods once per GMM size, same folds and seed.
pub fn gmm_sweep(
    ds: &Dataset,
    examples: &[Example],
    cfg: &ExperimentConfig,
    sizes: &[usize],
) -> Result<Vec<SweepPoint>> {
    let methods: Vec<Method> = cfg
        .methods
        .iter()
        .copied()
        .filter(|m| m.is_video())
        .collect();
    if methods.is_empty() {
        return Err(Error::Config(
            "a GMM sweep needs at least one FV method".into(),
        ));
    }
    let mut out = Vec::new();
    for &k in sizes {
        let mut c = cfg.clone();
        c.methods = methods.clone();
        c.encoder.gmm.components = k;
        let r = run_experiment(ds, examples, &c)?.report;
        for row in r.methods {
            out.push(SweepPoint {
                components: k,
                method: row.method,
                mean_auc: row.mean_auc,
                std_auc: row.std_auc,
            });
        }
    }
    Ok(out)
}

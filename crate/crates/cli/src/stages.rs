//! One function per subcommand. Each reads its inputs from the dataset or
//! output directory, writes its artifacts atomically and returns a short
//! human summary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crowdspeak::dataset::{Dataset, Manifest};
use crowdspeak::encoding::FisherModel;
use crowdspeak::evaluation::{
    fit_codebook, gmm_sweep, grouped_kfold, prepare_examples, roc_auc, run_experiment, Example,
    FvCache, Method, Report,
};
use crowdspeak::learning::{
    cnn_train, fit_svm_cv, fuse_fit, AccelCnn, CnnConfig, FusionModel, LinearSvm,
    UNINFORMATIVE_PROBABILITY,
};
use crowdspeak::synth::{gen_frames, gen_scene, FrameConfig};
use crowdspeak::tracking::{build_tracks, TrackerConfig};
use crowdspeak::trajectories::io::write_trajectories;
use crowdspeak::trajectories::{estimate_flow, extract as extract_trajectories, GrayImage};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::artifacts::{read_fv_matrix, read_stamp, write_atomic, write_fv_matrix, Stamped};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Context {
    pub fn new(cfg: RunConfig) -> Self {
        let hash = cfg.hash();
        Context { cfg, hash }
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.cfg.output.join(name)
    }

    fn dataset(&self) -> Result<Dataset> {
        let m = self.cfg.data.join("manifest.json");
        if !m.exists() {
            return Err(CliError::MissingInput {
                path: m,
                msg: "no dataset manifest (run `synth` or point `data` at one)".into(),
            });
        }
        Ok(Dataset::load(&self.cfg.data)?)
    }

    /// Loads a stamped artifact, refusing one produced by another config.
    fn load<T: serde::de::DeserializeOwned>(&self, name: &str, made_by: &str) -> Result<T> {
        let path = self.out(name);
        if !path.exists() {
            return Err(CliError::MissingInput {
                path,
                msg: format!("missing; run `{made_by}` first"),
            });
        }
        let s: Stamped<T> = Stamped::load(&path)?;
        self.check(&path, &s.config_hash)?;
        Ok(s.body)
    }

    fn check(&self, path: &Path, hash: &str) -> Result<()> {
        if hash != self.hash {
            return Err(CliError::HashMismatch(format!(
                "{}: {hash}\ncurrent config: {}",
                path.display(),
                self.hash
            )));
        }
        Ok(())
    }

    fn examples(&self) -> Result<Vec<Example>> {
        self.load("examples.json", "filter")
    }
}

pub fn slug(m: Method) -> String {
    m.name().to_ascii_lowercase()
}

pub fn synth(ctx: &Context) -> Result<String> {
    let cfg = &ctx.cfg;
    let scene = gen_scene(&cfg.synth)?;
    let data = &cfg.data;
    if data.exists() && !data.join("manifest.json").exists() {
        return Err(CliError::Validation(format!(
            "{} exists and is not a dataset; refusing to replace it",
            data.display()
        )));
    }
    let mut staging = data.clone().into_os_string();
    staging.push(".partial");
    let staging = PathBuf::from(staging);
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(|e| CliError::io(&staging, e))?;
    }
    let mut manifest = scene.save(&staging)?;
    manifest.config_hash = Some(ctx.hash.clone());
    let mut extra = String::new();
    if cfg.frames.enabled {
        let fc = FrameConfig {
            scene: cfg.synth.clone(),
            width: cfg.frames.width,
            height: cfg.frames.height,
            blob_radius: cfg.frames.blob_radius,
            max_frames: cfg.frames.max_frames,
        };
        let rendered = gen_frames(&fc)?;
        let cam = &mut manifest.cameras[0];
        let rel = format!("{}/frames", cam.id);
        let dir = staging.join(&rel);
        std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
        for (i, f) in rendered.frames.iter().enumerate() {
            save_png(&dir.join(format!("{i:06}.png")), f)?;
        }
        cam.frames = Some(rel);
        cam.frame_scale = Some(1280.0 / cfg.frames.width as f64);
        extra = format!(
            ", {} frames at {}x{}",
            rendered.frames.len(),
            cfg.frames.width,
            cfg.frames.height
        );
    }
    manifest.save(&staging.join("manifest.json"))?;
    if data.exists() {
        std::fs::remove_dir_all(data).map_err(|e| CliError::io(data, e))?;
    }
    std::fs::rename(&staging, data).map_err(|e| CliError::io(data, e))?;
    let ds = &scene.dataset;
    Ok(format!(
        "{}: {} persons, {} frames, {} trajectories{extra}",
        data.display(),
        ds.persons.len(),
        ds.cameras[0].poses.len(),
        ds.cameras[0].trajectories.len()
    ))
}

fn save_png(path: &Path, img: &GrayImage) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes)
        .expect("buffer size");
    buf.save(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

fn load_png(path: &Path) -> Result<GrayImage> {
    let img = image::open(path)
        .map_err(|e| CliError::BadInput {
            path: path.into(),
            msg: e.to_string(),
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(GrayImage::new(
        w as usize,
        h as usize,
        img.into_raw()
            .into_iter()
            .map(|v| v as f32 / 255.0)
            .collect(),
    )?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrackSummary {
    pub track_id: u32,
    pub start_frame: u32,
    pub n_frames: usize,
    pub n_interpolated: usize,
    pub person: Option<String>,
    /// Changes of labelled identity along the track.
    pub identity_switches: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CameraTracks {
    pub camera: String,
    pub dropped_poses: usize,
    pub tracks: Vec<TrackSummary>,
}

pub fn track(ctx: &Context) -> Result<String> {
    let ds = ctx.dataset()?;
    let tracker = TrackerConfig::for_fps(ctx.cfg.experiment.tracker_d_th, ds.fps);
    let mut out = Vec::new();
    for cam in &ds.cameras {
        let r = build_tracks(&cam.poses, &tracker)?;
        let tracks = r
            .tracks
            .iter()
            .map(|t| {
                let ids: Vec<&String> = t.poses.iter().filter_map(|p| p.person.as_ref()).collect();
                TrackSummary {
                    track_id: t.track_id,
                    start_frame: t.start_frame,
                    n_frames: t.len(),
                    n_interpolated: t.interpolated.iter().filter(|&&b| b).count(),
                    person: t.majority_person(),
                    identity_switches: ids.windows(2).filter(|w| w[0] != w[1]).count(),
                }
            })
            .collect();
        out.push(CameraTracks {
            camera: cam.id.clone(),
            dropped_poses: r.dropped_poses,
            tracks,
        });
    }
    Stamped::new(&ctx.hash, "track", &out).save(&ctx.out("tracks.json"))?;
    let n: usize = out.iter().map(|c| c.tracks.len()).sum();
    let sw: usize = out
        .iter()
        .flat_map(|c| &c.tracks)
        .map(|t| t.identity_switches)
        .sum();
    Ok(format!(
        "{n} tracks over {} camera(s), {sw} identity switches",
        out.len()
    ))
}

pub fn extract(ctx: &Context) -> Result<String> {
    let mpath = ctx.cfg.data.join("manifest.json");
    let mut manifest = Manifest::load(&mpath).map_err(|e| match e {
        crowdspeak::Error::Io { path, source } => CliError::io(path, source),
        e => e.into(),
    })?;
    let mut lines = Vec::new();
    for cam in manifest.cameras.iter_mut() {
        let Some(rel) = cam.frames.clone() else {
            continue;
        };
        let dir = ctx.cfg.data.join(&rel);
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| CliError::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "png"))
            .collect();
        files.sort();
        let frames: Vec<GrayImage> = files
            .par_iter()
            .map(|p| load_png(p))
            .collect::<Result<_>>()?;
        let flows = frames
            .par_windows(2)
            .map(|w| estimate_flow(&w[0], &w[1]))
            .collect::<crowdspeak::Result<Vec<_>>>()?;
        let mut trajs = extract_trajectories(&frames, &flows, &ctx.cfg.extract)?;
        let s = cam.frame_scale.unwrap_or(1.0) as f32;
        for t in &mut trajs {
            for p in &mut t.points {
                *p = [p[0] * s, p[1] * s];
            }
        }
        trajs.sort_by_key(|t| t.start_frame);
        let target = format!("{}/traj.bin", cam.id);
        let mut bytes = Vec::new();
        write_trajectories(&mut bytes, &trajs)?;
        write_atomic(&ctx.cfg.data.join(&target), &bytes)?;
        cam.trajectories = Some(target);
        lines.push(format!(
            "{}: {} frames -> {} trajectories",
            cam.id,
            frames.len(),
            trajs.len()
        ));
    }
    if lines.is_empty() {
        return Err(CliError::MissingInput {
            path: mpath,
            msg: "no camera lists a frames directory".into(),
        });
    }
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(crowdspeak::Error::from)?;
    write_atomic(&mpath, &bytes)?;
    Ok(lines.join("\n"))
}

pub fn filter(ctx: &Context) -> Result<String> {
    let ds = ctx.dataset()?;
    let examples = prepare_examples(&ds, &ctx.cfg.experiment)?;
    let bytes = serde_json::to_vec(&Stamped::new(&ctx.hash, "filter", &examples))
        .map_err(crowdspeak::Error::from)?;
    write_atomic(&ctx.out("examples.json"), &bytes)?;
    let m = ctx.cfg.stages.method;
    let sel = ctx
        .cfg
        .experiment
        .selection(m, ctx.cfg.stages.radius)
        .expect("video method");
    let n = examples.len() as f64;
    let boxed: f64 = examples
        .iter()
        .map(|e| e.in_box.iter().filter(|&&b| b).count() as f64)
        .sum::<f64>()
        / n;
    let kept: f64 = examples
        .iter()
        .enumerate()
        .map(|(i, e)| sel.pick(e, i).len() as f64)
        .sum::<f64>()
        / n;
    Ok(format!(
        "{} examples ({} speaking); mean trajectories per example: {boxed:.1} in box, {kept:.1} kept by {}",
        examples.len(),
        examples.iter().filter(|e| e.label).count(),
        m.name()
    ))
}

pub fn fit_fv(ctx: &Context) -> Result<String> {
    let ds = ctx.dataset()?;
    let examples = ctx.examples()?;
    let mut enc = ctx.cfg.experiment.encoder.clone();
    enc.gmm.seed ^= ctx.cfg.seed;
    let all: Vec<usize> = (0..examples.len()).collect();
    let model = fit_codebook(&ds, &examples, &all, &enc)?;
    Stamped::new(&ctx.hash, "fit-fv", &model).save(&ctx.out("fv_model.json"))?;
    Ok(format!(
        "PCA {} -> {} dims, GMM with {} components",
        model.d, model.d_prime, model.k
    ))
}

pub fn encode(ctx: &Context) -> Result<String> {
    let ds = ctx.dataset()?;
    let examples = ctx.examples()?;
    let model: FisherModel = ctx.load("fv_model.json", "fit-fv")?;
    let eval = model.gmm.evaluator();
    let cache = FvCache::build(
        &model,
        &eval,
        &ds,
        &examples,
        ctx.cfg.experiment.posterior_floor,
    );
    let m = ctx.cfg.stages.method;
    let sel = ctx
        .cfg
        .experiment
        .selection(m, ctx.cfg.stages.radius)
        .expect("video method");
    let fvs: Vec<Option<Vec<f64>>> = examples
        .par_iter()
        .enumerate()
        .map(|(i, e)| cache.encode(e, &sel.pick(e, i)))
        .collect::<crowdspeak::Result<_>>()?;
    let name = format!("fv_{}.bin", slug(m));
    write_fv_matrix(&ctx.out(&name), &ctx.hash, model.fv_dims(), &fvs)?;
    let empty = fvs.iter().filter(|v| v.is_none()).count();
    Ok(format!(
        "{name}: {} examples x {} dims ({empty} with no trajectories)",
        fvs.len(),
        model.fv_dims()
    ))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedSvm {
    pub method: Method,
    pub model: LinearSvm,
    /// Mean inner-CV AUC per λ.
    pub cv_auc: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedCnn {
    pub config: CnnConfig,
    pub params: Vec<f64>,
    pub best_epoch: usize,
    pub validation_auc: Option<f64>,
}

impl TrainedCnn {
    pub fn model(&self) -> Result<AccelCnn> {
        let mut m = AccelCnn::new(self.config.clone(), 0)?;
        if m.params.len() != self.params.len() {
            return Err(CliError::Validation(
                "CNN parameter count does not match its config".into(),
            ));
        }
        m.params.clone_from(&self.params);
        Ok(m)
    }
}

fn both(y: &[bool]) -> bool {
    y.iter().any(|&v| v) && !y.iter().all(|&v| v)
}

pub fn train(ctx: &Context) -> Result<String> {
    let examples = ctx.examples()?;
    let m = ctx.cfg.stages.method;
    let fv_name = format!("fv_{}.bin", slug(m));
    let fv_path = ctx.out(&fv_name);
    if !fv_path.exists() {
        return Err(CliError::MissingInput {
            path: fv_path,
            msg: "missing; run `encode` first".into(),
        });
    }
    let fv = read_fv_matrix(&fv_path)?;
    ctx.check(&fv_path, &fv.config_hash)?;
    if fv.rows.len() != examples.len() {
        return Err(CliError::Validation(format!(
            "{fv_name} has {} rows for {} examples",
            fv.rows.len(),
            examples.len()
        )));
    }
    let rows: Vec<usize> = (0..examples.len())
        .filter(|&i| fv.rows[i].is_some())
        .collect();
    let x: Vec<&[f64]> = rows
        .iter()
        .map(|&i| fv.rows[i].as_deref().unwrap())
        .collect();
    let y: Vec<bool> = rows.iter().map(|&i| examples[i].label).collect();
    let groups: Vec<&str> = rows.iter().map(|&i| examples[i].group.as_str()).collect();
    let fit = fit_svm_cv(&x, &y, &groups, &ctx.cfg.experiment.svm, ctx.cfg.seed)?;
    let mut lines = vec![format!(
        "{}: λ = {:e} on {} examples",
        m.name(),
        fit.model.l2_lambda,
        rows.len()
    )];
    let body = TrainedSvm {
        method: m,
        model: fit.model,
        cv_auc: fit.cv_auc,
    };
    Stamped::new(&ctx.hash, "train", &body).save(&ctx.out(&format!("svm_{}.json", slug(m))))?;

    // Accelerometer CNN, early-stopped on one grouped inner fold.
    let accel: Vec<usize> = (0..examples.len())
        .filter(|&i| examples[i].accel.is_some())
        .collect();
    let labels: Vec<bool> = accel.iter().map(|&i| examples[i].label).collect();
    if both(&labels) {
        let exp = &ctx.cfg.experiment;
        let groups: Vec<&str> = accel.iter().map(|&i| examples[i].group.as_str()).collect();
        let plan = grouped_kfold(&groups, exp.cnn_inner_folds, ctx.cfg.seed)?;
        let (fit_idx, val_idx) = plan.split(&groups, 0)?;
        let pack = |idx: &[usize]| -> Vec<(Vec<f64>, bool)> {
            idx.iter()
                .map(|&p| {
                    (
                        examples[accel[p]].accel.clone().unwrap(),
                        examples[accel[p]].label,
                    )
                })
                .collect()
        };
        let val = pack(&val_idx);
        let (model, trace) = cnn_train(&pack(&fit_idx), &val, &exp.cnn, ctx.cfg.seed)?;
        let scores: Vec<f64> = val
            .iter()
            .map(|v| model.predict_proba(&v.0))
            .collect::<crowdspeak::Result<_>>()?;
        let vy: Vec<bool> = val.iter().map(|v| v.1).collect();
        let validation_auc = roc_auc(&scores, &vy).ok();
        let body = TrainedCnn {
            config: model.config.clone(),
            params: model.params.clone(),
            best_epoch: trace.best_epoch,
            validation_auc,
        };
        Stamped::new(&ctx.hash, "train", &body).save(&ctx.out("cnn.json"))?;
        lines.push(format!(
            "CNN: best epoch {}, validation AUC {}",
            trace.best_epoch,
            validation_auc.map_or("n/a".into(), |a| format!("{a:.3}"))
        ));
    } else {
        lines.push("CNN: skipped (no labelled acceleration with both classes)".into());
    }
    Ok(lines.join("\n"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub example: String,
    pub group: String,
    pub label: bool,
    pub score: f64,
}

fn score_auc(rows: &[ScoreRow]) -> Option<f64> {
    let s: Vec<f64> = rows.iter().map(|r| r.score).collect();
    let y: Vec<bool> = rows.iter().map(|r| r.label).collect();
    roc_auc(&s, &y).ok()
}

fn fmt_auc(a: Option<f64>) -> String {
    a.map_or("n/a".into(), |a| format!("{a:.3}"))
}

pub fn score(ctx: &Context) -> Result<String> {
    let examples = ctx.examples()?;
    let m = ctx.cfg.stages.method;
    let svm: TrainedSvm = ctx.load(&format!("svm_{}.json", slug(m)), "train")?;
    let fv_path = ctx.out(&format!("fv_{}.bin", slug(m)));
    let fv = read_fv_matrix(&fv_path)?;
    ctx.check(&fv_path, &fv.config_hash)?;
    let rows: Vec<ScoreRow> = examples
        .iter()
        .zip(&fv.rows)
        .map(|(e, v)| ScoreRow {
            example: e.id.clone(),
            group: e.group.clone(),
            label: e.label,
            score: v
                .as_deref()
                .map_or(UNINFORMATIVE_PROBABILITY, |v| svm.model.probability(v)),
        })
        .collect();
    let mut lines = vec![format!(
        "{}: {} scores, AUC {} (in-sample)",
        m.name(),
        rows.len(),
        fmt_auc(score_auc(&rows))
    )];
    Stamped::new(&ctx.hash, "score", &rows).save(&ctx.out(&format!("scores_{}.json", slug(m))))?;
    if ctx.out("cnn.json").exists() {
        let cnn: TrainedCnn = ctx.load("cnn.json", "train")?;
        let model = cnn.model()?;
        let rows: Vec<ScoreRow> = examples
            .iter()
            .filter_map(|e| {
                e.accel.as_ref().map(|a| {
                    Ok(ScoreRow {
                        example: e.id.clone(),
                        group: e.group.clone(),
                        label: e.label,
                        score: model.predict_proba(a)?,
                    })
                })
            })
            .collect::<crowdspeak::Result<_>>()?;
        lines.push(format!(
            "CNN: {} scores, AUC {} (in-sample)",
            rows.len(),
            fmt_auc(score_auc(&rows))
        ));
        Stamped::new(&ctx.hash, "score", &rows).save(&ctx.out("scores_cnn.json"))?;
    }
    Ok(lines.join("\n"))
}

pub fn fuse(ctx: &Context) -> Result<String> {
    let m = ctx.cfg.stages.method;
    let video: Vec<ScoreRow> = ctx.load(&format!("scores_{}.json", slug(m)), "score")?;
    let accel: Vec<ScoreRow> = ctx.load("scores_cnn.json", "score")?;
    let v: BTreeMap<&str, f64> = video
        .iter()
        .map(|r| (r.example.as_str(), r.score))
        .collect();
    let joined: Vec<(&ScoreRow, f64)> = accel
        .iter()
        .filter_map(|a| v.get(a.example.as_str()).map(|&s| (a, s)))
        .collect();
    if joined.is_empty() {
        return Err(CliError::Validation(
            "no example has both a video and an accelerometer score".into(),
        ));
    }
    let vs: Vec<f64> = joined.iter().map(|j| j.1).collect();
    let acc: Vec<f64> = joined.iter().map(|j| j.0.score).collect();
    let y: Vec<bool> = joined.iter().map(|j| j.0.label).collect();
    let model: FusionModel = fuse_fit(&vs, &acc, &y)?;
    Stamped::new(&ctx.hash, "fuse", &model).save(&ctx.out("fusion.json"))?;
    let fused: Vec<ScoreRow> = joined
        .iter()
        .map(|(a, s)| ScoreRow {
            score: model.apply(*s, a.score),
            ..(*a).clone()
        })
        .collect();
    Stamped::new(&ctx.hash, "fuse", &fused).save(&ctx.out("scores_multimodal.json"))?;
    Ok(format!(
        "fused {} examples, AUC {} (in-sample); w_video {:.3}, w_accel {:.3}, intercept {:.3}",
        fused.len(),
        fmt_auc(score_auc(&fused)),
        model.w_video,
        model.w_accel,
        model.intercept
    ))
}

pub fn evaluate(ctx: &Context) -> Result<String> {
    let ds = ctx.dataset()?;
    let cached = ctx.out("examples.json");
    let examples = if cached.exists() && read_stamp(&cached)? == ctx.hash {
        ctx.examples()?
    } else {
        prepare_examples(&ds, &ctx.cfg.experiment)?
    };
    let exp = &ctx.cfg.experiment;
    let out = run_experiment(&ds, &examples, exp)?;
    let mut report = out.report;
    report.config_hash = ctx.hash.clone();
    if !ctx.cfg.evaluate.gmm_sweep.is_empty() {
        report.gmm_sweep = gmm_sweep(&ds, &examples, exp, &ctx.cfg.evaluate.gmm_sweep)?;
    }
    let bytes = serde_json::to_vec_pretty(&report).map_err(crowdspeak::Error::from)?;
    write_atomic(&ctx.out("report.json"), &bytes)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for p in &out.predictions {
        w.serialize(p)
            .map_err(|e| CliError::Validation(e.to_string()))?;
    }
    let csv = w
        .into_inner()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    write_atomic(&ctx.out("predictions.csv"), &csv)?;
    let mut lines = vec![format!(
        "{} examples ({} speaking, {} groups, {} with acceleration), {}-fold grouped CV",
        report.n_examples, report.n_positive, report.n_groups, report.n_with_accel, report.folds
    )];
    for r in &report.methods {
        lines.push(format!(
            "  {:<16} AUC {} ± {}",
            r.method.name(),
            fmt_auc(r.mean_auc),
            r.std_auc.map_or("n/a".into(), |s| format!("{s:.3}"))
        ));
    }
    Ok(lines.join("\n"))
}

/// Hash of every stamped artifact present in the output directory.
pub fn artifact_hashes(dir: &Path) -> Result<Vec<(PathBuf, String)>> {
    let mut out = Vec::new();
    let Ok(entries) = std::fs::read_dir(dir) else {
        return Ok(out);
    };
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        match p.extension().and_then(|x| x.to_str()) {
            Some("json") => out.push((p.clone(), read_stamp(&p)?)),
            Some("bin")
                if p.file_name()
                    .is_some_and(|n| n.to_string_lossy().starts_with("fv_")) =>
            {
                out.push((p.clone(), read_fv_matrix(&p)?.config_hash))
            }
            _ => {}
        }
    }
    Ok(out)
}

pub fn report(ctx: &Context, force: bool) -> Result<String> {
    let path = ctx.out("report.json");
    if !path.exists() {
        return Err(CliError::MissingInput {
            path,
            msg: "missing; run `evaluate` first".into(),
        });
    }
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let report: Report = serde_json::from_str(&text).map_err(|e| CliError::BadInput {
        path: path.clone(),
        msg: e.to_string(),
    })?;
    let stale: Vec<String> = artifact_hashes(&ctx.cfg.output)?
        .into_iter()
        .filter(|(_, h)| *h != ctx.hash)
        .map(|(p, h)| format!("{}: {h}", p.display()))
        .collect();
    if !stale.is_empty() {
        let msg = format!("{}\ncurrent config: {}", stale.join("\n"), ctx.hash);
        if !force {
            return Err(CliError::HashMismatch(msg));
        }
        log::warn!("mixing artifacts from different configs (--force):\n{msg}");
    }
    let written = crate::report::write_all(
        &ctx.cfg.output,
        &report,
        Some(ctx.cfg.experiment.fusion_video),
    )?;
    Ok(format!("wrote {}", written.join(", ")))
}

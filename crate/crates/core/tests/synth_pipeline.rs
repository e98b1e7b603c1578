//! End-to-end checks of the generator against the pipeline that consumes it.

use crowdspeak::dataset::Dataset;
use crowdspeak::evaluation::{prepare_examples, spearman, ExperimentConfig};
use crowdspeak::ingest::{aggregate_label, body25, load_pose_frames};
use crowdspeak::synth::{gen_scene, Region, SceneConfig};
use crowdspeak::tracking::{build_tracks, TrackerConfig};

fn speaking(intervals: &[[f64; 2]], t: f64) -> bool {
    intervals.iter().any(|iv| t >= iv[0] && t < iv[1])
}

#[test]
fn saved_scene_round_trips_through_ingest() {
    let cfg = SceneConfig {
        n_agents: 3,
        duration: 10.0,
        fps: 10.0,
        seed: 4,
        ..Default::default()
    };
    let scene = gen_scene(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let manifest = scene.save(dir.path()).unwrap();
    assert_eq!(manifest.ground_truth.as_deref(), Some("ground_truth.json"));

    let poses = load_pose_frames(&dir.path().join(&manifest.cameras[0].poses)).unwrap();
    assert_eq!(poses.len(), 100);
    assert!(poses.values().all(|p| p.len() == 3));
    assert_eq!(poses, scene.dataset.cameras[0].poses);

    let back = Dataset::load(dir.path()).unwrap();
    assert_eq!(back.fps, scene.dataset.fps);
    assert_eq!(back.persons, scene.dataset.persons);
    let (a, b) = (&back.cameras[0], &scene.dataset.cameras[0]);
    assert_eq!(a.trajectories, b.trajectories);
    assert_eq!(a.calibration, b.calibration);
    let truth: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("ground_truth.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(
        truth["trajectory_source"].as_array().unwrap().len(),
        a.trajectories.len()
    );
}

#[test]
fn segment_labels_match_the_emitted_vad() {
    let cfg = SceneConfig {
        n_agents: 8,
        duration: 45.0,
        seed: 8,
        ..Default::default()
    };
    let scene = gen_scene(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    scene.save(dir.path()).unwrap();
    let ds = Dataset::load(dir.path()).unwrap();
    let ecfg = ExperimentConfig::default();
    let examples = prepare_examples(&ds, &ecfg).unwrap();
    assert!(examples.len() > 80);
    let mut positives = 0;
    for e in &examples {
        let start = e.start_frame as f64 / ds.fps;
        let vad = &ds.person(&e.person).unwrap().vad;
        let from_file =
            aggregate_label(vad, start, 3.0, ecfg.segment.label_threshold).unwrap() == 1;
        assert_eq!(e.label, from_file, "{}", e.id);
        // Independent recount from the planted intervals at 100 Hz.
        let iv = &scene.truth.speaking[&e.person];
        let on = (0..300)
            .filter(|&k| speaking(iv, (e.start_frame as usize * 10 + k) as f64 / 100.0))
            .count();
        assert_eq!(e.label, on as f64 >= 0.25 * 300.0, "{}", e.id);
        positives += usize::from(e.label);
    }
    assert!(positives > 0 && positives < examples.len());
}

#[test]
fn measured_contamination_tracks_the_planted_level() {
    let cfg = SceneConfig {
        n_agents: 24,
        duration: 72.0,
        contamination: 1.0,
        seed: 2,
        ..Default::default()
    };
    let scene = gen_scene(&cfg).unwrap();
    let examples = prepare_examples(&scene.dataset, &ExperimentConfig::default()).unwrap();
    let per = scene.truth.segment_frames;
    let (mut planted, mut measured) = (Vec::new(), Vec::new());
    for e in &examples {
        let (Some(m), Some(p)) = (
            e.contamination,
            scene.truth.contamination[&e.person].get(e.start_frame as usize / per),
        ) else {
            continue;
        };
        if (e.start_frame as usize).is_multiple_of(per) {
            planted.push(*p);
            measured.push(m);
        }
    }
    assert!(planted.len() >= 500, "{} segments", planted.len());
    let rho = spearman(&planted, &measured).unwrap();
    assert!(rho > 0.8, "spearman {rho}");
}

#[test]
fn separated_agents_keep_their_identities() {
    let d_th = 40.0;
    let cfg = SceneConfig {
        n_agents: 4,
        duration: 30.0,
        group_size: [1, 1],
        contamination: 0.0,
        seed: 11,
        ..Default::default()
    };
    let scene = gen_scene(&cfg).unwrap();
    let poses = &scene.dataset.cameras[0].poses;
    // Precondition: the planted agents never come within 3·d_th of each other.
    for frame in poses.values() {
        for (i, a) in frame.iter().enumerate() {
            for b in &frame[i + 1..] {
                if let (Some(p), Some(q)) = (a.keypoint(body25::NECK), b.keypoint(body25::NECK)) {
                    assert!((p[0] - q[0]).hypot(p[1] - q[1]) >= 3.0 * d_th);
                }
            }
        }
    }
    let result = build_tracks(poses, &TrackerConfig::for_fps(d_th, cfg.fps)).unwrap();
    let mut switches = 0;
    for t in &result.tracks {
        let ids: Vec<&String> = t.poses.iter().filter_map(|p| p.person.as_ref()).collect();
        switches += ids.windows(2).filter(|w| w[0] != w[1]).count();
    }
    assert_eq!(switches, 0);
    assert_eq!(result.tracks.len(), 4);
}

#[test]
fn in_box_counts_follow_planted_counts() {
    let cfg = SceneConfig {
        n_agents: 2,
        duration: 60.0,
        group_size: [1, 1],
        contamination: 0.0,
        seed: 9,
        ..Default::default()
    };
    let scene = gen_scene(&cfg).unwrap();
    let examples = prepare_examples(&scene.dataset, &ExperimentConfig::default()).unwrap();
    let source = &scene.truth.trajectory_source;
    let region = &scene.truth.trajectory_region;
    let trajs = &scene.dataset.cameras[0].trajectories;
    let per = scene.truth.segment_frames as u32;
    let agent = |pid: &str| pid.trim_start_matches('p').parse::<i32>().unwrap();
    assert!(examples.len() >= 30);
    for e in &examples {
        let a = agent(&e.person);
        let planted = (0..trajs.len())
            .filter(|&i| {
                let f = trajs[i].start_frame;
                source[i] == a
                    && region[i] != Region::Legs
                    && f >= e.start_frame
                    && f < e.start_frame + per
            })
            .count();
        let measured = e.in_box.iter().filter(|&&b| b).count();
        let rel = (measured as f64 - planted as f64).abs() / planted as f64;
        assert!(
            rel <= 0.10,
            "{}: measured {measured} vs planted {planted}",
            e.id
        );
    }
}

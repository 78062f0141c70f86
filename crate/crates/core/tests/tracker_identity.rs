use std::collections::BTreeMap;

use trackpred::synth::{corrupt_detections, default_camera, generate_scenario, NoiseModel, ScenarioSpec};
use trackpred::tracker::{identity_correspondence, Detection, Tracker, TrackerConfig};

fn run(noise: NoiseModel, seed: u64) -> trackpred::tracker::IdentityReport {
    let spec = ScenarioSpec {
        n_agents: 10,
        duration: 10.0,
        seed,
        ..ScenarioSpec::default()
    };
    let scene = generate_scenario(&spec).unwrap();
    let h = default_camera(spec.arena).unwrap();
    let dets = corrupt_detections(&scene, &noise, &h, spec.arena).unwrap();
    let mut by_frame: BTreeMap<i64, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        by_frame.entry(d.detection.frame_id).or_default().push(d.detection);
    }
    let mut tracker = Tracker::new(TrackerConfig {
        homography: h,
        ..TrackerConfig::default()
    })
    .unwrap();
    for f in 0..scene.frame_count as i64 {
        tracker.track_frame(f, by_frame.get(&f).map_or(&[][..], Vec::as_slice)).unwrap();
    }
    identity_correspondence(&scene.trajectories, &tracker.confirmed_trajectories(), 1.0)
}

#[test]
fn noise_free_identity_is_preserved() {
    for seed in 0..3 {
        let r = run(NoiseModel::default(), seed);
        assert!(r.truth_frames >= 2000, "{r:?}");
        assert_eq!(r.id_switches, 0, "{r:?}");
        assert!(r.accuracy() >= 0.99, "{r:?}");
    }
}

#[test]
fn noisy_detections_keep_coverage() {
    let noise = NoiseModel {
        position_sigma: 0.2,
        miss_rate: 0.1,
        seed: 5,
        ..NoiseModel::default()
    };
    let r = run(noise, 1);
    assert!(r.coverage() >= 0.9, "{r:?}");
}

//! End-to-end experiment: synthesize scenarios, corrupt them into
//! detections, track, cut samples, train, and benchmark on a clean test set.
//!
//! Layout of the output directory:
//!
//! ```text
//! config.txt                          effective configuration
//! camera.txt                          pixel-to-world homography
//! truth/scenario_NN.txt               ground-truth trajectories (+ .classes.csv)
//! tiers/sigma_S/scenario_NN.*         detections, tracked trajectories, classes
//! datasets/*.jsonl                    sample sets
//! models/*.ckpt, models/*.log.csv     checkpoints and training logs
//! report.txt, metrics.csv, curves.csv
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::dataset::{
    records_from_trajectories, window_samples, write_class_sidecar, write_samples, write_trajectory_file, Sample,
    SampleSet,
};
use crate::error::{Error, Result};
use crate::eval::{benchmark, Benchmark, ConstantVelocity, Forecaster, RvoRollout};
use crate::predictor::{train_with_progress, write_checkpoint, write_training_log, Checkpoint, ModelParams, TrainConfig};
use crate::state::Trajectory;
use crate::synth::{corrupt_detections, default_camera, generate_scenario, NoiseModel, Scenario, ScenarioSpec, SynthDetection};
use crate::tracker::{identity_correspondence, run_tracker, write_detections, Detection, IdentityReport, TrackerConfig};

/// Distance within which a track point is credited to a ground-truth agent
/// in the identity summary, meters.
const IDENTITY_GATE: f64 = 1.0;

/// Scenario `i` of a run.
pub fn scenario_spec(cfg: &RunConfig, i: usize) -> ScenarioSpec {
    ScenarioSpec {
        seed: cfg.synth.seed.wrapping_add(i as u64),
        ..cfg.synth.clone()
    }
}

/// Shuffles scenario indices with `seed` and cuts them into train,
/// validation and test lists. Every list is sorted; test is never empty.
pub fn split_scenarios(n: usize, train_fraction: f64, val_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let n_val = ((n as f64 * val_fraction).round() as usize).min(n.saturating_sub(n_train + 1));
    let mut train = idx[..n_train].to_vec();
    let mut val = idx[n_train..n_train + n_val].to_vec();
    let mut test = idx[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    (train, val, test)
}

pub fn group_by_frame(dets: &[SynthDetection]) -> BTreeMap<i64, Vec<Detection>> {
    let mut out: BTreeMap<i64, Vec<Detection>> = BTreeMap::new();
    for d in dets {
        out.entry(d.detection.frame_id).or_default().push(d.detection.clone());
    }
    out
}

/// Confirmed tracks with short dropouts interpolated and long ones split.
pub fn track_detections(cfg: &TrackerConfig, detections: &BTreeMap<i64, Vec<Detection>>, max_gap: i64) -> Result<Vec<Trajectory>> {
    let tracker = run_tracker(cfg.clone(), detections)?;
    Ok(tracker
        .confirmed_trajectories()
        .iter()
        .flat_map(|t| t.repair_gaps(max_gap))
        .collect())
}

fn class_map(trajs: &[Trajectory]) -> BTreeMap<u64, crate::agent::AgentClass> {
    trajs.iter().map(|t| (t.agent_id, t.class)).collect()
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).map_err(|e| Error::io(p, e))
}

fn tier_label(sigma: f64) -> String {
    format!("sigma_{sigma:.2}")
}

struct TrainedModel {
    method: String,
    source: String,
    params: ModelParams,
}

/// Outcome of a full run.
pub struct PipelineOutcome {
    pub report: String,
    pub benchmark: Benchmark,
    /// Column of each benchmark method in the report grid.
    pub sources: Vec<String>,
    pub out_dir: PathBuf,
}

fn samples_for(
    scenarios: &[usize],
    trajectories: &[Vec<Trajectory>],
    cfg: &RunConfig,
) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for &i in scenarios {
        let first = out.len() as u64;
        out.extend(window_samples(&trajectories[i], &cfg.synth.classes, &cfg.window, first)?);
    }
    Ok(out)
}

fn train_model(
    name: &str,
    train: &[Sample],
    val: &[Sample],
    cfg: &RunConfig,
    tcfg: &TrainConfig,
    models_dir: &Path,
    log: &mut dyn FnMut(&str),
) -> Result<ModelParams> {
    let outcome = train_with_progress(train, val, &cfg.window, tcfg, |e| {
        log(&format!("  {name} epoch {} train {:.4} val {:.4}", e.epoch, e.train_loss, e.val_loss))
    })?;
    write_checkpoint(
        &models_dir.join(format!("{name}.ckpt")),
        &Checkpoint {
            params: outcome.params.clone(),
            train: Some(tcfg.clone()),
            seed: tcfg.seed,
        },
    )?;
    write_training_log(&models_dir.join(format!("{name}.log.csv")), &outcome.log)?;
    Ok(outcome.params)
}

/// Runs every stage, writing artifacts under `out`. `log` receives progress
/// lines; the returned report is deterministic given the configuration.
pub fn run_pipeline(cfg: &RunConfig, out: &Path, log: &mut dyn FnMut(&str)) -> Result<PipelineOutcome> {
    cfg.validate()?;
    ensure_dir(out)?;
    write_text(&out.join("config.txt"), &cfg.to_text())?;
    let camera = default_camera(cfg.synth.arena).map_err(Error::stage("synth"))?;
    camera.write(&out.join("camera.txt"))?;
    let mut report = String::new();

    // Ground truth.
    let truth_dir = out.join("truth");
    ensure_dir(&truth_dir)?;
    let n = cfg.pipeline.scenarios;
    let mut scenarios: Vec<Scenario> = Vec::with_capacity(n);
    for i in 0..n {
        let sc = generate_scenario(&scenario_spec(cfg, i)).map_err(Error::stage("synth"))?;
        write_trajectory_file(&truth_dir.join(format!("scenario_{i:02}.txt")), &records_from_trajectories(&sc.trajectories))?;
        write_class_sidecar(&truth_dir.join(format!("scenario_{i:02}.classes.csv")), &sc.classes)?;
        log(&format!("synth: scenario {i} with {} agents", sc.trajectories.len()));
        scenarios.push(sc);
    }
    let peak = scenarios
        .iter()
        .map(|s| s.peak_density(1000.0_f64.min(cfg.synth.arena.0)))
        .fold(0.0, f64::max);
    let (train_ids, val_ids, test_ids) =
        split_scenarios(n, cfg.pipeline.train_fraction, cfg.pipeline.val_fraction, cfg.synth.seed);
    let _ = writeln!(report, "scenarios: {n} (train {:?}, val {:?}, test {:?})", train_ids, val_ids, test_ids);
    let _ = writeln!(report, "peak density: {peak:.1} agents/km");

    // Clean samples.
    let data_dir = out.join("datasets");
    ensure_dir(&data_dir)?;
    let truth_trajs: Vec<Vec<Trajectory>> = scenarios.iter().map(|s| s.trajectories.clone()).collect();
    let build = |ids: &[usize], trajs: &[Vec<Trajectory>]| samples_for(ids, trajs, cfg).map_err(Error::stage("dataset"));
    let truth_train = build(&train_ids, &truth_trajs)?;
    let truth_val = build(&val_ids, &truth_trajs)?;
    let test = build(&test_ids, &truth_trajs)?;
    for (name, set) in [("truth_train", &truth_train), ("truth_val", &truth_val), ("test", &test)] {
        write_samples(
            &data_dir.join(format!("{name}.jsonl")),
            &SampleSet {
                config: cfg.window.clone(),
                samples: set.clone(),
            },
        )?;
    }
    let _ = writeln!(
        report,
        "samples: train {}, val {}, test {}",
        truth_train.len(),
        truth_val.len(),
        test.len()
    );
    if truth_train.is_empty() || test.is_empty() {
        return Err(Error::stage("dataset")(Error::EmptyDataset));
    }

    let models_dir = out.join("models");
    ensure_dir(&models_dir)?;
    let mut models: Vec<TrainedModel> = Vec::new();
    let interaction_cfg = TrainConfig {
        ego_only: false,
        ..cfg.train.clone()
    };
    let ego_cfg = TrainConfig {
        ego_only: true,
        ..cfg.train.clone()
    };
    log("train: interaction model on ground truth");
    let params = train_model("interaction_truth", &truth_train, &truth_val, cfg, &interaction_cfg, &models_dir, log)
        .map_err(Error::stage("train"))?;
    models.push(TrainedModel {
        method: "interaction".into(),
        source: "truth".into(),
        params,
    });
    log("train: ego-only model on ground truth");
    let params =
        train_model("ego_only_truth", &truth_train, &truth_val, cfg, &ego_cfg, &models_dir, log).map_err(Error::stage("train"))?;
    models.push(TrainedModel {
        method: "ego-only".into(),
        source: "truth".into(),
        params,
    });

    // Noisy tiers: detections, tracking, samples, a model each.
    let tracker_cfg = TrackerConfig {
        homography: camera,
        ..cfg.tracker.clone()
    };
    for &sigma in &cfg.pipeline.noise_tiers {
        let label = tier_label(sigma);
        let tier_dir = out.join("tiers").join(&label);
        ensure_dir(&tier_dir)?;
        let noise = NoiseModel {
            position_sigma: sigma,
            ..cfg.noise
        };
        let mut tracked: Vec<Vec<Trajectory>> = vec![Vec::new(); n];
        let mut identity = IdentityReport::default();
        for &i in train_ids.iter().chain(&val_ids) {
            let noise_i = NoiseModel {
                seed: noise.seed.wrapping_add(i as u64),
                ..noise
            };
            let dets = corrupt_detections(&scenarios[i], &noise_i, &camera, cfg.synth.arena).map_err(Error::stage("corrupt"))?;
            write_detections(
                &tier_dir.join(format!("scenario_{i:02}.detections.csv")),
                dets.iter().map(|d| &d.detection),
                0,
            )?;
            let trajs = track_detections(&tracker_cfg, &group_by_frame(&dets), cfg.pipeline.max_gap).map_err(Error::stage("track"))?;
            write_trajectory_file(&tier_dir.join(format!("scenario_{i:02}.tracks.txt")), &records_from_trajectories(&trajs))?;
            write_class_sidecar(&tier_dir.join(format!("scenario_{i:02}.tracks.classes.csv")), &class_map(&trajs))?;
            let r = identity_correspondence(&scenarios[i].trajectories, &trajs, IDENTITY_GATE);
            identity.truth_frames += r.truth_frames;
            identity.matched_frames += r.matched_frames;
            identity.correct_frames += r.correct_frames;
            identity.id_switches += r.id_switches;
            tracked[i] = trajs;
        }
        let train = build(&train_ids, &tracked)?;
        let val = build(&val_ids, &tracked)?;
        write_samples(
            &data_dir.join(format!("{label}_train.jsonl")),
            &SampleSet {
                config: cfg.window.clone(),
                samples: train.clone(),
            },
        )?;
        let _ = writeln!(
            report,
            "tier {label}: coverage {:.3}, identity accuracy {:.3}, id switches {}, train samples {}",
            identity.coverage(),
            identity.accuracy(),
            identity.id_switches,
            train.len()
        );
        log(&format!("train: interaction model on {label}"));
        if train.is_empty() {
            return Err(Error::stage("dataset")(Error::EmptyDataset));
        }
        let params = train_model(&format!("interaction_{label}"), &train, &val, cfg, &interaction_cfg, &models_dir, log)
            .map_err(Error::stage("train"))?;
        models.push(TrainedModel {
            method: "interaction".into(),
            source: label,
            params,
        });
    }

    // Benchmark on the clean test set.
    log("bench: evaluating on the test set");
    let rollout = RvoRollout(cfg.rollout_params());
    let mut names: Vec<String> = vec!["constant-velocity".into(), "rvo-rollout".into()];
    let mut sources: Vec<String> = vec!["-".into(), "-".into()];
    let mut methods: Vec<&dyn Forecaster> = vec![&ConstantVelocity, &rollout];
    for m in &models {
        names.push(if m.source == "truth" {
            m.method.clone()
        } else {
            format!("{}@{}", m.method, m.source)
        });
        sources.push(m.source.clone());
        methods.push(&m.params);
    }
    let pairs: Vec<(&str, &dyn Forecaster)> = names.iter().map(String::as_str).zip(methods).collect();
    let bench = benchmark(&test, &pairs, cfg.window.fps, &cfg.horizons);
    write_text(&out.join("metrics.csv"), &bench.render_csv())?;
    write_text(&out.join("curves.csv"), &bench.render_curve_csv())?;

    let _ = writeln!(report);
    report.push_str(&render_grid(&bench, &models, &cfg.pipeline.noise_tiers));
    if let Some(failed) = bench.outcomes.iter().find_map(|o| o.as_ref().err()) {
        let _ = writeln!(report, "\n{failed}");
    }
    write_text(&out.join("report.txt"), &report)?;
    Ok(PipelineOutcome {
        report,
        benchmark: bench,
        sources,
        out_dir: out.to_path_buf(),
    })
}

/// Method rows by training-data columns, cells "ADE/FDE".
fn render_grid(bench: &Benchmark, models: &[TrainedModel], tiers: &[f64]) -> String {
    let mut columns = vec!["truth".to_string()];
    columns.extend(tiers.iter().map(|&s| tier_label(s)));
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    for base in ["constant-velocity", "rvo-rollout"] {
        let mut cells = vec!["-".to_string(); columns.len()];
        cells[0] = bench.report(base).map_or("failed".into(), |r| r.cell());
        rows.push((base.to_string(), cells));
    }
    let mut methods: Vec<&str> = Vec::new();
    for m in models {
        if !methods.contains(&m.method.as_str()) {
            methods.push(&m.method);
        }
    }
    for method in methods {
        let cells = columns
            .iter()
            .map(|col| {
                let name = if col == "truth" {
                    method.to_string()
                } else {
                    format!("{method}@{col}")
                };
                if models.iter().any(|m| m.method == method && &m.source == col) {
                    bench.report(&name).map_or("failed".into(), |r| r.cell())
                } else {
                    "-".into()
                }
            })
            .collect();
        rows.push((method.to_string(), cells));
    }
    let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("method".len());
    let widths: Vec<usize> = (0..columns.len())
        .map(|j| rows.iter().map(|r| r.1[j].len()).max().unwrap_or(0).max(columns[j].len()))
        .collect();
    let mut out = String::new();
    let mut header = format!("{:<w0$}", "method");
    for (c, w) in columns.iter().zip(&widths) {
        let _ = write!(header, "  {c:<w$}");
    }
    let _ = writeln!(out, "{}", header.trim_end());
    for (name, cells) in rows {
        let mut line = format!("{name:<w0$}");
        for (c, w) in cells.iter().zip(&widths) {
            let _ = write!(line, "  {c:<w$}");
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    out.push_str(crate::eval::METRIC_NOTE);
    out
}

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use trackpred::config::RunConfig;
use trackpred::dataset::{
    parse_trajectory_file, read_class_sidecar, read_samples, records_from_trajectories, trajectories_from_records,
    window_samples, write_class_sidecar, write_samples, write_trajectory_file, SampleSet,
};
use trackpred::eval::{
    benchmark, evaluate, prediction_records, read_prediction_file, write_prediction_file, ConstantVelocity, Forecaster,
    PredictionTable, RvoRollout,
};
use trackpred::geometry::Homography;
use trackpred::pipeline::{run_pipeline, scenario_spec};
use trackpred::predictor::{read_checkpoint, train_with_progress, write_checkpoint, write_training_log, Checkpoint, ModelParams};
use trackpred::synth::{corrupt_detections, default_camera, generate_scenario};
use trackpred::tracker::{read_detections, run_tracker, trajectory_records, write_detections, TrackerConfig};
use trackpred::{Error, Result};

#[derive(Parser)]
#[command(name = "trackpred", version, about = "Track road agents, build forecasting datasets, train and benchmark predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Configuration file of `section.key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed applied to every random stage
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Override a configuration key, `key=value`; repeatable
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario and its noisy detections
    #[command(after_help = RunConfig::describe(&["core", "synth", "classes", "orca", "noise"]))]
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Track detections into a trajectory file
    #[command(after_help = RunConfig::describe(&["core", "tracker", "classes", "orca"]))]
    Track {
        #[command(flatten)]
        common: Common,
        /// Detection file
        #[arg(long)]
        detections: PathBuf,
        /// Pixel-to-world homography file; identity when omitted
        #[arg(long)]
        homography: Option<PathBuf>,
    },
    /// Cut a trajectory file into samples
    #[command(name = "make-dataset", after_help = RunConfig::describe(&["core", "dataset", "classes"]))]
    MakeDataset {
        #[command(flatten)]
        common: Common,
        /// Trajectory file
        #[arg(long)]
        trajectories: PathBuf,
        /// `vehicle_id,class` sidecar
        #[arg(long)]
        classes: Option<PathBuf>,
        /// First sample id
        #[arg(long, default_value_t = 0)]
        first_id: u64,
    },
    /// Train the interaction model
    #[command(after_help = RunConfig::describe(&["train"]))]
    Train {
        #[command(flatten)]
        common: Common,
        /// Training sample file
        #[arg(long)]
        train: PathBuf,
        /// Validation sample file
        #[arg(long)]
        val: Option<PathBuf>,
    },
    /// Write forecasts for a sample file
    #[command(after_help = RunConfig::describe(&["classes", "orca"]))]
    Predict {
        #[command(flatten)]
        common: Common,
        /// Sample file
        #[arg(long)]
        samples: PathBuf,
        /// Model checkpoint; forecasts with a baseline when omitted
        #[arg(long)]
        model: Option<PathBuf>,
        /// Baseline used without a model: `cv` or `rvo`
        #[arg(long, default_value = "cv")]
        baseline: String,
    },
    /// Score a prediction file against a sample file
    #[command(after_help = RunConfig::describe(&["eval"]))]
    Eval {
        #[command(flatten)]
        common: Common,
        /// Sample file
        #[arg(long)]
        samples: PathBuf,
        /// Prediction file
        #[arg(long)]
        predictions: PathBuf,
        /// Method name used in the outputs
        #[arg(long, default_value = "predictions")]
        name: String,
    },
    /// Compare baselines, checkpoints and prediction files on one sample set
    #[command(after_help = RunConfig::describe(&["eval", "classes", "orca"]))]
    Bench {
        #[command(flatten)]
        common: Common,
        /// Sample file
        #[arg(long)]
        samples: PathBuf,
        /// `name=path` of a model checkpoint; repeatable
        #[arg(long = "model", value_name = "NAME=PATH")]
        models: Vec<String>,
        /// `name=path` of a prediction file; repeatable
        #[arg(long = "predictions", value_name = "NAME=PATH")]
        predictions: Vec<String>,
        /// Skip the constant-velocity and rollout baselines
        #[arg(long)]
        no_baselines: bool,
    },
    /// Run synth, corrupt, track, dataset, train and bench end to end
    #[command(after_help = RunConfig::describe(&[
        "core", "synth", "classes", "orca", "noise", "tracker", "dataset", "train", "eval", "pipeline",
    ]))]
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    for kv in &c.overrides {
        cfg.apply_override(kv)?;
    }
    if let Some(seed) = c.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(c: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&c.out).map_err(|e| Error::Io {
        path: c.out.clone(),
        source: e,
    })?;
    Ok(&c.out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn named_path(spec: &str) -> Result<(String, PathBuf)> {
    let (name, path) = spec
        .split_once('=')
        .ok_or_else(|| Error::InvalidArgument(format!("`{spec}` is not name=path")))?;
    Ok((name.to_string(), PathBuf::from(path)))
}

fn cmd_synth(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = out_dir(common)?;
    let scenario = generate_scenario(&scenario_spec(&cfg, 0))?;
    let camera = default_camera(cfg.synth.arena)?;
    let dets = corrupt_detections(&scenario, &cfg.noise, &camera, cfg.synth.arena)?;
    write_trajectory_file(&out.join("truth.txt"), &records_from_trajectories(&scenario.trajectories))?;
    write_class_sidecar(&out.join("truth.classes.csv"), &scenario.classes)?;
    write_detections(&out.join("detections.csv"), dets.iter().map(|d| &d.detection), 0)?;
    camera.write(&out.join("camera.txt"))?;
    println!("agents: {}", scenario.trajectories.len());
    println!("frames: {}", scenario.frame_count);
    println!("detections: {}", dets.len());
    println!(
        "peak density: {:.1} agents/km",
        scenario.peak_density(1000.0_f64.min(cfg.synth.arena.0))
    );
    Ok(())
}

fn cmd_track(common: &Common, detections: &Path, homography: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let dets = read_detections(detections)?;
    let h = match homography {
        Some(p) => Homography::read(p)?,
        None => Homography::identity(),
    };
    let out = out_dir(common)?;
    let frames = dets
        .first_key_value()
        .zip(dets.last_key_value())
        .map_or(0, |((a, _), (b, _))| b - a + 1);
    let tracker = run_tracker(
        TrackerConfig {
            homography: h,
            ..cfg.tracker
        },
        &dets,
    )?;
    let tracks: Vec<_> = tracker.all_tracks().into_iter().filter(|t| t.was_confirmed).collect();
    let records = trajectory_records(tracks.iter().copied());
    write_trajectory_file(&out.join("trajectories.txt"), &records)?;
    let classes: BTreeMap<_, _> = tracks.iter().map(|t| (t.id, t.class)).collect();
    write_class_sidecar(&out.join("trajectories.classes.csv"), &classes)?;
    let mean_len = if tracks.is_empty() {
        0.0
    } else {
        records.len() as f64 / tracks.len() as f64
    };
    println!("frames: {frames}");
    println!("tracks: {}", tracks.len());
    println!("mean track length: {mean_len:.1} frames");
    Ok(())
}

fn cmd_make_dataset(common: &Common, trajectories: &Path, classes: Option<&Path>, first_id: u64) -> Result<()> {
    let cfg = load_config(common)?;
    let records = parse_trajectory_file(trajectories)?;
    let class_map = match classes {
        Some(p) => read_class_sidecar(p)?,
        None => Default::default(),
    };
    let trajs: Vec<_> = trajectories_from_records(&records, &class_map)?
        .iter()
        .flat_map(|t| t.repair_gaps(cfg.pipeline.max_gap))
        .collect();
    let samples = window_samples(&trajs, &cfg.synth.classes, &cfg.window, first_id)?;
    let out = out_dir(common)?;
    write_samples(
        &out.join("samples.jsonl"),
        &SampleSet {
            config: cfg.window.clone(),
            samples: samples.clone(),
        },
    )?;
    println!("agents: {}", class_map.len().max(trajs.iter().map(|t| t.agent_id).collect::<std::collections::BTreeSet<_>>().len()));
    println!("samples: {}", samples.len());
    Ok(())
}

fn cmd_train(common: &Common, train: &Path, val: Option<&Path>) -> Result<()> {
    let cfg = load_config(common)?;
    let train_set = read_samples(train)?;
    let val_set = match val {
        Some(p) => {
            let v = read_samples(p)?;
            if v.config != train_set.config {
                return Err(Error::InvalidArgument(format!(
                    "{} was built with a different dataset configuration",
                    p.display()
                )));
            }
            v.samples
        }
        None => Vec::new(),
    };
    let out = out_dir(common)?;
    let outcome = train_with_progress(&train_set.samples, &val_set, &train_set.config, &cfg.train, |e| {
        eprintln!("epoch {} train {:.4} val {:.4}", e.epoch, e.train_loss, e.val_loss)
    })?;
    write_checkpoint(
        &out.join("model.ckpt"),
        &Checkpoint {
            params: outcome.params,
            train: Some(cfg.train.clone()),
            seed: cfg.train.seed,
        },
    )?;
    write_training_log(&out.join("training_log.csv"), &outcome.log)?;
    println!("best epoch: {}", outcome.best_epoch);
    Ok(())
}

fn check_model_fits(model: &ModelParams, set: &SampleSet, path: &Path) -> Result<()> {
    let expected = model.config.clone();
    let (hist, fut) = (set.config.history_len(), set.config.future_len());
    if expected.history_len != hist || expected.future_len != fut {
        return Err(Error::InvalidArgument(format!(
            "{}: model expects {}/{} history/future frames, samples have {hist}/{fut}",
            path.display(),
            expected.history_len,
            expected.future_len
        )));
    }
    Ok(())
}

fn cmd_predict(common: &Common, samples: &Path, model: Option<&Path>, baseline: &str) -> Result<()> {
    let cfg = load_config(common)?;
    let set = read_samples(samples)?;
    let rollout = RvoRollout(cfg.rollout_params());
    let checkpoint;
    let f: &dyn Forecaster = match model {
        Some(p) => {
            checkpoint = read_checkpoint(p)?;
            check_model_fits(&checkpoint.params, &set, p)?;
            &checkpoint.params
        }
        None => match baseline {
            "cv" => &ConstantVelocity,
            "rvo" => &rollout,
            other => return Err(Error::InvalidArgument(format!("unknown baseline `{other}` (expected cv or rvo)"))),
        },
    };
    let n = set.config.future_len();
    let mut records = Vec::new();
    for s in &set.samples {
        records.extend(prediction_records(s, &f.forecast(s, n, set.config.fps)?));
    }
    let out = out_dir(common)?;
    write_prediction_file(&out.join("predictions.csv"), &records)?;
    println!("samples: {}", set.samples.len());
    Ok(())
}

fn cmd_eval(common: &Common, samples: &Path, predictions: &Path, name: &str) -> Result<()> {
    let cfg = load_config(common)?;
    let set = read_samples(samples)?;
    let table = read_prediction_file(predictions)?;
    let report = evaluate(name, &table, &set.samples, set.config.fps, &cfg.horizons)?;
    let out = out_dir(common)?;
    let bench = trackpred::eval::Benchmark {
        outcomes: vec![Ok(report.clone())],
    };
    write_text(&out.join("metrics.csv"), &bench.render_csv())?;
    write_text(&out.join("curves.csv"), &bench.render_curve_csv())?;
    println!("ADE/FDE: {}", report.cell());
    println!("samples: {}", report.n_samples);
    Ok(())
}

fn cmd_bench(common: &Common, samples: &Path, models: &[String], predictions: &[String], no_baselines: bool) -> Result<()> {
    let cfg = load_config(common)?;
    let set = read_samples(samples)?;
    let rollout = RvoRollout(cfg.rollout_params());
    let mut loaded: Vec<(String, ModelParams)> = Vec::new();
    for spec in models {
        let (name, path) = named_path(spec)?;
        let ck = read_checkpoint(&path)?;
        check_model_fits(&ck.params, &set, &path)?;
        loaded.push((name, ck.params));
    }
    let mut tables: Vec<(String, PredictionTable)> = Vec::new();
    for spec in predictions {
        let (name, path) = named_path(spec)?;
        tables.push((name, read_prediction_file(&path)?));
    }
    let mut methods: Vec<(&str, &dyn Forecaster)> = Vec::new();
    if !no_baselines {
        methods.push(("constant-velocity", &ConstantVelocity));
        methods.push(("rvo-rollout", &rollout));
    }
    for (name, m) in &loaded {
        methods.push((name, m));
    }
    for (name, t) in &tables {
        methods.push((name, t));
    }
    if methods.is_empty() {
        return Err(Error::InvalidArgument("no methods to compare".into()));
    }
    let bench = benchmark(&set.samples, &methods, set.config.fps, &cfg.horizons);
    let out = out_dir(common)?;
    let table = bench.render_table();
    write_text(&out.join("table.txt"), &table)?;
    write_text(&out.join("metrics.csv"), &bench.render_csv())?;
    write_text(&out.join("curves.csv"), &bench.render_curve_csv())?;
    print!("{table}");
    Ok(())
}

fn cmd_pipeline(common: &Common) -> Result<()> {
    let cfg = load_config(common)?;
    let out = out_dir(common)?;
    let outcome = run_pipeline(&cfg, out, &mut |line| eprintln!("{line}"))?;
    print!("{}", outcome.report);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Synth { common } => cmd_synth(common),
        Command::Track {
            common,
            detections,
            homography,
        } => cmd_track(common, detections, homography.as_deref()),
        Command::MakeDataset {
            common,
            trajectories,
            classes,
            first_id,
        } => cmd_make_dataset(common, trajectories, classes.as_deref(), *first_id),
        Command::Train { common, train, val } => cmd_train(common, train, val.as_deref()),
        Command::Predict {
            common,
            samples,
            model,
            baseline,
        } => cmd_predict(common, samples, model.as_deref(), baseline),
        Command::Eval {
            common,
            samples,
            predictions,
            name,
        } => cmd_eval(common, samples, predictions, name),
        Command::Bench {
            common,
            samples,
            models,
            predictions,
            no_baselines,
        } => cmd_bench(common, samples, models, predictions, *no_baselines),
        Command::Pipeline { common } => cmd_pipeline(common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

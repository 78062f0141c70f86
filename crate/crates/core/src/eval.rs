//! Displacement metrics and the multi-method benchmark harness.
//!
//! Output formats:
//!
//! * Table (text): columns `method`, `ADE/FDE`, `samples`, left-aligned and
//!   padded; failed methods show `failed: <reason>` in place of the metrics.
//! * Table (CSV): `method,ade,fde,samples`, 6 decimals.
//! * Curve CSV: `horizon_s,<method1>,<method2>,...`, one row per horizon;
//!   failed methods are omitted.
//! * Prediction file: `sample_id,frame_id,vehicle_id,x,y` per line, no
//!   header, the trajectory-file format with a leading sample id.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::predictor::{self, ModelParams, Prediction, RolloutParams};
use crate::vec2::WorldPoint;

/// Horizons in seconds used for error curves by default.
pub const DEFAULT_HORIZONS: [f64; 5] = [1.0, 2.0, 3.0, 4.0, 5.0];

fn check_lengths(pred: &[WorldPoint], truth: &[WorldPoint]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::TooShort { needed: 1, got: 0 });
    }
    Ok(())
}

/// Footnote for rendered tables.
pub const METRIC_NOTE: &str = "ADE/FDE in meters; ADE is the mean over samples of each sample's mean displacement.\n";

/// Euclidean distance at every frame.
pub fn frame_distances(pred: &[WorldPoint], truth: &[WorldPoint]) -> Result<Vec<f64>> {
    check_lengths(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| p.distance(*t)).collect())
}

/// Mean per-frame Euclidean displacement.
pub fn ade(pred: &[WorldPoint], truth: &[WorldPoint]) -> Result<f64> {
    let d = frame_distances(pred, truth)?;
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

/// Displacement at the last frame.
pub fn fde(pred: &[WorldPoint], truth: &[WorldPoint]) -> Result<f64> {
    check_lengths(pred, truth)?;
    Ok(pred[pred.len() - 1].distance(truth[truth.len() - 1]))
}

/// Root mean squared displacement across samples at each horizon (seconds).
/// The horizon `h` reads frame `round(h·fps)`, 1-based.
pub fn rmse_curve(preds: &[Vec<WorldPoint>], truths: &[Vec<WorldPoint>], fps: f64, horizons: &[f64]) -> Result<Vec<(f64, f64)>> {
    if preds.len() != truths.len() {
        return Err(Error::LengthMismatch {
            left: preds.len(),
            right: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    for (p, t) in preds.iter().zip(truths) {
        check_lengths(p, t)?;
    }
    if horizons.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidArgument("curve horizons must be strictly increasing".into()));
    }
    horizons
        .iter()
        .map(|&h| {
            let idx = (h * fps).round() as usize;
            if idx < 1 || preds.iter().any(|p| p.len() < idx) {
                return Err(Error::InvalidArgument(format!("horizon {h} s is outside the prediction length")));
            }
            let sum: f64 = preds
                .iter()
                .zip(truths)
                .map(|(p, t)| (p[idx - 1] - t[idx - 1]).norm_sq())
                .sum();
            Ok((h, (sum / preds.len() as f64).sqrt()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    /// Mean over samples of per-sample ADE.
    pub ade: f64,
    /// Mean over samples of per-sample FDE.
    pub fde: f64,
    pub rmse_curve: Vec<(f64, f64)>,
    pub n_samples: usize,
}

impl MetricsReport {
    /// `"ADE/FDE"` with two decimals.
    pub fn cell(&self) -> String {
        format!("{:.2}/{:.2}", self.ade, self.fde)
    }
}

/// A source of predictions for benchmark samples.
pub trait Forecaster {
    /// Forecast of `n` future frames in the world frame.
    fn forecast(&self, s: &Sample, n: usize, fps: f64) -> Result<Prediction>;
}

pub struct ConstantVelocity;

impl Forecaster for ConstantVelocity {
    fn forecast(&self, s: &Sample, n: usize, fps: f64) -> Result<Prediction> {
        predictor::predict_constant_velocity(&s.history_world(), n as f64 / fps, fps)
    }
}

pub struct RvoRollout(pub RolloutParams);

impl Forecaster for RvoRollout {
    fn forecast(&self, s: &Sample, n: usize, fps: f64) -> Result<Prediction> {
        Ok(predictor::predict_rvo_rollout(s, n as f64 / fps, fps, &self.0))
    }
}

impl Forecaster for ModelParams {
    fn forecast(&self, s: &Sample, _n: usize, _fps: f64) -> Result<Prediction> {
        predictor::forward(self, s)
    }
}

/// Returns each sample's recorded future.
pub struct GroundTruth;

impl Forecaster for GroundTruth {
    fn forecast(&self, s: &Sample, _n: usize, _fps: f64) -> Result<Prediction> {
        Ok(Prediction {
            points: s.future_world(),
        })
    }
}

/// One line of a prediction file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: u64,
    pub frame_id: i64,
    pub vehicle_id: u64,
    pub x: f64,
    pub y: f64,
}

/// Predictions loaded from a file, keyed by sample id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PredictionTable {
    rows: HashMap<u64, Vec<PredictionRecord>>,
}

impl PredictionTable {
    pub fn from_records(records: impl IntoIterator<Item = PredictionRecord>) -> Self {
        let mut rows: HashMap<u64, Vec<PredictionRecord>> = HashMap::new();
        for r in records {
            rows.entry(r.sample_id).or_default().push(r);
        }
        PredictionTable { rows }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl Forecaster for PredictionTable {
    fn forecast(&self, s: &Sample, n: usize, _fps: f64) -> Result<Prediction> {
        let rows = self
            .rows
            .get(&s.sample_id)
            .ok_or_else(|| Error::InvalidArgument(format!("no predictions for sample {}", s.sample_id)))?;
        if rows.len() != n {
            return Err(Error::InvalidArgument(format!(
                "sample {} has {} predicted frames, expected {n}",
                s.sample_id,
                rows.len()
            )));
        }
        for (i, r) in rows.iter().enumerate() {
            let frame = s.anchor_frame + 1 + i as i64;
            if r.vehicle_id != s.ego_id || r.frame_id != frame {
                return Err(Error::InvalidArgument(format!(
                    "sample {} row {}: expected vehicle {} frame {frame}, found vehicle {} frame {}",
                    s.sample_id,
                    i + 1,
                    s.ego_id,
                    r.vehicle_id,
                    r.frame_id
                )));
            }
        }
        Ok(Prediction {
            points: rows.iter().map(|r| WorldPoint::new(r.x, r.y)).collect(),
        })
    }
}

pub fn parse_prediction_text(text: &str) -> std::result::Result<Vec<PredictionRecord>, (usize, String)> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err((lineno, format!("expected 5 fields, found {}", f.len())));
        }
        let sample_id = f[0].parse::<u64>().map_err(|e| (lineno, format!("sample id: {e}")))?;
        let frame_id = f[1].parse::<i64>().map_err(|e| (lineno, format!("frame id: {e}")))?;
        let vehicle_id = f[2].parse::<u64>().map_err(|e| (lineno, format!("vehicle id: {e}")))?;
        let x = f[3].parse::<f64>().map_err(|e| (lineno, format!("x: {e}")))?;
        let y = f[4].parse::<f64>().map_err(|e| (lineno, format!("y: {e}")))?;
        if !x.is_finite() || !y.is_finite() {
            return Err((lineno, "non-finite coordinate".to_string()));
        }
        out.push(PredictionRecord {
            sample_id,
            frame_id,
            vehicle_id,
            x,
            y,
        });
    }
    Ok(out)
}

pub fn read_prediction_file(path: &Path) -> Result<PredictionTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let records = parse_prediction_text(&text).map_err(|(line, msg)| Error::parse(path, line, msg))?;
    Ok(PredictionTable::from_records(records))
}

/// Records for one sample's forecast, frames numbered after the anchor.
pub fn prediction_records(s: &Sample, p: &Prediction) -> Vec<PredictionRecord> {
    p.points
        .iter()
        .enumerate()
        .map(|(i, q)| PredictionRecord {
            sample_id: s.sample_id,
            frame_id: s.anchor_frame + 1 + i as i64,
            vehicle_id: s.ego_id,
            x: q.x,
            y: q.y,
        })
        .collect()
}

pub fn format_prediction_records(records: &[PredictionRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 40);
    for r in records {
        let _ = writeln!(out, "{},{},{},{:.6},{:.6}", r.sample_id, r.frame_id, r.vehicle_id, r.x, r.y);
    }
    out
}

pub fn write_prediction_file(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    std::fs::write(path, format_prediction_records(records)).map_err(|e| Error::io(path, e))
}

/// Evaluates one forecaster over every sample.
pub fn evaluate(name: &str, f: &dyn Forecaster, samples: &[Sample], fps: f64, horizons: &[f64]) -> Result<MetricsReport> {
    let fail = |reason: String| Error::MethodFailure {
        name: name.to_string(),
        reason,
    };
    if samples.is_empty() {
        return Err(fail("dataset is empty".into()));
    }
    let mut preds = Vec::with_capacity(samples.len());
    let mut truths = Vec::with_capacity(samples.len());
    let (mut ade_sum, mut fde_sum) = (0.0, 0.0);
    for s in samples {
        let truth = s.future_world();
        let p = f.forecast(s, truth.len(), fps).map_err(|e| fail(e.to_string()))?;
        if p.points.len() != truth.len() || p.points.iter().any(|q| !q.x.is_finite() || !q.y.is_finite()) {
            return Err(fail(format!(
                "sample {}: expected {} finite points, got {}",
                s.sample_id,
                truth.len(),
                p.points.len()
            )));
        }
        ade_sum += ade(&p.points, &truth).map_err(|e| fail(e.to_string()))?;
        fde_sum += fde(&p.points, &truth).map_err(|e| fail(e.to_string()))?;
        preds.push(p.points);
        truths.push(truth);
    }
    let n = samples.len();
    let curve = rmse_curve(&preds, &truths, fps, horizons).map_err(|e| fail(e.to_string()))?;
    Ok(MetricsReport {
        method: name.to_string(),
        ade: ade_sum / n as f64,
        fde: fde_sum / n as f64,
        rmse_curve: curve,
        n_samples: n,
    })
}

/// Result of running several methods over one sample set. A failing method
/// is recorded as an error without affecting the others.
#[derive(Debug)]
pub struct Benchmark {
    pub outcomes: Vec<Result<MetricsReport>>,
}

impl Benchmark {
    pub fn reports(&self) -> impl Iterator<Item = &MetricsReport> {
        self.outcomes.iter().filter_map(|o| o.as_ref().ok())
    }

    pub fn report(&self, method: &str) -> Option<&MetricsReport> {
        self.reports().find(|r| r.method == method)
    }

    pub fn render_table(&self) -> String {
        let rows: Vec<(String, String, String)> = self
            .outcomes
            .iter()
            .map(|o| match o {
                Ok(r) => (r.method.clone(), r.cell(), r.n_samples.to_string()),
                Err(Error::MethodFailure { name, reason }) => (name.clone(), format!("failed: {reason}"), "-".into()),
                Err(e) => ("?".into(), format!("failed: {e}"), "-".into()),
            })
            .collect();
        let w0 = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("method".len());
        let w1 = rows.iter().map(|r| r.1.len()).max().unwrap_or(0).max("ADE/FDE".len());
        let mut out = String::new();
        let _ = writeln!(out, "{:<w0$}  {:<w1$}  samples", "method", "ADE/FDE");
        for (a, b, c) in rows {
            let _ = writeln!(out, "{}", format!("{a:<w0$}  {b:<w1$}  {c}").trim_end());
        }
        out.push_str(METRIC_NOTE);
        out
    }

    pub fn render_csv(&self) -> String {
        let mut out = String::from("method,ade,fde,samples\n");
        for r in self.reports() {
            let _ = writeln!(out, "{},{:.6},{:.6},{}", r.method, r.ade, r.fde, r.n_samples);
        }
        out
    }

    pub fn render_curve_csv(&self) -> String {
        let reports: Vec<&MetricsReport> = self.reports().collect();
        let mut out = String::from("horizon_s");
        for r in &reports {
            out.push(',');
            out.push_str(&r.method);
        }
        out.push('\n');
        let Some(first) = reports.first() else {
            return out;
        };
        for (i, (h, _)) in first.rmse_curve.iter().enumerate() {
            let _ = write!(out, "{h}");
            for r in &reports {
                let _ = write!(out, ",{:.6}", r.rmse_curve[i].1);
            }
            out.push('\n');
        }
        out
    }
}

pub fn benchmark(samples: &[Sample], methods: &[(&str, &dyn Forecaster)], fps: f64, horizons: &[f64]) -> Benchmark {
    Benchmark {
        outcomes: methods
            .iter()
            .map(|(name, f)| evaluate(name, *f, samples, fps, horizons))
            .collect(),
    }
}

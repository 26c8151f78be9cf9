//! Box overlap, precision and success rates, and whole-corpus evaluation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bbox::BBox;
use crate::error::{Error, Result};
use crate::event::{Corpus, Sequence};

pub const PRECISION_THRESHOLD: f64 = 20.0;
/// Number of IoU thresholds `0, 0.05, ..., 1`.
pub const SUCCESS_POINTS: usize = 21;
/// Centre-error thresholds `0..=50` px for the precision curve.
pub const PRECISION_CURVE_MAX: usize = 50;

pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    if !a.is_positive() || !b.is_positive() {
        return Err(Error::Contract(format!("iou of non-positive box: {a:?} vs {b:?}")));
    }
    let iw = ((a.x + a.w).min(b.x + b.w) - a.x.max(b.x)).max(0.0);
    let ih = ((a.y + a.h).min(b.y + b.h) - a.y.max(b.y)).max(0.0);
    let inter = iw * ih;
    Ok(inter / (a.w * a.h + b.w * b.h - inter))
}

pub fn center_error(a: &BBox, b: &BBox) -> f64 {
    a.center_distance(b)
}

/// Fraction of errors at or below `threshold`.
pub fn precision_rate(center_errors: &[f64], threshold: f64) -> Result<f64> {
    if center_errors.is_empty() {
        return Err(Error::Contract("precision rate of an empty list".into()));
    }
    let hits = center_errors.iter().filter(|&&e| e <= threshold).count();
    Ok(hits as f64 / center_errors.len() as f64)
}

pub fn success_thresholds() -> Vec<f64> {
    (0..SUCCESS_POINTS).map(|i| i as f64 / (SUCCESS_POINTS - 1) as f64).collect()
}

/// `(t, fraction of IoU > t)` for each of the 21 thresholds.
pub fn success_curve(ious: &[f64]) -> Result<Vec<(f64, f64)>> {
    if ious.is_empty() {
        return Err(Error::Contract("success rate of an empty list".into()));
    }
    if let Some(v) = ious.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Contract(format!("IoU {v} outside [0, 1]")));
    }
    let n = ious.len() as f64;
    Ok(success_thresholds()
        .into_iter()
        .map(|t| (t, ious.iter().filter(|&&v| v > t).count() as f64 / n))
        .collect())
}

/// Mean of the success curve.
pub fn success_rate(ious: &[f64]) -> Result<f64> {
    let curve = success_curve(ious)?;
    Ok(curve.iter().map(|p| p.1).sum::<f64>() / curve.len() as f64)
}

/// Produces one box per frame of a sequence; frame 0 is expected to be the
/// initial ground truth.
pub trait SequenceTracker {
    fn track(&mut self, seq: &Sequence) -> Result<Vec<BBox>>;
}

/// Returns the ground truth.
pub struct OracleTracker;

impl SequenceTracker for OracleTracker {
    fn track(&mut self, seq: &Sequence) -> Result<Vec<BBox>> {
        Ok(seq.gt.clone())
    }
}

/// Never moves from the first box.
pub struct ConstantTracker;

impl SequenceTracker for ConstantTracker {
    fn track(&mut self, seq: &Sequence) -> Result<Vec<BBox>> {
        Ok(vec![seq.gt[0]; seq.len()])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub index: usize,
    pub predictions: Vec<BBox>,
    pub ious: Vec<f64>,
    pub center_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub sequences: Vec<SequenceResult>,
    pub precision_curve: Vec<(f64, f64)>,
    pub success_curve: Vec<(f64, f64)>,
    /// Precision at 20 px.
    pub precision: f64,
    /// Area under the success curve.
    pub success: f64,
    pub mean_iou: f64,
    pub frames: usize,
}

impl EvalReport {
    /// Aggregates per-sequence traces; frame 0 of each sequence is the
    /// initialisation and is not scored.
    pub fn from_results(sequences: Vec<SequenceResult>) -> Result<Self> {
        let ious: Vec<f64> = sequences.iter().flat_map(|s| s.ious.iter().copied()).collect();
        let errs: Vec<f64> = sequences.iter().flat_map(|s| s.center_errors.iter().copied()).collect();
        let precision_curve = (0..=PRECISION_CURVE_MAX)
            .map(|t| Ok((t as f64, precision_rate(&errs, t as f64)?)))
            .collect::<Result<Vec<_>>>()?;
        let success_curve = success_curve(&ious)?;
        Ok(EvalReport {
            precision: precision_rate(&errs, PRECISION_THRESHOLD)?,
            success: success_rate(&ious)?,
            mean_iou: ious.iter().sum::<f64>() / ious.len() as f64,
            frames: ious.len(),
            sequences,
            precision_curve,
            success_curve,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Numeric(format!("report serialization: {e}")))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Contract(format!("report deserialization: {e}")))
    }

    pub fn table(&self) -> String {
        let mut out = String::from("sequence  frames  PR@20   SR      mIoU\n");
        for s in &self.sequences {
            let pr = precision_rate(&s.center_errors, PRECISION_THRESHOLD).unwrap_or(0.0);
            let sr = success_rate(&s.ious).unwrap_or(0.0);
            let miou = s.ious.iter().sum::<f64>() / s.ious.len().max(1) as f64;
            out.push_str(&format!("{:>8}  {:>6}  {pr:.4}  {sr:.4}  {miou:.4}\n", s.index, s.ious.len()));
        }
        out.push_str(&format!(
            "{:>8}  {:>6}  {:.4}  {:.4}  {:.4}\n",
            "all", self.frames, self.precision, self.success, self.mean_iou
        ));
        out
    }

    /// Writes `report.json`, `precision.csv` and `success.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: String| {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
        };
        put("report.json", self.to_json()?)?;
        put("precision.csv", curve_csv("threshold_px,precision", &self.precision_curve))?;
        put("success.csv", curve_csv("threshold_iou,success", &self.success_curve))?;
        Ok(())
    }
}

fn curve_csv(header: &str, curve: &[(f64, f64)]) -> String {
    let mut s = format!("{header}\n");
    for (t, v) in curve {
        s.push_str(&format!("{t},{v}\n"));
    }
    s
}

/// Tracks every sequence and scores frames `1..n` against ground truth.
pub fn evaluate_tracker(tracker: &mut dyn SequenceTracker, corpus: &Corpus) -> Result<EvalReport> {
    let mut results = Vec::with_capacity(corpus.sequences.len());
    for (index, seq) in corpus.sequences.iter().enumerate() {
        let predictions = tracker.track(seq)?;
        if predictions.len() != seq.len() {
            return Err(Error::Contract(format!(
                "tracker returned {} boxes for {} frames",
                predictions.len(),
                seq.len()
            )));
        }
        let mut ious = Vec::new();
        let mut center_errors = Vec::new();
        for (p, g) in predictions.iter().zip(&seq.gt).skip(1) {
            ious.push(iou(p, g)?);
            center_errors.push(center_error(p, g));
        }
        results.push(SequenceResult {
            index,
            predictions,
            ious,
            center_errors,
        });
    }
    if results.iter().all(|r| r.ious.is_empty()) {
        return Err(Error::Contract("no frames to evaluate".into()));
    }
    EvalReport::from_results(results)
}

//! Tracking metrics and ranking quality.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::BoundingBox;

/// Center-distance threshold for the precision rate, in pixels.
pub const PRECISION_THRESHOLD: f64 = 20.0;
/// Number of IoU thresholds `0, 0.01, ..., 1` on the success curve.
pub const SUCCESS_GRID: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrackingScores {
    /// Fraction of frames with center error at most 20 px.
    pub precision: f64,
    /// Mean over the IoU threshold grid of the fraction of frames with IoU >= threshold.
    pub success_auc: f64,
    pub mean_center_error: f64,
}

pub fn evaluate(pred: &[BoundingBox], gt: &[BoundingBox]) -> Result<TrackingScores> {
    if pred.len() != gt.len() {
        return Err(Error::Input(format!(
            "trajectory length {} does not match ground truth length {}",
            pred.len(),
            gt.len()
        )));
    }
    if gt.is_empty() {
        return Err(Error::Input("empty trajectory".into()));
    }
    let frames = gt.len() as f64;
    let errors: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.center_distance(g)).collect();
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| p.iou(g)).collect();
    let precision = errors.iter().filter(|&&e| e <= PRECISION_THRESHOLD).count() as f64 / frames;
    let success_auc = success_curve(&ious).iter().sum::<f64>() / SUCCESS_GRID as f64;
    Ok(TrackingScores {
        precision,
        success_auc,
        mean_center_error: errors.iter().sum::<f64>() / frames,
    })
}

/// Fraction of frames with IoU >= `k / 100` for `k = 0..=100`.
pub fn success_curve(ious: &[f64]) -> Vec<f64> {
    (0..SUCCESS_GRID)
        .map(|k| {
            let t = k as f64 / (SUCCESS_GRID - 1) as f64;
            ious.iter().filter(|&&iou| iou >= t).count() as f64 / ious.len().max(1) as f64
        })
        .collect()
}

/// Area under the ROC curve of `scores` against boolean `labels` (ties count
/// one half). Returns `None` when either class is empty.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let pos: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<f64> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return None;
    }
    let mut wins = 0.0;
    for &a in &pos {
        for &b in &neg {
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    Some(wins / (pos.len() * neg.len()) as f64)
}

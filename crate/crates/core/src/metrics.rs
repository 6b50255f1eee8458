//! Sequence evaluation: overlap-threshold success curve with its area under
//! the curve, center-distance precision, and size-normalized precision. All
//! arithmetic is f64 so exact endpoints (perfect tracking → 1.0) survive.

use crate::error::{HitError, Result};
use crate::tracker::BBox;

/// Number of overlap thresholds in the success sweep: 0.00, 0.05, … 1.00.
pub const NUM_THRESHOLDS: usize = 21;
/// Center-distance bound (pixels) for the precision metric.
pub const PRECISION_RADIUS_PX: f64 = 20.0;
/// Size-normalized center-distance bound for normalized precision.
pub const NORM_PRECISION_RADIUS: f64 = 0.2;

/// Intersection-over-union of two pixel boxes, in [0,1].
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (ax0, ay0) = (a.x as f64, a.y as f64);
    let (ax1, ay1) = (ax0 + a.w as f64, ay0 + a.h as f64);
    let (bx0, by0) = (b.x as f64, b.y as f64);
    let (bx1, by1) = (bx0 + b.w as f64, by0 + b.h as f64);
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    let union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Success-rate sweep over the 21 overlap thresholds. A frame succeeds at
/// threshold `t` when its overlap is strictly positive and at least `t`; the
/// strict-positivity clause makes the t=0 entry count only genuine overlap,
/// so a fully lost target scores 0 across the whole curve.
#[derive(Debug, Clone)]
pub struct SuccessCurve {
    pub thresholds: [f64; NUM_THRESHOLDS],
    pub rates: [f64; NUM_THRESHOLDS],
    pub auc: f64,
}

impl SuccessCurve {
    pub fn from_ious(ious: &[f64]) -> Result<Self> {
        if ious.is_empty() {
            return Err(HitError::SequenceMismatch { pred: 0, gt: 0 });
        }
        let mut thresholds = [0.0; NUM_THRESHOLDS];
        let mut rates = [0.0; NUM_THRESHOLDS];
        let n = ious.len() as f64;
        for (i, (t, r)) in thresholds.iter_mut().zip(rates.iter_mut()).enumerate() {
            *t = i as f64 / 20.0;
            let hits = ious.iter().filter(|&&v| v > 0.0 && v >= *t).count();
            *r = hits as f64 / n;
        }
        let auc = rates.iter().sum::<f64>() / NUM_THRESHOLDS as f64;
        Ok(Self {
            thresholds,
            rates,
            auc,
        })
    }
}

/// Summary metrics for one predicted trajectory against ground truth.
#[derive(Debug, Clone)]
pub struct SequenceMetrics {
    pub curve: SuccessCurve,
    pub auc: f64,
    /// Fraction of frames whose center error is ≤ 20 px.
    pub precision: f64,
    /// Fraction of frames whose center error, with each axis divided by the
    /// ground-truth box extent on that axis, is ≤ 0.2.
    pub norm_precision: f64,
}

/// Evaluate equal-length predicted and ground-truth box sequences.
pub fn eval_sequence(pred: &[BBox], gt: &[BBox]) -> Result<SequenceMetrics> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(HitError::SequenceMismatch {
            pred: pred.len(),
            gt: gt.len(),
        });
    }
    let ious: Vec<f64> = pred.iter().zip(gt).map(|(p, g)| iou(p, g)).collect();
    let curve = SuccessCurve::from_ious(&ious)?;

    let n = pred.len() as f64;
    let mut close = 0usize;
    let mut norm_close = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        let (pcx, pcy) = p.center();
        let (gcx, gcy) = g.center();
        let dx = pcx as f64 - gcx as f64;
        let dy = pcy as f64 - gcy as f64;
        if (dx * dx + dy * dy).sqrt() <= PRECISION_RADIUS_PX {
            close += 1;
        }
        let nx = dx / g.w as f64;
        let ny = dy / g.h as f64;
        if (nx * nx + ny * ny).sqrt() <= NORM_PRECISION_RADIUS {
            norm_close += 1;
        }
    }
    let auc = curve.auc;
    Ok(SequenceMetrics {
        curve,
        auc,
        precision: close as f64 / n,
        norm_precision: norm_close as f64 / n,
    })
}

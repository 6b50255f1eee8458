//! Training objective: weighted generalized-IoU plus ℓ1 distance between a
//! predicted box and the target, with an analytic gradient. The gradient is
//! defined only away from the objective's kinks (coordinate ties, exactly
//! touching boxes, degenerate predictions); evaluating at a kink is an error
//! rather than an arbitrary subgradient choice.
//!
//! Everything runs in f64. The `_xyxy` functions take raw ordered
//! (x0,y0,x1,y1) arrays so numerical checks can probe the objective at full
//! precision; the [`BoxNorm`] wrappers add the range/ordering validation of
//! that type.

use crate::error::{HitError, Result};
use crate::head::BoxNorm;

#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda_giou: f64,
    pub lambda_l1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_giou: 2.0,
            lambda_l1: 5.0,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_giou: f64, lambda_l1: f64) -> Result<Self> {
        if lambda_giou <= 0.0 || lambda_l1 <= 0.0 {
            return Err(HitError::Config(format!(
                "loss weights must be positive, got ({lambda_giou}, {lambda_l1})"
            )));
        }
        Ok(Self {
            lambda_giou,
            lambda_l1,
        })
    }
}

fn to_arr(b: &BoxNorm) -> [f64; 4] {
    [b.x0 as f64, b.y0 as f64, b.x1 as f64, b.y1 as f64]
}

fn area(b: [f64; 4]) -> f64 {
    (b[2] - b[0]) * (b[3] - b[1])
}

/// Generalized IoU over raw ordered corner arrays. Zero-area boxes
/// contribute area 0 and IoU 0. Caller guarantees x0 <= x1 and y0 <= y1.
pub fn giou_xyxy(a: [f64; 4], b: [f64; 4]) -> f64 {
    debug_assert!(a[0] <= a[2] && a[1] <= a[3] && b[0] <= b[2] && b[1] <= b[3]);
    let iw = a[2].min(b[2]) - a[0].max(b[0]);
    let ih = a[3].min(b[3]) - a[1].max(b[1]);
    let inter = if iw > 0.0 && ih > 0.0 { iw * ih } else { 0.0 };
    let union = area(a) + area(b) - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    let cw = a[2].max(b[2]) - a[0].min(b[0]);
    let ch = a[3].max(b[3]) - a[1].min(b[1]);
    let hull = cw * ch;
    let penalty = if hull > 0.0 { (hull - union) / hull } else { 0.0 };
    iou - penalty
}

/// Generalized IoU in [-1, 1].
pub fn giou(a: &BoxNorm, b: &BoxNorm) -> f64 {
    giou_xyxy(to_arr(a), to_arr(b))
}

/// lambda_giou * (1 - giou) + lambda_l1 * sum of coordinate distances, over
/// raw ordered corner arrays.
pub fn total_loss_xyxy(gt: [f64; 4], pred: [f64; 4], w: &LossWeights) -> f64 {
    let l1: f64 = (0..4).map(|k| (gt[k] - pred[k]).abs()).sum();
    w.lambda_giou * (1.0 - giou_xyxy(gt, pred)) + w.lambda_l1 * l1
}

pub fn total_loss(gt: &BoxNorm, pred: &BoxNorm, w: &LossWeights) -> f64 {
    total_loss_xyxy(to_arr(gt), to_arr(pred), w)
}

/// d(total_loss)/d(pred) as (x0, y0, x1, y1) partials, over raw arrays.
///
/// Errors at non-differentiable points: any exact coordinate tie between
/// prediction and target (both an ℓ1 kink and a min/max selector tie), an
/// exactly touching intersection edge, or a zero-extent prediction.
pub fn loss_grad_xyxy(gt: [f64; 4], pred: [f64; 4], w: &LossWeights) -> Result<[f64; 4]> {
    let (g, p) = (gt, pred);
    if p[2] == p[0] || p[3] == p[1] {
        return Err(HitError::NonDifferentiable(
            "prediction box has zero width or height",
        ));
    }
    if (0..4).any(|k| p[k] == g[k]) {
        return Err(HitError::NonDifferentiable(
            "prediction and target share a coordinate",
        ));
    }
    let iw = g[2].min(p[2]) - g[0].max(p[0]);
    let ih = g[3].min(p[3]) - g[1].max(p[1]);
    if iw == 0.0 || ih == 0.0 {
        return Err(HitError::NonDifferentiable(
            "boxes touch along an edge or corner",
        ));
    }

    let active = iw > 0.0 && ih > 0.0;
    let inter = if active { iw * ih } else { 0.0 };
    // d(inter)/d(pred component); each selector derivative is 0 or 1 here
    let di = if active {
        [
            if p[0] > g[0] { -ih } else { 0.0 },
            if p[1] > g[1] { -iw } else { 0.0 },
            if p[2] < g[2] { ih } else { 0.0 },
            if p[3] < g[3] { iw } else { 0.0 },
        ]
    } else {
        [0.0; 4]
    };

    let (pw, ph) = (p[2] - p[0], p[3] - p[1]);
    let da = [-ph, -pw, ph, pw];
    let union = area(g) + area(p) - inter;
    let du = [da[0] - di[0], da[1] - di[1], da[2] - di[2], da[3] - di[3]];

    let cw = g[2].max(p[2]) - g[0].min(p[0]);
    let ch = g[3].max(p[3]) - g[1].min(p[1]);
    let hull = cw * ch;
    let dc = [
        if p[0] < g[0] { -ch } else { 0.0 },
        if p[1] < g[1] { -cw } else { 0.0 },
        if p[2] > g[2] { ch } else { 0.0 },
        if p[3] > g[3] { cw } else { 0.0 },
    ];

    let mut grad = [0.0f64; 4];
    for k in 0..4 {
        // giou = inter/union - 1 + union/hull
        let diou = (di[k] * union - inter * du[k]) / (union * union);
        let dratio = (du[k] * hull - union * dc[k]) / (hull * hull);
        let dgiou = diou + dratio;
        let dl1 = (p[k] - g[k]).signum();
        grad[k] = -w.lambda_giou * dgiou + w.lambda_l1 * dl1;
    }
    Ok(grad)
}

pub fn loss_grad(gt: &BoxNorm, pred: &BoxNorm, w: &LossWeights) -> Result<[f64; 4]> {
    loss_grad_xyxy(to_arr(gt), to_arr(pred), w)
}

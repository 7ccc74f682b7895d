//! Branch regression and score losses, the regularised total objective,
//! and analytic gradients with respect to the raw head logits.

pub mod gradcheck;

use serde::Serialize;

use crate::boxcodec::{decode_pixel, squash, squash_slope, HeadLogits};
use crate::boxgeom::{ciou_grad, CiouTerms, PixelBox};
use crate::error::{Error, Result};
use crate::gridanchor::{scale_limit, Anchor, STRIDES};

/// Default weight of the `||W||^2` term.
pub const DEFAULT_LAMBDA: f64 = 5e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchItem {
    pub logits: HeadLogits,
    pub anchor: Anchor,
    pub target: PixelBox,
}

/// The selected anchors of one branch, with their head logits and targets.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchBatch {
    stride: u32,
    items: Vec<BranchItem>,
}

impl BranchBatch {
    pub fn new(stride: u32, items: Vec<BranchItem>) -> Result<Self> {
        if !STRIDES.contains(&stride) {
            return Err(Error::UnsupportedStride(stride));
        }
        for item in &items {
            if item.anchor.stride != stride {
                return Err(Error::StrideMismatch { branch: stride, item: item.anchor.stride });
            }
            let side = item.target.longer_side();
            if side > scale_limit(stride) {
                return Err(Error::IneligibleTarget { stride, side, limit: scale_limit(stride) });
            }
        }
        Ok(Self { stride, items })
    }

    pub fn empty(stride: u32) -> Result<Self> {
        Self::new(stride, Vec::new())
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn items(&self) -> &[BranchItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Forward quantities for one item.
#[derive(Debug, Clone, Copy)]
pub struct ItemEval {
    pub pred: PixelBox,
    pub score: f64,
    pub terms: CiouTerms,
    pub ciou: f64,
    /// Soft score label, `clamp(ciou, 0, 1)`.
    pub target_score: f64,
}

pub fn evaluate_item(item: &BranchItem) -> ItemEval {
    let (pred, score) = decode_pixel(&item.logits, &item.anchor);
    let terms = CiouTerms::new(&pred, &item.target);
    let ciou = terms.ciou();
    ItemEval { pred, score, terms, ciou, target_score: ciou.clamp(0.0, 1.0) }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy of `sigmoid(logit)` against a soft label.
pub fn bce_with_logit(logit: f64, label: f64) -> f64 {
    label * softplus(-logit) + (1.0 - label) * softplus(logit)
}

fn mean_over(batch: &BranchBatch, f: impl Fn(&BranchItem) -> f64) -> f64 {
    if batch.is_empty() {
        return 0.0;
    }
    batch.items.iter().map(f).sum::<f64>() / batch.len() as f64
}

/// Mean of `1 - CIoU(decoded, target)` over the batch; 0 for an empty batch.
pub fn reg_loss_branch(batch: &BranchBatch) -> f64 {
    mean_over(batch, |item| 1.0 - evaluate_item(item).ciou)
}

/// Mean cross-entropy of the score channel against the clamped CIoU label;
/// 0 for an empty batch.
pub fn score_loss_branch(batch: &BranchBatch) -> f64 {
    mean_over(batch, |item| {
        let eval = evaluate_item(item);
        bce_with_logit(item.logits.score_logit(), eval.target_score)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossReport {
    pub reg_per_branch: [f64; 3],
    pub score_per_branch: [f64; 3],
    pub reg_total: f64,
    pub score_total: f64,
    pub l2_term: f64,
    pub total: f64,
}

impl LossReport {
    pub fn from_components(reg: [f64; 3], score: [f64; 3], l2_term: f64) -> Self {
        let reg_total = reg[0] + reg[1] + reg[2];
        let score_total = score[0] + score[1] + score[2];
        Self {
            reg_per_branch: reg,
            score_per_branch: score,
            reg_total,
            score_total,
            l2_term,
            total: score_total + reg_total + l2_term,
        }
    }
}

/// Total objective over the stride-8, 16 and 32 branches (in that order)
/// plus `lambda * weights_sq_norm`.
pub fn total_loss(branches: &[BranchBatch; 3], weights_sq_norm: f64, lambda: f64) -> Result<LossReport> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::OutOfRange { name: "lambda", range: "[0, inf)", value: lambda });
    }
    if !(weights_sq_norm >= 0.0 && weights_sq_norm.is_finite()) {
        return Err(Error::OutOfRange { name: "weights_sq_norm", range: "[0, inf)", value: weights_sq_norm });
    }
    for (batch, stride) in branches.iter().zip(STRIDES) {
        if batch.stride != stride {
            return Err(Error::StrideMismatch { branch: stride, item: batch.stride });
        }
    }
    let reg = [0, 1, 2].map(|k| reg_loss_branch(&branches[k]));
    let score = [0, 1, 2].map(|k| score_loss_branch(&branches[k]));
    Ok(LossReport::from_components(reg, score, lambda * weights_sq_norm))
}

/// Gradient of one item's `(1 - CIoU) + BCE` with respect to its five
/// logits. The CIoU trade-off weight and the score label are constants.
pub fn item_grad(item: &BranchItem) -> [f64; 5] {
    let eval = evaluate_item(item);
    let d_ciou = ciou_grad(&eval.pred, &item.target);
    let z = &item.logits.0;
    let d = item.anchor.stride as f64;
    let ln_d = d.ln();

    let s: [f64; 4] = [squash(z[0]), squash(z[1]), squash(z[2]), squash(z[3])];
    // d(pixel field)/d(its logit)
    let dx = 2.0 * d * squash_slope(s[0]);
    let dy = 2.0 * d * squash_slope(s[1]);
    let dw = eval.pred.w * 2.0 * ln_d * squash_slope(s[2]);
    let dh = eval.pred.h * 2.0 * ln_d * squash_slope(s[3]);

    [-d_ciou[0] * dx, -d_ciou[1] * dy, -d_ciou[2] * dw, -d_ciou[3] * dh, eval.score - eval.target_score]
}

/// Per-item gradients of the branch loss `reg + score` (both batch means)
/// with respect to each item's raw logits.
pub fn loss_grad(batch: &BranchBatch) -> Vec<[f64; 5]> {
    let n = batch.len() as f64;
    batch.items.iter().map(|item| item_grad(item).map(|g| g / n)).collect()
}

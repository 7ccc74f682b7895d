//! Central finite-difference verification of the analytic gradients.
//!
//! The numeric side only ever calls forward functions. The CIoU
//! trade-off weight and the score label are frozen at the unperturbed
//! point, matching the constants the analytic gradient assumes.

use crate::boxcodec::{decode_pixel, HeadLogits};
use crate::boxgeom::{ciou_grad, CiouTerms, PixelBox};
use crate::gridanchor::{scale_limit, GridSpec, STRIDES};
use crate::lossfn::{bce_with_logit, evaluate_item, loss_grad, BranchBatch, BranchItem};
use crate::rng::DetRng;

pub const FD_STEP: f64 = 1e-4;
pub const REL_TOLERANCE: f64 = 1e-5;
pub const ABS_FLOOR: f64 = 1e-8;

/// Sampled boxes keep every edge at least this far (pixels) from the
/// matching target edge; the gradient is undefined on those kinks.
pub const KINK_MARGIN: f64 = 1e-2;

/// Relative error with an absolute floor: below `ABS_FLOOR / REL_TOLERANCE`
/// in magnitude the difference is measured against that floor, so an
/// absolute discrepancy of `ABS_FLOOR` scores exactly `REL_TOLERANCE`.
pub fn scaled_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(ABS_FLOOR / REL_TOLERANCE);
    (analytic - numeric).abs() / scale
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, step: f64) -> f64 {
    (f(x + step) - f(x - step)) / (2.0 * step)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub worst_error: f64,
    /// `(item index, component)` of the worst partial.
    pub worst_at: (usize, usize),
}

impl GradCheckReport {
    fn new() -> Self {
        Self { checked: 0, worst_error: 0.0, worst_at: (0, 0) }
    }

    fn record(&mut self, item: usize, component: usize, err: f64) {
        self.checked += 1;
        if err > self.worst_error || err.is_nan() {
            self.worst_error = err;
            self.worst_at = (item, component);
        }
    }

    pub fn merge(mut self, other: GradCheckReport) -> Self {
        self.checked += other.checked;
        if other.worst_error > self.worst_error {
            self.worst_error = other.worst_error;
            self.worst_at = other.worst_at;
        }
        self
    }

    pub fn passed(&self) -> bool {
        self.worst_error <= REL_TOLERANCE
    }
}

fn with_field(b: &PixelBox, k: usize, value: f64) -> PixelBox {
    let mut out = *b;
    match k {
        0 => out.x = value,
        1 => out.y = value,
        2 => out.w = value,
        _ => out.h = value,
    }
    out
}

fn field(b: &PixelBox, k: usize) -> f64 {
    [b.x, b.y, b.w, b.h][k]
}

/// Compares `ciou_grad` against central differences of CIoU with the
/// trade-off weight frozen.
pub fn check_ciou_pair(pred: &PixelBox, target: &PixelBox, step: f64) -> [f64; 4] {
    let alpha = CiouTerms::new(pred, target).alpha;
    let analytic = ciou_grad(pred, target);
    let mut errs = [0.0; 4];
    for k in 0..4 {
        let f = |v: f64| CiouTerms::new(&with_field(pred, k, v), target).ciou_with_alpha(alpha);
        errs[k] = scaled_error(analytic[k], central_difference(f, field(pred, k), step));
    }
    errs
}

/// Loss of one item at logits `z` with the trade-off weight and score
/// label frozen.
pub fn frozen_item_loss(item: &BranchItem, z: &HeadLogits, alpha: f64, label: f64) -> f64 {
    let (pred, _) = decode_pixel(z, &item.anchor);
    let reg = 1.0 - CiouTerms::new(&pred, &item.target).ciou_with_alpha(alpha);
    reg + bce_with_logit(z.score_logit(), label)
}

/// Numeric gradient of the branch loss with respect to every item's logits.
pub fn numeric_loss_grad(batch: &BranchBatch, step: f64) -> Vec<[f64; 5]> {
    let n = batch.len() as f64;
    batch
        .items()
        .iter()
        .map(|item| {
            let eval = evaluate_item(item);
            let mut g = [0.0; 5];
            for (k, gk) in g.iter_mut().enumerate() {
                let f = |v: f64| {
                    let mut z = item.logits;
                    z.0[k] = v;
                    frozen_item_loss(item, &z, eval.terms.alpha, eval.target_score) / n
                };
                *gk = central_difference(f, item.logits.0[k], step);
            }
            g
        })
        .collect()
}

pub fn check_batch(batch: &BranchBatch) -> GradCheckReport {
    let mut report = GradCheckReport::new();
    let analytic = loss_grad(batch);
    let numeric = numeric_loss_grad(batch, FD_STEP);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        for k in 0..5 {
            report.record(i, k, scaled_error(a[k], n[k]));
        }
    }
    report
}

fn clear_of_kinks(pred: &PixelBox, target: &PixelBox) -> bool {
    let p = pred.corners();
    let t = target.corners();
    (0..4).all(|k| (p[k] - t[k]).abs() > KINK_MARGIN)
        && (p[2] - t[0]).abs() > KINK_MARGIN
        && (t[2] - p[0]).abs() > KINK_MARGIN
        && (p[3] - t[1]).abs() > KINK_MARGIN
        && (t[3] - p[1]).abs() > KINK_MARGIN
}

/// Random item at `stride` on a 640x640 image: a target within the
/// decodable neighbourhood of a random cell, logits in `[-3, 3]`. Samples
/// whose decoded box sits on a kink are redrawn.
pub fn random_item(rng: &mut DetRng, stride: u32) -> BranchItem {
    let grid = GridSpec::new(640, 640, stride).expect("640 is a multiple of every stride");
    let d = stride as f64;
    loop {
        let row = rng.below(grid.rows as u64) as u32;
        let col = rng.below(grid.cols as u64) as u32;
        let anchor = grid.anchor(row, col);
        let target = PixelBox {
            x: anchor.g_x + rng.uniform(-0.5, 1.5) * d,
            y: anchor.g_y + rng.uniform(-0.5, 1.5) * d,
            w: rng.log_uniform(2.0, scale_limit(stride)),
            h: rng.log_uniform(2.0, scale_limit(stride)),
        };
        let logits = HeadLogits([0; 5].map(|_| rng.uniform(-3.0, 3.0)));
        let item = BranchItem { logits, anchor, target };
        if clear_of_kinks(&decode_pixel(&logits, &anchor).0, &target) {
            return item;
        }
    }
}

pub fn random_batch(rng: &mut DetRng, stride: u32, n: usize) -> BranchBatch {
    let items = (0..n).map(|_| random_item(rng, stride)).collect();
    BranchBatch::new(stride, items).expect("sampled items respect the branch invariants")
}

/// Random overlapping or nearby box pair clear of kinks.
pub fn random_box_pair(rng: &mut DetRng) -> (PixelBox, PixelBox) {
    loop {
        let target = PixelBox {
            x: rng.uniform(0.0, 200.0),
            y: rng.uniform(0.0, 200.0),
            w: rng.log_uniform(2.0, 120.0),
            h: rng.log_uniform(2.0, 120.0),
        };
        let pred = PixelBox {
            x: target.x + rng.uniform(-1.0, 1.0) * target.w,
            y: target.y + rng.uniform(-1.0, 1.0) * target.h,
            w: target.w * rng.log_uniform(0.25, 4.0),
            h: target.h * rng.log_uniform(0.25, 4.0),
        };
        if clear_of_kinks(&pred, &target) {
            return (pred, target);
        }
    }
}

/// Worst error of `ciou_grad` over `n` random pairs.
pub fn check_ciou_suite(seed: u64, n: usize) -> GradCheckReport {
    let mut rng = DetRng::new(seed);
    let mut report = GradCheckReport::new();
    for i in 0..n {
        let (pred, target) = random_box_pair(&mut rng);
        for (k, err) in check_ciou_pair(&pred, &target, FD_STEP).into_iter().enumerate() {
            report.record(i, k, err);
        }
    }
    report
}

/// Worst loss-gradient error over `n_per_stride` random items at every stride.
pub fn check_loss_suite(seed: u64, n_per_stride: usize) -> [GradCheckReport; 3] {
    let mut rng = DetRng::new(seed);
    STRIDES.map(|stride| check_batch(&random_batch(&mut rng, stride, n_per_stride)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaled_error_floor() {
        assert_eq!(scaled_error(1.0, 1.0), 0.0);
        assert!((scaled_error(0.0, ABS_FLOOR) - REL_TOLERANCE).abs() < 1e-18);
        assert!((scaled_error(2.0, 1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn central_difference_of_cubic() {
        let g = central_difference(|x| x * x * x, 2.0, 1e-4);
        assert!((g - 12.0).abs() < 1e-7);
    }

    #[test]
    fn ciou_grad_spot_pair() {
        let pred = PixelBox::new(2.0, 3.0, 8.0, 12.0).unwrap();
        let target = PixelBox::new(0.0, 0.0, 10.0, 10.0).unwrap();
        for err in check_ciou_pair(&pred, &target, 1e-4) {
            assert!(err < 1e-5, "{err}");
        }
    }

    #[test]
    fn small_suites_pass() {
        assert!(check_ciou_suite(1, 50).passed());
        for r in check_loss_suite(2, 50) {
            assert!(r.passed(), "{r:?}");
        }
    }

    #[test]
    fn sampled_items_are_valid() {
        let mut rng = DetRng::new(3);
        for stride in STRIDES {
            let b = random_batch(&mut rng, stride, 20);
            assert_eq!(b.len(), 20);
        }
    }
}

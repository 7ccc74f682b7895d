//! Axis-aligned box algebra: IoU, CIoU and the analytic CIoU gradient.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard added to the `rho^2 / c^2` and `alpha` denominators only.
const CIOU_EPS: f64 = 1e-9;

/// Axis-aligned box in pixel coordinates, center format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PixelBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl PixelBox {
    /// Checked constructor; rejects non-finite fields and non-positive sides.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        if b.is_valid() {
            Ok(b)
        } else {
            Err(Error::InvalidBox { x, y, w, h })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.w.is_finite()
            && self.h.is_finite()
            && self.w > 0.0
            && self.h > 0.0
    }

    /// Builds a box from top-left corner and size.
    pub fn from_top_left(x_tl: f64, y_tl: f64, w: f64, h: f64) -> Result<Self> {
        Self::new(x_tl + w / 2.0, y_tl + h / 2.0, w, h)
    }

    /// `(x1, y1, x2, y2)` corner form.
    pub fn corners(&self) -> [f64; 4] {
        let (hw, hh) = (self.w / 2.0, self.h / 2.0);
        [self.x - hw, self.y - hh, self.x + hw, self.y + hh]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn longer_side(&self) -> f64 {
        self.w.max(self.h)
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self { x: self.x + dx, y: self.y + dy, ..*self }
    }
}

fn overlap_1d(a1: f64, a2: f64, b1: f64, b2: f64) -> f64 {
    (a2.min(b2) - a1.max(b1)).max(0.0)
}

/// Intersection over union. Disjoint or touching boxes give exactly 0.
pub fn iou(a: &PixelBox, b: &PixelBox) -> f64 {
    let [ax1, ay1, ax2, ay2] = a.corners();
    let [bx1, by1, bx2, by2] = b.corners();
    let inter = overlap_1d(ax1, ax2, bx1, bx2) * overlap_1d(ay1, ay2, by1, by2);
    if inter <= 0.0 {
        return 0.0;
    }
    // areas from the same corners as the overlap, so iou(a, a) is exactly 1
    let area_a = (ax2 - ax1) * (ay2 - ay1);
    let area_b = (bx2 - bx1) * (by2 - by1);
    inter / (area_a + area_b - inter)
}

/// The pieces CIoU is assembled from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CiouTerms {
    pub iou: f64,
    /// Squared distance between centers.
    pub rho2: f64,
    /// Squared diagonal of the smallest enclosing box.
    pub c2: f64,
    /// Aspect-ratio consistency term.
    pub v: f64,
    /// Trade-off weight `v / ((1 - iou) + v)`.
    pub alpha: f64,
}

impl CiouTerms {
    pub fn new(a: &PixelBox, b: &PixelBox) -> Self {
        let iou = iou(a, b);
        let rho2 = (a.x - b.x).powi(2) + (a.y - b.y).powi(2);
        let [ax1, ay1, ax2, ay2] = a.corners();
        let [bx1, by1, bx2, by2] = b.corners();
        let cw = ax2.max(bx2) - ax1.min(bx1);
        let ch = ay2.max(by2) - ay1.min(by1);
        let c2 = cw * cw + ch * ch;
        let v = aspect_term(a, b);
        let alpha = v / ((1.0 - iou) + v + CIOU_EPS);
        Self { iou, rho2, c2, v, alpha }
    }

    pub fn ciou(&self) -> f64 {
        self.ciou_with_alpha(self.alpha)
    }

    /// CIoU with the trade-off weight supplied externally.
    pub fn ciou_with_alpha(&self, alpha: f64) -> f64 {
        self.iou - self.rho2 / (self.c2 + CIOU_EPS) - alpha * self.v
    }
}

fn aspect_term(a: &PixelBox, b: &PixelBox) -> f64 {
    let diff = (b.w / b.h).atan() - (a.w / a.h).atan();
    4.0 / (PI * PI) * diff * diff
}

/// Complete IoU: IoU penalised by normalised center distance and
/// aspect-ratio mismatch. Equals 1 only for identical boxes. The distance
/// penalty is below 1 and `alpha * v` below 1/2, so values lie in (-1.5, 1].
pub fn ciou(a: &PixelBox, b: &PixelBox) -> f64 {
    CiouTerms::new(a, b).ciou()
}

/// Derivative of `min(p, q)` with respect to `p`; ties split evenly.
fn dmin(p: f64, q: f64) -> f64 {
    if p < q {
        1.0
    } else if p > q {
        0.0
    } else {
        0.5
    }
}

/// Derivative of `max(p, q)` with respect to `p`; ties split evenly.
fn dmax(p: f64, q: f64) -> f64 {
    dmin(q, p)
}

/// Partial derivatives of `ciou(pred, target)` with respect to
/// `(pred.x, pred.y, pred.w, pred.h)`, holding `target` fixed and `alpha`
/// constant at its value for the current pair.
///
/// Where a `min`/`max` kink sits exactly on the evaluation point the
/// one-sided derivatives are averaged.
pub fn ciou_grad(pred: &PixelBox, target: &PixelBox) -> [f64; 4] {
    let t = CiouTerms::new(pred, target);
    let [px1, py1, px2, py2] = pred.corners();
    let [tx1, ty1, tx2, ty2] = target.corners();

    // d(corner)/d(x, w): x1 = x - w/2, x2 = x + w/2 (same for y, h).
    // Each entry is [d/dcenter, d/dsize] of the per-axis quantity.
    let axis = |p1: f64, p2: f64, t1: f64, t2: f64| {
        let overlap = p2.min(t2) - p1.max(t1);
        let (d_hi, d_lo) = (dmin(p2, t2), dmax(p1, t1));
        let d_overlap = if overlap > 0.0 { [d_hi - d_lo, 0.5 * d_hi + 0.5 * d_lo] } else { [0.0, 0.0] };
        let (e_hi, e_lo) = (dmax(p2, t2), dmin(p1, t1));
        let enclose = p2.max(t2) - p1.min(t1);
        let d_enclose = [e_hi - e_lo, 0.5 * e_hi + 0.5 * e_lo];
        (overlap.max(0.0), d_overlap, enclose, d_enclose)
    };
    let (iw, diw, cw, dcw) = axis(px1, px2, tx1, tx2);
    let (ih, dih, ch, dch) = axis(py1, py2, ty1, ty2);

    let inter = iw * ih;
    let union = pred.area() + target.area() - inter;
    // [dI/dx, dI/dy, dI/dw, dI/dh]
    let d_inter = [diw[0] * ih, dih[0] * iw, diw[1] * ih, dih[1] * iw];
    let d_area = [0.0, 0.0, pred.h, pred.w];
    let d_iou: Vec<f64> = (0..4)
        .map(|k| {
            if inter <= 0.0 {
                0.0
            } else {
                let d_union = d_area[k] - d_inter[k];
                (d_inter[k] * union - inter * d_union) / (union * union)
            }
        })
        .collect();

    let d_rho2 = [2.0 * (pred.x - target.x), 2.0 * (pred.y - target.y), 0.0, 0.0];
    let d_c2 = [2.0 * cw * dcw[0], 2.0 * ch * dch[0], 2.0 * cw * dcw[1], 2.0 * ch * dch[1]];
    let denom = t.c2 + CIOU_EPS;

    let atan_gap = (pred.w / pred.h).atan() - (target.w / target.h).atan();
    let norm = pred.w * pred.w + pred.h * pred.h;
    let dv_scale = 8.0 / (PI * PI) * atan_gap;
    let d_v = [0.0, 0.0, dv_scale * pred.h / norm, -dv_scale * pred.w / norm];

    let mut grad = [0.0; 4];
    for k in 0..4 {
        let d_dist = (d_rho2[k] * denom - t.rho2 * d_c2[k]) / (denom * denom);
        grad[k] = d_iou[k] - d_dist - t.alpha * d_v[k];
    }
    grad
}

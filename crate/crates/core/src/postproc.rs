//! Candidate selection after decoding: oversize filter on the two finer
//! branches, per-branch NMS, then NMS across branches.

use serde::{Deserialize, Serialize};

use crate::boxcodec::{decode_pixel, HeadLogits};
use crate::boxgeom::{iou, PixelBox};
use crate::error::{Error, Result};
use crate::gridanchor::{scale_limit, GridSpec, STRIDES};
use crate::pyramid::{FeatureMap, HEAD_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: PixelBox,
    pub score: f64,
    pub stride: u32,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineParams {
    pub branch_iou_thr: f64,
    pub cross_iou_thr: f64,
    pub score_thr: f64,
}

impl PipelineParams {
    /// Thresholds used when producing candidates for evaluation.
    pub const EVAL: Self = Self { branch_iou_thr: 0.5, cross_iou_thr: 0.5, score_thr: 0.001 };
    /// Thresholds for interactive detection output.
    pub const INTERACTIVE: Self = Self { branch_iou_thr: 0.5, cross_iou_thr: 0.5, score_thr: 0.25 };

    pub fn validate(&self) -> Result<()> {
        let open = |name, v: f64| {
            if v > 0.0 && v < 1.0 {
                Ok(())
            } else {
                Err(Error::OutOfRange { name, range: "(0, 1)", value: v })
            }
        };
        open("branch_iou_thr", self.branch_iou_thr)?;
        open("cross_iou_thr", self.cross_iou_thr)?;
        if !(self.score_thr >= 0.0 && self.score_thr < 1.0) {
            return Err(Error::OutOfRange { name: "score_thr", range: "[0, 1)", value: self.score_thr });
        }
        Ok(())
    }
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self::EVAL
    }
}

/// Drops stride-8 and stride-16 detections whose longer side exceeds
/// `d^2`. Stride-32 detections always pass.
pub fn size_filter(dets: &[Detection]) -> Vec<Detection> {
    dets.iter().filter(|d| d.stride == STRIDES[2] || d.bbox.longer_side() <= scale_limit(d.stride)).copied().collect()
}

/// Greedy hard NMS. Candidates are visited by descending score (ties in
/// input order); each kept box discards every later one with IoU above
/// `iou_threshold`. Output is in descending score order.
pub fn nms(dets: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut suppressed = vec![false; dets.len()];
    let mut keep = Vec::new();
    for (pos, &i) in order.iter().enumerate() {
        if suppressed[i] {
            continue;
        }
        keep.push(dets[i]);
        for &j in &order[pos + 1..] {
            if !suppressed[j] && iou(&dets[i].bbox, &dets[j].bbox) > iou_threshold {
                suppressed[j] = true;
            }
        }
    }
    keep
}

/// The full selection: score threshold, size filter, per-branch NMS, then
/// NMS over the merged branches (merged in stride order).
pub fn detect_pipeline(per_branch: &[Vec<Detection>; 3], params: &PipelineParams) -> Result<Vec<Detection>> {
    params.validate()?;
    let mut merged = Vec::new();
    for branch in per_branch {
        let confident: Vec<Detection> = branch.iter().filter(|d| d.score >= params.score_thr).copied().collect();
        merged.extend(nms(&size_filter(&confident), params.branch_iou_thr));
    }
    Ok(nms(&merged, params.cross_iou_thr))
}

/// Decodes every cell of a 5-channel head output at `stride`.
pub fn decode_branch(head: &FeatureMap, stride: u32) -> Result<Vec<Detection>> {
    if head.channels() != HEAD_CHANNELS {
        return Err(Error::Shape {
            node: format!("head@{stride}"),
            reason: format!("expected {HEAD_CHANNELS} channels, got {}", head.channels()),
        });
    }
    if !STRIDES.contains(&stride) {
        return Err(Error::UnsupportedStride(stride));
    }
    let grid = GridSpec { stride, cols: head.cols() as u32, rows: head.rows() as u32 };
    let mut out = Vec::with_capacity(head.rows() * head.cols());
    for row in 0..head.rows() {
        for col in 0..head.cols() {
            let px = head.pixel(row, col);
            let z = HeadLogits([0, 1, 2, 3, 4].map(|k| px[k] as f64));
            let (bbox, score) = decode_pixel(&z, &grid.anchor(row as u32, col as u32));
            out.push(Detection { bbox, score, stride });
        }
    }
    Ok(out)
}

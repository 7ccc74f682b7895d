//! Perfect-prediction detections: every ground truth is encoded at each
//! anchor it is assigned to, inverted to head logits and decoded back.

use anyhow::Result;
use detkit::boxcodec::{decode_pixel, encode_gt, invert_pixel};
use detkit::datasets::ImageRecord;
use detkit::gridanchor::assign_all;
use detkit::postproc::{detect_pipeline, Detection, PipelineParams};
use detkit::STRIDES;

pub const ORACLE_SCORE: f64 = 0.9;

/// Branch-wise decoded candidates for one image. Anchors whose coded
/// target falls outside the decodable range are skipped.
pub fn oracle_branches(rec: &ImageRecord, score: f64) -> Result<[Vec<Detection>; 3]> {
    let mut branches: [Vec<Detection>; 3] = Default::default();
    for a in assign_all(&rec.gts, rec.width, rec.height)? {
        let gt = &rec.gts[a.gt_index];
        let stride = a.anchor.stride;
        if !encode_gt(gt, &a.anchor).is_decodable(stride) {
            continue;
        }
        let (bbox, s) = decode_pixel(&invert_pixel(gt, &a.anchor, score), &a.anchor);
        let k = STRIDES.iter().position(|&d| d == stride).expect("assigned stride");
        branches[k].push(Detection { bbox, score: s, stride });
    }
    Ok(branches)
}

pub fn oracle_detections(rec: &ImageRecord, params: &PipelineParams) -> Result<Vec<Detection>> {
    Ok(detect_pipeline(&oracle_branches(rec, ORACLE_SCORE)?, params)?)
}

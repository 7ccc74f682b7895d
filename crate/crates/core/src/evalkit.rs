//! Single-class detection evaluation: greedy matching, PR curves,
//! 101-point interpolated AP and mAP over IoU 0.50:0.95.
//!
//! Matching is per image; ranking for AP and PR curves pools every image
//! and orders by `(score desc, image id, rank within image)`, so the
//! result does not depend on the order images are supplied in.

use serde::Serialize;

use crate::boxgeom::{iou, PixelBox};
use crate::postproc::Detection;

/// `0.50, 0.55, ..., 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|k| (50 + 5 * k) as f64 / 100.0).collect()
}

const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// Detection scores in descending order (stable for ties).
    pub scores: Vec<f64>,
    /// True-positive flag for each entry of `scores`.
    pub is_tp: Vec<bool>,
    /// Matched flag per ground truth, in input order.
    pub gt_matched: Vec<bool>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl MatchResult {
    pub fn num_gts(&self) -> usize {
        self.gt_matched.len()
    }
}

/// Greedy matching at one IoU threshold. Detections are visited by
/// descending score; each claims the unmatched ground truth of highest IoU
/// (lowest index on ties) when that IoU is at least `iou_thr`.
pub fn match_at(dets: &[Detection], gts: &[PixelBox], iou_thr: f64) -> MatchResult {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
    let mut gt_matched = vec![false; gts.len()];
    let mut is_tp = Vec::with_capacity(dets.len());
    for &i in &order {
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if gt_matched[g] {
                continue;
            }
            let v = iou(&dets[i].bbox, gt);
            if v >= iou_thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, _)) = best {
            gt_matched[g] = true;
        }
        is_tp.push(best.is_some());
    }
    let tp = is_tp.iter().filter(|&&t| t).count();
    MatchResult {
        scores: order.iter().map(|&i| dets[i].score).collect(),
        fp: is_tp.len() - tp,
        fn_: gts.len() - tp,
        tp,
        is_tp,
        gt_matched,
    }
}

/// One image's detections and ground truths.
#[derive(Debug, Clone, Copy)]
pub struct EvalImage<'a> {
    pub image_id: i64,
    pub dets: &'a [Detection],
    pub gts: &'a [PixelBox],
}

/// Ranked true/false-positive flags pooled across images.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PooledMatches {
    pub scores: Vec<f64>,
    pub is_tp: Vec<bool>,
    pub num_gts: usize,
}

impl PooledMatches {
    /// Pools per-image results keyed by image id.
    pub fn from_results(results: &[(i64, MatchResult)]) -> Self {
        let mut entries: Vec<(f64, i64, usize, bool)> = Vec::new();
        for (img, r) in results {
            for (rank, (&s, &t)) in r.scores.iter().zip(&r.is_tp).enumerate() {
                entries.push((s, *img, rank, t));
            }
        }
        entries.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        Self {
            scores: entries.iter().map(|e| e.0).collect(),
            is_tp: entries.iter().map(|e| e.3).collect(),
            num_gts: results.iter().map(|(_, r)| r.num_gts()).sum(),
        }
    }

    pub fn single(result: &MatchResult) -> Self {
        Self { scores: result.scores.clone(), is_tp: result.is_tp.clone(), num_gts: result.num_gts() }
    }

    pub fn tp(&self) -> usize {
        self.is_tp.iter().filter(|&&t| t).count()
    }

    pub fn fp(&self) -> usize {
        self.is_tp.len() - self.tp()
    }
}

pub fn match_images(images: &[EvalImage<'_>], iou_thr: f64) -> PooledMatches {
    let results: Vec<(i64, MatchResult)> =
        images.iter().map(|im| (im.image_id, match_at(im.dets, im.gts, iou_thr))).collect();
    PooledMatches::from_results(&results)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PRCurve {
    /// Score threshold at each point: the score of the last admitted detection.
    pub thresholds: Vec<f64>,
    pub recall: Vec<f64>,
    pub precision: Vec<f64>,
    /// `max(precision[j])` for `j >= i`; non-increasing.
    pub envelope: Vec<f64>,
}

impl PRCurve {
    pub fn len(&self) -> usize {
        self.recall.len()
    }

    pub fn is_empty(&self) -> bool {
        self.recall.is_empty()
    }

    /// Envelope precision at the first point reaching `recall`, 0 if none does.
    pub fn interpolated_precision(&self, recall: f64) -> f64 {
        let i = self.recall.partition_point(|&r| r < recall);
        self.envelope.get(i).copied().unwrap_or(0.0)
    }
}

/// Sweeps the score threshold down the ranked detections.
pub fn pr_curve_from(pooled: &PooledMatches) -> PRCurve {
    let n = pooled.is_tp.len();
    let (mut recall, mut precision) = (Vec::with_capacity(n), Vec::with_capacity(n));
    let mut tp = 0usize;
    for (i, &t) in pooled.is_tp.iter().enumerate() {
        tp += t as usize;
        recall.push(if pooled.num_gts == 0 { 0.0 } else { tp as f64 / pooled.num_gts as f64 });
        precision.push(tp as f64 / (i + 1) as f64);
    }
    let mut envelope = precision.clone();
    for i in (0..n.saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    PRCurve { thresholds: pooled.scores.clone(), recall, precision, envelope }
}

pub fn pr_curve(images: &[EvalImage<'_>], iou_thr: f64) -> PRCurve {
    pr_curve_from(&match_images(images, iou_thr))
}

/// 101-point interpolated AP. `None` when there is nothing to evaluate
/// (no ground truths and no detections); 0 when only detections exist.
pub fn average_precision(pooled: &PooledMatches) -> Option<f64> {
    if pooled.num_gts == 0 {
        return if pooled.is_tp.is_empty() { None } else { Some(0.0) };
    }
    let curve = pr_curve_from(pooled);
    let sum: f64 = (0..RECALL_POINTS).map(|k| curve.interpolated_precision(k as f64 / 100.0)).sum();
    Some(sum / RECALL_POINTS as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdStats {
    pub iou_thr: f64,
    pub ap: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub num_gts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MapSummary {
    /// Mean AP over the thresholds with a defined AP.
    pub map: Option<f64>,
    pub ap50: Option<f64>,
    pub per_threshold: Vec<ThresholdStats>,
    pub num_dets: usize,
    pub num_gts: usize,
}

fn stats_at(images: &[EvalImage<'_>], iou_thr: f64) -> ThresholdStats {
    let pooled = match_images(images, iou_thr);
    ThresholdStats {
        iou_thr,
        ap: average_precision(&pooled),
        tp: pooled.tp(),
        fp: pooled.fp(),
        num_gts: pooled.num_gts,
    }
}

/// AP over `thresholds` and their mean, plus AP at IoU 0.5.
pub fn map_range(images: &[EvalImage<'_>], thresholds: &[f64]) -> MapSummary {
    let per_threshold: Vec<ThresholdStats> = thresholds.iter().map(|&t| stats_at(images, t)).collect();
    let defined: Vec<f64> = per_threshold.iter().filter_map(|s| s.ap).collect();
    let map = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    let ap50 = match per_threshold.iter().find(|s| s.iou_thr == 0.5) {
        Some(s) => s.ap,
        None => stats_at(images, 0.5).ap,
    };
    MapSummary {
        map,
        ap50,
        per_threshold,
        num_dets: images.iter().map(|im| im.dets.len()).sum(),
        num_gts: images.iter().map(|im| im.gts.len()).sum(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt() -> PixelBox {
        PixelBox::new(50.0, 50.0, 10.0, 10.0).unwrap()
    }

    fn det(w: f64, h: f64, score: f64) -> Detection {
        Detection { bbox: PixelBox::new(50.0, 50.0, w, h).unwrap(), score, stride: 8 }
    }

    fn far(score: f64) -> Detection {
        Detection { bbox: PixelBox::new(500.0, 500.0, 10.0, 10.0).unwrap(), score, stride: 8 }
    }

    #[test]
    fn single_match() {
        let r = match_at(&[det(10.0, 6.0, 0.9)], &[gt()], 0.5);
        assert_eq!((r.tp, r.fp, r.fn_), (1, 0, 0));
    }

    #[test]
    fn duplicate_is_false_positive() {
        let r = match_at(&[det(10.0, 10.0, 0.8), det(10.0, 9.0, 0.9)], &[gt()], 0.5);
        assert_eq!(r.scores, vec![0.9, 0.8]);
        assert_eq!(r.is_tp, vec![true, false]);
    }

    #[test]
    fn perfect_detector_ap() {
        let pooled = PooledMatches::single(&match_at(&[det(10.0, 10.0, 0.3)], &[gt()], 0.5));
        assert_eq!(average_precision(&pooled), Some(1.0));
    }

    #[test]
    fn fp_then_tp_ap() {
        let pooled = PooledMatches::single(&match_at(&[far(0.9), det(10.0, 10.0, 0.8)], &[gt()], 0.5));
        let ap = average_precision(&pooled).unwrap();
        assert!((ap - 0.5).abs() < 1e-15, "{ap}");
    }

    #[test]
    fn half_recall_ap() {
        let other = PixelBox::new(200.0, 200.0, 10.0, 10.0).unwrap();
        let pooled = PooledMatches::single(&match_at(&[det(10.0, 10.0, 0.9)], &[gt(), other], 0.5));
        // recall points 0.00..=0.50 reach precision 1
        let ap = average_precision(&pooled).unwrap();
        assert!((ap - 51.0 / 101.0).abs() < 1e-15);
        assert!(ap > 0.0 && ap < 0.51);
    }

    #[test]
    fn ap_edge_cases() {
        let nothing = PooledMatches { scores: vec![], is_tp: vec![], num_gts: 0 };
        assert_eq!(average_precision(&nothing), None);
        let spurious = PooledMatches { scores: vec![0.5], is_tp: vec![false], num_gts: 0 };
        assert_eq!(average_precision(&spurious), Some(0.0));
        let missed = PooledMatches { scores: vec![], is_tp: vec![], num_gts: 3 };
        assert_eq!(average_precision(&missed), Some(0.0));
    }

    #[test]
    fn iou_072_map() {
        // concentric 10 x 7.2 inside 10 x 10
        let d = [det(10.0, 7.2, 0.9)];
        let g = [gt()];
        assert!((iou(&d[0].bbox, &g[0]) - 0.72).abs() < 1e-12);
        let s = map_range(&[EvalImage { image_id: 1, dets: &d, gts: &g }], &coco_thresholds());
        assert_eq!(s.map, Some(0.5));
        assert_eq!(s.ap50, Some(1.0));
    }

    #[test]
    fn empty_detections_score_zero() {
        let g = [gt()];
        let s = map_range(&[EvalImage { image_id: 1, dets: &[], gts: &g }], &coco_thresholds());
        assert_eq!(s.map, Some(0.0));
        assert_eq!(s.ap50, Some(0.0));
    }

    #[test]
    fn curve_shape() {
        let pooled =
            PooledMatches { scores: vec![0.9, 0.8, 0.7, 0.6], is_tp: vec![true, false, true, false], num_gts: 2 };
        let c = pr_curve_from(&pooled);
        assert_eq!(c.recall, vec![0.5, 0.5, 1.0, 1.0]);
        assert_eq!(c.precision, vec![1.0, 0.5, 2.0 / 3.0, 0.5]);
        assert_eq!(c.envelope, vec![1.0, 2.0 / 3.0, 2.0 / 3.0, 0.5]);
        let all_fp = pr_curve_from(&PooledMatches { scores: vec![0.9, 0.1], is_tp: vec![false, false], num_gts: 1 });
        assert_eq!(all_fp.recall, vec![0.0, 0.0]);
        assert_eq!(all_fp.precision, vec![0.0, 0.0]);
    }

    #[test]
    fn thresholds_are_exact() {
        let t = coco_thresholds();
        assert_eq!(t.len(), 10);
        assert_eq!(t[0], 0.5);
        assert_eq!(t[4], 0.7);
        assert_eq!(t[9], 0.95);
    }
}

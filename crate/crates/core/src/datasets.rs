//! Ground-truth ingestion from COCO annotation JSON, synthetic scenes for
//! desk-scale runs, and the detection record text format.
//!
//! Detection records are one per line, comma separated:
//! `image_id,x,y,w,h,score,stride` with center-format pixel boxes, box
//! fields in shortest round-trip float form and scores at 6 decimals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::boxgeom::PixelBox;
use crate::error::{Error, Result};
use crate::gridanchor::STRIDES;
use crate::postproc::Detection;
use crate::rng::DetRng;

/// Image dimensions are padded up to a multiple of this.
pub const PAD_MULTIPLE: u32 = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: i64,
    pub width: u32,
    pub height: u32,
    pub gts: Vec<PixelBox>,
}

impl ImageRecord {
    pub fn contains_center(&self, gt: &PixelBox) -> bool {
        gt.x >= 0.0 && gt.y >= 0.0 && gt.x < self.width as f64 && gt.y < self.height as f64
    }
}

pub fn pad_dimension(dim: u32) -> u32 {
    dim.div_ceil(PAD_MULTIPLE).max(1) * PAD_MULTIPLE
}

#[derive(Debug, Deserialize)]
struct CocoFile {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoImage {
    id: i64,
    width: u32,
    height: u32,
}

#[derive(Debug, Serialize, Deserialize)]
struct CocoAnnotation {
    image_id: i64,
    bbox: [f64; 4],
    #[serde(default)]
    iscrowd: i64,
}

/// Counts of annotations dropped while loading.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub crowd: usize,
    pub degenerate: usize,
    pub outside: usize,
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let before: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    before + column.saturating_sub(1)
}

/// Parses a COCO annotation document. Categories are ignored; crowd,
/// zero-area and out-of-image annotations are dropped and counted.
pub fn parse_coco_str(text: &str) -> Result<(Vec<ImageRecord>, LoadStats)> {
    let file: CocoFile = serde_json::from_str(text)
        .map_err(|e| Error::Json { offset: byte_offset(text, e.line(), e.column()), message: e.to_string() })?;
    let mut records: BTreeMap<i64, ImageRecord> = BTreeMap::new();
    let mut order = Vec::with_capacity(file.images.len());
    for im in &file.images {
        order.push(im.id);
        records.insert(
            im.id,
            ImageRecord {
                image_id: im.id,
                width: pad_dimension(im.width),
                height: pad_dimension(im.height),
                gts: vec![],
            },
        );
    }
    let mut stats = LoadStats::default();
    for ann in &file.annotations {
        let record = records.get_mut(&ann.image_id).ok_or(Error::UnknownImage(ann.image_id))?;
        if ann.iscrowd != 0 {
            stats.crowd += 1;
            continue;
        }
        let [x, y, w, h] = ann.bbox;
        let Ok(gt) = PixelBox::from_top_left(x, y, w, h) else {
            warn!("image {}: skipping degenerate bbox {:?}", ann.image_id, ann.bbox);
            stats.degenerate += 1;
            continue;
        };
        if !record.contains_center(&gt) {
            warn!("image {}: bbox center ({}, {}) lies outside the image; skipped", ann.image_id, gt.x, gt.y);
            stats.outside += 1;
            continue;
        }
        record.gts.push(gt);
    }
    if stats.crowd > 0 {
        warn!("skipped {} crowd annotations", stats.crowd);
    }
    Ok((order.iter().filter_map(|id| records.remove(id)).collect(), stats))
}

pub fn load_coco_json(path: impl AsRef<Path>) -> Result<Vec<ImageRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_coco_str(&text)?.0)
}

/// Serialises records as a minimal COCO annotation document.
pub fn to_coco_json(records: &[ImageRecord]) -> String {
    #[derive(Serialize)]
    struct Out<'a> {
        images: Vec<CocoImage>,
        annotations: Vec<CocoAnnotation>,
        categories: [BTreeMap<&'a str, serde_json::Value>; 1],
    }
    let images = records.iter().map(|r| CocoImage { id: r.image_id, width: r.width, height: r.height }).collect();
    let annotations = records
        .iter()
        .flat_map(|r| {
            r.gts.iter().map(|g| CocoAnnotation {
                image_id: r.image_id,
                bbox: [g.x - g.w / 2.0, g.y - g.h / 2.0, g.w, g.h],
                iscrowd: 0,
            })
        })
        .collect();
    let category = BTreeMap::from([("id", 1.into()), ("name", "object".into())]);
    serde_json::to_string_pretty(&Out { images, annotations, categories: [category] }).expect("plain data serialises")
}

pub fn write_coco_json(path: impl AsRef<Path>, records: &[ImageRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_coco_json(records)).map_err(|e| Error::io(path, e))
}

pub const SYNTH_MIN_SIDE: f64 = 4.0;
pub const SYNTH_MAX_SIDE: f64 = 512.0;
pub const SYNTH_BORDER: f64 = 2.0;

/// Deterministic synthetic corpus. Sides are log-uniform in `[4, 512]`,
/// centers uniform with at least 2 px clearance from every border.
pub fn gen_synthetic(
    seed: u64,
    num_images: usize,
    image_size: u32,
    boxes_per_image: usize,
) -> Result<Vec<ImageRecord>> {
    if image_size == 0 || !image_size.is_multiple_of(PAD_MULTIPLE) {
        return Err(Error::NotDivisible { dim: image_size, stride: PAD_MULTIPLE });
    }
    let mut rng = DetRng::new(seed);
    let size = image_size as f64;
    let records = (0..num_images)
        .map(|i| {
            let gts = (0..boxes_per_image)
                .map(|_| PixelBox {
                    x: rng.uniform(SYNTH_BORDER, size - SYNTH_BORDER),
                    y: rng.uniform(SYNTH_BORDER, size - SYNTH_BORDER),
                    w: rng.log_uniform(SYNTH_MIN_SIDE, SYNTH_MAX_SIDE),
                    h: rng.log_uniform(SYNTH_MIN_SIDE, SYNTH_MAX_SIDE),
                })
                .collect();
            ImageRecord { image_id: i as i64 + 1, width: image_size, height: image_size, gts }
        })
        .collect();
    Ok(records)
}

/// A detection tagged with its image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectionRecord {
    pub image_id: i64,
    pub det: Detection,
}

pub fn format_detection(rec: &DetectionRecord) -> String {
    let b = &rec.det.bbox;
    format!("{},{},{},{},{},{:.6},{}", rec.image_id, b.x, b.y, b.w, b.h, rec.det.score, rec.det.stride)
}

pub fn format_detections(recs: &[DetectionRecord]) -> String {
    let mut out = String::new();
    for r in recs {
        writeln!(out, "{}", format_detection(r)).expect("writing to a String");
    }
    out
}

/// Parses detection records; `source` labels errors. Blank lines are skipped.
pub fn parse_detections(text: &str, source: &str) -> Result<Vec<DetectionRecord>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Record { path: source.to_string(), line: n + 1, message };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 7 {
            return Err(err(format!("expected 7 comma-separated fields, found {}", fields.len())));
        }
        let image_id: i64 = fields[0].parse().map_err(|_| err(format!("bad image id `{}`", fields[0])))?;
        let mut nums = [0.0f64; 5];
        for (k, v) in nums.iter_mut().enumerate() {
            *v = fields[k + 1].parse().map_err(|_| err(format!("bad number `{}`", fields[k + 1])))?;
        }
        let stride: u32 = fields[6].parse().map_err(|_| err(format!("bad stride `{}`", fields[6])))?;
        if !STRIDES.contains(&stride) {
            return Err(err(format!("stride {stride} is not one of 8, 16, 32")));
        }
        let [x, y, w, h, score] = nums;
        let bbox = PixelBox::new(x, y, w, h).map_err(|e| err(e.to_string()))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(err(format!("score {score} outside [0, 1]")));
        }
        out.push(DetectionRecord { image_id, det: Detection { bbox, score, stride } });
    }
    Ok(out)
}

pub fn save_detections(path: impl AsRef<Path>, recs: &[DetectionRecord]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_detections(recs)).map_err(|e| Error::io(path, e))
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<DetectionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, &path.display().to_string())
}

/// Detections grouped per record, aligned with `records`. Detections for
/// image ids absent from `records` are dropped with a warning.
pub fn detections_by_image(records: &[ImageRecord], dets: &[DetectionRecord]) -> Vec<Vec<Detection>> {
    let index: BTreeMap<i64, usize> = records.iter().enumerate().map(|(i, r)| (r.image_id, i)).collect();
    let mut out = vec![Vec::new(); records.len()];
    let mut orphans = 0usize;
    for d in dets {
        match index.get(&d.image_id) {
            Some(&i) => out[i].push(d.det),
            None => orphans += 1,
        }
    }
    if orphans > 0 {
        warn!("{orphans} detections reference images without annotations; ignored");
    }
    out
}

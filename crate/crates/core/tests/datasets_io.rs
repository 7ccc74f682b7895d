use detkit::datasets::{
    detections_by_image, gen_synthetic, load_coco_json, load_detections, save_detections, write_coco_json,
    DetectionRecord,
};
use detkit::postproc::Detection;
use detkit::rng::DetRng;
use detkit::{PixelBox, STRIDES};

const FIVE_IMAGES: &str = r#"{
  "images": [
    {"id": 1, "width": 640, "height": 480},
    {"id": 2, "width": 320, "height": 320},
    {"id": 3, "width": 500, "height": 375},
    {"id": 4, "width": 64, "height": 64},
    {"id": 5, "width": 1024, "height": 768}
  ],
  "annotations": [
    {"id": 1, "image_id": 1, "bbox": [10, 20, 30, 40], "category_id": 1},
    {"id": 2, "image_id": 1, "bbox": [100, 100, 50, 50], "category_id": 2},
    {"id": 3, "image_id": 1, "bbox": [300, 200, 5, 8], "category_id": 1},
    {"id": 4, "image_id": 2, "bbox": [0, 0, 320, 320], "category_id": 1},
    {"id": 5, "image_id": 3, "bbox": [480, 360, 30, 30], "category_id": 1},
    {"id": 6, "image_id": 3, "bbox": [12.5, 7.25, 3.5, 2.0], "category_id": 1},
    {"id": 7, "image_id": 5, "bbox": [1, 1, 2, 2], "category_id": 1, "iscrowd": 1},
    {"id": 8, "image_id": 5, "bbox": [600, 400, 100, 0], "category_id": 1},
    {"id": 9, "image_id": 5, "bbox": [600, 400, 100, 80], "category_id": 1}
  ],
  "categories": [{"id": 1, "name": "a"}, {"id": 2, "name": "b"}]
}"#;

#[test]
fn hand_written_fixture_counts() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ann.json");
    std::fs::write(&path, FIVE_IMAGES).unwrap();
    let recs = load_coco_json(&path).unwrap();
    let counts: Vec<usize> = recs.iter().map(|r| r.gts.len()).collect();
    // image 5 drops one crowd and one zero-height box
    assert_eq!(counts, vec![3, 1, 2, 0, 1]);
    // 500x375 pads to 512x384
    assert_eq!((recs[2].width, recs[2].height), (512, 384));
    assert_eq!(recs[2].gts[1], PixelBox::new(14.25, 8.25, 3.5, 2.0).unwrap());
}

#[test]
fn synthetic_corpus_survives_coco_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.json");
    let corpus = gen_synthetic(42, 25, 640, 6).unwrap();
    write_coco_json(&path, &corpus).unwrap();
    let back = load_coco_json(&path).unwrap();
    assert_eq!(back.len(), corpus.len());
    for (a, b) in corpus.iter().zip(&back) {
        assert_eq!((a.image_id, a.width, a.height, a.gts.len()), (b.image_id, b.width, b.height, b.gts.len()));
        for (g, h) in a.gts.iter().zip(&b.gts) {
            assert!((g.x - h.x).abs() < 1e-6 && (g.y - h.y).abs() < 1e-6);
            assert!((g.w - h.w).abs() < 1e-6 && (g.h - h.h).abs() < 1e-6);
        }
    }
}

#[test]
fn thousand_detections_roundtrip() {
    let mut rng = DetRng::new(5);
    let recs: Vec<DetectionRecord> = (0..1000)
        .map(|i| DetectionRecord {
            image_id: (i % 17) as i64,
            det: Detection {
                bbox: PixelBox::new(
                    rng.uniform(-5.0, 700.0),
                    rng.uniform(0.0, 700.0),
                    rng.uniform(0.1, 900.0),
                    rng.uniform(0.1, 900.0),
                )
                .unwrap(),
                score: rng.unit(),
                stride: *rng.pick(&STRIDES),
            },
        })
        .collect();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dets.txt");
    save_detections(&path, &recs).unwrap();
    let back = load_detections(&path).unwrap();
    assert_eq!(back.len(), recs.len());
    for (a, b) in recs.iter().zip(&back) {
        assert_eq!(a.image_id, b.image_id);
        assert_eq!(a.det.bbox, b.det.bbox);
        assert_eq!(a.det.stride, b.det.stride);
        assert!((a.det.score - b.det.score).abs() <= 5e-7);
        assert_eq!(format!("{:.6}", a.det.score), format!("{:.6}", b.det.score));
    }
    let empty = dir.path().join("empty.txt");
    save_detections(&empty, &[]).unwrap();
    assert_eq!(std::fs::read_to_string(&empty).unwrap(), "");
    assert!(load_detections(&empty).unwrap().is_empty());
}

#[test]
fn grouping_follows_records() {
    let corpus = gen_synthetic(1, 3, 64, 1).unwrap();
    let det = Detection { bbox: PixelBox::new(1.0, 1.0, 2.0, 2.0).unwrap(), score: 0.5, stride: 8 };
    let dets = [
        DetectionRecord { image_id: 3, det },
        DetectionRecord { image_id: 1, det },
        DetectionRecord { image_id: 99, det },
    ];
    let grouped = detections_by_image(&corpus, &dets);
    assert_eq!(grouped.iter().map(Vec::len).collect::<Vec<_>>(), vec![1, 0, 1]);
}

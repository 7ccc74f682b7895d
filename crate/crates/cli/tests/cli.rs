use std::path::Path;
use std::process::{Command, Output};

use detkit::datasets::{gen_synthetic, load_detections, write_coco_json};
use detkit::rng::DetRng;
use detkit::FeatureMap;

fn detkit(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_detkit")).current_dir(dir).env_remove("DETKIT_CONFIG").args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn topo_prints_dependency_sets() {
    let dir = tempfile::tempdir().unwrap();
    let o = detkit(dir.path(), &["topo", "--mode", "sfpn"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o), "P3:{B3,B5} P4:{B4,B5} P5:{B5}\n");
    let o = detkit(dir.path(), &["topo", "--mode", "fpn"]);
    assert_eq!(stdout(&o), "P3:{B3,B4,B5} P4:{B4,B5} P5:{B5}\n");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(detkit(dir.path(), &["nope"]).status.code(), Some(2));
    assert_eq!(detkit(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(detkit(dir.path(), &["topo", "--mode", "bifpn"]).status.code(), Some(2));
    let o = detkit(dir.path(), &["eval", "--det", "missing.txt", "--ann", "missing.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.json"));
    let o = detkit(dir.path(), &["topo", "--cross-iou-thr", "1.5"]);
    assert_eq!(o.status.code(), Some(1));
    let o = detkit(dir.path(), &["encode", "--stride", "12", "--row", "0", "--col", "0", "1,1,2,2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn check_grad_reports_worst_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = detkit(dir.path(), &["check-grad", "--n", "500", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    let last = out.lines().last().unwrap();
    let worst: f64 = last.split_whitespace().next().unwrap().trim_start_matches("worst_rel_err=").parse().unwrap();
    assert!(worst < 1e-5, "{last}");
}

#[test]
fn empty_detections_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    write_coco_json(dir.path().join("a.json"), &gen_synthetic(1, 3, 128, 2).unwrap()).unwrap();
    std::fs::write(dir.path().join("d.txt"), "").unwrap();
    let o = detkit(dir.path(), &["eval", "--det", "d.txt", "--ann", "a.json"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).starts_with("mAP_50_95=0.000000 AP_50=0.000000 dets=0 gts=6"), "{}", stdout(&o));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.cfg"), "mode=fpn\nwith_pan=true\n").unwrap();
    let via_env = Command::new(env!("CARGO_BIN_EXE_detkit"))
        .current_dir(dir.path())
        .env("DETKIT_CONFIG", "run.cfg")
        .arg("topo")
        .output()
        .unwrap();
    assert_eq!(stdout(&via_env), "P3:{B3,B4,B5} N4:{B3,B4,B5} N5:{B3,B4,B5}\n");
    let flagged = detkit(dir.path(), &["--config", "run.cfg", "topo", "--mode", "sfpn", "--with-pan", "false"]);
    assert_eq!(stdout(&flagged), "P3:{B3,B5} P4:{B4,B5} P5:{B5}\n");
    std::fs::write(dir.path().join("bad.cfg"), "threshold 3\n").unwrap();
    assert_eq!(detkit(dir.path(), &["--config", "bad.cfg", "topo"]).status.code(), Some(1));
}

#[test]
fn encode_then_decode_through_stdin() {
    let dir = tempfile::tempdir().unwrap();
    let o = detkit(dir.path(), &["encode", "--stride", "16", "--row", "2", "--col", "1", "20,40,30,50"]);
    assert_eq!(stdout(&o), "0.25,0.5,1.875,3.125\n");
    let o = detkit(
        dir.path(),
        &["encode", "--logits", "--score", "0.25", "--stride", "16", "--row", "2", "--col", "1", "20,40,30,50"],
    );
    let logits = stdout(&o);
    let mut child = Command::new(env!("CARGO_BIN_EXE_detkit"))
        .args(["decode", "--stride", "16", "--row", "2", "--col", "1"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    use std::io::Write;
    child.stdin.take().unwrap().write_all(logits.as_bytes()).unwrap();
    let out = String::from_utf8(child.wait_with_output().unwrap().stdout).unwrap();
    let vals: Vec<f64> = out.trim().split(',').map(|v| v.parse().unwrap()).collect();
    for (got, want) in vals.iter().zip([20.0, 40.0, 30.0, 50.0, 0.25]) {
        assert!((got - want).abs() < 1e-9, "{out}");
    }
}

#[test]
fn forward_and_detect_outputs_load_back() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = DetRng::new(4);
    for (name, (rows, ch)) in ["b3.fmap", "b4.fmap", "b5.fmap"].iter().zip([(32, 2), (16, 3), (8, 4)]) {
        FeatureMap::random(&mut rng, rows, rows, ch).write(dir.path().join(name)).unwrap();
    }
    let o = detkit(dir.path(), &["forward", "--inputs", "b3.fmap", "b4.fmap", "b5.fmap", "--out-dir", "out"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let head = FeatureMap::read(dir.path().join("out/head16.fmap")).unwrap();
    assert_eq!((head.rows(), head.cols(), head.channels()), (16, 16, 5));
    let o = detkit(
        dir.path(),
        &[
            "detect",
            "--heads",
            "out/head8.fmap",
            "out/head16.fmap",
            "out/head32.fmap",
            "--image-id",
            "9",
            "--out",
            "d.txt",
        ],
    );
    assert_eq!(o.status.code(), Some(0));
    let dets = load_detections(dir.path().join("d.txt")).unwrap();
    assert!(!dets.is_empty());
    assert!(dets.iter().all(|d| d.image_id == 9 && d.det.score >= 0.001));
    std::fs::write(dir.path().join("junk.fmap"), b"FMAPxx").unwrap();
    let o = detkit(dir.path(), &["detect", "--heads", "junk.fmap", "junk.fmap", "junk.fmap"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn assign_and_pr_plot_are_parseable() {
    let dir = tempfile::tempdir().unwrap();
    assert!(detkit(dir.path(), &["synth", "--seed", "3", "--images", "5", "--size", "256", "--out", "a.json"])
        .status
        .success());
    let assign = stdout(&detkit(dir.path(), &["assign", "--ann", "a.json"]));
    for line in assign.lines() {
        let f: Vec<u32> = line.split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(f.len(), 5);
        assert!([8, 16, 32].contains(&f[2]));
        assert!(f[3] < 256 / f[2] && f[4] < 256 / f[2]);
    }
    assert!(detkit(dir.path(), &["oracle", "--ann", "a.json", "--out", "d.txt"]).status.success());
    let csv = stdout(&detkit(dir.path(), &["pr-plot", "--det", "d.txt", "--ann", "a.json"]));
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("threshold,recall,precision"));
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|v| v.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), load_detections(dir.path().join("d.txt")).unwrap().len());
    assert_eq!(rows.last().unwrap()[1], 1.0);
}

use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use detkit::boxcodec::{coded_to_pixel, decode_coded, encode_gt, invert_pixel, HeadLogits};
use detkit::datasets::{
    detections_by_image, format_detections, gen_synthetic, load_coco_json, load_detections, save_detections,
    write_coco_json, DetectionRecord, ImageRecord,
};
use detkit::evalkit::{coco_thresholds, map_range, pr_curve, EvalImage, MapSummary};
use detkit::gridanchor::assign_all;
use detkit::lossfn::gradcheck::{check_loss_suite, REL_TOLERANCE};
use detkit::postproc::{decode_branch, detect_pipeline};
use detkit::pyramid::{build_topology, PyramidConfig};
use detkit::rng::DetRng;
use detkit::{FeatureMap, PixelBox, PyramidMode, STRIDES};

mod config;
mod oracle;

use config::{Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "detkit",
    version,
    about = "Grid-anchor detector math: assignment, coding, losses, pyramids, NMS and evaluation"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// key=value config file (defaults to $DETKIT_CONFIG)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// fpn or sfpn
    #[arg(long, global = true)]
    mode: Option<PyramidMode>,
    #[arg(long, global = true)]
    with_pan: Option<bool>,
    #[arg(long, global = true)]
    branch_iou_thr: Option<f64>,
    #[arg(long, global = true)]
    cross_iou_thr: Option<f64>,
    #[arg(long, global = true)]
    score_thr: Option<f64>,
    #[arg(long, global = true)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct AnchorArgs {
    #[arg(long)]
    stride: u32,
    #[arg(long)]
    row: u32,
    #[arg(long)]
    col: u32,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic COCO-style annotation file
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 100)]
        images: usize,
        #[arg(long, default_value_t = 640)]
        size: u32,
        #[arg(long, default_value_t = 4)]
        boxes: usize,
    },
    /// Print grid-anchor assignments as image_id,gt_index,stride,row,col
    Assign {
        #[arg(long)]
        ann: PathBuf,
    },
    /// Encode x,y,w,h pixel boxes against one anchor
    Encode {
        #[command(flatten)]
        anchor: AnchorArgs,
        /// Emit the five head logits instead of the coded box
        #[arg(long)]
        logits: bool,
        /// Score used for the fifth logit with --logits
        #[arg(long, default_value_t = 0.5)]
        score: f64,
        /// Boxes as x,y,w,h; read from stdin when absent
        boxes: Vec<String>,
    },
    /// Decode z0,z1,z2,z3,z4 head logits against one anchor
    Decode {
        #[command(flatten)]
        anchor: AnchorArgs,
        /// Emit coded-domain boxes instead of pixels
        #[arg(long)]
        coded: bool,
        /// Logits as z0,..,z4; read from stdin when absent
        logits: Vec<String>,
    },
    /// Run the pyramid and heads over three backbone feature maps
    Forward {
        /// B3 B4 B5 FMAP files
        #[arg(long, num_args = 3, conflicts_with = "synthetic")]
        inputs: Vec<PathBuf>,
        /// Random inputs: B3 size as ROWSxCOLS
        #[arg(long)]
        synthetic: Option<String>,
        /// Channel widths of B3,B4,B5
        #[arg(long, default_value = "8,8,8")]
        channels: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Decode three head maps and run the post-processing pipeline
    Detect {
        /// Stride 8, 16 and 32 head FMAP files
        #[arg(long, num_args = 3, required = true)]
        heads: Vec<PathBuf>,
        #[arg(long, default_value_t = 0)]
        image_id: i64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detections reconstructed from the annotations through the codec
    Oracle {
        #[arg(long)]
        ann: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// mAP over IoU 0.50:0.95 and AP at 0.5
    Eval {
        #[arg(long)]
        det: PathBuf,
        #[arg(long)]
        ann: PathBuf,
        /// Write per-threshold CSV here ("-" for stdout)
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Precision-recall curve as threshold,recall,precision CSV
    PrPlot {
        #[arg(long)]
        det: PathBuf,
        #[arg(long)]
        ann: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        iou: f64,
    },
    /// Compare analytic loss gradients with central differences
    CheckGrad {
        /// Items per stride
        #[arg(long, default_value_t = 500)]
        n: usize,
    },
    /// Print which backbone inputs each pyramid output depends on
    Topo,
}

impl GlobalArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            branch_iou_thr: self.branch_iou_thr,
            cross_iou_thr: self.cross_iou_thr,
            score_thr: self.score_thr,
            lambda: self.lambda,
            seed: self.seed,
            mode: self.mode,
            with_pan: self.with_pan,
        }
    }
}

/// Failure that is reported but is not an error in the inputs.
struct CheckFailed;

fn parse_tuple<const N: usize>(text: &str) -> Result<[f64; N]> {
    let vals: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("bad tuple {text:?}"))?;
    vals.try_into().map_err(|v: Vec<f64>| anyhow::anyhow!("expected {N} values, got {} in {text:?}", v.len()))
}

fn tuple_inputs(args: &[String]) -> Result<Vec<String>> {
    if !args.is_empty() {
        return Ok(args.to_vec());
    }
    let mut out = Vec::new();
    for line in io::stdin().lock().lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(line.trim().to_string());
        }
    }
    Ok(out)
}

fn join(vals: &[f64]) -> String {
    vals.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn anchor_of(a: &AnchorArgs) -> Result<detkit::Anchor> {
    if !STRIDES.contains(&a.stride) {
        bail!(detkit::Error::UnsupportedStride(a.stride));
    }
    let d = a.stride as f64;
    Ok(detkit::Anchor { g_x: a.col as f64 * d, g_y: a.row as f64 * d, stride: a.stride, row: a.row, col: a.col })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().lock().write_all(text.as_bytes())?),
    }
}

fn eval_inputs(det: &Path, ann: &Path) -> Result<(Vec<ImageRecord>, Vec<Vec<detkit::Detection>>)> {
    let records = load_coco_json(ann)?;
    let dets = load_detections(det)?;
    let grouped = detections_by_image(&records, &dets);
    Ok((records, grouped))
}

fn eval_images<'a>(records: &'a [ImageRecord], grouped: &'a [Vec<detkit::Detection>]) -> Vec<EvalImage<'a>> {
    records.iter().zip(grouped).map(|(r, d)| EvalImage { image_id: r.image_id, dets: d, gts: &r.gts }).collect()
}

fn fmt_ap(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"))
}

fn summary_line(s: &MapSummary) -> String {
    format!("mAP_50_95={} AP_50={} dets={} gts={}", fmt_ap(s.map), fmt_ap(s.ap50), s.num_dets, s.num_gts)
}

fn per_threshold_csv(s: &MapSummary) -> String {
    let mut out = String::from("iou_thr,ap,tp,fp,num_gts\n");
    for t in &s.per_threshold {
        out += &format!("{:.2},{},{},{},{}\n", t.iou_thr, fmt_ap(t.ap), t.tp, t.fp, t.num_gts);
    }
    out
}

fn parse_channels(text: &str) -> Result<[usize; 3]> {
    let vals: Vec<usize> = text.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?;
    vals.try_into().map_err(|_| anyhow::anyhow!("--channels needs three values"))
}

fn parse_size(text: &str) -> Result<(usize, usize)> {
    let (r, c) = text.split_once('x').with_context(|| format!("size {text:?} is not ROWSxCOLS"))?;
    Ok((r.parse()?, c.parse()?))
}

fn run(cli: Cli) -> Result<Option<CheckFailed>> {
    let cfg = RunConfig::resolve(cli.global.config.as_deref(), &cli.global.overrides())?;
    log::debug!("config: {cfg:?}");
    match cli.command {
        Command::Synth { out, images, size, boxes } => {
            let corpus = gen_synthetic(cfg.seed, images, size, boxes)?;
            write_coco_json(&out, &corpus)?;
        }
        Command::Assign { ann } => {
            let mut text = String::new();
            for rec in load_coco_json(&ann)? {
                for a in assign_all(&rec.gts, rec.width, rec.height)? {
                    let an = a.anchor;
                    text += &format!("{},{},{},{},{}\n", rec.image_id, a.gt_index, an.stride, an.row, an.col);
                }
            }
            emit(None, &text)?;
        }
        Command::Encode { anchor, logits, score, boxes } => {
            let anchor = anchor_of(&anchor)?;
            let mut text = String::new();
            for line in tuple_inputs(&boxes)? {
                let [x, y, w, h] = parse_tuple::<4>(&line)?;
                let gt = PixelBox::new(x, y, w, h)?;
                let vals = if logits {
                    invert_pixel(&gt, &anchor, score).0.to_vec()
                } else {
                    encode_gt(&gt, &anchor).to_array().to_vec()
                };
                text += &join(&vals);
                text.push('\n');
            }
            emit(None, &text)?;
        }
        Command::Decode { anchor, coded, logits } => {
            let anchor = anchor_of(&anchor)?;
            let mut text = String::new();
            for line in tuple_inputs(&logits)? {
                let z = HeadLogits(parse_tuple::<5>(&line)?);
                let (c, score) = decode_coded(&z, anchor.stride);
                let b = if coded {
                    c.to_array()
                } else {
                    let p = coded_to_pixel(&c, &anchor);
                    [p.x, p.y, p.w, p.h]
                };
                text += &join(&[b[0], b[1], b[2], b[3], score]);
                text.push('\n');
            }
            emit(None, &text)?;
        }
        Command::Forward { inputs, synthetic, channels, out_dir } => {
            let mut rng = DetRng::new(cfg.seed);
            let channels = parse_channels(&channels)?;
            let feats: [FeatureMap; 3] = match synthetic {
                Some(size) => {
                    let (rows, cols) = parse_size(&size)?;
                    [0, 1, 2].map(|k| FeatureMap::random(&mut rng, rows >> k, cols >> k, channels[k]))
                }
                None => {
                    if inputs.len() != 3 {
                        bail!("forward needs --inputs B3 B4 B5 or --synthetic ROWSxCOLS");
                    }
                    let maps = inputs.iter().map(FeatureMap::read).collect::<detkit::Result<Vec<_>>>()?;
                    maps.try_into().expect("three inputs")
                }
            };
            let widths = [0, 1, 2].map(|k| feats[k].channels());
            let pcfg = PyramidConfig { mode: cfg.mode, with_pan: cfg.with_pan, channels: widths };
            let graph = build_topology(&pcfg, &mut rng)?;
            let heads = graph.forward(&feats)?;
            std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
            let mut text = String::new();
            for (head, stride) in heads.iter().zip(STRIDES) {
                let path = out_dir.join(format!("head{stride}.fmap"));
                head.write(&path)?;
                text += &format!("{},{},{},{}\n", path.display(), head.rows(), head.cols(), head.channels());
            }
            emit(None, &text)?;
        }
        Command::Detect { heads, image_id, out } => {
            let mut branches: [Vec<detkit::Detection>; 3] = Default::default();
            for (k, (path, stride)) in heads.iter().zip(STRIDES).enumerate() {
                branches[k] = decode_branch(&FeatureMap::read(path)?, stride)?;
            }
            let recs: Vec<DetectionRecord> = detect_pipeline(&branches, &cfg.pipeline())?
                .into_iter()
                .map(|det| DetectionRecord { image_id, det })
                .collect();
            match out {
                Some(p) => save_detections(&p, &recs)?,
                None => emit(None, &format_detections(&recs))?,
            }
        }
        Command::Oracle { ann, out } => {
            let mut recs = Vec::new();
            for rec in load_coco_json(&ann)? {
                for det in oracle::oracle_detections(&rec, &cfg.pipeline())? {
                    recs.push(DetectionRecord { image_id: rec.image_id, det });
                }
            }
            match out {
                Some(p) => save_detections(&p, &recs)?,
                None => emit(None, &format_detections(&recs))?,
            }
        }
        Command::Eval { det, ann, csv } => {
            let (records, grouped) = eval_inputs(&det, &ann)?;
            let summary = map_range(&eval_images(&records, &grouped), &coco_thresholds());
            let mut text = summary_line(&summary);
            text.push('\n');
            match csv.as_deref() {
                Some(p) if p == Path::new("-") => text += &per_threshold_csv(&summary),
                Some(p) => emit(Some(p), &per_threshold_csv(&summary))?,
                None => {}
            }
            emit(None, &text)?;
        }
        Command::PrPlot { det, ann, iou } => {
            if !(iou > 0.0 && iou <= 1.0) {
                bail!("--iou must lie in (0, 1], got {iou}");
            }
            let (records, grouped) = eval_inputs(&det, &ann)?;
            let curve = pr_curve(&eval_images(&records, &grouped), iou);
            let mut text = String::from("threshold,recall,precision\n");
            for i in 0..curve.len() {
                text += &format!("{:.6},{:.6},{:.6}\n", curve.thresholds[i], curve.recall[i], curve.precision[i]);
            }
            emit(None, &text)?;
        }
        Command::CheckGrad { n } => {
            let reports = check_loss_suite(cfg.seed, n);
            let mut text = String::new();
            for (r, stride) in reports.iter().zip(STRIDES) {
                text += &format!("stride={stride} checked={} worst_rel_err={:.3e}\n", r.checked, r.worst_error);
            }
            let all = reports.iter().copied().reduce(|a, b| a.merge(b)).expect("three reports");
            let verdict = if all.passed() { "ok" } else { "FAIL" };
            text += &format!("worst_rel_err={:.3e} tolerance={REL_TOLERANCE:.0e} {verdict}\n", all.worst_error);
            emit(None, &text)?;
            if !all.passed() {
                return Ok(Some(CheckFailed));
            }
        }
        Command::Topo => {
            let pcfg = PyramidConfig { mode: cfg.mode, with_pan: cfg.with_pan, channels: [1, 1, 1] };
            let graph = build_topology(&pcfg, &mut DetRng::new(cfg.seed))?;
            let mut parts = Vec::new();
            for id in graph.feature_ids() {
                let deps: Vec<String> = graph.dependency_set(id)?.into_iter().collect();
                parts.push(format!("{id}:{{{}}}", deps.join(",")));
            }
            emit(None, &format!("{}\n", parts.join(" ")))?;
        }
    }
    Ok(None)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(CheckFailed)) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

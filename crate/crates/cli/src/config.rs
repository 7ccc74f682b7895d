//! Run configuration: command-line flags over a flat `key=value` file over
//! built-in defaults.

use std::path::Path;

use anyhow::{bail, Context, Result};
use detkit::lossfn::DEFAULT_LAMBDA;
use detkit::postproc::PipelineParams;
use detkit::{PyramidMode, STRIDES};

pub const CONFIG_ENV: &str = "DETKIT_CONFIG";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub strides: [u32; 3],
    pub branch_iou_thr: f64,
    pub cross_iou_thr: f64,
    pub score_thr: f64,
    pub lambda: f64,
    pub seed: u64,
    pub mode: PyramidMode,
    pub with_pan: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineParams::EVAL;
        Self {
            strides: STRIDES,
            branch_iou_thr: p.branch_iou_thr,
            cross_iou_thr: p.cross_iou_thr,
            score_thr: p.score_thr,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            mode: PyramidMode::Sfpn,
            with_pan: false,
        }
    }
}

/// Values given on the command line; `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub branch_iou_thr: Option<f64>,
    pub cross_iou_thr: Option<f64>,
    pub score_thr: Option<f64>,
    pub lambda: Option<f64>,
    pub seed: Option<u64>,
    pub mode: Option<PyramidMode>,
    pub with_pan: Option<bool>,
}

fn parse_bool(v: &str) -> Result<bool> {
    match v {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => bail!("expected a boolean, got {v:?}"),
    }
}

fn parse_strides(v: &str) -> Result<[u32; 3]> {
    let parsed: Vec<u32> = v.split(',').map(|s| s.trim().parse()).collect::<Result<_, _>>()?;
    if parsed != STRIDES {
        bail!("only strides 8,16,32 are supported, got {v:?}");
    }
    Ok(STRIDES)
}

impl RunConfig {
    /// Applies one `key=value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "strides" => self.strides = parse_strides(v)?,
            "branch_iou_thr" => self.branch_iou_thr = v.parse()?,
            "cross_iou_thr" => self.cross_iou_thr = v.parse()?,
            "score_thr" => self.score_thr = v.parse()?,
            "lambda" => self.lambda = v.parse()?,
            "seed" => self.seed = v.parse()?,
            "mode" => self.mode = v.parse().map_err(anyhow::Error::msg)?,
            "with_pan" => self.with_pan = parse_bool(v)?,
            other => bail!("unknown config key {other:?}"),
        }
        Ok(())
    }

    pub fn from_text(text: &str, source: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                bail!("{source}:{}: expected key=value", i + 1);
            };
            cfg.set(k, v).with_context(|| format!("{source}:{}", i + 1))?;
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Resolves the full configuration. An explicit path wins over the
    /// environment variable.
    pub fn resolve(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let env_path = std::env::var_os(CONFIG_ENV).filter(|p| !p.is_empty());
        let mut cfg = match path.map(Path::to_path_buf).or(env_path.map(Into::into)) {
            Some(p) => Self::from_file(&p)?,
            None => Self::default(),
        };
        let o = overrides;
        cfg.branch_iou_thr = o.branch_iou_thr.unwrap_or(cfg.branch_iou_thr);
        cfg.cross_iou_thr = o.cross_iou_thr.unwrap_or(cfg.cross_iou_thr);
        cfg.score_thr = o.score_thr.unwrap_or(cfg.score_thr);
        cfg.lambda = o.lambda.unwrap_or(cfg.lambda);
        cfg.seed = o.seed.unwrap_or(cfg.seed);
        cfg.mode = o.mode.unwrap_or(cfg.mode);
        cfg.with_pan = o.with_pan.unwrap_or(cfg.with_pan);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline().validate()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            bail!("lambda must be finite and non-negative, got {}", self.lambda);
        }
        Ok(())
    }

    pub fn pipeline(&self) -> PipelineParams {
        PipelineParams {
            branch_iou_thr: self.branch_iou_thr,
            cross_iou_thr: self.cross_iou_thr,
            score_thr: self.score_thr,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_values_and_comments() {
        let cfg =
            RunConfig::from_text("# thresholds\nscore_thr = 0.3\nmode=fpn\nwith_pan=true\n\nseed=9\n", "t").unwrap();
        assert_eq!(cfg.score_thr, 0.3);
        assert_eq!(cfg.mode, PyramidMode::Fpn);
        assert!(cfg.with_pan);
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.lambda, DEFAULT_LAMBDA);
    }

    #[test]
    fn bad_lines_are_rejected() {
        assert!(RunConfig::from_text("score_thr", "t").is_err());
        assert!(RunConfig::from_text("colour=red", "t").is_err());
        assert!(RunConfig::from_text("strides=8,16", "t").is_err());
        assert!(RunConfig::from_text("strides=8, 16, 32", "t").is_ok());
    }

    #[test]
    fn flags_beat_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed=3\nscore_thr=0.2\n").unwrap();
        let o = Overrides { seed: Some(11), ..Default::default() };
        let cfg = RunConfig::resolve(Some(&path), &o).unwrap();
        assert_eq!((cfg.seed, cfg.score_thr), (11, 0.2));
    }

    #[test]
    fn invalid_thresholds_fail_validation() {
        let o = Overrides { cross_iou_thr: Some(1.0), ..Default::default() };
        assert!(RunConfig::resolve(None, &o).is_err());
    }
}

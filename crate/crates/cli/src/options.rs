use std::path::PathBuf;

use clap::Args;
use pmtext::{BoundaryMode, FilterMode, Grid, GrowthAlgorithm, NoiseSpec, PipelineConfig, ShapeFamily};

use crate::Usage;

/// `WxH`, e.g. `640x480`.
pub fn parse_grid(s: &str) -> Result<Grid, String> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected WxH, got {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    Grid::new(w, h).map_err(|e| e.to_string())
}

pub fn parse_weights(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|w| w.trim().parse::<f64>().map_err(|_| format!("bad weight {w:?}")))
        .collect()
}

/// Settings shared by every command that runs part of the pipeline. Flags
/// override the config file or preset, which override the defaults.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Preset name (totaltext, ctw1500, td500, mlt, icdar15) or TOML/JSON file
    #[arg(long)]
    pub config: Option<String>,
    /// Alpha step of the schedule
    #[arg(long)]
    pub k: Option<u32>,
    /// Number of probability maps
    #[arg(long)]
    pub n: Option<usize>,
    /// Voting weights, comma separated
    #[arg(long, value_parser = parse_weights)]
    pub weights: Option<Vec<f64>>,
    #[arg(long)]
    pub grow: Option<GrowthAlgorithm>,
    #[arg(long)]
    pub filter: Option<FilterMode>,
    /// Binarization threshold (for the selected filter)
    #[arg(long = "th-b")]
    pub th_b: Option<f64>,
    /// Mean-probability threshold of the threshold filter
    #[arg(long = "th-e")]
    pub th_e: Option<f64>,
    /// Minimum candidate area in pixels
    #[arg(long = "min-area")]
    pub min_area: Option<usize>,
    #[arg(long)]
    pub boundary: Option<BoundaryMode>,
    /// Boundary simplification tolerance in pixels
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// IoU threshold for matching
    #[arg(long)]
    pub iou: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(spec) => PipelineConfig::resolve(spec)?,
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { cfg.$f = v.clone(); })*};
        }
        set!(k, n, grow, filter, th_e, min_area, boundary, epsilon, iou);
        if let Some(w) = &self.weights {
            cfg.weights = Some(w.clone());
        }
        if let Some(t) = self.th_b {
            cfg.th_b = t;
            cfg.vote_th_b = t;
        }
        if self.n.is_some() && self.weights.is_none() && cfg.weights.as_ref().is_some_and(|w| w.len() != cfg.n) {
            cfg.weights = None;
        }
        if self.n.is_some() && cfg.lambdas.as_ref().is_some_and(|l| l.len() != cfg.n) {
            cfg.lambdas = None;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Synthetic scene settings.
#[derive(Args, Debug, Clone)]
pub struct SceneArgs {
    /// Image size as WxH
    #[arg(long, default_value = "256x256", value_parser = parse_grid)]
    pub grid: Grid,
    #[arg(long, default_value = "mixed")]
    pub shapes: ShapeFamily,
    /// Instances per scene
    #[arg(long, default_value_t = 4)]
    pub instances: usize,
    /// Minimum distance between instances in pixels
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    /// Minimum covered pixels per instance
    #[arg(long = "instance-area", default_value_t = 400)]
    pub instance_area: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Corruption, e.g. sigma=0.05,blur=1,dropout=0.01
    #[arg(long, default_value = "sigma=0")]
    pub noise: NoiseSpec,
}

impl SceneArgs {
    pub fn spec(&self) -> pmtext::SceneSpec {
        pmtext::SceneSpec::new(self.instances, self.shapes)
            .with_separation(self.separation)
            .with_min_area(self.instance_area)
    }

    /// Scene `i` uses seed `seed + i`; its noise stream is derived from that.
    pub fn scene_seed(&self, i: usize) -> u64 {
        self.seed.wrapping_add(i as u64)
    }

    pub fn noise_seed(&self, i: usize) -> u64 {
        self.scene_seed(i) ^ 0x9e37_79b9_7f4a_7c15
    }

    pub fn check(&self) -> anyhow::Result<()> {
        self.noise.validate()?;
        if !(self.separation >= 0.0) {
            return Err(Usage(format!("separation must be >= 0, got {}", self.separation)).into());
        }
        Ok(())
    }
}

/// Optional output directory, created on demand.
pub fn ensure_dir(dir: &PathBuf) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| anyhow::anyhow!("{}: {e}", dir.display()))
}

//! Pipeline settings, per-dataset presets and config-file loading.

use std::path::Path;

use serde_json::Value;

use crate::contours::{BoundaryMode, DEFAULT_EPSILON};
use crate::error::{Error, Result};
use crate::filtering::{FilterConfig, FilterMode};
use crate::probmap::{make_schedule, AlphaSchedule, LossConfig};
use crate::reconstruct::GrowthAlgorithm;
use crate::scalar::Scalar;

const PRESETS: &str = include_str!("../presets/presets.toml");

pub const PRESET_NAMES: [&str; 5] = ["totaltext", "ctw1500", "td500", "mlt", "icdar15"];

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Alpha step; the schedule is `1, 1 + k, 1 + 2k, ...`.
    pub k: u32,
    /// Number of maps.
    pub n: usize,
    /// Voting weights; `None` means `i / sum(1..=n)`.
    pub weights: Option<Vec<f64>>,
    pub gamma: f64,
    /// Per-map loss weights; `None` means all ones.
    pub lambdas: Option<Vec<f64>>,
    pub ohem: bool,
    /// Binarization threshold, also used by the threshold filter.
    pub th_b: f64,
    /// Binarization threshold and vote offset base when voting.
    pub vote_th_b: f64,
    pub th_e: f64,
    pub min_area: usize,
    pub filter: FilterMode,
    pub grow: GrowthAlgorithm,
    pub boundary: BoundaryMode,
    pub epsilon: f64,
    pub iou: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 3,
            n: 4,
            weights: None,
            gamma: 3.0,
            lambdas: None,
            ohem: true,
            th_b: 0.3,
            vote_th_b: 0.3,
            th_e: 0.65,
            min_area: 300,
            filter: FilterMode::Threshold,
            grow: GrowthAlgorithm::Pse,
            boundary: BoundaryMode::Polygon,
            epsilon: DEFAULT_EPSILON,
            iou: 0.5,
        }
    }
}

impl PipelineConfig {
    /// Defaults with a named dataset preset applied.
    pub fn preset(name: &str) -> Result<Self> {
        let base = serde_json::to_value(Self::default())?;
        let merged = overlay(base, preset_value(name)?)?;
        let cfg: Self = serde_json::from_value(merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a TOML or JSON file (by extension; TOML otherwise). A top-level
    /// `preset = "<name>"` key is applied before the file's own keys.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).in_file(path))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        Self::parse(&text, is_json).map_err(|e| e.in_file(path))
    }

    pub fn parse(text: &str, json: bool) -> Result<Self> {
        let mut user: Value = if json {
            serde_json::from_str(text)?
        } else {
            toml::from_str(text)?
        };
        let mut base = serde_json::to_value(Self::default())?;
        if let Some(obj) = user.as_object_mut() {
            if let Some(p) = obj.remove("preset") {
                let name = p
                    .as_str()
                    .ok_or_else(|| Error::InvalidConfig("preset must be a string".into()))?;
                base = overlay(base, preset_value(name)?)?;
            }
        }
        let cfg: Self = serde_json::from_value(overlay(base, user)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A preset name or a path to a config file.
    pub fn resolve(spec: &str) -> Result<Self> {
        if PRESET_NAMES.contains(&spec.to_ascii_lowercase().as_str()) && !Path::new(spec).exists() {
            Self::preset(spec)
        } else if Path::new(spec).extension().is_none() && !Path::new(spec).exists() {
            Err(Error::InvalidConfig(format!(
                "{spec:?} is neither a preset ({}) nor a config file",
                PRESET_NAMES.join(", ")
            )))
        } else {
            Self::load(spec)
        }
    }

    /// Threshold actually used for binarization under the selected filter.
    pub fn binarize_threshold(&self) -> f64 {
        match self.filter {
            FilterMode::Threshold => self.th_b,
            FilterMode::Voting => self.vote_th_b,
        }
    }

    pub fn schedule<T: Scalar>(&self) -> Result<AlphaSchedule<T>> {
        let s = make_schedule(self.k, self.n)?;
        match &self.weights {
            Some(w) => s.with_weights(w.iter().map(|&v| T::lit(v)).collect()),
            None => Ok(s),
        }
    }

    pub fn filter_config<T: Scalar>(&self) -> FilterConfig<T> {
        FilterConfig {
            th_b: T::lit(self.binarize_threshold()),
            th_e: T::lit(self.th_e),
            min_area: self.min_area,
            mode: self.filter,
        }
    }

    pub fn loss_config<T: Scalar>(&self) -> Result<LossConfig<T>> {
        let mut cfg = LossConfig::new(self.n);
        cfg.gamma = T::lit(self.gamma);
        cfg.ohem = self.ohem;
        if let Some(l) = &self.lambdas {
            cfg.lambdas = l.iter().map(|&v| T::lit(v)).collect();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule::<f64>()?;
        self.filter_config::<f64>().validate()?;
        if !(self.vote_th_b > 0.0 && self.vote_th_b < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "vote_th_b must be in (0, 1), got {}",
                self.vote_th_b
            )));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if !(self.iou > 0.0 && self.iou <= 1.0) {
            return Err(Error::InvalidConfig(format!("iou must be in (0, 1], got {}", self.iou)));
        }
        if self.lambdas.as_ref().is_some_and(|l| l.len() != self.n) {
            return Err(Error::InvalidConfig(format!("expected {} loss weights", self.n)));
        }
        self.loss_config::<f64>()?;
        Ok(())
    }
}

fn preset_value(name: &str) -> Result<Value> {
    let all: Value = toml::from_str(PRESETS)?;
    all.get(name.to_ascii_lowercase()).cloned().ok_or_else(|| {
        Error::InvalidConfig(format!(
            "unknown preset {name:?} (expected one of {})",
            PRESET_NAMES.join(", ")
        ))
    })
}

fn overlay(mut base: Value, top: Value) -> Result<Value> {
    let Value::Object(top) = top else {
        return Err(Error::InvalidConfig("config must be a table of settings".into()));
    };
    let obj = base.as_object_mut().expect("defaults serialize to an object");
    for (k, v) in top {
        obj.insert(k, v);
    }
    Ok(base)
}

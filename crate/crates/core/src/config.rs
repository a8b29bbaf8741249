//! Pipeline configuration: defaults, a flat `key = value` file format and
//! validation.
//!
//! ```text
//! # heights.conf
//! cell_size = 0.2
//! ground_classes = 2
//! object_classes = 5,6,14
//! dsm_reducer = max
//! dtm_reducer = min
//! fill = nearest          # or knn:K
//! clamp_negative = true
//! iou_threshold = 0.5
//! units = feet
//! coverage_min = 0.1
//! max_fill_distance = unlimited
//! ```

use std::fs;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use crate::gapfill::FillMethod;
use crate::grid::{ClassSet, Reducer, DEFAULT_CELL_SIZE};
use crate::masks::DEFAULT_IOU_THRESHOLD;
use crate::zonal::{Units, DEFAULT_COVERAGE_MIN};

/// ASPRS ground class.
pub const DEFAULT_GROUND_CLASSES: &[u8] = &[2];
/// ASPRS high vegetation, building, wire conductor.
pub const DEFAULT_OBJECT_CLASSES: &[u8] = &[5, 6, 14];

pub const KEYS: [&str; 11] = [
    "cell_size",
    "ground_classes",
    "object_classes",
    "dsm_reducer",
    "dtm_reducer",
    "fill",
    "clamp_negative",
    "iou_threshold",
    "units",
    "coverage_min",
    "max_fill_distance",
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub cell_size: f64,
    pub ground_classes: ClassSet,
    pub object_classes: ClassSet,
    pub dsm_reducer: Reducer,
    pub dtm_reducer: Reducer,
    pub fill: FillMethod,
    pub clamp_negative: bool,
    pub iou_threshold: f64,
    pub units: Units,
    pub coverage_min: f64,
    /// Meters; `None` is unlimited.
    pub max_fill_distance: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            cell_size: DEFAULT_CELL_SIZE,
            ground_classes: ClassSet::new(DEFAULT_GROUND_CLASSES.iter().copied()),
            object_classes: ClassSet::new(DEFAULT_OBJECT_CLASSES.iter().copied()),
            dsm_reducer: Reducer::Max,
            dtm_reducer: Reducer::Min,
            fill: FillMethod::Nearest,
            clamp_negative: true,
            iou_threshold: DEFAULT_IOU_THRESHOLD,
            units: Units::Feet,
            coverage_min: DEFAULT_COVERAGE_MIN,
            max_fill_distance: None,
        }
    }
}

fn parse_f64(key: &'static str, value: &str) -> Result<f64, ConfigError> {
    value.trim().parse::<f64>().map_err(|_| ConfigError::Invalid {
        key,
        reason: format!("'{value}' is not a number"),
    })
}

fn parse_classes(key: &'static str, value: &str) -> Result<ClassSet, ConfigError> {
    let codes = value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<u8>().map_err(|_| ConfigError::Invalid {
                key,
                reason: format!("'{s}' is not a classification code 0-255"),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ClassSet::new(codes))
}

fn parse_bool(key: &'static str, value: &str) -> Result<bool, ConfigError> {
    match value.trim().to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        other => Err(ConfigError::Invalid {
            key,
            reason: format!("'{other}' is not a boolean"),
        }),
    }
}

fn invalid(key: &'static str) -> impl Fn(String) -> ConfigError {
    move |reason| ConfigError::Invalid { key, reason }
}

impl PipelineConfig {
    /// Sets one key from its text form. Does not validate cross-field rules.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = KEYS
            .iter()
            .copied()
            .find(|k| *k == key.trim())
            .ok_or_else(|| ConfigError::UnknownKey(key.trim().to_string()))?;
        let value = value.trim();
        match key {
            "cell_size" => self.cell_size = parse_f64(key, value)?,
            "ground_classes" => self.ground_classes = parse_classes(key, value)?,
            "object_classes" => self.object_classes = parse_classes(key, value)?,
            "dsm_reducer" => self.dsm_reducer = value.parse().map_err(invalid(key))?,
            "dtm_reducer" => self.dtm_reducer = value.parse().map_err(invalid(key))?,
            "fill" => self.fill = value.parse().map_err(invalid(key))?,
            "clamp_negative" => self.clamp_negative = parse_bool(key, value)?,
            "iou_threshold" => self.iou_threshold = parse_f64(key, value)?,
            "units" => self.units = value.parse().map_err(invalid(key))?,
            "coverage_min" => self.coverage_min = parse_f64(key, value)?,
            "max_fill_distance" => {
                self.max_fill_distance = match value.to_ascii_lowercase().as_str() {
                    "unlimited" | "none" | "inf" => None,
                    _ => Some(parse_f64(key, value)?),
                }
            }
            _ => unreachable!(),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn merge_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                reason: format!("expected key = value, got '{line}'"),
            })?;
            self.set(key, value).map_err(|e| ConfigError::Syntax {
                line: i + 1,
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        c.merge_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(ConfigError::Invalid {
                key: "cell_size",
                reason: format!("{} is not a positive length", self.cell_size),
            });
        }
        if self.ground_classes.is_empty() {
            return Err(invalid("ground_classes")("no classes given".into()));
        }
        if self.object_classes.is_empty() {
            return Err(invalid("object_classes")("no classes given".into()));
        }
        if !self.ground_classes.is_disjoint(&self.object_classes) {
            return Err(invalid("object_classes")("overlaps ground_classes".into()));
        }
        if !(self.iou_threshold > 0.0 && self.iou_threshold <= 1.0) {
            return Err(invalid("iou_threshold")(format!("{} is outside (0, 1]", self.iou_threshold)));
        }
        if !(0.0..=1.0).contains(&self.coverage_min) {
            return Err(invalid("coverage_min")(format!("{} is outside [0, 1]", self.coverage_min)));
        }
        if let Some(d) = self.max_fill_distance {
            if !(d > 0.0) {
                return Err(invalid("max_fill_distance")(format!("{d} is not a positive length")));
            }
        }
        if let FillMethod::KnnMean(0) = self.fill {
            return Err(invalid("fill")("knn needs k >= 1".into()));
        }
        Ok(())
    }

    /// Serializable echo of the effective settings.
    pub fn summary(&self) -> ConfigSummary {
        ConfigSummary {
            cell_size: self.cell_size,
            ground_classes: self.ground_classes.codes(),
            object_classes: self.object_classes.codes(),
            dsm_reducer: self.dsm_reducer,
            dtm_reducer: self.dtm_reducer,
            fill: self.fill.to_string(),
            clamp_negative: self.clamp_negative,
            iou_threshold: self.iou_threshold,
            units: self.units,
            coverage_min: self.coverage_min,
            max_fill_distance: self.max_fill_distance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ConfigSummary {
    pub cell_size: f64,
    pub ground_classes: Vec<u8>,
    pub object_classes: Vec<u8>,
    pub dsm_reducer: Reducer,
    pub dtm_reducer: Reducer,
    pub fill: String,
    pub clamp_negative: bool,
    pub iou_threshold: f64,
    pub units: Units,
    pub coverage_min: f64,
    pub max_fill_distance: Option<f64>,
}

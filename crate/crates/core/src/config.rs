//! Flat key-value pipeline configuration.
//!
//! Every key is optional; absent keys take the documented default and
//! unknown keys are rejected so typos surface immediately.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{FeatureError, SamplingParams};
use crate::geometry::CameraModel;
use crate::map_expansion::{ExpansionError, ExpansionParams};
use crate::mesh_builder::{MeshError, RejectionThresholds};
use crate::underwater::{UnderwaterError, WaterParams};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config value `{field}` out of range: {reason}")]
    Range { field: String, reason: String },
}

/// All tunables of the pipeline with their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Max triangle side in the image, pixels.
    pub l_p: f64,
    /// Max triangle side in space, meters.
    pub l_v: f64,
    /// Grazing-angle floor on `|view . normal|`.
    pub d: f64,
    /// Plane-distance gate for resampled points, meters.
    pub d_min: f64,
    /// Sliding window length in frames.
    pub window_size: usize,
    /// Exclusion radius around projected vertices, pixels.
    pub min_pixel_distance: f64,
    pub max_points: usize,
    pub quality_level: f64,
    pub min_distance: f64,
    pub block_size: usize,
    pub border_margin: u32,
    /// Water attenuation per channel (R, G, B), 1/m.
    pub beta: [f64; 3],
    /// Veiling light per channel.
    pub backlight: [f64; 3],
    /// Meters per raw depth unit.
    pub depth_scale: f64,
    /// Timestamp association tolerance, seconds.
    pub max_dt: f64,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let t = RejectionThresholds::default();
        let e = ExpansionParams::default();
        let s = SamplingParams::default();
        let w = WaterParams::default();
        Self {
            l_p: t.l_p,
            l_v: t.l_v,
            d: t.d,
            d_min: e.d_min,
            window_size: e.window_size,
            min_pixel_distance: e.min_pixel_distance,
            max_points: s.max_points,
            quality_level: s.quality_level,
            min_distance: s.min_distance,
            block_size: s.block_size,
            border_margin: s.border_margin,
            beta: w.beta,
            backlight: w.backlight,
            depth_scale: 1.0 / 5000.0,
            max_dt: 0.02,
            fx: 525.0,
            fy: 525.0,
            cx: 319.5,
            cy: 239.5,
            width: 640,
            height: 480,
        }
    }
}

impl PipelineConfig {
    pub fn thresholds(&self) -> RejectionThresholds {
        RejectionThresholds {
            l_p: self.l_p,
            l_v: self.l_v,
            d: self.d,
        }
    }

    pub fn expansion(&self) -> ExpansionParams {
        ExpansionParams {
            window_size: self.window_size,
            min_pixel_distance: self.min_pixel_distance,
            d_min: self.d_min,
        }
    }

    pub fn sampling(&self) -> SamplingParams {
        SamplingParams {
            max_points: self.max_points,
            quality_level: self.quality_level,
            min_distance: self.min_distance,
            block_size: self.block_size,
            border_margin: self.border_margin,
        }
    }

    pub fn water(&self) -> WaterParams {
        WaterParams {
            beta: self.beta,
            backlight: self.backlight,
        }
    }

    pub fn camera(&self) -> CameraModel {
        CameraModel {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let range = |field: &str, reason: String| ConfigError::Range {
            field: field.to_string(),
            reason,
        };
        self.thresholds().validate().map_err(|e| match e {
            MeshError::InvalidThreshold { field, reason } => range(field, reason),
            other => range("thresholds", other.to_string()),
        })?;
        self.expansion().validate().map_err(|e| match e {
            ExpansionError::InvalidParam { field, reason } => range(field, reason),
            other => range("expansion", other.to_string()),
        })?;
        self.sampling().validate().map_err(|e| match e {
            FeatureError::InvalidParam { field, reason } => range(field, reason),
            other => range("sampling", other.to_string()),
        })?;
        self.water().validate().map_err(|e| match e {
            UnderwaterError::InvalidParam { field, reason } => range(field, reason),
            other => range("water", other.to_string()),
        })?;
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return Err(range("depth_scale", "must be positive".into()));
        }
        if !(self.max_dt >= 0.0 && self.max_dt.is_finite()) {
            return Err(range("max_dt", "must be non-negative".into()));
        }
        for (field, v) in [("fx", self.fx), ("fy", self.fy)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(range(field, "focal length must be positive".into()));
            }
        }
        for (field, v) in [("width", self.width), ("height", self.height)] {
            if v < 2 {
                return Err(range(field, "must be at least 2".into()));
            }
        }
        for (field, v, size) in [("cx", self.cx, self.width), ("cy", self.cy, self.height)] {
            if !(v > 0.0 && v < size as f64) {
                return Err(range(field, format!("principal point must lie in (0, {size})")));
            }
        }
        Ok(())
    }

    /// Parses and validates config text.
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
                .unwrap_or(1);
            ConfigError::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Canonical text form; parsing it yields the same config.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    PipelineConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_is_default() {
        assert_eq!(PipelineConfig::from_toml_str("").unwrap(), PipelineConfig::default());
        let c = PipelineConfig::from_toml_str("# only a comment\n").unwrap();
        assert_eq!(c.window_size, 25);
        assert_eq!(c.depth_scale, 1.0 / 5000.0);
    }

    #[test]
    fn range_error_names_field() {
        match PipelineConfig::from_toml_str("l_v = -1") {
            Err(ConfigError::Range { field, .. }) => assert_eq!(field, "l_v"),
            other => panic!("{other:?}"),
        }
        match PipelineConfig::from_toml_str("beta = [0.1, -0.2, 0.3]") {
            Err(ConfigError::Range { field, .. }) => assert_eq!(field, "beta"),
            other => panic!("{other:?}"),
        }
        match PipelineConfig::from_toml_str("depth_scale = 0.0") {
            Err(ConfigError::Range { field, .. }) => assert_eq!(field, "depth_scale"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_error_has_line() {
        match PipelineConfig::from_toml_str("l_p = 80\n\nl_v = = 2\n") {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match PipelineConfig::from_toml_str("l_p = 80\nwindow_sise = 3\n") {
            Err(ConfigError::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("window_sise"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dump_round_trip() {
        let c = PipelineConfig {
            l_p: 60.0,
            beta: [0.5, 0.25, 0.125],
            window_size: 7,
            ..Default::default()
        };
        let text = c.to_toml_string();
        let back = PipelineConfig::from_toml_str(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_toml_string(), text);
    }
}

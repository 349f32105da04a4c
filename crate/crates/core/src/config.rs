//! Flat `section.key = value` configuration.

use std::fmt::Display;
use std::str::FromStr;

use thiserror::Error;

use crate::eval::{DEFAULT_BAND, DEFAULT_TOLERANCE};
use crate::klt::KltConfig;
use crate::mser::MserParams;
use crate::tracker::TrackerConfig;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key = value")]
    Syntax { line: usize },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Splits text into (key, value) pairs. Blank lines and `#` comments are
/// skipped; keys and values are trimmed.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1 });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub tolerance: f64,
    pub band: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            tolerance: DEFAULT_TOLERANCE,
            band: DEFAULT_BAND,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Config {
    pub tracker: TrackerConfig,
    pub klt: KltConfig,
    pub eval: EvalConfig,
}

fn set<T: FromStr>(slot: &mut T, key: &str, value: &str) -> Result<(), ConfigError> {
    *slot = value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })?;
    Ok(())
}

fn set_mser(m: &mut MserParams, field: &str, key: &str, value: &str) -> Result<bool, ConfigError> {
    match field {
        "mser_delta" => set(&mut m.delta, key, value)?,
        "mser_max_variation" => set(&mut m.max_variation, key, value)?,
        "mser_min_area" => set(&mut m.min_area, key, value)?,
        "mser_max_area_fraction" => set(&mut m.max_area_fraction, key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

fn push<T: Display>(out: &mut Vec<(String, String)>, key: &str, v: T) {
    out.push((key.to_string(), v.to_string()));
}

fn push_mser(out: &mut Vec<(String, String)>, section: &str, m: &MserParams) {
    push(out, &format!("{section}.mser_delta"), m.delta);
    push(out, &format!("{section}.mser_max_variation"), m.max_variation);
    push(out, &format!("{section}.mser_min_area"), m.min_area);
    push(out, &format!("{section}.mser_max_area_fraction"), m.max_area_fraction);
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut c = Config::default();
        for (k, v) in parse_pairs(text)? {
            c.apply(&k, &v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let unknown = || ConfigError::UnknownKey(key.to_string());
        let (section, field) = key.split_once('.').ok_or_else(unknown)?;
        let t = &mut self.tracker;
        match (section, field) {
            ("tracker", "search_radius") => set(&mut t.search_radius, key, value),
            ("tracker", "patch_size") => set(&mut t.patch_size, key, value),
            ("tracker", "scale") => set(&mut t.scale, key, value),
            ("tracker", "arc_factor") => set(&mut t.arc_factor, key, value),
            ("tracker", "chamfer_threshold") => set(&mut t.chamfer_threshold, key, value),
            ("tracker", "ssd_threshold") => set(&mut t.ssd_threshold, key, value),
            ("tracker", "min_overlap") => set(&mut t.min_overlap, key, value),
            ("tracker", "min_side_pixels") => set(&mut t.min_side_pixels, key, value),
            ("tracker", "top_k") => set(&mut t.top_k, key, value),
            ("tracker", "max_misses") => set(&mut t.max_misses, key, value),
            ("tracker", "tile_size") => set(&mut t.tile_size, key, value),
            ("tracker", "tile_stride") => set(&mut t.tile_stride, key, value),
            ("tracker", "redetect_interval") => set(&mut t.redetect_interval, key, value),
            ("tracker", "min_spawn_dist") => set(&mut t.min_spawn_dist, key, value),
            ("tracker", f) => set_mser(&mut t.mser, f, key, value)?.then_some(()).ok_or_else(unknown),
            ("detector", "scale") => set(&mut t.detector.scale, key, value),
            ("detector", "cornerness_threshold") => set(&mut t.detector.cornerness_threshold, key, value),
            ("detector", "min_contour_points") => set(&mut t.detector.min_contour_points, key, value),
            ("detector", "patch_size") => set(&mut t.detector.patch_size, key, value),
            ("detector", "min_side_pixels") => set(&mut t.detector.min_side_pixels, key, value),
            ("detector", f) => set_mser(&mut t.detector.mser, f, key, value)?.then_some(()).ok_or_else(unknown),
            ("klt", "window") => set(&mut self.klt.window, key, value),
            ("klt", "max_iters") => set(&mut self.klt.max_iters, key, value),
            ("klt", "eps") => set(&mut self.klt.eps, key, value),
            ("klt", "min_eigen") => set(&mut self.klt.min_eigen, key, value),
            ("klt", "pyramid_levels") => set(&mut self.klt.pyramid_levels, key, value),
            ("klt", "max_residual") => set(&mut self.klt.max_residual, key, value),
            ("eval", "tolerance") => set(&mut self.eval.tolerance, key, value),
            ("eval", "band") => set(&mut self.eval.band, key, value),
            _ => Err(unknown()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.tracker.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.klt.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.tracker.detector.patch_size % 2 == 0 {
            return Err(ConfigError::Invalid("detector.patch_size must be odd".into()));
        }
        if !(self.eval.tolerance >= 0.0 && self.eval.band >= 0.0) {
            return Err(ConfigError::Invalid("eval tolerance and band must be non-negative".into()));
        }
        Ok(())
    }

    /// Every key with its current value; parsing the result reproduces
    /// this config.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let t = &self.tracker;
        let mut out = Vec::new();
        push(&mut out, "tracker.search_radius", t.search_radius);
        push(&mut out, "tracker.patch_size", t.patch_size);
        push(&mut out, "tracker.scale", t.scale);
        push(&mut out, "tracker.arc_factor", t.arc_factor);
        push(&mut out, "tracker.chamfer_threshold", t.chamfer_threshold);
        push(&mut out, "tracker.ssd_threshold", t.ssd_threshold);
        push(&mut out, "tracker.min_overlap", t.min_overlap);
        push(&mut out, "tracker.min_side_pixels", t.min_side_pixels);
        push(&mut out, "tracker.top_k", t.top_k);
        push(&mut out, "tracker.max_misses", t.max_misses);
        push(&mut out, "tracker.tile_size", t.tile_size);
        push(&mut out, "tracker.tile_stride", t.tile_stride);
        push(&mut out, "tracker.redetect_interval", t.redetect_interval);
        push(&mut out, "tracker.min_spawn_dist", t.min_spawn_dist);
        push_mser(&mut out, "tracker", &t.mser);
        let d = &t.detector;
        push(&mut out, "detector.scale", d.scale);
        push(&mut out, "detector.cornerness_threshold", d.cornerness_threshold);
        push(&mut out, "detector.min_contour_points", d.min_contour_points);
        push(&mut out, "detector.patch_size", d.patch_size);
        push(&mut out, "detector.min_side_pixels", d.min_side_pixels);
        push_mser(&mut out, "detector", &d.mser);
        let k = &self.klt;
        push(&mut out, "klt.window", k.window);
        push(&mut out, "klt.max_iters", k.max_iters);
        push(&mut out, "klt.eps", k.eps);
        push(&mut out, "klt.min_eigen", k.min_eigen);
        push(&mut out, "klt.pyramid_levels", k.pyramid_levels);
        push(&mut out, "klt.max_residual", k.max_residual);
        push(&mut out, "eval.tolerance", self.eval.tolerance);
        push(&mut out, "eval.band", self.eval.band);
        out
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

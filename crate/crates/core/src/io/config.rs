//! Run configuration: flat `key = value` lines with `#` comments.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::mvs::{FilterPolicy, FusionParams};
use crate::rgbd::RegistrationParams;
use crate::tracker::TrackerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RegistrationMethod {
    Ransac,
    Fgr,
}

impl FromStr for RegistrationMethod {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ransac" => Ok(RegistrationMethod::Ransac),
            "fgr" => Ok(RegistrationMethod::Fgr),
            other => Err(format!(
                "unknown registration method `{other}` (expected ransac or fgr)"
            )),
        }
    }
}

impl std::fmt::Display for RegistrationMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegistrationMethod::Ransac => "ransac",
            RegistrationMethod::Fgr => "fgr",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    /// Reconstruction frame every `stride` tracking frames.
    pub stride: usize,
    pub fragment_size: usize,
    pub voxel_size: f64,
    pub truncation: f64,
    pub block_edge: usize,
    pub min_views: usize,
    pub depth_tolerance: f64,
    pub normal_tolerance_deg: f64,
    pub reprojection_tolerance: f64,
    pub registration: RegistrationMethod,
    pub voxel_down: f64,
    pub ransac_max_iterations: usize,
    pub ransac_confidence: f64,
    pub fitness_floor: f64,
    pub seed: u64,
    pub keep_unlabeled: bool,
    pub search_radius: usize,
    pub similarity_threshold: f64,
    pub min_area: usize,
    pub input: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let voxel = 0.008;
        RunConfig {
            stride: 1,
            fragment_size: 50,
            voxel_size: voxel,
            truncation: 4.0 * voxel,
            block_edge: 16,
            min_views: 2,
            depth_tolerance: 0.01,
            normal_tolerance_deg: 25.0,
            reprojection_tolerance: 1.0,
            registration: RegistrationMethod::Ransac,
            voxel_down: 2.0 * voxel,
            ransac_max_iterations: 100_000,
            ransac_confidence: 0.999,
            fitness_floor: 0.1,
            seed: 0,
            keep_unlabeled: false,
            search_radius: 8,
            similarity_threshold: 0.15,
            min_area: 4,
            input: None,
            masks: None,
            output: None,
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, raw: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse()
        .map_err(|e| Error::parse(line, format!("bad value for `{key}`: {e}")))
}

impl RunConfig {
    /// Parses config text. `truncation` and `voxel_down` default to 4× and
    /// 2× the voxel size unless set explicitly.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut truncation = None;
        let mut voxel_down = None;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, val) = content.split_once('=').ok_or_else(|| {
                Error::parse(line, format!("expected `key = value`, found `{content}`"))
            })?;
            let (key, val) = (key.trim(), val.trim());
            match key {
                "stride" => cfg.stride = value(line, key, val)?,
                "fragment_size" => cfg.fragment_size = value(line, key, val)?,
                "voxel_size" => cfg.voxel_size = value(line, key, val)?,
                "truncation" => truncation = Some(value(line, key, val)?),
                "block_edge" => cfg.block_edge = value(line, key, val)?,
                "min_views" => cfg.min_views = value(line, key, val)?,
                "depth_tolerance" => cfg.depth_tolerance = value(line, key, val)?,
                "normal_tolerance_deg" => cfg.normal_tolerance_deg = value(line, key, val)?,
                "reprojection_tolerance" => cfg.reprojection_tolerance = value(line, key, val)?,
                "registration" => cfg.registration = value(line, key, val)?,
                "voxel_down" => voxel_down = Some(value(line, key, val)?),
                "ransac_max_iterations" => cfg.ransac_max_iterations = value(line, key, val)?,
                "ransac_confidence" => cfg.ransac_confidence = value(line, key, val)?,
                "fitness_floor" => cfg.fitness_floor = value(line, key, val)?,
                "seed" => cfg.seed = value(line, key, val)?,
                "keep_unlabeled" => cfg.keep_unlabeled = value(line, key, val)?,
                "search_radius" => cfg.search_radius = value(line, key, val)?,
                "similarity_threshold" => cfg.similarity_threshold = value(line, key, val)?,
                "min_area" => cfg.min_area = value(line, key, val)?,
                "input" => cfg.input = Some(PathBuf::from(val)),
                "masks" => cfg.masks = Some(PathBuf::from(val)),
                "output" => cfg.output = Some(PathBuf::from(val)),
                other => return Err(Error::parse(line, format!("unknown key `{other}`"))),
            }
        }
        cfg.truncation = truncation.unwrap_or(4.0 * cfg.voxel_size);
        cfg.voxel_down = voxel_down.unwrap_or(2.0 * cfg.voxel_size);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &str); 11] = [
            (self.stride >= 1, "stride must be at least 1"),
            (self.fragment_size >= 1, "fragment_size must be at least 1"),
            (self.voxel_size > 0.0, "voxel_size must be positive"),
            (
                self.truncation >= self.voxel_size,
                "truncation must be at least voxel_size",
            ),
            (self.block_edge >= 1, "block_edge must be at least 1"),
            (self.min_views >= 1, "min_views must be at least 1"),
            (
                self.depth_tolerance > 0.0
                    && self.normal_tolerance_deg > 0.0
                    && self.reprojection_tolerance > 0.0,
                "fusion tolerances must be positive",
            ),
            (self.voxel_down > 0.0, "voxel_down must be positive"),
            (
                self.ransac_confidence > 0.0 && self.ransac_confidence < 1.0,
                "ransac_confidence must lie in (0, 1)",
            ),
            (
                (0.0..=1.0).contains(&self.fitness_floor),
                "fitness_floor must lie in [0, 1]",
            ),
            (
                (0.0..=1.0).contains(&self.similarity_threshold) && self.min_area >= 1,
                "similarity_threshold must lie in [0, 1] and min_area be at least 1",
            ),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::invalid(*msg)),
            None => Ok(()),
        }
    }

    pub fn fusion_params(&self) -> FusionParams {
        FusionParams {
            min_views: self.min_views,
            depth_tolerance: self.depth_tolerance,
            normal_tolerance_deg: self.normal_tolerance_deg,
            reprojection_tolerance: self.reprojection_tolerance,
        }
    }

    pub fn filter_policy(&self) -> FilterPolicy {
        if self.keep_unlabeled {
            FilterPolicy::KeepAll
        } else {
            FilterPolicy::KeepLabeled
        }
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            search_radius: self.search_radius,
            similarity_threshold: self.similarity_threshold,
            min_area: self.min_area,
        }
    }

    pub fn registration_params(&self) -> RegistrationParams {
        RegistrationParams {
            max_iterations: self.ransac_max_iterations,
            confidence: self.ransac_confidence,
            fitness_floor: self.fitness_floor,
            seed: self.seed,
            ..RegistrationParams::new(self.voxel_down)
        }
    }

    /// Text form accepted by [`RunConfig::parse`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "stride = {}", self.stride);
        let _ = writeln!(s, "fragment_size = {}", self.fragment_size);
        let _ = writeln!(s, "voxel_size = {}", self.voxel_size);
        let _ = writeln!(s, "truncation = {}", self.truncation);
        let _ = writeln!(s, "block_edge = {}", self.block_edge);
        let _ = writeln!(s, "min_views = {}", self.min_views);
        let _ = writeln!(s, "depth_tolerance = {}", self.depth_tolerance);
        let _ = writeln!(s, "normal_tolerance_deg = {}", self.normal_tolerance_deg);
        let _ = writeln!(
            s,
            "reprojection_tolerance = {}",
            self.reprojection_tolerance
        );
        let _ = writeln!(s, "registration = {}", self.registration);
        let _ = writeln!(s, "voxel_down = {}", self.voxel_down);
        let _ = writeln!(s, "ransac_max_iterations = {}", self.ransac_max_iterations);
        let _ = writeln!(s, "ransac_confidence = {}", self.ransac_confidence);
        let _ = writeln!(s, "fitness_floor = {}", self.fitness_floor);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "keep_unlabeled = {}", self.keep_unlabeled);
        let _ = writeln!(s, "search_radius = {}", self.search_radius);
        let _ = writeln!(s, "similarity_threshold = {}", self.similarity_threshold);
        let _ = writeln!(s, "min_area = {}", self.min_area);
        for (k, v) in [
            ("input", &self.input),
            ("masks", &self.masks),
            ("output", &self.output),
        ] {
            if let Some(p) = v {
                let _ = writeln!(s, "{k} = {}", p.display());
            }
        }
        s
    }
}

//! Run configuration and its `key = value` text format.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Keys are dotted (`grid.stride`). Unknown keys are rejected. Later lines
//! override earlier ones. Lists are comma-separated.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::evaluator::IouThresholds;
use crate::image_ops::RoiSampling;
use crate::par::Execution;
use crate::voxel_grid::GridConfig;
use crate::vpf_layer::{FusionSettings, ScatterMode, VpfConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub c_v: usize,
    pub c_p: usize,
    /// Camera feature-map stride.
    pub stride: usize,
    pub m_depth: usize,
    pub net_depth: usize,
    pub occlusion_ignore_depth: bool,
    pub sampling: RoiSampling,
    pub scatter: ScatterMode,
    pub seed_weights: u64,
    pub seed_backbone: u64,
    pub seed_voxel_features: u64,
    pub seed_gradcheck: u64,
    pub gradcheck_eps: f64,
    pub iou: IouThresholds,
    pub data_root: PathBuf,
    pub frame: String,
    /// Optional weight file; seeded initialization when unset.
    pub weights: Option<PathBuf>,
    pub det_dir: Option<PathBuf>,
    pub label_dir: Option<PathBuf>,
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: GridConfig::default(),
            c_v: 16,
            c_p: 32,
            stride: 4,
            m_depth: 2,
            net_depth: 1,
            occlusion_ignore_depth: false,
            sampling: RoiSampling::Grid2x2,
            scatter: ScatterMode::Adjoint,
            seed_weights: 7,
            seed_backbone: 7,
            seed_voxel_features: 7,
            seed_gradcheck: 7,
            gradcheck_eps: crate::tensor::DEFAULT_FD_EPS,
            iou: IouThresholds::default(),
            data_root: PathBuf::from("data/sample"),
            frame: "000000".into(),
            weights: None,
            det_dir: None,
            label_dir: None,
            parallel: true,
        }
    }
}

fn bad(key: &str, value: &str, expect: &str) -> Error {
    Error::Config(format!("{key} = {value:?}: expected {expect}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, expect: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value, expect))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    let v: f64 = parse_num(key, value, "a number")?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(bad(key, value, "a finite number"))
    }
}

fn parse_triple(key: &str, value: &str) -> Result<[f64; 3]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(bad(key, value, "three comma-separated numbers"));
    }
    Ok([parse_f64(key, parts[0])?, parse_f64(key, parts[1])?, parse_f64(key, parts[2])?])
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, value, "true or false")),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn triple(v: [f64; 3]) -> String {
    format!("{}, {}, {}", v[0], v[1], v[2])
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

pub fn sampling_name(s: RoiSampling) -> &'static str {
    match s {
        RoiSampling::Grid2x2 => "grid2x2",
        RoiSampling::Center => "center",
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "grid.range_min" => self.grid.range_min = parse_triple(key, value)?,
            "grid.range_max" => self.grid.range_max = parse_triple(key, value)?,
            "grid.base_voxel_size" => self.grid.base_voxel_size = parse_triple(key, value)?,
            "grid.stride" => self.grid.stride = parse_num(key, value, "an integer")?,
            "grid.density_cap" => self.grid.density_cap = parse_num(key, value, "an integer")?,
            "camera.stride" => self.stride = parse_num(key, value, "an integer")?,
            "fusion.c_v" => self.c_v = parse_num(key, value, "an integer")?,
            "fusion.c_p" => self.c_p = parse_num(key, value, "an integer")?,
            "fusion.m_depth" => self.m_depth = parse_num(key, value, "an integer")?,
            "fusion.net_depth" => self.net_depth = parse_num(key, value, "an integer")?,
            "fusion.scatter" => {
                self.scatter = ScatterMode::parse(value).ok_or_else(|| bad(key, value, "adjoint or center_cell"))?
            }
            "fusion.weights" => self.weights = opt_path(value),
            "pairing.occlusion_ignore_depth" => self.occlusion_ignore_depth = parse_bool(key, value)?,
            "pairing.sampling" => {
                self.sampling = match value {
                    "grid2x2" => RoiSampling::Grid2x2,
                    "center" => RoiSampling::Center,
                    _ => return Err(bad(key, value, "grid2x2 or center")),
                }
            }
            "seed.weights" => self.seed_weights = parse_num(key, value, "an unsigned integer")?,
            "seed.backbone" => self.seed_backbone = parse_num(key, value, "an unsigned integer")?,
            "seed.voxel_features" => self.seed_voxel_features = parse_num(key, value, "an unsigned integer")?,
            "seed.gradcheck" => self.seed_gradcheck = parse_num(key, value, "an unsigned integer")?,
            "gradcheck.eps" => self.gradcheck_eps = parse_f64(key, value)?,
            "eval.iou.car" => self.iou.car = parse_f64(key, value)?,
            "eval.iou.pedestrian" => self.iou.pedestrian = parse_f64(key, value)?,
            "eval.iou.cyclist" => self.iou.cyclist = parse_f64(key, value)?,
            "eval.det_dir" => self.det_dir = opt_path(value),
            "eval.label_dir" => self.label_dir = opt_path(value),
            "data.root" => self.data_root = PathBuf::from(value),
            "data.frame" => self.frame = value.to_string(),
            "exec.parallel" => self.parallel = parse_bool(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a config file's text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, e.to_string().trim_start_matches("invalid config: "))))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `(key, value)` for every key, in a fixed order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("grid.range_min", triple(self.grid.range_min)),
            ("grid.range_max", triple(self.grid.range_max)),
            ("grid.base_voxel_size", triple(self.grid.base_voxel_size)),
            ("grid.stride", self.grid.stride.to_string()),
            ("grid.density_cap", self.grid.density_cap.to_string()),
            ("camera.stride", self.stride.to_string()),
            ("fusion.c_v", self.c_v.to_string()),
            ("fusion.c_p", self.c_p.to_string()),
            ("fusion.m_depth", self.m_depth.to_string()),
            ("fusion.net_depth", self.net_depth.to_string()),
            ("fusion.scatter", self.scatter.name().to_string()),
            ("fusion.weights", show_path(&self.weights)),
            ("pairing.occlusion_ignore_depth", self.occlusion_ignore_depth.to_string()),
            ("pairing.sampling", sampling_name(self.sampling).to_string()),
            ("seed.weights", self.seed_weights.to_string()),
            ("seed.backbone", self.seed_backbone.to_string()),
            ("seed.voxel_features", self.seed_voxel_features.to_string()),
            ("seed.gradcheck", self.seed_gradcheck.to_string()),
            ("gradcheck.eps", self.gradcheck_eps.to_string()),
            ("eval.iou.car", self.iou.car.to_string()),
            ("eval.iou.pedestrian", self.iou.pedestrian.to_string()),
            ("eval.iou.cyclist", self.iou.cyclist.to_string()),
            ("eval.det_dir", show_path(&self.det_dir)),
            ("eval.label_dir", show_path(&self.label_dir)),
            ("data.root", self.data_root.display().to_string()),
            ("data.frame", self.frame.clone()),
            ("exec.parallel", self.parallel.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if ![1, 2, 4, 8].contains(&self.stride) {
            return Err(Error::Config(format!("camera.stride {} not in {{1, 2, 4, 8}}", self.stride)));
        }
        self.vpf_config().validate()?;
        for (name, v) in [("car", self.iou.car), ("pedestrian", self.iou.pedestrian), ("cyclist", self.iou.cyclist)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::Config(format!("eval.iou.{name} must lie in (0, 1], got {v}")));
            }
        }
        if !(self.gradcheck_eps > 0.0) {
            return Err(Error::Config("gradcheck.eps must be positive".into()));
        }
        if self.frame.is_empty() {
            return Err(Error::Config("data.frame is empty".into()));
        }
        Ok(())
    }

    pub fn vpf_config(&self) -> VpfConfig {
        VpfConfig {
            m_depth: self.m_depth,
            net_depth: self.net_depth,
            ..VpfConfig::new(self.c_v, self.c_p, self.seed_weights)
        }
    }

    pub fn fusion_settings(&self) -> FusionSettings {
        FusionSettings {
            sampling: self.sampling,
            scatter: self.scatter,
        }
    }

    pub fn execution(&self) -> Execution {
        if self.parallel {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }

    pub fn velodyne_path(&self) -> PathBuf {
        self.data_root.join("velodyne").join(format!("{}.bin", self.frame))
    }

    pub fn calib_path(&self) -> PathBuf {
        self.data_root.join("calib").join(format!("{}.txt", self.frame))
    }

    /// `image_2/<frame>.ppm`, or `.png` when only that exists.
    pub fn image_path(&self) -> PathBuf {
        let dir = self.data_root.join("image_2");
        let ppm = dir.join(format!("{}.ppm", self.frame));
        let png = dir.join(format!("{}.png", self.frame));
        if !ppm.exists() && png.exists() {
            png
        } else {
            ppm
        }
    }

    pub fn label_path(&self) -> PathBuf {
        self.label_dir().join(format!("{}.txt", self.frame))
    }

    pub fn label_dir(&self) -> PathBuf {
        self.label_dir.clone().unwrap_or_else(|| self.data_root.join("label_2"))
    }
}

//! Frame loading and the voxelize → pair → fuse pipeline driven by a
//! [`RunConfig`].

use std::collections::BTreeMap;
use std::path::Path;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::image_ops::{to_grayscale, CameraBackbone, FeatureMap, GrayImage};
use crate::kitti_io::{
    load_image, parse_calibration, parse_labels, parse_point_cloud, CalibrationSet, Image, ImageFormat, ObjectLabel,
    PointCloud,
};
use crate::par::Execution;
use crate::projector::{build_pairs_with, PairConfig, VoxelPixelPair};
use crate::tensor::Vector;
use crate::voxel_grid::{voxelize_with, FeatureExpansion, VoxelGrid, VoxelIndex};
use crate::vpf_layer::{fuse_feature_maps, init_weights, FusedMaps, VpfWeights};

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// The sensor inputs of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameData {
    pub cloud: PointCloud,
    pub calib: CalibrationSet,
    pub image: Image,
}

pub fn load_frame(cfg: &RunConfig) -> Result<FrameData> {
    let cloud = parse_point_cloud(&read_bytes(&cfg.velodyne_path())?)?;
    let calib = parse_calibration(&read_text(&cfg.calib_path())?)?;
    let image_path = cfg.image_path();
    let format = ImageFormat::from_extension(&image_path)
        .ok_or_else(|| Error::malformed("image", format!("unsupported extension: {}", image_path.display())))?;
    let image = load_image(&read_bytes(&image_path)?, format)?;
    Ok(FrameData { cloud, calib, image })
}

/// Labels of the configured frame; an absent label file means no labels.
pub fn load_labels(cfg: &RunConfig) -> Result<Vec<ObjectLabel>> {
    let path = cfg.label_path();
    if !path.exists() {
        return Ok(Vec::new());
    }
    parse_labels(&read_text(&path)?)
}

pub fn load_weights(cfg: &RunConfig) -> Result<VpfWeights> {
    let w = match &cfg.weights {
        Some(path) => VpfWeights::from_bytes(&read_bytes(path)?)?,
        None => return init_weights(&cfg.vpf_config()),
    };
    if (w.config.c_v, w.config.c_p) != (cfg.c_v, cfg.c_p) {
        return Err(Error::Config(format!(
            "weight file has C_v={} C_p={}, config asks for C_v={} C_p={}",
            w.config.c_v, w.config.c_p, cfg.c_v, cfg.c_p
        )));
    }
    Ok(w)
}

/// Everything produced up to and including pairing.
#[derive(Debug, Clone, PartialEq)]
pub struct Pairing {
    pub grid: VoxelGrid,
    pub gray: GrayImage,
    pub camera_map: FeatureMap,
    pub lidar_feats: BTreeMap<VoxelIndex, Vector>,
    pub pairs: Vec<VoxelPixelPair>,
}

pub fn run_pairing(cfg: &RunConfig, frame: &FrameData, exec: Execution) -> Result<Pairing> {
    cfg.validate()?;
    frame.calib.validate()?;
    let grid = voxelize_with(&frame.cloud, &cfg.grid, exec)?;
    let gray = to_grayscale(&frame.image);
    let camera_map = CameraBackbone::new(cfg.stride, cfg.c_p, cfg.seed_backbone)?.run(&frame.image, exec)?;
    let expansion = FeatureExpansion::new(cfg.c_v, cfg.seed_voxel_features)?;
    let lidar_feats = grid.feature_map(&expansion, exec)?;
    let pair_cfg = PairConfig {
        voxel_features: expansion,
        occlusion_ignore_depth: cfg.occlusion_ignore_depth,
        sampling: cfg.sampling,
    };
    let pairs = build_pairs_with(&grid, &frame.calib, &camera_map, &gray, &pair_cfg, exec)?;
    Ok(Pairing {
        grid,
        gray,
        camera_map,
        lidar_feats,
        pairs,
    })
}

pub fn run_fusion(cfg: &RunConfig, pairing: &Pairing, weights: &VpfWeights, exec: Execution) -> Result<FusedMaps> {
    fuse_feature_maps(
        &pairing.lidar_feats,
        &pairing.camera_map,
        &pairing.pairs,
        weights,
        cfg.fusion_settings(),
        exec,
    )
}

/// FNV-1a over the little-endian bytes of a sequence of floats.
pub fn digest_f64<'a>(values: impl IntoIterator<Item = &'a f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// Digests of the fused LiDAR features (in voxel order) and camera map.
pub fn fused_digests(maps: &FusedMaps) -> (u64, u64) {
    let lidar = digest_f64(maps.lidar.values().flat_map(|v| v.iter()));
    (lidar, digest_f64(&maps.camera.data))
}

use std::collections::BTreeMap;

use super::{fusion_forward, VpfWeights};
use crate::error::{Error, Result};
use crate::image_ops::{roi_align_1x1, roi_align_1x1_adjoint, FeatureMap, RoiSampling};
use crate::par::Execution;
use crate::projector::{Roi, VoxelPixelPair};
use crate::tensor::Vector;
use crate::voxel_grid::VoxelIndex;

/// How a pair's pixel residual is written back to the camera map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ScatterMode {
    /// Transpose of the RoIAlign read.
    #[default]
    Adjoint,
    /// The whole residual goes to the cell under the ROI center.
    CenterCell,
}

impl ScatterMode {
    pub fn parse(s: &str) -> Option<ScatterMode> {
        match s {
            "adjoint" => Some(ScatterMode::Adjoint),
            "center_cell" => Some(ScatterMode::CenterCell),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScatterMode::Adjoint => "adjoint",
            ScatterMode::CenterCell => "center_cell",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FusionSettings {
    pub sampling: RoiSampling,
    pub scatter: ScatterMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FusionStats {
    pub pairs: usize,
    pub modified_voxels: usize,
    pub modified_cells: usize,
    /// `sqrt(Σ ||b_v″||²)` over pairs.
    pub voxel_residual_norm: f64,
    /// `sqrt(Σ ||b_p″||²)` over pairs.
    pub pixel_residual_norm: f64,
    /// L2 norm of the total change to the camera map.
    pub camera_delta_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedMaps {
    pub lidar: BTreeMap<VoxelIndex, Vector>,
    pub camera: FeatureMap,
    pub stats: FusionStats,
}

fn center_cell(map: &FeatureMap, roi: &Roi) -> (usize, usize) {
    let cu = 0.5 * (roi.u_min + roi.u_max);
    let cv = 0.5 * (roi.v_min + roi.v_max);
    let col = (cu.floor().max(0.0) as usize).min(map.width - 1);
    let row = (cv.floor().max(0.0) as usize).min(map.height - 1);
    (row, col)
}

/// Runs every pair through the layer and adds the residuals back onto copies
/// of both maps. Per-pair passes may run concurrently; write-back happens in
/// pair order.
pub fn fuse_feature_maps(
    lidar_feats: &BTreeMap<VoxelIndex, Vector>,
    camera_map: &FeatureMap,
    pairs: &[VoxelPixelPair],
    w: &VpfWeights,
    settings: FusionSettings,
    exec: Execution,
) -> Result<FusedMaps> {
    let residuals = exec.try_map(pairs, |pair| -> Result<(Vector, Vector)> {
        let b_v = lidar_feats
            .get(&pair.voxel_index)
            .ok_or_else(|| Error::not_found("voxel feature", pair.voxel_index))?;
        let b_p = roi_align_1x1(camera_map, &pair.roi, settings.sampling)?;
        let out = fusion_forward(&pair.params.as_array(), b_v, &b_p, w)?;
        if !out.is_finite() {
            return Err(Error::Numeric(format!("non-finite fusion output at {}", pair.voxel_index)));
        }
        Ok((out.b_v_fused, out.b_p_fused))
    })?;

    let mut lidar = lidar_feats.clone();
    let mut camera = camera_map.clone();
    let mut stats = FusionStats {
        pairs: pairs.len(),
        ..FusionStats::default()
    };
    let (mut v_sq, mut p_sq) = (0.0, 0.0);
    for (pair, (d_v, d_p)) in pairs.iter().zip(&residuals) {
        let feat = lidar.get_mut(&pair.voxel_index).expect("checked above");
        if feat.len() != d_v.len() {
            return Err(Error::shape("fuse voxel residual", feat.len(), d_v.len()));
        }
        // exact zeros are skipped so that -0.0 entries keep their sign bit
        for (f, d) in feat.iter_mut().zip(d_v.iter()) {
            if *d != 0.0 {
                *f += d;
            }
        }
        match settings.scatter {
            ScatterMode::Adjoint if d_p.iter().all(|d| *d == 0.0) => {}
            ScatterMode::Adjoint => roi_align_1x1_adjoint(&mut camera, &pair.roi, settings.sampling, d_p)?,
            ScatterMode::CenterCell => {
                let (r, c) = center_cell(&camera, &pair.roi);
                for (f, d) in camera.cell_mut(r, c).iter_mut().zip(d_p.iter()) {
                    if *d != 0.0 {
                        *f += d;
                    }
                }
            }
        }
        v_sq += d_v.iter().map(|x| x * x).sum::<f64>();
        p_sq += d_p.iter().map(|x| x * x).sum::<f64>();
    }

    stats.voxel_residual_norm = v_sq.sqrt();
    stats.pixel_residual_norm = p_sq.sqrt();
    stats.modified_voxels = lidar
        .iter()
        .filter(|(k, v)| lidar_feats.get(*k).is_some_and(|o| o != *v))
        .count();
    let ch = camera.channels.max(1);
    stats.modified_cells = camera
        .data
        .chunks(ch)
        .zip(camera_map.data.chunks(ch))
        .filter(|(a, b)| a != b)
        .count();
    stats.camera_delta_norm = camera
        .data
        .iter()
        .zip(&camera_map.data)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(FusedMaps { lidar, camera, stats })
}

//! Voxel-to-pixel pairing: projection through the calibration chain, ROI
//! construction on the camera feature map, and the occlusion, area and
//! contrast parameters of each pair.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::image_ops::{michelson_contrast, roi_align_1x1, FeatureMap, GrayImage, PixelRect, RoiSampling};
use crate::kitti_io::CalibrationSet;
use crate::par::Execution;
use crate::tensor::Vector;
use crate::voxel_grid::{FeatureExpansion, VoxelGrid, VoxelIndex};

const MIN_DEPTH: f64 = 1e-6;

/// Axis-aligned rectangle on the camera feature map (cell units) plus the
/// camera-frame depth of the voxel center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Roi {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
    pub depth: f64,
}

impl Roi {
    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }

    pub fn height(&self) -> f64 {
        self.v_max - self.v_min
    }

    /// Closed containment of `other` in `self`.
    pub fn contains(&self, other: &Roi) -> bool {
        self.u_min <= other.u_min
            && self.v_min <= other.v_min
            && self.u_max >= other.u_max
            && self.v_max >= other.v_max
    }

    /// The same rectangle in raw-image pixels.
    pub fn to_raw(&self, stride: usize) -> PixelRect {
        let s = stride as f64;
        PixelRect {
            u_min: self.u_min * s,
            v_min: self.v_min * s,
            u_max: self.u_max * s,
            v_max: self.v_max * s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub u: f64,
    pub v: f64,
    pub depth: f64,
}

/// Precomposed LiDAR-to-image map `P2 · R0 · Tr`.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    m: [[f64; 4]; 3],
}

impl Projector {
    pub fn new(calib: &CalibrationSet) -> Self {
        Projector {
            m: calib.lidar_to_image(),
        }
    }

    pub fn project(&self, p: [f64; 3]) -> Result<Projection> {
        let y: [f64; 3] = std::array::from_fn(|r| {
            self.m[r][0] * p[0] + self.m[r][1] * p[1] + self.m[r][2] * p[2] + self.m[r][3]
        });
        if !(y[2].abs() >= MIN_DEPTH) {
            return Err(Error::BehindCamera { depth: y[2] });
        }
        Ok(Projection {
            u: y[0] / y[2],
            v: y[1] / y[2],
            depth: y[2],
        })
    }
}

/// Projects a LiDAR-frame point to `(u, v, depth)` in raw-image pixels.
pub fn project_point(calib: &CalibrationSet, point: [f64; 3]) -> Result<Projection> {
    Projector::new(calib).project(point)
}

/// Feature-map extent for a raw image at the given stride.
pub fn feature_map_size(image_size: (usize, usize), stride: usize) -> (usize, usize) {
    (image_size.0.div_ceil(stride), image_size.1.div_ceil(stride))
}

/// Projects the 8 corners, keeps those in front of the camera, and returns
/// their bounding box in feature-map cells clipped to the map.
///
/// `image_size` is `(width, height)` in raw pixels. Returns `None` when the
/// voxel center or every corner is behind the camera, or when the box lies
/// entirely outside the map.
pub fn voxel_roi(
    calib: &CalibrationSet,
    corners: &[[f64; 3]; 8],
    image_size: (usize, usize),
    feature_stride: usize,
) -> Option<Roi> {
    voxel_roi_with(&Projector::new(calib), corners, image_size, feature_stride)
}

pub fn voxel_roi_with(
    projector: &Projector,
    corners: &[[f64; 3]; 8],
    image_size: (usize, usize),
    feature_stride: usize,
) -> Option<Roi> {
    let center: [f64; 3] = std::array::from_fn(|a| corners.iter().map(|c| c[a]).sum::<f64>() / 8.0);
    let depth = projector.project(center).ok().filter(|p| p.depth > 0.0)?.depth;
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut any = false;
    for c in corners {
        let Ok(p) = projector.project(*c) else { continue };
        if p.depth <= 0.0 {
            continue;
        }
        any = true;
        lo = [lo[0].min(p.u), lo[1].min(p.v)];
        hi = [hi[0].max(p.u), hi[1].max(p.v)];
    }
    if !any {
        return None;
    }
    let s = feature_stride as f64;
    let (fw, fh) = feature_map_size(image_size, feature_stride);
    let u_min = (lo[0] / s).max(0.0);
    let v_min = (lo[1] / s).max(0.0);
    let u_max = (hi[0] / s).min(fw as f64);
    let v_max = (hi[1] / s).min(fh as f64);
    if !(u_min <= u_max && v_min <= v_max) {
        return None;
    }
    Some(Roi {
        u_min,
        v_min,
        u_max,
        v_max,
        depth,
    })
}

/// ROI area in feature-map cells.
pub fn roi_area(roi: &Roi) -> f64 {
    roi.width() * roi.height()
}

/// ROI area normalized by the feature-map area.
pub fn area_parameter(roi: &Roi, map_width: usize, map_height: usize) -> f64 {
    roi_area(roi) / (map_width * map_height) as f64
}

/// Whether `j` counts as an occluder of `i`.
pub fn occludes(j: &Roi, i: &Roi, ignore_depth: bool) -> bool {
    j.contains(i) && (ignore_depth || j.depth < i.depth)
}

/// `n / (1 + n)`.
pub fn squash_count(n: usize) -> f64 {
    n as f64 / (1.0 + n as f64)
}

/// Number of other ROIs that contain `rois[index]` and are strictly nearer.
pub fn occlusion_count(rois: &[Roi], index: usize, ignore_depth: bool) -> Result<usize> {
    let target = rois
        .get(index)
        .ok_or_else(|| Error::not_found("roi", index))?;
    Ok(rois
        .iter()
        .enumerate()
        .filter(|&(j, r)| j != index && occludes(r, target, ignore_depth))
        .count())
}

pub fn occlusion_parameter(rois: &[Roi], index: usize, ignore_depth: bool) -> Result<f64> {
    occlusion_count(rois, index, ignore_depth).map(squash_count)
}

/// Occluder counts for every ROI.
///
/// Sweeps ROIs sorted by `u_min`: an occluder of `i` must have
/// `u_min_j <= u_min_i`, so only the sorted prefix up to `i` is scanned.
pub fn occlusion_counts(rois: &[Roi], ignore_depth: bool, exec: Execution) -> Vec<usize> {
    let mut order: Vec<usize> = (0..rois.len()).collect();
    // numeric order, so -0.0 and 0.0 compare equal as they do in `occludes`
    order.sort_by(|&a, &b| {
        rois[a].u_min.partial_cmp(&rois[b].u_min).unwrap_or(Ordering::Equal).then(a.cmp(&b))
    });
    let sorted_u: Vec<f64> = order.iter().map(|&i| rois[i].u_min).collect();
    exec.map_range(rois.len(), |i| {
        let target = &rois[i];
        let end = sorted_u.partition_point(|&u| u <= target.u_min);
        order[..end]
            .iter()
            .filter(|&&j| j != i && occludes(&rois[j], target, ignore_depth))
            .count()
    })
}

/// The four pair parameters, each in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairParams {
    pub density: f64,
    pub occlusion: f64,
    pub area: f64,
    pub contrast: f64,
}

impl PairParams {
    pub fn to_vector(&self) -> Vector {
        Vector(self.as_array().to_vec())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.density, self.occlusion, self.area, self.contrast]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelPixelPair {
    pub voxel_index: VoxelIndex,
    pub voxel_feature: Vector,
    pub roi: Roi,
    pub pixel_feature: Vector,
    pub params: PairParams,
    /// Raw point count of the voxel.
    pub point_count: usize,
    /// Raw number of occluding voxels.
    pub occluder_count: usize,
    /// ROI area in feature-map cells.
    pub roi_area: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairConfig {
    pub voxel_features: FeatureExpansion,
    pub occlusion_ignore_depth: bool,
    pub sampling: RoiSampling,
}

/// Contrast of a pair's ROI in the raw image. A ROI covering no pixel center
/// lies inside a single pixel and has zero contrast.
pub fn pair_contrast(gray: &GrayImage, roi: &Roi, stride: usize) -> Result<f64> {
    let raw = roi.to_raw(stride);
    let clipped = PixelRect {
        u_min: raw.u_min.max(0.0),
        v_min: raw.v_min.max(0.0),
        u_max: raw.u_max.min(gray.width as f64),
        v_max: raw.v_max.min(gray.height as f64),
    };
    match michelson_contrast(gray, &clipped) {
        Ok(c) => Ok(c),
        Err(Error::DegenerateRoi(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

pub fn build_pairs(
    grid: &VoxelGrid,
    calib: &CalibrationSet,
    camera_map: &FeatureMap,
    gray: &GrayImage,
    config: &PairConfig,
) -> Result<Vec<VoxelPixelPair>> {
    build_pairs_with(grid, calib, camera_map, gray, config, Execution::default())
}

/// Pairs every visible voxel with a pixel feature, in ascending voxel order.
pub fn build_pairs_with(
    grid: &VoxelGrid,
    calib: &CalibrationSet,
    camera_map: &FeatureMap,
    gray: &GrayImage,
    config: &PairConfig,
    exec: Execution,
) -> Result<Vec<VoxelPixelPair>> {
    let stride = camera_map.stride;
    let image_size = (gray.width, gray.height);
    if stride == 0 || feature_map_size(image_size, stride) != (camera_map.width, camera_map.height) {
        return Err(Error::Config(format!(
            "camera map {}x{} at stride {stride} does not match image {}x{}",
            camera_map.width, camera_map.height, gray.width, gray.height
        )));
    }
    let projector = Projector::new(calib);
    let indices = grid.indices();

    struct Partial {
        index: VoxelIndex,
        roi: Roi,
        density: f64,
        area: f64,
        contrast: f64,
        count: usize,
        voxel_feature: Vector,
        pixel_feature: Vector,
    }

    let partial = exec.try_map(&indices, |&index| -> Result<Option<Partial>> {
        let corners = grid.voxel_corners(index)?;
        let Some(roi) = voxel_roi_with(&projector, &corners, image_size, stride) else {
            return Ok(None);
        };
        Ok(Some(Partial {
            index,
            roi,
            density: grid.density_parameter(index)?,
            area: roi_area(&roi),
            contrast: pair_contrast(gray, &roi, stride)?,
            count: grid.point_count(index)?,
            voxel_feature: grid.initial_features(index, &config.voxel_features)?,
            pixel_feature: roi_align_1x1(camera_map, &roi, config.sampling)?,
        }))
    })?;
    let partial: Vec<Partial> = partial.into_iter().flatten().collect();
    let rois: Vec<Roi> = partial.iter().map(|p| p.roi).collect();
    let occluders = occlusion_counts(&rois, config.occlusion_ignore_depth, exec);
    let map_area = (camera_map.width * camera_map.height) as f64;

    Ok(partial
        .into_iter()
        .zip(occluders)
        .map(|(p, n_o)| VoxelPixelPair {
            voxel_index: p.index,
            voxel_feature: p.voxel_feature,
            roi: p.roi,
            pixel_feature: p.pixel_feature,
            params: PairParams {
                density: p.density,
                occlusion: squash_count(n_o),
                area: p.area / map_area,
                contrast: p.contrast,
            },
            point_count: p.count,
            occluder_count: n_o,
            roi_area: p.area,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn roi(u0: f64, v0: f64, u1: f64, v1: f64, depth: f64) -> Roi {
        Roi {
            u_min: u0,
            v_min: v0,
            u_max: u1,
            v_max: v1,
            depth,
        }
    }

    #[test]
    fn pinhole_identity() {
        let c = CalibrationSet::identity();
        let p = project_point(&c, [0.5, -0.25, 2.0]).unwrap();
        assert_eq!((p.u, p.v, p.depth), (0.25, -0.125, 2.0));
        let p = project_point(&c, [0.0, 0.0, 7.0]).unwrap();
        assert_eq!((p.u, p.v, p.depth), (0.0, 0.0, 7.0));
        assert!(matches!(
            project_point(&c, [1.0, 1.0, 0.0]),
            Err(Error::BehindCamera { .. })
        ));
    }

    #[test]
    fn projection_matches_homogeneous_chain() {
        let mut rng = SeededRng::new(21);
        for _ in 0..200 {
            let mut c = CalibrationSet::identity();
            for r in 0..3 {
                for k in 0..4 {
                    c.p2[r][k] = rng.uniform(-2.0, 2.0);
                    c.tr_velo_to_cam[r][k] = rng.uniform(-2.0, 2.0);
                }
            }
            let (a, b) = (rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
            let (ca, sa, cb, sb) = (a.cos(), a.sin(), b.cos(), b.sin());
            c.r0_rect = [[ca, -sa * cb, sa * sb], [sa, ca * cb, -ca * sb], [0.0, sb, cb]];
            let x = [rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0), rng.uniform(-5.0, 5.0)];
            // 4x4 chain, multiplied right to left
            let mut tr4 = [[0.0; 4]; 4];
            let mut r4 = [[0.0; 4]; 4];
            for i in 0..3 {
                tr4[i] = c.tr_velo_to_cam[i];
                r4[i][..3].copy_from_slice(&c.r0_rect[i]);
            }
            tr4[3][3] = 1.0;
            r4[3][3] = 1.0;
            let xh = [x[0], x[1], x[2], 1.0];
            let a1: Vec<f64> = (0..4).map(|i| (0..4).map(|k| tr4[i][k] * xh[k]).sum()).collect();
            let a2: Vec<f64> = (0..4).map(|i| (0..4).map(|k| r4[i][k] * a1[k]).sum()).collect();
            let y: Vec<f64> = (0..3).map(|i| (0..4).map(|k| c.p2[i][k] * a2[k]).sum()).collect();
            if y[2].abs() < 1e-3 {
                continue;
            }
            let p = project_point(&c, x).unwrap();
            let scale = 1.0 + (y[0] / y[2]).abs() + (y[1] / y[2]).abs();
            assert!((p.u - y[0] / y[2]).abs() < 1e-9 * scale);
            assert!((p.v - y[1] / y[2]).abs() < 1e-9 * scale);
            assert!((p.depth - y[2]).abs() < 1e-9 * (1.0 + y[2].abs()));
        }
    }

    fn cube(center: [f64; 3], half: f64) -> [[f64; 3]; 8] {
        std::array::from_fn(|c| {
            std::array::from_fn(|a| center[a] + if (c >> a) & 1 == 1 { half } else { -half })
        })
    }

    #[test]
    fn roi_symmetry_and_behind() {
        // P2 shifts the principal point to (50, 50) so a 100x100 image is centered on the axis.
        let mut calib = CalibrationSet::identity();
        calib.p2 = [[10.0, 0.0, 50.0, 0.0], [0.0, 10.0, 50.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        let r = voxel_roi(&calib, &cube([0.0, 0.0, 5.0], 0.5), (100, 100), 1).unwrap();
        assert!(((r.u_min + r.u_max) / 2.0 - 50.0).abs() < 1e-12);
        assert!(((r.v_min + r.v_max) / 2.0 - 50.0).abs() < 1e-12);
        assert_eq!(r.depth, 5.0);
        assert!(voxel_roi(&calib, &cube([0.0, 0.0, -5.0], 0.5), (100, 100), 1).is_none());
        // entirely off to the side
        assert!(voxel_roi(&calib, &cube([100.0, 0.0, 5.0], 0.5), (100, 100), 1).is_none());
        // stride divides coordinates
        let r4 = voxel_roi(&calib, &cube([0.0, 0.0, 5.0], 0.5), (100, 100), 4).unwrap();
        assert!((r4.u_min - r.u_min / 4.0).abs() < 1e-12);
    }

    #[test]
    fn roi_clipped_to_map() {
        let calib = CalibrationSet::identity();
        let r = voxel_roi(&calib, &cube([0.0, 0.0, 1.0], 0.4), (10, 10), 2).unwrap();
        assert_eq!((r.u_min, r.v_min), (0.0, 0.0));
        assert!(r.u_max <= 5.0 && r.v_max <= 5.0);
    }

    #[test]
    fn area_cases() {
        assert!((area_parameter(&roi(10.0, 10.0, 20.0, 15.0, 1.0), 100, 100) - 0.005).abs() < 1e-15);
        assert_eq!(area_parameter(&roi(3.0, 1.0, 3.0, 9.0, 1.0), 100, 100), 0.0);
        assert_eq!(area_parameter(&roi(0.0, 0.0, 100.0, 100.0, 1.0), 100, 100), 1.0);
    }

    #[test]
    fn occlusion_two_voxels() {
        let near = roi(0.0, 0.0, 10.0, 10.0, 5.0);
        let far = roi(3.0, 3.0, 6.0, 6.0, 10.0);
        let rois = [near, far];
        assert_eq!(occlusion_parameter(&rois, 1, false).unwrap(), 0.5);
        assert_eq!(occlusion_parameter(&rois, 0, false).unwrap(), 0.0);
        assert_eq!(occlusion_parameter(&rois[..1], 0, false).unwrap(), 0.0);
        assert!(occlusion_parameter(&rois, 2, false).is_err());
        // literal reading ignores depth: swap depths and the far one still counts
        let swapped = [roi(0.0, 0.0, 10.0, 10.0, 10.0), roi(3.0, 3.0, 6.0, 6.0, 5.0)];
        assert_eq!(occlusion_count(&swapped, 1, false).unwrap(), 0);
        assert_eq!(occlusion_count(&swapped, 1, true).unwrap(), 1);
    }

    #[test]
    fn occlusion_fast_path_matches_single_queries() {
        let mut rng = SeededRng::new(17);
        for ignore in [false, true] {
            let rois: Vec<Roi> = (0..300)
                .map(|_| {
                    let u = rng.below(20) as f64;
                    let v = rng.below(20) as f64;
                    roi(u, v, u + rng.below(8) as f64, v + rng.below(8) as f64, 1.0 + rng.below(5) as f64)
                })
                .collect();
            let fast = occlusion_counts(&rois, ignore, Execution::Parallel);
            for i in 0..rois.len() {
                assert_eq!(fast[i], occlusion_count(&rois, i, ignore).unwrap());
            }
        }
    }

    #[test]
    fn occlusion_antisymmetric_under_depth() {
        let a = roi(1.0, 1.0, 4.0, 4.0, 2.0);
        let b = roi(1.0, 1.0, 4.0, 4.0, 3.0);
        assert!(occludes(&a, &b, false));
        assert!(!occludes(&b, &a, false));
    }
}

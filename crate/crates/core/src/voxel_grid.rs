//! Sparse voxelization of a LiDAR scan.
//!
//! Voxels live in a `BTreeMap`, so iteration is always in ascending
//! lexicographic `(i, j, k)` order regardless of how the grid was built.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::kitti_io::{Point, PointCloud};
use crate::par::Execution;
use crate::rng::SeededRng;
use crate::tensor::{Affine, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct GridConfig {
    pub range_min: [f64; 3],
    pub range_max: [f64; 3],
    pub base_voxel_size: [f64; 3],
    /// Down-sampling factor of the backbone level the fusion layer attaches to.
    pub stride: u32,
    /// Point count at which the density parameter saturates.
    pub density_cap: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            range_min: [0.0, -40.0, -3.0],
            range_max: [70.4, 40.0, 1.0],
            base_voxel_size: [0.05, 0.05, 0.1],
            stride: 4,
            density_cap: 35,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        for a in 0..3 {
            if !(self.range_min[a].is_finite() && self.range_max[a].is_finite())
                || self.range_max[a] <= self.range_min[a]
            {
                return Err(Error::Config(format!("grid range axis {a} is empty")));
            }
            if !(self.base_voxel_size[a] > 0.0 && self.base_voxel_size[a].is_finite()) {
                return Err(Error::Config(format!("grid voxel size axis {a} must be positive")));
            }
        }
        if ![1, 2, 4, 8].contains(&self.stride) {
            return Err(Error::Config(format!("grid stride {} not in {{1, 2, 4, 8}}", self.stride)));
        }
        if self.density_cap == 0 {
            return Err(Error::Config("density cap must be positive".into()));
        }
        Ok(())
    }

    /// Effective voxel edge lengths at the configured stride.
    pub fn voxel_size(&self) -> [f64; 3] {
        let s = f64::from(self.stride);
        [
            self.base_voxel_size[0] * s,
            self.base_voxel_size[1] * s,
            self.base_voxel_size[2] * s,
        ]
    }

    /// Voxel containing `p`, or `None` outside `[range_min, range_max)`.
    pub fn index_of(&self, p: [f64; 3]) -> Option<VoxelIndex> {
        let size = self.voxel_size();
        let mut idx = [0i32; 3];
        for a in 0..3 {
            if !(p[a] >= self.range_min[a] && p[a] < self.range_max[a]) {
                return None;
            }
            idx[a] = ((p[a] - self.range_min[a]) / size[a]).floor() as i32;
        }
        Some(VoxelIndex(idx))
    }
}

/// Integer voxel coordinate, ordered lexicographically.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex(pub [i32; 3]);

impl VoxelIndex {
    pub fn new(i: i32, j: i32, k: i32) -> Self {
        VoxelIndex([i, j, k])
    }
}

impl std::fmt::Display for VoxelIndex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.0[0], self.0[1], self.0[2])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voxel {
    /// Indices into the source cloud, ascending.
    pub point_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    config: GridConfig,
    points: Vec<Point>,
    voxels: BTreeMap<VoxelIndex, Voxel>,
}

/// Bins every in-range, finite point into its voxel.
pub fn voxelize(cloud: &PointCloud, config: &GridConfig) -> Result<VoxelGrid> {
    voxelize_with(cloud, config, Execution::default())
}

pub fn voxelize_with(cloud: &PointCloud, config: &GridConfig, exec: Execution) -> Result<VoxelGrid> {
    config.validate()?;
    let indices = exec.map(&cloud.points, |p| {
        if p.is_finite() {
            config.index_of(p.xyz())
        } else {
            None
        }
    });
    let mut voxels: BTreeMap<VoxelIndex, Voxel> = BTreeMap::new();
    for (pi, idx) in indices.into_iter().enumerate() {
        if let Some(idx) = idx {
            voxels
                .entry(idx)
                .or_insert_with(|| Voxel { point_indices: Vec::new() })
                .point_indices
                .push(pi);
        }
    }
    Ok(VoxelGrid {
        config: config.clone(),
        points: cloud.points.clone(),
        voxels,
    })
}

impl VoxelGrid {
    pub fn config(&self) -> &GridConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.voxels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.voxels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&VoxelIndex, &Voxel)> {
        self.voxels.iter()
    }

    pub fn indices(&self) -> Vec<VoxelIndex> {
        self.voxels.keys().copied().collect()
    }

    pub fn get(&self, index: VoxelIndex) -> Result<&Voxel> {
        self.voxels.get(&index).ok_or_else(|| Error::not_found("voxel", index.0))
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn point_count(&self, index: VoxelIndex) -> Result<usize> {
        Ok(self.get(index)?.point_indices.len())
    }

    pub fn in_range_points(&self) -> usize {
        self.voxels.values().map(|v| v.point_indices.len()).sum()
    }

    /// Minimum corner of a voxel cell (does not require the voxel to be stored).
    pub fn cell_origin(&self, index: VoxelIndex) -> [f64; 3] {
        let size = self.config.voxel_size();
        std::array::from_fn(|a| self.config.range_min[a] + f64::from(index.0[a]) * size[a])
    }

    pub fn voxel_center(&self, index: VoxelIndex) -> Result<[f64; 3]> {
        self.get(index)?;
        let o = self.cell_origin(index);
        let size = self.config.voxel_size();
        Ok(std::array::from_fn(|a| o[a] + 0.5 * size[a]))
    }

    /// The 8 vertices of the voxel cell; bit `a` of the corner number selects
    /// the upper face along axis `a`.
    pub fn voxel_corners(&self, index: VoxelIndex) -> Result<[[f64; 3]; 8]> {
        self.get(index)?;
        let o = self.cell_origin(index);
        let size = self.config.voxel_size();
        Ok(std::array::from_fn(|c| {
            std::array::from_fn(|a| o[a] + if (c >> a) & 1 == 1 { size[a] } else { 0.0 })
        }))
    }

    /// `min(count, T) / T` with `T` the configured density cap.
    pub fn density_parameter(&self, index: VoxelIndex) -> Result<f64> {
        let count = self.point_count(index)?;
        let cap = self.config.density_cap as usize;
        Ok(count.min(cap) as f64 / cap as f64)
    }

    pub fn initial_features(&self, index: VoxelIndex, expansion: &FeatureExpansion) -> Result<Vector> {
        voxel_initial_features(self, index, expansion)
    }

    /// Surrogate features for every voxel.
    pub fn feature_map(
        &self,
        expansion: &FeatureExpansion,
        exec: Execution,
    ) -> Result<BTreeMap<VoxelIndex, Vector>> {
        let idx = self.indices();
        let feats = exec.try_map(&idx, |&i| voxel_initial_features(self, i, expansion))?;
        Ok(idx.into_iter().zip(feats).collect())
    }
}

/// Fixed seeded affine map from the 4 centered statistics to the remaining
/// `c_v - 4` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExpansion {
    c_v: usize,
    map: Affine,
}

impl FeatureExpansion {
    pub fn new(c_v: usize, seed: u64) -> Result<Self> {
        if c_v < 4 {
            return Err(Error::Config(format!("voxel channels must be >= 4, got {c_v}")));
        }
        let mut rng = SeededRng::named(seed, "voxel_features");
        let mut map = Affine::glorot(4, c_v - 4, &mut rng);
        for b in map.bias.iter_mut() {
            *b = rng.uniform(-0.5, 0.5);
        }
        Ok(FeatureExpansion { c_v, map })
    }

    pub fn channels(&self) -> usize {
        self.c_v
    }

    pub fn map(&self) -> &Affine {
        &self.map
    }
}

/// First four channels: mean `(x, y, z)` relative to the voxel center and
/// mean intensity; the rest come from `expansion`.
pub fn voxel_initial_features(
    grid: &VoxelGrid,
    index: VoxelIndex,
    expansion: &FeatureExpansion,
) -> Result<Vector> {
    let voxel = grid.get(index)?;
    let center = grid.voxel_center(index)?;
    let mut sum = [0.0f64; 4];
    for &pi in &voxel.point_indices {
        let p = grid.points[pi];
        let xyz = p.xyz();
        sum[0] += xyz[0];
        sum[1] += xyz[1];
        sum[2] += xyz[2];
        sum[3] += f64::from(p.intensity);
    }
    let n = voxel.point_indices.len() as f64;
    let stats = [
        sum[0] / n - center[0],
        sum[1] / n - center[1],
        sum[2] / n - center[2],
        sum[3] / n,
    ];
    let mut out = stats.to_vec();
    out.extend_from_slice(&expansion.map.forward(&stats)?);
    Ok(Vector(out))
}

//! Seeded synthetic KITTI-format scenes and the bundled sample.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kitti_io::{
    write_calibration, write_point_cloud, write_ppm, CalibrationSet, Image, ObjectClass, ObjectLabel, Point,
    PointCloud,
};
use crate::rng::SeededRng;

/// Point cloud, calibration and camera image of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub calib: CalibrationSet,
    pub image: Image,
}

/// Calibration of KITTI training frame 000000, with the intrinsics rescaled
/// from the 1242-pixel-wide original to `width`.
pub fn kitti_like_calibration(width: usize) -> CalibrationSet {
    let s = width as f64 / 1242.0;
    CalibrationSet {
        p2: [
            [721.5377 * s, 0.0, 609.5593 * s, 44.85728 * s],
            [0.0, 721.5377 * s, 172.854 * s, 0.2163791 * s],
            [0.0, 0.0, 1.0, 0.002745884],
        ],
        r0_rect: [
            [0.9999239, 0.00983776, -0.007445048],
            [-0.009869795, 0.9999421, -0.004278459],
            [0.007402527, 0.004351614, 0.9999631],
        ],
        tr_velo_to_cam: [
            [7.533745e-03, -9.999714e-01, -6.166020e-04, -4.069766e-03],
            [1.480249e-02, 7.280733e-04, -9.998902e-01, -7.631618e-02],
            [9.998621e-01, 7.523790e-03, 1.480755e-02, -2.717806e-01],
        ],
    }
}

/// Smooth gradients, a few flat blocks and per-pixel noise.
pub fn textured_image(width: usize, height: usize, rng: &mut SeededRng) -> Image {
    let blocks: Vec<[usize; 5]> = (0..6)
        .map(|_| {
            let x = rng.below(width.max(1));
            let y = rng.below(height.max(1));
            let w = 1 + rng.below((width / 4).max(1));
            let h = 1 + rng.below((height / 3).max(1));
            [x, y, w, h, rng.below(256)]
        })
        .collect();
    let mut data = Vec::with_capacity(width * height * 3);
    for y in 0..height {
        for x in 0..width {
            let flat = blocks
                .iter()
                .find(|b| x >= b[0] && x < b[0] + b[2] && y >= b[1] && y < b[1] + b[3]);
            if let Some(b) = flat {
                data.extend_from_slice(&[b[4] as u8; 3]);
                continue;
            }
            let base = [
                (x * 255 / width.max(1)) as i64,
                (y * 255 / height.max(1)) as i64,
                ((x + y) % 64 * 4) as i64,
            ];
            for c in base {
                let noisy = c + rng.below(33) as i64 - 16;
                data.push(noisy.clamp(0, 255) as u8);
            }
        }
    }
    Image { width, height, data }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    pub points: usize,
    pub clusters: usize,
    /// Fraction of points scattered uniformly over a wide box around the
    /// sensor, many of them outside the camera's view.
    pub clutter: f64,
}

impl SceneSpec {
    /// Small scenes for property sweeps.
    pub fn small() -> Self {
        SceneSpec {
            width: 160,
            height: 48,
            points: 600,
            clusters: 4,
            clutter: 0.2,
        }
    }

    /// Full-resolution frame with 100k points in a handful of object-sized
    /// clusters.
    pub fn large() -> Self {
        SceneSpec {
            width: 1242,
            height: 375,
            points: 100_000,
            clusters: 8,
            clutter: 0.0,
        }
    }
}

pub fn random_scene(seed: u64, spec: &SceneSpec) -> Scene {
    let mut rng = SeededRng::named(seed, "scene");
    let clusters: Vec<([f64; 3], [f64; 3])> = (0..spec.clusters.max(1))
        .map(|_| {
            let x = rng.uniform(6.0, 45.0);
            let center = [x, rng.uniform(-0.4 * x, 0.4 * x), rng.uniform(-1.6, 0.0)];
            let half = [rng.uniform(0.3, 1.8), rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.8)];
            (center, half)
        })
        .collect();
    let n_clutter = (spec.points as f64 * spec.clutter).round() as usize;
    let mut points = Vec::with_capacity(spec.points);
    for n in 0..spec.points {
        let xyz = if n < n_clutter {
            [rng.uniform(-10.0, 70.0), rng.uniform(-40.0, 40.0), rng.uniform(-3.0, 1.0)]
        } else {
            let (c, h) = clusters[n % clusters.len()];
            std::array::from_fn(|a| c[a] + rng.uniform(-h[a], h[a]))
        };
        let intensity = rng.uniform(0.0, 1.0);
        points.push(Point::new(xyz[0] as f32, xyz[1] as f32, xyz[2] as f32, intensity as f32));
    }
    let mut img_rng = SeededRng::named(seed, "scene_image");
    Scene {
        cloud: PointCloud { points },
        calib: kitti_like_calibration(spec.width),
        image: textured_image(spec.width, spec.height, &mut img_rng),
    }
}

/// A well-formed label of `class` with random geometry. Occlusion, truncation
/// and 2D height are drawn so every difficulty level is exercised.
pub fn random_label(rng: &mut SeededRng, class: ObjectClass) -> ObjectLabel {
    let dims = match class {
        ObjectClass::Car => [rng.uniform(1.3, 1.8), rng.uniform(1.5, 1.9), rng.uniform(3.4, 4.6)],
        _ => [rng.uniform(1.5, 1.9), rng.uniform(0.5, 0.8), rng.uniform(0.5, 1.9)],
    };
    let u0 = rng.uniform(0.0, 1100.0);
    let v0 = rng.uniform(100.0, 200.0);
    let h = rng.uniform(20.0, 120.0);
    ObjectLabel {
        class,
        truncation: rng.uniform(0.0, 0.6),
        occlusion: rng.below(3) as i32,
        alpha: rng.uniform(-3.14, 3.14),
        bbox2d: [u0, v0, u0 + rng.uniform(10.0, 140.0), v0 + h],
        dims,
        location: [rng.uniform(-15.0, 15.0), rng.uniform(1.0, 2.0), rng.uniform(5.0, 50.0)],
        rotation_y: rng.uniform(-3.14, 3.14),
        score: None,
    }
}

/// A detection near `gt`: small jitter in position, size and yaw.
pub fn jittered_detection(rng: &mut SeededRng, gt: &ObjectLabel, scale: f64) -> ObjectLabel {
    let mut d = gt.clone();
    for a in 0..3 {
        d.location[a] += rng.uniform(-scale, scale);
        d.dims[a] *= 1.0 + rng.uniform(-0.3 * scale, 0.3 * scale);
    }
    d.rotation_y += rng.uniform(-0.3 * scale, 0.3 * scale);
    d.score = Some(rng.next_f64());
    d
}

/// Ground truth for one class plus detections: some jittered copies of the
/// ground truth, some unrelated boxes. All ground truth is Easy-eligible.
pub fn random_detection_set(
    rng: &mut SeededRng,
    class: &ObjectClass,
    max_gt: usize,
    max_det: usize,
) -> (Vec<ObjectLabel>, Vec<ObjectLabel>) {
    let n_gt = 1 + rng.below(max_gt.max(1));
    let mut gts: Vec<ObjectLabel> = (0..n_gt)
        .map(|_| {
            let mut g = random_label(rng, class.clone());
            g.truncation = 0.0;
            g.occlusion = 0;
            g.bbox2d[3] = g.bbox2d[1] + 60.0;
            g
        })
        .collect();
    // spread the boxes out so most pairs are disjoint
    for (i, g) in gts.iter_mut().enumerate() {
        g.location[2] = 5.0 + 6.0 * i as f64 + rng.uniform(0.0, 1.0);
    }
    let n_det = rng.below(max_det + 1);
    let dets = (0..n_det)
        .map(|_| {
            if rng.bool(0.6) {
                let g = &gts[rng.below(gts.len())];
                let scale = rng.uniform(0.0, 0.3);
                jittered_detection(rng, g, scale)
            } else {
                let mut d = random_label(rng, class.clone());
                d.score = Some(rng.next_f64());
                d
            }
        })
        .collect();
    (gts, dets)
}

/// KITTI label line (15 columns, or 16 with a score).
pub fn format_label(l: &ObjectLabel) -> String {
    let mut s = format!(
        "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
        l.class.name(),
        l.truncation,
        l.occlusion,
        l.alpha,
        l.bbox2d[0],
        l.bbox2d[1],
        l.bbox2d[2],
        l.bbox2d[3],
        l.dims[0],
        l.dims[1],
        l.dims[2],
        l.location[0],
        l.location[1],
        l.location[2],
        l.rotation_y,
    );
    if let Some(score) = l.score {
        let _ = write!(s, " {score:.2}");
    }
    s
}

pub const SAMPLE_WIDTH: usize = 160;
pub const SAMPLE_HEIGHT: usize = 48;

/// Pinhole camera looking down the LiDAR x axis: focal 80, principal point at
/// the image center, camera `(x, y, z) = (-y, -z, x)` in LiDAR terms.
pub fn sample_calibration() -> CalibrationSet {
    CalibrationSet {
        p2: [
            [80.0, 0.0, 80.0, 0.0],
            [0.0, 80.0, 24.0, 0.0],
            [0.0, 0.0, 1.0, 0.0],
        ],
        r0_rect: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        tr_velo_to_cam: [
            [0.0, -1.0, 0.0, 0.0],
            [0.0, 0.0, -1.0, 0.0],
            [1.0, 0.0, 0.0, 0.0],
        ],
    }
}

/// Three occupied voxels on the default grid (0.2 x 0.2 x 0.4 m cells). The
/// far one at x in [10, 10.2] sits on the same rays as the near one at
/// x in [5, 5.2], whose image box strictly contains it.
pub fn sample_scene() -> (Scene, Vec<ObjectLabel>) {
    let mut rng = SeededRng::named(0, "sample");
    // (cell min corner, point count)
    let cells: [([f64; 3], usize); 3] = [([5.0, 0.2, -0.2], 40), ([8.0, -1.0, -1.0], 5), ([10.0, 0.4, -0.2], 12)];
    let mut points = Vec::new();
    for (lo, n) in cells {
        let size = [0.2, 0.2, 0.4];
        for _ in 0..n {
            let p: [f64; 3] = std::array::from_fn(|a| lo[a] + size[a] * rng.uniform(0.1, 0.9));
            points.push(Point::new(p[0] as f32, p[1] as f32, p[2] as f32, rng.uniform(0.0, 1.0) as f32));
        }
    }
    // outside the grid's x range: dropped by voxelization
    points.push(Point::new(-3.0, 0.0, 0.0, 0.5));

    let mut data = Vec::with_capacity(SAMPLE_WIDTH * SAMPLE_HEIGHT * 3);
    for y in 0..SAMPLE_HEIGHT {
        for x in 0..SAMPLE_WIDTH {
            let checker = if (x / 8 + y / 8) % 2 == 0 { 200 } else { 40 };
            data.extend_from_slice(&[(x * 255 / SAMPLE_WIDTH) as u8, (y * 5) as u8, checker]);
        }
    }
    let image = Image {
        width: SAMPLE_WIDTH,
        height: SAMPLE_HEIGHT,
        data,
    };

    let label = |class: &str, bbox: [f64; 4], dims: [f64; 3], loc: [f64; 3], ry: f64| ObjectLabel {
        class: ObjectClass::parse(class),
        truncation: 0.0,
        occlusion: 0,
        alpha: 0.0,
        bbox2d: bbox,
        dims,
        location: loc,
        rotation_y: ry,
        score: None,
    };
    let labels = vec![
        label("Car", [20.0, 4.0, 70.0, 46.0], [1.5, 1.6, 3.9], [-2.0, 1.6, 8.0], 0.1),
        label("Pedestrian", [85.0, 4.0, 100.0, 46.0], [1.7, 0.6, 0.8], [0.5, 1.6, 6.0], -0.2),
        label("Cyclist", [110.0, 4.0, 140.0, 46.0], [1.7, 0.6, 1.8], [3.0, 1.6, 10.0], 1.4),
        label("DontCare", [145.0, 10.0, 158.0, 30.0], [-1.0, -1.0, -1.0], [-1000.0, -1000.0, -1000.0], -10.0),
    ];
    let scene = Scene {
        cloud: PointCloud { points },
        calib: sample_calibration(),
        image,
    };
    (scene, labels)
}

/// Writes `velodyne/`, `calib/`, `image_2/` and `label_2/` files for frame
/// `name` under `root`.
pub fn write_frame(root: &Path, name: &str, scene: &Scene, labels: &[ObjectLabel]) -> Result<()> {
    let put = |dir: &str, file: String, bytes: &[u8]| -> Result<()> {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        let p = d.join(file);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };
    put("velodyne", format!("{name}.bin"), &write_point_cloud(&scene.cloud))?;
    put("calib", format!("{name}.txt"), write_calibration(&scene.calib).as_bytes())?;
    put("image_2", format!("{name}.ppm"), &write_ppm(&scene.image))?;
    let mut text = String::new();
    for l in labels {
        text.push_str(&format_label(l));
        text.push('\n');
    }
    put("label_2", format!("{name}.txt"), text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kitti_io::parse_labels;
    use crate::voxel_grid::{voxelize, GridConfig};

    #[test]
    fn scenes_are_deterministic() {
        let spec = SceneSpec::small();
        assert_eq!(random_scene(3, &spec), random_scene(3, &spec));
        assert_ne!(random_scene(3, &spec).cloud, random_scene(4, &spec).cloud);
    }

    #[test]
    fn kitti_calibration_validates() {
        kitti_like_calibration(1242).validate().unwrap();
        sample_calibration().validate().unwrap();
    }

    #[test]
    fn sample_has_three_voxels() {
        let (scene, labels) = sample_scene();
        let grid = voxelize(&scene.cloud, &GridConfig::default()).unwrap();
        let counts: Vec<usize> = grid.iter().map(|(_, v)| v.point_indices.len()).collect();
        assert_eq!(counts, vec![40, 5, 12]);
        let text: String = labels.iter().map(|l| format_label(l) + "\n").collect();
        assert_eq!(parse_labels(&text).unwrap(), labels);
    }
}

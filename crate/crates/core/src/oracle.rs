//! Brute-force reference implementations. Each one recomputes a quantity the
//! straightforward way, without sharing code with the fast paths it checks.

use crate::evaluator::{oriented_iou_3d, Box3d};
use crate::image_ops::GrayImage;
use crate::kitti_io::{CalibrationSet, DetectionBox, GroundTruthBox, ObjectClass};
use crate::projector::Roi;
use crate::voxel_grid::{VoxelGrid, VoxelIndex};

type M4 = [[f64; 4]; 4];

fn mul4(a: &M4, b: &M4) -> M4 {
    let mut out = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            for k in 0..4 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// `P2 · [R0 0; 0 1] · [Tr; 0 0 0 1] · (x, y, z, 1)` by explicit 4x4 products.
/// Returns `(u, v, depth)`, or `None` when `|depth| < 1e-6`.
pub fn project_homogeneous(calib: &CalibrationSet, p: [f64; 3]) -> Option<(f64, f64, f64)> {
    let mut p2 = [[0.0; 4]; 4];
    let mut r0 = [[0.0; 4]; 4];
    let mut tr = [[0.0; 4]; 4];
    for i in 0..3 {
        p2[i] = calib.p2[i];
        tr[i] = calib.tr_velo_to_cam[i];
        r0[i][..3].copy_from_slice(&calib.r0_rect[i]);
    }
    p2[3][3] = 1.0;
    r0[3][3] = 1.0;
    tr[3][3] = 1.0;
    let chain = mul4(&mul4(&p2, &r0), &tr);
    let x = [p[0], p[1], p[2], 1.0];
    let y: Vec<f64> = (0..3).map(|i| (0..4).map(|k| chain[i][k] * x[k]).sum()).collect();
    if y[2].abs() < 1e-6 {
        return None;
    }
    Some((y[0] / y[2], y[1] / y[2], y[2]))
}

/// Min/max over independently projected corners, scaled and clipped.
pub fn voxel_roi_brute(
    calib: &CalibrationSet,
    corners: &[[f64; 3]; 8],
    image_size: (usize, usize),
    stride: usize,
) -> Option<Roi> {
    let mut center = [0.0; 3];
    for c in corners {
        for a in 0..3 {
            center[a] += c[a] / 8.0;
        }
    }
    let (_, _, depth) = project_homogeneous(calib, center)?;
    if depth <= 0.0 {
        return None;
    }
    let front: Vec<(f64, f64)> = corners
        .iter()
        .filter_map(|c| project_homogeneous(calib, *c))
        .filter(|p| p.2 > 0.0)
        .map(|p| (p.0, p.1))
        .collect();
    if front.is_empty() {
        return None;
    }
    let s = stride as f64;
    let fw = image_size.0.div_ceil(stride) as f64;
    let fh = image_size.1.div_ceil(stride) as f64;
    let u_min = front.iter().map(|p| p.0).fold(f64::INFINITY, f64::min) / s;
    let u_max = front.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max) / s;
    let v_min = front.iter().map(|p| p.1).fold(f64::INFINITY, f64::min) / s;
    let v_max = front.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max) / s;
    let roi = Roi {
        u_min: u_min.max(0.0),
        v_min: v_min.max(0.0),
        u_max: u_max.min(fw),
        v_max: v_max.min(fh),
        depth,
    };
    (roi.u_min <= roi.u_max && roi.v_min <= roi.v_max).then_some(roi)
}

/// Michelson contrast by scanning every pixel of the image and keeping those
/// whose center lies in the closed rectangle. `None` when no pixel qualifies.
pub fn contrast_brute(gray: &GrayImage, u_min: f64, v_min: f64, u_max: f64, v_max: f64) -> Option<f64> {
    let mut seen = Vec::new();
    for y in 0..gray.height {
        for x in 0..gray.width {
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            if cx >= u_min && cx <= u_max && cy >= v_min && cy <= v_max {
                seen.push(f64::from(gray.get(x, y)));
            }
        }
    }
    if seen.is_empty() {
        return None;
    }
    let hi = seen.iter().cloned().fold(f64::MIN, f64::max);
    let lo = seen.iter().cloned().fold(f64::MAX, f64::min);
    Some(if hi + lo == 0.0 { 0.0 } else { (hi - lo) / (hi + lo) })
}

/// Double loop over all ordered pairs.
pub fn occlusion_counts_brute(rois: &[Roi], ignore_depth: bool) -> Vec<usize> {
    let mut counts = vec![0; rois.len()];
    for i in 0..rois.len() {
        for j in 0..rois.len() {
            if i == j {
                continue;
            }
            let (a, b) = (&rois[j], &rois[i]);
            let inside = a.u_min <= b.u_min && a.v_min <= b.v_min && a.u_max >= b.u_max && a.v_max >= b.v_max;
            if inside && (ignore_depth || a.depth < b.depth) {
                counts[i] += 1;
            }
        }
    }
    counts
}

/// One row of the scripted pairing pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRecord {
    pub index: VoxelIndex,
    pub roi: Roi,
    pub point_count: usize,
    pub occluders: usize,
    /// `(p_d, p_o, p_a, p_c)`.
    pub params: [f64; 4],
}

/// Step-by-step recomputation of every pair's geometry and parameters.
pub fn pairs_brute(
    grid: &VoxelGrid,
    calib: &CalibrationSet,
    gray: &GrayImage,
    stride: usize,
    ignore_depth: bool,
) -> Vec<PairRecord> {
    let cfg = grid.config();
    let size = cfg.voxel_size();
    let fw = gray.width.div_ceil(stride);
    let fh = gray.height.div_ceil(stride);
    let mut rows = Vec::new();
    for (index, voxel) in grid.iter() {
        let mut corners = [[0.0; 3]; 8];
        for (c, corner) in corners.iter_mut().enumerate() {
            for a in 0..3 {
                let lower = cfg.range_min[a] + f64::from(index.0[a]) * size[a];
                corner[a] = lower + if c & (1 << a) != 0 { size[a] } else { 0.0 };
            }
        }
        let Some(roi) = voxel_roi_brute(calib, &corners, (gray.width, gray.height), stride) else {
            continue;
        };
        let n = voxel.point_indices.len();
        let t = cfg.density_cap as usize;
        let p_d = n.min(t) as f64 / t as f64;
        let p_a = (roi.u_max - roi.u_min) * (roi.v_max - roi.v_min) / (fw * fh) as f64;
        let s = stride as f64;
        let p_c = contrast_brute(
            gray,
            (roi.u_min * s).max(0.0),
            (roi.v_min * s).max(0.0),
            (roi.u_max * s).min(gray.width as f64),
            (roi.v_max * s).min(gray.height as f64),
        )
        .unwrap_or(0.0);
        rows.push(PairRecord {
            index: *index,
            roi,
            point_count: n,
            occluders: 0,
            params: [p_d, 0.0, p_a, p_c],
        });
    }
    let rois: Vec<Roi> = rows.iter().map(|r| r.roi).collect();
    for (row, n) in rows.iter_mut().zip(occlusion_counts_brute(&rois, ignore_depth)) {
        row.occluders = n;
        row.params[1] = n as f64 / (n as f64 + 1.0);
    }
    rows
}

/// AP@R40 straight from the definition: every detection score is tried as a
/// threshold, and each recall level takes the best precision among thresholds
/// reaching it.
pub fn ap_r40_sweep(flags: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return None;
    }
    let mut total = 0.0;
    for i in 1..=40usize {
        let mut best = 0.0f64;
        for &(t, _) in flags {
            let kept: Vec<bool> = flags.iter().filter(|f| f.0 >= t).map(|f| f.1).collect();
            let tp = kept.iter().filter(|h| **h).count();
            if tp * 40 >= i * n_gt {
                best = best.max(tp as f64 / kept.len() as f64);
            }
        }
        total += best;
    }
    Some(100.0 * total / 40.0)
}

/// Matching by exhaustive search: among all one-to-one assignments of
/// detections to ground truth with IoU at or above the threshold, picks the
/// one whose matched IoUs, read in descending score order (unmatched as -1),
/// are lexicographically largest. Every ground truth of `class` counts as
/// eligible. Returns `(tp flags in score order, false negatives)`.
pub fn match_brute(
    dets: &[DetectionBox],
    gts: &[GroundTruthBox],
    class: &ObjectClass,
    iou_threshold: f64,
) -> (Vec<bool>, usize) {
    let mut order: Vec<&DetectionBox> = dets.iter().filter(|d| d.class == *class).collect();
    order.sort_by(|a, b| b.score.unwrap_or(1.0).total_cmp(&a.score.unwrap_or(1.0)));
    let gt: Vec<&GroundTruthBox> = gts.iter().filter(|g| g.class == *class).collect();
    let iou: Vec<Vec<f64>> = order
        .iter()
        .map(|d| {
            let db = Box3d::from_label(d).expect("valid det");
            gt.iter()
                .map(|g| oriented_iou_3d(&db, &Box3d::from_label(g).expect("valid gt")).expect("valid boxes"))
                .collect()
        })
        .collect();

    fn search(
        k: usize,
        iou: &[Vec<f64>],
        thr: f64,
        used: &mut Vec<bool>,
        path: &mut Vec<f64>,
        best: &mut Option<Vec<f64>>,
    ) {
        if k == iou.len() {
            let better = match best {
                None => true,
                Some(b) => path.iter().zip(b.iter()).find(|(x, y)| x != y).is_some_and(|(x, y)| x > y),
            };
            if better {
                *best = Some(path.clone());
            }
            return;
        }
        for g in 0..used.len() {
            if !used[g] && iou[k][g] >= thr {
                used[g] = true;
                path.push(iou[k][g]);
                search(k + 1, iou, thr, used, path, best);
                path.pop();
                used[g] = false;
            }
        }
        path.push(-1.0);
        search(k + 1, iou, thr, used, path, best);
        path.pop();
    }

    let mut best = None;
    search(0, &iou, iou_threshold, &mut vec![false; gt.len()], &mut Vec::new(), &mut best);
    let best = best.unwrap_or_default();
    let tp: Vec<bool> = best.iter().map(|v| *v >= 0.0).collect();
    let matched = tp.iter().filter(|t| **t).count();
    (tp, gt.len() - matched)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_matches_hand_values() {
        assert_eq!(ap_r40_sweep(&[(0.9, true)], 2), Some(50.0));
        assert_eq!(ap_r40_sweep(&[(0.9, false), (0.8, true)], 1), Some(50.0));
        assert_eq!(ap_r40_sweep(&[], 1), Some(0.0));
        assert_eq!(ap_r40_sweep(&[(0.9, true)], 0), None);
    }

    #[test]
    fn brute_occlusion_pair() {
        let near = Roi {
            u_min: 0.0,
            v_min: 0.0,
            u_max: 4.0,
            v_max: 4.0,
            depth: 2.0,
        };
        let far = Roi {
            u_min: 1.0,
            v_min: 1.0,
            u_max: 2.0,
            v_max: 2.0,
            depth: 5.0,
        };
        assert_eq!(occlusion_counts_brute(&[near, far], false), vec![0, 1]);
        assert_eq!(occlusion_counts_brute(&[far, near], true), vec![1, 0]);
    }

    #[test]
    fn homogeneous_identity() {
        let c = CalibrationSet::identity();
        assert_eq!(project_homogeneous(&c, [0.5, -0.25, 2.0]), Some((0.25, -0.125, 2.0)));
        assert_eq!(project_homogeneous(&c, [1.0, 1.0, 0.0]), None);
    }
}

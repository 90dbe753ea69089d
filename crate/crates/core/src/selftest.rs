//! Oracle and property suites, sized by the caller. The `selftest`
//! subcommand runs them at moderate sizes; the acceptance target runs them at
//! full size.

use std::fmt;

use crate::config::RunConfig;
use crate::error::Result;
use crate::evaluator::{
    average_precision_r40, clip_convex, match_detections, mean_average_precision, oriented_iou_3d, polygon_area,
    ApTable, Box3d, Difficulty, IouThresholds,
};
use crate::image_ops::{michelson_contrast, roi_align_1x1, roi_align_1x1_adjoint, FeatureMap, GrayImage, PixelRect, RoiSampling};
use crate::kitti_io::{parse_labels, write_detections, CalibrationSet, ObjectClass};
use crate::oracle;
use crate::par::Execution;
use crate::pipeline::{load_weights, run_fusion, run_pairing, FrameData};
use crate::projector::{occlusion_counts, project_point, Roi};
use crate::rng::SeededRng;
use crate::synthetic::{kitti_like_calibration, random_detection_set, random_label, random_scene, SceneSpec};
use crate::tensor::DEFAULT_FD_EPS;
use crate::vpf_layer::{
    fusion_forward, gradcheck_chain, init_weights, random_fusion_inputs, ScatterMode, VpfConfig,
    VpfWeights, PARAM_DIM,
};

/// Outcome of one suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name,
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &'static str, r: Result<Check>) -> Check {
        r.unwrap_or_else(|e| Check::new(name, false, format!("error: {e}")))
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{verdict} {}: {}", self.name, self.detail)
    }
}

/// Reference per-cell APs and their mAP, Car/Pedestrian/Cyclist × Easy/Moderate/Hard.
pub const REFERENCE_ROWS: [(&str, [f64; 9], f64); 3] = [
    ("row_a", [88.51, 80.97, 76.74, 54.65, 48.36, 44.98, 77.64, 64.10, 58.00], 65.99),
    ("row_b", [87.60, 78.31, 73.34, 53.10, 45.37, 41.47, 82.59, 65.95, 59.00], 65.19),
    ("row_c", [88.36, 79.57, 74.55, 54.64, 44.27, 40.23, 82.48, 64.10, 56.90], 65.01),
];

pub fn check_map_arithmetic() -> Check {
    let name = "map_arithmetic";
    Check::from_result(
        name,
        (|| {
            let mut parts = Vec::new();
            let mut ok = true;
            for (label, row, expected) in REFERENCE_ROWS {
                let m = mean_average_precision(&ApTable::from_values(row))?;
                ok &= (m - expected).abs() <= 0.005 && format!("{m:.2}") == format!("{expected:.2}");
                parts.push(format!("{label} {m:.2}"));
            }
            ok &= mean_average_precision(&ApTable::from_values([42.5; 9]))? == 42.5;
            let mut partial = ApTable::from_values([1.0; 9]);
            partial.entries[1][2] = None;
            ok &= mean_average_precision(&partial).is_err();
            Ok(Check::new(name, ok, parts.join(", ")))
        })(),
    )
}

pub fn check_gradients(c_v: usize, c_p: usize, seeds: &[u64]) -> Check {
    let name = "gradients";
    Check::from_result(
        name,
        (|| {
            let (mut worst, mut control) = (0.0f64, f64::INFINITY);
            for &seed in seeds {
                let r = gradcheck_chain(&VpfConfig::new(c_v, c_p, seed), DEFAULT_FD_EPS)?;
                worst = worst.max(r.max_rel_error);
                control = control.min(r.negative_control);
            }
            Ok(Check::new(
                name,
                worst < 1e-5 && control > 1e-2,
                format!(
                    "C_v={c_v} C_p={c_p} seeds={} max_rel_error={worst:.3e} weakest_control={control:.3e}",
                    seeds.len()
                ),
            ))
        })(),
    )
}

/// Expected length of each named intermediate of [`crate::vpf_layer::FusionOutput`].
pub fn expected_dims(c_v: usize, c_p: usize) -> [(&'static str, usize); 15] {
    [
        ("p_prime", PARAM_DIM),
        ("p_v", c_v),
        ("p_p", c_p),
        ("pbw_voxel_weights", c_v),
        ("b_v_prime", c_v),
        ("pbw_pixel_weights", c_p),
        ("b_p_prime", c_p),
        ("attn_v", c_v),
        ("b_v_t", c_v),
        ("attn_p", c_p),
        ("b_p_t", c_p),
        ("p_t", PARAM_DIM),
        ("s", c_v + c_p + PARAM_DIM),
        ("b_v_fused", c_v),
        ("b_p_fused", c_p),
    ]
}

pub fn check_shapes(c_vs: &[usize], c_ps: &[usize]) -> Check {
    let name = "shapes";
    Check::from_result(
        name,
        (|| {
            let mut failures = Vec::new();
            let mut cases = 0;
            for &c_v in c_vs {
                for &c_p in c_ps {
                    cases += 1;
                    let cfg = VpfConfig::new(c_v, c_p, (c_v * 100 + c_p) as u64);
                    let inp = random_fusion_inputs(&cfg)?;
                    inp.weights.check_shapes()?;
                    let out = fusion_forward(&inp.p, &inp.b_v, &inp.b_p, &inp.weights)?;
                    for ((n, v), (m, want)) in out.named().iter().zip(expected_dims(c_v, c_p)) {
                        if *n != m || v.len() != want || !v.is_finite() {
                            failures.push(format!("({c_v},{c_p}) {n}: {} != {want}", v.len()));
                        }
                    }
                }
            }
            let detail = if failures.is_empty() {
                format!("{cases} channel pairs, 15 intermediates each")
            } else {
                failures.join("; ")
            };
            Ok(Check::new(name, failures.is_empty(), detail))
        })(),
    )
}

fn small_frame(seed: u64) -> FrameData {
    let s = random_scene(seed, &SceneSpec::small());
    FrameData {
        cloud: s.cloud,
        calib: s.calib,
        image: s.image,
    }
}

fn small_config() -> RunConfig {
    RunConfig {
        c_v: 8,
        c_p: 8,
        ..RunConfig::default()
    }
}

pub fn check_residual_identity(scenes: u64) -> Check {
    let name = "residual_identity";
    Check::from_result(
        name,
        (|| {
            let cfg = small_config();
            let mut w = load_weights(&cfg)?;
            w.zero_output_heads();
            let (mut bad, mut pairs) = (0, 0);
            for seed in 0..scenes {
                let p = run_pairing(&cfg, &small_frame(seed), Execution::default())?;
                pairs += p.pairs.len();
                for scatter in [ScatterMode::Adjoint, ScatterMode::CenterCell] {
                    let c = RunConfig { scatter, ..cfg.clone() };
                    let out = run_fusion(&c, &p, &w, Execution::default())?;
                    let same_lidar = out.lidar.len() == p.lidar_feats.len()
                        && out.lidar.iter().zip(&p.lidar_feats).all(|((ka, a), (kb, b))| {
                            ka == kb && a.iter().map(|x| x.to_bits()).eq(b.iter().map(|x| x.to_bits()))
                        });
                    let same_camera = out.camera.data.iter().map(|x| x.to_bits()).eq(p.camera_map.data.iter().map(|x| x.to_bits()));
                    if !(same_lidar && same_camera) {
                        bad += 1;
                    }
                }
            }
            Ok(Check::new(
                name,
                bad == 0 && pairs > 0,
                format!("{scenes} scenes, {pairs} pairs, {bad} changed"),
            ))
        })(),
    )
}

/// ROIs on a coarse lattice, so shared edges, equal depths and nested boxes
/// are common. Zero coordinates are emitted with either sign.
pub fn random_lattice_rois(rng: &mut SeededRng, n: usize) -> Vec<Roi> {
    let coord = |rng: &mut SeededRng, k: usize| {
        let v = rng.below(k) as f64 * 0.5;
        if v == 0.0 && rng.bool(0.5) {
            -0.0
        } else {
            v
        }
    };
    (0..n)
        .map(|_| {
            let u = coord(rng, 20);
            let v = coord(rng, 12);
            let du = rng.below(12) as f64 * 0.5;
            let dv = rng.below(8) as f64 * 0.5;
            Roi {
                u_min: u,
                v_min: v,
                u_max: u + du,
                v_max: v + dv,
                depth: 1.0 + rng.below(10) as f64,
            }
        })
        .collect()
}

pub fn check_occlusion(n_rois: usize, seeds: u64) -> Check {
    let name = "occlusion_oracle";
    let (mut bad, mut total_occluders) = (0, 0);
    for seed in 0..seeds {
        let rois = random_lattice_rois(&mut SeededRng::named(seed, "occlusion"), n_rois);
        for ignore_depth in [false, true] {
            let want = oracle::occlusion_counts_brute(&rois, ignore_depth);
            total_occluders += want.iter().sum::<usize>();
            for exec in [Execution::Sequential, Execution::Parallel] {
                if occlusion_counts(&rois, ignore_depth, exec) != want {
                    bad += 1;
                }
            }
        }
    }
    Check::new(
        name,
        bad == 0,
        format!("{seeds} seeds x {n_rois} ROIs, {total_occluders} occluder relations, {bad} mismatching runs"),
    )
}

pub fn random_ap_case(rng: &mut SeededRng, max_det: usize, max_gt: usize) -> (Vec<(f64, bool)>, usize) {
    let n_gt = 1 + rng.below(max_gt);
    let n_det = rng.below(max_det + 1);
    let coarse = rng.bool(0.5);
    let mut tp = 0;
    let flags = (0..n_det)
        .map(|_| {
            let score = if coarse { rng.below(6) as f64 / 5.0 } else { rng.next_f64() };
            let hit = tp < n_gt && rng.bool(0.5);
            tp += usize::from(hit);
            (score, hit)
        })
        .collect();
    (flags, n_gt)
}

pub fn check_ap(sets: u64) -> Check {
    let name = "ap_oracle";
    Check::from_result(
        name,
        (|| {
            let mut worst = 0.0f64;
            // six detections against four ground truth, with a tie
            let fixed = [(0.9, true), (0.8, false), (0.7, true), (0.7, false), (0.5, true), (0.1, false)];
            let mut cases = vec![(fixed.to_vec(), 4)];
            let mut rng = SeededRng::named(0, "ap_sets");
            cases.extend((0..sets).map(|_| random_ap_case(&mut rng, 50, 20)));
            for (flags, n_gt) in &cases {
                let fast = average_precision_r40(flags, *n_gt)?;
                let slow = oracle::ap_r40_sweep(flags, *n_gt).expect("n_gt >= 1");
                worst = worst.max((fast - slow).abs());
            }
            Ok(Check::new(
                name,
                worst <= 1e-12,
                format!("{} sets, max |fast - sweep| = {worst:.3e}", cases.len()),
            ))
        })(),
    )
}

pub fn check_matching(sets: u64) -> Check {
    let name = "matching_oracle";
    Check::from_result(
        name,
        (|| {
            let mut rng = SeededRng::named(0, "matching_sets");
            let (mut bad, mut tps) = (0, 0);
            for n in 0..sets {
                let class = ObjectClass::EVALUATED[(n % 3) as usize].clone();
                let (gts, mut dets) = random_detection_set(&mut rng, &class, 5, 10);
                for d in &mut dets {
                    d.bbox2d[3] = d.bbox2d[1] + 60.0;
                }
                let thr = IouThresholds::default().get(&class);
                let fast = match_detections(&dets, &gts, &class, thr, Difficulty::Moderate)?;
                let (tp, fn_count) = oracle::match_brute(&dets, &gts, &class, thr);
                tps += fast.tp_count();
                if fast.tp != tp || fast.fn_count != fn_count || fast.ignored != 0 {
                    bad += 1;
                }
            }
            Ok(Check::new(
                name,
                bad == 0 && tps > 0,
                format!("{sets} sets, {tps} true positives, {bad} mismatches"),
            ))
        })(),
    )
}

pub fn check_parameter_bounds(scenes: u64) -> Check {
    let name = "parameter_bounds";
    Check::from_result(
        name,
        (|| {
            let cfg = small_config();
            let (mut bad, mut pairs) = (0, 0);
            for seed in 0..scenes {
                let p = run_pairing(&cfg, &small_frame(seed), Execution::default())?;
                for pair in &p.pairs {
                    pairs += 1;
                    let q = pair.params;
                    let ok = q.density > 0.0
                        && q.density <= 1.0
                        && (0.0..1.0).contains(&q.occlusion)
                        && (0.0..=1.0).contains(&q.area)
                        && (0.0..=1.0).contains(&q.contrast);
                    bad += usize::from(!ok);
                }
            }
            let uniform = GrayImage::new(4, 4, vec![77; 16])?;
            let mut extreme = vec![0u8; 16];
            extreme[5] = 255;
            let extreme = GrayImage::new(4, 4, extreme)?;
            let whole = PixelRect {
                u_min: 0.0,
                v_min: 0.0,
                u_max: 4.0,
                v_max: 4.0,
            };
            let c0 = michelson_contrast(&uniform, &whole)?;
            let c1 = michelson_contrast(&extreme, &whole)?;
            Ok(Check::new(
                name,
                bad == 0 && pairs > 0 && c0 == 0.0 && c1 == 1.0,
                format!("{scenes} scenes, {pairs} pairs, {bad} out of range; uniform {c0}, extreme {c1}"),
            ))
        })(),
    )
}

pub fn check_pairs_vs_oracle(scenes: u64) -> Check {
    let name = "pair_pipeline_oracle";
    Check::from_result(
        name,
        (|| {
            let cfg = small_config();
            let (mut bad, mut pairs) = (0, 0);
            let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
            for seed in 0..scenes {
                let frame = small_frame(seed);
                let p = run_pairing(&cfg, &frame, Execution::default())?;
                let want = oracle::pairs_brute(&p.grid, &frame.calib, &p.gray, cfg.stride, cfg.occlusion_ignore_depth);
                if want.len() != p.pairs.len() {
                    bad += 1;
                    continue;
                }
                for (got, w) in p.pairs.iter().zip(&want) {
                    pairs += 1;
                    let (r, s) = (&got.roi, &w.roi);
                    let ok = got.voxel_index == w.index
                        && got.point_count == w.point_count
                        && got.occluder_count == w.occluders
                        && close(r.u_min, s.u_min)
                        && close(r.v_min, s.v_min)
                        && close(r.u_max, s.u_max)
                        && close(r.v_max, s.v_max)
                        && close(r.depth, s.depth)
                        && got.params.as_array().iter().zip(w.params).all(|(a, b)| close(*a, b));
                    bad += usize::from(!ok);
                }
            }
            Ok(Check::new(
                name,
                bad == 0 && pairs > 0,
                format!("{scenes} scenes, {pairs} pairs, {bad} mismatches"),
            ))
        })(),
    )
}

pub fn check_projection(points: u64) -> Check {
    let name = "projection";
    Check::from_result(
        name,
        (|| {
            let mut rng = SeededRng::named(0, "projection");
            let id = CalibrationSet::identity();
            let kitti = kitti_like_calibration(1242);
            let (mut worst_id, mut worst_pin, mut worst_chain) = (0.0f64, 0.0f64, 0.0f64);
            for _ in 0..points {
                let p = [rng.uniform(-20.0, 20.0), rng.uniform(-5.0, 5.0), rng.uniform(0.5, 80.0)];
                let q = project_point(&id, p)?;
                worst_id = worst_id
                    .max((q.u - p[0] / p[2]).abs())
                    .max((q.v - p[1] / p[2]).abs())
                    .max((q.depth - p[2]).abs());

                let (f, cx, cy) = (rng.uniform(100.0, 1000.0), rng.uniform(0.0, 600.0), rng.uniform(0.0, 200.0));
                let mut pin = CalibrationSet::identity();
                pin.p2 = [[f, 0.0, cx, 0.0], [0.0, f, cy, 0.0], [0.0, 0.0, 1.0, 0.0]];
                let q = project_point(&pin, p)?;
                let (u, v) = (f * p[0] / p[2] + cx, f * p[1] / p[2] + cy);
                worst_pin = worst_pin.max((q.u - u).abs() / u.abs().max(1.0)).max((q.v - v).abs() / v.abs().max(1.0));

                let lidar = [rng.uniform(2.0, 70.0), rng.uniform(-30.0, 30.0), rng.uniform(-3.0, 1.0)];
                let q = project_point(&kitti, lidar)?;
                let (u, v, d) = oracle::project_homogeneous(&kitti, lidar).expect("in front of the camera");
                worst_chain = worst_chain
                    .max((q.u - u).abs() / u.abs().max(1.0))
                    .max((q.v - v).abs() / v.abs().max(1.0))
                    .max((q.depth - d).abs() / d.abs().max(1.0));
            }
            let behind = project_point(&id, [1.0, 1.0, 0.0]).is_err();
            Ok(Check::new(
                name,
                worst_id <= 1e-12 && worst_pin <= 1e-12 && worst_chain <= 1e-12 && behind,
                format!(
                    "{points} points: identity {worst_id:.1e}, pinhole {worst_pin:.1e}, chained 4x4 {worst_chain:.1e}"
                ),
            ))
        })(),
    )
}

fn random_box(rng: &mut SeededRng) -> Box3d {
    Box3d {
        location: [rng.uniform(-3.0, 3.0), rng.uniform(-1.0, 1.0), rng.uniform(-3.0, 3.0)],
        dims: [rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0), rng.uniform(0.5, 5.0)],
        yaw: rng.uniform(-3.2, 3.2),
    }
}

fn rotated(b: &Box3d, phi: f64) -> Box3d {
    let (s, c) = phi.sin_cos();
    let [x, y, z] = b.location;
    Box3d {
        location: [c * x + s * z, y, -s * x + c * z],
        dims: b.dims,
        yaw: b.yaw + phi,
    }
}

pub fn check_iou(pairs: u64) -> Check {
    let name = "iou_properties";
    Check::from_result(
        name,
        (|| {
            let mut rng = SeededRng::named(0, "iou_pairs");
            let (mut asym, mut rot, mut bounds_bad, mut clip_bad, mut overlapping) = (0.0f64, 0.0f64, 0, 0, 0);
            for _ in 0..pairs {
                let (a, b) = (random_box(&mut rng), random_box(&mut rng));
                let ab = oriented_iou_3d(&a, &b)?;
                let ba = oriented_iou_3d(&b, &a)?;
                asym = asym.max((ab - ba).abs());
                bounds_bad += usize::from(!(0.0..=1.0).contains(&ab));
                overlapping += usize::from(ab > 0.0);
                let phi = rng.uniform(-3.2, 3.2);
                rot = rot.max((oriented_iou_3d(&rotated(&a, phi), &rotated(&b, phi))? - ab).abs());
                let (pa, pb) = (a.bev_corners(), b.bev_corners());
                let inter = polygon_area(&clip_convex(&pa, &pb));
                clip_bad += usize::from(inter > polygon_area(&pa).min(polygon_area(&pb)) + 1e-12);
            }
            let cube = |x: f64| Box3d {
                location: [x, 0.5, 0.0],
                dims: [1.0, 1.0, 1.0],
                yaw: 0.0,
            };
            let half = oriented_iou_3d(&cube(0.0), &cube(0.5))?;
            let same = oriented_iou_3d(&cube(0.0), &cube(0.0))?;
            let apart = oriented_iou_3d(&cube(0.0), &cube(5.0))?;
            let passed = asym <= 1e-12
                && rot <= 1e-9
                && bounds_bad == 0
                && clip_bad == 0
                && (half - 1.0 / 3.0).abs() <= 1e-12
                && (same - 1.0).abs() <= 1e-12
                && apart == 0.0
                && overlapping > 0;
            Ok(Check::new(
                name,
                passed,
                format!(
                    "{pairs} pairs ({overlapping} overlapping): asymmetry {asym:.1e}, rotation drift {rot:.1e}, \
                     half-cube {half:.15}"
                ),
            ))
        })(),
    )
}

fn outputs_bitwise_equal(a: &VpfWeights, b: &VpfWeights, rng: &mut SeededRng) -> Result<bool> {
    let (c_v, c_p) = (a.config.c_v, a.config.c_p);
    let p: Vec<f64> = (0..4).map(|_| rng.next_f64()).collect();
    let b_v: Vec<f64> = (0..c_v).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let b_p: Vec<f64> = (0..c_p).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let x = fusion_forward(&p, &b_v, &b_p, a)?;
    let y = fusion_forward(&p, &b_v, &b_p, b)?;
    Ok(x.named()
        .iter()
        .zip(y.named().iter())
        .all(|((_, u), (_, v))| u.iter().map(|t| t.to_bits()).eq(v.iter().map(|t| t.to_bits()))))
}

pub fn check_roundtrips(boxes: u64) -> Check {
    let name = "roundtrips";
    Check::from_result(
        name,
        (|| {
            let mut rng = SeededRng::named(0, "roundtrip");
            let labels: Vec<_> = (0..boxes)
                .map(|n| {
                    let mut l = random_label(&mut rng, ObjectClass::EVALUATED[(n % 3) as usize].clone());
                    l.score = Some(rng.next_f64());
                    l
                })
                .collect();
            let back = parse_labels(&write_detections(&labels)?)?;
            let mut worst = 0.0f64;
            let same_meta = back.len() == labels.len()
                && back.iter().zip(&labels).all(|(a, b)| a.class == b.class && a.occlusion == b.occlusion);
            for (a, b) in back.iter().zip(&labels) {
                let fa = [a.truncation, a.alpha, a.rotation_y, a.score.unwrap_or(f64::NAN)];
                let fb = [b.truncation, b.alpha, b.rotation_y, b.score.unwrap_or(f64::NAN)];
                let pa = a.bbox2d.iter().chain(&a.dims).chain(&a.location).chain(&fa);
                let pb = b.bbox2d.iter().chain(&b.dims).chain(&b.location).chain(&fb);
                for (x, y) in pa.zip(pb) {
                    worst = worst.max((x - y).abs());
                }
            }
            let mut weights_ok = true;
            for (c_v, c_p, seed) in [(8, 16, 3), (1, 1, 4), (5, 3, 9)] {
                let mut cfg = VpfConfig::new(c_v, c_p, seed);
                cfg.net_depth = if seed == 9 { 2 } else { 1 };
                let w = init_weights(&cfg)?;
                let back = VpfWeights::from_bytes(&w.to_bytes())?;
                weights_ok &= back == w && outputs_bitwise_equal(&w, &back, &mut rng)?;
            }
            Ok(Check::new(
                name,
                same_meta && worst <= 1e-2 && weights_ok,
                format!("{boxes} boxes, max field error {worst:.4}; weight file bitwise: {weights_ok}"),
            ))
        })(),
    )
}

pub fn check_roi_adjoint(trials: u64) -> Check {
    let name = "roi_align_adjoint";
    Check::from_result(
        name,
        (|| {
            let mut rng = SeededRng::named(0, "adjoint");
            let mut worst = 0.0f64;
            for _ in 0..trials {
                let (h, w, c) = (1 + rng.below(6), 1 + rng.below(6), 1 + rng.below(3));
                let mut map = FeatureMap::zeros(h, w, c, 4);
                for x in &mut map.data {
                    *x = rng.uniform(-1.0, 1.0);
                }
                let u0 = rng.uniform(0.0, w as f64);
                let v0 = rng.uniform(0.0, h as f64);
                let roi = Roi {
                    u_min: u0,
                    v_min: v0,
                    u_max: rng.uniform(u0, w as f64),
                    v_max: rng.uniform(v0, h as f64),
                    depth: 1.0,
                };
                let y: Vec<f64> = (0..c).map(|_| rng.uniform(-1.0, 1.0)).collect();
                for sampling in [RoiSampling::Grid2x2, RoiSampling::Center] {
                    let ax = roi_align_1x1(&map, &roi, sampling)?;
                    let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
                    let mut scattered = FeatureMap::zeros(h, w, c, 4);
                    roi_align_1x1_adjoint(&mut scattered, &roi, sampling, &y)?;
                    let rhs: f64 = scattered.data.iter().zip(&map.data).map(|(a, b)| a * b).sum();
                    worst = worst.max((lhs - rhs).abs());
                }
            }
            Ok(Check::new(
                name,
                worst <= 1e-12,
                format!("{trials} maps, max |<Ax,y> - <x,A^T y>| = {worst:.1e}"),
            ))
        })(),
    )
}

pub fn check_execution_equivalence(scenes: u64) -> Check {
    let name = "sequential_vs_parallel";
    Check::from_result(
        name,
        (|| {
            let cfg = small_config();
            let w = load_weights(&cfg)?;
            let mut bad = 0;
            for seed in 0..scenes {
                let frame = small_frame(seed);
                let a = run_pairing(&cfg, &frame, Execution::Sequential)?;
                let b = run_pairing(&cfg, &frame, Execution::Parallel)?;
                let fa = run_fusion(&cfg, &a, &w, Execution::Sequential)?;
                let fb = run_fusion(&cfg, &b, &w, Execution::Parallel)?;
                bad += usize::from(a != b || fa != fb);
            }
            Ok(Check::new(name, bad == 0, format!("{scenes} scenes, {bad} differing")))
        })(),
    )
}

/// Moderate-size run of every suite.
pub fn run_all() -> Vec<Check> {
    vec![
        check_map_arithmetic(),
        check_gradients(4, 6, &[1]),
        check_shapes(&[1, 3, 8], &[1, 4, 16]),
        check_residual_identity(10),
        check_occlusion(300, 3),
        check_ap(100),
        check_matching(60),
        check_parameter_bounds(50),
        check_pairs_vs_oracle(10),
        check_projection(500),
        check_iou(300),
        check_roundtrips(100),
        check_roi_adjoint(100),
        check_execution_equivalence(3),
    ]
}

use proptest::prelude::*;

use vpf_core::config::RunConfig;
use vpf_core::evaluator::{average_precision_r40, oriented_iou_3d, Box3d};
use vpf_core::image_ops::{michelson_contrast, GrayImage, PixelRect};
use vpf_core::oracle::{ap_r40_sweep, occlusion_counts_brute, project_homogeneous};
use vpf_core::pipeline::{run_pairing, FrameData};
use vpf_core::projector::{occlusion_counts, project_point, Roi};
use vpf_core::synthetic::{random_scene, SceneSpec};
use vpf_core::Execution;

fn arb_box() -> impl Strategy<Value = Box3d> {
    (
        prop::array::uniform3(-4.0..4.0f64),
        prop::array::uniform3(0.2..4.0f64),
        -3.2..3.2f64,
    )
        .prop_map(|(location, dims, yaw)| Box3d { location, dims, yaw })
}

fn arb_roi() -> impl Strategy<Value = Roi> {
    (0u8..16, 0u8..10, 0u8..8, 0u8..6, 1u8..6).prop_map(|(u, v, du, dv, d)| Roi {
        u_min: f64::from(u) * 0.5,
        v_min: f64::from(v) * 0.5,
        u_max: f64::from(u + du) * 0.5,
        v_max: f64::from(v + dv) * 0.5,
        depth: f64::from(d),
    })
}

proptest! {
    #[test]
    fn iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = oriented_iou_3d(&a, &b).unwrap();
        let ba = oriented_iou_3d(&b, &a).unwrap();
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - ba).abs() <= 1e-12);
        prop_assert!((oriented_iou_3d(&a, &a).unwrap() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn iou_survives_joint_rotation(a in arb_box(), b in arb_box(), phi in -3.2..3.2f64) {
        let turn = |x: &Box3d| {
            let (s, c) = phi.sin_cos();
            let [px, py, pz] = x.location;
            Box3d { location: [c * px + s * pz, py, -s * px + c * pz], dims: x.dims, yaw: x.yaw + phi }
        };
        let before = oriented_iou_3d(&a, &b).unwrap();
        let after = oriented_iou_3d(&turn(&a), &turn(&b)).unwrap();
        prop_assert!((before - after).abs() <= 1e-9, "{before} vs {after}");
    }

    #[test]
    fn occlusion_fast_path_matches_brute_force(rois in prop::collection::vec(arb_roi(), 0..80), ignore in any::<bool>()) {
        let want = occlusion_counts_brute(&rois, ignore);
        prop_assert_eq!(occlusion_counts(&rois, ignore, Execution::Sequential), want.clone());
        prop_assert_eq!(occlusion_counts(&rois, ignore, Execution::Parallel), want);
    }

    #[test]
    fn ap_matches_threshold_sweep(
        flags in prop::collection::vec((0u8..20, any::<bool>()), 0..50),
        extra_gt in 0usize..10,
    ) {
        let flags: Vec<(f64, bool)> = flags.into_iter().map(|(s, tp)| (f64::from(s) / 20.0, tp)).collect();
        let n_gt = flags.iter().filter(|f| f.1).count() + extra_gt;
        match (average_precision_r40(&flags, n_gt), ap_r40_sweep(&flags, n_gt)) {
            (Ok(fast), Some(slow)) => prop_assert!((fast - slow).abs() <= 1e-12, "{fast} vs {slow}"),
            (Err(_), None) => {}
            (fast, slow) => prop_assert!(false, "{fast:?} vs {slow:?}"),
        }
    }

    #[test]
    fn contrast_is_a_unit_fraction(data in prop::collection::vec(any::<u8>(), 48), u0 in 0.0..8.0f64, v0 in 0.0..6.0f64) {
        let gray = GrayImage::new(8, 6, data).unwrap();
        let rect = PixelRect { u_min: u0, v_min: v0, u_max: u0 + 2.0, v_max: v0 + 2.0 };
        if let Ok(c) = michelson_contrast(&gray, &rect) {
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }

    #[test]
    fn projection_matches_homogeneous_chain(seed in 0u64..1000, p in prop::array::uniform3(-20.0..20.0f64)) {
        let scene = random_scene(seed, &SceneSpec::small());
        let fast = project_point(&scene.calib, p);
        match (fast, project_homogeneous(&scene.calib, p)) {
            (Ok(f), Some((u, v, d))) => {
                let scale = 1.0 + u.abs().max(v.abs());
                prop_assert!((f.u - u).abs() <= 1e-12 * scale && (f.v - v).abs() <= 1e-12 * scale);
                prop_assert!((f.depth - d).abs() <= 1e-12 * (1.0 + d.abs()));
            }
            (Err(_), None) => {}
            (f, o) => prop_assert!(false, "{f:?} vs {o:?}"),
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn pair_parameters_stay_in_range(seed in any::<u64>()) {
        let s = random_scene(seed, &SceneSpec::small());
        let frame = FrameData { cloud: s.cloud, calib: s.calib, image: s.image };
        let pairing = run_pairing(&RunConfig::default(), &frame, Execution::Sequential).unwrap();
        for pair in &pairing.pairs {
            let [d, o, a, c] = pair.params.as_array();
            prop_assert!(d > 0.0 && d <= 1.0, "p_d {d}");
            prop_assert!((0.0..1.0).contains(&o), "p_o {o}");
            prop_assert!((0.0..=1.0).contains(&a), "p_a {a}");
            prop_assert!((0.0..=1.0).contains(&c), "p_c {c}");
        }
    }
}

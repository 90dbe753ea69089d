//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use vpf_core::config::RunConfig;
use vpf_core::pipeline::{load_frame, run_pairing};
use vpf_core::selftest::{self, Check};
use vpf_core::synthetic::{random_scene, write_frame, SceneSpec};
use vpf_core::Execution;

struct Outcome {
    id: u32,
    title: &'static str,
    checks: Vec<Check>,
    elapsed: Duration,
    budget: Option<Duration>,
}

impl Outcome {
    fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed) && self.budget.map_or(true, |b| self.elapsed < b)
    }
}

fn timed(id: u32, title: &'static str, budget: Option<f64>, f: impl FnOnce() -> Vec<Check>) -> Outcome {
    let start = Instant::now();
    let checks = f();
    Outcome {
        id,
        title,
        checks,
        elapsed: start.elapsed(),
        budget: budget.map(Duration::from_secs_f64),
    }
}

fn vpf(root: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_vpf"))
        .args(args)
        .arg("--root")
        .arg(root)
        .arg("--sequential")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).trim().to_string());
    }
    Ok(out.stdout)
}

fn large_scene_check() -> Vec<Check> {
    let dir = tempfile::tempdir().expect("tempdir");
    let scene = random_scene(2024, &SceneSpec::large());
    write_frame(dir.path(), "000000", &scene, &[]).expect("write frame");

    let cfg = RunConfig {
        data_root: dir.path().to_path_buf(),
        ..RunConfig::default()
    };
    let frame = load_frame(&cfg).expect("load");
    let pairing = run_pairing(&cfg, &frame, Execution::Sequential).expect("pairing");
    let voxels = pairing.grid.len();
    let size = Check {
        name: "large_scene_size",
        passed: frame.cloud.len() == 100_000 && voxels <= 5_500 && !pairing.pairs.is_empty(),
        detail: format!("{} points, {voxels} voxels, {} pairs", frame.cloud.len(), pairing.pairs.len()),
    };

    let mut times = Vec::new();
    let mut reports = Vec::new();
    let mut errors = Vec::new();
    for _ in 0..2 {
        let start = Instant::now();
        let mut report = Vec::new();
        for cmd in ["pair", "fuse"] {
            match vpf(dir.path(), &[cmd]) {
                Ok(out) => report.extend(out),
                Err(e) => errors.push(format!("{cmd}: {e}")),
            }
        }
        times.push(start.elapsed().as_secs_f64());
        reports.push(report);
    }
    let worst = times.iter().cloned().fold(0.0, f64::max);
    let run = Check {
        name: "pair_fuse_cli",
        passed: errors.is_empty() && reports[0] == reports[1] && worst < 5.0,
        detail: format!(
            "slowest pair+fuse {worst:.2}s single-threaded, reports identical: {}, {} bytes{}",
            reports[0] == reports[1],
            reports[0].len(),
            errors.first().map(|e| format!(", error: {e}")).unwrap_or_default()
        ),
    };
    vec![size, run]
}

fn main() {
    let outcomes = vec![
        timed(1, "mAP arithmetic", Some(1.0), || vec![selftest::check_map_arithmetic()]),
        timed(2, "gradient exactness", Some(10.0), || {
            vec![selftest::check_gradients(8, 16, &[1, 2, 3, 4, 5])]
        }),
        timed(3, "shape contract sweep", None, || {
            vec![selftest::check_shapes(&[1, 3, 8, 64], &[1, 4, 16, 64])]
        }),
        timed(4, "residual identity", None, || vec![selftest::check_residual_identity(100)]),
        timed(5, "occlusion oracle", None, || vec![selftest::check_occlusion(500, 20)]),
        timed(6, "AP@R40 oracle", None, || vec![selftest::check_ap(200), selftest::check_matching(200)]),
        timed(7, "parameter bounds", None, || vec![selftest::check_parameter_bounds(1000)]),
        timed(8, "geometry", None, || {
            vec![selftest::check_projection(1000), selftest::check_iou(1000)]
        }),
        timed(9, "pipeline determinism and scale", None, large_scene_check),
        timed(10, "round-trips", None, || vec![selftest::check_roundtrips(1000)]),
    ];

    let mut failed = 0;
    for o in &outcomes {
        let verdict = if o.passed() { "PASS" } else { "FAIL" };
        let budget = o.budget.map(|b| format!(" (budget {:.0}s)", b.as_secs_f64())).unwrap_or_default();
        println!("{verdict} criterion {:>2} {}: {:.2}s{budget}", o.id, o.title, o.elapsed.as_secs_f64());
        for c in &o.checks {
            println!("    {c}");
        }
        if !o.passed() {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

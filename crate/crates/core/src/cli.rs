//! The `vpf` command-line front end.
//!
//! Settings resolve in order: built-in defaults, `--config` file, `--set`
//! pairs, then dedicated flags. Reports are buffered and written only on
//! success. Failures print one line `error[<category>]: <message>` to stderr
//! and exit 2 (usage), 3 (data) or 4 (internal).

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::error::{Category, Error, Result};
use crate::evaluator::{evaluate, load_frames, Difficulty};
use crate::kitti_io::ObjectClass;
use crate::pipeline::{fused_digests, load_frame, load_labels, load_weights, read_text, run_fusion, run_pairing};
use crate::projector::feature_map_size;
use crate::selftest;
use crate::vpf_layer::{gradcheck_chain, VpfConfig};

const GRADCHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// Fixed-column text.
    Text,
    /// One `record=<kind> key=value ...` line per item.
    Records,
}

#[derive(Debug, Parser)]
#[command(name = "vpf", version, about = "Voxel-pixel fusion toolkit for KITTI-format data")]
struct Cli {
    /// Config file of `key = value` lines.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    /// Dataset root holding velodyne/, calib/, image_2/ and label_2/.
    #[arg(long, global = true, value_name = "DIR")]
    root: Option<PathBuf>,
    /// Frame name, e.g. 000000.
    #[arg(long, global = true)]
    frame: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct LayerArgs {
    /// LiDAR feature channels (C_v).
    #[arg(long)]
    cv: Option<usize>,
    /// Camera feature channels (C_p).
    #[arg(long)]
    cp: Option<usize>,
    /// Camera feature-map stride.
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, value_parser = ["adjoint", "center_cell"])]
    scatter: Option<String>,
    #[arg(long, value_parser = ["grid2x2", "center"])]
    sampling: Option<String>,
    /// Count occluders by containment alone.
    #[arg(long)]
    ignore_depth: bool,
    /// Weight file written by `VpfWeights::to_bytes`.
    #[arg(long, value_name = "FILE")]
    weights: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dump the parsed point cloud, calibration, image size and labels.
    Inspect,
    /// Emit the voxel-pixel pair table.
    Pair(LayerArgs),
    /// Pair, run the fusion layer and report residual statistics.
    Fuse(LayerArgs),
    /// Finite-difference check of the fusion chain's gradients.
    Gradcheck {
        /// LiDAR feature channels (C_v).
        #[arg(long)]
        cv: Option<usize>,
        /// Camera feature channels (C_p).
        #[arg(long)]
        cp: Option<usize>,
        /// Seed for the weights and random inputs under test.
        #[arg(long)]
        seed: Option<u64>,
        /// Central-difference step.
        #[arg(long)]
        eps: Option<f64>,
    },
    /// AP@R40 table and mAP over a directory of detection files.
    Eval {
        #[arg(long, value_name = "DIR")]
        dets: Option<PathBuf>,
        #[arg(long, value_name = "DIR")]
        labels: Option<PathBuf>,
    },
    /// Run the built-in oracle and property suites.
    Selftest,
}

fn exit_code(c: Category) -> i32 {
    match c {
        Category::Usage => 2,
        Category::Data => 3,
        Category::Internal => 4,
    }
}

/// Runs the CLI on `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = write!(stdout, "{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(stderr, "error[usage]: {first}");
            return 2;
        }
    };
    match execute(&cli) {
        Ok(report) => {
            let _ = stdout.write_all(report.as_bytes());
            0
        }
        Err(e) => {
            let category = e.category();
            let _ = writeln!(stderr, "error[{category}]: {}", e.to_string().replace('\n', " "));
            exit_code(category)
        }
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_text(&read_text(path)?)?;
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v)?;
    }
    if cli.sequential {
        cfg.parallel = false;
    }
    if let Some(root) = &cli.root {
        cfg.data_root = root.clone();
    }
    if let Some(frame) = &cli.frame {
        cfg.frame = frame.clone();
    }
    match &cli.command {
        Command::Pair(a) | Command::Fuse(a) => {
            cfg.c_v = a.cv.unwrap_or(cfg.c_v);
            cfg.c_p = a.cp.unwrap_or(cfg.c_p);
            cfg.stride = a.stride.unwrap_or(cfg.stride);
            if let Some(s) = &a.scatter {
                cfg.set("fusion.scatter", s)?;
            }
            if let Some(s) = &a.sampling {
                cfg.set("pairing.sampling", s)?;
            }
            cfg.occlusion_ignore_depth |= a.ignore_depth;
            if a.weights.is_some() {
                cfg.weights = a.weights.clone();
            }
        }
        Command::Gradcheck { cv, cp, seed, eps } => {
            cfg.c_v = cv.unwrap_or(cfg.c_v);
            cfg.c_p = cp.unwrap_or(cfg.c_p);
            cfg.seed_gradcheck = seed.unwrap_or(cfg.seed_gradcheck);
            cfg.gradcheck_eps = eps.unwrap_or(cfg.gradcheck_eps);
        }
        Command::Eval { dets, labels } => {
            if dets.is_some() {
                cfg.det_dir = dets.clone();
            }
            if labels.is_some() {
                cfg.label_dir = labels.clone();
            }
        }
        Command::Inspect | Command::Selftest => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Text or record output, chosen once per run.
struct Report {
    format: Format,
    buf: String,
}

fn quote(v: &str) -> String {
    if v.is_empty() || v.contains(|c: char| c.is_whitespace() || c == '"' || c == '=') {
        format!("{v:?}")
    } else {
        v.to_string()
    }
}

impl Report {
    fn new(format: Format, command: &str, cfg: &RunConfig) -> Self {
        let mut r = Report {
            format,
            buf: String::new(),
        };
        r.line(format!("vpf {command}"));
        r.record("command", &[("name", command.to_string())]);
        for (k, v) in cfg.entries() {
            r.line(format!("# {k} = {v}"));
            r.record("config", &[("key", k.to_string()), ("value", v)]);
        }
        r
    }

    fn line(&mut self, s: impl AsRef<str>) {
        if self.format == Format::Text {
            self.buf.push_str(s.as_ref());
            self.buf.push('\n');
        }
    }

    fn record(&mut self, kind: &str, fields: &[(&str, String)]) {
        if self.format == Format::Records {
            let _ = write!(self.buf, "record={kind}");
            for (k, v) in fields {
                let _ = write!(self.buf, " {k}={}", quote(v));
            }
            self.buf.push('\n');
        }
    }
}

fn execute(cli: &Cli) -> Result<String> {
    let cfg = resolve_config(cli)?;
    match &cli.command {
        Command::Inspect => inspect(&cfg, cli.format),
        Command::Pair(_) => pair(&cfg, cli.format),
        Command::Fuse(_) => fuse(&cfg, cli.format),
        Command::Gradcheck { .. } => gradcheck(&cfg, cli.format),
        Command::Eval { .. } => eval(&cfg, cli.format),
        Command::Selftest => run_selftest(&cfg, cli.format),
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

fn inspect(cfg: &RunConfig, format: Format) -> Result<String> {
    let frame = load_frame(cfg)?;
    let labels = load_labels(cfg)?;
    let pairing = run_pairing(cfg, &frame, cfg.execution())?;
    let (fw, fh) = feature_map_size((frame.image.width, frame.image.height), cfg.stride);
    let mut r = Report::new(format, "inspect", cfg);
    r.line(format!("frame            {}", cfg.frame));
    r.line(format!("points           {}", frame.cloud.len()));
    r.line(format!("points_in_grid   {}", pairing.grid.in_range_points()));
    r.line(format!("voxels           {}", pairing.grid.len()));
    r.line(format!("image            {} x {}", frame.image.width, frame.image.height));
    r.line(format!("feature_map      {fw} x {fh} x {} (stride {})", cfg.c_p, cfg.stride));
    r.record(
        "frame",
        &[
            ("name", cfg.frame.clone()),
            ("points", frame.cloud.len().to_string()),
            ("points_in_grid", pairing.grid.in_range_points().to_string()),
            ("voxels", pairing.grid.len().to_string()),
            ("image_width", frame.image.width.to_string()),
            ("image_height", frame.image.height.to_string()),
            ("map_width", fw.to_string()),
            ("map_height", fh.to_string()),
        ],
    );
    let c = &frame.calib;
    let matrices: [(&str, Vec<f64>); 3] = [
        ("P2", c.p2.iter().flatten().copied().collect()),
        ("R0_rect", c.r0_rect.iter().flatten().copied().collect()),
        ("Tr_velo_to_cam", c.tr_velo_to_cam.iter().flatten().copied().collect()),
    ];
    for (name, values) in &matrices {
        let shown: Vec<String> = values.iter().map(|v| format!("{v:.6}")).collect();
        r.line(format!("{name:<16} {}", shown.join(" ")));
        r.record("calib", &[("matrix", name.to_string()), ("values", join(values))]);
    }
    r.line(format!("labels           {}", labels.len()));
    for (n, l) in labels.iter().enumerate() {
        r.line(format!(
            "  {:<12} trunc {:.2} occ {} bbox [{:.2} {:.2} {:.2} {:.2}] hwl [{:.2} {:.2} {:.2}] xyz [{:.2} {:.2} {:.2}] ry {:.2}",
            l.class.name(),
            l.truncation,
            l.occlusion,
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
            l.rotation_y
        ));
        r.record(
            "label",
            &[
                ("index", n.to_string()),
                ("class", l.class.name().to_string()),
                ("truncation", l.truncation.to_string()),
                ("occlusion", l.occlusion.to_string()),
                ("bbox", join(&l.bbox2d)),
                ("dims", join(&l.dims)),
                ("location", join(&l.location)),
                ("rotation_y", l.rotation_y.to_string()),
            ],
        );
    }
    Ok(r.buf)
}

fn pair(cfg: &RunConfig, format: Format) -> Result<String> {
    let frame = load_frame(cfg)?;
    let p = run_pairing(cfg, &frame, cfg.execution())?;
    let mut r = Report::new(format, "pair", cfg);
    r.line(format!("voxels {}  pairs {}", p.grid.len(), p.pairs.len()));
    r.record(
        "summary",
        &[("voxels", p.grid.len().to_string()), ("pairs", p.pairs.len().to_string())],
    );
    r.line(format!(
        "{:>5} {:>5} {:>5} {:>10} {:>10} {:>10} {:>10} {:>10} {:>6} {:>5} {:>8} {:>8} {:>10} {:>8}",
        "i", "j", "k", "u_min", "v_min", "u_max", "v_max", "depth", "points", "occl", "p_d", "p_o", "p_a", "p_c"
    ));
    for pair in &p.pairs {
        let [i, j, k] = pair.voxel_index.0;
        let roi = &pair.roi;
        let q = pair.params;
        r.line(format!(
            "{i:>5} {j:>5} {k:>5} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>6} {:>5} {:>8.6} {:>8.6} {:>10.3e} {:>8.6}",
            roi.u_min,
            roi.v_min,
            roi.u_max,
            roi.v_max,
            roi.depth,
            pair.point_count,
            pair.occluder_count,
            q.density,
            q.occlusion,
            q.area,
            q.contrast
        ));
        r.record(
            "pair",
            &[
                ("i", i.to_string()),
                ("j", j.to_string()),
                ("k", k.to_string()),
                ("u_min", roi.u_min.to_string()),
                ("v_min", roi.v_min.to_string()),
                ("u_max", roi.u_max.to_string()),
                ("v_max", roi.v_max.to_string()),
                ("depth", roi.depth.to_string()),
                ("points", pair.point_count.to_string()),
                ("occluders", pair.occluder_count.to_string()),
                ("p_d", q.density.to_string()),
                ("p_o", q.occlusion.to_string()),
                ("p_a", q.area.to_string()),
                ("p_c", q.contrast.to_string()),
            ],
        );
    }
    Ok(r.buf)
}

fn fuse(cfg: &RunConfig, format: Format) -> Result<String> {
    let exec = cfg.execution();
    let frame = load_frame(cfg)?;
    let weights = load_weights(cfg)?;
    let p = run_pairing(cfg, &frame, exec)?;
    let out = run_fusion(cfg, &p, &weights, exec)?;
    let s = out.stats;
    let (lidar_digest, camera_digest) = fused_digests(&out);
    let mut r = Report::new(format, "fuse", cfg);
    let rows: [(&str, String, String); 10] = [
        ("voxels", p.grid.len().to_string(), p.grid.len().to_string()),
        ("pairs", s.pairs.to_string(), s.pairs.to_string()),
        ("modified_voxels", s.modified_voxels.to_string(), s.modified_voxels.to_string()),
        ("modified_cells", s.modified_cells.to_string(), s.modified_cells.to_string()),
        (
            "camera_cells",
            (p.camera_map.width * p.camera_map.height).to_string(),
            (p.camera_map.width * p.camera_map.height).to_string(),
        ),
        ("voxel_residual_norm", format!("{:.9e}", s.voxel_residual_norm), s.voxel_residual_norm.to_string()),
        ("pixel_residual_norm", format!("{:.9e}", s.pixel_residual_norm), s.pixel_residual_norm.to_string()),
        ("camera_delta_norm", format!("{:.9e}", s.camera_delta_norm), s.camera_delta_norm.to_string()),
        ("lidar_digest", format!("{lidar_digest:016x}"), format!("{lidar_digest:016x}")),
        ("camera_digest", format!("{camera_digest:016x}"), format!("{camera_digest:016x}")),
    ];
    for (k, text, _) in &rows {
        r.line(format!("{k:<20} {text}"));
    }
    let fields: Vec<(&str, String)> = rows.iter().map(|(k, _, v)| (*k, v.clone())).collect();
    r.record("fuse", &fields);
    Ok(r.buf)
}

fn gradcheck(cfg: &RunConfig, format: Format) -> Result<String> {
    let vc = VpfConfig {
        m_depth: cfg.m_depth,
        net_depth: cfg.net_depth,
        ..VpfConfig::new(cfg.c_v, cfg.c_p, cfg.seed_gradcheck)
    };
    vc.validate()?;
    let res = gradcheck_chain(&vc, cfg.gradcheck_eps)?;
    let mut r = Report::new(format, "gradcheck", cfg);
    r.line(format!("{:<10} {:>8} {:>14} {:>8}", "group", "size", "max_rel_error", "worst"));
    for g in &res.groups {
        r.line(format!(
            "{:<10} {:>8} {:>14.3e} {:>8}",
            g.name, g.size, g.report.max_rel_error, g.report.worst_index
        ));
        r.record(
            "group",
            &[
                ("name", g.name.clone()),
                ("size", g.size.to_string()),
                ("max_rel_error", g.report.max_rel_error.to_string()),
                ("worst_index", g.report.worst_index.to_string()),
            ],
        );
    }
    let passed = res.max_rel_error < GRADCHECK_TOLERANCE;
    r.line(format!("loss             {:.12e}", res.loss));
    r.line(format!("max_rel_error    {:.3e}", res.max_rel_error));
    r.line(format!("negative_control {:.3e}", res.negative_control));
    r.line(format!("tolerance        {GRADCHECK_TOLERANCE:e}"));
    r.line(format!("result           {}", if passed { "pass" } else { "fail" }));
    r.record(
        "gradcheck",
        &[
            ("loss", res.loss.to_string()),
            ("max_rel_error", res.max_rel_error.to_string()),
            ("negative_control", res.negative_control.to_string()),
            ("tolerance", GRADCHECK_TOLERANCE.to_string()),
            ("passed", passed.to_string()),
        ],
    );
    if !passed {
        return Err(Error::Invariant(format!(
            "gradient check failed: max relative error {:.3e} >= {GRADCHECK_TOLERANCE:e}",
            res.max_rel_error
        )));
    }
    Ok(r.buf)
}

fn eval(cfg: &RunConfig, format: Format) -> Result<String> {
    let det_dir = cfg
        .det_dir
        .clone()
        .ok_or_else(|| Error::Config("no detection directory: pass --dets or set eval.det_dir".into()))?;
    let frames = load_frames(&det_dir, &cfg.label_dir())?;
    let rep = evaluate(&frames, &cfg.iou, cfg.execution())?;
    let mut r = Report::new(format, "eval", cfg);
    r.line(format!("frames {}", rep.frames));
    r.line(rep.table.to_string().trim_end());
    r.line(format!("{:<22}{:>6}{:>6}{:>6}", "cell", "tp", "fp", "gt"));
    for (c, class) in ObjectClass::EVALUATED.iter().enumerate() {
        for (d, diff) in Difficulty::ALL.iter().enumerate() {
            let (tp, fp, gt) = rep.counts[c][d];
            let ap = rep.table.entries[c][d];
            r.line(format!("{:<22}{tp:>6}{fp:>6}{gt:>6}", format!("{}/{}", class.name(), diff.name())));
            r.record(
                "ap",
                &[
                    ("class", class.name().to_string()),
                    ("difficulty", diff.name().to_string()),
                    ("ap", ap.map_or("n/a".into(), |v| v.to_string())),
                    ("tp", tp.to_string()),
                    ("fp", fp.to_string()),
                    ("gt", gt.to_string()),
                ],
            );
        }
    }
    match rep.map {
        Some(m) => r.line(format!("mAP {m:.2}")),
        None => r.line("mAP n/a (some cells have no eligible ground truth)"),
    }
    r.record(
        "map",
        &[
            ("frames", rep.frames.to_string()),
            ("value", rep.map.map_or("n/a".into(), |v| v.to_string())),
        ],
    );
    Ok(r.buf)
}

fn run_selftest(cfg: &RunConfig, format: Format) -> Result<String> {
    let checks = selftest::run_all();
    let mut r = Report::new(format, "selftest", cfg);
    for c in &checks {
        r.line(c.to_string());
        r.record(
            "check",
            &[("name", c.name.to_string()), ("passed", c.passed.to_string()), ("detail", c.detail.clone())],
        );
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
    if !failed.is_empty() {
        return Err(Error::Invariant(format!("selftest failed: {}", failed.join(", "))));
    }
    Ok(r.buf)
}

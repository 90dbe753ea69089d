//! KITTI-style 3D detection evaluation.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kitti_io::{parse_labels, DetectionBox, GroundTruthBox, ObjectClass, ObjectLabel};
use crate::par::Execution;

/// Number of recall positions in AP@R40.
pub const RECALL_POSITIONS: usize = 40;

/// Oriented 3D box in the rectified camera frame: bottom-center location,
/// `(h, w, l)` and yaw about the vertical (y) axis. `y` grows downward, so the
/// box spans `[y - h, y]` vertically.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Box3d {
    pub location: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl Box3d {
    pub fn new(location: [f64; 3], dims: [f64; 3], yaw: f64) -> Result<Self> {
        if !dims.iter().all(|d| *d > 0.0 && d.is_finite()) || !location.iter().all(|v| v.is_finite()) || !yaw.is_finite()
        {
            return Err(Error::InvalidBox(format!("dims {dims:?} at {location:?}")));
        }
        Ok(Box3d { location, dims, yaw })
    }

    pub fn from_label(label: &ObjectLabel) -> Result<Self> {
        Box3d::new(label.location, label.dims, label.rotation_y)
    }

    pub fn volume(&self) -> f64 {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Footprint corners in the `(x, z)` plane, counter-clockwise.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let [_, w, l] = self.dims;
        let (s, c) = self.yaw.sin_cos();
        let (cx, cz) = (self.location[0], self.location[2]);
        let local = [[l, w], [l, -w], [-l, -w], [-l, w]].map(|[a, b]| [0.5 * a, 0.5 * b]);
        let mut pts = local.map(|[lx, lz]| [cx + c * lx + s * lz, cz - s * lx + c * lz]);
        if signed_area(&pts) < 0.0 {
            pts.reverse();
        }
        pts
    }

    /// `(top, bottom)` along y.
    fn vertical_span(&self) -> (f64, f64) {
        (self.location[1] - self.dims[0], self.location[1])
    }
}

fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - a[1] * b[0]
        })
        .sum::<f64>()
}

pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    signed_area(poly).abs()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland-Hodgman: clips `subject` by the convex counter-clockwise `clip`.
pub fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let (dc, dp) = (cross(a, b, cur), cross(a, b, prev));
            if dc >= 0.0 {
                if dp < 0.0 {
                    out.push(intersect(prev, cur, dp, dc));
                }
                out.push(cur);
            } else if dp >= 0.0 {
                out.push(intersect(prev, cur, dp, dc));
            }
        }
    }
    out
}

fn intersect(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Intersection over union of two oriented boxes: footprint intersection
/// times vertical overlap, over the union of volumes.
pub fn oriented_iou_3d(a: &Box3d, b: &Box3d) -> Result<f64> {
    for bx in [a, b] {
        if !bx.dims.iter().all(|d| *d > 0.0) {
            return Err(Error::InvalidBox(format!("non-positive dims {:?}", bx.dims)));
        }
    }
    let (at, ab) = a.vertical_span();
    let (bt, bb) = b.vertical_span();
    let dy = ab.min(bb) - at.max(bt);
    if dy <= 0.0 {
        return Ok(0.0);
    }
    let inter_area = polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners()));
    let inter = inter_area * dy;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "Easy",
            Difficulty::Moderate => "Moderate",
            Difficulty::Hard => "Hard",
        }
    }

    pub fn min_height(self) -> f64 {
        match self {
            Difficulty::Easy => 40.0,
            _ => 25.0,
        }
    }

    pub fn max_occlusion(self) -> i32 {
        match self {
            Difficulty::Easy => 0,
            Difficulty::Moderate => 1,
            Difficulty::Hard => 2,
        }
    }

    pub fn max_truncation(self) -> f64 {
        match self {
            Difficulty::Easy => 0.15,
            Difficulty::Moderate => 0.30,
            Difficulty::Hard => 0.50,
        }
    }

    pub fn admits(self, gt: &GroundTruthBox) -> bool {
        gt.bbox_height() >= self.min_height()
            && gt.occlusion <= self.max_occlusion()
            && gt.truncation <= self.max_truncation()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouThresholds {
    pub car: f64,
    pub pedestrian: f64,
    pub cyclist: f64,
}

impl Default for IouThresholds {
    fn default() -> Self {
        IouThresholds {
            car: 0.7,
            pedestrian: 0.5,
            cyclist: 0.5,
        }
    }
}

impl IouThresholds {
    pub fn get(&self, class: &ObjectClass) -> f64 {
        match class {
            ObjectClass::Car => self.car,
            ObjectClass::Pedestrian => self.pedestrian,
            _ => self.cyclist,
        }
    }
}

/// Outcome of matching one frame for one class and difficulty.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchResult {
    /// Scores of the counted detections, descending.
    pub scores: Vec<f64>,
    /// True-positive flag aligned with `scores`.
    pub tp: Vec<bool>,
    /// Eligible ground truth left unmatched.
    pub fn_count: usize,
    /// Number of eligible ground truth boxes.
    pub n_gt: usize,
    /// Detections that count as neither TP nor FP.
    pub ignored: usize,
}

impl MatchResult {
    pub fn tp_count(&self) -> usize {
        self.tp.iter().filter(|t| **t).count()
    }

    pub fn fp_count(&self) -> usize {
        self.tp.len() - self.tp_count()
    }
}

fn overlap_fraction_2d(det: &[f64; 4], region: &[f64; 4]) -> f64 {
    let w = det[2].min(region[2]) - det[0].max(region[0]);
    let h = det[3].min(region[3]) - det[1].max(region[1]);
    let area = (det[2] - det[0]) * (det[3] - det[1]);
    if w <= 0.0 || h <= 0.0 || area <= 0.0 {
        return 0.0;
    }
    w * h / area
}

/// Stable descending-score order of the detections of `class`.
pub fn sorted_by_score<'a>(dets: &'a [DetectionBox], class: &ObjectClass) -> Vec<&'a DetectionBox> {
    let mut out: Vec<&DetectionBox> = dets.iter().filter(|d| d.class == *class).collect();
    out.sort_by(|a, b| score_of(b).total_cmp(&score_of(a)));
    out
}

fn score_of(d: &DetectionBox) -> f64 {
    d.score.unwrap_or(1.0)
}

/// Greedy score-ordered matching. Each detection takes the unmatched
/// eligible ground truth of its class with the highest IoU at or above the
/// threshold. Detections that instead reach an ineligible ground truth of the
/// class, fall mostly inside a `DontCare` region, or are shorter than the
/// difficulty's minimum height are ignored.
pub fn match_detections(
    dets: &[DetectionBox],
    gts: &[GroundTruthBox],
    class: &ObjectClass,
    iou_threshold: f64,
    difficulty: Difficulty,
) -> Result<MatchResult> {
    let order = sorted_by_score(dets, class);
    let mut eligible = Vec::new();
    let mut ineligible = Vec::new();
    let mut dont_care = Vec::new();
    for g in gts {
        if g.class.is_dont_care() {
            dont_care.push(g.bbox2d);
        } else if g.class == *class {
            let b = Box3d::from_label(g)?;
            if difficulty.admits(g) {
                eligible.push(b);
            } else {
                ineligible.push(b);
            }
        }
    }
    let mut taken = vec![false; eligible.len()];
    let mut taken_ignored = vec![false; ineligible.len()];
    let mut res = MatchResult {
        n_gt: eligible.len(),
        ..MatchResult::default()
    };
    for det in order {
        let db = Box3d::from_label(det)?;
        let mut best: Option<(usize, f64)> = None;
        for (k, g) in eligible.iter().enumerate() {
            if taken[k] {
                continue;
            }
            let iou = oriented_iou_3d(&db, g)?;
            if iou >= iou_threshold && best.is_none_or(|(_, b)| iou > b) {
                best = Some((k, iou));
            }
        }
        if let Some((k, _)) = best {
            taken[k] = true;
            res.scores.push(score_of(det));
            res.tp.push(true);
            continue;
        }
        let mut soaked = false;
        for (k, g) in ineligible.iter().enumerate() {
            if !taken_ignored[k] && oriented_iou_3d(&db, g)? >= iou_threshold {
                taken_ignored[k] = true;
                soaked = true;
                break;
            }
        }
        let in_dont_care = dont_care.iter().any(|r| overlap_fraction_2d(&det.bbox2d, r) >= 0.5);
        if soaked || in_dont_care || det.bbox_height() < difficulty.min_height() {
            res.ignored += 1;
            continue;
        }
        res.scores.push(score_of(det));
        res.tp.push(false);
    }
    res.fn_count = taken.iter().filter(|t| !**t).count();
    Ok(res)
}

/// AP over 40 recall positions from `(score, is_tp)` pairs, in percent.
/// Thresholds sweep the distinct scores; tied detections enter together.
pub fn average_precision_r40(flags: &[(f64, bool)], n_gt: usize) -> Result<f64> {
    if n_gt == 0 {
        return Err(Error::UndefinedAp);
    }
    let mut sorted = flags.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    // (tp, total) at the end of each group of equal scores
    let mut points: Vec<(usize, usize)> = Vec::new();
    let mut tp = 0;
    for (i, &(score, hit)) in sorted.iter().enumerate() {
        tp += usize::from(hit);
        if sorted.get(i + 1).is_none_or(|next| next.0 != score) {
            points.push((tp, i + 1));
        }
    }
    // best precision among thresholds reaching each recall, swept from the
    // high-recall end
    let mut best = vec![0.0f64; RECALL_POSITIONS + 1];
    for &(tp, total) in &points {
        let precision = tp as f64 / total as f64;
        let reach = (tp * RECALL_POSITIONS / n_gt).min(RECALL_POSITIONS);
        best[reach] = best[reach].max(precision);
    }
    for i in (0..RECALL_POSITIONS).rev() {
        best[i] = best[i].max(best[i + 1]);
    }
    let sum: f64 = best[1..].iter().sum();
    Ok(100.0 * sum / RECALL_POSITIONS as f64)
}

/// AP in percent for each evaluated class and difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ApTable {
    /// `[class][difficulty]`, classes in `ObjectClass::EVALUATED` order.
    pub entries: [[Option<f64>; 3]; 3],
}

fn class_index(class: &ObjectClass) -> Option<usize> {
    ObjectClass::EVALUATED.iter().position(|c| c == class)
}

impl ApTable {
    /// Builds a complete table from nine values in row order
    /// (class-major, Easy/Moderate/Hard).
    pub fn from_values(values: [f64; 9]) -> Self {
        let mut t = ApTable::default();
        for (i, v) in values.into_iter().enumerate() {
            t.entries[i / 3][i % 3] = Some(v);
        }
        t
    }

    pub fn get(&self, class: &ObjectClass, difficulty: Difficulty) -> Option<f64> {
        class_index(class).and_then(|c| self.entries[c][difficulty as usize])
    }

    pub fn set(&mut self, class: &ObjectClass, difficulty: Difficulty, ap: Option<f64>) {
        if let Some(c) = class_index(class) {
            self.entries[c][difficulty as usize] = ap;
        }
    }
}

/// Unweighted mean of all nine entries.
pub fn mean_average_precision(table: &ApTable) -> Result<f64> {
    let mut sum = 0.0;
    for (c, row) in table.entries.iter().enumerate() {
        for (d, entry) in row.iter().enumerate() {
            let v = entry.ok_or_else(|| {
                Error::IncompleteTable(format!(
                    "{} {}",
                    ObjectClass::EVALUATED[c].name(),
                    Difficulty::ALL[d].name()
                ))
            })?;
            sum += v;
        }
    }
    Ok(sum / 9.0)
}

/// Ground truth and detections of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    pub gts: Vec<GroundTruthBox>,
    pub dets: Vec<DetectionBox>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub frames: usize,
    pub table: ApTable,
    /// Per cell: `(tp, fp, eligible gt)`.
    pub counts: [[(usize, usize, usize); 3]; 3],
    /// `None` when some cell has no eligible ground truth.
    pub map: Option<f64>,
}

/// Pools matches over all frames per class and difficulty. Cells without
/// eligible ground truth are left empty.
pub fn evaluate(frames: &[Frame], thresholds: &IouThresholds, exec: Execution) -> Result<EvalReport> {
    let cells: Vec<(usize, usize)> = (0..3).flat_map(|c| (0..3).map(move |d| (c, d))).collect();
    let results = exec.try_map(&cells, |&(c, d)| -> Result<(Option<f64>, (usize, usize, usize))> {
        let class = &ObjectClass::EVALUATED[c];
        let difficulty = Difficulty::ALL[d];
        let mut flags = Vec::new();
        let mut n_gt = 0;
        for f in frames {
            let m = match_detections(&f.dets, &f.gts, class, thresholds.get(class), difficulty)?;
            n_gt += m.n_gt;
            flags.extend(m.scores.iter().copied().zip(m.tp.iter().copied()));
        }
        let tp = flags.iter().filter(|f| f.1).count();
        let counts = (tp, flags.len() - tp, n_gt);
        match average_precision_r40(&flags, n_gt) {
            Ok(ap) => Ok((Some(ap), counts)),
            Err(Error::UndefinedAp) => Ok((None, counts)),
            Err(e) => Err(e),
        }
    })?;
    let mut table = ApTable::default();
    let mut counts = [[(0, 0, 0); 3]; 3];
    for (&(c, d), (ap, n)) in cells.iter().zip(results) {
        table.entries[c][d] = ap;
        counts[c][d] = n;
    }
    Ok(EvalReport {
        frames: frames.len(),
        map: mean_average_precision(&table).ok(),
        table,
        counts,
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Loads every `*.txt` label file in `label_dir` with the detection file of
/// the same name from `det_dir` (absent file: no detections). Detection lines
/// without a score count as score 1.0.
pub fn load_frames(det_dir: &Path, label_dir: &Path) -> Result<Vec<Frame>> {
    let mut names: Vec<String> = std::fs::read_dir(label_dir)
        .map_err(|e| Error::io(label_dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".txt"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::not_found("label files", label_dir.display().to_string()));
    }
    names
        .into_iter()
        .map(|name| {
            let gts = parse_labels(&read_text(&label_dir.join(&name))?)?;
            let det_path = det_dir.join(&name);
            let dets = if det_path.exists() {
                parse_labels(&read_text(&det_path)?)?
                    .into_iter()
                    .filter(|d| !d.class.is_dont_care())
                    .map(|mut d| {
                        d.score.get_or_insert(1.0);
                        d
                    })
                    .collect()
            } else {
                Vec::new()
            };
            Ok(Frame { name, gts, dets })
        })
        .collect()
}

impl fmt::Display for ApTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12}{:>10}{:>10}{:>10}", "class", "Easy", "Moderate", "Hard")?;
        for (c, row) in self.entries.iter().enumerate() {
            write!(f, "{:<12}", ObjectClass::EVALUATED[c].name())?;
            for e in row {
                match e {
                    Some(v) => write!(f, "{v:>10.2}")?,
                    None => write!(f, "{:>10}", "n/a")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    fn bx(x: f64, y: f64, z: f64, h: f64, w: f64, l: f64, yaw: f64) -> Box3d {
        Box3d::new([x, y, z], [h, w, l], yaw).unwrap()
    }

    fn label(class: ObjectClass, b: Box3d, bbox2d: [f64; 4], score: Option<f64>) -> ObjectLabel {
        ObjectLabel {
            class,
            truncation: 0.0,
            occlusion: 0,
            alpha: 0.0,
            bbox2d,
            dims: b.dims,
            location: b.location,
            rotation_y: b.yaw,
            score,
        }
    }

    #[test]
    fn iou_closed_forms() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert!((oriented_iou_3d(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let half = bx(0.5, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert!((oriented_iou_3d(&a, &half).unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let far = bx(5.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.3);
        assert_eq!(oriented_iou_3d(&a, &far).unwrap(), 0.0);
        let above = bx(0.0, -1.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        assert_eq!(oriented_iou_3d(&a, &above).unwrap(), 0.0);
        // a quarter turn of a square is the same square
        let turned = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, std::f64::consts::FRAC_PI_2);
        assert!((oriented_iou_3d(&a, &turned).unwrap() - 1.0).abs() < 1e-12);
        // 45 degree turn of a unit square: octagon of area 2(sqrt2 - 1)
        let diag = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, std::f64::consts::FRAC_PI_4);
        let oct = 2.0 * (2f64.sqrt() - 1.0);
        assert!((oriented_iou_3d(&a, &diag).unwrap() - oct / (2.0 - oct)).abs() < 1e-12);
    }

    #[test]
    fn iou_rejects_bad_dims() {
        let a = bx(0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0);
        let bad = Box3d {
            location: [0.0; 3],
            dims: [1.0, 0.0, 1.0],
            yaw: 0.0,
        };
        assert!(matches!(oriented_iou_3d(&a, &bad), Err(Error::InvalidBox(_))));
        assert!(Box3d::new([0.0; 3], [-1.0, 1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn clip_area_bounded() {
        let mut rng = SeededRng::new(4);
        for _ in 0..300 {
            let a = bx(rng.uniform(-2.0, 2.0), 0.0, rng.uniform(-2.0, 2.0), 1.0, rng.uniform(0.2, 3.0), rng.uniform(0.2, 5.0), rng.uniform(-3.0, 3.0));
            let b = bx(rng.uniform(-2.0, 2.0), 0.0, rng.uniform(-2.0, 2.0), 1.0, rng.uniform(0.2, 3.0), rng.uniform(0.2, 5.0), rng.uniform(-3.0, 3.0));
            let area = polygon_area(&clip_convex(&a.bev_corners(), &b.bev_corners()));
            let cap = (a.dims[1] * a.dims[2]).min(b.dims[1] * b.dims[2]);
            assert!(area <= cap * (1.0 + 1e-12) + 1e-12);
            assert!(area >= 0.0);
        }
    }

    #[test]
    fn difficulty_rules() {
        let b = bx(0.0, 1.0, 10.0, 1.5, 1.6, 3.9, 0.0);
        let mut g = label(ObjectClass::Car, b, [0.0, 0.0, 50.0, 45.0], None);
        assert!(Difficulty::Easy.admits(&g));
        g.bbox2d[3] = 30.0;
        assert!(!Difficulty::Easy.admits(&g) && Difficulty::Moderate.admits(&g));
        g.occlusion = 2;
        assert!(!Difficulty::Moderate.admits(&g) && Difficulty::Hard.admits(&g));
        g.truncation = 0.6;
        assert!(!Difficulty::Hard.admits(&g));
    }

    #[test]
    fn matching_basics() {
        let b = bx(0.0, 1.0, 10.0, 1.5, 1.6, 3.9, 0.0);
        let gt = label(ObjectClass::Car, b, [0.0, 0.0, 50.0, 60.0], None);
        let det = label(ObjectClass::Car, b, [0.0, 0.0, 50.0, 60.0], Some(0.9));
        let m = match_detections(&[det.clone()], &[gt.clone()], &ObjectClass::Car, 0.7, Difficulty::Easy).unwrap();
        assert_eq!((m.tp_count(), m.fp_count(), m.fn_count), (1, 0, 0));

        let none = match_detections(&[], &[gt.clone(), gt.clone()], &ObjectClass::Car, 0.7, Difficulty::Easy).unwrap();
        assert_eq!((none.tp_count(), none.fn_count, none.n_gt), (0, 2, 2));

        // duplicate detection is a false positive
        let mut dup = det.clone();
        dup.score = Some(0.5);
        let m = match_detections(&[dup, det.clone()], &[gt.clone()], &ObjectClass::Car, 0.7, Difficulty::Easy).unwrap();
        assert_eq!(m.tp, vec![true, false]);
        assert_eq!(m.scores, vec![0.9, 0.5]);
    }

    #[test]
    fn matching_ignores() {
        let b = bx(0.0, 1.0, 10.0, 1.5, 1.6, 3.9, 0.0);
        let mut hard = label(ObjectClass::Car, b, [0.0, 0.0, 50.0, 60.0], None);
        hard.occlusion = 2;
        let det = label(ObjectClass::Car, b, [0.0, 0.0, 50.0, 60.0], Some(0.9));
        let m = match_detections(&[det.clone()], &[hard], &ObjectClass::Car, 0.7, Difficulty::Easy).unwrap();
        assert_eq!((m.tp.len(), m.ignored, m.n_gt), (0, 1, 0));

        let mut dc = label(ObjectClass::parse("DontCare"), b, [0.0, 0.0, 60.0, 70.0], None);
        dc.dims = [-1.0; 3];
        let stray = label(ObjectClass::Car, bx(30.0, 1.0, 10.0, 1.5, 1.6, 3.9, 0.0), [5.0, 5.0, 50.0, 60.0], Some(0.3));
        let m = match_detections(&[stray.clone()], &[dc], &ObjectClass::Car, 0.7, Difficulty::Easy).unwrap();
        assert_eq!((m.tp.len(), m.ignored), (0, 1));

        let mut short = stray;
        short.bbox2d = [100.0, 100.0, 120.0, 120.0];
        let m = match_detections(&[short], &[], &ObjectClass::Car, 0.7, Difficulty::Moderate).unwrap();
        assert_eq!((m.tp.len(), m.ignored), (0, 1));
    }

    #[test]
    fn ap_closed_forms() {
        assert_eq!(average_precision_r40(&[(0.9, true), (0.8, true)], 2).unwrap(), 100.0);
        assert_eq!(average_precision_r40(&[(0.9, false), (0.8, false)], 2).unwrap(), 0.0);
        assert_eq!(average_precision_r40(&[], 3).unwrap(), 0.0);
        assert!(matches!(average_precision_r40(&[(0.9, true)], 0), Err(Error::UndefinedAp)));
        // one of two found: recall 0.5 at precision 1 covers 20 of 40 levels
        assert_eq!(average_precision_r40(&[(0.9, true)], 2).unwrap(), 50.0);
        // FP first: precision 1/2 at full recall
        assert_eq!(average_precision_r40(&[(0.9, false), (0.8, true)], 1).unwrap(), 50.0);
        // tie between a TP and an FP enters together
        assert_eq!(average_precision_r40(&[(0.5, true), (0.5, false)], 1).unwrap(), 50.0);
    }

    #[test]
    fn map_arithmetic() {
        let vpf = ApTable::from_values([88.51, 80.97, 76.74, 54.65, 48.36, 44.98, 77.64, 64.10, 58.00]);
        assert!((mean_average_precision(&vpf).unwrap() - 65.99).abs() < 0.005);
        let flat = ApTable::from_values([42.0; 9]);
        assert!((mean_average_precision(&flat).unwrap() - 42.0).abs() < 1e-12);
        let mut missing = vpf;
        missing.set(&ObjectClass::Cyclist, Difficulty::Hard, None);
        assert!(matches!(mean_average_precision(&missing), Err(Error::IncompleteTable(_))));
    }
}

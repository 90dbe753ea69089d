//! Readers and writers for the KITTI object-detection file formats:
//! velodyne scans, calibration text, label/detection text and camera images.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f32,
    pub y: f32,
    pub z: f32,
    pub intensity: f32,
}

impl Point {
    pub fn new(x: f32, y: f32, z: f32, intensity: f32) -> Self {
        Point { x, y, z, intensity }
    }

    pub fn xyz(&self) -> [f64; 3] {
        [f64::from(self.x), f64::from(self.y), f64::from(self.z)]
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite() && self.intensity.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

const POINT_BYTES: usize = 16;

/// Decodes a velodyne scan: headerless little-endian `f32` quadruples.
pub fn parse_point_cloud(raw: &[u8]) -> Result<PointCloud> {
    if raw.len() % POINT_BYTES != 0 {
        let offset = raw.len() - raw.len() % POINT_BYTES;
        return Err(Error::malformed(
            "point cloud",
            format!("{} trailing bytes at offset {offset}", raw.len() - offset),
        ));
    }
    let f = |b: &[u8]| f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
    let points = raw
        .chunks_exact(POINT_BYTES)
        .map(|c| Point::new(f(&c[0..4]), f(&c[4..8]), f(&c[8..12]), f(&c[12..16])))
        .collect();
    Ok(PointCloud { points })
}

pub fn write_point_cloud(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * POINT_BYTES);
    for p in &cloud.points {
        for v in [p.x, p.y, p.z, p.intensity] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Camera projection `P2`, rectification `R0_rect` and the LiDAR-to-camera
/// rigid transform `Tr_velo_to_cam`, all row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    pub p2: [[f64; 4]; 3],
    pub r0_rect: [[f64; 3]; 3],
    pub tr_velo_to_cam: [[f64; 4]; 3],
}

impl CalibrationSet {
    /// `P2 = [I|0]`, `R0 = I`, `Tr = [I|0]`.
    pub fn identity() -> Self {
        let id34 = [[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]];
        CalibrationSet {
            p2: id34,
            r0_rect: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            tr_velo_to_cam: id34,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |rows: &[&[f64]]| rows.iter().all(|r| r.iter().all(|v| v.is_finite()));
        if !finite(&[&self.p2[0], &self.p2[1], &self.p2[2]]) {
            return Err(Error::malformed("calibration", "P2 has non-finite entries"));
        }
        if !finite(&[&self.tr_velo_to_cam[0], &self.tr_velo_to_cam[1], &self.tr_velo_to_cam[2]]) {
            return Err(Error::malformed("calibration", "Tr_velo_to_cam has non-finite entries"));
        }
        let r = &self.r0_rect;
        for i in 0..3 {
            for j in 0..3 {
                let rrt: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let target = if i == j { 1.0 } else { 0.0 };
                if !((rrt - target).abs() < 1e-3) {
                    return Err(Error::malformed("calibration", "R0_rect is not orthonormal"));
                }
            }
        }
        Ok(())
    }

    /// The composed 3x4 map `P2 · [R0 0; 0 1] · [Tr; 0 0 0 1]` from LiDAR
    /// homogeneous coordinates to image homogeneous coordinates.
    pub fn lidar_to_image(&self) -> [[f64; 4]; 3] {
        // rect = R0 · Tr (3x4), then P2 · [rect; 0 0 0 1]
        let mut rect = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..4 {
                rect[i][j] = (0..3).map(|k| self.r0_rect[i][k] * self.tr_velo_to_cam[k][j]).sum();
            }
        }
        let mut out = [[0.0; 4]; 3];
        for i in 0..3 {
            for j in 0..4 {
                let mut acc: f64 = (0..3).map(|k| self.p2[i][k] * rect[k][j]).sum();
                if j == 3 {
                    acc += self.p2[i][3];
                }
                out[i][j] = acc;
            }
        }
        out
    }
}

fn parse_key_values(text: &str, key: &'static str, n: usize) -> Result<Vec<f64>> {
    let mut found = None;
    for line in text.lines() {
        let Some((k, rest)) = line.split_once(':') else { continue };
        if k.trim() != key {
            continue;
        }
        let vals: std::result::Result<Vec<f64>, _> = rest.split_whitespace().map(str::parse).collect();
        let vals = vals.map_err(|e| Error::malformed("calibration", format!("{key}: {e}")))?;
        if vals.len() != n {
            return Err(Error::malformed(
                "calibration",
                format!("{key}: expected {n} values, found {}", vals.len()),
            ));
        }
        found = Some(vals);
    }
    found.ok_or_else(|| Error::malformed("calibration", format!("missing key {key}")))
}

/// Parses a KITTI calib file. Keys may appear in any order; unknown keys are ignored.
pub fn parse_calibration(text: &str) -> Result<CalibrationSet> {
    let p2 = parse_key_values(text, "P2", 12)?;
    let r0 = parse_key_values(text, "R0_rect", 9)?;
    let tr = parse_key_values(text, "Tr_velo_to_cam", 12)?;
    let row4 = |v: &[f64], r: usize| [v[r * 4], v[r * 4 + 1], v[r * 4 + 2], v[r * 4 + 3]];
    let row3 = |v: &[f64], r: usize| [v[r * 3], v[r * 3 + 1], v[r * 3 + 2]];
    let calib = CalibrationSet {
        p2: [row4(&p2, 0), row4(&p2, 1), row4(&p2, 2)],
        r0_rect: [row3(&r0, 0), row3(&r0, 1), row3(&r0, 2)],
        tr_velo_to_cam: [row4(&tr, 0), row4(&tr, 1), row4(&tr, 2)],
    };
    calib.validate()?;
    Ok(calib)
}

pub fn write_calibration(calib: &CalibrationSet) -> String {
    let join = |rows: &[&[f64]]| {
        rows.iter()
            .flat_map(|r| r.iter())
            .map(|v| format!("{v:e}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let c = calib;
    format!(
        "P2: {}\nR0_rect: {}\nTr_velo_to_cam: {}\n",
        join(&[&c.p2[0], &c.p2[1], &c.p2[2]]),
        join(&[&c.r0_rect[0], &c.r0_rect[1], &c.r0_rect[2]]),
        join(&[&c.tr_velo_to_cam[0], &c.tr_velo_to_cam[1], &c.tr_velo_to_cam[2]]),
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ObjectClass {
    Car,
    Pedestrian,
    Cyclist,
    /// Any other KITTI type string, kept verbatim (`DontCare`, `Van`, ...).
    Other(String),
}

impl ObjectClass {
    pub const EVALUATED: [ObjectClass; 3] =
        [ObjectClass::Car, ObjectClass::Pedestrian, ObjectClass::Cyclist];

    pub fn parse(s: &str) -> Self {
        match s {
            "Car" => ObjectClass::Car,
            "Pedestrian" => ObjectClass::Pedestrian,
            "Cyclist" => ObjectClass::Cyclist,
            other => ObjectClass::Other(other.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            ObjectClass::Car => "Car",
            ObjectClass::Pedestrian => "Pedestrian",
            ObjectClass::Cyclist => "Cyclist",
            ObjectClass::Other(s) => s,
        }
    }

    pub fn is_dont_care(&self) -> bool {
        matches!(self, ObjectClass::Other(s) if s == "DontCare")
    }
}

/// One line of a KITTI label or detection file.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectLabel {
    pub class: ObjectClass,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    /// `(u_min, v_min, u_max, v_max)` in pixels.
    pub bbox2d: [f64; 4],
    /// `(h, w, l)` in meters.
    pub dims: [f64; 3],
    /// Bottom-center `(x, y, z)` in the rectified camera frame.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

pub type GroundTruthBox = ObjectLabel;
pub type DetectionBox = ObjectLabel;

impl ObjectLabel {
    pub fn bbox_height(&self) -> f64 {
        self.bbox2d[3] - self.bbox2d[1]
    }
}

pub fn parse_labels(text: &str) -> Result<Vec<ObjectLabel>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 15 && fields.len() != 16 {
            return Err(Error::malformed(
                "label file",
                format!("line {}: expected 15 or 16 fields, found {}", lineno + 1, fields.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse::<f64>().map_err(|e| {
                Error::malformed("label file", format!("line {} field {}: {e}", lineno + 1, i + 1))
            })
        };
        let occlusion = fields[2].parse::<i32>().or_else(|_| num(2).map(|v| v as i32))?;
        out.push(ObjectLabel {
            class: ObjectClass::parse(fields[0]),
            truncation: num(1)?,
            occlusion,
            alpha: num(3)?,
            bbox2d: [num(4)?, num(5)?, num(6)?, num(7)?],
            dims: [num(8)?, num(9)?, num(10)?],
            location: [num(11)?, num(12)?, num(13)?],
            rotation_y: num(14)?,
            score: if fields.len() == 16 { Some(num(15)?) } else { None },
        });
    }
    Ok(out)
}

/// Writes the 16-column detection format with two decimals per real, which
/// is lossy at the 1e-2 level.
pub fn write_detections(boxes: &[DetectionBox]) -> Result<String> {
    let mut out = String::new();
    for (i, b) in boxes.iter().enumerate() {
        let score = b
            .score
            .ok_or_else(|| Error::malformed("detection", format!("box {i} has no score")))?;
        let _ = writeln!(
            out,
            "{} {:.2} {} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2} {:.2}",
            b.class.name(),
            b.truncation,
            b.occlusion,
            b.alpha,
            b.bbox2d[0],
            b.bbox2d[1],
            b.bbox2d[2],
            b.bbox2d[3],
            b.dims[0],
            b.dims[1],
            b.dims[2],
            b.location[0],
            b.location[1],
            b.location[2],
            b.rotation_y,
            score,
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Ppm,
    Png,
}

impl ImageFormat {
    pub fn from_extension(path: &std::path::Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ppm" => Some(ImageFormat::Ppm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }
}

/// 8-bit RGB, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(Error::malformed(
                "image",
                format!("{}x{} needs {} bytes, got {}", width, height, 3 * width * height, data.len()),
            ));
        }
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Image {
            width,
            height,
            data: rgb.iter().copied().cycle().take(3 * width * height).collect(),
        }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

pub fn load_image(raw: &[u8], format: ImageFormat) -> Result<Image> {
    match format {
        ImageFormat::Ppm => parse_ppm(raw),
        ImageFormat::Png => decode_png(raw),
    }
}

#[cfg(feature = "png")]
fn decode_png(raw: &[u8]) -> Result<Image> {
    let img = image::load_from_memory_with_format(raw, image::ImageFormat::Png)
        .map_err(|e| Error::malformed("png", e.to_string()))?
        .to_rgb8();
    let (w, h) = img.dimensions();
    Image::new(w as usize, h as usize, img.into_raw())
}

#[cfg(not(feature = "png"))]
fn decode_png(_raw: &[u8]) -> Result<Image> {
    Err(Error::Config("PNG support requires the `png` feature".into()))
}

fn parse_ppm(raw: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        // whitespace and comments between header tokens
        loop {
            match raw.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while raw.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::malformed("ppm", "truncated header")),
            }
        }
        let start = pos;
        while raw.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        tokens.push(std::str::from_utf8(&raw[start..pos]).unwrap_or(""));
    }
    if tokens[0] != "P6" {
        return Err(Error::malformed("ppm", format!("expected magic P6, found {:?}", tokens[0])));
    }
    let dim = |s: &str, what| {
        s.parse::<usize>()
            .map_err(|_| Error::malformed("ppm", format!("bad {what} {s:?}")))
    };
    let (width, height, maxval) = (dim(tokens[1], "width")?, dim(tokens[2], "height")?, dim(tokens[3], "maxval")?);
    if maxval != 255 {
        return Err(Error::malformed("ppm", format!("unsupported maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if !raw.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(Error::malformed("ppm", "missing raster"));
    }
    pos += 1;
    let need = 3 * width * height;
    let payload = &raw[pos..];
    if payload.len() < need {
        return Err(Error::malformed(
            "ppm",
            format!("truncated pixel data: need {need} bytes, found {}", payload.len()),
        ));
    }
    Image::new(width, height, payload[..need].to_vec())
}

pub fn write_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn point_cloud_cases() {
        let mut raw = Vec::new();
        for v in [1.0f32, 2.0, 3.0, 0.5] {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        let pc = parse_point_cloud(&raw).unwrap();
        assert_eq!(pc.points, vec![Point::new(1.0, 2.0, 3.0, 0.5)]);
        assert!(parse_point_cloud(&[]).unwrap().is_empty());
        raw.push(0);
        let err = parse_point_cloud(&raw).unwrap_err().to_string();
        assert!(err.contains("offset 16"), "{err}");
    }

    proptest! {
        #[test]
        fn point_cloud_roundtrip_preserves_order(vals in prop::collection::vec(any::<[u32; 4]>(), 0..50)) {
            let cloud = PointCloud {
                points: vals.iter().map(|v| {
                    let f = |b: u32| f32::from_bits(b);
                    Point::new(f(v[0]), f(v[1]), f(v[2]), f(v[3]))
                }).collect(),
            };
            let back = parse_point_cloud(&write_point_cloud(&cloud)).unwrap();
            prop_assert_eq!(write_point_cloud(&back), write_point_cloud(&cloud));
        }
    }

    const IDENTITY_CALIB: &str = "P0: 1 2 3\nP2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\nTr_imu_to_velo: 0\n";

    #[test]
    fn calibration_identity_and_order() {
        let c = parse_calibration(IDENTITY_CALIB).unwrap();
        assert_eq!(c, CalibrationSet::identity());
        let mut lines: Vec<&str> = IDENTITY_CALIB.lines().collect();
        lines.reverse();
        assert_eq!(parse_calibration(&lines.join("\n")).unwrap(), c);
        assert_eq!(parse_calibration(&write_calibration(&c)).unwrap(), c);
    }

    #[test]
    fn calibration_errors_name_the_key() {
        let bad = IDENTITY_CALIB.replace("P2: 1 0 0 0 0 1 0 0 0 0 1 0", "P2: 1 0 0 0 0 1 0 0 0 0 1");
        let err = parse_calibration(&bad).unwrap_err().to_string();
        assert!(err.contains("P2") && err.contains("11"), "{err}");
        let missing = IDENTITY_CALIB.replace("R0_rect", "R9");
        assert!(parse_calibration(&missing).unwrap_err().to_string().contains("R0_rect"));
        let skew = IDENTITY_CALIB.replace("R0_rect: 1 0 0", "R0_rect: 2 0 0");
        assert!(parse_calibration(&skew).is_err());
    }

    #[test]
    fn label_fields() {
        let l = parse_labels("Pedestrian 0.0 0 -0.2 100 150 140 250 1.8 0.6 0.9 2.0 1.5 10.0 -0.1").unwrap();
        assert_eq!(l.len(), 1);
        assert_eq!(l[0].class, ObjectClass::Pedestrian);
        assert_eq!(l[0].dims, [1.8, 0.6, 0.9]);
        assert_eq!(l[0].location, [2.0, 1.5, 10.0]);
        assert_eq!(l[0].bbox2d, [100.0, 150.0, 140.0, 250.0]);
        assert_eq!(l[0].score, None);
        assert!(parse_labels("").unwrap().is_empty());
        assert!(parse_labels("\n  \n").unwrap().is_empty());

        let d = parse_labels("Car 0 1 0 0 0 10 10 1.5 1.6 3.9 1 1.7 20 0.3 0.87").unwrap();
        assert_eq!(d[0].score, Some(0.87));
        let dc = parse_labels("DontCare -1 -1 -10 5 5 20 20 -1 -1 -1 -1000 -1000 -1000 -10").unwrap();
        assert!(dc[0].class.is_dont_care());
        assert_eq!(dc[0].occlusion, -1);
    }

    #[test]
    fn label_errors_carry_line_number() {
        let err = parse_labels("\nCar 1 2 3").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn write_detection_shapes() {
        assert_eq!(write_detections(&[]).unwrap(), "");
        let mut b = parse_labels("Cyclist 0.1 1 0.5 1 2 3 4 1.7 0.6 1.8 3 1.6 15 1.2 0.5").unwrap();
        let text = write_detections(&b).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert_eq!(text.split_whitespace().count(), 16);
        b[0].score = None;
        assert!(write_detections(&b).is_err());
    }

    fn arb_box() -> impl Strategy<Value = ObjectLabel> {
        (
            prop::sample::select(vec!["Car", "Pedestrian", "Cyclist", "DontCare", "Van"]),
            0.0f64..1.0,
            0i32..4,
            -3.14f64..3.14,
            prop::array::uniform4(0.0f64..1200.0),
            prop::array::uniform3(0.1f64..5.0),
            prop::array::uniform3(-50.0f64..80.0),
            -3.14f64..3.14,
            0.0f64..1.0,
        )
            .prop_map(|(c, t, o, a, bb, d, l, r, s)| ObjectLabel {
                class: ObjectClass::parse(c),
                truncation: t,
                occlusion: o,
                alpha: a,
                bbox2d: bb,
                dims: d,
                location: l,
                rotation_y: r,
                score: Some(s),
            })
    }

    proptest! {
        #[test]
        fn detection_roundtrip_within_two_decimals(boxes in prop::collection::vec(arb_box(), 0..100)) {
            let text = write_detections(&boxes).unwrap();
            let back = parse_labels(&text).unwrap();
            prop_assert_eq!(back.len(), boxes.len());
            for (a, b) in boxes.iter().zip(&back) {
                prop_assert_eq!(&a.class, &b.class);
                prop_assert_eq!(a.occlusion, b.occlusion);
                let fa = [a.truncation, a.alpha, a.rotation_y, a.score.unwrap()];
                let fb = [b.truncation, b.alpha, b.rotation_y, b.score.unwrap()];
                for (x, y) in fa.iter().chain(&a.bbox2d).chain(&a.dims).chain(&a.location)
                    .zip(fb.iter().chain(&b.bbox2d).chain(&b.dims).chain(&b.location)) {
                    prop_assert!((x - y).abs() <= 0.005 + 1e-9, "{} vs {}", x, y);
                }
            }
            // second round-trip is exact
            let again = write_detections(&back).unwrap();
            prop_assert_eq!(&again, &text);
            prop_assert_eq!(parse_labels(&again).unwrap(), back);
        }
    }

    #[test]
    fn ppm_cases() {
        let mut raw = b"P6 2 1 255\n".to_vec();
        raw.extend_from_slice(&[255, 0, 0, 0, 255, 0]);
        let img = load_image(&raw, ImageFormat::Ppm).unwrap();
        assert_eq!((img.width, img.height), (2, 1));
        assert_eq!(img.pixel(0, 0), [255, 0, 0]);
        assert_eq!(img.pixel(1, 0), [0, 255, 0]);

        assert!(load_image(&raw[..raw.len() - 1], ImageFormat::Ppm).is_err());

        let mut black = b"P6\n# a comment\n1 1\n255\n".to_vec();
        black.extend_from_slice(&[0, 0, 0]);
        let img = load_image(&black, ImageFormat::Ppm).unwrap();
        assert_eq!(img.data, vec![0, 0, 0]);

        assert!(load_image(b"P3 1 1 255\n0 0 0", ImageFormat::Ppm).is_err());
        assert!(load_image(b"P6 1 1 65535\n\0\0\0\0\0\0", ImageFormat::Ppm).is_err());
        assert!(load_image(b"P6 1", ImageFormat::Ppm).is_err());

        let rt = load_image(&write_ppm(&img), ImageFormat::Ppm).unwrap();
        assert_eq!(rt, img);
    }
}

//! Camera-side operations: grayscale conversion, Michelson contrast, the
//! single-bin RoIAlign read (and its adjoint) and the surrogate 2D backbone.
//!
//! Feature maps use the cell-center convention: cell `(row, col)` covers
//! `[col, col + 1) x [row, row + 1)` in feature-map units and its value sits
//! at `(col + 0.5, row + 0.5)`.

use crate::error::{Error, Result};
use crate::kitti_io::Image;
use crate::par::Execution;
use crate::projector::Roi;
use crate::rng::SeededRng;
use crate::tensor::{Affine, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::malformed("gray image", format!("{width}x{height} vs {} bytes", data.len())));
        }
        Ok(GrayImage { width, height, data })
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }
}

/// Luma: `round(0.299 R + 0.587 G + 0.114 B)`.
pub fn to_grayscale(img: &Image) -> GrayImage {
    let data = img
        .data
        .chunks_exact(3)
        .map(|c| {
            let y = 0.299 * f64::from(c[0]) + 0.587 * f64::from(c[1]) + 0.114 * f64::from(c[2]);
            y.round().clamp(0.0, 255.0) as u8
        })
        .collect();
    GrayImage {
        width: img.width,
        height: img.height,
        data,
    }
}

/// Axis-aligned rectangle in raw-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelRect {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

/// Inclusive index range of pixels whose centers `(i + 0.5)` lie in `[lo, hi]`.
fn covered(lo: f64, hi: f64, n: usize) -> Option<(usize, usize)> {
    if n == 0 || !(lo <= hi) {
        return None;
    }
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(n as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

/// `(I_max - I_min) / (I_max + I_min)` over the pixels whose centers fall in
/// `roi`; an all-black patch has contrast 0.
pub fn michelson_contrast(gray: &GrayImage, roi: &PixelRect) -> Result<f64> {
    let cols = covered(roi.u_min, roi.u_max, gray.width);
    let rows = covered(roi.v_min, roi.v_max, gray.height);
    let (Some((x0, x1)), Some((y0, y1))) = (cols, rows) else {
        return Err(Error::DegenerateRoi(format!("{roi:?} covers no pixel center")));
    };
    let (mut lo, mut hi) = (u8::MAX, u8::MIN);
    for y in y0..=y1 {
        for &v in &gray.data[y * gray.width + x0..=y * gray.width + x1] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let sum = u32::from(hi) + u32::from(lo);
    if sum == 0 {
        return Ok(0.0);
    }
    Ok(f64::from(hi - lo) / f64::from(sum))
}

/// Dense `H x W x C` map, channels fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Raw-image pixels per cell.
    pub stride: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(height: usize, width: usize, channels: usize, stride: usize) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            stride,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn filled(height: usize, width: usize, channels: usize, stride: usize, value: f64) -> Self {
        FeatureMap {
            data: vec![value; height * width * channels],
            ..Self::zeros(height, width, channels, stride)
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f64] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn contains_roi(&self, roi: &Roi) -> bool {
        let tol = 1e-9;
        roi.u_min >= -tol
            && roi.v_min >= -tol
            && roi.u_max <= self.width as f64 + tol
            && roi.v_max <= self.height as f64 + tol
            && roi.u_min <= roi.u_max
            && roi.v_min <= roi.v_max
    }
}

/// Number of sampling points inside the single RoIAlign bin.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoiSampling {
    /// Regular 2x2 sub-grid at `±1/4` of the extent around the center.
    #[default]
    Grid2x2,
    /// The ROI center only.
    Center,
}

pub fn sample_points(roi: &Roi, sampling: RoiSampling) -> Vec<(f64, f64)> {
    let cu = 0.5 * (roi.u_min + roi.u_max);
    let cv = 0.5 * (roi.v_min + roi.v_max);
    match sampling {
        RoiSampling::Center => vec![(cu, cv)],
        RoiSampling::Grid2x2 => {
            let du = 0.25 * (roi.u_max - roi.u_min);
            let dv = 0.25 * (roi.v_max - roi.v_min);
            vec![(cu - du, cv - dv), (cu + du, cv - dv), (cu - du, cv + dv), (cu + du, cv + dv)]
        }
    }
}

/// The four `(row, col, weight)` taps of a bilinear read at continuous
/// coordinate `(u, v)`, clamped to the lattice of cell centers.
pub fn bilinear_taps(height: usize, width: usize, u: f64, v: f64) -> [(usize, usize, f64); 4] {
    let axis = |t: f64, n: usize| {
        let x = (t - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, x - i0 as f64)
    };
    let (c0, c1, fx) = axis(u, width);
    let (r0, r1, fy) = axis(v, height);
    [
        (r0, c0, (1.0 - fx) * (1.0 - fy)),
        (r0, c1, fx * (1.0 - fy)),
        (r1, c0, (1.0 - fx) * fy),
        (r1, c1, fx * fy),
    ]
}

/// Single-bin RoIAlign: mean of bilinear reads at the sampling points.
pub fn roi_align_1x1(map: &FeatureMap, roi: &Roi, sampling: RoiSampling) -> Result<Vector> {
    if !map.contains_roi(roi) {
        return Err(Error::OutOfBounds(format!(
            "{roi:?} outside {}x{} feature map",
            map.width, map.height
        )));
    }
    let samples = sample_points(roi, sampling);
    let scale = 1.0 / samples.len() as f64;
    let mut out = vec![0.0; map.channels];
    for (u, v) in samples {
        for (r, c, w) in bilinear_taps(map.height, map.width, u, v) {
            if w == 0.0 {
                continue;
            }
            for (o, x) in out.iter_mut().zip(map.cell(r, c)) {
                *o += scale * w * x;
            }
        }
    }
    Ok(Vector(out))
}

/// Adjoint of [`roi_align_1x1`]: deposits `value` into `map` with the same
/// taps and weights the forward read uses.
pub fn roi_align_1x1_adjoint(map: &mut FeatureMap, roi: &Roi, sampling: RoiSampling, value: &[f64]) -> Result<()> {
    if value.len() != map.channels {
        return Err(Error::shape("roi_align_adjoint", map.channels, value.len()));
    }
    if !map.contains_roi(roi) {
        return Err(Error::OutOfBounds(format!("{roi:?} outside feature map")));
    }
    let samples = sample_points(roi, sampling);
    let scale = 1.0 / samples.len() as f64;
    let (h, w) = (map.height, map.width);
    for (u, v) in samples {
        for (r, c, wt) in bilinear_taps(h, w, u, v) {
            if wt == 0.0 {
                continue;
            }
            for (o, x) in map.cell_mut(r, c).iter_mut().zip(value) {
                *o += scale * wt * x;
            }
        }
    }
    Ok(())
}

/// Seeded stand-in for a trained 2D backbone: stride-block average pooling of
/// RGB in `[0, 1]` followed by `tanh(W x + b)` to `c_p` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraBackbone {
    pub stride: usize,
    pub map: Affine,
}

impl CameraBackbone {
    pub fn new(stride: usize, c_p: usize, seed: u64) -> Result<Self> {
        if ![1, 2, 4, 8].contains(&stride) {
            return Err(Error::Config(format!("camera stride {stride} not in {{1, 2, 4, 8}}")));
        }
        if c_p < 3 {
            return Err(Error::Config(format!("pixel channels must be >= 3, got {c_p}")));
        }
        let mut rng = SeededRng::named(seed, "camera_backbone");
        let mut map = Affine::glorot(3, c_p, &mut rng);
        for b in map.bias.iter_mut() {
            *b = rng.uniform(-0.5, 0.5);
        }
        Ok(CameraBackbone { stride, map })
    }

    pub fn output_size(&self, img: &Image) -> (usize, usize) {
        (img.height.div_ceil(self.stride), img.width.div_ceil(self.stride))
    }

    pub fn run(&self, img: &Image, exec: Execution) -> Result<FeatureMap> {
        let (fh, fw) = self.output_size(img);
        let s = self.stride;
        let c_p = self.map.out_dim();
        let rows = exec.try_map_range(fh, |r| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(fw * c_p);
            for c in 0..fw {
                let mut acc = [0.0f64; 3];
                let mut n = 0usize;
                for y in r * s..((r + 1) * s).min(img.height) {
                    for x in c * s..((c + 1) * s).min(img.width) {
                        let px = img.pixel(x, y);
                        for k in 0..3 {
                            acc[k] += f64::from(px[k]);
                        }
                        n += 1;
                    }
                }
                let pooled = acc.map(|a| a / (255.0 * n as f64));
                out.extend(self.map.forward(&pooled)?.iter().map(|v| v.tanh()));
            }
            Ok(out)
        })?;
        Ok(FeatureMap {
            height: fh,
            width: fw,
            channels: c_p,
            stride: s,
            data: rows.concat(),
        })
    }
}

pub fn surrogate_camera_backbone(img: &Image, stride: usize, c_p: usize, seed: u64) -> Result<FeatureMap> {
    CameraBackbone::new(stride, c_p, seed)?.run(img, Execution::default())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roi(u0: f64, v0: f64, u1: f64, v1: f64) -> Roi {
        Roi {
            u_min: u0,
            v_min: v0,
            u_max: u1,
            v_max: v1,
            depth: 1.0,
        }
    }

    #[test]
    fn grayscale_values() {
        let img = Image::new(3, 1, vec![255, 255, 255, 0, 0, 0, 255, 0, 0]).unwrap();
        assert_eq!(to_grayscale(&img).data, vec![255, 0, 76]);
    }

    #[test]
    fn grayscale_monotone_per_channel() {
        for ch in 0..3 {
            let mut prev = 0u8;
            for v in 0..=255u8 {
                let mut px = [37u8, 140, 201];
                px[ch] = v;
                let g = to_grayscale(&Image::new(1, 1, px.to_vec()).unwrap()).data[0];
                assert!(g >= prev);
                prev = g;
            }
        }
    }

    fn gray(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> GrayImage {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        GrayImage::new(w, h, data).unwrap()
    }

    #[test]
    fn contrast_cases() {
        let full = PixelRect { u_min: 0.0, v_min: 0.0, u_max: 4.0, v_max: 4.0 };
        assert_eq!(michelson_contrast(&gray(4, 4, |_, _| 128), &full).unwrap(), 0.0);
        assert_eq!(
            michelson_contrast(&gray(4, 4, |x, _| if x == 0 { 0 } else { 255 }), &full).unwrap(),
            1.0
        );
        let c = michelson_contrast(&gray(4, 4, |x, _| if x < 2 { 100 } else { 200 }), &full).unwrap();
        assert!((c - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(michelson_contrast(&gray(4, 4, |_, _| 0), &full).unwrap(), 0.0);
    }

    #[test]
    fn contrast_uses_pixel_centers() {
        let g = gray(4, 1, |x, _| [10, 20, 30, 40][x]);
        // centers at 0.5, 1.5, 2.5, 3.5; [1.5, 2.5] covers pixels 1 and 2
        let r = PixelRect { u_min: 1.5, v_min: 0.0, u_max: 2.5, v_max: 1.0 };
        assert!((michelson_contrast(&g, &r).unwrap() - 10.0 / 50.0).abs() < 1e-15);
        let tiny = PixelRect { u_min: 1.6, v_min: 0.0, u_max: 2.4, v_max: 1.0 };
        assert!(matches!(michelson_contrast(&g, &tiny), Err(Error::DegenerateRoi(_))));
    }

    fn map_from(h: usize, w: usize, c: usize, f: impl Fn(usize, usize, usize) -> f64) -> FeatureMap {
        let mut m = FeatureMap::zeros(h, w, c, 1);
        for r in 0..h {
            for col in 0..w {
                for k in 0..c {
                    m.cell_mut(r, col)[k] = f(r, col, k);
                }
            }
        }
        m
    }

    #[test]
    fn align_constant_map() {
        let m = FeatureMap::filled(5, 7, 3, 1, 2.5);
        for r in [roi(0.0, 0.0, 7.0, 5.0), roi(1.2, 0.3, 3.3, 4.9), roi(6.9, 4.9, 7.0, 5.0)] {
            let v = roi_align_1x1(&m, &r, RoiSampling::Grid2x2).unwrap();
            assert!(v.iter().all(|&x| (x - 2.5).abs() < 1e-15));
        }
    }

    #[test]
    fn align_two_by_two_whole_map() {
        let m = map_from(2, 2, 1, |r, _, _| r as f64);
        let v = roi_align_1x1(&m, &roi(0.0, 0.0, 2.0, 2.0), RoiSampling::Grid2x2).unwrap();
        assert_eq!(v.0, vec![0.5]);
    }

    #[test]
    fn align_degenerate_roi_at_cell_center() {
        let m = map_from(4, 4, 2, |r, c, k| (r * 10 + c) as f64 + 0.5 * k as f64);
        let v = roi_align_1x1(&m, &roi(2.5, 1.5, 2.5, 1.5), RoiSampling::Grid2x2).unwrap();
        assert_eq!(v.0, vec![12.0, 12.5]);
        assert!(roi_align_1x1(&m, &roi(-1.0, 0.0, 1.0, 1.0), RoiSampling::Grid2x2).is_err());
        assert!(roi_align_1x1(&m, &roi(0.0, 0.0, 4.5, 1.0), RoiSampling::Center).is_err());
    }

    #[test]
    fn align_is_linear_and_bounded() {
        let mut rng = SeededRng::new(8);
        for _ in 0..50 {
            let a = map_from(6, 9, 3, |_, _, _| 0.0).data.iter().map(|_| rng.normal()).collect::<Vec<_>>();
            let b = a.iter().map(|_| rng.normal()).collect::<Vec<_>>();
            let (al, be) = (rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0));
            let ma = FeatureMap { data: a.clone(), ..FeatureMap::zeros(6, 9, 3, 1) };
            let mb = FeatureMap { data: b.clone(), ..FeatureMap::zeros(6, 9, 3, 1) };
            let mc = FeatureMap {
                data: a.iter().zip(&b).map(|(x, y)| al * x + be * y).collect(),
                ..FeatureMap::zeros(6, 9, 3, 1)
            };
            let u0 = rng.uniform(0.0, 9.0);
            let v0 = rng.uniform(0.0, 6.0);
            let r = roi(u0, v0, rng.uniform(u0, 9.0), rng.uniform(v0, 6.0));
            let ya = roi_align_1x1(&ma, &r, RoiSampling::Grid2x2).unwrap();
            let yb = roi_align_1x1(&mb, &r, RoiSampling::Grid2x2).unwrap();
            let yc = roi_align_1x1(&mc, &r, RoiSampling::Grid2x2).unwrap();
            for k in 0..3 {
                assert!((yc[k] - (al * ya[k] + be * yb[k])).abs() < 1e-12);
                let lo = a.iter().skip(k).step_by(3).copied().fold(f64::INFINITY, f64::min);
                let hi = a.iter().skip(k).step_by(3).copied().fold(f64::NEG_INFINITY, f64::max);
                assert!(ya[k] >= lo - 1e-12 && ya[k] <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_identity() {
        // <align(m), y> == <m, adjoint(y)>
        let mut rng = SeededRng::new(31);
        for sampling in [RoiSampling::Grid2x2, RoiSampling::Center] {
            for _ in 0..20 {
                let data: Vec<f64> = (0..5 * 4 * 2).map(|_| rng.normal()).collect();
                let m = FeatureMap { data, ..FeatureMap::zeros(5, 4, 2, 1) };
                let u0 = rng.uniform(0.0, 4.0);
                let v0 = rng.uniform(0.0, 5.0);
                let r = roi(u0, v0, rng.uniform(u0, 4.0), rng.uniform(v0, 5.0));
                let y = [rng.normal(), rng.normal()];
                let fwd = roi_align_1x1(&m, &r, sampling).unwrap();
                let lhs = fwd[0] * y[0] + fwd[1] * y[1];
                let mut adj = FeatureMap::zeros(5, 4, 2, 1);
                roi_align_1x1_adjoint(&mut adj, &r, sampling, &y).unwrap();
                let rhs: f64 = adj.data.iter().zip(&m.data).map(|(a, b)| a * b).sum();
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backbone_shapes_and_constant_input() {
        let img = Image::filled(8, 8, [0, 0, 0]);
        let bb = CameraBackbone::new(4, 5, 3).unwrap();
        let m = bb.run(&img, Execution::Sequential).unwrap();
        assert_eq!((m.height, m.width, m.channels), (2, 2, 5));
        let expect: Vec<f64> = bb.map.bias.iter().map(|b| b.tanh()).collect();
        for r in 0..2 {
            for c in 0..2 {
                assert_eq!(m.cell(r, c), &expect[..]);
            }
        }
        let odd = Image::filled(10, 7, [9, 9, 9]);
        let m = bb.run(&odd, Execution::Parallel).unwrap();
        assert_eq!((m.height, m.width), (2, 3));
        assert!(m.stride * m.width >= odd.width);
        assert!(CameraBackbone::new(3, 5, 0).is_err());
        assert!(CameraBackbone::new(4, 2, 0).is_err());
    }

    #[test]
    fn backbone_matches_pool_then_affine() {
        let mut rng = SeededRng::new(12);
        let (w, h) = (13, 9);
        let img = Image::new(w, h, (0..3 * w * h).map(|_| rng.below(256) as u8).collect()).unwrap();
        let m = surrogate_camera_backbone(&img, 2, 6, 77).unwrap();
        let bb = CameraBackbone::new(2, 6, 77).unwrap();
        for r in 0..m.height {
            for c in 0..m.width {
                let mut sum = [0.0; 3];
                let mut n = 0.0;
                for y in 0..h {
                    for x in 0..w {
                        if x / 2 == c && y / 2 == r {
                            for k in 0..3 {
                                sum[k] += img.data[3 * (y * w + x) + k] as f64 / 255.0;
                            }
                            n += 1.0;
                        }
                    }
                }
                for k in 0..6 {
                    let mut z = bb.map.bias[k];
                    for j in 0..3 {
                        z += bb.map.weight.get(k, j) * sum[j] / n;
                    }
                    assert!((m.cell(r, c)[k] - z.tanh()).abs() < 1e-12);
                }
            }
        }
        assert_eq!(m, surrogate_camera_backbone(&img, 2, 6, 77).unwrap());
    }
}

//! Depth cleaning, depth-to-color registration, cropping and perspective augmentation.

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DepthMap, FocalStack, Image};

/// Grayscale erosion: windowed minimum over a `(2r+1)²` window.
///
/// Unknown pixels count as `+∞`, so a window with any valid pixel yields a
/// valid minimum.
pub fn erode(d: &DepthMap, radius: usize) -> DepthMap {
    morph(d, radius, f32::INFINITY, f32::min)
}

/// Grayscale dilation: windowed maximum; unknown pixels count as `-∞`.
pub fn dilate(d: &DepthMap, radius: usize) -> DepthMap {
    morph(d, radius, f32::NEG_INFINITY, f32::max)
}

fn morph(d: &DepthMap, radius: usize, hole: f32, pick: fn(f32, f32) -> f32) -> DepthMap {
    let (w, h) = (d.width(), d.height());
    let src: Vec<f32> = d
        .data()
        .iter()
        .map(|&v| if v.is_nan() { hole } else { v })
        .collect();
    // A square window is separable for min and max.
    let mut rows = vec![hole; w * h];
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            rows[y * w + x] = src[y * w + lo..=y * w + hi].iter().copied().fold(hole, pick);
        }
    }
    let mut out = vec![hole; w * h];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            out[y * w + x] = (lo..=hi).map(|yy| rows[yy * w + x]).fold(hole, pick);
        }
    }
    for v in &mut out {
        if v.is_infinite() {
            *v = f32::NAN;
        }
    }
    DepthMap::from_parts(w, h, out)
}

/// Sampled Gaussian truncated at ±3σ, normalized to unit sum.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let reach = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-reach..=reach)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Rectangular region of interest in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Roi {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Roi {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x: 0,
            y: 0,
            width,
            height,
        }
    }

    /// The region left after trimming `margin` pixels from every side.
    pub fn inset(width: usize, height: usize, margin: usize) -> Self {
        Self {
            x: margin,
            y: margin,
            width: width.saturating_sub(2 * margin),
            height: height.saturating_sub(2 * margin),
        }
    }
}

/// Rasters that the filtering and resampling operations accept.
pub trait Raster: Sized {
    fn dims(&self) -> (usize, usize);

    #[doc(hidden)]
    fn blur_with(&self, kernel: &[f64]) -> Self;

    #[doc(hidden)]
    fn crop_resize_with(&self, roi: Roi, out: (usize, usize)) -> Self;
}

/// Separable convolution of `planes` (channel-interleaved) with edge replication.
///
/// Non-finite samples are skipped and the weights renormalized; the result
/// is `None` where no finite sample was in reach.
fn convolve_separable(
    data: &[f64],
    w: usize,
    h: usize,
    channels: usize,
    kernel: &[f64],
) -> Vec<Option<f64>> {
    let reach = (kernel.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    // Numerator and weight planes stay separable under masking.
    let mut num = vec![0.0; data.len()];
    let mut wts = vec![0.0; data.len()];
    for y in 0..h {
        for x in 0..w {
            for (k, &kw) in kernel.iter().enumerate() {
                let sx = clamp(x as isize + k as isize - reach, w);
                for c in 0..channels {
                    let v = data[(y * w + sx) * channels + c];
                    if v.is_finite() {
                        num[(y * w + x) * channels + c] += kw * v;
                        wts[(y * w + x) * channels + c] += kw;
                    }
                }
            }
        }
    }
    let mut num2 = vec![0.0; data.len()];
    let mut wts2 = vec![0.0; data.len()];
    for y in 0..h {
        for (k, &kw) in kernel.iter().enumerate() {
            let sy = clamp(y as isize + k as isize - reach, h);
            for i in 0..w * channels {
                num2[y * w * channels + i] += kw * num[sy * w * channels + i];
                wts2[y * w * channels + i] += kw * wts[sy * w * channels + i];
            }
        }
    }
    num2.iter()
        .zip(&wts2)
        .map(|(&n, &wt)| (wt > 0.0).then(|| n / wt))
        .collect()
}

fn bilinear(data: &[u8], w: usize, h: usize, x: f64, y: f64, c: usize) -> f64 {
    let x0 = (x.floor() as usize).min(w - 1);
    let y0 = (y.floor() as usize).min(h - 1);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |xx: usize, yy: usize| data[(yy * w + xx) * 3 + c] as f64;
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Source coordinate of output sample `o` when `len` source pixels starting at
/// `start` are resampled to `out` pixels (pixel-center alignment).
fn resample_coord(o: usize, start: usize, len: usize, out: usize) -> f64 {
    start as f64 + (o as f64 + 0.5) * len as f64 / out as f64 - 0.5
}

impl Raster for Image {
    fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    fn blur_with(&self, kernel: &[f64]) -> Self {
        let (w, h) = self.dims();
        let data: Vec<f64> = self.data().iter().map(|&v| v as f64).collect();
        let out = convolve_separable(&data, w, h, 3, kernel)
            .into_iter()
            .map(|v| to_u8(v.unwrap_or(0.0)))
            .collect();
        Image::new(w, h, out).expect("blur preserves shape")
    }

    fn crop_resize_with(&self, roi: Roi, (ow, oh): (usize, usize)) -> Self {
        let (w, h) = self.dims();
        let mut out = Vec::with_capacity(ow * oh * 3);
        for oy in 0..oh {
            let sy = resample_coord(oy, roi.y, roi.height, oh)
                .clamp(roi.y as f64, (roi.y + roi.height - 1) as f64);
            for ox in 0..ow {
                let sx = resample_coord(ox, roi.x, roi.width, ow)
                    .clamp(roi.x as f64, (roi.x + roi.width - 1) as f64);
                for c in 0..3 {
                    out.push(to_u8(bilinear(self.data(), w, h, sx, sy, c)));
                }
            }
        }
        Image::new(ow, oh, out).expect("output size checked")
    }
}

impl Raster for DepthMap {
    fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    fn blur_with(&self, kernel: &[f64]) -> Self {
        let (w, h) = self.dims();
        let data: Vec<f64> = self.data().iter().map(|&v| v as f64).collect();
        let (lo, hi) = self.range().unwrap_or((f32::NAN, f32::NAN));
        let out = convolve_separable(&data, w, h, 1, kernel)
            .into_iter()
            .zip(self.data())
            .map(|(v, &orig)| match v {
                // Unknown stays unknown; the clamp only absorbs f64→f32 rounding.
                Some(v) if !orig.is_nan() => (v as f32).clamp(lo, hi),
                _ => f32::NAN,
            })
            .collect();
        DepthMap::from_parts(w, h, out)
    }

    fn crop_resize_with(&self, roi: Roi, (ow, oh): (usize, usize)) -> Self {
        let mut out = Vec::with_capacity(ow * oh);
        for oy in 0..oh {
            let sy = nearest(oy, roi.y, roi.height, oh);
            for ox in 0..ow {
                out.push(self.get(nearest(ox, roi.x, roi.width, ow), sy));
            }
        }
        DepthMap::from_parts(ow, oh, out)
    }
}

fn nearest(o: usize, start: usize, len: usize, out: usize) -> usize {
    let s = start as f64 + (o as f64 + 0.5) * len as f64 / out as f64;
    (s.floor() as usize).clamp(start, start + len - 1)
}

/// Gaussian blur with σ in pixels: bilinear images per channel, depth maps
/// with unknown pixels excluded from the weighted sums.
pub fn gaussian_blur<T: Raster>(x: &T, sigma: f64) -> Result<T> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("blur sigma must be positive, got {sigma}")));
    }
    Ok(x.blur_with(&gaussian_kernel(sigma)))
}

/// Crops `roi` out of `x` and resamples it to `out_size` (bilinear for
/// images, nearest neighbor for depth).
pub fn crop_resize<T: Raster>(x: &T, roi: Roi, out_size: (usize, usize)) -> Result<T> {
    let (w, h) = x.dims();
    if roi.width == 0 || roi.height == 0 || roi.x + roi.width > w || roi.y + roi.height > h {
        return Err(Error::InvalidRange(format!(
            "roi {roi:?} does not fit a {w}x{h} raster"
        )));
    }
    if out_size.0 == 0 || out_size.1 == 0 {
        return Err(Error::InvalidRange(format!("output size {out_size:?} is empty")));
    }
    Ok(x.crop_resize_with(roi, out_size))
}

/// Depth cleaning parameters: opening (erode then dilate) followed by a blur.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CleanConfig {
    pub erode_radius: usize,
    pub dilate_radius: usize,
    pub blur_sigma: f64,
}

impl Default for CleanConfig {
    fn default() -> Self {
        Self {
            erode_radius: 1,
            dilate_radius: 1,
            blur_sigma: 1.5,
        }
    }
}

pub fn clean_depth(d: &DepthMap, cfg: &CleanConfig) -> Result<DepthMap> {
    let opened = dilate(&erode(d, cfg.erode_radius), cfg.dilate_radius);
    gaussian_blur(&opened, cfg.blur_sigma)
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "focal lengths must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Position of the color camera in the depth sensor's frame, meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigExtrinsics {
    pub translation: [f64; 3],
}

impl RigExtrinsics {
    pub fn validate(&self) -> Result<()> {
        let norm = self.translation.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "rig baseline {norm} m is not a co-mounted pair"
            )));
        }
        Ok(())
    }
}

/// Reprojects a depth map into the color camera's frame with z-buffering.
pub fn register_depth_to_camera(
    d: &DepthMap,
    depth_cam: &CameraIntrinsics,
    color_cam: &CameraIntrinsics,
    rig: &RigExtrinsics,
    (ow, oh): (usize, usize),
) -> Result<DepthMap> {
    depth_cam.validate()?;
    color_cam.validate()?;
    rig.validate()?;
    let [tx, ty, tz] = rig.translation;
    let mut out = vec![f32::NAN; ow * oh];
    for v in 0..d.height() {
        for u in 0..d.width() {
            let z = d.get(u, v) as f64;
            if z.is_nan() {
                continue;
            }
            let x = (u as f64 - depth_cam.cx) * z / depth_cam.fx;
            let y = (v as f64 - depth_cam.cy) * z / depth_cam.fy;
            let (xc, yc, zc) = (x - tx, y - ty, z - tz);
            if zc <= 0.0 {
                continue;
            }
            let pu = (color_cam.fx * xc / zc + color_cam.cx).round();
            let pv = (color_cam.fy * yc / zc + color_cam.cy).round();
            if pu < 0.0 || pv < 0.0 || pu >= ow as f64 || pv >= oh as f64 {
                continue;
            }
            let slot = &mut out[pv as usize * ow + pu as usize];
            let zc = zc as f32;
            if slot.is_nan() || zc < *slot {
                *slot = zc;
            }
        }
    }
    DepthMap::new(ow, oh, out)
}

/// Invertible 3×3 projective transform on pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography(Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let m = if m[(2, 2)] != 0.0 { m / m[(2, 2)] } else { m };
        let det = m.determinant();
        if !det.is_finite() || det.abs() < 1e-12 {
            return Err(Error::Domain(format!("homography is singular (det {det})")));
        }
        Ok(Self(m))
    }

    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        Self(Matrix3::new(1.0, 0.0, dx, 0.0, 1.0, dy, 0.0, 0.0, 1.0))
    }

    /// The homography taking each `src[i]` to `dst[i]`.
    pub fn from_corners(src: [[f64; 2]; 4], dst: [[f64; 2]; 4]) -> Result<Self> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for i in 0..4 {
            let ([x, y], [u, v]) = (src[i], dst[i]);
            let r = 2 * i;
            a.row_mut(r)
                .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
            a.row_mut(r + 1)
                .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
            b[r] = u;
            b[r + 1] = v;
        }
        let h = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Domain("degenerate corner correspondence".into()))?;
        Self::new(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = self
            .0
            .try_inverse()
            .ok_or_else(|| Error::Domain("homography is singular".into()))?;
        Self::new(inv)
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let p = self.0 * Vector3::new(x, y, 1.0);
        (p[0] / p[2], p[1] / p[2])
    }

    /// Re-expresses this transform for a raster resampled from `from` to `to` pixels.
    pub fn rescaled(&self, from: (usize, usize), to: (usize, usize)) -> Result<Self> {
        let (sx, sy) = (to.0 as f64 / from.0 as f64, to.1 as f64 / from.1 as f64);
        let scale = Matrix3::new(sx, 0.0, 0.5 * sx - 0.5, 0.0, sy, 0.5 * sy - 0.5, 0.0, 0.0, 1.0);
        let inv = scale
            .try_inverse()
            .ok_or_else(|| Error::Domain("empty raster".into()))?;
        Self::new(scale * self.0 * inv)
    }
}

/// Warps `img` by `h` (inverse mapping, bilinear). Samples from outside the source are black.
pub fn apply_homography(img: &Image, h: &Homography, (ow, oh): (usize, usize)) -> Result<Image> {
    let inv = h.inverse()?;
    let (w, hgt) = (img.width(), img.height());
    let mut out = vec![0u8; ow * oh * 3];
    for y in 0..oh {
        for x in 0..ow {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            if let Some((sx, sy)) = inside(sx, sy, w, hgt) {
                for c in 0..3 {
                    out[(y * ow + x) * 3 + c] = to_u8(bilinear(img.data(), w, hgt, sx, sy, c));
                }
            }
        }
    }
    Image::new(ow, oh, out)
}

/// Warps a depth label by `h` with nearest-neighbor sampling; uncovered pixels are unknown.
pub fn apply_homography_depth(
    d: &DepthMap,
    h: &Homography,
    (ow, oh): (usize, usize),
) -> Result<DepthMap> {
    let inv = h.inverse()?;
    let (w, hgt) = (d.width(), d.height());
    let mut out = vec![f32::NAN; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            if let Some((sx, sy)) = inside(sx, sy, w, hgt) {
                out[y * ow + x] = d.get(sx.round() as usize, sy.round() as usize);
            }
        }
    }
    Ok(DepthMap::from_parts(ow, oh, out))
}

fn inside(x: f64, y: f64, w: usize, h: usize) -> Option<(f64, f64)> {
    const SLACK: f64 = 1e-9;
    let (mx, my) = ((w - 1) as f64, (h - 1) as f64);
    if x.is_finite() && y.is_finite() && x >= -SLACK && y >= -SLACK && x <= mx + SLACK && y <= my + SLACK
    {
        Some((x.clamp(0.0, mx), y.clamp(0.0, my)))
    } else {
        None
    }
}

pub const MAX_PERTURBATION: f64 = 0.1;

fn image_corners(w: usize, h: usize) -> [[f64; 2]; 4] {
    let (mx, my) = ((w - 1) as f64, (h - 1) as f64);
    [[0.0, 0.0], [mx, 0.0], [mx, my], [0.0, my]]
}

fn is_convex(q: &[[f64; 2]; 4]) -> bool {
    let cross = |i: usize| {
        let (a, b, c) = (q[i], q[(i + 1) % 4], q[(i + 2) % 4]);
        (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
    };
    let signs: Vec<f64> = (0..4).map(cross).collect();
    signs.iter().all(|&s| s > 0.0) || signs.iter().all(|&s| s < 0.0)
}

/// Draws the random perspective transform used by [`perturb_example`]: each
/// image corner moves independently by up to `magnitude × width` per axis.
pub fn perturbation_homography(
    width: usize,
    height: usize,
    seed: u64,
    magnitude: f64,
) -> Result<Homography> {
    if !(0.0..=MAX_PERTURBATION).contains(&magnitude) {
        return Err(Error::InvalidRange(format!(
            "perturbation magnitude {magnitude} outside [0, {MAX_PERTURBATION}]"
        )));
    }
    if magnitude == 0.0 {
        return Ok(Homography::identity());
    }
    let src = image_corners(width, height);
    let bound = magnitude * width as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let dst = src.map(|[x, y]| {
            [
                x + rng.gen_range(-bound..=bound),
                y + rng.gen_range(-bound..=bound),
            ]
        });
        if is_convex(&dst) {
            if let Ok(h) = Homography::from_corners(src, dst) {
                return Ok(h);
            }
        }
    }
}

/// Applies one random perspective warp to every slice and to the depth label.
pub fn perturb_example(stack: &FocalStack, seed: u64, magnitude: f64) -> Result<FocalStack> {
    let (w, h) = (stack.width(), stack.height());
    let hom = perturbation_homography(w, h, seed, magnitude)?;
    if magnitude == 0.0 {
        return Ok(stack.clone());
    }
    let slices = stack
        .slices()
        .iter()
        .map(|s| apply_homography(s, &hom, (w, h)))
        .collect::<Result<Vec<_>>>()?;
    let label = stack.depth_label();
    let label_dims = (label.width(), label.height());
    let label_hom = hom.rescaled((w, h), label_dims)?;
    let label = apply_homography_depth(label, &label_hom, label_dims)?;
    FocalStack::new(slices, stack.focus_settings().to_vec(), label)
}

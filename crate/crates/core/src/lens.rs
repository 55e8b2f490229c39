//! Synthetic scenes with exact depth, and thin-lens focal-stack rendering.
//!
//! Scenes are built from fronto-parallel textured rectangles in front of a
//! textured background plane. Defocus is rendered per depth layer, back to
//! front, with alpha accumulation so that blurred foreground edges spill over
//! the background instead of picking up background color.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DepthMap, FocalStack, Image};

/// Thin-lens camera. Lengths are in millimeters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LensConfig {
    pub focal_length_mm: f64,
    pub f_number: f64,
    pub pixel_pitch_mm: f64,
    /// Lens-to-sensor distances reachable by the focus mechanism.
    pub sensor_to_lens_range_mm: (f64, f64),
}

impl Default for LensConfig {
    /// A fast 50 mm lens on a coarse sensor, about 15.6 px of blur per
    /// diopter of defocus. Neighboring slices of an 8-slice sweep over
    /// 0.4–4 m then differ by at least half a pixel of blur even at the far
    /// end, where equal distance steps are smallest in diopters.
    fn default() -> Self {
        Self {
            focal_length_mm: 50.0,
            f_number: 2.0,
            pixel_pitch_mm: 0.04,
            sensor_to_lens_range_mm: (50.5, 60.0),
        }
    }
}

impl LensConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.focal_length_mm) || !positive(self.f_number) || !positive(self.pixel_pitch_mm)
        {
            return Err(Error::InvalidConfig(format!(
                "lens needs positive focal length, f-number and pixel pitch: {self:?}"
            )));
        }
        let (lo, hi) = self.sensor_to_lens_range_mm;
        if !(lo > self.focal_length_mm && lo <= hi) {
            return Err(Error::InvalidConfig(format!(
                "sensor range ({lo}, {hi}) mm must start beyond the focal length {} mm",
                self.focal_length_mm
            )));
        }
        Ok(())
    }

    fn focal_length_m(&self) -> f64 {
        self.focal_length_mm * 1e-3
    }

    /// Lens-to-sensor distance (mm) that brings `object_m` into focus.
    pub fn sensor_distance_mm(&self, object_m: f64) -> Result<f64> {
        let f = self.focal_length_m();
        if !(object_m > f) {
            return Err(Error::Domain(format!(
                "object at {object_m} m is not beyond the focal length"
            )));
        }
        Ok(f * object_m / (object_m - f) * 1e3)
    }

    /// Object distance (m) in focus when the sensor sits `sensor_mm` behind the lens.
    pub fn focus_distance_m(&self, sensor_mm: f64) -> Result<f64> {
        if !(sensor_mm > self.focal_length_mm) {
            return Err(Error::Domain(format!(
                "sensor at {sensor_mm} mm forms no real image"
            )));
        }
        let (f, v) = (self.focal_length_m(), sensor_mm * 1e-3);
        Ok(f * v / (v - f))
    }
}

/// Circle-of-confusion radius in pixels for an object at `object_depth` m
/// when the lens is focused at `focus_distance` m.
pub fn coc_radius(object_depth: f64, focus_distance: f64, lens: &LensConfig) -> Result<f64> {
    let f = lens.focal_length_m();
    if !(object_depth > f) || !(focus_distance > f) {
        return Err(Error::Domain(format!(
            "object {object_depth} m and focus {focus_distance} m must lie beyond f = {f} m"
        )));
    }
    let aperture_term = f * f / (2.0 * lens.f_number);
    let defocus = (object_depth - focus_distance).abs() / (object_depth * (focus_distance - f));
    Ok(aperture_term * defocus / (lens.pixel_pitch_mm * 1e-3))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// (near, far) in meters.
    pub depth_range: (f32, f32),
    pub primitive_count: usize,
    /// Texture contrast as a fraction of the 8-bit range, in (0, 1].
    pub texture_scale: f32,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            width: 64,
            height: 64,
            depth_range: (0.4, 4.0),
            primitive_count: 4,
            texture_scale: 0.6,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(format!(
                "scene has zero area: {}x{}",
                self.width, self.height
            )));
        }
        let (near, far) = self.depth_range;
        if !(near > 0.0 && near <= far && far < crate::imaging::MAX_DEPTH_M) {
            return Err(Error::InvalidConfig(format!(
                "depth range ({near}, {far}) m is not a valid interval"
            )));
        }
        if self.primitive_count == 0 {
            return Err(Error::InvalidConfig("scene needs at least one primitive".into()));
        }
        if !(self.texture_scale > 0.0 && self.texture_scale <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "texture scale {} outside (0, 1]",
                self.texture_scale
            )));
        }
        Ok(())
    }
}

/// Smooth random texture: a lattice of random luminance values with spacing
/// `cell` pixels, bilinearly interpolated.
struct ValueNoise {
    cols: usize,
    cell: f32,
    lattice: Vec<f32>,
}

impl ValueNoise {
    fn new(rng: &mut ChaCha8Rng, width: usize, height: usize, cell: f32) -> Self {
        let cols = (width as f32 / cell).ceil() as usize + 2;
        let rows = (height as f32 / cell).ceil() as usize + 2;
        let lattice = (0..cols * rows).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
        Self {
            cols,
            cell,
            lattice,
        }
    }

    fn sample(&self, x: f32, y: f32) -> f32 {
        let (gx, gy) = (x / self.cell, y / self.cell);
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let (fx, fy) = (gx - ix as f32, gy - iy as f32);
        let at = |cx: usize, cy: usize| self.lattice[cy * self.cols + cx];
        let top = at(ix, iy) * (1.0 - fx) + at(ix + 1, iy) * fx;
        let bottom = at(ix, iy + 1) * (1.0 - fx) + at(ix + 1, iy + 1) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

struct Surface {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
    depth: f32,
    base: [f32; 3],
    tint: [f32; 3],
    fine: ValueNoise,
    coarse: ValueNoise,
}

impl Surface {
    fn random(
        rng: &mut ChaCha8Rng,
        bounds: (usize, usize, usize, usize),
        depth: f32,
        contrast: f32,
    ) -> Self {
        let (x0, y0, x1, y1) = bounds;
        let (w, h) = (x1 - x0, y1 - y0);
        let base = [0; 3].map(|_| rng.gen_range(70.0f32..185.0));
        let tint = [0; 3].map(|_| rng.gen_range(0.6f32..1.0));
        let cell = rng.gen_range(1.0f32..5.0);
        let fine = ValueNoise::new(rng, w, h, cell);
        let coarse = ValueNoise::new(rng, w, h, cell * 4.0);
        let amplitude = contrast * 127.0;
        Self {
            x0,
            y0,
            x1,
            y1,
            depth,
            base,
            tint: tint.map(|t| t * amplitude),
            fine,
            coarse,
        }
    }

    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }

    fn color(&self, x: usize, y: usize) -> [u8; 3] {
        let (lx, ly) = ((x - self.x0) as f32, (y - self.y0) as f32);
        let n = 0.7 * self.fine.sample(lx, ly) + 0.3 * self.coarse.sample(lx, ly);
        [0, 1, 2].map(|c| (self.base[c] + self.tint[c] * n).round().clamp(0.0, 255.0) as u8)
    }
}

/// Generates an all-in-focus textured image and its exact depth map.
pub fn gen_scene(cfg: &SceneConfig) -> Result<(Image, DepthMap)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (w, h) = (cfg.width, cfg.height);
    let (near, far) = cfg.depth_range;
    let draw_depth = |rng: &mut ChaCha8Rng, lo: f32, hi: f32| {
        if hi > lo {
            rng.gen_range(lo..=hi)
        } else {
            lo
        }
    };

    let background_depth = draw_depth(&mut rng, near + 0.5 * (far - near), far);
    let background = Surface::random(&mut rng, (0, 0, w, h), background_depth, cfg.texture_scale);

    let mut primitives = Vec::with_capacity(cfg.primitive_count);
    for _ in 0..cfg.primitive_count {
        let pw = rng.gen_range(w.div_ceil(6)..=w.div_ceil(2).max(w.div_ceil(6)));
        let ph = rng.gen_range(h.div_ceil(6)..=h.div_ceil(2).max(h.div_ceil(6)));
        let x0 = rng.gen_range(0..=w - pw.min(w));
        let y0 = rng.gen_range(0..=h - ph.min(h));
        let depth = draw_depth(&mut rng, near, background_depth);
        let bounds = (x0, y0, (x0 + pw).min(w), (y0 + ph).min(h));
        primitives.push(Surface::random(&mut rng, bounds, depth, cfg.texture_scale));
    }

    let mut image = Image::filled(w, h, [0, 0, 0])?;
    let mut depth = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            // Nearest covering surface wins.
            let surface = primitives
                .iter()
                .filter(|p| p.contains(x, y))
                .min_by(|a, b| a.depth.total_cmp(&b.depth))
                .filter(|p| p.depth <= background.depth)
                .unwrap_or(&background);
            image.set_pixel(x, y, surface.color(x, y));
            depth[y * w + x] = surface.depth;
        }
    }
    Ok((image, DepthMap::new(w, h, depth)?))
}

/// Blur radii are quantized to this step in pixels.
const RADIUS_STEP: f64 = 0.25;

fn quantize_radius(r: f64) -> f64 {
    (r / RADIUS_STEP).round() * RADIUS_STEP
}

/// One row of a disc kernel: full-weight run `lo..=hi` plus fractional edge taps.
#[derive(Debug)]
struct KernelRow {
    dy: isize,
    run: Option<(isize, isize)>,
    taps: Vec<(isize, f64)>,
}

#[derive(Debug)]
enum Kernel {
    Identity,
    /// Separable 1-D weights centered at index `weights.len() / 2`.
    Gaussian(Vec<f64>),
    /// Anti-aliased disc. Runs carry unit weight and are divided by `norm`;
    /// edge taps are already normalized.
    Disc {
        rows: Vec<KernelRow>,
        reach: usize,
        norm: f64,
    },
}

impl Kernel {
    fn for_radius(r: f64) -> Self {
        if r < RADIUS_STEP {
            Kernel::Identity
        } else if r < 1.0 {
            let sigma = r / 2.0;
            let reach = (3.0 * sigma).ceil() as isize;
            let raw: Vec<f64> = (-reach..=reach)
                .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
                .collect();
            let total: f64 = raw.iter().sum();
            Kernel::Gaussian(raw.into_iter().map(|v| v / total).collect())
        } else {
            let reach = (r + 0.5).ceil() as isize;
            let coverage = |dx: isize, dy: isize| {
                let dist = ((dx * dx + dy * dy) as f64).sqrt();
                (r + 0.5 - dist).clamp(0.0, 1.0)
            };
            let mut rows = Vec::new();
            let mut total = 0.0;
            for dy in -reach..=reach {
                let mut run: Option<(isize, isize)> = None;
                let mut taps = Vec::new();
                for dx in -reach..=reach {
                    let w = coverage(dx, dy);
                    if w >= 1.0 {
                        run = Some(match run {
                            None => (dx, dx),
                            Some((lo, _)) => (lo, dx),
                        });
                        total += 1.0;
                    } else if w > 0.0 {
                        taps.push((dx, w));
                        total += w;
                    }
                }
                if run.is_some() || !taps.is_empty() {
                    rows.push(KernelRow { dy, run, taps });
                }
            }
            for row in &mut rows {
                for tap in &mut row.taps {
                    tap.1 /= total;
                }
            }
            Kernel::Disc {
                rows,
                reach: reach as usize,
                norm: total,
            }
        }
    }
}

/// Multi-channel float plane with edge-replicated reads.
struct Planes {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Planes {
    fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![0.0; width * height * channels],
        }
    }

    fn blur(&self, kernel: &Kernel) -> Planes {
        match kernel {
            Kernel::Identity => Planes {
                data: self.data.clone(),
                ..*self
            },
            Kernel::Gaussian(weights) => self.blur_separable(weights),
            Kernel::Disc { rows, reach, norm } => self.blur_disc(rows, *reach, *norm),
        }
    }

    fn blur_separable(&self, weights: &[f64]) -> Planes {
        let (w, h, c) = (self.width, self.height, self.channels);
        let reach = (weights.len() / 2) as isize;
        let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
        let mut tmp = Planes::zeros(w, h, c);
        for y in 0..h {
            for x in 0..w {
                for (k, &wt) in weights.iter().enumerate() {
                    let sx = clamp(x as isize + k as isize - reach, w);
                    let src = (y * w + sx) * c;
                    let dst = (y * w + x) * c;
                    for ch in 0..c {
                        tmp.data[dst + ch] += wt * self.data[src + ch];
                    }
                }
            }
        }
        let mut out = Planes::zeros(w, h, c);
        for y in 0..h {
            for (k, &wt) in weights.iter().enumerate() {
                let sy = clamp(y as isize + k as isize - reach, h);
                for x in 0..w {
                    let src = (sy * w + x) * c;
                    let dst = (y * w + x) * c;
                    for ch in 0..c {
                        out.data[dst + ch] += wt * tmp.data[src + ch];
                    }
                }
            }
        }
        out
    }

    fn blur_disc(&self, rows: &[KernelRow], reach: usize, norm: f64) -> Planes {
        let (w, h, c) = (self.width, self.height, self.channels);
        let padded = w + 2 * reach;
        // Per source row and channel: prefix sums over the edge-padded row.
        let mut prefix = vec![0.0f64; h * c * (padded + 1)];
        for y in 0..h {
            for ch in 0..c {
                let base = (y * c + ch) * (padded + 1);
                let mut acc = 0.0;
                for px in 0..padded {
                    let sx = (px as isize - reach as isize).clamp(0, w as isize - 1) as usize;
                    acc += self.data[(y * w + sx) * c + ch];
                    prefix[base + px + 1] = acc;
                }
            }
        }
        let inv = 1.0 / norm;
        let mut out = Planes::zeros(w, h, c);
        for y in 0..h {
            for row in rows {
                let sy = (y as isize + row.dy).clamp(0, h as isize - 1) as usize;
                for ch in 0..c {
                    let base = (sy * c + ch) * (padded + 1);
                    let line = &prefix[base..base + padded + 1];
                    for x in 0..w {
                        let center = x + reach;
                        let mut acc = 0.0;
                        if let Some((lo, hi)) = row.run {
                            let a = (center as isize + lo) as usize;
                            let b = (center as isize + hi) as usize + 1;
                            acc += (line[b] - line[a]) * inv;
                        }
                        for &(dx, wt) in &row.taps {
                            let p = (center as isize + dx) as usize;
                            acc += wt * (line[p + 1] - line[p]);
                        }
                        out.data[(y * w + x) * c + ch] += acc;
                    }
                }
            }
        }
        out
    }
}

/// Renders `sharp` as seen through `lens` focused at `focus_distance` m.
pub fn render_slice(
    sharp: &Image,
    depth: &DepthMap,
    focus_distance: f64,
    lens: &LensConfig,
) -> Result<Image> {
    lens.validate()?;
    let (w, h) = (sharp.width(), sharp.height());
    if depth.width() != w || depth.height() != h {
        return Err(Error::Shape(format!(
            "image is {w}x{h} but depth is {}x{}",
            depth.width(),
            depth.height()
        )));
    }

    // Layer key: quantized radius in steps, signed by side of the focal plane.
    // Unknown depth is treated as in focus.
    let mut keys = Vec::with_capacity(w * h);
    for &d in depth.data() {
        let key = if d.is_nan() {
            0
        } else {
            let r = quantize_radius(coc_radius(d as f64, focus_distance, lens)?);
            let steps = (r / RADIUS_STEP).round() as i64;
            if (d as f64) < focus_distance {
                -steps
            } else {
                steps
            }
        };
        keys.push(key);
    }

    // Order layers back to front by their farthest member.
    let mut layers: Vec<(i64, f32)> = Vec::new();
    for (&key, &d) in keys.iter().zip(depth.data()) {
        let d = if d.is_nan() { f32::INFINITY } else { d };
        match layers.iter_mut().find(|(k, _)| *k == key) {
            Some(entry) => entry.1 = entry.1.max(d),
            None => layers.push((key, d)),
        }
    }
    layers.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let sharp_px = sharp.data();
    let mut acc = Planes::zeros(w, h, 4);
    for &(key, _) in &layers {
        let mut layer = Planes::zeros(w, h, 4);
        for (i, _) in keys.iter().enumerate().filter(|(_, &k)| k == key) {
            for ch in 0..3 {
                layer.data[i * 4 + ch] = sharp_px[i * 3 + ch] as f64;
            }
            layer.data[i * 4 + 3] = 1.0;
        }
        let radius = key.unsigned_abs() as f64 * RADIUS_STEP;
        let blurred = layer.blur(&Kernel::for_radius(radius));
        for (dst, src) in acc.data.chunks_exact_mut(4).zip(blurred.data.chunks_exact(4)) {
            let keep = 1.0 - src[3];
            for ch in 0..4 {
                dst[ch] = src[ch] + keep * dst[ch];
            }
        }
    }

    let mut out = Vec::with_capacity(w * h * 3);
    for px in acc.data.chunks_exact(4) {
        let alpha = px[3].max(f64::MIN_POSITIVE);
        for ch in 0..3 {
            out.push((px[ch] / alpha).round().clamp(0.0, 255.0) as u8);
        }
    }
    Image::new(w, h, out)
}

/// Object-side focus distances of an `n`-slice sweep, equally spaced over `range`.
pub fn focus_distances(n: usize, range: (f64, f64)) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidConfig("focal stack needs at least one slice".into()));
    }
    let (lo, hi) = range;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::InvalidConfig(format!(
            "focus range ({lo}, {hi}) m is not a valid interval"
        )));
    }
    if n == 1 {
        return Ok(vec![0.5 * (lo + hi)]);
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n)
        .map(|k| if k == n - 1 { hi } else { lo + step * k as f64 })
        .collect())
}

/// Normalized focus setting in 0..1 for a distance inside `range`.
pub fn focus_setting(distance: f64, range: (f64, f64)) -> f64 {
    (distance - range.0) / (range.1 - range.0)
}

/// Renders `n` slices focused at equally spaced distances across `focus_range`.
pub fn render_stack(
    sharp: &Image,
    depth: &DepthMap,
    n: usize,
    lens: &LensConfig,
    focus_range: (f64, f64),
) -> Result<FocalStack> {
    let distances = focus_distances(n, focus_range)?;
    let (lo_mm, hi_mm) = lens.sensor_to_lens_range_mm;
    let mut slices = Vec::with_capacity(n);
    for &s in &distances {
        let v = lens.sensor_distance_mm(s)?;
        if v < lo_mm || v > hi_mm {
            return Err(Error::InvalidConfig(format!(
                "focus at {s} m needs the sensor at {v:.3} mm, outside ({lo_mm}, {hi_mm}) mm"
            )));
        }
        slices.push(render_slice(sharp, depth, s, lens)?);
    }
    let settings = if n == 1 {
        vec![0.5]
    } else {
        distances
            .iter()
            .map(|&s| focus_setting(s, focus_range))
            .collect()
    };
    FocalStack::new(slices, settings, depth.clone())
}

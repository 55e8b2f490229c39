//! Classical shape-from-focus: per-pixel focus measures across a stack, argmax
//! over slices and three-point parabolic peak refinement.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{DepthMap, FocalStack, Image};

/// Non-negative per-pixel sharpness scores.
#[derive(Clone, Debug, PartialEq)]
pub struct FocusMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FocusMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FocusMeasure {
    ModifiedLaplacian,
    Tenengrad,
}

impl FocusMeasure {
    pub fn evaluate(self, img: &Image, window: usize) -> Result<FocusMap> {
        match self {
            FocusMeasure::ModifiedLaplacian => modified_laplacian(img, window),
            FocusMeasure::Tenengrad => tenengrad(img, window),
        }
    }
}

fn check_window(window: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::InvalidConfig(format!(
            "focus window must be odd and positive, got {window}"
        )));
    }
    Ok(())
}

struct Luma {
    w: usize,
    h: usize,
    v: Vec<f32>,
}

impl Luma {
    fn at(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.w as isize - 1) as usize;
        let y = y.clamp(0, self.h as isize - 1) as usize;
        self.v[y * self.w + x]
    }
}

/// Window sum with edge-replicated borders.
fn box_sum(values: &[f32], w: usize, h: usize, window: usize) -> Vec<f32> {
    let r = (window / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut rows = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            rows[y * w + x] = (-r..=r)
                .map(|d| values[y * w + clamp(x as isize + d, w)])
                .sum();
        }
    }
    let mut out = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = (-r..=r).map(|d| rows[clamp(y as isize + d, h) * w + x]).sum();
        }
    }
    out
}

fn focus_map(img: &Image, window: usize, op: impl Fn(&Luma, isize, isize) -> f32) -> Result<FocusMap> {
    check_window(window)?;
    let luma = Luma {
        w: img.width(),
        h: img.height(),
        v: img.to_luma(),
    };
    let mut response = Vec::with_capacity(luma.w * luma.h);
    for y in 0..luma.h as isize {
        for x in 0..luma.w as isize {
            response.push(op(&luma, x, y));
        }
    }
    Ok(FocusMap {
        width: luma.w,
        height: luma.h,
        data: box_sum(&response, luma.w, luma.h, window),
    })
}

/// Sum-modified Laplacian over a `window`×`window` neighborhood.
pub fn modified_laplacian(img: &Image, window: usize) -> Result<FocusMap> {
    focus_map(img, window, |l, x, y| {
        let c = 2.0 * l.at(x, y);
        (c - l.at(x - 1, y) - l.at(x + 1, y)).abs() + (c - l.at(x, y - 1) - l.at(x, y + 1)).abs()
    })
}

/// Windowed squared Sobel gradient magnitude. The Sobel taps are scaled by
/// 1/8 so a ramp of slope `s` has gradient `s`.
pub fn tenengrad(img: &Image, window: usize) -> Result<FocusMap> {
    focus_map(img, window, |l, x, y| {
        let gx = (l.at(x + 1, y - 1) + 2.0 * l.at(x + 1, y) + l.at(x + 1, y + 1))
            - (l.at(x - 1, y - 1) + 2.0 * l.at(x - 1, y) + l.at(x - 1, y + 1));
        let gy = (l.at(x - 1, y + 1) + 2.0 * l.at(x, y + 1) + l.at(x + 1, y + 1))
            - (l.at(x - 1, y - 1) + 2.0 * l.at(x, y - 1) + l.at(x + 1, y - 1));
        (gx * gx + gy * gy) / 64.0
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DffConfig {
    pub measure: FocusMeasure,
    pub window: usize,
    /// Pixels whose peak measure is below this fraction of the stack-wide
    /// maximum are reported unknown.
    pub contrast_floor: f32,
}

impl Default for DffConfig {
    fn default() -> Self {
        Self {
            measure: FocusMeasure::ModifiedLaplacian,
            window: 9,
            contrast_floor: 1e-3,
        }
    }
}

/// Vertex offset in (-0.5, 0.5) of the parabola through (-1, a), (0, b), (1, c).
/// Returns 0 when the three points are collinear or not a peak.
pub fn parabolic_offset(a: f32, b: f32, c: f32) -> f32 {
    let denom = a - 2.0 * b + c;
    if denom < 0.0 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    }
}

/// Depth at fractional slice index `t` by linear interpolation of `distances`.
fn interpolate_distance(distances: &[f64], t: f64) -> f64 {
    let last = distances.len() - 1;
    let t = t.clamp(0.0, last as f64);
    let i = (t.floor() as usize).min(last.saturating_sub(1));
    if last == 0 {
        return distances[0];
    }
    let frac = t - i as f64;
    distances[i] + (distances[i + 1] - distances[i]) * frac
}

/// Shape-from-focus depth estimate for `stack`, whose slices are focused at
/// `focus_distances` meters.
pub fn dff_depth(stack: &FocalStack, focus_distances: &[f64], cfg: &DffConfig) -> Result<DepthMap> {
    let n = stack.len();
    if focus_distances.len() != n {
        return Err(Error::Shape(format!(
            "{} focus distances for {n} slices",
            focus_distances.len()
        )));
    }
    let maps = stack
        .slices()
        .iter()
        .map(|s| cfg.measure.evaluate(s, cfg.window))
        .collect::<Result<Vec<_>>>()?;
    let global_max = maps
        .iter()
        .flat_map(|m| m.data.iter().copied())
        .fold(0.0f32, f32::max);
    let floor = cfg.contrast_floor * global_max;
    let (w, h) = (stack.width(), stack.height());
    let (lo, hi) = (focus_distances[0], focus_distances[n - 1]);
    let mut out = vec![f32::NAN; w * h];
    for (i, slot) in out.iter_mut().enumerate() {
        let mut best = 0;
        for k in 1..n {
            if maps[k].data[i] > maps[best].data[i] {
                best = k;
            }
        }
        let peak = maps[best].data[i];
        if !(peak > floor) || peak <= 0.0 {
            continue;
        }
        let offset = if n >= 3 && best > 0 && best < n - 1 {
            parabolic_offset(maps[best - 1].data[i], peak, maps[best + 1].data[i])
        } else {
            0.0
        };
        let d = interpolate_distance(focus_distances, best as f64 + offset as f64);
        *slot = d.clamp(lo.min(hi), hi.max(lo)) as f32;
    }
    DepthMap::new(w, h, out)
}

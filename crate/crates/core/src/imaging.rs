//! Raster types shared by the whole toolkit and their on-disk formats.
//!
//! A focal stack lives in its own directory:
//!
//! ```text
//! <example>/slice_0.png .. slice_<N-1>.png
//! <example>/depth.fdpt
//! <example>/meta.json
//! ```
//!
//! and a dataset directory holds many of those plus a top-level `manifest.json`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper sanity bound on metric depth, in meters.
pub const MAX_DEPTH_M: f32 = 100.0;

pub const DEPTH_MAGIC: &[u8; 4] = b"FDPT";
pub const DEPTH_FORMAT_VERSION: u32 = 1;
pub const STACK_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FORMAT_VERSION: u32 = 1;

/// 8-bit RGB raster, row-major with interleaved channels.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty image {width}x{height}")));
        }
        if data.len() != width * height * 3 {
            return Err(Error::Shape(format!(
                "image {width}x{height} needs {} bytes, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Result<Self> {
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take(width * height * 3)
            .collect();
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Luma (0.299, 0.587, 0.114) as floats in 0..=255.
    pub fn to_luma(&self) -> Vec<f32> {
        self.data
            .chunks_exact(3)
            .map(|p| 0.299 * p[0] as f32 + 0.587 * p[1] as f32 + 0.114 * p[2] as f32)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer_with_format(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(|source| Error::Png {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Png {
            path: path.to_path_buf(),
            source,
        })?;
        let rgb = img.into_rgb8();
        let (w, h) = rgb.dimensions();
        Self::new(w as usize, h as usize, rgb.into_raw())
    }
}

/// Metric depth in meters; `NaN` marks unknown pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty depth map {width}x{height}")));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        if let Some(bad) = data
            .iter()
            .find(|v| !v.is_nan() && !(**v > 0.0 && **v < MAX_DEPTH_M))
        {
            return Err(Error::InvalidRange(format!(
                "depth value {bad} outside (0, {MAX_DEPTH_M}) m"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds a map from values already known to satisfy the invariants.
    pub(crate) fn from_parts(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

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

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| !v.is_nan()).count()
    }

    /// (min, max) over known pixels, or `None` when every pixel is unknown.
    pub fn range(&self) -> Option<(f32, f32)> {
        self.data
            .iter()
            .filter(|v| !v.is_nan())
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }
}

/// Row-major flattening of a depth map.
pub fn flatten_depth(d: &DepthMap) -> Vec<f32> {
    d.data.clone()
}

/// Inverse of [`flatten_depth`] for a `width`×`height` map.
pub fn unflatten_depth(v: &[f32], width: usize, height: usize) -> Result<DepthMap> {
    DepthMap::new(width, height, v.to_vec())
}

/// Inverse of [`flatten_depth`] for square maps.
pub fn unflatten_square(v: &[f32]) -> Result<DepthMap> {
    let side = (v.len() as f64).sqrt().round() as usize;
    if side * side != v.len() {
        return Err(Error::Shape(format!("length {} is not square", v.len())));
    }
    unflatten_depth(v, side, side)
}

const RAMP: [[f32; 3]; 5] = [
    [0.0, 0.0, 255.0],
    [0.0, 255.0, 255.0],
    [0.0, 255.0, 0.0],
    [255.0, 255.0, 0.0],
    [255.0, 0.0, 0.0],
];

/// Position of `depth` along the heat-map ramp, clamped to `[0, 1]`.
pub fn ramp_parameter(depth: f32, near: f32, far: f32) -> f32 {
    ((depth - near) / (far - near)).clamp(0.0, 1.0)
}

/// Color of ramp parameter `t` on the blue→cyan→green→yellow→red ramp.
pub fn ramp_color(t: f32) -> [u8; 3] {
    let seg = t.clamp(0.0, 1.0) * (RAMP.len() - 1) as f32;
    let i = (seg.floor() as usize).min(RAMP.len() - 2);
    let frac = seg - i as f32;
    let (a, b) = (RAMP[i], RAMP[i + 1]);
    [0, 1, 2].map(|c| (a[c] + (b[c] - a[c]) * frac).round() as u8)
}

/// Heat-map visualization: `near` is blue, `far` is red, unknown pixels black.
pub fn depth_to_heatmap(d: &DepthMap, near: f32, far: f32) -> Result<Image> {
    if !(near < far) {
        return Err(Error::InvalidRange(format!(
            "heat map needs near < far, got near={near} far={far}"
        )));
    }
    let mut data = Vec::with_capacity(d.data.len() * 3);
    for &v in &d.data {
        let rgb = if v.is_nan() {
            [0, 0, 0]
        } else {
            ramp_color(ramp_parameter(v, near, far))
        };
        data.extend_from_slice(&rgb);
    }
    Image::new(d.width, d.height, data)
}

pub fn write_depth(path: &Path, d: &DepthMap) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + d.data.len() * 4);
    buf.extend_from_slice(DEPTH_MAGIC);
    buf.extend_from_slice(&DEPTH_FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(d.width as u32).to_le_bytes());
    buf.extend_from_slice(&(d.height as u32).to_le_bytes());
    for v in &d.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &buf)
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_depth(&buf).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn decode_depth(buf: &[u8]) -> Result<DepthMap> {
    if buf.len() < 16 || &buf[..4] != DEPTH_MAGIC {
        return Err(Error::Format("missing FDPT header".into()));
    }
    let word = |i: usize| u32::from_le_bytes(buf[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != DEPTH_FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported depth version {version}")));
    }
    let (w, h) = (word(8) as usize, word(12) as usize);
    let body = &buf[16..];
    if body.len() != w * h * 4 {
        return Err(Error::Format(format!(
            "depth body is {} bytes, header says {w}x{h}",
            body.len()
        )));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    DepthMap::new(w, h, data).map_err(|e| Error::Format(e.to_string()))
}

/// N slices of one static scene, their normalized focus settings and the depth label.
#[derive(Clone, Debug, PartialEq)]
pub struct FocalStack {
    slices: Vec<Image>,
    focus_settings: Vec<f64>,
    depth_label: DepthMap,
}

impl FocalStack {
    pub fn new(slices: Vec<Image>, focus_settings: Vec<f64>, depth_label: DepthMap) -> Result<Self> {
        if slices.is_empty() {
            return Err(Error::Shape("focal stack needs at least one slice".into()));
        }
        let (w, h) = (slices[0].width, slices[0].height);
        if let Some(k) = slices.iter().position(|s| s.width != w || s.height != h) {
            return Err(Error::Shape(format!(
                "slice {k} is {}x{}, slice 0 is {w}x{h}",
                slices[k].width, slices[k].height
            )));
        }
        if focus_settings.len() != slices.len() {
            return Err(Error::Shape(format!(
                "{} focus settings for {} slices",
                focus_settings.len(),
                slices.len()
            )));
        }
        if focus_settings.windows(2).any(|p| !(p[0] < p[1])) {
            return Err(Error::InvalidRange(
                "focus settings must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            slices,
            focus_settings,
            depth_label,
        })
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn width(&self) -> usize {
        self.slices[0].width
    }

    pub fn height(&self) -> usize {
        self.slices[0].height
    }

    pub fn slices(&self) -> &[Image] {
        &self.slices
    }

    pub fn focus_settings(&self) -> &[f64] {
        &self.focus_settings
    }

    pub fn depth_label(&self) -> &DepthMap {
        &self.depth_label
    }

    pub fn into_parts(self) -> (Vec<Image>, Vec<f64>, DepthMap) {
        (self.slices, self.focus_settings, self.depth_label)
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct StackMeta {
    format_version: u32,
    slices: usize,
    width: usize,
    height: usize,
    focus_settings: Vec<f64>,
}

pub fn slice_file_name(k: usize) -> String {
    format!("slice_{k}.png")
}

pub const DEPTH_FILE: &str = "depth.fdpt";
pub const META_FILE: &str = "meta.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Writes `stack` into `dir` (created if needed).
pub fn save_stack(stack: &FocalStack, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (k, slice) in stack.slices.iter().enumerate() {
        slice.save_png(&dir.join(slice_file_name(k)))?;
    }
    write_depth(&dir.join(DEPTH_FILE), &stack.depth_label)?;
    let meta = StackMeta {
        format_version: STACK_FORMAT_VERSION,
        slices: stack.len(),
        width: stack.width(),
        height: stack.height(),
        focus_settings: stack.focus_settings.clone(),
    };
    write_json(&dir.join(META_FILE), &meta)
}

pub fn load_stack(dir: &Path) -> Result<FocalStack> {
    let meta_path = dir.join(META_FILE);
    let meta: StackMeta = read_json(&meta_path)?;
    if meta.format_version != STACK_FORMAT_VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported stack version {}",
            meta_path.display(),
            meta.format_version
        )));
    }
    if meta.focus_settings.len() != meta.slices {
        return Err(Error::Format(format!(
            "{}: {} focus settings for {} slices",
            meta_path.display(),
            meta.focus_settings.len(),
            meta.slices
        )));
    }
    if meta.focus_settings.windows(2).any(|p| !(p[0] < p[1])) {
        return Err(Error::Format(format!(
            "{}: focus settings are not strictly increasing",
            meta_path.display()
        )));
    }
    let mut slices = Vec::with_capacity(meta.slices);
    for k in 0..meta.slices {
        let path = dir.join(slice_file_name(k));
        if !path.is_file() {
            return Err(Error::MissingSlice { index: k, path });
        }
        let slice = Image::load_png(&path)?;
        if slice.width != meta.width || slice.height != meta.height {
            return Err(Error::Format(format!(
                "{}: slice is {}x{}, meta says {}x{}",
                path.display(),
                slice.width,
                slice.height,
                meta.width,
                meta.height
            )));
        }
        slices.push(slice);
    }
    let label = read_depth(&dir.join(DEPTH_FILE))?;
    FocalStack::new(slices, meta.focus_settings, label).map_err(|e| Error::Format(e.to_string()))
}

/// One stack directory listed in a dataset manifest. Paths are relative to the dataset root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    /// Source scene; augmented variants share the scene of their original.
    pub scene: usize,
    /// 0 for the original, 1.. for perturbed copies.
    pub variant: usize,
    pub stack_dir: PathBuf,
    pub label_path: PathBuf,
    pub slices: usize,
    pub width: usize,
    pub height: usize,
    pub label_width: usize,
    pub label_height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    /// Object-side focus distance of each slice in meters, when known.
    #[serde(default)]
    pub focus_distances_m: Option<Vec<f64>>,
    /// Depth range used for visualization and label scaling.
    pub depth_range_m: (f32, f32),
    pub examples: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn scene_count(&self) -> usize {
        let mut scenes: Vec<usize> = self.examples.iter().map(|e| e.scene).collect();
        scenes.sort_unstable();
        scenes.dedup();
        scenes.len()
    }

    fn validate(&self, root: &Path) -> Result<()> {
        if self.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest version {}",
                self.format_version
            )));
        }
        let Some(first) = self.examples.first() else {
            return Ok(());
        };
        let dims = |e: &ManifestEntry| (e.slices, e.width, e.height, e.label_width, e.label_height);
        for e in &self.examples {
            if dims(e) != dims(first) {
                return Err(Error::Format(format!(
                    "example {} has shape {:?}, expected {:?}",
                    e.id,
                    dims(e),
                    dims(first)
                )));
            }
            for p in [&e.stack_dir, &e.label_path] {
                if !root.join(p).exists() {
                    return Err(Error::Corrupt(format!(
                        "example {} references missing {}",
                        e.id,
                        p.display()
                    )));
                }
            }
        }
        if let Some(fd) = &self.focus_distances_m {
            if fd.len() != first.slices {
                return Err(Error::Format(format!(
                    "{} focus distances for {} slices",
                    fd.len(),
                    first.slices
                )));
            }
        }
        Ok(())
    }
}

pub fn save_manifest(root: &Path, manifest: &DatasetManifest) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    write_json(&root.join(MANIFEST_FILE), manifest)
}

/// Reads `<root>/manifest.json` and checks that every referenced path exists.
pub fn load_manifest(root: &Path) -> Result<DatasetManifest> {
    let manifest: DatasetManifest = read_json(&root.join(MANIFEST_FILE))?;
    manifest.validate(root)?;
    Ok(manifest)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_file(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

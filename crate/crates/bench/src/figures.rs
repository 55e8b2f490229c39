//! Heat-map figure rows: input slice, ground truth, then one prediction per
//! report, all on the dataset's fixed [near, far] color scale.

use std::path::{Path, PathBuf};

use focal_core::imaging::{depth_to_heatmap, slice_file_name};
use focal_core::{DepthMap, Image};

use crate::error::Result;
use crate::report::{create_dir, EvalReport, Prediction};

const GAP: usize = 2;

fn upscale(img: &Image, size: (usize, usize)) -> Image {
    let (w, h) = (img.width(), img.height());
    let mut out = Image::filled(size.0, size.1, [0, 0, 0]).expect("nonzero size");
    for y in 0..size.1 {
        for x in 0..size.0 {
            out.set_pixel(x, y, img.pixel(x * w / size.0, y * h / size.1));
        }
    }
    out
}

/// Clamps finite values into the visible range so predictions outside the
/// valid depth domain still render; NaN stays NaN and renders black.
fn heatmap(values: &[f32], w: usize, h: usize, (near, far): (f32, f32)) -> Result<Image> {
    let data = values
        .iter()
        .map(|&v| if v.is_nan() { v } else { v.clamp(near, far) })
        .collect();
    Ok(depth_to_heatmap(&DepthMap::new(w, h, data)?, near, far)?)
}

fn row(panels: &[Image]) -> Image {
    let h = panels.iter().map(Image::height).max().unwrap_or(1);
    let w = panels.iter().map(Image::width).sum::<usize>() + GAP * panels.len().saturating_sub(1);
    let mut out = Image::filled(w.max(1), h, [255, 255, 255]).expect("nonzero size");
    let mut x0 = 0;
    for p in panels {
        for y in 0..p.height() {
            for x in 0..p.width() {
                out.set_pixel(x0 + x, y, p.pixel(x, y));
            }
        }
        x0 += p.width() + GAP;
    }
    out
}

/// Writes one PNG per test example present in every report, laid out as
/// input | truth | prediction of `reports[0]` | prediction of `reports[1]` ...
pub fn render_report_figures(reports: &[&EvalReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(out_dir)?;
    let Some(first) = reports.first() else {
        return Ok(vec![]);
    };
    let range = first.dataset.depth_range_m;
    let slice = first
        .config
        .single_slice_index
        .unwrap_or(first.dataset.slices.saturating_sub(1));
    let mut written = vec![];
    for p in &first.predictions {
        let Some(rows): Option<Vec<&Prediction>> = reports
            .iter()
            .map(|r| r.predictions.iter().find(|q| q.id == p.id))
            .collect()
        else {
            continue;
        };
        let input = Image::load_png(&first.dataset.root.join(&p.stack_dir).join(slice_file_name(slice)))?;
        let size = (input.width(), input.height());
        let (lw, lh) = (p.label_width, p.label_height);
        let mut panels = vec![input, upscale(&heatmap(&p.truth_m, lw, lh, range)?, size)];
        for q in rows {
            panels.push(upscale(&heatmap(&q.predicted_m, lw, lh, range)?, size));
        }
        let path = out_dir.join(format!("{}.png", p.id));
        row(&panels).save_png(&path)?;
        written.push(path);
    }
    Ok(written)
}

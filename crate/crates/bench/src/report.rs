use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::Mode;
use crate::error::{BenchError, Result};
use crate::experiment::ExperimentConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Errors of one example, in scaled label units (depth mapped onto 0..255).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExampleError {
    pub id: String,
    pub scene: usize,
    pub split: Split,
    /// Labelled pixels the errors are averaged over.
    pub pixels: usize,
    pub mse: f64,
    pub mae: f64,
}

/// Per-pixel averages pooled over every labelled pixel of a split.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub examples: usize,
    pub pixels: usize,
    pub mse: f64,
    pub mae: f64,
}

impl SplitMetrics {
    pub fn pooled<'a>(rows: impl IntoIterator<Item = &'a ExampleError>) -> Self {
        let (mut examples, mut pixels, mut se, mut ae) = (0, 0, 0.0, 0.0);
        for r in rows {
            examples += 1;
            pixels += r.pixels;
            se += r.mse * r.pixels as f64;
            ae += r.mae * r.pixels as f64;
        }
        if pixels == 0 {
            return Self { examples, ..Self::default() };
        }
        Self {
            examples,
            pixels,
            mse: se / pixels as f64,
            mae: ae / pixels as f64,
        }
    }
}

/// Truth and prediction of one test example, in meters, kept for figures.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub stack_dir: PathBuf,
    pub label_width: usize,
    pub label_height: usize,
    /// NaN marks unknown depth.
    #[serde(with = "nan_as_null")]
    pub truth_m: Vec<f32>,
    #[serde(with = "nan_as_null")]
    pub predicted_m: Vec<f32>,
}

mod nan_as_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f32], s: S) -> Result<S::Ok, S::Error> {
        let opts: Vec<Option<f32>> = v.iter().map(|x| (!x.is_nan()).then_some(*x)).collect();
        opts.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f32>, D::Error> {
        let opts = Vec::<Option<f32>>::deserialize(d)?;
        Ok(opts.into_iter().map(|x| x.unwrap_or(f32::NAN)).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub root: PathBuf,
    pub sha256: String,
    pub examples: usize,
    pub scenes: usize,
    pub slices: usize,
    pub depth_range_m: (f32, f32),
    pub focus_distances_m: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: Mode,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub dataset: DatasetInfo,
    pub train: SplitMetrics,
    pub test: SplitMetrics,
    /// Mean training loss per epoch; empty for the classic baseline.
    pub loss_history: Vec<f64>,
    pub examples: Vec<ExampleError>,
    pub predictions: Vec<Prediction>,
    pub notes: Vec<String>,
}

impl EvalReport {
    /// Recomputes the split summaries from the example table and checks that
    /// they match the stored values within `tol` and that MAE² ≤ MSE.
    pub fn check_consistency(&self, tol: f64) -> std::result::Result<(), String> {
        for (split, stored) in [(Split::Train, &self.train), (Split::Test, &self.test)] {
            let again = SplitMetrics::pooled(self.examples.iter().filter(|e| e.split == split));
            if again.examples != stored.examples || again.pixels != stored.pixels {
                return Err(format!("{split:?} counts differ from the example table"));
            }
            if (again.mse - stored.mse).abs() > tol || (again.mae - stored.mae).abs() > tol {
                return Err(format!("{split:?} summary differs from the example table"));
            }
            if stored.mae * stored.mae > stored.mse * (1.0 + 1e-12) {
                return Err(format!("{split:?} has MAE² > MSE"));
            }
        }
        Ok(())
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss\n");
        for (i, l) in self.loss_history.iter().enumerate() {
            let _ = writeln!(s, "{},{l}", i + 1);
        }
        s
    }

    pub fn examples_csv(&self) -> String {
        let mut s = String::from("id,scene,split,pixels,mse,mae\n");
        for e in &self.examples {
            let split = match e.split {
                Split::Train => "train",
                Split::Test => "test",
            };
            let _ = writeln!(s, "{},{},{split},{},{},{}", e.id, e.scene, e.pixels, e.mse, e.mae);
        }
        s
    }
}

pub const REPORT_FILE: &str = "report.json";

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| BenchError::io(path, e))
}

/// Writes `report.json`, `loss_history.csv` and `examples.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let json = dir.join(REPORT_FILE);
    focal_core::imaging::write_json(&json, report)?;
    let loss = dir.join("loss_history.csv");
    write_text(&loss, &report.loss_csv())?;
    let table = dir.join("examples.csv");
    write_text(&table, &report.examples_csv())?;
    Ok(vec![json, loss, table])
}

pub fn read_report(path: &Path) -> Result<EvalReport> {
    Ok(focal_core::imaging::read_json(path)?)
}

/// Per-pixel squared and absolute errors over labelled pixels.
pub fn example_errors(pred: &[f32], truth: &[f32]) -> (usize, f64, f64) {
    let (mut n, mut se, mut ae) = (0usize, 0.0f64, 0.0f64);
    for (&p, &t) in pred.iter().zip(truth) {
        if t.is_nan() {
            continue;
        }
        let d = p as f64 - t as f64;
        n += 1;
        se += d * d;
        ae += d.abs();
    }
    if n == 0 {
        (0, 0.0, 0.0)
    } else {
        (n, se / n as f64, ae / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(split: Split, pixels: usize, mse: f64, mae: f64) -> ExampleError {
        ExampleError {
            id: "x".into(),
            scene: 0,
            split,
            pixels,
            mse,
            mae,
        }
    }

    #[test]
    fn pooling_weights_by_pixels() {
        let rows = [row(Split::Test, 1, 4.0, 2.0), row(Split::Test, 3, 0.0, 0.0)];
        let m = SplitMetrics::pooled(&rows);
        assert_eq!((m.examples, m.pixels, m.mse, m.mae), (2, 4, 1.0, 0.5));
        assert_eq!(SplitMetrics::pooled(&[]), SplitMetrics::default());
    }

    #[test]
    fn example_errors_skip_unknown_labels() {
        let (n, mse, mae) = example_errors(&[1.0, 5.0, 0.0], &[0.0, f32::NAN, 2.0]);
        assert_eq!((n, mse, mae), (2, 2.5, 1.5));
        assert_eq!(example_errors(&[1.0], &[f32::NAN]), (0, 0.0, 0.0));
    }
}

//! One experiment: build inputs for a mode, train (or run the classical
//! baseline), and evaluate per-pixel errors on both splits.

use std::path::{Path, PathBuf};

use focal_core::classic::{dff_depth, DffConfig};
use focal_core::imaging::flatten_depth;
use focal_core::preprocess::{crop_resize, Roi};
use focal_core::FocalStack;
use focal_nn::{train_with_observer, Dataset, DepthNetConfig, ModelSpec, ModelState, Tensor, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::config::{BenchConfig, InputNorm, Mode};
use crate::dataset::{dataset_checksum, load_dataset, split_indices, LoadedDataset};
use crate::error::{BenchError, Result};
use crate::report::{example_errors, DatasetInfo, EvalReport, ExampleError, Prediction, Split, SplitMetrics};

/// Upper end of the scaled label range; depth `near..far` maps onto `0..LABEL_SCALE`.
pub const LABEL_SCALE: f32 = 255.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub dataset: PathBuf,
    pub seed: u64,
    pub single_slice_index: Option<usize>,
    pub input_norm: InputNorm,
    pub train: TrainConfig,
    pub net: DepthNetConfig,
    pub classic: DffConfig,
    pub figure_examples: usize,
}

impl ExperimentConfig {
    pub fn from_bench(cfg: &BenchConfig, dataset: &Path) -> Self {
        Self {
            mode: cfg.mode,
            dataset: dataset.to_path_buf(),
            seed: cfg.seed,
            single_slice_index: cfg.single_slice_index,
            input_norm: cfg.input_norm,
            train: TrainConfig {
                seed: cfg.seed,
                ..cfg.train
            },
            net: cfg.net,
            classic: cfg.classic,
            figure_examples: cfg.figure_examples,
        }
    }

    /// Slice fed to the network in single mode.
    pub fn single_slice(&self, slices: usize) -> Result<usize> {
        let k = self.single_slice_index.unwrap_or(slices.saturating_sub(1));
        if k >= slices {
            return Err(BenchError::Config(format!(
                "single-slice index {k} is out of range for {slices} slices"
            )));
        }
        Ok(k)
    }
}

pub fn scale_depth(d: f32, (near, far): (f32, f32)) -> f32 {
    (d - near) / (far - near) * LABEL_SCALE
}

pub fn unscale_depth(v: f32, (near, far): (f32, f32)) -> f32 {
    near + v / LABEL_SCALE * (far - near)
}

/// Slices a mode feeds to the network.
fn chosen_slices(stack: &FocalStack, mode: Mode, slice: usize) -> Result<Vec<usize>> {
    let chosen = match mode {
        Mode::Stack => (0..stack.len()).collect(),
        Mode::Single => vec![slice],
        Mode::Classic => return Err(BenchError::Config("the classic baseline takes no network input".into())),
    };
    if slice >= stack.len() {
        return Err(BenchError::Config(format!("slice {slice} out of range")));
    }
    Ok(chosen)
}

/// Per color channel affine map `(v - mean) / std` from 8-bit intensity to
/// network input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputScaling {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl InputScaling {
    /// Intensities divided by 255.
    pub const UNIT: Self = Self {
        mean: [0.0; 3],
        std: [255.0; 3],
    };

    /// Statistics of the slices `mode` uses, over the examples in `ids`.
    pub fn fit(stacks: &[FocalStack], ids: &[usize], mode: Mode, slice: usize) -> Result<Self> {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for &i in ids {
            let stack = &stacks[i];
            for k in chosen_slices(stack, mode, slice)? {
                for px in stack.slices()[k].data().chunks_exact(3) {
                    for c in 0..3 {
                        let v = px[c] as f64;
                        sum[c] += v;
                        sq[c] += v * v;
                    }
                }
                n += stack.width() * stack.height();
            }
        }
        if n == 0 {
            return Ok(Self::UNIT);
        }
        let mean = sum.map(|s| s / n as f64);
        let mut std = [1.0; 3];
        for c in 0..3 {
            let var = sq[c] / n as f64 - mean[c] * mean[c];
            if var > 1e-12 {
                std[c] = var.sqrt();
            }
        }
        Ok(Self { mean, std })
    }

    pub fn for_config(norm: InputNorm, stacks: &[FocalStack], ids: &[usize], mode: Mode, slice: usize) -> Result<Self> {
        match norm {
            InputNorm::Unit => Ok(Self::UNIT),
            InputNorm::Standardize => Self::fit(stacks, ids, mode, slice),
        }
    }
}

/// Network input `[3k, H, W]`: every slice in stack mode, only `slice` in
/// single mode, channel-major.
pub fn input_tensor(stack: &FocalStack, mode: Mode, slice: usize, scaling: &InputScaling) -> Result<Tensor<f32>> {
    let chosen = chosen_slices(stack, mode, slice)?;
    let (w, h) = (stack.width(), stack.height());
    let mut data = Vec::with_capacity(3 * chosen.len() * w * h);
    for &k in &chosen {
        let img = &stack.slices()[k];
        for c in 0..3 {
            let (m, s) = (scaling.mean[c], scaling.std[c]);
            data.extend(img.data().iter().skip(c).step_by(3).map(|&v| ((v as f64 - m) / s) as f32));
        }
    }
    Ok(Tensor::new(vec![3 * chosen.len(), h, w], data)?)
}

pub struct ExperimentOutcome {
    pub report: EvalReport,
    pub model: Option<ModelState<f32>>,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let data = load_dataset(&cfg.dataset)?;
    let checksum = dataset_checksum(&data.root, &data.manifest)?;
    run_on_dataset(cfg, &data, &checksum)
}

fn model_spec(cfg: &ExperimentConfig, data: &LoadedDataset) -> Result<ModelSpec> {
    let first = &data.stacks[0];
    let channels = match cfg.mode {
        Mode::Stack => 3 * first.len(),
        _ => 3,
    };
    let label = first.depth_label();
    Ok(ModelSpec::depth_net(
        channels,
        first.height(),
        first.width(),
        label.width() * label.height(),
        &cfg.net,
    )?)
}

/// Affine map from scaled labels to network targets with zero mean and unit
/// variance over the training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetScaling {
    pub mean: f64,
    pub std: f64,
}

impl TargetScaling {
    /// Fits on the labelled pixels of the examples in `ids`.
    pub fn fit(labels: &[Vec<f32>], ids: &[usize]) -> Self {
        let values = || ids.iter().flat_map(|&i| labels[i].iter()).filter(|v| !v.is_nan()).map(|&v| v as f64);
        let n = values().count();
        if n == 0 {
            return Self { mean: 0.0, std: 1.0 };
        }
        let mean = values().sum::<f64>() / n as f64;
        let var = values().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn to_target(&self, v: f32) -> f32 {
        ((v as f64 - self.mean) / self.std) as f32
    }

    pub fn from_target(&self, z: f32) -> f32 {
        (self.mean + self.std * z as f64) as f32
    }
}

fn scaled_labels(data: &LoadedDataset) -> Vec<Vec<f32>> {
    let range = data.manifest.depth_range_m;
    data.stacks
        .iter()
        .map(|s| s.depth_label().data().iter().map(|&d| scale_depth(d, range)).collect())
        .collect()
}

fn network_dataset(
    cfg: &ExperimentConfig,
    data: &LoadedDataset,
    train_ids: &[usize],
    scaling: &TargetScaling,
) -> Result<Dataset<f32>> {
    let slice = cfg.single_slice(data.stacks[0].len())?;
    let inputs = InputScaling::for_config(cfg.input_norm, &data.stacks, train_ids, cfg.mode, slice)?;
    Ok(Dataset {
        inputs: data
            .stacks
            .iter()
            .map(|s| input_tensor(s, cfg.mode, slice, &inputs))
            .collect::<Result<_>>()?,
        labels: scaled_labels(data)
            .into_iter()
            .map(|l| l.into_iter().map(|v| scaling.to_target(v)).collect())
            .collect(),
        groups: data.manifest.examples.iter().map(|e| e.scene).collect(),
    })
}

/// Runs `cfg` on an already loaded dataset whose checksum is `checksum`.
pub fn run_on_dataset(cfg: &ExperimentConfig, data: &LoadedDataset, checksum: &str) -> Result<ExperimentOutcome> {
    cfg.train.validate().map_err(|e| BenchError::Config(e.to_string()))?;
    match cfg.mode {
        Mode::Classic => {
            let distances = data.manifest.focus_distances_m.clone().ok_or_else(|| {
                BenchError::Config("the classic baseline needs focus distances in the manifest".into())
            })?;
            let (train_ids, test_ids) = split_indices(&data.manifest, cfg.train.split_fraction, cfg.seed)?;
            let range = data.manifest.depth_range_m;
            let fallback = 0.5 * (range.0 + range.1);
            let mut unknown = 0;
            let preds = data
                .stacks
                .iter()
                .map(|s| {
                    let depth = dff_depth(s, &distances, &cfg.classic)?;
                    let label = s.depth_label();
                    let full = Roi::full(depth.width(), depth.height());
                    let sampled = crop_resize(&depth, full, (label.width(), label.height()))?;
                    Ok(flatten_depth(&sampled)
                        .into_iter()
                        .map(|d| {
                            let d = if d.is_nan() {
                                unknown += 1;
                                fallback
                            } else {
                                d
                            };
                            scale_depth(d, range)
                        })
                        .collect())
                })
                .collect::<focal_core::Result<Vec<Vec<f32>>>>()?;
            let mut notes = vec![];
            if unknown > 0 {
                notes.push(format!(
                    "{unknown} low-contrast pixels had no focus peak and were assigned the mid-range depth {fallback} m"
                ));
            }
            let report = build_report(cfg, data, checksum, &preds, &train_ids, &test_ids, vec![], notes);
            Ok(ExperimentOutcome { report, model: None })
        }
        Mode::Single | Mode::Stack => {
            let spec = model_spec(cfg, data)?;
            let (train_ids, _) = split_indices(&data.manifest, cfg.train.split_fraction, cfg.seed)?;
            let scaling = TargetScaling::fit(&scaled_labels(data), &train_ids);
            let set = network_dataset(cfg, data, &train_ids, &scaling)?;
            let epochs = cfg.train.epochs;
            let outcome = train_with_observer(&set, &spec, &cfg.train, |epoch, loss| {
                eprintln!("[{}] epoch {}/{epochs} loss {loss:.5}", cfg.mode.name(), epoch + 1);
            })?;
            debug_assert_eq!(outcome.train_ids, train_ids);
            let preds = predict(&outcome.state, &set.inputs, &scaling)?;
            let report = build_report(
                cfg,
                data,
                checksum,
                &preds,
                &outcome.train_ids,
                &outcome.test_ids,
                outcome.history,
                vec![scaling_note(&scaling)],
            );
            Ok(ExperimentOutcome {
                report,
                model: Some(outcome.state),
            })
        }
    }
}

fn predict(state: &ModelState<f32>, inputs: &[Tensor<f32>], scaling: &TargetScaling) -> Result<Vec<Vec<f32>>> {
    inputs
        .iter()
        .map(|x| Ok(state.forward(x)?.data().iter().map(|&z| scaling.from_target(z)).collect()))
        .collect()
}

fn scaling_note(s: &TargetScaling) -> String {
    format!(
        "network targets are the scaled labels standardized with the training split's mean {} and standard deviation {}; the loss history is in those units",
        s.mean, s.std
    )
}

/// Evaluates a trained model on the dataset named by `cfg`, using the split
/// that `cfg.seed` produces.
pub fn evaluate_model(cfg: &ExperimentConfig, state: &ModelState<f32>) -> Result<EvalReport> {
    let data = load_dataset(&cfg.dataset)?;
    let checksum = dataset_checksum(&data.root, &data.manifest)?;
    let spec = model_spec(cfg, &data)?;
    if &spec != state.spec() {
        return Err(BenchError::Config(format!(
            "model expects input {:?}, dataset in {} mode gives {:?}",
            state.spec().input_shape(),
            cfg.mode.name(),
            spec.input_shape()
        )));
    }
    let (train_ids, test_ids) = split_indices(&data.manifest, cfg.train.split_fraction, cfg.seed)?;
    let scaling = TargetScaling::fit(&scaled_labels(&data), &train_ids);
    let set = network_dataset(cfg, &data, &train_ids, &scaling)?;
    let preds = predict(state, &set.inputs, &scaling)?;
    let notes = vec![scaling_note(&scaling)];
    Ok(build_report(cfg, &data, &checksum, &preds, &train_ids, &test_ids, vec![], notes))
}

#[allow(clippy::too_many_arguments)]
fn build_report(
    cfg: &ExperimentConfig,
    data: &LoadedDataset,
    checksum: &str,
    preds: &[Vec<f32>],
    train_ids: &[usize],
    test_ids: &[usize],
    loss_history: Vec<f64>,
    mut notes: Vec<String>,
) -> EvalReport {
    let range = data.manifest.depth_range_m;
    let mut rows = Vec::with_capacity(train_ids.len() + test_ids.len());
    for (ids, split) in [(train_ids, Split::Train), (test_ids, Split::Test)] {
        for &i in ids {
            let entry = &data.manifest.examples[i];
            let truth: Vec<f32> = data.stacks[i].depth_label().data().iter().map(|&d| scale_depth(d, range)).collect();
            let (pixels, mse, mae) = example_errors(&preds[i], &truth);
            rows.push(ExampleError {
                id: entry.id.clone(),
                scene: entry.scene,
                split,
                pixels,
                mse,
                mae,
            });
        }
    }
    let predictions = test_ids
        .iter()
        .take(cfg.figure_examples)
        .map(|&i| {
            let entry = &data.manifest.examples[i];
            Prediction {
                id: entry.id.clone(),
                stack_dir: entry.stack_dir.clone(),
                label_width: entry.label_width,
                label_height: entry.label_height,
                truth_m: data.stacks[i].depth_label().data().to_vec(),
                predicted_m: preds[i].iter().map(|&v| unscale_depth(v, range)).collect(),
            }
        })
        .collect();
    notes.push(
        "errors are per-pixel averages in depth scaled so that the depth range maps onto 0..255".into(),
    );
    notes.push("train/test split is by source scene, so no augmented variant of a test scene is trained on".into());
    EvalReport {
        mode: cfg.mode,
        seed: cfg.seed,
        config: cfg.clone(),
        dataset: DatasetInfo {
            root: data.root.clone(),
            sha256: checksum.to_string(),
            examples: data.manifest.examples.len(),
            scenes: data.manifest.scene_count(),
            slices: data.stacks[0].len(),
            depth_range_m: range,
            focus_distances_m: data.manifest.focus_distances_m.clone(),
        },
        train: SplitMetrics::pooled(rows.iter().filter(|r| r.split == Split::Train)),
        test: SplitMetrics::pooled(rows.iter().filter(|r| r.split == Split::Test)),
        loss_history,
        examples: rows,
        predictions,
        notes,
    }
}

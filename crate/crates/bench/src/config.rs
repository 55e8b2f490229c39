use std::path::Path;

use focal_core::classic::DffConfig;
use focal_core::lens::LensConfig;
use focal_core::preprocess::{CleanConfig, MAX_PERTURBATION};
use focal_nn::{DepthNetConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};

/// How the focal stack is turned into network input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One slice, 3 channels.
    Single,
    /// All slices concatenated, 3N channels.
    Stack,
    /// Shape-from-focus baseline, no training.
    Classic,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Single => "single",
            Mode::Stack => "stack",
            Mode::Classic => "classic",
        }
    }
}

/// How 8-bit slice intensities become network inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputNorm {
    /// Divide by 255.
    Unit,
    /// Zero mean and unit variance per color channel, fitted on the training split.
    #[default]
    Standardize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// Unique scenes to render.
    pub count: usize,
    /// Perturbed copies per scene, in addition to the original.
    pub augment: usize,
    pub slices: usize,
    /// Side of the square slices.
    pub image_size: usize,
    /// Side of the square depth labels.
    pub label_size: usize,
    /// Corner displacement of the augmentation warps, as a fraction of width.
    pub perturbation: f64,
    /// (near, far) scene depth in meters; also the focus sweep range.
    pub depth_range: (f32, f32),
    pub primitive_count: usize,
    pub texture_scale: f32,
    /// Depth cleaning applied to labels before they are written.
    pub clean: Option<CleanConfig>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 500,
            augment: 10,
            slices: 8,
            image_size: 64,
            label_size: 16,
            perturbation: 0.08,
            depth_range: (0.4, 4.0),
            primitive_count: 4,
            texture_scale: 0.6,
            clean: None,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.count == 0 {
            return bad("dataset count must be at least 1".into());
        }
        if self.slices == 0 {
            return bad("a stack needs at least one slice".into());
        }
        if self.image_size == 0 || !self.image_size.is_multiple_of(16) {
            return bad(format!("image size {} must be a positive multiple of 16", self.image_size));
        }
        if self.label_size == 0 || self.label_size > self.image_size {
            return bad(format!("label size {} must be in 1..={}", self.label_size, self.image_size));
        }
        if !(0.0..=MAX_PERTURBATION).contains(&self.perturbation) {
            return bad(format!("perturbation must be in [0, {MAX_PERTURBATION}]"));
        }
        Ok(())
    }
}

/// Everything one invocation needs. Every field has a default, so a config
/// file only lists what it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Root seed: dataset synthesis, and training (init, split, shuffling).
    pub seed: u64,
    pub mode: Mode,
    /// Slice used in single mode; defaults to the last (farthest focus).
    pub single_slice_index: Option<usize>,
    /// Training seeds run by `compare`, counted up from the root seed.
    pub compare_seeds: usize,
    /// Test examples kept in reports for heat-map figures.
    pub figure_examples: usize,
    pub input_norm: InputNorm,
    pub dataset: DatasetConfig,
    pub lens: LensConfig,
    pub train: TrainConfig,
    pub net: DepthNetConfig,
    pub classic: DffConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Stack,
            single_slice_index: None,
            compare_seeds: 3,
            figure_examples: 4,
            input_norm: InputNorm::default(),
            dataset: DatasetConfig::default(),
            lens: LensConfig::default(),
            train: TrainConfig::default(),
            net: DepthNetConfig::default(),
            classic: DffConfig::default(),
        }
    }
}

impl BenchConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.lens
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        self.train
            .validate()
            .map_err(|e| BenchError::Config(e.to_string()))?;
        if self.compare_seeds == 0 {
            return Err(BenchError::Config("compare needs at least one seed".into()));
        }
        Ok(())
    }
}

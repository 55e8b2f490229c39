//! Synthetic dataset generation and loading.
//!
//! Layout under the dataset root:
//!
//! ```text
//! manifest.json
//! examples/s0000_v00/{slice_0.png, ..., meta.json, depth.fdpt}
//! ```

use std::path::{Path, PathBuf};

use focal_core::imaging::{
    load_manifest, load_stack, save_manifest, save_stack, slice_file_name, DatasetManifest,
    ManifestEntry, DEPTH_FILE, MANIFEST_FILE, MANIFEST_FORMAT_VERSION, META_FILE,
};
use focal_core::lens::{focus_distances, gen_scene, render_stack, LensConfig, SceneConfig};
use focal_core::preprocess::{clean_depth, crop_resize, perturb_example, CleanConfig, Roi};
use focal_core::FocalStack;
use focal_nn::split_groups;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::DatasetConfig;
use crate::error::{BenchError, Result};

/// Border rendered around each example so that augmentation warps never pull
/// in pixels from outside the rendered area.
pub fn render_margin(image_size: usize, perturbation: f64) -> usize {
    if perturbation == 0.0 {
        return 0;
    }
    (perturbation * image_size as f64 / (1.0 - 2.0 * perturbation)).ceil() as usize + 1
}

fn example_id(scene: usize, variant: usize) -> String {
    format!("s{scene:04}_v{variant:02}")
}

fn crop_example(stack: &FocalStack, margin: usize, cfg: &DatasetConfig) -> Result<FocalStack> {
    let roi = Roi::inset(stack.width(), stack.height(), margin);
    let size = cfg.image_size;
    let slices = stack
        .slices()
        .iter()
        .map(|s| crop_resize(s, roi, (size, size)))
        .collect::<focal_core::Result<Vec<_>>>()?;
    let mut label = stack.depth_label().clone();
    if let Some(clean) = &cfg.clean {
        label = clean_depth(&label, clean)?;
    }
    let label = crop_resize(&label, roi, (cfg.label_size, cfg.label_size))?;
    Ok(FocalStack::new(slices, stack.focus_settings().to_vec(), label)?)
}

/// Renders `cfg.count` scenes, adds `cfg.augment` perturbed copies of each,
/// and writes the dataset under `out`. The output depends only on the
/// arguments.
pub fn generate_dataset(cfg: &DatasetConfig, lens: &LensConfig, seed: u64, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    lens.validate().map_err(|e| BenchError::Config(e.to_string()))?;
    let margin = render_margin(cfg.image_size, cfg.perturbation);
    let render = cfg.image_size + 2 * margin;
    let range = (cfg.depth_range.0 as f64, cfg.depth_range.1 as f64);
    let distances = focus_distances(cfg.slices, range).map_err(|e| BenchError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(cfg.count * (cfg.augment + 1));
    for scene in 0..cfg.count {
        let scene_cfg = SceneConfig {
            seed: rng.next_u64(),
            width: render,
            height: render,
            depth_range: cfg.depth_range,
            primitive_count: cfg.primitive_count,
            texture_scale: cfg.texture_scale,
        };
        let (sharp, depth) = gen_scene(&scene_cfg).map_err(|e| BenchError::Config(e.to_string()))?;
        let stack = render_stack(&sharp, &depth, cfg.slices, lens, range)
            .map_err(|e| BenchError::Config(e.to_string()))?;
        for variant in 0..=cfg.augment {
            let warped = if variant == 0 {
                stack.clone()
            } else {
                perturb_example(&stack, rng.next_u64(), cfg.perturbation)?
            };
            let example = crop_example(&warped, margin, cfg)?;
            let id = example_id(scene, variant);
            let stack_dir = PathBuf::from("examples").join(&id);
            save_stack(&example, &out.join(&stack_dir))?;
            examples.push(ManifestEntry {
                id,
                scene,
                variant,
                label_path: stack_dir.join(DEPTH_FILE),
                stack_dir,
                slices: cfg.slices,
                width: cfg.image_size,
                height: cfg.image_size,
                label_width: cfg.label_size,
                label_height: cfg.label_size,
            });
        }
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_FORMAT_VERSION,
        focus_distances_m: Some(distances),
        depth_range_m: cfg.depth_range,
        examples,
    };
    save_manifest(out, &manifest)?;
    Ok(manifest)
}

/// A dataset loaded into memory, examples in manifest order.
#[derive(Clone, Debug)]
pub struct LoadedDataset {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub stacks: Vec<FocalStack>,
}

pub fn load_dataset(root: &Path) -> Result<LoadedDataset> {
    let manifest = load_manifest(root)?;
    if manifest.examples.is_empty() {
        return Err(focal_core::Error::Corrupt(format!("{} lists no examples", root.join(MANIFEST_FILE).display())).into());
    }
    let stacks = manifest
        .examples
        .iter()
        .map(|e| {
            let stack = load_stack(&root.join(&e.stack_dir))?;
            let dims = (stack.len(), stack.width(), stack.height());
            let label = stack.depth_label();
            if dims != (e.slices, e.width, e.height) || (label.width(), label.height()) != (e.label_width, e.label_height) {
                return Err(focal_core::Error::Corrupt(format!("example {} does not match its manifest entry", e.id)));
            }
            Ok(stack)
        })
        .collect::<focal_core::Result<Vec<_>>>()?;
    Ok(LoadedDataset {
        root: root.to_path_buf(),
        manifest,
        stacks,
    })
}

/// SHA-256 over the manifest and every file it references, in manifest order.
pub fn dataset_checksum(root: &Path, manifest: &DatasetManifest) -> Result<String> {
    let mut files = vec![root.join(MANIFEST_FILE)];
    for e in &manifest.examples {
        let dir = root.join(&e.stack_dir);
        files.extend((0..e.slices).map(|k| dir.join(slice_file_name(k))));
        files.push(dir.join(META_FILE));
        files.push(root.join(&e.label_path));
    }
    let mut hasher = Sha256::new();
    for f in files {
        let bytes = std::fs::read(&f).map_err(|e| BenchError::io(&f, e))?;
        hasher.update((bytes.len() as u64).to_le_bytes());
        hasher.update(&bytes);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Train/test example ids. Whole scenes go to one side, so no variant of a
/// test scene is ever trained on.
pub fn split_dataset(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<(Vec<String>, Vec<String>)> {
    let (train, test) = split_indices(manifest, fraction, seed)?;
    let ids = |v: Vec<usize>| v.into_iter().map(|i| manifest.examples[i].id.clone()).collect();
    Ok((ids(train), ids(test)))
}

pub(crate) fn split_indices(manifest: &DatasetManifest, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let groups: Vec<usize> = manifest.examples.iter().map(|e| e.scene).collect();
    split_groups(&groups, fraction, seed).map_err(|e| BenchError::Config(e.to_string()))
}

/// Applies depth cleaning to every label of the dataset at `src` and writes
/// the result, with the same layout and manifest, to `out`.
pub fn preprocess_dataset(src: &Path, clean: &CleanConfig, out: &Path) -> Result<DatasetManifest> {
    let data = load_dataset(src)?;
    for (entry, stack) in data.manifest.examples.iter().zip(data.stacks) {
        let (slices, settings, label) = stack.into_parts();
        let label = clean_depth(&label, clean).map_err(|e| BenchError::Config(e.to_string()))?;
        save_stack(&FocalStack::new(slices, settings, label)?, &out.join(&entry.stack_dir))?;
    }
    save_manifest(out, &data.manifest)?;
    Ok(data.manifest)
}

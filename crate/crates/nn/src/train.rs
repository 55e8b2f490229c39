//! Mini-batch SGD with group-aware train/test splitting.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::model::{sgd_step, Gradients, Init, ModelSpec, ModelState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const SPLIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DIVERGENCE_FACTOR: f64 = 1e3;
const DIVERGENCE_EPOCHS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub split_fraction: f64,
    pub seed: u64,
    pub init: Init,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 32,
            epochs: 30,
            split_fraction: 0.85,
            seed: 0,
            init: Init::Glorot,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(NnError::Config(format!(
                "split fraction must be in (0, 1), got {}",
                self.split_fraction
            )));
        }
        if self.batch_size == 0 {
            return Err(NnError::Config("batch size must be at least 1".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(NnError::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }
}

/// Examples with their source-scene group; variants of one scene share a group.
#[derive(Clone, Debug)]
pub struct Dataset<T> {
    pub inputs: Vec<Tensor<T>>,
    pub labels: Vec<Vec<T>>,
    pub groups: Vec<usize>,
}

impl<T: Scalar> Dataset<T> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn validate(&self) -> Result<()> {
        if self.inputs.is_empty() {
            return Err(NnError::Config("dataset is empty".into()));
        }
        if self.labels.len() != self.inputs.len() || self.groups.len() != self.inputs.len() {
            return Err(NnError::Shape("inputs, labels and groups differ in length".into()));
        }
        let shape = self.inputs[0].shape();
        let label_len = self.labels[0].len();
        if self.inputs.iter().any(|x| x.shape() != shape) || self.labels.iter().any(|l| l.len() != label_len) {
            return Err(NnError::Shape("examples do not share one input and label shape".into()));
        }
        Ok(())
    }
}

/// Splits example indices so that whole groups land on one side. The number
/// of training groups is `round(fraction · groups)`, kept within
/// `1..groups` when there are at least two groups.
pub fn split_groups(groups: &[usize], fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if groups.is_empty() {
        return Err(NnError::Config("cannot split an empty dataset".into()));
    }
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(NnError::Config(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let mut unique: Vec<usize> = groups.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SPLIT_STREAM);
    unique.shuffle(&mut rng);
    let n = unique.len();
    let n_train = if n == 1 {
        1
    } else {
        ((fraction * n as f64).round() as usize).clamp(1, n - 1)
    };
    let train_groups: BTreeSet<usize> = unique[..n_train].iter().copied().collect();
    let (train, test) = (0..groups.len()).partition(|&i| train_groups.contains(&groups[i]));
    Ok((train, test))
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub state: ModelState<T>,
    /// Mean training loss of each epoch.
    pub history: Vec<f64>,
    pub train_ids: Vec<usize>,
    pub test_ids: Vec<usize>,
}

/// Examples per unit of parallel work. Fixed, so the summation order and
/// hence the result do not depend on the thread count.
const CHUNK: usize = 4;

/// Summed loss and gradients over `batch`.
fn batch_gradients<T: Scalar>(state: &ModelState<T>, data: &Dataset<T>, batch: &[usize]) -> Result<(f64, Gradients<T>)> {
    let parts = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = Gradients::zeros_like(state);
            let mut loss = 0.0;
            for &i in chunk {
                let l = state.accumulate_gradients(&data.inputs[i], &data.labels[i], &mut grads)?;
                loss += l.to_f64().unwrap_or(f64::NAN);
            }
            Ok((loss, grads))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut parts = parts.into_iter();
    let (mut loss, mut grads) = parts.next().expect("batches are nonempty");
    for (l, g) in parts {
        loss += l;
        grads.add(&g)?;
    }
    Ok((loss, grads))
}

pub fn train<T: Scalar>(data: &Dataset<T>, spec: &ModelSpec, cfg: &TrainConfig) -> Result<TrainOutcome<T>> {
    train_with_observer(data, spec, cfg, |_, _| {})
}

/// Runs [`train`], calling `observer(epoch, mean_loss)` after every epoch.
pub fn train_with_observer<T: Scalar>(
    data: &Dataset<T>,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    mut observer: impl FnMut(usize, f64),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    data.validate()?;
    if data.inputs[0].shape() != spec.input_shape() || data.labels[0].len() != spec.output_dim() {
        return Err(NnError::Shape(format!(
            "dataset examples {:?} -> {} do not fit model {:?} -> {}",
            data.inputs[0].shape(),
            data.labels[0].len(),
            spec.input_shape(),
            spec.output_dim()
        )));
    }
    let (train_ids, test_ids) = split_groups(&data.groups, cfg.split_fraction, cfg.seed)?;
    let mut state = ModelState::<T>::init_with(spec, cfg.seed, cfg.init);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SHUFFLE_STREAM);
    let lr = T::from_f64(cfg.learning_rate);

    let mut order = train_ids.clone();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut strikes = 0;
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (loss, mut grads) = batch_gradients(&state, data, batch)?;
            total += loss;
            grads.scale(T::from_f64(1.0 / batch.len() as f64));
            state = sgd_step(state, &grads, lr)?;
        }
        let mean = total / order.len() as f64;
        if !mean.is_finite() {
            return Err(NnError::NonFinite { layer: "loss".into() });
        }
        history.push(mean);
        observer(epoch, mean);
        if mean > DIVERGENCE_FACTOR * history[0] {
            strikes += 1;
            if strikes >= DIVERGENCE_EPOCHS {
                return Err(NnError::Divergence {
                    epoch,
                    loss: mean,
                    initial: history[0],
                });
            }
        } else {
            strikes = 0;
        }
    }
    Ok(TrainOutcome {
        state,
        history,
        train_ids,
        test_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hundred_groups_split_85_15() {
        let groups: Vec<usize> = (0..100).flat_map(|g| [g, g, g]).collect();
        let (train, test) = split_groups(&groups, 0.85, 4).unwrap();
        let count = |ids: &[usize]| ids.iter().map(|&i| groups[i]).collect::<BTreeSet<_>>().len();
        assert_eq!((count(&train), count(&test)), (85, 15));
        let all: BTreeSet<usize> = train.iter().chain(&test).copied().collect();
        assert_eq!(all.len(), groups.len());
        let train_groups: BTreeSet<usize> = train.iter().map(|&i| groups[i]).collect();
        assert!(test.iter().all(|&i| !train_groups.contains(&groups[i])));
    }

    #[test]
    fn split_rejects_bad_input() {
        assert!(split_groups(&[], 0.5, 0).is_err());
        assert!(split_groups(&[0, 1], 1.0, 0).is_err());
        assert!(split_groups(&[0, 1], 0.0, 0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { batch_size: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }
}

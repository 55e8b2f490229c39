//! Network description, parameters, forward pass with activation caching, and
//! reverse-mode gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layers::{
    col2im, conv_backward_cols, conv_from_cols, dense_backward_into, dense_forward, im2col,
    maxpool2x2, maxpool2x2_backward, KERNEL,
};
use crate::loss::masked_mse;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One stage of the network. Convolutions are 3×3, padding 1, stride 1 and
/// always followed by ReLU.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv { out_channels: usize },
    MaxPool,
    Flatten,
    Dense { units: usize, relu: bool },
}

/// Weight initialization. Both draw uniformly from ±bound; biases start at 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    /// bound = sqrt(6 / (fan_in + fan_out)).
    #[default]
    Glorot,
    /// bound = sqrt(6 / fan_in), which keeps activation variance steady through ReLUs.
    He,
}

impl Init {
    pub fn bound(self, fan_in: usize, fan_out: usize) -> f64 {
        match self {
            Init::Glorot => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            Init::He => (6.0 / fan_in as f64).sqrt(),
        }
    }
}

/// Channel widths of the six convolutions and the hidden dense width.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthNetConfig {
    pub conv_widths: [usize; 6],
    pub hidden: usize,
}

impl Default for DepthNetConfig {
    fn default() -> Self {
        Self {
            conv_widths: [16, 16, 32, 32, 64, 64],
            hidden: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    input_shape: [usize; 3],
    layers: Vec<LayerSpec>,
}

impl ModelSpec {
    /// Checks that every layer accepts the shape produced by the one before
    /// it, including even spatial extents at each pool, and that the network
    /// ends in a vector.
    pub fn new(input_shape: [usize; 3], layers: Vec<LayerSpec>) -> Result<Self> {
        if input_shape.contains(&0) {
            return Err(NnError::Shape(format!("empty input shape {input_shape:?}")));
        }
        let spec = Self { input_shape, layers };
        let mut shape = input_shape.to_vec();
        for (i, layer) in spec.layers.iter().enumerate() {
            let name = spec.layer_name(i);
            shape = match (*layer, shape.as_slice()) {
                (LayerSpec::Conv { out_channels }, &[_, h, w]) if out_channels > 0 => vec![out_channels, h, w],
                (LayerSpec::MaxPool, &[c, h, w]) => {
                    if h % 2 != 0 || w % 2 != 0 {
                        return Err(NnError::Shape(format!("{name} receives odd spatial dims {h}x{w}")));
                    }
                    vec![c, h / 2, w / 2]
                }
                (LayerSpec::Flatten, &[c, h, w]) => vec![c * h * w],
                (LayerSpec::Dense { units, .. }, &[_]) if units > 0 => vec![units],
                (_, s) => return Err(NnError::Shape(format!("{name} cannot take input of shape {s:?}"))),
            };
        }
        if shape.len() != 1 {
            return Err(NnError::Shape("network must end in a flat vector".into()));
        }
        Ok(spec)
    }

    /// The depth network: conv-conv-pool, conv-pool, conv-pool, conv-pool,
    /// conv, flatten, dense(ReLU), dense(linear).
    pub fn depth_net(
        input_channels: usize,
        height: usize,
        width: usize,
        output_dim: usize,
        cfg: &DepthNetConfig,
    ) -> Result<Self> {
        let c = cfg.conv_widths;
        let conv = |i: usize| LayerSpec::Conv { out_channels: c[i] };
        let layers = vec![
            conv(0),
            conv(1),
            LayerSpec::MaxPool,
            conv(2),
            LayerSpec::MaxPool,
            conv(3),
            LayerSpec::MaxPool,
            conv(4),
            LayerSpec::MaxPool,
            conv(5),
            LayerSpec::Flatten,
            LayerSpec::Dense { units: cfg.hidden, relu: true },
            LayerSpec::Dense { units: output_dim, relu: false },
        ];
        let spec = Self::new([input_channels, height, width], layers)?;
        spec.check_depth_net(output_dim)?;
        Ok(spec)
    }

    /// Verifies the 6 conv / 4 pool / 2 dense layout with a linear output of
    /// `output_dim` values.
    pub fn check_depth_net(&self, output_dim: usize) -> Result<()> {
        let count = |f: fn(&LayerSpec) -> bool| self.layers.iter().filter(|l| f(l)).count();
        let convs = count(|l| matches!(l, LayerSpec::Conv { .. }));
        let pools = count(|l| matches!(l, LayerSpec::MaxPool));
        let dense = count(|l| matches!(l, LayerSpec::Dense { .. }));
        if (convs, pools, dense) != (6, 4, 2) {
            return Err(NnError::Config(format!(
                "depth network needs 6 conv, 4 pool and 2 dense layers, got {convs}/{pools}/{dense}"
            )));
        }
        if !matches!(self.layers.last(), Some(LayerSpec::Dense { relu: false, .. })) {
            return Err(NnError::Config("final layer must be a linear dense layer".into()));
        }
        if self.output_dim() != output_dim {
            return Err(NnError::Config(format!(
                "output has {} values, label has {output_dim}",
                self.output_dim()
            )));
        }
        Ok(())
    }

    pub fn input_shape(&self) -> [usize; 3] {
        self.input_shape
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Output shape of every layer, in order.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut shape = self.input_shape.to_vec();
        self.layers
            .iter()
            .map(|layer| {
                shape = match *layer {
                    LayerSpec::Conv { out_channels } => vec![out_channels, shape[1], shape[2]],
                    LayerSpec::MaxPool => vec![shape[0], shape[1] / 2, shape[2] / 2],
                    LayerSpec::Flatten => vec![shape.iter().product()],
                    LayerSpec::Dense { units, .. } => vec![units],
                };
                shape.clone()
            })
            .collect()
    }

    pub fn output_dim(&self) -> usize {
        self.shapes().last().map_or(0, |s| s[0])
    }

    /// Human-readable name such as `conv3` or `dense1`, used in errors.
    pub fn layer_name(&self, index: usize) -> String {
        let kind = |l: &LayerSpec| std::mem::discriminant(l);
        let Some(layer) = self.layers.get(index) else {
            return format!("layer{index}");
        };
        let ordinal = self.layers[..=index].iter().filter(|l| kind(l) == kind(layer)).count();
        match layer {
            LayerSpec::Conv { .. } => format!("conv{ordinal}"),
            LayerSpec::MaxPool => format!("pool{ordinal}"),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Dense { .. } => format!("dense{ordinal}"),
        }
    }

    /// `(weight shape, bias shape)` per layer, `None` for parameter-free layers.
    pub fn param_shapes(&self) -> Vec<Option<(Vec<usize>, Vec<usize>)>> {
        let mut prev = self.input_shape.to_vec();
        let shapes = self.shapes();
        self.layers
            .iter()
            .zip(shapes)
            .map(|(layer, out)| {
                let p = match *layer {
                    LayerSpec::Conv { out_channels } => {
                        Some((vec![out_channels, prev[0], KERNEL, KERNEL], vec![out_channels]))
                    }
                    LayerSpec::Dense { units, .. } => Some((vec![units, prev[0]], vec![units])),
                    _ => None,
                };
                prev = out;
                p
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape().to_vec()),
            bias: Tensor::zeros(self.bias.shape().to_vec()),
        }
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.is_finite()
    }
}

/// Per-layer parameter gradients, aligned with [`ModelState::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    params: Vec<Option<Param<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn zeros_like(state: &ModelState<T>) -> Self {
        Self {
            params: state.params.iter().map(|p| p.as_ref().map(Param::zeros_like)).collect(),
        }
    }

    pub fn params(&self) -> &[Option<Param<T>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<Param<T>>] {
        &mut self.params
    }

    pub fn scale(&mut self, s: T) {
        for p in self.params.iter_mut().flatten() {
            for v in p.weight.data_mut().iter_mut().chain(p.bias.data_mut()) {
                *v = *v * s;
            }
        }
    }

    pub fn add(&mut self, other: &Gradients<T>) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(NnError::Shape("gradient sets differ in layer count".into()));
        }
        for (a, b) in self.params.iter_mut().zip(&other.params) {
            match (a, b) {
                (Some(a), Some(b)) => {
                    a.weight.add_scaled(&b.weight, T::one())?;
                    a.bias.add_scaled(&b.bias, T::one())?;
                }
                (None, None) => {}
                _ => return Err(NnError::Shape("gradient sets differ in layout".into())),
            }
        }
        Ok(())
    }

    /// Every gradient value, flattened in layer order (weights before biases).
    pub fn flat(&self) -> Vec<T> {
        self.params
            .iter()
            .flatten()
            .flat_map(|p| p.weight.data().iter().chain(p.bias.data()).copied())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState<T> {
    spec: ModelSpec,
    seed: u64,
    params: Vec<Option<Param<T>>>,
}

enum Cache<T> {
    Conv { cols: Vec<T>, out: Tensor<T> },
    Pool { argmax: Vec<usize>, input_shape: Vec<usize> },
    Flatten { input_shape: Vec<usize> },
    Dense { input: Tensor<T>, out: Tensor<T> },
}

impl<T: Scalar> ModelState<T> {
    /// [`Init::Glorot`] weights drawn from `seed`.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        Self::init_with(spec, seed, Init::Glorot)
    }

    /// Weights drawn from `seed` with the given scheme; biases 0. The draw is
    /// made in 64-bit, so f32 and f64 models with the same seed agree up to
    /// rounding.
    pub fn init_with(spec: &ModelSpec, seed: u64, scheme: Init) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .param_shapes()
            .into_iter()
            .map(|shapes| {
                shapes.map(|(ws, bs)| {
                    let (fan_in, fan_out) = match *ws.as_slice() {
                        [f, c, kh, kw] => (c * kh * kw, f * kh * kw),
                        [o, i] => (i, o),
                        _ => unreachable!("parameter shapes are rank 2 or 4"),
                    };
                    let bound = scheme.bound(fan_in, fan_out);
                    let n = ws.iter().product();
                    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-bound..bound))).collect();
                    Param {
                        weight: Tensor::new(ws, data).expect("length matches shape"),
                        bias: Tensor::zeros(bs),
                    }
                })
            })
            .collect();
        Self {
            spec: spec.clone(),
            seed,
            params,
        }
    }

    pub fn from_params(spec: ModelSpec, seed: u64, params: Vec<Option<Param<T>>>) -> Result<Self> {
        let expected = spec.param_shapes();
        let fits = expected.len() == params.len()
            && expected.iter().zip(&params).all(|(e, p)| match (e, p) {
                (Some((ws, bs)), Some(p)) => p.weight.shape() == ws.as_slice() && p.bias.shape() == bs.as_slice(),
                (None, None) => true,
                _ => false,
            });
        if !fits {
            return Err(NnError::Shape("parameters do not match the model spec".into()));
        }
        Ok(Self { spec, seed, params })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Option<Param<T>>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Option<Param<T>>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().flatten().map(|p| p.weight.len() + p.bias.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelState<U> {
        ModelState {
            spec: self.spec.clone(),
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|p| {
                    p.as_ref().map(|p| Param {
                        weight: p.weight.cast(),
                        bias: p.bias.cast(),
                    })
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.shape() != self.spec.input_shape {
            return Err(NnError::Shape(format!(
                "input {:?}, model expects {:?}",
                x.shape(),
                self.spec.input_shape
            )));
        }
        if !x.is_finite() {
            return Err(NnError::NonFinite { layer: "input".into() });
        }
        Ok(())
    }

    fn run(&self, x: &Tensor<T>, keep: bool) -> Result<(Tensor<T>, Vec<Cache<T>>)> {
        self.check_input(x)?;
        let mut act = x.clone();
        let mut caches = Vec::with_capacity(if keep { self.spec.layers.len() } else { 0 });
        for (i, layer) in self.spec.layers.iter().enumerate() {
            let (next, cache) = match layer {
                LayerSpec::Conv { .. } => {
                    let p = self.params[i].as_ref().expect("conv has parameters");
                    let (c, h, w) = (act.shape()[0], act.shape()[1], act.shape()[2]);
                    let cols = im2col(act.data(), c, h, w);
                    let mut out = conv_from_cols(&cols, h * w, &p.weight, &p.bias);
                    relu_in_place(&mut out);
                    let out = Tensor::new(vec![p.weight.shape()[0], h, w], out)?;
                    let cache = keep.then(|| Cache::Conv { cols, out: out.clone() });
                    (out, cache)
                }
                LayerSpec::MaxPool => {
                    let (out, argmax) = maxpool2x2(&act)?;
                    let cache = keep.then(|| Cache::Pool {
                        argmax,
                        input_shape: act.shape().to_vec(),
                    });
                    (out, cache)
                }
                LayerSpec::Flatten => {
                    let input_shape = act.shape().to_vec();
                    let n = act.len();
                    (act.reshape(vec![n])?, keep.then_some(Cache::Flatten { input_shape }))
                }
                LayerSpec::Dense { relu, .. } => {
                    let p = self.params[i].as_ref().expect("dense has parameters");
                    let mut out = dense_forward(&act, &p.weight, &p.bias)?;
                    if *relu {
                        relu_in_place(out.data_mut());
                    }
                    let cache = keep.then(|| Cache::Dense { input: act, out: out.clone() });
                    (out, cache)
                }
            };
            if !next.is_finite() {
                return Err(NnError::NonFinite {
                    layer: self.spec.layer_name(i),
                });
            }
            caches.extend(cache);
            act = next;
        }
        Ok((act, caches))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.run(x, false).map(|(out, _)| out)
    }

    /// Loss and parameter gradients for one example.
    pub fn backward(&self, x: &Tensor<T>, label: &[T]) -> Result<(T, Gradients<T>)> {
        let mut grads = Gradients::zeros_like(self);
        let loss = self.accumulate_gradients(x, label, &mut grads)?;
        Ok((loss, grads))
    }

    /// Adds this example's gradients onto `grads` and returns its loss. NaN
    /// label entries are excluded from the loss.
    pub fn accumulate_gradients(&self, x: &Tensor<T>, label: &[T], grads: &mut Gradients<T>) -> Result<T> {
        if label.len() != self.spec.output_dim() {
            return Err(NnError::Shape(format!(
                "label has {} values, model outputs {}",
                label.len(),
                self.spec.output_dim()
            )));
        }
        let (out, caches) = self.run(x, true)?;
        let (loss, g) = masked_mse(out.data(), label)?;
        let mut grad = Tensor::from_vec(g);
        for (i, cache) in caches.into_iter().enumerate().rev() {
            let gp = grads.params.get_mut(i).map(Option::as_mut);
            grad = match cache {
                Cache::Conv { cols, out } => {
                    let p = self.params[i].as_ref().expect("conv has parameters");
                    let gp = gp.flatten().ok_or_else(|| NnError::Shape("gradient layout mismatch".into()))?;
                    let dz = relu_mask(&out, grad.data());
                    let (c, h, w) = (p.weight.shape()[1], out.shape()[1], out.shape()[2]);
                    match conv_backward_cols(&cols, h * w, &p.weight, &dz, &mut gp.weight, &mut gp.bias, i > 0) {
                        Some(dcols) => Tensor::new(vec![c, h, w], col2im(&dcols, c, h, w))?,
                        None => Tensor::zeros(vec![0]),
                    }
                }
                Cache::Pool { argmax, input_shape } => maxpool2x2_backward(&grad, &argmax, &input_shape),
                Cache::Flatten { input_shape } => grad.reshape(input_shape)?,
                Cache::Dense { input, out } => {
                    let p = self.params[i].as_ref().expect("dense has parameters");
                    let gp = gp.flatten().ok_or_else(|| NnError::Shape("gradient layout mismatch".into()))?;
                    let relu = matches!(self.spec.layers[i], LayerSpec::Dense { relu: true, .. });
                    let dz = if relu { relu_mask(&out, grad.data()) } else { grad.into_data() };
                    let dx = dense_backward_into(input.data(), &p.weight, &dz, &mut gp.weight, &mut gp.bias);
                    Tensor::new(input.shape().to_vec(), dx)?
                }
            };
            let layer_ok = grad.is_finite() && grads.params[i].as_ref().is_none_or(Param::is_finite);
            if !layer_ok {
                return Err(NnError::NonFinite {
                    layer: format!("{} (backward)", self.spec.layer_name(i)),
                });
            }
        }
        Ok(loss)
    }
}

fn relu_in_place<T: Scalar>(v: &mut [T]) {
    for x in v {
        *x = x.max(T::zero());
    }
}

fn relu_mask<T: Scalar>(out: &Tensor<T>, grad: &[T]) -> Vec<T> {
    out.data()
        .iter()
        .zip(grad)
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect()
}

/// `w ← w − lr·g` for every parameter.
pub fn sgd_step<T: Scalar>(mut state: ModelState<T>, grads: &Gradients<T>, lr: T) -> Result<ModelState<T>> {
    if state.params.len() != grads.params.len() {
        return Err(NnError::Shape("gradients do not match the model".into()));
    }
    for (p, g) in state.params.iter_mut().zip(&grads.params) {
        match (p, g) {
            (Some(p), Some(g)) => {
                p.weight.add_scaled(&g.weight, -lr)?;
                p.bias.add_scaled(&g.bias, -lr)?;
            }
            (None, None) => {}
            _ => return Err(NnError::Shape("gradients do not match the model".into())),
        }
    }
    Ok(state)
}

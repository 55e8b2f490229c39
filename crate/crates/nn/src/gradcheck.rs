//! Central finite-difference checks of the analytic gradients, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, maxpool2x2,
    maxpool2x2_backward, relu, relu_backward,
};
use crate::loss::{masked_mse, mse_grad, mse_loss};
use crate::model::ModelState;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-4;

/// Gradients smaller than this are compared in absolute terms.
const SCALE_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub target: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl Probe {
    pub fn relative_error(&self) -> f64 {
        relative_error(self.analytic, self.numeric)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub probes: Vec<Probe>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.probes.iter().map(Probe::relative_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&Probe> {
        self.probes
            .iter()
            .max_by(|a, b| a.relative_error().total_cmp(&b.relative_error()))
    }

    /// Number of probes whose target name starts with `prefix`.
    pub fn count(&self, prefix: &str) -> usize {
        self.probes.iter().filter(|p| p.target.starts_with(prefix)).count()
    }

    fn merge(&mut self, other: GradCheckReport) {
        self.probes.extend(other.probes);
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(SCALE_FLOOR)
}

/// `(f(x + h·e_i) − f(x − h·e_i)) / 2h`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], index: usize, h: f64) -> f64 {
    let mut p = x.to_vec();
    p[index] = x[index] + h;
    let up = f(&p);
    p[index] = x[index] - h;
    let down = f(&p);
    (up - down) / (2.0 * h)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: Vec<usize>) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("length matches")
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn probe_tensor(
    report: &mut GradCheckReport,
    rng: &mut ChaCha8Rng,
    name: &str,
    values: &[f64],
    analytic: &[f64],
    probes: usize,
    h: f64,
    mut loss: impl FnMut(&[f64]) -> f64,
) {
    for _ in 0..probes {
        let i = rng.gen_range(0..values.len());
        report.probes.push(Probe {
            target: format!("{name}[{i}]"),
            analytic: analytic[i],
            numeric: central_difference(&mut loss, values, i, h),
        });
    }
}

fn with_data(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).expect("same shape")
}

/// Checks convolution, ReLU, max pooling, dense and MSE in isolation. Each
/// layer output is reduced to a scalar by a fixed random projection so that
/// the upstream gradient is that projection.
pub fn check_layers(seed: u64, probes: usize, h: f64) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();

    let x = random_tensor(&mut rng, vec![2, 5, 6]);
    let w = random_tensor(&mut rng, vec![3, 2, 3, 3]);
    let b = random_tensor(&mut rng, vec![3]);
    let r = random_tensor(&mut rng, vec![3, 5, 6]);
    let g = conv2d_backward(&x, &w, &r)?;
    let conv = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(conv2d_forward(x, w, b).expect("valid").data(), r.data());
    probe_tensor(&mut report, &mut rng, "conv.input", x.data(), g.input.data(), probes, h, |v| {
        conv(&with_data(x.shape(), v), &w, &b)
    });
    probe_tensor(&mut report, &mut rng, "conv.weight", w.data(), g.weight.data(), probes, h, |v| {
        conv(&x, &with_data(w.shape(), v), &b)
    });
    probe_tensor(&mut report, &mut rng, "conv.bias", b.data(), g.bias.data(), probes, h, |v| {
        conv(&x, &w, &with_data(b.shape(), v))
    });

    // Inputs kept away from the kink so ±h never crosses it.
    let x = Tensor::from_vec(
        (0..64)
            .map(|_| {
                let m: f64 = rng.gen_range(0.1..1.0);
                if rng.gen_bool(0.5) { m } else { -m }
            })
            .collect(),
    );
    let r = random_tensor(&mut rng, vec![64]);
    let g = relu_backward(&relu(&x), &r);
    probe_tensor(&mut report, &mut rng, "relu.input", x.data(), g.data(), probes, h, |v| {
        dot(relu(&Tensor::from_vec(v.to_vec())).data(), r.data())
    });

    // Distinct values 0.01 apart so ±h never reorders a pooling window.
    let mut levels: Vec<f64> = (0..2 * 6 * 8).map(|i| i as f64 * 0.01).collect();
    rand::seq::SliceRandom::shuffle(levels.as_mut_slice(), &mut rng);
    let x = Tensor::new(vec![2, 6, 8], levels)?;
    let r = random_tensor(&mut rng, vec![2, 3, 4]);
    let (_, arg) = maxpool2x2(&x)?;
    let g = maxpool2x2_backward(&r, &arg, x.shape());
    probe_tensor(&mut report, &mut rng, "pool.input", x.data(), g.data(), probes, h, |v| {
        dot(maxpool2x2(&with_data(x.shape(), v)).expect("valid").0.data(), r.data())
    });

    let x = random_tensor(&mut rng, vec![7]);
    let w = random_tensor(&mut rng, vec![4, 7]);
    let b = random_tensor(&mut rng, vec![4]);
    let r = random_tensor(&mut rng, vec![4]);
    let g = dense_backward(&x, &w, &r)?;
    let dense = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(dense_forward(x, w, b).expect("valid").data(), r.data());
    probe_tensor(&mut report, &mut rng, "dense.input", x.data(), g.input.data(), probes, h, |v| {
        dense(&Tensor::from_vec(v.to_vec()), &w, &b)
    });
    probe_tensor(&mut report, &mut rng, "dense.weight", w.data(), g.weight.data(), probes, h, |v| {
        dense(&x, &with_data(w.shape(), v), &b)
    });
    probe_tensor(&mut report, &mut rng, "dense.bias", b.data(), g.bias.data(), probes, h, |v| {
        dense(&x, &w, &Tensor::from_vec(v.to_vec()))
    });

    let pred = random_tensor(&mut rng, vec![9]);
    let target = random_tensor(&mut rng, vec![9]);
    let g = mse_grad(pred.data(), target.data())?;
    probe_tensor(&mut report, &mut rng, "mse.pred", pred.data(), &g, probes, h, |v| {
        mse_loss(v, target.data()).expect("same length")
    });

    Ok(report)
}

/// Compares every parameter tensor's analytic gradient of the example loss
/// with central differences at `probes` random entries per weight tensor and
/// per bias tensor.
pub fn check_model(
    state: &ModelState<f64>,
    x: &Tensor<f64>,
    label: &[f64],
    probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let (_, grads) = state.backward(x, label)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport::default();
    let loss_of = |s: &ModelState<f64>| -> f64 {
        let out = s.forward(x).expect("same shapes");
        masked_mse(out.data(), label).expect("same length").0
    };
    for layer in 0..state.params().len() {
        let Some(p) = &state.params()[layer] else { continue };
        let name = state.spec().layer_name(layer);
        let analytic = grads.params()[layer].as_ref().expect("same layout");
        for (part, values, g) in [
            ("weight", p.weight.data(), analytic.weight.data()),
            ("bias", p.bias.data(), analytic.bias.data()),
        ] {
            let mut sub = GradCheckReport::default();
            probe_tensor(&mut sub, &mut rng, &format!("{name}.{part}"), values, g, probes, h, |v| {
                let mut s = state.clone();
                let q = s.params_mut()[layer].as_mut().expect("same layout");
                let t = if part == "weight" { &mut q.weight } else { &mut q.bias };
                t.data_mut().copy_from_slice(v);
                loss_of(&s)
            });
            report.merge(sub);
        }
    }
    Ok(report)
}

//! Layer primitives: 3×3 same-padded convolution, ReLU, 2×2 max pooling and
//! fully connected layers, each with its backward pass.
//!
//! Convolution runs as im2col followed by a single matrix product.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// Unfolds `x` (`[c, h, w]`, zero padding 1) into a `[c·9, h·w]` matrix.
pub fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut cols = vec![T::zero(); c * TAPS * hw];
    for ch in 0..c {
        let plane = &x[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((ch * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters a `[c·9, h·w]` matrix back onto `[c, h, w]`.
pub fn col2im<T: Scalar>(cols: &[T], c: usize, h: usize, w: usize) -> Vec<T> {
    let hw = h * w;
    let mut x = vec![T::zero(); c * hw];
    for ch in 0..c {
        let plane = &mut x[ch * hw..(ch + 1) * hw];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[((ch * TAPS) + ky * KERNEL + kx) * hw..][..hw];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    let src = &row[y * w..(y + 1) * w];
                    let (d, s) = match kx {
                        0 => (&mut dst[..w - 1], &src[1..]),
                        1 => (&mut dst[..], src),
                        _ => (&mut dst[1..], &src[..w - 1]),
                    };
                    for (a, &b) in d.iter_mut().zip(s) {
                        *a = *a + b;
                    }
                }
            }
        }
    }
    x
}

fn dims3(x: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(NnError::Shape(format!("{what} expects [C, H, W], got {s:?}"))),
    }
}

fn check_conv_params<T: Scalar>(c: usize, w: &Tensor<T>, b: &Tensor<T>) -> Result<usize> {
    match *w.shape() {
        [f, wc, KERNEL, KERNEL] if wc == c && b.shape() == [f] => Ok(f),
        _ => Err(NnError::Shape(format!(
            "conv weights {:?} / bias {:?} do not fit {c} input channels",
            w.shape(),
            b.shape()
        ))),
    }
}

/// `out[F, h·w] = weights[F, c·9] · cols + bias`.
pub(crate) fn conv_from_cols<T: Scalar>(cols: &[T], hw: usize, w: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let f = w.shape()[0];
    let k = w.len() / f;
    let mut out = Vec::with_capacity(f * hw);
    for &bias in b.data() {
        out.extend(std::iter::repeat_n(bias, hw));
    }
    T::gemm(f, k, hw, w.data(), (k as isize, 1), cols, (hw as isize, 1), T::one(), &mut out, (hw as isize, 1));
    out
}

/// Accumulates weight/bias gradients from `dz` (`[F, h·w]`) and returns `d cols`
/// when `want_input` is set.
pub(crate) fn conv_backward_cols<T: Scalar>(
    cols: &[T],
    hw: usize,
    w: &Tensor<T>,
    dz: &[T],
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
    want_input: bool,
) -> Option<Vec<T>> {
    let f = w.shape()[0];
    let k = w.len() / f;
    // dW += dz · colsᵀ
    T::gemm(f, hw, k, dz, (hw as isize, 1), cols, (1, hw as isize), T::one(), dw.data_mut(), (k as isize, 1));
    for (g, row) in db.data_mut().iter_mut().zip(dz.chunks_exact(hw)) {
        *g = *g + row.iter().copied().sum::<T>();
    }
    want_input.then(|| {
        // d cols = Wᵀ · dz
        let mut dcols = vec![T::zero(); k * hw];
        T::gemm(k, f, hw, w.data(), (1, k as isize), dz, (hw as isize, 1), T::zero(), &mut dcols, (hw as isize, 1));
        dcols
    })
}

/// Same-size 3×3 cross-correlation (zero padding 1, stride 1) plus bias.
pub fn conv2d_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, wd) = dims3(x, "conv2d")?;
    let f = check_conv_params(c, w, b)?;
    let cols = im2col(x.data(), c, h, wd);
    Tensor::new(vec![f, h, wd], conv_from_cols(&cols, h * wd, w, b))
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradients of [`conv2d_forward`] given the upstream gradient `dout` (`[F, H, W]`).
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (c, h, wd) = dims3(x, "conv2d")?;
    let f = w.shape().first().copied().unwrap_or(0);
    let bias = Tensor::zeros(vec![f]);
    check_conv_params(c, w, &bias)?;
    if dout.shape() != [f, h, wd] {
        return Err(NnError::Shape(format!(
            "conv output gradient {:?}, expected {:?}",
            dout.shape(),
            [f, h, wd]
        )));
    }
    let cols = im2col(x.data(), c, h, wd);
    let mut dw = Tensor::zeros(w.shape().to_vec());
    let mut db = bias;
    let dcols = conv_backward_cols(&cols, h * wd, w, dout.data(), &mut dw, &mut db, true)
        .expect("input gradient requested");
    Ok(ConvGrads {
        input: Tensor::new(vec![c, h, wd], col2im(&dcols, c, h, wd))?,
        weight: dw,
        bias: db,
    })
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Passes `dout` where the ReLU output was positive; the subgradient at 0 is 0.
pub fn relu_backward<T: Scalar>(out: &Tensor<T>, dout: &Tensor<T>) -> Tensor<T> {
    let data = out
        .data()
        .iter()
        .zip(dout.data())
        .map(|(&o, &g)| if o > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::new(out.shape().to_vec(), data).expect("same shape")
}

/// 2×2 max pooling with stride 2. Also returns, per output, the flat input
/// index of the first (row-major) maximum.
pub fn maxpool2x2<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (c, h, w) = dims3(x, "maxpool")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::Shape(format!("maxpool needs even spatial dims, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut argmax = Vec::with_capacity(c * oh * ow);
    let data = x.data();
    for ch in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * xo;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if data[idx] > data[best] {
                        best = idx;
                    }
                }
                out.push(data[best]);
                argmax.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, argmax))
}

pub fn maxpool2x2_backward<T: Scalar>(
    dout: &Tensor<T>,
    argmax: &[usize],
    input_shape: &[usize],
) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(dout.data()) {
        d[i] = d[i] + g;
    }
    dx
}

fn check_dense<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize)> {
    match *w.shape() {
        [out, inp] if inp == x.len() && b.shape() == [out] => Ok((out, inp)),
        _ => Err(NnError::Shape(format!(
            "dense weights {:?} / bias {:?} do not fit input of {}",
            w.shape(),
            b.shape(),
            x.len()
        ))),
    }
}

/// `w · x + b` with `w` laid out as `[out, in]`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (out, inp) = check_dense(x, w, b)?;
    let mut y = b.data().to_vec();
    T::gemm(out, inp, 1, w.data(), (inp as isize, 1), x.data(), (1, 1), T::one(), &mut y, (1, 1));
    Ok(Tensor::from_vec(y))
}

pub struct DenseGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub(crate) fn dense_backward_into<T: Scalar>(
    x: &[T],
    w: &Tensor<T>,
    dz: &[T],
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
) -> Vec<T> {
    let (out, inp) = (w.shape()[0], w.shape()[1]);
    T::gemm(out, 1, inp, dz, (1, 1), x, (1, 1), T::one(), dw.data_mut(), (inp as isize, 1));
    for (g, &d) in db.data_mut().iter_mut().zip(dz) {
        *g = *g + d;
    }
    let mut dx = vec![T::zero(); inp];
    T::gemm(inp, out, 1, w.data(), (1, inp as isize), dz, (1, 1), T::zero(), &mut dx, (1, 1));
    dx
}

pub fn dense_backward<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, dout: &Tensor<T>) -> Result<DenseGrads<T>> {
    let out = w.shape().first().copied().unwrap_or(0);
    let mut db = Tensor::zeros(vec![out]);
    check_dense(x, w, &db)?;
    if dout.len() != out {
        return Err(NnError::Shape(format!("dense output gradient has {} values, expected {out}", dout.len())));
    }
    let mut dw = Tensor::zeros(w.shape().to_vec());
    let dx = dense_backward_into(x.data(), w, dout.data(), &mut dw, &mut db);
    Ok(DenseGrads {
        input: Tensor::new(x.shape().to_vec(), dx)?,
        weight: dw,
        bias: db,
    })
}

//! Forward kernels shared by the tape and by inference-only code paths.

use super::array::NumArray;
use crate::error::{Error, Result};

/// Floor applied to probabilities before taking a logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for r in 0..n {
        let orow = &mut out[r * m..(r + 1) * m];
        for (kk, &av) in a[r * k..(r + 1) * k].iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let brow = &b[kk * m..(kk + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

pub fn matmul(a: &NumArray, b: &NumArray) -> Result<NumArray> {
    let (n, k) = (a.rows(), a.cols());
    let (k2, m) = (b.rows(), b.cols());
    if k != k2 {
        return Err(Error::dims("matmul inner dimensions", a.shape(), b.shape()));
    }
    NumArray::matrix(n, m, matmul_raw(a.data(), b.data(), n, k, m))
}

/// `x · W + b` with `b` broadcast over rows.
pub fn linear_forward(x: &NumArray, w: &NumArray, b: &NumArray) -> Result<NumArray> {
    let mut out = matmul(x, w)?;
    if b.len() != out.cols() {
        return Err(Error::dims("linear bias", w.shape(), b.shape()));
    }
    let m = out.cols();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += b.data()[i % m];
    }
    Ok(out)
}

/// Numerically stable softmax of a single vector.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Domain("softmax of an empty vector".into()));
    }
    Ok(softmax_unchecked(v))
}

pub(crate) fn softmax_unchecked(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|&x| (x - max).exp()).collect();
    let z: f64 = out.iter().sum();
    for o in &mut out {
        *o /= z;
    }
    out
}

/// Row-wise softmax of a 2-D array.
pub fn softmax_rows(a: &NumArray) -> NumArray {
    let c = a.cols();
    let mut data = Vec::with_capacity(a.len());
    for r in 0..a.rows() {
        data.extend(softmax_unchecked(&a.data()[r * c..(r + 1) * c]));
    }
    NumArray::new(a.shape().to_vec(), data).expect("same shape")
}

pub(crate) fn check_conv_shapes(input: &NumArray, kernel: &NumArray) -> Result<()> {
    if kernel.rows() != 3 || kernel.cols() != 3 {
        return Err(Error::Dimension(format!(
            "kernel must be 3x3, got {:?}",
            kernel.shape()
        )));
    }
    if input.rows() < 3 || input.cols() < 3 {
        return Err(Error::Dimension(format!(
            "input {:?} is smaller than the 3x3 kernel",
            input.shape()
        )));
    }
    Ok(())
}

/// Valid 3×3 cross-correlation with stride 1, no activation.
pub(crate) fn conv2d_raw(input: &NumArray, kernel: &[f64], bias: f64) -> NumArray {
    let (h, w) = (input.rows(), input.cols());
    let (oh, ow) = (h - 2, w - 2);
    let x = input.data();
    let mut out = vec![bias; oh * ow];
    for a in 0..3 {
        for b in 0..3 {
            let k = kernel[a * 3 + b];
            if k == 0.0 {
                continue;
            }
            for i in 0..oh {
                let src = &x[(i + a) * w + b..(i + a) * w + b + ow];
                let dst = &mut out[i * ow..(i + 1) * ow];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d += k * s;
                }
            }
        }
    }
    NumArray::matrix(oh, ow, out).expect("conv output shape")
}

/// Valid 3×3 convolution followed by ReLU.
pub fn conv2d_forward(input: &NumArray, kernel: &NumArray, bias: f64) -> Result<NumArray> {
    check_conv_shapes(input, kernel)?;
    Ok(conv2d_raw(input, kernel.data(), bias).map(relu))
}

/// Maximum element and the index of its first occurrence.
pub fn global_max_pool(values: &[f64]) -> Result<(f64, usize)> {
    let mut it = values.iter().copied().enumerate();
    let (mut idx, mut best) = it
        .next()
        .ok_or_else(|| Error::Domain("max pool over an empty map".into()))?;
    for (i, v) in it {
        if v > best {
            best = v;
            idx = i;
        }
    }
    Ok((best, idx))
}

/// `-ln(max(probs[target], 1e-12))`.
pub fn cross_entropy_loss(probs: &[f64], target: usize) -> Result<f64> {
    if target >= probs.len() {
        return Err(Error::Domain(format!(
            "target class {target} out of range for {} classes",
            probs.len()
        )));
    }
    Ok(-probs[target].max(LOG_FLOOR).ln())
}

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

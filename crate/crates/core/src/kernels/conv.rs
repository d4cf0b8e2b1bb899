//! 2D convolution (cross-correlation convention), stride 1, symmetric
//! zero padding. Forward and backward are built on an im2col patch
//! matrix and the flat matrix products in `matmul`.

use rayon::prelude::*;

use super::matmul::{matmul_nn, matmul_nt, matmul_tn};
use super::LayerGrad;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Output spatial extent for stride-1 convolution.
fn out_extent(input: usize, kernel: usize, padding: usize) -> Result<usize> {
    let numer = input + 2 * padding;
    if numer < kernel {
        return Err(Error::Dimension(format!(
            "kernel {kernel} does not fit input extent {input} with padding {padding}"
        )));
    }
    Ok(numer - kernel + 1)
}

fn check_shapes(input: &Tensor, weight: &Tensor, bias: &[f64]) -> Result<(usize, usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let (f, wc, kh, kw) = weight.dims4()?;
    if wc != c {
        return Err(Error::Dimension(format!(
            "input has {c} channels but weight expects {wc}"
        )));
    }
    if bias.len() != f {
        return Err(Error::Dimension(format!(
            "bias length {} does not match {f} filters",
            bias.len()
        )));
    }
    Ok((n, c, h, w, f, kh, kw))
}

/// Copies the receptive-field patches of one sample into a
/// (C·KH·KW) × (OH·OW) column matrix. Out-of-bounds taps read as zero.
#[allow(clippy::too_many_arguments)]
fn im2col(
    sample: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f64],
) {
    let ohw = oh * ow;
    for ch in 0..c {
        let plane = &sample[ch * h * w..(ch + 1) * h * w];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = (ch * kh + dy) * kw + dx;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                for oy in 0..oh {
                    let iy = (oy + dy) as isize - padding as isize;
                    let dst_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst_row.fill(0.0);
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst_row.iter_mut().enumerate() {
                        let ix = (ox + dx) as isize - padding as isize;
                        *d = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-adds an im2col-shaped gradient back onto the input plane.
#[allow(clippy::too_many_arguments)]
fn col2im(
    cols_grad: &[f64],
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    padding: usize,
    oh: usize,
    ow: usize,
    sample_grad: &mut [f64],
) {
    let ohw = oh * ow;
    for ch in 0..c {
        let plane = &mut sample_grad[ch * h * w..(ch + 1) * h * w];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = (ch * kh + dy) * kw + dx;
                let src = &cols_grad[row * ohw..(row + 1) * ohw];
                for oy in 0..oh {
                    let iy = (oy + dy) as isize - padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    let src_row = &src[oy * ow..(oy + 1) * ow];
                    for (ox, &g) in src_row.iter().enumerate() {
                        let ix = (ox + dx) as isize - padding as isize;
                        if ix >= 0 && ix < w as isize {
                            dst_row[ix as usize] += g;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlates `input` (N×C×H×W) with `weight` (F×C×KH×KW), adding a
/// per-filter bias. Stride is 1; `padding` pads both spatial borders.
pub fn conv2d_forward(
    input: &Tensor,
    weight: &Tensor,
    bias: &[f64],
    padding: usize,
) -> Result<Tensor> {
    let (n, c, h, w, f, kh, kw) = check_shapes(input, weight, bias)?;
    let oh = out_extent(h, kh, padding)?;
    let ow = out_extent(w, kw, padding)?;
    let (ckk, ohw) = (c * kh * kw, oh * ow);

    let mut out = Tensor::zeros(vec![n, f, oh, ow]);
    let in_stride = c * h * w;
    let out_stride = f * ohw;
    let in_data = input.data();
    let w_data = weight.data();

    out.data_mut()
        .par_chunks_mut(out_stride)
        .enumerate()
        .for_each(|(s, out_s)| {
            let mut cols = vec![0.0; ckk * ohw];
            let sample = &in_data[s * in_stride..(s + 1) * in_stride];
            im2col(sample, c, h, w, kh, kw, padding, oh, ow, &mut cols);
            matmul_nn(w_data, &cols, f, ckk, ohw, out_s);
            for (fi, b) in bias.iter().enumerate() {
                for v in &mut out_s[fi * ohw..(fi + 1) * ohw] {
                    *v += b;
                }
            }
        });
    Ok(out)
}

/// Gradients of a stride-1 convolution: input gradient plus `weight` and
/// `bias` parameter gradients. Weight gradients are accumulated per sample
/// and reduced in sample order, so the result does not depend on thread
/// count.
pub fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    out_grad: &Tensor,
    padding: usize,
) -> Result<LayerGrad> {
    let (n, c, h, w, f, kh, kw) = check_shapes(input, weight, &vec![0.0; weight.shape()[0]])?;
    let oh = out_extent(h, kh, padding)?;
    let ow = out_extent(w, kw, padding)?;
    let (ckk, ohw) = (c * kh * kw, oh * ow);
    if out_grad.shape() != [n, f, oh, ow] {
        return Err(Error::Dimension(format!(
            "out_grad shape {:?} does not match forward output [{n}, {f}, {oh}, {ow}]",
            out_grad.shape()
        )));
    }

    let in_stride = c * h * w;
    let out_stride = f * ohw;
    let in_data = input.data();
    let w_data = weight.data();
    let og_data = out_grad.data();

    let mut input_grad = Tensor::zeros(input.shape().to_vec());

    // Per-sample weight/bias partials, computed in parallel alongside the
    // (disjoint) input-gradient slices, then summed sequentially.
    let partials: Vec<(Vec<f64>, Vec<f64>)> = input_grad
        .data_mut()
        .par_chunks_mut(in_stride)
        .enumerate()
        .map(|(s, ig_s)| {
            let sample = &in_data[s * in_stride..(s + 1) * in_stride];
            let og_s = &og_data[s * out_stride..(s + 1) * out_stride];

            let mut cols = vec![0.0; ckk * ohw];
            im2col(sample, c, h, w, kh, kw, padding, oh, ow, &mut cols);

            // dW_s = dOut_s (F×OHW) · cols^T (OHW×CKK)
            let mut wg = vec![0.0; f * ckk];
            matmul_nt(og_s, &cols, f, ohw, ckk, &mut wg);

            let mut bg = vec![0.0; f];
            for (fi, b) in bg.iter_mut().enumerate() {
                *b = og_s[fi * ohw..(fi + 1) * ohw].iter().sum();
            }

            // dCols = W^T (CKK×F) · dOut_s (F×OHW), scattered back to the input.
            let mut cols_grad = vec![0.0; ckk * ohw];
            matmul_tn(w_data, og_s, ckk, f, ohw, &mut cols_grad);
            col2im(&cols_grad, c, h, w, kh, kw, padding, oh, ow, ig_s);

            (wg, bg)
        })
        .collect();

    let mut weight_grad = Tensor::zeros(weight.shape().to_vec());
    let mut bias_grad = Tensor::zeros(vec![f]);
    for (wg, bg) in &partials {
        for (a, b) in weight_grad.data_mut().iter_mut().zip(wg) {
            *a += b;
        }
        for (a, b) in bias_grad.data_mut().iter_mut().zip(bg) {
            *a += b;
        }
    }

    Ok(LayerGrad::new(input_grad)
        .with_param("weight", weight_grad)
        .with_param("bias", bias_grad))
}

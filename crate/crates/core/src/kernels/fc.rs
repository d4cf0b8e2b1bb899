//! Fully connected layer on N×M feature matrices: `out = input · W + b`
//! with `W` stored M×S (input features by output units).

use super::matmul::{matmul_nn, matmul_nt, matmul_tn};
use super::LayerGrad;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check_shapes(input: &Tensor, weight: &Tensor, bias: Option<&[f64]>) -> Result<(usize, usize, usize)> {
    let (n, m) = input.dims2()?;
    let (wm, s) = weight.dims2()?;
    if wm != m {
        return Err(Error::Dimension(format!(
            "input has {m} features but weight expects {wm}"
        )));
    }
    if let Some(b) = bias {
        if b.len() != s {
            return Err(Error::Dimension(format!(
                "bias length {} does not match {s} output units",
                b.len()
            )));
        }
    }
    Ok((n, m, s))
}

pub fn fc_forward(input: &Tensor, weight: &Tensor, bias: Option<&[f64]>) -> Result<Tensor> {
    let (n, m, s) = check_shapes(input, weight, bias)?;
    let mut out = Tensor::zeros(vec![n, s]);
    matmul_nn(input.data(), weight.data(), n, m, s, out.data_mut());
    if let Some(b) = bias {
        for row in out.data_mut().chunks_mut(s) {
            for (v, bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
    }
    Ok(out)
}

/// Input, weight, and (when present) bias gradients. The bias gradient is
/// the column sum of `out_grad`.
pub fn fc_backward(
    input: &Tensor,
    weight: &Tensor,
    out_grad: &Tensor,
    has_bias: bool,
) -> Result<LayerGrad> {
    let (n, m, s) = check_shapes(input, weight, None)?;
    if out_grad.shape() != [n, s] {
        return Err(Error::Dimension(format!(
            "out_grad shape {:?} does not match output [{n}, {s}]",
            out_grad.shape()
        )));
    }

    let mut input_grad = Tensor::zeros(vec![n, m]);
    matmul_nt(out_grad.data(), weight.data(), n, s, m, input_grad.data_mut());

    let mut weight_grad = Tensor::zeros(vec![m, s]);
    matmul_tn(input.data(), out_grad.data(), m, n, s, weight_grad.data_mut());

    let mut grad = LayerGrad::new(input_grad).with_param("weight", weight_grad);
    if has_bias {
        let mut bias_grad = Tensor::zeros(vec![s]);
        let bg = bias_grad.data_mut();
        for row in out_grad.data().chunks(s) {
            for (b, g) in bg.iter_mut().zip(row) {
                *b += g;
            }
        }
        grad = grad.with_param("bias", bias_grad);
    }
    Ok(grad)
}

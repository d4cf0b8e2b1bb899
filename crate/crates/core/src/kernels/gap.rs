//! Global average pooling: collapses each feature map to its spatial mean,
//! turning N×C×H×W activations into an N×C matrix of channel descriptors.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn gap_forward(input: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = input.dims4()?;
    let plane = h * w;
    let mut out = Tensor::zeros(vec![n, c]);
    let data = input.data();
    for (p, o) in out.data_mut().iter_mut().enumerate() {
        *o = data[p * plane..(p + 1) * plane].iter().sum::<f64>() / plane as f64;
    }
    Ok(out)
}

/// Spreads each pooled gradient uniformly over its H×W source plane.
pub fn gap_backward(input_shape: &[usize], out_grad: &Tensor) -> Result<Tensor> {
    if input_shape.len() != 4 {
        return Err(Error::Dimension(format!(
            "expected a rank-4 input shape, got {input_shape:?}"
        )));
    }
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    if out_grad.shape() != [n, c] {
        return Err(Error::Dimension(format!(
            "out_grad shape {:?} does not match pooled shape [{n}, {c}]",
            out_grad.shape()
        )));
    }
    let plane = h * w;
    let scale = 1.0 / plane as f64;
    let mut input_grad = Tensor::zeros(input_shape.to_vec());
    let ig = input_grad.data_mut();
    for (p, &g) in out_grad.data().iter().enumerate() {
        let v = g * scale;
        for x in &mut ig[p * plane..(p + 1) * plane] {
            *x = v;
        }
    }
    Ok(input_grad)
}

//! 2×2 max pooling with stride 2. The forward pass records, for every
//! pooled value, the flat index of the winning input element; the backward
//! pass routes gradient only to those indices. Ties go to the first
//! element in row-major scan order.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Pooled output together with the winner index of each output element.
pub struct PoolOutput {
    pub output: Tensor,
    /// Flat indices into the input's data buffer, one per output element.
    pub argmax: Vec<usize>,
}

pub fn maxpool2_forward(input: &Tensor) -> Result<PoolOutput> {
    let (n, c, h, w) = input.dims4()?;
    if h < 2 || w < 2 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Dimension(format!(
            "2x2 stride-2 pooling needs even spatial extents of at least 2, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut output = Tensor::zeros(vec![n, c, oh, ow]);
    let mut argmax = vec![0usize; n * c * oh * ow];
    let data = input.data();

    let in_plane = h * w;
    let out_plane = oh * ow;
    output
        .data_mut()
        .par_chunks_mut(out_plane)
        .zip(argmax.par_chunks_mut(out_plane))
        .enumerate()
        .for_each(|(p, (out_p, arg_p))| {
            let base = p * in_plane;
            let plane = &data[base..base + in_plane];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best_idx = (2 * oy) * w + 2 * ox;
                    let mut best = plane[best_idx];
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = (2 * oy + dy) * w + (2 * ox + dx);
                            if plane[idx] > best {
                                best = plane[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out_p[oy * ow + ox] = best;
                    arg_p[oy * ow + ox] = base + best_idx;
                }
            }
        });
    Ok(PoolOutput { output, argmax })
}

/// Scatters `out_grad` back to the recorded winner positions.
pub fn maxpool2_backward(
    input_shape: &[usize],
    argmax: &[usize],
    out_grad: &Tensor,
) -> Result<Tensor> {
    if out_grad.len() != argmax.len() {
        return Err(Error::Dimension(format!(
            "out_grad has {} elements but {} winners were recorded",
            out_grad.len(),
            argmax.len()
        )));
    }
    let mut input_grad = Tensor::zeros(input_shape.to_vec());
    let ig = input_grad.data_mut();
    for (&idx, &g) in argmax.iter().zip(out_grad.data()) {
        ig[idx] += g;
    }
    Ok(input_grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_window_maxima() {
        let input = Tensor::new(
            vec![1, 1, 4, 4],
            vec![
                1.0, 2.0, 5.0, 6.0, //
                3.0, 4.0, 7.0, 8.0, //
                -1.0, -2.0, 0.0, 0.0, //
                -3.0, -4.0, 0.0, 9.0,
            ],
        )
        .unwrap();
        let pooled = maxpool2_forward(&input).unwrap();
        assert_eq!(pooled.output.shape(), &[1, 1, 2, 2]);
        assert_eq!(pooled.output.data(), &[4.0, 8.0, -1.0, 9.0]);
    }

    #[test]
    fn ties_go_to_the_first_row_major_element() {
        let input = Tensor::full(vec![1, 1, 2, 2], 3.0);
        let pooled = maxpool2_forward(&input).unwrap();
        assert_eq!(pooled.argmax, vec![0]);
    }

    #[test]
    fn backward_routes_gradient_to_winners_only() {
        let input = Tensor::new(
            vec![1, 1, 2, 4],
            vec![1.0, 2.0, 8.0, 7.0, 3.0, 4.0, 5.0, 6.0],
        )
        .unwrap();
        let pooled = maxpool2_forward(&input).unwrap();
        let out_grad = Tensor::new(vec![1, 1, 1, 2], vec![10.0, 20.0]).unwrap();
        let ig = maxpool2_backward(input.shape(), &pooled.argmax, &out_grad).unwrap();
        assert_eq!(
            ig.data(),
            &[0.0, 0.0, 20.0, 0.0, 0.0, 10.0, 0.0, 0.0]
        );
    }

    #[test]
    fn odd_extents_are_a_dimension_error() {
        let input = Tensor::zeros(vec![1, 1, 3, 4]);
        assert!(matches!(
            maxpool2_forward(&input),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn too_small_input_is_a_dimension_error() {
        let input = Tensor::zeros(vec![1, 1, 1, 4]);
        assert!(matches!(
            maxpool2_forward(&input),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn constant_input_pools_to_the_constant() {
        let input = Tensor::full(vec![2, 3, 4, 4], 0.75);
        let pooled = maxpool2_forward(&input).unwrap();
        assert!(pooled.output.data().iter().all(|&v| v == 0.75));
    }
}

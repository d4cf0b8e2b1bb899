//! Parameterized layer types that wrap the raw kernels: convolution,
//! batch normalization, and the activation choices (plain ReLU or the
//! learnable piecewise family).

use rand::Rng;

use crate::error::Result;
use crate::grelu::{GReluGrads, GReluLayer};
use crate::kernels::{
    batchnorm_backward, batchnorm_forward, conv2d_backward, conv2d_forward, BnCache, LayerGrad,
    Mode,
};
use crate::tensor::Tensor;

/// Stride-1 convolution layer with symmetric zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Vec<f64>,
    pub padding: usize,
}

impl Conv2d {
    /// Symmetric uniform initialization in ±sqrt(6 / (fan_in + fan_out)).
    pub fn new<R: Rng>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let fan_out = (out_channels * kernel * kernel) as f64;
        let bound = (6.0 / (fan_in + fan_out)).sqrt();
        Self {
            weight: Tensor::uniform(
                vec![out_channels, in_channels, kernel, kernel],
                -bound,
                bound,
                rng,
            ),
            bias: vec![0.0; out_channels],
            padding,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        conv2d_forward(input, &self.weight, &self.bias, self.padding)
    }

    pub fn backward(&self, input: &Tensor, out_grad: &Tensor) -> Result<LayerGrad> {
        conv2d_backward(input, &self.weight, out_grad, self.padding)
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// Per-channel batch normalization with running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

impl BatchNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, Option<BnCache>)> {
        batchnorm_forward(
            input,
            &self.gamma,
            &self.beta,
            &mut self.running_mean,
            &mut self.running_var,
            self.eps,
            self.momentum,
            mode,
        )
    }

    pub fn backward(&self, cache: &BnCache, out_grad: &Tensor) -> Result<LayerGrad> {
        batchnorm_backward(cache, &self.gamma, out_grad)
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

/// The block activation: exact ReLU for the baseline, or the learnable
/// piecewise family.
#[derive(Clone, Debug, PartialEq)]
pub enum Activation {
    Relu,
    GRelu(GReluLayer),
}

impl Activation {
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Relu => Ok(input.map(|v| v.max(0.0))),
            Activation::GRelu(layer) => layer.forward(input),
        }
    }

    pub fn backward_input(&self, input: &Tensor, out_grad: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Relu => {
                let mut out = Tensor::zeros(input.shape().to_vec());
                for ((o, &x), &g) in out
                    .data_mut()
                    .iter_mut()
                    .zip(input.data())
                    .zip(out_grad.data())
                {
                    *o = if x > 0.0 { g } else { 0.0 };
                }
                Ok(out)
            }
            Activation::GRelu(layer) => layer.backward_input(input, out_grad),
        }
    }

    /// Parameter gradients for the learnable variant; empty for ReLU.
    pub fn grads(&self, input: &Tensor, out_grad: &Tensor) -> Result<Vec<GReluGrads>> {
        match self {
            Activation::Relu => Ok(Vec::new()),
            Activation::GRelu(layer) => layer.grads(input, out_grad),
        }
    }

    /// Count of scalars that actually train under the current learn mode.
    pub fn learnable_count(&self) -> usize {
        match self {
            Activation::Relu => 0,
            Activation::GRelu(layer) => layer
                .units()
                .iter()
                .map(|u| match u.learn_mode {
                    crate::grelu::LearnMode::All => 4 * u.n(),
                    crate::grelu::LearnMode::NegSlopesOnly => u.n(),
                    crate::grelu::LearnMode::Frozen => 0,
                })
                .sum(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::fd_gradient;
    use crate::grelu::GReluParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_init_respects_fan_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::new(3, 8, 3, 1, &mut rng);
        let bound = (6.0 / ((3 * 9 + 8 * 9) as f64)).sqrt();
        assert!(conv.weight.data().iter().all(|v| v.abs() <= bound));
        assert!(conv.bias.iter().all(|&b| b == 0.0));
        assert_eq!(conv.param_count(), 8 * 3 * 9 + 8);
    }

    #[test]
    fn relu_forward_and_gradient() {
        let x = Tensor::new(vec![4], vec![-2.0, -0.5, 0.5, 3.0]).unwrap();
        let act = Activation::Relu;
        let y = act.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 0.5, 3.0]);
        let g = Tensor::full(vec![4], 1.0);
        let ig = act.backward_input(&x, &g).unwrap();
        assert_eq!(ig.data(), &[0.0, 0.0, 1.0, 1.0]);

        let num = fd_gradient(
            |t| {
                let xt = Tensor::new(vec![4], t.to_vec()).unwrap();
                Ok(act.forward(&xt).unwrap().data().iter().sum())
            },
            x.data(),
            1e-6,
        )
        .unwrap();
        for (a, n) in ig.data().iter().zip(&num) {
            assert!((a - n).abs() < 1e-6);
        }
    }

    #[test]
    fn learnable_counts_depend_on_mode() {
        assert_eq!(Activation::Relu.learnable_count(), 0);
        let full = Activation::GRelu(GReluLayer::shared(GReluParams::default_init()));
        assert_eq!(full.learnable_count(), 8);
        let frozen = Activation::GRelu(GReluLayer::shared(crate::grelu::make_degenerate(
            crate::grelu::DegenerateKind::Relu,
        )));
        assert_eq!(frozen.learnable_count(), 0);
        let prelu = Activation::GRelu(GReluLayer::shared(crate::grelu::make_degenerate(
            crate::grelu::DegenerateKind::PRelu(0.25),
        )));
        assert_eq!(prelu.learnable_count(), 1);
    }

    #[test]
    fn batchnorm_layer_round_trips_through_kernel() {
        let mut bn = BatchNorm::new(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform(vec![4, 2, 3, 3], -1.0, 1.0, &mut rng);
        let (y, cache) = bn.forward(&x, Mode::Train).unwrap();
        assert!(cache.is_some());
        assert_eq!(y.shape(), x.shape());
        let (y2, cache2) = bn.forward(&x, Mode::Eval).unwrap();
        assert!(cache2.is_none());
        assert_eq!(y2.shape(), x.shape());
        assert_eq!(bn.param_count(), 4);
    }
}

//! Block-chain networks with globally connected classifier taps.
//!
//! Every block is conv -> batchnorm -> activation, optionally followed by
//! 2x2 max pooling. In the `Global` topology the classifier reads the
//! concatenated global-average-pooled output of every block, so each
//! block receives loss gradient both directly from the classifier and
//! cascaded back through the blocks above it. `LastOnly` is the
//! conventional arrangement: only the final block feeds the classifier.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grelu::{GReluGrads, GReluLayer, GReluParams};
use crate::kernels::{
    fc_backward, fc_forward, gap_backward, gap_forward, maxpool2_backward, maxpool2_forward,
    BnCache, Mode,
};
use crate::layers::{Activation, BatchNorm, Conv2d};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Topology {
    /// Every block's pooled features feed the classifier.
    Global,
    /// Only the last block feeds the classifier.
    LastOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActivationKind {
    GRelu,
    Relu,
}

/// One unit of the chain. `pool_after` applies 2x2/2 max pooling between
/// this block and the next; the classifier tap is always taken from the
/// activation output, before any pooling.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub conv: Conv2d,
    pub bn: BatchNorm,
    pub act: Activation,
    pub pool_after: bool,
}

impl Block {
    pub fn new(conv: Conv2d, bn: BatchNorm, act: Activation, pool_after: bool) -> Self {
        Self {
            conv,
            bn,
            act,
            pool_after,
        }
    }

    /// Channel count of the block output, which is also its tap width.
    pub fn tap_width(&self) -> usize {
        self.conv.out_channels()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    /// Feature-width by class-count weight matrix.
    pub weight: Tensor,
    pub bias: Option<Vec<f64>>,
}

impl Classifier {
    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }
}

/// Joins per-block N×m_i feature matrices into one N×Σm_i matrix,
/// first block first.
pub fn concat_features(parts: &[Tensor]) -> Result<Tensor> {
    if parts.is_empty() {
        return Err(Error::Dimension("nothing to concatenate".to_string()));
    }
    let n = parts[0].dims2()?.0;
    let mut widths = Vec::with_capacity(parts.len());
    for p in parts {
        let (pn, w) = p.dims2()?;
        if pn != n {
            return Err(Error::Dimension(format!(
                "feature parts disagree on batch size: {pn} vs {n}"
            )));
        }
        widths.push(w);
    }
    let m: usize = widths.iter().sum();
    let mut out = Tensor::zeros(vec![n, m]);
    let o = out.data_mut();
    for s in 0..n {
        let mut offset = 0;
        for (part, &w) in parts.iter().zip(&widths) {
            o[s * m + offset..s * m + offset + w].copy_from_slice(&part.data()[s * w..(s + 1) * w]);
            offset += w;
        }
    }
    Ok(out)
}

/// Splits an N×Σwidths matrix back into per-block slices; exact inverse
/// of `concat_features`.
pub fn split_features(t: &Tensor, widths: &[usize]) -> Result<Vec<Tensor>> {
    let (n, m) = t.dims2()?;
    if widths.iter().sum::<usize>() != m {
        return Err(Error::Dimension(format!(
            "slice widths {widths:?} do not sum to feature width {m}"
        )));
    }
    let mut parts = Vec::with_capacity(widths.len());
    let mut offset = 0;
    for &w in widths {
        let mut part = Tensor::zeros(vec![n, w]);
        for s in 0..n {
            part.data_mut()[s * w..(s + 1) * w]
                .copy_from_slice(&t.data()[s * m + offset..s * m + offset + w]);
        }
        parts.push(part);
        offset += w;
    }
    Ok(parts)
}

pub(crate) struct BlockCache {
    conv_in: Tensor,
    bn_cache: Option<BnCache>,
    act_in: Tensor,
    block_out: Tensor,
    pool_argmax: Option<Vec<usize>>,
}

/// Everything the backward pass needs from one forward pass. Tied to the
/// parameter version it was computed with; any update invalidates it.
pub struct ForwardCache {
    version: u64,
    mode: Mode,
    pub(crate) blocks: Vec<BlockCache>,
    pub(crate) concat: Tensor,
}

impl ForwardCache {
    /// Names the first layer whose cached output contains a non-finite
    /// value, for loss-blowup diagnostics.
    pub fn first_non_finite(&self) -> Option<String> {
        for (i, bc) in self.blocks.iter().enumerate() {
            let b = i + 1;
            if !bc.conv_in.all_finite() {
                return Some(format!("block{b} input"));
            }
            if !bc.act_in.all_finite() {
                return Some(format!("block{b}.norm output"));
            }
            if !bc.block_out.all_finite() {
                return Some(format!("block{b}.act output"));
            }
        }
        if !self.concat.all_finite() {
            return Some("pooled feature concatenation".to_string());
        }
        None
    }
}

/// Per-block parameter gradients.
pub struct BlockGrads {
    pub conv_weight: Tensor,
    pub conv_bias: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
    /// One entry per activation parameter set; empty for ReLU blocks or
    /// when activation accumulation was skipped.
    pub act: Vec<GReluGrads>,
}

/// Complete gradient of the loss with respect to every parameter, plus
/// the gradients flowing into each block output (useful for analyzing
/// the two gradient paths) and into the network input.
pub struct NetGrads {
    pub blocks: Vec<BlockGrads>,
    pub classifier_weight: Tensor,
    pub classifier_bias: Option<Tensor>,
    pub block_output_grads: Vec<Tensor>,
    pub input_grad: Tensor,
}

#[derive(Clone, Copy, Debug)]
pub struct BackwardOptions {
    /// Accumulate activation parameter gradients. Off while the
    /// activation is frozen, to skip the work entirely.
    pub accumulate_act: bool,
    /// Scale on the block-to-block gradient path. 1.0 for training; 0.0
    /// isolates the direct classifier-tap path (testing knob).
    pub cascade_scale: f64,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            accumulate_act: true,
            cascade_scale: 1.0,
        }
    }
}

/// Identifies what role a parameter tensor plays, for selective weight
/// decay and update masking.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    Gamma,
    Beta,
    ActEndpoints,
    ActSlopes,
    FcWeight,
    FcBias,
}

impl ParamKind {
    /// Weight decay applies to convolution/classifier weights and the
    /// normalization affine parameters, never to biases or activation
    /// parameters.
    pub fn decays(self) -> bool {
        matches!(
            self,
            ParamKind::ConvWeight | ParamKind::Gamma | ParamKind::Beta | ParamKind::FcWeight
        )
    }

    pub fn is_activation(self) -> bool {
        matches!(self, ParamKind::ActEndpoints | ParamKind::ActSlopes)
    }
}

#[derive(Clone, Debug)]
pub struct ParamSpec {
    pub name: String,
    pub kind: ParamKind,
    pub len: usize,
}

#[derive(Clone, Debug)]
pub struct ParamReport {
    pub entries: Vec<(String, usize)>,
    pub total: usize,
}

impl ParamReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for (name, count) in &self.entries {
            s.push_str(&format!("{name:<18} {count}\n"));
        }
        s.push_str(&format!("{:<18} {}\n", "total", self.total));
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GcNet {
    pub blocks: Vec<Block>,
    pub classifier: Option<Classifier>,
    pub topology: Topology,
    pub class_count: usize,
    version: u64,
}

impl GcNet {
    /// Builds a network from finished blocks, initializing the classifier
    /// for the topology's feature width.
    pub fn new<R: Rng>(
        blocks: Vec<Block>,
        topology: Topology,
        class_count: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let mut net = Self {
            blocks,
            classifier: None,
            topology,
            class_count,
            version: 0,
        };
        let m = net.feature_width();
        if m > 0 {
            let bound = (6.0 / (m + class_count) as f64).sqrt();
            net.classifier = Some(Classifier {
                weight: Tensor::uniform(vec![m, class_count], -bound, bound, rng),
                bias: with_bias.then(|| vec![0.0; class_count]),
            });
        }
        net
    }

    pub fn empty(class_count: usize) -> Self {
        Self {
            blocks: Vec::new(),
            classifier: None,
            topology: Topology::Global,
            class_count,
            version: 0,
        }
    }

    /// Indices of the blocks whose output is tapped into the classifier.
    pub fn tap_indices(&self) -> Vec<usize> {
        match self.topology {
            Topology::Global => (0..self.blocks.len()).collect(),
            Topology::LastOnly => {
                if self.blocks.is_empty() {
                    Vec::new()
                } else {
                    vec![self.blocks.len() - 1]
                }
            }
        }
    }

    pub fn tap_widths(&self) -> Vec<usize> {
        self.tap_indices()
            .into_iter()
            .map(|i| self.blocks[i].tap_width())
            .collect()
    }

    /// Width of the concatenated feature vector the classifier consumes.
    pub fn feature_width(&self) -> usize {
        self.tap_widths().iter().sum()
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn bump_version(&mut self) {
        self.version += 1;
    }

    pub fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        let classifier = self.classifier.as_ref().ok_or_else(|| {
            Error::State("network has no classifier; it cannot produce logits".to_string())
        })?;
        let m = self.feature_width();
        if classifier.weight.shape()[0] != m {
            return Err(Error::Dimension(format!(
                "classifier expects {} features but taps provide {m}",
                classifier.weight.shape()[0]
            )));
        }

        let tap_set = self.tap_indices();
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut taps = Vec::with_capacity(tap_set.len());
        let mut cur = input.clone();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            let conv_in = cur;
            let conv_out = block.conv.forward(&conv_in)?;
            let (act_in, bn_cache) = block.bn.forward(&conv_out, mode)?;
            let block_out = block.act.forward(&act_in)?;
            if tap_set.contains(&i) {
                taps.push(gap_forward(&block_out)?);
            }
            let (next, pool_argmax) = if block.pool_after {
                let pooled = maxpool2_forward(&block_out)?;
                (pooled.output, Some(pooled.argmax))
            } else {
                (block_out.clone(), None)
            };
            caches.push(BlockCache {
                conv_in,
                bn_cache,
                act_in,
                block_out,
                pool_argmax,
            });
            cur = next;
        }

        let concat = concat_features(&taps)?;
        let logits = fc_forward(&concat, &classifier.weight, classifier.bias.as_deref())?;
        Ok((
            logits,
            ForwardCache {
                version: self.version,
                mode,
                blocks: caches,
                concat,
            },
        ))
    }

    /// Backpropagates an injected logit gradient through the whole
    /// network. Each tapped block's output receives its classifier-slice
    /// gradient spread by average-pool backward, plus the gradient
    /// cascading down from the block above; the sum then flows through
    /// activation, normalization, and convolution.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        logit_grad: &Tensor,
        opts: &BackwardOptions,
    ) -> Result<NetGrads> {
        let classifier = self
            .classifier
            .as_ref()
            .ok_or_else(|| Error::State("network has no classifier".to_string()))?;
        if cache.version != self.version {
            return Err(Error::State(format!(
                "forward cache is stale: parameters at version {} but cache at {}; rerun forward",
                self.version, cache.version
            )));
        }
        if cache.blocks.len() != self.blocks.len() {
            return Err(Error::State(format!(
                "cache holds {} blocks but the network has {}",
                cache.blocks.len(),
                self.blocks.len()
            )));
        }
        if cache.mode != Mode::Train {
            return Err(Error::State(
                "backward needs a training-mode forward cache".to_string(),
            ));
        }
        let (n, s) = logit_grad.dims2()?;
        let (cn, _) = cache.concat.dims2()?;
        if n != cn || s != self.class_count {
            return Err(Error::Dimension(format!(
                "logit_grad is {n}x{s} but the cache expects {cn}x{}",
                self.class_count
            )));
        }

        let fc_grads = fc_backward(
            &cache.concat,
            &classifier.weight,
            logit_grad,
            classifier.bias.is_some(),
        )?;
        let widths = self.tap_widths();
        let slices = split_features(&fc_grads.input_grad, &widths)?;
        let tap_set = self.tap_indices();

        let count = self.blocks.len();
        let mut block_grads: Vec<Option<BlockGrads>> = (0..count).map(|_| None).collect();
        let mut block_output_grads: Vec<Option<Tensor>> = (0..count).map(|_| None).collect();
        let mut carry: Option<Tensor> = None;
        let mut input_grad = Tensor::zeros(cache.blocks[0].conv_in.shape().to_vec());

        for i in (0..count).rev() {
            let block = &self.blocks[i];
            let bc = &cache.blocks[i];
            let mut d_out = Tensor::zeros(bc.block_out.shape().to_vec());
            if let Some(pos) = tap_set.iter().position(|&t| t == i) {
                let direct = gap_backward(bc.block_out.shape(), &slices[pos])?;
                d_out.add_scaled(&direct, 1.0)?;
            }
            if let Some(c) = carry.take() {
                let cascaded = if block.pool_after {
                    let argmax = bc.pool_argmax.as_ref().ok_or_else(|| {
                        Error::State("cache is missing pooling indices".to_string())
                    })?;
                    maxpool2_backward(bc.block_out.shape(), argmax, &c)?
                } else {
                    c
                };
                d_out.add_scaled(&cascaded, opts.cascade_scale)?;
            }

            let act_grads = if opts.accumulate_act {
                block.act.grads(&bc.act_in, &d_out)?
            } else {
                Vec::new()
            };
            let d_act_in = block.act.backward_input(&bc.act_in, &d_out)?;
            let bn_cache = bc
                .bn_cache
                .as_ref()
                .ok_or_else(|| Error::State("cache lacks normalization statistics".to_string()))?;
            let bn_grads = block.bn.backward(bn_cache, &d_act_in)?;
            let conv_grads = block.conv.backward(&bc.conv_in, &bn_grads.input_grad)?;

            block_output_grads[i] = Some(d_out);
            block_grads[i] = Some(BlockGrads {
                conv_weight: conv_grads.param_grads["weight"].clone(),
                conv_bias: conv_grads.param_grads["bias"].clone(),
                gamma: bn_grads.param_grads["gamma"].clone(),
                beta: bn_grads.param_grads["beta"].clone(),
                act: act_grads,
            });
            if i == 0 {
                input_grad = conv_grads.input_grad;
            } else {
                carry = Some(conv_grads.input_grad);
            }
        }

        Ok(NetGrads {
            blocks: block_grads.into_iter().map(|b| b.unwrap()).collect(),
            classifier_weight: fc_grads.param_grads["weight"].clone(),
            classifier_bias: fc_grads.param_grads.get("bias").cloned(),
            block_output_grads: block_output_grads.into_iter().map(|b| b.unwrap()).collect(),
            input_grad,
        })
    }

    /// Applies the activation parameter updates (plain gradient steps with
    /// ordering projection, respecting each unit's learn mode). Returns
    /// the number of projected breakpoints.
    pub fn apply_act_updates(&mut self, grads: &NetGrads, lr: f64) -> Result<usize> {
        if grads.blocks.len() != self.blocks.len() {
            return Err(Error::Dimension(format!(
                "{} gradient blocks for {} network blocks",
                grads.blocks.len(),
                self.blocks.len()
            )));
        }
        let mut moved = 0;
        for (block, bg) in self.blocks.iter_mut().zip(&grads.blocks) {
            if let Activation::GRelu(layer) = &mut block.act {
                if !bg.act.is_empty() {
                    moved += layer.apply_update(&bg.act, lr)?;
                }
            }
        }
        self.bump_version();
        Ok(moved)
    }

    /// Canonical parameter enumeration: blocks in order (conv weight,
    /// conv bias, gamma, beta, activation endpoints then slopes per unit),
    /// then classifier weight and bias.
    pub fn param_layout(&self) -> Vec<ParamSpec> {
        let mut specs = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            let b = i + 1;
            specs.push(ParamSpec {
                name: format!("block{b}.conv.weight"),
                kind: ParamKind::ConvWeight,
                len: block.conv.weight.len(),
            });
            specs.push(ParamSpec {
                name: format!("block{b}.conv.bias"),
                kind: ParamKind::ConvBias,
                len: block.conv.bias.len(),
            });
            specs.push(ParamSpec {
                name: format!("block{b}.norm.gamma"),
                kind: ParamKind::Gamma,
                len: block.bn.gamma.len(),
            });
            specs.push(ParamSpec {
                name: format!("block{b}.norm.beta"),
                kind: ParamKind::Beta,
                len: block.bn.beta.len(),
            });
            if let Activation::GRelu(layer) = &block.act {
                for (u, unit) in layer.units().iter().enumerate() {
                    let suffix = if layer.units().len() == 1 {
                        String::new()
                    } else {
                        format!(".c{u}")
                    };
                    specs.push(ParamSpec {
                        name: format!("block{b}.act{suffix}.endpoints"),
                        kind: ParamKind::ActEndpoints,
                        len: 2 * unit.n(),
                    });
                    specs.push(ParamSpec {
                        name: format!("block{b}.act{suffix}.slopes"),
                        kind: ParamKind::ActSlopes,
                        len: 2 * unit.n(),
                    });
                }
            }
        }
        if let Some(c) = &self.classifier {
            specs.push(ParamSpec {
                name: "classifier.weight".to_string(),
                kind: ParamKind::FcWeight,
                len: c.weight.len(),
            });
            if let Some(b) = &c.bias {
                specs.push(ParamSpec {
                    name: "classifier.bias".to_string(),
                    kind: ParamKind::FcBias,
                    len: b.len(),
                });
            }
        }
        specs
    }

    /// All parameters flattened in `param_layout` order.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.extend_from_slice(block.conv.weight.data());
            out.extend_from_slice(&block.conv.bias);
            out.extend_from_slice(&block.bn.gamma);
            out.extend_from_slice(&block.bn.beta);
            if let Activation::GRelu(layer) = &block.act {
                for unit in layer.units() {
                    out.extend(unit.ascending_endpoints());
                    out.extend(unit.ascending_slopes());
                }
            }
        }
        if let Some(c) = &self.classifier {
            out.extend_from_slice(c.weight.data());
            if let Some(b) = &c.bias {
                out.extend_from_slice(b);
            }
        }
        out
    }

    /// Loads a flat vector produced by (or shaped like) `flatten_params`.
    /// Invalidates outstanding forward caches.
    pub fn load_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expect: usize = self.param_layout().iter().map(|s| s.len).sum();
        if flat.len() != expect {
            return Err(Error::Dimension(format!(
                "expected {expect} parameters, got {}",
                flat.len()
            )));
        }
        let mut pos = 0;
        let mut take = |len: usize| {
            let s = &flat[pos..pos + len];
            pos += len;
            s
        };
        for block in &mut self.blocks {
            let wlen = block.conv.weight.len();
            block.conv.weight.data_mut().copy_from_slice(take(wlen));
            let blen = block.conv.bias.len();
            block.conv.bias.copy_from_slice(take(blen));
            let c = block.bn.gamma.len();
            block.bn.gamma.copy_from_slice(take(c));
            block.bn.beta.copy_from_slice(take(c));
            if let Activation::GRelu(layer) = &mut block.act {
                for unit in layer.units_mut() {
                    let half = 2 * unit.n();
                    let endpoints = take(half).to_vec();
                    let slopes = take(half).to_vec();
                    unit.set_from_ascending(&endpoints, &slopes)?;
                }
            }
        }
        if let Some(c) = &mut self.classifier {
            let wlen = c.weight.len();
            c.weight.data_mut().copy_from_slice(take(wlen));
            if let Some(b) = &mut c.bias {
                let blen = b.len();
                b.copy_from_slice(take(blen));
            }
        }
        self.bump_version();
        Ok(())
    }

    /// Gradients flattened in the same order as `flatten_params`. Blocks
    /// whose activation gradients were skipped contribute zeros there.
    pub fn flatten_grads(&self, grads: &NetGrads) -> Result<Vec<f64>> {
        if grads.blocks.len() != self.blocks.len() {
            return Err(Error::Dimension(format!(
                "{} gradient blocks for {} network blocks",
                grads.blocks.len(),
                self.blocks.len()
            )));
        }
        let mut out = Vec::new();
        for (block, bg) in self.blocks.iter().zip(&grads.blocks) {
            out.extend_from_slice(bg.conv_weight.data());
            out.extend_from_slice(bg.conv_bias.data());
            out.extend_from_slice(bg.gamma.data());
            out.extend_from_slice(bg.beta.data());
            if let Activation::GRelu(layer) = &block.act {
                for (u, unit) in layer.units().iter().enumerate() {
                    let half = 2 * unit.n();
                    if let Some(g) = bg.act.get(u) {
                        let mut dl: Vec<f64> = g.d_endpoints_neg.iter().rev().cloned().collect();
                        dl.extend_from_slice(&g.d_endpoints_pos);
                        let mut dk: Vec<f64> = g.d_slopes_neg.iter().rev().cloned().collect();
                        dk.extend_from_slice(&g.d_slopes_pos);
                        out.extend(dl);
                        out.extend(dk);
                    } else {
                        out.extend(std::iter::repeat_n(0.0, 2 * half));
                    }
                }
            }
        }
        out.extend_from_slice(grads.classifier_weight.data());
        if let Some(c) = &self.classifier {
            if c.bias.is_some() {
                let bg = grads.classifier_bias.as_ref().ok_or_else(|| {
                    Error::Dimension("missing classifier bias gradient".to_string())
                })?;
                out.extend_from_slice(bg.data());
            }
        }
        Ok(out)
    }

    /// Learnable-parameter breakdown by layer.
    pub fn param_report(&self) -> ParamReport {
        let mut entries = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            let b = i + 1;
            entries.push((format!("block{b}.conv"), block.conv.param_count()));
            entries.push((format!("block{b}.norm"), block.bn.param_count()));
            entries.push((format!("block{b}.act"), block.act.learnable_count()));
        }
        if let Some(c) = &self.classifier {
            entries.push(("classifier".to_string(), c.param_count()));
        }
        let total = entries.iter().map(|(_, c)| c).sum();
        ParamReport { entries, total }
    }

    pub fn param_count(&self) -> usize {
        self.param_report().total
    }
}

/// The 3-block desk-scale architecture: 3x3 stride-1 padding-1
/// convolutions of widths (16, 16, 32) for the global topology or
/// (16, 16, 36) for the conventional baseline (the wider last layer keeps
/// the parameter totals comparable), with 2x2/2 max pooling after the
/// first two blocks and a 10-class classifier.
pub fn build_smallnet(
    activation: ActivationKind,
    topology: Topology,
    with_bias: bool,
    seed: u64,
) -> GcNet {
    let widths: [usize; 3] = match topology {
        Topology::Global => [16, 16, 32],
        Topology::LastOnly => [16, 16, 36],
    };
    build_chain(&widths, &[true, true, false], 1, 10, activation, topology, with_bias, seed)
}

/// A 2-block miniature of the same architecture, for fast runs and
/// gradient checks. Works on any even input extent of at least 4.
pub fn build_toy(
    activation: ActivationKind,
    topology: Topology,
    with_bias: bool,
    seed: u64,
) -> GcNet {
    build_chain(&[4, 8], &[true, false], 1, 10, activation, topology, with_bias, seed)
}

#[allow(clippy::too_many_arguments)]
pub fn build_chain(
    widths: &[usize],
    pool_after: &[bool],
    in_channels: usize,
    class_count: usize,
    activation: ActivationKind,
    topology: Topology,
    with_bias: bool,
    seed: u64,
) -> GcNet {
    assert_eq!(widths.len(), pool_after.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::with_capacity(widths.len());
    let mut c_in = in_channels;
    for (&w, &pool) in widths.iter().zip(pool_after) {
        let act = match activation {
            ActivationKind::Relu => Activation::Relu,
            ActivationKind::GRelu => Activation::GRelu(GReluLayer::shared(GReluParams::default_init())),
        };
        blocks.push(Block::new(
            Conv2d::new(c_in, w, 3, 1, &mut rng),
            BatchNorm::new(w),
            act,
            pool,
        ));
        c_in = w;
    }
    GcNet::new(blocks, topology, class_count, with_bias, &mut rng)
}

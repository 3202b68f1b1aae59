//! Toy-scale conditional image-to-image model: a U-Net generator and a
//! conditional patch discriminator, both trained with hand-written
//! gradients.

mod adam;
pub mod checkpoint;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_checkpoint, load_generator, save_checkpoint, write_model_card, Checkpoint, MAGIC, VERSION};
pub use train::{train_step, HyperParams, StepMetrics, StepOutput, TrainState};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{self, ConvGeometry, NormCache};
use crate::tensor::Tensor;

/// Standard deviation of the initial convolution weights.
pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Conv {
    pub weight: Tensor,
    pub bias: Tensor,
    pub geometry: ConvGeometry,
}

impl Conv {
    fn new(cin: usize, cout: usize, geometry: ConvGeometry) -> Self {
        let k = geometry.kernel;
        Self { weight: Tensor::zeros(&[cout, cin, k, k]), bias: Tensor::zeros(&[cout]), geometry }
    }

    fn forward(&self, x: &Tensor) -> Tensor {
        nn::conv2d_forward(x, &self.weight, &self.bias, self.geometry)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl Norm {
    fn new(c: usize) -> Self {
        Self { gamma: Tensor::full(&[c], 1.0), beta: Tensor::zeros(&[c]) }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Activation {
    LeakyRelu,
    Relu,
}

/// Conv, optional instance norm, activation. Decoder blocks upsample first.
#[derive(Clone, Debug, PartialEq)]
pub struct Block {
    pub conv: Conv,
    pub norm: Option<Norm>,
}

struct BlockTrace {
    conv_in: Tensor,
    norm: Option<NormCache>,
    pre_act: Tensor,
}

impl Block {
    fn new(cin: usize, cout: usize, geometry: ConvGeometry, norm: bool) -> Self {
        Self { conv: Conv::new(cin, cout, geometry), norm: norm.then(|| Norm::new(cout)) }
    }

    fn forward(&self, conv_in: Tensor, act: Activation) -> (Tensor, BlockTrace) {
        let z = self.conv.forward(&conv_in);
        let (pre_act, norm) = match &self.norm {
            Some(n) => {
                let (y, cache) = nn::instance_norm_forward(&z, &n.gamma, &n.beta);
                (y, Some(cache))
            }
            None => (z, None),
        };
        let out = match act {
            Activation::LeakyRelu => nn::leaky_relu(&pre_act),
            Activation::Relu => nn::relu(&pre_act),
        };
        (out, BlockTrace { conv_in, norm, pre_act })
    }

    /// Accumulates parameter gradients into `grads`; returns the gradient
    /// with respect to the conv input.
    fn backward(&self, trace: &BlockTrace, act: Activation, dy: &Tensor, grads: &mut Block) -> Tensor {
        let mut d = match act {
            Activation::LeakyRelu => nn::leaky_relu_backward(&trace.pre_act, dy),
            Activation::Relu => nn::relu_backward(&trace.pre_act, dy),
        };
        if let (Some(norm), Some(cache), Some(gnorm)) = (&self.norm, &trace.norm, &mut grads.norm) {
            let g = nn::instance_norm_backward(cache, &norm.gamma, &d);
            gnorm.gamma.add_assign(&g.dgamma);
            gnorm.beta.add_assign(&g.dbeta);
            d = g.dx;
        }
        let g = nn::conv2d_backward(&trace.conv_in, &self.conv.weight, self.conv.geometry, &d);
        grads.conv.weight.add_assign(&g.dweight);
        grads.conv.bias.add_assign(&g.dbias);
        g.dx
    }

    fn push_named<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        out.push((format!("{prefix}.conv.weight"), &self.conv.weight));
        out.push((format!("{prefix}.conv.bias"), &self.conv.bias));
        if let Some(n) = &self.norm {
            out.push((format!("{prefix}.norm.gamma"), &n.gamma));
            out.push((format!("{prefix}.norm.beta"), &n.beta));
        }
    }

    fn push_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.conv.weight);
        out.push(&mut self.conv.bias);
        if let Some(n) = &mut self.norm {
            out.push(&mut n.gamma);
            out.push(&mut n.beta);
        }
    }
}

/// Network inputs are scanned for NaN/Inf in debug builds only.
fn check_finite(what: &str, t: &Tensor) -> Result<()> {
    if cfg!(debug_assertions) && !t.is_finite() {
        return Err(Error::InvalidArgument(format!("{what} contains non-finite values")));
    }
    Ok(())
}

/// Ordered, named view over a network's parameters. Gradients and optimizer
/// moments use the same order.
pub trait Parameters {
    fn named(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    /// Reinitializes conv weights from N(0, 0.02); biases and norm shifts go
    /// to zero and norm scales to one.
    fn init(&mut self, rng: &mut impl Rng)
    where
        Self: Sized,
    {
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let names: Vec<String> = self.named().into_iter().map(|(n, _)| n).collect();
        for (name, t) in names.iter().zip(self.params_mut()) {
            if name.ends_with(".weight") {
                for v in t.data_mut() {
                    *v = normal.sample(rng) as f32;
                }
            } else if name.ends_with(".gamma") {
                t.data_mut().fill(1.0);
            } else {
                t.data_mut().fill(0.0);
            }
        }
    }

    fn zero(&mut self) {
        for t in self.params_mut() {
            t.data_mut().fill(0.0);
        }
    }

    fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self { depth: 4, base_channels: 32, in_channels: 1, out_channels: 3 }
    }
}

impl GeneratorSpec {
    /// Output channels of encoder level `k`: `base · 2^k`, capped at `8 · base`.
    pub fn encoder_channels(&self, k: usize) -> usize {
        (self.base_channels << k.min(3)).min(8 * self.base_channels)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument(format!("generator spec fields must be >= 1: {self:?}")));
        }
        Ok(())
    }

    pub fn check_size(&self, size: usize) -> Result<()> {
        let m = 1usize << self.depth;
        if size == 0 || !size.is_multiple_of(m) {
            return Err(Error::Shape(format!("image size {size} must be a positive multiple of 2^depth = {m}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorWeights {
    pub spec: GeneratorSpec,
    /// Encoder level 0 first.
    pub encoder: Vec<Block>,
    /// In execution order: the block fed by the bottleneck first.
    pub decoder: Vec<Block>,
    pub head: Conv,
}

/// Saved activations of a generator forward pass.
pub struct GeneratorTrace {
    encoder: Vec<BlockTrace>,
    decoder: Vec<BlockTrace>,
    head_in: Tensor,
    pub output: Tensor,
}

impl GeneratorWeights {
    /// All-zero weights (norm scales one) with the layer shapes of `spec`.
    pub fn zeros(spec: GeneratorSpec) -> Self {
        let depth = spec.depth;
        let encoder = (0..depth)
            .map(|k| {
                let cin = if k == 0 { spec.in_channels } else { spec.encoder_channels(k - 1) };
                Block::new(cin, spec.encoder_channels(k), ConvGeometry::DOWN4, k > 0)
            })
            .collect();
        let decoder = (0..depth)
            .rev()
            .map(|j| {
                let cin = if j == depth - 1 { spec.encoder_channels(j) } else { 2 * spec.encoder_channels(j) };
                let cout = if j > 0 { spec.encoder_channels(j - 1) } else { spec.base_channels };
                Block::new(cin, cout, ConvGeometry::SAME3, true)
            })
            .collect();
        let head = Conv::new(spec.base_channels, spec.out_channels, ConvGeometry::SAME3);
        Self { spec, encoder, decoder, head }
    }

    pub fn init(spec: GeneratorSpec, rng: &mut impl Rng) -> Self {
        let mut w = Self::zeros(spec);
        Parameters::init(&mut w, rng);
        w
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(x)?.output)
    }

    pub fn forward_traced(&self, x: &Tensor) -> Result<GeneratorTrace> {
        let spec = &self.spec;
        let shape = x.shape();
        if shape.len() != 4 || shape[1] != spec.in_channels || shape[2] != shape[3] {
            return Err(Error::Shape(format!(
                "generator expects (B, {}, S, S) input, got {shape:?}",
                spec.in_channels
            )));
        }
        spec.check_size(shape[2])?;
        check_finite("generator input", x)?;
        let depth = spec.depth;

        let mut enc_traces = Vec::with_capacity(depth);
        let mut skips = Vec::with_capacity(depth);
        let mut h = x.clone();
        for block in &self.encoder {
            let act = Activation::LeakyRelu;
            let (out, tr) = block.forward(h, act);
            enc_traces.push(tr);
            skips.push(out.clone());
            h = out;
        }

        let mut dec_traces = Vec::with_capacity(depth);
        for (i, block) in self.decoder.iter().enumerate() {
            let level = depth - 1 - i;
            let (a, tr) = block.forward(nn::upsample2x(&h), Activation::Relu);
            dec_traces.push(tr);
            h = if level > 0 { nn::concat_channels(&a, &skips[level - 1]) } else { a };
        }

        let output = nn::tanh(&self.head.forward(&h));
        Ok(GeneratorTrace { encoder: enc_traces, decoder: dec_traces, head_in: h, output })
    }

    /// Backpropagates `d_output` through a traced forward pass. Returns the
    /// parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, trace: &GeneratorTrace, d_output: &Tensor) -> (GeneratorWeights, Tensor) {
        let depth = self.spec.depth;
        let mut grads = GeneratorWeights::zeros(self.spec);
        grads.zero();

        let d_pre = nn::tanh_backward(&trace.output, d_output);
        let g = nn::conv2d_backward(&trace.head_in, &self.head.weight, self.head.geometry, &d_pre);
        grads.head.weight.add_assign(&g.dweight);
        grads.head.bias.add_assign(&g.dbias);
        let mut d = g.dx;

        let mut skip_grads: Vec<Option<Tensor>> = vec![None; depth];
        for i in (0..depth).rev() {
            let level = depth - 1 - i;
            let block = &self.decoder[i];
            let d_act = if level > 0 {
                let cout = block.conv.weight.shape()[0];
                let (da, ds) = nn::split_channels(&d, cout);
                skip_grads[level - 1] = Some(ds);
                da
            } else {
                d
            };
            let d_up = block.backward(&trace.decoder[i], Activation::Relu, &d_act, &mut grads.decoder[i]);
            d = nn::upsample2x_backward(&d_up);
        }

        for k in (0..depth).rev() {
            if let Some(s) = skip_grads[k].take() {
                d.add_assign(&s);
            }
            d = self.encoder[k].backward(&trace.encoder[k], Activation::LeakyRelu, &d, &mut grads.encoder[k]);
        }
        (grads, d)
    }
}

impl Parameters for GeneratorWeights {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (k, b) in self.encoder.iter().enumerate() {
            b.push_named(&format!("gen.enc{k}"), &mut out);
        }
        for (i, b) in self.decoder.iter().enumerate() {
            b.push_named(&format!("gen.dec{}", self.spec.depth - 1 - i), &mut out);
        }
        out.push(("gen.head.weight".into(), &self.head.weight));
        out.push(("gen.head.bias".into(), &self.head.bias));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.encoder {
            b.push_mut(&mut out);
        }
        for b in &mut self.decoder {
            b.push_mut(&mut out);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorSpec {
    pub base_channels: usize,
    /// Conditioning input channels plus candidate channels.
    pub in_channels: usize,
}

impl Default for DiscriminatorSpec {
    fn default() -> Self {
        Self { base_channels: 32, in_channels: 4 }
    }
}

/// Number of stride-2 blocks; the logit map is `S / 8` on a side.
pub const DISC_LAYERS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorWeights {
    pub spec: DiscriminatorSpec,
    pub blocks: Vec<Block>,
    pub head: Conv,
}

pub struct DiscriminatorTrace {
    blocks: Vec<BlockTrace>,
    head_in: Tensor,
    pub logits: Tensor,
    input_channels: usize,
}

impl DiscriminatorWeights {
    pub fn zeros(spec: DiscriminatorSpec) -> Self {
        let b = spec.base_channels;
        let blocks = (0..DISC_LAYERS)
            .map(|k| {
                let cin = if k == 0 { spec.in_channels } else { b << (k - 1) };
                Block::new(cin, b << k, ConvGeometry::DOWN4, k > 0)
            })
            .collect();
        let head = Conv::new(b << (DISC_LAYERS - 1), 1, ConvGeometry::SAME3);
        Self { spec, blocks, head }
    }

    pub fn init(spec: DiscriminatorSpec, rng: &mut impl Rng) -> Self {
        let mut w = Self::zeros(spec);
        Parameters::init(&mut w, rng);
        w
    }

    pub fn forward(&self, input: &Tensor, candidate: &Tensor) -> Result<Tensor> {
        Ok(self.forward_traced(input, candidate)?.logits)
    }

    pub fn forward_traced(&self, input: &Tensor, candidate: &Tensor) -> Result<DiscriminatorTrace> {
        let (ia, ib) = (input.shape(), candidate.shape());
        if ia.len() != 4 || ib.len() != 4 || ia[0] != ib[0] || ia[2..] != ib[2..] {
            return Err(Error::Shape(format!("discriminator inputs disagree: {ia:?} vs {ib:?}")));
        }
        if ia[1] + ib[1] != self.spec.in_channels {
            return Err(Error::Shape(format!(
                "discriminator expects {} channels in total, got {} + {}",
                self.spec.in_channels, ia[1], ib[1]
            )));
        }
        let m = 1 << DISC_LAYERS;
        if ia[2] % m != 0 || ia[3] % m != 0 || ia[2] == 0 {
            return Err(Error::Shape(format!("discriminator input size must be a multiple of {m}, got {ia:?}")));
        }
        check_finite("discriminator input", input)?;
        check_finite("discriminator candidate", candidate)?;
        let mut h = nn::concat_channels(input, candidate);
        let mut traces = Vec::with_capacity(DISC_LAYERS);
        for block in &self.blocks {
            let (out, tr) = block.forward(h, Activation::LeakyRelu);
            traces.push(tr);
            h = out;
        }
        let logits = self.head.forward(&h);
        Ok(DiscriminatorTrace { blocks: traces, head_in: h, logits, input_channels: ia[1] })
    }

    /// Returns parameter gradients and the gradient with respect to the
    /// candidate image.
    pub fn backward(&self, trace: &DiscriminatorTrace, d_logits: &Tensor) -> (DiscriminatorWeights, Tensor) {
        let mut grads = DiscriminatorWeights::zeros(self.spec);
        grads.zero();
        let g = nn::conv2d_backward(&trace.head_in, &self.head.weight, self.head.geometry, d_logits);
        grads.head.weight.add_assign(&g.dweight);
        grads.head.bias.add_assign(&g.dbias);
        let mut d = g.dx;
        for k in (0..DISC_LAYERS).rev() {
            d = self.blocks[k].backward(&trace.blocks[k], Activation::LeakyRelu, &d, &mut grads.blocks[k]);
        }
        let (_, d_candidate) = nn::split_channels(&d, trace.input_channels);
        (grads, d_candidate)
    }
}

impl Parameters for DiscriminatorWeights {
    fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (k, b) in self.blocks.iter().enumerate() {
            b.push_named(&format!("disc.block{k}"), &mut out);
        }
        out.push(("disc.head.weight".into(), &self.head.weight));
        out.push(("disc.head.bias".into(), &self.head.bias));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            b.push_mut(&mut out);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }
}

//! Feed-forward networks of linear, ReLU, and batch-normalization layers
//! with exact reverse-mode gradients and mask-aware training.

mod bn;
mod kernels;
mod loss;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use bn::{BnState, BnStats};
pub use loss::{softmax_cross_entropy, LossValue};

use crate::error::{Error, Result};
use crate::mask::{LayerMask, Mask, SparseLayout};
use crate::rng;
use crate::tensor::Tensor;
use bn::BnCache;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `out × in`.
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn in_features(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_features(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Linear(Linear),
    Relu,
    BatchNorm(BnState),
}

/// Layer sizes and options for [`Network::mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub batch_norm: bool,
    pub blocks: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for MlpSpec {
    fn default() -> Self {
        Self {
            input: 16,
            hidden: vec![64, 64, 64],
            classes: 10,
            batch_norm: true,
            blocks: 5,
            bn_momentum: 0.9,
            bn_eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawNetwork", into = "RawNetwork")]
pub struct Network {
    layers: Vec<Layer>,
    /// Block index (0-based) of every layer.
    blocks: Vec<usize>,
    num_blocks: usize,
    /// Whether the layer's weight tensor may be pruned.
    prunable: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct RawNetwork {
    layers: Vec<Layer>,
    blocks: Vec<usize>,
    num_blocks: usize,
}

impl TryFrom<RawNetwork> for Network {
    type Error = Error;

    fn try_from(raw: RawNetwork) -> Result<Self> {
        Network::from_parts(raw.layers, raw.blocks, raw.num_blocks)
    }
}

impl From<Network> for RawNetwork {
    fn from(net: Network) -> Self {
        RawNetwork {
            layers: net.layers,
            blocks: net.blocks,
            num_blocks: net.num_blocks,
        }
    }
}

/// Activations saved by a forward pass for the matching backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    mode: Mode,
    batch: usize,
    inputs: Vec<Tensor>,
    bn: Vec<Option<BnCache>>,
}

impl ForwardCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Number of activation values held: every layer input plus the output.
    pub fn activation_elements(&self, output: &Tensor) -> usize {
        self.inputs.iter().map(Tensor::len).sum::<usize>() + output.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerGrad {
    Linear { weight: Tensor, bias: Tensor },
    BatchNorm { scale: Tensor, shift: Tensor },
    None,
}

/// Gradients aligned with [`Network::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGrad>,
}

impl Gradients {
    /// Gradient tensors in [`Network::params`] order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for g in &self.layers {
            match g {
                LayerGrad::Linear { weight, bias } => out.extend([weight, bias]),
                LayerGrad::BatchNorm { scale, shift } => out.extend([scale, shift]),
                LayerGrad::None => {}
            }
        }
        out
    }

    pub fn weight(&self, layer: usize) -> Option<&Tensor> {
        match self.layers.get(layer) {
            Some(LayerGrad::Linear { weight, .. }) => Some(weight),
            _ => None,
        }
    }
}

/// Assigns `items` contiguous positions to `parts` groups of near-equal size.
pub(crate) fn contiguous_partition(items: usize, parts: usize) -> Vec<usize> {
    let parts = parts.clamp(1, items.max(1));
    (0..items).map(|i| i * parts / items).collect()
}

impl Network {
    /// Builds `Linear → [BatchNorm] → ReLU` stages for each hidden width and
    /// a final linear output layer, with He-uniform weights and zero biases.
    ///
    /// The first and last linear layers are prune-ineligible. Blocks group
    /// whole stages (a linear layer with its trailing BN and ReLU) into
    /// `spec.blocks` contiguous ranges.
    pub fn mlp(spec: &MlpSpec, seed: u64) -> Result<Self> {
        if spec.input == 0 || spec.classes == 0 || spec.hidden.contains(&0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if spec.blocks == 0 {
            return Err(Error::InvalidArgument("block count must be positive".into()));
        }
        let mut rng = rng::rng_for(seed, &[rng::stream::INIT]);
        let mut layers = Vec::new();
        let mut stage_of = Vec::new();
        let widths: Vec<usize> = std::iter::once(spec.input)
            .chain(spec.hidden.iter().copied())
            .chain(std::iter::once(spec.classes))
            .collect();
        let stages = widths.len() - 1;
        for s in 0..stages {
            let (fan_in, fan_out) = (widths[s], widths[s + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            layers.push(Layer::Linear(Linear {
                weight: Tensor::new(vec![fan_out, fan_in], w)?,
                bias: Tensor::zeros(vec![fan_out]),
            }));
            stage_of.push(s);
            if s + 1 < stages {
                if spec.batch_norm {
                    layers.push(Layer::BatchNorm(BnState::new(
                        fan_out,
                        spec.bn_momentum,
                        spec.bn_eps,
                    )?));
                    stage_of.push(s);
                }
                layers.push(Layer::Relu);
                stage_of.push(s);
            }
        }
        let stage_block = contiguous_partition(stages, spec.blocks);
        let blocks: Vec<usize> = stage_of.iter().map(|&s| stage_block[s]).collect();
        let num_blocks = stage_block.last().map_or(1, |b| b + 1);
        Self::from_parts(layers, blocks, num_blocks)
    }

    /// Assembles a network from explicit layers and a block map.
    pub fn from_parts(layers: Vec<Layer>, blocks: Vec<usize>, num_blocks: usize) -> Result<Self> {
        if layers.is_empty() || blocks.len() != layers.len() {
            return Err(Error::InvalidArgument(
                "every layer needs exactly one block".into(),
            ));
        }
        if blocks.windows(2).any(|w| w[1] < w[0] || w[1] > w[0] + 1)
            || blocks[0] != 0
            || blocks[blocks.len() - 1] + 1 != num_blocks
        {
            return Err(Error::InvalidArgument(
                "blocks must be contiguous and cover 0..num_blocks".into(),
            ));
        }
        let linear: Vec<usize> = layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, Layer::Linear(_)))
            .map(|(i, _)| i)
            .collect();
        let mut prunable = vec![false; layers.len()];
        if linear.len() > 2 {
            for &i in &linear[1..linear.len() - 1] {
                prunable[i] = true;
            }
        }
        let net = Self {
            layers,
            blocks,
            num_blocks,
            prunable,
        };
        net.check_widths()?;
        Ok(net)
    }

    fn check_widths(&self) -> Result<()> {
        let mut width: Option<usize> = None;
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => {
                    if l.bias.len() != l.out_features() || l.weight.shape().len() != 2 {
                        return Err(Error::InvalidArgument("malformed linear layer".into()));
                    }
                    if let Some(w) = width {
                        if w != l.in_features() {
                            return Err(Error::ShapeMismatch {
                                expected: vec![w],
                                actual: vec![l.in_features()],
                            });
                        }
                    }
                    width = Some(l.out_features());
                }
                Layer::BatchNorm(s) => {
                    if s.var.len() != s.features()
                        || s.scale.len() != s.features()
                        || s.shift.len() != s.features()
                        || s.var.iter().any(|v| !(*v >= 0.0 && v.is_finite()))
                        || !(s.eps > 0.0)
                        || !(s.momentum > 0.0 && s.momentum < 1.0)
                    {
                        return Err(Error::InvalidArgument("malformed BN layer".into()));
                    }
                    if width.is_some_and(|w| w != s.features()) {
                        return Err(Error::ShapeMismatch {
                            expected: vec![width.unwrap_or(0)],
                            actual: vec![s.features()],
                        });
                    }
                }
                Layer::Relu => {}
            }
        }
        if width.is_none() {
            return Err(Error::InvalidArgument("network has no linear layer".into()));
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn block_of(&self, layer: usize) -> usize {
        self.blocks[layer]
    }

    pub fn num_blocks(&self) -> usize {
        self.num_blocks
    }

    pub fn is_prunable(&self, layer: usize) -> bool {
        self.prunable.get(layer).copied().unwrap_or(false)
    }

    /// Indices of layers whose weights are prune-eligible, in forward order.
    pub fn prunable_layers(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&i| self.prunable[i]).collect()
    }

    pub fn linear(&self, layer: usize) -> Option<&Linear> {
        match self.layers.get(layer) {
            Some(Layer::Linear(l)) => Some(l),
            _ => None,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Linear(l) => Some(l.in_features()),
                _ => None,
            })
            .unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.layers
            .iter()
            .rev()
            .find_map(|l| match l {
                Layer::Linear(l) => Some(l.out_features()),
                _ => None,
            })
            .unwrap_or(0)
    }

    /// Trainable tensors: weight and bias of each linear layer, scale and
    /// shift of each BN layer, in layer order.
    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for layer in &self.layers {
            match layer {
                Layer::Linear(l) => out.extend([&l.weight, &l.bias]),
                Layer::BatchNorm(s) => out.extend([&s.scale, &s.shift]),
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Linear(l) => out.extend([&mut l.weight, &mut l.bias]),
                Layer::BatchNorm(s) => out.extend([&mut s.scale, &mut s.shift]),
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|t| t.len()).sum()
    }

    pub fn bn_states(&self) -> Vec<&BnState> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::BatchNorm(s) => Some(s),
                _ => None,
            })
            .collect()
    }

    pub fn bn_states_mut(&mut self) -> Vec<&mut BnState> {
        self.layers
            .iter_mut()
            .filter_map(|l| match l {
                Layer::BatchNorm(s) => Some(s),
                _ => None,
            })
            .collect()
    }

    pub fn bn_stats(&self) -> Vec<BnStats> {
        self.bn_states().into_iter().map(BnState::stats).collect()
    }

    pub fn install_bn_stats(&mut self, stats: &[BnStats]) -> Result<()> {
        let mut states = self.bn_states_mut();
        if states.len() != stats.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![states.len()],
                actual: vec![stats.len()],
            });
        }
        for (s, st) in states.iter_mut().zip(stats) {
            s.install(st)?;
        }
        Ok(())
    }

    /// All-ones mask over the prune-eligible weights.
    pub fn full_mask(&self) -> Mask {
        let layers = self
            .prunable_layers()
            .into_iter()
            .map(|i| LayerMask::ones(i, self.linear(i).unwrap().weight.shape().to_vec()))
            .collect();
        Mask::new(layers).expect("distinct layers")
    }

    /// Checks that `mask` covers exactly the prune-eligible weights.
    pub fn check_mask(&self, mask: &Mask) -> Result<()> {
        let expected = self.prunable_layers();
        let got: Vec<usize> = mask.layers().iter().map(|l| l.layer).collect();
        if expected != got {
            return Err(Error::InvalidArgument(format!(
                "mask covers layers {got:?}, expected {expected:?}"
            )));
        }
        for lm in mask.layers() {
            let w = &self.linear(lm.layer).unwrap().weight;
            if w.shape() != lm.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: w.shape().to_vec(),
                    actual: lm.shape.clone(),
                });
            }
        }
        Ok(())
    }

    /// Sets every masked-out weight to exactly zero.
    pub fn apply_mask(&mut self, mask: &Mask) -> Result<()> {
        self.check_mask(mask)?;
        for lm in mask.layers() {
            if let Layer::Linear(l) = &mut self.layers[lm.layer] {
                for (w, &keep) in l.weight.data_mut().iter_mut().zip(lm.bits()) {
                    if !keep {
                        *w = 0.0;
                    }
                }
            }
        }
        Ok(())
    }

    /// Forward pass. In [`Mode::Train`] BN layers normalize with batch
    /// statistics and update their moving statistics.
    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, ForwardCache)> {
        self.forward_with(x, mode, None)
    }

    pub fn forward_with(
        &mut self,
        x: &Tensor,
        mode: Mode,
        layout: Option<&SparseLayout>,
    ) -> Result<(Tensor, ForwardCache)> {
        let (out, cache, batch_stats) = self.run_forward(x, mode, layout)?;
        for (layer, stats) in self.layers.iter_mut().zip(batch_stats) {
            if let (Layer::BatchNorm(s), Some(st)) = (layer, stats) {
                s.update_moving(&st);
            }
        }
        Ok((out, cache))
    }

    /// Forward pass that never mutates the network. In [`Mode::Train`] BN
    /// layers still normalize with batch statistics.
    pub fn forward_pure(
        &self,
        x: &Tensor,
        mode: Mode,
        layout: Option<&SparseLayout>,
    ) -> Result<(Tensor, ForwardCache)> {
        let (out, cache, _) = self.run_forward(x, mode, layout)?;
        Ok((out, cache))
    }

    /// Eval-mode logits.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_pure(x, Mode::Eval, None)?.0)
    }

    #[allow(clippy::type_complexity)]
    fn run_forward(
        &self,
        x: &Tensor,
        mode: Mode,
        layout: Option<&SparseLayout>,
    ) -> Result<(Tensor, ForwardCache, Vec<Option<BnStats>>)> {
        if x.shape().len() != 2 || x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![x.rows(), self.input_dim()],
                actual: x.shape().to_vec(),
            });
        }
        let batch = x.rows();
        if mode == Mode::Train && batch < 2 && !self.bn_states().is_empty() {
            return Err(Error::BatchTooSmall(batch));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut bn_caches = Vec::with_capacity(self.layers.len());
        let mut stats = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let (next, cache, st) = match layer {
                Layer::Linear(l) => {
                    let y = kernels::linear_forward(
                        cur.data(),
                        batch,
                        l.weight.data(),
                        l.bias.data(),
                        layout.and_then(|lay| lay.get(i)),
                    );
                    (Tensor::new(vec![batch, l.out_features()], y)?, None, None)
                }
                Layer::Relu => {
                    let y = cur.data().iter().map(|v| v.max(0.0)).collect();
                    (Tensor::new(cur.shape().to_vec(), y)?, None, None)
                }
                Layer::BatchNorm(s) => {
                    let (y, c, st) = bn::bn_forward(s, cur.data(), batch, mode == Mode::Train);
                    (Tensor::new(cur.shape().to_vec(), y)?, Some(c), st)
                }
            };
            inputs.push(std::mem::replace(&mut cur, next));
            bn_caches.push(cache);
            stats.push(st);
        }
        Ok((
            cur,
            ForwardCache {
                mode,
                batch,
                inputs,
                bn: bn_caches,
            },
            stats,
        ))
    }

    /// Softmax cross-entropy loss and gradients of every parameter tensor.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        logits: &Tensor,
        labels: &[usize],
    ) -> Result<(LossValue, Gradients)> {
        self.backward_with(cache, logits, labels, None)
    }

    /// With a layout, weight gradients of the layers it covers are computed
    /// on the mask support only (`grad ⊙ mask`).
    pub fn backward_with(
        &self,
        cache: &ForwardCache,
        logits: &Tensor,
        labels: &[usize],
        layout: Option<&SparseLayout>,
    ) -> Result<(LossValue, Gradients)> {
        if cache.inputs.len() != self.layers.len() {
            return Err(Error::CacheMismatch(format!(
                "cache has {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        if labels.len() != cache.batch || logits.rows() != cache.batch {
            return Err(Error::CacheMismatch(format!(
                "{} labels for a batch of {}",
                labels.len(),
                cache.batch
            )));
        }
        let batch = cache.batch;
        let classes = self.output_dim();
        let (loss, dlogits) = softmax_cross_entropy(logits.data(), classes, labels)?;
        let mut grads = vec![LayerGrad::None; self.layers.len()];
        let mut dy = dlogits;
        let first_param = self
            .layers
            .iter()
            .position(|l| !matches!(l, Layer::Relu))
            .unwrap_or(0);
        for i in (0..self.layers.len()).rev() {
            let x = &cache.inputs[i];
            let need_dx = i > first_param;
            match &self.layers[i] {
                Layer::Linear(l) => {
                    let g = kernels::linear_backward(
                        x.data(),
                        &dy,
                        batch,
                        l.weight.data(),
                        l.out_features(),
                        layout.and_then(|lay| lay.get(i)),
                        need_dx,
                    );
                    grads[i] = LayerGrad::Linear {
                        weight: Tensor::new(l.weight.shape().to_vec(), g.dw)?,
                        bias: Tensor::new(l.bias.shape().to_vec(), g.db)?,
                    };
                    if let Some(dx) = g.dx {
                        dy = dx;
                    }
                }
                Layer::Relu => {
                    for (d, v) in dy.iter_mut().zip(x.data()) {
                        if *v <= 0.0 {
                            *d = 0.0;
                        }
                    }
                }
                Layer::BatchNorm(s) => {
                    let bc = cache.bn[i]
                        .as_ref()
                        .ok_or_else(|| Error::CacheMismatch("missing BN cache".into()))?;
                    let g = bn::bn_backward(s, bc, &dy, batch);
                    grads[i] = LayerGrad::BatchNorm {
                        scale: Tensor::new(vec![s.features()], g.dscale)?,
                        shift: Tensor::new(vec![s.features()], g.dshift)?,
                    };
                    dy = g.dx;
                }
            }
            if !need_dx {
                break;
            }
        }
        Ok((loss, Gradients { layers: grads }))
    }

    /// `θ ← θ − lr·(∇L ⊙ m)` on prune-eligible weights covered by `mask`;
    /// every other tensor takes a dense step. `lr = 0` is a no-op.
    pub fn sgd_step(&mut self, grads: &Gradients, mask: Option<&Mask>, lr: f64) -> Result<()> {
        if !(lr >= 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be a non-negative finite number, got {lr}"
            )));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.layers.len()],
                actual: vec![grads.layers.len()],
            });
        }
        if let Some(m) = mask {
            self.check_mask(m)?;
        }
        if lr == 0.0 {
            return Ok(());
        }
        for (i, (layer, g)) in self.layers.iter_mut().zip(&grads.layers).enumerate() {
            match (layer, g) {
                (Layer::Linear(l), LayerGrad::Linear { weight, bias }) => {
                    check_same(&l.weight, weight)?;
                    check_same(&l.bias, bias)?;
                    let bits = mask.and_then(|m| m.get(i)).map(LayerMask::bits);
                    let w = l.weight.data_mut();
                    match bits {
                        Some(bits) => {
                            for ((w, g), &keep) in w.iter_mut().zip(weight.data()).zip(bits) {
                                if keep {
                                    *w -= lr * g;
                                }
                            }
                        }
                        None => kernels::axpy(w, -lr, weight.data()),
                    }
                    kernels::axpy(l.bias.data_mut(), -lr, bias.data());
                }
                (Layer::BatchNorm(s), LayerGrad::BatchNorm { scale, shift }) => {
                    check_same(&s.scale, scale)?;
                    check_same(&s.shift, shift)?;
                    kernels::axpy(s.scale.data_mut(), -lr, scale.data());
                    kernels::axpy(s.shift.data_mut(), -lr, shift.data());
                }
                (Layer::Relu, LayerGrad::None) => {}
                // Layers before the first parameter carry no gradient.
                (_, LayerGrad::None) => {}
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "gradient kind does not match layer {i}"
                    )))
                }
            }
        }
        Ok(())
    }

    /// One masked SGD step on a batch: train-mode forward, backward, update.
    pub fn train_batch(
        &mut self,
        x: &Tensor,
        labels: &[usize],
        mask: Option<&Mask>,
        layout: Option<&SparseLayout>,
        lr: f64,
    ) -> Result<(LossValue, usize)> {
        let (logits, cache) = self.forward_with(x, Mode::Train, layout)?;
        let activations = cache.activation_elements(&logits);
        let (loss, grads) = self.backward_with(&cache, &logits, labels, layout)?;
        self.sgd_step(&grads, mask, lr)?;
        Ok((loss, activations))
    }
}

fn check_same(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    Ok(())
}

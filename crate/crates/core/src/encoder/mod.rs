//! Feature encoders: a small convolutional network and an MLP baseline.
//!
//! An encoder maps images to embedding rows. Its parameters live in a named,
//! ordered [`ParamSet`]; the compute graph is wired fresh for each batch with
//! parameter values supplied through bindings, so the same wiring serves
//! inference (all leaves constant), full training (all trainable), and the
//! episodic phase where only the final linear layer trains.
//!
//! The convolutional stack is `conv3x3 -> relu -> avgpool2x2` twice, then one
//! linear layer to the embedding. Convolution biases are per-channel,
//! broadcast across positions with a constant indicator matrix.

mod augment;

pub use augment::{augment_image, AugmentConfig};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::datasets::{Dataset, Image};
use crate::heads::{score_graph, ClassifierWeights, HeadKind};
use crate::numerics::{
    load_json, save_json, sgd_step, Bindings, ConvGeom, Graph, NamedTensor, NodeId,
    NumericsError, ParamSet, PoolGeom, SgdState, Tensor,
};
use crate::seeding::{mix, salt};

/// Which network family the encoder is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncoderKind {
    /// Fully connected layers with relu between them.
    Mlp,
    /// Two conv3x3+relu+avgpool stages, then a linear embedding layer.
    TinyCnn,
}

fn default_hidden() -> Vec<usize> {
    vec![64]
}

fn default_conv_channels() -> (usize, usize) {
    (8, 16)
}

/// Architecture and input geometry of an encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub kind: EncoderKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Hidden layer widths (MLP only).
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    /// Channel counts of the two conv stages (convolutional only).
    #[serde(default = "default_conv_channels")]
    pub conv_channels: (usize, usize),
    pub embed_dim: usize,
}

/// Geometry of each stage of the convolutional stack, derived once and used
/// by both initialization and wiring.
struct ConvStack {
    conv1: ConvGeom,
    pool1: PoolGeom,
    conv2: ConvGeom,
    pool2: PoolGeom,
}

impl ConvStack {
    fn flat_dim(&self) -> usize {
        self.pool2.out_cols()
    }
}

impl EncoderConfig {
    pub fn input_dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    fn conv_stack(&self) -> Result<ConvStack, NumericsError> {
        let (c1, c2) = self.conv_channels;
        let conv1 = ConvGeom {
            in_channels: self.channels,
            in_h: self.height,
            in_w: self.width,
            out_channels: c1,
            k_h: 3,
            k_w: 3,
        };
        if self.height < 3 || self.width < 3 {
            return Err(NumericsError::InvalidArg(format!(
                "{}x{} input is too small for a 3x3 convolution",
                self.height, self.width
            )));
        }
        let pool1 = PoolGeom {
            channels: c1,
            in_h: conv1.out_h(),
            in_w: conv1.out_w(),
        };
        if pool1.out_h() < 3 || pool1.out_w() < 3 {
            return Err(NumericsError::InvalidArg(format!(
                "input {}x{} leaves no room for the second conv stage",
                self.height, self.width
            )));
        }
        let conv2 = ConvGeom {
            in_channels: c1,
            in_h: pool1.out_h(),
            in_w: pool1.out_w(),
            out_channels: c2,
            k_h: 3,
            k_w: 3,
        };
        let pool2 = PoolGeom {
            channels: c2,
            in_h: conv2.out_h(),
            in_w: conv2.out_w(),
        };
        if pool2.out_h() == 0 || pool2.out_w() == 0 {
            return Err(NumericsError::InvalidArg(format!(
                "input {}x{} collapses to nothing after the second pool",
                self.height, self.width
            )));
        }
        Ok(ConvStack {
            conv1,
            pool1,
            conv2,
            pool2,
        })
    }

    /// Width of the features feeding the final linear layer.
    pub fn penultimate_dim(&self) -> Result<usize, NumericsError> {
        match self.kind {
            EncoderKind::Mlp => Ok(*self.hidden.last().unwrap_or(&self.input_dim())),
            EncoderKind::TinyCnn => Ok(self.conv_stack()?.flat_dim()),
        }
    }

    fn check(&self) -> Result<(), NumericsError> {
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(NumericsError::InvalidArg(
                "encoder input dimensions must be positive".into(),
            ));
        }
        if self.embed_dim == 0 {
            return Err(NumericsError::InvalidArg(
                "embedding dimension must be positive".into(),
            ));
        }
        match self.kind {
            EncoderKind::Mlp => {
                if self.hidden.iter().any(|&h| h == 0) {
                    return Err(NumericsError::InvalidArg(
                        "hidden widths must be positive".into(),
                    ));
                }
            }
            EncoderKind::TinyCnn => {
                let (c1, c2) = self.conv_channels;
                if c1 == 0 || c2 == 0 {
                    return Err(NumericsError::InvalidArg(
                        "conv channel counts must be positive".into(),
                    ));
                }
                self.conv_stack()?;
            }
        }
        Ok(())
    }
}

fn glorot<R: Rng>(
    shape: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Result<Tensor, NumericsError> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, -limit, limit, rng)
}

/// Whether graph leaves for parameters should receive gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum WireMode {
    AllConstant,
    LastLayerTrainable,
    AllTrainable,
}

impl WireMode {
    fn trains(self, name: &str) -> bool {
        match self {
            WireMode::AllConstant => false,
            WireMode::AllTrainable => true,
            WireMode::LastLayerTrainable => name.starts_with("embed."),
        }
    }
}

/// A wired encoder inside someone else's graph: the output node, the leaf
/// node for every parameter (bind values by name), and the constant helper
/// tensors the wiring needs (all-ones and indicator matrices).
pub(crate) struct WiredEncoder {
    pub output: NodeId,
    pub param_nodes: Vec<(String, NodeId)>,
    pub helper_bindings: Vec<(NodeId, Tensor)>,
}

impl WiredEncoder {
    /// Bind helper constants plus the given parameter values.
    pub fn bind_into(
        &self,
        bindings: &mut Bindings,
        params: &ParamSet,
    ) -> Result<(), NumericsError> {
        for (id, t) in &self.helper_bindings {
            bindings.bind(*id, t.clone());
        }
        for (name, id) in &self.param_nodes {
            let value = params.get(name).ok_or_else(|| {
                NumericsError::InvalidArg(format!("missing encoder parameter `{name}`"))
            })?;
            bindings.bind(*id, value.clone());
        }
        Ok(())
    }
}

/// An encoder: its architecture plus current parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    config: EncoderConfig,
    params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct EncoderForm {
    config: EncoderConfig,
    params: Vec<NamedTensor>,
}

impl EncoderParams {
    /// Fan-balanced random weights, zero biases.
    pub fn init(config: EncoderConfig, seed: u64) -> Result<Self, NumericsError> {
        config.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[salt("encoder-init")]));
        let mut params = ParamSet::new();
        match config.kind {
            EncoderKind::Mlp => {
                let mut prev = config.input_dim();
                for (i, &width) in config.hidden.iter().enumerate() {
                    params.push(
                        format!("layer{i}.weight"),
                        glorot(vec![width, prev], prev, width, &mut rng)?,
                    )?;
                    params.push(format!("layer{i}.bias"), Tensor::zeros(vec![1, width]))?;
                    prev = width;
                }
                params.push(
                    "embed.weight",
                    glorot(vec![config.embed_dim, prev], prev, config.embed_dim, &mut rng)?,
                )?;
                params.push("embed.bias", Tensor::zeros(vec![1, config.embed_dim]))?;
            }
            EncoderKind::TinyCnn => {
                let stack = config.conv_stack()?;
                let k1_cols = stack.conv1.kernel_cols();
                params.push(
                    "conv1.kernel",
                    glorot(
                        vec![stack.conv1.out_channels, k1_cols],
                        k1_cols,
                        stack.conv1.out_channels * 9,
                        &mut rng,
                    )?,
                )?;
                params.push(
                    "conv1.bias",
                    Tensor::zeros(vec![1, stack.conv1.out_channels]),
                )?;
                let k2_cols = stack.conv2.kernel_cols();
                params.push(
                    "conv2.kernel",
                    glorot(
                        vec![stack.conv2.out_channels, k2_cols],
                        k2_cols,
                        stack.conv2.out_channels * 9,
                        &mut rng,
                    )?,
                )?;
                params.push(
                    "conv2.bias",
                    Tensor::zeros(vec![1, stack.conv2.out_channels]),
                )?;
                let flat = stack.flat_dim();
                params.push(
                    "embed.weight",
                    glorot(vec![config.embed_dim, flat], flat, config.embed_dim, &mut rng)?,
                )?;
                params.push("embed.bias", Tensor::zeros(vec![1, config.embed_dim]))?;
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Replace every parameter value (names and shapes must match).
    pub fn with_params(&self, params: ParamSet) -> Result<Self, NumericsError> {
        let mut updated = self.clone();
        for (name, tensor) in params.iter() {
            updated.params.set(name, tensor.clone())?;
        }
        if params.len() != self.params.len() {
            return Err(NumericsError::InvalidArg(format!(
                "parameter count changed: {} vs {}",
                params.len(),
                self.params.len()
            )));
        }
        Ok(updated)
    }

    /// Names of the final linear layer's parameters, in optimizer order.
    pub fn last_layer_names(&self) -> Vec<String> {
        vec!["embed.weight".into(), "embed.bias".into()]
    }

    /// Content hash of all parameter values.
    pub fn digest(&self) -> String {
        self.params.digest()
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        save_json(
            path,
            &EncoderForm {
                config: self.config.clone(),
                params: self.params.to_named(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let form: EncoderForm = load_json(path)?;
        form.config.check()?;
        let params = ParamSet::from_named(form.params)?;
        let fresh = Self::init(form.config.clone(), 0)?;
        // Validate names and shapes against a reference construction.
        if fresh.params.len() != params.len() {
            return Err(NumericsError::Format(format!(
                "expected {} parameters, file has {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for (name, tensor) in fresh.params.iter() {
            let loaded = params.get(name).ok_or_else(|| {
                NumericsError::Format(format!("parameter `{name}` missing from file"))
            })?;
            if loaded.shape() != tensor.shape() {
                return Err(NumericsError::Format(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    loaded.shape(),
                    tensor.shape()
                )));
            }
        }
        Ok(Self {
            config: form.config,
            params,
        })
    }

    /// Pack images as rows of a `[n, channels*height*width]` matrix, in the
    /// channel-planar order the convolution geometry expects.
    pub fn pack_images(&self, images: &[Image]) -> Result<Tensor, NumericsError> {
        if images.is_empty() {
            return Err(NumericsError::InvalidArg(
                "cannot pack an empty image batch".into(),
            ));
        }
        let cols = self.config.input_dim();
        let mut data = Vec::with_capacity(images.len() * cols);
        for img in images {
            if img.channels() != self.config.channels
                || img.height() != self.config.height
                || img.width() != self.config.width
            {
                return Err(NumericsError::InvalidArg(format!(
                    "image is {}x{}x{}, encoder expects {}x{}x{}",
                    img.channels(),
                    img.height(),
                    img.width(),
                    self.config.channels,
                    self.config.height,
                    self.config.width
                )));
            }
            data.extend_from_slice(img.pixels());
        }
        Tensor::new(vec![images.len(), cols], data)
    }

    /// Linear layer with bias via the all-ones broadcast; `weight` is stored
    /// `[out, in]` and applied as `x W^T + 1 b`.
    fn wire_linear(
        g: &mut Graph,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        ones_col: NodeId,
    ) -> Result<NodeId, NumericsError> {
        let wt = g.transpose(weight)?;
        let prod = g.matmul(x, wt)?;
        let widened = g.matmul(ones_col, bias)?;
        g.add(prod, widened)
    }

    /// Per-channel conv bias broadcast: `bias [1, C] x indicator [C, C*H*W]`
    /// places each channel's bias on that channel's columns.
    fn channel_indicator(channels: usize, positions: usize) -> Tensor {
        let mut data = vec![0.0; channels * channels * positions];
        let row_len = channels * positions;
        for ch in 0..channels {
            for p in 0..positions {
                data[ch * row_len + ch * positions + p] = 1.0;
            }
        }
        Tensor::new(vec![channels, row_len], data).expect("indicator is finite")
    }

    /// Wire the complete encoder from packed input rows to the embedding.
    pub(crate) fn wire(
        &self,
        g: &mut Graph,
        input: NodeId,
        mode: WireMode,
    ) -> Result<WiredEncoder, NumericsError> {
        let (n, cols) = g.dims(input);
        if cols != self.config.input_dim() {
            return Err(NumericsError::InvalidArg(format!(
                "input node has {cols} columns, encoder expects {}",
                self.config.input_dim()
            )));
        }
        let mut param_nodes = Vec::new();
        let mut helper_bindings = Vec::new();
        let leaf = |g: &mut Graph,
                        name: &str,
                        shape: Vec<usize>|
         -> Result<NodeId, NumericsError> {
            if mode.trains(name) {
                g.trainable(name, shape)
            } else {
                g.constant(name, shape)
            }
        };

        let ones_col = g.constant(format!("ones-{n}x1"), vec![n, 1])?;
        helper_bindings.push((ones_col, Tensor::filled(vec![n, 1], 1.0)?));

        let penultimate = match self.config.kind {
            EncoderKind::Mlp => {
                let mut x = input;
                let mut prev = self.config.input_dim();
                for (i, &width) in self.config.hidden.iter().enumerate() {
                    let wname = format!("layer{i}.weight");
                    let bname = format!("layer{i}.bias");
                    let w = leaf(g, &wname, vec![width, prev])?;
                    let b = leaf(g, &bname, vec![1, width])?;
                    param_nodes.push((wname, w));
                    param_nodes.push((bname, b));
                    let lin = Self::wire_linear(g, x, w, b, ones_col)?;
                    x = g.relu(lin)?;
                    prev = width;
                }
                x
            }
            EncoderKind::TinyCnn => {
                let stack = self.config.conv_stack()?;
                let mut x = input;
                for (tag, conv, pool) in [
                    ("conv1", stack.conv1, stack.pool1),
                    ("conv2", stack.conv2, stack.pool2),
                ] {
                    let kname = format!("{tag}.kernel");
                    let bname = format!("{tag}.bias");
                    let k = leaf(g, &kname, vec![conv.out_channels, conv.kernel_cols()])?;
                    let b = leaf(g, &bname, vec![1, conv.out_channels])?;
                    param_nodes.push((kname, k));
                    param_nodes.push((bname, b));

                    let convd = g.conv2d_valid(x, k, conv)?;
                    let positions = conv.out_h() * conv.out_w();
                    let indicator = g.constant(
                        format!("{tag}-bias-spread"),
                        vec![conv.out_channels, conv.out_channels * positions],
                    )?;
                    helper_bindings.push((
                        indicator,
                        Self::channel_indicator(conv.out_channels, positions),
                    ));
                    let brow = g.matmul(b, indicator)?;
                    let widened = g.matmul(ones_col, brow)?;
                    let biased = g.add(convd, widened)?;
                    let active = g.relu(biased)?;
                    x = g.avgpool2x2(active, pool)?;
                }
                x
            }
        };

        let output = self.wire_embed_layer(g, penultimate, mode, &mut param_nodes, ones_col)?;
        Ok(WiredEncoder {
            output,
            param_nodes,
            helper_bindings,
        })
    }

    /// Wire only the final linear layer on top of precomputed penultimate
    /// features (the episodic phase trains just this layer in-graph).
    pub(crate) fn wire_last_layer(
        &self,
        g: &mut Graph,
        penultimate: NodeId,
        mode: WireMode,
    ) -> Result<WiredEncoder, NumericsError> {
        let (n, cols) = g.dims(penultimate);
        let expect = self.config.penultimate_dim()?;
        if cols != expect {
            return Err(NumericsError::InvalidArg(format!(
                "penultimate node has {cols} columns, encoder expects {expect}"
            )));
        }
        let ones_col = g.constant(format!("ones-{n}x1"), vec![n, 1])?;
        let helper_bindings = vec![(ones_col, Tensor::filled(vec![n, 1], 1.0)?)];
        let mut param_nodes = Vec::new();
        let output = self.wire_embed_layer(g, penultimate, mode, &mut param_nodes, ones_col)?;
        Ok(WiredEncoder {
            output,
            param_nodes,
            helper_bindings,
        })
    }

    fn wire_embed_layer(
        &self,
        g: &mut Graph,
        penultimate: NodeId,
        mode: WireMode,
        param_nodes: &mut Vec<(String, NodeId)>,
        ones_col: NodeId,
    ) -> Result<NodeId, NumericsError> {
        let prev = g.dims(penultimate).1;
        let shape_w = vec![self.config.embed_dim, prev];
        let shape_b = vec![1, self.config.embed_dim];
        let (w, b) = if mode.trains("embed.weight") {
            (g.trainable("embed.weight", shape_w)?, g.trainable("embed.bias", shape_b)?)
        } else {
            (g.constant("embed.weight", shape_w)?, g.constant("embed.bias", shape_b)?)
        };
        param_nodes.push(("embed.weight".into(), w));
        param_nodes.push(("embed.bias".into(), b));
        Self::wire_linear(g, penultimate, w, b, ones_col)
    }

    fn run_to(&self, images: &[Image], last_layer: bool) -> Result<Tensor, NumericsError> {
        let input_tensor = self.pack_images(images)?;
        let n = images.len();
        let mut g = Graph::new();
        let input = g.constant("input", vec![n, self.config.input_dim()])?;
        let wired = self.wire(&mut g, input, WireMode::AllConstant)?;
        // For penultimate features, forward the full graph and read the
        // embed layer's input node value instead of rebuilding a trimmed
        // graph: the wiring is identical, so the value is too.
        let mut bindings = Bindings::new();
        bindings.bind(input, input_tensor);
        wired.bind_into(&mut bindings, &self.params)?;
        g.forward(&bindings)?;
        if last_layer {
            Ok(g.value(wired.output).expect("forward cached it").clone())
        } else {
            // The embed layer is add(matmul(penultimate, W^T), bias); walk
            // two first-input hops back to the penultimate node.
            let matmul_node = g.input_ids(wired.output)[0];
            let penult = g.input_ids(matmul_node)[0];
            debug_assert_eq!(g.dims(penult), (n, self.config.penultimate_dim()?));
            Ok(g.value(penult).expect("forward cached it").clone())
        }
    }

    /// Embedding rows for a batch of images, `[n, embed_dim]`.
    pub fn embed(&self, images: &[Image]) -> Result<Tensor, NumericsError> {
        self.run_to(images, true)
    }

    /// Features feeding the final linear layer, `[n, penultimate_dim]`.
    pub fn embed_penultimate(&self, images: &[Image]) -> Result<Tensor, NumericsError> {
        self.run_to(images, false)
    }
}

/// Schedule for supervised pretraining on the base classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Multiply the learning rate by `decay_factor` every `decay_every`
    /// epochs (`decay_every == 0` disables the schedule).
    pub decay_factor: f64,
    pub decay_every: usize,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            decay_factor: 0.5,
            decay_every: 10,
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

/// Result of pretraining: updated encoder, the linear head it was trained
/// with, mean loss per epoch, and final accuracy on the (unaugmented)
/// training images.
pub struct PretrainOutcome {
    pub encoder: EncoderParams,
    pub head: ClassifierWeights,
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: f64,
}

/// Jointly train the encoder and a linear head on the training images of
/// `classes` with momentum SGD on cross-entropy.
pub fn pretrain(
    encoder: &EncoderParams,
    dataset: &Dataset,
    classes: &[usize],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome, NumericsError> {
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(NumericsError::InvalidArg(
            "pretraining needs epochs >= 1 and batch_size >= 1".into(),
        ));
    }
    if classes.is_empty() {
        return Err(NumericsError::InvalidArg(
            "pretraining needs at least one class".into(),
        ));
    }
    for &c in classes {
        if c >= dataset.class_count() {
            return Err(NumericsError::InvalidArg(format!(
                "class {c} is outside the dataset's {} classes",
                dataset.class_count()
            )));
        }
    }

    let mut sorted_classes = classes.to_vec();
    sorted_classes.sort_unstable();
    sorted_classes.dedup();
    if sorted_classes.len() != classes.len() {
        return Err(NumericsError::InvalidArg(
            "pretraining classes must be distinct".into(),
        ));
    }

    let head = ClassifierWeights::random_init(
        HeadKind::Linear,
        1.0,
        sorted_classes.clone(),
        encoder.config.embed_dim,
        mix(cfg.seed, &[salt("pretrain-head")]),
    )?;

    let mut examples: Vec<(usize, usize)> = Vec::new();
    for &c in &sorted_classes {
        for i in 0..dataset.train_images(c).len() {
            examples.push((c, i));
        }
    }

    let mut params: Vec<Tensor> = encoder.params.iter().map(|(_, t)| t.clone()).collect();
    let param_names: Vec<String> = encoder.params.names().map(String::from).collect();
    params.push(head.weights().clone());
    params.push(head.bias().expect("linear head has a bias").clone());

    let mut state = SgdState::new(cfg.learning_rate, cfg.momentum, &params)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if cfg.decay_every > 0 {
            let lr = cfg.learning_rate * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32);
            state.set_learning_rate(lr)?;
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix(cfg.seed, &[salt("shuffle"), epoch as u64]));
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut images = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &idx in batch {
                let (c, i) = examples[idx];
                let img = &dataset.train_images(c)[i];
                let img = if cfg.augment.is_noop() {
                    img.clone()
                } else {
                    let mut rng = ChaCha8Rng::seed_from_u64(mix(
                        cfg.seed,
                        &[salt("augment"), epoch as u64, idx as u64],
                    ));
                    augment_image(img, &cfg.augment, &mut rng)
                };
                images.push(img);
                labels.push(c);
            }

            let input_tensor = encoder.pack_images(&images)?;
            let n = images.len();
            let mut g = Graph::new();
            let input = g.constant("input", vec![n, encoder.config.input_dim()])?;
            let wired = encoder.wire(&mut g, input, WireMode::AllTrainable)?;
            let w = g.trainable("head-weights", vec![head.class_count(), encoder.config.embed_dim])?;
            let b = g.trainable("head-bias", vec![1, head.class_count()])?;
            let (logits, pending) =
                score_graph(&mut g, HeadKind::Linear, 1.0, wired.output, w, Some(b))?;
            g.cross_entropy(logits, head.label_rows(&labels)?)?;

            let mut bindings = Bindings::new();
            bindings.bind(input, input_tensor);
            bindings.bind_all(pending);
            for (id, t) in &wired.helper_bindings {
                bindings.bind(*id, t.clone());
            }
            for ((_, id), value) in wired.param_nodes.iter().zip(&params) {
                bindings.bind(*id, value.clone());
            }
            bindings.bind(w, params[param_names.len()].clone());
            bindings.bind(b, params[param_names.len() + 1].clone());

            let (loss, grads) = g.backward(&bindings).map_err(|e| {
                NumericsError::InvalidArg(format!(
                    "pretraining diverged in epoch {epoch}: {e}"
                ))
            })?;
            if !loss.is_finite() {
                return Err(NumericsError::InvalidArg(format!(
                    "pretraining diverged in epoch {epoch}: loss is not finite"
                )));
            }

            let mut grad_vec = Vec::with_capacity(params.len());
            for (_, id) in &wired.param_nodes {
                grad_vec.push(grads.get(*id).cloned().expect("trainable leaf gradient"));
            }
            grad_vec.push(grads.get(w).cloned().expect("head weight gradient"));
            grad_vec.push(grads.get(b).cloned().expect("head bias gradient"));

            let (next, next_state) = sgd_step(&params, &grad_vec, &state)?;
            params = next;
            state = next_state;
            loss_sum += loss * n as f64;
            seen += n;
        }
        epoch_losses.push(loss_sum / seen as f64);
    }

    let mut fitted_params = ParamSet::new();
    for (name, value) in param_names.iter().zip(&params) {
        fitted_params.push(name.clone(), value.clone())?;
    }
    let fitted_encoder = EncoderParams {
        config: encoder.config.clone(),
        params: fitted_params,
    };
    let fitted_head = head
        .with_weights(params[param_names.len()].clone())?
        .with_bias(params[param_names.len() + 1].clone())?;

    let mut correct = 0usize;
    let mut total = 0usize;
    for &c in &sorted_classes {
        let images = dataset.train_images(c);
        for chunk in images.chunks(128) {
            let emb = fitted_encoder.embed(chunk)?;
            let scores = fitted_head.score_batch(&emb)?;
            for row in 0..chunk.len() {
                let mut best = 0usize;
                for j in 1..fitted_head.class_count() {
                    if scores.at(row, j) > scores.at(row, best) {
                        best = j;
                    }
                }
                if fitted_head.class_ids()[best] == c {
                    correct += 1;
                }
                total += 1;
            }
        }
    }

    Ok(PretrainOutcome {
        encoder: fitted_encoder,
        head: fitted_head,
        epoch_losses,
        train_accuracy: correct as f64 / total as f64,
    })
}

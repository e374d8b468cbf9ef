//! Graph-attention adaptation of pooled classifier weights.
//!
//! All sessions' classifier rows are pooled into a bank. The adapter treats
//! each row as a graph node, computes pairwise attention between projected
//! rows (plain inner products, row-softmax over every node including self),
//! and moves each row by a residual step along the attention-weighted,
//! linearly transformed rows of the whole bank:
//!
//! `w'_j = w_j + sum_k a_jk (U w_k)` with `a_j. = softmax_j(phi(w_j) . theta(w_k))`.
//!
//! Parameters depend only on the embedding dimension, never on how many
//! classes the bank holds, so an adapter trained on rehearsal episodes with a
//! handful of classes transfers unchanged to banks of any size. The update is
//! synchronous (all rows read the pre-update bank) and permutation
//! equivariant: reordering bank rows reorders the output the same way.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::heads::{score_graph, ClassifierWeights, HeadKind};
use crate::numerics::{
    load_json, save_json, Bindings, Graph, NamedTensor, NodeId, NumericsError, ParamSet, Tensor,
};
use crate::seeding::{mix, salt};

/// Pooled classifier rows from one or more sessions, kept as a single merged
/// head plus the invariants that make pooling sound (same kind, scale, and
/// dimension everywhere; globally distinct class ids).
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierBank {
    head: ClassifierWeights,
}

impl ClassifierBank {
    /// Merge session heads in the given order. All heads must share kind,
    /// scale, and embedding dimension, and no class id may repeat.
    pub fn from_heads(heads: &[&ClassifierWeights]) -> Result<Self, NumericsError> {
        let first = *heads.first().ok_or_else(|| {
            NumericsError::InvalidArg("a bank needs at least one head".into())
        })?;
        let kind = first.kind();
        let scale = first.scale();
        let dim = first.dim();
        let mut class_ids = Vec::new();
        let mut rows = Vec::new();
        let mut biases = Vec::new();
        for head in heads {
            if head.kind() != kind {
                return Err(NumericsError::InvalidArg(format!(
                    "cannot pool a {} head into a {kind} bank",
                    head.kind()
                )));
            }
            if head.scale() != scale {
                return Err(NumericsError::InvalidArg(format!(
                    "cannot pool heads with scales {scale} and {}",
                    head.scale()
                )));
            }
            if head.dim() != dim {
                return Err(NumericsError::InvalidArg(format!(
                    "cannot pool heads with dims {dim} and {}",
                    head.dim()
                )));
            }
            class_ids.extend_from_slice(head.class_ids());
            for r in 0..head.class_count() {
                rows.push(
                    (0..dim)
                        .map(|c| head.weights().at(r, c))
                        .collect::<Vec<f64>>(),
                );
            }
            match head.bias() {
                Some(b) => biases.extend((0..head.class_count()).map(|j| b.at(0, j))),
                None => {}
            }
        }
        let n = class_ids.len();
        let bias = if biases.is_empty() {
            None
        } else if biases.len() == n {
            Some(Tensor::new(vec![1, n], biases)?)
        } else {
            return Err(NumericsError::InvalidArg(
                "either every pooled head carries a bias or none does".into(),
            ));
        };
        let weights = Tensor::from_rows(&rows)?;
        // ClassifierWeights::new re-checks distinctness of the pooled ids.
        Ok(Self {
            head: ClassifierWeights::new(kind, scale, class_ids, weights, bias)?,
        })
    }

    /// The merged head (scoring happens through this).
    pub fn as_head(&self) -> &ClassifierWeights {
        &self.head
    }

    pub fn class_ids(&self) -> &[usize] {
        self.head.class_ids()
    }

    pub fn class_count(&self) -> usize {
        self.head.class_count()
    }

    pub fn dim(&self) -> usize {
        self.head.dim()
    }

    pub fn weights(&self) -> &Tensor {
        self.head.weights()
    }

    /// Same bank with adapted weight rows.
    pub fn with_weights(&self, weights: Tensor) -> Result<Self, NumericsError> {
        Ok(Self {
            head: self.head.with_weights(weights)?,
        })
    }
}

/// Architecture of the adapter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    /// Parallel attention heads; their messages are averaged.
    pub attention_heads: usize,
    /// Width of the phi/theta projections the attention scores live in.
    pub proj_dim: usize,
    /// Row-wise layer normalization (gain/bias) after the residual update.
    pub layer_norm: bool,
    /// Probability of dropping a message entry during training (inverted
    /// scaling keeps expectations unchanged). `0.0` disables.
    pub dropout: f64,
    /// Give each query its own graph node during scoring, adapting bank and
    /// query jointly per query instead of adapting the bank once.
    pub include_query_node: bool,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        Self {
            attention_heads: 1,
            proj_dim: 16,
            layer_norm: false,
            dropout: 0.0,
            include_query_node: false,
        }
    }
}

impl AdapterConfig {
    fn check(&self) -> Result<(), NumericsError> {
        if self.attention_heads == 0 || self.proj_dim == 0 {
            return Err(NumericsError::InvalidArg(
                "adapter needs at least one attention head and a positive proj_dim".into(),
            ));
        }
        if !self.dropout.is_finite() || !(0.0..1.0).contains(&self.dropout) {
            return Err(NumericsError::InvalidArg(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Whether an adaptation pass is for inference or training (training may
/// apply dropout, seeded for reproducibility).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaptMode {
    Inference,
    Training { dropout_seed: u64 },
}

/// Adapter architecture plus parameter values. Parameter shapes involve only
/// the embedding dimension and `proj_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    config: AdapterConfig,
    dim: usize,
    params: ParamSet,
}

#[derive(Serialize, Deserialize)]
struct AdapterForm {
    config: AdapterConfig,
    dim: usize,
    params: Vec<NamedTensor>,
}

/// Leaf nodes for every adapter parameter inside some graph; shared across
/// subgraphs so one optimizer step sees one copy of each parameter.
/// A ready-to-differentiate episodic loss: graph, bindings for every leaf,
/// and the trainable adapter leaves by parameter name. Calling
/// `graph.backward(&bindings)` yields the loss and its gradients.
pub struct AdaptLossGraph {
    pub graph: Graph,
    pub bindings: Bindings,
    pub param_nodes: Vec<(String, NodeId)>,
}

pub(crate) struct AdapterLeaves {
    pub param_nodes: Vec<(String, NodeId)>,
}

impl AdapterLeaves {
    pub fn bind_into(
        &self,
        bindings: &mut Bindings,
        params: &ParamSet,
    ) -> Result<(), NumericsError> {
        for (name, id) in &self.param_nodes {
            let value = params.get(name).ok_or_else(|| {
                NumericsError::InvalidArg(format!("missing adapter parameter `{name}`"))
            })?;
            bindings.bind(*id, value.clone());
        }
        Ok(())
    }

    fn node(&self, name: &str) -> NodeId {
        self.param_nodes
            .iter()
            .find(|(n, _)| n == name)
            .expect("declared adapter parameter")
            .1
    }
}

impl AdapterParams {
    /// Seeded init: fan-balanced phi/theta, near-zero message transform `U`
    /// (the adapter starts close to the identity), unit layer-norm gain.
    pub fn init(config: AdapterConfig, dim: usize, seed: u64) -> Result<Self, NumericsError> {
        config.check()?;
        if dim == 0 {
            return Err(NumericsError::InvalidArg(
                "embedding dimension must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[salt("adapter-init")]));
        let mut params = ParamSet::new();
        let limit = (6.0 / (config.proj_dim + dim) as f64).sqrt();
        for h in 0..config.attention_heads {
            params.push(
                format!("head{h}.phi"),
                Tensor::uniform(vec![config.proj_dim, dim], -limit, limit, &mut rng)?,
            )?;
            params.push(
                format!("head{h}.theta"),
                Tensor::uniform(vec![config.proj_dim, dim], -limit, limit, &mut rng)?,
            )?;
            params.push(
                format!("head{h}.u"),
                Tensor::uniform(vec![dim, dim], -1e-3, 1e-3, &mut rng)?,
            )?;
        }
        if config.layer_norm {
            params.push("ln.gain", Tensor::filled(vec![1, dim], 1.0)?)?;
            params.push("ln.bias", Tensor::zeros(vec![1, dim]))?;
        }
        Ok(Self {
            config,
            dim,
            params,
        })
    }

    pub fn config(&self) -> &AdapterConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Replace every parameter value (names and shapes must match).
    pub fn with_params(&self, params: ParamSet) -> Result<Self, NumericsError> {
        if params.len() != self.params.len() {
            return Err(NumericsError::InvalidArg(format!(
                "parameter count changed: {} vs {}",
                params.len(),
                self.params.len()
            )));
        }
        let mut updated = self.clone();
        for (name, tensor) in params.iter() {
            updated.params.set(name, tensor.clone())?;
        }
        Ok(updated)
    }

    pub fn digest(&self) -> String {
        self.params.digest()
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        save_json(
            path,
            &AdapterForm {
                config: self.config,
                dim: self.dim,
                params: self.params.to_named(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        let form: AdapterForm = load_json(path)?;
        let reference = Self::init(form.config, form.dim, 0)?;
        let params = ParamSet::from_named(form.params)?;
        if params.len() != reference.params.len() {
            return Err(NumericsError::Format(format!(
                "expected {} parameters, file has {}",
                reference.params.len(),
                params.len()
            )));
        }
        for (name, tensor) in reference.params.iter() {
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
            dim: form.dim,
            params,
        })
    }

    /// Declare one leaf per parameter in `g`.
    pub(crate) fn declare_leaves(
        &self,
        g: &mut Graph,
        trainable: bool,
    ) -> Result<AdapterLeaves, NumericsError> {
        let mut param_nodes = Vec::with_capacity(self.params.len());
        for (name, tensor) in self.params.iter() {
            let shape = tensor.shape().to_vec();
            let id = if trainable {
                g.trainable(name, shape)?
            } else {
                g.constant(name, shape)?
            };
            param_nodes.push((name.to_string(), id));
        }
        Ok(AdapterLeaves { param_nodes })
    }

    /// Build a seeded inverted-dropout mask for a `[rows, dim]` message.
    fn dropout_mask(&self, rows: usize, dropout_seed: u64) -> Result<Tensor, NumericsError> {
        let p = self.config.dropout;
        let keep = 1.0 - p;
        let mut rng = ChaCha8Rng::seed_from_u64(mix(dropout_seed, &[salt("dropout-mask")]));
        let data: Vec<f64> = (0..rows * self.dim)
            .map(|_| if rng.gen_bool(keep) { 1.0 / keep } else { 0.0 })
            .collect();
        Tensor::new(vec![rows, self.dim], data)
    }

    /// Wire one adaptation of `bank_rows` (an `[M, dim]` node) using shared
    /// parameter leaves. Returns the adapted `[M, dim]` node and the helper
    /// constants (ones matrices, dropout mask) to bind.
    pub(crate) fn wire_with_leaves(
        &self,
        g: &mut Graph,
        leaves: &AdapterLeaves,
        bank_rows: NodeId,
        mode: AdaptMode,
    ) -> Result<(NodeId, Vec<(NodeId, Tensor)>), NumericsError> {
        let (m, d) = g.dims(bank_rows);
        if d != self.dim {
            return Err(NumericsError::InvalidArg(format!(
                "bank rows have dim {d}, adapter expects {}",
                self.dim
            )));
        }
        let mut helper_bindings = Vec::new();

        let mut message: Option<NodeId> = None;
        for h in 0..self.config.attention_heads {
            let phi = leaves.node(&format!("head{h}.phi"));
            let theta = leaves.node(&format!("head{h}.theta"));
            let u = leaves.node(&format!("head{h}.u"));

            let phi_t = g.transpose(phi)?;
            let theta_t = g.transpose(theta)?;
            let sender = g.matmul(bank_rows, phi_t)?; // [M, proj]
            let receiver = g.matmul(bank_rows, theta_t)?; // [M, proj]
            let receiver_t = g.transpose(receiver)?;
            let affinity = g.matmul(sender, receiver_t)?; // [M, M]
            let coeffs = g.softmax_rows(affinity)?;

            let mixed = g.matmul(coeffs, bank_rows)?; // [M, dim]
            let u_t = g.transpose(u)?;
            let moved = g.matmul(mixed, u_t)?; // [M, dim]
            message = Some(match message {
                None => moved,
                Some(acc) => g.add(acc, moved)?,
            });
        }
        let mut message = message.expect("at least one attention head");
        if self.config.attention_heads > 1 {
            message = g.scale(message, 1.0 / self.config.attention_heads as f64)?;
        }

        if let AdaptMode::Training { dropout_seed } = mode {
            if self.config.dropout > 0.0 {
                let mask = g.constant(format!("dropout-{m}x{d}"), vec![m, d])?;
                helper_bindings.push((mask, self.dropout_mask(m, dropout_seed)?));
                message = g.mul(message, mask)?;
            }
        }

        let mut out = g.add(bank_rows, message)?;

        if self.config.layer_norm {
            let gain = leaves.node("ln.gain");
            let bias = leaves.node("ln.bias");
            let ones_row = g.constant(format!("ln-ones-1x{d}"), vec![1, d])?;
            helper_bindings.push((ones_row, Tensor::filled(vec![1, d], 1.0)?));
            let ones_col = g.constant(format!("ln-ones-{m}x1"), vec![m, 1])?;
            helper_bindings.push((ones_col, Tensor::filled(vec![m, 1], 1.0)?));

            let mu = g.mean_over_axis(out, 1)?; // [M, 1]
            let mu_wide = g.matmul(mu, ones_row)?;
            let neg_mu = g.scale(mu_wide, -1.0)?;
            let centered = g.add(out, neg_mu)?;
            let unit = g.l2_normalize_rows(centered)?;
            let standardized = g.scale(unit, (d as f64).sqrt())?;
            let gain_wide = g.matmul(ones_col, gain)?;
            let bias_wide = g.matmul(ones_col, bias)?;
            let gained = g.mul(standardized, gain_wide)?;
            out = g.add(gained, bias_wide)?;
        }

        Ok((out, helper_bindings))
    }

    /// Wire the full scoring path for a batch of query embeddings against a
    /// bank node: adapt, then score each query row against the adapted rows.
    /// When `include_query_node` is set, each query is concatenated to the
    /// bank and adapted jointly (parameter leaves shared across queries).
    /// Returns the `[Q, M]` logits node plus constant bindings to install.
    pub(crate) fn wire_query_scores(
        &self,
        g: &mut Graph,
        leaves: &AdapterLeaves,
        kind: HeadKind,
        scale: f64,
        bank_node: NodeId,
        query_node: NodeId,
        mode: AdaptMode,
    ) -> Result<(NodeId, Vec<(NodeId, Tensor)>), NumericsError> {
        let (m, d) = g.dims(bank_node);
        let (q, dq) = g.dims(query_node);
        if d != self.dim || dq != self.dim {
            return Err(NumericsError::InvalidArg(format!(
                "bank dim {d} / query dim {dq} do not match adapter dim {}",
                self.dim
            )));
        }
        let mut pending = Vec::new();
        let logits = if self.config.include_query_node {
            let mut keep = vec![0.0; m * (m + 1)];
            for j in 0..m {
                keep[j * (m + 1) + j] = 1.0;
            }
            let keep_bank = g.constant("keep-bank", vec![m, m + 1])?;
            pending.push((keep_bank, Tensor::new(vec![m, m + 1], keep)?));
            let mut last = vec![0.0; m + 1];
            last[m] = 1.0;
            let keep_query = g.constant("keep-query", vec![1, m + 1])?;
            pending.push((keep_query, Tensor::new(vec![1, m + 1], last)?));

            let mut rows = Vec::with_capacity(q);
            for qi in 0..q {
                let mut sel = vec![0.0; q];
                sel[qi] = 1.0;
                let sel_node = g.constant(format!("pick-query-{qi}"), vec![1, q])?;
                pending.push((sel_node, Tensor::new(vec![1, q], sel)?));
                let row = g.matmul(sel_node, query_node)?;
                let joined = g.concat_rows(&[bank_node, row])?;
                let (adapted, helpers) = self.wire_with_leaves(g, leaves, joined, mode)?;
                pending.extend(helpers);
                let bank_rows = g.matmul(keep_bank, adapted)?;
                let query_row = g.matmul(keep_query, adapted)?;
                let (score_row, more) = score_graph(g, kind, scale, query_row, bank_rows, None)?;
                pending.extend(more);
                rows.push(score_row);
            }
            g.concat_rows(&rows)?
        } else {
            let (adapted, helpers) = self.wire_with_leaves(g, leaves, bank_node, mode)?;
            pending.extend(helpers);
            let (logits, more) = score_graph(g, kind, scale, query_node, adapted, None)?;
            pending.extend(more);
            logits
        };
        Ok((logits, pending))
    }

    /// Build the full episodic loss as one differentiable graph: adapt the
    /// bank (held constant), score every query embedding against the adapted
    /// rows with the bank's own head kind and scale, and take cross-entropy
    /// against `labels`. Gradients flow into the adapter parameters only;
    /// the returned bindings hold this adapter's current values.
    pub fn adapt_loss_graph(
        &self,
        bank: &ClassifierBank,
        queries: &Tensor,
        labels: &[usize],
        mode: AdaptMode,
    ) -> Result<AdaptLossGraph, NumericsError> {
        let (q, d) = queries.matrix_dims()?;
        if q == 0 || d != self.dim || bank.dim() != self.dim {
            return Err(NumericsError::InvalidArg(format!(
                "need a non-empty [Q, {0}] query batch and a dim-{0} bank; \
                 got [{q}, {d}] queries and a dim-{1} bank",
                self.dim,
                bank.dim()
            )));
        }
        if labels.len() != q {
            return Err(NumericsError::InvalidArg(format!(
                "{q} queries but {} labels",
                labels.len()
            )));
        }
        let label_rows = bank.as_head().label_rows(labels)?;
        let m = bank.class_count();

        let mut g = Graph::new();
        let bank_node = g.constant("bank-rows", vec![m, d])?;
        let query_node = g.constant("query-embeddings", vec![q, d])?;
        let leaves = self.declare_leaves(&mut g, true)?;
        let (logits, pending) = self.wire_query_scores(
            &mut g,
            &leaves,
            bank.as_head().kind(),
            bank.as_head().scale(),
            bank_node,
            query_node,
            mode,
        )?;
        g.cross_entropy(logits, label_rows)?;

        let mut bindings = Bindings::new();
        bindings.bind(bank_node, bank.weights().clone());
        bindings.bind(query_node, queries.clone());
        bindings.bind_all(pending);
        leaves.bind_into(&mut bindings, &self.params)?;
        Ok(AdaptLossGraph {
            graph: g,
            bindings,
            param_nodes: leaves.param_nodes,
        })
    }

    /// Adapt a bank: one synchronous attention update over its rows.
    pub fn adapt(
        &self,
        bank: &ClassifierBank,
        mode: AdaptMode,
    ) -> Result<ClassifierBank, NumericsError> {
        let m = bank.class_count();
        let mut g = Graph::new();
        let rows = g.constant("bank-rows", vec![m, self.dim])?;
        let leaves = self.declare_leaves(&mut g, false)?;
        let (_, helpers) = self.wire_with_leaves(&mut g, &leaves, rows, mode)?;

        let mut bindings = Bindings::new();
        bindings.bind(rows, bank.weights().clone());
        bindings.bind_all(helpers);
        leaves.bind_into(&mut bindings, &self.params)?;
        let adapted = g.forward(&bindings)?;
        bank.with_weights(adapted)
    }

    /// Attention coefficients of the first head over the bank rows (row `j`
    /// holds how much row `j` attends to every row, summing to one). Computed
    /// with the same graph wiring adaptation uses.
    pub fn relation_coefficients(&self, bank: &ClassifierBank) -> Result<Tensor, NumericsError> {
        let m = bank.class_count();
        let mut g = Graph::new();
        let rows = g.constant("bank-rows", vec![m, self.dim])?;
        let phi = g.constant("phi", vec![self.config.proj_dim, self.dim])?;
        let theta = g.constant("theta", vec![self.config.proj_dim, self.dim])?;
        let phi_t = g.transpose(phi)?;
        let theta_t = g.transpose(theta)?;
        let sender = g.matmul(rows, phi_t)?;
        let receiver = g.matmul(rows, theta_t)?;
        let receiver_t = g.transpose(receiver)?;
        let affinity = g.matmul(sender, receiver_t)?;
        g.softmax_rows(affinity)?;

        let mut bindings = Bindings::new();
        bindings.bind(rows, bank.weights().clone());
        bindings.bind(
            phi,
            self.params.get("head0.phi").expect("head 0 exists").clone(),
        );
        bindings.bind(
            theta,
            self.params
                .get("head0.theta")
                .expect("head 0 exists")
                .clone(),
        );
        g.forward(&bindings)
    }

    /// Score queries when each query joins the adaptation as its own node:
    /// for every query row, the bank plus that query is adapted jointly, and
    /// the query's adapted row is scored against the adapted bank rows.
    /// Returns `[Q, M]` logits in bank class order.
    pub fn score_queries_with_query_node(
        &self,
        bank: &ClassifierBank,
        queries: &Tensor,
    ) -> Result<Tensor, NumericsError> {
        let (q_count, d) = queries.matrix_dims()?;
        if d != self.dim {
            return Err(NumericsError::InvalidArg(format!(
                "queries have dim {d}, adapter expects {}",
                self.dim
            )));
        }
        let m = bank.class_count();
        let kind = bank.as_head().kind();
        let scale = bank.as_head().scale();

        // Selector that keeps the first M rows of the joined [M+1, dim].
        let mut keep = vec![0.0; m * (m + 1)];
        for j in 0..m {
            keep[j * (m + 1) + j] = 1.0;
        }
        let keep_bank = Tensor::new(vec![m, m + 1], keep)?;
        let mut last = vec![0.0; m + 1];
        last[m] = 1.0;
        let keep_query = Tensor::new(vec![1, m + 1], last)?;

        let mut out = Vec::with_capacity(q_count * m);
        for qi in 0..q_count {
            let row: Vec<f64> = (0..d).map(|c| queries.at(qi, c)).collect();
            let mut g = Graph::new();
            let bank_node = g.constant("bank-rows", vec![m, d])?;
            let query_node = g.constant("query-row", vec![1, d])?;
            let joined = g.concat_rows(&[bank_node, query_node])?;
            let leaves = self.declare_leaves(&mut g, false)?;
            let (adapted, helpers) =
                self.wire_with_leaves(&mut g, &leaves, joined, AdaptMode::Inference)?;

            let sel_bank = g.constant("keep-bank", vec![m, m + 1])?;
            let sel_query = g.constant("keep-query", vec![1, m + 1])?;
            let bank_rows = g.matmul(sel_bank, adapted)?;
            let query_row = g.matmul(sel_query, adapted)?;
            let (_, pending) = score_graph(&mut g, kind, scale, query_row, bank_rows, None)?;

            let mut bindings = Bindings::new();
            bindings.bind(bank_node, bank.weights().clone());
            bindings.bind(query_node, Tensor::new(vec![1, d], row)?);
            bindings.bind(sel_bank, keep_bank.clone());
            bindings.bind(sel_query, keep_query.clone());
            bindings.bind_all(helpers);
            bindings.bind_all(pending);
            leaves.bind_into(&mut bindings, &self.params)?;
            let scores = g.forward(&bindings)?;
            out.extend_from_slice(scores.data());
        }
        Tensor::new(vec![q_count, m], out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_bank(m: usize, dim: usize, seed: u64) -> ClassifierBank {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Tensor::uniform(vec![m, dim], -1.0, 1.0, &mut rng).unwrap();
        let ids: Vec<usize> = (0..m).collect();
        ClassifierBank {
            head: ClassifierWeights::new(HeadKind::Cosine, 16.0, ids, weights, None).unwrap(),
        }
    }

    fn zeroed_u(adapter: &AdapterParams) -> AdapterParams {
        let mut params = adapter.params().clone();
        for h in 0..adapter.config().attention_heads {
            let name = format!("head{h}.u");
            let shape = params.get(&name).unwrap().shape().to_vec();
            params.set(&name, Tensor::zeros(shape)).unwrap();
        }
        adapter.with_params(params).unwrap()
    }

    #[test]
    fn zero_message_transform_is_exact_identity() {
        let adapter = zeroed_u(
            &AdapterParams::init(AdapterConfig::default(), 6, 3).unwrap(),
        );
        let bank = toy_bank(5, 6, 1);
        let adapted = adapter.adapt(&bank, AdaptMode::Inference).unwrap();
        assert_eq!(adapted.weights().data(), bank.weights().data());
    }

    #[test]
    fn relation_coefficients_match_a_double_loop_oracle() {
        let adapter = AdapterParams::init(AdapterConfig::default(), 5, 9).unwrap();
        let bank = toy_bank(7, 5, 4);
        let coeffs = adapter.relation_coefficients(&bank).unwrap();
        assert_eq!(coeffs.shape(), &[7, 7]);

        let phi = adapter.params().get("head0.phi").unwrap();
        let theta = adapter.params().get("head0.theta").unwrap();
        let w = bank.weights();
        let proj = adapter.config().proj_dim;
        let project = |row: usize, mat: &Tensor| -> Vec<f64> {
            (0..proj)
                .map(|p| (0..5).map(|c| mat.at(p, c) * w.at(row, c)).sum())
                .collect()
        };
        for j in 0..7 {
            let pj = project(j, phi);
            let mut raw = Vec::with_capacity(7);
            for k in 0..7 {
                let tk = project(k, theta);
                raw.push(pj.iter().zip(&tk).map(|(a, b)| a * b).sum::<f64>());
            }
            let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = raw.iter().map(|v| (v - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            let mut row_total = 0.0;
            for k in 0..7 {
                let expected = exps[k] / sum;
                assert!(
                    (coeffs.at(j, k) - expected).abs() <= 1e-12,
                    "({j},{k}): {} vs {expected}",
                    coeffs.at(j, k)
                );
                row_total += coeffs.at(j, k);
            }
            assert!((row_total - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn adaptation_is_permutation_equivariant() {
        let adapter = AdapterParams::init(AdapterConfig::default(), 6, 11).unwrap();
        let bank = toy_bank(8, 6, 2);
        let adapted = adapter.adapt(&bank, AdaptMode::Inference).unwrap();

        // Reverse the row order.
        let perm: Vec<usize> = (0..8).rev().collect();
        let rows: Vec<Vec<f64>> = perm
            .iter()
            .map(|&r| (0..6).map(|c| bank.weights().at(r, c)).collect())
            .collect();
        let permuted = ClassifierBank {
            head: ClassifierWeights::new(
                HeadKind::Cosine,
                16.0,
                perm.clone(),
                Tensor::from_rows(&rows).unwrap(),
                None,
            )
            .unwrap(),
        };
        let adapted_perm = adapter.adapt(&permuted, AdaptMode::Inference).unwrap();
        for (out_row, &src_row) in perm.iter().enumerate() {
            for c in 0..6 {
                let a = adapted_perm.weights().at(out_row, c);
                let b = adapted.weights().at(src_row, c);
                assert!((a - b).abs() <= 1e-9, "row {out_row} col {c}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn parameters_transfer_across_bank_sizes() {
        let adapter = AdapterParams::init(AdapterConfig::default(), 6, 5).unwrap();
        for m in [2, 3, 30, 80] {
            let bank = toy_bank(m, 6, m as u64);
            let adapted = adapter.adapt(&bank, AdaptMode::Inference).unwrap();
            assert_eq!(adapted.weights().shape(), &[m, 6]);
            let coeffs = adapter.relation_coefficients(&bank).unwrap();
            assert_eq!(coeffs.shape(), &[m, m]);
        }
    }

    #[test]
    fn multi_head_averages_and_stays_deterministic() {
        let cfg = AdapterConfig {
            attention_heads: 3,
            ..AdapterConfig::default()
        };
        let adapter = AdapterParams::init(cfg, 6, 7).unwrap();
        let bank = toy_bank(5, 6, 3);
        let a = adapter.adapt(&bank, AdaptMode::Inference).unwrap();
        let b = adapter.adapt(&bank, AdaptMode::Inference).unwrap();
        assert_eq!(a.weights().data(), b.weights().data());
        assert_ne!(a.weights().data(), bank.weights().data());
    }

    #[test]
    fn dropout_changes_training_output_but_not_inference() {
        let cfg = AdapterConfig {
            dropout: 0.4,
            ..AdapterConfig::default()
        };
        let adapter = AdapterParams::init(cfg, 6, 7).unwrap();
        let bank = toy_bank(5, 6, 3);
        let inf = adapter.adapt(&bank, AdaptMode::Inference).unwrap();
        let t1 = adapter
            .adapt(&bank, AdaptMode::Training { dropout_seed: 1 })
            .unwrap();
        let t2 = adapter
            .adapt(&bank, AdaptMode::Training { dropout_seed: 1 })
            .unwrap();
        let t3 = adapter
            .adapt(&bank, AdaptMode::Training { dropout_seed: 2 })
            .unwrap();
        assert_eq!(t1.weights().data(), t2.weights().data());
        assert_ne!(t1.weights().data(), inf.weights().data());
        assert_ne!(t1.weights().data(), t3.weights().data());
    }

    #[test]
    fn layer_norm_standardizes_rows() {
        let cfg = AdapterConfig {
            layer_norm: true,
            ..AdapterConfig::default()
        };
        let adapter = AdapterParams::init(cfg, 8, 13).unwrap();
        let bank = toy_bank(4, 8, 6);
        let adapted = adapter.adapt(&bank, AdaptMode::Inference).unwrap();
        // Unit gain, zero bias at init: rows have zero mean and norm sqrt(D).
        for r in 0..4 {
            let row: Vec<f64> = (0..8).map(|c| adapted.weights().at(r, c)).collect();
            let mean: f64 = row.iter().sum::<f64>() / 8.0;
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(mean.abs() <= 1e-9, "row {r} mean {mean}");
            assert!((norm - 8f64.sqrt()).abs() <= 1e-9, "row {r} norm {norm}");
        }
    }

    #[test]
    fn bank_pooling_validates_and_preserves_order() {
        let e = Tensor::from_rows(&[
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
            vec![2.0, 0.0],
        ])
        .unwrap();
        let base =
            ClassifierWeights::init_from_data(HeadKind::Cosine, 16.0, &e, &[0, 0, 1, 1]).unwrap();
        let novel =
            ClassifierWeights::init_from_data(HeadKind::Cosine, 16.0, &e, &[7, 7, 5, 5]).unwrap();
        let bank = ClassifierBank::from_heads(&[&base, &novel]).unwrap();
        assert_eq!(bank.class_ids(), &[0, 1, 5, 7]);
        assert_eq!(bank.weights().at(0, 0), base.weights().at(0, 0));
        assert_eq!(bank.weights().at(2, 0), novel.weights().at(0, 0));

        // Duplicate ids across heads are rejected.
        let dup =
            ClassifierWeights::init_from_data(HeadKind::Cosine, 16.0, &e, &[1, 1, 9, 9]).unwrap();
        assert!(ClassifierBank::from_heads(&[&base, &dup]).is_err());
        // Mismatched scale rejected.
        let other =
            ClassifierWeights::init_from_data(HeadKind::Cosine, 8.0, &e, &[7, 7, 5, 5]).unwrap();
        assert!(ClassifierBank::from_heads(&[&base, &other]).is_err());
        // Mismatched kind rejected.
        let linear =
            ClassifierWeights::init_from_data(HeadKind::Linear, 16.0, &e, &[7, 7, 5, 5]).unwrap();
        assert!(ClassifierBank::from_heads(&[&base, &linear]).is_err());
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let adapter = AdapterParams::init(AdapterConfig::default(), 6, 21).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("adapter.json");
        adapter.save(&path).unwrap();
        let back = AdapterParams::load(&path).unwrap();
        assert_eq!(adapter, back);
        assert_eq!(adapter.digest(), back.digest());
    }

    #[test]
    fn query_node_scoring_reduces_to_plain_scoring_at_identity() {
        let cfg = AdapterConfig {
            include_query_node: true,
            ..AdapterConfig::default()
        };
        let adapter = zeroed_u(&AdapterParams::init(cfg, 6, 17).unwrap());
        let bank = toy_bank(4, 6, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let queries = Tensor::uniform(vec![3, 6], -1.0, 1.0, &mut rng).unwrap();
        let joint = adapter
            .score_queries_with_query_node(&bank, &queries)
            .unwrap();
        let plain = bank.as_head().score_batch(&queries).unwrap();
        for (a, b) in joint.data().iter().zip(plain.data()) {
            assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    /// Independent cross-entropy over the unadapted bank's scores, for
    /// checking the loss graph's value at the residual identity.
    fn baseline_loss(bank: &ClassifierBank, queries: &Tensor, labels: &[usize]) -> f64 {
        let scores = bank.as_head().score_batch(queries).unwrap();
        let rows = bank.as_head().label_rows(labels).unwrap();
        let (q, m) = scores.matrix_dims().unwrap();
        let mut total = 0.0;
        for r in 0..q {
            let mx = (0..m).map(|c| scores.at(r, c)).fold(f64::MIN, f64::max);
            let logsum = (0..m).map(|c| (scores.at(r, c) - mx).exp()).sum::<f64>().ln() + mx;
            total += logsum - scores.at(r, rows[r]);
        }
        total / q as f64
    }

    #[test]
    fn loss_graph_at_zero_u_equals_the_unadapted_loss() {
        let adapter = zeroed_u(&AdapterParams::init(AdapterConfig::default(), 6, 3).unwrap());
        let bank = toy_bank(4, 6, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let queries = Tensor::uniform(vec![5, 6], -1.0, 1.0, &mut rng).unwrap();
        let labels = vec![0, 2, 1, 3, 0];
        let mut built = adapter
            .adapt_loss_graph(&bank, &queries, &labels, AdaptMode::Inference)
            .unwrap();
        let (loss, grads) = built.graph.backward(&built.bindings).unwrap();
        let expected = baseline_loss(&bank, &queries, &labels);
        assert!(
            (loss - expected).abs() <= 1e-12,
            "loss {loss} vs baseline {expected}"
        );
        for (name, id) in &built.param_nodes {
            assert!(grads.get(*id).is_some(), "missing gradient for {name}");
        }
    }

    #[test]
    fn loss_graph_stays_finite_over_random_trials() {
        for seed in 0..100 {
            let adapter = AdapterParams::init(AdapterConfig::default(), 5, seed).unwrap();
            let bank = toy_bank(3, 5, seed.wrapping_add(1000));
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2000));
            let queries = Tensor::uniform(vec![4, 5], -2.0, 2.0, &mut rng).unwrap();
            let labels = vec![0, 1, 2, 0];
            let mut built = adapter
                .adapt_loss_graph(&bank, &queries, &labels, AdaptMode::Inference)
                .unwrap();
            let (loss, _) = built.graph.backward(&built.bindings).unwrap();
            assert!(loss.is_finite(), "seed {seed} produced loss {loss}");
        }
    }

    #[test]
    fn loss_graph_rejects_labels_outside_the_bank() {
        let adapter = AdapterParams::init(AdapterConfig::default(), 5, 3).unwrap();
        let bank = toy_bank(3, 5, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let queries = Tensor::uniform(vec![2, 5], -1.0, 1.0, &mut rng).unwrap();
        assert!(adapter
            .adapt_loss_graph(&bank, &queries, &[0, 7], AdaptMode::Inference)
            .is_err());
        assert!(adapter
            .adapt_loss_graph(&bank, &queries, &[0], AdaptMode::Inference)
            .is_err());
    }

    #[test]
    fn loss_graph_gradients_match_central_differences() {
        let adapter = AdapterParams::init(AdapterConfig::default(), 6, 21).unwrap();
        let bank = toy_bank(3, 6, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let queries = Tensor::uniform(vec![4, 6], -1.0, 1.0, &mut rng).unwrap();
        let labels = vec![0, 1, 2, 1];
        let mut built = adapter
            .adapt_loss_graph(&bank, &queries, &labels, AdaptMode::Inference)
            .unwrap();
        let err = crate::numerics::grad_check(&mut built.graph, &built.bindings, 1e-5).unwrap();
        assert!(err <= 1e-4, "relative error {err}");
    }
}

//! Classifier heads: linear, cosine, and negative-squared-distance scoring.
//!
//! A head holds one weight row per class plus the class ids those rows stand
//! for, so heads from different sessions can be concatenated without any
//! relabeling. Heads can be initialized directly from data (each row becomes
//! the mean embedding of its class — the few-shot path), initialized
//! randomly, or fitted with full-batch gradient descent on cross-entropy.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::numerics::{
    load_json, save_json, sgd_step, Bindings, Graph, NamedTensor, NodeId, NumericsError,
    SgdState, Tensor,
};
use crate::seeding::mix;

/// How a head turns an embedding and a weight row into a score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Inner product plus optional bias.
    Linear,
    /// Inner product of unit-normalized vectors, multiplied by `scale`.
    Cosine,
    /// Negative squared Euclidean distance.
    NegL2,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadKind::Linear => write!(f, "linear"),
            HeadKind::Cosine => write!(f, "cosine"),
            HeadKind::NegL2 => write!(f, "neg-l2"),
        }
    }
}

/// A classifier over an explicit set of class ids.
///
/// `weights` is `[N, D]` — one row per entry of `class_ids`, in the same
/// order. Scores returned by the scoring methods follow that order too.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierWeights {
    kind: HeadKind,
    scale: f64,
    class_ids: Vec<usize>,
    weights: Tensor,
    bias: Option<Tensor>,
}

fn check_scale(scale: f64) -> Result<(), NumericsError> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(NumericsError::InvalidArg(format!(
            "head scale must be positive and finite, got {scale}"
        )));
    }
    Ok(())
}

fn check_distinct(class_ids: &[usize]) -> Result<(), NumericsError> {
    let mut seen = class_ids.to_vec();
    seen.sort_unstable();
    seen.dedup();
    if seen.len() != class_ids.len() {
        return Err(NumericsError::InvalidArg(
            "class ids must be distinct".into(),
        ));
    }
    Ok(())
}

impl ClassifierWeights {
    /// Assemble a head from explicit parts.
    pub fn new(
        kind: HeadKind,
        scale: f64,
        class_ids: Vec<usize>,
        weights: Tensor,
        bias: Option<Tensor>,
    ) -> Result<Self, NumericsError> {
        check_scale(scale)?;
        check_distinct(&class_ids)?;
        let (n, _d) = weights.matrix_dims()?;
        if n != class_ids.len() {
            return Err(NumericsError::InvalidArg(format!(
                "{} class ids for {n} weight rows",
                class_ids.len()
            )));
        }
        if let Some(b) = &bias {
            if kind != HeadKind::Linear {
                return Err(NumericsError::InvalidArg(
                    "only linear heads carry a bias".into(),
                ));
            }
            if b.matrix_dims()? != (1, n) {
                return Err(NumericsError::InvalidArg(format!(
                    "bias shape {:?} does not match {n} classes",
                    b.shape()
                )));
            }
        }
        Ok(Self {
            kind,
            scale,
            class_ids,
            weights,
            bias,
        })
    }

    /// Data initialization: each class's weight row is the mean embedding of
    /// that class — accumulate, then divide once, so the row is exactly the
    /// arithmetic mean. Class ids are the sorted distinct labels. Linear
    /// heads start with a zero bias.
    pub fn init_from_data(
        kind: HeadKind,
        scale: f64,
        embeddings: &Tensor,
        labels: &[usize],
    ) -> Result<Self, NumericsError> {
        check_scale(scale)?;
        let (n, d) = embeddings.matrix_dims()?;
        if labels.len() != n {
            return Err(NumericsError::InvalidArg(format!(
                "{} labels for {n} embedding rows",
                labels.len()
            )));
        }
        let mut class_ids: Vec<usize> = labels.to_vec();
        class_ids.sort_unstable();
        class_ids.dedup();

        let mut sums = vec![0.0; class_ids.len() * d];
        let mut counts = vec![0usize; class_ids.len()];
        for (row, &label) in labels.iter().enumerate() {
            let slot = class_ids.binary_search(&label).expect("label is present");
            counts[slot] += 1;
            for j in 0..d {
                sums[slot * d + j] += embeddings.at(row, j);
            }
        }
        for (slot, &count) in counts.iter().enumerate() {
            for j in 0..d {
                sums[slot * d + j] /= count as f64;
            }
        }
        let weights = Tensor::new(vec![class_ids.len(), d], sums)?;
        let bias = match kind {
            HeadKind::Linear => Some(Tensor::zeros(vec![1, class_ids.len()])),
            _ => None,
        };
        Self::new(kind, scale, class_ids, weights, bias)
    }

    /// Random initialization with fan-balanced uniform rows and (for linear
    /// heads) a zero bias.
    pub fn random_init(
        kind: HeadKind,
        scale: f64,
        class_ids: Vec<usize>,
        dim: usize,
        seed: u64,
    ) -> Result<Self, NumericsError> {
        check_scale(scale)?;
        if dim == 0 || class_ids.is_empty() {
            return Err(NumericsError::InvalidArg(
                "random head needs at least one class and a positive dim".into(),
            ));
        }
        let n = class_ids.len();
        let limit = (6.0 / (n + dim) as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, &[crate::seeding::salt("head-init")]));
        let weights = Tensor::uniform(vec![n, dim], -limit, limit, &mut rng)?;
        let bias = match kind {
            HeadKind::Linear => Some(Tensor::zeros(vec![1, n])),
            _ => None,
        };
        Self::new(kind, scale, class_ids, weights, bias)
    }

    pub fn kind(&self) -> HeadKind {
        self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn class_count(&self) -> usize {
        self.class_ids.len()
    }

    pub fn dim(&self) -> usize {
        self.weights.matrix_dims().expect("validated").1
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    /// Same head with its weight matrix swapped out (shape must match).
    /// Class ids, kind, scale, and bias are preserved — this is how adapted
    /// weights are packaged back into a usable head.
    pub fn with_weights(&self, weights: Tensor) -> Result<Self, NumericsError> {
        if weights.shape() != self.weights.shape() {
            return Err(NumericsError::InvalidArg(format!(
                "replacement weights {:?} do not match {:?}",
                weights.shape(),
                self.weights.shape()
            )));
        }
        Self::new(
            self.kind,
            self.scale,
            self.class_ids.clone(),
            weights,
            self.bias.clone(),
        )
    }

    /// Same head with its bias swapped out (linear heads only).
    pub fn with_bias(&self, bias: Tensor) -> Result<Self, NumericsError> {
        Self::new(
            self.kind,
            self.scale,
            self.class_ids.clone(),
            self.weights.clone(),
            Some(bias),
        )
    }

    /// Scores for a batch of embeddings, `[n, N]`, plain arithmetic.
    pub fn score_batch(&self, embeddings: &Tensor) -> Result<Tensor, NumericsError> {
        let (n, d) = embeddings.matrix_dims()?;
        let (classes, dim) = self.weights.matrix_dims()?;
        if d != dim {
            return Err(NumericsError::InvalidArg(format!(
                "embedding dim {d} does not match head dim {dim}"
            )));
        }
        let mut out = vec![0.0; n * classes];
        for i in 0..n {
            for j in 0..classes {
                let raw = match self.kind {
                    HeadKind::Linear => {
                        let mut dot = 0.0;
                        for k in 0..d {
                            dot += embeddings.at(i, k) * self.weights.at(j, k);
                        }
                        if let Some(b) = &self.bias {
                            dot += b.at(0, j);
                        }
                        dot
                    }
                    HeadKind::Cosine => {
                        let mut dot = 0.0;
                        let mut ne = 0.0;
                        let mut nw = 0.0;
                        for k in 0..d {
                            let e = embeddings.at(i, k);
                            let w = self.weights.at(j, k);
                            dot += e * w;
                            ne += e * e;
                            nw += w * w;
                        }
                        // Zero rows normalize to zero, matching the graph op.
                        if ne == 0.0 || nw == 0.0 {
                            0.0
                        } else {
                            dot / (ne.sqrt() * nw.sqrt())
                        }
                    }
                    HeadKind::NegL2 => {
                        let mut dist = 0.0;
                        for k in 0..d {
                            let diff = embeddings.at(i, k) - self.weights.at(j, k);
                            dist += diff * diff;
                        }
                        -dist
                    }
                };
                out[i * classes + j] = self.scale * raw;
            }
        }
        Tensor::new(vec![n, classes], out)
    }

    /// Scores for a single embedding, in `class_ids` order.
    pub fn score(&self, embedding: &[f64]) -> Result<Vec<f64>, NumericsError> {
        let e = Tensor::new(vec![1, embedding.len()], embedding.to_vec())?;
        Ok(self.score_batch(&e)?.data().to_vec())
    }

    /// Row index of each label in this head's class order.
    pub fn label_rows(&self, labels: &[usize]) -> Result<Vec<usize>, NumericsError> {
        labels
            .iter()
            .map(|l| {
                self.class_ids.iter().position(|c| c == l).ok_or_else(|| {
                    NumericsError::InvalidArg(format!("label {l} is not among this head's classes"))
                })
            })
            .collect()
    }

    fn to_form(&self) -> HeadForm {
        HeadForm {
            kind: self.kind,
            scale: self.scale,
            class_ids: self.class_ids.clone(),
            weights: NamedTensor::of("weights", &self.weights),
            bias: self.bias.as_ref().map(|b| NamedTensor::of("bias", b)),
        }
    }

    fn from_form(form: HeadForm) -> Result<Self, NumericsError> {
        let weights = form.weights.into_tensor()?.1;
        let bias = form
            .bias
            .map(|b| b.into_tensor().map(|(_, t)| t))
            .transpose()?;
        Self::new(form.kind, form.scale, form.class_ids, weights, bias)
    }

    pub fn save(&self, path: &Path) -> Result<(), NumericsError> {
        save_json(path, &self.to_form())
    }

    pub fn load(path: &Path) -> Result<Self, NumericsError> {
        Self::from_form(load_json(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct HeadForm {
    kind: HeadKind,
    scale: f64,
    class_ids: Vec<usize>,
    weights: NamedTensor,
    bias: Option<NamedTensor>,
}

/// Graph nodes computing head scores: the differentiable twin of
/// [`ClassifierWeights::score_batch`].
///
/// `embeddings` is an `[n, D]` node, `weights` an `[N, D]` node, `bias` an
/// optional `[1, N]` node. Returns the `[n, N]` logits node plus the constant
/// helper leaves (all-ones matrices used for broadcasting) that the caller
/// must merge into its bindings.
pub(crate) fn score_graph(
    g: &mut Graph,
    kind: HeadKind,
    scale: f64,
    embeddings: NodeId,
    weights: NodeId,
    bias: Option<NodeId>,
) -> Result<(NodeId, Vec<(NodeId, Tensor)>), NumericsError> {
    check_scale(scale)?;
    let (n, d) = g.dims(embeddings);
    let (classes, dw) = g.dims(weights);
    if d != dw {
        return Err(NumericsError::InvalidArg(format!(
            "embedding dim {d} does not match head dim {dw}"
        )));
    }
    let mut pending: Vec<(NodeId, Tensor)> = Vec::new();

    let raw = match kind {
        HeadKind::Linear => {
            let wt = g.transpose(weights)?;
            let mut logits = g.matmul(embeddings, wt)?;
            if let Some(b) = bias {
                let ones_col = g.constant(format!("ones-{n}x1"), vec![n, 1])?;
                pending.push((ones_col, Tensor::filled(vec![n, 1], 1.0)?));
                let widened = g.matmul(ones_col, b)?;
                logits = g.add(logits, widened)?;
            }
            logits
        }
        HeadKind::Cosine => {
            let en = g.l2_normalize_rows(embeddings)?;
            let wn = g.l2_normalize_rows(weights)?;
            let wt = g.transpose(wn)?;
            g.matmul(en, wt)?
        }
        HeadKind::NegL2 => {
            // -|e - w|^2 = 2 e.w - |e|^2 - |w|^2, assembled per pair via
            // broadcast against all-ones vectors.
            let wt = g.transpose(weights)?;
            let ewt = g.matmul(embeddings, wt)?;
            let twice = g.scale(ewt, 2.0)?;

            let esq = g.mul(embeddings, embeddings)?;
            let emean = g.mean_over_axis(esq, 1)?;
            let erowsq = g.scale(emean, d as f64)?;
            let ones_row = g.constant(format!("ones-1x{classes}"), vec![1, classes])?;
            pending.push((ones_row, Tensor::filled(vec![1, classes], 1.0)?));
            let e_wide = g.matmul(erowsq, ones_row)?;

            let wsq = g.mul(weights, weights)?;
            let wmean = g.mean_over_axis(wsq, 1)?;
            let wrowsq = g.scale(wmean, d as f64)?;
            let wrow = g.transpose(wrowsq)?;
            let ones_col = g.constant(format!("ones-{n}x1"), vec![n, 1])?;
            pending.push((ones_col, Tensor::filled(vec![n, 1], 1.0)?));
            let w_wide = g.matmul(ones_col, wrow)?;

            let norms = g.add(e_wide, w_wide)?;
            let neg_norms = g.scale(norms, -1.0)?;
            g.add(twice, neg_norms)?
        }
    };
    let logits = g.scale(raw, scale)?;
    Ok((logits, pending))
}

/// Full-batch fitting schedule for a head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadFitConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl Default for HeadFitConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 0.1,
            momentum: 0.9,
        }
    }
}

/// Fit a head to labeled embeddings by full-batch cross-entropy descent.
/// Returns the fitted head and the loss after each epoch. `epochs == 0`
/// returns the head unchanged.
pub fn fit_head(
    head: &ClassifierWeights,
    embeddings: &Tensor,
    labels: &[usize],
    config: &HeadFitConfig,
) -> Result<(ClassifierWeights, Vec<f64>), NumericsError> {
    if config.epochs == 0 {
        return Ok((head.clone(), Vec::new()));
    }
    let (n, d) = embeddings.matrix_dims()?;
    if labels.len() != n {
        return Err(NumericsError::InvalidArg(format!(
            "{} labels for {n} embedding rows",
            labels.len()
        )));
    }
    let rows = head.label_rows(labels)?;

    let mut g = Graph::new();
    let e = g.constant("embeddings", vec![n, d])?;
    let w = g.trainable("head-weights", vec![head.class_count(), d])?;
    let b = match &head.bias {
        Some(_) => Some(g.trainable("head-bias", vec![1, head.class_count()])?),
        None => None,
    };
    let (logits, pending) = score_graph(&mut g, head.kind, head.scale, e, w, b)?;
    g.cross_entropy(logits, rows)?;

    let mut bindings = Bindings::new();
    bindings.bind(e, embeddings.clone());
    bindings.bind_all(pending);

    let mut params: Vec<Tensor> = vec![head.weights.clone()];
    let mut leaf_ids: Vec<NodeId> = vec![w];
    if let (Some(bias), Some(bid)) = (&head.bias, b) {
        params.push(bias.clone());
        leaf_ids.push(bid);
    }
    let mut state = SgdState::new(config.learning_rate, config.momentum, &params)?;
    let mut losses = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        for (id, p) in leaf_ids.iter().zip(&params) {
            bindings.bind(*id, p.clone());
        }
        let (loss, grads) = g.backward(&bindings)?;
        let grad_vec: Vec<Tensor> = leaf_ids
            .iter()
            .map(|id| grads.get(*id).cloned().expect("trainable leaf has a gradient"))
            .collect();
        let (next, next_state) = sgd_step(&params, &grad_vec, &state)?;
        params = next;
        state = next_state;
        losses.push(loss);
    }

    let mut fitted = head.clone();
    fitted.weights = params[0].clone();
    if head.bias.is_some() {
        fitted.bias = Some(params[1].clone());
    }
    Ok((fitted, losses))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_embeddings() -> (Tensor, Vec<usize>) {
        // Two tight clusters in 3-d space.
        let e = Tensor::from_rows(&[
            vec![1.0, 0.0, 0.1],
            vec![0.9, 0.1, 0.0],
            vec![0.0, 1.0, 0.1],
            vec![0.1, 0.9, 0.0],
        ])
        .unwrap();
        (e, vec![5, 5, 9, 9])
    }

    #[test]
    fn data_init_rows_are_exact_class_means() {
        let (e, labels) = toy_embeddings();
        let head =
            ClassifierWeights::init_from_data(HeadKind::Cosine, 16.0, &e, &labels).unwrap();
        assert_eq!(head.class_ids(), &[5, 9]);
        let w = head.weights();
        assert_eq!(w.at(0, 0), (1.0 + 0.9) / 2.0);
        assert_eq!(w.at(0, 1), (0.0 + 0.1) / 2.0);
        assert_eq!(w.at(1, 0), (0.0 + 0.1) / 2.0);
        assert_eq!(w.at(1, 1), (1.0 + 0.9) / 2.0);
        assert!(head.bias().is_none());
    }

    #[test]
    fn score_batch_matches_hand_computation() {
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 2.0]]).unwrap();
        let e = Tensor::from_rows(&[vec![3.0, 4.0]]).unwrap();

        let linear = ClassifierWeights::new(
            HeadKind::Linear,
            1.0,
            vec![0, 1],
            w.clone(),
            Some(Tensor::from_rows(&[vec![0.5, -0.5]]).unwrap()),
        )
        .unwrap();
        let s = linear.score(&[3.0, 4.0]).unwrap();
        assert!((s[0] - 3.5).abs() < 1e-12);
        assert!((s[1] - 7.5).abs() < 1e-12);

        let cosine =
            ClassifierWeights::new(HeadKind::Cosine, 16.0, vec![0, 1], w.clone(), None).unwrap();
        let s = cosine.score(&[3.0, 4.0]).unwrap();
        assert!((s[0] - 16.0 * (3.0 / 5.0)).abs() < 1e-12);
        assert!((s[1] - 16.0 * (4.0 / 5.0)).abs() < 1e-12);

        let negl2 =
            ClassifierWeights::new(HeadKind::NegL2, 1.0, vec![0, 1], w, None).unwrap();
        let s = negl2.score(&[3.0, 4.0]).unwrap();
        assert!((s[0] - -(4.0 + 16.0)).abs() < 1e-12);
        assert!((s[1] - -(9.0 + 4.0)).abs() < 1e-12);
        let e2 = negl2.score_batch(&e).unwrap();
        assert_eq!(e2.data(), s.as_slice());
    }

    #[test]
    fn graph_scores_agree_with_plain_scores_for_all_kinds() {
        let (e, labels) = toy_embeddings();
        for (kind, scale) in [
            (HeadKind::Linear, 1.0),
            (HeadKind::Cosine, 16.0),
            (HeadKind::NegL2, 1.0),
        ] {
            let head = ClassifierWeights::init_from_data(kind, scale, &e, &labels).unwrap();
            let plain = head.score_batch(&e).unwrap();

            let mut g = Graph::new();
            let en = g.constant("e", vec![4, 3]).unwrap();
            let wn = g.trainable("w", vec![2, 3]).unwrap();
            let bn = match head.bias() {
                Some(_) => Some(g.constant("b", vec![1, 2]).unwrap()),
                None => None,
            };
            let (logits, pending) =
                score_graph(&mut g, kind, scale, en, wn, bn).unwrap();
            assert_eq!(g.root(), Some(logits));
            let mut bind = Bindings::new();
            bind.bind(en, e.clone());
            bind.bind(wn, head.weights().clone());
            if let (Some(b), Some(bn)) = (head.bias(), bn) {
                bind.bind(bn, b.clone());
            }
            bind.bind_all(pending);
            let out = g.forward(&bind).unwrap();
            for (a, b) in out.data().iter().zip(plain.data()) {
                assert!((a - b).abs() < 1e-12, "{kind}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn fitting_separable_data_reaches_zero_training_error() {
        let (e, labels) = toy_embeddings();
        let head =
            ClassifierWeights::init_from_data(HeadKind::Linear, 1.0, &e, &labels).unwrap();
        let (fitted, losses) = fit_head(
            &head,
            &e,
            &labels,
            &HeadFitConfig {
                epochs: 60,
                learning_rate: 0.5,
                momentum: 0.9,
            },
        )
        .unwrap();
        assert_eq!(losses.len(), 60);
        assert!(
            losses.last().unwrap() < &losses[0],
            "loss should fall: {losses:?}"
        );
        let scores = fitted.score_batch(&e).unwrap();
        for (i, &label) in labels.iter().enumerate() {
            let row: Vec<f64> = (0..2).map(|j| scores.at(i, j)).collect();
            let pred = if row[0] >= row[1] { 5 } else { 9 };
            assert_eq!(pred, label);
        }
    }

    #[test]
    fn zero_epochs_returns_head_unchanged() {
        let (e, labels) = toy_embeddings();
        let head =
            ClassifierWeights::init_from_data(HeadKind::Cosine, 16.0, &e, &labels).unwrap();
        let (same, losses) = fit_head(&head, &e, &labels, &HeadFitConfig {
            epochs: 0,
            ..HeadFitConfig::default()
        })
        .unwrap();
        assert_eq!(same, head);
        assert!(losses.is_empty());
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let (e, labels) = toy_embeddings();
        let head =
            ClassifierWeights::init_from_data(HeadKind::Linear, 1.0, &e, &labels).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.json");
        head.save(&path).unwrap();
        let back = ClassifierWeights::load(&path).unwrap();
        assert_eq!(head, back);
    }

    #[test]
    fn validation_rejects_malformed_heads() {
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        // Duplicate ids.
        assert!(
            ClassifierWeights::new(HeadKind::Linear, 1.0, vec![3, 3], w.clone(), None).is_err()
        );
        // Row count mismatch.
        assert!(
            ClassifierWeights::new(HeadKind::Linear, 1.0, vec![1, 2, 3], w.clone(), None)
                .is_err()
        );
        // Bias on a non-linear head.
        assert!(ClassifierWeights::new(
            HeadKind::Cosine,
            16.0,
            vec![0, 1],
            w.clone(),
            Some(Tensor::zeros(vec![1, 2])),
        )
        .is_err());
        // Bad scale.
        assert!(ClassifierWeights::new(HeadKind::Cosine, 0.0, vec![0, 1], w, None).is_err());
    }

    #[test]
    fn label_rows_follow_class_order() {
        let w = Tensor::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let head =
            ClassifierWeights::new(HeadKind::NegL2, 1.0, vec![7, 2, 11], w, None).unwrap();
        assert_eq!(head.label_rows(&[2, 11, 7, 2]).unwrap(), vec![1, 2, 0, 1]);
        assert!(head.label_rows(&[4]).is_err());
    }

    #[test]
    fn random_init_is_seeded() {
        let a = ClassifierWeights::random_init(HeadKind::Linear, 1.0, vec![0, 1], 4, 7).unwrap();
        let b = ClassifierWeights::random_init(HeadKind::Linear, 1.0, vec![0, 1], 4, 7).unwrap();
        let c = ClassifierWeights::random_init(HeadKind::Linear, 1.0, vec![0, 1], 4, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}

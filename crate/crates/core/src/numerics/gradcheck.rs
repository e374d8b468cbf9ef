//! Finite-difference verification of analytic gradients.
//!
//! `grad_check` compares every coordinate of every trainable leaf against a
//! central difference `(f(x + eps) - f(x - eps)) / (2 eps)` and reports the
//! worst relative error `|analytic - central| / max(1, |central|)`.
//!
//! Central differences lie about piecewise functions, so the check first
//! scans the forward pass for values close to a kink: any relu input within
//! `10 * eps` of zero, or any row entering l2 normalization with norm below
//! `10 * eps`, aborts with an error asking the caller to resample the point.

use super::graph::{Bindings, Graph, OpKind};
use super::{NumericsError, Tensor};

const KINK_MARGIN: f64 = 10.0;

fn kink_scan(graph: &Graph, eps: f64) -> Result<(), NumericsError> {
    let limit = KINK_MARGIN * eps;
    for id in graph.nodes_where(|op| matches!(op, OpKind::Relu)) {
        let input = graph.input_ids(id)[0];
        let value = graph.value(input).expect("forward ran");
        if let Some(v) = value.data().iter().find(|v| v.abs() < limit) {
            return Err(NumericsError::KinkProximity {
                node: graph.label(id).to_string(),
                value: *v,
                limit,
            });
        }
    }
    for id in graph.nodes_where(|op| matches!(op, OpKind::L2NormalizeRows)) {
        let input = graph.input_ids(id)[0];
        let value = graph.value(input).expect("forward ran");
        let (r, c) = graph.dims(input);
        for i in 0..r {
            let norm = value.data()[i * c..(i + 1) * c]
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt();
            if norm < limit {
                return Err(NumericsError::KinkProximity {
                    node: graph.label(id).to_string(),
                    value: norm,
                    limit,
                });
            }
        }
    }
    Ok(())
}

fn scalar_forward(graph: &mut Graph, bindings: &Bindings) -> Result<f64, NumericsError> {
    let out = graph.forward(bindings)?;
    if out.numel() != 1 {
        return Err(NumericsError::NonScalarRoot(out.shape().to_vec()));
    }
    Ok(out.data()[0])
}

/// Max relative error between analytic and central-difference gradients over
/// all trainable-leaf coordinates. The graph root must be scalar.
pub fn grad_check(
    graph: &mut Graph,
    bindings: &Bindings,
    eps: f64,
) -> Result<f64, NumericsError> {
    if !(eps > 0.0) || !eps.is_finite() {
        return Err(NumericsError::InvalidArg(format!(
            "eps must be positive and finite, got {eps}"
        )));
    }
    let (_, analytic) = graph.backward(bindings)?;
    kink_scan(graph, eps)?;

    let mut worst = 0.0_f64;
    for leaf in graph.trainable_leaves() {
        let base = bindings
            .get(leaf)
            .ok_or_else(|| NumericsError::UnboundLeaf(graph.label(leaf).to_string()))?
            .clone();
        let grad = analytic.get(leaf).cloned().unwrap_or_else(|| {
            // Leaf the root never touches: its analytic gradient is zero.
            Tensor::zeros(base.shape().to_vec())
        });
        for coord in 0..base.numel() {
            let mut perturbed = bindings.clone();
            let original = base.data()[coord];

            let mut plus = base.clone();
            plus.data_mut()[coord] = original + eps;
            perturbed.bind(leaf, plus);
            let f_plus = scalar_forward(graph, &perturbed)?;

            let mut minus = base.clone();
            minus.data_mut()[coord] = original - eps;
            perturbed.bind(leaf, minus);
            let f_minus = scalar_forward(graph, &perturbed)?;

            let central = (f_plus - f_minus) / (2.0 * eps);
            let rel = (grad.data()[coord] - central).abs() / central.abs().max(1.0);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_graph_checks_out() {
        // root = sum(x), expressed as mean * numel; gradient is all ones.
        let mut g = Graph::new();
        let x = g.trainable("x", vec![2, 3]).unwrap();
        let m0 = g.mean_over_axis(x, 0).unwrap();
        let m1 = g.mean_over_axis(m0, 1).unwrap();
        g.scale(m1, 6.0).unwrap();
        let mut b = Bindings::new();
        b.bind(
            x,
            Tensor::new(vec![2, 3], vec![0.4, -1.2, 2.0, 0.7, 0.2, -0.5]).unwrap(),
        );
        let err = grad_check(&mut g, &b, 1e-5).unwrap();
        assert!(err <= 1e-10, "identity graph error {err}");
    }

    #[test]
    fn relu_near_zero_is_rejected() {
        let mut g = Graph::new();
        let x = g.trainable("x", vec![1, 2]).unwrap();
        let r = g.relu(x).unwrap();
        let m = g.mean_over_axis(r, 1).unwrap();
        g.scale(m, 2.0).unwrap();
        let mut b = Bindings::new();
        // 5e-5 < 10 * eps = 1e-4: too close to the kink.
        b.bind(x, Tensor::new(vec![1, 2], vec![5e-5, 1.0]).unwrap());
        let err = grad_check(&mut g, &b, 1e-5).unwrap_err();
        assert!(matches!(err, NumericsError::KinkProximity { .. }), "{err}");
    }

    #[test]
    fn tiny_norm_rows_are_rejected_for_l2_normalize() {
        let mut g = Graph::new();
        let x = g.trainable("x", vec![1, 2]).unwrap();
        let n = g.l2_normalize_rows(x).unwrap();
        let m = g.mean_over_axis(n, 1).unwrap();
        g.scale(m, 2.0).unwrap();
        let mut b = Bindings::new();
        b.bind(x, Tensor::new(vec![1, 2], vec![1e-6, 1e-6]).unwrap());
        let err = grad_check(&mut g, &b, 1e-5).unwrap_err();
        assert!(matches!(err, NumericsError::KinkProximity { .. }));
    }

    #[test]
    fn softmax_cross_entropy_composite() {
        let mut g = Graph::new();
        let x = g.trainable("logits", vec![3, 4]).unwrap();
        g.cross_entropy(x, vec![0, 2, 3]).unwrap();
        let mut b = Bindings::new();
        b.bind(
            x,
            Tensor::new(
                vec![3, 4],
                vec![0.3, -0.7, 1.2, 0.1, -2.0, 0.4, 0.9, 1.1, 0.0, 0.2, -0.3, 0.8],
            )
            .unwrap(),
        );
        let err = grad_check(&mut g, &b, 1e-5).unwrap();
        assert!(err <= 1e-4, "cross-entropy composite error {err}");
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let mut g = Graph::new();
        let x = g.trainable("x", vec![1, 1]).unwrap();
        g.scale(x, 2.0).unwrap();
        let mut b = Bindings::new();
        b.bind(x, Tensor::scalar(1.0).unwrap());
        assert!(grad_check(&mut g, &b, 0.0).is_err());
        assert!(grad_check(&mut g, &b, -1e-5).is_err());
    }
}

//! Edge-label generation and the training objectives: point cross-entropy,
//! balanced binary edge loss, and their weighted combination.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphLayer;
use crate::tensor::{Tape, Tensor, ValueId};

/// Clamp bounds applied to edge probabilities before the logs.
const PRED_CLAMP: (f64, f64) = (1e-12, 1.0 - 1e-12);

/// Balance factor for the edge loss: a fixed value, or the per-batch
/// positive/negative edge ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AlphaSetting {
    Fixed(f64),
    Auto,
}

impl Serialize for AlphaSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            AlphaSetting::Fixed(v) => s.serialize_f64(*v),
            AlphaSetting::Auto => s.serialize_str("auto"),
        }
    }
}

impl<'de> Deserialize<'de> for AlphaSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(AlphaSetting::Fixed(v)),
            Raw::Text(t) if t == "auto" => Ok(AlphaSetting::Auto),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "alpha must be a number or \"auto\", got {t:?}"
            ))),
        }
    }
}

/// Weighting of the combined objective `λ1·L_point + λ2·L_edge`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub alpha: AlphaSetting,
    /// Self-edges (always consistent) count in the edge loss by default;
    /// switch off to exclude them.
    #[serde(default = "default_true")]
    pub include_self_edges: bool,
}

fn default_true() -> bool {
    true
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            alpha: AlphaSetting::Auto,
            include_self_edges: true,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Validation(format!(
                "loss weights must be non-negative, got λ1 = {}, λ2 = {}",
                self.lambda1, self.lambda2
            )));
        }
        if let AlphaSetting::Fixed(a) = self.alpha {
            if a <= 0.0 {
                return Err(Error::Validation(format!("alpha must be positive, got {a}")));
            }
        }
        Ok(())
    }
}

/// Binary consistency labels over a layer's edges: 1 iff the endpoints share
/// a semantic class. Self-edges are always 1. `block_labels` is indexed
/// through the layer's `point_indices`.
pub fn edge_labels(graph: &GraphLayer, block_labels: &[u32]) -> Result<Vec<f64>> {
    if let Some(&bad) = graph.point_indices.iter().find(|&&i| i >= block_labels.len()) {
        return Err(Error::Validation(format!(
            "point index {bad} outside the {} labels",
            block_labels.len()
        )));
    }
    Ok(graph
        .edges
        .iter()
        .map(|&(s, d)| {
            let ls = block_labels[graph.point_indices[s]];
            let ld = block_labels[graph.point_indices[d]];
            if ls == ld {
                1.0
            } else {
                0.0
            }
        })
        .collect())
}

/// 0/1 mask selecting the edges that participate in the edge loss.
pub fn edge_loss_mask(graph: &GraphLayer, include_self_edges: bool) -> Vec<f64> {
    graph
        .edges
        .iter()
        .map(|&(s, d)| {
            if !include_self_edges && s == d {
                0.0
            } else {
                1.0
            }
        })
        .collect()
}

/// Resolves the balance factor: `Auto` becomes
/// `#positive / max(1, #negative)` over the masked edges.
pub fn resolve_alpha(setting: AlphaSetting, labels: &[f64], mask: &[f64]) -> f64 {
    match setting {
        AlphaSetting::Fixed(a) => a,
        AlphaSetting::Auto => {
            let mut pos = 0usize;
            let mut neg = 0usize;
            for (&l, &m) in labels.iter().zip(mask) {
                if m == 0.0 {
                    continue;
                }
                if l == 1.0 {
                    pos += 1;
                } else {
                    neg += 1;
                }
            }
            pos as f64 / neg.max(1) as f64
        }
    }
}

/// Mean cross-entropy of the (refined) class scores against point labels:
/// `−mean log softmax(scores)[label]`.
pub fn point_loss(tape: &mut Tape, scores: ValueId, labels: &[u32]) -> Result<ValueId> {
    let (n, c) = (tape.value(scores).rows(), tape.value(scores).cols());
    if labels.len() != n {
        return Err(Error::Validation(format!(
            "point_loss got {} labels for {n} score rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= c) {
        return Err(Error::Validation(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let logsm = tape.log_softmax_rows(scores)?;
    let mut onehot = vec![0.0; n * c];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * c + l as usize] = 1.0;
    }
    let mask = tape.constant(Tensor::matrix(n, c, onehot)?);
    let picked = tape.mul(logsm, mask)?;
    let total = tape.sum_all(picked);
    Ok(tape.scale(total, -1.0 / n as f64))
}

/// Balanced binary cross entropy over edge predictions:
/// `−(1/|E|) Σ [ l·log p + α·(1−l)·log(1−p) ]`, with predictions clamped
/// away from 0 and 1 before the logs. A zero `mask` entry removes an edge
/// from both the sum and the denominator.
pub fn edge_loss(
    tape: &mut Tape,
    preds: ValueId,
    labels: &[f64],
    alpha: f64,
    mask: Option<&[f64]>,
) -> Result<ValueId> {
    let e = tape.value(preds).rows();
    if tape.value(preds).cols() != 1 {
        return Err(Error::Validation(format!(
            "edge_loss expects an E×1 prediction column, got {:?}",
            tape.value(preds).shape()
        )));
    }
    if labels.len() != e {
        return Err(Error::Validation(format!(
            "edge_loss got {} labels for {e} predictions",
            labels.len()
        )));
    }
    if let Some(m) = mask {
        if m.len() != e {
            return Err(Error::Validation(format!(
                "edge_loss got {} mask entries for {e} predictions",
                m.len()
            )));
        }
    }
    let count = match mask {
        Some(m) => m.iter().filter(|&&v| v != 0.0).count(),
        None => e,
    };
    if count == 0 {
        return Err(Error::Validation("edge_loss has no edges to score".into()));
    }

    let apply_mask = |v: f64, i: usize| mask.map_or(v, |m| v * m[i]);
    let pos_w: Vec<f64> = labels.iter().enumerate().map(|(i, &l)| apply_mask(l, i)).collect();
    let neg_w: Vec<f64> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| apply_mask((1.0 - l) * alpha, i))
        .collect();

    let pc = tape.clamp(preds, PRED_CLAMP.0, PRED_CLAMP.1);
    let log_p = tape.log(pc);
    let ones = tape.constant(Tensor::matrix(e, 1, vec![1.0; e])?);
    let one_minus = tape.sub(ones, pc)?;
    let log_1p = tape.log(one_minus);

    let pos_w = tape.constant(Tensor::matrix(e, 1, pos_w)?);
    let neg_w = tape.constant(Tensor::matrix(e, 1, neg_w)?);
    let pos_term = tape.mul(pos_w, log_p)?;
    let neg_term = tape.mul(neg_w, log_1p)?;
    let sum = tape.add(pos_term, neg_term)?;
    let total = tape.sum_all(sum);
    Ok(tape.scale(total, -1.0 / count as f64))
}

/// `λ1·lp + λ2·le`.
pub fn total_loss(
    tape: &mut Tape,
    lp: ValueId,
    le: ValueId,
    weights: &LossWeights,
) -> Result<ValueId> {
    let a = tape.scale(lp, weights.lambda1);
    let b = tape.scale(le, weights.lambda2);
    tape.add(a, b)
}

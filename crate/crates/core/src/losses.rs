//! The five task losses and their weighted combination.
//!
//! All losses are built on the autodiff tape so training gets gradients for
//! free; tests read their scalar values off the tape. A batch can
//! legitimately lack every label for a task (multi-dataset training), which
//! the [`LossOutcome::Empty`] signal represents: the task contributes zero
//! with zero weight and is excluded from logging averages — never a NaN.

use autograd::{Arr, NodeId, Tape};
use ndarray::IxDyn;
use serde::{Deserialize, Serialize};

use crate::error::LossError;

/// Margin handling for the batch-hard triplet loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginMode {
    /// mean(max(0, m + hardest_pos - hardest_neg))
    Hinge(f64),
    /// Margin-free: mean(ln(1 + exp(hardest_pos - hardest_neg)))
    SoftPlus,
}

/// A loss that may be undefined for a batch with no valid labels.
#[derive(Debug, Clone, Copy)]
pub enum LossOutcome {
    Value(NodeId),
    Empty,
}

/// Pre-square-root clamp for Euclidean distances; keeps the gradient finite
/// when two embeddings coincide.
pub const DIST_EPS: f64 = 1e-12;

/// Batch-hard triplet loss over raw (unnormalized) embeddings with Euclidean
/// distance. Per anchor, the hardest positive is the farthest same-identity
/// sample (self excluded) and the hardest negative the nearest
/// other-identity sample.
pub fn batch_hard_triplet(
    tape: &mut Tape,
    embeddings: NodeId,
    identities: &[i64],
    mode: MarginMode,
) -> Result<NodeId, LossError> {
    let b = tape.value(embeddings).shape()[0];
    if identities.len() != b {
        return Err(LossError::Composition(format!(
            "{} identity labels for {b} embeddings",
            identities.len()
        )));
    }
    let mut pos = ndarray::Array2::<bool>::from_elem((b, b), false);
    let mut neg = ndarray::Array2::<bool>::from_elem((b, b), false);
    for i in 0..b {
        for j in 0..b {
            if i != j && identities[i] == identities[j] {
                pos[(i, j)] = true;
            }
            if identities[i] != identities[j] {
                neg[(i, j)] = true;
            }
        }
    }
    for i in 0..b {
        if !(0..b).any(|j| pos[(i, j)]) {
            return Err(LossError::Composition(format!(
                "identity {} has a single sample; batch-hard needs >= 2",
                identities[i]
            )));
        }
        if !(0..b).any(|j| neg[(i, j)]) {
            return Err(LossError::Composition(
                "batch contains a single identity; batch-hard needs >= 2".to_string(),
            ));
        }
    }

    let d2 = tape.pairwise_sqdist(embeddings);
    let d = tape.sqrt_clamped(d2, DIST_EPS);
    let hp = tape.masked_row_extremum(d, &pos, true);
    let hn = tape.masked_row_extremum(d, &neg, false);
    let diff = tape.sub(hp, hn);
    let per_anchor = match mode {
        MarginMode::Hinge(m) => {
            let shifted = tape.add_scalar(diff, m);
            tape.relu(shifted)
        }
        MarginMode::SoftPlus => tape.softplus(diff),
    };
    Ok(tape.mean_all(per_anchor))
}

/// Identity cross-entropy over probability rows: mean of -ln p[label].
pub fn person_ce(tape: &mut Tape, probs: NodeId, labels: &[usize]) -> Result<NodeId, LossError> {
    let shape: Vec<usize> = tape.value(probs).shape().to_vec();
    let (b, n) = (shape[0], shape[1]);
    if labels.len() != b {
        return Err(LossError::Label(format!("{} labels for {b} rows", labels.len())));
    }
    let mut flat = Vec::with_capacity(b);
    for (i, &l) in labels.iter().enumerate() {
        if l >= n {
            return Err(LossError::Label(format!("label {l} out of range for {n} classes (row {i})")));
        }
        flat.push(i * n + l);
    }
    let picked = tape.gather(probs, &flat);
    let logs = tape.ln(picked);
    let mean = tape.mean_all(logs);
    Ok(tape.scale(mean, -1.0))
}

/// Attribute cross-entropy: unweighted mean over attributes of the batch-mean
/// CE, where each attribute averages only over samples whose label is
/// present; attributes with no labels at all drop out of the outer mean.
pub fn attribute_ce(
    tape: &mut Tape,
    per_attr_probs: &[NodeId],
    per_attr_labels: &[Vec<Option<usize>>],
) -> Result<LossOutcome, LossError> {
    assert_eq!(
        per_attr_probs.len(),
        per_attr_labels.len(),
        "one label column per attribute head"
    );
    let mut terms: Vec<NodeId> = Vec::new();
    for (a, (&probs, labels)) in per_attr_probs.iter().zip(per_attr_labels).enumerate() {
        let shape: Vec<usize> = tape.value(probs).shape().to_vec();
        let (b, n) = (shape[0], shape[1]);
        if labels.len() != b {
            return Err(LossError::Label(format!(
                "attribute {a}: {} labels for {b} rows",
                labels.len()
            )));
        }
        let mut flat = Vec::new();
        for (i, l) in labels.iter().enumerate() {
            if let Some(l) = *l {
                if l >= n {
                    return Err(LossError::Label(format!(
                        "attribute {a}: label {l} out of range for {n} classes (row {i})"
                    )));
                }
                flat.push(i * n + l);
            }
        }
        if flat.is_empty() {
            continue;
        }
        let picked = tape.gather(probs, &flat);
        let logs = tape.ln(picked);
        let mean = tape.mean_all(logs);
        terms.push(tape.scale(mean, -1.0));
    }
    if terms.is_empty() {
        return Ok(LossOutcome::Empty);
    }
    let mut sum = terms[0];
    for &t in &terms[1..] {
        sum = tape.add(sum, t);
    }
    Ok(LossOutcome::Value(tape.scale(sum, 1.0 / terms.len() as f64)))
}

/// Pose regression: mean over visible ground-truth joints of the squared
/// Euclidean distance between prediction and truth, with both coordinate
/// sets divided by `normalizer` (conventionally the image diagonal) for
/// scale stability. Invisible joints contribute nothing.
pub fn pose_l2(
    tape: &mut Tape,
    pred: NodeId,
    gt: &ndarray::Array3<f64>,
    visible: &ndarray::Array2<bool>,
    normalizer: f64,
) -> LossOutcome {
    let shape: Vec<usize> = tape.value(pred).shape().to_vec();
    assert_eq!(shape, vec![gt.shape()[0], gt.shape()[1], 2], "pred/gt joint shapes differ");
    assert!(normalizer > 0.0, "normalizer must be positive");
    let (b, j) = (gt.shape()[0], gt.shape()[1]);
    let nvis = visible.iter().filter(|&&v| v).count();
    if nvis == 0 {
        return LossOutcome::Empty;
    }
    let gt_c = tape.constant(gt.clone().into_dyn());
    let diff = tape.sub(pred, gt_c);
    let scaled = tape.scale(diff, 1.0 / normalizer);
    let sq = tape.mul(scaled, scaled);
    let mut mask = Arr::zeros(IxDyn(&[b, j, 2]));
    for bi in 0..b {
        for ji in 0..j {
            if visible[(bi, ji)] {
                mask[[bi, ji, 0]] = 1.0;
                mask[[bi, ji, 1]] = 1.0;
            }
        }
    }
    let masked = tape.mul_const(sq, &mask);
    let total = tape.sum_all(masked);
    LossOutcome::Value(tape.scale(total, 1.0 / nvis as f64))
}

/// Pixel label marking "no supervision here" in segmentation masks.
pub const SEG_IGNORE: i64 = 255;

/// Bootstrapped cross-entropy over logits (N, P, H, W) and integer masks
/// (N, H, W): per-pixel CE on non-ignored pixels, of which only the
/// ceil(keep_fraction * count) largest are averaged.
pub fn bootstrapped_ce(
    tape: &mut Tape,
    logits: NodeId,
    mask: &ndarray::Array3<i64>,
    keep_fraction: f64,
) -> Result<LossOutcome, LossError> {
    assert!(
        keep_fraction > 0.0 && keep_fraction <= 1.0,
        "keep_fraction must lie in (0, 1]"
    );
    let shape: Vec<usize> = tape.value(logits).shape().to_vec();
    let (n, p, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    assert_eq!(mask.shape(), &[n, h, w], "mask shape disagrees with logits");

    let logp = tape.log_softmax(logits, 1);
    let mut flat = Vec::new();
    for bi in 0..n {
        for y in 0..h {
            for x in 0..w {
                let label = mask[(bi, y, x)];
                if label == SEG_IGNORE {
                    continue;
                }
                if label < 0 || label as usize >= p {
                    return Err(LossError::Label(format!(
                        "mask label {label} out of range for {p} classes at ({bi},{y},{x})"
                    )));
                }
                flat.push(((bi * p + label as usize) * h + y) * w + x);
            }
        }
    }
    if flat.is_empty() {
        return Ok(LossOutcome::Empty);
    }
    let picked = tape.gather(logp, &flat);
    let ce = tape.scale(picked, -1.0);
    let k = ((keep_fraction * flat.len() as f64).ceil() as usize).clamp(1, flat.len());
    Ok(LossOutcome::Value(tape.topk_mean(ce, k)))
}

/// Names of the five tasks' losses, used in bundles, logs, and configs.
pub const LOSS_NAMES: [&str; 5] = ["triplet", "person_ce", "attribute_ce", "pose_l2", "seg_bce"];

/// Scalar record of one batch's losses: per-task values (absent when the
/// batch had no labels for the task), their weights, and the weighted total.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossBundle {
    pub parts: Vec<(String, Option<f64>)>,
    pub weights: Vec<(String, f64)>,
    pub total: f64,
}

/// Weighted sum of present losses on the tape. Returns the total node (for
/// backward) plus the value bundle (for logging). Empty outcomes contribute
/// zero with weight zero.
pub fn combine(tape: &mut Tape, parts: Vec<(String, LossOutcome, f64)>) -> (Option<NodeId>, LossBundle) {
    let mut total: Option<NodeId> = None;
    let mut bundle_parts = Vec::new();
    let mut weights = Vec::new();
    for (name, outcome, weight) in parts {
        assert!(weight > 0.0, "loss weights must be positive");
        match outcome {
            LossOutcome::Value(node) => {
                let term = tape.scale(node, weight);
                total = Some(match total {
                    Some(t) => tape.add(t, term),
                    None => term,
                });
                bundle_parts.push((name.clone(), Some(tape.scalar(node))));
                weights.push((name, weight));
            }
            LossOutcome::Empty => {
                bundle_parts.push((name.clone(), None));
                weights.push((name, 0.0));
            }
        }
    }
    let total_value = total.map(|t| tape.scalar(t)).unwrap_or(0.0);
    (
        total,
        LossBundle {
            parts: bundle_parts,
            weights,
            total: total_value,
        },
    )
}

//! Brute-force reference implementations shared by the integration tests.
//!
//! Every function here is the most literal loop translation of the
//! corresponding metric or loss definition, written independently of the
//! library code it checks. Slow and simple on purpose.

#![allow(dead_code)] // each test binary uses its own subset

use ndarray::{Array2, Array3, Array4};
use person_mtl::losses::MarginMode;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const JUNK: i64 = -1;

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ReidOracle {
    pub map: f64,
    pub cmc1: f64,
    pub cmc5: f64,
    pub cmc10: f64,
    pub excluded: usize,
    pub scored: usize,
}

fn euclid(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Single-query retrieval scoring by exhaustive ranking. Returns `None` when
/// no query has a valid match (the library treats that as an error).
pub fn reid_oracle(
    query: &Array2<f64>,
    qpid: &[i64],
    qcam: &[i64],
    gallery: &Array2<f64>,
    gpid: &[i64],
    gcam: &[i64],
) -> Option<ReidOracle> {
    let mut ap_sum = 0.0;
    let (mut hit1, mut hit5, mut hit10) = (0usize, 0usize, 0usize);
    let mut scored = 0usize;
    let mut excluded = 0usize;
    for q in 0..query.nrows() {
        // Rank the whole gallery by (distance, index), then walk it in order,
        // skipping junk items and same-person-same-camera captures.
        let mut order: Vec<(f64, usize)> = (0..gallery.nrows())
            .map(|g| (euclid(query.row(q), gallery.row(g)), g))
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        let mut rank = 0usize; // 1-based position within the kept list
        let mut hits = 0usize;
        let mut precisions = Vec::new();
        let mut first_hit_rank = None;
        for (_, g) in order {
            if gpid[g] == JUNK || (gpid[g] == qpid[q] && gcam[g] == qcam[q]) {
                continue;
            }
            rank += 1;
            if gpid[g] == qpid[q] {
                hits += 1;
                precisions.push(hits as f64 / rank as f64);
                if first_hit_rank.is_none() {
                    first_hit_rank = Some(rank);
                }
            }
        }
        match first_hit_rank {
            None => excluded += 1,
            Some(r) => {
                scored += 1;
                ap_sum += precisions.iter().sum::<f64>() / precisions.len() as f64;
                if r <= 1 {
                    hit1 += 1;
                }
                if r <= 5 {
                    hit5 += 1;
                }
                if r <= 10 {
                    hit10 += 1;
                }
            }
        }
    }
    if scored == 0 {
        return None;
    }
    Some(ReidOracle {
        map: ap_sum / scored as f64,
        cmc1: hit1 as f64 / scored as f64,
        cmc5: hit5 as f64 / scored as f64,
        cmc10: hit10 as f64 / scored as f64,
        excluded,
        scored,
    })
}

/// Random retrieval instance: quantized embeddings (to force distance ties),
/// junk entries, same-camera duplicates, and at least one scorable query.
pub fn random_retrieval(
    rng: &mut ChaCha8Rng,
    max_queries: usize,
    max_gallery: usize,
) -> (Array2<f64>, Vec<i64>, Vec<i64>, Array2<f64>, Vec<i64>, Vec<i64>) {
    let dim = rng.gen_range(2..=5);
    let nq = rng.gen_range(1..=max_queries);
    let persons = rng.gen_range(2..=6);
    let quant = |v: f64| (v * 2.0).round() / 2.0;

    let mut q = Array2::<f64>::zeros((nq, dim));
    let mut qpid = Vec::new();
    let mut qcam = Vec::new();
    for i in 0..nq {
        for d in 0..dim {
            q[(i, d)] = quant(rng.gen_range(-2.0..2.0));
        }
        qpid.push(rng.gen_range(0..persons) as i64);
        qcam.push(rng.gen_range(0..3) as i64);
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut gpid = Vec::new();
    let mut gcam = Vec::new();
    // Guarantee the first query a cross-camera match so the instance scores.
    rows.push((0..dim).map(|_| quant(rng.gen_range(-2.0..2.0))).collect());
    gpid.push(qpid[0]);
    gcam.push((qcam[0] + 1) % 3);
    let extra = rng.gen_range(4..=max_gallery.saturating_sub(1).max(4));
    for _ in 0..extra {
        rows.push((0..dim).map(|_| quant(rng.gen_range(-2.0..2.0))).collect());
        let junk = rng.gen_range(0..10) == 0;
        gpid.push(if junk { JUNK } else { rng.gen_range(0..persons) as i64 });
        gcam.push(rng.gen_range(0..3) as i64);
    }
    let g = Array2::from_shape_vec(
        (rows.len(), dim),
        rows.into_iter().flatten().collect(),
    )
    .unwrap();
    (q, qpid, qcam, g, gpid, gcam)
}

// ---------------------------------------------------------------------------
// Pose
// ---------------------------------------------------------------------------

/// Per-joint correct rates plus the visibility-weighted average.
pub fn pckh_oracle(
    preds: &Array3<f64>,
    gts: &Array3<f64>,
    visible: &Array2<bool>,
    head_sizes: &[f64],
    alpha: f64,
) -> (Vec<Option<f64>>, f64) {
    let (n, j) = (gts.shape()[0], gts.shape()[1]);
    let mut per_joint = Vec::new();
    let (mut all_correct, mut all_seen) = (0usize, 0usize);
    for jj in 0..j {
        let mut correct = 0usize;
        let mut seen = 0usize;
        for i in 0..n {
            if !visible[(i, jj)] {
                continue;
            }
            seen += 1;
            let dx = preds[(i, jj, 0)] - gts[(i, jj, 0)];
            let dy = preds[(i, jj, 1)] - gts[(i, jj, 1)];
            if (dx * dx + dy * dy).sqrt() <= alpha * head_sizes[i] {
                correct += 1;
            }
        }
        per_joint.push((seen > 0).then(|| correct as f64 / seen as f64));
        all_correct += correct;
        all_seen += seen;
    }
    let avg = if all_seen > 0 {
        all_correct as f64 / all_seen as f64
    } else {
        0.0
    };
    (per_joint, avg)
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SegOracle {
    pub overall_acc: f64,
    pub mean_acc: f64,
    pub miou: f64,
    pub per_class_iou: Vec<Option<f64>>,
}

/// Confusion-matrix scoring with a full nested-loop tally.
pub fn seg_oracle(
    preds: &[Array2<i64>],
    gts: &[Array2<i64>],
    num_classes: usize,
    ignore: i64,
) -> SegOracle {
    let mut conf = vec![vec![0u64; num_classes]; num_classes]; // [gt][pred]
    for (p, t) in preds.iter().zip(gts) {
        for (pv, tv) in p.iter().zip(t.iter()) {
            if *tv == ignore {
                continue;
            }
            conf[*tv as usize][*pv as usize] += 1;
        }
    }
    let total: u64 = conf.iter().flatten().sum();
    let diag: u64 = (0..num_classes).map(|c| conf[c][c]).sum();
    let overall_acc = if total > 0 { diag as f64 / total as f64 } else { 0.0 };

    let mut accs = Vec::new();
    let mut ious = Vec::new();
    let mut per_class = Vec::new();
    for c in 0..num_classes {
        let gt_c: u64 = conf[c].iter().sum();
        let pred_c: u64 = (0..num_classes).map(|r| conf[r][c]).sum();
        if gt_c > 0 {
            accs.push(conf[c][c] as f64 / gt_c as f64);
        }
        if gt_c == 0 && pred_c == 0 {
            per_class.push(None);
            continue;
        }
        let tp = conf[c][c];
        let iou = tp as f64 / (gt_c + pred_c - tp) as f64;
        per_class.push(Some(iou));
        ious.push(iou);
    }
    SegOracle {
        overall_acc,
        mean_acc: if accs.is_empty() { 0.0 } else { accs.iter().sum::<f64>() / accs.len() as f64 },
        miou: if ious.is_empty() { 0.0 } else { ious.iter().sum::<f64>() / ious.len() as f64 },
        per_class_iou: per_class,
    }
}

// ---------------------------------------------------------------------------
// Attributes
// ---------------------------------------------------------------------------

/// Per-attribute argmax accuracy (ties to the lowest class index) plus the
/// unweighted mean over attributes that had any labels.
pub fn attr_oracle(
    per_attr_probs: &[Array2<f64>],
    per_attr_labels: &[Vec<Option<usize>>],
) -> (Vec<Option<f64>>, f64) {
    let mut per_attr = Vec::new();
    let mut defined = Vec::new();
    for (probs, labels) in per_attr_probs.iter().zip(per_attr_labels) {
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (i, label) in labels.iter().enumerate() {
            let Some(label) = *label else { continue };
            seen += 1;
            let mut best = 0usize;
            for c in 1..probs.ncols() {
                if probs[(i, c)] > probs[(i, best)] {
                    best = c;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        let acc = (seen > 0).then(|| correct as f64 / seen as f64);
        per_attr.push(acc);
        if let Some(a) = acc {
            defined.push(a);
        }
    }
    let avg = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    (per_attr, avg)
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Batch-hard triplet loss by explicit enumeration of every anchor's hardest
/// positive and negative.
pub fn triplet_oracle(emb: &Array2<f64>, ids: &[i64], mode: MarginMode) -> f64 {
    let b = emb.nrows();
    let mut total = 0.0;
    for a in 0..b {
        let mut hp = f64::NEG_INFINITY;
        let mut hn = f64::INFINITY;
        for o in 0..b {
            let d = euclid(emb.row(a), emb.row(o));
            if o != a && ids[o] == ids[a] {
                hp = hp.max(d);
            }
            if ids[o] != ids[a] {
                hn = hn.min(d);
            }
        }
        total += match mode {
            MarginMode::Hinge(m) => (m + hp - hn).max(0.0),
            MarginMode::SoftPlus => (1.0 + (hp - hn).exp()).ln(),
        };
    }
    total / b as f64
}

/// Mean negative log-probability of the labeled class.
pub fn person_ce_oracle(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        total += -probs[(i, l)].ln();
    }
    total / labels.len() as f64
}

/// Unweighted mean over attributes of each attribute's batch-mean CE over
/// its labeled rows; `None` when every attribute is entirely unlabeled.
pub fn attribute_ce_oracle(
    per_attr_probs: &[Array2<f64>],
    per_attr_labels: &[Vec<Option<usize>>],
) -> Option<f64> {
    let mut terms = Vec::new();
    for (probs, labels) in per_attr_probs.iter().zip(per_attr_labels) {
        let mut total = 0.0;
        let mut n = 0usize;
        for (i, label) in labels.iter().enumerate() {
            if let Some(l) = label {
                total += -probs[(i, *l)].ln();
                n += 1;
            }
        }
        if n > 0 {
            terms.push(total / n as f64);
        }
    }
    if terms.is_empty() {
        None
    } else {
        Some(terms.iter().sum::<f64>() / terms.len() as f64)
    }
}

/// Mean over visible joints of squared Euclidean distance in normalized
/// coordinates; `None` when nothing is visible.
pub fn pose_l2_oracle(
    pred: &Array3<f64>,
    gt: &Array3<f64>,
    visible: &Array2<bool>,
    normalizer: f64,
) -> Option<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for i in 0..gt.shape()[0] {
        for j in 0..gt.shape()[1] {
            if !visible[(i, j)] {
                continue;
            }
            let dx = (pred[(i, j, 0)] - gt[(i, j, 0)]) / normalizer;
            let dy = (pred[(i, j, 1)] - gt[(i, j, 1)]) / normalizer;
            total += dx * dx + dy * dy;
            n += 1;
        }
    }
    (n > 0).then(|| total / n as f64)
}

/// Bootstrapped CE: per-pixel −ln softmax(logits)[label] on non-ignored
/// pixels, sorted descending, mean of the top ⌈keep·count⌉.
pub fn bootstrapped_ce_oracle(
    logits: &Array4<f64>,
    mask: &Array3<i64>,
    keep: f64,
    ignore: i64,
) -> Option<f64> {
    let (n, p, h, w) = (
        logits.shape()[0],
        logits.shape()[1],
        logits.shape()[2],
        logits.shape()[3],
    );
    let mut ces = Vec::new();
    for i in 0..n {
        for y in 0..h {
            for x in 0..w {
                let label = mask[(i, y, x)];
                if label == ignore {
                    continue;
                }
                let z: f64 = (0..p).map(|c| logits[(i, c, y, x)].exp()).sum();
                let prob = logits[(i, label as usize, y, x)].exp() / z;
                ces.push(-prob.ln());
            }
        }
    }
    if ces.is_empty() {
        return None;
    }
    ces.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let k = ((keep * ces.len() as f64).ceil() as usize).max(1);
    Some(ces[..k].iter().sum::<f64>() / k as f64)
}

// ---------------------------------------------------------------------------
// Random input helpers
// ---------------------------------------------------------------------------

pub fn uniform2(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.gen_range(lo..hi))
}

/// Random PK-shaped batch: `p` identities with `k` embeddings each.
pub fn random_pk_batch(rng: &mut ChaCha8Rng, p: usize, k: usize, dim: usize) -> (Array2<f64>, Vec<i64>) {
    let b = p * k;
    let emb = uniform2(rng, b, dim, -2.0, 2.0);
    let ids: Vec<i64> = (0..b).map(|i| (i / k) as i64 + 100).collect();
    (emb, ids)
}

/// Random probability rows (strictly positive, rows sum to 1).
pub fn random_probs(rng: &mut ChaCha8Rng, rows: usize, classes: usize) -> Array2<f64> {
    let mut m = Array2::from_shape_fn((rows, classes), |_| rng.gen_range(0.05..1.0));
    for mut row in m.rows_mut() {
        let s: f64 = row.iter().sum();
        row.mapv_inplace(|v| v / s);
    }
    m
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

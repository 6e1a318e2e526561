//! Evaluation protocols: retrieval mAP/CMC, PCKh@0.5, segmentation IoU, and
//! attribute accuracy. All pure functions over plain arrays.

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

/// Person id marking distractor/junk gallery entries.
pub const JUNK_ID: i64 = -1;

/// Query and gallery embeddings with identity and camera labels.
pub struct RetrievalSet {
    pub query: Array2<f64>,
    pub query_pid: Vec<i64>,
    pub query_cam: Vec<i64>,
    pub gallery: Array2<f64>,
    pub gallery_pid: Vec<i64>,
    pub gallery_cam: Vec<i64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ReidMetrics {
    pub map: f64,
    pub cmc1: f64,
    pub cmc5: f64,
    pub cmc10: f64,
    /// Queries dropped for having no valid match after filtering.
    pub excluded_queries: usize,
    pub scored_queries: usize,
}

/// Single-query retrieval evaluation.
///
/// Per query, gallery items are ranked by ascending Euclidean distance (ties
/// broken by gallery index); items sharing BOTH person and camera id with
/// the query, and junk items (person id -1), are removed from the ranking.
/// AP averages precision at each relevant rank; CMC@k is the fraction of
/// queries whose first relevant item appears within the top k.
pub fn reid_eval(rs: &RetrievalSet) -> Result<ReidMetrics, String> {
    let q = rs.query.nrows();
    let g = rs.gallery.nrows();
    if q == 0 {
        return Err("retrieval set has zero queries".to_string());
    }
    if rs.query_pid.len() != q || rs.query_cam.len() != q {
        return Err("query label lengths disagree with embeddings".to_string());
    }
    if rs.gallery_pid.len() != g || rs.gallery_cam.len() != g {
        return Err("gallery label lengths disagree with embeddings".to_string());
    }

    let mut ap_sum = 0.0;
    let mut hits1 = 0usize;
    let mut hits5 = 0usize;
    let mut hits10 = 0usize;
    let mut scored = 0usize;
    let mut excluded = 0usize;

    for qi in 0..q {
        let qrow = rs.query.row(qi);
        // (distance², gallery index); squared distances rank identically.
        let mut order: Vec<(f64, usize)> = (0..g)
            .filter(|&gi| {
                rs.gallery_pid[gi] != JUNK_ID
                    && !(rs.gallery_pid[gi] == rs.query_pid[qi]
                        && rs.gallery_cam[gi] == rs.query_cam[qi])
            })
            .map(|gi| {
                let mut d2 = 0.0;
                for (a, b) in qrow.iter().zip(rs.gallery.row(gi).iter()) {
                    d2 += (a - b) * (a - b);
                }
                (d2, gi)
            })
            .collect();
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

        let mut relevant_seen = 0usize;
        let mut precision_sum = 0.0;
        let mut first_rank: Option<usize> = None;
        for (rank0, &(_, gi)) in order.iter().enumerate() {
            if rs.gallery_pid[gi] == rs.query_pid[qi] {
                relevant_seen += 1;
                precision_sum += relevant_seen as f64 / (rank0 + 1) as f64;
                first_rank.get_or_insert(rank0 + 1);
            }
        }
        if relevant_seen == 0 {
            excluded += 1;
            continue;
        }
        scored += 1;
        ap_sum += precision_sum / relevant_seen as f64;
        let fr = first_rank.unwrap();
        if fr <= 1 {
            hits1 += 1;
        }
        if fr <= 5 {
            hits5 += 1;
        }
        if fr <= 10 {
            hits10 += 1;
        }
    }

    if scored == 0 {
        return Err("every query was excluded (no valid matches in gallery)".to_string());
    }
    let n = scored as f64;
    Ok(ReidMetrics {
        map: ap_sum / n,
        cmc1: hits1 as f64 / n,
        cmc5: hits5 as f64 / n,
        cmc10: hits10 as f64 / n,
        excluded_queries: excluded,
        scored_queries: scored,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PoseMetrics {
    /// Correct-rate per joint; None where no instance had the joint visible.
    pub per_joint: Vec<Option<f64>>,
    /// Mean over joints weighted by visible counts
    /// (= total correct / total visible).
    pub avg: f64,
}

/// PCKh: a joint is correct iff it is visible in the ground truth and the
/// prediction lies within `alpha * head_size` of it.
pub fn pckh(
    preds: &Array3<f64>,
    gts: &Array3<f64>,
    visible: &Array2<bool>,
    head_sizes: &[f64],
    alpha: f64,
) -> PoseMetrics {
    let (n, j, _) = (gts.shape()[0], gts.shape()[1], gts.shape()[2]);
    assert_eq!(preds.shape(), gts.shape(), "pred/gt shapes differ");
    assert_eq!(head_sizes.len(), n, "one head size per instance");
    let mut correct = vec![0usize; j];
    let mut seen = vec![0usize; j];
    for i in 0..n {
        assert!(head_sizes[i] > 0.0, "instance {i}: head_size must be positive");
        for jj in 0..j {
            if !visible[(i, jj)] {
                continue;
            }
            seen[jj] += 1;
            let dx = preds[(i, jj, 0)] - gts[(i, jj, 0)];
            let dy = preds[(i, jj, 1)] - gts[(i, jj, 1)];
            if (dx * dx + dy * dy).sqrt() <= alpha * head_sizes[i] {
                correct[jj] += 1;
            }
        }
    }
    let per_joint = (0..j)
        .map(|jj| (seen[jj] > 0).then(|| correct[jj] as f64 / seen[jj] as f64))
        .collect();
    let total_seen: usize = seen.iter().sum();
    let total_correct: usize = correct.iter().sum();
    PoseMetrics {
        per_joint,
        avg: if total_seen > 0 {
            total_correct as f64 / total_seen as f64
        } else {
            0.0
        },
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegMetrics {
    pub overall_acc: f64,
    pub mean_acc: f64,
    pub miou: f64,
    /// IoU per class; None for classes absent from both prediction and truth.
    pub per_class_iou: Vec<Option<f64>>,
}

/// Confusion-matrix segmentation scoring over pairs of integer masks.
/// Ignore-labeled pixels (in the ground truth) are excluded everywhere;
/// classes absent from both sides drop out of the mean IoU.
pub fn seg_eval(
    preds: &[Array2<i64>],
    gts: &[Array2<i64>],
    num_classes: usize,
    ignore_label: i64,
) -> Result<SegMetrics, String> {
    if preds.len() != gts.len() {
        return Err(format!("{} predictions vs {} ground truths", preds.len(), gts.len()));
    }
    let mut confusion = vec![0u64; num_classes * num_classes]; // [gt][pred]
    for (k, (p, t)) in preds.iter().zip(gts).enumerate() {
        if p.shape() != t.shape() {
            return Err(format!(
                "mask {k}: prediction {:?} vs ground truth {:?}",
                p.shape(),
                t.shape()
            ));
        }
        for (&pv, &tv) in p.iter().zip(t.iter()) {
            if tv == ignore_label {
                continue;
            }
            if tv < 0 || tv as usize >= num_classes {
                return Err(format!("mask {k}: ground-truth label {tv} out of range"));
            }
            if pv < 0 || pv as usize >= num_classes {
                return Err(format!("mask {k}: predicted label {pv} out of range"));
            }
            confusion[tv as usize * num_classes + pv as usize] += 1;
        }
    }

    let total: u64 = confusion.iter().sum();
    if total == 0 {
        return Err("no scorable pixels (everything ignored)".to_string());
    }
    let mut diag_sum = 0u64;
    let mut acc_sum = 0.0;
    let mut acc_classes = 0usize;
    let mut per_class_iou = Vec::with_capacity(num_classes);
    let mut iou_sum = 0.0;
    let mut iou_classes = 0usize;
    for c in 0..num_classes {
        let tp = confusion[c * num_classes + c];
        diag_sum += tp;
        let gt_c: u64 = (0..num_classes).map(|p| confusion[c * num_classes + p]).sum();
        let pred_c: u64 = (0..num_classes).map(|t| confusion[t * num_classes + c]).sum();
        if gt_c > 0 {
            acc_sum += tp as f64 / gt_c as f64;
            acc_classes += 1;
        }
        let union = gt_c + pred_c - tp;
        if union == 0 {
            per_class_iou.push(None);
        } else {
            let iou = tp as f64 / union as f64;
            per_class_iou.push(Some(iou));
            iou_sum += iou;
            iou_classes += 1;
        }
    }
    Ok(SegMetrics {
        overall_acc: diag_sum as f64 / total as f64,
        mean_acc: acc_sum / acc_classes as f64,
        miou: iou_sum / iou_classes as f64,
        per_class_iou,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AttrMetrics {
    /// Accuracy per attribute; None where every label was missing.
    pub per_attr: Vec<Option<f64>>,
    /// Unweighted mean over attributes that had labels.
    pub avg: f64,
}

/// Attribute accuracy: per attribute, the fraction of samples whose argmax
/// prediction (ties to the lowest class index) matches the label; samples
/// with missing labels are skipped.
pub fn attribute_eval(
    per_attr_probs: &[Array2<f64>],
    per_attr_labels: &[Vec<Option<usize>>],
) -> AttrMetrics {
    assert_eq!(per_attr_probs.len(), per_attr_labels.len());
    let mut per_attr = Vec::with_capacity(per_attr_probs.len());
    let mut sum = 0.0;
    let mut counted = 0usize;
    for (probs, labels) in per_attr_probs.iter().zip(per_attr_labels) {
        assert_eq!(probs.nrows(), labels.len(), "one label per row");
        let mut correct = 0usize;
        let mut seen = 0usize;
        for (row, label) in probs.rows().into_iter().zip(labels) {
            let Some(label) = *label else { continue };
            seen += 1;
            let mut best = 0usize;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            if best == label {
                correct += 1;
            }
        }
        if seen == 0 {
            per_attr.push(None);
        } else {
            let acc = correct as f64 / seen as f64;
            per_attr.push(Some(acc));
            sum += acc;
            counted += 1;
        }
    }
    AttrMetrics {
        per_attr,
        avg: if counted > 0 { sum / counted as f64 } else { 0.0 },
    }
}

/// Everything one evaluation pass can report; sections are present only for
/// the tasks that were evaluated.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub reid: Option<ReidMetrics>,
    pub pose: Option<PoseMetrics>,
    pub seg: Option<SegMetrics>,
    pub attributes: Option<AttrMetrics>,
}

impl MetricReport {
    /// Flat (name, value) pairs for CSV emission; per-class/per-joint entries
    /// are indexed, undefined ones skipped.
    pub fn flat(&self) -> Vec<(String, f64)> {
        let mut out = Vec::new();
        if let Some(r) = &self.reid {
            out.push(("reid.map".into(), r.map));
            out.push(("reid.cmc1".into(), r.cmc1));
            out.push(("reid.cmc5".into(), r.cmc5));
            out.push(("reid.cmc10".into(), r.cmc10));
            out.push(("reid.excluded_queries".into(), r.excluded_queries as f64));
        }
        if let Some(p) = &self.pose {
            out.push(("pose.pckh".into(), p.avg));
            for (j, v) in p.per_joint.iter().enumerate() {
                if let Some(v) = v {
                    out.push((format!("pose.pckh_joint{j}"), *v));
                }
            }
        }
        if let Some(s) = &self.seg {
            out.push(("seg.overall_acc".into(), s.overall_acc));
            out.push(("seg.mean_acc".into(), s.mean_acc));
            out.push(("seg.miou".into(), s.miou));
            for (c, v) in s.per_class_iou.iter().enumerate() {
                if let Some(v) = v {
                    out.push((format!("seg.iou_class{c}"), *v));
                }
            }
        }
        if let Some(a) = &self.attributes {
            out.push(("attr.avg_acc".into(), a.avg));
            for (i, v) in a.per_attr.iter().enumerate() {
                if let Some(v) = v {
                    out.push((format!("attr.acc{i}"), *v));
                }
            }
        }
        out
    }

    /// Looks a metric up by its flat name (as used in CSV headers).
    pub fn lookup(&self, name: &str) -> Option<f64> {
        self.flat().into_iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

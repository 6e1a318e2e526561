//! Evaluation metrics against hand-worked cases and brute-force oracles.

mod common;

use common::*;
use ndarray::{Array2, Array3};
use person_mtl::metrics::{attribute_eval, pckh, reid_eval, seg_eval, RetrievalSet};
use rand::Rng;

const EXACT: f64 = 1e-12;

fn one_d(vals: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec((vals.len(), 1), vals.to_vec()).unwrap()
}

fn rs(
    q: Array2<f64>,
    qpid: Vec<i64>,
    qcam: Vec<i64>,
    g: Array2<f64>,
    gpid: Vec<i64>,
    gcam: Vec<i64>,
) -> RetrievalSet {
    RetrievalSet {
        query: q,
        query_pid: qpid,
        query_cam: qcam,
        gallery: g,
        gallery_pid: gpid,
        gallery_cam: gcam,
    }
}

#[test]
fn reid_nearest_neighbor_sole_match_is_perfect() {
    let set = rs(
        one_d(&[0.0]),
        vec![7],
        vec![0],
        one_d(&[0.1, 5.0, 9.0]),
        vec![7, 3, 4],
        vec![1, 0, 0],
    );
    let m = reid_eval(&set).unwrap();
    assert_eq!(m.map, 1.0);
    assert_eq!(m.cmc1, 1.0);
    assert_eq!(m.excluded_queries, 0);
    assert_eq!(m.scored_queries, 1);
}

#[test]
fn reid_relevant_at_ranks_one_and_three() {
    // Gallery sorted by distance: pids [7, 1, 7, 2, 3]; matches at ranks 1
    // and 3 give AP = (1/1 + 2/3) / 2.
    let set = rs(
        one_d(&[0.0]),
        vec![7],
        vec![0],
        one_d(&[1.0, 2.0, 3.0, 4.0, 5.0]),
        vec![7, 1, 7, 2, 3],
        vec![1, 1, 1, 1, 1],
    );
    let m = reid_eval(&set).unwrap();
    assert!((m.map - (1.0 + 2.0 / 3.0) / 2.0).abs() < EXACT);
    assert_eq!(m.cmc1, 1.0);
}

#[test]
fn reid_filters_junk_and_same_camera_captures() {
    // Nearest two gallery items are a same-camera capture of the query and a
    // junk detection; the true match sits behind them and must surface at
    // rank 1 of the filtered list.
    let set = rs(
        one_d(&[0.0]),
        vec![7],
        vec![0],
        one_d(&[1.0, 2.0, 3.0, 4.0]),
        vec![7, -1, 7, 5],
        vec![0, 1, 1, 1],
    );
    let m = reid_eval(&set).unwrap();
    assert_eq!(m.map, 1.0);
    assert_eq!(m.cmc1, 1.0);
}

#[test]
fn reid_distance_ties_break_by_gallery_index() {
    // Both gallery items sit at distance 1; index order decides, so the
    // non-match at index 0 outranks the match at index 1.
    let set = rs(
        one_d(&[0.0]),
        vec![7],
        vec![0],
        one_d(&[1.0, -1.0]),
        vec![3, 7],
        vec![1, 1],
    );
    let m = reid_eval(&set).unwrap();
    assert!((m.map - 0.5).abs() < EXACT);
    assert_eq!(m.cmc1, 0.0);
}

#[test]
fn reid_queries_without_valid_matches_are_excluded_and_tallied() {
    // Second query's only identity match shares its camera, so the query is
    // dropped from the averages but reported in the exclusion tally.
    let set = rs(
        one_d(&[0.0, 10.0]),
        vec![1, 2],
        vec![0, 0],
        one_d(&[0.5, 10.5]),
        vec![1, 2],
        vec![1, 0],
    );
    let m = reid_eval(&set).unwrap();
    assert_eq!(m.scored_queries, 1);
    assert_eq!(m.excluded_queries, 1);
    assert_eq!(m.map, 1.0);
}

#[test]
fn reid_errors_when_no_query_is_scorable() {
    let set = rs(one_d(&[0.0]), vec![1], vec![0], one_d(&[0.5]), vec![1], vec![0]);
    assert!(reid_eval(&set).is_err());
}

#[test]
fn reid_matches_bruteforce_oracle_on_random_sets() {
    let mut rng = seeded(11);
    for trial in 0..200 {
        let (q, qpid, qcam, g, gpid, gcam) = random_retrieval(&mut rng, 20, 100);
        let oracle = reid_oracle(&q, &qpid, &qcam, &g, &gpid, &gcam);
        let got = reid_eval(&rs(q, qpid, qcam, g, gpid, gcam));
        match (oracle, got) {
            (Some(o), Ok(m)) => {
                assert!((m.map - o.map).abs() < EXACT, "trial {trial}: mAP {} vs {}", m.map, o.map);
                assert!((m.cmc1 - o.cmc1).abs() < EXACT, "trial {trial}: cmc1");
                assert!((m.cmc5 - o.cmc5).abs() < EXACT, "trial {trial}: cmc5");
                assert!((m.cmc10 - o.cmc10).abs() < EXACT, "trial {trial}: cmc10");
                assert_eq!(m.excluded_queries, o.excluded, "trial {trial}: exclusions");
                assert_eq!(m.scored_queries, o.scored, "trial {trial}: scored");
                assert!(
                    m.cmc1 <= m.cmc5 + EXACT && m.cmc5 <= m.cmc10 + EXACT,
                    "trial {trial}: cmc must be non-decreasing in k"
                );
            }
            (None, Err(_)) => {}
            (o, g) => panic!("trial {trial}: oracle {o:?} vs library {g:?}"),
        }
    }
}

#[test]
fn reid_is_invariant_under_monotone_distance_maps() {
    // Scaling every embedding by a constant (distances x2) and translating
    // all embeddings by a shared offset are strictly increasing maps of the
    // distances; ranks, and therefore all metrics, must not move.
    let mut rng = seeded(12);
    for _ in 0..20 {
        let (q, qpid, qcam, g, gpid, gcam) = random_retrieval(&mut rng, 8, 30);
        let base = reid_eval(&rs(q.clone(), qpid.clone(), qcam.clone(), g.clone(), gpid.clone(), gcam.clone()));
        let scaled = reid_eval(&rs(&q * 2.0, qpid.clone(), qcam.clone(), &g * 2.0, gpid.clone(), gcam.clone()));
        let shifted = reid_eval(&rs(&q + 3.5, qpid, qcam, &g + 3.5, gpid, gcam));
        match (base, scaled, shifted) {
            (Ok(a), Ok(b), Ok(c)) => {
                assert!((a.map - b.map).abs() < 1e-9 && (a.map - c.map).abs() < 1e-9);
                assert!((a.cmc1 - b.cmc1).abs() < 1e-9 && (a.cmc1 - c.cmc1).abs() < 1e-9);
            }
            (Err(_), Err(_), Err(_)) => {}
            _ => panic!("metric defined-ness changed under a monotone distance map"),
        }
    }
}

#[test]
fn pckh_perfect_predictions_score_one() {
    let gt = Array3::from_shape_fn((3, 4, 2), |(i, j, c)| (i * 7 + j * 3 + c) as f64);
    let vis = Array2::from_elem((3, 4), true);
    let m = pckh(&gt, &gt, &vis, &[5.0, 5.0, 5.0], 0.5);
    assert_eq!(m.avg, 1.0);
    assert!(m.per_joint.iter().all(|r| *r == Some(1.0)));
}

#[test]
fn pckh_threshold_is_half_the_head_size() {
    // head_size 20, alpha 0.5 -> 10 px: offset 9 counts, offset 11 does not.
    let gt = Array3::zeros((2, 1, 2));
    let mut pred = Array3::zeros((2, 1, 2));
    pred[(0, 0, 0)] = 9.0;
    pred[(1, 0, 0)] = 11.0;
    let vis = Array2::from_elem((2, 1), true);
    let m = pckh(&pred, &gt, &vis, &[20.0, 20.0], 0.5);
    assert!((m.avg - 0.5).abs() < EXACT);
}

#[test]
fn pckh_invisible_joints_do_not_count_and_empty_joints_are_undefined() {
    let gt = Array3::zeros((2, 2, 2));
    let mut pred = Array3::zeros((2, 2, 2));
    pred[(0, 0, 0)] = 100.0; // far off, but joint 0 is invisible in row 0
    let mut vis = Array2::from_elem((2, 2), true);
    vis[(0, 0)] = false;
    vis[(1, 0)] = false; // joint 0 never visible -> undefined
    let m = pckh(&pred, &gt, &vis, &[10.0, 10.0], 0.5);
    assert_eq!(m.per_joint[0], None);
    assert_eq!(m.per_joint[1], Some(1.0));
    assert_eq!(m.avg, 1.0); // average over the two visible joint-1 instances
}

#[test]
fn pckh_matches_loop_oracle_on_random_instances() {
    let mut rng = seeded(21);
    for trial in 0..200 {
        let n = rng.gen_range(1..=8);
        let j = rng.gen_range(1..=6);
        let gt = Array3::from_shape_fn((n, j, 2), |_| rng.gen_range(0.0..32.0));
        let pred = Array3::from_shape_fn((n, j, 2), |_| rng.gen_range(0.0..32.0));
        let vis = Array2::from_shape_fn((n, j), |_| rng.gen_range(0..10) < 7);
        let heads: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..8.0)).collect();
        let m = pckh(&pred, &gt, &vis, &heads, 0.5);
        let (per, avg) = pckh_oracle(&pred, &gt, &vis, &heads, 0.5);
        assert_eq!(m.per_joint.len(), per.len());
        for (a, b) in m.per_joint.iter().zip(&per) {
            match (a, b) {
                (Some(x), Some(y)) => assert!((x - y).abs() < EXACT, "trial {trial}"),
                (None, None) => {}
                _ => panic!("trial {trial}: defined-ness mismatch"),
            }
        }
        assert!((m.avg - avg).abs() < EXACT, "trial {trial}: avg");
    }
}

#[test]
fn pckh_is_invariant_to_consistent_joint_permutation() {
    let mut rng = seeded(22);
    let (n, j) = (5, 4);
    let gt = Array3::from_shape_fn((n, j, 2), |_| rng.gen_range(0.0..20.0));
    let pred = Array3::from_shape_fn((n, j, 2), |_| rng.gen_range(0.0..20.0));
    let vis = Array2::from_shape_fn((n, j), |_| rng.gen_range(0..10) < 8);
    let heads = vec![4.0; n];
    let base = pckh(&pred, &gt, &vis, &heads, 0.5);

    let perm = [2usize, 0, 3, 1];
    let permute3 = |a: &Array3<f64>| Array3::from_shape_fn((n, j, 2), |(i, jj, c)| a[(i, perm[jj], c)]);
    let pvis = Array2::from_shape_fn((n, j), |(i, jj)| vis[(i, perm[jj])]);
    let permuted = pckh(&permute3(&pred), &permute3(&gt), &pvis, &heads, 0.5);
    assert!((base.avg - permuted.avg).abs() < EXACT);
    for (jj, &src) in perm.iter().enumerate() {
        assert_eq!(permuted.per_joint[jj], base.per_joint[src]);
    }
}

fn mask(rows: &[&[i64]]) -> Array2<i64> {
    let h = rows.len();
    let w = rows[0].len();
    Array2::from_shape_fn((h, w), |(y, x)| rows[y][x])
}

#[test]
fn seg_identical_masks_score_one() {
    let m = mask(&[&[0, 1, 2], &[2, 1, 0]]);
    let s = seg_eval(&[m.clone()], &[m], 3, 255).unwrap();
    assert_eq!(s.overall_acc, 1.0);
    assert_eq!(s.mean_acc, 1.0);
    assert_eq!(s.miou, 1.0);
}

#[test]
fn seg_two_class_hand_case() {
    let gt = mask(&[&[0, 0], &[1, 1]]);
    let pred = mask(&[&[0, 1], &[1, 1]]);
    let s = seg_eval(&[pred], &[gt], 2, 255).unwrap();
    assert!((s.per_class_iou[0].unwrap() - 0.5).abs() < EXACT);
    assert!((s.per_class_iou[1].unwrap() - 2.0 / 3.0).abs() < EXACT);
    assert!((s.miou - 7.0 / 12.0).abs() < EXACT);
    assert!((s.overall_acc - 0.75).abs() < EXACT);
    assert!((s.mean_acc - 0.75).abs() < EXACT);
}

#[test]
fn seg_classes_absent_everywhere_drop_out_of_miou() {
    let gt = mask(&[&[0, 0], &[1, 1]]);
    let pred = mask(&[&[0, 0], &[1, 0]]);
    // Class 2 of 3 appears in neither mask: undefined, excluded from the mean.
    let s = seg_eval(&[pred], &[gt], 3, 255).unwrap();
    assert_eq!(s.per_class_iou[2], None);
    let iou0 = 2.0 / 3.0;
    let iou1 = 0.5;
    assert!((s.miou - (iou0 + iou1) / 2.0).abs() < EXACT);
}

#[test]
fn seg_ignore_pixels_are_excluded_everywhere() {
    let gt = mask(&[&[0, 255], &[255, 1]]);
    let pred = mask(&[&[0, 0], &[0, 1]]);
    let s = seg_eval(&[pred], &[gt], 2, 255).unwrap();
    assert_eq!(s.overall_acc, 1.0);
    assert_eq!(s.miou, 1.0);
}

#[test]
fn seg_shape_mismatch_is_an_error() {
    let gt = mask(&[&[0, 0]]);
    let pred = mask(&[&[0], &[0]]);
    assert!(seg_eval(&[pred], &[gt], 2, 255).is_err());
}

#[test]
fn seg_matches_confusion_oracle_on_random_masks() {
    let mut rng = seeded(31);
    for trial in 0..200 {
        let h = rng.gen_range(1..=16);
        let w = rng.gen_range(1..=16);
        let p = rng.gen_range(2..=6);
        let k = rng.gen_range(1..=3);
        // Bias labels low so high classes are sometimes absent from both
        // masks, exercising the undefined-class rule.
        let gen_mask = |rng: &mut rand_chacha::ChaCha8Rng, allow_ignore: bool| {
            Array2::from_shape_fn((h, w), |_| {
                if allow_ignore && rng.gen_range(0..10) == 0 {
                    255
                } else {
                    let r: f64 = rng.gen_range(0.0..1.0);
                    ((r * r * p as f64) as usize).min(p - 1) as i64
                }
            })
        };
        let gts: Vec<_> = (0..k).map(|_| gen_mask(&mut rng, true)).collect();
        let preds: Vec<_> = (0..k).map(|_| gen_mask(&mut rng, false)).collect();
        let s = seg_eval(&preds, &gts, p, 255).unwrap();
        let o = seg_oracle(&preds, &gts, p, 255);
        assert!((s.overall_acc - o.overall_acc).abs() < EXACT, "trial {trial}: overall");
        assert!((s.mean_acc - o.mean_acc).abs() < EXACT, "trial {trial}: mean acc");
        assert!((s.miou - o.miou).abs() < EXACT, "trial {trial}: miou");
        for (a, b) in s.per_class_iou.iter().zip(&o.per_class_iou) {
            match (a, b) {
                (Some(x), Some(y)) => assert!((x - y).abs() < EXACT, "trial {trial}"),
                (None, None) => {}
                _ => panic!("trial {trial}: class defined-ness mismatch"),
            }
        }
    }
}

#[test]
fn seg_miou_is_symmetric_in_pred_and_gt() {
    let mut rng = seeded(32);
    for _ in 0..50 {
        let h = rng.gen_range(2..=10);
        let w = rng.gen_range(2..=10);
        let p = rng.gen_range(2..=5);
        let a = Array2::from_shape_fn((h, w), |_| rng.gen_range(0..p) as i64);
        let b = Array2::from_shape_fn((h, w), |_| rng.gen_range(0..p) as i64);
        let ab = seg_eval(&[a.clone()], &[b.clone()], p, 255).unwrap();
        let ba = seg_eval(&[b], &[a], p, 255).unwrap();
        assert!((ab.miou - ba.miou).abs() < 1e-9);
    }
}

#[test]
fn attributes_perfect_predictions_score_one() {
    let probs = vec![
        Array2::from_shape_vec((2, 2), vec![0.9, 0.1, 0.2, 0.8]).unwrap(),
        Array2::from_shape_vec((2, 3), vec![0.7, 0.2, 0.1, 0.1, 0.1, 0.8]).unwrap(),
    ];
    let labels = vec![vec![Some(0), Some(1)], vec![Some(0), Some(2)]];
    let m = attribute_eval(&probs, &labels);
    assert_eq!(m.avg, 1.0);
}

#[test]
fn attributes_average_is_unweighted_over_attributes() {
    // Attribute 0 scores 0.8 over five samples, attribute 1 scores 0.6 over
    // five samples; the report averages the rates, not the samples.
    let mk = |correct: usize| {
        let mut p = Array2::zeros((5, 2));
        for i in 0..5 {
            let right = i < correct;
            p[(i, 0)] = if right { 0.9 } else { 0.1 };
            p[(i, 1)] = if right { 0.1 } else { 0.9 };
        }
        p
    };
    let labels = vec![vec![Some(0); 5], vec![Some(0); 5]];
    let m = attribute_eval(&[mk(4), mk(3)], &labels);
    assert!((m.per_attr[0].unwrap() - 0.8).abs() < EXACT);
    assert!((m.per_attr[1].unwrap() - 0.6).abs() < EXACT);
    assert!((m.avg - 0.7).abs() < EXACT);
}

#[test]
fn attributes_argmax_ties_take_the_lowest_class() {
    let probs = vec![Array2::from_shape_vec((1, 3), vec![0.4, 0.4, 0.2]).unwrap()];
    let right = attribute_eval(&probs, &[vec![Some(0)]]);
    assert_eq!(right.avg, 1.0);
    let wrong = attribute_eval(&probs, &[vec![Some(1)]]);
    assert_eq!(wrong.avg, 0.0);
}

#[test]
fn attributes_missing_labels_are_skipped_and_empty_attrs_undefined() {
    let probs = vec![
        Array2::from_shape_vec((2, 2), vec![0.9, 0.1, 0.1, 0.9]).unwrap(),
        Array2::from_shape_vec((2, 2), vec![0.9, 0.1, 0.1, 0.9]).unwrap(),
    ];
    let labels = vec![vec![Some(0), None], vec![None, None]];
    let m = attribute_eval(&probs, &labels);
    assert_eq!(m.per_attr[0], Some(1.0));
    assert_eq!(m.per_attr[1], None);
    assert_eq!(m.avg, 1.0);
}

#[test]
fn attributes_match_loop_oracle_on_random_instances() {
    let mut rng = seeded(41);
    for trial in 0..200 {
        let attrs = rng.gen_range(1..=5);
        let n = rng.gen_range(1..=10);
        let mut probs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..attrs {
            let classes = rng.gen_range(2..=5);
            // Quantized probabilities force argmax ties.
            let mut p = Array2::from_shape_fn((n, classes), |_| {
                (rng.gen_range(0.0..1.0f64) * 4.0).round() / 4.0 + 0.05
            });
            for mut row in p.rows_mut() {
                let s: f64 = row.iter().sum();
                row.mapv_inplace(|v| v / s);
            }
            probs.push(p);
            labels.push(
                (0..n)
                    .map(|_| (rng.gen_range(0..10) < 8).then(|| rng.gen_range(0..classes)))
                    .collect::<Vec<_>>(),
            );
        }
        let m = attribute_eval(&probs, &labels);
        let (per, avg) = attr_oracle(&probs, &labels);
        assert!((m.avg - avg).abs() < EXACT, "trial {trial}: avg");
        for (a, b) in m.per_attr.iter().zip(&per) {
            match (a, b) {
                (Some(x), Some(y)) => assert!((x - y).abs() < EXACT, "trial {trial}"),
                (None, None) => {}
                _ => panic!("trial {trial}: defined-ness mismatch"),
            }
        }
    }
}

#[test]
fn metric_report_averages_match_their_parts() {
    // MetricReport's flat() view must expose values consistent with the
    // structured report.
    let mut rng = seeded(51);
    let (q, qpid, qcam, g, gpid, gcam) = random_retrieval(&mut rng, 6, 30);
    let reid = reid_eval(&rs(q, qpid, qcam, g, gpid, gcam)).unwrap();
    let report = person_mtl::metrics::MetricReport {
        reid: Some(reid.clone()),
        pose: None,
        seg: None,
        attributes: None,
    };
    let flat = report.flat();
    let lookup = |k: &str| flat.iter().find(|(n, _)| n == k).map(|(_, v)| *v).unwrap();
    assert_eq!(lookup("reid.map"), reid.map);
    assert_eq!(lookup("reid.cmc1"), reid.cmc1);
    assert_eq!(report.lookup("reid.map"), Some(reid.map));
}

//! Network contracts: output shapes, topology arithmetic, normalization
//! behavior, head semantics, and routing isolation between tasks.

mod common;

use autograd::nn::BufferUpdate;
use autograd::{Arr, ParamStore, Tape};
use common::seeded;
use ndarray::{Array2, Array3, IxDyn};
use person_mtl::config::{BackboneConfig, NormKind, Topology};
use person_mtl::data::manifest::TaskFlags;
use person_mtl::error::ConfigError;
use person_mtl::heads::{embed_head, soft_argmax, Attribute, AttributeSchema, ClassifyHead};
use person_mtl::losses::{batch_hard_triplet, pose_l2, LossOutcome, MarginMode};
use person_mtl::model::{BranchAssignment, Model, ModelConfig, TaskSelect};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn tiny_backbone(topology: Topology) -> BackboneConfig {
    BackboneConfig {
        topology,
        stage_channels: vec![4, 8, 8],
        final_channels: 8,
        norm_kind: NormKind::GroupNorm,
        norm_groups: 4,
        num_branches: 1,
        split_channels: 0,
        input_height: 32,
        input_width: 16,
        total_stride: 8,
    }
}

fn tiny_model(topology: Topology) -> ModelConfig {
    let mut backbone = tiny_backbone(topology);
    if topology == Topology::SplitOutput {
        backbone.split_channels = 3;
    }
    ModelConfig {
        backbone,
        tasks: TaskFlags {
            reid: true,
            attributes: true,
            pose: true,
            segmentation: true,
        },
        num_joints: 3,
        pose_temperature: 1.0,
        attribute_schema: AttributeSchema(vec![
            Attribute {
                name: "color".into(),
                classes: 2,
            },
            Attribute {
                name: "build".into(),
                classes: 3,
            },
        ]),
        num_persons: 4,
        seg_classes: 3,
        seg_mid_channels: 16,
        head_norm: None,
        branches: BranchAssignment::default(),
    }
}

fn random_images(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize) -> Arr {
    let len = n * 3 * h * w;
    let v: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Arr::from_shape_vec(IxDyn(&[n, 3, h, w]), v).unwrap()
}

struct Built {
    model: Model,
    store: ParamStore,
}

fn build(config: &ModelConfig, seed: u64) -> Built {
    let mut store = ParamStore::new();
    let model = Model::register(&mut store, config, seed).expect("valid config");
    Built { model, store }
}

fn forward(
    built: &Built,
    tape: &mut Tape,
    images: &Arr,
    train: bool,
    select: TaskSelect,
) -> (person_mtl::model::ForwardOutputs, Vec<BufferUpdate>) {
    let x = tape.constant(images.clone());
    let mut updates = Vec::new();
    let out = built
        .model
        .forward(tape, &built.store, x, train, select, &mut updates);
    (out, updates)
}

fn select_all() -> TaskSelect {
    TaskSelect {
        reid: true,
        attributes: true,
        pose: true,
        segmentation: true,
    }
}

// ---------------------------------------------------------------------------
// Shapes and finiteness
// ---------------------------------------------------------------------------

#[test]
fn forward_respects_the_spatial_contract() {
    let config = tiny_model(Topology::SingleBranch);
    let built = build(&config, 11);
    let mut rng = seeded(0x5d01);
    let images = random_images(&mut rng, 2, 32, 16);
    let mut tape = Tape::new();
    let (out, _) = forward(&built, &mut tape, &images, true, select_all());

    // Stride 8 turns 32x16 into 4x2 everywhere behind the heads.
    assert_eq!(tape.value(out.features[0]).shape(), &[2, 8, 4, 2]);
    assert_eq!(tape.value(out.embedding.unwrap()).shape(), &[2, 8]);
    assert_eq!(tape.value(out.person_probs.unwrap()).shape(), &[2, 4]);
    let attrs = out.attribute_probs.unwrap();
    assert_eq!(tape.value(attrs[0]).shape(), &[2, 2]);
    assert_eq!(tape.value(attrs[1]).shape(), &[2, 3]);
    assert_eq!(tape.value(out.pose_heatmaps.unwrap()).shape(), &[2, 3, 4, 2]);
    assert_eq!(tape.value(out.pose_coords.unwrap()).shape(), &[2, 3, 2]);
    // Segmentation is the one head that restores full input resolution.
    assert_eq!(tape.value(out.seg_logits.unwrap()).shape(), &[2, 3, 32, 16]);
}

#[test]
fn forward_scales_to_larger_inputs() {
    let mut config = ModelConfig::desk_default();
    config.backbone.input_height = 256;
    config.backbone.input_width = 128;
    let built = build(&config, 3);
    let mut rng = seeded(0x5d02);
    let images = random_images(&mut rng, 1, 256, 128);
    let mut tape = Tape::new();
    let (out, _) = forward(&built, &mut tape, &images, false, select_all());
    assert_eq!(tape.value(out.features[0]).shape(), &[1, 48, 16, 8]);
    assert_eq!(tape.value(out.seg_logits.unwrap()).shape(), &[1, 5, 256, 128]);
    assert_eq!(tape.value(out.pose_coords.unwrap()).shape(), &[1, 14, 2]);
}

#[test]
fn forward_stays_finite_on_zero_and_random_images() {
    let config = tiny_model(Topology::SingleBranch);
    let built = build(&config, 5);
    let mut rng = seeded(0x5d03);
    for images in [
        Arr::zeros(IxDyn(&[2, 3, 32, 16])),
        random_images(&mut rng, 2, 32, 16),
    ] {
        let mut tape = Tape::new();
        let (out, _) = forward(&built, &mut tape, &images, true, select_all());
        let nodes = [
            out.embedding.unwrap(),
            out.person_probs.unwrap(),
            out.pose_coords.unwrap(),
            out.seg_logits.unwrap(),
        ];
        for node in nodes {
            assert!(
                tape.value(node).iter().all(|v| v.is_finite()),
                "non-finite output"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Normalization
// ---------------------------------------------------------------------------

/// Embedding of sample 0, once alone and once inside a batch of four.
fn solo_vs_batched(norm: NormKind, train: bool) -> (Vec<f64>, Vec<f64>) {
    let mut config = tiny_model(Topology::SingleBranch);
    config.backbone.norm_kind = norm;
    let built = build(&config, 21);
    let mut rng = seeded(0x5d04);
    let batch = random_images(&mut rng, 4, 32, 16);
    let solo = batch
        .slice(ndarray::s![0..1, .., .., ..])
        .to_owned()
        .into_dyn();

    let select = TaskSelect {
        reid: true,
        ..TaskSelect::default()
    };
    let mut tape = Tape::new();
    let (out, _) = forward(&built, &mut tape, &batch, train, select);
    let of_batch: Vec<f64> = tape
        .value(out.embedding.unwrap())
        .index_axis(ndarray::Axis(0), 0)
        .iter()
        .copied()
        .collect();

    let mut tape = Tape::new();
    let (out, _) = forward(&built, &mut tape, &solo, train, select);
    let of_solo: Vec<f64> = tape
        .value(out.embedding.unwrap())
        .index_axis(ndarray::Axis(0), 0)
        .iter()
        .copied()
        .collect();
    (of_solo, of_batch)
}

fn linf(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[test]
fn group_norm_outputs_do_not_depend_on_batch_composition() {
    for train in [true, false] {
        let (solo, batched) = solo_vs_batched(NormKind::GroupNorm, train);
        let d = linf(&solo, &batched);
        assert!(d <= 1e-5, "train={train}: batch leaked into the sample: {d:e}");
    }
}

#[test]
fn batch_norm_couples_samples_only_in_train_mode() {
    let (solo, batched) = solo_vs_batched(NormKind::BatchNorm, true);
    let d = linf(&solo, &batched);
    assert!(
        d > 1e-3,
        "train-mode batch statistics should move the output, got {d:e}"
    );

    // Eval mode reads frozen running statistics, restoring independence.
    let (solo, batched) = solo_vs_batched(NormKind::BatchNorm, false);
    let d = linf(&solo, &batched);
    assert!(d <= 1e-12, "eval mode must be batch independent, got {d:e}");
}

// ---------------------------------------------------------------------------
// Topology arithmetic
// ---------------------------------------------------------------------------

#[test]
fn one_branch_multibranch_is_as_large_as_single_branch() {
    let single = build(&tiny_model(Topology::SingleBranch), 7);
    let mut config = tiny_model(Topology::MultiBranch);
    config.backbone.num_branches = 1;
    let multi = build(&config, 7);
    assert_eq!(
        single.store.count_trainable(""),
        multi.store.count_trainable("")
    );
}

#[test]
fn each_extra_branch_adds_exactly_one_final_stage() {
    let single = build(&tiny_model(Topology::SingleBranch), 7);
    let mut config = tiny_model(Topology::MultiBranch);
    config.backbone.num_branches = 4;
    let multi = build(&config, 7);
    let per_branch = multi.model.backbone.final_stage_param_count(&multi.store);
    assert!(per_branch > 0);
    assert_eq!(
        multi.store.count_trainable(""),
        single.store.count_trainable("") + 3 * per_branch
    );
}

#[test]
fn branches_with_equal_weights_produce_equal_maps() {
    let mut config = tiny_model(Topology::MultiBranch);
    config.backbone.num_branches = 3;
    config.branches = BranchAssignment {
        reid: 0,
        attributes: 1,
        pose: 2,
        segmentation: 0,
    };
    let mut built = build(&config, 13);

    // Overwrite every branch's final stage with branch 0's parameters.
    let donors: Vec<String> = built
        .store
        .names()
        .filter(|n| n.starts_with("backbone.final0."))
        .cloned()
        .collect();
    for name in donors {
        let value = built.store.get(&name).clone();
        for b in 1..3 {
            let target = name.replace("backbone.final0.", &format!("backbone.final{b}."));
            built.store.get_mut(&target).assign(&value);
        }
    }

    let mut rng = seeded(0x5d05);
    let images = random_images(&mut rng, 2, 32, 16);
    let mut tape = Tape::new();
    let (out, _) = forward(&built, &mut tape, &images, false, select_all());
    assert_eq!(out.features.len(), 3);
    let base = tape.value(out.features[0]).clone();
    for b in 1..3 {
        assert_eq!(
            &base,
            tape.value(out.features[b]),
            "branch {b} diverged despite identical weights"
        );
    }
}

#[test]
fn channel_split_reassembles_to_the_original_map() {
    let mut rng = seeded(0x5d06);
    let x = Arr::from_shape_vec(
        IxDyn(&[2, 8, 4, 3]),
        (0..2 * 8 * 4 * 3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
    )
    .unwrap();
    let mut tape = Tape::new();
    let node = tape.leaf(x.clone());
    let lo = tape.slice_channels(node, 0, 3);
    let hi = tape.slice_channels(node, 3, 8);
    let back = tape.concat_channels(&[lo, hi]);
    assert_eq!(tape.value(back), &x);
}

#[test]
fn split_output_isolates_pose_from_the_shared_slice() {
    let config = tiny_model(Topology::SplitOutput);
    let built = build(&config, 17);
    let mut rng = seeded(0x5d07);
    let images = random_images(&mut rng, 4, 32, 16);
    let split = config.backbone.split_channels;
    let channels = config.backbone.final_channels;

    // Pose supervision must not touch the shared slice (channels J..C).
    let mut tape = Tape::new();
    let (out, _) = forward(
        &built,
        &mut tape,
        &images,
        true,
        TaskSelect {
            pose: true,
            ..TaskSelect::default()
        },
    );
    let gt = Array3::from_shape_fn((4, 3, 2), |_| rng.gen_range(0.0..16.0));
    let visible = Array2::from_elem((4, 3), true);
    let loss = match pose_l2(&mut tape, out.pose_coords.unwrap(), &gt, &visible, 35.8) {
        LossOutcome::Value(v) => v,
        LossOutcome::Empty => unreachable!(),
    };
    let grads = tape.backward(loss);
    let g = grads.wrt_or_zeros(out.features[0], &tape);
    let mut pose_slice_energy = 0.0;
    for n in 0..4 {
        for c in 0..channels {
            for y in 0..4 {
                for x in 0..2 {
                    let v = g[[n, c, y, x]];
                    if c < split {
                        pose_slice_energy += v.abs();
                    } else {
                        assert_eq!(v, 0.0, "pose loss leaked into shared channel {c}");
                    }
                }
            }
        }
    }
    assert!(pose_slice_energy > 0.0, "pose loss never reached its own slice");

    // And retrieval supervision must not touch the pose slice.
    let mut tape = Tape::new();
    let (out, _) = forward(
        &built,
        &mut tape,
        &images,
        true,
        TaskSelect {
            reid: true,
            ..TaskSelect::default()
        },
    );
    let loss = batch_hard_triplet(
        &mut tape,
        out.embedding.unwrap(),
        &[1, 1, 2, 2],
        MarginMode::SoftPlus,
    )
    .unwrap();
    let grads = tape.backward(loss);
    let g = grads.wrt_or_zeros(out.features[0], &tape);
    let mut shared_energy = 0.0;
    for n in 0..4 {
        for c in 0..channels {
            for y in 0..4 {
                for x in 0..2 {
                    let v = g[[n, c, y, x]];
                    if c < split {
                        assert_eq!(v, 0.0, "retrieval loss leaked into pose channel {c}");
                    } else {
                        shared_energy += v.abs();
                    }
                }
            }
        }
    }
    assert!(shared_energy > 0.0, "retrieval loss never reached the shared slice");
}

#[test]
fn split_output_narrows_the_embedding() {
    let config = tiny_model(Topology::SplitOutput);
    assert_eq!(config.embed_dim(), 5);
    let built = build(&config, 19);
    let mut rng = seeded(0x5d08);
    let images = random_images(&mut rng, 2, 32, 16);
    let mut tape = Tape::new();
    let (out, _) = forward(&built, &mut tape, &images, false, select_all());
    assert_eq!(tape.value(out.embedding.unwrap()).shape(), &[2, 5]);
    // The pose slice is the heatmap stack itself: one channel per joint.
    assert_eq!(tape.value(out.pose_heatmaps.unwrap()).shape(), &[2, 3, 4, 2]);
}

// ---------------------------------------------------------------------------
// Configuration validation
// ---------------------------------------------------------------------------

fn expect_field(err: ConfigError, want: &str) {
    let ConfigError::InvalidField { field, .. } = err;
    assert_eq!(field, want);
}

#[test]
fn invalid_configurations_name_the_offending_field() {
    let mut c = tiny_model(Topology::SingleBranch);
    c.backbone.stage_channels.clear();
    expect_field(c.validate().unwrap_err(), "stage_channels");

    let mut c = tiny_model(Topology::SingleBranch);
    c.backbone.norm_groups = 3;
    expect_field(c.validate().unwrap_err(), "norm_groups");

    let mut c = tiny_model(Topology::SingleBranch);
    c.backbone.total_stride = 16;
    expect_field(c.validate().unwrap_err(), "total_stride");

    let mut c = tiny_model(Topology::SingleBranch);
    c.backbone.input_height = 30;
    expect_field(c.validate().unwrap_err(), "input_height");

    let mut c = tiny_model(Topology::MultiBranch);
    c.backbone.num_branches = 0;
    expect_field(c.validate().unwrap_err(), "num_branches");

    let mut c = tiny_model(Topology::SingleBranch);
    c.tasks = TaskFlags::default();
    expect_field(c.validate().unwrap_err(), "tasks");

    let mut c = tiny_model(Topology::SingleBranch);
    c.num_persons = 1;
    expect_field(c.validate().unwrap_err(), "num_persons");

    let mut c = tiny_model(Topology::SingleBranch);
    c.num_joints = 0;
    expect_field(c.validate().unwrap_err(), "num_joints");

    let mut c = tiny_model(Topology::SingleBranch);
    c.pose_temperature = 0.0;
    expect_field(c.validate().unwrap_err(), "pose_temperature");

    let mut c = tiny_model(Topology::SingleBranch);
    c.attribute_schema = AttributeSchema::default();
    expect_field(c.validate().unwrap_err(), "attribute_schema");

    let mut c = tiny_model(Topology::SingleBranch);
    c.seg_classes = 1;
    expect_field(c.validate().unwrap_err(), "seg_classes");

    let mut c = tiny_model(Topology::SplitOutput);
    c.tasks.pose = false;
    expect_field(c.validate().unwrap_err(), "topology");

    let mut c = tiny_model(Topology::SplitOutput);
    c.backbone.split_channels = 2; // three joints
    expect_field(c.validate().unwrap_err(), "split_channels");

    let mut c = tiny_model(Topology::MultiBranch);
    c.backbone.num_branches = 2;
    c.branches.pose = 2;
    expect_field(c.validate().unwrap_err(), "branches.pose");
}

#[test]
fn size_report_matches_a_hand_count() {
    let built = build(&tiny_model(Topology::SingleBranch), 29);
    let report = built.model.size_report(&built.store);

    // Convolutions count cout*cin*k*k (+cout with bias); norms 2 gamma/beta
    // vectors. Stages 3->4->8->8, final 8->8->8, heads as registered.
    let backbone = (4 * 3 * 9 + 8) + (8 * 4 * 9 + 16) + (8 * 8 * 9 + 16) // stages
        + (8 * 8 * 9 + 16) + (8 * 8 * 9 + 16); // final conv1/conv2
    let person = (8 + 8) + (4 * 8 + 4);
    let attr = (8 + 8) + (2 * 8 + 2) + (3 * 8 + 3);
    let pose = 3 * 8 + 3;
    let seg = (16 * 4 * 9 + 32) + (16 * 8 * 9 + 32) + (16 * 8 * 9 + 32) + (3 * 16 + 3);
    assert_eq!(
        report.trainable_params,
        backbone + person + attr + pose + seg
    );

    // Activations: the input plane, one map per stage, two final-stage maps.
    let acts = 3 * 32 * 16 + 4 * 16 * 8 + 8 * 8 * 4 + 8 * 4 * 2 + 2 * 8 * 4 * 2;
    assert_eq!(report.activations_per_sample, acts);
}

// ---------------------------------------------------------------------------
// Head semantics
// ---------------------------------------------------------------------------

#[test]
fn embedding_is_the_per_channel_spatial_max() {
    let mut rng = seeded(0x5d09);
    let x = Arr::from_shape_vec(
        IxDyn(&[2, 5, 3, 4]),
        (0..2 * 5 * 3 * 4).map(|_| rng.gen_range(-3.0..3.0)).collect(),
    )
    .unwrap();
    let mut tape = Tape::new();
    let node = tape.leaf(x.clone());
    let emb = embed_head(&mut tape, node);
    let got = tape.value(emb);
    for n in 0..2 {
        for c in 0..5 {
            let mut best = f64::NEG_INFINITY;
            for y in 0..3 {
                for xx in 0..4 {
                    best = best.max(x[[n, c, y, xx]]);
                }
            }
            assert_eq!(got[[n, c]], best);
        }
    }

    // A constant map pools to the constant; a spike dominates it.
    let mut flat = Arr::from_elem(IxDyn(&[1, 2, 3, 3]), 0.25);
    flat[[0, 1, 2, 2]] = 9.0;
    let mut tape = Tape::new();
    let node = tape.leaf(flat);
    let emb = embed_head(&mut tape, node);
    assert_eq!(tape.value(emb)[[0, 0]], 0.25);
    assert_eq!(tape.value(emb)[[0, 1]], 9.0);
}

#[test]
fn zeroed_classifier_weights_predict_uniformly() {
    let mut store = ParamStore::new();
    let mut rng = seeded(0x5d0a);
    let head = ClassifyHead::register(&mut store, "head.person", 8, 5, NormKind::GroupNorm, &mut rng);
    store.get_mut("head.person.fc.weight").fill(0.0);
    store.get_mut("head.person.fc.bias").fill(0.0);

    let mut tape = Tape::new();
    let emb = tape.leaf(Arr::from_shape_vec(
        IxDyn(&[3, 8]),
        (0..24).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap());
    let mut updates = Vec::new();
    let probs = head.apply(&mut tape, &store, emb, false, &mut updates);
    for &p in tape.value(probs).iter() {
        assert!((p - 0.2).abs() < 1e-12, "expected uniform 1/5, got {p}");
    }
}

#[test]
fn probability_rows_are_positive_and_normalized() {
    let built = build(&tiny_model(Topology::SingleBranch), 31);
    let mut rng = seeded(0x5d0b);
    let images = random_images(&mut rng, 3, 32, 16);
    let mut tape = Tape::new();
    let (out, _) = forward(&built, &mut tape, &images, true, select_all());
    let mut heads = vec![out.person_probs.unwrap()];
    heads.extend(out.attribute_probs.unwrap());
    for node in heads {
        let m = tape.value(node);
        let rows = m.shape()[0];
        let cols = m.shape()[1];
        for r in 0..rows {
            let mut sum = 0.0;
            for c in 0..cols {
                let p = m[[r, c]];
                assert!(p > 0.0, "softmax output must be strictly positive");
                sum += p;
            }
            assert!((sum - 1.0).abs() < 1e-6, "row sums to {sum}");
        }
    }
}

#[test]
fn soft_argmax_locks_onto_a_dominant_spike() {
    let stride = 8;
    let mut maps = Arr::zeros(IxDyn(&[1, 2, 4, 3]));
    maps[[0, 0, 2, 1]] = 50.0;
    maps[[0, 1, 0, 0]] = 50.0;
    let mut tape = Tape::new();
    let node = tape.leaf(maps);
    let coords = tape_coords(&mut tape, node, 1.0, stride);
    let tol = 0.01 * stride as f64;
    assert!((coords[[0, 0, 0]] - 12.0).abs() < tol, "x {}", coords[[0, 0, 0]]);
    assert!((coords[[0, 0, 1]] - 20.0).abs() < tol, "y {}", coords[[0, 0, 1]]);
    assert!((coords[[0, 1, 0]] - 4.0).abs() < tol);
    assert!((coords[[0, 1, 1]] - 4.0).abs() < tol);
}

fn tape_coords(tape: &mut Tape, node: autograd::NodeId, temperature: f64, stride: usize) -> Arr {
    let coords = soft_argmax(tape, node, temperature, stride);
    tape.value(coords).clone()
}

#[test]
fn soft_argmax_of_a_flat_map_is_the_image_center() {
    let stride = 8;
    let maps = Arr::from_elem(IxDyn(&[1, 1, 4, 3]), 0.7);
    let mut tape = Tape::new();
    let node = tape.leaf(maps);
    let coords = tape_coords(&mut tape, node, 1.0, stride);
    // Image is (4*8) x (3*8) = 32 x 24; the center is (12, 16) as (x, y).
    assert!((coords[[0, 0, 0]] - 12.0).abs() < 1e-9);
    assert!((coords[[0, 0, 1]] - 16.0).abs() < 1e-9);
}

#[test]
fn soft_argmax_matches_the_expectation_oracle() {
    let mut rng = seeded(0x5d0c);
    let (h, w, stride, temperature) = (4, 4, 16, 1.7);
    for _ in 0..50 {
        let maps = Arr::from_shape_vec(
            IxDyn(&[2, 3, h, w]),
            (0..2 * 3 * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let node = tape.leaf(maps.clone());
        let coords = tape_coords(&mut tape, node, temperature, stride);
        for n in 0..2 {
            for j in 0..3 {
                let mut z = 0.0;
                for r in 0..h {
                    for c in 0..w {
                        z += (temperature * maps[[n, j, r, c]]).exp();
                    }
                }
                let (mut ex, mut ey) = (0.0, 0.0);
                for r in 0..h {
                    for c in 0..w {
                        let p = (temperature * maps[[n, j, r, c]]).exp() / z;
                        ex += p * (c as f64 + 0.5) * stride as f64;
                        ey += p * (r as f64 + 0.5) * stride as f64;
                    }
                }
                assert!((coords[[n, j, 0]] - ex).abs() < 1e-9);
                assert!((coords[[n, j, 1]] - ey).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn soft_argmax_never_leaves_the_image() {
    let mut rng = seeded(0x5d0d);
    let (h, w, stride) = (4, 2, 8);
    for _ in 0..100 {
        let maps = Arr::from_shape_vec(
            IxDyn(&[1, 2, h, w]),
            (0..2 * h * w).map(|_| rng.gen_range(-100.0..100.0)).collect(),
        )
        .unwrap();
        let mut tape = Tape::new();
        let node = tape.leaf(maps);
        let coords = tape_coords(&mut tape, node, 1.0, stride);
        for j in 0..2 {
            let x = coords[[0, j, 0]];
            let y = coords[[0, j, 1]];
            assert!(x > 0.0 && x < (w * stride) as f64, "x {x} escaped");
            assert!(y > 0.0 && y < (h * stride) as f64, "y {y} escaped");
        }
    }
}

#[test]
fn every_pyramid_level_feeds_the_segmentation() {
    let config = tiny_model(Topology::SingleBranch);
    let mut built = build(&config, 37);
    let mut rng = seeded(0x5d0e);
    let images = random_images(&mut rng, 1, 32, 16);

    let mut tape = Tape::new();
    let (out, _) = forward(&built, &mut tape, &images, false, select_all());
    let before = tape.value(out.seg_logits.unwrap()).clone();

    for level in 0..3 {
        let name = format!("head.seg.lateral{level}.conv.weight");
        let saved = built.store.get(&name).clone();
        built.store.get_mut(&name).fill(0.0);
        let mut tape = Tape::new();
        let (out, _) = forward(&built, &mut tape, &images, false, select_all());
        let after = tape.value(out.seg_logits.unwrap()).clone();
        let diff = (&before - &after).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(diff > 0.0, "silencing pyramid level {level} changed nothing");
        built.store.get_mut(&name).assign(&saved);
    }
}

#[test]
fn attribute_heads_do_not_share_gradients() {
    let config = tiny_model(Topology::SingleBranch);
    let mut built = build(&config, 41);
    let mut rng = seeded(0x5d0f);
    let images = random_images(&mut rng, 2, 32, 16);

    let mut tape = Tape::new();
    let (out, _) = forward(
        &built,
        &mut tape,
        &images,
        true,
        TaskSelect {
            attributes: true,
            ..TaskSelect::default()
        },
    );
    // Supervise only attribute 1; attribute 0 has no labels at all.
    let labels = vec![vec![None, None], vec![Some(1), Some(2)]];
    let outcome =
        person_mtl::losses::attribute_ce(&mut tape, &out.attribute_probs.unwrap(), &labels)
            .unwrap();
    let loss = match outcome {
        LossOutcome::Value(v) => v,
        LossOutcome::Empty => unreachable!(),
    };
    let grads = tape.backward(loss);
    grads.accumulate_into(&tape, &mut built.store);

    let idle = built.store.grad("head.attr.fc0.weight");
    assert!(idle.iter().all(|&g| g == 0.0), "unsupervised head received gradient");
    let busy = built.store.grad("head.attr.fc1.weight");
    assert!(busy.iter().any(|&g| g != 0.0), "supervised head received none");
}

#[test]
fn a_multi_task_model_embeds_like_its_single_task_twin() {
    let config = tiny_model(Topology::SingleBranch);
    let full = build(&config, 43);

    let mut solo_config = config.clone();
    solo_config.tasks = TaskFlags {
        reid: true,
        attributes: false,
        pose: false,
        segmentation: false,
    };
    let mut solo = build(&solo_config, 57);
    solo.store
        .copy_scoped(&full.store, &["backbone".into(), "head.person".into()])
        .expect("shared scopes line up");

    let mut rng = seeded(0x5d10);
    let images = random_images(&mut rng, 3, 32, 16);
    let select = TaskSelect {
        reid: true,
        ..TaskSelect::default()
    };
    let mut tape_a = Tape::new();
    let (out_a, _) = forward(&full, &mut tape_a, &images, false, select);
    let mut tape_b = Tape::new();
    let (out_b, _) = forward(&solo, &mut tape_b, &images, false, select);

    assert_eq!(
        tape_a.value(out_a.embedding.unwrap()),
        tape_b.value(out_b.embedding.unwrap()),
        "extra heads must not perturb the shared trunk"
    );
    assert_eq!(
        tape_a.value(out_a.person_probs.unwrap()),
        tape_b.value(out_b.person_probs.unwrap())
    );
}

#[test]
fn deselected_tasks_build_no_outputs() {
    let config = tiny_model(Topology::SingleBranch);
    let built = build(&config, 47);
    let mut rng = seeded(0x5d11);
    let images = random_images(&mut rng, 1, 32, 16);
    let mut tape = Tape::new();
    let (out, _) = forward(
        &built,
        &mut tape,
        &images,
        true,
        TaskSelect {
            pose: true,
            ..TaskSelect::default()
        },
    );
    assert!(out.embedding.is_none());
    assert!(out.person_probs.is_none());
    assert!(out.attribute_probs.is_none());
    assert!(out.seg_logits.is_none());
    assert!(out.pose_coords.is_some());
}

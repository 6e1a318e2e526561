//! Task heads.
//!
//! Every head reads a backbone feature map (or the pooled embedding derived
//! from one) and is attachable to any branch of any topology. The assembled
//! model registers them under `head.<name>.*` scopes.

use autograd::nn::{BufferUpdate, Conv2d, Linear, Norm, NormOp};
use autograd::{Arr, NodeId, ParamStore, Tape};
use ndarray::IxDyn;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::NormKind;

/// One named categorical attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub classes: usize,
}

/// Ordered attribute list; names must be unique, class counts >= 2.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSchema(pub Vec<Attribute>);

impl AttributeSchema {
    pub fn validate(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for a in &self.0 {
            if a.classes < 2 {
                return Err(format!("attribute `{}` needs >= 2 classes, has {}", a.name, a.classes));
            }
            if !seen.insert(&a.name) {
                return Err(format!("duplicate attribute name `{}`", a.name));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Heads normalize over the embedding vector; with a GroupNorm backbone this
/// uses a single group (full-vector statistics) so any embedding width is
/// admissible, and with BatchNorm it is the usual per-feature batch variant.
fn head_norm_op(kind: NormKind) -> NormOp {
    match kind {
        NormKind::GroupNorm => NormOp::Group { groups: 1 },
        NormKind::BatchNorm => NormOp::Batch,
    }
}

/// Global max pool over spatial positions: (N, C, h, w) -> (N, C).
/// Parameter-free; this *is* the embedding used for retrieval.
pub fn embed_head(tape: &mut Tape, fm: NodeId) -> NodeId {
    tape.global_max_pool(fm)
}

/// Differentiable soft-argmax: spatial softmax of each heatmap, then the
/// expectation of cell-center coordinates mapped to input pixels as
/// `(cell_index + 0.5) * stride`, x rightward and y downward.
///
/// Input (N, J, h, w), output (N, J, 2) as (x, y) pixel pairs. Being a
/// convex combination of cell centers, outputs always lie inside the image.
pub fn soft_argmax(tape: &mut Tape, heatmaps: NodeId, temperature: f64, stride: usize) -> NodeId {
    let shape: Vec<usize> = tape.value(heatmaps).shape().to_vec();
    assert_eq!(shape.len(), 4, "soft_argmax expects (N, J, h, w)");
    let (n, j, h, w) = (shape[0], shape[1], shape[2], shape[3]);

    let flat = tape.reshape(heatmaps, &[n * j, h * w]);
    let scaled = tape.scale(flat, temperature);
    let probs = tape.softmax(scaled, 1);

    let mut grid = Vec::with_capacity(h * w * 2);
    for r in 0..h {
        for c in 0..w {
            grid.push((c as f64 + 0.5) * stride as f64); // x
            grid.push((r as f64 + 0.5) * stride as f64); // y
        }
    }
    let grid = tape.constant(Arr::from_shape_vec(IxDyn(&[h * w, 2]), grid).unwrap());
    let coords = tape.matmul(probs, grid);
    tape.reshape(coords, &[n, j, 2])
}

/// Person-identity classifier: normalization -> affine -> softmax.
#[derive(Debug, Clone)]
pub struct ClassifyHead {
    norm: Norm,
    fc: Linear,
    pub num_persons: usize,
}

impl ClassifyHead {
    pub fn register(
        store: &mut ParamStore,
        scope: &str,
        in_dim: usize,
        num_persons: usize,
        norm_kind: NormKind,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(num_persons >= 2, "classification needs >= 2 identities");
        Self {
            norm: Norm::register(store, &format!("{scope}.norm"), in_dim, head_norm_op(norm_kind)),
            fc: Linear::register(store, &format!("{scope}.fc"), in_dim, num_persons, rng),
            num_persons,
        }
    }

    /// emb (N, C) -> class probabilities (N, num_persons), rows summing to 1.
    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        emb: NodeId,
        train: bool,
        updates: &mut Vec<BufferUpdate>,
    ) -> NodeId {
        let shape: Vec<usize> = tape.value(emb).shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        let x = tape.reshape(emb, &[n, c, 1, 1]);
        let x = self.norm.apply(tape, store, x, train, updates);
        let x = tape.reshape(x, &[n, c]);
        let logits = self.fc.apply(tape, store, x);
        tape.softmax(logits, 1)
    }
}

/// Attribute classifier: shared normalization + ReLU stem, then one
/// independent affine + softmax per attribute.
#[derive(Debug, Clone)]
pub struct AttributeHead {
    norm: Norm,
    fcs: Vec<Linear>,
    pub schema: AttributeSchema,
}

impl AttributeHead {
    pub fn register(
        store: &mut ParamStore,
        scope: &str,
        in_dim: usize,
        schema: &AttributeSchema,
        norm_kind: NormKind,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        schema.validate().expect("invalid attribute schema");
        let norm = Norm::register(store, &format!("{scope}.norm"), in_dim, head_norm_op(norm_kind));
        let fcs = schema
            .0
            .iter()
            .enumerate()
            .map(|(i, a)| Linear::register(store, &format!("{scope}.fc{i}"), in_dim, a.classes, rng))
            .collect();
        Self {
            norm,
            fcs,
            schema: schema.clone(),
        }
    }

    /// emb (N, C) -> per-attribute probabilities, each (N, classes_i).
    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        emb: NodeId,
        train: bool,
        updates: &mut Vec<BufferUpdate>,
    ) -> Vec<NodeId> {
        let shape: Vec<usize> = tape.value(emb).shape().to_vec();
        let (n, c) = (shape[0], shape[1]);
        let x = tape.reshape(emb, &[n, c, 1, 1]);
        let x = self.norm.apply(tape, store, x, train, updates);
        let x = tape.relu(x);
        let x = tape.reshape(x, &[n, c]);
        self.fcs
            .iter()
            .map(|fc| {
                let logits = fc.apply(tape, store, x);
                tape.softmax(logits, 1)
            })
            .collect()
    }
}

/// Pose head: a 1x1 convolution produces one heatmap per joint, and
/// soft-argmax turns them into pixel coordinates. Under SplitOutput the
/// backbone's pose slice *is* the heatmap stack, so the convolution is
/// absent and soft-argmax applies directly.
#[derive(Debug, Clone)]
pub struct PoseHead {
    conv: Option<Conv2d>,
    pub joints: usize,
    pub temperature: f64,
    pub stride: usize,
}

impl PoseHead {
    pub fn register(
        store: &mut ParamStore,
        scope: &str,
        in_channels: usize,
        joints: usize,
        temperature: f64,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(joints >= 1, "need at least one joint");
        Self {
            conv: Some(Conv2d::register(store, &format!("{scope}.conv"), in_channels, joints, 1, 1, 0, true, rng)),
            joints,
            temperature,
            stride,
        }
    }

    /// Parameter-free variant for SplitOutput, where the input slice already
    /// has one channel per joint.
    pub fn direct(joints: usize, temperature: f64, stride: usize) -> Self {
        Self {
            conv: None,
            joints,
            temperature,
            stride,
        }
    }

    /// fm (N, C, h, w) -> (heatmaps (N, J, h, w), coords (N, J, 2) in pixels).
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, fm: NodeId) -> (NodeId, NodeId) {
        let heatmaps = match &self.conv {
            Some(conv) => conv.apply(tape, store, fm),
            None => {
                assert_eq!(
                    tape.value(fm).shape()[1],
                    self.joints,
                    "direct pose head needs exactly one channel per joint"
                );
                fm
            }
        };
        let coords = soft_argmax(tape, heatmaps, self.temperature, self.stride);
        (heatmaps, coords)
    }
}

/// Pyramid segmentation head.
///
/// Each backbone level (strides S/4, S/2, S) is laterally projected by a 3x3
/// convolution + norm + ReLU, upsampled to the stride-S/4 grid, and summed;
/// a 1x1 convolution maps the sum to class logits, and one fixed bilinear
/// upsampling restores full input resolution.
#[derive(Debug, Clone)]
pub struct SegHead {
    laterals: Vec<(Conv2d, Norm)>,
    out_conv: Conv2d,
    pub classes: usize,
    /// Backbone total stride S; the summed map lives at stride S/4.
    pub total_stride: usize,
}

impl SegHead {
    pub fn register(
        store: &mut ParamStore,
        scope: &str,
        level_channels: &[usize; 3],
        mid_channels: usize,
        classes: usize,
        norm_kind: NormKind,
        norm_groups: usize,
        total_stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        assert!(total_stride % 4 == 0, "pyramid head needs total_stride divisible by 4");
        let op = match norm_kind {
            NormKind::GroupNorm => NormOp::Group {
                groups: if mid_channels % norm_groups == 0 { norm_groups } else { 1 },
            },
            NormKind::BatchNorm => NormOp::Batch,
        };
        let laterals = level_channels
            .iter()
            .enumerate()
            .map(|(i, &cin)| {
                (
                    Conv2d::register(store, &format!("{scope}.lateral{i}.conv"), cin, mid_channels, 3, 1, 1, false, rng),
                    Norm::register(store, &format!("{scope}.lateral{i}.norm"), mid_channels, op),
                )
            })
            .collect();
        let out_conv = Conv2d::register(store, &format!("{scope}.out"), mid_channels, classes, 1, 1, 0, true, rng);
        Self {
            laterals,
            out_conv,
            classes,
            total_stride,
        }
    }

    /// `levels` are feature maps at strides [S/4, S/2, S]; the result is
    /// class logits (N, P, H, W) at full input resolution.
    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        levels: &[NodeId; 3],
        train: bool,
        updates: &mut Vec<BufferUpdate>,
    ) -> NodeId {
        let base_h = tape.value(levels[0]).shape()[2];
        let base_w = tape.value(levels[0]).shape()[3];
        let mut sum: Option<NodeId> = None;
        for (i, ((conv, norm), &level)) in self.laterals.iter().zip(levels.iter()).enumerate() {
            let expect = (base_h >> i, base_w >> i);
            let got = (tape.value(level).shape()[2], tape.value(level).shape()[3]);
            assert_eq!(
                got, expect,
                "pyramid level {i} is {got:?} but its declared stride implies {expect:?}"
            );
            let mut y = conv.apply(tape, store, level);
            y = norm.apply(tape, store, y, train, updates);
            y = tape.relu(y);
            if i > 0 {
                y = tape.upsample_bilinear(y, 1 << i);
            }
            sum = Some(match sum {
                Some(s) => tape.add(s, y),
                None => y,
            });
        }
        let fused = sum.expect("pyramid has three levels");
        let logits = self.out_conv.apply(tape, store, fused);
        tape.upsample_bilinear(logits, self.total_stride / 4)
    }
}

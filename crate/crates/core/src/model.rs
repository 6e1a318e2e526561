//! The assembled network: backbone plus whichever task heads are enabled,
//! with topology-aware routing from branches to heads.

use autograd::nn::BufferUpdate;
use autograd::{NodeId, ParamStore, Tape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneOut};
use crate::config::{BackboneConfig, NormKind, Topology};
use crate::data::manifest::TaskFlags;
use crate::error::ConfigError;
use crate::heads::{
    embed_head, AttributeHead, AttributeSchema, ClassifyHead, PoseHead, SegHead,
};

/// Which branch each task reads from. Ignored (all zero) outside
/// MultiBranch.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BranchAssignment {
    #[serde(default)]
    pub reid: usize,
    #[serde(default)]
    pub attributes: usize,
    #[serde(default)]
    pub pose: usize,
    #[serde(default)]
    pub segmentation: usize,
}

impl BranchAssignment {
    /// One branch per enabled task, in declaration order.
    pub fn round_robin(tasks: &TaskFlags) -> Self {
        let mut next = 0usize;
        let mut take = |on: bool| {
            if on {
                let b = next;
                next += 1;
                b
            } else {
                0
            }
        };
        Self {
            reid: take(tasks.reid),
            attributes: take(tasks.attributes),
            pose: take(tasks.pose),
            segmentation: take(tasks.segmentation),
        }
    }
}

fn default_temperature() -> f64 {
    1.0
}
fn default_seg_mid() -> usize {
    16
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub tasks: TaskFlags,
    #[serde(default)]
    pub num_joints: usize,
    /// Softmax sharpness for the heatmap -> coordinate reduction.
    #[serde(default = "default_temperature")]
    pub pose_temperature: f64,
    #[serde(default)]
    pub attribute_schema: AttributeSchema,
    /// Distinct person labels for the classification head; 0 = filled in
    /// from the training data.
    #[serde(default)]
    pub num_persons: usize,
    #[serde(default)]
    pub seg_classes: usize,
    /// Channel width of the pyramid head's lateral projections.
    #[serde(default = "default_seg_mid")]
    pub seg_mid_channels: usize,
    /// Overrides the normalization used inside heads; defaults to the
    /// backbone's kind.
    #[serde(default)]
    pub head_norm: Option<NormKind>,
    #[serde(default)]
    pub branches: BranchAssignment,
}

impl ModelConfig {
    /// A small all-task configuration used by tests and examples.
    pub fn desk_default() -> Self {
        Self {
            backbone: BackboneConfig::desk_default(),
            tasks: TaskFlags {
                reid: true,
                attributes: true,
                pose: true,
                segmentation: true,
            },
            num_joints: 14,
            pose_temperature: 1.0,
            attribute_schema: crate::data::synth::attribute_schema(),
            num_persons: 32,
            seg_classes: 5,
            seg_mid_channels: 16,
            head_norm: None,
            branches: BranchAssignment::default(),
        }
    }

    pub fn head_norm_kind(&self) -> NormKind {
        self.head_norm.unwrap_or(self.backbone.norm_kind)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.backbone.validate()?;
        let t = &self.tasks;
        if !(t.reid || t.attributes || t.pose || t.segmentation) {
            return Err(ConfigError::InvalidField {
                field: "tasks".into(),
                reason: "at least one task must be enabled".into(),
            });
        }
        if t.reid && self.num_persons == 1 {
            return Err(ConfigError::InvalidField {
                field: "num_persons".into(),
                reason: "classification needs at least 2 persons (or 0 to infer from data)".into(),
            });
        }
        if t.pose {
            if self.num_joints == 0 {
                return Err(ConfigError::InvalidField {
                    field: "num_joints".into(),
                    reason: "pose task enabled but num_joints is 0".into(),
                });
            }
            if !(self.pose_temperature > 0.0) {
                return Err(ConfigError::InvalidField {
                    field: "pose_temperature".into(),
                    reason: "must be positive".into(),
                });
            }
        }
        if t.attributes && self.attribute_schema.is_empty() {
            return Err(ConfigError::InvalidField {
                field: "attribute_schema".into(),
                reason: "attribute task enabled but the schema is empty".into(),
            });
        }
        if t.segmentation {
            if self.seg_classes < 2 {
                return Err(ConfigError::InvalidField {
                    field: "seg_classes".into(),
                    reason: "segmentation needs at least 2 classes".into(),
                });
            }
            if self.backbone.stage_channels.len() < 3 {
                return Err(ConfigError::InvalidField {
                    field: "stage_channels".into(),
                    reason: "the pyramid head taps three strides and needs >= 3 stages".into(),
                });
            }
        }
        match self.backbone.topology {
            Topology::SplitOutput => {
                if !t.pose {
                    return Err(ConfigError::InvalidField {
                        field: "topology".into(),
                        reason: "split_output reserves channels for pose; enable the pose task"
                            .into(),
                    });
                }
                if self.backbone.split_channels != self.num_joints {
                    return Err(ConfigError::InvalidField {
                        field: "split_channels".into(),
                        reason: format!(
                            "split_output maps one channel per joint: split_channels={} but num_joints={}",
                            self.backbone.split_channels, self.num_joints
                        ),
                    });
                }
            }
            Topology::MultiBranch => {
                let k = self.backbone.num_branches;
                for (name, b, on) in [
                    ("reid", self.branches.reid, t.reid),
                    ("attributes", self.branches.attributes, t.attributes),
                    ("pose", self.branches.pose, t.pose),
                    ("segmentation", self.branches.segmentation, t.segmentation),
                ] {
                    if on && b >= k {
                        return Err(ConfigError::InvalidField {
                            field: format!("branches.{name}"),
                            reason: format!("branch {b} out of range for {k} branches"),
                        });
                    }
                }
            }
            Topology::SingleBranch => {}
        }
        Ok(())
    }

    /// Width of the shared feature vector that feeds the embedding,
    /// classification, and attribute heads.
    pub fn embed_dim(&self) -> usize {
        self.backbone.shared_channels()
    }
}

/// Per-batch selection of which heads to run; a dataset that lacks a task
/// never even builds that task's graph.
#[derive(Debug, Clone, Copy, Default)]
pub struct TaskSelect {
    pub reid: bool,
    pub attributes: bool,
    pub pose: bool,
    pub segmentation: bool,
}

impl TaskSelect {
    pub fn all(tasks: &TaskFlags) -> Self {
        Self {
            reid: tasks.reid,
            attributes: tasks.attributes,
            pose: tasks.pose,
            segmentation: tasks.segmentation,
        }
    }
}

/// Head outputs for one forward pass; absent when the head was not selected
/// or not part of the model.
#[derive(Debug, Default)]
pub struct ForwardOutputs {
    /// Per-branch backbone feature maps, before any channel split.
    pub features: Vec<NodeId>,
    /// (N, D) max-pooled embedding.
    pub embedding: Option<NodeId>,
    /// (N, num_persons) probabilities.
    pub person_probs: Option<NodeId>,
    /// One (N, classes_i) probability node per attribute.
    pub attribute_probs: Option<Vec<NodeId>>,
    /// (N, J, h, w) heatmaps.
    pub pose_heatmaps: Option<NodeId>,
    /// (N, J, 2) pixel coordinates.
    pub pose_coords: Option<NodeId>,
    /// (N, P, H, W) logits at input resolution.
    pub seg_logits: Option<NodeId>,
}

pub struct Model {
    pub config: ModelConfig,
    pub backbone: Backbone,
    classify: Option<ClassifyHead>,
    attributes: Option<AttributeHead>,
    pose: Option<PoseHead>,
    seg: Option<SegHead>,
}

impl Model {
    /// Validates the config and registers every parameter. Initialization
    /// is deterministic in `seed`.
    pub fn register(store: &mut ParamStore, config: &ModelConfig, seed: u64) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let backbone = Backbone::register(store, &config.backbone, &mut rng)?;
        let head_norm = config.head_norm_kind();
        let embed_dim = config.embed_dim();

        let classify = (config.tasks.reid && config.num_persons >= 2).then(|| {
            ClassifyHead::register(store, "head.person", embed_dim, config.num_persons, head_norm, &mut rng)
        });
        let attributes = config.tasks.attributes.then(|| {
            AttributeHead::register(store, "head.attr", embed_dim, &config.attribute_schema, head_norm, &mut rng)
        });
        let pose = config.tasks.pose.then(|| match config.backbone.topology {
            Topology::SplitOutput => PoseHead::direct(
                config.num_joints,
                config.pose_temperature,
                config.backbone.total_stride,
            ),
            _ => PoseHead::register(
                store,
                "head.pose",
                config.backbone.final_channels,
                config.num_joints,
                config.pose_temperature,
                config.backbone.total_stride,
                &mut rng,
            ),
        });
        let seg = config.tasks.segmentation.then(|| {
            let n_stages = config.backbone.stage_channels.len();
            let level_channels = [
                config.backbone.stage_channels[n_stages - 3],
                config.backbone.stage_channels[n_stages - 2],
                config.backbone.shared_channels(),
            ];
            SegHead::register(
                store,
                "head.seg",
                &level_channels,
                config.seg_mid_channels,
                config.seg_classes,
                head_norm,
                config.backbone.norm_groups,
                config.backbone.total_stride,
                &mut rng,
            )
        });

        Ok(Self {
            config: config.clone(),
            backbone,
            classify,
            attributes,
            pose,
            seg,
        })
    }

    /// The feature map feeding every head except pose: under SplitOutput
    /// this is the channel slice past the per-joint block, otherwise the
    /// branch output itself.
    fn shared_view(&self, tape: &mut Tape, branch: NodeId) -> NodeId {
        match self.config.backbone.topology {
            Topology::SplitOutput => {
                let c = self.config.backbone.final_channels;
                tape.slice_channels(branch, self.config.backbone.split_channels, c)
            }
            _ => branch,
        }
    }

    /// Runs the backbone plus the selected heads.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        images: NodeId,
        train: bool,
        select: TaskSelect,
        updates: &mut Vec<BufferUpdate>,
    ) -> ForwardOutputs {
        let BackboneOut { branches, taps } = self.backbone.forward(tape, store, images, train, updates);
        let branch_of = |b: usize| -> NodeId {
            match self.config.backbone.topology {
                Topology::MultiBranch => branches[b],
                _ => branches[0],
            }
        };
        let mut out = ForwardOutputs {
            features: branches.clone(),
            ..ForwardOutputs::default()
        };

        if select.reid && self.config.tasks.reid {
            let shared = self.shared_view(tape, branch_of(self.config.branches.reid));
            let emb = embed_head(tape, shared);
            out.embedding = Some(emb);
            if let Some(head) = &self.classify {
                out.person_probs = Some(head.apply(tape, store, emb, train, updates));
            }
        }
        if select.attributes {
            if let Some(head) = &self.attributes {
                let shared = self.shared_view(tape, branch_of(self.config.branches.attributes));
                let emb = embed_head(tape, shared);
                out.attribute_probs = Some(head.apply(tape, store, emb, train, updates));
            }
        }
        if select.pose {
            if let Some(head) = &self.pose {
                let fm = match self.config.backbone.topology {
                    Topology::SplitOutput => {
                        tape.slice_channels(branches[0], 0, self.config.backbone.split_channels)
                    }
                    _ => branch_of(self.config.branches.pose),
                };
                let (heatmaps, coords) = head.apply(tape, store, fm);
                out.pose_heatmaps = Some(heatmaps);
                out.pose_coords = Some(coords);
            }
        }
        if select.segmentation {
            if let Some(head) = &self.seg {
                let top = self.shared_view(tape, branch_of(self.config.branches.segmentation));
                let levels = [taps[0], taps[1], top];
                out.seg_logits = Some(head.apply(tape, store, &levels, train, updates));
            }
        }
        out
    }

    /// Trainable parameter count and a rough per-sample activation estimate
    /// (f64 values held by one forward pass), reported before training.
    pub fn size_report(&self, store: &ParamStore) -> SizeReport {
        let params = store.count_trainable("");
        let cfg = &self.config.backbone;
        let (mut h, mut w) = (cfg.input_height, cfg.input_width);
        let mut acts = 3 * h * w;
        for &c in &cfg.stage_channels {
            h /= 2;
            w /= 2;
            acts += c * h * w;
        }
        let branches = match cfg.topology {
            Topology::MultiBranch => cfg.num_branches,
            _ => 1,
        };
        acts += branches * 2 * cfg.final_channels * h * w;
        SizeReport {
            trainable_params: params,
            activations_per_sample: acts,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SizeReport {
    pub trainable_params: usize,
    pub activations_per_sample: usize,
}

//! The shared convolutional feature extractor.
//!
//! A backbone is a chain of stride-2 downsampling stages followed by one
//! stride-1 final stage that widens to `final_channels`, so the output grid
//! is `input / total_stride` in each spatial dimension. The three sharing
//! topologies differ only in what happens at the final stage:
//!
//! - `SingleBranch`: one final stage; every head reads the same map.
//! - `MultiBranch`: the final stage is duplicated per branch; earlier stages
//!   stay shared, so each branch adds exactly one final stage's parameters.
//! - `SplitOutput`: one final stage whose output channels are partitioned
//!   into a pose slice and a shared slice downstream (see the model module).

use autograd::nn::{BufferUpdate, Conv2d, Norm, NormOp};
use autograd::{NodeId, ParamStore, Tape};
use rand_chacha::ChaCha8Rng;

use crate::config::{BackboneConfig, NormKind, Topology};
use crate::error::ConfigError;

/// One stride-2 downsampling unit: 3x3 convolution, normalization, ReLU.
#[derive(Debug, Clone)]
struct Stage {
    conv: Conv2d,
    norm: Norm,
}

/// The stride-1 final stage: two 3x3 convolution/norm/ReLU units.
#[derive(Debug, Clone)]
struct FinalStage {
    conv1: Conv2d,
    norm1: Norm,
    conv2: Conv2d,
    norm2: Norm,
}

/// Outputs of one backbone forward pass.
pub struct BackboneOut {
    /// Final feature maps at stride `total_stride`: one entry for
    /// SingleBranch/SplitOutput, `num_branches` for MultiBranch.
    pub branches: Vec<NodeId>,
    /// Intermediate stage outputs at strides `total_stride/4` and
    /// `total_stride/2` (in that order), for the pyramid segmentation head.
    /// Empty when the backbone has fewer than three stages.
    pub taps: Vec<NodeId>,
}

#[derive(Debug, Clone)]
pub struct Backbone {
    pub config: BackboneConfig,
    stages: Vec<Stage>,
    finals: Vec<FinalStage>,
}

fn norm_op(cfg: &BackboneConfig) -> NormOp {
    match cfg.norm_kind {
        NormKind::GroupNorm => NormOp::Group {
            groups: cfg.norm_groups,
        },
        NormKind::BatchNorm => NormOp::Batch,
    }
}

impl Backbone {
    /// Validates the config and registers all parameters under `backbone.*`.
    pub fn register(
        store: &mut ParamStore,
        config: &BackboneConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let op = norm_op(config);

        let mut stages = Vec::new();
        let mut cin = 3;
        for (i, &cout) in config.stage_channels.iter().enumerate() {
            let scope = format!("backbone.stage{i}");
            let conv = Conv2d::register(store, &format!("{scope}.conv"), cin, cout, 3, 2, 1, false, rng);
            let norm = Norm::register(store, &format!("{scope}.norm"), cout, op);
            stages.push(Stage { conv, norm });
            cin = cout;
        }

        let num_finals = match config.topology {
            Topology::MultiBranch => config.num_branches,
            _ => 1,
        };
        let mut finals = Vec::new();
        for b in 0..num_finals {
            let scope = match config.topology {
                Topology::MultiBranch => format!("backbone.final{b}"),
                _ => "backbone.final".to_string(),
            };
            let c = config.final_channels;
            finals.push(FinalStage {
                conv1: Conv2d::register(store, &format!("{scope}.conv1"), cin, c, 3, 1, 1, false, rng),
                norm1: Norm::register(store, &format!("{scope}.norm1"), c, op),
                conv2: Conv2d::register(store, &format!("{scope}.conv2"), c, c, 3, 1, 1, false, rng),
                norm2: Norm::register(store, &format!("{scope}.norm2"), c, op),
            });
        }

        Ok(Self {
            config: config.clone(),
            stages,
            finals,
        })
    }

    /// Forward over a batch of images (N, 3, H, W), already normalized.
    /// Panics if the spatial size disagrees with the configuration.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        images: NodeId,
        train: bool,
        updates: &mut Vec<BufferUpdate>,
    ) -> BackboneOut {
        let shape: Vec<usize> = tape.value(images).shape().to_vec();
        assert_eq!(shape.len(), 4, "backbone expects an NCHW image batch");
        assert_eq!(
            (shape[2], shape[3]),
            (self.config.input_height, self.config.input_width),
            "image batch is {}x{} but the backbone is configured for {}x{}",
            shape[2],
            shape[3],
            self.config.input_height,
            self.config.input_width,
        );

        let num_stages = self.stages.len();
        let mut x = images;
        let mut taps = Vec::new();
        for (i, stage) in self.stages.iter().enumerate() {
            x = stage.conv.apply(tape, store, x);
            x = stage.norm.apply(tape, store, x, train, updates);
            x = tape.relu(x);
            // Stage i leaves stride 2^(i+1); the pyramid wants S/4 and S/2.
            if num_stages >= 3 && (i == num_stages - 3 || i == num_stages - 2) {
                taps.push(x);
            }
        }

        let mut branches = Vec::with_capacity(self.finals.len());
        for f in &self.finals {
            let mut y = f.conv1.apply(tape, store, x);
            y = f.norm1.apply(tape, store, y, train, updates);
            y = tape.relu(y);
            y = f.conv2.apply(tape, store, y);
            y = f.norm2.apply(tape, store, y, train, updates);
            y = tape.relu(y);
            branches.push(y);
        }

        BackboneOut { branches, taps }
    }

    /// Trainable scalars in one final stage (branch 0 for MultiBranch).
    pub fn final_stage_param_count(&self, store: &ParamStore) -> usize {
        let prefix = match self.config.topology {
            Topology::MultiBranch => "backbone.final0",
            _ => "backbone.final",
        };
        store.count_trainable(prefix)
    }
}

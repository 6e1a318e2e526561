//! Model configuration and validation.

use serde::{Deserialize, Serialize};

use crate::error::ConfigError;

/// Normalization family used throughout the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    GroupNorm,
    BatchNorm,
}

/// How the backbone is shared between tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// One backbone, every head attached to the same feature map.
    SingleBranch,
    /// Shared early stages; the final stage is duplicated per branch.
    MultiBranch,
    /// One backbone whose output channels are split into a pose-heatmap
    /// slice and a shared slice for all other heads.
    SplitOutput,
}

/// Backbone shape and sharing configuration.
///
/// `stage_channels` lists the output width of each downsampling stage (one
/// stride-2 convolution block per entry); the final stage runs at stride 1
/// and widens to `final_channels`, so `total_stride` must equal
/// `2^stage_channels.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub topology: Topology,
    pub stage_channels: Vec<usize>,
    pub final_channels: usize,
    pub norm_kind: NormKind,
    pub norm_groups: usize,
    /// Number of branches K (MultiBranch only).
    #[serde(default = "one")]
    pub num_branches: usize,
    /// Pose-slice width J (SplitOutput only).
    #[serde(default)]
    pub split_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub total_stride: usize,
}

fn one() -> usize {
    1
}

impl BackboneConfig {
    /// Desk-scale default: four stride-2 stages, stride-1 final stage.
    pub fn desk_default() -> Self {
        Self {
            topology: Topology::SingleBranch,
            stage_channels: vec![8, 16, 24, 32],
            final_channels: 48,
            norm_kind: NormKind::GroupNorm,
            norm_groups: 8,
            num_branches: 1,
            split_channels: 0,
            input_height: 128,
            input_width: 64,
            total_stride: 16,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = |name: &str, why: String| {
            Err(ConfigError::InvalidField {
                field: name.to_string(),
                reason: why,
            })
        };
        if self.stage_channels.is_empty() || self.stage_channels.iter().any(|&c| c == 0) {
            return field(
                "stage_channels",
                "must be a non-empty list of positive channel counts".into(),
            );
        }
        if self.final_channels == 0 {
            return field("final_channels", "must be positive".into());
        }
        if self.norm_groups == 0 {
            return field("norm_groups", "must be positive".into());
        }
        for (i, &c) in self.stage_channels.iter().enumerate() {
            if c % self.norm_groups != 0 {
                return field(
                    "norm_groups",
                    format!("{} does not divide stage_channels[{i}] = {c}", self.norm_groups),
                );
            }
        }
        if self.final_channels % self.norm_groups != 0 {
            return field(
                "norm_groups",
                format!(
                    "{} does not divide final_channels = {}",
                    self.norm_groups, self.final_channels
                ),
            );
        }
        let expected_stride = 1usize << self.stage_channels.len();
        if self.total_stride != expected_stride {
            return field(
                "total_stride",
                format!(
                    "must equal 2^(number of stages) = {expected_stride} for {} stages, got {}",
                    self.stage_channels.len(),
                    self.total_stride
                ),
            );
        }
        if self.input_height == 0 || self.input_height % self.total_stride != 0 {
            return field(
                "input_height",
                format!("{} is not divisible by total_stride {}", self.input_height, self.total_stride),
            );
        }
        if self.input_width == 0 || self.input_width % self.total_stride != 0 {
            return field(
                "input_width",
                format!("{} is not divisible by total_stride {}", self.input_width, self.total_stride),
            );
        }
        match self.topology {
            Topology::SingleBranch => {}
            Topology::MultiBranch => {
                if self.num_branches == 0 {
                    return field("num_branches", "MultiBranch requires at least 1 branch".into());
                }
            }
            Topology::SplitOutput => {
                if self.split_channels == 0 || self.split_channels >= self.final_channels {
                    return field(
                        "split_channels",
                        format!(
                            "must satisfy 0 < split_channels < final_channels ({} vs {})",
                            self.split_channels, self.final_channels
                        ),
                    );
                }
            }
        }
        Ok(())
    }

    /// Output feature-map height at stride `total_stride`.
    pub fn feature_height(&self) -> usize {
        self.input_height / self.total_stride
    }

    pub fn feature_width(&self) -> usize {
        self.input_width / self.total_stride
    }

    /// Embedding width seen by the non-pose heads: the full feature width,
    /// minus the pose slice under SplitOutput.
    pub fn shared_channels(&self) -> usize {
        match self.topology {
            Topology::SplitOutput => self.final_channels - self.split_channels,
            _ => self.final_channels,
        }
    }
}

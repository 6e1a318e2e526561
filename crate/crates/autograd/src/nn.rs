//! Named layers over a [`ParamStore`].
//!
//! Layers own no tensors; they hold the parameter names they registered and
//! apply themselves onto a [`Tape`]. Forward passes read the store immutably —
//! mutations that training demands (batch-norm running statistics) are
//! returned as [`BufferUpdate`]s for the caller to apply after the step, so a
//! store snapshot can serve concurrent read-only evaluation.

use ndarray::IxDyn;
use rand_chacha::ChaCha8Rng;

use crate::init::he_normal;
use crate::ops::norm::{ema_update, to_array1};
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::Arr;

/// Deferred mutation of a non-trainable buffer (e.g. running statistics).
#[derive(Debug, Clone)]
pub struct BufferUpdate {
    pub name: String,
    pub value: Arr,
}

/// Applies deferred buffer updates onto the store.
pub fn apply_buffer_updates(store: &mut ParamStore, updates: &[BufferUpdate]) {
    for u in updates {
        store.get_mut(&u.name).assign(&u.value);
    }
}

/// 2-d convolution layer with optional bias.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: String,
    pub bias: Option<String>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = format!("{name}.weight");
        let fan_in = cin * kernel * kernel;
        store.register(&weight, he_normal(rng, &[cout, cin, kernel, kernel], fan_in));
        let bias = bias.then(|| {
            let b = format!("{name}.bias");
            store.register(&b, Arr::zeros(IxDyn(&[cout])));
            b
        });
        Self { weight, bias, stride, pad }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> NodeId {
        let w = tape.param(store, &self.weight);
        let y = tape.conv2d(x, w, self.stride, self.pad);
        match &self.bias {
            Some(bn) => {
                let b = tape.param(store, bn);
                tape.add_bias_nchw(y, b)
            }
            None => y,
        }
    }
}

/// Fully connected layer: x (N, D) -> (N, O).
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: String,
    pub bias: String,
}

impl Linear {
    pub fn register(
        store: &mut ParamStore,
        name: &str,
        din: usize,
        dout: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let weight = format!("{name}.weight");
        let bias = format!("{name}.bias");
        store.register(&weight, he_normal(rng, &[dout, din], din));
        store.register(&bias, Arr::zeros(IxDyn(&[dout])));
        Self { weight, bias }
    }

    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> NodeId {
        let w = tape.param(store, &self.weight);
        let b = tape.param(store, &self.bias);
        tape.linear(x, w, b)
    }
}

/// Which normalization a [`Norm`] layer performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormOp {
    /// Per-sample groups; identical behavior in train and eval.
    Group { groups: usize },
    /// Batch statistics in training, frozen running statistics in eval.
    Batch,
}

/// Normalization layer over NCHW activations with per-channel affine.
#[derive(Debug, Clone)]
pub struct Norm {
    pub gamma: String,
    pub beta: String,
    pub running_mean: String,
    pub running_var: String,
    pub op: NormOp,
    pub eps: f64,
    /// EMA momentum for running statistics (batch mode only).
    pub momentum: f64,
}

impl Norm {
    pub fn register(store: &mut ParamStore, name: &str, channels: usize, op: NormOp) -> Self {
        if let NormOp::Group { groups } = op {
            assert!(
                groups >= 1 && channels % groups == 0,
                "norm '{name}': groups {groups} must divide channels {channels}"
            );
        }
        let gamma = format!("{name}.gamma");
        let beta = format!("{name}.beta");
        let running_mean = format!("{name}.running_mean");
        let running_var = format!("{name}.running_var");
        store.register(&gamma, Arr::ones(IxDyn(&[channels])));
        store.register(&beta, Arr::zeros(IxDyn(&[channels])));
        // Buffers exist for both kinds so checkpoints have a uniform layout;
        // group mode simply never reads them.
        store.register_buffer(&running_mean, Arr::zeros(IxDyn(&[channels])));
        store.register_buffer(&running_var, Arr::ones(IxDyn(&[channels])));
        Self {
            gamma,
            beta,
            running_mean,
            running_var,
            op,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Applies the layer. In batch mode with `train = true` the biased batch
    /// statistics are folded into the running buffers via `updates`.
    pub fn apply(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        train: bool,
        updates: &mut Vec<BufferUpdate>,
    ) -> NodeId {
        let gamma = tape.param(store, &self.gamma);
        let beta = tape.param(store, &self.beta);
        match self.op {
            NormOp::Group { groups } => tape.group_norm(x, gamma, beta, groups, self.eps),
            NormOp::Batch => {
                if train {
                    let (y, mean, var) = tape.batch_norm_train(x, gamma, beta, self.eps);
                    let mut rm = to_array1(store.get(&self.running_mean));
                    let mut rv = to_array1(store.get(&self.running_var));
                    ema_update(&mut rm, &mean, self.momentum);
                    ema_update(&mut rv, &var, self.momentum);
                    updates.push(BufferUpdate {
                        name: self.running_mean.clone(),
                        value: rm.into_dyn(),
                    });
                    updates.push(BufferUpdate {
                        name: self.running_var.clone(),
                        value: rv.into_dyn(),
                    });
                    y
                } else {
                    let rm = to_array1(store.get(&self.running_mean));
                    let rv = to_array1(store.get(&self.running_var));
                    tape.batch_norm_eval(x, gamma, beta, &rm, &rv, self.eps)
                }
            }
        }
    }
}

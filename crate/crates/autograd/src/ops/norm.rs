//! Group and batch normalization over NCHW tensors.

use ndarray::{Array1, Axis, IxDyn};

use crate::tape::{NodeId, Tape};
use crate::Arr;

fn as4(x: &Arr) -> ndarray::ArrayView4<'_, f64> {
    x.view()
        .into_dimensionality::<ndarray::Ix4>()
        .expect("norm ops want NCHW")
}

/// Broadcasts a per-channel vector over (N, C, H, W).
fn chan(v: &Arr) -> ndarray::ArrayView<'_, f64, IxDyn> {
    v.view()
        .into_shape_with_order(IxDyn(&[1, v.len(), 1, 1]))
        .unwrap()
}

impl Tape {
    /// Group normalization: statistics per (sample, group) over the group's
    /// channels and all spatial positions, then per-channel affine. Batch
    /// entries never mix, so train and eval behave identically.
    pub fn group_norm(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        groups: usize,
        eps: f64,
    ) -> NodeId {
        let xv = as4(&self.vals[x.0]).to_owned();
        let (n, c, h, w) = xv.dim();
        assert!(groups >= 1 && c % groups == 0, "groups must divide channels");
        let m = (c / groups) * h * w;

        // Rows of (N*G, M) are the normalization units.
        let flat = xv
            .clone()
            .into_shape_with_order((n * groups, m))
            .unwrap();
        let mean = flat.mean_axis(Axis(1)).unwrap();
        let var = flat.var_axis(Axis(1), 0.0);
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let mut xhat = flat;
        for (mut row, (&mu, &is)) in xhat.rows_mut().into_iter().zip(mean.iter().zip(inv_std.iter())) {
            row.mapv_inplace(|v| (v - mu) * is);
        }
        let xhat4 = xhat.into_shape_with_order((n, c, h, w)).unwrap();

        let mut y = &xhat4.view().into_dyn() * &chan(&self.vals[gamma.0]);
        y += &chan(&self.vals[beta.0]);

        let xhat_d = xhat4.into_dyn();
        let inv_std_d = inv_std;
        self.push(
            y,
            Some(Box::new(move |g, vals| {
                let gamma_b = chan(&vals[gamma.0]);
                let gxh = g * &gamma_b; // dL/d x̂
                let gxhat = &gxh * &xhat_d;

                let dgamma = gxhat_channel_sum(&(g * &xhat_d));
                let dbeta = gxhat_channel_sum(g);

                let hrows = gxh.into_shape_with_order((n * groups, m)).unwrap();
                let xrows = xhat_d
                    .view()
                    .into_shape_with_order((n * groups, m))
                    .unwrap();
                let hxrows = gxhat.into_shape_with_order((n * groups, m)).unwrap();
                let hmean = hrows.mean_axis(Axis(1)).unwrap();
                let hxmean = hxrows.mean_axis(Axis(1)).unwrap();
                let mut gx = hrows;
                for (r, mut row) in gx.rows_mut().into_iter().enumerate() {
                    let (hm, hxm, is) = (hmean[r], hxmean[r], inv_std_d[r]);
                    let xr = xrows.row(r);
                    for (gi, &xi) in row.iter_mut().zip(xr.iter()) {
                        *gi = is * (*gi - hm - xi * hxm);
                    }
                }
                vec![
                    (x.0, gx.into_shape_with_order(IxDyn(&[n, c, h, w])).unwrap()),
                    (gamma.0, dgamma.into_dyn()),
                    (beta.0, dbeta.into_dyn()),
                ]
            })),
        )
    }

    /// Batch normalization with batch statistics (training semantics).
    /// Returns the output plus the batch mean and biased variance per channel
    /// so the caller can fold them into running statistics.
    pub fn batch_norm_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        eps: f64,
    ) -> (NodeId, Array1<f64>, Array1<f64>) {
        let xv = as4(&self.vals[x.0]).to_owned();
        let (n, c, h, w) = xv.dim();
        let m = (n * h * w) as f64;

        let mut mean = Array1::<f64>::zeros(c);
        let mut var = Array1::<f64>::zeros(c);
        for ci in 0..c {
            let lane = xv.index_axis(Axis(1), ci);
            let mu = lane.sum() / m;
            mean[ci] = mu;
            var[ci] = lane.mapv(|v| (v - mu) * (v - mu)).sum() / m;
        }
        let inv_std = var.mapv(|v| 1.0 / (v + eps).sqrt());

        let mut xhat = xv;
        for ci in 0..c {
            let (mu, is) = (mean[ci], inv_std[ci]);
            xhat.index_axis_mut(Axis(1), ci).mapv_inplace(|v| (v - mu) * is);
        }
        let mut y = &xhat.view().into_dyn() * &chan(&self.vals[gamma.0]);
        y += &chan(&self.vals[beta.0]);

        let xhat_d = xhat.into_dyn();
        let inv_std_c = inv_std;
        let id = self.push(
            y,
            Some(Box::new(move |g, vals| {
                let gxh = g * &chan(&vals[gamma.0]);
                let dgamma = gxhat_channel_sum(&(g * &xhat_d));
                let dbeta = gxhat_channel_sum(g);
                let hmean = channel_mean(&gxh);
                let hxmean = channel_mean(&(&gxh * &xhat_d));
                let mut gx = gxh
                    .into_dimensionality::<ndarray::Ix4>()
                    .unwrap();
                let x4 = xhat_d.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                for ci in 0..c {
                    let (hm, hxm, is) = (hmean[ci], hxmean[ci], inv_std_c[ci]);
                    let xs = x4.index_axis(Axis(1), ci);
                    let mut gs = gx.index_axis_mut(Axis(1), ci);
                    ndarray::Zip::from(&mut gs).and(&xs).for_each(|gi, &xi| {
                        *gi = is * (*gi - hm - xi * hxm);
                    });
                }
                vec![
                    (x.0, gx.into_dyn()),
                    (gamma.0, dgamma.into_dyn()),
                    (beta.0, dbeta.into_dyn()),
                ]
            })),
        );
        (id, mean, var)
    }

    /// Batch normalization against frozen running statistics (eval
    /// semantics); the statistics are constants for differentiation.
    pub fn batch_norm_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &Array1<f64>,
        running_var: &Array1<f64>,
        eps: f64,
    ) -> NodeId {
        let xv = as4(&self.vals[x.0]).to_owned();
        let (_, c, _, _) = xv.dim();
        assert_eq!(running_mean.len(), c, "running mean length != channels");
        let inv_std = running_var.mapv(|v| 1.0 / (v + eps).sqrt());

        let mut xhat = xv;
        for ci in 0..c {
            let (mu, is) = (running_mean[ci], inv_std[ci]);
            xhat.index_axis_mut(Axis(1), ci).mapv_inplace(|v| (v - mu) * is);
        }
        let mut y = &xhat.view().into_dyn() * &chan(&self.vals[gamma.0]);
        y += &chan(&self.vals[beta.0]);

        let xhat_d = xhat.into_dyn();
        let inv_std_c = inv_std;
        self.push(
            y,
            Some(Box::new(move |g, vals| {
                let dgamma = gxhat_channel_sum(&(g * &xhat_d));
                let dbeta = gxhat_channel_sum(g);
                let mut gx = (g * &chan(&vals[gamma.0]))
                    .into_dimensionality::<ndarray::Ix4>()
                    .unwrap();
                for ci in 0..c {
                    let is = inv_std_c[ci];
                    gx.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * is);
                }
                vec![
                    (x.0, gx.into_dyn()),
                    (gamma.0, dgamma.into_dyn()),
                    (beta.0, dbeta.into_dyn()),
                ]
            })),
        )
    }
}

/// Sum over (N, H, W), leaving a per-channel vector.
fn gxhat_channel_sum(t: &Arr) -> Array1<f64> {
    let t4 = t.view().into_dimensionality::<ndarray::Ix4>().unwrap();
    let c = t4.shape()[1];
    let mut out = Array1::<f64>::zeros(c);
    for ci in 0..c {
        out[ci] = t4.index_axis(Axis(1), ci).sum();
    }
    out
}

fn channel_mean(t: &Arr) -> Array1<f64> {
    let t4 = t.view().into_dimensionality::<ndarray::Ix4>().unwrap();
    let (n, c, h, w) = t4.dim();
    let m = (n * h * w) as f64;
    let mut out = Array1::<f64>::zeros(c);
    for ci in 0..c {
        out[ci] = t4.index_axis(Axis(1), ci).sum() / m;
    }
    out
}

/// Helper shared with layers: EMA update for running statistics.
pub fn ema_update(running: &mut Array1<f64>, batch: &Array1<f64>, momentum: f64) {
    ndarray::Zip::from(running).and(batch).for_each(|r, &b| {
        *r = (1.0 - momentum) * *r + momentum * b;
    });
}

/// Helper for layer code that stores stats as dynamic arrays.
pub fn to_array1(a: &Arr) -> Array1<f64> {
    a.view()
        .into_dimensionality::<ndarray::Ix1>()
        .expect("expected 1-d array")
        .to_owned()
}

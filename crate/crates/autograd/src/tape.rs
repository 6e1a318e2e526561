use ndarray::{ArrayD, Axis, IxDyn};

use crate::params::ParamStore;
use crate::Arr;

/// Index of a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Backward rule of one node: given dL/d(out) and read access to all node
/// values, return (parent id, gradient contribution) pairs.
pub(crate) type BackFn = Box<dyn Fn(&Arr, &[Arr]) -> Vec<(usize, Arr)>>;

/// A single forward pass recorded for reverse-mode differentiation.
///
/// The tape owns every intermediate value; parameters enter as leaves tagged
/// with their store name so [`Gradients::accumulate_into`] can route gradients
/// back. A tape built with `Tape::inference()` records no backward rules and
/// is just a cheap evaluator.
pub struct Tape {
    pub(crate) vals: Vec<Arr>,
    pub(crate) backs: Vec<Option<BackFn>>,
    pub(crate) param_names: Vec<Option<String>>,
    pub(crate) grad_mode: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    g: Vec<Option<Arr>>,
}

impl Gradients {
    /// Gradient w.r.t. a node, if any gradient reached it.
    pub fn wrt(&self, id: NodeId) -> Option<&Arr> {
        self.g[id.0].as_ref()
    }

    /// Gradient w.r.t. a node, materializing zeros when nothing reached it.
    pub fn wrt_or_zeros(&self, id: NodeId, tape: &Tape) -> Arr {
        match self.g[id.0].as_ref() {
            Some(g) => g.clone(),
            None => Arr::zeros(tape.vals[id.0].raw_dim()),
        }
    }

    /// Adds every parameter-leaf gradient into the store.
    pub fn accumulate_into(&self, tape: &Tape, store: &mut ParamStore) {
        for (i, name) in tape.param_names.iter().enumerate() {
            if let (Some(name), Some(g)) = (name, self.g[i].as_ref()) {
                store.add_grad(name, g);
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            vals: Vec::new(),
            backs: Vec::new(),
            param_names: Vec::new(),
            grad_mode: true,
        }
    }

    /// A tape that records values only; `backward` on it is a bug.
    pub fn inference() -> Self {
        Self {
            grad_mode: false,
            ..Self::new()
        }
    }

    pub fn grad_mode(&self) -> bool {
        self.grad_mode
    }

    pub fn value(&self, id: NodeId) -> &Arr {
        &self.vals[id.0]
    }

    /// Value of a 0-d (scalar) node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = &self.vals[id.0];
        assert_eq!(v.len(), 1, "node is not a scalar");
        *v.iter().next().unwrap()
    }

    pub(crate) fn push(&mut self, value: Arr, back: Option<BackFn>) -> NodeId {
        self.vals.push(value);
        self.backs.push(if self.grad_mode { back } else { None });
        self.param_names.push(None);
        NodeId(self.vals.len() - 1)
    }

    /// A leaf the caller may later ask gradients for.
    pub fn leaf(&mut self, value: Arr) -> NodeId {
        self.push(value, None)
    }

    /// A leaf that only carries data; numerically identical to `leaf`.
    pub fn constant(&mut self, value: Arr) -> NodeId {
        self.push(value, None)
    }

    /// Clones a parameter out of the store onto the tape and remembers its
    /// name so backward can accumulate into the store.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> NodeId {
        let id = self.push(store.get(name).clone(), None);
        self.param_names[id.0] = Some(name.to_string());
        id
    }

    /// Reverse pass from a scalar root. Returns gradients for every node the
    /// root depends on; unreached nodes have none.
    pub fn backward(&self, root: NodeId) -> Gradients {
        assert!(self.grad_mode, "backward on an inference tape");
        assert_eq!(self.vals[root.0].len(), 1, "backward root must be scalar");
        let mut g: Vec<Option<Arr>> = vec![None; self.vals.len()];
        g[root.0] = Some(Arr::ones(self.vals[root.0].raw_dim()));
        for i in (0..=root.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            if let Some(back) = &self.backs[i] {
                for (pid, contrib) in back(&gi, &self.vals) {
                    match &mut g[pid] {
                        Some(acc) => *acc += &contrib,
                        slot => *slot = Some(contrib),
                    }
                }
            }
            g[i] = Some(gi);
        }
        Gradients { g }
    }

    // ---- elementwise ----

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.vals[a.0].shape(), self.vals[b.0].shape(), "add shape mismatch");
        let v = &self.vals[a.0] + &self.vals[b.0];
        self.push(
            v,
            Some(Box::new(move |g, _| {
                vec![(a.0, g.clone()), (b.0, g.clone())]
            })),
        )
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.vals[a.0].shape(), self.vals[b.0].shape(), "sub shape mismatch");
        let v = &self.vals[a.0] - &self.vals[b.0];
        self.push(
            v,
            Some(Box::new(move |g, _| {
                vec![(a.0, g.clone()), (b.0, -g)]
            })),
        )
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.vals[a.0].shape(), self.vals[b.0].shape(), "mul shape mismatch");
        let v = &self.vals[a.0] * &self.vals[b.0];
        self.push(
            v,
            Some(Box::new(move |g, vals| {
                vec![(a.0, g * &vals[b.0]), (b.0, g * &vals[a.0])]
            })),
        )
    }

    pub fn scale(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = &self.vals[a.0] * k;
        self.push(v, Some(Box::new(move |g, _| vec![(a.0, g * k)])))
    }

    pub fn add_scalar(&mut self, a: NodeId, k: f64) -> NodeId {
        let v = &self.vals[a.0] + k;
        self.push(v, Some(Box::new(move |g, _| vec![(a.0, g.clone())])))
    }

    /// Elementwise product with a fixed array (masks, per-element weights).
    pub fn mul_const(&mut self, a: NodeId, c: &Arr) -> NodeId {
        assert_eq!(self.vals[a.0].shape(), c.shape(), "mul_const shape mismatch");
        let v = &self.vals[a.0] * c;
        let c = c.clone();
        self.push(v, Some(Box::new(move |g, _| vec![(a.0, g * &c)])))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a.0].mapv(|x| x.max(0.0));
        self.push(
            v,
            Some(Box::new(move |g, vals| {
                let mut gx = g.clone();
                gx.zip_mut_with(&vals[a.0], |gi, &xi| {
                    if xi <= 0.0 {
                        *gi = 0.0;
                    }
                });
                vec![(a.0, gx)]
            })),
        )
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a.0].mapv(f64::ln);
        self.push(
            v,
            Some(Box::new(move |g, vals| {
                vec![(a.0, g / &vals[a.0])]
            })),
        )
    }

    /// sqrt(max(x, floor)); gradient is zero in the clamped region.
    pub fn sqrt_clamped(&mut self, a: NodeId, floor: f64) -> NodeId {
        let v = self.vals[a.0].mapv(|x| x.max(floor).sqrt());
        self.push(
            v,
            Some(Box::new(move |g, vals| {
                let mut gx = g.clone();
                gx.zip_mut_with(&vals[a.0], |gi, &xi| {
                    *gi = if xi > floor { *gi * 0.5 / xi.sqrt() } else { 0.0 };
                });
                vec![(a.0, gx)]
            })),
        )
    }

    /// Numerically stable ln(1 + e^x).
    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.vals[a.0].mapv(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.push(
            v,
            Some(Box::new(move |g, vals| {
                let mut gx = g.clone();
                gx.zip_mut_with(&vals[a.0], |gi, &xi| {
                    *gi *= 1.0 / (1.0 + (-xi).exp());
                });
                vec![(a.0, gx)]
            })),
        )
    }

    // ---- structure ----

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> NodeId {
        let orig: Vec<usize> = self.vals[a.0].shape().to_vec();
        let v = self.vals[a.0]
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("reshape: element count mismatch");
        self.push(
            v,
            Some(Box::new(move |g, _| {
                vec![(
                    a.0,
                    g.clone()
                        .into_shape_with_order(IxDyn(&orig))
                        .expect("reshape backward"),
                )]
            })),
        )
    }

    /// Channel slice `lo..hi` of an (N, C, H, W) tensor.
    pub fn slice_channels(&mut self, a: NodeId, lo: usize, hi: usize) -> NodeId {
        let x = &self.vals[a.0];
        assert_eq!(x.ndim(), 4, "slice_channels wants NCHW");
        assert!(lo < hi && hi <= x.shape()[1], "channel slice out of range");
        let v = x
            .slice_axis(Axis(1), ndarray::Slice::from(lo..hi))
            .to_owned()
            .into_dyn();
        let full: Vec<usize> = x.shape().to_vec();
        self.push(
            v,
            Some(Box::new(move |g, _| {
                let mut gx = ArrayD::zeros(IxDyn(&full));
                gx.slice_axis_mut(Axis(1), ndarray::Slice::from(lo..hi))
                    .assign(g);
                vec![(a.0, gx)]
            })),
        )
    }

    /// Concatenates (N, C_i, H, W) tensors along channels.
    pub fn concat_channels(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|p| self.vals[p.0].view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_channels shape mismatch");
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let widths: Vec<usize> = parts.iter().map(|p| self.vals[p.0].shape()[1]).collect();
        self.push(
            v,
            Some(Box::new(move |g, _| {
                let mut out = Vec::with_capacity(ids.len());
                let mut lo = 0;
                for (&id, &w) in ids.iter().zip(&widths) {
                    out.push((
                        id,
                        g.slice_axis(Axis(1), ndarray::Slice::from(lo..lo + w))
                            .to_owned()
                            .into_dyn(),
                    ));
                    lo += w;
                }
                out
            })),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.vals[a.0].sum();
        let shape: Vec<usize> = self.vals[a.0].shape().to_vec();
        self.push(
            ndarray::arr0(s).into_dyn(),
            Some(Box::new(move |g, _| {
                let gs = *g.iter().next().unwrap();
                vec![(a.0, Arr::from_elem(IxDyn(&shape), gs))]
            })),
        )
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.vals[a.0].len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// Gathers entries of the flattened tensor; backward scatter-adds.
    pub fn gather(&mut self, a: NodeId, flat_idx: &[usize]) -> NodeId {
        let flat = self.vals[a.0]
            .as_slice()
            .expect("gather wants standard layout");
        let v: Vec<f64> = flat_idx.iter().map(|&i| flat[i]).collect();
        let shape: Vec<usize> = self.vals[a.0].shape().to_vec();
        let idx = flat_idx.to_vec();
        self.push(
            Arr::from_shape_vec(IxDyn(&[idx.len()]), v).unwrap(),
            Some(Box::new(move |g, _| {
                let mut gx = Arr::zeros(IxDyn(&shape));
                let gxf = gx.as_slice_mut().unwrap();
                for (k, &i) in idx.iter().enumerate() {
                    gxf[i] += g[k];
                }
                vec![(a.0, gx)]
            })),
        )
    }

    /// Mean of the k largest entries of a 1-d tensor. Ties at the cutoff are
    /// broken by index order so the selection is deterministic.
    pub fn topk_mean(&mut self, a: NodeId, k: usize) -> NodeId {
        let x = self.vals[a.0].as_slice().expect("topk_mean wants 1-d").to_vec();
        assert!(k >= 1 && k <= x.len(), "topk_mean: k out of range");
        let mut order: Vec<usize> = (0..x.len()).collect();
        order.sort_by(|&i, &j| x[j].partial_cmp(&x[i]).unwrap().then(i.cmp(&j)));
        order.truncate(k);
        let mean = order.iter().map(|&i| x[i]).sum::<f64>() / k as f64;
        let len = x.len();
        self.push(
            ndarray::arr0(mean).into_dyn(),
            Some(Box::new(move |g, _| {
                let gs = *g.iter().next().unwrap() / k as f64;
                let mut gx = Arr::zeros(IxDyn(&[len]));
                let gxf = gx.as_slice_mut().unwrap();
                for &i in &order {
                    gxf[i] = gs;
                }
                vec![(a.0, gx)]
            })),
        )
    }

    // ---- linear algebra ----

    /// (M, K) x (K, N) matrix product.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let av = self.vals[a.0]
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("matmul lhs must be 2-d");
        let bv = self.vals[b.0]
            .view()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("matmul rhs must be 2-d");
        let v = av.dot(&bv).into_dyn();
        self.push(
            v,
            Some(Box::new(move |g, vals| {
                let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let av = vals[a.0].view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let bv = vals[b.0].view().into_dimensionality::<ndarray::Ix2>().unwrap();
                vec![
                    (a.0, g2.dot(&bv.t()).into_dyn()),
                    (b.0, av.t().dot(&g2).into_dyn()),
                ]
            })),
        )
    }

    /// x (N, D) -> x W^T + b with W (O, D), b (O).
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xv = self.vals[x.0].view().into_dimensionality::<ndarray::Ix2>().expect("linear x 2-d");
        let wv = self.vals[w.0].view().into_dimensionality::<ndarray::Ix2>().expect("linear w 2-d");
        let bv = self.vals[b.0].view().into_dimensionality::<ndarray::Ix1>().expect("linear b 1-d");
        assert_eq!(xv.shape()[1], wv.shape()[1], "linear: feature dims disagree");
        assert_eq!(wv.shape()[0], bv.len(), "linear: bias length disagrees");
        let mut v = xv.dot(&wv.t());
        v += &bv;
        self.push(
            v.into_dyn(),
            Some(Box::new(move |g, vals| {
                let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let xv = vals[x.0].view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let wv = vals[w.0].view().into_dimensionality::<ndarray::Ix2>().unwrap();
                vec![
                    (x.0, g2.dot(&wv).into_dyn()),
                    (w.0, g2.t().dot(&xv).into_dyn()),
                    (b.0, g2.sum_axis(Axis(0)).into_dyn()),
                ]
            })),
        )
    }

    // ---- softmax family ----

    /// Softmax along `axis`.
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> NodeId {
        let v = softmax_value(&self.vals[a.0], axis);
        let out_idx = self.vals.len();
        self.push(
            v,
            Some(Box::new(move |g, vals| {
                let y = &vals[out_idx];
                // dx = y * (g - sum(g*y, axis))
                let gy = g * y;
                let s = gy.sum_axis(Axis(axis)).insert_axis(Axis(axis));
                let gx = y * &(g - &s);
                vec![(a.0, gx)]
            })),
        )
    }

    /// Log-softmax along `axis`.
    pub fn log_softmax(&mut self, a: NodeId, axis: usize) -> NodeId {
        let x = &self.vals[a.0];
        let max = x.map_axis(Axis(axis), |lane| {
            lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        });
        let shifted = x - &max.clone().insert_axis(Axis(axis));
        let lse = shifted
            .mapv(f64::exp)
            .sum_axis(Axis(axis))
            .mapv(f64::ln)
            .insert_axis(Axis(axis));
        let v = &shifted - &lse;
        let out_idx = self.vals.len();
        self.push(
            v,
            Some(Box::new(move |g, vals| {
                let y = &vals[out_idx]; // log-probs
                let p = y.mapv(f64::exp);
                let s = g.sum_axis(Axis(axis)).insert_axis(Axis(axis));
                let gx = g - &(p * &s);
                vec![(a.0, gx)]
            })),
        )
    }

    // ---- pairwise distances and masked extrema (batch-hard mining) ----

    /// Squared Euclidean distance matrix of row vectors: e (B, C) -> (B, B).
    pub fn pairwise_sqdist(&mut self, e: NodeId) -> NodeId {
        let ev = self.vals[e.0].view().into_dimensionality::<ndarray::Ix2>().expect("pairwise_sqdist wants (B, C)");
        let b = ev.shape()[0];
        let sq: Vec<f64> = ev.rows().into_iter().map(|r| r.dot(&r)).collect();
        let gram = ev.dot(&ev.t());
        let mut d2 = ndarray::Array2::<f64>::zeros((b, b));
        for i in 0..b {
            for j in 0..b {
                d2[(i, j)] = (sq[i] + sq[j] - 2.0 * gram[(i, j)]).max(0.0);
            }
        }
        self.push(
            d2.into_dyn(),
            Some(Box::new(move |g, vals| {
                let ev = vals[e.0].view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let (b, c) = (ev.shape()[0], ev.shape()[1]);
                let mut ge = ndarray::Array2::<f64>::zeros((b, c));
                for i in 0..b {
                    for j in 0..b {
                        let w = 2.0 * (g2[(i, j)] + g2[(j, i)]);
                        if w == 0.0 {
                            continue;
                        }
                        for k in 0..c {
                            ge[(i, k)] += w * (ev[(i, k)] - ev[(j, k)]);
                        }
                    }
                }
                vec![(e.0, ge.into_dyn())]
            })),
        )
    }

    /// Per-row max (or min) over masked entries of a (B, B) matrix; every row
    /// must have at least one admissible entry. Ties resolve to the lowest
    /// column index; the gradient flows only to the selected entry.
    pub fn masked_row_extremum(
        &mut self,
        a: NodeId,
        mask: &ndarray::Array2<bool>,
        maximize: bool,
    ) -> NodeId {
        let x = self.vals[a.0].view().into_dimensionality::<ndarray::Ix2>().expect("masked_row_extremum wants (B, B)");
        let (rows, cols) = (x.shape()[0], x.shape()[1]);
        assert_eq!(mask.shape(), &[rows, cols], "mask shape mismatch");
        let mut out = Vec::with_capacity(rows);
        let mut arg = Vec::with_capacity(rows);
        for i in 0..rows {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..cols {
                if !mask[(i, j)] {
                    continue;
                }
                let v = x[(i, j)];
                let better = match best {
                    None => true,
                    Some((_, bv)) => {
                        if maximize {
                            v > bv
                        } else {
                            v < bv
                        }
                    }
                };
                if better {
                    best = Some((j, v));
                }
            }
            let (j, v) = best.expect("masked_row_extremum: empty row mask");
            out.push(v);
            arg.push(j);
        }
        let cols_ = cols;
        self.push(
            Arr::from_shape_vec(IxDyn(&[rows]), out).unwrap(),
            Some(Box::new(move |g, _| {
                let mut gx = ndarray::Array2::<f64>::zeros((arg.len(), cols_));
                for (i, &j) in arg.iter().enumerate() {
                    gx[(i, j)] = g[i];
                }
                vec![(a.0, gx.into_dyn())]
            })),
        )
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn softmax_value(x: &Arr, axis: usize) -> Arr {
    let max = x.map_axis(Axis(axis), |lane| {
        lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    });
    let mut e = (x - &max.insert_axis(Axis(axis))).mapv(f64::exp);
    let s = e.sum_axis(Axis(axis)).insert_axis(Axis(axis));
    e /= &s;
    e
}

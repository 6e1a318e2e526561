//! 2-d convolution via im2col and a dense matrix product.

use ndarray::{Array2, Axis, IxDyn};

use crate::tape::{NodeId, Tape};

/// Lowers one (C, H, W) sample into the (C*kh*kw, Ho*Wo) patch matrix.
fn im2col(
    x: &ndarray::ArrayView3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> Array2<f64> {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut col = Array2::<f64>::zeros((c * kh * kw, ho * wo));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        col[(row, oi * wo + oj)] = x[(ci, ii as usize, jj as usize)];
                    }
                }
            }
        }
    }
    col
}

/// Scatter-adds a patch-matrix gradient back onto the (C, H, W) input.
fn col2im(
    gcol: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
) -> ndarray::Array3<f64> {
    let mut gx = ndarray::Array3::<f64>::zeros((c, h, w));
    for ci in 0..c {
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                for oi in 0..ho {
                    let ii = (oi * stride + ki) as isize - pad as isize;
                    if ii < 0 || ii >= h as isize {
                        continue;
                    }
                    for oj in 0..wo {
                        let jj = (oj * stride + kj) as isize - pad as isize;
                        if jj < 0 || jj >= w as isize {
                            continue;
                        }
                        gx[(ci, ii as usize, jj as usize)] += gcol[(row, oi * wo + oj)];
                    }
                }
            }
        }
    }
    gx
}

impl Tape {
    /// Convolution: x (N, Cin, H, W) * w (Cout, Cin, kh, kw) -> (N, Cout, Ho, Wo)
    /// with `Ho = (H + 2*pad - kh) / stride + 1` and likewise for width.
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, stride: usize, pad: usize) -> NodeId {
        let xv = self.value(x).clone();
        let wv = self.value(w).clone();
        assert_eq!(xv.ndim(), 4, "conv2d input must be NCHW");
        assert_eq!(wv.ndim(), 4, "conv2d weight must be (Cout, Cin, kh, kw)");
        let (n, cin, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (cout, wcin, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        assert_eq!(cin, wcin, "conv2d channel mismatch");
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "conv2d kernel larger than padded input");
        let ho = (h + 2 * pad - kh) / stride + 1;
        let wo = (wd + 2 * pad - kw) / stride + 1;

        let w2 = wv
            .view()
            .into_shape_with_order((cout, cin * kh * kw))
            .unwrap()
            .to_owned();
        let mut out = ndarray::Array4::<f64>::zeros((n, cout, ho, wo));
        let mut cols = Vec::with_capacity(n);
        for s in 0..n {
            let xs = xv
                .index_axis(Axis(0), s)
                .into_dimensionality::<ndarray::Ix3>()
                .unwrap();
            let col = im2col(&xs, kh, kw, stride, pad, ho, wo);
            let y = w2.dot(&col); // (Cout, Ho*Wo)
            out.index_axis_mut(Axis(0), s).assign(
                &y.into_shape_with_order((cout, ho, wo)).unwrap(),
            );
            cols.push(col);
        }
        if !self.grad_mode() {
            cols.clear(); // inference tapes don't pay the memory
        }

        self.push(
            out.into_dyn(),
            Some(Box::new(move |g, vals| {
                // Patch matrices are reused from the forward pass.
                let wv = &vals[w.0];
                let w2 = wv
                    .view()
                    .into_shape_with_order((cout, cin * kh * kw))
                    .unwrap()
                    .to_owned();
                let mut gw2 = Array2::<f64>::zeros((cout, cin * kh * kw));
                let mut gx = ndarray::Array4::<f64>::zeros((n, cin, h, wd));
                for s in 0..n {
                    let gs = g
                        .index_axis(Axis(0), s)
                        .into_shape_with_order((cout, ho * wo))
                        .unwrap()
                        .to_owned();
                    gw2 += &gs.dot(&cols[s].t());
                    let gcol = w2.t().dot(&gs);
                    gx.index_axis_mut(Axis(0), s)
                        .assign(&col2im(&gcol, cin, h, wd, kh, kw, stride, pad, ho, wo));
                }
                let gw = gw2
                    .into_shape_with_order(IxDyn(&[cout, cin, kh, kw]))
                    .unwrap();
                vec![(x.0, gx.into_dyn()), (w.0, gw)]
            })),
        )
    }

    /// Adds a per-channel bias b (C) onto x (N, C, H, W).
    pub fn add_bias_nchw(&mut self, x: NodeId, b: NodeId) -> NodeId {
        let xv = &self.vals[x.0];
        let bv = &self.vals[b.0];
        assert_eq!(xv.ndim(), 4, "add_bias_nchw wants NCHW");
        assert_eq!(bv.ndim(), 1, "bias must be 1-d");
        assert_eq!(xv.shape()[1], bv.shape()[0], "bias length != channels");
        let mut v = xv.clone();
        let b4 = bv
            .view()
            .into_shape_with_order(IxDyn(&[1, bv.len(), 1, 1]))
            .unwrap();
        v += &b4;
        self.push(
            v,
            Some(Box::new(move |g, _| {
                let gb = g.sum_axis(Axis(3)).sum_axis(Axis(2)).sum_axis(Axis(0));
                vec![(x.0, g.clone()), (b.0, gb.into_dyn())]
            })),
        )
    }
}

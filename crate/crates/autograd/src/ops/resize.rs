//! Fixed (non-learned) bilinear upsampling.

use ndarray::IxDyn;

use crate::tape::{NodeId, Tape};
use crate::Arr;

/// Per-axis sampling plan: low/high source index and the high-side weight.
fn axis_plan(in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    let mut plan = Vec::with_capacity(in_len * factor);
    let scale = 1.0 / factor as f64;
    for o in 0..in_len * factor {
        // Half-pixel centers, clamped at the edges.
        let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(in_len - 1);
        let i1 = (i0 + 1).min(in_len - 1);
        plan.push((i0, i1, src - i0 as f64));
    }
    plan
}

impl Tape {
    /// Upsamples (N, C, H, W) to (N, C, H*factor, W*factor) by bilinear
    /// interpolation with half-pixel centers and edge clamping.
    pub fn upsample_bilinear(&mut self, x: NodeId, factor: usize) -> NodeId {
        assert!(factor >= 1, "upsample factor must be >= 1");
        if factor == 1 {
            return self.scale(x, 1.0);
        }
        let xv = self.vals[x.0]
            .view()
            .into_dimensionality::<ndarray::Ix4>()
            .expect("upsample_bilinear wants NCHW");
        let (n, c, h, w) = xv.dim();
        let (ho, wo) = (h * factor, w * factor);
        let rows = axis_plan(h, factor);
        let cols = axis_plan(w, factor);

        let mut out = ndarray::Array4::<f64>::zeros((n, c, ho, wo));
        for s in 0..n {
            for ci in 0..c {
                for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
                    for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                        out[(s, ci, oy, ox)] = (1.0 - wy) * (1.0 - wx) * xv[(s, ci, y0, x0)]
                            + (1.0 - wy) * wx * xv[(s, ci, y0, x1)]
                            + wy * (1.0 - wx) * xv[(s, ci, y1, x0)]
                            + wy * wx * xv[(s, ci, y1, x1)];
                    }
                }
            }
        }

        self.push(
            out.into_dyn(),
            Some(Box::new(move |g, _| {
                let g4 = g.view().into_dimensionality::<ndarray::Ix4>().unwrap();
                let mut gx = Arr::zeros(IxDyn(&[n, c, h, w]));
                let mut gx4 = gx
                    .view_mut()
                    .into_dimensionality::<ndarray::Ix4>()
                    .unwrap();
                for s in 0..n {
                    for ci in 0..c {
                        for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
                            for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                                let gv = g4[(s, ci, oy, ox)];
                                gx4[(s, ci, y0, x0)] += (1.0 - wy) * (1.0 - wx) * gv;
                                gx4[(s, ci, y0, x1)] += (1.0 - wy) * wx * gv;
                                gx4[(s, ci, y1, x0)] += wy * (1.0 - wx) * gv;
                                gx4[(s, ci, y1, x1)] += wy * wx * gv;
                            }
                        }
                    }
                }
                vec![(x.0, gx)]
            })),
        )
    }
}

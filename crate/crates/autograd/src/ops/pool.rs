//! Spatial pooling.

use ndarray::{Array2, Axis, IxDyn};

use crate::tape::{NodeId, Tape};
use crate::Arr;

impl Tape {
    /// Global max pool: (N, C, H, W) -> (N, C). Ties resolve to the first
    /// position in row-major order; the gradient flows to that position only.
    pub fn global_max_pool(&mut self, x: NodeId) -> NodeId {
        let xv = self.vals[x.0]
            .view()
            .into_dimensionality::<ndarray::Ix4>()
            .expect("global_max_pool wants NCHW");
        let (n, c, h, w) = xv.dim();
        let mut out = Array2::<f64>::zeros((n, c));
        let mut arg = vec![0usize; n * c];
        for s in 0..n {
            for ci in 0..c {
                let plane = xv.index_axis(Axis(0), s);
                let plane = plane.index_axis(Axis(0), ci);
                let mut best = f64::NEG_INFINITY;
                let mut bi = 0;
                for (k, &v) in plane.iter().enumerate() {
                    if v > best {
                        best = v;
                        bi = k;
                    }
                }
                out[(s, ci)] = best;
                arg[s * c + ci] = bi;
            }
        }
        self.push(
            out.into_dyn(),
            Some(Box::new(move |g, _| {
                let g2 = g.view().into_dimensionality::<ndarray::Ix2>().unwrap();
                let mut gx = Arr::zeros(IxDyn(&[n, c, h, w]));
                let gxf = gx.as_slice_mut().unwrap();
                for s in 0..n {
                    for ci in 0..c {
                        let base = (s * c + ci) * h * w;
                        gxf[base + arg[s * c + ci]] = g2[(s, ci)];
                    }
                }
                vec![(x.0, gx)]
            })),
        )
    }
}

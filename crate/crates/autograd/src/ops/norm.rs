use crate::{Float, Tensor, Var};

impl<'g, T: Float> Var<'g, T> {
    /// Layer normalization across channels at every pixel of an NCHW tensor, followed by a
    /// per-channel affine `gamma`, `beta` (both `[C]`).
    pub fn layer_norm_channels(self, gamma: Var<'g, T>, beta: Var<'g, T>, eps: f64) -> Var<'g, T> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let gv = gamma.value();
        let bv = beta.value();
        assert_eq!(gv.shape(), &[c], "layer_norm: gamma shape");
        assert_eq!(bv.shape(), &[c], "layer_norm: beta shape");
        let hw = h * w;
        let inv_c = T::of(1.0 / c as f64);
        let eps = T::of(eps);
        let mut xhat = vec![T::zero(); x.numel()];
        let mut rstd = vec![T::zero(); n * hw];
        let mut out = vec![T::zero(); x.numel()];
        for ni in 0..n {
            let xs = &x.data()[ni * c * hw..(ni + 1) * c * hw];
            let mut mean = vec![T::zero(); hw];
            for plane in xs.chunks(hw) {
                for (m, &v) in mean.iter_mut().zip(plane) {
                    *m += v;
                }
            }
            mean.iter_mut().for_each(|m| *m *= inv_c);
            let mut var = vec![T::zero(); hw];
            for plane in xs.chunks(hw) {
                for ((s, &v), &m) in var.iter_mut().zip(plane).zip(&mean) {
                    *s += (v - m) * (v - m);
                }
            }
            let rs = &mut rstd[ni * hw..(ni + 1) * hw];
            for (r, &s) in rs.iter_mut().zip(&var) {
                *r = T::one() / (s * inv_c + eps).sqrt();
            }
            for ci in 0..c {
                let base = (ni * c + ci) * hw;
                for p in 0..hw {
                    let xh = (xs[ci * hw + p] - mean[p]) * rs[p];
                    xhat[base + p] = xh;
                    out[base + p] = xh * gv.data()[ci] + bv.data()[ci];
                }
            }
        }
        let (xid, gid, bid) = (self.id, gamma.id, beta.id);
        let (x_req, g_req, b_req) = (self.requires_grad(), gamma.requires_grad(), beta.requires_grad());
        let shape = x.shape().to_vec();
        self.graph.push(
            Tensor::new(&shape, out),
            &[self, gamma, beta],
            Box::new(move |g, grads| {
                let gd = g.data();
                if g_req || b_req {
                    let mut dg = vec![T::zero(); c];
                    let mut db = vec![T::zero(); c];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            for p in 0..hw {
                                dg[ci] += gd[base + p] * xhat[base + p];
                                db[ci] += gd[base + p];
                            }
                        }
                    }
                    if g_req {
                        for (s, v) in grads.slot(gid, &[c]).iter_mut().zip(&dg) {
                            *s += *v;
                        }
                    }
                    if b_req {
                        for (s, v) in grads.slot(bid, &[c]).iter_mut().zip(&db) {
                            *s += *v;
                        }
                    }
                }
                if x_req {
                    let gx = grads.slot(xid, &shape);
                    for ni in 0..n {
                        let mut m1 = vec![T::zero(); hw];
                        let mut m2 = vec![T::zero(); hw];
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            let gam = gv.data()[ci];
                            for p in 0..hw {
                                let dxh = gd[base + p] * gam;
                                m1[p] += dxh;
                                m2[p] += dxh * xhat[base + p];
                            }
                        }
                        for ci in 0..c {
                            let base = (ni * c + ci) * hw;
                            let gam = gv.data()[ci];
                            for p in 0..hw {
                                let dxh = gd[base + p] * gam;
                                gx[base + p] += rstd[ni * hw + p]
                                    * (dxh - m1[p] * inv_c - xhat[base + p] * m2[p] * inv_c);
                            }
                        }
                    }
                }
            }),
        )
    }
}

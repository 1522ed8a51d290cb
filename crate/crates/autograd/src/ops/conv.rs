use crate::{gemm, Float, Tensor, Var};

/// Unfolds one `c×h×w` image into `(c·k·k) × (h·w)` columns with zero padding `k/2`.
fn im2col<T: Float>(x: &[T], c: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let x_lo = p.saturating_sub(kx);
                let x_hi = (w + p).saturating_sub(kx).min(w);
                for y in 0..h {
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    let iy = y as isize + ky as isize - p as isize;
                    if iy < 0 || iy >= h as isize || x_lo >= x_hi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    out_row[..x_lo].fill(T::zero());
                    out_row[x_hi..].fill(T::zero());
                    let off = kx as isize - p as isize;
                    for xo in x_lo..x_hi {
                        out_row[xo] = src[(xo as isize + off) as usize];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into an image gradient.
fn col2im<T: Float>(cols: &[T], c: usize, h: usize, w: usize, k: usize, dx: &mut [T]) {
    let p = k / 2;
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut dx[ci * hw..(ci + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                let x_lo = p.saturating_sub(kx);
                let x_hi = (w + p).saturating_sub(kx).min(w);
                let off = kx as isize - p as isize;
                for y in 0..h {
                    let iy = y as isize + ky as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for xo in x_lo..x_hi {
                        dst[(xo as isize + off) as usize] += src[y * w + xo];
                    }
                }
            }
        }
    }
}

impl<'g, T: Float> Var<'g, T> {
    /// Stride-1 "same" convolution. `weight` is `[out, in, k, k]` with odd `k`; `bias` is `[out]`.
    pub fn conv2d(self, weight: Var<'g, T>, bias: Option<Var<'g, T>>) -> Var<'g, T> {
        let x = self.value();
        let wv = weight.value();
        let (n, c, h, w) = x.dims4();
        let (o, wc, k, k2) = wv.dims4();
        assert_eq!(wc, c, "conv2d: weight expects {wc} input channels, got {c}");
        assert!(k == k2 && k % 2 == 1, "conv2d: kernel must be odd and square");
        let bv = bias.map(|b| {
            let b = b.value();
            assert_eq!(b.shape(), &[o], "conv2d: bias shape");
            b
        });
        let hw = h * w;
        let ckk = c * k * k;
        let mut out = vec![T::zero(); n * o * hw];
        let mut cols = if k == 1 { Vec::new() } else { vec![T::zero(); ckk * hw] };
        for ni in 0..n {
            let xs = &x.data()[ni * c * hw..(ni + 1) * c * hw];
            let colref: &[T] = if k == 1 {
                xs
            } else {
                im2col(xs, c, h, w, k, &mut cols);
                &cols
            };
            let dst = &mut out[ni * o * hw..(ni + 1) * o * hw];
            gemm(false, false, o, hw, ckk, T::one(), wv.data(), colref, T::zero(), dst);
            if let Some(b) = &bv {
                for (oi, plane) in dst.chunks_mut(hw).enumerate() {
                    let bo = b.data()[oi];
                    plane.iter_mut().for_each(|v| *v += bo);
                }
            }
        }
        let mut parents = vec![self, weight];
        parents.extend(bias);
        let (xid, wid, bid) = (self.id, weight.id, bias.map(|b| b.id));
        let x_req = self.requires_grad();
        let w_req = weight.requires_grad();
        let b_req = bias.is_some_and(|b| b.requires_grad());
        self.graph.push(
            Tensor::new(&[n, o, h, w], out),
            &parents,
            Box::new(move |g, grads| {
                let mut cols = if k == 1 { Vec::new() } else { vec![T::zero(); ckk * hw] };
                let mut dcols = if x_req && k != 1 { vec![T::zero(); ckk * hw] } else { Vec::new() };
                for ni in 0..n {
                    let gy = &g.data()[ni * o * hw..(ni + 1) * o * hw];
                    let xs = &x.data()[ni * c * hw..(ni + 1) * c * hw];
                    if w_req {
                        let colref: &[T] = if k == 1 {
                            xs
                        } else {
                            im2col(xs, c, h, w, k, &mut cols);
                            &cols
                        };
                        let gw = grads.slot(wid, wv.shape());
                        gemm(false, true, o, ckk, hw, T::one(), gy, colref, T::one(), gw);
                    }
                    if b_req {
                        let gb = grads.slot(bid.unwrap(), &[o]);
                        for (oi, plane) in gy.chunks(hw).enumerate() {
                            gb[oi] += plane.iter().copied().sum::<T>();
                        }
                    }
                    if x_req {
                        let gx_all = grads.slot(xid, x.shape());
                        let gx = &mut gx_all[ni * c * hw..(ni + 1) * c * hw];
                        if k == 1 {
                            gemm(true, false, c, hw, o, T::one(), wv.data(), gy, T::one(), gx);
                        } else {
                            gemm(true, false, ckk, hw, o, T::one(), wv.data(), gy, T::zero(), &mut dcols);
                            col2im(&dcols, c, h, w, k, gx);
                        }
                    }
                }
            }),
        )
    }

    /// 2×2 average pooling, stride 2. Height and width must be even.
    pub fn avg_pool2(self) -> Var<'g, T> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial size, got {h}×{w}");
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::of(0.25);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for (pi, dst) in out.chunks_mut(ho * wo).enumerate() {
            let src = &x.data()[pi * h * w..(pi + 1) * h * w];
            for y in 0..ho {
                for xo in 0..wo {
                    let i = 2 * y * w + 2 * xo;
                    dst[y * wo + xo] = (src[i] + src[i + 1] + src[i + w] + src[i + w + 1]) * quarter;
                }
            }
        }
        let xid = self.id;
        let shape = x.shape().to_vec();
        self.graph.push(
            Tensor::new(&[n, c, ho, wo], out),
            &[self],
            Box::new(move |g, grads| {
                let gx = grads.slot(xid, &shape);
                for (pi, gsrc) in g.data().chunks(ho * wo).enumerate() {
                    let dst = &mut gx[pi * h * w..(pi + 1) * h * w];
                    for y in 0..ho {
                        for xo in 0..wo {
                            let gv = gsrc[y * wo + xo] * quarter;
                            let i = 2 * y * w + 2 * xo;
                            dst[i] += gv;
                            dst[i + 1] += gv;
                            dst[i + w] += gv;
                            dst[i + w + 1] += gv;
                        }
                    }
                }
            }),
        )
    }

    /// Nearest-neighbour 2× upsampling.
    pub fn upsample2(self) -> Var<'g, T> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        let (ho, wo) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for (pi, dst) in out.chunks_mut(ho * wo).enumerate() {
            let src = &x.data()[pi * h * w..(pi + 1) * h * w];
            for y in 0..ho {
                for xo in 0..wo {
                    dst[y * wo + xo] = src[(y / 2) * w + xo / 2];
                }
            }
        }
        let xid = self.id;
        let shape = x.shape().to_vec();
        self.graph.push(
            Tensor::new(&[n, c, ho, wo], out),
            &[self],
            Box::new(move |g, grads| {
                let gx = grads.slot(xid, &shape);
                for (pi, gsrc) in g.data().chunks(ho * wo).enumerate() {
                    let dst = &mut gx[pi * h * w..(pi + 1) * h * w];
                    for y in 0..ho {
                        for xo in 0..wo {
                            dst[(y / 2) * w + xo / 2] += gsrc[y * wo + xo];
                        }
                    }
                }
            }),
        )
    }

    /// Concatenates NCHW tensors along the channel axis.
    pub fn concat_channels(parts: &[Var<'g, T>]) -> Var<'g, T> {
        assert!(!parts.is_empty(), "concat of nothing");
        let graph = parts[0].graph;
        let values: Vec<_> = parts.iter().map(|p| p.value()).collect();
        let (n, _, h, w) = values[0].dims4();
        let chans: Vec<usize> = values
            .iter()
            .map(|v| {
                let (vn, vc, vh, vw) = v.dims4();
                assert!(vn == n && vh == h && vw == w, "concat: mismatched shapes");
                vc
            })
            .collect();
        let ctot: usize = chans.iter().sum();
        let hw = h * w;
        let mut out = Vec::with_capacity(n * ctot * hw);
        for ni in 0..n {
            for (v, &c) in values.iter().zip(&chans) {
                out.extend_from_slice(&v.data()[ni * c * hw..(ni + 1) * c * hw]);
            }
        }
        let ids: Vec<(usize, bool, usize)> = parts
            .iter()
            .zip(&chans)
            .map(|(p, &c)| (p.id, p.requires_grad(), c))
            .collect();
        graph.push(
            Tensor::new(&[n, ctot, h, w], out),
            parts,
            Box::new(move |g, grads| {
                let mut off = 0;
                for &(id, req, c) in &ids {
                    if req {
                        let gx = grads.slot(id, &[n, c, h, w]);
                        for ni in 0..n {
                            let src = &g.data()[(ni * ctot + off) * hw..(ni * ctot + off + c) * hw];
                            for (d, &s) in gx[ni * c * hw..(ni + 1) * c * hw].iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                    }
                    off += c;
                }
            }),
        )
    }

    /// Channels `start..start + len` of an NCHW tensor.
    pub fn narrow_channels(self, start: usize, len: usize) -> Var<'g, T> {
        let x = self.value();
        let (n, c, h, w) = x.dims4();
        assert!(start + len <= c, "narrow_channels out of range");
        let hw = h * w;
        let mut out = Vec::with_capacity(n * len * hw);
        for ni in 0..n {
            out.extend_from_slice(&x.data()[(ni * c + start) * hw..(ni * c + start + len) * hw]);
        }
        let xid = self.id;
        let shape = x.shape().to_vec();
        self.graph.push(
            Tensor::new(&[n, len, h, w], out),
            &[self],
            Box::new(move |g, grads| {
                let gx = grads.slot(xid, &shape);
                for ni in 0..n {
                    let dst = &mut gx[(ni * c + start) * hw..(ni * c + start + len) * hw];
                    for (d, &s) in dst.iter_mut().zip(&g.data()[ni * len * hw..(ni + 1) * len * hw]) {
                        *d += s;
                    }
                }
            }),
        )
    }
}

//! Channel-transposed multi-head attention.
//!
//! Queries, keys and values are NCHW feature maps. Per head, each of the `d = C / heads`
//! channels is a vector of length `L = H·W`. The attention matrix is
//! `A = softmax_i(Q_i · K_j / sqrt(L))`, a `d × d` matrix whose columns sum to one, and output
//! channel `j` is `Σ_i A[i, j] · V_i`. Memory for `A` is `O(d²)`, independent of image size.
use crate::{gemm, Float, Tensor, Var};

struct Forward<T> {
    out: Vec<T>,
    /// One `d×d` matrix per `(batch, head)`, row `i` = query channel, column `j` = key channel.
    maps: Vec<Vec<T>>,
}

fn forward<T: Float>(q: &Tensor<T>, k: &Tensor<T>, v: &Tensor<T>, heads: usize) -> Forward<T> {
    let (n, c, h, w) = q.dims4();
    assert_eq!(k.shape(), q.shape(), "attention: key shape differs from query");
    assert_eq!(v.shape(), q.shape(), "attention: value shape differs from query");
    assert!(heads > 0 && c % heads == 0, "attention: {c} channels not divisible by {heads} heads");
    let d = c / heads;
    let l = h * w;
    let scale = T::one() / T::of(l as f64).sqrt();
    let mut out = vec![T::zero(); q.numel()];
    let mut maps = Vec::with_capacity(n * heads);
    for ni in 0..n {
        for hd in 0..heads {
            let off = (ni * c + hd * d) * l;
            let qs = &q.data()[off..off + d * l];
            let ks = &k.data()[off..off + d * l];
            let vs = &v.data()[off..off + d * l];
            let mut a = vec![T::zero(); d * d];
            gemm(false, true, d, d, l, scale, qs, ks, T::zero(), &mut a);
            softmax_columns(&mut a, d);
            gemm(true, false, d, l, d, T::one(), &a, vs, T::zero(), &mut out[off..off + d * l]);
            maps.push(a);
        }
    }
    Forward { out, maps }
}

/// Softmax over rows, independently for each column of a `d×d` row-major matrix.
fn softmax_columns<T: Float>(a: &mut [T], d: usize) {
    for j in 0..d {
        let mut mx = T::neg_infinity();
        for i in 0..d {
            mx = mx.max(a[i * d + j]);
        }
        let mut s = T::zero();
        for i in 0..d {
            let e = (a[i * d + j] - mx).exp();
            a[i * d + j] = e;
            s += e;
        }
        for i in 0..d {
            a[i * d + j] = a[i * d + j] / s;
        }
    }
}

/// The materialized attention matrices, one `[heads, d, d]` tensor per batch element.
pub fn channel_attention_maps<T: Float>(q: &Tensor<T>, k: &Tensor<T>, heads: usize) -> Vec<Tensor<T>> {
    let (n, c, _, _) = q.dims4();
    let d = c / heads;
    let fwd = forward(q, k, k, heads);
    fwd.maps
        .chunks(heads)
        .take(n)
        .map(|per| Tensor::new(&[heads, d, d], per.concat()))
        .collect()
}

impl<'g, T: Float> Var<'g, T> {
    /// Channel-transposed attention with queries `self`, keys `key`, values `value`.
    pub fn channel_attention(self, key: Var<'g, T>, value: Var<'g, T>, heads: usize) -> Var<'g, T> {
        let q = self.value();
        let k = key.value();
        let v = value.value();
        let Forward { out, maps } = forward(&q, &k, &v, heads);
        let (n, c, h, w) = q.dims4();
        let d = c / heads;
        let l = h * w;
        let scale = T::one() / T::of(l as f64).sqrt();
        let (qid, kid, vid) = (self.id, key.id, value.id);
        let (q_req, k_req, v_req) = (self.requires_grad(), key.requires_grad(), value.requires_grad());
        let shape = q.shape().to_vec();
        self.graph.push(
            Tensor::new(&shape, out),
            &[self, key, value],
            Box::new(move |g, grads| {
                let mut da = vec![T::zero(); d * d];
                for ni in 0..n {
                    for hd in 0..heads {
                        let off = (ni * c + hd * d) * l;
                        let a = &maps[ni * heads + hd];
                        let go = &g.data()[off..off + d * l];
                        let qs = &q.data()[off..off + d * l];
                        let ks = &k.data()[off..off + d * l];
                        let vs = &v.data()[off..off + d * l];
                        if v_req {
                            let gv = grads.slot(vid, &shape);
                            gemm(false, false, d, l, d, T::one(), a, go, T::one(), &mut gv[off..off + d * l]);
                        }
                        if !(q_req || k_req) {
                            continue;
                        }
                        gemm(false, true, d, d, l, T::one(), vs, go, T::zero(), &mut da);
                        // softmax backward along each column
                        for j in 0..d {
                            let mut dot = T::zero();
                            for i in 0..d {
                                dot += a[i * d + j] * da[i * d + j];
                            }
                            for i in 0..d {
                                da[i * d + j] = a[i * d + j] * (da[i * d + j] - dot);
                            }
                        }
                        if q_req {
                            let gq = grads.slot(qid, &shape);
                            gemm(false, false, d, l, d, scale, &da, ks, T::one(), &mut gq[off..off + d * l]);
                        }
                        if k_req {
                            let gk = grads.slot(kid, &shape);
                            gemm(true, false, d, l, d, scale, &da, qs, T::one(), &mut gk[off..off + d * l]);
                        }
                    }
                }
            }),
        )
    }
}

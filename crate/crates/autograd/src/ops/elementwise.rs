use crate::{Float, Tensor, Var};

/// Strides of `shape` broadcast against `out` (zero along broadcast axes).
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        strides[d] = if shape[d] == 1 && out[d] != 1 { 0 } else { acc };
        acc *= shape[d];
    }
    strides
}

/// For every output element, the linear index into an input of `shape`.
fn broadcast_map(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let strides = broadcast_strides(shape, out);
    let numel: usize = out.iter().product();
    let mut idx = vec![0usize; out.len()];
    let mut map = Vec::with_capacity(numel);
    let mut lin = 0usize;
    for _ in 0..numel {
        map.push(lin);
        for d in (0..out.len()).rev() {
            idx[d] += 1;
            lin += strides[d];
            if idx[d] < out[d] {
                break;
            }
            lin -= strides[d] * out[d];
            idx[d] = 0;
        }
    }
    map
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(a.len(), b.len(), "broadcast needs equal rank: {a:?} vs {b:?}");
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(
                x == y || x == 1 || y == 1,
                "shapes {a:?} and {b:?} do not broadcast"
            );
            x.max(y)
        })
        .collect()
}

#[derive(Clone, Copy)]
enum BinOp {
    Add,
    Sub,
    Mul,
}

impl<'g, T: Float> Var<'g, T> {
    /// Elementwise map with derivative `df(x, y)`.
    pub fn unary(
        self,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var<'g, T> {
        let x = self.value();
        let y = x.map(f);
        let y_keep = std::sync::Arc::new(y.clone());
        let xid = self.id;
        self.graph.push(
            y,
            &[self],
            Box::new(move |g, grads| {
                let gx = grads.slot(xid, x.shape());
                for (((gx, &gv), &xv), &yv) in gx
                    .iter_mut()
                    .zip(g.data())
                    .zip(x.data())
                    .zip(y_keep.data())
                {
                    *gx += gv * df(xv, yv);
                }
            }),
        )
    }

    fn binary(self, rhs: Var<'g, T>, op: BinOp) -> Var<'g, T> {
        let a = self.value();
        let b = rhs.value();
        let out_shape = broadcast_shape(a.shape(), b.shape());
        let same = a.shape() == b.shape();
        let (ma, mb) = if same {
            (None, None)
        } else {
            (
                Some(broadcast_map(a.shape(), &out_shape)),
                Some(broadcast_map(b.shape(), &out_shape)),
            )
        };
        let numel: usize = out_shape.iter().product();
        let ia = |i: usize| ma.as_ref().map_or(i, |m| m[i]);
        let ib = |i: usize| mb.as_ref().map_or(i, |m| m[i]);
        let (ad, bd) = (a.data(), b.data());
        let data: Vec<T> = (0..numel)
            .map(|i| {
                let (x, y) = (ad[ia(i)], bd[ib(i)]);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                }
            })
            .collect();
        let (aid, bid) = (self.id, rhs.id);
        let (a_req, b_req) = (self.requires_grad(), rhs.requires_grad());
        self.graph.push(
            Tensor::new(&out_shape, data),
            &[self, rhs],
            Box::new(move |g, grads| {
                let ia = |i: usize| ma.as_ref().map_or(i, |m| m[i]);
                let ib = |i: usize| mb.as_ref().map_or(i, |m| m[i]);
                let gd = g.data();
                if a_req {
                    let ga = grads.slot(aid, a.shape());
                    for (i, &gv) in gd.iter().enumerate() {
                        ga[ia(i)] += match op {
                            BinOp::Add | BinOp::Sub => gv,
                            BinOp::Mul => gv * b.data()[ib(i)],
                        };
                    }
                }
                if b_req {
                    let gb = grads.slot(bid, b.shape());
                    for (i, &gv) in gd.iter().enumerate() {
                        gb[ib(i)] += match op {
                            BinOp::Add => gv,
                            BinOp::Sub => -gv,
                            BinOp::Mul => gv * a.data()[ia(i)],
                        };
                    }
                }
            }),
        )
    }

    /// Broadcasting addition (equal rank; each axis equal or 1).
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Var<'g, T>) -> Var<'g, T> {
        self.binary(rhs, BinOp::Add)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Var<'g, T>) -> Var<'g, T> {
        self.binary(rhs, BinOp::Sub)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Var<'g, T>) -> Var<'g, T> {
        self.binary(rhs, BinOp::Mul)
    }

    pub fn add_scalar(self, s: T) -> Var<'g, T> {
        self.unary(move |x| x + s, |_, _| T::one())
    }

    pub fn mul_scalar(self, s: T) -> Var<'g, T> {
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn abs(self) -> Var<'g, T> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn sqr(self) -> Var<'g, T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    /// `x^e`; callers keep `x` positive when `e < 1`.
    pub fn powf(self, e: T) -> Var<'g, T> {
        self.unary(move |x| x.powf(e), move |x, _| e * x.powf(e - T::one()))
    }

    pub fn relu(self) -> Var<'g, T> {
        self.unary(
            |x| x.max(T::zero()),
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn leaky_relu(self, slope: T) -> Var<'g, T> {
        self.unary(
            move |x| if x > T::zero() { x } else { x * slope },
            move |x, _| if x > T::zero() { T::one() } else { slope },
        )
    }

    pub fn sigmoid(self) -> Var<'g, T> {
        self.unary(
            |x| T::one() / (T::one() + (-x).exp()),
            |_, y| y * (T::one() - y),
        )
    }

    pub fn tanh(self) -> Var<'g, T> {
        self.unary(|x| x.tanh(), |_, y| T::one() - y * y)
    }

    /// GELU, tanh approximation.
    pub fn gelu(self) -> Var<'g, T> {
        let c = T::of((2.0 / std::f64::consts::PI).sqrt());
        let a = T::of(0.044715);
        let half = T::of(0.5);
        let three = T::of(3.0);
        self.unary(
            move |x| half * x * (T::one() + (c * (x + a * x * x * x)).tanh()),
            move |x, _| {
                let u = c * (x + a * x * x * x);
                let t = u.tanh();
                let du = c * (T::one() + three * a * x * x);
                half * (T::one() + t) + half * x * (T::one() - t * t) * du
            },
        )
    }

    /// Hard clamp; gradient passes only strictly inside `[lo, hi]`.
    pub fn clamp(self, lo: T, hi: T) -> Var<'g, T> {
        self.unary(
            move |x| x.max(lo).min(hi),
            move |x, _| {
                if x >= lo && x <= hi {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// Identity on `[lo, hi]`, slope `leak` outside. Keeps gradients alive at saturation.
    pub fn leaky_clamp(self, lo: T, hi: T, leak: T) -> Var<'g, T> {
        self.unary(
            move |x| {
                let c = x.max(lo).min(hi);
                c + leak * (x - c)
            },
            move |x, _| {
                if x >= lo && x <= hi {
                    T::one()
                } else {
                    leak
                }
            },
        )
    }

    pub fn sum(self) -> Var<'g, T> {
        let x = self.value();
        let total: T = x.data().iter().copied().sum();
        let xid = self.id;
        let shape = x.shape().to_vec();
        self.graph.push(
            Tensor::scalar(total),
            &[self],
            Box::new(move |g, grads| {
                let gv = g.item();
                for v in grads.slot(xid, &shape) {
                    *v += gv;
                }
            }),
        )
    }

    pub fn mean(self) -> Var<'g, T> {
        let n = T::of(self.value().numel() as f64);
        self.sum().mul_scalar(T::one() / n)
    }
}

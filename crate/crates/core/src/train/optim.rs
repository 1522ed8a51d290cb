//! Adam, cosine learning-rate decay and global-norm gradient clipping.
use retinev_autograd::{ParamStore, Tensor};

/// Cosine decay from `max` at step 0 to `min` at step `total`.
pub fn cosine_lr(step: u64, total: u64, max: f64, min: f64) -> f64 {
    if total == 0 {
        return max;
    }
    let p = step.min(total) as f64 / total as f64;
    min + (max - min) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos())
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Option<Tensor<f32>>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g.sum_sq()).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = (max_norm / norm) as f32;
        for g in grads.iter_mut().flatten() {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
    norm
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// Adam with bias correction. Moments are kept per parameter in store order.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let zeros: Vec<Vec<f32>> = params.iter().map(|(_, _, t)| vec![0.0; t.numel()]).collect();
        Self {
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update; `lrs[i]` is the learning rate of parameter `i`. Parameters without a gradient
    /// keep their value and moments.
    pub fn update(&mut self, params: &mut ParamStore<f32>, grads: &[Option<Tensor<f32>>], lrs: &[f64]) {
        self.step += 1;
        let bc1 = 1.0 - BETA1.powi(self.step as i32);
        let bc2 = 1.0 - BETA2.powi(self.step as i32);
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let Some(g) = &grads[i] else { continue };
            let p = params.get_mut(id);
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let step = lrs[i] / bc1;
            for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gv = gv as f64;
                let mn = BETA1 * *mv as f64 + (1.0 - BETA1) * gv;
                let vn = BETA2 * *vv as f64 + (1.0 - BETA2) * gv * gv;
                *mv = mn as f32;
                *vv = vn as f32;
                *pv = (*pv as f64 - step * mn / ((vn / bc2).sqrt() + EPS)) as f32;
            }
        }
    }
}

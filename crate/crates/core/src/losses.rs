//! Training objective: reconstruction, invariant reflectance and perceptual terms.
//!
//! All terms use mean reduction so magnitudes do not depend on resolution.
use retinev_autograd::{Float, ParamStore, Scope, Var};
use serde::{Deserialize, Serialize};

use crate::nn::{Builder, Conv, Init};
use crate::rng::{self, Domain};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub recon: f64,
    pub reflectance: f64,
    pub perceptual: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            recon: 1.0,
            reflectance: 0.5,
            perceptual: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("loss.recon", self.recon),
            ("loss.reflectance", self.reflectance),
            ("loss.perceptual", self.perceptual),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(field, "weight must be finite and non-negative"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub recon: f64,
    pub reflectance: f64,
    pub perceptual: f64,
    pub total: f64,
}

/// Weighted sum of the three parts.
pub fn total_loss(recon: f64, reflectance: f64, perceptual: f64, w: &LossWeights) -> LossReport {
    LossReport {
        recon,
        reflectance,
        perceptual,
        total: w.recon * recon + w.reflectance * reflectance + w.perceptual * perceptual,
    }
}

/// `mean|Î·R̂_low − S_n| + mean|Î·R_n − S_n|`, the same `Î` in both terms.
pub fn recon_loss<'g, T: Float>(
    illum: Var<'g, T>,
    r_hat_low: Var<'g, T>,
    r_normal: Var<'g, T>,
    s_normal: Var<'g, T>,
) -> Var<'g, T> {
    let a = illum.mul(r_hat_low).sub(s_normal).abs().mean();
    let b = illum.mul(r_normal).sub(s_normal).abs().mean();
    a.add(b)
}

/// `mean|R_low − R_n| + mean|R̂_low − R_n|`.
pub fn reflectance_loss<'g, T: Float>(r_low: Var<'g, T>, r_hat_low: Var<'g, T>, r_normal: Var<'g, T>) -> Var<'g, T> {
    r_low
        .sub(r_normal)
        .abs()
        .mean()
        .add(r_hat_low.sub(r_normal).abs().mean())
}

/// Default seed of the perceptual feature extractor.
pub const DEFAULT_EXTRACTOR_SEED: u64 = 0x5eed_f00d;

/// Fixed, randomly initialized three-stage convolutional pyramid (3 → 8 → 16 → 32 channels).
/// Its weights never enter an optimizer.
#[derive(Clone, Debug)]
pub struct Extractor<T: Float = f32> {
    stages: [Conv; 3],
    params: ParamStore<T>,
    seed: u64,
}

impl<T: Float> Extractor<T> {
    pub fn new(seed: u64) -> Self {
        let mut store = ParamStore::<f64>::new();
        let mut rng = rng::stream(seed, Domain::Extractor, 0);
        let mut b = Builder::new(&mut store, &mut rng);
        let stages = [
            b.conv("stage0", 8, 3, 3, true, Init::He),
            b.conv("stage1", 16, 8, 3, true, Init::He),
            b.conv("stage2", 32, 16, 3, true, Init::He),
        ];
        Self {
            stages,
            params: store.cast(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    /// Feature maps of each stage. Pooling is skipped once a side becomes odd.
    pub fn features<'g>(&self, s: &Scope<'g, '_, T>, x: Var<'g, T>) -> Vec<Var<'g, T>> {
        let mut out = Vec::with_capacity(3);
        let mut h = x;
        for (i, conv) in self.stages.iter().enumerate() {
            if i > 0 {
                let shape = h.shape();
                if shape[2].is_multiple_of(2) && shape[3].is_multiple_of(2) {
                    h = h.avg_pool2();
                }
            }
            h = conv.apply(s, h).relu();
            out.push(h);
        }
        out
    }

    /// Sum over stages of the mean L1 feature distance.
    pub fn loss<'g>(&self, pred: Var<'g, T>, target: Var<'g, T>) -> Var<'g, T> {
        let s = Scope::frozen(pred.graph(), &self.params);
        let fp = self.features(&s, pred);
        let ft = self.features(&s, target);
        fp.into_iter()
            .zip(ft)
            .map(|(a, b)| a.sub(b).abs().mean())
            .reduce(|a, b| a.add(b))
            .expect("three stages")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use retinev_autograd::{Graph, Tensor};

    fn scalar_graph(vals: &[f64]) -> (Graph<f64>, Vec<Tensor<f64>>) {
        (Graph::new(), vals.iter().map(|&v| Tensor::from_f64(&[1, 1, 1, 1], &[v])).collect())
    }

    #[test]
    fn recon_example() {
        let (g, t) = scalar_graph(&[1.0, 0.5, 0.25, 0.5]);
        let v: Vec<_> = t.into_iter().map(|t| g.constant(t)).collect();
        assert_eq!(recon_loss(v[0], v[1], v[2], v[3]).value().item(), 0.25);
    }

    #[test]
    fn reflectance_example() {
        let (g, t) = scalar_graph(&[0.0, 1.0, 0.5]);
        let v: Vec<_> = t.into_iter().map(|t| g.constant(t)).collect();
        assert_eq!(reflectance_loss(v[0], v[1], v[2]).value().item(), 1.0);
    }

    #[test]
    fn total_example() {
        let r = total_loss(0.2, 0.4, 1.0, &LossWeights::default());
        assert!((r.total - 0.5).abs() < 1e-15);
        assert_eq!(total_loss(0.0, 0.0, 0.0, &LossWeights::default()).total, 0.0);
    }

    #[test]
    fn perceptual_zero_on_equal_inputs() {
        let e = Extractor::<f64>::new(DEFAULT_EXTRACTOR_SEED);
        let g = Graph::new();
        let x = g.constant(Tensor::from_f64(&[1, 3, 8, 8], &vec![0.3; 192]));
        assert_eq!(e.loss(x, x).value().item(), 0.0);
    }

    #[test]
    fn negative_weight_rejected() {
        let w = LossWeights {
            perceptual: -1.0,
            ..LossWeights::default()
        };
        assert!(w.validate().unwrap_err().to_string().contains("loss.perceptual"));
    }
}

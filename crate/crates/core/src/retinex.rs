//! Retinex decomposition, illumination-aided reflectance enhancement and reconstruction.
use retinev_autograd::{channel_attention_maps, Float, Graph, ParamStore, Scope, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::nn::{Builder, Conv, Init, LayerNorm, LEAKY_SLOPE};
use crate::raster::Raster;
use crate::t2i::IlluminationEstimate;
use crate::{Error, Result};

/// Three-channel reflectance with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReflectanceMap(Raster);

impl ReflectanceMap {
    pub fn new(raster: Raster) -> Result<Self> {
        if raster.channels() != 3 {
            return Err(Error::Shape(format!("reflectance must have 3 channels, got {}", raster.channels())));
        }
        Ok(Self(raster))
    }

    pub fn raster(&self) -> &Raster {
        &self.0
    }

    pub fn into_raster(self) -> Raster {
        self.0
    }
}

/// Convolutional decomposition of an image into reflectance, guided by the illumination estimate.
/// One parameter set serves both the low-light and the normal-light branch.
#[derive(Clone, Debug)]
pub struct Decom {
    layers: Vec<Conv>,
}

impl Decom {
    pub(crate) fn build(b: &mut Builder<'_>, width: usize, depth: usize) -> Self {
        assert!(depth >= 2, "decomposition needs at least two layers");
        b.scope("decom", |b| {
            let mut layers = vec![b.conv("conv0", width, 4, 3, true, Init::He)];
            for i in 1..depth - 1 {
                layers.push(b.conv(&format!("conv{i}"), width, width, 3, true, Init::He));
            }
            layers.push(b.conv(&format!("conv{}", depth - 1), 3, width, 3, true, Init::Glorot));
            Decom { layers }
        })
    }

    /// `image` is `[N, 3, H, W]`, `illum` is `[N, 1, H, W]`; output in `[0, 1]`.
    pub fn forward<'g, T: Float>(&self, s: &Scope<'g, '_, T>, image: Var<'g, T>, illum: Var<'g, T>) -> Var<'g, T> {
        let mut x = Var::concat_channels(&[image, illum]);
        let (last, hidden) = self.layers.split_last().expect("non-empty");
        for l in hidden {
            x = l.apply(s, x).leaky_relu(T::of(LEAKY_SLOPE));
        }
        last.apply(s, x).sigmoid()
    }
}

/// Where keys and values of the attention come from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Queries from reflectance features, keys and values from illumination features.
    #[default]
    CrossAttention,
    /// Ablation: self-attention over reflectance features only; illumination is not consulted.
    None,
}

#[derive(Clone, Debug)]
pub struct IreBlock {
    norm_r: LayerNorm,
    norm_i: Option<LayerNorm>,
    q: Conv,
    k: Conv,
    v: Conv,
    proj: Conv,
    norm_ffn: LayerNorm,
    ffn_in: Conv,
    ffn_out: Conv,
    hidden: usize,
}

impl IreBlock {
    fn build(b: &mut Builder<'_>, c: usize, expansion: usize, fusion: Fusion) -> Self {
        let hidden = c * expansion;
        IreBlock {
            norm_r: b.layer_norm("norm_r", c),
            norm_i: (fusion == Fusion::CrossAttention).then(|| b.layer_norm("norm_i", c)),
            q: b.conv("q", c, c, 1, false, Init::Glorot),
            k: b.conv("k", c, c, 1, false, Init::Glorot),
            v: b.conv("v", c, c, 1, false, Init::Glorot),
            proj: b.conv("proj", c, c, 1, true, Init::Glorot),
            norm_ffn: b.layer_norm("norm_ffn", c),
            ffn_in: b.conv("ffn_in", 2 * hidden, c, 1, true, Init::Glorot),
            ffn_out: b.conv("ffn_out", c, hidden, 1, true, Init::Glorot),
            hidden,
        }
    }

    fn qkv<'g, T: Float>(
        &self,
        s: &Scope<'g, '_, T>,
        r_feat: Var<'g, T>,
        i_feat: Option<Var<'g, T>>,
    ) -> (Var<'g, T>, Var<'g, T>, Var<'g, T>) {
        let r = self.norm_r.apply(s, r_feat);
        let src = match (&self.norm_i, i_feat) {
            (Some(n), Some(i)) => n.apply(s, i),
            _ => r,
        };
        (self.q.apply(s, r), self.k.apply(s, src), self.v.apply(s, src))
    }

    /// Attention step: `r_feat + proj(V · softmax(Qᵀ K / √d_k))`, channel-transposed.
    pub fn attention<'g, T: Float>(
        &self,
        s: &Scope<'g, '_, T>,
        r_feat: Var<'g, T>,
        i_feat: Option<Var<'g, T>>,
        heads: usize,
    ) -> Var<'g, T> {
        let (q, k, v) = self.qkv(s, r_feat, i_feat);
        r_feat.add(self.proj.apply(s, q.channel_attention(k, v, heads)))
    }

    /// Gated feed-forward step with residual.
    pub fn feed_forward<'g, T: Float>(&self, s: &Scope<'g, '_, T>, x: Var<'g, T>) -> Var<'g, T> {
        let h = self.ffn_in.apply(s, self.norm_ffn.apply(s, x));
        let gate = h.narrow_channels(0, self.hidden).gelu();
        let val = h.narrow_channels(self.hidden, self.hidden);
        x.add(self.ffn_out.apply(s, gate.mul(val)))
    }
}

/// How the enhanced reflectance is kept inside `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClampMode {
    /// Hard clamp, used at inference.
    Hard,
    /// Slope 0.01 outside the range so gradients survive during training.
    Leaky,
}

pub(crate) const LEAKY_CLAMP: f64 = 0.01;

/// Illumination-aided reflectance enhancement, residual on the decomposed reflectance.
#[derive(Clone, Debug)]
pub struct Ire {
    embed_r: Conv,
    embed_i: Option<Conv>,
    blocks: Vec<IreBlock>,
    head: Conv,
    pub heads: usize,
    pub fusion: Fusion,
}

impl Ire {
    pub(crate) fn build(
        b: &mut Builder<'_>,
        width: usize,
        blocks: usize,
        heads: usize,
        expansion: usize,
        fusion: Fusion,
    ) -> Self {
        b.scope("ire", |b| Ire {
            embed_r: b.conv("embed_r", width, 3, 3, true, Init::He),
            embed_i: (fusion == Fusion::CrossAttention).then(|| b.conv("embed_i", width, 1, 3, true, Init::He)),
            blocks: (0..blocks)
                .map(|i| b.scope(&format!("block{i}"), |b| IreBlock::build(b, width, expansion, fusion)))
                .collect(),
            head: b.conv("head", 3, width, 3, true, Init::Zero),
            heads,
            fusion,
        })
    }

    pub fn blocks(&self) -> &[IreBlock] {
        &self.blocks
    }

    pub fn forward<'g, T: Float>(
        &self,
        s: &Scope<'g, '_, T>,
        r_low: Var<'g, T>,
        illum: Var<'g, T>,
        clamp: ClampMode,
    ) -> Var<'g, T> {
        let i_feat = self.embed_i.as_ref().map(|e| e.apply(s, illum));
        let mut x = self.embed_r.apply(s, r_low);
        for blk in &self.blocks {
            x = blk.attention(s, x, i_feat, self.heads);
            x = blk.feed_forward(s, x);
        }
        let y = r_low.add(self.head.apply(s, x));
        match clamp {
            ClampMode::Hard => y.clamp(T::zero(), T::one()),
            ClampMode::Leaky => y.leaky_clamp(T::zero(), T::one(), T::of(LEAKY_CLAMP)),
        }
    }

    /// Runs attention block `index` on raw feature tensors; also returns the attention matrices.
    pub fn block_attention<T: Float>(
        &self,
        params: &ParamStore<T>,
        index: usize,
        r_feat: &Tensor<T>,
        i_feat: &Tensor<T>,
    ) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let blk = self
            .blocks
            .get(index)
            .ok_or_else(|| Error::Invalid(format!("no attention block {index}")))?;
        if r_feat.shape() != i_feat.shape() {
            return Err(Error::Shape(format!(
                "feature shapes {:?} and {:?} differ",
                r_feat.shape(),
                i_feat.shape()
            )));
        }
        let c = r_feat.shape().get(1).copied().unwrap_or(0);
        if c % self.heads != 0 {
            return Err(Error::Shape(format!("{c} channels not divisible by {} heads", self.heads)));
        }
        let g = Graph::new();
        let s = Scope::frozen(&g, params);
        let r = g.constant(r_feat.clone());
        let i = (self.fusion == Fusion::CrossAttention).then(|| g.constant(i_feat.clone()));
        let (q, k, _) = blk.qkv(&s, r, i);
        let maps = channel_attention_maps(&q.value(), &k.value(), self.heads);
        let out = blk.attention(&s, r, i, self.heads).value();
        Ok(((*out).clone(), maps))
    }
}

/// `Ŝ = Î ⊙ R̂`, with `Î` broadcast over the color channels.
pub fn reconstruct(illum: &IlluminationEstimate, refl: &ReflectanceMap) -> Result<Raster> {
    let (i, r) = (illum.raster(), refl.raster());
    if i.width() != r.width() || i.height() != r.height() {
        return Err(Error::Shape(format!(
            "illumination {}×{} vs reflectance {}×{}",
            i.width(),
            i.height(),
            r.width(),
            r.height()
        )));
    }
    let data = r
        .data()
        .chunks(3)
        .zip(i.data())
        .flat_map(|(px, &l)| px.iter().map(move |&v| l * v))
        .collect();
    Raster::new(r.width(), r.height(), 3, data)
}

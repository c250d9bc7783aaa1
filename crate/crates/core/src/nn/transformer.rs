use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{
    join, relu, relu_backward, AttentionCache, AttentionMask, Dropout, DropoutCache, LayerNorm,
    LayerNormCache, Linear, LinearCache, Module, MultiHeadAttention, NnRng, ParamsMut, ParamsRef,
    Scalar,
};
use crate::{Error, Result};

/// Shape of one Transformer stack (encoder or decoder).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_model: usize,
    pub ff_dim: usize,
    pub dropout: f64,
}

impl Default for TransformerConfig {
    fn default() -> Self {
        Self { n_heads: 4, n_layers: 4, d_model: 512, ff_dim: 2048, dropout: 0.3 }
    }
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_heads == 0 || !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} must be divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.n_layers == 0 || self.ff_dim == 0 {
            return Err(Error::Config("n_layers and ff_dim must be positive".into()));
        }
        Ok(())
    }
}

type Ddc<F> = DropoutCache<F, ndarray::Ix2>;

/// Position-wise `Linear -> ReLU -> Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward<F: Scalar> {
    pub up: Linear<F>,
    pub down: Linear<F>,
}

#[derive(Debug, Clone)]
pub struct FeedForwardCache<F> {
    up: LinearCache<F>,
    pre: Array2<F>,
    down: LinearCache<F>,
}

impl<F: Scalar> FeedForward<F> {
    pub fn new(d_model: usize, ff_dim: usize, rng: &mut NnRng) -> Self {
        Self { up: Linear::new(d_model, ff_dim, rng), down: Linear::new(ff_dim, d_model, rng) }
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<(Array2<F>, FeedForwardCache<F>)> {
        let (pre, up) = self.up.forward(x)?;
        let (y, down) = self.down.forward(pre.mapv(relu).view())?;
        Ok((y, FeedForwardCache { up, pre, down }))
    }

    pub fn backward(&mut self, cache: &FeedForwardCache<F>, dy: ArrayView2<F>) -> Array2<F> {
        let dact = self.down.backward(&cache.down, dy);
        let dpre = relu_backward(cache.pre.view(), dact.view());
        self.up.backward(&cache.up, dpre.view())
    }
}

impl<F: Scalar> Module<F> for FeedForward<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.up.collect_params_mut(&join(prefix, "up"), out);
        self.down.collect_params_mut(&join(prefix, "down"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.up.collect_params(&join(prefix, "up"), out);
        self.down.collect_params(&join(prefix, "down"), out);
    }
}

/// Post-norm encoder layer: `x = LN(x + drop(SA(x)))`, `x = LN(x + drop(FF(x)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<F: Scalar> {
    pub self_attn: MultiHeadAttention<F>,
    pub norm1: LayerNorm<F>,
    pub ff: FeedForward<F>,
    pub norm2: LayerNorm<F>,
    pub dropout: Dropout,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerCache<F> {
    attn: AttentionCache<F>,
    drop1: Ddc<F>,
    norm1: LayerNormCache<F>,
    ff: FeedForwardCache<F>,
    drop2: Ddc<F>,
    norm2: LayerNormCache<F>,
}

impl<F: Scalar> EncoderLayer<F> {
    pub fn new(cfg: &TransformerConfig, rng: &mut NnRng) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(cfg.d_model, cfg.n_heads, rng)?,
            norm1: LayerNorm::new(cfg.d_model),
            ff: FeedForward::new(cfg.d_model, cfg.ff_dim, rng),
            norm2: LayerNorm::new(cfg.d_model),
            dropout: Dropout::new(cfg.dropout),
        })
    }

    pub fn forward(
        &self,
        x: ArrayView2<F>,
        mask: &AttentionMask,
        mut rng: Option<&mut NnRng>,
    ) -> Result<(Array2<F>, EncoderLayerCache<F>)> {
        let (a, attn) = self.self_attn.forward(x, x, mask)?;
        let (a, drop1) = self.dropout.forward(a.view(), rng.as_deref_mut());
        let (n1, norm1) = self.norm1.forward((&x + &a).view());
        let (f, ff) = self.ff.forward(n1.view())?;
        let (f, drop2) = self.dropout.forward(f.view(), rng);
        let (y, norm2) = self.norm2.forward((&n1 + &f).view());
        Ok((y, EncoderLayerCache { attn, drop1, norm1, ff, drop2, norm2 }))
    }

    pub fn backward(&mut self, cache: &EncoderLayerCache<F>, dy: ArrayView2<F>) -> Array2<F> {
        let dr2 = self.norm2.backward(&cache.norm2, dy);
        let df = self.dropout.backward(&cache.drop2, dr2.view());
        let dn1 = &dr2 + &self.ff.backward(&cache.ff, df.view());
        let dr1 = self.norm1.backward(&cache.norm1, dn1.view());
        let da = self.dropout.backward(&cache.drop1, dr1.view());
        let (dq, dk) = self.self_attn.backward(&cache.attn, da.view());
        dr1 + dq + dk
    }
}

impl<F: Scalar> Module<F> for EncoderLayer<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.self_attn.collect_params_mut(&join(prefix, "self_attn"), out);
        self.norm1.collect_params_mut(&join(prefix, "norm1"), out);
        self.ff.collect_params_mut(&join(prefix, "ff"), out);
        self.norm2.collect_params_mut(&join(prefix, "norm2"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.self_attn.collect_params(&join(prefix, "self_attn"), out);
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.ff.collect_params(&join(prefix, "ff"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
    }
}

/// Post-norm decoder layer: masked self-attention, cross-attention over
/// the encoder memory, then the feed-forward block.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLayer<F: Scalar> {
    pub self_attn: MultiHeadAttention<F>,
    pub norm1: LayerNorm<F>,
    pub cross_attn: MultiHeadAttention<F>,
    pub norm2: LayerNorm<F>,
    pub ff: FeedForward<F>,
    pub norm3: LayerNorm<F>,
    pub dropout: Dropout,
}

#[derive(Debug, Clone)]
pub struct DecoderLayerCache<F> {
    self_attn: AttentionCache<F>,
    drop1: Ddc<F>,
    norm1: LayerNormCache<F>,
    cross_attn: AttentionCache<F>,
    drop2: Ddc<F>,
    norm2: LayerNormCache<F>,
    ff: FeedForwardCache<F>,
    drop3: Ddc<F>,
    norm3: LayerNormCache<F>,
}

impl<F: Scalar> DecoderLayer<F> {
    pub fn new(cfg: &TransformerConfig, rng: &mut NnRng) -> Result<Self> {
        Ok(Self {
            self_attn: MultiHeadAttention::new(cfg.d_model, cfg.n_heads, rng)?,
            norm1: LayerNorm::new(cfg.d_model),
            cross_attn: MultiHeadAttention::new(cfg.d_model, cfg.n_heads, rng)?,
            norm2: LayerNorm::new(cfg.d_model),
            ff: FeedForward::new(cfg.d_model, cfg.ff_dim, rng),
            norm3: LayerNorm::new(cfg.d_model),
            dropout: Dropout::new(cfg.dropout),
        })
    }

    pub fn forward(
        &self,
        x: ArrayView2<F>,
        self_mask: &AttentionMask,
        memory: ArrayView2<F>,
        memory_mask: &AttentionMask,
        mut rng: Option<&mut NnRng>,
    ) -> Result<(Array2<F>, DecoderLayerCache<F>)> {
        let (a, self_attn) = self.self_attn.forward(x, x, self_mask)?;
        let (a, drop1) = self.dropout.forward(a.view(), rng.as_deref_mut());
        let (n1, norm1) = self.norm1.forward((&x + &a).view());
        let (c, cross_attn) = self.cross_attn.forward(n1.view(), memory, memory_mask)?;
        let (c, drop2) = self.dropout.forward(c.view(), rng.as_deref_mut());
        let (n2, norm2) = self.norm2.forward((&n1 + &c).view());
        let (f, ff) = self.ff.forward(n2.view())?;
        let (f, drop3) = self.dropout.forward(f.view(), rng);
        let (y, norm3) = self.norm3.forward((&n2 + &f).view());
        Ok((y, DecoderLayerCache { self_attn, drop1, norm1, cross_attn, drop2, norm2, ff, drop3, norm3 }))
    }

    /// Returns `(dL/dx, dL/dmemory)`.
    pub fn backward(&mut self, cache: &DecoderLayerCache<F>, dy: ArrayView2<F>) -> (Array2<F>, Array2<F>) {
        let dr3 = self.norm3.backward(&cache.norm3, dy);
        let df = self.dropout.backward(&cache.drop3, dr3.view());
        let dn2 = &dr3 + &self.ff.backward(&cache.ff, df.view());
        let dr2 = self.norm2.backward(&cache.norm2, dn2.view());
        let dc = self.dropout.backward(&cache.drop2, dr2.view());
        let (dq, dmem) = self.cross_attn.backward(&cache.cross_attn, dc.view());
        let dn1 = dr2 + dq;
        let dr1 = self.norm1.backward(&cache.norm1, dn1.view());
        let da = self.dropout.backward(&cache.drop1, dr1.view());
        let (dq, dk) = self.self_attn.backward(&cache.self_attn, da.view());
        (dr1 + dq + dk, dmem)
    }
}

impl<F: Scalar> Module<F> for DecoderLayer<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.self_attn.collect_params_mut(&join(prefix, "self_attn"), out);
        self.norm1.collect_params_mut(&join(prefix, "norm1"), out);
        self.cross_attn.collect_params_mut(&join(prefix, "cross_attn"), out);
        self.norm2.collect_params_mut(&join(prefix, "norm2"), out);
        self.ff.collect_params_mut(&join(prefix, "ff"), out);
        self.norm3.collect_params_mut(&join(prefix, "norm3"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.self_attn.collect_params(&join(prefix, "self_attn"), out);
        self.norm1.collect_params(&join(prefix, "norm1"), out);
        self.cross_attn.collect_params(&join(prefix, "cross_attn"), out);
        self.norm2.collect_params(&join(prefix, "norm2"), out);
        self.ff.collect_params(&join(prefix, "ff"), out);
        self.norm3.collect_params(&join(prefix, "norm3"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<F: Scalar> {
    pub layers: Vec<EncoderLayer<F>>,
}

pub struct EncoderCache<F> {
    layers: Vec<EncoderLayerCache<F>>,
}

impl<F: Scalar> Encoder<F> {
    pub fn new(cfg: &TransformerConfig, rng: &mut NnRng) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.n_layers).map(|_| EncoderLayer::new(cfg, rng)).collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(
        &self,
        x: ArrayView2<F>,
        mask: &AttentionMask,
        mut rng: Option<&mut NnRng>,
    ) -> Result<(Array2<F>, EncoderCache<F>)> {
        let mut h = x.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(h.view(), mask, rng.as_deref_mut())?;
            h = next;
            caches.push(cache);
        }
        Ok((h, EncoderCache { layers: caches }))
    }

    pub fn backward(&mut self, cache: &EncoderCache<F>, dy: ArrayView2<F>) -> Array2<F> {
        let mut d = dy.to_owned();
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            d = layer.backward(c, d.view());
        }
        d
    }
}

impl<F: Scalar> Module<F> for Encoder<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_params_mut(&join(prefix, &format!("layers.{i}")), out);
        }
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_params(&join(prefix, &format!("layers.{i}")), out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoder<F: Scalar> {
    pub layers: Vec<DecoderLayer<F>>,
}

pub struct DecoderCache<F> {
    layers: Vec<DecoderLayerCache<F>>,
    memory_shape: (usize, usize),
}

impl<F: Scalar> Decoder<F> {
    pub fn new(cfg: &TransformerConfig, rng: &mut NnRng) -> Result<Self> {
        cfg.validate()?;
        let layers = (0..cfg.n_layers).map(|_| DecoderLayer::new(cfg, rng)).collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    /// Self-attention is always causal; `self_valid` additionally hides
    /// padded target positions.
    pub fn forward(
        &self,
        x: ArrayView2<F>,
        self_valid: Option<Vec<bool>>,
        memory: ArrayView2<F>,
        memory_mask: &AttentionMask,
        mut rng: Option<&mut NnRng>,
    ) -> Result<(Array2<F>, DecoderCache<F>)> {
        let self_mask = AttentionMask::causal(self_valid);
        let mut h = x.to_owned();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (next, cache) = layer.forward(h.view(), &self_mask, memory, memory_mask, rng.as_deref_mut())?;
            h = next;
            caches.push(cache);
        }
        Ok((h, DecoderCache { layers: caches, memory_shape: memory.dim() }))
    }

    /// Returns `(dL/dx, dL/dmemory)`.
    pub fn backward(&mut self, cache: &DecoderCache<F>, dy: ArrayView2<F>) -> (Array2<F>, Array2<F>) {
        let mut d = dy.to_owned();
        let mut dmem = Array2::zeros(cache.memory_shape);
        for (layer, c) in self.layers.iter_mut().zip(&cache.layers).rev() {
            let (dx, dm) = layer.backward(c, d.view());
            d = dx;
            dmem += &dm;
        }
        (d, dmem)
    }
}

impl<F: Scalar> Module<F> for Decoder<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect_params_mut(&join(prefix, &format!("layers.{i}")), out);
        }
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_params(&join(prefix, &format!("layers.{i}")), out);
        }
    }
}

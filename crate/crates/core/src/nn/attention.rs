use ndarray::{s, Array2, ArrayView2, Axis};

use super::{cast, join, Linear, LinearCache, Module, NnRng, ParamsMut, ParamsRef, Scalar};
use crate::{Error, Result};

/// Which query/key pairs may interact. Masked pairs get exactly zero weight.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionMask {
    /// `false` marks padding keys. `None` means every key is valid.
    pub key_valid: Option<Vec<bool>>,
    /// Query `i` may only see keys `j <= i`.
    pub causal: bool,
}

impl AttentionMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn padding(key_valid: Vec<bool>) -> Self {
        Self { key_valid: Some(key_valid), causal: false }
    }

    pub fn causal(key_valid: Option<Vec<bool>>) -> Self {
        Self { key_valid, causal: true }
    }

    fn allows(&self, q: usize, k: usize) -> bool {
        (!self.causal || k <= q) && self.key_valid.as_ref().is_none_or(|v| v[k])
    }
}

/// Scaled dot-product attention over `n_heads` heads with input and output
/// projections.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention<F: Scalar> {
    pub query: Linear<F>,
    pub key: Linear<F>,
    pub value: Linear<F>,
    pub output: Linear<F>,
    pub n_heads: usize,
}

#[derive(Debug, Clone)]
pub struct AttentionCache<F> {
    q_cache: LinearCache<F>,
    k_cache: LinearCache<F>,
    v_cache: LinearCache<F>,
    o_cache: LinearCache<F>,
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// Attention weights per head, `[Tq, Tk]`.
    probs: Vec<Array2<F>>,
}

impl<F: Scalar> AttentionCache<F> {
    pub fn weights(&self) -> &[Array2<F>] {
        &self.probs
    }
}

/// Softmax over allowed entries of each row; masked entries become 0.
fn masked_softmax<F: Scalar>(scores: &mut Array2<F>, mask: &AttentionMask) {
    for (q, mut row) in scores.rows_mut().into_iter().enumerate() {
        let mut max = F::neg_infinity();
        for (k, &v) in row.iter().enumerate() {
            if mask.allows(q, k) && v > max {
                max = v;
            }
        }
        let mut sum = F::zero();
        for (k, v) in row.iter_mut().enumerate() {
            if mask.allows(q, k) {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = F::zero();
            }
        }
        if sum > F::zero() {
            row.mapv_inplace(|v| v / sum);
        }
    }
}

impl<F: Scalar> MultiHeadAttention<F> {
    pub fn new(d_model: usize, n_heads: usize, rng: &mut NnRng) -> Result<Self> {
        if n_heads == 0 || !d_model.is_multiple_of(n_heads) {
            return Err(Error::shape(format!(
                "d_model {d_model} is not divisible by {n_heads} heads"
            )));
        }
        Ok(Self {
            query: Linear::new(d_model, d_model, rng),
            key: Linear::new(d_model, d_model, rng),
            value: Linear::new(d_model, d_model, rng),
            output: Linear::new(d_model, d_model, rng),
            n_heads,
        })
    }

    pub fn d_model(&self) -> usize {
        self.query.in_dim()
    }

    fn head_dim(&self) -> usize {
        self.d_model() / self.n_heads
    }

    /// `queries` is `[Tq, d]`, `keys` is `[Tk, d]` (keys and values share
    /// the same source).
    pub fn forward(
        &self,
        queries: ArrayView2<F>,
        keys: ArrayView2<F>,
        mask: &AttentionMask,
    ) -> Result<(Array2<F>, AttentionCache<F>)> {
        if let Some(valid) = &mask.key_valid {
            if valid.len() != keys.nrows() {
                return Err(Error::shape(format!(
                    "key mask has {} entries for {} keys",
                    valid.len(),
                    keys.nrows()
                )));
            }
        }
        if mask.causal && queries.nrows() > keys.nrows() {
            return Err(Error::shape("causal attention needs at least as many keys as queries"));
        }
        let (q, q_cache) = self.query.forward(queries)?;
        let (k, k_cache) = self.key.forward(keys)?;
        let (v, v_cache) = self.value.forward(keys)?;
        let dh = self.head_dim();
        let scale: F = cast(1.0 / (dh as f64).sqrt());
        let mut concat = Array2::zeros((queries.nrows(), self.d_model()));
        let mut probs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * scale;
            masked_softmax(&mut scores, mask);
            concat.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        let (out, o_cache) = self.output.forward(concat.view())?;
        Ok((out, AttentionCache { q_cache, k_cache, v_cache, o_cache, q, k, v, probs }))
    }

    /// Returns `(dL/dqueries, dL/dkeys)`.
    pub fn backward(&mut self, cache: &AttentionCache<F>, dy: ArrayView2<F>) -> (Array2<F>, Array2<F>) {
        let dconcat = self.output.backward(&cache.o_cache, dy);
        let dh = self.head_dim();
        let scale: F = cast(1.0 / (dh as f64).sqrt());
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dout = dconcat.slice(cols);
            dv.slice_mut(cols).assign(&p.t().dot(&dout));
            let dp = dout.dot(&cache.v.slice(cols).t());
            // softmax backward: p * (dp - rowsum(dp * p))
            let row_dot = (&dp * p).sum_axis(Axis(1));
            let mut ds = dp;
            for ((mut r, &rd), pr) in ds.rows_mut().into_iter().zip(row_dot.iter()).zip(p.rows()) {
                r.zip_mut_with(&pr, |d, &pv| *d = pv * (*d - rd) * scale);
            }
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        let dx_q = self.query.backward(&cache.q_cache, dq.view());
        let dx_k = self.key.backward(&cache.k_cache, dk.view()) + self.value.backward(&cache.v_cache, dv.view());
        (dx_q, dx_k)
    }
}

impl<F: Scalar> Module<F> for MultiHeadAttention<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.query.collect_params_mut(&join(prefix, "query"), out);
        self.key.collect_params_mut(&join(prefix, "key"), out);
        self.value.collect_params_mut(&join(prefix, "value"), out);
        self.output.collect_params_mut(&join(prefix, "output"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.query.collect_params(&join(prefix, "query"), out);
        self.key.collect_params(&join(prefix, "key"), out);
        self.value.collect_params(&join(prefix, "value"), out);
        self.output.collect_params(&join(prefix, "output"), out);
    }
}

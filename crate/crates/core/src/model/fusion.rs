use ndarray::{concatenate, Array1, ArrayView1, Axis};

use crate::nn::{cast, join, Linear, LinearCache, Module, NnRng, ParamsMut, ParamsRef, Scalar};
use crate::{Error, Result};

/// Attentive fusion of the two pipeline summaries.
///
/// ```text
/// L1 = Linear_1(x1)          L2 = Linear_2(x2)
/// w  = exp(tanh(L1 * L2))    (elementwise)
/// w' = w / (sum(w) + eps) * w
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct AttentiveFusion<F: Scalar> {
    pub left: Linear<F>,
    pub right: Linear<F>,
    pub eps: f64,
}

/// Every intermediate of one fusion pass.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights<F> {
    pub l1: Array1<F>,
    pub l2: Array1<F>,
    pub w: Array1<F>,
    pub w_norm: Array1<F>,
    pub eps: f64,
}

pub struct FusionCache<F> {
    left: LinearCache<F>,
    right: LinearCache<F>,
    weights: FusionWeights<F>,
}

impl<F> FusionCache<F> {
    pub fn weights(&self) -> &FusionWeights<F> {
        &self.weights
    }
}

pub const DEFAULT_FUSION_EPS: f64 = 1e-7;

impl<F: Scalar> AttentiveFusion<F> {
    pub fn new(in_dim: usize, fusion_dim: usize, eps: f64, rng: &mut NnRng) -> Self {
        Self {
            left: Linear::new(in_dim, fusion_dim, rng),
            right: Linear::new(in_dim, fusion_dim, rng),
            eps,
        }
    }

    pub fn fusion_dim(&self) -> usize {
        self.left.out_dim()
    }

    pub fn forward(
        &self,
        x1: ArrayView1<F>,
        x2: ArrayView1<F>,
    ) -> Result<(Array1<F>, FusionCache<F>)> {
        let (l1, left) = self.left.forward(x1.insert_axis(Axis(0)))?;
        let (l2, right) = self.right.forward(x2.insert_axis(Axis(0)))?;
        let l1 = l1.row(0).to_owned();
        let l2 = l2.row(0).to_owned();
        let w = (&l1 * &l2).mapv(|p| p.tanh().exp());
        let denom = w.sum() + cast::<F>(self.eps);
        let w_norm = w.mapv(|v| v / denom * v);
        let weights = FusionWeights { l1, l2, w, w_norm: w_norm.clone(), eps: self.eps };
        Ok((w_norm, FusionCache { left, right, weights }))
    }

    /// Returns `(dL/dx1, dL/dx2)`.
    pub fn backward(&mut self, cache: &FusionCache<F>, dy: ArrayView1<F>) -> (Array1<F>, Array1<F>) {
        let FusionWeights { l1, l2, w, .. } = &cache.weights;
        let two: F = cast(2.0);
        let denom = w.sum() + cast::<F>(self.eps);
        // w'_i = w_i^2 / D  with D = sum(w) + eps
        let shared = (&dy * &w.mapv(|v| v * v)).sum() / (denom * denom);
        let dw = Array1::from_shape_fn(w.len(), |i| dy[i] * two * w[i] / denom - shared);
        // w = exp(tanh(p)) => dw/dp = w * (1 - tanh(p)^2)
        let dp = Array1::from_shape_fn(w.len(), |i| {
            let t = (l1[i] * l2[i]).tanh();
            dw[i] * w[i] * (F::one() - t * t)
        });
        let dl1 = (&dp * l2).insert_axis(Axis(0));
        let dl2 = (&dp * l1).insert_axis(Axis(0));
        let dx1 = self.left.backward(&cache.left, dl1.view());
        let dx2 = self.right.backward(&cache.right, dl2.view());
        (dx1.row(0).to_owned(), dx2.row(0).to_owned())
    }
}

impl<F: Scalar> Module<F> for AttentiveFusion<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.left.collect_params_mut(&join(prefix, "left"), out);
        self.right.collect_params_mut(&join(prefix, "right"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.left.collect_params(&join(prefix, "left"), out);
        self.right.collect_params(&join(prefix, "right"), out);
    }
}

/// Concatenation ablation: `[x1; x2]`.
pub fn concat_fusion<F: Scalar>(x1: ArrayView1<F>, x2: ArrayView1<F>) -> Result<Array1<F>> {
    if x1.len() != x2.len() {
        return Err(Error::shape(format!(
            "concat fusion expects equal widths, got {} and {}",
            x1.len(),
            x2.len()
        )));
    }
    Ok(concatenate(Axis(0), &[x1, x2]).expect("1-D arrays always concatenate"))
}

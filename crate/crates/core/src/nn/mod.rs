//! Layer toolkit with explicit forward caches and hand-written backward
//! passes. Every layer is generic over [`Scalar`] so the same code runs in
//! `f32` for training and `f64` for gradient checks.
//!
//! Sequences are row-major `[time, features]`; convolutions take
//! `[channels, time]`.

mod activation;
mod attention;
mod conv;
mod dropout;
mod embedding;
pub mod gradcheck;
mod linear;
mod lstm;
mod norm;
mod positional;
mod transformer;

pub use activation::{gelu, gelu_backward, gelu_grad, relu, relu_backward, sigmoid, softmax, softmax_rows};
pub use attention::{AttentionCache, AttentionMask, MultiHeadAttention};
pub use conv::{Conv1d, Conv1dCache};
pub use dropout::{Dropout, DropoutCache};
pub use embedding::{Embedding, EmbeddingCache};
pub use linear::{Linear, LinearCache};
pub use lstm::{Lstm, LstmCache};
pub use norm::{LayerNorm, LayerNormCache};
pub use positional::positional_encoding;
pub use transformer::{
    Decoder, DecoderCache, DecoderLayer, Encoder, EncoderCache, EncoderLayer, FeedForward,
    TransformerConfig,
};

use std::fmt::Debug;

use ndarray::{Array, ArrayViewD, ArrayViewMutD, Dimension, NdFloat};
use num_traits::FromPrimitive;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::{Error, Result};

/// Floating point type the layers are generic over (`f32` or `f64`).
pub trait Scalar: NdFloat + FromPrimitive + Debug + Default {}

impl<T: NdFloat + FromPrimitive + Debug + Default> Scalar for T {}

/// Seeded generator used for initialization and dropout masks.
pub type NnRng = ChaCha8Rng;

#[inline]
pub(crate) fn cast<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("f64 is representable")
}

/// A trainable tensor, its gradient buffer, and whether weight decay applies.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<F, D: Dimension> {
    pub value: Array<F, D>,
    pub grad: Array<F, D>,
    pub decay: bool,
}

impl<F: Scalar, D: Dimension> Param<F, D> {
    pub fn new(value: Array<F, D>, decay: bool) -> Self {
        let grad = Array::zeros(value.raw_dim());
        Self { value, grad, decay }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

/// Mutable handle on one parameter as seen by optimizers and checkpoints.
pub struct ParamMut<'a, F> {
    pub value: ArrayViewMutD<'a, F>,
    pub grad: ArrayViewMutD<'a, F>,
    pub decay: bool,
}

/// Read-only handle on one parameter.
pub struct ParamRef<'a, F> {
    pub value: ArrayViewD<'a, F>,
    pub grad: ArrayViewD<'a, F>,
    pub decay: bool,
}

pub type ParamsMut<'a, F> = Vec<(String, ParamMut<'a, F>)>;
pub type ParamsRef<'a, F> = Vec<(String, ParamRef<'a, F>)>;

impl<F: Scalar, D: Dimension> Param<F, D> {
    pub fn push_mut<'a>(&'a mut self, name: String, out: &mut ParamsMut<'a, F>) {
        out.push((
            name,
            ParamMut {
                value: self.value.view_mut().into_dyn(),
                grad: self.grad.view_mut().into_dyn(),
                decay: self.decay,
            },
        ));
    }

    pub fn push_ref<'a>(&'a self, name: String, out: &mut ParamsRef<'a, F>) {
        out.push((
            name,
            ParamRef {
                value: self.value.view().into_dyn(),
                grad: self.grad.view().into_dyn(),
                decay: self.decay,
            },
        ));
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything that owns parameters. Names are dotted paths and the visiting
/// order is fixed by the implementation, so it is deterministic.
pub trait Module<F: Scalar> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>);

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>);

    fn params_mut(&mut self) -> ParamsMut<'_, F> {
        let mut out = Vec::new();
        self.collect_params_mut("", &mut out);
        out
    }

    fn params(&self) -> ParamsRef<'_, F> {
        let mut out = Vec::new();
        self.collect_params("", &mut out);
        out
    }

    fn zero_grad(&mut self) {
        for (_, p) in self.params_mut() {
            let mut g = p.grad;
            g.fill(F::zero());
        }
    }

    fn num_params(&self) -> usize {
        self.params().iter().map(|(_, p)| p.value.len()).sum()
    }
}

/// Copies every parameter value into a module of another precision with
/// the same structure.
pub fn convert_params<A: Scalar, B: Scalar>(
    from: &impl Module<A>,
    to: &mut impl Module<B>,
) -> Result<()> {
    let src = from.params();
    let mut dst = to.params_mut();
    if src.len() != dst.len() {
        return Err(Error::shape("parameter sets differ in size"));
    }
    for ((sn, sp), (dn, dp)) in src.iter().zip(dst.iter_mut()) {
        if sn != dn || sp.value.shape() != dp.value.shape() {
            return Err(Error::shape(format!("parameter {sn} does not match {dn}")));
        }
        dp.value
            .zip_mut_with(&sp.value, |d, &s| *d = B::from_f64(s.to_f64().unwrap()).unwrap());
    }
    Ok(())
}

/// Fails with `Numerical` if any value is NaN or infinite.
pub fn ensure_finite<F: Scalar, D: Dimension>(what: &str, a: &Array<F, D>) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical(format!("non-finite value in {what}")))
    }
}

pub(crate) fn xavier_uniform<F: Scalar, D: Dimension>(
    shape: D,
    fan_in: usize,
    fan_out: usize,
    rng: &mut NnRng,
) -> Array<F, D> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
    Array::from_shape_simple_fn(shape, || cast(dist.sample(rng)))
}

pub(crate) fn normal<F: Scalar, D: Dimension>(shape: D, std: f64, rng: &mut NnRng) -> Array<F, D> {
    let dist = Normal::new(0.0, std).expect("positive std");
    Array::from_shape_simple_fn(shape, || cast(dist.sample(rng)))
}

/// `rows x cols` matrix (rows <= cols) with orthonormal rows, from
/// Gram-Schmidt on a Gaussian draw.
pub(crate) fn orthogonal_rows<F: Scalar>(
    rows: usize,
    cols: usize,
    rng: &mut NnRng,
) -> ndarray::Array2<F> {
    assert!(rows <= cols, "orthogonal_rows needs rows <= cols");
    let mut m: ndarray::Array2<f64> = normal(ndarray::Ix2(rows, cols), 1.0, rng);
    for i in 0..rows {
        for j in 0..i {
            let proj = m.row(i).dot(&m.row(j));
            let rj = m.row(j).to_owned();
            m.row_mut(i).scaled_add(-proj, &rj);
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        if norm < 1e-12 {
            // Degenerate draw; replace with a fresh direction and retry once.
            let fresh: ndarray::Array1<f64> = normal(ndarray::Ix1(cols), 1.0, rng);
            m.row_mut(i).assign(&fresh);
            for j in 0..i {
                let proj = m.row(i).dot(&m.row(j));
                let rj = m.row(j).to_owned();
                m.row_mut(i).scaled_add(-proj, &rj);
            }
        }
        let norm = m.row(i).dot(&m.row(i)).sqrt();
        m.row_mut(i).mapv_inplace(|v| v / norm);
    }
    m.mapv(cast)
}

/// Random tensor helper for tests and probes.
pub fn random_array<F: Scalar, D: Dimension>(shape: D, rng: &mut impl Rng) -> Array<F, D> {
    Array::from_shape_simple_fn(shape, || cast(rng.random_range(-1.0..1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn orthogonal_rows_are_orthonormal() {
        let mut rng = NnRng::seed_from_u64(3);
        let m: ndarray::Array2<f64> = orthogonal_rows(6, 24, &mut rng);
        let gram = m.dot(&m.t());
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn ensure_finite_trips_on_nan() {
        let a = ndarray::arr1(&[1.0f32, f32::NAN]);
        assert!(matches!(ensure_finite("a", &a), Err(Error::Numerical(_))));
        assert!(ensure_finite("b", &ndarray::arr1(&[1.0f32])).is_ok());
    }
}

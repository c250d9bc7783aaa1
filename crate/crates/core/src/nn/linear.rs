use ndarray::{Array1, Array2, ArrayView2, Axis, Ix1, Ix2};

use super::{join, xavier_uniform, Module, NnRng, Param, ParamsMut, ParamsRef, Scalar};
use crate::{Error, Result};

/// Affine map `y = x W + b` applied row-wise; `W` is `[in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<F: Scalar> {
    pub weight: Param<F, Ix2>,
    pub bias: Param<F, Ix1>,
}

/// The layer input, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LinearCache<F> {
    input: Array2<F>,
}

impl<F: Scalar> Linear<F> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut NnRng) -> Self {
        Self {
            weight: Param::new(xavier_uniform(Ix2(in_dim, out_dim), in_dim, out_dim, rng), true),
            bias: Param::new(Array1::zeros(out_dim), false),
        }
    }

    pub fn from_parts(weight: Array2<F>, bias: Array1<F>) -> Result<Self> {
        if weight.ncols() != bias.len() {
            return Err(Error::shape(format!(
                "linear weight has {} outputs but bias has {}",
                weight.ncols(),
                bias.len()
            )));
        }
        Ok(Self { weight: Param::new(weight, true), bias: Param::new(bias, false) })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.value.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.value.ncols()
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<(Array2<F>, LinearCache<F>)> {
        if x.ncols() != self.in_dim() {
            return Err(Error::shape(format!(
                "linear expects trailing dim {}, got {}",
                self.in_dim(),
                x.ncols()
            )));
        }
        let y = x.dot(&self.weight.value) + &self.bias.value;
        Ok((y, LinearCache { input: x.to_owned() }))
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, cache: &LinearCache<F>, dy: ArrayView2<F>) -> Array2<F> {
        self.weight.grad += &cache.input.t().dot(&dy);
        self.bias.grad += &dy.sum_axis(Axis(0));
        dy.dot(&self.weight.value.t())
    }
}

impl<F: Scalar> Module<F> for Linear<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.weight.push_mut(join(prefix, "weight"), out);
        self.bias.push_mut(join(prefix, "bias"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.weight.push_ref(join(prefix, "weight"), out);
        self.bias.push_ref(join(prefix, "bias"), out);
    }
}

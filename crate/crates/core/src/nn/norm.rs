use ndarray::{Array1, Array2, ArrayView2, Axis, Ix1};

use super::{cast, join, Module, Param, ParamsMut, ParamsRef, Scalar};

/// Row-wise layer normalization with learned gain and shift.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<F: Scalar> {
    pub gain: Param<F, Ix1>,
    pub shift: Param<F, Ix1>,
    pub eps: f64,
}

#[derive(Debug, Clone)]
pub struct LayerNormCache<F> {
    normed: Array2<F>,
    rstd: Array1<F>,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl<F: Scalar> LayerNorm<F> {
    pub fn new(dim: usize) -> Self {
        Self {
            gain: Param::new(Array1::ones(dim), false),
            shift: Param::new(Array1::zeros(dim), false),
            eps: LAYER_NORM_EPS,
        }
    }

    pub fn forward(&self, x: ArrayView2<F>) -> (Array2<F>, LayerNormCache<F>) {
        let n: F = cast(x.ncols() as f64);
        let eps: F = cast(self.eps);
        let mean = x.sum_axis(Axis(1)) / n;
        let centered = &x - &mean.view().insert_axis(Axis(1));
        let var = centered.mapv(|v| v * v).sum_axis(Axis(1)) / n;
        let rstd = var.mapv(|v| F::one() / (v + eps).sqrt());
        let normed = centered * rstd.view().insert_axis(Axis(1));
        let y = &normed * &self.gain.value + &self.shift.value;
        (y, LayerNormCache { normed, rstd })
    }

    pub fn backward(&mut self, cache: &LayerNormCache<F>, dy: ArrayView2<F>) -> Array2<F> {
        self.gain.grad += &(&dy * &cache.normed).sum_axis(Axis(0));
        self.shift.grad += &dy.sum_axis(Axis(0));
        let n: F = cast(dy.ncols() as f64);
        let dnorm = &dy * &self.gain.value;
        let sum_d = dnorm.sum_axis(Axis(1)).insert_axis(Axis(1));
        let sum_dx = (&dnorm * &cache.normed).sum_axis(Axis(1)).insert_axis(Axis(1));
        let inner = dnorm.mapv(|v| v * n) - &sum_d - &cache.normed * &sum_dx;
        inner * &cache.rstd.mapv(|r| r / n).insert_axis(Axis(1))
    }
}

impl<F: Scalar> Module<F> for LayerNorm<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.gain.push_mut(join(prefix, "gain"), out);
        self.shift.push_mut(join(prefix, "shift"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.gain.push_ref(join(prefix, "gain"), out);
        self.shift.push_ref(join(prefix, "shift"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn rows_are_standardised() {
        let ln = LayerNorm::<f64>::new(4);
        let (y, _) = ln.forward(arr2(&[[1.0, 2.0, 3.0, 4.0], [10.0, 10.0, 10.0, 14.0]]).view());
        for row in y.rows() {
            assert!(row.sum().abs() < 1e-12);
            let var = row.mapv(|v| v * v).sum() / 4.0;
            assert!((var - 1.0).abs() < 1e-4);
        }
    }
}

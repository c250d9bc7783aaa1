use ndarray::{Array, Array2, ArrayView, ArrayView1, Dimension};

use super::{cast, Scalar};

/// Tanh-approximation GELU.
pub fn gelu<F: Scalar>(x: F) -> F {
    let c: F = cast((2.0 / std::f64::consts::PI).sqrt());
    let k: F = cast(0.044_715);
    let half: F = cast(0.5);
    half * x * (F::one() + (c * (x + k * x * x * x)).tanh())
}

/// Derivative of [`gelu`].
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let c: F = cast((2.0 / std::f64::consts::PI).sqrt());
    let k: F = cast(0.044_715);
    let half: F = cast(0.5);
    let three: F = cast(3.0);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + three * k * x * x)
}

/// Elementwise GELU over an array.
pub fn gelu_backward<F: Scalar, D: Dimension>(
    input: ArrayView<F, D>,
    dy: ArrayView<F, D>,
) -> Array<F, D> {
    let mut dx = dy.to_owned();
    dx.zip_mut_with(&input, |d, &x| *d *= gelu_grad(x));
    dx
}

pub fn relu<F: Scalar>(x: F) -> F {
    x.max(F::zero())
}

pub fn relu_backward<F: Scalar, D: Dimension>(
    input: ArrayView<F, D>,
    dy: ArrayView<F, D>,
) -> Array<F, D> {
    let mut dx = dy.to_owned();
    dx.zip_mut_with(&input, |d, &x| {
        if x <= F::zero() {
            *d = F::zero();
        }
    });
    dx
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// Numerically stable softmax of a vector.
pub fn softmax<F: Scalar>(x: ArrayView1<F>) -> ndarray::Array1<F> {
    let max = x.iter().cloned().fold(F::neg_infinity(), F::max);
    let e = x.mapv(|v| (v - max).exp());
    let s = e.sum();
    e / s
}

/// Row-wise softmax.
pub fn softmax_rows<F: Scalar>(x: &Array2<F>) -> Array2<F> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let r = softmax(row.view());
        row.assign(&r);
    }
    out
}

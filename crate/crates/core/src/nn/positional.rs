use ndarray::Array2;

use super::{cast, Scalar};

/// Sinusoidal encoding: `PE(t, 2i) = sin(t / 10000^(2i/d))`,
/// `PE(t, 2i+1) = cos(t / 10000^(2i/d))`.
pub fn positional_encoding<F: Scalar>(len: usize, d_model: usize) -> Array2<F> {
    Array2::from_shape_fn((len, d_model), |(t, j)| {
        let i2 = (j - j % 2) as f64;
        let angle = t as f64 / 10_000f64.powf(i2 / d_model as f64);
        cast(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

use ndarray::{Array, ArrayView, Dimension};
use rand::Rng;

use super::{cast, NnRng, Scalar};

/// Inverted dropout. Without a generator (inference) it is the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub struct DropoutCache<F, D: Dimension> {
    mask: Option<Array<F, D>>,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate must lie in [0, 1)");
        Self { rate }
    }

    pub fn forward<F: Scalar, D: Dimension>(
        &self,
        x: ArrayView<F, D>,
        rng: Option<&mut NnRng>,
    ) -> (Array<F, D>, DropoutCache<F, D>) {
        match rng {
            Some(rng) if self.rate > 0.0 => {
                let keep: F = cast(1.0 / (1.0 - self.rate));
                let mask = Array::from_shape_simple_fn(x.raw_dim(), || {
                    if rng.random::<f64>() < self.rate {
                        F::zero()
                    } else {
                        keep
                    }
                });
                (&x * &mask, DropoutCache { mask: Some(mask) })
            }
            _ => (x.to_owned(), DropoutCache { mask: None }),
        }
    }

    pub fn backward<F: Scalar, D: Dimension>(
        &self,
        cache: &DropoutCache<F, D>,
        dy: ArrayView<F, D>,
    ) -> Array<F, D> {
        match &cache.mask {
            Some(mask) => &dy * mask,
            None => dy.to_owned(),
        }
    }
}

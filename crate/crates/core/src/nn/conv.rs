use ndarray::{Array1, Array2, Array3, ArrayView2, Axis, Ix1, Ix3};

use super::{join, xavier_uniform, Module, NnRng, Param, ParamsMut, ParamsRef, Scalar};
use crate::{Error, Result};

/// 1-D cross-correlation over `[channels, time]` inputs with zero padding.
/// Weights are `[out, in, kernel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d<F: Scalar> {
    pub weight: Param<F, Ix3>,
    pub bias: Param<F, Ix1>,
    pub stride: usize,
    pub padding: usize,
}

#[derive(Debug, Clone)]
pub struct Conv1dCache<F> {
    /// im2col matrix `[T_out, in * kernel]`.
    cols: Array2<F>,
    in_len: usize,
}

impl<F: Scalar> Conv1d<F> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut NnRng,
    ) -> Self {
        let weight = xavier_uniform(
            Ix3(out_channels, in_channels, kernel),
            in_channels * kernel,
            out_channels * kernel,
            rng,
        );
        Self {
            weight: Param::new(weight, true),
            bias: Param::new(Array1::zeros(out_channels), false),
            stride,
            padding,
        }
    }

    pub fn from_parts(weight: Array3<F>, bias: Array1<F>, stride: usize, padding: usize) -> Result<Self> {
        if weight.dim().0 != bias.len() {
            return Err(Error::shape("conv bias length must equal output channels"));
        }
        if stride == 0 {
            return Err(Error::shape("conv stride must be positive"));
        }
        Ok(Self { weight: Param::new(weight, true), bias: Param::new(bias, false), stride, padding })
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.dim().1
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim().0
    }

    pub fn kernel(&self) -> usize {
        self.weight.value.dim().2
    }

    /// Output length for an input of `len` frames.
    pub fn output_len(&self, len: usize) -> usize {
        (len + 2 * self.padding).saturating_sub(self.kernel()) / self.stride + 1
    }

    fn weight_matrix(&self) -> ArrayView2<'_, F> {
        let (o, i, k) = self.weight.value.dim();
        self.weight
            .value
            .view()
            .into_shape_with_order((o, i * k))
            .expect("parameter arrays are contiguous")
    }

    fn im2col(&self, x: ArrayView2<F>) -> Array2<F> {
        let (c_in, len) = x.dim();
        let k = self.kernel();
        let t_out = self.output_len(len);
        let mut cols = Array2::zeros((t_out, c_in * k));
        for t in 0..t_out {
            let mut row = cols.row_mut(t);
            let row = row.as_slice_mut().expect("fresh array is contiguous");
            for j in 0..k {
                let src = (t * self.stride + j) as isize - self.padding as isize;
                if src < 0 || src as usize >= len {
                    continue;
                }
                for c in 0..c_in {
                    row[c * k + j] = x[[c, src as usize]];
                }
            }
        }
        cols
    }

    pub fn forward(&self, x: ArrayView2<F>) -> Result<(Array2<F>, Conv1dCache<F>)> {
        if x.nrows() != self.in_channels() {
            return Err(Error::shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels(),
                x.nrows()
            )));
        }
        if x.ncols() + 2 * self.padding < self.kernel() {
            return Err(Error::shape("conv input shorter than kernel"));
        }
        let cols = self.im2col(x);
        // [out, in*k] x [in*k, T_out]
        let mut y = self.weight_matrix().dot(&cols.t());
        for (mut row, &b) in y.rows_mut().into_iter().zip(self.bias.value.iter()) {
            row.mapv_inplace(|v| v + b);
        }
        Ok((y, Conv1dCache { cols, in_len: x.ncols() }))
    }

    pub fn backward(&mut self, cache: &Conv1dCache<F>, dy: ArrayView2<F>) -> Array2<F> {
        let (o, c_in, k) = self.weight.value.dim();
        let dw = dy.dot(&cache.cols);
        self.weight.grad += &dw.into_shape_with_order((o, c_in, k)).expect("contiguous");
        self.bias.grad += &dy.sum_axis(Axis(1));
        // [T_out, out] x [out, in*k]
        let dcols = dy.t().dot(&self.weight_matrix());
        let mut dx = Array2::zeros((c_in, cache.in_len));
        for (t, row) in dcols.rows().into_iter().enumerate() {
            for j in 0..k {
                let src = (t * self.stride + j) as isize - self.padding as isize;
                if src < 0 || src as usize >= cache.in_len {
                    continue;
                }
                for c in 0..c_in {
                    dx[[c, src as usize]] += row[c * k + j];
                }
            }
        }
        dx
    }
}

impl<F: Scalar> Module<F> for Conv1d<F> {
    fn collect_params_mut<'a>(&'a mut self, prefix: &str, out: &mut ParamsMut<'a, F>) {
        self.weight.push_mut(join(prefix, "weight"), out);
        self.bias.push_mut(join(prefix, "bias"), out);
    }

    fn collect_params<'a>(&'a self, prefix: &str, out: &mut ParamsRef<'a, F>) {
        self.weight.push_ref(join(prefix, "weight"), out);
        self.bias.push_ref(join(prefix, "bias"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::random_array;
    use rand::SeedableRng;

    fn naive(conv: &Conv1d<f64>, x: &Array2<f64>) -> Array2<f64> {
        let (c_out, c_in, k) = conv.weight.value.dim();
        let len = x.ncols();
        let t_out = (len + 2 * conv.padding - k) / conv.stride + 1;
        let mut y = Array2::zeros((c_out, t_out));
        for o in 0..c_out {
            for t in 0..t_out {
                let mut acc = conv.bias.value[o];
                for c in 0..c_in {
                    for j in 0..k {
                        let src = (t * conv.stride + j) as isize - conv.padding as isize;
                        if src >= 0 && (src as usize) < len {
                            acc += conv.weight.value[[o, c, j]] * x[[c, src as usize]];
                        }
                    }
                }
                y[[o, t]] = acc;
            }
        }
        y
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut w = Array3::<f64>::zeros((3, 3, 3));
        for c in 0..3 {
            w[[c, c, 1]] = 1.0;
        }
        let conv = Conv1d::from_parts(w, Array1::zeros(3), 1, 1).unwrap();
        let x = Array2::from_shape_fn((3, 7), |(c, t)| (c * 10 + t) as f64);
        let (y, _) = conv.forward(x.view()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn stride_two_halves_length() {
        let mut rng = NnRng::seed_from_u64(0);
        let conv = Conv1d::<f32>::new(2, 2, 3, 2, 1, &mut rng);
        assert_eq!(conv.output_len(3000), 1500);
        assert_eq!(conv.output_len(7), 4);
        let (y, _) = conv.forward(Array2::zeros((2, 3000)).view()).unwrap();
        assert_eq!(y.dim(), (2, 1500));
    }

    #[test]
    fn matches_loop_oracle() {
        let mut rng = NnRng::seed_from_u64(5);
        for stride in [1, 2] {
            let conv = Conv1d::<f64>::from_parts(
                random_array(Ix3(4, 3, 3), &mut rng),
                random_array(Ix1(4), &mut rng),
                stride,
                1,
            )
            .unwrap();
            let x: Array2<f64> = random_array(ndarray::Ix2(3, 9), &mut rng);
            let (y, _) = conv.forward(x.view()).unwrap();
            let want = naive(&conv, &x);
            assert_eq!(y.dim(), want.dim());
            let diff = (&y - &want).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
            assert!(diff < 1e-6, "{diff}");
        }
    }

    #[test]
    fn channel_mismatch() {
        let mut rng = NnRng::seed_from_u64(0);
        let conv = Conv1d::<f32>::new(2, 2, 3, 1, 1, &mut rng);
        assert!(matches!(conv.forward(Array2::zeros((3, 5)).view()), Err(Error::Shape(_))));
    }
}
